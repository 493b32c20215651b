mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

use common::*;
use iwseg::{load_vol, save_vol, Shape, Volume};

fn iwseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_iwseg")).args(args).output().unwrap()
}

fn json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn one_lesion_mask() -> Volume {
    let s = Shape::cube(4);
    let mut m = vec![0u8; 64];
    for x in 0..4 {
        m[s.index(0, 0, x)] = 1;
    }
    Volume::from_u8(s, m)
}

fn two_lesion_mask() -> Volume {
    let s = Shape::cube(4);
    let mut m = vec![0u8; 64];
    m[s.index(0, 0, 0)] = 1;
    m[s.index(0, 0, 1)] = 1;
    for y in 2..4 {
        for x in 1..4 {
            m[s.index(3, y, x)] = 1;
        }
    }
    Volume::from_u8(s, m)
}

fn save(dir: &Path, name: &str, v: &Volume) -> PathBuf {
    let path = dir.join(format!("{name}.volhdr"));
    save_vol(v, &path).unwrap();
    path
}

#[test]
fn weights_fixture_and_zero_mask() {
    let dir = tempfile::tempdir().unwrap();
    let mask = save(dir.path(), "m", &one_lesion_mask());
    let out_path = dir.path().join("w");
    let report = json(&iwseg(&["weights", "--mask", p(&mask), "--out", p(&out_path)]));
    let cw = &report["component_weights"];
    assert!((cw["0"].as_f64().unwrap() - 8.0 / 15.0).abs() < 1e-12);
    assert_eq!(cw["1"].as_f64(), Some(8.0));
    let stored = load_vol(&out_path).unwrap();
    assert_eq!(stored.dtype(), iwseg::DType::F32);
    assert_eq!(stored.data().get_f64(0), 8.0);

    let zero = save(dir.path(), "z", &Volume::from_u8(Shape::cube(4), vec![0; 64]));
    json(&iwseg(&["weights", "--mask", p(&zero), "--out", p(&out_path)]));
    assert!(load_vol(&out_path).unwrap().to_f64_vec().iter().all(|&w| w == 1.0));
}

#[test]
fn weights_patch_modes() {
    let dir = tempfile::tempdir().unwrap();
    let mask = save(dir.path(), "m", &one_lesion_mask());
    let out = dir.path().join("w");
    let patch = ["--patch-origin", "0", "0", "0", "--patch-size", "2", "2", "2"];
    let mut args = vec!["weights", "--mask", p(&mask), "--out", p(&out)];
    args.extend(patch);
    let local = json(&iwseg(&args));
    assert_eq!(local["n_voxels"], 8);
    assert_eq!(load_vol(&out).unwrap().shape(), Shape::cube(2));

    args.push("--whole-image");
    let whole = json(&iwseg(&args));
    assert_eq!(whole["n_voxels"], 64);
    assert_eq!(load_vol(&out).unwrap().data().get_f64(0), 8.0);
}

#[test]
fn missing_file_names_path() {
    let out = iwseg(&["weights", "--mask", "/nonexistent/mask.volhdr", "--out", "/tmp/x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("/nonexistent/mask.volhdr"));
    assert_eq!(stderr(&out).trim().lines().count(), 1);
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(iwseg(&["weights"]).status.code(), Some(2));
    assert_eq!(iwseg(&["bogus"]).status.code(), Some(2));
    assert_eq!(iwseg(&["--help"]).status.code(), Some(0));
}

#[test]
fn loss_command() {
    let dir = tempfile::tempdir().unwrap();
    let y = two_lesion_mask();
    let target = save(dir.path(), "y", &y);
    let same = save(dir.path(), "same", &y.to_f32());
    let half = save(dir.path(), "half", &Volume::from_f64(y.shape(), vec![0.5; 64]));

    let dice = json(&iwseg(&["loss", "--pred", p(&same), "--target", p(&target), "--loss", "dice"]));
    assert_eq!(dice["value"].as_f64(), Some(0.0));
    assert_eq!(dice["kind"], "dice");

    let grad = dir.path().join("g");
    let iw = json(&iwseg(&[
        "loss", "--pred", p(&half), "--target", p(&target), "--loss", "iw_bce", "--grad-out", p(&grad),
    ]));
    let contributions: Vec<f64> = iw["components"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["contribution"].as_f64().unwrap())
        .collect();
    assert_eq!(contributions.len(), 3);
    for c in &contributions {
        assert!(rel_close(*c, contributions[0], 1e-12), "{contributions:?}");
    }
    assert_eq!(load_vol(&grad).unwrap().shape(), y.shape());

    let focal = iwseg(&["loss", "--pred", p(&half), "--target", p(&target), "--loss", "focal", "--gamma", "2"]);
    assert_eq!(focal.status.code(), Some(2));
    assert!(stderr(&focal).contains("missing hyperparameter"));

    let unknown = iwseg(&["loss", "--pred", p(&half), "--target", p(&target), "--loss", "tversky"]);
    assert_eq!(unknown.status.code(), Some(2));

    let small = save(dir.path(), "small", &Volume::from_f64(Shape::cube(2), vec![0.5; 8]));
    let mismatch = iwseg(&["loss", "--pred", p(&small), "--target", p(&target), "--loss", "bce"]);
    assert_eq!(mismatch.status.code(), Some(2));
}

fn write_manifest(dir: &Path, cases: &[OracleCase]) -> PathBuf {
    let mut entries = Vec::new();
    for c in cases {
        save(dir, &format!("{}_gt", c.id), &c.target);
        save(dir, &format!("{}_pr", c.id), &c.prob);
        entries.push(serde_json::json!({
            "patient_id": c.id,
            "pred": format!("{}_pr.volhdr", c.id),
            "target": format!("{}_gt.volhdr", c.id),
        }));
    }
    let path = dir.join("manifest.json");
    std::fs::write(&path, serde_json::json!({ "entries": entries }).to_string()).unwrap();
    path
}

#[test]
fn eval_matches_oracle_on_two_patients() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(21);
    let data = loop {
        let d = random_dataset(&mut r, 2, 6);
        if d.len() == 2 {
            break d;
        }
    };
    let manifest = write_manifest(dir.path(), &data);
    let csv = dir.path().join("froc.csv");
    let report_path = dir.path().join("report.json");
    let report = json(&iwseg(&[
        "eval", "--manifest", p(&manifest), "--froc-csv", p(&csv), "--out", p(&report_path),
    ]));

    // with 2 patients every 80% draw keeps both, so the bootstrap is the full curve
    let thresholds = iwseg::detection::default_thresholds();
    let curve = oracle_envelope(&oracle_raw_points(&data, &thresholds, 26));
    let targets = iwseg::detection::DEFAULT_FP_TARGETS;
    assert_eq!(report["avg_recall"]["mean"].as_f64(), Some(oracle_average_recall(&curve, &targets)));
    assert_eq!(report["avg_recall"]["std"].as_f64(), Some(0.0));
    for (key, t) in ["0.125", "0.25", "0.5", "1", "2", "4", "8"].iter().zip(targets) {
        assert_eq!(report["recall_at_fp"][key].as_f64(), Some(oracle_recall_at(&curve, t)), "target {key}");
    }
    let lesions: usize = data
        .iter()
        .map(|c| bfs_labels(c.target.shape().0, &mask_fg(&c.target), 26).1.len() - 1)
        .sum();
    assert_eq!(report["n_lesions"].as_u64(), Some(lesions as u64));
    assert_eq!(report["n_patients"], 2);

    let text = std::fs::read_to_string(&csv).unwrap();
    assert!(text.starts_with("threshold,avg_fp_per_image,recall,on_envelope\n"));
    let envelope: Vec<(f64, f64)> = text
        .lines()
        .filter(|l| l.ends_with(",1"))
        .map(|l| {
            let f: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
            (f[1], f[2])
        })
        .collect();
    assert_eq!(envelope, curve);
    let saved: Value = serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(saved, report);
}

#[test]
fn eval_manifest_errors() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(22);
    let data = random_dataset(&mut r, 3, 5);
    let manifest = write_manifest(dir.path(), &data);
    let text = std::fs::read_to_string(&manifest).unwrap();
    let mut v: Value = serde_json::from_str(&text).unwrap();
    let first = v["entries"][0].clone();
    v["entries"].as_array_mut().unwrap().push(first);
    std::fs::write(&manifest, v.to_string()).unwrap();
    let dup = iwseg(&["eval", "--manifest", p(&manifest)]);
    assert_eq!(dup.status.code(), Some(2));
    assert!(stderr(&dup).contains("duplicate"));

    std::fs::write(&manifest, r#"{"entries": []}"#).unwrap();
    assert_eq!(iwseg(&["eval", "--manifest", p(&manifest)]).status.code(), Some(2));

    let s = Shape::cube(3);
    let empty: Vec<OracleCase> = ["a", "b"]
        .iter()
        .map(|id| OracleCase {
            id: id.to_string(),
            target: Volume::from_u8(s, vec![0; 27]),
            prob: Volume::from_f64(s, vec![0.3; 27]),
        })
        .collect();
    let manifest = write_manifest(dir.path(), &empty);
    assert_eq!(iwseg(&["eval", "--manifest", p(&manifest)]).status.code(), Some(2));
}

#[test]
fn eval_size_modes_and_spacing() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(23);
    let data = random_dataset(&mut r, 4, 6);
    let manifest = write_manifest(dir.path(), &data);
    let tert = json(&iwseg(&["eval", "--manifest", p(&manifest), "--bootstrap-iters", "10"]));
    let groups = &tert["size_groups"];
    let n: u64 = ["small", "medium", "large"].iter().map(|g| groups[g]["n_lesions"].as_u64().unwrap()).sum();
    assert_eq!(n, tert["n_lesions"].as_u64().unwrap());

    let clin = iwseg(&["eval", "--manifest", p(&manifest), "--size-mode", "clinical"]);
    assert_eq!(clin.status.code(), Some(2));
    json(&iwseg(&["eval", "--manifest", p(&manifest), "--size-mode", "clinical", "--threshold-mm", "2"]));

    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(&manifest).unwrap()).unwrap();
    v["spacing_mm"] = serde_json::json!([2.0, 1.0, 1.0]);
    std::fs::write(&manifest, v.to_string()).unwrap();
    json(&iwseg(&["eval", "--manifest", p(&manifest), "--criterion", "iou:0.3", "--with-replacement"]));
}

#[test]
fn convert_command() {
    let dir = tempfile::tempdir().unwrap();
    let values: Vec<i16> = vec![-1200, -1000, -350, 0, 300, 900, 40, -500];
    let nii = dir.path().join("ct.nii");
    std::fs::write(&nii, NiftiFixture::i16([2, 2, 2], [0.8, 0.8, 2.0], &values).bytes()).unwrap();
    let out = dir.path().join("ct");

    let info = json(&iwseg(&["convert", "--nifti", p(&nii), "--out", p(&out)]));
    assert_eq!(info["dtype"], "i16");
    let v = load_vol(&out).unwrap();
    assert_eq!(v.to_f64_vec(), values.iter().map(|&x| x as f64).collect::<Vec<_>>());
    assert_eq!(v.spacing(), [2.0, 0.800000011920929, 0.800000011920929]);

    json(&iwseg(&["convert", "--nifti", p(&nii), "--out", p(&out), "--clip", "-1000", "300", "--scale"]));
    let scaled = load_vol(&out).unwrap().to_f64_vec();
    assert!(scaled.iter().all(|&x| (0.0..=1.0).contains(&x)));
    assert_eq!(scaled[0], 0.0);
    assert_eq!(scaled[4], 1.0);
    assert_eq!(scaled[2], 0.5);

    let organ = save(dir.path(), "organ", &Volume::from_u8(Shape::cube(2), vec![1, 1, 1, 1, 0, 0, 0, 0]));
    json(&iwseg(&["convert", "--nifti", p(&nii), "--out", p(&out), "--clip", "-1000", "300", "--mask", p(&organ)]));
    let masked = load_vol(&out).unwrap().to_f64_vec();
    assert_eq!(&masked[4..], &[-1000.0; 4]);
    assert_eq!(&masked[..4], &[-1000.0, -1000.0, -350.0, 0.0]);

    let mut bad = NiftiFixture::i16([2, 2, 2], [1.0; 3], &values);
    bad.datatype = 8;
    bad.bitpix = 32;
    std::fs::write(&nii, bad.bytes()).unwrap();
    let err = iwseg(&["convert", "--nifti", p(&nii), "--out", p(&out)]);
    assert_eq!(err.status.code(), Some(2));
    assert!(stderr(&err).contains("unsupported datatype"));

    std::fs::write(&nii, [0x1f, 0x8b, 0, 0]).unwrap();
    let gz = iwseg(&["convert", "--nifti", p(&nii), "--out", p(&out)]);
    assert_eq!(gz.status.code(), Some(2));
}

#[test]
fn sizes_command() {
    let dir = tempfile::tempdir().unwrap();
    let s = Shape::cube(5);
    let mut m = vec![0u8; s.len()];
    m[s.index(0, 0, 0)] = 1;
    m[s.index(4, 4, 4)] = 1;
    save(dir.path(), "a_mask", &Volume::from_u8(s, m));
    let big = Volume::from_u8(s, vec![1; s.len()]).with_spacing([2.0, 2.0, 2.0]).unwrap();
    save(dir.path(), "b_mask", &big);
    let pattern = format!("{}/*_mask.volhdr", dir.path().display());

    let out = iwseg(&["sizes", "--masks", &pattern]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(text.lines().next(), Some("mask,label,voxels,diameter_mm,group"));
    assert_eq!(rows.len(), 3);
    let d: f64 = rows[0][3].parse().unwrap();
    assert!((d - 1.2407).abs() < 1e-4);

    let out = iwseg(&["sizes", "--masks", &pattern, "--mode", "clinical", "--threshold-mm", "10"]);
    let text = String::from_utf8(out.stdout).unwrap();
    let groups: Vec<&str> = text.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(groups, ["small", "small", "large"]);

    let none = iwseg(&["sizes", "--masks", &format!("{}/nothing*", dir.path().display())]);
    assert_eq!(none.status.code(), Some(2));
}

#[test]
fn sample_command() {
    let dir = tempfile::tempdir().unwrap();
    let s = Shape::new(10, 12, 9);
    let image = save(dir.path(), "img", &Volume::from_f32(s, (0..s.len()).map(|i| i as f32).collect()));
    let mut m = vec![0u8; s.len()];
    m[s.index(8, 1, 7)] = 1;
    let mask = save(dir.path(), "msk", &Volume::from_u8(s, m));

    let run = |prefix: &Path, extra: &[&str]| {
        let mut args = vec![
            "sample", "--image", p(&image), "--mask", p(&mask), "--n", "5", "--size", "4", "4", "4", "--prefix",
            p(prefix),
        ];
        args.extend_from_slice(extra);
        json(&iwseg(&args))
    };
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    run(&a, &["--seed", "7"]);
    run(&b, &["--seed", "7"]);
    for k in 0..5 {
        for tag in ["img", "msk"] {
            for ext in ["volhdr", "volraw"] {
                let fa = std::fs::read(dir.path().join(format!("a_{tag}_{k}.{ext}"))).unwrap();
                let fb = std::fs::read(dir.path().join(format!("b_{tag}_{k}.{ext}"))).unwrap();
                assert_eq!(fa, fb);
            }
        }
    }

    let c = dir.path().join("c");
    let index = run(&c, &["--seed", "3", "--lesion-prob", "1"]);
    for patch in index["patches"].as_array().unwrap() {
        let m = load_vol(patch["mask"].as_str().unwrap()).unwrap();
        assert!(m.as_u8().unwrap().contains(&1));
    }
    assert!(dir.path().join("c_index.json").exists());

    let zero = iwseg(&[
        "sample", "--image", p(&image), "--mask", p(&mask), "--size", "0", "0", "0", "--prefix", p(&c),
    ]);
    assert_eq!(zero.status.code(), Some(2));
}

#[test]
fn thread_cap_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = rng(24);
    let data = random_dataset(&mut r, 5, 6);
    let manifest = write_manifest(dir.path(), &data);
    let run = |threads: &str| {
        Command::new(env!("CARGO_BIN_EXE_iwseg"))
            .env("IWSEG_THREADS", threads)
            .args(["eval", "--manifest", p(&manifest)])
            .output()
            .unwrap()
            .stdout
    };
    let one = run("1");
    assert_eq!(one, run("0"));
    assert_eq!(one, run("3"));
}
