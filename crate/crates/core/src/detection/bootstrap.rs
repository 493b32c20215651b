//! Patient-level bootstrap of a scalar metric.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub n_iter: usize,
    /// Fraction of patients drawn per iteration, in (0, 1].
    pub frac: f64,
    pub seed: u64,
    pub with_replacement: bool,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            n_iter: 100,
            frac: 0.8,
            seed: 0,
            with_replacement: false,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.frac > 0.0 && self.frac <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "bootstrap fraction must lie in (0, 1], got {}",
                self.frac
            )));
        }
        if self.n_iter == 0 {
            return Err(Error::InvalidParameter("bootstrap needs at least one iteration".into()));
        }
        Ok(())
    }

    /// Patients drawn per iteration: `ceil(frac * n)`.
    pub fn sample_size(&self, n: usize) -> usize {
        // the epsilon keeps e.g. 0.8 * 10 = 8.000000000000002 from rounding up
        ((self.frac * n as f64 - 1e-9).ceil() as usize).clamp(1, n)
    }
}

/// Mean and population standard deviation over bootstrap iterations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    /// Iterations that produced a value.
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        if values.is_empty() {
            return None;
        }
        if values.iter().all(|v| v.to_bits() == values[0].to_bits()) {
            return Some(Summary {
                mean: values[0],
                std: 0.0,
                n: values.len(),
            });
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Summary {
            mean,
            std: var.sqrt(),
            n: values.len(),
        })
    }
}

/// Sorted patient indices drawn for iteration `iteration`.
pub fn bootstrap_sample(n_patients: usize, config: &BootstrapConfig, iteration: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(iteration as u64));
    let k = config.sample_size(n_patients);
    let mut picked = if config.with_replacement {
        (0..k).map(|_| rng.gen_range(0..n_patients)).collect()
    } else {
        index::sample(&mut rng, n_patients, k).into_vec()
    };
    picked.sort_unstable();
    picked
}

/// Evaluates `metric` on `n_iter` resampled patient subsets (indices sorted
/// ascending) and summarises the results. Iterations where `metric` returns
/// `None` are skipped; it is an error if every iteration is skipped.
///
/// Iteration `i` draws from a generator seeded with `seed + i`, so the result
/// does not depend on the worker count.
pub fn bootstrap_summary<F>(n_patients: usize, config: &BootstrapConfig, metric: F) -> Result<Summary>
where
    F: Fn(&[usize]) -> Option<f64> + Sync + Send,
{
    config.validate()?;
    if n_patients < 2 {
        return Err(Error::InvalidParameter(format!(
            "bootstrap needs at least 2 patients, got {n_patients}"
        )));
    }
    let values: Vec<f64> = par::map_range(config.n_iter, |it| metric(&bootstrap_sample(n_patients, config, it)))
        .into_iter()
        .flatten()
        .collect();
    Summary::of(&values).ok_or(Error::Empty("bootstrap iterations with a defined metric"))
}
