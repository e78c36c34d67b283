//! Power ratio, empirical CDFs and capacity-averaged SNR.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRatioSample {
    pub gamma: f64,
    pub field_index: usize,
    pub scheme: Option<String>,
    pub seed: Option<u64>,
}

impl PowerRatioSample {
    pub fn tagged(mut self, scheme: &str, seed: u64) -> Self {
        self.scheme = Some(scheme.to_string());
        self.seed = Some(seed);
        self
    }
}

/// Population variance of complex samples around their mean.
pub fn preamble_variance(samples: &[Complex64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Empty("preamble samples"));
    }
    let n = samples.len() as f64;
    let mean: Complex64 = samples.iter().sum::<Complex64>() / n;
    Ok(samples.iter().map(|x| (x - mean).norm_sqr()).sum::<f64>() / n)
}

/// `γ_t = P_t / (3 σ_prem)` for every TRN field power `P_t`.
pub fn power_ratio(field_powers: &[f64], preamble: &[Complex64]) -> Result<Vec<PowerRatioSample>> {
    let sigma = preamble_variance(preamble)?;
    if !(sigma > 0.0) {
        return Err(Error::UndefinedRatio);
    }
    field_powers
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            if !(p >= 0.0) {
                return Err(Error::invalid(format!("field {i} has power {p}")));
            }
            Ok(PowerRatioSample { gamma: p / (3.0 * sigma), field_index: i, scheme: None, seed: None })
        })
        .collect()
}

/// Right-continuous empirical distribution function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn new(samples: &[f64]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("CDF samples"));
        }
        if samples.iter().any(|x| x.is_nan()) {
            return Err(Error::invalid("CDF samples contain NaN"));
        }
        let mut sorted = samples.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self { sorted })
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// Fraction of samples `≤ x`.
    pub fn eval(&self, x: f64) -> f64 {
        self.sorted.partition_point(|&s| s <= x) as f64 / self.sorted.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.sorted[0]
    }

    pub fn max(&self) -> f64 {
        self.sorted[self.sorted.len() - 1]
    }

    /// `(value, cumulative fraction)` at each distinct sample value.
    pub fn steps(&self) -> Vec<(f64, f64)> {
        let n = self.sorted.len() as f64;
        let mut out: Vec<(f64, f64)> = Vec::new();
        for (i, &x) in self.sorted.iter().enumerate() {
            let frac = (i + 1) as f64 / n;
            match out.last_mut() {
                Some(last) if last.0 == x => last.1 = frac,
                _ => out.push((x, frac)),
            }
        }
        out
    }
}

pub fn empirical_cdf(samples: &[f64]) -> Result<EmpiricalCdf> {
    EmpiricalCdf::new(samples)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnrAggregate {
    pub per_run_snr: Vec<f64>,
    pub runs: usize,
    pub aggregate: f64,
}

impl SnrAggregate {
    pub fn new(per_run_snr: Vec<f64>) -> Result<Self> {
        let aggregate = aggregate_snr(&per_run_snr)?;
        Ok(Self { runs: per_run_snr.len(), per_run_snr, aggregate })
    }

    pub fn aggregate_db(&self) -> f64 {
        to_db(self.aggregate)
    }
}

/// `2^{mean log2(1 + SNR_i)} − 1` over linear per-run SNRs.
pub fn aggregate_snr(per_run: &[f64]) -> Result<f64> {
    if per_run.is_empty() {
        return Err(Error::Empty("per-run SNR list"));
    }
    let mut acc = 0.0;
    for &s in per_run {
        if !(s >= 0.0) {
            return Err(Error::invalid(format!("SNR must be non-negative, got {s}")));
        }
        acc += s.ln_1p();
    }
    Ok((acc / per_run.len() as f64).exp_m1())
}

pub fn to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}
