//! Uniform linear array model.
//!
//! Angles are in degrees, measured from the array axis, so the inter-element
//! phase progression uses `cos φ`. Steering vectors are normalized to unit
//! energy:
//!
//! ```text
//! β_n(φ) = e^{-j 2π n Δ cos φ} / √N
//! ```
//!
//! and the far-field response of a weight vector is
//!
//! ```text
//! x(φ) = Σ_n w_n e^{+j 2π n Δ cos φ}
//! ```
//!
//! so a steering vector evaluated at its own angle returns `√N`. Multiply the
//! weights by `√N` (see [`SteeringVector::unnormalized`]) to get the classic
//! unit-modulus weights whose response peaks at `N`.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default tolerance for [`are_orthogonal`].
pub const ORTHO_TOL: f64 = 1e-9;

/// Angular resolution of the sidelobe scan, in degrees.
pub const SIDELOBE_SCAN_STEP_DEG: f64 = 0.05;

/// Local maxima within this many dB of the global peak count as main lobes.
const MAIN_LOBE_WINDOW_DB: f64 = 3.0;

/// Entries smaller than this fraction of the largest magnitude are treated as
/// zero when a phase has to be read off them.
const ZERO_MAGNITUDE_REL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrayConfig {
    pub num_antennas: usize,
    /// Element spacing in wavelengths.
    pub spacing: f64,
}

impl ArrayConfig {
    pub fn new(num_antennas: usize, spacing: f64) -> Result<Self> {
        if num_antennas == 0 {
            return Err(Error::invalid("array needs at least one antenna"));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(Error::invalid(format!("spacing must be positive, got {spacing}")));
        }
        Ok(Self { num_antennas, spacing })
    }

    /// Half-wavelength ULA.
    pub fn ula(num_antennas: usize) -> Result<Self> {
        Self::new(num_antennas, 0.5)
    }

    /// Far-field response `e^{+j2πnΔcos φ}` of every element toward `angle_deg`.
    pub fn response(&self, angle_deg: f64) -> Vec<Complex64> {
        let k = 2.0 * PI * self.spacing * angle_deg.to_radians().cos();
        (0..self.num_antennas)
            .map(|n| Complex64::from_polar(1.0, k * n as f64))
            .collect()
    }
}

/// Complex antenna weights, one per element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector(Vec<Complex64>);

impl WeightVector {
    pub fn new(weights: Vec<Complex64>) -> Self {
        Self(weights)
    }

    pub fn zeros(len: usize) -> Self {
        Self(vec![Complex64::new(0.0, 0.0); len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[Complex64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<Complex64> {
        self.0
    }

    /// `|w|² = Σ w_n w_n*`.
    pub fn energy(&self) -> f64 {
        self.0.iter().map(|w| w.norm_sqr()).sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self(self.0.iter().map(|w| w * factor).collect())
    }

    /// Response toward a direction given the element responses from
    /// [`ArrayConfig::response`].
    pub fn respond(&self, element_response: &[Complex64]) -> Complex64 {
        self.0.iter().zip(element_response).map(|(w, a)| w * a).sum()
    }
}

/// Unit-energy steering weights toward one direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteeringVector {
    pub angle_deg: f64,
    pub entries: Vec<Complex64>,
}

impl SteeringVector {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Beams pointing along the array axis have no mirror-free main lobe.
    pub fn is_endfire(&self) -> bool {
        self.angle_deg <= 0.0 || self.angle_deg >= 180.0
    }

    pub fn weights(&self) -> WeightVector {
        WeightVector(self.entries.clone())
    }

    /// Unit-modulus weights `e^{-j2πnΔcos φ}` without the `1/√N` factor.
    pub fn unnormalized(&self) -> WeightVector {
        self.weights().scaled((self.len() as f64).sqrt())
    }
}

pub fn steering_vector(cfg: &ArrayConfig, angle_deg: f64) -> Result<SteeringVector> {
    if !angle_deg.is_finite() {
        return Err(Error::invalid(format!("angle must be finite, got {angle_deg}")));
    }
    if !(0.0..=180.0).contains(&angle_deg) {
        return Err(Error::invalid(format!("angle {angle_deg} outside [0, 180] degrees")));
    }
    let scale = 1.0 / (cfg.num_antennas as f64).sqrt();
    let entries = cfg.response(angle_deg).into_iter().map(|a| a.conj() * scale).collect();
    Ok(SteeringVector { angle_deg, entries })
}

pub fn array_factor(w: &WeightVector, angle_deg: f64, cfg: &ArrayConfig) -> Result<Complex64> {
    check_len(cfg.num_antennas, w.len())?;
    Ok(w.respond(&cfg.response(angle_deg)))
}

/// Equal-power superposition `(1/√K) Σ_k sign_k β(φ_k)`.
pub fn superpose_beams(vectors: &[SteeringVector], signs: &[i8]) -> Result<WeightVector> {
    let first = vectors.first().ok_or(Error::Empty("beam list"))?;
    check_len(vectors.len(), signs.len())?;
    let n = first.len();
    let mut out = vec![Complex64::new(0.0, 0.0); n];
    for (v, &s) in vectors.iter().zip(signs) {
        check_len(n, v.len())?;
        let s = match s {
            1 => 1.0,
            -1 => -1.0,
            other => return Err(Error::invalid(format!("sign must be ±1, got {other}"))),
        };
        for (o, b) in out.iter_mut().zip(&v.entries) {
            *o += b * s;
        }
    }
    let scale = 1.0 / (vectors.len() as f64).sqrt();
    Ok(WeightVector(out.into_iter().map(|w| w * scale).collect()))
}

/// `Σ_n a_n b_n*`.
pub fn inner_product(a: &[Complex64], b: &[Complex64]) -> Result<Complex64> {
    check_len(a.len(), b.len())?;
    Ok(a.iter().zip(b).map(|(x, y)| x * y.conj()).sum())
}

pub fn are_orthogonal(a: &SteeringVector, b: &SteeringVector, tol: f64) -> Result<bool> {
    if !(tol > 0.0) {
        return Err(Error::invalid("orthogonality tolerance must be positive"));
    }
    Ok(inner_product(&a.entries, &b.entries)?.norm() <= tol)
}

/// Ordered set of beams with their pairwise orthogonality.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeamCodebook {
    pub config: ArrayConfig,
    pub angles: Vec<f64>,
    pub steering: Vec<SteeringVector>,
    /// `ortho[i][j]` is true when beams `i` and `j` are orthogonal; the
    /// diagonal is always false.
    pub ortho: Vec<Vec<bool>>,
}

impl BeamCodebook {
    pub fn from_angles(cfg: &ArrayConfig, angles: &[f64]) -> Result<Self> {
        let steering = angles
            .iter()
            .map(|&a| steering_vector(cfg, a))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_steering(*cfg, steering))
    }

    fn from_steering(config: ArrayConfig, steering: Vec<SteeringVector>) -> Self {
        let k = steering.len();
        let mut ortho = vec![vec![false; k]; k];
        for i in 0..k {
            for j in (i + 1)..k {
                // lengths agree by construction
                let o = are_orthogonal(&steering[i], &steering[j], ORTHO_TOL).unwrap_or(false);
                ortho[i][j] = o;
                ortho[j][i] = o;
            }
        }
        let angles = steering.iter().map(|s| s.angle_deg).collect();
        Self { config, angles, steering, ortho }
    }

    pub fn len(&self) -> usize {
        self.steering.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steering.is_empty()
    }

    /// Every distinct pair is orthogonal.
    pub fn is_orthogonal(&self) -> bool {
        self.ortho
            .iter()
            .enumerate()
            .all(|(i, row)| row.iter().enumerate().all(|(j, &o)| i == j || o))
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let steering = indices
            .iter()
            .map(|&i| {
                self.steering.get(i).cloned().ok_or_else(|| {
                    Error::invalid(format!("beam index {i} out of range for {} beams", self.len()))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_steering(self.config, steering))
    }

    pub fn weights(&self) -> Vec<WeightVector> {
        self.steering.iter().map(SteeringVector::weights).collect()
    }

    /// Equal-power composite of every beam in the book.
    pub fn composite(&self) -> Result<WeightVector> {
        superpose_beams(&self.steering, &vec![1; self.len()])
    }
}

/// `N` mutually orthogonal beams on the DFT grid `cos φ_k = k / (NΔ)`,
/// `k ∈ {-⌊N/2⌋, …, ⌈N/2⌉-1}`, ordered by increasing angle.
pub fn dft_codebook(cfg: &ArrayConfig) -> Result<BeamCodebook> {
    dft_codebook_shifted(cfg, 0.0)
}

/// DFT grid displaced by `shift` bins: `cos φ_k = (k + shift) / (NΔ)`.
///
/// A shift of one half interleaves a second orthogonal group between the
/// beams of [`dft_codebook`]; the two groups together form a 2N-beam sweep.
pub fn dft_codebook_shifted(cfg: &ArrayConfig, shift: f64) -> Result<BeamCodebook> {
    if !shift.is_finite() {
        return Err(Error::invalid("grid shift must be finite"));
    }
    let n = cfg.num_antennas as i64;
    let lo = -(n / 2);
    let cosines: Vec<f64> = (lo..lo + n)
        .map(|k| (k as f64 + shift) / (n as f64 * cfg.spacing))
        .collect();
    let achievable = cosines.iter().filter(|c| c.abs() <= 1.0 + 1e-12).count();
    if achievable < cosines.len() {
        return Err(Error::InsufficientAngles { requested: cosines.len(), achievable });
    }
    let mut angles: Vec<f64> = cosines
        .into_iter()
        .map(|c| c.clamp(-1.0, 1.0).acos().to_degrees())
        .collect();
    angles.sort_by(f64::total_cmp);
    BeamCodebook::from_angles(cfg, &angles)
}

/// Snap each phase to the nearest multiple of `2π / 2^bits`, keeping the
/// magnitude. Exact midpoints go to the lower level.
pub fn quantize_phases(w: &WeightVector, bits: u32) -> Result<WeightVector> {
    if bits == 0 || bits > 24 {
        return Err(Error::invalid(format!("phase bits must be in 1..=24, got {bits}")));
    }
    let step = 2.0 * PI / f64::from(1u32 << bits);
    let out = w
        .0
        .iter()
        .map(|z| {
            let x = z.arg() / step;
            let lower = x.floor();
            let level = if x - lower > 0.5 { lower + 1.0 } else { lower };
            Complex64::from_polar(z.norm(), level * step)
        })
        .collect();
    Ok(WeightVector(out))
}

/// Largest wrapped phase difference between corresponding entries.
pub fn max_phase_error(a: &WeightVector, b: &WeightVector) -> Result<f64> {
    check_len(a.len(), b.len())?;
    Ok(a.0
        .iter()
        .zip(&b.0)
        .map(|(x, y)| (x * y.conj()).arg().abs())
        .fold(0.0, f64::max))
}

/// Phase-only weights `e^{j∠w_n}/√N`. Zero entries take phase 0.
pub fn project_uniform(w: &WeightVector) -> WeightVector {
    let n = w.len();
    if n == 0 {
        return w.clone();
    }
    let scale = 1.0 / (n as f64).sqrt();
    let peak = w.0.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let out = w
        .0
        .iter()
        .map(|z| {
            let phase = if z.norm() <= peak * ZERO_MAGNITUDE_REL { 0.0 } else { z.arg() };
            Complex64::from_polar(scale, phase)
        })
        .collect();
    WeightVector(out)
}

/// `|x(φ)|²` sampled at `step_deg` over the open interval (0°, 180°).
pub fn power_pattern(w: &WeightVector, cfg: &ArrayConfig, step_deg: f64) -> Result<Vec<(f64, f64)>> {
    check_len(cfg.num_antennas, w.len())?;
    if !(step_deg > 0.0 && step_deg < 180.0) {
        return Err(Error::invalid(format!("scan step {step_deg} out of range")));
    }
    let count = (180.0 / step_deg).round() as usize;
    Ok((1..count)
        .map(|i| {
            let angle = i as f64 * step_deg;
            (angle, w.respond(&cfg.response(angle)).norm_sqr())
        })
        .collect())
}

/// Highest sidelobe relative to the main lobe(s), in dB.
///
/// Main lobes are the local maxima within 3 dB of the global peak; each one
/// claims the samples down to the adjacent minima on both sides. The result
/// is the largest interior local maximum outside every main lobe, or `None`
/// when the pattern has no such lobe.
pub fn sidelobe_level(w: &WeightVector, cfg: &ArrayConfig) -> Result<Option<f64>> {
    let pattern = power_pattern(w, cfg, SIDELOBE_SCAN_STEP_DEG)?;
    let p: Vec<f64> = pattern.iter().map(|&(_, v)| v).collect();
    let peak = p.iter().copied().fold(0.0, f64::max);
    if peak <= 0.0 {
        return Err(Error::UndefinedPattern);
    }
    let last = p.len() - 1;
    let is_local_max = |i: usize| i > 0 && i < last && p[i] > p[i - 1] && p[i] >= p[i + 1];
    let main_floor = peak * 10f64.powf(-MAIN_LOBE_WINDOW_DB / 10.0);

    let mut main: Vec<usize> = (0..=last).filter(|&i| is_local_max(i) && p[i] >= main_floor).collect();
    // a beam steered to endfire peaks at the edge of the scan
    for edge in [0, last] {
        if p[edge] == peak {
            main.push(edge);
        }
    }

    let mut claimed = vec![false; p.len()];
    for &m in &main {
        let mut lo = m;
        while lo > 0 && p[lo - 1] < p[lo] {
            lo -= 1;
        }
        let mut hi = m;
        while hi < last && p[hi + 1] < p[hi] {
            hi += 1;
        }
        claimed[lo..=hi].iter_mut().for_each(|c| *c = true);
    }

    let side = (0..=last)
        .filter(|&i| !claimed[i] && is_local_max(i))
        .map(|i| p[i])
        .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))));
    Ok(side.map(|s| 10.0 * (s / peak).log10()))
}

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}
