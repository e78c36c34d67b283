//! Ray-based propagation: the four-beam toy scenario, a clustered indoor
//! channel sampler and the link budget.
//!
//! Ray gains are complex amplitudes per unit transmit amplitude and include
//! path loss. Delays are integer taps at the sample rate.
//!
//! Random streams are derived from a master seed with
//! `seed_i = mix(mix(master) ⊕ i)`, where `mix` is the SplitMix64 finalizer;
//! every realization depends only on its own seed.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::array::{self, dft_codebook, ArrayConfig, BeamCodebook, WeightVector};
use crate::error::{Error, Result};

const SPEED_OF_LIGHT: f64 = 299_792_458.0;
const THERMAL_NOISE_DBM_PER_HZ: f64 = -174.0;

/// Toy scenario geometry: four beams per side on a half-wavelength ULA.
pub const TOY_ANTENNAS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ray {
    pub aod_deg: f64,
    pub aoa_deg: f64,
    pub gain: Complex64,
    pub tap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelRealization {
    pub rays: Vec<Ray>,
    pub los_present: bool,
    pub seed: Option<u64>,
    /// Amplitude of an unobstructed path at the link distance.
    pub reference_gain: f64,
}

impl ChannelRealization {
    pub fn num_taps(&self) -> usize {
        self.rays.iter().map(|r| r.tap + 1).max().unwrap_or(1)
    }

    /// Same rays seen from the other end of the link.
    pub fn reversed(&self) -> Self {
        let rays = self
            .rays
            .iter()
            .map(|r| Ray { aod_deg: r.aoa_deg, aoa_deg: r.aod_deg, ..*r })
            .collect();
        Self { rays, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelConfig {
    pub path_loss_exponent: f64,
    pub cluster_loss_mean_db: f64,
    /// Standard deviation of the cluster reflection loss in dB.
    pub cluster_loss_rms_db: f64,
    /// Cluster losses above this value are redrawn.
    pub cluster_loss_truncation_db: f64,
    pub intra_cluster_angle_std_deg: f64,
    pub num_clusters: usize,
    pub rays_per_cluster: usize,
    pub distance_m: f64,
    pub los: bool,
    pub carrier_hz: f64,
    /// Mean of the exponential cluster excess delay.
    pub cluster_delay_mean_ns: f64,
    pub sample_rate_hz: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            path_loss_exponent: 2.0,
            cluster_loss_mean_db: -10.0,
            cluster_loss_rms_db: 4.0,
            cluster_loss_truncation_db: -2.0,
            intra_cluster_angle_std_deg: 5.0,
            num_clusters: 4,
            rays_per_cluster: 3,
            distance_m: 5.0,
            los: true,
            carrier_hz: 60e9,
            cluster_delay_mean_ns: 2.0,
            sample_rate_hz: 2e9,
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("path_loss_exponent", self.path_loss_exponent),
            ("cluster_loss_rms_db", self.cluster_loss_rms_db),
            ("distance_m", self.distance_m),
            ("carrier_hz", self.carrier_hz),
            ("cluster_delay_mean_ns", self.cluster_delay_mean_ns),
            ("sample_rate_hz", self.sample_rate_hz),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("channel.{name} must be positive, got {v}")));
            }
        }
        if !(self.intra_cluster_angle_std_deg.is_finite() && self.intra_cluster_angle_std_deg >= 0.0) {
            return Err(Error::Config("channel.intra_cluster_angle_std_deg must be non-negative".into()));
        }
        if !(self.cluster_loss_truncation_db.is_finite() && self.cluster_loss_mean_db.is_finite()) {
            return Err(Error::Config("channel cluster loss parameters must be finite".into()));
        }
        if self.cluster_loss_truncation_db > 0.0 {
            return Err(Error::Config("channel.cluster_loss_truncation_db must be a loss (≤ 0 dB)".into()));
        }
        // rejection sampling must have a usable acceptance rate
        let z = (self.cluster_loss_truncation_db - self.cluster_loss_mean_db) / self.cluster_loss_rms_db;
        if z < -6.0 {
            return Err(Error::Config("cluster loss truncation leaves no probability mass".into()));
        }
        if self.num_clusters > 0 && self.rays_per_cluster == 0 {
            return Err(Error::Config("channel.rays_per_cluster must be at least 1".into()));
        }
        Ok(())
    }

    pub fn wavelength_m(&self) -> f64 {
        SPEED_OF_LIGHT / self.carrier_hz
    }
}

/// Path loss `20 log10(4π/λ) + 10 n log10(d)` in dB.
pub fn path_loss_db(distance_m: f64, exponent: f64, carrier_hz: f64) -> f64 {
    let lambda = SPEED_OF_LIGHT / carrier_hz;
    20.0 * (4.0 * PI / lambda).log10() + 10.0 * exponent * distance_m.log10()
}

fn path_amplitude(distance_m: f64, cfg: &ChannelConfig) -> f64 {
    10f64.powf(-path_loss_db(distance_m, cfg.path_loss_exponent, cfg.carrier_hz) / 20.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkBudget {
    pub tx_power_dbm: f64,
    pub bandwidth_hz: f64,
    pub noise_figure_plus_impl_db: f64,
    /// Replaces the thermal noise power when set (milliwatts; 0 disables noise).
    pub noise_override_mw: Option<f64>,
}

impl Default for LinkBudget {
    fn default() -> Self {
        Self {
            tx_power_dbm: 10.0,
            bandwidth_hz: 2e9,
            noise_figure_plus_impl_db: 12.0,
            noise_override_mw: None,
        }
    }
}

impl LinkBudget {
    pub fn noiseless() -> Self {
        Self { noise_override_mw: Some(0.0), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.tx_power_dbm.is_finite() {
            return Err(Error::Config("link.tx_power_dbm must be finite".into()));
        }
        if !(self.bandwidth_hz.is_finite() && self.bandwidth_hz > 0.0) {
            return Err(Error::Config("link.bandwidth_hz must be positive".into()));
        }
        if let Some(n) = self.noise_override_mw {
            if !(n.is_finite() && n >= 0.0) {
                return Err(Error::Config("link.noise_override_mw must be non-negative".into()));
            }
        }
        Ok(())
    }

    pub fn noise_power_dbm(&self) -> f64 {
        match self.noise_override_mw {
            Some(mw) => 10.0 * mw.log10(),
            None => {
                THERMAL_NOISE_DBM_PER_HZ + 10.0 * self.bandwidth_hz.log10() + self.noise_figure_plus_impl_db
            }
        }
    }

    pub fn noise_power_mw(&self) -> f64 {
        match self.noise_override_mw {
            Some(mw) => mw,
            None => 10f64.powf(self.noise_power_dbm() / 10.0),
        }
    }

    pub fn tx_power_mw(&self) -> f64 {
        10f64.powf(self.tx_power_dbm / 10.0)
    }

    /// Noise variance in channel-gain units (noise power over transmit power).
    pub fn noise_variance(&self) -> f64 {
        self.noise_power_mw() / self.tx_power_mw()
    }

    /// Linear SNR for a received power gain `|h|²`.
    pub fn snr(&self, power_gain: f64) -> f64 {
        let n = self.noise_power_mw();
        if n == 0.0 {
            return f64::INFINITY;
        }
        self.tx_power_mw() * power_gain / n
    }
}

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of run `index` under `master`.
pub fn split_seed(master: u64, index: u64) -> u64 {
    mix64(mix64(master) ^ index)
}

/// Independent generator for one purpose (`stream`) of one run.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix64(seed ^ mix64(stream)))
}

pub(crate) const STREAM_CHANNEL: u64 = 1;
pub(crate) const STREAM_NOISE: u64 = 2;
pub(crate) const STREAM_SUBSET: u64 = 3;

/// Arrays and beams used by the toy scenario (4-element ULA, 4 DFT beams).
pub fn toy_codebook() -> Result<BeamCodebook> {
    dft_codebook(&ArrayConfig::ula(TOY_ANTENNAS)?)
}

/// Two-ray toy channel: a unit LOS path between Tx beam 2 and Rx beam 3 and
/// a path of gain `a` between Tx beam 1 and Rx beam 4 (beams numbered from 1
/// in [`toy_codebook`] order), both at tap 0.
pub fn toy_channel(a: f64) -> Result<ChannelRealization> {
    toy_channel_with_delay(a, 0)
}

pub fn toy_channel_with_delay(a: f64, nlos_tap: usize) -> Result<ChannelRealization> {
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::invalid(format!("NLOS attenuation must lie in (0, 1), got {a}")));
    }
    let book = toy_codebook()?;
    let rays = vec![
        Ray { aod_deg: book.angles[1], aoa_deg: book.angles[2], gain: Complex64::new(1.0, 0.0), tap: 0 },
        Ray { aod_deg: book.angles[0], aoa_deg: book.angles[3], gain: Complex64::new(a, 0.0), tap: nlos_tap },
    ];
    Ok(ChannelRealization { rays, los_present: true, seed: None, reference_gain: 1.0 })
}

/// Cluster reflection loss in dB: Gaussian, redrawn until it does not exceed
/// the truncation level.
pub fn draw_cluster_loss_db<R: Rng + ?Sized>(cfg: &ChannelConfig, rng: &mut R) -> f64 {
    let normal = Normal::new(cfg.cluster_loss_mean_db, cfg.cluster_loss_rms_db)
        .expect("validated standard deviation");
    loop {
        let loss = normal.sample(rng);
        if loss <= cfg.cluster_loss_truncation_db {
            return loss;
        }
    }
}

fn fold_angle(deg: f64) -> f64 {
    let a = deg.rem_euclid(360.0);
    if a > 180.0 {
        360.0 - a
    } else {
        a
    }
}

/// Draw one clustered channel.
///
/// Cluster AoD and AoA centers are uniform over (0°, 180°); each cluster has
/// a truncated-Gaussian reflection loss and an exponential excess delay that
/// also lengthens its path. Its rays scatter around the centers with Gaussian
/// angular spread, share the cluster's tap and split its power equally with
/// independent uniform phases. A LOS ray at tap 0 is added when `cfg.los`.
pub fn sample_channel(cfg: &ChannelConfig, seed: u64) -> Result<ChannelRealization> {
    cfg.validate()?;
    let mut rng = rng_for(seed, STREAM_CHANNEL);
    let reference = path_amplitude(cfg.distance_m, cfg);
    let phase = |rng: &mut ChaCha8Rng| rng.random_range(0.0..2.0 * PI);
    let mut rays = Vec::with_capacity(1 + cfg.num_clusters * cfg.rays_per_cluster);

    if cfg.los {
        let aod = rng.random_range(0.0..180.0);
        let aoa = rng.random_range(0.0..180.0);
        let p = phase(&mut rng);
        rays.push(Ray { aod_deg: aod, aoa_deg: aoa, gain: Complex64::from_polar(reference, p), tap: 0 });
    }

    let delay = Exp::new(1.0 / (cfg.cluster_delay_mean_ns * 1e-9)).expect("validated delay");
    let spread = Normal::new(0.0, cfg.intra_cluster_angle_std_deg).expect("validated spread");
    for _ in 0..cfg.num_clusters {
        let aod_center = rng.random_range(0.0..180.0);
        let aoa_center = rng.random_range(0.0..180.0);
        let loss_db = draw_cluster_loss_db(cfg, &mut rng);
        let excess_s: f64 = delay.sample(&mut rng);
        let length = cfg.distance_m + SPEED_OF_LIGHT * excess_s;
        let amplitude = path_amplitude(length, cfg) * 10f64.powf(loss_db / 20.0)
            / (cfg.rays_per_cluster as f64).sqrt();
        let tap = (excess_s * cfg.sample_rate_hz).round() as usize;
        for _ in 0..cfg.rays_per_cluster {
            let aod = fold_angle(aod_center + spread.sample(&mut rng));
            let aoa = fold_angle(aoa_center + spread.sample(&mut rng));
            let p = phase(&mut rng);
            rays.push(Ray { aod_deg: aod, aoa_deg: aoa, gain: Complex64::from_polar(amplitude, p), tap });
        }
    }
    Ok(ChannelRealization { rays, los_present: cfg.los, seed: Some(seed), reference_gain: reference })
}

/// Element responses of a channel toward every ray, cached for repeated
/// evaluation with many weight vectors.
#[derive(Debug, Clone)]
pub struct ChannelResponse {
    tx: ArrayConfig,
    rx: ArrayConfig,
    tx_elements: Vec<Vec<Complex64>>,
    rx_elements: Vec<Vec<Complex64>>,
    gains: Vec<Complex64>,
    taps: Vec<usize>,
    num_taps: usize,
}

impl ChannelResponse {
    pub fn new(ch: &ChannelRealization, tx: &ArrayConfig, rx: &ArrayConfig) -> Self {
        Self {
            tx: *tx,
            rx: *rx,
            tx_elements: ch.rays.iter().map(|r| tx.response(r.aod_deg)).collect(),
            rx_elements: ch.rays.iter().map(|r| rx.response(r.aoa_deg)).collect(),
            gains: ch.rays.iter().map(|r| r.gain).collect(),
            taps: ch.rays.iter().map(|r| r.tap).collect(),
            num_taps: ch.num_taps(),
        }
    }

    pub fn num_taps(&self) -> usize {
        self.num_taps
    }

    /// Array factor of `w` toward each ray's departure angle.
    pub fn tx_factors(&self, w: &WeightVector) -> Result<Vec<Complex64>> {
        array::check_len(self.tx.num_antennas, w.len())?;
        Ok(self.tx_elements.iter().map(|a| w.respond(a)).collect())
    }

    /// Array factor of `w` toward each ray's arrival angle.
    pub fn rx_factors(&self, w: &WeightVector) -> Result<Vec<Complex64>> {
        array::check_len(self.rx.num_antennas, w.len())?;
        Ok(self.rx_elements.iter().map(|a| w.respond(a)).collect())
    }

    /// Per-tap gain from per-ray Tx and Rx factors.
    pub fn combine(&self, tx_factors: &[Complex64], rx_factors: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.num_taps];
        for (((g, &tap), t), r) in self.gains.iter().zip(&self.taps).zip(tx_factors).zip(rx_factors) {
            out[tap] += g * t * r;
        }
        out
    }

    pub fn tap_gains(&self, tx_w: &WeightVector, rx_w: &WeightVector) -> Result<Vec<Complex64>> {
        Ok(self.combine(&self.tx_factors(tx_w)?, &self.rx_factors(rx_w)?))
    }
}

/// Per-tap complex gain between Tx weights and Rx weights: each ray
/// contributes `gain · x_tx(AoD) · x_rx(AoA)` to its tap.
pub fn end_to_end_gain(
    tx_cfg: &ArrayConfig,
    tx_w: &WeightVector,
    rx_cfg: &ArrayConfig,
    rx_w: &WeightVector,
    ch: &ChannelRealization,
) -> Result<Vec<Complex64>> {
    ChannelResponse::new(ch, tx_cfg, rx_cfg).tap_gains(tx_w, rx_w)
}

/// Total power gain `Σ_taps |h|²`.
pub fn power_gain(taps: &[Complex64]) -> f64 {
    taps.iter().map(|h| h.norm_sqr()).sum()
}

/// Circularly-symmetric complex Gaussian sample of the given variance.
pub(crate) fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re * s, im * s)
}

/// Add receiver noise to samples expressed in channel-gain units.
pub fn add_noise(samples: &[Complex64], budget: &LinkBudget, seed: u64) -> Vec<Complex64> {
    let variance = budget.noise_variance();
    if variance == 0.0 {
        return samples.to_vec();
    }
    let mut rng = rng_for(seed, STREAM_NOISE);
    samples.iter().map(|&x| x + complex_gaussian(&mut rng, variance)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::steering_vector;

    #[test]
    fn toy_channel_best_pair_by_exhaustive_search() {
        let ch = toy_channel(0.5).unwrap();
        let book = toy_codebook().unwrap();
        let cfg = book.config;
        let mut best = (0, 0, 0.0);
        for p in 0..4 {
            for q in 0..4 {
                let h = end_to_end_gain(&cfg, &book.steering[p].weights(), &cfg, &book.steering[q].weights(), &ch)
                    .unwrap();
                let g = power_gain(&h) / 16.0;
                if g > best.2 + 1e-12 {
                    best = (p, q, g);
                }
            }
        }
        assert_eq!((best.0, best.1), (1, 2));
        assert!((best.2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn toy_channel_rejects_bad_attenuation() {
        for a in [0.0, 1.0, -0.3, 1.5, f64::NAN] {
            assert!(toy_channel(a).is_err(), "{a}");
        }
        let ch = toy_channel(1e-9).unwrap();
        assert!(ch.rays[1].gain.norm() < 1e-8);
    }

    #[test]
    fn toy_matched_pair_has_only_los_contribution() {
        let ch = toy_channel(0.5).unwrap();
        let book = toy_codebook().unwrap();
        let cfg = book.config;
        let h = end_to_end_gain(&cfg, &book.steering[1].weights(), &cfg, &book.steering[2].weights(), &ch).unwrap();
        // array gains √4·√4 on the LOS ray; the NLOS ray sits in both nulls
        assert!((h[0].norm() - 4.0).abs() < 1e-12);
        let nlos_only = ChannelRealization { rays: vec![ch.rays[1]], ..ch.clone() };
        let h2 = end_to_end_gain(&cfg, &book.steering[1].weights(), &cfg, &book.steering[2].weights(), &nlos_only)
            .unwrap();
        assert!(h2[0].norm() < 1e-12);
    }

    #[test]
    fn toy_feedback_stage_one_observation() {
        let a = 0.5;
        let ch = toy_channel(a).unwrap();
        let book = toy_codebook().unwrap();
        let cfg = book.config;
        let composite = book.composite().unwrap();
        let y: Vec<f64> = (0..4)
            .map(|p| {
                let h = end_to_end_gain(&cfg, &book.steering[p].weights(), &cfg, &composite, &ch).unwrap();
                h[0].norm() / 4.0
            })
            .collect();
        let want = [0.5 * a, 0.5, 0.0, 0.0];
        for (g, w) in y.iter().zip(want) {
            assert!((g - w).abs() < 1e-12, "{y:?}");
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let cfg = ChannelConfig::default();
        assert_eq!(sample_channel(&cfg, 42).unwrap(), sample_channel(&cfg, 42).unwrap());
        assert_ne!(sample_channel(&cfg, 42).unwrap(), sample_channel(&cfg, 43).unwrap());
    }

    #[test]
    fn nlos_rays_stay_below_reference() {
        let cfg = ChannelConfig { los: false, ..ChannelConfig::default() };
        for seed in 0..200 {
            let ch = sample_channel(&cfg, seed).unwrap();
            assert!(!ch.los_present);
            assert_eq!(ch.rays.len(), 12);
            for r in &ch.rays {
                assert!(r.gain.norm() < ch.reference_gain);
                assert!((0.0..=180.0).contains(&r.aod_deg) && (0.0..=180.0).contains(&r.aoa_deg));
            }
        }
    }

    #[test]
    fn doubling_distance_costs_six_db() {
        let a = path_loss_db(3.0, 2.0, 60e9);
        let b = path_loss_db(6.0, 2.0, 60e9);
        assert!((b - a - 20.0 * 2f64.log10()).abs() < 1e-9);
        assert!((b - a - 6.02).abs() < 1e-2);
        let c1 = ChannelConfig { distance_m: 4.0, num_clusters: 0, ..ChannelConfig::default() };
        let c2 = ChannelConfig { distance_m: 8.0, ..c1 };
        let p1 = sample_channel(&c1, 1).unwrap().rays[0].gain.norm_sqr();
        let p2 = sample_channel(&c2, 1).unwrap().rays[0].gain.norm_sqr();
        assert!((10.0 * (p1 / p2).log10() - 6.0206).abs() < 1e-6);
    }

    #[test]
    fn cluster_losses_never_exceed_truncation() {
        let cfg = ChannelConfig::default();
        let mut rng = rng_for(9, 0);
        for _ in 0..1_000_000 {
            assert!(draw_cluster_loss_db(&cfg, &mut rng) <= -2.0);
        }
    }

    #[test]
    fn link_budget_defaults() {
        let b = LinkBudget::default();
        assert!((b.noise_power_dbm() - (-174.0 + 10.0 * 2e9f64.log10() + 12.0)).abs() < 1e-12);
        assert!((b.noise_power_dbm() + 68.99).abs() < 0.01);
        assert_eq!(LinkBudget::noiseless().noise_variance(), 0.0);
    }

    #[test]
    fn noiseless_budget_leaves_samples_unchanged() {
        let x = vec![Complex64::new(1.0, -2.0); 8];
        assert_eq!(add_noise(&x, &LinkBudget::noiseless(), 3), x);
    }

    #[test]
    fn noise_is_reproducible() {
        let x = vec![Complex64::new(0.0, 0.0); 64];
        let b = LinkBudget::default();
        assert_eq!(add_noise(&x, &b, 11), add_noise(&x, &b, 11));
        assert_ne!(add_noise(&x, &b, 11), add_noise(&x, &b, 12));
    }

    #[test]
    fn zero_tx_weights_give_zero_gain() {
        let cfg = ChannelConfig::default();
        let ch = sample_channel(&cfg, 5).unwrap();
        let arr = ArrayConfig::ula(16).unwrap();
        let rx = steering_vector(&arr, 50.0).unwrap().weights();
        let h = end_to_end_gain(&arr, &WeightVector::zeros(16), &arr, &rx, &ch).unwrap();
        assert!(h.iter().all(|g| g.norm() == 0.0));
    }

    #[test]
    fn split_seed_is_a_mix_of_master_and_index() {
        assert_eq!(split_seed(5, 3), mix64(mix64(5) ^ 3));
        let seeds: std::collections::HashSet<u64> =
            (0..1000).flat_map(|i| [split_seed(2, i), split_seed(3, i)]).collect();
        assert_eq!(seeds.len(), 2000);
    }
}
