//! Beam-training procedures. Each run consumes one channel realization and
//! reports the selected beam pair, what it cost and what was observed.
//!
//! Observations are per-tap complex gains normalized by the ideal array gain
//! `√(N_tx·N_rx)`, so a ray of gain `g` aligned with both beams of a pair is
//! observed as `g`. Receiver noise is added per tap after CE processing.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::array::{project_uniform, quantize_phases, superpose_beams, ArrayConfig, BeamCodebook, WeightVector};
use crate::channel::{complex_gaussian, power_gain, rng_for, ChannelRealization, ChannelResponse, LinkBudget, STREAM_NOISE};
use crate::coding::{build_schedule, walsh_codes_for, CorrelationMatrix, SignatureCode};
use crate::error::{Error, Result};
use crate::packets::{layout_80211ad, layout_beam_coding, PacketLayout, CE_BITS, DEFAULT_HEADER_BITS, DEFAULT_PREAMBLE_BITS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    ExhaustivePbp,
    MultilevelPbp,
    ExhaustiveInpacket,
    FeedbackInpacket,
    ExhaustiveBeamcoding,
    FeedbackBeamcoding,
}

impl Scheme {
    pub const ALL: [Scheme; 6] = [
        Scheme::ExhaustivePbp,
        Scheme::MultilevelPbp,
        Scheme::ExhaustiveInpacket,
        Scheme::FeedbackInpacket,
        Scheme::ExhaustiveBeamcoding,
        Scheme::FeedbackBeamcoding,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Scheme::ExhaustivePbp => "exhaustive_pbp",
            Scheme::MultilevelPbp => "multilevel_pbp",
            Scheme::ExhaustiveInpacket => "exhaustive_inpacket",
            Scheme::FeedbackInpacket => "feedback_inpacket",
            Scheme::ExhaustiveBeamcoding => "exhaustive_beamcoding",
            Scheme::FeedbackBeamcoding => "feedback_beamcoding",
        }
    }

    pub fn is_beam_coding(&self) -> bool {
        matches!(self, Scheme::ExhaustiveBeamcoding | Scheme::FeedbackBeamcoding)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scheme `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    Noiseless,
    /// Thermal noise of the link budget after `ce_chips` of CE processing gain.
    Link(LinkBudget),
    /// Fixed per-tap noise standard deviation in normalized gain units.
    ObservationStd(f64),
}

#[derive(Debug, Clone)]
pub struct ProtocolConfig {
    pub tx: BeamCodebook,
    pub rx: BeamCodebook,
    pub scheme: Scheme,
    pub noise: NoiseModel,
    /// Budget used for the reported data SNR.
    pub link: LinkBudget,
    pub quantization_bits: Option<u32>,
    /// Project coded weights onto constant modulus before quantizing.
    pub uniform_coded: bool,
    pub ce_chips: usize,
    /// L-Re sectors per side for multilevel search.
    pub sectors: usize,
    pub feedback_bits: u64,
    pub preamble_bits: u64,
    pub header_bits: u64,
    /// Detection threshold in decoded noise standard deviations.
    pub detection_factor: f64,
    pub warnings: Vec<String>,
}

impl ProtocolConfig {
    pub fn new(tx: BeamCodebook, rx: BeamCodebook, scheme: Scheme, noise: NoiseModel) -> Result<Self> {
        let cfg = Self {
            tx,
            rx,
            scheme,
            noise,
            link: LinkBudget::default(),
            quantization_bits: None,
            uniform_coded: false,
            ce_chips: CE_BITS as usize,
            sectors: 4,
            feedback_bits: 512,
            preamble_bits: DEFAULT_PREAMBLE_BITS,
            header_bits: DEFAULT_HEADER_BITS,
            detection_factor: 5.0,
            warnings: Vec::new(),
        };
        cfg.validated()
    }

    /// Four DFT beams per side on 4-element arrays, two sectors per side.
    pub fn toy(scheme: Scheme) -> Result<Self> {
        let book = crate::channel::toy_codebook()?;
        let mut cfg = Self::new(book.clone(), book, scheme, NoiseModel::Noiseless)?;
        cfg.sectors = 2;
        cfg.validated()
    }

    /// Re-check scheme requirements after fields were changed.
    pub fn validated(mut self) -> Result<Self> {
        if self.tx.is_empty() || self.rx.is_empty() {
            return Err(Error::Empty("codebook"));
        }
        if let NoiseModel::ObservationStd(s) = self.noise {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::invalid(format!("noise standard deviation must be non-negative, got {s}")));
            }
        }
        if self.ce_chips == 0 {
            return Err(Error::invalid("CE fields need at least one chip"));
        }
        if let Some(b) = self.quantization_bits {
            if b == 0 || b > 24 {
                return Err(Error::invalid(format!("quantization bits must be in 1..=24, got {b}")));
            }
        }
        self.warnings.clear();
        match self.scheme {
            Scheme::MultilevelPbp => {
                for (side, book) in [("tx", &self.tx), ("rx", &self.rx)] {
                    let s = self.sectors;
                    if s == 0 || book.len() % s != 0 || book.config.num_antennas % s != 0 {
                        return Err(Error::invalid(format!(
                            "{s} sectors must divide both the {} {side} beams and the {} antennas",
                            book.len(),
                            book.config.num_antennas
                        )));
                    }
                }
            }
            Scheme::ExhaustiveBeamcoding | Scheme::FeedbackBeamcoding => {
                let coded: &[(&str, &BeamCodebook)] = if self.scheme == Scheme::FeedbackBeamcoding {
                    &[("tx", &self.tx), ("rx", &self.rx)]
                } else {
                    &[("tx", &self.tx)]
                };
                for (side, book) in coded {
                    let limit = book.config.num_antennas;
                    if book.len() > limit {
                        return Err(Error::CapacityExceeded { requested: book.len(), limit });
                    }
                    if !book.is_orthogonal() {
                        self.warnings.push(format!("{side} coded group is not mutually orthogonal"));
                    }
                }
            }
            _ => {}
        }
        Ok(self)
    }

    fn quantize(&self, w: &WeightVector) -> Result<WeightVector> {
        match self.quantization_bits {
            Some(b) => quantize_phases(w, b),
            None => Ok(w.clone()),
        }
    }

    fn beam_weights(&self, book: &BeamCodebook) -> Result<Vec<WeightVector>> {
        book.weights().iter().map(|w| self.quantize(w)).collect()
    }

    fn coded_weights(&self, book: &BeamCodebook) -> Result<(Vec<WeightVector>, Vec<SignatureCode>)> {
        let codes = walsh_codes_for(book.len())?;
        let sched = build_schedule(book, &codes)?;
        let fields = sched
            .fields
            .iter()
            .map(|w| if self.uniform_coded { self.quantize(&project_uniform(w)) } else { self.quantize(w) })
            .collect::<Result<Vec<_>>>()?;
        Ok((fields, codes))
    }

    fn composite(&self, book: &BeamCodebook) -> Result<WeightVector> {
        self.quantize(&book.composite()?)
    }

    fn packet_bits(&self, layout: PacketLayout) -> u64 {
        layout.with_overheads(self.preamble_bits, self.header_bits).total_bits()
    }

    /// Per-tap noise variance of a normalized observation.
    pub fn observation_noise_variance(&self) -> f64 {
        match self.noise {
            NoiseModel::Noiseless => 0.0,
            NoiseModel::ObservationStd(s) => s * s,
            NoiseModel::Link(b) => {
                b.noise_variance()
                    / self.ce_chips as f64
                    / (self.tx.config.num_antennas * self.rx.config.num_antennas) as f64
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingOutcome {
    pub scheme: Scheme,
    /// `None` when nothing rose above the detection threshold.
    pub best_pair: Option<(usize, usize)>,
    /// Measured gain `Σ_taps |ĝ|²` per pair, row-major `P × Q`; `NaN` where
    /// the pair was never measured.
    pub gains: Vec<f64>,
    /// Tap-0 correlations of the coded schemes.
    pub correlation: Option<CorrelationMatrix>,
    /// Stage-1 measurements of the feedback schemes, one per Tx beam.
    pub stage1: Option<Vec<f64>>,
    pub packets_sent: usize,
    pub training_bits: u64,
    pub feedback_bits: u64,
    /// Observed power of every training field, one list per packet.
    pub power_traces: Vec<Vec<f64>>,
    /// Data SNR on the selected pair.
    pub snr_db: Option<f64>,
    pub warnings: Vec<String>,
}

impl TrainingOutcome {
    pub fn gain(&self, p: usize, q: usize, rx_beams: usize) -> f64 {
        self.gains[p * rx_beams + q]
    }
}

struct Observer {
    resp: ChannelResponse,
    norm: f64,
    variance: f64,
    rng: ChaCha8Rng,
}

impl Observer {
    fn new(cfg: &ProtocolConfig, ch: &ChannelRealization, seed: u64) -> Self {
        let n = (cfg.tx.config.num_antennas * cfg.rx.config.num_antennas) as f64;
        Self {
            resp: ChannelResponse::new(ch, &cfg.tx.config, &cfg.rx.config),
            norm: 1.0 / n.sqrt(),
            variance: cfg.observation_noise_variance(),
            rng: rng_for(seed, STREAM_NOISE),
        }
    }

    fn tx(&self, ws: &[WeightVector]) -> Result<Vec<Vec<Complex64>>> {
        ws.iter().map(|w| self.resp.tx_factors(w)).collect()
    }

    fn rx(&self, ws: &[WeightVector]) -> Result<Vec<Vec<Complex64>>> {
        ws.iter().map(|w| self.resp.rx_factors(w)).collect()
    }

    /// One noisy CE estimate of the per-tap gain.
    fn observe(&mut self, tx: &[Complex64], rx: &[Complex64]) -> Vec<Complex64> {
        let mut taps = self.resp.combine(tx, rx);
        for h in taps.iter_mut() {
            *h *= self.norm;
            if self.variance > 0.0 {
                *h += complex_gaussian(&mut self.rng, self.variance);
            }
        }
        taps
    }

    fn taps(&self) -> usize {
        self.resp.num_taps()
    }
}

/// First maximum in index order, if it clears `threshold`.
fn select(metric: &[f64], threshold: f64) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &m) in metric.iter().enumerate() {
        if m.is_nan() {
            continue;
        }
        if best.is_none_or(|b| m > metric[b]) {
            best = Some(i);
        }
    }
    best.filter(|&b| metric[b] > threshold)
}

/// Energy threshold in gain units for a metric summed over `taps`, each tap
/// carrying noise of `variance`.
fn threshold(cfg: &ProtocolConfig, variance: f64, taps: usize) -> f64 {
    cfg.detection_factor * cfg.detection_factor * variance * taps as f64
}

fn energy(taps: &[Complex64]) -> f64 {
    taps.iter().map(|h| h.norm_sqr()).sum()
}

fn data_snr_db(cfg: &ProtocolConfig, ch: &ChannelRealization, pair: Option<(usize, usize)>) -> Result<Option<f64>> {
    let Some((p, q)) = pair else { return Ok(None) };
    let tx = cfg.quantize(&cfg.tx.steering[p].weights())?;
    let rx = cfg.quantize(&cfg.rx.steering[q].weights())?;
    let h = ChannelResponse::new(ch, &cfg.tx.config, &cfg.rx.config).tap_gains(&tx, &rx)?;
    Ok(Some(10.0 * cfg.link.snr(power_gain(&h)).log10()))
}

fn outcome(cfg: &ProtocolConfig, gains: Vec<f64>, pair: Option<(usize, usize)>) -> TrainingOutcome {
    TrainingOutcome {
        scheme: cfg.scheme,
        best_pair: pair,
        gains,
        correlation: None,
        stage1: None,
        packets_sent: 0,
        training_bits: 0,
        feedback_bits: 0,
        power_traces: Vec::new(),
        snr_db: None,
        warnings: cfg.warnings.clone(),
    }
}

/// Run the configured scheme.
pub fn run(cfg: &ProtocolConfig, ch: &ChannelRealization, seed: u64) -> Result<TrainingOutcome> {
    match cfg.scheme {
        Scheme::ExhaustivePbp => run_exhaustive_pbp(cfg, ch, seed),
        Scheme::MultilevelPbp => run_multilevel_pbp(cfg, ch, seed),
        Scheme::ExhaustiveInpacket => run_exhaustive_inpacket(cfg, ch, seed),
        Scheme::FeedbackInpacket => run_feedback_inpacket(cfg, ch, seed),
        Scheme::ExhaustiveBeamcoding => run_exhaustive_beamcoding(cfg, ch, seed),
        Scheme::FeedbackBeamcoding => run_feedback_beamcoding(cfg, ch, seed),
    }
}

/// Measure every pair of `tx × rx`, one field per pair, in the order
/// `packets` lays them out. Returns the row-major gain table.
fn measure_table(
    obs: &mut Observer,
    tx: &[Vec<Complex64>],
    rx: &[Vec<Complex64>],
    rx_outer: bool,
) -> Vec<f64> {
    let (p_n, q_n) = (tx.len(), rx.len());
    let mut table = vec![0.0; p_n * q_n];
    if rx_outer {
        for q in 0..q_n {
            for p in 0..p_n {
                table[p * q_n + q] = energy(&obs.observe(&tx[p], &rx[q]));
            }
        }
    } else {
        for p in 0..p_n {
            for q in 0..q_n {
                table[p * q_n + q] = energy(&obs.observe(&tx[p], &rx[q]));
            }
        }
    }
    table
}

/// One packet per beam pair.
pub fn run_exhaustive_pbp(cfg: &ProtocolConfig, ch: &ChannelRealization, seed: u64) -> Result<TrainingOutcome> {
    let mut obs = Observer::new(cfg, ch, seed);
    let tx = obs.tx(&cfg.beam_weights(&cfg.tx)?)?;
    let rx = obs.rx(&cfg.beam_weights(&cfg.rx)?)?;
    let table = measure_table(&mut obs, &tx, &rx, false);
    let q_n = rx.len();
    let pair = select(&table, threshold(cfg, obs.variance, obs.taps())).map(|i| (i / q_n, i % q_n));
    let packets = tx.len() * q_n;
    let mut out = outcome(cfg, table.clone(), pair);
    out.packets_sent = packets;
    out.training_bits = packets as u64 * cfg.packet_bits(layout_80211ad(1)?);
    out.power_traces = table.iter().map(|&g| vec![g]).collect();
    out.snr_db = data_snr_db(cfg, ch, pair)?;
    Ok(out)
}

/// Sub-array beam covering a block of fine beams: the first `N/S` elements
/// steered at the block's mean direction cosine.
fn sector_beams(book: &BeamCodebook, sectors: usize) -> Vec<WeightVector> {
    let n = book.config.num_antennas;
    let m = n / sectors;
    let per = book.len() / sectors;
    (0..sectors)
        .map(|s| {
            let c = book.angles[s * per..(s + 1) * per]
                .iter()
                .map(|a| a.to_radians().cos())
                .sum::<f64>()
                / per as f64;
            let mut w = vec![Complex64::new(0.0, 0.0); n];
            let amp = 1.0 / (m as f64).sqrt();
            for (i, x) in w.iter_mut().take(m).enumerate() {
                *x = Complex64::from_polar(amp, -2.0 * std::f64::consts::PI * i as f64 * book.config.spacing * c);
            }
            WeightVector::new(w)
        })
        .collect()
}

/// Sector sweep with wide beams, then an exhaustive fine search inside the
/// winning sector pair.
pub fn run_multilevel_pbp(cfg: &ProtocolConfig, ch: &ChannelRealization, seed: u64) -> Result<TrainingOutcome> {
    let cfg_checked;
    let cfg = if cfg.scheme == Scheme::MultilevelPbp {
        cfg
    } else {
        cfg_checked = ProtocolConfig { scheme: Scheme::MultilevelPbp, ..cfg.clone() }.validated()?;
        &cfg_checked
    };
    let s = cfg.sectors;
    let mut obs = Observer::new(cfg, ch, seed);
    let tx_sec: Vec<WeightVector> =
        sector_beams(&cfg.tx, s).iter().map(|w| cfg.quantize(w)).collect::<Result<_>>()?;
    let rx_sec: Vec<WeightVector> =
        sector_beams(&cfg.rx, s).iter().map(|w| cfg.quantize(w)).collect::<Result<_>>()?;
    let (tx1, rx1) = (obs.tx(&tx_sec)?, obs.rx(&rx_sec)?);
    let level1 = measure_table(&mut obs, &tx1, &rx1, false);
    let thr = threshold(cfg, obs.variance, obs.taps());
    let (p_n, q_n) = (cfg.tx.len(), cfg.rx.len());
    let (bp, bq) = (p_n / s, q_n / s);
    let mut gains = vec![f64::NAN; p_n * q_n];
    let mut traces: Vec<Vec<f64>> = level1.iter().map(|&g| vec![g]).collect();
    let pair = match select(&level1, thr) {
        None => None,
        Some(i) => {
            let (sp, sq) = (i / s, i % s);
            let tx_all = cfg.beam_weights(&cfg.tx)?;
            let rx_all = cfg.beam_weights(&cfg.rx)?;
            let tx = obs.tx(&tx_all[sp * bp..(sp + 1) * bp])?;
            let rx = obs.rx(&rx_all[sq * bq..(sq + 1) * bq])?;
            let level2 = measure_table(&mut obs, &tx, &rx, false);
            for p in 0..bp {
                for q in 0..bq {
                    gains[(sp * bp + p) * q_n + sq * bq + q] = level2[p * bq + q];
                }
            }
            traces.extend(level2.iter().map(|&g| vec![g]));
            select(&level2, thr).map(|j| (sp * bp + j / bq, sq * bq + j % bq))
        }
    };
    let mut out = outcome(cfg, gains, pair);
    out.packets_sent = s * s + bp * bq;
    out.training_bits = out.packets_sent as u64 * cfg.packet_bits(layout_80211ad(1)?);
    out.power_traces = traces;
    out.snr_db = data_snr_db(cfg, ch, pair)?;
    Ok(out)
}

/// Tx sweeps every beam inside one packet; the packet is repeated once per
/// Rx beam.
pub fn run_exhaustive_inpacket(cfg: &ProtocolConfig, ch: &ChannelRealization, seed: u64) -> Result<TrainingOutcome> {
    let mut obs = Observer::new(cfg, ch, seed);
    let tx = obs.tx(&cfg.beam_weights(&cfg.tx)?)?;
    let rx = obs.rx(&cfg.beam_weights(&cfg.rx)?)?;
    let table = measure_table(&mut obs, &tx, &rx, true);
    let (p_n, q_n) = (tx.len(), rx.len());
    let pair = select(&table, threshold(cfg, obs.variance, obs.taps())).map(|i| (i / q_n, i % q_n));
    let mut out = outcome(cfg, table.clone(), pair);
    out.packets_sent = q_n;
    out.training_bits = q_n as u64 * cfg.packet_bits(layout_80211ad(p_n)?);
    out.power_traces = (0..q_n).map(|q| (0..p_n).map(|p| table[p * q_n + q]).collect()).collect();
    out.snr_db = data_snr_db(cfg, ch, pair)?;
    Ok(out)
}

/// Stage 1: Tx sweeps in-packet while Rx listens on all its beams at once.
/// Stage 2: Tx holds the winner and Rx sweeps in-packet.
pub fn run_feedback_inpacket(cfg: &ProtocolConfig, ch: &ChannelRealization, seed: u64) -> Result<TrainingOutcome> {
    let mut obs = Observer::new(cfg, ch, seed);
    let tx = obs.tx(&cfg.beam_weights(&cfg.tx)?)?;
    let rx = obs.rx(&cfg.beam_weights(&cfg.rx)?)?;
    let composite = obs.rx(&[cfg.composite(&cfg.rx)?])?;
    let (p_n, q_n) = (tx.len(), rx.len());
    let thr = threshold(cfg, obs.variance, obs.taps());
    let stage1 = measure_table(&mut obs, &tx, &composite, false);
    let mut gains = vec![f64::NAN; p_n * q_n];
    let mut traces = vec![stage1.clone()];
    let pair = match select(&stage1, thr) {
        None => None,
        Some(p) => {
            let stage2 = measure_table(&mut obs, &tx[p..p + 1], &rx, false);
            gains[p * q_n..(p + 1) * q_n].copy_from_slice(&stage2);
            traces.push(stage2.clone());
            select(&stage2, thr).map(|q| (p, q))
        }
    };
    let mut out = outcome(cfg, gains, pair);
    out.stage1 = Some(stage1);
    out.packets_sent = 2;
    out.training_bits = cfg.packet_bits(layout_80211ad(p_n)?) + cfg.packet_bits(layout_80211ad(q_n)?);
    out.feedback_bits = cfg.feedback_bits;
    out.power_traces = traces;
    out.snr_db = data_snr_db(cfg, ch, pair)?;
    Ok(out)
}

/// Received CE estimates for every field (`fields[t][tap]`) with the given
/// per-field Tx and Rx factors.
fn coded_packet(obs: &mut Observer, tx: &[Vec<Complex64>], rx: &[Vec<Complex64>]) -> Vec<Vec<Complex64>> {
    let t_n = tx.len().max(rx.len());
    (0..t_n)
        .map(|t| {
            let a = &tx[t.min(tx.len() - 1)];
            let b = &rx[t.min(rx.len() - 1)];
            obs.observe(a, b)
        })
        .collect()
}

/// Per-code correlation energy in gain units and the tap-0 correlations.
fn decode_packet(fields: &[Vec<Complex64>], codes: &[SignatureCode]) -> (Vec<f64>, Vec<Complex64>) {
    let t_n = fields.len();
    let taps = fields[0].len();
    let scale = crate::coding::correlation_scale(t_n, codes.len());
    let mut energies = Vec::with_capacity(codes.len());
    let mut first = Vec::with_capacity(codes.len());
    for code in codes {
        let mut e = 0.0;
        for d in 0..taps {
            let r: Complex64 = fields.iter().zip(&code.chips).map(|(f, &s)| f[d] * f64::from(s)).sum();
            if d == 0 {
                first.push(r);
            }
            e += r.norm_sqr();
        }
        energies.push(e / (scale * scale));
    }
    (energies, first)
}

/// Noise variance of a decoded correlation converted to gain units.
fn decoded_variance(variance: f64, chips: usize, beams: usize) -> f64 {
    let scale = crate::coding::correlation_scale(chips, beams);
    variance * chips as f64 / (scale * scale)
}

/// Every Tx beam is coded into every field; Rx holds one beam per packet.
pub fn run_exhaustive_beamcoding(cfg: &ProtocolConfig, ch: &ChannelRealization, seed: u64) -> Result<TrainingOutcome> {
    let mut obs = Observer::new(cfg, ch, seed);
    let (fields, codes) = cfg.coded_weights(&cfg.tx)?;
    let tx = obs.tx(&fields)?;
    let rx = obs.rx(&cfg.beam_weights(&cfg.rx)?)?;
    let (p_n, q_n, t_n) = (cfg.tx.len(), rx.len(), fields.len());
    let mut gains = vec![0.0; p_n * q_n];
    let mut corr = CorrelationMatrix::zeros(p_n, q_n);
    let mut traces = Vec::with_capacity(q_n);
    for q in 0..q_n {
        let packet = coded_packet(&mut obs, &tx, std::slice::from_ref(&rx[q]));
        traces.push(packet.iter().map(|f| energy(f)).collect());
        let (e, first) = decode_packet(&packet, &codes);
        for p in 0..p_n {
            gains[p * q_n + q] = e[p];
            corr.set(p, q, first[p]);
        }
    }
    let thr = threshold(cfg, decoded_variance(obs.variance, t_n, p_n), obs.taps());
    let pair = select(&gains, thr).map(|i| (i / q_n, i % q_n));
    let mut out = outcome(cfg, gains, pair);
    out.correlation = Some(corr);
    out.packets_sent = q_n;
    out.training_bits = q_n as u64 * cfg.packet_bits(layout_beam_coding(p_n, cfg.tx.config.num_antennas)?);
    out.power_traces = traces;
    out.snr_db = data_snr_db(cfg, ch, pair)?;
    Ok(out)
}

/// Stage 1: Tx beams coded while Rx listens on its composite. Stage 2: Tx
/// holds the winner and the Rx beams are coded on the receive side.
pub fn run_feedback_beamcoding(cfg: &ProtocolConfig, ch: &ChannelRealization, seed: u64) -> Result<TrainingOutcome> {
    let mut obs = Observer::new(cfg, ch, seed);
    let (tx_fields, tx_codes) = cfg.coded_weights(&cfg.tx)?;
    let (rx_fields, rx_codes) = cfg.coded_weights(&cfg.rx)?;
    let tx_coded = obs.tx(&tx_fields)?;
    let rx_coded = obs.rx(&rx_fields)?;
    let composite = obs.rx(&[cfg.composite(&cfg.rx)?])?;
    let (p_n, q_n) = (cfg.tx.len(), cfg.rx.len());
    let taps = obs.taps();

    let packet1 = coded_packet(&mut obs, &tx_coded, &composite);
    let mut traces = vec![packet1.iter().map(|f| energy(f)).collect::<Vec<_>>()];
    let (stage1, first1) = decode_packet(&packet1, &tx_codes);
    let thr1 = threshold(cfg, decoded_variance(obs.variance, tx_fields.len(), p_n), taps);
    let mut gains = vec![f64::NAN; p_n * q_n];
    let mut corr = CorrelationMatrix::zeros(p_n, q_n);
    for (p, r) in first1.iter().enumerate() {
        corr.set(p, 0, *r);
    }
    let pair = match select(&stage1, thr1) {
        None => None,
        Some(p) => {
            let tx_fixed = obs.tx(&[cfg.quantize(&cfg.tx.steering[p].weights())?])?;
            let packet2 = coded_packet(&mut obs, &tx_fixed, &rx_coded);
            traces.push(packet2.iter().map(|f| energy(f)).collect());
            let (stage2, first2) = decode_packet(&packet2, &rx_codes);
            for q in 0..q_n {
                gains[p * q_n + q] = stage2[q];
                corr.set(p, q, first2[q]);
            }
            let thr2 = threshold(cfg, decoded_variance(obs.variance, rx_fields.len(), q_n), taps);
            select(&stage2, thr2).map(|q| (p, q))
        }
    };
    let mut out = outcome(cfg, gains, pair);
    out.correlation = Some(corr);
    out.stage1 = Some(stage1);
    out.packets_sent = 2;
    out.training_bits = cfg.packet_bits(layout_beam_coding(p_n, cfg.tx.config.num_antennas)?)
        + cfg.packet_bits(layout_beam_coding(q_n, cfg.rx.config.num_antennas)?);
    out.feedback_bits = cfg.feedback_bits;
    out.power_traces = traces;
    out.snr_db = data_snr_db(cfg, ch, pair)?;
    Ok(out)
}

/// Equal-power superposition of a codebook's beams.
pub fn composite_weights(book: &BeamCodebook) -> Result<WeightVector> {
    superpose_beams(&book.steering, &vec![1; book.len()])
}

/// Single-antenna receiver used by the power-ratio experiments.
pub fn omni_receiver() -> (ArrayConfig, WeightVector) {
    (
        ArrayConfig::ula(1).expect("one antenna is a valid array"),
        WeightVector::new(vec![Complex64::new(1.0, 0.0)]),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::dft_codebook;
    use crate::channel::{sample_channel, toy_channel, toy_channel_with_delay, ChannelConfig, Ray};

    fn toy(scheme: Scheme) -> ProtocolConfig {
        ProtocolConfig::toy(scheme).unwrap()
    }

    #[test]
    fn exhaustive_pbp_on_toy() {
        let o = run_exhaustive_pbp(&toy(Scheme::ExhaustivePbp), &toy_channel(0.5).unwrap(), 0).unwrap();
        assert_eq!(o.best_pair, Some((1, 2)));
        assert_eq!(o.packets_sent, 16);
        assert!((o.gain(1, 2, 4) - 1.0).abs() < 1e-12);
        assert!((o.gain(0, 3, 4) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn inpacket_on_toy() {
        let cfg = toy(Scheme::ExhaustiveInpacket);
        let ch = toy_channel(0.5).unwrap();
        let o = run_exhaustive_inpacket(&cfg, &ch, 0).unwrap();
        assert_eq!(o.best_pair, Some((1, 2)));
        assert_eq!(o.packets_sent, 4);
        let pbp = run_exhaustive_pbp(&toy(Scheme::ExhaustivePbp), &ch, 0).unwrap();
        for (a, b) in o.gains.iter().zip(&pbp.gains) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn beam_coding_on_toy() {
        let a = 0.5;
        let o = run_exhaustive_beamcoding(&toy(Scheme::ExhaustiveBeamcoding), &toy_channel(a).unwrap(), 0).unwrap();
        let r = o.correlation.as_ref().unwrap();
        assert!((r.get(1, 2) - Complex64::new(2.0, 0.0)).norm() < 1e-9);
        assert!((r.get(0, 3) - Complex64::new(2.0 * a, 0.0)).norm() < 1e-9);
        assert_eq!(o.best_pair, Some((1, 2)));
        assert_eq!(o.packets_sent, 4);
    }

    #[test]
    fn feedback_on_toy() {
        let a = 0.5;
        let ch = toy_channel(a).unwrap();
        let o = run_feedback_inpacket(&toy(Scheme::FeedbackInpacket), &ch, 0).unwrap();
        let y = o.stage1.as_ref().unwrap();
        let want = [0.25 * a * a, 0.25, 0.0, 0.0];
        for (g, w) in y.iter().zip(want) {
            assert!((g - w).abs() < 1e-12, "{y:?}");
        }
        assert_eq!(o.best_pair, Some((1, 2)));
        assert_eq!(o.packets_sent, 2);
        assert_eq!(o.feedback_bits, 512);
        let b = run_feedback_beamcoding(&toy(Scheme::FeedbackBeamcoding), &ch, 0).unwrap();
        assert_eq!(b.best_pair, Some((1, 2)));
        assert_eq!(b.packets_sent, 2);
    }

    #[test]
    fn delayed_nlos_ray_does_not_change_selection() {
        let ch = toy_channel_with_delay(0.5, 3).unwrap();
        for s in Scheme::ALL {
            let o = run(&toy(s), &ch, 0).unwrap();
            assert_eq!(o.best_pair, Some((1, 2)), "{s}");
        }
    }

    #[test]
    fn multilevel_on_toy_matches_exhaustive() {
        let o = run_multilevel_pbp(&toy(Scheme::MultilevelPbp), &toy_channel(0.5).unwrap(), 0).unwrap();
        assert_eq!(o.best_pair, Some((1, 2)));
        assert_eq!(o.packets_sent, 2 * 2 + 2 * 2);
    }

    #[test]
    fn multilevel_single_sector_is_exhaustive() {
        let arr = ArrayConfig::ula(16).unwrap();
        let book = dft_codebook(&arr).unwrap();
        let mut cfg = ProtocolConfig::new(book.clone(), book.clone(), Scheme::MultilevelPbp, NoiseModel::Noiseless).unwrap();
        cfg.sectors = 1;
        let cfg = cfg.validated().unwrap();
        let pbp = ProtocolConfig::new(book.clone(), book, Scheme::ExhaustivePbp, NoiseModel::Noiseless).unwrap();
        for seed in 0..20 {
            let ch = sample_channel(&ChannelConfig::default(), seed).unwrap();
            let m = run_multilevel_pbp(&cfg, &ch, seed).unwrap();
            assert_eq!(m.best_pair, run_exhaustive_pbp(&pbp, &ch, seed).unwrap().best_pair);
            assert_eq!(m.packets_sent, 1 + 256);
        }
    }

    #[test]
    fn single_beam_codebooks() {
        let arr = ArrayConfig::ula(4).unwrap();
        let one = BeamCodebook::from_angles(&arr, &[90.0]).unwrap();
        let four = dft_codebook(&arr).unwrap();
        let ch = toy_channel(0.5).unwrap();
        let pbp = ProtocolConfig::new(one.clone(), one.clone(), Scheme::ExhaustivePbp, NoiseModel::Noiseless).unwrap();
        let o = run(&pbp, &ch, 0).unwrap();
        assert_eq!((o.best_pair, o.packets_sent), (Some((0, 0)), 1));
        // P = 1: one column of the gain table per Rx beam
        for s in [Scheme::ExhaustiveInpacket, Scheme::ExhaustiveBeamcoding, Scheme::FeedbackInpacket] {
            let cfg = ProtocolConfig::new(one.clone(), four.clone(), s, NoiseModel::Noiseless).unwrap();
            let o = run(&cfg, &ch, 0).unwrap();
            let direct = ProtocolConfig::new(one.clone(), four.clone(), Scheme::ExhaustivePbp, NoiseModel::Noiseless).unwrap();
            assert_eq!(o.best_pair, run(&direct, &ch, 0).unwrap().best_pair, "{s}");
        }
    }

    #[test]
    fn zero_channel_fails_detection() {
        let ch = ChannelRealization { rays: vec![], los_present: false, seed: None, reference_gain: 1.0 };
        for s in Scheme::ALL {
            let o = run(&toy(s), &ch, 0).unwrap();
            assert_eq!(o.best_pair, None, "{s}");
            assert_eq!(o.snr_db, None);
        }
    }

    #[test]
    fn packet_counts_and_bit_ordering() {
        let arr = ArrayConfig::ula(16).unwrap();
        let book = dft_codebook(&arr).unwrap();
        let ch = sample_channel(&ChannelConfig::default(), 3).unwrap();
        let get = |s| {
            let cfg = ProtocolConfig::new(book.clone(), book.clone(), s, NoiseModel::Noiseless).unwrap();
            run(&cfg, &ch, 0).unwrap()
        };
        assert_eq!(get(Scheme::ExhaustivePbp).packets_sent, 256);
        assert_eq!(get(Scheme::MultilevelPbp).packets_sent, 32);
        assert_eq!(get(Scheme::ExhaustiveInpacket).packets_sent, 16);
        assert_eq!(get(Scheme::FeedbackInpacket).packets_sent, 2);
        assert_eq!(get(Scheme::FeedbackBeamcoding).packets_sent, 2);
        let ip = get(Scheme::ExhaustiveInpacket).training_bits;
        let bc = get(Scheme::ExhaustiveBeamcoding).training_bits;
        assert!(bc < ip);
        assert_eq!(ip - bc, 16 * 16 * 3840);
        assert!(get(Scheme::FeedbackBeamcoding).training_bits < get(Scheme::FeedbackInpacket).training_bits);
    }

    #[test]
    fn noiseless_pbp_matches_brute_force() {
        let arr = ArrayConfig::ula(16).unwrap();
        let book = dft_codebook(&arr).unwrap();
        let cfg = ProtocolConfig::new(book.clone(), book.clone(), Scheme::ExhaustivePbp, NoiseModel::Noiseless).unwrap();
        for seed in 0..30 {
            let ch = sample_channel(&ChannelConfig::default(), seed).unwrap();
            // oracle: sum rays by hand
            let mut best = (0, 0, -1.0);
            for p in 0..16 {
                for q in 0..16 {
                    let mut taps = vec![Complex64::new(0.0, 0.0); ch.num_taps()];
                    for Ray { aod_deg, aoa_deg, gain, tap } in &ch.rays {
                        let t = crate::array::array_factor(&book.steering[p].weights(), *aod_deg, &arr).unwrap();
                        let r = crate::array::array_factor(&book.steering[q].weights(), *aoa_deg, &arr).unwrap();
                        taps[*tap] += gain * t * r;
                    }
                    let e = power_gain(&taps);
                    if e > best.2 {
                        best = (p, q, e);
                    }
                }
            }
            assert_eq!(run(&cfg, &ch, 0).unwrap().best_pair, Some((best.0, best.1)));
        }
    }

    #[test]
    fn near_equal_paths_split_under_noise() {
        let cfg = ProtocolConfig { noise: NoiseModel::ObservationStd(0.02), ..toy(Scheme::FeedbackInpacket) }
            .validated()
            .unwrap();
        let ch = toy_channel(0.999).unwrap();
        let runs = 2000;
        let los = (0..runs)
            .filter(|&s| run(&cfg, &ch, s).unwrap().best_pair.map(|p| p.0) == Some(1))
            .count();
        let frac = los as f64 / runs as f64;
        assert!((0.4..=0.6).contains(&frac), "{frac}");
    }

    #[test]
    fn noise_never_helps() {
        let ch = toy_channel(0.9).unwrap();
        let runs = 10_000u64;
        let mut last = 1.0;
        for std in [0.0, 0.05, 0.1, 0.2, 0.4] {
            let cfg = ProtocolConfig { noise: NoiseModel::ObservationStd(std), ..toy(Scheme::ExhaustivePbp) }
                .validated()
                .unwrap();
            let hits = (0..runs).filter(|&s| run(&cfg, &ch, s).unwrap().best_pair == Some((1, 2))).count();
            let p = hits as f64 / runs as f64;
            let se = (p * (1.0 - p) / runs as f64).sqrt().max(1e-3);
            assert!(p <= last + 3.0 * se, "std {std}: {p} > {last}");
            last = p;
        }
    }

    #[test]
    fn beam_coding_rejects_oversized_group() {
        let arr = ArrayConfig::ula(4).unwrap();
        let book = crate::array::dft_codebook_shifted(&arr, 0.0).unwrap();
        let big = BeamCodebook::from_angles(&arr, &[50.0, 70.0, 90.0, 110.0, 130.0]).unwrap();
        assert!(matches!(
            ProtocolConfig::new(big, book, Scheme::ExhaustiveBeamcoding, NoiseModel::Noiseless),
            Err(Error::CapacityExceeded { requested: 5, limit: 4 })
        ));
    }

    #[test]
    fn non_orthogonal_group_warns() {
        let arr = ArrayConfig::ula(4).unwrap();
        let skew = BeamCodebook::from_angles(&arr, &[80.0, 100.0]).unwrap();
        let cfg = ProtocolConfig::new(skew.clone(), skew, Scheme::ExhaustiveBeamcoding, NoiseModel::Noiseless).unwrap();
        assert_eq!(cfg.warnings.len(), 1);
        let o = run(&cfg, &toy_channel(0.5).unwrap(), 0).unwrap();
        assert_eq!(o.warnings.len(), 1);
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in Scheme::ALL {
            assert_eq!(s.name().parse::<Scheme>().unwrap(), s);
        }
        assert!("sweep".parse::<Scheme>().is_err());
    }

    #[test]
    fn runs_are_reproducible() {
        let cfg = ProtocolConfig { noise: NoiseModel::ObservationStd(0.1), ..toy(Scheme::ExhaustiveBeamcoding) };
        let ch = toy_channel(0.7).unwrap();
        assert_eq!(run(&cfg, &ch, 9).unwrap(), run(&cfg, &ch, 9).unwrap());
    }
}
