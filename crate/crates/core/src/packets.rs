//! Training packets at field granularity: preamble, header, AGC subfields
//! and TRN fields, with bit accounting and the weights each field is sent on.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::array::{ArrayConfig, WeightVector};
use crate::channel::{power_gain, ChannelRealization, ChannelResponse};
use crate::coding::{golay_pair, GolayPair};
use crate::error::{Error, Result};

pub const AGC_SUBFIELD_BITS: u64 = 320;
pub const AGC_SUBFIELDS_PER_BEAM: usize = 4;
pub const DELAY_SUBFIELD_BITS: u64 = 640;
pub const DELAY_SUBFIELDS_PER_BEAM: u64 = 4;
pub const CE_BITS: u64 = 1024;
pub const DEFAULT_PREAMBLE_BITS: u64 = 2176;
pub const DEFAULT_HEADER_BITS: u64 = 1024;

/// Golay length (log2) of each preamble segment.
const PREAMBLE_GOLAY_LOG2: u32 = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutKind {
    Ieee80211ad,
    BeamCoding,
}

/// Which weights the transmitter applies during a section.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightRef {
    /// Single trained beam.
    Beam(usize),
    /// Field `t` of the coded schedule.
    Coded(usize),
    /// Equal-power superposition of all trained beams.
    Composite,
    /// Every coded field in turn, one preamble segment each.
    CodedCycle,
}

impl WeightRef {
    pub fn label(&self) -> String {
        match self {
            WeightRef::Beam(i) => format!("beam{i}"),
            WeightRef::Coded(t) => format!("coded{t}"),
            WeightRef::Composite => "composite".into(),
            WeightRef::CodedCycle => "coded_cycle".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrnField {
    pub ce_bits: u64,
    pub delay_subfield_bits: u64,
    pub weight_ref: WeightRef,
}

impl TrnField {
    pub fn bits(&self) -> u64 {
        self.ce_bits + self.delay_subfield_bits
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PacketLayout {
    pub kind: LayoutKind,
    pub num_beams: usize,
    pub preamble_bits: u64,
    pub header_bits: u64,
    pub preamble_weights: WeightRef,
    pub agc_subfields: usize,
    pub agc_subfield_bits: u64,
    pub trn_fields: Vec<TrnField>,
}

impl PacketLayout {
    pub fn with_overheads(mut self, preamble_bits: u64, header_bits: u64) -> Self {
        self.preamble_bits = preamble_bits;
        self.header_bits = header_bits;
        self
    }

    pub fn agc_bits(&self) -> u64 {
        self.agc_subfields as u64 * self.agc_subfield_bits
    }

    /// AGC plus TRN bits.
    pub fn training_bits(&self) -> u64 {
        self.agc_bits() + self.trn_fields.iter().map(TrnField::bits).sum::<u64>()
    }

    pub fn total_bits(&self) -> u64 {
        self.preamble_bits + self.header_bits + self.training_bits()
    }

    /// Training-section bits per trained beam (exact when `num_beams` divides).
    pub fn bits_per_beam(&self) -> u64 {
        self.training_bits() / self.num_beams as u64
    }

    /// Flat section list in transmission order: (name, bits, weight label).
    pub fn sections(&self) -> Vec<LayoutSection> {
        let mut out = vec![
            LayoutSection::new("preamble", self.preamble_bits, self.preamble_weights.label()),
            LayoutSection::new("header", self.header_bits, self.preamble_weights.label()),
        ];
        for i in 0..self.agc_subfields {
            let beam = i / AGC_SUBFIELDS_PER_BEAM;
            out.push(LayoutSection::new(&format!("agc{i}"), self.agc_subfield_bits, WeightRef::Beam(beam).label()));
        }
        for (i, f) in self.trn_fields.iter().enumerate() {
            if f.delay_subfield_bits > 0 {
                out.push(LayoutSection::new(&format!("trn{i}.delay"), f.delay_subfield_bits, f.weight_ref.label()));
            }
            out.push(LayoutSection::new(&format!("trn{i}.ce"), f.ce_bits, f.weight_ref.label()));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.sections()).expect("plain data serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutSection {
    pub field: String,
    pub bits: u64,
    pub weights: String,
}

impl LayoutSection {
    fn new(field: &str, bits: u64, weights: String) -> Self {
        Self { field: field.to_string(), bits, weights }
    }
}

/// Per-beam sweep: every beam gets four AGC subfields and a TRN field with
/// four delay subfields and a CE subfield.
pub fn layout_80211ad(num_beams: usize) -> Result<PacketLayout> {
    if num_beams == 0 {
        return Err(Error::invalid("a training packet needs at least one beam"));
    }
    let trn_fields = (0..num_beams)
        .map(|p| TrnField {
            ce_bits: CE_BITS,
            delay_subfield_bits: DELAY_SUBFIELDS_PER_BEAM * DELAY_SUBFIELD_BITS,
            weight_ref: WeightRef::Beam(p),
        })
        .collect();
    Ok(PacketLayout {
        kind: LayoutKind::Ieee80211ad,
        num_beams,
        preamble_bits: DEFAULT_PREAMBLE_BITS,
        header_bits: DEFAULT_HEADER_BITS,
        preamble_weights: WeightRef::Composite,
        agc_subfields: AGC_SUBFIELDS_PER_BEAM * num_beams,
        agc_subfield_bits: AGC_SUBFIELD_BITS,
        trn_fields,
    })
}

/// Coded training section: `next_pow2(K)` CE fields, all beams in every
/// field, no AGC or delay subfields. `capacity` is the number of mutually
/// orthogonal beams available.
pub fn layout_beam_coding(num_beams: usize, capacity: usize) -> Result<PacketLayout> {
    if num_beams == 0 {
        return Err(Error::invalid("a training packet needs at least one beam"));
    }
    if num_beams > capacity {
        return Err(Error::CapacityExceeded { requested: num_beams, limit: capacity });
    }
    let trn_fields = (0..num_beams.next_power_of_two())
        .map(|t| TrnField { ce_bits: CE_BITS, delay_subfield_bits: 0, weight_ref: WeightRef::Coded(t) })
        .collect();
    Ok(PacketLayout {
        kind: LayoutKind::BeamCoding,
        num_beams,
        preamble_bits: DEFAULT_PREAMBLE_BITS,
        header_bits: DEFAULT_HEADER_BITS,
        preamble_weights: WeightRef::CodedCycle,
        agc_subfields: 0,
        agc_subfield_bits: AGC_SUBFIELD_BITS,
        trn_fields,
    })
}

/// Transmit weights a layout can refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct PacketWeights {
    pub beams: Vec<WeightVector>,
    pub coded: Vec<WeightVector>,
    pub composite: WeightVector,
}

impl PacketWeights {
    pub fn resolve(&self, r: WeightRef) -> Result<Vec<&WeightVector>> {
        let missing = || Error::invalid(format!("layout refers to {} which has no weights", r.label()));
        Ok(match r {
            WeightRef::Beam(i) => vec![self.beams.get(i).ok_or_else(missing)?],
            WeightRef::Coded(t) => vec![self.coded.get(t).ok_or_else(missing)?],
            WeightRef::Composite => vec![&self.composite],
            WeightRef::CodedCycle => {
                if self.coded.is_empty() {
                    return Err(missing());
                }
                self.coded.iter().collect()
            }
        })
    }
}

/// Received power per field, with the AGC gain fixed from the preamble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerTrace {
    pub preamble: f64,
    /// Normalization applied to every field; zero when the preamble is silent.
    pub agc_gain: f64,
    pub fields: Vec<f64>,
}

impl PowerTrace {
    /// Preamble first, then each TRN field.
    pub fn sequence(&self) -> Vec<f64> {
        std::iter::once(self.preamble).chain(self.fields.iter().copied()).collect()
    }

    /// Field powers after the fixed AGC gain.
    pub fn normalized(&self) -> Vec<f64> {
        self.fields.iter().map(|p| p * self.agc_gain).collect()
    }
}

/// Link geometry shared by trace and preamble computations.
pub struct Link<'a> {
    pub tx: &'a ArrayConfig,
    pub rx: &'a ArrayConfig,
    pub rx_weights: &'a WeightVector,
    pub channel: &'a ChannelRealization,
}

impl Link<'_> {
    fn response(&self) -> ChannelResponse {
        ChannelResponse::new(self.channel, self.tx, self.rx)
    }
}

/// Mean received power of every TRN field and of the preamble. A CE field
/// spreads the Golay pair over all taps, so its mean power is `Σ|h|²`.
pub fn power_trace(layout: &PacketLayout, weights: &PacketWeights, link: &Link) -> Result<PowerTrace> {
    let resp = link.response();
    let rx = resp.rx_factors(link.rx_weights)?;
    let power_of = |w: &WeightVector| -> Result<f64> { Ok(power_gain(&resp.combine(&resp.tx_factors(w)?, &rx))) };
    let pre = weights.resolve(layout.preamble_weights)?;
    let preamble = pre.iter().map(|w| power_of(w)).sum::<Result<f64>>()? / pre.len() as f64;
    let fields = layout
        .trn_fields
        .iter()
        .map(|f| {
            let ws = weights.resolve(f.weight_ref)?;
            power_of(ws[0])
        })
        .collect::<Result<Vec<_>>>()?;
    let agc_gain = if preamble > 0.0 { 1.0 / preamble } else { 0.0 };
    Ok(PowerTrace { preamble, agc_gain, fields })
}

fn preamble_golay() -> GolayPair {
    golay_pair(PREAMBLE_GOLAY_LOG2)
}

/// Cyclic convolution of `seq` with the taps.
fn cyclic(seq: &[i8], taps: &[Complex64]) -> Vec<Complex64> {
    let l = seq.len();
    (0..l)
        .map(|n| {
            taps.iter()
                .enumerate()
                .map(|(d, h)| h * f64::from(seq[(n + l - d % l) % l]))
                .sum()
        })
        .collect()
}

/// Received preamble samples (noiseless). Each segment is a Golay pair sent
/// cyclically on one set of preamble weights; the beam-coding preamble sends
/// one segment per coded field.
pub fn preamble_samples(layout: &PacketLayout, weights: &PacketWeights, link: &Link) -> Result<Vec<Complex64>> {
    let resp = link.response();
    let rx = resp.rx_factors(link.rx_weights)?;
    let golay = preamble_golay();
    let mut out = Vec::new();
    for w in weights.resolve(layout.preamble_weights)? {
        let taps = resp.combine(&resp.tx_factors(w)?, &rx);
        out.extend(cyclic(&golay.a, &taps));
        out.extend(cyclic(&golay.b, &taps));
    }
    Ok(out)
}
