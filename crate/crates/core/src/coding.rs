//! Beam signatures and their receiver-side separation.
//!
//! Each of `K` simultaneously steered beams is tagged with a ±1 Walsh code of
//! length `T`. CE field `t` of a training packet uses the weights
//!
//! ```text
//! w[t] = (1/√K) Σ_p s_p[t] β(φ_p)
//! ```
//!
//! and a receiver listening on beam `q` recovers `r(p,q) = Σ_t s_p[t] y_q[t]`.
//! For a noiseless channel with per-pair gain `g(p,q)` this equals
//! `(T/√K)·g(p,q)`; see [`correlation_scale`].

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::array::{self, BeamCodebook, WeightVector};
use crate::error::{Error, Result};

/// Default Golay length: one 512+512 pair fills a 1024-bit CE field.
pub const DEFAULT_CE_LOG2: u32 = 9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignatureCode {
    pub beam_index: usize,
    pub chips: Vec<i8>,
}

impl SignatureCode {
    pub fn len(&self) -> usize {
        self.chips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chips.is_empty()
    }

    pub fn dot(&self, other: &SignatureCode) -> i64 {
        self.chips
            .iter()
            .zip(&other.chips)
            .map(|(&a, &b)| i64::from(a) * i64::from(b))
            .sum()
    }
}

/// Rows of the Sylvester Hadamard matrix of order `2^order_log2`.
pub fn walsh_codes(order_log2: u32) -> Vec<SignatureCode> {
    let mut rows: Vec<Vec<i8>> = vec![vec![1]];
    for _ in 0..order_log2 {
        let mut next = Vec::with_capacity(rows.len() * 2);
        for r in &rows {
            next.push(r.iter().chain(r).copied().collect());
        }
        for r in &rows {
            next.push(r.iter().copied().chain(r.iter().map(|&c| -c)).collect());
        }
        rows = next;
    }
    rows.into_iter()
        .enumerate()
        .map(|(beam_index, chips)| SignatureCode { beam_index, chips })
        .collect()
}

/// First `k` Walsh rows of the smallest order `T ≥ k`.
pub fn walsh_codes_for(k: usize) -> Result<Vec<SignatureCode>> {
    if k == 0 {
        return Err(Error::Empty("beam set"));
    }
    let order = k.next_power_of_two().trailing_zeros();
    Ok(walsh_codes(order).into_iter().take(k).collect())
}

/// Pair codes `s_p ⊗ s_q` for jointly coding Tx and Rx beams. Entry
/// `p·Q + q` belongs to Tx beam `p` and Rx beam `q`; chip `t_tx·T_rx + t_rx`
/// is `s_p[t_tx]·s_q[t_rx]`.
pub fn kronecker_codes(tx: &[SignatureCode], rx: &[SignatureCode]) -> Vec<SignatureCode> {
    let q_count = rx.len();
    let mut out = Vec::with_capacity(tx.len() * q_count);
    for (p, sp) in tx.iter().enumerate() {
        for (q, sq) in rx.iter().enumerate() {
            let chips = sp
                .chips
                .iter()
                .flat_map(|&a| sq.chips.iter().map(move |&b| a * b))
                .collect();
            out.push(SignatureCode { beam_index: p * q_count + q, chips });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GolayPair {
    pub a: Vec<i8>,
    pub b: Vec<i8>,
}

impl GolayPair {
    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }
}

/// Recursive construction `a' = a‖b`, `b' = a‖(-b)` from `a = b = [1]`.
pub fn golay_pair(length_log2: u32) -> GolayPair {
    let mut a = vec![1i8];
    let mut b = vec![1i8];
    for _ in 0..length_log2 {
        let na: Vec<i8> = a.iter().chain(&b).copied().collect();
        let nb: Vec<i8> = a.iter().copied().chain(b.iter().map(|&x| -x)).collect();
        a = na;
        b = nb;
    }
    GolayPair { a, b }
}

/// Aperiodic autocorrelation at lags `0..len`.
pub fn aperiodic_autocorrelation(seq: &[i8]) -> Vec<i64> {
    (0..seq.len())
        .map(|lag| {
            seq.iter()
                .zip(&seq[lag..])
                .map(|(&x, &y)| i64::from(x) * i64::from(y))
                .sum()
        })
        .collect()
}

/// Per-field weights of a coded training section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodedWeightSchedule {
    pub fields: Vec<WeightVector>,
    pub beams: BeamCodebook,
    pub codes: Vec<SignatureCode>,
    /// Soft diagnostics, e.g. a non-orthogonal beam group.
    pub warnings: Vec<String>,
}

impl CodedWeightSchedule {
    pub fn num_fields(&self) -> usize {
        self.fields.len()
    }

    /// Scale relating decoded correlations to per-beam gains.
    pub fn scale(&self) -> f64 {
        correlation_scale(self.num_fields(), self.beams.len())
    }
}

/// `r(p,q) = scale · g(p,q)` for `T` chips and `K` coded beams.
pub fn correlation_scale(chips: usize, beams: usize) -> f64 {
    chips as f64 / (beams as f64).sqrt()
}

pub fn build_schedule(beams: &BeamCodebook, codes: &[SignatureCode]) -> Result<CodedWeightSchedule> {
    let k = beams.len();
    if k == 0 {
        return Err(Error::Empty("beam set"));
    }
    array::check_len(k, codes.len())?;
    let t = codes[0].len();
    if t < k {
        return Err(Error::invalid(format!("{t} chips cannot separate {k} beams")));
    }
    for c in codes {
        array::check_len(t, c.len())?;
    }
    let mut warnings = Vec::new();
    if !beams.is_orthogonal() {
        warnings.push(format!(
            "coded group of {k} beams is not mutually orthogonal; field power will vary with the code"
        ));
    }
    let fields = (0..t)
        .map(|field| {
            let signs: Vec<i8> = codes.iter().map(|c| c.chips[field]).collect();
            array::superpose_beams(&beams.steering, &signs)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CodedWeightSchedule { fields, beams: beams.clone(), codes: codes.to_vec(), warnings })
}

/// `P × Q` correlation table, row-major in `p`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub tx_beams: usize,
    pub rx_beams: usize,
    pub data: Vec<Complex64>,
}

impl CorrelationMatrix {
    pub fn zeros(tx_beams: usize, rx_beams: usize) -> Self {
        Self { tx_beams, rx_beams, data: vec![Complex64::new(0.0, 0.0); tx_beams * rx_beams] }
    }

    pub fn get(&self, p: usize, q: usize) -> Complex64 {
        self.data[p * self.rx_beams + q]
    }

    pub fn set(&mut self, p: usize, q: usize, v: Complex64) {
        self.data[p * self.rx_beams + q] = v;
    }
}

/// Correlate what Rx beam `q` heard over `T` fields (`received[q][t]`)
/// against every Tx signature.
pub fn decode_correlations(received: &[Vec<Complex64>], codes: &[SignatureCode]) -> Result<CorrelationMatrix> {
    let mut out = CorrelationMatrix::zeros(codes.len(), received.len());
    for (q, row) in received.iter().enumerate() {
        for (p, code) in codes.iter().enumerate() {
            out.set(p, q, correlate(row, code)?);
        }
    }
    Ok(out)
}

pub(crate) fn correlate(samples: &[Complex64], code: &SignatureCode) -> Result<Complex64> {
    array::check_len(code.len(), samples.len())?;
    Ok(samples
        .iter()
        .zip(&code.chips)
        .map(|(y, &s)| y * f64::from(s))
        .sum())
}

/// A CE field on the air: Golay `a`, a silent guard, Golay `b`, another guard.
/// Channels up to `guard + 1` taps long are estimated without inter-tap
/// leakage because the two autocorrelations cancel off the main lag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CeWaveform {
    pub golay: GolayPair,
    pub guard: usize,
}

impl CeWaveform {
    pub fn new(golay: GolayPair, guard: usize) -> Self {
        Self { golay, guard }
    }

    pub fn num_taps(&self) -> usize {
        self.guard + 1
    }

    /// Samples per field.
    pub fn field_len(&self) -> usize {
        2 * (self.golay.len() + self.guard)
    }

    /// Received field through a tapped delay line `taps` (noiseless).
    pub fn transmit(&self, taps: &[Complex64]) -> Result<Vec<Complex64>> {
        if taps.len() > self.num_taps() {
            return Err(Error::invalid(format!(
                "{} taps exceed the {}-tap guard",
                taps.len(),
                self.num_taps()
            )));
        }
        let l = self.golay.len();
        let seg = l + self.guard;
        let mut out = vec![Complex64::new(0.0, 0.0); 2 * seg];
        for (offset, seq) in [(0, &self.golay.a), (seg, &self.golay.b)] {
            for (i, &chip) in seq.iter().enumerate() {
                for (d, h) in taps.iter().enumerate() {
                    out[offset + i + d] += h * f64::from(chip);
                }
            }
        }
        Ok(out)
    }

    /// Tap estimates `ĥ_d = (Σ y_a[n+d]a[n] + Σ y_b[n+d]b[n]) / 2L`.
    pub fn estimate_taps(&self, field: &[Complex64]) -> Result<Vec<Complex64>> {
        if field.len() < self.field_len() {
            return Err(Error::invalid(format!(
                "field of {} samples is shorter than the {}-sample CE sequence",
                field.len(),
                self.field_len()
            )));
        }
        let l = self.golay.len();
        let seg = l + self.guard;
        let norm = 1.0 / (2 * l) as f64;
        Ok((0..self.num_taps())
            .map(|d| {
                let mut acc = Complex64::new(0.0, 0.0);
                for n in 0..l {
                    acc += field[n + d] * f64::from(self.golay.a[n]);
                    acc += field[seg + n + d] * f64::from(self.golay.b[n]);
                }
                acc * norm
            })
            .collect())
    }
}

/// Tap-resolved decoding: Golay-correlate each of the `T` fields into a
/// delay profile, then Walsh-correlate each tap across fields.
///
/// Returns `table[p][d]`, the correlation for Tx beam `p` at tap `d`,
/// carrying the same `T/√K` scale as [`decode_correlations`].
pub fn decode_per_tap(
    fields: &[Vec<Complex64>],
    ce: &CeWaveform,
    codes: &[SignatureCode],
) -> Result<Vec<Vec<Complex64>>> {
    let profiles = fields
        .iter()
        .map(|f| ce.estimate_taps(f))
        .collect::<Result<Vec<_>>>()?;
    let taps = ce.num_taps();
    codes
        .iter()
        .map(|code| {
            (0..taps)
                .map(|d| {
                    let column: Vec<Complex64> = profiles.iter().map(|p| p[d]).collect();
                    correlate(&column, code)
                })
                .collect()
        })
        .collect()
}
