use std::fs;
use std::path::Path;

use log::{debug, info};
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::array::{dft_codebook, project_uniform, quantize_phases, ArrayConfig, BeamCodebook, WeightVector};
use crate::channel::{rng_for, sample_channel, split_seed, toy_channel, ChannelConfig, STREAM_SUBSET};
use crate::coding::{build_schedule, walsh_codes_for};
use crate::error::Result;
use crate::harness::config::ExperimentConfig;
use crate::metrics::{aggregate_snr, empirical_cdf, power_ratio, to_db};
use crate::packets::{layout_80211ad, layout_beam_coding, power_trace, preamble_samples, LayoutKind, Link, PacketWeights};
use crate::protocols::{omni_receiver, run, ProtocolConfig, Scheme, TrainingOutcome};

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn codebook(antennas: usize) -> Result<BeamCodebook> {
    dft_codebook(&ArrayConfig::ula(antennas)?)
}

fn channel_label(los: bool) -> &'static str {
    if los {
        "los"
    } else {
        "nlos"
    }
}

fn layout_label(kind: LayoutKind) -> &'static str {
    match kind {
        LayoutKind::Ieee80211ad => "ieee80211ad",
        LayoutKind::BeamCoding => "beam_coding",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatternRow {
    pub angle_deg: f64,
    pub gain_db: f64,
}

/// Weights plotted by the `pattern` command.
pub fn pattern_weights(cfg: &ExperimentConfig) -> Result<(ArrayConfig, WeightVector)> {
    let arr = ArrayConfig::ula(cfg.tx_antennas)?;
    let book = dft_codebook(&arr)?;
    let p = &cfg.pattern;
    let mut w = if p.coded_beams == 0 {
        book.steering[p.beam].weights()
    } else {
        let group = book.subset(&(0..p.coded_beams).map(|i| i * book.len() / p.coded_beams).collect::<Vec<_>>())?;
        let sched = build_schedule(&group, &walsh_codes_for(group.len())?)?;
        sched
            .fields
            .get(p.field)
            .cloned()
            .ok_or_else(|| crate::Error::Config(format!("pattern.field {} exceeds the schedule", p.field)))?
    };
    if p.uniform {
        w = project_uniform(&w);
    }
    if let Some(b) = p.quantization_bits {
        w = quantize_phases(&w, b)?;
    }
    Ok((arr, w))
}

/// Array-factor magnitude in dB over (0°, 180°).
pub fn pattern(cfg: &ExperimentConfig) -> Result<Vec<PatternRow>> {
    cfg.validate()?;
    let (arr, w) = pattern_weights(cfg)?;
    let steps = (180.0 / cfg.pattern.step_deg).round() as usize;
    Ok((1..steps)
        .map(|i| {
            let angle = i as f64 * cfg.pattern.step_deg;
            let a = w.respond(&arr.response(angle)).norm();
            PatternRow { angle_deg: angle, gain_db: 20.0 * a.max(1e-15).log10() }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaRow {
    pub layout: &'static str,
    pub beams: usize,
    pub channel: &'static str,
    pub run: usize,
    pub seed: u64,
    pub field: usize,
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CdfRow {
    pub layout: &'static str,
    pub beams: usize,
    pub channel: &'static str,
    pub value: f64,
    pub cumulative_fraction: f64,
}

/// Pooled γ samples of one (layout, K, LOS/NLOS) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerVarCell {
    pub layout: LayoutKind,
    pub beams: usize,
    pub los: bool,
    pub rows: Vec<GammaRow>,
}

impl PowerVarCell {
    pub fn gammas(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.gamma).collect()
    }

    pub fn max(&self) -> f64 {
        self.rows.iter().map(|r| r.gamma).fold(0.0, f64::max)
    }

    pub fn fraction_above(&self, x: f64) -> f64 {
        self.rows.iter().filter(|r| r.gamma > x).count() as f64 / self.rows.len() as f64
    }

    pub fn cdf_rows(&self) -> Result<Vec<CdfRow>> {
        Ok(empirical_cdf(&self.gammas())?
            .steps()
            .into_iter()
            .map(|(value, cumulative_fraction)| CdfRow {
                layout: layout_label(self.layout),
                beams: self.beams,
                channel: channel_label(self.los),
                value,
                cumulative_fraction,
            })
            .collect())
    }
}

/// γ of every TRN field for one channel seed. The Tx trains a contiguous
/// block of `k` beams picked by the seed; the Rx has a single antenna.
pub fn power_ratio_run(
    kind: LayoutKind,
    book: &BeamCodebook,
    k: usize,
    channel: &ChannelConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let ch = sample_channel(channel, seed)?;
    let blocks = book.len() / k;
    let block = if blocks > 1 { rng_for(seed, STREAM_SUBSET).random_range(0..blocks) } else { 0 };
    let group = book.subset(&(block * k..(block + 1) * k).collect::<Vec<_>>())?;
    let (rx_arr, rx_w) = omni_receiver();
    let (layout, coded) = match kind {
        LayoutKind::Ieee80211ad => (layout_80211ad(k)?, Vec::new()),
        LayoutKind::BeamCoding => {
            let sched = build_schedule(&group, &walsh_codes_for(k)?)?;
            (layout_beam_coding(k, book.config.num_antennas)?, sched.fields)
        }
    };
    let weights = PacketWeights { beams: group.weights(), coded, composite: group.composite()? };
    let link = Link { tx: &book.config, rx: &rx_arr, rx_weights: &rx_w, channel: &ch };
    let trace = power_trace(&layout, &weights, &link)?;
    let pre = preamble_samples(&layout, &weights, &link)?;
    Ok(power_ratio(&trace.fields, &pre)?.into_iter().map(|s| s.gamma).collect())
}

/// Power-ratio campaign over both layouts, every configured K, LOS and NLOS.
/// Run `i` uses channel seed `split_seed(master, i)` in every cell.
pub fn power_var(cfg: &ExperimentConfig) -> Result<Vec<PowerVarCell>> {
    cfg.validate()?;
    let book = codebook(cfg.tx_antennas)?;
    let mut cells = Vec::new();
    for kind in [LayoutKind::Ieee80211ad, LayoutKind::BeamCoding] {
        for &k in &cfg.beams_per_packet {
            for los in [true, false] {
                let channel = ChannelConfig { los, ..cfg.channel };
                let per_run = (0..cfg.runs)
                    .into_par_iter()
                    .map(|i| {
                        let seed = split_seed(cfg.master_seed, i as u64);
                        power_ratio_run(kind, &book, k, &channel, seed).map(|g| (i, seed, g))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let rows = per_run
                    .into_iter()
                    .flat_map(|(run, seed, g)| {
                        g.into_iter().enumerate().map(move |(field, gamma)| GammaRow {
                            layout: layout_label(kind),
                            beams: k,
                            channel: channel_label(los),
                            run,
                            seed,
                            field,
                            gamma,
                        })
                    })
                    .collect();
                let cell = PowerVarCell { layout: kind, beams: k, los, rows };
                info!(
                    "power-var {} K={k} {}: max γ {:.2}, P(γ>2) {:.3}",
                    layout_label(kind),
                    channel_label(los),
                    cell.max(),
                    cell.fraction_above(2.0)
                );
                cells.push(cell);
            }
        }
    }
    Ok(cells)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantRow {
    pub channel: &'static str,
    pub bits: String,
    pub scheme: &'static str,
    pub runs: usize,
    pub snr_db: f64,
    /// Fraction of runs that selected the same pair as the N-BF baseline.
    pub agreement: f64,
}

fn bits_label(bits: Option<u32>) -> String {
    bits.map_or_else(|| "inf".to_string(), |b| b.to_string())
}

/// Aggregate data SNR of exhaustive beam coding against the exhaustive
/// packet-by-packet baseline for each phase resolution.
pub fn quant_sweep(cfg: &ExperimentConfig) -> Result<Vec<QuantRow>> {
    cfg.validate()?;
    let tx = codebook(cfg.tx_antennas)?;
    let rx = codebook(cfg.rx_antennas)?;
    let mut levels: Vec<Option<u32>> = cfg.quantization_bits.iter().map(|&b| Some(b)).collect();
    if cfg.include_unquantized {
        levels.push(None);
    }
    let mut rows = Vec::new();
    for los in [false, true] {
        let channel = ChannelConfig { los, ..cfg.channel };
        for &bits in &levels {
            let make = |scheme| -> Result<ProtocolConfig> {
                let mut p = ProtocolConfig::new(tx.clone(), rx.clone(), scheme, cfg.noise_model())?;
                p.quantization_bits = bits;
                p.uniform_coded = cfg.uniform_coded;
                p.link = cfg.link;
                p.validated()
            };
            let (nbf, bc) = (make(Scheme::ExhaustivePbp)?, make(Scheme::ExhaustiveBeamcoding)?);
            let results = (0..cfg.runs)
                .into_par_iter()
                .map(|i| {
                    let seed = split_seed(cfg.master_seed, i as u64);
                    let ch = sample_channel(&channel, seed)?;
                    Ok((run(&nbf, &ch, seed)?, run(&bc, &ch, seed)?))
                })
                .collect::<Result<Vec<(TrainingOutcome, TrainingOutcome)>>>()?;
            let agree = results.iter().filter(|(a, b)| a.best_pair == b.best_pair).count() as f64 / cfg.runs as f64;
            for (scheme, pick) in [("n_bf", 0usize), ("beam_coding", 1)] {
                let snrs: Vec<f64> = results
                    .iter()
                    .map(|r| if pick == 0 { &r.0 } else { &r.1 })
                    .map(|o| o.snr_db.map_or(0.0, |db| 10f64.powf(db / 10.0)))
                    .collect();
                let snr_db = to_db(aggregate_snr(&snrs)?);
                debug!("quant-sweep {} bits={} {scheme}: {snr_db:.3} dB", channel_label(los), bits_label(bits));
                rows.push(QuantRow {
                    channel: channel_label(los),
                    bits: bits_label(bits),
                    scheme,
                    runs: cfg.runs,
                    snr_db,
                    agreement: agree,
                });
            }
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OverheadRow {
    pub beams: usize,
    pub layout: &'static str,
    pub per_beam_bits: u64,
    pub training_bits: u64,
    pub saving_per_beam: u64,
}

/// Training-section bit counts of both layouts for every configured K.
pub fn overhead(cfg: &ExperimentConfig) -> Result<Vec<OverheadRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for &k in &cfg.beams_per_packet {
        let ad = layout_80211ad(k)?;
        let bc = layout_beam_coding(k, cfg.tx_antennas)?;
        let saving = ad.bits_per_beam() - bc.bits_per_beam();
        for (label, l) in [("ieee80211ad", &ad), ("beam_coding", &bc)] {
            rows.push(OverheadRow {
                beams: k,
                layout: label,
                per_beam_bits: l.bits_per_beam(),
                training_bits: l.training_bits(),
                saving_per_beam: if l.kind == LayoutKind::BeamCoding { saving } else { 0 },
            });
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainRow {
    pub scheme: Scheme,
    pub run: usize,
    pub seed: u64,
    pub best_tx: Option<usize>,
    pub best_rx: Option<usize>,
    pub packets: usize,
    pub bits: u64,
    pub snr_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainRecord {
    pub row: TrainRow,
    pub outcome: TrainingOutcome,
}

/// Every configured scheme on `runs` channels; one record per (scheme, run).
pub fn train(cfg: &ExperimentConfig) -> Result<Vec<TrainRecord>> {
    cfg.validate()?;
    let toy = cfg.toy_attenuation;
    let (tx, rx) = match toy {
        Some(_) => (crate::channel::toy_codebook()?, crate::channel::toy_codebook()?),
        None => (codebook(cfg.tx_antennas)?, codebook(cfg.rx_antennas)?),
    };
    let mut out = Vec::new();
    for &scheme in &cfg.schemes {
        let mut p = ProtocolConfig::new(tx.clone(), rx.clone(), scheme, cfg.noise_model())?;
        p.link = cfg.link;
        if toy.is_some() {
            p.sectors = 2;
        }
        let p = p.validated()?;
        let records = (0..cfg.runs)
            .into_par_iter()
            .map(|i| {
                let seed = split_seed(cfg.master_seed, i as u64);
                let ch = match toy {
                    Some(a) => toy_channel(a)?,
                    None => sample_channel(&cfg.channel, seed)?,
                };
                let o = run(&p, &ch, seed)?;
                let row = TrainRow {
                    scheme,
                    run: i,
                    seed,
                    best_tx: o.best_pair.map(|x| x.0),
                    best_rx: o.best_pair.map(|x| x.1),
                    packets: o.packets_sent,
                    bits: o.training_bits,
                    snr_db: o.snr_db,
                };
                Ok(TrainRecord { row, outcome: o })
            })
            .collect::<Result<Vec<_>>>()?;
        out.extend(records);
    }
    Ok(out)
}

/// Output file names, relative to the output directory.
pub mod files {
    pub const PATTERN: &str = "pattern.csv";
    pub const GAMMA: &str = "power_var_gamma.csv";
    pub const CDF: &str = "power_var_cdf.csv";
    pub const QUANT: &str = "quant_sweep.csv";
    pub const OVERHEAD: &str = "overhead.csv";
    pub const TRAIN: &str = "train.csv";
    pub const TRAIN_TRACE: &str = "train_trace.json";
}

pub fn write_pattern(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    write_csv(&dir.join(files::PATTERN), &pattern(cfg)?)
}

pub fn write_power_var(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PowerVarCell>> {
    let cells = power_var(cfg)?;
    let gamma: Vec<&GammaRow> = cells.iter().flat_map(|c| &c.rows).collect();
    write_csv(&dir.join(files::GAMMA), &gamma)?;
    let mut cdf = Vec::new();
    for c in &cells {
        cdf.extend(c.cdf_rows()?);
    }
    write_csv(&dir.join(files::CDF), &cdf)?;
    Ok(cells)
}

pub fn write_quant_sweep(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<QuantRow>> {
    let rows = quant_sweep(cfg)?;
    write_csv(&dir.join(files::QUANT), &rows)?;
    Ok(rows)
}

pub fn write_overhead(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<OverheadRow>> {
    let rows = overhead(cfg)?;
    write_csv(&dir.join(files::OVERHEAD), &rows)?;
    Ok(rows)
}

/// Flat rows to CSV and the complete outcomes of run 0 to JSON.
pub fn write_train(cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<TrainRecord>> {
    let records = train(cfg)?;
    let rows: Vec<&TrainRow> = records.iter().map(|r| &r.row).collect();
    write_csv(&dir.join(files::TRAIN), &rows)?;
    let first: Vec<&TrainRecord> = records.iter().filter(|r| r.row.run == 0).collect();
    let json = serde_json::to_string_pretty(&first).map_err(|e| crate::Error::Config(e.to_string()))?;
    fs::write(dir.join(files::TRAIN_TRACE), json)?;
    Ok(records)
}
