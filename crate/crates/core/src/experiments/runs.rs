use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{PufConfig, QueryMode, KB};
use crate::error::{Error, Result};
use crate::metrics::{
    entropy_bits, extract_flip_set, intra_pairs, inter_pairs, jaccard, key_material_size, pairs_csv, FlipSet,
    Histogram, JaccardStats, PairRecord, DEFAULT_BINS,
};
use crate::pattern::{is_extrapolated, RhType};

use super::bench::Bench;
use super::report::{ExperimentReport, GridCell, JaccardSummary, RuntimeInfo, Table, REPORT_FORMAT_VERSION};
use super::targets::Targets;

pub const IVS: [u8; 4] = [0x00, 0x55, 0xAA, 0xFF];
pub const TEMPERATURES_C: [f64; 3] = [40.0, 50.0, 60.0];
pub const SIZES: [u64; 3] = [4 * KB, 32 * KB, 128 * KB];
pub const RH_TIMES: [f64; 2] = [60.0, 120.0];
const REFERENCE_SIZE: u64 = 128 * KB;
const KEY_BITS: u64 = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentId {
    IvMatrix,
    Temperature,
    RhType,
    Decay,
    Uniqueness,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 5] = [
        ExperimentId::IvMatrix,
        ExperimentId::Temperature,
        ExperimentId::RhType,
        ExperimentId::Decay,
        ExperimentId::Uniqueness,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::IvMatrix => "iv-matrix",
            ExperimentId::Temperature => "temperature",
            ExperimentId::RhType => "rh-type",
            ExperimentId::Decay => "decay",
            ExperimentId::Uniqueness => "uniqueness",
        }
    }
}

impl std::str::FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentId::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::Usage(format!("unknown experiment {s:?}")))
    }
}

impl std::fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

fn iv_label(iv: u8) -> String {
    format!("0x{iv:02X}")
}

fn num_label(v: f64) -> String {
    format!("{v}")
}

fn mean(counts: &[u64]) -> f64 {
    counts.iter().sum::<u64>() as f64 / counts.len() as f64
}

fn start(bench: &Bench, id: ExperimentId, base: &PufConfig) -> ExperimentReport {
    ExperimentReport {
        format_version: REPORT_FORMAT_VERSION,
        experiment: id.name().into(),
        master_seed: bench.master_seed(),
        scale: bench.scale(),
        repetitions: bench.repetitions(),
        device_seeds: bench.device_seeds(),
        model_params: *bench.params(),
        base_config: *base,
        grid: Vec::new(),
        metrics: BTreeMap::new(),
        histograms: BTreeMap::new(),
        targets: Vec::new(),
        notes: Vec::new(),
        runtime: None,
        tables: Vec::new(),
    }
}

fn finish(mut report: ExperimentReport, targets: &Targets, began: Instant) -> ExperimentReport {
    report.evaluate(targets);
    report.runtime = Some(RuntimeInfo {
        created_at: crate::io::timestamp(),
        elapsed_ms: began.elapsed().as_millis() as u64,
        threads: rayon::current_num_threads(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
    });
    report
}

fn note_extrapolation(report: &mut ExperimentReport, bench: &Bench, config: &PufConfig) -> Result<()> {
    let pattern = config.pattern(&bench.settings().geometry)?;
    let n = pattern.hammer_rows.len();
    if is_extrapolated(n) {
        let note = format!(
            "{} {} KB uses {n} hammer rows; access interval extrapolated",
            config.rh_type,
            config.puf_size / KB
        );
        if !report.notes.contains(&note) {
            report.notes.push(note);
        }
    }
    Ok(())
}

/// Mean flip counts over all hammer/PUF IV pairs for both RH types.
pub fn run_iv_matrix(bench: &Bench, base: &PufConfig, targets: &Targets) -> Result<ExperimentReport> {
    let began = Instant::now();
    let mut report = start(bench, ExperimentId::IvMatrix, base);
    let size = bench.scaled_size(base.puf_size);
    let mut means: BTreeMap<(RhType, u8, u8), f64> = BTreeMap::new();
    for rh_type in [RhType::Ssrh, RhType::Dsrh] {
        for puf_iv in IVS {
            for hammer_iv in IVS {
                let cfg = PufConfig {
                    rh_type,
                    puf_size: size,
                    hammer_row_iv: hammer_iv,
                    puf_row_iv: puf_iv,
                    ..*base
                };
                note_extrapolation(&mut report, bench, &cfg)?;
                let counts = bench.flip_counts(&cfg, QueryMode::Hammer)?;
                means.insert((rh_type, hammer_iv, puf_iv), mean(&counts));
                report.grid.push(GridCell::new(
                    &[
                        ("rh_type", rh_type.to_string()),
                        ("hammer_iv", iv_label(hammer_iv)),
                        ("puf_iv", iv_label(puf_iv)),
                    ],
                    &counts,
                )?);
            }
        }
    }

    let m = &mut report.metrics;
    let zero_row = report
        .grid
        .iter()
        .filter(|c| c.label("puf_iv") == Some("0x55"))
        .map(|c| c.flips.max)
        .max()
        .unwrap_or(0);
    m.insert("puf_0x55_max_flips".into(), zero_row as f64);
    let to_ref = REFERENCE_SIZE as f64 / size as f64;
    for rh_type in [RhType::Ssrh, RhType::Dsrh] {
        let t = rh_type.to_string().to_lowercase();
        let at = |h: u8| means[&(rh_type, h, 0xAA)];
        for (a, b) in [(0x55, 0xFF), (0x55, 0x00), (0x00, 0xAA), (0xFF, 0xAA), (0x55, 0xAA)] {
            m.insert(format!("{t}_0x{a:02x}_over_0x{b:02x}"), at(a) / at(b));
        }
        m.insert(format!("{t}_0x55_0xaa_mean_flips"), at(0x55));
        m.insert(format!("{t}_0x55_0xaa_flips_per_128kb"), at(0x55) * to_ref);
        let best = means
            .iter()
            .filter(|((r, _, _), _)| *r == rh_type)
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| *k)
            .expect("grid is non-empty");
        let is_ref = best.1 == 0x55 && best.2 == 0xAA && means[&best] > 0.0;
        m.insert(format!("{t}_max_cell_is_0x55_0xaa"), if is_ref { 1.0 } else { 0.0 });

        let mut csv = String::from("puf_iv");
        for h in IVS {
            let _ = write!(csv, ",hammer_{}", iv_label(h));
        }
        csv.push('\n');
        for p in IVS {
            csv.push_str(&iv_label(p));
            for h in IVS {
                let _ = write!(csv, ",{:.1}", means[&(rh_type, h, p)]);
            }
            csv.push('\n');
        }
        report.tables.push(Table {
            name: format!("matrix-{t}"),
            csv,
        });
    }
    Ok(finish(report, targets, began))
}

fn flip_sets(bench: &Bench, cfg: &PufConfig, mode: QueryMode) -> Result<(Vec<Vec<FlipSet>>, Vec<u64>)> {
    let samples = bench.samples(cfg, mode)?;
    let counts = samples.iter().flatten().map(|m| m.flip_count).collect();
    let sets = samples
        .iter()
        .map(|g| g.iter().map(extract_flip_set).collect())
        .collect();
    Ok((sets, counts))
}

fn intra_values(groups: &[Vec<FlipSet>]) -> Vec<Vec<f64>> {
    groups
        .iter()
        .map(|g| intra_pairs(g).iter().map(|p| p.jaccard).collect())
        .collect()
}

/// Flip counts and J_intra at each temperature.
pub fn run_temperature_sweep(
    bench: &Bench,
    base: &PufConfig,
    temperatures: &[f64],
    targets: &Targets,
) -> Result<ExperimentReport> {
    let began = Instant::now();
    if temperatures.is_empty() {
        return Err(Error::config("temperature sweep needs at least one temperature"));
    }
    let mut report = start(bench, ExperimentId::Temperature, base);
    let size = bench.scaled_size(base.puf_size);
    let mut means = Vec::new();
    let mut overall_min = f64::INFINITY;
    for &t in temperatures {
        crate::dram::check_temperature(t)?;
        let cfg = PufConfig {
            puf_size: size,
            temperature_c: t,
            ..*base
        };
        note_extrapolation(&mut report, bench, &cfg)?;
        let (groups, counts) = flip_sets(bench, &cfg, QueryMode::Hammer)?;
        let mut cell = GridCell::new(&[("temperature_C", num_label(t))], &counts)?;
        let values: Vec<f64> = intra_values(&groups).concat();
        if !values.is_empty() {
            let stats = JaccardStats::from_values(&values)?;
            overall_min = overall_min.min(stats.min);
            report.metrics.insert(format!("min_j_intra_{}", num_label(t)), stats.min);
            cell.j_intra = Some(JaccardSummary::from(&stats));
        }
        means.push(mean(&counts));
        report.metrics.insert(format!("mean_flips_{}", num_label(t)), mean(&counts));
        report.grid.push(cell);
    }
    for i in 1..temperatures.len() {
        report.metrics.insert(
            format!(
                "flips_{}_over_{}",
                num_label(temperatures[i]),
                num_label(temperatures[i - 1])
            ),
            means[i] / means[i - 1],
        );
    }
    if overall_min.is_finite() {
        report.metrics.insert("min_j_intra".into(), overall_min);
    }
    Ok(finish(report, targets, began))
}

/// Fractional flip rates per size, time and RH type.
pub fn run_rh_type_comparison(
    bench: &Bench,
    base: &PufConfig,
    sizes: &[u64],
    times: &[f64],
    targets: &Targets,
) -> Result<ExperimentReport> {
    let began = Instant::now();
    if sizes.is_empty() || times.is_empty() {
        return Err(Error::config("RH type comparison needs sizes and times"));
    }
    let mut report = start(bench, ExperimentId::RhType, base);
    let mut scaled: Vec<u64> = sizes.iter().map(|&s| bench.scaled_size(s)).collect();
    scaled.sort_unstable();
    scaled.dedup();
    let largest = *scaled.last().expect("non-empty");
    let geometry = bench.settings().geometry;

    let mut fraction: BTreeMap<(RhType, u64, u64), f64> = BTreeMap::new();
    let mut means: BTreeMap<(RhType, u64, u64), f64> = BTreeMap::new();
    let mut footprint: BTreeMap<(RhType, u64), (usize, usize)> = BTreeMap::new();
    for rh_type in [RhType::Ssrh, RhType::Dsrh] {
        for &size in &scaled {
            let pattern = crate::pattern::build_row_pattern(rh_type, size, &geometry, base.puf_address)?;
            footprint.insert((rh_type, size), (pattern.hammer_rows.len(), pattern.total_rows()));
            for &time in times {
                let cfg = PufConfig {
                    rh_type,
                    puf_size: size,
                    rh_time: time,
                    ..*base
                };
                cfg.validate()?;
                note_extrapolation(&mut report, bench, &cfg)?;
                let counts = bench.flip_counts(&cfg, QueryMode::Hammer)?;
                let mu = mean(&counts);
                let frac = mu / (size * 8) as f64;
                let key = (rh_type, size, time.to_bits());
                fraction.insert(key, frac);
                means.insert(key, mu);
                let mut cell = GridCell::new(
                    &[
                        ("rh_type", rh_type.to_string()),
                        ("puf_size_kb", (size / KB).to_string()),
                        ("rh_time_s", num_label(time)),
                    ],
                    &counts,
                )?;
                cell.values.insert("fraction_percent".into(), 100.0 * frac);
                cell.values.insert("hammer_rows".into(), pattern.hammer_rows.len() as f64);
                cell.values.insert("total_rows".into(), pattern.total_rows() as f64);
                report.grid.push(cell);
            }
        }
    }

    let m = &mut report.metrics;
    let mut max_spread: f64 = 0.0;
    let mut spread_at: BTreeMap<u64, f64> = BTreeMap::new();
    for rh_type in [RhType::Ssrh, RhType::Dsrh] {
        let t = rh_type.to_string().to_lowercase();
        for &time in times {
            let fr: Vec<f64> = scaled.iter().map(|&s| fraction[&(rh_type, s, time.to_bits())]).collect();
            let avg = fr.iter().sum::<f64>() / fr.len() as f64;
            let lo = fr.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = fr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let spread = if avg > 0.0 { (hi - lo) / avg } else { 0.0 };
            m.insert(format!("{t}_fraction_spread_{}s", num_label(time)), spread);
            max_spread = max_spread.max(spread);
            let at = spread_at.entry(time.to_bits()).or_insert(0.0);
            *at = at.max(spread);
        }
        for i in 1..times.len() {
            let (a, b) = (times[i - 1], times[i]);
            m.insert(
                format!("{t}_{}_over_{}", num_label(b), num_label(a)),
                means[&(rh_type, largest, b.to_bits())] / means[&(rh_type, largest, a.to_bits())],
            );
        }
    }
    m.insert("max_fraction_spread".into(), max_spread);
    for (t, spread) in spread_at {
        m.insert(format!("max_fraction_spread_{}s", num_label(f64::from_bits(t))), spread);
    }
    for &time in times {
        for &size in &scaled {
            let up = means[&(RhType::Dsrh, size, time.to_bits())] / means[&(RhType::Ssrh, size, time.to_bits())] - 1.0;
            m.insert(format!("dsrh_uplift_{}s_{}kb", num_label(time), size / KB), up);
            if size == largest {
                m.insert(format!("dsrh_uplift_{}s", num_label(time)), up);
            }
        }
    }
    let (sh, st) = footprint[&(RhType::Ssrh, largest)];
    let (dh, dt) = footprint[&(RhType::Dsrh, largest)];
    m.insert("memory_saving_hammer_rows".into(), 1.0 - sh as f64 / dh as f64);
    m.insert("memory_saving_total".into(), 1.0 - st as f64 / dt as f64);

    let mut csv = String::from("rh_type,puf_size_kb");
    for &time in times {
        let _ = write!(csv, ",fraction_percent_{}s", num_label(time));
    }
    csv.push('\n');
    for rh_type in [RhType::Ssrh, RhType::Dsrh] {
        for &size in &scaled {
            let _ = write!(csv, "{rh_type},{}", size / KB);
            for &time in times {
                let _ = write!(csv, ",{:.6}", 100.0 * fraction[&(rh_type, size, time.to_bits())]);
            }
            csv.push('\n');
        }
    }
    report.tables.push(Table {
        name: "fraction".into(),
        csv,
    });
    Ok(finish(report, targets, began))
}

/// Hammer queries against decay-only queries with the same seeds.
pub fn run_decay_comparison(
    bench: &Bench,
    base: &PufConfig,
    times: &[f64],
    targets: &Targets,
) -> Result<ExperimentReport> {
    let began = Instant::now();
    if times.is_empty() {
        return Err(Error::config("decay comparison needs at least one time"));
    }
    let mut report = start(bench, ExperimentId::Decay, base);
    let size = bench.scaled_size(base.puf_size);
    let mut max_j: f64 = 0.0;
    for &time in times {
        let cfg = PufConfig {
            puf_size: size,
            rh_time: time,
            ..*base
        };
        cfg.validate()?;
        note_extrapolation(&mut report, bench, &cfg)?;
        let (hammer, hammer_counts) = flip_sets(bench, &cfg, QueryMode::Hammer)?;
        let (decay, decay_counts) = flip_sets(bench, &cfg, QueryMode::DecayOnly)?;
        let pairs: Vec<(&FlipSet, &FlipSet)> = hammer.iter().flatten().zip(decay.iter().flatten()).collect();
        let js: Vec<f64> = pairs.par_iter().map(|(h, d)| jaccard(h, d)).collect();
        let hammer_only: Vec<f64> = pairs
            .iter()
            .map(|(h, d)| h.indices.iter().filter(|i| !d.contains(**i)).count() as f64)
            .collect();
        let label = num_label(time);
        let mut h_cell = GridCell::new(&[("rh_time_s", label.clone()), ("mode", "hammer".into())], &hammer_counts)?;
        h_cell.values.insert(
            "mean_hammer_only_flips".into(),
            hammer_only.iter().sum::<f64>() / hammer_only.len() as f64,
        );
        report.grid.push(h_cell);
        report
            .grid
            .push(GridCell::new(&[("rh_time_s", label.clone()), ("mode", "decay".into())], &decay_counts)?);

        let j = JaccardStats::from_values(&js)?;
        max_j = max_j.max(j.max);
        let m = &mut report.metrics;
        m.insert(format!("hammer_over_decay_{label}s"), mean(&hammer_counts) / mean(&decay_counts));
        m.insert(format!("jaccard_hammer_decay_{label}s"), j.mean);
    }
    report.metrics.insert("max_jaccard_hammer_decay".into(), max_j);
    Ok(finish(report, targets, began))
}

/// J_intra and J_inter over every device of the bench, plus the entropy
/// estimate from the smallest flip count.
pub fn run_uniqueness(bench: &Bench, base: &PufConfig, targets: &Targets) -> Result<ExperimentReport> {
    let began = Instant::now();
    if bench.devices().len() < 3 {
        return Err(Error::config("uniqueness needs at least three devices"));
    }
    let mut report = start(bench, ExperimentId::Uniqueness, base);
    let cfg = PufConfig {
        puf_size: bench.scaled_size(base.puf_size),
        ..*base
    };
    note_extrapolation(&mut report, bench, &cfg)?;
    let (groups, counts) = flip_sets(bench, &cfg, QueryMode::Hammer)?;
    let intra: Vec<Vec<PairRecord>> = groups.iter().map(|g| intra_pairs(g)).collect();
    let inter = inter_pairs(&groups);
    let per_device = bench.repetitions() as usize;
    for (d, pairs) in intra.iter().enumerate() {
        let mut cell = GridCell::new(
            &[("device", d.to_string())],
            &counts[d * per_device..(d + 1) * per_device],
        )?;
        if !pairs.is_empty() {
            let values: Vec<f64> = pairs.iter().map(|p| p.jaccard).collect();
            cell.j_intra = Some(JaccardSummary::from(&JaccardStats::from_values(&values)?));
        }
        report.grid.push(cell);
    }

    let intra_values: Vec<f64> = intra.iter().flatten().map(|p| p.jaccard).collect();
    let inter_values: Vec<f64> = inter.iter().map(|p| p.jaccard).collect();
    let inter_stats = JaccardStats::from_values(&inter_values)?;
    let m = &mut report.metrics;
    m.insert("max_j_inter".into(), inter_stats.max);
    m.insert("mean_j_inter".into(), inter_stats.mean);
    m.insert("min_j_inter".into(), inter_stats.min);
    if !intra_values.is_empty() {
        let intra_stats = JaccardStats::from_values(&intra_values)?;
        m.insert("min_j_intra".into(), intra_stats.min);
        m.insert("mean_j_intra".into(), intra_stats.mean);
        m.insert("max_j_intra".into(), intra_stats.max);
        let margin = intra_stats.min - inter_stats.max;
        m.insert("separation_margin".into(), margin);
        m.insert("separated".into(), if margin > 0.0 { 1.0 } else { 0.0 });
        report.histograms.insert("j_intra".into(), intra_stats.histogram);
    }
    report.histograms.insert("j_inter".into(), inter_stats.histogram);

    let k = *counts.iter().min().expect("non-empty");
    let entropy = entropy_bits(cfg.puf_size * 8, k)?;
    m.insert("entropy_cells".into(), entropy.cells as f64);
    m.insert("entropy_flips".into(), entropy.flips as f64);
    m.insert("entropy_bits".into(), entropy.bits);
    m.insert("fractional_entropy".into(), entropy.fractional);
    if entropy.fractional > 0.0 {
        m.insert(
            "key_material_bytes".into(),
            key_material_size(KEY_BITS, entropy.fractional)? as f64,
        );
    }

    let all_pairs: Vec<PairRecord> = intra.into_iter().flatten().chain(inter).collect();
    report.tables.push(Table {
        name: "pairs".into(),
        csv: pairs_csv(&all_pairs),
    });
    report.tables.push(Table {
        name: "histogram".into(),
        csv: histogram_csv(&report.histograms),
    });
    Ok(finish(report, targets, began))
}

fn histogram_csv(series: &BTreeMap<String, Histogram>) -> String {
    let names: Vec<&String> = series.keys().collect();
    let mut out = String::from("bin_lo,bin_hi");
    for n in &names {
        let _ = write!(out, ",{n}");
    }
    out.push('\n');
    let edges = Histogram::unit(&[], DEFAULT_BINS).edges;
    for b in 0..DEFAULT_BINS {
        let _ = write!(out, "{:.2},{:.2}", edges[b], edges[b + 1]);
        for n in &names {
            let _ = write!(out, ",{}", series[*n].counts.get(b).copied().unwrap_or(0));
        }
        out.push('\n');
    }
    out
}

/// Runs one experiment with its default grid.
pub fn run_experiment(id: ExperimentId, bench: &Bench, base: &PufConfig, targets: &Targets) -> Result<ExperimentReport> {
    match id {
        ExperimentId::IvMatrix => run_iv_matrix(bench, base, targets),
        ExperimentId::Temperature => run_temperature_sweep(bench, base, &TEMPERATURES_C, targets),
        ExperimentId::RhType => run_rh_type_comparison(bench, base, &SIZES, &RH_TIMES, targets),
        ExperimentId::Decay => run_decay_comparison(bench, base, &RH_TIMES, targets),
        ExperimentId::Uniqueness => run_uniqueness(bench, base, targets),
    }
}

/// Every experiment, in [`ExperimentId::ALL`] order.
pub fn run_suite(bench: &Bench, base: &PufConfig, targets: &Targets) -> Result<Vec<ExperimentReport>> {
    ExperimentId::ALL
        .into_iter()
        .map(|id| run_experiment(id, bench, base, targets))
        .collect()
}
