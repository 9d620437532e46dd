use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dram::ModelParams;
use crate::engine::PufConfig;
use crate::error::{Error, Result};
use crate::metrics::{Histogram, JaccardStats};

use super::targets::{TargetOutcome, Targets};

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlipStats {
    pub mean: f64,
    pub min: u64,
    pub max: u64,
}

impl FlipStats {
    pub fn from_counts(counts: &[u64]) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::Usage("grid cell has no samples".into()));
        }
        Ok(FlipStats {
            mean: counts.iter().sum::<u64>() as f64 / counts.len() as f64,
            min: *counts.iter().min().expect("non-empty"),
            max: *counts.iter().max().expect("non-empty"),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JaccardSummary {
    pub count: usize,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

impl From<&JaccardStats> for JaccardSummary {
    fn from(s: &JaccardStats) -> Self {
        JaccardSummary {
            count: s.count,
            min: s.min,
            max: s.max,
            mean: s.mean,
        }
    }
}

/// Statistics for one point of an experiment's parameter grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub labels: BTreeMap<String, String>,
    pub samples: usize,
    pub flips: FlipStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub j_intra: Option<JaccardSummary>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub values: BTreeMap<String, f64>,
}

impl GridCell {
    pub fn new(labels: &[(&str, String)], counts: &[u64]) -> Result<Self> {
        Ok(GridCell {
            labels: labels.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
            samples: counts.len(),
            flips: FlipStats::from_counts(counts)?,
            j_intra: None,
            values: BTreeMap::new(),
        })
    }

    pub fn label(&self, key: &str) -> Option<&str> {
        self.labels.get(key).map(String::as_str)
    }
}

/// Wall-clock facts about a run. Never part of the content hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuntimeInfo {
    pub created_at: u64,
    pub elapsed_ms: u64,
    pub threads: usize,
    pub tool_version: String,
}

/// A CSV table emitted next to the JSON report.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub csv: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub format_version: u32,
    pub experiment: String,
    pub master_seed: u64,
    pub scale: f64,
    pub repetitions: u32,
    pub device_seeds: Vec<u64>,
    pub model_params: ModelParams,
    pub base_config: PufConfig,
    pub grid: Vec<GridCell>,
    pub metrics: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub histograms: BTreeMap<String, Histogram>,
    pub targets: Vec<TargetOutcome>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runtime: Option<RuntimeInfo>,
    #[serde(skip)]
    pub tables: Vec<Table>,
}

impl ExperimentReport {
    /// Fills `targets` from every declared target of this experiment.
    /// A metric the run did not produce counts as a failure.
    pub fn evaluate(&mut self, targets: &Targets) {
        self.targets = targets
            .for_experiment(&self.experiment)
            .map(|t| t.outcome(self.metrics.get(&t.metric).copied()))
            .collect();
    }

    pub fn all_pass(&self) -> bool {
        self.targets.iter().all(|t| t.pass)
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.get(name).copied()
    }

    pub fn cell(&self, labels: &[(&str, &str)]) -> Option<&GridCell> {
        self.grid
            .iter()
            .find(|c| labels.iter().all(|(k, v)| c.label(k) == Some(*v)))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// JSON without runtime metadata; identical for identical runs.
    pub fn content_json(&self) -> String {
        let mut stripped = self.clone();
        stripped.runtime = None;
        stripped.to_json()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        crate::io::check_version(&value, "experiment report", REPORT_FORMAT_VERSION)?;
        Ok(serde_json::from_value(value)?)
    }

    /// One row per grid cell: labels, sample count, flip stats, J_intra
    /// stats, extra values.
    pub fn grid_csv(&self) -> String {
        let label_keys: Vec<&String> = self.grid.first().map(|c| c.labels.keys().collect()).unwrap_or_default();
        let mut value_keys: Vec<&String> = self.grid.iter().flat_map(|c| c.values.keys()).collect();
        value_keys.sort();
        value_keys.dedup();
        let with_j = self.grid.iter().any(|c| c.j_intra.is_some());

        let mut header: Vec<String> = label_keys.iter().map(|k| k.to_string()).collect();
        header.extend(["samples", "mean_flips", "min_flips", "max_flips"].map(String::from));
        if with_j {
            header.extend(["j_intra_min", "j_intra_mean", "j_intra_max"].map(String::from));
        }
        header.extend(value_keys.iter().map(|k| k.to_string()));
        let mut out = header.join(",");
        out.push('\n');
        for c in &self.grid {
            let mut row: Vec<String> = label_keys
                .iter()
                .map(|k| c.labels.get(*k).cloned().unwrap_or_default())
                .collect();
            row.push(c.samples.to_string());
            row.push(format!("{:.3}", c.flips.mean));
            row.push(c.flips.min.to_string());
            row.push(c.flips.max.to_string());
            if with_j {
                match &c.j_intra {
                    Some(j) => row.extend([j.min, j.mean, j.max].map(|v| format!("{v:.6}"))),
                    None => row.extend(["", "", ""].map(String::from)),
                }
            }
            for k in &value_keys {
                row.push(c.values.get(*k).map(|v| format!("{v:.6}")).unwrap_or_default());
            }
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (k, v) in &self.metrics {
            let _ = writeln!(out, "{k},{v}");
        }
        out
    }

    pub fn targets_csv(&self) -> String {
        let mut out = String::from("id,metric,value,nominal,window,pass\n");
        for t in &self.targets {
            let _ = writeln!(
                out,
                "{},{},{},{},\"{}\",{}",
                t.id,
                t.metric,
                t.value.map(|v| v.to_string()).unwrap_or_default(),
                t.nominal.map(|v| v.to_string()).unwrap_or_default(),
                t.window,
                t.pass
            );
        }
        out
    }

    /// File stem `<experiment>-<master seed as 16 hex digits>`.
    pub fn file_stem(&self) -> String {
        format!("{}-{:016x}", self.experiment, self.master_seed)
    }

    /// Writes the JSON report, CSV tables and, if asked, SVG histograms to
    /// `dir`. Returns the written paths in a fixed order.
    pub fn write(&self, dir: &Path, svg: bool, overwrite: bool) -> Result<Vec<PathBuf>> {
        let stem = self.file_stem();
        let mut files: Vec<(String, String)> = vec![
            (format!("{stem}.json"), self.to_json()),
            (format!("{stem}-grid.csv"), self.grid_csv()),
            (format!("{stem}-metrics.csv"), self.metrics_csv()),
            (format!("{stem}-targets.csv"), self.targets_csv()),
        ];
        for t in &self.tables {
            files.push((format!("{stem}-{}.csv", t.name), t.csv.clone()));
        }
        if svg && !self.histograms.is_empty() {
            files.push((format!("{stem}-histogram.svg"), histogram_svg(&self.histograms)));
        }
        let mut written = Vec::with_capacity(files.len());
        for (name, body) in files {
            let path = dir.join(name);
            crate::io::write_atomic(&path, body.as_bytes(), overwrite)?;
            written.push(path);
        }
        Ok(written)
    }
}

/// Overlaid bar histograms on [0, 1], one colour per series.
pub fn histogram_svg(series: &BTreeMap<String, Histogram>) -> String {
    const W: f64 = 640.0;
    const H: f64 = 320.0;
    const PAD: f64 = 40.0;
    const COLOURS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
    let peak = series
        .values()
        .flat_map(|h| h.counts.iter().copied())
        .max()
        .unwrap_or(0)
        .max(1) as f64;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<line x1="{PAD}" y1="{y}" x2="{x2}" y2="{y}" stroke="black"/>"#,
        y = H - PAD,
        x2 = W - PAD / 2.0
    );
    for tick in 0..=10 {
        let x = PAD + (W - 1.5 * PAD) * f64::from(tick) / 10.0;
        let _ = writeln!(
            svg,
            r#"<text x="{x:.1}" y="{y}" font-size="10" text-anchor="middle">{:.1}</text>"#,
            f64::from(tick) / 10.0,
            y = H - PAD + 14.0
        );
    }
    for (i, (name, hist)) in series.iter().enumerate() {
        let colour = COLOURS[i % COLOURS.len()];
        for (b, &count) in hist.counts.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let x0 = PAD + (W - 1.5 * PAD) * hist.edges[b];
            let x1 = PAD + (W - 1.5 * PAD) * hist.edges[b + 1];
            let h = (H - 2.0 * PAD) * count as f64 / peak;
            let _ = writeln!(
                svg,
                r#"<rect x="{x0:.1}" y="{y:.1}" width="{w:.1}" height="{h:.1}" fill="{colour}" fill-opacity="0.6"><title>{name} {count}</title></rect>"#,
                y = H - PAD - h,
                w = (x1 - x0).max(1.0)
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{x}" y="{y}" font-size="12" fill="{colour}">{name}</text>"#,
            x = PAD + 10.0,
            y = PAD / 2.0 + 14.0 * i as f64
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report() -> ExperimentReport {
        let mut cell = GridCell::new(&[("rh_type", "SSRH".into()), ("time_s", "60".into())], &[3, 5]).unwrap();
        cell.values.insert("fraction_percent".into(), 1.5);
        ExperimentReport {
            format_version: REPORT_FORMAT_VERSION,
            experiment: "demo".into(),
            master_seed: 7,
            scale: 1.0,
            repetitions: 2,
            device_seeds: vec![1],
            model_params: ModelParams::shipped(),
            base_config: PufConfig::default(),
            grid: vec![cell],
            metrics: [("m".to_string(), 2.0)].into_iter().collect(),
            histograms: BTreeMap::new(),
            targets: vec![],
            notes: vec![],
            runtime: Some(RuntimeInfo {
                created_at: 1,
                elapsed_ms: 2,
                threads: 1,
                tool_version: "x".into(),
            }),
            tables: vec![],
        }
    }

    #[test]
    fn flip_stats() {
        let s = FlipStats::from_counts(&[1, 2, 6]).unwrap();
        assert_eq!((s.mean, s.min, s.max), (3.0, 1, 6));
        assert!(FlipStats::from_counts(&[]).is_err());
    }

    #[test]
    fn grid_csv_layout() {
        let csv = report().grid_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "rh_type,time_s,samples,mean_flips,min_flips,max_flips,fraction_percent"
        );
        assert_eq!(lines.next().unwrap(), "SSRH,60,2,4.000,3,5,1.500000");
    }

    #[test]
    fn content_json_ignores_runtime() {
        let a = report();
        let mut b = report();
        b.runtime.as_mut().unwrap().elapsed_ms = 999;
        assert_ne!(a.to_json(), b.to_json());
        assert_eq!(a.content_json(), b.content_json());
        let back = ExperimentReport::from_json(&a.to_json()).unwrap();
        assert_eq!(back.grid, a.grid);
    }

    #[test]
    fn writes_named_files() {
        let dir = tempfile::tempdir().unwrap();
        let r = report();
        let files = r.write(dir.path(), true, false).unwrap();
        assert!(files[0].ends_with("demo-0000000000000007.json"));
        assert!(r.write(dir.path(), false, false).is_err());
        assert!(r.write(dir.path(), false, true).is_ok());
    }

    #[test]
    fn svg_is_well_formed() {
        let mut m = BTreeMap::new();
        m.insert("intra".to_string(), Histogram::unit(&[0.97, 0.98], 50));
        m.insert("inter".to_string(), Histogram::unit(&[0.02], 50));
        let svg = histogram_svg(&m);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<rect").count(), 1 + 3);
    }
}
