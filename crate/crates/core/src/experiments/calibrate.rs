use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dram::{CalibrationFile, ModelParams, CALIBRATION_FORMAT_VERSION};
use crate::engine::PufConfig;
use crate::error::{Error, Result};

use super::bench::Bench;
use super::report::{ExperimentReport, RuntimeInfo, Table, REPORT_FORMAT_VERSION};
use super::runs::run_suite;
use super::targets::{TargetOutcome, Targets};

/// A tunable model parameter with its initial search step and bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Knob {
    pub name: &'static str,
    pub step: f64,
    pub min: f64,
    pub max: f64,
    /// Steps multiply instead of add.
    pub multiplicative: bool,
}

impl Knob {
    fn get(&self, p: &ModelParams) -> f64 {
        match self.name {
            "retention_log_mean" => p.retention_log_mean,
            "retention_log_sd" => p.retention_log_sd,
            "susceptibility_log_mean" => p.susceptibility_log_mean,
            "susceptibility_log_sd" => p.susceptibility_log_sd,
            "susceptible_fraction" => p.susceptible_fraction,
            "charged_aggressor_factor" => p.charged_aggressor_factor,
            "noise_log_sd" => p.noise_log_sd,
            "temp_doubling_degC" => p.temp_doubling_deg_c,
            other => unreachable!("unknown knob {other}"),
        }
    }

    fn set(&self, p: &mut ModelParams, v: f64) {
        let v = v.clamp(self.min, self.max);
        match self.name {
            "retention_log_mean" => p.retention_log_mean = v,
            "retention_log_sd" => p.retention_log_sd = v,
            "susceptibility_log_mean" => p.susceptibility_log_mean = v,
            "susceptibility_log_sd" => p.susceptibility_log_sd = v,
            "susceptible_fraction" => p.susceptible_fraction = v,
            "charged_aggressor_factor" => p.charged_aggressor_factor = v,
            "noise_log_sd" => p.noise_log_sd = v,
            "temp_doubling_degC" => p.temp_doubling_deg_c = v,
            other => unreachable!("unknown knob {other}"),
        }
    }

    fn moved(&self, p: &ModelParams, step: f64, dir: f64) -> ModelParams {
        let mut q = *p;
        let v = self.get(p);
        let next = if self.multiplicative {
            v * (dir * step).exp()
        } else {
            v + dir * step
        };
        self.set(&mut q, next);
        q
    }
}

pub const KNOBS: [Knob; 8] = [
    Knob { name: "retention_log_mean", step: 0.2, min: -10.0, max: 30.0, multiplicative: false },
    Knob { name: "retention_log_sd", step: 0.1, min: 0.05, max: 10.0, multiplicative: false },
    Knob { name: "susceptibility_log_mean", step: 0.2, min: -40.0, max: 0.0, multiplicative: false },
    Knob { name: "susceptibility_log_sd", step: 0.1, min: 0.0, max: 10.0, multiplicative: false },
    Knob { name: "susceptible_fraction", step: 0.1, min: 1e-4, max: 1.0, multiplicative: true },
    Knob { name: "charged_aggressor_factor", step: 0.05, min: 0.01, max: 1.0, multiplicative: false },
    Knob { name: "noise_log_sd", step: 0.1, min: 1e-4, max: 1.0, multiplicative: true },
    Knob { name: "temp_doubling_degC", step: 1.0, min: 3.0, max: 40.0, multiplicative: false },
];

pub fn knob(name: &str) -> Result<Knob> {
    KNOBS
        .iter()
        .copied()
        .find(|k| k.name == name)
        .ok_or_else(|| Error::Usage(format!("unknown model parameter {name:?}")))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSettings {
    /// Maximum number of full suite evaluations.
    pub budget: usize,
    pub knobs: Vec<Knob>,
    /// Search stops once every step has shrunk below this fraction of its
    /// initial size.
    pub min_step_fraction: f64,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        CalibrationSettings {
            budget: 200,
            knobs: KNOBS.to_vec(),
            min_step_fraction: 1.0 / 64.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub index: usize,
    pub loss: f64,
    pub passing: usize,
    pub params: ModelParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationOutcome {
    pub params: ModelParams,
    pub loss: f64,
    pub residuals: Vec<TargetOutcome>,
    pub evaluations: Vec<Evaluation>,
    /// False when the budget ran out with some target outside tolerance.
    pub converged: bool,
}

impl CalibrationOutcome {
    pub fn all_pass(&self) -> bool {
        self.residuals.iter().all(|t| t.pass)
    }

    pub fn to_file(&self, bench: &Bench) -> CalibrationFile {
        let residuals: BTreeMap<String, serde_json::Value> = self
            .residuals
            .iter()
            .map(|t| {
                (
                    t.id.clone(),
                    serde_json::json!({"value": t.value, "window": t.window, "pass": t.pass}),
                )
            })
            .collect();
        CalibrationFile {
            format_version: CALIBRATION_FORMAT_VERSION,
            model_params: self.params,
            provenance: serde_json::json!({
                "generator": "calibrate",
                "master_seed": bench.master_seed(),
                "devices": bench.devices().len(),
                "repetitions": bench.repetitions(),
                "scale": bench.scale(),
                "evaluations": self.evaluations.len(),
                "loss": self.loss,
                "all_pass": self.all_pass(),
                "residuals": residuals,
            }),
        }
    }
}

/// Runs the whole suite under `params` and scores it against `targets`.
pub fn evaluate(bench: &Bench, base: &PufConfig, params: ModelParams, targets: &Targets) -> Result<(f64, Vec<TargetOutcome>)> {
    let b = bench.with_params(params)?;
    let reports = run_suite(&b, base, targets)?;
    let outcomes: Vec<TargetOutcome> = reports.into_iter().flat_map(|r| r.targets).collect();
    let loss = outcomes.iter().map(|t| t.loss).sum();
    Ok((loss, outcomes))
}

/// Coordinate descent with step halving over the chosen knobs, starting
/// from `start`. Each evaluation reruns the experiment suite on `bench`.
pub fn calibrate(
    bench: &Bench,
    base: &PufConfig,
    targets: &Targets,
    start: ModelParams,
    settings: &CalibrationSettings,
) -> Result<CalibrationOutcome> {
    targets.validate()?;
    start.validate()?;
    if settings.budget == 0 {
        return Err(Error::config("calibration budget must be at least 1"));
    }
    if settings.knobs.is_empty() {
        return Err(Error::config("no parameters selected for calibration"));
    }
    let mut evaluations = Vec::new();
    let score = |p: ModelParams, evaluations: &mut Vec<Evaluation>| -> Result<(f64, Vec<TargetOutcome>)> {
        let (loss, outcomes) = evaluate(bench, base, p, targets)?;
        evaluations.push(Evaluation {
            index: evaluations.len(),
            loss,
            passing: outcomes.iter().filter(|t| t.pass).count(),
            params: p,
        });
        Ok((loss, outcomes))
    };

    let mut best = start;
    let (mut best_loss, mut best_outcomes) = score(best, &mut evaluations)?;
    let mut steps: Vec<f64> = settings.knobs.iter().map(|k| k.step).collect();
    'search: loop {
        let mut improved = false;
        for (i, k) in settings.knobs.iter().enumerate() {
            for dir in [1.0, -1.0] {
                if evaluations.len() >= settings.budget {
                    break 'search;
                }
                let candidate = k.moved(&best, steps[i], dir);
                if candidate == best {
                    continue;
                }
                let (loss, outcomes) = score(candidate, &mut evaluations)?;
                if loss < best_loss {
                    best = candidate;
                    best_loss = loss;
                    best_outcomes = outcomes;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            for s in &mut steps {
                *s /= 2.0;
            }
            let done = steps
                .iter()
                .zip(&settings.knobs)
                .all(|(s, k)| *s < k.step * settings.min_step_fraction);
            if done {
                break;
            }
        }
    }
    let converged = best_outcomes.iter().all(|t| t.pass);
    Ok(CalibrationOutcome {
        params: best,
        loss: best_loss,
        residuals: best_outcomes,
        evaluations,
        converged,
    })
}

/// Calibration as an experiment report; the candidate parameters become
/// the report's model parameters.
pub fn calibration_report(bench: &Bench, base: &PufConfig, outcome: &CalibrationOutcome, began: Instant) -> ExperimentReport {
    let mut metrics = BTreeMap::new();
    metrics.insert("loss".to_string(), outcome.loss);
    metrics.insert("evaluations".to_string(), outcome.evaluations.len() as f64);
    metrics.insert("all_pass".to_string(), if outcome.all_pass() { 1.0 } else { 0.0 });
    let mut history = String::from(
        "evaluation,loss,passing,retention_log_mean,retention_log_sd,susceptibility_log_mean,susceptibility_log_sd,susceptible_fraction,charged_aggressor_factor,noise_log_sd,temp_doubling_degC\n",
    );
    for e in &outcome.evaluations {
        let p = &e.params;
        let _ = writeln!(
            history,
            "{},{},{},{},{},{},{},{},{},{},{}",
            e.index,
            e.loss,
            e.passing,
            p.retention_log_mean,
            p.retention_log_sd,
            p.susceptibility_log_mean,
            p.susceptibility_log_sd,
            p.susceptible_fraction,
            p.charged_aggressor_factor,
            p.noise_log_sd,
            p.temp_doubling_deg_c
        );
    }
    let mut notes = Vec::new();
    if !outcome.converged {
        notes.push("budget exhausted before every target was within tolerance; partial calibration".to_string());
    }
    ExperimentReport {
        format_version: REPORT_FORMAT_VERSION,
        experiment: "calibrate".into(),
        master_seed: bench.master_seed(),
        scale: bench.scale(),
        repetitions: bench.repetitions(),
        device_seeds: bench.device_seeds(),
        model_params: outcome.params,
        base_config: *base,
        grid: Vec::new(),
        metrics,
        histograms: BTreeMap::new(),
        targets: outcome.residuals.clone(),
        notes,
        runtime: Some(RuntimeInfo {
            created_at: crate::io::timestamp(),
            elapsed_ms: began.elapsed().as_millis() as u64,
            threads: rayon::current_num_threads(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
        }),
        tables: vec![Table {
            name: "history".into(),
            csv: history,
        }],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn knobs_round_trip() {
        let p = ModelParams::shipped();
        for k in KNOBS {
            let mut q = p;
            k.set(&mut q, k.get(&p));
            assert_eq!(q, p, "{}", k.name);
        }
        assert!(knob("noise_log_sd").is_ok());
        assert!(knob("bogus").is_err());
    }

    #[test]
    fn moves_respect_bounds() {
        let mut p = ModelParams::shipped();
        p.charged_aggressor_factor = 0.99;
        let k = knob("charged_aggressor_factor").unwrap();
        assert_eq!(k.moved(&p, 0.05, 1.0).charged_aggressor_factor, 1.0);
        let m = knob("noise_log_sd").unwrap();
        let up = m.moved(&p, 0.1, 1.0).noise_log_sd;
        assert!((up / p.noise_log_sd - 0.1f64.exp()).abs() < 1e-12);
    }
}
