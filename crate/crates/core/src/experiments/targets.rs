use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TARGETS_FORMAT_VERSION: u32 = 1;

const SHIPPED_TARGETS: &str = include_str!("../../data/targets.json");

/// One reference value with its tolerance window.
///
/// Each bound is optional; a target passes when every bound present holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub id: String,
    pub experiment: String,
    pub metric: String,
    #[serde(default)]
    pub description: String,
    /// Value the calibration pulls toward inside the window.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nominal: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ge: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub le: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lt: Option<f64>,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

impl Target {
    pub fn check(&self, value: f64) -> bool {
        value.is_finite()
            && self.ge.is_none_or(|b| value >= b)
            && self.gt.is_none_or(|b| value > b)
            && self.le.is_none_or(|b| value <= b)
            && self.lt.is_none_or(|b| value < b)
    }

    fn lower(&self) -> Option<f64> {
        match (self.ge, self.gt) {
            (Some(a), Some(b)) => Some(a.max(b)),
            (a, b) => a.or(b),
        }
    }

    fn upper(&self) -> Option<f64> {
        match (self.le, self.lt) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        }
    }

    /// Window rendered as text, e.g. `[1.6, 2.4]` or `> 0`.
    pub fn window(&self) -> String {
        let lo = self
            .ge
            .map(|v| format!("[{v}"))
            .or_else(|| self.gt.map(|v| format!("({v}")));
        let hi = self
            .le
            .map(|v| format!("{v}]"))
            .or_else(|| self.lt.map(|v| format!("{v})")));
        match (lo, hi) {
            (Some(l), Some(h)) => format!("{l}, {h}"),
            (Some(_), None) => match (self.ge, self.gt) {
                (Some(v), _) => format!(">= {v}"),
                (_, Some(v)) => format!("> {v}"),
                _ => unreachable!(),
            },
            (None, Some(_)) => match (self.le, self.lt) {
                (Some(v), _) => format!("<= {v}"),
                (_, Some(v)) => format!("< {v}"),
                _ => unreachable!(),
            },
            (None, None) => "any".into(),
        }
    }

    fn unit(&self) -> f64 {
        let candidates = [self.nominal, self.lower(), self.upper()];
        candidates
            .iter()
            .flatten()
            .map(|v| v.abs())
            .find(|v| *v > 1e-12)
            .unwrap_or(1.0)
    }

    /// Weighted loss: squared relative distance outside the window, plus a
    /// small pull toward `nominal`.
    pub fn loss(&self, value: f64) -> f64 {
        if !value.is_finite() {
            return 1e6 * self.weight;
        }
        let unit = self.unit();
        let mut outside = 0.0;
        if let Some(lo) = self.lower() {
            if value < lo || (self.gt.is_some() && value <= lo) {
                outside += (lo - value) / unit + 0.01;
            }
        }
        if let Some(hi) = self.upper() {
            if value > hi || (self.lt.is_some() && value >= hi) {
                outside += (value - hi) / unit + 0.01;
            }
        }
        let pull = self.nominal.map_or(0.0, |n| (value - n) / unit);
        self.weight * (100.0 * outside * outside + pull * pull)
    }

    pub fn outcome(&self, value: Option<f64>) -> TargetOutcome {
        let (value, pass, loss) = match value {
            Some(v) => (v, self.check(v), self.loss(v)),
            None => (f64::NAN, false, 1e6 * self.weight),
        };
        TargetOutcome {
            id: self.id.clone(),
            metric: self.metric.clone(),
            value: value.is_finite().then_some(value),
            nominal: self.nominal,
            window: self.window(),
            residual: self.nominal.filter(|_| value.is_finite()).map(|n| (value - n) / self.unit()),
            loss,
            pass,
        }
    }
}

/// A target evaluated against a measured value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetOutcome {
    pub id: String,
    pub metric: String,
    pub value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nominal: Option<f64>,
    pub window: String,
    /// Relative error against `nominal`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub residual: Option<f64>,
    #[serde(skip)]
    pub loss: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Targets {
    pub format_version: u32,
    pub targets: Vec<Target>,
}

impl Targets {
    pub fn shipped() -> Self {
        Targets::from_json(SHIPPED_TARGETS).expect("shipped targets file is valid")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        crate::io::check_version(&value, "targets file", TARGETS_FORMAT_VERSION)?;
        let targets: Targets = serde_json::from_value(value)?;
        targets.validate()?;
        Ok(targets)
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids = std::collections::BTreeSet::new();
        for t in &self.targets {
            if !ids.insert(t.id.as_str()) {
                return Err(Error::config(format!("duplicate target id {:?}", t.id)));
            }
            if t.metric.is_empty() || t.experiment.is_empty() {
                return Err(Error::config(format!("target {:?} lacks metric or experiment", t.id)));
            }
            if !(t.weight >= 0.0 && t.weight.is_finite()) {
                return Err(Error::config(format!("target {:?} has a bad weight", t.id)));
            }
            let bounds = [t.nominal, t.ge, t.gt, t.le, t.lt];
            if bounds.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::config(format!("target {:?} has a non-finite bound", t.id)));
            }
            if let (Some(lo), Some(hi)) = (t.lower(), t.upper()) {
                if lo > hi {
                    return Err(Error::config(format!("target {:?} has an empty window", t.id)));
                }
            }
        }
        Ok(())
    }

    pub fn for_experiment<'a>(&'a self, experiment: &'a str) -> impl Iterator<Item = &'a Target> + 'a {
        self.targets.iter().filter(move |t| t.experiment == experiment)
    }

    pub fn get(&self, id: &str) -> Option<&Target> {
        self.targets.iter().find(|t| t.id == id)
    }
}

impl Default for Targets {
    fn default() -> Self {
        Targets::shipped()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn target() -> Target {
        Target {
            id: "t".into(),
            experiment: "x".into(),
            metric: "m".into(),
            description: String::new(),
            nominal: Some(2.0),
            ge: Some(1.6),
            gt: None,
            le: Some(2.4),
            lt: None,
            weight: 1.0,
        }
    }

    #[test]
    fn windows() {
        let t = target();
        assert!(t.check(1.6));
        assert!(t.check(2.4));
        assert!(!t.check(2.41));
        assert!(!t.check(f64::NAN));
        assert_eq!(t.window(), "[1.6, 2.4]");
        let strict = Target {
            ge: None,
            le: None,
            gt: Some(0.0),
            nominal: None,
            ..target()
        };
        assert!(!strict.check(0.0));
        assert!(strict.check(1e-9));
        assert_eq!(strict.window(), "> 0");
    }

    #[test]
    fn loss_grows_outside_window() {
        let t = target();
        assert!(t.loss(2.0) < 1e-12);
        assert!(t.loss(2.3) < t.loss(2.5));
        assert!(t.loss(2.5) > 4.0 * t.loss(2.4));
        assert!(t.loss(1.5) > t.loss(1.7));
    }

    #[test]
    fn shipped_targets_parse() {
        let t = Targets::shipped();
        assert!(t.get("magnitude").is_some());
        assert!(t.for_experiment("decay").count() >= 3);
    }

    #[test]
    fn rejects_bad_files() {
        assert!(Targets::from_json(r#"{"format_version": 2, "targets": []}"#).is_err());
        let dup = r#"{"format_version": 1, "targets": [
            {"id": "a", "experiment": "x", "metric": "m"},
            {"id": "a", "experiment": "x", "metric": "m"}]}"#;
        assert!(Targets::from_json(dup).is_err());
        let empty = r#"{"format_version": 1, "targets": [
            {"id": "a", "experiment": "x", "metric": "m", "ge": 2, "le": 1}]}"#;
        assert!(Targets::from_json(empty).is_err());
    }
}
