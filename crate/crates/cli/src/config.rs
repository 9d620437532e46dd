//! Optional JSON config file and flag resolution.
//!
//! Every setting resolves as flag, then config file, then shipped default.
//! The winning source of each field is echoed into output metadata.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use hammerpuf::dram::{CalibrationFile, Geometry, ModelParams};
use hammerpuf::engine::{iv_serde, PufConfig};
use hammerpuf::fuzzy::FeParams;
use hammerpuf::io::{check_version, read_to_string};
use hammerpuf::pattern::RhType;
use hammerpuf::Result;

pub const CONFIG_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub format_version: u32,
    #[serde(default)]
    pub query: QuerySection,
    #[serde(default)]
    pub geometry: GeometrySection,
    pub params_file: Option<PathBuf>,
    #[serde(default)]
    pub fe: FeSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuerySection {
    pub rh_type: Option<RhType>,
    pub puf_address: Option<u32>,
    pub puf_size: Option<u64>,
    #[serde(default, with = "opt_iv")]
    pub hammer_row_iv: Option<u8>,
    #[serde(default, with = "opt_iv")]
    pub puf_row_iv: Option<u8>,
    pub rh_time: Option<f64>,
    #[serde(rename = "temperature_C")]
    pub temperature_c: Option<f64>,
}

mod opt_iv {
    use serde::{Deserialize, Deserializer};

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<u8>, D::Error> {
        #[derive(Deserialize)]
        struct Wrap(#[serde(with = "super::iv_serde")] u8);
        Ok(Option::<Wrap>::deserialize(d)?.map(|w| w.0))
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    pub banks: Option<u32>,
    pub rows_per_bank: Option<u32>,
    pub row_size_bytes: Option<u32>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeSection {
    pub key_bits: Option<u32>,
    pub repetition: Option<u32>,
    pub enroll_count: Option<u32>,
    pub fe_seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub master_seed: Option<u64>,
    pub scale: Option<f64>,
    pub repetitions: Option<u32>,
    pub devices: Option<usize>,
    pub targets_file: Option<PathBuf>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(ConfigFile {
                format_version: CONFIG_FORMAT_VERSION,
                ..ConfigFile::default()
            });
        };
        let text = read_to_string(path)?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        check_version(&value, "config file", CONFIG_FORMAT_VERSION)?;
        let file: ConfigFile = serde_json::from_value(value)?;
        debug_assert_eq!(file.format_version, CONFIG_FORMAT_VERSION);
        Ok(file)
    }
}

/// Where each resolved field came from.
#[derive(Debug, Default, Clone)]
pub struct Sources(BTreeMap<String, &'static str>);

impl Sources {
    pub fn pick<T>(&mut self, name: &str, flag: Option<T>, file: Option<T>, default: T) -> T {
        let (value, source) = match (flag, file) {
            (Some(v), _) => (v, "flag"),
            (None, Some(v)) => (v, "config"),
            (None, None) => (default, "default"),
        };
        self.0.insert(name.to_string(), source);
        value
    }

    pub fn record(&mut self, name: &str, source: &'static str) {
        self.0.insert(name.to_string(), source);
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(&self.0).expect("sources serialize")
    }
}

#[derive(Debug, Default, Clone, Copy)]
pub struct QueryFlags {
    pub rh_type: Option<RhType>,
    pub puf_address: Option<u32>,
    pub puf_size: Option<u64>,
    pub hammer_row_iv: Option<u8>,
    pub puf_row_iv: Option<u8>,
    pub rh_time: Option<f64>,
    pub temperature_c: Option<f64>,
}

pub fn resolve_query(flags: &QueryFlags, file: &QuerySection, sources: &mut Sources) -> PufConfig {
    let d = PufConfig::default();
    PufConfig {
        rh_type: sources.pick("rh_type", flags.rh_type, file.rh_type, d.rh_type),
        puf_address: sources.pick("puf_address", flags.puf_address, file.puf_address, d.puf_address),
        puf_size: sources.pick("puf_size", flags.puf_size, file.puf_size, d.puf_size),
        hammer_row_iv: sources.pick("hammer_row_iv", flags.hammer_row_iv, file.hammer_row_iv, d.hammer_row_iv),
        puf_row_iv: sources.pick("puf_row_iv", flags.puf_row_iv, file.puf_row_iv, d.puf_row_iv),
        rh_time: sources.pick("rh_time", flags.rh_time, file.rh_time, d.rh_time),
        temperature_c: sources.pick("temperature_C", flags.temperature_c, file.temperature_c, d.temperature_c),
    }
}

pub fn resolve_geometry(
    flags: &GeometrySection,
    file: &GeometrySection,
    sources: &mut Sources,
) -> Geometry {
    let d = Geometry::default();
    Geometry {
        banks: sources.pick("banks", flags.banks, file.banks, d.banks),
        rows_per_bank: sources.pick("rows_per_bank", flags.rows_per_bank, file.rows_per_bank, d.rows_per_bank),
        row_size_bytes: sources.pick("row_size_bytes", flags.row_size_bytes, file.row_size_bytes, d.row_size_bytes),
    }
}

pub fn resolve_fe(flags: &FeSection, file: &FeSection, enroll_default: u32, sources: &mut Sources) -> FeParams {
    let d = FeParams::default();
    FeParams {
        key_bits: sources.pick("key_bits", flags.key_bits, file.key_bits, d.key_bits),
        repetition: sources.pick("repetition", flags.repetition, file.repetition, d.repetition),
        enroll_count: sources.pick("enroll_count", flags.enroll_count, file.enroll_count, enroll_default),
        fe_seed: sources.pick("fe_seed", flags.fe_seed, file.fe_seed, d.fe_seed),
    }
}

/// Model parameters from `--params`, else the config file's
/// `params_file`, else the shipped calibration. Returns the parameters and
/// a description of their origin.
pub fn resolve_params(flag: Option<&Path>, file: &ConfigFile, sources: &mut Sources) -> Result<(ModelParams, String)> {
    let (path, source) = match (flag, file.params_file.as_deref()) {
        (Some(p), _) => (Some(p), "flag"),
        (None, Some(p)) => (Some(p), "config"),
        (None, None) => (None, "default"),
    };
    sources.record("model_params", source);
    match path {
        Some(p) => {
            let cal = CalibrationFile::from_json(&read_to_string(p)?)?;
            Ok((cal.model_params, p.display().to_string()))
        }
        None => Ok((ModelParams::shipped(), "shipped calibration".into())),
    }
}

/// Byte counts such as `4096`, `4KB`, `128K` or `1MB`.
pub fn parse_size(s: &str) -> std::result::Result<u64, String> {
    let t = s.trim().to_ascii_uppercase();
    let (digits, mult) = if let Some(d) = t.strip_suffix("KB").or_else(|| t.strip_suffix('K')) {
        (d, 1024)
    } else if let Some(d) = t.strip_suffix("MB").or_else(|| t.strip_suffix('M')) {
        (d, 1024 * 1024)
    } else {
        (t.strip_suffix('B').unwrap_or(&t), 1)
    };
    digits
        .trim()
        .parse::<u64>()
        .ok()
        .and_then(|v| v.checked_mul(mult))
        .ok_or_else(|| format!("{s:?} is not a size (examples: 4096, 4KB, 128K)"))
}

pub fn parse_iv_flag(s: &str) -> std::result::Result<u8, String> {
    hammerpuf::engine::parse_iv(s).map_err(|e| e.to_string())
}

pub fn parse_rh_type(s: &str) -> std::result::Result<RhType, String> {
    s.parse().map_err(|e: hammerpuf::Error| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes() {
        assert_eq!(parse_size("4096"), Ok(4096));
        assert_eq!(parse_size("4KB"), Ok(4096));
        assert_eq!(parse_size("128k"), Ok(128 * 1024));
        assert_eq!(parse_size("1MB"), Ok(1 << 20));
        assert!(parse_size("lots").is_err());
    }

    #[test]
    fn precedence() {
        let mut s = Sources::default();
        assert_eq!(s.pick("a", Some(1), Some(2), 3), 1);
        assert_eq!(s.pick("b", None, Some(2), 3), 2);
        assert_eq!(s.pick("c", None::<i32>, None, 3), 3);
        assert_eq!(
            s.to_json(),
            serde_json::json!({"a": "flag", "b": "config", "c": "default"})
        );
    }

    #[test]
    fn config_file_ivs() {
        let c: ConfigFile = serde_json::from_str(
            r#"{"format_version": 1, "query": {"hammer_row_iv": "0xFF", "rh_type": "DSRH"}}"#,
        )
        .unwrap();
        assert_eq!(c.query.hammer_row_iv, Some(0xFF));
        assert_eq!(c.query.puf_row_iv, None);
        assert_eq!(c.query.rh_type, Some(RhType::Dsrh));
        assert!(serde_json::from_str::<ConfigFile>(r#"{"format_version": 1, "typo": 1}"#).is_err());
    }
}
