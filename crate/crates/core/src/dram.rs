//! Simulated DRAM device: geometry, cell polarity, and per-cell physics.
//!
//! A [`DramDevice`] stores only its seed, geometry and model parameters. The
//! per-cell retention time and hammer susceptibility are recomputed on demand
//! from `(device_seed, bank, row, column, parameter-id)` through
//! [`crate::hash`], which stands in for manufacturing variation.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hash;

pub const DEVICE_FORMAT_VERSION: u32 = 1;

/// Temperature at which `retention_log` is expressed.
pub const REFERENCE_TEMP_C: f64 = 40.0;
pub const MIN_TEMP_C: f64 = 0.0;
pub const MAX_TEMP_C: f64 = 100.0;

const PARAM_RETENTION: u64 = 1;
const PARAM_SUSCEPTIBLE_GATE: u64 = 2;
const PARAM_SUSCEPTIBILITY: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Geometry {
    pub banks: u32,
    pub rows_per_bank: u32,
    pub row_size_bytes: u32,
}

impl Default for Geometry {
    /// One simulated bank of 4 KB rows, large enough for a 128 KB
    /// double-sided PUF (65 rows) at any of the first 60 row addresses.
    fn default() -> Self {
        Geometry {
            banks: 1,
            rows_per_bank: 128,
            row_size_bytes: 4096,
        }
    }
}

impl Geometry {
    pub fn validate(&self) -> Result<()> {
        if self.banks < 1 {
            return Err(Error::config("banks must be at least 1"));
        }
        if self.rows_per_bank < 3 {
            return Err(Error::config("rows_per_bank must be at least 3"));
        }
        if self.row_size_bytes < 64 || !self.row_size_bytes.is_power_of_two() {
            return Err(Error::config(
                "row_size_bytes must be a power of two and at least 64",
            ));
        }
        Ok(())
    }

    pub fn row_bits(&self) -> u64 {
        u64::from(self.row_size_bytes) * 8
    }

    pub fn total_cells(&self) -> u64 {
        u64::from(self.banks) * u64::from(self.rows_per_bank) * self.row_bits()
    }

    /// Global cell index of `(bank, row, column)`; `column` counts bits.
    pub fn cell_index(&self, bank: u32, row: u32, column: u64) -> u64 {
        (u64::from(bank) * u64::from(self.rows_per_bank) + u64::from(row)) * self.row_bits() + column
    }

    pub fn cell_addr(&self, index: u64) -> CellAddr {
        let row_bits = self.row_bits();
        let column = index % row_bits;
        let global_row = index / row_bits;
        CellAddr {
            bank: (global_row / u64::from(self.rows_per_bank)) as u32,
            row: (global_row % u64::from(self.rows_per_bank)) as u32,
            column,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellAddr {
    pub bank: u32,
    pub row: u32,
    pub column: u64,
}

/// Standard-normal and uniform draws that, combined with [`ModelParams`],
/// give a cell's retention and susceptibility.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellDraws {
    pub retention_z: f64,
    pub susceptible_gate: f64,
    pub susceptibility_z: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellPolarity {
    /// Logic 1 is stored as charge.
    TrueCell,
    /// Logic 0 is stored as charge.
    AntiCell,
}

impl CellPolarity {
    /// Polarity of a bit position within its byte, MSB-first.
    ///
    /// Even positions are true-cells and odd positions anti-cells, so 0xAA
    /// charges every cell and 0x55 charges none.
    #[inline]
    pub fn of_bit_position(position: u64) -> Self {
        if position.is_multiple_of(2) {
            CellPolarity::TrueCell
        } else {
            CellPolarity::AntiCell
        }
    }
}

#[inline]
pub fn is_charged(polarity: CellPolarity, stored_bit: bool) -> bool {
    match polarity {
        CellPolarity::TrueCell => stored_bit,
        CellPolarity::AntiCell => !stored_bit,
    }
}

/// Knobs of the decay and disturbance model. The shipped values come from
/// the calibration harness, see [`ModelParams::shipped`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Lognormal location of the retention time at 40 °C, in ln(seconds).
    pub retention_log_mean: f64,
    pub retention_log_sd: f64,
    /// Lognormal location of per-access disturbance susceptibility.
    pub susceptibility_log_mean: f64,
    pub susceptibility_log_sd: f64,
    /// Probability that a cell responds to hammering at all.
    pub susceptible_fraction: f64,
    /// Disturbance weight of a charged aggressor relative to an uncharged one.
    pub charged_aggressor_factor: f64,
    /// Per-measurement lognormal jitter on retention.
    pub noise_log_sd: f64,
    /// Degrees Celsius per doubling of the decay rate.
    #[serde(rename = "temp_doubling_degC")]
    pub temp_doubling_deg_c: f64,
}

const SHIPPED_CALIBRATION: &str = include_str!("../data/calibration.json");

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CalibrationFile {
    pub format_version: u32,
    pub model_params: ModelParams,
    /// Free-form provenance written by the calibration harness.
    #[serde(default)]
    pub provenance: serde_json::Value,
}

pub const CALIBRATION_FORMAT_VERSION: u32 = 1;

impl CalibrationFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let file: CalibrationFile = serde_json::from_str(text)?;
        if file.format_version != CALIBRATION_FORMAT_VERSION {
            return Err(Error::Version {
                what: "calibration file",
                found: file.format_version,
                expected: CALIBRATION_FORMAT_VERSION,
            });
        }
        file.model_params.validate()?;
        Ok(file)
    }
}

impl ModelParams {
    /// Parameters from the calibration file compiled into the crate.
    pub fn shipped() -> Self {
        CalibrationFile::from_json(SHIPPED_CALIBRATION)
            .expect("shipped calibration file is valid")
            .model_params
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.retention_log_mean,
            self.retention_log_sd,
            self.susceptibility_log_mean,
            self.susceptibility_log_sd,
            self.susceptible_fraction,
            self.charged_aggressor_factor,
            self.noise_log_sd,
            self.temp_doubling_deg_c,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !finite {
            return Err(Error::config("model parameters must be finite"));
        }
        if self.retention_log_sd < 0.0 || self.susceptibility_log_sd < 0.0 || self.noise_log_sd < 0.0 {
            return Err(Error::config("standard deviations must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.susceptible_fraction) {
            return Err(Error::config("susceptible_fraction must lie in [0, 1]"));
        }
        if !(self.charged_aggressor_factor > 0.0 && self.charged_aggressor_factor <= 1.0) {
            return Err(Error::config("charged_aggressor_factor must lie in (0, 1]"));
        }
        if self.temp_doubling_deg_c <= 0.0 {
            return Err(Error::config("temp_doubling_degC must be positive"));
        }
        Ok(())
    }

    #[inline]
    pub fn retention_log(&self, retention_z: f64) -> f64 {
        self.retention_log_mean + self.retention_log_sd * retention_z
    }

    #[inline]
    pub fn susceptibility(&self, draws: &CellDraws) -> f64 {
        if draws.susceptible_gate >= self.susceptible_fraction {
            return 0.0;
        }
        (self.susceptibility_log_mean + self.susceptibility_log_sd * draws.susceptibility_z).exp()
    }

    /// Multiplier applied to retention at `temperature_c`.
    #[inline]
    pub fn temperature_factor(&self, temperature_c: f64) -> f64 {
        (-(temperature_c - REFERENCE_TEMP_C) / self.temp_doubling_deg_c).exp2()
    }

    /// Copy with measurement jitter removed.
    pub fn noiseless(mut self) -> Self {
        self.noise_log_sd = 0.0;
        self
    }
}

impl Default for ModelParams {
    fn default() -> Self {
        ModelParams::shipped()
    }
}

/// Immutable simulated device.
#[derive(Debug, Clone, PartialEq)]
pub struct DramDevice {
    seed: u64,
    geometry: Geometry,
    params: ModelParams,
}

pub fn derive_device(device_seed: u64, geometry: Geometry, params: ModelParams) -> Result<DramDevice> {
    geometry.validate()?;
    params.validate()?;
    Ok(DramDevice {
        seed: device_seed,
        geometry,
        params,
    })
}

/// Polarity of a cell by global bit index.
pub fn cell_polarity(geometry: &Geometry, global_bit_index: u64) -> Result<CellPolarity> {
    let limit = geometry.total_cells();
    if global_bit_index >= limit {
        return Err(Error::Bounds {
            index: global_bit_index,
            limit,
        });
    }
    Ok(CellPolarity::of_bit_position(global_bit_index % 8))
}

pub fn check_temperature(temperature_c: f64) -> Result<()> {
    if !(MIN_TEMP_C..=MAX_TEMP_C).contains(&temperature_c) {
        return Err(Error::config(format!(
            "temperature {temperature_c} °C outside [{MIN_TEMP_C}, {MAX_TEMP_C}]"
        )));
    }
    Ok(())
}

impl DramDevice {
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// Same physical cells under different model parameters.
    pub fn with_params(&self, params: ModelParams) -> Result<DramDevice> {
        derive_device(self.seed, self.geometry, params)
    }

    #[inline]
    fn cell_hash(&self, addr: CellAddr, param_id: u64) -> u64 {
        hash::hash_coords(
            self.seed,
            &[u64::from(addr.bank), u64::from(addr.row), addr.column, param_id],
        )
    }

    fn check_cell(&self, cell: u64) -> Result<CellAddr> {
        let limit = self.geometry.total_cells();
        if cell >= limit {
            return Err(Error::Bounds { index: cell, limit });
        }
        Ok(self.geometry.cell_addr(cell))
    }

    /// Parameter-free random draws behind a cell's physics.
    #[inline]
    pub fn cell_draws(&self, addr: CellAddr) -> CellDraws {
        CellDraws {
            retention_z: hash::std_normal(self.cell_hash(addr, PARAM_RETENTION)),
            susceptible_gate: hash::unit_open(self.cell_hash(addr, PARAM_SUSCEPTIBLE_GATE)),
            susceptibility_z: hash::std_normal(self.cell_hash(addr, PARAM_SUSCEPTIBILITY)),
        }
    }

    /// ln(retention seconds) at the reference temperature.
    #[inline]
    pub fn retention_log_at(&self, addr: CellAddr) -> f64 {
        let z = hash::std_normal(self.cell_hash(addr, PARAM_RETENTION));
        self.params.retention_log(z)
    }

    /// Disturbance susceptibility (flip-rate contribution per row access per
    /// second); zero for insusceptible cells.
    #[inline]
    pub fn susceptibility_at(&self, addr: CellAddr) -> f64 {
        self.params.susceptibility(&self.cell_draws(addr))
    }

    pub fn retention_log(&self, cell: u64) -> Result<f64> {
        Ok(self.retention_log_at(self.check_cell(cell)?))
    }

    pub fn susceptibility(&self, cell: u64) -> Result<f64> {
        Ok(self.susceptibility_at(self.check_cell(cell)?))
    }

    /// Retention time in seconds at `temperature_c`.
    pub fn retention_time(&self, cell: u64, temperature_c: f64) -> Result<f64> {
        check_temperature(temperature_c)?;
        let log = self.retention_log(cell)?;
        Ok(log.exp() * self.params.temperature_factor(temperature_c))
    }

    pub fn descriptor(&self) -> DeviceDescriptor {
        DeviceDescriptor {
            format_version: DEVICE_FORMAT_VERSION,
            device_seed: self.seed,
            geometry: self.geometry,
            model_params: self.params,
        }
    }

    pub fn device_id(&self) -> String {
        self.descriptor().device_id()
    }
}

/// Serialized form of a device. Per-cell arrays are never stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceDescriptor {
    pub format_version: u32,
    pub device_seed: u64,
    pub geometry: Geometry,
    pub model_params: ModelParams,
}

impl DeviceDescriptor {
    /// First 16 hex digits of SHA-256 over the compact JSON encoding.
    pub fn device_id(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("descriptor serializes");
        let digest = Sha256::digest(&bytes);
        hex::encode(&digest[..8])
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("descriptor serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        crate::io::check_version(&value, "device descriptor", DEVICE_FORMAT_VERSION)?;
        Ok(serde_json::from_value(value)?)
    }

    pub fn into_device(self) -> Result<DramDevice> {
        derive_device(self.device_seed, self.geometry, self.model_params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> ModelParams {
        ModelParams {
            retention_log_mean: 7.0,
            retention_log_sd: 1.0,
            susceptibility_log_mean: -18.0,
            susceptibility_log_sd: 2.0,
            susceptible_fraction: 0.5,
            charged_aggressor_factor: 0.4,
            noise_log_sd: 0.02,
            temp_doubling_deg_c: 10.0,
        }
    }

    fn small() -> Geometry {
        Geometry {
            banks: 2,
            rows_per_bank: 4,
            row_size_bytes: 64,
        }
    }

    #[test]
    fn geometry_validation() {
        assert!(Geometry::default().validate().is_ok());
        let bad = [
            Geometry { banks: 0, ..small() },
            Geometry { rows_per_bank: 2, ..small() },
            Geometry { row_size_bytes: 32, ..small() },
            Geometry { row_size_bytes: 96, ..small() },
        ];
        for g in bad {
            assert!(matches!(derive_device(1, g, params()), Err(Error::Config(_))), "{g:?}");
        }
    }

    #[test]
    fn total_cells_and_addressing() {
        let g = small();
        assert_eq!(g.total_cells(), 2 * 4 * 64 * 8);
        let idx = g.cell_index(1, 3, 17);
        assert_eq!(g.cell_addr(idx), CellAddr { bank: 1, row: 3, column: 17 });
    }

    #[test]
    fn polarity_layout() {
        let g = small();
        assert_eq!(cell_polarity(&g, 0).unwrap(), CellPolarity::TrueCell);
        assert_eq!(cell_polarity(&g, 1).unwrap(), CellPolarity::AntiCell);
        assert_eq!(cell_polarity(&g, 8).unwrap(), CellPolarity::TrueCell);
        for i in 0..64 {
            assert_eq!(cell_polarity(&g, i).unwrap(), cell_polarity(&g, i + 8).unwrap());
        }
        assert!(matches!(
            cell_polarity(&g, g.total_cells()),
            Err(Error::Bounds { .. })
        ));
    }

    #[test]
    fn charge_truth_table() {
        use CellPolarity::*;
        assert!(is_charged(TrueCell, true));
        assert!(!is_charged(TrueCell, false));
        assert!(!is_charged(AntiCell, true));
        assert!(is_charged(AntiCell, false));
        for p in [TrueCell, AntiCell] {
            for b in [false, true] {
                assert_eq!(is_charged(p, b), !is_charged(p, !b));
            }
        }
    }

    #[test]
    fn derivation_is_deterministic() {
        let a = derive_device(42, small(), params()).unwrap();
        let b = derive_device(42, small(), params()).unwrap();
        let c = derive_device(43, small(), params()).unwrap();
        let ra: Vec<f64> = (0..a.geometry().total_cells()).map(|i| a.retention_log(i).unwrap()).collect();
        let rb: Vec<f64> = (0..b.geometry().total_cells()).map(|i| b.retention_log(i).unwrap()).collect();
        let rc: Vec<f64> = (0..c.geometry().total_cells()).map(|i| c.retention_log(i).unwrap()).collect();
        assert_eq!(ra, rb);
        assert_ne!(ra, rc);
    }

    #[test]
    fn retention_temperature_scaling() {
        let dev = derive_device(5, small(), params()).unwrap();
        let base = dev.retention_time(10, 40.0).unwrap();
        assert_eq!(base, dev.retention_log(10).unwrap().exp());
        let warm = dev.retention_time(10, 50.0).unwrap();
        assert!((warm - base / 2.0).abs() < 1e-9 * base);
        assert!(dev.retention_time(10, 100.5).is_err());
        assert!(dev.retention_time(10, -1.0).is_err());
        assert!(matches!(dev.retention_time(1 << 40, 40.0), Err(Error::Bounds { .. })));
    }

    #[test]
    fn susceptibility_fraction_respected() {
        let mut p = params();
        p.susceptible_fraction = 0.0;
        let dev = derive_device(9, small(), p).unwrap();
        assert!((0..dev.geometry().total_cells()).all(|i| dev.susceptibility(i).unwrap() == 0.0));

        p.susceptible_fraction = 0.25;
        let dev = derive_device(9, Geometry::default(), p).unwrap();
        let n = 100_000u64;
        let hits = (0..n).filter(|&i| dev.susceptibility(i).unwrap() > 0.0).count();
        let frac = hits as f64 / n as f64;
        assert!((frac - 0.25).abs() < 0.01, "{frac}");
    }

    #[test]
    fn param_validation() {
        let mut p = params();
        p.charged_aggressor_factor = 0.0;
        assert!(p.validate().is_err());
        p = params();
        p.susceptible_fraction = 1.5;
        assert!(p.validate().is_err());
        p = params();
        p.noise_log_sd = -0.1;
        assert!(p.validate().is_err());
    }

    #[test]
    fn descriptor_round_trip_and_id() {
        let dev = derive_device(1, Geometry::default(), params()).unwrap();
        let json = dev.descriptor().to_json();
        let back = DeviceDescriptor::from_json(&json).unwrap().into_device().unwrap();
        assert_eq!(back, dev);
        assert_eq!(back.device_id(), dev.device_id());
        assert_eq!(dev.device_id().len(), 16);
        let other = derive_device(2, Geometry::default(), params()).unwrap();
        assert_ne!(other.device_id(), dev.device_id());
    }

    #[test]
    fn descriptor_rejects_unknown_version() {
        let dev = derive_device(1, small(), params()).unwrap();
        let mut v: serde_json::Value = serde_json::to_value(dev.descriptor()).unwrap();
        v["format_version"] = 99.into();
        let err = DeviceDescriptor::from_json(&v.to_string()).unwrap_err();
        assert!(matches!(err, Error::Version { found: 99, .. }));
    }

    #[test]
    fn shipped_params_are_valid() {
        ModelParams::shipped().validate().unwrap();
    }
}
