//! PUF query physics.
//!
//! A query reserves the pattern region, writes the IVs, stops refresh on the
//! PUF rows and hammers the hammer rows round-robin for `rh_time` seconds of
//! virtual time. Every rate involved is constant for the duration of the
//! query, so whether a cell flips has a closed form: a charged cell flips iff
//!
//! ```text
//! 1 / (retention(T) * jitter) + susceptibility * Σ rate_a * κ_a  >=  1 / rh_time
//! ```
//!
//! where κ is 1 for an uncharged aggressor cell and `charged_aggressor_factor`
//! for a charged one. Uncharged cells never flip.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dram::{
    check_temperature, is_charged, CellAddr, CellDraws, CellPolarity, DramDevice, Geometry,
    ModelParams,
};
use crate::error::{Error, Result};
use crate::hash;
use crate::pattern::{build_row_pattern, hammer_interval, is_extrapolated, RhType, RowPattern};

pub const MEASUREMENT_FORMAT_VERSION: u32 = 1;

pub const KB: u64 = 1024;

/// Query parameters of one PUF measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PufConfig {
    pub rh_type: RhType,
    /// First row of the pattern in bank 0.
    pub puf_address: u32,
    /// Bytes of PUF (victim) rows.
    pub puf_size: u64,
    #[serde(with = "iv_serde")]
    pub hammer_row_iv: u8,
    #[serde(with = "iv_serde")]
    pub puf_row_iv: u8,
    /// Seconds of virtual hammering with refresh disabled.
    pub rh_time: f64,
    #[serde(rename = "temperature_C")]
    pub temperature_c: f64,
}

impl Default for PufConfig {
    /// SSRH, 128 KB, hammer IV 0x55, PUF IV 0xAA, 120 s, 40 °C.
    fn default() -> Self {
        PufConfig {
            rh_type: RhType::Ssrh,
            puf_address: 0,
            puf_size: 128 * KB,
            hammer_row_iv: 0x55,
            puf_row_iv: 0xAA,
            rh_time: 120.0,
            temperature_c: 40.0,
        }
    }
}

impl PufConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rh_time.is_finite() && self.rh_time > 0.0) {
            return Err(Error::config(format!("rh_time must be positive, got {}", self.rh_time)));
        }
        check_temperature(self.temperature_c)
    }

    pub fn pattern(&self, geometry: &Geometry) -> Result<RowPattern> {
        build_row_pattern(self.rh_type, self.puf_size, geometry, self.puf_address)
    }

    /// Hex SHA-256 of the compact JSON encoding; binds helper data to a
    /// query configuration.
    pub fn fingerprint(&self) -> String {
        use sha2::{Digest, Sha256};
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// `0x`-prefixed byte literals such as `"0xAA"`.
pub mod iv_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(iv: &u8, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&format!("0x{iv:02X}"))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u8, D::Error> {
        let s = String::deserialize(d)?;
        super::parse_iv(&s).map_err(serde::de::Error::custom)
    }
}

/// Parses `0xAA`, `0XaA` or `AA`.
pub fn parse_iv(s: &str) -> Result<u8> {
    let digits = s
        .strip_prefix("0x")
        .or_else(|| s.strip_prefix("0X"))
        .unwrap_or(s);
    if digits.is_empty() || digits.len() > 2 {
        return Err(Error::config(format!("IV {s:?} is not a byte literal")));
    }
    u8::from_str_radix(digits, 16).map_err(|_| Error::config(format!("IV {s:?} is not a byte literal")))
}

/// Bit `global_bit_index` of `iv` tiled across memory, MSB-first.
#[inline]
pub fn initial_bit(iv: u8, global_bit_index: u64) -> bool {
    (iv >> (7 - (global_bit_index % 8))) & 1 == 1
}

/// Byte value every byte of a row holds after initialisation.
#[inline]
pub fn initial_byte(iv: u8) -> u8 {
    iv
}

/// One hammer row acting on a victim cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggressor {
    /// Row activations per second.
    pub access_rate: f64,
    /// Charge state of the aggressor cell in the same column.
    pub aggressor_charged: bool,
}

#[inline]
fn kappa(params: &ModelParams, aggressor_charged: bool) -> f64 {
    if aggressor_charged {
        params.charged_aggressor_factor
    } else {
        1.0
    }
}

#[inline]
fn flips(base_rate: f64, hammer_rate: f64, rh_time: f64) -> bool {
    base_rate + hammer_rate >= 1.0 / rh_time
}

/// Whether `cell` (a global device index) flips during a query.
///
/// `jitter` multiplies the cell's retention for this measurement.
pub fn flip_decision(
    device: &DramDevice,
    cell: u64,
    config: &PufConfig,
    aggressors: &[Aggressor],
    jitter: f64,
) -> Result<bool> {
    if !(jitter > 0.0) {
        return Err(Error::config("jitter must be positive"));
    }
    let polarity = crate::dram::cell_polarity(device.geometry(), cell)?;
    if !is_charged(polarity, initial_bit(config.puf_row_iv, cell)) {
        return Ok(false);
    }
    let retention = device.retention_time(cell, config.temperature_c)?;
    let base = 1.0 / (retention * jitter);
    let s = device.susceptibility(cell)?;
    let drive: f64 = aggressors
        .iter()
        .map(|a| a.access_rate * kappa(device.params(), a.aggressor_charged))
        .sum();
    Ok(flips(base, s * drive, config.rh_time))
}

/// Retention multiplier of `cell` in the measurement seeded by
/// `measurement_seed`.
#[inline]
pub fn jitter(params: &ModelParams, measurement_seed: u64, cell: u64) -> f64 {
    if params.noise_log_sd == 0.0 {
        return 1.0;
    }
    (params.noise_log_sd * hash::std_normal(hash::hash_coords(measurement_seed, &[cell]))).exp()
}

/// Per-measurement readout of the PUF rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub device_id: String,
    pub config: PufConfig,
    pub measurement_seed: u64,
    pub decay_only: bool,
    pub flip_count: u64,
    /// Seconds since the Unix epoch; excluded from every content hash.
    pub created_at: Option<u64>,
    /// PUF rows in pattern order, MSB-first within each byte.
    pub readout: Vec<u8>,
}

impl Measurement {
    pub fn bit(&self, index: u64) -> bool {
        (self.readout[(index / 8) as usize] >> (7 - (index % 8))) & 1 == 1
    }

    pub fn cells(&self) -> u64 {
        self.readout.len() as u64 * 8
    }

    /// Stable identifier used in pair reports.
    pub fn id(&self) -> String {
        let mut id = format!("{}:{:016x}", self.device_id, self.measurement_seed);
        if self.decay_only {
            id.push_str(":decay");
        }
        id
    }

    /// Initial value of readout bit `index`.
    pub fn initial_bit(&self, index: u64) -> bool {
        initial_bit(self.config.puf_row_iv, index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QueryMode {
    /// Refresh off and hammer rows accessed.
    Hammer,
    /// Refresh off, no row accesses.
    DecayOnly,
}

/// Parameter-free per-cell draws for every cell in the PUF rows of one
/// pattern, in readout order.
///
/// Building a plan is the expensive part of a query; running it for another
/// measurement seed, time, temperature, IV pair, or model parameter set
/// reuses the draws.
#[derive(Debug, Clone)]
pub struct QueryPlan {
    pattern: RowPattern,
    geometry: Geometry,
    device_seed: u64,
    draws: Vec<CellDraws>,
}

impl QueryPlan {
    pub fn new(device: &DramDevice, rh_type: RhType, puf_size: u64, puf_address: u32) -> Result<Self> {
        let geometry = *device.geometry();
        let pattern = build_row_pattern(rh_type, puf_size, &geometry, puf_address)?;
        let row_bits = geometry.row_bits();
        let draws = pattern
            .puf_rows
            .par_iter()
            .flat_map_iter(|&row| {
                (0..row_bits).map(move |column| {
                    device.cell_draws(CellAddr {
                        bank: pattern.bank,
                        row,
                        column,
                    })
                })
            })
            .collect();
        Ok(QueryPlan {
            pattern,
            geometry,
            device_seed: device.seed(),
            draws,
        })
    }

    pub fn for_config(device: &DramDevice, config: &PufConfig) -> Result<Self> {
        QueryPlan::new(device, config.rh_type, config.puf_size, config.puf_address)
    }

    pub fn pattern(&self) -> &RowPattern {
        &self.pattern
    }

    pub fn device_seed(&self) -> u64 {
        self.device_seed
    }

    pub fn cells(&self) -> u64 {
        self.draws.len() as u64
    }

    /// Access rate of each hammer row, 1/s.
    pub fn access_rate(&self) -> f64 {
        1.0 / hammer_interval(self.pattern.hammer_rows.len())
    }

    pub fn extrapolated_interval(&self) -> bool {
        is_extrapolated(self.pattern.hammer_rows.len())
    }

    fn check(&self, config: &PufConfig) -> Result<()> {
        config.validate()?;
        if config.rh_type != self.pattern.rh_type
            || config.puf_address != self.pattern.start_row
            || config.puf_size != self.pattern.puf_rows.len() as u64 * u64::from(self.geometry.row_size_bytes)
        {
            return Err(Error::Usage("query plan does not match configuration".into()));
        }
        Ok(())
    }

    /// Readout bytes of the PUF rows.
    pub fn run(
        &self,
        params: &ModelParams,
        config: &PufConfig,
        measurement_seed: u64,
        mode: QueryMode,
    ) -> Result<Vec<u8>> {
        self.check(config)?;
        params.validate()?;
        let row_bits = self.geometry.row_bits() as usize;
        let row_bytes = self.geometry.row_size_bytes as usize;
        let temp_factor = params.temperature_factor(config.temperature_c);
        let ln_temp_factor = temp_factor.ln();
        let inv_time = 1.0 / config.rh_time;
        let ln_inv_time = inv_time.ln();
        let rate = self.access_rate();
        let noise_reach = params.noise_log_sd * hash::MAX_ABS_NORMAL + 1e-9;
        // Readout index of each PUF row and its hammer-neighbour count.
        let rows: Vec<(usize, u32, f64)> = self
            .pattern
            .puf_rows
            .iter()
            .enumerate()
            .map(|(i, &row)| (i, row, self.pattern.aggressors_of(row).len() as f64))
            .collect();

        let mut out = vec![0u8; rows.len() * row_bytes];
        out.par_chunks_mut(row_bytes)
            .zip(rows.par_iter())
            .for_each(|(chunk, &(ri, row, n_aggr))| {
                let draws = &self.draws[ri * row_bits..(ri + 1) * row_bits];
                let row_base = self.geometry.cell_index(self.pattern.bank, row, 0);
                let drive = [n_aggr * (rate * kappa(params, false)), n_aggr * (rate * kappa(params, true))];
                for (byte_idx, byte) in chunk.iter_mut().enumerate() {
                    let mut value = initial_byte(config.puf_row_iv);
                    for bit in 0..8usize {
                        let pos = (byte_idx * 8 + bit) as u64;
                        let polarity = CellPolarity::of_bit_position(pos);
                        if !is_charged(polarity, initial_bit(config.puf_row_iv, pos)) {
                            continue;
                        }
                        let d = &draws[pos as usize];
                        let hammer = match mode {
                            QueryMode::DecayOnly => 0.0,
                            QueryMode::Hammer => {
                                let s = params.susceptibility(d);
                                if s == 0.0 {
                                    0.0
                                } else {
                                    let charged = is_charged(polarity, initial_bit(config.hammer_row_iv, pos));
                                    s * drive[charged as usize]
                                }
                            }
                        };
                        let need = inv_time - hammer;
                        let flipped = if need <= 0.0 {
                            true
                        } else {
                            // flip iff ln(jitter) <= margin
                            let ln_need = if hammer == 0.0 { ln_inv_time } else { need.ln() };
                            let margin = -(params.retention_log(d.retention_z) + ln_temp_factor + ln_need);
                            if margin > noise_reach {
                                true
                            } else if margin < -noise_reach {
                                false
                            } else {
                                let retention = params.retention_log(d.retention_z).exp() * temp_factor;
                                let j = jitter(params, measurement_seed, row_base + pos);
                                flips(1.0 / (retention * j), hammer, config.rh_time)
                            }
                        };
                        if flipped {
                            value ^= 0x80 >> bit;
                        }
                    }
                    *byte = value;
                }
            });
        Ok(out)
    }

    /// Runs the query and wraps the readout in a [`Measurement`].
    pub fn measure(
        &self,
        device: &DramDevice,
        config: &PufConfig,
        measurement_seed: u64,
        mode: QueryMode,
    ) -> Result<Measurement> {
        if device.seed() != self.device_seed || *device.geometry() != self.geometry {
            return Err(Error::Usage("query plan was built for a different device".into()));
        }
        let readout = self.run(device.params(), config, measurement_seed, mode)?;
        let iv = initial_byte(config.puf_row_iv);
        let flip_count = readout.iter().map(|b| (b ^ iv).count_ones() as u64).sum();
        Ok(Measurement {
            device_id: device.device_id(),
            config: *config,
            measurement_seed,
            decay_only: mode == QueryMode::DecayOnly,
            flip_count,
            created_at: None,
            readout,
        })
    }
}

/// One PUF query with hammering.
pub fn simulate_query(device: &DramDevice, config: &PufConfig, measurement_seed: u64) -> Result<Measurement> {
    QueryPlan::for_config(device, config)?.measure(device, config, measurement_seed, QueryMode::Hammer)
}

/// The same query with refresh disabled but no hammering.
pub fn simulate_decay_only(
    device: &DramDevice,
    config: &PufConfig,
    measurement_seed: u64,
) -> Result<Measurement> {
    QueryPlan::for_config(device, config)?.measure(device, config, measurement_seed, QueryMode::DecayOnly)
}

/// Contents of every row of the pattern after a query.
#[derive(Debug, Clone)]
pub struct RegionReadout {
    pub pattern: RowPattern,
    /// One entry per pattern row, in row order.
    pub rows: Vec<Vec<u8>>,
}

/// Reads back the whole reserved region, hammer rows included. Hammer rows
/// are refreshed by every access and keep their IV.
pub fn simulate_region(device: &DramDevice, config: &PufConfig, measurement_seed: u64) -> Result<RegionReadout> {
    let plan = QueryPlan::for_config(device, config)?;
    let readout = plan.run(device.params(), config, measurement_seed, QueryMode::Hammer)?;
    let row_bytes = device.geometry().row_size_bytes as usize;
    let mut puf_chunks = readout.chunks(row_bytes);
    let rows = plan
        .pattern
        .roles
        .iter()
        .map(|role| match role {
            crate::pattern::RowRole::Hammer => vec![config.hammer_row_iv; row_bytes],
            crate::pattern::RowRole::Puf => puf_chunks.next().expect("one chunk per PUF row").to_vec(),
        })
        .collect();
    Ok(RegionReadout {
        pattern: plan.pattern,
        rows,
    })
}

/// Wire form: JSON header plus the readout bitmap as lowercase hex.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct MeasurementFile {
    format_version: u32,
    device_id: String,
    config: PufConfig,
    measurement_seed: u64,
    decay_only: bool,
    flip_count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    created_at: Option<u64>,
    readout_hex: String,
}

impl Measurement {
    pub fn to_json(&self) -> String {
        let file = MeasurementFile {
            format_version: MEASUREMENT_FORMAT_VERSION,
            device_id: self.device_id.clone(),
            config: self.config,
            measurement_seed: self.measurement_seed,
            decay_only: self.decay_only,
            flip_count: self.flip_count,
            created_at: self.created_at,
            readout_hex: hex::encode(&self.readout),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("measurement serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        crate::io::check_version(&value, "measurement", MEASUREMENT_FORMAT_VERSION)?;
        let file: MeasurementFile = serde_json::from_value(value)?;
        let readout = hex::decode(&file.readout_hex)
            .map_err(|e| Error::format("measurement", format!("readout_hex: {e}")))?;
        if readout.len() as u64 != file.config.puf_size {
            return Err(Error::format(
                "measurement",
                format!("readout has {} bytes, config says {}", readout.len(), file.config.puf_size),
            ));
        }
        let iv = initial_byte(file.config.puf_row_iv);
        let recount: u64 = readout.iter().map(|b| (b ^ iv).count_ones() as u64).sum();
        if recount != file.flip_count {
            return Err(Error::format(
                "measurement",
                format!("flip_count {} does not match readout ({recount})", file.flip_count),
            ));
        }
        Ok(Measurement {
            device_id: file.device_id,
            config: file.config,
            measurement_seed: file.measurement_seed,
            decay_only: file.decay_only,
            flip_count: file.flip_count,
            created_at: file.created_at,
            readout,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dram::derive_device;

    fn params() -> ModelParams {
        ModelParams {
            retention_log_mean: 7.2,
            retention_log_sd: 1.13,
            susceptibility_log_mean: -16.5,
            susceptibility_log_sd: 0.6,
            susceptible_fraction: 0.03,
            charged_aggressor_factor: 0.3,
            noise_log_sd: 0.03,
            temp_doubling_deg_c: 15.0,
        }
    }

    fn small_config() -> PufConfig {
        PufConfig {
            puf_size: 8 * KB,
            ..PufConfig::default()
        }
    }

    #[test]
    fn initial_bits() {
        assert!(initial_bit(0xAA, 0));
        assert!(!initial_bit(0xAA, 1));
        assert!(initial_bit(0xAA, 8));
        assert!((0..64).all(|i| !initial_bit(0x00, i)));
        assert!((0..64).all(|i| initial_bit(0xFF, i)));
    }

    #[test]
    fn iv_parsing() {
        assert_eq!(parse_iv("0xAA").unwrap(), 0xAA);
        assert_eq!(parse_iv("0x55").unwrap(), 0x55);
        assert_eq!(parse_iv("ff").unwrap(), 0xFF);
        assert!(parse_iv("0x").is_err());
        assert!(parse_iv("0x1FF").is_err());
        assert!(parse_iv("zz").is_err());
    }

    #[test]
    fn flip_decision_examples() {
        let mut p = params();
        p.retention_log_sd = 0.0;
        p.retention_log_mean = 30f64.ln();
        let dev = derive_device(1, Geometry::default(), p).unwrap();
        let cfg = PufConfig {
            rh_time: 60.0,
            ..PufConfig::default()
        };
        // cell 0 is a true-cell written with 1 under 0xAA: charged
        assert!(flip_decision(&dev, 0, &cfg, &[], 1.0).unwrap());
        let cfg55 = PufConfig {
            puf_row_iv: 0x55,
            ..cfg
        };
        let strong = [Aggressor {
            access_rate: 1e9,
            aggressor_charged: false,
        }];
        assert!(!flip_decision(&dev, 0, &cfg55, &strong, 1.0).unwrap());
        // 30 s retention with 10 s query: no flip without disturbance
        let short = PufConfig { rh_time: 10.0, ..cfg };
        assert!(!flip_decision(&dev, 0, &short, &[], 1.0).unwrap());
        assert!(flip_decision(&dev, 0, &cfg, &[], 0.0).is_err());
    }

    #[test]
    fn fast_path_matches_flip_decision() {
        let dev = derive_device(3, Geometry::default(), params()).unwrap();
        for (hiv, piv) in [(0x55u8, 0xAAu8), (0xAA, 0xAA), (0x00, 0xFF), (0xFF, 0x00)] {
            for rh in [RhType::Ssrh, RhType::Dsrh] {
                let cfg = PufConfig {
                    rh_type: rh,
                    hammer_row_iv: hiv,
                    puf_row_iv: piv,
                    puf_address: 5,
                    ..small_config()
                };
                let seed = 99;
                let plan = QueryPlan::for_config(&dev, &cfg).unwrap();
                let m = plan.measure(&dev, &cfg, seed, QueryMode::Hammer).unwrap();
                let rate = plan.access_rate();
                let row_bits = dev.geometry().row_bits();
                for (ri, &row) in plan.pattern().puf_rows.iter().enumerate() {
                    for column in 0..row_bits {
                        let cell = dev.geometry().cell_index(0, row, column);
                        let aggressors: Vec<Aggressor> = plan
                            .pattern()
                            .aggressors_of(row)
                            .iter()
                            .map(|_| Aggressor {
                                access_rate: rate,
                                aggressor_charged: is_charged(
                                    CellPolarity::of_bit_position(column),
                                    initial_bit(hiv, column),
                                ),
                            })
                            .collect();
                        let j = jitter(dev.params(), seed, cell);
                        let expect = flip_decision(&dev, cell, &cfg, &aggressors, j).unwrap();
                        let idx = ri as u64 * row_bits + column;
                        let got = m.bit(idx) != m.initial_bit(idx);
                        assert_eq!(got, expect, "row {row} column {column}");
                    }
                }
            }
        }
    }

    #[test]
    fn zero_flips_for_uncharged_puf_rows() {
        let dev = derive_device(4, Geometry::default(), params()).unwrap();
        for hiv in [0x00, 0x55, 0xAA, 0xFF] {
            let cfg = PufConfig {
                hammer_row_iv: hiv,
                puf_row_iv: 0x55,
                ..small_config()
            };
            assert_eq!(simulate_query(&dev, &cfg, 1).unwrap().flip_count, 0);
        }
    }

    #[test]
    fn deterministic_queries() {
        let dev = derive_device(4, Geometry::default(), params()).unwrap();
        let a = simulate_query(&dev, &small_config(), 17).unwrap();
        let b = simulate_query(&dev, &small_config(), 17).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.readout.len() as u64, small_config().puf_size);
    }

    #[test]
    fn decay_subset_of_hammer() {
        let dev = derive_device(8, Geometry::default(), params()).unwrap();
        let cfg = small_config();
        let h = simulate_query(&dev, &cfg, 5).unwrap();
        let d = simulate_decay_only(&dev, &cfg, 5).unwrap();
        assert!(d.flip_count <= h.flip_count);
        for i in 0..h.cells() {
            if d.bit(i) != d.initial_bit(i) {
                assert_ne!(h.bit(i), h.initial_bit(i), "bit {i}");
            }
        }
    }

    #[test]
    fn no_susceptibility_means_decay_only() {
        let mut p = params();
        p.susceptible_fraction = 0.0;
        let dev = derive_device(8, Geometry::default(), p).unwrap();
        let h = simulate_query(&dev, &small_config(), 5).unwrap();
        let d = simulate_decay_only(&dev, &small_config(), 5).unwrap();
        assert_eq!(h.readout, d.readout);
    }

    #[test]
    fn hammer_rows_keep_their_iv() {
        let dev = derive_device(8, Geometry::default(), params()).unwrap();
        let cfg = PufConfig {
            hammer_row_iv: 0x0F,
            ..small_config()
        };
        let region = simulate_region(&dev, &cfg, 2).unwrap();
        let m = simulate_query(&dev, &cfg, 2).unwrap();
        let mut puf = Vec::new();
        for (role, row) in region.pattern.roles.iter().zip(&region.rows) {
            match role {
                crate::pattern::RowRole::Hammer => assert!(row.iter().all(|&b| b == 0x0F)),
                crate::pattern::RowRole::Puf => puf.extend_from_slice(row),
            }
        }
        assert_eq!(puf, m.readout);
    }

    #[test]
    fn pattern_overflow_is_config_error() {
        let dev = derive_device(8, Geometry::default(), params()).unwrap();
        let cfg = PufConfig {
            puf_address: 126,
            ..small_config()
        };
        assert!(matches!(simulate_query(&dev, &cfg, 1), Err(Error::Config(_))));
        let cfg = PufConfig {
            rh_time: 0.0,
            ..small_config()
        };
        assert!(simulate_query(&dev, &cfg, 1).is_err());
    }

    #[test]
    fn measurement_json_round_trip() {
        let dev = derive_device(8, Geometry::default(), params()).unwrap();
        let mut m = simulate_query(&dev, &small_config(), 3).unwrap();
        m.created_at = Some(1_700_000_000);
        let json = m.to_json();
        assert!(json.contains("\"hammer_row_iv\": \"0x55\""));
        let back = Measurement::from_json(&json).unwrap();
        assert_eq!(back, m);

        let mut v: serde_json::Value = serde_json::from_str(&json).unwrap();
        v["flip_count"] = (m.flip_count + 1).into();
        assert!(Measurement::from_json(&v.to_string()).is_err());
        v["format_version"] = 7.into();
        assert!(matches!(
            Measurement::from_json(&v.to_string()),
            Err(Error::Version { found: 7, .. })
        ));
    }

    #[test]
    fn plan_rejects_other_device_or_config() {
        let dev = derive_device(8, Geometry::default(), params()).unwrap();
        let other = derive_device(9, Geometry::default(), params()).unwrap();
        let plan = QueryPlan::for_config(&dev, &small_config()).unwrap();
        assert!(plan.measure(&other, &small_config(), 1, QueryMode::Hammer).is_err());
        let cfg = PufConfig {
            rh_type: RhType::Dsrh,
            ..small_config()
        };
        assert!(plan.measure(&dev, &cfg, 1, QueryMode::Hammer).is_err());
    }

    #[test]
    fn config_fingerprint_tracks_fields() {
        let a = PufConfig::default();
        let b = PufConfig {
            rh_time: 60.0,
            ..a
        };
        assert_eq!(a.fingerprint(), PufConfig::default().fingerprint());
        assert_ne!(a.fingerprint(), b.fingerprint());
    }
}
