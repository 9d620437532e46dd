use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;

use crate::dram::{derive_device, DramDevice, Geometry, ModelParams};
use crate::engine::{Measurement, PufConfig, QueryMode, QueryPlan, KB};
use crate::error::{Error, Result};
use crate::hash;
use crate::pattern::RhType;

const DEVICE_TAG: u64 = 0x6465_7669_6365;
const MEASUREMENT_TAG: u64 = 0x6d65_6173;

pub const DEFAULT_DEVICES: usize = 3;
pub const DEFAULT_REPETITIONS: u32 = 20;
pub const MIN_PUF_SIZE: u64 = 4 * KB;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchSettings {
    pub master_seed: u64,
    pub devices: usize,
    /// Repetitions at scale 1.
    pub repetitions: u32,
    /// Shrinks PUF sizes (never below 4 KB) and repetitions (never below 2).
    pub scale: f64,
    pub params: ModelParams,
    pub geometry: Geometry,
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings {
            master_seed: 0,
            devices: DEFAULT_DEVICES,
            repetitions: DEFAULT_REPETITIONS,
            scale: 1.0,
            params: ModelParams::shipped(),
            geometry: Geometry::default(),
        }
    }
}

type PlanKey = (u64, RhType, u64, u32);

/// Devices, seeds and cached query plans shared by every experiment of a
/// run.
///
/// Device seeds and measurement seeds are derived from the master seed;
/// measurement seeds depend only on the device index and the repetition.
#[derive(Debug, Clone)]
pub struct Bench {
    settings: BenchSettings,
    repetitions: u32,
    devices: Vec<DramDevice>,
    plans: Arc<Mutex<HashMap<PlanKey, Arc<QueryPlan>>>>,
}

pub fn device_seed(master_seed: u64, index: usize) -> u64 {
    hash::hash_coords(master_seed, &[DEVICE_TAG, index as u64])
}

pub fn measurement_seed(master_seed: u64, device_index: usize, repetition: u32) -> u64 {
    hash::hash_coords(master_seed, &[MEASUREMENT_TAG, device_index as u64, u64::from(repetition)])
}

impl Bench {
    pub fn new(settings: BenchSettings) -> Result<Self> {
        if settings.devices == 0 {
            return Err(Error::config("at least one device is required"));
        }
        if settings.repetitions == 0 {
            return Err(Error::config("repetitions must be at least 1"));
        }
        if !(settings.scale > 0.0 && settings.scale <= 1.0) {
            return Err(Error::config(format!("scale must lie in (0, 1], got {}", settings.scale)));
        }
        settings.params.validate()?;
        settings.geometry.validate()?;
        let repetitions = if settings.scale < 1.0 {
            ((f64::from(settings.repetitions) * settings.scale).ceil() as u32).max(2)
        } else {
            settings.repetitions
        };
        let devices = (0..settings.devices)
            .map(|i| derive_device(device_seed(settings.master_seed, i), settings.geometry, settings.params))
            .collect::<Result<Vec<_>>>()?;
        Ok(Bench {
            settings,
            repetitions,
            devices,
            plans: Arc::default(),
        })
    }

    /// Same devices under other model parameters; plans are shared.
    pub fn with_params(&self, params: ModelParams) -> Result<Bench> {
        params.validate()?;
        let devices = self
            .devices
            .iter()
            .map(|d| d.with_params(params))
            .collect::<Result<Vec<_>>>()?;
        Ok(Bench {
            settings: BenchSettings { params, ..self.settings },
            repetitions: self.repetitions,
            devices,
            plans: Arc::clone(&self.plans),
        })
    }

    pub fn settings(&self) -> &BenchSettings {
        &self.settings
    }

    pub fn params(&self) -> &ModelParams {
        &self.settings.params
    }

    pub fn master_seed(&self) -> u64 {
        self.settings.master_seed
    }

    pub fn scale(&self) -> f64 {
        self.settings.scale
    }

    /// Effective repetitions after scaling.
    pub fn repetitions(&self) -> u32 {
        self.repetitions
    }

    pub fn devices(&self) -> &[DramDevice] {
        &self.devices
    }

    pub fn device_seeds(&self) -> Vec<u64> {
        self.devices.iter().map(DramDevice::seed).collect()
    }

    /// `bytes` shrunk by the scale, rounded down to whole rows, at least 4 KB.
    pub fn scaled_size(&self, bytes: u64) -> u64 {
        let row = u64::from(self.settings.geometry.row_size_bytes);
        let scaled = ((bytes as f64 * self.settings.scale) as u64 / row) * row;
        scaled.max(MIN_PUF_SIZE.max(row)).min(bytes.max(row))
    }

    pub fn measurement_seed(&self, device_index: usize, repetition: u32) -> u64 {
        measurement_seed(self.settings.master_seed, device_index, repetition)
    }

    pub fn plan(&self, device_index: usize, config: &PufConfig) -> Result<Arc<QueryPlan>> {
        let device = self.device(device_index)?;
        let key = (device.seed(), config.rh_type, config.puf_size, config.puf_address);
        if let Some(plan) = self.plans.lock().expect("plan cache").get(&key) {
            return Ok(Arc::clone(plan));
        }
        let plan = Arc::new(QueryPlan::for_config(device, config)?);
        self.plans
            .lock()
            .expect("plan cache")
            .entry(key)
            .or_insert_with(|| Arc::clone(&plan));
        Ok(plan)
    }

    fn device(&self, index: usize) -> Result<&DramDevice> {
        self.devices.get(index).ok_or(Error::Bounds {
            index: index as u64,
            limit: self.devices.len() as u64,
        })
    }

    pub fn measure(&self, device_index: usize, config: &PufConfig, repetition: u32, mode: QueryMode) -> Result<Measurement> {
        let plan = self.plan(device_index, config)?;
        plan.measure(
            self.device(device_index)?,
            config,
            self.measurement_seed(device_index, repetition),
            mode,
        )
    }

    /// Every (device, repetition) sample of one configuration, device-major.
    pub fn samples(&self, config: &PufConfig, mode: QueryMode) -> Result<Vec<Vec<Measurement>>> {
        (0..self.devices.len())
            .map(|d| {
                (0..self.repetitions)
                    .into_par_iter()
                    .map(|r| self.measure(d, config, r, mode))
                    .collect::<Result<Vec<_>>>()
            })
            .collect()
    }

    /// Flip counts of every sample of one configuration, device-major.
    pub fn flip_counts(&self, config: &PufConfig, mode: QueryMode) -> Result<Vec<u64>> {
        let jobs: Vec<(usize, u32)> = (0..self.devices.len())
            .flat_map(|d| (0..self.repetitions).map(move |r| (d, r)))
            .collect();
        jobs.par_iter()
            .map(|&(d, r)| self.measure(d, config, r, mode).map(|m| m.flip_count))
            .collect()
    }
}
