//! Evaluation sweeps over simulated devices and the calibration harness.
//!
//! Every run goes through a [`Bench`]: a master seed, a set of derived
//! devices and a cache of query plans. Reports carry the model parameters,
//! seeds, grid statistics and the declared targets with pass/fail.

mod bench;
mod calibrate;
mod report;
mod runs;
mod targets;

pub use bench::{device_seed, measurement_seed, Bench, BenchSettings, DEFAULT_DEVICES, DEFAULT_REPETITIONS, MIN_PUF_SIZE};
pub use calibrate::{
    calibrate, calibration_report, evaluate, knob, CalibrationOutcome, CalibrationSettings, Evaluation, Knob, KNOBS,
};
pub use report::{
    histogram_svg, ExperimentReport, FlipStats, GridCell, JaccardSummary, RuntimeInfo, Table, REPORT_FORMAT_VERSION,
};
pub use runs::{
    run_decay_comparison, run_experiment, run_iv_matrix, run_rh_type_comparison, run_suite, run_temperature_sweep,
    run_uniqueness, ExperimentId, IVS, RH_TIMES, SIZES, TEMPERATURES_C,
};
pub use targets::{Target, TargetOutcome, Targets, TARGETS_FORMAT_VERSION};
