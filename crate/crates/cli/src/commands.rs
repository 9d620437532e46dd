use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use serde_json::{json, Value};

use hammerpuf::dram::{derive_device, DeviceDescriptor, DramDevice};
use hammerpuf::engine::{Measurement, QueryMode, QueryPlan};
use hammerpuf::experiments::{
    calibrate, calibration_report, knob, run_experiment, Bench, BenchSettings, CalibrationSettings, ExperimentId,
    ExperimentReport, Targets, DEFAULT_DEVICES, DEFAULT_REPETITIONS, KNOBS,
};
use hammerpuf::fuzzy::{enroll, reconstruct, HelperData, Reproduction};
use hammerpuf::io::{read_to_string, timestamp, write_atomic, Workspace};
use hammerpuf::metrics::{
    entropy_bits, extract_flip_set, inter_pairs, intra_pairs, key_material_size, pairs_csv, FlipSet, JaccardStats,
};
use hammerpuf::{Error, Result};

use crate::config::{
    resolve_fe, resolve_geometry, resolve_params, resolve_query, ConfigFile, FeSection, GeometrySection, QueryFlags,
    Sources,
};
use crate::{
    Cli, Command, DeviceCommand, DeviceGenArgs, EnrollArgs, ExperimentArgs, ExperimentName, FeCommand, MetricsArgs,
    MetricsMode, OutputFormat, PufCommand, QueryArgs, QueryFlagArgs, ReconstructArgs,
};

/// 1 for domain failures, 2 for everything caused by input.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Domain(_) => 1,
        _ => 2,
    }
}

struct Ctx {
    workspace: Workspace,
    config: ConfigFile,
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    let workspace = cli.workspace.map(Workspace::new).unwrap_or_else(Workspace::from_env);
    let config = ConfigFile::load(cli.config.as_deref())?;
    let ctx = Ctx { workspace, config };
    match cli.command {
        Command::Device(DeviceCommand::Gen(a)) => device_gen(&ctx, a),
        Command::Puf(PufCommand::Query(a)) => puf_query(&ctx, a),
        Command::Metrics(a) => metrics(a),
        Command::Fe(FeCommand::Enroll(a)) => fe_enroll(&ctx, a),
        Command::Fe(FeCommand::Reconstruct(a)) => fe_reconstruct(&ctx, a),
        Command::Experiment(a) => experiment(&ctx, a),
    }
}

fn metadata(sources: &Sources, extra: Value) -> Value {
    let mut m = json!({
        "tool": "hammerpuf",
        "tool_version": env!("CARGO_PKG_VERSION"),
        "config_sources": sources.to_json(),
    });
    if let (Value::Object(base), Value::Object(more)) = (&mut m, extra) {
        base.extend(more);
    }
    m
}

/// Pretty JSON of `body` with a trailing `metadata` object.
fn with_metadata(body: &str, meta: Value) -> Result<String> {
    let mut value: Value = serde_json::from_str(body)?;
    if let Value::Object(map) = &mut value {
        map.insert("metadata".into(), meta);
    }
    let mut s = serde_json::to_string_pretty(&value)?;
    s.push('\n');
    Ok(s)
}

fn load_device(path: &Path) -> Result<DramDevice> {
    DeviceDescriptor::from_json(&read_to_string(path)?)?.into_device()
}

fn load_measurements(paths: &[PathBuf]) -> Result<Vec<Measurement>> {
    paths
        .iter()
        .map(|p| Measurement::from_json(&read_to_string(p)?))
        .collect()
}

fn emit(out: Option<&Path>, body: &str, force: bool) -> Result<()> {
    match out {
        Some(p) => {
            write_atomic(p, body.as_bytes(), force)?;
            eprintln!("wrote {}", p.display());
        }
        None => print!("{body}"),
    }
    Ok(())
}

fn device_gen(ctx: &Ctx, a: DeviceGenArgs) -> Result<ExitCode> {
    let mut sources = Sources::default();
    sources.record("seed", "flag");
    let row_size = a
        .row_size
        .map(|v| u32::try_from(v).map_err(|_| Error::Config("row_size_bytes does not fit in 32 bits".into())))
        .transpose()?;
    let flags = GeometrySection {
        banks: a.banks,
        rows_per_bank: a.rows_per_bank,
        row_size_bytes: row_size,
    };
    let geometry = resolve_geometry(&flags, &ctx.config.geometry, &mut sources);
    let (params, origin) = resolve_params(a.params.as_deref(), &ctx.config, &mut sources)?;
    if a.params.is_none() && ctx.config.params_file.is_none() {
        eprintln!("note: no params file given; using the shipped calibration");
    }
    let device = derive_device(a.seed, geometry, params)?;
    let descriptor = device.descriptor();
    let id = descriptor.device_id();
    let body = with_metadata(&descriptor.to_json(), metadata(&sources, json!({ "params_origin": origin })))?;
    let path = a.out.unwrap_or_else(|| ctx.workspace.devices().join(format!("{id}.json")));
    write_atomic(&path, body.as_bytes(), a.force)?;
    println!("{id}");
    eprintln!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn query_flags(q: &QueryFlagArgs) -> QueryFlags {
    QueryFlags {
        rh_type: q.rh_type,
        puf_address: q.puf_address,
        puf_size: q.puf_size,
        hammer_row_iv: q.hammer_iv,
        puf_row_iv: q.puf_iv,
        rh_time: q.rh_time,
        temperature_c: q.temperature,
    }
}

fn puf_query(ctx: &Ctx, a: QueryArgs) -> Result<ExitCode> {
    let mut sources = Sources::default();
    let device = load_device(&a.device)?;
    let config = resolve_query(&query_flags(&a.query), &ctx.config.query, &mut sources);
    sources.record("measurement_seed", "flag");
    let mode = if a.decay_only { QueryMode::DecayOnly } else { QueryMode::Hammer };
    let plan = QueryPlan::for_config(&device, &config)?;
    let mut m = plan.measure(&device, &config, a.measurement_seed, mode)?;
    m.created_at = Some(timestamp());
    let meta = metadata(
        &sources,
        json!({
            "device_file": a.device.display().to_string(),
            "pattern": plan.pattern().render(),
            "hammer_rows": plan.pattern().hammer_rows.len(),
            "access_interval_us": 1e6 / plan.access_rate(),
            "interval_extrapolated": plan.extrapolated_interval(),
        }),
    );
    let body = with_metadata(&m.to_json(), meta)?;
    let suffix = if a.decay_only { "-decay" } else { "" };
    let path = a.out.unwrap_or_else(|| {
        ctx.workspace
            .measurements()
            .join(format!("{}-{}-{:016x}{suffix}.json", m.device_id, &config.fingerprint()[..8], m.measurement_seed))
    });
    write_atomic(&path, body.as_bytes(), a.force)?;
    println!("{} flips={}", path.display(), m.flip_count);
    Ok(ExitCode::SUCCESS)
}

fn stats_json(mode: &str, stats: &JaccardStats) -> Value {
    json!({
        "mode": mode,
        "count": stats.count,
        "min": stats.min,
        "max": stats.max,
        "mean": stats.mean,
        "histogram": stats.histogram,
    })
}

fn metrics(a: MetricsArgs) -> Result<ExitCode> {
    let ms = load_measurements(&a.measurements)?;
    let body = match a.mode {
        MetricsMode::Intra => {
            if ms.len() < 2 {
                return Err(Error::Usage("intra mode needs at least two measurements".into()));
            }
            if ms.iter().any(|m| m.device_id != ms[0].device_id || m.config != ms[0].config) {
                return Err(Error::Usage(
                    "intra mode needs measurements of one device under one configuration".into(),
                ));
            }
            let sets: Vec<FlipSet> = ms.iter().map(extract_flip_set).collect();
            let pairs = intra_pairs(&sets);
            match a.format {
                OutputFormat::Csv => pairs_csv(&pairs),
                OutputFormat::Json => {
                    let values: Vec<f64> = pairs.iter().map(|p| p.jaccard).collect();
                    pretty(&stats_json("intra", &JaccardStats::from_values(&values)?))?
                }
            }
        }
        MetricsMode::Inter => {
            let mut groups: Vec<(String, Vec<FlipSet>)> = Vec::new();
            for m in &ms {
                let set = extract_flip_set(m);
                match groups.iter_mut().find(|(id, _)| *id == m.device_id) {
                    Some((_, g)) => g.push(set),
                    None => groups.push((m.device_id.clone(), vec![set])),
                }
            }
            if groups.len() < 2 {
                return Err(Error::Usage("inter mode needs measurements of at least two devices".into()));
            }
            let sets: Vec<Vec<FlipSet>> = groups.into_iter().map(|(_, g)| g).collect();
            let pairs = inter_pairs(&sets);
            match a.format {
                OutputFormat::Csv => pairs_csv(&pairs),
                OutputFormat::Json => {
                    let values: Vec<f64> = pairs.iter().map(|p| p.jaccard).collect();
                    pretty(&stats_json("inter", &JaccardStats::from_values(&values)?))?
                }
            }
        }
        MetricsMode::Entropy => {
            let rows = ms
                .iter()
                .map(|m| Ok((m.id(), entropy_bits(m.cells(), m.flip_count)?)))
                .collect::<Result<Vec<_>>>()?;
            let min = rows
                .iter()
                .min_by_key(|(_, e)| e.flips)
                .map(|(_, e)| *e)
                .expect("at least one measurement");
            let key_bytes = if min.fractional > 0.0 {
                Some(key_material_size(a.key_bits, min.fractional)?)
            } else {
                None
            };
            match a.format {
                OutputFormat::Csv => {
                    let mut out = String::from("id,cells,flips,entropy_bits,fractional_entropy\n");
                    for (id, e) in rows.iter().map(|(id, e)| (id.as_str(), e)).chain([("min", &min)]) {
                        out.push_str(&format!("{id},{},{},{:.3},{:.6}\n", e.cells, e.flips, e.bits, e.fractional));
                    }
                    out
                }
                OutputFormat::Json => pretty(&json!({
                    "mode": "entropy",
                    "measurements": rows.iter().map(|(id, e)| json!({"id": id, "entropy": e})).collect::<Vec<_>>(),
                    "min": min,
                    "key_bits": a.key_bits,
                    "key_material_bytes": key_bytes,
                }))?,
            }
        }
    };
    emit(a.out.as_deref(), &body, a.force)?;
    Ok(ExitCode::SUCCESS)
}

fn pretty(v: &Value) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

fn fe_sections(a: &crate::FeFlagArgs) -> FeSection {
    FeSection {
        key_bits: a.key_bits,
        repetition: a.repetition,
        enroll_count: a.enroll_count,
        fe_seed: a.fe_seed,
    }
}

fn fe_enroll(ctx: &Ctx, a: EnrollArgs) -> Result<ExitCode> {
    let mut sources = Sources::default();
    let ms = load_measurements(&a.measurements)?;
    let params = resolve_fe(&fe_sections(&a.fe), &ctx.config.fe, ms.len() as u32, &mut sources);
    if params.enroll_count as usize != ms.len() {
        return Err(Error::Usage(format!(
            "enroll_count is {} but {} measurements were given",
            params.enroll_count,
            ms.len()
        )));
    }
    sources.record("rng_seed", "flag");
    let (key, helper) = enroll(&ms, &params, a.rng_seed)?;
    let meta = metadata(&sources, json!({ "device_id": ms[0].device_id }));
    let body = with_metadata(&helper.to_json(), meta)?;
    let path = a.out.unwrap_or_else(|| {
        ctx.workspace
            .helpers()
            .join(format!("{}-{}.json", ms[0].device_id, hex_prefix(&helper.key_check)))
    });
    write_atomic(&path, body.as_bytes(), a.force)?;
    if let Some(k) = &a.key_out {
        write_atomic(k, format!("{}\n", key.to_hex()).as_bytes(), a.force)?;
    }
    println!("{}", path.display());
    if a.reveal_key {
        println!("key {}", key.to_hex());
    }
    Ok(ExitCode::SUCCESS)
}

fn hex_prefix(bytes: &[u8]) -> String {
    bytes[..4].iter().map(|b| format!("{b:02x}")).collect()
}

fn fe_reconstruct(_ctx: &Ctx, a: ReconstructArgs) -> Result<ExitCode> {
    let helper = HelperData::from_json(&read_to_string(&a.helper)?)?;
    let ms = load_measurements(&a.measurements)?;
    match reconstruct(&ms, &helper)? {
        Reproduction::Recovered(key) => {
            println!("recovered");
            if a.reveal_key {
                println!("key {}", key.to_hex());
            }
            if let Some(k) = &a.key_out {
                write_atomic(k, format!("{}\n", key.to_hex()).as_bytes(), a.force)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Reproduction::Mismatch => {
            println!("mismatch");
            Ok(ExitCode::from(1))
        }
    }
}

fn print_report(report: &ExperimentReport, files: &[PathBuf]) {
    for t in &report.targets {
        let value = t.value.map(|v| format!("{v:.6}")).unwrap_or_else(|| "n/a".into());
        println!(
            "{} {} {} {} {}",
            report.experiment,
            if t.pass { "PASS" } else { "FAIL" },
            t.id,
            value,
            t.window
        );
    }
    for note in &report.notes {
        println!("{} note: {note}", report.experiment);
    }
    for f in files {
        eprintln!("wrote {}", f.display());
    }
}

fn experiment(ctx: &Ctx, a: ExperimentArgs) -> Result<ExitCode> {
    let mut sources = Sources::default();
    let file = &ctx.config.experiment;
    let master_seed = sources.pick("master_seed", a.master_seed, file.master_seed, 0);
    let scale = sources.pick("scale", a.scale, file.scale, 1.0);
    let repetitions = sources.pick("repetitions", a.repetitions, file.repetitions, DEFAULT_REPETITIONS);
    let devices = sources.pick("devices", a.devices, file.devices, DEFAULT_DEVICES);
    let (params, _) = resolve_params(a.params.as_deref(), &ctx.config, &mut sources)?;
    let targets_path = a.targets.as_deref().or(file.targets_file.as_deref());
    let targets = match targets_path {
        Some(p) => Targets::from_json(&read_to_string(p)?)?,
        None => Targets::shipped(),
    };
    let base = resolve_query(&query_flags(&a.query), &ctx.config.query, &mut sources);
    base.validate()?;
    let bench = Bench::new(BenchSettings {
        master_seed,
        devices,
        repetitions,
        scale,
        params,
        ..BenchSettings::default()
    })?;
    let out_dir = a.out_dir.clone().unwrap_or_else(|| ctx.workspace.reports());

    let ids: Vec<ExperimentId> = match a.name {
        ExperimentName::IvMatrix => vec![ExperimentId::IvMatrix],
        ExperimentName::Temperature => vec![ExperimentId::Temperature],
        ExperimentName::RhType => vec![ExperimentId::RhType],
        ExperimentName::Decay => vec![ExperimentId::Decay],
        ExperimentName::Uniqueness => vec![ExperimentId::Uniqueness],
        ExperimentName::All => ExperimentId::ALL.to_vec(),
        ExperimentName::Calibrate => return run_calibration(&a, &bench, &base, &targets, &out_dir),
    };
    let mut failed = false;
    for id in ids {
        let report = run_experiment(id, &bench, &base, &targets)?;
        let files = report.write(&out_dir, a.svg, a.force)?;
        print_report(&report, &files);
        failed |= !report.all_pass();
    }
    if failed && a.strict {
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}

fn run_calibration(
    a: &ExperimentArgs,
    bench: &Bench,
    base: &hammerpuf::PufConfig,
    targets: &Targets,
    out_dir: &Path,
) -> Result<ExitCode> {
    let began = Instant::now();
    let knobs = if a.knobs.is_empty() {
        KNOBS.to_vec()
    } else {
        a.knobs.iter().map(|k| knob(k.trim())).collect::<Result<Vec<_>>>()?
    };
    let settings = CalibrationSettings {
        budget: a.budget,
        knobs,
        ..CalibrationSettings::default()
    };
    let outcome = calibrate(bench, base, targets, *bench.params(), &settings)?;
    let report = calibration_report(bench, base, &outcome, began);
    let mut files = report.write(out_dir, false, a.force)?;
    let candidate = out_dir.join(format!("calibration-candidate-{:016x}.json", bench.master_seed()));
    let mut body = serde_json::to_string_pretty(&outcome.to_file(bench))?;
    body.push('\n');
    write_atomic(&candidate, body.as_bytes(), a.force)?;
    files.push(candidate);
    print_report(&report, &files);
    if !outcome.converged {
        println!("calibrate partial: budget exhausted with targets outside tolerance");
    }
    if !outcome.converged && a.strict {
        return Ok(ExitCode::from(1));
    }
    Ok(ExitCode::SUCCESS)
}
