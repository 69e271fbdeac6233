use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use hetsim::behavior::BehaviorError;
use hetsim::config::{read_json, InstanceSpec};
use hetsim::cost::{fit_linear_model, Sample};
use hetsim::engine::{IdleScope, SimError, SimOptions};
use hetsim::model::{validate_mapping, ParamValue};
use hetsim::sched::{device_power, select_and_map_under_limit};
use hetsim::sweep::{expand_suite, results_csv, run_suite, Suite};
use serde_json::json;

const INVALID: u8 = 2;
const SIM_FAILED: u8 = 3;
const SWEEP_FAILED: u8 = 4;

/// Time and power simulation of parallel applications on heterogeneous systems.
#[derive(Parser)]
#[command(name = "hetsim", version)]
struct Cli {
    /// Devices whose idle power counts: all, or only those hosting processes.
    #[arg(long, global = true, value_name = "all|allocated")]
    idle_scope: Option<IdleScope>,
    /// Write the per-device demand trace of a simulation as CSV.
    #[arg(long, global = true, value_name = "PATH")]
    trace: Option<PathBuf>,
    /// Write the output here instead of stdout.
    #[arg(long, global = true, value_name = "PATH")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one instance and print its result record.
    Simulate(InstanceArgs),
    /// Run an optimizer suite and print one CSV row per simulation.
    Sweep {
        suite: PathBuf,
        /// Worker threads (default: available cores).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Fit a linear compute model to `data_size,performance,seconds` samples.
    Fit { samples: PathBuf },
    /// Select devices under a power limit and print the mapping.
    Select {
        #[command(flatten)]
        instance: InstanceArgs,
        #[arg(long, value_name = "WATTS")]
        power_limit: f64,
        /// `device=watts`, or a JSON file mapping devices to watts. Repeatable.
        #[arg(long, value_name = "DEV=W|FILE")]
        device_power: Vec<String>,
        /// The process placed one instance per selected device.
        #[arg(long, default_value = "slave")]
        slave: String,
    },
    /// Check an instance or suite document without simulating it.
    Validate { document: PathBuf },
}

#[derive(Args)]
struct InstanceArgs {
    /// Instance document; the flags below override its fields.
    instance: Option<PathBuf>,
    #[arg(long)]
    system: Option<PathBuf>,
    #[arg(long)]
    application: Option<PathBuf>,
    /// Mapping file, or `round_robin`.
    #[arg(long)]
    mapping: Option<String>,
    /// Execution parameter `name=value`. Repeatable.
    #[arg(long = "param", value_name = "NAME=VALUE")]
    params: Vec<String>,
}

/// An error with the exit code it maps to.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

trait Code<T> {
    fn code(self, code: u8) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Code<T> for Result<T, E> {
    fn code(self, code: u8) -> Result<T, Failure> {
        self.map_err(|e| Failure { code, error: e.into() })
    }
}

fn sim_code(e: &SimError) -> u8 {
    match e {
        SimError::Model(_) | SimError::InvalidMapping(_) => INVALID,
        SimError::Behavior(b) if !matches!(b, BehaviorError::Protocol { .. }) => INVALID,
        _ => SIM_FAILED,
    }
}

fn split_pair(text: &str) -> anyhow::Result<(&str, &str)> {
    text.split_once('=').filter(|(k, _)| !k.is_empty()).ok_or_else(|| anyhow!("expected NAME=VALUE, got '{text}'"))
}

fn absolute(p: &Path) -> anyhow::Result<String> {
    Ok(std::path::absolute(p)?.display().to_string())
}

impl InstanceArgs {
    fn load(&self) -> anyhow::Result<InstanceSpec> {
        let (mut doc, base) = match &self.instance {
            Some(path) => (read_json(path)?, path.parent().unwrap_or(Path::new(".")).to_path_buf()),
            None => (json!({}), PathBuf::from(".")),
        };
        let obj = doc.as_object_mut().ok_or_else(|| anyhow!("instance: expected an object"))?;
        if let Some(p) = &self.system {
            obj.insert("system".into(), json!(absolute(p)?));
        }
        if let Some(p) = &self.application {
            obj.insert("application".into(), json!(absolute(p)?));
        }
        match self.mapping.as_deref() {
            Some("round_robin") => {
                obj.insert("mapping".into(), json!("round_robin"));
            }
            Some(p) => {
                obj.insert("mapping".into(), json!(absolute(Path::new(p))?));
            }
            None => {}
        }
        let mut spec = InstanceSpec::from_value(&doc, &base)?;
        for p in &self.params {
            let (k, v) = split_pair(p)?;
            spec.params.insert(k, ParamValue::parse(v));
        }
        Ok(spec)
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())).code(1),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn options(cli: &Cli, spec_scope: Option<IdleScope>) -> SimOptions {
    SimOptions {
        idle_scope: cli.idle_scope.or(spec_scope).unwrap_or_default(),
        record_trace: cli.trace.is_some(),
        ..SimOptions::default()
    }
}

fn simulate(cli: &Cli, args: &InstanceArgs) -> Result<(), Failure> {
    let spec = args.load().code(INVALID)?;
    let inst = spec.instance().code(INVALID)?;
    let result = inst.run(&options(cli, spec.idle_scope)).map_err(|e| Failure { code: sim_code(&e), error: e.into() })?;
    if let (Some(path), Some(trace)) = (&cli.trace, &result.trace) {
        fs::write(path, trace.to_csv()).with_context(|| format!("writing {}", path.display())).code(1)?;
    }
    let record = result.to_record(&inst.params, &inst.mapping);
    emit(cli.out.as_deref(), &format!("{}\n", serde_json::to_string_pretty(&record).expect("record serializes")))
}

fn sweep(cli: &Cli, path: &Path, workers: Option<usize>) -> Result<(), Failure> {
    if cli.trace.is_some() {
        return Err(anyhow!("--trace applies to simulate only")).code(INVALID);
    }
    let suite = Suite::load(path).code(INVALID)?;
    let entries = expand_suite(&suite).code(INVALID)?;
    let workers = workers.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let results = run_suite(&entries, &options(cli, suite.base.idle_scope), workers).code(INVALID)?;
    emit(cli.out.as_deref(), &results_csv(&entries, &results))?;
    let failed: Vec<String> = entries
        .iter()
        .zip(&results)
        .filter_map(|(e, r)| r.as_ref().err().map(|msg| format!("{} {}: {msg}", e.mapping_id, json!(e.params))))
        .collect();
    if failed.is_empty() {
        return Ok(());
    }
    for f in &failed {
        eprintln!("failed: {f}");
    }
    Err(anyhow!("{} of {} simulations failed", failed.len(), entries.len())).code(SWEEP_FAILED)
}

fn fit(cli: &Cli, path: &Path) -> Result<(), Failure> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display())).code(INVALID)?;
    let samples: Vec<Sample> = reader
        .deserialize()
        .collect::<Result<_, _>>()
        .with_context(|| format!("parsing {}", path.display()))
        .code(INVALID)?;
    let fit = fit_linear_model(&samples).code(INVALID)?;
    let doc = json!({"phi": fit.model.phi, "psi": fit.model.psi, "mpe": fit.mpe});
    emit(cli.out.as_deref(), &format!("{}\n", serde_json::to_string_pretty(&doc).expect("fit serializes")))
}

fn power_overrides(items: &[String]) -> anyhow::Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    for item in items {
        if item.contains('=') {
            let (dev, w) = split_pair(item)?;
            let w: f64 = w.parse().with_context(|| format!("--device-power {item}: not a number"))?;
            out.insert(dev.to_string(), w);
        } else {
            let doc = read_json(Path::new(item))?;
            let map: BTreeMap<String, f64> =
                serde_json::from_value(doc).with_context(|| format!("{item}: expected a map of device to watts"))?;
            out.extend(map);
        }
    }
    Ok(out)
}

fn select(cli: &Cli, args: &InstanceArgs, limit: f64, powers: &[String], slave: &str) -> Result<(), Failure> {
    let spec = args.load().code(INVALID)?;
    let overrides = power_overrides(powers).code(INVALID)?;
    let power = device_power(&spec.system, &overrides).code(INVALID)?;
    let app = spec.app.bind_params(&spec.params).code(INVALID)?;
    let mapping = select_and_map_under_limit(&spec.system, &app, &spec.caps, &power, limit, slave).code(INVALID)?;
    emit(cli.out.as_deref(), &format!("{}\n", mapping.to_json()))
}

fn validate(cli: &Cli, path: &Path) -> Result<(), Failure> {
    let doc = read_json(path).code(INVALID)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let report = if doc.get("base").is_some() {
        let suite = Suite::from_value(&doc, base).code(INVALID)?;
        let entries = expand_suite(&suite).code(INVALID)?;
        let bad: Vec<String> = entries
            .iter()
            .filter_map(|e| e.instance.as_ref().err().map(|m| format!("{} {}: {m}", e.mapping_id, json!(e.params))))
            .collect();
        if !bad.is_empty() {
            return Err(anyhow!("{} of {} suite points have no valid mapping:\n{}", bad.len(), entries.len(), bad.join("\n")))
                .code(INVALID);
        }
        format!("ok: suite with {} simulations\n", entries.len())
    } else {
        let spec = InstanceSpec::from_value(&doc, base).code(INVALID)?;
        let mapping = spec.resolve_mapping(&spec.params).code(INVALID)?;
        let app = spec.app.bind_params(&spec.params).code(INVALID)?;
        let violations = validate_mapping(&spec.system, &app, &spec.caps, &mapping).code(INVALID)?;
        if !violations.is_empty() {
            let list: Vec<String> = violations.iter().map(ToString::to_string).collect();
            return Err(anyhow!("infeasible mapping: {}", list.join("; "))).code(INVALID);
        }
        let instances: u32 = mapping.iter().map(|(_, _, c)| c).sum();
        format!("ok: {} devices, {} process instances\n", spec.system.devices().len(), instances)
    };
    emit(cli.out.as_deref(), &report)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Simulate(args) => simulate(cli, args),
        Command::Sweep { suite, workers } => sweep(cli, suite, *workers),
        Command::Fit { samples } => fit(cli, samples),
        Command::Select { instance, power_limit, device_power, slave } => {
            select(cli, instance, *power_limit, device_power, slave)
        }
        Command::Validate { document } => validate(cli, document),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(code)
        }
    }
}
