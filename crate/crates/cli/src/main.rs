//! `physchan`: compose, calibrate, validate and report on a smart-home config.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use physchan::analysis::{reports_json, Engine, GridSpec, SearchConfig, Settings, Validator, ViolationReport};
use physchan::calibration::{default_bounds, fit_device_property, prune_channels, FitResult, ObservedTrace, PruneConfig, PruneDecision};
use physchan::config::{load_config, reference_config, HomeConfig, ModelKind};
use physchan::policy::PolicyInstance;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "physchan", version, about = "Physical-channel interaction analysis for smart-home apps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build the composed graph and write cpem.json, adjacency.txt and summary.json.
    Compose(Common),
    /// Fit device parameters and prune channels from recorded traces.
    Calibrate {
        #[command(flatten)]
        common: Common,
        /// Trace manifest (TOML) listing experiment and noise CSVs.
        #[arg(long)]
        traces: PathBuf,
    },
    /// Check policies; writes violations.json and summary.txt.
    Validate(ValidateArgs),
    /// Write per-violation timeline and trace CSVs from a violations.json.
    Report {
        #[command(flatten)]
        common: Common,
        /// Defaults to OUT/violations.json.
        #[arg(long)]
        violations: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// Home config (TOML). The bundled reference home is used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineKind {
    Grid,
    Falsify,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_enum, default_value = "falsify")]
    engine: EngineKind,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    max_iters: Option<usize>,
    /// Activation grid in minutes, start:step:end.
    #[arg(long)]
    grid: Option<GridSpec>,
    /// Comma-separated policy classes or ids (G1, DC3, G2:App18:sound, ...).
    #[arg(long, value_delimiter = ',')]
    policies: Vec<String>,
    /// Run on a config that has not been through `calibrate`.
    #[arg(long)]
    uncalibrated: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // Usage errors exit 1 so that 2 always means "violations found".
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Compose(c) => compose(&c),
        Command::Calibrate { common, traces } => calibrate(&common, &traces),
        Command::Validate(v) => validate(&v),
        Command::Report { common, violations } => report(&common, violations),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn load(c: &Common) -> Result<HomeConfig> {
    match &c.config {
        Some(p) => load_config(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(reference_config()),
    }
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn compose(c: &Common) -> Result<ExitCode> {
    let home = load(c)?.build()?;
    let summary = home.cpem.summary();
    write(&c.out, "cpem.json", &serde_json::to_string_pretty(&home.cpem)?)?;
    write(&c.out, "adjacency.txt", &(home.cpem.adjacency().join("\n") + "\n"))?;
    write(&c.out, "summary.json", &serde_json::to_string_pretty(&summary)?)?;
    println!(
        "{} actuator PeMs, {} sensor PeMs, {} aggregates, {} apps",
        summary.actuator_pems, summary.sensor_pems, summary.aggregate_nodes, summary.apps
    );
    for (kind, n) in &summary.edges {
        println!("  {kind:<12}{n}");
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TraceManifest {
    #[serde(default)]
    tau: f64,
    #[serde(default = "default_tol")]
    tol: f64,
    #[serde(default, rename = "experiment")]
    experiments: Vec<ExperimentEntry>,
    #[serde(default)]
    noise: Vec<NoiseEntry>,
}

fn default_tol() -> f64 {
    1e-3
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentEntry {
    device: String,
    sensor: String,
    file: PathBuf,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NoiseEntry {
    sensor: String,
    file: PathBuf,
}

#[derive(Debug, Serialize)]
struct FitRecord {
    pem: String,
    sensor: String,
    before: f64,
    #[serde(flatten)]
    fit: FitResult,
}

#[derive(Debug, Serialize)]
struct CalibrationReport {
    fits: Vec<FitRecord>,
    pruning: Vec<PruneDecision>,
    warnings: Vec<String>,
}

fn read_trace(base: &Path, file: &Path) -> Result<ObservedTrace> {
    let path = base.join(file);
    let f = fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    ObservedTrace::from_csv(f).with_context(|| format!("reading {}", path.display()))
}

fn calibrate(c: &Common, traces: &Path) -> Result<ExitCode> {
    let mut cfg = load(c)?;
    let home = cfg.build()?;
    let text = fs::read_to_string(traces).with_context(|| format!("reading {}", traces.display()))?;
    let manifest: TraceManifest = toml::from_str(&text).with_context(|| format!("parsing {}", traces.display()))?;
    let base = traces.parent().unwrap_or(Path::new("."));
    let env = home.cpem.model.env;

    let mut experiments = BTreeMap::new();
    let mut fits = Vec::new();
    let mut warnings = Vec::new();
    for e in &manifest.experiments {
        let (di, ii) = cfg
            .devices
            .iter()
            .enumerate()
            .find_map(|(di, d)| {
                (d.name == e.device).then(|| d.influences.iter().position(|i| i.sensor == e.sensor).map(|ii| (di, ii))).flatten()
            })
            .with_context(|| format!("no influence of device {} on sensor {}", e.device, e.sensor))?;
        let spec = &cfg.devices[di].influences[ii];
        let pem_id = HomeConfig::pem_id(&cfg.devices[di], spec);
        let trace = read_trace(base, &e.file)?.with_meta(&pem_id, &e.sensor, env.baselines.of(spec.channel));
        if spec.model != ModelKind::Dependency {
            let pem = home.cpem.actuator(&pem_id).with_context(|| format!("no PeM {pem_id}"))?;
            let sensor = home.cpem.sensor(&e.sensor).with_context(|| format!("no sensor {}", e.sensor))?;
            if let Some(prop) = pem.flow.property() {
                let fit = fit_device_property(pem, sensor, &env, &trace, default_bounds(prop), manifest.tau, manifest.tol)?;
                if fit.degenerate {
                    warnings.push(format!("{pem_id}: degenerate fit, parameter left at {}", prop.value()));
                } else {
                    cfg.devices[di].influences[ii].value = Some(fit.property.value());
                }
                fits.push(FitRecord { pem: pem_id.clone(), sensor: e.sensor.clone(), before: prop.value(), fit });
            }
        }
        experiments.insert((pem_id, e.sensor.clone()), trace);
    }

    let noise = manifest
        .noise
        .iter()
        .map(|n| Ok(read_trace(base, &n.file)?.with_meta("", &n.sensor, 0.0)))
        .collect::<Result<Vec<_>>>()?;
    let pruned = prune_channels(&home.cpem, &experiments, &noise, &PruneConfig::default())?;
    let alive: BTreeSet<(String, String)> = pruned
        .cpem
        .model
        .actuators
        .iter()
        .flat_map(|a| a.distances.keys().map(move |s| (a.id.clone(), s.clone())))
        .collect();
    for d in &mut cfg.devices {
        let name = d.clone();
        d.influences.retain(|i| alive.contains(&(HomeConfig::pem_id(&name, i), i.sensor.clone())));
    }
    warnings.extend(pruned.warnings);
    cfg.calibrated = true;
    cfg.build().context("calibrated config no longer composes")?;

    let report = CalibrationReport { fits, pruning: pruned.decisions, warnings };
    write(&c.out, "config.toml", &cfg.to_toml())?;
    write(&c.out, "calibration.json", &serde_json::to_string_pretty(&report)?)?;
    for f in &report.fits {
        println!("fit {:<20}{:>10.3} -> {:.3}{}", f.pem, f.before, f.fit.property.value(), if f.fit.degenerate { " (degenerate)" } else { "" });
    }
    for d in report.pruning.iter().filter(|d| !d.kept) {
        println!("pruned {} -> {}: {}", d.pem, d.sensor, d.reason);
    }
    for w in &report.warnings {
        log::warn!("{w}");
    }
    Ok(ExitCode::SUCCESS)
}

fn class_of(sel: &str) -> &str {
    sel.split(':').next().unwrap_or(sel)
}

fn select(home: &physchan::config::Home, wanted: &[String]) -> Result<Vec<PolicyInstance>> {
    let inst = home.policies()?;
    for w in &inst.warnings {
        log::info!("{w}");
    }
    if wanted.is_empty() {
        return Ok(inst.instances);
    }
    let picked: Vec<PolicyInstance> =
        inst.instances.into_iter().filter(|p| wanted.iter().any(|w| *w == p.id || *w == p.class.name())).collect();
    for w in wanted {
        if !picked.iter().any(|p| *w == p.id || *w == p.class.name()) {
            log::warn!("--policies entry {w} matches no instance");
        }
    }
    Ok(picked)
}

fn validate(a: &ValidateArgs) -> Result<ExitCode> {
    let mut cfg = load(&a.common)?;
    if !cfg.calibrated && !a.uncalibrated {
        bail!("config is not calibrated; run `physchan calibrate` first or pass --uncalibrated");
    }
    if !a.policies.is_empty() {
        cfg.policies.enabled = a.policies.iter().map(|p| class_of(p).to_string()).collect();
    }
    let home = cfg.build()?;
    let policies = select(&home, &a.policies)?;
    let mut settings = Settings::from_config(&cfg)?;
    if let Some(g) = &a.grid {
        settings.grid = g.clone();
    }
    let engine = match a.engine {
        EngineKind::Grid => Engine::Grid,
        EngineKind::Falsify => Engine::Falsify(SearchConfig {
            seed: a.seed,
            max_iters: a.max_iters.unwrap_or(cfg.analysis.max_iters),
            bounds: (0.0, settings.horizon),
            ..SearchConfig::default()
        }),
    };
    let v = Validator::new(&home.cpem, settings.dt, settings.horizon)?;
    let out = v.validate_all(&policies, &engine, &settings)?;
    let summary = out.summary_table();
    write(&a.common.out, "violations.json", &reports_json(&out.reports))?;
    write(&a.common.out, "summary.txt", &summary)?;
    print!("{summary}");
    for r in &out.reports {
        println!("violated {} (robustness {:.3})", r.policy_id, r.robustness);
    }
    Ok(if out.reports.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn file_stem(policy_id: &str) -> String {
    policy_id.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' }).collect()
}

fn report(c: &Common, violations: Option<PathBuf>) -> Result<ExitCode> {
    let cfg = load(c)?;
    let home = cfg.build()?;
    let path = violations.unwrap_or_else(|| c.out.join("violations.json"));
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let reports: Vec<ViolationReport> = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let dir = c.out.join("timelines");
    let v = Validator::new(&home.cpem, cfg.simulation.dt, cfg.simulation.horizon)?;
    for r in &reports {
        let stem = file_stem(&r.policy_id);
        let mut tl = String::from("t_minutes,event,label\n");
        for e in &r.timeline {
            let label = e.label.map(|l| format!("{l:?}")).unwrap_or_default();
            tl.push_str(&format!("{},{},{}\n", e.t, e.event, label));
        }
        write(&dir, &format!("{stem}.timeline.csv"), &tl)?;
        let trace = v.execute(&r.schedule(), None)?;
        write(&dir, &format!("{stem}.trace.csv"), &trace.to_csv()?)?;
    }
    println!("{} reports written to {}", reports.len(), dir.display());
    Ok(ExitCode::SUCCESS)
}
