//! `dispatchd` command-line driver: trace synthesis, state building, oracle
//! solving, training, evaluation, comparison, reporting and the convergence
//! probe, each writing into a self-describing output directory.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, OnceLock};

use anyhow::{anyhow, bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use dispatchd_core::baselines::{self, Packing, PolicyRun};
use dispatchd_core::config::RunConfig;
use dispatchd_core::dispatch::{newsvendor_quantile, CostRates, DemandDistribution, Dispatch};
use dispatchd_core::energy::{BsConfig, BsConfigSet};
use dispatchd_core::mamrl::{Mamrl, TrainHooks};
use dispatchd_core::metrics::{self, LedgerRow, MethodMetrics};
use dispatchd_core::trace::{self, RegimeKind, RegimeSpec, StateTable, SynthProfile, TaskEvent, TraceShape};
use dispatchd_core::Error;
use serde::{Deserialize, Serialize};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const DATA: i32 = 2;
    pub const NUMERIC: i32 = 3;
}

#[derive(Debug, Parser)]
#[command(name = "dispatchd", version, about = "Renewable-aware energy dispatch for self-powered edge base stations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Config sources shared by the commands that train or evaluate.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct ConfigArgs {
    /// Key-value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `key=value` override; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub episodes: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub regime: Option<RegimeKind>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OracleMode {
    Hindsight,
    Scenario,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Json,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate seeded synthetic task and solar traces.
    Synth {
        #[arg(long, default_value_t = 3, value_parser = positive)]
        sbs: usize,
        #[arg(long, default_value_t = 3, value_parser = positive)]
        days: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Generator knobs (TOML).
        #[arg(long)]
        profile: Option<PathBuf>,
        /// Base-station defaults (TOML `[defaults]` table).
        #[arg(long)]
        bs_config: Option<PathBuf>,
    },
    /// Turn traces into per-day state tables.
    BuildState {
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.25)]
        slot_hours: f64,
    },
    /// Solve the dispatch program on a state table.
    Oracle {
        #[arg(long)]
        state: PathBuf,
        #[arg(long, value_enum, default_value_t = OracleMode::Hindsight)]
        mode: OracleMode,
        /// State tables whose demands form the scenario distribution.
        #[arg(long, num_args = 1..)]
        history: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the multi-agent system.
    Train {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        states: PathBuf,
        /// Task traces, used for per-slot step counts.
        #[arg(long)]
        traces: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Greedy evaluation of a trained run on the regime's test day.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        states: PathBuf,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Evaluate the trained run against every baseline on all regimes.
    Compare {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        states: PathBuf,
        #[arg(long)]
        traces: Option<PathBuf>,
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Print the metrics of a compared run.
    Report {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
        format: ReportFormat,
        /// Print the cost ledger instead of the metrics.
        #[arg(long)]
        ledger: bool,
    },
    /// Monte Carlo gradient-alignment probe.
    ProbeConvergence {
        #[arg(long, value_parser = positive)]
        agents: usize,
        #[arg(long, default_value_t = 100_000, value_parser = positive)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn positive(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(n) => Ok(n),
        Err(e) => Err(e.to_string()),
    }
}

/// Bad invocation; maps to the usage exit code.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// Exit code for a failed command.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return exit::USAGE;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::NonFinite(_) => exit::NUMERIC,
                Error::Config(_) => exit::USAGE,
                _ => exit::DATA,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() || cause.downcast_ref::<serde_json::Error>().is_some() {
            return exit::DATA;
        }
    }
    exit::USAGE
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, S>(args: I) -> anyhow::Result<()>
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) => {
            print!("{e}");
            return Ok(());
        }
        Err(e) => return Err(UsageError(e.to_string().trim_start_matches("error: ").trim_end().to_string()).into()),
    };
    match cli.command {
        Command::Synth { sbs, days, seed, out, profile, bs_config } => {
            cmd_synth(sbs, days, seed, &out, profile.as_deref(), bs_config.as_deref())
        }
        Command::BuildState { traces, out, slot_hours } => cmd_build_state(&traces, &out, slot_hours),
        Command::Oracle { state, mode, history, out } => cmd_oracle(&state, mode, &history, &out),
        Command::Train { run, states, traces, cfg } => cmd_train(&run, &states, traces.as_deref(), &cfg),
        Command::Eval { run, states, cfg } => cmd_eval(&run, &states, &cfg),
        Command::Compare { run, states, traces, cfg } => cmd_compare(&run, &states, traces.as_deref(), &cfg),
        Command::Report { run, format, ledger } => cmd_report(&run, format, ledger),
        Command::ProbeConvergence { agents, samples, seed } => {
            let r = metrics::convergence_probe(agents, samples, seed)?;
            println!("{}", serde_json::to_string(&r)?);
            Ok(())
        }
    }
}

fn resolve_config(args: &ConfigArgs, base: Option<&Path>) -> anyhow::Result<RunConfig> {
    let mut overrides = Vec::new();
    for kv in &args.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| UsageError(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(s) = args.seed {
        overrides.push(("seed".into(), s.to_string()));
    }
    if let Some(e) = args.episodes {
        overrides.push(("episodes".into(), e.to_string()));
    }
    if let Some(w) = args.workers {
        overrides.push(("workers".into(), w.to_string()));
    }
    if let Some(r) = args.regime {
        overrides.push(("regime".into(), format!("\"{r}\"")));
    }
    let file = args.config.as_deref().or(base);
    Ok(RunConfig::resolve(file, std::env::vars(), &overrides)?)
}

/// Writes the effective config and tool version into `dir`.
fn echo(dir: &Path, cfg: &RunConfig) -> anyhow::Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&dir.join("config.toml"), &cfg.to_kv_string())?;
    write(&dir.join("VERSION"), &format!("dispatchd {VERSION}\n"))
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn read(path: &Path) -> anyhow::Result<String> {
    Ok(fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

/// Shape and provenance of a synthesized trace directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub n_bs: usize,
    pub slots: usize,
    pub days: usize,
    pub seed: u64,
}

fn tasks_path(dir: &Path, day: usize) -> PathBuf {
    dir.join(format!("day{day}_tasks.csv"))
}

fn solar_path(dir: &Path, day: usize) -> PathBuf {
    dir.join(format!("day{day}_solar.csv"))
}

fn state_path(dir: &Path, day: usize) -> PathBuf {
    dir.join(format!("day{day}_state.csv"))
}

fn cmd_synth(sbs: usize, days: usize, seed: u64, out: &Path, profile: Option<&Path>, bs_config: Option<&Path>) -> anyhow::Result<()> {
    let profile: SynthProfile = match profile {
        Some(p) => toml::from_str(&read(p)?).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        None => SynthProfile::default(),
    };
    let base = match bs_config {
        Some(p) => BsConfigSet::load(p)?.defaults,
        None => BsConfig::default(),
    };
    let tr = trace::synth_trace(sbs, days, seed, &profile, &base)?;
    let cfg = RunConfig { seed, slots_per_day: profile.slots_per_day, ..RunConfig::default() };
    echo(out, &cfg)?;
    for (d, day) in tr.days.iter().enumerate() {
        trace::write_task_trace(&tasks_path(out, d), &day.tasks)?;
        trace::write_solar_trace(&solar_path(out, d), &day.solar)?;
    }
    write(&out.join("bs_config.toml"), &tr.configs.to_toml_string())?;
    let manifest = Manifest { n_bs: sbs, slots: tr.shape.slots, days, seed };
    write(&out.join("manifest.toml"), &toml::to_string(&manifest)?)?;
    println!("wrote {days} day(s) of traces for {sbs} base station(s) to {}", out.display());
    Ok(())
}

fn load_manifest(traces: &Path) -> anyhow::Result<Manifest> {
    let p = traces.join("manifest.toml");
    Ok(toml::from_str(&read(&p)?).map_err(|e| Error::Parse { path: p.clone(), line: 0, msg: e.to_string() })?)
}

fn load_tasks(traces: &Path, day: usize, shape: TraceShape) -> anyhow::Result<Vec<TaskEvent>> {
    Ok(trace::load_task_trace(&tasks_path(traces, day), shape)?)
}

fn cmd_build_state(traces: &Path, out: &Path, slot_hours: f64) -> anyhow::Result<()> {
    let m = load_manifest(traces)?;
    let shape = TraceShape { n_bs: m.n_bs, slots: m.slots };
    let configs = BsConfigSet::load(&traces.join("bs_config.toml"))?;
    let cfg = RunConfig { seed: m.seed, slots_per_day: m.slots, slot_hours, ..RunConfig::default() };
    let rates = cfg.rates()?;
    echo(out, &cfg)?;
    for d in 0..m.days {
        let tasks = load_tasks(traces, d, shape)?;
        let solar = trace::load_solar_trace(&solar_path(traces, d), shape)?;
        let table = trace::build_state_space(&tasks, &solar, &configs, &rates, shape, slot_hours)?;
        table.write_csv(&state_path(out, d))?;
    }
    println!("wrote {} state table(s) to {}", m.days, out.display());
    Ok(())
}

/// Per-slot oracle dispatch plus its cost.
fn write_oracle_csv(path: &Path, table: &StateTable, plan: &[Dispatch], rates: &CostRates<f64>) -> anyhow::Result<f64> {
    let mut text = String::from("bs_id,slot,ren_kwh,non_kwh,sto_kwh,cost_usd\n");
    let mut total = 0.0;
    for (r, d) in table.records().iter().zip(plan) {
        let c = d.cost(rates);
        total += c;
        text.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.bs_id,
            r.slot,
            trace::fmt_sig(d.ren_kwh),
            trace::fmt_sig(d.non_kwh),
            trace::fmt_sig(d.sto_kwh),
            trace::fmt_sig(c)
        ));
    }
    write(path, &text)?;
    Ok(total)
}

fn cmd_oracle(state: &Path, mode: OracleMode, history: &[PathBuf], out: &Path) -> anyhow::Result<()> {
    let table = StateTable::read_csv(state)?;
    let rates = RunConfig::default().rates()?;
    let plan: Vec<Dispatch> = match mode {
        OracleMode::Hindsight => baselines::hindsight(&table).dispatch,
        OracleMode::Scenario => {
            if history.is_empty() {
                return Err(UsageError("--mode scenario needs at least one --history state table".into()).into());
            }
            let hist = history.iter().map(|p| StateTable::read_csv(p)).collect::<dispatchd_core::Result<Vec<_>>>()?;
            if let Some(h) = hist.iter().find(|h| h.shape != table.shape) {
                return Err(Error::Dimension {
                    what: "history stations x slots",
                    expected: table.shape.n_bs * table.shape.slots,
                    got: h.shape.n_bs * h.shape.slots,
                }
                .into());
            }
            table
                .records()
                .iter()
                .map(|r| {
                    let demands: Vec<f64> = hist.iter().map(|h| h.get(r.bs_id, r.slot).demand_kwh).collect();
                    let dist = DemandDistribution::empirical(&demands)?;
                    let ren = newsvendor_quantile(&dist, &rates, r.renewable_kwh);
                    let non = (r.demand_kwh - ren).max(0.0);
                    let sto = (ren - r.demand_kwh).max(0.0);
                    Ok(Dispatch { ren_kwh: ren, non_kwh: non, sto_kwh: sto })
                })
                .collect::<dispatchd_core::Result<Vec<_>>>()?
        }
    };
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let total = write_oracle_csv(out, &table, &plan, &rates)?;
    println!("oracle cost {total:.4} USD written to {}", out.display());
    Ok(())
}

/// Day tables `day0_state.csv, day1_state.csv, ...` of a state directory.
fn load_days(states: &Path) -> anyhow::Result<Vec<StateTable>> {
    let mut days = Vec::new();
    while state_path(states, days.len()).exists() {
        days.push(StateTable::read_csv(&state_path(states, days.len()))?);
    }
    if days.is_empty() {
        return Err(Error::Missing(format!("state tables in {}", states.display())).into());
    }
    Ok(days)
}

fn regime_tables(days: &[StateTable], cfg: &RunConfig, kind: RegimeKind) -> anyhow::Result<(StateTable, StateTable)> {
    let spec = RegimeSpec { kind, train_day: cfg.train_day, test_day: cfg.test_day };
    let (train, test) = trace::split_regime(days, &spec, &cfg.rates()?)?;
    if train.shape.slots != cfg.slots_per_day {
        return Err(
            Error::Config(format!("slots_per_day = {} but state tables have {} slots", cfg.slots_per_day, train.shape.slots)).into()
        );
    }
    Ok((train, test))
}

/// Step counts per (bs, slot) from a day's task trace.
fn task_counts(traces: &Path, day: usize, shape: TraceShape) -> anyhow::Result<Vec<usize>> {
    let mut counts = vec![0; shape.n_bs * shape.slots];
    for t in load_tasks(traces, day, shape)? {
        counts[t.bs_id * shape.slots + t.slot] += 1;
    }
    Ok(counts)
}

fn stop_flag() -> Arc<AtomicBool> {
    static FLAG: OnceLock<Arc<AtomicBool>> = OnceLock::new();
    FLAG.get_or_init(|| {
        let flag = Arc::new(AtomicBool::new(false));
        let f = flag.clone();
        if let Err(e) = ctrlc::set_handler(move || f.store(true, Ordering::SeqCst)) {
            log::debug!("interrupt handler not installed: {e}");
        }
        flag
    })
    .clone()
}

fn checkpoint_path(run: &Path) -> PathBuf {
    run.join("checkpoints").join("mamrl.ckpt")
}

fn run_dirs(run: &Path) -> anyhow::Result<()> {
    for sub in ["checkpoints", "logs", "reports"] {
        let d = run.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    Ok(())
}

fn cmd_train(run: &Path, states: &Path, traces: Option<&Path>, args: &ConfigArgs) -> anyhow::Result<()> {
    let cfg = resolve_config(args, None)?;
    let days = load_days(states)?;
    let (train, _) = regime_tables(&days, &cfg, cfg.regime)?;
    let counts = traces.map(|t| task_counts(t, cfg.train_day, train.shape)).transpose()?;
    run_dirs(run)?;
    echo(run, &cfg)?;
    let mut sys = Mamrl::new(train.shape.n_bs, &cfg);
    let stop = stop_flag();
    let ckpt = checkpoint_path(run);
    let diag = run.join("checkpoints").join("diagnostic.ckpt");
    let hooks = TrainHooks { diagnostic_checkpoint: Some(&diag), stop: Some(&stop) };
    let log = sys.train(&train, counts.as_deref(), cfg.episodes, 50, &hooks)?;
    sys.save(&ckpt)?;
    log.write_csv(&run.join("logs").join("episodes.csv"))?;
    log.write_summary_csv(&run.join("logs").join("summary.csv"))?;
    let last = log.summaries.last().map_or(0.0, |s| s.mean_reward);
    println!("trained {} episode(s); last mean reward {last:.2}; checkpoint {}", log.summaries.len(), ckpt.display());
    if stop.load(Ordering::SeqCst) {
        log::warn!("interrupted; checkpoint flushed");
    }
    Ok(())
}

fn load_trained(run: &Path, args: &ConfigArgs) -> anyhow::Result<(RunConfig, Mamrl)> {
    let cfg = resolve_config(args, Some(&run.join("config.toml")))?;
    let sys = Mamrl::load(&checkpoint_path(run), &cfg)?;
    Ok((cfg, sys))
}

fn cmd_eval(run: &Path, states: &Path, args: &ConfigArgs) -> anyhow::Result<()> {
    let (cfg, sys) = load_trained(run, args)?;
    let days = load_days(states)?;
    let (_, test) = regime_tables(&days, &cfg, cfg.regime)?;
    let ev = sys.evaluate(&test)?;
    run_dirs(run)?;
    let log = dispatchd_core::mamrl::EpisodeLog { rows: ev.rows.clone(), summaries: Vec::new() };
    log.write_csv(&run.join("reports").join("eval.csv"))?;
    let acc = metrics::decision_accuracy(&ev.actions, &ev.truth)?;
    let rates = cfg.rates()?;
    let cost = dispatchd_core::mamrl::total_cost(&ev.dispatch, &rates);
    let hind = baselines::hindsight(&test).cost(&rates);
    println!("regime {} accuracy {acc:.4} cost {cost:.4} USD competitive ratio {:.4}", cfg.regime, metrics::competitive_ratio(cost, hind));
    Ok(())
}

/// Metrics of every method on one regime.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegimeReport {
    pub hindsight_cost: f64,
    pub methods: Vec<MethodMetricsRow>,
}

/// Serializable copy of [`MethodMetrics`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MethodMetricsRow {
    pub method: String,
    pub accuracy: Option<f64>,
    pub mae_kwh: f64,
    pub explained_variance: Option<f64>,
    pub competitive_ratio: Option<f64>,
    pub total_cost: f64,
}

impl From<MethodMetrics> for MethodMetricsRow {
    fn from(m: MethodMetrics) -> Self {
        MethodMetricsRow {
            method: m.method,
            accuracy: m.accuracy,
            mae_kwh: m.mae_kwh,
            explained_variance: m.explained_variance,
            competitive_ratio: m.competitive_ratio,
            total_cost: m.total_cost,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub version: String,
    pub seed: u64,
    pub ledger_regime: String,
    pub regimes: BTreeMap<String, RegimeReport>,
}

fn packing_items(traces: Option<&Path>, cfg: &RunConfig, kind: RegimeKind, test: &StateTable) -> anyhow::Result<Vec<Vec<f64>>> {
    let tasks = match traces {
        Some(t) => {
            let day = if kind == RegimeKind::Stochastic { cfg.test_day } else { cfg.train_day };
            load_tasks(t, day, test.shape)?
        }
        None => Vec::new(),
    };
    Ok(baselines::slot_items(test, &tasks))
}

/// Every method's run on `test`, in ledger order.
fn all_runs(
    sys: &Mamrl,
    a2c: &baselines::A2c,
    a3c: &baselines::A3c,
    test: &StateTable,
    items: &[Vec<f64>],
) -> anyhow::Result<Vec<PolicyRun>> {
    let ev = sys.evaluate(test)?;
    let mut runs = vec![PolicyRun { method: "mamrl".into(), slots: test.shape.slots, actions: Some(ev.actions), dispatch: ev.dispatch }];
    runs.push(a2c.evaluate(test)?);
    runs.push(a3c.evaluate(test)?);
    runs.push(baselines::ucb_greedy(test, std::f64::consts::SQRT_2));
    for p in Packing::ALL {
        runs.push(baselines::packing_run(test, items, p));
    }
    runs.push(baselines::no_renewable(test));
    runs.push(baselines::oracle_labels(test));
    runs.push(baselines::hindsight(test));
    Ok(runs)
}

fn cmd_compare(run: &Path, states: &Path, traces: Option<&Path>, args: &ConfigArgs) -> anyhow::Result<()> {
    let (cfg, sys) = load_trained(run, args)?;
    let rates = cfg.rates()?;
    let days = load_days(states)?;
    let (train, _) = regime_tables(&days, &cfg, cfg.regime)?;
    let mut a2c = baselines::A2c::new(train.shape.n_bs, &cfg);
    a2c.train(&train, cfg.episodes)?;
    let mut a3c = baselines::A3c::new(train.shape.n_bs, &cfg);
    a3c.train(&train, cfg.episodes)?;
    run_dirs(run)?;
    let mut regimes = BTreeMap::new();
    for kind in RegimeKind::ALL {
        let (_, test) = regime_tables(&days, &cfg, kind)?;
        let items = packing_items(traces, &cfg, kind, &test)?;
        let runs = all_runs(&sys, &a2c, &a3c, &test, &items)?;
        let hind = baselines::hindsight(&test).cost(&rates);
        let labels = baselines::oracle_labels(&test);
        let methods = runs
            .iter()
            .map(|r| metrics::method_metrics(r, &labels, hind, &rates).map(MethodMetricsRow::from))
            .collect::<dispatchd_core::Result<Vec<_>>>()?;
        for m in &methods {
            if m.competitive_ratio.is_some_and(|c| c < 1.0 - 1e-12) {
                return Err(anyhow!("{} beats the hindsight optimum on {kind}: accounting bug", m.method));
            }
        }
        if kind == cfg.regime {
            let ledger: Vec<LedgerRow> = metrics::energy_ledger(&runs, &rates, hind);
            metrics::write_ledger_csv(&ledger, &run.join("reports").join("ledger.csv"))?;
        }
        regimes.insert(kind.to_string(), RegimeReport { hindsight_cost: hind, methods });
    }
    let report = MetricsReport { version: VERSION.into(), seed: cfg.seed, ledger_regime: cfg.regime.to_string(), regimes };
    let path = run.join("reports").join("metrics.json");
    write(&path, &(serde_json::to_string_pretty(&report)? + "\n"))?;
    println!(
        "compared {} methods on {} regimes; metrics in {}",
        report.regimes.values().next().map_or(0, |r| r.methods.len()),
        report.regimes.len(),
        path.display()
    );
    Ok(())
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, |v| v.to_string())
}

fn cmd_report(run: &Path, format: ReportFormat, ledger: bool) -> anyhow::Result<()> {
    let out = if ledger { ledger_report(run, format)? } else { metrics_report(run, format)? };
    emit(&out)
}

fn ledger_report(run: &Path, format: ReportFormat) -> anyhow::Result<String> {
    let text = read(&run.join("reports").join("ledger.csv"))?;
    if format == ReportFormat::Csv {
        return Ok(text);
    }
    let mut rows = Vec::new();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().map(|h| h.split(',').collect()).unwrap_or_default();
    for line in lines {
        let obj: serde_json::Map<String, serde_json::Value> = header
            .iter()
            .zip(line.split(','))
            .map(|(k, v)| (k.to_string(), v.parse::<f64>().map_or_else(|_| serde_json::Value::String(v.into()), |f| serde_json::json!(f))))
            .collect();
        rows.push(serde_json::Value::Object(obj));
    }
    Ok(serde_json::to_string_pretty(&rows)? + "\n")
}

fn metrics_report(run: &Path, format: ReportFormat) -> anyhow::Result<String> {
    let path = run.join("reports").join("metrics.json");
    let report: MetricsReport = serde_json::from_str(&read(&path)?).with_context(|| format!("{}", path.display()))?;
    if format == ReportFormat::Json {
        return Ok(serde_json::to_string_pretty(&report)? + "\n");
    }
    let mut out = String::from("regime,method,accuracy,mae_kwh,explained_variance,competitive_ratio,total_cost\n");
    for (regime, r) in &report.regimes {
        for m in &r.methods {
            out += &format!(
                "{regime},{},{},{},{},{},{}\n",
                m.method,
                opt(m.accuracy),
                m.mae_kwh,
                opt(m.explained_variance),
                opt(m.competitive_ratio),
                m.total_cost
            );
        }
    }
    Ok(out)
}

/// Writes to stdout; a closed reader (e.g. `| head`) is not an error.
fn emit(text: &str) -> anyhow::Result<()> {
    let mut stdout = std::io::stdout().lock();
    match stdout.write_all(text.as_bytes()).and_then(|()| stdout.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

/// Runs every stage end to end in `dir` (3 stations, 10 episodes, one
/// worker) and returns the path of the metrics JSON.
pub fn pipeline_smoke(dir: &Path, seed: u64) -> anyhow::Result<PathBuf> {
    let s = |p: PathBuf| p.to_string_lossy().into_owned();
    let traces = s(dir.join("traces"));
    let states = s(dir.join("states"));
    let run_dir = s(dir.join("run"));
    let seed = seed.to_string();
    let stages: Vec<(&str, Vec<String>)> = vec![
        ("synth", vec!["synth", "--sbs", "3", "--days", "3", "--seed", &seed, "--out", &traces].into_iter().map(String::from).collect()),
        ("build-state", vec!["build-state".into(), "--traces".into(), traces.clone(), "--out".into(), states.clone()]),
        (
            "oracle",
            vec![
                "oracle".into(),
                "--state".into(),
                s(dir.join("states").join("day1_state.csv")),
                "--mode".into(),
                "scenario".into(),
                "--history".into(),
                s(dir.join("states").join("day0_state.csv")),
                s(dir.join("states").join("day2_state.csv")),
                "--out".into(),
                s(dir.join("oracle").join("day1_scenario.csv")),
            ],
        ),
        (
            "train",
            ["train", "--run", &run_dir, "--states", &states, "--traces", &traces, "--episodes", "10", "--workers", "1", "--seed", &seed]
                .into_iter()
                .map(String::from)
                .collect(),
        ),
        ("eval", ["eval", "--run", &run_dir, "--states", &states].into_iter().map(String::from).collect()),
        ("compare", ["compare", "--run", &run_dir, "--states", &states, "--traces", &traces].into_iter().map(String::from).collect()),
        ("report", ["report", "--run", &run_dir, "--format", "csv"].into_iter().map(String::from).collect()),
    ];
    for (name, args) in stages {
        run(std::iter::once("dispatchd".to_string()).chain(args)).with_context(|| format!("stage {name}"))?;
    }
    let metrics = dir.join("run").join("reports").join("metrics.json");
    if !metrics.exists() {
        bail!("stage report: {} not produced", metrics.display());
    }
    Ok(metrics)
}
