//! The `xil` command line.
//!
//! Subcommands run the Master (`master`), a Minion (`minion`), both in one
//! process (`local`), the reference controller (`baseline`) and comparison
//! tables (`report`). [`run`] returns the process exit code.

use std::ffi::OsString;
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};
use log::info;
use xilrl_core::plant::{DriveCycle, Tier};
use xilrl_core::{Algorithm, KvConfig};
use xilrl_protocol::{Connection, Timings, DEFAULT_PORT};
use xilrl_runtime::master::{reward_sweep, Baseline, Link, MinionSource, SweepReport, TcpSource, LEDGER_FILE};
use xilrl_runtime::report::{make_comparison_table, summaries_to_csv, summarize};
use xilrl_runtime::{baseline_run, run_minion, run_training, transfer_policy, with_local_minion, ErrorClass, MinionOptions, PlantSetup, RunLedger, RuntimeError, TrainingPlan};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_PROTOCOL: i32 = 4;
pub const EXIT_TRAINING: i32 = 5;
pub const EXIT_IO: i32 = 6;

#[derive(Debug, Parser)]
#[command(name = "xil", version, about = "Distributed XiL reinforcement learning for engine EGR control")]
pub struct Cli {
    /// Overrides the plan seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Base `key = value` file; plan and plant files override its keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Orchestrate training against Minions connecting over TCP.
    Master {
        #[command(subcommand)]
        action: MasterAction,
    },
    /// Run rollouts for a Master.
    Minion(MinionArgs),
    /// Master and Minion in one process over an in-memory link.
    Local {
        #[command(subcommand)]
        action: LocalAction,
    },
    /// Run the reference controller over the validation segments and
    /// write it as a one-row ledger.
    Baseline(BaselineArgs),
    /// Compare ledgers against a baseline.
    Report(ReportArgs),
}

#[derive(Debug, Subcommand)]
pub enum MasterAction {
    Train {
        #[command(flatten)]
        plan: PlanArgs,
        #[command(flatten)]
        net: NetArgs,
    },
    Transfer {
        /// Source checkpoint (`.pol`).
        #[arg(long)]
        from: PathBuf,
        #[command(flatten)]
        plan: PlanArgs,
        #[command(flatten)]
        net: NetArgs,
    },
    Sweep {
        #[arg(long)]
        from: PathBuf,
        /// Comma-separated f_nox values.
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<f64>,
        #[command(flatten)]
        plan: PlanArgs,
        #[command(flatten)]
        plant: PlantArgs,
        #[command(flatten)]
        net: NetArgs,
    },
    /// Summarize every ledger under a directory.
    Report {
        #[arg(long)]
        ledger: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum LocalAction {
    Train {
        #[command(flatten)]
        plan: PlanArgs,
        #[command(flatten)]
        plant: PlantArgs,
    },
    Transfer {
        #[arg(long)]
        from: PathBuf,
        #[command(flatten)]
        plan: PlanArgs,
        #[command(flatten)]
        plant: PlantArgs,
    },
    Sweep {
        #[arg(long)]
        from: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<f64>,
        #[command(flatten)]
        plan: PlanArgs,
        #[command(flatten)]
        plant: PlantArgs,
    },
}

#[derive(Debug, Clone, Args)]
pub struct PlanArgs {
    /// Plan file (`key = value`).
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[arg(long)]
    pub algo: Option<Algorithm>,
    #[arg(long)]
    pub cycles: Option<u32>,
    /// Experiences per training cycle.
    #[arg(long)]
    pub experiences: Option<usize>,
    #[arg(long)]
    pub tier: Option<Tier>,
    /// Checkpoint and ledger directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct PlantArgs {
    /// Drive cycle CSV (`time_s,speed_kmh`); a synthetic cycle otherwise.
    #[arg(long)]
    pub cycle_file: Option<PathBuf>,
    #[arg(long)]
    pub plant_config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct NetArgs {
    #[arg(long, default_value_t = format!("0.0.0.0:{DEFAULT_PORT}"))]
    pub listen: String,
    /// Seconds to wait for a Minion to (re)connect.
    #[arg(long, default_value_t = 120)]
    pub accept_timeout: u64,
}

#[derive(Debug, Clone, Args)]
pub struct MinionArgs {
    #[arg(long, default_value_t = format!("127.0.0.1:{DEFAULT_PORT}"))]
    pub connect: String,
    #[arg(long, default_value = "mil")]
    pub tier: Tier,
    #[command(flatten)]
    pub plant: PlantArgs,
    #[arg(long, default_value = "minion")]
    pub id: String,
    /// Reconnection attempts after a lost connection.
    #[arg(long, default_value_t = 10)]
    pub redials: usize,
}

#[derive(Debug, Clone, Args)]
pub struct BaselineArgs {
    #[command(flatten)]
    pub plan: PlanArgs,
    #[command(flatten)]
    pub plant: PlantArgs,
    /// Output CSV.
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Ledger files, or directories holding a `ledger.csv`.
    #[arg(long, num_args = 1.., required = true)]
    pub compare: Vec<PathBuf>,
    /// One-row baseline ledger.
    #[arg(long)]
    pub baseline: PathBuf,
    /// Also write the table as CSV.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

/// Parses `argv` (program name first) and runs it.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &RuntimeError) -> i32 {
    match e.class() {
        ErrorClass::Config => EXIT_CONFIG,
        ErrorClass::Protocol => EXIT_PROTOCOL,
        ErrorClass::Training => EXIT_TRAINING,
        ErrorClass::Io => EXIT_IO,
    }
}

fn execute(cli: &Cli) -> Result<(), RuntimeError> {
    match &cli.command {
        Command::Master { action } => master(cli, action),
        Command::Minion(args) => minion(cli, args),
        Command::Local { action } => local(cli, action),
        Command::Baseline(args) => baseline(cli, args),
        Command::Report(args) => report(args),
    }
}

/// `--config`, then the given files, later keys winning.
fn load_config(cli: &Cli, files: &[Option<&PathBuf>]) -> Result<KvConfig, RuntimeError> {
    let mut cfg = KvConfig::new();
    for path in std::iter::once(cli.config.as_ref()).chain(files.iter().copied()).flatten() {
        cfg.merge(&KvConfig::load(path)?);
    }
    Ok(cfg)
}

fn build_plan(cli: &Cli, args: &PlanArgs, plant: Option<&PlantArgs>) -> Result<(TrainingPlan, KvConfig), RuntimeError> {
    let cfg = load_config(cli, &[args.plan.as_ref(), plant.and_then(|p| p.plant_config.as_ref())])?;
    let mut plan_cfg = cfg.clone();
    // command-line overrides go through the same parser as plan files
    if let Some(a) = args.algo {
        plan_cfg.set("algorithm", a);
    }
    if let Some(c) = args.cycles {
        plan_cfg.set("total_cycles", c);
    }
    if let Some(n) = args.experiences {
        plan_cfg.set("experiences_per_cycle", n);
        plan_cfg.set("ppo.experiences_per_cycle", n);
        plan_cfg.set("ppo.train_batch", n);
        plan_cfg.set("ddpg.experiences_per_cycle", n);
        if plan_cfg.parse_opt::<usize>("ppo.sgd_minibatch")?.is_none_or(|m| m > n) {
            plan_cfg.set("ppo.sgd_minibatch", n.clamp(1, 256));
        }
    }
    if let Some(t) = args.tier {
        plan_cfg.set("tier", t);
        if cfg.get("equivalent_time_factor").is_none() {
            plan_cfg.set("equivalent_time_factor", xilrl_runtime::master::default_time_factor(t));
        }
    }
    if let Some(dir) = &args.out {
        plan_cfg.set("checkpoint_dir", dir.display());
    }
    if let Some(seed) = cli.seed {
        plan_cfg.set("seed", seed);
    }
    let plan = TrainingPlan::from_config(&plan_cfg)?;
    Ok((plan, cfg))
}

fn plant_setup(tier: Tier, plant: &PlantArgs, cfg: &KvConfig) -> Result<PlantSetup, RuntimeError> {
    let cycle = match &plant.cycle_file {
        Some(path) => DriveCycle::from_csv(path)?,
        None => DriveCycle::synthetic(),
    };
    PlantSetup::from_config(cycle, tier, cfg)
}

fn print_run(plan: &TrainingPlan, ledger: &RunLedger) {
    let s = summarize(&plan.checkpoint_dir.display().to_string(), ledger);
    println!(
        "{} cycles, max validation reward {}, convergence cycle {}, ledger {}",
        s.cycles,
        s.max_validation_reward.map_or("-".into(), |v| format!("{v:.4}")),
        s.convergence_cycle.map_or("not converged".into(), |c| c.to_string()),
        plan.checkpoint_dir.join(LEDGER_FILE).display()
    );
}

fn print_sweep(report: &SweepReport, dir: &Path) -> Result<(), RuntimeError> {
    let mut text = String::from("rank,f_nox,final_validation_reward,final_nox,final_soot,max_validation_reward,beats_reference,ledger\n");
    for (rank, &i) in report.ranking.iter().enumerate() {
        let e = &report.entries[i];
        let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            rank + 1,
            e.f_nox,
            opt(e.final_validation.validation_reward),
            opt(e.final_validation.cumulative_nox),
            opt(e.final_validation.cumulative_soot),
            e.max_validation_reward,
            e.beats_reference,
            e.ledger_path.display()
        ));
    }
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("sweep.csv"), &text)?;
    print!("{text}");
    Ok(())
}

fn sweep_baseline(plan: &TrainingPlan, setup: &PlantSetup) -> Result<Baseline, RuntimeError> {
    baseline_run(setup, &plan.validation_segments, plan.validation_seed(), &plan.reward_weights)
}

fn tcp_source(net: &NetArgs) -> Result<TcpSource, RuntimeError> {
    let source = TcpSource::bind(net.listen.as_str(), Timings::default(), Duration::from_secs(net.accept_timeout))?;
    info!("master listening on {}", source.local_addr()?);
    Ok(source)
}

fn with_tcp<T>(net: &NetArgs, body: impl FnOnce(&mut Link<'_>) -> Result<T, RuntimeError>) -> Result<T, RuntimeError> {
    let mut source = tcp_source(net)?;
    let source: &mut dyn MinionSource = &mut source;
    let mut link = Link::new(source);
    let result = body(&mut link);
    link.shutdown();
    result
}

fn master(cli: &Cli, action: &MasterAction) -> Result<(), RuntimeError> {
    match action {
        MasterAction::Train { plan, net } => {
            let (plan, _) = build_plan(cli, plan, None)?;
            let out = with_tcp(net, |link| run_training(&plan, link))?;
            print_run(&plan, &out.ledger);
        }
        MasterAction::Transfer { from, plan, net } => {
            let (plan, _) = build_plan(cli, plan, None)?;
            let out = with_tcp(net, |link| transfer_policy(from, &plan, link))?;
            print_run(&plan, &out.ledger);
        }
        MasterAction::Sweep { from, grid, plan, plant, net } => {
            let (plan, cfg) = build_plan(cli, plan, Some(plant))?;
            let baseline = sweep_baseline(&plan, &plant_setup(plan.tier, plant, &cfg)?)?;
            let report = with_tcp(net, |link| reward_sweep(from, grid, &plan, &baseline, link))?;
            print_sweep(&report, &plan.checkpoint_dir)?;
        }
        MasterAction::Report { ledger } => master_report(ledger)?,
    }
    Ok(())
}

/// Every `ledger.csv` under `dir`, depth first, sorted by path.
fn find_ledgers(dir: &Path) -> Result<Vec<PathBuf>, RuntimeError> {
    let mut found = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n == LEDGER_FILE) {
                found.push(path);
            }
        }
    }
    found.sort();
    Ok(found)
}

fn master_report(dir: &Path) -> Result<(), RuntimeError> {
    let paths = find_ledgers(dir)?;
    if paths.is_empty() {
        return Err(RuntimeError::Report(format!("no {LEDGER_FILE} under {}", dir.display())));
    }
    let mut summaries = Vec::new();
    for path in &paths {
        let name = path.parent().and_then(|p| p.strip_prefix(dir).ok()).map(|p| p.display().to_string()).filter(|s| !s.is_empty()).unwrap_or_else(|| ".".into());
        summaries.push(summarize(&name, &RunLedger::load(path)?));
    }
    let csv = summaries_to_csv(&summaries).map_err(|e| RuntimeError::Report(e.to_string()))?;
    std::fs::write(dir.join("summary.csv"), &csv)?;
    println!("{:<24} {:>6} {:>12} {:>12} {:>6} {:>11} {:>9} {:>9}", "run", "cycles", "max train", "max valid.", "best", "converged", "entropy0", "entropy");
    for s in &summaries {
        let f = |v: Option<f64>| v.map_or("-".into(), |v| format!("{v:.4}"));
        let u = |v: Option<u32>| v.map_or("-".into(), |v| v.to_string());
        println!(
            "{:<24} {:>6} {:>12} {:>12} {:>6} {:>11} {:>9} {:>9}",
            s.name,
            s.cycles,
            f(s.max_train_reward),
            f(s.max_validation_reward),
            u(s.best_cycle),
            u(s.convergence_cycle),
            f(s.first_entropy),
            f(s.last_entropy)
        );
    }
    Ok(())
}

fn minion(cli: &Cli, args: &MinionArgs) -> Result<(), RuntimeError> {
    let cfg = load_config(cli, &[args.plant.plant_config.as_ref()])?;
    let setup = plant_setup(args.tier, &args.plant, &cfg)?;
    let options = MinionOptions {
        peer_id: args.id.clone(),
        ..Default::default()
    };
    let addr = args.connect.clone();
    let dial = || -> Result<Connection, RuntimeError> {
        let stream = TcpStream::connect(addr.as_str())?;
        stream.set_nodelay(true)?;
        info!("minion connected to {addr}");
        Ok(Connection::open(stream, Timings::default())?)
    };
    run_minion(dial, &setup, options, args.redials)
}

fn local(cli: &Cli, action: &LocalAction) -> Result<(), RuntimeError> {
    let timings = Timings::default();
    match action {
        LocalAction::Train { plan, plant } => {
            let (plan, cfg) = build_plan(cli, plan, Some(plant))?;
            let setup = plant_setup(plan.tier, plant, &cfg)?;
            let out = with_local_minion(&setup, MinionOptions::default(), timings, |link| run_training(&plan, link))?;
            print_run(&plan, &out.ledger);
        }
        LocalAction::Transfer { from, plan, plant } => {
            let (plan, cfg) = build_plan(cli, plan, Some(plant))?;
            let setup = plant_setup(plan.tier, plant, &cfg)?;
            let out = with_local_minion(&setup, MinionOptions::default(), timings, |link| transfer_policy(from, &plan, link))?;
            print_run(&plan, &out.ledger);
        }
        LocalAction::Sweep { from, grid, plan, plant } => {
            let (plan, cfg) = build_plan(cli, plan, Some(plant))?;
            let setup = plant_setup(plan.tier, plant, &cfg)?;
            let baseline = sweep_baseline(&plan, &setup)?;
            let report = with_local_minion(&setup, MinionOptions::default(), timings, |link| reward_sweep(from, grid, &plan, &baseline, link))?;
            print_sweep(&report, &plan.checkpoint_dir)?;
        }
    }
    Ok(())
}

fn baseline(cli: &Cli, args: &BaselineArgs) -> Result<(), RuntimeError> {
    let (plan, cfg) = build_plan(cli, &args.plan, Some(&args.plant))?;
    let setup = plant_setup(plan.tier, &args.plant, &cfg)?;
    let b = sweep_baseline(&plan, &setup)?;
    b.to_ledger().save(&args.output)?;
    println!(
        "reference controller: reward {:.4}, NOx {:.3} g, soot {:.4} g over {} segments -> {}",
        b.summary.reward,
        b.summary.cumulative_nox,
        b.summary.cumulative_soot,
        b.episodes.len(),
        args.output.display()
    );
    Ok(())
}

fn ledger_at(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(LEDGER_FILE)
    } else {
        path.to_path_buf()
    }
}

fn ledger_name(path: &Path) -> String {
    let p = if path.file_name().is_some_and(|n| n == LEDGER_FILE) { path.parent().unwrap_or(path) } else { path };
    p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn report(args: &ReportArgs) -> Result<(), RuntimeError> {
    let mut ledgers = Vec::new();
    for p in &args.compare {
        let path = ledger_at(p);
        ledgers.push((ledger_name(&path), RunLedger::load(&path)?));
    }
    let baseline = RunLedger::load(ledger_at(&args.baseline))?;
    let table = make_comparison_table(&ledgers, &baseline)?;
    print!("{table}");
    if let Some(out) = &args.csv {
        std::fs::write(out, table.to_csv().map_err(|e| RuntimeError::Report(e.to_string()))?)?;
    }
    Ok(())
}
