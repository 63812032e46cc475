//! Command-line front end: solve and cache value functions, run evaluation
//! campaigns, train the learned supervisor, run the ablation grid, and render
//! trajectory plots.

mod episode;
mod errors;

use clap::{Args, Parser, Subcommand, ValueEnum};
use episode::{run_episode, EpisodeSetup};
use errors::CliError;
use lrcam::config::RunConfig;
use lrcam::env::{restrictiveness_factor, success_rate, success_rate_subset, EpisodeTrace};
use lrcam::learner::{train, LearnerParams, RoundMetrics, TrainConfig};
use lrcam::nn::{load_checkpoint, save_checkpoint};
use lrcam::plot::render_trace_svg;
use lrcam::reachability::{
    load_value_function, save_value_function, solve_brs, ValueFunction,
};
use lrcam::reward::RewardKind;
use lrcam::supervisor::SupervisorKind;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

/// Environment variable naming the default output root.
const OUT_ENV: &str = "LRCAM_OUT";

#[derive(Parser)]
#[command(name = "lrcam", version, about = "Least-restrictive collision avoidance toolkit")]
struct Cli {
    /// Output root; defaults to $LRCAM_OUT or ./lrcam-out.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve the pairwise safety value function and cache it on disk.
    SolveBrs(SolveArgs),
    /// Run an evaluation campaign and write traces + metrics.
    Run(RunArgs),
    /// Train the learned supervisor.
    Train(TrainArgs),
    /// Train and evaluate the reward and observation ablation variants.
    Ablate(AblateArgs),
    /// Render trace files to SVG.
    Plot(PlotArgs),
}

#[derive(Args)]
struct SolveArgs {
    /// TOML run configuration; omit for defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Explicit output file (default: <out>/brs/<params-hash>.hjvf).
    #[arg(long)]
    file: Option<PathBuf>,
    /// Re-solve even when a cached file exists.
    #[arg(long)]
    force: bool,
    /// Write the result even when the residual never met the tolerance.
    #[arg(long)]
    allow_unconverged: bool,
    /// Force the sequential solver path.
    #[arg(long)]
    sequential: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SupervisorArg {
    Classical,
    Learned,
    None,
    AlwaysInterrupt,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RewardArg {
    Hj,
    Distance,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Supervisor assignment for adopting agents.
    #[arg(long, value_enum)]
    supervisor: Option<SupervisorArg>,
    /// How many of the n agents adopt the supervisor (default: all).
    #[arg(long)]
    adopters: Option<usize>,
    #[arg(long, value_enum)]
    reward: Option<RewardArg>,
    /// Learned-supervisor checkpoint (overrides the config).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Value-function file (default: the cache location for the config).
    #[arg(long)]
    brs: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    repetitions: Option<usize>,
    /// Worker threads for the trial fan-out (default: all cores).
    #[arg(long)]
    workers: Option<usize>,
    /// Subdirectory name under the output root (default: "run").
    #[arg(long, default_value = "run")]
    label: String,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Resume from a checkpoint.
    #[arg(long)]
    resume: Option<PathBuf>,
    #[arg(long)]
    brs: Option<PathBuf>,
    #[arg(long, default_value = "train")]
    label: String,
    // flag overrides; flags win over file values
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    episodes_per_round: Option<usize>,
    #[arg(long)]
    heatup_rounds: Option<usize>,
    #[arg(long)]
    vae_updates_per_round: Option<usize>,
    #[arg(long)]
    latent_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    single_frame: Option<bool>,
    #[arg(long)]
    kl_weight: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    clip_eps: Option<f64>,
    #[arg(long)]
    kl_beta: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    minibatch: Option<usize>,
    #[arg(long)]
    lr_policy: Option<f64>,
    #[arg(long)]
    lr_critic: Option<f64>,
    #[arg(long)]
    lr_vae: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    reward: Option<RewardArg>,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    brs: Option<PathBuf>,
    #[arg(long, default_value = "ablate")]
    label: String,
    /// Evaluation trials per agent count.
    #[arg(long, default_value_t = 20)]
    eval_trials: usize,
    /// Agent counts evaluated per variant.
    #[arg(long, value_delimiter = ',', default_values_t = [4usize, 5, 6])]
    agents: Vec<usize>,
}

#[derive(Args)]
struct PlotArgs {
    /// Trace files (JSON lines) to render.
    traces: Vec<PathBuf>,
    /// Output directory (default: next to each trace).
    #[arg(long)]
    dir: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = dispatch(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let out_root = cli
        .out
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("lrcam-out"));
    match cli.cmd {
        Cmd::SolveBrs(args) => cmd_solve_brs(&out_root, args),
        Cmd::Run(args) => cmd_run(&out_root, args),
        Cmd::Train(args) => cmd_train(&out_root, args),
        Cmd::Ablate(args) => cmd_ablate(&out_root, args),
        Cmd::Plot(args) => cmd_plot(args),
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig, CliError> {
    match path {
        Some(p) => RunConfig::load(p).map_err(CliError::from),
        None => Ok(RunConfig::default()),
    }
}

fn brs_cache_path(out_root: &Path, cfg: &RunConfig) -> PathBuf {
    let hash = ValueFunction::params_hash(&cfg.grid, &cfg.game);
    out_root.join("brs").join(format!("{hash:016x}.hjvf"))
}

fn cmd_solve_brs(out_root: &Path, args: SolveArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&args.config)?;
    if args.sequential {
        cfg.solve.parallel = false;
    }
    let path = args.file.unwrap_or_else(|| brs_cache_path(out_root, &cfg));

    if !args.force && path.exists() {
        match load_value_function(&path) {
            Ok(vf)
                if ValueFunction::params_hash(&vf.grid, &vf.params)
                    == ValueFunction::params_hash(&cfg.grid, &cfg.game)
                    && (vf.converged || args.allow_unconverged) =>
            {
                println!(
                    "cache hit: {} (iterations {}, residual {:.3e})",
                    path.display(),
                    vf.iterations,
                    vf.residual
                );
                return Ok(());
            }
            _ => {} // stale or foreign file: recompute
        }
    }

    let start = Instant::now();
    let vf = solve_brs(&cfg.grid, &cfg.game, &cfg.solve);
    let wall = start.elapsed();
    println!(
        "solved {}x{}x{} grid: iterations {}, residual {:.3e}, wall {:.1}s",
        cfg.grid.nx,
        cfg.grid.ny,
        cfg.grid.ntheta,
        vf.iterations,
        vf.residual,
        wall.as_secs_f64()
    );
    if !vf.converged && !args.allow_unconverged {
        return Err(CliError::Unconverged(format!(
            "residual {:.3e} after {} iterations (tol {:.1e}); raise max_iters or pass \
             --allow-unconverged",
            vf.residual, vf.iterations, cfg.solve.tol
        )));
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    save_value_function(&vf, &path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn load_brs(
    out_root: &Path,
    cfg: &RunConfig,
    explicit: &Option<PathBuf>,
) -> Result<Arc<ValueFunction>, CliError> {
    let path = explicit.clone().unwrap_or_else(|| brs_cache_path(out_root, cfg));
    if !path.exists() {
        return Err(CliError::Config(format!(
            "no value function at {}; run `lrcam solve-brs` first",
            path.display()
        )));
    }
    Ok(Arc::new(load_value_function(&path)?))
}

fn load_learner(path: &Path) -> Result<(LearnerParams, TrainConfig), CliError> {
    let ck = load_checkpoint(path)?;
    let train_cfg: TrainConfig = serde_json::from_str(&ck.manifest)
        .map_err(|e| CliError::Config(format!("checkpoint manifest unreadable: {e}")))?;
    let params = LearnerParams::from_checkpoint(&ck)?;
    Ok((params, train_cfg))
}

struct RepetitionRow {
    rep: usize,
    success: f64,
    adopter_success: f64,
    restrictiveness: f64,
    collisions: usize,
    timeouts: usize,
}

fn cmd_run(out_root: &Path, args: RunArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&args.config)?;
    if let Some(t) = args.trials {
        cfg.trials = t;
    }
    if let Some(r) = args.repetitions {
        cfg.repetitions = r;
    }
    if let Some(r) = args.reward {
        cfg.reward_kind = match r {
            RewardArg::Hj => RewardKind::Hj,
            RewardArg::Distance => RewardKind::Distance,
        };
    }
    if let Some(s) = args.supervisor {
        cfg.supervisor.kind = match s {
            SupervisorArg::Classical => SupervisorKind::Classical,
            SupervisorArg::Learned => SupervisorKind::Learned,
            SupervisorArg::None => SupervisorKind::AlwaysDefault,
            SupervisorArg::AlwaysInterrupt => SupervisorKind::AlwaysInterrupt,
        };
    }
    if let Some(ck) = &args.checkpoint {
        cfg.supervisor.checkpoint = Some(ck.clone());
    }
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;

    let vf = load_brs(out_root, &cfg, &args.brs)?;
    let n = cfg.task.n_agents;
    let adopters = args.adopters.unwrap_or(n).min(n);

    let learned = match cfg.supervisor.kind {
        SupervisorKind::Learned => {
            let path = cfg.supervisor.checkpoint.clone().ok_or_else(|| {
                CliError::Config("learned supervisor needs --checkpoint".into())
            })?;
            let (params, train_cfg) = load_learner(&path)?;
            Some(Arc::new(lrcam::supervisor::LearnedSupervisor::new(
                params,
                train_cfg.vae,
                false,
            )))
        }
        _ => None,
    };

    let dir = out_root.join(&args.label);
    std::fs::create_dir_all(&dir)?;
    cfg.save(&dir.join("config.resolved.toml"))?;

    let setup = EpisodeSetup {
        cfg: cfg.clone(),
        vf: Arc::clone(&vf),
        adopters,
        learned,
    };
    let workers = args
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
        .max(1);

    // episode index = rep * trials + trial; merged back by index
    let total = cfg.repetitions * cfg.trials;
    let traces = fan_out(total, workers, |idx| {
        let rep = idx / cfg.trials;
        let trial = idx % cfg.trials;
        run_episode(&setup, rep, trial)
    })?;

    let mut metrics = std::fs::File::create(dir.join("metrics.csv"))?;
    writeln!(
        metrics,
        "rep,success_rate,adopter_success_rate,restrictiveness,collisions,timeouts"
    )?;
    let mut rows = Vec::new();
    for rep in 0..cfg.repetitions {
        let slice = &traces[rep * cfg.trials..(rep + 1) * cfg.trials];
        for (trial, trace) in slice.iter().enumerate() {
            trace.save_jsonl(&dir.join(format!("trace_r{rep}_t{trial}.jsonl")))?;
        }
        let row = RepetitionRow {
            rep,
            success: success_rate(slice),
            adopter_success: success_rate_subset(slice, |i| i < adopters),
            restrictiveness: restrictiveness_factor(slice),
            collisions: count_status(slice, lrcam::env::AgentStatus::Collision),
            timeouts: count_status(slice, lrcam::env::AgentStatus::Timeout),
        };
        writeln!(
            metrics,
            "{},{},{},{},{},{}",
            row.rep, row.success, row.adopter_success, row.restrictiveness, row.collisions,
            row.timeouts
        )?;
        rows.push(row);
    }

    let mean = |f: fn(&RepetitionRow) -> f64| {
        rows.iter().map(f).sum::<f64>() / rows.len() as f64
    };
    let std = |f: fn(&RepetitionRow) -> f64, m: f64| {
        (rows.iter().map(|r| (f(r) - m).powi(2)).sum::<f64>() / rows.len() as f64).sqrt()
    };
    let sm = mean(|r| r.success);
    let am = mean(|r| r.adopter_success);
    let rm = mean(|r| r.restrictiveness);
    let mut summary = std::fs::File::create(dir.join("summary.csv"))?;
    writeln!(summary, "metric,mean,std")?;
    writeln!(summary, "success_rate,{},{}", sm, std(|r| r.success, sm))?;
    writeln!(summary, "adopter_success_rate,{},{}", am, std(|r| r.adopter_success, am))?;
    writeln!(summary, "restrictiveness,{},{}", rm, std(|r| r.restrictiveness, rm))?;
    println!(
        "{} episodes: success {:.3}, adopter success {:.3}, restrictiveness {:.3} -> {}",
        total,
        sm,
        am,
        rm,
        dir.display()
    );
    Ok(())
}

fn count_status(traces: &[EpisodeTrace], status: lrcam::env::AgentStatus) -> usize {
    traces
        .iter()
        .flat_map(|t| t.final_status.iter())
        .filter(|&&s| s == status)
        .count()
}

/// Deterministic fan-out: episode `i` always lands in slot `i`.
fn fan_out<T: Send>(
    total: usize,
    workers: usize,
    job: impl Fn(usize) -> Result<T, CliError> + Sync,
) -> Result<Vec<T>, CliError> {
    let mut slots: Vec<Option<Result<T, CliError>>> = (0..total).map(|_| None).collect();
    let chunks: Vec<&mut [Option<Result<T, CliError>>]> = chunk_mut(&mut slots, workers);
    std::thread::scope(|scope| {
        let mut offset = 0;
        for chunk in chunks {
            let start = offset;
            offset += chunk.len();
            let job = &job;
            scope.spawn(move || {
                for (k, slot) in chunk.iter_mut().enumerate() {
                    *slot = Some(job(start + k));
                }
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.expect("every slot filled"))
        .collect()
}

fn chunk_mut<T>(v: &mut [T], parts: usize) -> Vec<&mut [T]> {
    let size = v.len().div_ceil(parts.max(1)).max(1);
    v.chunks_mut(size).collect()
}

fn apply_train_overrides(cfg: &mut RunConfig, args: &TrainArgs) {
    macro_rules! set {
        ($field:expr, $arg:expr) => {
            if let Some(v) = $arg {
                $field = v;
            }
        };
    }
    set!(cfg.train.rounds, args.rounds);
    set!(cfg.train.episodes_per_round, args.episodes_per_round);
    set!(cfg.train.heatup_rounds, args.heatup_rounds);
    set!(cfg.train.vae_updates_per_round, args.vae_updates_per_round);
    set!(cfg.train.vae.latent_dim, args.latent_dim);
    set!(cfg.train.vae.hidden_dim, args.hidden_dim);
    set!(cfg.train.vae.single_frame, args.single_frame);
    set!(cfg.train.vae.kl_weight, args.kl_weight);
    set!(cfg.train.ppo.gamma, args.gamma);
    set!(cfg.train.ppo.lambda, args.lambda);
    set!(cfg.train.ppo.clip_eps, args.clip_eps);
    set!(cfg.train.ppo.kl_beta, args.kl_beta);
    set!(cfg.train.ppo.epochs, args.epochs);
    set!(cfg.train.ppo.minibatch, args.minibatch);
    set!(cfg.train.ppo.lr_policy, args.lr_policy);
    set!(cfg.train.ppo.lr_critic, args.lr_critic);
    set!(cfg.train.ppo.lr_vae, args.lr_vae);
    set!(cfg.train.ppo.tau, args.tau);
    set!(cfg.seed, args.seed);
    if let Some(r) = args.reward {
        cfg.reward_kind = match r {
            RewardArg::Hj => RewardKind::Hj,
            RewardArg::Distance => RewardKind::Distance,
        };
    }
}

fn cmd_train(out_root: &Path, args: TrainArgs) -> Result<(), CliError> {
    let mut cfg = load_config(&args.config)?;
    apply_train_overrides(&mut cfg, &args);
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let vf = load_brs(out_root, &cfg, &args.brs)?;

    let dir = out_root.join(&args.label);
    std::fs::create_dir_all(&dir)?;
    cfg.save(&dir.join("config.resolved.toml"))?;
    let train_cfg = cfg.train_config();
    let manifest = serde_json::to_string(&train_cfg).expect("train config serializes");

    let start_params = match &args.resume {
        Some(path) => Some(load_learner(path)?.0),
        None => None,
    };

    let mut log = std::fs::File::create(dir.join("metrics.csv"))?;
    writeln!(log, "{}", RoundMetrics::csv_header())?;
    let ck_path = dir.join("learner.ckpt");
    let manifest_for_rounds = manifest.clone();
    let result = train(&train_cfg, vf, start_params, |row, params| {
        let _ = writeln!(log, "{}", row.csv_row());
        let _ = log.flush();
        let _ = save_checkpoint(&params.to_checkpoint(manifest_for_rounds.clone()), &ck_path);
        println!(
            "round {:3}{}: elbo {:9.3}, avg reward {:8.3}, successes {}/{} agents",
            row.round,
            if row.heatup { " (heat-up)" } else { "" },
            row.elbo_loss,
            row.avg_reward,
            row.successes,
            row.episodes * train_cfg.tasks[0].n_agents,
        );
    })?;

    save_checkpoint(&result.params.to_checkpoint(manifest), &ck_path)?;
    println!("wrote {} and {}", dir.join("metrics.csv").display(), ck_path.display());
    Ok(())
}

fn cmd_ablate(out_root: &Path, args: AblateArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.config)?;
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let vf = load_brs(out_root, &cfg, &args.brs)?;
    let dir = out_root.join(&args.label);
    std::fs::create_dir_all(&dir)?;
    cfg.save(&dir.join("config.resolved.toml"))?;

    // variants share the seed and the evaluation suite
    let variants: [(&str, RewardKind, bool); 3] = [
        ("hj_reward", RewardKind::Hj, false),
        ("distance_reward", RewardKind::Distance, false),
        ("single_frame", RewardKind::Hj, true),
    ];

    let mut table = std::fs::File::create(dir.join("ablate.csv"))?;
    writeln!(table, "variant,agents,success_rate,restrictiveness")?;
    for (name, reward_kind, single_frame) in variants {
        let mut vcfg = cfg.clone();
        vcfg.reward_kind = reward_kind;
        vcfg.train.vae.single_frame = single_frame;
        let train_cfg = vcfg.train_config();
        println!("training variant {name}...");
        let result = train(&train_cfg, Arc::clone(&vf), None, |_, _| {})?;
        let manifest = serde_json::to_string(&train_cfg).expect("train config serializes");
        save_checkpoint(
            &result.params.to_checkpoint(manifest),
            &dir.join(format!("{name}.ckpt")),
        )?;
        let learned = Arc::new(lrcam::supervisor::LearnedSupervisor::new(
            result.params,
            train_cfg.vae,
            false,
        ));
        for &agents in &args.agents {
            let mut ecfg = vcfg.clone();
            ecfg.task.n_agents = agents;
            ecfg.supervisor.kind = SupervisorKind::Learned;
            let setup = EpisodeSetup {
                cfg: ecfg,
                vf: Arc::clone(&vf),
                adopters: agents,
                learned: Some(Arc::clone(&learned)),
            };
            let traces = (0..args.eval_trials)
                .map(|trial| run_episode(&setup, 0, trial))
                .collect::<Result<Vec<_>, _>>()?;
            let sr = success_rate(&traces);
            let rf = restrictiveness_factor(&traces);
            writeln!(table, "{name},{agents},{sr},{rf}")?;
            println!("  {name} @ {agents} agents: success {sr:.3}, restrictiveness {rf:.3}");
        }
    }
    println!("wrote {}", dir.join("ablate.csv").display());
    Ok(())
}

fn cmd_plot(args: PlotArgs) -> Result<(), CliError> {
    if args.traces.is_empty() {
        return Err(CliError::Config("no trace files given".into()));
    }
    for path in &args.traces {
        let trace = EpisodeTrace::load_jsonl(path)?;
        let svg = render_trace_svg(&trace);
        let out = match &args.dir {
            Some(d) => {
                std::fs::create_dir_all(d)?;
                d.join(path.file_stem().unwrap_or_default()).with_extension("svg")
            }
            None => path.with_extension("svg"),
        };
        std::fs::write(&out, svg)?;
        println!("wrote {}", out.display());
    }
    Ok(())
}
