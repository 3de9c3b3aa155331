//! Command-line driver: simulate, train, evaluate, analyze messages.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use swarmcomm::config::RunConfig;
use swarmcomm::error::Error;
use swarmcomm::eval::{
    comm_sweep, compare, opposite_neighbours_observation, run_episode, trial_seed,
    write_comparison, write_jsonl, PolicySpec,
};
use swarmcomm::nn::{Checkpoint, PolicyNet};
use swarmcomm::trainer::train;
use swarmcomm::world::Task;

#[derive(Parser)]
#[command(
    name = "swarmcomm",
    version,
    about = "Swarm coordination with learned communication"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides every seed in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 1 gives the reference sequential output.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory; defaults to the configuration's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode and write its trajectory log.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// oracle | circumcenter | averaging | stay | learned[:CKPT] | learned-nocomm[:CKPT]
        #[arg(long, default_value = "oracle")]
        policy: String,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        agents: Option<usize>,
    },
    /// Train the shared network and write metrics and a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        /// Agents per training simulation.
        #[arg(long)]
        agents: Option<usize>,
    },
    /// Compare policies over seeded trials.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Comma-separated policy specs; defaults to the configuration's list.
        #[arg(long, value_delimiter = ',')]
        policy: Vec<String>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Comma-separated agent counts.
        #[arg(long, value_delimiter = ',')]
        agents: Vec<usize>,
    },
    /// Sweep a two-value message inflow and export action probabilities.
    AnalyzeComm {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        c_min: Option<f64>,
        #[arg(long)]
        c_max: Option<f64>,
        #[arg(long)]
        resolution: Option<usize>,
    },
}

fn load_config(common: &Common, task_hint: Option<Task>) -> Result<RunConfig> {
    let cfg = match &common.config {
        Some(path) => {
            RunConfig::load(path).with_context(|| format!("reading {}", path.display()))?
        }
        None => RunConfig::default_for(task_hint.unwrap_or(Task::Rendezvous)),
    };
    Ok(match common.seed {
        Some(seed) => cfg.with_seed(seed),
        None => cfg,
    })
}

fn out_dir(common: &Common, cfg: &RunConfig) -> Result<PathBuf> {
    let dir = common.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn load_net(path: &Path, cfg: &RunConfig) -> Result<PolicyNet> {
    let ck = Checkpoint::load(path)?;
    cfg.check_network(ck.task, &ck.shape)?;
    Ok(ck.to_net()?)
}

fn parse_policy(spec: &str, checkpoint: Option<&Path>, cfg: &RunConfig) -> Result<PolicySpec> {
    let (name, arg) = match spec.split_once(':') {
        Some((n, a)) => (n, Some(PathBuf::from(a))),
        None => (spec, None),
    };
    let ckpt = || -> Result<PathBuf> {
        arg.clone()
            .or_else(|| checkpoint.map(Path::to_path_buf))
            .with_context(|| format!("policy `{name}` needs a checkpoint"))
    };
    Ok(match name {
        "oracle" => PolicySpec::Oracle(cfg.oracle),
        "circumcenter" => PolicySpec::Circumcenter,
        "averaging" => PolicySpec::Averaging,
        "stay" => PolicySpec::Stay,
        "learned" => PolicySpec::Learned {
            net: load_net(&ckpt()?, cfg)?,
            mute: false,
        },
        "learned-nocomm" => PolicySpec::Learned {
            net: load_net(&ckpt()?, cfg)?,
            mute: true,
        },
        _ => return Err(Error::UnknownPolicy(spec.to_string()).into()),
    })
}

fn simulate(
    common: &Common,
    policy: &str,
    checkpoint: Option<&Path>,
    agents: Option<usize>,
) -> Result<()> {
    let cfg = load_config(common, None)?;
    let spec = parse_policy(policy, checkpoint, &cfg)?;
    let world = agents.map_or_else(|| cfg.world.clone(), |k| cfg.world.with_agents(k));
    world.validate()?;
    let dir = out_dir(common, &cfg)?;
    let seed = trial_seed(cfg.seed, world.agents, 0);
    let ep = run_episode(&spec, cfg.task, &world, seed, cfg.eval.action_mode, true)?;
    let log = ep.log.expect("recording was requested");
    write_jsonl(&dir.join("episode.jsonl"), &log.steps)?;
    if !log.comm.is_empty() {
        write_jsonl(&dir.join("comm.jsonl"), &log.comm)?;
    }
    let summary = serde_json::json!({
        "task": cfg.task,
        "policy": spec.id(),
        "agents": world.agents,
        "seed": seed,
        "converged": ep.t_done.is_some(),
        "t": ep.t_done,
    });
    fs::write(
        dir.join("summary.json"),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    match ep.t_done {
        Some(t) => println!("{} converged at step {t}", spec.id()),
        None => println!(
            "{} did not converge within {} steps",
            spec.id(),
            world.max_steps
        ),
    }
    Ok(())
}

fn run_train(common: &Common, agents: Option<usize>) -> Result<()> {
    let mut cfg = load_config(common, None)?;
    if let Some(k) = agents {
        cfg.train.agents = k;
    }
    let dir = out_dir(common, &cfg)?;
    let echo = serde_json::to_value(&cfg)?;
    let metrics_path = dir.join("metrics.jsonl");
    let ckpt_path = dir.join("checkpoint.json");
    let mut metrics = std::io::BufWriter::new(fs::File::create(&metrics_path)?);
    let every = (cfg.train.updates / 10).max(1);
    let outcome = train(
        cfg.task,
        &cfg.world,
        &cfg.train,
        cfg.oracle,
        |m, net, opt| {
            use std::io::Write;
            writeln!(metrics, "{}", serde_json::to_string(m)?)?;
            if m.update % every == 0 {
                metrics.flush()?;
                Checkpoint::from_net(cfg.task, net, echo.clone(), Some(opt.clone()))
                    .save(&ckpt_path)?;
                eprintln!(
                    "update {}: loss {:.4}, agreement {:.3}",
                    m.update, m.loss, m.agreement
                );
            }
            Ok(())
        },
    )?;
    {
        use std::io::Write;
        metrics.flush()?;
    }
    Checkpoint::from_net(cfg.task, &outcome.net, echo, Some(outcome.optimizer)).save(&ckpt_path)?;
    println!(
        "wrote {} and {}",
        ckpt_path.display(),
        metrics_path.display()
    );
    Ok(())
}

fn run_eval(
    common: &Common,
    policies: &[String],
    checkpoint: Option<&Path>,
    agents: &[usize],
) -> Result<()> {
    let cfg = load_config(common, None)?;
    let names = if policies.is_empty() {
        cfg.eval.policies.clone()
    } else {
        policies.to_vec()
    };
    let specs = names
        .iter()
        .map(|p| parse_policy(p, checkpoint, &cfg))
        .collect::<Result<Vec<_>>>()?;
    let ks = if agents.is_empty() {
        cfg.eval.agent_counts.clone()
    } else {
        agents.to_vec()
    };
    if ks.is_empty() || specs.is_empty() {
        bail!("nothing to evaluate");
    }
    let dir = out_dir(common, &cfg)?;
    let suites = compare(&specs, &ks, cfg.task, &cfg.world, &cfg.eval.eval_config())?;
    write_comparison(&dir, &suites)?;
    for s in &suites {
        let m = s
            .summary
            .mean_t
            .map_or_else(|| "-".to_string(), |t| format!("{t:.2}"));
        println!(
            "{:<16} K={:<4} CR={:>6.1}%  mean t={m}",
            s.summary.policy, s.summary.agents, s.summary.convergence_rate
        );
    }
    Ok(())
}

fn analyze_comm(
    common: &Common,
    checkpoint: &Path,
    c_min: Option<f64>,
    c_max: Option<f64>,
    resolution: Option<usize>,
) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let cfg = load_config(common, Some(ck.task))?;
    cfg.check_network(ck.task, &ck.shape)?;
    let net = ck.to_net()?;
    let mut range = cfg.sweep.c1;
    if let Some(v) = c_min {
        range.min = v;
    }
    if let Some(v) = c_max {
        range.max = v;
    }
    if let Some(v) = resolution {
        range.resolution = v;
    }
    let obs = opposite_neighbours_observation(&cfg.world.disc);
    let grid = comm_sweep(&net, &obs, range, range)?;
    let dir = out_dir(common, &cfg)?;
    grid.write_csv(&dir, "sweep")?;
    let trend = grid.directional_trend(&cfg.world.disc);
    let report = serde_json::json!({
        "observation": grid.observation,
        "max_sum_error": grid.max_sum_error(),
        "directional_trend": trend,
    });
    fs::write(
        dir.join("trend.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    println!(
        "wrote {} probability surfaces to {}",
        grid.probs.len(),
        dir.display()
    );
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let workers = match &cli.command {
        Command::Simulate { common, .. }
        | Command::Train { common, .. }
        | Command::Eval { common, .. }
        | Command::AnalyzeComm { common, .. } => common.workers,
    };
    if let Some(n) = workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .context("configuring worker pool")?;
    }
    match &cli.command {
        Command::Simulate {
            common,
            policy,
            checkpoint,
            agents,
        } => simulate(common, policy, checkpoint.as_deref(), *agents),
        Command::Train { common, agents } => run_train(common, *agents),
        Command::Eval {
            common,
            policy,
            checkpoint,
            agents,
        } => run_eval(common, policy, checkpoint.as_deref(), agents),
        Command::AnalyzeComm {
            common,
            checkpoint,
            c_min,
            c_max,
            resolution,
        } => analyze_comm(common, checkpoint, *c_min, *c_max, *resolution),
    }
}
