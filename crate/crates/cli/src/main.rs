use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use plaquette::dynamics::Trajectory;
use plaquette::experiments::{
    cmd_arrhenius, cmd_exact, cmd_flow, cmd_simulate, cmd_verify, default_arrhenius_grid, exact_csv, parse_config_text,
    ExperimentConfig, Mutation, SCHEMA,
};
use plaquette::periodic::{
    estimate_trace_kernel, excursion_statistics, gambler_ruin_far, segment_exits, ExcursionStats,
};

#[derive(Parser)]
#[command(name = "spm", version, about = "Square plaquette model experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Gap, relaxation and mixing times, profile bound and ground mass by exact enumeration
    Exact(Opts),
    /// Spectral profile against the inverse canonical-path flow cost
    Flow(Opts),
    /// Mean hitting times at the critical size with a fit of ln E[tau] against beta
    Arrhenius(Opts),
    /// Run the dynamics from the ground state and write the trajectory
    Simulate(Opts),
    /// Replay a trajectory file and print its final configuration
    Replay {
        #[command(flatten)]
        opts: Opts,
        /// Trajectory file written by `simulate`
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Estimate the trace chain on the periodic ground states
    Kernel(Opts),
    /// Excursion statistics away from a periodic ground state
    Excursion(Opts),
    /// Exit ends of the walk along a minimal path segment
    Segment(Opts),
    /// Run the built-in consistency checks
    Verify {
        #[command(flatten)]
        opts: Opts,
        #[arg(long, hide = true)]
        mutate: Option<String>,
    },
}

/// Options shared by every command. Values given here override the config file.
#[derive(Args, Clone, Default)]
struct Opts {
    /// Config file with `key = value` lines
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated inverse temperatures
    #[arg(long)]
    beta: Option<String>,
    /// Lattice side, or `critical`
    #[arg(long)]
    size: Option<String>,
    /// plus, per or fixed:<file>
    #[arg(long)]
    bc: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    replicas: Option<String>,
    /// Output file (stdout when absent)
    #[arg(long)]
    out: Option<String>,
    /// Event budget per simulated chain
    #[arg(long = "budget-events")]
    budget_events: Option<String>,
    #[arg(long = "split-threshold")]
    split_threshold: Option<String>,
    /// exhaustive or mc
    #[arg(long)]
    mode: Option<String>,
    /// Monte Carlo sample count
    #[arg(long)]
    samples: Option<String>,
    /// Defect level of the spectral profile
    #[arg(long)]
    k: Option<String>,
    /// quick or full
    #[arg(long)]
    level: Option<String>,
    /// events=N, time=T or hit-ground
    #[arg(long)]
    stop: Option<String>,
    /// Total-variation threshold of the mixing time
    #[arg(long)]
    eps: Option<String>,
    /// Trace-chain transitions
    #[arg(long)]
    steps: Option<String>,
    /// Worker threads
    #[arg(long)]
    threads: Option<String>,
}

impl Opts {
    fn overrides(&self) -> BTreeMap<String, String> {
        let pairs = [
            ("beta", &self.beta),
            ("size", &self.size),
            ("bc", &self.bc),
            ("seed", &self.seed),
            ("replicas", &self.replicas),
            ("out", &self.out),
            ("budget-events", &self.budget_events),
            ("split-threshold", &self.split_threshold),
            ("mode", &self.mode),
            ("samples", &self.samples),
            ("k", &self.k),
            ("level", &self.level),
            ("stop", &self.stop),
            ("eps", &self.eps),
            ("steps", &self.steps),
            ("threads", &self.threads),
        ];
        pairs.into_iter().filter_map(|(k, v)| v.clone().map(|v| (k.to_string(), v))).collect()
    }

    /// Resolved config, plus whether `beta` was given explicitly.
    fn resolve(&self) -> Result<(ExperimentConfig, bool)> {
        let mut map = match &self.config {
            Some(p) => {
                parse_config_text(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?
            }
            None => BTreeMap::new(),
        };
        map.extend(self.overrides());
        let explicit_beta = map.contains_key("beta");
        let cfg = ExperimentConfig::from_map(&map)?;
        if let Some(n) = cfg.threads {
            rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring threads")?;
        }
        Ok((cfg, explicit_beta))
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Exact(o) => {
            let (cfg, _) = o.resolve()?;
            let rows = cfg
                .beta
                .iter()
                .map(|&b| cmd_exact(b, cfg.size.resolve(b), &cfg.bc, cfg.eps))
                .collect::<plaquette::Result<Vec<_>>>()?;
            emit(cfg.out.as_deref(), &exact_csv(&rows))?;
        }
        Command::Flow(o) => {
            let (cfg, _) = o.resolve()?;
            if cfg.bc != plaquette::experiments::BcSpec::Plus {
                bail!("flow costs are defined for the plus boundary only");
            }
            let mut text = String::new();
            for &b in &cfg.beta {
                let row =
                    cmd_flow(b, cfg.size.resolve(b), cfg.k, cfg.mode, cfg.samples, cfg.seed, cfg.split_threshold)?;
                text.push_str(&row.to_csv());
            }
            emit(cfg.out.as_deref(), &text)?;
        }
        Command::Arrhenius(o) => {
            let (cfg, explicit_beta) = o.resolve()?;
            let betas = if explicit_beta { cfg.beta.clone() } else { default_arrhenius_grid() };
            let report = cmd_arrhenius(&cfg.bc, &betas, cfg.replicas, cfg.seed, cfg.budget_events)?;
            emit(cfg.out.as_deref(), &report.to_csv())?;
        }
        Command::Simulate(o) => {
            let (cfg, _) = o.resolve()?;
            let beta = cfg.beta[0];
            let lat = cfg.bc.lattice(cfg.size.resolve(beta))?;
            let t = cmd_simulate(&lat, beta, cfg.stop, cfg.seed, cfg.budget_events)?;
            emit(cfg.out.as_deref(), &t.to_text())?;
        }
        Command::Replay { opts, input } => {
            let (cfg, _) = opts.resolve()?;
            let lat = cfg.bc.lattice(cfg.size.resolve(cfg.beta[0]))?;
            let text = std::fs::read_to_string(&input).with_context(|| format!("reading {}", input.display()))?;
            let t = Trajectory::from_text(&lat, &text)?;
            emit(cfg.out.as_deref(), &t.final_state()?.to_text())?;
        }
        Command::Kernel(o) => {
            let (cfg, _) = o.resolve()?;
            let mut text = String::new();
            for &b in &cfg.beta {
                let k = estimate_trace_kernel(
                    b,
                    cfg.size.resolve(b),
                    cfg.steps,
                    cfg.replicas,
                    cfg.seed,
                    cfg.budget_events,
                )?;
                let m = k.mass();
                text.push_str(&format!(
                    "# beta={} L={} transitions={} hamming_one={:.6} antipode={:.6} other={:.6} sparse_rows={}\n",
                    b,
                    k.side,
                    k.total(),
                    m.hamming_one,
                    m.antipode,
                    m.other,
                    k.flagged.len()
                ));
                text.push_str(&k.to_csv());
            }
            emit(cfg.out.as_deref(), &text)?;
        }
        Command::Excursion(o) => {
            let (cfg, _) = o.resolve()?;
            let mut text = format!("{SCHEMA}\n{}\n", ExcursionStats::CSV_HEADER);
            for &b in &cfg.beta {
                let s = excursion_statistics(b, cfg.size.resolve(b), cfg.replicas, cfg.seed, cfg.budget_events)?;
                text.push_str(&s.csv_row());
                text.push('\n');
            }
            emit(cfg.out.as_deref(), &text)?;
        }
        Command::Segment(o) => {
            let (cfg, _) = o.resolve()?;
            let mut text = format!("{SCHEMA}\nbeta,L,near,far,escaped,exhausted,far_fraction,gambler_ruin\n");
            for &b in &cfg.beta {
                let side = cfg.size.resolve(b);
                let e = segment_exits(b, side, cfg.replicas, cfg.seed, cfg.budget_events)?;
                let ended = (e.near + e.far).max(1) as f64;
                text.push_str(&format!(
                    "{},{},{},{},{},{},{:.6},{:.6}\n",
                    b,
                    side,
                    e.near,
                    e.far,
                    e.escaped,
                    e.exhausted,
                    e.far as f64 / ended,
                    gambler_ruin_far(2, side)
                ));
            }
            emit(cfg.out.as_deref(), &text)?;
        }
        Command::Verify { opts, mutate } => {
            let (cfg, _) = opts.resolve()?;
            let mutation = mutate.map(|m| m.parse::<Mutation>()).transpose()?;
            let report = cmd_verify(cfg.level, mutation, cfg.seed);
            emit(cfg.out.as_deref(), &format!("{report}\n"))?;
            if !report.passed() {
                for c in report.failures() {
                    eprintln!("check failed: {} ({})", c.name, c.detail);
                }
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
