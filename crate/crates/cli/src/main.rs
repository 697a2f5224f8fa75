use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use seqstein::harness::{
    run_decompose, run_qds, run_quenched, run_rates, run_stein_check, simulate, ExperimentConfig, RunContext,
    SteinCheckSettings,
};
use seqstein::Error;

#[derive(Parser)]
#[command(name = "seqstein", version, about = "Birkhoff-sum CLT experiments for time-dependent interval maps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    global: Global,
}

#[derive(Args)]
struct Global {
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the config value, then to all cores.
    #[arg(long, global = true, env = "SEQSTEIN_THREADS")]
    threads: Option<usize>,
    /// Ignore the on-disk cache and record the run as reproducible.
    #[arg(long, global = true)]
    deterministic: bool,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the Birkhoff-sum ensemble and report its moments.
    Simulate(ConfigArg),
    /// Distance to normal over the N grid and the fitted exponent.
    Rates(ConfigArg),
    /// Seven-term decomposition ledger.
    Decompose(ConfigArg),
    /// Stein-equation residual and derivative-bound sweep.
    SteinCheck(SteinArgs),
    /// Per-replica rates for random parameter sequences.
    Quenched(ConfigArg),
    /// Covariance growth and rates for a quasistatic triangular array.
    Qds(ConfigArg),
}

#[derive(Args)]
struct ConfigArg {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Args)]
struct SteinArgs {
    /// Experiment config with a `stein_check` section.
    #[arg(long, conflicts_with = "dim")]
    config: Option<PathBuf>,
    /// Dimension for the built-in family with Σ = I.
    #[arg(long)]
    dim: Option<usize>,
}

/// A run's outcome: `Ok(true)` passes, `Ok(false)` is a numeric failure.
type Outcome = seqstein::Result<bool>;

fn load(path: &Path, g: &Global) -> seqstein::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if g.threads.is_some() {
        cfg.threads = g.threads;
    }
    Ok(cfg)
}

fn init_threads(n: Option<usize>) {
    if let Some(n) = n {
        // A second initialisation only happens in tests; the first pool wins.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn context(g: &Global, command: &str, hash: &str) -> seqstein::Result<RunContext> {
    let mut ctx = RunContext::new(&g.out, command, hash, g.deterministic)?;
    ctx.use_cache = !g.deterministic;
    Ok(ctx)
}

fn finish(ctx: RunContext) -> seqstein::Result<()> {
    let out = ctx.out_dir().display().to_string();
    let manifest = ctx.finish()?;
    println!("wrote {} files and manifest.json to {out}", manifest.files.len());
    Ok(())
}

fn run(cli: &Cli) -> Outcome {
    let g = &cli.global;
    let (name, path) = match &cli.command {
        Command::SteinCheck(args) => return stein_check(args, g),
        Command::Simulate(a) => ("simulate", &a.config),
        Command::Rates(a) => ("rates", &a.config),
        Command::Decompose(a) => ("decompose", &a.config),
        Command::Quenched(a) => ("quenched", &a.config),
        Command::Qds(a) => ("qds", &a.config),
    };
    let cfg = load(path, g)?;
    init_threads(cfg.threads);
    let mut ctx = context(g, name, &cfg.hash())?;
    let pass = match &cli.command {
        Command::Simulate(_) => {
            for p in simulate(&cfg, &mut ctx)? {
                println!("N={} coord={} mean={:.6e} var={:.6e}", p.n, p.coordinate, p.mean, p.variance);
            }
            true
        }
        Command::Rates(_) => {
            let r = run_rates(&cfg, &mut ctx)?;
            for p in &r.points {
                println!("N={} d={:.6e} ± {:.1e} λmin={:.4e}", p.n, p.value, p.stderr, p.lambda_min);
            }
            println!("exponent {:.4} ± {:.4} (r² {:.3}), floor {:.3e}", r.fit.exponent, r.fit.halfwidth, r.fit.r2, r.floor);
            true
        }
        Command::Decompose(_) => {
            let r = run_decompose(&cfg, &mut ctx)?;
            print!("{}", r.ledger.to_csv());
            r.pass
        }
        Command::Quenched(_) => {
            let r = run_quenched(&cfg, &mut ctx)?;
            for rep in &r.replicas {
                println!("replica {} exponent {:.4} ± {:.4}", rep.replica, rep.fit.exponent, rep.fit.halfwidth);
            }
            let (lo, med, hi) = r.exponent_summary();
            println!("exponents min {lo:.4} median {med:.4} max {hi:.4}");
            true
        }
        Command::Qds(_) => {
            let r = run_qds(&cfg, &mut ctx)?;
            for p in &r.points {
                println!("n={} λmin(t0)={:.4e} d={:.4e}", p.n, p.lambda_min, p.distance);
            }
            println!("exponent {:.4} ± {:.4}", r.fit.exponent, r.fit.halfwidth);
            true
        }
        Command::SteinCheck(_) => unreachable!(),
    };
    finish(ctx)?;
    Ok(pass)
}

fn stein_check(args: &SteinArgs, g: &Global) -> Outcome {
    let (settings, hash) = match (&args.config, args.dim) {
        (Some(path), _) => {
            let cfg = load(path, g)?;
            init_threads(cfg.threads);
            let s = cfg
                .stein_check
                .clone()
                .ok_or_else(|| Error::Config("config has no `stein_check` section".into()))?;
            (s, cfg.hash())
        }
        (None, Some(d)) => {
            init_threads(g.threads);
            (SteinCheckSettings::new(d), format!("builtin-d{d}"))
        }
        (None, None) => return Err(Error::Config("stein-check needs --config or --dim".into())),
    };
    let mut ctx = context(g, "stein-check", &hash)?;
    let rows = run_stein_check(&settings, &mut ctx)?;
    for r in &rows {
        println!(
            "{:<20} residual {:.3e} margin {:+.3e} {}",
            r.h,
            r.max_residual,
            r.bound_margin,
            if r.pass { "pass" } else { "FAIL" }
        );
    }
    finish(ctx)?;
    Ok(rows.iter().all(|r| r.pass))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::InvalidParameter(_) | Error::Io(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
