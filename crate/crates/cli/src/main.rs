use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use rsng::io::Cache;
use rsng_cli::bench::{run_benchmark, MIN_SAMPLES};
use rsng_cli::config::{self, ExperimentConfig};
use rsng_cli::experiment::{run_experiment, run_fit, run_reference, run_sweep, Session};
use rsng_cli::figures::emit_figures;

#[derive(Parser)]
#[command(name = "rsng", version, about = "Randomized sparse neural Galerkin experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Run only this seed instead of the config's seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to outputs.dir from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `key.path=value`, applied in order after loading the config.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the initial condition and write theta0.txt, fit.csv, spectrum.csv.
    Fit(Common),
    /// Fit, integrate every seed and compare against the reference.
    Run(Common),
    /// Run the cross product of the config's sweep axes.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Allow more cells than sweep.max_cells.
        #[arg(long)]
        max_cells: Option<usize>,
    },
    /// Time the sketched solve for several sketch sizes.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Comma-separated sketch sizes.
        #[arg(long, value_delimiter = ',', default_values_t = [100usize, 200, 400, 800])]
        sizes: Vec<usize>,
        /// Timed steps per size after the warmup steps.
        #[arg(long, default_value_t = MIN_SAMPLES)]
        samples: usize,
    },
    /// Solve the reference problem and write reference.bin.
    Reference(Common),
    /// Render SVG plots from the CSVs in a directory.
    Figures {
        #[arg(long)]
        dir: PathBuf,
    },
}

fn load(c: &Common) -> Result<(ExperimentConfig, toml::Table, PathBuf)> {
    let (mut cfg, mut table) = config::load(&c.config, &c.overrides)?;
    if let Some(seed) = c.seed {
        cfg.seeds = vec![seed];
        config::set_path(&mut table, "seeds", toml::Value::Array(vec![toml::Value::Integer(seed as i64)]))?;
    }
    let out = c.out.clone().unwrap_or_else(|| cfg.outputs.dir.clone());
    Ok((cfg, table, out))
}

fn session() -> Session {
    let cache = Cache::from_env();
    if let Some(d) = cache.dir() {
        eprintln!("cache: {}", d.display());
    }
    Session::new(cache)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit(c) => {
            let (cfg, _, out) = load(&c)?;
            let fit = run_fit(&mut session(), &cfg, &out)?;
            println!("fit relative L2 error {:.3e} (converged: {})", fit.rel_error, fit.converged);
        }
        Command::Run(c) => {
            let (cfg, _, out) = load(&c)?;
            let outcomes = run_experiment(&mut session(), &cfg, &out)?;
            for o in &outcomes {
                println!("seed {} {} spacetime error {:.3e}", o.seed, o.status(), o.spacetime_error());
            }
            println!("wrote {}", out.display());
        }
        Command::Sweep { common, max_cells } => {
            let (_, table, out) = load(&common)?;
            let cells = run_sweep(&mut session(), &table, &out, max_cells)?;
            println!("{} cells written to {}", cells.len(), out.display());
        }
        Command::Bench { common, sizes, samples } => {
            let (cfg, _, out) = load(&common)?;
            let seed = cfg.seeds[0];
            let table = run_benchmark(&cfg, &sizes, samples, seed)?;
            std::fs::create_dir_all(&out)?;
            table.to_table(&cfg.hash(), seed).write(&out.join("bench.csv"))?;
            for r in &table.rows {
                println!("s = {:5}  solve {:.3e} s  assemble {:.3e} s", r.s, r.solve, r.assemble);
            }
            println!("log-log exponent of solve time in s: {:.2}", table.exponent);
            if cfg.outputs.plots {
                emit_figures(&out)?;
            }
        }
        Command::Reference(c) => {
            let (cfg, _, out) = load(&c)?;
            let r = run_reference(&mut session(), &cfg, &out)?;
            println!("reference on {:?} with dt {:.3e}, {} snapshots", r.grid_shape, r.dt, r.times.len());
        }
        Command::Figures { dir } => {
            let files = emit_figures(&dir).with_context(|| format!("figures for {}", dir.display()))?;
            for f in files {
                println!("{}", f.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
