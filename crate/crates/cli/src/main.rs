use std::path::{Path, PathBuf};
use std::process::ExitCode;

use adatrunc::adapt::optimize_base_interval;
use adatrunc::harness::{
    self, file_stem, plot, read_releases, run_adaptive_experiment, run_batch_experiment, run_nonadaptive_experiment,
    run_replications, ExperimentConfig, Method,
};
use adatrunc::model::Normal;
use adatrunc::rng::{Purpose, SeedTree};
use adatrunc::Error;
use clap::{Args, Parser, Subcommand};

/// Differentially private online estimation with adaptive truncation.
#[derive(Parser)]
#[command(name = "adatrunc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Grid search for the base truncation interval.
    OptimizeBase {
        #[command(flatten)]
        common: Common,
        /// Only consider intervals of the form [-h, h].
        #[arg(long)]
        symmetric: bool,
    },
    /// Adaptive SMC on simulated releases.
    RunAdaptive {
        #[command(flatten)]
        common: Common,
        #[arg(long, requires = "base_b", allow_hyphen_values = true)]
        base_a: Option<f64>,
        #[arg(long, requires = "base_a", allow_hyphen_values = true)]
        base_b: Option<f64>,
    },
    /// SMC with a constant interval (default: true mean -/+ 10 sd).
    RunNonadaptive {
        #[command(flatten)]
        common: Common,
        #[arg(long, requires = "fixed_r", allow_hyphen_values = true)]
        fixed_l: Option<f64>,
        #[arg(long, requires = "fixed_l", allow_hyphen_values = true)]
        fixed_r: Option<f64>,
    },
    /// Batch MCMC on a release file, or on simulated constant-interval releases.
    RunBatch {
        #[command(flatten)]
        common: Common,
        /// CSV with columns t,y,l,r,epsilon.
        #[arg(long)]
        records: Option<PathBuf>,
        /// Interval of simulated releases (default: true mean -/+ 10 sd).
        #[arg(long, requires = "fixed_r", allow_hyphen_values = true)]
        fixed_l: Option<f64>,
        #[arg(long, requires = "fixed_l", allow_hyphen_values = true)]
        fixed_r: Option<f64>,
        #[arg(long)]
        iterations: Option<usize>,
        #[arg(long)]
        burn_in: Option<usize>,
    },
    /// Repeat all three methods over several seeds and epsilons.
    Replicate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated list; defaults to the configured epsilon.
        #[arg(long, value_delimiter = ',')]
        epsilons: Vec<f64>,
        #[arg(long)]
        replications: Option<usize>,
    },
    /// Render SVG plots from run and replication CSVs.
    Plot {
        /// Directory holding the CSV files.
        #[arg(long, default_value = "out")]
        input: PathBuf,
        /// Output directory; defaults to the input directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epsilon: Option<f64>,
    /// Number of records.
    #[arg(long)]
    n: Option<usize>,
    /// Number of particles.
    #[arg(long = "particles", short = 'N')]
    particles: Option<usize>,
    /// Outer Monte Carlo samples of the information estimate.
    #[arg(long = "fim-outer", short = 'M')]
    fim_outer: Option<usize>,
    /// Importance draws per score estimate.
    #[arg(long = "fim-inner")]
    fim_inner: Option<usize>,
    #[arg(long)]
    grid_points: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    grid_lo: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    grid_hi: Option<f64>,
    /// Full-size constants: n = N = 1000, 50 x 50 grid on [-3, 3], M = 1000, Ng = 10000.
    #[arg(long)]
    full_scale: bool,
}

impl Common {
    fn resolve(&self) -> Result<ExperimentConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_json_file(path)?,
            None => ExperimentConfig::default(),
        };
        if self.full_scale {
            cfg = cfg.full_scale();
        }
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field.clone() { cfg.$field = v; })*
            };
        }
        set!(
            seed,
            epsilon,
            n,
            particles,
            fim_outer,
            fim_inner,
            grid_points,
            grid_lo,
            grid_hi
        );
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        Ok(cfg)
    }
}

fn validated(mut cfg: ExperimentConfig, edit: impl FnOnce(&mut ExperimentConfig)) -> Result<ExperimentConfig, Error> {
    edit(&mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::OptimizeBase { common, symmetric } => {
            let cfg = validated(common.resolve()?, |c| c.symmetric_search |= symmetric)?;
            let seeds = SeedTree::new(cfg.seed).child(Purpose::Grid, 0);
            let grid = optimize_base_interval(&Normal, cfg.privacy()?, &cfg.adapt_config(), &seeds)?;
            std::fs::create_dir_all(&cfg.out_dir)?;
            let path = cfg
                .out_dir
                .join(format!("base_grid_eps{}_seed{}.csv", cfg.epsilon, cfg.seed));
            grid.write_csv(&path)?;
            let best = grid.best();
            println!(
                "epsilon {}: a* = {}, b* = {} (score {:.6} +/- {:.6})",
                cfg.epsilon, best.a, best.b, best.score, best.stderr
            );
            println!("wrote {}", path.display());
        }
        Command::RunAdaptive { common, base_a, base_b } => {
            let cfg = validated(common.resolve()?, |c| {
                if base_a.is_some() {
                    c.base_a = base_a;
                    c.base_b = base_b;
                }
            })?;
            let artifacts = run_adaptive_experiment(&cfg)?;
            report_run(&artifacts.write(&cfg.out_dir)?.summary, &artifacts.summary);
        }
        Command::RunNonadaptive {
            common,
            fixed_l,
            fixed_r,
        } => {
            let cfg = validated(common.resolve()?, |c| {
                if fixed_l.is_some() {
                    c.fixed_l = fixed_l;
                    c.fixed_r = fixed_r;
                }
            })?;
            let artifacts = run_nonadaptive_experiment(&cfg)?;
            report_run(&artifacts.write(&cfg.out_dir)?.summary, &artifacts.summary);
        }
        Command::RunBatch {
            common,
            records,
            fixed_l,
            fixed_r,
            iterations,
            burn_in,
        } => {
            let cfg = validated(common.resolve()?, |c| {
                if fixed_l.is_some() {
                    c.fixed_l = fixed_l;
                    c.fixed_r = fixed_r;
                }
                c.batch_iterations = iterations.unwrap_or(c.batch_iterations);
                c.batch_burn_in = burn_in.unwrap_or(c.batch_burn_in);
            })?;
            let loaded = records.as_deref().map(read_releases).transpose()?;
            let (artifacts, chain) = run_batch_experiment(&cfg, loaded.as_deref())?;
            let files = artifacts.write(&cfg.out_dir)?;
            let chain_path = cfg
                .out_dir
                .join(format!("{}_chain.csv", file_stem(Method::Batch, cfg.epsilon, cfg.seed)));
            chain.write_csv(&chain_path)?;
            report_run(&files.summary, &artifacts.summary);
        }
        Command::Replicate {
            common,
            epsilons,
            replications,
        } => {
            let cfg = validated(common.resolve()?, |c| {
                c.replications = replications.unwrap_or(c.replications)
            })?;
            let epsilons = if epsilons.is_empty() {
                vec![cfg.epsilon]
            } else {
                epsilons
            };
            let table = run_replications(&cfg, &epsilons)?;
            let (runs, summary) = table.write(&cfg.out_dir, cfg.seed)?;
            for a in &table.aggregates {
                println!(
                    "{:<12} epsilon {:<5} median |m - m0| = {:.4} ({} ok, {} failed)",
                    a.method, a.epsilon, a.median_abs_error_m, a.runs, a.failures
                );
            }
            println!("wrote {} and {}", runs.display(), summary.display());
        }
        Command::Plot { input, out } => {
            let out = out.unwrap_or_else(|| input.clone());
            let report = plot::emit_plots(&input, &out)?;
            for notice in &report.notices {
                println!("notice: {notice}");
            }
            for file in &report.files {
                println!("wrote {}", file.display());
            }
        }
    }
    Ok(())
}

fn report_run(path: &Path, s: &harness::RunSummary) {
    println!(
        "{} epsilon {} seed {}: posterior mean m = {:.4} (sd {:.4}), c = {:.4}",
        s.method, s.epsilon, s.seed, s.mean_m, s.sd_m, s.mean_c
    );
    println!("wrote {}", path.display());
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) | Error::Schema { .. } => 2,
        Error::Numeric(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
