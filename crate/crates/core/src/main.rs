use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use nurobust::bounds::{
    generalization_gap_experiment, random_instance, weighted_rademacher_linear, CoverageConfig, LinearClassSpec,
};
use nurobust::data::{read_results, write_csv_dataset, write_results_fresh};
use nurobust::error::{Error, Result};
use nurobust::experiment::report::{format_table, summarize, write_summary_csv};
use nurobust::experiment::{run_experiment_with, ExperimentConfig, Method};
use nurobust::synthetic::{sample_dataset, NoiseKind, SyntheticConfig};
use nurobust::train::stream_rng;

#[derive(Parser)]
#[command(name = "nurobust", version, about = "Nuisance-robust CATE estimation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Noise {
    An,
    Mn,
}

#[derive(Clone, Copy, ValueEnum)]
enum BoundsKind {
    /// coverage of the weighted generalization bound
    Coverage,
    /// Rademacher estimate vs closed-form bound on random linear instances
    Linear,
}

#[derive(clap::Args)]
struct RunArgs {
    /// experiment config (JSON); defaults apply to missing fields
    #[arg(long)]
    config: Option<PathBuf>,
    /// run only this seed instead of the configured list
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset CSV with oracle columns.
    Generate {
        #[arg(long, value_enum, default_value = "an")]
        noise: Noise,
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// drop tau, mu, y0, y1
        #[arg(long)]
        observed_only: bool,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// file name inside the output directory
        #[arg(long, default_value = "synthetic.csv")]
        name: String,
    },
    /// Train one method (overriding the configured list) and checkpoint the selected models.
    Train {
        #[arg(long, value_enum)]
        method: Option<MethodArg>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Grid search for every configured method; writes results.csv and grid.csv.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Theory checks for the weighted bounds.
    Bounds {
        #[arg(long, value_enum, default_value = "coverage")]
        kind: BoundsKind,
        /// coverage config (JSON)
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Aggregate a results CSV into mean and standard error per method.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Tnet,
    Drnet,
    DrnetOracle,
    Nudrnet,
    Snet,
    Nusnet,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Tnet => Method::Tnet,
            MethodArg::Drnet => Method::Drnet,
            MethodArg::DrnetOracle => Method::DrnetOracle,
            MethodArg::Nudrnet => Method::Nudrnet,
            MethodArg::Snet => Method::Snet,
            MethodArg::Nusnet => Method::Nusnet,
        }
    }
}

fn load_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::from_json_file(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seeds = vec![s];
    }
    Ok(cfg)
}

fn write_json<S: serde::Serialize>(value: &S, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate {
            noise,
            n,
            seed,
            observed_only,
            out_dir,
            name,
        } => {
            let noise = match noise {
                Noise::An => NoiseKind::Additive,
                Noise::Mn => NoiseKind::Multiplicative,
            };
            let cfg = SyntheticConfig::default().with_noise(noise).with_seed(seed);
            let (ds, _) = sample_dataset::<f64>(&cfg, n)?;
            let ds = if observed_only { ds.without_oracle() } else { ds };
            std::fs::create_dir_all(&out_dir)?;
            let path = out_dir.join(name);
            write_csv_dataset(&ds, &path)?;
            println!("wrote {} rows to {}", ds.n(), path.display());
        }
        Command::Train { method, run } => {
            let mut cfg = load_config(&run)?;
            if let Some(m) = method {
                cfg.methods = vec![m.into()];
            }
            std::fs::create_dir_all(&run.out_dir)?;
            let out = run_experiment_with(&cfg, run.jobs, Some(&run.out_dir.join("models")))?;
            write_results_fresh(&out.selected, run.out_dir.join("results.csv"))?;
            write_json(&cfg, &run.out_dir.join("config.json"))?;
            print!("{}", format_table(&summarize(&out.selected)));
        }
        Command::Sweep { run } => {
            let cfg = load_config(&run)?;
            std::fs::create_dir_all(&run.out_dir)?;
            let out = run_experiment_with(&cfg, run.jobs, None)?;
            write_results_fresh(&out.selected, run.out_dir.join("results.csv"))?;
            write_results_fresh(&out.grid, run.out_dir.join("grid.csv"))?;
            write_json(&cfg, &run.out_dir.join("config.json"))?;
            print!("{}", format_table(&summarize(&out.selected)));
        }
        Command::Bounds {
            kind,
            config,
            seed,
            out_dir,
            jobs,
        } => {
            let mut cfg = match config {
                Some(p) => serde_json::from_str::<CoverageConfig>(&std::fs::read_to_string(p)?)?,
                None => CoverageConfig::default(),
            };
            cfg.seed = seed;
            std::fs::create_dir_all(&out_dir)?;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs.max(1))
                .build()
                .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
            match kind {
                BoundsKind::Coverage => {
                    let rep = pool.install(|| generalization_gap_experiment(&cfg))?;
                    let mut w = csv::Writer::from_path(out_dir.join("coverage_trials.csv"))?;
                    for r in &rep.results {
                        w.serialize(r)?;
                    }
                    w.flush()?;
                    let mut summary = serde_json::to_value(&rep)?;
                    if let Some(obj) = summary.as_object_mut() {
                        obj.remove("results");
                    }
                    write_json(&summary, &out_dir.join("coverage_summary.json"))?;
                    println!(
                        "violations {}/{} ({:.3}), mean gap {:.4}, mean bound {:.4}",
                        rep.violations, rep.trials, rep.violation_fraction, rep.mean_gap, rep.mean_bound
                    );
                }
                BoundsKind::Linear => {
                    let spec = LinearClassSpec {
                        b: cfg.b,
                        x_bound: cfg.x_bound,
                        d: 2,
                    };
                    let mut rng = stream_rng(seed, 0);
                    let mut w = csv::Writer::from_path(out_dir.join("linear_bound.csv"))?;
                    w.write_record(["instance", "n", "estimate", "se", "bound", "exhaustive"])?;
                    for k in 0..cfg.trials {
                        let n = [4, 8, 12, 50, 200][k % 5];
                        let (x, wts) = random_instance(&mut rng, n, spec.d, spec.x_bound, 1.0 / cfg.mu_min);
                        let r = pool.install(|| {
                            weighted_rademacher_linear(&spec, &x, &wts, cfg.sigma_draws, seed + k as u64)
                        })?;
                        w.write_record([
                            k.to_string(),
                            n.to_string(),
                            r.estimate.to_string(),
                            r.se.to_string(),
                            r.bound.to_string(),
                            r.exhaustive.to_string(),
                        ])?;
                    }
                    w.flush()?;
                    println!(
                        "wrote {} instances to {}",
                        cfg.trials,
                        out_dir.join("linear_bound.csv").display()
                    );
                }
            }
        }
        Command::Report { input, out_dir } => {
            let rows = read_results(&input)?;
            let summary = summarize(&rows);
            std::fs::create_dir_all(&out_dir)?;
            write_summary_csv(&summary, out_dir.join("summary.csv"))?;
            let table = format_table(&summary);
            std::fs::write(out_dir.join("summary.txt"), &table)?;
            print!("{table}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
