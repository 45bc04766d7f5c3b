use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use log::{info, warn};

use fedbound::config::ExperimentConfig;
use fedbound::{experiment, report, selftest};

#[derive(Parser)]
#[command(
    name = "fedbound",
    version,
    about = "Federated learning simulator for loss-landscape constants and convergence bounds"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every scenario and seed of a config and write CSV reports.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads; overrides `parallel` from the config.
        #[arg(long)]
        parallel: Option<usize>,
    },
    /// Estimate mu, L and G for every node without training.
    Probe {
        #[arg(long)]
        config: PathBuf,
    },
    /// Recompute correlations and CDFs of an existing run directory.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
    /// Quadratic-oracle, finite-difference and bound-arithmetic checks.
    Selftest,
}

fn load_config(path: &PathBuf) -> Result<ExperimentConfig> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    ExperimentConfig::parse(&text).with_context(|| format!("in config {}", path.display()))
}

fn init_threads(n: Option<usize>) -> Result<()> {
    if let Some(n) = n {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring thread pool")?;
    }
    Ok(())
}

fn run(config: PathBuf, out: Option<PathBuf>, parallel: Option<usize>) -> Result<()> {
    let cfg = load_config(&config)?;
    init_threads(parallel.or(cfg.parallel))?;
    let out = out.unwrap_or_else(|| cfg.output_dir.clone());
    info!(
        "{} scenario(s) x {} seed(s)",
        cfg.scenarios.len(),
        cfg.repeat_seeds.len()
    );
    let results = experiment::run_experiment(&cfg)?;
    for r in &results {
        for w in &r.run.warnings {
            warn!("{} seed {}: {w}", r.scenario, r.seed);
        }
    }
    report::write_experiment(&out, &cfg, &results)?;
    println!("{}", report::SUMMARY_HEADER);
    let summary = std::fs::read_to_string(out.join("summary.csv"))?;
    for line in summary.lines().skip(1) {
        println!("{line}");
    }
    info!("wrote {}", out.display());
    Ok(())
}

fn probe(config: PathBuf) -> Result<()> {
    let cfg = load_config(&config)?;
    init_threads(cfg.parallel)?;
    println!("scenario,seed,node_id,mu,L,G,n_probes");
    for p in experiment::probe_experiment(&cfg)? {
        let rows = p
            .node_constants
            .iter()
            .map(|(i, c)| (i.to_string(), c))
            .chain([("global".to_string(), &p.global)]);
        for (id, c) in rows {
            println!(
                "{},{},{id},{},{},{},{}",
                p.scenario,
                p.seed,
                report::fmt_num(c.mu),
                report::fmt_num(c.l_smooth),
                report::fmt_num(c.g_max),
                c.n_probes
            );
        }
    }
    Ok(())
}

fn report_cmd(dir: PathBuf) -> Result<()> {
    let a = report::reanalyze(&dir).with_context(|| format!("analyzing {}", dir.display()))?;
    println!("quantity,pearson,spearman,n");
    match &a.correlations {
        Some(c) => {
            for r in c {
                println!(
                    "{},{},{},{}",
                    r.quantity,
                    report::fmt_num(r.pearson),
                    report::fmt_num(r.spearman),
                    r.n
                );
            }
        }
        None => println!(
            "# correlations undefined for {} node(s)",
            a.usefulness.len()
        ),
    }
    let probe_median = a.cdf_probe.quantile(0.5);
    let training_median = a.cdf_training.quantile(0.5);
    println!("# median probe g {}", report::fmt_num(probe_median));
    println!("# median training g {}", report::fmt_num(training_median));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config,
            out,
            parallel,
        } => run(config, out, parallel),
        Command::Probe { config } => probe(config),
        Command::Report { run } => report_cmd(run),
        Command::Selftest => match selftest::run_all() {
            Ok(checks) => {
                let mut failed = 0;
                for c in &checks {
                    println!(
                        "{} {}: {}",
                        if c.passed { "PASS" } else { "FAIL" },
                        c.name,
                        c.detail
                    );
                    failed += usize::from(!c.passed);
                }
                if failed > 0 {
                    Err(anyhow::anyhow!("{failed} selftest check(s) failed"))
                } else {
                    Ok(())
                }
            }
            Err(e) => Err(e.into()),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
