use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use pellet_mpc::control::ControllerKind;
use pellet_mpc::harness::{emit_report, rescan_trace_violations, run_benchmark, run_pipeline, BenchmarkSpec, MasterConfig, Summary};

#[derive(Parser)]
#[command(name = "pellet-mpc", version, about = "Pellet-fueled density control: identification, scenarios and MPC benchmark")]
struct Cli {
    /// Master configuration (JSON with a schema_version). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Identification seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Record zero solve times so reruns are byte-identical.
    #[arg(long, global = true)]
    deterministic: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Mi,
    MsMi,
    MsPth,
}

impl From<Kind> for ControllerKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Mi => ControllerKind::Mi,
            Kind::MsMi => ControllerKind::MsMi,
            Kind::MsPth => ControllerKind::MsPth,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate identification data and fit the reduced model.
    Sysid,
    /// Extract the disturbance cloud and select PCA scenarios.
    Scenarios,
    /// Run the closed-loop benchmark and write traces and plot data.
    Run {
        /// Only run this controller.
        #[arg(long, value_enum)]
        controller: Option<Kind>,
        /// Draw hull-exterior perturbations with the pinned stress amplitude.
        #[arg(long)]
        stress: bool,
    },
    /// Aggregate a finished run and re-check violations from the raw traces.
    Report,
    /// Print the default configuration.
    Config,
}

fn load_config(cli: &Cli) -> Result<MasterConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            MasterConfig::from_json(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => MasterConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn report(out: &Path) -> Result<()> {
    let summary = Summary::read(&out.join("summary.json")).with_context(|| format!("no summary.json in {}", out.display()))?;
    println!("{:<8} {:>5} {:>10} {:>10} {:>10} {:>12} {:>12} {:>8}", "kind", "runs", "rrmse %", "violation", "runs viol", "solve mean", "solve max", "pellets");
    for c in &summary.controllers {
        println!(
            "{:<8} {:>5} {:>10.3} {:>10} {:>10} {:>9.3} ms {:>9.3} ms {:>8}",
            c.controller.label(),
            c.runs,
            c.mean_rrmse,
            c.violations,
            c.runs_with_violations,
            c.solve_time_mean_ms,
            c.solve_time_max_ms,
            c.pellets
        );
    }
    let Some(n_lim) = summary.n_lim else { return Ok(()) };
    let mut mismatched = 0;
    for run in &summary.runs {
        let rescanned = rescan_trace_violations(&out.join(&run.trace_file), n_lim)?;
        if rescanned != run.metrics.violation_times {
            mismatched += 1;
            eprintln!("{}: trace shows {} violations, summary {}", run.trace_file, rescanned.len(), run.metrics.violation_count);
        }
    }
    if mismatched > 0 {
        bail!("{mismatched} traces disagree with the summary");
    }
    println!("violation counts re-checked against {} traces", summary.runs.len());
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let out = cli.out.clone();
    match cli.command {
        Command::Config => {
            println!("{}", MasterConfig::default().to_json()?);
        }
        Command::Sysid => {
            let cfg = load_config(&cli)?;
            let p = run_pipeline(&cfg, cfg.seed)?;
            p.write_artifacts(&out)?;
            println!(
                "{} samples, {} pellet events; model order {}, spectral radius {:.6}, held-out one-step rmse {:.3e}",
                p.log.len(),
                p.log.pellet_count(),
                p.model.n_x(),
                p.model.spectral_radius(),
                p.validation.one_step_rmse
            );
        }
        Command::Scenarios => {
            let cfg = load_config(&cli)?;
            let p = run_pipeline(&cfg, cfg.seed)?;
            p.write_artifacts(&out)?;
            let fractions: Vec<String> =
                p.cloud.pca.explained_variance_fractions.iter().map(|f| format!("{f:.4}")).collect();
            println!("explained variance: [{}], first two {:.4}", fractions.join(", "), p.explained_variance_two());
            println!("{} scenarios from {} cloud rows: {:?}", p.scenarios.len(), p.cloud.len(), p.scenarios.provenance);
        }
        Command::Run { controller, stress } => {
            let mut cfg = load_config(&cli)?;
            if let Some(k) = controller {
                cfg.benchmark.controllers = vec![k.into()];
            }
            if stress {
                cfg.benchmark.draw = BenchmarkSpec::stress().draw;
            }
            let p = run_pipeline(&cfg, cfg.seed)?;
            p.write_artifacts(&out.join("artifacts"))?;
            let result = run_benchmark(&cfg, &p, cli.deterministic)?;
            let written = emit_report(&out, &result)?;
            println!("{} runs, {} files written to {}", result.runs.len(), written.len(), out.display());
            report(&out)?;
        }
        Command::Report => report(&out)?,
    }
    Ok(())
}
