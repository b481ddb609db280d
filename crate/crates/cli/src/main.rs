use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cohort_audit::config::RunConfig;
use cohort_audit::report::import_json;
use cohort_audit::synth::{load_truth, score_detection, simulate, SynthSpec};
use cohort_audit::{pipeline, Error, ErrorClass};

#[derive(Parser)]
#[command(name = "cohort-audit", version, about = "Flag and explain samples that contradict their group label")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline from a configuration file.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Worker threads; defaults to the machine's parallelism.
        #[arg(long, env = "COHORT_AUDIT_THREADS")]
        threads: Option<usize>,
        /// Override the seed from the configuration.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write a synthetic cohort with planted mislabeled samples.
    Simulate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a run's flagged samples with the planted ground truth.
    Score {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Numeric => 4,
    }
}

fn run(config: &Path, threads: Option<usize>, seed: Option<u64>) -> Result<(), Error> {
    let mut config = RunConfig::load(config)?;
    if let Some(s) = seed {
        config.seed = s;
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        if n == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let artifact = pool.install(|| pipeline::run(&config))?;
    for w in &artifact.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "balanced accuracy {:.3}; {} anomalous samples; outputs in {}",
        artifact.cv.balanced_accuracy,
        artifact.anomalies.len(),
        config.output_dir.display()
    );
    Ok(())
}

fn simulate_cmd(spec: &Path, out: &Path) -> Result<(), Error> {
    let text = std::fs::read_to_string(spec)
        .map_err(|e| Error::Config(format!("cannot read spec {}: {e}", spec.display())))?;
    let spec = SynthSpec::from_toml(&text)?;
    let cohort = simulate(&spec, out)?;
    println!(
        "{} samples, {} features, {} planted; wrote {}",
        cohort.sample_ids.len(),
        cohort.feature_ids.len(),
        cohort.plants.len(),
        out.display()
    );
    Ok(())
}

fn score(run: &Path, truth: &Path) -> Result<(), Error> {
    let path = run.join("run.json");
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let artifact = import_json(&text)?;
    let truth = load_truth(truth)?;
    let s = score_detection(
        artifact.anomalies.iter().map(|a| a.sample_id.as_str()),
        truth.iter().map(|p| p.sample_id.as_str()),
    );
    println!("flagged\t{}", s.n_flagged);
    println!("planted\t{}", s.n_truth);
    println!("true_positives\t{}", s.true_positives);
    println!("precision\t{}", s.precision_text());
    println!("recall\t{:.3}", s.recall);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, threads, seed } => run(config, *threads, *seed),
        Command::Simulate { spec, out } => simulate_cmd(spec, out),
        Command::Score { run, truth } => score(run, truth),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cohort-audit: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
