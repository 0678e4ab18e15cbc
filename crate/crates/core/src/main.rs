use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use jit_anon::binning::cluster_corpus;
use jit_anon::clusterstats::summarize_all;
use jit_anon::corpus::{load_corpus, write_corpus};
use jit_anon::paramgen::ParamPolicy;
use jit_anon::pipeline::{self, PipelineError, RunConfig, Stamped};
use jit_anon::privacy::{compute_ipr_with_outcomes, write_outcomes_csv};
use jit_anon::regen::anonymize_corpus;
use jit_anon::synth::{generate_corpus, separable_corpus, SynthConfig};
use jit_anon::utility::run_utility_experiment;

#[derive(Parser)]
#[command(name = "jit-anon", version, about = "Cluster-guided anonymization of JIT defect-prediction datasets")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; flags below override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Commit CSV to read.
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    /// Output directory (a file path for `synth`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed, recorded in every artifact (the generator seed for `synth`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    policy: Option<ParamPolicy>,
    /// Number of trees for utility evaluation.
    #[arg(long, global = true)]
    trees: Option<usize>,
    /// More log output; repeat for debug.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Command {
    /// Quantile-bin the QIDs and assign every commit to a cluster.
    Bin,
    /// Per-cluster quantile summaries of la, ld, churn and ratio.
    Stats,
    /// Anonymization parameters for every cluster.
    Params,
    /// Regenerate la/ld and write the anonymized CSV.
    Anonymize,
    /// IPR of an anonymized file against the input.
    Privacy {
        #[arg(long)]
        anonymized: PathBuf,
        /// Also write per-query breach flags.
        #[arg(long)]
        breaches: Option<PathBuf>,
    },
    /// F1 of the Random Forest protocol on the input.
    Utility,
    /// The full pipeline.
    Run {
        #[arg(long)]
        skip_utility: bool,
    },
    /// Write a synthetic corpus.
    Synth {
        #[arg(long, default_value_t = 2000)]
        rows: usize,
        #[arg(long, default_value = "cassandra")]
        project: String,
        /// Linearly separable sanity corpus instead.
        #[arg(long)]
        separable: bool,
    },
}

fn config(common: &Common) -> Result<RunConfig, PipelineError> {
    let mut c = match &common.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = &common.input {
        c.input = Some(v.clone());
    }
    if let Some(v) = &common.out {
        c.out = v.clone();
    }
    if let Some(v) = common.seed {
        c.seed = v;
    }
    if let Some(v) = common.policy {
        c.policy = v;
    }
    if let Some(v) = common.trees {
        c.utility.forest.n_trees = v;
    }
    Ok(c)
}

fn io_err(e: std::io::Error) -> PipelineError {
    PipelineError::Data(e.to_string())
}

fn write_json<T: serde::Serialize>(path: &Path, seed: u64, body: &T) -> Result<(), PipelineError> {
    let mut s = serde_json::to_string_pretty(&Stamped { master_seed: seed, body }).expect("serializes");
    s.push('\n');
    pipeline::write_atomic(path, s.as_bytes()).map_err(io_err)
}

fn data<E: std::fmt::Display>(e: E) -> PipelineError {
    PipelineError::Data(e.to_string())
}

fn execute(cli: Cli) -> Result<(), PipelineError> {
    let mut c = config(&cli.common)?;
    if let Command::Synth { rows, project, separable } = &cli.command {
        let corpus = if *separable {
            separable_corpus(*rows, c.seed)
        } else {
            generate_corpus(&SynthConfig { rows: *rows, seed: c.seed, project: project.clone(), ..SynthConfig::default() })
        };
        let mut buf = Vec::new();
        write_corpus(&corpus, &mut buf, c.delimiter_byte()?).map_err(data)?;
        return match &cli.common.out {
            Some(path) => pipeline::write_atomic(path, &buf).map_err(io_err),
            None => {
                use std::io::Write;
                std::io::stdout().write_all(&buf).map_err(io_err)
            }
        };
    }

    c.validate()?;
    let corpus = c.load_input()?;
    let out = c.out.clone();
    let seed = c.seed;
    match cli.command {
        Command::Bin => {
            let a = cluster_corpus(&corpus, c.n_bins).map_err(data)?;
            write_json(&out.join("clusters.json"), seed, &a)?;
        }
        Command::Stats => {
            let a = cluster_corpus(&corpus, c.n_bins).map_err(data)?;
            let stats = summarize_all(&corpus, &a).map_err(data)?;
            write_json(&out.join("cluster_stats.json"), seed, &serde_json::json!({ "clusters": stats.values().collect::<Vec<_>>() }))?;
        }
        Command::Params | Command::Anonymize => {
            let a = cluster_corpus(&corpus, c.n_bins).map_err(data)?;
            let stats = summarize_all(&corpus, &a).map_err(data)?;
            let params = pipeline::generate_params(&stats, c.policy, c.endpoint.as_ref())?;
            pipeline::write_params(&out.join("params"), seed, &params)?;
            if matches!(cli.command, Command::Anonymize) {
                let anon = anonymize_corpus(&corpus, &a, &params.params).map_err(data)?;
                let mut buf = Vec::new();
                write_corpus(&anon, &mut buf, c.delimiter_byte()?).map_err(data)?;
                pipeline::write_atomic(&out.join("anonymized.csv"), &buf).map_err(io_err)?;
            }
        }
        Command::Privacy { anonymized, breaches } => {
            let anon = load_corpus(&anonymized, &c.mapping, c.delimiter_byte()?).map_err(data)?;
            let (report, outcomes) = compute_ipr_with_outcomes(&corpus, &anon, &c.attacker).map_err(data)?;
            write_json(&out.join("privacy.json"), seed, &report)?;
            if let Some(path) = breaches {
                let mut buf = Vec::new();
                write_outcomes_csv(&outcomes, &mut buf).map_err(data)?;
                pipeline::write_atomic(&path, &buf).map_err(io_err)?;
            }
            println!("IPR {:.2}% ({} breaches / {} queries)", report.ipr_percent, report.breaches, report.total_queries);
        }
        Command::Utility => {
            let report = run_utility_experiment(&corpus, &c.utility, seed).map_err(data)?;
            write_json(&out.join("utility.json"), seed, &report)?;
            println!("mean F1 {:.4}", report.mean_f1);
        }
        Command::Run { skip_utility } => {
            c.skip_utility |= skip_utility;
            let outcome = pipeline::run_pipeline_on(&c, corpus)?;
            println!("IPR {:.2}%", outcome.privacy.ipr_percent);
            for row in &outcome.summary {
                println!("{:<26} F1 {:>5.1}%  IPR {:>5.1}%  level {}", row.approach, row.mean_f1_percent, row.ipr_percent, row.privacy_level);
            }
        }
        Command::Synth { .. } => unreachable!("handled above"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.common.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
