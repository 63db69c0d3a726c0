//! `semlink`: staged experiment driver for the semantic link simulator.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use semlink_core::codec::WordCodec;
use semlink_core::conformance;
use semlink_core::experiment::{
    self, CsiMode, ExperimentError, GateMode, RunConfig, REPORT_DATA_FILE, REPORT_FILE,
    RESULTS_FILE,
};
use semlink_core::metrics::Method;
use semlink_core::server::{self, ReferenceService};
use semlink_core::synth;

#[derive(Parser)]
#[command(
    name = "semlink",
    version,
    about = "Semantic text transmission simulator"
)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Desk,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum CsiArg {
    Genie,
    Estimated,
}

#[derive(Clone, Copy, ValueEnum)]
enum GateArg {
    Evaluation,
    Deployment,
}

/// Flags mirroring the configuration keys; each one overrides the file.
#[derive(Args, Default)]
struct Overrides {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Starting preset when no config file is given.
    #[arg(long, global = true, value_enum)]
    preset: Option<Preset>,
    #[arg(long, global = true)]
    corpus: Option<PathBuf>,
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    n_train: Option<usize>,
    #[arg(long, global = true)]
    n_test: Option<usize>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// SNR grid in dB, comma separated.
    #[arg(
        long,
        global = true,
        value_delimiter = ',',
        allow_negative_numbers = true
    )]
    snr_db: Option<Vec<f64>>,
    /// Methods, comma separated (sc, sc_gpt, sc_gpt_prompt, sc_gpt_adaptive, sc_gpt_random).
    #[arg(long, global = true, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    /// mock, mock-rewriting, live, or a service base URL.
    #[arg(long, global = true)]
    oracle: Option<String>,
    /// builtin, or a codec service base URL.
    #[arg(long, global = true)]
    codec: Option<String>,
    /// Disruption passes per training sentence when labeling.
    #[arg(long, global = true)]
    passes: Option<usize>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    learning_rate: Option<f64>,
    #[arg(long, global = true, value_enum)]
    csi: Option<CsiArg>,
    #[arg(long, global = true, value_enum)]
    gate: Option<GateArg>,
    #[arg(long, global = true)]
    rewrite_threshold: Option<usize>,
    #[arg(long, global = true)]
    timeout_secs: Option<u64>,
    /// Worker threads for simulation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic parliamentary-style corpus.
    SynthCorpus {
        #[arg(long, default_value_t = 20_000)]
        lines: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Normalize and split the corpus, then build the vocabulary.
    BuildVocab,
    /// Label word importance by disrupting training features and asking the oracle.
    Label,
    /// Fit the importance classifier on the labels.
    TrainClassifier,
    /// Sweep methods over the SNR grid and write results.csv.
    Simulate,
    /// Join result files into report tables.
    Report {
        /// Result CSVs (default: results.csv in the output directory).
        inputs: Vec<PathBuf>,
        /// Output directory (default: the configured one).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every stage from build-vocab to report.
    Run,
    /// Print the resolved configuration as TOML.
    Config,
    /// Serve the wire protocol with the built-in codec and configured oracle.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
        #[arg(long, default_value_t = 4)]
        workers: usize,
    },
    /// Check a service against golden request/response files.
    Conformance {
        #[arg(long)]
        endpoint: String,
        /// Directory holding encode.json, decode.json and reconstruct.json.
        #[arg(long, default_value = "fixtures/conformance")]
        cases: PathBuf,
    },
}

fn resolve(o: &Overrides) -> Result<RunConfig, ExperimentError> {
    let mut cfg = match (&o.config, o.preset) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(Preset::Full)) => RunConfig::full(),
        (None, _) => RunConfig::desk(),
    };
    macro_rules! set {
        ($($flag:ident => $field:ident),* $(,)?) => {
            $(if let Some(v) = &o.$flag { cfg.$field = v.clone(); })*
        };
    }
    set!(
        corpus => corpus,
        output_dir => output_dir,
        n_train => n_train,
        n_test => n_test,
        seed => seed,
        snr_db => snr_db,
        methods => methods,
        oracle => oracle,
        codec => codec,
        passes => label_passes,
        epochs => epochs,
        learning_rate => learning_rate,
        rewrite_threshold => rewrite_threshold,
        timeout_secs => timeout_secs,
    );
    if let Some(c) = o.csi {
        cfg.csi = match c {
            CsiArg::Genie => CsiMode::Genie,
            CsiArg::Estimated => CsiMode::Estimated,
        };
    }
    if let Some(g) = o.gate {
        cfg.gate = match g {
            GateArg::Evaluation => GateMode::Evaluation,
            GateArg::Deployment => GateMode::Deployment,
        };
    }
    cfg.validate()?;
    Ok(cfg)
}

fn build_vocab(cfg: &RunConfig) -> Result<(), ExperimentError> {
    let s = experiment::stage_build_vocab(cfg)?;
    println!(
        "build-vocab: {} sentences accepted, {} train / {} test, vocabulary {}",
        s.accepted, s.train, s.test, s.vocab_size
    );
    Ok(())
}

fn label(cfg: &RunConfig) -> Result<(), ExperimentError> {
    let s = experiment::stage_label(cfg)?;
    println!(
        "label: {} records, {} important, {} oracle failures",
        s.records, s.important, s.failures
    );
    Ok(())
}

fn train(cfg: &RunConfig) -> Result<(), ExperimentError> {
    let s = experiment::stage_train(cfg)?;
    println!(
        "train-classifier: {} examples, final loss {:.4}, held-out accuracy {:.4} (majority {:.4})",
        s.examples, s.final_loss, s.holdout_accuracy, s.majority_rate
    );
    Ok(())
}

fn simulate(cfg: &RunConfig) -> Result<(), ExperimentError> {
    let rows = experiment::stage_simulate(cfg)?;
    println!(
        "simulate: {} rows written to {}",
        rows.len(),
        cfg.artifact(RESULTS_FILE).display()
    );
    Ok(())
}

fn report(inputs: &[PathBuf], out: &std::path::Path) -> Result<(), ExperimentError> {
    let n = experiment::stage_report(inputs, out)?;
    println!(
        "report: {n} rows, {} and {}",
        out.join(REPORT_FILE).display(),
        out.join(REPORT_DATA_FILE).display()
    );
    Ok(())
}

fn serve(cfg: &RunConfig, addr: &str, workers: usize) -> anyhow::Result<()> {
    let data = experiment::load_data(cfg)?;
    let codec = WordCodec::new(data.vocab, cfg.feature_width)?;
    let oracle = experiment::build_oracle(cfg, &data.split.train)?;
    let handle = server::spawn(ReferenceService::new(codec, oracle), addr, workers)
        .with_context(|| format!("binding {addr}"))?;
    println!("serving on {}", handle.base_url());
    handle.join();
    Ok(())
}

fn run_conformance(
    endpoint: &str,
    cases: &std::path::Path,
    timeout: Duration,
) -> anyhow::Result<bool> {
    let cases = conformance::load_cases(cases).map_err(anyhow::Error::msg)?;
    let outcomes = conformance::run(endpoint, &cases, timeout);
    for o in &outcomes {
        let mark = if o.passed { "PASS" } else { "FAIL" };
        if o.detail.is_empty() {
            println!("{mark} {} {}", o.route, o.name);
        } else {
            println!("{mark} {} {}: {}", o.route, o.name, o.detail);
        }
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!(
        "conformance: {} passed, {failed} failed",
        outcomes.len() - failed
    );
    Ok(failed == 0)
}

fn dispatch(cli: Cli) -> anyhow::Result<ExitCode> {
    if let Some(n) = cli.overrides.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    if let Command::SynthCorpus { lines, out } = &cli.command {
        let seed = cli.overrides.seed.unwrap_or(RunConfig::desk().seed);
        let mut text = synth::generate_corpus(*lines, seed).join("\n");
        text.push('\n');
        std::fs::write(out, text).with_context(|| format!("writing {}", out.display()))?;
        println!("synth-corpus: {lines} lines written to {}", out.display());
        return Ok(ExitCode::SUCCESS);
    }
    let cfg = resolve(&cli.overrides)?;
    match cli.command {
        Command::SynthCorpus { .. } => unreachable!("handled above"),
        Command::BuildVocab => build_vocab(&cfg)?,
        Command::Label => label(&cfg)?,
        Command::TrainClassifier => train(&cfg)?,
        Command::Simulate => simulate(&cfg)?,
        Command::Report { inputs, out } => {
            let inputs = if inputs.is_empty() {
                vec![cfg.artifact(RESULTS_FILE)]
            } else {
                inputs
            };
            report(&inputs, out.as_deref().unwrap_or(&cfg.output_dir))?;
        }
        Command::Run => {
            build_vocab(&cfg)?;
            let needs_classifier = cfg.methods.contains(&Method::ScGptAdaptive);
            if needs_classifier {
                label(&cfg)?;
                train(&cfg)?;
            }
            simulate(&cfg)?;
            report(&[cfg.artifact(RESULTS_FILE)], &cfg.output_dir)?;
        }
        Command::Config => print!("{}", cfg.to_toml()),
        Command::Serve { addr, workers } => serve(&cfg, &addr, workers)?,
        Command::Conformance { endpoint, cases } => {
            let timeout = Duration::from_secs(cfg.timeout_secs);
            if !run_conformance(&endpoint, &cases, timeout)? {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .downcast_ref::<ExperimentError>()
                .map_or(1, ExperimentError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
