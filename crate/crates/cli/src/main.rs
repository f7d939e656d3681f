use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ionreadout::config::{parse_strategies, ExperimentConfig, Strategy};
use ionreadout::experiment::{
    feature_spec, generate_from_config, ion_row, probe, probe_csv, run_experiment_with, split_dataset,
    sweep_csv, sweep_detection_time, write_outputs, Model,
};
use ionreadout::featurize::{bin_sample, feature_dump_line, flatten, Normalizer};
use ionreadout::sim::{calibrate_to_fidelity, CalibrationConfig, Dataset};
use ionreadout::BasisLabel;
use serde_json::json;

/// Trapped-ion qubit readout: simulate photon-counting data, fit and compare
/// readout classifiers.
#[derive(Parser)]
#[command(name = "ionreadout", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a labeled dataset and print per-state mean counts.
    Generate(Common),
    /// Fit and score the configured strategies on one shared split.
    Run {
        #[command(flatten)]
        common: Common,
        /// Read this dataset instead of simulating one.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Comma-separated subset of FT,AT,NN,NN+,TNN,TNN+,RNN.
        #[arg(long)]
        strategies: Option<String>,
        #[arg(long)]
        seed_train: Option<u64>,
    },
    /// Bright probability of a trained RNN against the arrival bin of a single click.
    Probe {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        /// Probe only this ion (default: every ion).
        #[arg(long)]
        ion: Option<usize>,
    },
    /// Test fidelity of a trained RNN for each prefix of the detection window.
    SweepTime {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Scale the pump rates until single-ion fixed-threshold fidelity hits a target.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 0.995)]
        target: f64,
        #[arg(long, default_value_t = 100_000)]
        shots: usize,
    },
    /// Write each sample with the features one strategy feeds its network.
    DumpFeatures {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        strategy: String,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment config (flat TOML). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (default: `output_dir` from the config).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed_data: Option<u64>,
}

impl Common {
    fn load(&self) -> Result<(ExperimentConfig, PathBuf)> {
        let mut config = match &self.config {
            Some(p) => ExperimentConfig::load(p).with_context(|| format!("loading config {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(s) = self.seed_data {
            config.seed = s;
        }
        let out = self.out.clone().unwrap_or_else(|| PathBuf::from(&config.output_dir));
        fs::create_dir_all(&out).with_context(|| format!("creating output directory {}", out.display()))?;
        Ok((config, out))
    }
}

fn load_dataset(path: Option<&Path>, config: &ExperimentConfig) -> Result<Dataset> {
    match path {
        Some(p) => {
            let file = File::open(p).with_context(|| format!("opening dataset {}", p.display()))?;
            Ok(Dataset::read_from(BufReader::new(file))?)
        }
        None => Ok(generate_from_config(config)?),
    }
}

fn load_lstm(path: &Path) -> Result<ionreadout::experiment::LstmArtifact> {
    match Model::load(path).with_context(|| format!("loading model {}", path.display()))? {
        Model::Lstm(m) => Ok(m),
        other => bail!(ionreadout::Error::InvalidModel(format!(
            "{} holds a {} model, not an RNN",
            path.display(),
            other.strategy()
        ))),
    }
}

fn cmd_generate(common: &Common) -> Result<()> {
    let (config, out) = common.load()?;
    let dataset = generate_from_config(&config)?;
    let path = out.join("dataset.jsonl");
    let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    dataset.write_to(&mut w)?;
    w.flush()?;

    let channels = dataset.geometry.num_channels;
    let mut means = serde_json::Map::new();
    for label in BasisLabel::all(dataset.num_ions())? {
        let mut sum = vec![0u64; channels];
        let mut n = 0u64;
        for s in dataset.samples.iter().filter(|s| s.label == label) {
            for (acc, c) in sum.iter_mut().zip(s.channel_counts(channels)) {
                *acc += c as u64;
            }
            n += 1;
        }
        let mean: Vec<f64> = sum.iter().map(|&c| c as f64 / n as f64).collect();
        means.insert(label.to_string(), json!(mean));
    }
    let summary = json!({
        "dataset": path,
        "samples": dataset.samples.len(),
        "samples_per_label": dataset.samples_per_label,
        "data_seed": dataset.seed,
        "mean_counts_per_channel": means,
    });
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn cmd_run(common: &Common, dataset: Option<&Path>, strategies: Option<&str>, seed_train: Option<u64>) -> Result<()> {
    let (mut config, out) = common.load()?;
    if let Some(list) = strategies {
        config.strategies = parse_strategies(list)?;
    }
    if let Some(s) = seed_train {
        config.train_seed = s;
    }
    config.validate()?;
    let dataset = load_dataset(dataset, &config)?;
    if dataset.seed != config.seed {
        config.seed = dataset.seed;
    }
    let started = Instant::now();
    let outcome = run_experiment_with(&config, &dataset, |strategy, result| match result {
        Ok(r) => eprintln!(
            "{strategy:>4}: F = {:.5} ± {:.5} ({:.1} s)",
            r.evaluation.report.average,
            r.evaluation.report.average_stderr,
            started.elapsed().as_secs_f64()
        ),
        Err(e) => eprintln!("{strategy:>4}: failed: {e}"),
    })?;
    let summary = write_outputs(&outcome, &config, &dataset, &out)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn cmd_probe(common: &Common, model: &Path, ion: Option<usize>) -> Result<()> {
    let (config, out) = common.load()?;
    let lstm = load_lstm(model)?;
    let geometry = config.geometry()?;
    let ions: Vec<usize> = match ion {
        Some(i) => vec![i],
        None => (0..lstm.num_qubits).collect(),
    };
    let mut points = Vec::new();
    for i in ions {
        points.extend(probe(&lstm, i, ion_row(&lstm, &geometry, i)?)?);
    }
    let path = out.join("probe.csv");
    fs::write(&path, probe_csv(&points))?;
    println!("{}", path.display());
    Ok(())
}

fn cmd_sweep_time(common: &Common, model: &Path, dataset: Option<&Path>) -> Result<()> {
    let (config, out) = common.load()?;
    let lstm = load_lstm(model)?;
    let dataset = load_dataset(dataset, &config)?;
    let split = split_dataset(&dataset, config.train_fraction)?;
    let points = sweep_detection_time(&lstm, &dataset, &split.test)?;
    let path = out.join("sweep_time.csv");
    fs::write(&path, sweep_csv(&points))?;
    println!("{}", path.display());
    Ok(())
}

fn cmd_calibrate(common: &Common, target: f64, shots: usize) -> Result<()> {
    let (config, out) = common.load()?;
    let mut cal = CalibrationConfig { base: config.model()?, shots, ..CalibrationConfig::default() };
    if let Some(s) = common.seed_data {
        cal.seed = s;
    }
    let result = calibrate_to_fidelity(target, &cal)?;
    let summary = json!({
        "target": target,
        "multiplier": result.multiplier,
        "iterations": result.iterations,
        "pump_bright_to_dark_rate": result.model.pump_bright_to_dark_rate,
        "pump_dark_to_bright_rate": result.model.pump_dark_to_bright_rate,
        "threshold": result.threshold.thresholds,
        "report": result.report,
    });
    let text = serde_json::to_string_pretty(&summary)?;
    fs::write(out.join("calibration.json"), &text)?;
    println!("{text}");
    Ok(())
}

fn cmd_dump_features(common: &Common, dataset: Option<&Path>, strategy: &str) -> Result<()> {
    let (config, out) = common.load()?;
    let strategy: Strategy = strategy.parse()?;
    let dataset = load_dataset(dataset, &config)?;
    let spec = feature_spec(strategy, &config)
        .ok_or_else(|| ionreadout::Error::InvalidArgument(format!("{strategy} has no network features")))?;
    let geometry = &dataset.geometry;
    let identity = Normalizer::identity(spec.width(geometry)?);
    let path = out.join(format!("features_{}.jsonl", ionreadout::experiment::artifact_stem(strategy)));
    let mut w = BufWriter::new(File::create(&path)?);
    for s in &dataset.samples {
        let features = identity.apply(&flatten(&bin_sample(s, &spec, geometry)?));
        writeln!(w, "{}", feature_dump_line(s, &features)?)?;
    }
    w.flush()?;
    println!("{}", path.display());
    Ok(())
}

fn error_kind(e: &anyhow::Error) -> &'static str {
    if let Some(e) = e.downcast_ref::<ionreadout::Error>() {
        return e.kind();
    }
    if e.downcast_ref::<std::io::Error>().is_some() {
        return "io";
    }
    if e.downcast_ref::<serde_json::Error>().is_some() {
        return "json";
    }
    "other"
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(c) => cmd_generate(c),
        Command::Run { common, dataset, strategies, seed_train } => {
            cmd_run(common, dataset.as_deref(), strategies.as_deref(), *seed_train)
        }
        Command::Probe { common, model, ion } => cmd_probe(common, model, *ion),
        Command::SweepTime { common, model, dataset } => cmd_sweep_time(common, model, dataset.as_deref()),
        Command::Calibrate { common, target, shots } => cmd_calibrate(common, *target, *shots),
        Command::DumpFeatures { common, dataset, strategy } => cmd_dump_features(common, dataset.as_deref(), strategy),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = json!({ "error": format!("{e:#}"), "kind": error_kind(&e) });
            eprintln!("{body}");
            ExitCode::FAILURE
        }
    }
}
