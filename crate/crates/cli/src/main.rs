//! `wsst`: batch driver for the pulse-signature pipeline.
//!
//! Exit status is 0 on success, 1 when some signals failed but a report was
//! written, and 2 on a fatal error.

mod config;
mod generate;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use wsst_core::io::{self, SignalFormat};
use wsst_core::model::SampledSignal;
use wsst_core::pipeline::{self, AnalysisReport, BatchInput, SpsDataset};
use wsst_core::tf;

use config::ConfigArgs;

#[derive(Debug, Parser)]
#[command(
    name = "wsst",
    version,
    about = "Wave-shape analysis of pulse-like signals"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write synthetic recordings and a labels file.
    Generate(generate::GenerateArgs),
    /// Signals to SPS vectors.
    Analyze(AnalyzeArgs),
    /// SPS vectors and labels to GPS scores, ROC, LOOCV and ANOVA.
    Classify(ClassifyArgs),
    /// Dump the STFT and SST of one signal.
    ExportTf(ExportTfArgs),
    /// Merge report files.
    Report(ReportArgs),
}

#[derive(Debug, clap::Args)]
struct AnalyzeArgs {
    /// Signal files (`.csv` or `.bin`).
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Report JSON path.
    #[arg(long, short)]
    out: PathBuf,
    /// Also write the SPS dataset as CSV.
    #[arg(long)]
    sps: Option<PathBuf>,
    /// Write ridge and component CSVs per signal into this directory.
    #[arg(long)]
    export_dir: Option<PathBuf>,
    /// Sample rate for single-column CSV input.
    #[arg(long)]
    rate: Option<f64>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, clap::Args)]
struct ClassifyArgs {
    /// SPS dataset: CSV from `analyze --sps` or an `analyze` report JSON.
    #[arg(long)]
    sps: PathBuf,
    /// `name,label` rows or a single label column in dataset order.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, short)]
    out: PathBuf,
    /// Write `roc.csv` and `gps_hist.csv` here.
    #[arg(long)]
    plot_dir: Option<PathBuf>,
    /// Save the fitted model as JSON.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    hist_bins: usize,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, clap::Args)]
struct ExportTfArgs {
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    rate: Option<f64>,
    /// Also write `|STFT|` and `|SST|` as wide CSVs.
    #[arg(long)]
    magnitude_csv: bool,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, clap::Args)]
struct ReportArgs {
    /// Reports to merge, in order.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, short)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Generate(a) => {
            let paths = generate::run(&a)?;
            println!("wrote {} signals to {}", paths.len(), a.out_dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Analyze(a) => analyze(&a),
        Command::Classify(a) => classify(&a),
        Command::ExportTf(a) => export_tf(&a),
        Command::Report(a) => report(&a),
    }
}

fn stem(path: &Path) -> String {
    path.file_stem().map_or_else(
        || path.display().to_string(),
        |s| s.to_string_lossy().into_owned(),
    )
}

fn load(path: &Path, rate: Option<f64>) -> wsst_core::Result<SampledSignal> {
    io::load_signal(path, SignalFormat::from_path(path), rate)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn write_report(report: &AnalysisReport, path: &Path) -> Result<()> {
    std::fs::write(path, report.to_json()? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn analyze(a: &AnalyzeArgs) -> Result<ExitCode> {
    let config = a.config.resolve()?;
    let inputs: Vec<BatchInput> = a
        .inputs
        .iter()
        .map(|p| BatchInput {
            name: stem(p),
            signal: load(p, a.rate),
        })
        .collect();
    let report = pipeline::run_analyze(&config, &inputs)?;
    write_report(&report, &a.out)?;
    if let Some(path) = &a.sps {
        io::write_sps_dataset(&SpsDataset::from_report(&report), create(path)?)?;
    }
    if let Some(dir) = &a.export_dir {
        std::fs::create_dir_all(dir)?;
        for (input, entry) in inputs.iter().zip(&report.signals) {
            let Ok(signal) = &input.signal else { continue };
            if !entry.is_ok() {
                continue;
            }
            let trace = pipeline::analyze_signal_traced(signal, &config)?;
            io::write_ridge_csv(
                &trace.ridge,
                create(&dir.join(format!("{}_ridge.csv", input.name)))?,
            )?;
            io::write_component_csv(
                &trace.tracks,
                create(&dir.join(format!("{}_component.csv", input.name)))?,
            )?;
        }
    }
    let failed = report.failed_count();
    println!(
        "analysed {} signals, {} failed; report at {}",
        report.signals.len(),
        failed,
        a.out.display()
    );
    Ok(match failed {
        0 => ExitCode::SUCCESS,
        f if f == report.signals.len() => bail!("every signal failed"),
        _ => ExitCode::from(1),
    })
}

fn load_dataset(path: &Path) -> Result<SpsDataset> {
    let is_json = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let report: AnalysisReport =
            serde_json::from_str(&text).context("parsing analysis report")?;
        Ok(SpsDataset::from_report(&report))
    } else {
        Ok(io::read_sps_dataset(
            File::open(path).with_context(|| format!("opening {}", path.display()))?,
        )?)
    }
}

fn classify(a: &ClassifyArgs) -> Result<ExitCode> {
    let config = a.config.resolve()?;
    let data = load_dataset(&a.sps)?;
    let labels = io::read_labels(
        File::open(&a.labels).with_context(|| format!("opening {}", a.labels.display()))?,
        &data.names,
    )?;
    let dataset = pipeline::run_classify(&config, &data, &labels)?;
    if let Some(dir) = &a.plot_dir {
        std::fs::create_dir_all(dir)?;
        io::write_roc_csv(&dataset.roc, create(&dir.join("roc.csv"))?)?;
        io::write_gps_histogram_csv(
            &dataset.gps_scores,
            &dataset.labels,
            a.hist_bins,
            create(&dir.join("gps_hist.csv"))?,
        )?;
    }
    if let Some(path) = &a.model {
        io::save_model(&dataset.model, path)?;
    }
    println!(
        "AUC {:.4} (CI {}), LOOCV accuracy {:.4}, ANOVA p {}",
        dataset.roc.auc,
        dataset
            .roc
            .ci
            .map_or_else(|| "n/a".into(), |(lo, hi)| format!("{lo:.4}-{hi:.4}")),
        dataset.loocv_accuracy,
        dataset
            .anova
            .as_ref()
            .map_or_else(|| "n/a".into(), |r| format!("{:.4}", r.p_value)),
    );
    let report = AnalysisReport {
        dataset: Some(dataset),
        ..AnalysisReport::new(config)
    };
    write_report(&report, &a.out)?;
    Ok(ExitCode::SUCCESS)
}

fn export_tf(a: &ExportTfArgs) -> Result<ExitCode> {
    let config = a.config.resolve()?;
    let signal =
        load(&a.input, a.rate).with_context(|| format!("loading {}", a.input.display()))?;
    let (stft, sst) = tf::stft_and_sst(
        &signal,
        &config.stft_params(),
        tf::Threshold::Relative(config.gamma_thresh_rel),
        config.squeeze_rule,
    )?;
    std::fs::create_dir_all(&a.out_dir)?;
    io::write_tf_binary(&stft, &a.out_dir, "stft")?;
    io::write_tf_binary(&sst, &a.out_dir, "sst")?;
    if a.magnitude_csv {
        io::write_tf_magnitude_csv(&stft, create(&a.out_dir.join("stft_mag.csv"))?)?;
        io::write_tf_magnitude_csv(&sst, create(&a.out_dir.join("sst_mag.csv"))?)?;
    }
    println!(
        "{} frames x {} bins written to {}",
        stft.n_frames(),
        stft.n_bins(),
        a.out_dir.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn report(a: &ReportArgs) -> Result<ExitCode> {
    let mut merged: Option<AnalysisReport> = None;
    for p in &a.inputs {
        let text =
            std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let r: AnalysisReport =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
        merged = Some(match merged {
            None => r,
            Some(m) => m.merge(r)?,
        });
    }
    let merged = merged.expect("clap requires at least one input");
    write_report(&merged, &a.out)?;
    let failed = merged.failed_count();
    println!(
        "merged {} reports, {} signals ({failed} failed)",
        a.inputs.len(),
        merged.signals.len()
    );
    Ok(if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}
