//! Synthetic pulse-like recordings for trying the pipeline end to end.

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use rand::Rng;
use wsst_core::io::{self, SignalFormat};
use wsst_core::model::{gen_arma_t_noise, mix_at_snr, synthesize_imt, ImtComponent, WaveShape};
use wsst_core::seed;

use crate::config::parse_pair;

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Output directory; created if missing.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Recordings per class.
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    /// 1 writes only class 0; 2 adds class 1 with a weaker second harmonic.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=2))]
    pub classes: u8,
    #[arg(long, default_value_t = 10.0)]
    pub duration: f64,
    #[arg(long, default_value_t = 100.0)]
    pub rate: f64,
    /// Second-to-first harmonic ratio of class 1 (class 0 uses 0.59).
    #[arg(long, default_value_t = 0.35)]
    pub alt_ratio: f64,
    /// SNR in dB of the noise burst; omit for clean signals.
    #[arg(long)]
    pub snr_db: Option<f64>,
    /// Noise burst interval in seconds as `START,END`.
    #[arg(long, value_parser = parse_pair, default_value = "2.5,5.5")]
    pub noise_interval: (f64, f64),
    /// Student-t degrees of freedom of the noise innovations.
    #[arg(long, default_value_t = 3.0)]
    pub dof: f64,
    #[arg(long, default_value_t = 0.5)]
    pub ar: f64,
    #[arg(long, default_value_t = -0.3)]
    pub ma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum Format {
    Csv,
    Bin,
}

fn class_shape(class: u8, alt_ratio: f64) -> Result<WaveShape> {
    let r2 = if class == 0 { 0.59 } else { alt_ratio };
    let amps = [1.0, r2, 0.35, 0.18, 0.08].map(|r| 0.5 * r);
    let phases = [0.0, -0.6, -1.2, -1.8, -2.4];
    Ok(WaveShape::from_polar(
        0.3,
        &amps,
        &phases,
        r2.max(0.35),
        true,
    )?)
}

/// Writes `signals/c<class>_<index>.{csv,bin}` and `labels.csv` under the
/// output directory; returns the signal paths.
pub fn run(args: &GenerateArgs) -> Result<Vec<PathBuf>> {
    let sig_dir = args.out_dir.join("signals");
    std::fs::create_dir_all(&sig_dir).with_context(|| format!("creating {}", sig_dir.display()))?;
    let n = (args.duration * args.rate).round() as usize;
    let (ext, fmt) = match args.format {
        Format::Csv => ("csv", SignalFormat::Csv),
        Format::Bin => ("bin", SignalFormat::Bin),
    };
    let mut labels = String::from("name,label\n");
    let mut paths = Vec::new();
    for class in 0..args.classes {
        let shape = class_shape(class, args.alt_ratio)?;
        for i in 0..args.count {
            let idx = u64::from(class) * 1_000_000 + i as u64;
            let mut rng = seed::rng(seed::derive(args.seed, "generate/params", idx));
            let f0 = rng.random_range(1.0..1.4);
            let fm = rng.random_range(0.05..0.1);
            let rho = rng.random_range(0.0..std::f64::consts::TAU);
            let comp = ImtComponent::from_fns(
                n,
                args.rate,
                ImtComponent::DEFAULT_EPS,
                |t| 1.0 + 0.1 * (std::f64::consts::TAU * 0.05 * t + rho).sin(),
                |t| {
                    f0 * t
                        - 0.15 / (std::f64::consts::TAU * fm)
                            * (std::f64::consts::TAU * fm * t).cos()
                },
                |t| f0 + 0.15 * (std::f64::consts::TAU * fm * t).sin(),
            )?;
            let mut signal = synthesize_imt(&shape, &comp)?;
            if let Some(snr) = args.snr_db {
                let lo = ((args.noise_interval.0 * args.rate).round() as usize).min(n);
                let hi = ((args.noise_interval.1 * args.rate).round() as usize).min(n);
                let noise = gen_arma_t_noise(
                    hi.saturating_sub(lo),
                    seed::derive(args.seed, "generate/noise", idx),
                    args.dof,
                    args.ar,
                    args.ma,
                )?;
                signal = mix_at_snr(&signal, &noise, snr, lo..hi)?;
            }
            let name = format!("c{class}_{i:03}");
            let path = sig_dir.join(format!("{name}.{ext}"));
            io::save_signal(&signal, &path, fmt)?;
            labels.push_str(&format!("{name},{class}\n"));
            paths.push(path);
        }
    }
    std::fs::write(args.out_dir.join("labels.csv"), labels)?;
    Ok(paths)
}
