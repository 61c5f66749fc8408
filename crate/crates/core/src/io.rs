//! File formats: signals, TF matrices, tracks, SPS datasets, models and
//! plot data.
//!
//! Signals are read from CSV (`time_s,value` or a single value column with a
//! known rate) or from a little-endian binary file:
//!
//! ```text
//! b"WSST" | u32 version = 1 | f64 sample_rate | u64 n | n × f64 samples
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classify::{ClassifierModel, RocResult};
use crate::error::{Error, Result};
use crate::model::SampledSignal;
use crate::pipeline::SpsDataset;
use crate::recovery::RecoveredComponent;
use crate::ridge::Ridge;
use crate::shape::SpsVector;
use crate::tf::{TfKind, TfRepresentation};

pub const SIGNAL_MAGIC: &[u8; 4] = b"WSST";
pub const SIGNAL_VERSION: u32 = 1;
/// Allowed deviation of a CSV time step from the mean step, in seconds.
pub const TIME_TOL_S: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalFormat {
    Csv,
    Bin,
}

impl SignalFormat {
    /// `.bin` is binary, anything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("bin") => SignalFormat::Bin,
            _ => SignalFormat::Csv,
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::Io(io),
            other => Error::Parse(format!("{other:?}")),
        }
    } else {
        Error::Parse(e.to_string())
    }
}

fn parse_f64(field: &str, row: usize) -> Result<f64> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| Error::Parse(format!("row {row}: {field:?} is not a number")))?;
    if !v.is_finite() {
        return Err(Error::Parse(format!(
            "row {row}: non-finite value {field:?}"
        )));
    }
    Ok(v)
}

/// Loads a signal. `sample_rate` is required for single-column CSV and
/// ignored otherwise. The file stem becomes the label.
pub fn load_signal(
    path: &Path,
    format: SignalFormat,
    sample_rate: Option<f64>,
) -> Result<SampledSignal> {
    let sig = match format {
        SignalFormat::Csv => read_signal_csv(File::open(path)?, sample_rate)?,
        SignalFormat::Bin => read_signal_bin(File::open(path)?)?,
    };
    Ok(match path.file_stem().and_then(|s| s.to_str()) {
        Some(stem) => sig.with_label(stem),
        None => sig,
    })
}

/// CSV with an optional header. Two columns are `time_s,value`; one column
/// is values sampled at `sample_rate`.
pub fn read_signal_csv(reader: impl Read, sample_rate: Option<f64>) -> Result<SampledSignal> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(false)
        .from_reader(reader);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        // A non-numeric first row is a header.
        if i == 0 && rec.get(0).is_some_and(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        rows.push(
            rec.iter()
                .map(|f| parse_f64(f, i + 1))
                .collect::<Result<_>>()?,
        );
    }
    if rows.is_empty() {
        return Err(Error::EmptyFile);
    }
    match rows[0].len() {
        1 => {
            let fs = sample_rate
                .ok_or_else(|| Error::Parse("single-column CSV needs a sample rate".into()))?;
            SampledSignal::new(rows.into_iter().map(|r| r[0]).collect(), fs)
        }
        2 => {
            let t: Vec<f64> = rows.iter().map(|r| r[0]).collect();
            if t.len() < 2 {
                return Err(Error::TooFewSamples("need at least two rows".into()));
            }
            let step = (t[t.len() - 1] - t[0]) / (t.len() - 1) as f64;
            if !(step > 0.0) {
                return Err(Error::Parse("time column must increase".into()));
            }
            for (row, w) in t.windows(2).enumerate() {
                let d = w[1] - w[0];
                if (d - step).abs() > TIME_TOL_S {
                    return Err(Error::NonUniformSampling {
                        row: row + 1,
                        step: d,
                        expected: step,
                    });
                }
            }
            SampledSignal::new(rows.into_iter().map(|r| r[1]).collect(), 1.0 / step)
        }
        k => Err(Error::Parse(format!("expected 1 or 2 columns, found {k}"))),
    }
}

pub fn write_signal_csv(signal: &SampledSignal, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["time_s", "value"]).map_err(csv_err)?;
    let dt = signal.dt();
    for (i, v) in signal.samples().iter().enumerate() {
        w.write_record([(i as f64 * dt).to_string(), v.to_string()])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_signal_bin(mut reader: impl Read) -> Result<SampledSignal> {
    let mut buf = Vec::new();
    reader.read_to_end(&mut buf)?;
    if buf.is_empty() {
        return Err(Error::EmptyFile);
    }
    if buf.len() < 24 || &buf[..4] != SIGNAL_MAGIC {
        return Err(Error::Parse("not a WSST signal file".into()));
    }
    let version = u32::from_le_bytes(buf[4..8].try_into().expect("4 bytes"));
    if version != SIGNAL_VERSION {
        return Err(Error::Parse(format!(
            "unsupported signal file version {version}"
        )));
    }
    let fs = f64::from_le_bytes(buf[8..16].try_into().expect("8 bytes"));
    let n = u64::from_le_bytes(buf[16..24].try_into().expect("8 bytes")) as usize;
    let body = &buf[24..];
    if body.len() != n * 8 {
        return Err(Error::Parse(format!(
            "header announces {n} samples, body holds {} bytes",
            body.len()
        )));
    }
    let samples = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    SampledSignal::new(samples, fs)
}

pub fn write_signal_bin(signal: &SampledSignal, mut writer: impl Write) -> Result<()> {
    writer.write_all(SIGNAL_MAGIC)?;
    writer.write_all(&SIGNAL_VERSION.to_le_bytes())?;
    writer.write_all(&signal.sample_rate().to_le_bytes())?;
    writer.write_all(&(signal.len() as u64).to_le_bytes())?;
    for v in signal.samples() {
        writer.write_all(&v.to_le_bytes())?;
    }
    writer.flush()?;
    Ok(())
}

pub fn save_signal(signal: &SampledSignal, path: &Path, format: SignalFormat) -> Result<()> {
    let w = BufWriter::new(File::create(path)?);
    match format {
        SignalFormat::Csv => write_signal_csv(signal, w),
        SignalFormat::Bin => write_signal_bin(signal, w),
    }
}

/// Sidecar describing a binary TF dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfSidecar {
    pub kind: TfKind,
    pub n_frames: usize,
    pub n_bins: usize,
    pub f_min_hz: f64,
    pub f_step_hz: f64,
    pub frame_dt_s: f64,
    pub sample_rate: f64,
    pub window_sigma: f64,
    /// Always `complex64-le-row-major`: per cell an f32 real part then an
    /// f32 imaginary part, frames outermost.
    pub layout: String,
}

/// Writes `<stem>.bin` (complex64, row-major) and `<stem>.json`.
pub fn write_tf_binary(tf: &TfRepresentation, dir: &Path, stem: &str) -> Result<()> {
    let mut w = BufWriter::new(File::create(dir.join(format!("{stem}.bin")))?);
    for z in tf.values() {
        w.write_all(&(z.re as f32).to_le_bytes())?;
        w.write_all(&(z.im as f32).to_le_bytes())?;
    }
    w.flush()?;
    let axis = tf.freq_axis();
    let side = TfSidecar {
        kind: tf.kind(),
        n_frames: tf.n_frames(),
        n_bins: tf.n_bins(),
        f_min_hz: axis.f_min,
        f_step_hz: axis.step,
        frame_dt_s: tf.frame_dt(),
        sample_rate: tf.sample_rate(),
        window_sigma: tf.window_sigma(),
        layout: "complex64-le-row-major".into(),
    };
    std::fs::write(
        dir.join(format!("{stem}.json")),
        serde_json::to_string_pretty(&side)?,
    )?;
    Ok(())
}

/// `|TF|` as a wide CSV: header `time_s,<freq>...`, one row per frame.
pub fn write_tf_magnitude_csv(tf: &TfRepresentation, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["time_s".to_string()];
    header.extend(tf.freq_axis().freqs().iter().map(|f| format!("{f}")));
    w.write_record(&header).map_err(csv_err)?;
    for m in 0..tf.n_frames() {
        let mut row = vec![tf.frame_time(m).to_string()];
        row.extend(tf.row(m).iter().map(|z| z.norm().to_string()));
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// `frame,time_s,freq_hz,energy`.
pub fn write_ridge_csv(ridge: &Ridge, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["frame", "time_s", "freq_hz", "energy"])
        .map_err(csv_err)?;
    for m in 0..ridge.len() {
        w.write_record([
            m.to_string(),
            ridge.time_s[m].to_string(),
            ridge.freq_hz[m].to_string(),
            ridge.energy[m].to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// `time_s,amp,phase_cycles,if_hz,interpolated`.
pub fn write_component_csv(comp: &RecoveredComponent, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["time_s", "amp", "phase_cycles", "if_hz", "interpolated"])
        .map_err(csv_err)?;
    for m in 0..comp.len() {
        w.write_record([
            comp.time_s[m].to_string(),
            comp.amp[m].to_string(),
            comp.phase[m].to_string(),
            comp.inst_freq[m].to_string(),
            u8::from(comp.interpolated[m]).to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Export form of an SPS vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpsExport {
    #[serde(rename = "D")]
    pub cap_d: usize,
    pub gamma: Vec<f64>,
    pub power: Vec<f64>,
    pub phase: Vec<f64>,
    pub aligned: bool,
    pub condition_number: Option<f64>,
}

impl From<&SpsVector> for SpsExport {
    fn from(s: &SpsVector) -> Self {
        Self {
            cap_d: s.cap_d,
            gamma: s.gamma.clone(),
            power: s.harmonic_power.clone(),
            phase: s.harmonic_phase.clone(),
            aligned: s.aligned,
            condition_number: s.condition_number.is_finite().then_some(s.condition_number),
        }
    }
}

pub fn sps_to_json(sps: &SpsVector) -> Result<String> {
    Ok(serde_json::to_string_pretty(&SpsExport::from(sps))?)
}

/// Column names of an SPS dataset row: `alpha0, alpha1..alphaD, beta1..betaD`.
pub fn sps_columns(cap_d: usize) -> Vec<String> {
    let mut cols = vec!["alpha0".to_string()];
    cols.extend((1..=cap_d).map(|l| format!("alpha{l}")));
    cols.extend((1..=cap_d).map(|l| format!("beta{l}")));
    cols
}

/// `name,alpha0,...,betaD`, one row per recording.
pub fn write_sps_dataset(data: &SpsDataset, writer: impl Write) -> Result<()> {
    let p = data.features.first().map_or(1, Vec::len);
    if p.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "SPS rows must have odd length, got {p}"
        )));
    }
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["name".to_string()];
    header.extend(sps_columns((p - 1) / 2));
    w.write_record(&header).map_err(csv_err)?;
    for (name, row) in data.names.iter().zip(&data.features) {
        let mut rec = vec![name.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sps_dataset(reader: impl Read) -> Result<SpsDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut names = Vec::new();
    let mut features = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let mut it = rec.iter();
        names.push(it.next().unwrap_or_default().to_string());
        features.push(
            it.map(|f| parse_f64(f, i + 2))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    if names.is_empty() {
        return Err(Error::EmptyFile);
    }
    Ok(SpsDataset { names, features })
}

fn parse_label(field: &str, row: usize) -> Result<bool> {
    match field.trim().to_ascii_lowercase().as_str() {
        "1" | "true" => Ok(true),
        "0" | "false" => Ok(false),
        other => Err(Error::Parse(format!(
            "row {row}: label {other:?} is not 0/1"
        ))),
    }
}

/// Labels as `name,label` rows (matched to `names`) or a single `label`
/// column in dataset order. An optional header row is skipped.
pub fn read_labels(reader: impl Read, names: &[String]) -> Result<Vec<bool>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let mut rows: Vec<csv::StringRecord> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let last = rec.get(rec.len().saturating_sub(1)).unwrap_or_default();
        if i == 0 && parse_label(last, 1).is_err() {
            continue;
        }
        rows.push(rec);
    }
    if rows.is_empty() {
        return Err(Error::EmptyFile);
    }
    if rows.len() != names.len() {
        return Err(Error::DimensionMismatch {
            expected: names.len(),
            got: rows.len(),
        });
    }
    if rows[0].len() == 1 {
        return rows
            .iter()
            .enumerate()
            .map(|(i, r)| parse_label(&r[0], i + 1))
            .collect();
    }
    let mut by_name = std::collections::BTreeMap::new();
    for (i, r) in rows.iter().enumerate() {
        by_name.insert(r[0].to_string(), parse_label(&r[1], i + 1)?);
    }
    names
        .iter()
        .map(|n| {
            by_name
                .get(n)
                .copied()
                .ok_or_else(|| Error::Parse(format!("no label for {n:?}")))
        })
        .collect()
}

pub fn save_model(model: &ClassifierModel, path: &Path) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(model)?)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<ClassifierModel> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// `threshold,sens,spec`.
pub fn write_roc_csv(roc: &RocResult, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["threshold", "sens", "spec"])
        .map_err(csv_err)?;
    for k in 0..roc.thresholds.len() {
        w.write_record([
            roc.thresholds[k].to_string(),
            roc.sens[k].to_string(),
            roc.spec[k].to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Per-class histogram counts of GPS scores over `n_bins` equal bins
/// spanning the score range: `bin_lo,bin_hi,count_0,count_1`.
pub fn write_gps_histogram_csv(
    scores: &[f64],
    labels: &[bool],
    n_bins: usize,
    writer: impl Write,
) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            got: labels.len(),
        });
    }
    if scores.is_empty() || n_bins == 0 {
        return Err(Error::InvalidArgument(
            "need scores and at least one bin".into(),
        ));
    }
    let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo {
        (hi - lo) / n_bins as f64
    } else {
        1.0
    };
    let mut counts = vec![[0usize; 2]; n_bins];
    for (s, l) in scores.iter().zip(labels) {
        let b = (((s - lo) / width) as usize).min(n_bins - 1);
        counts[b][usize::from(*l)] += 1;
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["bin_lo", "bin_hi", "count_0", "count_1"])
        .map_err(csv_err)?;
    for (b, c) in counts.iter().enumerate() {
        let a = lo + b as f64 * width;
        w.write_record([
            a.to_string(),
            (a + width).to_string(),
            c[0].to_string(),
            c[1].to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
