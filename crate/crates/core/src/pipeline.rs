//! Configuration and batch drivers for the signal and dataset stages.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classify::{self, AnovaResult, ClassifierModel, RocResult, ThresholdRule};
use crate::error::{Error, Result};
use crate::model::SampledSignal;
use crate::recovery::{self, RecoveredComponent};
use crate::ridge::{self, Ridge, RidgeSummary};
use crate::seed;
use crate::shape::{self, SpsVector};
use crate::tf::{self, SqueezeRule, StftParams, TfRepresentation, Threshold};

/// Bumped whenever the report layout changes.
pub const REPORT_SCHEMA_VERSION: u32 = 1;
/// Environment variable that overrides [`PipelineConfig::seed`].
pub const SEED_ENV: &str = "WSST_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Gaussian window σ in seconds.
    pub window_sigma: f64,
    /// Frame step in samples.
    pub hop: usize,
    pub n_bins: usize,
    pub freq_max: f64,
    /// Ridge search band in Hz.
    pub ridge_band: (f64, f64),
    pub ridge_penalty: f64,
    /// Half-width in Hz of the reconstruction band around the ridge.
    pub recon_band: f64,
    pub cap_d: usize,
    pub gamma_thresh_rel: f64,
    pub squeeze_rule: SqueezeRule,
    /// Remove within-cycle ripple from the recovered amplitude and phase.
    pub cycle_smoothing: bool,
    /// Drop frames whose window overhangs the record before regression.
    pub exclude_boundary: bool,
    pub seed: u64,
    /// PLS latent dimension; `None` means `min(5, p, n − 1)`.
    pub n_components: Option<usize>,
    pub n_boot: usize,
    pub n_perm: usize,
    pub loocv_repeats: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            window_sigma: 0.5,
            hop: 1,
            n_bins: 512,
            freq_max: 10.0,
            ridge_band: (0.5, 3.0),
            ridge_penalty: 1.0,
            recon_band: 0.3,
            cap_d: shape::DEFAULT_CAP_D,
            gamma_thresh_rel: 1e-8,
            squeeze_rule: SqueezeRule::default(),
            cycle_smoothing: true,
            exclude_boundary: true,
            seed: 0,
            n_components: None,
            n_boot: 1000,
            n_perm: 1000,
            loocv_repeats: 1,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("window_sigma", self.window_sigma),
            ("freq_max", self.freq_max),
            ("recon_band", self.recon_band),
            ("gamma_thresh_rel", self.gamma_thresh_rel),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be > 0, got {v}"
                )));
            }
        }
        if self.hop == 0 || self.n_bins < 2 {
            return Err(Error::InvalidArgument(
                "hop must be >= 1 and n_bins >= 2".into(),
            ));
        }
        let (lo, hi) = self.ridge_band;
        if !(lo >= 0.0 && lo < hi && hi <= self.freq_max) {
            return Err(Error::InvalidArgument(format!(
                "ridge_band ({lo}, {hi}) must satisfy 0 <= lo < hi <= freq_max"
            )));
        }
        if !(self.ridge_penalty >= 0.0) {
            return Err(Error::InvalidArgument("ridge_penalty must be >= 0".into()));
        }
        if !(1..=shape::MAX_CAP_D).contains(&self.cap_d) {
            return Err(Error::InvalidArgument(format!(
                "cap_d must be in 1..={}, got {}",
                shape::MAX_CAP_D,
                self.cap_d
            )));
        }
        if self.n_boot < 100 || self.n_perm == 0 || self.loocv_repeats == 0 {
            return Err(Error::InvalidArgument(
                "n_boot must be >= 100, n_perm and loocv_repeats >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn stft_params(&self) -> StftParams {
        StftParams {
            sigma: self.window_sigma,
            hop: self.hop,
            n_bins: self.n_bins,
            f_max: self.freq_max,
            ..StftParams::default()
        }
    }

    /// Applies a seed override such as the value of [`SEED_ENV`].
    pub fn with_seed_override(mut self, value: Option<&str>) -> Result<Self> {
        if let Some(v) = value {
            self.seed = v.trim().parse().map_err(|_| {
                Error::Parse(format!("{SEED_ENV}={v:?} is not an unsigned integer"))
            })?;
        }
        Ok(self)
    }

    /// Reads [`SEED_ENV`] from the process environment.
    pub fn with_env_seed(self) -> Result<Self> {
        let v = std::env::var(SEED_ENV).ok();
        self.with_seed_override(v.as_deref())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalFlags {
    pub boundary_frames_excluded: usize,
    /// Frames (indices into the full frame axis) without SST mass in the
    /// reconstruction band.
    pub interpolated_frames: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalAnalysis {
    pub n_samples: usize,
    pub sample_rate: f64,
    pub frames_used: usize,
    /// Unit-energy, phase-aligned SPS used for classification.
    pub sps: SpsVector,
    /// Regression output before normalisation and alignment.
    pub raw_gamma: Vec<f64>,
    pub condition_number: f64,
    /// IF statistics over the frames used.
    pub ridge: RidgeSummary,
    pub flags: SignalFlags,
}

/// Every intermediate of [`analyze_signal`], for plotting and export.
#[derive(Debug, Clone)]
pub struct AnalysisTrace {
    pub stft: TfRepresentation,
    pub sst: TfRepresentation,
    pub ridge: Ridge,
    pub inst_freq: Vec<f64>,
    /// `R̃`, `Ã`, `φ̃` as reconstructed.
    pub component: RecoveredComponent,
    /// The tracks entering the regression (cycle-smoothed when enabled).
    pub tracks: RecoveredComponent,
    /// Frame indices entering the regression.
    pub frames: Vec<usize>,
    pub analysis: SignalAnalysis,
}

pub fn analyze_signal(signal: &SampledSignal, config: &PipelineConfig) -> Result<SignalAnalysis> {
    analyze_signal_traced(signal, config).map(|t| t.analysis)
}

/// stft → reassign → synchrosqueeze → ridge → reconstruct → (cycle smoothing)
/// → design → estimate → normalise → align.
pub fn analyze_signal_traced(
    signal: &SampledSignal,
    config: &PipelineConfig,
) -> Result<AnalysisTrace> {
    config.validate()?;
    let threshold = Threshold::Relative(config.gamma_thresh_rel);
    let (stft, sst) = tf::stft_and_sst(
        signal,
        &config.stft_params(),
        threshold,
        config.squeeze_rule,
    )?;
    let ridge = ridge::extract_ridge(&sst, config.ridge_penalty, Some(config.ridge_band))?;
    let inst_freq = ridge::ridge_to_if(&ridge, true);
    let component = recovery::reconstruct(&sst, &inst_freq, config.recon_band)?;
    let tracks = if config.cycle_smoothing {
        recovery::smooth_component(&component, &inst_freq)?
    } else {
        component.clone()
    };

    let frames: Vec<usize> = if config.exclude_boundary {
        sst.interior_frames()
    } else {
        (0..sst.n_frames()).collect()
    };
    let (first, last) = match (frames.first(), frames.last()) {
        (Some(&a), Some(&b)) => (a, b),
        _ => {
            return Err(Error::TooShort {
                frames: 0,
                required: 4 * (2 * config.cap_d + 1),
            })
        }
    };
    let used = tracks.slice(first..last + 1);
    let design = shape::build_design(&used, config.cap_d)?;
    let y: Vec<f64> = frames
        .iter()
        .map(|&m| signal.samples()[sst.frame_sample(m)])
        .collect();
    let raw = shape::estimate_sps(&y, &design)?;
    let sps = shape::align_phase(&shape::normalize_energy(&raw)?)?;

    let interpolated_frames = (0..component.len())
        .filter(|&m| component.interpolated[m])
        .collect();
    let analysis = SignalAnalysis {
        n_samples: signal.len(),
        sample_rate: signal.sample_rate(),
        frames_used: frames.len(),
        condition_number: raw.condition_number,
        raw_gamma: raw.gamma,
        sps,
        ridge: ridge::summarize(&inst_freq[first..=last]),
        flags: SignalFlags {
            boundary_frames_excluded: sst.n_frames() - frames.len(),
            interpolated_frames,
        },
    };
    Ok(AnalysisTrace {
        stft,
        sst,
        ridge,
        inst_freq,
        component,
        tracks,
        frames,
        analysis,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorInfo {
    /// Stable error name, e.g. `AllBelowFloor`.
    pub kind: String,
    pub message: String,
}

impl From<&Error> for ErrorInfo {
    fn from(e: &Error) -> Self {
        Self {
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalEntry {
    pub name: String,
    pub label: Option<String>,
    pub analysis: Option<SignalAnalysis>,
    pub error: Option<ErrorInfo>,
}

impl SignalEntry {
    pub fn is_ok(&self) -> bool {
        self.analysis.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub n_samples: usize,
    pub n_features: usize,
    pub names: Vec<String>,
    pub labels: Vec<bool>,
    pub model: ClassifierModel,
    pub gps_scores: Vec<f64>,
    pub roc: RocResult,
    pub loocv_accuracy: f64,
    /// Absent when a class has fewer than three members.
    pub anova: Option<AnovaResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub schema_version: u32,
    pub config: PipelineConfig,
    pub signals: Vec<SignalEntry>,
    pub dataset: Option<DatasetReport>,
}

impl AnalysisReport {
    pub fn new(config: PipelineConfig) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            config,
            signals: Vec::new(),
            dataset: None,
        }
    }

    pub fn failed_count(&self) -> usize {
        self.signals.iter().filter(|s| !s.is_ok()).count()
    }

    /// Signal-stage entries from `self`, dataset stage from `other` when
    /// `self` has none.
    pub fn merge(mut self, other: AnalysisReport) -> Result<Self> {
        if self.schema_version != other.schema_version {
            return Err(Error::InvalidArgument(format!(
                "schema versions differ: {} vs {}",
                self.schema_version, other.schema_version
            )));
        }
        self.signals.extend(other.signals);
        if self.dataset.is_none() {
            self.dataset = other.dataset;
        }
        Ok(self)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// A named input for the batch driver; a load failure is carried through so
/// it shows up in the report next to the other signals.
pub struct BatchInput {
    pub name: String,
    pub signal: Result<SampledSignal>,
}

/// Analyses every input in parallel. Output order follows input order, and a
/// failure is recorded on its own entry without touching the others.
pub fn run_analyze(config: &PipelineConfig, inputs: &[BatchInput]) -> Result<AnalysisReport> {
    config.validate()?;
    if inputs.is_empty() {
        return Err(Error::InvalidArgument("no signals to analyse".into()));
    }
    let signals = inputs
        .par_iter()
        .map(|input| {
            let result = input
                .signal
                .as_ref()
                .map_err(ErrorInfo::from)
                .and_then(|s| analyze_signal(s, config).map_err(|e| ErrorInfo::from(&e)));
            let label = input
                .signal
                .as_ref()
                .ok()
                .and_then(|s| s.label().map(str::to_string));
            match result {
                Ok(a) => SignalEntry {
                    name: input.name.clone(),
                    label,
                    analysis: Some(a),
                    error: None,
                },
                Err(e) => {
                    log::warn!("{}: {} ({})", input.name, e.message, e.kind);
                    SignalEntry {
                        name: input.name.clone(),
                        label,
                        analysis: None,
                        error: Some(e),
                    }
                }
            }
        })
        .collect();
    Ok(AnalysisReport {
        signals,
        ..AnalysisReport::new(config.clone())
    })
}

/// Feature rows (one SPS γ per recording) with names.
#[derive(Debug, Clone, PartialEq)]
pub struct SpsDataset {
    pub names: Vec<String>,
    pub features: Vec<Vec<f64>>,
}

impl SpsDataset {
    /// Successful entries of a signal-stage report.
    pub fn from_report(report: &AnalysisReport) -> Self {
        let (names, features) = report
            .signals
            .iter()
            .filter_map(|s| {
                s.analysis
                    .as_ref()
                    .map(|a| (s.name.clone(), a.sps.gamma.clone()))
            })
            .unzip();
        Self { names, features }
    }
}

/// PLS → GPS scores → ROC with bootstrap CI → LOOCV → permutation ANOVA.
pub fn run_classify(
    config: &PipelineConfig,
    data: &SpsDataset,
    labels: &[bool],
) -> Result<DatasetReport> {
    config.validate()?;
    let n = data.features.len();
    if labels.len() != n || data.names.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: labels.len(),
        });
    }
    let p = data.features.first().map_or(0, Vec::len);
    let nc = config
        .n_components
        .unwrap_or_else(|| classify::default_components(p, n));
    let mut model = classify::fit_pls(&data.features, labels, nc)?;
    model.training_meta.seed = config.seed;
    let scores: Vec<f64> = data
        .features
        .iter()
        .map(|r| classify::gps_score(&model, r))
        .collect::<Result<_>>()?;
    let roc = classify::roc_with_ci(
        &scores,
        labels,
        config.n_boot,
        seed::derive(config.seed, "classify/bootstrap", 0),
    )?;
    let loocv_accuracy = classify::loocv_repeated(
        &data.features,
        labels,
        nc,
        ThresholdRule::Youden,
        config.loocv_repeats,
        seed::derive(config.seed, "classify/loocv", 0),
    )?;
    let groups: Vec<Vec<Vec<f64>>> = [false, true]
        .iter()
        .map(|c| {
            data.features
                .iter()
                .zip(labels)
                .filter(|(_, l)| *l == c)
                .map(|(r, _)| r.clone())
                .collect()
        })
        .collect();
    let anova = if groups.iter().all(|g| g.len() >= 3) {
        Some(classify::permutation_functional_anova(
            &groups,
            config.n_perm,
            seed::derive(config.seed, "classify/anova", 0),
        )?)
    } else {
        log::warn!("permutation ANOVA skipped: a class has fewer than 3 members");
        None
    };
    Ok(DatasetReport {
        n_samples: n,
        n_features: p,
        names: data.names.clone(),
        labels: labels.to_vec(),
        model,
        gps_scores: scores,
        roc,
        loocv_accuracy,
        anova,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{synthesize_imt, ImtComponent, WaveShape};

    fn clean_imt(seconds: f64) -> SampledSignal {
        let comp = ImtComponent::from_fns(
            (seconds * 100.0) as usize,
            100.0,
            ImtComponent::DEFAULT_EPS,
            |t| 1.0 + 0.05 * (2.0 * std::f64::consts::PI * 0.1 * t).sin(),
            |t| 1.2 * t,
            |_| 1.2,
        )
        .unwrap();
        synthesize_imt(&WaveShape::pulse_example(), &comp).unwrap()
    }

    fn fast_config() -> PipelineConfig {
        PipelineConfig {
            hop: 2,
            n_bins: 256,
            n_boot: 200,
            n_perm: 200,
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn config_json_round_trip() {
        let c = PipelineConfig {
            seed: 42,
            n_components: Some(3),
            ..PipelineConfig::default()
        };
        let s = serde_json::to_string(&c).unwrap();
        let back: PipelineConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(back, c);
        assert_eq!(serde_json::to_string(&back).unwrap(), s);
        let partial: PipelineConfig = serde_json::from_str(r#"{"hop": 4}"#).unwrap();
        assert_eq!(partial.hop, 4);
        assert_eq!(partial.cap_d, 6);
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"hopp": 4}"#).is_err());
    }

    #[test]
    fn config_validation_and_seed_override() {
        assert!(PipelineConfig::default().validate().is_ok());
        let bad = PipelineConfig {
            ridge_band: (3.0, 0.5),
            ..PipelineConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = PipelineConfig {
            cap_d: 0,
            ..PipelineConfig::default()
        };
        assert!(bad.validate().is_err());
        let c = PipelineConfig::default()
            .with_seed_override(Some(" 17 "))
            .unwrap();
        assert_eq!(c.seed, 17);
        assert_eq!(
            PipelineConfig::default()
                .with_seed_override(None)
                .unwrap()
                .seed,
            0
        );
        assert!(PipelineConfig::default()
            .with_seed_override(Some("x"))
            .is_err());
    }

    #[test]
    fn batch_isolation_and_order() {
        let good = clean_imt(10.0);
        let zero = SampledSignal::new(vec![0.0; 1000], 100.0).unwrap();
        let inputs = vec![
            BatchInput {
                name: "a".into(),
                signal: Ok(good.clone()),
            },
            BatchInput {
                name: "zero".into(),
                signal: Ok(zero),
            },
            BatchInput {
                name: "missing".into(),
                signal: Err(Error::EmptyFile),
            },
            BatchInput {
                name: "b".into(),
                signal: Ok(good.clone()),
            },
        ];
        let report = run_analyze(&fast_config(), &inputs).unwrap();
        let names: Vec<&str> = report.signals.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["a", "zero", "missing", "b"]);
        assert_eq!(
            report.signals[1].error.as_ref().unwrap().kind,
            "AllBelowFloor"
        );
        assert_eq!(report.signals[2].error.as_ref().unwrap().kind, "EmptyFile");
        assert_eq!(report.failed_count(), 2);
        assert_eq!(report.signals[0].analysis, report.signals[3].analysis);
        let alone = analyze_signal(&good, &fast_config()).unwrap();
        assert_eq!(report.signals[0].analysis.as_ref().unwrap(), &alone);
    }

    #[test]
    fn clean_signal_analysis() {
        let a = analyze_signal(&clean_imt(10.0), &fast_config()).unwrap();
        assert!(a.sps.aligned);
        assert!((a.sps.energy() - 1.0).abs() < 1e-9);
        assert!((a.ridge.mean_hz - 1.2).abs() < 0.02);
        assert!(a.flags.interpolated_frames.is_empty());
        assert_eq!(a.frames_used + a.flags.boundary_frames_excluded, 500);
        assert!(a.condition_number < 1e3);
    }

    #[test]
    fn classify_stage() {
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for i in 0..12 {
            let c = i % 2 == 1;
            let jitter = 0.01 * f64::from(i);
            features.push(vec![
                if c { 1.0 } else { 0.0 } + jitter,
                0.5 - jitter,
                0.2 * jitter,
            ]);
            labels.push(c);
        }
        let data = SpsDataset {
            names: (0..12).map(|i| format!("s{i}")).collect(),
            features,
        };
        let r = run_classify(&fast_config(), &data, &labels).unwrap();
        assert_eq!(r.roc.auc, 1.0);
        assert_eq!(r.loocv_accuracy, 1.0);
        assert!(r.anova.as_ref().unwrap().p_value < 0.05);
        assert_eq!(r.model.training_meta.seed, 0);
        assert!(matches!(
            run_classify(&fast_config(), &data, &labels[1..]),
            Err(Error::DimensionMismatch { .. })
        ));
        assert_eq!(run_classify(&fast_config(), &data, &labels).unwrap(), r);
    }
}
