//! Adaptive non-harmonic model: wave-shape functions, IMT components,
//! noiseless synthesis and the ARMA(1,1) Student-t noise used for robustness
//! experiments.

use std::f64::consts::PI;
use std::ops::Range;

use rand_distr::{Distribution, StudentT};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Relative slack on the dominance bound so that shapes built with an exact
/// ratio of `delta` validate despite rounding.
const DOMINANCE_SLACK: f64 = 1e-12;
const ENERGY_TOL: f64 = 1e-9;

/// A uniformly sampled real waveform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledSignal {
    samples: Vec<f64>,
    sample_rate: f64,
    label: Option<String>,
}

impl SampledSignal {
    pub fn new(samples: Vec<f64>, sample_rate: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptySignal);
        }
        if samples.len() < 2 {
            return Err(Error::InvalidArgument(
                "a sampled signal needs at least 2 samples".into(),
            ));
        }
        if !(sample_rate.is_finite() && sample_rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("signal samples"));
        }
        Ok(Self {
            samples,
            sample_rate,
            label: None,
        })
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }

    /// Time of the last sample, in seconds from the first.
    pub fn duration(&self) -> f64 {
        (self.samples.len() - 1) as f64 / self.sample_rate
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        let samples = self.samples.iter().map(|v| v * factor).collect();
        let mut out = Self::new(samples, self.sample_rate)?;
        out.label = self.label.clone();
        Ok(out)
    }
}

/// A 1-periodic wave-shape function stored as truncated real Fourier
/// coefficients `s(t) = α0 + Σ_ℓ [αℓ cos(2πℓt) + βℓ sin(2πℓt)]`.
///
/// Complex coefficients follow `ŝ(ℓ) = aℓ e^{iθℓ}` with `αℓ = 2aℓ cos θℓ` and
/// `βℓ = −2aℓ sin θℓ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveShape {
    alpha: Vec<f64>,
    beta: Vec<f64>,
    delta: f64,
    theta_tail: f64,
}

impl WaveShape {
    /// Validates (and optionally rescales to unit energy) a set of Fourier
    /// coefficients. `alpha` holds α0..αD and `beta` holds β1..βD.
    pub fn new(alpha: Vec<f64>, beta: Vec<f64>, delta: f64, normalize: bool) -> Result<Self> {
        if alpha.len() < 2 || beta.len() + 1 != alpha.len() {
            return Err(Error::InvalidArgument(format!(
                "expected len(alpha) = len(beta) + 1 >= 2, got {} and {}",
                alpha.len(),
                beta.len()
            )));
        }
        if alpha.iter().chain(&beta).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("wave-shape coefficients"));
        }
        if !(delta.is_finite() && delta >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "delta must be >= 0, got {delta}"
            )));
        }
        let mut shape = Self {
            alpha,
            beta,
            delta,
            theta_tail: 0.0,
        };
        let a1 = shape.harmonic_amplitude(1);
        if a1 == 0.0 {
            return Err(Error::ZeroFundamental);
        }
        for l in 2..=shape.cap_d() {
            let ratio = shape.harmonic_amplitude(l) / a1;
            if ratio > delta * (1.0 + DOMINANCE_SLACK) {
                return Err(Error::DominanceViolation {
                    harmonic: l,
                    ratio,
                    delta,
                });
            }
        }
        let energy = shape.energy();
        if normalize {
            let k = energy.sqrt().recip();
            shape.alpha.iter_mut().for_each(|v| *v *= k);
            shape.beta.iter_mut().for_each(|v| *v *= k);
        } else if (energy - 1.0).abs() > ENERGY_TOL {
            return Err(Error::InvalidArgument(format!(
                "coefficients are not unit energy (energy = {energy})"
            )));
        }
        Ok(shape)
    }

    /// Builds a shape from `α0`, harmonic magnitudes `a1..aD` and phases
    /// `θ1..θD` (radians).
    pub fn from_polar(
        alpha0: f64,
        amplitudes: &[f64],
        phases: &[f64],
        delta: f64,
        normalize: bool,
    ) -> Result<Self> {
        if amplitudes.len() != phases.len() {
            return Err(Error::DimensionMismatch {
                expected: amplitudes.len(),
                got: phases.len(),
            });
        }
        let mut alpha = vec![alpha0];
        alpha.extend(
            amplitudes
                .iter()
                .zip(phases)
                .map(|(a, t)| 2.0 * a * t.cos()),
        );
        let beta = amplitudes
            .iter()
            .zip(phases)
            .map(|(a, t)| -2.0 * a * t.sin())
            .collect();
        Self::new(alpha, beta, delta, normalize)
    }

    /// Pulse-like shape with D = 5 and δ = 0.59: a sharp systolic peak
    /// followed by a smaller secondary wave.
    pub fn pulse_example() -> Self {
        let amps = [1.0, 0.59, 0.35, 0.18, 0.08].map(|r| 0.5 * r);
        let phases = [0.0, -0.6, -1.2, -1.8, -2.4];
        Self::from_polar(0.3, &amps, &phases, 0.59, true).expect("example shape is admissible")
    }

    /// Unit-energy `√2 cos(2πt)`.
    pub fn pure_cosine() -> Self {
        Self::new(vec![0.0, 2f64.sqrt()], vec![0.0], 0.0, false).expect("admissible")
    }

    pub fn cap_d(&self) -> usize {
        self.beta.len()
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn theta_tail(&self) -> f64 {
        self.theta_tail
    }

    /// `α0² + Σ (αℓ² + βℓ²)/2`, the squared L² norm over one period.
    pub fn energy(&self) -> f64 {
        self.alpha[0].powi(2)
            + (1..=self.cap_d())
                .map(|l| 0.5 * (self.alpha[l].powi(2) + self.beta[l - 1].powi(2)))
                .sum::<f64>()
    }

    /// `aℓ = |ŝ(ℓ)|`; `a0 = |α0|`.
    pub fn harmonic_amplitude(&self, l: usize) -> f64 {
        match l {
            0 => self.alpha[0].abs(),
            l if l <= self.cap_d() => 0.5 * self.alpha[l].hypot(self.beta[l - 1]),
            _ => 0.0,
        }
    }

    /// `|ŝ(ℓ)|² = (αℓ² + βℓ²)/4`.
    pub fn harmonic_power(&self, l: usize) -> f64 {
        self.harmonic_amplitude(l).powi(2)
    }

    /// `θℓ ∈ [0, 2π)`.
    pub fn harmonic_phase(&self, l: usize) -> f64 {
        assert!(l >= 1 && l <= self.cap_d(), "harmonic index out of range");
        (-self.beta[l - 1])
            .atan2(self.alpha[l])
            .rem_euclid(2.0 * PI)
    }

    /// Largest `aℓ / a1` over ℓ ≥ 2.
    pub fn dominance_ratio(&self) -> f64 {
        let a1 = self.harmonic_amplitude(1);
        (2..=self.cap_d())
            .map(|l| self.harmonic_amplitude(l) / a1)
            .fold(0.0, f64::max)
    }

    /// Coefficient vector in SPS order `[α0, α1..αD, β1..βD]`.
    pub fn to_gamma(&self) -> Vec<f64> {
        let mut g = self.alpha.clone();
        g.extend_from_slice(&self.beta);
        g
    }

    /// Evaluates `s(t)`; `t` is reduced modulo 1 first.
    pub fn eval(&self, t: f64) -> f64 {
        let t = t.rem_euclid(1.0);
        let mut v = self.alpha[0];
        for l in 1..=self.cap_d() {
            let (s, c) = (2.0 * PI * l as f64 * t).sin_cos();
            v += self.alpha[l] * c + self.beta[l - 1] * s;
        }
        v
    }

    /// Same shape started at phase `offset` cycles: `t ↦ s(t + offset)`.
    pub fn shifted(&self, offset: f64) -> Self {
        let mut out = self.clone();
        for l in 1..=self.cap_d() {
            let (s, c) = (2.0 * PI * l as f64 * offset).sin_cos();
            let (a, b) = (self.alpha[l], self.beta[l - 1]);
            out.alpha[l] = a * c + b * s;
            out.beta[l - 1] = b * c - a * s;
        }
        out
    }
}

/// Discretised amplitude, phase (cycles) and instantaneous frequency (Hz).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImtComponent {
    amp: Vec<f64>,
    phase: Vec<f64>,
    inst_freq: Vec<f64>,
    eps: f64,
    sample_rate: f64,
}

impl ImtComponent {
    pub const DEFAULT_EPS: f64 = 0.05;

    pub fn new(
        amp: Vec<f64>,
        phase: Vec<f64>,
        inst_freq: Vec<f64>,
        eps: f64,
        sample_rate: f64,
    ) -> Result<Self> {
        let n = amp.len();
        if n < 2 {
            return Err(Error::InvalidArgument(
                "IMT component needs >= 2 samples".into(),
            ));
        }
        for len in [phase.len(), inst_freq.len()] {
            if len != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: len,
                });
            }
        }
        if amp
            .iter()
            .chain(&phase)
            .chain(&inst_freq)
            .any(|v| !v.is_finite())
        {
            return Err(Error::NonFinite("IMT component"));
        }
        if amp.iter().any(|&a| a <= 0.0) {
            return Err(Error::InvalidArgument("amplitude must be positive".into()));
        }
        if inst_freq.iter().any(|&f| f <= 0.0) {
            return Err(Error::InvalidArgument(
                "instantaneous frequency must be positive".into(),
            ));
        }
        if phase.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument(
                "phase must be strictly increasing".into(),
            ));
        }
        if !(eps > 0.0 && sample_rate > 0.0) {
            return Err(Error::InvalidArgument(
                "eps and sample rate must be positive".into(),
            ));
        }
        Ok(Self {
            amp,
            phase,
            inst_freq,
            eps,
            sample_rate,
        })
    }

    /// Samples closed-form tracks at `t_n = n / fs`, `n = 0..n`.
    pub fn from_fns(
        n: usize,
        sample_rate: f64,
        eps: f64,
        amp: impl Fn(f64) -> f64,
        phase: impl Fn(f64) -> f64,
        inst_freq: impl Fn(f64) -> f64,
    ) -> Result<Self> {
        let t = |i: usize| i as f64 / sample_rate;
        Self::new(
            (0..n).map(|i| amp(t(i))).collect(),
            (0..n).map(|i| phase(t(i))).collect(),
            (0..n).map(|i| inst_freq(t(i))).collect(),
            eps,
            sample_rate,
        )
    }

    /// Builds the phase by trapezoidal integration of `inst_freq`, starting at
    /// `phase0` cycles.
    pub fn from_inst_freq(
        amp: Vec<f64>,
        inst_freq: Vec<f64>,
        phase0: f64,
        eps: f64,
        sample_rate: f64,
    ) -> Result<Self> {
        let dt = 1.0 / sample_rate;
        let mut phase = Vec::with_capacity(inst_freq.len());
        let mut acc = phase0;
        for (i, f) in inst_freq.iter().enumerate() {
            if i > 0 {
                acc += 0.5 * dt * (inst_freq[i - 1] + f);
            }
            phase.push(acc);
        }
        Self::new(amp, phase, inst_freq, eps, sample_rate)
    }

    pub fn amp(&self) -> &[f64] {
        &self.amp
    }

    pub fn phase(&self) -> &[f64] {
        &self.phase
    }

    pub fn inst_freq(&self) -> &[f64] {
        &self.inst_freq
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.amp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amp.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub max_am_ratio: f64,
    pub max_if_ratio: f64,
    pub pass: bool,
}

/// Forward-difference check of `|A'| ≤ εφ'` and `|φ''| ≤ εφ'`.
pub fn check_imt_regularity(comp: &ImtComponent) -> RegularityReport {
    let fs = comp.sample_rate;
    let mut max_am: f64 = 0.0;
    let mut max_if: f64 = 0.0;
    for n in 0..comp.len() - 1 {
        let f = comp.inst_freq[n];
        max_am = max_am.max((comp.amp[n + 1] - comp.amp[n]).abs() * fs / f);
        max_if = max_if.max((comp.inst_freq[n + 1] - comp.inst_freq[n]).abs() * fs / f);
    }
    RegularityReport {
        max_am_ratio: max_am,
        max_if_ratio: max_if,
        pass: max_am <= comp.eps && max_if <= comp.eps,
    }
}

/// Noiseless IMT realisation `A[n] · s(φ[n])`.
pub fn synthesize_imt(shape: &WaveShape, comp: &ImtComponent) -> Result<SampledSignal> {
    let nyquist = 0.5 * comp.sample_rate;
    let top = comp.inst_freq.iter().copied().fold(0.0, f64::max) * shape.cap_d() as f64;
    if top >= nyquist {
        return Err(Error::AliasingRisk {
            freq_hz: top,
            nyquist_hz: nyquist,
        });
    }
    let samples = comp
        .amp
        .iter()
        .zip(&comp.phase)
        .map(|(a, p)| a * shape.eval(*p))
        .collect();
    SampledSignal::new(samples, comp.sample_rate)
}

/// Samples discarded before the returned ARMA stream starts.
pub const ARMA_BURN_IN: usize = 200;

/// ARMA(1,1) noise with i.i.d. Student-t innovations.
///
/// With lag polynomials `a(z) = ar_coeff·z + 1` and `b(z) = ma_coeff·z + 1`
/// and `a(B)x = b(B)w`, the recursion is
/// `x[t] = −ar_coeff·x[t−1] + w[t] + ma_coeff·w[t−1]`.
pub fn gen_arma_t_noise(
    n: usize,
    seed: u64,
    dof: f64,
    ar_coeff: f64,
    ma_coeff: f64,
) -> Result<Vec<f64>> {
    if !(dof > 2.0) {
        return Err(Error::BadDof(dof));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("noise length must be >= 1".into()));
    }
    let dist = StudentT::new(dof).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut rng = seed::rng(seed);
    let mut out = Vec::with_capacity(n);
    let (mut x_prev, mut w_prev) = (0.0, 0.0);
    for i in 0..n + ARMA_BURN_IN {
        let w: f64 = dist.sample(&mut rng);
        let x = -ar_coeff * x_prev + w + ma_coeff * w_prev;
        if i >= ARMA_BURN_IN {
            out.push(x);
        }
        x_prev = x;
        w_prev = w;
    }
    Ok(out)
}

pub(crate) fn std_dev(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Adds `noise`, rescaled to the requested SNR (`20·log10(std(signal)/std(noise))`,
/// both measured over `interval`), to the samples in `interval`.
///
/// `snr_db = +∞` leaves the signal untouched.
pub fn mix_at_snr(
    signal: &SampledSignal,
    noise: &[f64],
    snr_db: f64,
    interval: Range<usize>,
) -> Result<SampledSignal> {
    if snr_db == f64::INFINITY {
        return Ok(signal.clone());
    }
    if snr_db.is_nan() {
        return Err(Error::NonFinite("snr_db"));
    }
    if interval.start >= interval.end || interval.end > signal.len() {
        return Err(Error::InvalidArgument(format!(
            "interval {interval:?} outside signal of length {}",
            signal.len()
        )));
    }
    if noise.len() != interval.len() {
        return Err(Error::DimensionMismatch {
            expected: interval.len(),
            got: noise.len(),
        });
    }
    let sig_std = std_dev(&signal.samples[interval.clone()]);
    if sig_std == 0.0 {
        return Err(Error::ZeroVariance("signal"));
    }
    let noise_std = std_dev(noise);
    if noise_std == 0.0 {
        return Err(Error::ZeroVariance("noise"));
    }
    let scale = sig_std / (noise_std * 10f64.powf(snr_db / 20.0));
    let mut samples = signal.samples.clone();
    for (s, w) in samples[interval].iter_mut().zip(noise) {
        *s += scale * w;
    }
    let mut out = SampledSignal::new(samples, signal.sample_rate)?;
    out.label = signal.label.clone();
    Ok(out)
}
