//! Gaussian-window STFT, reassignment frequency and synchrosqueezing.
//!
//! The STFT uses the kernel `V(t, η) = Σ_s f(s) h(t − s) e^{i2πη(t − s)} Δt`,
//! for which a tone `e^{i2πξs}` gives `∂_t V = i2πξ V` and the reassignment
//! frequency `ω = Re[−i ∂_t V / (2π V)]` equals `ξ`. The time derivative is
//! taken analytically: `∂_t V = V^{(h')} + i2πη V`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::SampledSignal;

/// Uniform frequency grid `f_min + k·step`, `k = 0..n_bins`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreqAxis {
    pub f_min: f64,
    pub step: f64,
    pub n_bins: usize,
}

impl FreqAxis {
    /// `n_bins` points spanning `[f_min, f_max]` inclusive.
    pub fn linspace(f_min: f64, f_max: f64, n_bins: usize) -> Result<Self> {
        if n_bins < 2 || !(f_max > f_min) || !f_min.is_finite() || !f_max.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "bad frequency grid [{f_min}, {f_max}] with {n_bins} bins"
            )));
        }
        Ok(Self {
            f_min,
            step: (f_max - f_min) / (n_bins - 1) as f64,
            n_bins,
        })
    }

    pub fn freq(&self, k: usize) -> f64 {
        self.f_min + k as f64 * self.step
    }

    pub fn f_max(&self) -> f64 {
        self.freq(self.n_bins - 1)
    }

    /// Bin whose centre is nearest to `f`, or `None` outside the grid.
    pub fn nearest_bin(&self, f: f64) -> Option<usize> {
        let k = ((f - self.f_min) / self.step).round();
        (k >= 0.0 && k < self.n_bins as f64).then_some(k as usize)
    }

    pub fn freqs(&self) -> Vec<f64> {
        (0..self.n_bins).map(|k| self.freq(k)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TfKind {
    Stft,
    Sst,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StftParams {
    /// Gaussian bandwidth σ in seconds.
    pub sigma: f64,
    /// Frame step in samples.
    pub hop: usize,
    pub n_bins: usize,
    /// Top of the frequency grid in Hz; the grid starts at 0.
    pub f_max: f64,
    /// Window support is `[−kσ, kσ]` with `k = half_width_sigmas`.
    pub half_width_sigmas: f64,
}

impl Default for StftParams {
    fn default() -> Self {
        Self {
            sigma: 0.5,
            hop: 1,
            n_bins: 512,
            f_max: 10.0,
            half_width_sigmas: 4.0,
        }
    }
}

impl StftParams {
    fn validate(&self, sample_rate: f64) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "sigma must be > 0, got {}",
                self.sigma
            )));
        }
        if self.hop == 0 {
            return Err(Error::InvalidArgument("hop must be >= 1".into()));
        }
        if self.n_bins < 2 {
            return Err(Error::InvalidArgument("n_bins must be >= 2".into()));
        }
        if !(self.half_width_sigmas > 0.0) {
            return Err(Error::InvalidArgument(
                "half_width_sigmas must be > 0".into(),
            ));
        }
        if !(self.f_max > 0.0) || self.f_max > 0.5 * sample_rate {
            return Err(Error::InvalidArgument(format!(
                "f_max {} must lie in (0, Nyquist = {}]",
                self.f_max,
                0.5 * sample_rate
            )));
        }
        Ok(())
    }

    pub fn freq_axis(&self) -> Result<FreqAxis> {
        FreqAxis::linspace(0.0, self.f_max, self.n_bins)
    }
}

/// Complex time-frequency matrix, row-major `n_frames × n_bins`.
#[derive(Debug, Clone, PartialEq)]
pub struct TfRepresentation {
    values: Vec<Complex64>,
    n_frames: usize,
    kind: TfKind,
    freq: FreqAxis,
    sample_rate: f64,
    hop: usize,
    window_sigma: f64,
    half_width_sigmas: f64,
    n_samples: usize,
}

impl TfRepresentation {
    /// Assembles a representation from raw parts (e.g. a loaded export).
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        values: Vec<Complex64>,
        n_frames: usize,
        kind: TfKind,
        freq: FreqAxis,
        sample_rate: f64,
        hop: usize,
        window_sigma: f64,
        half_width_sigmas: f64,
        n_samples: usize,
    ) -> Result<Self> {
        if values.len() != n_frames * freq.n_bins {
            return Err(Error::DimensionMismatch {
                expected: n_frames * freq.n_bins,
                got: values.len(),
            });
        }
        if hop == 0 || n_samples == 0 || n_frames != n_frames_for(n_samples, hop) {
            return Err(Error::GridMismatch(format!(
                "{n_frames} frames inconsistent with {n_samples} samples at hop {hop}"
            )));
        }
        if values
            .iter()
            .any(|v| !v.re.is_finite() || !v.im.is_finite())
        {
            return Err(Error::NonFinite("time-frequency values"));
        }
        Ok(Self {
            values,
            n_frames,
            kind,
            freq,
            sample_rate,
            hop,
            window_sigma,
            half_width_sigmas,
            n_samples,
        })
    }

    pub fn kind(&self) -> TfKind {
        self.kind
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_bins(&self) -> usize {
        self.freq.n_bins
    }

    pub fn freq_axis(&self) -> &FreqAxis {
        &self.freq
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn hop(&self) -> usize {
        self.hop
    }

    pub fn window_sigma(&self) -> f64 {
        self.window_sigma
    }

    pub fn half_width_sigmas(&self) -> f64 {
        self.half_width_sigmas
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    pub fn row(&self, m: usize) -> &[Complex64] {
        let nb = self.freq.n_bins;
        &self.values[m * nb..(m + 1) * nb]
    }

    pub fn get(&self, m: usize, k: usize) -> Complex64 {
        self.values[m * self.freq.n_bins + k]
    }

    pub fn frame_dt(&self) -> f64 {
        self.hop as f64 / self.sample_rate
    }

    pub fn frame_time(&self, m: usize) -> f64 {
        (m * self.hop) as f64 / self.sample_rate
    }

    pub fn frame_sample(&self, m: usize) -> usize {
        m * self.hop
    }

    pub fn time_axis(&self) -> Vec<f64> {
        (0..self.n_frames).map(|m| self.frame_time(m)).collect()
    }

    /// False for frames whose window reaches past either end of the signal.
    pub fn interior_mask(&self) -> Vec<bool> {
        let margin = self.half_width_sigmas * self.window_sigma;
        let end = (self.n_samples - 1) as f64 / self.sample_rate;
        (0..self.n_frames)
            .map(|m| {
                let t = self.frame_time(m);
                t >= margin - 1e-9 && t <= end - margin + 1e-9
            })
            .collect()
    }

    pub fn interior_frames(&self) -> Vec<usize> {
        self.interior_mask()
            .iter()
            .enumerate()
            .filter_map(|(m, &keep)| keep.then_some(m))
            .collect()
    }

    /// Replaces the values, keeping axes and metadata.
    pub fn with_values(&self, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::DimensionMismatch {
                expected: self.values.len(),
                got: values.len(),
            });
        }
        Ok(Self {
            values,
            ..self.clone()
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// `h(t) = (2πσ)^{−1/2} e^{−t²/σ²}` sampled on `[−kσ, kσ]` at `sample_rate`.
/// The result has odd length and `h(0)` at the centre.
pub fn gaussian_window(sigma: f64, sample_rate: f64, half_width_sigmas: f64) -> Vec<f64> {
    let half = (half_width_sigmas * sigma * sample_rate).floor() as i64;
    (-half..=half)
        .map(|j| window_value(sigma, j as f64 / sample_rate))
        .collect()
}

/// `h'(t) = −2t/σ² · h(t)`, on the same support as [`gaussian_window`].
pub fn gaussian_window_derivative(
    sigma: f64,
    sample_rate: f64,
    half_width_sigmas: f64,
) -> Vec<f64> {
    let half = (half_width_sigmas * sigma * sample_rate).floor() as i64;
    (-half..=half)
        .map(|j| {
            let t = j as f64 / sample_rate;
            -2.0 * t / (sigma * sigma) * window_value(sigma, t)
        })
        .collect()
}

/// `h(0)` of the analysis window.
pub fn window_peak(sigma: f64) -> f64 {
    window_value(sigma, 0.0)
}

fn window_value(sigma: f64, t: f64) -> f64 {
    (2.0 * PI * sigma).powf(-0.5) * (-(t * t) / (sigma * sigma)).exp()
}

pub(crate) fn n_frames_for(n_samples: usize, hop: usize) -> usize {
    (n_samples - 1) / hop + 1
}

/// Evaluates the STFT with window `h` and, when given, with `h'` in the same
/// pass.
fn transform(
    signal: &SampledSignal,
    params: &StftParams,
    with_derivative: bool,
) -> Result<(TfRepresentation, Option<Vec<Complex64>>)> {
    if signal.is_empty() {
        return Err(Error::EmptySignal);
    }
    let fs = signal.sample_rate();
    params.validate(fs)?;
    let freq = params.freq_axis()?;
    let h = gaussian_window(params.sigma, fs, params.half_width_sigmas);
    let dh = with_derivative
        .then(|| gaussian_window_derivative(params.sigma, fs, params.half_width_sigmas));
    let width = h.len();
    let half = (width / 2) as i64;
    let nb = freq.n_bins;

    // Kernel table e^{i2πη_k τ_j}, τ_j = j/fs, j = −half..=half.
    let mut cos_t = vec![0.0; nb * width];
    let mut sin_t = vec![0.0; nb * width];
    for k in 0..nb {
        let eta = freq.freq(k);
        for jj in 0..width {
            let tau = (jj as i64 - half) as f64 / fs;
            let (s, c) = (2.0 * PI * eta * tau).sin_cos();
            cos_t[k * width + jj] = c;
            sin_t[k * width + jj] = s;
        }
    }

    let x = signal.samples();
    let n = x.len();
    let frames = n_frames_for(n, params.hop);
    let dt = 1.0 / fs;
    let mut values = vec![Complex64::new(0.0, 0.0); frames * nb];
    let mut dvalues = with_derivative.then(|| vec![Complex64::new(0.0, 0.0); frames * nb]);

    // Windowed segments for one frame; `g2` is empty when no derivative is
    // requested.
    let segment = |m: usize, win: &[f64], g: &mut [f64]| {
        let centre = (m * params.hop) as i64;
        for (jj, gj) in g.iter_mut().enumerate() {
            let idx = centre - (jj as i64 - half);
            *gj = if idx >= 0 && (idx as usize) < n {
                x[idx as usize] * win[jj]
            } else {
                0.0
            };
        }
    };
    // Fixed 4-lane partial sums: vectorisable, and the summation order does
    // not depend on the thread count.
    let dot2 = |g: &[f64], c: &[f64], s: &[f64]| -> (f64, f64) {
        let mut re = [0.0; 4];
        let mut im = [0.0; 4];
        let (gc, gr) = g.split_at(g.len() - g.len() % 4);
        for ((gq, cq), sq) in gc
            .chunks_exact(4)
            .zip(c.chunks_exact(4))
            .zip(s.chunks_exact(4))
        {
            for l in 0..4 {
                re[l] += gq[l] * cq[l];
                im[l] += gq[l] * sq[l];
            }
        }
        let off = gc.len();
        let (mut r, mut i) = (
            (re[0] + re[1]) + (re[2] + re[3]),
            (im[0] + im[1]) + (im[2] + im[3]),
        );
        for (j, gv) in gr.iter().enumerate() {
            r += gv * c[off + j];
            i += gv * s[off + j];
        }
        (r, i)
    };
    let frame_into = |m: usize, out: &mut [Complex64], win: &[f64]| {
        let mut g = vec![0.0; width];
        segment(m, win, &mut g);
        for (k, o) in out.iter_mut().enumerate() {
            let (re, im) = dot2(
                &g,
                &cos_t[k * width..(k + 1) * width],
                &sin_t[k * width..(k + 1) * width],
            );
            *o = Complex64::new(re * dt, im * dt);
        }
    };

    values
        .par_chunks_mut(nb)
        .enumerate()
        .for_each(|(m, row)| frame_into(m, row, &h));
    if let (Some(dv), Some(dh)) = (dvalues.as_mut(), dh.as_ref()) {
        dv.par_chunks_mut(nb)
            .enumerate()
            .for_each(|(m, row)| frame_into(m, row, dh));
    }

    let tfr = TfRepresentation {
        values,
        n_frames: frames,
        kind: TfKind::Stft,
        freq,
        sample_rate: fs,
        hop: params.hop,
        window_sigma: params.sigma,
        half_width_sigmas: params.half_width_sigmas,
        n_samples: n,
    };
    Ok((tfr, dvalues))
}

/// Discrete Gaussian-window STFT on a uniform `[0, f_max]` grid.
pub fn stft(signal: &SampledSignal, params: &StftParams) -> Result<TfRepresentation> {
    transform(signal, params, false).map(|(t, _)| t)
}

/// Magnitude threshold below which the reassignment frequency is undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Threshold {
    Absolute(f64),
    /// Fraction of `max |V|` over the whole representation.
    Relative(f64),
}

impl Default for Threshold {
    fn default() -> Self {
        Threshold::Relative(1e-8)
    }
}

/// Reassignment frequency per STFT cell; `omega` is `−∞` where `valid` is
/// false.
#[derive(Debug, Clone, PartialEq)]
pub struct ReassignMap {
    omega: Vec<f64>,
    valid: Vec<bool>,
    n_frames: usize,
    n_bins: usize,
    gamma_thresh: f64,
}

impl ReassignMap {
    pub fn omega(&self, m: usize, k: usize) -> f64 {
        self.omega[m * self.n_bins + k]
    }

    pub fn is_valid(&self, m: usize, k: usize) -> bool {
        self.valid[m * self.n_bins + k]
    }

    pub fn n_frames(&self) -> usize {
        self.n_frames
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn gamma_thresh(&self) -> f64 {
        self.gamma_thresh
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// STFT together with its reassignment map, sharing one pass over the data.
pub fn stft_with_reassignment(
    signal: &SampledSignal,
    params: &StftParams,
    threshold: Threshold,
) -> Result<(TfRepresentation, ReassignMap)> {
    let (tfr, dvalues) = transform(signal, params, true)?;
    let dvalues = dvalues.expect("derivative requested");
    let gamma_thresh = match threshold {
        Threshold::Absolute(g) => g,
        Threshold::Relative(r) => r * tfr.max_abs(),
    };
    let nb = tfr.n_bins();
    let mut omega = vec![f64::NEG_INFINITY; tfr.values.len()];
    let mut valid = vec![false; tfr.values.len()];
    for (i, (v, dv)) in tfr.values.iter().zip(&dvalues).enumerate() {
        if v.norm() > gamma_thresh {
            let eta = tfr.freq.freq(i % nb);
            // Re[−i(V' + i2πηV)/(2πV)] = η + Im(V'/V)/(2π)
            let w = eta + (dv / v).im / (2.0 * PI);
            if w.is_finite() {
                omega[i] = w;
                valid[i] = true;
            }
        }
    }
    let rmap = ReassignMap {
        omega,
        valid,
        n_frames: tfr.n_frames,
        n_bins: nb,
        gamma_thresh,
    };
    Ok((tfr, rmap))
}

/// Reassignment frequency on the grid a matching [`stft`] call produces.
pub fn reassign_freq(
    signal: &SampledSignal,
    params: &StftParams,
    threshold: Threshold,
) -> Result<ReassignMap> {
    stft_with_reassignment(signal, params, threshold).map(|(_, r)| r)
}

/// How a reassigned coefficient is deposited on the frequency grid.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SqueezeRule {
    /// Whole coefficient to the bin nearest `ω`.
    Nearest,
    /// Split between the two bins bracketing `ω` in proportion to proximity,
    /// which keeps both the per-frame sum and the frequency centroid.
    #[default]
    Linear,
}

/// Synchrosqueezing with the default [`SqueezeRule`].
pub fn synchrosqueeze(stft_out: &TfRepresentation, rmap: &ReassignMap) -> Result<TfRepresentation> {
    synchrosqueeze_with(stft_out, rmap, SqueezeRule::default())
}

/// Moves every valid STFT coefficient to its reassignment frequency:
/// `S[m, j] = Σ_k g(ω[m,k] − ξ_j) V[m, k] Δη` with `g` the deposit kernel of
/// `rule`. Any part of a coefficient landing outside the grid is dropped.
pub fn synchrosqueeze_with(
    stft_out: &TfRepresentation,
    rmap: &ReassignMap,
    rule: SqueezeRule,
) -> Result<TfRepresentation> {
    if stft_out.kind != TfKind::Stft {
        return Err(Error::GridMismatch("input is not an STFT".into()));
    }
    if rmap.n_frames != stft_out.n_frames || rmap.n_bins != stft_out.n_bins() {
        return Err(Error::GridMismatch(format!(
            "STFT is {}x{}, reassignment map is {}x{}",
            stft_out.n_frames,
            stft_out.n_bins(),
            rmap.n_frames,
            rmap.n_bins
        )));
    }
    let nb = stft_out.n_bins();
    let freq = stft_out.freq;
    let mut values = vec![Complex64::new(0.0, 0.0); stft_out.values.len()];
    values.par_chunks_mut(nb).enumerate().for_each(|(m, row)| {
        for k in 0..nb {
            let i = m * nb + k;
            if !rmap.valid[i] {
                continue;
            }
            let v = stft_out.values[i] * freq.step;
            match rule {
                SqueezeRule::Nearest => {
                    if let Some(j) = freq.nearest_bin(rmap.omega[i]) {
                        row[j] += v;
                    }
                }
                SqueezeRule::Linear => {
                    let x = (rmap.omega[i] - freq.f_min) / freq.step;
                    if !(x > -1.0 && x < nb as f64) {
                        continue;
                    }
                    let lo = x.floor();
                    let w_hi = x - lo;
                    let lo = lo as i64;
                    if lo >= 0 {
                        row[lo as usize] += v * (1.0 - w_hi);
                    }
                    if lo + 1 < nb as i64 && w_hi > 0.0 {
                        row[(lo + 1) as usize] += v * w_hi;
                    }
                }
            }
        }
    });
    Ok(TfRepresentation {
        values,
        kind: TfKind::Sst,
        ..stft_out.clone()
    })
}

/// STFT followed by reassignment and squeezing; returns `(stft, sst)`.
pub fn stft_and_sst(
    signal: &SampledSignal,
    params: &StftParams,
    threshold: Threshold,
    rule: SqueezeRule,
) -> Result<(TfRepresentation, TfRepresentation)> {
    let (v, rmap) = stft_with_reassignment(signal, params, threshold)?;
    let s = synchrosqueeze_with(&v, &rmap, rule)?;
    Ok((v, s))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, secs: f64, fs: f64, amp: f64) -> SampledSignal {
        let n = (secs * fs) as usize;
        SampledSignal::new(
            (0..n)
                .map(|i| amp * (2.0 * PI * freq * i as f64 / fs).cos())
                .collect(),
            fs,
        )
        .unwrap()
    }

    fn small_params() -> StftParams {
        StftParams {
            n_bins: 201,
            hop: 5,
            ..StftParams::default()
        }
    }

    #[test]
    fn window_centre_and_symmetry() {
        let h = gaussian_window(0.5, 100.0, 4.0);
        assert_eq!(h.len() % 2, 1);
        let c = h.len() / 2;
        assert!((h[c] - (2.0 * PI * 0.5f64).powf(-0.5)).abs() < 1e-9);
        assert!((h[c] - 0.5642).abs() < 1e-4);
        for j in 1..=c {
            assert_eq!(h[c + j], h[c - j]);
        }
        let wide = gaussian_window(0.5, 100.0, 8.0);
        let cw = wide.len() / 2;
        for j in 0..=c {
            assert_eq!(wide[cw + j], h[c + j]);
        }
    }

    #[test]
    fn derivative_window_matches_finite_difference() {
        let fs = 1000.0;
        let h = gaussian_window(0.5, fs, 4.0);
        let dh = gaussian_window_derivative(0.5, fs, 4.0);
        for j in 1..h.len() - 1 {
            let fd = (h[j + 1] - h[j - 1]) * fs / 2.0;
            assert!((fd - dh[j]).abs() < 1e-5);
        }
    }

    #[test]
    fn tone_peaks_at_its_frequency() {
        let sig = tone(1.2, 10.0, 100.0, 1.0);
        let p = small_params();
        let v = stft(&sig, &p).unwrap();
        let want = v.freq_axis().nearest_bin(1.2).unwrap();
        for m in v.interior_frames() {
            let row = v.row(m);
            let arg = (0..row.len())
                .max_by(|a, b| row[*a].norm().total_cmp(&row[*b].norm()))
                .unwrap();
            assert_eq!(arg, want, "frame {m}");
        }
    }

    #[test]
    fn zero_signal_and_linearity() {
        let p = small_params();
        let zero = SampledSignal::new(vec![0.0; 500], 100.0).unwrap();
        let v = stft(&zero, &p).unwrap();
        assert!(v.values().iter().all(|c| c.norm() == 0.0));
        let rmap = reassign_freq(&zero, &p, Threshold::default()).unwrap();
        assert_eq!(rmap.valid_count(), 0);

        let f = tone(1.2, 5.0, 100.0, 1.0);
        let g = SampledSignal::new(
            (0..500)
                .map(|i| ((i * 7919) % 101) as f64 / 50.0 - 1.0)
                .collect(),
            100.0,
        )
        .unwrap();
        let sum = SampledSignal::new(
            f.samples()
                .iter()
                .zip(g.samples())
                .map(|(a, b)| a + b)
                .collect(),
            100.0,
        )
        .unwrap();
        let (vf, vg, vs) = (
            stft(&f, &p).unwrap(),
            stft(&g, &p).unwrap(),
            stft(&sum, &p).unwrap(),
        );
        let scale = vs.max_abs();
        for i in 0..vs.values().len() {
            let d = vs.values()[i] - vf.values()[i] - vg.values()[i];
            assert!(d.norm() <= 1e-10 * scale);
        }
    }

    #[test]
    fn frame_count() {
        let sig = SampledSignal::new(vec![1.0; 1001], 100.0).unwrap();
        for hop in [1, 3, 7, 1000, 5000] {
            let p = StftParams {
                hop,
                n_bins: 8,
                ..StftParams::default()
            };
            assert_eq!(stft(&sig, &p).unwrap().n_frames(), 1000 / hop + 1);
        }
    }

    #[test]
    fn reassignment_recovers_tone_frequency() {
        let sig = tone(1.2, 10.0, 100.0, 1.0);
        let p = small_params();
        let (v, rmap) = stft_with_reassignment(&sig, &p, Threshold::default()).unwrap();
        let centre = v.freq_axis().nearest_bin(1.2).unwrap();
        let step = v.freq_axis().step;
        for m in v.interior_frames() {
            for k in centre - 3..=centre + 3 {
                assert!(rmap.is_valid(m, k));
                assert!(
                    (rmap.omega(m, k) - 1.2).abs() < step,
                    "{}",
                    rmap.omega(m, k)
                );
            }
        }
    }

    #[test]
    fn reassignment_scale_invariant() {
        let sig = tone(1.2, 6.0, 100.0, 1.0);
        let p = small_params();
        let (v, a) = stft_with_reassignment(&sig, &p, Threshold::default()).unwrap();
        let max = v.max_abs();
        // ×10 perturbs every sample by one rounding; cells within a few decades of
        // the threshold amplify that through cancellation, so the 1e-9 check
        // covers cells at least 1e-6 below the peak.
        let b = reassign_freq(&sig.scaled(10.0).unwrap(), &p, Threshold::default()).unwrap();
        let mut checked = 0;
        for m in 0..a.n_frames() {
            for k in 0..a.n_bins() {
                if v.get(m, k).norm() >= 1e-6 * max {
                    assert!(b.is_valid(m, k));
                    assert!((a.omega(m, k) - b.omega(m, k)).abs() < 1e-9);
                    checked += 1;
                }
            }
        }
        assert!(checked > 1000);
        // A power-of-two scale is exact, so every valid cell agrees bit for bit.
        let c = reassign_freq(&sig.scaled(8.0).unwrap(), &p, Threshold::default()).unwrap();
        assert_eq!(a.valid, c.valid);
        assert_eq!(a.omega, c.omega);
    }

    #[test]
    fn sst_concentrates_tone() {
        let sig = tone(1.2, 10.0, 100.0, 1.0);
        let p = small_params();
        let (v, rmap) = stft_with_reassignment(&sig, &p, Threshold::default()).unwrap();
        let s = synchrosqueeze(&v, &rmap).unwrap();
        assert_eq!(s.kind(), TfKind::Sst);
        let c = s.freq_axis().nearest_bin(1.2).unwrap();
        for m in s.interior_frames() {
            let row = s.row(m);
            let total: f64 = row.iter().map(|z| z.norm_sqr()).sum();
            let near: f64 = row[c - 2..=c + 2].iter().map(|z| z.norm_sqr()).sum();
            assert!(near >= 0.95 * total);
        }
    }

    /// Share of a coefficient at `omega` that stays on the grid, from the
    /// deposit kernel written out directly.
    fn kept_weight(axis: &FreqAxis, omega: f64, rule: SqueezeRule) -> f64 {
        match rule {
            SqueezeRule::Nearest => (0..axis.n_bins)
                .filter(|&j| (omega - axis.freq(j)).abs() < 0.5 * axis.step)
                .count() as f64,
            SqueezeRule::Linear => (0..axis.n_bins)
                .map(|j| (1.0 - ((omega - axis.freq(j)) / axis.step).abs()).max(0.0))
                .sum(),
        }
    }

    #[test]
    fn sst_linear_and_preserves_marginal() {
        let sig = tone(1.7, 6.0, 100.0, 1.3);
        let p = small_params();
        let (v, rmap) = stft_with_reassignment(&sig, &p, Threshold::default()).unwrap();
        for rule in [SqueezeRule::Nearest, SqueezeRule::Linear] {
            let s = synchrosqueeze_with(&v, &rmap, rule).unwrap();
            let c = Complex64::new(-2.0, 0.5);
            let scaled = v
                .with_values(v.values().iter().map(|z| z * c).collect())
                .unwrap();
            let s2 = synchrosqueeze_with(&scaled, &rmap, rule).unwrap();
            for (a, b) in s.values().iter().zip(s2.values()) {
                assert!((a * c - b).norm() < 1e-12 * (1.0 + b.norm()));
            }
            let axis = *v.freq_axis();
            for m in 0..v.n_frames() {
                let kept: Complex64 = (0..v.n_bins())
                    .filter(|&k| rmap.is_valid(m, k))
                    .map(|k| v.get(m, k) * axis.step * kept_weight(&axis, rmap.omega(m, k), rule))
                    .sum();
                let total: Complex64 = s.row(m).iter().sum();
                assert!((kept - total).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn linear_deposit_keeps_centroid() {
        let sig = tone(1.234, 6.0, 100.0, 1.0);
        let p = small_params();
        let (v, rmap) = stft_with_reassignment(&sig, &p, Threshold::default()).unwrap();
        let s = synchrosqueeze(&v, &rmap).unwrap();
        let axis = *v.freq_axis();
        for m in v.interior_frames() {
            let mut num = Complex64::new(0.0, 0.0);
            let mut want = Complex64::new(0.0, 0.0);
            for k in 0..v.n_bins() {
                num += s.get(m, k) * axis.freq(k);
                let w = rmap.omega(m, k);
                if rmap.is_valid(m, k) && w > 0.0 && w < axis.f_max() {
                    want += v.get(m, k) * axis.step * w;
                }
            }
            assert!((num - want).norm() < 1e-9);
        }
    }

    #[test]
    fn sst_frame_locality() {
        let sig = tone(1.2, 4.0, 100.0, 1.0);
        let p = small_params();
        let (v, rmap) = stft_with_reassignment(&sig, &p, Threshold::default()).unwrap();
        let s = synchrosqueeze(&v, &rmap).unwrap();
        let mut vals = v.values().to_vec();
        let m0 = 20;
        for k in 0..v.n_bins() {
            vals[m0 * v.n_bins() + k] *= 3.0;
        }
        let s2 = synchrosqueeze(&v.with_values(vals).unwrap(), &rmap).unwrap();
        for m in 0..s.n_frames() {
            let same = s.row(m) == s2.row(m);
            assert_eq!(same, m != m0, "frame {m}");
        }
    }

    #[test]
    fn grid_mismatch() {
        let p = small_params();
        let a = tone(1.2, 4.0, 100.0, 1.0);
        let b = tone(1.2, 5.0, 100.0, 1.0);
        let (va, _) = stft_with_reassignment(&a, &p, Threshold::default()).unwrap();
        let (vb, rb) = stft_with_reassignment(&b, &p, Threshold::default()).unwrap();
        assert!(matches!(
            synchrosqueeze(&va, &rb),
            Err(Error::GridMismatch(_))
        ));
        let sst = synchrosqueeze(&vb, &rb).unwrap();
        assert!(matches!(
            synchrosqueeze(&sst, &rb),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn bad_params() {
        let sig = tone(1.2, 2.0, 100.0, 1.0);
        let mut p = small_params();
        p.f_max = 80.0;
        assert!(stft(&sig, &p).is_err());
        p = small_params();
        p.hop = 0;
        assert!(stft(&sig, &p).is_err());
        p = small_params();
        p.n_bins = 1;
        assert!(stft(&sig, &p).is_err());
    }
}
