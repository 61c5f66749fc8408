//! Component reconstruction from the SST around an IF track.

use std::f64::consts::PI;
use std::ops::Range;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tf::{self, TfKind, TfRepresentation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveredComponent {
    pub time_s: Vec<f64>,
    pub complex_track: Vec<Complex64>,
    pub amp: Vec<f64>,
    /// Unwrapped phase in cycles.
    pub phase: Vec<f64>,
    /// Derivative of `phase`, in Hz.
    pub inst_freq: Vec<f64>,
    /// Frames with no usable SST mass, filled by interpolation.
    pub interpolated: Vec<bool>,
    pub frame_dt: f64,
}

impl RecoveredComponent {
    pub fn len(&self) -> usize {
        self.amp.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amp.is_empty()
    }

    pub fn interpolated_count(&self) -> usize {
        self.interpolated.iter().filter(|f| **f).count()
    }

    /// Sub-range of frames.
    pub fn slice(&self, range: Range<usize>) -> Self {
        Self {
            time_s: self.time_s[range.clone()].to_vec(),
            complex_track: self.complex_track[range.clone()].to_vec(),
            amp: self.amp[range.clone()].to_vec(),
            phase: self.phase[range.clone()].to_vec(),
            inst_freq: self.inst_freq[range.clone()].to_vec(),
            interpolated: self.interpolated[range].to_vec(),
            frame_dt: self.frame_dt,
        }
    }
}

/// Maps a phase increment (cycles) into `(−0.5, 0.5]`.
fn wrap_step(d: f64) -> f64 {
    d - (d - 0.5).ceil()
}

/// Linear fill of `values` at frames where `keep` is false; ends copy the
/// nearest kept value.
fn fill_gaps(values: &mut [f64], keep: &[bool]) {
    let kept: Vec<usize> = (0..values.len()).filter(|&i| keep[i]).collect();
    let (Some(&first), Some(&last)) = (kept.first(), kept.last()) else {
        return;
    };
    for i in 0..first {
        values[i] = values[first];
    }
    for i in last + 1..values.len() {
        values[i] = values[last];
    }
    for w in kept.windows(2) {
        let (a, b) = (w[0], w[1]);
        for i in a + 1..b {
            let t = (i - a) as f64 / (b - a) as f64;
            values[i] = values[a] + t * (values[b] - values[a]);
        }
    }
}

/// `R̃[m] = 2 h(0)^{-1} Σ_{|ξ_j − if[m]| ≤ band} S[m, j]`, then
/// `Ã = |R̃|` and `φ̃ = unwrap(arg R̃) / 2π`.
///
/// `S` already carries the `Δη` quadrature weight from squeezing, so the sum
/// is the band integral. The factor 2 restores the amplitude of a real
/// oscillation from its positive-frequency half: `A cos(2πφ)` yields `Ã ≈ A`.
pub fn reconstruct(
    sst: &TfRepresentation,
    if_track: &[f64],
    band_hz: f64,
) -> Result<RecoveredComponent> {
    if sst.kind() != TfKind::Sst {
        return Err(Error::GridMismatch("reconstruction expects an SST".into()));
    }
    if if_track.len() != sst.n_frames() {
        return Err(Error::DimensionMismatch {
            expected: sst.n_frames(),
            got: if_track.len(),
        });
    }
    if !(band_hz > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "band must be > 0, got {band_hz}"
        )));
    }
    let axis = *sst.freq_axis();
    let scale = 2.0 / tf::window_peak(sst.window_sigma());
    let tol = 1e-9 * axis.step;
    let n = sst.n_frames();

    let mut track = vec![Complex64::new(0.0, 0.0); n];
    let mut ok = vec![false; n];
    for m in 0..n {
        let centre = if_track[m];
        if !centre.is_finite() {
            continue;
        }
        let row = sst.row(m);
        let mut acc = Complex64::new(0.0, 0.0);
        let mut any = false;
        for (j, v) in row.iter().enumerate() {
            if (axis.freq(j) - centre).abs() <= band_hz + tol {
                acc += v;
                any = true;
            }
        }
        let r = acc * scale;
        if any && r.norm() > 0.0 {
            track[m] = r;
            ok[m] = true;
        }
    }
    if !ok.iter().any(|v| *v) {
        return Err(Error::EmptyBand);
    }
    if ok.iter().any(|v| !v) {
        log::warn!(
            "{} frame(s) without SST mass in the reconstruction band; interpolating",
            ok.iter().filter(|v| !**v).count()
        );
    }

    let mut amp: Vec<f64> = track.iter().map(|z| z.norm()).collect();
    let mut phase = vec![0.0; n];
    let mut prev: Option<(f64, f64)> = None;
    for m in (0..n).filter(|&m| ok[m]) {
        let raw = track[m].arg() / (2.0 * PI);
        phase[m] = match prev {
            None => raw,
            Some((prev_raw, prev_unwrapped)) => prev_unwrapped + wrap_step(raw - prev_raw),
        };
        prev = Some((raw, phase[m]));
    }
    fill_gaps(&mut amp, &ok);
    fill_gaps(&mut phase, &ok);

    let anchor = sst.interior_frames().first().copied().unwrap_or(0);
    let shift = phase[anchor].floor();
    phase.iter_mut().for_each(|p| *p -= shift);

    for m in (0..n).filter(|&m| !ok[m]) {
        track[m] = Complex64::from_polar(amp[m], 2.0 * PI * phase[m]);
    }
    let frame_dt = sst.frame_dt();
    Ok(RecoveredComponent {
        time_s: sst.time_axis(),
        inst_freq: differentiate_phase(&phase, frame_dt),
        complex_track: track,
        amp,
        phase,
        interpolated: ok.iter().map(|v| !v).collect(),
        frame_dt,
    })
}

/// Central differences inside, one-sided differences at both ends.
pub fn differentiate_phase(phase: &[f64], frame_dt: f64) -> Vec<f64> {
    let n = phase.len();
    match n {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..n)
            .map(|i| {
                if i == 0 {
                    (phase[1] - phase[0]) / frame_dt
                } else if i == n - 1 {
                    (phase[n - 1] - phase[n - 2]) / frame_dt
                } else {
                    (phase[i + 1] - phase[i - 1]) / (2.0 * frame_dt)
                }
            })
            .collect(),
    }
}

/// Mean of the linear interpolant of `values` over one local period
/// `[t − T/2, t + T/2]`, `T = 1 / inst_freq`, clipped to the record.
///
/// The window length follows the oscillation, so ripple at the local
/// frequency and its multiples averages out.
pub fn cycle_average(values: &[f64], inst_freq: &[f64], frame_dt: f64) -> Vec<f64> {
    let n = values.len();
    if n < 2 {
        return values.to_vec();
    }
    let mut cum = vec![0.0; n];
    for i in 1..n {
        cum[i] = cum[i - 1] + 0.5 * (values[i - 1] + values[i]);
    }
    let last = (n - 1) as f64;
    // ∫_0^u of the interpolant, u in frame units.
    let integral = |u: f64| {
        let u = u.clamp(0.0, last);
        let i = (u.floor() as usize).min(n - 2);
        let f = u - i as f64;
        cum[i] + f * values[i] + 0.5 * f * f * (values[i + 1] - values[i])
    };
    (0..n)
        .map(|m| {
            let f = inst_freq[m];
            if !(f > 0.0 && f.is_finite()) {
                return values[m];
            }
            let h = 0.5 / (f * frame_dt);
            let a = (m as f64 - h).max(0.0);
            let b = (m as f64 + h).min(last);
            if b > a {
                (integral(b) - integral(a)) / (b - a)
            } else {
                values[m]
            }
        })
        .collect()
}

/// Twicing `2B − B∘B` of [`cycle_average`]: keeps its zeros at the local
/// frequency and removes the bias `B` adds to curved (quadratic) tracks.
pub fn cycle_smooth(values: &[f64], inst_freq: &[f64], frame_dt: f64) -> Vec<f64> {
    let b = cycle_average(values, inst_freq, frame_dt);
    let bb = cycle_average(&b, inst_freq, frame_dt);
    b.iter().zip(&bb).map(|(u, v)| 2.0 * u - v).collect()
}

/// Centred moving average over `2·half + 1` frames, shortened at the ends.
fn box_average(values: &[f64], half: usize) -> Vec<f64> {
    let n = values.len();
    let mut cum = vec![0.0; n + 1];
    for (i, v) in values.iter().enumerate() {
        cum[i + 1] = cum[i] + v;
    }
    (0..n)
        .map(|i| {
            let (a, b) = (i.saturating_sub(half), (i + half + 1).min(n));
            (cum[b] - cum[a]) / (b - a) as f64
        })
        .collect()
}

/// Removes within-cycle ripple from `Ã` and `φ̃`.
///
/// Neighbouring harmonics and the mean level leak into the band around the
/// ridge and beat against the fundamental, so `Ã` and `φ̃` ripple at the
/// oscillation rate. The model requires both to vary slowly relative to the
/// oscillation, so the ripple is removed with [`cycle_smooth`].
///
/// The local period comes from `if_track` after two passes of a one-period
/// box average. A ridge that hops between bins would otherwise change the
/// window length from frame to frame, and the differentiated phase turns
/// those steps into IF spikes. `inst_freq` is recomputed from the smoothed
/// phase; `complex_track` keeps the unsmoothed `R̃`.
pub fn smooth_component(comp: &RecoveredComponent, if_track: &[f64]) -> Result<RecoveredComponent> {
    if if_track.len() != comp.len() {
        return Err(Error::DimensionMismatch {
            expected: comp.len(),
            got: if_track.len(),
        });
    }
    let mut sorted: Vec<f64> = if_track
        .iter()
        .copied()
        .filter(|f| *f > 0.0 && f.is_finite())
        .collect();
    if sorted.is_empty() {
        return Err(Error::InvalidArgument(
            "IF track has no positive values".into(),
        ));
    }
    sorted.sort_by(f64::total_cmp);
    let typical = sorted[sorted.len() / 2];
    let half = ((0.5 / (typical * comp.frame_dt)).round() as usize).max(1);
    let driver = box_average(&box_average(if_track, half), half);
    let amp = cycle_smooth(&comp.amp, &driver, comp.frame_dt);
    let phase = cycle_smooth(&comp.phase, &driver, comp.frame_dt);
    Ok(RecoveredComponent {
        inst_freq: differentiate_phase(&phase, comp.frame_dt),
        amp,
        phase,
        ..comp.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SampledSignal;
    use crate::ridge;
    use crate::tf::{SqueezeRule, StftParams, Threshold};

    fn params() -> StftParams {
        StftParams {
            n_bins: 256,
            hop: 2,
            ..StftParams::default()
        }
    }

    fn sst_of(x: Vec<f64>) -> TfRepresentation {
        let sig = SampledSignal::new(x, 100.0).unwrap();
        tf::stft_and_sst(
            &sig,
            &params(),
            Threshold::default(),
            SqueezeRule::default(),
        )
        .unwrap()
        .1
    }

    fn ridge_if(sst: &TfRepresentation) -> Vec<f64> {
        let r = ridge::extract_ridge(sst, 1.0, Some((0.5, 3.0))).unwrap();
        ridge::ridge_to_if(&r, true)
    }

    fn cosine(amp: impl Fn(f64) -> f64, phase: impl Fn(f64) -> f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| {
                let t = i as f64 / 100.0;
                amp(t) * (2.0 * PI * phase(t)).cos()
            })
            .collect()
    }

    #[test]
    fn tone_amplitude_and_frequency() {
        let sst = sst_of(cosine(|_| 2.0, |t| 1.2 * t, 1000));
        let c = reconstruct(&sst, &ridge_if(&sst), 0.3).unwrap();
        assert_eq!(c.interpolated_count(), 0);
        for m in sst.interior_frames() {
            assert!((c.amp[m] - 2.0).abs() < 0.1, "amp {}", c.amp[m]);
            assert!((c.inst_freq[m] - 1.2).abs() < 0.03);
            assert_eq!(c.amp[m], c.complex_track[m].norm());
        }
        let first = sst.interior_frames()[0];
        assert!((0.0..1.0).contains(&c.phase[first]));
        let inner = sst.interior_frames();
        assert!(inner.windows(2).all(|w| c.phase[w[1]] > c.phase[w[0]]));
    }

    #[test]
    fn scaling_input_scales_amplitude_only() {
        let x = cosine(|_| 1.0, |t| 1.2 * t, 800);
        let sst = sst_of(x.clone());
        let iff = ridge_if(&sst);
        let a = reconstruct(&sst, &iff, 0.3).unwrap();
        let b = reconstruct(&sst_of(x.iter().map(|v| 3.0 * v).collect()), &iff, 0.3).unwrap();
        for m in 0..a.len() {
            assert!((b.amp[m] - 3.0 * a.amp[m]).abs() <= 1e-12 * b.amp[m]);
            assert!((b.phase[m] - a.phase[m]).abs() < 1e-9);
        }
    }

    #[test]
    fn amplitude_ramp_tracked() {
        let amp = |t: f64| 1.0 + 0.02 * t;
        let phase = |t: f64| 1.2 * t + 0.3;
        let sst = sst_of(cosine(amp, phase, 1001));
        let c = reconstruct(&sst, &ridge_if(&sst), 0.3).unwrap();
        for m in sst.interior_frames() {
            let a = amp(c.time_s[m]);
            assert!((c.amp[m] - a).abs() / a <= 0.05);
        }
    }

    #[test]
    fn rewrapped_phase_matches_argument() {
        let sst = sst_of(cosine(|_| 1.0, |t| 1.1 * t + 0.05 * (0.7 * t).sin(), 900));
        let c = reconstruct(&sst, &ridge_if(&sst), 0.3).unwrap();
        for m in 0..c.len() {
            let want = (c.complex_track[m].arg() / (2.0 * PI)).rem_euclid(1.0);
            let got = c.phase[m].rem_euclid(1.0);
            let d = (want - got).abs();
            assert!(d.min(1.0 - d) < 1e-9);
        }
    }

    #[test]
    fn wider_band_changes_little_once_support_is_covered() {
        let sst = sst_of(cosine(|_| 1.0, |t| 1.2 * t, 1000));
        let iff = ridge_if(&sst);
        let a = reconstruct(&sst, &iff, 0.3).unwrap();
        let b = reconstruct(&sst, &iff, 0.6).unwrap();
        for m in sst.interior_frames() {
            assert!((a.amp[m] - b.amp[m]).abs() / a.amp[m] < 0.01);
        }
    }

    #[test]
    fn empty_band_frames_are_interpolated() {
        let sst = sst_of(cosine(|_| 1.0, |t| 1.2 * t, 1000));
        let mut iff = ridge_if(&sst);
        iff[250] = 50.0;
        iff[251] = f64::NAN;
        let c = reconstruct(&sst, &iff, 0.3).unwrap();
        assert_eq!(c.interpolated_count(), 2);
        assert!(c.interpolated[250] && c.interpolated[251]);
        let expect = c.amp[249] + (c.amp[252] - c.amp[249]) / 3.0;
        assert!((c.amp[250] - expect).abs() < 1e-12);
        assert!(matches!(
            reconstruct(&sst, &vec![50.0; sst.n_frames()], 0.3),
            Err(Error::EmptyBand)
        ));
        assert!(reconstruct(&sst, &iff[1..], 0.3).is_err());
    }

    #[test]
    fn phase_derivative() {
        let dt = 0.01;
        let lin: Vec<f64> = (0..100).map(|i| 1.2 * i as f64 * dt).collect();
        assert!(differentiate_phase(&lin, dt)
            .iter()
            .all(|d| (d - 1.2).abs() < 1e-10));
        assert!(differentiate_phase(&[3.0; 10], dt)
            .iter()
            .all(|d| *d == 0.0));
        let quad: Vec<f64> = (0..=100).map(|i| (i as f64 * dt).powi(2)).collect();
        let d = differentiate_phase(&quad, dt);
        for i in 1..100 {
            // Central differences are exact for quadratics; the bound is the O(dt²) budget.
            assert!((d[i] - 2.0 * i as f64 * dt).abs() <= dt * dt);
        }
    }

    #[test]
    fn wrap_step_range() {
        for d in [-1.7, -0.5, -0.2, 0.0, 0.5, 0.51, 2.49] {
            let w = wrap_step(d);
            assert!(w > -0.5 && w <= 0.5, "{d} -> {w}");
            assert!(((d - w) - (d - w).round()).abs() < 1e-12);
        }
    }

    #[test]
    fn cycle_average_cancels_local_oscillation() {
        // IF 1.25 Hz at 100 frames/s: a period is exactly 80 frames.
        let dt = 0.01;
        let iff = vec![1.25; 600];
        let x: Vec<f64> = (0..600)
            .map(|i| (2.0 * PI * 1.25 * i as f64 * dt + 0.4).cos())
            .collect();
        let avg = cycle_average(&x, &iff, dt);
        for m in 40..560 {
            assert!(avg[m].abs() < 1e-12);
        }
        let c = cycle_average(&[3.5; 50], &[1.0; 50], 0.1);
        assert!(c.iter().all(|v| (v - 3.5).abs() < 1e-12));
    }

    #[test]
    fn twicing_is_exact_on_quadratics() {
        let dt = 0.01;
        let iff = vec![1.25; 600];
        let q = |i: usize| {
            let t = i as f64 * dt;
            0.2 + 1.2 * t + 0.04 * t * t
        };
        let x: Vec<f64> = (0..600).map(q).collect();
        // Plain averaging is biased by φ''T²/24 (plus a trapezoid term).
        let b = cycle_average(&x, &iff, dt);
        assert!((b[300] - q(300) - 0.08 * 0.64 / 24.0).abs() < 1e-5);
        let s = cycle_smooth(&x, &iff, dt);
        for m in 80..520 {
            assert!((s[m] - q(m)).abs() < 1e-12, "{m}: {}", s[m] - q(m));
        }
    }

    #[test]
    fn smoothing_removes_beat_ripple() {
        // Fundamental plus a strong second harmonic and offset: the raw
        // envelope beats, the smoothed one stays flat.
        let x = cosine(|_| 1.0, |t| 1.2 * t, 1000)
            .iter()
            .enumerate()
            .map(|(i, v)| v + 0.35 * (2.0 * PI * 2.4 * i as f64 / 100.0 - 0.7).cos() + 0.4)
            .collect();
        let sst = sst_of(x);
        let iff = ridge_if(&sst);
        let raw = reconstruct(&sst, &iff, 0.3).unwrap();
        let sm = smooth_component(&raw, &iff).unwrap();
        let spread = |v: &[f64]| {
            let inner: Vec<f64> = sst.interior_frames().iter().map(|&m| v[m]).collect();
            let mean = inner.iter().sum::<f64>() / inner.len() as f64;
            inner
                .iter()
                .map(|a| (a / mean - 1.0).abs())
                .fold(0.0, f64::max)
        };
        assert!(
            spread(&sm.amp) < 0.25 * spread(&raw.amp),
            "{} vs {}",
            spread(&sm.amp),
            spread(&raw.amp)
        );
        for m in sst.interior_frames() {
            assert!(
                (sm.inst_freq[m] - 1.2).abs() < 0.03,
                "{m} {} raw {}",
                sm.inst_freq[m],
                raw.inst_freq[m]
            );
        }
        assert_eq!(sm.complex_track, raw.complex_track);
        assert!(smooth_component(&raw, &iff[1..]).is_err());
    }
}
