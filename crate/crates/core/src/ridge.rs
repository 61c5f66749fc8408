//! Single-ridge extraction from a synchrosqueezed representation.
//!
//! The ridge maximises `Σ_m log(|S[m, c_m]|² + floor) − λ Σ_m (f(c_{m+1}) − f(c_m))²`
//! over all bin paths inside a frequency band; the optimum is found exactly
//! with dynamic programming. Ties go to the lower bin index.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tf::{TfKind, TfRepresentation};

/// Relative floor added to `|S|²` before taking logs.
pub const FLOOR_REL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ridge {
    pub time_s: Vec<f64>,
    pub freq_hz: Vec<f64>,
    pub bin_index: Vec<usize>,
    /// `|S|` on the ridge.
    pub energy: Vec<f64>,
    /// `|S|` one bin below and above the ridge, when that bin exists.
    pub neighbours: Vec<(Option<f64>, Option<f64>)>,
    pub band: (f64, f64),
    pub bin_width: f64,
}

impl Ridge {
    pub fn len(&self) -> usize {
        self.freq_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freq_hz.is_empty()
    }
}

fn band_bins(
    sst: &TfRepresentation,
    band: Option<(f64, f64)>,
) -> Result<(usize, usize, (f64, f64))> {
    let axis = sst.freq_axis();
    let (lo, hi) = band.unwrap_or((axis.f_min, axis.f_max()));
    if !(lo <= hi) {
        return Err(Error::EmptyBand);
    }
    let tol = 1e-9 * axis.step;
    let first = (0..axis.n_bins).find(|&k| axis.freq(k) >= lo - tol);
    let last = (0..axis.n_bins).rev().find(|&k| axis.freq(k) <= hi + tol);
    match (first, last) {
        (Some(a), Some(b)) if a <= b => Ok((a, b, (lo, hi))),
        _ => Err(Error::EmptyBand),
    }
}

/// The DP objective for an explicit path of absolute bin indices.
pub fn path_objective(sst: &TfRepresentation, path: &[usize], smooth_penalty: f64) -> f64 {
    let floor = FLOOR_REL * sst.max_abs().powi(2);
    let axis = sst.freq_axis();
    let data: f64 = path
        .iter()
        .enumerate()
        .map(|(m, &k)| (sst.get(m, k).norm_sqr() + floor).ln())
        .sum();
    let smooth: f64 = path
        .windows(2)
        .map(|w| (axis.freq(w[1]) - axis.freq(w[0])).powi(2))
        .sum();
    data - smooth_penalty * smooth
}

/// Penalised dynamic-programming ridge over `band` (full grid when `None`).
pub fn extract_ridge(
    sst: &TfRepresentation,
    smooth_penalty: f64,
    band: Option<(f64, f64)>,
) -> Result<Ridge> {
    if sst.kind() != TfKind::Sst {
        return Err(Error::GridMismatch(
            "ridge extraction expects an SST".into(),
        ));
    }
    if !(smooth_penalty >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "smooth penalty must be >= 0, got {smooth_penalty}"
        )));
    }
    let (k0, k1, band) = band_bins(sst, band)?;
    let width = k1 - k0 + 1;
    let n_frames = sst.n_frames();
    let axis = *sst.freq_axis();

    let band_max = (0..n_frames)
        .flat_map(|m| sst.row(m)[k0..=k1].iter())
        .map(|z| z.norm_sqr())
        .fold(0.0, f64::max);
    if band_max <= 0.0 {
        return Err(Error::AllBelowFloor);
    }
    let floor = FLOOR_REL * sst.max_abs().powi(2);

    let penalty: Vec<f64> = (0..width)
        .map(|d| smooth_penalty * (d as f64 * axis.step).powi(2))
        .collect();
    let gain = |m: usize, i: usize| (sst.get(m, k0 + i).norm_sqr() + floor).ln();

    let mut score: Vec<f64> = (0..width).map(|i| gain(0, i)).collect();
    let mut next = vec![0.0; width];
    let mut back = vec![0u32; n_frames * width];
    for m in 1..n_frames {
        for i in 0..width {
            let mut best = f64::NEG_INFINITY;
            let mut arg = 0;
            for (j, s) in score.iter().enumerate() {
                let v = s - penalty[i.abs_diff(j)];
                if v > best {
                    best = v;
                    arg = j;
                }
            }
            next[i] = best + gain(m, i);
            back[m * width + i] = arg as u32;
        }
        std::mem::swap(&mut score, &mut next);
    }
    let mut best = f64::NEG_INFINITY;
    let mut idx = 0;
    for (i, s) in score.iter().enumerate() {
        if *s > best {
            best = *s;
            idx = i;
        }
    }
    let mut path = vec![0usize; n_frames];
    path[n_frames - 1] = idx;
    for m in (1..n_frames).rev() {
        idx = back[m * width + idx] as usize;
        path[m - 1] = idx;
    }

    let bin_index: Vec<usize> = path.iter().map(|i| k0 + i).collect();
    let nb = sst.n_bins();
    let neighbours = bin_index
        .iter()
        .enumerate()
        .map(|(m, &k)| {
            let lo = (k > 0).then(|| sst.get(m, k - 1).norm());
            let hi = (k + 1 < nb).then(|| sst.get(m, k + 1).norm());
            (lo, hi)
        })
        .collect();
    Ok(Ridge {
        time_s: sst.time_axis(),
        freq_hz: bin_index.iter().map(|&k| axis.freq(k)).collect(),
        energy: bin_index
            .iter()
            .enumerate()
            .map(|(m, &k)| sst.get(m, k).norm())
            .collect(),
        bin_index,
        neighbours,
        band,
        bin_width: axis.step,
    })
}

/// Per-frame instantaneous frequency from the ridge, optionally refined by a
/// three-point parabolic fit of `|S|` around the ridge bin.
pub fn ridge_to_if(ridge: &Ridge, refine: bool) -> Vec<f64> {
    let (lo, hi) = ridge.band;
    ridge
        .freq_hz
        .iter()
        .enumerate()
        .map(|(m, &f)| {
            if !refine {
                return f;
            }
            let b = ridge.energy[m];
            let offset = match ridge.neighbours[m] {
                (Some(a), Some(c)) => {
                    let denom = a - 2.0 * b + c;
                    if denom < 0.0 {
                        (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
                    } else {
                        0.0
                    }
                }
                _ => 0.0,
            };
            (f + offset * ridge.bin_width).clamp(lo, hi)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RidgeSummary {
    pub mean_hz: f64,
    pub std_hz: f64,
    pub min_hz: f64,
    pub max_hz: f64,
}

pub fn summarize(if_hz: &[f64]) -> RidgeSummary {
    let n = if_hz.len() as f64;
    let mean = if_hz.iter().sum::<f64>() / n;
    let var = if_hz.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / n;
    RidgeSummary {
        mean_hz: mean,
        std_hz: var.sqrt(),
        min_hz: if_hz.iter().copied().fold(f64::INFINITY, f64::min),
        max_hz: if_hz.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    }
}
