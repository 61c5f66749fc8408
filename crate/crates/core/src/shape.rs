//! Functional least-squares estimation of the wave-shape coefficients.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::recovery::RecoveredComponent;

pub const DEFAULT_CAP_D: usize = 6;
pub const MAX_CAP_D: usize = 12;
/// Gram matrices with a larger eigenvalue ratio are rejected.
pub const MAX_CONDITION: f64 = 1e8;

/// Regressors `c_0 = Ã`, `c_ℓ = Ã cos(2πℓφ̃)`, `d_ℓ = Ã sin(2πℓφ̃)`, stored
/// as rows `[c_0, c_1..c_D, d_1..d_D]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    rows: Vec<Vec<f64>>,
    cap_d: usize,
}

impl DesignMatrix {
    /// `amp` is Ã, `phase` is φ̃ in cycles.
    pub fn from_amp_phase(amp: &[f64], phase: &[f64], cap_d: usize) -> Result<Self> {
        if !(1..=MAX_CAP_D).contains(&cap_d) {
            return Err(Error::InvalidArgument(format!(
                "cap_d must be in 1..={MAX_CAP_D}, got {cap_d}"
            )));
        }
        if amp.len() != phase.len() {
            return Err(Error::DimensionMismatch {
                expected: amp.len(),
                got: phase.len(),
            });
        }
        let required = 4 * (2 * cap_d + 1);
        if amp.len() < required {
            return Err(Error::TooShort {
                frames: amp.len(),
                required,
            });
        }
        if amp.iter().chain(phase).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("amplitude/phase track"));
        }
        let mut rows = vec![amp.to_vec()];
        for l in 1..=cap_d {
            rows.push(harmonic(amp, phase, l, f64::cos));
        }
        for l in 1..=cap_d {
            rows.push(harmonic(amp, phase, l, f64::sin));
        }
        Ok(Self { rows, cap_d })
    }

    pub fn cap_d(&self) -> usize {
        self.cap_d
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    /// Number of time samples N.
    pub fn len(&self) -> usize {
        self.rows[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn as_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows.len(), self.len(), |i, k| self.rows[i][k])
    }

    /// `c cᵀ`.
    pub fn gram(&self) -> DMatrix<f64> {
        let c = self.as_matrix();
        &c * c.transpose()
    }
}

fn harmonic(amp: &[f64], phase: &[f64], l: usize, f: fn(f64) -> f64) -> Vec<f64> {
    amp.iter()
        .zip(phase)
        .map(|(a, p)| a * f(2.0 * PI * l as f64 * p))
        .collect()
}

pub fn build_design(comp: &RecoveredComponent, cap_d: usize) -> Result<DesignMatrix> {
    DesignMatrix::from_amp_phase(&comp.amp, &comp.phase, cap_d)
}

/// Spectral pulse signature: `γ = [α0, α1..αD, β1..βD]` plus the derived
/// per-harmonic power `(αℓ² + βℓ²)/4` and phase `θℓ = atan2(−βℓ, αℓ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpsVector {
    pub cap_d: usize,
    pub gamma: Vec<f64>,
    pub harmonic_power: Vec<f64>,
    pub harmonic_phase: Vec<f64>,
    pub aligned: bool,
    pub condition_number: f64,
}

impl SpsVector {
    /// Wraps a coefficient vector; `condition_number` is NaN when the vector
    /// did not come from a regression.
    pub fn from_gamma(gamma: Vec<f64>, condition_number: f64, aligned: bool) -> Result<Self> {
        if gamma.len() < 3 || gamma.len().is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "gamma must have length 2D+1 with D >= 1, got {}",
                gamma.len()
            )));
        }
        let cap_d = (gamma.len() - 1) / 2;
        let (harmonic_power, harmonic_phase) = (1..=cap_d)
            .map(|l| {
                let (a, b) = (gamma[l], gamma[cap_d + l]);
                ((a * a + b * b) / 4.0, (-b).atan2(a).rem_euclid(2.0 * PI))
            })
            .unzip();
        Ok(Self {
            cap_d,
            gamma,
            harmonic_power,
            harmonic_phase,
            aligned,
            condition_number,
        })
    }

    pub fn alpha(&self, l: usize) -> f64 {
        self.gamma[l]
    }

    /// `βℓ`, ℓ ≥ 1.
    pub fn beta(&self, l: usize) -> f64 {
        self.gamma[self.cap_d + l]
    }

    /// `α0² + Σ (αℓ² + βℓ²)/2`.
    pub fn energy(&self) -> f64 {
        self.gamma[0].powi(2) + 2.0 * self.harmonic_power.iter().sum::<f64>()
    }

    /// Evaluates the estimated shape at `t` cycles.
    pub fn eval(&self, t: f64) -> f64 {
        let mut v = self.gamma[0];
        for l in 1..=self.cap_d {
            let (s, c) = (2.0 * PI * l as f64 * t).sin_cos();
            v += self.alpha(l) * c + self.beta(l) * s;
        }
        v
    }
}

/// `γ̃ = (Y cᵀ)(c cᵀ)^{-1}`, solved by Cholesky on the Gram matrix.
pub fn estimate_sps(y: &[f64], design: &DesignMatrix) -> Result<SpsVector> {
    if y.len() != design.len() {
        return Err(Error::DimensionMismatch {
            expected: design.len(),
            got: y.len(),
        });
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("regression target"));
    }
    let c = design.as_matrix();
    let gram = &c * c.transpose();
    let cond = condition_number(&gram);
    if !(cond <= MAX_CONDITION) {
        return Err(Error::IllConditioned(cond));
    }
    let rhs = &c * DVector::from_column_slice(y);
    let chol = gram.cholesky().ok_or(Error::IllConditioned(cond))?;
    let gamma = chol.solve(&rhs);
    SpsVector::from_gamma(gamma.iter().copied().collect(), cond, false)
}

/// Eigenvalue ratio of a symmetric positive semi-definite matrix.
fn condition_number(gram: &DMatrix<f64>) -> f64 {
    let eig = gram.clone().symmetric_eigen().eigenvalues;
    let max = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = eig.iter().copied().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Rescales γ to unit energy.
///
/// Ã tracks the fundamental, whose amplitude is `A·2a1` rather than `A`, so
/// the raw regression recovers the shape only up to that factor.
pub fn normalize_energy(sps: &SpsVector) -> Result<SpsVector> {
    let e = sps.energy();
    if !(e > 0.0 && e.is_finite()) {
        return Err(Error::ZeroVariance("SPS energy"));
    }
    let k = e.sqrt().recip();
    SpsVector::from_gamma(
        sps.gamma.iter().map(|g| g * k).collect(),
        sps.condition_number,
        sps.aligned,
    )
}

/// Rotates `θℓ ← θℓ − ℓθ1`, i.e. shifts the shape so the fundamental has
/// zero phase. `harmonic_power` is carried over unchanged.
pub fn align_phase(sps: &SpsVector) -> Result<SpsVector> {
    let d = sps.cap_d;
    let scale = sps.gamma.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let a1 = sps.harmonic_power[0].sqrt();
    if !(a1 > f64::EPSILON * scale) {
        return Err(Error::ZeroFundamental);
    }
    let theta1 = sps.harmonic_phase[0];
    let mut gamma = sps.gamma.clone();
    let mut phase = Vec::with_capacity(d);
    for l in 1..=d {
        let a = sps.harmonic_power[l - 1].sqrt();
        let theta = if l == 1 {
            0.0
        } else {
            (sps.harmonic_phase[l - 1] - l as f64 * theta1).rem_euclid(2.0 * PI)
        };
        gamma[l] = 2.0 * a * theta.cos();
        // `+ 0.0` turns the −0 of the aligned β1 into +0.
        gamma[d + l] = -2.0 * a * theta.sin() + 0.0;
        // rem_euclid can return exactly 2π for tiny negative inputs.
        phase.push(if theta >= 2.0 * PI { 0.0 } else { theta });
    }
    Ok(SpsVector {
        cap_d: d,
        gamma,
        harmonic_power: sps.harmonic_power.clone(),
        harmonic_phase: phase,
        aligned: true,
        condition_number: sps.condition_number,
    })
}

/// Fitted signal `γ̃ᵀc`.
pub fn reconstruct_fit(sps: &SpsVector, design: &DesignMatrix) -> Result<Vec<f64>> {
    if sps.gamma.len() != design.rows.len() {
        return Err(Error::DimensionMismatch {
            expected: design.rows.len(),
            got: sps.gamma.len(),
        });
    }
    let mut out = vec![0.0; design.len()];
    for (g, row) in sps.gamma.iter().zip(&design.rows) {
        for (o, r) in out.iter_mut().zip(row) {
            *o += g * r;
        }
    }
    Ok(out)
}

/// L² distance over one period between two shapes given as γ vectors.
pub fn shape_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    Ok(SpsVector::from_gamma(diff, f64::NAN, false)?
        .energy()
        .sqrt())
}

/// `γ` of a shape with `cap_d` harmonics, zero-padded or truncated.
pub fn gamma_with_cap(gamma: &[f64], cap_d: usize) -> Vec<f64> {
    let d = (gamma.len() - 1) / 2;
    let mut out = vec![0.0; 2 * cap_d + 1];
    out[0] = gamma[0];
    let k = cap_d.min(d);
    out[1..=k].copy_from_slice(&gamma[1..=k]);
    out[cap_d + 1..=cap_d + k].copy_from_slice(&gamma[d + 1..=d + k]);
    out
}

/// Coefficient-wise mean, e.g. across recordings of one subject.
pub fn mean_sps(items: &[SpsVector]) -> Result<SpsVector> {
    let first = items
        .first()
        .ok_or_else(|| Error::TooFewSamples("mean of zero SPS vectors".into()))?;
    let len = first.gamma.len();
    let mut acc = vec![0.0; len];
    for s in items {
        if s.gamma.len() != len {
            return Err(Error::DimensionMismatch {
                expected: len,
                got: s.gamma.len(),
            });
        }
        acc.iter_mut().zip(&s.gamma).for_each(|(a, g)| *a += g);
    }
    let n = items.len() as f64;
    SpsVector::from_gamma(
        acc.into_iter().map(|a| a / n).collect(),
        f64::NAN,
        items.iter().all(|s| s.aligned),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::WaveShape;
    use crate::seed;
    use proptest::prelude::*;
    use rand_distr::{Distribution, Normal};

    fn tone_design(
        n: usize,
        cycles_per_sample: f64,
        cap_d: usize,
    ) -> (Vec<f64>, Vec<f64>, DesignMatrix) {
        let amp = vec![1.0; n];
        let phase: Vec<f64> = (0..n).map(|k| k as f64 * cycles_per_sample).collect();
        let d = DesignMatrix::from_amp_phase(&amp, &phase, cap_d).unwrap();
        (amp, phase, d)
    }

    fn wandering(n: usize) -> (Vec<f64>, Vec<f64>) {
        let amp = (0..n)
            .map(|k| 1.0 + 0.1 * (k as f64 * 0.003).sin())
            .collect();
        let phase = (0..n)
            .map(|k| {
                let t = k as f64 / 100.0;
                1.2 * t + 0.05 * (0.4 * t).sin()
            })
            .collect();
        (amp, phase)
    }

    fn exact_y(gamma: &[f64], d: &DesignMatrix) -> Vec<f64> {
        let sps = SpsVector::from_gamma(gamma.to_vec(), f64::NAN, false).unwrap();
        reconstruct_fit(&sps, d).unwrap()
    }

    #[test]
    fn gram_of_whole_cycles_is_nearly_diagonal() {
        let n = 1000;
        let (_, _, d) = tone_design(n, 0.01, 6);
        let g = d.gram();
        for i in 0..13 {
            for j in 0..13 {
                let want = match (i, j) {
                    (0, 0) => n as f64,
                    _ if i == j => n as f64 / 2.0,
                    _ => 0.0,
                };
                assert!((g[(i, j)] - want).abs() < 1.0, "({i},{j}) {}", g[(i, j)]);
            }
        }
    }

    #[test]
    fn design_shape_and_linearity() {
        let (amp, phase) = wandering(200);
        let d = DesignMatrix::from_amp_phase(&amp, &phase, 1).unwrap();
        assert_eq!(d.rows().len(), 3);
        let doubled: Vec<f64> = amp.iter().map(|a| 2.0 * a).collect();
        let d2 = DesignMatrix::from_amp_phase(&doubled, &phase, 1).unwrap();
        for (r, r2) in d.rows().iter().zip(d2.rows()) {
            assert!(r.iter().zip(r2).all(|(a, b)| *b == 2.0 * a));
        }
        assert!(matches!(
            DesignMatrix::from_amp_phase(&amp[..51], &phase[..51], 6),
            Err(Error::TooShort {
                frames: 51,
                required: 52
            })
        ));
        assert!(DesignMatrix::from_amp_phase(&amp, &phase, 0).is_err());
        assert!(DesignMatrix::from_amp_phase(&amp, &phase[1..], 1).is_err());
    }

    #[test]
    fn exact_model_recovered() {
        let (amp, phase) = wandering(1000);
        let d = DesignMatrix::from_amp_phase(&amp, &phase, 5).unwrap();
        let gamma = WaveShape::pulse_example().to_gamma();
        let y = exact_y(&gamma, &d);
        let sps = estimate_sps(&y, &d).unwrap();
        let norm = gamma.iter().map(|g| g * g).sum::<f64>().sqrt();
        for (a, b) in sps.gamma.iter().zip(&gamma) {
            assert!((a - b).abs() <= 1e-8 * norm);
        }
        assert!(!sps.aligned);
        let fit = reconstruct_fit(&sps, &d).unwrap();
        let ynorm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(fit
            .iter()
            .zip(&y)
            .all(|(f, v)| (f - v).abs() <= 1e-8 * ynorm));
    }

    #[test]
    fn noisy_fit_error_bounded() {
        let (amp, phase) = wandering(1000);
        let d = DesignMatrix::from_amp_phase(&amp, &phase, 5).unwrap();
        let gamma = WaveShape::pulse_example().to_gamma();
        let clean = exact_y(&gamma, &d);
        let sd = crate::model::std_dev(&clean) / 10.0;
        let norm = gamma.iter().map(|g| g * g).sum::<f64>().sqrt();
        for trial in 0..20 {
            let mut rng = seed::rng(seed::derive(7, "shape-noise", trial));
            let noise = Normal::new(0.0, sd).unwrap();
            let y: Vec<f64> = clean.iter().map(|v| v + noise.sample(&mut rng)).collect();
            let sps = estimate_sps(&y, &d).unwrap();
            for (a, b) in sps.gamma.iter().zip(&gamma) {
                assert!((a - b).abs() <= 0.05 * norm);
            }
            // Residual is orthogonal to every regressor.
            let fit = reconstruct_fit(&sps, &d).unwrap();
            let ynorm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
            for row in d.rows() {
                let rnorm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                let dot: f64 = row
                    .iter()
                    .zip(y.iter().zip(&fit))
                    .map(|(r, (a, b))| r * (a - b))
                    .sum();
                assert!(dot.abs() <= 1e-8 * ynorm * rnorm);
            }
        }
    }

    #[test]
    fn ill_conditioned_rejected() {
        // Constant phase: every harmonic row is a multiple of c_0.
        let amp = vec![1.0; 100];
        let phase = vec![0.3; 100];
        let d = DesignMatrix::from_amp_phase(&amp, &phase, 2).unwrap();
        assert!(matches!(
            estimate_sps(&vec![1.0; 100], &d),
            Err(Error::IllConditioned(_))
        ));
    }

    #[test]
    fn dimension_checks() {
        let (_, _, d) = tone_design(100, 0.01, 2);
        assert!(estimate_sps(&[0.0; 99], &d).is_err());
        let sps = SpsVector::from_gamma(vec![0.0, 1.0, 0.0], f64::NAN, false).unwrap();
        assert!(reconstruct_fit(&sps, &d).is_err());
        assert!(SpsVector::from_gamma(vec![1.0, 2.0], f64::NAN, false).is_err());
    }

    #[test]
    fn scale_covariance() {
        let (amp, phase) = wandering(600);
        let d = DesignMatrix::from_amp_phase(&amp, &phase, 4).unwrap();
        let y: Vec<f64> = (0..600)
            .map(|k| (k as f64 * 0.07).sin() + 0.01 * k as f64)
            .collect();
        let a = estimate_sps(&y, &d).unwrap();
        let b = estimate_sps(&y.iter().map(|v| 4.0 * v).collect::<Vec<_>>(), &d).unwrap();
        assert!(a.gamma.iter().zip(&b.gamma).all(|(x, z)| *z == 4.0 * x));
        let c = estimate_sps(&y.iter().map(|v| 3.0 * v).collect::<Vec<_>>(), &d).unwrap();
        for (x, z) in a.gamma.iter().zip(&c.gamma) {
            assert!((z - 3.0 * x).abs() <= 1e-12 * z.abs().max(1.0));
        }
        for (x, z) in a.harmonic_power.iter().zip(&c.harmonic_power) {
            assert!((z - 9.0 * x).abs() <= 1e-12 * z.max(1.0));
        }
    }

    #[test]
    fn derived_fields_consistent() {
        let s = WaveShape::pulse_example();
        let sps = SpsVector::from_gamma(s.to_gamma(), f64::NAN, false).unwrap();
        for l in 1..=s.cap_d() {
            let (a, b) = (sps.alpha(l), sps.beta(l));
            assert_eq!(sps.harmonic_power[l - 1], (a * a + b * b) / 4.0);
            assert!((sps.harmonic_phase[l - 1] - s.harmonic_phase(l)).abs() < 1e-12);
        }
        assert!((sps.energy() - 1.0).abs() < 1e-12);
        for t in [0.0, 0.1, 0.37, 0.9] {
            assert!((sps.eval(t) - s.eval(t)).abs() < 1e-12);
        }
    }

    #[test]
    fn alignment_fixed_point_and_power() {
        let s = WaveShape::pulse_example();
        let sps = SpsVector::from_gamma(s.to_gamma(), f64::NAN, false).unwrap();
        assert!(s.harmonic_phase(1).abs() < 1e-12);
        let al = align_phase(&sps).unwrap();
        assert!(al.aligned);
        assert_eq!(al.harmonic_power, sps.harmonic_power);
        for (a, b) in al.gamma.iter().zip(&sps.gamma) {
            assert!((a - b).abs() <= 1e-12);
        }
        assert_eq!(al.harmonic_phase[0], 0.0);
    }

    #[test]
    fn alignment_removes_start_phase() {
        let s = WaveShape::pulse_example();
        let base =
            align_phase(&SpsVector::from_gamma(s.to_gamma(), f64::NAN, false).unwrap()).unwrap();
        for offset in [0.13, 0.5, 0.77, -0.31] {
            let shifted =
                SpsVector::from_gamma(s.shifted(offset).to_gamma(), f64::NAN, false).unwrap();
            assert!(
                (shifted.harmonic_phase[0] - (2.0 * PI * offset).rem_euclid(2.0 * PI)).abs() < 1e-9
            );
            let al = align_phase(&shifted).unwrap();
            for (a, b) in al.gamma.iter().zip(&base.gamma) {
                assert!((a - b).abs() <= 1e-9);
            }
            for l in 0..al.cap_d {
                assert!(
                    (al.harmonic_power[l]
                        - 0.25 * (al.alpha(l + 1).powi(2) + al.beta(l + 1).powi(2)))
                    .abs()
                        <= 1e-12
                );
            }
        }
    }

    #[test]
    fn zero_fundamental_rejected() {
        let sps = SpsVector::from_gamma(vec![1.0, 0.0, 0.5, 0.0, 0.2], f64::NAN, false).unwrap();
        assert!(matches!(align_phase(&sps), Err(Error::ZeroFundamental)));
    }

    #[test]
    fn normalization_and_distance() {
        let g = WaveShape::pulse_example().to_gamma();
        let scaled =
            SpsVector::from_gamma(g.iter().map(|v| 0.37 * v).collect(), 5.0, false).unwrap();
        let n = normalize_energy(&scaled).unwrap();
        assert!((n.energy() - 1.0).abs() < 1e-12);
        assert_eq!(n.condition_number, 5.0);
        assert!(shape_distance(&n.gamma, &g).unwrap() < 1e-12);
        // Distance against a Riemann-sum oracle of ∫(a−b)².
        let b = WaveShape::pure_cosine().to_gamma();
        let b = gamma_with_cap(&b, 5);
        let bs = SpsVector::from_gamma(b.clone(), f64::NAN, false).unwrap();
        let m = 4096;
        let oracle = ((0..m)
            .map(|i| {
                let t = i as f64 / m as f64;
                (n.eval(t) - bs.eval(t)).powi(2)
            })
            .sum::<f64>()
            / m as f64)
            .sqrt();
        assert!((shape_distance(&g, &b).unwrap() - oracle).abs() < 1e-12);
        assert!(
            normalize_energy(&SpsVector::from_gamma(vec![0.0; 3], 1.0, false).unwrap()).is_err()
        );
    }

    #[test]
    fn mean_of_vectors() {
        let a = SpsVector::from_gamma(vec![1.0, 2.0, 0.0], 1.0, true).unwrap();
        let b = SpsVector::from_gamma(vec![3.0, 0.0, 2.0], 1.0, true).unwrap();
        let m = mean_sps(&[a, b.clone()]).unwrap();
        assert_eq!(m.gamma, vec![2.0, 1.0, 1.0]);
        assert!(m.aligned);
        assert!(mean_sps(&[]).is_err());
        let c = SpsVector::from_gamma(vec![0.0; 5], 1.0, true).unwrap();
        assert!(mean_sps(&[b, c]).is_err());
    }

    proptest! {
        #[test]
        fn aligned_power_matches_coefficients(
            amps in proptest::collection::vec(0.01f64..1.0, 1..7),
            phases in proptest::collection::vec(0.0f64..6.3, 7),
            a0 in -1.0f64..1.0,
        ) {
            let d = amps.len();
            let mut gamma = vec![a0];
            gamma.extend((0..d).map(|l| 2.0 * amps[l] * phases[l].cos()));
            gamma.extend((0..d).map(|l| -2.0 * amps[l] * phases[l].sin()));
            let sps = SpsVector::from_gamma(gamma, f64::NAN, false).unwrap();
            let al = align_phase(&sps).unwrap();
            prop_assert_eq!(&al.harmonic_power, &sps.harmonic_power);
            prop_assert!(al.harmonic_phase[0] == 0.0);
            prop_assert!(al.harmonic_phase.iter().all(|t| (0.0..2.0 * PI).contains(t)));
            let again = align_phase(&al).unwrap();
            for (x, y) in again.gamma.iter().zip(&al.gamma) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }
    }
}
