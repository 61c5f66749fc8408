//! PLS scoring, ROC analysis, cross-validation and a permutation ANOVA on
//! SPS feature vectors.

use nalgebra::{DMatrix, DVector};
use rand::seq::{IndexedRandom, SliceRandom};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

/// Per-coordinate centring and scaling learnt from training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    /// Sample standard deviation; constant features keep scale 1.
    pub scale: Vec<f64>,
}

impl Standardization {
    pub fn fit(features: &[Vec<f64>]) -> Result<Self> {
        let p = feature_dim(features)?;
        let n = features.len() as f64;
        let mean: Vec<f64> = (0..p)
            .map(|j| features.iter().map(|r| r[j]).sum::<f64>() / n)
            .collect();
        let scale = (0..p)
            .map(|j| {
                let var = features
                    .iter()
                    .map(|r| (r[j] - mean[j]).powi(2))
                    .sum::<f64>()
                    / (n - 1.0).max(1.0);
                if var > 0.0 {
                    var.sqrt()
                } else {
                    // Expected for the aligned β1 column, so not worth a warning.
                    log::debug!("feature {j} is constant in the training data");
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(x, (m, s))| (x - m) / s)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub n_samples: usize,
    pub seed: u64,
}

/// Linear GPS model `ŷ = β0 + xᵀβ` on the original feature scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    /// `[β0, β1..βp]`.
    pub coeffs: Vec<f64>,
    pub n_components: usize,
    pub standardization: Standardization,
    pub training_meta: TrainingMeta,
}

impl ClassifierModel {
    pub fn feature_dim(&self) -> usize {
        self.coeffs.len() - 1
    }
}

fn feature_dim(features: &[Vec<f64>]) -> Result<usize> {
    let p = features
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::TooFewSamples("no feature rows".into()))?;
    if p == 0 {
        return Err(Error::InvalidArgument("feature rows are empty".into()));
    }
    for r in features {
        if r.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: r.len(),
            });
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature matrix"));
        }
    }
    Ok(p)
}

fn check_labels(n: usize, labels: &[bool]) -> Result<(usize, usize)> {
    if labels.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: labels.len(),
        });
    }
    let pos = labels.iter().filter(|l| **l).count();
    if pos == 0 || pos == n {
        return Err(Error::SingleClass);
    }
    Ok((pos, n - pos))
}

/// `min(5, p, n − 1)`.
pub fn default_components(p: usize, n: usize) -> usize {
    5.min(p).min(n.saturating_sub(1)).max(1)
}

/// PLS1 by NIPALS deflation on standardised features, collapsed to a linear
/// model `β = W (PᵀW)^{-1} q` and mapped back to the raw feature scale.
pub fn fit_pls(
    features: &[Vec<f64>],
    labels: &[bool],
    n_components: usize,
) -> Result<ClassifierModel> {
    let p = feature_dim(features)?;
    let n = features.len();
    if n < 4 {
        return Err(Error::TooFewSamples(format!("PLS needs n >= 4, got {n}")));
    }
    check_labels(n, labels)?;
    if n_components == 0 || n_components > p.min(n - 1) {
        return Err(Error::InvalidArgument(format!(
            "n_components must be in 1..={}, got {n_components}",
            p.min(n - 1)
        )));
    }
    let std = Standardization::fit(features)?;
    let mut x = DMatrix::from_fn(n, p, |i, j| (features[i][j] - std.mean[j]) / std.scale[j]);
    let y_mean = labels.iter().filter(|l| **l).count() as f64 / n as f64;
    let mut y = DVector::from_fn(n, |i, _| f64::from(u8::from(labels[i])) - y_mean);

    let tol = 1e-10 * x.norm() * y.norm();
    let (mut ws, mut ps, mut qs) = (Vec::new(), Vec::new(), Vec::new());
    for a in 0..n_components {
        let mut w = x.tr_mul(&y);
        let wn = w.norm();
        if !(wn > tol) {
            log::warn!("PLS stopped after {a} of {n_components} components (zero weight vector)");
            break;
        }
        w /= wn;
        let t = &x * &w;
        let tt = t.norm_squared();
        let pl = x.tr_mul(&t) / tt;
        let q = y.dot(&t) / tt;
        x -= &t * pl.transpose();
        y -= &t * q;
        ws.push(w);
        ps.push(pl);
        qs.push(q);
    }
    let k = ws.len();
    if k == 0 {
        return Err(Error::ZeroVariance(
            "features carry no covariance with labels",
        ));
    }
    let w = DMatrix::from_columns(&ws);
    let pm = DMatrix::from_columns(&ps);
    let q = DVector::from_vec(qs);
    let ptw = pm.tr_mul(&w);
    let inner = ptw
        .lu()
        .solve(&q)
        .ok_or(Error::IllConditioned(f64::INFINITY))?;
    let b_std = &w * inner;

    let mut coeffs = vec![0.0; p + 1];
    let mut intercept = y_mean;
    for j in 0..p {
        coeffs[j + 1] = b_std[j] / std.scale[j];
        intercept -= coeffs[j + 1] * std.mean[j];
    }
    coeffs[0] = intercept;
    Ok(ClassifierModel {
        coeffs,
        n_components: k,
        standardization: std,
        training_meta: TrainingMeta {
            n_samples: n,
            seed: 0,
        },
    })
}

/// `ŷ = [1, x]·β`.
pub fn gps_score(model: &ClassifierModel, features: &[f64]) -> Result<f64> {
    if features.len() != model.feature_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.feature_dim(),
            got: features.len(),
        });
    }
    Ok(model.coeffs[0]
        + model.coeffs[1..]
            .iter()
            .zip(features)
            .map(|(b, x)| b * x)
            .sum::<f64>())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocResult {
    /// Distinct scores, ascending; a score `≥` threshold predicts positive.
    pub thresholds: Vec<f64>,
    pub sens: Vec<f64>,
    pub spec: Vec<f64>,
    pub auc: f64,
    pub ci: Option<(f64, f64)>,
    /// Maximiser of Youden's J (lowest threshold on ties).
    pub optimal_threshold: f64,
    /// Midpoint between `optimal_threshold` and the next lower score: the
    /// same partition of the data, with margin on both sides for new samples.
    pub optimal_cut: f64,
    pub accuracy_at_optimal: f64,
}

fn check_scores(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("scores"));
    }
    check_labels(scores.len(), labels)
}

pub fn roc_analyze(scores: &[f64], labels: &[bool]) -> Result<RocResult> {
    let (n_pos, n_neg) = check_scores(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Walk thresholds upwards: everything at or above the current score is
    // predicted positive.
    let (mut thresholds, mut sens, mut spec) = (Vec::new(), Vec::new(), Vec::new());
    let (mut fn_, mut tn) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        thresholds.push(s);
        sens.push((n_pos - fn_) as f64 / n_pos as f64);
        spec.push(tn as f64 / n_neg as f64);
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                fn_ += 1;
            } else {
                tn += 1;
            }
            i += 1;
        }
    }

    // Trapezoid over (1 − spec, sens) from (0, 0) to (1, 1).
    let mut auc = 0.0;
    let (mut x0, mut y0) = (0.0, 0.0);
    for k in (0..thresholds.len()).rev() {
        let (x1, y1) = (1.0 - spec[k], sens[k]);
        auc += (x1 - x0) * (y0 + y1) / 2.0;
        (x0, y0) = (x1, y1);
    }

    let mut best = 0;
    for k in 1..thresholds.len() {
        if sens[k] + spec[k] > sens[best] + spec[best] {
            best = k;
        }
    }
    let n = scores.len() as f64;
    let accuracy = (sens[best] * n_pos as f64 + spec[best] * n_neg as f64) / n;
    let optimal_threshold = thresholds[best];
    let optimal_cut = if best == 0 {
        optimal_threshold
    } else {
        0.5 * (thresholds[best - 1] + optimal_threshold)
    };
    Ok(RocResult {
        thresholds,
        sens,
        spec,
        auc,
        ci: None,
        optimal_threshold,
        optimal_cut,
        accuracy_at_optimal: accuracy,
    })
}

/// Mann–Whitney AUC with half credit for ties, `O(n log n)`.
pub fn auc_rank(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (n_pos, n_neg) = check_scores(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // Mid-rank of the tie block (1-based ranks i+1..=j).
        let mid = (i + 1 + j) as f64 / 2.0;
        rank_sum += mid * order[i..j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos * n_neg) as f64)
}

/// Type-7 (linear interpolation) sample quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile 95% CI of the AUC over stratified bootstrap replicas.
pub fn bootstrap_auc_ci(
    scores: &[f64],
    labels: &[bool],
    n_boot: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    check_scores(scores, labels)?;
    if n_boot < 100 {
        return Err(Error::InvalidArgument(format!(
            "n_boot must be >= 100, got {n_boot}"
        )));
    }
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    let mut aucs: Vec<f64> = (0..n_boot as u64)
        .into_par_iter()
        .map(|b| {
            let mut rng = seed::rng(seed::derive(seed, "bootstrap", b));
            let mut s = Vec::with_capacity(scores.len());
            let mut l = Vec::with_capacity(scores.len());
            for (class, idx) in [(true, &pos), (false, &neg)] {
                for _ in 0..idx.len() {
                    s.push(scores[*idx.choose(&mut rng).expect("class is non-empty")]);
                    l.push(class);
                }
            }
            auc_rank(&s, &l).expect("both classes present")
        })
        .collect();
    aucs.sort_by(f64::total_cmp);
    Ok((quantile_sorted(&aucs, 0.025), quantile_sorted(&aucs, 0.975)))
}

/// ROC with a bootstrap CI attached.
pub fn roc_with_ci(scores: &[f64], labels: &[bool], n_boot: usize, seed: u64) -> Result<RocResult> {
    let mut roc = roc_analyze(scores, labels)?;
    let ci = bootstrap_auc_ci(scores, labels, n_boot, seed)?;
    if !(ci.0 <= roc.auc && roc.auc <= ci.1) {
        log::warn!("AUC {} lies outside its percentile CI {ci:?}", roc.auc);
    }
    roc.ci = Some(ci);
    Ok(roc)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdRule {
    /// Youden's J on the training-fold scores, cut at the midpoint below the
    /// optimal score.
    #[default]
    Youden,
    /// A fixed cut-off on the GPS score.
    Fixed(f64),
}

/// Leave-one-out accuracy. Folds whose training set holds a single class
/// are skipped with a warning.
pub fn loocv_accuracy(
    features: &[Vec<f64>],
    labels: &[bool],
    n_components: usize,
    rule: ThresholdRule,
) -> Result<f64> {
    let n = features.len();
    if n < 5 {
        return Err(Error::TooFewSamples(format!("LOOCV needs n >= 5, got {n}")));
    }
    let p = feature_dim(features)?;
    check_labels(n, labels)?;
    let mut correct = 0usize;
    let mut folds = 0usize;
    for i in 0..n {
        let train_x: Vec<Vec<f64>> = (0..n)
            .filter(|&k| k != i)
            .map(|k| features[k].clone())
            .collect();
        let train_y: Vec<bool> = (0..n).filter(|&k| k != i).map(|k| labels[k]).collect();
        let nc = n_components.min(p).min(n - 2);
        let model = match fit_pls(&train_x, &train_y, nc) {
            Ok(m) => m,
            Err(Error::SingleClass) => {
                log::warn!("LOOCV fold {i} skipped: training set has a single class");
                continue;
            }
            Err(e) => return Err(e),
        };
        let threshold = match rule {
            ThresholdRule::Fixed(t) => t,
            ThresholdRule::Youden => {
                let s: Vec<f64> = train_x
                    .iter()
                    .map(|r| gps_score(&model, r))
                    .collect::<Result<_>>()?;
                roc_analyze(&s, &train_y)?.optimal_cut
            }
        };
        let predicted = gps_score(&model, &features[i])? >= threshold;
        folds += 1;
        correct += usize::from(predicted == labels[i]);
    }
    if folds == 0 {
        return Err(Error::SingleClass);
    }
    Ok(correct as f64 / folds as f64)
}

/// Mean LOOCV accuracy over `repeats` passes, each on a sample order
/// shuffled with a derived seed. LOOCV itself has no random element, so the
/// passes agree up to rounding; the option exists for protocol parity.
pub fn loocv_repeated(
    features: &[Vec<f64>],
    labels: &[bool],
    n_components: usize,
    rule: ThresholdRule,
    repeats: usize,
    seed: u64,
) -> Result<f64> {
    if repeats <= 1 {
        return loocv_accuracy(features, labels, n_components, rule);
    }
    let accs: Vec<f64> = (0..repeats as u64)
        .map(|r| {
            let mut idx: Vec<usize> = (0..features.len()).collect();
            idx.shuffle(&mut seed::rng(seed::derive(seed, "loocv", r)));
            let x: Vec<Vec<f64>> = idx.iter().map(|&i| features[i].clone()).collect();
            let y: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
            loocv_accuracy(&x, &y, n_components, rule)
        })
        .collect::<Result<_>>()?;
    Ok(accs.iter().sum::<f64>() / repeats as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    /// Sum over coordinates of the pointwise F statistic.
    pub statistic: f64,
    pub p_value: f64,
    pub n_perm: usize,
}

/// `Σ_j F_j`, `F_j = [SSB_j/(k−1)] / [SSW_j/(N−k)]`; a coordinate with no
/// within-group spread contributes 0 when group means agree and +∞ otherwise.
fn summed_f(pooled: &[&[f64]], group_of: &[usize], k: usize) -> f64 {
    let n = pooled.len();
    let p = pooled[0].len();
    let mut counts = vec![0usize; k];
    for &g in group_of {
        counts[g] += 1;
    }
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for j in 0..p {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for (row, &g) in pooled.iter().zip(group_of) {
            sums[g] += row[j];
        }
        let grand = sums.iter().sum::<f64>() / n as f64;
        let ssb: f64 = (0..k)
            .map(|g| counts[g] as f64 * (sums[g] / counts[g] as f64 - grand).powi(2))
            .sum();
        let ssw: f64 = pooled
            .iter()
            .zip(group_of)
            .map(|(row, &g)| (row[j] - sums[g] / counts[g] as f64).powi(2))
            .sum();
        let scale = 1e-12 * (ssb + ssw);
        total += if ssw > scale {
            (ssb / (k - 1) as f64) / (ssw / (n - k) as f64)
        } else if ssb > scale {
            f64::INFINITY
        } else {
            0.0
        };
    }
    total
}

/// Permutation test of equal group means on SPS coordinates, with
/// `p = (1 + #{perm ≥ observed}) / (1 + n_perm)`.
pub fn permutation_functional_anova(
    groups: &[Vec<Vec<f64>>],
    n_perm: usize,
    seed: u64,
) -> Result<AnovaResult> {
    if groups.len() < 2 {
        return Err(Error::TooFewSamples(format!(
            "need >= 2 groups, got {}",
            groups.len()
        )));
    }
    if let Some(g) = groups.iter().position(|g| g.len() < 3) {
        return Err(Error::TooFewSamples(format!(
            "group {g} has {} members; need >= 3",
            groups[g].len()
        )));
    }
    if n_perm == 0 {
        return Err(Error::InvalidArgument("n_perm must be >= 1".into()));
    }
    let pooled_owned: Vec<Vec<f64>> = groups.iter().flatten().cloned().collect();
    feature_dim(&pooled_owned)?;
    let pooled: Vec<&[f64]> = pooled_owned.iter().map(Vec::as_slice).collect();
    let group_of: Vec<usize> = groups
        .iter()
        .enumerate()
        .flat_map(|(g, rows)| std::iter::repeat_n(g, rows.len()))
        .collect();
    let k = groups.len();
    let observed = summed_f(&pooled, &group_of, k);
    let slack = 1e-12 * observed.abs();
    let exceed = (0..n_perm as u64)
        .into_par_iter()
        .filter(|&r| {
            let mut perm = group_of.clone();
            perm.shuffle(&mut seed::rng(seed::derive(seed, "permutation", r)));
            summed_f(&pooled, &perm, k) + slack >= observed
        })
        .count();
    Ok(AnovaResult {
        statistic: observed,
        p_value: (1 + exceed) as f64 / (1 + n_perm) as f64,
        n_perm,
    })
}
