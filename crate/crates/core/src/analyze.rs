//! Per-latent distribution estimation: Gaussian MLE, Gaussian mixtures by EM,
//! and Gaussian kernel density estimates. All fitters accept optional
//! nonnegative sample weights.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{DataSlice, Dataset, Value};
use crate::error::{Error, Result};
use crate::model::DataModel;
use crate::seed;

pub const GAUSSIAN_VAR_FLOOR: f64 = 1e-12;
pub const GMM_VAR_FLOOR: f64 = 1e-8;
pub const EM_TOL: f64 = 1e-8;
pub const EM_MAX_ITER: usize = 500;
/// BIC improvement over a single Gaussian needed before auto mode picks a mixture.
pub const BIC_GAP: f64 = 10.0;
pub const AUTO_MAX_COMPONENTS: usize = 5;
const KDE_STD_FLOOR: f64 = 1e-6;
const WEIGHT_FLOOR: f64 = 1e-12;

pub fn normal_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    let d = x - mean;
    (-0.5 * d * d / variance).exp() / (2.0 * PI * variance).sqrt()
}

fn normal_ln_pdf(x: f64, mean: f64, variance: f64) -> f64 {
    let d = x - mean;
    -0.5 * d * d / variance - 0.5 * (2.0 * PI * variance).ln()
}

/// An estimated one-dimensional distribution `θ̂`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DistEstimate {
    Gaussian {
        mean: f64,
        variance: f64,
        samples: usize,
    },
    Gmm {
        weights: Vec<f64>,
        means: Vec<f64>,
        variances: Vec<f64>,
        samples: usize,
        /// Initialization seed, reused by weighted refits.
        #[serde(default)]
        seed: u64,
    },
    Kde {
        points: Vec<f64>,
        /// Per-point weights; absent means uniform.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weights: Option<Vec<f64>>,
        bandwidth: f64,
        /// True when the bandwidth was supplied rather than chosen by Silverman's rule.
        #[serde(default)]
        fixed_bandwidth: bool,
        samples: usize,
    },
}

impl DistEstimate {
    pub fn samples(&self) -> usize {
        match self {
            DistEstimate::Gaussian { samples, .. }
            | DistEstimate::Gmm { samples, .. }
            | DistEstimate::Kde { samples, .. } => *samples,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            DistEstimate::Gaussian { .. } => "gaussian",
            DistEstimate::Gmm { .. } => "gmm",
            DistEstimate::Kde { .. } => "kde",
        }
    }

    pub fn pdf(&self, x: f64) -> f64 {
        match self {
            DistEstimate::Gaussian { mean, variance, .. } => normal_pdf(x, *mean, *variance),
            DistEstimate::Gmm {
                weights,
                means,
                variances,
                ..
            } => weights
                .iter()
                .zip(means)
                .zip(variances)
                .map(|((w, m), v)| w * normal_pdf(x, *m, *v))
                .sum(),
            DistEstimate::Kde {
                points,
                weights,
                bandwidth,
                ..
            } => {
                let h = *bandwidth;
                let kernel = |p: f64| {
                    let u = (x - p) / h;
                    (-0.5 * u * u).exp() / (2.0 * PI).sqrt()
                };
                match weights {
                    None => {
                        points.iter().map(|&p| kernel(p)).sum::<f64>() / (h * points.len() as f64)
                    }
                    Some(w) => {
                        let total: f64 = w.iter().sum();
                        points
                            .iter()
                            .zip(w)
                            .map(|(&p, wi)| wi * kernel(p))
                            .sum::<f64>()
                            / (h * total)
                    }
                }
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            DistEstimate::Gaussian { mean, .. } => *mean,
            DistEstimate::Gmm { weights, means, .. } => {
                weights.iter().zip(means).map(|(w, m)| w * m).sum()
            }
            DistEstimate::Kde {
                points, weights, ..
            } => match weights {
                None => points.iter().sum::<f64>() / points.len() as f64,
                Some(w) => {
                    points.iter().zip(w).map(|(p, wi)| p * wi).sum::<f64>() / w.iter().sum::<f64>()
                }
            },
        }
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        match self {
            DistEstimate::Gaussian { variance, .. } => *variance,
            DistEstimate::Gmm {
                weights,
                means,
                variances,
                ..
            } => weights
                .iter()
                .zip(means)
                .zip(variances)
                .map(|((w, m), v)| w * (v + (m - mu).powi(2)))
                .sum(),
            DistEstimate::Kde {
                points,
                weights,
                bandwidth,
                ..
            } => {
                let spread = match weights {
                    None => {
                        points.iter().map(|p| (p - mu).powi(2)).sum::<f64>() / points.len() as f64
                    }
                    Some(w) => {
                        points
                            .iter()
                            .zip(w)
                            .map(|(p, wi)| wi * (p - mu).powi(2))
                            .sum::<f64>()
                            / w.iter().sum::<f64>()
                    }
                };
                spread + bandwidth * bandwidth
            }
        }
    }

    /// An interval holding essentially all of the mass: ±5 standard deviations
    /// around every Gaussian piece.
    pub fn support(&self) -> (f64, f64) {
        let span = |m: f64, sd: f64| (m - 5.0 * sd, m + 5.0 * sd);
        let pieces: Vec<(f64, f64)> = match self {
            DistEstimate::Gaussian { mean, variance, .. } => vec![span(*mean, variance.sqrt())],
            DistEstimate::Gmm {
                means, variances, ..
            } => means
                .iter()
                .zip(variances)
                .map(|(m, v)| span(*m, v.sqrt()))
                .collect(),
            DistEstimate::Kde {
                points, bandwidth, ..
            } => points.iter().map(|&p| span(p, *bandwidth)).collect(),
        };
        pieces
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(a, b)| {
                (lo.min(a), hi.max(b))
            })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        match self {
            DistEstimate::Gaussian { mean, variance, .. } => mean + variance.sqrt() * z,
            DistEstimate::Gmm {
                weights,
                means,
                variances,
                ..
            } => {
                let k = pick(weights, rng.random::<f64>());
                means[k] + variances[k].sqrt() * z
            }
            DistEstimate::Kde {
                points,
                weights,
                bandwidth,
                ..
            } => {
                let u: f64 = rng.random();
                let k = match weights {
                    None => ((u * points.len() as f64) as usize).min(points.len() - 1),
                    Some(w) => pick(w, u),
                };
                points[k] + bandwidth * z
            }
        }
    }

    /// Parameter validity: the compatibility predicate for a single estimate.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| {
            Err(Error::invalid(format!(
                "invalid {} estimate: {msg}",
                self.kind_name()
            )))
        };
        match self {
            DistEstimate::Gaussian { mean, variance, .. } => {
                if !mean.is_finite() || !variance.is_finite() || *variance < GAUSSIAN_VAR_FLOOR {
                    return bad(format!("mean {mean}, variance {variance}"));
                }
            }
            DistEstimate::Gmm {
                weights,
                means,
                variances,
                ..
            } => {
                if weights.is_empty()
                    || weights.len() != means.len()
                    || means.len() != variances.len()
                {
                    return bad("component arrays disagree in length".into());
                }
                if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
                    return bad("weights must be positive".into());
                }
                if (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                    return bad("weights must sum to one".into());
                }
                if means.iter().any(|m| !m.is_finite())
                    || variances
                        .iter()
                        .any(|v| !v.is_finite() || *v < GAUSSIAN_VAR_FLOOR)
                {
                    return bad("non-finite mean or variance below floor".into());
                }
            }
            DistEstimate::Kde {
                points,
                weights,
                bandwidth,
                ..
            } => {
                if points.is_empty() || points.iter().any(|p| !p.is_finite()) {
                    return bad("points must be finite and nonempty".into());
                }
                if !(*bandwidth > 0.0 && bandwidth.is_finite()) {
                    return bad(format!("bandwidth {bandwidth}"));
                }
                if let Some(w) = weights {
                    if w.len() != points.len()
                        || w.iter().any(|x| !(*x >= 0.0) || !x.is_finite())
                        || !(w.iter().sum::<f64>() > 0.0)
                    {
                        return bad("weights must be nonnegative with positive total".into());
                    }
                }
            }
        }
        Ok(())
    }
}

/// Index `k` with cumulative weight exceeding `u·Σw`.
fn pick(weights: &[f64], u: f64) -> usize {
    let total: f64 = weights.iter().sum();
    let target = u * total;
    let mut acc = 0.0;
    for (k, w) in weights.iter().enumerate() {
        acc += w;
        if target < acc {
            return k;
        }
    }
    weights.len() - 1
}

/// Samples sorted ascending with their weights rescaled so the largest is 1.
/// Uniform weights therefore become exactly 1.0 and the weighted and unweighted
/// paths coincide bit for bit.
fn prepare(samples: &[f64], weights: Option<&[f64]>) -> Result<Vec<(f64, f64)>> {
    if samples.is_empty() {
        return Err(Error::invalid(
            "cannot fit a distribution to an empty sample",
        ));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("non-finite sample"));
    }
    let mut pairs: Vec<(f64, f64)> = match weights {
        None => samples.iter().map(|&x| (x, 1.0)).collect(),
        Some(w) => {
            if w.len() != samples.len() {
                return Err(Error::Dimension {
                    expected: samples.len(),
                    got: w.len(),
                });
            }
            if w.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
                return Err(Error::invalid("weights must be finite and nonnegative"));
            }
            let max = w.iter().copied().fold(0.0, f64::max);
            if max <= 0.0 {
                return Err(Error::invalid("all weights are zero"));
            }
            samples
                .iter()
                .zip(w)
                .map(|(&x, &wi)| (x, wi / max))
                .collect()
        }
    };
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    Ok(pairs)
}

fn weighted_moments(pairs: &[(f64, f64)]) -> (f64, f64, f64) {
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    let mean = pairs.iter().map(|(x, w)| w * x).sum::<f64>() / total;
    let var = pairs
        .iter()
        .map(|(x, w)| w * (x - mean).powi(2))
        .sum::<f64>()
        / total;
    (total, mean, var)
}

/// Kish effective sample size `(Σw)²/Σw²`.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let s: f64 = weights.iter().sum();
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    if s2 > 0.0 {
        s * s / s2
    } else {
        0.0
    }
}

/// Maximum-likelihood Gaussian: sample mean and biased variance.
pub fn fit_gaussian(samples: &[f64]) -> Result<DistEstimate> {
    fit_gaussian_weighted(samples, None)
}

pub fn fit_gaussian_weighted(samples: &[f64], weights: Option<&[f64]>) -> Result<DistEstimate> {
    let pairs = prepare(samples, weights)?;
    let (_, mean, var) = weighted_moments(&pairs);
    Ok(DistEstimate::Gaussian {
        mean,
        variance: var.max(GAUSSIAN_VAR_FLOOR),
        samples: samples.len(),
    })
}

/// Gaussian mixture with `k` components fitted by EM.
pub fn fit_gmm(samples: &[f64], k: usize, seed: u64) -> Result<DistEstimate> {
    fit_gmm_traced(samples, None, k, seed).map(|(e, _)| e)
}

pub fn fit_gmm_weighted(
    samples: &[f64],
    weights: Option<&[f64]>,
    k: usize,
    seed: u64,
) -> Result<DistEstimate> {
    fit_gmm_traced(samples, weights, k, seed).map(|(e, _)| e)
}

/// EM with seeded k-means++ initialization over the sorted sample. Returns the
/// estimate and the log-likelihood after every E-step.
pub fn fit_gmm_traced(
    samples: &[f64],
    weights: Option<&[f64]>,
    k: usize,
    seed: u64,
) -> Result<(DistEstimate, Vec<f64>)> {
    if k < 1 {
        return Err(Error::invalid("a mixture needs at least one component"));
    }
    if k > samples.len() {
        return Err(Error::invalid(format!(
            "{k} components requested for {} samples",
            samples.len()
        )));
    }
    let pairs = prepare(samples, weights)?;
    let n = pairs.len();
    let (total, _, overall_var) = weighted_moments(&pairs);

    let mut rng = seed::rng(seed);
    let mut centers: Vec<f64> = Vec::with_capacity(k);
    let first = pick(&pairs.iter().map(|p| p.1).collect::<Vec<_>>(), rng.random());
    centers.push(pairs[first].0);
    while centers.len() < k {
        let d2: Vec<f64> = pairs
            .iter()
            .map(|(x, w)| {
                let d = centers
                    .iter()
                    .map(|c| (x - c).powi(2))
                    .fold(f64::INFINITY, f64::min);
                w * d
            })
            .collect();
        let next = if d2.iter().sum::<f64>() > 0.0 {
            pick(&d2, rng.random())
        } else {
            pick(&pairs.iter().map(|p| p.1).collect::<Vec<_>>(), rng.random())
        };
        centers.push(pairs[next].0);
    }
    centers.sort_by(f64::total_cmp);

    let mut pi = vec![1.0 / k as f64; k];
    let mut mu = centers;
    let mut var = vec![overall_var.max(GMM_VAR_FLOOR); k];
    let mut resp = vec![vec![0.0; k]; n];
    let mut trace = Vec::new();

    for iter in 0..EM_MAX_ITER {
        // E-step
        let mut ll = 0.0;
        for (i, (x, w)) in pairs.iter().enumerate() {
            let logs: Vec<f64> = (0..k)
                .map(|c| pi[c].ln() + normal_ln_pdf(*x, mu[c], var[c]))
                .collect();
            let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = logs.iter().map(|l| (l - top).exp()).sum();
            let lse = top + sum.ln();
            ll += w * lse;
            for c in 0..k {
                resp[i][c] = (logs[c] - lse).exp();
            }
        }
        let converged =
            iter > 0 && ll - trace.last().copied().unwrap_or(f64::NEG_INFINITY) < EM_TOL;
        trace.push(ll);
        if converged {
            break;
        }
        // M-step
        for c in 0..k {
            let nk: f64 = pairs.iter().zip(&resp).map(|((_, w), r)| w * r[c]).sum();
            if nk <= 0.0 {
                pi[c] = WEIGHT_FLOOR;
                continue;
            }
            let m = pairs
                .iter()
                .zip(&resp)
                .map(|((x, w), r)| w * r[c] * x)
                .sum::<f64>()
                / nk;
            let v = pairs
                .iter()
                .zip(&resp)
                .map(|((x, w), r)| w * r[c] * (x - m).powi(2))
                .sum::<f64>()
                / nk;
            pi[c] = (nk / total).max(WEIGHT_FLOOR);
            mu[c] = m;
            var[c] = v.max(GMM_VAR_FLOOR);
        }
        let s: f64 = pi.iter().sum();
        pi.iter_mut().for_each(|p| *p /= s);
    }

    Ok((
        DistEstimate::Gmm {
            weights: pi,
            means: mu,
            variances: var,
            samples: samples.len(),
            seed,
        },
        trace,
    ))
}

/// Silverman's rule `1.06·σ̂·n^(-1/5)` with `σ̂ = max(sample std, 1e-6)`.
pub fn silverman_bandwidth(samples: &[f64]) -> Result<f64> {
    let pairs = prepare(samples, None)?;
    Ok(silverman(&pairs))
}

/// Weighted form: weighted standard deviation with Kish's effective sample size.
fn silverman(pairs: &[(f64, f64)]) -> f64 {
    let (_, _, var_pop) = weighted_moments(pairs);
    let w: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let n_eff = effective_sample_size(&w);
    let std = if n_eff > 1.0 {
        (var_pop * n_eff / (n_eff - 1.0)).sqrt()
    } else {
        0.0
    };
    1.06 * std.max(KDE_STD_FLOOR) * n_eff.powf(-0.2)
}

/// Gaussian-kernel density estimate; `bandwidth = None` applies Silverman's rule.
pub fn fit_kde(samples: &[f64], bandwidth: Option<f64>) -> Result<DistEstimate> {
    fit_kde_weighted(samples, None, bandwidth)
}

pub fn fit_kde_weighted(
    samples: &[f64],
    weights: Option<&[f64]>,
    bandwidth: Option<f64>,
) -> Result<DistEstimate> {
    if let Some(h) = bandwidth {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::invalid(format!(
                "bandwidth must be positive, got {h}"
            )));
        }
    }
    let pairs = prepare(samples, weights)?;
    let h = bandwidth.unwrap_or_else(|| silverman(&pairs));
    let uniform = pairs.iter().all(|p| p.1 == 1.0);
    Ok(DistEstimate::Kde {
        points: pairs.iter().map(|p| p.0).collect(),
        weights: if uniform {
            None
        } else {
            Some(pairs.iter().map(|p| p.1).collect())
        },
        bandwidth: h,
        fixed_bandwidth: bandwidth.is_some(),
        samples: samples.len(),
    })
}

/// Bayesian information criterion of a fitted estimate on unweighted samples.
pub fn bic(estimate: &DistEstimate, samples: &[f64]) -> f64 {
    let ll: f64 = samples
        .iter()
        .map(|&x| estimate.pdf(x).max(f64::MIN_POSITIVE).ln())
        .sum();
    let params = match estimate {
        DistEstimate::Gaussian { .. } => 2.0,
        DistEstimate::Gmm { weights, .. } => (3 * weights.len() - 1) as f64,
        DistEstimate::Kde { .. } => 1.0,
    };
    -2.0 * ll + params * (samples.len() as f64).ln()
}

/// Which estimator to fit for a latent.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EstimatorKind {
    #[default]
    Gaussian,
    Gmm {
        components: usize,
    },
    Kde {
        #[serde(default)]
        bandwidth: Option<f64>,
    },
    /// Mixture with BIC-chosen `K ∈ 1..=5` when it beats one Gaussian by more than the BIC gap.
    Auto,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    #[serde(default)]
    pub default: EstimatorKind,
    #[serde(default)]
    pub per_latent: BTreeMap<usize, EstimatorKind>,
}

impl AnalysisConfig {
    pub fn kind_for(&self, latent: usize) -> EstimatorKind {
        self.per_latent
            .get(&latent)
            .copied()
            .unwrap_or(self.default)
    }
}

/// Fits an estimator of the given kind.
pub fn fit_kind(kind: EstimatorKind, samples: &[f64], seed: u64) -> Result<DistEstimate> {
    match kind {
        EstimatorKind::Gaussian => fit_gaussian(samples),
        EstimatorKind::Gmm { components } => fit_gmm(samples, components, seed),
        EstimatorKind::Kde { bandwidth } => fit_kde(samples, bandwidth),
        EstimatorKind::Auto => fit_auto(samples, seed),
    }
}

/// BIC model selection between one Gaussian and mixtures of up to five components.
pub fn fit_auto(samples: &[f64], seed: u64) -> Result<DistEstimate> {
    let single = fit_gaussian(samples)?;
    let base = bic(&single, samples);
    let mut best: Option<(f64, DistEstimate)> = None;
    for k in 2..=AUTO_MAX_COMPONENTS.min(samples.len()) {
        let est = fit_gmm(samples, k, seed::sub_seed(seed, k as u64))?;
        let score = bic(&est, samples);
        if best.as_ref().is_none_or(|(b, _)| score < *b) {
            best = Some((score, est));
        }
    }
    Ok(match best {
        Some((score, est)) if base - score > BIC_GAP => est,
        _ => single,
    })
}

/// Refits with sample weights, keeping the estimate's kind, component count and
/// initialization seed.
pub fn refit_weighted(
    template: &DistEstimate,
    samples: &[f64],
    weights: &[f64],
) -> Result<DistEstimate> {
    match template {
        DistEstimate::Gaussian { .. } => fit_gaussian_weighted(samples, Some(weights)),
        DistEstimate::Gmm {
            weights: pi, seed, ..
        } => fit_gmm_weighted(samples, Some(weights), pi.len(), *seed),
        DistEstimate::Kde {
            bandwidth,
            fixed_bandwidth,
            ..
        } => fit_kde_weighted(
            samples,
            Some(weights),
            fixed_bandwidth.then_some(*bandwidth),
        ),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetFit {
    pub subset: usize,
    pub estimate: DistEstimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentFits {
    pub latent: usize,
    pub fits: Vec<SubsetFit>,
}

/// The data representation: one estimate per (latent, subset) pair, plus the
/// subset mixing proportions used when sampling.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Representation {
    pub entries: Vec<LatentFits>,
    /// Share of the data in each subset index.
    pub mixing: Vec<f64>,
}

impl Representation {
    pub fn estimate(&self, latent: usize, subset: usize) -> Option<&DistEstimate> {
        self.entries
            .get(latent)
            .and_then(|e| e.fits.iter().find(|f| f.subset == subset))
            .map(|f| &f.estimate)
    }

    pub fn n_entries(&self) -> usize {
        self.entries.iter().map(|e| e.fits.len()).sum()
    }

    /// Compatibility with a data model: one valid estimate per (t, ℓ) pair.
    pub fn validate(&self, model: &DataModel) -> Result<()> {
        if self.entries.len() != model.dim() {
            return Err(Error::invalid(format!(
                "representation has {} latents, model has {}",
                self.entries.len(),
                model.dim()
            )));
        }
        let max_subsets = model.subset_counts().into_iter().max().unwrap_or(1);
        if self.mixing.len() != max_subsets
            || self.mixing.iter().any(|w| !(*w >= 0.0))
            || (self.mixing.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::invalid(
                "mixing proportions must be a distribution over subsets",
            ));
        }
        for (t, (entry, latent)) in self.entries.iter().zip(&model.latents).enumerate() {
            if entry.latent != t {
                return Err(Error::invalid(format!(
                    "entry {t} is labelled latent {}",
                    entry.latent
                )));
            }
            let n_t = latent.subsets.len();
            if n_t != 1 && n_t != max_subsets {
                return Err(Error::invalid(format!(
                    "latent {t} has an inconsistent subset count"
                )));
            }
            if entry.fits.len() != n_t {
                return Err(Error::invalid(format!(
                    "latent {t} has {} estimates for {n_t} subsets",
                    entry.fits.len()
                )));
            }
            for (l, fit) in entry.fits.iter().enumerate() {
                if fit.subset != l {
                    return Err(Error::invalid(format!(
                        "latent {t}: subset ids out of order"
                    )));
                }
                fit.estimate.validate()?;
            }
        }
        Ok(())
    }
}

/// Positions of `I^(E)` rows within the extracted slice.
pub(crate) fn row_positions(extracted: &DataSlice) -> HashMap<usize, usize> {
    extracted
        .rows
        .iter()
        .enumerate()
        .map(|(p, &r)| (r, p))
        .collect()
}

pub(crate) fn check_extracted(model: &DataModel, extracted: &DataSlice) -> Result<()> {
    model.check_schema(extracted.data.schema())?;
    if extracted.rows != model.rows {
        return Err(Error::invalid(
            "extracted rows do not match the rows the model was fitted on",
        ));
    }
    Ok(())
}

/// Subset `ℓ` sample of latent `t`.
pub(crate) fn subset_samples(
    latents: &[Vec<f64>],
    positions: &HashMap<usize, usize>,
    rows: &[usize],
    t: usize,
) -> Result<Vec<f64>> {
    rows.iter()
        .map(|r| {
            positions
                .get(r)
                .map(|&p| latents[p][t])
                .ok_or_else(|| Error::invalid(format!("subset row {r} is not an extracted row")))
        })
        .collect()
}

pub(crate) fn fit_seed(seed: u64, latent: usize, subset: usize) -> u64 {
    seed::sub_seed(seed::sub_seed(seed, latent as u64), subset as u64)
}

/// Fits the configured estimator for every latent and subset.
pub fn analyze(
    model: &DataModel,
    extracted: &DataSlice,
    config: &AnalysisConfig,
    seed: u64,
) -> Result<Representation> {
    check_extracted(model, extracted)?;
    let latents = model.encode_data(&extracted.data)?;
    let positions = row_positions(extracted);
    let mut entries = Vec::with_capacity(model.dim());
    for (t, latent) in model.latents.iter().enumerate() {
        let kind = config.kind_for(t);
        let mut fits = Vec::with_capacity(latent.subsets.len());
        for (l, subset) in latent.subsets.iter().enumerate() {
            if subset.rows.is_empty() {
                return Err(Error::invalid(format!(
                    "latent {t}, subset {l} has no rows"
                )));
            }
            let samples = subset_samples(&latents, &positions, &subset.rows, t)?;
            fits.push(SubsetFit {
                subset: l,
                estimate: fit_kind(kind, &samples, fit_seed(seed, t, l))?,
            });
        }
        entries.push(LatentFits { latent: t, fits });
    }
    let widest = model
        .latents
        .iter()
        .max_by_key(|l| l.subsets.len())
        .ok_or_else(|| Error::invalid("model has no latents"))?;
    let total: usize = widest.subsets.iter().map(|s| s.rows.len()).sum();
    let mixing = widest
        .subsets
        .iter()
        .map(|s| s.rows.len() as f64 / total as f64)
        .collect();
    let rep = Representation { entries, mixing };
    rep.validate(model)?;
    Ok(rep)
}

/// Fits the configured estimators on rows outside the model's training set,
/// such as a sample drawn under a hypothetical condition. Labelled subsets take
/// the rows carrying their category; unlabelled subsets take every row.
pub fn analyze_rows(
    model: &DataModel,
    data: &Dataset,
    config: &AnalysisConfig,
    seed: u64,
) -> Result<Representation> {
    model.check_schema(data.schema())?;
    let latents = model.encode_data(data)?;
    let members = |subset: &crate::model::Subset| -> Vec<usize> {
        (0..data.n())
            .filter(|&i| match &subset.label {
                Some(lab) => data.record(i)[lab.attribute] == Value::Cat(lab.category),
                None => true,
            })
            .collect()
    };
    let mut entries = Vec::with_capacity(model.dim());
    for (t, latent) in model.latents.iter().enumerate() {
        let kind = config.kind_for(t);
        let mut fits = Vec::with_capacity(latent.subsets.len());
        for (l, subset) in latent.subsets.iter().enumerate() {
            let samples: Vec<f64> = members(subset).into_iter().map(|i| latents[i][t]).collect();
            if samples.is_empty() {
                return Err(Error::invalid(format!(
                    "latent {t}, subset {l} has no rows"
                )));
            }
            fits.push(SubsetFit {
                subset: l,
                estimate: fit_kind(kind, &samples, fit_seed(seed, t, l))?,
            });
        }
        entries.push(LatentFits { latent: t, fits });
    }
    let widest = model
        .latents
        .iter()
        .max_by_key(|l| l.subsets.len())
        .ok_or_else(|| Error::invalid("model has no latents"))?;
    let counts: Vec<usize> = widest.subsets.iter().map(|s| members(s).len()).collect();
    let total: usize = counts.iter().sum();
    let rep = Representation {
        entries,
        mixing: counts.iter().map(|&c| c as f64 / total as f64).collect(),
    };
    rep.validate(model)?;
    Ok(rep)
}
