//! Budgeted extraction: positive-unlabeled record extraction around the target
//! window and correlation-based attribute selection.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Codec, Dataset};
use crate::error::{Error, Result};
use crate::request::{target_window, ConditionExpr};
use crate::seed;

/// `⌈α·total⌉`, robust to representation error in `α` (0.2·100 is 20, not 21).
pub fn budget_count(alpha: f64, total: usize) -> usize {
    let raw = alpha * total as f64;
    let rounded = raw.round();
    if (raw - rounded).abs() <= 1e-9 * raw.abs().max(1.0) {
        rounded as usize
    } else {
        raw.ceil() as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticHyper {
    /// Upper bound on the step size; the effective step is also capped by `1/L`
    /// for the loss's Lipschitz-gradient bound `L`, which keeps the loss monotone.
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
}

impl Default for LogisticHyper {
    fn default() -> Self {
        LogisticHyper {
            learning_rate: 4.0,
            epochs: 200,
            l2: 1e-3,
        }
    }
}

/// L2-regularized logistic regression; the bias is not regularized.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub hyper: LogisticHyper,
}

fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^t)` without overflow.
fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

impl LogisticModel {
    pub fn zeros(dim: usize, hyper: LogisticHyper) -> Self {
        LogisticModel {
            weights: vec![0.0; dim],
            bias: 0.0,
            hyper,
        }
    }

    fn logit(&self, x: &[f64]) -> f64 {
        self.bias + self.weights.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }

    /// Mean logistic loss plus `l2/2·‖w‖²`.
    pub fn loss(&self, x: &[Vec<f64>], y: &[bool]) -> f64 {
        let n = x.len() as f64;
        let data: f64 = x
            .iter()
            .zip(y)
            .map(|(xi, &yi)| {
                let t = self.logit(xi);
                if yi {
                    softplus(-t)
                } else {
                    softplus(t)
                }
            })
            .sum::<f64>()
            / n;
        data + 0.5 * self.hyper.l2 * self.weights.iter().map(|w| w * w).sum::<f64>()
    }
}

/// Full-batch gradient descent on the regularized logistic loss.
pub fn train_logistic(
    x: &[Vec<f64>],
    y: &[bool],
    hyper: LogisticHyper,
    seed: u64,
) -> Result<LogisticModel> {
    train_logistic_traced(x, y, hyper, seed).map(|(m, _)| m)
}

/// As [`train_logistic`], also returning the loss before each epoch and after the last.
pub fn train_logistic_traced(
    x: &[Vec<f64>],
    y: &[bool],
    hyper: LogisticHyper,
    seed: u64,
) -> Result<(LogisticModel, Vec<f64>)> {
    if x.len() != y.len() {
        return Err(Error::Dimension {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(Error::invalid(
            "logistic regression needs at least two rows",
        ));
    }
    if y.iter().all(|&b| b) || y.iter().all(|&b| !b) {
        return Err(Error::invalid("logistic regression needs both classes"));
    }
    let dim = x[0].len();
    if x.iter().any(|r| r.len() != dim) {
        return Err(Error::invalid("ragged feature matrix"));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite feature value"));
    }
    if !(hyper.learning_rate > 0.0 && hyper.l2 >= 0.0) {
        return Err(Error::invalid(
            "learning rate must be positive and l2 nonnegative",
        ));
    }

    let n = x.len() as f64;
    // Gradient Lipschitz bound: ¼·λmax(X̃ᵀX̃)/n + l2 ≤ ¼·‖X̃‖²_F/n + l2, X̃ = [X 1].
    let frob: f64 = x
        .iter()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>() + 1.0)
        .sum();
    let lipschitz = 0.25 * frob / n + hyper.l2;
    let step = hyper.learning_rate.min(1.0 / lipschitz);

    let mut rng = seed::rng(seed);
    let mut model = LogisticModel {
        weights: (0..dim).map(|_| rng.random_range(-0.01..0.01)).collect(),
        bias: 0.0,
        hyper,
    };
    let mut trace = Vec::with_capacity(hyper.epochs + 1);
    let mut grad = vec![0.0; dim];
    for _ in 0..hyper.epochs {
        trace.push(model.loss(x, y));
        grad.fill(0.0);
        let mut gb = 0.0;
        for (xi, &yi) in x.iter().zip(y) {
            let r = model.predict(xi) - if yi { 1.0 } else { 0.0 };
            gb += r;
            for (g, v) in grad.iter_mut().zip(xi) {
                *g += r * v;
            }
        }
        for (w, g) in model.weights.iter_mut().zip(&grad) {
            *w -= step * (g / n + hyper.l2 * *w);
        }
        model.bias -= step * gb / n;
    }
    trace.push(model.loss(x, y));
    if model.weights.iter().any(|w| !w.is_finite()) || !model.bias.is_finite() {
        return Err(Error::invalid("logistic regression diverged"));
    }
    Ok((model, trace))
}

/// Positive-unlabeled extraction parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PuParams {
    pub iterations: usize,
    pub theta_hi: f64,
    pub theta_lo: f64,
    pub tau: f64,
    pub neg_frac: f64,
    pub logistic: LogisticHyper,
}

impl Default for PuParams {
    fn default() -> Self {
        PuParams {
            iterations: 100,
            theta_hi: 0.8,
            theta_lo: 0.2,
            tau: 0.5,
            neg_frac: 0.1,
            logistic: LogisticHyper::default(),
        }
    }
}

/// `(I^(E), J^(E))` plus the classifier's membership probabilities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractionResult {
    /// `I^(E)`, ascending.
    pub rows: Vec<usize>,
    /// `J^(E)`, ascending.
    pub cols: Vec<usize>,
    /// `I_q`, ascending.
    pub window: Vec<usize>,
    /// Final classifier probability for every candidate (non-window) row.
    pub probabilities: BTreeMap<usize, f64>,
    pub tau: f64,
    /// PU iterations actually run (early stop on unchanged labels).
    pub iterations_run: usize,
}

impl ExtractionResult {
    pub fn n_extracted(&self) -> usize {
        self.rows.len()
    }

    pub fn m_extracted(&self) -> usize {
        self.cols.len()
    }
}

/// Record extraction by iterative positive-unlabeled self-training.
///
/// Window rows are positives. A random subset of candidates is labeled negative,
/// then each iteration trains a classifier on the current labels and rebuilds the
/// labeled sets from confident predictions (`p ≥ θ_hi` positive, `p ≤ θ_lo`
/// negative). The final classifier scores every candidate; candidates with
/// `p > τ` are added by decreasing probability until the row budget is used.
#[allow(clippy::too_many_arguments)]
pub fn pu_extract(
    data: &Dataset,
    condition: &ConditionExpr,
    select: &[usize],
    alpha_r: f64,
    alpha_c: f64,
    cols: &[usize],
    params: &PuParams,
    seed: u64,
) -> Result<ExtractionResult> {
    let window = target_window(data, condition, select)?.rows;
    let mut cols = cols.to_vec();
    cols.sort_unstable();
    cols.dedup();
    for j in select {
        if !cols.contains(j) {
            return Err(Error::invalid(format!(
                "column set must contain selected attribute {j}"
            )));
        }
    }
    let col_cap = budget_count(alpha_c, data.m());
    if cols.len() > col_cap {
        return Err(Error::Budget(format!(
            "{} columns exceed the column budget {col_cap}",
            cols.len()
        )));
    }
    let row_cap = budget_count(alpha_r, data.n());
    if row_cap < window.len() {
        return Err(Error::Budget(format!(
            "target window has {} rows but the row budget allows {row_cap}; increase alpha_r",
            window.len()
        )));
    }
    if !(params.theta_lo < params.theta_hi) {
        return Err(Error::invalid("theta_lo must be below theta_hi"));
    }

    let in_window: BTreeSet<usize> = window.iter().copied().collect();
    let candidates: Vec<usize> = (0..data.n()).filter(|i| !in_window.contains(i)).collect();
    if candidates.is_empty() {
        return Ok(ExtractionResult {
            rows: window.clone(),
            cols,
            window,
            probabilities: BTreeMap::new(),
            tau: params.tau,
            iterations_run: 0,
        });
    }

    let codec = Codec::build_for(data, &cols)?;
    let features: Vec<Vec<f64>> = data
        .records()
        .iter()
        .map(|r| codec.encode_record(r))
        .collect::<Result<_>>()?;

    let mut rng = seed::rng(seed);
    let n_neg = ((params.neg_frac * candidates.len() as f64).round() as usize)
        .max(1)
        .min(window.len())
        .min(candidates.len());
    let mut seeded_neg: Vec<usize> = rand::seq::index::sample(&mut rng, candidates.len(), n_neg)
        .into_iter()
        .map(|k| candidates[k])
        .collect();
    seeded_neg.sort_unstable();
    let seeded: BTreeSet<usize> = seeded_neg.iter().copied().collect();
    let unlabeled: Vec<usize> = candidates
        .iter()
        .copied()
        .filter(|i| !seeded.contains(i))
        .collect();

    let mut promoted_pos: BTreeSet<usize> = BTreeSet::new();
    let mut promoted_neg: BTreeSet<usize> = BTreeSet::new();
    let mut model = None;
    let mut iterations_run = 0;
    for it in 0..params.iterations {
        iterations_run = it + 1;
        let positives = window.iter().chain(promoted_pos.iter());
        let negatives = seeded_neg.iter().chain(promoted_neg.iter());
        let (x, y): (Vec<Vec<f64>>, Vec<bool>) = positives
            .map(|&i| (features[i].clone(), true))
            .chain(negatives.map(|&i| (features[i].clone(), false)))
            .unzip();
        let m = train_logistic(&x, &y, params.logistic, seed::sub_seed(seed, it as u64))?;
        let mut next_pos = BTreeSet::new();
        let mut next_neg = BTreeSet::new();
        for &i in &unlabeled {
            let p = m.predict(&features[i]);
            if p >= params.theta_hi {
                next_pos.insert(i);
            } else if p <= params.theta_lo {
                next_neg.insert(i);
            }
        }
        model = Some(m);
        if next_pos == promoted_pos && next_neg == promoted_neg {
            break;
        }
        promoted_pos = next_pos;
        promoted_neg = next_neg;
    }

    let probabilities: BTreeMap<usize, f64> = match &model {
        Some(m) => candidates
            .iter()
            .map(|&i| (i, m.predict(&features[i])))
            .collect(),
        None => candidates.iter().map(|&i| (i, 0.0)).collect(),
    };
    let mut ranked: Vec<(usize, f64)> = probabilities
        .iter()
        .filter(|(_, &p)| p > params.tau)
        .map(|(&i, &p)| (i, p))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(row_cap - window.len());
    let mut rows: Vec<usize> = window
        .iter()
        .copied()
        .chain(ranked.iter().map(|r| r.0))
        .collect();
    rows.sort_unstable();

    Ok(ExtractionResult {
        rows,
        cols,
        window,
        probabilities,
        tau: params.tau,
        iterations_run,
    })
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        0.0
    } else {
        (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
    }
}

/// Correlation score of every attribute against the target set: the maximum
/// `|Pearson|` over encoded components of the attribute and of any target.
pub fn attribute_scores(data: &Dataset, targets: &[usize]) -> Result<Vec<f64>> {
    let codec = Codec::build(data)?;
    let width = codec.width();
    let mut columns = vec![Vec::with_capacity(data.n()); width];
    for r in data.records() {
        for (k, v) in codec.encode_record(r)?.into_iter().enumerate() {
            columns[k].push(v);
        }
    }
    let comps = |j: usize| {
        let s = &codec.slots()[j];
        s.offset()..s.offset() + s.width()
    };
    let target_cols: Vec<usize> = targets.iter().flat_map(|&t| comps(t)).collect();
    Ok((0..data.m())
        .map(|j| {
            comps(j)
                .flat_map(|c| target_cols.iter().map(move |&t| (c, t)))
                .map(|(c, t)| pearson(&columns[c], &columns[t]).abs())
                .fold(0.0, f64::max)
        })
        .collect())
}

/// `J^(E)`: the target attributes plus the best-correlated others, up to `⌈α_C·m⌉`.
pub fn select_attributes(data: &Dataset, targets: &[usize], alpha_c: f64) -> Result<Vec<usize>> {
    if targets.is_empty() {
        return Err(Error::invalid("target attribute set is empty"));
    }
    let cap = budget_count(alpha_c, data.m());
    if cap < targets.len() {
        return Err(Error::Budget(format!(
            "column budget {cap} is smaller than the {} target attributes",
            targets.len()
        )));
    }
    let scores = attribute_scores(data, targets)?;
    let mut ranked: Vec<usize> = (0..data.m()).filter(|j| !targets.contains(j)).collect();
    ranked.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut out: Vec<usize> = targets
        .iter()
        .copied()
        .chain(ranked.into_iter().take(cap - targets.len()))
        .collect();
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// τ-covering: every extracted row has classifier probability above `tau`,
/// window rows counting as probability one.
pub fn check_covering(result: &ExtractionResult, tau: f64) -> bool {
    let window: BTreeSet<usize> = result.window.iter().copied().collect();
    result.rows.iter().all(|i| {
        if window.contains(i) {
            1.0 > tau
        } else {
            result.probabilities.get(i).is_some_and(|&p| p > tau)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{AttributeSpace, Schema, Value};
    use crate::request::CmpOp;

    #[test]
    fn budget_count_ignores_representation_error() {
        assert_eq!(budget_count(0.2, 100), 20);
        assert_eq!(budget_count(0.7, 10), 7);
        assert_eq!(budget_count(0.21, 100), 21);
        assert_eq!(budget_count(0.5, 5), 3);
    }

    #[test]
    fn zero_model_predicts_half() {
        let m = LogisticModel::zeros(3, LogisticHyper::default());
        assert_eq!(m.predict(&[1.0, -4.0, 9.0]), 0.5);
    }

    #[test]
    fn rejects_single_class_and_non_finite() {
        let x = vec![vec![1.0], vec![2.0]];
        assert!(train_logistic(&x, &[true, true], LogisticHyper::default(), 0).is_err());
        let x = vec![vec![f64::NAN], vec![2.0]];
        assert!(train_logistic(&x, &[true, false], LogisticHyper::default(), 0).is_err());
    }

    #[test]
    fn strong_l2_shrinks_weights() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64 - 10.0]).collect();
        let y: Vec<bool> = (0..20).map(|i| i >= 10).collect();
        let hyper = LogisticHyper {
            l2: 1e6,
            ..Default::default()
        };
        let m = train_logistic(&x, &y, hyper, 3).unwrap();
        let norm = m.weights.iter().map(|w| w * w).sum::<f64>().sqrt();
        assert!(norm < 1e-2, "{norm}");
    }

    #[test]
    fn loss_is_monotone() {
        let x: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![(i as f64 * 0.37).sin() * 3.0, (i as f64 * 0.11).cos()])
            .collect();
        let y: Vec<bool> = (0..40).map(|i| (i * 7) % 3 == 0).collect();
        let (_, trace) = train_logistic_traced(&x, &y, LogisticHyper::default(), 1).unwrap();
        for w in trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "{} -> {}", w[0], w[1]);
        }
    }

    fn two_col(rows: &[(f64, f64)]) -> Dataset {
        let schema = Schema::new(vec![
            AttributeSpace::continuous("a", None).unwrap(),
            AttributeSpace::continuous("b", None).unwrap(),
        ])
        .unwrap();
        Dataset::new(
            schema,
            rows.iter()
                .map(|&(a, b)| vec![Value::Num(a), Value::Num(b)])
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn whole_dataset_window_trains_nothing() {
        let d = two_col(&[(1.0, 2.0), (2.0, 1.0), (3.0, 0.0)]);
        let r = pu_extract(
            &d,
            &ConditionExpr::Const(true),
            &[0],
            0.99,
            0.99,
            &[0, 1],
            &PuParams::default(),
            0,
        )
        .unwrap();
        assert_eq!(r.rows, vec![0, 1, 2]);
        assert_eq!(r.iterations_run, 0);
        assert!(r.probabilities.is_empty());
        assert!(check_covering(&r, 0.5));
    }

    #[test]
    fn window_larger_than_budget_is_an_error() {
        let rows: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 0.0)).collect();
        let d = two_col(&rows);
        let c = ConditionExpr::num("a", CmpOp::Lt, 5.0);
        let err =
            pu_extract(&d, &c, &[0], 0.3, 0.99, &[0, 1], &PuParams::default(), 0).unwrap_err();
        assert!(matches!(err, Error::Budget(_)));
    }

    #[test]
    fn covering_check() {
        let mut r = ExtractionResult {
            rows: vec![0, 1, 2],
            cols: vec![0],
            window: vec![0],
            probabilities: [(1, 0.8), (2, 0.9), (3, 0.1)].into(),
            tau: 0.5,
            iterations_run: 1,
        };
        assert!(check_covering(&r, 0.5));
        r.probabilities.insert(2, 0.4);
        assert!(!check_covering(&r, 0.5));
        r.rows = vec![0];
        assert!(check_covering(&r, 0.99));
    }

    #[test]
    fn selection_budget_rules() {
        let rows: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, (i * i) as f64)).collect();
        let d = two_col(&rows);
        assert_eq!(select_attributes(&d, &[0], 0.5).unwrap(), vec![0]);
        assert!(matches!(
            select_attributes(&d, &[0, 1], 0.4),
            Err(Error::Budget(_))
        ));
    }

    #[test]
    fn equal_correlation_prefers_lower_index() {
        // t = a + b with a ⟂ b of equal variance: corr(t,a) = corr(t,b) = 1/√2.
        let schema = Schema::new(vec![
            AttributeSpace::continuous("t", None).unwrap(),
            AttributeSpace::continuous("a", None).unwrap(),
            AttributeSpace::continuous("b", None).unwrap(),
        ])
        .unwrap();
        let pts = [(1.0, 1.0), (1.0, -1.0), (-1.0, 1.0), (-1.0, -1.0)];
        let recs = pts
            .iter()
            .map(|&(a, b)| vec![Value::Num(a + b), Value::Num(a), Value::Num(b)])
            .collect();
        let d = Dataset::new(schema, recs).unwrap();
        let s = attribute_scores(&d, &[0]).unwrap();
        assert_eq!(s[1], s[2]);
        assert_eq!(select_attributes(&d, &[0], 0.6).unwrap(), vec![0, 1]);
    }
}
