//! Evaluation measures: plug-in information estimators, latent independence,
//! combining functions, reconstruction error, statistical distances and an
//! exhaustive optimum for tiny instances.
//!
//! Continuous columns are discretized into equal-frequency bins. A column with
//! no more distinct values than bins keeps one bin per value, so discrete data
//! is never split.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::analyze::{DistEstimate, Representation};
use crate::data::ExternalKnowledge;
use crate::data::{DataSlice, Dataset};
use crate::error::{Error, Result};
use crate::extract::budget_count;
use crate::extrapolate::ExtrapolatedRepresentation;
use crate::model::{fit_model, DataModel, ModelOptions};
use crate::request::{target_window, ConditionExpr};

pub const DEFAULT_BINS: usize = 10;
pub const DEFAULT_GRID: usize = 512;
/// Floor on the second argument of KL.
pub const KL_FLOOR: f64 = 1e-12;

/// `−Σ p ln p` in nats, `0 ln 0 = 0`.
pub fn entropy_discrete(p: &[f64]) -> Result<f64> {
    if p.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(Error::invalid(
            "probabilities must be finite and non-negative",
        ));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "probabilities sum to {total}, not 1"
        )));
    }
    Ok(p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| -x * x.ln())
        .sum::<f64>()
        .max(0.0))
}

/// Bin label of every value.
pub fn discretize(x: &[f64], bins: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
    let distinct = {
        let mut d = 0;
        for (k, &i) in order.iter().enumerate() {
            if k == 0 || x[i] != x[order[k - 1]] {
                d += 1;
            }
        }
        d
    };
    let mut out = vec![0; x.len()];
    let n = x.len();
    let mut label = 0;
    for (rank, &i) in order.iter().enumerate() {
        let tied = rank > 0 && x[i] == x[order[rank - 1]];
        if tied {
            out[i] = label;
            continue;
        }
        label = if distinct <= bins {
            if rank == 0 {
                0
            } else {
                label + 1
            }
        } else {
            rank * bins / n
        };
        out[i] = label;
    }
    out
}

/// Plug-in entropy of a sequence of hashable cells.
fn cell_entropy<K: std::hash::Hash + Eq>(cells: impl Iterator<Item = K>) -> f64 {
    let mut counts: HashMap<K, usize> = HashMap::new();
    let mut n = 0usize;
    for c in cells {
        *counts.entry(c).or_default() += 1;
        n += 1;
    }
    if n == 0 {
        return 0.0;
    }
    let mut sizes: Vec<usize> = counts.into_values().collect();
    // Fixed summation order keeps results independent of hash iteration.
    sizes.sort_unstable();
    let nf = n as f64;
    sizes
        .iter()
        .map(|&c| {
            let p = c as f64 / nf;
            -p * p.ln()
        })
        .sum::<f64>()
        .max(0.0)
}

/// Plug-in entropy of a binned column.
pub fn plugin_entropy(x: &[f64], bins: usize) -> f64 {
    cell_entropy(discretize(x, bins).into_iter())
}

fn check_bins(bins: usize) -> Result<()> {
    if bins < 2 {
        return Err(Error::invalid("bins must be at least 2"));
    }
    Ok(())
}

fn latent_cells(latents: &[Vec<f64>], n: usize, bins: usize) -> Result<Vec<Vec<usize>>> {
    let k = latents.first().map_or(0, |r| r.len());
    if latents.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: latents.len(),
        });
    }
    if latents.iter().any(|r| r.len() != k) {
        return Err(Error::invalid("latent rows have unequal lengths"));
    }
    let binned: Vec<Vec<usize>> = (0..k)
        .map(|t| discretize(&latents.iter().map(|r| r[t]).collect::<Vec<_>>(), bins))
        .collect();
    Ok((0..n)
        .map(|i| binned.iter().map(|col| col[i]).collect())
        .collect())
}

/// `H(Z | cells)` where cells are the joint bins of the latent columns.
/// `latents` is row-major, one row per value of `z`.
pub fn cond_entropy(z: &[f64], latents: &[Vec<f64>], bins: usize) -> Result<f64> {
    check_bins(bins)?;
    let cells = latent_cells(latents, z.len(), bins)?;
    let zb = discretize(z, bins);
    let joint = cell_entropy(cells.iter().zip(&zb).map(|(c, &b)| (c.clone(), b)));
    let marginal = cell_entropy(cells.into_iter());
    Ok((joint - marginal).max(0.0))
}

/// Re-identification entropy `H(record | cells)`: how uncertain a record's
/// identity stays given its binned latent code.
pub fn privacy_entropy(latents: &[Vec<f64>], bins: usize) -> Result<f64> {
    check_bins(bins)?;
    let n = latents.len();
    let cells = latent_cells(latents, n, bins)?;
    Ok(((n as f64).ln() - cell_entropy(cells.into_iter())).max(0.0))
}

/// Plug-in `H(X) + H(Y) − H(X,Y)`, clamped at zero.
pub fn mutual_info(x: &[f64], y: &[f64], bins: usize) -> Result<f64> {
    check_bins(bins)?;
    if x.len() != y.len() {
        return Err(Error::Dimension {
            expected: x.len(),
            got: y.len(),
        });
    }
    let bx = discretize(x, bins);
    let by = discretize(y, bins);
    let hx = cell_entropy(bx.iter().copied());
    let hy = cell_entropy(by.iter().copied());
    let hxy = cell_entropy(bx.into_iter().zip(by));
    Ok((hx + hy - hxy).max(0.0))
}

fn column(rows: &[Vec<f64>], t: usize) -> Vec<f64> {
    rows.iter().map(|r| r[t]).collect()
}

/// Mean mutual information over all (latent, target) pairs.
pub fn avg_mutual_info(latents: &[Vec<f64>], targets: &[Vec<f64>], bins: usize) -> Result<f64> {
    let k = latents.first().map_or(0, |r| r.len());
    if k == 0 || targets.is_empty() {
        return Err(Error::invalid(
            "average mutual information needs latents and targets",
        ));
    }
    let mut total = 0.0;
    for t in 0..k {
        let lt = column(latents, t);
        for y in targets {
            total += mutual_info(&lt, y, bins)?;
        }
    }
    Ok(total / (k * targets.len()) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PsiKind {
    /// Largest absolute off-diagonal Pearson correlation.
    Cov,
    /// Largest pairwise plug-in mutual information.
    Mi,
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
    }
}

/// Dependence measure `ψ` between latents; zero for a single latent.
pub fn independence_psi(latents: &[Vec<f64>], kind: PsiKind, bins: usize) -> Result<f64> {
    let k = latents.first().map_or(0, |r| r.len());
    if latents.iter().any(|r| r.len() != k) {
        return Err(Error::invalid("latent rows have unequal lengths"));
    }
    let cols: Vec<Vec<f64>> = (0..k).map(|t| column(latents, t)).collect();
    let mut psi: f64 = 0.0;
    for a in 0..k {
        for b in a + 1..k {
            let v = match kind {
                PsiKind::Cov => pearson(&cols[a], &cols[b]).abs(),
                PsiKind::Mi => mutual_info(&cols[a], &cols[b], bins)?,
            };
            psi = psi.max(v);
        }
    }
    Ok(psi)
}

pub fn is_kappa_independent(psi: f64, kappa: f64) -> bool {
    psi <= kappa
}

/// Weighted-sum objective `H_pri − λ·H_uti`.
pub fn phi(h_uti: f64, h_pri: f64, lambda: f64) -> f64 {
    h_pri - lambda * h_uti
}

/// Combined data-side score `−H_data − λ_ind·ψ`; higher is better.
pub fn xi(h_data: f64, psi: f64, lambda_ind: f64) -> f64 {
    -h_data - lambda_ind * psi
}

/// Mean squared error between rows and `Dec(Enc(rows))` in encoded space.
pub fn recon_error(model: &DataModel, rows: &Dataset) -> Result<f64> {
    model.check_schema(rows.schema())?;
    if rows.n() == 0 {
        return Err(Error::invalid("no rows to reconstruct"));
    }
    let mut total = 0.0;
    for r in rows.records() {
        let x = model.codec.encode_record(r)?;
        let y = model.reconstruct_encoded(&x)?;
        total += x
            .iter()
            .zip(&y)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    Ok(total / (rows.n() * model.encoded_width()) as f64)
}

pub fn is_reconstructable(err: f64, epsilon: f64) -> bool {
    err <= epsilon
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DistanceKind {
    Kl,
    Tv,
}

/// Exact distance between two probability tables.
pub fn table_distance(p: &[f64], q: &[f64], kind: DistanceKind) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Dimension {
            expected: p.len(),
            got: q.len(),
        });
    }
    Ok(match kind {
        DistanceKind::Kl => p
            .iter()
            .zip(q)
            .filter(|(a, _)| **a > 0.0)
            .map(|(a, b)| a * (a / b.max(KL_FLOOR)).ln())
            .sum::<f64>()
            .max(0.0),
        DistanceKind::Tv => {
            let mut terms: Vec<f64> = p.iter().zip(q).map(|(a, b)| (a - b).abs()).collect();
            // Sorted summation makes the result independent of argument order.
            terms.sort_by(f64::total_cmp);
            (0.5 * terms.iter().sum::<f64>()).min(1.0)
        }
    })
}

/// Distance between two estimated densities on a shared grid spanning both supports.
pub fn stat_distance(
    a: &DistEstimate,
    b: &DistEstimate,
    kind: DistanceKind,
    grid: usize,
) -> Result<f64> {
    if grid < 10 {
        return Err(Error::invalid("grid must have at least 10 points"));
    }
    let (la, ha) = a.support();
    let (lb, hb) = b.support();
    let lo = la.min(lb);
    let hi = ha.max(hb);
    let step = (hi - lo) / (grid - 1) as f64;
    let xs: Vec<f64> = (0..grid).map(|i| lo + step * i as f64).collect();
    let mass = |d: &DistEstimate| -> Vec<f64> {
        let raw: Vec<f64> = xs.iter().map(|&x| d.pdf(x) * step).collect();
        let total: f64 = raw.iter().sum();
        if total > 0.0 {
            raw.iter().map(|m| m / total).collect()
        } else {
            raw
        }
    };
    table_distance(&mass(a), &mass(b), kind)
}

/// Largest distance between corresponding `(t, ℓ)` estimates.
pub fn extrapolation_accuracy(
    produced: &ExtrapolatedRepresentation,
    reference: &Representation,
    kind: DistanceKind,
    grid: usize,
) -> Result<f64> {
    representation_distance(&produced.representation, reference, kind, grid)
}

/// Largest distance between corresponding `(t, ℓ)` estimates of two representations.
pub fn representation_distance(
    a: &Representation,
    b: &Representation,
    kind: DistanceKind,
    grid: usize,
) -> Result<f64> {
    let keys = |r: &Representation| -> Vec<(usize, usize)> {
        r.entries
            .iter()
            .flat_map(|e| e.fits.iter().map(move |f| (e.latent, f.subset)))
            .collect()
    };
    if keys(a) != keys(b) {
        return Err(Error::invalid(
            "representations have different (latent, subset) keys",
        ));
    }
    let mut worst: f64 = 0.0;
    for (ea, eb) in a.entries.iter().zip(&b.entries) {
        for (fa, fb) in ea.fits.iter().zip(&eb.fits) {
            worst = worst.max(stat_distance(&fa.estimate, &fb.estimate, kind, grid)?);
        }
    }
    Ok(worst)
}

/// `(partial − base) / (full − base)`.
pub fn gain_fraction(base: f64, partial: f64, full: f64) -> Result<f64> {
    if full == base {
        return Err(Error::invalid(
            "full score equals base score; gain fraction undefined",
        ));
    }
    Ok((partial - base) / (full - base))
}

/// A tiny instance for [`brute_force_optimal`].
#[derive(Clone, Debug)]
pub struct OracleProblem<'a> {
    pub data: &'a Dataset,
    pub condition: &'a ConditionExpr,
    pub select: &'a [usize],
    pub alpha_r: f64,
    pub alpha_c: f64,
    pub beta: usize,
    pub latent_dims: &'a [usize],
    /// Utility attribute index; always kept in the column set.
    pub utility: usize,
    pub bins: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleOptimum {
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub latent_dim: usize,
    pub entropy: f64,
    pub configurations: usize,
}

pub const ORACLE_MAX_ROWS: usize = 10;
pub const ORACLE_MAX_ATTRS: usize = 4;
pub const ORACLE_MAX_WIDTH: usize = 8;

/// `H(Z^(Uti) | latents)` of a fitted model on its own extracted rows.
pub fn utility_entropy(
    model: &DataModel,
    full: &Dataset,
    utility: usize,
    bins: usize,
) -> Result<f64> {
    let slice = full.slice(&model.rows, &model.cols)?;
    let latents = model.encode_data(&slice.data)?;
    let z = model
        .rows
        .iter()
        .map(|&i| full.record(i)[utility].as_f64())
        .collect::<Vec<_>>();
    cond_entropy(&z, &latents, bins)
}

fn subsets_of(items: &[usize]) -> impl Iterator<Item = Vec<usize>> + '_ {
    (0u32..1 << items.len()).map(move |mask| {
        items
            .iter()
            .enumerate()
            .filter(|(k, _)| mask & (1 << k) != 0)
            .map(|(_, &v)| v)
            .collect()
    })
}

/// Exhaustive minimum of the utility conditional entropy over row sets, column
/// sets and latent dimensions within budget. Ties go to the lexicographically
/// smallest `(J, I, dim)`.
pub fn brute_force_optimal(p: &OracleProblem<'_>) -> Result<OracleOptimum> {
    let data = p.data;
    let (n, m) = (data.n(), data.m());
    if n > ORACLE_MAX_ROWS || m > ORACLE_MAX_ATTRS {
        return Err(Error::invalid(format!(
            "oracle limited to {ORACLE_MAX_ROWS} rows and {ORACLE_MAX_ATTRS} attributes"
        )));
    }
    let full_width = crate::data::Codec::build(data)?.width();
    if full_width > ORACLE_MAX_WIDTH {
        return Err(Error::invalid(format!(
            "oracle limited to encoded width {ORACLE_MAX_WIDTH}"
        )));
    }
    if p.utility >= m {
        return Err(Error::invalid("utility attribute is not in the data"));
    }
    let window = target_window(data, p.condition, p.select)?.rows;
    let required: BTreeSet<usize> = p.select.iter().copied().chain([p.utility]).collect();
    let col_cap = budget_count(p.alpha_c, m);
    let row_cap = budget_count(p.alpha_r, n);
    if col_cap < required.len() {
        return Err(Error::Budget(format!(
            "column budget {col_cap} is below the {} required attributes",
            required.len()
        )));
    }
    if row_cap < window.len() {
        return Err(Error::Budget(format!(
            "row budget {row_cap} is below the target window size {}",
            window.len()
        )));
    }

    let optional_cols: Vec<usize> = (0..m).filter(|j| !required.contains(j)).collect();
    let optional_rows: Vec<usize> = (0..n).filter(|i| !window.contains(i)).collect();
    let mut col_sets: Vec<Vec<usize>> = subsets_of(&optional_cols)
        .map(|extra| {
            let mut j: Vec<usize> = required.iter().copied().chain(extra).collect();
            j.sort_unstable();
            j
        })
        .filter(|j| j.len() <= col_cap)
        .collect();
    col_sets.sort();
    let mut row_sets: Vec<Vec<usize>> = subsets_of(&optional_rows)
        .map(|extra| {
            let mut i: Vec<usize> = window.iter().copied().chain(extra).collect();
            i.sort_unstable();
            i
        })
        .filter(|i| i.len() <= row_cap && i.len() >= 2)
        .collect();
    row_sets.sort();
    let mut dims: Vec<usize> = p.latent_dims.to_vec();
    dims.sort_unstable();
    dims.dedup();

    let knowledge = ExternalKnowledge::default();
    let mut best: Option<OracleOptimum> = None;
    let mut configurations = 0;
    for cols in &col_sets {
        for rows in &row_sets {
            let slice: DataSlice = data.slice(rows, cols)?;
            let width = crate::data::Codec::build(&slice.data)?.width();
            let available = rows.len().min(width);
            for &d in dims
                .iter()
                .filter(|&&d| d >= 1 && d <= p.beta && d <= available)
            {
                let options = ModelOptions {
                    latent_dim: Some(d),
                    ..ModelOptions::default()
                };
                let model = fit_model(&slice, p.beta, &options, &knowledge)?;
                let h = utility_entropy(&model, data, p.utility, p.bins)?;
                configurations += 1;
                if best.as_ref().is_none_or(|b| h < b.entropy) {
                    best = Some(OracleOptimum {
                        rows: rows.clone(),
                        cols: cols.clone(),
                        latent_dim: d,
                        entropy: h,
                        configurations: 0,
                    });
                }
            }
        }
    }
    let mut best = best.ok_or_else(|| Error::invalid("no feasible configuration to enumerate"))?;
    best.configurations = configurations;
    Ok(best)
}

/// Shortest round-trip decimal, in exponent form for very small or large magnitudes.
fn fmt_value(x: f64) -> String {
    if x != 0.0 && x.is_finite() && !(1e-4..1e15).contains(&x.abs()) {
        format!("{x:e}")
    } else {
        format!("{x}")
    }
}

/// One named, unit-tagged result with its threshold and verdict.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    pub value: f64,
    pub unit: String,
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub pass: Option<bool>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metrics: Vec<Metric>,
}

impl MetricReport {
    pub fn push(&mut self, name: &str, value: f64, unit: &str) {
        self.metrics.push(Metric {
            name: name.into(),
            value,
            unit: unit.into(),
            threshold: None,
            pass: None,
        });
    }

    /// Adds a checked value; `pass` is the verdict against `threshold`.
    pub fn push_check(&mut self, name: &str, value: f64, unit: &str, threshold: f64, pass: bool) {
        self.metrics.push(Metric {
            name: name.into(),
            value,
            unit: unit.into(),
            threshold: Some(threshold),
            pass: Some(pass),
        });
    }

    pub fn get(&self, name: &str) -> Option<&Metric> {
        self.metrics.iter().find(|m| m.name == name)
    }

    pub fn all_pass(&self) -> bool {
        self.metrics.iter().all(|m| m.pass != Some(false))
    }

    /// Aligned human-readable table followed by a `key=value` block.
    pub fn to_text(&self) -> String {
        let width = self.metrics.iter().map(|m| m.name.len()).max().unwrap_or(0);
        let mut out = String::from("# metrics\n");
        for m in &self.metrics {
            let _ = write!(
                out,
                "{:<width$}  {:>24}  {:<8}",
                m.name,
                fmt_value(m.value),
                m.unit
            );
            if let (Some(t), Some(p)) = (m.threshold, m.pass) {
                let _ = write!(out, "  threshold={t}  {}", if p { "pass" } else { "FAIL" });
            }
            out = out.trim_end().to_string();
            out.push('\n');
        }
        out.push_str("\n# summary\n");
        out.push_str(&self.summary());
        out
    }

    /// Flat `key=value` lines for scripting.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        for m in &self.metrics {
            let _ = writeln!(out, "{}={}", m.name, fmt_value(m.value));
            if let Some(p) = m.pass {
                let _ = writeln!(out, "{}.pass={p}", m.name);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_entropies() {
        assert!((entropy_discrete(&[0.5, 0.5]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!((entropy_discrete(&[0.25; 4]).unwrap() - 4f64.ln()).abs() < 1e-15);
        assert_eq!(entropy_discrete(&[1.0, 0.0]).unwrap(), 0.0);
        assert!(entropy_discrete(&[0.5, 0.6]).is_err());
        assert!(entropy_discrete(&[1.5, -0.5]).is_err());
    }

    #[test]
    fn discretize_keeps_discrete_values_and_ties() {
        assert_eq!(discretize(&[3.0, 1.0, 3.0, 2.0], 10), vec![2, 0, 2, 1]);
        let x: Vec<f64> = (0..100).map(f64::from).collect();
        let b = discretize(&x, 4);
        assert_eq!(b[0], 0);
        assert_eq!(b[99], 3);
        assert_eq!(b.iter().filter(|&&v| v == 2).count(), 25);
        // Ties never straddle a bin boundary.
        let mut y = vec![0.0; 30];
        y.extend((0..10).map(f64::from));
        let by = discretize(&y, 3);
        assert!(by[..31].iter().all(|&v| v == by[0]));
    }

    #[test]
    fn hand_enumerated_conditional_entropy() {
        // p(z,c): (0,0)=.4 (0,1)=.1 (1,0)=.1 (1,1)=.4
        let mut z = Vec::new();
        let mut c = Vec::new();
        for (zv, cv, k) in [
            (0.0, 0.0, 40),
            (0.0, 1.0, 10),
            (1.0, 0.0, 10),
            (1.0, 1.0, 40),
        ] {
            for _ in 0..k {
                z.push(zv);
                c.push(vec![cv]);
            }
        }
        let exact = -(0.8f64 * 0.8f64.ln() + 0.2 * 0.2f64.ln());
        let h = cond_entropy(&z, &c, 10).unwrap();
        assert!((h - exact).abs() < 1e-12);
        assert!((h - 0.5004).abs() < 1e-4);
    }

    #[test]
    fn mutual_information_of_copies_and_xor() {
        let x: Vec<f64> = (0..8).map(|i| (i % 2) as f64).collect();
        assert!((mutual_info(&x, &x, 10).unwrap() - 2f64.ln()).abs() < 1e-12);
        let a = [0.0, 0.0, 1.0, 1.0];
        let b = [0.0, 1.0, 0.0, 1.0];
        let xor: Vec<f64> = a
            .iter()
            .zip(&b)
            .map(|(p, q)| ((*p != *q) as u8) as f64)
            .collect();
        assert!(mutual_info(&a, &xor, 10).unwrap().abs() < 1e-12);
        assert!(mutual_info(&a, &b[..3], 10).is_err());
    }

    #[test]
    fn psi_of_duplicated_column() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, i as f64]).collect();
        assert_eq!(independence_psi(&rows, PsiKind::Cov, 10).unwrap(), 1.0);
        let single: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        assert_eq!(independence_psi(&single, PsiKind::Mi, 10).unwrap(), 0.0);
        assert!(is_kappa_independent(0.0, 0.1));
    }

    #[test]
    fn combining_functions() {
        assert_eq!(phi(1.0, 2.0, 0.5), 1.5);
        assert_eq!(phi(0.0, 3.0, 0.7), 3.0);
        assert_eq!(xi(0.0, 0.0, 1.0), 0.0);
        assert_eq!(xi(1.0, 0.5, 2.0), -2.0);
        assert!(xi(1.0, 0.6, 1.0) < xi(1.0, 0.5, 1.0));
    }

    #[test]
    fn bernoulli_distances() {
        let p = [0.5, 0.5];
        let q = [0.75, 0.25];
        assert_eq!(table_distance(&p, &q, DistanceKind::Tv).unwrap(), 0.25);
        let kl = table_distance(&p, &q, DistanceKind::Kl).unwrap();
        assert!((kl - (0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln())).abs() < 1e-15);
        assert_eq!(table_distance(&p, &p, DistanceKind::Kl).unwrap(), 0.0);
    }

    #[test]
    fn gain_fraction_cases() {
        assert_eq!(gain_fraction(1.0, 1.0, 2.0).unwrap(), 0.0);
        assert_eq!(gain_fraction(1.0, 2.0, 2.0).unwrap(), 1.0);
        assert!(gain_fraction(2.0, 3.0, 2.0).is_err());
    }

    #[test]
    fn continuous_distance_identity_and_shift() {
        let a = DistEstimate::Gaussian {
            mean: 0.0,
            variance: 1.0,
            samples: 10,
        };
        let b = DistEstimate::Gaussian {
            mean: 1.0,
            variance: 1.0,
            samples: 10,
        };
        assert_eq!(stat_distance(&a, &a, DistanceKind::Kl, 512).unwrap(), 0.0);
        assert_eq!(stat_distance(&a, &a, DistanceKind::Tv, 512).unwrap(), 0.0);
        // KL(N(0,1) || N(1,1)) = 1/2.
        let kl = stat_distance(&a, &b, DistanceKind::Kl, 4096).unwrap();
        assert!((kl - 0.5).abs() < 1e-3, "{kl}");
        assert!(stat_distance(&a, &b, DistanceKind::Tv, 9).is_err());
    }

    #[test]
    fn report_text_lists_verdicts() {
        let mut r = MetricReport::default();
        r.push("h", 0.5, "nats");
        r.push_check("covering", 1.0, "bool", 1.0, true);
        let text = r.to_text();
        assert!(text.contains("pass"));
        assert!(text.contains("covering.pass=true"));
        assert!(r.all_pass());
    }
}
