//! Extrapolation of a representation to a requested marginal condition.
//!
//! Queries are graded by where their support falls relative to the observed
//! data: the observed set, the grid of observed per-dimension values, the
//! cuboid of implied values, or beyond it. Grid and cuboid are never
//! materialized; membership is tested one dimension at a time.
//!
//! The new representation comes from importance reweighting: each extracted row
//! gets weight `Π target(d_ij) / empirical(d_ij)` over the conditioned attributes
//! and every (latent, subset) estimate is refitted with those weights.

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

use crate::analyze::{
    check_extracted, effective_sample_size, fit_kde, normal_pdf, refit_weighted, row_positions,
    silverman_bandwidth, subset_samples, LatentFits, Representation, SubsetFit,
};
use crate::data::{DataSlice, Dataset, Domain, Value};
use crate::error::{Error, Result};
use crate::model::DataModel;
use crate::request::{CheckedExtrapolation, ResolvedMarginal};

/// Effective sample size below which a subset's refit is flagged.
pub const ESS_WARN: f64 = 30.0;

/// Interpolation / extrapolation level of a point or query.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Level {
    /// In the observed set.
    Observed = 0,
    /// On the grid of observed per-dimension values but not observed.
    Grid = 1,
    /// Inside the implied cuboid but off the grid.
    Cuboid = 2,
    /// Outside the implied cuboid.
    Outside = 3,
}

impl From<Level> for u8 {
    fn from(l: Level) -> u8 {
        l as u8
    }
}

impl TryFrom<u8> for Level {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Self, String> {
        Ok(match v {
            0 => Level::Observed,
            1 => Level::Grid,
            2 => Level::Cuboid,
            3 => Level::Outside,
            _ => return Err(format!("invalid extrapolation level {v}")),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Key {
    Cat(usize),
    Num(u64),
}

fn key(v: &Value) -> Key {
    match *v {
        Value::Cat(c) => Key::Cat(c),
        // -0.0 and 0.0 are the same observation.
        Value::Num(x) => Key::Num(if x == 0.0 {
            0.0f64.to_bits()
        } else {
            x.to_bits()
        }),
    }
}

/// Observed values of one dimension and the values they imply.
#[derive(Clone, Debug, PartialEq)]
pub enum DimTaxonomy {
    Continuous {
        /// `A^(j)`, sorted and deduplicated.
        observed: Vec<f64>,
        /// `I^(j) = [min A^(j), max A^(j)]`.
        interval: (f64, f64),
    },
    Categorical {
        observed: BTreeSet<usize>,
        /// `{x : a ⪯ x ⪯ b for some observed a, b}`; equals `observed` without a declared order.
        implied: BTreeSet<usize>,
    },
}

impl DimTaxonomy {
    fn on_grid(&self, v: &Value) -> Result<bool> {
        match (self, v) {
            (DimTaxonomy::Continuous { observed, .. }, Value::Num(x)) => {
                Ok(observed.binary_search_by(|a| a.total_cmp(x)).is_ok()
                    || (*x == 0.0 && observed.contains(&0.0)))
            }
            (DimTaxonomy::Categorical { observed, .. }, Value::Cat(c)) => Ok(observed.contains(c)),
            _ => Err(Error::invalid(
                "value kind does not match the taxonomy dimension",
            )),
        }
    }

    fn implied(&self, v: &Value) -> Result<bool> {
        match (self, v) {
            (DimTaxonomy::Continuous { interval, .. }, Value::Num(x)) => {
                Ok(*x >= interval.0 && *x <= interval.1)
            }
            (DimTaxonomy::Categorical { implied, .. }, Value::Cat(c)) => Ok(implied.contains(c)),
            _ => Err(Error::invalid(
                "value kind does not match the taxonomy dimension",
            )),
        }
    }
}

/// Per-dimension observed and implied sets plus the observed tuple set `S^(O)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtensionTaxonomy {
    /// Attribute indices (in the dataset's schema) of the dimensions.
    pub attrs: Vec<usize>,
    pub dims: Vec<DimTaxonomy>,
    observed: HashSet<Vec<Key>>,
}

impl ExtensionTaxonomy {
    pub fn observed_count(&self) -> usize {
        self.observed.len()
    }
}

/// Builds the taxonomy of `data` restricted to attributes `dims`.
pub fn build_taxonomy(data: &Dataset, dims: &[usize]) -> Result<ExtensionTaxonomy> {
    if data.n() == 0 {
        return Err(Error::invalid("cannot build a taxonomy from empty data"));
    }
    let schema = data.schema();
    let mut out = Vec::with_capacity(dims.len());
    for &j in dims {
        if j >= schema.len() {
            return Err(Error::invalid(format!(
                "dimension {j} is not in the schema"
            )));
        }
        let attr = schema.attribute(j);
        out.push(match attr.domain() {
            Domain::Continuous { .. } => {
                let mut observed = data.column(j);
                observed.iter_mut().for_each(|x| {
                    if *x == 0.0 {
                        *x = 0.0;
                    }
                });
                observed.sort_by(f64::total_cmp);
                observed.dedup();
                let interval = (observed[0], observed[observed.len() - 1]);
                DimTaxonomy::Continuous { observed, interval }
            }
            Domain::Categorical { categories, .. } => {
                let observed: BTreeSet<usize> = data
                    .records()
                    .iter()
                    .filter_map(|r| match r[j] {
                        Value::Cat(c) => Some(c),
                        Value::Num(_) => None,
                    })
                    .collect();
                let implied = if attr.is_ordered() {
                    (0..categories.len())
                        .filter(|&x| {
                            observed
                                .iter()
                                .any(|&a| attr.precedes_eq(a, x) == Some(true))
                                && observed
                                    .iter()
                                    .any(|&b| attr.precedes_eq(x, b) == Some(true))
                        })
                        .collect()
                } else {
                    observed.clone()
                };
                DimTaxonomy::Categorical { observed, implied }
            }
        });
    }
    let observed = data
        .records()
        .iter()
        .map(|r| dims.iter().map(|&j| key(&r[j])).collect())
        .collect();
    Ok(ExtensionTaxonomy {
        attrs: dims.to_vec(),
        dims: out,
        observed,
    })
}

/// Level of a single tuple over the taxonomy's dimensions.
pub fn classify_point(tax: &ExtensionTaxonomy, x: &[Value]) -> Result<Level> {
    if x.len() != tax.dims.len() {
        return Err(Error::Dimension {
            expected: tax.dims.len(),
            got: x.len(),
        });
    }
    let mut on_grid = true;
    let mut implied = true;
    for (d, v) in tax.dims.iter().zip(x) {
        on_grid &= d.on_grid(v)?;
        implied &= d.implied(v)?;
    }
    let k: Vec<Key> = x.iter().map(key).collect();
    Ok(if tax.observed.contains(&k) {
        Level::Observed
    } else if on_grid {
        Level::Grid
    } else if implied {
        Level::Cuboid
    } else {
        Level::Outside
    })
}

/// Support of one conditioned dimension.
#[derive(Clone, Debug, PartialEq)]
enum Support {
    Discrete(Vec<Value>),
    Interval(f64, f64),
    Unbounded,
}

/// Level of an extrapolation condition, with warnings. The taxonomy must be
/// built over exactly the conditioned attributes, in order.
pub fn classify_query(
    tax: &ExtensionTaxonomy,
    data: &Dataset,
    conditions: &[(usize, ResolvedMarginal)],
) -> Result<(Level, Vec<String>)> {
    let attrs: Vec<usize> = conditions.iter().map(|c| c.0).collect();
    if attrs != tax.attrs {
        return Err(Error::invalid(
            "taxonomy dimensions do not match the conditioned attributes",
        ));
    }
    let mut warnings = Vec::new();
    let mut supports = Vec::with_capacity(conditions.len());
    for (j, m) in conditions {
        let attr = data.schema().attribute(*j);
        supports.push(match m {
            ResolvedMarginal::Table(p) => Support::Discrete(
                p.iter()
                    .enumerate()
                    .filter(|(_, &q)| q > 0.0)
                    .map(|(c, _)| Value::Cat(c))
                    .collect(),
            ),
            ResolvedMarginal::Point(x) => Support::Discrete(vec![Value::Num(*x)]),
            ResolvedMarginal::Uniform(a, b) => Support::Interval(*a, *b),
            ResolvedMarginal::Normal { .. } => match attr.interval() {
                Some((lo, hi)) => Support::Interval(lo, hi),
                None => {
                    warnings.push(format!(
                        "normal condition on {:?} has unbounded support",
                        attr.name()
                    ));
                    Support::Unbounded
                }
            },
        });
    }

    let mut all_grid = true;
    let mut all_implied = true;
    for (d, s) in tax.dims.iter().zip(&supports) {
        match s {
            Support::Discrete(vals) => {
                for v in vals {
                    all_grid &= d.on_grid(v)?;
                    all_implied &= d.implied(v)?;
                }
            }
            Support::Interval(a, b) => {
                all_grid = false;
                all_implied &= d.implied(&Value::Num(*a))? && d.implied(&Value::Num(*b))?;
            }
            Support::Unbounded => {
                all_grid = false;
                all_implied = false;
            }
        }
    }

    let level = if !all_implied {
        Level::Outside
    } else if !all_grid {
        Level::Cuboid
    } else {
        let sets: Vec<&Vec<Value>> = supports
            .iter()
            .map(|s| match s {
                Support::Discrete(v) => v,
                _ => unreachable!("all supports are discrete on the grid"),
            })
            .collect();
        let size = sets
            .iter()
            .try_fold(1usize, |acc, s| acc.checked_mul(s.len()));
        match size {
            Some(sz) if sz <= tax.observed.len() => {
                if product_observed(tax, &sets) {
                    Level::Observed
                } else {
                    Level::Grid
                }
            }
            // More tuples than observations: some must be unobserved.
            _ => Level::Grid,
        }
    };
    if level == Level::Outside {
        warnings.push("condition reaches outside the implied cuboid (level 3)".into());
    }
    Ok((level, warnings))
}

fn product_observed(tax: &ExtensionTaxonomy, sets: &[&Vec<Value>]) -> bool {
    let mut idx = vec![0usize; sets.len()];
    if sets.iter().any(|s| s.is_empty()) {
        return true;
    }
    loop {
        let k: Vec<Key> = idx.iter().zip(sets).map(|(&i, s)| key(&s[i])).collect();
        if !tax.observed.contains(&k) {
            return false;
        }
        let mut d = 0;
        loop {
            if d == sets.len() {
                return true;
            }
            idx[d] += 1;
            if idx[d] < sets[d].len() {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

/// A representation conditioned on an extrapolation query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtrapolatedRepresentation {
    pub representation: Representation,
    pub level: Level,
    /// Effective sample size per subset index.
    pub ess: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Maps an extrapolation query's schema indices onto the extracted slice.
pub fn localize(
    extracted: &DataSlice,
    p: &CheckedExtrapolation,
) -> Result<Vec<(usize, ResolvedMarginal)>> {
    p.conditions
        .iter()
        .map(|(j, m)| {
            extracted
                .cols
                .iter()
                .position(|c| c == j)
                .map(|local| (local, m.clone()))
                .ok_or_else(|| {
                    Error::invalid(format!("conditioned attribute {j} was not extracted"))
                })
        })
        .collect()
}

/// Importance weights of the extracted rows under local-index conditions, normalized to sum to 1.
pub fn importance_weights(
    data: &Dataset,
    conditions: &[(usize, ResolvedMarginal)],
) -> Result<Vec<f64>> {
    let n = data.n();
    if n == 0 {
        return Err(Error::invalid("no extracted rows to reweight"));
    }
    let mut w = vec![1.0; n];
    for (j, m) in conditions {
        let col = data.column(*j);
        match m {
            ResolvedMarginal::Table(p) => {
                let mut counts = vec![0usize; p.len()];
                for r in data.records() {
                    if let Value::Cat(c) = r[*j] {
                        counts[c] += 1;
                    }
                }
                for (wi, r) in w.iter_mut().zip(data.records()) {
                    let Value::Cat(c) = r[*j] else {
                        return Err(Error::invalid(
                            "categorical condition on a continuous attribute",
                        ));
                    };
                    *wi *= p[c] / (counts[c] as f64 / n as f64);
                }
            }
            continuous => {
                let empirical = fit_kde(&col, None)?;
                let target: Box<dyn Fn(f64) -> f64> = match continuous {
                    ResolvedMarginal::Point(x0) => {
                        let h = silverman_bandwidth(&col)?;
                        let x0 = *x0;
                        Box::new(move |x| normal_pdf(x, x0, h * h))
                    }
                    other => {
                        let other = other.clone();
                        Box::new(move |x| other.density(&Value::Num(x)))
                    }
                };
                for (wi, &x) in w.iter_mut().zip(&col) {
                    let e = empirical.pdf(x);
                    *wi *= if e > 0.0 { target(x) / e } else { 0.0 };
                }
            }
        }
    }
    let total: f64 = w.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Infeasible(
            "the condition gives zero weight to every extracted row".into(),
        ));
    }
    w.iter_mut().for_each(|x| *x /= total);
    Ok(w)
}

/// Builds the extrapolated representation for query `p`.
pub fn extrapolate(
    model: &DataModel,
    rep: &Representation,
    extracted: &DataSlice,
    p: &CheckedExtrapolation,
) -> Result<ExtrapolatedRepresentation> {
    check_extracted(model, extracted)?;
    rep.validate(model)?;
    let conditions = localize(extracted, p)?;
    let weights = importance_weights(&extracted.data, &conditions)?;

    let (level, mut warnings) = if conditions.is_empty() {
        (Level::Observed, Vec::new())
    } else {
        let dims: Vec<usize> = conditions.iter().map(|c| c.0).collect();
        let tax = build_taxonomy(&extracted.data, &dims)?;
        classify_query(&tax, &extracted.data, &conditions)?
    };

    let latents = model.encode_data(&extracted.data)?;
    let positions = row_positions(extracted);
    let subset_weights =
        |rows: &[usize]| -> Vec<f64> { rows.iter().map(|r| weights[positions[r]]).collect() };

    let mut entries = Vec::with_capacity(model.dim());
    for (t, (latent, entry)) in model.latents.iter().zip(&rep.entries).enumerate() {
        let mut fits = Vec::with_capacity(entry.fits.len());
        for (l, (subset, fit)) in latent.subsets.iter().zip(&entry.fits).enumerate() {
            let w = subset_weights(&subset.rows);
            let estimate = if w.iter().sum::<f64>() > 0.0 {
                let samples = subset_samples(&latents, &positions, &subset.rows, t)?;
                refit_weighted(&fit.estimate, &samples, &w)?
            } else {
                let msg = format!("subset {l} receives no weight; its estimate is left unchanged");
                if !warnings.contains(&msg) {
                    warnings.push(msg);
                }
                fit.estimate.clone()
            };
            fits.push(SubsetFit {
                subset: l,
                estimate,
            });
        }
        entries.push(LatentFits { latent: t, fits });
    }

    let widest = model
        .latents
        .iter()
        .max_by_key(|l| l.subsets.len())
        .ok_or_else(|| Error::invalid("model has no latents"))?;
    let mut mixing = Vec::with_capacity(widest.subsets.len());
    let mut ess = Vec::with_capacity(widest.subsets.len());
    for (l, s) in widest.subsets.iter().enumerate() {
        let w = subset_weights(&s.rows);
        let e = effective_sample_size(&w);
        if e < ESS_WARN {
            warnings.push(format!(
                "subset {l} has effective sample size {e:.1} < {ESS_WARN}"
            ));
        }
        mixing.push(w.iter().sum::<f64>());
        ess.push(e);
    }
    let total: f64 = mixing.iter().sum();
    mixing.iter_mut().for_each(|m| *m /= total);

    let representation = Representation { entries, mixing };
    representation.validate(model)?;
    for w in &warnings {
        log::warn!("extrapolation: {w}");
    }
    Ok(ExtrapolatedRepresentation {
        representation,
        level,
        ess,
        warnings,
    })
}
