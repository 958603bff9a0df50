//! Synthetic data: draw latent codes from a representation and decode them.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analyze::{DistEstimate, Representation};
use crate::data::{DataSlice, Dataset};
use crate::error::{Error, Result};
use crate::extrapolate::{extrapolate, Level};
use crate::model::DataModel;
use crate::request::CheckedExtrapolation;
use crate::seed;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ValidityPolicy {
    /// Out-of-domain values are clamped into the domain.
    #[default]
    Clamp,
    /// Rows needing clamping are redrawn, up to `max_resamples` times each.
    Reject { max_resamples: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisSpec {
    pub n_out: usize,
    /// Subset mixing weights; `None` uses the representation's own.
    #[serde(default)]
    pub mixing: Option<Vec<f64>>,
    #[serde(default)]
    pub policy: ValidityPolicy,
    /// Emit only the extrapolation query's selected attributes.
    #[serde(default)]
    pub project: bool,
    #[serde(default)]
    pub seed: u64,
}

impl SynthesisSpec {
    pub fn new(n_out: usize, seed: u64) -> Self {
        SynthesisSpec {
            n_out,
            mixing: None,
            policy: ValidityPolicy::Clamp,
            project: false,
            seed,
        }
    }

    fn validate(&self, rep: &Representation) -> Result<Vec<f64>> {
        if let ValidityPolicy::Reject { max_resamples } = self.policy {
            if max_resamples < 1 {
                return Err(Error::invalid("max_resamples must be at least 1"));
            }
        }
        let mixing = self.mixing.clone().unwrap_or_else(|| rep.mixing.clone());
        if mixing.len() != rep.mixing.len()
            || mixing.iter().any(|w| !(*w >= 0.0))
            || (mixing.iter().sum::<f64>() - 1.0).abs() > 1e-9
        {
            return Err(Error::invalid(
                "mixing weights must be a distribution over the subsets",
            ));
        }
        Ok(mixing)
    }
}

/// Latent draws with the subset each row was drawn from.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentDraws {
    pub subsets: Vec<usize>,
    pub z: Vec<Vec<f64>>,
}

fn pick(weights: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (k, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return k;
        }
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

fn estimate_for(rep: &Representation, t: usize, l: usize) -> &DistEstimate {
    let fits = &rep.entries[t].fits;
    // A latent with one subset serves every subset index.
    if fits.len() == 1 {
        &fits[0].estimate
    } else {
        &fits[l].estimate
    }
}

fn draw_row<R: Rng>(rep: &Representation, l: usize, rng: &mut R) -> Vec<f64> {
    (0..rep.entries.len())
        .map(|t| estimate_for(rep, t, l).sample(rng))
        .collect()
}

fn check_rep(rep: &Representation) -> Result<()> {
    if rep.entries.is_empty() {
        return Err(Error::invalid("representation has no latents"));
    }
    for e in &rep.entries {
        if e.fits.len() != 1 && e.fits.len() != rep.mixing.len() {
            return Err(Error::invalid(
                "representation subset counts disagree with its mixing weights",
            ));
        }
        for f in &e.fits {
            f.estimate.validate()?;
        }
    }
    Ok(())
}

/// Draws `n_out` latent vectors: a subset by the mixing weights, then each latent independently.
pub fn sample_latents(rep: &Representation, spec: &SynthesisSpec) -> Result<LatentDraws> {
    check_rep(rep)?;
    let mixing = spec.validate(rep)?;
    let mut rng = seed::rng(spec.seed);
    let mut out = LatentDraws {
        subsets: Vec::with_capacity(spec.n_out),
        z: Vec::with_capacity(spec.n_out),
    };
    for _ in 0..spec.n_out {
        let l = pick(&mixing, rng.random::<f64>());
        out.z.push(draw_row(rep, l, &mut rng));
        out.subsets.push(l);
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub rows: usize,
    /// Rows that needed clamping (kept under the clamp policy).
    pub clamped: usize,
    /// Redraws made under the reject policy.
    pub resamples: usize,
    #[serde(default)]
    pub level: Option<Level>,
    #[serde(default)]
    pub ess: Option<Vec<f64>>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Synthesis {
    pub data: Dataset,
    pub report: SynthesisReport,
}

/// Samples and decodes `n_out` schema-valid rows. Rows drawn from a subset tied to a
/// grouping category carry that category.
pub fn synthesize(
    model: &DataModel,
    rep: &Representation,
    spec: &SynthesisSpec,
) -> Result<Synthesis> {
    rep.validate(model)?;
    let mixing = spec.validate(rep)?;
    let widest = model
        .latents
        .iter()
        .max_by_key(|l| l.subsets.len())
        .ok_or_else(|| Error::invalid("model has no latents"))?;
    let mut rng = seed::rng(spec.seed);
    let mut records = Vec::with_capacity(spec.n_out);
    let mut report = SynthesisReport {
        rows: spec.n_out,
        ..SynthesisReport::default()
    };
    for _ in 0..spec.n_out {
        let l = pick(&mixing, rng.random::<f64>());
        let label = widest.subsets[l].label.as_ref();
        let mut attempts = 0;
        loop {
            let z = draw_row(rep, l, &mut rng);
            let (record, clamped) = model.decode_row(&z, label)?;
            match spec.policy {
                ValidityPolicy::Reject { max_resamples } if clamped => {
                    if attempts == max_resamples {
                        return Err(Error::Synthesis(format!(
                            "no in-domain row after {max_resamples} redraws"
                        )));
                    }
                    attempts += 1;
                    report.resamples += 1;
                }
                _ => {
                    report.clamped += usize::from(clamped);
                    records.push(record);
                    break;
                }
            }
        }
    }
    Ok(Synthesis {
        data: Dataset::new(model.schema.clone(), records)?,
        report,
    })
}

/// Synthesis from the representation extrapolated to `p`.
pub fn conditional_synthesize(
    model: &DataModel,
    rep: &Representation,
    extracted: &DataSlice,
    p: &CheckedExtrapolation,
    spec: &SynthesisSpec,
) -> Result<Synthesis> {
    let ext = extrapolate(model, rep, extracted, p)?;
    let mut out = synthesize(model, &ext.representation, spec)?;
    if spec.project {
        out.data = project(model, &out.data, &p.select)?;
    }
    out.report.level = Some(ext.level);
    out.report.ess = Some(ext.ess);
    out.report.warnings = ext.warnings;
    Ok(out)
}

/// Keeps only the attributes whose original schema indices are in `select`.
pub fn project(model: &DataModel, data: &Dataset, select: &[usize]) -> Result<Dataset> {
    let local: Vec<usize> = model
        .cols
        .iter()
        .enumerate()
        .filter(|(_, j)| select.contains(j))
        .map(|(k, _)| k)
        .collect();
    let rows: Vec<usize> = (0..data.n()).collect();
    Ok(data.slice(&rows, &local)?.data)
}
