//! Latent-variable data model over an affine-orthogonal relationship family:
//! principal directions of the centered, encoded extracted data.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{Codec, DataSlice, Dataset, ExternalKnowledge, Record, Schema, Value};
use crate::error::{Error, Result};

/// Fraction of variance the default latent count must explain.
pub const DEFAULT_VARIANCE_TARGET: f64 = 0.95;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RelationshipFamily {
    /// Affine maps with orthonormal loadings over the encoded attributes.
    #[default]
    AffineOrthogonal,
}

/// Ties a subset to the category of the grouping attribute that defines it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubsetLabel {
    /// Attribute index within the model's schema.
    pub attribute: usize,
    pub category: usize,
}

/// One element of a subset instruction `V_t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Subset {
    #[serde(default)]
    pub label: Option<SubsetLabel>,
    /// Original row indices, a subset of `I^(E)`.
    pub rows: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentVariable {
    pub index: usize,
    /// Row of the encoder matrix over the encoded attributes.
    pub loading: Vec<f64>,
    /// `V_t`.
    pub subsets: Vec<Subset>,
}

/// A dependent attribute removed from the encoding and rebuilt from its sources
/// by a least-squares affine map in encoded space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DependencyMap {
    pub target: usize,
    pub sources: Vec<usize>,
    source_codec: Codec,
    target_codec: Codec,
    /// `(source width + 1) × target width`, bias row last.
    coefficients: Vec<Vec<f64>>,
}

impl DependencyMap {
    fn fit(data: &Dataset, target: usize, sources: &[usize]) -> Result<Self> {
        let source_codec = Codec::build_for(data, sources)?;
        let target_codec = Codec::build_for(data, &[target])?;
        let n = data.n();
        let ds = source_codec.width() + 1;
        let dt = target_codec.width();
        let mut s = DMatrix::zeros(n, ds);
        let mut t = DMatrix::zeros(n, dt);
        for (i, r) in data.records().iter().enumerate() {
            for (k, v) in source_codec.encode_record(r)?.into_iter().enumerate() {
                s[(i, k)] = v;
            }
            s[(i, ds - 1)] = 1.0;
            for (k, v) in target_codec.encode_record(r)?.into_iter().enumerate() {
                t[(i, k)] = v;
            }
        }
        let coef = s
            .svd(true, true)
            .solve(&t, 1e-10)
            .map_err(|e| Error::invalid(format!("dependency fit failed: {e}")))?;
        Ok(DependencyMap {
            target,
            sources: sources.to_vec(),
            source_codec,
            target_codec,
            coefficients: (0..ds)
                .map(|k| coef.row(k).iter().copied().collect())
                .collect(),
        })
    }

    fn restore(&self, record: &mut [Value]) -> Result<()> {
        let mut s = self.source_codec.encode_record(record)?;
        s.push(1.0);
        let dt = self.target_codec.width();
        let t: Vec<f64> = (0..dt)
            .map(|c| {
                s.iter()
                    .zip(&self.coefficients)
                    .map(|(x, row)| x * row[c])
                    .sum()
            })
            .collect();
        self.target_codec.decode_into(&t, record)?;
        Ok(())
    }
}

/// The data model `S_F`: latents with encoder and decoder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataModel {
    pub family: RelationshipFamily,
    pub beta: usize,
    /// Schema of the extracted data the model reads and writes.
    pub schema: Schema,
    pub codec: Codec,
    /// Mean of the encoded training data.
    pub center: Vec<f64>,
    pub latents: Vec<LatentVariable>,
    /// All singular values of the centered encoded data, descending.
    pub singular_values: Vec<f64>,
    pub dependencies: Vec<DependencyMap>,
    /// `I^(E)`.
    pub rows: Vec<usize>,
    /// `J^(E)`.
    pub cols: Vec<usize>,
}

/// Options for [`fit_model`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelOptions {
    #[serde(default)]
    pub family: RelationshipFamily,
    /// Number of latents; `None` picks the fewest explaining 95% of variance, capped by β.
    #[serde(default)]
    pub latent_dim: Option<usize>,
}

/// Fits a β-compact model on extracted data.
pub fn fit_model(
    extracted: &DataSlice,
    beta: usize,
    options: &ModelOptions,
    knowledge: &ExternalKnowledge,
) -> Result<DataModel> {
    let data = &extracted.data;
    let schema = data.schema();
    let n = data.n();
    if n < 2 {
        return Err(Error::invalid(
            "model fitting needs at least two extracted rows",
        ));
    }
    if beta < 1 {
        return Err(Error::invalid("model budget beta must be at least 1"));
    }

    // Dependencies whose endpoints all survived extraction.
    let mut dropped: Vec<(usize, Vec<usize>)> = Vec::new();
    for fd in &knowledge.dependencies {
        let Some(t) = schema.index_of(&fd.target) else {
            continue;
        };
        let sources: Option<Vec<usize>> = fd.sources.iter().map(|s| schema.index_of(s)).collect();
        let Some(sources) = sources else { continue };
        if dropped.iter().any(|(d, _)| *d == t) {
            continue;
        }
        dropped.push((t, sources));
    }
    for (t, sources) in &dropped {
        if sources.iter().any(|s| dropped.iter().any(|(d, _)| d == s)) {
            return Err(Error::invalid(format!(
                "dependency target {:?} has a source that is itself dependent",
                schema.attribute(*t).name()
            )));
        }
    }
    let kept: Vec<usize> = (0..schema.len())
        .filter(|j| !dropped.iter().any(|(d, _)| d == j))
        .collect();
    if kept.is_empty() {
        return Err(Error::invalid("every attribute is a declared dependent"));
    }
    let dependencies = dropped
        .iter()
        .map(|(t, s)| DependencyMap::fit(data, *t, s))
        .collect::<Result<Vec<_>>>()?;

    let codec = Codec::build_for(data, &kept)?;
    let width = codec.width();
    let mut x = DMatrix::zeros(n, width);
    for (i, r) in data.records().iter().enumerate() {
        for (k, v) in codec.encode_record(r)?.into_iter().enumerate() {
            x[(i, k)] = v;
        }
    }
    let center: Vec<f64> = (0..width).map(|k| x.column(k).sum() / n as f64).collect();
    for k in 0..width {
        for i in 0..n {
            x[(i, k)] -= center[k];
        }
    }

    let svd = x.svd(false, true);
    let v_t = svd.v_t.expect("v_t requested");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .total_cmp(&svd.singular_values[a])
            .then(a.cmp(&b))
    });
    let singular_values: Vec<f64> = order.iter().map(|&k| svd.singular_values[k]).collect();
    let available = singular_values.len();

    let latent_dim = match options.latent_dim {
        Some(d) => d,
        None => default_latent_dim(&singular_values, beta),
    };
    if latent_dim > beta {
        return Err(Error::Budget(format!(
            "latent_dim {latent_dim} exceeds the model budget beta = {beta}"
        )));
    }
    if latent_dim == 0 || latent_dim > available {
        return Err(Error::invalid(format!(
            "latent_dim must be in 1..={available} for {n} rows of encoded width {width}"
        )));
    }

    let all_rows = vec![Subset {
        label: None,
        rows: extracted.rows.clone(),
    }];
    let latents = order[..latent_dim]
        .iter()
        .enumerate()
        .map(|(t, &k)| {
            let mut loading: Vec<f64> = v_t.row(k).iter().copied().collect();
            let mut lead = 0;
            for (c, v) in loading.iter().enumerate() {
                if v.abs() > loading[lead].abs() {
                    lead = c;
                }
            }
            if loading[lead] < 0.0 {
                loading.iter_mut().for_each(|v| *v = -*v);
            }
            LatentVariable {
                index: t,
                loading,
                subsets: all_rows.clone(),
            }
        })
        .collect();

    Ok(DataModel {
        family: options.family,
        beta,
        schema: schema.clone(),
        codec,
        center,
        latents,
        singular_values,
        dependencies,
        rows: extracted.rows.clone(),
        cols: extracted.cols.clone(),
    })
}

/// Fewest leading components whose variance share reaches the 95% target, capped by `beta`.
pub fn default_latent_dim(singular_values: &[f64], beta: usize) -> usize {
    let total: f64 = singular_values.iter().map(|s| s * s).sum();
    let mut k = singular_values.len().max(1);
    if total > 0.0 {
        let mut acc = 0.0;
        for (i, s) in singular_values.iter().enumerate() {
            acc += s * s;
            if acc >= DEFAULT_VARIANCE_TARGET * total {
                k = i + 1;
                break;
            }
        }
    } else {
        k = 1;
    }
    k.min(beta).min(singular_values.len()).max(1)
}

impl DataModel {
    /// Number of latents `M`.
    pub fn dim(&self) -> usize {
        self.latents.len()
    }

    pub fn encoded_width(&self) -> usize {
        self.codec.width()
    }

    /// Variance share of each retained latent.
    pub fn explained_variance(&self) -> Vec<f64> {
        let total: f64 = self.singular_values.iter().map(|s| s * s).sum();
        self.latents
            .iter()
            .map(|l| {
                if total > 0.0 {
                    self.singular_values[l.index].powi(2) / total
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn check_schema(&self, schema: &Schema) -> Result<()> {
        if *schema != self.schema {
            return Err(Error::invalid(format!(
                "schema {:?} does not match the model's {:?}",
                schema.names(),
                self.schema.names()
            )));
        }
        Ok(())
    }

    /// `Enc` applied to an encoded vector.
    pub fn project(&self, encoded: &[f64]) -> Vec<f64> {
        self.latents
            .iter()
            .map(|l| {
                l.loading
                    .iter()
                    .zip(encoded)
                    .zip(&self.center)
                    .map(|((w, x), c)| w * (x - c))
                    .sum()
            })
            .collect()
    }

    /// `Dec` into encoded space, before categorical argmax and clamping.
    pub fn back_project(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: z.len(),
            });
        }
        let mut out = self.center.clone();
        for (l, &zt) in self.latents.iter().zip(z) {
            for (o, w) in out.iter_mut().zip(&l.loading) {
                *o += w * zt;
            }
        }
        Ok(out)
    }

    pub fn encode_record(&self, record: &[Value]) -> Result<Vec<f64>> {
        Ok(self.project(&self.codec.encode_record(record)?))
    }

    /// Latent matrix (`rows × M`) of a dataset over the model's schema.
    pub fn encode_data(&self, rows: &Dataset) -> Result<Vec<Vec<f64>>> {
        self.check_schema(rows.schema())?;
        rows.records()
            .iter()
            .map(|r| self.encode_record(r))
            .collect()
    }

    /// Decodes one latent vector. `force` pins an attribute to a category before
    /// dependents are rebuilt. Returns the record and whether clamping occurred.
    pub fn decode_row(&self, z: &[f64], force: Option<&SubsetLabel>) -> Result<(Record, bool)> {
        let v = self.back_project(z)?;
        let mut record: Record = self
            .schema
            .attributes()
            .iter()
            .map(|a| {
                if a.is_categorical() {
                    Value::Cat(0)
                } else {
                    Value::Num(0.0)
                }
            })
            .collect();
        let clamped = self.codec.decode_into(&v, &mut record)?;
        if let Some(f) = force {
            record[f.attribute] = Value::Cat(f.category);
        }
        for d in &self.dependencies {
            d.restore(&mut record)?;
        }
        Ok((record, clamped))
    }

    pub fn decode_latents(&self, z: &[Vec<f64>]) -> Result<Dataset> {
        let records = z
            .iter()
            .map(|row| self.decode_row(row, None).map(|(r, _)| r))
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(self.schema.clone(), records)
    }

    /// `Dec(Enc(x))` in encoded space.
    pub fn reconstruct_encoded(&self, encoded: &[f64]) -> Result<Vec<f64>> {
        self.back_project(&self.project(encoded))
    }

    /// Number of subsets `n_t` of each latent.
    pub fn subset_counts(&self) -> Vec<usize> {
        self.latents.iter().map(|l| l.subsets.len()).collect()
    }
}

/// Free-function form of [`DataModel::encode_data`].
pub fn encode_data(model: &DataModel, rows: &Dataset) -> Result<Vec<Vec<f64>>> {
    model.encode_data(rows)
}

/// Free-function form of [`DataModel::decode_latents`].
pub fn decode_latents(model: &DataModel, z: &[Vec<f64>]) -> Result<Dataset> {
    model.decode_latents(z)
}

/// Sets every `V_t`: a single subset `{I^(E)}` without grouping, or the partition
/// of `I^(E)` by the observed categories of a categorical grouping attribute.
pub fn assign_subsets(
    model: &DataModel,
    extracted: &DataSlice,
    grouping: Option<&str>,
) -> Result<DataModel> {
    model.check_schema(extracted.data.schema())?;
    if extracted.rows != model.rows {
        return Err(Error::invalid(
            "extracted rows do not match the rows the model was fitted on",
        ));
    }
    let subsets = match grouping {
        None => vec![Subset {
            label: None,
            rows: model.rows.clone(),
        }],
        Some(name) => {
            let j = model.schema.index_of(name).ok_or_else(|| {
                Error::invalid(format!("grouping attribute {name:?} is not in the model"))
            })?;
            let attr = model.schema.attribute(j);
            if !attr.is_categorical() {
                return Err(Error::invalid(format!(
                    "grouping attribute {name:?} must be categorical"
                )));
            }
            let mut by_cat: Vec<Vec<usize>> = vec![Vec::new(); attr.categories().len()];
            for (r, &row) in extracted.data.records().iter().zip(&extracted.rows) {
                if let Value::Cat(c) = r[j] {
                    by_cat[c].push(row);
                }
            }
            let parts: Vec<Subset> = by_cat
                .into_iter()
                .enumerate()
                .filter(|(_, rows)| !rows.is_empty())
                .map(|(c, rows)| Subset {
                    label: Some(SubsetLabel {
                        attribute: j,
                        category: c,
                    }),
                    rows,
                })
                .collect();
            if parts.len() == 1 {
                log::info!(
                    "grouping attribute {name:?} is constant on the extracted rows; one subset"
                );
            }
            parts
        }
    };
    let mut out = model.clone();
    for l in &mut out.latents {
        l.subsets = subsets.clone();
    }
    Ok(out)
}
