//! Typed tabular data: schemas, records, CSV ingestion and the numeric codec
//! that bridges attribute space and real vectors.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Domain of a single attribute.
#[derive(Clone, Debug, PartialEq)]
pub enum Domain {
    /// Finite label set. `order` holds declared `a ⪯ b` pairs by category index.
    Categorical {
        categories: Vec<String>,
        order: Vec<(usize, usize)>,
    },
    Continuous {
        interval: Option<(f64, f64)>,
    },
}

/// One attribute space `A_j`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawAttribute", into = "RawAttribute")]
pub struct AttributeSpace {
    name: String,
    domain: Domain,
    /// Reflexive-transitive closure of the declared order, `closure[a][b]` iff `a ⪯ b`.
    closure: Option<Vec<Vec<bool>>>,
}

#[derive(Serialize, Deserialize)]
struct RawAttribute {
    name: String,
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    domain: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    order: Vec<(String, String)>,
}

impl TryFrom<RawAttribute> for AttributeSpace {
    type Error = Error;

    fn try_from(raw: RawAttribute) -> Result<Self> {
        match raw.kind.as_str() {
            "categorical" => {
                let categories: Vec<String> = match raw.domain {
                    Some(v) => serde_json::from_value(v).map_err(|e| {
                        Error::Schema(format!(
                            "attribute {:?}: bad categorical domain: {e}",
                            raw.name
                        ))
                    })?,
                    None => {
                        return Err(Error::Schema(format!(
                            "attribute {:?}: categorical attribute needs a domain",
                            raw.name
                        )))
                    }
                };
                AttributeSpace::ordered_categorical(raw.name, categories, raw.order)
            }
            "continuous" => {
                if !raw.order.is_empty() {
                    return Err(Error::Schema(format!(
                        "attribute {:?}: order pairs only apply to categorical attributes",
                        raw.name
                    )));
                }
                let interval = match raw.domain {
                    None | Some(serde_json::Value::Null) => None,
                    Some(v) => {
                        let [lo, hi]: [f64; 2] = serde_json::from_value(v).map_err(|e| {
                            Error::Schema(format!("attribute {:?}: bad interval: {e}", raw.name))
                        })?;
                        Some((lo, hi))
                    }
                };
                AttributeSpace::continuous(raw.name, interval)
            }
            other => Err(Error::Schema(format!(
                "attribute {:?}: unknown kind {other:?}",
                raw.name
            ))),
        }
    }
}

impl From<AttributeSpace> for RawAttribute {
    fn from(a: AttributeSpace) -> Self {
        match a.domain {
            Domain::Categorical { categories, order } => RawAttribute {
                name: a.name,
                kind: "categorical".into(),
                order: order
                    .iter()
                    .map(|&(x, y)| (categories[x].clone(), categories[y].clone()))
                    .collect(),
                domain: Some(serde_json::json!(categories)),
            },
            Domain::Continuous { interval } => RawAttribute {
                name: a.name,
                kind: "continuous".into(),
                domain: interval.map(|(lo, hi)| serde_json::json!([lo, hi])),
                order: Vec::new(),
            },
        }
    }
}

impl AttributeSpace {
    pub fn continuous(name: impl Into<String>, interval: Option<(f64, f64)>) -> Result<Self> {
        let name = name.into();
        if let Some((lo, hi)) = interval {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::Schema(format!(
                    "attribute {name:?}: interval [{lo}, {hi}] is not a valid closed interval"
                )));
            }
        }
        Ok(AttributeSpace {
            name,
            domain: Domain::Continuous { interval },
            closure: None,
        })
    }

    pub fn categorical<S: Into<String>>(
        name: impl Into<String>,
        categories: impl IntoIterator<Item = S>,
    ) -> Result<Self> {
        Self::ordered_categorical(
            name,
            categories.into_iter().map(Into::into).collect(),
            Vec::new(),
        )
    }

    /// Categorical attribute with a partial order given as `(lesser, greater)` label pairs.
    pub fn ordered_categorical(
        name: impl Into<String>,
        categories: Vec<String>,
        order: Vec<(String, String)>,
    ) -> Result<Self> {
        let name = name.into();
        if categories.is_empty() {
            return Err(Error::Schema(format!(
                "attribute {name:?}: empty category list"
            )));
        }
        let mut seen = HashSet::new();
        for c in &categories {
            if !seen.insert(c.as_str()) {
                return Err(Error::Schema(format!(
                    "attribute {name:?}: duplicate category {c:?}"
                )));
            }
        }
        let index = |label: &str| {
            categories.iter().position(|c| c == label).ok_or_else(|| {
                Error::Schema(format!(
                    "attribute {name:?}: order pair references undeclared category {label:?}"
                ))
            })
        };
        let mut pairs = Vec::with_capacity(order.len());
        for (a, b) in &order {
            pairs.push((index(a)?, index(b)?));
        }
        let closure = if pairs.is_empty() {
            None
        } else {
            let k = categories.len();
            let mut c = vec![vec![false; k]; k];
            for (i, row) in c.iter_mut().enumerate() {
                row[i] = true;
            }
            for &(a, b) in &pairs {
                c[a][b] = true;
            }
            // Floyd–Warshall style transitive closure.
            for via in 0..k {
                let reach = c[via].clone();
                for row in c.iter_mut().filter(|row| row[via]) {
                    for (cell, &r) in row.iter_mut().zip(&reach) {
                        *cell |= r;
                    }
                }
            }
            for i in 0..k {
                for j in 0..k {
                    if i != j && c[i][j] && c[j][i] {
                        return Err(Error::Schema(format!(
                            "attribute {name:?}: order is cyclic between {:?} and {:?}",
                            categories[i], categories[j]
                        )));
                    }
                }
            }
            Some(c)
        };
        Ok(AttributeSpace {
            name,
            domain: Domain::Categorical {
                categories,
                order: pairs,
            },
            closure,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn is_categorical(&self) -> bool {
        matches!(self.domain, Domain::Categorical { .. })
    }

    pub fn categories(&self) -> &[String] {
        match &self.domain {
            Domain::Categorical { categories, .. } => categories,
            Domain::Continuous { .. } => &[],
        }
    }

    pub fn category_index(&self, label: &str) -> Option<usize> {
        self.categories().iter().position(|c| c == label)
    }

    pub fn interval(&self) -> Option<(f64, f64)> {
        match self.domain {
            Domain::Continuous { interval } => interval,
            Domain::Categorical { .. } => None,
        }
    }

    /// True for categorical attributes that carry a declared order.
    pub fn is_ordered(&self) -> bool {
        self.closure.is_some()
    }

    /// `a ⪯ b` under the declared order (reflexive). `None` when no order is declared.
    pub fn precedes_eq(&self, a: usize, b: usize) -> Option<bool> {
        self.closure.as_ref().map(|c| c[a][b])
    }

    /// Checks that `value` lies in this attribute's domain.
    pub fn check(&self, value: &Value) -> std::result::Result<(), String> {
        match (&self.domain, value) {
            (Domain::Categorical { categories, .. }, Value::Cat(i)) => {
                if *i < categories.len() {
                    Ok(())
                } else {
                    Err(format!("category index {i} out of range"))
                }
            }
            (Domain::Continuous { interval }, Value::Num(x)) => {
                if !x.is_finite() {
                    return Err(format!("non-finite value {x}"));
                }
                match interval {
                    Some((lo, hi)) if *x < *lo || *x > *hi => {
                        Err(format!("value {x} outside declared interval [{lo}, {hi}]"))
                    }
                    _ => Ok(()),
                }
            }
            (Domain::Categorical { .. }, Value::Num(_)) => {
                Err("numeric value for categorical attribute".into())
            }
            (Domain::Continuous { .. }, Value::Cat(_)) => {
                Err("categorical value for continuous attribute".into())
            }
        }
    }

    /// Parses a CSV cell into a value of this attribute.
    pub fn parse(&self, cell: &str) -> std::result::Result<Value, String> {
        let cell = cell.trim();
        if cell.is_empty() {
            return Err("missing value".into());
        }
        let v = match &self.domain {
            Domain::Categorical { categories, .. } => Value::Cat(
                categories
                    .iter()
                    .position(|c| c == cell)
                    .ok_or_else(|| format!("category {cell:?} is not in the declared domain"))?,
            ),
            Domain::Continuous { .. } => Value::Num(
                cell.parse::<f64>()
                    .map_err(|_| format!("cannot parse {cell:?} as a number"))?,
            ),
        };
        self.check(&v)?;
        Ok(v)
    }

    pub fn format(&self, value: &Value) -> String {
        match value {
            Value::Cat(i) => self.categories()[*i].clone(),
            Value::Num(x) => format!("{x}"),
        }
    }
}

/// A cell value: category index into the attribute's domain, or a real number.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Value {
    Cat(usize),
    Num(f64),
}

impl Value {
    /// Numeric view used by information estimators: category index or the number itself.
    pub fn as_f64(&self) -> f64 {
        match *self {
            Value::Cat(i) => i as f64,
            Value::Num(x) => x,
        }
    }
}

pub type Record = Vec<Value>;

/// Ordered list of attribute spaces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<AttributeSpace>", into = "Vec<AttributeSpace>")]
pub struct Schema {
    attributes: Vec<AttributeSpace>,
}

impl TryFrom<Vec<AttributeSpace>> for Schema {
    type Error = Error;
    fn try_from(v: Vec<AttributeSpace>) -> Result<Self> {
        Schema::new(v)
    }
}

impl From<Schema> for Vec<AttributeSpace> {
    fn from(s: Schema) -> Self {
        s.attributes
    }
}

impl Schema {
    pub fn new(attributes: Vec<AttributeSpace>) -> Result<Self> {
        if attributes.is_empty() {
            return Err(Error::Schema("schema needs at least one attribute".into()));
        }
        let mut seen = HashSet::new();
        for a in &attributes {
            if !seen.insert(a.name.as_str()) {
                return Err(Error::Schema(format!(
                    "duplicate attribute name {:?}",
                    a.name
                )));
            }
        }
        Ok(Schema { attributes })
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn attributes(&self) -> &[AttributeSpace] {
        &self.attributes
    }

    pub fn attribute(&self, j: usize) -> &AttributeSpace {
        &self.attributes[j]
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    pub fn names(&self) -> Vec<String> {
        self.attributes.iter().map(|a| a.name.clone()).collect()
    }

    /// Sub-schema keeping the given attribute indices, in the given order.
    pub fn project(&self, cols: &[usize]) -> Result<Schema> {
        Schema::new(cols.iter().map(|&j| self.attributes[j].clone()).collect())
    }
}

/// An `n × m` table of validated records.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    schema: Schema,
    records: Vec<Record>,
}

impl Dataset {
    pub fn new(schema: Schema, records: Vec<Record>) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            if r.len() != schema.len() {
                return Err(Error::Cell {
                    row: i + 1,
                    column: String::new(),
                    message: format!("record has {} values, schema has {}", r.len(), schema.len()),
                });
            }
            for (a, v) in schema.attributes.iter().zip(r) {
                a.check(v).map_err(|message| Error::Cell {
                    row: i + 1,
                    column: a.name.clone(),
                    message,
                })?;
            }
        }
        Ok(Dataset { schema, records })
    }

    /// Reads an RFC-4180 CSV whose header must list the schema's attribute names in order.
    /// Row numbers in errors are 1-based and count data rows only.
    pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(file, schema)
    }

    pub fn read_csv<R: std::io::Read>(reader: R, schema: &Schema) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(reader);
        let header: Vec<String> = rdr
            .headers()?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        let expected = schema.names();
        if header != expected {
            return Err(Error::HeaderMismatch {
                expected,
                found: header,
            });
        }
        let mut records = Vec::new();
        for (i, row) in rdr.records().enumerate() {
            let row = row?;
            if row.len() != schema.len() {
                return Err(Error::Cell {
                    row: i + 1,
                    column: String::new(),
                    message: format!("expected {} fields, found {}", schema.len(), row.len()),
                });
            }
            let rec = schema
                .attributes
                .iter()
                .zip(row.iter())
                .map(|(a, cell)| {
                    a.parse(cell).map_err(|message| Error::Cell {
                        row: i + 1,
                        column: a.name.clone(),
                        message,
                    })
                })
                .collect::<Result<Record>>()?;
            records.push(rec);
        }
        Ok(Dataset {
            schema: schema.clone(),
            records,
        })
    }

    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(self.schema.names())?;
        for r in &self.records {
            w.write_record(
                self.schema
                    .attributes
                    .iter()
                    .zip(r)
                    .map(|(a, v)| a.format(v)),
            )?;
        }
        w.flush().map_err(|e| Error::io("<csv writer>", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn record(&self, i: usize) -> &Record {
        &self.records[i]
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    pub fn m(&self) -> usize {
        self.schema.len()
    }

    /// Column `j` as reals (category indices for categorical attributes).
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.records.iter().map(|r| r[j].as_f64()).collect()
    }

    /// Rows `rows` restricted to attributes `cols`, remembering the original indices.
    pub fn slice(&self, rows: &[usize], cols: &[usize]) -> Result<DataSlice> {
        for &i in rows {
            if i >= self.n() {
                return Err(Error::invalid(format!("row index {i} out of range")));
            }
        }
        for &j in cols {
            if j >= self.m() {
                return Err(Error::invalid(format!("column index {j} out of range")));
            }
        }
        let schema = self.schema.project(cols)?;
        let records = rows
            .iter()
            .map(|&i| cols.iter().map(|&j| self.records[i][j]).collect())
            .collect();
        Ok(DataSlice {
            data: Dataset { schema, records },
            rows: rows.to_vec(),
            cols: cols.to_vec(),
        })
    }
}

/// Extracted data `D^(E)`: a dataset plus the row and column indices it was cut from.
#[derive(Clone, Debug, PartialEq)]
pub struct DataSlice {
    pub data: Dataset,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
}

impl DataSlice {
    /// Treats a whole dataset as its own slice.
    pub fn whole(data: Dataset) -> Self {
        let rows = (0..data.n()).collect();
        let cols = (0..data.m()).collect();
        DataSlice { data, rows, cols }
    }
}

/// A declared functional dependency `sources → target`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionalDependency {
    pub sources: Vec<String>,
    pub target: String,
    #[serde(default)]
    pub description: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnownDistribution {
    pub family: String,
    #[serde(default)]
    pub params: Vec<f64>,
}

/// Domain knowledge supplied alongside the data.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExternalKnowledge {
    #[serde(default)]
    pub dependencies: Vec<FunctionalDependency>,
    #[serde(default)]
    pub distributions: BTreeMap<String, KnownDistribution>,
    #[serde(default)]
    pub latents: Vec<String>,
}

impl ExternalKnowledge {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn validate(&self, schema: &Schema) -> Result<()> {
        let known = |name: &str| {
            schema.index_of(name).map(|_| ()).ok_or_else(|| {
                Error::Schema(format!(
                    "external knowledge references unknown attribute {name:?}"
                ))
            })
        };
        for fd in &self.dependencies {
            if fd.sources.is_empty() {
                return Err(Error::Schema(format!(
                    "dependency on {:?} has no source attributes",
                    fd.target
                )));
            }
            for s in &fd.sources {
                known(s)?;
                if *s == fd.target {
                    return Err(Error::Schema(format!(
                        "dependency on {:?} lists itself as a source",
                        fd.target
                    )));
                }
            }
            known(&fd.target)?;
        }
        for name in self.distributions.keys() {
            known(name)?;
        }
        Ok(())
    }
}

/// Layout of one attribute inside the encoded vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Slot {
    Categorical {
        offset: usize,
        width: usize,
    },
    Continuous {
        offset: usize,
        mean: f64,
        std: f64,
        #[serde(default)]
        interval: Option<(f64, f64)>,
    },
}

impl Slot {
    pub fn offset(&self) -> usize {
        match *self {
            Slot::Categorical { offset, .. } | Slot::Continuous { offset, .. } => offset,
        }
    }

    pub fn width(&self) -> usize {
        match *self {
            Slot::Categorical { width, .. } => width,
            Slot::Continuous { .. } => 1,
        }
    }
}

/// Standard deviations below this are treated as zero and replaced by 1.
const STD_FLOOR_EPS: f64 = 1e-12;

/// One-hot / standardization plan for a subset of a schema's attributes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Codec {
    /// Schema indices of the encoded attributes, in encoding order.
    attributes: Vec<usize>,
    slots: Vec<Slot>,
    width: usize,
}

impl Codec {
    /// Codec over every attribute of `data`.
    pub fn build(data: &Dataset) -> Result<Self> {
        let all: Vec<usize> = (0..data.m()).collect();
        Self::build_for(data, &all)
    }

    /// Codec over the given attribute indices; statistics come from `data`.
    pub fn build_for(data: &Dataset, attributes: &[usize]) -> Result<Self> {
        if data.n() == 0 {
            return Err(Error::invalid("cannot build a codec from an empty dataset"));
        }
        let mut slots = Vec::with_capacity(attributes.len());
        let mut offset = 0;
        for &j in attributes {
            let a = data.schema().attribute(j);
            match a.domain() {
                Domain::Categorical { categories, .. } => {
                    slots.push(Slot::Categorical {
                        offset,
                        width: categories.len(),
                    });
                    offset += categories.len();
                }
                Domain::Continuous { interval } => {
                    let col = data.column(j);
                    let n = col.len() as f64;
                    let mean = col.iter().sum::<f64>() / n;
                    let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                    let std = var.sqrt();
                    let std = if std < STD_FLOOR_EPS { 1.0 } else { std };
                    slots.push(Slot::Continuous {
                        offset,
                        mean,
                        std,
                        interval: *interval,
                    });
                    offset += 1;
                }
            }
        }
        Ok(Codec {
            attributes: attributes.to_vec(),
            slots,
            width: offset,
        })
    }

    /// Encoded width `D_enc`.
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn attributes(&self) -> &[usize] {
        &self.attributes
    }

    pub fn slots(&self) -> &[Slot] {
        &self.slots
    }

    /// Encodes the codec's attributes of a full-schema record.
    pub fn encode_record(&self, record: &[Value]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.width];
        self.encode_into(record, &mut out)?;
        Ok(out)
    }

    pub fn encode_into(&self, record: &[Value], out: &mut [f64]) -> Result<()> {
        if out.len() != self.width {
            return Err(Error::Dimension {
                expected: self.width,
                got: out.len(),
            });
        }
        for (&j, slot) in self.attributes.iter().zip(&self.slots) {
            let v = record.get(j).ok_or(Error::Dimension {
                expected: j + 1,
                got: record.len(),
            })?;
            match (slot, v) {
                (Slot::Categorical { offset, width }, Value::Cat(c)) if c < width => {
                    out[*offset..*offset + *width].fill(0.0);
                    out[offset + c] = 1.0;
                }
                (
                    Slot::Continuous {
                        offset, mean, std, ..
                    },
                    Value::Num(x),
                ) => {
                    out[*offset] = (x - mean) / std;
                }
                _ => {
                    return Err(Error::invalid(format!(
                        "value {v:?} does not match the encoding of attribute {j}"
                    )))
                }
            }
        }
        Ok(())
    }

    /// Decodes into `record` (a full-schema record), writing only the codec's attributes.
    /// Returns true when any continuous value had to be clamped into its declared interval.
    pub fn decode_into(&self, v: &[f64], record: &mut [Value]) -> Result<bool> {
        if v.len() != self.width {
            return Err(Error::Dimension {
                expected: self.width,
                got: v.len(),
            });
        }
        let mut clamped = false;
        for (&j, slot) in self.attributes.iter().zip(&self.slots) {
            record[j] = match *slot {
                Slot::Categorical { offset, width } => {
                    Value::Cat(argmax(&v[offset..offset + width]))
                }
                Slot::Continuous {
                    offset,
                    mean,
                    std,
                    interval,
                } => {
                    let mut x = v[offset] * std + mean;
                    if let Some((lo, hi)) = interval {
                        if x < lo || x > hi {
                            clamped = true;
                            x = x.clamp(lo, hi);
                        }
                    }
                    Value::Num(x)
                }
            };
        }
        Ok(clamped)
    }

    /// Decodes a vector into the values of the codec's attributes, in codec order.
    pub fn decode_vector(&self, v: &[f64]) -> Result<Vec<Value>> {
        let max_j = self.attributes.iter().copied().max().map_or(0, |j| j + 1);
        let mut full = vec![Value::Num(0.0); max_j];
        self.decode_into(v, &mut full)?;
        Ok(self.attributes.iter().map(|&j| full[j]).collect())
    }
}

/// Index of the largest entry; the first one wins ties.
pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
