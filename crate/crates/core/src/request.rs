//! The request quintuple: extraction query, extrapolation query, objective,
//! extraction budgets and model budget; plus condition evaluation.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use crate::data::{Dataset, Domain, Schema, Value};
use crate::error::{Error, Issue, Result};

/// Tolerance within which a hand-written categorical marginal is silently renormalized.
pub const RENORMALIZE_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "==" => CmpOp::Eq,
            "!=" => CmpOp::Ne,
            "<" => CmpOp::Lt,
            "<=" => CmpOp::Le,
            ">" => CmpOp::Gt,
            ">=" => CmpOp::Ge,
            _ => return None,
        })
    }

    fn is_ordered(self) -> bool {
        !matches!(self, CmpOp::Eq | CmpOp::Ne)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Literal {
    Num(f64),
    Str(String),
}

/// Boolean expression over `attr CMP literal` atoms.
///
/// Serialized as a nested prefix expression: `true`, `[">=", "age", 30]`,
/// `["and", c1, c2, ...]`, `["or", ...]`, `["not", c]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Json", into = "Json")]
pub enum ConditionExpr {
    Const(bool),
    Cmp {
        attr: String,
        op: CmpOp,
        lit: Literal,
    },
    And(Vec<ConditionExpr>),
    Or(Vec<ConditionExpr>),
    Not(Box<ConditionExpr>),
}

impl TryFrom<Json> for ConditionExpr {
    type Error = Error;

    fn try_from(v: Json) -> Result<Self> {
        let bad = |msg: &str| Error::Condition(format!("{msg}: {v}"));
        match &v {
            Json::Bool(b) => Ok(ConditionExpr::Const(*b)),
            Json::Array(items) => {
                let head = items
                    .first()
                    .and_then(Json::as_str)
                    .ok_or_else(|| bad("expression must start with an operator"))?;
                match head {
                    "and" | "or" => {
                        let args = items[1..]
                            .iter()
                            .cloned()
                            .map(ConditionExpr::try_from)
                            .collect::<Result<Vec<_>>>()?;
                        Ok(if head == "and" {
                            ConditionExpr::And(args)
                        } else {
                            ConditionExpr::Or(args)
                        })
                    }
                    "not" => {
                        if items.len() != 2 {
                            return Err(bad("not takes exactly one argument"));
                        }
                        Ok(ConditionExpr::Not(Box::new(items[1].clone().try_into()?)))
                    }
                    op => {
                        let op = CmpOp::parse(op).ok_or_else(|| bad("unknown operator"))?;
                        if items.len() != 3 {
                            return Err(bad("comparison takes an attribute and a literal"));
                        }
                        let attr = items[1]
                            .as_str()
                            .ok_or_else(|| bad("attribute name must be a string"))?
                            .to_string();
                        let lit = match &items[2] {
                            Json::Number(n) => {
                                Literal::Num(n.as_f64().ok_or_else(|| bad("bad number"))?)
                            }
                            Json::String(s) => Literal::Str(s.clone()),
                            _ => return Err(bad("literal must be a number or a string")),
                        };
                        Ok(ConditionExpr::Cmp { attr, op, lit })
                    }
                }
            }
            _ => Err(bad("expected a boolean or an array")),
        }
    }
}

impl From<ConditionExpr> for Json {
    fn from(c: ConditionExpr) -> Json {
        match c {
            ConditionExpr::Const(b) => Json::Bool(b),
            ConditionExpr::Cmp { attr, op, lit } => {
                let lit = match lit {
                    Literal::Num(x) => serde_json::json!(x),
                    Literal::Str(s) => Json::String(s),
                };
                serde_json::json!([op.symbol(), attr, lit])
            }
            ConditionExpr::And(args) => nary("and", args),
            ConditionExpr::Or(args) => nary("or", args),
            ConditionExpr::Not(inner) => serde_json::json!(["not", Json::from(*inner)]),
        }
    }
}

fn nary(head: &str, args: Vec<ConditionExpr>) -> Json {
    let mut items = vec![Json::String(head.into())];
    items.extend(args.into_iter().map(Json::from));
    Json::Array(items)
}

impl ConditionExpr {
    pub fn and(args: Vec<ConditionExpr>) -> Self {
        ConditionExpr::And(args)
    }

    pub fn or(args: Vec<ConditionExpr>) -> Self {
        ConditionExpr::Or(args)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(inner: ConditionExpr) -> Self {
        ConditionExpr::Not(Box::new(inner))
    }

    pub fn num(attr: &str, op: CmpOp, x: f64) -> Self {
        ConditionExpr::Cmp {
            attr: attr.into(),
            op,
            lit: Literal::Num(x),
        }
    }

    pub fn cat(attr: &str, op: CmpOp, label: &str) -> Self {
        ConditionExpr::Cmp {
            attr: attr.into(),
            op,
            lit: Literal::Str(label.into()),
        }
    }

    /// Static check against a schema: attributes exist, literal kinds match,
    /// ordered comparisons only on continuous or ordered-categorical attributes.
    pub fn validate(&self, schema: &Schema) -> Result<()> {
        match self {
            ConditionExpr::Const(_) => Ok(()),
            ConditionExpr::Cmp { attr, op, lit } => {
                resolve_atom(schema, attr, *op, lit).map(|_| ())
            }
            ConditionExpr::And(args) | ConditionExpr::Or(args) => {
                args.iter().try_for_each(|a| a.validate(schema))
            }
            ConditionExpr::Not(inner) => inner.validate(schema),
        }
    }

    /// Evaluates the condition `q^(c)` on a schema-conformant record.
    pub fn eval(&self, schema: &Schema, record: &[Value]) -> Result<bool> {
        Ok(match self {
            ConditionExpr::Const(b) => *b,
            ConditionExpr::Cmp { attr, op, lit } => {
                let (j, rhs) = resolve_atom(schema, attr, *op, lit)?;
                compare(schema, j, &record[j], *op, &rhs)
            }
            ConditionExpr::And(args) => {
                for a in args {
                    if !a.eval(schema, record)? {
                        return Ok(false);
                    }
                }
                true
            }
            ConditionExpr::Or(args) => {
                for a in args {
                    if a.eval(schema, record)? {
                        return Ok(true);
                    }
                }
                false
            }
            ConditionExpr::Not(inner) => !inner.eval(schema, record)?,
        })
    }
}

/// Free-function form of [`ConditionExpr::eval`].
pub fn eval_condition(cond: &ConditionExpr, schema: &Schema, record: &[Value]) -> Result<bool> {
    cond.eval(schema, record)
}

fn resolve_atom(schema: &Schema, attr: &str, op: CmpOp, lit: &Literal) -> Result<(usize, Value)> {
    let j = schema
        .index_of(attr)
        .ok_or_else(|| Error::Condition(format!("unknown attribute {attr:?}")))?;
    let a = schema.attribute(j);
    match (a.domain(), lit) {
        (Domain::Continuous { .. }, Literal::Num(x)) => Ok((j, Value::Num(*x))),
        (Domain::Categorical { .. }, Literal::Str(s)) => {
            if op.is_ordered() && !a.is_ordered() {
                return Err(Error::Condition(format!(
                    "ordered comparison {} on unordered categorical attribute {attr:?}",
                    op.symbol()
                )));
            }
            let c = a.category_index(s).ok_or_else(|| {
                Error::Condition(format!("category {s:?} not in the domain of {attr:?}"))
            })?;
            Ok((j, Value::Cat(c)))
        }
        (Domain::Continuous { .. }, Literal::Str(_)) => Err(Error::Condition(format!(
            "string literal compared with continuous attribute {attr:?}"
        ))),
        (Domain::Categorical { .. }, Literal::Num(_)) => Err(Error::Condition(format!(
            "numeric literal compared with categorical attribute {attr:?}"
        ))),
    }
}

fn compare(schema: &Schema, j: usize, lhs: &Value, op: CmpOp, rhs: &Value) -> bool {
    match (lhs, rhs) {
        (Value::Num(x), Value::Num(y)) => match op {
            CmpOp::Eq => x == y,
            CmpOp::Ne => x != y,
            CmpOp::Lt => x < y,
            CmpOp::Le => x <= y,
            CmpOp::Gt => x > y,
            CmpOp::Ge => x >= y,
        },
        (Value::Cat(a), Value::Cat(b)) => {
            let attr = schema.attribute(j);
            let le = |x: usize, y: usize| attr.precedes_eq(x, y).unwrap_or(x == y);
            match op {
                CmpOp::Eq => a == b,
                CmpOp::Ne => a != b,
                CmpOp::Lt => a != b && le(*a, *b),
                CmpOp::Le => le(*a, *b),
                CmpOp::Gt => a != b && le(*b, *a),
                CmpOp::Ge => le(*b, *a),
            }
        }
        _ => false,
    }
}

/// `q = (q^(c), q^(s))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractionQuery {
    pub condition: ConditionExpr,
    pub select: Vec<String>,
}

/// Target marginal for one attribute of an extrapolation query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Marginal {
    Categorical { probs: BTreeMap<String, f64> },
    Point { value: f64 },
    Uniform { a: f64, b: f64 },
    Normal { mean: f64, variance: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeCondition {
    pub attribute: String,
    pub marginal: Marginal,
}

/// `p = (p^(c), p^(s))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtrapolationQuery {
    pub select: Vec<String>,
    pub condition: Vec<AttributeCondition>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Objective {
    /// Designated utility attribute; `None` means the joint of the target-window attributes.
    #[serde(default)]
    pub utility: Option<String>,
    pub lambda: f64,
}

/// The request quintuple as read from a request file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub extraction: ExtractionQuery,
    #[serde(default)]
    pub extrapolation: Option<ExtrapolationQuery>,
    pub objective: Objective,
    pub alpha_r: f64,
    pub alpha_c: f64,
    pub beta: usize,
}

impl Request {
    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// A marginal bound to its attribute's domain.
#[derive(Clone, Debug, PartialEq)]
pub enum ResolvedMarginal {
    /// Probability per category index, summing to one.
    Table(Vec<f64>),
    Point(f64),
    Uniform(f64, f64),
    Normal {
        mean: f64,
        variance: f64,
    },
}

impl ResolvedMarginal {
    /// Probability mass (categorical) or density (continuous) at `v`.
    /// Point masses on continuous attributes have no density; callers handle them.
    pub fn density(&self, v: &Value) -> f64 {
        match (self, v) {
            (ResolvedMarginal::Table(p), Value::Cat(c)) => p.get(*c).copied().unwrap_or(0.0),
            (ResolvedMarginal::Uniform(a, b), Value::Num(x)) => {
                if x >= a && x <= b {
                    1.0 / (b - a)
                } else {
                    0.0
                }
            }
            (ResolvedMarginal::Normal { mean, variance }, Value::Num(x)) => {
                crate::analyze::normal_pdf(*x, *mean, *variance)
            }
            _ => 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckedExtrapolation {
    /// `p^(s)` as schema indices.
    pub select: Vec<usize>,
    /// `(schema index, marginal)` per conditioned attribute.
    pub conditions: Vec<(usize, ResolvedMarginal)>,
}

/// A request whose invariants have been verified against a schema.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckedRequest {
    pub condition: ConditionExpr,
    /// `q^(s)` as schema indices, ascending.
    pub select: Vec<usize>,
    pub extrapolation: Option<CheckedExtrapolation>,
    pub utility: Option<usize>,
    pub lambda: f64,
    pub alpha_r: f64,
    pub alpha_c: f64,
    pub beta: usize,
}

/// Verifies every request invariant, collecting all violations with their field paths.
pub fn validate_request(r: &Request, schema: &Schema) -> Result<CheckedRequest> {
    let mut issues = Vec::new();
    let mut issue = |path: &str, message: String| {
        issues.push(Issue {
            path: path.into(),
            message,
        })
    };

    for (path, a) in [("alpha_r", r.alpha_r), ("alpha_c", r.alpha_c)] {
        if !(a > 0.0 && a < 1.0) {
            issue(path, format!("budget out of (0,1): {a}"));
        }
    }
    if r.beta < 1 {
        issue("beta", "model budget must be at least 1".into());
    }
    if !(r.objective.lambda > 0.0 && r.objective.lambda.is_finite()) {
        issue(
            "objective.lambda",
            format!("must be positive, got {}", r.objective.lambda),
        );
    }
    if let Err(e) = r.extraction.condition.validate(schema) {
        issue("extraction.condition", e.to_string());
    }

    let mut select = Vec::new();
    if r.extraction.select.is_empty() {
        issue("extraction.select", "selection must be nonempty".into());
    }
    for (k, name) in r.extraction.select.iter().enumerate() {
        match schema.index_of(name) {
            Some(j) if select.contains(&j) => issue(
                &format!("extraction.select[{k}]"),
                format!("duplicate attribute {name:?}"),
            ),
            Some(j) => select.push(j),
            None => issue(
                &format!("extraction.select[{k}]"),
                format!("unknown attribute {name:?}"),
            ),
        }
    }
    select.sort_unstable();

    let utility = match &r.objective.utility {
        None => None,
        Some(name) => match schema.index_of(name) {
            Some(j) if select.contains(&j) => Some(j),
            Some(_) => {
                issue(
                    "objective.utility",
                    format!("{name:?} is not in the extraction selection"),
                );
                None
            }
            None => {
                issue("objective.utility", format!("unknown attribute {name:?}"));
                None
            }
        },
    };

    let extrapolation = r.extrapolation.as_ref().map(|p| {
        let mut psel = Vec::new();
        for (k, name) in p.select.iter().enumerate() {
            match schema.index_of(name) {
                Some(j) if !select.contains(&j) => issue(
                    &format!("extrapolation.select[{k}]"),
                    format!("{name:?} is not in the extraction selection"),
                ),
                Some(j) => psel.push(j),
                None => issue(
                    &format!("extrapolation.select[{k}]"),
                    format!("unknown attribute {name:?}"),
                ),
            }
        }
        psel.sort_unstable();
        psel.dedup();
        let mut conditions = Vec::new();
        for (k, c) in p.condition.iter().enumerate() {
            let path = format!("extrapolation.condition[{k}]");
            let Some(j) = schema.index_of(&c.attribute) else {
                issue(&path, format!("unknown attribute {:?}", c.attribute));
                continue;
            };
            if !psel.contains(&j) {
                issue(
                    &path,
                    format!("{:?} is not in the extrapolation selection", c.attribute),
                );
                continue;
            }
            if conditions.iter().any(|(i, _)| *i == j) {
                issue(&path, format!("{:?} is conditioned twice", c.attribute));
                continue;
            }
            match resolve_marginal(schema, j, &c.marginal) {
                Ok(m) => conditions.push((j, m)),
                Err(msg) => issue(&format!("{path}.marginal"), msg),
            }
        }
        CheckedExtrapolation {
            select: psel,
            conditions,
        }
    });

    if !issues.is_empty() {
        return Err(Error::Request(issues));
    }
    Ok(CheckedRequest {
        condition: r.extraction.condition.clone(),
        select,
        extrapolation,
        utility,
        lambda: r.objective.lambda,
        alpha_r: r.alpha_r,
        alpha_c: r.alpha_c,
        beta: r.beta,
    })
}

/// Binds a marginal to attribute `j`, renormalizing categorical tables that are
/// within [`RENORMALIZE_TOL`] of summing to one.
pub fn resolve_marginal(
    schema: &Schema,
    j: usize,
    m: &Marginal,
) -> std::result::Result<ResolvedMarginal, String> {
    let attr = schema.attribute(j);
    match (attr.domain(), m) {
        (Domain::Categorical { categories, .. }, Marginal::Categorical { probs }) => {
            let mut table = vec![0.0; categories.len()];
            for (label, &p) in probs {
                let c = attr.category_index(label).ok_or_else(|| {
                    format!("category {label:?} not in the domain of {:?}", attr.name())
                })?;
                if !(p >= 0.0 && p.is_finite()) {
                    return Err(format!(
                        "probability for {label:?} must be nonnegative, got {p}"
                    ));
                }
                table[c] = p;
            }
            let total: f64 = table.iter().sum();
            if (total - 1.0).abs() > RENORMALIZE_TOL {
                return Err(format!("probabilities sum to {total}, not 1"));
            }
            for p in &mut table {
                *p /= total;
            }
            Ok(ResolvedMarginal::Table(table))
        }
        (Domain::Continuous { .. }, Marginal::Point { value }) if value.is_finite() => {
            Ok(ResolvedMarginal::Point(*value))
        }
        (Domain::Continuous { .. }, Marginal::Uniform { a, b }) => {
            if !(a.is_finite() && b.is_finite() && a <= b) {
                Err(format!("uniform bounds [{a}, {b}] are invalid"))
            } else if a == b {
                Ok(ResolvedMarginal::Point(*a))
            } else {
                Ok(ResolvedMarginal::Uniform(*a, *b))
            }
        }
        (Domain::Continuous { .. }, Marginal::Normal { mean, variance }) => {
            if mean.is_finite() && *variance > 0.0 && variance.is_finite() {
                Ok(ResolvedMarginal::Normal {
                    mean: *mean,
                    variance: *variance,
                })
            } else {
                Err(format!("normal({mean}, {variance}) is invalid"))
            }
        }
        (Domain::Categorical { .. }, _) => Err(format!(
            "categorical attribute {:?} needs a categorical table",
            attr.name()
        )),
        (Domain::Continuous { .. }, _) => Err(format!(
            "continuous attribute {:?} needs a point, uniform or normal marginal",
            attr.name()
        )),
    }
}

/// The target window: `I_q` (ascending row indices) and `q^(s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetWindow {
    pub rows: Vec<usize>,
    pub attrs: Vec<usize>,
}

/// Computes `I_q = {i : q^(c)(d_i) = 1}`; an empty window is an error.
pub fn target_window(
    data: &Dataset,
    condition: &ConditionExpr,
    select: &[usize],
) -> Result<TargetWindow> {
    condition.validate(data.schema())?;
    let mut rows = Vec::new();
    for (i, r) in data.records().iter().enumerate() {
        if condition.eval(data.schema(), r)? {
            rows.push(i);
        }
    }
    if rows.is_empty() {
        return Err(Error::EmptyWindow);
    }
    Ok(TargetWindow {
        rows,
        attrs: select.to_vec(),
    })
}
