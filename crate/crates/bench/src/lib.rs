//! Synthetic workloads shared by the stage benchmarks.

use detangle_core::request::CmpOp;
use detangle_core::{AttributeSpace, ConditionExpr, Dataset, Schema, Value};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// `n` rows of `m` continuous attributes plus a binary `group` attribute. The
/// first attribute depends on the group; the rest are noise loosely tied to it.
pub fn tabular(n: usize, m: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut attrs: Vec<AttributeSpace> = (0..m)
        .map(|j| AttributeSpace::continuous(format!("x{j}"), None).expect("valid attribute"))
        .collect();
    attrs.push(AttributeSpace::categorical("group", ["a", "b"]).expect("valid attribute"));
    let schema = Schema::new(attrs).expect("valid schema");
    let records = (0..n)
        .map(|_| {
            let g = usize::from(rng.random::<f64>() < 0.4);
            let base = if g == 1 { 2.0 } else { -1.0 };
            let mut r: Vec<Value> = (0..m)
                .map(|j| {
                    let e: f64 = rng.sample(StandardNormal);
                    Value::Num(if j == 0 { base + e } else { 0.3 * base + e })
                })
                .collect();
            r.push(Value::Cat(g));
            r
        })
        .collect();
    Dataset::new(schema, records).expect("valid records")
}

/// Target window of [`tabular`]: rows with `x0 > 1.5`.
pub fn window_condition() -> ConditionExpr {
    ConditionExpr::num("x0", CmpOp::Gt, 1.5)
}

/// Bimodal one-dimensional sample.
pub fn bimodal(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let e: f64 = rng.sample(StandardNormal);
            if i % 2 == 0 {
                -3.0 + e
            } else {
                3.0 + 0.5 * e
            }
        })
        .collect()
}
