#![allow(dead_code)]

use std::path::PathBuf;

use detangle_core::data::{AttributeSpace, Dataset, Schema, Value};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    detangle_core::seed::rng(seed)
}

pub fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn continuous_schema(m: usize) -> Schema {
    Schema::new(
        (0..m)
            .map(|j| AttributeSpace::continuous(format!("x{j}"), None).unwrap())
            .collect(),
    )
    .unwrap()
}

pub fn continuous_data(rows: &[Vec<f64>]) -> Dataset {
    let schema = continuous_schema(rows[0].len());
    Dataset::new(
        schema,
        rows.iter()
            .map(|r| r.iter().map(|&x| Value::Num(x)).collect())
            .collect(),
    )
    .unwrap()
}

/// Mean of precision at each positive's rank, with scores sorted descending.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> f64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if labels[i] {
            hits += 1;
            total += hits as f64 / (rank + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        total / hits as f64
    }
}

pub fn demo_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../demo")
}

/// A demo pipeline configuration writing into `out`.
pub fn demo_config(out: &std::path::Path) -> detangle_core::PipelineConfig {
    let mut cfg =
        detangle_core::PipelineConfig::from_json_file(demo_dir().join("config.json")).unwrap();
    cfg.out = out.to_path_buf();
    cfg
}

/// Gender-grouped table: `gender` (F/M), then two continuous attributes whose
/// means depend on gender.
pub fn gender_data(n: usize, p_female: f64, seed: u64) -> Dataset {
    let schema = Schema::new(vec![
        AttributeSpace::categorical("gender", ["F", "M"]).unwrap(),
        AttributeSpace::continuous("x1", None).unwrap(),
        AttributeSpace::continuous("x2", None).unwrap(),
    ])
    .unwrap();
    let mut r = rng(seed);
    let records = (0..n)
        .map(|_| {
            let female = r.random::<f64>() < p_female;
            let f = if female { 1.0 } else { 0.0 };
            let x1 = 2.0 * f + normal(&mut r);
            let x2 = 0.5 * x1 - f + normal(&mut r);
            vec![
                Value::Cat(usize::from(!female)),
                Value::Num(x1),
                Value::Num(x2),
            ]
        })
        .collect();
    Dataset::new(schema, records).unwrap()
}
