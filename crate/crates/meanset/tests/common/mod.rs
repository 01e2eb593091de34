#![allow(dead_code)]

use std::path::PathBuf;

use meanset::complex::{load_complex, CubicalComplex};
use meanset::recognition::{load_point_set, PointSetA};
use rand::Rng;
use serde_json::Value;

pub const CORPUS: [&str; 5] = ["tripod", "squares3", "squares5", "cube-square", "quadrant-window"];

pub fn corpus_dir(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("corpus").join(name)
}

pub struct Fixture {
    pub name: &'static str,
    pub complex: CubicalComplex,
    pub set: PointSetA,
    pub expected: Value,
}

pub fn fixture(name: &'static str) -> Fixture {
    let dir = corpus_dir(name);
    let read = |f: &str| std::fs::read_to_string(dir.join(f)).unwrap_or_else(|e| panic!("{name}/{f}: {e}"));
    let complex = load_complex(&read("complex.json")).unwrap();
    let set = load_point_set(&complex, &read("set.json")).unwrap();
    let expected = serde_json::from_str(&read("expected.json")).unwrap();
    Fixture { name, complex, set, expected }
}

pub fn points(v: &Value) -> Vec<Vec<f64>> {
    v.as_array()
        .map(|a| a.iter().map(point).collect())
        .unwrap_or_default()
}

pub fn point(v: &Value) -> Vec<f64> {
    v.as_array().expect("point array").iter().map(|x| x.as_f64().expect("number")).collect()
}

/// Uniform cell, then uniform point in it.
pub fn random_point<R: Rng>(c: &CubicalComplex, rng: &mut R) -> Vec<f64> {
    let cells = c.maximal_cells();
    let k = cells[rng.gen_range(0..cells.len())];
    c.snap(&c.cell(k).sample(rng))
}

/// Uniform point in the open interior of a random top-dimensional cell.
pub fn random_relint_point<R: Rng>(c: &CubicalComplex, rng: &mut R) -> Vec<f64> {
    let cells = c.maximal_cells();
    let k = cells[rng.gen_range(0..cells.len())];
    let cell = c.cell(k);
    (0..c.ambient_dim())
        .map(|i| if cell.is_free(i) { cell.lo(i) + rng.gen_range(0.02..0.98) } else { cell.lo(i) })
        .collect()
}
