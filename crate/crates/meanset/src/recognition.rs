//! Mean recognition at relative-interior points, mean deficits, and certificates.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::boundary::{general_deficit, LocalAnalysis, MARGIN_FLOOR, MAX_HALVINGS};
use crate::complex::{dist, sub, CubicalComplex};
use crate::error::{Error, Result};
use crate::geodesic::{distance, geodesic, point_along, Geodesic};
use crate::kernel::{min_norm_point, SimplexWeights, FEASIBILITY_TOL};

/// Points of `A` closer than this are treated as equal.
pub const POINT_TOL: f64 = 1e-9;

/// Labeled finite point set.
#[derive(Clone, Debug, PartialEq)]
pub struct PointSetA {
    labels: Vec<String>,
    points: Vec<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PointSetDoc {
    List(Vec<Vec<f64>>),
    Labeled(BTreeMap<String, Vec<f64>>),
}

impl PointSetA {
    pub fn new(c: &CubicalComplex, labeled: Vec<(String, Vec<f64>)>) -> Result<Self> {
        if labeled.is_empty() {
            return Err(Error::Malformed("point set is empty".into()));
        }
        let mut labels = Vec::with_capacity(labeled.len());
        let mut points: Vec<Vec<f64>> = Vec::with_capacity(labeled.len());
        for (label, p) in labeled {
            let p = c.locate(&p)?.coords;
            if labels.contains(&label) {
                return Err(Error::Malformed(format!("duplicate label {label:?}")));
            }
            if let Some(i) = points.iter().position(|q| dist(q, &p) <= POINT_TOL) {
                return Err(Error::Malformed(format!("points {:?} and {label:?} coincide", labels[i])));
            }
            labels.push(label);
            points.push(p);
        }
        Ok(Self { labels, points })
    }

    /// Labels `"0"`, `"1"`, ... in list order.
    pub fn from_points(c: &CubicalComplex, points: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(c, points.into_iter().enumerate().map(|(i, p)| (i.to_string(), p)).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.labels.iter().map(String::as_str).zip(self.points.iter().map(Vec::as_slice))
    }

    pub fn point(&self, label: &str) -> Option<&[f64]> {
        self.labels.iter().position(|l| l == label).map(|i| self.points[i].as_slice())
    }

    /// Label of the point of `A` at `x`, if any.
    pub fn find(&self, x: &[f64]) -> Option<&str> {
        self.iter().find(|(_, p)| dist(p, x) <= POINT_TOL).map(|(l, _)| l)
    }

    pub fn distances(&self, c: &CubicalComplex, x: &[f64]) -> Result<Vec<f64>> {
        self.points.iter().map(|a| distance(c, x, a)).collect()
    }
}

/// Accepts a JSON array of points or an object keyed by label.
pub fn load_point_set(c: &CubicalComplex, document: &str) -> Result<PointSetA> {
    match serde_json::from_str::<PointSetDoc>(document)
        .map_err(|e| Error::Malformed(format!("point set: {e}")))?
    {
        PointSetDoc::List(points) => PointSetA::from_points(c, points),
        PointSetDoc::Labeled(map) => PointSetA::new(c, map.into_iter().collect()),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Certificate {
    Membership {
        weights: SimplexWeights,
        deficit: f64,
    },
    NonMembership {
        witness: Vec<f64>,
        margins: BTreeMap<String, f64>,
        deficit: f64,
    },
}

impl Certificate {
    pub fn is_membership(&self) -> bool {
        matches!(self, Self::Membership { .. })
    }

    pub fn deficit(&self) -> f64 {
        match self {
            Self::Membership { deficit, .. } | Self::NonMembership { deficit, .. } => *deficit,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Evidence {
    Weights { weights: SimplexWeights },
    /// Unit direction of uniform first-order decrease.
    Direction { direction: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DeficitReport {
    pub value: f64,
    pub per_cell: BTreeMap<usize, f64>,
    pub evidence: Evidence,
}

/// `1/2 max_a (d_a(x)^2 - d_a(xbar)^2)`.
pub fn test_function(c: &CubicalComplex, set: &PointSetA, xbar: &[f64], x: &[f64]) -> Result<f64> {
    let mut best = f64::NEG_INFINITY;
    for (_, a) in set.iter() {
        let dx = distance(c, x, a)?;
        let d0 = distance(c, xbar, a)?;
        best = best.max(0.5 * (dx * dx - d0 * d0));
    }
    Ok(best)
}

/// Golden-section minimization of the test function along `g`; ties go to `s = 0`.
pub fn test_function_line_search(c: &CubicalComplex, set: &PointSetA, xbar: &[f64], g: &Geodesic) -> Result<(f64, f64)> {
    let f = |s: f64| -> Result<f64> { test_function(c, set, xbar, &point_along(g, s)?) };
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let mut f1 = f(x1)?;
    let mut f2 = f(x2)?;
    while hi - lo > 1e-9 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = f(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = f(x2)?;
        }
    }
    let mut best = (0.5 * (lo + hi), f(0.5 * (lo + hi))?);
    for s in [0.0, 1.0] {
        let v = f(s)?;
        if v <= best.1 + 1e-12 && (s == 0.0 || v < best.1 - 1e-12) {
            best = (s, v);
        }
    }
    Ok(best)
}

/// Straightened points `z_a` for `xbar` in the relative interior of the maximal cell `cell`.
fn straighten(c: &CubicalComplex, set: &PointSetA, xbar: &[f64], cell: usize) -> Result<Vec<Vec<f64>>> {
    let cube = c.cell(cell);
    set.iter()
        .map(|(_, a)| {
            let g = geodesic(c, xbar, a)?;
            let mut t = 1.0;
            for _ in 0..=MAX_HALVINGS {
                let xa = point_along(&g, t)?;
                if cube.contains(&xa, 1e-12) {
                    let xa = cube.clamp(&xa);
                    return Ok(xbar.iter().zip(&xa).map(|(p, q)| p + (q - p) / t).collect());
                }
                t *= 0.5;
            }
            Err(Error::HalvingCap(MAX_HALVINGS))
        })
        .collect()
}

struct InteriorSolution {
    cell: usize,
    value: f64,
    weights: SimplexWeights,
    nearest: Vec<f64>,
}

fn interior_solution(c: &CubicalComplex, set: &PointSetA, xbar: &[f64]) -> Result<InteriorSolution> {
    if let Some(label) = set.find(xbar) {
        return Err(Error::PointInSet(label.to_string()));
    }
    let cell = c.relint_maximal(xbar).ok_or(Error::NotRelativeInterior)?;
    let z = straighten(c, set, xbar, cell)?;
    let mn = min_norm_point(&z, xbar);
    let weights = SimplexWeights::from_pairs(set.labels().iter().cloned().zip(mn.weights.iter().copied()));
    Ok(InteriorSolution { cell, value: mn.distance, weights, nearest: mn.point })
}

impl InteriorSolution {
    fn report(&self, xbar: &[f64]) -> DeficitReport {
        let evidence = if self.value <= FEASIBILITY_TOL {
            Evidence::Weights { weights: self.weights.clone() }
        } else {
            Evidence::Direction { direction: sub(&self.nearest, xbar).iter().map(|v| v / self.value).collect() }
        };
        DeficitReport { value: self.value, per_cell: BTreeMap::from([(self.cell, self.value)]), evidence }
    }
}

/// Algorithm for points in the relative interior of a maximal cell.
pub fn recognize_interior(
    c: &CubicalComplex,
    set: &PointSetA,
    xbar: &[f64],
    eps: f64,
) -> Result<(DeficitReport, Certificate)> {
    let xbar = c.locate(xbar)?.coords;
    let sol = interior_solution(c, set, &xbar)?;
    let report = sol.report(&xbar);
    let value = sol.value;
    if value <= eps {
        return Ok((report, Certificate::Membership { weights: sol.weights, deficit: value }));
    }
    let step = sub(&sol.nearest, &xbar);
    let d0 = set.distances(c, &xbar)?;
    let cube = c.cell(sol.cell);
    let mut t = 1.0;
    for _ in 0..MAX_HALVINGS {
        let x: Vec<f64> = xbar.iter().zip(&step).map(|(p, s)| p + t * s).collect();
        if cube.contains(&x, 0.0) {
            let d = set.distances(c, &x)?;
            if d.iter().zip(&d0).all(|(dx, d0)| d0 - dx > MARGIN_FLOOR) {
                let margins = set.labels().iter().cloned().zip(d0.iter().zip(&d).map(|(a, b)| a - b)).collect();
                return Ok((report, Certificate::NonMembership { witness: x, margins, deficit: value }));
            }
        }
        t *= 0.5;
    }
    Err(Error::HalvingCap(MAX_HALVINGS))
}

/// Mean deficit; zero at points of `A`.
pub fn mean_deficit(c: &CubicalComplex, set: &PointSetA, xbar: &[f64]) -> Result<DeficitReport> {
    let xbar = c.locate(xbar)?.coords;
    if let Some(label) = set.find(&xbar) {
        let cells = c.maximal_cells_at(&xbar);
        return Ok(DeficitReport {
            value: 0.0,
            per_cell: cells.into_iter().map(|k| (k, 0.0)).collect(),
            evidence: Evidence::Weights { weights: SimplexWeights::from_pairs([(label.to_string(), 1.0)]) },
        });
    }
    if c.relint_maximal(&xbar).is_some() {
        return Ok(interior_solution(c, set, &xbar)?.report(&xbar));
    }
    general_deficit(c, set, &xbar)
}

/// Lower bound on the distance from `xbar` to the mean set.
pub fn certified_lower_bound(cert: &Certificate) -> Result<f64> {
    match cert {
        Certificate::NonMembership { margins, .. } => {
            if margins.is_empty() {
                return Err(Error::InvalidCertificate("no margins".into()));
            }
            if let Some((l, m)) = margins.iter().find(|(_, m)| **m <= 0.0 || !m.is_finite()) {
                return Err(Error::InvalidCertificate(format!("margin {m} for {l:?} is not positive")));
            }
            Ok(margins.values().copied().fold(f64::INFINITY, f64::min))
        }
        Certificate::Membership { .. } => Err(Error::InvalidCertificate("not a non-membership certificate".into())),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VerificationReport {
    pub samples: usize,
    /// Smallest `<w, d^2(x) - d^2(xbar)> - d(x, xbar)^2` over the samples.
    pub min_slack: f64,
    pub cell_residuals: BTreeMap<usize, f64>,
    pub min_margin: f64,
}

/// Sample points: uniform over the complex plus points near `xbar` in its cells.
pub fn verification_samples(c: &CubicalComplex, xbar: &[f64], n: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells = c.maximal_cells();
    let local = c.maximal_cells_at(xbar);
    (0..n)
        .map(|i| {
            if i % 2 == 0 || local.is_empty() {
                c.cell(cells[rng.gen_range(0..cells.len())]).sample(&mut rng)
            } else {
                let y = c.cell(local[rng.gen_range(0..local.len())]).sample(&mut rng);
                let s = 10f64.powf(-rng.gen_range(0.0..4.0));
                c.snap(&xbar.iter().zip(&y).map(|(p, q)| p + s * (q - p)).collect::<Vec<_>>())
            }
        })
        .collect()
}

/// Checks a certificate: strict decreases, or the sampled variance inequality plus the per-cell condition.
pub fn verify_certificate(
    c: &CubicalComplex,
    set: &PointSetA,
    xbar: &[f64],
    cert: &Certificate,
    samples: usize,
) -> Result<VerificationReport> {
    let xbar = c.locate(xbar)?.coords;
    let d0 = set.distances(c, &xbar)?;
    match cert {
        Certificate::NonMembership { witness, .. } => {
            let x = c.locate(witness)?.coords;
            let d = set.distances(c, &x)?;
            let mut min_margin = f64::INFINITY;
            for ((label, _), (a, b)) in set.iter().zip(d0.iter().zip(&d)) {
                if a - b <= 0.0 {
                    return Err(Error::VerificationFailed(format!(
                        "witness is not closer to {label:?}: {b} >= {a}"
                    )));
                }
                min_margin = min_margin.min(a - b);
            }
            Ok(VerificationReport { samples: 0, min_slack: 0.0, cell_residuals: BTreeMap::new(), min_margin })
        }
        Certificate::Membership { weights, .. } => {
            if !weights.is_valid(1e-8) || weights.0.keys().any(|k| set.point(k).is_none()) {
                return Err(Error::InvalidCertificate(format!("weights {weights:?} are not in the simplex over A")));
            }
            let w: Vec<f64> = set.labels().iter().map(|l| weights.get(l)).collect();
            let base: f64 = w.iter().zip(&d0).map(|(wi, d)| wi * d * d).sum();
            let mut min_slack = f64::INFINITY;
            for x in verification_samples(c, &xbar, samples, 0x5eed) {
                let d = set.distances(c, &x)?;
                let val: f64 = w.iter().zip(&d).map(|(wi, d)| wi * d * d).sum();
                let dx = distance(c, &x, &xbar)?;
                let slack = val - base - dx * dx;
                if slack < -1e-7 {
                    return Err(Error::VerificationFailed(format!(
                        "variance inequality fails at {x:?} by {}",
                        -slack
                    )));
                }
                min_slack = min_slack.min(slack);
            }
            let mut cell_residuals = BTreeMap::new();
            if let Some(label) = set.find(&xbar) {
                if weights.get(label) < 1.0 - 1e-8 {
                    return Err(Error::VerificationFailed(format!(
                        "point of A carries weight {} but others are positive",
                        weights.get(label)
                    )));
                }
            } else {
                let la = LocalAnalysis::new(c, set, &xbar)?;
                for (cell, r) in la.cells.iter().zip(la.weight_residuals(weights)?) {
                    if r > 1e-7 {
                        return Err(Error::VerificationFailed(format!("first-order residual {r} in cell {cell}")));
                    }
                    cell_residuals.insert(*cell, r);
                }
            }
            Ok(VerificationReport { samples, min_slack, cell_residuals, min_margin: 0.0 })
        }
    }
}

/// `sum_a w_a d_a(x)^p`.
pub fn weighted_objective(c: &CubicalComplex, set: &PointSetA, w: &SimplexWeights, p: f64, x: &[f64]) -> Result<f64> {
    if p.is_nan() || p < 1.0 {
        return Err(Error::OutOfRange(format!("exponent {p} is below 1")));
    }
    let mut total = 0.0;
    for (label, a) in set.iter() {
        total += w.get(label) * distance(c, x, a)?.powf(p);
    }
    Ok(total)
}
