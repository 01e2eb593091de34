//! Recognition at arbitrary points, including cell boundaries.
//!
//! Near `xbar` the complex is a Euclidean cone, so a geodesic from a point on
//! the first segment toward `a` into a maximal cell `C` runs through a simple
//! chain of maximal cells that all contain `xbar`. Each chain gives a convex
//! upper bound on `d_a` over `C` that is tight at `xbar`; the subdifferential
//! of `d_a` restricted to `C` is the intersection of the chain sets plus `N_C`.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::complex::{dist, norm, sub, CubeCell, CubicalComplex, TangentConeDescriptor};
use crate::error::{Error, Result};
use crate::geodesic::{distance, geodesic};
use crate::kernel::{
    feasibility_min_norm, joint_feasibility, FeasibilityBlock, FeasibilityTerm, SimplexWeights, SubdifferentialSet,
    FEASIBILITY_TOL,
};
use crate::recognition::{recognize_interior, Certificate, DeficitReport, Evidence, PointSetA};

/// Halving cap for the witness search.
pub const MAX_HALVINGS: usize = 60;

/// Floor on certified distance decreases.
pub const MARGIN_FLOOR: f64 = 1e-12;

/// Geodesic data from `xbar` toward one point of `A`.
#[derive(Clone, Debug, PartialEq)]
pub struct Approach {
    pub label: String,
    pub distance: f64,
    /// First breakpoint after `xbar`.
    pub first_breakpoint: Vec<f64>,
    /// Unit direction of the first segment.
    pub direction: Vec<f64>,
    /// Minimal cell holding the first segment.
    pub q_cell: usize,
}

pub fn approach(c: &CubicalComplex, xbar: &[f64], label: &str, a: &[f64]) -> Result<Approach> {
    let g = geodesic(c, xbar, a)?;
    if g.length <= crate::geodesic::ELIDE_TOL {
        return Err(Error::SamePoint);
    }
    let xbar = &g.breakpoints[0];
    let xa = g.breakpoints[1].clone();
    let step = sub(&xa, xbar);
    let l = norm(&step);
    let mid: Vec<f64> = xbar.iter().zip(&xa).map(|(u, v)| 0.5 * (u + v)).collect();
    let q_cell = c.cell_id(&CubeCell::carrier(&c.snap(&mid))).expect("segment midpoint lies in the complex");
    Ok(Approach {
        label: label.to_string(),
        distance: g.length,
        direction: step.iter().map(|v| v / l).collect(),
        first_breakpoint: xa,
        q_cell,
    })
}

/// Local model of `u -> d'_a(xbar; u)` on the tangent cone of a maximal cell.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionalDerivativeModel {
    pub approach: Approach,
    pub cell: usize,
    /// Common face of the first-segment cell and `cell`.
    pub face: Option<usize>,
    pub chains: Vec<Vec<usize>>,
    /// One set per chain; the subdifferential is the intersection of `piece + N_C`.
    pub pieces: Vec<SubdifferentialSet>,
    pub tangent: TangentConeDescriptor,
}

impl DirectionalDerivativeModel {
    pub fn build(c: &CubicalComplex, xbar: &[f64], approach: Approach, cell: usize) -> Result<Self> {
        let xbar = c.snap(xbar);
        let tangent = c.tangent_cone(cell, &xbar)?;
        let face = c.face_between(approach.q_cell, cell).and_then(|f| c.cell_id(&f));
        let chains = local_chains(c, &xbar, approach.q_cell, cell);
        let pieces = chains
            .iter()
            .map(|chain| {
                if chain.len() == 1 {
                    return SubdifferentialSet::Singleton { g: approach.direction.iter().map(|v| -v).collect() };
                }
                let mut cones: Vec<_> = chain
                    .windows(2)
                    .map(|w| c.face_between(w[0], w[1]).expect("cells share xbar").normal_cone(&xbar))
                    .collect();
                let u = approach.direction.clone();
                if cones.len() == 1 {
                    SubdifferentialSet::ConeBall { u, cone: cones.pop().unwrap() }
                } else {
                    SubdifferentialSet::ChainBall { u, cones }
                }
            })
            .collect();
        Ok(Self { approach, cell, face, chains, pieces, tangent })
    }

    /// `d'_a(xbar; u)`, or `+inf` when `u` leaves the cell.
    pub fn derivative(&self, u: &[f64]) -> Result<f64> {
        if !self.tangent.cone.contains(u, 1e-12) {
            return Ok(f64::INFINITY);
        }
        let mut best = f64::INFINITY;
        for piece in &self.pieces {
            best = best.min(piece.support(u)?);
        }
        Ok(best)
    }

    fn term(&self, scale: f64) -> FeasibilityTerm {
        FeasibilityTerm { scale, pieces: self.pieces.clone() }
    }
}

/// Simple chains of maximal cells through `xbar`, from a cell holding `q_cell` to `target`.
fn local_chains(c: &CubicalComplex, xbar: &[f64], q_cell: usize, target: usize) -> Vec<Vec<usize>> {
    let star = c.maximal_cells_at(xbar);
    let q = c.cell(q_cell);
    let is_start = |id: usize| c.cell(id).has_face(q);
    let mut out = Vec::new();
    fn extend(
        c: &CubicalComplex,
        star: &[usize],
        target: usize,
        is_start: &dyn Fn(usize) -> bool,
        chain: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        let cur = *chain.last().unwrap();
        if cur == target {
            out.push(chain.clone());
            return;
        }
        for &next in star {
            if chain.contains(&next) || is_start(next) {
                continue;
            }
            let face = c.face_between(cur, next).expect("cells share xbar");
            // dominated by the chain that skips straight to `next`
            if chain[..chain.len() - 1].iter().any(|&e| c.cell(e).has_face(&face)) {
                continue;
            }
            chain.push(next);
            extend(c, star, target, is_start, chain, out);
            chain.pop();
        }
    }
    for &s in &star {
        if is_start(s) {
            let mut chain = vec![s];
            extend(c, &star, target, &is_start, &mut chain, &mut out);
        }
    }
    out
}

pub fn directional_derivative(c: &CubicalComplex, a: &[f64], cell: usize, xbar: &[f64], u: &[f64]) -> Result<f64> {
    let ap = approach(c, xbar, "a", a)?;
    DirectionalDerivativeModel::build(c, xbar, ap, cell)?.derivative(u)
}

/// Outcome of the per-cell problem `inf_{u in T_C} max_a d'_a(xbar; u)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PcOutcome {
    Value0 { residual: f64, weights: SimplexWeights },
    Descent { direction: Vec<f64>, margin: f64 },
}

/// Models for every point of `A` at every maximal cell through `xbar`.
pub struct LocalAnalysis {
    pub xbar: Vec<f64>,
    pub cells: Vec<usize>,
    pub approaches: Vec<Approach>,
    /// `models[k][i]`: cell `cells[k]`, point `i`.
    pub models: Vec<Vec<DirectionalDerivativeModel>>,
}

impl LocalAnalysis {
    pub fn new(c: &CubicalComplex, set: &PointSetA, xbar: &[f64]) -> Result<Self> {
        let xbar = c.locate(xbar)?.coords;
        if let Some(label) = set.find(&xbar) {
            return Err(Error::PointInSet(label.to_string()));
        }
        let approaches: Vec<Approach> = set
            .iter()
            .map(|(label, a)| approach(c, &xbar, label, a))
            .collect::<Result<_>>()?;
        let cells = c.maximal_cells_at(&xbar);
        let models = cells
            .iter()
            .map(|&cell| {
                approaches
                    .iter()
                    .map(|ap| DirectionalDerivativeModel::build(c, &xbar, ap.clone(), cell))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        Ok(Self { xbar, cells, approaches, models })
    }

    fn block(&self, k: usize, scaled: bool) -> FeasibilityBlock {
        let models = &self.models[k];
        FeasibilityBlock {
            terms: models.iter().map(|m| m.term(if scaled { m.approach.distance } else { 1.0 })).collect(),
            target: self.models[k][0].tangent.cone.polar(),
        }
    }

    fn labels(&self) -> impl Iterator<Item = &str> {
        self.approaches.iter().map(|a| a.label.as_str())
    }

    pub fn solve_pc(&self, k: usize) -> Result<PcOutcome> {
        let block = self.block(k, false);
        let r = feasibility_min_norm(&block.terms, &block.target)?;
        if r.residual <= FEASIBILITY_TOL {
            let weights = SimplexWeights::from_pairs(self.labels().zip(r.weights.iter().copied()));
            return Ok(PcOutcome::Value0 { residual: r.residual, weights });
        }
        let rv = &r.residual_vectors[0];
        Ok(PcOutcome::Descent { direction: rv.iter().map(|v| -v / r.residual).collect(), margin: r.residual })
    }

    /// Distance-scaled residual of one cell and its unit descent direction.
    pub fn cell_deficit(&self, k: usize) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let block = self.block(k, true);
        let r = feasibility_min_norm(&block.terms, &block.target)?;
        let dir = if r.residual > 0.0 {
            r.residual_vectors[0].iter().map(|v| -v / r.residual).collect()
        } else {
            vec![0.0; self.xbar.len()]
        };
        Ok((r.residual, dir, r.weights))
    }

    /// Residual per cell of the first-order condition for fixed weights `w`.
    pub fn weight_residuals(&self, w: &SimplexWeights) -> Result<Vec<f64>> {
        let raw: Vec<f64> = self.approaches.iter().map(|a| w.get(&a.label) * a.distance).collect();
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidCertificate("weights vanish on A".into()));
        }
        let v: Vec<f64> = raw.iter().map(|x| x / total).collect();
        let blocks: Vec<FeasibilityBlock> = (0..self.cells.len()).map(|k| self.block(k, false)).collect();
        Ok(joint_feasibility(&blocks, Some(&v))?.block_residuals)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CellOutcome {
    pub value0: bool,
    pub residual: f64,
    pub deficit: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GeneralRecognition {
    #[serde(flatten)]
    pub certificate: Certificate,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub per_cell: BTreeMap<usize, CellOutcome>,
}

/// General deficit: the largest distance-scaled residual over the cells through `xbar`.
pub fn general_deficit(c: &CubicalComplex, set: &PointSetA, xbar: &[f64]) -> Result<DeficitReport> {
    let la = LocalAnalysis::new(c, set, xbar)?;
    let mut per_cell = BTreeMap::new();
    let mut worst: Option<(f64, Vec<f64>)> = None;
    for k in 0..la.cells.len() {
        let (d, dir, _) = la.cell_deficit(k)?;
        per_cell.insert(la.cells[k], d);
        if worst.as_ref().is_none_or(|(v, _)| d > *v) {
            worst = Some((d, dir));
        }
    }
    let (value, dir) = worst.expect("every point lies in a maximal cell");
    let evidence = if value <= FEASIBILITY_TOL {
        let blocks: Vec<FeasibilityBlock> = (0..la.cells.len()).map(|k| la.block(k, true)).collect();
        let joint = joint_feasibility(&blocks, None)?;
        Evidence::Weights { weights: SimplexWeights::from_pairs(la.labels().zip(joint.weights)) }
    } else {
        Evidence::Direction { direction: dir }
    };
    Ok(DeficitReport { value, per_cell, evidence })
}

pub fn recognize_general(c: &CubicalComplex, set: &PointSetA, xbar: &[f64], eps: f64) -> Result<GeneralRecognition> {
    let xbar = c.locate(xbar)?.coords;
    if let Some(label) = set.find(&xbar) {
        return Ok(GeneralRecognition {
            certificate: Certificate::Membership {
                weights: SimplexWeights::from_pairs([(label.to_string(), 1.0)]),
                deficit: 0.0,
            },
            per_cell: BTreeMap::new(),
        });
    }
    let la = LocalAnalysis::new(c, set, &xbar)?;
    let mut per_cell = BTreeMap::new();
    let mut worst = (f64::NEG_INFINITY, 0usize, Vec::new());
    let mut all_zero = true;
    for k in 0..la.cells.len() {
        let pc = la.solve_pc(k)?;
        let (deficit, dir, _) = la.cell_deficit(k)?;
        let (value0, residual) = match &pc {
            PcOutcome::Value0 { residual, .. } => (true, *residual),
            PcOutcome::Descent { margin, .. } => (false, *margin),
        };
        all_zero &= value0;
        per_cell.insert(la.cells[k], CellOutcome { value0, residual, deficit });
        if deficit > worst.0 {
            worst = (deficit, k, dir);
        }
    }
    let deficit = worst.0.max(0.0);
    if deficit > eps.max(FEASIBILITY_TOL) {
        let cell = la.cells[worst.1];
        let (witness, margins) = descend(c, set, &la, cell, &worst.2)?;
        return Ok(GeneralRecognition {
            certificate: Certificate::NonMembership { witness, margins, deficit },
            per_cell,
        });
    }
    let blocks: Vec<FeasibilityBlock> = (0..la.cells.len()).map(|k| la.block(k, false)).collect();
    let joint = joint_feasibility(&blocks, None)?;
    if all_zero && joint.residual > 10.0 * FEASIBILITY_TOL {
        return Err(Error::NonConvergence(format!(
            "joint certificate search stalled with block residuals {:?}",
            joint.block_residuals
        )));
    }
    let raw = la.approaches.iter().zip(&joint.weights).map(|(a, v)| (a.label.clone(), v / a.distance));
    let weights = SimplexWeights::from_pairs(raw).normalized();
    Ok(GeneralRecognition { certificate: Certificate::Membership { weights, deficit }, per_cell })
}

/// Halve the step along `u` until the point stays in `cell` and is strictly closer to all of `A`.
fn descend(
    c: &CubicalComplex,
    set: &PointSetA,
    la: &LocalAnalysis,
    cell: usize,
    u: &[f64],
) -> Result<(Vec<f64>, BTreeMap<String, f64>)> {
    let cube = c.cell(cell);
    let mut t = 1.0;
    for _ in 0..MAX_HALVINGS {
        let x: Vec<f64> = la.xbar.iter().zip(u).map(|(p, d)| p + t * d).collect();
        if cube.contains(&x, 0.0) {
            let x = c.snap(&x);
            let mut margins = BTreeMap::new();
            let mut ok = true;
            for (ap, (_, a)) in la.approaches.iter().zip(set.iter()) {
                let m = ap.distance - distance(c, &x, a)?;
                if m <= MARGIN_FLOOR {
                    ok = false;
                    break;
                }
                margins.insert(ap.label.clone(), m);
            }
            if ok {
                return Ok((x, margins));
            }
        }
        t *= 0.5;
    }
    Err(Error::HalvingCap(MAX_HALVINGS))
}

/// Recognize with the relative-interior procedure when it applies, else the general one.
pub fn recognize(c: &CubicalComplex, set: &PointSetA, xbar: &[f64], eps: f64) -> Result<GeneralRecognition> {
    let xbar = c.locate(xbar)?.coords;
    if set.find(&xbar).is_none() && c.relint_maximal(&xbar).is_some() {
        let (_, certificate) = recognize_interior(c, set, &xbar, eps)?;
        return Ok(GeneralRecognition { certificate, per_cell: BTreeMap::new() });
    }
    recognize_general(c, set, &xbar, eps)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConsistencyReport {
    pub interior_membership: bool,
    pub general_membership: bool,
    pub interior_deficit: f64,
    pub general_deficit: f64,
}

impl ConsistencyReport {
    pub fn agrees(&self, tol: f64) -> bool {
        self.interior_membership == self.general_membership
            && (self.interior_deficit - self.general_deficit).abs() <= tol
    }
}

/// Runs both procedures at a relative-interior point and reports both answers.
pub fn consistency_check_relint(c: &CubicalComplex, set: &PointSetA, xbar: &[f64], eps: f64) -> Result<ConsistencyReport> {
    let (report, cert) = recognize_interior(c, set, xbar, eps)?;
    let general = recognize_general(c, set, xbar, eps)?;
    Ok(ConsistencyReport {
        interior_membership: cert.is_membership(),
        general_membership: general.certificate.is_membership(),
        interior_deficit: report.value,
        general_deficit: general.certificate.deficit(),
    })
}

/// Difference quotients `(d_a(xbar + t u) - d_a(xbar)) / t` for decreasing `t`.
pub fn difference_quotients(c: &CubicalComplex, a: &[f64], xbar: &[f64], u: &[f64], steps: &[f64]) -> Result<Vec<f64>> {
    let d0 = distance(c, xbar, a)?;
    steps
        .iter()
        .map(|&t| {
            let x: Vec<f64> = xbar.iter().zip(u).map(|(p, d)| p + t * d).collect();
            Ok((distance(c, &x, a)? - d0) / t)
        })
        .collect()
}

/// First-variation value `-cos` of the angle at `xbar` between the geodesic to `a` and direction `u`.
pub fn angle_derivative(c: &CubicalComplex, a: &[f64], xbar: &[f64], u: &[f64]) -> Result<f64> {
    let ap = approach(c, xbar, "a", a)?;
    let xbar = c.snap(xbar);
    let r = 0.25 * c.star_radius(&xbar).min(1.0).min(dist(&xbar, &ap.first_breakpoint));
    let un = norm(u);
    let p: Vec<f64> = xbar.iter().zip(&ap.direction).map(|(x, d)| x + r * d).collect();
    let q: Vec<f64> = xbar.iter().zip(u).map(|(x, d)| x + r * d / un).collect();
    let dd = distance(c, &p, &q)?;
    let cos = (2.0 * r * r - dd * dd) / (2.0 * r * r);
    Ok(-cos.clamp(-1.0, 1.0) * un)
}
