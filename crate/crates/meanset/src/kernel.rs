//! Small convex subroutines: min-norm points, box-constrained two-segment paths,
//! and the conic feasibility problems behind the boundary certificates.

use std::collections::BTreeMap;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::complex::{dist, dot, norm, sub, AxisSign, CubeCell, SignCone};
use crate::error::{Error, Result};

/// Residual below which a conic feasibility problem counts as solved exactly.
pub const FEASIBILITY_TOL: f64 = 1e-8;

/// Below this gap the two-segment argmin is treated as the anchor itself.
pub const DEGENERATE_ARGMIN_TOL: f64 = 1e-7;

/// Nonnegative weights keyed by label, summing to one.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimplexWeights(pub BTreeMap<String, f64>);

impl SimplexWeights {
    pub fn from_pairs<I, S>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        Self(pairs.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }

    /// Clip negatives to zero and rescale to unit sum.
    pub fn normalized(mut self) -> Self {
        let mut total = 0.0;
        for v in self.0.values_mut() {
            *v = v.max(0.0);
            total += *v;
        }
        if total > 0.0 {
            for v in self.0.values_mut() {
                *v /= total;
            }
        }
        self
    }

    pub fn get(&self, label: &str) -> f64 {
        self.0.get(label).copied().unwrap_or(0.0)
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        self.0.values().all(|&v| v >= -tol) && (self.0.values().sum::<f64>() - 1.0).abs() <= tol
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinNorm {
    pub point: Vec<f64>,
    /// Convex weights, one per input point.
    pub weights: Vec<f64>,
    pub distance: f64,
}

/// Projection of `anchor` onto the convex hull of `points` (Wolfe's algorithm).
pub fn min_norm_point(points: &[Vec<f64>], anchor: &[f64]) -> MinNorm {
    assert!(!points.is_empty(), "min_norm_point needs at least one point");
    let p: Vec<Vec<f64>> = points.iter().map(|z| sub(z, anchor)).collect();
    let m = p.len();
    let scale = p.iter().map(|v| dot(v, v)).fold(0.0f64, f64::max).max(1e-300);
    let combine = |s: &[usize], lam: &[f64]| {
        let mut x = vec![0.0; anchor.len()];
        for (&k, &l) in s.iter().zip(lam) {
            for (xi, pi) in x.iter_mut().zip(&p[k]) {
                *xi += l * pi;
            }
        }
        x
    };
    let j0 = (0..m).min_by(|&a, &b| dot(&p[a], &p[a]).total_cmp(&dot(&p[b], &p[b]))).unwrap();
    let mut s = vec![j0];
    let mut lam = vec![1.0];
    for _ in 0..(50 * m + 100) {
        let x = combine(&s, &lam);
        let xx = dot(&x, &x);
        let (j, best) = (0..m)
            .map(|j| (j, dot(&x, &p[j])))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if xx - best <= 1e-14 * scale || s.contains(&j) {
            break;
        }
        s.push(j);
        lam.push(0.0);
        loop {
            let alpha = affine_min_norm(&s.iter().map(|&k| &p[k]).collect::<Vec<_>>());
            if alpha.iter().all(|&a| a > 1e-15) {
                lam = alpha;
                break;
            }
            let mut theta = 1.0f64;
            for (l, a) in lam.iter().zip(&alpha) {
                if *a <= 1e-15 && l - a > 0.0 {
                    theta = theta.min(l / (l - a));
                }
            }
            for (l, a) in lam.iter_mut().zip(&alpha) {
                *l = (1.0 - theta) * *l + theta * a;
            }
            let keep: Vec<bool> = lam.iter().map(|&l| l > 1e-15).collect();
            if keep.iter().all(|&k| k) {
                // numerical stall: drop the smallest coefficient
                let (imin, _) =
                    lam.iter().enumerate().min_by(|a, b| a.1.total_cmp(b.1)).unwrap();
                s.remove(imin);
                lam.remove(imin);
            } else {
                let mut i = 0;
                s.retain(|_| {
                    i += 1;
                    keep[i - 1]
                });
                lam.retain(|&l| l > 1e-15);
            }
            let total: f64 = lam.iter().sum();
            lam.iter_mut().for_each(|l| *l /= total);
            if s.len() == 1 {
                lam = vec![1.0];
                break;
            }
        }
    }
    let mut weights = vec![0.0; m];
    for (&k, &l) in s.iter().zip(&lam) {
        weights[k] += l;
    }
    let offset = combine(&s, &lam);
    let point: Vec<f64> = anchor.iter().zip(&offset).map(|(a, o)| a + o).collect();
    MinNorm { distance: norm(&offset), point, weights }
}

/// Coefficients `a` with unit sum minimizing `|sum a_k p_k|`.
fn affine_min_norm(p: &[&Vec<f64>]) -> Vec<f64> {
    let k = p.len();
    let mut kkt = DMatrix::<f64>::zeros(k + 1, k + 1);
    for i in 0..k {
        for j in 0..k {
            kkt[(i, j)] = dot(p[i], p[j]);
        }
        kkt[(i, k)] = 1.0;
        kkt[(k, i)] = 1.0;
    }
    let mut rhs = DVector::<f64>::zeros(k + 1);
    rhs[k] = 1.0;
    let sol = kkt
        .clone()
        .lu()
        .solve(&rhs)
        .filter(|s| s.iter().all(|v| v.is_finite()))
        .unwrap_or_else(|| kkt.svd(true, true).solve(&rhs, 1e-14).expect("svd solve"));
    sol.iter().take(k).copied().collect()
}

/// Minimizes `|a - x| + |x - b|` over the box; ties go to the argmin of least norm.
pub fn box_segment_min(a: &[f64], b: &[f64], bx: &CubeCell) -> (f64, Vec<f64>) {
    if let Some((t0, t1)) = clip_segment(a, b, bx) {
        let d = sub(b, a);
        let dd = dot(&d, &d);
        let t = if dd > 0.0 { (-dot(a, &d) / dd).clamp(t0, t1) } else { t0 };
        let mut x: Vec<f64> = a.iter().zip(&d).map(|(ai, di)| ai + t * di).collect();
        for i in 0..x.len() {
            x[i] = x[i].clamp(bx.lo(i), bx.hi(i));
        }
        return (dist(a, b), x);
    }
    let n = a.len();
    let free: Vec<usize> = bx.axes.clone();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut pattern = vec![0u8; free.len()];
    loop {
        if let Some(cand) = pattern_candidate(a, b, bx, &free, &pattern) {
            let value = dist(a, &cand) + dist(&cand, b);
            let better = match &best {
                None => true,
                Some((v, x)) => {
                    value < v - 1e-15 * (1.0 + v.abs())
                        || (value <= v + 1e-15 * (1.0 + v.abs()) && norm(&cand) < norm(x))
                }
            };
            if better {
                best = Some((value, cand));
            }
        }
        // next pattern in base 3
        let mut i = 0;
        while i < pattern.len() {
            pattern[i] += 1;
            if pattern[i] < 3 {
                break;
            }
            pattern[i] = 0;
            i += 1;
        }
        if i == pattern.len() {
            break;
        }
    }
    let _ = n;
    best.expect("vertex patterns are always feasible")
}

/// Candidate for one active set: 0 pins a free axis low, 1 pins it high, 2 leaves it open.
fn pattern_candidate(a: &[f64], b: &[f64], bx: &CubeCell, free: &[usize], pattern: &[u8]) -> Option<Vec<f64>> {
    let n = a.len();
    let mut x = vec![0.0; n];
    let mut open = vec![false; n];
    for i in 0..n {
        x[i] = bx.lo(i);
    }
    for (k, &ax) in free.iter().enumerate() {
        match pattern[k] {
            0 => x[ax] = bx.lo(ax),
            1 => x[ax] = bx.hi(ax),
            _ => open[ax] = true,
        }
    }
    let mut alpha2 = 0.0;
    let mut beta2 = 0.0;
    for i in 0..n {
        if !open[i] {
            alpha2 += (a[i] - x[i]).powi(2);
            beta2 += (b[i] - x[i]).powi(2);
        }
    }
    let (alpha, beta) = (alpha2.sqrt(), beta2.sqrt());
    if alpha + beta == 0.0 {
        return None;
    }
    let t = alpha / (alpha + beta);
    for i in 0..n {
        if open[i] {
            let v = a[i] + t * (b[i] - a[i]);
            if v < bx.lo(i) || v > bx.hi(i) {
                return None;
            }
            x[i] = v;
        }
    }
    Some(x)
}

/// Parameter interval of `a + t (b - a)`, `t in [0,1]`, inside the box.
fn clip_segment(a: &[f64], b: &[f64], bx: &CubeCell) -> Option<(f64, f64)> {
    const EPS: f64 = 1e-14;
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for i in 0..a.len() {
        let (lo, hi) = (bx.lo(i), bx.hi(i));
        let d = b[i] - a[i];
        if d.abs() <= EPS {
            if a[i] < lo - EPS || a[i] > hi + EPS {
                return None;
            }
            continue;
        }
        let (mut s0, mut s1) = ((lo - a[i]) / d, (hi - a[i]) / d);
        if s0 > s1 {
            std::mem::swap(&mut s0, &mut s1);
        }
        t0 = t0.max(s0);
        t1 = t1.min(s1);
        if t0 > t1 + EPS {
            return None;
        }
    }
    Some((t0, t1.max(t0)))
}

/// Subdifferential of a distance-through-faces function at a point of all the faces.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SubdifferentialSet {
    Singleton { g: Vec<f64> },
    /// `(N - u) ∩ B(0,1)`.
    ConeBall { u: Vec<f64>, cone: SignCone },
    /// `((…((N_1 - u) ∩ B + N_2) ∩ B …) + N_k) ∩ B`; with no cones it is `{-u}`.
    ChainBall { u: Vec<f64>, cones: Vec<SignCone> },
}

impl SubdifferentialSet {
    pub fn dim(&self) -> usize {
        match self {
            Self::Singleton { g } => g.len(),
            Self::ConeBall { u, .. } | Self::ChainBall { u, .. } => u.len(),
        }
    }

    fn chain(&self) -> Option<(&[f64], Vec<&SignCone>)> {
        match self {
            Self::Singleton { .. } => None,
            Self::ConeBall { u, cone } => Some((u, vec![cone])),
            Self::ChainBall { u, cones } => Some((u, cones.iter().collect())),
        }
    }

    /// Support function `max_{g in set} <g, dir>`.
    pub fn support(&self, dir: &[f64]) -> Result<f64> {
        if let Self::Singleton { g } = self {
            return Ok(dot(g, dir));
        }
        let mut prob = Conic::default();
        let one = Expr::constant(1.0);
        let out = prob.set_output(self, &one);
        let mut obj = Expr::constant(0.0);
        for (i, &d) in dir.iter().enumerate() {
            obj = obj.add(&out[i].scaled(-d));
        }
        prob.cost = obj.terms;
        let x = prob.solve()?;
        Ok(out.iter().zip(dir).map(|(e, d)| e.eval(&x) * d).sum())
    }
}

/// The closed form for `y -> min_{x in F} |xa - x| + |x - y|` at `y = xbar`.
pub fn face_subdifferential(xa: &[f64], xbar: &[f64], face: &CubeCell) -> SubdifferentialSet {
    let (_, xs) = box_segment_min(xa, xbar, face);
    let gap = dist(xbar, &xs);
    if gap > DEGENERATE_ARGMIN_TOL {
        SubdifferentialSet::Singleton { g: sub(xbar, &xs).iter().map(|v| v / gap).collect() }
    } else {
        let d = dist(xa, xbar);
        SubdifferentialSet::ConeBall {
            u: sub(xa, xbar).iter().map(|v| v / d).collect(),
            cone: face.normal_cone(xbar),
        }
    }
}

/// One point of `A` in a feasibility problem: `q_a` ranges over `v_a * scale * ∩_j (S_j + K)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeasibilityTerm {
    pub scale: f64,
    pub pieces: Vec<SubdifferentialSet>,
}

/// Terms sharing one target cone `K` (the normal cone of a cell).
#[derive(Clone, Debug, PartialEq)]
pub struct FeasibilityBlock {
    pub terms: Vec<FeasibilityTerm>,
    pub target: SignCone,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Feasibility {
    /// Largest block residual `|s - P_{-K}(s)|`, `s = sum scale * q`.
    pub residual: f64,
    pub block_residuals: Vec<f64>,
    /// `s - P_{-K}(s)` per block.
    pub residual_vectors: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// `q_a` per block and term.
    pub selectors: Vec<Vec<Vec<f64>>>,
}

/// Minimizes the distance from `sum_a scale_a q_a` to `-K` over `v` in the simplex.
pub fn feasibility_min_norm(terms: &[FeasibilityTerm], target: &SignCone) -> Result<Feasibility> {
    joint_feasibility(&[FeasibilityBlock { terms: terms.to_vec(), target: target.clone() }], None)
}

/// Several blocks with a shared weight vector; `fixed` pins the weights.
pub fn joint_feasibility(blocks: &[FeasibilityBlock], fixed: Option<&[f64]>) -> Result<Feasibility> {
    let m = blocks.first().map(|b| b.terms.len()).unwrap_or(0);
    if m == 0 || blocks.iter().any(|b| b.terms.len() != m) {
        return Err(Error::OutOfRange("feasibility blocks need the same nonempty term list".into()));
    }
    let n = blocks[0].target.dim();
    let mut prob = Conic::default();
    let v: Vec<Expr> = match fixed {
        Some(w) => w.iter().map(|&x| Expr::constant(x)).collect(),
        None => {
            let v: Vec<Expr> = (0..m).map(|_| Expr::var(prob.new_var())).collect();
            for e in &v {
                prob.nonneg(e.clone());
            }
            let mut sum = Expr::constant(-1.0);
            for e in &v {
                sum = sum.add(e);
            }
            prob.zero(sum);
            v
        }
    };
    let t = Expr::var(prob.new_var());
    prob.cost = t.terms.clone();
    let mut q_exprs = Vec::with_capacity(blocks.len());
    for block in blocks {
        let mut qs = Vec::with_capacity(m);
        let mut s = vec![Expr::constant(0.0); n];
        for (a, term) in block.terms.iter().enumerate() {
            let va = v[a].scaled(term.scale);
            let q: Vec<Expr> = if term.pieces.len() == 1 {
                prob.set_output(&term.pieces[0], &va)
            } else {
                let q: Vec<Expr> = (0..n).map(|_| Expr::var(prob.new_var())).collect();
                for piece in &term.pieces {
                    let out = prob.set_output(piece, &va);
                    let diff: Vec<Expr> = q.iter().zip(&out).map(|(x, o)| x.add(&o.scaled(-1.0))).collect();
                    prob.sign(&diff, &block.target);
                }
                q
            };
            for i in 0..n {
                s[i] = s[i].add(&q[i]);
            }
            qs.push(q);
        }
        let r: Vec<Expr> = (0..n).map(|_| Expr::var(prob.new_var())).collect();
        let inside: Vec<Expr> = s.iter().zip(&r).map(|(si, ri)| si.add(&ri.scaled(-1.0))).collect();
        prob.sign(&inside, &block.target.negated());
        let mut cone = vec![t.clone()];
        cone.extend(r);
        prob.soc(cone);
        q_exprs.push(qs);
    }
    let x = prob.solve()?;
    let weights: Vec<f64> = match fixed {
        Some(w) => w.to_vec(),
        None => {
            let raw: Vec<f64> = v.iter().map(|e| e.eval(&x).max(0.0)).collect();
            let total: f64 = raw.iter().sum();
            raw.iter().map(|w| w / total).collect()
        }
    };
    let mut selectors = Vec::with_capacity(blocks.len());
    let mut block_residuals = Vec::with_capacity(blocks.len());
    let mut residual_vectors = Vec::with_capacity(blocks.len());
    for (block, qs) in blocks.iter().zip(&q_exprs) {
        let vals: Vec<Vec<f64>> = qs.iter().map(|q| q.iter().map(|e| e.eval(&x)).collect()).collect();
        let mut s = vec![0.0; n];
        for q in &vals {
            for i in 0..n {
                s[i] += q[i];
            }
        }
        let proj = block.target.negated().project(&s);
        let rv = sub(&s, &proj);
        block_residuals.push(norm(&rv));
        residual_vectors.push(rv);
        selectors.push(vals);
    }
    let residual = block_residuals.iter().copied().fold(0.0, f64::max);
    Ok(Feasibility { residual, block_residuals, residual_vectors, weights, selectors })
}

/// Affine expression `c + sum coef * x_var`.
#[derive(Clone, Debug, Default, PartialEq)]
struct Expr {
    terms: Vec<(usize, f64)>,
    c: f64,
}

impl Expr {
    fn var(i: usize) -> Self {
        Self { terms: vec![(i, 1.0)], c: 0.0 }
    }

    fn constant(c: f64) -> Self {
        Self { terms: Vec::new(), c }
    }

    fn scaled(&self, k: f64) -> Self {
        Self { terms: self.terms.iter().map(|&(i, v)| (i, v * k)).collect(), c: self.c * k }
    }

    fn add(&self, other: &Expr) -> Self {
        let mut terms = self.terms.clone();
        for &(i, v) in &other.terms {
            match terms.iter_mut().find(|(j, _)| *j == i) {
                Some(slot) => slot.1 += v,
                None => terms.push((i, v)),
            }
        }
        Self { terms, c: self.c + other.c }
    }

    fn eval(&self, x: &[f64]) -> f64 {
        self.c + self.terms.iter().map(|&(i, v)| v * x[i]).sum::<f64>()
    }
}

/// Conic program `min cost·x` with constraints `expr in cone`.
#[derive(Default)]
struct Conic {
    nvar: usize,
    zero: Vec<Expr>,
    nonneg: Vec<Expr>,
    socs: Vec<Vec<Expr>>,
    cost: Vec<(usize, f64)>,
}

impl Conic {
    fn new_var(&mut self) -> usize {
        self.nvar += 1;
        self.nvar - 1
    }

    fn zero(&mut self, e: Expr) {
        self.zero.push(e);
    }

    fn nonneg(&mut self, e: Expr) {
        self.nonneg.push(e);
    }

    fn soc(&mut self, es: Vec<Expr>) {
        self.socs.push(es);
    }

    fn sign(&mut self, es: &[Expr], cone: &SignCone) {
        for (e, s) in es.iter().zip(&cone.0) {
            match s {
                AxisSign::Zero => self.zero(e.clone()),
                AxisSign::Free => {}
                AxisSign::NonNeg => self.nonneg(e.clone()),
                AxisSign::NonPos => self.nonneg(e.scaled(-1.0)),
            }
        }
    }

    /// Expressions for an element of `v * set`, adding the needed variables and cones.
    fn set_output(&mut self, set: &SubdifferentialSet, v: &Expr) -> Vec<Expr> {
        if let SubdifferentialSet::Singleton { g } = set {
            return g.iter().map(|&gi| v.scaled(gi)).collect();
        }
        let (u, cones) = set.chain().unwrap();
        let n = u.len();
        let mut prev: Vec<Expr> = u.iter().map(|&ui| v.scaled(-ui)).collect();
        for cone in cones {
            if cone.is_full() {
                // (anything + R^n) ∩ B is the ball
                let p: Vec<Expr> = (0..n).map(|_| Expr::var(self.new_var())).collect();
                let mut ball = vec![v.clone()];
                ball.extend(p.iter().cloned());
                self.soc(ball);
                prev = p;
                continue;
            }
            let p: Vec<Expr> = (0..n).map(|_| Expr::var(self.new_var())).collect();
            let step: Vec<Expr> = p.iter().zip(&prev).map(|(a, b)| a.add(&b.scaled(-1.0))).collect();
            self.sign(&step, cone);
            let mut ball = vec![v.clone()];
            ball.extend(p.iter().cloned());
            self.soc(ball);
            prev = p;
        }
        prev
    }

    fn solve(&self) -> Result<Vec<f64>> {
        let nvar = self.nvar.max(1);
        let mut rows_i = Vec::new();
        let mut cols_j = Vec::new();
        let mut vals = Vec::new();
        let mut b = Vec::new();
        let mut cones = Vec::new();
        let mut push = |e: &Expr, rows_i: &mut Vec<usize>, b: &mut Vec<f64>| {
            let r = b.len();
            for &(j, v) in &e.terms {
                if v != 0.0 {
                    rows_i.push(r);
                    cols_j.push(j);
                    vals.push(-v);
                }
            }
            b.push(e.c);
        };
        for e in &self.zero {
            push(e, &mut rows_i, &mut b);
        }
        if !self.zero.is_empty() {
            cones.push(SupportedConeT::ZeroConeT(self.zero.len()));
        }
        for e in &self.nonneg {
            push(e, &mut rows_i, &mut b);
        }
        if !self.nonneg.is_empty() {
            cones.push(SupportedConeT::NonnegativeConeT(self.nonneg.len()));
        }
        for s in &self.socs {
            for e in s {
                push(e, &mut rows_i, &mut b);
            }
            cones.push(SupportedConeT::SecondOrderConeT(s.len()));
        }
        let m = b.len();
        let a = CscMatrix::new_from_triplets(m, nvar, rows_i, cols_j, vals);
        let p = CscMatrix::zeros((nvar, nvar));
        let mut q = vec![0.0; nvar];
        for &(j, v) in &self.cost {
            q[j] += v;
        }
        let settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .max_iter(400)
            .tol_gap_abs(1e-11)
            .tol_gap_rel(1e-11)
            .tol_feas(1e-11)
            .tol_ktratio(1e-9)
            .build()
            .map_err(|e| Error::NonConvergence(format!("settings: {e:?}")))?;
        let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings)
            .map_err(|e| Error::NonConvergence(format!("setup: {e:?}")))?;
        solver.solve();
        match solver.solution.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => Ok(solver.solution.x.clone()),
            other => Err(Error::NonConvergence(format!("{other:?}"))),
        }
    }
}

#[cfg(test)]
pub(crate) mod tests_support {
    use super::*;

    /// Chain length by a conic program, for cross-checking the descent solver.
    pub(crate) fn chain_socp(p: &[f64], q: &[f64], faces: &[CubeCell]) -> f64 {
        let mut prob = Conic::default();
        let n = p.len();
        let mut pts: Vec<Vec<Expr>> = vec![p.iter().map(|&x| Expr::constant(x)).collect()];
        for f in faces {
            let y: Vec<Expr> = (0..n).map(|_| Expr::var(prob.new_var())).collect();
            for (i, e) in y.iter().enumerate() {
                prob.nonneg(e.add(&Expr::constant(-f.lo(i))));
                prob.nonneg(e.scaled(-1.0).add(&Expr::constant(f.hi(i))));
            }
            pts.push(y);
        }
        pts.push(q.iter().map(|&x| Expr::constant(x)).collect());
        let mut total = Expr::constant(0.0);
        for w in pts.windows(2) {
            let t = Expr::var(prob.new_var());
            let mut cone = vec![t.clone()];
            cone.extend(w[1].iter().zip(&w[0]).map(|(a, b)| a.add(&b.scaled(-1.0))));
            prob.soc(cone);
            total = total.add(&t);
        }
        prob.cost = total.terms.clone();
        let x = prob.solve().unwrap();
        pts.windows(2)
            .map(|w| {
                let a: Vec<f64> = w[0].iter().map(|e| e.eval(&x)).collect();
                let b: Vec<f64> = w[1].iter().map(|e| e.eval(&x)).collect();
                dist(&a, &b)
            })
            .sum()
    }
}
