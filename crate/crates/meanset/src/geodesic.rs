//! Intrinsic distances and geodesics by enumerating simple cell chains.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use serde::Serialize;

use crate::complex::{dist, norm, sub, CubeCell, CubicalComplex};
use crate::error::{Error, Result};
use crate::kernel::box_segment_min;

/// Segments shorter than this are dropped from reported geodesics.
pub const ELIDE_TOL: f64 = 1e-9;

/// A chain must beat the incumbent by more than this to replace it.
const CHAIN_TIE_TOL: f64 = 1e-12;

const MAX_SWEEPS: usize = 20_000;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Geodesic {
    pub breakpoints: Vec<Vec<f64>>,
    /// Maximal cell holding each segment.
    pub cells: Vec<usize>,
    /// Shared face holding each interior breakpoint.
    pub faces: Vec<usize>,
    pub length: f64,
}

impl Geodesic {
    pub fn source(&self) -> &[f64] {
        &self.breakpoints[0]
    }

    pub fn target(&self) -> &[f64] {
        self.breakpoints.last().unwrap()
    }
}

/// Shortest path from `p` to `q` through the chain's shared faces.
pub fn chain_length(c: &CubicalComplex, p: &[f64], q: &[f64], chain: &[usize]) -> Result<(f64, Vec<Vec<f64>>)> {
    let (first, last) = match (chain.first(), chain.last()) {
        (Some(f), Some(l)) => (*f, *l),
        _ => return Err(Error::OutOfRange("empty cell chain".into())),
    };
    let p = c.snap(p);
    let q = c.snap(q);
    if !c.cell(first).contains(&p, 0.0) {
        return Err(Error::NotInCell { point: p, cell: first });
    }
    if !c.cell(last).contains(&q, 0.0) {
        return Err(Error::NotInCell { point: q, cell: last });
    }
    let mut faces = Vec::with_capacity(chain.len() - 1);
    for w in chain.windows(2) {
        faces.push(c.face_between(w[0], w[1]).ok_or(Error::EmptyFace(w[0], w[1]))?);
    }
    Ok(solve_chain(&p, &q, &faces))
}

fn path_length(p: &[f64], q: &[f64], ys: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    let mut prev = p;
    for y in ys {
        total += dist(prev, y);
        prev = y;
    }
    total + dist(prev, q)
}

/// Minimizes the polyline length over breakpoints `y_i` in `faces[i]`; returns `[p, y.., q]`.
pub(crate) fn solve_chain(p: &[f64], q: &[f64], faces: &[CubeCell]) -> (f64, Vec<Vec<f64>>) {
    let m = faces.len();
    let mut ys: Vec<Vec<f64>> = faces.iter().map(|f| box_segment_min(p, q, f).1).collect();
    let mut value = path_length(p, q, &ys);
    for _ in 0..MAX_SWEEPS {
        let before = value;
        for i in 0..m {
            let prev = if i == 0 { p } else { &ys[i - 1] };
            let next = if i + 1 == m { q } else { &ys[i + 1] };
            let cur = dist(prev, &ys[i]) + dist(&ys[i], next);
            let (v, x) = box_segment_min(prev, next, &faces[i]);
            if v < cur {
                ys[i] = x;
            }
        }
        merged_runs(p, q, faces, &mut ys);
        value = path_length(p, q, &ys);
        if before - value <= 1e-15 * (1.0 + value) && !subgradient_step(p, q, faces, &mut ys, &mut value) {
            break;
        }
    }
    let mut pts = Vec::with_capacity(m + 2);
    pts.push(p.to_vec());
    pts.extend(ys);
    pts.push(q.to_vec());
    (value, pts)
}

/// Moves each run of coincident breakpoints jointly within the intersection of their faces.
fn merged_runs(p: &[f64], q: &[f64], faces: &[CubeCell], ys: &mut [Vec<f64>]) {
    let m = ys.len();
    let mut i = 0;
    while i < m {
        let mut j = i;
        let mut face = faces[i].clone();
        while j + 1 < m && dist(&ys[j + 1], &ys[i]) <= 1e-12 {
            match face.intersect(&faces[j + 1]) {
                Some(f) => face = f,
                None => break,
            }
            j += 1;
        }
        if j > i {
            let prev = if i == 0 { p.to_vec() } else { ys[i - 1].clone() };
            let next = if j + 1 == m { q.to_vec() } else { ys[j + 1].clone() };
            let cur = dist(&prev, &ys[i]) + dist(&ys[j], &next);
            let (v, x) = box_segment_min(&prev, &next, &face);
            if v < cur {
                for y in &mut ys[i..=j] {
                    *y = x.clone();
                }
            }
        }
        i = j + 1;
    }
}

/// Projected step along minus a subgradient (zero pieces at coincident points).
fn subgradient_step(p: &[f64], q: &[f64], faces: &[CubeCell], ys: &mut Vec<Vec<f64>>, value: &mut f64) -> bool {
    let m = ys.len();
    let unit = |a: &[f64], b: &[f64]| {
        let d = sub(b, a);
        let l = norm(&d);
        if l <= 1e-12 {
            vec![0.0; d.len()]
        } else {
            d.iter().map(|x| x / l).collect::<Vec<_>>()
        }
    };
    let mut dirs = Vec::with_capacity(m);
    for i in 0..m {
        let prev = if i == 0 { p } else { &ys[i - 1] };
        let next = if i + 1 == m { q } else { &ys[i + 1] };
        let uin = unit(prev, &ys[i]);
        let uout = unit(&ys[i], next);
        let g: Vec<f64> = uout.iter().zip(&uin).map(|(o, n)| o - n).collect();
        dirs.push(faces[i].tangent_cone(&ys[i]).project(&g));
    }
    if dirs.iter().all(|d| norm(d) <= 1e-14) {
        return false;
    }
    let mut t = 1.0;
    for _ in 0..60 {
        let trial: Vec<Vec<f64>> = ys
            .iter()
            .zip(&dirs)
            .zip(faces)
            .map(|((y, d), f)| f.clamp(&y.iter().zip(d).map(|(a, b)| a + t * b).collect::<Vec<_>>()))
            .collect();
        let v = path_length(p, q, &trial);
        if v < *value {
            *ys = trial;
            *value = v;
            return true;
        }
        t *= 0.5;
    }
    false
}

#[derive(PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

/// Length of a shortest path through cell vertices (straight inside each maximal cell).
pub fn vertex_graph_bound(c: &CubicalComplex, p: &[f64], q: &[f64]) -> f64 {
    let p = c.snap(p);
    let q = c.snap(q);
    let mut ids: HashMap<Vec<i64>, usize> = HashMap::new();
    let mut coords: Vec<Vec<f64>> = vec![p.clone(), q.clone()];
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for &cell in c.maximal_cells() {
        let cube = c.cell(cell);
        let mut g = Vec::new();
        for v in cube.vertices() {
            let id = *ids.entry(v.clone()).or_insert_with(|| {
                coords.push(v.iter().map(|&x| x as f64).collect());
                coords.len() - 1
            });
            g.push(id);
        }
        if cube.contains(&p, 0.0) {
            g.push(0);
        }
        if cube.contains(&q, 0.0) {
            g.push(1);
        }
        groups.push(g);
    }
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); coords.len()];
    for (gi, g) in groups.iter().enumerate() {
        for &v in g {
            adj[v].push(gi);
        }
    }
    let mut best = vec![f64::INFINITY; coords.len()];
    let mut heap = BinaryHeap::new();
    best[0] = 0.0;
    heap.push(HeapItem(0.0, 0));
    while let Some(HeapItem(d, v)) = heap.pop() {
        if d > best[v] {
            continue;
        }
        if v == 1 {
            return d;
        }
        for &gi in &adj[v] {
            for &w in &groups[gi] {
                let nd = d + dist(&coords[v], &coords[w]);
                if nd < best[w] {
                    best[w] = nd;
                    heap.push(HeapItem(nd, w));
                }
            }
        }
    }
    f64::INFINITY
}

struct Search<'a> {
    c: &'a CubicalComplex,
    p: &'a [f64],
    q: &'a [f64],
    chain: Vec<usize>,
    faces: Vec<CubeCell>,
    best: Option<(f64, Vec<usize>, Vec<Vec<f64>>)>,
    incumbent: f64,
}

impl Search<'_> {
    fn run(&mut self, pos: usize, lower: f64) {
        let maximal = self.c.maximal_cells();
        let cell = maximal[pos];
        if self.c.cell(cell).contains(self.q, 0.0) {
            let (v, pts) = solve_chain(self.p, self.q, &self.faces);
            if v < self.incumbent - CHAIN_TIE_TOL || (self.best.is_none() && v <= self.incumbent) {
                self.incumbent = v;
                self.best = Some((v, self.chain.clone(), pts));
            }
            return;
        }
        if self.chain.len() >= self.c.max_chain() {
            return;
        }
        for (next, face) in &self.c.adjacency()[pos] {
            let nid = maximal[*next];
            if self.chain.contains(&nid) || self.c.cell(nid).contains(self.p, 0.0) {
                continue;
            }
            // a face already inside an earlier cell admits a shortcut chain
            let k = self.chain.len();
            if self.chain[..k - 1].iter().any(|&e| self.c.cell(e).has_face(face)) {
                continue;
            }
            let lb = lower.max(box_segment_min(self.p, self.q, face).0);
            if lb >= self.incumbent - CHAIN_TIE_TOL && self.best.is_some() {
                continue;
            }
            if lb > self.incumbent {
                continue;
            }
            self.chain.push(nid);
            self.faces.push(face.clone());
            self.run(*next, lb);
            self.chain.pop();
            self.faces.pop();
        }
    }
}

/// Minimizing chain and its breakpoints, before elision.
fn best_chain(c: &CubicalComplex, p: &[f64], q: &[f64]) -> Result<(f64, Vec<usize>, Vec<Vec<f64>>)> {
    let p = c.snap(p);
    let q = c.snap(q);
    for pt in [&p, &q] {
        c.locate(pt)?;
    }
    let maximal = c.maximal_cells();
    let starts: Vec<usize> = (0..maximal.len()).filter(|&i| c.cell(maximal[i]).contains(&p, 0.0)).collect();
    if let Some(&s) = starts.iter().find(|&&s| c.cell(maximal[s]).contains(&q, 0.0)) {
        return Ok((dist(&p, &q), vec![maximal[s]], vec![p, q]));
    }
    let bound = vertex_graph_bound(c, &p, &q);
    let mut search = Search {
        c,
        p: &p,
        q: &q,
        chain: Vec::new(),
        faces: Vec::new(),
        best: None,
        incumbent: bound + 1e-9 * (1.0 + bound),
    };
    for &s in &starts {
        search.chain.push(maximal[s]);
        search.run(s, dist(&p, &q));
        search.chain.pop();
    }
    match search.best {
        Some(b) => Ok(b),
        None => {
            let reach = c.reachable(&starts.iter().map(|&s| maximal[s]).collect::<Vec<_>>());
            let connected = (0..maximal.len()).any(|i| reach[i] && c.cell(maximal[i]).contains(&q, 0.0));
            Err(Error::NoChain { max_chain: c.max_chain(), connected })
        }
    }
}

pub fn distance(c: &CubicalComplex, p: &[f64], q: &[f64]) -> Result<f64> {
    Ok(best_chain(c, p, q)?.0)
}

pub fn geodesic(c: &CubicalComplex, p: &[f64], q: &[f64]) -> Result<Geodesic> {
    let (length, chain, pts) = best_chain(c, p, q)?;
    let mut breakpoints = vec![pts[0].clone()];
    let mut cells = Vec::new();
    for (i, y) in pts.iter().enumerate().skip(1) {
        if dist(breakpoints.last().unwrap(), y) <= ELIDE_TOL {
            if i + 1 == pts.len() {
                // keep the exact target
                *breakpoints.last_mut().unwrap() = y.clone();
                if cells.is_empty() {
                    cells.push(chain[i - 1]);
                } else {
                    *cells.last_mut().unwrap() = chain[i - 1];
                }
            }
            continue;
        }
        breakpoints.push(y.clone());
        cells.push(chain[i - 1]);
    }
    if breakpoints.len() == 1 {
        // p and q coincide
        breakpoints.push(pts.last().unwrap().clone());
        cells = vec![chain[0]];
    }
    let faces = cells
        .windows(2)
        .map(|w| {
            let f = c.face_between(w[0], w[1]).expect("consecutive segment cells share a face");
            c.cell_id(&f).expect("faces are in the lattice")
        })
        .collect();
    Ok(Geodesic { breakpoints, cells, faces, length })
}

/// Point at arc length `s * length` from the source.
pub fn point_along(g: &Geodesic, s: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&s) || s.is_nan() {
        return Err(Error::OutOfRange(format!("geodesic parameter {s} is outside [0, 1]")));
    }
    if s == 1.0 {
        return Ok(g.target().to_vec());
    }
    let mut left = s * g.length;
    for w in g.breakpoints.windows(2) {
        let l = dist(&w[0], &w[1]);
        if left <= l {
            let t = if l > 0.0 { left / l } else { 0.0 };
            return Ok(w[0].iter().zip(&w[1]).map(|(a, b)| a + t * (b - a)).collect());
        }
        left -= l;
    }
    Ok(g.target().to_vec())
}

pub fn midpoint(c: &CubicalComplex, p: &[f64], q: &[f64]) -> Result<Vec<f64>> {
    point_along(&geodesic(c, p, q)?, 0.5)
}

/// First breakpoint after `xbar` on the geodesic to `a`, and the minimal cell holding the first segment.
pub fn initial_direction(c: &CubicalComplex, xbar: &[f64], a: &[f64]) -> Result<(Vec<f64>, usize)> {
    let g = geodesic(c, xbar, a)?;
    if g.length <= ELIDE_TOL {
        return Err(Error::SamePoint);
    }
    let xa = g.breakpoints[1].clone();
    let mid: Vec<f64> = xbar.iter().zip(&xa).map(|(u, v)| 0.5 * (u + v)).collect();
    let qa = c
        .cell_id(&CubeCell::carrier(&c.snap(&mid)))
        .expect("segment midpoint lies in the complex");
    Ok((xa, qa))
}
