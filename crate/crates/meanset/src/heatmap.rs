//! Deficit sampling over a complex, written as CSV.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::boundary::recognize_general;
use crate::complex::CubicalComplex;
use crate::error::{Error, Result};
use crate::geodesic::{geodesic, point_along};
use crate::kernel::FEASIBILITY_TOL;
use crate::recognition::{mean_deficit, PointSetA};

/// Environment variable capping the worker count.
pub const THREADS_ENV: &str = "MEANSET_THREADS";

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HeatMapSample {
    pub cell: usize,
    pub coords: Vec<f64>,
    pub deficit: f64,
    pub member: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub from: Vec<f64>,
    pub to: Vec<f64>,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeatMapOptions {
    pub samples: usize,
    pub eps: f64,
    pub seed: u64,
    /// Weight maximal cells by their top-dimensional volume instead of uniformly.
    pub by_volume: bool,
    pub segment: Option<Segment>,
    /// Worker count; `None` reads `MEANSET_THREADS`, then falls back to rayon's default.
    pub threads: Option<usize>,
}

impl Default for HeatMapOptions {
    fn default() -> Self {
        Self { samples: 2000, eps: 0.1, seed: 0, by_volume: false, segment: None, threads: None }
    }
}

/// Decision rule shared with the recognizers: points off cell interiors use the conic floor.
pub fn is_member(deficit: f64, eps: f64, relint: bool) -> bool {
    if relint {
        deficit <= eps
    } else {
        deficit <= eps.max(FEASIBILITY_TOL)
    }
}

fn threads(opt: Option<usize>) -> Option<usize> {
    opt.or_else(|| std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse().ok()))
        .filter(|&n| n > 0)
}

/// Sample `i`: its own ChaCha stream, so results never depend on scheduling.
fn sample_point(c: &CubicalComplex, opts: &HeatMapOptions, i: usize) -> Result<(usize, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(i as u64);
    let cells = c.maximal_cells();
    let top = cells.iter().map(|&k| c.cell(k).dim()).max().unwrap_or(0);
    let pool: Vec<usize> = if opts.by_volume {
        cells.iter().copied().filter(|&k| c.cell(k).dim() == top).collect()
    } else {
        cells.to_vec()
    };
    let cell = pool[rng.gen_range(0..pool.len())];
    Ok((cell, c.snap(&c.cell(cell).sample(&mut rng))))
}

fn evaluate(c: &CubicalComplex, set: &PointSetA, eps: f64, cell: usize, x: Vec<f64>) -> Result<HeatMapSample> {
    let report = mean_deficit(c, set, &x)?;
    let relint = c.relint_maximal(&x).is_some();
    Ok(HeatMapSample { cell, member: is_member(report.value, eps, relint), deficit: report.value, coords: x })
}

pub fn heatmap(c: &CubicalComplex, set: &PointSetA, opts: &HeatMapOptions) -> Result<Vec<HeatMapSample>> {
    if opts.samples == 0 {
        return Err(Error::OutOfRange("sample count must be positive".into()));
    }
    let run = || -> Result<Vec<HeatMapSample>> {
        let mut rows: Vec<HeatMapSample> = (0..opts.samples)
            .into_par_iter()
            .map(|i| {
                let (cell, x) = sample_point(c, opts, i)?;
                evaluate(c, set, opts.eps, cell, x)
            })
            .collect::<Result<_>>()?;
        if let Some(seg) = &opts.segment {
            let g = geodesic(c, &seg.from, &seg.to)?;
            let probes: Vec<HeatMapSample> = (0..seg.count)
                .into_par_iter()
                .map(|j| {
                    let s = if seg.count == 1 { 0.5 } else { j as f64 / (seg.count - 1) as f64 };
                    let x = c.locate(&point_along(&g, s)?)?;
                    let r = recognize_general(c, set, &x.coords, opts.eps)?;
                    Ok(HeatMapSample {
                        cell: x.minimal_cell,
                        coords: x.coords,
                        deficit: r.certificate.deficit(),
                        member: r.certificate.is_membership(),
                    })
                })
                .collect::<Result<_>>()?;
            rows.extend(probes);
        }
        Ok(rows)
    };
    match threads(opts.threads) {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::OutOfRange(format!("thread pool: {e}")))?
            .install(run),
        None => run(),
    }
}

/// `%g`-style rendering with `digits` significant digits.
pub fn format_g(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if exp < -5 || exp >= digits as i32 {
        let m = trim_zeros(mantissa);
        format!("{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
    } else {
        trim_zeros(&format!("{:.*}", (digits as i32 - 1 - exp) as usize, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn write_csv<W: Write>(out: &mut W, ambient_dim: usize, rows: &[HeatMapSample]) -> std::io::Result<()> {
    let mut header = vec!["cell".to_string()];
    header.extend((0..ambient_dim).map(|i| format!("x{i}")));
    header.push("deficit".into());
    header.push("decision".into());
    writeln!(out, "{}", header.join(","))?;
    for r in rows {
        let mut fields = vec![r.cell.to_string()];
        fields.extend(r.coords.iter().map(|&v| format_g(v, 12)));
        fields.push(format_g(r.deficit, 12));
        fields.push(if r.member { "member" } else { "non-member" }.into());
        writeln!(out, "{}", fields.join(","))?;
    }
    Ok(())
}

pub fn to_csv(ambient_dim: usize, rows: &[HeatMapSample]) -> String {
    let mut buf = Vec::new();
    write_csv(&mut buf, ambient_dim, rows).expect("writing to memory");
    String::from_utf8(buf).expect("csv is ascii")
}
