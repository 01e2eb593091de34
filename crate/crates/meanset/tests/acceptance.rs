//! One PASS/FAIL line per acceptance criterion. Tolerances are pinned below.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use meanset::boundary::{consistency_check_relint, recognize};
use meanset::complex::CubicalComplex;
use meanset::geodesic::{distance, geodesic, midpoint, point_along};
use meanset::heatmap::{heatmap, to_csv, HeatMapOptions};
use meanset::kernel::min_norm_point;
use meanset::recognition::{
    certified_lower_bound, mean_deficit, recognize_interior, test_function_line_search, verify_certificate, Certificate,
    Evidence, PointSetA,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{fixture, points, random_point, random_relint_point, CORPUS};

const TRIPOD_TOL: f64 = 1e-6;
const TRIPOD_ZERO_TOL: f64 = 1e-8;
const TRIPOD_TIME: Duration = Duration::from_secs(1);
const CROSSING_TOL: f64 = 1e-8;
const SURFACE_MEMBER_TOL: f64 = 1e-6;
const SURFACE_TOL: f64 = 1e-5;
const SURFACE_TIME: Duration = Duration::from_secs(30);
const QUADRANT_DIST_TOL: f64 = 1e-8;
const QUADRANT_T_TOL: f64 = 1e-6;
const GRID_EPS: f64 = 1e-6;
const EUCLID_TOL: f64 = 1e-8;
const CN_TOL: f64 = 1e-7;
const STURM_SAMPLES: usize = 500;
const RELINT_TOL: f64 = 1e-7;
const HEAT_TOL: f64 = 0.05;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c1_tripod() -> Outcome {
    let f = fixture("tripod");
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for t in [0.1, 0.5, 1.0] {
        let v = mean_deficit(&f.complex, &f.set, &[0.0, t]).map_err(|e| e.to_string())?.value;
        worst = worst.max((v - (1.0 + t)).abs());
    }
    let at_zero = mean_deficit(&f.complex, &f.set, &[0.0, 0.0]).map_err(|e| e.to_string())?.value;
    let elapsed = start.elapsed();
    check(
        worst <= TRIPOD_TOL && at_zero.abs() <= TRIPOD_ZERO_TOL && elapsed < TRIPOD_TIME,
        format!("max |def - (1+t)| = {worst:.2e}, def(0) = {at_zero:.2e}, {elapsed:.2?}"),
    )
}

fn c2_crossing() -> Outcome {
    let f = fixture("cube-square");
    let g = geodesic(&f.complex, &[-1.0, 0.0, 0.0], &[1.0, 1.0, 1.0]).map_err(|e| e.to_string())?;
    let want = [0.0, 2f64.sqrt() - 1.0, 0.0];
    let err = g
        .breakpoints
        .get(1..g.breakpoints.len() - 1)
        .filter(|inner| inner.len() == 1)
        .map(|inner| inner[0].iter().zip(want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
        .unwrap_or(f64::INFINITY);
    check(err <= CROSSING_TOL, format!("interior breakpoints {:?}, error {err:.2e}", &g.breakpoints[1..g.breakpoints.len() - 1]))
}

fn surface_y(x: f64, z: f64) -> f64 {
    let r = (x * x + z * z).sqrt();
    z * (1.0 + r) / (x + r)
}

/// Locates the surface over (x, z) by bisection on the vertical component of the descent evidence.
fn bisect_surface(c: &CubicalComplex, a: &PointSetA, x: f64, z: f64) -> Result<f64, String> {
    let (mut lo, mut hi) = (1e-9, 1.0 - 1e-9);
    for _ in 0..60 {
        let y = 0.5 * (lo + hi);
        let r = mean_deficit(c, a, &[x, y, z]).map_err(|e| e.to_string())?;
        match r.evidence {
            Evidence::Weights { .. } => return Ok(y),
            Evidence::Direction { direction } => {
                if direction[1] > 0.0 {
                    lo = y;
                } else {
                    hi = y;
                }
            }
        }
        if hi - lo < 1e-13 {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn c3_surface() -> Outcome {
    let f = fixture("cube-square");
    let (c, a) = (&f.complex, &f.set);
    let start = Instant::now();
    let mut members_ok = true;
    let mut worst_member: f64 = 0.0;
    for t in [0.05, 0.1, 0.2] {
        let x = [4.0 * t, (1.0 + 5.0 * t) / 3.0, 3.0 * t];
        let r = recognize(c, a, &x, SURFACE_MEMBER_TOL).map_err(|e| e.to_string())?;
        worst_member = worst_member.max(r.certificate.deficit());
        members_ok &= r.certificate.is_membership() && r.certificate.deficit() <= SURFACE_MEMBER_TOL;
    }
    let off = [0.5, 1.0 / 3.0, 0.25];
    let r = recognize(c, a, &off, SURFACE_MEMBER_TOL).map_err(|e| e.to_string())?;
    let non_member_ok = !r.certificate.is_membership()
        && verify_certificate(c, a, &off, &r.certificate, 0).is_ok()
        && certified_lower_bound(&r.certificate).map(|b| b > 0.0).unwrap_or(false);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let x: f64 = rng.gen_range(0.05..0.95);
        let z: f64 = rng.gen_range(0.02..x);
        let y = bisect_surface(c, a, x, z)?;
        worst = worst.max((y - surface_y(x, z)).abs());
    }
    let elapsed = start.elapsed();
    check(
        members_ok && non_member_ok && worst <= SURFACE_TOL && elapsed < SURFACE_TIME,
        format!(
            "member deficits <= {worst_member:.2e}, non-member certified: {non_member_ok}, \
             max surface error {worst:.2e} over 20 (x,z), {elapsed:.2?}"
        ),
    )
}

fn c4_quadrant() -> Outcome {
    let f = fixture("quadrant-window");
    let r3 = 3f64.sqrt();
    let d = distance(&f.complex, &[0.0, 1.0], &[r3, 0.0]).map_err(|e| e.to_string())?;
    let g = geodesic(&f.complex, &[0.0, 0.0], &[r3, 0.0]).map_err(|e| e.to_string())?;
    let (s, _) = test_function_line_search(&f.complex, &f.set, &[0.0, -1.0], &g).map_err(|e| e.to_string())?;
    let t = point_along(&g, s).map_err(|e| e.to_string())?[0];
    let want = 1.0 / (1.0 + r3);
    check(
        (d - 1.0 - r3).abs() <= QUADRANT_DIST_TOL && (t - want).abs() <= QUADRANT_T_TOL,
        format!("distance error {:.2e}, t* = {t:.9} (want {want:.9})", (d - 1.0 - r3).abs()),
    )
}

/// Runs the recognizer over a 41x41 grid on every square and compares with `truth`.
fn grid_mismatches(c: &CubicalComplex, a: &PointSetA, truth: impl Fn(&[f64]) -> bool) -> Result<(usize, usize, Vec<String>), String> {
    let mut total = 0;
    let mut wrong = Vec::new();
    for &k in c.maximal_cells() {
        let cell = c.cell(k);
        let free: Vec<usize> = (0..c.ambient_dim()).filter(|&i| cell.is_free(i)).collect();
        for i in 0..=40 {
            for j in 0..=40 {
                let mut x: Vec<f64> = (0..c.ambient_dim()).map(|d| cell.lo(d)).collect();
                x[free[0]] += i as f64 / 40.0;
                x[free[1]] += j as f64 / 40.0;
                if a.find(&x).is_some() {
                    continue;
                }
                total += 1;
                let got = recognize(c, a, &x, GRID_EPS).map_err(|e| format!("{x:?}: {e}"))?.certificate.is_membership();
                if got != truth(&x) {
                    wrong.push(format!("{x:?} got {got}"));
                }
            }
        }
    }
    Ok((total, wrong.len(), wrong))
}

const EDGE: f64 = 1e-12;

fn c5_planar() -> Outcome {
    let f = fixture("squares3");
    let truth = |x: &[f64]| {
        let (u, v) = (x[0], x[1]);
        (u <= EDGE && v >= -EDGE && v <= u + 1.0 + EDGE) || (v.abs() <= EDGE && (-EDGE..=1.0 + EDGE).contains(&u))
    };
    let start = Instant::now();
    let (total, bad, wrong) = grid_mismatches(&f.complex, &f.set, truth)?;
    let mut edge_ok = true;
    for t in [0.25, 0.5, 0.75] {
        edge_ok &= recognize(&f.complex, &f.set, &[t, 0.0], GRID_EPS).map_err(|e| e.to_string())?.certificate.is_membership();
    }
    check(
        bad == 0 && edge_ok,
        format!("{bad} mismatches over {total} grid points, (t,0) members: {edge_ok}, {:.2?} {:?}", start.elapsed(), &wrong[..wrong.len().min(5)]),
    )
}

fn in_triangle(x: &[f64], p: [f64; 3], q: [f64; 3], r: [f64; 3]) -> bool {
    let sub = |a: &[f64], b: [f64; 3]| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
    let (v0, v1, v2) = (sub(&q, p), sub(&r, p), sub(x, p));
    let (d00, d01, d11, d20, d21) = (dot(v0, v0), dot(v0, v1), dot(v1, v1), dot(v2, v0), dot(v2, v1));
    let den = d00 * d11 - d01 * d01;
    let s = (d11 * d20 - d01 * d21) / den;
    let t = (d00 * d21 - d01 * d20) / den;
    let off: f64 = (0..3).map(|i| (v2[i] - s * v0[i] - t * v1[i]).powi(2)).sum::<f64>().sqrt();
    off <= EDGE && s >= -EDGE && t >= -EDGE && s + t <= 1.0 + EDGE
}

fn c6_five_squares() -> Outcome {
    let f = fixture("squares5");
    let o = [0.0; 3];
    let (a, b, c) = ([1.0, -1.0, 0.0], [-1.0, 1.0, 0.0], [0.0, 0.0, 1.0]);
    let (d, e) = ([-0.5, 0.0, 0.0], [0.0, -0.5, 0.0]);
    let truth = |x: &[f64]| {
        in_triangle(x, o, a, e) || in_triangle(x, o, e, c) || in_triangle(x, o, c, d) || in_triangle(x, o, d, b)
    };
    let start = Instant::now();
    let (total, bad, wrong) = grid_mismatches(&f.complex, &f.set, truth)?;
    check(bad == 0, format!("{bad} mismatches over {total} grid points, {:.2?} {:?}", start.elapsed(), &wrong[..wrong.len().min(5)]))
}

fn c7_euclidean() -> Outcome {
    use meanset::complex::CubeCell;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    let mut disagreements = 0;
    let mut members = 0;
    for inst in 0..200 {
        let n = rng.gen_range(1..=4);
        let c = CubicalComplex::from_cells(n, vec![CubeCell::new(vec![0; n], (0..n).collect())]).unwrap();
        let m = rng.gen_range(1..=6);
        let pts: Vec<Vec<f64>> = (0..m).map(|_| (0..n).map(|_| rng.gen_range(0.0..=1.0)).collect()).collect();
        let set = PointSetA::from_points(&c, pts.clone()).map_err(|e| e.to_string())?;
        let constructed = inst % 2 == 0;
        let xbar: Vec<f64> = if constructed {
            let w: Vec<f64> = (0..m).map(|_| rng.gen_range(0.05..1.0)).collect();
            let s: f64 = w.iter().sum();
            (0..n).map(|i| pts.iter().zip(&w).map(|(p, w)| p[i] * w / s).sum()).collect()
        } else {
            (0..n).map(|_| rng.gen_range(0.01..0.99)).collect()
        };
        if set.find(&xbar).is_some() || c.relint_maximal(&xbar).is_none() {
            continue;
        }
        let oracle = min_norm_point(&pts, &xbar).distance;
        let (report, cert) = recognize_interior(&c, &set, &xbar, EUCLID_TOL).map_err(|e| e.to_string())?;
        worst = worst.max((report.value - oracle).abs());
        let in_hull = constructed || oracle <= EUCLID_TOL;
        members += in_hull as usize;
        if cert.is_membership() != in_hull {
            disagreements += 1;
        }
    }
    check(
        worst <= EUCLID_TOL && disagreements == 0,
        format!("max |deficit - dist(x, conv A)| = {worst:.2e}, {disagreements} decision mismatches, {members} hull members"),
    )
}

fn c8_properties() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    let all: Vec<_> = CORPUS.iter().map(|n| fixture(n)).collect();

    // comparison inequality at midpoints
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = f64::NEG_INFINITY;
    for f in &all {
        let c = &f.complex;
        for _ in 0..500 {
            let (x, y, z) = (random_point(c, &mut rng), random_point(c, &mut rng), random_point(c, &mut rng));
            let d = |p: &[f64], q: &[f64]| distance(c, p, q).map_err(|e| e.to_string());
            let m = midpoint(c, &y, &z).map_err(|e| e.to_string())?;
            let gap = d(&x, &m)?.powi(2) - 0.5 * d(&x, &y)?.powi(2) - 0.5 * d(&x, &z)?.powi(2) + 0.25 * d(&y, &z)?.powi(2);
            worst = worst.max(gap);
        }
    }
    ok &= worst <= CN_TOL;
    notes.push(format!("CN max excess {worst:.2e}"));

    // certificate round trip
    let (mut n_mem, mut n_non, mut failures) = (0, 0, Vec::new());
    for f in &all[..4] {
        let name = f.name;
        let mut queries = points(&f.expected["members"]);
        queries.extend(points(&f.expected["non_members"]));
        queries.extend((0..12).map(|_| random_point(&f.complex, &mut rng)));
        for x in queries {
            if f.set.find(&x).is_some() {
                continue;
            }
            let r = recognize(&f.complex, &f.set, &x, GRID_EPS).map_err(|e| e.to_string())?;
            let samples = match r.certificate {
                Certificate::Membership { .. } => {
                    n_mem += 1;
                    STURM_SAMPLES
                }
                Certificate::NonMembership { .. } => {
                    n_non += 1;
                    0
                }
            };
            if let Err(e) = verify_certificate(&f.complex, &f.set, &x, &r.certificate, samples) {
                failures.push(format!("{name} {x:?}: {e}"));
            }
        }
    }
    ok &= failures.is_empty();
    notes.push(format!("round trip {n_mem} membership / {n_non} non-membership, {} failures {:?}", failures.len(), failures));

    // contraction invariance
    let mut flips = Vec::new();
    let mut inst = 0;
    let mut tries = 0;
    while inst < 50 && tries < 500 {
        tries += 1;
        let f = &all[tries % 4];
        let name = f.name;
        let member_pool = points(&f.expected["members"]);
        let x = if tries % 3 == 0 && !member_pool.is_empty() {
            member_pool[rng.gen_range(0..member_pool.len())].clone()
        } else {
            random_point(&f.complex, &mut rng)
        };
        if f.set.find(&x).is_some() {
            continue;
        }
        let before = mean_deficit(&f.complex, &f.set, &x).map_err(|e| e.to_string())?.value;
        if before > 1e-9 && before < 1e-4 {
            continue;
        }
        let mut moved = Vec::new();
        for (label, a) in f.set.iter() {
            let s = rng.gen_range(0.2..=1.0);
            let g = geodesic(&f.complex, &x, a).map_err(|e| e.to_string())?;
            moved.push((label.to_string(), point_along(&g, s).map_err(|e| e.to_string())?));
        }
        let set2 = PointSetA::new(&f.complex, moved).map_err(|e| e.to_string())?;
        let a1 = recognize(&f.complex, &f.set, &x, 1e-8).map_err(|e| e.to_string())?.certificate.is_membership();
        let a2 = recognize(&f.complex, &set2, &x, 1e-8).map_err(|e| e.to_string())?.certificate.is_membership();
        if a1 != a2 {
            flips.push(format!("{name} {x:?}"));
        }
        inst += 1;
    }
    ok &= flips.is_empty() && inst == 50;
    notes.push(format!("contraction {inst} instances, {} flips {:?}", flips.len(), flips));

    // relint consistency
    let mut worst: f64 = 0.0;
    let mut disagree = 0;
    for i in 0..200 {
        let f = &all[i % all.len()];
        let x = random_relint_point(&f.complex, &mut rng);
        if f.set.find(&x).is_some() {
            continue;
        }
        let r = consistency_check_relint(&f.complex, &f.set, &x, GRID_EPS).map_err(|e| e.to_string())?;
        worst = worst.max((r.interior_deficit - r.general_deficit).abs());
        if !r.agrees(RELINT_TOL) {
            disagree += 1;
        }
    }
    ok &= disagree == 0;
    notes.push(format!("relint consistency max gap {worst:.2e}, {disagree} disagreements"));

    check(ok, notes.join("; "))
}

fn c9_heatmap() -> Outcome {
    let f = fixture("squares3");
    let h = &f.expected["heatmap"];
    let opts = HeatMapOptions {
        samples: h["samples"].as_u64().unwrap() as usize,
        eps: h["eps"].as_f64().unwrap(),
        seed: h["seed"].as_u64().unwrap(),
        threads: Some(1),
        ..Default::default()
    };
    let want = h["light_fraction"].as_f64().unwrap();
    let rows = heatmap(&f.complex, &f.set, &opts).map_err(|e| e.to_string())?;
    let light = rows.iter().filter(|r| r.deficit < opts.eps).count() as f64 / rows.len() as f64;
    let one = to_csv(2, &rows);
    let four = to_csv(2, &heatmap(&f.complex, &f.set, &HeatMapOptions { threads: Some(4), ..opts.clone() }).map_err(|e| e.to_string())?);
    let mut mismatched = 0;
    for line in one.lines().skip(1).take(300) {
        let fields: Vec<&str> = line.split(',').collect();
        let x: Vec<f64> = fields[1..3].iter().map(|s| s.parse().unwrap()).collect();
        let deficit: f64 = fields[3].parse().unwrap();
        if (deficit - opts.eps).abs() < 1e-6 {
            continue;
        }
        let standalone = recognize(&f.complex, &f.set, &x, opts.eps).map_err(|e| e.to_string())?;
        if standalone.certificate.is_membership() != (fields[4] == "member") {
            mismatched += 1;
        }
    }
    check(
        (light - want).abs() <= HEAT_TOL && one == four && mismatched == 0,
        format!(
            "light fraction {light:.4} vs analytic {want:.4}, csv identical across 1/4 workers: {}, {mismatched} decision mismatches",
            one == four
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("tripod deficit", c1_tripod),
        ("crossing point", c2_crossing),
        ("mean-set surface", c3_surface),
        ("quadrant distance and line search", c4_quadrant),
        ("planar grid classification", c5_planar),
        ("five-square grid classification", c6_five_squares),
        ("Euclidean oracle", c7_euclidean),
        ("property suites", c8_properties),
        ("heat map", c9_heatmap),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let elapsed = start.elapsed();
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail} [{elapsed:.2?}]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} {name}: {detail} [{elapsed:.2?}]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
