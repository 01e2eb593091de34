use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use meanset::boundary::recognize;
use meanset::complex::{load_complex, validate_complex, CubicalComplex};
use meanset::error::Error;
use meanset::geodesic::{distance, geodesic};
use meanset::heatmap::{heatmap, write_csv, HeatMapOptions, Segment};
use meanset::recognition::{load_point_set, mean_deficit, PointSetA};

#[derive(Parser)]
#[command(name = "meanset", version, about = "Recognize and certify weighted means in CAT(0) cubical complexes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ComplexArg {
    /// Complex JSON file.
    #[arg(long)]
    complex: PathBuf,
    /// Longest cell chain tried by the geodesic search.
    #[arg(long)]
    max_chain: Option<usize>,
}

#[derive(Args)]
struct QueryArgs {
    #[command(flatten)]
    complex: ComplexArg,
    /// Point set JSON file (array of points or object keyed by label).
    #[arg(long)]
    set: PathBuf,
    /// Query point as a JSON array, e.g. "[0.5,0]".
    #[arg(long)]
    at: String,
}

#[derive(Subcommand)]
enum Command {
    /// Check maximality, face intersections and the flag condition.
    Validate {
        #[command(flatten)]
        complex: ComplexArg,
    },
    /// Intrinsic distance between two points.
    Distance {
        #[command(flatten)]
        complex: ComplexArg,
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
    },
    /// Geodesic between two points: breakpoints, cells and length.
    Geodesic {
        #[command(flatten)]
        complex: ComplexArg,
        #[arg(long)]
        from: String,
        #[arg(long)]
        to: String,
    },
    /// Decide whether a point is a weighted mean of the set and print a certificate.
    Recognize {
        #[command(flatten)]
        query: QueryArgs,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
    /// Mean deficit at a point.
    Deficit {
        #[command(flatten)]
        query: QueryArgs,
    },
    /// Sample the mean deficit over the complex and write CSV.
    Heatmap {
        #[command(flatten)]
        complex: ComplexArg,
        #[arg(long)]
        set: PathBuf,
        #[arg(long, default_value_t = 2000)]
        samples: usize,
        #[arg(long, default_value_t = 0.1)]
        tol: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Probe K evenly spaced points on the geodesic from P to Q.
        #[arg(long, num_args = 3, value_names = ["P", "Q", "K"])]
        segment: Option<Vec<String>>,
        /// Pick cells in proportion to volume instead of uniformly.
        #[arg(long)]
        by_volume: bool,
    },
}

type Result<T> = std::result::Result<T, String>;

fn msg<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn at(path: &Path) -> impl Fn(Error) -> String + '_ {
    move |e| format!("{}: {e}", path.display())
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn complex(arg: &ComplexArg) -> Result<CubicalComplex> {
    let mut c = load_complex(&read(&arg.complex)?).map_err(at(&arg.complex))?;
    if let Some(k) = arg.max_chain {
        c.set_max_chain(k);
    }
    Ok(c)
}

fn point_set(c: &CubicalComplex, path: &Path) -> Result<PointSetA> {
    load_point_set(c, &read(path)?).map_err(at(path))
}

fn point(text: &str) -> Result<Vec<f64>> {
    serde_json::from_str(text).map_err(|e| format!("point {text:?}: {e}"))
}

/// A closed pipe on stdout is not an error.
fn quiet_pipe(e: std::io::Error) -> Result<()> {
    if e.kind() == std::io::ErrorKind::BrokenPipe {
        Ok(())
    } else {
        Err(e.to_string())
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(msg)?;
    writeln!(std::io::stdout().lock(), "{text}").or_else(quiet_pipe)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Validate { complex: arg } => {
            let report = validate_complex(&complex(&arg)?);
            print_json(&report)?;
            if !report.is_ok() {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Distance { complex: arg, from, to } => {
            let c = complex(&arg)?;
            print_json(&distance(&c, &point(&from)?, &point(&to)?).map_err(msg)?)?;
        }
        Command::Geodesic { complex: arg, from, to } => {
            let c = complex(&arg)?;
            print_json(&geodesic(&c, &point(&from)?, &point(&to)?).map_err(msg)?)?;
        }
        Command::Recognize { query, tol } => {
            let c = complex(&query.complex)?;
            let set = point_set(&c, &query.set)?;
            print_json(&recognize(&c, &set, &point(&query.at)?, tol).map_err(msg)?)?;
        }
        Command::Deficit { query } => {
            let c = complex(&query.complex)?;
            let set = point_set(&c, &query.set)?;
            print_json(&mean_deficit(&c, &set, &point(&query.at)?).map_err(msg)?)?;
        }
        Command::Heatmap { complex: arg, set, samples, tol, seed, out, segment, by_volume } => {
            let c = complex(&arg)?;
            let set = point_set(&c, &set)?;
            let segment = match segment.as_deref() {
                Some([p, q, k]) => Some(Segment {
                    from: point(p)?,
                    to: point(q)?,
                    count: k.parse().map_err(|e| format!("segment count {k:?}: {e}"))?,
                }),
                _ => None,
            };
            let opts = HeatMapOptions { samples, eps: tol, seed, by_volume, segment, threads: None };
            let rows = heatmap(&c, &set, &opts).map_err(msg)?;
            match out {
                Some(path) => {
                    let io = |e: std::io::Error| format!("{}: {e}", path.display());
                    let mut f = std::io::BufWriter::new(fs::File::create(&path).map_err(io)?);
                    write_csv(&mut f, c.ambient_dim(), &rows).map_err(io)?;
                    f.flush().map_err(io)?;
                }
                None => write_csv(&mut std::io::stdout().lock(), c.ambient_dim(), &rows).or_else(quiet_pipe)?,
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
