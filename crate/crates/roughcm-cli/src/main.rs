use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use roughcm::invariance::{CoefficientSystem, System, SystemSpec};
use roughcm::manifold::LPConfig;
use roughcm::par::Execution;
use roughcm::pipeline::{self, VerifyConfig, VerifyReport, CSV_HEADER};

#[derive(Parser)]
#[command(name = "roughcm", version, about = "Taylor approximations of random center manifolds for rough differential equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Derive and print the coefficient equations of the ansatz.
    Derive(DeriveArgs),
    /// Check the approximation order against the Lyapunov–Perron reference.
    Verify(VerifyArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Args)]
struct Common {
    /// System description (JSON).
    #[arg(long)]
    spec: PathBuf,
    /// Order of the ansatz; defaults to the spec's `q`.
    #[arg(long)]
    q: Option<u32>,
    /// Directory for the output files.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Print machine-readable output instead of the text report.
    #[arg(long, value_enum)]
    format: Option<Format>,
}

#[derive(Args)]
struct DeriveArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    common: Common,
    /// Seed count `N` (seeds 0..N), a range `a..b` or a list `3,5,8`.
    #[arg(long, default_value = "20")]
    seeds: String,
    #[arg(long, default_value_t = 0.0125)]
    xi_min: f64,
    #[arg(long, default_value_t = 0.1)]
    xi_max: f64,
    #[arg(long, default_value_t = 4)]
    points: usize,
    /// Grid cells per unit time.
    #[arg(long, default_value_t = 256)]
    grid_n: usize,
    /// Horizon T for the coefficient equations; defaults to the window.
    #[arg(long)]
    horizon: Option<usize>,
    /// Lyapunov–Perron window N.
    #[arg(long, default_value_t = 12)]
    window: usize,
    /// Weight exponent in (−β, 0); defaults to −β/2.
    #[arg(long, allow_hyphen_values = true)]
    eta: Option<f64>,
    #[arg(long, default_value_t = 0.5)]
    cutoff_r: f64,
    #[arg(long, default_value_t = 200)]
    max_iters: usize,
    #[arg(long, default_value_t = 1e-15)]
    fp_tol: f64,
}

/// Failure that maps to a specific exit code.
#[derive(Debug)]
struct Exit(u8, String);

impl std::fmt::Display for Exit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.1)
    }
}

impl std::error::Error for Exit {}

fn invalid(e: impl std::fmt::Display) -> anyhow::Error {
    Exit(2, e.to_string()).into()
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
        if b <= a {
            bail!("empty seed range {s}");
        }
        return Ok((a..b).collect());
    }
    if s.contains(',') {
        return s.split(',').map(|t| Ok(t.trim().parse()?)).collect();
    }
    let n: u64 = s.parse()?;
    Ok((0..n).collect())
}

fn load(path: &Path) -> Result<System> {
    let text = fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
    let spec = SystemSpec::from_json(&text).map_err(invalid)?;
    spec.build().map_err(invalid)
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("RM_THREADS") else { return Ok(()) };
    let n: usize = v.parse().map_err(|_| invalid(format!("RM_THREADS must be a positive integer, got {v:?}")))?;
    if n == 0 {
        return Err(invalid("RM_THREADS must be a positive integer, got 0"));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring the thread pool")?;
    Ok(())
}

fn coefficient_csv(cs: &CoefficientSystem) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["i", "zero_flag", "A_alpha", "f", "g", "equation"])?;
    for o in &cs.orders {
        let g: Vec<String> = o.g.iter().map(|g| g.to_string()).collect();
        w.write_record([
            o.i.to_string(),
            o.zero_flag.to_string(),
            o.a_alpha.to_string(),
            o.f.to_string(),
            g.join("; "),
            cs.equation_line(o.i),
        ])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn write_out(dir: &Path, name: &str, body: &str) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    fs::write(&path, body).with_context(|| format!("writing {}", path.display()))
}

fn derive(args: &DeriveArgs) -> Result<u8> {
    let c = &args.common;
    let sys = load(&c.spec)?;
    let cs = pipeline::derive(&sys, c.q).map_err(invalid)?;
    let json = serde_json::to_string_pretty(&cs.to_json())?;
    let table = coefficient_csv(&cs)?;
    let report = cs.report();
    if let Some(dir) = &c.out_dir {
        write_out(dir, "coefficients.json", &json)?;
        write_out(dir, "coefficients.csv", &table)?;
        write_out(dir, "report.txt", &(report.clone() + "\n"))?;
    }
    let out = match c.format {
        Some(Format::Json) => json,
        Some(Format::Csv) => table,
        None => report,
    };
    println!("{}", out.trim_end());
    Ok(0)
}

fn run_csv(rep: &VerifyReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for row in rep.csv_rows() {
        w.write_record(&row)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn summary(rep: &VerifyReport) -> String {
    let mut lines = vec![format!(
        "q = {}, window N = {}, horizon T = {}, {} cells per unit, R = {}, η = {}",
        rep.q, rep.window, rep.horizon, rep.per_unit, rep.cutoff_r, rep.eta
    )];
    for s in &rep.seeds {
        let label = s.seed.map_or_else(|| "deterministic".to_string(), |v| format!("seed {v}"));
        match &s.error {
            Some(e) => lines.push(format!("{label}: error: {e}")),
            None => lines.push(format!(
                "{label}: slope {}, h^app slope {}, ratio spread {}, max contraction rate {:.3}",
                s.order_slope.map_or("n/a".into(), |v| format!("{v:.3}")),
                s.happ_slope.map_or("n/a".into(), |v| format!("{v:.3}")),
                s.ratio_spread.map_or("n/a".into(), |v| format!("{v:.1}")),
                s.contraction_rates.iter().cloned().fold(0.0, f64::max),
            )),
        }
    }
    lines.push(format!(
        "median slope {} (threshold {}): {}",
        rep.median_slope.map_or("n/a".into(), |v| format!("{v:.3}")),
        rep.threshold,
        if rep.passed { "PASS" } else { "FAIL" }
    ));
    lines.join("\n")
}

fn verify(args: &VerifyArgs) -> Result<u8> {
    let c = &args.common;
    let sys = load(&c.spec)?;
    let seeds = parse_seeds(&args.seeds).map_err(|e| invalid(format!("--seeds: {e}")))?;
    let cfg = VerifyConfig {
        q: c.q,
        seeds,
        xi_min: args.xi_min,
        xi_max: args.xi_max,
        points: args.points,
        per_unit: args.grid_n,
        horizon: args.horizon,
        refinement: 8,
        lp: LPConfig { eta: args.eta, window: args.window, cutoff_r: args.cutoff_r, max_iters: args.max_iters, fp_tol: args.fp_tol },
        execution: Execution::default(),
    };
    let rep = pipeline::verify(&sys, &cfg).map_err(invalid)?;
    for w in &rep.warnings {
        eprintln!("warning: {w}");
    }
    let json = serde_json::to_string_pretty(&rep)?;
    let table = run_csv(&rep)?;
    if let Some(dir) = &c.out_dir {
        write_out(dir, "run_report.json", &json)?;
        write_out(dir, "run.csv", &table)?;
    }
    let out = match c.format {
        Some(Format::Json) => json,
        Some(Format::Csv) => table,
        None => summary(&rep),
    };
    println!("{}", out.trim_end());
    Ok(if rep.passed { 0 } else { 1 })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|_| match &cli.command {
        Command::Derive(a) => derive(a),
        Command::Verify(a) => verify(a),
    });
    match result {
        Ok(code) => {
            let _ = std::io::stdout().flush();
            ExitCode::from(code)
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(e.downcast_ref::<Exit>().map_or(2, |x| x.0))
        }
    }
}
