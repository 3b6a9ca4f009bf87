//! Command-line driver. Every command reads a JSON [`RunConfig`], applies flag
//! overrides, prints a JSON report to stdout and, with an output directory,
//! writes `<command>.json`, CSV tables and `meta.json` there.

pub mod config;

use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

pub use config::{OutputSpec, Params, RunConfig, SystemSpec, SCHEMA_VERSION};

use crate::angle_domain::{standard_grid, verify_prop_2_3, PsiSolver};
use crate::curves::{barrier_audit, build_spiral, Orientation};
use crate::error::{Error, Result};
use crate::finder::find_periodic;
use crate::hypotheses::{check_all, AuditGrid, CheckOptions};
use crate::successor::{successor_iterate, successor_with_trajectory, uniqueness_check};
use crate::system::PlanarField;
use crate::twist::{compute_thresholds, prepare, scan_twist, ThresholdBundle, ThresholdOptions};

#[derive(Parser, Debug)]
#[command(name = "successor-kit", version, about = "Successor maps, twist certificates and periodic orbits")]
pub struct Cli {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads (also SUCCESSOR_KIT_THREADS).
    #[arg(long, global = true, env = "SUCCESSOR_KIT_THREADS")]
    pub threads: Option<usize>,
    /// System lambda; for thresholds and find-periodic, the lambda used for the search.
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    #[arg(long, global = true)]
    pub m: Option<usize>,
    #[arg(long, global = true)]
    pub k: Option<usize>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub t0: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    pub y0: Option<f64>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    #[arg(long = "grid-n", global = true)]
    pub grid_n: Option<usize>,
    /// Relative tolerance; the absolute tolerance is set to 1e-3 of it.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// First return to the positive y axis from (t0, 0, y0).
    Successor,
    /// m-fold successor iterate.
    Iterate,
    /// Return-time margins at alpha and beta over a t0 grid.
    ScanTwist,
    /// The threshold chain Y_m, Theta_m, lambda_{m,k}, M, R_M, Z, Sigma1.
    Thresholds,
    /// kT-periodic orbits with m rotations.
    FindPeriodic,
    /// Hypothesis audit.
    Check,
    /// Time-domain successor against the angle-domain map.
    Equivalence,
    /// Guiding spiral with its barrier audit.
    Spiral,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Successor => "successor",
            Command::Iterate => "iterate",
            Command::ScanTwist => "scan-twist",
            Command::Thresholds => "thresholds",
            Command::FindPeriodic => "find-periodic",
            Command::Check => "check",
            Command::Equivalence => "equivalence",
            Command::Spiral => "spiral",
        }
    }

    fn threshold_driven(self) -> bool {
        matches!(self, Command::Thresholds | Command::FindPeriodic)
    }
}

/// Exit status for an error: 2 for configuration, parse and I/O problems,
/// 1 for everything raised by the numerics.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::Parse(_) | Error::Io(_) => 2,
        _ => 1,
    }
}

fn error_kind(err: &Error) -> &'static str {
    match err {
        Error::Parse(_) => "parse",
        Error::FieldEval { .. } => "field_eval",
        Error::Domain(_) => "domain",
        Error::AngularStall { .. } => "angular_stall",
        Error::Bracket(_) => "bracket",
        Error::Successor(_) => "successor",
        Error::NoSignChange { .. } => "no_sign_change",
        Error::FlatResidual { .. } => "flat_residual",
        Error::NonSimpleZero { .. } => "non_simple_zero",
        Error::BarrierViolation(_) => "barrier_violation",
        Error::RootBracket(_) => "root_bracket",
        Error::E0NotFound(_) => "e0_not_found",
        Error::Offset(_) => "offset",
        Error::MNotAchievable(_) => "m_not_achievable",
        Error::NotFound(_) => "not_found",
        Error::Config(_) => "config",
        Error::Io(_) => "io",
    }
}

fn apply_overrides(cli: &Cli, cfg: &mut RunConfig) {
    let p = &mut cfg.params;
    if let Some(l) = cli.lambda {
        if cli.command.threshold_driven() {
            p.lambda = Some(l);
        } else {
            cfg.system.lambda = Some(l);
        }
    }
    macro_rules! set {
        ($($field:ident),*) => {$(if cli.$field.is_some() { p.$field = cli.$field; })*};
    }
    set!(m, k, t0, y0, alpha, beta, grid_n);
    if let Some(tol) = cli.tol {
        cfg.integrator.rel_tol = tol;
        cfg.integrator.abs_tol = 1e-3 * tol;
    }
    if let Some(out) = &cli.out {
        cfg.output.dir = Some(out.display().to_string());
    }
}

/// Result of a command: the JSON payload, CSV tables and whether the outcome
/// counts as a success.
struct Outcome {
    result: Value,
    tables: Vec<(String, Vec<u8>)>,
    ok: bool,
}

impl Outcome {
    fn ok<T: Serialize>(v: &T) -> Self {
        Outcome { result: to_value(v), tables: Vec::new(), ok: true }
    }
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report serialises")
}

fn csv<F: FnOnce(&mut Vec<u8>) -> std::io::Result<()>>(f: F) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn need<T: Copy>(v: Option<T>, name: &str) -> Result<T> {
    v.ok_or_else(|| Error::Config(format!("missing parameter '{name}' (config params or --{name})")))
}

fn threshold_options(cfg: &RunConfig) -> ThresholdOptions {
    let d = ThresholdOptions::default();
    ThresholdOptions {
        lambda_fraction: cfg.params.lambda_fraction.unwrap_or(d.lambda_fraction),
        lambda: cfg.params.lambda,
        t_grid_n: d.t_grid_n,
        x_range: cfg.params.x_range.unwrap_or(d.x_range),
    }
}

fn run_successor(cfg: &RunConfig, fld: &PlanarField) -> Result<Outcome> {
    let (t0, y0) = (cfg.params.t0.unwrap_or(0.0), need(cfg.params.y0, "y0")?);
    let (res, seg) = successor_with_trajectory(fld, t0, y0, &cfg.integrator)?;
    let warning = uniqueness_check(fld, t0, y0, &cfg.integrator)?;
    let mut out = Outcome::ok(&json!({ "successor": res, "non_uniqueness_warning": warning }));
    out.tables.push(("trajectory.csv".into(), csv(|w| seg.write_csv(w))?));
    Ok(out)
}

fn run_iterate(cfg: &RunConfig, fld: &PlanarField) -> Result<Outcome> {
    let (t0, y0) = (cfg.params.t0.unwrap_or(0.0), need(cfg.params.y0, "y0")?);
    let m = cfg.params.m.unwrap_or(1);
    let it = successor_iterate(fld, t0, y0, m, &cfg.integrator)?;
    let mut out = Outcome::ok(&it);
    out.tables.push((
        "iterate.csv".into(),
        csv(|w| {
            use std::io::Write;
            writeln!(w, "turn,t1,y1")?;
            for (j, r) in it.turns.iter().enumerate() {
                writeln!(w, "{},{:?},{:?}", j + 1, r.t1, r.y1)?;
            }
            Ok(())
        })?,
    ));
    Ok(out)
}

fn run_scan(cfg: &RunConfig, fld: &PlanarField) -> Result<Outcome> {
    let p = &cfg.params;
    let cert = scan_twist(
        fld,
        need(p.alpha, "alpha")?,
        need(p.beta, "beta")?,
        p.m.unwrap_or(1),
        p.k.unwrap_or(1),
        p.grid_n.unwrap_or(32),
        &cfg.integrator,
    )?;
    let mut out = Outcome::ok(&cert);
    out.ok = cert.valid;
    out.tables.push(("twist.csv".into(), csv(|w| cert.write_csv(w))?));
    Ok(out)
}

fn thresholds_csv(b: &ThresholdBundle) -> Result<Vec<u8>> {
    csv(|w| {
        use std::io::Write;
        writeln!(w, "name,value")?;
        let rows = [
            ("c", b.c),
            ("r0", b.r0),
            ("sigma1", b.sigma1),
            ("Y_m", b.y_m),
            ("Theta_m", b.theta_m),
            ("lambda_mk", b.lambda_mk),
            ("lambda", b.lambda),
            ("M", b.big_m),
            ("r_M", b.r_m),
            ("B", b.b),
            ("R_M", b.big_r_m),
            ("Z", b.z),
            ("Sigma1", b.sigma1_bound),
        ];
        for (n, v) in rows {
            writeln!(w, "{n},{v:?}")?;
        }
        Ok(())
    })
}

fn run_thresholds(cfg: &RunConfig, fld: &PlanarField) -> Result<Outcome> {
    let (m, k) = (cfg.params.m.unwrap_or(1), cfg.params.k.unwrap_or(1));
    let (bundle, setup) = compute_thresholds(fld, m, k, &threshold_options(cfg))?;
    let mut out = Outcome::ok(&json!({ "thresholds": bundle, "modified": setup.modified.summary() }));
    out.tables.push(("thresholds.csv".into(), thresholds_csv(&bundle)?));
    Ok(out)
}

fn run_find(cfg: &RunConfig, fld: &PlanarField) -> Result<Outcome> {
    let p = &cfg.params;
    let (m, k) = (p.m.unwrap_or(1), p.k.unwrap_or(1));
    let n = p.grid_n.unwrap_or(16);
    // With an explicit bracket the configured field is searched directly;
    // otherwise the threshold chain supplies the field, lambda and bracket.
    let (search, icfg, alpha, beta, bundle) = match (p.alpha, p.beta) {
        (Some(a), Some(b)) => {
            let f = match p.lambda {
                Some(l) => fld.with_lambda(l)?,
                None => fld.clone(),
            };
            (f, cfg.integrator, a, b, None)
        }
        (None, None) => {
            let (b, setup) = compute_thresholds(fld, m, k, &threshold_options(cfg))?;
            let f = setup.modified.field.with_lambda(b.lambda)?;
            (f, b.integrator_config(&cfg.integrator), b.y_m, b.z, Some(b))
        }
        _ => return Err(Error::Config("give both alpha and beta, or neither".into())),
    };
    let cert = scan_twist(&search, alpha, beta, m, k, n, &icfg)?;
    let report = find_periodic(&search, &cert, n, &icfg)?;
    let mut out = Outcome::ok(&json!({
        "thresholds": bundle,
        "certificate": cert,
        "search": report,
        "invariants_hold": report.orbits.iter().all(|o| o.invariants_hold()),
    }));
    out.ok = !report.orbits.is_empty() && report.orbits.iter().all(|o| o.invariants_hold());
    out.tables.push(("twist.csv".into(), csv(|w| cert.write_csv(w))?));
    out.tables.push((
        "residual.csv".into(),
        csv(|w| {
            use std::io::Write;
            writeln!(w, "t0,y0,g")?;
            for s in &report.samples {
                writeln!(w, "{:?},{:?},{:?}", s.t0, s.y0, s.g)?;
            }
            Ok(())
        })?,
    ));
    for (i, o) in report.orbits.iter().enumerate() {
        out.tables.push((format!("orbit_{i}.csv"), csv(|w| o.write_csv(w))?));
    }
    Ok(out)
}

fn run_check(cfg: &RunConfig, fld: &PlanarField) -> Result<Outcome> {
    let p = &cfg.params;
    let d = CheckOptions::default();
    let big_r = p.big_r.unwrap_or(d.big_r);
    let big_d = p.big_d.unwrap_or(d.big_d);
    let grid = p.grid_n.map(|n| {
        let g = AuditGrid::new(big_r.max(big_d));
        AuditGrid { n_t: n, n_angle: 4 * n, ..g }
    });
    let opts = CheckOptions { c1: p.c1.unwrap_or(d.c1), big_r, delta: p.delta.unwrap_or(d.delta), big_d, grid };
    let report = check_all(fld, &opts);
    let mut out = Outcome::ok(&report);
    out.ok = !report.any_fail();
    Ok(out)
}

fn run_equivalence(cfg: &RunConfig, fld: &PlanarField) -> Result<Outcome> {
    let spec = cfg.hamiltonian()?;
    let tol = (cfg.integrator.rel_tol * 1e3).max(1e-8);
    let report = verify_prop_2_3(&PsiSolver::new(spec), fld, &standard_grid(fld.period), &cfg.integrator);
    let mut out = Outcome::ok(&json!({ "equivalence": report, "tolerance": tol }));
    out.ok = report.failures.is_empty() && report.max_dt1 < tol && report.max_dh1 < tol;
    Ok(out)
}

fn run_spiral(cfg: &RunConfig, fld: &PlanarField) -> Result<Outcome> {
    let p = &cfg.params;
    let orientation = match p.orientation.as_deref().unwrap_or("entering") {
        "entering" => Orientation::Entering,
        "exiting" => Orientation::Exiting,
        other => return Err(Error::Config(format!("orientation must be entering or exiting, got '{other}'"))),
    };
    let setup = prepare(fld, &threshold_options(cfg))?;
    let pair: Arc<_> = setup.pair.clone();
    let y_start = p.y_start.unwrap_or_else(|| (2.0 * pair.e0).sqrt().max(pair.disc_radius()) * 1.001);
    let s = build_spiral(pair.clone(), orientation, y_start, p.turns.unwrap_or(5))?;
    let barrier = barrier_audit(&s, fld, p.n_probes.unwrap_or(100), &cfg.integrator);
    let mut out = Outcome::ok(&json!({
        "orientation": orientation,
        "comparison": pair.summary(),
        "anchors": s.y_anchors(),
        "anchors_increasing": s.anchors_increasing(),
        "endpoint_mismatch": s.endpoint_mismatch(),
        "all_simple": s.all_simple(),
        "inclusion_chain": s.inclusion_chain(pair.disc_radius()),
        "barrier": barrier,
    }));
    out.ok = barrier.passed() && s.all_simple() && s.anchors_increasing();
    out.tables.push(("spiral.csv".into(), csv(|w| s.write_csv(w))?));
    Ok(out)
}

fn execute(cmd: Command, cfg: &RunConfig) -> Result<Outcome> {
    let fld = cfg.field()?;
    match cmd {
        Command::Successor => run_successor(cfg, &fld),
        Command::Iterate => run_iterate(cfg, &fld),
        Command::ScanTwist => run_scan(cfg, &fld),
        Command::Thresholds => run_thresholds(cfg, &fld),
        Command::FindPeriodic => run_find(cfg, &fld),
        Command::Check => run_check(cfg, &fld),
        Command::Equivalence => run_equivalence(cfg, &fld),
        Command::Spiral => run_spiral(cfg, &fld),
    }
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(f, v).map_err(|e| Error::Io(e.into()))
}

fn write_outputs(dir: &Path, cmd: Command, cfg: &RunConfig, report: &Value, tables: &[(String, Vec<u8>)], elapsed: f64) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    if cfg.wants("json") {
        write_json(&dir.join(format!("{}.json", cmd.name())), report)?;
    }
    if cfg.wants("csv") {
        for (name, bytes) in tables {
            std::fs::write(dir.join(name), bytes)?;
        }
    }
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let meta = json!({
        "command": cmd.name(),
        "config_hash": cfg.hash(),
        "config": cfg,
        "version": env!("CARGO_PKG_VERSION"),
        "unix_time": stamp,
        "elapsed_s": elapsed,
    });
    write_json(&dir.join("meta.json"), &meta)
}

// A closed stdout (e.g. piped into `head`) is not an error of the run.
fn emit(v: &Value) {
    use std::io::Write;
    let text = serde_json::to_string_pretty(v).expect("report serialises");
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli.config.as_ref().ok_or_else(|| Error::Config("--config PATH is required".into()))?;
    let mut cfg = RunConfig::load(path)?;
    apply_overrides(cli, &mut cfg);
    cfg.validate()?;
    Ok(cfg)
}

/// Parse arguments, run the command and return the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("warning: thread pool already initialised: {e}");
        }
    }
    let cmd = cli.command;
    let cfg = match load_config(&cli) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            emit(&json!({ "command": cmd.name(), "error": { "kind": error_kind(&e), "message": e.to_string() } }));
            return exit_code(&e);
        }
    };
    let hash = cfg.hash();
    let started = Instant::now();
    let (report, tables, code) = match execute(cmd, &cfg) {
        Ok(o) => {
            let status = if o.ok { "ok" } else { "failed" };
            let report = json!({ "command": cmd.name(), "config_hash": hash, "status": status, "result": o.result });
            (report, o.tables, if o.ok { 0 } else { 1 })
        }
        Err(e) => {
            eprintln!("error: {e}");
            let report = json!({
                "command": cmd.name(),
                "config_hash": hash,
                "status": "error",
                "error": { "kind": error_kind(&e), "message": e.to_string() },
            });
            (report, Vec::new(), exit_code(&e))
        }
    };
    let elapsed = started.elapsed().as_secs_f64();
    emit(&report);
    if let Some(dir) = &cfg.output.dir {
        if let Err(e) = write_outputs(Path::new(dir), cmd, &cfg, &report, &tables, elapsed) {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    }
    code
}
