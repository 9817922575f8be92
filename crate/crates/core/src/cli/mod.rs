//! Command-line front end: flag parsing, subcommand dispatch, CSV/JSON
//! artifacts and exit codes (0 pass, 1 assertion failure, 2 configuration
//! error).

pub mod model_file;
pub mod report;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_traits::{ToPrimitive, Zero};
use serde::Serialize;
use serde_json::{json, Value};

use crate::asymptotics::{estimate_x_cr, estimate_x_cr_bisection, estimate_y_cr, fit_beta, CriticalMethod};
use crate::error::{Error, Result};
use crate::lamperti::{self, Branch};
use crate::mc::{default_workers, McConfig, DEFAULT_CHUNK};
use crate::measure::{drift_diagnostic, nu, y_cross_check};
use crate::model::{parse_rational, validate_assumptions, Rational, WeightFunction};
use crate::solver::{compute_coefficients, evaluate, EvalConfig, NumericEvaluation};
use crate::trees::{volume_batch, Sampler};
use crate::walk::{self, KeyEvent};

pub use model_file::{load_model, ModelFile};

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "catpark", version, about = "Fully parked trees and positive catalytic equations")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Bundled model name or path to a JSON model file.
    #[arg(long, global = true, default_value = "planar_maps")]
    pub model: String,
    /// Series order N.
    #[arg(long, global = true)]
    pub order: Option<usize>,
    /// `num/den`, a decimal, `critical` or `critical*num/den`.
    #[arg(long, global = true)]
    pub x: Option<String>,
    /// Flux truncation P_max.
    #[arg(long, global = true)]
    pub pmax: Option<usize>,
    /// Depth M of the splitting measure.
    #[arg(long, global = true)]
    pub depth: Option<usize>,
    /// Numeric tolerance of the command's checks.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Seed of every Monte Carlo stream.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Monte Carlo sample count.
    #[arg(long, global = true)]
    pub samples: Option<usize>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Stdout format; --out always writes both.
    #[arg(long, global = true, value_enum, default_value = "json")]
    pub format: Format,
    /// Directory receiving `<command>.json` and `<command>*.csv`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Standing assumptions and dependency graph.
    Validate,
    /// Exact coefficients [x^n]W_p.
    Coeffs,
    /// Numeric W, W• and W° at fixed x.
    Eval,
    /// x_cr, alpha, y_cr and beta.
    Critical,
    /// Splitting measure and drift diagnostic.
    Nu,
    /// Tree batches and volume statistics.
    Sample {
        /// Root fluxes.
        #[arg(long, value_delimiter = ',', default_values_t = [64usize, 128])]
        p: Vec<usize>,
    },
    /// Exact and Monte Carlo Key formula, pointed variant.
    Keycheck {
        /// Also run the Monte Carlo check.
        #[arg(long)]
        mc: bool,
    },
    /// Pre-renewal and renewal functions, ladder tails.
    Renewal {
        #[arg(long, default_value_t = 500)]
        horizon: usize,
    },
    /// Laplace exponent scans and root certificates.
    Lamperti {
        #[arg(long, value_parser = parse_branch)]
        branch: Option<Branch>,
    },
    /// Every acceptance criterion, one line each.
    Report,
}

fn parse_branch(s: &str) -> std::result::Result<Branch, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// A CSV table.
#[derive(Clone, Debug, Default)]
pub struct Table {
    /// Appended to the file stem; empty for the main table.
    pub suffix: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(suffix: &str, headers: &[&str]) -> Self {
        Self { suffix: suffix.into(), headers: headers.iter().map(|h| h.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record(&self.headers).map_err(err)?;
        for r in &self.rows {
            w.write_record(r).map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Result of a subcommand.
#[derive(Clone, Debug)]
pub struct Artifact {
    pub command: &'static str,
    pub json: Value,
    pub tables: Vec<Table>,
    pub pass: bool,
}

/// Resolved run configuration, embedded in every artifact.
#[derive(Clone, Debug, Serialize)]
pub struct RunInfo {
    pub model: String,
    pub bound: usize,
    pub seed: u64,
    pub workers: usize,
    pub chunk: usize,
    pub precision_bits: u32,
}

fn f(v: f64) -> String {
    v.to_string()
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("report types serialize")
}

/// `x` as resolved from the flag.
#[derive(Clone, Debug, Serialize)]
pub struct ResolvedX {
    pub spec: String,
    pub value: String,
    pub value_f64: f64,
    /// How a `critical` request was turned into a number.
    pub source: String,
}

/// Rational with denominator `10^12` nearest to `v`.
fn rational_from_f64(v: f64) -> Result<Rational> {
    let scale = 1_000_000_000_000i64;
    let n = (v * scale as f64).round();
    if !n.is_finite() || n <= 0.0 {
        return Err(Error::Argument(format!("x = {v} must be positive")));
    }
    Ok(Rational::new((n as i64).into(), scale.into()))
}

fn parse_x_literal(s: &str) -> Result<Rational> {
    if s.contains('.') || s.contains('e') {
        let v: f64 = s.parse().map_err(|e| Error::Argument(format!("--x {s:?}: {e}")))?;
        rational_from_f64(v)
    } else {
        parse_rational(s).map_err(|e| Error::Argument(format!("--x: {e}")))
    }
}

/// Default series order for estimating `x_cr`.
pub const CRITICAL_ORDER: usize = 200;

/// Resolves `--x`. A `critical` request uses the ratio-method estimate
/// from `order` coefficients; when the truncated system diverges there
/// (estimate above `x_cr`), bisection on convergence at `p_max` replaces it
/// by the largest convergent value below.
pub fn resolve_x(w: &WeightFunction, spec: &str, order: usize, p_max: usize) -> Result<ResolvedX> {
    let spec = spec.trim();
    let (base, factor) = match spec.strip_prefix("critical") {
        Some(rest) => {
            let factor = match rest.strip_prefix('*') {
                Some(r) => parse_x_literal(r)?,
                None if rest.is_empty() => Rational::from_integer(1.into()),
                None => return Err(Error::Argument(format!("--x {spec:?}: expected critical or critical*r"))),
            };
            (None, factor)
        }
        None => (Some(parse_x_literal(spec)?), Rational::from_integer(1.into())),
    };
    let (x, source) = match base {
        Some(x) => (x, "literal".to_string()),
        None => {
            let sol = compute_coefficients(w, order)?;
            let coeffs: Vec<Rational> = (0..=order).map(|n| sol.table.coeff(n, 0)).collect();
            let est = estimate_x_cr(&coeffs)?;
            let mid = 0.5 * (est.x_cr_lo + est.x_cr_hi);
            let cand = rational_from_f64(mid)?;
            let cfg = EvalConfig { p_max, ..Default::default() };
            if evaluate(w, &cand, &cfg)?.converged {
                (cand, format!("ratio method, N = {order}"))
            } else {
                let lo = rational_from_f64(0.9 * mid)?;
                let b = estimate_x_cr_bisection(w, &lo, &cand, &cfg, 30)?;
                debug_assert_eq!(b.method, CriticalMethod::Bisection);
                (rational_from_f64(b.x_cr_lo)?, format!("bisection at P_max = {p_max} below the ratio estimate"))
            }
        }
    };
    let x = x * factor;
    if x <= Rational::zero() {
        return Err(Error::Argument("x must be positive".into()));
    }
    Ok(ResolvedX { spec: spec.to_string(), value: x.to_string(), value_f64: x.to_f64().unwrap_or(f64::NAN), source })
}

struct Ctx {
    w: WeightFunction,
    c: Common,
    mc: McConfig,
    info: RunInfo,
}

impl Ctx {
    fn x(&self, default: &str, p_max: usize) -> Result<(ResolvedX, Rational)> {
        let spec = self.c.x.clone().unwrap_or_else(|| default.to_string());
        let r = resolve_x(&self.w, &spec, self.c.order.unwrap_or(CRITICAL_ORDER).max(50), p_max)?;
        let x = parse_rational(&r.value)?;
        Ok((r, x))
    }

    fn eval(&self, x: &Rational, p_max: usize, pointed: bool) -> Result<NumericEvaluation> {
        let cfg = EvalConfig { p_max, pointed, tol: self.c.tol.unwrap_or(1e-13), ..Default::default() };
        let e = evaluate(&self.w, x, &cfg)?;
        if !e.converged {
            return Err(Error::Numeric(format!(
                "evaluation at x = {x} did not converge (P_max = {p_max}, diverged = {})",
                e.diverged
            )));
        }
        Ok(e)
    }

    fn artifact(&self, command: &'static str, mut body: Value, tables: Vec<Table>, pass: bool) -> Artifact {
        body["config"] = to_value(&self.info);
        body["command"] = json!(command);
        body["pass"] = json!(pass);
        Artifact { command, json: body, tables, pass }
    }
}

/// Runs one parsed invocation.
pub fn run(cli: Cli) -> Result<Artifact> {
    let Cli { common, command } = cli;
    let workers = common.workers.unwrap_or_else(default_workers).max(1);
    let mc = McConfig { seed: common.seed, workers, chunk: DEFAULT_CHUNK };
    let w = load_model(&common.model)?;
    let info = RunInfo {
        model: w.name().to_string(),
        bound: w.bound(),
        seed: mc.seed,
        workers: mc.workers,
        chunk: mc.chunk,
        precision_bits: EvalConfig::default().precision_bits,
    };
    let ctx = Ctx { w, c: common, mc, info };
    match command {
        Command::Validate => cmd_validate(&ctx),
        Command::Coeffs => cmd_coeffs(&ctx),
        Command::Eval => cmd_eval(&ctx),
        Command::Critical => cmd_critical(&ctx),
        Command::Nu => cmd_nu(&ctx),
        Command::Sample { p } => cmd_sample(&ctx, &p),
        Command::Keycheck { mc } => cmd_keycheck(&ctx, mc),
        Command::Renewal { horizon } => cmd_renewal(&ctx, horizon),
        Command::Lamperti { branch } => cmd_lamperti(&ctx, branch),
        Command::Report => cmd_report(&ctx),
    }
}

fn cmd_validate(ctx: &Ctx) -> Result<Artifact> {
    let k = ctx.w.bound();
    let window = ctx.c.pmax.unwrap_or(4 * k + 8);
    let r = validate_assumptions(&ctx.w, window)?;
    let mut t = Table::new("", &["assumption", "pass", "reason"]);
    for (name, v) in [
        ("boundedness", &r.boundedness),
        ("exchangeability", &r.exchangeability),
        ("branching", &r.branching),
        ("connectivity", &r.connectivity),
        ("flux_aperiodicity", &r.flux_aperiodicity),
    ] {
        t.push(vec![name.into(), v.pass.to_string(), v.reason.clone()]);
    }
    let pass = r.all_pass();
    Ok(ctx.artifact("validate", json!({ "report": to_value(&r) }), vec![t], pass))
}

fn cmd_coeffs(ctx: &Ctx) -> Result<Artifact> {
    let order = ctx.c.order.unwrap_or(10);
    let sol = compute_coefficients(&ctx.w, order)?;
    let p_cap = ctx.c.pmax.unwrap_or(sol.table.p_cap()).min(sol.table.p_cap());
    let mut t = Table::new("", &["n", "p", "coefficient"]);
    let mut rows = Vec::new();
    for n in 0..=order {
        for p in 0..=p_cap {
            let c = sol.table.coeff(n, p);
            if !c.is_zero() {
                t.push(vec![n.to_string(), p.to_string(), c.to_string()]);
                rows.push(json!({ "n": n, "p": p, "coefficient": c.to_string() }));
            }
        }
    }
    Ok(ctx.artifact("coeffs", json!({ "order": order, "p_cap": p_cap, "coefficients": rows }), vec![t], true))
}

fn ln_scaled(v: f64, p: usize, sigma: f64) -> f64 {
    v.ln() - p as f64 * sigma.ln()
}

fn cmd_eval(ctx: &Ctx) -> Result<Artifact> {
    let p_max = ctx.c.pmax.unwrap_or(200);
    let (rx, x) = ctx.x("critical", p_max)?;
    let e = ctx.eval(&x, p_max, true)?;
    let mut t = Table::new("", &["p", "ln_w", "ln_w_bullet", "ln_w_circ"]);
    let bullet = e.bullet_scaled.as_ref().expect("pointed evaluation");
    let circ = e.circ_scaled.as_ref().expect("pointed evaluation");
    for p in 0..=p_max {
        t.push(vec![
            p.to_string(),
            f(e.ln_w(p)),
            f(ln_scaled(bullet[p], p, e.sigma)),
            f(ln_scaled(circ[p], p, e.sigma)),
        ]);
    }
    let body = json!({
        "x": to_value(&rx),
        "p_max": p_max,
        "sigma": e.sigma,
        "converged": e.converged,
        "iterations": e.iterations,
        "residual": e.residual,
        "refined_bits": e.refined_bits,
        "ln_w": (0..=p_max).map(|p| e.ln_w(p)).collect::<Vec<_>>(),
    });
    Ok(ctx.artifact("eval", body, vec![t], true))
}

fn cmd_critical(ctx: &Ctx) -> Result<Artifact> {
    let order = ctx.c.order.unwrap_or(CRITICAL_ORDER);
    let p_max = ctx.c.pmax.unwrap_or(2000);
    let sol = compute_coefficients(&ctx.w, order)?;
    let coeffs: Vec<Rational> = (0..=order).map(|n| sol.table.coeff(n, 0)).collect();
    let ds = crate::asymptotics::domb_sykes(&coeffs, crate::asymptotics::DISCARD)?;
    let (rx, x) = ctx.x("critical", p_max)?;
    let e = ctx.eval(&x, p_max, false)?;
    let y = estimate_y_cr(&e)?;
    let beta = fit_beta(&e)?;
    let half = x.clone() / Rational::from_integer(2.into());
    let eh = ctx.eval(&half, p_max, false)?;
    let beta_half = fit_beta(&eh)?;
    let mut t = Table::new("", &["quantity", "value", "stderr"]);
    t.push(vec!["x_cr".into(), f(ds.x_cr), f(ds.x_cr_se)]);
    t.push(vec!["alpha".into(), f(ds.alpha), f(ds.alpha_se)]);
    t.push(vec!["y_cr".into(), f(y.value), f(y.stderr)]);
    t.push(vec!["beta".into(), f(beta.exponent.value), f(beta.exponent.stderr)]);
    t.push(vec!["beta_half_x".into(), f(beta_half.exponent.value), f(beta_half.exponent.stderr)]);
    let body = json!({
        "order": order,
        "p_max": p_max,
        "domb_sykes": to_value(&ds),
        "x": to_value(&rx),
        "y_cr": to_value(&y),
        "beta": to_value(&beta),
        "beta_half_x": to_value(&beta_half),
        "gamma": (beta.exponent.value - 1.0).min(2.0),
    });
    Ok(ctx.artifact("critical", body, vec![t], true))
}

fn cmd_nu(ctx: &Ctx) -> Result<Artifact> {
    let p_max = ctx.c.pmax.unwrap_or(2000);
    let depth = ctx.c.depth.unwrap_or(1000);
    let (rx, x) = ctx.x("critical", p_max)?;
    let e = ctx.eval(&x, p_max, false)?;
    let y = estimate_y_cr(&e)?;
    let m = nu(&ctx.w, &e, y.value, depth)?;
    let drift = drift_diagnostic(&m, depth);
    let cross = y_cross_check(&ctx.w, &e, depth)?;
    let mut t = Table::new("", &["q", "nu"]);
    for q in m.q_range() {
        t.push(vec![q.to_string(), f(m.nu(q))]);
    }
    let mut d = Table::new("_drift", &["m", "partial_drift"]);
    for (j, v) in drift.partial.iter().enumerate() {
        d.push(vec![j.to_string(), f(*v)]);
    }
    let body = json!({
        "x": to_value(&rx),
        "p_max": p_max,
        "depth": depth,
        "y": y.value,
        "truncated_mass": m.truncated_mass(),
        "total_mass": m.total_mass(),
        "tail": to_value(&m.tail),
        "atoms": m.atoms.len(),
        "drift": { "verdict": to_value(&drift.verdict), "slope": drift.slope, "reason": drift.reason, "median_rule_zero": drift.median_rule_zero },
        "y_cross_check": to_value(&cross),
    });
    let pass = (m.total_mass() - 1.0).abs() <= 1e-3;
    Ok(ctx.artifact("nu", body, vec![t, d], pass))
}

/// Vertex limit per sampled tree.
pub const MAX_VERTICES: usize = 50_000_000;

fn cmd_sample(ctx: &Ctx, ps: &[usize]) -> Result<Artifact> {
    let p_max = ctx.c.pmax.unwrap_or(2000);
    let samples = ctx.c.samples.unwrap_or(10_000);
    let (rx, x) = ctx.x("critical", p_max)?;
    let e = ctx.eval(&x, p_max, false)?;
    let sampler = Sampler::new(&ctx.w, &e)?;
    let mut t = Table::new("", &["p", "vol", "vol_circ", "root_degree", "height", "ties"]);
    let mut summaries = Vec::new();
    let mut pass = true;
    for &p in ps {
        let b = volume_batch(&sampler, p, samples, &ctx.mc, MAX_VERTICES)?;
        for s in &b.stats {
            t.push(vec![
                p.to_string(),
                s.vol.to_string(),
                s.vol_circ.to_string(),
                s.root_degree.to_string(),
                s.height.to_string(),
                s.ties.to_string(),
            ]);
        }
        let circ_ok = b.stats.iter().all(|s| s.vol_circ <= s.vol);
        pass &= circ_ok && b.abort_rate < 0.01;
        let mean = b.stats.iter().map(|s| s.vol as f64).sum::<f64>() / b.stats.len().max(1) as f64;
        summaries.push(json!({
            "p": p,
            "samples": samples,
            "median_vol": b.median_vol(),
            "mean_vol": mean,
            "aborts": b.aborts,
            "abort_rate": b.abort_rate,
            "vol_circ_le_vol": circ_ok,
        }));
    }
    let body = json!({ "x": to_value(&rx), "p_max": p_max, "max_vertices": MAX_VERTICES, "mc": to_value(&ctx.mc), "batches": summaries });
    Ok(ctx.artifact("sample", body, vec![t], pass))
}

fn cmd_keycheck(ctx: &Ctx, with_mc: bool) -> Result<Artifact> {
    let order = ctx.c.order.unwrap_or(10);
    let k = ctx.w.bound();
    let mut t = Table::new("", &["event", "p", "t", "order", "paths", "pass"]);
    let mut verdicts = Vec::new();
    let mut pass = true;
    for p in k..=k + 3 {
        for steps in 1..=3 {
            for (event, expect) in
                [(KeyEvent::LocallyLargest, true), (KeyEvent::PointedStrict, true), (KeyEvent::PointedAll, true)]
            {
                let v = walk::key_check_exact(&ctx.w, &ctx.w, p, steps, order, event)?;
                pass &= v.pass == expect;
                t.push(vec![
                    to_value(&event).as_str().unwrap_or("").into(),
                    p.to_string(),
                    steps.to_string(),
                    order.to_string(),
                    v.paths.to_string(),
                    v.pass.to_string(),
                ]);
                verdicts.push(to_value(&v));
            }
        }
    }
    let mutant = walk::key_check_exact(&ctx.w, &walk::perturbed(&ctx.w), k + 1, 1, order, KeyEvent::LocallyLargest)?;
    pass &= !mutant.pass;
    let mut body = json!({ "order": order, "verdicts": verdicts, "mutation": { "detected": !mutant.pass, "first_mismatch": mutant.first_mismatch } });
    let mut tables = vec![t];
    if with_mc {
        let p_max = ctx.c.pmax.unwrap_or(1000);
        let depth = ctx.c.depth.unwrap_or(200);
        let samples = ctx.c.samples.unwrap_or(100_000);
        let (rx, x) = ctx.x("critical", p_max)?;
        let e = ctx.eval(&x, p_max, false)?;
        let y = estimate_y_cr(&e)?;
        let m = nu(&ctx.w, &e, y.value, depth)?;
        let sampler = Sampler::new(&ctx.w, &e)?;
        let mut mt = Table::new("_mc", &["p", "t", "tree", "tree_se", "walk", "walk_se", "pass"]);
        let mut runs = Vec::new();
        for p in k..=k + 3 {
            for steps in 1..=3 {
                let r = walk::key_formula_mc(&sampler, &e, &m, p, steps, samples, &ctx.mc)?;
                pass &= r.pass;
                mt.push(vec![
                    p.to_string(),
                    steps.to_string(),
                    f(r.tree.value),
                    f(r.tree.stderr),
                    f(r.walk.value),
                    f(r.walk.stderr),
                    r.pass.to_string(),
                ]);
                runs.push(to_value(&r));
            }
        }
        body["mc"] = json!({ "x": to_value(&rx), "y": y.value, "p_max": p_max, "depth": depth, "runs": runs });
        tables.push(mt);
    }
    Ok(ctx.artifact("keycheck", body, tables, pass))
}

/// Step cap of ladder simulations.
pub const LADDER_CAP: u64 = 1 << 14;
/// Dyadic exponent ranges of the ladder tail fits.
pub const LADDER_HEIGHT_RANGE: (u32, u32) = (1, 8);
pub const LADDER_EPOCH_RANGE: (u32, u32) = (3, 13);

fn cmd_renewal(ctx: &Ctx, horizon: usize) -> Result<Artifact> {
    let p_max = ctx.c.pmax.unwrap_or(2000);
    let depth = ctx.c.depth.unwrap_or(1000);
    let samples = ctx.c.samples.unwrap_or(1_000_000);
    let (rx, x) = ctx.x("critical", p_max)?;
    let e = ctx.eval(&x, p_max, false)?;
    let y = estimate_y_cr(&e)?;
    let m = nu(&ctx.w, &e, y.value, depth)?;
    let half = nu(&ctx.w, &e, y.value, depth / 2)?;
    let sens = walk::renewal_sensitivity(&m, &half, horizon)?;
    let step = walk::StepLaw::from_measure(&m)?;
    let lad = walk::ladder_mc(&step, samples, LADDER_CAP, &ctx.mc);
    let top = lad.censored_at.iter().copied().max().unwrap_or(0).max(horizon);
    let r = walk::renewal(&m, top)?;
    let tails = walk::ladder_tails(&lad, Some(&r), LADDER_HEIGHT_RANGE, LADDER_EPOCH_RANGE)?;
    let mut t = Table::new("", &["p", "h_pre", "h_ren", "descending_tail"]);
    for p in 0..=horizon {
        t.push(vec![p.to_string(), f(r.h_pre[p]), f(r.h_ren[p]), f(r.descending_tail(p))]);
    }
    let mut lt = Table::new("_ladder", &["kind", "x", "tail"]);
    for (g, v) in tails.height.grid.iter().zip(&tails.height.tail) {
        lt.push(vec!["height".into(), f(*g), f(*v)]);
    }
    for (g, v) in tails.epoch.grid.iter().zip(&tails.epoch.tail) {
        lt.push(vec!["epoch".into(), f(*g), f(*v)]);
    }
    let bracket = walk::sqrt_bracket(|p| r.h_pre[p], 10.min(horizon), horizon);
    let body = json!({
        "x": to_value(&rx),
        "y": y.value,
        "p_max": p_max,
        "depth": depth,
        "horizon": horizon,
        "ascending": r.ascending,
        "miss": r.miss,
        "wiener_hopf": { "iterations": r.iterations, "residual": r.residual },
        "h_pre_sqrt_bracket": bracket,
        "sensitivity": to_value(&sens),
        "ladder": { "cap": LADDER_CAP, "mc": to_value(&ctx.mc), "tails": to_value(&tails) },
    });
    Ok(ctx.artifact("renewal", body, vec![t, lt], true))
}

fn cmd_lamperti(ctx: &Ctx, branch: Option<Branch>) -> Result<Artifact> {
    let tol = ctx.c.tol.unwrap_or(1e-9);
    let branches = match branch {
        Some(b) => vec![b],
        None => vec![Branch::Subordinator, Branch::Compensated],
    };
    let mut t = Table::new("", &["branch", "beta", "psi"]);
    let mut certs = Vec::new();
    let mut pass = true;
    for b in branches {
        let c = lamperti::find_root(b, tol)?;
        let target = match b {
            Branch::Subordinator => 1.5,
            Branch::Compensated => 2.5,
        };
        pass &= (c.root - target).abs() <= 1e-6 && c.sign_changes == 1;
        for (beta, v) in &c.scan {
            t.push(vec![to_value(&b).as_str().unwrap_or("").into(), f(*beta), f(*v)]);
        }
        let tilt = lamperti::tilt_proportionality(target, 999, 1e-10)?;
        pass &= tilt.pass;
        certs.push(json!({
            "branch": to_value(&b),
            "bracket": c.bracket,
            "root": c.root,
            "tolerance": c.tolerance,
            "psi_at_root": c.psi_at_root,
            "grid_step": c.grid_step,
            "sign_changes": c.sign_changes,
            "tilt": to_value(&tilt),
        }));
    }
    let mut closed = Vec::new();
    for z in [0.0, 0.5, 1.0, 1.5] {
        let c = lamperti::lk_closed_form_check(2.5, z, 1e-8)?;
        pass &= c.pass;
        closed.push(to_value(&c));
    }
    Ok(ctx.artifact("lamperti", json!({ "certificates": certs, "closed_form": closed }), vec![t], pass))
}

fn cmd_report(ctx: &Ctx) -> Result<Artifact> {
    let results = report::run_all(&ctx.mc, |c| eprintln!("{}", c.line()));
    let mut t = Table::new("", &["criterion", "name", "pass", "detail"]);
    for c in &results {
        t.push(vec![c.id.to_string(), c.name.clone(), c.pass.to_string(), c.detail.clone()]);
    }
    let pass = results.iter().all(|c| c.pass);
    Ok(ctx.artifact("report", json!({ "criteria": to_value(&results) }), vec![t], pass))
}

/// Writes the artifact; returns the text for stdout.
pub fn emit(a: &Artifact, format: Format, out: Option<&PathBuf>) -> Result<String> {
    let json_text = serde_json::to_string_pretty(&a.json).expect("json values serialize") + "\n";
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{}.json", a.command)), &json_text)?;
        for t in &a.tables {
            std::fs::write(dir.join(format!("{}{}.csv", a.command, t.suffix)), t.to_csv()?)?;
        }
    }
    match format {
        Format::Json => Ok(json_text),
        Format::Csv => a.tables.first().map_or(Ok(String::new()), Table::to_csv),
    }
}

fn error_kind(e: &Error) -> (&'static str, i32) {
    match e {
        Error::Model(_) => ("model", 2),
        Error::Argument(_) => ("argument", 2),
        Error::Parse(_) => ("parse", 2),
        Error::Io(_) => ("io", 2),
        Error::Budget(_) => ("budget", 2),
        Error::Numeric(_) => ("numeric", 1),
    }
}

fn error_json(kind: &str, message: &str) -> String {
    serde_json::to_string(&json!({ "error": { "kind": kind, "message": message } })).expect("json")
}

/// Entry point; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            eprintln!("{}", error_json("usage", e.to_string().trim()));
            return 2;
        }
    };
    let format = cli.common.format;
    let out = cli.common.out.clone();
    let result = run(cli).and_then(|a| emit(&a, format, out.as_ref()).map(|text| (a.pass, text)));
    match result {
        Ok((pass, text)) => {
            print!("{text}");
            if pass {
                0
            } else {
                1
            }
        }
        Err(e) => {
            let (kind, code) = error_kind(&e);
            let msg = error_json(kind, &e.to_string());
            eprintln!("{msg}");
            if let Some(dir) = out {
                // partial artifacts stay on disk; the error file flags them
                let _ = std::fs::create_dir_all(&dir).and_then(|_| std::fs::write(dir.join("error.json"), &msg));
            }
            code
        }
    }
}
