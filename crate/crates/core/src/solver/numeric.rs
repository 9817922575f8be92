//! Minimal nonnegative solution of the flux-truncated system `W = xQ(W)`.
//!
//! The unknowns are stored in a rescaled basis `V_p = sigma^p W_p` with
//! `sigma` close to `y_cr`, which strips the exponential trend and keeps all
//! components within a few decades. In that basis the entry weights become
//! `w·sigma^{c - sum s}` and the system keeps its form.
//!
//! Newton's method from `0` is monotone for positive polynomial systems: its
//! iterates increase towards the least fixed point and the Jacobian `J` stays
//! below `J(V*)`, so `I - J` is a nonsingular M-matrix with positive pivots as
//! long as a fixed point exists. `J_{p,q}` vanishes for `q > p + K`, hence
//! elimination without pivoting costs `O(P^2 K)`. A non-positive pivot means
//! the spectral radius reached 1, which is reported as divergence.
//!
//! The `f64` solution is then refined: residuals are evaluated exactly in
//! big-integer fixed point with `precision_bits` fractional bits, and the
//! corrections are solved with the `f64` factorization.

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{FromPrimitive, One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::model::{Rational, WeightFunction};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Newton,
    Kleene,
}

#[derive(Clone, Debug)]
pub struct EvalConfig {
    pub p_max: usize,
    pub tol: f64,
    pub precision_bits: u32,
    /// Divergence bound on the rescaled values.
    pub blowup: f64,
    pub max_iter: usize,
    pub method: Method,
    /// Fixed rescaling; estimated by staged pre-solves when absent.
    pub sigma: Option<f64>,
    /// Also solve the linear systems for `W^•` and `W^°`.
    pub pointed: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            p_max: 200,
            tol: 1e-13,
            precision_bits: 256,
            blowup: 1e12,
            max_iter: 400,
            method: Method::Newton,
            sigma: None,
            pointed: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct NumericEvaluation {
    pub x: Rational,
    pub p_max: usize,
    pub bound: usize,
    pub sigma: f64,
    /// `V_p = sigma^p W_p`.
    pub scaled: Vec<f64>,
    pub bullet_scaled: Option<Vec<f64>>,
    pub circ_scaled: Option<Vec<f64>>,
    pub converged: bool,
    pub diverged: bool,
    pub iterations: usize,
    /// Max relative residual `|xQ(W)_p - W_p| / W_p` after refinement.
    pub residual: f64,
    pub precision_bits: u32,
    /// `-log2` of the final fixed-point residual relative to `max V`.
    pub refined_bits: f64,
    pub method: Method,
}

impl NumericEvaluation {
    pub fn x_f64(&self) -> f64 {
        self.x.to_f64().unwrap_or(f64::NAN)
    }

    /// `ln W_p`, or `-inf` for a zero component.
    pub fn ln_w(&self, p: usize) -> f64 {
        self.scaled[p].ln() - p as f64 * self.sigma.ln()
    }

    /// `W_p` in plain floating point (may overflow for large `p`).
    pub fn w(&self, p: usize) -> f64 {
        self.ln_w(p).exp()
    }

    /// `y^p W_p`.
    pub fn tilde(&self, p: usize, y: f64) -> f64 {
        rescale(self.scaled[p], p, y / self.sigma)
    }

    pub fn tilde_bullet(&self, p: usize, y: f64) -> Option<f64> {
        self.bullet_scaled.as_ref().map(|v| rescale(v[p], p, y / self.sigma))
    }

    pub fn tilde_circ(&self, p: usize, y: f64) -> Option<f64> {
        self.circ_scaled.as_ref().map(|v| rescale(v[p], p, y / self.sigma))
    }

    /// `W_{p-1}/W_p` for `p = 1..=P`.
    pub fn ratios(&self) -> Vec<f64> {
        (1..=self.p_max).map(|p| self.sigma * self.scaled[p - 1] / self.scaled[p]).collect()
    }
}

fn rescale(v: f64, p: usize, factor: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        (v.ln() + p as f64 * factor.ln()).exp()
    }
}

struct ScaledMono {
    shifts: Vec<usize>,
    /// indexed by `c`
    a: Vec<f64>,
    a_hp: Vec<BigInt>,
}

struct ScaledSystem {
    n: usize,
    kb: usize,
    monos: Vec<ScaledMono>,
    prec: u32,
}

/// Truncated product `prod_j Δ^{(s_j)} v`, entries `0..n`.
fn shifted_product(v: &[f64], shifts: &[usize], n: usize) -> Vec<f64> {
    let mut acc = vec![0.0; n];
    acc[0] = 1.0;
    let mut acc_len = 1;
    for &s in shifts {
        let b: &[f64] = if s < v.len() { &v[s..] } else { &[] };
        let mut out = vec![0.0; n];
        for (i, &x) in acc.iter().enumerate().take(acc_len) {
            if x == 0.0 {
                continue;
            }
            for (j, &y) in b.iter().enumerate().take(n - i) {
                out[i + j] += x * y;
            }
        }
        acc = out;
        acc_len = n;
    }
    acc
}

fn shifted_product_hp(v: &[BigInt], shifts: &[usize], n: usize, prec: u32) -> Vec<BigInt> {
    let mut acc = vec![BigInt::zero(); n];
    acc[0] = BigInt::one() << prec;
    let mut first = true;
    for (idx, &s) in shifts.iter().enumerate() {
        let b: &[BigInt] = if s < v.len() { &v[s..] } else { &[] };
        if first {
            acc = vec![BigInt::zero(); n];
            acc[..b.len().min(n)].clone_from_slice(&b[..b.len().min(n)]);
            first = false;
            continue;
        }
        let square = idx == 1 && shifts[0] == s;
        let mut out = vec![BigInt::zero(); n];
        for (p, slot) in out.iter_mut().enumerate() {
            let mut sum = BigInt::zero();
            if square {
                for i in 0..=p / 2 {
                    let j = p - i;
                    if j >= b.len() {
                        continue;
                    }
                    let t = &b[i] * &b[j];
                    if i == j {
                        sum += t;
                    } else {
                        sum += t << 1;
                    }
                }
            } else {
                for i in 0..=p {
                    if p - i < b.len() && !acc[i].is_zero() {
                        sum += &acc[i] * &b[p - i];
                    }
                }
            }
            *slot = sum >> prec;
        }
        acc = out;
    }
    acc
}

fn to_fixed(r: &BigRational, prec: u32) -> BigInt {
    let scaled = r * BigRational::from_integer(BigInt::one() << prec);
    scaled.round().to_integer()
}

impl ScaledSystem {
    fn new(w: &WeightFunction, x: &Rational, sigma: f64, p_max: usize, prec: u32) -> Result<Self> {
        let kb = w.bound();
        let sig = BigRational::from_f64(sigma).ok_or_else(|| Error::Numeric("invalid rescaling".into()))?;
        let monos = w
            .monomials()
            .into_iter()
            .map(|m| {
                let total_shift: i64 = m.shifts.iter().map(|&s| s as i64).sum();
                let mut a = vec![0.0; kb + 1];
                let mut a_hp = vec![BigInt::zero(); kb + 1];
                for (c, coef) in &m.coeffs {
                    let e = *c as i64 - total_shift;
                    // Ratio::pow accepts negative exponents
                    let exact = x * coef * sig.pow(e as i32);
                    a[*c] = exact.to_f64().unwrap_or(f64::INFINITY);
                    a_hp[*c] = to_fixed(&exact, prec);
                }
                ScaledMono { shifts: m.shifts, a, a_hp }
            })
            .collect();
        Ok(Self { n: p_max + 1, kb, monos, prec })
    }

    fn rhs(&self, v: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut out = vec![0.0; n];
        for m in &self.monos {
            let prod = shifted_product(v, &m.shifts, n);
            for (c, &a) in m.a.iter().enumerate() {
                if a == 0.0 {
                    continue;
                }
                for p in c..n {
                    out[p] += a * prod[p - c];
                }
            }
        }
        out
    }

    fn rhs_hp(&self, v: &[BigInt]) -> Vec<BigInt> {
        let n = self.n;
        let mut out = vec![BigInt::zero(); n];
        for m in &self.monos {
            let prod = shifted_product_hp(v, &m.shifts, n, self.prec);
            for (c, a) in m.a_hp.iter().enumerate() {
                if a.is_zero() {
                    continue;
                }
                for p in c..n {
                    if !prod[p - c].is_zero() {
                        out[p] += (a * &prod[p - c]) >> self.prec;
                    }
                }
            }
        }
        out
    }

    /// Dense `I - J(v)`, row-major.
    fn system_matrix(&self, v: &[f64]) -> Vec<f64> {
        let (n, kb) = (self.n, self.kb);
        // t[s][d + kb] = sum over factors with shift s of h[d + s]
        let width = n + kb;
        let mut t = vec![vec![0.0; width]; kb + 1];
        for m in &self.monos {
            let d = m.shifts.len();
            let mut seen: Vec<usize> = Vec::new();
            for j in 0..d {
                // identical shifts share a leave-one-out product
                if seen.contains(&m.shifts[j]) {
                    continue;
                }
                seen.push(m.shifts[j]);
                let mult = m.shifts.iter().filter(|&&s| s == m.shifts[j]).count() as f64;
                let mut rest = m.shifts.clone();
                rest.remove(j);
                let e = shifted_product(v, &rest, n);
                let s = m.shifts[j];
                // h[r] = sum_c a_c e[r - c]; J_{p,q} += h[p - q + s]
                for (c, &a) in m.a.iter().enumerate() {
                    if a == 0.0 {
                        continue;
                    }
                    for (r0, &ev) in e.iter().enumerate() {
                        let r = r0 + c;
                        // d = r - s ranges over -kb..n
                        let idx = r as isize - s as isize + kb as isize;
                        if idx >= 0 && (idx as usize) < width {
                            t[s][idx as usize] += mult * a * ev;
                        }
                    }
                }
            }
        }
        // cumulative over s <= q
        for s in 1..=kb {
            let (lo, hi) = t.split_at_mut(s);
            for (x, y) in hi[0].iter_mut().zip(&lo[s - 1]) {
                *x += *y;
            }
        }
        let mut a = vec![0.0; n * n];
        for p in 0..n {
            let row = &mut a[p * n..(p + 1) * n];
            let q_hi = (p + kb).min(n - 1);
            for (q, slot) in row.iter_mut().enumerate().take(q_hi + 1) {
                let tt = &t[q.min(kb)];
                let idx = p + kb - q;
                *slot = -tt[idx];
            }
            row[p] += 1.0;
        }
        a
    }
}

/// In-place LU without pivoting of a matrix with upper bandwidth `kb`.
struct Lu {
    n: usize,
    kb: usize,
    a: Vec<f64>,
}

impl Lu {
    fn factor(mut a: Vec<f64>, n: usize, kb: usize) -> std::result::Result<Self, usize> {
        for k in 0..n {
            let piv = a[k * n + k];
            if !(piv > 0.0 && piv.is_finite()) {
                return Err(k);
            }
            let hi = (k + kb).min(n - 1);
            let (top, bottom) = a.split_at_mut((k + 1) * n);
            let pivot_row = &top[k * n + k + 1..k * n + hi + 1];
            for i in (k + 1)..n {
                let row = &mut bottom[(i - k - 1) * n..(i - k) * n];
                if row[k] == 0.0 {
                    continue;
                }
                let l = row[k] / piv;
                row[k] = l;
                for (x, &u) in row[k + 1..=hi].iter_mut().zip(pivot_row) {
                    *x -= l * u;
                }
            }
        }
        Ok(Self { n, kb, a })
    }

    fn solve(&self, b: &mut [f64]) {
        let n = self.n;
        for i in 1..n {
            let row = &self.a[i * n..i * n + i];
            let s: f64 = row.iter().zip(&b[..i]).map(|(l, y)| l * y).sum();
            b[i] -= s;
        }
        for i in (0..n).rev() {
            let hi = (i + self.kb).min(n - 1);
            let mut s = b[i];
            for j in i + 1..=hi {
                s -= self.a[i * n + j] * b[j];
            }
            b[i] = s / self.a[i * n + i];
        }
    }
}

const STAGNATION: f64 = 1e-6;

struct Solve {
    v: Vec<f64>,
    converged: bool,
    diverged: bool,
    iterations: usize,
}

fn newton(sys: &ScaledSystem, cfg: &EvalConfig) -> Solve {
    let n = sys.n;
    let mut v = vec![0.0; n];
    let mut prev = f64::INFINITY;
    for it in 1..=cfg.max_iter {
        let r = sys.rhs(&v);
        let mut delta: Vec<f64> = r.iter().zip(&v).map(|(a, b)| a - b).collect();
        let lu = match Lu::factor(sys.system_matrix(&v), n, sys.kb) {
            Ok(lu) => lu,
            Err(_) => return Solve { v, converged: false, diverged: true, iterations: it },
        };
        lu.solve(&mut delta);
        let mut step: f64 = 0.0;
        for (x, d) in v.iter_mut().zip(&delta) {
            *x += d;
            step = step.max(d.abs() / x.abs().max(f64::MIN_POSITIVE));
        }
        if v.iter().any(|x| !x.is_finite() || *x > cfg.blowup || *x < -cfg.tol) {
            return Solve { v, converged: false, diverged: true, iterations: it };
        }
        // near criticality f64 round-off sets a floor well above `tol`;
        // stagnation below STAGNATION hands over to the fixed-point refinement
        if step <= cfg.tol || (step <= STAGNATION && step > 0.5 * prev) {
            return Solve { v, converged: true, diverged: false, iterations: it };
        }
        prev = step;
    }
    Solve { v, converged: false, diverged: false, iterations: cfg.max_iter }
}

fn kleene(sys: &ScaledSystem, cfg: &EvalConfig) -> Solve {
    let mut v = vec![0.0; sys.n];
    for it in 1..=cfg.max_iter {
        let nv = sys.rhs(&v);
        let mut change: f64 = 0.0;
        for (a, b) in nv.iter().zip(&v) {
            assert!(*a >= *b * (1.0 - 1e-12), "Kleene iterates must be nondecreasing");
            change = change.max((a - b).abs());
        }
        v = nv;
        if v.iter().any(|x| !x.is_finite() || *x > cfg.blowup) {
            return Solve { v, converged: false, diverged: true, iterations: it };
        }
        if change < cfg.tol {
            return Solve { v, converged: true, diverged: false, iterations: it };
        }
    }
    Solve { v, converged: false, diverged: false, iterations: cfg.max_iter }
}

/// Extrapolates `W_p / W_{p+1}` (in units of the current rescaling) to `p = inf`
/// by a least-squares line against `1/p` over `[P/4, P/2]`.
fn ratio_limit(v: &[f64]) -> Option<f64> {
    let p_max = v.len() - 1;
    let (lo, hi) = ((p_max / 4).max(1), p_max / 2);
    let pts: Vec<(f64, f64)> = (lo..hi)
        .filter(|&p| v[p] > 0.0 && v[p + 1] > 0.0)
        .map(|p| (1.0 / p as f64, v[p] / v[p + 1]))
        .collect();
    if pts.len() < 4 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let intercept = my - sxy / sxx * mx;
    (intercept.is_finite() && intercept > 0.0).then_some(intercept)
}

fn choose_sigma(w: &WeightFunction, x: &Rational, cfg: &EvalConfig) -> Result<Option<f64>> {
    let mut sigma = 1.0;
    for stage in [64usize, 256] {
        if stage >= cfg.p_max {
            break;
        }
        let sys = ScaledSystem::new(w, x, sigma, stage, 64)?;
        // raw values grow like y_cr^{-p} here; only the pivot test detects divergence
        let s = newton(&sys, &EvalConfig { p_max: stage, tol: 1e-12, blowup: f64::MAX, ..cfg.clone() });
        if !s.converged {
            return Ok(None);
        }
        match ratio_limit(&s.v) {
            Some(r) => sigma *= r,
            None => break,
        }
    }
    Ok(Some(sigma))
}

/// Solves the truncated system at `x`. Divergence is reported through the
/// flags, never as an error.
pub fn evaluate(w: &WeightFunction, x: &Rational, cfg: &EvalConfig) -> Result<NumericEvaluation> {
    if x.is_negative() {
        return Err(Error::Argument("x must be nonnegative".into()));
    }
    if cfg.p_max < 4 * w.bound() {
        return Err(Error::Argument(format!("p_max {} below 4K = {}", cfg.p_max, 4 * w.bound())));
    }
    if !(cfg.tol > 0.0) {
        return Err(Error::Argument("tol must be positive".into()));
    }
    if !(53..=1000).contains(&cfg.precision_bits) {
        return Err(Error::Argument("precision_bits must lie in 53..=1000".into()));
    }
    let sigma = match cfg.sigma {
        Some(s) => Some(s),
        None if cfg.method == Method::Newton => choose_sigma(w, x, cfg)?,
        None => Some(1.0),
    };
    let n = cfg.p_max + 1;
    let Some(sigma) = sigma else {
        return Ok(diverged_eval(x, cfg, w.bound(), 1.0, 0));
    };
    let sys = ScaledSystem::new(w, x, sigma, cfg.p_max, cfg.precision_bits)?;
    let solve = match cfg.method {
        Method::Newton => newton(&sys, cfg),
        Method::Kleene => kleene(&sys, cfg),
    };
    if !solve.converged {
        let mut e = diverged_eval(x, cfg, w.bound(), sigma, solve.iterations);
        e.diverged = solve.diverged;
        e.scaled = solve.v;
        return Ok(e);
    }
    let (v, refined_bits) = refine(&sys, solve.v)?;
    let lu = Lu::factor(sys.system_matrix(&v), n, sys.kb)
        .map_err(|k| Error::Numeric(format!("non-positive pivot {k} at the converged point")))?;
    let r = sys.rhs(&v);
    let residual = r
        .iter()
        .zip(&v)
        .filter(|(_, b)| **b > 0.0)
        .map(|(a, b)| ((a - b) / b).abs())
        .fold(0.0, f64::max);
    let (bullet, circ) = if cfg.pointed {
        let mut b = v.clone();
        lu.solve(&mut b);
        let mut c = vec![0.0; n];
        c[sys.kb] = v[sys.kb];
        lu.solve(&mut c);
        (Some(b), Some(c))
    } else {
        (None, None)
    };
    Ok(NumericEvaluation {
        x: x.clone(),
        p_max: cfg.p_max,
        bound: w.bound(),
        sigma,
        scaled: v,
        bullet_scaled: bullet,
        circ_scaled: circ,
        converged: true,
        diverged: false,
        iterations: solve.iterations,
        residual,
        precision_bits: cfg.precision_bits,
        refined_bits,
        method: cfg.method,
    })
}

fn diverged_eval(x: &Rational, cfg: &EvalConfig, bound: usize, sigma: f64, iterations: usize) -> NumericEvaluation {
    NumericEvaluation {
        x: x.clone(),
        p_max: cfg.p_max,
        bound,
        sigma,
        scaled: vec![0.0; cfg.p_max + 1],
        bullet_scaled: None,
        circ_scaled: None,
        converged: false,
        diverged: true,
        iterations,
        residual: f64::INFINITY,
        precision_bits: cfg.precision_bits,
        refined_bits: 0.0,
        method: cfg.method,
    }
}

/// Mixed-precision iterative refinement; returns the rounded values and the
/// achieved residual in bits relative to `max V`.
fn refine(sys: &ScaledSystem, v: Vec<f64>) -> Result<(Vec<f64>, f64)> {
    let prec = sys.prec;
    let n = sys.n;
    let unit = 2f64.powi(prec as i32);
    let vmax = v.iter().cloned().fold(0.0, f64::max);
    if vmax == 0.0 {
        return Ok((v, f64::from(prec)));
    }
    let mut vh: Vec<BigInt> = v.iter().map(|x| BigInt::from_f64(x * unit).unwrap_or_default()).collect();
    let lu = Lu::factor(sys.system_matrix(&v), n, sys.kb)
        .map_err(|k| Error::Numeric(format!("non-positive pivot {k} during refinement")))?;
    let mut best = f64::INFINITY;
    for _ in 0..24 {
        let r = sys.rhs_hp(&vh);
        let mut res: Vec<f64> = r.iter().zip(&vh).map(|(a, b)| (a - b).to_f64().unwrap_or(0.0) / unit).collect();
        let rmax = res.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        // converged to the fixed-point resolution, or stagnated
        if rmax * unit <= 64.0 * n as f64 || rmax >= best * 0.5 {
            best = best.min(rmax);
            break;
        }
        best = rmax;
        lu.solve(&mut res);
        for (x, d) in vh.iter_mut().zip(&res) {
            *x += BigInt::from_f64(d * unit).unwrap_or_default();
        }
    }
    let out: Vec<f64> = vh.iter().map(|x| x.to_f64().unwrap_or(0.0) / unit).collect();
    let bits = if best == 0.0 { f64::from(prec) } else { -(best / vmax).log2() };
    Ok((out, bits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::rat;
    use crate::models::planar_maps;
    use crate::solver::compute_coefficients;

    #[test]
    fn zero_point_is_trivial() {
        let e = evaluate(&planar_maps(), &rat(0, 1), &EvalConfig { p_max: 16, ..Default::default() }).unwrap();
        assert!(e.converged);
        assert!(e.scaled.iter().all(|v| *v == 0.0));
        assert_eq!(e.iterations, 1);
    }

    #[test]
    fn matches_truncated_series_below_criticality() {
        let w = planar_maps();
        let x = rat(1, 24);
        let e = evaluate(&w, &x, &EvalConfig { p_max: 200, ..Default::default() }).unwrap();
        assert!(e.converged && e.refined_bits > 150.0, "{e:?}");
        let s = compute_coefficients(&w, 60).unwrap();
        let series = s.table.get(0).eval(&x).to_f64().unwrap();
        // coefficient tail below 2^-55 relative; truncation in flux is far below that at p = 200
        assert!((e.w(0) - series).abs() < 1e-12 * series, "{} vs {}", e.w(0), series);
        for p in 1..6 {
            let sp = s.table.get(p).eval(&x).to_f64().unwrap();
            assert!((e.w(p) - sp).abs() < 1e-10 * sp);
        }
    }

    #[test]
    fn above_criticality_diverges() {
        let e = evaluate(&planar_maps(), &rat(1, 6), &EvalConfig { p_max: 100, ..Default::default() }).unwrap();
        assert!(e.diverged && !e.converged);
    }

    #[test]
    fn kleene_agrees_with_newton() {
        let w = planar_maps();
        let x = rat(1, 30);
        let cfg = EvalConfig { p_max: 40, sigma: Some(1.0), ..Default::default() };
        let a = evaluate(&w, &x, &cfg).unwrap();
        let b = evaluate(&w, &x, &EvalConfig { method: Method::Kleene, max_iter: 100_000, tol: 1e-15, ..cfg }).unwrap();
        assert!(a.converged && b.converged);
        for p in 0..=40 {
            assert!((a.scaled[p] - b.scaled[p]).abs() <= 1e-9 * a.scaled[p].max(1e-300));
        }
    }

    #[test]
    fn pointed_linear_systems_match_series() {
        let w = planar_maps();
        let x = rat(1, 24);
        let e = evaluate(&w, &x, &EvalConfig { p_max: 120, pointed: true, ..Default::default() }).unwrap();
        let s = crate::solver::compute_pointed(&compute_coefficients(&w, 40).unwrap()).unwrap();
        for p in 0..4 {
            let b = s.pointed_bullet.as_ref().unwrap().get(p).eval(&x).to_f64().unwrap();
            let c = s.pointed_circ.as_ref().unwrap().get(p).eval(&x).to_f64().unwrap();
            let eb = e.tilde_bullet(p, 1.0).unwrap();
            let ec = e.tilde_circ(p, 1.0).unwrap();
            assert!((eb - b).abs() < 1e-6 * b, "{eb} {b}");
            assert!((ec - c).abs() < 1e-6 * c, "{ec} {c}");
        }
    }
}
