//! Critical points and exponents.
//!
//! Coefficients `a_n ~ C mu^n n^{-alpha}` give ratios `a_n / a_{n-1} = mu (1 -
//! alpha/n + O(n^-2))`: a least-squares line against `1/n` has intercept
//! `1/x_cr` and slope `-alpha/x_cr` (Domb–Sykes). Flux sequences `W_p ~ C
//! y^{-p} p^{-beta}` are fitted on log-ratios, `ln(W_{p-1}/W_p) = ln y - beta
//! ln(1 - 1/p)`, which is exact for a pure power law.

use num_traits::{ToPrimitive, Zero};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{Rational, WeightFunction};
use crate::solver::{evaluate, EvalConfig, NumericEvaluation};

#[derive(Clone, Debug, Serialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    pub intercept_se: f64,
    pub slope_se: f64,
    pub r2: f64,
    pub points: usize,
}

/// Ordinary least squares `y = a + b t` with standard errors from the
/// residual variance.
pub fn ols(pts: &[(f64, f64)]) -> Result<LinearFit> {
    let n = pts.len();
    if n < 3 {
        return Err(Error::Numeric(format!("{n} points are too few for a fit")));
    }
    let nf = n as f64;
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / nf;
    let stt: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    let sty: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if stt == 0.0 {
        return Err(Error::Numeric("degenerate abscissae".into()));
    }
    let slope = sty / stt;
    let intercept = my - slope * mt;
    let sse: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let s2 = sse / (nf - 2.0);
    let slope_se = (s2 / stt).sqrt();
    let intercept_se = (s2 * (1.0 / nf + mt * mt / stt)).sqrt();
    let r2 = if syy == 0.0 { 1.0 } else { 1.0 - sse / syy };
    Ok(LinearFit { intercept, slope, intercept_se, slope_se, r2, points: n })
}

/// `(n, a_n / a_{n-1})` for consecutive positive coefficients, computed
/// exactly before rounding.
pub fn coefficient_ratios(coeffs: &[Rational]) -> Vec<(usize, f64)> {
    (1..coeffs.len())
        .filter(|&n| coeffs[n] > Rational::zero() && coeffs[n - 1] > Rational::zero())
        .filter_map(|n| (&coeffs[n] / &coeffs[n - 1]).to_f64().map(|r| (n, r)))
        .collect()
}

/// Period > 1 signature: zero coefficients inside the window, or first
/// differences of the ratios alternating in sign on more than a quarter of
/// consecutive pairs.
pub fn oscillation_detected(coeffs: &[Rational], lo: usize) -> bool {
    if coeffs[lo..].iter().any(|c| c.is_zero()) {
        return true;
    }
    let r: Vec<f64> = coefficient_ratios(coeffs).into_iter().filter(|&(n, _)| n > lo).map(|p| p.1).collect();
    if r.len() < 4 {
        return false;
    }
    let d: Vec<f64> = r.windows(2).map(|w| w[1] - w[0]).collect();
    let flips = d.windows(2).filter(|w| w[0] * w[1] < 0.0).count();
    flips * 4 > d.len()
}

#[derive(Clone, Debug, Serialize)]
pub struct DombSykes {
    pub fit: LinearFit,
    pub window: (usize, usize),
    pub x_cr: f64,
    pub x_cr_se: f64,
    pub alpha: f64,
    pub alpha_se: f64,
}

/// Default share of leading indices left out of fits.
pub const DISCARD: f64 = 0.2;

/// Domb–Sykes fit of `a_n/a_{n-1}` against `1/n` over `n > discard·N`.
pub fn domb_sykes(coeffs: &[Rational], discard: f64) -> Result<DombSykes> {
    let big_n = coeffs.len() - 1;
    let lo = ((discard * big_n as f64).floor() as usize).max(1);
    if oscillation_detected(coeffs, lo) {
        return Err(Error::Numeric("inconclusive: coefficient ratios oscillate (period > 1 suspected)".into()));
    }
    let pts: Vec<(f64, f64)> =
        coefficient_ratios(coeffs).into_iter().filter(|&(n, _)| n > lo).map(|(n, r)| (1.0 / n as f64, r)).collect();
    let fit = ols(&pts)?;
    let mu = fit.intercept;
    let alpha = -fit.slope / mu;
    // first-order error propagation, ignoring the intercept/slope covariance
    let alpha_se = alpha.abs() * ((fit.slope_se / fit.slope).powi(2) + (fit.intercept_se / mu).powi(2)).sqrt();
    Ok(DombSykes {
        window: (lo + 1, big_n),
        x_cr: 1.0 / mu,
        x_cr_se: fit.intercept_se / (mu * mu),
        alpha,
        alpha_se,
        fit,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CriticalMethod {
    RatioExtrapolation,
    Bisection,
}

#[derive(Clone, Debug, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CriticalEstimate {
    pub x_cr_lo: f64,
    pub x_cr_hi: f64,
    pub method: CriticalMethod,
    pub y_cr: Option<Estimate>,
    pub beta: Option<Estimate>,
    pub alpha: Option<Estimate>,
    /// `min(beta - 1, 2)`.
    pub gamma: Option<f64>,
    pub window: (usize, usize),
}

/// Ratio method; the interval is the fit estimate `± 3` standard errors.
pub fn estimate_x_cr(coeffs: &[Rational]) -> Result<CriticalEstimate> {
    let positive = coeffs.iter().filter(|c| **c > Rational::zero()).count();
    if positive < 50 {
        return Err(Error::Argument(format!("ratio method needs 50 positive coefficients, got {positive}")));
    }
    let ds = domb_sykes(coeffs, DISCARD)?;
    Ok(CriticalEstimate {
        x_cr_lo: ds.x_cr - 3.0 * ds.x_cr_se,
        x_cr_hi: ds.x_cr + 3.0 * ds.x_cr_se,
        method: CriticalMethod::RatioExtrapolation,
        y_cr: None,
        beta: None,
        alpha: Some(Estimate { value: ds.alpha, stderr: ds.alpha_se }),
        gamma: None,
        window: ds.window,
    })
}

/// Bisection on convergence of the truncated system. The truncated critical
/// point lies above `x_cr`, so the bracket is for the truncated system.
pub fn estimate_x_cr_bisection(
    w: &WeightFunction,
    lo: &Rational,
    hi: &Rational,
    cfg: &EvalConfig,
    steps: usize,
) -> Result<CriticalEstimate> {
    let converges = |x: &Rational| -> Result<bool> { Ok(evaluate(w, x, cfg)?.converged) };
    let (mut lo, mut hi) = (lo.clone(), hi.clone());
    if !converges(&lo)? || converges(&hi)? {
        return Err(Error::Numeric("bisection needs a convergent lower and a divergent upper end".into()));
    }
    let two = Rational::from_integer(2.into());
    for _ in 0..steps {
        let mid = (&lo + &hi) / &two;
        if converges(&mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(CriticalEstimate {
        x_cr_lo: lo.to_f64().unwrap_or(f64::NAN),
        x_cr_hi: hi.to_f64().unwrap_or(f64::NAN),
        method: CriticalMethod::Bisection,
        y_cr: None,
        beta: None,
        alpha: None,
        gamma: None,
        window: (0, cfg.p_max),
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct PowerFit {
    /// Exponential rate `y` (radius in the flux variable).
    pub y: Estimate,
    /// Polynomial exponent.
    pub exponent: Estimate,
    pub r2: f64,
    pub window: (usize, usize),
}

/// Fits `s_p ~ C y^{-p} p^{-exponent}` over `p ∈ [lo, hi]` using
/// `ln(s_{p-1}/s_p) = ln y + exponent·(-ln(1 - 1/p))`. `s` may be given in
/// any rescaled basis `sigma^p s_p`; pass that `sigma` to undo it.
pub fn fit_power_law(s: &[f64], sigma: f64, lo: usize, hi: usize) -> Result<PowerFit> {
    if lo < 2 || hi >= s.len() || hi <= lo {
        return Err(Error::Argument(format!("window [{lo}, {hi}] outside the table")));
    }
    let mut pts = Vec::with_capacity(hi - lo + 1);
    for p in lo..=hi {
        if !(s[p] > 0.0 && s[p - 1] > 0.0) {
            return Err(Error::Numeric(format!("vanishing entry near p = {p}")));
        }
        let t = -(-1.0 / p as f64).ln_1p();
        pts.push((t, (s[p - 1] / s[p]).ln() + sigma.ln()));
    }
    let fit = ols(&pts)?;
    let y = fit.intercept.exp();
    Ok(PowerFit {
        y: Estimate { value: y, stderr: y * fit.intercept_se },
        exponent: Estimate { value: fit.slope, stderr: fit.slope_se },
        r2: fit.r2,
        window: (lo, hi),
    })
}

/// Minimum R² for a fit to count as polynomial.
pub const R2_THRESHOLD: f64 = 0.9;

/// `y_cr` from the flux ratios over `[P/4, P/2]`; the error adds the fit
/// error and the spread between the two halves of the window.
pub fn estimate_y_cr(eval: &NumericEvaluation) -> Result<Estimate> {
    if !eval.converged {
        return Err(Error::Numeric("evaluation did not converge".into()));
    }
    if eval.p_max < 200 {
        return Err(Error::Argument("estimate_y_cr needs p_max >= 200".into()));
    }
    let (lo, hi) = (eval.p_max / 4, eval.p_max / 2);
    let f = fit_power_law(&eval.scaled, eval.sigma, lo, hi)?;
    // systematic part: disagreement between the two half windows
    let mid = (lo + hi) / 2;
    let a = fit_power_law(&eval.scaled, eval.sigma, lo, mid)?;
    let b = fit_power_law(&eval.scaled, eval.sigma, mid, hi)?;
    let sys = 0.5 * (a.y.value - b.y.value).abs();
    Ok(Estimate { value: f.y.value, stderr: f.y.stderr.hypot(sys) })
}

/// Default flux window for the `beta` fit: away from `p = 0` transients and
/// from the truncation at `P`.
pub fn beta_window(p_max: usize) -> (usize, usize) {
    (p_max / 20, p_max / 4)
}

pub fn fit_beta(eval: &NumericEvaluation) -> Result<PowerFit> {
    let (lo, hi) = beta_window(eval.p_max);
    if hi - lo < 100 {
        return Err(Error::Argument(format!("beta window [{lo}, {hi}] shorter than 100")));
    }
    let f = fit_power_law(&eval.scaled, eval.sigma, lo, hi)?;
    if f.r2 < R2_THRESHOLD {
        return Err(Error::Numeric(format!("non-polynomial residuals: R² = {:.3}", f.r2)));
    }
    Ok(f)
}

/// `alpha` from `[x^n]W_0` with `N >= 200`.
pub fn fit_alpha(coeffs: &[Rational]) -> Result<DombSykes> {
    if coeffs.len() < 201 {
        return Err(Error::Argument("fit_alpha needs order N >= 200".into()));
    }
    domb_sykes(coeffs, DISCARD)
}

/// `W̃_p = y^p W_p` and its pointed companions.
#[derive(Clone, Debug, Serialize)]
pub struct TildeTable {
    pub y: f64,
    pub w: Vec<f64>,
    pub bullet: Option<Vec<f64>>,
    pub circ: Option<Vec<f64>>,
}

impl TildeTable {
    pub fn new(eval: &NumericEvaluation, y: f64) -> Self {
        let n = eval.p_max + 1;
        Self {
            y,
            w: (0..n).map(|p| eval.tilde(p, y)).collect(),
            bullet: eval.bullet_scaled.as_ref().map(|_| (0..n).map(|p| eval.tilde_bullet(p, y).unwrap()).collect()),
            circ: eval.circ_scaled.as_ref().map(|_| (0..n).map(|p| eval.tilde_circ(p, y).unwrap()).collect()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_bigint::BigInt;

    /// `mu^k k^{-alpha}`; the geometric factor is exact since `12^400`
    /// overflows f64.
    fn synthetic(mu: u32, alpha: f64, n: usize) -> Vec<Rational> {
        (0..=n)
            .map(|k| {
                let power = Rational::from_float((k.max(1) as f64).powf(-alpha)).unwrap();
                Rational::from_integer(BigInt::from(mu).pow(k as u32)) * power
            })
            .collect()
    }

    #[test]
    fn geometric_series() {
        let c: Vec<Rational> = (0..=100).map(|k| Rational::from_integer(BigInt::from(2).pow(k))).collect();
        let ds = domb_sykes(&c, DISCARD).unwrap();
        assert!((ds.x_cr - 0.5).abs() < 1e-12);
        assert!(ds.alpha.abs() < 1e-10);
    }

    #[test]
    fn synthetic_power_laws() {
        let ds = domb_sykes(&synthetic(3, 2.5, 400), DISCARD).unwrap();
        assert!((ds.fit.intercept - 3.0).abs() < 1e-3);
        assert!((ds.alpha - 2.5).abs() < 0.05);
        let ds = fit_alpha(&synthetic(12, 1.5, 400)).unwrap();
        assert!((ds.alpha - 1.5).abs() < 0.05);
    }

    #[test]
    fn flux_power_laws() {
        let s: Vec<f64> = (0..=400).map(|p| 2f64.powi(-p) * (p.max(1) as f64).powf(-1.5)).collect();
        let f = fit_power_law(&s, 1.0, 20, 300).unwrap();
        assert!((f.y.value - 2.0).abs() < 1e-9);
        assert!((f.exponent.value - 1.5).abs() < 0.02);
        // rescaled storage gives the same answer
        let v: Vec<f64> = s.iter().enumerate().map(|(p, x)| x * 1.9f64.powi(p as i32)).collect();
        let g = fit_power_law(&v, 1.9, 20, 300).unwrap();
        assert!((g.y.value - 2.0).abs() < 1e-9);
    }

    #[test]
    fn vanishing_tail_is_an_error() {
        let s = vec![1.0, 0.5, 0.25, 0.0, 0.0, 0.0, 0.0];
        assert!(fit_power_law(&s, 1.0, 2, 5).is_err());
    }

    #[test]
    fn period_two_is_flagged() {
        let c: Vec<Rational> =
            (0..=80).map(|k| Rational::from_integer(BigInt::from(if k % 2 == 0 { 1 << (k / 4) } else { 0 }))).collect();
        assert!(domb_sykes(&c, DISCARD).is_err());
    }
}
