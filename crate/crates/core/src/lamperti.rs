//! Laplace exponents of the two Lamperti Lévy processes, their roots, and
//! the tilt-density proportionality check.
//!
//! Subordinator branch, `β ∈ (1, 2)`:
//! `ψ(β) = ∫₀¹ c (1-x)^{-β} (x^{-β} 1_{x>1/2} - 1) dx - 1/Γ(2-β)`,
//! `c = -1/Γ(1-β)`.
//!
//! Compensated branch, `β ∈ (2, 3)`:
//! `ψ(β) = ∫₀¹ c (1-x)^{-β} (x^{-β} 1_{x>1/2} - 1 + β ln x) dx - k + β d`,
//! `c = -Γ(β) sin((β-1)π)/π`, `k = (β-2)/Γ(3-β)`,
//! `d = (γ_E + digamma(2-β))/Γ(2-β)`.
//! Without the restriction `x > 1/2` the compensated integral with `x^z`
//! in place of `x^{-β}` has the closed form `Γ(1+z)/Γ(2-β+z)`.
//!
//! Endpoint singularities are removed by substitution before adaptive
//! Gauss–Kronrod: near `x = 1` with `u = 1-x = v^{1/(2-β)}` (subordinator)
//! or `v^{1/(3-β)}` (compensated), which makes the integrand bounded;
//! near `x = 0` with `x = w²` against the logarithm.

use serde::Serialize;
use statrs::function::gamma::{digamma, gamma};

use crate::error::{Error, Result};

/// Euler–Mascheroni constant.
pub const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// `1/Γ(x)`, exactly 0 at the poles.
pub fn rgamma(x: f64) -> f64 {
    if x <= 0.0 && x == x.floor() {
        0.0
    } else {
        1.0 / gamma(x)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    /// `β ∈ (1, 2)`.
    Subordinator,
    /// `β ∈ (2, 3)`.
    Compensated,
}

impl Branch {
    /// Scan interval of the branch.
    pub fn scan_interval(self) -> (f64, f64) {
        match self {
            Branch::Subordinator => (1.05, 1.95),
            Branch::Compensated => (2.05, 2.95),
        }
    }

    fn open_interval(self) -> (f64, f64) {
        match self {
            Branch::Subordinator => (1.0, 2.0),
            Branch::Compensated => (2.0, 3.0),
        }
    }
}

impl std::str::FromStr for Branch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "subordinator" => Ok(Branch::Subordinator),
            "compensated" => Ok(Branch::Compensated),
            _ => Err(Error::Argument(format!("unknown branch {s:?} (subordinator|compensated)"))),
        }
    }
}

/// Result of an adaptive integration.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Quad {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
}

// Gauss–Kronrod 7/15 nodes on [-1, 1]; nodes with odd index are Gauss nodes.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_5,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_48,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224,
    0.063_092_092_629_978_56,
    0.104_790_010_322_250_19,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_42,
    0.204_432_940_075_298_89,
    0.209_482_141_084_727_82,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_64,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &impl Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kronrod = WGK[7] * fc;
    let mut gauss = WG[3] * fc;
    for i in 0..7 {
        let dx = h * XGK[i];
        let s = f(c - dx) + f(c + dx);
        kronrod += WGK[i] * s;
        if i % 2 == 1 {
            gauss += WG[i / 2] * s;
        }
    }
    (kronrod * h, ((kronrod - gauss) * h).abs())
}

/// Maximum interval count of [`integrate`].
pub const MAX_INTERVALS: usize = 2000;

/// Globally adaptive G7K15 on `[a, b]` to absolute tolerance `tol`: the
/// interval with the largest error estimate is bisected until the summed
/// estimate is below `tol`.
pub fn integrate(f: impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<Quad> {
    let mut intervals = vec![{
        let (v, e) = gk15(&f, a, b);
        (a, b, v, e)
    }];
    let mut evaluations = 15;
    loop {
        let value: f64 = intervals.iter().map(|t| t.2).sum();
        let error: f64 = intervals.iter().map(|t| t.3).sum();
        if !value.is_finite() {
            return Err(Error::Numeric("non-finite integrand".into()));
        }
        if error <= tol {
            return Ok(Quad { value, error, evaluations });
        }
        if intervals.len() >= MAX_INTERVALS {
            return Err(Error::Numeric(format!(
                "quadrature tolerance {tol:e} not met: {value} ± {error:e}"
            )));
        }
        let (i, _) = intervals
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("non-empty");
        let (lo, hi, _, _) = intervals.swap_remove(i);
        let mid = 0.5 * (lo + hi);
        for (l, r) in [(lo, mid), (mid, hi)] {
            let (v, e) = gk15(&f, l, r);
            intervals.push((l, r, v, e));
        }
        evaluations += 30;
    }
}

/// `e^a - 1 - a` without cancellation.
fn exp2m(a: f64) -> f64 {
    if a.abs() < 0.5 {
        // a²/2! + a³/3! + ... until the terms vanish
        let mut term = a * a / 2.0;
        let mut sum = term;
        let mut n = 2.0;
        while term.abs() > 1e-18 * sum.abs() {
            n += 1.0;
            term *= a / n;
            sum += term;
        }
        sum
    } else {
        a.exp_m1() - a
    }
}

/// Lévy density constant of the subordinator branch.
pub fn subordinator_constant(beta: f64) -> f64 {
    -rgamma(1.0 - beta)
}

/// Lévy density constant of the compensated branch.
pub fn compensated_constant(beta: f64) -> f64 {
    -gamma(beta) * ((beta - 1.0) * std::f64::consts::PI).sin() / std::f64::consts::PI
}

/// Lévy density `c (1-x)^{-β}` of the branch at `x ∈ (0, 1)`.
pub fn levy_density(branch: Branch, beta: f64, x: f64) -> f64 {
    let c = match branch {
        Branch::Subordinator => subordinator_constant(beta),
        Branch::Compensated => compensated_constant(beta),
    };
    c * (1.0 - x).powf(-beta)
}

/// Killing rate `(β-2)/Γ(3-β)` of the compensated branch.
pub fn killing_rate(beta: f64) -> f64 {
    (beta - 2.0) * rgamma(3.0 - beta)
}

/// Drift coefficient `d` of the compensated branch; enters as `-z d`.
pub fn drift_coefficient(beta: f64) -> f64 {
    (EULER_GAMMA + digamma(2.0 - beta)) * rgamma(2.0 - beta)
}

#[derive(Clone, Debug, Serialize)]
pub struct PsiEvaluation {
    pub beta: f64,
    pub branch: Branch,
    pub value: f64,
    /// Summed quadrature error estimate.
    pub error: f64,
    pub integral: f64,
    pub killing: f64,
    /// Drift contribution (`0` on the subordinator branch).
    pub drift: f64,
}

fn check_branch(branch: Branch, beta: f64) -> Result<()> {
    let (lo, hi) = branch.open_interval();
    if !(beta > lo && beta < hi) {
        return Err(Error::Argument(format!("β = {beta} outside ({lo}, {hi})")));
    }
    Ok(())
}

pub fn psi_subordinator(beta: f64, tol: f64) -> Result<PsiEvaluation> {
    check_branch(Branch::Subordinator, beta)?;
    let c = subordinator_constant(beta);
    // on (0, 1/2] the bracket is -1
    let lower = -c * (0.5f64.powf(1.0 - beta) - 1.0) / (beta - 1.0);
    // on (1/2, 1): u = 1-x = v^{1/(2-β)}, c u^{-β}((1-u)^{-β}-1) du = c/(2-β) · ((1-u)^{-β}-1)/u dv
    let e = 2.0 - beta;
    let upper = integrate(
        |v| {
            let u = v.powf(1.0 / e);
            c / e * (-beta * (-u).ln_1p()).exp_m1() / u
        },
        0.0,
        0.5f64.powf(e),
        tol / 2.0,
    )?;
    let killing = rgamma(2.0 - beta);
    let integral = lower + upper.value;
    Ok(PsiEvaluation {
        beta,
        branch: Branch::Subordinator,
        value: integral - killing,
        error: upper.error,
        integral,
        killing,
        drift: 0.0,
    })
}

/// `∫₀¹ c (1-x)^{-β} g(x) dx` with `g(x) = e2(z ln x)` on `(1/2, 1)` and
/// `g(x) = x^z 1_{full} - 1 - z ln x` on `(0, 1/2]`.
fn compensated_integral(beta: f64, z: f64, full: bool, tol: f64) -> Result<Quad> {
    let c = compensated_constant(beta);
    // near x = 1: u = v^{1/(3-β)}, integrand c e2(z ln(1-u)) u^{-β} du = c e2 / ((3-β) u²) dv
    let e = 3.0 - beta;
    let upper = integrate(
        |v| {
            let u = v.powf(1.0 / e);
            c / e * exp2m(z * (-u).ln_1p()) / (u * u)
        },
        0.0,
        0.5f64.powf(e),
        tol / 2.0,
    )?;
    // near x = 0: x = w², dx = 2w dw
    let lower = integrate(
        |w| {
            let x = w * w;
            let lx = 2.0 * w.ln();
            let head = if full { (z * lx).exp() } else { 0.0 };
            2.0 * w * c * (1.0 - x).powf(-beta) * (head - 1.0 - z * lx)
        },
        0.0,
        std::f64::consts::FRAC_1_SQRT_2,
        tol / 2.0,
    )?;
    Ok(Quad {
        value: upper.value + lower.value,
        error: upper.error + lower.error,
        evaluations: upper.evaluations + lower.evaluations,
    })
}

pub fn psi_compensated(beta: f64, tol: f64) -> Result<PsiEvaluation> {
    check_branch(Branch::Compensated, beta)?;
    let q = compensated_integral(beta, -beta, false, tol)?;
    let killing = killing_rate(beta);
    let drift = beta * drift_coefficient(beta);
    Ok(PsiEvaluation {
        beta,
        branch: Branch::Compensated,
        value: q.value - killing + drift,
        error: q.error,
        integral: q.value,
        killing,
        drift,
    })
}

pub fn psi(branch: Branch, beta: f64, tol: f64) -> Result<PsiEvaluation> {
    match branch {
        Branch::Subordinator => psi_subordinator(beta, tol),
        Branch::Compensated => psi_compensated(beta, tol),
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ClosedFormCheck {
    pub beta: f64,
    pub z: f64,
    pub quadrature: f64,
    pub error: f64,
    pub closed_form: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Full compensated exponent at `z` by quadrature against
/// `Γ(1+z)/Γ(2-β+z)`.
pub fn lk_closed_form_check(beta: f64, z: f64, tol: f64) -> Result<ClosedFormCheck> {
    check_branch(Branch::Compensated, beta)?;
    if z < 0.0 {
        return Err(Error::Argument(format!("z = {z} must be non-negative")));
    }
    let q = compensated_integral(beta, z, true, tol / 10.0)?;
    let quadrature = q.value - killing_rate(beta) - z * drift_coefficient(beta);
    let closed_form = gamma(1.0 + z) * rgamma(2.0 - beta + z);
    Ok(ClosedFormCheck {
        beta,
        z,
        quadrature,
        error: q.error,
        closed_form,
        tolerance: tol,
        pass: (quadrature - closed_form).abs() <= tol,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct RootCertificate {
    pub branch: Branch,
    pub bracket: (f64, f64),
    pub root: f64,
    pub tolerance: f64,
    pub psi_at_root: f64,
    pub grid_step: f64,
    pub sign_changes: usize,
    /// `(β, ψ(β))` on the scan grid.
    pub scan: Vec<(f64, f64)>,
}

/// Quadrature tolerance used by scans and root finding.
pub const PSI_TOL: f64 = 1e-12;

/// Scan grid step.
pub const SCAN_STEP: f64 = 1e-3;

/// `(β, f(β))` on the grid `lo, lo + step, ..., hi`.
pub fn scan(f: &impl Fn(f64) -> Result<f64>, lo: f64, hi: f64, step: f64) -> Result<Vec<(f64, f64)>> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n)
        .map(|i| {
            let b = lo + (hi - lo) * i as f64 / n as f64;
            f(b).map(|v| (b, v))
        })
        .collect()
}

/// Root of `f` on `[lo, hi]`: a grid scan must show exactly one sign
/// change, then bisection shrinks the bracket below `tol`.
pub fn find_root_of(
    branch: Branch,
    f: impl Fn(f64) -> Result<f64>,
    lo: f64,
    hi: f64,
    step: f64,
    tol: f64,
) -> Result<RootCertificate> {
    let table = scan(&f, lo, hi, step)?;
    let changes: Vec<usize> =
        (1..table.len()).filter(|&i| (table[i - 1].1 < 0.0) != (table[i].1 < 0.0) || table[i].1 == 0.0).collect();
    if changes.len() != 1 {
        return Err(Error::Numeric(format!(
            "expected one sign change on [{lo}, {hi}], found {}",
            changes.len()
        )));
    }
    let i = changes[0];
    let (mut a, mut fa) = table[i - 1];
    let (mut b, _) = table[i];
    while b - a > tol {
        let m = 0.5 * (a + b);
        let fm = f(m)?;
        if fm == 0.0 {
            a = m;
            b = m;
            break;
        }
        if (fm < 0.0) == (fa < 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    let root = 0.5 * (a + b);
    Ok(RootCertificate {
        branch,
        bracket: (table[i - 1].0, table[i].0),
        root,
        tolerance: tol,
        psi_at_root: f(root)?,
        grid_step: step,
        sign_changes: changes.len(),
        scan: table,
    })
}

/// Certified root of `ψ` on the branch.
pub fn find_root(branch: Branch, tol: f64) -> Result<RootCertificate> {
    let (lo, hi) = branch.scan_interval();
    find_root_of(branch, |b| psi(branch, b, PSI_TOL).map(|e| e.value), lo, hi, SCAN_STEP, tol)
}

#[derive(Clone, Debug, Serialize)]
pub struct TiltCheck {
    pub beta: f64,
    pub branch: Branch,
    /// Mean of `x^{-β} π(x) / (x(1-x))^{-β}` over the grid.
    pub constant: f64,
    /// `(max - min)/mean` of the ratio.
    pub relative_variation: f64,
    pub tolerance: f64,
    pub points: usize,
    pub pass: bool,
}

/// Branch of `β`, if any.
pub fn branch_of(beta: f64) -> Result<Branch> {
    if beta > 1.0 && beta < 2.0 {
        Ok(Branch::Subordinator)
    } else if beta > 2.0 && beta < 3.0 {
        Ok(Branch::Compensated)
    } else {
        Err(Error::Argument(format!("β = {beta} in neither branch")))
    }
}

/// Ratio of the `x^{-β}`-tilted Lévy density to `(x(1-x))^{-β}` on
/// `points` interior grid points of `(1/2, 1)`.
pub fn tilt_proportionality(beta: f64, points: usize, tol: f64) -> Result<TiltCheck> {
    let branch = branch_of(beta)?;
    let ratios: Vec<f64> = (1..=points)
        .map(|i| {
            let x = 0.5 + 0.5 * i as f64 / (points + 1) as f64;
            x.powf(-beta) * levy_density(branch, beta, x) / (x * (1.0 - x)).powf(-beta)
        })
        .collect();
    let mean = ratios.iter().sum::<f64>() / points as f64;
    let max = ratios.iter().cloned().fold(f64::MIN, f64::max);
    let min = ratios.iter().cloned().fold(f64::MAX, f64::min);
    let relative_variation = (max - min) / mean.abs();
    Ok(TiltCheck {
        beta,
        branch,
        constant: mean,
        relative_variation,
        tolerance: tol,
        points,
        pass: relative_variation <= tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn special_function_values() {
        assert!((gamma(0.5) - PI.sqrt()).abs() < 1e-14);
        assert!((gamma(-0.5) + 2.0 * PI.sqrt()).abs() < 1e-13);
        // digamma(-1/2) = 2 - γ - 2 ln 2
        assert!((digamma(-0.5) - (2.0 - EULER_GAMMA - 2.0 * 2f64.ln())).abs() < 1e-12);
        assert_eq!(rgamma(0.0), 0.0);
        assert_eq!(rgamma(-2.0), 0.0);
    }

    #[test]
    fn reflection_identities() {
        let b = 1.5;
        assert!((gamma(1.0 - b) * gamma(b) - PI / (PI * b).sin()).abs() < 1e-12);
        let x = -0.5;
        assert!((digamma(1.0 - x) - digamma(x) - PI / (PI * x).tan()).abs() < 1e-12);
    }

    #[test]
    fn quadrature_endpoint_singularity() {
        // ∫₀¹ ln x dx = -1 and ∫₀¹ x^{-1/2} dx = 2 after x = w²
        let q = integrate(|x| x.ln(), 0.0, 1.0, 1e-12).unwrap();
        assert!((q.value + 1.0).abs() < 1e-10);
        let q = integrate(|w| 2.0 * w * (w * w).powf(-0.5), 0.0, 1.0, 1e-13).unwrap();
        assert!((q.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn exp2m_matches_direct() {
        for a in [-2.0, -0.49, -1e-3, 1e-3, 0.3, 0.49, 1.5] {
            let d: f64 = a;
            let direct = d.exp() - 1.0 - d;
            assert!((exp2m(a) - direct).abs() <= 1e-15 + 1e-9 * direct.abs(), "{a}");
        }
    }

    #[test]
    fn roots_vanish() {
        assert!(psi_subordinator(1.5, 1e-13).unwrap().value.abs() < 1e-8);
        assert!(psi_compensated(2.5, 1e-13).unwrap().value.abs() < 1e-8);
    }

    #[test]
    fn closed_form() {
        for beta in [2.3, 2.5] {
            for z in [0.0, 0.5, 1.0, 1.5] {
                let c = lk_closed_form_check(beta, z, 1e-8).unwrap();
                assert!(c.pass, "{c:?}");
            }
        }
        let c = lk_closed_form_check(2.5, 1.0, 1e-8).unwrap();
        assert!((c.closed_form - 1.0 / PI.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn synthetic_root() {
        let c = find_root_of(Branch::Subordinator, |b| Ok(b - 1.7), 1.05, 1.95, 1e-3, 1e-10).unwrap();
        assert!((c.root - 1.7).abs() < 1e-9);
        assert!(find_root_of(Branch::Subordinator, |b| Ok((b - 1.3) * (b - 1.7)), 1.05, 1.95, 1e-3, 1e-10).is_err());
        assert!(find_root_of(Branch::Subordinator, |_| Ok(1.0), 1.05, 1.95, 1e-3, 1e-10).is_err());
    }

    #[test]
    fn tilt_constant() {
        for beta in [1.5, 2.5] {
            let t = tilt_proportionality(beta, 999, 1e-10).unwrap();
            assert!(t.pass, "{t:?}");
        }
    }

    #[test]
    fn refinement_within_error() {
        let a = psi_compensated(2.3, 1e-10).unwrap();
        let b = psi_compensated(2.3, 5e-11).unwrap();
        assert!((a.value - b.value).abs() <= a.error.max(1e-12));
    }
}
