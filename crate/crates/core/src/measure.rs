//! Offspring laws `π_p`, the splitting measure `ν̂` and its step marginal `ν`
//! at a fixed `x`.
//!
//! A `ν̂` atom is a step `q` of the locally largest branch together with the
//! sibling fluxes: for an entry `(c, s_0..s_k)` whose spot `s_0` carries the
//! large child, `q = s_0 - c - sum_{i>=1} (p_i - s_i)` and the weight is
//! `x (k+1) w y^{c - sum s} prod W̃_{p_i}`. Hence `q <= s_0 <= K`.

use std::collections::BTreeMap;

use num_traits::ToPrimitive;
use serde::Serialize;

use crate::asymptotics::{fit_power_law, Estimate};
use crate::error::{Error, Result};
use crate::model::WeightFunction;
use crate::solver::NumericEvaluation;

/// Upper bound on enumerated atoms.
pub const ATOM_BUDGET: usize = 5_000_000;

#[derive(Clone, Debug, Serialize)]
pub struct OffspringLaw {
    pub p: usize,
    /// Ordered child-flux tuples and their probabilities.
    pub atoms: Vec<(Vec<usize>, f64)>,
    /// Sum of the atoms; `1 - total` is the normalization deficit.
    pub total: f64,
}

impl OffspringLaw {
    pub fn deficit(&self) -> f64 {
        (1.0 - self.total).abs()
    }
}

/// `π_p(p_1..p_k) = x sum_{(c,s)} w prod W_{p_i} / W_p` over every entry whose
/// parking constraint admits the tuple.
pub fn offspring_law(w: &WeightFunction, eval: &NumericEvaluation, p: usize) -> Result<OffspringLaw> {
    if !eval.converged {
        return Err(Error::Numeric("evaluation did not converge".into()));
    }
    let kb = w.bound();
    if p + kb * kb > eval.p_max {
        return Err(Error::Argument(format!("p + K^2 = {} exceeds p_max {}", p + kb * kb, eval.p_max)));
    }
    let vp = eval.scaled[p];
    if vp <= 0.0 {
        return Err(Error::Numeric(format!("W_{p} vanishes")));
    }
    let x = eval.x_f64();
    let sigma = eval.sigma;
    let mut acc: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
    for (e, wt) in w.entries() {
        let wt = wt.to_f64().unwrap_or(0.0);
        let exponent = e.cars as i32 - e.spots.iter().sum::<usize>() as i32;
        let base = x * wt * sigma.powi(exponent) / vp;
        WeightFunction::for_each_children(e, p, eval.p_max, |kids| {
            let prod: f64 = kids.iter().map(|&q| eval.scaled[q]).product();
            if prod > 0.0 {
                *acc.entry(kids.to_vec()).or_insert(0.0) += base * prod;
            }
        });
        if acc.len() > ATOM_BUDGET {
            return Err(Error::Budget(format!("offspring law at p = {p} exceeds {ATOM_BUDGET} atoms")));
        }
    }
    let total = acc.values().sum();
    Ok(OffspringLaw { p, atoms: acc.into_iter().collect(), total })
}

#[derive(Clone, Debug, Serialize)]
pub struct NuHatAtom {
    pub q: i64,
    pub cars: usize,
    /// `s_0` (spot below the large child) followed by the sibling spots.
    pub spots: Vec<usize>,
    pub siblings: Vec<usize>,
    pub weight: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TailEstimate {
    pub exponent: Estimate,
    /// Estimated `ν` mass below `-M`.
    pub mass: f64,
    pub window: (usize, usize),
}

#[derive(Clone, Debug, Serialize)]
pub struct StepMeasure {
    pub x: f64,
    pub y: f64,
    pub bound: usize,
    pub depth: usize,
    pub atoms: Vec<NuHatAtom>,
    /// `ν(q)` at index `q + depth`, `q ∈ [-depth, K]`.
    pub marginal: Vec<f64>,
    pub tail: Option<TailEstimate>,
}

impl StepMeasure {
    /// A measure given only by its marginal (synthetic inputs, tests).
    pub fn from_marginal(bound: usize, depth: usize, marginal: Vec<f64>) -> Self {
        assert_eq!(marginal.len(), depth + bound + 1);
        Self { x: f64::NAN, y: f64::NAN, bound, depth, atoms: Vec::new(), marginal, tail: None }
    }

    pub fn nu(&self, q: i64) -> f64 {
        let i = q + self.depth as i64;
        if i < 0 || q > self.bound as i64 {
            0.0
        } else {
            self.marginal[i as usize]
        }
    }

    pub fn q_range(&self) -> std::ops::RangeInclusive<i64> {
        -(self.depth as i64)..=self.bound as i64
    }

    /// Mass carried by `q >= -depth`.
    pub fn truncated_mass(&self) -> f64 {
        self.marginal.iter().sum()
    }

    /// Truncated mass plus the extrapolated tail.
    pub fn total_mass(&self) -> f64 {
        self.truncated_mass() + self.tail.as_ref().map_or(0.0, |t| t.mass)
    }

    /// `sum_q t^{-q} ν(q)`: the mass after replacing `y` by `t y`.
    pub fn mass_at(&self, t: f64) -> f64 {
        let lt = t.ln();
        self.q_range().map(|q| self.nu(q) * (-(q as f64) * lt).exp()).sum()
    }
}

fn tilde_table(eval: &NumericEvaluation, y: f64, upto: usize) -> Vec<f64> {
    (0..=upto.min(eval.p_max)).map(|p| eval.tilde(p, y)).collect()
}

/// Builds `ν̂` atoms and the marginal `ν` on `[-M, K]` at base point `y`.
pub fn nu(w: &WeightFunction, eval: &NumericEvaluation, y: f64, depth: usize) -> Result<StepMeasure> {
    if !eval.converged {
        return Err(Error::Numeric("evaluation did not converge".into()));
    }
    let kb = w.bound();
    if depth + kb * kb > eval.p_max {
        return Err(Error::Argument(format!("M + K^2 = {} exceeds p_max {}", depth + kb * kb, eval.p_max)));
    }
    let x = eval.x_f64();
    let wt_tab = tilde_table(eval, y, depth + 2 * kb);
    let at = |p: usize| wt_tab.get(p).copied().unwrap_or(0.0);
    let mut atoms = Vec::new();
    for (e, wv) in w.entries() {
        if e.spots.is_empty() {
            continue;
        }
        let k = e.spots.len() - 1;
        let wv = wv.to_f64().unwrap_or(0.0);
        let s_sum: usize = e.spots.iter().sum();
        let base = x * (k + 1) as f64 * wv * y.powi(e.cars as i32 - s_sum as i32);
        let s0 = e.spots[0] as i64;
        let sib_spots = &e.spots[1..];
        // r = sum (p_i - s_i) ranges up to s_0 - c + M
        let r_max = s0 - e.cars as i64 + depth as i64;
        if r_max < 0 {
            continue;
        }
        let mut buf = vec![0usize; k];
        enumerate_siblings(sib_spots, r_max as usize, 0, &mut buf, &mut |sibs, r| {
            let prod: f64 = sibs.iter().map(|&p| at(p)).product();
            if prod > 0.0 {
                atoms.push(NuHatAtom {
                    q: s0 - e.cars as i64 - r as i64,
                    cars: e.cars,
                    spots: e.spots.clone(),
                    siblings: sibs.to_vec(),
                    weight: base * prod,
                });
            }
        });
        if atoms.len() > ATOM_BUDGET {
            return Err(Error::Budget(format!("ν̂ exceeds {ATOM_BUDGET} atoms at depth {depth}")));
        }
    }
    let mut marginal = vec![0.0; depth + kb + 1];
    for a in &atoms {
        marginal[(a.q + depth as i64) as usize] += a.weight;
    }
    let mut m = StepMeasure { x, y, bound: kb, depth, atoms, marginal, tail: None };
    m.tail = tail_estimate(&m).ok();
    Ok(m)
}

/// Ordered sibling tuples `p_i >= s_i` with `sum (p_i - s_i) = r <= r_max`.
fn enumerate_siblings(
    spots: &[usize],
    r_left: usize,
    i: usize,
    buf: &mut [usize],
    f: &mut impl FnMut(&[usize], usize),
) {
    if i == spots.len() {
        let used: usize = buf.iter().zip(spots).map(|(p, s)| p - s).sum();
        f(buf, used);
        return;
    }
    for e in 0..=r_left {
        buf[i] = spots[i] + e;
        enumerate_siblings(spots, r_left - e, i + 1, buf, f);
    }
}

/// Marginal `ν` computed by convolution per sibling-spot multiset, without
/// materializing atoms. Agrees with the atom sums of [`nu`].
pub fn nu_marginal_by_convolution(w: &WeightFunction, eval: &NumericEvaluation, y: f64, depth: usize) -> Vec<f64> {
    let kb = w.bound();
    let x = eval.x_f64();
    let wt_tab = tilde_table(eval, y, depth + 2 * kb);
    let len = depth + 2 * kb + 1;
    let mut conv_cache: BTreeMap<Vec<usize>, Vec<f64>> = BTreeMap::new();
    let mut marginal = vec![0.0; depth + kb + 1];
    for (e, wv) in w.entries() {
        if e.spots.is_empty() {
            continue;
        }
        let k = e.spots.len() - 1;
        let mut sib: Vec<usize> = e.spots[1..].to_vec();
        sib.sort_unstable();
        let conv = conv_cache.entry(sib.clone()).or_insert_with(|| {
            let mut acc = vec![0.0; len];
            acc[0] = 1.0;
            for &s in &sib {
                let b: Vec<f64> = (0..len).map(|r| wt_tab.get(r + s).copied().unwrap_or(0.0)).collect();
                let mut out = vec![0.0; len];
                for (i, &a) in acc.iter().enumerate() {
                    if a == 0.0 {
                        continue;
                    }
                    for j in 0..len - i {
                        out[i + j] += a * b[j];
                    }
                }
                acc = out;
            }
            acc
        });
        let s_sum: usize = e.spots.iter().sum();
        let base = x * (k + 1) as f64 * wv.to_f64().unwrap_or(0.0) * y.powi(e.cars as i32 - s_sum as i32);
        let s0 = e.spots[0] as i64;
        for q in -(depth as i64)..=kb as i64 {
            let r = s0 - e.cars as i64 - q;
            if r >= 0 && (r as usize) < len {
                marginal[(q + depth as i64) as usize] += base * conv[r as usize];
            }
        }
    }
    marginal
}

/// Power-law fit of `ν(-j)` over `j ∈ [20, M]` and the implied mass below `-M`.
pub fn tail_estimate(m: &StepMeasure) -> Result<TailEstimate> {
    let (lo, hi) = (20usize, m.depth);
    if hi < lo + 10 {
        return Err(Error::Argument("depth too small for a tail fit".into()));
    }
    let s: Vec<f64> = (0..=hi).map(|j| m.nu(-(j as i64))).collect();
    let f = fit_power_law(&s, 1.0, lo, hi)?;
    let beta = f.exponent.value;
    let last = s[hi];
    let mass = if beta > 1.0 {
        // sum_{j > M} C j^{-beta} with C fitted at j = M, midpoint rule
        let mf = hi as f64;
        last * mf.powf(beta) * (mf + 0.5).powf(1.0 - beta) / (beta - 1.0)
    } else {
        f64::INFINITY
    };
    Ok(TailEstimate { exponent: f.exponent, mass, window: (lo, hi) })
}

/// `y` calibrated by mass normalization. The target is `1` minus the
/// extrapolated tail below `-M`; the answer is the minimizer of the convex map
/// `t -> mass_at(t)` when its minimum reaches the target (critical
/// tangency), otherwise the crossing on its increasing branch.
pub fn mass_normalized_y(m: &StepMeasure) -> Result<f64> {
    let target = 1.0 - m.tail.as_ref().map(|t| t.mass).filter(|v| v.is_finite()).unwrap_or(0.0);
    let f = |lt: f64| m.mass_at(lt.exp()) / target;
    // golden section on log t
    let (mut a, mut b) = (-0.5f64, 0.5f64);
    let g = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) < f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let lt_min = 0.5 * (a + b);
    let fmin = f(lt_min);
    if !fmin.is_finite() {
        return Err(Error::Numeric("mass function not finite near t = 1".into()));
    }
    if fmin >= 1.0 {
        return Ok(m.y * lt_min.exp());
    }
    let (mut lo, mut hi) = (lt_min, lt_min + 0.01);
    while f(hi) < 1.0 {
        hi += 0.05;
        if hi > 2.0 {
            return Err(Error::Numeric("no crossing of mass 1 on the increasing branch".into()));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(m.y * (0.5 * (lo + hi)).exp())
}

#[derive(Clone, Debug, Serialize)]
pub struct YCrossCheck {
    pub ratio: Estimate,
    pub mass: Estimate,
    /// Difference within the combined standard error.
    pub agree: bool,
}

/// Compares the flux-ratio `y_cr` with the mass-normalized one; the latter's
/// error is taken as its change between depths `M` and `M/2`.
pub fn y_cross_check(w: &WeightFunction, eval: &NumericEvaluation, depth: usize) -> Result<YCrossCheck> {
    let ratio = crate::asymptotics::estimate_y_cr(eval)?;
    let full = mass_normalized_y(&nu(w, eval, ratio.value, depth)?)?;
    let half = mass_normalized_y(&nu(w, eval, ratio.value, depth / 2)?)?;
    let mass = Estimate { value: full, stderr: (full - half).abs() };
    let combined = ratio.stderr.hypot(mass.stderr);
    let agree = (ratio.value - mass.value).abs() <= combined;
    Ok(YCrossCheck { ratio, mass, agree })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriftVerdict {
    ZeroDrift,
    InfiniteNegativeDrift,
    Inconclusive,
}

#[derive(Clone, Debug, Serialize)]
pub struct DriftDiagnostic {
    /// `D(m) = sum_{q >= -m} q ν(q)` for `m = 0..=M`.
    pub partial: Vec<f64>,
    /// Log-log slope of `|D(m)|` over `[M/8, M]`.
    pub slope: Option<f64>,
    pub verdict: DriftVerdict,
    /// `|D(M)| < 5 M^{-1/2} median|D|`, reported for comparison only.
    pub median_rule_zero: bool,
    pub reason: String,
}

/// Slope magnitude separating decay from growth of `|D(m)|`.
pub const DRIFT_SLOPE: f64 = 0.25;

/// Zero drift when `|D(m)|` decays polynomially (`≈ m^{2-beta}` with `beta
/// = 5/2`); infinite negative drift when `D < 0` and `|D(m)|` grows
/// (`≈ m^{2-beta}` with `beta = 3/2`). Anything else is inconclusive.
pub fn drift_diagnostic(m: &StepMeasure, depth: usize) -> DriftDiagnostic {
    let depth = depth.min(m.depth);
    let positive: f64 = (1..=m.bound as i64).map(|q| q as f64 * m.nu(q)).sum();
    let mut partial = Vec::with_capacity(depth + 1);
    let mut d = positive;
    for j in 0..=depth {
        if j > 0 {
            d -= j as f64 * m.nu(-(j as i64));
        }
        partial.push(d);
    }
    let dm = partial[depth];
    let mut abs: Vec<f64> = partial.iter().map(|v| v.abs()).collect();
    abs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = abs[abs.len() / 2];
    let median_rule_zero = dm.abs() < 5.0 * (depth.max(1) as f64).powf(-0.5) * median;
    let lo = (depth / 8).max(1);
    if depth < 16 {
        return DriftDiagnostic {
            partial,
            slope: None,
            verdict: DriftVerdict::Inconclusive,
            median_rule_zero,
            reason: "depth below 16".into(),
        };
    }
    let window = &partial[lo..=depth];
    let scale = window.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(positive.abs());
    if window.iter().all(|v| v.abs() <= 1e-14 * scale.max(f64::MIN_POSITIVE)) {
        return DriftDiagnostic {
            partial,
            slope: None,
            verdict: DriftVerdict::ZeroDrift,
            median_rule_zero,
            reason: "partial drifts vanish on the window".into(),
        };
    }
    let pts: Vec<(f64, f64)> =
        (lo..=depth).filter(|&j| partial[j] != 0.0).map(|j| ((j as f64).ln(), partial[j].abs().ln())).collect();
    let slope = crate::asymptotics::ols(&pts).map(|f| f.slope).ok();
    let same_sign = window.iter().all(|v| v.signum() == dm.signum());
    let (verdict, reason) = match slope {
        Some(s) if s <= -DRIFT_SLOPE && same_sign => {
            (DriftVerdict::ZeroDrift, format!("|D(m)| decays with log-log slope {s:.3}"))
        }
        Some(s) if s >= DRIFT_SLOPE && dm < 0.0 && same_sign => {
            (DriftVerdict::InfiniteNegativeDrift, format!("D(m) < 0 grows with log-log slope {s:.3}"))
        }
        Some(s) => (DriftVerdict::Inconclusive, format!("log-log slope {s:.3} within ±{DRIFT_SLOPE} or sign change")),
        None => (DriftVerdict::Inconclusive, "slope fit failed".into()),
    };
    DriftDiagnostic { partial, slope, verdict, median_rule_zero, reason }
}

/// `ν̂`-mass of atoms with at least `l` siblings above `a`.
pub fn sibling_tail(m: &StepMeasure, a: usize, l: usize) -> f64 {
    m.atoms.iter().filter(|at| at.siblings.iter().filter(|&&p| p > a).count() >= l).map(|at| at.weight).sum()
}

/// `π_p`-probability that at least `l` children exceed `a`.
pub fn children_tail(law: &OffspringLaw, a: usize, l: usize) -> f64 {
    law.atoms.iter().filter(|(kids, _)| kids.iter().filter(|&&p| p > a).count() >= l).map(|(_, pr)| pr).sum()
}

#[derive(Clone, Debug, Serialize)]
pub struct DyadicTail {
    pub l: usize,
    pub grid: Vec<usize>,
    pub mass: Vec<f64>,
    /// Successive ratios `mass(2a)/mass(a)`.
    pub ratios: Vec<f64>,
    pub expected_ratio: f64,
    /// Every ratio within a factor 10 of the expectation.
    pub consistent: bool,
    pub insufficient: bool,
}

/// Dyadic-grid decay of the `l`-big-siblings tail against `2^{l(1-beta)}`.
pub fn two_big_children_tail(m: &StepMeasure, a0: usize, l: usize, beta: f64) -> DyadicTail {
    let mut grid = Vec::new();
    let mut a = a0.max(1);
    while 2 * a <= m.depth {
        grid.push(a);
        a *= 2;
    }
    let mass: Vec<f64> = grid.iter().map(|&a| sibling_tail(m, a, l)).collect();
    let ratios: Vec<f64> = mass.windows(2).filter(|w| w[0] > 0.0).map(|w| w[1] / w[0]).collect();
    let expected_ratio = 2f64.powf(l as f64 * (1.0 - beta));
    let insufficient = ratios.is_empty() || mass.iter().all(|v| *v == 0.0);
    let consistent = !insufficient && ratios.iter().all(|r| *r > expected_ratio / 10.0 && *r < expected_ratio * 10.0);
    DyadicTail { l, grid, mass, ratios, expected_ratio, consistent, insufficient }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::rat;
    use crate::models::{planar_maps, unit_spot_parking};
    use crate::solver::{evaluate, EvalConfig};

    fn eval_at(w: &WeightFunction, x: crate::model::Rational, p_max: usize) -> NumericEvaluation {
        evaluate(w, &x, &EvalConfig { p_max, ..Default::default() }).unwrap()
    }

    #[test]
    fn offspring_law_is_normalized_and_constrained() {
        for w in [planar_maps(), unit_spot_parking()] {
            let x = if w.name() == "planar_maps" { rat(1, 24) } else { rat(1, 2) };
            let e = eval_at(&w, x, 120);
            let kb = w.bound();
            for p in [0usize, 1, 3, 10, 40] {
                let law = offspring_law(&w, &e, p).unwrap();
                assert!(law.deficit() < 1e-9, "{} p={p} deficit {}", w.name(), law.deficit());
                for (kids, _) in &law.atoms {
                    assert!(kids.len() <= kb);
                    assert!(kids.iter().sum::<usize>() <= p + kb * kb);
                    if p > kb {
                        let mx = *kids.iter().max().unwrap();
                        assert!(kb * mx + kb >= p, "p={p} kids={kids:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn leaf_atom_probability() {
        let w = planar_maps();
        let e = eval_at(&w, rat(1, 24), 60);
        let law = offspring_law(&w, &e, 0).unwrap();
        let leaf = law.atoms.iter().find(|(k, _)| k.is_empty()).unwrap().1;
        let expect = e.x_f64() * 2.0 / e.w(0);
        assert!((leaf - expect).abs() < 1e-12 * expect);
    }

    #[test]
    fn marginal_bookkeeping_and_support() {
        let w = planar_maps();
        let e = eval_at(&w, rat(1, 24), 300);
        let y = crate::asymptotics::estimate_y_cr(&e).unwrap().value;
        let m = nu(&w, &e, y, 150).unwrap();
        let conv = nu_marginal_by_convolution(&w, &e, y, 150);
        for (a, b) in m.marginal.iter().zip(&conv) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300));
        }
        assert_eq!(m.nu(w.bound() as i64 + 1), 0.0);
        for at in &m.atoms {
            let lhs = at.siblings.iter().sum::<usize>() as i64 - at.spots.iter().sum::<usize>() as i64 + at.cars as i64;
            assert_eq!(lhs, -at.q);
            assert!(at.q <= w.bound() as i64);
        }
    }

    #[test]
    fn symmetric_synthetic_has_zero_drift() {
        let mut marg = vec![0.0; 40 + 2 + 1];
        marg[40 - 2] = 0.25;
        marg[40 - 1] = 0.25;
        marg[40 + 1] = 0.25;
        marg[40 + 2] = 0.25;
        let m = StepMeasure::from_marginal(2, 40, marg);
        let d = drift_diagnostic(&m, 40);
        assert_eq!(d.partial[40], 0.0);
        assert_eq!(d.verdict, DriftVerdict::ZeroDrift);
    }

    #[test]
    fn mass_shift_identity() {
        let mut marg = vec![0.0; 10 + 2 + 1];
        marg[10 - 3] = 0.5;
        marg[10 + 1] = 0.5;
        let m = StepMeasure::from_marginal(2, 10, marg);
        let t: f64 = 1.3;
        assert!((m.mass_at(t) - (0.5 * t.powi(3) + 0.5 / t)).abs() < 1e-12);
    }
}
