//! The acceptance pipeline behind `catpark report`: one pass/fail line per
//! criterion, in order.

use std::collections::BTreeMap;
use std::time::Instant;

use num_bigint::BigInt;
use num_traits::{One, ToPrimitive, Zero};
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::asymptotics::{estimate_x_cr, estimate_y_cr, fit_alpha, fit_beta};
use crate::error::{Error, Result};
use crate::lamperti::{self, Branch};
use crate::mc::{run_chunks, McConfig};
use crate::measure::{drift_diagnostic, nu, offspring_law, DriftVerdict, StepMeasure};
use crate::model::{rat, Rational, WeightFunction};
use crate::models::{planar_maps, unit_spot_parking};
use crate::solver::{compute_coefficients, evaluate, EvalConfig, NumericEvaluation};
use crate::trees::{enumerate_fpt, volume_batch, Sampler};
use crate::walk::{self, KeyEvent};

#[derive(Clone, Debug, Serialize)]
pub struct Criterion {
    pub id: usize,
    pub name: String,
    pub pass: bool,
    pub detail: String,
    pub seconds: f64,
}

impl Criterion {
    pub fn line(&self) -> String {
        format!(
            "[{}] {:>2} {}: {} ({:.1} s)",
            if self.pass { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.seconds
        )
    }
}

/// Shared evaluations of the planar-map model at `x = 1/12` and `1/24`.
struct Shared {
    w: WeightFunction,
    critical: Option<std::result::Result<(NumericEvaluation, f64), String>>,
    half: Option<std::result::Result<(NumericEvaluation, f64), String>>,
}

/// Flux truncation of the critical-point checks.
pub const P_MAX: usize = 2000;
/// Depth of the splitting measure.
pub const DEPTH: usize = 1000;

impl Shared {
    fn at(&mut self, half: bool) -> Result<(&NumericEvaluation, f64)> {
        let w = &self.w;
        let slot = if half { &mut self.half } else { &mut self.critical };
        let entry = slot.get_or_insert_with(|| {
            let x = if half { rat(1, 24) } else { rat(1, 12) };
            let cfg = EvalConfig { p_max: P_MAX, pointed: !half, ..Default::default() };
            let e = evaluate(w, &x, &cfg).map_err(|e| e.to_string())?;
            if !e.converged {
                return Err(format!("evaluation at x = {x} did not converge"));
            }
            let y = estimate_y_cr(&e).map_err(|e| e.to_string())?.value;
            Ok((e, y))
        });
        match entry {
            Ok((e, y)) => Ok((e, *y)),
            Err(m) => Err(Error::Numeric(m.clone())),
        }
    }
}

type Outcome = Result<(bool, String)>;

/// Runs every criterion; `progress` sees each result as it completes.
pub fn run_all(mc: &McConfig, mut progress: impl FnMut(&Criterion)) -> Vec<Criterion> {
    let mut shared = Shared { w: planar_maps(), critical: None, half: None };
    let checks: Vec<(&str, Box<dyn Fn(&mut Shared, &McConfig) -> Outcome>)> = vec![
        ("exact enumeration oracle", Box::new(|_, _| c1_enumeration())),
        ("planar-map coefficients", Box::new(|_, _| c2_planar())),
        ("critical point", Box::new(|_, _| c3_critical())),
        ("alpha universality", Box::new(|_, _| c4_alpha())),
        ("beta dichotomy", Box::new(|s, _| c5_beta(s))),
        ("nu probability, tail and drift", Box::new(|s, _| c6_nu(s))),
        ("Key formula exact", Box::new(|_, _| c7_key())),
        ("pointed sandwich", Box::new(|s, _| c8_sandwich(s))),
        ("fluctuation tails", Box::new(c9_ladder)),
        ("volume scaling", Box::new(c10_volume)),
        ("Lamperti roots", Box::new(|_, _| c11_lamperti())),
        ("sampler law", Box::new(c12_sampler)),
    ];
    let mut out = Vec::new();
    for (i, (name, f)) in checks.into_iter().enumerate() {
        let t0 = Instant::now();
        let (pass, detail) = f(&mut shared, mc).unwrap_or_else(|e| (false, format!("error: {e}")));
        let c = Criterion { id: i + 1, name: name.into(), pass, detail, seconds: t0.elapsed().as_secs_f64() };
        progress(&c);
        out.push(c);
    }
    out
}

fn c1_enumeration() -> Outcome {
    let mut compared = 0;
    for w in [planar_maps(), unit_spot_parking()] {
        let k = w.bound();
        let sol = compute_coefficients(&w, 5)?;
        for p in 0..=2 * k {
            if !sol.table.coeff(0, p).is_zero() {
                return Ok((false, format!("{}: nonzero [x^0]W_{p}", w.name())));
            }
            for n in 1..=5 {
                let brute: Rational = enumerate_fpt(&w, n, p)?.into_iter().map(|t| t.weight).sum();
                if brute != sol.table.coeff(n, p) {
                    return Ok((false, format!("{}: [x^{n}]W_{p} = {} vs {brute}", w.name(), sol.table.coeff(n, p))));
                }
                compared += 1;
            }
        }
    }
    Ok((true, format!("{compared} coefficients equal on both models")))
}

fn tutte(n: u64) -> BigInt {
    let fact = |k: u64| (1..=k).fold(BigInt::one(), |a, i| a * i);
    BigInt::from(2) * BigInt::from(3).pow(n as u32) * fact(2 * n) / (fact(n) * fact(n + 2))
}

fn c2_planar() -> Outcome {
    let sol = compute_coefficients(&planar_maps(), 4)?;
    let got: Vec<Rational> = (1..=4).map(|n| sol.table.coeff(n, 0)).collect();
    let want: Vec<Rational> = (1..=4).map(|n| Rational::from_integer(tutte(n))).collect();
    let text = got.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(", ");
    Ok((got == want, format!("[x^n]W_0 = {text}")))
}

fn w0(w: &WeightFunction, order: usize) -> Result<Vec<Rational>> {
    let sol = compute_coefficients(w, order)?;
    Ok((0..=order).map(|n| sol.table.coeff(n, 0)).collect())
}

fn c3_critical() -> Outcome {
    let est = estimate_x_cr(&w0(&planar_maps(), 200)?)?;
    let x = 0.5 * (est.x_cr_lo + est.x_cr_hi);
    let err = (x - 1.0 / 12.0).abs();
    Ok((err <= 1e-4, format!("x_cr = {x:.7} (|x - 1/12| = {err:.2e}, N = 200)")))
}

fn c4_alpha() -> Outcome {
    let a = fit_alpha(&w0(&planar_maps(), 400)?)?;
    let b = fit_alpha(&w0(&unit_spot_parking(), 400)?)?;
    let pass = (2.4..=2.6).contains(&a.alpha) && (2.3..=2.7).contains(&b.alpha);
    Ok((pass, format!("alpha = {:.4} (planar), {:.4} (unit spot), N = 400", a.alpha, b.alpha)))
}

fn c5_beta(s: &mut Shared) -> Outcome {
    let crit = fit_beta(s.at(false)?.0)?.exponent.value;
    let sub = fit_beta(s.at(true)?.0)?.exponent.value;
    let pass = (1.35..=1.65).contains(&sub) && (2.35..=2.65).contains(&crit);
    Ok((pass, format!("beta = {sub:.4} at x_cr/2, {crit:.4} at x_cr (P_max = {P_MAX})")))
}

fn measure(s: &mut Shared, half: bool) -> Result<StepMeasure> {
    let w = s.w.clone();
    let (e, y) = s.at(half)?;
    nu(&w, e, y, DEPTH)
}

fn c6_nu(s: &mut Shared) -> Outcome {
    let beta = fit_beta(s.at(false)?.0)?.exponent.value;
    let m = measure(s, false)?;
    let mass = m.total_mass();
    let tail = m.tail.as_ref().ok_or_else(|| Error::Numeric("no tail estimate".into()))?.exponent.value;
    let crit = drift_diagnostic(&m, DEPTH).verdict;
    let sub = drift_diagnostic(&measure(s, true)?, DEPTH).verdict;
    let pass = (mass - 1.0).abs() <= 1e-3
        && (tail - beta).abs() <= 0.2
        && crit == DriftVerdict::ZeroDrift
        && sub == DriftVerdict::InfiniteNegativeDrift;
    Ok((pass, format!("mass = {mass:.6}, tail exponent {tail:.4} vs beta {beta:.4}, drift {crit:?} / {sub:?}")))
}

fn c7_key() -> Outcome {
    let mut cases = 0;
    for w in [planar_maps(), unit_spot_parking()] {
        let k = w.bound();
        for p in k..=k + 3 {
            for t in 1..=3 {
                let v = walk::key_formula_exact(&w, p, t, 10)?;
                if !v.pass {
                    return Ok((false, format!("{} p = {p} t = {t}: {:?}", w.name(), v.first_mismatch)));
                }
                cases += 1;
            }
        }
        let m = walk::key_check_exact(&w, &walk::perturbed(&w), k + 1, 1, 10, KeyEvent::LocallyLargest)?;
        if m.pass {
            return Ok((false, format!("{}: perturbed weights not detected", w.name())));
        }
    }
    Ok((true, format!("{cases} cases equal to order 10; mutation detected on both models")))
}

fn c8_sandwich(s: &mut Shared) -> Outcome {
    let k = s.w.bound();
    let m = measure(s, false)?;
    let (e, y) = s.at(false)?;
    let r = walk::renewal(&m, 200)?;
    let (law, _) = walk::extended_marginal(&m, walk::TAIL_EXTENSION)?;
    let sw = walk::sandwich_check(&r, k, &law, m.depth * walk::TAIL_EXTENSION, e, y, 200, 1e-6)?;
    let bracket = walk::sqrt_bracket(|p| sw.w_circ[p], 20, 200);
    let pass = sw.pass && bracket <= 3.0;
    Ok((
        pass,
        format!(
            "{} violations over p <= 200{}, W°·√p bracket {bracket:.4}",
            sw.violations.len(),
            if sw.capped { " (upper bound capped)" } else { "" }
        ),
    ))
}

/// Ladder samples of criterion 9.
pub const LADDER_SAMPLES: usize = 1_000_000;

fn c9_ladder(s: &mut Shared, mc: &McConfig) -> Outcome {
    let m = measure(s, false)?;
    let step = walk::StepLaw::from_measure(&m)?;
    let lad = walk::ladder_mc(&step, LADDER_SAMPLES, super::LADDER_CAP, mc);
    let top = lad.censored_at.iter().copied().max().unwrap_or(0).max(500);
    let r = walk::renewal(&m, top)?;
    let tails = walk::ladder_tails(&lad, Some(&r), super::LADDER_HEIGHT_RANGE, super::LADDER_EPOCH_RANGE)?;
    let h = tails.height.exponent.value;
    let t = tails.epoch.exponent.value;
    let bracket = walk::sqrt_bracket(|p| r.h_pre[p], 10, 500);
    let pass = (0.4..=0.6).contains(&h) && (0.23..=0.43).contains(&t) && r.h_pre[0] == 1.0 && bracket <= 3.0;
    Ok((
        pass,
        format!(
            "H_1 exponent {h:.4}, T_1 exponent {t:.4} ({} censored of {LADDER_SAMPLES}), h_pre(0) = {}, h_pre·√p bracket {bracket:.4}",
            tails.censored, r.h_pre[0]
        ),
    ))
}

fn c10_volume(s: &mut Shared, mc: &McConfig) -> Outcome {
    let w = s.w.clone();
    let (e, _) = s.at(false)?;
    let sampler = Sampler::new(&w, e)?;
    let mut medians = Vec::new();
    let mut worst_abort: f64 = 0.0;
    let mut circ_ok = true;
    for p in [64, 128] {
        let b = volume_batch(&sampler, p, 10_000, mc, super::MAX_VERTICES)?;
        medians.push(b.median_vol());
        worst_abort = worst_abort.max(b.abort_rate);
        circ_ok &= b.stats.iter().all(|t| t.vol_circ <= t.vol);
    }
    let ratio = medians[1] / medians[0];
    let pass = (3.0..=5.5).contains(&ratio) && circ_ok && worst_abort < 0.01;
    Ok((
        pass,
        format!(
            "median Vol = {} (p = 64), {} (p = 128), ratio {ratio:.3}, abort rate {worst_abort:.4}, Vol° <= Vol: {circ_ok}",
            medians[0], medians[1]
        ),
    ))
}

fn c11_lamperti() -> Outcome {
    let a = lamperti::find_root(Branch::Subordinator, 1e-9)?;
    let b = lamperti::find_root(Branch::Compensated, 1e-9)?;
    let cf = lamperti::lk_closed_form_check(2.5, 1.0, 1e-8)?;
    let t1 = lamperti::tilt_proportionality(1.5, 999, 1e-10)?;
    let t2 = lamperti::tilt_proportionality(2.5, 999, 1e-10)?;
    let pass = (a.root - 1.5).abs() <= 1e-6
        && (b.root - 2.5).abs() <= 1e-6
        && a.sign_changes == 1
        && b.sign_changes == 1
        && cf.pass
        && t1.pass
        && t2.pass;
    Ok((
        pass,
        format!(
            "roots {:.9}, {:.9}; closed form |diff| = {:.1e}; tilt variation {:.1e}, {:.1e}",
            a.root,
            b.root,
            (cf.quadrature - cf.closed_form).abs(),
            t1.relative_variation,
            t2.relative_variation
        ),
    ))
}

/// Pearson statistic and p-value; bins with expected count below 5 are
/// pooled.
pub fn chi_square(observed: &[f64], expected: &[f64]) -> Result<(f64, f64, usize)> {
    let mut stat = 0.0;
    let mut bins = 0;
    let (mut po, mut pe) = (0.0, 0.0);
    for (&o, &e) in observed.iter().zip(expected) {
        if e < 5.0 {
            po += o;
            pe += e;
        } else {
            stat += (o - e).powi(2) / e;
            bins += 1;
        }
    }
    if pe > 0.0 {
        stat += (po - pe).powi(2) / pe;
        bins += 1;
    }
    if bins < 2 {
        return Err(Error::Numeric("chi-square needs two bins".into()));
    }
    let dist = ChiSquared::new((bins - 1) as f64).map_err(|e| Error::Numeric(e.to_string()))?;
    Ok((stat, dist.sf(stat), bins - 1))
}

/// Offspring and small-tree samples of criterion 12.
pub const SAMPLER_SAMPLES: usize = 100_000;

fn c12_sampler(s: &mut Shared, mc: &McConfig) -> Outcome {
    let w = s.w.clone();
    let (e, _) = s.at(false)?;
    let sampler = Sampler::new(&w, e)?;
    let mut details = Vec::new();
    let mut pass = true;
    for p in [5usize, 20] {
        let law = offspring_law(&w, e, p)?;
        let index: BTreeMap<&[usize], usize> =
            law.atoms.iter().enumerate().map(|(i, (k, _))| (k.as_slice(), i)).collect();
        let counts = run_chunks(mc, SAMPLER_SAMPLES, |rng, n| -> Result<Vec<f64>> {
            let mut c = vec![0.0; law.atoms.len()];
            for _ in 0..n {
                let kids = sampler.offspring(p, rng)?;
                let i = index.get(kids.as_slice()).ok_or_else(|| Error::Numeric("tuple outside π_p".into()))?;
                c[*i] += 1.0;
            }
            Ok(c)
        });
        let mut obs = vec![0.0; law.atoms.len()];
        for c in counts {
            for (o, v) in obs.iter_mut().zip(c?) {
                *o += v;
            }
        }
        let expected: Vec<f64> =
            law.atoms.iter().map(|(_, pr)| pr / law.total * SAMPLER_SAMPLES as f64).collect();
        let (stat, pv, df) = chi_square(&obs, &expected)?;
        pass &= pv > 0.01;
        details.push(format!("π_{p}: chi2 = {stat:.1}, df = {df}, p-value {pv:.3}"));
    }
    // trees with at most 4 vertices at root flux K
    let k = w.bound();
    let x = e.x.clone();
    let wp = e.w(k);
    let mut expected: BTreeMap<String, f64> = BTreeMap::new();
    for n in 1..=4 {
        let xn = x.to_f64().unwrap_or(f64::NAN).powi(n as i32);
        for item in enumerate_fpt(&w, n, k)? {
            *expected.entry(item.labeled.to_text()).or_default() += item.weight.to_f64().unwrap_or(f64::NAN) * xn / wp;
        }
    }
    let found = run_chunks(mc, SAMPLER_SAMPLES, |rng, n| -> Result<BTreeMap<String, usize>> {
        let mut c = BTreeMap::new();
        for _ in 0..n {
            if let Ok(t) = sampler.sample_tree(k, rng, 4)? {
                *c.entry(t.to_text()).or_insert(0) += 1;
            }
        }
        Ok(c)
    });
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for c in found {
        for (t, v) in c? {
            *counts.entry(t).or_default() += v;
        }
    }
    let n = SAMPLER_SAMPLES as f64;
    let mut worst: f64 = 0.0;
    for (t, &pr) in &expected {
        let freq = counts.get(t).copied().unwrap_or(0) as f64 / n;
        let sd = (pr * (1.0 - pr) / n).sqrt();
        worst = worst.max((freq - pr).abs() / sd);
    }
    let unexpected = counts.keys().filter(|t| !expected.contains_key(*t)).count();
    pass &= worst <= 3.0 && unexpected == 0;
    details.push(format!("{} small trees, max deviation {worst:.2}σ", expected.len()));
    Ok((pass, details.join("; ")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tutte_numbers() {
        let v: Vec<BigInt> = (1..=4).map(tutte).collect();
        assert_eq!(v, [2, 9, 54, 378].map(BigInt::from));
    }

    #[test]
    fn chi_square_pools_small_bins() {
        let (stat, pv, df) = chi_square(&[50.0, 50.0, 1.0, 0.0], &[50.0, 50.0, 0.5, 0.5]).unwrap();
        assert_eq!(df, 2);
        assert!(stat.abs() < 1e-12);
        assert!((pv - 1.0).abs() < 1e-12);
    }
}
