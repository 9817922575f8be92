//! The `ν`-random walk: sampling, the Key formula (exact and Monte Carlo),
//! its pointed variant, renewal functions, ladder variables and the sandwich
//! bounds on `W̃°`.
//!
//! Exact Key-formula checks never touch `y`. For a step from flux `S` to
//! `S'` with siblings `Y`, flux conservation gives
//! `c - sum s + sum Y = S - S'`, so the `y` powers of a `ν̂` atom cancel
//! against `W̃_{S'}/W̃_S`. Multiplying both sides by `W_{S_0}` leaves the
//! `y`-free form checked here coefficientwise in `x`:
//! `sum_tree prod (x w prod W_Y) W_{S_t} = sum_walk prod (x (k+1) w prod W_Y) W_{S_t}`.
//! Cylinders are matched on (increment, sibling multiset): both sides sum
//! over ordered sibling tuples, and exchangeability turns the choice of the
//! position of the followed child into the factor `k + 1`.

use std::collections::BTreeMap;

use num_traits::{ToPrimitive, Zero};
use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;
use serde::Serialize;

use crate::asymptotics::{ols, Estimate};
use crate::error::{Error, Result};
use crate::mc::{mean_stderr, run_chunks, McConfig};
use crate::measure::StepMeasure;
use crate::model::{Rational, WeightFunction};
use crate::series::{Series, SeriesTable};
use crate::solver::{compute_coefficients, compute_pointed, NumericEvaluation};
use crate::trees::{DecoRepro, Sampler};

/// `ν̂` restricted to its atoms above `-M`, normalized for sampling.
pub struct WalkLaw {
    pub bound: usize,
    pub depth: usize,
    atoms: Vec<(i64, Vec<usize>)>,
    alias: WeightedAliasIndex<f64>,
    /// Total weight of the retained atoms.
    pub atom_mass: f64,
}

impl WalkLaw {
    pub fn from_measure(m: &StepMeasure) -> Result<Self> {
        let weights: Vec<f64> = m.atoms.iter().map(|a| a.weight).collect();
        let atom_mass = weights.iter().sum();
        let alias = WeightedAliasIndex::new(weights).map_err(|e| Error::Numeric(format!("ν̂ atoms: {e}")))?;
        Ok(Self {
            bound: m.bound,
            depth: m.depth,
            atoms: m.atoms.iter().map(|a| (a.q, a.siblings.clone())).collect(),
            alias,
            atom_mass,
        })
    }

    /// One `(increment, siblings)` draw.
    pub fn draw(&self, rng: &mut impl Rng) -> (i64, &[usize]) {
        let (q, s) = &self.atoms[self.alias.sample(rng)];
        (*q, s)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct WalkPath {
    pub trace: DecoRepro,
    /// The walk went below 0 and was stopped.
    pub killed: bool,
}

/// `steps` i.i.d. draws from the normalized `ν̂` started at `p`; stops early
/// when the walk leaves `[0, ∞)`.
pub fn sample_walk(law: &WalkLaw, p: usize, steps: usize, rng: &mut impl Rng) -> WalkPath {
    let mut trace = DecoRepro { s: vec![p], ..Default::default() };
    let mut s = p as i64;
    for _ in 0..steps {
        let (q, sibs) = law.draw(rng);
        s += q;
        if s < 0 {
            trace.tau = trace.steps();
            return WalkPath { trace, killed: true };
        }
        trace.ties.push(sibs.iter().any(|&y| y as i64 == s));
        trace.siblings.push(sibs.to_vec());
        trace.s.push(s as usize);
    }
    trace.tau = trace.steps();
    WalkPath { trace, killed: false }
}

/// Events compared by the exact Key-formula machinery.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum KeyEvent {
    /// Locally largest exploration without ties and `S >= K`.
    LocallyLargest,
    /// Branch to a pointed vertex of flux `K`, restricted to `S > K`.
    PointedStrict,
    /// Branch to a pointed vertex, no restriction (inequality).
    PointedAll,
}

impl KeyEvent {
    fn floor(self, k: usize) -> i64 {
        match self {
            KeyEvent::LocallyLargest => k as i64,
            KeyEvent::PointedStrict => k as i64 + 1,
            KeyEvent::PointedAll => 0,
        }
    }
}

/// Step cylinders: `(next flux, sorted siblings) -> series`.
type StepMap = BTreeMap<(usize, Vec<usize>), Series>;

fn x_times(wt: &Rational, order: usize) -> Series {
    Series::monomial(1, order).scale(wt)
}

/// Tree side: every entry, every admissible ordered child tuple and every
/// choice of followed child allowed by the event.
fn tree_steps(w: &WeightFunction, table: &SeriesTable, s: usize, event: KeyEvent) -> StepMap {
    let k = w.bound();
    let order = table.order();
    let floor = event.floor(k);
    let mut out = StepMap::new();
    for (e, wt) in w.entries() {
        if e.arity() == 0 {
            continue;
        }
        let base = x_times(wt, order);
        WeightFunction::for_each_children(e, s, s + k, |kids| {
            let picks: Vec<usize> = match event {
                KeyEvent::LocallyLargest => {
                    let max = *kids.iter().max().expect("non-empty");
                    let first = kids.iter().position(|&f| f == max).expect("max exists");
                    if kids.iter().filter(|&&f| f == max).count() > 1 {
                        return;
                    }
                    vec![first]
                }
                _ => (0..kids.len()).collect(),
            };
            for j in picks {
                let next = kids[j];
                if (next as i64) < floor {
                    continue;
                }
                let mut sibs: Vec<usize> = kids.iter().enumerate().filter(|&(i, _)| i != j).map(|(_, &f)| f).collect();
                let mut v = base.clone();
                for &y in &sibs {
                    v = &v * &table.get(y);
                }
                sibs.sort_unstable();
                add_into(&mut out, (next, sibs), v);
            }
        });
    }
    out
}

/// Walk side: canonical `ν̂` atoms (followed child first) with the factor
/// `k + 1`, independent of whether the next flux can carry `s_0` spots.
fn walk_steps(w: &WeightFunction, table: &SeriesTable, s: usize, event: KeyEvent) -> StepMap {
    let k = w.bound();
    let order = table.order();
    let floor = event.floor(k);
    let mut out = StepMap::new();
    for (e, wt) in w.entries() {
        if e.arity() == 0 {
            continue;
        }
        let arity = e.arity();
        let s0 = e.spots[0] as i64;
        let top = s as i64 - e.cars as i64 + s0;
        if top < floor {
            continue;
        }
        let weight = Rational::from_integer(arity.into()) * wt;
        let base = x_times(&weight, order);
        let sib_spots = &e.spots[1..];
        let r_max = (top - floor) as usize;
        let mut buf = vec![0usize; arity - 1];
        each_siblings(sib_spots, r_max, 0, 0, &mut buf, &mut |sibs, r| {
            let next = top - r as i64;
            if event == KeyEvent::LocallyLargest && sibs.iter().any(|&y| y as i64 >= next) {
                return;
            }
            let mut v = base.clone();
            for &y in sibs {
                v = &v * &table.get(y);
            }
            let mut sorted = sibs.to_vec();
            sorted.sort_unstable();
            add_into(&mut out, (next as usize, sorted), v);
        });
    }
    out
}

fn each_siblings(
    spots: &[usize],
    r_left: usize,
    used: usize,
    i: usize,
    buf: &mut [usize],
    f: &mut impl FnMut(&[usize], usize),
) {
    if i == spots.len() {
        f(buf, used);
        return;
    }
    for e in 0..=r_left {
        buf[i] = spots[i] + e;
        each_siblings(spots, r_left - e, used + e, i + 1, buf, f);
    }
}

fn add_into(map: &mut StepMap, key: (usize, Vec<usize>), v: Series) {
    if v.is_zero() {
        return;
    }
    match map.get_mut(&key) {
        Some(acc) => *acc = &*acc + &v,
        None => {
            map.insert(key, v);
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct KeyVerdict {
    pub event: KeyEvent,
    pub model: String,
    pub p: usize,
    pub t: usize,
    pub order: usize,
    /// Cylinders (paths) compared.
    pub paths: usize,
    /// Coefficients of the summed tree side, `n = 0..=order`.
    pub lhs: Vec<String>,
    pub rhs: Vec<String>,
    pub tolerance: f64,
    pub pass: bool,
    pub first_mismatch: Option<String>,
}

/// Largest order accepted by the exact checks.
pub const KEY_MAX_ORDER: usize = 12;

/// Exact Key formula for the locally largest exploration.
pub fn key_formula_exact(w: &WeightFunction, p: usize, t: usize, order: usize) -> Result<KeyVerdict> {
    key_check_exact(w, w, p, t, order, KeyEvent::LocallyLargest)
}

/// Exact pointed Key formula: equality for [`KeyEvent::PointedStrict`],
/// coefficientwise `tree <= walk` for [`KeyEvent::PointedAll`].
pub fn pointed_key_check(w: &WeightFunction, p: usize, t: usize, order: usize, event: KeyEvent) -> Result<KeyVerdict> {
    if event == KeyEvent::LocallyLargest {
        return Err(Error::Argument("pointed check needs a pointed event".into()));
    }
    key_check_exact(w, w, p, t, order, event)
}

/// Same comparison with the walk side built from `nu_weights` (mutation
/// tests pass a perturbed copy of `w`).
pub fn key_check_exact(
    w: &WeightFunction,
    nu_weights: &WeightFunction,
    p: usize,
    t: usize,
    order: usize,
    event: KeyEvent,
) -> Result<KeyVerdict> {
    let k = w.bound();
    if order == 0 || order > KEY_MAX_ORDER {
        return Err(Error::Budget(format!("order must be in 1..={KEY_MAX_ORDER}")));
    }
    if event == KeyEvent::LocallyLargest && p < k {
        return Err(Error::Argument(format!("p = {p} below K = {k}")));
    }
    if t > 3 {
        return Err(Error::Budget("t <= 3".into()));
    }
    if !w.is_exchangeable() {
        return Err(Error::Model("the Key formula needs an exchangeable weight function".into()));
    }
    let sol = compute_coefficients(w, order)?;
    let end_table = match event {
        KeyEvent::LocallyLargest => sol.table.clone(),
        _ => compute_pointed(&sol)?.pointed_circ.expect("pointed table"),
    };
    let table = &sol.table;
    let mut tree_memo: BTreeMap<usize, StepMap> = BTreeMap::new();
    let mut walk_memo: BTreeMap<usize, StepMap> = BTreeMap::new();
    let mut state = Dfs {
        lhs: Series::zero(order),
        rhs: Series::zero(order),
        paths: 0,
        mismatch: None,
        inequality: event == KeyEvent::PointedAll,
    };
    let start_ok = (p as i64) >= event.floor(k);
    if start_ok {
        let one = Series::one(order);
        dfs(
            w,
            nu_weights,
            table,
            &end_table,
            event,
            &mut tree_memo,
            &mut walk_memo,
            &mut vec![p],
            t,
            &one,
            &one,
            &mut state,
        );
    }
    let lhs: Vec<String> = state.lhs.coeffs().iter().map(|c| c.to_string()).collect();
    let rhs: Vec<String> = state.rhs.coeffs().iter().map(|c| c.to_string()).collect();
    let totals_ok = if state.inequality {
        state.lhs.coeffs().iter().zip(state.rhs.coeffs()).all(|(a, b)| a <= b)
    } else {
        state.lhs == state.rhs
    };
    Ok(KeyVerdict {
        event,
        model: w.name().to_string(),
        p,
        t,
        order,
        paths: state.paths,
        lhs,
        rhs,
        tolerance: 0.0,
        pass: state.mismatch.is_none() && totals_ok,
        first_mismatch: state.mismatch,
    })
}

struct Dfs {
    lhs: Series,
    rhs: Series,
    paths: usize,
    mismatch: Option<String>,
    inequality: bool,
}

#[allow(clippy::too_many_arguments)]
fn dfs(
    w: &WeightFunction,
    nu_w: &WeightFunction,
    table: &SeriesTable,
    end_table: &SeriesTable,
    event: KeyEvent,
    tree_memo: &mut BTreeMap<usize, StepMap>,
    walk_memo: &mut BTreeMap<usize, StepMap>,
    path: &mut Vec<usize>,
    left: usize,
    a: &Series,
    b: &Series,
    st: &mut Dfs,
) {
    let s = *path.last().expect("non-empty path");
    if left == 0 {
        let end = end_table.get(s);
        let (a, b) = (a * &end, b * &end);
        st.paths += 1;
        let ok = if st.inequality { a.coeffs().iter().zip(b.coeffs()).all(|(x, y)| x <= y) } else { a == b };
        if !ok && st.mismatch.is_none() {
            let n = a.coeffs().iter().zip(b.coeffs()).position(|(x, y)| x != y).unwrap_or(0);
            st.mismatch = Some(format!(
                "path {:?}: [x^{n}] tree side {} vs walk side {}",
                path,
                a.coeff(n),
                b.coeff(n)
            ));
        }
        st.lhs = &st.lhs + &a;
        st.rhs = &st.rhs + &b;
        return;
    }
    let tree = tree_memo.entry(s).or_insert_with(|| tree_steps(w, table, s, event)).clone();
    let walk = walk_memo.entry(s).or_insert_with(|| walk_steps(nu_w, table, s, event)).clone();
    let zero = Series::zero(table.order());
    let mut keys: Vec<&(usize, Vec<usize>)> = tree.keys().chain(walk.keys()).collect();
    keys.sort();
    keys.dedup();
    for key in keys {
        let ta = tree.get(key).unwrap_or(&zero);
        let wb = walk.get(key).unwrap_or(&zero);
        path.push(key.0);
        dfs(w, nu_w, table, end_table, event, tree_memo, walk_memo, path, left - 1, &(a * ta), &(b * wb), st);
        path.pop();
    }
}

/// A copy of `w` with the first entry of positive arity scaled by
/// `1 + 1/1000` (mutation tests).
pub fn perturbed(w: &WeightFunction) -> WeightFunction {
    let mut out = w.clone();
    let (e, v) = w.entries().find(|(e, _)| e.arity() >= 1).map(|(e, v)| (e.clone(), v.clone())).expect("branching entry");
    out.set(e.cars, &e.spots, v * Rational::new(1001.into(), 1000.into())).expect("same bound");
    out
}

#[derive(Clone, Debug, Serialize)]
pub struct KeyMc {
    pub p: usize,
    pub t: usize,
    pub tree: Estimate,
    pub walk: Estimate,
    pub tree_aborts: usize,
    pub samples: usize,
    pub mc: McConfig,
    pub pass: bool,
}

/// Monte Carlo Key formula with `f = 1`: `P_p(L_t, S >= K)` from the tree
/// sampler against `E^RW_p[1_{L_t, S >= K} W̃_{S_t}/W̃_{S_0}]`.
#[allow(clippy::too_many_arguments)]
pub fn key_formula_mc(
    sampler: &Sampler<'_>,
    eval: &NumericEvaluation,
    nu_hat: &StepMeasure,
    p: usize,
    t: usize,
    samples: usize,
    mc: &McConfig,
) -> Result<KeyMc> {
    let k = sampler.bound();
    if nu_hat.depth < p + k * t {
        return Err(Error::Argument(format!("ν̂ depth {} below p + K t = {}", nu_hat.depth, p + k * t)));
    }
    let law = WalkLaw::from_measure(nu_hat)?;
    let y = nu_hat.y;
    let w0 = eval.tilde(p, y);
    let tree_chunks = run_chunks(mc, samples, |rng, n| -> Result<(Vec<f64>, usize)> {
        let mut xs = Vec::with_capacity(n);
        let mut aborts = 0;
        for _ in 0..n {
            match sampler.sample_branch(p, t, rng)? {
                Ok(d) => xs.push(f64::from(u8::from(in_event(&d, t, k)))),
                Err(_) => aborts += 1,
            }
        }
        Ok((xs, aborts))
    });
    let walk_mc = McConfig { seed: mc.seed ^ 0x005e_ed0f_5a1c, ..*mc };
    let scale = law.atom_mass.powi(t as i32);
    let walk_chunks = run_chunks(&walk_mc, samples, |rng, n| {
        (0..n)
            .map(|_| {
                let path = sample_walk(&law, p, t, rng);
                if path.killed || !in_event(&path.trace, t, k) {
                    0.0
                } else {
                    scale * eval.tilde(*path.trace.s.last().expect("path"), y) / w0
                }
            })
            .collect::<Vec<f64>>()
    });
    let mut xs = Vec::new();
    let mut tree_aborts = 0;
    for c in tree_chunks {
        let (v, a) = c?;
        xs.extend(v);
        tree_aborts += a;
    }
    let ys: Vec<f64> = walk_chunks.into_iter().flatten().collect();
    let (ta, tse) = mean_stderr(&xs);
    let (wa, wse) = mean_stderr(&ys);
    let pass = (ta - wa).abs() <= 3.0 * tse.hypot(wse);
    Ok(KeyMc {
        p,
        t,
        tree: Estimate { value: ta, stderr: tse },
        walk: Estimate { value: wa, stderr: wse },
        tree_aborts,
        samples,
        mc: *mc,
        pass,
    })
}

fn in_event(d: &DecoRepro, t: usize, k: usize) -> bool {
    d.steps() == t && d.s.iter().all(|&s| s >= k) && d.no_ties()
}

/// Increment law `ν` on `[-M, K]` plus a Pareto tail below `-M`, normalized.
pub struct StepLaw {
    pub bound: usize,
    pub depth: usize,
    pub tail_exponent: f64,
    pub tail_mass: f64,
    alias: WeightedAliasIndex<f64>,
}

impl StepLaw {
    pub fn from_measure(m: &StepMeasure) -> Result<Self> {
        let tail = m.tail.as_ref().ok_or_else(|| Error::Numeric("ν has no tail estimate".into()))?;
        let mut weights = m.marginal.clone();
        weights.push(tail.mass);
        let alias = WeightedAliasIndex::new(weights).map_err(|e| Error::Numeric(format!("ν marginal: {e}")))?;
        let total = m.total_mass();
        Ok(Self {
            bound: m.bound,
            depth: m.depth,
            tail_exponent: tail.exponent.value,
            tail_mass: tail.mass / total,
            alias,
        })
    }

    pub fn sample(&self, rng: &mut impl Rng) -> i64 {
        let i = self.alias.sample(rng);
        if i <= self.depth + self.bound {
            return i as i64 - self.depth as i64;
        }
        // continuous Pareto on (M + 1/2, ∞) with density ∝ x^{-beta}, rounded
        let u: f64 = 1.0 - rng.random::<f64>();
        let x = (self.depth as f64 + 0.5) * u.powf(-1.0 / (self.tail_exponent - 1.0));
        -(x.round().min(i64::MAX as f64 / 4.0) as i64)
    }
}

/// `ν` on `[-D, K]` with `D = factor·M`, the Pareto tail filling `(M, D]`,
/// normalized to total mass 1; returns the marginal (index `q + D`) and the
/// mass below `-D`.
pub fn extended_marginal(m: &StepMeasure, factor: usize) -> Result<(Vec<f64>, f64)> {
    let tail = m.tail.as_ref().ok_or_else(|| Error::Numeric("ν has no tail estimate".into()))?;
    let beta = tail.exponent.value;
    let big_m = m.depth;
    let d = big_m * factor.max(1);
    let total = m.total_mass();
    let anchor = m.nu(-(big_m as i64));
    let mut out = vec![0.0; d + m.bound + 1];
    for q in m.q_range() {
        out[(q + d as i64) as usize] = m.nu(q) / total;
    }
    let mut filled = 0.0;
    for j in big_m + 1..=d {
        let v = anchor * (big_m as f64 / j as f64).powf(beta) / total;
        out[d - j] = v;
        filled += v;
    }
    let below = (tail.mass / total - filled).max(0.0);
    Ok((out, below))
}

#[derive(Clone, Debug, Serialize)]
pub struct RenewalTables {
    pub depth: usize,
    /// Strict ascending ladder heights `P(H^+ = h)`, `h = 1..=K`.
    pub ascending: Vec<f64>,
    /// Strict descending ladder heights `P(H_1 = -j)` at index `j`.
    pub descending: Vec<f64>,
    /// `h_pre(p)`, `p = 0..=horizon`.
    pub h_pre: Vec<f64>,
    /// `H_ren(p) = sum_{i <= p} h_pre(i)`.
    pub h_ren: Vec<f64>,
    /// Descending ladder mass lost below `-D` (the miss state).
    pub miss: f64,
    pub iterations: usize,
    pub residual: f64,
    /// `P(H_1 <= -j)` including the miss mass.
    #[serde(skip)]
    suffix: Vec<f64>,
}

impl RenewalTables {
    /// `h_pre(p)` with `h_pre(p) = 0` for `p < 0`.
    pub fn h(&self, p: i64) -> f64 {
        if p < 0 {
            0.0
        } else {
            self.h_pre.get(p as usize).copied().unwrap_or(f64::NAN)
        }
    }

    /// `P(H_1 < -x)`.
    pub fn descending_tail(&self, x: usize) -> f64 {
        self.suffix.get(x + 1).copied().unwrap_or(self.miss)
    }

    /// `P_s(first value below 0 is < -x)` for a walk at `s >= 0`; needs
    /// `h_pre` up to `s`.
    pub fn undershoot_tail(&self, s: usize, x: usize) -> f64 {
        let cum = |j: usize| self.suffix.get(j).copied().unwrap_or(self.miss);
        (0..=s).map(|m| self.h_pre[m] * cum(s + 1 - m + x)).sum()
    }
}

/// Wiener–Hopf factors of `ν` (index `q + D`): `1 - ν̂ = (1 - A)(1 - U)`
/// with `A` the strict ascending and `U` the weak descending ladder height
/// laws. Given `A`, `u_m = ν(-m) + sum_h a_h u_{m+h}` by backward recursion;
/// given `U`, `a_h (1 - u_0) = ν(h) + sum_{m >= 1} u_m a_{h+m}`. The fixed
/// point in `a` is found by Newton with a finite-difference Jacobian.
pub fn ladder_laws(nu: &[f64], depth: usize, bound: usize) -> Result<(Vec<f64>, Vec<f64>, usize, f64)> {
    let at = |q: i64| -> f64 {
        let i = q + depth as i64;
        if i < 0 || i as usize >= nu.len() {
            0.0
        } else {
            nu[i as usize]
        }
    };
    let u_of = |a: &[f64]| -> Vec<f64> {
        let mut u = vec![0.0; depth + bound + 1];
        for m in (0..=depth).rev() {
            let mut v = at(-(m as i64));
            for h in 1..=bound {
                v += a[h - 1] * u[m + h];
            }
            u[m] = v;
        }
        u
    };
    let step = |a: &[f64]| -> Vec<f64> {
        let u = u_of(a);
        let mut next = vec![0.0; bound];
        for h in (1..=bound).rev() {
            let mut v = at(h as i64);
            for m in 1..=bound - h {
                v += u[m] * next[h + m - 1];
            }
            next[h - 1] = v / (1.0 - u[0]).max(f64::MIN_POSITIVE);
        }
        next
    };
    let g = |a: &[f64]| -> Vec<f64> { step(a).iter().zip(a).map(|(n, o)| n - o).collect() };
    // A probability law with mean >= 0 has a proper ascending ladder law.
    // At zero drift the root is double, so iterates are pinned to sum a = 1
    // rather than left to stall at a defect near sqrt(eps).
    let mass: f64 = nu.iter().sum();
    let mean: f64 = nu.iter().enumerate().map(|(i, v)| (i as f64 - depth as f64) * v).sum();
    let proper = (mass - 1.0).abs() <= 1e-12 && mean >= -1e-12;
    let project = |a: Vec<f64>| if proper { normalize(a) } else { project(a) };
    let mut a = vec![0.0; bound];
    // a few monotone sweeps from 0 before Newton
    for _ in 0..50 {
        a = project(step(&a));
    }
    let mut iterations = 50;
    let mut res = g(&a).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    while res > 1e-15 && iterations < 400 {
        iterations += 1;
        let g0 = g(&a);
        let mut jac = vec![vec![0.0; bound]; bound];
        for j in 0..bound {
            let h = 1e-7 * a[j].abs().max(1e-3);
            let mut b = a.clone();
            b[j] += h;
            let gj = g(&b);
            for i in 0..bound {
                jac[i][j] = (gj[i] - g0[i]) / h;
            }
        }
        let delta = solve_dense(jac, g0.iter().map(|v| -v).collect())?;
        let mut lambda = 1.0;
        loop {
            let cand = project(a.iter().zip(&delta).map(|(x, d)| (x + lambda * d).max(0.0)).collect());
            let r = g(&cand).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if r < res || lambda < 1e-6 {
                a = cand;
                res = r;
                break;
            }
            lambda *= 0.5;
        }
        if lambda < 1e-6 {
            // Newton stalled: fall back to plain sweeps
            for _ in 0..20 {
                a = project(step(&a));
            }
            res = g(&a).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        }
    }
    let u = u_of(&a);
    Ok((a, u, iterations, res))
}

/// Ladder height laws are sub-probabilities: rescale onto `sum a <= 1`.
fn project(mut a: Vec<f64>) -> Vec<f64> {
    let total: f64 = a.iter().sum();
    if total > 1.0 {
        a.iter_mut().for_each(|v| *v /= total);
    }
    a
}

/// Rescales onto `sum a = 1`.
fn normalize(mut a: Vec<f64>) -> Vec<f64> {
    let total: f64 = a.iter().sum();
    if total > 0.0 {
        a.iter_mut().for_each(|v| *v /= total);
    }
    a
}

fn solve_dense(mut m: Vec<Vec<f64>>, mut b: Vec<f64>) -> Result<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let piv = (c..n).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs())).expect("non-empty");
        if m[piv][c].abs() < 1e-300 {
            return Err(Error::Numeric("singular Jacobian".into()));
        }
        m.swap(c, piv);
        b.swap(c, piv);
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            for k in c..n {
                m[r][k] -= f * m[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| m[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / m[r][r];
    }
    Ok(x)
}

/// Default extension factor of `ν` below `-M` for ladder computations.
pub const TAIL_EXTENSION: usize = 16;

/// Pre-renewal and renewal functions up to `horizon`.
pub fn renewal(m: &StepMeasure, horizon: usize) -> Result<RenewalTables> {
    let (nu, _below) = extended_marginal(m, TAIL_EXTENSION)?;
    let depth = m.depth * TAIL_EXTENSION;
    renewal_from(&nu, depth, m.bound, horizon)
}

/// [`renewal`] from an explicit increment law on `[-D, K]` (index `q + D`).
pub fn renewal_from(nu: &[f64], depth: usize, bound: usize, horizon: usize) -> Result<RenewalTables> {
    let (a, u, iterations, residual) = ladder_laws(nu, depth, bound)?;
    let denom = 1.0 - u[0];
    let mut descending = vec![0.0; depth + 1];
    for j in 1..=depth {
        descending[j] = u[j] / denom;
    }
    let miss = (1.0 - descending.iter().sum::<f64>()).max(0.0);
    let mut h_pre = vec![0.0; horizon + 1];
    h_pre[0] = 1.0;
    for p in 1..=horizon {
        h_pre[p] = (1..=p.min(depth)).map(|j| descending[j] * h_pre[p - j]).sum();
    }
    let mut h_ren = Vec::with_capacity(horizon + 1);
    let mut acc = 0.0;
    for v in &h_pre {
        acc += v;
        h_ren.push(acc);
    }
    let mut suffix = vec![miss; depth + 2];
    for j in (0..=depth).rev() {
        suffix[j] = suffix[j + 1] + descending[j];
    }
    Ok(RenewalTables { depth, ascending: a, descending, h_pre, h_ren, miss, iterations, residual, suffix })
}

#[derive(Clone, Debug, Serialize)]
pub struct RenewalSensitivity {
    /// Largest relative change of `h_pre` on `[0, horizon]` between depth
    /// `M` and `M/2`.
    pub max_relative_change: f64,
    pub miss_full: f64,
    pub miss_half: f64,
}

pub fn renewal_sensitivity(full: &StepMeasure, half: &StepMeasure, horizon: usize) -> Result<RenewalSensitivity> {
    let a = renewal(full, horizon)?;
    let b = renewal(half, horizon)?;
    let max_relative_change =
        a.h_pre.iter().zip(&b.h_pre).map(|(x, y)| ((x - y) / x).abs()).fold(0.0f64, f64::max);
    Ok(RenewalSensitivity { max_relative_change, miss_full: a.miss, miss_half: b.miss })
}

#[derive(Clone, Debug, Serialize)]
pub struct LadderSamples {
    /// `H_1` (negative) of the uncensored samples.
    pub heights: Vec<i64>,
    /// `T_1`, or `cap + 1` for censored samples.
    pub epochs: Vec<u64>,
    /// Positions of the censored walks at time `cap`.
    pub censored_at: Vec<usize>,
    pub censored: usize,
    pub cap: u64,
    pub mc: McConfig,
}

/// First strict descending ladder `(H_1, T_1)` from 0, walks stopped after
/// `cap` steps (censored).
pub fn ladder_mc(step: &StepLaw, samples: usize, cap: u64, mc: &McConfig) -> LadderSamples {
    let chunks = run_chunks(mc, samples, |rng, n| {
        let mut hs = Vec::with_capacity(n);
        let mut ts = Vec::with_capacity(n);
        let mut cs = Vec::new();
        for _ in 0..n {
            let mut s = 0i64;
            let mut t = 0u64;
            loop {
                t += 1;
                s += step.sample(rng);
                if s < 0 {
                    hs.push(s);
                    ts.push(t);
                    break;
                }
                if t >= cap {
                    ts.push(cap + 1);
                    cs.push(s as usize);
                    break;
                }
            }
        }
        (hs, ts, cs)
    });
    let mut heights = Vec::with_capacity(samples);
    let mut epochs = Vec::with_capacity(samples);
    let mut censored_at = Vec::new();
    for (h, t, c) in chunks {
        heights.extend(h);
        epochs.extend(t);
        censored_at.extend(c);
    }
    let censored = censored_at.len();
    LadderSamples { heights, epochs, censored_at, censored, cap, mc: *mc }
}

#[derive(Clone, Debug, Serialize)]
pub struct TailFit {
    pub grid: Vec<f64>,
    pub tail: Vec<f64>,
    /// Decay exponent `a` in `tail ≈ C x^{-a}`.
    pub exponent: Estimate,
}

fn fit_tail(grid: Vec<f64>, tail: Vec<f64>) -> Result<TailFit> {
    let pts: Vec<(f64, f64)> =
        grid.iter().zip(&tail).filter(|(_, &t)| t > 0.0).map(|(&x, &t)| (x.ln(), t.ln())).collect();
    let f = ols(&pts)?;
    Ok(TailFit { grid, tail, exponent: Estimate { value: -f.slope, stderr: f.slope_se } })
}

#[derive(Clone, Debug, Serialize)]
pub struct LadderTails {
    /// `P(H_1 < -x)` on a dyadic grid; censored walks contribute their
    /// exact conditional undershoot tail when renewal tables are given and
    /// count as `H_1 >= -x` otherwise.
    pub height: TailFit,
    /// Same grid with every censored walk counted as `H_1 < -x`.
    pub height_upper: Vec<f64>,
    /// `P(T_1 > n)` on a dyadic grid.
    pub epoch: TailFit,
    pub samples: usize,
    pub censored: usize,
}

/// Dyadic-grid tail fits; `H_1` over `x ∈ [2^h_lo, 2^h_hi]`, `T_1` over
/// `n ∈ [2^t_lo, 2^t_hi]` (censored walks count as `T_1 > n`). With
/// `completion`, `h_pre` must reach the highest censored position.
pub fn ladder_tails(
    s: &LadderSamples,
    completion: Option<&RenewalTables>,
    h_range: (u32, u32),
    t_range: (u32, u32),
) -> Result<LadderTails> {
    let total = s.epochs.len() as f64;
    let hgrid: Vec<f64> = (h_range.0..=h_range.1).map(|e| f64::from(1u32 << e)).collect();
    let raw: Vec<f64> =
        hgrid.iter().map(|&x| s.heights.iter().filter(|&&h| (h as f64) < -x).count() as f64 / total).collect();
    let height_upper = raw.iter().map(|v| v + s.censored as f64 / total).collect();
    let htail = match completion {
        Some(r) => {
            let top = s.censored_at.iter().copied().max().unwrap_or(0);
            if r.h_pre.len() <= top {
                return Err(Error::Argument(format!("renewal horizon below censored position {top}")));
            }
            raw.iter()
                .zip(&hgrid)
                .map(|(v, &x)| v + s.censored_at.iter().map(|&c| r.undershoot_tail(c, x as usize)).sum::<f64>() / total)
                .collect()
        }
        None => raw,
    };
    let tgrid: Vec<f64> = (t_range.0..=t_range.1).map(|e| f64::from(1u32 << e)).collect();
    let ttail = tgrid.iter().map(|&n| s.epochs.iter().filter(|&&t| t as f64 > n).count() as f64 / total).collect();
    Ok(LadderTails {
        height: fit_tail(hgrid, htail)?,
        height_upper,
        epoch: fit_tail(tgrid, ttail)?,
        samples: s.epochs.len(),
        censored: s.censored,
    })
}

/// Cap on `h^°` values before a warning is raised.
pub const H_CIRC_CAP: f64 = 1e12;

#[derive(Clone, Debug, Serialize)]
pub struct Sandwich {
    pub p_max: usize,
    /// `h_°(p) = P_p(S_{τ_K} = K)`.
    pub h_lower: Vec<f64>,
    /// `h^°(p) = E_p[#visits to K before τ_{-1}]`.
    pub h_upper: Vec<f64>,
    pub w_k: f64,
    pub w_circ: Vec<f64>,
    pub tolerance: f64,
    /// Fluxes where a bound fails beyond the tolerance.
    pub violations: Vec<usize>,
    pub capped: bool,
    pub pass: bool,
}

/// `W̃_K h_°(p) <= W̃°_p <= W̃_K h^°(p)` for `p <= p_max`, relative tolerance
/// `tol`. Entrance laws into `(-∞, K]` come from the ladder renewal:
/// from `K + s` the walk lands at `K - i` with probability
/// `sum_{m < s} h_pre(m) P(H_1 = -(s - m + i))`. Visits to `K` are counted
/// by the killed chain on `{0..K}` observed at its returns to `(-∞, K]`.
pub fn sandwich_check(
    ren: &RenewalTables,
    bound: usize,
    nu: &[f64],
    nu_depth: usize,
    eval: &NumericEvaluation,
    y: f64,
    p_max: usize,
    tol: f64,
) -> Result<Sandwich> {
    let k = bound;
    if ren.h_pre.len() <= p_max {
        return Err(Error::Argument("renewal horizon below p_max".into()));
    }
    let at = |q: i64| -> f64 {
        let i = q + nu_depth as i64;
        if i < 0 || i as usize >= nu.len() {
            0.0
        } else {
            nu[i as usize]
        }
    };
    let d = |j: usize| ren.descending.get(j).copied().unwrap_or(0.0);
    let landing = |s: usize, i: usize| -> f64 { (0..s).map(|m| ren.h_pre[m] * d(s - m + i)).sum() };
    // killed chain on {0..K}
    let mut q = vec![vec![0.0; k + 1]; k + 1];
    for x in 0..=k {
        for step in -(x as i64)..=(k as i64) {
            let y_pos = x as i64 + step;
            let pr = at(step);
            if y_pos <= k as i64 {
                q[x][y_pos as usize] += pr;
            } else {
                let s = (y_pos - k as i64) as usize;
                for i in 0..=k {
                    q[x][k - i] += pr * landing(s, i);
                }
            }
        }
    }
    // column K of (I - Q)^{-1}
    let mut m = vec![vec![0.0; k + 1]; k + 1];
    for i in 0..=k {
        for j in 0..=k {
            m[i][j] = f64::from(u8::from(i == j)) - q[i][j];
        }
    }
    let mut e = vec![0.0; k + 1];
    e[k] = 1.0;
    let g = solve_dense(m, e)?;
    let mut capped = false;
    let mut h_lower = Vec::with_capacity(p_max + 1);
    let mut h_upper = Vec::with_capacity(p_max + 1);
    for p in 0..=p_max {
        let (lo, hi) = if p <= k {
            (f64::from(u8::from(p == k)), g[p])
        } else {
            let s = p - k;
            (ren.h_pre[s], (0..=k).map(|i| landing(s, i) * g[k - i]).sum())
        };
        if hi > H_CIRC_CAP {
            capped = true;
        }
        h_lower.push(lo);
        h_upper.push(hi.min(H_CIRC_CAP));
    }
    let w_k = eval.tilde(k, y);
    let w_circ: Vec<f64> = (0..=p_max)
        .map(|p| eval.tilde_circ(p, y).ok_or_else(|| Error::Argument("evaluation lacks W°".into())))
        .collect::<Result<_>>()?;
    let violations = (0..=p_max)
        .filter(|&p| {
            let v = w_circ[p];
            w_k * h_lower[p] > v * (1.0 + tol) || v > w_k * h_upper[p] * (1.0 + tol)
        })
        .collect::<Vec<_>>();
    Ok(Sandwich {
        p_max,
        pass: violations.is_empty() && !capped,
        h_lower,
        h_upper,
        w_k,
        w_circ,
        tolerance: tol,
        violations,
        capped,
    })
}

/// `max/min` of `f(p)·p^{1/2}` over `p ∈ [lo, hi]`.
pub fn sqrt_bracket(f: impl Fn(usize) -> f64, lo: usize, hi: usize) -> f64 {
    let v: Vec<f64> = (lo..=hi).map(|p| f(p) * (p as f64).sqrt()).collect();
    let max = v.iter().cloned().fold(f64::MIN, f64::max);
    let min = v.iter().cloned().fold(f64::MAX, f64::min);
    max / min
}

/// `P_p(τ_{p/2} >= A p^{3/2})` for each `A`, walks run to the largest time.
pub fn survival_profile(step: &StepLaw, p: usize, amps: &[f64], samples: usize, mc: &McConfig) -> Vec<f64> {
    let horizon = amps.iter().map(|a| (a * (p as f64).powf(1.5)).ceil() as u64).max().unwrap_or(0);
    let level = (p / 2) as i64;
    let times: Vec<u64> = run_chunks(mc, samples, |rng, n| {
        (0..n)
            .map(|_| {
                let mut s = p as i64;
                let mut t = 0u64;
                while s > level && t < horizon {
                    s += step.sample(rng);
                    t += 1;
                }
                if s > level {
                    u64::MAX
                } else {
                    t
                }
            })
            .collect::<Vec<u64>>()
    })
    .into_iter()
    .flatten()
    .collect();
    amps.iter()
        .map(|a| {
            let thr = (a * (p as f64).powf(1.5)).ceil() as u64;
            times.iter().filter(|&&t| t >= thr).count() as f64 / samples.max(1) as f64
        })
        .collect()
}

/// Decimal strings of a series' coefficients as `f64`.
pub fn series_f64(s: &[String]) -> Vec<f64> {
    s.iter().map(|c| c.parse::<Rational>().ok().and_then(|r| r.to_f64()).unwrap_or(f64::NAN)).collect()
}

/// `true` when every coefficient of `a` is zero.
pub fn all_zero(a: &Series) -> bool {
    a.coeffs().iter().all(|c| c.is_zero())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{planar_maps, unit_spot_parking};

    #[test]
    fn key_formula_small_cases() {
        for w in [planar_maps(), unit_spot_parking()] {
            let k = w.bound();
            let v = key_formula_exact(&w, k, 0, 6).unwrap();
            assert!(v.pass);
            assert_eq!(v.lhs, v.rhs);
            for t in 1..=2 {
                let v = key_formula_exact(&w, k + 1, t, 6).unwrap();
                assert!(v.pass, "{:?}", v.first_mismatch);
                assert!(v.paths > 0);
            }
        }
    }

    #[test]
    fn key_formula_mutation_detected() {
        let w = planar_maps();
        let v = key_check_exact(&w, &perturbed(&w), 3, 1, 6, KeyEvent::LocallyLargest).unwrap();
        assert!(!v.pass);
        assert!(v.first_mismatch.is_some());
    }

    #[test]
    fn pointed_key_formula() {
        let w = planar_maps();
        for t in 1..=2 {
            let eq = pointed_key_check(&w, 4, t, 5, KeyEvent::PointedStrict).unwrap();
            assert!(eq.pass, "{:?}", eq.first_mismatch);
            let ineq = pointed_key_check(&w, 4, t, 5, KeyEvent::PointedAll).unwrap();
            assert!(ineq.pass, "{:?}", ineq.first_mismatch);
            let (strict, all) = (series_f64(&eq.rhs), series_f64(&ineq.rhs));
            assert!(strict.iter().zip(&all).all(|(a, b)| a <= b));
        }
    }

    #[test]
    fn simple_walk_ladders() {
        // ±1 walk: H_1 = -1 always, h_pre = 1, ascending ladder height 1
        let nu = vec![0.5, 0.0, 0.5];
        let r = renewal_from(&nu, 1, 1, 1).unwrap();
        assert!((r.descending[1] - 1.0).abs() < 1e-12);
        assert!((r.ascending[0] - 1.0).abs() < 1e-12);
        assert_eq!(r.h_pre[0], 1.0);
        assert!((r.h_pre[1] - 1.0).abs() < 1e-12);
        assert_eq!(r.h(-1), 0.0);
    }

    #[test]
    fn negative_drift_ladders() {
        // steps +1 w.p. 1/4, -1 w.p. 3/4: ascending ladder defective with
        // mass 1/3 and every descending ladder height equal to -1
        let nu = vec![0.75, 0.0, 0.25];
        let r = renewal_from(&nu, 1, 1, 1).unwrap();
        assert!((r.ascending[0] - 1.0 / 3.0).abs() < 1e-12, "{:?}", r.ascending);
        assert!((r.descending[1] - 1.0).abs() < 1e-12);
    }
}
