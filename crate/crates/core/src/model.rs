//! Local weight functions, catalytic polynomials and the dependency graph.
//!
//! A weight `w_{c,k,(s_1..s_k)}` is attached to a vertex receiving `c` cars
//! and having `k` children whose edges carry `s_1..s_k` spots (left to
//! right). The catalytic polynomial `Q(y, f, f_1, .., f_K)` is the orbit sum
//! `[y^c f^{a_0} .. f_K^{a_K}] Q = sum of w_{c,k,s}` over ordered tuples `s`
//! with multiplicities `a`.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};
use serde::Serialize;

use crate::error::{Error, Result};

pub type Rational = BigRational;

/// Hard cap on `K` accepted by constructors.
pub const MAX_BOUND: usize = 12;

/// Key of a weight entry: car count and ordered spot tuple (arity = `spots.len()`).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Entry {
    pub cars: usize,
    pub spots: Vec<usize>,
}

impl Entry {
    pub fn arity(&self) -> usize {
        self.spots.len()
    }
}

/// Local weight function with bound `K`. Only nonzero entries are stored.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightFunction {
    name: String,
    bound: usize,
    entries: BTreeMap<Entry, Rational>,
}

impl WeightFunction {
    pub fn new(name: impl Into<String>, bound: usize) -> Result<Self> {
        if bound > MAX_BOUND {
            return Err(Error::Model(format!("K = {bound} exceeds hard cap {MAX_BOUND}")));
        }
        Ok(Self { name: name.into(), bound, entries: BTreeMap::new() })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// The constant `K`.
    pub fn bound(&self) -> usize {
        self.bound
    }

    /// Sets `w_{cars, k, spots}`; a zero weight removes the entry.
    pub fn set(&mut self, cars: usize, spots: &[usize], w: Rational) -> Result<()> {
        if w.is_negative() {
            return Err(Error::Model(format!("negative weight {w} at c={cars}, s={spots:?}")));
        }
        let k = self.bound;
        if cars > k || spots.len() > k || spots.iter().any(|&s| s > k) {
            return Err(Error::Model(format!(
                "entry c={cars}, s={spots:?} violates the bound K={k}"
            )));
        }
        let key = Entry { cars, spots: spots.to_vec() };
        if w.is_zero() {
            self.entries.remove(&key);
        } else {
            self.entries.insert(key, w);
        }
        Ok(())
    }

    pub fn get(&self, cars: usize, spots: &[usize]) -> Rational {
        self.entries
            .get(&Entry { cars, spots: spots.to_vec() })
            .cloned()
            .unwrap_or_else(Rational::zero)
    }

    pub fn entries(&self) -> impl Iterator<Item = (&Entry, &Rational)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_arity(&self) -> usize {
        self.entries.keys().map(Entry::arity).max().unwrap_or(0)
    }

    /// Exchangeable representative: each entry replaced by the average over
    /// permutations of its spot tuple.
    pub fn symmetrize(&self) -> Self {
        let mut orbit_sums: BTreeMap<(usize, Vec<usize>), Rational> = BTreeMap::new();
        for (e, w) in &self.entries {
            let mut sorted = e.spots.clone();
            sorted.sort_unstable();
            *orbit_sums.entry((e.cars, sorted)).or_insert_with(Rational::zero) += w;
        }
        let mut out = Self { name: self.name.clone(), bound: self.bound, entries: BTreeMap::new() };
        for ((cars, sorted), sum) in orbit_sums {
            let arrangements = distinct_permutations(&sorted);
            // orbit sum / k! per permutation; each distinct arrangement
            // collects (k!/#arrangements) permutations.
            let share = sum / Rational::from_integer(BigInt::from(arrangements.len()));
            for s in arrangements {
                out.entries.insert(Entry { cars, spots: s }, share.clone());
            }
        }
        out
    }

    pub fn is_exchangeable(&self) -> bool {
        self.symmetrize() == *self
    }

    /// Orbit sums as a catalytic polynomial.
    pub fn to_polynomial(&self) -> CatalyticPolynomial {
        let mut q = CatalyticPolynomial::new(self.bound);
        for (e, w) in &self.entries {
            let mut deg = vec![0usize; self.bound + 1];
            for &s in &e.spots {
                deg[s] += 1;
            }
            *q.terms.entry((e.cars, deg)).or_insert_with(Rational::zero) += w;
        }
        q
    }

    /// Symmetric split of each monomial coefficient over the ordered tuples
    /// realizing its multidegree.
    pub fn from_polynomial(name: impl Into<String>, q: &CatalyticPolynomial) -> Result<Self> {
        let mut bound = q.shift_bound;
        for ((c, deg), v) in &q.terms {
            if v.is_negative() {
                return Err(Error::Model(format!("negative coefficient {v} at y^{c} {deg:?}")));
            }
            bound = bound.max(*c).max(deg.iter().sum());
        }
        let mut w = Self::new(name, bound)?;
        for ((c, deg), v) in &q.terms {
            if v.is_zero() {
                continue;
            }
            let mut sorted = Vec::new();
            for (shift, &mult) in deg.iter().enumerate() {
                sorted.extend(std::iter::repeat_n(shift, mult));
            }
            let arrangements = distinct_permutations(&sorted);
            let share = v / Rational::from_integer(BigInt::from(arrangements.len()));
            for s in arrangements {
                w.set(*c, &s, share.clone())?;
            }
        }
        Ok(w)
    }

    /// Least common denominator `D` of all weights and the integer weights `D·w`.
    pub fn integer_scaled(&self) -> (BigInt, BTreeMap<Entry, BigInt>) {
        let mut d = BigInt::one();
        for w in self.entries.values() {
            d = d.lcm(w.denom());
        }
        let scaled = self
            .entries
            .iter()
            .map(|(e, w)| (e.clone(), (w * Rational::from_integer(d.clone())).to_integer()))
            .collect();
        (d, scaled)
    }

    /// Groups the polynomial by f-multidegree: one record per product of
    /// shifted unknowns, with its polynomial coefficient in `y`.
    pub fn monomials(&self) -> Vec<Monomial> {
        let q = self.to_polynomial();
        let mut by_deg: BTreeMap<Vec<usize>, Vec<(usize, Rational)>> = BTreeMap::new();
        for ((c, deg), v) in q.terms {
            by_deg.entry(deg).or_default().push((c, v));
        }
        by_deg
            .into_iter()
            .map(|(deg, coeffs)| {
                let mut shifts = Vec::new();
                for (shift, &m) in deg.iter().enumerate() {
                    shifts.extend(std::iter::repeat_n(shift, m));
                }
                Monomial { shifts, coeffs }
            })
            .collect()
    }

    /// Enumerates every admissible child-flux tuple of a flux-`p` vertex for
    /// entry `e`: `p_i >= s_i` and `sum (p_i - s_i) + c = p`. Children above
    /// `cap` are skipped.
    pub fn for_each_children(e: &Entry, p: usize, cap: usize, mut f: impl FnMut(&[usize])) {
        if e.cars > p {
            return;
        }
        let budget = p - e.cars;
        let k = e.arity();
        if k == 0 {
            if budget == 0 {
                f(&[]);
            }
            return;
        }
        let mut buf = vec![0usize; k];
        compositions(&e.spots, budget, cap, 0, &mut buf, &mut f);
    }
}

fn compositions(
    spots: &[usize],
    budget: usize,
    cap: usize,
    i: usize,
    buf: &mut [usize],
    f: &mut impl FnMut(&[usize]),
) {
    let k = spots.len();
    if i + 1 == k {
        let v = spots[i] + budget;
        if v <= cap {
            buf[i] = v;
            f(buf);
        }
        return;
    }
    for e in 0..=budget {
        let v = spots[i] + e;
        if v > cap {
            break;
        }
        buf[i] = v;
        compositions(spots, budget - e, cap, i + 1, buf, f);
    }
}

/// A product of shifted unknowns `prod_j Δ^{(shifts_j)} F` with its
/// coefficient polynomial `sum_c coeff_c y^c`.
#[derive(Clone, Debug)]
pub struct Monomial {
    pub shifts: Vec<usize>,
    pub coeffs: Vec<(usize, Rational)>,
}

/// All distinct permutations of a sorted multiset, in lexicographic order.
pub fn distinct_permutations(sorted: &[usize]) -> Vec<Vec<usize>> {
    let mut cur = sorted.to_vec();
    cur.sort_unstable();
    let mut out = vec![cur.clone()];
    loop {
        // next lexicographic permutation
        let n = cur.len();
        if n < 2 {
            return out;
        }
        let mut i = n - 1;
        while i > 0 && cur[i - 1] >= cur[i] {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        let mut j = n - 1;
        while cur[j] <= cur[i - 1] {
            j -= 1;
        }
        cur.swap(i - 1, j);
        cur[i..].reverse();
        out.push(cur.clone());
    }
}

/// `Q(y, f, f_1, .., f_K)` as a map from `(y-degree, (a_0..a_K))` to coefficient.
#[derive(Clone, Debug, PartialEq)]
pub struct CatalyticPolynomial {
    shift_bound: usize,
    terms: BTreeMap<(usize, Vec<usize>), Rational>,
}

impl CatalyticPolynomial {
    /// Empty polynomial in `f, f_1, .., f_{shift_bound}`.
    pub fn new(shift_bound: usize) -> Self {
        Self { shift_bound, terms: BTreeMap::new() }
    }

    /// Adds `coeff · y^c · prod_i f_i^{deg[i]}`.
    pub fn add(&mut self, c: usize, deg: &[usize], coeff: Rational) -> Result<()> {
        if deg.len() > self.shift_bound + 1 {
            return Err(Error::Model(format!("multidegree {deg:?} uses f_i beyond i = {}", self.shift_bound)));
        }
        if c > MAX_BOUND || deg.iter().sum::<usize>() > MAX_BOUND {
            return Err(Error::Model(format!("monomial y^{c} {deg:?} exceeds hard cap {MAX_BOUND}")));
        }
        if coeff.is_negative() {
            return Err(Error::Model(format!("negative coefficient {coeff}")));
        }
        let mut d = deg.to_vec();
        d.resize(self.shift_bound + 1, 0);
        let slot = self.terms.entry((c, d)).or_insert_with(Rational::zero);
        *slot += coeff;
        Ok(())
    }

    pub fn shift_bound(&self) -> usize {
        self.shift_bound
    }

    /// Terms with nonzero coefficient.
    pub fn terms(&self) -> impl Iterator<Item = (&(usize, Vec<usize>), &Rational)> {
        self.terms.iter().filter(|(_, v)| !v.is_zero())
    }

    /// Canonical form for comparisons: zero terms dropped, multidegrees
    /// padded to a common length.
    pub fn normalized(&self, shift_bound: usize) -> BTreeMap<(usize, Vec<usize>), Rational> {
        self.terms()
            .map(|((c, d), v)| {
                let mut d = d.clone();
                d.resize(shift_bound + 1, 0);
                ((*c, d), v.clone())
            })
            .collect()
    }
}

/// Pass/fail with a human-readable reason.
#[derive(Clone, Debug, Serialize)]
pub struct Verdict {
    pub pass: bool,
    pub reason: String,
}

impl Verdict {
    fn new(pass: bool, reason: impl Into<String>) -> Self {
        Self { pass, reason: reason.into() }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AssumptionReport {
    pub window: usize,
    pub boundedness: Verdict,
    pub exchangeability: Verdict,
    pub branching: Verdict,
    pub connectivity: Verdict,
    pub flux_aperiodicity: Verdict,
    pub p0: Option<usize>,
    /// Not decidable from the table; checked downstream on coefficient ratios.
    pub vertex_aperiodicity: String,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.boundedness.pass
            && self.exchangeability.pass
            && self.branching.pass
            && self.connectivity.pass
            && self.flux_aperiodicity.pass
    }
}

/// Dependency graph on fluxes `0..=p_max`: edge `i -> j` when `W_j` appears
/// in `[y^i] x Q(..)`.
#[derive(Clone, Debug)]
pub struct DependencyGraph {
    pub p_max: usize,
    pub adj: Vec<BTreeSet<usize>>,
}

impl DependencyGraph {
    pub fn build(w: &WeightFunction, p_max: usize) -> Self {
        let mut adj = vec![BTreeSet::new(); p_max + 1];
        for (e, _) in w.entries() {
            let k = e.arity();
            for (m, &sm) in e.spots.iter().enumerate() {
                let _ = m;
                for i in e.cars..=p_max {
                    // child j at position m leaves r = i - c - (j - s_m) >= 0
                    // for the other k-1 children; r must be 0 when k == 1.
                    let top = i - e.cars + sm;
                    let lo = if k == 1 { top } else { sm };
                    for j in lo..=top.min(p_max) {
                        adj[i].insert(j);
                    }
                }
            }
        }
        Self { p_max, adj }
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        i <= self.p_max && self.adj[i].contains(&j)
    }

    /// Every edge `i -> j` with `i+1, j+1` in the window has its translate.
    pub fn translation_invariant(&self) -> bool {
        (0..self.p_max).all(|i| {
            self.adj[i].iter().all(|&j| j + 1 > self.p_max || self.adj[i + 1].contains(&(j + 1)))
        })
    }

    fn reach(&self, start: usize, lo: usize, forward: bool) -> Vec<bool> {
        let n = self.p_max + 1;
        let mut seen = vec![false; n];
        let mut rev: Vec<Vec<usize>> = Vec::new();
        if !forward {
            rev = vec![Vec::new(); n];
            for (i, out) in self.adj.iter().enumerate() {
                for &j in out {
                    rev[j].push(i);
                }
            }
        }
        let mut queue = VecDeque::from([start]);
        seen[start] = true;
        while let Some(u) = queue.pop_front() {
            let next: Vec<usize> =
                if forward { self.adj[u].iter().copied().collect() } else { rev[u].clone() };
            for v in next {
                if v >= lo && !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    }

    /// Whether `{lo, .., p_max - margin}` lies in one strongly connected
    /// component of the subgraph induced on `{lo, .., p_max}`.
    pub fn strongly_connected_from(&self, lo: usize, margin: usize) -> bool {
        if lo + margin > self.p_max {
            return false;
        }
        let fw = self.reach(lo, lo, true);
        let bw = self.reach(lo, lo, false);
        (lo..=self.p_max - margin).all(|v| fw[v] && bw[v])
    }

    /// Minimal `p` from which the graph is strongly connected.
    pub fn p0(&self, margin: usize) -> Option<usize> {
        (0..=self.p_max.saturating_sub(margin) / 2).find(|&p| self.strongly_connected_from(p, margin))
    }
}

/// Fluxes `p <= window` carried by at least one finite fully parked tree
/// whose vertices all have flux `<= window`.
pub fn realizable_fluxes(w: &WeightFunction, window: usize) -> Vec<bool> {
    let mut real = vec![false; window + 1];
    loop {
        let mut changed = false;
        for (e, _) in w.entries() {
            // attainable values of sum (p_i - s_i) over realizable children
            let mut sums = vec![false; window + 1];
            sums[0] = true;
            for &s in &e.spots {
                let mut next = vec![false; window + 1];
                for (a, &ok) in sums.iter().enumerate() {
                    if !ok {
                        continue;
                    }
                    for r in s..=window {
                        if real[r] && a + r - s <= window {
                            next[a + r - s] = true;
                        }
                    }
                }
                sums = next;
            }
            for (a, &ok) in sums.iter().enumerate() {
                let p = a + e.cars;
                if ok && p <= window && !real[p] {
                    real[p] = true;
                    changed = true;
                }
            }
        }
        if !changed {
            return real;
        }
    }
}

/// Checks the standing assumptions on the window `{0..p_max}`.
pub fn validate_assumptions(w: &WeightFunction, p_max: usize) -> Result<AssumptionReport> {
    let k = w.bound();
    if p_max < 4 * k {
        return Err(Error::Argument(format!("p_max = {p_max} must be at least 4K = {}", 4 * k)));
    }
    if w.is_empty() {
        let no = |r: &str| Verdict::new(false, r);
        return Ok(AssumptionReport {
            window: p_max,
            boundedness: no("empty weight table"),
            exchangeability: no("empty weight table"),
            branching: no("empty weight table"),
            connectivity: no("empty weight table"),
            flux_aperiodicity: no("empty weight table"),
            p0: None,
            vertex_aperiodicity: "empirical".into(),
        });
    }
    let bounded = w
        .entries()
        .all(|(e, _)| e.cars <= k && e.arity() <= k && e.spots.iter().all(|&s| s <= k));
    let boundedness = Verdict::new(bounded, format!("all entries within K = {k}"));
    let exch = w.is_exchangeable();
    let exchangeability = Verdict::new(
        exch,
        if exch { "weights invariant under spot permutations" } else { "table is not symmetric; use symmetrize()" },
    );
    let branch = w.entries().any(|(e, _)| e.arity() >= 2);
    let branching = Verdict::new(
        branch,
        if branch { "an entry with k >= 2 exists" } else { "no entry with k >= 2" },
    );

    let graph = DependencyGraph::build(w, p_max);
    let margin = 2 * k;
    let real = realizable_fluxes(w, p_max);
    let unreal: Vec<usize> = (0..=p_max - margin).filter(|&p| !real[p]).collect();
    let reach0 = graph.reach(0, 0, true);
    let zero_up = (1..=p_max).any(|p| reach0[p]);
    let connectivity = Verdict::new(
        zero_up && unreal.is_empty(),
        if !zero_up {
            "0 is not connected to any p >= 1".to_string()
        } else if !unreal.is_empty() {
            format!("W_p vanishes identically for p in {unreal:?}")
        } else {
            "0 reaches p >= 1 and every flux in the window is realizable".to_string()
        },
    );
    let p0 = graph.p0(margin);
    let ti = graph.translation_invariant();
    let flux_aperiodicity = match p0 {
        Some(p) if p <= k && ti => Verdict::new(true, format!("strongly connected from p0 = {p}")),
        Some(p) => Verdict::new(false, format!("p0 = {p} exceeds K or translation invariance fails")),
        None => Verdict::new(false, "no rank from which the window is strongly connected"),
    };
    Ok(AssumptionReport {
        window: p_max,
        boundedness,
        exchangeability,
        branching,
        connectivity,
        flux_aperiodicity,
        p0,
        vertex_aperiodicity: "empirical: checked on coefficient ratios downstream".into(),
    })
}

/// Parses `"num/den"` or `"num"`.
pub fn parse_rational(s: &str) -> Result<Rational> {
    let s = s.trim();
    let parse = |t: &str| t.trim().parse::<BigInt>().map_err(|e| Error::Parse(format!("{t:?}: {e}")));
    match s.split_once('/') {
        Some((n, d)) => {
            let d = parse(d)?;
            if d.is_zero() {
                return Err(Error::Parse(format!("zero denominator in {s:?}")));
            }
            Ok(Rational::new(parse(n)?, d))
        }
        None => Ok(Rational::from_integer(parse(s)?)),
    }
}

pub fn rat(n: i64, d: i64) -> Rational {
    Rational::new(BigInt::from(n), BigInt::from(d))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn int(n: i64) -> Rational {
        rat(n, 1)
    }

    #[test]
    fn distinct_permutations_of_multiset() {
        assert_eq!(distinct_permutations(&[0, 0, 1]), vec![vec![0, 0, 1], vec![0, 1, 0], vec![1, 0, 0]]);
        assert_eq!(distinct_permutations(&[]), vec![Vec::<usize>::new()]);
    }

    #[test]
    fn symmetrize_two_permutations() {
        let mut w = WeightFunction::new("t", 2).unwrap();
        w.set(0, &[0, 1], int(2)).unwrap();
        let s = w.symmetrize();
        assert_eq!(s.get(0, &[0, 1]), int(1));
        assert_eq!(s.get(0, &[1, 0]), int(1));
        assert_eq!(s.symmetrize(), s);
    }

    #[test]
    fn symmetrize_three_arrangements() {
        let mut w = WeightFunction::new("t", 3).unwrap();
        w.set(0, &[0, 0, 1], int(6)).unwrap();
        let s = w.symmetrize();
        // explicit permutation sum: 2 of the 6 permutations of (0,0,1) fix each arrangement
        for arr in [[0, 0, 1], [0, 1, 0], [1, 0, 0]] {
            let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
            let mut sum = Rational::zero();
            for p in perms {
                sum += w.get(0, &[arr[p[0]], arr[p[1]], arr[p[2]]]);
            }
            assert_eq!(s.get(0, &arr), sum / int(6));
            assert_eq!(s.get(0, &arr), int(2));
        }
    }

    #[test]
    fn linear_and_square_polynomials() {
        let mut q = CatalyticPolynomial::new(0);
        q.add(1, &[1], int(1)).unwrap();
        let w = WeightFunction::from_polynomial("lin", &q).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w.get(1, &[0]), int(1));
        let mut q = CatalyticPolynomial::new(1);
        q.add(0, &[0, 2], int(3)).unwrap();
        let w = WeightFunction::from_polynomial("sq", &q).unwrap();
        assert_eq!(w.get(0, &[1, 1]), int(3));
    }

    #[test]
    fn rejects_negative_and_oversized() {
        let mut q = CatalyticPolynomial::new(1);
        assert!(q.add(0, &[1], int(-1)).is_err());
        assert!(q.add(MAX_BOUND + 1, &[1], int(1)).is_err());
        let mut w = WeightFunction::new("t", 1).unwrap();
        assert!(w.set(2, &[], int(1)).is_err());
        assert!(w.set(0, &[0, 0], int(1)).is_err());
    }

    #[test]
    fn children_enumeration_respects_constraint() {
        let e = Entry { cars: 1, spots: vec![0, 1] };
        let mut seen = Vec::new();
        WeightFunction::for_each_children(&e, 3, 100, |ch| seen.push(ch.to_vec()));
        assert_eq!(seen, vec![vec![0, 3], vec![1, 2], vec![2, 1]]);
        let leaf = Entry { cars: 2, spots: vec![] };
        let mut n = 0;
        WeightFunction::for_each_children(&leaf, 2, 100, |_| n += 1);
        assert_eq!(n, 1);
    }

    #[test]
    fn parse_rationals() {
        assert_eq!(parse_rational("3/6").unwrap(), rat(1, 2));
        assert_eq!(parse_rational(" 7 ").unwrap(), int(7));
        assert!(parse_rational("1/0").is_err());
        assert!(parse_rational("x").is_err());
    }
}
