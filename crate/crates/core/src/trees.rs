//! Parking trees, the parking process, exhaustive enumeration, Boltzmann
//! sampling as a multi-type Galton–Watson tree, explorations and volumes.
//!
//! Cars arriving at a vertex drive towards the root; a car leaving vertex `v`
//! takes a free spot on the edge from `v` to its parent if there is one.
//! The flux `φ(v)` counts the cars arriving at `v`, so
//! `φ(u) = c_u + sum_v max(φ(v) - s_v, 0)` over the children `v` of `u`, and
//! the tree is fully parked iff `φ(v) >= s_v` on every edge.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::OnceLock;

use num_traits::Zero;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mc::{run_chunks, McConfig};
use crate::measure::offspring_law;
use crate::model::{Rational, WeightFunction};
use crate::solver::NumericEvaluation;

/// Plane tree with car counts on vertices and spot capacities on the edges
/// to the children (left to right).
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParkingTree {
    pub cars: usize,
    /// `(spots on the edge, subtree)`.
    pub children: Vec<(usize, ParkingTree)>,
}

impl ParkingTree {
    pub fn leaf(cars: usize) -> Self {
        Self { cars, children: Vec::new() }
    }

    pub fn size(&self) -> usize {
        1 + self.children.iter().map(|(_, c)| c.size()).sum::<usize>()
    }

    fn spots(&self) -> Vec<usize> {
        self.children.iter().map(|(s, _)| *s).collect()
    }
}

impl fmt::Display for ParkingTree {
    /// `c{cars}[{spots}:{child},...]`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "c{}", self.cars)?;
        if !self.children.is_empty() {
            write!(f, "[")?;
            for (i, (s, c)) in self.children.iter().enumerate() {
                if i > 0 {
                    write!(f, ",")?;
                }
                write!(f, "{s}:{c}")?;
            }
            write!(f, "]")?;
        }
        Ok(())
    }
}

/// Flux-labeled plane tree stored as an arena; vertex 0 is the root and
/// children are listed left to right.
#[derive(Clone, Debug)]
pub struct LabeledTree {
    pub flux: Vec<usize>,
    pub children: Vec<Vec<usize>>,
}

impl LabeledTree {
    pub fn single(flux: usize) -> Self {
        Self { flux: vec![flux], children: vec![Vec::new()] }
    }

    fn push(&mut self, flux: usize) -> usize {
        self.flux.push(flux);
        self.children.push(Vec::new());
        self.flux.len() - 1
    }

    pub fn len(&self) -> usize {
        self.flux.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flux.is_empty()
    }

    pub fn root_flux(&self) -> usize {
        self.flux[0]
    }

    /// Nested text form `flux(child child ...)`, canonical for equality.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        // explicit stack: Some(v) opens v, None closes a parenthesis
        let mut stack = vec![Some(0usize)];
        let mut first = true;
        while let Some(item) = stack.pop() {
            match item {
                None => out.push(')'),
                Some(v) => {
                    if !first && !out.ends_with('(') {
                        out.push(' ');
                    }
                    first = false;
                    out.push_str(&self.flux[v].to_string());
                    if !self.children[v].is_empty() {
                        out.push('(');
                        stack.push(None);
                        stack.extend(self.children[v].iter().rev().map(|&c| Some(c)));
                    }
                }
            }
        }
        out
    }

    /// Parses the nested text form.
    pub fn from_text(s: &str) -> Result<Self> {
        let bytes = s.as_bytes();
        let mut tree = LabeledTree { flux: Vec::new(), children: Vec::new() };
        let mut open: Vec<usize> = Vec::new();
        let mut last: Option<usize> = None;
        let mut i = 0;
        let bad = |m: &str| Error::Parse(format!("labeled tree: {m} in {s:?}"));
        while i < bytes.len() {
            match bytes[i] {
                b'0'..=b'9' => {
                    let start = i;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                    let flux: usize = s[start..i].parse().map_err(|_| bad("bad number"))?;
                    if open.is_empty() && !tree.is_empty() {
                        return Err(bad("several roots"));
                    }
                    let v = tree.push(flux);
                    if let Some(&p) = open.last() {
                        tree.children[p].push(v);
                    }
                    last = Some(v);
                    continue;
                }
                b'(' => open.push(last.ok_or_else(|| bad("'(' without a vertex"))?),
                b')' => {
                    open.pop().ok_or_else(|| bad("unbalanced ')'"))?;
                }
                b' ' => {}
                _ => return Err(bad("unexpected character")),
            }
            i += 1;
        }
        if !open.is_empty() || tree.is_empty() {
            return Err(bad("unbalanced or empty"));
        }
        Ok(tree)
    }

    /// Preorder vertices with their depths.
    pub fn preorder(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.len());
        let mut stack = vec![(0usize, 0usize)];
        while let Some((v, d)) = stack.pop() {
            out.push((v, d));
            stack.extend(self.children[v].iter().rev().map(|&c| (c, d + 1)));
        }
        out
    }
}

impl fmt::Display for LabeledTree {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

#[derive(Clone, Debug)]
pub struct Parked {
    pub labeled: LabeledTree,
    pub fully_parked: bool,
    pub free_spots: usize,
}

/// Bottom-up parking pass.
pub fn park(t: &ParkingTree) -> Parked {
    let mut labeled = LabeledTree { flux: Vec::new(), children: Vec::new() };
    let mut free = 0usize;
    let flux = park_into(t, &mut labeled, &mut free);
    debug_assert_eq!(labeled.flux[0], flux);
    Parked { labeled, fully_parked: free == 0, free_spots: free }
}

fn park_into(t: &ParkingTree, out: &mut LabeledTree, free: &mut usize) -> usize {
    let v = out.push(0);
    let mut flux = t.cars;
    for (s, child) in &t.children {
        let c = out.len();
        out.children[v].push(c);
        let phi = park_into(child, out, free);
        *free += s.saturating_sub(phi);
        flux += phi.saturating_sub(*s);
    }
    out.flux[v] = flux;
    flux
}

/// Outcome of the event-driven process: per vertex (preorder) arrivals and
/// occupied spots on the edge to the parent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventParking {
    pub arrivals: Vec<usize>,
    pub occupied: Vec<usize>,
}

/// Parks the cars one at a time in the order given by `rng`.
pub fn park_event_driven(t: &ParkingTree, rng: &mut impl Rng) -> EventParking {
    let mut parent = Vec::new();
    let mut spots = Vec::new();
    let mut cars = Vec::new();
    flatten(t, None, 0, &mut parent, &mut spots, &mut cars);
    let mut queue: Vec<usize> = cars.iter().enumerate().flat_map(|(v, &c)| std::iter::repeat_n(v, c)).collect();
    queue.shuffle(rng);
    let n = parent.len();
    let mut arrivals = vec![0; n];
    let mut occupied = vec![0; n];
    for start in queue {
        let mut v = start;
        loop {
            arrivals[v] += 1;
            match parent[v] {
                None => break,
                Some(_) if occupied[v] < spots[v] => {
                    occupied[v] += 1;
                    break;
                }
                Some(p) => v = p,
            }
        }
    }
    EventParking { arrivals, occupied }
}

fn flatten(
    t: &ParkingTree,
    parent: Option<usize>,
    spot: usize,
    par: &mut Vec<Option<usize>>,
    spots: &mut Vec<usize>,
    cars: &mut Vec<usize>,
) {
    let v = par.len();
    par.push(parent);
    spots.push(spot);
    cars.push(t.cars);
    for (s, c) in &t.children {
        flatten(c, Some(v), *s, par, spots, cars);
    }
}

/// `prod_u w_{c_u, (spots of u's child edges)}`, zero when an entry is absent.
pub fn weight(w: &WeightFunction, t: &ParkingTree) -> Rational {
    let mut acc = w.get(t.cars, &t.spots());
    for (_, c) in &t.children {
        if acc.is_zero() {
            break;
        }
        acc *= weight(w, c);
    }
    acc
}

/// Default vertex limit for [`enumerate_fpt`].
pub const ENUM_MAX_VERTICES: usize = 7;
/// Cap on stored fully parked trees per size.
pub const ENUM_BUDGET: usize = 4_000_000;

#[derive(Clone, Debug)]
pub struct FptItem {
    pub tree: ParkingTree,
    pub labeled: LabeledTree,
    pub weight: Rational,
}

/// All fully parked trees with `n` vertices, root flux `p` and positive
/// weight.
pub fn enumerate_fpt(w: &WeightFunction, n: usize, p: usize) -> Result<Vec<FptItem>> {
    enumerate_fpt_with(w, n, p, ENUM_MAX_VERTICES)
}

pub fn enumerate_fpt_with(w: &WeightFunction, n: usize, p: usize, max_vertices: usize) -> Result<Vec<FptItem>> {
    if n == 0 || n > max_vertices {
        return Err(Error::Budget(format!("enumeration needs 1 <= n <= {max_vertices}, got {n}")));
    }
    let all = fully_parked_by_size(w, n)?;
    Ok(all[n]
        .iter()
        .filter(|(_, flux, _)| *flux == p)
        .map(|(t, _, wt)| FptItem { labeled: park(t).labeled, tree: t.clone(), weight: wt.clone() })
        .collect())
}

type Fpt = (ParkingTree, usize, Rational);

/// `out[m]` lists every positively weighted fully parked tree with `m`
/// vertices together with its root flux.
pub fn fully_parked_by_size(w: &WeightFunction, n: usize) -> Result<Vec<Vec<Fpt>>> {
    let mut out: Vec<Vec<Fpt>> = vec![Vec::new(); n + 1];
    let mut by_arity: BTreeMap<usize, Vec<(usize, Vec<usize>, Rational)>> = BTreeMap::new();
    for (e, wt) in w.entries() {
        by_arity.entry(e.arity()).or_default().push((e.cars, e.spots.clone(), wt.clone()));
    }
    for m in 1..=n {
        let mut here = Vec::new();
        for (&k, entries) in &by_arity {
            if k == 0 {
                if m == 1 {
                    here.extend(entries.iter().map(|(c, _, wt)| (ParkingTree::leaf(*c), *c, wt.clone())));
                }
                continue;
            }
            if m < k + 1 {
                continue;
            }
            let mut sizes = vec![0; k];
            for_each_composition(m - 1, k, &mut sizes, 0, &mut |sizes| {
                for (c, spots, wt) in entries {
                    let mut acc: Vec<(Vec<(usize, ParkingTree)>, usize, Rational)> =
                        vec![(Vec::new(), *c, wt.clone())];
                    for (i, &sz) in sizes.iter().enumerate() {
                        let mut next = Vec::new();
                        for (kids, flux, wt) in &acc {
                            for (t, phi, cw) in &out[sz] {
                                if *phi < spots[i] {
                                    continue;
                                }
                                let mut k2 = kids.clone();
                                k2.push((spots[i], t.clone()));
                                next.push((k2, flux + phi - spots[i], wt * cw));
                            }
                        }
                        acc = next;
                    }
                    here.extend(
                        acc.into_iter().map(|(kids, flux, wt)| (ParkingTree { cars: *c, children: kids }, flux, wt)),
                    );
                }
            });
            if here.len() > ENUM_BUDGET {
                return Err(Error::Budget(format!("more than {ENUM_BUDGET} fully parked trees with {m} vertices")));
            }
        }
        out[m] = here;
    }
    Ok(out)
}

fn for_each_composition(total: usize, parts: usize, buf: &mut [usize], i: usize, f: &mut impl FnMut(&[usize])) {
    if i + 1 == parts {
        if total >= 1 {
            buf[i] = total;
            f(buf);
        }
        return;
    }
    for v in 1..total {
        buf[i] = v;
        for_each_composition(total - v, parts, buf, i + 1, f);
    }
}

/// Vertex count and the number of vertices with flux exactly `K`.
pub fn volumes(t: &LabeledTree, bound: usize) -> (usize, usize) {
    (t.len(), t.flux.iter().filter(|&&f| f == bound).count())
}

/// Decoration `S` and reproduction `η` of a distinguished branch.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct DecoRepro {
    /// `S_0, S_1, ..`.
    pub s: Vec<usize>,
    /// `siblings[i-1]` lists the fluxes `Y^i_j` of step `i`, left to right.
    pub siblings: Vec<Vec<usize>>,
    /// `ties[i-1]`: the maximal child flux at step `i` was not unique.
    pub ties: Vec<bool>,
    /// Length of the branch (steps until a leaf).
    pub tau: usize,
}

impl DecoRepro {
    pub fn steps(&self) -> usize {
        self.s.len().saturating_sub(1)
    }

    /// No ties and `S_i > Y^i_j` for all steps.
    pub fn no_ties(&self) -> bool {
        self.siblings.iter().enumerate().all(|(i, ys)| ys.iter().all(|&y| y < self.s[i + 1]))
    }
}

/// Follows the child with the largest flux, leftmost on ties.
pub fn locally_largest(t: &LabeledTree) -> DecoRepro {
    let mut d = DecoRepro { s: vec![t.flux[0]], ..Default::default() };
    let mut v = 0;
    while !t.children[v].is_empty() {
        let kids = &t.children[v];
        let (pick, tie) = pick_largest(kids.iter().map(|&c| t.flux[c]));
        let next = kids[pick];
        d.siblings.push(kids.iter().enumerate().filter(|&(i, _)| i != pick).map(|(_, &c)| t.flux[c]).collect());
        d.ties.push(tie);
        d.s.push(t.flux[next]);
        v = next;
    }
    d.tau = d.s.len() - 1;
    d
}

/// Index of the leftmost maximum and whether it is tied.
fn pick_largest(fluxes: impl Iterator<Item = usize>) -> (usize, bool) {
    let mut best = (0usize, 0usize, false);
    for (i, f) in fluxes.enumerate() {
        if i == 0 || f > best.1 {
            best = (i, f, false);
        } else if f == best.1 {
            best.2 = true;
        }
    }
    (best.0, best.2)
}

/// Why a sample was discarded.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Abort {
    /// A flux exceeded `P_max - K^2`.
    Headroom { flux: usize },
    /// More vertices than the configured limit.
    Volume { limit: usize },
}

struct AliasTable {
    arity: Vec<u8>,
    offsets: Vec<u32>,
    kids: Vec<u32>,
    alias: Option<WeightedAliasIndex<f64>>,
}

impl AliasTable {
    fn draw(&self, rng: &mut impl Rng) -> &[u32] {
        let i = self.alias.as_ref().expect("non-empty law").sample(rng);
        let o = self.offsets[i] as usize;
        &self.kids[o..o + self.arity[i] as usize]
    }
}

/// Samples the `x`-Boltzmann law `P_p^x` as a multi-type Galton–Watson tree
/// with offspring laws `π_p`. Laws are tabulated lazily per flux and shared
/// between threads.
pub struct Sampler<'a> {
    w: &'a WeightFunction,
    eval: &'a NumericEvaluation,
    headroom: usize,
    tables: Vec<OnceLock<std::result::Result<AliasTable, String>>>,
}

impl<'a> Sampler<'a> {
    pub fn new(w: &'a WeightFunction, eval: &'a NumericEvaluation) -> Result<Self> {
        if !eval.converged {
            return Err(Error::Numeric("sampling needs a converged evaluation".into()));
        }
        let k2 = w.bound() * w.bound();
        if eval.p_max <= k2 {
            return Err(Error::Argument("p_max leaves no flux headroom".into()));
        }
        let headroom = eval.p_max - k2;
        Ok(Self { w, eval, headroom, tables: (0..=headroom).map(|_| OnceLock::new()).collect() })
    }

    /// Largest flux with a tabulated offspring law.
    pub fn headroom(&self) -> usize {
        self.headroom
    }

    pub fn bound(&self) -> usize {
        self.w.bound()
    }

    fn table(&self, p: usize) -> Result<&AliasTable> {
        let t = self.tables[p].get_or_init(|| {
            let law = offspring_law(self.w, self.eval, p).map_err(|e| e.to_string())?;
            let mut t = AliasTable { arity: Vec::new(), offsets: Vec::new(), kids: Vec::new(), alias: None };
            let mut weights = Vec::with_capacity(law.atoms.len());
            for (kids, pr) in &law.atoms {
                t.arity.push(kids.len() as u8);
                t.offsets.push(t.kids.len() as u32);
                t.kids.extend(kids.iter().map(|&k| k as u32));
                weights.push(*pr);
            }
            if !weights.is_empty() {
                t.alias = Some(WeightedAliasIndex::new(weights).map_err(|e| format!("offspring law at {p}: {e}"))?);
            }
            Ok(t)
        });
        let t = t.as_ref().map_err(|e| Error::Numeric(e.clone()))?;
        if t.alias.is_none() {
            return Err(Error::Numeric(format!("empty offspring law at flux {p}")));
        }
        Ok(t)
    }

    /// One offspring tuple under `π_p`.
    pub fn offspring(&self, p: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
        if p > self.headroom {
            return Err(Error::Budget(format!("flux {p} above headroom {}", self.headroom)));
        }
        Ok(self.table(p)?.draw(rng).iter().map(|&k| k as usize).collect())
    }

    fn check(&self, flux: usize) -> std::result::Result<(), Abort> {
        if flux > self.headroom {
            Err(Abort::Headroom { flux })
        } else {
            Ok(())
        }
    }

    /// A full tree under `P_p`, or the reason it was discarded.
    pub fn sample_tree(
        &self,
        p: usize,
        rng: &mut impl Rng,
        max_vertices: usize,
    ) -> Result<std::result::Result<LabeledTree, Abort>> {
        if let Err(a) = self.check(p) {
            return Ok(Err(a));
        }
        let mut t = LabeledTree::single(p);
        let mut stack = vec![0usize];
        while let Some(v) = stack.pop() {
            let kids = self.table(t.flux[v])?.draw(rng);
            for &k in kids {
                if let Err(a) = self.check(k as usize) {
                    return Ok(Err(a));
                }
                let c = t.push(k as usize);
                t.children[v].push(c);
            }
            if t.len() > max_vertices {
                return Ok(Err(Abort::Volume { limit: max_vertices }));
            }
            stack.extend(t.children[v].iter().rev());
        }
        Ok(Ok(t))
    }

    /// Summary statistics of a tree under `P_p`, without storing it.
    pub fn sample_stats(
        &self,
        p: usize,
        rng: &mut impl Rng,
        max_vertices: usize,
    ) -> Result<std::result::Result<TreeStats, Abort>> {
        if let Err(a) = self.check(p) {
            return Ok(Err(a));
        }
        let k = self.w.bound();
        let mut st = TreeStats { vol: 0, vol_circ: 0, root_degree: 0, height: 0, ties: 0 };
        // (flux, depth, on the locally largest branch)
        let mut stack = vec![(p, 0usize, true)];
        while let Some((f, d, on_branch)) = stack.pop() {
            st.vol += 1;
            st.vol_circ += usize::from(f == k);
            st.height = st.height.max(d);
            let kids = self.table(f)?.draw(rng);
            if d == 0 {
                st.root_degree = kids.len();
            }
            let (pick, tie) = pick_largest(kids.iter().map(|&c| c as usize));
            if on_branch && !kids.is_empty() {
                st.ties += usize::from(tie);
            }
            for (i, &c) in kids.iter().enumerate() {
                if let Err(a) = self.check(c as usize) {
                    return Ok(Err(a));
                }
                stack.push((c as usize, d + 1, on_branch && i == pick));
            }
            if st.vol + stack.len() > max_vertices {
                return Ok(Err(Abort::Volume { limit: max_vertices }));
            }
        }
        Ok(Ok(st))
    }

    /// The first `steps` steps of the locally largest branch under `P_p`,
    /// sampling only the vertices on the branch.
    pub fn sample_branch(
        &self,
        p: usize,
        steps: usize,
        rng: &mut impl Rng,
    ) -> Result<std::result::Result<DecoRepro, Abort>> {
        if let Err(a) = self.check(p) {
            return Ok(Err(a));
        }
        let mut d = DecoRepro { s: vec![p], ..Default::default() };
        let mut f = p;
        for _ in 0..steps {
            let kids = self.table(f)?.draw(rng);
            if kids.is_empty() {
                break;
            }
            let (pick, tie) = pick_largest(kids.iter().map(|&c| c as usize));
            for &c in kids {
                if let Err(a) = self.check(c as usize) {
                    return Ok(Err(a));
                }
            }
            f = kids[pick] as usize;
            d.siblings.push(kids.iter().enumerate().filter(|&(i, _)| i != pick).map(|(_, &c)| c as usize).collect());
            d.ties.push(tie);
            d.s.push(f);
        }
        d.tau = d.steps();
        Ok(Ok(d))
    }
}

/// CSV summary row of one sampled tree.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct TreeStats {
    pub vol: usize,
    pub vol_circ: usize,
    pub root_degree: usize,
    pub height: usize,
    /// Ties met along the locally largest branch.
    pub ties: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct VolumeBatch {
    pub p: usize,
    pub mc: McConfig,
    pub max_vertices: usize,
    pub stats: Vec<TreeStats>,
    pub aborts: usize,
    pub abort_rate: f64,
}

impl VolumeBatch {
    /// Median of `Vol•` over completed samples.
    pub fn median_vol(&self) -> f64 {
        let mut v: Vec<usize> = self.stats.iter().map(|s| s.vol).collect();
        if v.is_empty() {
            return f64::NAN;
        }
        v.sort_unstable();
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2] as f64
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2]) as f64
        }
    }
}

/// `samples` independent trees under `P_p`, summarized.
pub fn volume_batch(
    sampler: &Sampler<'_>,
    p: usize,
    samples: usize,
    mc: &McConfig,
    max_vertices: usize,
) -> Result<VolumeBatch> {
    let chunks = run_chunks(mc, samples, |rng, n| -> Result<(Vec<TreeStats>, usize)> {
        let mut stats = Vec::with_capacity(n);
        let mut aborts = 0;
        for _ in 0..n {
            match sampler.sample_stats(p, rng, max_vertices)? {
                Ok(s) => stats.push(s),
                Err(_) => aborts += 1,
            }
        }
        Ok((stats, aborts))
    });
    let mut stats = Vec::with_capacity(samples);
    let mut aborts = 0;
    for c in chunks {
        let (s, a) = c?;
        stats.extend(s);
        aborts += a;
    }
    let abort_rate = aborts as f64 / samples.max(1) as f64;
    Ok(VolumeBatch { p, mc: *mc, max_vertices, stats, aborts, abort_rate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::rat;
    use crate::models::{planar_maps, unit_spot_parking};
    use crate::solver::compute_coefficients;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn edge(cap: usize, root: usize, child: usize) -> ParkingTree {
        ParkingTree { cars: root, children: vec![(cap, ParkingTree::leaf(child))] }
    }

    #[test]
    fn hand_parking() {
        let r = park(&edge(1, 0, 2));
        assert_eq!(r.labeled.flux, vec![1, 2]);
        assert!(r.fully_parked);
        let r = park(&edge(1, 0, 0));
        assert!(!r.fully_parked);
        assert_eq!(r.free_spots, 1);
        let r = park(&ParkingTree::leaf(3));
        assert_eq!((r.labeled.root_flux(), r.fully_parked), (3, true));
    }

    #[test]
    fn weights_by_hand() {
        let w = unit_spot_parking();
        assert_eq!(weight(&w, &ParkingTree::leaf(2)), rat(1, 16));
        // root: one child, one car (1/2 * 1/2); child: leaf with two cars (1/4 * 1/4)
        assert_eq!(weight(&w, &edge(1, 1, 2)), rat(1, 4) * rat(1, 16));
        assert!(weight(&w, &edge(2, 1, 2)).is_zero());
    }

    #[test]
    fn enumeration_small_cases() {
        let w = planar_maps();
        let k = w.bound();
        for p in 0..=k + 1 {
            let items = enumerate_fpt(&w, 1, p).unwrap();
            if p <= k {
                assert_eq!(items.len(), 1);
                assert_eq!(items[0].weight, w.get(p, &[]));
            } else {
                assert!(items.is_empty());
            }
        }
        assert!(enumerate_fpt(&w, 3, 3 * k + 1).unwrap().is_empty());
        assert!(enumerate_fpt(&w, 8, 0).is_err());
    }

    #[test]
    fn enumeration_matches_coefficients() {
        for w in [planar_maps(), unit_spot_parking()] {
            let sol = compute_coefficients(&w, 4).unwrap();
            for n in 1..=4 {
                for p in 0..=2 * w.bound() {
                    let items = enumerate_fpt(&w, n, p).unwrap();
                    let total: Rational = items.iter().map(|i| i.weight.clone()).sum();
                    assert_eq!(total, sol.table.coeff(n, p), "{} n={n} p={p}", w.name());
                    for i in &items {
                        assert_eq!(weight(&w, &i.tree), i.weight);
                        assert_eq!(i.labeled.root_flux(), p);
                    }
                }
            }
        }
    }

    #[test]
    fn locally_largest_examples() {
        let path = LabeledTree::from_text("3(2(1))").unwrap();
        let d = locally_largest(&path);
        assert_eq!(d.s, vec![3, 2, 1]);
        assert!(d.siblings.iter().all(|s| s.is_empty()));
        let split = LabeledTree::from_text("5(2 3)").unwrap();
        let d = locally_largest(&split);
        assert_eq!((d.s.clone(), d.siblings[0].clone(), d.ties[0]), (vec![5, 3], vec![2], false));
        let tie = LabeledTree::from_text("4(2(1) 2)").unwrap();
        let d = locally_largest(&tie);
        assert_eq!((d.s.clone(), d.ties[0]), (vec![4, 2, 1], true));
    }

    #[test]
    fn volumes_examples() {
        assert_eq!(volumes(&LabeledTree::single(2), 2), (1, 1));
        assert_eq!(volumes(&LabeledTree::single(1), 2), (1, 0));
    }

    fn arb_tree(k: usize) -> impl Strategy<Value = ParkingTree> {
        let leaf = (0..=k).prop_map(ParkingTree::leaf);
        leaf.prop_recursive(4, 24, 3, move |inner| {
            (0..=k, prop::collection::vec((0..=k, inner), 0..=3))
                .prop_map(|(cars, children)| ParkingTree { cars, children })
        })
    }

    proptest! {
        #[test]
        fn abelian_property(t in arb_tree(2), seed in any::<u64>()) {
            let bottom_up = park(&t);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let ev = park_event_driven(&t, &mut rng);
            prop_assert_eq!(&ev.arrivals, &bottom_up.labeled.flux);
            let mut spots = vec![0];
            collect_spots(&t, &mut spots);
            let free: usize = spots.iter().zip(&ev.occupied).map(|(s, o)| s - o).sum();
            prop_assert_eq!(free, bottom_up.free_spots);
        }

        #[test]
        fn text_round_trip(t in arb_tree(3)) {
            let l = park(&t).labeled;
            let back = LabeledTree::from_text(&l.to_text()).unwrap();
            prop_assert_eq!(back.to_text(), l.to_text());
            prop_assert_eq!(back.flux, l.flux);
        }

        #[test]
        fn flux_bounds_on_parked_trees(t in arb_tree(2)) {
            let r = park(&t);
            let l = &r.labeled;
            for v in 0..l.len() {
                for &c in &l.children[v] {
                    if r.fully_parked {
                        prop_assert!(l.flux[c] <= l.flux[v] + 2);
                    }
                }
            }
        }
    }

    fn collect_spots(t: &ParkingTree, out: &mut Vec<usize>) {
        for (s, c) in &t.children {
            out.push(*s);
            collect_spots(c, out);
        }
    }
}
