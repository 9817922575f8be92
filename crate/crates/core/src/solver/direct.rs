//! Order-by-order Tutte recursion with big-integer polynomials in `y`.
//!
//! Weights are scaled to integers `D·w`, which turns `[x^n]` coefficients
//! into integers `D^n [x^n]W_p`. Each monomial `prod Δ^{(s_j)}F` is built as a
//! left-to-right chain of partial products whose `x`-coefficients are
//! polynomials in `y`; the pointed series rides along as a first-order
//! (dual-number) perturbation of the same chain.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_traits::Zero;

use super::IntTables;
use crate::model::WeightFunction;

type Poly = Vec<BigInt>;

fn poly_mul_add(acc: &mut Poly, a: &[BigInt], b: &[BigInt]) {
    if a.is_empty() || b.is_empty() {
        return;
    }
    let need = a.len() + b.len() - 1;
    if acc.len() < need {
        acc.resize(need, BigInt::zero());
    }
    for (i, x) in a.iter().enumerate() {
        if x.is_zero() {
            continue;
        }
        for (j, y) in b.iter().enumerate() {
            if !y.is_zero() {
                acc[i + j] += x * y;
            }
        }
    }
}

fn trim(mut p: Poly) -> Poly {
    while p.last().is_some_and(Zero::is_zero) {
        p.pop();
    }
    p
}

/// `Δ^{(s)}` on a polynomial in `y`: drop the first `s` coefficients.
fn shifted(p: &[BigInt], s: usize) -> &[BigInt] {
    if s >= p.len() {
        &[]
    } else {
        &p[s..]
    }
}

struct ChainNode {
    last_shift: usize,
    parent: Option<usize>,
    /// `[x^m]` of the partial product; index `m`.
    value: Vec<Poly>,
    /// First-order part in the pointed direction.
    dual: Vec<Poly>,
}

/// Solves to order `n_max`; with `pointed`, also the marked-root series
/// `G = y^K W_K + x · dQ(F)[G]`.
pub(crate) fn solve_direct(w: &WeightFunction, n_max: usize, pointed: bool) -> IntTables {
    let kb = w.bound();
    let (d, _) = w.integer_scaled();
    let dq = num_rational::BigRational::from_integer(d.clone());
    let monos = w.monomials();

    // chain nodes keyed by sorted prefix of shifts
    let mut nodes: Vec<ChainNode> = Vec::new();
    let mut index: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    let mut tops: Vec<(Option<usize>, Poly)> = Vec::new();
    for m in &monos {
        let mut coef = Poly::new();
        for (c, v) in &m.coeffs {
            let v = (v * &dq).to_integer();
            if coef.len() <= *c {
                coef.resize(c + 1, BigInt::zero());
            }
            coef[*c] += v;
        }
        let mut parent = None;
        for l in 1..=m.shifts.len() {
            let key = m.shifts[..l].to_vec();
            let id = *index.entry(key).or_insert_with(|| {
                nodes.push(ChainNode {
                    last_shift: m.shifts[l - 1],
                    parent,
                    value: vec![Poly::new(); n_max + 1],
                    dual: vec![Poly::new(); n_max + 1],
                });
                nodes.len() - 1
            });
            parent = Some(id);
        }
        tops.push((parent, coef));
    }

    let mut f: Vec<Poly> = vec![Poly::new(); n_max + 1];
    let mut g: Vec<Poly> = vec![Poly::new(); n_max + 1];
    for n in 1..=n_max {
        let m = n - 1;
        // chain nodes at order m; parents precede children in `nodes`
        for id in 0..nodes.len() {
            let (s, parent) = (nodes[id].last_shift, nodes[id].parent);
            let mut val = Poly::new();
            let mut dual = Poly::new();
            match parent {
                None => {
                    val = shifted(&f[m], s).to_vec();
                    if pointed {
                        dual = shifted(&g[m], s).to_vec();
                    }
                }
                Some(pid) => {
                    for j in 1..m {
                        let pv = &nodes[pid].value[j];
                        poly_mul_add(&mut val, pv, shifted(&f[m - j], s));
                        if pointed {
                            poly_mul_add(&mut dual, &nodes[pid].dual[j], shifted(&f[m - j], s));
                            poly_mul_add(&mut dual, pv, shifted(&g[m - j], s));
                        }
                    }
                }
            }
            nodes[id].value[m] = trim(val);
            nodes[id].dual[m] = trim(dual);
        }
        let mut fn_ = Poly::new();
        let mut gn = Poly::new();
        for (top, coef) in &tops {
            match top {
                None => {
                    if n == 1 {
                        poly_mul_add(&mut fn_, coef, &[BigInt::from(1)]);
                    }
                }
                Some(id) => {
                    poly_mul_add(&mut fn_, coef, &nodes[*id].value[m]);
                    if pointed {
                        poly_mul_add(&mut gn, coef, &nodes[*id].dual[m]);
                    }
                }
            }
        }
        f[n] = trim(fn_);
        if pointed {
            if let Some(wk) = f[n].get(kb).filter(|v| !v.is_zero()) {
                if gn.len() <= kb {
                    gn.resize(kb + 1, BigInt::zero());
                }
                gn[kb] += wk;
            }
            g[n] = trim(gn);
        }
    }
    IntTables { scale: d, f, g: pointed.then_some(g) }
}
