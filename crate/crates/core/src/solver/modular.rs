//! Multi-modular exact recursion.
//!
//! For each 31-bit NTT prime the recursion runs on `y`-polynomials kept in
//! the number-theoretic transform domain: products of shifted unknowns are
//! pointwise, only `Δ^{(i)}` needs a forward transform and each order needs
//! one inverse transform. The transform length exceeds `K·N`, the maximal
//! `y`-degree at order `N`, so cyclic convolution never wraps. Integers are
//! recovered by Garner's mixed-radix CRT; the prime count comes from the
//! univariate majorant `A = x · Qbar(A, .., A)` with `Qbar` the polynomial at
//! `y = 1`, which dominates every `[x^n][y^p]` coefficient.

use std::collections::BTreeMap;

use num_bigint::BigInt;
use num_traits::{ToPrimitive, Zero};

use super::IntTables;
use crate::model::WeightFunction;

const PRIME_EXP: u32 = 20;

fn pow_mod(mut b: u64, mut e: u64, p: u64) -> u64 {
    let mut r = 1u64;
    b %= p;
    while e > 0 {
        if e & 1 == 1 {
            r = r * b % p;
        }
        b = b * b % p;
        e >>= 1;
    }
    r
}

fn is_prime_u32(n: u64) -> bool {
    if n < 2 {
        return false;
    }
    for sp in [2u64, 3, 5, 7, 11, 13] {
        if n.is_multiple_of(sp) {
            return n == sp;
        }
    }
    let mut d = n - 1;
    let mut s = 0;
    while d.is_multiple_of(2) {
        d /= 2;
        s += 1;
    }
    // deterministic for n < 4,759,123,141
    'bases: for a in [2u64, 7, 61] {
        if a % n == 0 {
            continue;
        }
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = x * x % n;
            if x == n - 1 {
                continue 'bases;
            }
        }
        return false;
    }
    true
}

fn primitive_root(p: u64) -> u64 {
    let mut factors = Vec::new();
    let mut m = p - 1;
    let mut q = 2;
    while q * q <= m {
        if m.is_multiple_of(q) {
            factors.push(q);
            while m.is_multiple_of(q) {
                m /= q;
            }
        }
        q += 1;
    }
    if m > 1 {
        factors.push(m);
    }
    (2..p).find(|&g| factors.iter().all(|&f| pow_mod(g, (p - 1) / f, p) != 1)).expect("prime has a generator")
}

/// Primes `c·2^20 + 1 < 2^31`, largest first.
pub(crate) fn ntt_primes(count: usize) -> Vec<u64> {
    let step = 1u64 << PRIME_EXP;
    let mut c = ((1u64 << 31) - 1) / step;
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        assert!(c > 0, "ran out of NTT primes");
        let p = c * step + 1;
        if is_prime_u32(p) {
            out.push(p);
        }
        c -= 1;
    }
    out
}

struct Ntt {
    p: u64,
    len: usize,
    /// roots[level] = primitive 2^(level+1)-th root, forward and inverse
    roots: Vec<u64>,
    inv_roots: Vec<u64>,
    inv_len: u64,
    /// ω^t for the y-shift multiplier
    omega_pow: Vec<u64>,
}

impl Ntt {
    fn new(p: u64, len: usize) -> Self {
        assert!(len.is_power_of_two() && (len as u64) <= (1 << PRIME_EXP));
        let g = primitive_root(p);
        let mut roots = Vec::new();
        let mut inv_roots = Vec::new();
        let mut l = 2;
        while l <= len {
            let r = pow_mod(g, (p - 1) / l as u64, p);
            roots.push(r);
            inv_roots.push(pow_mod(r, p - 2, p));
            l <<= 1;
        }
        let omega = pow_mod(g, (p - 1) / len as u64, p);
        let mut omega_pow = vec![1u64; len];
        for t in 1..len {
            omega_pow[t] = omega_pow[t - 1] * omega % p;
        }
        Self { p, len, roots, inv_roots, inv_len: pow_mod(len as u64, p - 2, p), omega_pow }
    }

    /// In-place transform; output index `t` holds `sum_j a_j ω^{jt}`.
    fn transform(&self, a: &mut [u64], invert: bool) {
        let n = self.len;
        let p = self.p;
        let mut j = 0;
        for i in 1..n {
            let mut bit = n >> 1;
            while j & bit != 0 {
                j ^= bit;
                bit >>= 1;
            }
            j ^= bit;
            if i < j {
                a.swap(i, j);
            }
        }
        let mut len = 2;
        let mut level = 0;
        while len <= n {
            let wl = if invert { self.inv_roots[level] } else { self.roots[level] };
            let half = len / 2;
            let mut tw = vec![1u64; half];
            for k in 1..half {
                tw[k] = tw[k - 1] * wl % p;
            }
            for start in (0..n).step_by(len) {
                for k in 0..half {
                    let u = a[start + k];
                    let v = a[start + k + half] * tw[k] % p;
                    a[start + k] = if u + v >= p { u + v - p } else { u + v };
                    a[start + k + half] = if u >= v { u - v } else { u + p - v };
                }
            }
            len <<= 1;
            level += 1;
        }
        if invert {
            for x in a.iter_mut() {
                *x = *x * self.inv_len % p;
            }
        }
    }

    fn forward_of(&self, coeffs: &[u64]) -> Vec<u64> {
        let mut a = vec![0u64; self.len];
        a[..coeffs.len()].copy_from_slice(coeffs);
        self.transform(&mut a, false);
        a
    }
}

/// Bit length bound of every integer-scaled coefficient up to order `n_max`.
fn majorant_bits(w: &WeightFunction, n_max: usize) -> u64 {
    let (_, scaled) = w.integer_scaled();
    let mut by_arity: BTreeMap<usize, BigInt> = BTreeMap::new();
    for (e, v) in &scaled {
        *by_arity.entry(e.arity()).or_insert_with(BigInt::zero) += v;
    }
    let max_k = by_arity.keys().copied().max().unwrap_or(0);
    // pow[d][m] = [x^m] A^d
    let mut a = vec![BigInt::zero(); n_max + 1];
    let mut pow = vec![vec![BigInt::zero(); n_max + 1]; max_k + 1];
    pow[0][0] = BigInt::from(1);
    let mut bits = 1;
    for n in 1..=n_max {
        let m = n - 1;
        for d in 1..=max_k {
            let mut acc = BigInt::zero();
            for j in 1..=m {
                if !pow[d - 1][m - j].is_zero() {
                    acc += &pow[d - 1][m - j] * &a[j];
                }
            }
            pow[d][m] = acc;
        }
        let mut an = BigInt::zero();
        for (k, coef) in &by_arity {
            an += coef * &pow[*k][m];
        }
        bits = bits.max(an.bits());
        a[n] = an;
    }
    bits
}

struct Node {
    last_shift: usize,
    parent: Option<usize>,
    /// transform of `[x^m]` of the partial product
    value: Vec<Vec<u64>>,
}

/// Residues of the integer-scaled table modulo `p`: `out[n][q]` for `q <= K n`.
fn solve_mod_prime(
    p: u64,
    len: usize,
    kb: usize,
    n_max: usize,
    monos: &[(Vec<usize>, Vec<(usize, BigInt)>)],
) -> Vec<Vec<u32>> {
    let ntt = Ntt::new(p, len);
    let mut nodes: Vec<Node> = Vec::new();
    let mut index: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
    let mut tops: Vec<(Option<usize>, Vec<u64>)> = Vec::new();
    let mut constant_poly = vec![0u64; kb + 1];
    for (shifts, coeffs) in monos {
        let mut c = vec![0u64; kb + 1];
        for (deg, v) in coeffs {
            let r = (v % BigInt::from(p)).to_u64().expect("nonnegative residue");
            c[*deg] = (c[*deg] + r) % p;
        }
        if shifts.is_empty() {
            for (i, v) in c.iter().enumerate() {
                constant_poly[i] = (constant_poly[i] + v) % p;
            }
            continue;
        }
        let mut parent = None;
        for l in 1..=shifts.len() {
            let key = shifts[..l].to_vec();
            let id = *index.entry(key).or_insert_with(|| {
                nodes.push(Node { last_shift: shifts[l - 1], parent, value: vec![Vec::new(); n_max + 1] });
                nodes.len() - 1
            });
            parent = Some(id);
        }
        tops.push((parent, ntt.forward_of(&c)));
    }
    let mut shift_set: Vec<usize> = nodes.iter().map(|n| n.last_shift).collect();
    shift_set.sort_unstable();
    shift_set.dedup();
    // fwd[shift][m] = transform of Δ^{(shift)} f_m
    let mut fwd: BTreeMap<usize, Vec<Vec<u64>>> =
        shift_set.iter().map(|&s| (s, vec![Vec::new(); n_max + 1])).collect();
    let mut out: Vec<Vec<u32>> = vec![Vec::new(); n_max + 1];
    let mut acc = vec![0u128; len];
    for n in 1..=n_max {
        let m = n - 1;
        if m >= 1 {
            for id in 0..nodes.len() {
                let s = nodes[id].last_shift;
                let g = &fwd[&s];
                let val = match nodes[id].parent {
                    None => g[m].clone(),
                    Some(pid) => {
                        acc.iter_mut().for_each(|a| *a = 0);
                        let parent = &nodes[pid];
                        let same = parent.parent.is_none() && parent.last_shift == s;
                        let mut any = false;
                        if same {
                            // square of one factor: pair j with m - j once
                            for j in 1..m {
                                let k = m - j;
                                if j > k {
                                    break;
                                }
                                let (a, b) = (&g[j], &g[k]);
                                if a.is_empty() || b.is_empty() {
                                    continue;
                                }
                                any = true;
                                let mult = if j == k { 1u128 } else { 2u128 };
                                for t in 0..len {
                                    acc[t] += mult * (a[t] as u128 * b[t] as u128);
                                }
                            }
                        } else {
                            for j in 1..m {
                                let (a, b) = (&parent.value[j], &g[m - j]);
                                if a.is_empty() || b.is_empty() {
                                    continue;
                                }
                                any = true;
                                for t in 0..len {
                                    acc[t] += a[t] as u128 * b[t] as u128;
                                }
                            }
                        }
                        if any {
                            acc.iter().map(|&v| (v % p as u128) as u64).collect()
                        } else {
                            Vec::new()
                        }
                    }
                };
                nodes[id].value[m] = val;
            }
        }
        let mut coeffs: Vec<u64> = if n == 1 {
            constant_poly.clone()
        } else {
            let mut tr = vec![0u64; len];
            for (top, wt) in &tops {
                let id = top.expect("non-constant monomial");
                let v = &nodes[id].value[m];
                if v.is_empty() {
                    continue;
                }
                for t in 0..len {
                    tr[t] = (tr[t] + wt[t] * v[t] % p) % p;
                }
            }
            ntt.transform(&mut tr, true);
            debug_assert!(tr[(kb * n + 1).min(len)..].iter().all(|&v| v == 0), "degree exceeds K n");
            tr.truncate(kb * n + 1);
            tr
        };
        coeffs.resize(kb * n + 1, 0);
        for (&s, table) in fwd.iter_mut() {
            table[n] = if s < coeffs.len() { ntt.forward_of(&coeffs[s..]) } else { Vec::new() };
        }
        out[n] = coeffs.iter().map(|&v| v as u32).collect();
    }
    let _ = &ntt.omega_pow;
    out
}

/// Garner reconstruction of nonnegative integers below the prime product.
struct Crt {
    primes: Vec<u64>,
    /// inv[i][j] = p_j^{-1} mod p_i for j < i
    inv: Vec<Vec<u64>>,
}

impl Crt {
    fn new(primes: Vec<u64>) -> Self {
        let inv = (0..primes.len())
            .map(|i| (0..i).map(|j| pow_mod(primes[j] % primes[i], primes[i] - 2, primes[i])).collect())
            .collect();
        Self { primes, inv }
    }

    fn reconstruct(&self, residues: &[u64]) -> BigInt {
        let r = self.primes.len();
        let mut v = vec![0u64; r];
        for i in 0..r {
            let pi = self.primes[i];
            let mut t = residues[i] % pi;
            for j in 0..i {
                t = (t + pi - v[j] % pi) % pi * self.inv[i][j] % pi;
            }
            v[i] = t;
        }
        if v.iter().all(|&x| x == 0) {
            return BigInt::zero();
        }
        let mut x = BigInt::from(v[r - 1]);
        for i in (0..r - 1).rev() {
            x = x * self.primes[i] + v[i];
        }
        x
    }
}

pub(crate) fn solve_modular(w: &WeightFunction, n_max: usize) -> IntTables {
    let kb = w.bound();
    let (d, _) = w.integer_scaled();
    let dq = num_rational::BigRational::from_integer(d.clone());
    let monos: Vec<(Vec<usize>, Vec<(usize, BigInt)>)> = w
        .monomials()
        .into_iter()
        .map(|m| (m.shifts, m.coeffs.into_iter().map(|(c, v)| (c, (v * &dq).to_integer())).collect()))
        .collect();
    let bits = majorant_bits(w, n_max) + 2;
    let count = (bits as usize).div_ceil(30);
    let primes = ntt_primes(count);
    let len = (kb * n_max + 1).next_power_of_two().max(2);
    let residues: Vec<Vec<Vec<u32>>> =
        primes.iter().map(|&p| solve_mod_prime(p, len, kb, n_max, &monos)).collect();
    let crt = Crt::new(primes);
    let mut f: Vec<Vec<BigInt>> = vec![Vec::new(); n_max + 1];
    let mut buf = vec![0u64; crt.primes.len()];
    for n in 1..=n_max {
        let mut row = Vec::with_capacity(kb * n + 1);
        for q in 0..=kb * n {
            for (i, r) in residues.iter().enumerate() {
                buf[i] = r[n][q] as u64;
            }
            row.push(crt.reconstruct(&buf));
        }
        while row.last().is_some_and(Zero::is_zero) {
            row.pop();
        }
        f[n] = row;
    }
    IntTables { scale: d, f, g: None }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primes_are_ntt_friendly() {
        let ps = ntt_primes(5);
        for &p in &ps {
            assert!(is_prime_u32(p));
            assert_eq!((p - 1) % (1 << PRIME_EXP), 0);
            assert!(p < 1 << 31);
        }
    }

    #[test]
    fn ntt_roundtrip_and_convolution() {
        let p = ntt_primes(1)[0];
        let ntt = Ntt::new(p, 8);
        let a = ntt.forward_of(&[1, 2, 3]);
        let b = ntt.forward_of(&[4, 5]);
        let mut c: Vec<u64> = a.iter().zip(&b).map(|(x, y)| x * y % p).collect();
        ntt.transform(&mut c, true);
        assert_eq!(&c[..5], &[4, 13, 22, 15, 0]);
    }

    #[test]
    fn garner_recovers_large_integers() {
        let crt = Crt::new(ntt_primes(4));
        let x: BigInt = BigInt::from(3u64).pow(70);
        let res: Vec<u64> = crt.primes.iter().map(|&p| (&x % BigInt::from(p)).to_u64().unwrap()).collect();
        assert_eq!(crt.reconstruct(&res), x);
    }
}
