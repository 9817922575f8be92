//! Truncated power series in `x` with exact rational coefficients, and
//! flux-indexed tables of them.

use std::ops::{Add, Mul};

use num_bigint::BigInt;
use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::model::Rational;

/// `a_0 + a_1 x + .. + a_N x^N`; the order `N` is explicit and arithmetic
/// truncates at the smaller operand order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Series {
    coeffs: Vec<Rational>,
}

impl Series {
    pub fn zero(order: usize) -> Self {
        Self { coeffs: vec![Rational::zero(); order + 1] }
    }

    pub fn one(order: usize) -> Self {
        let mut s = Self::zero(order);
        s.coeffs[0] = Rational::one();
        s
    }

    /// `x^k` (zero if `k > order`).
    pub fn monomial(k: usize, order: usize) -> Self {
        let mut s = Self::zero(order);
        if k <= order {
            s.coeffs[k] = Rational::one();
        }
        s
    }

    pub fn from_coeffs(coeffs: Vec<Rational>) -> Self {
        assert!(!coeffs.is_empty(), "a series has at least the constant coefficient");
        Self { coeffs }
    }

    pub fn from_integers(coeffs: &[i64]) -> Self {
        Self::from_coeffs(coeffs.iter().map(|&c| Rational::from_integer(BigInt::from(c))).collect())
    }

    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn coeff(&self, n: usize) -> Rational {
        self.coeffs.get(n).cloned().unwrap_or_else(Rational::zero)
    }

    pub fn coeffs(&self) -> &[Rational] {
        &self.coeffs
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(Zero::is_zero)
    }

    pub fn truncate(&self, order: usize) -> Self {
        let mut c = self.coeffs.clone();
        c.resize(order + 1, Rational::zero());
        Self { coeffs: c }
    }

    pub fn scale(&self, k: &Rational) -> Self {
        Self { coeffs: self.coeffs.iter().map(|c| c * k).collect() }
    }

    /// Multiplication by `x^k` at the same order.
    pub fn shift_x(&self, k: usize) -> Self {
        let n = self.order();
        let mut c = vec![Rational::zero(); n + 1];
        for i in k..=n {
            c[i] = self.coeffs[i - k].clone();
        }
        Self { coeffs: c }
    }

    /// Valuation: index of the first nonzero coefficient.
    pub fn valuation(&self) -> Option<usize> {
        self.coeffs.iter().position(|c| !c.is_zero())
    }

    /// Sum of `a_n x^n` at a rational point.
    pub fn eval(&self, x: &Rational) -> Rational {
        let mut acc = Rational::zero();
        for c in self.coeffs.iter().rev() {
            acc = acc * x + c;
        }
        acc
    }
}

impl Add for &Series {
    type Output = Series;
    fn add(self, rhs: &Series) -> Series {
        let n = self.order().min(rhs.order());
        Series { coeffs: (0..=n).map(|i| &self.coeffs[i] + &rhs.coeffs[i]).collect() }
    }
}

impl Mul for &Series {
    type Output = Series;
    fn mul(self, rhs: &Series) -> Series {
        let n = self.order().min(rhs.order());
        let mut c = vec![Rational::zero(); n + 1];
        for (i, a) in self.coeffs.iter().enumerate().take(n + 1) {
            if a.is_zero() {
                continue;
            }
            for (j, b) in rhs.coeffs.iter().enumerate().take(n + 1 - i) {
                if !b.is_zero() {
                    c[i + j] += a * b;
                }
            }
        }
        Series { coeffs: c }
    }
}

/// Flux-indexed table `p -> W_p(x)` for `0 <= p <= p_cap`; the `y`-expansion
/// `F(x, y) = sum_p y^p W_p(x)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeriesTable {
    rows: Vec<Series>,
}

impl SeriesTable {
    pub fn new(rows: Vec<Series>) -> Self {
        assert!(!rows.is_empty());
        Self { rows }
    }

    pub fn p_cap(&self) -> usize {
        self.rows.len() - 1
    }

    pub fn order(&self) -> usize {
        self.rows[0].order()
    }

    /// `W_p`, or the zero series above the cap.
    pub fn get(&self, p: usize) -> Series {
        self.rows.get(p).cloned().unwrap_or_else(|| Series::zero(self.order()))
    }

    pub fn row(&self, p: usize) -> Option<&Series> {
        self.rows.get(p)
    }

    pub fn rows(&self) -> &[Series] {
        &self.rows
    }

    pub fn coeff(&self, n: usize, p: usize) -> Rational {
        self.rows.get(p).map(|s| s.coeff(n)).unwrap_or_else(Rational::zero)
    }

    /// `Δ^{(i)}`: `[y^p] Δ^{(i)} F = [y^{p+i}] F`, so row `p` of the result
    /// is row `p + i` of the input and the cap drops by `i`.
    pub fn delta(&self, i: usize, k_bound: usize) -> Result<Self> {
        if i == 0 || i > k_bound {
            return Err(Error::Argument(format!("shift {i} outside 1..={k_bound}")));
        }
        if i > self.p_cap() {
            return Err(Error::Argument(format!("shift {i} exceeds table cap {}", self.p_cap())));
        }
        Ok(Self { rows: self.rows[i..].to_vec() })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn product_examples() {
        let a = Series::from_integers(&[1, 1, 0]);
        let b = Series::from_integers(&[1, -1, 0]);
        assert_eq!(&a * &b, Series::from_integers(&[1, 0, -1]));
        assert!((&a * &Series::zero(2)).is_zero());
        let g = Series::from_integers(&[1, 1, 1, 1]);
        assert_eq!(&g * &g, Series::from_integers(&[1, 2, 3, 4]));
    }

    #[test]
    fn truncation_propagates_min_order() {
        let a = Series::from_integers(&[1, 1, 1, 1, 1]);
        let b = Series::from_integers(&[1, 1]);
        assert_eq!((&a * &b).order(), 1);
        assert_eq!((&a + &b).order(), 1);
    }

    #[test]
    fn delta_examples() {
        let t = SeriesTable::new(vec![Series::from_integers(&[1, 0]), Series::from_integers(&[0, 1])]);
        let d = t.delta(1, 2).unwrap();
        assert_eq!(d.p_cap(), 0);
        assert_eq!(d.get(0), Series::from_integers(&[0, 1]));
        assert!(t.delta(0, 2).is_err());
        assert!(t.delta(3, 2).is_err());
    }

    fn small_series(order: usize) -> impl Strategy<Value = Series> {
        prop::collection::vec(-20i64..20, order + 1).prop_map(|v| Series::from_integers(&v))
    }

    proptest! {
        #[test]
        fn cauchy_product_commutes_and_associates(a in small_series(5), b in small_series(5), c in small_series(5)) {
            prop_assert_eq!(&a * &b, &b * &a);
            prop_assert_eq!(&(&a * &b) * &c, &a * &(&b * &c));
            prop_assert_eq!(&a * &(&b + &c), &(&a * &b) + &(&a * &c));
        }

        #[test]
        fn delta_is_index_shift(rows in prop::collection::vec(small_series(3), 3..8), i in 1usize..3) {
            let t = SeriesTable::new(rows.clone());
            let d = t.delta(i, 2).unwrap();
            for p in 0..=d.p_cap() {
                prop_assert_eq!(d.get(p), rows[p + i].clone());
            }
        }
    }
}
