//! Partition functions: exact `x`-coefficients of `W_p`, the pointed series
//! `W^•`, `W^°`, and numeric evaluation at a fixed `x`.

mod direct;
mod modular;
mod numeric;

use num_bigint::BigInt;
use num_traits::{One, Zero};

pub use numeric::{evaluate, EvalConfig, Method, NumericEvaluation};

use crate::error::{Error, Result};
use crate::model::{Rational, WeightFunction};
use crate::series::{Series, SeriesTable};

/// Integer-scaled coefficients: `f[n][p] = D^n [x^n][y^p] F`.
pub(crate) struct IntTables {
    pub scale: BigInt,
    pub f: Vec<Vec<BigInt>>,
    pub g: Option<Vec<Vec<BigInt>>>,
}

/// Orders up to this use the direct big-integer recursion.
pub const DIRECT_MAX_ORDER: usize = 48;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Backend {
    Auto,
    Direct,
    Modular,
}

#[derive(Clone, Debug)]
pub struct PartitionSolution {
    pub weights: WeightFunction,
    pub order: usize,
    /// `W_p` for `p <= K·N`.
    pub table: SeriesTable,
    pub pointed_bullet: Option<SeriesTable>,
    pub pointed_circ: Option<SeriesTable>,
}

fn to_table(rows: &[Vec<BigInt>], scale: &BigInt, order: usize, p_cap: usize) -> SeriesTable {
    let mut pow = vec![BigInt::one(); order + 1];
    for n in 1..=order {
        pow[n] = &pow[n - 1] * scale;
    }
    let series = (0..=p_cap)
        .map(|p| {
            let coeffs = (0..=order)
                .map(|n| match rows[n].get(p) {
                    Some(v) if !v.is_zero() => Rational::new(v.clone(), pow[n].clone()),
                    _ => Rational::zero(),
                })
                .collect();
            Series::from_coeffs(coeffs)
        })
        .collect();
    SeriesTable::new(series)
}

/// Exact `[x^n]W_p` for `n <= N`, `p <= K·N`.
pub fn compute_coefficients(w: &WeightFunction, order: usize) -> Result<PartitionSolution> {
    compute_coefficients_with(w, order, Backend::Auto)
}

pub fn compute_coefficients_with(w: &WeightFunction, order: usize, backend: Backend) -> Result<PartitionSolution> {
    if order == 0 {
        return Err(Error::Argument("order must be at least 1".into()));
    }
    if w.is_empty() {
        return Err(Error::Model("empty weight table".into()));
    }
    let ints = match backend {
        Backend::Direct => direct::solve_direct(w, order, false),
        Backend::Modular => modular::solve_modular(w, order),
        Backend::Auto if order <= DIRECT_MAX_ORDER => direct::solve_direct(w, order, false),
        Backend::Auto => modular::solve_modular(w, order),
    };
    let p_cap = w.bound() * order;
    Ok(PartitionSolution {
        weights: w.clone(),
        order,
        table: to_table(&ints.f, &ints.scale, order, p_cap),
        pointed_bullet: None,
        pointed_circ: None,
    })
}

/// Adds `W^•` (`n·[x^n]W_p`) and `W^°` (the label-`K` marked recursion).
pub fn compute_pointed(sol: &PartitionSolution) -> Result<PartitionSolution> {
    let ints = direct::solve_direct(&sol.weights, sol.order, true);
    let p_cap = sol.table.p_cap();
    let check = to_table(&ints.f, &ints.scale, sol.order, p_cap);
    if check != sol.table {
        return Err(Error::Numeric("pointed recursion disagrees with the stored table".into()));
    }
    let g = ints.g.expect("pointed tables requested");
    let bullet = SeriesTable::new(
        sol.table
            .rows()
            .iter()
            .map(|s| {
                Series::from_coeffs(
                    s.coeffs().iter().enumerate().map(|(n, c)| c * Rational::from_integer(n.into())).collect(),
                )
            })
            .collect(),
    );
    let mut out = sol.clone();
    out.pointed_bullet = Some(bullet);
    out.pointed_circ = Some(to_table(&g, &ints.scale, sol.order, p_cap));
    Ok(out)
}
