//! Bundled models.

use crate::model::{rat, CatalyticPolynomial, WeightFunction};

/// Rooted planar maps counted by edges, with `y` marking the root-face
/// degree shifted by one: `Q = (y+1)^2 f^2 + (2(y+1)^2 + (y+1)) f + (y+1) f_1
/// + (y+1)^2 + (y+1)`, `K = 2`.
pub fn planar_maps() -> WeightFunction {
    let mut q = CatalyticPolynomial::new(1);
    let terms: [(&[usize], [i64; 3]); 4] = [
        (&[2, 0], [1, 2, 1]),
        (&[1, 0], [3, 5, 2]),
        (&[0, 1], [1, 1, 0]),
        (&[0, 0], [2, 3, 1]),
    ];
    for (deg, coeffs) in terms {
        for (c, v) in coeffs.into_iter().enumerate() {
            if v != 0 {
                q.add(c, deg, rat(v, 1)).expect("static polynomial");
            }
        }
    }
    WeightFunction::from_polynomial("planar_maps", &q).expect("static polynomial")
}

/// Parking on a Galton–Watson tree with offspring law (1/4, 1/2, 1/4) on
/// {0, 1, 2}, one spot on every edge and Binomial(2, 1/2) car arrivals (two
/// independent Bernoulli(1/2) cars): `w_{c,k,(1,..,1)} = mu(k) xi(c)`.
/// Arity 2 forces `K = 2`; with at most one car per vertex the flux could
/// never exceed 1.
pub fn unit_spot_parking() -> WeightFunction {
    let mu = [rat(1, 4), rat(1, 2), rat(1, 4)];
    let xi = [rat(1, 4), rat(1, 2), rat(1, 4)];
    let mut w = WeightFunction::new("unit_spot_parking", 2).expect("static bound");
    for (k, m) in mu.iter().enumerate() {
        for (c, x) in xi.iter().enumerate() {
            w.set(c, &vec![1; k], m * x).expect("static table");
        }
    }
    w
}

/// Looks up a bundled model by name.
pub fn bundled(name: &str) -> Option<WeightFunction> {
    match name {
        "planar_maps" => Some(planar_maps()),
        "unit_spot_parking" => Some(unit_spot_parking()),
        _ => None,
    }
}

pub const BUNDLED: [&str; 2] = ["planar_maps", "unit_spot_parking"];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::validate_assumptions;

    #[test]
    fn planar_table_matches_hand_expansion() {
        let w = planar_maps();
        assert_eq!(w.bound(), 2);
        for (c, v) in [2, 3, 1].into_iter().enumerate() {
            assert_eq!(w.get(c, &[]), rat(v, 1));
        }
        for (c, v) in [3, 5, 2].into_iter().enumerate() {
            assert_eq!(w.get(c, &[0]), rat(v, 1));
        }
        assert_eq!(w.get(0, &[1]), rat(1, 1));
        assert_eq!(w.get(1, &[1]), rat(1, 1));
        assert_eq!(w.get(2, &[1]), rat(0, 1));
        for (c, v) in [1, 2, 1].into_iter().enumerate() {
            assert_eq!(w.get(c, &[0, 0]), rat(v, 1));
        }
        assert_eq!(w.len(), 3 + 3 + 2 + 3);
    }

    #[test]
    fn bundled_models_pass_validation() {
        for name in BUNDLED {
            let w = bundled(name).unwrap();
            let r = validate_assumptions(&w, 4 * w.bound() + 8).unwrap();
            assert!(r.all_pass(), "{name}: {r:?}");
            assert!(r.p0.unwrap() <= w.bound());
        }
    }
}
