//! Structural invariants checked on random models, trees and walks.

use num_traits::{ToPrimitive, Zero};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use catpark::mc::{run_chunks, McConfig};
use catpark::model::{rat, Rational, WeightFunction};
use catpark::models::planar_maps;
use catpark::solver::{compute_coefficients, compute_coefficients_with, evaluate, Backend, EvalConfig};
use catpark::trees::{enumerate_fpt, park, park_event_driven, weight, LabeledTree, ParkingTree};
use catpark::walk::{key_formula_exact, renewal_from};

type RawEntry = (usize, Vec<usize>, i64);

fn entries() -> impl Strategy<Value = Vec<RawEntry>> {
    prop::collection::vec((0usize..=2, prop::collection::vec(0usize..=2, 0..=2), 1i64..=3), 1..=6)
}

fn model(raw: &[RawEntry]) -> WeightFunction {
    let mut w = WeightFunction::new("random", 2).unwrap();
    for (c, s, n) in raw {
        w.set(*c, s, rat(*n, 4)).unwrap();
    }
    w
}

fn parking_tree() -> impl Strategy<Value = ParkingTree> {
    let leaf = (0usize..=3).prop_map(ParkingTree::leaf);
    leaf.prop_recursive(4, 24, 3, |inner| {
        (0usize..=3, prop::collection::vec((0usize..=3, inner), 0..=3))
            .prop_map(|(cars, children)| ParkingTree { cars, children })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Coefficients of the catalytic equation count weighted fully parked trees.
    #[test]
    fn coefficients_count_fully_parked_trees(raw in entries()) {
        let w = model(&raw);
        let sol = compute_coefficients(&w, 4).unwrap();
        for p in 0..=4 {
            for n in 1..=4 {
                let brute: Rational = enumerate_fpt(&w, n, p).unwrap().into_iter().map(|t| t.weight).sum();
                prop_assert_eq!(brute, sol.table.coeff(n, p), "n = {}, p = {}", n, p);
            }
        }
    }

    /// The big-integer and multi-modular backends agree exactly.
    #[test]
    fn backends_agree(raw in entries()) {
        let w = model(&raw);
        let a = compute_coefficients_with(&w, 16, Backend::Direct).unwrap();
        let b = compute_coefficients_with(&w, 16, Backend::Modular).unwrap();
        for p in 0..=a.table.p_cap() {
            prop_assert_eq!(a.table.get(p), b.table.get(p), "p = {}", p);
        }
    }

    /// The final fluxes do not depend on the order in which cars arrive.
    #[test]
    fn parking_is_order_independent(t in parking_tree(), seed in any::<u64>()) {
        let parked = park(&t);
        let ev = park_event_driven(&t, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(ev.arrivals[0], parked.labeled.root_flux());
        let free: usize = {
            let mut spots = Vec::new();
            collect_spots(&t, &mut spots);
            spots.iter().sum::<usize>() - ev.occupied.iter().sum::<usize>()
        };
        prop_assert_eq!(free, parked.free_spots);
    }

    /// The Key formula holds coefficientwise for any exchangeable model.
    #[test]
    fn key_formula_on_random_models(raw in entries(), p in 2usize..=3, t in 1usize..=2) {
        let w = model(&raw).symmetrize();
        let v = key_formula_exact(&w, p, t, 6).unwrap();
        prop_assert!(v.pass, "{:?}", v.first_mismatch);
    }

    /// Serialized labeled trees parse back to the same tree.
    #[test]
    fn labeled_tree_text_round_trip(t in parking_tree()) {
        let l = park(&t).labeled;
        let back = LabeledTree::from_text(&l.to_text()).unwrap();
        prop_assert_eq!(back.to_text(), l.to_text());
        prop_assert_eq!(back.len(), t.size());
    }

    /// For a symmetric walk with steps in {-2..2} the ascending ladder height
    /// is proper and the pre-renewal function starts at one.
    #[test]
    fn symmetric_walk_ladders(a in 1u32..=9, b in 1u32..=9, c in 0u32..=9) {
        let (a, b, c) = (a as f64, b as f64, c as f64);
        let z = 2.0 * (a + b) + c;
        let law = vec![a / z, b / z, c / z, b / z, a / z];
        let r = renewal_from(&law, 2, 2, 40).unwrap();
        let up: f64 = r.ascending.iter().sum();
        let down: f64 = r.descending.iter().sum();
        prop_assert!((up - 1.0).abs() < 1e-8, "ascending mass {}", up);
        prop_assert!((down - 1.0).abs() < 1e-8, "descending mass {}", down);
        prop_assert_eq!(r.h_pre[0], 1.0);
        prop_assert!(r.h_ren.windows(2).all(|w| w[1] >= w[0]));
    }
}

fn collect_spots(t: &ParkingTree, out: &mut Vec<usize>) {
    for (s, c) in &t.children {
        out.push(*s);
        collect_spots(c, out);
    }
}

#[test]
fn tree_weight_matches_enumeration() {
    let w = planar_maps();
    for item in enumerate_fpt(&w, 3, 2).unwrap() {
        assert_eq!(weight(&w, &item.tree), item.weight);
        assert!(park(&item.tree).fully_parked);
    }
}

#[test]
fn numeric_solution_matches_series_below_criticality() {
    let w = planar_maps();
    let x = rat(1, 40);
    let sol = compute_coefficients(&w, 60).unwrap();
    let e = evaluate(&w, &x, &EvalConfig { p_max: 60, ..Default::default() }).unwrap();
    assert!(e.converged);
    let xf = x.to_f64().unwrap();
    for p in 0..=4 {
        let s = sol.table.get(p);
        let exact: f64 = (0..=60).map(|n| s.coeff(n).to_f64().unwrap() * xf.powi(n as i32)).sum();
        let rel = (e.w(p) - exact).abs() / exact;
        assert!(rel < 1e-9, "p = {p}: {} vs {exact} ({rel:.1e})", e.w(p));
    }
}

#[test]
fn chunks_do_not_depend_on_worker_count() {
    let draw = |workers| {
        let cfg = McConfig { seed: 7, workers, chunk: 10 };
        run_chunks(&cfg, 95, |rng, n| (0..n).map(|_| rand::Rng::random::<u64>(rng)).collect::<Vec<_>>())
    };
    let one = draw(1);
    assert_eq!(one.iter().map(Vec::len).sum::<usize>(), 95);
    assert_eq!(one, draw(4));
}

#[test]
fn zero_weights_are_not_stored() {
    let mut w = planar_maps();
    let n = w.len();
    let (e, _) = w.entries().next().map(|(e, v)| (e.clone(), v.clone())).unwrap();
    w.set(e.cars, &e.spots, Rational::zero()).unwrap();
    assert_eq!(w.len(), n - 1);
}
