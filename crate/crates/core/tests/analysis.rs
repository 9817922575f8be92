//! Lamperti exponents against closed forms computed here with statrs.

use statrs::function::gamma::{digamma, gamma};

use catpark::lamperti::{
    find_root, integrate, lk_closed_form_check, psi, tilt_proportionality, Branch, EULER_GAMMA, PSI_TOL,
};

#[test]
fn quadrature_handles_endpoint_singularities() {
    let q = integrate(|x| x.powf(-0.5), 0.0, 1.0, 1e-12).unwrap();
    assert!((q.value - 2.0).abs() < 1e-9, "{}", q.value);
    let q = integrate(|x| (1.0 - x).ln(), 0.0, 1.0, 1e-12).unwrap();
    assert!((q.value + 1.0).abs() < 1e-9, "{}", q.value);
}

#[test]
fn compensated_exponent_matches_gamma_ratio() {
    for beta in [2.2, 2.5, 2.8] {
        for z in [0.25, 1.0, 1.5, 3.0] {
            let c = lk_closed_form_check(beta, z, 1e-9).unwrap();
            let oracle = gamma(1.0 + z) / gamma(2.0 - beta + z);
            assert!((c.quadrature - oracle).abs() < 1e-8, "beta {beta}, z {z}: {} vs {oracle}", c.quadrature);
        }
    }
}

#[test]
fn digamma_oracle_is_consistent() {
    // digamma(1) = -gamma_E
    assert!((digamma(1.0) + EULER_GAMMA).abs() < 1e-14);
}

#[test]
fn exponents_change_sign_once_per_branch() {
    for (branch, lo, hi, root) in [(Branch::Subordinator, 1.2, 1.8, 1.5), (Branch::Compensated, 2.2, 2.8, 2.5)] {
        let a = psi(branch, lo, PSI_TOL).unwrap().value;
        let b = psi(branch, hi, PSI_TOL).unwrap().value;
        assert!(a * b < 0.0, "{branch:?}: psi({lo}) = {a}, psi({hi}) = {b}");
        let c = find_root(branch, 1e-10).unwrap();
        assert_eq!(c.sign_changes, 1);
        assert!((c.root - root).abs() < 1e-8, "{branch:?}: {}", c.root);
        assert!(c.bracket.0 <= c.root && c.root <= c.bracket.1);
    }
}

#[test]
fn tilted_exponents_are_proportional() {
    for beta in [1.3, 1.5, 2.4] {
        let t = tilt_proportionality(beta, 99, 1e-10).unwrap();
        assert!(t.pass, "beta {beta}: variation {}", t.relative_variation);
    }
}

#[test]
fn branch_names_parse() {
    assert_eq!("subordinator".parse::<Branch>().unwrap(), Branch::Subordinator);
    assert_eq!("compensated".parse::<Branch>().unwrap(), Branch::Compensated);
    assert!("other".parse::<Branch>().is_err());
}
