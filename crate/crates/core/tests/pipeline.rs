use slowmix_core::advdiff::{adjoint_evolve, energy_identity_defect, evolve, EvolveSpec};
use slowmix_core::derive_seed;
use slowmix_core::flow::FlowRealization;
use slowmix_core::profile::ShearProfile;
use slowmix_core::spectral::SpectralField;
use slowmix_core::transport::{pullback_solution, TrigPolynomial};

fn flow(amplitude: f64, seed: u64, legs: usize) -> FlowRealization {
    FlowRealization::realize(1.0 / 8.0, amplitude, ShearProfile::cosine_bump(), seed, legs).unwrap()
}

#[test]
fn inviscid_solver_tracks_exact_transport() {
    let f = flow(0.2, 3, 2);
    let init = TrigPolynomial::random(11, 3).unwrap();
    let m = 128;
    let (out, _) = evolve(&EvolveSpec::new(&f, 0.0, 0.0, 2.0).with_substeps(256), &init.sample(m).unwrap()).unwrap();
    let exact = pullback_solution(&f, 2, &init, m).unwrap();
    let rel = out.sub(&exact).unwrap().l2_norm() / exact.l2_norm();
    assert!(rel < 1e-2, "relative error {rel}");
}

#[test]
fn diffusion_dissipates_and_balances_energy() {
    let f = flow(2.0, 1, 3);
    let init = SpectralField::random_bandlimited(5, 4, 64).unwrap();
    let kappa = 1.0 / 8.0;
    let (out, trace) = evolve(&EvolveSpec::new(&f, kappa, 0.0, 3.0).with_substeps(128), &init).unwrap();
    assert!(out.l2_norm() < init.l2_norm());
    assert!(out.is_mean_zero(1e-12));
    for w in trace.samples.windows(2) {
        assert!(w[1].l2_sq <= w[0].l2_sq * (1.0 + 1e-12));
    }
    let defect = energy_identity_defect(&trace, kappa);
    assert!(defect < 1e-3, "defect {defect}");
}

#[test]
fn adjoint_pairs_with_forward() {
    let f = flow(50.0, 9, 2);
    let a = SpectralField::random_bandlimited(1, 5, 64).unwrap();
    let b = SpectralField::random_bandlimited(2, 5, 64).unwrap();
    let spec = EvolveSpec::new(&f, 0.05, 0.3, 1.7);
    let (ta, _) = evolve(&spec, &a).unwrap();
    let tsb = adjoint_evolve(&spec, &b).unwrap();
    let lhs = ta.inner(&b).unwrap();
    let rhs = a.inner(&tsb).unwrap();
    assert!((lhs - rhs).abs() < 1e-10 * a.l2_norm() * b.l2_norm(), "{lhs} vs {rhs}");
}

#[test]
fn seeds_reproduce_realizations() {
    let s = derive_seed(7, 2, 3);
    assert_eq!(s, derive_seed(7, 2, 3));
    assert_ne!(s, derive_seed(7, 3, 2));
    let (a, b) = (flow(1.0, s, 4), flow(1.0, s, 4));
    for leg in 0..4 {
        assert_eq!(a.phases(leg), b.phases(leg));
    }
}
