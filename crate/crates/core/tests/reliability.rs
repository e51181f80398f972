use proptest::prelude::*;

use sdeid_core::{
    builtin_system, compare_curves, failure_probability, BasisExpansion, BasisTerm, BuiltinSystem, FailureCurve,
    LimitState, McSettings, Scheme, SdeModel,
};

fn ou(theta: f64, sigma: f64) -> SdeModel {
    SdeModel::new(
        "ou",
        vec![BasisExpansion::new(1, vec![(BasisTerm::linear(0), -theta)]).unwrap()],
        vec![BasisExpansion::constant(1, sigma)],
    )
    .unwrap()
}

fn settings(horizon: f64, n_paths: usize, seed: u64) -> McSettings {
    McSettings {
        dt: 0.001,
        horizon,
        n_paths,
        seed,
        report_stride: 0.1,
        scheme: Scheme::Explicit,
    }
}

fn is_monotone(c: &FailureCurve) -> bool {
    c.pf.windows(2).all(|w| w[1] >= w[0])
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn quadrupling_paths_halves_the_interval() {
    let model = ou(1.0, 1.0);
    let ls = LimitState::above(0, 0.8);
    let small = failure_probability(&model, &[0.0], &ls, &settings(2.0, 1000, 1)).unwrap();
    let large = failure_probability(&model, &[0.0], &ls, &settings(2.0, 4000, 2)).unwrap();
    let ratio = mean(&small.ci_halfwidth[1..]) / mean(&large.ci_halfwidth[1..]);
    assert!((ratio - 2.0).abs() < 0.2, "ratio {ratio}");
    let doubled = failure_probability(&model, &[0.0], &ls, &settings(2.0, 2000, 3)).unwrap();
    let ratio = mean(&small.ci_halfwidth[1..]) / mean(&doubled.ci_halfwidth[1..]);
    assert!((ratio - 2f64.sqrt()).abs() < 0.15, "ratio {ratio}");
}

#[test]
fn raising_the_threshold_never_raises_pf() {
    let model = ou(1.0, 1.0);
    let curves: Vec<FailureCurve> = [0.4, 0.7, 1.0]
        .iter()
        .map(|&t| failure_probability(&model, &[0.0], &LimitState::above(0, t), &settings(3.0, 500, 4)).unwrap())
        .collect();
    for pair in curves.windows(2) {
        for (lo, hi) in pair[0].pf.iter().zip(&pair[1].pf) {
            assert!(hi <= lo);
        }
    }
    assert!(curves.iter().all(is_monotone));
}

#[test]
fn parallel_schedule_does_not_change_the_curve() {
    let model = ou(2.0, 0.5);
    let ls = LimitState::above(0, 0.3);
    let s = settings(1.0, 300, 9);
    let a = failure_probability(&model, &[0.0], &ls, &s).unwrap();
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let b = pool.install(|| failure_probability(&model, &[0.0], &ls, &s).unwrap());
    assert_eq!(a, b);
}

#[test]
fn duffing_pf_is_reproducible_across_seeds() {
    let (model, x0) = builtin_system(BuiltinSystem::DuffingSdof);
    let ls = LimitState::above(0, 0.0645);
    let a = failure_probability(&model, &x0, &ls, &settings(30.0, 2000, 11)).unwrap();
    let b = failure_probability(&model, &x0, &ls, &settings(30.0, 2000, 12)).unwrap();
    assert!(is_monotone(&a) && is_monotone(&b));
    assert_eq!(a.times.len(), 301);
    assert!(
        (a.final_pf() - b.final_pf()).abs() <= 0.03,
        "{} vs {}",
        a.final_pf(),
        b.final_pf()
    );
    let cmp = compare_curves(&a, &a).unwrap();
    assert_eq!(cmp.sup_diff, 0.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn curves_are_monotone_and_bounded(
        theta in 0.5f64..5.0,
        sigma in 0.1f64..2.0,
        thr in 0.05f64..1.5,
        seed in 0u64..1000,
    ) {
        let c = failure_probability(&ou(theta, sigma), &[0.0], &LimitState::above(0, thr), &settings(1.0, 100, seed)).unwrap();
        prop_assert!(is_monotone(&c));
        prop_assert!(c.pf.iter().all(|p| (0.0..=1.0).contains(p)));
        prop_assert_eq!(c.pf[0], 0.0);
    }

    #[test]
    fn threshold_order_is_respected(seed in 0u64..1000, lo in 0.1f64..0.5, gap in 0.05f64..0.5) {
        let model = ou(1.0, 1.0);
        let s = settings(1.0, 100, seed);
        let a = failure_probability(&model, &[0.0], &LimitState::above(0, lo), &s).unwrap();
        let b = failure_probability(&model, &[0.0], &LimitState::above(0, lo + gap), &s).unwrap();
        prop_assert!(a.pf.iter().zip(&b.pf).all(|(x, y)| y <= x));
    }
}
