use feat_core::estimators::{
    bar_equilibrium, bootstrap_std, elbo_eubo, estimate_ledger, fep_estimate, iwae_backward, iwae_forward,
    min_variance_estimate,
};
use feat_core::numcore::mean;
use feat_core::transport::WorkLedger;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn works() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0..5.0f64, 2..40)
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

/// Works of a Gaussian process that obey Crooks exactly:
/// `W_f ~ N(ΔF + s²/2, s²)`, `W_b ~ N(ΔF − s²/2, s²)`.
fn crooks_gaussian(delta_f: f64, s: f64, n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |m: f64| -> Vec<f64> { (0..n).map(|_| m + s * rng.sample::<f64, _>(StandardNormal)).collect() };
    let f = draw(delta_f + 0.5 * s * s);
    let b = draw(delta_f - 0.5 * s * s);
    (f, b)
}

#[test]
fn crooks_consistent_works_recover_the_free_energy() {
    let (f, b) = crooks_gaussian(1.3, 1.0, 20_000, 1);
    let mv = min_variance_estimate(&f, &b).unwrap();
    assert!(mv.converged);
    assert!((mv.value - 1.3).abs() < 0.03, "{}", mv.value);
    let (elbo, eubo) = elbo_eubo(&f, &b);
    assert!(elbo.unwrap() < 1.3 && 1.3 < eubo.unwrap());
}

#[test]
fn fep_and_bar_on_exact_gaussian_samples() {
    // a = N(0,1), b = N(0, 1.5²); ΔF = −log 1.5.
    let truth = -(1.5f64).ln();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 20_000;
    let ua = |x: f64| 0.5 * x * x;
    let ub = |x: f64| 0.5 * x * x / 2.25;
    let xa: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let xb: Vec<f64> = (0..n).map(|_| 1.5 * rng.sample::<f64, _>(StandardNormal)).collect();
    let ea: Vec<f64> = xa.iter().map(|&x| ua(x)).collect();
    let eb: Vec<f64> = xa.iter().map(|&x| ub(x)).collect();
    assert!((fep_estimate(&ea, &eb).unwrap() - truth).abs() < 0.03);
    let du_a: Vec<f64> = xa.iter().map(|&x| ub(x) - ua(x)).collect();
    let du_b: Vec<f64> = xb.iter().map(|&x| ub(x) - ua(x)).collect();
    assert!((bar_equilibrium(&du_a, &du_b).unwrap().value - truth).abs() < 0.02);
}

#[test]
fn min_variance_has_lower_spread_than_one_sided_estimates() {
    let (mut mv, mut fw, mut bw) = (Vec::new(), Vec::new(), Vec::new());
    for seed in 0..40 {
        let (f, b) = crooks_gaussian(0.0, 1.5, 200, 100 + seed);
        mv.push(min_variance_estimate(&f, &b).unwrap().value);
        fw.push(iwae_forward(&f).unwrap());
        bw.push(iwae_backward(&b).unwrap());
    }
    let sd = |v: &[f64]| feat_core::numcore::std_dev(v);
    assert!(sd(&mv) < sd(&fw) && sd(&mv) < sd(&bw));
}

#[test]
fn report_on_a_ledger_matches_the_direct_estimators() {
    let (f, b) = crooks_gaussian(0.5, 0.8, 500, 3);
    let ledger = WorkLedger {
        forward: f.clone(),
        backward: b.clone(),
        ..WorkLedger::default()
    };
    let report = estimate_ledger(&ledger, 50, 9).unwrap();
    assert_eq!(report.value("min_variance"), Some(min_variance_estimate(&f, &b).unwrap().value));
    assert_eq!(report.value("iwae_forward"), iwae_forward(&f));
    assert_eq!(report.value("elbo"), Some(mean(&b)));
    assert!(report.flags.is_empty(), "{:?}", report.flags);
    let again = estimate_ledger(&ledger, 50, 9).unwrap();
    assert_eq!(report, again);
}

proptest! {
    #[test]
    fn jensen_orderings_hold_for_any_works(f in works(), b in works()) {
        let (elbo, eubo) = elbo_eubo(&f, &b);
        prop_assert!(elbo.unwrap() <= iwae_backward(&b).unwrap() + 1e-12);
        prop_assert!(iwae_forward(&f).unwrap() <= eubo.unwrap() + 1e-12);
    }

    #[test]
    fn estimates_shift_with_the_works(f in works(), b in works(), c in -10.0..10.0f64) {
        let fs: Vec<f64> = f.iter().map(|w| w + c).collect();
        let bs: Vec<f64> = b.iter().map(|w| w + c).collect();
        prop_assert!(close(iwae_forward(&fs).unwrap(), iwae_forward(&f).unwrap() + c, 1e-10));
        prop_assert!(close(iwae_backward(&bs).unwrap(), iwae_backward(&b).unwrap() + c, 1e-10));
        let m0 = min_variance_estimate(&f, &b).unwrap();
        let m1 = min_variance_estimate(&fs, &bs).unwrap();
        prop_assert!(m0.converged && m1.converged);
        prop_assert!(close(m1.value, m0.value + c, 1e-8), "{} vs {}", m1.value, m0.value + c);
    }

    #[test]
    fn estimates_ignore_order_and_duplication(f in works(), b in works(), seed in 0u64..100) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fp = f.clone();
        let mut bp = b.clone();
        for i in (1..fp.len()).rev() { fp.swap(i, rng.random_range(0..=i)); }
        for i in (1..bp.len()).rev() { bp.swap(i, rng.random_range(0..=i)); }
        let m = min_variance_estimate(&f, &b).unwrap().value;
        prop_assert!(close(min_variance_estimate(&fp, &bp).unwrap().value, m, 1e-8));
        let fd: Vec<f64> = f.iter().chain(&f).copied().collect();
        let bd: Vec<f64> = b.iter().chain(&b).copied().collect();
        prop_assert!(close(min_variance_estimate(&fd, &bd).unwrap().value, m, 1e-8));
        prop_assert!(close(iwae_forward(&fd).unwrap(), iwae_forward(&f).unwrap(), 1e-12));
    }

    #[test]
    fn reversing_the_process_negates_the_estimate(f in works(), b in works()) {
        let rf: Vec<f64> = b.iter().map(|w| -w).collect();
        let rb: Vec<f64> = f.iter().map(|w| -w).collect();
        let m = min_variance_estimate(&f, &b).unwrap().value;
        let r = min_variance_estimate(&rf, &rb).unwrap().value;
        prop_assert!(close(r, -m, 1e-8), "{r} vs {}", -m);
        prop_assert!(close(iwae_forward(&rf).unwrap(), -iwae_backward(&b).unwrap(), 1e-12));
    }

    #[test]
    fn bar_and_min_variance_agree_on_equilibrium_works(du_a in works(), du_b in works()) {
        let bar = bar_equilibrium(&du_a, &du_b).unwrap();
        let mv = min_variance_estimate(&du_a, &du_b).unwrap();
        prop_assert_eq!(bar.value, mv.value);
    }

    #[test]
    fn bootstrap_spread_of_a_constant_is_negligible(v in works(), c in -3.0..3.0f64) {
        let constant = vec![c; v.len()];
        prop_assert!(bootstrap_std(&constant, 30, 1, mean) <= 1e-12 * c.abs().max(1.0));
        prop_assert!(bootstrap_std(&v, 30, 1, mean) >= 0.0);
    }
}
