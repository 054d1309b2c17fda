use feat_core::interpolant::Schedule;
use feat_core::systems::{analytic_delta_f, EnergySystem};
use feat_core::transport::ledger::{format_works_csv, parse_works_csv};
use feat_core::transport::{
    simulate_ensemble, step_kernel_logpdf, AnalyticGaussianTransport, Direction, EnsembleConfig, LinearFlow, TimeGrid,
    TransportField, WorkLedger, ZeroField,
};
use ndarray::Array2;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn exact_samples(mean: f64, std: f64, n: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(mean, std).unwrap();
    Array2::from_shape_fn((n, 1), |_| normal.sample(&mut rng))
}

/// `mean(e^{−W_f})` and `mean(e^{W_b})` against `e^{∓ΔF}`, within three
/// standard errors.
fn check_crooks(field: &dyn TransportField, sigma: f64, steps: usize) {
    let a = EnergySystem::gaussian(vec![0.0], vec![1.0]).unwrap();
    let b = EnergySystem::gaussian(vec![0.5], vec![1.2]).unwrap();
    let df = analytic_delta_f(&a, &b).unwrap();
    let n = 20_000;
    let grid = TimeGrid::uniform(steps).unwrap();
    for (dir, starts, sign) in [
        (Direction::Forward, exact_samples(0.0, 1.0, n, 1), -1.0),
        (Direction::Backward, exact_samples(0.5, 1.2, n, 2), 1.0),
    ] {
        let cfg = EnsembleConfig::new(grid.clone(), sigma, 3);
        let out = simulate_ensemble(field, &a, &b, &cfg, dir, starts.view()).unwrap();
        let e: Vec<f64> = out.iter().map(|o| (sign * o.work).exp()).collect();
        let m = feat_core::numcore::mean(&e);
        let se = feat_core::numcore::std_dev(&e) / (n as f64).sqrt();
        let target = (sign * df).exp();
        assert!((m - target).abs() <= 3.0 * se, "{dir:?}: {m} vs {target} (se {se})");
    }
}

#[test]
fn crooks_holds_for_a_zero_transport_at_finite_steps() {
    check_crooks(&ZeroField { dim: 1 }, 0.7, 5);
}

#[test]
fn crooks_holds_for_a_wrong_drift() {
    check_crooks(&LinearFlow { dim: 1, rate: 0.8 }, 0.6, 8);
}

#[test]
fn crooks_holds_for_the_exact_transport_on_a_coarse_grid() {
    let a = EnergySystem::gaussian(vec![0.0], vec![1.0]).unwrap();
    let b = EnergySystem::gaussian(vec![0.5], vec![1.2]).unwrap();
    let field = AnalyticGaussianTransport::new(&a, &b, Schedule::default()).unwrap();
    check_crooks(&field, 0.3, 10);
}

#[test]
fn works_do_not_depend_on_chunking() {
    let a = EnergySystem::isotropic(2, 1.0).unwrap();
    let b = EnergySystem::gaussian(vec![0.3, 0.1], vec![1.5, 0.7]).unwrap();
    let field = AnalyticGaussianTransport::new(&a, &b, Schedule::default()).unwrap();
    let starts = Array2::from_shape_fn((50, 2), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 5.0 - 1.0);
    let mut cfg = EnsembleConfig::new(TimeGrid::uniform(20).unwrap(), 0.4, 9);
    let full = simulate_ensemble(&field, &a, &b, &cfg, Direction::Forward, starts.view()).unwrap();
    cfg.chunk = 7;
    let chunked = simulate_ensemble(&field, &a, &b, &cfg, Direction::Forward, starts.view()).unwrap();
    let w = |o: &[feat_core::transport::PathOutcome]| o.iter().map(|p| p.work.to_bits()).collect::<Vec<_>>();
    assert_eq!(w(&full), w(&chunked));
}

proptest! {
    #[test]
    fn step_kernels_are_normalized(
        x in -2.0..2.0f64,
        t in 0.05..0.95f64,
        sigma in 0.1..1.0f64,
        dt in 0.001..0.1f64,
        forward in any::<bool>(),
    ) {
        let a = EnergySystem::gaussian(vec![0.0], vec![1.0]).unwrap();
        let b = EnergySystem::gaussian(vec![1.0], vec![0.5]).unwrap();
        let field = AnalyticGaussianTransport::new(&a, &b, Schedule::default()).unwrap();
        let sign = if forward { 1.0 } else { -1.0 };
        let sd = (2.0 * sigma * sigma * dt).sqrt();
        let drift = field.velocity(Array2::from_elem((1, 1), x).view(), t).unwrap()[[0, 0]];
        let center = x + sign * drift * dt;
        let (lo, hi) = (center - 12.0 * sd, center + 12.0 * sd);
        let n = 2000;
        let h = (hi - lo) / n as f64;
        let mut total = 0.0;
        for i in 0..=n {
            let y = lo + h * i as f64;
            let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            total += w * step_kernel_logpdf(&[y], &[x], sign, &field, t, sigma, dt).unwrap().exp();
        }
        prop_assert!((total * h / 3.0 - 1.0).abs() <= 1e-6, "{}", total * h / 3.0);
    }

    #[test]
    fn works_csv_round_trips(
        fwd in prop::collection::vec(-1e3..1e3f64, 0..20),
        bwd in prop::collection::vec(-1e3..1e3f64, 0..20),
        bad_f in 0usize..3,
        bad_b in 0usize..3,
    ) {
        let ledger = WorkLedger {
            forward: fwd,
            backward: bwd,
            invalid_forward: bad_f,
            invalid_backward: bad_b,
            ..WorkLedger::default()
        };
        let text = format_works_csv(&ledger);
        let back = parse_works_csv(&text, std::path::Path::new("works.csv")).unwrap();
        prop_assert_eq!(back, ledger);
    }
}
