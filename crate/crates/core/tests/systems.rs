use feat_core::systems::{analytic_delta_f, Energy, EnergySystem, GmmParams, LinearMix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn fd_grad(sys: &dyn Energy, x: &[f64], h: f64) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|i| {
            y[i] = x[i] + h;
            let up = sys.value(&y);
            y[i] = x[i] - h;
            let dn = sys.value(&y);
            y[i] = x[i];
            (up - dn) / (2.0 * h)
        })
        .collect()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().chain(b).fold(1e-8_f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

fn lattice(n: usize, spacing: f64) -> Vec<f64> {
    let side = (n as f64).cbrt().ceil() as usize;
    let mut x = Vec::new();
    for i in 0..side {
        for j in 0..side {
            for k in 0..side {
                if x.len() < 3 * n {
                    x.extend([i as f64 * spacing, j as f64 * spacing, k as f64 * spacing]);
                }
            }
        }
    }
    x
}

fn systems() -> Vec<(EnergySystem, Vec<f64>, f64)> {
    vec![
        (EnergySystem::gaussian(vec![0.5, -1.0, 2.0], vec![0.7, 1.3, 2.0]).unwrap(), vec![0.0; 3], 1.0),
        (EnergySystem::Gmm(GmmParams::random(3, 5, 0.4, 2).unwrap()), vec![0.0; 3], 1.0),
        (EnergySystem::Gmm(GmmParams::sixteen(4)), vec![0.0; 4], 1.0),
        (EnergySystem::double_well(2, 1.5).unwrap(), vec![0.0; 2], 1.0),
        (EnergySystem::lj_cluster(3, 1.0, 1.0).unwrap(), lattice(3, 1.15), 0.05),
        (EnergySystem::lj_cluster(8, 1.0, 1.0).unwrap(), lattice(8, 1.15), 0.05),
        (EnergySystem::phi4(4, -1.0, 0.8).unwrap(), vec![0.0; 16], 0.7),
        (EnergySystem::phi4(3, -1.0, 0.8).unwrap().with_umbrella(10.0, 0.6), vec![0.0; 9], 0.7),
        (EnergySystem::isotropic(2, 1.0).unwrap().scaled(2.5).unwrap(), vec![0.0; 2], 1.0),
    ]
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (sys, center, spread) in systems() {
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let x: Vec<f64> = center.iter().map(|c| c + spread * rng.sample::<f64, _>(StandardNormal)).collect();
            let mut g = vec![0.0; x.len()];
            let v = sys.value_grad(&x, &mut g);
            assert!((v - sys.value(&x)).abs() <= 1e-12 * v.abs().max(1.0), "{}", sys.kind());
            worst = worst.max(rel_err(&g, &fd_grad(&sys, &x, 1e-5)));
        }
        assert!(worst <= 1e-6, "{}: {worst:e}", sys.kind());
    }
}

#[test]
fn interpolated_energy_gradients_match_finite_differences() {
    let a = EnergySystem::double_well(2, 1.0).unwrap();
    let b = EnergySystem::gaussian(vec![1.0, -1.0], vec![0.5, 2.0]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for t in [0.0, 0.3, 1.0] {
        let mix = LinearMix::new(&a, &b, t).unwrap();
        for _ in 0..20 {
            let x: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
            let mut g = vec![0.0; 2];
            mix.value_grad(&x, &mut g);
            assert!(rel_err(&g, &fd_grad(&mix, &x, 1e-5)) <= 1e-6);
        }
    }
}

/// Midpoint-rule integral of `e^{−U}` over a box in 2D.
fn log_z_2d(sys: &EnergySystem, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let x = [lo + (i as f64 + 0.5) * h, lo + (j as f64 + 0.5) * h];
            total += (-sys.value(&x)).exp();
        }
    }
    (total * h * h).ln()
}

#[test]
fn mixtures_are_normalized() {
    for (k, std) in [(3, 0.3), (16, 0.2)] {
        let sys = EnergySystem::Gmm(GmmParams::random(2, k, std, 7).unwrap());
        let log_z = log_z_2d(&sys, -4.0, 4.0, 800);
        assert!(log_z.abs() < 1e-6, "{k} components: log Z = {log_z:e}");
    }
}

#[test]
fn gaussian_partition_matches_quadrature() {
    let sys = EnergySystem::gaussian(vec![0.3, -0.2], vec![0.8, 1.2]).unwrap();
    let q = log_z_2d(&sys, -10.0, 10.0, 800);
    assert!((q - sys.log_partition_analytic().unwrap()).abs() < 1e-9);
    let other = EnergySystem::isotropic(2, 1.0).unwrap();
    let df = analytic_delta_f(&sys, &other).unwrap();
    assert!((df - (0.8f64 * 1.2).ln()).abs() < 1e-12);
}

fn rotation(angles: [f64; 3]) -> [[f64; 3]; 3] {
    let (a, b, c) = (angles[0], angles[1], angles[2]);
    let rz = [[a.cos(), -a.sin(), 0.0], [a.sin(), a.cos(), 0.0], [0.0, 0.0, 1.0]];
    let ry = [[b.cos(), 0.0, b.sin()], [0.0, 1.0, 0.0], [-b.sin(), 0.0, b.cos()]];
    let rx = [[1.0, 0.0, 0.0], [0.0, c.cos(), -c.sin()], [0.0, c.sin(), c.cos()]];
    let mul = |p: [[f64; 3]; 3], q: [[f64; 3]; 3]| {
        let mut r = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                r[i][j] = (0..3).map(|k| p[i][k] * q[k][j]).sum();
            }
        }
        r
    };
    mul(mul(rz, ry), rx)
}

proptest! {
    #[test]
    fn phi4_is_even_in_the_field(field in prop::collection::vec(-2.0..2.0f64, 16)) {
        let sys = EnergySystem::phi4(4, -1.0, 0.8).unwrap();
        let flipped: Vec<f64> = field.iter().map(|v| -v).collect();
        let (u, v) = (sys.value(&field), sys.value(&flipped));
        prop_assert!((u - v).abs() <= 1e-12 * u.abs().max(1.0));
    }

    #[test]
    fn phi4_is_invariant_under_lattice_translation(field in prop::collection::vec(-2.0..2.0f64, 16), dx in 0usize..4, dy in 0usize..4) {
        let sys = EnergySystem::phi4(4, -1.0, 0.8).unwrap();
        let shifted: Vec<f64> = (0..16).map(|s| field[((s / 4 + dy) % 4) * 4 + (s % 4 + dx) % 4]).collect();
        let (u, v) = (sys.value(&field), sys.value(&shifted));
        prop_assert!((u - v).abs() <= 1e-10 * u.abs().max(1.0));
    }

    #[test]
    fn lj_is_invariant_under_rigid_motions_and_relabeling(
        jitter in prop::collection::vec(-0.05..0.05f64, 24),
        angles in prop::array::uniform3(-3.1..3.1f64),
        shift in prop::array::uniform3(-5.0..5.0f64),
        perm_seed in 0u64..1000,
    ) {
        let sys = EnergySystem::lj_cluster(8, 1.0, 1.0).unwrap();
        let x: Vec<f64> = lattice(8, 1.15).iter().zip(&jitter).map(|(a, b)| a + b).collect();
        let u = sys.value(&x);
        let r = rotation(angles);
        let moved: Vec<f64> = (0..8)
            .flat_map(|p| {
                let v = &x[3 * p..3 * p + 3];
                (0..3).map(move |i| (0..3).map(|k| r[i][k] * v[k]).sum::<f64>() + shift[i]).collect::<Vec<_>>()
            })
            .collect();
        prop_assert!((sys.value(&moved) - u).abs() <= 1e-9 * u.abs().max(1.0));
        let mut order: Vec<usize> = (0..8).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(perm_seed);
        for i in (1..8).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let relabeled: Vec<f64> = order.iter().flat_map(|&p| x[3 * p..3 * p + 3].to_vec()).collect();
        prop_assert!((sys.value(&relabeled) - u).abs() <= 1e-9 * u.abs().max(1.0));
    }

    #[test]
    fn umbrella_bias_is_the_harmonic_restraint(x in prop::collection::vec(-2.0..2.0f64, 4), k in 0.1..20.0f64, c in -1.0..1.0f64) {
        let inner = EnergySystem::double_well(4, 1.0).unwrap();
        let biased = inner.clone().with_umbrella(k, c);
        let xi = EnergySystem::collective_variable(&x);
        let expected = inner.value(&x) + 0.5 * k * (xi - c).powi(2);
        prop_assert!((biased.value(&x) - expected).abs() <= 1e-12 * expected.abs().max(1.0));
    }
}
