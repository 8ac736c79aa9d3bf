use proptest::prelude::*;
use rand::SeedableRng;
use zoisim_core::kernels::{birth_rate, psi, richards_r};
use zoisim_core::model::sample_uniform;
use zoisim_core::observables::{
    pair, predicted_qv, Generator, Moments, PathIntegrator, TestFunction,
};
use zoisim_core::rng::{replica_rng, StreamRng};
use zoisim_core::{Engine, KernelMode, ModelParams, Population, RadiusLaw, Trajectory};

fn constant_kernel() -> ModelParams {
    ModelParams {
        side: 10.0,
        u_max: 0.02,
        kernel: KernelMode::Constant(0.02),
        ..ModelParams::forest_default()
    }
}

fn start(p: &ModelParams, n: usize, seed: u64) -> Population {
    let mut rng = StreamRng::seed_from_u64(seed);
    let init = sample_uniform(n, RadiusLaw::Uniform(p.r_birth, p.r_max), p, &mut rng);
    Population::new(&init, p).unwrap()
}

#[test]
fn compensated_mass_has_zero_mean() {
    let p = constant_kernel();
    let m: Moments = (0..300u64)
        .map(|r| {
            let mut e = Engine::new(p.clone(), start(&p, 30, r), replica_rng(21, r)).unwrap();
            let mut obs = PathIntegrator::new(Generator::new(&p).unwrap(), TestFunction::One);
            e.run(1.0, None, &mut obs).unwrap();
            obs.martingale()
        })
        .collect();
    assert!(m.mean.abs() <= 3.0 * m.stderr(), "mean {} se {}", m.mean, m.stderr());
}

#[test]
fn qv_components_nonnegative_and_additive() {
    let p = constant_kernel();
    let mut e = Engine::new(p.clone(), start(&p, 30, 4), replica_rng(4, 0)).unwrap();
    let mut traj = Trajectory::dense();
    e.run(1.0, None, &mut traj).unwrap();
    let q = predicted_qv(&TestFunction::Radius, &traj, &p).unwrap();
    assert!(q.d >= 0.0 && q.b >= 0.0 && q.c >= 0.0 && q.g >= 0.0);
    assert!((q.total - (q.d + q.b + q.c + q.g)).abs() <= 1e-12 * q.total);

    let none = ModelParams {
        u_max: 0.0,
        kernel: KernelMode::None,
        ..p
    };
    let mut e = Engine::new(none.clone(), start(&none, 30, 4), replica_rng(4, 1)).unwrap();
    let mut traj = Trajectory::dense();
    e.run(1.0, None, &mut traj).unwrap();
    let q = predicted_qv(&TestFunction::One, &traj, &none).unwrap();
    assert_eq!(q.c, 0.0);
    assert_eq!(q.g, 0.0);
}

#[test]
fn singleton_radius_generator() {
    let p = ModelParams::forest_default();
    let pop = Population::new(&[([5.0, 5.0], 0.3)], &p).unwrap();
    let x = pop.at(0);
    let l = Generator::new(&p).unwrap().generator(&TestFunction::Radius, &pop);
    let expect = birth_rate(x, &p) * p.r_min - p.lambda_d * x.r + psi(x, &pop, &p) * richards_r(x.r, &p);
    assert!((l.total() - expect).abs() < 1e-12, "{} vs {expect}", l.total());
}

proptest! {
    #[test]
    fn pairing_is_linear(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let p = ModelParams::forest_default();
        let pop = start(&p, 25, seed);
        let f = TestFunction::Radius;
        let g = TestFunction::RadiusSq;
        let r: Vec<f64> = (0..50).map(|i| p.r_min + (p.r_max - p.r_min) * i as f64 / 49.0).collect();
        let h = TestFunction::Tabulated {
            f: r.iter().map(|&x| a * x + b * x * x).collect(),
            r,
        };
        let lhs = pair(&pop, &h);
        let rhs = a * pair(&pop, &f) + b * pair(&pop, &g);
        // Linear interpolation of b r^2 errs by at most |b| h^2 / 4 per plant.
        let h = (p.r_max - p.r_min) / 49.0;
        let bound = pop.len() as f64 * b.abs() * h * h / 4.0 + 1e-12 * (1.0 + rhs.abs());
        prop_assert!((lhs - rhs).abs() <= bound, "{} > {}", (lhs - rhs).abs(), bound);
        prop_assert_eq!(pair(&pop, &TestFunction::One), pop.len() as f64);
    }
}

