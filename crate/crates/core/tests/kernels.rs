use proptest::prelude::*;
use rand::SeedableRng;
use zoisim_core::kernels::{
    birth_rate_r, competition_u, island_cx, lambda_c, lambda_c_brute, psi_of, richards_r,
    IslandNormalizer,
};
use zoisim_core::model::sample_uniform;
use zoisim_core::rng::StreamRng;
use zoisim_core::{DispersalMode, Individual, KernelMode, ModelParams, Population, RadiusLaw};

fn random_population(n: usize, side: f64, seed: u64) -> (ModelParams, Population) {
    let p = ModelParams {
        side,
        ..ModelParams::forest_default()
    };
    let mut rng = StreamRng::seed_from_u64(seed);
    let init = sample_uniform(n, RadiusLaw::Uniform(p.r_min, p.r_max), &p, &mut rng);
    let pop = Population::new(&init, &p).unwrap();
    (p, pop)
}

#[test]
fn grid_lambda_c_matches_brute_force() {
    for (n, side, seed) in [(10, 3.0, 1), (120, 5.0, 2), (500, 10.0, 3), (500, 4.0, 4)] {
        let (p, pop) = random_population(n, side, seed);
        for x in pop.individuals() {
            let a = lambda_c(x, &pop, &p);
            let b = lambda_c_brute(x, &pop, &p);
            assert!((a - b).abs() <= 1e-12 * b.max(1.0), "n={n}: {a} vs {b}");
        }
    }
}

#[test]
fn lambda_c_bounded_by_u_max_n() {
    let (p, pop) = random_population(300, 2.5, 9);
    let bound = p.u_max * pop.len() as f64;
    for x in pop.individuals() {
        assert!(lambda_c(x, &pop, &p) <= bound);
    }
}

#[test]
fn island_normalizer_tracks_exact_constant() {
    let p = ModelParams {
        side: 4.0,
        sigma_disp: 0.3,
        dispersal: DispersalMode::Island,
        ..ModelParams::forest_default()
    };
    let table = IslandNormalizer::new(&p);
    let mut worst = 0.0f64;
    for i in 0..=80 {
        for j in 0..=80 {
            let q = [4.0 * i as f64 / 80.0, 4.0 * j as f64 / 80.0];
            worst = worst.max((table.cx(q) / island_cx(q, &p) - 1.0).abs());
        }
    }
    assert!(worst < 1e-3, "worst relative error {worst}");
}

proptest! {
    #[test]
    fn competition_symmetric_and_bounded(
        rx in 0.05f64..0.5, ry in 0.05f64..0.5, x in 0.0f64..10.0, y in 0.0f64..10.0,
    ) {
        let p = ModelParams::forest_default();
        let a = Individual { id: 1, p: [5.0, 5.0], r: rx };
        let b = Individual { id: 2, p: [x, y], r: ry };
        let u = competition_u(&a, &b, &p);
        prop_assert!(u >= 0.0 && u <= p.u_max * (1.0 + 1e-12));
        prop_assert_eq!(competition_u(&a, &a, &p), 0.0);
        let q = ModelParams { kernel: KernelMode::Constant(0.3), ..p.clone() };
        prop_assert_eq!(competition_u(&a, &b, &q), 0.3);
    }

    #[test]
    fn rates_respect_bounds(r in 0.05f64..0.5, lc in 0.0f64..10.0) {
        let p = ModelParams::forest_default();
        let b = birth_rate_r(r, &p);
        prop_assert!(b >= 0.0 && b <= p.lambda_b_max);
        let g = richards_r(r, &p);
        prop_assert!(g >= 0.0);
        let s = psi_of(lc, &p);
        prop_assert!((0.0..=1.0).contains(&s));
    }
}
