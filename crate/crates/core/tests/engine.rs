use proptest::prelude::*;
use rand::SeedableRng;
use zoisim_core::model::sample_uniform;
use zoisim_core::observables::Moments;
use zoisim_core::rng::{replica_rng, StreamRng};
use zoisim_core::engine::simulate;
use zoisim_core::{Engine, EventKind, KernelMode, ModelParams, Population, RadiusLaw};

fn linear_bd(lambda_d: f64) -> ModelParams {
    ModelParams {
        side: 10.0,
        r_min: 0.3,
        r_birth: 0.3,
        r_max: 0.3,
        lambda_b_max: 1.0,
        lambda_d_max: 0.5,
        lambda_d,
        u_max: 0.0,
        kernel: KernelMode::None,
        ..ModelParams::forest_default()
    }
}

fn start(p: &ModelParams, n: usize, seed: u64) -> Population {
    let mut rng = StreamRng::seed_from_u64(seed);
    let init = sample_uniform(n, RadiusLaw::Fixed(p.r_max), p, &mut rng);
    Population::new(&init, p).unwrap()
}

#[test]
fn linear_birth_death_mean() {
    let p = linear_bd(0.5);
    let m: Moments = (0..300)
        .map(|r| {
            let traj = simulate(&p, start(&p, 40, r), replica_rng(77, r), 1.0, None).unwrap();
            traj.snapshots.last().unwrap().individuals.len() as f64
        })
        .collect();
    let expect = 40.0 * 0.5f64.exp();
    assert!(
        (m.mean - expect).abs() <= 3.0 * m.stderr(),
        "mean {} expected {expect} se {}",
        m.mean,
        m.stderr()
    );
}

#[test]
fn birth_acceptance_frequency() {
    // Growth and competition off, radii of the founders uniform on
    // [r_b, r_max]. Newborns sit at r_min < r_b and are never accepted, so
    // only proposals from founders are counted.
    let p = ModelParams {
        lambda_d_max: 0.0,
        lambda_d: 0.0,
        u_max: 0.0,
        kernel: KernelMode::None,
        alpha_g_max: 0.0,
        ..ModelParams::forest_default()
    };
    let founders = 200usize;
    let (mut accepted, mut proposed) = (0u64, 0u64);
    let mut expected = 0.0;
    for rep in 0..250u64 {
        let mut rng = replica_rng(5, rep);
        let init = sample_uniform(founders, RadiusLaw::Uniform(p.r_birth, p.r_max), &p, &mut rng);
        let mean_r = init.iter().map(|x| x.1).sum::<f64>() / founders as f64;
        let pop = Population::new(&init, &p).unwrap();
        let mut e = Engine::new(p.clone(), pop, rng).unwrap();
        let (mut a, mut n) = (0u64, 0u64);
        while n < 400 {
            let rec = e.step().unwrap();
            if rec.subject_id < founders as u64 {
                n += 1;
                a += (rec.kind == EventKind::Birth) as u64;
            }
        }
        accepted += a;
        proposed += n;
        expected += mean_r / p.r_max * n as f64;
    }
    let q = expected / proposed as f64;
    let freq = accepted as f64 / proposed as f64;
    let se = (q * (1.0 - q) / proposed as f64).sqrt();
    assert!((freq - q).abs() <= 3.0 * se, "freq {freq} expected {q} se {se}");
}

#[test]
fn event_log_invariants() {
    let p = ModelParams {
        side: 4.0,
        ..ModelParams::forest_default()
    };
    let traj = simulate(&p, start(&p, 60, 1), replica_rng(1, 0), 3.0, Some(0.5)).unwrap();
    let mut n = 60i64;
    let mut t = 0.0;
    for e in &traj.events {
        assert!(e.time > t);
        t = e.time;
        n += e.kind.size_change();
        assert_eq!(n as usize, e.n_after);
    }
    assert_eq!(traj.snapshots.last().unwrap().individuals.len() as i64, n);
    let times: Vec<f64> = traj.snapshots.iter().map(|s| s.t).collect();
    assert_eq!(times, vec![0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0]);
}

#[test]
fn natural_death_always_accepted_at_bound() {
    let p = ModelParams {
        lambda_b_max: 0.0,
        lambda_d: 0.2,
        lambda_d_max: 0.2,
        u_max: 0.0,
        kernel: KernelMode::None,
        ..ModelParams::forest_default()
    };
    let traj = simulate(&p, start(&p, 30, 3), replica_rng(3, 0), 5.0, None).unwrap();
    assert!(!traj.events.is_empty());
    assert!(traj.events.iter().all(|e| e.kind == EventKind::NaturalDeath));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn radii_stay_in_range(seed in 0u64..10_000, sigma_r in 0.0f64..0.2) {
        let p = ModelParams { side: 3.0, sigma_r, ..ModelParams::forest_default() };
        let traj = simulate(&p, start(&p, 20, seed), replica_rng(seed, 1), 1.0, Some(0.25)).unwrap();
        for s in &traj.snapshots {
            for x in &s.individuals {
                prop_assert!(x.r >= p.r_min && x.r <= p.r_max);
            }
        }
    }

    #[test]
    fn same_seed_same_log(seed in 0u64..10_000) {
        let p = ModelParams { side: 3.0, ..ModelParams::forest_default() };
        let a = simulate(&p, start(&p, 15, seed), replica_rng(seed, 2), 1.0, Some(0.5)).unwrap();
        let b = simulate(&p, start(&p, 15, seed), replica_rng(seed, 2), 1.0, Some(0.5)).unwrap();
        prop_assert_eq!(a, b);
    }
}
