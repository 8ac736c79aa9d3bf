use zoisim_core::meanfield::{
    scale_for_k, solve_particle, solve_radius_grid, ParticleOptions, RadiusDensity,
    WeightedMeasure,
};
use zoisim_core::{KernelMode, ModelParams, RadiusLaw};

fn zoi_small() -> ModelParams {
    ModelParams {
        side: 2.0,
        r_min: 0.1,
        r_birth: 0.2,
        sigma_disp: 0.3,
        ..ModelParams::forest_default()
    }
}

#[test]
fn particle_mass_below_gronwall_bound() {
    let p = zoi_small();
    let xi0 = WeightedMeasure::lattice(8.0, RadiusLaw::Uniform(0.2, 0.5), 4, 4, p.side);
    let opts = ParticleOptions {
        dt: 0.02,
        position_cell: 0.5,
        radius_bins: 16,
        ..Default::default()
    };
    let sol = solve_particle(xi0, 3.0, &p, opts, 0.1).unwrap();
    for (t, m) in &sol {
        assert!(m.mass() <= 8.0 * (p.lambda_b_max * t).exp() * (1.0 + 1e-12));
        assert!(m.particles.iter().all(|q| q.w >= 0.0 && q.r >= p.r_min && q.r <= p.r_max));
    }
}

#[test]
fn pure_decay_is_exact_in_dt() {
    let p = ModelParams {
        lambda_b_max: 0.0,
        u_max: 0.0,
        kernel: KernelMode::None,
        alpha_g_max: 0.0,
        ..zoi_small()
    };
    let mass = |dt: f64| {
        let xi0 = WeightedMeasure::lattice(5.0, RadiusLaw::Uniform(0.2, 0.5), 3, 3, p.side);
        let opts = ParticleOptions { dt, ..Default::default() };
        let sol = solve_particle(xi0, 2.0, &p, opts, 2.0).unwrap();
        sol.last().unwrap().1.mass()
    };
    let (a, b) = (mass(0.01), mass(0.005));
    assert!((a - b).abs() <= 1e-12 * a, "{a} vs {b}");
    assert!((a / (5.0 * (-0.2f64).exp()) - 1.0).abs() < 1e-12);
}

#[test]
fn first_order_or_better_in_dt() {
    // Growth on, births linear in r and a constant kernel, so merging
    // particles by position and radius bin loses nothing the dynamics see.
    // Successive differences under dt halving must then shrink at least by
    // half.
    let p = ModelParams {
        r_birth: 0.1,
        u_max: 0.05,
        kernel: KernelMode::Constant(0.05),
        ..zoi_small()
    };
    let pairing = |dt: f64| {
        let xi0 = WeightedMeasure::lattice(8.0, RadiusLaw::Uniform(0.1, 0.5), 1, 8, p.side);
        let opts = ParticleOptions {
            dt,
            position_cell: p.side,
            radius_bins: 64,
            ..Default::default()
        };
        let sol = solve_particle(xi0, 1.0, &p, opts, 1.0).unwrap();
        let m = &sol.last().unwrap().1;
        (m.mass(), m.pair(&zoisim_core::observables::TestFunction::Radius))
    };
    let v: Vec<[f64; 2]> = [0.04, 0.02, 0.01]
        .iter()
        .map(|&dt| {
            let (m, r) = pairing(dt);
            [m, r]
        })
        .collect();
    for (i, name) in ["mass", "radius"].iter().enumerate() {
        let d1 = (v[0][i] - v[1][i]).abs();
        let d2 = (v[1][i] - v[2][i]).abs();
        assert!(d2 <= 0.6 * d1 + 1e-12, "{name} differences {d1} {d2}");
    }
}

#[test]
fn grid_and_particles_agree_on_short_run() {
    let p = zoi_small();
    let law = RadiusLaw::Uniform(0.2, 0.5);
    let grid = solve_radius_grid(RadiusDensity::from_law(8.0, law, &p, 1000), 1.0, 1e-3, &p, 0.5).unwrap();
    let xi0 = WeightedMeasure::lattice(8.0, law, 8, 8, p.side);
    let opts = ParticleOptions {
        dt: 0.02,
        position_cell: 0.25,
        radius_bins: 32,
        ..Default::default()
    };
    let sol = solve_particle(xi0, 1.0, &p, opts, 0.5).unwrap();
    for ((_, m), (_, n)) in sol.iter().zip(&grid) {
        assert!((m.mass() / n.mass() - 1.0).abs() < 1e-2);
        assert!((m.mean_radius() / n.mean_radius() - 1.0).abs() < 1e-2);
    }
}

#[test]
fn scaled_kernel_times_k_recovers_base() {
    let base = ModelParams {
        u_max: 0.1,
        kernel: KernelMode::Constant(0.05),
        ..ModelParams::forest_default()
    };
    for k in [1u64, 3, 10, 800] {
        let s = scale_for_k(&base, k).unwrap();
        assert!((s.params.u_max * k as f64 - 0.1).abs() <= 1e-15);
        assert_eq!(s.params.c_g, base.c_g);
        match s.params.kernel {
            KernelMode::Constant(c) => assert!((c * k as f64 - 0.05).abs() <= 1e-15),
            _ => panic!("kernel mode changed"),
        }
    }
}
