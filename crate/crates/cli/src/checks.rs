//! Oracle checks shared by the `validate` subcommand and the acceptance
//! suite. Each returns a [`Check`] with the measured value and the bound it
//! must not exceed.

use rand::Rng;
use rayon::prelude::*;
use zoisim_core::engine::simulate;
use zoisim_core::meanfield::{
    convergence_experiment, solve_particle, solve_radius_grid, verhulst, ConvergenceRow,
    ConvergenceSetup, ParticleOptions, RadiusDensity, WeightedMeasure,
};
use zoisim_core::observables::{
    Generator, Moments, PathIntegrator, QvReport, TestFunction,
};
use zoisim_core::rng::{replica_rng, StreamRng};
use zoisim_core::{
    lens_area, Engine, KernelMode, ModelParams, Population, RadiusLaw, Result,
};

use crate::config::InitSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub value: f64,
    pub bound: f64,
    pub detail: String,
}

impl Check {
    fn new(name: &str, value: f64, bound: f64, detail: String) -> Self {
        Check {
            name: name.into(),
            pass: value <= bound,
            value,
            bound,
            detail,
        }
    }

    /// `PASS name: value <= bound (margin m) detail`.
    pub fn line(&self) -> String {
        format!(
            "{} {}: {:.6e} <= {:.6e} (margin {:.3e}) {}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.bound,
            self.bound - self.value,
            self.detail
        )
    }
}

/// Monte Carlo area of the lens, sampling the bounding box of the
/// intersection.
fn dart_lens(r1: f64, r2: f64, d: f64, darts: usize, rng: &mut StreamRng) -> f64 {
    let x0 = (-r1).max(d - r2);
    let x1 = r1.min(d + r2);
    let h = r1.min(r2);
    if x1 <= x0 {
        return 0.0;
    }
    let (w, r1s, r2s) = (x1 - x0, r1 * r1, r2 * r2);
    let mut hits = 0u64;
    for _ in 0..darts {
        let x = x0 + w * rng.random::<f64>();
        let y = h * (2.0 * rng.random::<f64>() - 1.0);
        let y2 = y * y;
        hits += (x * x + y2 <= r1s && (x - d) * (x - d) + y2 <= r2s) as u64;
    }
    2.0 * h * w * hits as f64 / darts as f64
}

/// Closed-form lens area against darts on random triples with radii in
/// `[0.05, 0.5]` and distances up to `1.1 (r1 + r2)`.
pub fn lens_oracle(triples: usize, darts: usize, tolerance: f64, seed: u64) -> Check {
    let errs: Vec<f64> = (0..triples as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = replica_rng(seed, i);
            let r1 = rng.random_range(0.05..0.5);
            let r2 = rng.random_range(0.05..0.5);
            let d = rng.random_range(0.0..1.1 * (r1 + r2));
            (lens_area(r1, r2, d) - dart_lens(r1, r2, d, darts, &mut rng)).abs()
        })
        .collect();
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    Check::new(
        "lens_area_vs_darts",
        worst,
        tolerance,
        format!("max abs error over {triples} triples, {darts} darts each"),
    )
}

/// Radii frozen at `r_max` and no competition: a linear birth-death chain.
pub fn spatially_trivial(model: &ModelParams) -> ModelParams {
    ModelParams {
        r_min: model.r_max,
        r_birth: model.r_max,
        u_max: 0.0,
        kernel: KernelMode::None,
        sigma_r: 0.0,
        ..model.clone()
    }
}

/// Population sizes at the snapshot times, one row per replica.
fn size_ensemble(
    params: &ModelParams,
    init: &InitSpec,
    t: f64,
    every: Option<f64>,
    replicas: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let runs: Vec<(Vec<f64>, Vec<f64>)> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = replica_rng(seed, r);
            let pop = init.build(params, &mut rng)?;
            let traj = simulate(params, pop, rng, t, every)?;
            Ok(traj
                .snapshots
                .iter()
                .map(|s| (s.t, s.individuals.len() as f64))
                .unzip())
        })
        .collect::<Result<_>>()?;
    let times = runs.first().map(|r| r.0.clone()).unwrap_or_default();
    Ok((times, runs.into_iter().map(|r| r.1).collect()))
}

/// `E[N_t] = N_0 e^{(λ^b_max - λ^d) t}` for the spatially trivial chain,
/// within three standard errors.
pub fn branching_mean(
    params: &ModelParams,
    n0: usize,
    t: f64,
    replicas: usize,
    seed: u64,
) -> Result<Check> {
    let p = spatially_trivial(params);
    let init = InitSpec::Sample {
        count: n0,
        radius: RadiusLaw::Fixed(p.r_max),
    };
    let (_, sizes) = size_ensemble(&p, &init, t, None, replicas, seed)?;
    let m: Moments = sizes.iter().map(|s| *s.last().unwrap()).collect();
    let expect = n0 as f64 * ((p.lambda_b_max - p.lambda_d) * t).exp();
    Ok(Check::new(
        "branching_mean",
        (m.mean - expect).abs(),
        3.0 * m.stderr(),
        format!(
            "mean N_T {:.4} vs {:.4} over {replicas} replicas (stderr {:.4})",
            m.mean,
            expect,
            m.stderr()
        ),
    ))
}

/// `E[N_t] <= N_0 e^{κ λ^b_max t} (1 + 3 se_t / E[N_t])` at every snapshot;
/// the value reported is the largest ratio of the mean to that bound.
pub fn yule_domination(
    params: &ModelParams,
    init: &InitSpec,
    t: f64,
    every: f64,
    replicas: usize,
    seed: u64,
) -> Result<Check> {
    let (times, sizes) = size_ensemble(params, init, t, Some(every), replicas, seed)?;
    let n0 = init.count() as f64;
    let mut worst = 0.0f64;
    let mut at = 0.0;
    // The bound holds with equality at the start; report later times.
    for (j, &tj) in times.iter().enumerate().skip(1) {
        let m: Moments = sizes.iter().map(|s| s[j]).collect();
        if m.mean == 0.0 {
            continue;
        }
        let bound = n0 * (params.kappa * params.lambda_b_max * tj).exp();
        let ratio = m.mean / (bound * (1.0 + 3.0 * m.stderr() / m.mean));
        if ratio > worst {
            worst = ratio;
            at = tj;
        }
    }
    Ok(Check::new(
        "yule_domination",
        worst,
        1.0,
        format!(
            "max of mean/bound over {} snapshots after t = 0 (at t = {at}), {replicas} replicas",
            times.len().saturating_sub(1)
        ),
    ))
}

/// Single isolated individual with ψ = 1, α = 1, β = 2, r_max = 1 and
/// r(0) = 0.5: r(ln 3) = 0.75.
pub fn richards_integrator(dt_flow: f64) -> Result<Check> {
    let p = ModelParams {
        side: 10.0,
        r_min: 0.05,
        r_birth: 0.05,
        r_max: 1.0,
        lambda_b_max: 0.0,
        lambda_d_max: 0.0,
        lambda_d: 0.0,
        u_max: 0.0,
        kernel: KernelMode::None,
        alpha_g_max: 1.0,
        beta_g: 2.0,
        sigma_r: 0.0,
        dt_flow,
        ..ModelParams::forest_default()
    };
    let pop = Population::new(&[([5.0, 5.0], 0.5)], &p)?;
    let t = 3f64.ln();
    let traj = simulate(&p, pop, replica_rng(0, 0), t, None)?;
    let r = traj.snapshots.last().unwrap().individuals[0].r;
    Ok(Check::new(
        "richards_integrator",
        (r - 0.75).abs(),
        5.0 * dt_flow,
        format!("r(ln 3) = {r:.8} at dt_flow = {dt_flow:e}"),
    ))
}

pub struct MartingaleOutcome {
    pub mean: Check,
    pub variance: Check,
    /// Mean predicted QV by channel, with the empirical variance.
    pub report: QvReport,
}

/// Compensated process `⟨ν_T,f⟩ - ⟨ν_0,f⟩ - ∫ℓf` over replicas: its mean
/// must be within three standard errors of 0 and its variance within
/// `tolerance` (relative) of the mean predicted quadratic variation.
pub fn martingale_qv(
    params: &ModelParams,
    init: &InitSpec,
    f: &TestFunction,
    t: f64,
    replicas: usize,
    tolerance: f64,
    seed: u64,
) -> Result<MartingaleOutcome> {
    let generator = Generator::new(params)?;
    let runs: Vec<(f64, [f64; 4])> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = replica_rng(seed, r);
            let pop = init.build(params, &mut rng)?;
            let mut engine = Engine::new(params.clone(), pop, rng)?;
            let mut obs = PathIntegrator::new(generator.clone(), f.clone());
            engine.run(t, None, &mut obs)?;
            let q = obs.qv;
            Ok((obs.martingale(), [q.d, q.b, q.c, q.g]))
        })
        .collect::<Result<_>>()?;
    let m: Moments = runs.iter().map(|r| r.0).collect();
    let mut qv = [0.0; 4];
    for (_, q) in &runs {
        for (a, b) in qv.iter_mut().zip(q) {
            *a += b / replicas as f64;
        }
    }
    let report = QvReport {
        d: qv[0],
        b: qv[1],
        c: qv[2],
        g: qv[3],
        total: qv.iter().sum(),
        empirical_variance: m.variance(),
        replicas,
    };
    let name = f.name();
    let mean = Check::new(
        &format!("martingale_mean[{name}]"),
        m.mean.abs(),
        3.0 * m.stderr(),
        format!("mean {:.5e} over {replicas} replicas (stderr {:.3e})", m.mean, m.stderr()),
    );
    let variance = Check::new(
        &format!("quadratic_variation[{name}]"),
        (report.empirical_variance / report.total - 1.0).abs(),
        tolerance,
        format!(
            "sample variance {:.5e} vs mean predicted QV {:.5e}",
            report.empirical_variance, report.total
        ),
    );
    Ok(MartingaleOutcome {
        mean,
        variance,
        report,
    })
}

/// Constant-kernel parameters whose mean-field mass is logistic:
/// `m' = (b - d) m - c m²` with all radii at `r_max`.
pub fn logistic_params(b: f64, d: f64, c: f64) -> ModelParams {
    ModelParams {
        side: 10.0,
        r_min: 0.5,
        r_birth: 0.5,
        r_max: 0.5,
        lambda_b_max: b,
        lambda_d_max: d,
        lambda_d: d,
        u_max: c,
        kernel: KernelMode::Constant(c),
        alpha_g_max: 0.0,
        ..ModelParams::forest_default()
    }
}

/// Particle-solver mass against the Verhulst closed form on `[0, t_end]`
/// (sup-norm, absolute), from `m0 = 10` with `b = 1, d = 0.2, c = 0.01`.
pub fn logistic_meanfield(dt: f64, t_end: f64, tolerance: f64) -> Result<Check> {
    let (b, d, c, m0) = (1.0, 0.2, 0.01, 10.0);
    let p = logistic_params(b, d, c);
    let xi0 = WeightedMeasure::lattice(m0, RadiusLaw::Fixed(p.r_max), 1, 1, p.side);
    // Positions do not enter a constant kernel: one merge bucket in space.
    let opts = ParticleOptions {
        dt,
        position_cell: p.side,
        ..Default::default()
    };
    let sol = solve_particle(xi0, t_end, &p, opts, 0.1)?;
    let err = sol
        .iter()
        .map(|(t, m)| (m.mass() - verhulst(m0, b, d, c, *t)).abs())
        .fold(0.0, f64::max);
    let last = sol.last().unwrap().1.mass();
    Ok(Check::new(
        "meanfield_logistic",
        err,
        tolerance,
        format!(
            "sup |m - verhulst| on [0, {t_end}] at dt = {dt:e}; m({t_end}) = {last:.6}, equilibrium {}",
            (b - d) / c
        ),
    ))
}

/// Mean sup-error strictly decreasing in `k` for every function, and the
/// error at the largest `k` at most half the error at the smallest. The
/// value reported is the worst last-to-first ratio; a non-monotone column
/// forces a failure.
pub fn convergence(setup: &ConvergenceSetup) -> Result<(Check, Vec<ConvergenceRow>)> {
    let rows = convergence_experiment(setup)?;
    let mut worst = 0.0f64;
    let mut monotone = true;
    let mut summary = Vec::new();
    for f in &setup.functions {
        let col: Vec<f64> = rows
            .iter()
            .filter(|r| r.f == f.name())
            .map(|r| r.mean_sup_error)
            .collect();
        monotone &= col.windows(2).all(|w| w[1] < w[0]);
        let ratio = col.last().unwrap() / col.first().unwrap();
        worst = worst.max(ratio);
        summary.push(format!(
            "{}: {}",
            f.name(),
            col.iter()
                .map(|e| format!("{e:.4e}"))
                .collect::<Vec<_>>()
                .join(" > ")
        ));
    }
    let mut check = Check::new(
        "convergence_in_k",
        worst,
        0.5,
        format!(
            "k = {:?}, {} replicas; {}{}",
            setup.k_list,
            setup.replicas,
            summary.join("; "),
            if monotone { "" } else { "; NOT strictly decreasing" }
        ),
    );
    check.pass &= monotone;
    Ok((check, rows))
}

/// Settings of the particle vs radius-grid comparison.
#[derive(Debug, Clone)]
pub struct CrossSolverSetup {
    pub params: ModelParams,
    pub radius: RadiusLaw,
    pub m0: f64,
    pub t_end: f64,
    pub every: f64,
    pub particle: ParticleOptions,
    pub lattice_side: usize,
    pub radius_nodes: usize,
    pub grid_cells: usize,
    pub grid_dt: f64,
}

/// Total mass and mean radius of the two solvers from a homogeneous initial
/// measure, relative sup-norm over the output times.
pub fn cross_solver(s: &CrossSolverSetup, tolerance: f64) -> Result<Check> {
    let n0 = RadiusDensity::from_law(s.m0, s.radius, &s.params, s.grid_cells);
    let grid = solve_radius_grid(n0, s.t_end, s.grid_dt, &s.params, s.every)?;
    let xi0 = WeightedMeasure::lattice(
        s.m0,
        s.radius,
        s.lattice_side,
        s.radius_nodes,
        s.params.side,
    );
    let sol = solve_particle(xi0, s.t_end, &s.params, s.particle.clone(), s.every)?;
    let (mut em, mut er) = (0.0f64, 0.0f64);
    for ((_, m), (_, n)) in sol.iter().zip(&grid) {
        em = em.max((m.mass() / n.mass() - 1.0).abs());
        er = er.max((m.mean_radius() / n.mean_radius() - 1.0).abs());
    }
    Ok(Check::new(
        "cross_solver",
        em.max(er),
        tolerance,
        format!(
            "relative sup error: mass {em:.3e}, mean radius {er:.3e} on [0, {}]",
            s.t_end
        ),
    ))
}
