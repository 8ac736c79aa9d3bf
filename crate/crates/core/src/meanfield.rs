//! Deterministic large-population limit of the model under the scaling
//! `u^k = ū / k`, `μ^k = ν^k / k`, and the harness that measures how fast
//! rescaled simulations approach it.
//!
//! Two solvers are provided. [`ParticleSolver`] evolves a weighted-particle
//! measure for arbitrary initial data. [`solve_radius_grid`] integrates the
//! radius-structured equation satisfied by spatially homogeneous solutions
//! on the torus and serves as an independent reference.

use std::collections::HashMap;
use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{Engine, Observer};
use crate::error::{Error, Result};
use crate::geometry::{Domain, SpatialGrid};
use crate::geometry::lens_area;
use crate::kernels::{birth_rate_r, psi_of, richards_r};
use crate::model::{
    sample_uniform, DispersalMode, KernelMode, ModelParams, Population, Position, RadiusLaw,
};
use crate::observables::{pair, Moments, TestFunction};
use crate::rng::{replica_rng, replica_seed};

/// A weighted point of the limit measure.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub p: Position,
    pub r: f64,
    pub w: f64,
}

/// Finite measure `Σ w_i δ_{x_i}`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WeightedMeasure {
    pub particles: Vec<Particle>,
}

impl WeightedMeasure {
    pub fn mass(&self) -> f64 {
        self.particles.iter().map(|q| q.w).sum()
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn pair(&self, f: &TestFunction) -> f64 {
        self.particles.iter().map(|q| q.w * f.eval_state(q.p, q.r)).sum()
    }

    pub fn mean_radius(&self) -> f64 {
        self.pair(&TestFunction::Radius) / self.mass()
    }

    /// Mass `mass` spread over an `n_side × n_side` lattice of cell centers
    /// and the equal-mass radius nodes of `law`.
    pub fn lattice(mass: f64, law: RadiusLaw, n_side: usize, radius_nodes: usize, side: f64) -> Self {
        let radii = law.nodes(radius_nodes);
        let h = side / n_side as f64;
        let w = mass / (n_side * n_side * radii.len()) as f64;
        let mut particles = Vec::with_capacity(n_side * n_side * radii.len());
        for j in 0..n_side {
            for i in 0..n_side {
                let p = [(i as f64 + 0.5) * h, (j as f64 + 0.5) * h];
                particles.extend(radii.iter().map(|&r| Particle { p, r, w }));
            }
        }
        WeightedMeasure { particles }
    }

    /// Empirical measure `(1/k) Σ δ_{x_i}` of a population.
    pub fn empirical(pop: &Population, k: f64) -> Self {
        WeightedMeasure {
            particles: pop
                .individuals()
                .iter()
                .map(|x| Particle {
                    p: x.p,
                    r: x.r,
                    w: 1.0 / k,
                })
                .collect(),
        }
    }
}

/// Model parameters rescaled for population size parameter `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaledParams {
    pub base: ModelParams,
    pub k: u64,
    /// `base` with the competition kernel divided by `k`.
    pub params: ModelParams,
}

/// Divides the competition kernel by `k`. The growth factor needs no change:
/// with `ν^k = k μ`, `λ^c(x, ν^k) = ∫ ū(x, y) μ(dy)`.
pub fn scale_for_k(base: &ModelParams, k: u64) -> Result<ScaledParams> {
    if k == 0 {
        return Err(Error::SolverOption {
            option: "k",
            reason: "must be at least 1".into(),
        });
    }
    let kf = k as f64;
    let mut params = base.clone();
    params.u_max = base.u_max / kf;
    if let KernelMode::Constant(c) = base.kernel {
        params.kernel = KernelMode::Constant(c / kf);
    }
    Ok(ScaledParams {
        base: base.clone(),
        k,
        params,
    })
}

/// Discretization options of the particle solver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParticleOptions {
    pub dt: f64,
    /// Side of the merge buckets in position.
    pub position_cell: f64,
    /// Number of merge buckets across `[r_min, r_max]`.
    pub radius_bins: usize,
    pub particle_cap: usize,
    /// Particles lighter than this fraction of the total mass are folded into
    /// their nearest neighbor.
    pub prune_fraction: f64,
}

impl Default for ParticleOptions {
    fn default() -> Self {
        ParticleOptions {
            dt: 1e-3,
            position_cell: 0.25,
            radius_bins: 64,
            particle_cap: 200_000,
            prune_fraction: 1e-12,
        }
    }
}

/// Offspring offsets: 8 points on the circle of radius `√2 σ`, which match
/// the mean and covariance of the isotropic Gaussian. Step `n` uses node
/// `n mod 8` for every parent.
pub fn offspring_stencil(sigma: f64) -> [[f64; 2]; 8] {
    let rho = 2f64.sqrt() * sigma;
    std::array::from_fn(|j| {
        let a = PI / 8.0 + 2.0 * PI * j as f64 / 8.0;
        [rho * a.cos(), rho * a.sin()]
    })
}

/// Values of the limit dynamics at one particle.
#[derive(Debug, Clone, Copy, Default)]
struct Rates {
    /// Death plus competition.
    decay: f64,
    birth: f64,
    drift: f64,
}

/// Weighted-particle solver of the limit equation.
///
/// Each step is a predictor/corrector pair. Parent weights are multiplied by
/// `exp(-dt (a⁰ + a*)/2)` with `a` the death plus competition rate, radii
/// advance by Heun's method and offspring mass is the trapezoid rule of the
/// birth source at both ends of the step (the predicted offspring
/// reproducing as well), placed at the current stencil node.
#[derive(Debug, Clone)]
pub struct ParticleSolver {
    params: ModelParams,
    opts: ParticleOptions,
    domain: Domain,
    stencil: [[f64; 2]; 8],
    xi: WeightedMeasure,
    t: f64,
    n: u64,
}

impl ParticleSolver {
    pub fn new(params: &ModelParams, xi0: WeightedMeasure, opts: ParticleOptions) -> Result<Self> {
        params.validate()?;
        if !(opts.dt > 0.0 && opts.dt.is_finite()) {
            return Err(Error::SolverOption {
                option: "dt",
                reason: "must be positive".into(),
            });
        }
        if !(opts.position_cell > 0.0) || opts.radius_bins == 0 {
            return Err(Error::SolverOption {
                option: "position_cell",
                reason: "merge buckets must have positive size".into(),
            });
        }
        if params.sigma_r != 0.0 {
            return Err(Error::SolverOption {
                option: "sigma_r",
                reason: "the particle solver has no radius diffusion".into(),
            });
        }
        if xi0.particles.iter().any(|q| !(q.w >= 0.0)) {
            return Err(Error::SolverOption {
                option: "xi0",
                reason: "weights must be nonnegative".into(),
            });
        }
        let mut s = ParticleSolver {
            params: params.clone(),
            domain: params.domain(),
            stencil: offspring_stencil(params.sigma_disp),
            xi: xi0,
            opts,
            t: 0.0,
            n: 0,
        };
        let xi = std::mem::take(&mut s.xi);
        s.xi = s.compress(xi);
        Ok(s)
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn measure(&self) -> &WeightedMeasure {
        &self.xi
    }

    /// `∫ ū(x_i, y) ξ(dy)` for every particle, including its own weight.
    fn competition(&self, xi: &WeightedMeasure) -> Vec<f64> {
        let prm = &self.params;
        match prm.kernel {
            KernelMode::None => vec![0.0; xi.len()],
            KernelMode::Constant(c) => vec![c * xi.mass(); xi.len()],
            KernelMode::Zoi => {
                let mut grid = SpatialGrid::new(self.domain, 2.0 * prm.r_max);
                for (i, q) in xi.particles.iter().enumerate() {
                    grid.insert(i as u64, q.p);
                }
                let qs = &xi.particles;
                let mut out = vec![0.0; qs.len()];
                // Each unordered pair once; the lens area is shared.
                let mut add = |i: usize, j: usize| {
                    let (x, y) = (&qs[i], &qs[j]);
                    let reach = x.r + y.r;
                    let d2 = self.domain.delta(x.p, y.p).norm2();
                    if d2 < reach * reach {
                        let a = prm.u_max * lens_area(x.r, y.r, d2.sqrt()) / PI;
                        out[i] += y.w * a / (x.r * x.r);
                        out[j] += x.w * a / (y.r * y.r);
                    }
                };
                let cells = grid.cells_per_side().pow(2);
                for c in 0..cells {
                    let here = grid.cell_members(c);
                    for (a, &i) in here.iter().enumerate() {
                        for &j in &here[a + 1..] {
                            add(i as usize, j as usize);
                        }
                    }
                    let probe = here.first().map(|&i| qs[i as usize].p);
                    let Some(p) = probe else { continue };
                    for n in grid.neighborhood(p) {
                        if n <= c {
                            continue;
                        }
                        for &i in here {
                            for &j in grid.cell_members(n) {
                                add(i as usize, j as usize);
                            }
                        }
                    }
                }
                for (o, q) in out.iter_mut().zip(qs) {
                    *o += q.w * prm.u_max;
                }
                out
            }
        }
    }

    fn rates(&self, xi: &WeightedMeasure) -> Vec<Rates> {
        let prm = &self.params;
        let lc = self.competition(xi);
        xi.particles
            .iter()
            .zip(lc)
            .map(|(q, l)| Rates {
                decay: prm.lambda_d + l,
                birth: birth_rate_r(q.r, prm),
                drift: psi_of(l, prm) * richards_r(q.r, prm),
            })
            .collect()
    }

    fn clamp_r(&self, r: f64) -> f64 {
        r.clamp(self.params.r_min, self.params.r_max)
    }

    /// Offspring position of a parent at `p` for the current step, or None
    /// if the seed is lost off the island.
    fn offspring_site(&self, p: Position) -> Option<Position> {
        let q = self.domain.translate(p, self.stencil[(self.n % 8) as usize]);
        match self.params.dispersal {
            DispersalMode::Island if !self.domain.contains(q) => None,
            _ => Some(q),
        }
    }

    pub fn step(&mut self) -> Result<()> {
        let dt = self.opts.dt;
        let rmin = self.params.r_min;
        let parents = &self.xi.particles;
        let np = parents.len();
        let r0 = self.rates(&self.xi);

        // Predictor: parents, then their offspring merged into buckets.
        let mut pred = WeightedMeasure {
            particles: Vec::with_capacity(2 * np),
        };
        for (q, a) in parents.iter().zip(&r0) {
            pred.particles.push(Particle {
                p: q.p,
                r: self.clamp_r(q.r + dt * a.drift),
                w: q.w * (-dt * a.decay).exp(),
            });
        }
        let mut kids: Vec<Particle> = Vec::new();
        let mut kid_of = vec![usize::MAX; np];
        for (i, (q, a)) in parents.iter().zip(&r0).enumerate() {
            if a.birth > 0.0 && q.w > 0.0 {
                if let Some(z) = self.offspring_site(q.p) {
                    kid_of[i] = kids.len();
                    kids.push(Particle {
                        p: z,
                        r: rmin,
                        w: dt * a.birth * q.w,
                    });
                }
            }
        }
        let (merged, bucket_of) = self.merge_buckets(&kids);
        pred.particles.extend_from_slice(&merged);
        let r1 = self.rates(&pred);
        let kid_rates = &r1[np..];

        // Corrector.
        let mut next = Vec::with_capacity(np + kids.len());
        for (i, q) in parents.iter().enumerate() {
            let (a0, a1) = (r0[i], r1[i]);
            next.push(Particle {
                p: q.p,
                r: self.clamp_r(q.r + 0.5 * dt * (a0.drift + a1.drift)),
                w: q.w * (-0.5 * dt * (a0.decay + a1.decay)).exp(),
            });
        }
        for (i, q) in parents.iter().enumerate() {
            if kid_of[i] == usize::MAX {
                continue;
            }
            let k = kid_rates[bucket_of[kid_of[i]]];
            let w_kid = kids[kid_of[i]].w;
            let early = 0.5 * dt * r0[i].birth * q.w * (-dt * k.decay).exp();
            let late = 0.5 * dt * (r1[i].birth * pred.particles[i].w + k.birth * w_kid);
            let w = early + late;
            if w > 0.0 {
                next.push(Particle {
                    p: kids[kid_of[i]].p,
                    r: self.clamp_r(rmin + dt * k.drift * early / w),
                    w,
                });
            }
        }
        let next = self.compress(WeightedMeasure { particles: next });
        if next.len() > self.opts.particle_cap {
            return Err(Error::ParticleCap {
                count: next.len(),
                cap: self.opts.particle_cap,
            });
        }
        self.xi = next;
        self.n += 1;
        self.t = self.n as f64 * dt;
        Ok(())
    }

    fn bucket(&self, q: &Particle) -> (i64, i64, i64) {
        let prm = &self.params;
        let h = self.opts.position_cell;
        let span = prm.r_max - prm.r_min;
        let bins = self.opts.radius_bins as f64;
        let rb = if span > 0.0 {
            (((q.r - prm.r_min) / span * bins).floor()).min(bins - 1.0) as i64
        } else {
            0
        };
        ((q.p[0] / h).floor() as i64, (q.p[1] / h).floor() as i64, rb)
    }

    /// Merges particles sharing a bucket: weights add, position and radius
    /// become weight averages. Returns the merged particles and, for each
    /// input, the index of its merged particle.
    fn merge_buckets(&self, qs: &[Particle]) -> (Vec<Particle>, Vec<usize>) {
        struct Acc {
            anchor: Position,
            w: f64,
            dx: f64,
            dy: f64,
            wr: f64,
        }
        let mut index: HashMap<(i64, i64, i64), usize> = HashMap::new();
        let mut acc: Vec<Acc> = Vec::new();
        let mut owner = Vec::with_capacity(qs.len());
        for q in qs {
            let slot = *index.entry(self.bucket(q)).or_insert_with(|| {
                acc.push(Acc {
                    anchor: q.p,
                    w: 0.0,
                    dx: 0.0,
                    dy: 0.0,
                    wr: 0.0,
                });
                acc.len() - 1
            });
            let a = &mut acc[slot];
            let d = self.domain.delta(a.anchor, q.p);
            a.w += q.w;
            a.dx += q.w * d.dx;
            a.dy += q.w * d.dy;
            a.wr += q.w * q.r;
            owner.push(slot);
        }
        let merged = acc
            .into_iter()
            .map(|a| {
                if a.w > 0.0 {
                    Particle {
                        p: self.domain.translate(a.anchor, [a.dx / a.w, a.dy / a.w]),
                        r: self.clamp_r(a.wr / a.w),
                        w: a.w,
                    }
                } else {
                    Particle {
                        p: a.anchor,
                        r: self.params.r_min,
                        w: 0.0,
                    }
                }
            })
            .collect();
        (merged, owner)
    }

    /// Bucket merge followed by pruning of negligible weights.
    fn compress(&self, xi: WeightedMeasure) -> WeightedMeasure {
        let (mut qs, _) = self.merge_buckets(&xi.particles);
        let total: f64 = qs.iter().map(|q| q.w).sum();
        let floor = self.opts.prune_fraction * total;
        let (keep, light): (Vec<Particle>, Vec<Particle>) =
            qs.drain(..).partition(|q| q.w >= floor && q.w > 0.0);
        let mut keep = keep;
        if keep.is_empty() {
            return WeightedMeasure { particles: keep };
        }
        for q in light.iter().filter(|q| q.w > 0.0) {
            let nearest = keep
                .iter()
                .enumerate()
                .map(|(i, y)| {
                    let d = self.domain.distance(q.p, y.p);
                    (i, d * d + (q.r - y.r).powi(2))
                })
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(i, _)| i)
                .expect("nonempty");
            keep[nearest].w += q.w;
        }
        WeightedMeasure { particles: keep }
    }

    /// Steps until `t`, which must be a multiple of `dt` up to rounding.
    pub fn advance_to(&mut self, t: f64) -> Result<()> {
        let target = (t / self.opts.dt).round() as u64;
        while self.n < target {
            self.step()?;
        }
        Ok(())
    }
}

/// Runs the particle solver to `t_end`, returning the measure at `0`, every
/// `every` time units and `t_end`.
pub fn solve_particle(
    xi0: WeightedMeasure,
    t_end: f64,
    params: &ModelParams,
    opts: ParticleOptions,
    every: f64,
) -> Result<Vec<(f64, WeightedMeasure)>> {
    let mut s = ParticleSolver::new(params, xi0, opts)?;
    let mut out = vec![(0.0, s.measure().clone())];
    for t in output_times(t_end, every).into_iter().skip(1) {
        s.advance_to(t)?;
        out.push((t, s.measure().clone()));
    }
    Ok(out)
}

fn output_times(t_end: f64, every: f64) -> Vec<f64> {
    let mut ts = vec![0.0];
    let mut j = 1u64;
    loop {
        let t = j as f64 * every;
        if t >= t_end * (1.0 - 1e-12) {
            break;
        }
        ts.push(t);
        j += 1;
    }
    ts.push(t_end);
    ts
}

/// Mass `m(t)` of the logistic equation `m' = (b - d) m - c m²`.
pub fn verhulst(m0: f64, b: f64, d: f64, c: f64, t: f64) -> f64 {
    let r = b - d;
    if c == 0.0 {
        return m0 * (r * t).exp();
    }
    if r == 0.0 {
        return m0 / (1.0 + c * m0 * t);
    }
    let k = r / c;
    k * m0 / (m0 + (k - m0) * (-r * t).exp())
}

/// Cell averages of a radius density on a uniform grid over
/// `[r_min, r_max]`. Cell `i` holds mass `n[i] * dr` over the whole parcel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RadiusDensity {
    pub r_min: f64,
    pub r_max: f64,
    pub n: Vec<f64>,
}

impl RadiusDensity {
    pub fn cells(&self) -> usize {
        self.n.len()
    }

    pub fn dr(&self) -> f64 {
        (self.r_max - self.r_min) / self.n.len() as f64
    }

    pub fn edge(&self, i: usize) -> f64 {
        self.r_min + i as f64 * self.dr()
    }

    pub fn center(&self, i: usize) -> f64 {
        self.r_min + (i as f64 + 0.5) * self.dr()
    }

    /// Density of total mass `mass` distributed according to `law`.
    /// A fixed radius fills the cell that contains it.
    pub fn from_law(mass: f64, law: RadiusLaw, params: &ModelParams, cells: usize) -> Self {
        let mut d = RadiusDensity {
            r_min: params.r_min,
            r_max: params.r_max,
            n: vec![0.0; cells.max(1)],
        };
        let dr = d.dr();
        match law {
            RadiusLaw::Fixed(r) => {
                let i = d.cell_of(r);
                d.n[i] = mass / d.width();
            }
            RadiusLaw::Uniform(lo, hi) if hi > lo => {
                for i in 0..d.cells() {
                    let (a, b) = (d.edge(i), d.edge(i) + dr);
                    let overlap = (b.min(hi) - a.max(lo)).max(0.0);
                    d.n[i] = mass * overlap / (hi - lo) / dr;
                }
            }
            RadiusLaw::Uniform(lo, _) => {
                let i = d.cell_of(lo);
                d.n[i] = mass / d.width();
            }
        }
        d
    }

    /// Cell width, or 1 for the degenerate single-radius grid.
    fn width(&self) -> f64 {
        if self.r_max > self.r_min {
            self.dr()
        } else {
            1.0
        }
    }

    fn cell_of(&self, r: f64) -> usize {
        if self.r_max <= self.r_min {
            return 0;
        }
        (((r - self.r_min) / self.dr()).floor().max(0.0) as usize).min(self.cells() - 1)
    }

    pub fn mass(&self) -> f64 {
        self.n.iter().sum::<f64>() * self.width()
    }

    /// `∫ r n(r) dr`, exact for the piecewise-constant density.
    pub fn first_moment(&self) -> f64 {
        if self.r_max <= self.r_min {
            return self.r_min * self.mass();
        }
        (0..self.cells()).map(|i| self.center(i) * self.n[i]).sum::<f64>() * self.dr()
    }

    pub fn mean_radius(&self) -> f64 {
        self.first_moment() / self.mass()
    }

    /// `∫_cell g(r) dr / width` for `g = r^2`.
    fn cell_r2(&self, i: usize) -> f64 {
        if self.r_max <= self.r_min {
            return self.r_min * self.r_min;
        }
        let (a, b) = (self.edge(i), self.edge(i) + self.dr());
        (b * b * b - a * a * a) / (3.0 * (b - a))
    }

    /// Exact cell average of the birth rate.
    fn cell_birth(&self, i: usize, params: &ModelParams) -> f64 {
        if self.r_max <= self.r_min {
            return birth_rate_r(self.r_min, params);
        }
        let (a, b) = (self.edge(i), self.edge(i) + self.dr());
        let lo = a.max(params.r_birth);
        if lo >= b {
            return 0.0;
        }
        params.lambda_b_max / params.r_max * 0.5 * (b * b - lo * lo) / (b - a)
    }
}

/// Spatially averaged competition `∫ ū(x, y) ξ(dy)` of a homogeneous state;
/// it does not depend on the radius of `x`.
fn homogeneous_competition(n: &RadiusDensity, params: &ModelParams) -> f64 {
    let w = n.width();
    match params.kernel {
        KernelMode::None => 0.0,
        KernelMode::Constant(c) => c * n.mass(),
        KernelMode::Zoi => {
            let s: f64 = (0..n.cells()).map(|j| n.cell_r2(j) * n.n[j]).sum::<f64>() * w;
            params.u_max * PI * s / (params.side * params.side)
        }
    }
}

/// Upwind finite-volume solver of the radius-structured equation for
/// spatially homogeneous solutions on the torus:
/// `∂_t n + ∂_r(ψ R n) = -(λ^d + Λ) n`, with births entering at `r_min`.
/// Time stepping is Heun's method; `dt` must satisfy the CFL condition.
/// Returns the density at `0`, every `every` and `t_end`.
pub fn solve_radius_grid(
    n0: RadiusDensity,
    t_end: f64,
    dt: f64,
    params: &ModelParams,
    every: f64,
) -> Result<Vec<(f64, RadiusDensity)>> {
    params.validate()?;
    if params.dispersal != DispersalMode::ParcelInForest {
        return Err(Error::SolverOption {
            option: "dispersal",
            reason: "homogeneous solutions exist only on the torus".into(),
        });
    }
    if params.sigma_r != 0.0 {
        return Err(Error::SolverOption {
            option: "sigma_r",
            reason: "radius diffusion is not supported".into(),
        });
    }
    if !(dt > 0.0) {
        return Err(Error::SolverOption {
            option: "dt",
            reason: "must be positive".into(),
        });
    }
    let degenerate = n0.r_max <= n0.r_min;
    let m = n0.cells();
    let dr = n0.width();
    let faces: Vec<f64> = (1..m).map(|i| n0.edge(i)).collect();
    let births: Vec<f64> = (0..m).map(|i| n0.cell_birth(i, params)).collect();
    let growth = !degenerate && !params.growth_inactive();

    let rhs = |n: &RadiusDensity, out: &mut Vec<f64>| -> Result<()> {
        let lc = homogeneous_competition(n, params);
        let psi = psi_of(lc, params);
        let decay = params.lambda_d + lc;
        let b: f64 = births.iter().zip(&n.n).map(|(b, v)| b * v).sum::<f64>() * dr;
        out.clear();
        out.extend(n.n.iter().map(|v| -decay * v));
        out[0] += b / dr;
        if growth {
            let mut courant = 0.0f64;
            for (i, &rf) in faces.iter().enumerate() {
                let g = psi * richards_r(rf, params);
                courant = courant.max(g.abs() * dt / dr);
                let flux = if g >= 0.0 { g * n.n[i] } else { g * n.n[i + 1] };
                out[i] -= flux / dr;
                out[i + 1] += flux / dr;
            }
            if courant > 1.0 {
                return Err(Error::Cfl {
                    courant,
                    suggested_dt: 0.9 * dt / courant,
                });
            }
        }
        Ok(())
    };

    let mut n = n0;
    let mut k1 = Vec::with_capacity(m);
    let mut k2 = Vec::with_capacity(m);
    let mut out = vec![(0.0, n.clone())];
    let mut steps_done = 0u64;
    for t in output_times(t_end, every).into_iter().skip(1) {
        let target = (t / dt).round() as u64;
        while steps_done < target {
            rhs(&n, &mut k1)?;
            let mut pred = n.clone();
            for (v, k) in pred.n.iter_mut().zip(&k1) {
                *v = (*v + dt * k).max(0.0);
            }
            rhs(&pred, &mut k2)?;
            for ((v, a), b) in n.n.iter_mut().zip(&k1).zip(&k2) {
                *v = (*v + 0.5 * dt * (a + b)).max(0.0);
            }
            steps_done += 1;
        }
        out.push((t, n.clone()));
    }
    Ok(out)
}

/// Setup of a large-population convergence experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceSetup {
    /// Unscaled parameters (`ū`).
    pub base: ModelParams,
    /// Initial mass `⟨ξ₀, 1⟩`; replica `k` starts with `round(k m0)` plants.
    pub m0: f64,
    pub radius: RadiusLaw,
    pub t_end: f64,
    pub snapshot_every: f64,
    pub k_list: Vec<u64>,
    pub replicas: usize,
    pub functions: Vec<TestFunction>,
    pub seed: u64,
    pub solver: ParticleOptions,
    /// Lattice resolution of the limit's initial measure.
    pub lattice_side: usize,
    pub radius_nodes: usize,
}

/// One row of the error table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub k: u64,
    pub f: String,
    pub mean_sup_error: f64,
    pub stderr: f64,
    pub replicas: usize,
}

/// Tracks `sup_t |⟨μ^k_t, f⟩ - ⟨ξ_t, f⟩|` at the snapshot times.
struct SupError<'a> {
    functions: &'a [TestFunction],
    reference: &'a [Vec<f64>],
    k: f64,
    j: usize,
    sup: Vec<f64>,
}

impl Observer for SupError<'_> {
    fn snapshot(&mut self, pop: &Population) {
        for (i, f) in self.functions.iter().enumerate() {
            if let Some(&xi) = self.reference[i].get(self.j) {
                let e = (pair(pop, f) / self.k - xi).abs();
                self.sup[i] = self.sup[i].max(e);
            }
        }
        self.j += 1;
    }
}

/// The limit's pairings at the snapshot times: `values[i][j]` for function
/// `i` at time `j`.
pub fn limit_pairings(setup: &ConvergenceSetup) -> Result<Vec<Vec<f64>>> {
    let xi0 = WeightedMeasure::lattice(
        setup.m0,
        setup.radius,
        setup.lattice_side,
        setup.radius_nodes,
        setup.base.side,
    );
    let sol = solve_particle(
        xi0,
        setup.t_end,
        &setup.base,
        setup.solver.clone(),
        setup.snapshot_every,
    )?;
    Ok(setup
        .functions
        .iter()
        .map(|f| sol.iter().map(|(_, m)| m.pair(f)).collect())
        .collect())
}

/// Sup-time errors of one replica, one per test function.
pub fn replica_sup_errors(
    setup: &ConvergenceSetup,
    reference: &[Vec<f64>],
    k: u64,
    replica: u64,
) -> Result<Vec<f64>> {
    let scaled = scale_for_k(&setup.base, k)?;
    let mut rng = replica_rng(replica_seed(setup.seed, k), replica);
    let count = (k as f64 * setup.m0).round() as usize;
    let init = sample_uniform(count, setup.radius, &scaled.params, &mut rng);
    let pop = Population::new(&init, &scaled.params)?;
    let mut engine = Engine::new(scaled.params, pop, rng)?;
    let mut obs = SupError {
        functions: &setup.functions,
        reference,
        k: k as f64,
        j: 0,
        sup: vec![0.0; setup.functions.len()],
    };
    engine.run(setup.t_end, Some(setup.snapshot_every), &mut obs)?;
    Ok(obs.sup)
}

/// For each `k` and test function, the mean over replicas of the sup-time
/// distance between the rescaled simulation and the limit. Replicas run in
/// parallel; results do not depend on the thread count.
pub fn convergence_experiment(setup: &ConvergenceSetup) -> Result<Vec<ConvergenceRow>> {
    let reference = limit_pairings(setup)?;
    let jobs: Vec<(u64, u64)> = setup
        .k_list
        .iter()
        .flat_map(|&k| (0..setup.replicas as u64).map(move |r| (k, r)))
        .collect();
    let errors: Vec<Vec<f64>> = jobs
        .par_iter()
        .map(|&(k, r)| replica_sup_errors(setup, &reference, k, r))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for &k in &setup.k_list {
        for (i, f) in setup.functions.iter().enumerate() {
            let m: Moments = jobs
                .iter()
                .zip(&errors)
                .filter(|((kk, _), _)| *kk == k)
                .map(|(_, e)| e[i])
                .collect();
            rows.push(ConvergenceRow {
                k,
                f: f.name(),
                mean_sup_error: m.mean,
                stderr: if m.n > 1 { m.stderr() } else { 0.0 },
                replicas: m.n as usize,
            });
        }
    }
    Ok(rows)
}

/// Draws replica initial states i.i.d. from `ξ₀ / m₀`; exposed for callers
/// that build their own ensembles.
pub fn sample_initial<R: Rng + ?Sized>(
    k: u64,
    m0: f64,
    radius: RadiusLaw,
    params: &ModelParams,
    rng: &mut R,
) -> Result<Population> {
    let count = (k as f64 * m0).round() as usize;
    Population::new(&sample_uniform(count, radius, params, rng), params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logistic() -> ModelParams {
        ModelParams {
            side: 10.0,
            r_min: 0.5,
            r_birth: 0.5,
            r_max: 0.5,
            lambda_b_max: 1.0,
            lambda_d_max: 0.2,
            lambda_d: 0.2,
            u_max: 0.01,
            kernel: KernelMode::Constant(0.01),
            alpha_g_max: 0.0,
            ..ModelParams::forest_default()
        }
    }

    #[test]
    fn scaling() {
        let p = ModelParams {
            u_max: 0.1,
            ..ModelParams::forest_default()
        };
        assert_eq!(scale_for_k(&p, 1).unwrap().params, p);
        let s = scale_for_k(&p, 10).unwrap();
        assert!((s.params.u_max - 0.01).abs() < 1e-18);
        assert!(scale_for_k(&p, 0).is_err());
        let c = scale_for_k(&logistic(), 4).unwrap();
        assert_eq!(c.params.kernel, KernelMode::Constant(0.0025));
    }

    #[test]
    fn stencil_moments() {
        let s = offspring_stencil(0.7);
        let mx: f64 = s.iter().map(|o| o[0]).sum::<f64>() / 8.0;
        let cxx: f64 = s.iter().map(|o| o[0] * o[0]).sum::<f64>() / 8.0;
        let cxy: f64 = s.iter().map(|o| o[0] * o[1]).sum::<f64>() / 8.0;
        assert!(mx.abs() < 1e-15);
        assert!((cxx - 0.49).abs() < 1e-12);
        assert!(cxy.abs() < 1e-12);
    }

    #[test]
    fn zero_measure_stays_zero() {
        let p = logistic();
        let sol = solve_particle(WeightedMeasure::default(), 1.0, &p, ParticleOptions::default(), 0.5)
            .unwrap();
        assert!(sol.iter().all(|(_, m)| m.mass() == 0.0));
    }

    #[test]
    fn pure_decay_is_exact() {
        let p = ModelParams {
            lambda_b_max: 0.0,
            kernel: KernelMode::None,
            ..logistic()
        };
        let xi0 = WeightedMeasure::lattice(3.0, RadiusLaw::Fixed(0.5), 2, 1, p.side);
        let opts = ParticleOptions {
            dt: 1e-4,
            ..Default::default()
        };
        let sol = solve_particle(xi0, 2.0, &p, opts, 1.0).unwrap();
        for (t, m) in sol {
            assert!((m.mass() - 3.0 * (-0.2 * t).exp()).abs() < 1e-6);
        }
    }

    #[test]
    fn logistic_mass() {
        let p = logistic();
        let xi0 = WeightedMeasure::lattice(10.0, RadiusLaw::Fixed(0.5), 1, 1, p.side);
        let opts = ParticleOptions {
            position_cell: p.side,
            ..Default::default()
        };
        let sol = solve_particle(xi0, 10.0, &p, opts, 0.5).unwrap();
        let err = sol
            .iter()
            .map(|(t, m)| (m.mass() - verhulst(10.0, 1.0, 0.2, 0.01, *t)).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn verhulst_limits() {
        assert!((verhulst(10.0, 1.0, 0.2, 0.01, 200.0) - 80.0).abs() < 1e-9);
        assert_eq!(verhulst(10.0, 1.0, 0.2, 0.01, 0.0), 10.0);
    }

    #[test]
    fn radius_grid_conserves_mass_under_growth() {
        let p = ModelParams {
            lambda_b_max: 0.0,
            lambda_d: 0.0,
            kernel: KernelMode::None,
            alpha_g_max: 1.0,
            ..ModelParams::forest_default()
        };
        let n0 = RadiusDensity::from_law(5.0, RadiusLaw::Uniform(0.05, 0.2), &p, 200);
        let sol = solve_radius_grid(n0, 2.0, 1e-3, &p, 1.0).unwrap();
        for (_, n) in &sol {
            assert!((n.mass() - 5.0).abs() < 1e-9);
        }
        assert!(sol[2].1.mean_radius() > sol[0].1.mean_radius());
    }

    #[test]
    fn radius_grid_cfl() {
        let p = ModelParams {
            alpha_g_max: 1.0,
            ..ModelParams::forest_default()
        };
        let n0 = RadiusDensity::from_law(5.0, RadiusLaw::Uniform(0.05, 0.2), &p, 2000);
        match solve_radius_grid(n0, 1.0, 0.1, &p, 1.0) {
            Err(Error::Cfl { suggested_dt, .. }) => assert!(suggested_dt < 0.1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn radius_grid_logistic_reduction() {
        // A single radius r_min = r_max collapses the grid to one cell.
        let p = ModelParams {
            kernel: KernelMode::Zoi,
            u_max: 0.5,
            alpha_g_max: 0.0,
            r_min: 0.5,
            r_birth: 0.5,
            r_max: 0.5,
            lambda_d: 0.2,
            ..ModelParams::forest_default()
        };
        let c = p.u_max * PI * p.r_max * p.r_max / (p.side * p.side);
        let n0 = RadiusDensity::from_law(10.0, RadiusLaw::Fixed(p.r_max), &p, 1);
        let sol = solve_radius_grid(n0, 5.0, 1e-3, &p, 1.0).unwrap();
        for (t, n) in &sol {
            let m = verhulst(10.0, 1.0, 0.2, c, *t);
            assert!((n.mass() - m).abs() < 1e-5 * m, "t={t}");
        }
    }
}
