//! Pairings `⟨ν, f⟩`, the generator of the population process applied to
//! linear functionals, predictable quadratic variations and ensemble
//! statistics used to validate simulated trajectories.

use serde::{Deserialize, Serialize};

use crate::engine::{Observer, Trajectory};
use crate::error::Result;
use crate::kernels::{birth_rate, death_rate, island_mass, lambda_c_all, psi_of, richards_r};
use crate::model::{DispersalMode, EventRecord, Individual, KernelMode, ModelParams, Population};
use crate::quadrature::gaussian_rule;

/// Test functions `f(p, r)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFunction {
    One,
    Radius,
    RadiusSq,
    /// `1{lo <= r < hi}`.
    RadiusBin { lo: f64, hi: f64 },
    /// `1{p in [x0, x1) × [y0, y1)}`.
    SpatialBox { x0: f64, x1: f64, y0: f64, y1: f64 },
    /// Piecewise-linear function of the radius through the given nodes,
    /// constant beyond the end nodes.
    Tabulated { r: Vec<f64>, f: Vec<f64> },
}

impl TestFunction {
    pub fn name(&self) -> String {
        match self {
            TestFunction::One => "one".into(),
            TestFunction::Radius => "radius".into(),
            TestFunction::RadiusSq => "radius_sq".into(),
            TestFunction::RadiusBin { lo, hi } => format!("radius_bin[{lo},{hi})"),
            TestFunction::SpatialBox { x0, x1, y0, y1 } => {
                format!("box[{x0},{x1})x[{y0},{y1})")
            }
            TestFunction::Tabulated { .. } => "tabulated".into(),
        }
    }

    /// True if `f` does not depend on the position.
    pub fn radial(&self) -> bool {
        !matches!(self, TestFunction::SpatialBox { .. })
    }

    fn segment(r: &[f64], x: f64) -> Option<usize> {
        if r.len() < 2 || x < r[0] || x >= r[r.len() - 1] {
            return None;
        }
        Some(r.partition_point(|&v| v <= x).saturating_sub(1).min(r.len() - 2))
    }

    pub fn eval_state(&self, p: [f64; 2], r: f64) -> f64 {
        match self {
            TestFunction::One => 1.0,
            TestFunction::Radius => r,
            TestFunction::RadiusSq => r * r,
            TestFunction::RadiusBin { lo, hi } => f64::from(r >= *lo && r < *hi),
            TestFunction::SpatialBox { x0, x1, y0, y1 } => {
                f64::from(p[0] >= *x0 && p[0] < *x1 && p[1] >= *y0 && p[1] < *y1)
            }
            TestFunction::Tabulated { r: nodes, f } => {
                if nodes.is_empty() {
                    return 0.0;
                }
                match Self::segment(nodes, r) {
                    Some(i) => {
                        let t = (r - nodes[i]) / (nodes[i + 1] - nodes[i]);
                        (1.0 - t) * f[i] + t * f[i + 1]
                    }
                    None if r < nodes[0] => f[0],
                    None => f[f.len() - 1],
                }
            }
        }
    }

    pub fn eval(&self, x: &Individual) -> f64 {
        self.eval_state(x.p, x.r)
    }

    /// `∂f/∂r`.
    pub fn dr(&self, x: &Individual) -> f64 {
        match self {
            TestFunction::Radius => 1.0,
            TestFunction::RadiusSq => 2.0 * x.r,
            TestFunction::Tabulated { r: nodes, f } => match Self::segment(nodes, x.r) {
                Some(i) => (f[i + 1] - f[i]) / (nodes[i + 1] - nodes[i]),
                None => 0.0,
            },
            _ => 0.0,
        }
    }

    /// `∂²f/∂r²` (zero almost everywhere for the piecewise-linear variants).
    pub fn drr(&self, _x: &Individual) -> f64 {
        match self {
            TestFunction::RadiusSq => 2.0,
            _ => 0.0,
        }
    }
}

/// `⟨ν, f⟩ = Σ_i f(x_i)`.
pub fn pair(pop: &Population, f: &TestFunction) -> f64 {
    pair_individuals(pop.individuals(), f)
}

pub fn pair_individuals(xs: &[Individual], f: &TestFunction) -> f64 {
    xs.iter().map(|x| f.eval(x)).sum()
}

/// Per-channel values: natural death, birth, competition, growth.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Channels {
    pub d: f64,
    pub b: f64,
    pub c: f64,
    pub g: f64,
}

impl Channels {
    pub fn total(&self) -> f64 {
        self.d + self.b + self.c + self.g
    }

    fn axpy(&mut self, a: f64, o: &Channels) {
        self.d += a * o.d;
        self.b += a * o.b;
        self.c += a * o.c;
        self.g += a * o.g;
    }
}

/// Evaluates the generator terms and quadratic-variation integrands on point
/// measures. The dispersal expectation uses a 32 × 32 Gauss–Hermite product
/// rule.
#[derive(Debug, Clone)]
pub struct Generator {
    params: ModelParams,
    offsets: Vec<[f64; 2]>,
    weights: Vec<f64>,
}

pub const DISPERSAL_NODES: usize = 32;

impl Generator {
    pub fn new(params: &ModelParams) -> Result<Self> {
        let (x, w) = gaussian_rule(DISPERSAL_NODES, params.sigma_disp)?;
        let mut offsets = Vec::with_capacity(x.len() * x.len());
        let mut weights = Vec::with_capacity(x.len() * x.len());
        for (xi, wi) in x.iter().zip(&w) {
            for (yj, wj) in x.iter().zip(&w) {
                offsets.push([*xi, *yj]);
                weights.push(wi * wj);
            }
        }
        Ok(Generator {
            params: params.clone(),
            offsets,
            weights,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    /// `E[g(Z) 1{Z kept}]` for the offspring state `Z` of a parent at `p`.
    /// Lost island seeds count as zero.
    pub fn dispersal_expectation(&self, p: [f64; 2], g: impl Fn([f64; 2], f64) -> f64) -> f64 {
        let prm = &self.params;
        let domain = prm.domain();
        let island = prm.dispersal == DispersalMode::Island;
        if prm.sigma_disp == 0.0 {
            return if !island || domain.contains(p) { g(p, prm.r_min) } else { 0.0 };
        }
        let (mut acc, mut kept) = (0.0, 0.0);
        for (off, w) in self.offsets.iter().zip(&self.weights) {
            let q = domain.translate(p, *off);
            if island && !domain.contains(q) {
                continue;
            }
            acc += w * g(q, prm.r_min);
            kept += w;
        }
        if !island {
            return acc;
        }
        if kept == 0.0 {
            return 0.0;
        }
        // Renormalize the truncated rule to the exact retained mass.
        island_mass(p, prm) * acc / kept
    }

    fn birth_moment(&self, x: &Individual, f: &TestFunction, power: i32) -> f64 {
        let prm = &self.params;
        if f.radial() {
            let v = f.eval_state(x.p, prm.r_min).powi(power);
            return match prm.dispersal {
                DispersalMode::ParcelInForest => v,
                DispersalMode::Island => v * island_mass(x.p, prm),
            };
        }
        self.dispersal_expectation(x.p, |q, r| f.eval_state(q, r).powi(power))
    }

    fn competition(&self, pop: &Population) -> Vec<f64> {
        if self.params.kernel == KernelMode::None {
            return vec![0.0; pop.len()];
        }
        lambda_c_all(pop, &self.params)
    }

    /// `ℓf(ν)` split by channel.
    pub fn generator(&self, f: &TestFunction, pop: &Population) -> Channels {
        self.generator_with(f, pop, &self.competition(pop))
    }

    fn generator_with(&self, f: &TestFunction, pop: &Population, lc: &[f64]) -> Channels {
        let prm = &self.params;
        let mut out = Channels::default();
        for (x, &l) in pop.individuals().iter().zip(lc) {
            let fx = f.eval(x);
            out.d -= death_rate(x, prm) * fx;
            let lb = birth_rate(x, prm);
            if lb > 0.0 {
                out.b += lb * self.birth_moment(x, f, 1);
            }
            out.c -= l * fx;
            let dr = f.dr(x);
            let drr = f.drr(x);
            if dr != 0.0 || drr != 0.0 {
                out.g += psi_of(l, prm) * richards_r(x.r, prm) * dr
                    + 0.5 * prm.sigma_r * prm.sigma_r * drr;
            }
        }
        out
    }

    /// Integrands of the predictable quadratic variation of
    /// `⟨ν_t, f⟩ - ⟨ν_0, f⟩ - ∫ ℓf`, by channel.
    pub fn qv_integrands(&self, f: &TestFunction, pop: &Population) -> Channels {
        self.qv_integrands_with(f, pop, &self.competition(pop))
    }

    fn qv_integrands_with(&self, f: &TestFunction, pop: &Population, lc: &[f64]) -> Channels {
        let prm = &self.params;
        let mut out = Channels::default();
        for (x, &l) in pop.individuals().iter().zip(lc) {
            let f2 = f.eval(x).powi(2);
            out.d += death_rate(x, prm) * f2;
            let lb = birth_rate(x, prm);
            if lb > 0.0 {
                out.b += lb * self.birth_moment(x, f, 2);
            }
            out.c += l * f2;
            out.g += (prm.sigma_r * f.dr(x)).powi(2);
        }
        out
    }
}

/// Accumulates, along a realized path, the pairing `⟨ν_t, f⟩`, the
/// compensator `∫ ℓf(ν_s) ds` and the predicted quadratic variation, with the
/// trapezoid rule between consecutive observed states. Pre- and post-event
/// states share a time, so jumps contribute no spurious area.
#[derive(Debug, Clone)]
pub struct PathIntegrator {
    generator: Generator,
    f: TestFunction,
    last: Option<(f64, Channels, Channels)>,
    pub initial: Option<f64>,
    pub current: f64,
    pub compensator: Channels,
    pub qv: Channels,
}

impl PathIntegrator {
    pub fn new(generator: Generator, f: TestFunction) -> Self {
        PathIntegrator {
            generator,
            f,
            last: None,
            initial: None,
            current: 0.0,
            compensator: Channels::default(),
            qv: Channels::default(),
        }
    }

    pub fn observe(&mut self, pop: &Population) {
        let t = pop.time();
        let lc = self.generator.competition(pop);
        let l = self.generator.generator_with(&self.f, pop, &lc);
        let q = self.generator.qv_integrands_with(&self.f, pop, &lc);
        if let Some((t0, l0, q0)) = self.last {
            let h = 0.5 * (t - t0);
            if h > 0.0 {
                self.compensator.axpy(h, &l0);
                self.compensator.axpy(h, &l);
                self.qv.axpy(h, &q0);
                self.qv.axpy(h, &q);
            }
        }
        let v = pair(pop, &self.f);
        self.initial.get_or_insert(v);
        self.current = v;
        self.last = Some((t, l, q));
    }

    /// `⟨ν_t, f⟩ - ⟨ν_0, f⟩ - ∫_0^t ℓf(ν_s) ds`.
    pub fn martingale(&self) -> f64 {
        self.current - self.initial.unwrap_or(0.0) - self.compensator.total()
    }
}

impl Observer for PathIntegrator {
    fn snapshot(&mut self, pop: &Population) {
        self.observe(pop);
    }

    fn before_event(&mut self, pop: &Population) {
        self.observe(pop);
    }

    fn event(&mut self, rec: &EventRecord, pop: &Population) {
        // A rejected proposal leaves the state as observed just before it.
        if rec.kind.accepted() {
            self.observe(pop);
        }
    }
}

/// Predicted quadratic variation by channel, with the empirical variance it
/// is compared to.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct QvReport {
    pub d: f64,
    pub b: f64,
    pub c: f64,
    pub g: f64,
    pub total: f64,
    pub empirical_variance: f64,
    pub replicas: usize,
}

impl QvReport {
    pub fn from_channels(c: Channels) -> Self {
        QvReport {
            d: c.d,
            b: c.b,
            c: c.c,
            g: c.g,
            total: c.total(),
            empirical_variance: f64::NAN,
            replicas: 1,
        }
    }

    /// Flat `key=value` lines.
    pub fn to_kv(&self) -> String {
        format!(
            "qv_d={:.12e}\nqv_b={:.12e}\nqv_c={:.12e}\nqv_g={:.12e}\nqv_total={:.12e}\n\
             empirical_variance={:.12e}\nreplicas={}\n",
            self.d, self.b, self.c, self.g, self.total, self.empirical_variance, self.replicas
        )
    }
}

/// Rebuilds the population at each recorded path state.
fn replay<F: FnMut(&Population)>(traj: &Trajectory, params: &ModelParams, mut visit: F) -> Result<()> {
    let states = if traj.path.is_empty() {
        &traj.snapshots
    } else {
        &traj.path
    };
    for s in states {
        let pop = Population::from_individuals(&s.individuals, s.t, params)?;
        visit(&pop);
    }
    Ok(())
}

/// Predicted quadratic variation along a recorded trajectory. The
/// trajectory should be dense (see [`Trajectory::dense`]); otherwise only the
/// cadence snapshots are used.
pub fn predicted_qv(f: &TestFunction, traj: &Trajectory, params: &ModelParams) -> Result<QvReport> {
    let mut integ = PathIntegrator::new(Generator::new(params)?, f.clone());
    replay(traj, params, |pop| integ.observe(pop))?;
    Ok(QvReport::from_channels(integ.qv))
}

/// Compensated process `⟨ν_t, f⟩ - ⟨ν_0, f⟩ - ∫ ℓf` at the end of a recorded
/// trajectory.
pub fn compensated(f: &TestFunction, traj: &Trajectory, params: &ModelParams) -> Result<f64> {
    let mut integ = PathIntegrator::new(Generator::new(params)?, f.clone());
    replay(traj, params, |pop| integ.observe(pop))?;
    Ok(integ.martingale())
}

/// Running mean and variance (Welford).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub n: u64,
    pub mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, o: &Moments) {
        if o.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = *o;
            return;
        }
        let n = (self.n + o.n) as f64;
        let d = o.mean - self.mean;
        self.m2 += o.m2 + d * d * self.n as f64 * o.n as f64 / n;
        self.mean += d * o.n as f64 / n;
        self.n += o.n;
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            return f64::NAN;
        }
        self.m2 / (self.n - 1) as f64
    }

    pub fn stderr(&self) -> f64 {
        (self.variance() / self.n as f64).sqrt()
    }
}

impl FromIterator<f64> for Moments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut m = Moments::default();
        iter.into_iter().for_each(|x| m.push(x));
        m
    }
}

/// Collects `⟨ν_t, f⟩` at every snapshot of a run, for ensemble statistics.
#[derive(Debug, Clone, Default)]
pub struct PairingRecorder {
    pub functions: Vec<TestFunction>,
    pub times: Vec<f64>,
    /// `values[i][j]`: function `i` at snapshot `j`.
    pub values: Vec<Vec<f64>>,
}

impl PairingRecorder {
    pub fn new(functions: Vec<TestFunction>) -> Self {
        let values = vec![Vec::new(); functions.len()];
        PairingRecorder {
            functions,
            times: Vec::new(),
            values,
        }
    }
}

impl Observer for PairingRecorder {
    fn snapshot(&mut self, pop: &Population) {
        self.times.push(pop.time());
        for (f, v) in self.functions.iter().zip(&mut self.values) {
            v.push(pair(pop, f));
        }
    }
}

/// Ensemble moments of one pairing at common snapshot times.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EnsembleSeries {
    pub times: Vec<f64>,
    pub moments: Vec<Moments>,
}

impl EnsembleSeries {
    pub fn add(&mut self, times: &[f64], values: &[f64]) {
        if self.times.is_empty() {
            self.times = times.to_vec();
            self.moments = vec![Moments::default(); times.len()];
        }
        for (m, &v) in self.moments.iter_mut().zip(values) {
            m.push(v);
        }
    }
}

/// Upper envelope of the mean population size: the pure-birth (Yule)
/// process at the maximal birth rate dominates every run.
pub fn yule_bound(n0: f64, t: f64, params: &ModelParams) -> f64 {
    n0 * (params.kappa * params.lambda_b_max * t).exp()
}
