//! The exact event loop: a dominating exponential clock, Euler flow of the
//! radii between events, uniform selection of the focal individual and
//! acceptance/rejection thinning.
//!
//! Random draws of one proposal, in order: the exponential waiting time, the
//! flow's Gaussian increments (only when `sigma_r > 0`, one per individual per
//! substep in storage order), the focal individual, the event channel, then
//! the channel-specific draws (birth: two Gaussian offset components and the
//! acceptance uniform; natural death: the acceptance uniform; competition:
//! the partner index and the acceptance uniform).

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{
    birth_rate, competition_u, death_rate, lambda_c_all, psi_of, richards_r, sample_dispersal,
};
use crate::model::{
    DispersalMode, EventKind, EventRecord, KernelMode, ModelParams, Population, Snapshot,
};
use crate::rng::StreamRng;

/// Bounds of the three event channels and their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalRates {
    pub gamma_b: f64,
    pub gamma_d: f64,
    pub gamma_c: f64,
    pub gamma: f64,
}

pub fn global_rates(n: usize, params: &ModelParams) -> GlobalRates {
    let n = n as f64;
    let gamma_b = params.kappa * params.lambda_b_max * n;
    let gamma_d = params.lambda_d_max * n;
    let gamma_c = params.u_max * n * n;
    GlobalRates {
        gamma_b,
        gamma_d,
        gamma_c,
        gamma: gamma_b + gamma_d + gamma_c,
    }
}

fn growth_factors(pop: &Population, params: &ModelParams) -> Vec<f64> {
    if params.c_g == 0.0 || params.kernel == KernelMode::None {
        return vec![1.0; pop.len()];
    }
    lambda_c_all(pop, params)
        .into_iter()
        .map(|l| psi_of(l, params))
        .collect()
}

/// Advances all radii from the population time to `t1` with explicit Euler
/// (Euler–Maruyama when `sigma_r > 0`) steps of `dt_flow`, the last one
/// shortened to land on `t1`. Radii are clamped to `[r_min, r_max]`.
pub fn flow<R: Rng + ?Sized>(pop: &mut Population, t1: f64, params: &ModelParams, rng: &mut R) {
    let t0 = pop.time();
    if t1 <= t0 {
        return;
    }
    if params.growth_inactive() || pop.is_empty() {
        pop.set_time(t1);
        return;
    }
    let dt = params.dt_flow;
    let frozen = params.frozen_psi.then(|| growth_factors(pop, params));
    let mut t = t0;
    let mut drift = Vec::with_capacity(pop.len());
    let mut current;
    while t < t1 {
        let last = t1 - t <= dt * (1.0 + 1e-9);
        let h = if last { t1 - t } else { dt };
        let psi: &[f64] = match &frozen {
            Some(v) => v,
            None => {
                current = growth_factors(pop, params);
                &current
            }
        };
        drift.clear();
        drift.extend(
            pop.individuals()
                .iter()
                .zip(psi)
                .map(|(x, &s)| s * richards_r(x.r, params)),
        );
        let diffusion = params.sigma_r * h.sqrt();
        for (i, &v) in drift.iter().enumerate() {
            let mut r = pop.at(i).r + h * v;
            if params.sigma_r > 0.0 {
                let g: f64 = rng.sample(StandardNormal);
                r += diffusion * g;
            }
            pop.set_radius(i, r.clamp(params.r_min, params.r_max));
        }
        t = if last { t1 } else { t + h };
    }
    pop.set_time(t1);
}

/// Hooks for recording a run as it happens.
pub trait Observer {
    /// At the start time, at every cadence time and at the horizon.
    fn snapshot(&mut self, _pop: &Population) {}
    /// State just before a proposal is thinned (radii flowed to the event
    /// time).
    fn before_event(&mut self, _pop: &Population) {}
    /// State just after a proposal, accepted or not.
    fn event(&mut self, _rec: &EventRecord, _pop: &Population) {}
}

impl Observer for () {}

/// Full record of a run: every proposal and the cadence snapshots, plus
/// optionally the states on both sides of every event.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub events: Vec<EventRecord>,
    pub snapshots: Vec<Snapshot>,
    /// Pre- and post-event states in time order, with the cadence snapshots
    /// interleaved. Empty unless `dense` was requested.
    pub path: Vec<Snapshot>,
    #[serde(skip)]
    dense: bool,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records the state on both sides of every event, as needed for time
    /// integrals along the realized path.
    pub fn dense() -> Self {
        Trajectory {
            dense: true,
            ..Self::default()
        }
    }

    pub fn final_time(&self) -> Option<f64> {
        self.snapshots.last().map(|s| s.t)
    }
}

impl Observer for Trajectory {
    fn snapshot(&mut self, pop: &Population) {
        let s = Snapshot::of(pop);
        if self.dense {
            self.path.push(s.clone());
        }
        self.snapshots.push(s);
    }

    fn before_event(&mut self, pop: &Population) {
        if self.dense {
            self.path.push(Snapshot::of(pop));
        }
    }

    fn event(&mut self, rec: &EventRecord, pop: &Population) {
        self.events.push(*rec);
        if self.dense {
            self.path.push(Snapshot::of(pop));
        }
    }
}

/// One replica of the individual-based model.
#[derive(Debug, Clone)]
pub struct Engine {
    params: ModelParams,
    pop: Population,
    rng: StreamRng,
    k: u64,
}

impl Engine {
    pub fn new(params: ModelParams, pop: Population, rng: StreamRng) -> Result<Self> {
        params.validate()?;
        Ok(Engine {
            params,
            pop,
            rng,
            k: 0,
        })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn population(&self) -> &Population {
        &self.pop
    }

    pub fn into_population(self) -> Population {
        self.pop
    }

    pub fn time(&self) -> f64 {
        self.pop.time()
    }

    /// Number of proposals processed so far.
    pub fn events(&self) -> u64 {
        self.k
    }

    pub fn rates(&self) -> GlobalRates {
        global_rates(self.pop.len(), &self.params)
    }

    /// Draws and processes the next proposal without a horizon.
    pub fn step(&mut self) -> Result<EventRecord> {
        if self.pop.is_empty() {
            return Err(Error::Extinct);
        }
        let g = self.rates();
        let s: f64 = self.rng.sample(Exp1);
        let t = self.pop.time() + s / g.gamma;
        flow(&mut self.pop, t, &self.params, &mut self.rng);
        self.thin(&g)
    }

    fn thin(&mut self, g: &GlobalRates) -> Result<EventRecord> {
        let n = self.pop.len();
        let p = &self.params;
        let x = *self.pop.at(self.rng.random_range(0..n));
        let branch = self.rng.random::<f64>() * g.gamma;
        self.k += 1;
        let mut rec = EventRecord {
            k: self.k,
            time: self.pop.time(),
            kind: EventKind::RejectedBirth,
            subject_id: x.id,
            partner_id: None,
            newborn: None,
            n_after: n,
        };
        if branch < g.gamma_b {
            let (pz, rz) = sample_dispersal(&x, p, &mut self.rng);
            let inside = p.dispersal == DispersalMode::ParcelInForest || p.domain().contains(pz);
            let accept = birth_rate(&x, p) / (p.lambda_b_max * p.kappa);
            if self.rng.random::<f64>() < accept && inside {
                if n + 1 > p.population_cap {
                    return Err(Error::PopulationCap {
                        size: n + 1,
                        cap: p.population_cap,
                        time: self.pop.time(),
                    });
                }
                rec.kind = EventKind::Birth;
                rec.newborn = Some(self.pop.add(pz, rz));
            }
        } else if branch < g.gamma_b + g.gamma_d {
            rec.kind = EventKind::RejectedNdeath;
            if self.rng.random::<f64>() < death_rate(&x, p) / p.lambda_d_max {
                rec.kind = EventKind::NaturalDeath;
                self.pop.remove(x.id);
            }
        } else {
            rec.kind = EventKind::RejectedCdeath;
            let y = *self.pop.at(self.rng.random_range(0..n));
            rec.partner_id = Some(y.id);
            if self.rng.random::<f64>() < competition_u(&x, &y, p) / p.u_max {
                rec.kind = EventKind::CompetitionDeath;
                self.pop.remove(x.id);
            }
        }
        rec.n_after = self.pop.len();
        Ok(rec)
    }

    fn flow_observed<O: Observer + ?Sized>(
        &mut self,
        t1: f64,
        cadence: &mut Cadence,
        obs: &mut O,
    ) {
        while let Some(ts) = cadence.next_before(t1) {
            flow(&mut self.pop, ts, &self.params, &mut self.rng);
            obs.snapshot(&self.pop);
        }
        flow(&mut self.pop, t1, &self.params, &mut self.rng);
    }

    /// Runs until the next proposal would fall after `t_max`, then flows to
    /// exactly `t_max`. Snapshots are taken at the current time, every
    /// `snapshot_every` time units after it (if given) and at `t_max`.
    pub fn run<O: Observer + ?Sized>(
        &mut self,
        t_max: f64,
        snapshot_every: Option<f64>,
        obs: &mut O,
    ) -> Result<()> {
        if let Some(dt) = snapshot_every {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(Error::SolverOption {
                    option: "snapshot_every",
                    reason: "must be positive".into(),
                });
            }
        }
        let mut cadence = Cadence::new(self.pop.time(), t_max, snapshot_every);
        obs.snapshot(&self.pop);
        loop {
            let g = self.rates();
            if g.gamma == 0.0 {
                break;
            }
            let s: f64 = self.rng.sample(Exp1);
            let t = self.pop.time() + s / g.gamma;
            if t > t_max {
                break;
            }
            self.flow_observed(t, &mut cadence, obs);
            obs.before_event(&self.pop);
            let rec = self.thin(&g)?;
            obs.event(&rec, &self.pop);
        }
        self.flow_observed(t_max, &mut cadence, obs);
        if self.pop.time() < t_max || cadence.emitted_last != Some(t_max) {
            self.pop.set_time(t_max);
            obs.snapshot(&self.pop);
        }
        Ok(())
    }
}

/// Snapshot times `t0 + j Δ` strictly inside `(t0, t_max)`; the horizon is
/// handled by the caller.
struct Cadence {
    t0: f64,
    t_max: f64,
    every: Option<f64>,
    j: u64,
    emitted_last: Option<f64>,
}

impl Cadence {
    fn new(t0: f64, t_max: f64, every: Option<f64>) -> Self {
        Cadence {
            t0,
            t_max,
            every,
            j: 1,
            emitted_last: None,
        }
    }

    /// Next cadence time not after `t1`, consumed.
    fn next_before(&mut self, t1: f64) -> Option<f64> {
        let dt = self.every?;
        let ts = self.t0 + self.j as f64 * dt;
        if ts > t1 || ts > self.t_max {
            return None;
        }
        self.j += 1;
        self.emitted_last = Some(ts);
        Some(ts)
    }
}

/// Runs one replica from `pop` to `t_max` and records everything.
pub fn simulate(
    params: &ModelParams,
    pop: Population,
    rng: StreamRng,
    t_max: f64,
    snapshot_every: Option<f64>,
) -> Result<Trajectory> {
    let mut engine = Engine::new(params.clone(), pop, rng)?;
    let mut traj = Trajectory::new();
    engine.run(t_max, snapshot_every, &mut traj)?;
    Ok(traj)
}
