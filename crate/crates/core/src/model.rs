//! Domain types: individuals, the population point measure, model parameters
//! and event records.

use std::collections::HashMap;
use std::hash::{BuildHasherDefault, Hasher};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Domain, SpatialGrid};

/// Planar coordinates in meters.
pub type Position = [f64; 2];

/// One plant: identity, position and zone-of-influence radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub id: u64,
    pub p: Position,
    pub r: f64,
}

/// Competition kernel. `Zoi` is the overlap-fraction kernel; `Constant(c)`
/// charges `c` per distinct pair regardless of geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelMode {
    Zoi,
    Constant(f64),
    None,
}

/// Offspring placement. `ParcelInForest` wraps a Gaussian offset on the
/// torus; `Island` loses offspring that land outside the bounded parcel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DispersalMode {
    ParcelInForest,
    Island,
}

/// All model constants. Lengths in meters, rates per time unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Parcel side `L`.
    pub side: f64,
    pub r_min: f64,
    pub r_max: f64,
    /// Minimal radius for reproduction.
    pub r_birth: f64,
    pub lambda_b_max: f64,
    pub lambda_d_max: f64,
    /// Natural death rate (constant in the forest model).
    pub lambda_d: f64,
    pub u_max: f64,
    /// Dispersal envelope constant.
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    pub sigma_disp: f64,
    pub alpha_g_max: f64,
    pub beta_g: f64,
    /// Coupling from competition strength to growth reduction.
    pub c_g: f64,
    /// Diffusion coefficient of the radius.
    #[serde(default)]
    pub sigma_r: f64,
    #[serde(default = "default_kernel")]
    pub kernel: KernelMode,
    #[serde(default = "default_dispersal")]
    pub dispersal: DispersalMode,
    /// Euler step of the inter-event flow.
    #[serde(default = "default_dt_flow")]
    pub dt_flow: f64,
    /// Evaluate the growth factor once per inter-event interval instead of
    /// once per Euler substep.
    #[serde(default)]
    pub frozen_psi: bool,
    /// Hard cap on the population size.
    #[serde(default = "default_population_cap")]
    pub population_cap: usize,
}

fn default_kappa() -> f64 {
    1.0
}

fn default_kernel() -> KernelMode {
    KernelMode::Zoi
}

fn default_dispersal() -> DispersalMode {
    DispersalMode::ParcelInForest
}

fn default_dt_flow() -> f64 {
    1e-3
}

fn default_population_cap() -> usize {
    1_000_000
}

fn check(ok: bool, field: &'static str, constraint: impl Into<String>) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Validation {
            field,
            constraint: constraint.into(),
        })
    }
}

impl ModelParams {
    /// Reference parameters of a parcel-in-forest run; mostly useful as a
    /// starting point for `..` struct updates.
    pub fn forest_default() -> Self {
        ModelParams {
            side: 10.0,
            r_min: 0.05,
            r_max: 0.5,
            r_birth: 0.2,
            lambda_b_max: 1.0,
            lambda_d_max: 0.2,
            lambda_d: 0.1,
            u_max: 1.0,
            kappa: 1.0,
            sigma_disp: 0.5,
            alpha_g_max: 1.0,
            beta_g: 2.0,
            c_g: 0.5,
            sigma_r: 0.0,
            kernel: KernelMode::Zoi,
            dispersal: DispersalMode::ParcelInForest,
            dt_flow: 1e-3,
            frozen_psi: false,
            population_cap: 1_000_000,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            ("side", self.side),
            ("r_min", self.r_min),
            ("r_max", self.r_max),
            ("r_birth", self.r_birth),
            ("lambda_b_max", self.lambda_b_max),
            ("lambda_d_max", self.lambda_d_max),
            ("lambda_d", self.lambda_d),
            ("u_max", self.u_max),
            ("kappa", self.kappa),
            ("sigma_disp", self.sigma_disp),
            ("alpha_g_max", self.alpha_g_max),
            ("beta_g", self.beta_g),
            ("c_g", self.c_g),
            ("sigma_r", self.sigma_r),
            ("dt_flow", self.dt_flow),
        ];
        for (field, v) in finite {
            check(v.is_finite(), field, "must be finite")?;
        }
        for (field, v) in [
            ("lambda_b_max", self.lambda_b_max),
            ("lambda_d_max", self.lambda_d_max),
            ("lambda_d", self.lambda_d),
            ("u_max", self.u_max),
            ("sigma_disp", self.sigma_disp),
            ("alpha_g_max", self.alpha_g_max),
            ("c_g", self.c_g),
            ("sigma_r", self.sigma_r),
        ] {
            check(v >= 0.0, field, "must be nonnegative")?;
        }
        check(self.side > 0.0, "side", "must be positive")?;
        check(self.r_min > 0.0, "r_min", "must be positive")?;
        check(self.r_min <= self.r_birth, "r_birth", "must satisfy r_min <= r_birth")?;
        check(self.r_birth <= self.r_max, "r_birth", "must satisfy r_birth <= r_max")?;
        check(
            2.0 * self.r_max < self.side,
            "r_max",
            "must satisfy 2 r_max < L (minimal-image convention)",
        )?;
        check(self.beta_g != 1.0, "beta_g", "must differ from 1 (Richards exponent)")?;
        check(
            self.lambda_d <= self.lambda_d_max,
            "lambda_d",
            "must not exceed lambda_d_max",
        )?;
        check(self.kappa >= 1.0, "kappa", "must be at least 1")?;
        if self.dispersal == DispersalMode::ParcelInForest {
            check(
                self.kappa == 1.0,
                "kappa",
                "must equal 1 in parcel_in_forest mode",
            )?;
        }
        check(self.dt_flow > 0.0, "dt_flow", "must be positive")?;
        check(self.population_cap > 0, "population_cap", "must be positive")?;
        if let KernelMode::Constant(c) = self.kernel {
            check(c.is_finite() && c >= 0.0, "kernel", "constant must be nonnegative")?;
            check(c <= self.u_max, "kernel", "constant must not exceed u_max")?;
        }
        Ok(())
    }

    pub fn domain(&self) -> Domain {
        match self.dispersal {
            DispersalMode::ParcelInForest => Domain::torus(self.side),
            DispersalMode::Island => Domain::bounded(self.side),
        }
    }

    /// Radii cannot change between events.
    pub fn growth_inactive(&self) -> bool {
        (self.alpha_g_max == 0.0 && self.sigma_r == 0.0) || self.r_min == self.r_max
    }
}

/// Law of the initial radius.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiusLaw {
    Fixed(f64),
    Uniform(f64, f64),
}

impl RadiusLaw {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            RadiusLaw::Fixed(r) => r,
            RadiusLaw::Uniform(lo, hi) if hi > lo => rng.random_range(lo..hi),
            RadiusLaw::Uniform(lo, _) => lo,
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            RadiusLaw::Fixed(r) => r,
            RadiusLaw::Uniform(lo, hi) => 0.5 * (lo + hi),
        }
    }

    /// `n` equal-mass midpoint nodes of the law.
    pub fn nodes(&self, n: usize) -> Vec<f64> {
        match *self {
            RadiusLaw::Fixed(r) => vec![r],
            RadiusLaw::Uniform(lo, hi) => (0..n)
                .map(|i| lo + (hi - lo) * (i as f64 + 0.5) / n as f64)
                .collect(),
        }
    }
}

/// Draws `count` individuals with uniform positions over the parcel and
/// radii from `radius`. Each individual consumes two uniforms for the
/// position then the radius draw.
pub fn sample_uniform<R: Rng + ?Sized>(
    count: usize,
    radius: RadiusLaw,
    params: &ModelParams,
    rng: &mut R,
) -> Vec<(Position, f64)> {
    (0..count)
        .map(|_| {
            let x = rng.random::<f64>() * params.side;
            let y = rng.random::<f64>() * params.side;
            ([x, y], radius.sample(rng))
        })
        .collect()
}

/// Multiplicative hash for the id index; ids are small sequential integers
/// and need no collision resistance.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdHasher(u64);

impl Hasher for IdHasher {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 = (self.0 ^ b as u64).wrapping_mul(0x100_0000_01b3);
        }
    }

    fn write_u64(&mut self, x: u64) {
        self.0 = x.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    }
}

type IdMap = HashMap<u64, usize, BuildHasherDefault<IdHasher>>;

/// The population point measure with identity-indexed storage and a spatial
/// grid.
///
/// Storage order is the order used for uniform selection; removal swaps the
/// last individual into the freed slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    individuals: Vec<Individual>,
    slots: IdMap,
    grid: SpatialGrid,
    time: f64,
    next_id: u64,
}

/// Serialized form of a [`Population`]; the grid is rebuilt on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationRecord {
    pub time: f64,
    pub next_id: u64,
    pub domain: Domain,
    pub cells_per_side: usize,
    pub individuals: Vec<Individual>,
}

impl Serialize for Population {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_record().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Population {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rec = PopulationRecord::deserialize(d)?;
        Population::from_record(rec).map_err(serde::de::Error::custom)
    }
}

fn check_entry(index: usize, p: Position, r: f64, params: &ModelParams) -> Result<()> {
    let fail = |reason: String| Err(Error::InitialEntry { index, reason });
    if !(r >= params.r_min && r <= params.r_max) {
        return fail(format!(
            "radius {r} outside [{}, {}]",
            params.r_min, params.r_max
        ));
    }
    if !(p[0] >= 0.0 && p[0] < params.side && p[1] >= 0.0 && p[1] < params.side) {
        return fail(format!(
            "position ({}, {}) outside [0, {})^2",
            p[0], p[1], params.side
        ));
    }
    Ok(())
}

impl Population {
    /// Builds a population at time 0 with ids `1..=N`.
    pub fn new(initial: &[(Position, f64)], params: &ModelParams) -> Result<Self> {
        for (i, &(p, r)) in initial.iter().enumerate() {
            check_entry(i, p, r, params)?;
        }
        let mut pop = Population::empty(params);
        for &(p, r) in initial {
            pop.add(p, r);
        }
        Ok(pop)
    }

    pub fn empty(params: &ModelParams) -> Self {
        Population {
            individuals: Vec::new(),
            slots: IdMap::default(),
            grid: SpatialGrid::new(params.domain(), 2.0 * params.r_max),
            time: 0.0,
            next_id: 1,
        }
    }

    /// Rebuilds a population from stored individuals (e.g. a snapshot).
    pub fn from_individuals(
        individuals: &[Individual],
        time: f64,
        params: &ModelParams,
    ) -> Result<Self> {
        for (i, x) in individuals.iter().enumerate() {
            check_entry(i, x.p, x.r, params)?;
        }
        let mut pop = Population::empty(params);
        pop.time = time;
        for x in individuals {
            pop.insert(*x);
        }
        pop.next_id = individuals.iter().map(|x| x.id + 1).max().unwrap_or(1);
        Ok(pop)
    }

    fn insert(&mut self, x: Individual) {
        self.slots.insert(x.id, self.individuals.len());
        self.grid.insert(x.id, x.p);
        self.individuals.push(x);
    }

    pub fn to_record(&self) -> PopulationRecord {
        PopulationRecord {
            time: self.time,
            next_id: self.next_id,
            domain: self.grid.domain(),
            cells_per_side: self.grid.cells_per_side(),
            individuals: self.individuals.clone(),
        }
    }

    pub fn from_record(rec: PopulationRecord) -> std::result::Result<Self, String> {
        let mut pop = Population {
            individuals: Vec::new(),
            slots: IdMap::default(),
            grid: SpatialGrid::with_cells_per_side(rec.domain, rec.cells_per_side.max(1)),
            time: rec.time,
            next_id: rec.next_id,
        };
        for x in rec.individuals {
            if x.id >= rec.next_id || pop.slots.contains_key(&x.id) {
                return Err(format!("invalid or duplicate id {}", x.id));
            }
            pop.insert(x);
        }
        Ok(pop)
    }

    pub fn len(&self) -> usize {
        self.individuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.individuals.is_empty()
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn set_time(&mut self, t: f64) {
        self.time = t;
    }

    pub fn individuals(&self) -> &[Individual] {
        &self.individuals
    }

    pub fn get(&self, id: u64) -> Option<&Individual> {
        self.slots.get(&id).map(|&i| &self.individuals[i])
    }

    pub fn at(&self, index: usize) -> &Individual {
        &self.individuals[index]
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn next_id(&self) -> u64 {
        self.next_id
    }

    /// Adds an individual with a fresh id and returns it.
    pub fn add(&mut self, p: Position, r: f64) -> Individual {
        let x = Individual {
            id: self.next_id,
            p,
            r,
        };
        self.next_id += 1;
        self.insert(x);
        x
    }

    pub fn remove(&mut self, id: u64) -> Option<Individual> {
        let slot = self.slots.remove(&id)?;
        let x = self.individuals.swap_remove(slot);
        if let Some(moved) = self.individuals.get(slot) {
            self.slots.insert(moved.id, slot);
        }
        self.grid.remove(id, x.p);
        Some(x)
    }

    /// Radii only; positions never move between events.
    pub fn set_radius(&mut self, index: usize, r: f64) {
        self.individuals[index].r = r;
    }

    /// Checks the storage invariants: count, id index and grid registration
    /// agree, and every state is within bounds.
    pub fn audit(&self, params: &ModelParams) -> std::result::Result<(), String> {
        if self.slots.len() != self.individuals.len() {
            return Err(format!(
                "id index holds {} entries for {} individuals",
                self.slots.len(),
                self.individuals.len()
            ));
        }
        let mut registered = 0;
        for (i, x) in self.individuals.iter().enumerate() {
            if self.slots.get(&x.id) != Some(&i) {
                return Err(format!("id {} not indexed at slot {i}", x.id));
            }
            if x.id >= self.next_id {
                return Err(format!("id {} not below next_id {}", x.id, self.next_id));
            }
            if !self.grid.cell_members(self.grid.cell_of(x.p)).contains(&x.id) {
                return Err(format!("id {} missing from its grid cell", x.id));
            }
            check_entry(i, x.p, x.r, params).map_err(|e| e.to_string())?;
        }
        for c in 0..self.grid.cells_per_side().pow(2) {
            registered += self.grid.cell_members(c).len();
        }
        if registered != self.individuals.len() {
            return Err(format!(
                "grid holds {registered} registrations for {} individuals",
                self.individuals.len()
            ));
        }
        Ok(())
    }
}

/// Kind of a proposed punctual event, with its thinning outcome.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Birth,
    NaturalDeath,
    CompetitionDeath,
    RejectedBirth,
    RejectedNdeath,
    RejectedCdeath,
}

impl EventKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EventKind::Birth => "birth",
            EventKind::NaturalDeath => "natural_death",
            EventKind::CompetitionDeath => "competition_death",
            EventKind::RejectedBirth => "rejected_birth",
            EventKind::RejectedNdeath => "rejected_ndeath",
            EventKind::RejectedCdeath => "rejected_cdeath",
        }
    }

    pub fn accepted(&self) -> bool {
        matches!(
            self,
            EventKind::Birth | EventKind::NaturalDeath | EventKind::CompetitionDeath
        )
    }

    /// Change of the population size caused by the event.
    pub fn size_change(&self) -> i64 {
        match self {
            EventKind::Birth => 1,
            EventKind::NaturalDeath | EventKind::CompetitionDeath => -1,
            _ => 0,
        }
    }
}

/// One proposed event of the dominating clock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    /// Event counter, rejected proposals included.
    pub k: u64,
    pub time: f64,
    pub kind: EventKind,
    pub subject_id: u64,
    /// Competitor picked for a competition proposal.
    pub partner_id: Option<u64>,
    pub newborn: Option<Individual>,
    pub n_after: usize,
}

/// Population state at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub individuals: Vec<Individual>,
}

impl Snapshot {
    pub fn of(pop: &Population) -> Self {
        Snapshot {
            t: pop.time(),
            individuals: pop.individuals().to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn params() -> ModelParams {
        ModelParams::forest_default()
    }

    #[test]
    fn empty_population() {
        let pop = Population::new(&[], &params()).unwrap();
        assert_eq!(pop.len(), 0);
        assert_eq!(pop.time(), 0.0);
        pop.audit(&params()).unwrap();
    }

    #[test]
    fn fresh_ids() {
        let init = [([1.0, 1.0], 0.1), ([2.0, 2.0], 0.2), ([3.0, 3.0], 0.3)];
        let pop = Population::new(&init, &params()).unwrap();
        let mut ids: Vec<u64> = pop.individuals().iter().map(|x| x.id).collect();
        ids.sort();
        assert_eq!(ids, vec![1, 2, 3]);
        pop.audit(&params()).unwrap();
    }

    #[test]
    fn rejects_oversized_radius() {
        let p = params();
        let init = [([1.0, 1.0], 0.1), ([2.0, 2.0], 1.1 * p.r_max)];
        match Population::new(&init, &p) {
            Err(Error::InitialEntry { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_position_outside_parcel() {
        let p = params();
        assert!(Population::new(&[([10.0, 1.0], 0.1)], &p).is_err());
        assert!(Population::new(&[([-0.1, 1.0], 0.1)], &p).is_err());
    }

    #[test]
    fn ids_are_not_reused() {
        let p = params();
        let mut pop = Population::new(&[([1.0, 1.0], 0.1), ([2.0, 2.0], 0.1)], &p).unwrap();
        pop.remove(2).unwrap();
        let x = pop.add([3.0, 3.0], 0.1);
        assert_eq!(x.id, 3);
        pop.remove(1).unwrap();
        assert_eq!(pop.len(), 1);
        assert_eq!(pop.get(3).unwrap().p, [3.0, 3.0]);
        pop.audit(&p).unwrap();
    }

    #[test]
    fn parameter_constraints() {
        let mut p = params();
        p.beta_g = 1.0;
        assert!(matches!(p.validate(), Err(Error::Validation { field: "beta_g", .. })));
        let mut p = params();
        p.r_max = 5.0;
        assert!(matches!(p.validate(), Err(Error::Validation { field: "r_max", .. })));
        let mut p = params();
        p.kappa = 2.0;
        assert!(matches!(p.validate(), Err(Error::Validation { field: "kappa", .. })));
        p.dispersal = DispersalMode::Island;
        assert!(p.validate().is_ok());
        let mut p = params();
        p.kernel = KernelMode::Constant(2.0);
        assert!(p.validate().is_err());
        assert!(params().validate().is_ok());
    }

    proptest! {
        #[test]
        fn serde_round_trip_is_lossless(
            entries in prop::collection::vec((0.0..10.0f64, 0.0..10.0f64, 0.05..0.5f64), 0..40),
            removals in prop::collection::vec(any::<prop::sample::Index>(), 0..10),
            t in 0.0..100.0f64,
        ) {
            let p = params();
            let init: Vec<(Position, f64)> = entries.iter().map(|&(x, y, r)| ([x, y], r)).collect();
            let mut pop = Population::new(&init, &p).unwrap();
            for ix in removals {
                if pop.is_empty() { break; }
                let id = pop.at(ix.index(pop.len())).id;
                pop.remove(id);
            }
            pop.set_time(t);
            let json = serde_json::to_string(&pop).unwrap();
            let back: Population = serde_json::from_str(&json).unwrap();
            prop_assert_eq!(back.individuals(), pop.individuals());
            prop_assert_eq!(back.time(), pop.time());
            prop_assert_eq!(back.next_id(), pop.next_id());
            prop_assert_eq!(back.grid().cells_per_side(), pop.grid().cells_per_side());
            back.audit(&p).unwrap();
        }
    }
}
