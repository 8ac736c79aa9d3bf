//! The four subcommands. Each writes CSV (or key-value) files under the
//! output directory, every file starting with the provenance header.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;
use zoisim_core::engine::{Engine, Trajectory};
use zoisim_core::io;
use zoisim_core::meanfield::{
    solve_particle, solve_radius_grid, ConvergenceSetup, RadiusDensity, WeightedMeasure,
};
use zoisim_core::observables::{pair_individuals, EnsembleSeries, PairingRecorder, TestFunction};
use zoisim_core::rng::{replica_rng, replica_seed};

use crate::checks::{self, Check};
use crate::config::{ConfigError, InitSpec, RunConfig, SolverChoice};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] zoisim_core::Error),
    #[error("{path}: {message}")]
    Output { path: PathBuf, message: String },
}

impl RunError {
    /// 2 for configuration problems, 3 for aborted runs.
    pub fn exit_code(&self) -> i32 {
        use zoisim_core::Error as E;
        match self {
            RunError::Config(_) => 2,
            RunError::Core(E::Validation { .. } | E::InitialEntry { .. } | E::SolverOption { .. }) => 2,
            RunError::Core(_) | RunError::Output { .. } => 3,
        }
    }
}

/// A validated configuration with its command-line overrides applied.
#[derive(Debug, Clone)]
pub struct Run {
    pub config: RunConfig,
    pub config_sha256: String,
    pub seed: u64,
    pub out: PathBuf,
    pub quiet: bool,
}

/// What a command produced.
#[derive(Debug, Clone, Default)]
pub struct Outcome {
    pub files: Vec<PathBuf>,
    /// Some validation check failed.
    pub failed: bool,
}

impl Run {
    fn header(&self, command: &str) -> Vec<String> {
        vec![
            format!("zoisim {} {command}", env!("CARGO_PKG_VERSION")),
            format!("config_sha256 {}", self.config_sha256),
            format!("seed {}", self.seed),
            format!("replicas {}", self.config.replicas),
        ]
    }

    fn say(&self, line: &str) {
        if !self.quiet {
            println!("{line}");
        }
    }

    /// Creates `name` inside the output directory and hands a buffered
    /// writer to `write`.
    fn write_file<E: std::fmt::Display>(
        &self,
        outcome: &mut Outcome,
        name: &str,
        write: impl FnOnce(BufWriter<File>) -> Result<(), E>,
    ) -> Result<(), RunError> {
        let path = self.out.join(name);
        let fail = |message: String| RunError::Output {
            path: path.clone(),
            message,
        };
        std::fs::create_dir_all(&self.out).map_err(|e| fail(e.to_string()))?;
        let file = File::create(&path).map_err(|e| fail(e.to_string()))?;
        write(BufWriter::new(file)).map_err(|e| fail(e.to_string()))?;
        outcome.files.push(path);
        Ok(())
    }
}

fn file_stem(f: &TestFunction) -> String {
    f.name()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' { c } else { '_' })
        .collect()
}

/// Per-replica record kept by `simulate`.
struct ReplicaRun {
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
    trajectory: Option<Trajectory>,
}

pub fn simulate(run: &Run) -> Result<Outcome, RunError> {
    let cfg = &run.config;
    let functions = &cfg.simulate.functions;
    let runs: Vec<ReplicaRun> = (0..cfg.replicas as u64)
        .into_par_iter()
        .map(|r| -> zoisim_core::Result<ReplicaRun> {
            let mut rng = replica_rng(run.seed, r);
            let pop = cfg.init.build(&cfg.model, &mut rng)?;
            let mut engine = Engine::new(cfg.model.clone(), pop, rng)?;
            if (r as usize) < cfg.simulate.trajectories {
                let mut traj = Trajectory::new();
                engine.run(cfg.t_max, cfg.snapshot_every, &mut traj)?;
                Ok(ReplicaRun {
                    times: traj.snapshots.iter().map(|s| s.t).collect(),
                    values: functions
                        .iter()
                        .map(|f| {
                            traj.snapshots
                                .iter()
                                .map(|s| pair_individuals(&s.individuals, f))
                                .collect()
                        })
                        .collect(),
                    trajectory: Some(traj),
                })
            } else {
                let mut rec = PairingRecorder::new(functions.clone());
                engine.run(cfg.t_max, cfg.snapshot_every, &mut rec)?;
                Ok(ReplicaRun {
                    times: rec.times,
                    values: rec.values,
                    trajectory: None,
                })
            }
        })
        .collect::<zoisim_core::Result<_>>()?;

    let header = run.header("simulate");
    let mut outcome = Outcome::default();
    for (r, rep) in runs.iter().enumerate() {
        let Some(traj) = &rep.trajectory else { continue };
        run.write_file(&mut outcome, &format!("events_r{r:04}.csv"), |w| {
            io::write_events(w, &header, &traj.events)
        })?;
        for (j, s) in traj.snapshots.iter().enumerate() {
            let mut h = header.clone();
            h.push(format!("t {}", io::num(s.t)));
            run.write_file(&mut outcome, &format!("snapshot_r{r:04}_{j:04}.csv"), |w| {
                io::write_snapshot(w, &h, &s.individuals)
            })?;
        }
    }
    for (i, f) in functions.iter().enumerate() {
        let mut series = EnsembleSeries::default();
        for rep in &runs {
            series.add(&rep.times, &rep.values[i]);
        }
        let mut h = header.clone();
        h.push(format!("f {}", f.name()));
        run.write_file(&mut outcome, &format!("moments_{}.csv", file_stem(f)), |w| {
            io::write_moments(w, &h, &series)
        })?;
        if let (Some(t), Some(m)) = (series.times.last(), series.moments.last()) {
            run.say(&format!(
                "<nu_T, {}> at T = {t}: mean {:.6} stderr {:.6}",
                f.name(),
                m.mean,
                m.stderr()
            ));
        }
    }
    Ok(outcome)
}

fn output_every(cfg: &RunConfig) -> f64 {
    cfg.snapshot_every.unwrap_or(cfg.t_max.max(f64::MIN_POSITIVE))
}

pub fn meanfield(run: &Run) -> Result<Outcome, RunError> {
    let cfg = &run.config;
    let opts = &cfg.meanfield;
    let mass = opts.mass.unwrap_or(cfg.init.count() as f64);
    let every = output_every(cfg);
    let header = run.header("meanfield");
    let mut outcome = Outcome::default();

    if matches!(opts.solver, SolverChoice::Particle | SolverChoice::Both) {
        let xi0 = match &cfg.init {
            InitSpec::Sample { radius, .. } => WeightedMeasure::lattice(
                mass,
                *radius,
                opts.lattice_side,
                opts.radius_nodes,
                cfg.model.side,
            ),
            InitSpec::Individuals(xs) => {
                let pop = cfg.init.build(&cfg.model, &mut replica_rng(run.seed, 0))?;
                WeightedMeasure::empirical(&pop, xs.len().max(1) as f64 / mass)
            }
        };
        let sol = solve_particle(xi0, cfg.t_max, &cfg.model, opts.particle.clone(), every)?;
        let rows: Vec<(f64, f64, f64)> = sol
            .iter()
            .map(|(t, m)| (*t, m.mass(), m.mean_radius()))
            .collect();
        run.write_file(&mut outcome, "particle_summary.csv", |w| {
            io::write_mass_series(w, &header, &rows)
        })?;
        if opts.write_particles {
            run.write_file(&mut outcome, "particles.csv", |w| {
                io::write_particles(w, &header, &sol)
            })?;
        }
        if let Some((t, m, r)) = rows.last() {
            run.say(&format!("particle solver at t = {t}: mass {m:.6} mean radius {r:.6}"));
        }
    }

    if matches!(opts.solver, SolverChoice::Grid | SolverChoice::Both) {
        let law = cfg.radius_law().ok_or(ConfigError::Option {
            field: "meanfield.solver",
            constraint: "the radius-grid solver needs a sampled initial population".into(),
        })?;
        let n0 = RadiusDensity::from_law(mass, law, &cfg.model, opts.grid_cells);
        let table = solve_radius_grid(n0, cfg.t_max, opts.grid_dt, &cfg.model, every)?;
        let rows: Vec<(f64, f64, f64)> = table
            .iter()
            .map(|(t, n)| (*t, n.mass(), n.mean_radius()))
            .collect();
        run.write_file(&mut outcome, "density.csv", |w| {
            io::write_density(w, &header, &table)
        })?;
        run.write_file(&mut outcome, "grid_summary.csv", |w| {
            io::write_mass_series(w, &header, &rows)
        })?;
        if let Some((t, m, r)) = rows.last() {
            run.say(&format!("radius grid at t = {t}: mass {m:.6} mean radius {r:.6}"));
        }
    }
    Ok(outcome)
}

/// The convergence setup described by a configuration.
pub fn convergence_setup(cfg: &RunConfig, seed: u64) -> Result<ConvergenceSetup, RunError> {
    let c = &cfg.converge;
    let radius = cfg.radius_law().ok_or(ConfigError::Option {
        field: "init",
        constraint: "the convergence experiment needs a sampled initial population".into(),
    })?;
    Ok(ConvergenceSetup {
        base: cfg.model.clone(),
        m0: c.m0.unwrap_or(cfg.init.count() as f64),
        radius,
        t_end: cfg.t_max,
        snapshot_every: output_every(cfg),
        k_list: c.k_list.clone(),
        replicas: cfg.replicas,
        functions: c.functions.clone(),
        seed,
        solver: c.particle.clone(),
        lattice_side: c.lattice_side,
        radius_nodes: c.radius_nodes,
    })
}

pub fn converge(run: &Run) -> Result<Outcome, RunError> {
    let setup = convergence_setup(&run.config, run.seed)?;
    let (check, rows) = checks::convergence(&setup)?;
    let mut outcome = Outcome::default();
    let header = run.header("converge");
    run.write_file(&mut outcome, "error_table.csv", |w| {
        io::write_error_table(w, &header, &rows)
    })?;
    for r in &rows {
        run.say(&format!(
            "k = {:>6} f = {:<8} mean sup error {:.6e} (stderr {:.2e})",
            r.k, r.f, r.mean_sup_error, r.stderr
        ));
    }
    run.say(&check.line());
    Ok(outcome)
}

pub fn validate(run: &Run) -> Result<Outcome, RunError> {
    let cfg = &run.config;
    let v = &cfg.validate;
    let horizon = v.horizon.unwrap_or(cfg.t_max);
    let replicas = v.replicas.unwrap_or(cfg.replicas);
    let every = cfg.snapshot_every.unwrap_or(horizon / 10.0);
    let seed = |i: u64| replica_seed(run.seed, i);

    let mut results: Vec<Check> = Vec::new();
    let mut report = |c: Check| {
        run.say(&c.line());
        results.push(c);
    };
    report(checks::lens_oracle(
        v.lens_triples,
        v.lens_darts,
        v.lens_tolerance,
        seed(1),
    ));
    report(checks::branching_mean(
        &cfg.model,
        cfg.init.count(),
        horizon,
        replicas,
        seed(2),
    )?);
    report(checks::yule_domination(
        &cfg.model, &cfg.init, horizon, every, replicas, seed(3),
    )?);
    report(checks::richards_integrator(cfg.model.dt_flow)?);
    let mg = checks::martingale_qv(
        &cfg.model,
        &cfg.init,
        &TestFunction::One,
        horizon,
        replicas,
        v.qv_tolerance,
        seed(4),
    )?;
    report(mg.mean);
    report(mg.variance);

    let header = run.header("validate");
    let mut outcome = Outcome::default();
    run.write_file(&mut outcome, "validate_report.txt", |mut w| -> std::io::Result<()> {
        write_header(&mut w, &header)?;
        for c in &results {
            writeln!(w, "{}", c.line())?;
        }
        w.flush()
    })?;
    run.write_file(&mut outcome, "qv_report.txt", |mut w| -> std::io::Result<()> {
        write_header(&mut w, &header)?;
        writeln!(w, "f=one")?;
        write!(w, "{}", mg.report.to_kv())?;
        w.flush()
    })?;
    outcome.failed = results.iter().any(|c| !c.pass);
    Ok(outcome)
}

fn write_header<W: Write>(w: &mut W, header: &[String]) -> std::io::Result<()> {
    for line in header {
        writeln!(w, "# {line}")?;
    }
    Ok(())
}

/// Output directory: `--out`, else the configured one relative to the
/// config file's directory.
pub fn resolve_output(cfg: &RunConfig, config_path: &Path, out: Option<PathBuf>) -> PathBuf {
    match out {
        Some(p) => p,
        None if cfg.output.is_absolute() => cfg.output.clone(),
        None => config_path
            .parent()
            .unwrap_or(Path::new("."))
            .join(&cfg.output),
    }
}
