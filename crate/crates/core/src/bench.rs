//! Satellite attitude benchmark: configuration files, solver runs and the
//! CSV/JSON artifacts they leave behind.
//!
//! Artifacts written by [`run`]:
//!
//! * `trajectory.csv`: `k,t,q_w,q_x,q_y,q_z,omega_1,omega_2,omega_3,u_1..u_m`.
//!   The final row (`k = H`) leaves the control columns empty.
//! * `iterations.csv`: `iter,J,predicted_decrease,gamma,lambda,scheme,max_Qu_norm,dist_to_final`.
//! * `summary.json`: see [`Summary`].
//!
//! Floats are printed with 17 significant digits so that they round-trip.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix3xX, Quaternion, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::{CostError, CostSpec};
use crate::ddp::{solve, DdpError, Scheme, Solution, SolverConfig, Termination};
use crate::model::{BodyState, ModelError, SatelliteModel};
use crate::so3::{log_so3, Rotation};

/// Tolerance on `tf / dt` being an integer.
pub const HORIZON_TOL: f64 = 1e-9;
/// Tolerance on quaternion norms.
pub const QUATERNION_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("invalid `{field}`: {message}")]
    Invalid { field: &'static str, message: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Cost(#[from] CostError),
    #[error(transparent)]
    Solver(#[from] DdpError),
    #[error("cannot write artifacts: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot write csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("cannot write json: {0}")]
    Json(#[from] serde_json::Error),
}

impl BenchError {
    /// Whether the failure stems from the configuration rather than the run.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            BenchError::Read { .. }
                | BenchError::Parse { .. }
                | BenchError::Invalid { .. }
                | BenchError::Model(_)
                | BenchError::Cost(_)
                | BenchError::Solver(DdpError::Config(_))
        )
    }
}

fn invalid(field: &'static str, message: impl Into<String>) -> BenchError {
    BenchError::Invalid {
        field,
        message: message.into(),
    }
}

/// An attitude given either as a unit quaternion `[w, x, y, z]` or as a
/// sequence of elementary rotations such as `"Rot_x(30)Rot_z(70)"` (degrees,
/// composed left to right as written).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Attitude {
    Quaternion([f64; 4]),
    Sequence(String),
}

impl Attitude {
    pub fn to_rotation(&self, field: &'static str) -> Result<Rotation, BenchError> {
        match self {
            Attitude::Quaternion(q) => {
                let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
                if !norm.is_finite() || (norm - 1.0).abs() > QUATERNION_TOL {
                    return Err(invalid(field, format!("quaternion norm {norm} is not 1")));
                }
                Ok(rotation_of_quaternion(*q))
            }
            Attitude::Sequence(s) => parse_rotation_sequence(s).map_err(|m| invalid(field, m)),
        }
    }
}

/// Parses `Rot_a(deg)Rot_b(deg)…` into `Rot_a · Rot_b · …`.
pub fn parse_rotation_sequence(text: &str) -> Result<Rotation, String> {
    let compact: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    if compact.is_empty() {
        return Err("empty rotation sequence".into());
    }
    let mut rest = compact.as_str();
    let mut total = Rotation::identity();
    while !rest.is_empty() {
        let body = rest
            .strip_prefix("Rot_")
            .ok_or_else(|| format!("expected `Rot_` at `{rest}`"))?;
        let mut chars = body.chars();
        let axis = chars.next().ok_or("missing rotation axis")?;
        let body = chars
            .as_str()
            .strip_prefix('(')
            .ok_or_else(|| format!("expected `(` after `Rot_{axis}`"))?;
        let close = body.find(')').ok_or("missing `)`")?;
        let literal = body[..close].trim_end_matches('°').trim_end_matches("deg");
        let degrees: f64 = literal
            .parse()
            .map_err(|_| format!("bad angle `{}`", &body[..close]))?;
        if !degrees.is_finite() {
            return Err(format!("bad angle `{degrees}`"));
        }
        let angle = degrees.to_radians();
        let factor = match axis {
            'x' => Rotation::about_x(angle),
            'y' => Rotation::about_y(angle),
            'z' => Rotation::about_z(angle),
            other => return Err(format!("unknown axis `{other}`")),
        };
        total = total * factor;
        rest = &body[close + 1..];
    }
    Ok(total)
}

/// Unit quaternion `[w, x, y, z]` of a rotation, with `w ≥ 0`.
pub fn quaternion_of(r: &Rotation) -> [f64; 4] {
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*r.matrix()));
    let sign = if q.w < 0.0 { -1.0 } else { 1.0 };
    [sign * q.w, sign * q.i, sign * q.j, sign * q.k]
}

pub fn rotation_of_quaternion(q: [f64; 4]) -> Rotation {
    let unit = UnitQuaternion::from_quaternion(Quaternion::new(q[0], q[1], q[2], q[3]));
    Rotation::project(unit.to_rotation_matrix().matrix()).expect("unit quaternion gives a rotation")
}

fn default_seed() -> u64 {
    0
}

/// Benchmark description as stored in TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub dt: f64,
    pub tf: f64,
    pub inertia: [f64; 3],
    /// Columns of the torque input matrix, one entry per control channel.
    pub torque_axes: Vec<[f64; 3]>,
    pub su: f64,
    pub sr: f64,
    pub somega: f64,
    pub initial_attitude: Attitude,
    pub initial_omega: [f64; 3],
    pub target_attitude: Attitude,
    pub target_omega: [f64; 3],
    pub scheme: Scheme,
    pub sigma: f64,
    pub tol: f64,
    pub max_iters: usize,
    /// Recorded in the summary. The solver itself is deterministic.
    #[serde(default = "default_seed")]
    pub seed: u64,
}

impl BenchmarkConfig {
    /// The bundled attitude maneuver: identity at rest to `Rot_x(30°)Rot_z(70°)` at rest in 3 s.
    pub fn table1() -> Self {
        BenchmarkConfig {
            dt: 0.01,
            tf: 3.0,
            inertia: [10.0, 11.1, 13.0],
            torque_axes: vec![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            su: 0.1,
            sr: 1e4,
            somega: 1e4,
            initial_attitude: Attitude::Quaternion([1.0, 0.0, 0.0, 0.0]),
            initial_omega: [0.0; 3],
            target_attitude: Attitude::Sequence("Rot_x(30)Rot_z(70)".into()),
            target_omega: [0.0; 3],
            scheme: Scheme::Switch,
            sigma: 0.1,
            tol: 1e-8,
            max_iters: 100,
            seed: 0,
        }
    }

    pub fn horizon(&self) -> Result<usize, BenchError> {
        if !(self.dt > 0.0 && self.dt <= crate::model::MAX_DT) {
            return Err(invalid("dt", format!("must lie in (0, {}], got {}", crate::model::MAX_DT, self.dt)));
        }
        if !(self.tf > 0.0 && self.tf.is_finite()) {
            return Err(invalid("tf", format!("must be positive, got {}", self.tf)));
        }
        let steps = self.tf / self.dt;
        let rounded = steps.round();
        if (steps - rounded).abs() > HORIZON_TOL * rounded.max(1.0) || rounded < 1.0 {
            return Err(invalid("tf", format!("tf / dt = {steps} is not a positive integer")));
        }
        Ok(rounded as usize)
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        self.build().map(|_| ())
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            tol: self.tol,
            max_iters: self.max_iters,
            sigma: self.sigma,
            scheme: self.scheme,
            ..SolverConfig::default()
        }
    }

    /// Model, cost and initial state described by the configuration.
    pub fn build(&self) -> Result<Problem, BenchError> {
        let horizon = self.horizon()?;
        if self.torque_axes.is_empty() {
            return Err(invalid("torque_axes", "needs at least one column"));
        }
        for (field, value) in [("su", self.su), ("sr", self.sr), ("somega", self.somega)] {
            if !(value >= 0.0 && value.is_finite()) {
                return Err(invalid(field, format!("must be a non-negative scale, got {value}")));
            }
        }
        let columns: Vec<Vector3<f64>> = self.torque_axes.iter().map(|c| Vector3::from(*c)).collect();
        let model = SatelliteModel::new(
            self.dt,
            Matrix3::from_diagonal(&Vector3::from(self.inertia)),
            Matrix3xX::from_columns(&columns),
            horizon,
        )?;
        let m = columns.len();
        let spec = CostSpec::new(
            DMatrix::identity(m, m) * self.su,
            Matrix3::identity() * self.sr,
            Matrix3::identity() * self.somega,
            self.target_attitude.to_rotation("target_attitude")?,
            Vector3::from(self.target_omega),
        )?;
        let initial = BodyState::new(
            self.initial_attitude.to_rotation("initial_attitude")?,
            Vector3::from(self.initial_omega),
        );
        if !initial.omega.iter().all(|w| w.is_finite()) {
            return Err(invalid("initial_omega", "must be finite"));
        }
        self.solver_config().validate()?;
        Ok(Problem {
            model,
            spec,
            initial,
            solver: self.solver_config(),
        })
    }
}

/// Everything needed for one solve.
#[derive(Debug, Clone)]
pub struct Problem {
    pub model: SatelliteModel,
    pub spec: CostSpec,
    pub initial: BodyState,
    pub solver: SolverConfig,
}

impl Problem {
    pub fn zero_controls(&self) -> Vec<DVector<f64>> {
        vec![DVector::zeros(self.model.control_dim()); self.model.horizon()]
    }

    /// Solves from zero nominal controls.
    pub fn solve(&self) -> Result<Solution, DdpError> {
        solve(&self.model, &self.spec, &self.solver, &self.initial, &self.zero_controls())
    }
}

pub fn load_config(path: impl AsRef<Path>) -> Result<BenchmarkConfig, BenchError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| BenchError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let config: BenchmarkConfig = toml::from_str(&text).map_err(|source| BenchError::Parse {
        path: path.to_path_buf(),
        source,
    })?;
    config.validate()?;
    Ok(config)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub scheme: Scheme,
    pub converged: bool,
    pub termination: Termination,
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    /// `‖log(R_dᵀ R^H)‖` in radians.
    pub attitude_error: f64,
    /// `‖Ω^H − Ω_d‖`.
    pub omega_error: f64,
    pub max_qu_norm: f64,
    pub switch_iteration: Option<usize>,
    pub horizon: usize,
    pub seed: u64,
    pub elapsed_seconds: f64,
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub solution: Solution,
    pub summary: Summary,
    pub trajectory_path: PathBuf,
    pub iterations_path: PathBuf,
    pub summary_path: PathBuf,
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn summarize(problem: &Problem, config: &BenchmarkConfig, solution: &Solution, elapsed: f64) -> Summary {
    let last = solution.states.last().unwrap();
    let rd = problem.spec.target_rotation();
    Summary {
        scheme: problem.solver.scheme,
        converged: solution.converged(),
        termination: solution.termination,
        iterations: solution.iterations(),
        initial_cost: solution.records[0].cost,
        final_cost: solution.cost(),
        attitude_error: log_so3(&(rd.inverse() * last.rotation)).norm(),
        omega_error: (last.omega - problem.spec.target_omega()).norm(),
        max_qu_norm: solution.final_max_qu_norm(),
        switch_iteration: solution.switch_iteration,
        horizon: problem.model.horizon(),
        seed: config.seed,
        elapsed_seconds: elapsed,
    }
}

pub fn write_trajectory(path: &Path, dt: f64, solution: &Solution) -> Result<(), BenchError> {
    let m = solution.controls.first().map_or(0, |u| u.len());
    let mut writer = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = ["k", "t", "q_w", "q_x", "q_y", "q_z", "omega_1", "omega_2", "omega_3"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((1..=m).map(|j| format!("u_{j}")));
    writer.write_record(&header)?;
    for (k, state) in solution.states.iter().enumerate() {
        let mut row = vec![k.to_string(), fmt(k as f64 * dt)];
        row.extend(quaternion_of(&state.rotation).iter().map(|&c| fmt(c)));
        row.extend(state.omega.iter().map(|&w| fmt(w)));
        match solution.controls.get(k) {
            Some(u) => row.extend(u.iter().map(|&c| fmt(c))),
            None => row.extend(std::iter::repeat_n(String::new(), m)),
        }
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn write_iterations(path: &Path, solution: &Solution) -> Result<(), BenchError> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record([
        "iter",
        "J",
        "predicted_decrease",
        "gamma",
        "lambda",
        "scheme",
        "max_Qu_norm",
        "dist_to_final",
    ])?;
    for (record, dist) in solution.records.iter().zip(solution.distances_to_final()) {
        writer.write_record([
            record.iter.to_string(),
            fmt(record.cost),
            fmt(record.predicted_decrease),
            fmt(record.gamma),
            fmt(record.lambda),
            record.expansion.to_string(),
            fmt(record.max_qu_norm),
            fmt(dist),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Solves the benchmark and writes its artifacts into `out`. A run that does
/// not converge still writes everything and reports it in the summary.
pub fn run(config: &BenchmarkConfig, out: impl AsRef<Path>) -> Result<RunArtifacts, BenchError> {
    let out = out.as_ref();
    let problem = config.build()?;
    fs::create_dir_all(out)?;

    let start = Instant::now();
    let solution = problem.solve()?;
    let elapsed = start.elapsed().as_secs_f64();
    let summary = summarize(&problem, config, &solution, elapsed);

    let trajectory_path = out.join("trajectory.csv");
    let iterations_path = out.join("iterations.csv");
    let summary_path = out.join("summary.json");
    write_trajectory(&trajectory_path, config.dt, &solution)?;
    write_iterations(&iterations_path, &solution)?;
    fs::write(&summary_path, serde_json::to_string_pretty(&summary)? + "\n")?;

    Ok(RunArtifacts {
        solution,
        summary,
        trajectory_path,
        iterations_path,
        summary_path,
    })
}

/// Per-scheme convergence series for side-by-side plots.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub runs: Vec<(Scheme, RunArtifacts)>,
    pub table_path: PathBuf,
}

impl Comparison {
    pub fn get(&self, scheme: Scheme) -> Option<&RunArtifacts> {
        self.runs.iter().find(|(s, _)| *s == scheme).map(|(_, a)| a)
    }
}

/// Runs the first, second and switch schemes concurrently. Each run writes
/// its artifacts to `out/<scheme>/`; `out/comparison.csv` holds
/// `scheme,iter,J,dist_to_final` rows.
pub fn compare_schemes(config: &BenchmarkConfig, out: impl AsRef<Path>) -> Result<Comparison, BenchError> {
    let out = out.as_ref();
    config.validate()?;
    fs::create_dir_all(out)?;
    let schemes = [Scheme::First, Scheme::Second, Scheme::Switch];

    let results: Vec<Result<RunArtifacts, BenchError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = schemes
            .iter()
            .map(|&scheme| {
                let config = BenchmarkConfig {
                    scheme,
                    ..config.clone()
                };
                let dir = out.join(scheme.to_string());
                scope.spawn(move || run(&config, dir))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("solver thread panicked"))
            .collect()
    });

    let mut runs = Vec::with_capacity(schemes.len());
    for (scheme, result) in schemes.into_iter().zip(results) {
        runs.push((scheme, result?));
    }

    let table_path = out.join("comparison.csv");
    let mut writer = csv::Writer::from_path(&table_path)?;
    writer.write_record(["scheme", "iter", "J", "dist_to_final"])?;
    for (scheme, artifacts) in &runs {
        let solution = &artifacts.solution;
        for (record, dist) in solution.records.iter().zip(solution.distances_to_final()) {
            writer.write_record([scheme.to_string(), record.iter.to_string(), fmt(record.cost), fmt(dist)])?;
        }
    }
    writer.flush()?;
    Ok(Comparison { runs, table_path })
}
