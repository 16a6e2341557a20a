//! Monte-Carlo generation of labeled tracking-cost samples: closed-loop
//! rollouts of sampled references, the policy-dependent tracking cost, and
//! JSON-Lines persistence. Rollouts are stored without a tracking weight;
//! labels are recomputed per weight at training time.

use nalgebra::{DMatrix, DVector, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::controllers::{
    flat_to_command, rollout_quadrotor, rollout_unicycle, PolicyGains, Se3Gains, UnicycleGains,
};
use crate::dynamics::{
    wrap_angle, QuadrotorState, ReferenceTrajectory, SystemState, SystemTag, UnicycleState,
};
use crate::error::{Error, Result};
use crate::ilqr::{
    solve_ilqr, straight_line_inputs, BlockEquality, IlqrOptions, IlqrProblem, StageTarget,
};
use crate::trajgen::{fit_interpolating_polynomial, sample_lissajous, LissajousAmps, WaypointSet};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

pub const RECORD_VERSION: u32 = 1;

/// How a stored reference trajectory was generated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RolloutKind {
    #[serde(rename = "ilqr")]
    Ilqr,
    #[serde(rename = "polynomial")]
    Polynomial,
    #[serde(rename = "min-jerk")]
    MinJerk,
    #[serde(rename = "lissajous")]
    Lissajous,
}

/// One closed-loop rollout: states, applied inputs, and the tracked
/// reference, plus enough metadata to reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutRecord {
    pub version: u32,
    pub system: SystemTag,
    pub kind: RolloutKind,
    pub seed: u64,
    pub dt: f64,
    pub x: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub gains_hash: String,
}

impl RolloutRecord {
    pub fn validate(&self) -> Result<()> {
        if self.version != RECORD_VERSION {
            return Err(Error::Format {
                message: format!(
                    "unsupported record version {} (expected {RECORD_VERSION})",
                    self.version
                ),
            });
        }
        if self.x.len() != self.r.len() || self.x.len() != self.u.len() + 1 {
            return Err(Error::Format {
                message: format!(
                    "inconsistent rollout lengths: {} states, {} inputs, {} references",
                    self.x.len(),
                    self.u.len(),
                    self.r.len()
                ),
            });
        }
        let (x_dim, u_dim) = match self.system {
            SystemTag::Unicycle => (3, 2),
            SystemTag::Quadrotor => (15, 4),
        };
        let r_dim = self.system.reference_dim();
        if self.x.iter().any(|row| row.len() != x_dim)
            || self.u.iter().any(|row| row.len() != u_dim)
            || self.r.iter().any(|row| row.len() != r_dim)
        {
            return Err(Error::Format {
                message: "rollout row dimensions do not match the system tag".into(),
            });
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.u.len()
    }

    /// Policy-dependent tracking cost of this rollout at weight rho.
    pub fn tracking_cost(&self, rho: f64, d: &DMatrix<f64>) -> Result<f64> {
        tracking_cost(self.system, &self.x, &self.u, &self.r, rho, d)
    }
}

/// Tracking error in flat-output space: position components differenced
/// directly, the angle component (unicycle heading, quadrotor yaw) wrapped.
pub fn flat_error(tag: SystemTag, x_row: &[f64], r_row: &[f64]) -> Result<DVector<f64>> {
    let flat = SystemState::from_row(tag, x_row)?.flat_outputs();
    if r_row.len() != flat.len() {
        return Err(Error::DimensionMismatch {
            context: "reference row",
            expected: flat.len(),
            got: r_row.len(),
        });
    }
    let mut err = DVector::zeros(flat.len());
    for i in 0..flat.len() {
        err[i] = flat[i] - r_row[i];
    }
    let angle_idx = match tag {
        SystemTag::Unicycle => 2,
        SystemTag::Quadrotor => 3,
    };
    err[angle_idx] = wrap_angle(err[angle_idx]);
    Ok(err)
}

/// sum_{t<N} (rho ||x_t - r_t||^2 + ||D u_t||^2) + rho ||x_N - r_N||^2,
/// with state error measured in flat-output space (angles wrapped).
pub fn tracking_cost(
    tag: SystemTag,
    x: &[Vec<f64>],
    u: &[Vec<f64>],
    r: &[Vec<f64>],
    rho: f64,
    d: &DMatrix<f64>,
) -> Result<f64> {
    if x.len() != r.len() || x.len() != u.len() + 1 {
        return Err(Error::DimensionMismatch {
            context: "tracking cost trajectory lengths",
            expected: u.len() + 1,
            got: x.len(),
        });
    }
    if rho <= 0.0 {
        return Err(Error::InvalidConfig {
            message: format!("tracking weight must be positive, got {rho}"),
        });
    }
    let mut cost = 0.0;
    for t in 0..x.len() {
        cost += rho * flat_error(tag, &x[t], &r[t])?.norm_squared();
        if t < u.len() {
            let ut = DVector::from_row_slice(&u[t]);
            cost += (d * &ut).norm_squared();
        }
    }
    if !cost.is_finite() {
        return Err(Error::NonFinite {
            context: "tracking cost",
        });
    }
    Ok(cost)
}

/// Default input-cost matrix D with ||D u||^2 = 0.1 ||u||^2.
pub fn default_input_cost(tag: SystemTag) -> DMatrix<f64> {
    let m = match tag {
        SystemTag::Unicycle => 2,
        SystemTag::Quadrotor => 4,
    };
    DMatrix::identity(m, m) * 0.1f64.sqrt()
}

/// Per-record seed derived from the master seed and the record index
/// (splitmix64 finalizer), so parallel and serial generation agree and any
/// record is reproducible standalone.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E3779B97F4A7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// An intermediate waypoint of a unicycle task: a stage on the grid, a
/// position, and the heading used when a generator needs a full-state
/// waypoint (linear interpolation between initial and goal headings).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MidWaypoint {
    pub stage: usize,
    pub pos: [f64; 2],
    pub heading_hint: f64,
}

/// A sampled unicycle task: start state, goal state, and 1-2 intermediate
/// waypoints on the time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnicycleInstance {
    pub x0: [f64; 3],
    pub goal: [f64; 3],
    pub mids: Vec<MidWaypoint>,
}

/// Sample one task: initial position uniform over [0,2]^2 with heading
/// uniform over [0, pi]; goal uniform over [1,3]^2 with heading 0;
/// intermediate waypoints are convex combinations of the endpoints with
/// mixing coefficients uniform over (0,1), sorted, and snapped to the grid.
pub fn sample_unicycle_instance(
    rng: &mut ChaCha12Rng,
    n_mids: usize,
    horizon: usize,
) -> UnicycleInstance {
    let x0 = [
        rng.random_range(0.0..2.0),
        rng.random_range(0.0..2.0),
        rng.random_range(0.0..std::f64::consts::PI),
    ];
    let goal = [rng.random_range(1.0..3.0), rng.random_range(1.0..3.0), 0.0];
    let mut lambdas: Vec<f64> = (0..n_mids).map(|_| rng.random_range(0.0..1.0)).collect();
    lambdas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut mids: Vec<MidWaypoint> = Vec::with_capacity(n_mids);
    for lambda in lambdas {
        let mut stage = ((lambda * horizon as f64).round() as usize).clamp(1, horizon - 1);
        if let Some(prev) = mids.last() {
            if stage <= prev.stage {
                stage = (prev.stage + 1).min(horizon - 1);
            }
        }
        mids.push(MidWaypoint {
            stage,
            pos: [
                x0[0] + lambda * (goal[0] - x0[0]),
                x0[1] + lambda * (goal[1] - x0[1]),
            ],
            heading_hint: x0[2] + lambda * (wrap_angle(goal[2] - x0[2])),
        });
    }
    UnicycleInstance { x0, goal, mids }
}

impl UnicycleInstance {
    /// Full-state waypoint set on the time grid (used by polynomial fits and
    /// by the planner's initialization).
    pub fn waypoint_set(&self, horizon: usize, dt: f64) -> Result<WaypointSet> {
        let mut times = vec![0.0];
        let mut points = vec![self.x0.to_vec()];
        for mid in &self.mids {
            times.push(mid.stage as f64 * dt);
            points.push(vec![mid.pos[0], mid.pos[1], mid.heading_hint]);
        }
        times.push(horizon as f64 * dt);
        points.push(self.goal.to_vec());
        WaypointSet::new(times, points)
    }

    /// The trajectory-optimization problem whose solution is the
    /// easy-to-track reference: waypoint position penalties, free heading at
    /// intermediate waypoints, full-state goal, terminal consistency between
    /// the state and reference blocks.
    pub fn ilqr_problem(
        &self,
        gains: &UnicycleGains,
        horizon: usize,
        dt: f64,
    ) -> IlqrProblem<crate::controllers::ClosedLoopUnicycle> {
        let mut targets = Vec::with_capacity(self.mids.len() + 1);
        for mid in &self.mids {
            let mut target = DVector::zeros(6);
            target[0] = mid.pos[0];
            target[1] = mid.pos[1];
            let mut weight = DMatrix::zeros(6, 6);
            weight[(0, 0)] = 1.0;
            weight[(1, 1)] = 1.0;
            targets.push(StageTarget {
                stage: mid.stage,
                target,
                weight,
            });
        }
        let mut goal_target = DVector::zeros(6);
        goal_target[0] = self.goal[0];
        goal_target[1] = self.goal[1];
        goal_target[2] = self.goal[2];
        let mut goal_weight = DMatrix::zeros(6, 6);
        for i in 0..3 {
            goal_weight[(i, i)] = 1.0;
        }
        targets.push(StageTarget {
            stage: horizon,
            target: goal_target,
            weight: goal_weight,
        });
        IlqrProblem {
            dynamics: crate::controllers::ClosedLoopUnicycle {
                gains: gains.clone(),
                dt,
            },
            horizon,
            x0: DVector::from_vec(vec![
                self.x0[0], self.x0[1], self.x0[2], self.x0[0], self.x0[1], self.x0[2],
            ]),
            input_weight: DMatrix::identity(3, 3) * 0.1,
            targets,
            terminal_equality: Some(BlockEquality::default()),
            angle_dims: vec![2, 5],
        }
    }

    /// Solve for the dynamically consistent reference and return it on the
    /// time grid. Errors if the solve does not converge.
    pub fn ilqr_reference(
        &self,
        gains: &UnicycleGains,
        horizon: usize,
        dt: f64,
        options: &IlqrOptions,
    ) -> Result<ReferenceTrajectory> {
        let problem = self.ilqr_problem(gains, horizon, dt);
        let from = DVector::from_row_slice(&self.x0);
        let to = DVector::from_row_slice(&self.goal);
        let init = straight_line_inputs(&from, &to, horizon, dt, &[2]);
        let solution = solve_ilqr(&problem, init, options)?;
        if !solution.converged {
            return Err(Error::SolverFailure {
                context: format!(
                    "reference solve did not converge (terminal violation {:.2e})",
                    solution.terminal_violation
                ),
            });
        }
        let points = solution
            .states
            .iter()
            .map(|s| vec![s[3], s[4], s[5]])
            .collect();
        ReferenceTrajectory::new(dt, points)
    }

    /// The hard-to-track baseline: a single global polynomial through the
    /// full-state waypoints, sampled on the time grid.
    pub fn polynomial_reference(&self, horizon: usize, dt: f64) -> Result<ReferenceTrajectory> {
        let wps = self.waypoint_set(horizon, dt)?;
        let poly = fit_interpolating_polynomial(&wps)?;
        ReferenceTrajectory::new(dt, poly.sample(horizon, dt)?)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnicycleDatasetConfig {
    /// Number of (easy, hard) reference pairs; each pair shares its task.
    pub pairs: usize,
    pub horizon: usize,
    pub dt: f64,
    pub seed: u64,
    pub gains: UnicycleGains,
    /// Failed solves are resampled up to this many times before the pair is
    /// skipped.
    pub max_retries: usize,
}

impl Default for UnicycleDatasetConfig {
    fn default() -> Self {
        Self {
            pairs: 500,
            horizon: 100,
            dt: 0.05,
            seed: 0,
            gains: UnicycleGains::default(),
            max_retries: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadrotorDatasetConfig {
    pub missions: usize,
    pub horizon: usize,
    pub dt: f64,
    pub seed: u64,
    pub gains: Se3Gains,
    pub n_waypoints: usize,
    pub poly_order: usize,
    /// Lissajous amplitude bounds for (x, y, z, yaw).
    pub amp_bounds: [f64; 4],
    pub period: f64,
}

impl Default for QuadrotorDatasetConfig {
    fn default() -> Self {
        Self {
            missions: 125,
            horizon: 300,
            dt: 0.01,
            seed: 0,
            gains: Se3Gains::default(),
            n_waypoints: 5,
            poly_order: 7,
            amp_bounds: [0.65, 0.55, 0.55, 0.6 * std::f64::consts::PI],
            period: 3.0,
        }
    }
}

/// Generated records plus bookkeeping about failures.
#[derive(Debug, Clone)]
pub struct DatasetBuild {
    pub records: Vec<RolloutRecord>,
    pub skipped: usize,
    pub retries: usize,
}

fn unicycle_pair(
    config: &UnicycleDatasetConfig,
    index: u64,
) -> (Option<(RolloutRecord, RolloutRecord)>, usize) {
    let seed = derive_seed(config.seed, index);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let gains_hash = PolicyGains::Unicycle(config.gains.clone()).fingerprint();
    let options = IlqrOptions::default();
    let mut retries = 0;
    for _ in 0..=config.max_retries {
        let instance = sample_unicycle_instance(&mut rng, 1, config.horizon);
        let x0 = UnicycleState::new(instance.x0[0], instance.x0[1], instance.x0[2]);
        let built = instance
            .ilqr_reference(&config.gains, config.horizon, config.dt, &options)
            .and_then(|easy_ref| {
                let hard_ref = instance.polynomial_reference(config.horizon, config.dt)?;
                let (xs_e, us_e) = rollout_unicycle(&x0, &easy_ref, &config.gains)?;
                let (xs_h, us_h) = rollout_unicycle(&x0, &hard_ref, &config.gains)?;
                Ok((easy_ref, hard_ref, xs_e, us_e, xs_h, us_h))
            });
        match built {
            Ok((easy_ref, hard_ref, xs_e, us_e, xs_h, us_h)) => {
                let to_rows_x = |xs: Vec<UnicycleState>| -> Vec<Vec<f64>> {
                    xs.iter().map(|s| vec![s.x, s.y, s.theta]).collect()
                };
                let to_rows_u = |us: Vec<crate::dynamics::UnicycleInput>| -> Vec<Vec<f64>> {
                    us.iter().map(|u| vec![u.v, u.omega]).collect()
                };
                let easy = RolloutRecord {
                    version: RECORD_VERSION,
                    system: SystemTag::Unicycle,
                    kind: RolloutKind::Ilqr,
                    seed,
                    dt: config.dt,
                    x: to_rows_x(xs_e),
                    u: to_rows_u(us_e),
                    r: easy_ref.points,
                    gains_hash: gains_hash.clone(),
                };
                let hard = RolloutRecord {
                    version: RECORD_VERSION,
                    system: SystemTag::Unicycle,
                    kind: RolloutKind::Polynomial,
                    seed,
                    dt: config.dt,
                    x: to_rows_x(xs_h),
                    u: to_rows_u(us_h),
                    r: hard_ref.points,
                    gains_hash,
                };
                return (Some((easy, hard)), retries);
            }
            Err(e) => {
                retries += 1;
                log::warn!("unicycle pair {index} attempt failed: {e}");
            }
        }
    }
    (None, retries)
}

/// Generate paired easy/hard unicycle rollouts: for each sampled task, a
/// trajectory-optimized reference and an interpolating-polynomial reference
/// through the same waypoints, both rolled out in closed loop from the same
/// start state.
pub fn generate_unicycle_dataset(config: &UnicycleDatasetConfig) -> Result<DatasetBuild> {
    if config.pairs == 0 || config.horizon < 2 || config.dt <= 0.0 {
        return Err(Error::InvalidConfig {
            message: "unicycle dataset needs pairs >= 1, horizon >= 2, dt > 0".into(),
        });
    }
    let indices: Vec<u64> = (0..config.pairs as u64).collect();
    #[cfg(feature = "parallel")]
    let results: Vec<_> = indices
        .par_iter()
        .map(|&i| unicycle_pair(config, i))
        .collect();
    #[cfg(not(feature = "parallel"))]
    let results: Vec<_> = indices.iter().map(|&i| unicycle_pair(config, i)).collect();

    let mut records = Vec::with_capacity(2 * config.pairs);
    let mut skipped = 0;
    let mut retries = 0;
    for (pair, tries) in results {
        retries += tries;
        match pair {
            Some((easy, hard)) => {
                records.push(easy);
                records.push(hard);
            }
            None => skipped += 1,
        }
    }
    Ok(DatasetBuild {
        records,
        skipped,
        retries,
    })
}

fn quadrotor_mission(
    config: &QuadrotorDatasetConfig,
    index: u64,
) -> Result<RolloutRecord> {
    let seed = derive_seed(config.seed, index);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let amps = LissajousAmps {
        x: rng.random_range(-config.amp_bounds[0]..config.amp_bounds[0]),
        y: rng.random_range(-config.amp_bounds[1]..config.amp_bounds[1]),
        z: rng.random_range(-config.amp_bounds[2]..config.amp_bounds[2]),
        yaw: rng.random_range(-config.amp_bounds[3]..config.amp_bounds[3]),
    };
    mission_record(config, amps, seed)
}

fn mission_record(
    config: &QuadrotorDatasetConfig,
    amps: LissajousAmps,
    seed: u64,
) -> Result<RolloutRecord> {
    let steps_per_second = 1.0 / config.dt;
    let wps = sample_lissajous(&amps, config.period, config.n_waypoints, steps_per_second)?;
    let poly = crate::trajgen::fit_min_jerk(&wps, config.poly_order)?;
    let commands: Vec<_> = (0..=config.horizon)
        .map(|i| flat_to_command(&poly, i as f64 * config.dt))
        .collect::<Result<_>>()?;
    let first = &commands[0];
    let x0 = QuadrotorState::hover_consistent(first.pos, Vector3::zeros(), first.yaw);
    let (xs, us) = rollout_quadrotor(&x0, &commands, config.dt, &config.gains)?;
    Ok(RolloutRecord {
        version: RECORD_VERSION,
        system: SystemTag::Quadrotor,
        kind: RolloutKind::Lissajous,
        seed,
        dt: config.dt,
        x: xs.iter().map(|s| s.to_row()).collect(),
        u: us
            .iter()
            .map(|u| vec![u.thrust, u.omega.x, u.omega.y, u.omega.z])
            .collect(),
        r: commands.iter().map(|c| c.flat_outputs().to_vec()).collect(),
        gains_hash: PolicyGains::Quadrotor(config.gains.clone()).fingerprint(),
    })
}

/// Generate quadrotor rollouts tracking minimum-jerk fits of sampled
/// Lissajous waypoint sets, starting from hover at the first reference point.
pub fn generate_quadrotor_dataset(config: &QuadrotorDatasetConfig) -> Result<DatasetBuild> {
    if config.missions == 0 || config.horizon < 2 || config.dt <= 0.0 {
        return Err(Error::InvalidConfig {
            message: "quadrotor dataset needs missions >= 1, horizon >= 2, dt > 0".into(),
        });
    }
    let indices: Vec<u64> = (0..config.missions as u64).collect();
    #[cfg(feature = "parallel")]
    let results: Vec<_> = indices
        .par_iter()
        .map(|&i| quadrotor_mission(config, i))
        .collect();
    #[cfg(not(feature = "parallel"))]
    let results: Vec<_> = indices
        .iter()
        .map(|&i| quadrotor_mission(config, i))
        .collect();

    let mut records = Vec::with_capacity(config.missions);
    let mut skipped = 0;
    for res in results {
        match res {
            Ok(rec) => records.push(rec),
            Err(e) => {
                skipped += 1;
                log::warn!("quadrotor mission skipped: {e}");
            }
        }
    }
    Ok(DatasetBuild {
        records,
        skipped,
        retries: 0,
    })
}

/// One supervised sample: flattened (initial state, reference) and its
/// tracking-cost label.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSample {
    pub mu: DVector<f64>,
    pub y: f64,
}

/// Initial-state block of the network input. Unicycle: (x, y, theta).
/// Quadrotor: (p, yaw, v, yaw-rate=0) — the state carries no yaw rate, so
/// that slot is identically zero.
pub fn mu_prefix(state: &SystemState) -> Vec<f64> {
    match state {
        SystemState::Unicycle(s) => vec![s.x, s.y, s.theta],
        SystemState::Quadrotor(s) => {
            let mut prefix = Vec::with_capacity(8);
            prefix.extend_from_slice(s.pos.as_slice());
            prefix.push(s.yaw());
            prefix.extend_from_slice(s.vel.as_slice());
            prefix.push(0.0);
            prefix
        }
    }
}

/// Length of the initial-state block for a system.
pub fn mu_prefix_len(tag: SystemTag) -> usize {
    match tag {
        SystemTag::Unicycle => 3,
        SystemTag::Quadrotor => 8,
    }
}

/// Network input for a record: the initial flat state and derivatives
/// followed by the full flattened reference (time-major rows).
pub fn build_mu(record: &RolloutRecord) -> Result<DVector<f64>> {
    let state = SystemState::from_row(record.system, &record.x[0])?;
    let mut mu = mu_prefix(&state);
    for row in &record.r {
        mu.extend_from_slice(row);
    }
    Ok(DVector::from_vec(mu))
}

/// Compute tracking-cost labels for every record at the given weight.
pub fn label_dataset(
    records: &[RolloutRecord],
    rho: f64,
    d: &DMatrix<f64>,
) -> Result<Vec<TrainingSample>> {
    records
        .iter()
        .map(|rec| {
            let y = rec.tracking_cost(rho, d)?;
            if !(y.is_finite() && y >= 0.0) {
                return Err(Error::NonFinite {
                    context: "tracking cost label",
                });
            }
            Ok(TrainingSample {
                mu: build_mu(rec)?,
                y,
            })
        })
        .collect()
}

/// Write records as JSON-Lines (one record per line).
pub fn save_dataset<P: AsRef<Path>>(records: &[RolloutRecord], path: P) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut writer = BufWriter::new(file);
    for rec in records {
        serde_json::to_writer(&mut writer, rec)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

/// Read and validate a JSON-Lines dataset.
pub fn load_dataset<P: AsRef<Path>>(path: P) -> Result<Vec<RolloutRecord>> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RolloutRecord = serde_json::from_str(&line).map_err(|e| Error::Format {
            message: format!("record on line {}: {e}", i + 1),
        })?;
        rec.validate()?;
        records.push(rec);
    }
    Ok(records)
}

/// Sample evaluation tasks (1 or 2 intermediate waypoints each).
pub fn sample_test_instances(
    n: usize,
    horizon: usize,
    master_seed: u64,
) -> Vec<UnicycleInstance> {
    (0..n as u64)
        .map(|i| {
            let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(master_seed, i));
            let n_mids = rng.random_range(1..=2);
            sample_unicycle_instance(&mut rng, n_mids, horizon)
        })
        .collect()
}
