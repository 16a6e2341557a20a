//! The five pipeline commands: dataset generation, per-weight training,
//! one-off planning, closed-loop benchmark evaluation, and the runtime
//! comparison against the trajectory-optimization baseline.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use layertrack::controllers::{PolicyGains, Se3Gains, UnicycleGains};
use layertrack::dataset::{
    default_input_cost, derive_seed, generate_quadrotor_dataset, generate_unicycle_dataset,
    label_dataset, load_dataset, sample_test_instances, save_dataset, QuadrotorDatasetConfig,
    UnicycleDatasetConfig, UnicycleInstance,
};
use layertrack::dynamics::{QuadrotorState, ReferenceTrajectory, SystemState, SystemTag, UnicycleState};
use layertrack::error::{Error, Result};
use layertrack::ilqr::IlqrOptions;
use layertrack::learner::{moving_average_decreased, train, MlpModel};
use layertrack::planner::{
    plan_quadrotor, plan_unicycle, quadrotor_rollout_cost, reference_objective,
    unicycle_rollout_cost, PlanReference, PlanResult, PlanSpec,
};
use layertrack::trajgen::{
    fit_interpolating_polynomial, sample_lissajous, LissajousAmps, PiecewisePolynomial,
    WaypointSet,
};
use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::config::{MissionFile, ResolvedConfig};
use crate::report::{BenchReport, InstanceRow, TimingReport, TimingRow};

/// Held-out evaluation tasks draw from a seed stream disjoint from the
/// training data (which derives per-record seeds directly from the config
/// seed).
const TEST_MASTER_SALT: u64 = 0x9E3779B97F4A7C15;
/// The runtime benchmark uses a third stream.
const BENCH_MASTER_SALT: u64 = 0x517CC1B727220A95;

fn unicycle_gains(gains: &PolicyGains) -> Result<UnicycleGains> {
    match gains {
        PolicyGains::Unicycle(g) => Ok(g.clone()),
        _ => Err(Error::InvalidConfig {
            message: "config resolved to quadrotor gains for a unicycle run".into(),
        }),
    }
}

fn quadrotor_gains(gains: &PolicyGains) -> Result<Se3Gains> {
    match gains {
        PolicyGains::Quadrotor(g) => Ok(g.clone()),
        _ => Err(Error::InvalidConfig {
            message: "config resolved to unicycle gains for a quadrotor run".into(),
        }),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GenerateSummary {
    pub system: SystemTag,
    pub records: usize,
    pub skipped: usize,
    pub retries: usize,
    pub seed: u64,
    pub horizon: usize,
    pub dt: f64,
    pub gains_hash: String,
    pub dataset_path: PathBuf,
}

/// Generate the training dataset and write it (plus metadata and the
/// resolved-config snapshot) into the output directory.
pub fn cmd_generate_data(cfg: &ResolvedConfig, out: &Path) -> Result<GenerateSummary> {
    cfg.write_snapshot(out)?;
    let build = match cfg.system {
        SystemTag::Unicycle => generate_unicycle_dataset(&UnicycleDatasetConfig {
            pairs: cfg.train_size,
            horizon: cfg.horizon,
            dt: cfg.dt,
            seed: cfg.seed,
            gains: unicycle_gains(&cfg.gains)?,
            max_retries: cfg.max_retries,
        })?,
        SystemTag::Quadrotor => generate_quadrotor_dataset(&QuadrotorDatasetConfig {
            missions: cfg.train_size,
            horizon: cfg.horizon,
            dt: cfg.dt,
            seed: cfg.seed,
            gains: quadrotor_gains(&cfg.gains)?,
            ..QuadrotorDatasetConfig::default()
        })?,
    };
    let dataset_path = cfg.dataset_path(out);
    save_dataset(&build.records, &dataset_path)?;
    let summary = GenerateSummary {
        system: cfg.system,
        records: build.records.len(),
        skipped: build.skipped,
        retries: build.retries,
        seed: cfg.seed,
        horizon: cfg.horizon,
        dt: cfg.dt,
        gains_hash: cfg.gains.fingerprint(),
        dataset_path: dataset_path.clone(),
    };
    let meta_path = out.join(format!("dataset-{}.meta.json", cfg.system.name()));
    let file = std::fs::File::create(meta_path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), &summary)?;
    log::info!(
        "wrote {} records ({} skipped, {} retries) to {}",
        summary.records,
        summary.skipped,
        summary.retries,
        dataset_path.display()
    );
    Ok(summary)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainArtifacts {
    pub rho: f64,
    pub model_path: PathBuf,
    pub log_path: PathBuf,
    pub final_train_loss: f64,
    pub final_val_loss: f64,
    /// Whether the 20-epoch moving average of the training loss decreased
    /// (soft progress indicator, reported only).
    pub loss_trend_decreased: bool,
}

/// Train one penalty network per tracking weight from a JSONL dataset.
pub fn cmd_train(
    cfg: &ResolvedConfig,
    dataset_path: &Path,
    rhos: &[f64],
    out: &Path,
) -> Result<Vec<TrainArtifacts>> {
    cfg.write_snapshot(out)?;
    let records = load_dataset(dataset_path)?;
    if records.is_empty() {
        return Err(Error::InvalidConfig {
            message: format!("dataset {} is empty", dataset_path.display()),
        });
    }
    for rec in &records {
        if rec.system != cfg.system {
            return Err(Error::InvalidConfig {
                message: format!(
                    "dataset contains {} records but the config targets {}",
                    rec.system.name(),
                    cfg.system.name()
                ),
            });
        }
    }
    let gains_hash = records[0].gains_hash.clone();
    if records.iter().any(|r| r.gains_hash != gains_hash) {
        return Err(Error::InvalidConfig {
            message: "dataset mixes rollouts from different controller gains; the penalty is \
                      policy-dependent"
                .into(),
        });
    }
    if gains_hash != cfg.gains.fingerprint() {
        log::warn!(
            "dataset was rolled out under gains {} but the config resolves to {}; training \
             against the dataset's controller",
            gains_hash,
            cfg.gains.fingerprint()
        );
    }

    let d = default_input_cost(cfg.system);
    let mut artifacts = Vec::with_capacity(rhos.len());
    for &rho in rhos {
        let samples = label_dataset(&records, rho, &d)?;
        let started = Instant::now();
        let outcome = train(&samples, cfg.system, rho, &gains_hash, &cfg.train)?;
        let trend = moving_average_decreased(&outcome.epoch_losses, 20);
        log::info!(
            "rho {rho}: {} epochs in {:.1}s, final train loss {:.4e}, val loss {:.4e}, \
             20-epoch trend {}",
            outcome.epoch_losses.len(),
            started.elapsed().as_secs_f64(),
            outcome.epoch_losses.last().unwrap(),
            outcome.val_loss,
            if trend { "decreasing" } else { "not decreasing" }
        );

        let model_path = cfg.model_path(out, rho);
        outcome.model.save(&model_path)?;
        let log_path = cfg.training_log_path(out, rho);
        let mut f = std::fs::File::create(&log_path)?;
        writeln!(f, "epoch,train_loss,val_loss")?;
        for (i, (tr, va)) in outcome
            .epoch_losses
            .iter()
            .zip(outcome.val_losses.iter())
            .enumerate()
        {
            writeln!(f, "{i},{tr},{va}")?;
        }
        // Probe: the first sample's raw network output, for load-check
        // round trips.
        let phi = outcome.model.forward(&samples[0].mu)?;
        let probe_path = out.join(format!(
            "model-{}-rho{rho}.probe.json",
            cfg.system.name()
        ));
        let probe = serde_json::json!({ "sample_index": 0, "phi": phi });
        std::fs::write(&probe_path, serde_json::to_string(&probe)?)?;

        artifacts.push(TrainArtifacts {
            rho,
            model_path,
            log_path,
            final_train_loss: *outcome.epoch_losses.last().unwrap(),
            final_val_loss: outcome.val_loss,
            loss_trend_decreased: trend,
        });
    }
    Ok(artifacts)
}

/// Serialized plan: the reference in both sampled and (for the quadrotor)
/// polynomial form, with the final objective for re-evaluation checks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlanFile {
    pub system: SystemTag,
    pub horizon: usize,
    pub dt: f64,
    pub waypoint_weight: f64,
    pub objective: f64,
    pub predicted_penalty: f64,
    pub converged: bool,
    pub iterations: usize,
    pub reference: ReferenceTrajectory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub poly: Option<PiecewisePolynomial>,
}

#[derive(Debug, Clone)]
pub struct PlanArtifacts {
    pub plan: PlanFile,
    pub plan_path: PathBuf,
    pub trace_path: PathBuf,
}

fn plan_for_mission(model: &MlpModel, mission: &MissionFile) -> Result<PlanResult> {
    let mut spec = PlanSpec::new(
        mission.initial_state()?,
        mission.waypoints.clone(),
        mission.horizon,
        mission.dt,
        model,
    );
    spec.waypoint_weight = mission.waypoint_weight;
    match mission.system {
        SystemTag::Unicycle => plan_unicycle(&spec),
        SystemTag::Quadrotor => plan_quadrotor(&spec),
    }
}

/// Plan one mission with a trained model; writes the plan JSON and the
/// objective-trace CSV.
pub fn cmd_plan(model_path: &Path, mission_path: &Path, out: &Path) -> Result<PlanArtifacts> {
    let model = MlpModel::load(model_path)?;
    let mission = MissionFile::from_path(mission_path)?;
    if mission.system != model.system {
        return Err(Error::InvalidConfig {
            message: format!(
                "mission is for {} but the model was trained for {}",
                mission.system.name(),
                model.system.name()
            ),
        });
    }
    let result = plan_for_mission(&model, &mission)?;
    let (reference, poly) = match result.reference {
        PlanReference::Unicycle(r) => (r, None),
        PlanReference::Quadrotor { poly, sampled } => (sampled, Some(poly)),
    };
    let plan = PlanFile {
        system: mission.system,
        horizon: mission.horizon,
        dt: mission.dt,
        waypoint_weight: mission.waypoint_weight,
        objective: *result.objective_trace.last().unwrap(),
        predicted_penalty: result.predicted_penalty,
        converged: result.converged,
        iterations: result.iterations,
        reference,
        poly,
    };
    std::fs::create_dir_all(out)?;
    let plan_path = out.join(format!("plan-{}.json", mission.system.name()));
    let file = std::fs::File::create(&plan_path)?;
    serde_json::to_writer(std::io::BufWriter::new(file), &plan)?;
    let trace_path = out.join("plan-trace.csv");
    let mut f = std::fs::File::create(&trace_path)?;
    writeln!(f, "iteration,objective")?;
    for (i, obj) in result.objective_trace.iter().enumerate() {
        writeln!(f, "{i},{obj}")?;
    }
    Ok(PlanArtifacts {
        plan,
        plan_path,
        trace_path,
    })
}

/// Recompute a stored plan's objective from its serialized reference; equals
/// the recorded objective when the file is intact.
pub fn evaluate_plan_file(
    model: &MlpModel,
    mission: &MissionFile,
    plan: &PlanFile,
) -> Result<f64> {
    reference_objective(
        model,
        &mission.initial_state()?,
        &mission.waypoints,
        mission.waypoint_weight,
        &plan.reference,
    )
}

/// Deterministic held-out quadrotor missions, drawn from the same amplitude
/// box as the training curves but a disjoint seed stream.
pub fn sample_test_missions(cfg: &ResolvedConfig, n: usize) -> Result<Vec<WaypointSet>> {
    let defaults = QuadrotorDatasetConfig::default();
    let master = cfg.seed ^ TEST_MASTER_SALT;
    (0..n as u64)
        .map(|i| {
            let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(master, i));
            let b = defaults.amp_bounds;
            let amps = LissajousAmps {
                x: rng.random_range(-b[0]..b[0]),
                y: rng.random_range(-b[1]..b[1]),
                z: rng.random_range(-b[2]..b[2]),
                yaw: rng.random_range(-b[3]..b[3]),
            };
            sample_lissajous(
                &amps,
                cfg.horizon as f64 * cfg.dt,
                defaults.n_waypoints,
                1.0 / cfg.dt,
            )
        })
        .collect()
}

/// Deterministic held-out unicycle tasks on a stream disjoint from training.
pub fn sample_test_tasks(cfg: &ResolvedConfig, n: usize) -> Vec<UnicycleInstance> {
    sample_test_instances(n, cfg.horizon, cfg.seed ^ TEST_MASTER_SALT)
}

fn instance_context<T>(result: Result<T>, rho: f64, index: usize) -> Result<T> {
    result.map_err(|e| Error::SolverFailure {
        context: format!("rho {rho}, test instance {index}: {e}"),
    })
}

/// Evaluate trained models on held-out tasks: plan, roll out the true
/// closed-loop system, and compare against the baseline reference on each
/// task. Baselines: the interpolating polynomial through the task's
/// waypoints for both systems.
pub fn cmd_evaluate(cfg: &ResolvedConfig, out: &Path, rhos: &[f64]) -> Result<BenchReport> {
    cfg.write_snapshot(out)?;
    let d = default_input_cost(cfg.system);
    let mut rows: Vec<InstanceRow> = Vec::new();
    match cfg.system {
        SystemTag::Unicycle => {
            let gains = unicycle_gains(&cfg.gains)?;
            let tasks = sample_test_tasks(cfg, cfg.test_size);
            for &rho in rhos {
                let model = MlpModel::load(cfg.model_path(out, rho))?;
                let results: Vec<Result<InstanceRow>> = tasks
                    .par_iter()
                    .enumerate()
                    .map(|(i, task)| {
                        evaluate_unicycle_task(cfg, &model, &gains, &d, task, rho, i)
                    })
                    .collect();
                for (i, r) in results.into_iter().enumerate() {
                    rows.push(instance_context(r, rho, i)?);
                }
            }
        }
        SystemTag::Quadrotor => {
            let gains = quadrotor_gains(&cfg.gains)?;
            let missions = sample_test_missions(cfg, cfg.test_size)?;
            for &rho in rhos {
                let model = MlpModel::load(cfg.model_path(out, rho))?;
                let results: Vec<Result<InstanceRow>> = missions
                    .par_iter()
                    .enumerate()
                    .map(|(i, wps)| {
                        evaluate_quadrotor_mission(cfg, &model, &gains, &d, wps, rho, i)
                    })
                    .collect();
                for (i, r) in results.into_iter().enumerate() {
                    rows.push(instance_context(r, rho, i)?);
                }
            }
        }
    }
    let report = BenchReport::from_rows(rows)?;
    report.write_csv(out)?;
    for s in &report.summaries {
        log::info!(
            "rho {}: relative cost mean {:.3}, median {:.3} over {} tasks",
            s.rho,
            s.mean,
            s.median,
            s.count
        );
    }
    Ok(report)
}

fn evaluate_unicycle_task(
    cfg: &ResolvedConfig,
    model: &MlpModel,
    gains: &UnicycleGains,
    d: &nalgebra::DMatrix<f64>,
    task: &UnicycleInstance,
    rho: f64,
    index: usize,
) -> Result<InstanceRow> {
    let x0 = UnicycleState::new(task.x0[0], task.x0[1], task.x0[2]);
    let baseline = task.polynomial_reference(cfg.horizon, cfg.dt)?;
    let baseline_cost = unicycle_rollout_cost(&x0, &baseline, gains, rho, d)?;

    let wps = task.waypoint_set(cfg.horizon, cfg.dt)?;
    let mut spec = PlanSpec::new(
        SystemState::Unicycle(x0),
        wps,
        cfg.horizon,
        cfg.dt,
        model,
    );
    spec.waypoint_weight = cfg.waypoint_weight;
    spec.options.max_iterations = cfg.planner_iterations;
    let started = Instant::now();
    let plan = plan_unicycle(&spec)?;
    let plan_seconds = started.elapsed().as_secs_f64();
    let plan_cost = unicycle_rollout_cost(&x0, plan.reference.sampled(), gains, rho, d)?;
    Ok(InstanceRow {
        rho,
        instance: index,
        plan_cost,
        baseline_cost,
        relative_cost: plan_cost / baseline_cost,
        plan_seconds,
        iterations: plan.iterations,
        converged: plan.converged,
    })
}

fn evaluate_quadrotor_mission(
    cfg: &ResolvedConfig,
    model: &MlpModel,
    gains: &Se3Gains,
    d: &nalgebra::DMatrix<f64>,
    wps: &WaypointSet,
    rho: f64,
    index: usize,
) -> Result<InstanceRow> {
    let first = &wps.points[0];
    let x0 = QuadrotorState::hover_consistent(
        Vector3::new(first[0], first[1], first[2]),
        Vector3::zeros(),
        first[3],
    );
    // No-smoothness baseline: one global interpolating polynomial.
    let baseline = fit_interpolating_polynomial(wps)?;
    let (baseline_cost, _) =
        quadrotor_rollout_cost(&x0, &baseline, cfg.horizon, cfg.dt, gains, rho, d)?;

    let mut spec = PlanSpec::new(
        SystemState::Quadrotor(x0.clone()),
        wps.clone(),
        cfg.horizon,
        cfg.dt,
        model,
    );
    spec.waypoint_weight = cfg.waypoint_weight;
    spec.options.max_iterations = cfg.planner_iterations;
    let started = Instant::now();
    let plan = plan_quadrotor(&spec)?;
    let plan_seconds = started.elapsed().as_secs_f64();
    let poly = match &plan.reference {
        PlanReference::Quadrotor { poly, .. } => poly,
        _ => unreachable!("quadrotor plan"),
    };
    let (plan_cost, _) = quadrotor_rollout_cost(&x0, poly, cfg.horizon, cfg.dt, gains, rho, d)?;
    Ok(InstanceRow {
        rho,
        instance: index,
        plan_cost,
        baseline_cost,
        relative_cost: plan_cost / baseline_cost,
        plan_seconds,
        iterations: plan.iterations,
        converged: plan.converged,
    })
}

/// Wall-clock comparison: learned-penalty planning versus solving the
/// trajectory-optimization reference on matched unicycle tasks.
pub fn cmd_bench_runtime(cfg: &ResolvedConfig, out: &Path, n_instances: usize) -> Result<TimingReport> {
    if cfg.system != SystemTag::Unicycle {
        return Err(Error::InvalidConfig {
            message: "the runtime benchmark compares the unicycle planner with its \
                      trajectory-optimization baseline; use a unicycle config"
                .into(),
        });
    }
    cfg.write_snapshot(out)?;
    let gains = unicycle_gains(&cfg.gains)?;
    // Middle tracking weight of the configured list.
    let rho = cfg.rhos[cfg.rhos.len() / 2];
    let model = MlpModel::load(cfg.model_path(out, rho))?;
    let options = IlqrOptions::default();

    let mut rows = Vec::with_capacity(2 * n_instances);
    let mut measured = 0usize;
    let mut index = 0u64;
    // Tasks where the trajectory optimizer fails to converge are skipped in
    // deterministic order so both methods time the same instances.
    while measured < n_instances && index < (4 * n_instances) as u64 {
        let master = cfg.seed ^ BENCH_MASTER_SALT;
        let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(master, index));
        let n_mids = rng.random_range(1..=2);
        let task =
            layertrack::dataset::sample_unicycle_instance(&mut rng, n_mids, cfg.horizon);
        index += 1;

        let started = Instant::now();
        let solved = task.ilqr_reference(&gains, cfg.horizon, cfg.dt, &options);
        let ilqr_seconds = started.elapsed().as_secs_f64();
        if solved.is_err() {
            log::warn!("bench task {index}: reference solve failed; skipping");
            continue;
        }

        let x0 = SystemState::Unicycle(UnicycleState::new(task.x0[0], task.x0[1], task.x0[2]));
        let wps = task.waypoint_set(cfg.horizon, cfg.dt)?;
        let mut spec = PlanSpec::new(x0, wps, cfg.horizon, cfg.dt, &model);
        spec.waypoint_weight = cfg.waypoint_weight;
        spec.options.max_iterations = cfg.planner_iterations;
        let started = Instant::now();
        let _plan = plan_unicycle(&spec)?;
        let plan_seconds = started.elapsed().as_secs_f64();

        rows.push(TimingRow {
            method: "planner".into(),
            instance: measured,
            seconds: plan_seconds,
        });
        rows.push(TimingRow {
            method: "ilqr".into(),
            instance: measured,
            seconds: ilqr_seconds,
        });
        measured += 1;
    }
    if measured < n_instances {
        return Err(Error::SolverFailure {
            context: format!("only {measured}/{n_instances} benchmark tasks solved"),
        });
    }
    let report = TimingReport::from_rows(rows)?;
    report.write_csv(out)?;
    let planner = report.mean_for("planner").unwrap_or(f64::NAN);
    let ilqr = report.mean_for("ilqr").unwrap_or(f64::NAN);
    log::info!(
        "planner {:.4}s vs trajectory optimization {:.4}s mean wall-clock ({})",
        planner,
        ilqr,
        if planner < ilqr {
            "planner faster"
        } else {
            "planner not faster"
        }
    );
    Ok(report)
}
