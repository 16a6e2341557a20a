//! Reference planning with a learned tracking penalty. Both planners
//! minimize a soft waypoint-attraction term plus the network's penalty over
//! the reference; the unicycle optimizes the raw reference samples by
//! projected gradient descent, the quadrotor optimizes piecewise-polynomial
//! coefficients with a limited-memory quasi-Newton method.

use nalgebra::{DMatrix, DVector};
use std::collections::VecDeque;

use crate::controllers::{
    flat_to_command, rollout_quadrotor, rollout_unicycle, PolicyGains, Se3Gains, UnicycleGains,
};
use crate::dataset::{mu_prefix, mu_prefix_len, tracking_cost};
use crate::dynamics::{
    wrap_angle, QuadrotorState, ReferenceTrajectory, SystemState, SystemTag, UnicycleState,
};
use crate::error::{Error, Result};
use crate::learner::MlpModel;
use crate::trajgen::{
    basis_matrix, fit_interpolating_polynomial, fit_min_jerk, PiecewisePolynomial, WaypointSet,
};

/// Optimizer settings shared by both planners.
#[derive(Debug, Clone)]
pub struct PlanOptions {
    /// Iteration cap: gradient steps (unicycle) or quasi-Newton steps
    /// (quadrotor).
    pub max_iterations: usize,
    /// Step halvings per line search before giving up.
    pub max_halvings: usize,
    /// Relative objective decrease below which the plan counts as converged.
    pub rel_tol: f64,
    /// History length of the quasi-Newton method.
    pub memory: usize,
    /// Polynomial order for the quadrotor coefficient parametrization.
    pub poly_order: usize,
    /// Degree of the polynomial family the unicycle search is constrained
    /// to. Every gradient step is projected onto the span of degree-≤k
    /// polynomials sampled on the grid (intersected with r_0 = x0), so the
    /// planner can only move through references as smooth as the ones the
    /// penalty model was trained on; unconstrained per-sample descent
    /// otherwise drifts into jagged references whose predicted cost is
    /// extrapolated noise. Lifted automatically when the waypoint
    /// interpolant needs a higher degree.
    pub subspace_degree: usize,
}

impl Default for PlanOptions {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            max_halvings: 20,
            rel_tol: 1e-6,
            memory: 10,
            poly_order: 7,
            subspace_degree: 4,
        }
    }
}

/// A single planning task: start state, waypoints (first one at t = 0), the
/// penalty model, and the time grid the reference lives on.
#[derive(Debug, Clone)]
pub struct PlanSpec<'a> {
    pub x0: SystemState,
    pub waypoints: WaypointSet,
    pub horizon: usize,
    pub dt: f64,
    pub model: &'a MlpModel,
    /// Weight on the squared waypoint-attraction term.
    pub waypoint_weight: f64,
    pub options: PlanOptions,
}

impl<'a> PlanSpec<'a> {
    pub fn new(
        x0: SystemState,
        waypoints: WaypointSet,
        horizon: usize,
        dt: f64,
        model: &'a MlpModel,
    ) -> Self {
        let mut options = PlanOptions::default();
        // The quasi-Newton coefficient search takes smaller, better-scaled
        // steps than first-order descent and earns a larger default budget.
        if matches!(x0, SystemState::Quadrotor(_)) {
            options.max_iterations = 100;
        }
        Self {
            x0,
            waypoints,
            horizon,
            dt,
            model,
            waypoint_weight: 1.0,
            options,
        }
    }

    fn validate(&self) -> Result<()> {
        let tag = self.x0.tag();
        if self.model.system != tag {
            return Err(Error::InvalidConfig {
                message: format!(
                    "penalty model was trained for {} but the plan starts a {} state",
                    self.model.system.name(),
                    tag.name()
                ),
            });
        }
        if self.horizon == 0 || self.dt <= 0.0 {
            return Err(Error::InvalidConfig {
                message: "plan needs horizon >= 1 and dt > 0".into(),
            });
        }
        let ref_dim = tag.reference_dim();
        if self.waypoints.dim() != ref_dim {
            return Err(Error::DimensionMismatch {
                context: "plan waypoint dimension",
                expected: ref_dim,
                got: self.waypoints.dim(),
            });
        }
        let expected = mu_prefix_len(tag) + ref_dim * (self.horizon + 1);
        if self.model.input_dim() != expected {
            return Err(Error::DimensionMismatch {
                context: "penalty model input",
                expected,
                got: self.model.input_dim(),
            });
        }
        if self.waypoint_weight < 0.0 {
            return Err(Error::InvalidConfig {
                message: "waypoint weight must be nonnegative".into(),
            });
        }
        Ok(())
    }

    /// Warn when the model was trained against a different tracking
    /// controller than the one that will execute the plan; the penalty is
    /// policy-dependent, so the prediction would be systematically off.
    pub fn check_executing_gains(&self, gains: &PolicyGains) {
        if self.model.gains_hash != gains.fingerprint() {
            log::warn!(
                "penalty model was trained under gains {} but the executing controller hashes \
                 to {}; predictions are policy-dependent",
                self.model.gains_hash,
                gains.fingerprint()
            );
        }
    }
}

/// The optimized reference in a system-appropriate form.
#[derive(Debug, Clone)]
pub enum PlanReference {
    Unicycle(ReferenceTrajectory),
    Quadrotor {
        poly: PiecewisePolynomial,
        sampled: ReferenceTrajectory,
    },
}

impl PlanReference {
    pub fn sampled(&self) -> &ReferenceTrajectory {
        match self {
            PlanReference::Unicycle(r) => r,
            PlanReference::Quadrotor { sampled, .. } => sampled,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlanResult {
    pub reference: PlanReference,
    /// Objective value at the start and after every accepted step;
    /// nonincreasing by the line-search contract.
    pub objective_trace: Vec<f64>,
    /// Penalty term of the final reference.
    pub predicted_penalty: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Grid stage for each waypoint time (nearest step).
fn waypoint_stages(wps: &WaypointSet, dt: f64, horizon: usize) -> Result<Vec<usize>> {
    wps.times
        .iter()
        .map(|&t| {
            let stage = (t / dt).round() as i64;
            if stage < 0 || stage as usize > horizon {
                return Err(Error::InvalidConfig {
                    message: format!("waypoint at t = {t} falls outside the plan horizon"),
                });
            }
            Ok(stage as usize)
        })
        .collect()
}

fn assemble_mu(prefix: &[f64], r_flat: &DVector<f64>) -> DVector<f64> {
    let mut mu = Vec::with_capacity(prefix.len() + r_flat.len());
    mu.extend_from_slice(prefix);
    mu.extend_from_slice(r_flat.as_slice());
    DVector::from_vec(mu)
}

/// Squared waypoint attraction: weight * sum over waypoints of the squared
/// reference error at the waypoint's stage. The unicycle heading component
/// is compared with angle wrapping.
fn waypoint_term(
    tag: SystemTag,
    r_flat: &DVector<f64>,
    stages: &[usize],
    wps: &WaypointSet,
    weight: f64,
) -> f64 {
    let dim = tag.reference_dim();
    let mut acc = 0.0;
    for (k, &stage) in stages.iter().enumerate() {
        for d in 0..dim {
            let mut diff = r_flat[stage * dim + d] - wps.points[k][d];
            if tag == SystemTag::Unicycle && d == 2 {
                diff = wrap_angle(diff);
            }
            acc += diff * diff;
        }
    }
    weight * acc
}

/// Gradient of [`waypoint_term`] with respect to the flattened reference.
fn waypoint_term_gradient(
    tag: SystemTag,
    r_flat: &DVector<f64>,
    stages: &[usize],
    wps: &WaypointSet,
    weight: f64,
) -> DVector<f64> {
    let dim = tag.reference_dim();
    let mut grad = DVector::zeros(r_flat.len());
    for (k, &stage) in stages.iter().enumerate() {
        for d in 0..dim {
            let mut diff = r_flat[stage * dim + d] - wps.points[k][d];
            if tag == SystemTag::Unicycle && d == 2 {
                diff = wrap_angle(diff);
            }
            grad[stage * dim + d] += 2.0 * weight * diff;
        }
    }
    grad
}

/// Full unicycle planning objective at a reference.
fn unicycle_objective(
    spec: &PlanSpec,
    prefix: &[f64],
    stages: &[usize],
    r_flat: &DVector<f64>,
) -> Result<f64> {
    let mu = assemble_mu(prefix, r_flat);
    let penalty = spec.model.penalty(&mu)?;
    Ok(waypoint_term(SystemTag::Unicycle, r_flat, stages, &spec.waypoints, spec.waypoint_weight)
        + penalty)
}

/// Re-evaluate the planning objective of a stored reference, exactly as the
/// planners compute it: waypoint attraction plus the model's penalty.
pub fn reference_objective(
    model: &MlpModel,
    x0: &SystemState,
    waypoints: &WaypointSet,
    waypoint_weight: f64,
    reference: &ReferenceTrajectory,
) -> Result<f64> {
    let tag = x0.tag();
    if model.system != tag {
        return Err(Error::InvalidConfig {
            message: "objective model and start state disagree on the system".into(),
        });
    }
    let stages = waypoint_stages(waypoints, reference.dt, reference.n_steps())?;
    let r_flat = DVector::from_vec(
        reference.points.iter().flat_map(|row| row.iter().copied()).collect::<Vec<f64>>(),
    );
    let mu = assemble_mu(&mu_prefix(x0), &r_flat);
    let penalty = model.penalty(&mu)?;
    Ok(waypoint_term(tag, &r_flat, &stages, waypoints, waypoint_weight) + penalty)
}

/// Objective value and analytic gradient of the unicycle planning problem
/// at a flattened reference r (3 entries per sample, horizon + 1 samples):
/// the optimization surface, exposed for verification and external solvers.
pub fn unicycle_objective_and_gradient(
    spec: &PlanSpec,
    r_flat: &DVector<f64>,
) -> Result<(f64, DVector<f64>)> {
    spec.validate()?;
    let expected = 3 * (spec.horizon + 1);
    if r_flat.len() != expected {
        return Err(Error::DimensionMismatch {
            context: "flattened unicycle reference",
            expected,
            got: r_flat.len(),
        });
    }
    let prefix = mu_prefix(&spec.x0);
    let stages = waypoint_stages(&spec.waypoints, spec.dt, spec.horizon)?;
    let value = unicycle_objective(spec, &prefix, &stages, r_flat)?;
    let grad = unicycle_gradient(spec, &prefix, &stages, r_flat)?;
    Ok((value, grad))
}

/// Objective value and analytic gradient of the quadrotor planning problem
/// in the coefficient space of `proto` (the polynomial whose segment/order
/// layout the coefficients use).
pub fn quadrotor_objective_and_gradient(
    spec: &PlanSpec,
    proto: &PiecewisePolynomial,
    coeffs: &DVector<f64>,
) -> Result<(f64, DVector<f64>)> {
    spec.validate()?;
    let stages = waypoint_stages(&spec.waypoints, spec.dt, spec.horizon)?;
    let prefix = mu_prefix(&spec.x0);
    let t0 = proto.start_time();
    let grid: Vec<f64> = (0..=spec.horizon)
        .map(|i| t0 + i as f64 * spec.dt)
        .collect();
    let basis = basis_matrix(proto, &grid)?;
    let value = quadrotor_objective(spec, &prefix, &stages, &basis, coeffs)?;
    let grad = quadrotor_gradient(spec, &prefix, &stages, &basis, coeffs)?;
    Ok((value, grad))
}

/// Gradient of the unicycle objective with respect to the flattened
/// reference (all entries; the caller projects out the fixed first sample).
fn unicycle_gradient(
    spec: &PlanSpec,
    prefix: &[f64],
    stages: &[usize],
    r_flat: &DVector<f64>,
) -> Result<DVector<f64>> {
    let mu = assemble_mu(prefix, r_flat);
    let full = spec.model.input_gradient(&mu)?;
    let mut grad =
        waypoint_term_gradient(SystemTag::Unicycle, r_flat, stages, &spec.waypoints, spec.waypoint_weight);
    for i in 0..r_flat.len() {
        grad[i] += full[prefix.len() + i];
    }
    Ok(grad)
}

/// Pin the first reference sample to the start state; entries beyond the
/// first sample are untouched, and reapplying is a no-op.
pub fn project_initial_sample(r_flat: &mut DVector<f64>, x0_flat: &[f64]) {
    for (i, &v) in x0_flat.iter().enumerate() {
        r_flat[i] = v;
    }
}

/// Orthonormal basis (as columns) for polynomials of degree ≤ `degree`
/// sampled on an `n_samples`-point grid: the QR factor of the Vandermonde
/// matrix in the time coordinate rescaled to [-1, 1].
fn polynomial_span_basis(n_samples: usize, degree: usize) -> DMatrix<f64> {
    let mut vandermonde = DMatrix::zeros(n_samples, degree + 1);
    for t in 0..n_samples {
        let s = if n_samples > 1 {
            2.0 * t as f64 / (n_samples - 1) as f64 - 1.0
        } else {
            0.0
        };
        let mut power = 1.0;
        for j in 0..=degree {
            vandermonde[(t, j)] = power;
            power *= s;
        }
    }
    vandermonde.qr().q()
}

/// Orthogonal projection of a flattened reference onto the feasible set of
/// the unicycle planner: per-dimension polynomial span intersected with the
/// affine constraint r_0 = x0. Idempotent; preserves any reference already
/// in the set.
fn project_to_span(r_flat: &DVector<f64>, span: &DMatrix<f64>, x0_flat: &[f64; 3]) -> DVector<f64> {
    let n = span.nrows();
    let first_row = span.row(0).transpose();
    let first_row_norm2 = first_row.dot(&first_row);
    let mut out = DVector::zeros(3 * n);
    for dim in 0..3 {
        let samples = DVector::from_fn(n, |t, _| r_flat[3 * t + dim]);
        let mut coeffs = span.transpose() * samples;
        // Within the span, r_0 = x0 is one linear equation on the
        // coefficients; correct along its normal.
        let defect = first_row.dot(&coeffs) - x0_flat[dim];
        coeffs -= &first_row * (defect / first_row_norm2);
        let projected = span * coeffs;
        for t in 0..n {
            out[3 * t + dim] = projected[t];
        }
    }
    out
}

/// Plan a unicycle reference by projected gradient descent over the raw
/// samples, starting from an interpolating polynomial through the waypoints.
/// The feasible set is the smooth polynomial family described on
/// [`PlanOptions::subspace_degree`] with the first sample pinned to the
/// start state.
pub fn plan_unicycle(spec: &PlanSpec) -> Result<PlanResult> {
    spec.validate()?;
    let x0 = match &spec.x0 {
        SystemState::Unicycle(s) => *s,
        _ => unreachable!("validated above"),
    };
    let x0_flat = [x0.x, x0.y, x0.theta];
    let prefix = mu_prefix(&spec.x0);
    let stages = waypoint_stages(&spec.waypoints, spec.dt, spec.horizon)?;

    // Keep the waypoint interpolant representable: its degree is one less
    // than the number of interpolation points (waypoints plus the pinned
    // start when it is not itself a waypoint).
    let interpolant_degree = spec.waypoints.len().max(1) - 1;
    let degree = spec.options.subspace_degree.max(interpolant_degree);
    let span = polynomial_span_basis(spec.horizon + 1, degree);

    let init_poly = fit_interpolating_polynomial(&spec.waypoints)?;
    let rows = init_poly.sample(spec.horizon, spec.dt)?;
    let sampled_init = DVector::from_vec(rows.into_iter().flatten().collect::<Vec<f64>>());
    let mut r_flat = project_to_span(&sampled_init, &span, &x0_flat);

    let mut objective = unicycle_objective(spec, &prefix, &stages, &r_flat)?;
    if !objective.is_finite() {
        return Err(Error::NonFinite {
            context: "initial planning objective",
        });
    }
    let mut trace = vec![objective];
    let mut converged = false;

    let mut gradient = unicycle_gradient(spec, &prefix, &stages, &r_flat)?;
    let mut step = 1.0 / (1.0 + gradient.norm());

    for _ in 0..spec.options.max_iterations {
        // Only the component of the gradient that survives the projection
        // can produce a step; measure stationarity on it.
        let projected_direction = {
            let shifted = &r_flat - &gradient;
            project_to_span(&shifted, &span, &x0_flat) - &r_flat
        };
        if projected_direction.norm() < 1e-12 * (1.0 + objective.abs()) {
            converged = true;
            break;
        }

        let mut accepted = None;
        let mut alpha = step;
        for _ in 0..=spec.options.max_halvings {
            let shifted = &r_flat - alpha * &gradient;
            let candidate = project_to_span(&shifted, &span, &x0_flat);
            let value = unicycle_objective(spec, &prefix, &stages, &candidate)?;
            if value.is_finite() && value < objective {
                accepted = Some((candidate, value, alpha));
                break;
            }
            alpha *= 0.5;
        }
        let Some((candidate, value, used)) = accepted else {
            // Line search exhausted: the current iterate is the best seen.
            converged = false;
            break;
        };
        let previous = objective;
        r_flat = candidate;
        objective = value;
        trace.push(objective);
        // Backtracking proximal-gradient discipline: the step estimate only
        // shrinks, so accepted iterates cannot accelerate away from the data
        // manifold the penalty model was fitted on.
        step = used;
        if previous - objective < spec.options.rel_tol * previous.abs().max(1.0) {
            converged = true;
            break;
        }
        gradient = unicycle_gradient(spec, &prefix, &stages, &r_flat)?;
    }

    let mu = assemble_mu(&prefix, &r_flat);
    let predicted_penalty = spec.model.penalty(&mu)?;
    let points: Vec<Vec<f64>> = r_flat.as_slice().chunks(3).map(|c| c.to_vec()).collect();
    Ok(PlanResult {
        reference: PlanReference::Unicycle(ReferenceTrajectory::new(spec.dt, points)?),
        iterations: trace.len() - 1,
        objective_trace: trace,
        predicted_penalty,
        converged,
    })
}

/// Quadrotor planning objective at a stacked coefficient vector.
fn quadrotor_objective(
    spec: &PlanSpec,
    prefix: &[f64],
    stages: &[usize],
    basis: &DMatrix<f64>,
    coeffs: &DVector<f64>,
) -> Result<f64> {
    let r_flat = basis * coeffs;
    let mu = assemble_mu(prefix, &r_flat);
    let penalty = spec.model.penalty(&mu)?;
    Ok(waypoint_term(SystemTag::Quadrotor, &r_flat, stages, &spec.waypoints, spec.waypoint_weight)
        + penalty)
}

/// Gradient of the quadrotor objective with respect to the coefficients:
/// the chain rule pulls the reference-space gradient back through the basis.
fn quadrotor_gradient(
    spec: &PlanSpec,
    prefix: &[f64],
    stages: &[usize],
    basis: &DMatrix<f64>,
    coeffs: &DVector<f64>,
) -> Result<DVector<f64>> {
    let r_flat = basis * coeffs;
    let mu = assemble_mu(prefix, &r_flat);
    let full = spec.model.input_gradient(&mu)?;
    let mut grad_r = waypoint_term_gradient(
        SystemTag::Quadrotor,
        &r_flat,
        stages,
        &spec.waypoints,
        spec.waypoint_weight,
    );
    for i in 0..r_flat.len() {
        grad_r[i] += full[prefix.len() + i];
    }
    Ok(basis.transpose() * grad_r)
}

/// Two-loop recursion for the quasi-Newton search direction.
fn lbfgs_direction(
    gradient: &DVector<f64>,
    history: &VecDeque<(DVector<f64>, DVector<f64>)>,
) -> DVector<f64> {
    let mut q = gradient.clone();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y) in history.iter().rev() {
        let rho = 1.0 / y.dot(s);
        let a = rho * s.dot(&q);
        q -= a * y;
        alphas.push((a, rho));
    }
    if let Some((s, y)) = history.back() {
        q *= s.dot(y) / y.dot(y);
    }
    for ((s, y), (a, rho)) in history.iter().zip(alphas.into_iter().rev()) {
        let b = rho * y.dot(&q);
        q += (a - b) * s;
    }
    -q
}

/// Plan a quadrotor reference by optimizing stacked piecewise-polynomial
/// coefficients, starting from the smooth interpolating fit.
pub fn plan_quadrotor(spec: &PlanSpec) -> Result<PlanResult> {
    spec.validate()?;
    let prefix = mu_prefix(&spec.x0);
    let stages = waypoint_stages(&spec.waypoints, spec.dt, spec.horizon)?;

    let init_poly = fit_min_jerk(&spec.waypoints, spec.options.poly_order)?;
    let t0 = init_poly.start_time();
    if init_poly.end_time() + 1e-9 < t0 + spec.horizon as f64 * spec.dt {
        return Err(Error::InvalidConfig {
            message: "waypoints do not cover the plan horizon".into(),
        });
    }
    let grid: Vec<f64> = (0..=spec.horizon).map(|i| t0 + i as f64 * spec.dt).collect();
    let basis = basis_matrix(&init_poly, &grid)?;
    let mut coeffs = init_poly.coeff_vector();

    let mut objective = quadrotor_objective(spec, &prefix, &stages, &basis, &coeffs)?;
    if !objective.is_finite() {
        return Err(Error::NonFinite {
            context: "initial planning objective",
        });
    }
    let mut trace = vec![objective];
    let mut converged = false;
    let mut gradient = quadrotor_gradient(spec, &prefix, &stages, &basis, &coeffs)?;
    let mut history: VecDeque<(DVector<f64>, DVector<f64>)> = VecDeque::new();

    for iteration in 0..spec.options.max_iterations {
        if gradient.norm() < 1e-12 * (1.0 + objective.abs()) {
            converged = true;
            break;
        }
        let mut direction = lbfgs_direction(&gradient, &history);
        let mut slope = gradient.dot(&direction);
        if slope >= 0.0 {
            // Stale curvature produced an ascent direction; fall back to
            // steepest descent.
            history.clear();
            direction = -gradient.clone();
            slope = gradient.dot(&direction);
        }

        let mut alpha = if iteration == 0 && history.is_empty() {
            1.0 / (1.0 + gradient.norm())
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..=spec.options.max_halvings {
            let candidate = &coeffs + alpha * &direction;
            let value = quadrotor_objective(spec, &prefix, &stages, &basis, &candidate)?;
            // Sufficient-decrease condition keeps the trace monotone.
            if value.is_finite() && value <= objective + 1e-4 * alpha * slope && value < objective
            {
                accepted = Some((candidate, value));
                break;
            }
            alpha *= 0.5;
        }
        let Some((candidate, value)) = accepted else {
            converged = false;
            break;
        };
        let new_gradient = quadrotor_gradient(spec, &prefix, &stages, &basis, &candidate)?;
        let s = &candidate - &coeffs;
        let y = &new_gradient - &gradient;
        // Cautious update: only well-conditioned curvature pairs enter the
        // history.
        if s.dot(&y) > 1e-10 * s.norm() * y.norm() {
            if history.len() == spec.options.memory {
                history.pop_front();
            }
            history.push_back((s, y));
        }
        let previous = objective;
        coeffs = candidate;
        objective = value;
        gradient = new_gradient;
        trace.push(objective);
        if previous - objective < spec.options.rel_tol * previous.abs().max(1.0) {
            converged = true;
            break;
        }
    }

    let poly = init_poly.with_coeff_vector(&coeffs)?;
    let r_flat = &basis * &coeffs;
    let mu = assemble_mu(&prefix, &r_flat);
    let predicted_penalty = spec.model.penalty(&mu)?;
    let points: Vec<Vec<f64>> = r_flat.as_slice().chunks(4).map(|c| c.to_vec()).collect();
    Ok(PlanResult {
        reference: PlanReference::Quadrotor {
            poly,
            sampled: ReferenceTrajectory::new(spec.dt, points)?,
        },
        iterations: trace.len() - 1,
        objective_trace: trace,
        predicted_penalty,
        converged,
    })
}

/// Roll the tracking controller along a unicycle reference and return the
/// realized tracking cost.
pub fn unicycle_rollout_cost(
    x0: &UnicycleState,
    reference: &ReferenceTrajectory,
    gains: &UnicycleGains,
    rho: f64,
    input_cost: &DMatrix<f64>,
) -> Result<f64> {
    let (states, inputs) = rollout_unicycle(x0, reference, gains)?;
    let x_rows: Vec<Vec<f64>> = states.iter().map(|s| vec![s.x, s.y, s.theta]).collect();
    let u_rows: Vec<Vec<f64>> = inputs.iter().map(|u| vec![u.v, u.omega]).collect();
    tracking_cost(SystemTag::Unicycle, &x_rows, &u_rows, &reference.points, rho, input_cost)
}

/// Roll the attitude controller along a polynomial flat-output reference.
/// Returns the realized tracking cost and the visited states.
pub fn quadrotor_rollout_cost(
    x0: &QuadrotorState,
    poly: &PiecewisePolynomial,
    horizon: usize,
    dt: f64,
    gains: &Se3Gains,
    rho: f64,
    input_cost: &DMatrix<f64>,
) -> Result<(f64, Vec<QuadrotorState>)> {
    let t0 = poly.start_time();
    let commands = (0..=horizon)
        .map(|i| flat_to_command(poly, t0 + i as f64 * dt))
        .collect::<Result<Vec<_>>>()?;
    let (states, inputs) = rollout_quadrotor(x0, &commands, dt, gains)?;
    let x_rows: Vec<Vec<f64>> = states.iter().map(|s| s.to_row()).collect();
    let u_rows: Vec<Vec<f64>> = inputs
        .iter()
        .map(|u| vec![u.thrust, u.omega.x, u.omega.y, u.omega.z])
        .collect();
    let r_rows: Vec<Vec<f64>> = commands.iter().map(|c| c.flat_outputs().to_vec()).collect();
    let cost = tracking_cost(SystemTag::Quadrotor, &x_rows, &u_rows, &r_rows, rho, input_cost)?;
    Ok((cost, states))
}

/// Receding-horizon execution settings.
#[derive(Debug, Clone)]
pub struct ReplanConfig {
    /// Steps per window.
    pub window: usize,
    pub dt: f64,
    /// Tracking weight of the realized-cost report.
    pub rho: f64,
    pub waypoint_weight: f64,
    pub options: PlanOptions,
}

impl Default for ReplanConfig {
    fn default() -> Self {
        Self {
            window: 300,
            dt: 0.01,
            rho: 0.1,
            waypoint_weight: 1.0,
            options: PlanOptions::default(),
        }
    }
}

/// Outcome of one replanning window.
#[derive(Debug, Clone)]
pub struct SegmentOutcome {
    pub realized_cost: f64,
    /// True when planning failed and the smooth interpolating fallback flew
    /// instead.
    pub fallback: bool,
    pub converged: bool,
    pub objective_trace: Vec<f64>,
    pub reference: PiecewisePolynomial,
}

/// Fly a mission split into fixed-length windows, replanning each window
/// from the realized state: the window's first waypoint and the penalty's
/// start state are both anchored at where the vehicle actually is.
pub fn replan_loop(
    x0: &QuadrotorState,
    windows: &[WaypointSet],
    model: &MlpModel,
    gains: &Se3Gains,
    input_cost: &DMatrix<f64>,
    config: &ReplanConfig,
) -> Result<(Vec<QuadrotorState>, Vec<SegmentOutcome>)> {
    if windows.is_empty() {
        return Err(Error::InvalidConfig {
            message: "replan mission needs at least one window".into(),
        });
    }
    let policy = PolicyGains::Quadrotor(gains.clone());
    if model.gains_hash != policy.fingerprint() {
        log::warn!(
            "penalty model gains {} do not match the executing controller {}",
            model.gains_hash,
            policy.fingerprint()
        );
    }

    let mut state = x0.clone();
    let mut executed = vec![state.clone()];
    let mut outcomes = Vec::with_capacity(windows.len());

    for (k, window) in windows.iter().enumerate() {
        let mut anchored = window.clone();
        anchored.points[0] = vec![state.pos.x, state.pos.y, state.pos.z, state.yaw()];

        let spec = PlanSpec {
            x0: SystemState::Quadrotor(state.clone()),
            waypoints: anchored.clone(),
            horizon: config.window,
            dt: config.dt,
            model,
            waypoint_weight: config.waypoint_weight,
            options: config.options.clone(),
        };
        let (poly, fallback, converged, trace) = match plan_quadrotor(&spec) {
            Ok(plan) => {
                let poly = match plan.reference {
                    PlanReference::Quadrotor { poly, .. } => poly,
                    _ => unreachable!("quadrotor plan"),
                };
                (poly, false, plan.converged, plan.objective_trace)
            }
            Err(err) => {
                log::warn!("window {k}: plan failed ({err}); flying the smooth fallback");
                let poly = fit_min_jerk(&anchored, config.options.poly_order)?;
                (poly, true, false, Vec::new())
            }
        };

        let (cost, states) = quadrotor_rollout_cost(
            &state,
            &poly,
            config.window,
            config.dt,
            gains,
            config.rho,
            input_cost,
        )?;
        state = states.last().expect("rollout returns horizon+1 states").clone();
        executed.extend(states.into_iter().skip(1));
        outcomes.push(SegmentOutcome {
            realized_cost: cost,
            fallback,
            converged,
            objective_trace: trace,
            reference: poly,
        });
    }
    Ok((executed, outcomes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{default_input_cost, sample_unicycle_instance};
    use crate::dynamics::SystemTag;
    use crate::learner::MlpModel;
    use crate::trajgen::{sample_lissajous, LissajousAmps};
    use nalgebra::Vector3;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn zero_unicycle_model(horizon: usize) -> MlpModel {
        MlpModel::zeroed(SystemTag::Unicycle, 1.0, 3 + 3 * (horizon + 1), &[8], "test")
    }

    fn zero_quadrotor_model(horizon: usize) -> MlpModel {
        MlpModel::zeroed(SystemTag::Quadrotor, 1.0, 8 + 4 * (horizon + 1), &[8], "test")
    }

    fn random_model(tag: SystemTag, input_dim: usize, seed: u64) -> MlpModel {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        MlpModel::init(tag, 1.0, input_dim, &[12], "test", &mut rng)
    }

    #[test]
    fn stationary_unicycle_plan_returns_initialization() {
        let horizon = 40;
        let model = zero_unicycle_model(horizon);
        let x0 = UnicycleState::new(1.0, -0.5, 0.3);
        let wps = WaypointSet::new(
            vec![0.0, 1.0, 2.0],
            vec![vec![1.0, -0.5, 0.3]; 3],
        )
        .unwrap();
        let spec = PlanSpec::new(SystemState::Unicycle(x0), wps, horizon, 0.05, &model);
        let result = plan_unicycle(&spec).unwrap();
        assert!(result.converged);
        assert_eq!(result.iterations, 0);
        // Waypoint term is zero and the neutral penalty is exp(0) = 1.
        assert_eq!(result.objective_trace, vec![1.0]);
        assert!((result.predicted_penalty - 1.0).abs() < 1e-15);
        let reference = result.reference.sampled();
        for row in &reference.points {
            assert!((row[0] - 1.0).abs() < 1e-9);
            assert!((row[1] + 0.5).abs() < 1e-9);
            assert!((row[2] - 0.3).abs() < 1e-9);
        }
    }

    #[test]
    fn unicycle_trace_is_nonincreasing_on_random_instances() {
        let horizon = 40;
        let dt = 0.05;
        let model = random_model(SystemTag::Unicycle, 3 + 3 * (horizon + 1), 31);
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        for _ in 0..20 {
            let instance = sample_unicycle_instance(&mut rng, 1, horizon);
            let wps = instance.waypoint_set(horizon, dt).unwrap();
            let x0 = UnicycleState::new(instance.x0[0], instance.x0[1], instance.x0[2]);
            let spec = PlanSpec::new(SystemState::Unicycle(x0), wps, horizon, dt, &model);
            let result = plan_unicycle(&spec).unwrap();
            assert!(!result.objective_trace.is_empty());
            for pair in result.objective_trace.windows(2) {
                assert!(pair[1] < pair[0], "trace must decrease strictly");
            }
            assert!(result.objective_trace.iter().all(|v| v.is_finite()));
            assert!(result.predicted_penalty > 0.0);
        }
    }

    #[test]
    fn unicycle_gradient_matches_finite_differences() {
        let horizon = 5;
        let dt = 0.2;
        let model = random_model(SystemTag::Unicycle, 3 + 3 * (horizon + 1), 5);
        let wps = WaypointSet::new(
            vec![0.0, 0.6, 1.0],
            vec![
                vec![0.1, 0.2, 0.3],
                vec![0.4, 0.3, 0.2],
                vec![0.8, 0.5, 0.1],
            ],
        )
        .unwrap();
        let x0 = SystemState::Unicycle(UnicycleState::new(0.1, 0.2, 0.3));
        let spec = PlanSpec::new(x0, wps, horizon, dt, &model);
        let prefix = mu_prefix(&spec.x0);
        let stages = waypoint_stages(&spec.waypoints, dt, horizon).unwrap();

        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let r_flat = DVector::from_fn(3 * (horizon + 1), |_, _| rng.random_range(-1.0..1.0));
        let grad = unicycle_gradient(&spec, &prefix, &stages, &r_flat).unwrap();
        let h = 1e-6;
        for i in 0..r_flat.len() {
            let mut p = r_flat.clone();
            let mut m = r_flat.clone();
            p[i] += h;
            m[i] -= h;
            let fd = (unicycle_objective(&spec, &prefix, &stages, &p).unwrap()
                - unicycle_objective(&spec, &prefix, &stages, &m).unwrap())
                / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(1e-6);
            assert!(rel < 1e-4, "entry {i}: analytic {} vs fd {fd}", grad[i]);
        }
    }

    #[test]
    fn projection_is_idempotent_and_touches_only_the_first_sample() {
        let mut r = DVector::from_vec(vec![9.0, 9.0, 9.0, 1.0, 2.0, 3.0]);
        let x0 = [0.5, -0.5, 0.25];
        project_initial_sample(&mut r, &x0);
        let once = r.clone();
        project_initial_sample(&mut r, &x0);
        assert_eq!(r, once);
        assert_eq!(&r.as_slice()[..3], &x0);
        assert_eq!(&r.as_slice()[3..], &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn span_projection_is_idempotent_and_pins_the_start() {
        let n = 21;
        let span = polynomial_span_basis(n, 4);
        let x0 = [0.3, -0.2, 0.1];
        // A deliberately jagged reference: alternating bumps on every axis.
        let raw = DVector::from_fn(3 * n, |i, _| if i % 2 == 0 { 1.0 } else { -1.0 });
        let once = project_to_span(&raw, &span, &x0);
        let twice = project_to_span(&once, &span, &x0);
        assert!((&once - &twice).norm() < 1e-12);
        for dim in 0..3 {
            assert!((once[dim] - x0[dim]).abs() < 1e-12);
        }
    }

    #[test]
    fn span_projection_preserves_smooth_references() {
        let n = 21;
        let span = polynomial_span_basis(n, 4);
        // A cubic per dimension, already satisfying r_0 = x0.
        let r = DVector::from_fn(3 * n, |i, _| {
            let t = (i / 3) as f64 / (n - 1) as f64;
            let dim = i % 3;
            match dim {
                0 => 0.5 + t - 0.3 * t * t * t,
                1 => -0.25 + 2.0 * t * t,
                2 => 0.1 * t,
            _ => unreachable!(),
            }
        });
        let x0 = [r[0], r[1], r[2]];
        let projected = project_to_span(&r, &span, &x0);
        assert!(
            (&projected - &r).norm() < 1e-10,
            "projection moved an in-family reference by {}",
            (&projected - &r).norm()
        );
    }

    #[test]
    fn waypoint_term_vanishes_on_an_interpolating_reference() {
        let wps = WaypointSet::new(
            vec![0.0, 0.5, 1.0],
            vec![
                vec![0.0, 0.0, 0.0],
                vec![0.5, 0.25, 0.1],
                vec![1.0, 1.0, 0.2],
            ],
        )
        .unwrap();
        let poly = fit_interpolating_polynomial(&wps).unwrap();
        let rows = poly.sample(10, 0.1).unwrap();
        let r_flat = DVector::from_vec(rows.into_iter().flatten().collect::<Vec<f64>>());
        let stages = waypoint_stages(&wps, 0.1, 10).unwrap();
        let term = waypoint_term(SystemTag::Unicycle, &r_flat, &stages, &wps, 1.0);
        assert!(term < 1e-16);
    }

    #[test]
    fn stationary_quadrotor_plan_keeps_the_initialization() {
        let horizon = 30;
        let dt = 0.1;
        let model = zero_quadrotor_model(horizon);
        let x0 = QuadrotorState::hover_consistent(Vector3::new(0.0, 0.0, 0.0), Vector3::zeros(), 0.0);
        let wps = WaypointSet::new(
            vec![0.0, 1.0, 2.0, 3.0],
            vec![vec![0.0, 0.0, 0.0, 0.0]; 4],
        )
        .unwrap();
        let spec = PlanSpec::new(SystemState::Quadrotor(x0), wps, horizon, dt, &model);
        let result = plan_quadrotor(&spec).unwrap();
        assert!(result.converged);
        assert!(result.objective_trace.len() <= 2);
        let first = result.objective_trace[0];
        let last = *result.objective_trace.last().unwrap();
        assert!(first - last < 1e-6);
        let reference = result.reference.sampled();
        for row in &reference.points {
            assert!(row.iter().all(|v| v.abs() < 1e-9));
        }
    }

    #[test]
    fn quadrotor_coefficient_gradient_matches_finite_differences() {
        let horizon = 10;
        let dt = 0.1;
        let model = random_model(SystemTag::Quadrotor, 8 + 4 * (horizon + 1), 17);
        let wps = WaypointSet::new(
            vec![0.0, 0.5, 1.0],
            vec![
                vec![0.0, 0.0, 0.0, 0.0],
                vec![0.2, -0.1, 0.15, 0.1],
                vec![0.4, 0.1, 0.3, 0.2],
            ],
        )
        .unwrap();
        let x0 = QuadrotorState::hover_consistent(Vector3::new(0.0, 0.0, 0.0), Vector3::zeros(), 0.0);
        let mut spec = PlanSpec::new(SystemState::Quadrotor(x0), wps, horizon, dt, &model);
        spec.options.poly_order = 5;
        let prefix = mu_prefix(&spec.x0);
        let stages = waypoint_stages(&spec.waypoints, dt, horizon).unwrap();
        let poly = fit_min_jerk(&spec.waypoints, 5).unwrap();
        let grid: Vec<f64> = (0..=horizon).map(|i| i as f64 * dt).collect();
        let basis = basis_matrix(&poly, &grid).unwrap();

        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let mut coeffs = poly.coeff_vector();
        for c in coeffs.iter_mut() {
            *c += rng.random_range(-0.05..0.05);
        }
        let grad = quadrotor_gradient(&spec, &prefix, &stages, &basis, &coeffs).unwrap();
        let h = 1e-6;
        for i in 0..coeffs.len() {
            let mut p = coeffs.clone();
            let mut m = coeffs.clone();
            p[i] += h;
            m[i] -= h;
            let fd = (quadrotor_objective(&spec, &prefix, &stages, &basis, &p).unwrap()
                - quadrotor_objective(&spec, &prefix, &stages, &basis, &m).unwrap())
                / (2.0 * h);
            let rel = (fd - grad[i]).abs() / fd.abs().max(1e-6);
            assert!(rel < 1e-4, "coefficient {i}: analytic {} vs fd {fd}", grad[i]);
        }
    }

    #[test]
    fn quadrotor_trace_is_nonincreasing_on_random_missions() {
        let horizon = 60;
        let dt = 0.05;
        let model = random_model(SystemTag::Quadrotor, 8 + 4 * (horizon + 1), 23);
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..5 {
            let amps = LissajousAmps {
                x: rng.random_range(0.2..0.6),
                y: rng.random_range(0.2..0.5),
                z: rng.random_range(0.2..0.5),
                yaw: rng.random_range(0.2..0.8),
            };
            let wps = sample_lissajous(&amps, horizon as f64 * dt, 4, 1.0 / dt).unwrap();
            let x0 = QuadrotorState::hover_consistent(
                Vector3::new(wps.points[0][0], wps.points[0][1], wps.points[0][2]),
                Vector3::zeros(),
                wps.points[0][3],
            );
            let spec = PlanSpec::new(SystemState::Quadrotor(x0), wps, horizon, dt, &model);
            let result = plan_quadrotor(&spec).unwrap();
            for pair in result.objective_trace.windows(2) {
                assert!(pair[1] < pair[0]);
            }
            assert!(result.objective_trace.iter().all(|v| v.is_finite()));
        }
    }

    fn lissajous_windows(
        amps: &LissajousAmps,
        n_windows: usize,
        window: usize,
        dt: f64,
        points_per_window: usize,
    ) -> Vec<WaypointSet> {
        // One long curve cut into windows; shared boundary points repeat as
        // the next window's first waypoint.
        let total = sample_lissajous(
            amps,
            n_windows as f64 * window as f64 * dt,
            n_windows * (points_per_window - 1) + 1,
            1.0 / dt,
        )
        .unwrap();
        (0..n_windows)
            .map(|k| {
                let lo = k * (points_per_window - 1);
                let times: Vec<f64> = (0..points_per_window)
                    .map(|j| total.times[lo + j] - total.times[lo])
                    .collect();
                let points = total.points[lo..lo + points_per_window].to_vec();
                WaypointSet::new(times, points).unwrap()
            })
            .collect()
    }

    #[test]
    fn single_window_replan_reduces_to_plan_plus_rollout() {
        let window = 100;
        let dt = 0.01;
        let model = zero_quadrotor_model(window);
        let gains = Se3Gains::default();
        let amps = LissajousAmps {
            x: 0.4,
            y: 0.3,
            z: 0.3,
            yaw: 0.5,
        };
        let windows = lissajous_windows(&amps, 1, window, dt, 3);
        let x0 = QuadrotorState::hover_consistent(
            Vector3::new(windows[0].points[0][0], windows[0].points[0][1], windows[0].points[0][2]),
            Vector3::zeros(),
            windows[0].points[0][3],
        );
        let d = default_input_cost(SystemTag::Quadrotor);
        let config = ReplanConfig {
            window,
            dt,
            rho: 0.1,
            ..ReplanConfig::default()
        };
        let (executed, outcomes) = replan_loop(&x0, &windows, &model, &gains, &d, &config).unwrap();
        assert_eq!(executed.len(), window + 1);
        assert_eq!(outcomes.len(), 1);
        assert!(!outcomes[0].fallback);

        // Planning then rolling out manually must agree exactly.
        let spec = PlanSpec::new(
            SystemState::Quadrotor(x0.clone()),
            windows[0].clone(),
            window,
            dt,
            &model,
        );
        let plan = plan_quadrotor(&spec).unwrap();
        let poly = match plan.reference {
            PlanReference::Quadrotor { poly, .. } => poly,
            _ => unreachable!(),
        };
        let (cost, states) =
            quadrotor_rollout_cost(&x0, &poly, window, dt, &gains, 0.1, &d).unwrap();
        assert_eq!(cost.to_bits(), outcomes[0].realized_cost.to_bits());
        assert_eq!(states.last().unwrap().pos, executed.last().unwrap().pos);
    }

    #[test]
    fn replan_windows_are_anchored_at_realized_states() {
        let window = 80;
        let dt = 0.01;
        let model = zero_quadrotor_model(window);
        let gains = Se3Gains::default();
        let amps = LissajousAmps {
            x: 0.5,
            y: 0.4,
            z: 0.3,
            yaw: 0.6,
        };
        let windows = lissajous_windows(&amps, 2, window, dt, 3);
        let x0 = QuadrotorState::hover_consistent(
            Vector3::new(windows[0].points[0][0], windows[0].points[0][1], windows[0].points[0][2]),
            Vector3::zeros(),
            windows[0].points[0][3],
        );
        let d = default_input_cost(SystemTag::Quadrotor);
        let config = ReplanConfig {
            window,
            dt,
            rho: 0.1,
            ..ReplanConfig::default()
        };
        let (executed, outcomes) = replan_loop(&x0, &windows, &model, &gains, &d, &config).unwrap();
        assert_eq!(executed.len(), 2 * window + 1);
        assert_eq!(outcomes.len(), 2);

        // The second window's reference starts exactly where the vehicle
        // ended the first window (the planner anchors its first waypoint).
        let boundary = &executed[window];
        let start = outcomes[1].reference.eval(outcomes[1].reference.start_time(), 0).unwrap();
        assert!((start[0] - boundary.pos.x).abs() < 1e-9);
        assert!((start[1] - boundary.pos.y).abs() < 1e-9);
        assert!((start[2] - boundary.pos.z).abs() < 1e-9);
        assert!((start[3] - boundary.yaw()).abs() < 1e-9);
    }

    #[test]
    fn replan_falls_back_to_the_smooth_fit_when_planning_fails() {
        let window = 50;
        let dt = 0.01;
        // Wrong input dimension: every window plan fails validation.
        let model = zero_quadrotor_model(window + 5);
        let gains = Se3Gains::default();
        let amps = LissajousAmps {
            x: 0.3,
            y: 0.3,
            z: 0.2,
            yaw: 0.4,
        };
        let windows = lissajous_windows(&amps, 2, window, dt, 3);
        let x0 = QuadrotorState::hover_consistent(
            Vector3::new(windows[0].points[0][0], windows[0].points[0][1], windows[0].points[0][2]),
            Vector3::zeros(),
            windows[0].points[0][3],
        );
        let d = default_input_cost(SystemTag::Quadrotor);
        let config = ReplanConfig {
            window,
            dt,
            rho: 0.1,
            ..ReplanConfig::default()
        };
        let (executed, outcomes) = replan_loop(&x0, &windows, &model, &gains, &d, &config).unwrap();
        assert_eq!(executed.len(), 2 * window + 1);
        assert!(outcomes.iter().all(|o| o.fallback));
        assert!(outcomes.iter().all(|o| o.realized_cost.is_finite()));
    }

    #[test]
    fn model_system_mismatch_is_rejected() {
        let horizon = 10;
        let model = zero_unicycle_model(horizon);
        let x0 = QuadrotorState::hover_consistent(Vector3::zeros(), Vector3::zeros(), 0.0);
        let wps = WaypointSet::new(
            vec![0.0, 1.0],
            vec![vec![0.0; 4], vec![0.1, 0.1, 0.1, 0.0]],
        )
        .unwrap();
        let spec = PlanSpec::new(SystemState::Quadrotor(x0), wps, horizon, 0.1, &model);
        assert!(matches!(plan_quadrotor(&spec), Err(Error::InvalidConfig { .. })));
    }
}
