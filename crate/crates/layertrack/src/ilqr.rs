//! Iterative LQR over generic discrete dynamics, used on the closed-loop
//! unicycle (augmented state (x, r), input = reference velocity) to generate
//! dynamically consistent, easy-to-track training references.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{wrap_angle, DiscreteDynamics};
use crate::error::{Error, Result};

/// Elementwise step for central finite-difference Jacobians.
const FD_STEP: f64 = 1e-5;

/// Quadratic penalty on the deviation of one state from a target at a fixed
/// stage: (x_s - target)^T weight (x_s - target). Components listed in the
/// problem's `angle_dims` are differenced with wrapping.
#[derive(Debug, Clone)]
pub struct StageTarget {
    pub stage: usize,
    pub target: DVector<f64>,
    pub weight: DMatrix<f64>,
}

/// Terminal equality between the two halves of a block-structured state
/// (x-block = r-block), enforced by a quadratic penalty whose weight is
/// escalated across outer solves until the violation is small.
#[derive(Debug, Clone)]
pub struct BlockEquality {
    /// Size of one block; the state dimension must be 2 * dims.
    pub dims: usize,
    pub init_weight: f64,
    pub escalation: f64,
    pub max_outer: usize,
    pub violation_tol: f64,
}

impl Default for BlockEquality {
    fn default() -> Self {
        Self {
            dims: 3,
            init_weight: 10.0,
            escalation: 10.0,
            max_outer: 4,
            violation_tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IlqrProblem<D> {
    pub dynamics: D,
    pub horizon: usize,
    pub x0: DVector<f64>,
    /// Input cost matrix R_w (positive definite), applied at every stage.
    pub input_weight: DMatrix<f64>,
    pub targets: Vec<StageTarget>,
    pub terminal_equality: Option<BlockEquality>,
    /// State components treated as angles when forming residuals.
    pub angle_dims: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct IlqrOptions {
    pub max_iterations: usize,
    pub rel_tol: f64,
    pub reg_init: f64,
    pub reg_min: f64,
    pub reg_max: f64,
    /// Line-search step sizes are 2^0, 2^-1, ..., 2^-(n_alphas - 1).
    pub n_alphas: usize,
}

impl Default for IlqrOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            rel_tol: 1e-6,
            reg_init: 1e-6,
            reg_min: 1e-9,
            reg_max: 1e8,
            n_alphas: 11,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IlqrSolution {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub cost: f64,
    /// Total accepted-iteration count across all outer solves.
    pub iterations: usize,
    pub converged: bool,
    /// Norm of the terminal block-equality residual (0 when no equality).
    pub terminal_violation: f64,
    /// Cost after each accepted iteration, including the initial cost of
    /// every outer solve; nonincreasing within an outer solve.
    pub cost_trace: Vec<f64>,
}

/// Central finite-difference Jacobians (A, B) of a discrete map at (x, u).
pub fn linearize<D: DiscreteDynamics>(
    dynamics: &D,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = x.len();
    let m = u.len();
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[i] += FD_STEP;
        xm[i] -= FD_STEP;
        let col = (dynamics.step(&xp, u)? - dynamics.step(&xm, u)?) / (2.0 * FD_STEP);
        a.set_column(i, &col);
    }
    let mut b = DMatrix::zeros(n, m);
    for i in 0..m {
        let mut up = u.clone();
        let mut um = u.clone();
        up[i] += FD_STEP;
        um[i] -= FD_STEP;
        let col = (dynamics.step(x, &up)? - dynamics.step(x, &um)?) / (2.0 * FD_STEP);
        b.set_column(i, &col);
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "finite-difference jacobian",
        });
    }
    Ok((a, b))
}

/// Constant input sequence that carries the reference block from `from` to
/// `to` in n steps of length dt (angle components take the wrapped path).
pub fn straight_line_inputs(
    from: &DVector<f64>,
    to: &DVector<f64>,
    n: usize,
    dt: f64,
    angle_dims: &[usize],
) -> Vec<DVector<f64>> {
    let mut delta = to - from;
    for &i in angle_dims {
        if i < delta.len() {
            delta[i] = wrap_angle(delta[i]);
        }
    }
    let v = delta / (n as f64 * dt);
    vec![v; n]
}

impl<D: DiscreteDynamics> IlqrProblem<D> {
    fn validate(&self) -> Result<()> {
        let n = self.dynamics.state_dim();
        let m = self.dynamics.input_dim();
        if self.x0.len() != n {
            return Err(Error::DimensionMismatch {
                context: "ilqr initial state",
                expected: n,
                got: self.x0.len(),
            });
        }
        if self.input_weight.nrows() != m || self.input_weight.ncols() != m {
            return Err(Error::DimensionMismatch {
                context: "ilqr input weight",
                expected: m,
                got: self.input_weight.nrows(),
            });
        }
        if self.input_weight.clone().cholesky().is_none() {
            return Err(Error::InvalidConfig {
                message: "ilqr input weight must be positive definite".into(),
            });
        }
        for t in &self.targets {
            if t.stage > self.horizon {
                return Err(Error::InvalidConfig {
                    message: format!("target stage {} beyond horizon {}", t.stage, self.horizon),
                });
            }
            if t.target.len() != n || t.weight.nrows() != n || t.weight.ncols() != n {
                return Err(Error::DimensionMismatch {
                    context: "ilqr stage target",
                    expected: n,
                    got: t.target.len(),
                });
            }
        }
        if let Some(eq) = &self.terminal_equality {
            if 2 * eq.dims != n {
                return Err(Error::DimensionMismatch {
                    context: "ilqr block equality",
                    expected: n,
                    got: 2 * eq.dims,
                });
            }
        }
        Ok(())
    }

    fn wrapped_residual(&self, x: &DVector<f64>, target: &DVector<f64>) -> DVector<f64> {
        let mut res = x - target;
        for &i in &self.angle_dims {
            res[i] = wrap_angle(res[i]);
        }
        res
    }

    /// Terminal equality residual x-block minus r-block.
    fn equality_residual(&self, x: &DVector<f64>, dims: usize) -> DVector<f64> {
        let mut res = DVector::zeros(dims);
        for j in 0..dims {
            let diff = x[j] - x[j + dims];
            res[j] = if self.angle_dims.contains(&j) || self.angle_dims.contains(&(j + dims)) {
                wrap_angle(diff)
            } else {
                diff
            };
        }
        res
    }

    fn total_cost(&self, states: &[DVector<f64>], inputs: &[DVector<f64>], eq_weight: f64) -> f64 {
        let mut j = 0.0;
        for v in inputs {
            j += (v.transpose() * &self.input_weight * v)[(0, 0)];
        }
        for tgt in &self.targets {
            let res = self.wrapped_residual(&states[tgt.stage], &tgt.target);
            j += (res.transpose() * &tgt.weight * &res)[(0, 0)];
        }
        if let Some(eq) = &self.terminal_equality {
            let res = self.equality_residual(&states[self.horizon], eq.dims);
            j += eq_weight * res.norm_squared();
        }
        j
    }

    /// Gradient and Hessian of the state cost at one stage.
    fn state_expansion(
        &self,
        stage: usize,
        x: &DVector<f64>,
        eq_weight: f64,
    ) -> (DVector<f64>, DMatrix<f64>) {
        let n = x.len();
        let mut grad = DVector::zeros(n);
        let mut hess = DMatrix::zeros(n, n);
        for tgt in self.targets.iter().filter(|t| t.stage == stage) {
            let res = self.wrapped_residual(x, &tgt.target);
            grad += 2.0 * &tgt.weight * res;
            hess += 2.0 * &tgt.weight;
        }
        if stage == self.horizon {
            if let Some(eq) = &self.terminal_equality {
                let res = self.equality_residual(x, eq.dims);
                for j in 0..eq.dims {
                    grad[j] += 2.0 * eq_weight * res[j];
                    grad[j + eq.dims] -= 2.0 * eq_weight * res[j];
                    hess[(j, j)] += 2.0 * eq_weight;
                    hess[(j + eq.dims, j + eq.dims)] += 2.0 * eq_weight;
                    hess[(j, j + eq.dims)] -= 2.0 * eq_weight;
                    hess[(j + eq.dims, j)] -= 2.0 * eq_weight;
                }
            }
        }
        (grad, hess)
    }

    fn rollout(&self, inputs: &[DVector<f64>]) -> Result<Vec<DVector<f64>>> {
        let mut states = Vec::with_capacity(inputs.len() + 1);
        states.push(self.x0.clone());
        for (t, u) in inputs.iter().enumerate() {
            let next = self.dynamics.step(&states[t], u).map_err(|e| {
                Error::SolverFailure {
                    context: format!("ilqr rollout step {t}: {e}"),
                }
            })?;
            states.push(next);
        }
        Ok(states)
    }
}

struct BackwardResult {
    ks: Vec<DVector<f64>>,
    gains: Vec<DMatrix<f64>>,
    expected_linear: f64,
    expected_quadratic: f64,
}

/// One inner iLQR solve at a fixed terminal-equality weight.
fn solve_inner<D: DiscreteDynamics>(
    problem: &IlqrProblem<D>,
    options: &IlqrOptions,
    init: Vec<DVector<f64>>,
    eq_weight: f64,
    trace: &mut Vec<f64>,
) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>, f64, usize, bool)> {
    let n_steps = problem.horizon;
    let mut inputs = init;
    let mut states = problem.rollout(&inputs)?;
    let mut cost = problem.total_cost(&states, &inputs, eq_weight);
    trace.push(cost);

    let mut lambda = options.reg_init;
    let mut iterations = 0;
    let mut converged = false;

    'outer: for _ in 0..options.max_iterations {
        // Linearize the dynamics along the current trajectory.
        let mut a_mats = Vec::with_capacity(n_steps);
        let mut b_mats = Vec::with_capacity(n_steps);
        for t in 0..n_steps {
            let (a, b) = linearize(&problem.dynamics, &states[t], &inputs[t])?;
            a_mats.push(a);
            b_mats.push(b);
        }

        // Backward pass, escalating regularization until it succeeds.
        let backward = loop {
            match backward_pass(problem, &a_mats, &b_mats, &states, &inputs, eq_weight, lambda) {
                Some(res) => break res,
                None => {
                    lambda *= 10.0;
                    if lambda > options.reg_max {
                        return Err(Error::SolverFailure {
                            context: "ilqr backward pass not positive definite at max \
                                      regularization"
                                .into(),
                        });
                    }
                }
            }
        };

        let expected =
            backward.expected_linear.abs() + backward.expected_quadratic.abs();
        if expected < 1e-12 * cost.abs().max(1.0) {
            converged = true;
            break;
        }

        // Forward pass with a backtracking line search.
        let mut accepted = false;
        for i in 0..options.n_alphas {
            let alpha = 0.5f64.powi(i as i32);
            let Ok((new_states, new_inputs)) =
                forward_pass(problem, &states, &inputs, &backward, alpha)
            else {
                continue; // integration blew up at this step size
            };
            let new_cost = problem.total_cost(&new_states, &new_inputs, eq_weight);
            if new_cost.is_finite() && new_cost < cost {
                let decrease = cost - new_cost;
                states = new_states;
                inputs = new_inputs;
                cost = new_cost;
                trace.push(cost);
                iterations += 1;
                lambda = (lambda / 10.0).max(options.reg_min);
                accepted = true;
                if decrease < options.rel_tol * cost.abs().max(1.0) {
                    converged = true;
                    break 'outer;
                }
                break;
            }
        }
        if !accepted {
            lambda *= 10.0;
            if lambda > options.reg_max {
                // Line search exhausted at maximum regularization: best so far.
                break;
            }
        }
    }

    Ok((states, inputs, cost, iterations, converged))
}

fn backward_pass<D: DiscreteDynamics>(
    problem: &IlqrProblem<D>,
    a_mats: &[DMatrix<f64>],
    b_mats: &[DMatrix<f64>],
    states: &[DVector<f64>],
    inputs: &[DVector<f64>],
    eq_weight: f64,
    lambda: f64,
) -> Option<BackwardResult> {
    let n_steps = problem.horizon;
    let m = problem.dynamics.input_dim();
    let (mut v_x, mut v_xx) = problem.state_expansion(n_steps, &states[n_steps], eq_weight);

    let mut ks = vec![DVector::zeros(m); n_steps];
    let mut gains = vec![DMatrix::zeros(m, states[0].len()); n_steps];
    let mut d1 = 0.0;
    let mut d2 = 0.0;

    for t in (0..n_steps).rev() {
        let a = &a_mats[t];
        let b = &b_mats[t];
        let (l_x, l_xx) = problem.state_expansion(t, &states[t], eq_weight);
        let l_u = 2.0 * &problem.input_weight * &inputs[t];
        let l_uu = 2.0 * problem.input_weight.clone();

        let q_x = l_x + a.transpose() * &v_x;
        let q_u = l_u + b.transpose() * &v_x;
        let q_xx = l_xx + a.transpose() * &v_xx * a;
        let q_uu = &l_uu + b.transpose() * &v_xx * b;
        let q_ux = b.transpose() * &v_xx * a;

        let mut q_uu_reg = q_uu.clone();
        for i in 0..m {
            q_uu_reg[(i, i)] += lambda;
        }
        let chol = q_uu_reg.cholesky()?;
        let k = -chol.solve(&q_u);
        let big_k = -chol.solve(&q_ux);

        d1 += k.dot(&q_u);
        d2 += 0.5 * (k.transpose() * &q_uu * &k)[(0, 0)];

        v_x = q_x
            + big_k.transpose() * &q_uu * &k
            + big_k.transpose() * &q_u
            + q_ux.transpose() * &k;
        v_xx = q_xx
            + big_k.transpose() * &q_uu * &big_k
            + big_k.transpose() * &q_ux
            + q_ux.transpose() * &big_k;
        v_xx = (&v_xx + v_xx.transpose()) * 0.5;

        ks[t] = k;
        gains[t] = big_k;
    }

    Some(BackwardResult {
        ks,
        gains,
        expected_linear: d1,
        expected_quadratic: d2,
    })
}

fn forward_pass<D: DiscreteDynamics>(
    problem: &IlqrProblem<D>,
    states_old: &[DVector<f64>],
    inputs_old: &[DVector<f64>],
    backward: &BackwardResult,
    alpha: f64,
) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>)> {
    let n_steps = problem.horizon;
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut inputs = Vec::with_capacity(n_steps);
    states.push(problem.x0.clone());
    for t in 0..n_steps {
        let u = &inputs_old[t]
            + alpha * &backward.ks[t]
            + &backward.gains[t] * (&states[t] - &states_old[t]);
        let next = problem.dynamics.step(&states[t], &u)?;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "ilqr forward pass",
            });
        }
        inputs.push(u);
        states.push(next);
    }
    Ok((states, inputs))
}

/// Solve the trajectory optimization problem with iterative LQR. When a
/// terminal block equality is present, the solve is repeated with the penalty
/// weight escalated until the violation drops below its tolerance (or the
/// outer-loop budget is exhausted), warm-starting each round from the last.
pub fn solve_ilqr<D: DiscreteDynamics>(
    problem: &IlqrProblem<D>,
    init: Vec<DVector<f64>>,
    options: &IlqrOptions,
) -> Result<IlqrSolution> {
    problem.validate()?;
    if init.len() != problem.horizon {
        return Err(Error::DimensionMismatch {
            context: "ilqr initial input sequence",
            expected: problem.horizon,
            got: init.len(),
        });
    }

    let mut trace = Vec::new();
    let mut inputs = init;
    let mut total_iterations = 0;

    let (outer_rounds, mut eq_weight) = match &problem.terminal_equality {
        Some(eq) => (eq.max_outer, eq.init_weight),
        None => (1, 0.0),
    };

    let mut best: Option<(Vec<DVector<f64>>, Vec<DVector<f64>>, f64, bool)> = None;
    for round in 0..outer_rounds {
        let (states, new_inputs, cost, iters, converged) =
            solve_inner(problem, options, inputs.clone(), eq_weight, &mut trace)?;
        total_iterations += iters;
        inputs = new_inputs.clone();
        let violation = match &problem.terminal_equality {
            Some(eq) => problem
                .equality_residual(&states[problem.horizon], eq.dims)
                .norm(),
            None => 0.0,
        };
        best = Some((states, new_inputs, cost, converged));
        match &problem.terminal_equality {
            Some(eq) if violation >= eq.violation_tol && round + 1 < outer_rounds => {
                eq_weight *= eq.escalation;
            }
            _ => break,
        }
    }

    let (states, inputs, cost, inner_converged) = best.expect("at least one outer round");
    let terminal_violation = match &problem.terminal_equality {
        Some(eq) => problem
            .equality_residual(&states[problem.horizon], eq.dims)
            .norm(),
        None => 0.0,
    };
    let violation_ok = problem
        .terminal_equality
        .as_ref()
        .map(|eq| terminal_violation < eq.violation_tol)
        .unwrap_or(true);

    Ok(IlqrSolution {
        states,
        inputs,
        cost,
        iterations: total_iterations,
        converged: inner_converged && violation_ok,
        terminal_violation,
        cost_trace: trace,
    })
}

/// Optimal cost of the finite-horizon discrete LQR problem
/// sum_{t=0}^{N-1} (x^T q x + u^T r u) + x_N^T q_terminal x_N
/// by the backward Riccati recursion; the oracle for linear-quadratic solves.
pub fn lq_optimal_cost(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    q_terminal: &DMatrix<f64>,
    x0: &DVector<f64>,
    horizon: usize,
) -> Result<f64> {
    let mut p = q_terminal.clone();
    for _ in 0..horizon {
        let btp = b.transpose() * &p;
        let gram = r + &btp * b;
        let chol = gram.cholesky().ok_or(Error::SingularSystem {
            context: "riccati input gram",
        })?;
        let gain = chol.solve(&(&btp * a));
        p = q + a.transpose() * &p * a - (&btp * a).transpose() * &gain;
        p = (&p + p.transpose()) * 0.5;
    }
    Ok((x0.transpose() * p * x0)[(0, 0)])
}

/// Linear test dynamics x' = a x + b u.
#[derive(Debug, Clone)]
pub struct LinearDynamics {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl DiscreteDynamics for LinearDynamics {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.a * x + &self.b * u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controllers::{ClosedLoopUnicycle, UnicycleGains};
    use crate::dynamics::rk4_step;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn random_lq(rng: &mut ChaCha12Rng, n: usize, m: usize) -> (LinearDynamics, DMatrix<f64>, DMatrix<f64>) {
        let mut a = DMatrix::zeros(n, n);
        let mut b = DMatrix::zeros(n, m);
        for v in a.iter_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
        for i in 0..n {
            a[(i, i)] += 0.5;
        }
        for v in b.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        let mut q = DMatrix::zeros(n, n);
        for i in 0..n {
            q[(i, i)] = rng.random_range(0.1..2.0);
        }
        let mut r = DMatrix::zeros(m, m);
        for i in 0..m {
            r[(i, i)] = rng.random_range(0.1..1.0);
        }
        (LinearDynamics { a, b }, q, r)
    }

    #[test]
    fn linearize_recovers_linear_map() {
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let (sys, _, _) = random_lq(&mut rng, 5, 2);
        let x = DVector::from_fn(5, |_, _| rng.random_range(-1.0..1.0));
        let u = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
        let (a, b) = linearize(&sys, &x, &u).unwrap();
        assert!((a - &sys.a).norm() < 1e-8);
        assert!((b - &sys.b).norm() < 1e-8);
    }

    #[test]
    fn linearize_double_integrator_matches_exact_discretization() {
        // RK4 is exact for the double integrator (nilpotent system matrix),
        // so the finite-difference Jacobians must match the closed form
        // A = [[1, dt], [0, 1]], B = [dt^2/2, dt].
        struct DoubleIntegrator {
            dt: f64,
        }
        impl DiscreteDynamics for DoubleIntegrator {
            fn state_dim(&self) -> usize {
                2
            }
            fn input_dim(&self) -> usize {
                1
            }
            fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
                rk4_step(
                    |s, v| DVector::from_vec(vec![s[1], v[0]]),
                    x,
                    u,
                    self.dt,
                )
            }
        }
        let dt = 0.05;
        let sys = DoubleIntegrator { dt };
        let x = DVector::from_vec(vec![0.3, -0.7]);
        let u = DVector::from_vec(vec![0.4]);
        let (a, b) = linearize(&sys, &x, &u).unwrap();
        let a_exact = DMatrix::from_row_slice(2, 2, &[1.0, dt, 0.0, 1.0]);
        let b_exact = DMatrix::from_column_slice(2, 1, &[dt * dt / 2.0, dt]);
        assert!((a - a_exact).norm() < 1e-9);
        assert!((b - b_exact).norm() < 1e-9);
    }

    #[test]
    fn linearize_closed_loop_unicycle_has_reference_hold_structure() {
        let sys = ClosedLoopUnicycle {
            gains: UnicycleGains::default(),
            dt: 0.05,
        };
        // At x = r with zero reference velocity, the reference block evolves
        // as r' = r + dr * dt regardless of x.
        let x = DVector::from_vec(vec![0.4, 0.9, 0.3, 0.4, 0.9, 0.3]);
        let u = DVector::zeros(3);
        let (a, b) = linearize(&sys, &x, &u).unwrap();
        for i in 0..3 {
            for j in 0..6 {
                let expected = if j == i + 3 { 1.0 } else { 0.0 };
                assert!(
                    (a[(3 + i, j)] - expected).abs() < 1e-9,
                    "A reference row {i} col {j}"
                );
            }
            for j in 0..3 {
                let expected = if j == i { 0.05 } else { 0.0 };
                assert!((b[(3 + i, j)] - expected).abs() < 1e-9);
            }
        }
    }

    fn lq_problem(
        sys: LinearDynamics,
        q: &DMatrix<f64>,
        r: &DMatrix<f64>,
        x0: DVector<f64>,
        horizon: usize,
    ) -> IlqrProblem<LinearDynamics> {
        let n = sys.state_dim();
        let targets = (0..=horizon)
            .map(|stage| StageTarget {
                stage,
                target: DVector::zeros(n),
                weight: q.clone(),
            })
            .collect();
        IlqrProblem {
            dynamics: sys,
            horizon,
            x0,
            input_weight: r.clone(),
            targets,
            terminal_equality: None,
            angle_dims: vec![],
        }
    }

    #[test]
    fn lq_solution_matches_riccati_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let (sys, q, r) = random_lq(&mut rng, 4, 2);
        let x0 = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
        let horizon = 30;
        let oracle =
            lq_optimal_cost(&sys.a, &sys.b, &q, &r, &q, &x0, horizon).unwrap();
        let problem = lq_problem(sys, &q, &r, x0, horizon);
        let init = vec![DVector::zeros(2); horizon];
        let sol = solve_ilqr(&problem, init, &IlqrOptions::default()).unwrap();
        assert!(sol.converged);
        let rel = (sol.cost - oracle).abs() / oracle.abs().max(1e-12);
        assert!(rel < 1e-6, "relative cost gap {rel}");
    }

    fn unicycle_problem(
        x0: (f64, f64, f64),
        goal: (f64, f64, f64),
        mid: Option<(usize, DVector<f64>, DMatrix<f64>)>,
        horizon: usize,
        dt: f64,
    ) -> IlqrProblem<ClosedLoopUnicycle> {
        let mut targets = Vec::new();
        // Terminal waypoint on the state block.
        let mut goal_target = DVector::zeros(6);
        goal_target[0] = goal.0;
        goal_target[1] = goal.1;
        goal_target[2] = goal.2;
        let mut w = DMatrix::zeros(6, 6);
        for i in 0..3 {
            w[(i, i)] = 1.0;
        }
        targets.push(StageTarget {
            stage: horizon,
            target: goal_target,
            weight: w,
        });
        if let Some((stage, target, weight)) = mid {
            targets.push(StageTarget {
                stage,
                target,
                weight,
            });
        }
        IlqrProblem {
            dynamics: ClosedLoopUnicycle {
                gains: UnicycleGains::default(),
                dt,
            },
            horizon,
            x0: DVector::from_vec(vec![x0.0, x0.1, x0.2, x0.0, x0.1, x0.2]),
            input_weight: DMatrix::identity(3, 3) * 0.1,
            targets,
            terminal_equality: Some(BlockEquality::default()),
            angle_dims: vec![2, 5],
        }
    }

    #[test]
    fn zero_goal_problem_returns_zero_inputs() {
        let horizon = 40;
        let problem = unicycle_problem((1.0, 1.5, 0.2), (1.0, 1.5, 0.2), None, horizon, 0.05);
        let init = straight_line_inputs(
            &problem.x0.rows(0, 3).into_owned(),
            &problem.x0.rows(0, 3).into_owned(),
            horizon,
            0.05,
            &[2],
        );
        let sol = solve_ilqr(&problem, init, &IlqrOptions::default()).unwrap();
        assert!(sol.converged);
        assert!(sol.cost.abs() < 1e-12);
        for u in &sol.inputs {
            assert!(u.norm() < 1e-9);
        }
    }

    #[test]
    fn waypoint_instance_converges_and_beats_initialization() {
        let horizon = 100;
        let dt = 0.05;
        let x0 = (0.7, 1.2, 0.5);
        let goal = (2.2, 1.8, 0.0);
        let mut mid_target = DVector::zeros(6);
        mid_target[0] = 0.5 * (x0.0 + goal.0);
        mid_target[1] = 0.5 * (x0.1 + goal.1);
        let mut mid_weight = DMatrix::zeros(6, 6);
        mid_weight[(0, 0)] = 1.0;
        mid_weight[(1, 1)] = 1.0;
        let problem = unicycle_problem(
            x0,
            goal,
            Some((50, mid_target, mid_weight)),
            horizon,
            dt,
        );
        let from = DVector::from_vec(vec![x0.0, x0.1, x0.2]);
        let to = DVector::from_vec(vec![goal.0, goal.1, goal.2]);
        let init = straight_line_inputs(&from, &to, horizon, dt, &[2]);

        let init_states = problem.rollout(&init).unwrap();
        let eq_w = problem.terminal_equality.as_ref().unwrap().init_weight;
        let init_cost = problem.total_cost(&init_states, &init, eq_w);

        let sol = solve_ilqr(&problem, init, &IlqrOptions::default()).unwrap();
        assert!(sol.converged, "violation {}", sol.terminal_violation);
        assert!(sol.terminal_violation < 1e-3);
        assert!(sol.cost <= init_cost + 1e-9);

        // Accepted iterations never increase the cost within an outer solve.
        // Outer-loop boundaries (weight escalations) restart the trace.
        let mut prev = f64::INFINITY;
        for &c in &sol.cost_trace {
            if c > prev + 1e-9 {
                prev = c; // new outer solve with a larger equality weight
                continue;
            }
            assert!(c <= prev + 1e-12);
            prev = c;
        }
    }

    #[test]
    fn solution_re_rolls_exactly() {
        let horizon = 60;
        let dt = 0.05;
        let problem = unicycle_problem((0.2, 0.4, 0.9), (1.8, 2.6, 0.0), None, horizon, dt);
        let from = DVector::from_vec(vec![0.2, 0.4, 0.9]);
        let to = DVector::from_vec(vec![1.8, 2.6, 0.0]);
        let init = straight_line_inputs(&from, &to, horizon, dt, &[2]);
        let sol = solve_ilqr(&problem, init, &IlqrOptions::default()).unwrap();
        let rerolled = problem.rollout(&sol.inputs).unwrap();
        for (a, b) in sol.states.iter().zip(&rerolled) {
            assert!((a - b).norm() < 1e-12);
        }
    }
}
