//! Fixed low-layer tracking controllers: the unicycle pseudoinverse feedback
//! policy, the SE(3) geometric quadrotor controller, and closed-loop rollout
//! drivers. The learned tracking penalty is defined with respect to these
//! controllers, so their gains are fingerprinted into every dataset and model.

use nalgebra::{DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::{
    quadrotor_step, rk4_step, unicycle_step, wrap_angle, ControlInput, DiscreteDynamics,
    QuadrotorInput, QuadrotorState, ReferenceTrajectory, SystemState, UnicycleInput,
    UnicycleState, GRAVITY,
};
use crate::error::{Error, Result};
use crate::trajgen::PiecewisePolynomial;

/// Thrust magnitude below which the desired-attitude construction degenerates.
const THRUST_EPS: f64 = 1e-6;

/// Proportional gain matrix of the unicycle tracking policy
/// u = g(x)^T (r_dot + Kp (x - r)).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnicycleGains {
    pub kp: Matrix3<f64>,
}

impl Default for UnicycleGains {
    fn default() -> Self {
        Self {
            kp: Matrix3::identity() * -2.0,
        }
    }
}

/// SE(3) controller gains (elementwise position, velocity, and attitude
/// feedback). `jerk_feedforward` adds a jerk-derived body-rate feedforward;
/// off by default so the tracking penalty reflects the plain controller.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Se3Gains {
    pub kp: Vector3<f64>,
    pub kv: Vector3<f64>,
    pub kr: Vector3<f64>,
    pub jerk_feedforward: bool,
}

impl Default for Se3Gains {
    fn default() -> Self {
        Self {
            kp: Vector3::new(6.0, 6.0, 8.0),
            kv: Vector3::new(4.0, 4.0, 5.0),
            kr: Vector3::new(6.0, 6.0, 6.0),
            jerk_feedforward: false,
        }
    }
}

/// Full flat-output command for the quadrotor controller: position through
/// jerk plus yaw and yaw rate (14 numbers).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlatCommand {
    pub pos: Vector3<f64>,
    pub vel: Vector3<f64>,
    pub acc: Vector3<f64>,
    pub jerk: Vector3<f64>,
    pub yaw: f64,
    pub yaw_rate: f64,
}

impl FlatCommand {
    /// Hold-position command: all derivatives zero.
    pub fn hover(pos: Vector3<f64>, yaw: f64) -> Self {
        Self {
            pos,
            vel: Vector3::zeros(),
            acc: Vector3::zeros(),
            jerk: Vector3::zeros(),
            yaw,
            yaw_rate: 0.0,
        }
    }

    /// The tracked flat outputs (x, y, z, yaw).
    pub fn flat_outputs(&self) -> [f64; 4] {
        [self.pos.x, self.pos.y, self.pos.z, self.yaw]
    }
}

/// Input-space columns of the unicycle's control vector fields at heading
/// theta: g(x) = [[cos, 0], [sin, 0], [0, 1]].
fn unicycle_g_transpose_apply(theta: f64, w: &Vector3<f64>) -> UnicycleInput {
    UnicycleInput {
        v: theta.cos() * w.x + theta.sin() * w.y,
        omega: w.z,
    }
}

/// Unicycle tracking policy u = g(x)^T (r_dot + Kp (x - r)); the columns of
/// g are orthonormal, so the pseudoinverse is exactly the transpose. The
/// heading component of the error is wrapped to (-pi, pi].
pub fn unicycle_policy(
    x: &UnicycleState,
    r: &Vector3<f64>,
    r_dot: &Vector3<f64>,
    gains: &UnicycleGains,
) -> UnicycleInput {
    let mut e = x.to_vector() - r;
    e.z = wrap_angle(e.z);
    let w = r_dot + gains.kp * e;
    unicycle_g_transpose_apply(x.theta, &w)
}

/// Continuous-time closed-loop dynamics of the unicycle under its tracking
/// policy, on the augmented state (x, r) in R^6 driven by the reference
/// velocity dr in R^3:
///   x_dot = g(x) g(x)^T (dr + Kp (x - r)),   r_dot = dr.
pub fn closed_loop_unicycle_deriv(
    state: &DVector<f64>,
    dr: &DVector<f64>,
    gains: &UnicycleGains,
) -> DVector<f64> {
    let x = UnicycleState::new(state[0], state[1], state[2]);
    let r = Vector3::new(state[3], state[4], state[5]);
    let r_dot = Vector3::new(dr[0], dr[1], dr[2]);
    let u = unicycle_policy(&x, &r, &r_dot, gains);
    let (c, s) = (x.theta.cos(), x.theta.sin());
    DVector::from_vec(vec![c * u.v, s * u.v, u.omega, dr[0], dr[1], dr[2]])
}

/// Discrete closed-loop unicycle on the augmented state (x, r), integrated
/// with RK4. Because r_dot is constant over a step, the reference block
/// advances exactly: r_{t+1} = r_t + dr * dt.
#[derive(Debug, Clone)]
pub struct ClosedLoopUnicycle {
    pub gains: UnicycleGains,
    pub dt: f64,
}

impl DiscreteDynamics for ClosedLoopUnicycle {
    fn state_dim(&self) -> usize {
        6
    }

    fn input_dim(&self) -> usize {
        3
    }

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>> {
        rk4_step(
            |s, v| closed_loop_unicycle_deriv(s, v, &self.gains),
            x,
            u,
            self.dt,
        )
    }
}

/// Evaluate a 4-dim flat-output polynomial (x, y, z, yaw) into a full
/// command: derivatives 0-3 of position, 0-1 of yaw.
pub fn flat_to_command(poly: &PiecewisePolynomial, t: f64) -> Result<FlatCommand> {
    if poly.dims != 4 {
        return Err(Error::DimensionMismatch {
            context: "flat-output polynomial dims",
            expected: 4,
            got: poly.dims,
        });
    }
    let d0 = poly.eval(t, 0)?;
    let d1 = poly.eval(t, 1)?;
    let d2 = poly.eval(t, 2)?;
    let d3 = poly.eval(t, 3)?;
    Ok(FlatCommand {
        pos: Vector3::new(d0[0], d0[1], d0[2]),
        vel: Vector3::new(d1[0], d1[1], d1[2]),
        acc: Vector3::new(d2[0], d2[1], d2[2]),
        jerk: Vector3::new(d3[0], d3[1], d3[2]),
        yaw: d0[3],
        yaw_rate: d1[3],
    })
}

/// SE(3) geometric tracking controller. Computes the thrust along the current
/// body z-axis and a commanded body rate from the attitude error against the
/// desired frame built from the force direction and the commanded yaw.
pub fn se3_policy(
    x: &QuadrotorState,
    cmd: &FlatCommand,
    gains: &Se3Gains,
) -> Result<QuadrotorInput> {
    let e_p = x.pos - cmd.pos;
    let e_v = x.vel - cmd.vel;
    let f_des = Vector3::new(
        -gains.kp.x * e_p.x - gains.kv.x * e_v.x + cmd.acc.x,
        -gains.kp.y * e_p.y - gains.kv.y * e_v.y + cmd.acc.y,
        -gains.kp.z * e_p.z - gains.kv.z * e_v.z + cmd.acc.z + GRAVITY,
    );
    let f_norm = f_des.norm();
    if f_norm <= THRUST_EPS {
        return Err(Error::DegenerateThrust);
    }

    let thrust = f_des.dot(&(x.rot * Vector3::z()));

    let b3 = f_des / f_norm;
    let b1_yaw = Vector3::new(cmd.yaw.cos(), cmd.yaw.sin(), 0.0);
    let cross = b3.cross(&b1_yaw);
    let cross_norm = cross.norm();
    if cross_norm <= THRUST_EPS {
        return Err(Error::AttitudeConstruction);
    }
    let b2 = cross / cross_norm;
    let b1 = b2.cross(&b3);
    let r_des = Matrix3::from_columns(&[b1, b2, b3]);

    let e_rot_mat = r_des.transpose() * x.rot - x.rot.transpose() * r_des;
    let e_r = 0.5 * crate::dynamics::vee(&e_rot_mat);

    // Feedforward body rate expressed in the desired frame, mapped into the
    // current body frame through R^T R_des.
    let mut omega_des = Vector3::new(0.0, 0.0, cmd.yaw_rate);
    if gains.jerk_feedforward {
        let h_omega = (cmd.jerk - b3 * b3.dot(&cmd.jerk)) / f_norm;
        omega_des.x = -h_omega.dot(&b2);
        omega_des.y = h_omega.dot(&b1);
    }
    let omega = Vector3::new(
        -gains.kr.x * e_r.x,
        -gains.kr.y * e_r.y,
        -gains.kr.z * e_r.z,
    ) + x.rot.transpose() * r_des * omega_des;

    Ok(QuadrotorInput { thrust, omega })
}

/// Closed-loop unicycle rollout along a discrete reference. The reference
/// velocity fed to the policy at step t is the forward difference
/// (r_{t+1} - r_t) / dt, with the last interval reused at the final step.
pub fn rollout_unicycle(
    x0: &UnicycleState,
    r: &ReferenceTrajectory,
    gains: &UnicycleGains,
) -> Result<(Vec<UnicycleState>, Vec<UnicycleInput>)> {
    if r.dim() != 3 {
        return Err(Error::DimensionMismatch {
            context: "unicycle reference dims",
            expected: 3,
            got: r.dim(),
        });
    }
    let n = r.n_steps();
    let mut states = Vec::with_capacity(n + 1);
    let mut inputs = Vec::with_capacity(n);
    states.push(x0.clone());
    for t in 0..n {
        let r_t = Vector3::new(r.points[t][0], r.points[t][1], r.points[t][2]);
        let dr = r.derivative(t);
        let r_dot = Vector3::new(dr[0], dr[1], dr[2]);
        let u = unicycle_policy(&states[t], &r_t, &r_dot, gains);
        let next = unicycle_step(&states[t], &u, r.dt).map_err(|e| Error::SolverFailure {
            context: format!("unicycle rollout step {t}: {e}"),
        })?;
        inputs.push(u);
        states.push(next);
    }
    Ok((states, inputs))
}

/// Closed-loop quadrotor rollout along a sequence of flat commands, one per
/// time step (N+1 commands produce N+1 states and N inputs).
pub fn rollout_quadrotor(
    x0: &QuadrotorState,
    commands: &[FlatCommand],
    dt: f64,
    gains: &Se3Gains,
) -> Result<(Vec<QuadrotorState>, Vec<QuadrotorInput>)> {
    if commands.len() < 2 {
        return Err(Error::InvalidConfig {
            message: "quadrotor rollout needs at least 2 commands".into(),
        });
    }
    let n = commands.len() - 1;
    let mut states = Vec::with_capacity(n + 1);
    let mut inputs = Vec::with_capacity(n);
    states.push(x0.clone());
    for t in 0..n {
        let u = se3_policy(&states[t], &commands[t], gains).map_err(|e| {
            Error::SolverFailure {
                context: format!("quadrotor controller step {t}: {e}"),
            }
        })?;
        let next = quadrotor_step(&states[t], &u, dt).map_err(|e| Error::SolverFailure {
            context: format!("quadrotor rollout step {t}: {e}"),
        })?;
        inputs.push(u);
        states.push(next);
    }
    Ok((states, inputs))
}

/// Policy gains for either system, for callers generic over the plant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "system", rename_all = "lowercase")]
pub enum PolicyGains {
    Unicycle(UnicycleGains),
    Quadrotor(Se3Gains),
}

impl PolicyGains {
    /// Stable fingerprint of the gains (FNV-1a over the canonical byte
    /// encoding), stored alongside datasets and models so that a learned
    /// penalty is never silently reused with a different controller.
    pub fn fingerprint(&self) -> String {
        let mut bytes = Vec::new();
        match self {
            PolicyGains::Unicycle(g) => {
                bytes.push(b'u');
                for v in g.kp.iter() {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
            }
            PolicyGains::Quadrotor(g) => {
                bytes.push(b'q');
                for v in g.kp.iter().chain(g.kv.iter()).chain(g.kr.iter()) {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
                bytes.push(g.jerk_feedforward as u8);
            }
        }
        format!("{:016x}", fnv1a(&bytes))
    }
}

/// 64-bit FNV-1a hash; stable across platforms and releases.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Reference input for a generic rollout: a discrete reference for the
/// unicycle, a timed command sequence for the quadrotor.
#[derive(Debug, Clone)]
pub enum RolloutReference {
    Unicycle(ReferenceTrajectory),
    Quadrotor { dt: f64, commands: Vec<FlatCommand> },
}

/// Roll out either system in closed loop; dispatches on the state/gains pair.
pub fn rollout(
    x0: &SystemState,
    reference: &RolloutReference,
    gains: &PolicyGains,
) -> Result<(Vec<SystemState>, Vec<ControlInput>)> {
    match (x0, reference, gains) {
        (
            SystemState::Unicycle(x),
            RolloutReference::Unicycle(r),
            PolicyGains::Unicycle(g),
        ) => {
            let (xs, us) = rollout_unicycle(x, r, g)?;
            Ok((
                xs.into_iter().map(SystemState::Unicycle).collect(),
                us.into_iter().map(ControlInput::Unicycle).collect(),
            ))
        }
        (
            SystemState::Quadrotor(x),
            RolloutReference::Quadrotor { dt, commands },
            PolicyGains::Quadrotor(g),
        ) => {
            let (xs, us) = rollout_quadrotor(x, commands, *dt, g)?;
            Ok((
                xs.into_iter().map(SystemState::Quadrotor).collect(),
                us.into_iter().map(ControlInput::Quadrotor).collect(),
            ))
        }
        _ => Err(Error::InvalidConfig {
            message: "rollout: state, reference, and gains must target one system".into(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajgen::{fit_min_jerk, WaypointSet};
    use nalgebra::Matrix3;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn unicycle_policy_zero_error_zero_feedforward() {
        let x = UnicycleState::new(0.4, -0.2, 1.1);
        let u = unicycle_policy(
            &x,
            &x.to_vector(),
            &Vector3::zeros(),
            &UnicycleGains::default(),
        );
        assert_eq!(u.v, 0.0);
        assert_eq!(u.omega, 0.0);
    }

    #[test]
    fn unicycle_policy_feedforward_projects_onto_heading() {
        let x = UnicycleState::new(0.0, 0.0, 0.0);
        let u = unicycle_policy(
            &x,
            &x.to_vector(),
            &Vector3::new(1.0, 0.0, 0.0),
            &UnicycleGains::default(),
        );
        assert!((u.v - 1.0).abs() < 1e-15);
        assert!(u.omega.abs() < 1e-15);
    }

    #[test]
    fn unicycle_policy_hand_evaluated_feedback() {
        let x = UnicycleState::new(0.0, 0.0, 0.0);
        let u = unicycle_policy(
            &x,
            &Vector3::new(1.0, 0.0, 0.0),
            &Vector3::zeros(),
            &UnicycleGains::default(),
        );
        assert!((u.v - 2.0).abs() < 1e-15);
        assert!(u.omega.abs() < 1e-15);
    }

    #[test]
    fn unicycle_pseudoinverse_equals_transpose() {
        // g(x)^T g(x) = I for every heading, so the pseudoinverse formula
        // (g^T g)^{-1} g^T collapses to g^T exactly.
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let theta: f64 = rng.random_range(-10.0..10.0);
            let (c, s) = (theta.cos(), theta.sin());
            let gtg = [
                c * c + s * s, // column 1 with itself
                c * 0.0 + s * 0.0,
            ];
            assert!((gtg[0] - 1.0).abs() <= f64::EPSILON * 2.0);
            assert_eq!(gtg[1], 0.0);
        }
    }

    #[test]
    fn heading_error_is_wrapped() {
        let x = UnicycleState::new(0.0, 0.0, 3.0);
        let r = Vector3::new(0.0, 0.0, -3.0);
        // Raw difference is 6.0; wrapped difference is 6 - 2 pi < 0.
        let u = unicycle_policy(&x, &r, &Vector3::zeros(), &UnicycleGains::default());
        let wrapped = wrap_angle(6.0);
        assert!((u.omega - (-2.0 * wrapped)).abs() < 1e-12);
        assert!(u.omega > 0.0);
    }

    #[test]
    fn closed_loop_reference_block_advances_exactly() {
        let sys = ClosedLoopUnicycle {
            gains: UnicycleGains::default(),
            dt: 0.05,
        };
        let x = DVector::from_vec(vec![0.3, -0.1, 0.7, 1.0, 2.0, 0.5]);
        let dr = DVector::from_vec(vec![0.4, -0.2, 0.1]);
        let next = sys.step(&x, &dr).unwrap();
        for i in 0..3 {
            assert!(
                (next[3 + i] - (x[3 + i] + dr[i] * 0.05)).abs() < 1e-15,
                "reference block must integrate exactly"
            );
        }
    }

    #[test]
    fn unicycle_rollout_on_consistent_constant_reference_is_stationary() {
        let x0 = UnicycleState::new(1.0, 2.0, 0.3);
        let r = ReferenceTrajectory::new(0.05, vec![vec![1.0, 2.0, 0.3]; 41]).unwrap();
        let (xs, us) = rollout_unicycle(&x0, &r, &UnicycleGains::default()).unwrap();
        for u in &us {
            assert_eq!(u.v, 0.0);
            assert_eq!(u.omega, 0.0);
        }
        for x in &xs {
            assert_eq!(x.to_vector(), x0.to_vector());
        }
    }

    #[test]
    fn unicycle_rollout_contracts_position_error() {
        // Constant reference with the heading aligned to the goal direction:
        // position error at t = 2 s drops below 15% of its initial value.
        let theta = (1.0f64).atan2(1.0);
        let x0 = UnicycleState::new(0.0, 0.0, theta);
        let r = ReferenceTrajectory::new(0.05, vec![vec![1.0, 1.0, theta]; 41]).unwrap();
        let (xs, _) = rollout_unicycle(&x0, &r, &UnicycleGains::default()).unwrap();
        let initial = (2.0f64).sqrt();
        let last = xs.last().unwrap();
        let final_err = ((last.x - 1.0).powi(2) + (last.y - 1.0).powi(2)).sqrt();
        assert!(
            final_err < 0.15 * initial,
            "position error {final_err} vs initial {initial}"
        );
    }

    #[test]
    fn flat_to_command_monomial() {
        use crate::trajgen::{PiecewisePolynomial, PolySegment};
        let mut coeffs = vec![vec![0.0, 0.0, 1.0]; 1];
        coeffs.extend(vec![vec![0.0, 0.0, 0.0]; 3]);
        let poly = PiecewisePolynomial {
            dims: 4,
            segments: vec![PolySegment {
                t0: 0.0,
                t1: 2.0,
                coeffs,
            }],
        };
        let cmd = flat_to_command(&poly, 1.0).unwrap();
        assert!((cmd.pos.x - 1.0).abs() < 1e-14);
        assert!((cmd.vel.x - 2.0).abs() < 1e-14);
        assert!((cmd.acc.x - 2.0).abs() < 1e-14);
        assert!(cmd.jerk.x.abs() < 1e-14);
        assert_eq!(cmd.yaw, 0.0);
        assert_eq!(cmd.yaw_rate, 0.0);
    }

    #[test]
    fn flat_to_command_matches_finite_differences() {
        let wps = WaypointSet::new(
            vec![0.0, 1.0, 2.0],
            vec![
                vec![0.0, 0.0, 0.0, 0.0],
                vec![0.4, -0.3, 0.2, 0.5],
                vec![-0.1, 0.6, 0.1, -0.4],
            ],
        )
        .unwrap();
        let poly = fit_min_jerk(&wps, 7).unwrap();
        let h = 1e-4;
        for &t in &[0.3, 0.9, 1.4, 1.8] {
            let cmd = flat_to_command(&poly, t).unwrap();
            let plus = poly.eval(t + h, 0).unwrap();
            let minus = poly.eval(t - h, 0).unwrap();
            let vel_fd = (&plus - &minus) / (2.0 * h);
            for d in 0..3 {
                assert!((cmd.vel[d] - vel_fd[d]).abs() < 1e-5);
            }
            assert!((cmd.yaw_rate - vel_fd[3]).abs() < 1e-5);
            let mid = poly.eval(t, 0).unwrap();
            let acc_fd = (&plus - 2.0 * &mid + &minus) / (h * h);
            for d in 0..3 {
                assert!((cmd.acc[d] - acc_fd[d]).abs() < 1e-4);
            }
        }
    }

    #[test]
    fn se3_policy_hover_equilibrium() {
        let x = QuadrotorState::hover_consistent(Vector3::new(0.2, -0.4, 1.0), Vector3::zeros(), 0.0);
        let cmd = FlatCommand::hover(x.pos, 0.0);
        let u = se3_policy(&x, &cmd, &Se3Gains::default()).unwrap();
        assert_eq!(u.thrust, GRAVITY);
        assert_eq!(u.omega, Vector3::zeros());
    }

    #[test]
    fn se3_policy_hand_evaluated_altitude_error() {
        let cmd = FlatCommand::hover(Vector3::new(0.0, 0.0, 1.0), 0.0);
        let x = QuadrotorState::hover_consistent(Vector3::new(0.0, 0.0, 0.0), Vector3::zeros(), 0.0);
        let gains = Se3Gains {
            kp: Vector3::new(1.0, 1.0, 1.0),
            ..Se3Gains::default()
        };
        let u = se3_policy(&x, &cmd, &gains).unwrap();
        assert!((u.thrust - (GRAVITY + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn se3_policy_rejects_free_fall_command() {
        let x = QuadrotorState::hover_consistent(Vector3::zeros(), Vector3::zeros(), 0.0);
        let mut cmd = FlatCommand::hover(Vector3::zeros(), 0.0);
        cmd.acc = Vector3::new(0.0, 0.0, -GRAVITY);
        assert!(matches!(
            se3_policy(&x, &cmd, &Se3Gains::default()),
            Err(Error::DegenerateThrust)
        ));
    }

    #[test]
    fn se3_policy_rejects_thrust_parallel_to_heading() {
        let x = QuadrotorState::hover_consistent(Vector3::zeros(), Vector3::zeros(), 0.0);
        let mut cmd = FlatCommand::hover(Vector3::zeros(), 0.0);
        // Desired force exactly along the yaw heading vector (1, 0, 0).
        cmd.acc = Vector3::new(1.0, 0.0, -GRAVITY);
        assert!(matches!(
            se3_policy(&x, &cmd, &Se3Gains::default()),
            Err(Error::AttitudeConstruction)
        ));
    }

    #[test]
    fn se3_step_response_settles_with_decaying_envelope() {
        // 0.5 m step in x from hover, simulated at a fine time step: the
        // position error must fall below 5% and any later oscillation peaks
        // must not grow.
        let dt = 1e-3;
        let gains = Se3Gains::default();
        let mut x = QuadrotorState::hover_consistent(Vector3::zeros(), Vector3::zeros(), 0.0);
        let cmd = FlatCommand::hover(Vector3::new(0.5, 0.0, 0.0), 0.0);
        let mut errors = Vec::with_capacity(4000);
        for _ in 0..4000 {
            let u = se3_policy(&x, &cmd, &gains).unwrap();
            x = quadrotor_step(&x, &u, dt).unwrap();
            errors.push((x.pos.x - 0.5).abs() / 0.5);
        }
        let settle = errors.iter().position(|e| *e < 0.05);
        assert!(settle.is_some(), "never settled below 5%");
        let settle = settle.unwrap();
        let mut peak = f64::INFINITY;
        let mut current_max = 0.0f64;
        for window in errors[settle..].windows(2) {
            if window[1] < window[0] && current_max > 0.0 {
                assert!(current_max <= peak + 1e-9, "oscillation peaks grew");
                peak = peak.min(current_max.max(0.05));
                current_max = 0.0;
            } else if window[1] > window[0] {
                current_max = current_max.max(window[1]);
            }
        }
        assert!(*errors.last().unwrap() < 0.02);
    }

    #[test]
    fn quadrotor_hover_rollout_is_constant() {
        let x0 =
            QuadrotorState::hover_consistent(Vector3::new(0.1, 0.2, 0.5), Vector3::zeros(), 0.4);
        let commands = vec![FlatCommand::hover(x0.pos, 0.4); 101];
        let (xs, _) = rollout_quadrotor(&x0, &commands, 0.01, &Se3Gains::default()).unwrap();
        for x in &xs {
            assert!((x.pos - x0.pos).norm() < 1e-9);
            assert!(x.vel.norm() < 1e-9);
            assert!((x.rot - x0.rot).norm() < 1e-9);
        }
    }

    #[test]
    fn rollouts_are_bit_deterministic() {
        let theta = 0.6;
        let x0 = UnicycleState::new(0.1, -0.3, theta);
        let points: Vec<Vec<f64>> = (0..=60)
            .map(|i| {
                let t = i as f64 * 0.05;
                vec![t.sin(), 0.5 * t, 0.2 * t.cos()]
            })
            .collect();
        let r = ReferenceTrajectory::new(0.05, points).unwrap();
        let (xa, ua) = rollout_unicycle(&x0, &r, &UnicycleGains::default()).unwrap();
        let (xb, ub) = rollout_unicycle(&x0, &r, &UnicycleGains::default()).unwrap();
        for (a, b) in xa.iter().zip(&xb) {
            assert_eq!(a.to_vector(), b.to_vector());
        }
        for (a, b) in ua.iter().zip(&ub) {
            assert_eq!((a.v, a.omega), (b.v, b.omega));
        }
    }

    #[test]
    fn gains_fingerprint_distinguishes_controllers() {
        let a = PolicyGains::Unicycle(UnicycleGains::default());
        let b = PolicyGains::Unicycle(UnicycleGains {
            kp: Matrix3::identity() * -3.0,
        });
        let c = PolicyGains::Quadrotor(Se3Gains::default());
        let mut d = Se3Gains::default();
        d.jerk_feedforward = true;
        let d = PolicyGains::Quadrotor(d);
        let prints: Vec<String> = [&a, &b, &c, &d].iter().map(|g| g.fingerprint()).collect();
        for i in 0..prints.len() {
            for j in 0..prints.len() {
                if i != j {
                    assert_ne!(prints[i], prints[j]);
                }
            }
        }
        assert_eq!(a.fingerprint(), PolicyGains::Unicycle(UnicycleGains::default()).fingerprint());
    }
}
