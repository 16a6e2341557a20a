//! Plant models and integrators: unicycle and quadrotor steps, the generic
//! RK4 rule, and the augmented state (plant state + stacked reference window)
//! that the tracking layer operates on.

use nalgebra::{DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gravitational acceleration in m/s^2; world z points up, so free fall is
/// (0, 0, -GRAVITY).
pub const GRAVITY: f64 = 9.81;

/// Wrap an angle into (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    PI - (PI - a).rem_euclid(2.0 * PI)
}

/// One explicit Runge-Kutta 4 step of x' = deriv(x, u) with u held constant
/// over the step (zero-order hold).
pub fn rk4_step<F>(deriv: F, x: &DVector<f64>, u: &DVector<f64>, dt: f64) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64>,
{
    let finite = |v: &DVector<f64>, context| {
        if v.iter().all(|c| c.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite { context })
        }
    };
    let k1 = deriv(x, u);
    finite(&k1, "rk4 stage 1")?;
    let k2 = deriv(&(x + &k1 * (dt / 2.0)), u);
    finite(&k2, "rk4 stage 2")?;
    let k3 = deriv(&(x + &k2 * (dt / 2.0)), u);
    finite(&k3, "rk4 stage 3")?;
    let k4 = deriv(&(x + &k3 * dt), u);
    finite(&k4, "rk4 stage 4")?;
    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    finite(&next, "rk4 result")?;
    Ok(next)
}

/// Discrete-time dynamics x_{t+1} = step(x_t, u_t), the interface the iLQR
/// solver linearizes against.
pub trait DiscreteDynamics: Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SystemTag {
    Unicycle,
    Quadrotor,
}

impl SystemTag {
    pub fn name(self) -> &'static str {
        match self {
            SystemTag::Unicycle => "unicycle",
            SystemTag::Quadrotor => "quadrotor",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "unicycle" => Ok(SystemTag::Unicycle),
            "quadrotor" => Ok(SystemTag::Quadrotor),
            other => Err(Error::Format {
                message: format!("unknown system tag '{other}'"),
            }),
        }
    }

    /// Dimension of the flat/reference rows this system tracks: (x1, x2,
    /// theta) for the unicycle, (x, y, z, psi) for the quadrotor.
    pub fn reference_dim(self) -> usize {
        match self {
            SystemTag::Unicycle => 3,
            SystemTag::Quadrotor => 4,
        }
    }
}

// ---------------------------------------------------------------------------
// Unicycle
// ---------------------------------------------------------------------------

/// Planar unicycle state: position (m) and heading (rad).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnicycleState {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl UnicycleState {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self { x, y, theta }
    }

    pub fn to_vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.theta)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }
}

/// Unicycle input: forward speed v (m/s) and turn rate omega (rad/s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnicycleInput {
    pub v: f64,
    pub omega: f64,
}

/// Continuous unicycle vector field x1' = v cos(theta), x2' = v sin(theta),
/// theta' = omega, i.e. x' = g(x) u with orthonormal columns in g.
pub fn unicycle_deriv(x: &UnicycleState, u: &UnicycleInput) -> Vector3<f64> {
    Vector3::new(u.v * x.theta.cos(), u.v * x.theta.sin(), u.omega)
}

/// One RK4 step of the unicycle under zero-order-held input.
pub fn unicycle_step(x: &UnicycleState, u: &UnicycleInput, dt: f64) -> Result<UnicycleState> {
    let deriv = |s: &DVector<f64>, _: &DVector<f64>| {
        let st = UnicycleState::new(s[0], s[1], s[2]);
        let d = unicycle_deriv(&st, u);
        DVector::from_column_slice(d.as_slice())
    };
    let x0 = DVector::from_column_slice(x.to_vector().as_slice());
    let next = rk4_step(deriv, &x0, &DVector::zeros(0), dt)?;
    Ok(UnicycleState::new(next[0], next[1], next[2]))
}

// ---------------------------------------------------------------------------
// Quadrotor
// ---------------------------------------------------------------------------

/// Quadrotor rigid-body state: position p (m), velocity v (m/s), attitude R
/// (body-to-world rotation matrix).
#[derive(Debug, Clone, PartialEq)]
pub struct QuadrotorState {
    pub pos: Vector3<f64>,
    pub vel: Vector3<f64>,
    pub rot: Matrix3<f64>,
}

impl QuadrotorState {
    /// Hover-consistent state: given position, velocity, and yaw, with the
    /// attitude a pure yaw rotation (thrust axis vertical).
    pub fn hover_consistent(pos: Vector3<f64>, vel: Vector3<f64>, yaw: f64) -> Self {
        let (s, c) = yaw.sin_cos();
        let rot = Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0);
        Self { pos, vel, rot }
    }

    /// Yaw of the body x-axis projected onto the world xy-plane.
    pub fn yaw(&self) -> f64 {
        self.rot[(1, 0)].atan2(self.rot[(0, 0)])
    }

    /// Flatten to 15 numbers: p, v, then R row-major.
    pub fn to_row(&self) -> Vec<f64> {
        let mut row = Vec::with_capacity(15);
        row.extend_from_slice(self.pos.as_slice());
        row.extend_from_slice(self.vel.as_slice());
        for i in 0..3 {
            for j in 0..3 {
                row.push(self.rot[(i, j)]);
            }
        }
        row
    }

    pub fn from_row(row: &[f64]) -> Result<Self> {
        if row.len() != 15 {
            return Err(Error::DimensionMismatch {
                context: "quadrotor state row",
                expected: 15,
                got: row.len(),
            });
        }
        let pos = Vector3::new(row[0], row[1], row[2]);
        let vel = Vector3::new(row[3], row[4], row[5]);
        let mut rot = Matrix3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                rot[(i, j)] = row[6 + 3 * i + j];
            }
        }
        Ok(Self { pos, vel, rot })
    }
}

/// Quadrotor input: mass-normalized collective thrust c (m/s^2) and body
/// rates omega (rad/s).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadrotorInput {
    pub thrust: f64,
    pub omega: Vector3<f64>,
}

/// Skew-symmetric cross-product matrix [w]_x.
pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Inverse of `hat` applied to the skew-symmetric part of a matrix.
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Rodrigues formula: exp([w]_x) for a rotation vector w (axis * angle).
pub fn so3_exp(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    let k = hat(w);
    if theta < 1e-10 {
        // Series through second order; truncation is O(theta^3) <= 1e-30.
        Matrix3::identity() + k + k * k * 0.5
    } else {
        let a = theta.sin() / theta;
        let b = (1.0 - theta.cos()) / (theta * theta);
        Matrix3::identity() + k * a + k * k * b
    }
}

/// Project a near-rotation matrix onto SO(3) (polar factor via SVD, with the
/// determinant sign corrected onto the proper rotations).
pub fn project_so3(m: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    let svd = m.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::RotationProjection),
    };
    let mut d = Matrix3::identity();
    d[(2, 2)] = (u * v_t).determinant().signum();
    let r = u * d * v_t;
    let drift = (r.transpose() * r - Matrix3::identity()).norm();
    if !r.iter().all(|c| c.is_finite()) || drift > 1e-6 {
        return Err(Error::RotationProjection);
    }
    Ok(r)
}

/// One integration step of the quadrotor under zero-order-held input.
///
/// With omega constant over the step the attitude has the closed form
/// R(t+s) = R(t) exp(s [omega]_x); p and v are advanced by RK4 using the
/// exact attitude at each stage time. The result is re-projected onto SO(3)
/// to keep rounding from accumulating.
pub fn quadrotor_step(x: &QuadrotorState, u: &QuadrotorInput, dt: f64) -> Result<QuadrotorState> {
    let e_half = so3_exp(&(u.omega * (dt / 2.0)));
    let e_full = so3_exp(&(u.omega * dt));
    let r0 = x.rot;
    let r_half = r0 * e_half;
    let r_full = r0 * e_full;
    let grav = Vector3::new(0.0, 0.0, -GRAVITY);
    let acc = |r: &Matrix3<f64>| r.column(2) * u.thrust + grav;

    // RK4 stages on (p, v); the velocity derivative uses the stage attitude.
    let a0 = acc(&r0);
    let a_half = acc(&r_half);
    let a_full = acc(&r_full);
    let k1p = x.vel;
    let k1v = a0;
    let k2p = x.vel + k1v * (dt / 2.0);
    let k2v = a_half;
    let k3p = x.vel + k2v * (dt / 2.0);
    let k3v = a_half;
    let k4p = x.vel + k3v * dt;
    let k4v = a_full;
    let pos = x.pos + (k1p + k2p * 2.0 + k3p * 2.0 + k4p) * (dt / 6.0);
    let vel = x.vel + (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * (dt / 6.0);
    if !(pos.iter().all(|c| c.is_finite()) && vel.iter().all(|c| c.is_finite())) {
        return Err(Error::NonFinite {
            context: "quadrotor step",
        });
    }
    let rot = project_so3(&r_full)?;
    Ok(QuadrotorState { pos, vel, rot })
}

// ---------------------------------------------------------------------------
// System-tagged wrappers
// ---------------------------------------------------------------------------

/// State of either plant, tagged by system.
#[derive(Debug, Clone, PartialEq)]
pub enum SystemState {
    Unicycle(UnicycleState),
    Quadrotor(QuadrotorState),
}

impl SystemState {
    pub fn tag(&self) -> SystemTag {
        match self {
            SystemState::Unicycle(_) => SystemTag::Unicycle,
            SystemState::Quadrotor(_) => SystemTag::Quadrotor,
        }
    }

    pub fn to_row(&self) -> Vec<f64> {
        match self {
            SystemState::Unicycle(s) => vec![s.x, s.y, s.theta],
            SystemState::Quadrotor(s) => s.to_row(),
        }
    }

    pub fn from_row(tag: SystemTag, row: &[f64]) -> Result<Self> {
        match tag {
            SystemTag::Unicycle => {
                if row.len() != 3 {
                    return Err(Error::DimensionMismatch {
                        context: "unicycle state row",
                        expected: 3,
                        got: row.len(),
                    });
                }
                Ok(SystemState::Unicycle(UnicycleState::new(
                    row[0], row[1], row[2],
                )))
            }
            SystemTag::Quadrotor => Ok(SystemState::Quadrotor(QuadrotorState::from_row(row)?)),
        }
    }

    /// Projection onto the flat/reference coordinates: (x1, x2, theta) for
    /// the unicycle, (p, yaw) for the quadrotor.
    pub fn flat_outputs(&self) -> DVector<f64> {
        match self {
            SystemState::Unicycle(s) => DVector::from_column_slice(&[s.x, s.y, s.theta]),
            SystemState::Quadrotor(s) => {
                DVector::from_column_slice(&[s.pos.x, s.pos.y, s.pos.z, s.yaw()])
            }
        }
    }
}

/// Input to either plant, tagged by system. The variant fixes the input
/// dimension, so a tag/dimension mismatch cannot be constructed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ControlInput {
    Unicycle(UnicycleInput),
    Quadrotor(QuadrotorInput),
}

impl ControlInput {
    pub fn tag(&self) -> SystemTag {
        match self {
            ControlInput::Unicycle(_) => SystemTag::Unicycle,
            ControlInput::Quadrotor(_) => SystemTag::Quadrotor,
        }
    }

    pub fn to_row(&self) -> Vec<f64> {
        match self {
            ControlInput::Unicycle(u) => vec![u.v, u.omega],
            ControlInput::Quadrotor(u) => vec![u.thrust, u.omega.x, u.omega.y, u.omega.z],
        }
    }
}

/// Step whichever plant the state belongs to. The input must carry the same
/// system tag.
pub fn step_state(x: &SystemState, u: &ControlInput, dt: f64) -> Result<SystemState> {
    match (x, u) {
        (SystemState::Unicycle(s), ControlInput::Unicycle(u)) => {
            Ok(SystemState::Unicycle(unicycle_step(s, u, dt)?))
        }
        (SystemState::Quadrotor(s), ControlInput::Quadrotor(u)) => {
            Ok(SystemState::Quadrotor(quadrotor_step(s, u, dt)?))
        }
        _ => Err(Error::DimensionMismatch {
            context: "step_state system tags",
            expected: x.tag().reference_dim(),
            got: u.tag().reference_dim(),
        }),
    }
}

// ---------------------------------------------------------------------------
// Reference trajectories and the augmented system
// ---------------------------------------------------------------------------

/// A sampled reference r_{0:N} on a uniform time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceTrajectory {
    pub dt: f64,
    /// One row per grid point; row dimension is the system's reference_dim.
    pub points: Vec<Vec<f64>>,
}

impl ReferenceTrajectory {
    pub fn new(dt: f64, points: Vec<Vec<f64>>) -> Result<Self> {
        if dt <= 0.0 {
            return Err(Error::InvalidConfig {
                message: format!("reference dt must be positive, got {dt}"),
            });
        }
        let dim = match points.first() {
            Some(p) => p.len(),
            None => {
                return Err(Error::InvalidConfig {
                    message: "reference must contain at least one point".into(),
                })
            }
        };
        for p in &points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "reference point",
                    expected: dim,
                    got: p.len(),
                });
            }
        }
        Ok(Self { dt, points })
    }

    /// Number of steps N (points are r_0..r_N).
    pub fn n_steps(&self) -> usize {
        self.points.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    /// Forward-difference derivative of the reference at step t; the final
    /// point reuses the last interval's slope.
    pub fn derivative(&self, t: usize) -> DVector<f64> {
        let n = self.n_steps();
        let (a, b) = if t < n { (t, t + 1) } else { (n - 1, n) };
        let mut d = DVector::zeros(self.dim());
        for i in 0..self.dim() {
            d[i] = (self.points[b][i] - self.points[a][i]) / self.dt;
        }
        d
    }
}

/// How `block_upshift` fills the freed final slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailFill {
    /// Repeat the last reference point (default: keeps the window physically
    /// meaningful at the horizon edge).
    HoldLast,
    /// Zero-fill, the literal stacked-shift operator.
    Zero,
}

/// Advance a stacked reference window one step: drop the head, shift the
/// rest forward, fill the freed tail slot.
pub fn block_upshift(window: &[DVector<f64>], fill: TailFill) -> Vec<DVector<f64>> {
    if window.is_empty() {
        return Vec::new();
    }
    let mut out: Vec<DVector<f64>> = window[1..].to_vec();
    let tail = match fill {
        TailFill::HoldLast => window[window.len() - 1].clone(),
        TailFill::Zero => DVector::zeros(window[0].len()),
    };
    out.push(tail);
    out
}

/// Plant state plus the reference window it is currently tracking.
#[derive(Debug, Clone)]
pub struct AugmentedState {
    pub x: SystemState,
    pub window: Vec<DVector<f64>>,
}

/// One step of the augmented closed-loop system: apply the policy's input for
/// the current window, step the plant, and upshift the window.
pub fn augmented_step<P>(
    mu: &AugmentedState,
    dt: f64,
    fill: TailFill,
    policy: P,
) -> Result<AugmentedState>
where
    P: FnOnce(&SystemState, &[DVector<f64>], f64) -> Result<ControlInput>,
{
    let u = policy(&mu.x, &mu.window, dt)?;
    let x = step_state(&mu.x, &u, dt)?;
    Ok(AugmentedState {
        x,
        window: block_upshift(&mu.window, fill),
    })
}
