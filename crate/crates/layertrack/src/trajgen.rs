//! Reference-trajectory generators: global interpolating polynomials (the
//! deliberately hard-to-track baseline), minimum-jerk piecewise polynomials,
//! and Lissajous waypoint sampling, plus the linear map from polynomial
//! coefficients to sampled references used by the quadrotor planner.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Condition-number ceiling for the interpolating Vandermonde solve.
const MAX_VANDERMONDE_COND: f64 = 1e12;

/// Timed waypoints in the flat-output space (3 dims for the unicycle,
/// 4 for the quadrotor).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaypointSet {
    /// Seconds, strictly increasing.
    pub times: Vec<f64>,
    /// One point per time, all with the same dimension.
    pub points: Vec<Vec<f64>>,
}

impl WaypointSet {
    pub fn new(times: Vec<f64>, points: Vec<Vec<f64>>) -> Result<Self> {
        if times.is_empty() || times.len() != points.len() {
            return Err(Error::InvalidConfig {
                message: format!(
                    "waypoint set needs matching nonempty times/points, got {}/{}",
                    times.len(),
                    points.len()
                ),
            });
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidConfig {
                message: "waypoint times must be strictly increasing".into(),
            });
        }
        let dim = points[0].len();
        for p in &points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "waypoint point",
                    expected: dim,
                    got: p.len(),
                });
            }
        }
        Ok(Self { times, points })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }
}

/// One polynomial segment; coefficients are ascending powers of the local
/// time tau = t - t0, one coefficient row per output dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolySegment {
    pub t0: f64,
    pub t1: f64,
    pub coeffs: Vec<Vec<f64>>,
}

/// Piecewise polynomial over contiguous segments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewisePolynomial {
    pub dims: usize,
    pub segments: Vec<PolySegment>,
}

/// Product j * (j-1) * ... * (j-q+1); the coefficient picked up by the q-th
/// derivative of tau^j.
fn falling(j: usize, q: usize) -> f64 {
    if q > j {
        return 0.0;
    }
    ((j - q + 1)..=j).map(|v| v as f64).product::<f64>().max(1.0)
}

impl PiecewisePolynomial {
    pub fn start_time(&self) -> f64 {
        self.segments[0].t0
    }

    pub fn end_time(&self) -> f64 {
        self.segments[self.segments.len() - 1].t1
    }

    /// Index of the segment whose [t0, t1) contains t; the final segment also
    /// claims its right endpoint. A 1e-9 s slack absorbs grid rounding.
    fn segment_index(&self, t: f64) -> Result<usize> {
        let (start, end) = (self.start_time(), self.end_time());
        if t < start - 1e-9 || t > end + 1e-9 {
            return Err(Error::OutOfSupport {
                t,
                t0: start,
                t1: end,
            });
        }
        for (i, seg) in self.segments.iter().enumerate() {
            if t < seg.t1 {
                return Ok(i);
            }
        }
        Ok(self.segments.len() - 1)
    }

    /// Evaluate the derivative of the given order at time t.
    pub fn eval(&self, t: f64, order: usize) -> Result<DVector<f64>> {
        let seg = &self.segments[self.segment_index(t)?];
        let tau = (t - seg.t0).clamp(0.0, seg.t1 - seg.t0);
        let mut out = DVector::zeros(self.dims);
        for (d, row) in seg.coeffs.iter().enumerate() {
            let mut acc = 0.0;
            for (j, &c) in row.iter().enumerate().skip(order) {
                acc += c * falling(j, order) * tau.powi((j - order) as i32);
            }
            out[d] = acc;
        }
        Ok(out)
    }

    /// Sample positions (order-0 values) on a uniform grid of n_steps + 1
    /// points starting at the polynomial's start time.
    pub fn sample(&self, n_steps: usize, dt: f64) -> Result<Vec<Vec<f64>>> {
        let t0 = self.start_time();
        (0..=n_steps)
            .map(|i| Ok(self.eval(t0 + i as f64 * dt, 0)?.as_slice().to_vec()))
            .collect()
    }

    /// Stack all coefficients dimension-major (dim, then segment, then
    /// ascending power) — the layout `basis_matrix` maps from.
    pub fn coeff_vector(&self) -> DVector<f64> {
        let mut v = Vec::new();
        for d in 0..self.dims {
            for seg in &self.segments {
                v.extend_from_slice(&seg.coeffs[d]);
            }
        }
        DVector::from_vec(v)
    }

    /// Rebuild a polynomial with this segment structure but new stacked
    /// coefficients (inverse of `coeff_vector`).
    pub fn with_coeff_vector(&self, c: &DVector<f64>) -> Result<Self> {
        let expected: usize = self.dims * self.segments.iter().map(|s| s.coeffs[0].len()).sum::<usize>();
        if c.len() != expected {
            return Err(Error::DimensionMismatch {
                context: "stacked coefficient vector",
                expected,
                got: c.len(),
            });
        }
        let mut out = self.clone();
        let mut idx = 0;
        for d in 0..self.dims {
            for seg in &mut out.segments {
                for j in 0..seg.coeffs[d].len() {
                    seg.coeffs[d][j] = c[idx];
                    idx += 1;
                }
            }
        }
        Ok(out)
    }
}

/// Fit one global polynomial of degree (#waypoints - 1) per dimension through
/// all waypoints. No derivative continuity is imposed anywhere, which is what
/// makes this the "no smoothness" baseline.
pub fn fit_interpolating_polynomial(wps: &WaypointSet) -> Result<PiecewisePolynomial> {
    let n = wps.len();
    if n < 2 {
        return Err(Error::InvalidConfig {
            message: "interpolating fit needs at least 2 waypoints".into(),
        });
    }
    // Solve in normalized time s = (t - t0)/T to keep the Vandermonde system
    // well conditioned over long spans, then map the coefficients back to
    // seconds-unit monomials via the exact diagonal rescale c_j / T^j.
    let t0 = wps.times[0];
    let span = wps.times[n - 1] - t0;
    let mut v = DMatrix::zeros(n, n);
    for i in 0..n {
        let s = (wps.times[i] - t0) / span;
        for j in 0..n {
            v[(i, j)] = s.powi(j as i32);
        }
    }
    let svd = v.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if cond > MAX_VANDERMONDE_COND {
        return Err(Error::IllConditioned { cond });
    }
    let lu = v.lu();
    let mut coeffs = vec![vec![0.0; n]; wps.dim()];
    for d in 0..wps.dim() {
        let rhs = DVector::from_iterator(n, wps.points.iter().map(|p| p[d]));
        let sol = lu.solve(&rhs).ok_or(Error::SingularSystem {
            context: "vandermonde solve",
        })?;
        coeffs[d] = (0..n).map(|j| sol[j] / span.powi(j as i32)).collect();
    }
    Ok(PiecewisePolynomial {
        dims: wps.dim(),
        segments: vec![PolySegment {
            t0,
            t1: wps.times[n - 1],
            coeffs,
        }],
    })
}

/// Smoothness order minimized per dimension: jerk for position-like
/// dimensions, first derivative for the yaw dimension of 4-dim flat outputs.
fn smoothness_order(dims: usize, d: usize) -> usize {
    if dims == 4 && d == 3 {
        1
    } else {
        3
    }
}

/// Assemble the per-dimension equality-constrained QP for the smooth fit:
/// Gram matrix H of the minimized derivative, constraint matrix A and right
/// hand side b (interpolation, C1-C3 interior continuity, rest-to-rest
/// endpoints: zero velocity and acceleration).
fn min_jerk_system(
    wps: &WaypointSet,
    order: usize,
    d: usize,
) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
    let s_count = wps.len() - 1;
    let m = order + 1;
    let n_c = s_count * m;
    let q = smoothness_order(wps.dim(), d);

    let mut h = DMatrix::zeros(n_c, n_c);
    for s in 0..s_count {
        let delta = wps.times[s + 1] - wps.times[s];
        for j in q..m {
            for k in q..m {
                let p = (j + k - 2 * q + 1) as i32;
                h[(s * m + j, s * m + k)] =
                    falling(j, q) * falling(k, q) * delta.powi(p) / p as f64;
            }
        }
    }

    let n_rows = 2 * s_count + 3 * (s_count - 1) + 4;
    let mut a = DMatrix::zeros(n_rows, n_c);
    let mut b = DVector::zeros(n_rows);
    let mut row = 0;

    // Waypoint interpolation at both ends of every segment.
    for s in 0..s_count {
        let delta = wps.times[s + 1] - wps.times[s];
        a[(row, s * m)] = 1.0;
        b[row] = wps.points[s][d];
        row += 1;
        for j in 0..m {
            a[(row, s * m + j)] = delta.powi(j as i32);
        }
        b[row] = wps.points[s + 1][d];
        row += 1;
    }

    // Continuity of derivatives 1..3 at interior waypoints.
    for s in 0..s_count - 1 {
        let delta = wps.times[s + 1] - wps.times[s];
        for der in 1..=3 {
            for j in der..m {
                a[(row, s * m + j)] = falling(j, der) * delta.powi((j - der) as i32);
            }
            a[(row, (s + 1) * m + der)] = -falling(der, der);
            row += 1;
        }
    }

    // Rest-to-rest endpoints: zero velocity and acceleration.
    for der in 1..=2 {
        a[(row, der)] = falling(der, der);
        row += 1;
    }
    let last = s_count - 1;
    let delta = wps.times[s_count] - wps.times[last];
    for der in 1..=2 {
        for j in der..m {
            a[(row, last * m + j)] = falling(j, der) * delta.powi((j - der) as i32);
        }
        row += 1;
    }
    debug_assert_eq!(row, n_rows);

    (h, a, b)
}

/// Fit a piecewise polynomial (one segment per waypoint interval, default
/// order 7) minimizing the integrated squared jerk (yaw: squared rate),
/// subject to interpolation, interior C1-C3 continuity, and rest-to-rest
/// endpoints. Solved per dimension through the KKT system of the QP.
pub fn fit_min_jerk(wps: &WaypointSet, order: usize) -> Result<PiecewisePolynomial> {
    if wps.len() < 2 {
        return Err(Error::InvalidConfig {
            message: "smooth fit needs at least 2 waypoints".into(),
        });
    }
    if order < 5 {
        return Err(Error::InvalidConfig {
            message: format!("smooth fit needs polynomial order >= 5, got {order}"),
        });
    }
    let s_count = wps.len() - 1;
    let m = order + 1;
    let mut segments: Vec<PolySegment> = (0..s_count)
        .map(|s| PolySegment {
            t0: wps.times[s],
            t1: wps.times[s + 1],
            coeffs: vec![vec![0.0; m]; wps.dim()],
        })
        .collect();

    for d in 0..wps.dim() {
        let (h, a, b) = min_jerk_system(wps, order, d);
        let n_c = h.nrows();
        let n_r = a.nrows();
        let dim = n_c + n_r;
        let mut kkt = DMatrix::zeros(dim, dim);
        kkt.view_mut((0, 0), (n_c, n_c)).copy_from(&(&h * 2.0));
        kkt.view_mut((n_c, 0), (n_r, n_c)).copy_from(&a);
        kkt.view_mut((0, n_c), (n_c, n_r)).copy_from(&a.transpose());
        let mut rhs = DVector::zeros(dim);
        rhs.rows_mut(n_c, n_r).copy_from(&b);
        let sol = kkt.lu().solve(&rhs).ok_or(Error::SingularSystem {
            context: "min-jerk kkt",
        })?;
        for s in 0..s_count {
            for j in 0..m {
                segments[s].coeffs[d][j] = sol[s * m + j];
            }
        }
    }

    Ok(PiecewisePolynomial {
        dims: wps.dim(),
        segments,
    })
}

/// Residuals of every smooth-fit equality constraint for a candidate
/// polynomial; all should vanish for a valid fit.
pub fn min_jerk_residuals(wps: &WaypointSet, poly: &PiecewisePolynomial) -> Result<Vec<f64>> {
    let mut res = Vec::new();
    for (i, t) in wps.times.iter().enumerate() {
        let v = poly.eval(*t, 0)?;
        for d in 0..wps.dim() {
            res.push(v[d] - wps.points[i][d]);
        }
    }
    for t in &wps.times[1..wps.len() - 1] {
        for der in 1..=3 {
            let before = poly.eval(t - 1e-12, der)?;
            let after = poly.eval(t + 1e-12, der)?;
            res.extend((before - after).iter().copied());
        }
    }
    for t in [wps.times[0], wps.times[wps.len() - 1]] {
        for der in 1..=2 {
            res.extend(poly.eval(t, der)?.iter().copied());
        }
    }
    Ok(res)
}

/// Lissajous curve amplitudes for (x, y, z, yaw).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LissajousAmps {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub yaw: f64,
}

/// Sample equally spaced waypoints on the Lissajous family
/// x = A_x (1 - cos(2 pi t / T)), y = A_y sin(2 pi t / T),
/// z = A_z sin(2 pi t / T), psi = A_psi sin(2 pi t / T),
/// with waypoint times snapped onto the discrete step grid.
pub fn sample_lissajous(
    amps: &LissajousAmps,
    t_period: f64,
    n_waypoints: usize,
    steps_per_second: f64,
) -> Result<WaypointSet> {
    if t_period <= 0.0 || n_waypoints < 2 || steps_per_second <= 0.0 {
        return Err(Error::InvalidConfig {
            message: "lissajous sampling needs T > 0, n >= 2, positive rate".into(),
        });
    }
    let n_steps = (t_period * steps_per_second).round();
    let times: Vec<f64> = (0..n_waypoints)
        .map(|j| {
            let idx = (j as f64 * n_steps / (n_waypoints - 1) as f64).round();
            idx / steps_per_second
        })
        .collect();
    let points = times
        .iter()
        .map(|&t| {
            let phase = 2.0 * std::f64::consts::PI * t / t_period;
            vec![
                amps.x * (1.0 - phase.cos()),
                amps.y * phase.sin(),
                amps.z * phase.sin(),
                amps.yaw * phase.sin(),
            ]
        })
        .collect();
    WaypointSet::new(times, points)
}

/// Linear map Phi with sample(poly) = Phi * coeff_vector(poly): rows run
/// time-major over the grid (all dims of r_0, then r_1, ...), columns follow
/// the dimension-major coefficient stacking.
pub fn basis_matrix(proto: &PiecewisePolynomial, times: &[f64]) -> Result<DMatrix<f64>> {
    let m: usize = proto.segments[0].coeffs[0].len();
    for seg in &proto.segments {
        if seg.coeffs[0].len() != m {
            return Err(Error::InvalidConfig {
                message: "basis_matrix requires a uniform segment order".into(),
            });
        }
    }
    let s_count = proto.segments.len();
    let dims = proto.dims;
    let mut phi = DMatrix::zeros(times.len() * dims, dims * s_count * m);
    for (i, &t) in times.iter().enumerate() {
        let s = proto.segment_index(t)?;
        let seg = &proto.segments[s];
        let tau = (t - seg.t0).clamp(0.0, seg.t1 - seg.t0);
        for d in 0..dims {
            for j in 0..m {
                phi[(i * dims + d, d * (s_count * m) + s * m + j)] = tau.powi(j as i32);
            }
        }
    }
    Ok(phi)
}
