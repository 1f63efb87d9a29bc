//! Avatar-car plant.
//!
//! The nonlinear kinematic model integrated with forward Euler, its
//! linearization/discretization for the MPC, and the decoupled scalar error
//! subsystems used by the stability analysis:
//!
//! ```text
//! px' = cos(theta) v      theta' = tan(delta) v / L
//! py' = sin(theta) v      v'     = -F + alpha T
//! ```

use nalgebra::{Matrix4, Matrix4x2, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{domain, ensure_finite, Result};

/// Exponential divergence factor of the velocity and heading errors (1/s).
pub const DEFAULT_LAMBDA: f64 = 0.084;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VehicleState {
    pub px: f64,
    pub py: f64,
    pub theta: f64,
    pub v: f64,
}

impl VehicleState {
    pub const fn new(px: f64, py: f64, theta: f64, v: f64) -> Self {
        Self { px, py, theta, v }
    }

    pub fn to_vector(self) -> Vector4<f64> {
        Vector4::new(self.px, self.py, self.theta, self.v)
    }

    pub fn from_vector(x: &Vector4<f64>) -> Self {
        Self::new(x[0], x[1], x[2], x[3])
    }

    pub fn is_finite(&self) -> bool {
        self.px.is_finite() && self.py.is_finite() && self.theta.is_finite() && self.v.is_finite()
    }
}

/// Throttle `t` and steering angle `delta` (rad).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlInput {
    pub t: f64,
    pub delta: f64,
}

impl ControlInput {
    pub const ZERO: ControlInput = ControlInput { t: 0.0, delta: 0.0 };

    pub const fn new(t: f64, delta: f64) -> Self {
        Self { t, delta }
    }

    pub fn to_vector(self) -> Vector2<f64> {
        Vector2::new(self.t, self.delta)
    }

    pub fn from_vector(u: &Vector2<f64>) -> Self {
        Self::new(u[0], u[1])
    }

    pub fn get(&self, element: usize) -> f64 {
        match element {
            0 => self.t,
            _ => self.delta,
        }
    }

    pub fn set(&mut self, element: usize, value: f64) {
        match element {
            0 => self.t = value,
            _ => self.delta = value,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantParams {
    /// Car length L (m).
    pub length: f64,
    /// Car width W (m).
    pub width: f64,
    pub l_f: f64,
    pub l_r: f64,
    /// Acceleration factor alpha.
    pub alpha: f64,
    /// Constant drag force F.
    pub drag: f64,
    /// Sample period (s).
    pub ts: f64,
}

impl Default for PlantParams {
    fn default() -> Self {
        Self {
            length: 5.0,
            width: 2.0,
            l_f: 2.5,
            l_r: 2.5,
            alpha: 0.5,
            drag: 0.0,
            ts: 0.02,
        }
    }
}

impl PlantParams {
    pub fn validate(&self) -> Result<()> {
        ensure_finite(
            "plant parameters",
            &[self.length, self.width, self.l_f, self.l_r, self.alpha, self.drag, self.ts],
        )?;
        if self.length <= 0.0 || self.width <= 0.0 || self.ts <= 0.0 {
            return Err(domain("plant length, width and ts must be positive"));
        }
        if self.alpha <= 0.0 {
            return Err(domain("acceleration factor must be positive"));
        }
        if self.drag < 0.0 {
            return Err(domain("drag force must be non-negative"));
        }
        Ok(())
    }

    /// Reference input `[F/alpha, 0]` that holds speed constant.
    pub fn reference_input(&self) -> ControlInput {
        ControlInput::new(self.drag / self.alpha, 0.0)
    }
}

fn derivative(x: &VehicleState, u: &ControlInput, p: &PlantParams) -> Vector4<f64> {
    Vector4::new(
        x.theta.cos() * x.v,
        x.theta.sin() * x.v,
        u.delta.tan() / p.length * x.v,
        -p.drag + p.alpha * u.t,
    )
}

/// One forward-Euler step of length `ts`; speed is clamped at zero.
pub fn step_kinematic(
    state: &VehicleState,
    input: &ControlInput,
    params: &PlantParams,
) -> Result<VehicleState> {
    if !state.is_finite() {
        return Err(domain("non-finite vehicle state"));
    }
    ensure_finite("control input", &[input.t, input.delta])?;
    let next = state.to_vector() + derivative(state, input, params) * params.ts;
    let mut out = VehicleState::from_vector(&next);
    out.v = out.v.max(0.0);
    if !out.is_finite() {
        return Err(domain("state became non-finite (steering at tan singularity?)"));
    }
    Ok(out)
}

/// Discrete LTV model `x(k+1) = A x(k) + B u(k) + d` around one operating point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearModel {
    pub a: Matrix4<f64>,
    pub b: Matrix4x2<f64>,
    pub d: Vector4<f64>,
}

impl LinearModel {
    pub fn propagate(&self, x: &Vector4<f64>, u: &Vector2<f64>) -> Vector4<f64> {
        self.a * x + self.b * u + self.d
    }
}

/// Euler discretization of the Jacobian linearization at `(state, input)`.
///
/// The affine term is chosen so the model reproduces the Euler step exactly
/// at the expansion point.
pub fn linearize_discretize(
    state: &VehicleState,
    input: &ControlInput,
    params: &PlantParams,
) -> Result<LinearModel> {
    if !state.is_finite() {
        return Err(domain("non-finite vehicle state"));
    }
    ensure_finite("control input", &[input.t, input.delta])?;
    if input.delta.abs() >= std::f64::consts::FRAC_PI_2 {
        return Err(domain("steering angle at or beyond the tan singularity"));
    }
    let ts = params.ts;
    let (s, c) = state.theta.sin_cos();
    let tan_d = input.delta.tan();
    let sec2 = 1.0 + tan_d * tan_d;

    let mut jx = Matrix4::zeros();
    jx[(0, 2)] = -s * state.v;
    jx[(0, 3)] = c;
    jx[(1, 2)] = c * state.v;
    jx[(1, 3)] = s;
    jx[(2, 3)] = tan_d / params.length;

    let mut ju = Matrix4x2::zeros();
    ju[(2, 1)] = state.v * sec2 / params.length;
    ju[(3, 0)] = params.alpha;

    let a = Matrix4::identity() + jx * ts;
    let b = ju * ts;
    let x = state.to_vector();
    let u = input.to_vector();
    let d = derivative(state, input, params) * ts - (a - Matrix4::identity()) * x - b * u;
    Ok(LinearModel { a, b, d })
}

/// Scalar continuous-time error dynamics `e' = a e + b u`, sampled at `ts`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarErrorSystem {
    pub a: f64,
    pub b: f64,
    pub lambda: f64,
    pub ts: f64,
}

/// Velocity-error (throttle) and heading-error (steering) subsystems.
pub fn build_error_subsystems(
    v0: f64,
    params: &PlantParams,
    lambda: f64,
) -> Result<(ScalarErrorSystem, ScalarErrorSystem)> {
    if !(v0 > 0.0) {
        return Err(domain("nominal speed must be positive"));
    }
    let s1 = ScalarErrorSystem {
        a: lambda,
        b: params.alpha,
        lambda,
        ts: params.ts,
    };
    let s2 = ScalarErrorSystem {
        a: lambda,
        b: v0 / params.length,
        lambda,
        ts: params.ts,
    };
    Ok((s1, s2))
}

/// Exact zero-order discretization of the closed loop `u = -k e`.
pub fn discretize_mode(sys: &ScalarErrorSystem, feedback_gain: f64) -> f64 {
    ((sys.a - sys.b * feedback_gain) * sys.ts).exp()
}

/// Result of fitting an exponential to a linearly diverging error.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LambdaFit {
    pub lambda: f64,
    pub x0: f64,
    pub residual: f64,
}

/// Sum of squared differences between `x0 e^{lambda t}` and `x0 + a_cc t`
/// sampled every `ts` over `[0, horizon]`.
pub fn lambda_residual(a_cc: f64, horizon: f64, ts: f64, x0: f64, lambda: f64) -> f64 {
    let n = (horizon / ts).round() as usize;
    (0..=n)
        .map(|i| {
            let t = i as f64 * ts;
            let e = x0 * (lambda * t).exp() - (x0 + a_cc * t);
            e * e
        })
        .sum()
}

fn golden_min(lo: f64, hi: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() <= 1e-13 * (1.0 + a.abs() + b.abs()) {
            break;
        }
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Least-squares exponential fit of the linear error divergence.
///
/// `x0` is fitted jointly over `(0, x0_max]`; the joint problem has its
/// infimum at unbounded `x0`, so the cap fixes the error scale. Diagnostic
/// only: downstream modules use [`DEFAULT_LAMBDA`].
pub fn fit_lambda(a_cc: f64, horizon: f64, ts: f64, x0_max: f64) -> Result<LambdaFit> {
    if !(a_cc > 0.0 && horizon > 0.0 && ts > 0.0 && x0_max > 0.0) {
        return Err(domain("lambda fit needs positive a_cc, horizon, ts and x0 cap"));
    }
    let lambda_hi = 10.0 / horizon + a_cc / x0_max;
    let best_lambda = |x0: f64| golden_min(0.0, lambda_hi, |l| lambda_residual(a_cc, horizon, ts, x0, l));
    let x0 = golden_min(1e-9 * x0_max, x0_max, |x0| {
        lambda_residual(a_cc, horizon, ts, x0, best_lambda(x0))
    });
    let lambda = best_lambda(x0);
    Ok(LambdaFit {
        lambda,
        x0,
        residual: lambda_residual(a_cc, horizon, ts, x0, lambda),
    })
}
