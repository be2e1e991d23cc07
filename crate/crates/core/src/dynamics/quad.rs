//! Nonlinear 6DOF quadcopter: rigid-body equations of motion, throttle/torque
//! mixer, thrust/torque coefficient model and the hover linearization.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3, Vector4};

use super::{integrate, linearize, step_count, Trajectory};
use crate::lqr::{GainMatrix, LtiSystem};
use crate::{Error, Result};

/// Indices of (φ, θ, p, q) in the 12-state vector.
pub const ATTITUDE_STATES: [usize; 4] = [6, 7, 9, 10];
/// Indices of (τ_r, τ_p) in the (Γ, τ_r, τ_p, τ_y) command.
pub const ATTITUDE_INPUTS: [usize; 2] = [1, 2];

/// Margin from ±π/2 inside which the Euler kinematics are rejected.
const GIMBAL_MARGIN: f64 = 1e-3;

/// Physical and input-scaling constants.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadParams {
    /// kg
    pub mass: f64,
    /// kg·m²
    pub ixx: f64,
    pub iyy: f64,
    pub izz: f64,
    /// Arm length, m.
    pub arm: f64,
    /// Thrust coefficient, N·s²/rad².
    pub c_t: f64,
    /// Torque coefficient, N·m·s²/rad².
    pub c_q: f64,
    /// Motor speed bounds, rad/s.
    pub min_speed: f64,
    pub max_speed: f64,
    /// Mixer gains, rad/s per unit command.
    pub k_throttle: f64,
    pub k_roll: f64,
    pub k_pitch: f64,
    pub k_yaw: f64,
    /// m/s²
    pub gravity: f64,
    /// First-order ESC lag, s; zero means achieved speed equals command.
    pub esc_time_constant: f64,
    /// Quadratic drag factors `½ρS·C_d` per body axis, kg/m.
    pub drag: [f64; 3],
}

impl QuadParams {
    /// Holybro X500 V2 constants with throttle gain at the top motor speed
    /// and 50 rad/s per unit torque command.
    pub fn x500() -> Self {
        Self {
            mass: 1.3269,
            ixx: 0.01295,
            iyy: 0.01244,
            izz: 0.01571,
            arm: 0.25,
            c_t: 3.1539e-5,
            c_q: 4.3543e-9,
            min_speed: 115.0,
            max_speed: 907.0,
            k_throttle: 907.0,
            k_roll: 50.0,
            k_pitch: 50.0,
            k_yaw: 50.0,
            gravity: 9.81,
            esc_time_constant: 0.0,
            drag: [0.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("mass", self.mass),
            ("ixx", self.ixx),
            ("iyy", self.iyy),
            ("izz", self.izz),
            ("arm", self.arm),
            ("c_t", self.c_t),
            ("c_q", self.c_q),
            ("max_speed", self.max_speed),
            ("k_throttle", self.k_throttle),
            ("k_roll", self.k_roll),
            ("k_pitch", self.k_pitch),
            ("k_yaw", self.k_yaw),
            ("gravity", self.gravity),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidInput(format!("quad parameter {name} must be positive, got {v}")));
            }
        }
        if !(self.min_speed >= 0.0 && self.min_speed < self.max_speed) {
            return Err(Error::InvalidInput(format!(
                "motor speed bounds [{}, {}] are not ordered",
                self.min_speed, self.max_speed
            )));
        }
        if !(self.esc_time_constant >= 0.0) || self.drag.iter().any(|&d| !(d >= 0.0)) {
            return Err(Error::InvalidInput(
                "ESC time constant and drag factors must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn inertia(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&Vector3::new(self.ixx, self.iyy, self.izz))
    }

    /// Motor speed at which four rotors balance the weight: `mg = 4 C_T w²`.
    pub fn hover_speed(&self) -> f64 {
        (self.mass * self.gravity / (4.0 * self.c_t)).sqrt()
    }

    /// Throttle command that produces the hover speed.
    pub fn hover_throttle(&self) -> f64 {
        self.hover_speed() / self.k_throttle
    }

    pub fn hover_command(&self) -> Vector4<f64> {
        Vector4::new(self.hover_throttle(), 0.0, 0.0, 0.0)
    }
}

/// 12-dimensional state: NED position, body velocity, Euler angles (φ, θ, ψ),
/// body rates (p, q, r).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QuadState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub attitude: Vector3<f64>,
    pub rates: Vector3<f64>,
}

impl QuadState {
    pub fn to_vector(&self) -> DVector<f64> {
        let mut v = DVector::zeros(12);
        v.rows_mut(0, 3).copy_from(&self.position);
        v.rows_mut(3, 3).copy_from(&self.velocity);
        v.rows_mut(6, 3).copy_from(&self.attitude);
        v.rows_mut(9, 3).copy_from(&self.rates);
        v
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        if v.len() != 12 {
            return Err(Error::DimensionMismatch(format!(
                "quad state has 12 entries, got {}",
                v.len()
            )));
        }
        Ok(Self {
            position: Vector3::new(v[0], v[1], v[2]),
            velocity: Vector3::new(v[3], v[4], v[5]),
            attitude: Vector3::new(v[6], v[7], v[8]),
            rates: Vector3::new(v[9], v[10], v[11]),
        })
    }

    /// Level hover at the origin.
    pub fn level() -> Self {
        Self::default()
    }
}

/// Earth-to-body direction cosine matrix for 3-2-1 Euler angles.
pub fn earth_to_body(attitude: &Vector3<f64>) -> Matrix3<f64> {
    let (sf, cf) = attitude[0].sin_cos();
    let (st, ct) = attitude[1].sin_cos();
    let (sp, cp) = attitude[2].sin_cos();
    Matrix3::new(
        ct * cp,
        ct * sp,
        -st,
        sf * st * cp - cf * sp,
        sf * st * sp + cf * cp,
        sf * ct,
        cf * st * cp + sf * sp,
        cf * st * sp - sf * cp,
        cf * ct,
    )
}

/// Maps body rates to Euler-angle rates.
pub fn rotational_kinematics(attitude: &Vector3<f64>) -> Result<Matrix3<f64>> {
    let theta = attitude[1];
    if theta.abs() >= std::f64::consts::FRAC_PI_2 - GIMBAL_MARGIN {
        return Err(Error::GimbalLock { theta });
    }
    let (sf, cf) = attitude[0].sin_cos();
    let (st, ct) = theta.sin_cos();
    let tt = st / ct;
    Ok(Matrix3::new(
        1.0,
        sf * tt,
        cf * tt,
        0.0,
        cf,
        -sf,
        0.0,
        sf / ct,
        cf / ct,
    ))
}

/// State derivative plus whether the supplied motor speeds left `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadDerivative {
    pub derivative: QuadState,
    pub saturated: bool,
}

/// Rigid-body equations of motion driven by four achieved motor speeds.
///
/// Speeds are clamped to `[0, max]` (a stopped motor is physical); leaving
/// `[min, max]` sets the saturation flag.
pub fn quad_derivative(
    state: &QuadState,
    speeds: &Vector4<f64>,
    params: &QuadParams,
) -> Result<QuadDerivative> {
    let w_mat = rotational_kinematics(&state.attitude)?;
    let saturated = speeds
        .iter()
        .any(|&w| w < params.min_speed || w > params.max_speed);
    let w = speeds.map(|w| w.clamp(0.0, params.max_speed));
    let thrusts = w.map(|w| params.c_t * w * w);
    let torques = w.map(|w| params.c_q * w * w);
    let total = thrusts.sum();

    let arm = params.arm * std::f64::consts::FRAC_1_SQRT_2;
    let moment = Vector3::new(
        arm * (-thrusts[0] + thrusts[1] + thrusts[2] - thrusts[3]),
        arm * (thrusts[0] + thrusts[1] - thrusts[2] - thrusts[3]),
        torques[0] - torques[1] + torques[2] - torques[3],
    );

    let dcm = earth_to_body(&state.attitude);
    let v = state.velocity;
    let drag = Vector3::from_fn(|i, _| -params.drag[i] * v[i] * v[i].abs());
    let force = dcm * Vector3::new(0.0, 0.0, params.mass * params.gravity)
        + drag
        + Vector3::new(0.0, 0.0, -total);

    let omega = state.rates;
    let inertia = params.inertia();
    let omega_dot = Vector3::new(
        1.0 / params.ixx,
        1.0 / params.iyy,
        1.0 / params.izz,
    )
    .component_mul(&(moment - omega.cross(&(inertia * omega))));

    Ok(QuadDerivative {
        derivative: QuadState {
            position: dcm.transpose() * v,
            velocity: force / params.mass - omega.cross(&v),
            attitude: w_mat * omega,
            rates: omega_dot,
        },
        saturated,
    })
}

/// Motor speed commands and whether any was clamped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixerOutput {
    pub speeds: Vector4<f64>,
    pub saturated: bool,
}

/// Unclamped mixer action on (Γ, τ_r, τ_p, τ_y).
pub fn mixer_matrix(params: &QuadParams) -> nalgebra::Matrix4<f64> {
    let (g, r, p, y) = (params.k_throttle, params.k_roll, params.k_pitch, params.k_yaw);
    #[rustfmt::skip]
    let m = nalgebra::Matrix4::new(
        g, -r,  p,  y,
        g,  r,  p, -y,
        g,  r, -p,  y,
        g, -r, -p, -y,
    );
    m
}

/// Maps (Γ, τ_r, τ_p, τ_y) to motor speed commands clamped to `[min, max]`.
pub fn mixer(cmd: &Vector4<f64>, params: &QuadParams) -> MixerOutput {
    let raw = mixer_matrix(params) * cmd;
    let speeds = raw.map(|w| w.clamp(params.min_speed, params.max_speed));
    MixerOutput {
        saturated: speeds != raw,
        speeds,
    }
}

fn vector4(v: &DVector<f64>) -> Vector4<f64> {
    Vector4::new(v[0], v[1], v[2], v[3])
}

/// RK4 simulation under a (Γ, τ_r, τ_p, τ_y) command signal.
///
/// With a positive ESC time constant the achieved motor speeds are carried as
/// four extra internal states, initialised at the first command.
pub fn simulate_quad(
    x0: &QuadState,
    cmd: &dyn Fn(f64) -> Vector4<f64>,
    t_final: f64,
    dt: f64,
    params: &QuadParams,
) -> Result<Trajectory> {
    params.validate()?;
    let tau = params.esc_time_constant;
    let lagged = tau > 0.0;
    let rhs = |t: f64, x: &DVector<f64>| -> Result<DVector<f64>> {
        let state = QuadState::from_slice(&x.as_slice()[..12])?;
        let commanded = mixer(&cmd(t), params).speeds;
        let achieved = if lagged {
            Vector4::new(x[12], x[13], x[14], x[15])
        } else {
            commanded
        };
        let d = quad_derivative(&state, &achieved, params)?.derivative.to_vector();
        if !lagged {
            return Ok(d);
        }
        let mut out = DVector::zeros(16);
        out.rows_mut(0, 12).copy_from(&d);
        out.rows_mut(12, 4)
            .copy_from(&((commanded - achieved) / tau));
        Ok(out)
    };
    let mut start = x0.to_vector();
    if lagged {
        let w0 = mixer(&cmd(0.0), params).speeds;
        start = start.push(w0[0]).push(w0[1]).push(w0[2]).push(w0[3]);
    }
    let steps = step_count(t_final, dt)?;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = DMatrix::zeros(steps + 1, 12);
    let mut inputs = DMatrix::zeros(steps + 1, 4);
    integrate(&rhs, start, t_final, dt, 1, |k, t, x| {
        times.push(t);
        states.set_row(k, &x.rows(0, 12).transpose());
        inputs.set_row(k, &cmd(t).transpose());
        Ok(())
    })?;
    Trajectory::new(times, states, inputs)
}

/// Full 12-state model linearized at level hover with inputs (Γ, τ_r, τ_p, τ_y).
pub fn hover_linearization(params: &QuadParams) -> Result<LtiSystem> {
    params.validate()?;
    let f = |x: &DVector<f64>, u: &DVector<f64>| -> Result<DVector<f64>> {
        let state = QuadState::from_slice(x.as_slice())?;
        let speeds = mixer_matrix(params) * vector4(u);
        Ok(quad_derivative(&state, &speeds, params)?.derivative.to_vector())
    };
    let x_eq = QuadState::level().to_vector();
    let u_eq = DVector::from_column_slice(params.hover_command().as_slice());
    linearize(&f, &x_eq, &u_eq, 1e-6)
}

/// Hover linearization reduced to (φ, θ, p, q) driven by (τ_r, τ_p).
pub fn attitude_model(params: &QuadParams) -> Result<LtiSystem> {
    hover_linearization(params)?.reduce(&ATTITUDE_STATES, &ATTITUDE_INPUTS)
}

/// Attitude loop: `(τ_r, τ_p) = −K(x_att − x_ref)`, hover throttle, zero yaw command.
pub(super) fn simulate_attitude_loop(
    params: &QuadParams,
    k: &GainMatrix,
    x0: &DVector<f64>,
    x_ref: &dyn Fn(f64) -> DVector<f64>,
    t_final: f64,
    dt: f64,
) -> Result<Trajectory> {
    params.validate()?;
    if k.matrix().shape() != (2, 4) {
        return Err(Error::DimensionMismatch(format!(
            "quad attitude gain must be 2×4, got {:?}",
            k.matrix().shape()
        )));
    }
    if x0.len() != 12 {
        return Err(Error::DimensionMismatch(format!(
            "quad initial state has 12 entries, got {}",
            x0.len()
        )));
    }
    let throttle = params.hover_throttle();
    let command = |t: f64, x: &DVector<f64>| -> Vector4<f64> {
        let att = DVector::from_iterator(4, ATTITUDE_STATES.iter().map(|&i| x[i]));
        let tau = k.control(&(att - x_ref(t)));
        Vector4::new(throttle, tau[0], tau[1], 0.0)
    };
    let rhs = |t: f64, x: &DVector<f64>| -> Result<DVector<f64>> {
        let state = QuadState::from_slice(x.as_slice())?;
        let speeds = mixer(&command(t, x), params).speeds;
        Ok(quad_derivative(&state, &speeds, params)?.derivative.to_vector())
    };
    let steps = step_count(t_final, dt)?;
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = DMatrix::zeros(steps + 1, 12);
    let mut inputs = DMatrix::zeros(steps + 1, 4);
    integrate(&rhs, x0.clone(), t_final, dt, 1, |i, t, x| {
        times.push(t);
        states.set_row(i, &x.transpose());
        inputs.set_row(i, &command(t, x).transpose());
        Ok(())
    })?;
    Trajectory::new(times, states, inputs)
}
