//! Built-in benchmark plants and their cost weights.

use nalgebra::DMatrix;

use crate::dynamics::quad::QuadParams;
use crate::lqr::{CostWeights, LtiSystem};

/// Boeing 747 lateral-directional model at cruise.
///
/// States: sideslip β, yaw rate r, roll rate p, roll angle φ. Input: rudder.
pub fn b747_lateral() -> LtiSystem {
    #[rustfmt::skip]
    let a = DMatrix::from_row_slice(4, 4, &[
        -0.0558, -0.9968,  0.0802, 0.0415,
         0.598,  -0.115,  -0.0318, 0.0,
        -3.05,    0.388,  -0.4650, 0.0,
         0.0,     0.0805,  1.0,    0.0,
    ]);
    let b = DMatrix::from_column_slice(4, 1, &[0.00729, -0.475, 0.153, 0.0]);
    LtiSystem::full_state(a, b).expect("747 model dimensions are consistent")
}

/// Index of the roll angle in the 747 state vector.
pub const B747_ROLL: usize = 3;

pub fn b747_weights() -> CostWeights {
    CostWeights::diagonal(&[10.0, 1.0, 1.0, 10.0], &[1.0]).expect("valid 747 weights")
}

/// Published ARE gain for the 747 benchmark, four significant digits.
pub const B747_LQR_GAIN: [f64; 4] = [9.3477, -7.4703, -3.3029, -2.9165];

/// Published model-free gain for the 747 benchmark.
pub const B747_MODEL_FREE_GAIN: [f64; 4] = [9.2236, -6.6657, -3.1473, -2.9555];

/// Weights for the reduced quadcopter attitude model (φ, θ, p, q)/(τ_r, τ_p).
pub fn quad_attitude_weights() -> CostWeights {
    CostWeights::diagonal(&[100.0, 100.0, 1.0, 1.0], &[0.1, 0.1]).expect("valid quad weights")
}

/// Published ARE gain for the quadcopter attitude model (rows τ_r, τ_p).
#[rustfmt::skip]
pub const QUAD_LQR_GAIN: [[f64; 4]; 2] = [
    [31.6228, 0.0, 10.2900, 0.0],
    [0.0, 31.6228, 0.0, 10.0965],
];

/// Published model-free gain for the quadcopter attitude model.
#[rustfmt::skip]
pub const QUAD_MODEL_FREE_GAIN: [[f64; 4]; 2] = [
    [31.8563, 0.0, 10.2369, 0.0],
    [0.0, 31.5142, 0.0, 10.2665],
];

pub fn x500() -> QuadParams {
    QuadParams::x500()
}
