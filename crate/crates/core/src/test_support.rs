//! Helpers shared between the module test suites.

use crate::nn::MlpModel;

/// A handcrafted surrogate that is exactly affine over the engine
/// envelope: all rectifier units get a large positive bias and small
/// input weights, so no unit ever switches off. Outputs move with
/// intake pressure, flows, and fuel, giving model fits real signal.
pub(crate) fn affine_surrogate() -> MlpModel {
    let mut m = MlpModel::zeros(&[10, 4, 2]).unwrap();
    // Channels: 0 rail, 1 timing, 2 fuel, 3 torque, 4 speed, 5 p_im,
    // 6 p_ex, 7 w_c, 8 egr_pos, 9 vgt_pos.
    m.weights[0][(0, 5)] = 0.5;
    m.weights[0][(1, 2)] = 1.0;
    m.weights[0][(1, 4)] = 0.05;
    m.weights[0][(2, 7)] = 2.0;
    m.weights[0][(3, 6)] = 0.4;
    m.weights[0][(3, 1)] = -1.0;
    m.biases[0].fill(500.0);
    m.weights[1][(0, 0)] = 2.0;
    m.weights[1][(0, 1)] = -1.0;
    m.weights[1][(0, 2)] = 0.8;
    m.weights[1][(0, 3)] = -0.5;
    m.weights[1][(1, 0)] = -0.8;
    m.weights[1][(1, 1)] = 1.0;
    m.weights[1][(1, 3)] = 0.2;
    m
}
