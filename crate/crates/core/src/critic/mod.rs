//! Flow-matching critic and the monolithic baselines it is compared against.
//!
//! A [`VelocityField`] predicts `v(t, z | s, a)`. The Q-value for one noise sample
//! `z(0) ~ U[l, u]` is the Euler integral `z(K)` with
//! `z(i+1) = z(i) + v(i/K, z(i) | s, a) / K`; the deployed estimate averages
//! several noise samples ([`q_value`]).

mod config;
mod diagnostics;
mod field;
mod loss;
mod monolithic;

pub use config::{FlowCriticConfig, FlowLossKind, NoiseInterval, ValueRange};
pub use diagnostics::{advantage_deviation, curvature};
pub use field::{
    integrate, q_value, ConstantField, FieldLayout, FlowNet, FnField, Trajectories, Velocity,
    VelocityField,
};
pub use loss::{
    bootstrap_targets, draw_noise, floq_loss, flow_matching_loss, flow_matching_loss_value,
    t0_only_loss, LossAndGrad,
};
pub use monolithic::{monolithic_targets, monolithic_td_loss, CriticEnsemble, MonolithicCritic};

use ndarray::{concatenate, Array2, ArrayView2, Axis};

/// `[a | b]` column-wise.
pub fn concat_cols(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    concatenate(Axis(1), &[a, b]).expect("row counts agree")
}

/// Every row of `x` repeated `times` times consecutively.
pub fn repeat_rows(x: ArrayView2<f64>, times: usize) -> Array2<f64> {
    let mut out = Array2::zeros((x.nrows() * times, x.ncols()));
    for (i, row) in x.rows().into_iter().enumerate() {
        for j in 0..times {
            out.row_mut(i * times + j).assign(&row);
        }
    }
    out
}
