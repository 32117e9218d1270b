use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis, Zip};
use rand::Rng;

use super::{gelu, gelu_grad};
use crate::error::{ensure_finite, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Gelu,
    Identity,
}

/// Fully connected network. Hidden layers use `hidden_activation`, the output
/// layer is always linear.
///
/// Layout of `params`, layer by layer: a row-major `[fan_in x fan_out]` weight
/// block followed by a `fan_out` bias block.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    hidden_activation: Activation,
    params: Vec<f64>,
}

/// Activations recorded by [`Mlp::forward_train`] for a later [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct Tape {
    input: Array2<f64>,
    pre: Vec<Array2<f64>>,
    post: Vec<Array2<f64>>,
}

impl Tape {
    pub fn output(&self) -> &Array2<f64> {
        self.post
            .last()
            .expect("tape of a network with at least one layer")
    }
}

#[derive(Debug, Clone)]
pub struct Gradients {
    /// Same layout as [`Mlp::params`].
    pub params: Vec<f64>,
    /// `[batch x input_dim]`.
    pub input: Array2<f64>,
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(Error::InvalidParameter(format!(
            "a network needs at least input and output sizes, got {sizes:?}"
        )));
    }
    if sizes.iter().any(|&s| s == 0) {
        return Err(Error::InvalidParameter(format!(
            "layer sizes must be positive, got {sizes:?}"
        )));
    }
    Ok(())
}

impl Mlp {
    /// Uniform initialization in `±sqrt(1 / fan_in)` for weights and biases.
    pub fn new(sizes: &[usize], hidden_activation: Activation, rng: &mut impl Rng) -> Result<Self> {
        validate_sizes(sizes)?;
        let mut params = Vec::with_capacity(param_count(sizes));
        for w in sizes.windows(2) {
            let bound = (1.0 / w[0] as f64).sqrt();
            for _ in 0..(w[0] * w[1] + w[1]) {
                params.push(rng.random_range(-bound..=bound));
            }
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            hidden_activation,
            params,
        })
    }

    pub fn zeros(sizes: &[usize], hidden_activation: Activation) -> Result<Self> {
        validate_sizes(sizes)?;
        Ok(Self {
            sizes: sizes.to_vec(),
            hidden_activation,
            params: vec![0.0; param_count(sizes)],
        })
    }

    pub fn from_params(
        sizes: &[usize],
        hidden_activation: Activation,
        params: Vec<f64>,
    ) -> Result<Self> {
        validate_sizes(sizes)?;
        let expected = param_count(sizes);
        if params.len() != expected {
            return Err(Error::dims("network parameters", expected, params.len()));
        }
        ensure_finite(&params, || "network parameters".to_string())?;
        Ok(Self {
            sizes: sizes.to_vec(),
            hidden_activation,
            params,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Direct parameter access for optimizers. Callers must keep values finite.
    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layer_offset(&self, layer: usize) -> usize {
        param_count(&self.sizes[..=layer])
    }

    pub fn weights(&self, layer: usize) -> ArrayView2<'_, f64> {
        let (fan_in, fan_out) = (self.sizes[layer], self.sizes[layer + 1]);
        let off = self.layer_offset(layer);
        ArrayView2::from_shape((fan_in, fan_out), &self.params[off..off + fan_in * fan_out])
            .expect("weight block shape")
    }

    pub fn bias(&self, layer: usize) -> ArrayView1<'_, f64> {
        let (fan_in, fan_out) = (self.sizes[layer], self.sizes[layer + 1]);
        let off = self.layer_offset(layer) + fan_in * fan_out;
        ArrayView1::from(&self.params[off..off + fan_out])
    }

    fn check_input(&self, input: &ArrayView2<f64>) -> Result<()> {
        if input.ncols() != self.input_dim() {
            return Err(Error::dims(
                "network input",
                self.input_dim(),
                input.ncols(),
            ));
        }
        Ok(())
    }

    fn activate(&self, layer: usize, pre: &Array2<f64>) -> Array2<f64> {
        if layer + 1 == self.num_layers() || self.hidden_activation == Activation::Identity {
            pre.clone()
        } else {
            pre.mapv(gelu)
        }
    }

    fn affine(&self, layer: usize, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weights(layer));
        z += &self.bias(layer);
        z
    }

    /// Batched forward pass, one sample per row.
    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&input)?;
        self.forward_from_first(self.affine(0, &input))
    }

    /// Finishes a forward pass from the first layer's pre-activation
    /// (`input . W0 + b0`), for callers that assemble it in parts.
    pub fn forward_from_first(&self, pre: Array2<f64>) -> Result<Array2<f64>> {
        if pre.ncols() != self.sizes[1] {
            return Err(Error::dims(
                "first-layer pre-activation",
                self.sizes[1],
                pre.ncols(),
            ));
        }
        let mut x = pre;
        for layer in 1..self.num_layers() {
            let a = self.activate(layer - 1, &x);
            x = self.affine(layer, &a.view());
        }
        if x.iter().all(|v| v.is_finite()) {
            Ok(x)
        } else {
            Err(Error::NonFinite("network output".to_string()))
        }
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, input.len()), input).expect("row view");
        Ok(self.forward_batch(view)?.into_raw_vec_and_offset().0)
    }

    /// Forward pass that keeps every intermediate activation for [`Mlp::backward`].
    pub fn forward_train(&self, input: ArrayView2<f64>) -> Result<Tape> {
        self.check_input(&input)?;
        let mut pre = Vec::with_capacity(self.num_layers());
        let mut post: Vec<Array2<f64>> = Vec::with_capacity(self.num_layers());
        for layer in 0..self.num_layers() {
            let z = match post.last() {
                None => self.affine(0, &input),
                Some(prev) => self.affine(layer, &prev.view()),
            };
            let a = self.activate(layer, &z);
            pre.push(z);
            post.push(a);
        }
        let out = post.last().unwrap();
        if !out.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("network output".to_string()));
        }
        Ok(Tape {
            input: input.to_owned(),
            pre,
            post,
        })
    }

    /// Reverse-mode pass for the loss whose gradient w.r.t. the network output is
    /// `out_grad` (`[batch x output_dim]`). Parameter gradients are summed over rows.
    pub fn backward(&self, tape: &Tape, out_grad: ArrayView2<f64>) -> Result<Gradients> {
        let batch = tape.input.nrows();
        if out_grad.dim() != (batch, self.output_dim()) {
            return Err(Error::dims(
                "output gradient columns",
                self.output_dim(),
                out_grad.ncols(),
            ));
        }
        let mut grads = vec![0.0; self.params.len()];
        let mut delta = out_grad.to_owned();
        for layer in (0..self.num_layers()).rev() {
            let is_hidden = layer + 1 < self.num_layers();
            if is_hidden && self.hidden_activation == Activation::Gelu {
                Zip::from(&mut delta)
                    .and(&tape.pre[layer])
                    .for_each(|d, &z| *d *= gelu_grad(z));
            }
            let prev = if layer == 0 {
                tape.input.view()
            } else {
                tape.post[layer - 1].view()
            };
            let (fan_in, fan_out) = (self.sizes[layer], self.sizes[layer + 1]);
            let off = self.layer_offset(layer);
            let (w_block, rest) = grads[off..].split_at_mut(fan_in * fan_out);
            let mut dw = ArrayViewMut2::from_shape((fan_in, fan_out), w_block).unwrap();
            dw.assign(&prev.t().dot(&delta));
            let mut db = ArrayViewMut1::from(&mut rest[..fan_out]);
            db.assign(&delta.sum_axis(Axis(0)));
            delta = delta.dot(&self.weights(layer).t());
        }
        ensure_finite(&grads, || "parameter gradients".to_string())?;
        if !delta.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("input gradients".to_string()));
        }
        Ok(Gradients {
            params: grads,
            input: delta,
        })
    }

    /// Convenience single-sample backward (recomputes the forward pass).
    pub fn backward_one(&self, input: &[f64], out_grad: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let x = ArrayView2::from_shape((1, input.len()), input).expect("row view");
        let tape = self.forward_train(x)?;
        let g = ArrayView2::from_shape((1, out_grad.len()), out_grad)
            .map_err(|_| Error::dims("output gradient", self.output_dim(), out_grad.len()))?;
        let grads = self.backward(&tape, g)?;
        Ok((grads.params, grads.input.into_raw_vec_and_offset().0))
    }

    /// Sum of squares of all parameters.
    pub fn param_norm_sq(&self) -> f64 {
        Array1::from(self.params.clone()).mapv(|p| p * p).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::normal_cdf;
    use crate::rng::stream;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn zero_network_outputs_zero() {
        let net = Mlp::zeros(&[3, 5, 2], Activation::Gelu).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_single_layer() {
        let net = Mlp::from_params(
            &[2, 2],
            Activation::Identity,
            vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0],
        )
        .unwrap();
        assert_eq!(net.forward(&[1.0, 2.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn two_layer_gelu_matches_straight_line_arithmetic() {
        let mut rng = stream(3, "test/nn");
        let net = Mlp::new(&[1, 3, 1], Activation::Gelu, &mut rng).unwrap();
        let p = net.params();
        // layer 0: w[0..3], b[3..6]; layer 1: w[6..9], b[9]
        let x = 1.0;
        let mut out = p[9];
        for j in 0..3 {
            let z = x * p[j] + p[3 + j];
            let h = 0.5 * z * (1.0 + statrs::function::erf::erf(z / 2f64.sqrt()));
            out += h * p[6 + j];
        }
        assert_relative_eq!(net.forward(&[x]).unwrap()[0], out, epsilon = 1e-10);
    }

    #[test]
    fn linear_gradient() {
        let net = Mlp::from_params(&[1, 1], Activation::Identity, vec![0.7, 0.0]).unwrap();
        let (g, gx) = net.backward_one(&[3.0], &[1.0]).unwrap();
        assert_eq!(g, vec![3.0, 1.0]);
        assert_eq!(gx, vec![0.7]);
    }

    #[test]
    fn zero_cotangent_gives_zero_gradients() {
        let mut rng = stream(1, "test/nn");
        let net = Mlp::new(&[4, 8, 8, 2], Activation::Gelu, &mut rng).unwrap();
        let (g, gx) = net
            .backward_one(&[0.1, -0.3, 2.0, 1.0], &[0.0, 0.0])
            .unwrap();
        assert!(g.iter().chain(gx.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let net = Mlp::zeros(&[3, 2], Activation::Gelu).unwrap();
        assert!(matches!(
            net.forward(&[1.0]),
            Err(Error::DimensionMismatch {
                expected: 3,
                got: 1,
                ..
            })
        ));
        assert!(Mlp::zeros(&[3], Activation::Gelu).is_err());
        assert!(Mlp::zeros(&[3, 0, 1], Activation::Gelu).is_err());
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let net = Mlp::from_params(&[1, 1], Activation::Identity, vec![1.0, 0.0]).unwrap();
        assert!(matches!(
            net.forward(&[f64::INFINITY]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn batch_rows_are_independent() {
        let mut rng = stream(2, "test/nn");
        let net = Mlp::new(&[2, 6, 3], Activation::Gelu, &mut rng).unwrap();
        let batch = array![[0.5, -1.0], [2.0, 0.25]];
        let out = net.forward_batch(batch.view()).unwrap();
        for r in 0..2 {
            let single = net.forward(batch.row(r).to_slice().unwrap()).unwrap();
            for c in 0..3 {
                assert_relative_eq!(out[[r, c]], single[c], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn gelu_is_exact_erf_form() {
        for &x in &[-3.0, -0.5, 0.0, 0.7, 2.5] {
            assert_relative_eq!(crate::nn::gelu(x), x * normal_cdf(x), epsilon = 1e-16);
        }
        // Phi(1) = 0.8413447460685429...
        assert_relative_eq!(
            crate::nn::gelu(1.0),
            0.841_344_746_068_542_9,
            epsilon = 1e-15
        );
    }
}
