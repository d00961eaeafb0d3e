//! Bias-free multi-layer perceptron with per-layer activation traces.
//!
//! The network computes `h⁽ˡ⁾ = θ⁽ˡ⁾ a⁽ˡ⁻¹⁾`, `a⁽ˡ⁾ = σ(h⁽ˡ⁾)` for every
//! layer except the last, which stays linear so logits (and residual logits,
//! which can be negative and unbounded) are representable. There are no bias
//! terms anywhere.
//!
//! `forward` records every pre- and post-activation in an [`ActivationTrace`];
//! `backward` consumes the trace to produce mean-over-batch weight gradients
//! while retaining the per-sample output gradient. The trace also powers the
//! layer-product matrices used by the informativeness analysis in
//! [`crate::gi`].

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Element-wise nonlinearity applied after every layer except the last.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative at pre-activation `x`; for relu the derivative at exactly
    /// zero is defined as zero.
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Bias-free MLP: layer widths `[M₀, …, M_L]` and one weight matrix per
/// layer, `weights[l]` of shape `M_{l+1} × M_l`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    activation: Activation,
    weights: Vec<Matrix>,
}

/// Per-layer pre-activations `h⁽ˡ⁾` and post-activations `a⁽ˡ⁾` recorded by a
/// forward pass, together with the input batch `a⁽⁰⁾`.
#[derive(Debug, Clone)]
pub struct ActivationTrace {
    net_fingerprint: u64,
    input: Matrix,
    pre: Vec<Matrix>,
    post: Vec<Matrix>,
}

impl ActivationTrace {
    /// Number of samples in the traced batch.
    pub fn batch_len(&self) -> usize {
        self.input.rows()
    }

    /// The input batch `a⁽⁰⁾`.
    pub fn input(&self) -> &Matrix {
        &self.input
    }

    /// Pre-activations `h⁽ˡ⁾` for layer `l` in `1..=L`.
    pub fn pre_activation(&self, l: usize) -> &Matrix {
        &self.pre[l - 1]
    }

    /// Post-activations `a⁽ˡ⁾` for layer `l` in `1..=L` (equal to the
    /// pre-activations at the final, linear layer).
    pub fn post_activation(&self, l: usize) -> &Matrix {
        &self.post[l - 1]
    }
}

/// Mean-over-batch weight gradients plus the retained per-sample gradient of
/// the loss with respect to the output logits.
#[derive(Debug, Clone)]
pub struct LayerGrads {
    /// One gradient matrix per layer, shape-congruent with `Mlp::weights`.
    pub weight_grads: Vec<Matrix>,
    /// Per-sample `∇_{a⁽ᴸ⁾} L` (one row per sample), kept for the
    /// informativeness analysis.
    pub output_grads: Matrix,
}

impl Mlp {
    /// Builds a network with seeded uniform initialization in
    /// `±sqrt(6 / (fan_in + fan_out))` per layer.
    pub fn new(widths: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Domain(format!(
                "an MLP needs at least one layer (got widths {widths:?})"
            )));
        }
        if widths.iter().any(|&w| w == 0) {
            return Err(Error::Domain(format!(
                "every layer width must be >= 1 (got widths {widths:?})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(widths.len() - 1);
        for l in 0..widths.len() - 1 {
            let (fan_in, fan_out) = (widths[l], widths[l + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-limit..limit))
                .collect();
            weights.push(Matrix::from_vec(fan_out, fan_in, data)?);
        }
        Ok(Mlp {
            widths: widths.to_vec(),
            activation,
            weights,
        })
    }

    /// Builds a network from explicit weight matrices (used by loaders and
    /// test fixtures). Shapes must be consistent with `widths`.
    pub fn from_weights(widths: Vec<usize>, activation: Activation, weights: Vec<Matrix>) -> Result<Self> {
        if widths.len() < 2 || widths.iter().any(|&w| w == 0) {
            return Err(Error::Validation(format!("invalid widths {widths:?}")));
        }
        if weights.len() != widths.len() - 1 {
            return Err(Error::Validation(format!(
                "weights: expected {} matrices, got {}",
                widths.len() - 1,
                weights.len()
            )));
        }
        for (l, w) in weights.iter().enumerate() {
            if w.rows() != widths[l + 1] || w.cols() != widths[l] {
                return Err(Error::Validation(format!(
                    "weights[{l}]: expected shape {}x{}, got {}x{}",
                    widths[l + 1],
                    widths[l],
                    w.rows(),
                    w.cols()
                )));
            }
            if !w.is_finite() {
                return Err(Error::Validation(format!("weights[{l}]: non-finite entry")));
            }
        }
        Ok(Mlp {
            widths,
            activation,
            weights,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Number of weight layers `L`.
    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Matrix] {
        &mut self.weights
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.data().len()).sum()
    }

    /// Cheap bitwise fingerprint of the architecture and weights, used to
    /// detect stale traces.
    fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        let mut mix = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(0x100000001b3);
        };
        for &w in &self.widths {
            mix(w as u64);
        }
        mix(match self.activation {
            Activation::Tanh => 1,
            Activation::Relu => 2,
        });
        for w in &self.weights {
            for &v in w.data() {
                mix(v.to_bits());
            }
        }
        h
    }

    /// Forward pass over a batch (one sample per row). Returns the raw
    /// logits `a⁽ᴸ⁾` (final layer linear) and the full activation trace.
    pub fn forward(&self, batch: &Matrix) -> Result<(Matrix, ActivationTrace)> {
        if batch.cols() != self.input_dim() {
            return Err(Error::shape(
                "Mlp::forward layer 1",
                format!("input dimension {}", self.input_dim()),
                format!("{}", batch.cols()),
            ));
        }
        if !batch.is_finite() {
            return Err(Error::Domain("forward: non-finite input batch".into()));
        }
        let layers = self.num_layers();
        let mut pre = Vec::with_capacity(layers);
        let mut post = Vec::with_capacity(layers);
        let mut current = batch.clone();
        for (l, w) in self.weights.iter().enumerate() {
            let h = current.matmul_transpose(w).map_err(|_| {
                Error::shape(
                    format!("Mlp::forward layer {}", l + 1),
                    format!("{} inputs", w.cols()),
                    format!("{}", current.cols()),
                )
            })?;
            let a = if l + 1 < layers {
                let mut a = h.clone();
                a.map_inplace(|x| self.activation.apply(x));
                a
            } else {
                h.clone()
            };
            pre.push(h);
            current = a.clone();
            post.push(a);
        }
        let trace = ActivationTrace {
            net_fingerprint: self.fingerprint(),
            input: batch.clone(),
            pre,
            post,
        };
        Ok((current, trace))
    }

    /// Logits only, for callers that do not need the trace.
    pub fn logits(&self, batch: &Matrix) -> Result<Matrix> {
        Ok(self.forward(batch)?.0)
    }

    fn check_trace(&self, trace: &ActivationTrace, context: &str) -> Result<()> {
        if trace.pre.len() != self.num_layers() || trace.net_fingerprint != self.fingerprint() {
            return Err(Error::Trace(format!(
                "{context}: trace was not produced by this network (or the network changed since)"
            )));
        }
        Ok(())
    }

    /// Backward pass. `dl_dlogits` holds one row per sample; the returned
    /// weight gradients are averaged over the batch.
    pub fn backward(&self, trace: &ActivationTrace, dl_dlogits: &Matrix) -> Result<LayerGrads> {
        self.check_trace(trace, "Mlp::backward")?;
        let n = trace.batch_len();
        if dl_dlogits.rows() != n || dl_dlogits.cols() != self.output_dim() {
            return Err(Error::shape(
                "Mlp::backward",
                format!("{n}x{}", self.output_dim()),
                format!("{}x{}", dl_dlogits.rows(), dl_dlogits.cols()),
            ));
        }
        let layers = self.num_layers();
        let mut grads = vec![Matrix::zeros(0, 0); layers];
        // Final layer is linear, so dL/dh(L) = dL/da(L).
        let mut delta = dl_dlogits.clone();
        for l in (0..layers).rev() {
            let inputs = if l == 0 {
                &trace.input
            } else {
                &trace.post[l - 1]
            };
            // grad[l] = deltaᵀ · inputs / n
            let mut g = delta.transpose().matmul(inputs)?;
            let scale = 1.0 / n as f64;
            g.map_inplace(|x| x * scale);
            grads[l] = g;
            if l > 0 {
                // delta_{l-1} = (delta · θ(l)) ⊙ σ'(h(l-1))
                let mut back = delta.matmul(&self.weights[l])?;
                let pre = &trace.pre[l - 1];
                for i in 0..back.rows() {
                    let pre_row = pre.row(i);
                    let back_row = back.row_mut(i);
                    for (b, &h) in back_row.iter_mut().zip(pre_row) {
                        *b *= self.activation.derivative(h);
                    }
                }
                delta = back;
            }
        }
        Ok(LayerGrads {
            weight_grads: grads,
            output_grads: dl_dlogits.clone(),
        })
    }

    /// Diagonal of `Σ'_l(h⁽ˡ⁾)`: the activation derivative at the stored
    /// pre-activations of layer `l` (`1..=L`), one row per sample. The final
    /// layer is linear, so its derivative is identically one.
    pub fn activation_deriv_diag(&self, trace: &ActivationTrace, l: usize) -> Result<Matrix> {
        self.check_trace(trace, "Mlp::activation_deriv_diag")?;
        let layers = self.num_layers();
        if l < 1 || l > layers {
            return Err(Error::Index {
                context: "activation_deriv_diag: network".into(),
                index: l,
                len: layers,
            });
        }
        let mut out = trace.pre[l - 1].clone();
        if l == layers {
            out.map_inplace(|_| 1.0);
        } else {
            out.map_inplace(|h| self.activation.derivative(h));
        }
        Ok(out)
    }

    /// The layer-product matrix
    /// `Π⁽ˡ⁾ = (∏_{i=l}^{L−1} Σ'_i(h⁽ⁱ⁾) θᵀ_{i+1}) Σ'_L`
    /// for one sample, of shape `M_l × M_L`. Multiplying it by the output
    /// gradient and taking the outer product with `a⁽ˡ⁻¹⁾` reproduces the
    /// per-sample layer-`l` weight gradient. For `l = L` the product is
    /// empty and `Σ'_L` is the identity (linear output layer).
    pub fn pi_matrix(&self, trace: &ActivationTrace, sample: usize, l: usize) -> Result<Matrix> {
        self.check_trace(trace, "Mlp::pi_matrix")?;
        let layers = self.num_layers();
        if l < 1 || l > layers {
            return Err(Error::Index {
                context: "pi_matrix: network".into(),
                index: l,
                len: layers,
            });
        }
        if sample >= trace.batch_len() {
            return Err(Error::Index {
                context: "pi_matrix: batch".into(),
                index: sample,
                len: trace.batch_len(),
            });
        }
        // Start from the layer-l diagonal and absorb θᵀ then the next
        // diagonal, layer by layer. Σ'_L is the identity and is skipped.
        let mut pi = Matrix::identity(self.widths[l]);
        for i in l..layers {
            // pi ← pi · Σ'_i(h⁽ⁱ⁾)  (scale columns), then pi ← pi · θᵀ_{i+1}
            let pre_row = trace.pre[i - 1].row(sample);
            let mut scaled = pi.clone();
            let deriv_at = |j: usize| {
                if i == layers {
                    1.0
                } else {
                    self.activation.derivative(pre_row[j])
                }
            };
            for r in 0..scaled.rows() {
                let row = scaled.row_mut(r);
                for (j, v) in row.iter_mut().enumerate() {
                    *v *= deriv_at(j);
                }
            }
            pi = scaled.matmul(&self.weights[i].transpose())?;
        }
        Ok(pi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::l2_norm;

    fn row(values: &[f64]) -> Matrix {
        Matrix::from_vec(1, values.len(), values.to_vec()).unwrap()
    }

    #[test]
    fn identity_single_layer_passes_through() {
        let net = Mlp::from_weights(vec![2, 2], Activation::Tanh, vec![Matrix::identity(2)]).unwrap();
        let (logits, _) = net.forward(&row(&[3.0, -1.0])).unwrap();
        assert_eq!(logits.row(0), &[3.0, -1.0]);
    }

    #[test]
    fn zero_input_gives_zero_logits() {
        for act in [Activation::Tanh, Activation::Relu] {
            let net = Mlp::new(&[3, 5, 4, 2], act, 9).unwrap();
            let (logits, _) = net.forward(&row(&[0.0, 0.0, 0.0])).unwrap();
            assert_eq!(logits.row(0), &[0.0, 0.0]);
        }
    }

    /// Independent step-by-step forward: per-neuron scalar loops, no shared
    /// code with `Mlp::forward`.
    fn forward_oracle(net: &Mlp, input: &[f64]) -> Vec<f64> {
        let mut a = input.to_vec();
        for l in 0..net.num_layers() {
            let w = &net.weights()[l];
            let mut next = vec![0.0; w.rows()];
            for (j, nj) in next.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (k, &ak) in a.iter().enumerate() {
                    acc += w.get(j, k) * ak;
                }
                *nj = if l + 1 < net.num_layers() {
                    net.activation().apply(acc)
                } else {
                    acc
                };
            }
            a = next;
        }
        a
    }

    #[test]
    fn forward_matches_step_by_step_oracle() {
        let net = Mlp::new(&[4, 5, 3], Activation::Tanh, 42).unwrap();
        let input = [0.3, -1.1, 0.7, 0.25];
        let (logits, _) = net.forward(&row(&input)).unwrap();
        let expected = forward_oracle(&net, &input);
        for (a, b) in logits.row(0).iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-14 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn forward_is_deterministic_bitwise() {
        let net = Mlp::new(&[3, 6, 2], Activation::Tanh, 5).unwrap();
        let batch = Matrix::from_vec(2, 3, vec![0.1, 0.2, 0.3, -0.4, 0.5, -0.6]).unwrap();
        let a = net.forward(&batch).unwrap().0;
        let b = net.forward(&batch).unwrap().0;
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn dimension_mismatch_names_layer() {
        let net = Mlp::new(&[3, 2], Activation::Tanh, 0).unwrap();
        let err = net.forward(&row(&[1.0, 2.0])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("layer 1"), "unhelpful error: {msg}");
    }

    #[test]
    fn backward_zero_upstream_gives_zero_grads() {
        let net = Mlp::new(&[3, 4, 2], Activation::Tanh, 1).unwrap();
        let batch = Matrix::from_vec(2, 3, vec![0.5; 6]).unwrap();
        let (_, trace) = net.forward(&batch).unwrap();
        let grads = net.backward(&trace, &Matrix::zeros(2, 2)).unwrap();
        for g in &grads.weight_grads {
            assert!(g.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn backward_linear_least_squares_closed_form() {
        // 1-layer linear net, squared-error loss: dL/dθ = 2(ŷ−y)xᵀ averaged.
        let net = Mlp::from_weights(
            vec![2, 1],
            Activation::Tanh,
            vec![Matrix::from_vec(1, 2, vec![0.5, -0.25]).unwrap()],
        )
        .unwrap();
        let batch = Matrix::from_vec(2, 2, vec![1.0, 2.0, -0.5, 0.75]).unwrap();
        let targets = [0.4, -0.1];
        let (logits, trace) = net.forward(&batch).unwrap();
        let mut dl = Matrix::zeros(2, 1);
        for i in 0..2 {
            dl.set(i, 0, 2.0 * (logits.get(i, 0) - targets[i]));
        }
        let grads = net.backward(&trace, &dl).unwrap();
        for j in 0..2 {
            let expected: f64 = (0..2)
                .map(|i| 2.0 * (logits.get(i, 0) - targets[i]) * batch.get(i, j))
                .sum::<f64>()
                / 2.0;
            assert!((grads.weight_grads[0].get(0, j) - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn stale_trace_rejected() {
        let mut net = Mlp::new(&[2, 3, 2], Activation::Tanh, 3).unwrap();
        let batch = Matrix::from_vec(1, 2, vec![0.1, -0.2]).unwrap();
        let (_, trace) = net.forward(&batch).unwrap();
        net.weights_mut()[0].set(0, 0, 99.0);
        assert!(matches!(
            net.backward(&trace, &Matrix::zeros(1, 2)),
            Err(Error::Trace(_))
        ));
        assert!(matches!(net.pi_matrix(&trace, 0, 1), Err(Error::Trace(_))));
    }

    #[test]
    fn activation_deriv_values() {
        let net = Mlp::from_weights(
            vec![3, 3, 3],
            Activation::Relu,
            vec![Matrix::identity(3), Matrix::identity(3)],
        )
        .unwrap();
        let (_, trace) = net.forward(&row(&[-2.0, 0.0, 3.0])).unwrap();
        let d = net.activation_deriv_diag(&trace, 1).unwrap();
        assert_eq!(d.row(0), &[0.0, 0.0, 1.0]);
        // Final layer is linear: derivative 1 regardless of values.
        let d_last = net.activation_deriv_diag(&trace, 2).unwrap();
        assert_eq!(d_last.row(0), &[1.0, 1.0, 1.0]);

        let tanh_net =
            Mlp::from_weights(vec![1, 1, 1], Activation::Tanh, vec![Matrix::identity(1), Matrix::identity(1)])
                .unwrap();
        let (_, t0) = tanh_net.forward(&row(&[0.0])).unwrap();
        assert!((tanh_net.activation_deriv_diag(&t0, 1).unwrap().get(0, 0) - 1.0).abs() < 1e-15);
        let (_, t1) = tanh_net.forward(&row(&[1.0])).unwrap();
        let expected = 1.0 - 1.0_f64.tanh().powi(2);
        assert!((tanh_net.activation_deriv_diag(&t1, 1).unwrap().get(0, 0) - expected).abs() < 1e-9);
        assert!((expected - 0.41997434).abs() < 1e-8);
    }

    #[test]
    fn deriv_layer_out_of_range() {
        let net = Mlp::new(&[2, 3, 2], Activation::Tanh, 0).unwrap();
        let (_, trace) = net.forward(&row(&[0.1, 0.2])).unwrap();
        assert!(matches!(
            net.activation_deriv_diag(&trace, 0),
            Err(Error::Index { .. })
        ));
        assert!(net.activation_deriv_diag(&trace, 1).is_ok());
        assert!(net.activation_deriv_diag(&trace, 2).is_ok());
        assert!(matches!(
            net.activation_deriv_diag(&trace, 3),
            Err(Error::Index { .. })
        ));
    }

    #[test]
    fn pi_matrix_last_layer_is_identity() {
        let net = Mlp::new(&[3, 4, 2], Activation::Tanh, 7).unwrap();
        let (_, trace) = net.forward(&row(&[0.2, -0.3, 0.4])).unwrap();
        let pi = net.pi_matrix(&trace, 0, 2).unwrap();
        assert_eq!(pi, Matrix::identity(2));
    }

    #[test]
    fn pi_matrix_two_layer_closed_form() {
        // Π⁽¹⁾ = Σ'_1(h⁽¹⁾) θ₂ᵀ for a 2-layer net.
        let net = Mlp::new(&[2, 3, 2], Activation::Tanh, 11).unwrap();
        let input = row(&[0.6, -0.8]);
        let (_, trace) = net.forward(&input).unwrap();
        let pi = net.pi_matrix(&trace, 0, 1).unwrap();
        let h1 = trace.pre_activation(1).row(0);
        let theta2 = &net.weights()[1];
        for r in 0..3 {
            for c in 0..2 {
                let expected = net.activation().derivative(h1[r]) * theta2.get(c, r);
                assert!((pi.get(r, c) - expected).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn pi_matrix_reproduces_per_sample_gradient() {
        // (Π⁽ˡ⁾ ∇L)(a⁽ˡ⁻¹⁾)ᵀ must equal the per-sample layer gradient from
        // backward() for every layer of a 3-layer net.
        let net = Mlp::new(&[4, 5, 3, 2], Activation::Tanh, 13).unwrap();
        let input = row(&[0.3, -0.2, 0.9, -0.5]);
        let (logits, trace) = net.forward(&input).unwrap();
        let dl = Matrix::from_vec(1, 2, vec![0.7 - logits.get(0, 0), -1.3]).unwrap();
        let grads = net.backward(&trace, &dl).unwrap();
        for l in 1..=net.num_layers() {
            let pi = net.pi_matrix(&trace, 0, l).unwrap();
            // u = Π⁽ˡ⁾ ∇L (column vector of length M_l)
            let mut u = vec![0.0; pi.rows()];
            for (r, ur) in u.iter_mut().enumerate() {
                *ur = (0..pi.cols()).map(|c| pi.get(r, c) * dl.get(0, c)).sum();
            }
            let prev = if l == 1 {
                trace.input().row(0)
            } else {
                trace.post_activation(l - 1).row(0)
            };
            let g = &grads.weight_grads[l - 1];
            let mut max_rel = 0.0_f64;
            for r in 0..g.rows() {
                for c in 0..g.cols() {
                    let expected = u[r] * prev[c];
                    let denom = expected.abs().max(g.get(r, c).abs()).max(1e-12);
                    max_rel = max_rel.max((g.get(r, c) - expected).abs() / denom);
                }
            }
            assert!(max_rel < 1e-10, "layer {l}: relative error {max_rel}");
        }
        // Also check the norm identity used by the GI bound.
        let pi1 = net.pi_matrix(&trace, 0, 1).unwrap();
        let mut u = vec![0.0; pi1.rows()];
        for (r, ur) in u.iter_mut().enumerate() {
            *ur = (0..pi1.cols()).map(|c| pi1.get(r, c) * dl.get(0, c)).sum();
        }
        let g1 = &grads.weight_grads[0];
        assert!((g1.frobenius_norm() - l2_norm(&u) * l2_norm(trace.input().row(0))).abs() < 1e-12);
    }
}
