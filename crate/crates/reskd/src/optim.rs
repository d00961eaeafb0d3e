//! SGD with momentum and (coupled) weight decay.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::net::{LayerGrads, Mlp};

/// Per-layer momentum buffers for one network.
#[derive(Debug, Clone)]
pub struct SgdState {
    velocity: Vec<Matrix>,
}

impl SgdState {
    /// Fresh all-zero buffers shaped like the given network.
    pub fn new(net: &Mlp) -> Self {
        SgdState {
            velocity: net
                .weights()
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
        }
    }
}

/// One update: `v ← momentum·v + (grad + weight_decay·θ)`,
/// `θ ← θ − lr·v`. Deterministic given identical inputs.
pub fn sgd_step(
    net: &mut Mlp,
    grads: &LayerGrads,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
    state: &mut SgdState,
) -> Result<()> {
    if lr <= 0.0 {
        return Err(Error::Domain(format!("learning rate must be > 0, got {lr}")));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::Domain(format!(
            "momentum must be in [0, 1), got {momentum}"
        )));
    }
    if weight_decay < 0.0 {
        return Err(Error::Domain(format!(
            "weight decay must be >= 0, got {weight_decay}"
        )));
    }
    if grads.weight_grads.len() != net.num_layers() {
        return Err(Error::shape(
            "sgd_step",
            format!("{} gradient matrices", net.num_layers()),
            format!("{}", grads.weight_grads.len()),
        ));
    }
    for g in &grads.weight_grads {
        if !g.is_finite() {
            return Err(Error::Optimizer("non-finite gradient entries".into()));
        }
    }
    for (l, w) in net.weights_mut().iter_mut().enumerate() {
        let g = &grads.weight_grads[l];
        let v = &mut state.velocity[l];
        if g.rows() != w.rows() || g.cols() != w.cols() {
            return Err(Error::shape(
                format!("sgd_step layer {}", l + 1),
                format!("{}x{}", w.rows(), w.cols()),
                format!("{}x{}", g.rows(), g.cols()),
            ));
        }
        let (wd, gd, vd) = (w.data_mut(), g.data(), v.data_mut());
        for i in 0..wd.len() {
            vd[i] = momentum * vd[i] + (gd[i] + weight_decay * wd[i]);
            wd[i] -= lr * vd[i];
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Activation;

    fn constant_grads(net: &Mlp, value: f64) -> LayerGrads {
        LayerGrads {
            weight_grads: net
                .weights()
                .iter()
                .map(|w| {
                    let mut g = Matrix::zeros(w.rows(), w.cols());
                    g.map_inplace(|_| value);
                    g
                })
                .collect(),
            output_grads: Matrix::zeros(0, 0),
        }
    }

    #[test]
    fn vanilla_step_is_theta_minus_lr_grad() {
        let mut net = Mlp::new(&[2, 3], Activation::Tanh, 1).unwrap();
        let before = net.weights()[0].clone();
        let grads = constant_grads(&net, 0.5);
        let mut state = SgdState::new(&net);
        sgd_step(&mut net, &grads, 0.1, 0.0, 0.0, &mut state).unwrap();
        for (a, b) in net.weights()[0].data().iter().zip(before.data()) {
            assert!((a - (b - 0.1 * 0.5)).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_grad_zero_decay_is_fixed_point() {
        let mut net = Mlp::new(&[2, 2], Activation::Tanh, 2).unwrap();
        let before = net.clone();
        let grads = constant_grads(&net, 0.0);
        let mut state = SgdState::new(&net);
        sgd_step(&mut net, &grads, 0.3, 0.9, 0.0, &mut state).unwrap();
        assert_eq!(net, before);
    }

    #[test]
    fn momentum_unrolled_two_steps() {
        // Constant gradient g, momentum 0.9: step 2 decrements by lr·1.9·g.
        let mut net = Mlp::new(&[2, 2], Activation::Tanh, 3).unwrap();
        let g = 0.25;
        let grads = constant_grads(&net, g);
        let mut state = SgdState::new(&net);
        let lr = 0.05;
        sgd_step(&mut net, &grads, lr, 0.9, 0.0, &mut state).unwrap();
        let after_one = net.weights()[0].clone();
        sgd_step(&mut net, &grads, lr, 0.9, 0.0, &mut state).unwrap();
        for (a, b) in net.weights()[0].data().iter().zip(after_one.data()) {
            assert!((b - a - lr * 1.9 * g).abs() < 1e-15);
        }
    }

    #[test]
    fn non_finite_gradient_is_divergence() {
        let mut net = Mlp::new(&[2, 2], Activation::Tanh, 4).unwrap();
        let mut grads = constant_grads(&net, 1.0);
        grads.weight_grads[0].set(0, 0, f64::NAN);
        let mut state = SgdState::new(&net);
        assert!(matches!(
            sgd_step(&mut net, &grads, 0.1, 0.0, 0.0, &mut state),
            Err(Error::Optimizer(_))
        ));
    }
}
