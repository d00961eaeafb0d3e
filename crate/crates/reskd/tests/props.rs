//! Property tests for the algebraic invariants of the building blocks.

use proptest::prelude::*;

use reskd::data::{gen_blobs, split_validation};
use reskd::energy::energy_sample;
use reskd::loss::{match_loss, LossKind};
use reskd::matrix::Matrix;
use reskd::softmax::softmax_t;
use reskd::spectral::pca2d;

fn logits_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-30.0..30.0f64, len..=len)
}

proptest! {
    #[test]
    fn softmax_is_a_distribution(logits in proptest::collection::vec(-50.0..50.0f64, 1..12), t in 0.2..50.0f64) {
        // With |logits| ≤ 50 and t ≥ 0.2 the scaled spread stays below
        // exp's underflow threshold, so entries are strictly positive.
        let p = softmax_t(&logits, t).unwrap();
        prop_assert!(p.iter().all(|&v| v > 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_valid_even_when_underflowing(spread in 100.0..5000.0f64, t in 0.01..0.2f64) {
        let p = softmax_t(&[spread, 0.0], t).unwrap();
        prop_assert!(p.iter().all(|&v| v >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_shift_invariant(logits in proptest::collection::vec(-30.0..30.0f64, 2..8), shift in -25.0..25.0f64, t in 0.5..30.0f64) {
        let p = softmax_t(&logits, t).unwrap();
        let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
        let q = softmax_t(&shifted, t).unwrap();
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn match_loss_nonnegative_and_zero_only_at_equality(
        s in logits_vec(4),
        t_logits in logits_vec(4),
        temp in 0.5..25.0f64,
    ) {
        for kind in [LossKind::Kl, LossKind::L2Prob, LossKind::L2Logit] {
            let (loss, _) = match_loss(&s, &t_logits, kind, temp).unwrap();
            prop_assert!(loss >= 0.0, "{kind:?}: {loss}");
            let (self_loss, _) = match_loss(&s, &s, kind, temp).unwrap();
            prop_assert!(self_loss.abs() < 1e-12);
        }
    }

    #[test]
    fn kl_zero_iff_softened_distributions_equal(s in logits_vec(3), shift in -10.0..10.0f64) {
        // Equal softened distributions arise exactly from a common shift.
        let t_logits: Vec<f64> = s.iter().map(|v| v + shift).collect();
        let (loss, _) = match_loss(&s, &t_logits, LossKind::Kl, 4.0).unwrap();
        prop_assert!(loss < 1e-10, "{loss}");
    }

    #[test]
    fn softened_losses_shift_invariant(
        s in logits_vec(5),
        t_logits in logits_vec(5),
        shift in -20.0..20.0f64,
        temp in 0.5..25.0f64,
    ) {
        let s_shifted: Vec<f64> = s.iter().map(|v| v + shift).collect();
        let t_shifted: Vec<f64> = t_logits.iter().map(|v| v + shift).collect();
        for kind in [LossKind::Kl, LossKind::L2Prob, LossKind::L2Logit] {
            let (a, _) = match_loss(&s, &t_logits, kind, temp).unwrap();
            let (b, _) = match_loss(&s_shifted, &t_shifted, kind, temp).unwrap();
            prop_assert!((a - b).abs() < 1e-10, "{kind:?}: {a} vs {b}");
        }
    }

    #[test]
    fn energy_lives_between_uniform_and_one(logits in proptest::collection::vec(-40.0..40.0f64, 2..10)) {
        let e = energy_sample(&logits).unwrap();
        let k = logits.len() as f64;
        prop_assert!(e >= 1.0 / k - 1e-12);
        prop_assert!(e <= 1.0 + 1e-12);
    }

    #[test]
    fn split_is_a_partition(n_per_class in 5usize..40, fraction in 0.05..0.5f64, seed in 0u64..500) {
        let data = gen_blobs(seed, n_per_class, 2, 2, 1.0).unwrap();
        let expected = (fraction * data.len() as f64).round() as usize;
        prop_assume!(expected > 0 && expected < data.len());
        let (train, val) = split_validation(&data, fraction, seed).unwrap();
        prop_assert_eq!(val.len(), expected);
        prop_assert_eq!(train.len() + val.len(), data.len());
    }

    #[test]
    fn pca_centering_invariance(seed in 0u64..100, dx in -50.0..50.0f64, dy in -50.0..50.0f64) {
        let data = gen_blobs(seed, 10, 2, 3, 1.0).unwrap();
        let base = data.x.clone();
        let mut shifted = base.clone();
        for i in 0..shifted.rows() {
            let row = shifted.row_mut(i);
            row[0] += dx;
            row[1] += dy;
        }
        let a = pca2d(&base).unwrap();
        let b = pca2d(&shifted).unwrap();
        prop_assume!(!a.degenerate && !b.degenerate);
        for (x, y) in a.coords.data().iter().zip(b.coords.data()) {
            prop_assert!((x - y).abs() < 1e-10);
        }
    }
}

#[test]
fn pca_axes_always_orthonormal() {
    for seed in 0..20 {
        let data = gen_blobs(seed, 15, 3, 4, 1.2).unwrap();
        let p = pca2d(&data.x).unwrap();
        let n0: f64 = p.axes[0].iter().map(|v| v * v).sum::<f64>().sqrt();
        let n1: f64 = p.axes[1].iter().map(|v| v * v).sum::<f64>().sqrt();
        let dot: f64 = p.axes[0].iter().zip(&p.axes[1]).map(|(a, b)| a * b).sum();
        assert!((n0 - 1.0).abs() < 1e-9, "seed {seed}");
        assert!((n1 - 1.0).abs() < 1e-9, "seed {seed}");
        assert!(dot.abs() < 1e-9, "seed {seed}: {dot}");
        assert!(p.explained_variance[0] >= p.explained_variance[1]);
    }
}

#[test]
fn pca_matches_dense_eigensolver_oracle() {
    // Brute-force covariance eigendecomposition via an independent dense
    // solver; projections must agree up to per-axis sign.
    use nalgebra::DMatrix;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    let mut rng = ChaCha8Rng::seed_from_u64(4242);
    for trial in 0..20 {
        let (n, k) = (50, 6);
        let data: Vec<f64> = (0..n * k).map(|_| rng.random_range(-3.0..3.0)).collect();
        let points = Matrix::from_vec(n, k, data.clone()).unwrap();
        let ours = pca2d(&points).unwrap();

        // Oracle path: center, covariance, full symmetric eigen.
        let m = DMatrix::from_row_slice(n, k, &data);
        let mean = m.row_mean();
        let centered = DMatrix::from_fn(n, k, |i, j| m[(i, j)] - mean[j]);
        let cov = (centered.transpose() * &centered) / (n as f64 - 1.0);
        let eig = nalgebra::SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
        for (axis_idx, &col) in order[..2].iter().enumerate() {
            let oracle_axis: Vec<f64> = (0..k).map(|j| eig.eigenvectors[(j, col)]).collect();
            let dot: f64 = oracle_axis
                .iter()
                .zip(&ours.axes[axis_idx])
                .map(|(a, b)| a * b)
                .sum();
            let sign = if dot < 0.0 { -1.0 } else { 1.0 };
            for i in 0..n {
                let oracle_coord: f64 = (0..k)
                    .map(|j| (m[(i, j)] - mean[j]) * oracle_axis[j])
                    .sum::<f64>()
                    * sign;
                let diff = (oracle_coord - ours.coords.get(i, axis_idx)).abs();
                assert!(diff < 1e-8, "trial {trial} axis {axis_idx} sample {i}: {diff}");
            }
            let lambda = eig.eigenvalues[col];
            assert!((lambda - ours.explained_variance[axis_idx]).abs() < 1e-8 * lambda.max(1.0));
        }
    }
}
