mod common;

use common::{grad_errors, model_loss_grad_error, q_loss_grad_error, REL_TOL};
use ndarray::{array, Array2};
use sadq::nn::{ParamSet, Tape};
use sadq::ModelLoss;

fn assert_all_below((errors, skipped): (Vec<f64>, usize), what: &str) {
    assert_eq!(errors.len(), 20);
    assert!(skipped < 20, "{what}: {skipped} draws landed near a kink");
    let worst = errors.iter().copied().fold(0.0f64, f64::max);
    assert!(worst < REL_TOL, "{what}: worst relative error {worst:e} ({errors:?})");
}

#[test]
fn q_mse_gradients_plain_and_dueling() {
    let errors = grad_errors(0, 20, |s| q_loss_grad_error(s, if s % 2 == 0 { "dqn" } else { "sadq" }, "mse"));
    assert_all_below(errors, "q mse");
}

#[test]
fn q_huber_gradients() {
    let errors = grad_errors(100, 20, |s| q_loss_grad_error(s, if s % 2 == 0 { "dueling" } else { "dqn" }, "huber"));
    assert_all_below(errors, "q huber");
}

#[test]
fn quantile_huber_gradients() {
    let errors = grad_errors(200, 20, |s| q_loss_grad_error(s, "qr-dqn", "mse"));
    assert_all_below(errors, "quantile huber");
}

#[test]
fn model_mse_gradients_through_fixed_noise() {
    let errors = grad_errors(300, 20, |s| model_loss_grad_error(s, ModelLoss::Mse));
    assert_all_below(errors, "model mse");
}

#[test]
fn model_nll_gradients() {
    let errors = grad_errors(400, 20, |s| model_loss_grad_error(s, ModelLoss::Nll));
    assert_all_below(errors, "model nll");
}

#[test]
fn least_squares_gradient_at_zero_weights() {
    // loss = 0.5 * |W x - y|^2 with row-vector convention x W; at W = 0 the
    // gradient is -x^T y.
    let mut params = ParamSet::new();
    params.push("w", Array2::<f64>::zeros((3, 2)));
    let x = array![[1.0, -2.0, 0.5]];
    let y = array![[3.0, -1.0]];
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let w = tape.param(&params, 0);
    let pred = tape.matmul(xv, w).unwrap();
    let yv = tape.constant(y.clone());
    let diff = tape.sub(pred, yv).unwrap();
    let sq = tape.square(diff);
    // with two outputs the mean is exactly half the sum of squares
    let loss = tape.mean(sq);
    let grads = tape.backward(loss, &params).unwrap();
    let expected = -x.t().dot(&y);
    for (g, e) in grads.values[0].iter().zip(expected.iter()) {
        assert!((g - e).abs() < 1e-12, "{g} vs {e}");
    }
}
