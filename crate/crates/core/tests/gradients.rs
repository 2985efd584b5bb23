mod common;

use common::gradcheck::{daware_loss_check, eps_loss_check, kernel_loss_check, op_checks, TOL};

#[test]
fn every_op_kind_matches_finite_differences() {
    for (name, err) in op_checks() {
        assert!(err < TOL, "{name}: relative error {err:e}");
    }
}

#[test]
fn eps_prediction_loss() {
    let (_, err) = eps_loss_check();
    assert!(err < TOL, "{err:e}");
}

#[test]
fn daware_joint_loss() {
    let (_, err) = daware_loss_check();
    assert!(err < TOL, "{err:e}");
}

#[test]
fn kernel_estimator_loss() {
    let (_, err) = kernel_loss_check();
    assert!(err < TOL, "{err:e}");
}
