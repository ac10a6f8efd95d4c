//! Central finite-difference checks of every differentiable op at f64.

mod common;

use common::grad_ops::{worst_error, OPS};
use common::FD_MAX_REL_ERR;

fn check(name: &str) {
    let (_, op) = OPS.iter().find(|(n, _)| *n == name).unwrap();
    let err = worst_error(*op);
    assert!(err < FD_MAX_REL_ERR, "{name}: worst relative error {err:e}");
}

#[test]
fn conv2d() {
    check("conv2d");
}

#[test]
fn si_conv2d() {
    check("si_conv2d");
}

#[test]
fn pointwise_conv() {
    check("pointwise_conv");
}

#[test]
fn residual_block() {
    check("residual_block");
}

#[test]
fn fuse() {
    check("fuse");
}

#[test]
fn cgm() {
    check("cgm");
}

#[test]
fn masked_mse() {
    check("masked_mse");
}

#[test]
fn total_loss() {
    check("total_loss");
}
