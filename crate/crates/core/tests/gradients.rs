//! Finite-difference gradient checks at 64-bit precision.

mod common;

use common::{block_suite, depth_gradcheck, fan_gradcheck, loss_suite, mini_fan_config, op_suite};

const OP_TOL: f64 = 1e-4;
const MODEL_TOL: f64 = 1e-3;

fn assert_all(reports: &[common::GradReport], tol: f64) {
    let failed: Vec<_> = reports.iter().filter(|r| !r.passes(tol)).collect();
    assert!(failed.is_empty(), "gradient mismatches: {failed:#?}");
}

#[test]
fn every_tape_operation_matches_central_differences() {
    assert_all(&op_suite(), OP_TOL);
}

#[test]
fn losses_match_central_differences() {
    assert_all(&loss_suite(), OP_TOL);
}

#[test]
fn residual_blocks_match_central_differences() {
    assert_all(&block_suite(), OP_TOL);
}

#[test]
fn miniature_alignment_network_matches_central_differences() {
    let r = fan_gradcheck(mini_fan_config(), 1, 12, 11);
    assert!(r.passes(MODEL_TOL), "{r:?}");
}

#[test]
fn two_stack_network_matches_central_differences() {
    let mut cfg = mini_fan_config();
    cfg.n_stacks = 2;
    let r = fan_gradcheck(cfg, 2, 6, 12);
    assert!(r.passes(MODEL_TOL), "{r:?}");
}

#[test]
fn depth_network_matches_central_differences() {
    let r = depth_gradcheck(10, 13);
    assert!(r.passes(MODEL_TOL), "{r:?}");
}
