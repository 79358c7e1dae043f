mod support;

use support::gradcheck::{case, CASES, TOL_F32, TOL_F64};

#[track_caller]
fn assert_case(name: &str) {
    let (e32, e64) = case(name);
    assert!(e64 < TOL_F64, "{name}: 64-bit relative error {e64:e}");
    assert!(e32 < TOL_F32, "{name}: 32-bit relative error {e32:e}");
}

#[test]
fn critic_loss_with_penalty() {
    assert_case("critic loss");
    assert_case("gradient penalty");
}

#[test]
fn generator_adversarial_loss() {
    assert_case("generator adversarial");
}

#[test]
fn classification_loss() {
    assert_case("classification");
}

#[test]
fn cycle_loss() {
    assert_case("cycle");
}

#[test]
fn inspector_loss() {
    assert_case("inspector");
}

#[test]
fn feature_matching_loss() {
    assert_case("feature matching");
}

#[test]
fn weighted_objectives() {
    assert_case("objective vispgan");
    assert_case("objective stargan3d");
}

#[test]
fn patch_critic_parameters() {
    assert_case("patch critic");
}

#[test]
fn generator_parameters_through_every_network() {
    assert_case("generator vispgan");
    assert_case("generator stargan3d");
}

#[test]
fn every_case_is_covered() {
    assert_eq!(CASES.len(), 12);
    let (e32, e64) = case("cycle");
    // the 32-bit path is genuinely less precise than the 64-bit one
    assert!(e32 > e64);
}
