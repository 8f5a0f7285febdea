mod support;

use pxrl::autodiff::{grad_check, ParamSet, Tensor};
use support::gradcases::{self as cases, acceptable, Reports, STEP, TOL};

fn assert_all(reports: Reports) {
    assert!(!reports.is_empty());
    for (name, r) in reports {
        assert!(r.checked > 0, "{name}: nothing checked");
        // kinks inside the stencil must stay rare, or the check proves nothing
        assert!(
            r.nonsmooth * 100 <= r.checked,
            "{name}: {} non-smooth elements",
            r.nonsmooth
        );
        assert!(
            acceptable(&r),
            "{name}: max relative error {:.3e} at {:?}",
            r.max_rel_error,
            r.worst
        );
    }
}

#[test]
fn conv2d() {
    assert_all(cases::conv2d());
}

#[test]
fn maxpool2d() {
    assert_all(cases::maxpool2d());
}

#[test]
fn dense() {
    assert_all(cases::dense());
}

#[test]
fn relu() {
    assert_all(cases::relu());
}

#[test]
fn elementwise_binary() {
    assert_all(cases::elementwise_binary());
}

#[test]
fn elementwise_unary() {
    assert_all(cases::elementwise_unary());
}

#[test]
fn shape_ops() {
    assert_all(cases::shape_ops());
}

#[test]
fn reductions() {
    assert_all(cases::reductions());
}

#[test]
fn detach_passes_no_gradient() {
    assert!(cases::detach_rule_error() < 1e-12);
}

#[test]
fn faulty_gradient_is_caught() {
    let mut p = ParamSet::new();
    p.add(
        "x",
        Tensor::new(vec![5], vec![0.3, -0.7, 0.1, 0.9, -0.2]).unwrap(),
    );
    let report = grad_check(
        &p,
        |t, v| {
            let y = t.faulty_identity(v[0]);
            Ok(t.sum(y))
        },
        STEP,
        TOL,
    )
    .unwrap();
    assert!(!report.passed(), "a wrong backward rule went unnoticed");
}

#[test]
fn value_loss_through_network() {
    assert_all(cases::value_loss_through_network());
}

#[test]
fn value_loss_through_recurrent_encoder() {
    assert_all(cases::value_loss_through_recurrent_encoder());
}

#[test]
fn positive_loss_through_network() {
    assert_all(cases::positive_loss_through_network());
}

#[test]
fn negative_loss_through_network() {
    assert_all(cases::negative_loss_through_network());
}
