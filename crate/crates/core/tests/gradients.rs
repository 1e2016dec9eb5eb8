use segadapt::selfcheck::{end_to_end_check, loss_checks, primitive_checks};

#[test]
fn every_primitive_matches_finite_differences() {
    let outcomes = primitive_checks(20).unwrap();
    for o in &outcomes {
        assert!(o.passed, "{}: worst relative error {:e}", o.name, o.worst_rel_error);
    }
    assert!(outcomes.len() >= 20);
}

#[test]
fn every_loss_term_matches_finite_differences() {
    for o in loss_checks(20).unwrap() {
        assert!(o.passed, "{}: worst relative error {:e}", o.name, o.worst_rel_error);
    }
}

#[test]
fn full_objective_matches_finite_differences_for_every_parameter() {
    let o = end_to_end_check(20, 4).unwrap();
    assert!(o.passed, "worst relative error {:e}", o.worst_rel_error);
}
