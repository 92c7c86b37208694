use c2f_verify::suites;

fn assert_pass(out: suites::Outcome) {
    println!("{}", out.detail);
    assert!(out.passed, "{}", out.detail);
}

#[test]
fn kernels_match_direct_summation() {
    assert_pass(suites::kernels());
}

#[test]
fn distance_transform_matches_brute_force() {
    assert_pass(suites::distance_transform());
}

#[test]
fn metrics_match_references() {
    assert_pass(suites::metric_references());
}

#[test]
fn loss_identities_hold() {
    assert_pass(suites::loss_identities());
}

#[test]
fn acfm_blend_is_convex() {
    assert_pass(suites::acfm_convexity(1000));
}

#[test]
fn variants_match_recomposition() {
    assert_pass(suites::composition());
}

#[test]
fn suite_names_resolve() {
    for name in ["gradcheck", "conv-oracle", "edt-oracle", "metric-oracle", "loss-identities"] {
        assert!(suites::SUITES.contains(&name));
    }
    assert!(suites::run("no-such-suite").is_none());
}
