use c2f_verify::cases::{block_cases, network_cases, op_cases, Case};
use c2f_verify::GradCheck;

fn run_all(cases: Vec<Case>) {
    let opts = GradCheck::default();
    let mut failed = Vec::new();
    for case in cases {
        let report = (case.run)(&opts).unwrap_or_else(|e| panic!("{}: {e}", case.name));
        println!("{report}");
        if !report.passed() {
            failed.push(case.name);
        }
    }
    assert!(failed.is_empty(), "gradient mismatches in {failed:?}");
}

#[test]
fn every_op_matches_finite_differences() {
    run_all(op_cases());
}

#[test]
fn every_block_matches_finite_differences() {
    run_all(block_cases());
}

#[test]
fn tiny_network_matches_finite_differences() {
    run_all(network_cases());
}
