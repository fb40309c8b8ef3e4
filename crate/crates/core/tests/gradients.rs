use mxcast::gradcheck::{run_gradcheck, GradcheckConfig};

#[test]
fn all_blocks_pass_on_fresh_model() {
    let report = run_gradcheck(&GradcheckConfig::default()).unwrap();
    print!("{}", report.to_text());
    assert!(report.passed());
    for b in &report.blocks {
        assert!(b.probes >= 50, "{} {}", b.suite, b.block);
    }
}

#[test]
fn corrupted_gradient_fails() {
    let cfg = GradcheckConfig {
        corrupt: true,
        ..Default::default()
    };
    let report = run_gradcheck(&cfg).unwrap();
    assert!(!report.passed());
    assert!(report.blocks.iter().any(|b| b.block == "W_o" && !b.passed()));
}

#[test]
fn worst_errors_are_reproducible() {
    let cfg = GradcheckConfig {
        seed: 5,
        ..Default::default()
    };
    assert_eq!(run_gradcheck(&cfg).unwrap(), run_gradcheck(&cfg).unwrap());
}
