use std::time::Instant;

use hidflow_core::verify::{run, Level};

#[test]
fn quick_suite_passes() {
    let checks = run(Level::Quick, 0, None).unwrap();
    for c in &checks {
        println!("{c}");
    }
    assert_eq!(checks.len(), 7);
    assert!(checks.iter().all(|c| c.passed));
}

#[test]
fn full_suite_passes_within_a_minute() {
    let start = Instant::now();
    let checks = run(Level::Full, 1, None).unwrap();
    for c in &checks {
        println!("{c}");
    }
    assert!(checks.iter().all(|c| c.passed));
    assert!(start.elapsed().as_secs() < 60, "{:?}", start.elapsed());
}
