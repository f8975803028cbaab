mod common;

use common::{sumfact_timing, sumfact_worst_gap};

#[test]
fn sumfact_matches_naive_on_random_curved_elements() {
    let worst = sumfact_worst_gap(16, 7);
    println!("worst relative Frobenius difference {worst:.2e}");
    assert!(worst <= 1e-12, "{worst:e}");
}

#[test]
fn sumfact_is_faster_at_order_five() {
    let (fast, slow) = sumfact_timing(11);
    println!("p=5 Gram: sumfact {fast:.4}s naive {slow:.4}s speedup {:.1}", slow / fast);
    assert!(slow / fast >= 5.0, "speedup {:.2}", slow / fast);
}
