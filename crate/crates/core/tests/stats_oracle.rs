mod common;

use common::oracles::{p_value_oracle, pearson_oracle, t_two_tailed_oracle};
use indalign::stats::{p_value_two_tailed, pearson_complete, t_two_tailed};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn simpson_oracle_matches_closed_forms() {
    // df = 1 is Cauchy, df = 2 has an algebraic tail
    for &t in &[0.3, 1.0, 2.5, 6.0] {
        let cauchy = 1.0 - 2.0 * f64::atan(t) / std::f64::consts::PI;
        assert!((t_two_tailed_oracle(t, 1) - cauchy).abs() < 1e-10);
        let df2 = 1.0 - t / (2.0 + t * t).sqrt();
        assert!((t_two_tailed_oracle(t, 2) - df2).abs() < 1e-10);
    }
}

#[test]
fn t_tail_matches_integration() {
    for df in 1..=40u32 {
        for &t in &[0.05, 0.5, 1.3, 2.0, 2.9406, 4.0, 7.5] {
            let lib = t_two_tailed(t, df as f64);
            let oracle = t_two_tailed_oracle(t, df);
            assert!((lib - oracle).abs() < 1e-9, "df {df} t {t}: {lib} vs {oracle}");
        }
    }
}

#[test]
fn p_value_matches_integration() {
    for n in 3..=30 {
        for &r in &[-0.95, -0.7, -0.2, 0.1, 0.5, 0.7, 0.85, 0.99] {
            let lib = p_value_two_tailed(r, n).unwrap();
            let oracle = p_value_oracle(r, n);
            assert!((lib - oracle).abs() < 1e-8, "r {r} n {n}: {lib} vs {oracle}");
        }
    }
    let p = p_value_oracle(0.7, 11);
    assert!((p - 0.0165).abs() < 1e-3, "{p}");
}

#[test]
fn pearson_matches_direct_definition() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..500 {
        let n = rng.random_range(3..60);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-50.0..50.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| 0.3 * v + rng.random_range(-30.0..30.0)).collect();
        let a = pearson_complete(&x, &y).unwrap();
        let b = pearson_oracle(&x, &y).unwrap();
        assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }
}
