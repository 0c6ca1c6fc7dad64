mod common;

use common::oracles::{brute_force_eer, gaussian_trials, grid_min_dcf, quantize_milli};
use common::rng;
use magphase::scoring::{eer, min_dcf, DcfParams};
use rand::Rng;

#[test]
fn hand_worked_eer() {
    let scores = [0.9f64, 0.8, 0.3, 0.4, 0.2, 0.1];
    let labels = [true, true, true, false, false, false];
    assert!((eer(&scores, &labels).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    // Perfect separation and perfect inversion.
    assert_eq!(eer(&[2.0f64, 1.0], &[true, false]).unwrap(), 0.0);
    assert_eq!(eer(&[1.0f64, 2.0], &[true, false]).unwrap(), 1.0);
}

#[test]
fn eer_matches_dense_threshold_sweep() {
    let mut r = rng(30);
    for case in 0..6 {
        let n_tgt = r.gen_range(20..200);
        let n_non = r.gen_range(20..400);
        let (scores, labels) = gaussian_trials(31 + case, n_tgt, n_non, r.gen_range(0.5..3.0));
        let fast = eer(&scores, &labels).unwrap();
        let slow = brute_force_eer(&scores, &labels);
        let tol = 1.0 / (2.0 * n_tgt.min(n_non) as f64);
        assert!((fast - slow).abs() <= tol, "case {case}: {fast} vs {slow} (tol {tol})");
    }
}

#[test]
fn min_dcf_matches_exhaustive_grid_on_quantized_scores() {
    let params = DcfParams::default();
    let mut r = rng(40);
    for case in 0..5 {
        let (raw, labels) = gaussian_trials(41 + case, r.gen_range(30..150), r.gen_range(100..600), 2.0);
        // Scores on a 1e-3 grid, so every distinct threshold is a grid point.
        let scores = quantize_milli(&raw);
        let fast = min_dcf(&scores, &labels, params).unwrap();
        let slow = grid_min_dcf(&scores, &labels, params);
        assert!((fast - slow).abs() < 1e-9, "case {case}: {fast} vs {slow}");
    }
}

#[test]
fn separated_gaussians_give_plausible_operating_point() {
    // d' = 3.76 puts the theoretical equal error rate near 3%.
    let (scores, labels) = gaussian_trials(50, 4000, 40000, 3.76);
    let e = eer(&scores, &labels).unwrap();
    let c = min_dcf(&scores, &labels, DcfParams::default()).unwrap();
    assert!((0.02..=0.04).contains(&e), "eer {e}");
    assert!((0.1..=0.3).contains(&c), "min_dcf {c}");
}

#[test]
fn both_metrics_agree_in_f32() {
    let (scores, labels) = gaussian_trials(60, 300, 900, 2.5);
    let single: Vec<f32> = scores.iter().map(|&s| s as f32).collect();
    let e64 = eer(&scores, &labels).unwrap();
    let e32 = eer(&single, &labels).unwrap() as f64;
    assert!((e64 - e32).abs() < 1e-5);
    let c64 = min_dcf(&scores, &labels, DcfParams::default()).unwrap();
    let c32 = min_dcf(&single, &labels, DcfParams::default()).unwrap() as f64;
    assert!((c64 - c32).abs() < 1e-4);
}
