//! Deterministic fixtures shared by the loss benchmarks.

use wassl::wasserstein::ProbabilityHistogram;
use wassl::GroundMatrix;

/// A reproducible instance without pulling in an RNG: smooth positive
/// waves for the histograms, a valid strictly-positive-off-diagonal cost
/// matrix.
pub fn instance(n: usize) -> (ProbabilityHistogram, ProbabilityHistogram, GroundMatrix) {
    let wave = |k: usize, phase: f64| 0.05 + (k as f64 * 0.7311 + phase).sin().abs();
    let s = ProbabilityHistogram::new((0..n).map(|k| wave(k, 0.3)).collect()).unwrap();
    let t = ProbabilityHistogram::new((0..n).map(|k| wave(k, 1.9)).collect()).unwrap();
    let rows = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        0.0
                    } else {
                        0.1 + wave(i * n + j, 0.0)
                    }
                })
                .collect()
        })
        .collect();
    (s, t, GroundMatrix::from_rows(rows).unwrap())
}
