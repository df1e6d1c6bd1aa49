//! Shared helpers for the integration oracles: a dense Givens-QR
//! least-squares solver kept deliberately separate from the library's
//! streaming implementation, and a keyed uniform sampler built on the
//! library's counter-based normal generator.

#![allow(dead_code)]

use oldrm_core::sim::rng::standard_normal;

/// Solves `min || [1, p] * theta - q ||` by Givens rotations and returns
/// `(intercept, slope)`, or `None` when the design is rank-deficient.
pub fn qr_line_fit(ps: &[f64], qs: &[f64]) -> Option<(f64, f64)> {
    assert_eq!(ps.len(), qs.len());
    if ps.len() < 2 {
        return None;
    }
    // Rows of the upper-triangular system [R | Q^T q].
    let mut r = [[0.0f64; 3]; 2];
    for (&p, &q) in ps.iter().zip(qs) {
        let mut row = [1.0, p, q];
        for (k, r_k) in r.iter_mut().enumerate() {
            let a = r_k[k];
            let b = row[k];
            if b == 0.0 {
                continue;
            }
            let h = a.hypot(b);
            let (c, s) = (a / h, b / h);
            for j in k..3 {
                let upper = r_k[j];
                let lower = row[j];
                r_k[j] = c * upper + s * lower;
                row[j] = -s * upper + c * lower;
            }
        }
    }
    if r[1][1].abs() <= 1e-12 * (r[0][0].abs() + r[0][1].abs()) {
        return None;
    }
    let slope = r[1][2] / r[1][1];
    let intercept = (r[0][2] - r[0][1] * slope) / r[0][0];
    Some((intercept, slope))
}

/// Deterministic standard-normal stream for test-case generation, keyed away
/// from any seed the simulations themselves use.
pub fn test_normal(case: u64, slot: u64) -> f64 {
    standard_normal(0xBAD5_EED5, case, slot, 0)
}

/// Deterministic uniform draw in `[lo, hi)` from the same keyed stream.
pub fn test_uniform(case: u64, slot: u64, lo: f64, hi: f64) -> f64 {
    // Fold the normal through its tails into (0, 1) via the logistic map.
    let z = test_normal(case, slot);
    let u = 1.0 / (1.0 + (-z).exp());
    lo + (hi - lo) * u
}

pub fn assert_rel_close(actual: f64, expected: f64, rel_tol: f64, what: &str) {
    let scale = expected.abs().max(1.0);
    assert!(
        (actual - expected).abs() <= rel_tol * scale,
        "{what}: actual {actual}, expected {expected}, rel tol {rel_tol}"
    );
}
