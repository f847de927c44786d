//! SIMD slice kernels for the training hot path.
//!
//! The forward/backward passes and the optimizers are built from dot
//! products and rank-one updates over short f64 slices. Written naively
//! these compile to scalar loops (the summation order of a reduction is
//! observable, so the autovectorizer must not touch it); routing them
//! through explicit four-lane arithmetic makes the reassociation a stated
//! part of the contract. Results are deterministic for a given build.

use wide::f64x4;

/// Four consecutive lanes of a slice as a SIMD register. The length
/// check in `try_into` folds away once the callers' `chunks_exact`
/// bounds are visible, so this stays safe code.
#[inline(always)]
pub(crate) fn load4(s: &[f64]) -> f64x4 {
    let a: [f64; 4] = s.try_into().unwrap();
    f64x4::from(a)
}

/// Dot product, four lanes at a time with two running sums so consecutive
/// fused multiply-adds do not serialize.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let bound = a.len() & !7;
    let (ah, at) = a.split_at(bound);
    let (bh, bt) = b.split_at(bound);
    let mut acc0 = f64x4::ZERO;
    let mut acc1 = f64x4::ZERO;
    for (ca, cb) in ah.chunks_exact(8).zip(bh.chunks_exact(8)) {
        acc0 = load4(&ca[..4]).mul_add(load4(&cb[..4]), acc0);
        acc1 = load4(&ca[4..]).mul_add(load4(&cb[4..]), acc1);
    }
    let mut tail = 0.0;
    for (x, y) in at.iter().zip(bt) {
        tail += x * y;
    }
    (acc0 + acc1).reduce_add() + tail
}

/// y += c·x.
#[inline]
pub fn axpy(c: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    let bound = x.len() & !3;
    let (xh, xt) = x.split_at(bound);
    let (yh, yt) = y.split_at_mut(bound);
    let cv = f64x4::splat(c);
    for (cx, cy) in xh.chunks_exact(4).zip(yh.chunks_exact_mut(4)) {
        let r = cv.mul_add(load4(cx), load4(cy));
        cy.copy_from_slice(&r.to_array());
    }
    for (xv, yv) in xt.iter().zip(yt) {
        *yv += c * xv;
    }
}

/// y += c1·x1 + c2·x2, fused so y streams through registers once.
#[inline]
pub fn axpy2(c1: f64, x1: &[f64], c2: f64, x2: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x1.len(), y.len());
    debug_assert_eq!(x2.len(), y.len());
    let bound = y.len() & !3;
    let (x1h, x1t) = x1.split_at(bound);
    let (x2h, x2t) = x2.split_at(bound);
    let (yh, yt) = y.split_at_mut(bound);
    let c1v = f64x4::splat(c1);
    let c2v = f64x4::splat(c2);
    for ((ca, cb), cy) in x1h
        .chunks_exact(4)
        .zip(x2h.chunks_exact(4))
        .zip(yh.chunks_exact_mut(4))
    {
        let r = c2v.mul_add(load4(cb), c1v.mul_add(load4(ca), load4(cy)));
        cy.copy_from_slice(&r.to_array());
    }
    for ((a, b), yv) in x1t.iter().zip(x2t).zip(yt) {
        *yv += c1 * a + c2 * b;
    }
}

/// True when every element is finite, checked four lanes at a time.
pub fn all_finite(v: &[f64]) -> bool {
    let bound = v.len() & !3;
    let (h, t) = v.split_at(bound);
    for c in h.chunks_exact(4) {
        if !load4(c).is_finite().all() {
            return false;
        }
    }
    t.iter().all(|g| g.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dot_matches_naive_sum() {
        let a: Vec<f64> = (0..41).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..41).map(|i| (i as f64 * 0.11).cos()).collect();
        for len in [0, 1, 3, 4, 7, 8, 9, 16, 40, 41] {
            let naive: f64 = (0..len).map(|i| a[i] * b[i]).sum();
            assert!((dot(&a[..len], &b[..len]) - naive).abs() < 1e-14);
        }
    }

    #[test]
    fn axpy_matches_reference() {
        let x: Vec<f64> = (0..11).map(|i| i as f64 - 4.5).collect();
        for len in [0, 2, 4, 7, 11] {
            let mut y: Vec<f64> = (0..len).map(|i| 0.25 * i as f64).collect();
            let mut expect = y.clone();
            axpy(-1.75, &x[..len], &mut y);
            for (e, xv) in expect.iter_mut().zip(&x) {
                *e += -1.75 * xv;
            }
            for (a, b) in y.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn axpy2_matches_two_single_updates() {
        let x1: Vec<f64> = (0..9).map(|i| (i as f64).sqrt()).collect();
        let x2: Vec<f64> = (0..9).map(|i| 1.0 / (1.0 + i as f64)).collect();
        let mut fused = vec![0.5; 9];
        let mut split = vec![0.5; 9];
        axpy2(0.3, &x1, -2.0, &x2, &mut fused);
        axpy(0.3, &x1, &mut split);
        axpy(-2.0, &x2, &mut split);
        for (a, b) in fused.iter().zip(&split) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn all_finite_flags_every_lane_position() {
        for len in [1, 3, 4, 5, 8, 9] {
            for bad in 0..len {
                let mut v = vec![1.0; len];
                assert!(all_finite(&v));
                v[bad] = f64::NAN;
                assert!(!all_finite(&v), "NaN at {bad} of {len}");
                v[bad] = f64::INFINITY;
                assert!(!all_finite(&v), "inf at {bad} of {len}");
            }
        }
    }
}
