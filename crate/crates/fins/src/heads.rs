//! The two small heads that sit on top of the feature encoder: GeoNet, a
//! two-layer Softplus MLP emitting the signed distance, and ColorNet, a
//! single linear layer emitting rgb.

use crate::kernels::{dot, load4};
use rand::Rng;
use wide::f64x4;

/// Output bias at init: a small positive distance so the untrained field
/// reads "slightly outside" almost everywhere.
pub const GEO_OUTPUT_BIAS_INIT: f64 = 0.1;

/// ln(1 + e^z), evaluated without overflow on either tail.
#[inline]
pub fn softplus(z: f64) -> f64 {
    z.max(0.0) + ln_1p_unit((-z.abs()).exp())
}

/// ln(1 + e) for e in [0, 1]. glibc's log1p costs roughly twice what log
/// does and this call sits under every hidden unit, so switch to plain ln
/// where 1 + e keeps enough bits and a cubic Taylor step where it would
/// not. Relative error stays below 3e-10 on both sides of the seam.
#[inline]
fn ln_1p_unit(e: f64) -> f64 {
    if e < 1e-3 {
        e * (1.0 - e * (0.5 - e * (1.0 / 3.0)))
    } else {
        (1.0 + e).ln()
    }
}

/// Logistic sigmoid, the Softplus derivative.
#[inline]
pub fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// (softplus(z), logistic(z)) from one shared exponential. Bitwise equal
/// to calling the two functions separately; the forward pass needs both
/// and exp dominates its cost.
#[inline]
pub fn softplus_logistic(z: f64) -> (f64, f64) {
    let e = (-z.abs()).exp();
    let sp = z.max(0.0) + ln_1p_unit(e);
    let sig = if z >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
    (sp, sig)
}

/// Softplus and logistic over a whole pre-activation vector, four lanes per
/// exponential. The lanes agree with [`softplus_logistic`] to a couple of
/// ulp (the SIMD exp and ln_1p are polynomial, not libm), which downstream
/// tolerances absorb; within one build the values are deterministic.
pub fn softplus_logistic_slice(z: &[f64], act: &mut [f64], sig: &mut [f64]) {
    let n = z.len();
    debug_assert_eq!(act.len(), n);
    debug_assert_eq!(sig.len(), n);
    let bound = n & !3;
    let (zh, zt) = z.split_at(bound);
    let (ah, at) = act.split_at_mut(bound);
    let (sh, st) = sig.split_at_mut(bound);
    for ((cz, ca), cs) in zh
        .chunks_exact(4)
        .zip(ah.chunks_exact_mut(4))
        .zip(sh.chunks_exact_mut(4))
    {
        let zv = load4(cz);
        let e = (-zv.abs()).exp();
        let sp = zv.max(f64x4::ZERO) + e.ln_1p();
        let sg = zv.simd_ge(f64x4::ZERO).select(f64x4::ONE, e) / (f64x4::ONE + e);
        ca.copy_from_slice(&sp.to_array());
        cs.copy_from_slice(&sg.to_array());
    }
    for i in 0..zt.len() {
        let (sp, sg) = softplus_logistic(zt[i]);
        at[i] = sp;
        st[i] = sg;
    }
}

/// Xavier-uniform draw for a fan_in×fan_out layer, row-major.
fn xavier(rng: &mut impl Rng, fan_in: usize, fan_out: usize, len: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..len).map(|_| rng.gen_range(-limit..=limit)).collect()
}

/// d(x) = W2·softplus(W1·E(x) + b1) + b2.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoNet {
    pub input: usize,
    pub hidden: usize,
    /// hidden × input, row-major.
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    /// 1 × hidden.
    pub w2: Vec<f64>,
    pub b2: f64,
}

impl GeoNet {
    pub fn init(input: usize, hidden: usize, rng: &mut impl Rng) -> GeoNet {
        assert!(input >= 1 && hidden >= 1);
        GeoNet {
            input,
            hidden,
            w1: xavier(rng, input, hidden, hidden * input),
            b1: vec![0.0; hidden],
            w2: xavier(rng, hidden, 1, hidden),
            b2: GEO_OUTPUT_BIAS_INIT,
        }
    }

    /// Fills `z` (pre-activations), `act` (softplus outputs), and `sig`
    /// (logistics, needed by every gradient path), returns d.
    pub fn forward(&self, feat: &[f64], z: &mut [f64], act: &mut [f64], sig: &mut [f64]) -> f64 {
        debug_assert_eq!(feat.len(), self.input);
        let n = self.input;
        let hid = self.hidden;
        let feat = &feat[..n];
        let z = &mut z[..hid];
        let b1 = &self.b1[..hid];
        for (h, row) in self.w1.chunks_exact(n).enumerate() {
            z[h] = b1[h] + dot(row, feat);
        }
        softplus_logistic_slice(z, &mut act[..hid], &mut sig[..hid]);
        self.b2 + dot(&self.w2[..hid], &act[..hid])
    }

    pub fn param_count(&self) -> usize {
        self.hidden * self.input + self.hidden + self.hidden + 1
    }

    pub fn is_finite(&self) -> bool {
        self.w1.iter().chain(&self.b1).chain(&self.w2).all(|v| v.is_finite())
            && self.b2.is_finite()
    }
}

/// rgb(x) = Wc·E(x) + bc, unconstrained during training; clamp to [0,1]
/// only when baking colors into a mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct ColorNet {
    pub input: usize,
    /// 3 × input, row-major.
    pub wc: Vec<f64>,
    pub bc: [f64; 3],
}

impl ColorNet {
    pub fn init(input: usize, rng: &mut impl Rng) -> ColorNet {
        assert!(input >= 1);
        ColorNet {
            input,
            wc: xavier(rng, input, 3, 3 * input),
            bc: [0.0; 3],
        }
    }

    pub fn forward(&self, feat: &[f64]) -> [f64; 3] {
        debug_assert_eq!(feat.len(), self.input);
        let mut rgb = self.bc;
        for (c, row) in self.wc.chunks_exact(self.input).enumerate() {
            rgb[c] += dot(row, feat);
        }
        rgb
    }

    pub fn param_count(&self) -> usize {
        3 * self.input + 3
    }

    pub fn is_finite(&self) -> bool {
        self.wc.iter().all(|v| v.is_finite()) && self.bc.iter().all(|v| v.is_finite())
    }
}
