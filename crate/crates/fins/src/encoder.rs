//! Multi-resolution hash-grid feature encoder.
//!
//! Each level ℓ owns a table of `table_size` rows times `features_per_level`
//! columns. A query point is scaled by the level resolution, its voxel's 8
//! corners are hashed into the table, and the corner rows are blended
//! trilinearly. Levels are concatenated, so the output width is L·F.
//!
//! Besides plain evaluation this module produces the analytic Jacobian of
//! the feature with respect to the query point (needed by the Eikonal terms,
//! which differentiate the predicted distance spatially) and scatters loss
//! gradients back into the tables, including the second-order path that
//! flows through the Jacobian.

use crate::error::{Error, Result};
use crate::math::Vec3;
use serde::{Deserialize, Serialize};
use wide::f64x4;

/// Spatial-hash multipliers for y and z (x uses 1).
pub const HASH_PRIME_Y: u32 = 2_654_435_761;
pub const HASH_PRIME_Z: u32 = 805_459_861;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub levels: usize,
    pub features_per_level: usize,
    pub table_size: usize,
    pub base_resolution: u32,
    pub per_level_scale: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            levels: 10,
            features_per_level: 4,
            table_size: 1 << 16,
            base_resolution: 14,
            per_level_scale: 1.5,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.levels < 1 {
            return Err(Error::Config("encoder.levels must be >= 1".into()));
        }
        if self.features_per_level < 1 {
            return Err(Error::Config(
                "encoder.features_per_level must be >= 1".into(),
            ));
        }
        if !self.table_size.is_power_of_two() || self.table_size > u32::MAX as usize {
            return Err(Error::Config(
                "encoder.table_size must be a power of two that fits in u32".into(),
            ));
        }
        if self.base_resolution < 2 {
            return Err(Error::Config("encoder.base_resolution must be >= 2".into()));
        }
        if !(self.per_level_scale > 1.0) || !self.per_level_scale.is_finite() {
            return Err(Error::Config("encoder.per_level_scale must be > 1".into()));
        }
        // Corner caches store flat parameter offsets as u32; a table this
        // large would not fit in memory anyway.
        if self.levels * self.table_size * self.features_per_level > u32::MAX as usize {
            return Err(Error::Config(
                "encoder parameter count exceeds u32 addressing".into(),
            ));
        }
        Ok(())
    }

    /// Grid resolution of level `level` (zero-based): floor(R_base · sˡ).
    pub fn level_resolution(&self, level: usize) -> u32 {
        (self.base_resolution as f64 * self.per_level_scale.powi(level as i32)).floor() as u32
    }

    pub fn output_dim(&self) -> usize {
        self.levels * self.features_per_level
    }

    pub fn param_len(&self) -> usize {
        self.levels * self.table_size * self.features_per_level
    }
}

/// XOR spatial hash over wrapping u32 arithmetic, reduced mod the table size.
#[inline]
pub fn hash_vertex(v: [i64; 3], table_size: usize) -> usize {
    let h = (v[0] as u32)
        ^ (v[1] as u32).wrapping_mul(HASH_PRIME_Y)
        ^ (v[2] as u32).wrapping_mul(HASH_PRIME_Z);
    (h % table_size as u32) as usize
}

/// Table rows and interpolation weights remembered from an encode so the
/// matching gradient scatter can skip rehashing. `entries` holds flat
/// parameter offsets (row · features_per_level within the level block);
/// `weights` holds (w, ∂w/∂x, ∂w/∂y, ∂w/∂z) per corner, with the spatial
/// derivatives valid only after a Jacobian encode.
#[derive(Debug, Clone, Default)]
pub struct CornerCache {
    pub entries: Vec<u32>,
    pub weights: Vec<[f64; 4]>,
}

impl CornerCache {
    pub fn with_slots(slots: usize) -> CornerCache {
        CornerCache {
            entries: vec![0; slots],
            weights: vec![[0.0; 4]; slots],
        }
    }
}

/// A positional feature map with parameters owned by the caller. `params`
/// is the flat table storage for the hash grid and empty for parameter-free
/// encoders. Jacobians are row-major `[output_dim × 3]`.
///
/// The `*_cached` variants exist for the training loop, which encodes and
/// scatters per sample back to back: the encode records its corner lookups
/// in a [`CornerCache`] and the scatter replays them. Parameter-free
/// encoders keep the default implementations, which ignore the cache.
pub trait FeatureEncoder {
    fn output_dim(&self) -> usize;
    fn param_len(&self) -> usize;
    /// Corner-cache capacity an encode of this encoder fills.
    fn cache_slots(&self) -> usize {
        0
    }
    fn encode(&self, params: &[f64], x: Vec3, out: &mut [f64]);
    fn encode_with_jacobian(&self, params: &[f64], x: Vec3, out: &mut [f64], jac: &mut [f64]);
    /// Accumulates d(loss)/d(params) into `grad`, given the loss gradient
    /// with respect to the feature (`g_value`) and, optionally, with respect
    /// to the feature Jacobian (`g_jac`, same layout as `jac`).
    fn scatter_gradients(
        &self,
        x: Vec3,
        g_value: Option<&[f64]>,
        g_jac: Option<&[f64]>,
        grad: &mut [f64],
    );
    fn encode_cached(&self, params: &[f64], x: Vec3, out: &mut [f64], _cache: &mut CornerCache) {
        self.encode(params, x, out);
    }
    fn encode_with_jacobian_cached(
        &self,
        params: &[f64],
        x: Vec3,
        out: &mut [f64],
        jac: &mut [f64],
        _cache: &mut CornerCache,
    ) {
        self.encode_with_jacobian(params, x, out, jac);
    }
    /// Scatter against the corners recorded by the latest `encode_cached`
    /// call; `g_jac` requires that call to have been the Jacobian variant.
    fn scatter_cached(
        &self,
        x: Vec3,
        _cache: &CornerCache,
        g_value: Option<&[f64]>,
        g_jac: Option<&[f64]>,
        grad: &mut [f64],
    ) {
        self.scatter_gradients(x, g_value, g_jac, grad);
    }
}

#[derive(Debug, Clone)]
pub struct HashGridEncoder {
    config: EncoderConfig,
    resolutions: Vec<u32>,
}

/// Per-voxel interpolation state: the base corner and fractional offsets.
#[inline]
fn voxel_coords(resolution: u32, x: Vec3) -> ([i64; 3], [f64; 3]) {
    let r = resolution as f64;
    let mut base = [0i64; 3];
    let mut frac = [0.0f64; 3];
    for (axis, c) in [x.x, x.y, x.z].into_iter().enumerate() {
        // Out-of-domain queries clamp to the box so the tracer can probe
        // anywhere along a trajectory.
        let u = c.clamp(0.0, 1.0) * r;
        let i = u.floor();
        base[axis] = i as i64;
        frac[axis] = u - i;
    }
    (base, frac)
}

impl HashGridEncoder {
    pub fn new(config: EncoderConfig) -> Result<HashGridEncoder> {
        config.validate()?;
        let resolutions = (0..config.levels)
            .map(|l| config.level_resolution(l))
            .collect();
        Ok(HashGridEncoder {
            config,
            resolutions,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn resolutions(&self) -> &[u32] {
        &self.resolutions
    }
}

impl FeatureEncoder for HashGridEncoder {
    fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    fn param_len(&self) -> usize {
        self.config.param_len()
    }

    fn encode(&self, params: &[f64], x: Vec3, out: &mut [f64]) {
        let f_count = self.config.features_per_level;
        let t = self.config.table_size;
        debug_assert_eq!(params.len(), self.param_len());
        debug_assert_eq!(out.len(), self.output_dim());
        for (level, &res) in self.resolutions.iter().enumerate() {
            let (base, d) = voxel_coords(res, x);
            let wx = [1.0 - d[0], d[0]];
            let wy = [1.0 - d[1], d[1]];
            let wz = [1.0 - d[2], d[2]];
            let level_base = level * t * f_count;
            let out_level = &mut out[level * f_count..(level + 1) * f_count];
            out_level.fill(0.0);
            for corner in 0..8usize {
                let (a, b, c) = (corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
                let w = wx[a] * wy[b] * wz[c];
                let row = hash_vertex(
                    [base[0] + a as i64, base[1] + b as i64, base[2] + c as i64],
                    t,
                );
                let entry = level_base + row * f_count;
                for (f, o) in out_level.iter_mut().enumerate() {
                    *o += w * params[entry + f];
                }
            }
        }
    }

    fn encode_with_jacobian(&self, params: &[f64], x: Vec3, out: &mut [f64], jac: &mut [f64]) {
        let f_count = self.config.features_per_level;
        let t = self.config.table_size;
        debug_assert_eq!(jac.len(), self.output_dim() * 3);
        for (level, &res) in self.resolutions.iter().enumerate() {
            let (base, d) = voxel_coords(res, x);
            let r = res as f64;
            let wx = [1.0 - d[0], d[0]];
            let wy = [1.0 - d[1], d[1]];
            let wz = [1.0 - d[2], d[2]];
            let sgn = [-1.0, 1.0];
            let level_base = level * t * f_count;
            let o0 = level * f_count;
            out[o0..o0 + f_count].fill(0.0);
            jac[o0 * 3..(o0 + f_count) * 3].fill(0.0);
            for corner in 0..8usize {
                let (a, b, c) = (corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
                let w = wx[a] * wy[b] * wz[c];
                let gx = sgn[a] * wy[b] * wz[c] * r;
                let gy = wx[a] * sgn[b] * wz[c] * r;
                let gz = wx[a] * wy[b] * sgn[c] * r;
                let row = hash_vertex(
                    [base[0] + a as i64, base[1] + b as i64, base[2] + c as i64],
                    t,
                );
                let entry = level_base + row * f_count;
                for f in 0..f_count {
                    let v = params[entry + f];
                    out[o0 + f] += w * v;
                    let j = (o0 + f) * 3;
                    jac[j] += gx * v;
                    jac[j + 1] += gy * v;
                    jac[j + 2] += gz * v;
                }
            }
        }
    }

    fn scatter_gradients(
        &self,
        x: Vec3,
        g_value: Option<&[f64]>,
        g_jac: Option<&[f64]>,
        grad: &mut [f64],
    ) {
        let f_count = self.config.features_per_level;
        let t = self.config.table_size;
        debug_assert_eq!(grad.len(), self.param_len());
        for (level, &res) in self.resolutions.iter().enumerate() {
            let (base, d) = voxel_coords(res, x);
            let r = res as f64;
            let wx = [1.0 - d[0], d[0]];
            let wy = [1.0 - d[1], d[1]];
            let wz = [1.0 - d[2], d[2]];
            let sgn = [-1.0, 1.0];
            let level_base = level * t * f_count;
            let o0 = level * f_count;
            for corner in 0..8usize {
                let (a, b, c) = (corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
                let w = wx[a] * wy[b] * wz[c];
                let gx = sgn[a] * wy[b] * wz[c] * r;
                let gy = wx[a] * sgn[b] * wz[c] * r;
                let gz = wx[a] * wy[b] * sgn[c] * r;
                let row = hash_vertex(
                    [base[0] + a as i64, base[1] + b as i64, base[2] + c as i64],
                    t,
                );
                let entry = level_base + row * f_count;
                for f in 0..f_count {
                    let mut g = 0.0;
                    if let Some(gv) = g_value {
                        g += w * gv[o0 + f];
                    }
                    if let Some(gj) = g_jac {
                        let j = (o0 + f) * 3;
                        g += gx * gj[j] + gy * gj[j + 1] + gz * gj[j + 2];
                    }
                    grad[entry + f] += g;
                }
            }
        }
    }

    fn cache_slots(&self) -> usize {
        self.config.levels * 8
    }

    fn encode_cached(&self, params: &[f64], x: Vec3, out: &mut [f64], cache: &mut CornerCache) {
        let f_count = self.config.features_per_level;
        let t = self.config.table_size;
        debug_assert_eq!(cache.entries.len(), self.cache_slots());
        let mut slot = 0;
        for (level, &res) in self.resolutions.iter().enumerate() {
            let (base, d) = voxel_coords(res, x);
            let wx = [1.0 - d[0], d[0]];
            let wy = [1.0 - d[1], d[1]];
            let wz = [1.0 - d[2], d[2]];
            let level_base = level * t * f_count;
            if f_count == 4 {
                let mut acc = f64x4::ZERO;
                for corner in 0..8usize {
                    let (a, b, c) = (corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
                    let w = wx[a] * wy[b] * wz[c];
                    let row = hash_vertex(
                        [base[0] + a as i64, base[1] + b as i64, base[2] + c as i64],
                        t,
                    );
                    let entry = level_base + row * 4;
                    cache.entries[slot] = entry as u32;
                    cache.weights[slot] = [w, 0.0, 0.0, 0.0];
                    slot += 1;
                    let v: [f64; 4] = params[entry..entry + 4].try_into().unwrap();
                    acc = f64x4::splat(w).mul_add(f64x4::from(v), acc);
                }
                out[level * 4..level * 4 + 4].copy_from_slice(&acc.to_array());
            } else {
                let out_level = &mut out[level * f_count..(level + 1) * f_count];
                out_level.fill(0.0);
                for corner in 0..8usize {
                    let (a, b, c) = (corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
                    let w = wx[a] * wy[b] * wz[c];
                    let row = hash_vertex(
                        [base[0] + a as i64, base[1] + b as i64, base[2] + c as i64],
                        t,
                    );
                    let entry = level_base + row * f_count;
                    cache.entries[slot] = entry as u32;
                    cache.weights[slot] = [w, 0.0, 0.0, 0.0];
                    slot += 1;
                    for (f, o) in out_level.iter_mut().enumerate() {
                        *o += w * params[entry + f];
                    }
                }
            }
        }
    }

    fn encode_with_jacobian_cached(
        &self,
        params: &[f64],
        x: Vec3,
        out: &mut [f64],
        jac: &mut [f64],
        cache: &mut CornerCache,
    ) {
        let f_count = self.config.features_per_level;
        let t = self.config.table_size;
        debug_assert_eq!(cache.entries.len(), self.cache_slots());
        let mut slot = 0;
        for (level, &res) in self.resolutions.iter().enumerate() {
            let (base, d) = voxel_coords(res, x);
            let r = res as f64;
            let wx = [1.0 - d[0], d[0]];
            let wy = [1.0 - d[1], d[1]];
            let wz = [1.0 - d[2], d[2]];
            let sgn = [-1.0, 1.0];
            let level_base = level * t * f_count;
            if f_count == 4 {
                let mut acc = f64x4::ZERO;
                let mut jx = f64x4::ZERO;
                let mut jy = f64x4::ZERO;
                let mut jz = f64x4::ZERO;
                for corner in 0..8usize {
                    let (a, b, c) = (corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
                    let wyz = wy[b] * wz[c];
                    let w = wx[a] * wyz;
                    let gx = sgn[a] * wyz * r;
                    let gy = wx[a] * sgn[b] * wz[c] * r;
                    let gz = wx[a] * wy[b] * sgn[c] * r;
                    let row = hash_vertex(
                        [base[0] + a as i64, base[1] + b as i64, base[2] + c as i64],
                        t,
                    );
                    let entry = level_base + row * 4;
                    cache.entries[slot] = entry as u32;
                    cache.weights[slot] = [w, gx, gy, gz];
                    slot += 1;
                    let varr: [f64; 4] = params[entry..entry + 4].try_into().unwrap();
                    let v = f64x4::from(varr);
                    acc = f64x4::splat(w).mul_add(v, acc);
                    jx = f64x4::splat(gx).mul_add(v, jx);
                    jy = f64x4::splat(gy).mul_add(v, jy);
                    jz = f64x4::splat(gz).mul_add(v, jz);
                }
                let o0 = level * 4;
                out[o0..o0 + 4].copy_from_slice(&acc.to_array());
                let (xa, ya, za) = (jx.to_array(), jy.to_array(), jz.to_array());
                for f in 0..4 {
                    let j = (o0 + f) * 3;
                    jac[j] = xa[f];
                    jac[j + 1] = ya[f];
                    jac[j + 2] = za[f];
                }
            } else {
                let o0 = level * f_count;
                out[o0..o0 + f_count].fill(0.0);
                jac[o0 * 3..(o0 + f_count) * 3].fill(0.0);
                for corner in 0..8usize {
                    let (a, b, c) = (corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
                    let w = wx[a] * wy[b] * wz[c];
                    let gx = sgn[a] * wy[b] * wz[c] * r;
                    let gy = wx[a] * sgn[b] * wz[c] * r;
                    let gz = wx[a] * wy[b] * sgn[c] * r;
                    let row = hash_vertex(
                        [base[0] + a as i64, base[1] + b as i64, base[2] + c as i64],
                        t,
                    );
                    let entry = level_base + row * f_count;
                    cache.entries[slot] = entry as u32;
                    cache.weights[slot] = [w, gx, gy, gz];
                    slot += 1;
                    for f in 0..f_count {
                        let v = params[entry + f];
                        out[o0 + f] += w * v;
                        let j = (o0 + f) * 3;
                        jac[j] += gx * v;
                        jac[j + 1] += gy * v;
                        jac[j + 2] += gz * v;
                    }
                }
            }
        }
    }

    fn scatter_cached(
        &self,
        _x: Vec3,
        cache: &CornerCache,
        g_value: Option<&[f64]>,
        g_jac: Option<&[f64]>,
        grad: &mut [f64],
    ) {
        let f_count = self.config.features_per_level;
        let levels = self.config.levels;
        debug_assert_eq!(cache.entries.len(), levels * 8);
        if f_count == 4 {
            if let (Some(gv), Some(gj)) = (g_value, g_jac) {
                for level in 0..levels {
                    let o0 = level * 4;
                    let gvl: [f64; 4] = gv[o0..o0 + 4].try_into().unwrap();
                    let gvv = f64x4::from(gvl);
                    let gjl = &gj[o0 * 3..o0 * 3 + 12];
                    let gj0 = f64x4::from([gjl[0], gjl[3], gjl[6], gjl[9]]);
                    let gj1 = f64x4::from([gjl[1], gjl[4], gjl[7], gjl[10]]);
                    let gj2 = f64x4::from([gjl[2], gjl[5], gjl[8], gjl[11]]);
                    for k in level * 8..level * 8 + 8 {
                        let e = cache.entries[k] as usize;
                        let [w, gx, gy, gz] = cache.weights[k];
                        let dst = &mut grad[e..e + 4];
                        let cur: [f64; 4] = (&*dst).try_into().unwrap();
                        let mut d = f64x4::splat(w).mul_add(gvv, f64x4::from(cur));
                        d = f64x4::splat(gx).mul_add(gj0, d);
                        d = f64x4::splat(gy).mul_add(gj1, d);
                        d = f64x4::splat(gz).mul_add(gj2, d);
                        dst.copy_from_slice(&d.to_array());
                    }
                }
                return;
            }
            if let (Some(gv), None) = (g_value, g_jac) {
                for level in 0..levels {
                    let gvl: [f64; 4] = gv[level * 4..level * 4 + 4].try_into().unwrap();
                    let gvv = f64x4::from(gvl);
                    for k in level * 8..level * 8 + 8 {
                        let e = cache.entries[k] as usize;
                        let w = cache.weights[k][0];
                        let dst = &mut grad[e..e + 4];
                        let cur: [f64; 4] = (&*dst).try_into().unwrap();
                        let d = f64x4::splat(w).mul_add(gvv, f64x4::from(cur));
                        dst.copy_from_slice(&d.to_array());
                    }
                }
                return;
            }
        }
        // Uncommon widths and upstream shapes share the flexible path.
        for level in 0..levels {
            let o0 = level * f_count;
            for k in level * 8..(level + 1) * 8 {
                let e = cache.entries[k] as usize;
                let [w, gx, gy, gz] = cache.weights[k];
                for f in 0..f_count {
                    let mut g = 0.0;
                    if let Some(gv) = g_value {
                        g += w * gv[o0 + f];
                    }
                    if let Some(gj) = g_jac {
                        let j = (o0 + f) * 3;
                        g += gx * gj[j] + gy * gj[j + 1] + gz * gj[j + 2];
                    }
                    grad[e + f] += g;
                }
            }
        }
    }
}

/// Classic sinusoidal positional encoding, used only by the benchmark
/// harness as the first-order baseline. Output layout per octave k and
/// component c: [sin(2ᵏπ·x_c), cos(2ᵏπ·x_c)].
#[derive(Debug, Clone)]
pub struct SinusoidalEncoder {
    octaves: usize,
}

impl SinusoidalEncoder {
    pub fn new(octaves: usize) -> SinusoidalEncoder {
        assert!(octaves >= 1);
        SinusoidalEncoder { octaves }
    }
}

impl FeatureEncoder for SinusoidalEncoder {
    fn output_dim(&self) -> usize {
        self.octaves * 6
    }

    fn param_len(&self) -> usize {
        0
    }

    fn encode(&self, _params: &[f64], x: Vec3, out: &mut [f64]) {
        for k in 0..self.octaves {
            let omega = std::f64::consts::PI * (1u64 << k) as f64;
            for (c, v) in x.to_array().into_iter().enumerate() {
                let (s, co) = (omega * v).sin_cos();
                let i = (k * 3 + c) * 2;
                out[i] = s;
                out[i + 1] = co;
            }
        }
    }

    fn encode_with_jacobian(&self, _params: &[f64], x: Vec3, out: &mut [f64], jac: &mut [f64]) {
        jac.fill(0.0);
        for k in 0..self.octaves {
            let omega = std::f64::consts::PI * (1u64 << k) as f64;
            for (c, v) in x.to_array().into_iter().enumerate() {
                let (s, co) = (omega * v).sin_cos();
                let i = (k * 3 + c) * 2;
                out[i] = s;
                out[i + 1] = co;
                jac[i * 3 + c] = omega * co;
                jac[(i + 1) * 3 + c] = -omega * s;
            }
        }
    }

    fn scatter_gradients(
        &self,
        _x: Vec3,
        _g_value: Option<&[f64]>,
        _g_jac: Option<&[f64]>,
        _grad: &mut [f64],
    ) {
    }
}
