//! The implicit field f(x) = [d, r, g, b]: a feature encoder feeding GeoNet
//! and ColorNet, with hand-derived gradient propagation.
//!
//! Derivatives are closed forms for this fixed architecture instead of a
//! general tape. The delicate part is the loss path through the spatial
//! gradient ∇ₓd (Eikonal and normal terms): with u = σ(z)⊙w2 and q = W1ᵀu,
//! we have ∇ₓd = Jᵀq, so an upstream γ = ∂L/∂(∇ₓd) contributes
//!
//!   p = Jγ,
//!   ∂L/∂w2 += σ(z)⊙(W1 p),
//!   ∂L/∂z  += (W1 p)⊙w2⊙σ(z)(1−σ(z))   (the Softplus second derivative),
//!   ∂L/∂W1 += u pᵀ (+ the usual gz Eᵀ),
//!   ∂L/∂J   = q γᵀ,
//!
//! all of which the finite-difference suite cross-checks.

use crate::cloud::SceneTransform;
use crate::encoder::{CornerCache, EncoderConfig, FeatureEncoder, HashGridEncoder};
use crate::error::{Error, Result};
use crate::heads::{ColorNet, GeoNet};
use crate::kernels::{axpy, axpy2, dot};
use crate::math::Vec3;
use rand::Rng;

/// Hash tables start nearly flat so the initial field is dominated by the
/// geometry head's positive output bias.
pub const TABLE_INIT_RANGE: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct Field<E: FeatureEncoder> {
    pub encoder: E,
    /// Flat encoder parameters (hash tables); empty for parameter-free
    /// encoders.
    pub enc_params: Vec<f64>,
    pub geo: GeoNet,
    pub color: ColorNet,
}

/// What the loss knows about one sample: gradients with respect to the
/// predicted distance, its spatial gradient, and the predicted color.
#[derive(Debug, Clone, Copy, Default)]
pub struct Upstream {
    pub d: f64,
    pub grad_d: Option<Vec3>,
    pub rgb: Option<[f64; 3]>,
}

/// Scratch buffers reused across samples; one per worker.
#[derive(Debug, Clone)]
pub struct FieldWorkspace {
    feat: Vec<f64>,
    jac: Vec<f64>,
    z: Vec<f64>,
    sig: Vec<f64>,
    act: Vec<f64>,
    gz: Vec<f64>,
    u: Vec<f64>,
    w1p: Vec<f64>,
    p: Vec<f64>,
    q: Vec<f64>,
    g_feat: Vec<f64>,
    g_jac: Vec<f64>,
    corners: CornerCache,
}

impl FieldWorkspace {
    pub fn new(input: usize, hidden: usize, cache_slots: usize) -> FieldWorkspace {
        FieldWorkspace {
            feat: vec![0.0; input],
            jac: vec![0.0; input * 3],
            z: vec![0.0; hidden],
            sig: vec![0.0; hidden],
            act: vec![0.0; hidden],
            gz: vec![0.0; hidden],
            u: vec![0.0; hidden],
            w1p: vec![0.0; hidden],
            p: vec![0.0; input],
            q: vec![0.0; input],
            g_feat: vec![0.0; input],
            g_jac: vec![0.0; input * 3],
            corners: CornerCache::with_slots(cache_slots),
        }
    }

    pub fn for_field<E: FeatureEncoder>(field: &Field<E>) -> FieldWorkspace {
        FieldWorkspace::new(field.geo.input, field.geo.hidden, field.encoder.cache_slots())
    }
}

/// Gradient accumulator shaped like the trainable parameters.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub enc: Vec<f64>,
    pub w1: Vec<f64>,
    pub b1: Vec<f64>,
    pub w2: Vec<f64>,
    pub b2: f64,
    pub wc: Vec<f64>,
    pub bc: [f64; 3],
}

impl ParamGrads {
    pub fn zeros_like<E: FeatureEncoder>(field: &Field<E>) -> ParamGrads {
        ParamGrads {
            enc: vec![0.0; field.enc_params.len()],
            w1: vec![0.0; field.geo.w1.len()],
            b1: vec![0.0; field.geo.b1.len()],
            w2: vec![0.0; field.geo.w2.len()],
            b2: 0.0,
            wc: vec![0.0; field.color.wc.len()],
            bc: [0.0; 3],
        }
    }

    pub fn reset(&mut self) {
        self.enc.fill(0.0);
        self.w1.fill(0.0);
        self.b1.fill(0.0);
        self.w2.fill(0.0);
        self.b2 = 0.0;
        self.wc.fill(0.0);
        self.bc = [0.0; 3];
    }

    pub fn is_finite(&self) -> bool {
        self.enc.iter().all(|v| v.is_finite())
            && self.w1.iter().all(|v| v.is_finite())
            && self.b1.iter().all(|v| v.is_finite())
            && self.w2.iter().all(|v| v.is_finite())
            && self.b2.is_finite()
            && self.wc.iter().all(|v| v.is_finite())
            && self.bc.iter().all(|v| v.is_finite())
    }
}

/// Running sums of K-FAC statistics over one batch: per layer, Σ a aᵀ over
/// homogeneous inputs (bias folded in as a trailing 1) and Σ g gᵀ over
/// pre-activation gradients. Flat row-major storage; the optimizer turns
/// these into EMA factors.
#[derive(Debug, Clone)]
pub struct StatsBatch {
    pub input: usize,
    pub hidden: usize,
    pub count: usize,
    /// (input+1)² sums for GeoNet layer 1.
    pub a1: Vec<f64>,
    /// hidden² sums.
    pub g1: Vec<f64>,
    /// (hidden+1)² sums for GeoNet layer 2.
    pub a2: Vec<f64>,
    /// 1×1 sum.
    pub g2: f64,
    /// 3×3 sums. ColorNet reads the same features as GeoNet layer 1, so its
    /// input-side factor is `a1` and only the gradient side is separate.
    pub gc: Vec<f64>,
}

impl StatsBatch {
    pub fn new(input: usize, hidden: usize) -> StatsBatch {
        StatsBatch {
            input,
            hidden,
            count: 0,
            a1: vec![0.0; (input + 1) * (input + 1)],
            g1: vec![0.0; hidden * hidden],
            a2: vec![0.0; (hidden + 1) * (hidden + 1)],
            g2: 0.0,
            gc: vec![0.0; 9],
        }
    }

    pub fn reset(&mut self) {
        self.count = 0;
        self.a1.fill(0.0);
        self.g1.fill(0.0);
        self.a2.fill(0.0);
        self.g2 = 0.0;
        self.gc.fill(0.0);
    }
}

/// sum += [v;1][v;1]ᵀ
fn accumulate_homogeneous(sum: &mut [f64], v: &[f64]) {
    let k = v.len();
    let m = k + 1;
    debug_assert_eq!(sum.len(), m * m);
    for r in 0..k {
        let vr = v[r];
        let row = &mut sum[r * m..r * m + m];
        axpy(vr, v, &mut row[..k]);
        row[k] += vr;
    }
    let last = &mut sum[k * m..k * m + m];
    axpy(1.0, v, &mut last[..k]);
    last[k] += 1.0;
}

/// sum += v vᵀ
fn accumulate_outer(sum: &mut [f64], v: &[f64]) {
    let m = v.len();
    debug_assert_eq!(sum.len(), m * m);
    for r in 0..m {
        axpy(v[r], v, &mut sum[r * m..r * m + m]);
    }
}

impl<E: FeatureEncoder> Field<E> {
    pub fn new(encoder: E, enc_params: Vec<f64>, geo: GeoNet, color: ColorNet) -> Result<Field<E>> {
        let dim = encoder.output_dim();
        if geo.input != dim || color.input != dim {
            return Err(Error::Invalid(format!(
                "head input widths ({}, {}) do not match encoder output {}",
                geo.input, color.input, dim
            )));
        }
        if enc_params.len() != encoder.param_len() {
            return Err(Error::Invalid(format!(
                "encoder has {} parameters, expected {}",
                enc_params.len(),
                encoder.param_len()
            )));
        }
        Ok(Field {
            encoder,
            enc_params,
            geo,
            color,
        })
    }

    /// Seeded init: near-zero tables, Xavier heads, positive output bias.
    pub fn init(encoder: E, hidden: usize, seed: u64) -> Field<E> {
        let mut rng = crate::rng::stream(seed, crate::rng::tags::MODEL_INIT);
        let enc_params = (0..encoder.param_len())
            .map(|_| rng.gen_range(-TABLE_INIT_RANGE..=TABLE_INIT_RANGE))
            .collect();
        let dim = encoder.output_dim();
        let geo = GeoNet::init(dim, hidden, &mut rng);
        let color = ColorNet::init(dim, &mut rng);
        Field {
            encoder,
            enc_params,
            geo,
            color,
        }
    }

    pub fn param_count(&self) -> usize {
        self.enc_params.len() + self.geo.param_count() + self.color.param_count()
    }

    pub fn is_finite(&self) -> bool {
        self.enc_params.iter().all(|v| v.is_finite())
            && self.geo.is_finite()
            && self.color.is_finite()
    }

    pub fn forward(&self, x: Vec3, ws: &mut FieldWorkspace) -> (f64, [f64; 3]) {
        self.encoder
            .encode_cached(&self.enc_params, x, &mut ws.feat, &mut ws.corners);
        let d = self.geo.forward(&ws.feat, &mut ws.z, &mut ws.act, &mut ws.sig);
        (d, self.color.forward(&ws.feat))
    }

    pub fn distance(&self, x: Vec3, ws: &mut FieldWorkspace) -> f64 {
        self.encoder
            .encode_cached(&self.enc_params, x, &mut ws.feat, &mut ws.corners);
        self.geo.forward(&ws.feat, &mut ws.z, &mut ws.act, &mut ws.sig)
    }

    pub fn forward_with_spatial_grad(&self, x: Vec3, ws: &mut FieldWorkspace) -> (f64, Vec3, [f64; 3]) {
        let (d, g) = self.distance_and_grad(x, ws);
        (d, g, self.color.forward(&ws.feat))
    }

    /// d and ∇ₓd = Jᵀ W1ᵀ (σ(z)⊙w2).
    pub fn distance_and_grad(&self, x: Vec3, ws: &mut FieldWorkspace) -> (f64, Vec3) {
        self.encoder.encode_with_jacobian_cached(
            &self.enc_params,
            x,
            &mut ws.feat,
            &mut ws.jac,
            &mut ws.corners,
        );
        let d = self.geo.forward(&ws.feat, &mut ws.z, &mut ws.act, &mut ws.sig);
        let n = self.geo.input;
        let q = &mut ws.q[..n];
        let sig = &ws.sig[..self.geo.hidden];
        let w2 = &self.geo.w2[..self.geo.hidden];
        q.fill(0.0);
        for (h, row) in self.geo.w1.chunks_exact(n).enumerate() {
            axpy(sig[h] * w2[h], row, q);
        }
        let jac = &ws.jac[..n * 3];
        let mut g = Vec3::ZERO;
        for i in 0..n {
            g.x += jac[i * 3] * q[i];
            g.y += jac[i * 3 + 1] * q[i];
            g.z += jac[i * 3 + 2] * q[i];
        }
        (d, g)
    }

    /// Accumulates exact parameter gradients for one sample into `grads`.
    /// Recomputes the forward pass internally so activations always match
    /// the parameters being differentiated. Captures (a, g) statistics when
    /// `stats` is given.
    pub fn backward(
        &self,
        x: Vec3,
        up: &Upstream,
        ws: &mut FieldWorkspace,
        grads: &mut ParamGrads,
        stats: Option<&mut StatsBatch>,
    ) {
        if up.grad_d.is_some() {
            self.distance_and_grad(x, ws);
        } else {
            self.encoder
                .encode_cached(&self.enc_params, x, &mut ws.feat, &mut ws.corners);
            self.geo.forward(&ws.feat, &mut ws.z, &mut ws.act, &mut ws.sig);
        }
        self.backward_primed(x, up, ws, grads, stats);
    }

    /// [`backward`] without the forward recomputation: requires that the
    /// immediately preceding field call on this workspace evaluated the same
    /// `x`, via [`distance_and_grad`](Self::distance_and_grad) (or a wrapper)
    /// whenever `up.grad_d` is set so that `ws.jac` and `ws.q` are current,
    /// and via any forward otherwise. The batch loss loop runs forward and
    /// backward per sample back to back and uses this to skip the second
    /// encoder pass.
    pub fn backward_primed(
        &self,
        x: Vec3,
        up: &Upstream,
        ws: &mut FieldWorkspace,
        grads: &mut ParamGrads,
        stats: Option<&mut StatsBatch>,
    ) {
        let n = self.geo.input;
        let hid = self.geo.hidden;
        // Fixed-length views so the inner loops index without bounds checks.
        let feat = &ws.feat[..n];
        let p = &mut ws.p[..n];
        let g_feat = &mut ws.g_feat[..n];
        let sig = &ws.sig[..hid];
        let act = &ws.act[..hid];
        let w1 = &self.geo.w1[..hid * n];
        let w2 = &self.geo.w2[..hid];
        let gw1 = &mut grads.w1[..hid * n];
        let gw2 = &mut grads.w2[..hid];
        let gz = &mut ws.gz[..hid];
        g_feat.fill(0.0);
        let gd = up.d;
        if gd != 0.0 {
            grads.b2 += gd;
            axpy(gd, act, gw2);
        }

        if let Some(g) = up.grad_d {
            let jac = &ws.jac[..n * 3];
            for i in 0..n {
                p[i] = jac[i * 3] * g.x + jac[i * 3 + 1] * g.y + jac[i * 3 + 2] * g.z;
            }
            let w1p = &mut ws.w1p[..hid];
            let u = &mut ws.u[..hid];
            for (h, row) in w1.chunks_exact(n).enumerate() {
                let acc = dot(row, p);
                w1p[h] = acc;
                u[h] = sig[h] * w2[h];
                gw2[h] += sig[h] * acc;
            }
            for h in 0..hid {
                gz[h] = gd * w2[h] * sig[h] + w1p[h] * w2[h] * sig[h] * (1.0 - sig[h]);
            }
        } else {
            for h in 0..hid {
                gz[h] = gd * w2[h] * sig[h];
            }
        }

        if up.grad_d.is_some() {
            let u = &ws.u[..hid];
            for h in 0..hid {
                let gzh = gz[h];
                let row = &w1[h * n..h * n + n];
                axpy2(gzh, feat, u[h], p, &mut gw1[h * n..h * n + n]);
                axpy(gzh, row, g_feat);
                grads.b1[h] += gzh;
            }
        } else {
            for h in 0..hid {
                let gzh = gz[h];
                if gzh != 0.0 {
                    let row = &w1[h * n..h * n + n];
                    axpy(gzh, feat, &mut gw1[h * n..h * n + n]);
                    axpy(gzh, row, g_feat);
                }
                grads.b1[h] += gzh;
            }
        }

        if let Some(gc) = up.rgb {
            let wc = &self.color.wc[..3 * n];
            let gwc = &mut grads.wc[..3 * n];
            for c in 0..3 {
                let row = &wc[c * n..c * n + n];
                axpy(gc[c], feat, &mut gwc[c * n..c * n + n]);
                axpy(gc[c], row, g_feat);
                grads.bc[c] += gc[c];
            }
        }

        let g_jac = if let Some(g) = up.grad_d {
            let q = &ws.q[..n];
            let g_jac = &mut ws.g_jac[..n * 3];
            for i in 0..n {
                g_jac[i * 3] = q[i] * g.x;
                g_jac[i * 3 + 1] = q[i] * g.y;
                g_jac[i * 3 + 2] = q[i] * g.z;
            }
            Some(&*ws.g_jac)
        } else {
            None
        };
        self.encoder
            .scatter_cached(x, &ws.corners, Some(&ws.g_feat), g_jac, &mut grads.enc);

        if let Some(sb) = stats {
            sb.count += 1;
            accumulate_homogeneous(&mut sb.a1, &ws.feat);
            accumulate_outer(&mut sb.g1, &ws.gz);
            accumulate_homogeneous(&mut sb.a2, &ws.act);
            sb.g2 += gd * gd;
            accumulate_outer(&mut sb.gc, &up.rgb.unwrap_or([0.0; 3]));
        }
    }

    /// All trainable parameters as one flat vector (tables, W1, b1, W2, b2,
    /// Wc, bc). Used by finite-difference diagnostics.
    pub fn params_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        v.extend_from_slice(&self.enc_params);
        v.extend_from_slice(&self.geo.w1);
        v.extend_from_slice(&self.geo.b1);
        v.extend_from_slice(&self.geo.w2);
        v.push(self.geo.b2);
        v.extend_from_slice(&self.color.wc);
        v.extend_from_slice(&self.color.bc);
        v
    }

    /// Inverse of [`params_vec`]; `v` must have `param_count()` entries.
    pub fn set_params_vec(&mut self, v: &[f64]) {
        assert_eq!(v.len(), self.param_count());
        let mut at = 0;
        for dst in [
            &mut self.enc_params,
            &mut self.geo.w1,
            &mut self.geo.b1,
            &mut self.geo.w2,
        ] {
            let len = dst.len();
            dst.copy_from_slice(&v[at..at + len]);
            at += len;
        }
        self.geo.b2 = v[at];
        at += 1;
        let len = self.color.wc.len();
        self.color.wc.copy_from_slice(&v[at..at + len]);
        at += len;
        self.color.bc.copy_from_slice(&v[at..at + 3]);
    }

    /// Gradients flattened in the same order as [`params_vec`].
    pub fn grads_vec(&self, grads: &ParamGrads) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.param_count());
        v.extend_from_slice(&grads.enc);
        v.extend_from_slice(&grads.w1);
        v.extend_from_slice(&grads.b1);
        v.extend_from_slice(&grads.w2);
        v.push(grads.b2);
        v.extend_from_slice(&grads.wc);
        v.extend_from_slice(&grads.bc);
        v
    }
}

/// The trained artifact: a hash-grid field plus the scene-to-unit-cube
/// transform it was fitted under.
#[derive(Debug, Clone)]
pub struct FieldModel {
    pub field: Field<HashGridEncoder>,
    pub transform: SceneTransform,
}

impl FieldModel {
    pub fn init(config: EncoderConfig, hidden: usize, seed: u64) -> Result<FieldModel> {
        let encoder = HashGridEncoder::new(config)?;
        Ok(FieldModel {
            field: Field::init(encoder, hidden, seed),
            transform: SceneTransform::identity(),
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        self.field.encoder.config()
    }

    /// Signed distance in scene units at a scene-space query point. The
    /// field stores normalized-domain distances, so the value is divided by
    /// the transform scale; the gradient passes through unchanged because a
    /// similarity preserves directions and the eikonal magnitude.
    pub fn scene_sdf(&self, q: Vec3, ws: &mut FieldWorkspace) -> f64 {
        self.field.distance(self.transform.apply(q), ws) / self.transform.scale
    }

    pub fn scene_sdf_and_grad(&self, q: Vec3, ws: &mut FieldWorkspace) -> (f64, Vec3) {
        let (d, g) = self.field.distance_and_grad(self.transform.apply(q), ws);
        (d / self.transform.scale, g)
    }

    /// Raw (unclamped) rgb at a scene-space point.
    pub fn scene_color(&self, q: Vec3, ws: &mut FieldWorkspace) -> [f64; 3] {
        self.field.forward(self.transform.apply(q), ws).1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::HashGridEncoder;
    use rand::Rng;

    fn tiny_field(seed: u64) -> Field<HashGridEncoder> {
        let enc = HashGridEncoder::new(EncoderConfig {
            levels: 3,
            features_per_level: 2,
            table_size: 1 << 8,
            base_resolution: 3,
            per_level_scale: 1.5,
        })
        .unwrap();
        let mut field = Field::init(enc, 8, seed);
        // Flat init tables are too quiet for finite differencing; give the
        // encoder real signal.
        let mut rng = crate::rng::stream(seed, 77);
        for v in &mut field.enc_params {
            *v = rng.gen_range(-0.5..0.5);
        }
        field
    }

    fn interior_point(field: &Field<HashGridEncoder>, rng: &mut impl Rng) -> Vec3 {
        'outer: loop {
            let x = Vec3::new(rng.gen(), rng.gen(), rng.gen());
            for &res in field.encoder.resolutions() {
                let u = x * res as f64;
                for c in [u.x, u.y, u.z] {
                    let d = c - c.floor();
                    if !(0.05..=0.95).contains(&d) {
                        continue 'outer;
                    }
                }
            }
            return x;
        }
    }

    #[test]
    fn bias_only_field_is_constant() {
        let mut f = tiny_field(1);
        f.enc_params.fill(0.0);
        f.geo.w1.fill(0.0);
        f.geo.w2.fill(0.0);
        f.geo.b2 = 0.3;
        let mut ws = FieldWorkspace::for_field(&f);
        for x in [Vec3::splat(0.2), Vec3::new(0.9, 0.1, 0.5)] {
            let (d, g) = f.distance_and_grad(x, &mut ws);
            assert_eq!(d, 0.3);
            assert_eq!(g, Vec3::ZERO);
        }
    }

    #[test]
    fn zero_tables_make_output_position_independent() {
        let mut f = tiny_field(2);
        f.enc_params.fill(0.0);
        let mut ws = FieldWorkspace::for_field(&f);
        let (d1, c1) = f.forward(Vec3::splat(0.25), &mut ws);
        let (d2, c2) = f.forward(Vec3::new(0.8, 0.33, 0.6), &mut ws);
        assert_eq!(d1, d2);
        assert_eq!(c1, c2);
    }

    #[test]
    fn forward_is_pure() {
        let f = tiny_field(3);
        let mut ws = FieldWorkspace::for_field(&f);
        let x = Vec3::new(0.4, 0.7, 0.2);
        assert_eq!(f.forward(x, &mut ws), f.forward(x, &mut ws));
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = tiny_field(4);
        let b = tiny_field(4);
        assert_eq!(a.enc_params, b.enc_params);
        assert_eq!(a.geo, b.geo);
        assert_eq!(a.color, b.color);
    }

    #[test]
    fn spatial_grad_matches_central_differences() {
        let f = tiny_field(5);
        let mut ws = FieldWorkspace::for_field(&f);
        let mut rng = crate::rng::stream(5, 1);
        let h = 1e-4;
        for _ in 0..100 {
            let x = interior_point(&f, &mut rng);
            let (_, g) = f.distance_and_grad(x, &mut ws);
            for axis in 0..3 {
                let mut step = Vec3::ZERO;
                step.set(axis, h);
                let lo = f.distance(x - step, &mut ws);
                let hi = f.distance(x + step, &mut ws);
                let fd = (hi - lo) / (2.0 * h);
                let an = g.get(axis);
                assert!(
                    (an - fd).abs() / an.abs().max(1e-6) < 1e-4,
                    "axis {axis}: analytic {an} vs fd {fd}"
                );
            }
        }
    }

    #[test]
    fn backward_value_path_reaches_output_bias() {
        let f = tiny_field(6);
        let mut ws = FieldWorkspace::for_field(&f);
        let mut grads = ParamGrads::zeros_like(&f);
        let x = Vec3::new(0.3, 0.5, 0.7);
        f.backward(
            x,
            &Upstream {
                d: 1.0,
                ..Default::default()
            },
            &mut ws,
            &mut grads,
            None,
        );
        assert_eq!(grads.b2, 1.0);
        let (_, _) = f.forward(x, &mut ws);
        for h in 0..f.geo.hidden {
            assert!((grads.w2[h] - ws.act[h]).abs() < 1e-15);
        }
        assert!(grads.wc.iter().all(|&v| v == 0.0), "no rgb upstream");
    }

    /// Directional finite-difference check of the full backward pass for a
    /// scalar functional mixing all three upstream channels. The β term
    /// exercises the mixed second derivatives through ∇ₓd.
    fn check_backward_fd(alpha: f64, beta: f64, delta: [f64; 3]) {
        let f0 = tiny_field(7);
        let mut ws = FieldWorkspace::for_field(&f0);
        let mut rng = crate::rng::stream(8, 2);
        let points: Vec<Vec3> = (0..4).map(|_| interior_point(&f0, &mut rng)).collect();

        let eval = |field: &Field<HashGridEncoder>, ws: &mut FieldWorkspace| -> f64 {
            let mut total = 0.0;
            for &x in &points {
                let (d, g, rgb) = field.forward_with_spatial_grad(x, ws);
                total += alpha * d + 0.5 * beta * g.norm_squared();
                for c in 0..3 {
                    total += delta[c] * rgb[c];
                }
            }
            total
        };

        let mut grads = ParamGrads::zeros_like(&f0);
        for &x in &points {
            let (_, g, _) = f0.forward_with_spatial_grad(x, &mut ws);
            f0.backward(
                x,
                &Upstream {
                    d: alpha,
                    grad_d: Some(g * beta),
                    rgb: Some(delta),
                },
                &mut ws,
                &mut grads,
                None,
            );
        }
        let flat = f0.grads_vec(&grads);

        let params = f0.params_vec();
        let dir: Vec<f64> = (0..params.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let analytic: f64 = flat.iter().zip(&dir).map(|(g, d)| g * d).sum();

        let h = 1e-5;
        let mut probe = f0.clone();
        let shifted: Vec<f64> = params.iter().zip(&dir).map(|(p, d)| p + h * d).collect();
        probe.set_params_vec(&shifted);
        let up = eval(&probe, &mut ws);
        let shifted: Vec<f64> = params.iter().zip(&dir).map(|(p, d)| p - h * d).collect();
        probe.set_params_vec(&shifted);
        let down = eval(&probe, &mut ws);
        let fd = (up - down) / (2.0 * h);

        let rel = (analytic - fd).abs() / fd.abs().max(1e-9);
        assert!(
            rel < 1e-5,
            "alpha={alpha} beta={beta}: analytic {analytic} vs fd {fd} (rel {rel:.2e})"
        );
    }

    #[test]
    fn backward_matches_fd_value_only() {
        check_backward_fd(1.0, 0.0, [0.0; 3]);
    }

    #[test]
    fn backward_matches_fd_gradient_only() {
        check_backward_fd(0.0, 1.0, [0.0; 3]);
    }

    #[test]
    fn backward_matches_fd_color_only() {
        check_backward_fd(0.0, 0.0, [0.4, -0.2, 0.9]);
    }

    #[test]
    fn backward_matches_fd_mixed() {
        check_backward_fd(0.7, 0.3, [0.2, 0.1, -0.5]);
    }

    #[test]
    fn zero_upstream_zero_gradients() {
        let f = tiny_field(9);
        let mut ws = FieldWorkspace::for_field(&f);
        let mut grads = ParamGrads::zeros_like(&f);
        f.backward(
            Vec3::splat(0.4),
            &Upstream::default(),
            &mut ws,
            &mut grads,
            None,
        );
        assert!(f.grads_vec(&grads).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn stats_capture_is_symmetric() {
        let f = tiny_field(10);
        let mut ws = FieldWorkspace::for_field(&f);
        let mut grads = ParamGrads::zeros_like(&f);
        let mut stats = StatsBatch::new(f.geo.input, f.geo.hidden);
        let mut rng = crate::rng::stream(10, 3);
        for _ in 0..16 {
            let x = Vec3::new(rng.gen(), rng.gen(), rng.gen());
            let (_, g, _) = f.forward_with_spatial_grad(x, &mut ws);
            f.backward(
                x,
                &Upstream {
                    d: rng.gen_range(-1.0..1.0),
                    grad_d: Some(g),
                    rgb: Some([rng.gen_range(-1.0..1.0); 3]),
                },
                &mut ws,
                &mut grads,
                Some(&mut stats),
            );
        }
        assert_eq!(stats.count, 16);
        let check_sym = |m: &[f64], dim: usize, name: &str| {
            for r in 0..dim {
                for c in 0..dim {
                    let diff = (m[r * dim + c] - m[c * dim + r]).abs();
                    assert!(diff < 1e-12, "{name}[{r},{c}] asymmetric by {diff}");
                }
                assert!(m[r * dim + r] >= 0.0, "{name} diagonal negative");
            }
        };
        check_sym(&stats.a1, f.geo.input + 1, "A1");
        check_sym(&stats.g1, f.geo.hidden, "G1");
        check_sym(&stats.a2, f.geo.hidden + 1, "A2");
        check_sym(&stats.gc, 3, "Gc");
        assert!(stats.g2 >= 0.0);
    }

    #[test]
    fn default_head_parameter_count() {
        let geo = GeoNet::init(40, 64, &mut crate::rng::stream(1, 1));
        let color = ColorNet::init(40, &mut crate::rng::stream(1, 1));
        assert_eq!(geo.param_count() + color.param_count(), 2812);
    }

    #[test]
    fn default_model_initializes_near_bias() {
        let model = FieldModel::init(EncoderConfig::default(), 64, 42).unwrap();
        let mut ws = FieldWorkspace::for_field(&model.field);
        let (d, _) = model.field.forward(Vec3::splat(0.5), &mut ws);
        assert!(d.is_finite() && d.abs() < 5.0, "init distance {d}");
        assert_eq!(model.field.geo.b2, crate::heads::GEO_OUTPUT_BIAS_INIT);
        assert_eq!(model.field.param_count(), 10 * 65536 * 4 + 2812);
    }

    #[test]
    fn scene_queries_undo_the_transform() {
        let mut model = FieldModel::init(
            EncoderConfig {
                levels: 2,
                features_per_level: 2,
                table_size: 1 << 8,
                base_resolution: 3,
                per_level_scale: 1.5,
            },
            8,
            11,
        )
        .unwrap();
        let mut rng = crate::rng::stream(11, 77);
        for v in &mut model.field.enc_params {
            *v = rng.gen_range(-0.5..0.5);
        }
        model.transform = SceneTransform {
            scale: 2.0,
            offset: Vec3::new(0.1, -0.2, 0.3),
        };
        let mut ws = FieldWorkspace::for_field(&model.field);
        let q = Vec3::new(0.15, 0.4, 0.05);
        let x = model.transform.apply(q);
        let (dn, gn) = model.field.distance_and_grad(x, &mut ws);
        let (ds, gs) = model.scene_sdf_and_grad(q, &mut ws);
        assert!((ds - dn / 2.0).abs() < 1e-15);
        assert_eq!(gs, gn);
        assert_eq!(model.scene_sdf(q, &mut ws), ds);
    }

    #[test]
    fn params_vec_round_trip() {
        let f = tiny_field(12);
        let v = f.params_vec();
        assert_eq!(v.len(), f.param_count());
        let mut g = tiny_field(13);
        g.set_params_vec(&v);
        assert_eq!(g.params_vec(), v);
        let mut ws1 = FieldWorkspace::for_field(&f);
        let x = Vec3::new(0.3, 0.6, 0.9);
        assert_eq!(f.forward(x, &mut ws1), g.forward(x, &mut ws1));
    }
}
