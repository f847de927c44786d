//! Composite training loss over point-cloud supervision sets.
//!
//! One training batch holds five sample sets drawn fresh each epoch:
//!
//! * `surface`: cloud points with normals, colors, and confidence. They
//!   drive the zero-level, normal-alignment, and color terms.
//! * `noisy`: Gaussian-perturbed cloud points with signed nearest-neighbor
//!   distance targets, driving the main distance-regression term.
//! * `band`: points kept within two noise sigmas of the cloud, for the
//!   near-surface Eikonal penalty.
//! * `uniform`: free-space points drawn uniformly over the unit cube, for
//!   the global Eikonal penalty and the sparsity (surface-minimality) term.
//! * `off_surface`: cloud points pushed along their normals by fixed
//!   offsets, with the offset as the regression target.
//!
//! `composite_loss` walks each set once, accumulating term values and,
//! when requested, exact parameter gradients through [`Field::backward`].
//! The standalone `loss_*` functions are reference evaluators over plain
//! closures; tests use them with analytic fields and `composite_loss` is
//! checked against them term by term.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::encoder::FeatureEncoder;
use crate::error::{Error, Result};
use crate::field::{Field, FieldWorkspace, ParamGrads, StatsBatch, Upstream};
use crate::kdtree::SpatialIndex;
use crate::math::Vec3;

/// Below this gradient norm a surface sample is skipped by the normal
/// term (counted as degenerate) instead of dividing by near-zero.
pub const NORMAL_GRAD_EPS: f64 = 1e-8;

/// Guard for the Eikonal gradient direction `g / |g|`. The term value is
/// still `(0 - 1)^2 = 1` at a critical point; only the descent direction
/// is undefined there, so the sample contributes no gradient.
const EIKONAL_GRAD_EPS: f64 = 1e-12;

/// Rejection-sampling budget per requested band point.
const BAND_ATTEMPTS_PER_POINT: usize = 50;

/// Per-term weights plus the sparsity sharpness `tau`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub sdf: f64,
    pub zero: f64,
    pub eikonal_surface: f64,
    pub eikonal_global: f64,
    pub normal: f64,
    pub sparse: f64,
    pub off_surface: f64,
    pub rgb: f64,
    pub tau: f64,
}

impl Default for LossWeights {
    fn default() -> LossWeights {
        LossWeights {
            sdf: 1.0,
            zero: 1.0,
            eikonal_surface: 0.1,
            eikonal_global: 0.1,
            normal: 0.5,
            sparse: 0.01,
            off_surface: 0.5,
            rgb: 0.5,
            tau: 50.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("sdf", self.sdf),
            ("zero", self.zero),
            ("eikonal_surface", self.eikonal_surface),
            ("eikonal_global", self.eikonal_global),
            ("normal", self.normal),
            ("sparse", self.sparse),
            ("off_surface", self.off_surface),
            ("rgb", self.rgb),
        ];
        for (name, w) in named {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::Config(format!(
                    "loss weight {name} must be finite and >= 0, got {w}"
                )));
            }
        }
        if !self.tau.is_finite() || self.tau <= 0.0 {
            return Err(Error::Config(format!(
                "loss tau must be finite and > 0, got {}",
                self.tau
            )));
        }
        Ok(())
    }
}

/// Requested sample counts per set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchSizes {
    pub surface: usize,
    pub noisy: usize,
    pub band: usize,
    pub uniform: usize,
    pub off_surface: usize,
}

impl Default for BatchSizes {
    fn default() -> BatchSizes {
        BatchSizes {
            surface: 4096,
            noisy: 4096,
            band: 2048,
            uniform: 2048,
            off_surface: 4096,
        }
    }
}

/// Surface supervision sample.
#[derive(Debug, Clone, Copy)]
pub struct SurfaceSample {
    pub point: Vec3,
    pub normal: Vec3,
    pub color: [f64; 3],
    pub confidence: f64,
}

/// Point with a scalar distance target and an averaging weight.
#[derive(Debug, Clone, Copy)]
pub struct TargetSample {
    pub point: Vec3,
    pub target: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, Default)]
pub struct LossBatch {
    pub surface: Vec<SurfaceSample>,
    pub noisy: Vec<TargetSample>,
    pub band: Vec<Vec3>,
    pub uniform: Vec<Vec3>,
    pub off_surface: Vec<TargetSample>,
}

/// Signed distance from `x` to the cloud: euclidean distance to the
/// nearest stored point, signed by which side of that point's oriented
/// tangent plane `x` falls on. Ties (exactly on the plane) count as
/// outside so that querying a cloud point itself yields `+0`.
pub fn signed_nn_distance(cloud: &PointCloud, index: &SpatialIndex, x: Vec3) -> f64 {
    let (i, dist) = index.nearest(x);
    let side = (x - cloud.positions[i]).dot(cloud.normals[i]);
    if side >= 0.0 {
        dist
    } else {
        -dist
    }
}

/// Draws one epoch's supervision sets from the cloud. `index` must be a
/// spatial index over exactly `cloud.positions`. All draws go through
/// `rng` in a fixed order, so a given generator state yields one batch.
///
/// Surface and noisy indices are uniform with replacement. Band points
/// are perturbed cloud points rejected until their signed distance lies
/// within `2 * noise_sigma` (with `noise_sigma == 0` the band collapses
/// onto the cloud itself). Off-surface candidates are every drawn surface
/// sample pushed along its normal by each entry of `offsets`, subsampled
/// down to the requested count.
pub fn sample_batch(
    cloud: &PointCloud,
    index: &SpatialIndex,
    sizes: &BatchSizes,
    noise_sigma: f64,
    offsets: &[f64],
    rng: &mut impl Rng,
) -> LossBatch {
    assert!(!cloud.is_empty(), "sample_batch over an empty cloud");
    debug_assert_eq!(index.len(), cloud.len());
    let n = cloud.len();
    let normal3 = |rng: &mut dyn rand::RngCore| {
        let dx: f64 = StandardNormal.sample(rng);
        let dy: f64 = StandardNormal.sample(rng);
        let dz: f64 = StandardNormal.sample(rng);
        Vec3::new(dx, dy, dz)
    };

    let mut batch = LossBatch::default();

    batch.surface.reserve(sizes.surface);
    for _ in 0..sizes.surface {
        let i = rng.gen_range(0..n);
        batch.surface.push(SurfaceSample {
            point: cloud.positions[i],
            normal: cloud.normals[i],
            color: cloud.colors[i],
            confidence: cloud.confidence[i],
        });
    }

    batch.noisy.reserve(sizes.noisy);
    for _ in 0..sizes.noisy {
        let i = rng.gen_range(0..n);
        let point = if noise_sigma > 0.0 {
            cloud.positions[i] + normal3(rng) * noise_sigma
        } else {
            cloud.positions[i]
        };
        batch.noisy.push(TargetSample {
            point,
            target: if noise_sigma > 0.0 {
                signed_nn_distance(cloud, index, point)
            } else {
                0.0
            },
            weight: cloud.confidence[i],
        });
    }

    batch.band.reserve(sizes.band);
    if noise_sigma > 0.0 {
        let mut attempts = sizes.band.saturating_mul(BAND_ATTEMPTS_PER_POINT);
        while batch.band.len() < sizes.band && attempts > 0 {
            attempts -= 1;
            let i = rng.gen_range(0..n);
            let x = cloud.positions[i] + normal3(rng) * noise_sigma;
            if signed_nn_distance(cloud, index, x).abs() < 2.0 * noise_sigma {
                batch.band.push(x);
            }
        }
    }
    while batch.band.len() < sizes.band {
        batch.band.push(cloud.positions[rng.gen_range(0..n)]);
    }

    batch.uniform.reserve(sizes.uniform);
    for _ in 0..sizes.uniform {
        batch
            .uniform
            .push(Vec3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()));
    }

    let mut candidates: Vec<TargetSample> =
        Vec::with_capacity(offsets.len() * batch.surface.len());
    for &off in offsets {
        for s in &batch.surface {
            candidates.push(TargetSample {
                point: s.point + s.normal * off,
                target: off,
                weight: 1.0,
            });
        }
    }
    if candidates.len() <= sizes.off_surface {
        batch.off_surface = candidates;
    } else {
        batch.off_surface = rand::seq::index::sample(rng, candidates.len(), sizes.off_surface)
            .into_iter()
            .map(|i| candidates[i])
            .collect();
    }

    batch
}

/// One evaluation of every term. Terms whose weight is zero are reported
/// as zero without being computed; `total` is exactly the weighted sum of
/// the reported values.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossReport {
    pub sdf: f64,
    pub zero: f64,
    pub eikonal_surface: f64,
    pub eikonal_global: f64,
    pub normal: f64,
    pub sparse: f64,
    pub off_surface: f64,
    pub rgb: f64,
    pub total: f64,
    /// Surface samples the normal term skipped for a vanishing gradient.
    pub degenerate_normals: usize,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
            && self.sdf.is_finite()
            && self.zero.is_finite()
            && self.eikonal_surface.is_finite()
            && self.eikonal_global.is_finite()
            && self.normal.is_finite()
            && self.sparse.is_finite()
            && self.off_surface.is_finite()
            && self.rgb.is_finite()
    }
}

fn signum0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Weight-normalized mean squared residual `(d(x) - target)^2`.
pub fn loss_sdf(samples: &[TargetSample], mut d_of: impl FnMut(Vec3) -> f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for s in samples {
        let r = d_of(s.point) - s.target;
        num += s.weight * r * r;
        den += s.weight;
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Confidence-normalized mean of `|d|` over surface samples.
pub fn loss_zero(surface: &[SurfaceSample], mut d_of: impl FnMut(Vec3) -> f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for s in surface {
        num += s.confidence * d_of(s.point).abs();
        den += s.confidence;
    }
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Mean squared deviation of the gradient norm from one.
pub fn loss_eikonal(points: &[Vec3], mut grad_of: impl FnMut(Vec3) -> Vec3) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    for &x in points {
        let r = grad_of(x).norm() - 1.0;
        sum += r * r;
    }
    sum / points.len() as f64
}

/// Mean of `(1 - cos(grad, normal))^2` over surface samples. Samples with
/// a vanishing gradient contribute zero and are counted in the second
/// return value; the mean stays over the full sample count.
pub fn loss_normal(
    surface: &[SurfaceSample],
    mut grad_of: impl FnMut(Vec3) -> Vec3,
) -> (f64, usize) {
    if surface.is_empty() {
        return (0.0, 0);
    }
    let mut sum = 0.0;
    let mut degenerate = 0;
    for s in surface {
        let g = grad_of(s.point);
        let norm = g.norm();
        if norm < NORMAL_GRAD_EPS {
            degenerate += 1;
            continue;
        }
        let r = 1.0 - g.dot(s.normal) / norm;
        sum += r * r;
    }
    (sum / surface.len() as f64, degenerate)
}

/// Mean of `exp(-tau * |d|)`, rewarding distance fields that keep free
/// space away from the zero level set.
pub fn loss_sparse(points: &[Vec3], tau: f64, mut d_of: impl FnMut(Vec3) -> f64) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    for &x in points {
        sum += (-tau * d_of(x).abs()).exp();
    }
    sum / points.len() as f64
}

/// Mean squared color error over surface samples.
pub fn loss_rgb(surface: &[SurfaceSample], mut rgb_of: impl FnMut(Vec3) -> [f64; 3]) -> f64 {
    if surface.is_empty() {
        return 0.0;
    }
    let mut sum = 0.0;
    for s in surface {
        let rgb = rgb_of(s.point);
        for c in 0..3 {
            let r = rgb[c] - s.color[c];
            sum += r * r;
        }
    }
    sum / surface.len() as f64
}

/// Evaluates the weighted composite loss over `batch` and, when `grads`
/// is given, accumulates exact parameter gradients for the total. Each
/// sample is visited once: its term contributions share one forward pass
/// and its per-term upstreams are merged into a single backward call.
///
/// Terms with zero weight are skipped entirely, including their forward
/// evaluations, so disabling a term cannot perturb gradients or cost.
/// Curvature statistics (`stats`) are captured from surface samples only,
/// and only when gradients are also requested.
pub fn composite_loss<E: FeatureEncoder>(
    field: &Field<E>,
    batch: &LossBatch,
    weights: &LossWeights,
    ws: &mut FieldWorkspace,
    mut grads: Option<&mut ParamGrads>,
    mut stats: Option<&mut StatsBatch>,
) -> LossReport {
    let mut report = LossReport::default();

    // Surface set: zero-level, normal, color terms; curvature stats.
    let use_normal = weights.normal > 0.0;
    let use_rgb = weights.rgb > 0.0;
    let use_zero = weights.zero > 0.0;
    if (use_zero || use_normal || use_rgb) && !batch.surface.is_empty() {
        let count = batch.surface.len() as f64;
        let sum_conf: f64 = batch.surface.iter().map(|s| s.confidence).sum();
        let inv_conf = if sum_conf > 0.0 { 1.0 / sum_conf } else { 0.0 };
        let mut zero_num = 0.0;
        let mut normal_sum = 0.0;
        let mut rgb_sum = 0.0;
        for s in &batch.surface {
            let (d, g, rgb) = match (use_normal, use_rgb) {
                (true, true) => field.forward_with_spatial_grad(s.point, ws),
                (true, false) => {
                    let (d, g) = field.distance_and_grad(s.point, ws);
                    (d, g, [0.0; 3])
                }
                (false, true) => {
                    let (d, rgb) = field.forward(s.point, ws);
                    (d, Vec3::ZERO, rgb)
                }
                (false, false) => (field.distance(s.point, ws), Vec3::ZERO, [0.0; 3]),
            };

            let mut up = Upstream::default();
            if use_zero {
                zero_num += s.confidence * d.abs();
                up.d = weights.zero * s.confidence * signum0(d) * inv_conf;
            }
            if use_normal {
                let norm = g.norm();
                if norm < NORMAL_GRAD_EPS {
                    report.degenerate_normals += 1;
                } else {
                    let unit = g * (1.0 / norm);
                    let cos = unit.dot(s.normal);
                    let r = 1.0 - cos;
                    normal_sum += r * r;
                    if grads.is_some() {
                        // d/dg of (1 - cos)^2 through the normalization.
                        let tangent = s.normal - unit * cos;
                        up.grad_d =
                            Some(tangent * (weights.normal * (-2.0 * r / norm) / count));
                    }
                }
            }
            if use_rgb {
                let mut gc = [0.0; 3];
                for c in 0..3 {
                    let r = rgb[c] - s.color[c];
                    rgb_sum += r * r;
                    gc[c] = weights.rgb * 2.0 * r / count;
                }
                up.rgb = Some(gc);
            }
            if let Some(g_out) = grads.as_deref_mut() {
                field.backward_primed(s.point, &up, ws, g_out, stats.as_deref_mut());
            }
        }
        // The upstreams above carry the batch-mean factors, so the
        // captured gradient second moments are count^2 too small for a
        // per-example Fisher estimate. Undo that here; the activation
        // side needs no correction.
        if let Some(st) = stats.as_deref_mut() {
            let scale = count * count;
            for v in st.g1.iter_mut() {
                *v *= scale;
            }
            st.g2 *= scale;
            for v in st.gc.iter_mut() {
                *v *= scale;
            }
        }
        if use_zero {
            report.zero = if sum_conf > 0.0 { zero_num / sum_conf } else { 0.0 };
        }
        if use_normal {
            report.normal = normal_sum / count;
        }
        if use_rgb {
            report.rgb = rgb_sum / count;
        }
    }

    // Noisy set: signed-distance regression.
    if weights.sdf > 0.0 && !batch.noisy.is_empty() {
        let mut num = 0.0;
        let mut den = 0.0;
        for s in &batch.noisy {
            den += s.weight;
        }
        let inv = if den > 0.0 { 1.0 / den } else { 0.0 };
        for s in &batch.noisy {
            let d = field.distance(s.point, ws);
            let r = d - s.target;
            num += s.weight * r * r;
            if let Some(g_out) = grads.as_deref_mut() {
                let up = Upstream {
                    d: weights.sdf * 2.0 * s.weight * r * inv,
                    ..Upstream::default()
                };
                field.backward_primed(s.point, &up, ws, g_out, None);
            }
        }
        report.sdf = if den > 0.0 { num / den } else { 0.0 };
    }

    // Near-surface band: Eikonal penalty.
    if weights.eikonal_surface > 0.0 && !batch.band.is_empty() {
        let count = batch.band.len() as f64;
        let mut sum = 0.0;
        for &x in &batch.band {
            let (_, g) = field.distance_and_grad(x, ws);
            let norm = g.norm();
            let r = norm - 1.0;
            sum += r * r;
            if let Some(g_out) = grads.as_deref_mut() {
                if norm >= EIKONAL_GRAD_EPS {
                    let up = Upstream {
                        grad_d: Some(g * (weights.eikonal_surface * 2.0 * r / (norm * count))),
                        ..Upstream::default()
                    };
                    field.backward_primed(x, &up, ws, g_out, None);
                }
            }
        }
        report.eikonal_surface = sum / count;
    }

    // Uniform free-space set: global Eikonal and sparsity terms.
    let use_eik_g = weights.eikonal_global > 0.0;
    let use_sparse = weights.sparse > 0.0;
    if (use_eik_g || use_sparse) && !batch.uniform.is_empty() {
        let count = batch.uniform.len() as f64;
        let mut eik_sum = 0.0;
        let mut sparse_sum = 0.0;
        for &x in &batch.uniform {
            let (d, g) = if use_eik_g {
                field.distance_and_grad(x, ws)
            } else {
                (field.distance(x, ws), Vec3::ZERO)
            };
            let mut up = Upstream::default();
            if use_eik_g {
                let norm = g.norm();
                let r = norm - 1.0;
                eik_sum += r * r;
                if norm >= EIKONAL_GRAD_EPS {
                    up.grad_d =
                        Some(g * (weights.eikonal_global * 2.0 * r / (norm * count)));
                }
            }
            if use_sparse {
                let e = (-weights.tau * d.abs()).exp();
                sparse_sum += e;
                up.d = weights.sparse * (-weights.tau) * signum0(d) * e / count;
            }
            if let Some(g_out) = grads.as_deref_mut() {
                if up.d != 0.0 || up.grad_d.is_some() {
                    field.backward_primed(x, &up, ws, g_out, None);
                }
            }
        }
        if use_eik_g {
            report.eikonal_global = eik_sum / count;
        }
        if use_sparse {
            report.sparse = sparse_sum / count;
        }
    }

    // Offset set: pushes the field toward the right value away from the
    // surface, resisting zero-everywhere collapse.
    if weights.off_surface > 0.0 && !batch.off_surface.is_empty() {
        let mut num = 0.0;
        let mut den = 0.0;
        for s in &batch.off_surface {
            den += s.weight;
        }
        let inv = if den > 0.0 { 1.0 / den } else { 0.0 };
        for s in &batch.off_surface {
            let d = field.distance(s.point, ws);
            let r = d - s.target;
            num += s.weight * r * r;
            if let Some(g_out) = grads.as_deref_mut() {
                let up = Upstream {
                    d: weights.off_surface * 2.0 * s.weight * r * inv,
                    ..Upstream::default()
                };
                field.backward_primed(s.point, &up, ws, g_out, None);
            }
        }
        report.off_surface = if den > 0.0 { num / den } else { 0.0 };
    }

    report.total = weights.sdf * report.sdf
        + weights.zero * report.zero
        + weights.eikonal_surface * report.eikonal_surface
        + weights.eikonal_global * report.eikonal_global
        + weights.normal * report.normal
        + weights.sparse * report.sparse
        + weights.off_surface * report.off_surface
        + weights.rgb * report.rgb;
    report
}
