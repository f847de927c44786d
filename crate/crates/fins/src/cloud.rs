//! Oriented, colored point clouds and the scene-to-training-domain
//! normalization transform.

use crate::error::{Error, Result};
use crate::math::Vec3;

/// Supervision source for field training. All attribute lists share one
/// length; normals are unit, colors and confidence lie in [0, 1].
#[derive(Debug, Clone, Default)]
pub struct PointCloud {
    pub positions: Vec<Vec3>,
    pub normals: Vec<Vec3>,
    pub colors: Vec<[f64; 3]>,
    pub confidence: Vec<f64>,
}

impl PointCloud {
    pub fn with_capacity(n: usize) -> Self {
        PointCloud {
            positions: Vec::with_capacity(n),
            normals: Vec::with_capacity(n),
            colors: Vec::with_capacity(n),
            confidence: Vec::with_capacity(n),
        }
    }

    pub fn push(&mut self, position: Vec3, normal: Vec3, color: [f64; 3], confidence: f64) {
        self.positions.push(position);
        self.normals.push(normal);
        self.colors.push(color);
        self.confidence.push(confidence.clamp(0.0, 1.0));
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Drops points with confidence below `threshold`, renormalizes the
    /// surviving normals, and clamps colors/confidence into [0, 1].
    /// Errors if nothing survives or a normal cannot be normalized.
    pub fn filter_and_clean(mut self, threshold: f64) -> Result<PointCloud> {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| self.confidence[i] >= threshold)
            .collect();
        if keep.is_empty() {
            return Err(Error::EmptyAfterFilter { threshold });
        }
        let mut out = PointCloud::with_capacity(keep.len());
        for i in keep {
            let n = self.normals[i].try_normalized(1e-12).ok_or_else(|| {
                Error::DegenerateCloud(format!("point {i} has a zero-length normal"))
            })?;
            let c = self.colors[i];
            out.push(
                self.positions[i],
                n,
                [
                    c[0].clamp(0.0, 1.0),
                    c[1].clamp(0.0, 1.0),
                    c[2].clamp(0.0, 1.0),
                ],
                self.confidence[i],
            );
        }
        self.positions.clear();
        Ok(out)
    }

    pub fn bounds(&self) -> Option<(Vec3, Vec3)> {
        let mut it = self.positions.iter();
        let first = *it.next()?;
        let mut lo = first;
        let mut hi = first;
        for &p in it {
            lo = lo.min(p);
            hi = hi.max(p);
        }
        Some((lo, hi))
    }
}

/// Uniform scale + translation mapping raw scene coordinates into the
/// normalized training domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneTransform {
    pub scale: f64,
    pub offset: Vec3,
}

impl SceneTransform {
    pub fn identity() -> Self {
        SceneTransform {
            scale: 1.0,
            offset: Vec3::ZERO,
        }
    }

    /// Scene -> normalized.
    pub fn apply(&self, p: Vec3) -> Vec3 {
        p * self.scale + self.offset
    }

    /// Normalized -> scene.
    pub fn invert(&self, p: Vec3) -> Vec3 {
        (p - self.offset) / self.scale
    }
}

/// Fits the cloud inside `[margin, 1-margin]^3` with a uniform scale and
/// per-axis centering translation. The longest axis spans the full
/// `[margin, 1-margin]` range; shorter axes are centered.
pub fn normalize_cloud(cloud: &PointCloud, margin: f64) -> Result<(PointCloud, SceneTransform)> {
    if cloud.is_empty() {
        return Err(Error::DegenerateCloud("empty cloud".into()));
    }
    if !(0.0..0.5).contains(&margin) {
        return Err(Error::Invalid(format!("margin {margin} must be in [0, 0.5)")));
    }
    let (lo, hi) = cloud.bounds().unwrap();
    let extent = hi - lo;
    let longest = extent.max_component();
    if longest <= 0.0 {
        return Err(Error::DegenerateCloud(
            "zero spatial extent (all points coincide)".into(),
        ));
    }
    let scale = (1.0 - 2.0 * margin) / longest;
    // center each axis inside the usable band
    let offset = Vec3::new(
        margin + 0.5 * ((1.0 - 2.0 * margin) - scale * extent.x) - scale * lo.x,
        margin + 0.5 * ((1.0 - 2.0 * margin) - scale * extent.y) - scale * lo.y,
        margin + 0.5 * ((1.0 - 2.0 * margin) - scale * extent.z) - scale * lo.z,
    );
    let transform = SceneTransform { scale, offset };
    let mut out = cloud.clone();
    for p in &mut out.positions {
        *p = transform.apply(*p);
    }
    Ok((out, transform))
}
