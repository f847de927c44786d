//! Optimizers and the staged training schedule.
//!
//! Training runs in two stages. A warmup stage updates every parameter
//! with Lion, whose sign-based steps tolerate the noisy early gradients
//! of the hash tables. Past the stage boundary the dense heads switch to
//! K-FAC, a Kronecker-factored natural-gradient method, while the tables
//! stay on Lion: per-layer curvature factors are cheap for the small
//! heads but would be meaningless for the sparsely hit tables.

use nalgebra::{Cholesky, DMatrix};
use serde::{Deserialize, Serialize};
use wide::f64x4;

use crate::error::{Error, Result};
use crate::field::{ParamGrads, StatsBatch};
use crate::heads::{ColorNet, GeoNet};
use crate::kernels::{all_finite, load4};

/// Sign convention shared by Lion: zero maps to zero, so parameters with
/// exactly zero momentum-mixed gradient stay put.
fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LionConfig {
    pub lr_encoder: f64,
    pub lr_heads: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
}

impl Default for LionConfig {
    fn default() -> LionConfig {
        LionConfig {
            lr_encoder: 3e-4,
            lr_heads: 1e-4,
            beta1: 0.9,
            beta2: 0.99,
            weight_decay: 0.0,
        }
    }
}

impl LionConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lr_encoder", self.lr_encoder), ("lr_heads", self.lr_heads)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Config(format!(
                    "lion {name} must be finite and > 0, got {v}"
                )));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::Config(format!(
                    "lion {name} must lie in [0, 1), got {v}"
                )));
            }
        }
        if !self.weight_decay.is_finite() || self.weight_decay < 0.0 {
            return Err(Error::Config(format!(
                "lion weight_decay must be finite and >= 0, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// Lion over one flat parameter tensor.
///
/// The interpolated gradient `c = beta1 m + (1 - beta1) g` sets only the
/// step direction; the magnitude is the learning rate itself. Momentum
/// then decays with the slower `beta2`. A step whose gradient contains a
/// non-finite value is skipped whole and counted, leaving both the
/// parameters and the momentum untouched.
#[derive(Debug, Clone)]
pub struct Lion {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    pub skipped: usize,
}

impl Lion {
    pub fn new(len: usize, lr: f64, config: &LionConfig) -> Lion {
        Lion {
            lr,
            beta1: config.beta1,
            beta2: config.beta2,
            weight_decay: config.weight_decay,
            m: vec![0.0; len],
            skipped: 0,
        }
    }

    /// Returns false when the step was skipped for a non-finite gradient.
    ///
    /// The vector body keeps the scalar arithmetic shape (separate
    /// multiply and add, no fused contraction) so every lane produces
    /// bitwise the same value as the plain loop over the tail.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> bool {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        if !all_finite(grads) {
            self.skipped += 1;
            return false;
        }
        let b1 = f64x4::splat(self.beta1);
        let c1 = f64x4::splat(1.0 - self.beta1);
        let b2 = f64x4::splat(self.beta2);
        let c2 = f64x4::splat(1.0 - self.beta2);
        let lr = f64x4::splat(self.lr);
        let wd = f64x4::splat(self.weight_decay);
        let bound = params.len() & !3;
        for ((p, g), m) in params[..bound]
            .chunks_exact_mut(4)
            .zip(grads[..bound].chunks_exact(4))
            .zip(self.m[..bound].chunks_exact_mut(4))
        {
            let pv = load4(p);
            let gv = load4(g);
            let mv = load4(m);
            let c = b1 * mv + c1 * gv;
            let sgn = c
                .simd_gt(f64x4::ZERO)
                .select(f64x4::ONE, c.simd_lt(f64x4::ZERO).select(-f64x4::ONE, f64x4::ZERO));
            p.copy_from_slice(&(pv - lr * (sgn + wd * pv)).to_array());
            m.copy_from_slice(&(b2 * mv + c2 * gv).to_array());
        }
        for i in bound..params.len() {
            let c = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            params[i] -= self.lr * (sign0(c) + self.weight_decay * params[i]);
            self.m[i] = self.beta2 * self.m[i] + (1.0 - self.beta2) * grads[i];
        }
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KfacConfig {
    pub lr: f64,
    pub ema_decay: f64,
    pub damping: f64,
    /// Factor inverses are recomputed every this many steps.
    pub refresh_every: usize,
}

impl Default for KfacConfig {
    fn default() -> KfacConfig {
        KfacConfig {
            lr: 1e-2,
            ema_decay: 0.95,
            damping: 1e-3,
            refresh_every: 10,
        }
    }
}

impl KfacConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.lr.is_finite() || self.lr <= 0.0 {
            return Err(Error::Config(format!(
                "kfac lr must be finite and > 0, got {}",
                self.lr
            )));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::Config(format!(
                "kfac ema_decay must lie in [0, 1), got {}",
                self.ema_decay
            )));
        }
        if !self.damping.is_finite() || self.damping <= 0.0 {
            return Err(Error::Config(format!(
                "kfac damping must be finite and > 0, got {}",
                self.damping
            )));
        }
        if self.refresh_every == 0 {
            return Err(Error::Config("kfac refresh_every must be >= 1".into()));
        }
        Ok(())
    }
}

/// Kronecker factors for one dense layer treated as `rows × cols` with
/// the bias folded into the last column.
#[derive(Debug, Clone)]
pub struct KfacLayer {
    pub rows: usize,
    pub cols: usize,
    /// EMA of the input second moment, cols × cols.
    pub a: DMatrix<f64>,
    /// EMA of the output-gradient second moment, rows × rows.
    pub g: DMatrix<f64>,
    pub a_inv: DMatrix<f64>,
    pub g_inv: DMatrix<f64>,
    seeded: bool,
}

impl KfacLayer {
    pub fn new(rows: usize, cols: usize) -> KfacLayer {
        KfacLayer {
            rows,
            cols,
            a: DMatrix::zeros(cols, cols),
            g: DMatrix::zeros(rows, rows),
            a_inv: DMatrix::identity(cols, cols),
            g_inv: DMatrix::identity(rows, rows),
            seeded: false,
        }
    }

    /// Folds one batch's summed outer products into the factor EMAs,
    /// with explicit per-side scales turning the sums into means. The
    /// first batch seeds the EMAs directly so early inverses are not
    /// dominated by the zero initialization.
    pub fn absorb(
        &mut self,
        a_sum: &[f64],
        a_scale: f64,
        g_sum: &[f64],
        g_scale: f64,
        decay: f64,
    ) {
        assert_eq!(a_sum.len(), self.cols * self.cols);
        assert_eq!(g_sum.len(), self.rows * self.rows);
        let finite =
            a_sum.iter().all(|v| v.is_finite()) && g_sum.iter().all(|v| v.is_finite());
        if !finite {
            return;
        }
        if self.seeded {
            for (dst, &s) in self.a.iter_mut().zip(a_sum) {
                *dst = decay * *dst + (1.0 - decay) * s * a_scale;
            }
            for (dst, &s) in self.g.iter_mut().zip(g_sum) {
                *dst = decay * *dst + (1.0 - decay) * s * g_scale;
            }
        } else {
            for (dst, &s) in self.a.iter_mut().zip(a_sum) {
                *dst = s * a_scale;
            }
            for (dst, &s) in self.g.iter_mut().zip(g_sum) {
                *dst = s * g_scale;
            }
            self.seeded = true;
        }
        symmetrize(&mut self.a);
        symmetrize(&mut self.g);
    }

    /// Recomputes both damped inverses. If a Cholesky factorization fails
    /// the damping is raised tenfold, up to three retries, before giving
    /// up. The factors are symmetric positive semidefinite by
    /// construction, so failures indicate numerical trouble rather than
    /// a rank deficit.
    pub fn refresh(&mut self, damping: f64) -> Result<()> {
        self.a_inv = damped_inverse(&self.a, damping)?;
        self.g_inv = damped_inverse(&self.g, damping)?;
        Ok(())
    }

    /// `G^-1 · grad · A^-1` over a row-major `rows × cols` gradient.
    pub fn precondition(&self, grad: &[f64]) -> DMatrix<f64> {
        assert_eq!(grad.len(), self.rows * self.cols);
        let m = DMatrix::from_row_slice(self.rows, self.cols, grad);
        &self.g_inv * m * &self.a_inv
    }
}

/// The outer-product sums are symmetric by construction; this guards
/// against drift from repeated EMA arithmetic anyway.
fn symmetrize(m: &mut DMatrix<f64>) {
    for r in 0..m.nrows() {
        for c in 0..r {
            let v = 0.5 * (m[(r, c)] + m[(c, r)]);
            m[(r, c)] = v;
            m[(c, r)] = v;
        }
    }
}

fn damped_inverse(m: &DMatrix<f64>, damping: f64) -> Result<DMatrix<f64>> {
    let mut lambda = damping;
    for _ in 0..4 {
        let mut damped = m.clone();
        for i in 0..m.nrows() {
            damped[(i, i)] += lambda;
        }
        if let Some(chol) = Cholesky::new(damped) {
            return Ok(chol.inverse());
        }
        lambda *= 10.0;
    }
    Err(Error::NonFinite(format!(
        "kfac factor is not positive definite even at damping {lambda}"
    )))
}

/// K-FAC over the three dense layers: GeoNet's hidden layer, its scalar
/// output layer, and ColorNet.
#[derive(Debug, Clone)]
pub struct KfacOptimizer {
    pub config: KfacConfig,
    pub layer1: KfacLayer,
    pub layer2: KfacLayer,
    pub color: KfacLayer,
    steps: usize,
    pub skipped: usize,
}

impl KfacOptimizer {
    pub fn new(input: usize, hidden: usize, config: KfacConfig) -> KfacOptimizer {
        KfacOptimizer {
            config,
            layer1: KfacLayer::new(hidden, input + 1),
            layer2: KfacLayer::new(1, hidden + 1),
            color: KfacLayer::new(3, input + 1),
            steps: 0,
            skipped: 0,
        }
    }

    /// Folds a batch's statistics into the factor EMAs.
    ///
    /// The captured per-sample gradients carry the batch-mean factor of
    /// the loss (each is `1/count` of the sample's own gradient), so
    /// where the input side becomes a mean by dividing the sum by
    /// `count`, the gradient side must be multiplied by `count` instead:
    /// `mean(count·gz (count·gz)ᵀ) = count · Σ gz gzᵀ`. Without that
    /// rescale the gradient factors sit far below the damping floor and
    /// preconditioning degenerates into a large constant amplifier.
    pub fn absorb(&mut self, stats: &StatsBatch) {
        if stats.count == 0 {
            return;
        }
        let decay = self.config.ema_decay;
        let a_scale = 1.0 / stats.count as f64;
        let g_scale = stats.count as f64;
        self.layer1
            .absorb(&stats.a1, a_scale, &stats.g1, g_scale, decay);
        self.layer2.absorb(
            &stats.a2,
            a_scale,
            std::slice::from_ref(&stats.g2),
            g_scale,
            decay,
        );
        self.color.absorb(&stats.a1, a_scale, &stats.gc, g_scale, decay);
    }

    /// Applies one preconditioned step to both heads. Skips (and counts)
    /// steps whose head gradients are not finite.
    pub fn step(
        &mut self,
        geo: &mut GeoNet,
        color: &mut ColorNet,
        grads: &ParamGrads,
    ) -> Result<bool> {
        let finite = grads.w1.iter().all(|v| v.is_finite())
            && grads.b1.iter().all(|v| v.is_finite())
            && grads.w2.iter().all(|v| v.is_finite())
            && grads.b2.is_finite()
            && grads.wc.iter().all(|v| v.is_finite())
            && grads.bc.iter().all(|v| v.is_finite());
        if !finite {
            self.skipped += 1;
            return Ok(false);
        }

        if self.steps % self.config.refresh_every == 0 {
            self.layer1.refresh(self.config.damping)?;
            self.layer2.refresh(self.config.damping)?;
            self.color.refresh(self.config.damping)?;
        }
        self.steps += 1;

        let n = geo.input;
        let hid = geo.hidden;
        let lr = self.config.lr;

        let mut g1 = vec![0.0; hid * (n + 1)];
        for h in 0..hid {
            g1[h * (n + 1)..h * (n + 1) + n].copy_from_slice(&grads.w1[h * n..(h + 1) * n]);
            g1[h * (n + 1) + n] = grads.b1[h];
        }
        let delta = self.layer1.precondition(&g1);
        for h in 0..hid {
            for i in 0..n {
                geo.w1[h * n + i] -= lr * delta[(h, i)];
            }
            geo.b1[h] -= lr * delta[(h, n)];
        }

        let mut g2 = vec![0.0; hid + 1];
        g2[..hid].copy_from_slice(&grads.w2);
        g2[hid] = grads.b2;
        let delta = self.layer2.precondition(&g2);
        for h in 0..hid {
            geo.w2[h] -= lr * delta[(0, h)];
        }
        geo.b2 -= lr * delta[(0, hid)];

        let mut gc = vec![0.0; 3 * (n + 1)];
        for r in 0..3 {
            gc[r * (n + 1)..r * (n + 1) + n].copy_from_slice(&grads.wc[r * n..(r + 1) * n]);
            gc[r * (n + 1) + n] = grads.bc[r];
        }
        let delta = self.color.precondition(&gc);
        for r in 0..3 {
            for i in 0..n {
                color.wc[r * n + i] -= lr * delta[(r, i)];
            }
            color.bc[r] -= lr * delta[(r, n)];
        }

        Ok(true)
    }
}

/// Which optimizer combination an epoch runs under.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Lion on every parameter.
    Warmup,
    /// Lion on the hash tables, K-FAC on the heads.
    Hybrid,
}

impl Stage {
    pub fn log_label(&self) -> &'static str {
        match self {
            Stage::Warmup => "warmup",
            Stage::Hybrid => "hybrid",
        }
    }
}

/// Two-stage schedule: the first `ceil(warmup_fraction * epochs)` epochs
/// run warmup, the rest hybrid.
#[derive(Debug, Clone, Copy)]
pub struct Schedule {
    pub epochs: usize,
    pub boundary: usize,
}

impl Schedule {
    pub fn new(epochs: usize, warmup_fraction: f64) -> Schedule {
        assert!((0.0..=1.0).contains(&warmup_fraction));
        Schedule {
            epochs,
            boundary: (warmup_fraction * epochs as f64).ceil() as usize,
        }
    }

    pub fn stage(&self, epoch: usize) -> Stage {
        if epoch < self.boundary {
            Stage::Warmup
        } else {
            Stage::Hybrid
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, tags};
    use rand::Rng;

    #[test]
    fn lion_known_first_step() {
        let config = LionConfig {
            lr_encoder: 0.1,
            ..LionConfig::default()
        };
        let mut lion = Lion::new(2, 0.1, &config);
        let mut params = vec![1.0, -2.0];
        assert!(lion.step(&mut params, &[0.5, -3.0]));
        // c = 0.1 * g, so the signs follow the gradient
        assert_eq!(params, vec![0.9, -1.9]);
        assert!((lion.m[0] - 0.005).abs() < 1e-15);
        assert!((lion.m[1] + 0.03).abs() < 1e-15);
    }

    #[test]
    fn lion_zero_gradient_holds_still() {
        let config = LionConfig::default();
        let mut lion = Lion::new(3, 1e-2, &config);
        let mut params = vec![0.5, -0.5, 0.0];
        assert!(lion.step(&mut params, &[0.0, 0.0, 0.0]));
        assert_eq!(params, vec![0.5, -0.5, 0.0]);
    }

    #[test]
    fn lion_two_steps_constant_gradient() {
        let config = LionConfig::default();
        let mut lion = Lion::new(1, 0.01, &config);
        let mut params = vec![1.0];
        lion.step(&mut params, &[2.0]);
        lion.step(&mut params, &[2.0]);
        // both steps see a positive c, so each subtracts exactly lr;
        // momentum after two EMA updates: (0.99 * 0.02) + 0.02
        assert!((params[0] - 0.98).abs() < 1e-15);
        assert!((lion.m[0] - (0.99 * 0.02 + 0.02)).abs() < 1e-15);
    }

    #[test]
    fn lion_step_ignores_gradient_magnitude() {
        let config = LionConfig::default();
        let grads = [0.3, -1.7, 0.0, 4.0];
        let mut a = Lion::new(4, 0.01, &config);
        let mut b = Lion::new(4, 0.01, &config);
        let mut pa = vec![1.0, 2.0, 3.0, 4.0];
        let mut pb = pa.clone();
        a.step(&mut pa, &grads);
        let scaled: Vec<f64> = grads.iter().map(|g| g * 1e6).collect();
        b.step(&mut pb, &scaled);
        assert_eq!(pa, pb);
    }

    #[test]
    fn lion_weight_decay_shrinks_params() {
        let config = LionConfig {
            weight_decay: 0.1,
            ..LionConfig::default()
        };
        let mut lion = Lion::new(1, 0.1, &config);
        let mut params = vec![2.0];
        lion.step(&mut params, &[0.0]);
        // step = lr * (sign(0) + 0.1 * 2.0)
        assert!((params[0] - (2.0 - 0.1 * 0.2)).abs() < 1e-15);
    }

    #[test]
    fn lion_skips_nonfinite_gradients() {
        let config = LionConfig::default();
        let mut lion = Lion::new(2, 1e-2, &config);
        let mut params = vec![1.0, 2.0];
        assert!(!lion.step(&mut params, &[f64::NAN, 1.0]));
        assert_eq!(params, vec![1.0, 2.0]);
        assert_eq!(lion.skipped, 1);
        assert!(lion.step(&mut params, &[1.0, 1.0]));
        assert_eq!(lion.skipped, 1);
    }

    #[test]
    fn identity_factors_reduce_to_plain_descent() {
        let mut layer = KfacLayer::new(3, 5);
        layer.a = DMatrix::identity(5, 5);
        layer.g = DMatrix::identity(3, 3);
        layer.a_inv = DMatrix::identity(5, 5);
        layer.g_inv = DMatrix::identity(3, 3);
        let mut rng = rng::stream(1, tags::PROBE);
        let grad: Vec<f64> = (0..15).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let delta = layer.precondition(&grad);
        for r in 0..3 {
            for c in 0..5 {
                assert_eq!(delta[(r, c)].to_bits(), grad[r * 5 + c].to_bits());
            }
        }
    }

    fn random_spd(dim: usize, rng: &mut impl Rng) -> DMatrix<f64> {
        let b = DMatrix::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..1.0));
        &b * b.transpose() + DMatrix::identity(dim, dim) * 0.5
    }

    #[test]
    fn preconditioner_matches_dense_kronecker() {
        let mut rng = rng::stream(2, tags::PROBE);
        let rows = 2;
        let cols = 3;
        let mut layer = KfacLayer::new(rows, cols);
        layer.a = random_spd(cols, &mut rng);
        layer.g = random_spd(rows, &mut rng);
        layer.refresh(1e-3).unwrap();

        let grad: Vec<f64> = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let delta = layer.precondition(&grad);

        // dense route: (A^-1 kron G^-1) vec(grad), column-stacked vec
        let dim = rows * cols;
        let mut kron = DMatrix::zeros(dim, dim);
        for ar in 0..cols {
            for ac in 0..cols {
                for gr in 0..rows {
                    for gc in 0..rows {
                        kron[(ar * rows + gr, ac * rows + gc)] =
                            layer.a_inv[(ar, ac)] * layer.g_inv[(gr, gc)];
                    }
                }
            }
        }
        let mut vec_grad = DMatrix::zeros(dim, 1);
        for c in 0..cols {
            for r in 0..rows {
                vec_grad[(c * rows + r, 0)] = grad[r * cols + c];
            }
        }
        let dense = &kron * vec_grad;
        for c in 0..cols {
            for r in 0..rows {
                assert!((dense[(c * rows + r, 0)] - delta[(r, c)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn scalar_layer_closed_form() {
        let mut layer = KfacLayer::new(1, 1);
        let (a2, g2) = (0.7, 0.3);
        layer.absorb(&[a2 * 4.0], &[g2 * 4.0], 4, 0.95);
        let lambda = 1e-3;
        layer.refresh(lambda).unwrap();
        let grad = 2.5;
        let delta = layer.precondition(&[grad]);
        let expected = grad / ((a2 + lambda) * (g2 + lambda));
        assert!((delta[(0, 0)] - expected).abs() < 1e-12);
    }

    #[test]
    fn damped_inverse_matches_dense_solve() {
        let mut rng = rng::stream(4, tags::PROBE);
        let a = random_spd(4, &mut rng);
        let inv = damped_inverse(&a, 1e-3).unwrap();
        let mut damped = a.clone();
        for i in 0..4 {
            damped[(i, i)] += 1e-3;
        }
        let oracle = damped.try_inverse().unwrap();
        for r in 0..4 {
            for c in 0..4 {
                assert!((inv[(r, c)] - oracle[(r, c)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn factors_stay_symmetric_psd() {
        let mut rng = rng::stream(5, tags::PROBE);
        let mut layer = KfacLayer::new(3, 4);
        for _ in 0..20 {
            // genuine outer-product sums from random vectors
            let mut a_sum = vec![0.0; 16];
            let mut g_sum = vec![0.0; 9];
            for _ in 0..6 {
                let a: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let g: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
                for r in 0..4 {
                    for c in 0..4 {
                        a_sum[r * 4 + c] += a[r] * a[c];
                    }
                }
                for r in 0..3 {
                    for c in 0..3 {
                        g_sum[r * 3 + c] += g[r] * g[c];
                    }
                }
            }
            layer.absorb(&a_sum, &g_sum, 6, 0.95);
            assert_eq!(layer.a, layer.a.transpose());
            assert_eq!(layer.g, layer.g.transpose());
        }
        let eig = layer.a.clone().symmetric_eigenvalues();
        assert!(eig.iter().all(|&v| v >= -1e-10));
        let eig = layer.g.clone().symmetric_eigenvalues();
        assert!(eig.iter().all(|&v| v >= -1e-10));
    }

    #[test]
    fn ema_seeds_then_decays() {
        let mut layer = KfacLayer::new(1, 2);
        // batch sums for two samples each: identity-ish factors
        layer.absorb(&[2.0, 0.0, 0.0, 2.0], &[2.0], 2, 0.95);
        assert_eq!(layer.a[(0, 0)], 1.0);
        assert_eq!(layer.g[(0, 0)], 1.0);
        layer.absorb(&[6.0, 0.0, 0.0, 6.0], &[6.0], 2, 0.95);
        let expected = 0.95 * 1.0 + 0.05 * 3.0;
        assert!((layer.a[(0, 0)] - expected).abs() < 1e-15);
        assert!((layer.g[(0, 0)] - expected).abs() < 1e-15);
    }

    #[test]
    fn absorb_ignores_empty_or_nonfinite_batches() {
        let mut layer = KfacLayer::new(1, 1);
        layer.absorb(&[4.0], &[4.0], 0, 0.95);
        assert_eq!(layer.a[(0, 0)], 0.0);
        layer.absorb(&[f64::NAN], &[4.0], 2, 0.95);
        assert_eq!(layer.a[(0, 0)], 0.0);
        layer.absorb(&[4.0], &[4.0], 2, 0.95);
        assert_eq!(layer.a[(0, 0)], 2.0);
    }

    #[test]
    fn refresh_raises_damping_before_failing() {
        let mut layer = KfacLayer::new(1, 1);
        // a tiny negative eigenvalue is rescued by extra damping
        layer.a[(0, 0)] = -1e-4;
        layer.g[(0, 0)] = 1.0;
        assert!(layer.refresh(1e-5).is_ok());
        layer.a[(0, 0)] = f64::NAN;
        assert!(layer.refresh(1e-3).is_err());
    }

    #[test]
    fn kfac_step_applies_preconditioned_deltas() {
        let mut rng = rng::stream(3, tags::MODEL_INIT);
        let input = 4;
        let hidden = 3;
        let mut geo = GeoNet::init(input, hidden, &mut rng);
        let mut color = ColorNet::init(input, &mut rng);
        let config = KfacConfig::default();
        let mut opt = KfacOptimizer::new(input, hidden, config);

        // plausible stats: random activations, unit gradients
        let mut stats = StatsBatch::new(input, hidden);
        stats.count = 8;
        for i in 0..=input {
            stats.a1[i * (input + 2)] = 8.0;
        }
        for h in 0..hidden {
            stats.g1[h * (hidden + 1)] = 8.0;
        }
        for h in 0..=hidden {
            stats.a2[h * (hidden + 2)] = 8.0;
        }
        stats.g2 = 8.0;
        for c in 0..3 {
            stats.gc[c * 4] = 8.0;
        }
        opt.absorb(&stats);

        let mut grads = ParamGrads {
            enc: vec![],
            w1: vec![0.0; hidden * input],
            b1: vec![0.0; hidden],
            w2: vec![0.0; hidden],
            b2: 0.5,
            wc: vec![0.0; 3 * input],
            bc: [0.1, -0.2, 0.3],
        };
        grads.w1[0] = 1.0;
        grads.w2[1] = -1.0;

        let before_w1 = geo.w1[0];
        let before_w2 = geo.w2[1];
        let before_b2 = geo.b2;
        let before_bc = color.bc;
        assert!(opt.step(&mut geo, &mut color, &grads).unwrap());
        // identity-like factors damp to roughly 1/(1 + damping)
        assert!(geo.w1[0] < before_w1);
        assert!(geo.w2[1] > before_w2);
        assert!(geo.b2 < before_b2);
        assert!(color.bc[0] < before_bc[0]);
        assert!(color.bc[1] > before_bc[1]);

        let nan_grads = ParamGrads {
            b2: f64::NAN,
            ..grads.clone()
        };
        assert!(!opt.step(&mut geo, &mut color, &nan_grads).unwrap());
        assert_eq!(opt.skipped, 1);
    }

    #[test]
    fn schedule_boundary_is_ceil_of_fraction() {
        let s = Schedule::new(500, 0.6);
        assert_eq!(s.boundary, 300);
        assert_eq!(s.stage(0), Stage::Warmup);
        assert_eq!(s.stage(299), Stage::Warmup);
        assert_eq!(s.stage(300), Stage::Hybrid);

        let s = Schedule::new(5, 0.6);
        assert_eq!(s.boundary, 3);
        let s = Schedule::new(1, 0.6);
        assert_eq!(s.boundary, 1);
        assert_eq!(s.stage(0), Stage::Warmup);

        let s = Schedule::new(10, 0.6);
        let pattern: String = (0..10)
            .map(|e| match s.stage(e) {
                Stage::Warmup => 'L',
                Stage::Hybrid => 'K',
            })
            .collect();
        assert_eq!(pattern, "LLLLLLKKKK");
    }

    #[test]
    fn config_validation() {
        assert!(LionConfig::default().validate().is_ok());
        assert!(KfacConfig::default().validate().is_ok());
        let bad = LionConfig {
            lr_heads: 0.0,
            ..LionConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = KfacConfig {
            ema_decay: 1.0,
            ..KfacConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
