//! The training loop: sample, evaluate, step, log.
//!
//! Each epoch draws one fresh batch from its own seeded stream, runs the
//! composite loss with gradients, and applies the stage's optimizers:
//! Lion everywhere during warmup, then Lion on the hash tables with
//! K-FAC on the heads. Runs are deterministic for a given config and
//! seed; only the wall-clock columns vary between repeats.

use std::path::Path;
use std::time::Instant;

use crate::cloud::{normalize_cloud, PointCloud};
use crate::config::Config;
use crate::error::{Error, Result};
use crate::field::{FieldModel, FieldWorkspace, ParamGrads, StatsBatch};
use crate::kdtree::SpatialIndex;
use crate::loss::{composite_loss, sample_batch, LossReport};
use crate::model_io::save_model;
use crate::optim::{KfacOptimizer, Lion, Schedule, Stage};
use crate::rng::{counter_stream, tags};

/// Consecutive non-finite epochs tolerated before aborting.
const DIVERGENCE_PATIENCE: usize = 3;

#[derive(Debug, Clone, Copy)]
pub struct EpochRecord {
    pub epoch: usize,
    pub report: LossReport,
    pub stage: Stage,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub rows: Vec<EpochRecord>,
    /// First epoch of the hybrid stage.
    pub boundary_epoch: usize,
    /// Optimizer steps skipped for non-finite gradients, all parameter
    /// groups combined.
    pub skipped_steps: usize,
    pub sample_ms: f64,
    pub loss_ms: f64,
    pub update_ms: f64,
    pub warnings: Vec<String>,
}

pub struct TrainOutcome {
    pub model: FieldModel,
    pub log: TrainLog,
}

pub fn train(cloud: &PointCloud, config: &Config) -> Result<TrainOutcome> {
    train_full(cloud, config, None, |_| {})
}

/// Full-control variant: optional model snapshots and a per-epoch
/// callback that observes records as they are produced, so callers keep
/// a partial log even when training aborts on divergence.
pub fn train_full(
    cloud: &PointCloud,
    config: &Config,
    snapshot_dir: Option<&Path>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    let tc = &config.train;

    let filtered = cloud.clone().filter_and_clean(tc.confidence_threshold)?;
    let (normalized, transform) = normalize_cloud(&filtered, tc.margin)?;
    let index = SpatialIndex::build(&normalized.positions);

    let mut model = FieldModel::init(config.encoder, config.net.hidden, tc.seed)?;
    model.transform = transform;
    let field = &mut model.field;

    let lion_cfg = &config.optim.lion;
    let mut lion_enc = Lion::new(field.enc_params.len(), lion_cfg.lr_encoder, lion_cfg);
    let mut lion_w1 = Lion::new(field.geo.w1.len(), lion_cfg.lr_heads, lion_cfg);
    let mut lion_b1 = Lion::new(field.geo.b1.len(), lion_cfg.lr_heads, lion_cfg);
    let mut lion_w2 = Lion::new(field.geo.w2.len(), lion_cfg.lr_heads, lion_cfg);
    let mut lion_b2 = Lion::new(1, lion_cfg.lr_heads, lion_cfg);
    let mut lion_wc = Lion::new(field.color.wc.len(), lion_cfg.lr_heads, lion_cfg);
    let mut lion_bc = Lion::new(3, lion_cfg.lr_heads, lion_cfg);
    let mut kfac = KfacOptimizer::new(field.geo.input, field.geo.hidden, config.optim.kfac);

    let schedule = Schedule::new(tc.epochs, tc.warmup_fraction);
    let sizes = tc.batch_sizes();
    let mut ws = FieldWorkspace::for_field(field);
    let mut grads = ParamGrads::zeros_like(field);
    let mut stats = StatsBatch::new(field.geo.input, field.geo.hidden);

    let mut log = TrainLog {
        boundary_epoch: schedule.boundary,
        ..TrainLog::default()
    };
    log.rows.reserve(tc.epochs);
    let mut consecutive_bad = 0usize;
    let mut warned_degenerate = false;

    for epoch in 0..tc.epochs {
        let epoch_start = Instant::now();
        let stage = schedule.stage(epoch);

        let mut rng = counter_stream(tc.seed, tags::EPOCH_BATCH, epoch as u64);
        let batch = sample_batch(
            &normalized,
            &index,
            &sizes,
            tc.noise_sigma,
            &tc.offsets,
            &mut rng,
        );
        let sampled = Instant::now();

        grads.reset();
        let stats_slot = if stage == Stage::Hybrid {
            stats.reset();
            Some(&mut stats)
        } else {
            None
        };
        let report = composite_loss(field, &batch, &config.loss, &mut ws, Some(&mut grads), stats_slot);
        let evaluated = Instant::now();

        if config.loss.normal > 0.0
            && !batch.surface.is_empty()
            && report.degenerate_normals == batch.surface.len()
            && !warned_degenerate
        {
            warned_degenerate = true;
            log.warnings.push(format!(
                "epoch {epoch}: every surface sample had a vanishing gradient; \
                 the normal term is inactive"
            ));
        }

        if report.is_finite() {
            consecutive_bad = 0;
            lion_enc.step(&mut field.enc_params, &grads.enc);
            match stage {
                Stage::Warmup => {
                    lion_w1.step(&mut field.geo.w1, &grads.w1);
                    lion_b1.step(&mut field.geo.b1, &grads.b1);
                    lion_w2.step(&mut field.geo.w2, &grads.w2);
                    lion_b2.step(std::slice::from_mut(&mut field.geo.b2), &[grads.b2]);
                    lion_wc.step(&mut field.color.wc, &grads.wc);
                    lion_bc.step(&mut field.color.bc, &grads.bc);
                }
                Stage::Hybrid => {
                    kfac.absorb(&stats);
                    kfac.step(&mut field.geo, &mut field.color, &grads)?;
                }
            }
        } else {
            consecutive_bad += 1;
        }
        let updated = Instant::now();

        let record = EpochRecord {
            epoch,
            report,
            stage,
            wall_ms: epoch_start.elapsed().as_secs_f64() * 1e3,
        };
        log.sample_ms += (sampled - epoch_start).as_secs_f64() * 1e3;
        log.loss_ms += (evaluated - sampled).as_secs_f64() * 1e3;
        log.update_ms += (updated - evaluated).as_secs_f64() * 1e3;
        on_epoch(&record);
        log.rows.push(record);

        if consecutive_bad >= DIVERGENCE_PATIENCE {
            return Err(Error::Diverged {
                epoch,
                consecutive: consecutive_bad,
            });
        }

        if tc.snapshot_every > 0 && (epoch + 1) % tc.snapshot_every == 0 {
            if let Some(dir) = snapshot_dir {
                let snap = FieldModel {
                    field: field.clone(),
                    transform,
                };
                let path = dir.join(format!("snapshot_epoch_{:05}.fins", epoch + 1));
                save_model(&snap, &path)?;
            }
        }
    }

    log.skipped_steps = lion_enc.skipped
        + lion_w1.skipped
        + lion_b1.skipped
        + lion_w2.skipped
        + lion_b2.skipped
        + lion_wc.skipped
        + lion_bc.skipped
        + kfac.skipped;

    if !field.is_finite() {
        return Err(Error::NonFinite(
            "trained parameters are not finite".into(),
        ));
    }

    Ok(TrainOutcome { model, log })
}

pub const TRAIN_LOG_HEADER: &str = "epoch,loss_total,loss_sdf,loss_zero,loss_eikonal_surface,loss_eikonal_global,loss_normal,loss_sparse,loss_off_surface,loss_rgb,wall_ms,stage";

pub fn format_train_log_row(r: &EpochRecord) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{:.3},{}",
        r.epoch,
        r.report.total,
        r.report.sdf,
        r.report.zero,
        r.report.eikonal_surface,
        r.report.eikonal_global,
        r.report.normal,
        r.report.sparse,
        r.report.off_surface,
        r.report.rgb,
        r.wall_ms,
        r.stage.log_label()
    )
}

pub fn write_train_log(log: &TrainLog, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::with_capacity(64 * (log.rows.len() + 1));
    text.push_str(TRAIN_LOG_HEADER);
    text.push('\n');
    for row in &log.rows {
        text.push_str(&format_train_log_row(row));
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::shapes::{synthesize_cloud, AnalyticShape};

    fn small_config(epochs: usize, seed: u64) -> Config {
        let mut config = Config::default();
        config.encoder = EncoderConfig {
            levels: 4,
            features_per_level: 2,
            table_size: 1 << 10,
            base_resolution: 4,
            per_level_scale: 1.6,
        };
        config.net.hidden = 16;
        config.train.epochs = epochs;
        config.train.seed = seed;
        config.train.batch_surface = 128;
        config.train.batch_noisy = 128;
        config.train.batch_band = 64;
        config.train.batch_uniform = 64;
        config.train.batch_off_surface = 128;
        config
    }

    fn sphere_cloud() -> PointCloud {
        let shape = AnalyticShape::Sphere { radius: 0.5 };
        synthesize_cloud(&shape, 2000, 0.0, 1).unwrap()
    }

    #[test]
    fn one_epoch_yields_one_row() {
        let cloud = sphere_cloud();
        let outcome = train(&cloud, &small_config(1, 3)).unwrap();
        assert_eq!(outcome.log.rows.len(), 1);
        assert_eq!(outcome.log.rows[0].epoch, 0);
        assert_eq!(outcome.log.rows[0].stage, Stage::Warmup);
    }

    #[test]
    fn training_is_deterministic_per_seed() {
        let cloud = sphere_cloud();
        let config = small_config(12, 5);
        let a = train(&cloud, &config).unwrap();
        let b = train(&cloud, &config).unwrap();
        assert_eq!(a.model.field.params_vec(), b.model.field.params_vec());
        for (ra, rb) in a.log.rows.iter().zip(&b.log.rows) {
            assert_eq!(ra.report.total.to_bits(), rb.report.total.to_bits());
            assert_eq!(ra.report.sdf.to_bits(), rb.report.sdf.to_bits());
        }
        let c = train(&cloud, &small_config(12, 6)).unwrap();
        assert_ne!(
            a.model.field.params_vec(),
            c.model.field.params_vec()
        );
    }

    #[test]
    fn stage_boundary_is_recorded_and_respected() {
        let cloud = sphere_cloud();
        let config = small_config(10, 2);
        let outcome = train(&cloud, &config).unwrap();
        assert_eq!(outcome.log.boundary_epoch, 6);
        for row in &outcome.log.rows {
            let expected = if row.epoch < 6 {
                Stage::Warmup
            } else {
                Stage::Hybrid
            };
            assert_eq!(row.stage, expected);
        }
    }

    #[test]
    fn loss_trends_downward() {
        let cloud = sphere_cloud();
        for seed in [1, 2, 3] {
            let config = small_config(40, seed);
            let outcome = train(&cloud, &config).unwrap();
            let totals: Vec<f64> = outcome.log.rows.iter().map(|r| r.report.total).collect();
            let head = median(&totals[..4]);
            let tail = median(&totals[totals.len() - 4..]);
            assert!(
                tail < head,
                "seed {seed}: median loss went {head} -> {tail}"
            );
        }
    }

    fn median(xs: &[f64]) -> f64 {
        let mut v = xs.to_vec();
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    }

    #[test]
    fn divergence_aborts_with_error() {
        let cloud = sphere_cloud();
        let mut config = small_config(50, 4);
        // hybrid from the start with an absurd K-FAC rate blows the
        // heads up within a few epochs
        config.train.warmup_fraction = 0.0;
        config.optim.kfac.lr = 1e15;
        match train(&cloud, &config) {
            Err(Error::Diverged { consecutive, .. }) => {
                assert_eq!(consecutive, DIVERGENCE_PATIENCE)
            }
            other => panic!("expected divergence, got {:?}", other.is_ok()),
        }
    }

    #[test]
    fn log_csv_has_header_and_rows() {
        let cloud = sphere_cloud();
        let outcome = train(&cloud, &small_config(3, 8)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.csv");
        write_train_log(&outcome.log, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert!(lines[0].starts_with("epoch,loss_total,loss_sdf"));
        assert!(lines[1].starts_with("0,"));
        assert!(lines[1].ends_with(",warmup"));
    }

    #[test]
    fn snapshots_written_at_cadence() {
        let cloud = sphere_cloud();
        let mut config = small_config(6, 9);
        config.train.snapshot_every = 3;
        let dir = tempfile::tempdir().unwrap();
        let outcome = train_full(&cloud, &config, Some(dir.path()), |_| {}).unwrap();
        assert!(dir.path().join("snapshot_epoch_00003.fins").exists());
        assert!(dir.path().join("snapshot_epoch_00006.fins").exists());
        assert!(outcome.log.rows.len() == 6);
    }
}
