use fins::config::Config;
use fins::encoder::EncoderConfig;
use fins::shapes::{synthesize_cloud, AnalyticShape};
use fins::trainer::train_full;

fn main() {
    let lr: f64 = std::env::var("KFAC_LR").map(|v| v.parse().unwrap()).unwrap_or(1e-2);
    let damping: f64 = std::env::var("KFAC_DAMPING").map(|v| v.parse().unwrap()).unwrap_or(1e-3);
    let epochs: usize = std::env::var("EPOCHS").map(|v| v.parse().unwrap()).unwrap_or(40);
    let seed: u64 = std::env::var("SEED").map(|v| v.parse().unwrap()).unwrap_or(1);
    let warmup: f64 = std::env::var("WARMUP").map(|v| v.parse().unwrap()).unwrap_or(0.6);
    let shape = AnalyticShape::Sphere { radius: 0.5 };
    let cloud = synthesize_cloud(&shape, 2000, 0.0, 1).unwrap();
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
    config.train.warmup_fraction = warmup;
    config.optim.kfac.lr = lr;
    config.optim.kfac.damping = damping;
    if let Ok(v) = std::env::var("KFAC_REFRESH") { config.optim.kfac.refresh_every = v.parse().unwrap(); }
    let mut last = Vec::new();
    let r = train_full(&cloud, &config, None, |rec| {
        last.push(rec.report.total);
        if rec.epoch % 5 == 0 || rec.epoch + 3 >= epochs {
            println!(
                "{:3} {:7} total {:12.6} eik_s {:10.6} eik_g {:10.6}",
                rec.epoch, rec.stage.log_label(), rec.report.total,
                rec.report.eikonal_surface, rec.report.eikonal_global,
            );
        }
    });
    match r {
        Ok(_) => println!("finished, final {:.6}", last.last().unwrap()),
        Err(e) => println!("error: {e}"),
    }
}
