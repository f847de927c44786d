use fins::config::Config;
use fins::shapes::{synthesize_cloud, AnalyticShape};
use fins::trainer::train_full;
use std::time::Instant;


fn quality_probe(out: &fins::trainer::TrainOutcome, shape: &AnalyticShape) {
    use fins::field::FieldWorkspace;
    use fins::math::Vec3;
    use rand::{Rng, SeedableRng};
    let mut ws = FieldWorkspace::for_field(&out.model.field);
    let t = &out.model.transform;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);

    // SDF RMSE over the band |d_true| < 0.3 (normalized units).
    let mut se = 0.0;
    let mut count = 0usize;
    while count < 20_000 {
        let x = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let d_true = shape.sdf(t.invert(x)) * t.scale;
        if d_true.abs() >= 0.3 { continue; }
        let d = out.model.field.distance(x, &mut ws);
        se += (d - d_true) * (d - d_true);
        count += 1;
    }
    let rmse = (se / count as f64).sqrt();

    // On-surface |d| and grad/normal angle over sphere points.
    let mut surf_se = 0.0;
    let mut ang_sum = 0.0;
    let n_surf = 5000;
    for _ in 0..n_surf {
        let mut v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        while v.norm() < 1e-6 { v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)); }
        let p_scene = v * (0.5 / v.norm());
        let x = t.apply(p_scene);
        let (d, g) = out.model.field.distance_and_grad(x, &mut ws);
        surf_se += d * d;
        let n = v / v.norm();
        let cos = (g.dot(n) / g.norm().max(1e-12)).clamp(-1.0, 1.0);
        ang_sum += cos.acos().to_degrees();
    }
    println!(
        "probe: band_rmse {:.5}  surf_rms {:.5}  mean_angle {:.2}deg",
        rmse, (surf_se / n_surf as f64).sqrt(), ang_sum / n_surf as f64
    );
}

fn main() {
    let epochs: usize = std::env::var("EPOCHS").map(|v| v.parse().unwrap()).unwrap_or(20);
    let shape = AnalyticShape::Sphere { radius: 0.5 };
    let cloud = synthesize_cloud(&shape, 20_000, 0.0, 1).unwrap();
    let mut config = Config::default();
    config.train.epochs = epochs;
    config.optim.kfac.damping = 3e-2;
    config.optim.kfac.refresh_every = 1;
    let t0 = Instant::now();
    let r = train_full(&cloud, &config, None, |rec| {
        if rec.epoch % 10 == 0 || rec.epoch + 2 >= epochs {
            println!(
                "{:3} {:7} total {:10.6} wall {:7.1}ms",
                rec.epoch, rec.stage.log_label(), rec.report.total, rec.wall_ms
            );
        }
    });
    let dt = t0.elapsed().as_secs_f64();
    match r {
        Ok(out) => {
            println!(
                "done in {:.2}s  sample {:.0}ms loss {:.0}ms update {:.0}ms  per-epoch {:.1}ms",
                dt, out.log.sample_ms, out.log.loss_ms, out.log.update_ms,
                1e3 * dt / epochs as f64
            );
            quality_probe(&out, &shape);
        }
        Err(e) => println!("error after {:.2}s: {e}", dt),
    }
}
