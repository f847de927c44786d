use fins::encoder::{CornerCache, EncoderConfig, FeatureEncoder, HashGridEncoder};
use fins::math::Vec3;
use rand::Rng;
use std::time::Instant;

fn main() {
    let enc = HashGridEncoder::new(EncoderConfig::default()).unwrap();
    let mut rng = fins::rng::stream(7, 9);
    let params: Vec<f64> = (0..enc.param_len()).map(|_| rng.gen_range(-0.1..0.1)).collect();
    let mut grad = vec![0.0f64; enc.param_len()];
    let pts: Vec<Vec3> = (0..16384).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect();
    let n = pts.len() as f64;
    let dim = enc.output_dim();
    let mut out = vec![0.0; dim];
    let mut jac = vec![0.0; dim * 3];
    let mut cache = CornerCache::with_slots(enc.cache_slots());
    let gv: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let gj: Vec<f64> = (0..dim * 3).map(|_| rng.gen_range(-1.0..1.0)).collect();

    macro_rules! bench {
        ($name:expr, $body:expr) => {{
            let t = Instant::now();
            for &x in &pts { let _ = x; $body(x); }
            println!("{:28} {:6.2} us", $name, t.elapsed().as_secs_f64() * 1e6 / n);
        }};
    }

    bench!("encode", |x| enc.encode(&params, x, &mut out));
    bench!("encode_cached", |x| enc.encode_cached(&params, x, &mut out, &mut cache));
    bench!("encode_with_jacobian", |x| enc.encode_with_jacobian(&params, x, &mut out, &mut jac));
    bench!("encode_with_jacobian_cached", |x| enc.encode_with_jacobian_cached(&params, x, &mut out, &mut jac, &mut cache));
    bench!("scatter value", |x| enc.scatter_gradients(x, Some(&gv), None, &mut grad));
    bench!("scatter value+jac", |x| enc.scatter_gradients(x, Some(&gv), Some(&gj), &mut grad));
    bench!("scatter_cached value", |x| enc.scatter_cached(x, &cache, Some(&gv), None, &mut grad));
    bench!("scatter_cached value+jac", |x| enc.scatter_cached(x, &cache, Some(&gv), Some(&gj), &mut grad));
}
