use fins::encoder::{EncoderConfig, FeatureEncoder, HashGridEncoder};
use fins::field::{Field, FieldWorkspace, ParamGrads, StatsBatch, Upstream};
use fins::math::Vec3;
use rand::Rng;
use std::time::Instant;

fn main() {
    let enc = HashGridEncoder::new(EncoderConfig::default()).unwrap();
    let mut field = Field::init(enc, 64, 7);
    let mut rng = fins::rng::stream(7, 9);
    for v in &mut field.enc_params {
        *v = rng.gen_range(-0.1..0.1);
    }
    let mut ws = FieldWorkspace::for_field(&field);
    let mut grads = ParamGrads::zeros_like(&field);
    let mut stats = StatsBatch::new(field.geo.input, field.geo.hidden);
    let pts: Vec<Vec3> = (0..16384)
        .map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen()))
        .collect();
    let n = pts.len() as f64;

    let mut feat = vec![0.0; field.encoder.output_dim()];
    let mut jac = vec![0.0; field.encoder.output_dim() * 3];
    let t = Instant::now();
    for &x in &pts {
        field.encoder.encode(&field.enc_params, x, &mut feat);
    }
    println!("encode               {:6.2} us", t.elapsed().as_secs_f64() * 1e6 / n);
    let t = Instant::now();
    for &x in &pts {
        field.encoder.encode_with_jacobian(&field.enc_params, x, &mut feat, &mut jac);
    }
    println!("encode_with_jacobian {:6.2} us", t.elapsed().as_secs_f64() * 1e6 / n);
    let t = Instant::now();
    for &x in &pts {
        field.distance(x, &mut ws);
    }
    println!("distance             {:6.2} us", t.elapsed().as_secs_f64() * 1e6 / n);
    let t = Instant::now();
    for &x in &pts {
        field.distance_and_grad(x, &mut ws);
    }
    println!("distance_and_grad    {:6.2} us", t.elapsed().as_secs_f64() * 1e6 / n);

    let t = Instant::now();
    for &x in &pts {
        field.distance(x, &mut ws);
        let up = Upstream { d: 0.3, ..Default::default() };
        field.backward_primed(x, &up, &mut ws, &mut grads, None);
    }
    println!("value fwd+bwd        {:6.2} us", t.elapsed().as_secs_f64() * 1e6 / n);

    let t = Instant::now();
    for &x in &pts {
        let (_, g) = field.distance_and_grad(x, &mut ws);
        let up = Upstream { d: 0.1, grad_d: Some(g), rgb: Some([0.1, 0.2, 0.3]) };
        field.backward_primed(x, &up, &mut ws, &mut grads, None);
    }
    println!("full fwd+bwd         {:6.2} us", t.elapsed().as_secs_f64() * 1e6 / n);

    let t = Instant::now();
    for &x in &pts {
        let (_, g) = field.distance_and_grad(x, &mut ws);
        let up = Upstream { d: 0.1, grad_d: Some(g), rgb: Some([0.1, 0.2, 0.3]) };
        field.backward_primed(x, &up, &mut ws, &mut grads, Some(&mut stats));
    }
    println!("full fwd+bwd+stats   {:6.2} us", t.elapsed().as_secs_f64() * 1e6 / n);
}
