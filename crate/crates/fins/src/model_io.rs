//! Binary model files.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic   4 bytes  "FINS"
//! version u32      currently 1
//! encoder u32 x4   levels, features_per_level, table_size, base_resolution
//!         f64      per_level_scale
//! net     u32      hidden width
//! frame   f64 x4   scene scale, then the offset vector
//! tables  f32 x (levels * table_size * features)   level-major, row-major
//! geo     f32      w1 (hidden x input, row-major), b1, w2, b2
//! color   f32      wc (3 x input, row-major), bc
//! ```
//!
//! Parameters are stored as f32; training state stays f64 in memory, so
//! saving quantizes once and a saved-loaded-saved file is byte-identical
//! to the first save.

use std::path::Path;

use crate::cloud::SceneTransform;
use crate::encoder::{EncoderConfig, FeatureEncoder, HashGridEncoder};
use crate::error::{Error, Result};
use crate::field::{Field, FieldModel};
use crate::heads::{ColorNet, GeoNet};
use crate::math::Vec3;

pub const MODEL_MAGIC: [u8; 4] = *b"FINS";
pub const MODEL_VERSION: u32 = 1;

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f32_slice(&mut self, vs: &[f64]) {
        for &v in vs {
            self.buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
}

pub fn encode_model(model: &FieldModel) -> Vec<u8> {
    let field = &model.field;
    let config = field.encoder.config();
    let mut w = Writer {
        buf: Vec::with_capacity(64 + 4 * field.param_count()),
    };
    w.buf.extend_from_slice(&MODEL_MAGIC);
    w.u32(MODEL_VERSION);
    w.u32(config.levels as u32);
    w.u32(config.features_per_level as u32);
    w.u32(config.table_size as u32);
    w.u32(config.base_resolution as u32);
    w.f64(config.per_level_scale);
    w.u32(field.geo.hidden as u32);
    w.f64(model.transform.scale);
    w.f64(model.transform.offset.x);
    w.f64(model.transform.offset.y);
    w.f64(model.transform.offset.z);
    w.f32_slice(&field.enc_params);
    w.f32_slice(&field.geo.w1);
    w.f32_slice(&field.geo.b1);
    w.f32_slice(&field.geo.w2);
    w.f32_slice(&[field.geo.b2]);
    w.f32_slice(&field.color.wc);
    w.f32_slice(&field.color.bc);
    w.buf
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.at + n > self.buf.len() {
            return Err(Error::ModelFormat(format!(
                "file truncated at byte {} (wanted {} more)",
                self.at, n
            )));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32_vec(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let bytes = self.take(4 * n)?;
        let mut out = Vec::with_capacity(n);
        for c in bytes.chunks_exact(4) {
            let v = f32::from_le_bytes(c.try_into().unwrap()) as f64;
            if !v.is_finite() {
                return Err(Error::ModelFormat(format!("non-finite value in {what}")));
            }
            out.push(v);
        }
        Ok(out)
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<FieldModel> {
    let mut r = Reader { buf: bytes, at: 0 };
    let magic = r.take(4)?;
    if magic != MODEL_MAGIC {
        return Err(Error::ModelFormat(format!(
            "bad magic {:02x?}, expected \"FINS\"",
            magic
        )));
    }
    let version = r.u32()?;
    if version != MODEL_VERSION {
        return Err(Error::ModelFormat(format!(
            "unsupported version {version}, expected {MODEL_VERSION}"
        )));
    }
    let config = EncoderConfig {
        levels: r.u32()? as usize,
        features_per_level: r.u32()? as usize,
        table_size: r.u32()? as usize,
        base_resolution: r.u32()?,
        per_level_scale: r.f64()?,
    };
    config.validate().map_err(|e| match e {
        Error::Config(msg) => Error::ModelFormat(format!("bad encoder config: {msg}")),
        other => other,
    })?;
    let hidden = r.u32()? as usize;
    if hidden == 0 {
        return Err(Error::ModelFormat("hidden width must be >= 1".into()));
    }
    let scale = r.f64()?;
    let offset = Vec3::new(r.f64()?, r.f64()?, r.f64()?);
    if !scale.is_finite() || scale <= 0.0 || !offset.is_finite() {
        return Err(Error::ModelFormat(format!(
            "bad scene transform: scale {scale}, offset ({}, {}, {})",
            offset.x, offset.y, offset.z
        )));
    }

    let encoder = HashGridEncoder::new(config)?;
    let input = encoder.output_dim();
    let enc_params = r.f32_vec(encoder.param_len(), "hash tables")?;
    let geo = GeoNet {
        input,
        hidden,
        w1: r.f32_vec(hidden * input, "geo w1")?,
        b1: r.f32_vec(hidden, "geo b1")?,
        w2: r.f32_vec(hidden, "geo w2")?,
        b2: r.f32_vec(1, "geo b2")?[0],
    };
    let color = ColorNet {
        input,
        wc: r.f32_vec(3 * input, "color weights")?,
        bc: {
            let v = r.f32_vec(3, "color bias")?;
            [v[0], v[1], v[2]]
        },
    };
    if r.at != bytes.len() {
        return Err(Error::ModelFormat(format!(
            "{} trailing bytes after parameters",
            bytes.len() - r.at
        )));
    }

    Ok(FieldModel {
        field: Field::new(encoder, enc_params, geo, color)?,
        transform: SceneTransform { scale, offset },
    })
}

pub fn save_model(model: &FieldModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_model(model)).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<FieldModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_model(&bytes)
}
