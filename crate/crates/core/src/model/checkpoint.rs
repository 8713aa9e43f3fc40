//! Binary checkpoint container.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic "HSTM" | u32 version
//! u64 d_model | u64 heads | u64 enc_layers | u64 dec_layers | u64 feature_dim
//! u64 leaf_capacity | f64 length_scale | u64 seed | u8 mode | u8 strict_bounds
//! u64 pos_dim | f64 pos_length_scale | u64 pos_seed
//! f64 query_target_fill | f64 sigma0_sq | f64 t_u | f64 floor
//! u64 tensor_count, then per tensor:
//!   u64 name_len | name bytes | u64 rank | u64 dims[rank] | f64 values[prod(dims)]
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{AttentionMode, ModelConfig, ModelParams};
use crate::encoding::PosEncoder;
use crate::uq::UqConfig;
use crate::{HstError, Real, Result};

const MAGIC: &[u8; 4] = b"HSTM";
pub const CHECKPOINT_VERSION: u32 = 1;

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u64(&mut self, v: u64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn f64(&mut self, v: f64) -> Result<()> {
        Ok(self.0.write_all(&v.to_le_bytes())?)
    }
    fn u8(&mut self, v: u8) -> Result<()> {
        Ok(self.0.write_all(&[v])?)
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        self.0.read_exact(&mut buf).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => HstError::Format("truncated checkpoint".into()),
            _ => HstError::Io(e),
        })?;
        Ok(buf)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| HstError::Format("size does not fit in memory".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes::<1>()?[0])
    }
}

pub fn write_checkpoint<T: Real, W: Write>(params: &ModelParams<T>, out: W) -> Result<()> {
    let mut w = Writer(out);
    w.0.write_all(MAGIC)?;
    w.0.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    let c = &params.config;
    for v in [c.d_model, c.heads, c.enc_layers, c.dec_layers, c.feature_dim, c.leaf_capacity] {
        w.u64(v as u64)?;
    }
    w.f64(c.length_scale)?;
    w.u64(c.seed)?;
    w.u8(match c.mode {
        AttentionMode::Hierarchical => 0,
        AttentionMode::AllPair => 1,
    })?;
    w.u8(u8::from(c.strict_bounds))?;
    w.u64(params.pos.dim() as u64)?;
    w.f64(params.pos.length_scale().as_f64())?;
    w.u64(params.pos.seed())?;
    for v in [params.query_target_fill, params.uq.sigma0_sq, params.uq.t_u, params.uq.floor] {
        w.f64(v.as_f64())?;
    }
    let named = params.named_tensors();
    w.u64(named.len() as u64)?;
    for (name, t) in named {
        w.u64(name.len() as u64)?;
        w.0.write_all(name.as_bytes())?;
        w.u64(t.shape().len() as u64)?;
        for &dim in t.shape() {
            w.u64(dim as u64)?;
        }
        for &v in t.data() {
            w.f64(v.as_f64())?;
        }
    }
    w.0.flush()?;
    Ok(())
}

pub fn read_checkpoint<T: Real, R: Read>(input: R) -> Result<ModelParams<T>> {
    let mut r = Reader(input);
    if &r.bytes::<4>()? != MAGIC {
        return Err(HstError::Format("not a model checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(r.bytes()?);
    if version != CHECKPOINT_VERSION {
        return Err(HstError::Version { found: version, expected: CHECKPOINT_VERSION });
    }
    let config = ModelConfig {
        d_model: r.usize()?,
        heads: r.usize()?,
        enc_layers: r.usize()?,
        dec_layers: r.usize()?,
        feature_dim: r.usize()?,
        leaf_capacity: r.usize()?,
        length_scale: r.f64()?,
        seed: r.u64()?,
        mode: match r.u8()? {
            0 => AttentionMode::Hierarchical,
            1 => AttentionMode::AllPair,
            other => return Err(HstError::Format(format!("unknown attention mode {other}"))),
        },
        strict_bounds: r.u8()? != 0,
    };
    config.validate()?;
    let pos_dim = r.usize()?;
    let pos_sigma = T::lit(r.f64()?);
    let pos_seed = r.u64()?;
    let scalars: Vec<T> = (0..4).map(|_| r.f64().map(T::lit)).collect::<Result<_>>()?;
    let skeleton = ModelParams::<T>::init(&config)?;
    let expected = skeleton.named_tensors();
    let count = r.usize()?;
    if count != expected.len() {
        return Err(HstError::Format(format!("checkpoint has {count} tensors, configuration needs {}", expected.len())));
    }
    let mut values = Vec::with_capacity(count);
    for (name, t) in &expected {
        let len = r.usize()?;
        if len > 1 << 16 {
            return Err(HstError::Format("tensor name too long".into()));
        }
        let mut buf = vec![0u8; len];
        r.0.read_exact(&mut buf).map_err(|_| HstError::Format("truncated checkpoint".into()))?;
        if buf != name.as_bytes() {
            return Err(HstError::Format(format!("expected tensor {name}, found {}", String::from_utf8_lossy(&buf))));
        }
        let rank = r.usize()?;
        let dims = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        if dims != t.shape() {
            return Err(HstError::Format(format!("tensor {name} has shape {dims:?}, expected {:?}", t.shape())));
        }
        values.push((0..t.numel()).map(|_| r.f64().map(T::lit)).collect::<Result<Vec<T>>>()?);
    }
    let mut params = skeleton.with_values(values, false)?;
    params.pos = PosEncoder::new(pos_dim, pos_sigma, pos_seed)?;
    params.query_target_fill = scalars[0];
    params.uq = UqConfig { sigma0_sq: scalars[1], t_u: scalars[2], floor: scalars[3] };
    params.uq.validate()?;
    Ok(params)
}

pub fn save_checkpoint<T: Real>(params: &ModelParams<T>, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_checkpoint(params, std::io::BufWriter::new(file))
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<ModelParams<T>> {
    let file = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(file))
}
