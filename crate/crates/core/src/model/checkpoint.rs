//! Binary checkpoint format, all integers little-endian:
//!
//! ```text
//! "IQC1"
//! config: u32 depths[4] dims[4] heads[4] kernel embed_dim mlp_ratio
//!         viewport_size m k, f64 fov_deg offset_deg,
//!         u8 attention enable_dspn enable_msfs enable_vpfs
//! u32 record count
//! record: u32 name_len, name, u32 rank, u32 dims[rank], f32 data
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{Array, Real};

use super::{AttentionKind, BackboneConfig, Model, ModelConfig};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"IQC1";

fn put_u32(w: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format(format!("value {v} does not fit in u32")))?;
    Ok(w.write_all(&v.to_le_bytes())?)
}

fn get_u32(r: &mut impl Read) -> Result<usize> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b) as usize)
}

fn get_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

fn get_u8(r: &mut impl Read) -> Result<u8> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

fn get4(r: &mut impl Read) -> Result<[usize; 4]> {
    Ok([get_u32(r)?, get_u32(r)?, get_u32(r)?, get_u32(r)?])
}

pub fn write_checkpoint<T: Real>(model: &Model<T>, w: &mut impl Write) -> Result<()> {
    let c = &model.config;
    let bb = &c.backbone;
    w.write_all(CHECKPOINT_MAGIC)?;
    for v in bb.depths.iter().chain(&bb.dims).chain(&bb.heads) {
        put_u32(w, *v)?;
    }
    for v in [bb.kernel, bb.embed_dim, bb.mlp_ratio, c.viewport_size, c.m, c.k] {
        put_u32(w, v)?;
    }
    w.write_all(&c.fov_deg.to_le_bytes())?;
    w.write_all(&c.offset_deg.to_le_bytes())?;
    let attention = match c.attention {
        AttentionKind::Neighborhood => 0u8,
        AttentionKind::Full => 1,
    };
    w.write_all(&[attention, c.enable_dspn as u8, c.enable_msfs as u8, c.enable_vpfs as u8])?;
    put_u32(w, model.params.len())?;
    for (name, p) in model.params.iter() {
        put_u32(w, name.len())?;
        w.write_all(name.as_bytes())?;
        put_u32(w, p.value.rank())?;
        for &d in p.value.shape() {
            put_u32(w, d)?;
        }
        for v in p.value.data() {
            w.write_all(&(v.as_f64() as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_config(r: &mut impl Read) -> Result<ModelConfig> {
    let depths = get4(r)?;
    let dims = get4(r)?;
    let heads = get4(r)?;
    let kernel = get_u32(r)?;
    let embed_dim = get_u32(r)?;
    let mlp_ratio = get_u32(r)?;
    let viewport_size = get_u32(r)?;
    let m = get_u32(r)?;
    let k = get_u32(r)?;
    let fov_deg = get_f64(r)?;
    let offset_deg = get_f64(r)?;
    let attention = match get_u8(r)? {
        0 => AttentionKind::Neighborhood,
        1 => AttentionKind::Full,
        other => return Err(Error::Format(format!("unknown attention kind {other}"))),
    };
    let flag = |v: u8| v != 0;
    Ok(ModelConfig {
        backbone: BackboneConfig { depths, dims, heads, kernel, embed_dim, mlp_ratio },
        viewport_size,
        fov_deg,
        m,
        offset_deg,
        k,
        attention,
        enable_dspn: flag(get_u8(r)?),
        enable_msfs: flag(get_u8(r)?),
        enable_vpfs: flag(get_u8(r)?),
    })
}

/// Reads a checkpoint, rejecting unknown magic, unknown or missing parameter
/// names and shape mismatches against the stored configuration.
pub fn read_checkpoint<T: Real>(r: &mut impl Read) -> Result<Model<T>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("bad checkpoint magic {magic:?}")));
    }
    let config = read_config(r)?;
    let mut model = Model::<T>::new(config, 0).map_err(|e| Error::Format(format!("invalid stored config: {e}")))?;
    let count = get_u32(r)?;
    if count != model.params.len() {
        return Err(Error::Format(format!("checkpoint has {count} parameters, config expects {}", model.params.len())));
    }
    for _ in 0..count {
        let len = get_u32(r)?;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
        let rank = get_u32(r)?;
        let shape = (0..rank).map(|_| get_u32(r)).collect::<Result<Vec<_>>>()?;
        let param = model.params.get_mut(&name).ok_or_else(|| Error::Format(format!("unknown parameter '{name}'")))?;
        if param.value.shape() != shape.as_slice() {
            return Err(Error::Format(format!(
                "shape mismatch for '{name}': stored {shape:?}, expected {:?}",
                param.value.shape()
            )));
        }
        let mut buf = vec![0u8; param.value.len() * 4];
        r.read_exact(&mut buf)?;
        let data =
            buf.chunks_exact(4).map(|c| T::from_f64(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)).collect();
        param.value = Array::from_vec(&shape, data)?;
    }
    Ok(model)
}

/// Writes to a temporary sibling and renames it into place.
pub fn save_checkpoint<T: Real>(model: &Model<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp)?);
        write_checkpoint(model, &mut w)?;
        w.flush()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint<T: Real>(path: impl AsRef<Path>) -> Result<Model<T>> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_config_and_f32_values() {
        let model = Model::<f32>::new(ModelConfig::micro(), 4).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&model, &mut buf).unwrap();
        let back: Model<f32> = read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(back.config, model.config);
        for ((n1, p1), (n2, p2)) in model.params.iter().zip(back.params.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(p1.value, p2.value);
        }
    }

    #[test]
    fn bad_magic_and_shape_mismatch_are_rejected() {
        let model = Model::<f32>::new(ModelConfig::micro(), 4).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&model, &mut buf).unwrap();
        let mut bad = buf.clone();
        bad[3] = b'9';
        assert!(matches!(read_checkpoint::<f32>(&mut bad.as_slice()), Err(Error::Format(_))));

        // Changing the stored embed width changes every dependent shape.
        let mut bad = buf.clone();
        let embed_at = 4 + 12 * 4 + 4;
        bad[embed_at] = 4;
        assert!(matches!(read_checkpoint::<f32>(&mut bad.as_slice()), Err(Error::Format(_))));
    }
}
