//! Binary checkpoints: a header with the config, then every parameter as
//! name, shape and little-endian f64 data. Round trips are byte exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::tensor::Tensor;

use super::{Group, MoTConfig, ModelError, ModelParams, Param};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"REELCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Upper bound on a stored name or dimension count, against corrupt input.
const MAX_NAME: usize = 256;
const MAX_NDIM: usize = 8;

fn put_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn put_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn get<const N: usize>(r: &mut impl Read) -> Result<[u8; N], ModelError> {
    let mut b = [0u8; N];
    r.read_exact(&mut b).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => ModelError::Checkpoint("truncated file".into()),
        _ => ModelError::Io(e),
    })?;
    Ok(b)
}

fn get_u32(r: &mut impl Read) -> Result<u32, ModelError> {
    Ok(u32::from_le_bytes(get(r)?))
}

fn get_u64(r: &mut impl Read) -> Result<u64, ModelError> {
    Ok(u64::from_le_bytes(get(r)?))
}

fn get_usize(r: &mut impl Read) -> Result<usize, ModelError> {
    usize::try_from(get_u64(r)?).map_err(|_| ModelError::Checkpoint("size does not fit in memory".into()))
}

fn config_fields(c: &MoTConfig) -> [usize; 13] {
    [
        c.layers,
        c.width,
        c.heads,
        c.ffn_width,
        c.vocab,
        c.max_positions,
        c.image_size,
        c.latent_channels,
        c.latent_downsample,
        c.latent_patch,
        c.vit_patch,
        c.vit_width,
        c.time_width,
    ]
}

pub fn write_checkpoint(w: &mut impl Write, m: &ModelParams) -> Result<(), ModelError> {
    w.write_all(CHECKPOINT_MAGIC)?;
    put_u32(w, CHECKPOINT_VERSION)?;
    for f in config_fields(&m.config) {
        put_u64(w, f as u64)?;
    }
    w.write_all(&m.config.qk_scale.to_le_bytes())?;
    put_u32(w, m.params.len() as u32)?;
    for p in &m.params {
        put_u32(w, p.name.len() as u32)?;
        w.write_all(p.name.as_bytes())?;
        put_u32(w, p.value.shape().len() as u32)?;
        for &d in p.value.shape() {
            put_u64(w, d as u64)?;
        }
        for v in p.value.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint(r: &mut impl Read) -> Result<ModelParams, ModelError> {
    if &get::<8>(r)? != CHECKPOINT_MAGIC {
        return Err(ModelError::Checkpoint("not a checkpoint (bad magic)".into()));
    }
    let version = get_u32(r)?;
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
    }
    let mut f = [0usize; 13];
    for slot in &mut f {
        *slot = get_usize(r)?;
    }
    let config = MoTConfig {
        layers: f[0],
        width: f[1],
        heads: f[2],
        ffn_width: f[3],
        vocab: f[4],
        max_positions: f[5],
        image_size: f[6],
        latent_channels: f[7],
        latent_downsample: f[8],
        latent_patch: f[9],
        vit_patch: f[10],
        vit_width: f[11],
        time_width: f[12],
        qk_scale: f64::from_le_bytes(get(r)?),
    };
    config.validate()?;
    let count = get_u32(r)? as usize;
    let mut params = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = get_u32(r)? as usize;
        if len > MAX_NAME {
            return Err(ModelError::Checkpoint(format!("parameter name of {len} bytes")));
        }
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(|_| ModelError::Checkpoint("truncated file".into()))?;
        let name = String::from_utf8(name).map_err(|_| ModelError::Checkpoint("parameter name is not UTF-8".into()))?;
        let group = Group::of(&name).ok_or_else(|| ModelError::Checkpoint(format!("unknown parameter {name}")))?;
        let ndim = get_u32(r)? as usize;
        if ndim == 0 || ndim > MAX_NDIM {
            return Err(ModelError::Checkpoint(format!("{name}: {ndim} dimensions")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(get_usize(r)?);
        }
        let total = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| ModelError::Checkpoint(format!("{name}: shape overflows")))?;
        let mut data = Vec::with_capacity(total.min(1 << 24));
        for _ in 0..total {
            data.push(f64::from_le_bytes(get(r)?));
        }
        let value = Tensor::new(shape, data).expect("length computed from shape");
        params.push(Param { name, group, value });
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(ModelError::Checkpoint("trailing bytes after last parameter".into()));
    }
    let m = ModelParams::from_params(config, params);
    m.check_shapes()?;
    Ok(m)
}

pub fn save_checkpoint(path: &Path, m: &ModelParams) -> Result<(), ModelError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_checkpoint(&mut w, m)?;
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ModelParams, ModelError> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::super::init_model;
    use super::*;

    fn tiny() -> MoTConfig {
        MoTConfig {
            layers: 1,
            width: 8,
            heads: 2,
            ffn_width: 8,
            vocab: 10,
            max_positions: 16,
            image_size: 16,
            vit_width: 4,
            time_width: 4,
            ..Default::default()
        }
    }

    #[test]
    fn byte_exact_round_trip() {
        let m = init_model(&tiny(), 9).unwrap();
        let mut a = Vec::new();
        write_checkpoint(&mut a, &m).unwrap();
        let back = read_checkpoint(&mut a.as_slice()).unwrap();
        assert_eq!(back, m);
        let mut b = Vec::new();
        write_checkpoint(&mut b, &back).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_corruption() {
        let m = init_model(&tiny(), 9).unwrap();
        let mut a = Vec::new();
        write_checkpoint(&mut a, &m).unwrap();
        assert!(read_checkpoint(&mut &a[..a.len() - 3]).is_err());
        let mut bad = a.clone();
        bad[0] = b'X';
        assert!(read_checkpoint(&mut bad.as_slice()).is_err());
        let mut extra = a.clone();
        extra.push(0);
        assert!(read_checkpoint(&mut extra.as_slice()).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let m = init_model(&tiny(), 2).unwrap();
        save_checkpoint(&path, &m).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), m);
    }
}
