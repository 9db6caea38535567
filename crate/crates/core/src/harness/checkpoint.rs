//! Versioned binary checkpoints: header, architecture descriptor, then
//! ordered named tensors as little-endian f32. The parameter round trip
//! is bit-exact.

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelDescriptor, ModelParams, NamedTensor};

const MAGIC: &[u8; 4] = b"BCLK";
const VERSION: u32 = 1;

/// A loaded checkpoint: parameters plus the config fingerprint recorded
/// at save time.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub fingerprint: String,
}

pub fn save_checkpoint(
    params: &ModelParams,
    fingerprint: &str,
    path: impl AsRef<Path>,
) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    w.write_all(MAGIC)?;
    w.write_u32::<LittleEndian>(VERSION)?;

    let d = &params.desc;
    w.write_u32::<LittleEndian>(d.image_size as u32)?;
    w.write_u32::<LittleEndian>(d.message_len as u32)?;
    w.write_u32::<LittleEndian>(d.enc_width as u32)?;
    w.write_u32::<LittleEndian>(d.dec_width as u32)?;
    for &s in &d.dec_strides {
        w.write_u32::<LittleEndian>(s as u32)?;
    }

    write_str(&mut w, fingerprint)?;
    w.write_u32::<LittleEndian>(params.tensors.len() as u32)?;
    for t in &params.tensors {
        write_str(&mut w, &t.name)?;
        w.write_u32::<LittleEndian>(t.shape.len() as u32)?;
        for &dim in &t.shape {
            w.write_u32::<LittleEndian>(dim as u32)?;
        }
        for &v in &t.data {
            w.write_f32::<LittleEndian>(v)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let file = std::fs::File::open(path.as_ref())
        .map_err(|e| Error::Checkpoint(format!("cannot open {}: {e}", path.as_ref().display())))?;
    let mut r = BufReader::new(file);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file".into()));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "version mismatch: file has {version}, this build reads {VERSION}"
        )));
    }

    let image_size = r.read_u32::<LittleEndian>()? as usize;
    let message_len = r.read_u32::<LittleEndian>()? as usize;
    let enc_width = r.read_u32::<LittleEndian>()? as usize;
    let dec_width = r.read_u32::<LittleEndian>()? as usize;
    let mut dec_strides = [0usize; 5];
    for s in dec_strides.iter_mut() {
        *s = r.read_u32::<LittleEndian>()? as usize;
    }
    let desc = ModelDescriptor {
        image_size,
        message_len,
        enc_width,
        dec_width,
        dec_strides,
    };
    desc.validate()
        .map_err(|e| Error::Checkpoint(format!("corrupt descriptor: {e}")))?;

    let fingerprint = read_str(&mut r)?;
    let count = r.read_u32::<LittleEndian>()? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name = read_str(&mut r)?;
        let ndim = r.read_u32::<LittleEndian>()? as usize;
        if ndim > 8 {
            return Err(Error::Checkpoint(format!("implausible rank {ndim}")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.read_u32::<LittleEndian>()? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = vec![0.0f32; numel];
        r.read_f32_into::<LittleEndian>(&mut data)?;
        tensors.push(NamedTensor { name, shape, data });
    }

    let params = ModelParams { desc, tensors };
    Ok(Checkpoint {
        params,
        fingerprint,
    })
}

fn write_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    w.write_u32::<LittleEndian>(s.len() as u32)?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_str<R: Read>(r: &mut R) -> Result<String> {
    let len = r.read_u32::<LittleEndian>()? as usize;
    if len > 4096 {
        return Err(Error::Checkpoint(format!("implausible string length {len}")));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|_| Error::Checkpoint("non-utf8 string".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    fn toy_params() -> ModelParams {
        let desc = ModelDescriptor {
            image_size: 16,
            message_len: 8,
            enc_width: 6,
            dec_width: 6,
            dec_strides: [1, 2, 1, 2, 1],
        };
        init_params(&desc, 33).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let params = toy_params();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&params, "fp1234", &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.fingerprint, "fp1234");
        assert_eq!(loaded.params.desc, params.desc);
        assert_eq!(loaded.params.tensors.len(), params.tensors.len());
        for (a, b) in loaded.params.tensors.iter().zip(&params.tensors) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.shape, b.shape);
            let ab: Vec<u32> = a.data.iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = b.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb);
        }
    }

    #[test]
    fn version_mismatch_aborts() {
        let params = toy_params();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&params, "fp", &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[4] = 99; // bump the version field
        std::fs::write(&path, &bytes).unwrap();
        let err = load_checkpoint(&path).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }

    #[test]
    fn garbage_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"definitely not a checkpoint").unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
