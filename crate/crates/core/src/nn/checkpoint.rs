//! Checkpoint file format for parameter stores.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic     8 bytes   b"CDMCKPT\0"
//! version   u32       1
//! count     u32       number of tensors
//! per tensor, in store order:
//!   name_len u32
//!   name     name_len bytes of UTF-8
//!   dtype    u8        0 = f64, 1 = f32
//!   rows     u32
//!   cols     u32
//!   payload  rows*cols little-endian values (8 or 4 bytes each)
//! ```
//!
//! We always write f64; readers accept both widths. Round-trips are
//! bit-exact for f64 tensors.

use super::ParamStore;
use crate::error::{CdmError, Result};
use crate::mat::Mat;
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"CDMCKPT\0";
const VERSION: u32 = 1;

pub fn save(store: &ParamStore, path: &Path) -> Result<()> {
    let mut buf: Vec<u8> = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, tensor) in store.iter() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(0u8); // f64
        buf.extend_from_slice(&(tensor.rows() as u32).to_le_bytes());
        buf.extend_from_slice(&(tensor.cols() as u32).to_le_bytes());
        for v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParamStore> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > bytes.len() {
            return Err(CdmError::CheckpointFormat(format!(
                "unexpected end of file at byte {}",
                *pos
            )));
        }
        let s = &bytes[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let magic = take(&mut pos, 8)?;
    if magic != MAGIC {
        return Err(CdmError::CheckpointFormat("bad magic".into()));
    }
    let version = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    if version != VERSION {
        return Err(CdmError::CheckpointFormat(format!("unsupported version {version}")));
    }
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
            .map_err(|_| CdmError::CheckpointFormat("tensor name is not UTF-8".into()))?;
        let dtype = take(&mut pos, 1)?[0];
        let rows = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let numel = rows * cols;
        let data: Vec<f64> = match dtype {
            0 => take(&mut pos, numel * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
            1 => take(&mut pos, numel * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect(),
            other => {
                return Err(CdmError::CheckpointFormat(format!("unknown dtype {other}")));
            }
        };
        store.add(&name, Mat::from_vec(rows, cols, data))?;
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_dense;
    use crate::rng::stream_rng;

    #[test]
    fn roundtrip_is_bit_exact() {
        let mut store = ParamStore::new();
        let mut rng = stream_rng(70, 0);
        init_dense(&mut store, "a", 7, 5, &mut rng);
        init_dense(&mut store, "b", 3, 7, &mut rng);
        let dir = std::env::temp_dir().join("cdm_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("model.ckpt");
        save(&store, &path).unwrap();
        let loaded = load(&path).unwrap();
        assert_eq!(store.len(), loaded.len());
        for ((n1, t1), (n2, t2)) in store.iter().zip(loaded.iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            for (a, b) in t1.data().iter().zip(t2.data()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn corrupt_magic_rejected() {
        let dir = std::env::temp_dir().join("cdm_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("junk.ckpt");
        std::fs::write(&path, b"NOTAMODEL").unwrap();
        assert!(matches!(load(&path), Err(CdmError::CheckpointFormat(_))));
    }

    #[test]
    fn truncated_file_rejected() {
        let mut store = ParamStore::new();
        let mut rng = stream_rng(71, 0);
        init_dense(&mut store, "w", 4, 4, &mut rng);
        let dir = std::env::temp_dir().join("cdm_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("trunc.ckpt");
        save(&store, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 9]).unwrap();
        assert!(load(&path).is_err());
    }
}
