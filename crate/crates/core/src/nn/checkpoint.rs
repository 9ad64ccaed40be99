//! Binary checkpoint format.
//!
//! ```text
//! magic      8 bytes   "HYPRLCK1"
//! header_len u64 LE    length of the JSON header in bytes
//! header     JSON      {"tensors":[{"name":..,"shape":[..],"offset":..}, ..]}
//! data       f64 LE    concatenated tensor data; offsets are byte offsets
//!                      from the start of this section
//! ```

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"HYPRLCK1";

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("malformed checkpoint header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("tensor `{name}` is inconsistent with the data section")]
    BadEntry { name: String },
    #[error("checkpoint has no tensor named `{0}`")]
    MissingTensor(String),
    #[error("tensor `{name}` has shape {got:?}, expected {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
}

#[derive(Serialize, Deserialize)]
struct Header {
    tensors: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

pub fn write_checkpoint(
    mut w: impl Write,
    tensors: &[(String, Tensor)],
) -> Result<(), CheckpointError> {
    let mut offset = 0u64;
    let entries = tensors
        .iter()
        .map(|(name, t)| {
            let e = Entry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            };
            offset += 8 * t.numel() as u64;
            e
        })
        .collect();
    let header = serde_json::to_vec(&Header { tensors: entries })?;
    w.write_all(CHECKPOINT_MAGIC)?;
    w.write_all(&(header.len() as u64).to_le_bytes())?;
    w.write_all(&header)?;
    for (_, t) in tensors {
        for v in t.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(mut r: impl Read) -> Result<Vec<(String, Tensor)>, CheckpointError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let mut header = vec![0u8; u64::from_le_bytes(len) as usize];
    r.read_exact(&mut header)?;
    let header: Header = serde_json::from_slice(&header)?;
    let mut data = Vec::new();
    r.read_to_end(&mut data)?;

    header
        .tensors
        .into_iter()
        .map(|e| {
            let bad = || CheckpointError::BadEntry {
                name: e.name.clone(),
            };
            let numel: usize = e.shape.iter().product();
            let start = usize::try_from(e.offset).map_err(|_| bad())?;
            let end = start.checked_add(8 * numel).ok_or_else(bad)?;
            let bytes = data.get(start..end).ok_or_else(bad)?;
            let values = bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let t = Tensor::new(e.shape.clone(), values).map_err(|_| bad())?;
            Ok((e.name, t))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_bits() {
        let tensors = vec![
            (
                "a".to_string(),
                Tensor::matrix(2, 2, vec![1.0, -0.0, f64::MIN_POSITIVE, 1e300]).unwrap(),
            ),
            (
                "b".to_string(),
                Tensor::vector(vec![std::f64::consts::PI]).unwrap(),
            ),
        ];
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &tensors).unwrap();
        let back = read_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(back.len(), 2);
        for ((n1, t1), (n2, t2)) in tensors.iter().zip(&back) {
            assert_eq!(n1, n2);
            assert_eq!(t1.shape(), t2.shape());
            for (x, y) in t1.data().iter().zip(t2.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(matches!(
            read_checkpoint(&b"NOTACKPTxxxxxxxx"[..]),
            Err(CheckpointError::BadMagic)
        ));
        let mut buf = Vec::new();
        write_checkpoint(&mut buf, &[("a".into(), Tensor::zeros(&[4]))]).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(matches!(
            read_checkpoint(buf.as_slice()),
            Err(CheckpointError::BadEntry { .. })
        ));
    }
}
