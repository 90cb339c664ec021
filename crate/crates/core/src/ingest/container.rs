use std::fs;
use std::path::Path;

use super::{check_frame_values, FrameSequence, IngestError};
use crate::Tensor;

pub const CONTAINER_MAGIC: &[u8; 4] = b"FTNS";
pub const CONTAINER_VERSION: u16 = 1;
pub const CONTAINER_HEADER_LEN: usize = 24;
const DTYPE_F32: u8 = 1;

/// Encode a rank-4 `f32` tensor in the container format.
pub fn encode_container(t: &Tensor<f32>) -> Result<Vec<u8>, IngestError> {
    if t.rank() != 4 {
        return Err(IngestError::Invalid(format!("container holds rank-4 tensors, got {:?}", t.shape())));
    }
    if let Some(v) = t.data().iter().find(|v| !v.is_finite()) {
        return Err(IngestError::RangeError(format!("non-finite value {v}")));
    }
    let mut out = Vec::with_capacity(CONTAINER_HEADER_LEN + 4 * t.numel());
    out.extend_from_slice(CONTAINER_MAGIC);
    out.extend_from_slice(&CONTAINER_VERSION.to_le_bytes());
    out.push(DTYPE_F32);
    out.push(0);
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| IngestError::Invalid(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Decode a container. `bytes` must hold exactly one container.
pub fn decode_container(bytes: &[u8]) -> Result<Tensor<f32>, IngestError> {
    if bytes.len() < 4 || &bytes[..4] != CONTAINER_MAGIC {
        return Err(IngestError::BadMagic);
    }
    if bytes.len() < CONTAINER_HEADER_LEN {
        return Err(IngestError::DimensionMismatch {
            expected: CONTAINER_HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != CONTAINER_VERSION {
        return Err(IngestError::UnsupportedVersion(version));
    }
    if bytes[6] != DTYPE_F32 {
        return Err(IngestError::UnsupportedDtype(bytes[6]));
    }
    let dims: Vec<u64> = bytes[8..24]
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as u64)
        .collect();
    let payload = (bytes.len() - CONTAINER_HEADER_LEN) as u64;
    let expected = dims
        .iter()
        .try_fold(4u64, |acc, &d| acc.checked_mul(d))
        .unwrap_or(u64::MAX);
    if expected != payload {
        return Err(IngestError::DimensionMismatch { expected, actual: payload });
    }
    let data: Vec<f32> = bytes[CONTAINER_HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let shape: Vec<usize> = dims.iter().map(|&d| d as usize).collect();
    Ok(Tensor::from_vec(&shape, data))
}

/// Read a frame container from disk as `[T, H, W, C]`.
pub fn read_frame_container(path: &Path) -> Result<Tensor<f32>, IngestError> {
    let bytes = fs::read(path).map_err(|e| IngestError::io(path, e))?;
    decode_container(&bytes)
}

/// Write `seq.frames` to `path`. Nothing is written if validation fails.
pub fn write_frame_container(seq: &FrameSequence, path: &Path) -> Result<(), IngestError> {
    check_frame_values(seq.frames.data(), seq.scaled)?;
    let bytes = encode_container(&seq.frames)?;
    fs::write(path, bytes).map_err(|e| IngestError::io(path, e))
}
