//! Raw little-endian payload (`<name>.raw`) with a JSON sidecar
//! (`<name>.json`).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Samples;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    U8,
    I16,
    F32,
}

impl DType {
    pub fn width(self) -> usize {
        match self {
            DType::U8 => 1,
            DType::I16 => 2,
            DType::F32 => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sidecar {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub dtype: DType,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub channels: usize,
    /// Grid stride of displacement fields.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
}

fn one() -> usize {
    1
}

fn is_one(v: &usize) -> bool {
    *v == 1
}

/// `(sidecar, payload)` paths for any of `x`, `x.json` or `x.raw`.
pub fn paths(path: &Path) -> (PathBuf, PathBuf) {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("raw") => (path.with_extension("json"), path.with_extension("raw")),
        _ => {
            let mut j = path.as_os_str().to_owned();
            j.push(".json");
            let mut r = path.as_os_str().to_owned();
            r.push(".raw");
            (j.into(), r.into())
        }
    }
}

pub fn read(path: &Path) -> Result<(Sidecar, Samples)> {
    let (json, raw) = paths(path);
    let text = std::fs::read_to_string(&json).map_err(|e| Error::io(&json, e))?;
    let meta: Sidecar =
        serde_json::from_str(&text).map_err(|e| Error::format(&json, format!("invalid sidecar: {e}")))?;
    if meta.dims.contains(&0) || meta.channels == 0 {
        return Err(Error::format(&json, "dims and channels must be positive"));
    }
    let payload = std::fs::read(&raw).map_err(|e| Error::io(&raw, e))?;
    let want = meta.dims.iter().product::<usize>() * meta.channels * meta.dtype.width();
    if payload.len() != want {
        return Err(Error::format(
            &raw,
            format!("payload has {} bytes but the sidecar implies {want}", payload.len()),
        ));
    }
    let samples = Samples::decode(meta.dtype.nifti_code(), &payload, false);
    Ok((meta, samples))
}

pub fn write(path: &Path, meta: &Sidecar, samples: &Samples) -> Result<()> {
    let (json, raw) = paths(path);
    let text = serde_json::to_string_pretty(meta).expect("sidecar serialises");
    std::fs::write(&json, text + "\n").map_err(|e| Error::io(&json, e))?;
    let mut bytes = Vec::with_capacity(samples.byte_len());
    samples.encode_into(&mut bytes);
    std::fs::write(&raw, bytes).map_err(|e| Error::io(&raw, e))
}

impl DType {
    fn nifti_code(self) -> i16 {
        use super::nifti::*;
        match self {
            DType::U8 => DT_UINT8,
            DType::I16 => DT_INT16,
            DType::F32 => DT_FLOAT32,
        }
    }
}
