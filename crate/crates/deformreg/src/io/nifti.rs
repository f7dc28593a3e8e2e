//! Single-file NIfTI-1 (`.nii`, `.nii.gz`).
//!
//! Only the fields needed for voxel data are interpreted. Orientation fields
//! (qform, sform, units, description) are kept so outputs can reuse the
//! input geometry, but they are never applied.

use std::io::{Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::Samples;
use crate::error::{Error, Result};

pub const HEADER_SIZE: usize = 348;
const VOX_OFFSET: usize = 352;
const MAGIC: &[u8; 4] = b"n+1\0";
/// `NIFTI_INTENT_DISPVECT`: displacement vectors, stride in `intent_p1`.
pub const INTENT_DISPLACEMENT: i16 = 1006;

pub const DT_UINT8: i16 = 2;
pub const DT_INT16: i16 = 4;
pub const DT_FLOAT32: i16 = 16;

/// Interpreted subset of a NIfTI-1 header plus the pass-through geometry.
#[derive(Clone, Debug, PartialEq)]
pub struct NiftiHeader {
    pub dim: [i16; 8],
    pub pixdim: [f32; 8],
    pub datatype: i16,
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub intent_code: i16,
    pub intent_p1: f32,
    pub xyzt_units: u8,
    pub qform_code: i16,
    pub sform_code: i16,
    pub quatern: [f32; 3],
    pub qoffset: [f32; 3],
    pub srow: [[f32; 4]; 3],
    pub descrip: [u8; 80],
}

impl Default for NiftiHeader {
    fn default() -> Self {
        Self {
            dim: [0; 8],
            pixdim: [1.0; 8],
            datatype: DT_FLOAT32,
            vox_offset: VOX_OFFSET as f32,
            scl_slope: 0.0,
            scl_inter: 0.0,
            intent_code: 0,
            intent_p1: 0.0,
            xyzt_units: 2, // mm
            qform_code: 0,
            sform_code: 0,
            quatern: [0.0; 3],
            qoffset: [0.0; 3],
            srow: [[0.0; 4]; 3],
            descrip: [0; 80],
        }
    }
}

struct Reader<'a> {
    b: &'a [u8],
    big: bool,
}

impl Reader<'_> {
    fn bytes<const N: usize>(&self, at: usize) -> [u8; N] {
        let mut a = [0u8; N];
        a.copy_from_slice(&self.b[at..at + N]);
        if self.big {
            a.reverse();
        }
        a
    }
    fn i16(&self, at: usize) -> i16 {
        i16::from_le_bytes(self.bytes(at))
    }
    fn f32(&self, at: usize) -> f32 {
        f32::from_le_bytes(self.bytes(at))
    }
}

fn bitpix(datatype: i16) -> Option<usize> {
    match datatype {
        DT_UINT8 => Some(8),
        DT_INT16 => Some(16),
        DT_FLOAT32 => Some(32),
        _ => None,
    }
}

impl NiftiHeader {
    /// Parses the first 348 bytes; returns the header and whether the file
    /// is big-endian.
    pub fn parse(b: &[u8], path: &Path) -> Result<(Self, bool)> {
        if b.len() < HEADER_SIZE || &b[344..348] != MAGIC {
            return Err(Error::format(path, "unrecognised format: no NIfTI-1 magic \"n+1\" and no JSON sidecar"));
        }
        let big = match i32::from_le_bytes(b[0..4].try_into().unwrap()) {
            348 => false,
            v if v.swap_bytes() == 348 => true,
            v => return Err(Error::format(path, format!("header size field is {v}, expected 348"))),
        };
        let r = Reader { b, big };
        let mut h = NiftiHeader {
            dim: std::array::from_fn(|i| r.i16(40 + 2 * i)),
            pixdim: std::array::from_fn(|i| r.f32(76 + 4 * i)),
            datatype: r.i16(70),
            vox_offset: r.f32(108),
            scl_slope: r.f32(112),
            scl_inter: r.f32(116),
            intent_code: r.i16(68),
            intent_p1: r.f32(56),
            xyzt_units: b[123],
            qform_code: r.i16(252),
            sform_code: r.i16(254),
            quatern: std::array::from_fn(|i| r.f32(256 + 4 * i)),
            qoffset: std::array::from_fn(|i| r.f32(268 + 4 * i)),
            srow: std::array::from_fn(|row| std::array::from_fn(|i| r.f32(280 + 16 * row + 4 * i))),
            descrip: [0; 80],
        };
        h.descrip.copy_from_slice(&b[148..228]);
        if bitpix(h.datatype).is_none() {
            return Err(Error::format(
                path,
                format!("unsupported datatype code {} (supported: 2 uint8, 4 int16, 16 float32)", h.datatype),
            ));
        }
        let rank = h.dim[0];
        if !(1..=7).contains(&rank) || h.dim[1..=rank as usize].iter().any(|&d| d < 1) {
            return Err(Error::format(path, format!("invalid dim field {:?}", h.dim)));
        }
        Ok((h, big))
    }

    /// Extent along each of the first three axes.
    pub fn dims(&self) -> [usize; 3] {
        let rank = self.dim[0] as usize;
        [1, 2, 3].map(|i| if i <= rank { self.dim[i] as usize } else { 1 })
    }

    /// Product of the extents beyond the third axis.
    pub fn components(&self) -> usize {
        let rank = self.dim[0] as usize;
        (4..=rank).map(|i| self.dim[i] as usize).product()
    }

    pub fn encode(&self) -> [u8; HEADER_SIZE] {
        let mut b = [0u8; HEADER_SIZE];
        let mut put = |at: usize, bytes: &[u8]| b[at..at + bytes.len()].copy_from_slice(bytes);
        put(0, &348i32.to_le_bytes());
        put(38, b"r");
        for (i, d) in self.dim.iter().enumerate() {
            put(40 + 2 * i, &d.to_le_bytes());
        }
        put(56, &self.intent_p1.to_le_bytes());
        put(68, &self.intent_code.to_le_bytes());
        put(70, &self.datatype.to_le_bytes());
        put(72, &(bitpix(self.datatype).unwrap_or(0) as i16).to_le_bytes());
        for (i, p) in self.pixdim.iter().enumerate() {
            put(76 + 4 * i, &p.to_le_bytes());
        }
        put(108, &self.vox_offset.to_le_bytes());
        put(112, &self.scl_slope.to_le_bytes());
        put(116, &self.scl_inter.to_le_bytes());
        put(123, &[self.xyzt_units]);
        put(148, &self.descrip);
        put(252, &self.qform_code.to_le_bytes());
        put(254, &self.sform_code.to_le_bytes());
        for i in 0..3 {
            put(256 + 4 * i, &self.quatern[i].to_le_bytes());
            put(268 + 4 * i, &self.qoffset[i].to_le_bytes());
        }
        for (row, vals) in self.srow.iter().enumerate() {
            for (i, v) in vals.iter().enumerate() {
                put(280 + 16 * row + 4 * i, &v.to_le_bytes());
            }
        }
        put(344, MAGIC);
        b
    }
}

fn is_gzip(path: &Path) -> bool {
    path.to_string_lossy().to_ascii_lowercase().ends_with(".gz")
}

/// Reads a whole file, transparently inflating gzip content.
pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    let raw = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::format(path, format!("corrupt gzip stream: {e}")))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

/// Decodes a NIfTI-1 file image already in memory.
pub fn decode(bytes: &[u8], path: &Path) -> Result<(NiftiHeader, Samples)> {
    let (header, big) = NiftiHeader::parse(bytes, path)?;
    let n: usize = header.dims().iter().product::<usize>() * header.components();
    let width = bitpix(header.datatype).unwrap() / 8;
    let offset = header.vox_offset as usize;
    if offset < HEADER_SIZE || offset > bytes.len() {
        return Err(Error::format(path, format!("voxel offset {offset} outside the file")));
    }
    let payload = &bytes[offset..];
    if payload.len() != n * width {
        return Err(Error::format(
            path,
            format!(
                "payload has {} bytes but the header dims {:?} imply {}",
                payload.len(),
                &header.dim[..=header.dim[0] as usize],
                n * width
            ),
        ));
    }
    let samples = Samples::decode(header.datatype, payload, big);
    Ok((header, samples))
}

/// Writes a header and payload; gzip-compressed when the name ends in `.gz`.
pub fn write(path: &Path, header: &NiftiHeader, samples: &Samples) -> Result<()> {
    let mut h = header.clone();
    h.datatype = samples.nifti_code();
    h.vox_offset = VOX_OFFSET as f32;
    let mut bytes = Vec::with_capacity(VOX_OFFSET + samples.byte_len());
    bytes.extend_from_slice(&h.encode());
    bytes.extend_from_slice(&[0u8; VOX_OFFSET - HEADER_SIZE]);
    samples.encode_into(&mut bytes);
    let io = |e| Error::io(path, e);
    if is_gzip(path) {
        let file = std::fs::File::create(path).map_err(io)?;
        let mut enc = GzEncoder::new(std::io::BufWriter::new(file), Compression::fast());
        enc.write_all(&bytes).map_err(io)?;
        enc.finish().map_err(io)?.flush().map_err(io)?;
        Ok(())
    } else {
        std::fs::write(path, &bytes).map_err(io)
    }
}
