//! Volume, label, field, feature and landmark files.
//!
//! Volumes are read from single-file NIfTI-1 (optionally gzipped) or from a
//! raw payload with a JSON sidecar. Output format follows the extension:
//! `.nii`/`.nii.gz` or `.json`/`.raw`.

pub mod nifti;
pub mod raw;

use std::path::Path;

use deformreg_core::{
    CostVolume, Dims, DisplacementField, FeatureVolume, LabelVolume, LandmarkSet, Spacing, Volume3D,
};

use crate::error::{Error, Result};
pub use nifti::NiftiHeader;
use raw::{DType, Sidecar};

/// Voxel payload in its stored scalar type.
#[derive(Clone, Debug, PartialEq)]
pub enum Samples {
    U8(Vec<u8>),
    I16(Vec<i16>),
    F32(Vec<f32>),
}

impl Samples {
    fn decode(code: i16, bytes: &[u8], big_endian: bool) -> Self {
        fn words<const N: usize>(bytes: &[u8], big: bool) -> impl Iterator<Item = [u8; N]> + '_ {
            bytes.chunks_exact(N).map(move |c| {
                let mut a: [u8; N] = c.try_into().unwrap();
                if big {
                    a.reverse();
                }
                a
            })
        }
        match code {
            nifti::DT_UINT8 => Samples::U8(bytes.to_vec()),
            nifti::DT_INT16 => Samples::I16(words::<2>(bytes, big_endian).map(i16::from_le_bytes).collect()),
            _ => Samples::F32(words::<4>(bytes, big_endian).map(f32::from_le_bytes).collect()),
        }
    }

    fn encode_into(&self, out: &mut Vec<u8>) {
        match self {
            Samples::U8(v) => out.extend_from_slice(v),
            Samples::I16(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Samples::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Samples::U8(v) => v.len(),
            Samples::I16(v) => v.len(),
            Samples::F32(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn byte_len(&self) -> usize {
        self.len() * self.dtype().width()
    }

    pub fn dtype(&self) -> DType {
        match self {
            Samples::U8(_) => DType::U8,
            Samples::I16(_) => DType::I16,
            Samples::F32(_) => DType::F32,
        }
    }

    fn nifti_code(&self) -> i16 {
        match self {
            Samples::U8(_) => nifti::DT_UINT8,
            Samples::I16(_) => nifti::DT_INT16,
            Samples::F32(_) => nifti::DT_FLOAT32,
        }
    }

    fn to_f32(&self) -> Vec<f32> {
        match self {
            Samples::U8(v) => v.iter().map(|&x| x as f32).collect(),
            Samples::I16(v) => v.iter().map(|&x| x as f32).collect(),
            Samples::F32(v) => v.clone(),
        }
    }
}

/// A decoded file: grid, per-voxel component count and payload.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub dims: Dims,
    pub spacing: [f64; 3],
    /// Values per voxel (channels, or 3 for displacement fields).
    pub components: usize,
    /// Node stride recorded for displacement fields, 1 otherwise.
    pub stride: usize,
    pub samples: Samples,
    /// Present when read from NIfTI.
    pub header: Option<NiftiHeader>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    Nifti,
    Raw,
}

fn lower_name(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().to_ascii_lowercase()).unwrap_or_default()
}

fn output_kind(path: &Path) -> Result<Kind> {
    let name = lower_name(path);
    if name.ends_with(".nii") || name.ends_with(".nii.gz") {
        Ok(Kind::Nifti)
    } else if name.ends_with(".json") || name.ends_with(".raw") {
        Ok(Kind::Raw)
    } else {
        Err(Error::Config(format!(
            "cannot infer the output format of {}: use .nii, .nii.gz, .json or .raw",
            path.display()
        )))
    }
}

pub fn read_image(path: &Path) -> Result<Image> {
    let name = lower_name(path);
    let sidecar = raw::paths(path).0;
    let raw_input = name.ends_with(".json") || name.ends_with(".raw");
    if !raw_input && (path.exists() || !sidecar.exists()) {
        let bytes = nifti::read_bytes(path)?;
        let nifti_magic = bytes.len() >= nifti::HEADER_SIZE && &bytes[344..348] == b"n+1\0";
        if nifti_magic || !sidecar.exists() {
            let (header, samples) = nifti::decode(&bytes, path)?;
            let p = header.pixdim;
            let rank = header.dim[0] as usize;
            let spacing = [1, 2, 3].map(|i| if i <= rank { p[i] as f64 } else { 1.0 });
            let stride = if header.intent_code == nifti::INTENT_DISPLACEMENT && header.intent_p1 >= 1.0 {
                header.intent_p1 as usize
            } else {
                1
            };
            return Ok(Image {
                dims: Dims::from_array(header.dims()),
                spacing,
                components: header.components(),
                stride,
                samples,
                header: Some(header),
            });
        }
    }
    let (meta, samples) = raw::read(path)?;
    Ok(Image {
        dims: Dims::from_array(meta.dims),
        spacing: meta.spacing,
        components: meta.channels,
        stride: meta.stride.unwrap_or(1),
        samples,
        header: None,
    })
}

/// Writes `image`; NIfTI output starts from `image.header` when present.
pub fn write_image(path: &Path, image: &Image) -> Result<()> {
    match output_kind(path)? {
        Kind::Raw => {
            let meta = Sidecar {
                dims: image.dims.to_array(),
                spacing: image.spacing,
                dtype: image.samples.dtype(),
                channels: image.components,
                stride: (image.stride > 1 || image.header.as_ref().is_some_and(is_field)).then_some(image.stride),
            };
            raw::write(path, &meta, &image.samples)
        }
        Kind::Nifti => {
            let mut h = image.header.clone().unwrap_or_default();
            let d = image.dims.to_array();
            h.dim = [3, d[0] as i16, d[1] as i16, d[2] as i16, 1, 1, 1, 1];
            if image.components > 1 {
                h.dim[0] = 4;
                h.dim[4] = image.components as i16;
            }
            for a in 0..3 {
                h.pixdim[a + 1] = image.spacing[a] as f32;
            }
            if h.pixdim[0] != -1.0 {
                h.pixdim[0] = 1.0;
            }
            h.scl_slope = 0.0;
            h.scl_inter = 0.0;
            nifti::write(path, &h, &image.samples)
        }
    }
}

fn is_field(h: &NiftiHeader) -> bool {
    h.intent_code == nifti::INTENT_DISPLACEMENT
}

fn spacing_of(image: &Image, path: &Path) -> Result<Spacing> {
    let [x, y, z] = image.spacing;
    Spacing::new(x, y, z).map_err(|_| Error::format(path, format!("voxel spacing {:?} is not positive", image.spacing)))
}

fn single(image: &Image, path: &Path) -> Result<()> {
    if image.components != 1 {
        return Err(Error::format(
            path,
            format!("expected a 3D volume, found {} values per voxel", image.components),
        ));
    }
    if image.dims.len() > i32::MAX as usize {
        return Err(Error::format(path, "volume too large"));
    }
    Ok(())
}

pub fn load_volume(path: &Path) -> Result<Volume3D> {
    let image = read_image(path)?;
    single(&image, path)?;
    let mut data = image.samples.to_f32();
    if let Some(h) = &image.header {
        if h.scl_slope != 0.0 && (h.scl_slope != 1.0 || h.scl_inter != 0.0) {
            data.iter_mut().for_each(|v| *v = *v * h.scl_slope + h.scl_inter);
        }
    }
    Ok(Volume3D::new(image.dims, spacing_of(&image, path)?, data).map_err(|e| Error::format(path, e.to_string()))?)
}

/// Loads a label map; `num_classes` is one more than the largest label.
pub fn load_labels(path: &Path) -> Result<LabelVolume> {
    let image = read_image(path)?;
    single(&image, path)?;
    let bad = |v: f64| Error::format(path, format!("label value {v} is not a non-negative integer"));
    let data: Vec<u32> = match &image.samples {
        Samples::U8(v) => v.iter().map(|&x| x as u32).collect(),
        Samples::I16(v) => v.iter().map(|&x| u32::try_from(x).map_err(|_| bad(x as f64))).collect::<Result<_>>()?,
        Samples::F32(v) => v
            .iter()
            .map(|&x| if x >= 0.0 && x.fract() == 0.0 && x < 1e7 { Ok(x as u32) } else { Err(bad(x as f64)) })
            .collect::<Result<_>>()?,
    };
    Ok(LabelVolume::from_labels(image.dims, spacing_of(&image, path)?, data)?)
}

pub fn load_field(path: &Path) -> Result<DisplacementField> {
    let image = read_image(path)?;
    if image.components != 3 {
        return Err(Error::format(
            path,
            format!("a displacement field needs 3 components per voxel, found {}", image.components),
        ));
    }
    let Samples::F32(data) = image.samples else {
        return Err(Error::format(path, "displacement fields must be float32"));
    };
    DisplacementField::new(image.dims, image.stride, data).map_err(|e| Error::format(path, e.to_string()))
}

pub fn load_features(path: &Path) -> Result<FeatureVolume> {
    let image = read_image(path)?;
    let spacing = spacing_of(&image, path)?;
    Ok(FeatureVolume::new(image.dims, spacing, image.components, image.samples.to_f32())?)
}

pub fn save_volume(path: &Path, vol: &Volume3D, template: Option<&NiftiHeader>) -> Result<()> {
    write_image(
        path,
        &Image {
            dims: vol.dims(),
            spacing: vol.spacing().0,
            components: 1,
            stride: 1,
            samples: Samples::F32(vol.data().to_vec()),
            header: template.cloned().map(plain),
        },
    )
}

fn plain(mut h: NiftiHeader) -> NiftiHeader {
    h.intent_code = 0;
    h.intent_p1 = 0.0;
    h
}

/// Labels are stored as uint8 when they fit, int16 otherwise.
pub fn save_labels(path: &Path, labels: &LabelVolume, template: Option<&NiftiHeader>) -> Result<()> {
    let max = labels.data().iter().copied().max().unwrap_or(0);
    let samples = if max < 256 {
        Samples::U8(labels.data().iter().map(|&l| l as u8).collect())
    } else if max <= i16::MAX as u32 {
        Samples::I16(labels.data().iter().map(|&l| l as i16).collect())
    } else {
        return Err(Error::Input(format!("label {max} does not fit in int16")));
    };
    write_image(
        path,
        &Image {
            dims: labels.dims(),
            spacing: labels.spacing().0,
            components: 1,
            stride: 1,
            samples,
            header: template.cloned().map(plain),
        },
    )
}

/// Saves a field as a 4D float32 volume (component slowest). `spacing` is the
/// image voxel spacing; node spacing is `spacing * stride`. The template
/// geometry is only reused for full-resolution fields.
pub fn save_field(path: &Path, field: &DisplacementField, spacing: Spacing, template: Option<&NiftiHeader>) -> Result<()> {
    let s = field.stride();
    let mut h = match template {
        Some(t) if s == 1 => t.clone(),
        _ => NiftiHeader::default(),
    };
    h.intent_code = nifti::INTENT_DISPLACEMENT;
    h.intent_p1 = s as f32;
    write_image(
        path,
        &Image {
            dims: field.dims(),
            spacing: spacing.0.map(|v| v * s as f64),
            components: 3,
            stride: s,
            samples: Samples::F32(field.data().to_vec()),
            header: Some(h),
        },
    )
}

pub fn save_features(path: &Path, features: &FeatureVolume) -> Result<()> {
    write_image(
        path,
        &Image {
            dims: features.dims(),
            spacing: features.spacing().0,
            components: features.channels(),
            stride: 1,
            samples: Samples::F32(features.data().to_vec()),
            header: None,
        },
    )
}

/// Dumps a cost volume for inspection: one channel per node, each a
/// `(2Lx+1, 2Ly+1, 2Lz+1)` cube over the displacement lattice.
pub fn save_cost_volume(path: &Path, cv: &CostVolume) -> Result<()> {
    let search = cv.search();
    let q = search.quantisation as f64;
    write_image(
        path,
        &Image {
            dims: Dims::from_array(search.side()),
            spacing: [q; 3],
            components: cv.grid().len(),
            stride: 1,
            samples: Samples::F32(cv.costs().to_vec()),
            header: None,
        },
    )
}

/// Reads `x,y,z` rows (voxel coordinates). Lines starting with `#` are
/// comments. With `dims`, points outside `[0, n-1]` are rejected.
pub fn load_landmarks(path: &Path, dims: Option<Dims>) -> Result<LandmarkSet> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(file);
    let mut points = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| Error::format(path, e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 3 {
            return Err(Error::format(path, format!("line {line}: expected x,y,z, found {} fields", record.len())));
        }
        let mut p = [0.0; 3];
        for (a, field) in record.iter().enumerate() {
            p[a] = field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::format(path, format!("line {line}: {field:?} is not a number")))?;
        }
        points.push(p);
    }
    match dims {
        Some(d) => LandmarkSet::checked(points, d).map_err(|e| Error::format(path, e.to_string())),
        None => Ok(LandmarkSet::new(points)),
    }
}

pub fn save_landmarks(path: &Path, landmarks: &LandmarkSet) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    for p in landmarks.points() {
        w.write_record(p.iter().map(|v| v.to_string())).map_err(|e| Error::format(path, e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
