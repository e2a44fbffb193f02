//! Cube files, raw import, false-colour PNG export and feature dumps.

use std::fs;
use std::io::Write;
use std::path::Path;

use hidflow_tensor::{DType, Real, Tensor};

use crate::cube::HsiCube;
use crate::error::{HidError, Result};

pub const CUBE_MAGIC: &[u8; 8] = b"HSIC0001";
pub const FEATURE_MAGIC: &[u8; 8] = b"HIDT0001";

/// Writes to a sibling temporary file, then renames it over `path`, so a
/// failure never leaves a partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let name = path
        .file_name()
        .ok_or_else(|| HidError::Data(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(HidError::io(path, e));
    }
    Ok(())
}

fn dtype_code(d: DType) -> u32 {
    match d {
        DType::F32 => 1,
        DType::F64 => 2,
    }
}

fn dtype_from_code(code: u32) -> Result<DType> {
    match code {
        1 => Ok(DType::F32),
        2 => Ok(DType::F64),
        _ => Err(HidError::Data(format!("unknown dtype code {code}"))),
    }
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_values(out: &mut Vec<u8>, values: &[f64], dtype: DType) {
    for &v in values {
        match dtype {
            DType::F32 => out.extend_from_slice(&(v as f32).to_le_bytes()),
            DType::F64 => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
}

fn read_values(bytes: &[u8], dtype: DType) -> Vec<f64> {
    match dtype {
        DType::F32 => bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        DType::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                HidError::Data(format!(
                    "truncated {}: needed {n} bytes at offset {}",
                    self.what, self.pos
                ))
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn magic(&mut self, magic: &[u8; 8]) -> Result<()> {
        if self.take(8)? != magic {
            return Err(HidError::Data(format!(
                "not a {} file (bad magic)",
                self.what
            )));
        }
        Ok(())
    }
}

/// A cube with its stored precision and free-form metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct CubeFile {
    pub cube: HsiCube,
    pub dtype: DType,
    pub meta: String,
}

impl CubeFile {
    pub fn new(cube: HsiCube) -> Self {
        CubeFile {
            cube,
            dtype: DType::F32,
            meta: String::new(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if !self.cube.all_finite() {
            return Err(HidError::Data("cube contains non-finite values".into()));
        }
        let (h, w, b) = self.cube.dims();
        let mut out =
            Vec::with_capacity(28 + self.meta.len() + self.cube.len() * self.dtype.size_of());
        out.extend_from_slice(CUBE_MAGIC);
        for v in [h, w, b] {
            push_u32(
                &mut out,
                u32::try_from(v).map_err(|_| HidError::Data(format!("dimension {v} too large")))?,
            );
        }
        push_u32(&mut out, dtype_code(self.dtype));
        push_u32(&mut out, self.meta.len() as u32);
        out.extend_from_slice(self.meta.as_bytes());
        push_values(&mut out, self.cube.data(), self.dtype);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader {
            bytes,
            pos: 0,
            what: "cube",
        };
        r.magic(CUBE_MAGIC)?;
        let (h, w, b) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        let dtype = dtype_from_code(r.u32()?)?;
        let meta_len = r.u32()? as usize;
        let meta = String::from_utf8(r.take(meta_len)?.to_vec())
            .map_err(|_| HidError::Data("cube metadata is not valid UTF-8".into()))?;
        let n = h * w * b;
        let payload = r.take(n * dtype.size_of())?;
        if r.pos != bytes.len() {
            return Err(HidError::Data(format!(
                "cube payload has {} trailing bytes beyond {h}×{w}×{b}",
                bytes.len() - r.pos
            )));
        }
        let cube = HsiCube::new(h, w, b, read_values(payload, dtype))?;
        if !cube.all_finite() {
            return Err(HidError::Data("cube contains non-finite values".into()));
        }
        Ok(CubeFile { cube, dtype, meta })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| HidError::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub fn read_cube(path: &Path) -> Result<HsiCube> {
    Ok(CubeFile::read(path)?.cube)
}

pub fn write_cube(path: &Path, cube: &HsiCube) -> Result<()> {
    CubeFile::new(cube.clone()).write(path)
}

/// Element type of a flat raw raster.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RawType {
    U8,
    U16,
    F32,
    F64,
}

impl RawType {
    pub fn size_of(self) -> usize {
        match self {
            RawType::U8 => 1,
            RawType::U16 => 2,
            RawType::F32 => 4,
            RawType::F64 => 8,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "u8" => Ok(RawType::U8),
            "u16" => Ok(RawType::U16),
            "f32" => Ok(RawType::F32),
            "f64" => Ok(RawType::F64),
            _ => Err(HidError::Config(format!(
                "unknown raw type `{s}` (expected u8, u16, f32 or f64)"
            ))),
        }
    }
}

/// Decodes a little-endian `H×W×B` raster, dividing every value by `scale`.
pub fn import_raw_bytes(
    bytes: &[u8],
    h: usize,
    w: usize,
    b: usize,
    ty: RawType,
    scale: f64,
) -> Result<HsiCube> {
    let n = h * w * b;
    if bytes.len() != n * ty.size_of() {
        return Err(HidError::Data(format!(
            "raw file has {} bytes, {h}×{w}×{b} of {ty:?} needs {}",
            bytes.len(),
            n * ty.size_of()
        )));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(HidError::Config(format!(
            "scale must be positive, got {scale}"
        )));
    }
    let values: Vec<f64> = match ty {
        RawType::U8 => bytes.iter().map(|&v| v as f64).collect(),
        RawType::U16 => bytes
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes([c[0], c[1]]) as f64)
            .collect(),
        RawType::F32 => read_values(bytes, DType::F32),
        RawType::F64 => read_values(bytes, DType::F64),
    };
    if values.iter().any(|v| !v.is_finite()) {
        return Err(HidError::Data("raw file contains non-finite values".into()));
    }
    let data = if scale == 1.0 {
        values
    } else {
        values.into_iter().map(|v| v / scale).collect()
    };
    HsiCube::new(h, w, b, data)
}

pub fn import_raw(
    path: &Path,
    h: usize,
    w: usize,
    b: usize,
    ty: RawType,
    scale: f64,
) -> Result<HsiCube> {
    let bytes = fs::read(path).map_err(|e| HidError::io(path, e))?;
    import_raw_bytes(&bytes, h, w, b, ty, scale)
}

/// 8-bit RGB rendering of three bands, clamped to `[0, 1]` and scaled by 255.
pub fn falsecolor_pixels(cube: &HsiCube, bands: [usize; 3]) -> Result<Vec<u8>> {
    let (h, w, b) = cube.dims();
    if let Some(&bad) = bands.iter().find(|&&k| k >= b) {
        return Err(HidError::Data(format!(
            "band index {bad} out of range for a {b}-band cube"
        )));
    }
    let mut rgb = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            for &k in &bands {
                rgb.push((255.0 * cube.get(y, x, k).clamp(0.0, 1.0)).round() as u8);
            }
        }
    }
    Ok(rgb)
}

pub fn export_falsecolor(cube: &HsiCube, bands: [usize; 3], path: &Path) -> Result<()> {
    let rgb = falsecolor_pixels(cube, bands)?;
    let mut bytes = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut bytes, cube.width() as u32, cube.height() as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let png_err = |e: png::EncodingError| HidError::Data(format!("PNG encoding failed: {e}"));
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(&rgb).map_err(png_err)?;
        writer.finish().map_err(png_err)?;
    }
    write_atomic(path, &bytes)
}

/// Flat tensor dump: magic, dtype code, rank, extents (all `u32` LE), then
/// the row-major payload.
pub fn feature_dump_bytes<T: Real>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 4 * t.rank() + t.numel() * T::DTYPE.size_of());
    out.extend_from_slice(FEATURE_MAGIC);
    push_u32(&mut out, dtype_code(T::DTYPE));
    push_u32(&mut out, t.rank() as u32);
    for &d in t.shape() {
        push_u32(&mut out, d as u32);
    }
    for &v in t.data() {
        v.write_le(&mut out);
    }
    out
}

pub fn read_feature_dump(bytes: &[u8]) -> Result<Tensor<f64>> {
    let mut r = Reader {
        bytes,
        pos: 0,
        what: "feature dump",
    };
    r.magic(FEATURE_MAGIC)?;
    let dtype = dtype_from_code(r.u32()?)?;
    let rank = r.u32()? as usize;
    let shape = (0..rank)
        .map(|_| r.u32().map(|v| v as usize))
        .collect::<Result<Vec<_>>>()?;
    let n: usize = shape.iter().product();
    let values = read_values(r.take(n * dtype.size_of())?, dtype);
    Ok(Tensor::new(&shape, values)?)
}
