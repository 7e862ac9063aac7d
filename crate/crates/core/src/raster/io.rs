//! FGRD raster files and PPM flood-map export.
//!
//! FGRD layout (little-endian):
//!
//! | bytes  | content                                   |
//! |--------|-------------------------------------------|
//! | 0..6   | magic `FGRD1\n`                           |
//! | 6      | dtype code: 0 = float32, 1 = int8         |
//! | 7..11  | u32 width                                 |
//! | 11..15 | u32 height                                |
//! | 15..19 | u32 channels                              |
//! | 19..   | values, planar row-major                  |

use std::fs;
use std::io::Write;
use std::path::Path;

use super::Grid;
use crate::error::{Error, Result};

const MAGIC: &[u8; 6] = b"FGRD1\n";
const HEADER_LEN: usize = 19;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    Float32,
    Int8,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::Float32 => 0,
            DType::Int8 => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(DType::Float32),
            1 => Ok(DType::Int8),
            other => Err(Error::UnknownDtype(other)),
        }
    }

    pub fn size(self) -> usize {
        match self {
            DType::Float32 => 4,
            DType::Int8 => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            DType::Float32 => "float32",
            DType::Int8 => "int8",
        }
    }
}

/// Cell types that have an FGRD encoding.
pub trait Cell: Copy + Sized {
    const DTYPE: DType;
    fn write_le(self, out: &mut Vec<u8>);
    fn read_le(bytes: &[u8]) -> Self;
    fn unwrap_any(any: AnyGrid) -> Result<Grid<Self>>;
}

impl Cell for f32 {
    const DTYPE: DType = DType::Float32;

    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }

    fn read_le(bytes: &[u8]) -> Self {
        f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]])
    }

    fn unwrap_any(any: AnyGrid) -> Result<Grid<Self>> {
        match any {
            AnyGrid::F32(g) => Ok(g),
            AnyGrid::I8(_) => Err(Error::DtypeMismatch {
                expected: "float32",
                found: "int8",
            }),
        }
    }
}

impl Cell for i8 {
    const DTYPE: DType = DType::Int8;

    fn write_le(self, out: &mut Vec<u8>) {
        out.push(self as u8);
    }

    fn read_le(bytes: &[u8]) -> Self {
        bytes[0] as i8
    }

    fn unwrap_any(any: AnyGrid) -> Result<Grid<Self>> {
        match any {
            AnyGrid::I8(g) => Ok(g),
            AnyGrid::F32(_) => Err(Error::DtypeMismatch {
                expected: "int8",
                found: "float32",
            }),
        }
    }
}

/// A grid read from disk whose dtype is only known at run time.
#[derive(Clone, Debug, PartialEq)]
pub enum AnyGrid {
    F32(Grid<f32>),
    I8(Grid<i8>),
}

impl AnyGrid {
    pub fn dtype(&self) -> DType {
        match self {
            AnyGrid::F32(_) => DType::Float32,
            AnyGrid::I8(_) => DType::Int8,
        }
    }

    pub fn into_typed<T: Cell>(self) -> Result<Grid<T>> {
        T::unwrap_any(self)
    }
}

impl<T: Cell> Grid<T> {
    pub fn to_fgrd_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data().len() * T::DTYPE.size());
        out.extend_from_slice(MAGIC);
        out.push(T::DTYPE.code());
        for dim in [self.width(), self.height(), self.channels()] {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for &v in self.data() {
            v.write_le(&mut out);
        }
        out
    }
}

fn decode<T: Cell>(w: usize, h: usize, c: usize, payload: &[u8]) -> Result<Grid<T>> {
    let data = payload
        .chunks_exact(T::DTYPE.size())
        .map(T::read_le)
        .collect();
    Grid::new(w, h, c, data)
}

pub fn read_grid_bytes(bytes: &[u8]) -> Result<AnyGrid> {
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::BadMagic { expected: "FGRD1\\n" });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN,
            found: bytes.len(),
        });
    }
    let dtype = DType::from_code(bytes[6])?;
    let dim = |at: usize| u32::from_le_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]]) as usize;
    let (w, h, c) = (dim(7), dim(11), dim(15));
    let expected = w
        .checked_mul(h)
        .and_then(|n| n.checked_mul(c))
        .and_then(|n| n.checked_mul(dtype.size()))
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::InvalidDims(format!("{w}x{h}x{c} overflows")))?;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(Error::TrailingBytes(bytes.len() - expected));
    }
    let payload = &bytes[HEADER_LEN..];
    Ok(match dtype {
        DType::Float32 => AnyGrid::F32(decode(w, h, c, payload)?),
        DType::Int8 => AnyGrid::I8(decode(w, h, c, payload)?),
    })
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<AnyGrid> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_grid_bytes(&bytes)
}

pub fn write_grid<T: Cell>(g: &Grid<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, g.to_fgrd_bytes()).map_err(|e| Error::io(path, e))
}

/// Binary PPM: pixels with flood probability >= 0.5 red, all others blue.
pub fn write_flood_ppm(flood_prob: &Grid<f32>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = format!("P6\n{} {}\n255\n", flood_prob.width(), flood_prob.height()).into_bytes();
    for &p in flood_prob.plane(0) {
        out.extend_from_slice(if p >= 0.5 { &[255, 0, 0] } else { &[0, 0, 255] });
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}
