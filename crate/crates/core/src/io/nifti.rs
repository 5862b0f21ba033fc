//! Single-file NIfTI-1 (`.nii`) reader and writer.
//!
//! Only the fields needed to carry a 3D grid are interpreted: `dim`,
//! `datatype`, `bitpix`, `pixdim`, `vox_offset`, `scl_slope`/`scl_inter` and
//! `magic`. Both byte orders are read; files are always written little-endian.

use std::fs;
use std::path::Path;

use byteorder::{BigEndian, ByteOrder, LittleEndian};

use crate::error::{Error, Result};
use crate::volume::{Dims, Mask, Spacing, Volume};

pub const HEADER_SIZE: usize = 348;
const DEFAULT_VOX_OFFSET: usize = 352;

mod offsets {
    pub const SIZEOF_HDR: usize = 0;
    pub const DIM: usize = 40;
    pub const DATATYPE: usize = 70;
    pub const BITPIX: usize = 72;
    pub const PIXDIM: usize = 76;
    pub const VOX_OFFSET: usize = 108;
    pub const SCL_SLOPE: usize = 112;
    pub const SCL_INTER: usize = 116;
    pub const XYZT_UNITS: usize = 123;
    pub const DESCRIP: usize = 148;
    pub const MAGIC: usize = 344;
}

const MAGIC_SINGLE: &[u8; 4] = b"n+1\0";
const XYZT_MM: u8 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataType {
    U8,
    I16,
    U16,
    F32,
}

impl DataType {
    pub fn code(self) -> i16 {
        match self {
            DataType::U8 => 2,
            DataType::I16 => 4,
            DataType::U16 => 512,
            DataType::F32 => 16,
        }
    }

    pub fn from_code(code: i16) -> Option<Self> {
        match code {
            2 => Some(DataType::U8),
            4 => Some(DataType::I16),
            512 => Some(DataType::U16),
            16 => Some(DataType::F32),
            _ => None,
        }
    }

    pub fn bytes(self) -> usize {
        match self {
            DataType::U8 => 1,
            DataType::I16 | DataType::U16 => 2,
            DataType::F32 => 4,
        }
    }

    fn range(self) -> Option<(f32, f32)> {
        match self {
            DataType::U8 => Some((0.0, u8::MAX as f32)),
            DataType::I16 => Some((i16::MIN as f32, i16::MAX as f32)),
            DataType::U16 => Some((0.0, u16::MAX as f32)),
            DataType::F32 => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NiftiHeader {
    pub dim: [i16; 8],
    pub datatype: DataType,
    pub bitpix: i16,
    pub pixdim: [f32; 8],
    pub vox_offset: f32,
    pub scl_slope: f32,
    pub scl_inter: f32,
    pub little_endian: bool,
}

impl NiftiHeader {
    pub fn dims(&self) -> Dims {
        Dims {
            nx: self.dim[1] as usize,
            ny: self.dim[2] as usize,
            nz: self.dim[3] as usize,
        }
    }

    pub fn spacing(&self) -> Spacing {
        Spacing {
            dx: self.pixdim[1] as f64,
            dy: self.pixdim[2] as f64,
            dz: self.pixdim[3] as f64,
        }
    }

    fn for_grid(dims: Dims, spacing: Spacing, datatype: DataType) -> Self {
        let mut dim = [1i16; 8];
        dim[0] = 3;
        dim[1] = dims.nx as i16;
        dim[2] = dims.ny as i16;
        dim[3] = dims.nz as i16;
        let mut pixdim = [0f32; 8];
        pixdim[0] = 1.0;
        pixdim[1] = spacing.dx as f32;
        pixdim[2] = spacing.dy as f32;
        pixdim[3] = spacing.dz as f32;
        NiftiHeader {
            dim,
            datatype,
            bitpix: (datatype.bytes() * 8) as i16,
            pixdim,
            vox_offset: DEFAULT_VOX_OFFSET as f32,
            scl_slope: 0.0,
            scl_inter: 0.0,
            little_endian: true,
        }
    }

    fn encode(&self) -> Vec<u8> {
        let mut buf = vec![0u8; DEFAULT_VOX_OFFSET];
        type E = LittleEndian;
        E::write_i32(&mut buf[offsets::SIZEOF_HDR..], HEADER_SIZE as i32);
        for (i, d) in self.dim.iter().enumerate() {
            E::write_i16(&mut buf[offsets::DIM + 2 * i..], *d);
        }
        E::write_i16(&mut buf[offsets::DATATYPE..], self.datatype.code());
        E::write_i16(&mut buf[offsets::BITPIX..], self.bitpix);
        for (i, p) in self.pixdim.iter().enumerate() {
            E::write_f32(&mut buf[offsets::PIXDIM + 4 * i..], *p);
        }
        E::write_f32(&mut buf[offsets::VOX_OFFSET..], self.vox_offset);
        E::write_f32(&mut buf[offsets::SCL_SLOPE..], self.scl_slope);
        E::write_f32(&mut buf[offsets::SCL_INTER..], self.scl_inter);
        buf[offsets::XYZT_UNITS] = XYZT_MM;
        let descrip = b"biliseg";
        buf[offsets::DESCRIP..offsets::DESCRIP + descrip.len()].copy_from_slice(descrip);
        buf[offsets::MAGIC..offsets::MAGIC + 4].copy_from_slice(MAGIC_SINGLE);
        buf
    }
}

/// Parses the 348-byte header at the start of `bytes`.
pub fn parse_header(bytes: &[u8]) -> Result<NiftiHeader> {
    if bytes.len() < HEADER_SIZE {
        return Err(Error::format(
            bytes.len(),
            format!("file holds {} bytes, header needs {HEADER_SIZE}", bytes.len()),
        ));
    }
    if LittleEndian::read_i32(&bytes[offsets::SIZEOF_HDR..]) == HEADER_SIZE as i32 {
        parse_with::<LittleEndian>(bytes, true)
    } else if BigEndian::read_i32(&bytes[offsets::SIZEOF_HDR..]) == HEADER_SIZE as i32 {
        parse_with::<BigEndian>(bytes, false)
    } else {
        Err(Error::format(
            offsets::SIZEOF_HDR,
            "sizeof_hdr is not 348 in either byte order",
        ))
    }
}

fn parse_with<E: ByteOrder>(bytes: &[u8], little_endian: bool) -> Result<NiftiHeader> {
    let magic = &bytes[offsets::MAGIC..offsets::MAGIC + 4];
    if magic != MAGIC_SINGLE {
        return Err(Error::format(
            offsets::MAGIC,
            format!("unsupported magic {:?}, expected single-file \"n+1\"", String::from_utf8_lossy(magic)),
        ));
    }
    let mut dim = [0i16; 8];
    for (i, d) in dim.iter_mut().enumerate() {
        *d = E::read_i16(&bytes[offsets::DIM + 2 * i..]);
    }
    if dim[0] != 3 {
        return Err(Error::format(
            offsets::DIM,
            format!("expected a 3D image, dim[0] = {}", dim[0]),
        ));
    }
    if let Some(a) = (1..=3).find(|&a| dim[a] < 1) {
        return Err(Error::format(
            offsets::DIM + 2 * a,
            format!("dim[{a}] = {} must be >= 1", dim[a]),
        ));
    }
    let code = E::read_i16(&bytes[offsets::DATATYPE..]);
    let datatype = DataType::from_code(code)
        .ok_or_else(|| Error::format(offsets::DATATYPE, format!("unsupported datatype code {code}")))?;
    let bitpix = E::read_i16(&bytes[offsets::BITPIX..]);
    if bitpix as usize != datatype.bytes() * 8 {
        return Err(Error::format(
            offsets::BITPIX,
            format!("bitpix {bitpix} does not match datatype {code}"),
        ));
    }
    let mut pixdim = [0f32; 8];
    for (i, p) in pixdim.iter_mut().enumerate() {
        *p = E::read_f32(&bytes[offsets::PIXDIM + 4 * i..]);
    }
    if let Some(a) = (1..=3).find(|&a| !(pixdim[a].is_finite() && pixdim[a] > 0.0)) {
        return Err(Error::format(
            offsets::PIXDIM + 4 * a,
            format!("pixdim[{a}] = {} is not a positive spacing", pixdim[a]),
        ));
    }
    let vox_offset = E::read_f32(&bytes[offsets::VOX_OFFSET..]);
    if !(vox_offset.is_finite() && vox_offset >= HEADER_SIZE as f32) {
        return Err(Error::format(
            offsets::VOX_OFFSET,
            format!("vox_offset {vox_offset} precedes end of header"),
        ));
    }
    Ok(NiftiHeader {
        dim,
        datatype,
        bitpix,
        pixdim,
        vox_offset,
        scl_slope: E::read_f32(&bytes[offsets::SCL_SLOPE..]),
        scl_inter: E::read_f32(&bytes[offsets::SCL_INTER..]),
        little_endian,
    })
}

/// Decodes a whole in-memory `.nii` file into its header and scaled intensities.
pub fn decode(bytes: &[u8]) -> Result<(NiftiHeader, Vec<f32>)> {
    let hdr = parse_header(bytes)?;
    let dims = hdr.dims();
    let start = hdr.vox_offset as usize;
    let width = hdr.datatype.bytes();
    let end = start + dims.len() * width;
    if bytes.len() < end {
        return Err(Error::format(
            bytes.len(),
            format!("truncated voxel data: expected {end} bytes, file has {}", bytes.len()),
        ));
    }
    let raw = &bytes[start..end];
    let values: Vec<f64> = if hdr.little_endian {
        decode_raw::<LittleEndian>(raw, hdr.datatype)
    } else {
        decode_raw::<BigEndian>(raw, hdr.datatype)
    };
    let scaled = if hdr.scl_slope != 0.0 && hdr.scl_slope.is_finite() {
        let (m, b) = (hdr.scl_slope as f64, hdr.scl_inter as f64);
        values.into_iter().map(|v| (v * m + b) as f32).collect()
    } else {
        values.into_iter().map(|v| v as f32).collect()
    };
    Ok((hdr, scaled))
}

fn decode_raw<E: ByteOrder>(raw: &[u8], dt: DataType) -> Vec<f64> {
    match dt {
        DataType::U8 => raw.iter().map(|&b| b as f64).collect(),
        DataType::I16 => raw.chunks_exact(2).map(|c| E::read_i16(c) as f64).collect(),
        DataType::U16 => raw.chunks_exact(2).map(|c| E::read_u16(c) as f64).collect(),
        DataType::F32 => raw.chunks_exact(4).map(|c| E::read_f32(c) as f64).collect(),
    }
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn read_header(path: impl AsRef<Path>) -> Result<NiftiHeader> {
    parse_header(&read_file(path.as_ref())?)
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let (hdr, data) = decode(&read_file(path.as_ref())?)?;
    Volume::new(hdr.dims(), hdr.spacing(), data).map_err(|e| match e {
        Error::Domain(m) => Error::format(hdr.vox_offset as usize, m),
        other => other,
    })
}

/// Reads a binary image. Every voxel must decode to exactly 0 or 1.
pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let (hdr, data) = decode(&read_file(path.as_ref())?)?;
    if let Some(i) = data.iter().position(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::format(
            hdr.vox_offset as usize + i * hdr.datatype.bytes(),
            format!("mask voxel {i} has value {}, expected 0 or 1", data[i]),
        ));
    }
    Mask::new(hdr.dims(), hdr.spacing(), data.iter().map(|&v| v == 1.0).collect())
}

fn check_dims_fit(dims: Dims) -> Result<()> {
    if dims.as_array().iter().any(|&n| n > i16::MAX as usize) {
        return Err(Error::Config(format!("{dims} exceeds NIfTI-1 dimension limit")));
    }
    Ok(())
}

/// Writes a volume as float32 with `scl_slope = 0`.
pub fn write_volume(volume: &Volume, path: impl AsRef<Path>) -> Result<()> {
    write_volume_as(volume, DataType::F32, path)
}

/// Writes a volume with the given storage type. Integer types require every
/// intensity to be an exactly representable integer.
pub fn write_volume_as(volume: &Volume, datatype: DataType, path: impl AsRef<Path>) -> Result<()> {
    let dims = volume.dims();
    check_dims_fit(dims)?;
    if let Some((lo, hi)) = datatype.range() {
        if let Some(&v) = volume
            .data()
            .iter()
            .find(|&&v| v.fract() != 0.0 || v < lo || v > hi)
        {
            return Err(Error::Domain(format!(
                "intensity {v} is not representable as {datatype:?}"
            )));
        }
    }
    let hdr = NiftiHeader::for_grid(dims, volume.spacing(), datatype);
    let mut buf = hdr.encode();
    buf.reserve(dims.len() * datatype.bytes());
    let mut scratch = [0u8; 4];
    for &v in volume.data() {
        match datatype {
            DataType::U8 => buf.push(v as u8),
            DataType::I16 => {
                LittleEndian::write_i16(&mut scratch, v as i16);
                buf.extend_from_slice(&scratch[..2]);
            }
            DataType::U16 => {
                LittleEndian::write_u16(&mut scratch, v as u16);
                buf.extend_from_slice(&scratch[..2]);
            }
            DataType::F32 => {
                LittleEndian::write_f32(&mut scratch, v);
                buf.extend_from_slice(&scratch);
            }
        }
    }
    super::write_atomic(path.as_ref(), &buf)
}

/// Writes a mask as uint8 {0, 1}.
pub fn write_mask(mask: &Mask, path: impl AsRef<Path>) -> Result<()> {
    let dims = mask.dims();
    check_dims_fit(dims)?;
    let mut buf = NiftiHeader::for_grid(dims, mask.spacing(), DataType::U8).encode();
    buf.extend(mask.data().iter().map(|&b| b as u8));
    super::write_atomic(path.as_ref(), &buf)
}
