//! Reading and writing NIfTI-1 volumes: single-file `.nii`, gzipped
//! `.nii.gz`, and detached `.hdr`/`.img` pairs. Both byte orders are
//! auto-detected on read; writing defaults to little-endian float64.

use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{BigEndian, ByteOrder, LittleEndian};
use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::error::{Error, Result};
use crate::volume::{Mask, TimeSeriesVolume};

/// Byte offsets of the header fields we use, per the NIfTI-1 layout.
mod offset {
    pub const SIZEOF_HDR: usize = 0; // i32, always 348
    pub const DIM: usize = 40; // i16[8]
    pub const DATATYPE: usize = 70; // i16
    pub const BITPIX: usize = 72; // i16
    pub const PIXDIM: usize = 76; // f32[8]
    pub const VOX_OFFSET: usize = 108; // f32
    pub const SCL_SLOPE: usize = 112; // f32
    pub const SCL_INTER: usize = 116; // f32
    pub const XYZT_UNITS: usize = 123; // u8
    pub const MAGIC: usize = 344; // [u8; 4]
}

const HEADER_LEN: usize = 348;
/// Single-file data offset: header plus the 4-byte extension indicator.
const SINGLE_FILE_DATA_OFFSET: usize = 352;

const MAGIC_SINGLE: &[u8; 4] = b"n+1\0";
const MAGIC_PAIR: &[u8; 4] = b"ni1\0";

/// Sample encodings supported for the data section.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataType {
    Uint8,
    Int16,
    Int32,
    Float32,
    Float64,
}

impl DataType {
    fn from_code(code: i16) -> Option<Self> {
        match code {
            2 => Some(DataType::Uint8),
            4 => Some(DataType::Int16),
            8 => Some(DataType::Int32),
            16 => Some(DataType::Float32),
            64 => Some(DataType::Float64),
            _ => None,
        }
    }

    fn code(self) -> i16 {
        match self {
            DataType::Uint8 => 2,
            DataType::Int16 => 4,
            DataType::Int32 => 8,
            DataType::Float32 => 16,
            DataType::Float64 => 64,
        }
    }

    fn sample_bytes(self) -> usize {
        match self {
            DataType::Uint8 => 1,
            DataType::Int16 => 2,
            DataType::Int32 => 4,
            DataType::Float32 => 4,
            DataType::Float64 => 8,
        }
    }

    fn name(self) -> &'static str {
        match self {
            DataType::Uint8 => "uint8",
            DataType::Int16 => "int16",
            DataType::Int32 => "int32",
            DataType::Float32 => "float32",
            DataType::Float64 => "float64",
        }
    }
}

/// Options for `write_nifti_with`.
#[derive(Debug, Clone)]
pub struct WriteOptions {
    pub datatype: DataType,
    /// Intensity scaling stored in the header as `(slope, inter)`; raw
    /// samples are written as `(value - inter) / slope`. `None` writes a
    /// zero slope, meaning raw samples are the values themselves.
    pub scl: Option<(f32, f32)>,
    pub big_endian: bool,
}

impl Default for WriteOptions {
    fn default() -> Self {
        WriteOptions {
            datatype: DataType::Float64,
            scl: None,
            big_endian: false,
        }
    }
}

/// Loads a 4-D NIfTI-1 time series.
pub fn load_nifti(path: impl AsRef<Path>) -> Result<TimeSeriesVolume> {
    let path = path.as_ref();
    let bytes = read_maybe_gz(path)?;
    let header = parse_header(path, &bytes)?;

    let data = match header.magic {
        Magic::Single => {
            let off = header.vox_offset.max(HEADER_LEN as u64) as usize;
            slice_data(path, &bytes, off, header.data_len())?.to_vec()
        }
        Magic::Pair => {
            let img_path = companion_image_path(path)?;
            let img = read_maybe_gz(&img_path)?;
            let off = header.vox_offset as usize;
            slice_data(&img_path, &img, off, header.data_len())?.to_vec()
        }
    };

    let values = header.decode(&data);
    let volume = TimeSeriesVolume::new(header.dims, header.frames, values)
        .map_err(|e| Error::format(path, e.to_string()))?;
    Ok(volume.with_spacing(header.voxel_mm(), header.tr()))
}

/// Loads a 3-D NIfTI-1 mask whose grid must match `dims`; voxels with a
/// value greater than zero are included.
pub fn load_mask(path: impl AsRef<Path>, dims: (usize, usize, usize)) -> Result<Mask> {
    let path = path.as_ref();
    let bytes = read_maybe_gz(path)?;
    let header = parse_header(path, &bytes)?;
    if header.frames != 1 {
        return Err(Error::format(
            path,
            format!("mask must be 3-D, found {} frames", header.frames),
        ));
    }
    if header.dims != dims {
        return Err(Error::Geometry(format!(
            "mask grid {}x{}x{} does not match volume grid {}x{}x{}",
            header.dims.0, header.dims.1, header.dims.2, dims.0, dims.1, dims.2
        )));
    }
    let data = match header.magic {
        Magic::Single => {
            let off = header.vox_offset.max(HEADER_LEN as u64) as usize;
            slice_data(path, &bytes, off, header.data_len())?.to_vec()
        }
        Magic::Pair => {
            let img_path = companion_image_path(path)?;
            let img = read_maybe_gz(&img_path)?;
            slice_data(&img_path, &img, header.vox_offset as usize, header.data_len())?.to_vec()
        }
    };
    let values = header.decode(&data);
    let flags = values.iter().map(|&v| v > 0.0).collect();
    Mask::from_flags(dims, flags).map_err(|e| match e {
        Error::Degenerate(_) => Error::format(path, "mask selects no voxels"),
        other => other,
    })
}

/// Writes a volume as little-endian float64 without intensity scaling;
/// paths ending in `.gz` are gzip-compressed.
pub fn write_nifti(path: impl AsRef<Path>, volume: &TimeSeriesVolume) -> Result<()> {
    write_nifti_with(path, volume, &WriteOptions::default())
}

/// Writes a volume with an explicit datatype, scaling, and byte order.
pub fn write_nifti_with(
    path: impl AsRef<Path>,
    volume: &TimeSeriesVolume,
    opts: &WriteOptions,
) -> Result<()> {
    let path = path.as_ref();
    if let Some((slope, _)) = opts.scl {
        if slope == 0.0 || !slope.is_finite() {
            return Err(Error::InvalidInput(format!(
                "scl_slope must be finite and nonzero, got {slope}"
            )));
        }
    }
    let buf = if opts.big_endian {
        encode_file::<BigEndian>(volume, opts)?
    } else {
        encode_file::<LittleEndian>(volume, opts)?
    };
    write_maybe_gz(path, &buf)
}

/// Writes a mask as a 3-D uint8 volume (1 inside, 0 outside).
pub fn write_mask(path: impl AsRef<Path>, mask: &Mask) -> Result<()> {
    let path = path.as_ref();
    let dims = mask.dims();
    let mut buf = encode_header::<LittleEndian>(dims, 1, DataType::Uint8, None, None, None);
    buf.extend(mask.flags().iter().map(|&f| u8::from(f)));
    write_maybe_gz(path, &buf)
}

enum Magic {
    Single,
    Pair,
}

struct Header {
    dims: (usize, usize, usize),
    frames: usize,
    datatype: DataType,
    vox_offset: u64,
    scl: Option<(f64, f64)>,
    pixdim: [f32; 8],
    xyzt_units: u8,
    magic: Magic,
    endian: Endian,
}

impl Header {
    fn voxels(&self) -> usize {
        self.dims.0 * self.dims.1 * self.dims.2
    }

    fn data_len(&self) -> usize {
        self.voxels() * self.frames * self.datatype.sample_bytes()
    }

    fn voxel_mm(&self) -> Option<[f64; 3]> {
        let [dx, dy, dz] = [self.pixdim[1], self.pixdim[2], self.pixdim[3]];
        if dx > 0.0 && dy > 0.0 && dz > 0.0 {
            // Spatial unit codes: 1 = meters, 2 = millimeters, 3 = microns.
            let to_mm = match self.xyzt_units & 0x07 {
                1 => 1000.0,
                3 => 0.001,
                _ => 1.0,
            };
            Some([
                dx as f64 * to_mm,
                dy as f64 * to_mm,
                dz as f64 * to_mm,
            ])
        } else {
            None
        }
    }

    fn tr(&self) -> Option<f64> {
        let dt = self.pixdim[4];
        if dt > 0.0 && self.frames > 1 {
            // Temporal unit codes: 8 = seconds, 16 = milliseconds, 24 = microseconds.
            let to_sec = match self.xyzt_units & 0x38 {
                16 => 1e-3,
                24 => 1e-6,
                _ => 1.0,
            };
            Some(dt as f64 * to_sec)
        } else {
            None
        }
    }

    /// Decodes the raw data section into voxel-major f64 samples. The file
    /// stores samples x-fastest then y, z, t, so sample `t * voxels + i`
    /// lands at `values[i * frames + t]`.
    fn decode(&self, data: &[u8]) -> Vec<f64> {
        let voxels = self.voxels();
        let step = self.datatype.sample_bytes();
        let mut values = vec![0.0; voxels * self.frames];
        let mut pos = 0;
        for t in 0..self.frames {
            for i in 0..voxels {
                let raw = match self.datatype {
                    DataType::Uint8 => data[pos] as f64,
                    DataType::Int16 => self.read_i16(&data[pos..]) as f64,
                    DataType::Int32 => self.read_i32(&data[pos..]) as f64,
                    DataType::Float32 => self.read_f32(&data[pos..]) as f64,
                    DataType::Float64 => self.read_f64(&data[pos..]),
                };
                values[i * self.frames + t] = match self.scl {
                    Some((slope, inter)) => raw * slope + inter,
                    None => raw,
                };
                pos += step;
            }
        }
        values
    }

    fn big_endian(&self) -> bool {
        matches!(self.endian, Endian::Big)
    }

    fn read_i16(&self, b: &[u8]) -> i16 {
        if self.big_endian() {
            BigEndian::read_i16(b)
        } else {
            LittleEndian::read_i16(b)
        }
    }

    fn read_i32(&self, b: &[u8]) -> i32 {
        if self.big_endian() {
            BigEndian::read_i32(b)
        } else {
            LittleEndian::read_i32(b)
        }
    }

    fn read_f32(&self, b: &[u8]) -> f32 {
        if self.big_endian() {
            BigEndian::read_f32(b)
        } else {
            LittleEndian::read_f32(b)
        }
    }

    fn read_f64(&self, b: &[u8]) -> f64 {
        if self.big_endian() {
            BigEndian::read_f64(b)
        } else {
            LittleEndian::read_f64(b)
        }
    }
}

#[derive(Clone, Copy)]
enum Endian {
    Little,
    Big,
}

fn parse_header(path: &Path, bytes: &[u8]) -> Result<Header> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(
            path,
            format!(
                "file too short for a NIfTI-1 header: {} bytes, need {HEADER_LEN}",
                bytes.len()
            ),
        ));
    }
    let endian = if LittleEndian::read_i32(&bytes[offset::SIZEOF_HDR..]) == 348 {
        Endian::Little
    } else if BigEndian::read_i32(&bytes[offset::SIZEOF_HDR..]) == 348 {
        Endian::Big
    } else {
        return Err(Error::format(
            path,
            "not a NIfTI-1 file: header size field is 348 in neither byte order",
        ));
    };
    match endian {
        Endian::Little => parse_header_endian::<LittleEndian>(path, bytes, endian),
        Endian::Big => parse_header_endian::<BigEndian>(path, bytes, endian),
    }
}

fn parse_header_endian<E: ByteOrder>(path: &Path, bytes: &[u8], endian: Endian) -> Result<Header> {
    let magic_bytes: [u8; 4] = bytes[offset::MAGIC..offset::MAGIC + 4].try_into().unwrap();
    let magic = if &magic_bytes == MAGIC_SINGLE {
        Magic::Single
    } else if &magic_bytes == MAGIC_PAIR {
        Magic::Pair
    } else {
        return Err(Error::format(
            path,
            format!("bad NIfTI-1 magic {:?}", magic_bytes),
        ));
    };

    let mut dim = [0i16; 8];
    for (k, d) in dim.iter_mut().enumerate() {
        *d = E::read_i16(&bytes[offset::DIM + 2 * k..]);
    }
    let ndim = dim[0];
    if !(3..=7).contains(&ndim) {
        return Err(Error::format(
            path,
            format!("unsupported dimensionality dim[0] = {ndim}"),
        ));
    }
    // Trailing axes beyond the fourth must be absent or singleton.
    #[allow(clippy::needless_range_loop)]
    for k in 5..=(ndim as usize).min(7) {
        if dim[k] > 1 {
            return Err(Error::format(
                path,
                format!("unsupported dimensionality: dim[{k}] = {}", dim[k]),
            ));
        }
    }
    let (nx, ny, nz) = (dim[1], dim[2], dim[3]);
    if nx < 1 || ny < 1 || nz < 1 {
        return Err(Error::format(
            path,
            format!("invalid spatial dimensions {nx}x{ny}x{nz}"),
        ));
    }
    let nt = if ndim >= 4 { dim[4].max(1) } else { 1 };

    let code = E::read_i16(&bytes[offset::DATATYPE..]);
    let datatype = DataType::from_code(code)
        .ok_or_else(|| Error::format(path, format!("unsupported datatype code {code}")))?;

    let mut pixdim = [0f32; 8];
    for (k, p) in pixdim.iter_mut().enumerate() {
        *p = E::read_f32(&bytes[offset::PIXDIM + 4 * k..]);
    }

    let vox_offset = E::read_f32(&bytes[offset::VOX_OFFSET..]);
    let slope = E::read_f32(&bytes[offset::SCL_SLOPE..]) as f64;
    let inter = E::read_f32(&bytes[offset::SCL_INTER..]) as f64;
    // A zero or non-finite slope means the raw samples are the values.
    let scl = if slope != 0.0 && slope.is_finite() && inter.is_finite() {
        Some((slope, inter))
    } else {
        None
    };

    Ok(Header {
        dims: (nx as usize, ny as usize, nz as usize),
        frames: nt as usize,
        datatype,
        vox_offset: if vox_offset.is_finite() && vox_offset > 0.0 {
            vox_offset as u64
        } else {
            0
        },
        scl,
        pixdim,
        xyzt_units: bytes[offset::XYZT_UNITS],
        magic,
        endian,
    })
}

fn slice_data<'a>(path: &Path, bytes: &'a [u8], offset: usize, len: usize) -> Result<&'a [u8]> {
    let end = offset.checked_add(len).filter(|&e| e <= bytes.len());
    match end {
        Some(end) => Ok(&bytes[offset..end]),
        None => Err(Error::format(
            path,
            format!(
                "truncated data section: need {len} bytes at offset {offset}, file holds {}",
                bytes.len()
            ),
        )),
    }
}

fn companion_image_path(path: &Path) -> Result<PathBuf> {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
    let img_name = if let Some(stem) = name.strip_suffix(".hdr.gz") {
        format!("{stem}.img.gz")
    } else if let Some(stem) = name.strip_suffix(".hdr") {
        format!("{stem}.img")
    } else {
        return Err(Error::format(
            path,
            "header names a detached image (magic 'ni1') but the path does not end in .hdr",
        ));
    };
    Ok(path.with_file_name(img_name))
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let mut raw = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut raw))
        .map_err(|e| Error::io(path, e))?;
    if raw.len() >= 2 && raw[0] == 0x1f && raw[1] == 0x8b {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice())
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn write_maybe_gz(path: &Path, buf: &[u8]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let gz = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("gz"));
    let result = if gz {
        let mut enc = GzEncoder::new(file, Compression::default());
        enc.write_all(buf).and_then(|_| enc.finish().map(|_| ()))
    } else {
        let mut f = file;
        f.write_all(buf)
    };
    result.map_err(|e| Error::io(path, e))
}

fn encode_header<E: ByteOrder>(
    dims: (usize, usize, usize),
    frames: usize,
    datatype: DataType,
    scl: Option<(f32, f32)>,
    voxel_mm: Option<[f64; 3]>,
    tr: Option<f64>,
) -> Vec<u8> {
    let mut buf = vec![0u8; SINGLE_FILE_DATA_OFFSET];
    E::write_i32(&mut buf[offset::SIZEOF_HDR..], 348);
    let ndim: i16 = if frames > 1 { 4 } else { 3 };
    let dim = [
        ndim,
        dims.0 as i16,
        dims.1 as i16,
        dims.2 as i16,
        frames as i16,
        1,
        1,
        1,
    ];
    for (k, d) in dim.iter().enumerate() {
        E::write_i16(&mut buf[offset::DIM + 2 * k..], *d);
    }
    E::write_i16(&mut buf[offset::DATATYPE..], datatype.code());
    E::write_i16(&mut buf[offset::BITPIX..], (datatype.sample_bytes() * 8) as i16);
    let mm = voxel_mm.unwrap_or([1.0, 1.0, 1.0]);
    let pixdim = [
        1.0,
        mm[0] as f32,
        mm[1] as f32,
        mm[2] as f32,
        tr.unwrap_or(0.0) as f32,
        0.0,
        0.0,
        0.0,
    ];
    for (k, p) in pixdim.iter().enumerate() {
        E::write_f32(&mut buf[offset::PIXDIM + 4 * k..], *p);
    }
    E::write_f32(&mut buf[offset::VOX_OFFSET..], SINGLE_FILE_DATA_OFFSET as f32);
    let (slope, inter) = scl.unwrap_or((0.0, 0.0));
    E::write_f32(&mut buf[offset::SCL_SLOPE..], slope);
    E::write_f32(&mut buf[offset::SCL_INTER..], inter);
    buf[offset::XYZT_UNITS] = 2 | 8; // millimeters, seconds
    buf[offset::MAGIC..offset::MAGIC + 4].copy_from_slice(MAGIC_SINGLE);
    buf
}

fn encode_file<E: ByteOrder>(volume: &TimeSeriesVolume, opts: &WriteOptions) -> Result<Vec<u8>> {
    let dims = volume.dims();
    let voxels = volume.voxel_count();
    let frames = volume.frames();
    if dims.0 > i16::MAX as usize
        || dims.1 > i16::MAX as usize
        || dims.2 > i16::MAX as usize
        || frames > i16::MAX as usize
    {
        return Err(Error::InvalidInput(format!(
            "volume {}x{}x{}x{frames} exceeds the NIfTI-1 dimension limit of {}",
            dims.0,
            dims.1,
            dims.2,
            i16::MAX
        )));
    }
    let mut buf = encode_header::<E>(
        dims,
        frames,
        opts.datatype,
        opts.scl,
        volume.voxel_mm(),
        volume.tr(),
    );
    buf.reserve(voxels * frames * opts.datatype.sample_bytes());
    let values = volume.values();
    let mut sample = [0u8; 8];
    for t in 0..frames {
        for i in 0..voxels {
            let v = values[i * frames + t];
            let raw = match opts.scl {
                Some((slope, inter)) => (v - inter as f64) / slope as f64,
                None => v,
            };
            let n = encode_sample::<E>(raw, opts.datatype, &mut sample)?;
            buf.extend_from_slice(&sample[..n]);
        }
    }
    Ok(buf)
}

fn encode_sample<E: ByteOrder>(raw: f64, datatype: DataType, out: &mut [u8; 8]) -> Result<usize> {
    let fits = |lo: f64, hi: f64, r: f64| -> Result<f64> {
        let rounded = r.round();
        if rounded < lo || rounded > hi {
            return Err(Error::InvalidInput(format!(
                "sample value {r} does not fit datatype {}",
                datatype.name()
            )));
        }
        Ok(rounded)
    };
    match datatype {
        DataType::Uint8 => {
            out[0] = fits(0.0, u8::MAX as f64, raw)? as u8;
            Ok(1)
        }
        DataType::Int16 => {
            E::write_i16(out, fits(i16::MIN as f64, i16::MAX as f64, raw)? as i16);
            Ok(2)
        }
        DataType::Int32 => {
            E::write_i32(out, fits(i32::MIN as f64, i32::MAX as f64, raw)? as i32);
            Ok(4)
        }
        DataType::Float32 => {
            if raw.abs() > f32::MAX as f64 {
                return Err(Error::InvalidInput(format!(
                    "sample value {raw} does not fit datatype float32"
                )));
            }
            E::write_f32(out, raw as f32);
            Ok(4)
        }
        DataType::Float64 => {
            E::write_f64(out, raw);
            Ok(8)
        }
    }
}
