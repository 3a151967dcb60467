//! Reader and writer for single-file NIfTI-1 label volumes (`.nii`, `.nii.gz`).
//!
//! Only the subset needed to carry integer segmentation masks is supported:
//! three spatial axes (a fourth axis of extent 1 is tolerated), datatypes
//! uint8, int16, uint16, int32 and float32, either byte order, and optional
//! gzip framing. Paired `.hdr`/`.img` files and NIfTI-2 are rejected.
//!
//! The voxel-to-world affine follows the usual preference order: sform when
//! `sform_code > 0`, else the qform quaternion when `qform_code > 0`, else a
//! diagonal built from `pixdim`.

use std::fs::File;
use std::io::{self, Read, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use thiserror::Error;

use crate::affine::{self, Affine};

pub const HEADER_SIZE: usize = 348;
/// Header plus the 4-byte extension flag.
const DATA_OFFSET: usize = 352;
pub const MAGIC_SINGLE_FILE: &[u8; 4] = b"n+1\0";
pub const MAGIC_PAIRED: &[u8; 4] = b"ni1\0";

/// Largest allowed deviation of a scaled voxel value from the nearest integer.
pub const INTEGRALITY_TOLERANCE: f64 = 1.0 / 64.0;

const NIFTI_UNITS_MM: u8 = 2;
const SFORM_SCANNER: i16 = 1;

#[derive(Debug, Error)]
pub enum NiftiError {
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported datatype code {0}")]
    UnsupportedDatatype(i16),
    #[error("voxel {index} has non-integral label value {value}")]
    NonIntegralLabel { index: usize, value: f64 },
    #[error("voxel {index} has negative label value {value}")]
    NegativeLabel { index: usize, value: f64 },
    #[error("voxel {index} has label value {value}, which does not fit in 16 bits")]
    LabelOverflow { index: usize, value: f64 },
    #[error("truncated data: expected {expected} bytes, found {actual}")]
    TruncatedData { expected: usize, actual: usize },
    #[error("invalid volume: {0}")]
    InvalidVolume(String),
    #[error("gzip stream: {0}")]
    Decompress(io::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, NiftiError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ByteOrder {
    Little,
    Big,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Datatype {
    Uint8,
    Int16,
    Int32,
    Float32,
    Uint16,
}

impl Datatype {
    pub fn from_code(code: i16) -> Option<Self> {
        match code {
            2 => Some(Self::Uint8),
            4 => Some(Self::Int16),
            8 => Some(Self::Int32),
            16 => Some(Self::Float32),
            512 => Some(Self::Uint16),
            _ => None,
        }
    }

    pub fn code(self) -> i16 {
        match self {
            Self::Uint8 => 2,
            Self::Int16 => 4,
            Self::Int32 => 8,
            Self::Float32 => 16,
            Self::Uint16 => 512,
        }
    }

    pub fn bytes_per_voxel(self) -> usize {
        match self {
            Self::Uint8 => 1,
            Self::Int16 | Self::Uint16 => 2,
            Self::Int32 | Self::Float32 => 4,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Uint8 => "uint8",
            Self::Int16 => "int16",
            Self::Int32 => "int32",
            Self::Float32 => "float32",
            Self::Uint16 => "uint16",
        }
    }
}

/// Decoded fields of a NIfTI-1 header that matter for label volumes.
#[derive(Debug, Clone, PartialEq)]
pub struct VolumeHeader {
    pub dims: [usize; 3],
    pub pixdim: [f64; 3],
    pub datatype: Datatype,
    pub scl_slope: f64,
    pub scl_inter: f64,
    pub vox_offset: usize,
    pub qform_code: i16,
    pub sform_code: i16,
    pub affine: Affine,
    pub magic: [u8; 4],
    pub byte_order: ByteOrder,
}

impl VolumeHeader {
    pub fn voxel_count(&self) -> Option<usize> {
        self.dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
    }

    /// Whether voxel values pass through `slope * v + inter`. A zero or
    /// non-finite slope means "no scaling", as does the identity pair (1, 0).
    pub fn applies_scaling(&self) -> bool {
        self.scl_slope.is_finite()
            && self.scl_slope != 0.0
            && (self.scl_slope != 1.0 || (self.scl_inter != 0.0 && self.scl_inter.is_finite()))
    }
}

/// Dense 3D grid of structure labels, x varying fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    dims: [usize; 3],
    spacing: [f64; 3],
    affine: Affine,
    labels: Vec<u16>,
}

impl LabelVolume {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], affine: Affine, labels: Vec<u16>) -> Result<Self> {
        if dims.contains(&0) {
            return Err(NiftiError::InvalidVolume(format!("dims {dims:?} must all be positive")));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(NiftiError::InvalidVolume(format!("spacing {spacing:?} must be positive")));
        }
        if !affine::is_invertible(&affine) {
            return Err(NiftiError::InvalidVolume("affine is not invertible".into()));
        }
        let expected = dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        if expected != Some(labels.len()) {
            return Err(NiftiError::InvalidVolume(format!("{} labels for dims {dims:?}", labels.len())));
        }
        Ok(Self { dims, spacing, affine, labels })
    }

    /// Volume whose affine is the spacing diagonal with origin at voxel (0,0,0).
    pub fn with_spacing(dims: [usize; 3], spacing: [f64; 3], labels: Vec<u16>) -> Result<Self> {
        Self::new(dims, spacing, affine::diagonal(spacing), labels)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn affine(&self) -> &Affine {
        &self.affine
    }

    pub fn labels(&self) -> &[u16] {
        &self.labels
    }

    pub fn labels_mut(&mut self) -> &mut [u16] {
        &mut self.labels
    }

    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> u16 {
        self.labels[self.index(x, y, z)]
    }

    pub fn max_label(&self) -> u16 {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    /// Sorted `(label, voxel count)` pairs for every label present.
    pub fn histogram(&self) -> Vec<(u16, usize)> {
        let mut counts = vec![0usize; usize::from(u16::MAX) + 1];
        for &l in &self.labels {
            counts[usize::from(l)] += 1;
        }
        counts.into_iter().enumerate().filter(|&(_, n)| n > 0).map(|(l, n)| (l as u16, n)).collect()
    }
}

struct FieldReader<'a> {
    buf: &'a [u8],
    order: ByteOrder,
}

impl FieldReader<'_> {
    fn bytes<const N: usize>(&self, offset: usize) -> [u8; N] {
        let mut b = [0u8; N];
        b.copy_from_slice(&self.buf[offset..offset + N]);
        b
    }

    fn i16(&self, offset: usize) -> i16 {
        let b = self.bytes::<2>(offset);
        match self.order {
            ByteOrder::Little => i16::from_le_bytes(b),
            ByteOrder::Big => i16::from_be_bytes(b),
        }
    }

    fn f32(&self, offset: usize) -> f64 {
        let b = self.bytes::<4>(offset);
        f64::from(match self.order {
            ByteOrder::Little => f32::from_le_bytes(b),
            ByteOrder::Big => f32::from_be_bytes(b),
        })
    }
}

fn malformed(msg: impl Into<String>) -> NiftiError {
    NiftiError::MalformedHeader(msg.into())
}

/// Decodes the fixed 348-byte NIfTI-1 header at the start of `buf`.
pub fn parse_header(buf: &[u8]) -> Result<VolumeHeader> {
    if buf.len() < HEADER_SIZE {
        return Err(malformed(format!("{} bytes, need {HEADER_SIZE}", buf.len())));
    }
    let raw_size = [buf[0], buf[1], buf[2], buf[3]];
    let order = if i32::from_le_bytes(raw_size) == HEADER_SIZE as i32 {
        ByteOrder::Little
    } else if i32::from_be_bytes(raw_size) == HEADER_SIZE as i32 {
        ByteOrder::Big
    } else {
        return Err(malformed(format!(
            "sizeof_hdr is {} in either byte order, expected 348",
            i32::from_le_bytes(raw_size)
        )));
    };
    let r = FieldReader { buf, order };

    let magic: [u8; 4] = r.bytes(344);
    if &magic == MAGIC_PAIRED {
        return Err(malformed("paired .hdr/.img files (magic \"ni1\") are not supported"));
    }
    if &magic != MAGIC_SINGLE_FILE {
        return Err(malformed(format!("bad magic {magic:?}")));
    }

    let dim: Vec<i16> = (0..8).map(|i| r.i16(40 + 2 * i)).collect();
    match dim[0] {
        3 => {}
        4 if dim[4] == 1 => {}
        4 => return Err(malformed(format!("4D volume with {} time points", dim[4]))),
        rank => return Err(malformed(format!("unsupported rank {rank}"))),
    }
    if dim[1..4].iter().any(|&d| d < 1) {
        return Err(malformed(format!("non-positive dims {:?}", &dim[1..4])));
    }
    let dims = [dim[1] as usize, dim[2] as usize, dim[3] as usize];

    let pixdim_raw: Vec<f64> = (0..8).map(|i| r.f32(76 + 4 * i)).collect();
    let pixdim = [pixdim_raw[1], pixdim_raw[2], pixdim_raw[3]];
    if pixdim.iter().any(|&p| !(p.is_finite() && p > 0.0)) {
        return Err(malformed(format!("non-positive pixdim {pixdim:?}")));
    }

    let datatype_code = r.i16(70);
    let datatype = Datatype::from_code(datatype_code).ok_or(NiftiError::UnsupportedDatatype(datatype_code))?;
    let bitpix = r.i16(72);
    if bitpix as usize != 8 * datatype.bytes_per_voxel() {
        return Err(malformed(format!("bitpix {bitpix} does not match {}", datatype.name())));
    }

    let vox_offset_raw = r.f32(108);
    if !(vox_offset_raw.is_finite() && vox_offset_raw >= DATA_OFFSET as f64 && vox_offset_raw.fract() == 0.0)
        || vox_offset_raw > u32::MAX as f64
    {
        return Err(malformed(format!("vox_offset {vox_offset_raw} is not a valid data offset")));
    }

    let qform_code = r.i16(252);
    let sform_code = r.i16(254);
    let affine = if sform_code > 0 {
        let mut a = [[0.0; 4]; 4];
        for (row, base) in a.iter_mut().zip([280usize, 296, 312]) {
            for (col, v) in row.iter_mut().enumerate() {
                *v = r.f32(base + 4 * col);
            }
        }
        a[3][3] = 1.0;
        a
    } else if qform_code > 0 {
        let quat = [r.f32(256), r.f32(260), r.f32(264)];
        let offset = [r.f32(268), r.f32(272), r.f32(276)];
        quatern_to_affine(quat, offset, pixdim, pixdim_raw[0])
    } else {
        affine::diagonal(pixdim)
    };
    if !affine::is_invertible(&affine) {
        return Err(malformed("voxel-to-world affine is not invertible"));
    }

    Ok(VolumeHeader {
        dims,
        pixdim,
        datatype,
        scl_slope: r.f32(112),
        scl_inter: r.f32(116),
        vox_offset: vox_offset_raw as usize,
        qform_code,
        sform_code,
        affine,
        magic,
        byte_order: order,
    })
}

/// qform reconstruction as defined by the NIfTI-1 reference header: the
/// quaternion `(b, c, d)` with implied non-negative `a`, column scaling by
/// `pixdim`, and `qfac = pixdim[0]` flipping the third axis when negative.
fn quatern_to_affine(quat: [f64; 3], offset: [f64; 3], pixdim: [f64; 3], qfac: f64) -> Affine {
    let [mut b, mut c, mut d] = quat;
    let norm2 = b * b + c * c + d * d;
    let a = if 1.0 - norm2 < 1e-7 {
        let s = 1.0 / norm2.sqrt();
        b *= s;
        c *= s;
        d *= s;
        0.0
    } else {
        (1.0 - norm2).sqrt()
    };
    let zsign = if qfac < 0.0 { -1.0 } else { 1.0 };
    let rot = [
        [a * a + b * b - c * c - d * d, 2.0 * (b * c - a * d), 2.0 * (b * d + a * c)],
        [2.0 * (b * c + a * d), a * a + c * c - b * b - d * d, 2.0 * (c * d - a * b)],
        [2.0 * (b * d - a * c), 2.0 * (c * d + a * b), a * a + d * d - c * c - b * b],
    ];
    let scale = [pixdim[0], pixdim[1], pixdim[2] * zsign];
    let mut out = [[0.0; 4]; 4];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = rot[i][j] * scale[j];
        }
        out[i][3] = offset[i];
    }
    out[3][3] = 1.0;
    out
}

/// Reads a complete single-file NIfTI-1 stream, gunzipping it first when it
/// starts with the gzip magic bytes.
pub fn read_volume<R: Read>(stream: R) -> Result<LabelVolume> {
    read_volume_with_header(stream).map(|(_, vol)| vol)
}

/// Like [`read_volume`], also returning the parsed header.
pub fn read_volume_with_header<R: Read>(mut stream: R) -> Result<(VolumeHeader, LabelVolume)> {
    let mut raw = Vec::new();
    stream.read_to_end(&mut raw)?;
    let bytes = if raw.starts_with(&[0x1F, 0x8B]) {
        let mut out = Vec::new();
        MultiGzDecoder::new(raw.as_slice()).read_to_end(&mut out).map_err(NiftiError::Decompress)?;
        out
    } else {
        raw
    };
    decode_volume(&bytes)
}

pub fn read_volume_file(path: impl AsRef<Path>) -> Result<LabelVolume> {
    read_volume(io::BufReader::new(File::open(path)?))
}

fn decode_volume(bytes: &[u8]) -> Result<(VolumeHeader, LabelVolume)> {
    if bytes.len() < HEADER_SIZE {
        return Err(NiftiError::TruncatedData { expected: HEADER_SIZE, actual: bytes.len() });
    }
    let header = parse_header(bytes)?;
    let n = header.voxel_count().ok_or_else(|| malformed(format!("dims {:?} overflow", header.dims)))?;
    let width = header.datatype.bytes_per_voxel();
    let expected = n
        .checked_mul(width)
        .and_then(|b| b.checked_add(header.vox_offset))
        .ok_or_else(|| malformed("data size overflows"))?;
    if bytes.len() < expected {
        return Err(NiftiError::TruncatedData { expected, actual: bytes.len() });
    }
    let data = &bytes[header.vox_offset..expected];
    let labels = decode_labels(&header, data)?;
    let vol = LabelVolume::new(header.dims, header.pixdim, header.affine, labels)?;
    Ok((header, vol))
}

fn decode_labels(header: &VolumeHeader, data: &[u8]) -> Result<Vec<u16>> {
    let width = header.datatype.bytes_per_voxel();
    let scaled = header.applies_scaling();
    let big = header.byte_order == ByteOrder::Big;
    if header.datatype == Datatype::Uint8 && !scaled {
        return Ok(data.iter().map(|&b| u16::from(b)).collect());
    }
    data.chunks_exact(width)
        .enumerate()
        .map(|(index, chunk)| {
            let raw = raw_value(header.datatype, chunk, big);
            let value = if scaled { header.scl_slope * raw + header.scl_inter } else { raw };
            to_label(index, value)
        })
        .collect()
}

fn raw_value(datatype: Datatype, chunk: &[u8], big: bool) -> f64 {
    macro_rules! decode {
        ($t:ty, $n:literal) => {{
            let b: [u8; $n] = chunk.try_into().expect("chunk width");
            f64::from(if big { <$t>::from_be_bytes(b) } else { <$t>::from_le_bytes(b) })
        }};
    }
    match datatype {
        Datatype::Uint8 => f64::from(chunk[0]),
        Datatype::Int16 => decode!(i16, 2),
        Datatype::Uint16 => decode!(u16, 2),
        Datatype::Int32 => decode!(i32, 4),
        Datatype::Float32 => decode!(f32, 4),
    }
}

fn to_label(index: usize, value: f64) -> Result<u16> {
    if !value.is_finite() {
        return Err(NiftiError::NonIntegralLabel { index, value });
    }
    let rounded = value.round();
    if (value - rounded).abs() > INTEGRALITY_TOLERANCE {
        return Err(NiftiError::NonIntegralLabel { index, value });
    }
    if rounded < 0.0 {
        return Err(NiftiError::NegativeLabel { index, value });
    }
    if rounded > f64::from(u16::MAX) {
        return Err(NiftiError::LabelOverflow { index, value });
    }
    Ok(rounded as u16)
}

#[derive(Debug, Clone, Copy)]
pub struct WriteOptions {
    pub compress: bool,
    pub byte_order: ByteOrder,
}

impl Default for WriteOptions {
    fn default() -> Self {
        Self { compress: false, byte_order: ByteOrder::Little }
    }
}

/// Serializes a volume as uint8 when every label fits, uint16 otherwise.
///
/// Panics if an axis is longer than 32767 voxels, the NIfTI-1 limit.
pub fn write_volume(vol: &LabelVolume, compress: bool) -> Vec<u8> {
    write_volume_with(vol, WriteOptions { compress, ..WriteOptions::default() })
}

pub fn write_volume_with(vol: &LabelVolume, opts: WriteOptions) -> Vec<u8> {
    let datatype = if vol.max_label() <= u16::from(u8::MAX) { Datatype::Uint8 } else { Datatype::Uint16 };
    let mut out = Vec::with_capacity(DATA_OFFSET + vol.labels.len() * datatype.bytes_per_voxel());
    out.extend_from_slice(&encode_header(vol, datatype, opts.byte_order));
    out.extend_from_slice(&[0u8; DATA_OFFSET - HEADER_SIZE]);
    match datatype {
        Datatype::Uint8 => out.extend(vol.labels.iter().map(|&l| l as u8)),
        _ => {
            for &l in &vol.labels {
                out.extend_from_slice(&match opts.byte_order {
                    ByteOrder::Little => l.to_le_bytes(),
                    ByteOrder::Big => l.to_be_bytes(),
                });
            }
        }
    }
    if opts.compress {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        enc.write_all(&out).expect("writing to a Vec cannot fail");
        enc.finish().expect("writing to a Vec cannot fail")
    } else {
        out
    }
}

/// Writes `vol` to `path`, gzip-compressed when the name ends in `.gz`.
pub fn write_volume_file(path: impl AsRef<Path>, vol: &LabelVolume) -> Result<()> {
    let path = path.as_ref();
    let compress = path.extension().is_some_and(|e| e == "gz");
    std::fs::write(path, write_volume(vol, compress))?;
    Ok(())
}

struct FieldWriter {
    buf: [u8; HEADER_SIZE],
    order: ByteOrder,
}

impl FieldWriter {
    fn put(&mut self, offset: usize, le: &[u8], be: &[u8]) {
        let src = match self.order {
            ByteOrder::Little => le,
            ByteOrder::Big => be,
        };
        self.buf[offset..offset + src.len()].copy_from_slice(src);
    }

    fn i16(&mut self, offset: usize, v: i16) {
        self.put(offset, &v.to_le_bytes(), &v.to_be_bytes());
    }

    fn i32(&mut self, offset: usize, v: i32) {
        self.put(offset, &v.to_le_bytes(), &v.to_be_bytes());
    }

    fn f32(&mut self, offset: usize, v: f64) {
        let v = v as f32;
        self.put(offset, &v.to_le_bytes(), &v.to_be_bytes());
    }
}

fn encode_header(vol: &LabelVolume, datatype: Datatype, order: ByteOrder) -> [u8; HEADER_SIZE] {
    assert!(vol.dims.iter().all(|&d| d <= i16::MAX as usize), "NIfTI-1 cannot describe dims {:?}", vol.dims);
    let mut w = FieldWriter { buf: [0u8; HEADER_SIZE], order };
    w.i32(0, HEADER_SIZE as i32);
    let dims = [3, vol.dims[0] as i16, vol.dims[1] as i16, vol.dims[2] as i16, 1, 1, 1, 1];
    for (i, d) in dims.into_iter().enumerate() {
        w.i16(40 + 2 * i, d);
    }
    w.i16(70, datatype.code());
    w.i16(72, 8 * datatype.bytes_per_voxel() as i16);
    let pixdim = [1.0, vol.spacing[0], vol.spacing[1], vol.spacing[2], 1.0, 1.0, 1.0, 1.0];
    for (i, p) in pixdim.into_iter().enumerate() {
        w.f32(76 + 4 * i, p);
    }
    w.f32(108, DATA_OFFSET as f64);
    w.f32(112, 1.0);
    w.f32(116, 0.0);
    w.buf[123] = NIFTI_UNITS_MM;
    w.buf[148..148 + 4].copy_from_slice(b"koos");
    w.i16(252, 0);
    w.i16(254, SFORM_SCANNER);
    for (row, base) in vol.affine.iter().take(3).zip([280usize, 296, 312]) {
        for (col, &v) in row.iter().enumerate() {
            w.f32(base + 4 * col, v);
        }
    }
    w.buf[344..348].copy_from_slice(MAGIC_SINGLE_FILE);
    w.buf
}
