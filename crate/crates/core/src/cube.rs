//! Bit-packed binary frame sequences and the `.pcube` container.
//!
//! Frames are stored frame-major, row-major, eight pixels per byte with the
//! most significant bit first. Each row starts on a byte boundary.
//!
//! The file layout is a 32-byte little-endian header followed by the packed
//! frames:
//!
//! | offset | type  | field                |
//! |--------|-------|----------------------|
//! | 0      | [u8;4]| magic `PCUB`         |
//! | 4      | u32   | version (1)          |
//! | 8      | u32   | width                |
//! | 12     | u32   | height               |
//! | 16     | u64   | number of frames     |
//! | 24     | f64   | frame exposure (s)   |

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::FractionImage;
use crate::scalar::Real;

pub const MAGIC: [u8; 4] = *b"PCUB";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 32;

#[inline]
pub fn row_bytes(width: usize) -> usize {
    width.div_ceil(8)
}

/// Immutable sequence of binary frames with a common exposure time.
#[derive(Clone, PartialEq)]
pub struct PhotonCube {
    width: usize,
    height: usize,
    num_frames: usize,
    tau: f64,
    data: Vec<u8>,
}

impl std::fmt::Debug for PhotonCube {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PhotonCube")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("num_frames", &self.num_frames)
            .field("tau", &self.tau)
            .finish()
    }
}

impl PhotonCube {
    /// Wraps already packed frame data.
    pub fn from_packed(
        width: usize,
        height: usize,
        num_frames: usize,
        tau: f64,
        data: Vec<u8>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::arg("cube dimensions must be nonzero"));
        }
        if num_frames == 0 {
            return Err(Error::arg("cube needs at least one frame"));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::arg(format!("frame exposure must be positive, got {tau}")));
        }
        let expected = num_frames * height * row_bytes(width);
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                expected: expected as u64,
                found: data.len() as u64,
            });
        }
        let mut cube = Self {
            width,
            height,
            num_frames,
            tau,
            data,
        };
        cube.clear_padding();
        Ok(cube)
    }

    /// Packs frames given as one byte per pixel (nonzero means a detection).
    pub fn from_frames<'a, I>(width: usize, height: usize, tau: f64, frames: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [u8]>,
    {
        let mut data = Vec::new();
        let mut n = 0;
        for frame in frames {
            if frame.len() != width * height {
                return Err(Error::arg(format!(
                    "frame {n} has {} pixels, expected {}",
                    frame.len(),
                    width * height
                )));
            }
            data.extend(pack_frame(width, height, frame));
            n += 1;
        }
        Self::from_packed(width, height, n, tau, data)
    }

    fn clear_padding(&mut self) {
        let pad = row_bytes(self.width) * 8 - self.width;
        if pad == 0 {
            return;
        }
        let mask = !((1u8 << pad) - 1);
        let rb = row_bytes(self.width);
        for row in self.data.chunks_exact_mut(rb) {
            row[rb - 1] &= mask;
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_frames(&self) -> usize {
        self.num_frames
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn packed(&self) -> &[u8] {
        &self.data
    }

    pub fn frame_bytes(&self) -> usize {
        self.height * row_bytes(self.width)
    }

    pub fn frame(&self, index: usize) -> BinaryFrame<'_> {
        assert!(index < self.num_frames, "frame {index} out of range");
        let fb = self.frame_bytes();
        BinaryFrame {
            width: self.width,
            height: self.height,
            bits: &self.data[index * fb..(index + 1) * fb],
        }
    }

    pub fn pixel(&self, frame: usize, x: usize, y: usize) -> u8 {
        self.frame(frame).get(x, y)
    }

    /// Per-pixel mean of the selected frames.
    pub fn mean_frame<T: Real>(&self, indices: &[usize]) -> Result<FractionImage<T>> {
        if indices.is_empty() {
            return Err(Error::arg("mean_frame needs at least one frame index"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.num_frames) {
            return Err(Error::arg(format!(
                "frame index {bad} outside [0, {})",
                self.num_frames
            )));
        }
        let counts = self.count_frames(indices);
        let n = T::from_usize_lossy(indices.len());
        Ok(FractionImage::new(
            self.width,
            self.height,
            counts.into_iter().map(|c| T::lit(c as f64) / n).collect(),
        ))
    }

    /// Per-pixel detection counts over the selected frames.
    pub fn count_frames(&self, indices: &[usize]) -> Vec<u32> {
        let rb = row_bytes(self.width);
        let mut counts = vec![0u32; self.width * self.height];
        for &i in indices {
            let frame = self.frame(i);
            for y in 0..self.height {
                let row = &frame.bits[y * rb..(y + 1) * rb];
                let out = &mut counts[y * self.width..(y + 1) * self.width];
                for (bx, &byte) in row.iter().enumerate() {
                    if byte == 0 {
                        continue;
                    }
                    let base = bx * 8;
                    for bit in 0..8 {
                        let x = base + bit;
                        if x < self.width {
                            out[x] += ((byte >> (7 - bit)) & 1) as u32;
                        }
                    }
                }
            }
        }
        counts
    }

    pub fn write_to<W: Write>(&self, mut sink: W) -> Result<()> {
        sink.write_all(&self.header_bytes())?;
        sink.write_all(&self.data)?;
        sink.flush()?;
        Ok(())
    }

    pub fn header_bytes(&self) -> [u8; HEADER_LEN] {
        let mut h = [0u8; HEADER_LEN];
        h[0..4].copy_from_slice(&MAGIC);
        h[4..8].copy_from_slice(&VERSION.to_le_bytes());
        h[8..12].copy_from_slice(&(self.width as u32).to_le_bytes());
        h[12..16].copy_from_slice(&(self.height as u32).to_le_bytes());
        h[16..24].copy_from_slice(&(self.num_frames as u64).to_le_bytes());
        h[24..32].copy_from_slice(&self.tau.to_le_bytes());
        h
    }

    pub fn read_from<R: Read>(mut source: R) -> Result<Self> {
        let header = read_header(&mut source)?;
        let expected = header.data_len();
        let mut data = Vec::with_capacity(expected as usize);
        source.read_to_end(&mut data)?;
        if data.len() as u64 != expected {
            return Err(Error::LengthMismatch {
                expected,
                found: data.len() as u64,
            });
        }
        Self::from_packed(
            header.width as usize,
            header.height as usize,
            header.num_frames as usize,
            header.tau,
            data,
        )
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(file))
    }

    /// Builds a cube from a directory of grayscale PGM/PBM frames, taken in
    /// lexicographic file-name order. Any nonzero pixel counts as a detection.
    pub fn from_pgm_dir(dir: impl AsRef<Path>, tau: f64) -> Result<Self> {
        let mut paths: Vec<_> = fs::read_dir(dir.as_ref())?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                matches!(
                    p.extension().and_then(|e| e.to_str()),
                    Some("pgm" | "pbm" | "PGM" | "PBM")
                )
            })
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(Error::Format(format!(
                "no PGM frames in {}",
                dir.as_ref().display()
            )));
        }
        let mut dims = None;
        let mut data = Vec::new();
        for p in &paths {
            let img = ::image::open(p)?.into_luma8();
            let (w, h) = (img.width() as usize, img.height() as usize);
            match dims {
                None => dims = Some((w, h)),
                Some(d) if d != (w, h) => {
                    return Err(Error::Format(format!(
                        "{} is {w}x{h}, expected {}x{}",
                        p.display(),
                        d.0,
                        d.1
                    )))
                }
                _ => {}
            }
            data.extend(pack_frame(w, h, img.as_raw()));
        }
        let (w, h) = dims.unwrap();
        Self::from_packed(w, h, paths.len(), tau, data)
    }
}

/// Parsed `.pcube` header.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubeHeader {
    pub version: u32,
    pub width: u32,
    pub height: u32,
    pub num_frames: u64,
    pub tau: f64,
}

impl CubeHeader {
    pub fn data_len(&self) -> u64 {
        self.num_frames * self.height as u64 * row_bytes(self.width as usize) as u64
    }
}

pub fn read_header<R: Read>(source: &mut R) -> Result<CubeHeader> {
    let mut h = [0u8; HEADER_LEN];
    source.read_exact(&mut h).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("truncated header".into()),
        _ => Error::Io(e),
    })?;
    if h[0..4] != MAGIC {
        return Err(Error::Format(format!("bad magic {:02x?}", &h[0..4])));
    }
    let u32_at = |o: usize| u32::from_le_bytes(h[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let header = CubeHeader {
        version,
        width: u32_at(8),
        height: u32_at(12),
        num_frames: u64::from_le_bytes(h[16..24].try_into().unwrap()),
        tau: f64::from_le_bytes(h[24..32].try_into().unwrap()),
    };
    if header.width == 0 || header.height == 0 || header.num_frames == 0 {
        return Err(Error::Format("header declares an empty cube".into()));
    }
    if !(header.tau > 0.0 && header.tau.is_finite()) {
        return Err(Error::Format(format!("header exposure {} invalid", header.tau)));
    }
    Ok(header)
}

/// Packs one frame of byte-per-pixel data, MSB first, rows byte aligned.
pub fn pack_frame(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let rb = row_bytes(width);
    let mut out = vec![0u8; rb * height];
    for y in 0..height {
        for x in 0..width {
            if pixels[y * width + x] != 0 {
                out[y * rb + x / 8] |= 0x80 >> (x % 8);
            }
        }
    }
    out
}

/// Borrowed view of one packed binary frame.
#[derive(Debug, Clone, Copy)]
pub struct BinaryFrame<'a> {
    pub width: usize,
    pub height: usize,
    bits: &'a [u8],
}

impl<'a> BinaryFrame<'a> {
    #[inline(always)]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        let byte = self.bits[y * row_bytes(self.width) + (x >> 3)];
        (byte >> (7 - (x & 7))) & 1
    }

    pub fn packed(&self) -> &'a [u8] {
        self.bits
    }

    /// One byte (0 or 1) per pixel.
    pub fn unpack(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.width * self.height);
        for y in 0..self.height {
            for x in 0..self.width {
                out.push(self.get(x, y));
            }
        }
        out
    }
}
