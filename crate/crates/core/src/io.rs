//! On-disk formats: Middlebury `.flo` flows, ATNS attention stacks, PNG
//! images and masks, and looping GIFs. All binary numerics are little-endian.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::fields::{BinaryMask, FlowField, Image};
use crate::maskgen::AttentionStack;

/// `.flo` header tag; the bytes spell `PIEH`.
pub const FLO_MAGIC: f32 = 202021.25;
pub const ATNS_MAGIC: &[u8; 4] = b"ATNS";
pub const ATNS_VERSION: u32 = 1;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Self { bytes, pos: 0, what }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!(
                "truncated {}: needed {n} bytes at offset {}, file has {}",
                self.what,
                self.pos,
                self.bytes.len()
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

/// Parses a Middlebury `.flo` buffer.
pub fn decode_flo(bytes: &[u8]) -> Result<FlowField> {
    let mut r = Reader::new(bytes, ".flo file");
    let magic = r.f32()?;
    if magic != FLO_MAGIC {
        return Err(Error::Format(format!(
            "bad .flo magic {magic} (expected {FLO_MAGIC})"
        )));
    }
    let width = r.u32()? as usize;
    let height = r.u32()? as usize;
    if width == 0 || height == 0 {
        return Err(Error::Format(format!("empty .flo dimensions {width}x{height}")));
    }
    let payload = width
        .checked_mul(height)
        .and_then(|p| p.checked_mul(8))
        .ok_or_else(|| Error::Format(format!("dimension overflow: {width}x{height}")))?;
    if r.remaining() < payload {
        return Err(Error::Format(format!(
            "truncated .flo payload: {width}x{height} needs {payload} bytes, found {}",
            r.remaining()
        )));
    }
    if r.remaining() > payload {
        return Err(Error::Format(format!(
            "{} trailing bytes after .flo payload",
            r.remaining() - payload
        )));
    }
    let data = r
        .take(payload)?
        .chunks_exact(8)
        .map(|c| {
            [
                f32::from_le_bytes(c[0..4].try_into().unwrap()),
                f32::from_le_bytes(c[4..8].try_into().unwrap()),
            ]
        })
        .collect();
    FlowField::new(width, height, data).map_err(|e| Error::Format(e.to_string()))
}

pub fn encode_flo(flow: &FlowField) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + flow.data().len() * 8);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(flow.width() as u32).to_le_bytes());
    out.extend_from_slice(&(flow.height() as u32).to_le_bytes());
    for v in flow.data() {
        out.extend_from_slice(&v[0].to_le_bytes());
        out.extend_from_slice(&v[1].to_le_bytes());
    }
    out
}

pub fn read_flo(path: impl AsRef<Path>) -> Result<FlowField> {
    decode_flo(&fs::read(path)?)
}

pub fn write_flo(flow: &FlowField, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_flo(flow))?;
    Ok(())
}

/// Parses an ATNS attention-stack buffer.
pub fn decode_atns(bytes: &[u8]) -> Result<AttentionStack> {
    let mut r = Reader::new(bytes, "ATNS file");
    let magic = r.take(4)?;
    if magic != ATNS_MAGIC {
        return Err(Error::Format(format!("bad ATNS magic {magic:?}")));
    }
    let version = r.u32()?;
    if version != ATNS_VERSION {
        return Err(Error::Format(format!("unsupported ATNS version {version}")));
    }
    let count = r.u32()? as usize;
    let grid_h = r.u32()? as usize;
    let grid_w = r.u32()? as usize;
    if count == 0 {
        return Err(Error::Format("empty stack".into()));
    }
    let tokens = grid_h
        .checked_mul(grid_w)
        .ok_or_else(|| Error::Format("ATNS grid overflows".into()))?;
    let map_len = tokens
        .checked_mul(tokens)
        .ok_or_else(|| Error::Format("ATNS map size overflows".into()))?;
    let record = map_len
        .checked_mul(4)
        .and_then(|b| b.checked_add(4))
        .ok_or_else(|| Error::Format("ATNS record size overflows".into()))?;
    let payload = record
        .checked_mul(count)
        .ok_or_else(|| Error::Format("ATNS payload size overflows".into()))?;
    if r.remaining() < payload {
        return Err(Error::Format(format!(
            "truncated ATNS payload: header declares {payload} bytes, found {}",
            r.remaining()
        )));
    }
    if r.remaining() > payload {
        return Err(Error::Format(format!(
            "ATNS size mismatch: {} trailing bytes",
            r.remaining() - payload
        )));
    }
    let mut ids = Vec::with_capacity(count);
    let mut maps = Vec::with_capacity(count);
    for _ in 0..count {
        ids.push(r.u32()?);
        let map: Vec<f32> = r
            .take(map_len * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(bad) = map.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::Format(format!(
                "ATNS map for step {} has invalid entry {bad}",
                ids.last().unwrap()
            )));
        }
        maps.push(map);
    }
    AttentionStack::new(grid_h, grid_w, ids, maps).map_err(|e| Error::Format(e.to_string()))
}

pub fn encode_atns(stack: &AttentionStack) -> Vec<u8> {
    let map_len = stack.tokens() * stack.tokens();
    let mut out = Vec::with_capacity(20 + stack.len() * (4 + map_len * 4));
    out.extend_from_slice(ATNS_MAGIC);
    out.extend_from_slice(&ATNS_VERSION.to_le_bytes());
    out.extend_from_slice(&(stack.len() as u32).to_le_bytes());
    out.extend_from_slice(&(stack.grid_h() as u32).to_le_bytes());
    out.extend_from_slice(&(stack.grid_w() as u32).to_le_bytes());
    for (id, map) in stack.timestep_ids().iter().zip(stack.maps()) {
        out.extend_from_slice(&id.to_le_bytes());
        for v in map {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn read_atns(path: impl AsRef<Path>) -> Result<AttentionStack> {
    decode_atns(&fs::read(path)?)
}

pub fn write_atns(stack: &AttentionStack, path: impl AsRef<Path>) -> Result<()> {
    if stack.is_empty() {
        return Err(Error::InvalidInput("empty stack".into()));
    }
    fs::write(path, encode_atns(stack))?;
    Ok(())
}

/// Loads an image, keeping gray as one channel and alpha as a fourth.
pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    use image::ColorType::*;
    match img.color() {
        L8 | L16 => Image::from_u8(w, h, 1, img.to_luma8().as_raw()),
        La8 | La16 | Rgba8 | Rgba16 | Rgba32F => Image::from_u8(w, h, 4, img.to_rgba8().as_raw()),
        _ => Image::from_u8(w, h, 3, img.to_rgb8().as_raw()),
    }
}

/// Writes an 8-bit PNG with the image's channel layout.
pub fn write_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let color = match img.channels() {
        1 => image::ExtendedColorType::L8,
        3 => image::ExtendedColorType::Rgb8,
        _ => image::ExtendedColorType::Rgba8,
    };
    image::save_buffer_with_format(
        path,
        &img.to_u8(),
        img.width() as u32,
        img.height() as u32,
        color,
        image::ImageFormat::Png,
    )?;
    Ok(())
}

/// Reads a mask from a grayscale PNG; values `>= 128` are set.
pub fn read_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let img = image::open(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    BinaryMask::new(w, h, img.as_raw().iter().map(|&v| v >= 128).collect())
}

pub fn write_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    let bytes: Vec<u8> = mask.data().iter().map(|&b| if b { 255 } else { 0 }).collect();
    image::save_buffer_with_format(
        path,
        &bytes,
        mask.width() as u32,
        mask.height() as u32,
        image::ExtendedColorType::L8,
        image::ImageFormat::Png,
    )?;
    Ok(())
}

pub(crate) fn to_rgb8(img: &Image) -> Vec<u8> {
    let bytes = img.to_u8();
    match img.channels() {
        1 => bytes.iter().flat_map(|&v| [v, v, v]).collect(),
        3 => bytes,
        _ => bytes.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
    }
}
