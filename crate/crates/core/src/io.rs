//! File formats: PNG frames and label maps, little-endian PFM depth, pose
//! CSV and JSON helpers.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use nalgebra::{Matrix3, Vector3};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::geometry::{DepthMap, Frame, PoseSE3};
use crate::semantics::LabelMap;
use crate::{Error, Result};

pub(crate) fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn encode_png<P, C>(img: &ImageBuffer<P, C>) -> Result<Vec<u8>>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    let mut out = std::io::Cursor::new(Vec::new());
    img.write_to(&mut out, image::ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn write_rgb_png(path: &Path, width: usize, height: usize, pixels: &[[u8; 3]]) -> Result<()> {
    let img = RgbImage::from_fn(width as u32, height as u32, |x, y| Rgb(pixels[y as usize * width + x as usize]));
    write_bytes(path, &encode_png(&img)?)
}

pub fn write_gray_png(path: &Path, width: usize, height: usize, values: &[u8]) -> Result<()> {
    let img = GrayImage::from_fn(width as u32, height as u32, |x, y| Luma([values[y as usize * width + x as usize]]));
    write_bytes(path, &encode_png(&img)?)
}

/// 8-bit RGB PNG; channels are quantized to the nearest of 256 levels.
pub fn write_frame(path: &Path, frame: &Frame) -> Result<()> {
    let px: Vec<[u8; 3]> = frame.pixels.iter().map(|p| p.map(to_u8)).collect();
    write_rgb_png(path, frame.width, frame.height, &px)
}

pub fn read_frame(path: &Path, timestamp_index: usize) -> Result<Frame> {
    let img = image::load_from_memory(&read_bytes(path)?)
        .map_err(|e| Error::format(path, e.to_string()))?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let pixels = img.pixels().map(|p| p.0.map(|c| c as f64 / 255.0)).collect();
    Frame::new(w, h, pixels, timestamp_index)
}

/// Labels as an 8-bit grayscale PNG of class ids.
pub fn write_labels(path: &Path, labels: &LabelMap) -> Result<()> {
    write_gray_png(path, labels.width, labels.height, &labels.labels)
}

pub fn read_labels(path: &Path) -> Result<LabelMap> {
    let img = image::load_from_memory(&read_bytes(path)?)
        .map_err(|e| Error::format(path, e.to_string()))?;
    if img.color() != image::ColorType::L8 {
        return Err(Error::format(path, format!("expected 8-bit grayscale labels, got {:?}", img.color())));
    }
    let img = img.to_luma8();
    LabelMap::new(img.width() as usize, img.height() as usize, img.into_raw())
}

/// Single-channel little-endian PFM; invalid pixels are stored as 0.
pub fn pfm_bytes(depth: &DepthMap) -> Vec<u8> {
    let mut out = format!("Pf\n{} {}\n-1.0\n", depth.width, depth.height).into_bytes();
    // PFM rows run bottom to top
    for y in (0..depth.height).rev() {
        for x in 0..depth.width {
            let i = y * depth.width + x;
            let v = if depth.valid[i] { depth.values[i] as f32 } else { 0.0 };
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_pfm(path: &Path, depth: &DepthMap) -> Result<()> {
    write_bytes(path, &pfm_bytes(depth))
}

pub fn parse_pfm(path: &Path, bytes: &[u8]) -> Result<DepthMap> {
    let bad = |d: &str| Error::format(path, d.to_string());
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ascii header"))?);
    }
    // exactly one whitespace byte separates the header from the data
    pos += 1;
    if fields[0] != "Pf" {
        return Err(bad("only single-channel `Pf` files are supported"));
    }
    let w: usize = fields[1].parse().map_err(|_| bad("bad width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("bad height"))?;
    let scale: f64 = fields[3].parse().map_err(|_| bad("bad scale"))?;
    let data = bytes.get(pos..).unwrap_or_default();
    if data.len() != 4 * w * h {
        return Err(bad(&format!("expected {} data bytes, found {}", 4 * w * h, data.len())));
    }
    let mut depth = DepthMap::empty(w, h);
    for (k, chunk) in data.chunks_exact(4).enumerate() {
        let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if scale < 0.0 { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) } as f64;
        let (x, row) = (k % w, k / w);
        let i = (h - 1 - row) * w + x;
        if v > 0.0 && v.is_finite() {
            depth.set(i, v);
        }
    }
    Ok(depth)
}

pub fn read_pfm(path: &Path) -> Result<DepthMap> {
    parse_pfm(path, &read_bytes(path)?)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    s.push('\n');
    write_bytes(path, s.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_slice(&read_bytes(path)?).map_err(|e| Error::format(path, e.to_string()))
}

pub const TRAJECTORY_HEADER: &str = "frame,r00,r01,r02,r10,r11,r12,r20,r21,r22,tx,ty,tz";

/// One camera-to-world pose per row.
pub fn write_trajectory(path: &Path, camera_to_world: &[PoseSE3]) -> Result<()> {
    let mut out = BufWriter::new(Vec::new());
    let io = |e| Error::io(path, e);
    writeln!(out, "{TRAJECTORY_HEADER}").map_err(io)?;
    for (i, p) in camera_to_world.iter().enumerate() {
        let r = &p.rotation;
        let t = &p.translation;
        write!(out, "{i}").map_err(io)?;
        for v in [r[(0, 0)], r[(0, 1)], r[(0, 2)], r[(1, 0)], r[(1, 1)], r[(1, 2)], r[(2, 0)], r[(2, 1)], r[(2, 2)]] {
            write!(out, ",{v:e}").map_err(io)?;
        }
        writeln!(out, ",{:e},{:e},{:e}", t.x, t.y, t.z).map_err(io)?;
    }
    write_bytes(path, &out.into_inner().map_err(|e| Error::io(path, e.into_error()))?)
}

pub fn read_trajectory(path: &Path) -> Result<Vec<PoseSE3>> {
    let text = String::from_utf8(read_bytes(path)?).map_err(|_| Error::format(path, "not utf-8"))?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(TRAJECTORY_HEADER) {
        return Err(Error::format(path, "missing trajectory header"));
    }
    let mut poses = Vec::new();
    for (row, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
        let v: Vec<f64> = line
            .split(',')
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format(path, format!("row {row}: {e}")))?;
        if v.len() != 13 || v[0] as usize != row {
            return Err(Error::format(path, format!("row {row}: expected frame {row} and 12 values")));
        }
        let r = Matrix3::new(v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8], v[9]);
        let pose = PoseSE3::new(r, Vector3::new(v[10], v[11], v[12]))
            .map_err(|e| Error::format(path, format!("row {row}: {e}")))?;
        poses.push(pose);
    }
    Ok(poses)
}
