use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use image::{GrayImage, RgbImage};

use crate::error::{Error, Result};
use crate::raster::Raster;

/// Rounds each sample to the nearest of 256 levels in `[0, 1]`.
pub fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn dequantize_u8(v: u8) -> f64 {
    v as f64 / 255.0
}

/// Writes a 1- or 3-channel raster as an 8-bit PNG.
pub fn write_png(path: &Path, raster: &Raster) -> Result<()> {
    let (w, h) = (raster.width as u32, raster.height as u32);
    let bytes: Vec<u8> = raster.data.iter().map(|&v| quantize_u8(v)).collect();
    let res = match raster.channels {
        1 => GrayImage::from_raw(w, h, bytes).map(|img| img.save(path)),
        3 => RgbImage::from_raw(w, h, bytes).map(|img| img.save(path)),
        c => return Err(Error::shape("write_png channels", &[3], &[c])),
    };
    res.expect("buffer sized from raster").map_err(|e| Error::io(path, e))
}

/// Reads an 8-bit PNG into a raster with `channels` ∈ {1, 3}.
pub fn read_png(path: &Path, channels: usize) -> Result<Raster> {
    let img = image::open(path).map_err(|e| Error::io(path, e))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let bytes = match channels {
        1 => img.to_luma8().into_raw(),
        3 => img.to_rgb8().into_raw(),
        c => return Err(Error::shape("read_png channels", &[3], &[c])),
    };
    Raster::new(w, h, channels, bytes.into_iter().map(dequantize_u8).collect())
}

/// Single-channel little-endian PFM, rows stored bottom-up.
pub fn encode_pfm(raster: &Raster) -> Result<Vec<u8>> {
    if raster.channels != 1 {
        return Err(Error::shape("encode_pfm channels", &[1], &[raster.channels]));
    }
    let mut out = format!("Pf\n{} {}\n-1.0\n", raster.width, raster.height).into_bytes();
    for y in (0..raster.height).rev() {
        for x in 0..raster.width {
            out.extend_from_slice(&(raster.pixel(x, y)[0] as f32).to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_pfm(bytes: &[u8]) -> Result<Raster> {
    let bad = |msg: &str| Error::io("<pfm>", msg);
    let mut reader = BufReader::new(bytes);
    let mut line = String::new();
    let mut next_line = |reader: &mut BufReader<&[u8]>| -> Result<String> {
        line.clear();
        reader.read_line(&mut line).map_err(|e| bad(&e.to_string()))?;
        Ok(line.trim().to_string())
    };
    if next_line(&mut reader)? != "Pf" {
        return Err(bad("not a single-channel PFM"));
    }
    let dims = next_line(&mut reader)?;
    let mut it = dims.split_whitespace().map(str::parse::<usize>);
    let (Some(Ok(w)), Some(Ok(h)), None) = (it.next(), it.next(), it.next()) else {
        return Err(bad("malformed PFM size line"));
    };
    let scale: f64 = next_line(&mut reader)?.parse().map_err(|_| bad("malformed PFM scale"))?;
    let little = scale < 0.0;
    let mut payload = Vec::new();
    reader.read_to_end(&mut payload).map_err(|e| bad(&e.to_string()))?;
    if payload.len() != 4 * w * h {
        return Err(bad("PFM payload length does not match its size"));
    }
    let mut out = Raster::zeros(w, h, 1);
    for (k, chunk) in payload.chunks_exact(4).enumerate() {
        let b: [u8; 4] = chunk.try_into().expect("chunks of four");
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (x, y) = (k % w, h - 1 - k / w);
        out.pixel_mut(x, y)[0] = v as f64;
    }
    Ok(out)
}

pub fn write_pfm(path: &Path, raster: &Raster) -> Result<()> {
    let bytes = encode_pfm(raster)?;
    fs::File::create(path)
        .and_then(|mut f| f.write_all(&bytes))
        .map_err(|e| Error::io(path, e))
}

pub fn read_pfm(path: &Path) -> Result<Raster> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pfm(&bytes).map_err(|e| match e {
        Error::IoFailure { message, .. } => Error::io(path, message),
        other => other,
    })
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::io(path, e))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::io(path, e))
}
