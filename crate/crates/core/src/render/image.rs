//! Rendered images, image-space comparisons, and PPM/PFM files.
//!
//! PPM: `P6\n{w} {h}\n255\n` then 8-bit RGB rows top to bottom.
//! PFM: `PF\n` (colour) or `Pf\n` (single channel), `{w} {h}\n-1.0\n`, then
//! little-endian f32 rows bottom to top.

use std::io::{BufRead, BufReader, Read, Write};

use crate::error::{Result, SlatError};
use crate::tensor::DenseTensor;

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedImage {
    pub width: u32,
    pub height: u32,
    /// Composited over the background, row-major from the top-left pixel.
    pub rgb: Vec<[f64; 3]>,
    pub alpha: Vec<f64>,
    /// View-axis depth, `f64::INFINITY` where nothing was hit.
    pub depth: Option<Vec<f64>>,
    /// Shading normals (interpolated attributes).
    pub normal: Option<Vec<[f64; 3]>>,
    /// Face normals of the visible geometry.
    pub geo_normal: Option<Vec<[f64; 3]>>,
}

impl RenderedImage {
    pub fn blank(width: u32, height: u32, bg: [f64; 3]) -> Self {
        let n = width as usize * height as usize;
        Self { width, height, rgb: vec![bg; n], alpha: vec![0.0; n], depth: None, normal: None, geo_normal: None }
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn index(&self, col: u32, row: u32) -> usize {
        row as usize * self.width as usize + col as usize
    }

    fn same_dims(&self, other: &Self) -> Result<()> {
        if (self.width, self.height) != (other.width, other.height) {
            return Err(SlatError::Shape(format!(
                "image {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    /// All planes stacked as `[height, width, channels]`: rgb, alpha, then
    /// depth, normal, and face normal when present.
    pub fn planes(&self) -> DenseTensor {
        let mut c = 4;
        c += self.depth.is_some() as usize + 3 * self.normal.is_some() as usize + 3 * self.geo_normal.is_some() as usize;
        let mut data = Vec::with_capacity(self.pixel_count() * c);
        for i in 0..self.pixel_count() {
            data.extend_from_slice(&self.rgb[i]);
            data.push(self.alpha[i]);
            if let Some(d) = &self.depth {
                data.push(d[i]);
            }
            if let Some(n) = &self.normal {
                data.extend_from_slice(&n[i]);
            }
            if let Some(n) = &self.geo_normal {
                data.extend_from_slice(&n[i]);
            }
        }
        DenseTensor { dims: vec![self.height as usize, self.width as usize, c], data }
    }
}

/// Mean absolute difference over RGB.
pub fn image_l1(a: &RenderedImage, b: &RenderedImage) -> Result<f64> {
    a.same_dims(b)?;
    let s: f64 = a.rgb.iter().zip(&b.rgb).flat_map(|(x, y)| (0..3).map(move |k| (x[k] - y[k]).abs())).sum();
    Ok(s / (3 * a.pixel_count()) as f64)
}

pub fn image_mse(a: &RenderedImage, b: &RenderedImage) -> Result<f64> {
    a.same_dims(b)?;
    let s: f64 = a.rgb.iter().zip(&b.rgb).flat_map(|(x, y)| (0..3).map(move |k| (x[k] - y[k]).powi(2))).sum();
    Ok(s / (3 * a.pixel_count()) as f64)
}

/// `-10 log10(MSE)` for intensities in `[0, 1]`; identical images give
/// `f64::INFINITY`.
pub fn image_psnr(a: &RenderedImage, b: &RenderedImage) -> Result<f64> {
    let mse = image_mse(a, b)?;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Normalized 1-D Gaussian taps of the SSIM window.
pub fn ssim_taps() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut t = [0.0; SSIM_WINDOW];
    for (i, v) in t.iter_mut().enumerate() {
        let d = i as f64 - r;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = t.iter().sum();
    t.map(|v| v / s)
}

/// Separable Gaussian blur with zero padding.
fn blur(x: &[f64], w: usize, h: usize, taps: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let mut tmp = vec![0.0; x.len()];
    for row in 0..h {
        for col in 0..w {
            let mut s = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let c = col as isize + k as isize - r;
                if c >= 0 && (c as usize) < w {
                    s += t * x[row * w + c as usize];
                }
            }
            tmp[row * w + col] = s;
        }
    }
    let mut out = vec![0.0; x.len()];
    for row in 0..h {
        for col in 0..w {
            let mut s = 0.0;
            for (k, t) in taps.iter().enumerate() {
                let rr = row as isize + k as isize - r;
                if rr >= 0 && (rr as usize) < h {
                    s += t * tmp[rr as usize * w + col];
                }
            }
            out[row * w + col] = s;
        }
    }
    out
}

/// Mean SSIM over pixels and RGB channels.
pub fn image_ssim(a: &RenderedImage, b: &RenderedImage) -> Result<f64> {
    a.same_dims(b)?;
    let (w, h) = (a.width as usize, a.height as usize);
    let taps = ssim_taps();
    let mut total = 0.0;
    for c in 0..3 {
        let x: Vec<f64> = a.rgb.iter().map(|p| p[c]).collect();
        let y: Vec<f64> = b.rgb.iter().map(|p| p[c]).collect();
        let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
        let mx = blur(&x, w, h, &taps);
        let my = blur(&y, w, h, &taps);
        let sxx = blur(&prod(&x, &x), w, h, &taps);
        let syy = blur(&prod(&y, &y), w, h, &taps);
        let sxy = blur(&prod(&x, &y), w, h, &taps);
        for i in 0..w * h {
            let vx = sxx[i] - mx[i] * mx[i];
            let vy = syy[i] - my[i] * my[i];
            let cxy = sxy[i] - mx[i] * my[i];
            total += ((2.0 * mx[i] * my[i] + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                / ((mx[i] * mx[i] + my[i] * my[i] + SSIM_C1) * (vx + vy + SSIM_C2));
        }
    }
    Ok(total / (3 * w * h) as f64)
}

pub fn write_ppm(img: &RenderedImage, mut w: impl Write) -> Result<()> {
    write!(w, "P6\n{} {}\n255\n", img.width, img.height)?;
    let bytes: Vec<u8> = img.rgb.iter().flatten().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    w.write_all(&bytes)?;
    Ok(())
}

fn header_tokens(r: &mut impl BufRead, n: usize) -> Result<Vec<String>> {
    let mut toks = Vec::new();
    while toks.len() < n {
        let mut line = String::new();
        if r.read_line(&mut line)? == 0 {
            return Err(SlatError::Format("truncated image header".into()));
        }
        let line = line.split('#').next().unwrap_or("");
        toks.extend(line.split_whitespace().map(str::to_string));
    }
    Ok(toks)
}

fn dims(toks: &[String]) -> Result<(usize, usize)> {
    let p = |s: &str| s.parse::<usize>().map_err(|_| SlatError::Format(format!("bad image size '{s}'")));
    Ok((p(&toks[1])?, p(&toks[2])?))
}

/// Reads an 8-bit binary PPM as `(width, height, rgb)`.
pub fn read_ppm(r: impl Read) -> Result<(u32, u32, Vec<[f64; 3]>)> {
    let mut r = BufReader::new(r);
    let toks = header_tokens(&mut r, 4)?;
    if toks[0] != "P6" || toks[3] != "255" {
        return Err(SlatError::Format("expected an 8-bit P6 image".into()));
    }
    let (w, h) = dims(&toks)?;
    let mut buf = vec![0u8; w * h * 3];
    r.read_exact(&mut buf)?;
    let rgb = buf.chunks(3).map(|c| [0, 1, 2].map(|k| c[k] as f64 / 255.0)).collect();
    Ok((w as u32, h as u32, rgb))
}

/// Writes `channels` (1 or 3) values per pixel, rows given top to bottom.
pub fn write_pfm(width: u32, height: u32, channels: usize, data: &[f64], mut w: impl Write) -> Result<()> {
    let tag = match channels {
        1 => "Pf",
        3 => "PF",
        _ => return Err(SlatError::Shape(format!("PFM holds 1 or 3 channels, not {channels}"))),
    };
    let (wu, hu) = (width as usize, height as usize);
    if data.len() != wu * hu * channels {
        return Err(SlatError::Shape(format!("{} values for a {width}x{height}x{channels} image", data.len())));
    }
    write!(w, "{tag}\n{width} {height}\n-1.0\n")?;
    let mut buf = Vec::with_capacity(data.len() * 4);
    for row in (0..hu).rev() {
        for v in &data[row * wu * channels..(row + 1) * wu * channels] {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Reads a PFM as `(width, height, channels, data)` with rows top to bottom.
pub fn read_pfm(r: impl Read) -> Result<(u32, u32, usize, Vec<f64>)> {
    let mut r = BufReader::new(r);
    let toks = header_tokens(&mut r, 4)?;
    let channels = match toks[0].as_str() {
        "Pf" => 1,
        "PF" => 3,
        t => return Err(SlatError::Format(format!("unknown PFM tag '{t}'"))),
    };
    let (w, h) = dims(&toks)?;
    let scale: f64 = toks[3].parse().map_err(|_| SlatError::Format("bad PFM scale".into()))?;
    let mut buf = vec![0u8; w * h * channels * 4];
    r.read_exact(&mut buf)?;
    let vals: Vec<f64> = buf
        .chunks(4)
        .map(|b| {
            let a = [b[0], b[1], b[2], b[3]];
            (if scale < 0.0 { f32::from_le_bytes(a) } else { f32::from_be_bytes(a) }) as f64
        })
        .collect();
    let rs = w * channels;
    let data = (0..h).rev().flat_map(|row| vals[row * rs..(row + 1) * rs].to_vec()).collect();
    Ok((w as u32, h as u32, channels, data))
}
