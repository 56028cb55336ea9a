//! Colorfulness (Hasler & Süsstrunk), PSNR and single-scale SSIM.

use std::path::Path;

use serde::{Deserialize, Serialize, Serializer};

use crate::color::RgbImage;
use crate::error::{Error, Result};
use crate::io;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const PEAK: f64 = 255.0;

/// `sqrt(var_rg + var_yb) + 0.3 * sqrt(mean_rg^2 + mean_yb^2)`, population statistics.
pub fn colorfulness(img: &RgbImage) -> f64 {
    let n = (img.width() * img.height()) as f64;
    let (mut s_rg, mut s_yb, mut q_rg, mut q_yb) = (0.0, 0.0, 0.0, 0.0);
    for [r, g, b] in img.pixels() {
        let (r, g, b) = (f64::from(r), f64::from(g), f64::from(b));
        let rg = r - g;
        let yb = 0.5 * (r + g) - b;
        s_rg += rg;
        s_yb += yb;
        q_rg += rg * rg;
        q_yb += yb * yb;
    }
    let (m_rg, m_yb) = (s_rg / n, s_yb / n);
    let var_rg = (q_rg / n - m_rg * m_rg).max(0.0);
    let var_yb = (q_yb / n - m_yb * m_yb).max(0.0);
    (var_rg + var_yb).sqrt() + 0.3 * (m_rg * m_rg + m_yb * m_yb).sqrt()
}

/// Peak signal-to-noise ratio over all channels; `f64::INFINITY` for identical images.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    Error::check_dims(a.dims(), b.dims())?;
    let sse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum();
    if sse == 0.0 {
        return Ok(f64::INFINITY);
    }
    let mse = sse / a.data().len() as f64;
    Ok(10.0 * (PEAK * PEAK / mse).log10())
}

fn luma(img: &RgbImage) -> Vec<f64> {
    img.pixels()
        .map(|[r, g, b]| 0.299 * f64::from(r) + 0.587 * f64::from(g) + 0.114 * f64::from(b))
        .collect()
}

fn ssim_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let g: Vec<f64> = (-r..=r)
        .map(|i| (-((i * i) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for gy in &g {
        for gx in &g {
            w.push(gx * gy);
        }
    }
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

/// Mean SSIM of the Rec. 601 luma planes over all fully-contained 11x11 windows.
pub fn ssim(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    Error::check_dims(a.dims(), b.dims())?;
    let (w, h) = a.dims();
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {w}x{h}"
        )));
    }
    let (x, y) = (luma(a), luma(b));
    let win = ssim_window();
    let c1 = (SSIM_K1 * PEAK).powi(2);
    let c2 = (SSIM_K2 * PEAK).powi(2);
    let mut total = 0.0;
    let mut count = 0usize;
    for oy in 0..=h - SSIM_WINDOW {
        for ox in 0..=w - SSIM_WINDOW {
            let (mut mx, mut my, mut xx, mut yy, mut xy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for ky in 0..SSIM_WINDOW {
                let row = (oy + ky) * w + ox;
                for kx in 0..SSIM_WINDOW {
                    let wt = win[ky * SSIM_WINDOW + kx];
                    let (p, q) = (x[row + kx], y[row + kx]);
                    mx += wt * p;
                    my += wt * q;
                    xx += wt * p * p;
                    yy += wt * q * q;
                    xy += wt * p * q;
                }
            }
            let vx = xx - mx * mx;
            let vy = yy - my * my;
            let cov = xy - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

fn finite_or_inf<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_str("inf")
    }
}

fn parse_psnr<'de, D: serde::Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Str(String),
    }
    match Raw::deserialize(d)? {
        Raw::Num(v) => Ok(v),
        Raw::Str(s) if s == "inf" => Ok(f64::INFINITY),
        Raw::Str(s) => Err(serde::de::Error::custom(format!("bad psnr value {s:?}"))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub name: String,
    pub cf: f64,
    /// `"inf"` in JSON when the images are identical.
    #[serde(serialize_with = "finite_or_inf", deserialize_with = "parse_psnr")]
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub cf: f64,
    #[serde(serialize_with = "finite_or_inf", deserialize_with = "parse_psnr")]
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_image: Vec<ImageMetrics>,
    pub mean: MeanMetrics,
}

pub fn evaluate_pair(name: &str, pred: &RgbImage, gt: &RgbImage) -> Result<ImageMetrics> {
    Ok(ImageMetrics {
        name: name.to_string(),
        cf: colorfulness(pred),
        psnr: psnr(pred, gt)?,
        ssim: ssim(pred, gt)?,
    })
}

impl MetricReport {
    pub fn from_images(per_image: Vec<ImageMetrics>) -> Self {
        let n = per_image.len().max(1) as f64;
        let mean = MeanMetrics {
            cf: per_image.iter().map(|m| m.cf).sum::<f64>() / n,
            psnr: per_image.iter().map(|m| m.psnr).sum::<f64>() / n,
            ssim: per_image.iter().map(|m| m.ssim).sum::<f64>() / n,
        };
        Self { per_image, mean }
    }
}

/// Pairs same-named PNGs from `pred_dir` and `gt_dir`, sorted by name.
pub fn evaluate_dirs(pred_dir: &Path, gt_dir: &Path) -> Result<MetricReport> {
    let entries = std::fs::read_dir(pred_dir).map_err(|e| Error::io(pred_dir, e))?;
    let mut names: Vec<String> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(pred_dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.to_ascii_lowercase().ends_with(".png") && gt_dir.join(&name).is_file() {
            names.push(name);
        }
    }
    if names.is_empty() {
        return Err(Error::invalid(format!(
            "no same-named PNG pairs in {} and {}",
            pred_dir.display(),
            gt_dir.display()
        )));
    }
    names.sort();
    let per_image = names
        .iter()
        .map(|n| {
            let pred = io::load_rgb_png(&pred_dir.join(n))?;
            let gt = io::load_rgb_png(&gt_dir.join(n))?;
            evaluate_pair(n, &pred, &gt)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricReport::from_images(per_image))
}
