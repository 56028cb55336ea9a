//! Classical image operators: Gaussian blur, Sobel gradients, Canny edges and
//! nearest-neighbour label resampling.

use std::collections::VecDeque;

use crate::color::{GrayImage, Plane};
use crate::error::{Error, Result};
use crate::segmentation::SegmentMap;

/// Binary edge mask; values are 0 or 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeMap {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl EdgeMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }
}

#[derive(Clone, Debug)]
pub struct Gradients {
    pub gx: Plane,
    pub gy: Plane,
    pub magnitude: Plane,
}

/// Normalized 1-D Gaussian kernel with radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

pub fn gaussian_blur(img: &GrayImage, sigma: f64) -> Result<GrayImage> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::invalid(format!("sigma must be positive, got {sigma}")));
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let (w, h) = img.dims();

    let mut tmp = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, wk) in kernel.iter().enumerate() {
                acc += wk * img.get_clamped(x as isize + k as isize - radius, y as isize);
            }
            tmp[y * w + x] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (k, wk) in kernel.iter().enumerate() {
                let yy = (y as isize + k as isize - radius).clamp(0, h as isize - 1) as usize;
                acc += wk * tmp[yy * w + x];
            }
            out[y * w + x] = acc.clamp(0.0, 1.0);
        }
    }
    GrayImage::new(w, h, out)
}

/// 3x3 Sobel operator with edge-replicated borders.
pub fn sobel_gradients(img: &GrayImage) -> Gradients {
    let (w, h) = img.dims();
    let mut gx = Plane::zeros(w, h);
    let mut gy = Plane::zeros(w, h);
    let mut mag = Plane::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let p = |dx: isize, dy: isize| img.get_clamped(x as isize + dx, y as isize + dy);
            let sx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
            let sy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));
            gx.set(x, y, sx);
            gy.set(x, y, sy);
            mag.set(x, y, sx.hypot(sy));
        }
    }
    Gradients {
        gx,
        gy,
        magnitude: mag,
    }
}

/// Neighbour offset along the gradient direction, quantized to 4 bins.
fn gradient_step(gx: f64, gy: f64) -> (isize, isize) {
    let mut angle = gy.atan2(gx).to_degrees();
    if angle < 0.0 {
        angle += 180.0;
    }
    if !(22.5..157.5).contains(&angle) {
        (1, 0)
    } else if angle < 67.5 {
        (1, 1)
    } else if angle < 112.5 {
        (0, 1)
    } else {
        (-1, 1)
    }
}

/// Non-maximum suppression on the Sobel magnitude.
///
/// A pixel survives when it is strictly greater than its neighbour on the
/// negative side of the gradient and not smaller than the one on the positive
/// side, so plateaus of two equal maxima keep exactly one pixel.
pub fn non_maximum_suppression(grad: &Gradients) -> Plane {
    let (w, h) = grad.magnitude.dims();
    let mut out = Plane::zeros(w, h);
    let mag = |x: isize, y: isize| -> f64 {
        if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
            0.0
        } else {
            grad.magnitude.get(x as usize, y as usize)
        }
    };
    for y in 0..h {
        for x in 0..w {
            let m = grad.magnitude.get(x, y);
            if m == 0.0 {
                continue;
            }
            let (dx, dy) = gradient_step(grad.gx.get(x, y), grad.gy.get(x, y));
            let (xi, yi) = (x as isize, y as isize);
            let before = mag(xi - dx, yi - dy);
            let after = mag(xi + dx, yi + dy);
            if m > before && m >= after {
                out.set(x, y, m);
            }
        }
    }
    out
}

pub fn canny_edges(img: &GrayImage, low: f64, high: f64, sigma: f64) -> Result<EdgeMap> {
    if !(low >= 0.0) || low >= high {
        return Err(Error::invalid(format!(
            "canny thresholds require 0 <= low < high, got low={low} high={high}"
        )));
    }
    let blurred = gaussian_blur(img, sigma)?;
    let grad = sobel_gradients(&blurred);
    let thin = non_maximum_suppression(&grad);
    let (w, h) = img.dims();

    let mut edges = vec![0u8; w * h];
    let mut queue = VecDeque::new();
    for (i, &m) in thin.data().iter().enumerate() {
        if m >= high {
            edges[i] = 1;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % w) as isize, (i / w) as isize);
        for dy in -1..=1 {
            for dx in -1..=1 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                if edges[j] == 0 && thin.data()[j] >= low {
                    edges[j] = 1;
                    queue.push_back(j);
                }
            }
        }
    }
    Ok(EdgeMap {
        width: w,
        height: h,
        data: edges,
    })
}

/// Nearest-neighbour resampling of a raw label raster.
pub fn resize_labels(labels: &[u32], src_w: usize, src_h: usize, w: usize, h: usize) -> Vec<u32> {
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let sy = (((y as f64 + 0.5) * src_h as f64 / h as f64) as usize).min(src_h - 1);
        for x in 0..w {
            let sx = (((x as f64 + 0.5) * src_w as f64 / w as f64) as usize).min(src_w - 1);
            out.push(labels[sy * src_w + sx]);
        }
    }
    out
}

/// Nearest-neighbour resize of a segment map. Labels that disappear when
/// downscaling are dropped and the survivors renumbered in their original order.
pub fn resize_nearest(seg: &SegmentMap, w: usize, h: usize) -> Result<SegmentMap> {
    if w == 0 || h == 0 {
        return Err(Error::invalid("target size must be at least 1x1"));
    }
    if seg.dims() == (w, h) {
        return Ok(seg.clone());
    }
    let labels = resize_labels(seg.labels(), seg.width(), seg.height(), w, h);
    SegmentMap::from_raw(w, h, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn step_image(w: usize, h: usize, at: usize) -> GrayImage {
        GrayImage::from_fn(w, h, |x, _| if x < at { 0.0 } else { 1.0 }).unwrap()
    }

    #[test]
    fn blur_preserves_constant() {
        let img = GrayImage::constant(9, 7, 0.37).unwrap();
        let out = gaussian_blur(&img, 2.0).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.37).abs() < 1e-9));
    }

    #[test]
    fn blur_impulse_center_is_kernel_center_weight() {
        let img = GrayImage::from_fn(15, 15, |x, y| if (x, y) == (7, 7) { 1.0 } else { 0.0 }).unwrap();
        let out = gaussian_blur(&img, 1.0).unwrap();
        // direct evaluation: 1-D center weight = 1 / sum_{i=-3..3} exp(-i^2/2)
        let norm: f64 = (-3..=3).map(|i: i32| (-(f64::from(i * i)) / 2.0).exp()).sum();
        let c = 1.0 / norm;
        assert!((out.get(7, 7) - c * c).abs() < 1e-12);
        let total: f64 = out.data().iter().sum();
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn blur_rejects_bad_sigma() {
        let img = GrayImage::constant(3, 3, 0.5).unwrap();
        assert!(matches!(gaussian_blur(&img, 0.0), Err(Error::InvalidParameter(_))));
        assert!(gaussian_blur(&img, -1.0).is_err());
    }

    #[test]
    fn sobel_constant_is_zero() {
        let g = sobel_gradients(&GrayImage::constant(6, 5, 0.8).unwrap());
        assert!(g.magnitude.data().iter().all(|&m| m == 0.0));
    }

    #[test]
    fn sobel_vertical_step() {
        // columns < 4 are 0, columns >= 4 are 1: by hand gx = 4 at columns 3 and 4
        let g = sobel_gradients(&step_image(8, 6, 4));
        for y in 1..5 {
            for x in 0..8 {
                let expect = if x == 3 || x == 4 { 4.0 } else { 0.0 };
                assert_eq!(g.gx.get(x, y), expect, "x={x} y={y}");
                assert_eq!(g.gy.get(x, y), 0.0);
            }
        }
    }

    #[test]
    fn sobel_transpose_swaps_axes() {
        let img = GrayImage::from_fn(7, 5, |x, y| ((x * 3 + y * 5) % 7) as f64 / 7.0).unwrap();
        let g = sobel_gradients(&img);
        let gt = sobel_gradients(&img.transpose());
        for y in 0..5 {
            for x in 0..7 {
                assert!((g.gx.get(x, y) - gt.gy.get(y, x)).abs() < 1e-12);
                assert!((g.gy.get(x, y) - gt.gx.get(y, x)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn canny_constant_is_empty() {
        let e = canny_edges(&GrayImage::constant(16, 16, 0.5).unwrap(), 0.1, 0.2, 1.0).unwrap();
        assert_eq!(e.count(), 0);
    }

    #[test]
    fn canny_half_split_single_line() {
        let e = canny_edges(&step_image(64, 64, 32), 0.1, 0.3, 1.0).unwrap();
        for y in 1..63 {
            let row: Vec<usize> = (0..64).filter(|&x| e.get(x, y)).collect();
            assert_eq!(row.len(), 1, "row {y}: {row:?}");
            assert!(row[0] == 31 || row[0] == 32);
        }
    }

    #[test]
    fn canny_threshold_order() {
        let img = GrayImage::constant(4, 4, 0.5).unwrap();
        assert!(canny_edges(&img, 0.3, 0.3, 1.0).is_err());
        assert!(canny_edges(&img, 0.4, 0.3, 1.0).is_err());
    }

    #[test]
    fn resize_identity_and_upscale() {
        let seg = SegmentMap::from_raw(2, 2, vec![0, 1, 2, 3]).unwrap();
        assert_eq!(resize_nearest(&seg, 2, 2).unwrap(), seg);
        let up = resize_nearest(&seg, 4, 4).unwrap();
        let expect = [0, 0, 1, 1, 0, 0, 1, 1, 2, 2, 3, 3, 2, 2, 3, 3];
        assert_eq!(up.labels(), &expect);
    }

    #[test]
    fn downscale_keeps_source_labels() {
        let labels: Vec<u32> = (0..100).map(|i| (i * 7 % 13) as u32).collect();
        let small = resize_labels(&labels, 10, 10, 3, 4);
        assert!(small.iter().all(|l| labels.contains(l)));
    }
}
