//! Region descriptors and distances used to match the grayscale input against
//! reference candidates.
//!
//! The built-in descriptor is a 32-bin luminance histogram followed by an
//! 8-bin gradient-orientation histogram weighted by Sobel magnitude. Each block
//! is L1-normalized, then the whole vector is L2-normalized. Gradients are
//! evaluated inside the region only: a neighbour outside the region (or the
//! image) takes the value of the center pixel, so a descriptor never depends
//! on pixels outside its mask.

use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::color::GrayImage;
use crate::error::{Error, Result};
use crate::segmentation::{Mask, SegmentMap};

pub const LUMA_BINS: usize = 32;
pub const ORIENTATION_BINS: usize = 8;
pub const BUILTIN_DIM: usize = LUMA_BINS + ORIENTATION_BINS;

const GRID_MAGIC: &[u8; 4] = b"FGRD";

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentDescriptor {
    values: Vec<f64>,
    norm: f64,
}

impl SegmentDescriptor {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("descriptor values must be finite"));
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        Ok(Self { values, norm })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.norm
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    L1,
    L2,
    #[default]
    Cosine,
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l1" => Ok(Metric::L1),
            "l2" => Ok(Metric::L2),
            "cosine" | "cos" => Ok(Metric::Cosine),
            other => Err(Error::invalid(format!("unknown metric {other:?}"))),
        }
    }
}

pub fn distance(metric: Metric, d1: &SegmentDescriptor, d2: &SegmentDescriptor) -> Result<f64> {
    if d1.dim() != d2.dim() {
        return Err(Error::invalid(format!(
            "descriptor dimensions differ: {} vs {}",
            d1.dim(),
            d2.dim()
        )));
    }
    let pairs = d1.values.iter().zip(&d2.values);
    Ok(match metric {
        Metric::L1 => pairs.map(|(a, b)| (a - b).abs()).sum(),
        Metric::L2 => pairs.map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt(),
        Metric::Cosine => {
            match (d1.norm == 0.0, d2.norm == 0.0) {
                (true, true) => 0.0,
                (true, false) | (false, true) => 1.0,
                (false, false) => {
                    let dot: f64 = pairs.map(|(a, b)| a * b).sum();
                    (1.0 - dot / (d1.norm * d2.norm)).max(0.0)
                }
            }
        }
    })
}

/// Cosine similarity clamped to `[0, 1]`.
pub fn cosine_similarity(d1: &SegmentDescriptor, d2: &SegmentDescriptor) -> Result<f64> {
    Ok((1.0 - distance(Metric::Cosine, d1, d2)?).clamp(0.0, 1.0))
}

#[derive(Clone)]
struct Histogram {
    luma: [f64; LUMA_BINS],
    orientation: [f64; ORIENTATION_BINS],
    pixels: usize,
}

impl Default for Histogram {
    fn default() -> Self {
        Self {
            luma: [0.0; LUMA_BINS],
            orientation: [0.0; ORIENTATION_BINS],
            pixels: 0,
        }
    }
}

impl Histogram {
    /// Adds pixel `(x, y)`; `inside` decides region membership of neighbours.
    fn add(&mut self, gray: &GrayImage, x: usize, y: usize, inside: impl Fn(usize, usize) -> bool) {
        let center = gray.get(x, y);
        let (w, h) = gray.dims();
        let p = |dx: isize, dy: isize| -> f64 {
            let (nx, ny) = (x as isize + dx, y as isize + dy);
            if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                return center;
            }
            let (nx, ny) = (nx as usize, ny as usize);
            if inside(nx, ny) {
                gray.get(nx, ny)
            } else {
                center
            }
        };
        let gx = (p(1, -1) + 2.0 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2.0 * p(-1, 0) + p(-1, 1));
        let gy = (p(-1, 1) + 2.0 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2.0 * p(0, -1) + p(1, -1));

        let bin = ((center * LUMA_BINS as f64) as usize).min(LUMA_BINS - 1);
        self.luma[bin] += 1.0;
        let mag = gx.hypot(gy);
        if mag > 0.0 {
            self.orientation[orientation_bin(gx, gy)] += mag;
        }
        self.pixels += 1;
    }

    fn finish(&self) -> Result<SegmentDescriptor> {
        if self.pixels == 0 {
            return Err(Error::invalid("descriptor region is empty"));
        }
        let mut values = Vec::with_capacity(BUILTIN_DIM);
        for block in [&self.luma[..], &self.orientation[..]] {
            let sum: f64 = block.iter().sum();
            if sum > 0.0 {
                values.extend(block.iter().map(|v| v / sum));
            } else {
                values.extend_from_slice(block);
            }
        }
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        SegmentDescriptor::new(values)
    }
}

/// Unsigned orientation bin; bin 0 is centered on horizontal gradients.
pub fn orientation_bin(gx: f64, gy: f64) -> usize {
    let mut theta = gy.atan2(gx);
    if theta < 0.0 {
        theta += std::f64::consts::PI;
    }
    let pos = theta / std::f64::consts::PI * ORIENTATION_BINS as f64 + 0.5;
    (pos.floor() as usize) % ORIENTATION_BINS
}

pub fn builtin_descriptor(gray: &GrayImage, mask: &Mask) -> Result<SegmentDescriptor> {
    Error::check_dims(gray.dims(), mask.dims())?;
    let mut hist = Histogram::default();
    for y in 0..gray.height() {
        for x in 0..gray.width() {
            if mask.get(x, y) {
                hist.add(gray, x, y, |nx, ny| mask.get(nx, ny));
            }
        }
    }
    hist.finish()
}

/// Built-in descriptor of the rectangle `[x0, x1) x [y0, y1)`.
pub fn rect_descriptor(gray: &GrayImage, x0: usize, y0: usize, x1: usize, y1: usize) -> Result<SegmentDescriptor> {
    let mut hist = Histogram::default();
    let inside = |nx: usize, ny: usize| nx >= x0 && nx < x1 && ny >= y0 && ny < y1;
    for y in y0..y1.min(gray.height()) {
        for x in x0..x1.min(gray.width()) {
            hist.add(gray, x, y, inside);
        }
    }
    hist.finish()
}

/// Built-in descriptors of every segment in one pass over the image; entry
/// `j` equals `builtin_descriptor(gray, segment_mask(seg, j))`.
pub fn segment_descriptors(gray: &GrayImage, seg: &SegmentMap) -> Result<Vec<SegmentDescriptor>> {
    Error::check_dims(seg.dims(), gray.dims())?;
    let mut hists = vec![Histogram::default(); seg.count()];
    for y in 0..gray.height() {
        for x in 0..gray.width() {
            let l = seg.label(x, y);
            hists[l].add(gray, x, y, |nx, ny| seg.label(nx, ny) == l);
        }
    }
    hists.iter().map(Histogram::finish).collect()
}

/// Dense grid of externally computed feature vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGrid {
    gw: usize,
    gh: usize,
    dim: usize,
    cell_size: usize,
    data: Vec<f32>,
}

impl FeatureGrid {
    pub fn new(gw: usize, gh: usize, dim: usize, cell_size: usize, data: Vec<f32>) -> Result<Self> {
        if gw == 0 || gh == 0 || dim == 0 || cell_size == 0 {
            return Err(Error::Format("feature grid dimensions must be positive".into()));
        }
        if data.len() != gw * gh * dim {
            return Err(Error::Format(format!(
                "feature grid length mismatch: header declares {} floats, found {}",
                gw * gh * dim,
                data.len()
            )));
        }
        Ok(Self {
            gw,
            gh,
            dim,
            cell_size,
            data,
        })
    }

    pub fn grid_dims(&self) -> (usize, usize) {
        (self.gw, self.gh)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cell_size(&self) -> usize {
        self.cell_size
    }

    pub fn cell(&self, cx: usize, cy: usize) -> &[f32] {
        let start = (cy * self.gw + cx) * self.dim;
        &self.data[start..start + self.dim]
    }

    pub fn covers(&self, width: usize, height: usize) -> bool {
        self.cell_size * self.gw >= width && self.cell_size * self.gh >= height
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 4 || &bytes[..4] != GRID_MAGIC {
            return Err(Error::Format("feature grid: bad magic".into()));
        }
        if bytes.len() < 20 {
            return Err(Error::Format("feature grid: truncated header".into()));
        }
        let field = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
        let (gw, gh, dim, cell_size) = (field(0), field(1), field(2), field(3));
        let body = &bytes[20..];
        let declared = gw
            .checked_mul(gh)
            .and_then(|v| v.checked_mul(dim))
            .ok_or_else(|| Error::Format("feature grid: header overflows".into()))?;
        if body.len() != declared * 4 {
            return Err(Error::Format(format!(
                "feature grid length mismatch: header declares {declared} floats, found {} bytes",
                body.len()
            )));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(gw, gh, dim, cell_size, data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + self.data.len() * 4);
        out.extend_from_slice(GRID_MAGIC);
        for v in [self.gw, self.gh, self.dim, self.cell_size] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

pub fn load_feature_grid(path: &Path) -> Result<FeatureGrid> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    FeatureGrid::from_bytes(&bytes)
}

/// Mean of the cell vectors whose cell center falls in segment `j`; when no
/// center does, the cell containing the segment centroid.
pub fn pool_segment(grid: &FeatureGrid, seg: &SegmentMap, j: usize) -> Result<SegmentDescriptor> {
    if j >= seg.count() {
        return Err(Error::OutOfRange {
            index: j,
            count: seg.count(),
        });
    }
    if !grid.covers(seg.width(), seg.height()) {
        return Err(Error::invalid(format!(
            "feature grid {}x{} cells of {} px does not cover a {}x{} image",
            grid.gw,
            grid.gh,
            grid.cell_size,
            seg.width(),
            seg.height()
        )));
    }
    let mut acc = vec![0.0f64; grid.dim];
    let mut n = 0usize;
    for cy in 0..grid.gh {
        for cx in 0..grid.gw {
            let px = cx * grid.cell_size + grid.cell_size / 2;
            let py = cy * grid.cell_size + grid.cell_size / 2;
            if px < seg.width() && py < seg.height() && seg.label(px, py) == j {
                for (a, v) in acc.iter_mut().zip(grid.cell(cx, cy)) {
                    *a += f64::from(*v);
                }
                n += 1;
            }
        }
    }
    if n == 0 {
        let (mut sx, mut sy, mut count) = (0.0, 0.0, 0usize);
        for y in 0..seg.height() {
            for x in 0..seg.width() {
                if seg.label(x, y) == j {
                    sx += x as f64;
                    sy += y as f64;
                    count += 1;
                }
            }
        }
        let cx = ((sx / count as f64) as usize / grid.cell_size).min(grid.gw - 1);
        let cy = ((sy / count as f64) as usize / grid.cell_size).min(grid.gh - 1);
        return SegmentDescriptor::new(grid.cell(cx, cy).iter().map(|&v| f64::from(v)).collect());
    }
    SegmentDescriptor::new(acc.into_iter().map(|v| v / n as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmentation::segment_mask;

    fn desc(v: &[f64]) -> SegmentDescriptor {
        SegmentDescriptor::new(v.to_vec()).unwrap()
    }

    #[test]
    fn hand_distances() {
        let (a, b) = (desc(&[1.0, 0.0]), desc(&[0.0, 2.0]));
        assert_eq!(distance(Metric::L1, &a, &b).unwrap(), 3.0);
        assert!((distance(Metric::L2, &a, &b).unwrap() - 5f64.sqrt()).abs() < 1e-12);
        assert_eq!(distance(Metric::Cosine, &a, &b).unwrap(), 1.0);
        for m in [Metric::L1, Metric::L2, Metric::Cosine] {
            assert_eq!(distance(m, &a, &a).unwrap(), 0.0);
        }
    }

    #[test]
    fn cosine_zero_guards() {
        let z = desc(&[0.0, 0.0]);
        assert_eq!(distance(Metric::Cosine, &z, &z).unwrap(), 0.0);
        assert_eq!(distance(Metric::Cosine, &z, &desc(&[1.0, 1.0])).unwrap(), 1.0);
        assert!(distance(Metric::L1, &z, &desc(&[1.0])).is_err());
    }

    #[test]
    fn constant_region_is_one_hot() {
        let img = GrayImage::constant(8, 8, 0.5).unwrap();
        let d = builtin_descriptor(&img, &Mask::full(8, 8)).unwrap();
        let nonzero: Vec<usize> = (0..BUILTIN_DIM).filter(|&i| d.values()[i] != 0.0).collect();
        assert_eq!(nonzero, vec![16]);
        assert!((d.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn vertical_stripes_favor_horizontal_gradient_bin() {
        let img = GrayImage::from_fn(16, 16, |x, _| if (x / 2) % 2 == 0 { 0.2 } else { 0.8 }).unwrap();
        let d = builtin_descriptor(&img, &Mask::full(16, 16)).unwrap();
        let ori = &d.values()[LUMA_BINS..];
        let best = (0..ORIENTATION_BINS)
            .max_by(|&a, &b| ori[a].partial_cmp(&ori[b]).unwrap())
            .unwrap();
        assert_eq!(best, 0);
    }

    #[test]
    fn descriptor_ignores_outside_pixels() {
        let base = GrayImage::from_fn(12, 12, |x, y| ((x * 7 + y * 3) % 11) as f64 / 10.0).unwrap();
        let other = GrayImage::from_fn(12, 12, |x, y| {
            if x < 6 {
                base.get(x, y)
            } else {
                ((x * y) % 5) as f64 / 4.0
            }
        })
        .unwrap();
        let mask = Mask::rect(12, 12, 0, 0, 6, 12);
        assert_eq!(
            builtin_descriptor(&base, &mask).unwrap(),
            builtin_descriptor(&other, &mask).unwrap()
        );
        assert_eq!(
            rect_descriptor(&base, 0, 0, 6, 12).unwrap(),
            builtin_descriptor(&base, &mask).unwrap()
        );
    }

    #[test]
    fn empty_mask_is_rejected() {
        let img = GrayImage::constant(4, 4, 0.5).unwrap();
        let empty = Mask::new(4, 4, vec![false; 16]).unwrap();
        assert!(matches!(builtin_descriptor(&img, &empty), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn one_pass_matches_per_mask() {
        let img = GrayImage::from_fn(10, 9, |x, y| ((x * 5 + y * y) % 13) as f64 / 12.0).unwrap();
        let seg = SegmentMap::from_raw(10, 9, (0..90).map(|i| ((i % 10) / 4 + (i / 30)) as u32).collect()).unwrap();
        let all = segment_descriptors(&img, &seg).unwrap();
        for (j, d) in all.iter().enumerate() {
            assert_eq!(d, &builtin_descriptor(&img, &segment_mask(&seg, j).unwrap()).unwrap());
        }
    }

    #[test]
    fn pooling_rules() {
        let grid = FeatureGrid::new(2, 1, 2, 4, vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        // segment 0 covers both cell centers, segment 1 is a single pixel in cell 1
        let mut labels = vec![0u32; 8 * 4];
        labels[8 + 7] = 1;
        let seg = SegmentMap::from_raw(8, 4, labels).unwrap();
        assert_eq!(pool_segment(&grid, &seg, 0).unwrap().values(), &[2.0, 4.0]);
        assert_eq!(pool_segment(&grid, &seg, 1).unwrap().values(), &[3.0, 6.0]);
        assert!(pool_segment(&grid, &seg, 2).is_err());

        let one = FeatureGrid::new(1, 1, 3, 16, vec![0.5, 0.25, 1.0]).unwrap();
        let seg = SegmentMap::from_raw(4, 4, (0..16).map(|i| (i % 3) as u32).collect()).unwrap();
        for j in 0..3 {
            assert_eq!(pool_segment(&one, &seg, j).unwrap().values(), &[0.5, 0.25, 1.0]);
        }
    }

    #[test]
    fn grid_bytes_round_trip_and_errors() {
        let grid = FeatureGrid::new(2, 2, 4, 8, (0..16).map(|i| i as f32 * 0.5).collect()).unwrap();
        let bytes = grid.to_bytes();
        assert_eq!(FeatureGrid::from_bytes(&bytes).unwrap(), grid);
        assert!(FeatureGrid::from_bytes(&bytes[..bytes.len() - 16]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(FeatureGrid::from_bytes(&bad), Err(Error::Format(m)) if m.contains("magic")));
    }
}
