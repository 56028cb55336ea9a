//! Segment partitions: ingestion from label images / RLE JSON and a
//! luminance-only SLIC fallback.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::color::GrayImage;
use crate::error::{Error, Result};
use crate::imaging::resize_nearest;

pub const DEFAULT_SEGMENTS: usize = 10;
const SLIC_ITERATIONS: usize = 10;

/// Full partition of an image into `count` non-empty labelled segments.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentMap {
    width: usize,
    height: usize,
    labels: Vec<u32>,
    count: usize,
}

/// Binary per-pixel mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::invalid("mask length does not match dimensions"));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn full(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![true; width * height],
        }
    }

    /// Axis-aligned rectangle `[x0, x1) x [y0, y1)`.
    pub fn rect(width: usize, height: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> Self {
        let mut data = vec![false; width * height];
        for y in y0..y1.min(height) {
            for x in x0..x1.min(width) {
                data[y * width + x] = true;
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&m| m).count()
    }
}

/// Run-length JSON form: `{"width","height","rle":[label, run, label, run, ...]}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RleSegments {
    pub width: usize,
    pub height: usize,
    pub rle: Vec<u64>,
}

impl SegmentMap {
    /// Builds a map from arbitrary labels, renumbering them to `0..count` in
    /// ascending order of the original label value.
    pub fn from_raw(width: usize, height: usize, labels: Vec<u32>) -> Result<Self> {
        if width == 0 || height == 0 || labels.is_empty() {
            return Err(Error::Format("segment map is empty".into()));
        }
        if labels.len() != width * height {
            return Err(Error::Format(format!(
                "segment map holds {} labels for a {width}x{height} image",
                labels.len()
            )));
        }
        let mut remap: BTreeMap<u32, u32> = labels.iter().map(|&l| (l, 0)).collect();
        for (i, v) in remap.values_mut().enumerate() {
            *v = i as u32;
        }
        let count = remap.len();
        let labels = labels.into_iter().map(|l| remap[&l]).collect();
        Ok(Self {
            width,
            height,
            labels,
            count,
        })
    }

    pub fn single(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            labels: vec![0; width * height],
            count: 1,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    #[inline]
    pub fn label(&self, x: usize, y: usize) -> usize {
        self.labels[y * self.width + x] as usize
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.count];
        for &l in &self.labels {
            sizes[l as usize] += 1;
        }
        sizes
    }

    /// For every segment, the set of 4-adjacent segments with shared border length.
    pub fn adjacency(&self) -> Vec<BTreeMap<usize, usize>> {
        let mut adj = vec![BTreeMap::new(); self.count];
        for y in 0..self.height {
            for x in 0..self.width {
                let l = self.label(x, y);
                if x + 1 < self.width {
                    let r = self.label(x + 1, y);
                    if r != l {
                        *adj[l].entry(r).or_insert(0) += 1;
                        *adj[r].entry(l).or_insert(0) += 1;
                    }
                }
                if y + 1 < self.height {
                    let d = self.label(x, y + 1);
                    if d != l {
                        *adj[l].entry(d).or_insert(0) += 1;
                        *adj[d].entry(l).or_insert(0) += 1;
                    }
                }
            }
        }
        adj
    }

    pub fn to_rle(&self) -> RleSegments {
        let mut rle = Vec::new();
        let mut iter = self.labels.iter();
        if let Some(&first) = iter.next() {
            let (mut cur, mut run) = (first, 1u64);
            for &l in iter {
                if l == cur {
                    run += 1;
                } else {
                    rle.extend_from_slice(&[u64::from(cur), run]);
                    cur = l;
                    run = 1;
                }
            }
            rle.extend_from_slice(&[u64::from(cur), run]);
        }
        RleSegments {
            width: self.width,
            height: self.height,
            rle,
        }
    }

    pub fn from_rle(rle: &RleSegments) -> Result<Self> {
        if rle.rle.len() % 2 != 0 {
            return Err(Error::Format("rle must hold label/run pairs".into()));
        }
        let total = rle.width * rle.height;
        let mut labels = Vec::with_capacity(total);
        for pair in rle.rle.chunks_exact(2) {
            let label = u32::try_from(pair[0]).map_err(|_| Error::Format(format!("label {} too large", pair[0])))?;
            if labels.len() as u64 + pair[1] > total as u64 {
                return Err(Error::Format("rle runs exceed image area".into()));
            }
            labels.extend(std::iter::repeat_n(label, pair[1] as usize));
        }
        if labels.len() != total {
            return Err(Error::Format(format!(
                "rle covers {} of {total} pixels",
                labels.len()
            )));
        }
        Self::from_raw(rle.width, rle.height, labels)
    }

    /// Encodes labels as a 16-bit grayscale PNG.
    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        if self.count > usize::from(u16::MAX) + 1 {
            return Err(Error::Format("too many segments for a 16-bit label image".into()));
        }
        let buf: image::ImageBuffer<image::Luma<u16>, Vec<u16>> = image::ImageBuffer::from_raw(
            self.width as u32,
            self.height as u32,
            self.labels.iter().map(|&l| l as u16).collect(),
        )
        .ok_or_else(|| Error::Format("label buffer size".into()))?;
        let mut out = std::io::Cursor::new(Vec::new());
        image::DynamicImage::ImageLuma16(buf).write_to(&mut out, image::ImageFormat::Png)?;
        Ok(out.into_inner())
    }
}

fn decode_label_png(bytes: &[u8]) -> Result<SegmentMap> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let labels: Vec<u32> = match img {
        image::DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(u32::from).collect(),
        image::DynamicImage::ImageLuma16(buf) => buf.into_raw().into_iter().map(u32::from).collect(),
        other => {
            return Err(Error::Format(format!(
                "label image must be 8- or 16-bit grayscale, got {:?}",
                other.color()
            )))
        }
    };
    SegmentMap::from_raw(w, h, labels)
}

/// Loads a label PNG or RLE JSON file and aligns it to `expected_size`.
pub fn load_segment_map(path: &Path, expected_size: (usize, usize)) -> Result<SegmentMap> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.is_empty() {
        return Err(Error::Format(format!("{}: empty file", path.display())));
    }
    let is_json = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"))
        || bytes.first() == Some(&b'{');
    let seg = if is_json {
        let rle: RleSegments = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        SegmentMap::from_rle(&rle)?
    } else {
        decode_label_png(&bytes)?
    };
    resize_nearest(&seg, expected_size.0, expected_size.1)
}

pub fn segment_mask(seg: &SegmentMap, j: usize) -> Result<Mask> {
    if j >= seg.count {
        return Err(Error::OutOfRange {
            index: j,
            count: seg.count,
        });
    }
    let data = seg.labels.iter().map(|&l| l as usize == j).collect();
    Mask::new(seg.width, seg.height, data)
}

struct Center {
    lum: f64,
    x: f64,
    y: f64,
}

/// Initial grid of cluster centers: at most `1.5 * n_target` cells.
fn seed_grid(w: usize, h: usize, n_target: usize) -> Vec<Center> {
    let step = ((w * h) as f64 / n_target as f64).sqrt();
    let nx = ((w as f64 / step).round() as usize).clamp(1, n_target.min(w));
    let ny = ((n_target as f64 / nx as f64).round() as usize).clamp(1, h);
    let mut centers = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            centers.push(Center {
                lum: 0.0,
                x: (i as f64 + 0.5) * w as f64 / nx as f64,
                y: (j as f64 + 0.5) * h as f64 / ny as f64,
            });
        }
    }
    centers
}

/// SLIC superpixels over `(compactness * luminance, x / s, y / s)`.
pub fn superpixel_segments(img: &GrayImage, n_target: usize, compactness: f64) -> Result<SegmentMap> {
    let (w, h) = img.dims();
    if n_target == 0 || n_target > w * h {
        return Err(Error::invalid(format!(
            "n_target must lie in [1, {}], got {n_target}",
            w * h
        )));
    }
    if !(compactness > 0.0) {
        return Err(Error::invalid("compactness must be positive"));
    }
    let step = ((w * h) as f64 / n_target as f64).sqrt();
    let mut centers = seed_grid(w, h, n_target);
    for c in &mut centers {
        c.lum = img.get((c.x as usize).min(w - 1), (c.y as usize).min(h - 1));
    }

    let dist = |c: &Center, x: usize, y: usize| {
        let dl = compactness * (img.get(x, y) - c.lum);
        let dx = (x as f64 - c.x) / step;
        let dy = (y as f64 - c.y) / step;
        dl * dl + dx * dx + dy * dy
    };

    let window = (2.0 * step).ceil() as isize;
    let mut labels = vec![0u32; w * h];
    let mut best = vec![f64::INFINITY; w * h];
    for _ in 0..SLIC_ITERATIONS {
        best.iter_mut().for_each(|d| *d = f64::INFINITY);
        for (k, c) in centers.iter().enumerate() {
            let (cx, cy) = (c.x as isize, c.y as isize);
            let y0 = (cy - window).max(0) as usize;
            let y1 = ((cy + window) as usize).min(h - 1);
            let x0 = (cx - window).max(0) as usize;
            let x1 = ((cx + window) as usize).min(w - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let d = dist(c, x, y);
                    let i = y * w + x;
                    if d < best[i] {
                        best[i] = d;
                        labels[i] = k as u32;
                    }
                }
            }
        }
        // pixels no window reached fall back to a full scan
        for i in 0..w * h {
            if best[i].is_infinite() {
                let (x, y) = (i % w, i / w);
                let (k, _) = centers
                    .iter()
                    .enumerate()
                    .map(|(k, c)| (k, dist(c, x, y)))
                    .fold((0, f64::INFINITY), |acc, v| if v.1 < acc.1 { v } else { acc });
                labels[i] = k as u32;
            }
        }
        let mut sums = vec![(0.0, 0.0, 0.0, 0usize); centers.len()];
        for (i, &l) in labels.iter().enumerate() {
            let s = &mut sums[l as usize];
            s.0 += img.data()[i];
            s.1 += (i % w) as f64;
            s.2 += (i / w) as f64;
            s.3 += 1;
        }
        for (c, s) in centers.iter_mut().zip(&sums) {
            if s.3 > 0 {
                let n = s.3 as f64;
                c.lum = s.0 / n;
                c.x = s.1 / n;
                c.y = s.2 / n;
            }
        }
    }
    enforce_connectivity(&mut labels, w, h);
    SegmentMap::from_raw(w, h, labels)
}

/// Keeps the largest 4-connected component of every label and merges every
/// other fragment into the largest adjacent segment.
fn enforce_connectivity(labels: &mut [u32], w: usize, h: usize) {
    loop {
        let (comp, comp_sizes, comp_label) = components(labels, w, h);
        let mut largest: BTreeMap<u32, usize> = BTreeMap::new();
        for (c, (&size, &label)) in comp_sizes.iter().zip(&comp_label).enumerate() {
            match largest.get(&label) {
                Some(&prev) if comp_sizes[prev] >= size => {}
                _ => {
                    largest.insert(label, c);
                }
            }
        }
        let orphan: Vec<bool> = (0..comp_sizes.len())
            .map(|c| largest[&comp_label[c]] != c)
            .collect();
        if !orphan.iter().any(|&o| o) {
            return;
        }
        let mut seg_size: BTreeMap<u32, usize> = BTreeMap::new();
        for (c, &label) in comp_label.iter().enumerate() {
            if !orphan[c] {
                *seg_size.entry(label).or_insert(0) += comp_sizes[c];
            }
        }
        // choose a target for each orphan among non-orphan neighbours
        let mut target: Vec<Option<u32>> = vec![None; comp_sizes.len()];
        for y in 0..h {
            for x in 0..w {
                let c = comp[y * w + x];
                if !orphan[c] {
                    continue;
                }
                let mut consider = |nx: usize, ny: usize| {
                    let nc = comp[ny * w + nx];
                    if orphan[nc] {
                        return;
                    }
                    let l = comp_label[nc];
                    let better = match target[c] {
                        None => true,
                        Some(t) => {
                            let (a, b) = (seg_size[&l], seg_size[&t]);
                            a > b || (a == b && l < t)
                        }
                    };
                    if better {
                        target[c] = Some(l);
                    }
                };
                if x > 0 {
                    consider(x - 1, y);
                }
                if x + 1 < w {
                    consider(x + 1, y);
                }
                if y > 0 {
                    consider(x, y - 1);
                }
                if y + 1 < h {
                    consider(x, y + 1);
                }
            }
        }
        for (i, l) in labels.iter_mut().enumerate() {
            if let Some(t) = target[comp[i]] {
                *l = t;
            }
        }
    }
}

fn components(labels: &[u32], w: usize, h: usize) -> (Vec<usize>, Vec<usize>, Vec<u32>) {
    let mut comp = vec![usize::MAX; w * h];
    let mut sizes = Vec::new();
    let mut comp_label = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if comp[start] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        let label = labels[start];
        comp[start] = id;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (x, y) = (i % w, i / w);
            let mut push = |j: usize| {
                if comp[j] == usize::MAX && labels[j] == label {
                    comp[j] = id;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                push(i - 1);
            }
            if x + 1 < w {
                push(i + 1);
            }
            if y > 0 {
                push(i - w);
            }
            if y + 1 < h {
                push(i + w);
            }
        }
        sizes.push(size);
        comp_label.push(label);
    }
    (comp, sizes, comp_label)
}
