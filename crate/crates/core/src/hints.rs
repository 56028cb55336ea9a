//! Coarse-to-fine hint colors.
//!
//! The reference is matched cell by cell against the grayscale input, cells
//! whose similarity clears a threshold become coarse hints, and segments with
//! too many hints keep only the dominant DBSCAN cluster of their ab values.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::color::{GrayImage, LabImage, Plane};
use crate::descriptors::{cosine_similarity, rect_descriptor, SegmentDescriptor};
use crate::error::{Error, Result};
use crate::segmentation::SegmentMap;

pub const DEFAULT_CELL_SIZE: usize = 16;
pub const DEFAULT_SIMILARITY_THRESHOLD: f64 = 0.6;
pub const DEFAULT_HINT_CAP: usize = 10;
pub const DEFAULT_DBSCAN_EPS: f64 = 10.0;
pub const DEFAULT_DBSCAN_MIN_PTS: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HintPoint {
    pub cx: usize,
    pub cy: usize,
    pub a: f64,
    pub b: f64,
    pub confidence: f64,
    pub segment: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HintSet {
    pub cell_size: usize,
    pub hints: Vec<HintPoint>,
}

impl HintSet {
    pub fn empty(cell_size: usize) -> Self {
        Self {
            cell_size,
            hints: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.hints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hints.is_empty()
    }
}

/// Cell layout of a `width x height` image with square cells of side `d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CellGrid {
    pub width: usize,
    pub height: usize,
    pub cell: usize,
}

impl CellGrid {
    pub fn new(width: usize, height: usize, cell: usize) -> Self {
        Self { width, height, cell }
    }

    pub fn cols(&self) -> usize {
        self.width.div_ceil(self.cell)
    }

    pub fn rows(&self) -> usize {
        self.height.div_ceil(self.cell)
    }

    /// Pixel bounds `(x0, y0, x1, y1)` of cell `(cx, cy)`, clipped to the image.
    pub fn bounds(&self, cx: usize, cy: usize) -> (usize, usize, usize, usize) {
        let x0 = cx * self.cell;
        let y0 = cy * self.cell;
        (x0, y0, (x0 + self.cell).min(self.width), (y0 + self.cell).min(self.height))
    }

    pub fn center(&self, cx: usize, cy: usize) -> (usize, usize) {
        let (x0, y0, x1, y1) = self.bounds(cx, cy);
        (x0 + (x1 - x0) / 2, y0 + (y1 - y0) / 2)
    }

    pub fn cell_of(&self, x: usize, y: usize) -> (usize, usize) {
        (x / self.cell, y / self.cell)
    }
}

#[derive(Clone, Debug)]
pub struct WarpResult {
    pub cell_size: usize,
    pub warped_a: Plane,
    pub warped_b: Plane,
    /// One value per cell, `rows x cols`.
    pub similarity: Plane,
    /// Matched reference cell for every input cell.
    pub matches: Vec<(usize, usize)>,
}

fn cell_descriptors(gray: &GrayImage, grid: CellGrid) -> Result<Vec<SegmentDescriptor>> {
    let mut out = Vec::with_capacity(grid.cols() * grid.rows());
    for cy in 0..grid.rows() {
        for cx in 0..grid.cols() {
            let (x0, y0, x1, y1) = grid.bounds(cx, cy);
            out.push(rect_descriptor(gray, x0, y0, x1, y1)?);
        }
    }
    Ok(out)
}

/// Window offsets ordered so that ties favour the identity correspondence.
fn search_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut offs: Vec<(isize, isize)> = (-r..=r).flat_map(|dy| (-r..=r).map(move |dx| (dx, dy))).collect();
    offs.sort_by_key(|&(dx, dy)| (dx * dx + dy * dy, dy, dx));
    offs
}

pub fn warp_reference(gray: &GrayImage, reference: &LabImage, d: usize, search_radius: usize) -> Result<WarpResult> {
    if d < 2 {
        return Err(Error::invalid(format!("cell size must be at least 2, got {d}")));
    }
    Error::check_dims(gray.dims(), reference.dims())?;
    let (w, h) = gray.dims();
    let grid = CellGrid::new(w, h, d);
    let (cols, rows) = (grid.cols(), grid.rows());

    let query = cell_descriptors(gray, grid)?;
    let target = cell_descriptors(&reference.luminance(), grid)?;
    let mut mean_ab = Vec::with_capacity(cols * rows);
    for cy in 0..rows {
        for cx in 0..cols {
            let (x0, y0, x1, y1) = grid.bounds(cx, cy);
            let (mut sa, mut sb) = (0.0, 0.0);
            for y in y0..y1 {
                for x in x0..x1 {
                    sa += reference.a[y * w + x];
                    sb += reference.b[y * w + x];
                }
            }
            let n = ((x1 - x0) * (y1 - y0)) as f64;
            mean_ab.push((sa / n, sb / n));
        }
    }

    let offsets = search_offsets(search_radius);
    let mut similarity = Plane::zeros(cols, rows);
    let mut matches = Vec::with_capacity(cols * rows);
    let mut warped_a = Plane::zeros(w, h);
    let mut warped_b = Plane::zeros(w, h);
    for cy in 0..rows {
        for cx in 0..cols {
            let q = &query[cy * cols + cx];
            let mut best: Option<(f64, usize, usize)> = None;
            for &(dx, dy) in &offsets {
                let (tx, ty) = (cx as isize + dx, cy as isize + dy);
                if tx < 0 || ty < 0 || tx >= cols as isize || ty >= rows as isize {
                    continue;
                }
                let (tx, ty) = (tx as usize, ty as usize);
                let s = cosine_similarity(q, &target[ty * cols + tx])?;
                if best.is_none_or(|(b, _, _)| s > b) {
                    best = Some((s, tx, ty));
                }
            }
            let (s, tx, ty) = best.expect("identity offset is always in range");
            similarity.set(cx, cy, s);
            matches.push((tx, ty));
            let (ma, mb) = mean_ab[ty * cols + tx];
            let (x0, y0, x1, y1) = grid.bounds(cx, cy);
            for y in y0..y1 {
                for x in x0..x1 {
                    warped_a.set(x, y, ma);
                    warped_b.set(x, y, mb);
                }
            }
        }
    }
    Ok(WarpResult {
        cell_size: d,
        warped_a,
        warped_b,
        similarity,
        matches,
    })
}

/// One hint per cell whose similarity is strictly above `s_eps`.
pub fn extract_coarse_hints(wr: &WarpResult, seg: &SegmentMap, s_eps: f64) -> Result<HintSet> {
    if !(0.0..=1.0).contains(&s_eps) {
        return Err(Error::invalid(format!("similarity threshold {s_eps} outside [0, 1]")));
    }
    Error::check_dims(wr.warped_a.dims(), seg.dims())?;
    let (w, h) = seg.dims();
    let grid = CellGrid::new(w, h, wr.cell_size);
    let mut hints = Vec::new();
    for cy in 0..grid.rows() {
        for cx in 0..grid.cols() {
            let sim = wr.similarity.get(cx, cy);
            if sim <= s_eps {
                continue;
            }
            let (x0, y0, x1, y1) = grid.bounds(cx, cy);
            let (mut sa, mut sb) = (0.0, 0.0);
            for y in y0..y1 {
                for x in x0..x1 {
                    sa += wr.warped_a.get(x, y);
                    sb += wr.warped_b.get(x, y);
                }
            }
            let n = ((x1 - x0) * (y1 - y0)) as f64;
            let (px, py) = grid.center(cx, cy);
            hints.push(HintPoint {
                cx: px,
                cy: py,
                a: sa / n,
                b: sb / n,
                confidence: sim.clamp(0.0, 1.0),
                segment: seg.label(px, py),
            });
        }
    }
    Ok(HintSet {
        cell_size: wr.cell_size,
        hints,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ClusterLabel {
    Noise,
    Cluster(usize),
}

/// DBSCAN over 2-D points with closed Euclidean balls of radius `eps`; a
/// point is core when its neighbourhood (itself included) holds at least
/// `min_pts` points. Points are visited in input order and clusters grow
/// breadth-first, so labels are deterministic.
pub fn dbscan(points: &[[f64; 2]], eps: f64, min_pts: usize) -> Result<Vec<ClusterLabel>> {
    if !(eps > 0.0) {
        return Err(Error::invalid(format!("eps must be positive, got {eps}")));
    }
    if min_pts == 0 {
        return Err(Error::invalid("min_pts must be at least 1"));
    }
    let eps2 = eps * eps;
    let neighbours = |i: usize| -> Vec<usize> {
        let p = points[i];
        (0..points.len())
            .filter(|&j| {
                let (dx, dy) = (points[j][0] - p[0], points[j][1] - p[1]);
                dx * dx + dy * dy <= eps2
            })
            .collect()
    };

    let mut labels: Vec<Option<ClusterLabel>> = vec![None; points.len()];
    let mut next = 0;
    for i in 0..points.len() {
        if labels[i].is_some() {
            continue;
        }
        let seeds = neighbours(i);
        if seeds.len() < min_pts {
            labels[i] = Some(ClusterLabel::Noise);
            continue;
        }
        let id = next;
        next += 1;
        labels[i] = Some(ClusterLabel::Cluster(id));
        let mut queue: VecDeque<usize> = seeds.into_iter().filter(|&j| j != i).collect();
        while let Some(j) = queue.pop_front() {
            match labels[j] {
                Some(ClusterLabel::Cluster(_)) => continue,
                Some(ClusterLabel::Noise) => {
                    // border point
                    labels[j] = Some(ClusterLabel::Cluster(id));
                    continue;
                }
                None => labels[j] = Some(ClusterLabel::Cluster(id)),
            }
            let nb = neighbours(j);
            if nb.len() >= min_pts {
                queue.extend(nb.into_iter().filter(|&k| !matches!(labels[k], Some(ClusterLabel::Cluster(_)))));
            }
        }
    }
    Ok(labels.into_iter().map(|l| l.expect("every point visited")).collect())
}

/// Per segment, keeps every hint when there are at most `n_h`; otherwise
/// keeps the largest DBSCAN cluster (ties to the lowest cluster id). A
/// segment left with no hints keeps its single most confident one.
pub fn refine_hints(coarse: &HintSet, seg: &SegmentMap, n_h: usize, eps: f64, min_pts: usize) -> Result<HintSet> {
    if n_h == 0 {
        return Err(Error::invalid("hint cap must be at least 1"));
    }
    let mut by_segment: Vec<Vec<usize>> = vec![Vec::new(); seg.count()];
    for (i, h) in coarse.hints.iter().enumerate() {
        if h.cx >= seg.width() || h.cy >= seg.height() {
            return Err(Error::invalid(format!("hint ({}, {}) lies outside the image", h.cx, h.cy)));
        }
        by_segment[seg.label(h.cx, h.cy)].push(i);
    }
    let mut keep = vec![false; coarse.hints.len()];
    for members in &by_segment {
        if members.len() <= n_h {
            members.iter().for_each(|&i| keep[i] = true);
            continue;
        }
        let points: Vec<[f64; 2]> = members.iter().map(|&i| [coarse.hints[i].a, coarse.hints[i].b]).collect();
        let labels = dbscan(&points, eps, min_pts)?;
        let n_clusters = labels
            .iter()
            .filter_map(|l| match l {
                ClusterLabel::Cluster(c) => Some(c + 1),
                ClusterLabel::Noise => None,
            })
            .max()
            .unwrap_or(0);
        if n_clusters == 0 {
            let best = members
                .iter()
                .copied()
                .reduce(|a, b| if coarse.hints[b].confidence > coarse.hints[a].confidence { b } else { a })
                .expect("segment has hints");
            keep[best] = true;
            continue;
        }
        let mut sizes = vec![0usize; n_clusters];
        for l in &labels {
            if let ClusterLabel::Cluster(c) = l {
                sizes[*c] += 1;
            }
        }
        let winner = (0..n_clusters).fold(0, |best, c| if sizes[c] > sizes[best] { c } else { best });
        for (&i, l) in members.iter().zip(&labels) {
            if *l == ClusterLabel::Cluster(winner) {
                keep[i] = true;
            }
        }
    }
    let hints = coarse
        .hints
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(h, _)| h.clone())
        .collect();
    Ok(HintSet {
        cell_size: coarse.cell_size,
        hints,
    })
}
