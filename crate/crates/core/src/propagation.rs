//! Dense chrominance from sparse hints.
//!
//! Every free pixel is pulled toward the affinity-weighted average of its
//! 3x3 neighbours, `U_r = sum_s w_rs U_s`, with hinted cells held fixed. The
//! weights are non-negative Gaussians of the lightness difference and each row
//! sums to one, so the solution stays within the range of the hint values.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::color::{lab_to_rgb, GrayImage, LabImage, Plane, RgbImage};
use crate::error::{Error, Result};
use crate::hints::{CellGrid, HintSet};

/// Row-stochastic sparse neighbour weights in CSR layout.
#[derive(Clone, Debug)]
pub struct AffinityGraph {
    width: usize,
    height: usize,
    row_start: Vec<usize>,
    cols: Vec<u32>,
    weights: Vec<f64>,
}

impl AffinityGraph {
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_start[r]..self.row_start[r + 1];
        self.cols[span.clone()]
            .iter()
            .zip(&self.weights[span])
            .map(|(&c, &w)| (c as usize, w))
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub sigma_floor: f64,
    pub omega: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 10_000,
            sigma_floor: 0.01,
            omega: 1.6,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::invalid("solver tol must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("solver max_iter must be at least 1"));
        }
        if !(self.omega > 0.0 && self.omega < 2.0) {
            return Err(Error::invalid(format!("omega must lie in (0, 2), got {}", self.omega)));
        }
        if !(self.sigma_floor > 0.0) {
            return Err(Error::invalid("sigma_floor must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverMeta {
    pub a: ChannelStats,
    pub b: ChannelStats,
    pub constrained_pixels: usize,
    pub no_hints: bool,
}

impl SolverMeta {
    pub fn iterations(&self) -> usize {
        self.a.iterations.max(self.b.iterations)
    }

    pub fn residual(&self) -> f64 {
        self.a.residual.max(self.b.residual)
    }

    pub fn converged(&self) -> bool {
        self.no_hints || (self.a.converged && self.b.converged)
    }
}

#[derive(Clone, Debug)]
pub struct Propagation {
    pub a: Plane,
    pub b: Plane,
    pub meta: SolverMeta,
}

pub fn build_affinity(gray: &GrayImage, sigma_floor: f64) -> Result<AffinityGraph> {
    let (w, h) = gray.dims();
    if w < 2 || h < 2 {
        return Err(Error::invalid(format!("affinity needs at least a 2x2 image, got {w}x{h}")));
    }
    if !(sigma_floor > 0.0) {
        return Err(Error::invalid("sigma_floor must be positive"));
    }
    let mut row_start = Vec::with_capacity(w * h + 1);
    let mut cols = Vec::with_capacity(w * h * 8);
    let mut weights = Vec::with_capacity(w * h * 8);
    row_start.push(0);
    let mut nb: Vec<(u32, f64)> = Vec::with_capacity(8);
    for y in 0..h {
        for x in 0..w {
            let center = gray.get(x, y);
            let (mut sum, mut sum2, mut n) = (0.0, 0.0, 0.0);
            nb.clear();
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    if nx < 0 || ny < 0 || nx >= w as isize || ny >= h as isize {
                        continue;
                    }
                    let (nx, ny) = (nx as usize, ny as usize);
                    let v = gray.get(nx, ny);
                    sum += v;
                    sum2 += v * v;
                    n += 1.0;
                    if (dx, dy) != (0, 0) {
                        let d = v - center;
                        nb.push(((ny * w + nx) as u32, d * d));
                    }
                }
            }
            let mean = sum / n;
            let var = (sum2 / n - mean * mean).max(0.0);
            let sigma = var.sqrt().max(sigma_floor);
            let denom = 2.0 * sigma * sigma;
            // shift by the smallest squared difference so at least one weight is 1
            let min_d2 = nb.iter().map(|&(_, d2)| d2).fold(f64::INFINITY, f64::min);
            let total: f64 = nb.iter().map(|&(_, d2)| (-(d2 - min_d2) / denom).exp()).sum();
            for &(c, d2) in &nb {
                cols.push(c);
                weights.push((-(d2 - min_d2) / denom).exp() / total);
            }
            row_start.push(cols.len());
        }
    }
    Ok(AffinityGraph {
        width: w,
        height: h,
        row_start,
        cols,
        weights,
    })
}

/// Pixels covered by hint cells, with their hint values.
fn constraints(hints: &HintSet, w: usize, h: usize) -> Result<(Vec<bool>, Vec<f64>, Vec<f64>)> {
    if hints.cell_size == 0 {
        return Err(Error::invalid("hint cell size must be positive"));
    }
    let grid = CellGrid::new(w, h, hints.cell_size);
    let mut fixed = vec![false; w * h];
    let mut a = vec![0.0; w * h];
    let mut b = vec![0.0; w * h];
    for hint in &hints.hints {
        if hint.cx >= w || hint.cy >= h {
            return Err(Error::invalid(format!("hint ({}, {}) lies outside the image", hint.cx, hint.cy)));
        }
        let (cx, cy) = grid.cell_of(hint.cx, hint.cy);
        let (x0, y0, x1, y1) = grid.bounds(cx, cy);
        for y in y0..y1 {
            for x in x0..x1 {
                let i = y * w + x;
                fixed[i] = true;
                a[i] = hint.a;
                b[i] = hint.b;
            }
        }
    }
    Ok((fixed, a, b))
}

/// Fills free pixels with the value of the nearest constrained pixel (BFS order).
fn nearest_fill(fixed: &[bool], values: &mut [f64], w: usize, h: usize) {
    let mut seen = fixed.to_vec();
    let mut queue: VecDeque<usize> = (0..w * h).filter(|&i| fixed[i]).collect();
    while let Some(i) = queue.pop_front() {
        let (x, y) = (i % w, i / w);
        let v = values[i];
        let mut visit = |j: usize| {
            if !seen[j] {
                seen[j] = true;
                values[j] = v;
                queue.push_back(j);
            }
        };
        if x > 0 {
            visit(i - 1);
        }
        if x + 1 < w {
            visit(i + 1);
        }
        if y > 0 {
            visit(i - w);
        }
        if y + 1 < h {
            visit(i + w);
        }
    }
}

/// Largest `|U_r - sum_s w_rs U_s|` over free pixels.
pub fn max_residual(graph: &AffinityGraph, fixed: &[bool], u: &[f64]) -> f64 {
    (0..graph.len())
        .filter(|&r| !fixed[r])
        .map(|r| {
            let avg: f64 = graph.row(r).map(|(s, w)| w * u[s]).sum();
            (u[r] - avg).abs()
        })
        .fold(0.0, f64::max)
}

/// In-place SOR on the free pixels of `u`.
pub fn sor_solve(graph: &AffinityGraph, fixed: &[bool], u: &mut [f64], cfg: &SolverConfig) -> ChannelStats {
    let mut stats = ChannelStats::default();
    for iter in 1..=cfg.max_iter {
        let mut sweep_max: f64 = 0.0;
        for r in 0..graph.len() {
            if fixed[r] {
                continue;
            }
            let avg: f64 = graph.row(r).map(|(s, w)| w * u[s]).sum();
            let delta = avg - u[r];
            sweep_max = sweep_max.max(delta.abs());
            u[r] += cfg.omega * delta;
        }
        stats.iterations = iter;
        if sweep_max < cfg.tol {
            stats.residual = max_residual(graph, fixed, u);
            if stats.residual < cfg.tol {
                stats.converged = true;
                return stats;
            }
        }
    }
    stats.residual = max_residual(graph, fixed, u);
    stats.converged = stats.residual < cfg.tol;
    stats
}

pub fn propagate(gray: &GrayImage, hints: &HintSet, cfg: &SolverConfig) -> Result<Propagation> {
    cfg.validate()?;
    let (w, h) = gray.dims();
    if hints.is_empty() {
        return Ok(Propagation {
            a: Plane::zeros(w, h),
            b: Plane::zeros(w, h),
            meta: SolverMeta {
                no_hints: true,
                ..SolverMeta::default()
            },
        });
    }
    let graph = build_affinity(gray, cfg.sigma_floor)?;
    let (fixed, mut a, mut b) = constraints(hints, w, h)?;
    let constrained = fixed.iter().filter(|&&f| f).count();

    let solve = |u: &mut Vec<f64>, pick: fn(&crate::hints::HintPoint) -> f64| {
        let lo = hints.hints.iter().map(pick).fold(f64::INFINITY, f64::min);
        let hi = hints.hints.iter().map(pick).fold(f64::NEG_INFINITY, f64::max);
        nearest_fill(&fixed, u, w, h);
        let stats = sor_solve(&graph, &fixed, u, cfg);
        for (v, &f) in u.iter_mut().zip(&fixed) {
            if !f {
                *v = v.clamp(lo, hi);
            }
        }
        stats
    };
    let stats_a = solve(&mut a, |p| p.a);
    let stats_b = solve(&mut b, |p| p.b);
    Ok(Propagation {
        a: Plane::new(w, h, a)?,
        b: Plane::new(w, h, b)?,
        meta: SolverMeta {
            a: stats_a,
            b: stats_b,
            constrained_pixels: constrained,
            no_hints: false,
        },
    })
}

/// Attaches `(a, b)` to the gray image as lightness and converts to sRGB.
pub fn colorize(gray: &GrayImage, a: &Plane, b: &Plane) -> Result<RgbImage> {
    Ok(lab_to_rgb(&LabImage::from_gray_ab(gray, a, b)?))
}
