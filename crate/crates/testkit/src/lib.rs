//! Brute-force oracles and synthetic inputs for the refcolor test suites.
//!
//! Everything here is written the slow, obvious way and shares no code path
//! with the routines it is used to check beyond the public data types.

use nalgebra::{DMatrix, DVector};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use refcolor_core::descriptors::{builtin_descriptor, distance};
use refcolor_core::segmentation::segment_mask;
use refcolor_core::{CandidateSet, GrayImage, HintSet, Metric, RgbImage, SegmentMap};

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}

/// O(n^2) DBSCAN: core points by direct counting, clusters as connected
/// components of the core graph numbered by their smallest member, border
/// points joined to the lowest-numbered adjacent cluster. `None` is noise.
pub fn dbscan_reference(points: &[[f64; 2]], eps: f64, min_pts: usize) -> Vec<Option<usize>> {
    let n = points.len();
    let near = |i: usize, j: usize| {
        let dx = points[i][0] - points[j][0];
        let dy = points[i][1] - points[j][1];
        (dx * dx + dy * dy).sqrt() <= eps
    };
    let core: Vec<bool> = (0..n).map(|i| (0..n).filter(|&j| near(i, j)).count() >= min_pts).collect();

    // union-find over core points
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in 0..n {
            if core[i] && core[j] && near(i, j) {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
    }
    let mut cluster_of_root = vec![None; n];
    let mut next = 0;
    let mut labels = vec![None; n];
    for i in 0..n {
        if core[i] {
            let r = find(&mut parent, i);
            if cluster_of_root[r].is_none() {
                cluster_of_root[r] = Some(next);
                next += 1;
            }
            labels[i] = cluster_of_root[r];
        }
    }
    for i in 0..n {
        if !core[i] {
            labels[i] = (0..n).filter(|&j| core[j] && near(i, j)).filter_map(|j| labels[j]).min();
        }
    }
    labels
}

/// Full distance table `[segment][candidate]` from per-mask descriptors.
pub fn exhaustive_table(gray: &GrayImage, cands: &CandidateSet, seg: &SegmentMap, metric: Metric) -> Vec<Vec<f64>> {
    (0..seg.count())
        .map(|j| {
            let mask = segment_mask(seg, j).unwrap();
            let q = builtin_descriptor(gray, &mask).unwrap();
            (0..cands.len())
                .map(|i| {
                    let c = builtin_descriptor(&cands.get(i).luminance(), &mask).unwrap();
                    distance(metric, &q, &c).unwrap()
                })
                .collect()
        })
        .collect()
}

/// First index attaining the minimum of each row.
pub fn exhaustive_argmin(table: &[Vec<f64>]) -> Vec<usize> {
    table
        .iter()
        .map(|row| {
            let min = row.iter().cloned().fold(f64::INFINITY, f64::min);
            row.iter().position(|&v| v == min).unwrap()
        })
        .collect()
}

/// Affinity weights written out directly from the Gaussian definition.
fn dense_weights(gray: &GrayImage, sigma_floor: f64) -> DMatrix<f64> {
    let (w, h) = gray.dims();
    let n = w * h;
    let mut m = DMatrix::zeros(n, n);
    for y in 0..h {
        for x in 0..w {
            let mut window = Vec::new();
            for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                    window.push((nx, ny));
                }
            }
            let vals: Vec<f64> = window.iter().map(|&(nx, ny)| gray.get(nx, ny)).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
            let sigma = var.sqrt().max(sigma_floor);
            let r = y * w + x;
            let mut total = 0.0;
            for &(nx, ny) in &window {
                if (nx, ny) == (x, y) {
                    continue;
                }
                let d = gray.get(nx, ny) - gray.get(x, y);
                let wt = (-d * d / (2.0 * sigma * sigma)).exp();
                m[(r, ny * w + nx)] = wt;
                total += wt;
            }
            for c in 0..n {
                m[(r, c)] /= total;
            }
        }
    }
    m
}

/// Direct LU solve of the constrained harmonic system for both channels.
pub fn dense_propagation(gray: &GrayImage, hints: &HintSet, sigma_floor: f64) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = gray.dims();
    let n = w * h;
    let weights = dense_weights(gray, sigma_floor);
    let d = hints.cell_size;
    let mut fixed: Vec<Option<(f64, f64)>> = vec![None; n];
    for hint in &hints.hints {
        let (cx, cy) = (hint.cx / d, hint.cy / d);
        for y in cy * d..((cy + 1) * d).min(h) {
            for x in cx * d..((cx + 1) * d).min(w) {
                fixed[y * w + x] = Some((hint.a, hint.b));
            }
        }
    }
    let mut system = DMatrix::zeros(n, n);
    let mut rhs_a = DVector::zeros(n);
    let mut rhs_b = DVector::zeros(n);
    for r in 0..n {
        system[(r, r)] = 1.0;
        match fixed[r] {
            Some((a, b)) => {
                rhs_a[r] = a;
                rhs_b[r] = b;
            }
            None => {
                for c in 0..n {
                    if c != r {
                        system[(r, c)] = -weights[(r, c)];
                    }
                }
            }
        }
    }
    let lu = system.lu();
    let a = lu.solve(&rhs_a).expect("nonsingular");
    let b = lu.solve(&rhs_b).expect("nonsingular");
    (a.iter().copied().collect(), b.iter().copied().collect())
}

pub fn random_rgb(rng: &mut StdRng, w: usize, h: usize) -> RgbImage {
    RgbImage::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()]).unwrap()
}

/// Smooth random image: a few random blobs over a random gradient.
pub fn random_scene(rng: &mut StdRng, w: usize, h: usize) -> RgbImage {
    let base: [f64; 3] = [rng.random_range(0.0..255.0), rng.random_range(0.0..255.0), rng.random_range(0.0..255.0)];
    let tilt: [f64; 3] = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
    let blobs: Vec<(f64, f64, f64, [f64; 3])> = (0..rng.random_range(2..6))
        .map(|_| {
            (
                rng.random_range(0.0..w as f64),
                rng.random_range(0.0..h as f64),
                rng.random_range(3.0..(w.min(h) as f64 / 2.0).max(4.0)),
                [rng.random_range(0.0..255.0), rng.random_range(0.0..255.0), rng.random_range(0.0..255.0)],
            )
        })
        .collect();
    RgbImage::from_fn(w, h, |x, y| {
        let mut c = [0.0; 3];
        for k in 0..3 {
            c[k] = base[k] + tilt[k] * (x as f64 + y as f64);
        }
        for &(bx, by, r, col) in &blobs {
            if (x as f64 - bx).hypot(y as f64 - by) < r {
                c = col;
            }
        }
        c.map(|v| v.clamp(0.0, 255.0) as u8)
    })
    .unwrap()
}

/// Voronoi partition with `k` random sites, every segment at least `min_size` pixels.
pub fn random_segments(rng: &mut StdRng, w: usize, h: usize, k: usize, min_size: usize) -> SegmentMap {
    loop {
        let sites: Vec<(f64, f64)> = (0..k)
            .map(|_| (rng.random_range(0.0..w as f64), rng.random_range(0.0..h as f64)))
            .collect();
        let labels: Vec<u32> = (0..w * h)
            .map(|i| {
                let (x, y) = ((i % w) as f64, (i / w) as f64);
                let mut best = 0;
                for (s, &(sx, sy)) in sites.iter().enumerate() {
                    let (bx, by) = sites[best];
                    if (x - sx).hypot(y - sy) < (x - bx).hypot(y - by) {
                        best = s;
                    }
                }
                best as u32
            })
            .collect();
        let seg = SegmentMap::from_raw(w, h, labels).unwrap();
        if seg.count() == k && seg.sizes().iter().all(|&s| s >= min_size) {
            return seg;
        }
    }
}

/// Rotates the HSV hue of every pixel by `degrees`; lightness changes too.
pub fn hue_rotate(img: &RgbImage, degrees: f64) -> RgbImage {
    RgbImage::from_fn(img.width(), img.height(), |x, y| {
        let [r, g, b] = img.pixel(x, y).map(|c| f64::from(c) / 255.0);
        let max = r.max(g).max(b);
        let min = r.min(g).min(b);
        let chroma = max - min;
        let mut hue = if chroma == 0.0 {
            0.0
        } else if max == r {
            60.0 * ((g - b) / chroma).rem_euclid(6.0)
        } else if max == g {
            60.0 * ((b - r) / chroma + 2.0)
        } else {
            60.0 * ((r - g) / chroma + 4.0)
        };
        hue = (hue + degrees).rem_euclid(360.0);
        let xc = chroma * (1.0 - ((hue / 60.0).rem_euclid(2.0) - 1.0).abs());
        let (r1, g1, b1) = match (hue / 60.0) as u32 {
            0 => (chroma, xc, 0.0),
            1 => (xc, chroma, 0.0),
            2 => (0.0, chroma, xc),
            3 => (0.0, xc, chroma),
            4 => (xc, 0.0, chroma),
            _ => (chroma, 0.0, xc),
        };
        let m = max - chroma;
        [r1, g1, b1].map(|c| ((c + m) * 255.0).round().clamp(0.0, 255.0) as u8)
    })
    .unwrap()
}

/// Deterministic colorful test scene: sky gradient, sun, field, house.
pub fn landscape(w: usize, h: usize) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| {
        let fx = x as f64 / w as f64;
        let fy = y as f64 / h as f64;
        if (fx - 0.78).hypot(fy - 0.2) < 0.1 {
            return [250, 210, 40];
        }
        if fx > 0.15 && fx < 0.45 && fy > 0.45 && fy < 0.75 {
            if fy < 0.55 {
                return [170, 40, 35];
            }
            return [225, 205, 160];
        }
        if fy > 0.62 {
            let g = 150.0 - 60.0 * (fy - 0.62) / 0.38;
            return [40, g as u8, 50];
        }
        let t = fy / 0.62;
        [(70.0 + 90.0 * t) as u8, (130.0 + 70.0 * t) as u8, (230.0 - 10.0 * t) as u8]
    })
    .unwrap()
}
