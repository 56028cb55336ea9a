use rand::Rng;
use refcolor_core::propagation::{build_affinity, propagate, SolverConfig};
use refcolor_core::{luminance_of, GrayImage, HintPoint, HintSet};
use refcolor_testkit::{dense_propagation, random_scene, rng};

fn random_hints(r: &mut impl Rng, w: usize, h: usize, d: usize, count: usize) -> HintSet {
    let cols = w.div_ceil(d);
    let rows = h.div_ceil(d);
    let mut cells: Vec<(usize, usize)> = (0..rows).flat_map(|y| (0..cols).map(move |x| (x, y))).collect();
    let mut hints = Vec::new();
    for _ in 0..count.min(cells.len()) {
        let (cx, cy) = cells.swap_remove(r.random_range(0..cells.len()));
        hints.push(HintPoint {
            cx: (cx * d + d / 2).min(w - 1),
            cy: (cy * d + d / 2).min(h - 1),
            a: r.random_range(-80.0..80.0),
            b: r.random_range(-80.0..80.0),
            confidence: 1.0,
            segment: 0,
        });
    }
    hints.sort_by_key(|h| (h.cy, h.cx));
    HintSet { cell_size: d, hints }
}

fn check_invariants(gray: &GrayImage, hints: &HintSet, a: &[f64], b: &[f64]) {
    let (w, h) = gray.dims();
    let (lo_a, hi_a) = hints.hints.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, u), p| (l.min(p.a), u.max(p.a)));
    let (lo_b, hi_b) = hints.hints.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, u), p| (l.min(p.b), u.max(p.b)));
    for i in 0..w * h {
        assert!(a[i] >= lo_a && a[i] <= hi_a, "a[{i}] = {} outside [{lo_a}, {hi_a}]", a[i]);
        assert!(b[i] >= lo_b && b[i] <= hi_b);
    }
    let d = hints.cell_size;
    for p in &hints.hints {
        let (cx, cy) = (p.cx / d, p.cy / d);
        for y in cy * d..((cy + 1) * d).min(h) {
            for x in cx * d..((cx + 1) * d).min(w) {
                assert_eq!(a[y * w + x].to_bits(), p.a.to_bits());
                assert_eq!(b[y * w + x].to_bits(), p.b.to_bits());
            }
        }
    }
}

#[test]
fn matches_dense_direct_solve() {
    let cfg = SolverConfig {
        tol: 1e-11,
        max_iter: 200_000,
        ..SolverConfig::default()
    };
    for seed in 0..25 {
        let mut r = rng(seed);
        let w = r.random_range(4..=16);
        let h = r.random_range(4..=16);
        let d = r.random_range(2..=4);
        let gray = luminance_of(&random_scene(&mut r, w, h));
        let count = r.random_range(1..=4);
        let hints = random_hints(&mut r, w, h, d, count);
        let out = propagate(&gray, &hints, &cfg).unwrap();
        assert!(out.meta.converged(), "seed {seed}: {:?}", out.meta);
        let (ea, eb) = dense_propagation(&gray, &hints, cfg.sigma_floor);
        for i in 0..w * h {
            assert!((out.a.data()[i] - ea[i]).abs() < 1e-5, "seed {seed} a[{i}]: {} vs {}", out.a.data()[i], ea[i]);
            assert!((out.b.data()[i] - eb[i]).abs() < 1e-5);
        }
        check_invariants(&gray, &hints, out.a.data(), out.b.data());
    }
}

#[test]
fn rows_are_stochastic_on_random_images() {
    for seed in 0..10 {
        let mut r = rng(seed);
        let gray = luminance_of(&random_scene(&mut r, 20, 13));
        let g = build_affinity(&gray, 0.01).unwrap();
        for row in 0..g.len() {
            let s: f64 = g.row(row).map(|(_, w)| w).sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!(g.row(row).all(|(_, w)| w >= 0.0));
        }
    }
}

#[test]
fn converges_on_128_square_inputs() {
    let cfg = SolverConfig {
        omega: 1.6,
        tol: 1e-6,
        max_iter: 10_000,
        ..SolverConfig::default()
    };
    for seed in 0..3 {
        let mut r = rng(seed);
        let gray = luminance_of(&random_scene(&mut r, 128, 128));
        let count = [1, 6, 30][seed as usize];
        let hints = random_hints(&mut r, 128, 128, 16, count);
        let out = propagate(&gray, &hints, &cfg).unwrap();
        assert!(out.meta.converged(), "seed {seed}: {:?}", out.meta);
        assert!(out.meta.residual() < 1e-6);
        check_invariants(&gray, &hints, out.a.data(), out.b.data());
    }
}
