use std::sync::Arc;

use rand::Rng;
use refcolor_core::refinement::{apply_substitution, argmin, compose_reference, distance_table, select_assignment};
use refcolor_core::{luminance_of, rgb_to_lab, Assignment, CandidateSet, Metric, Source};
use refcolor_testkit::{exhaustive_argmin, exhaustive_table, random_rgb, random_scene, random_segments, rng};

fn random_instance(seed: u64) -> (refcolor_core::GrayImage, CandidateSet, refcolor_core::SegmentMap) {
    let mut r = rng(seed);
    let w = r.random_range(12..=32);
    let h = r.random_range(12..=32);
    let n = r.random_range(1..=4);
    let k = r.random_range(1..=6);
    let gray = luminance_of(&random_scene(&mut r, w, h));
    let images: Vec<_> = (0..n)
        .map(|_| if r.random_bool(0.5) { random_scene(&mut r, w, h) } else { random_rgb(&mut r, w, h) })
        .collect();
    let ids = (0..n).map(|i| format!("c{i}")).collect();
    let cands = CandidateSet::from_rgb(ids, &images).unwrap();
    let seg = random_segments(&mut r, w, h, k, 4);
    (gray, cands, seg)
}

#[test]
fn selection_equals_brute_force_scan() {
    for seed in 0..60 {
        let (gray, cands, seg) = random_instance(seed);
        for metric in [Metric::L1, Metric::L2, Metric::Cosine] {
            let expect = exhaustive_argmin(&exhaustive_table(&gray, &cands, &seg, metric));
            let got = select_assignment(&gray, None, &cands, &seg, metric).unwrap();
            let got: Vec<usize> = got.candidate_indices().into_iter().map(Option::unwrap).collect();
            assert_eq!(got, expect, "seed {seed} metric {metric:?}");
        }
    }
}

#[test]
fn argmin_is_invariant_under_monotone_transform() {
    for seed in 100..120 {
        let (gray, cands, seg) = random_instance(seed);
        let table = distance_table(&gray, None, &cands, &seg, Metric::Cosine).unwrap();
        for row in &table {
            let moved: Vec<f64> = row.iter().map(|d| 2.0 * d + 1.0).collect();
            assert_eq!(argmin(row), argmin(&moved));
        }
    }
}

#[test]
fn identical_luminance_beats_inverted() {
    let mut r = rng(5);
    let img = random_scene(&mut r, 32, 32);
    let gray = luminance_of(&img);
    let inverted = refcolor_core::RgbImage::new(32, 32, img.data().iter().map(|v| 255 - v).collect()).unwrap();
    let cands = CandidateSet::from_rgb(vec!["same".into(), "inv".into()], &[img, inverted]).unwrap();
    let seg = random_segments(&mut r, 32, 32, 5, 4);
    let table = exhaustive_table(&gray, &cands, &seg, Metric::Cosine);
    assert!(table.iter().all(|row| row[0] == 0.0));
    let a = select_assignment(&gray, None, &cands, &seg, Metric::Cosine).unwrap();
    assert_eq!(a, Assignment::uniform(seg.count(), 0));
}

#[test]
fn substitution_is_local() {
    for seed in 200..230 {
        let (gray, cands, seg) = random_instance(seed);
        let base = select_assignment(&gray, None, &cands, &seg, Metric::Cosine).unwrap();
        let before = compose_reference(&cands, &seg, &base).unwrap();
        let mut r = rng(seed);
        let j = r.random_range(0..seg.count());
        let source = if r.random_bool(0.3) {
            Source::Patch(Arc::new(rgb_to_lab(&random_rgb(&mut r, seg.width(), seg.height()))))
        } else {
            Source::Candidate(r.random_range(0..cands.len()))
        };
        let next = apply_substitution(&base, &cands, j, source).unwrap();
        let after = compose_reference(&cands, &seg, &next).unwrap();
        for (p, &label) in seg.labels().iter().enumerate() {
            if label as usize != j {
                assert_eq!(before.image.l[p].to_bits(), after.image.l[p].to_bits());
                assert_eq!(before.image.a[p].to_bits(), after.image.a[p].to_bits());
                assert_eq!(before.image.b[p].to_bits(), after.image.b[p].to_bits());
            }
        }
        // swapping back restores the original composition
        let restored = apply_substitution(&next, &cands, j, base.get(j).unwrap().clone()).unwrap();
        assert_eq!(compose_reference(&cands, &seg, &restored).unwrap().image, before.image);
    }
}

#[test]
fn feature_grids_drive_selection_when_complete() {
    use refcolor_core::FeatureGrid;
    let mut r = rng(9);
    let img = random_scene(&mut r, 16, 8);
    let gray = luminance_of(&img);
    let seg = refcolor_core::SegmentMap::from_raw(16, 8, (0..128).map(|i| u32::from(i % 16 >= 8)).collect()).unwrap();
    let query = FeatureGrid::new(2, 1, 2, 8, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    // candidate 0 matches the left cell, candidate 1 the right cell
    let g0 = FeatureGrid::new(2, 1, 2, 8, vec![1.0, 0.0, 1.0, 0.0]).unwrap();
    let g1 = FeatureGrid::new(2, 1, 2, 8, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
    let labs = vec![rgb_to_lab(&img), rgb_to_lab(&img)];
    let cands = CandidateSet::new(vec!["a".into(), "b".into()], labs.clone(), vec![Some(g0.clone()), Some(g1)]).unwrap();
    let a = select_assignment(&gray, Some(&query), &cands, &seg, Metric::Cosine).unwrap();
    assert_eq!(a.candidate_indices(), vec![Some(0), Some(1)]);
    // a missing grid falls back to the built-in descriptor (all ties -> 0)
    let partial = CandidateSet::new(vec!["a".into(), "b".into()], labs, vec![Some(g0), None]).unwrap();
    let a = select_assignment(&gray, Some(&query), &partial, &seg, Metric::Cosine).unwrap();
    assert_eq!(a.candidate_indices(), vec![Some(0), Some(0)]);
}
