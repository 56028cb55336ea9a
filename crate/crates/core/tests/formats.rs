use std::io::Cursor;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma};
use refcolor_core::descriptors::load_feature_grid;
use refcolor_core::segmentation::{load_segment_map, RleSegments};
use refcolor_core::{Error, FeatureGrid, SegmentMap};

fn luma16_png(w: u32, h: u32, f: impl Fn(u32, u32) -> u16) -> Vec<u8> {
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_fn(w, h, |x, y| Luma([f(x, y)]));
    let mut out = Cursor::new(Vec::new());
    DynamicImage::ImageLuma16(buf).write_to(&mut out, ImageFormat::Png).unwrap();
    out.into_inner()
}

fn assert_partition(seg: &SegmentMap) {
    let sizes = seg.sizes();
    assert_eq!(sizes.len(), seg.count());
    assert!(sizes.iter().all(|&s| s > 0));
    assert_eq!(sizes.iter().sum::<usize>(), seg.width() * seg.height());
    assert!(seg.labels().iter().all(|&l| (l as usize) < seg.count()));
}

#[test]
fn sixteen_bit_labels_are_relabeled() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("seg.png");
    std::fs::write(&path, luma16_png(8, 6, |x, _| if x < 3 { 3 } else { 7 })).unwrap();
    let seg = load_segment_map(&path, (8, 6)).unwrap();
    assert_eq!(seg.count(), 2);
    assert_eq!(seg.label(0, 0), 0);
    assert_eq!(seg.label(7, 5), 1);
    assert_partition(&seg);
}

#[test]
fn large_label_values_survive() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("seg.png");
    std::fs::write(&path, luma16_png(4, 4, |x, y| [60000, 300, 9, 65535][((x / 2) + 2 * (y / 2)) as usize])).unwrap();
    let seg = load_segment_map(&path, (4, 4)).unwrap();
    assert_eq!(seg.count(), 4);
    // relabeling follows label value order
    assert_eq!([seg.label(0, 0), seg.label(2, 0), seg.label(0, 2), seg.label(2, 2)], [2, 1, 0, 3]);
}

#[test]
fn smaller_map_is_resized() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("seg.png");
    std::fs::write(&path, luma16_png(4, 4, |x, y| (x / 2 + 2 * (y / 2)) as u16)).unwrap();
    let seg = load_segment_map(&path, (33, 17)).unwrap();
    assert_eq!(seg.dims(), (33, 17));
    assert_eq!(seg.count(), 4);
    assert_partition(&seg);
    assert_eq!(seg.label(0, 0), 0);
    assert_eq!(seg.label(32, 16), 3);
}

#[test]
fn rle_json_loads() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("seg.json");
    std::fs::write(&path, r#"{"width": 3, "height": 2, "rle": [5, 4, 2, 2]}"#).unwrap();
    let seg = load_segment_map(&path, (3, 2)).unwrap();
    assert_eq!(seg.labels(), &[1, 1, 1, 1, 0, 0]);

    let rle = seg.to_rle();
    let text = serde_json::to_string(&rle).unwrap();
    let back: RleSegments = serde_json::from_str(&text).unwrap();
    assert_eq!(SegmentMap::from_rle(&back).unwrap(), seg);
}

#[test]
fn rle_with_wrong_area_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("seg.json");
    std::fs::write(&path, r#"{"width": 3, "height": 2, "rle": [0, 5]}"#).unwrap();
    assert!(load_segment_map(&path, (3, 2)).is_err());
}

#[test]
fn zero_byte_file_is_a_parse_error() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["seg.png", "seg.json"] {
        let path = dir.path().join(name);
        std::fs::write(&path, b"").unwrap();
        assert!(matches!(load_segment_map(&path, (4, 4)), Err(Error::Format(_))));
    }
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    assert!(matches!(load_segment_map(&dir.path().join("nope.png"), (4, 4)), Err(Error::Io { .. })));
}

#[test]
fn segment_png_round_trip() {
    let seg = SegmentMap::from_raw(5, 3, (0..15).map(|i| (i * 7 % 4) as u32).collect()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("seg.png");
    std::fs::write(&path, seg.to_png_bytes().unwrap()).unwrap();
    assert_eq!(load_segment_map(&path, (5, 3)).unwrap(), seg);
}

fn grid_bytes(gw: u32, gh: u32, dim: u32, cell: u32, data: &[f32]) -> Vec<u8> {
    let mut out = b"FGRD".to_vec();
    for v in [gw, gh, dim, cell] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

#[test]
fn feature_grid_file_layout() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.fgrd");
    let data: Vec<f32> = (0..12).map(|i| i as f32 * 0.5).collect();
    std::fs::write(&path, grid_bytes(3, 2, 2, 8, &data)).unwrap();
    let g = load_feature_grid(&path).unwrap();
    assert_eq!(g.grid_dims(), (3, 2));
    assert_eq!(g.dim(), 2);
    assert_eq!(g.cell_size(), 8);
    // row-major cells, dim fastest
    assert_eq!(g.cell(0, 0), &[0.0, 0.5]);
    assert_eq!(g.cell(2, 0), &[2.0, 2.5]);
    assert_eq!(g.cell(1, 1), &[4.0, 4.5]);
    assert!(g.covers(24, 16));
    assert!(!g.covers(25, 16));

    let out = dir.path().join("copy.fgrd");
    g.save(&out).unwrap();
    assert_eq!(std::fs::read(&out).unwrap(), std::fs::read(&path).unwrap());
    assert_eq!(FeatureGrid::from_bytes(&g.to_bytes()).unwrap(), g);
}

#[test]
fn malformed_feature_grids_are_rejected() {
    let good = grid_bytes(2, 2, 1, 4, &[1.0, 2.0, 3.0, 4.0]);
    assert!(FeatureGrid::from_bytes(&good).is_ok());
    assert!(FeatureGrid::from_bytes(&good[..good.len() - 1]).is_err());
    assert!(FeatureGrid::from_bytes(&good[..10]).is_err());
    assert!(FeatureGrid::from_bytes(&[]).is_err());
    let mut bad_magic = good.clone();
    bad_magic[0] = b'X';
    assert!(FeatureGrid::from_bytes(&bad_magic).is_err());
    let mut extra = good;
    extra.extend_from_slice(&[0; 4]);
    assert!(FeatureGrid::from_bytes(&extra).is_err());
    assert!(FeatureGrid::from_bytes(&grid_bytes(0, 2, 1, 4, &[])).is_err());
}
