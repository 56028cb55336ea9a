//! End-to-end colorization: segment the input, pick a reference candidate per
//! segment, compose, derive hint colors and propagate them.
//!
//! Every run writes its artifacts to an output directory: `reference.png`,
//! `assignment.json`, `hints.json`, `result.png` and `run.json`, the last one
//! echoing the configuration and solver statistics. A failed run leaves none
//! of them behind.

mod config;
mod error;

use std::path::{Path, PathBuf};

use refcolor_core::descriptors::load_feature_grid;
use refcolor_core::hints::{extract_coarse_hints, refine_hints, warp_reference};
use refcolor_core::io;
use refcolor_core::metrics::colorfulness;
use refcolor_core::propagation::{colorize, propagate};
use refcolor_core::refinement::{compose_reference, save_assignment, select_assignment};
use refcolor_core::segmentation::{load_segment_map, superpixel_segments};
use refcolor_core::{
    lab_to_rgb, Assignment, CandidateSet, ComposedReference, FeatureGrid, GrayImage, HintSet, RgbImage, SegmentMap,
    SolverMeta,
};
use refcolor_providers::{condition_bundle, fetch_candidates, load_candidates_dir, GenerationRequest};
use serde::Serialize;

pub use config::{CannyConfig, PipelineConfig, ProviderConfig};
pub use error::{PipelineError, Stage};
use error::StageExt;

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

pub fn load_input(path: &Path) -> Result<GrayImage> {
    io::load_gray_png(path).stage(Stage::Input)
}

pub fn segment(gray: &GrayImage, cfg: &PipelineConfig) -> Result<SegmentMap> {
    match &cfg.segments {
        Some(path) => load_segment_map(path, gray.dims()),
        None => superpixel_segments(gray, cfg.n_segments, cfg.compactness),
    }
    .stage(Stage::Segmentation)
}

pub fn acquire_candidates(gray: &GrayImage, cfg: &PipelineConfig) -> Result<CandidateSet> {
    let provider = cfg
        .provider
        .as_ref()
        .ok_or_else(|| PipelineError::message(Stage::Config, "no candidate provider configured"))?;
    match provider {
        ProviderConfig::Dir { path } => load_candidates_dir(path, gray.dims()).stage(Stage::Candidates),
        ProviderConfig::Http {
            endpoint,
            timeout_secs,
            hed_map,
        } => {
            let hed_png = hed_map.as_deref().map(io::read_bytes).transpose().stage(Stage::Input)?;
            let (n_canny, n_hed) = cfg.condition_split(hed_png.is_some());
            let bundle = condition_bundle(gray, cfg.canny.low, cfg.canny.high, cfg.canny.sigma).stage(Stage::Candidates)?;
            let req = GenerationRequest {
                caption: cfg.caption.clone(),
                n_canny,
                n_hed,
                canny_png: bundle.canny_png,
                hed_png: if n_hed > 0 { hed_png } else { None },
                seed: Some(cfg.seed),
            };
            let timeout = std::time::Duration::from_secs_f64(*timeout_secs);
            fetch_candidates(endpoint, &req, bundle.size, timeout).stage(Stage::Candidates)
        }
    }
}

pub fn load_query_features(cfg: &PipelineConfig) -> Result<Option<FeatureGrid>> {
    cfg.features.as_deref().map(load_feature_grid).transpose().stage(Stage::Input)
}

pub fn select(
    gray: &GrayImage,
    features: Option<&FeatureGrid>,
    cands: &CandidateSet,
    seg: &SegmentMap,
    cfg: &PipelineConfig,
) -> Result<Assignment> {
    select_assignment(gray, features, cands, seg, cfg.metric).stage(Stage::Selection)
}

/// Stages downstream of a fixed assignment.
#[derive(Clone, Debug)]
pub struct Colorization {
    pub reference: ComposedReference,
    pub coarse_hints: usize,
    pub hints: HintSet,
    pub solver: SolverMeta,
    pub output: RgbImage,
}

pub fn hints_for(gray: &GrayImage, seg: &SegmentMap, reference: &ComposedReference, cfg: &PipelineConfig) -> Result<(usize, HintSet)> {
    let warp = warp_reference(gray, &reference.image, cfg.cell_size, cfg.search_radius).stage(Stage::Hints)?;
    let coarse = extract_coarse_hints(&warp, seg, cfg.s_eps).stage(Stage::Hints)?;
    let fine = refine_hints(&coarse, seg, cfg.hint_cap, cfg.dbscan_eps, cfg.dbscan_min_pts).stage(Stage::Hints)?;
    Ok((coarse.len(), fine))
}

pub fn recolorize(
    gray: &GrayImage,
    seg: &SegmentMap,
    cands: &CandidateSet,
    assignment: &Assignment,
    cfg: &PipelineConfig,
) -> Result<Colorization> {
    let reference = compose_reference(cands, seg, assignment).stage(Stage::Composition)?;
    let (coarse_hints, hints) = hints_for(gray, seg, &reference, cfg)?;
    let prop = propagate(gray, &hints, &cfg.solver).stage(Stage::Propagation)?;
    let output = colorize(gray, &prop.a, &prop.b).stage(Stage::Propagation)?;
    Ok(Colorization {
        reference,
        coarse_hints,
        hints,
        solver: prop.meta,
        output,
    })
}

/// How far a run goes before writing its artifacts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum StopAfter {
    Reference,
    Hints,
    Result,
}

#[derive(Clone, Debug)]
pub struct PipelineResult {
    pub candidate_ids: Vec<String>,
    pub segments: SegmentMap,
    pub reference: ComposedReference,
    pub hints: Option<HintSet>,
    pub output: Option<RgbImage>,
    pub solver: Option<SolverMeta>,
    pub colorfulness: Option<f64>,
}

#[derive(Serialize)]
struct RunRecord<'a> {
    input: &'a Path,
    stop_after: StopAfter,
    config: &'a PipelineConfig,
    candidates: &'a [String],
    segments: usize,
    coarse_hints: Option<usize>,
    hints: Option<usize>,
    solver: Option<SolverMeta>,
    colorfulness: Option<f64>,
}

pub fn run_pipeline(input: &Path, out_dir: &Path, cfg: &PipelineConfig) -> Result<PipelineResult> {
    run_until(input, out_dir, cfg, StopAfter::Result)
}

pub fn run_until(input: &Path, out_dir: &Path, cfg: &PipelineConfig, stop: StopAfter) -> Result<PipelineResult> {
    cfg.validate()?;
    let gray = load_input(input)?;
    let features = load_query_features(cfg)?;
    let seg = segment(&gray, cfg)?;
    let cands = acquire_candidates(&gray, cfg)?;
    let assignment = select(&gray, features.as_ref(), &cands, &seg, cfg)?;

    let (reference, coarse, hints, solver, output) = if stop == StopAfter::Result {
        let c = recolorize(&gray, &seg, &cands, &assignment, cfg)?;
        (c.reference, Some(c.coarse_hints), Some(c.hints), Some(c.solver), Some(c.output))
    } else {
        let reference = compose_reference(&cands, &seg, &assignment).stage(Stage::Composition)?;
        let (coarse, hints) = if stop == StopAfter::Hints {
            let (n, h) = hints_for(&gray, &seg, &reference, cfg)?;
            (Some(n), Some(h))
        } else {
            (None, None)
        };
        (reference, coarse, hints, None, None)
    };
    let result = PipelineResult {
        candidate_ids: cands.ids().to_vec(),
        segments: seg,
        reference,
        hints,
        colorfulness: output.as_ref().map(colorfulness),
        output,
        solver,
    };

    let record = RunRecord {
        input,
        stop_after: stop,
        config: cfg,
        candidates: &result.candidate_ids,
        segments: result.segments.count(),
        coarse_hints: coarse,
        hints: result.hints.as_ref().map(HintSet::len),
        solver: result.solver,
        colorfulness: result.colorfulness,
    };
    write_outputs(out_dir, &result, &record).stage(Stage::Output)?;
    Ok(result)
}

/// Writes into a hidden staging directory first, then moves the files into
/// `out_dir`, so an aborted run leaves nothing behind.
fn write_outputs(out_dir: &Path, result: &PipelineResult, record: &RunRecord<'_>) -> refcolor_core::Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| refcolor_core::Error::Io {
        path: out_dir.to_path_buf(),
        source: e,
    })?;
    let staging = out_dir.join(format!(".refcolor-partial-{}", std::process::id()));
    let outcome = (|| {
        std::fs::create_dir_all(&staging).map_err(|e| refcolor_core::Error::Io {
            path: staging.clone(),
            source: e,
        })?;
        io::save_rgb_png(&staging.join("reference.png"), &lab_to_rgb(&result.reference.image))?;
        save_assignment(&staging, &result.reference.assignment)?;
        if let Some(h) = &result.hints {
            io::write_json(&staging.join("hints.json"), h)?;
        }
        if let Some(out) = &result.output {
            io::save_rgb_png(&staging.join("result.png"), out)?;
        }
        io::write_json(&staging.join("run.json"), record)?;
        promote(&staging, out_dir)
    })();
    let _ = std::fs::remove_dir_all(&staging);
    outcome
}

fn promote(staging: &Path, out_dir: &Path) -> refcolor_core::Result<()> {
    let mut names: Vec<PathBuf> = std::fs::read_dir(staging)
        .and_then(|rd| rd.map(|e| e.map(|e| e.path())).collect())
        .map_err(|e| refcolor_core::Error::Io {
            path: staging.to_path_buf(),
            source: e,
        })?;
    names.sort();
    let mut moved = Vec::new();
    for src in names {
        let dst = out_dir.join(src.file_name().expect("staged file has a name"));
        if let Err(e) = std::fs::rename(&src, &dst) {
            for m in moved {
                let _ = std::fs::remove_file(m);
            }
            return Err(refcolor_core::Error::Io { path: dst, source: e });
        }
        moved.push(dst);
    }
    Ok(())
}
