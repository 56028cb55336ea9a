//! Reference refinement: pick the nearest candidate for every segment, compose
//! the per-segment union into one reference, and apply user substitutions.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::color::{rgb_to_lab, GrayImage, LabImage, RgbImage};
use crate::descriptors::{distance, pool_segment, segment_descriptors, FeatureGrid, Metric, SegmentDescriptor};
use crate::error::{Error, Result};
use crate::io;
use crate::segmentation::SegmentMap;

/// Segments smaller than this inherit the choice of their largest neighbour.
pub const MIN_SEGMENT_PIXELS: usize = 4;

/// Reference candidates of identical size, in Lab.
#[derive(Clone, Debug)]
pub struct CandidateSet {
    ids: Vec<String>,
    candidates: Vec<Arc<LabImage>>,
    feature_grids: Vec<Option<FeatureGrid>>,
}

impl CandidateSet {
    pub fn new(ids: Vec<String>, candidates: Vec<LabImage>, feature_grids: Vec<Option<FeatureGrid>>) -> Result<Self> {
        if candidates.is_empty() {
            return Err(Error::invalid("candidate set is empty"));
        }
        if ids.len() != candidates.len() || feature_grids.len() != candidates.len() {
            return Err(Error::invalid("ids, candidates and feature grids differ in length"));
        }
        let dims = candidates[0].dims();
        for c in &candidates {
            Error::check_dims(dims, c.dims())?;
        }
        let mut sorted = ids.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != ids.len() {
            return Err(Error::invalid("candidate ids must be unique"));
        }
        Ok(Self {
            ids,
            candidates: candidates.into_iter().map(Arc::new).collect(),
            feature_grids,
        })
    }

    /// Converts RGB candidates to Lab on ingestion.
    pub fn from_rgb(ids: Vec<String>, images: &[RgbImage]) -> Result<Self> {
        let n = images.len();
        Self::new(ids, images.iter().map(rgb_to_lab).collect(), vec![None; n])
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn dims(&self) -> (usize, usize) {
        self.candidates[0].dims()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|i| i == id)
    }

    pub fn get(&self, i: usize) -> &LabImage {
        &self.candidates[i]
    }

    pub fn feature_grid(&self, i: usize) -> Option<&FeatureGrid> {
        self.feature_grids[i].as_ref()
    }

    pub fn all_have_features(&self) -> bool {
        self.feature_grids.iter().all(Option::is_some)
    }
}

/// Where a segment takes its colors from.
#[derive(Clone, Debug, PartialEq)]
pub enum Source {
    Candidate(usize),
    Patch(Arc<LabImage>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Assignment {
    choices: Vec<Source>,
}

impl Assignment {
    pub fn new(choices: Vec<Source>) -> Self {
        Self { choices }
    }

    pub fn uniform(segments: usize, candidate: usize) -> Self {
        Self {
            choices: vec![Source::Candidate(candidate); segments],
        }
    }

    pub fn len(&self) -> usize {
        self.choices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.choices.is_empty()
    }

    pub fn choices(&self) -> &[Source] {
        &self.choices
    }

    pub fn get(&self, j: usize) -> Option<&Source> {
        self.choices.get(j)
    }

    /// Candidate index per segment, `None` for user patches.
    pub fn candidate_indices(&self) -> Vec<Option<usize>> {
        self.choices
            .iter()
            .map(|s| match s {
                Source::Candidate(i) => Some(*i),
                Source::Patch(_) => None,
            })
            .collect()
    }

    fn validate(&self, cands: &CandidateSet, segments: usize) -> Result<()> {
        if self.choices.len() != segments {
            return Err(Error::invalid(format!(
                "assignment has {} entries for {segments} segments",
                self.choices.len()
            )));
        }
        for s in &self.choices {
            match s {
                Source::Candidate(i) if *i >= cands.len() => {
                    return Err(Error::OutOfRange {
                        index: *i,
                        count: cands.len(),
                    })
                }
                Source::Patch(p) => Error::check_dims(cands.dims(), p.dims())?,
                _ => {}
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct ComposedReference {
    pub image: LabImage,
    pub assignment: Assignment,
}

/// Descriptor of every segment of the query and every candidate.
///
/// Returns `(query, per_candidate)` where `per_candidate[i][j]` describes
/// candidate `i` on segment `j`. Feature grids are used only when the query
/// and every candidate carry one.
pub fn describe_segments(
    gray: &GrayImage,
    gray_features: Option<&FeatureGrid>,
    cands: &CandidateSet,
    seg: &SegmentMap,
) -> Result<(Vec<SegmentDescriptor>, Vec<Vec<SegmentDescriptor>>)> {
    match gray_features {
        Some(grid) if cands.all_have_features() => {
            let pool = |g: &FeatureGrid| -> Result<Vec<SegmentDescriptor>> {
                (0..seg.count()).map(|j| pool_segment(g, seg, j)).collect()
            };
            let query = pool(grid)?;
            let per = (0..cands.len())
                .map(|i| pool(cands.feature_grid(i).expect("checked above")))
                .collect::<Result<_>>()?;
            Ok((query, per))
        }
        _ => {
            let query = segment_descriptors(gray, seg)?;
            let per = (0..cands.len())
                .map(|i| segment_descriptors(&cands.get(i).luminance(), seg))
                .collect::<Result<_>>()?;
            Ok((query, per))
        }
    }
}

/// `table[j][i]` = distance between the query and candidate `i` on segment `j`.
pub fn distance_table(
    gray: &GrayImage,
    gray_features: Option<&FeatureGrid>,
    cands: &CandidateSet,
    seg: &SegmentMap,
    metric: Metric,
) -> Result<Vec<Vec<f64>>> {
    check_inputs(gray, cands, seg)?;
    let (query, per) = describe_segments(gray, gray_features, cands, seg)?;
    (0..seg.count())
        .map(|j| {
            (0..cands.len())
                .map(|i| distance(metric, &query[j], &per[i][j]))
                .collect()
        })
        .collect()
}

fn check_inputs(gray: &GrayImage, cands: &CandidateSet, seg: &SegmentMap) -> Result<()> {
    if cands.is_empty() {
        return Err(Error::invalid("candidate set is empty"));
    }
    Error::check_dims(gray.dims(), cands.dims())?;
    Error::check_dims(gray.dims(), seg.dims())
}

/// Index of the smallest value; ties go to the lowest index.
pub fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v < values[best] {
            best = i;
        }
    }
    best
}

pub fn select_assignment(
    gray: &GrayImage,
    gray_features: Option<&FeatureGrid>,
    cands: &CandidateSet,
    seg: &SegmentMap,
    metric: Metric,
) -> Result<Assignment> {
    let table = distance_table(gray, gray_features, cands, seg, metric)?;
    let mut picks: Vec<usize> = table.iter().map(|row| argmin(row)).collect();

    let sizes = seg.sizes();
    let adjacency = seg.adjacency();
    let inherited: Vec<(usize, usize)> = (0..seg.count())
        .filter(|&j| sizes[j] < MIN_SEGMENT_PIXELS)
        .filter_map(|j| {
            adjacency[j]
                .keys()
                .copied()
                .filter(|&k| sizes[k] >= MIN_SEGMENT_PIXELS)
                .max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a)))
                .map(|k| (j, picks[k]))
        })
        .collect();
    for (j, pick) in inherited {
        picks[j] = pick;
    }
    Ok(Assignment::new(picks.into_iter().map(Source::Candidate).collect()))
}

pub fn compose_reference(cands: &CandidateSet, seg: &SegmentMap, assign: &Assignment) -> Result<ComposedReference> {
    Error::check_dims(cands.dims(), seg.dims())?;
    assign.validate(cands, seg.count())?;
    let (w, h) = seg.dims();
    let n = w * h;
    let (mut l, mut a, mut b) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for (p, &label) in seg.labels().iter().enumerate() {
        let src: &LabImage = match &assign.choices[label as usize] {
            Source::Candidate(i) => cands.get(*i),
            Source::Patch(img) => img,
        };
        l[p] = src.l[p];
        a[p] = src.a[p];
        b[p] = src.b[p];
    }
    Ok(ComposedReference {
        image: LabImage::new(w, h, l, a, b)?,
        assignment: assign.clone(),
    })
}

/// Returns a copy of `assign` with entry `j` replaced by `source`.
pub fn apply_substitution(assign: &Assignment, cands: &CandidateSet, j: usize, source: Source) -> Result<Assignment> {
    if j >= assign.len() {
        return Err(Error::OutOfRange {
            index: j,
            count: assign.len(),
        });
    }
    match &source {
        Source::Candidate(i) if *i >= cands.len() => {
            return Err(Error::OutOfRange {
                index: *i,
                count: cands.len(),
            })
        }
        Source::Patch(p) => Error::check_dims(cands.dims(), p.dims())?,
        _ => {}
    }
    let mut next = assign.clone();
    next.choices[j] = source;
    Ok(next)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceRecord {
    Candidate(usize),
    Patch(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub j: usize,
    pub source: SourceRecord,
}

/// On-disk form: `{"segments":[{"j":0,"source":{"candidate":3}}, ...]}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentFile {
    pub segments: Vec<SegmentRecord>,
}

impl AssignmentFile {
    pub fn describe(assign: &Assignment) -> Self {
        let segments = assign
            .choices
            .iter()
            .enumerate()
            .map(|(j, s)| SegmentRecord {
                j,
                source: match s {
                    Source::Candidate(i) => SourceRecord::Candidate(*i),
                    Source::Patch(_) => SourceRecord::Patch(patch_file_name(j)),
                },
            })
            .collect();
        Self { segments }
    }
}

pub fn patch_file_name(j: usize) -> String {
    format!("patch_{j}.png")
}

/// Writes `assignment.json` plus one PNG per user patch into `dir`.
pub fn save_assignment(dir: &Path, assign: &Assignment) -> Result<()> {
    for (j, s) in assign.choices.iter().enumerate() {
        if let Source::Patch(p) = s {
            io::save_lab_png(&dir.join(patch_file_name(j)), p)?;
        }
    }
    let file = AssignmentFile::describe(assign);
    io::write_json(&dir.join("assignment.json"), &file)
}

/// Reads `assignment.json` from `dir`, resolving patch files relative to it.
pub fn load_assignment(dir: &Path) -> Result<Assignment> {
    let file: AssignmentFile = io::read_json(&dir.join("assignment.json"))?;
    let mut choices: Vec<Option<Source>> = vec![None; file.segments.len()];
    for rec in file.segments {
        if rec.j >= choices.len() || choices[rec.j].is_some() {
            return Err(Error::Format(format!("assignment entry j={} is out of place", rec.j)));
        }
        choices[rec.j] = Some(match rec.source {
            SourceRecord::Candidate(i) => Source::Candidate(i),
            SourceRecord::Patch(name) => Source::Patch(Arc::new(rgb_to_lab(&io::load_rgb_png(&dir.join(name))?))),
        });
    }
    Ok(Assignment::new(choices.into_iter().map(|c| c.expect("every j filled")).collect()))
}
