//! Session state and its on-disk layout.
//!
//! ```text
//! <data_dir>/<id>/
//!   session.json        committed revision, retained previous revision, config
//!   input.png           the uploaded grayscale image, as received
//!   segments.json       segment map (RLE)
//!   candidates/<i>.png  candidate i, in id order
//!   rev-<n>/            full artifacts of revision n (current and previous only)
//!   results/<n>.png     result of every revision until the session is evicted
//! ```
//!
//! A revision directory is complete before `session.json` names it, so a
//! crash mid-mutation leaves the last committed revision intact.

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use refcolor_core::io;
use refcolor_core::metrics::colorfulness;
use refcolor_core::refinement::{load_assignment, save_assignment};
use refcolor_core::segmentation::RleSegments;
use refcolor_core::{lab_to_rgb, Assignment, CandidateSet, GrayImage, RgbImage, SegmentMap, SolverMeta};
use refcolor_pipeline::{recolorize, PipelineConfig};
use serde::{Deserialize, Serialize};

use crate::error::{ApiError, ApiResult};

pub const SESSION_FILE: &str = "session.json";

/// Everything fixed at creation time.
#[derive(Debug)]
pub struct SessionData {
    pub gray: GrayImage,
    pub seg: SegmentMap,
    pub cands: CandidateSet,
    pub cfg: PipelineConfig,
}

/// A committed revision.
#[derive(Clone, Debug)]
pub struct Revision {
    pub number: u64,
    /// Revision whose artifacts are retained for undo.
    pub previous: Option<u64>,
    pub assignment: Assignment,
    pub meta: RevisionMeta,
}

/// Contents of `rev-<n>/meta.json`; carries no revision number so that an
/// undo can copy the directory verbatim.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RevisionMeta {
    pub coarse_hints: usize,
    pub hints: usize,
    pub colorfulness: f64,
    pub solver: SolverMeta,
}

#[derive(Debug, Serialize, Deserialize)]
struct SessionFile {
    id: String,
    candidates: Vec<String>,
    config: PipelineConfig,
    revision: u64,
    previous: Option<u64>,
    last_active: f64,
}

#[derive(Debug)]
pub struct Session {
    pub id: String,
    pub dir: PathBuf,
    pub data: Arc<SessionData>,
    /// Held for the whole of a mutation; mutations on one session are serialized.
    pub edit: tokio::sync::Mutex<()>,
    committed: RwLock<Arc<Revision>>,
    last_active: Mutex<SystemTime>,
}

fn unix_secs(t: SystemTime) -> f64 {
    t.duration_since(UNIX_EPOCH).unwrap_or_default().as_secs_f64()
}

fn from_unix_secs(s: f64) -> SystemTime {
    UNIX_EPOCH + Duration::from_secs_f64(s.max(0.0))
}

pub fn rev_dir(dir: &Path, n: u64) -> PathBuf {
    dir.join(format!("rev-{n}"))
}

pub fn result_path(dir: &Path, n: u64) -> PathBuf {
    dir.join("results").join(format!("{n}.png"))
}

fn candidate_path(dir: &Path, i: usize) -> PathBuf {
    dir.join("candidates").join(format!("{i}.png"))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

/// Artifacts of one recolorization, not yet written anywhere.
pub struct Rendered {
    pub assignment: Assignment,
    pub reference: RgbImage,
    pub hints: refcolor_core::HintSet,
    pub output: RgbImage,
    pub meta: RevisionMeta,
}

pub fn render(data: &SessionData, assignment: &Assignment) -> ApiResult<Rendered> {
    let c = recolorize(&data.gray, &data.seg, &data.cands, assignment, &data.cfg)?;
    let meta = RevisionMeta {
        coarse_hints: c.coarse_hints,
        hints: c.hints.len(),
        colorfulness: colorfulness(&c.output),
        solver: c.solver,
    };
    Ok(Rendered {
        assignment: c.reference.assignment.clone(),
        reference: lab_to_rgb(&c.reference.image),
        hints: c.hints,
        output: c.output,
        meta,
    })
}

/// Writes `rev-<n>` through a staging directory.
pub fn write_revision(dir: &Path, n: u64, r: &Rendered) -> ApiResult<()> {
    let target = rev_dir(dir, n);
    let staging = dir.join(format!("rev-{n}.partial"));
    let _ = std::fs::remove_dir_all(&staging);
    std::fs::create_dir_all(&staging)?;
    let written = (|| -> refcolor_core::Result<()> {
        io::save_rgb_png(&staging.join("reference.png"), &r.reference)?;
        save_assignment(&staging, &r.assignment)?;
        io::write_json(&staging.join("hints.json"), &r.hints)?;
        io::save_rgb_png(&staging.join("result.png"), &r.output)?;
        io::write_json(&staging.join("meta.json"), &r.meta)
    })();
    if let Err(e) = written {
        let _ = std::fs::remove_dir_all(&staging);
        return Err(e.into());
    }
    let _ = std::fs::remove_dir_all(&target);
    std::fs::rename(&staging, &target)?;
    Ok(())
}

/// Copies `rev-<from>` to `rev-<to>` file by file.
pub fn copy_revision(dir: &Path, from: u64, to: u64) -> ApiResult<()> {
    let src = rev_dir(dir, from);
    let staging = dir.join(format!("rev-{to}.partial"));
    let _ = std::fs::remove_dir_all(&staging);
    std::fs::create_dir_all(&staging)?;
    for entry in std::fs::read_dir(&src)? {
        let entry = entry?;
        std::fs::copy(entry.path(), staging.join(entry.file_name()))?;
    }
    std::fs::rename(&staging, rev_dir(dir, to))?;
    Ok(())
}

fn read_meta(dir: &Path) -> refcolor_core::Result<RevisionMeta> {
    io::read_json(&dir.join("meta.json"))
}

impl Session {
    /// Persists the immutable inputs of a new session under `dir`, which
    /// must not exist yet. Returns the data as it will read back after a restart.
    pub fn persist_inputs(
        dir: &Path,
        input_png: &[u8],
        seg: &SegmentMap,
        cands: &CandidateSet,
        cfg: &PipelineConfig,
    ) -> ApiResult<SessionData> {
        std::fs::create_dir_all(dir.join("candidates"))?;
        std::fs::create_dir_all(dir.join("results"))?;
        std::fs::write(dir.join("input.png"), input_png)?;
        io::write_json(&dir.join("segments.json"), &seg.to_rle())?;
        for i in 0..cands.len() {
            io::save_rgb_png(&candidate_path(dir, i), &lab_to_rgb(cands.get(i)))?;
        }
        load_inputs(dir, cands.ids().to_vec(), cfg.clone())
    }

    pub fn new(id: String, dir: PathBuf, data: Arc<SessionData>, revision: Revision, last_active: SystemTime) -> Self {
        Self {
            id,
            dir,
            data,
            edit: tokio::sync::Mutex::new(()),
            committed: RwLock::new(Arc::new(revision)),
            last_active: Mutex::new(last_active),
        }
    }

    /// Reloads a session from its directory.
    pub fn load(dir: &Path) -> ApiResult<Self> {
        let file: SessionFile = io::read_json(&dir.join(SESSION_FILE))?;
        let data = load_inputs(dir, file.candidates, file.config)?;
        let current = rev_dir(dir, file.revision);
        let assignment = load_assignment(&current)?;
        let meta = read_meta(&current)?;
        let previous = file.previous.filter(|&p| rev_dir(dir, p).is_dir());
        let revision = Revision {
            number: file.revision,
            previous,
            assignment,
            meta,
        };
        let session = Self::new(file.id, dir.to_path_buf(), Arc::new(data), revision, from_unix_secs(file.last_active));
        session.prune();
        Ok(session)
    }

    pub fn current(&self) -> Arc<Revision> {
        self.committed.read().expect("revision lock").clone()
    }

    pub fn touch(&self) {
        *self.last_active.lock().expect("activity lock") = SystemTime::now();
    }

    pub fn last_active(&self) -> SystemTime {
        *self.last_active.lock().expect("activity lock")
    }

    /// Makes `revision` current. Its `rev-<n>` directory must already be
    /// complete; the result is copied to `results/` and `session.json`
    /// rewritten before readers can see the new revision.
    pub fn commit(&self, revision: Revision) -> ApiResult<Arc<Revision>> {
        let n = revision.number;
        std::fs::copy(rev_dir(&self.dir, n).join("result.png"), result_path(&self.dir, n))?;
        self.touch();
        let file = SessionFile {
            id: self.id.clone(),
            candidates: self.data.cands.ids().to_vec(),
            config: self.data.cfg.clone(),
            revision: n,
            previous: revision.previous,
            last_active: unix_secs(self.last_active()),
        };
        let bytes = serde_json::to_vec_pretty(&file).map_err(|e| ApiError::internal(e.to_string()))?;
        write_atomic(&self.dir.join(SESSION_FILE), &bytes)?;
        let revision = Arc::new(revision);
        *self.committed.write().expect("revision lock") = revision.clone();
        self.prune();
        Ok(revision)
    }

    /// Removes revision directories other than the current and previous ones.
    fn prune(&self) {
        let rev = self.current();
        let keep = [Some(rev.number), rev.previous];
        let Ok(entries) = std::fs::read_dir(&self.dir) else {
            return;
        };
        for entry in entries.flatten() {
            let name = entry.file_name().to_string_lossy().into_owned();
            let Some(rest) = name.strip_prefix("rev-") else {
                continue;
            };
            let retained = rest.parse::<u64>().is_ok_and(|n| keep.contains(&Some(n)));
            if !retained {
                let _ = std::fs::remove_dir_all(entry.path());
            }
        }
    }

    /// `rev-<n>` if revision `n` is still retained.
    pub fn retained_rev_dir(&self, n: u64) -> Option<PathBuf> {
        let rev = self.current();
        (n == rev.number || rev.previous == Some(n)).then(|| rev_dir(&self.dir, n))
    }
}

fn load_inputs(dir: &Path, ids: Vec<String>, cfg: PipelineConfig) -> ApiResult<SessionData> {
    let gray = io::load_gray_png(&dir.join("input.png"))?;
    let rle: RleSegments = io::read_json(&dir.join("segments.json"))?;
    let seg = SegmentMap::from_rle(&rle)?;
    let images = (0..ids.len())
        .map(|i| io::load_rgb_png(&candidate_path(dir, i)))
        .collect::<refcolor_core::Result<Vec<_>>>()?;
    let cands = CandidateSet::from_rgb(ids, &images)?;
    Ok(SessionData { gray, seg, cands, cfg })
}
