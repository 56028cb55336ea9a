//! Candidate acquisition.
//!
//! Candidates come either from a directory of PNGs (with optional `.fgrd`
//! feature-grid sidecars) or from an external generation service spoken to
//! over a small JSON/HTTP protocol:
//!
//! ```text
//! POST <endpoint>
//! {"caption": "...", "n_canny": 4, "n_hed": 4,
//!  "canny_png": "<base64>", "hed_png": "<base64>", "seed": 7}
//!
//! 200 OK
//! {"candidates": [{"id": "c0", "png": "<base64>"}, ...]}
//! ```
//!
//! `hed_png` and `seed` are omitted when absent. Every returned image must
//! match the size of the condition maps.

use std::collections::HashSet;
use std::path::{Path, PathBuf};
use std::time::Duration;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use refcolor_core::descriptors::load_feature_grid;
use refcolor_core::imaging::canny_edges;
use refcolor_core::io::{decode_rgb_png, encode_edge_png};
use refcolor_core::{rgb_to_lab, CandidateSet, GrayImage};
use serde::{Deserialize, Serialize};

/// Largest response body accepted from a generation service.
const MAX_RESPONSE_BYTES: u64 = 512 << 20;

#[derive(Debug, thiserror::Error)]
pub enum ProviderError {
    #[error("candidate directory {0} contains no PNG files")]
    EmptyDirectory(PathBuf),
    #[error("candidate {name} is {}x{}, expected {}x{}", actual.0, actual.1, expected.0, expected.1)]
    DimensionMismatch {
        name: String,
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("invalid generation request: {0}")]
    InvalidRequest(String),
    #[error("generation service timed out after {0:?}")]
    Timeout(Duration),
    #[error("cannot reach generation service: {0}")]
    Transport(String),
    #[error("generation service answered HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("malformed generation response: {0}")]
    MalformedBody(String),
    #[error("generation service returned {returned} candidates, {requested} requested")]
    CountMismatch { requested: usize, returned: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{name}: {source}")]
    Candidate {
        name: String,
        #[source]
        source: refcolor_core::Error,
    },
    #[error(transparent)]
    Core(#[from] refcolor_core::Error),
}

impl ProviderError {
    /// True for failures that happened before any HTTP response was read.
    pub fn is_transport(&self) -> bool {
        matches!(self, Self::Transport(_) | Self::Timeout(_))
    }
}

pub type Result<T, E = ProviderError> = std::result::Result<T, E>;

/// Loads every `*.png` in `dir` in lexicographic filename order. A sibling
/// `<stem>.fgrd` becomes that candidate's feature grid.
pub fn load_candidates_dir(dir: &Path, expected_size: (usize, usize)) -> Result<CandidateSet> {
    let io_err = |source| ProviderError::Io {
        path: dir.to_path_buf(),
        source,
    };
    let mut pngs: Vec<PathBuf> = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io_err)? {
        let path = entry.map_err(io_err)?.path();
        if path.is_file() && path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            pngs.push(path);
        }
    }
    if pngs.is_empty() {
        return Err(ProviderError::EmptyDirectory(dir.to_path_buf()));
    }
    pngs.sort_by(|a, b| a.file_name().cmp(&b.file_name()));

    let mut ids = Vec::with_capacity(pngs.len());
    let mut labs = Vec::with_capacity(pngs.len());
    let mut grids = Vec::with_capacity(pngs.len());
    for path in &pngs {
        let name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let bytes = std::fs::read(path).map_err(|source| ProviderError::Io {
            path: path.clone(),
            source,
        })?;
        let rgb = decode_rgb_png(&bytes).map_err(|source| ProviderError::Candidate {
            name: name.clone(),
            source,
        })?;
        if rgb.dims() != expected_size {
            return Err(ProviderError::DimensionMismatch {
                name,
                expected: expected_size,
                actual: rgb.dims(),
            });
        }
        let sidecar = path.with_extension("fgrd");
        let grid = if sidecar.is_file() {
            let grid = load_feature_grid(&sidecar).map_err(|source| ProviderError::Candidate {
                name: sidecar.file_name().unwrap_or_default().to_string_lossy().into_owned(),
                source,
            })?;
            Some(grid)
        } else {
            None
        };
        ids.push(name);
        labs.push(rgb_to_lab(&rgb));
        grids.push(grid);
    }
    Ok(CandidateSet::new(ids, labs, grids)?)
}

/// Condition maps sent with a generation request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConditionBundle {
    pub canny_png: Vec<u8>,
    pub size: (usize, usize),
}

pub fn condition_bundle(gray: &GrayImage, canny_low: f64, canny_high: f64, sigma: f64) -> Result<ConditionBundle> {
    let edges = canny_edges(gray, canny_low, canny_high, sigma)?;
    Ok(ConditionBundle {
        canny_png: encode_edge_png(&edges)?,
        size: gray.dims(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationRequest {
    pub caption: String,
    pub n_canny: usize,
    pub n_hed: usize,
    pub canny_png: Vec<u8>,
    pub hed_png: Option<Vec<u8>>,
    pub seed: Option<u64>,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    caption: &'a str,
    n_canny: usize,
    n_hed: usize,
    canny_png: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    hed_png: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Deserialize)]
struct WireResponse {
    candidates: Vec<WireCandidate>,
}

#[derive(Deserialize)]
struct WireCandidate {
    id: String,
    png: String,
}

impl GenerationRequest {
    pub fn requested(&self) -> usize {
        self.n_canny + self.n_hed
    }

    pub fn validate(&self) -> Result<()> {
        if self.requested() == 0 {
            return Err(ProviderError::InvalidRequest("at least one candidate must be requested".into()));
        }
        if self.n_hed > 0 && self.hed_png.is_none() {
            return Err(ProviderError::InvalidRequest("HED-conditioned candidates need a HED map".into()));
        }
        if self.canny_png.is_empty() {
            return Err(ProviderError::InvalidRequest("empty canny map".into()));
        }
        Ok(())
    }

    /// JSON body in the wire format.
    pub fn to_json(&self) -> Vec<u8> {
        let wire = WireRequest {
            caption: &self.caption,
            n_canny: self.n_canny,
            n_hed: self.n_hed,
            canny_png: BASE64.encode(&self.canny_png),
            hed_png: self.hed_png.as_ref().map(|b| BASE64.encode(b)),
            seed: self.seed,
        };
        serde_json::to_vec(&wire).expect("request serializes")
    }
}

fn map_ureq(err: ureq::Error, timeout: Duration) -> ProviderError {
    match err {
        ureq::Error::Timeout(_) => ProviderError::Timeout(timeout),
        ureq::Error::Io(e) if matches!(e.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock) => {
            ProviderError::Timeout(timeout)
        }
        ureq::Error::BodyExceedsLimit(n) => ProviderError::MalformedBody(format!("body exceeds {n} bytes")),
        other => ProviderError::Transport(other.to_string()),
    }
}

/// Requests `req.requested()` candidates of size `size` from `endpoint`.
/// Nothing is returned unless every candidate decodes and validates.
pub fn fetch_candidates(endpoint: &str, req: &GenerationRequest, size: (usize, usize), timeout: Duration) -> Result<CandidateSet> {
    req.validate()?;
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into();
    let mut resp = agent
        .post(endpoint)
        .header("content-type", "application/json")
        .send(&req.to_json()[..])
        .map_err(|e| map_ureq(e, timeout))?;
    let status = resp.status().as_u16();
    let body = resp
        .body_mut()
        .with_config()
        .limit(MAX_RESPONSE_BYTES)
        .read_to_vec()
        .map_err(|e| map_ureq(e, timeout))?;
    if status != 200 {
        let mut text = String::from_utf8_lossy(&body).into_owned();
        text.truncate(200);
        return Err(ProviderError::Status { status, body: text });
    }
    decode_response(&body, req.requested(), size)
}

fn decode_response(body: &[u8], requested: usize, size: (usize, usize)) -> Result<CandidateSet> {
    let parsed: WireResponse = serde_json::from_slice(body).map_err(|e| ProviderError::MalformedBody(e.to_string()))?;
    if parsed.candidates.len() != requested {
        return Err(ProviderError::CountMismatch {
            requested,
            returned: parsed.candidates.len(),
        });
    }
    let mut seen = HashSet::new();
    let mut ids = Vec::with_capacity(requested);
    let mut labs = Vec::with_capacity(requested);
    for c in parsed.candidates {
        if c.id.is_empty() || !seen.insert(c.id.clone()) {
            return Err(ProviderError::MalformedBody(format!("missing or duplicate candidate id {:?}", c.id)));
        }
        let bytes = BASE64
            .decode(c.png.as_bytes())
            .map_err(|e| ProviderError::MalformedBody(format!("candidate {}: {e}", c.id)))?;
        let rgb = decode_rgb_png(&bytes).map_err(|e| ProviderError::MalformedBody(format!("candidate {}: {e}", c.id)))?;
        if rgb.dims() != size {
            return Err(ProviderError::DimensionMismatch {
                name: c.id,
                expected: size,
                actual: rgb.dims(),
            });
        }
        ids.push(c.id);
        labs.push(rgb_to_lab(&rgb));
    }
    let grids = vec![None; ids.len()];
    Ok(CandidateSet::new(ids, labs, grids)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use refcolor_core::io::{decode_gray_png, encode_rgb_png};
    use refcolor_core::RgbImage;

    fn request(n_canny: usize, n_hed: usize, hed: bool) -> GenerationRequest {
        GenerationRequest {
            caption: "a house".into(),
            n_canny,
            n_hed,
            canny_png: vec![1, 2, 3],
            hed_png: hed.then(|| vec![9]),
            seed: None,
        }
    }

    #[test]
    fn request_invariants() {
        assert!(request(4, 4, true).validate().is_ok());
        assert!(request(8, 0, false).validate().is_ok());
        assert!(request(0, 0, false).validate().is_err());
        assert!(request(4, 4, false).validate().is_err());
    }

    #[test]
    fn wire_body_omits_absent_fields() {
        let v: serde_json::Value = serde_json::from_slice(&request(8, 0, false).to_json()).unwrap();
        assert_eq!(v["canny_png"], "AQID");
        assert_eq!(v["n_canny"], 8);
        assert!(v.get("hed_png").is_none());
        assert!(v.get("seed").is_none());
        let mut r = request(2, 1, true);
        r.seed = Some(5);
        let v: serde_json::Value = serde_json::from_slice(&r.to_json()).unwrap();
        assert_eq!(v["hed_png"], "CQ==");
        assert_eq!(v["seed"], 5);
    }

    #[test]
    fn bundle_of_constant_image_is_blank() {
        let gray = GrayImage::constant(20, 12, 0.4).unwrap();
        let b = condition_bundle(&gray, 0.1, 0.2, 1.0).unwrap();
        assert_eq!(b.size, (20, 12));
        let decoded = decode_gray_png(&b.canny_png).unwrap();
        assert_eq!(decoded.dims(), (20, 12));
        assert!(decoded.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bundle_is_deterministic() {
        let gray = GrayImage::from_fn(24, 24, |x, y| if (x / 6 + y / 6) % 2 == 0 { 0.1 } else { 0.9 }).unwrap();
        let a = condition_bundle(&gray, 0.1, 0.2, 1.0).unwrap();
        let b = condition_bundle(&gray, 0.1, 0.2, 1.0).unwrap();
        assert_eq!(a, b);
        assert!(decode_gray_png(&a.canny_png).unwrap().data().contains(&1.0));
    }

    fn body(n: usize, size: (usize, usize)) -> Vec<u8> {
        let png = encode_rgb_png(&RgbImage::filled(size.0, size.1, [10, 200, 30]).unwrap()).unwrap();
        let cands: Vec<_> = (0..n)
            .map(|i| serde_json::json!({"id": format!("c{i}"), "png": BASE64.encode(&png)}))
            .collect();
        serde_json::to_vec(&serde_json::json!({ "candidates": cands })).unwrap()
    }

    #[test]
    fn response_decoding() {
        let set = decode_response(&body(3, (4, 5)), 3, (4, 5)).unwrap();
        assert_eq!(set.ids(), ["c0", "c1", "c2"]);
        assert!(matches!(
            decode_response(&body(2, (4, 5)), 3, (4, 5)),
            Err(ProviderError::CountMismatch { requested: 3, returned: 2 })
        ));
        assert!(matches!(decode_response(&body(1, (4, 4)), 1, (4, 5)), Err(ProviderError::DimensionMismatch { .. })));
        assert!(matches!(decode_response(b"{}", 1, (4, 5)), Err(ProviderError::MalformedBody(_))));
        let bad = br#"{"candidates":[{"id":"x","png":"!!!"}]}"#;
        assert!(matches!(decode_response(bad, 1, (4, 5)), Err(ProviderError::MalformedBody(_))));
        let dup = serde_json::to_vec(&serde_json::json!({"candidates": [{"id": "a", "png": ""}, {"id": "a", "png": ""}]})).unwrap();
        assert!(matches!(decode_response(&dup, 2, (4, 5)), Err(ProviderError::MalformedBody(_))));
    }
}
