use std::path::PathBuf;
use std::sync::Arc;
use std::time::SystemTime;

use axum::body::Bytes;
use axum::extract::{FromRequest, Multipart, Path, Query, Request, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::Json;
use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use refcolor_core::io;
use refcolor_core::refinement::{apply_substitution, load_assignment};
use refcolor_core::segmentation::RleSegments;
use refcolor_core::{lab_to_rgb, rgb_to_lab, CandidateSet, RgbImage, SegmentMap, Source};
use refcolor_pipeline::{acquire_candidates, segment, select, PipelineConfig, ProviderConfig};
use serde::Deserialize;
use serde_json::{json, Map, Value};

use crate::error::{ApiError, ApiResult};
use crate::session::{self, render, rev_dir, write_revision, Revision, Session};
use crate::AppState;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal(format!("worker failed: {e}")))?
}

fn decode_base64(field: &str, text: &str) -> ApiResult<Vec<u8>> {
    BASE64
        .decode(text.trim())
        .map_err(|e| ApiError::bad_request(format!("{field} is not valid base64: {e}")))
}

fn png_response(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

async fn read_png(path: PathBuf, what: String) -> ApiResult<Response> {
    match tokio::fs::read(&path).await {
        Ok(bytes) => Ok(png_response(bytes)),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(ApiError::not_found(what)),
        Err(e) => Err(e.into()),
    }
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum CandidateSource {
    Images {
        images: Vec<CandidateUpload>,
    },
    Dir {
        path: PathBuf,
    },
    Http {
        endpoint: String,
        #[serde(default)]
        timeout_secs: Option<f64>,
        #[serde(default)]
        hed_map: Option<PathBuf>,
    },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CandidateUpload {
    id: String,
    png: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateRequest {
    /// Base64 PNG of the grayscale input.
    gray: String,
    candidates: CandidateSource,
    #[serde(default)]
    segments: Option<RleSegments>,
    /// Overrides of the server's pipeline defaults.
    #[serde(default)]
    config: Option<Map<String, Value>>,
}

const RESERVED_CONFIG_KEYS: [&str; 3] = ["provider", "segments", "features"];

fn merged_config(base: &PipelineConfig, overrides: Option<Map<String, Value>>) -> ApiResult<PipelineConfig> {
    let invalid = |msg: String| ApiError::new(StatusCode::BAD_REQUEST, "invalid_config", msg);
    let mut value = serde_json::to_value(base).map_err(|e| ApiError::internal(e.to_string()))?;
    if let Some(overrides) = overrides {
        let table = value.as_object_mut().expect("config serializes to an object");
        for (k, v) in overrides {
            if RESERVED_CONFIG_KEYS.contains(&k.as_str()) {
                return Err(invalid(format!("config.{k} is set by the request itself")));
            }
            table.insert(k, v);
        }
    }
    let cfg: PipelineConfig = serde_json::from_value(value).map_err(|e| invalid(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn candidates_from_uploads(uploads: Vec<CandidateUpload>, dims: (usize, usize)) -> ApiResult<CandidateSet> {
    let failed = |msg: String| ApiError::unprocessable("provider_failed", msg);
    let mut ids = Vec::with_capacity(uploads.len());
    let mut images = Vec::with_capacity(uploads.len());
    for up in uploads {
        if up.id.is_empty() {
            return Err(failed("candidate id is empty".into()));
        }
        let bytes = decode_base64(&format!("candidate {}", up.id), &up.png)?;
        let img = io::decode_rgb_png(&bytes).map_err(|e| ApiError::invalid_image(format!("candidate {}: {e}", up.id)))?;
        if img.dims() != dims {
            return Err(failed(format!("candidate {} is {:?}, input is {:?}", up.id, img.dims(), dims)));
        }
        ids.push(up.id);
        images.push(img);
    }
    CandidateSet::from_rgb(ids, &images).map_err(|e| failed(e.to_string()))
}

pub async fn create_session(State(state): State<AppState>, body: Bytes) -> ApiResult<impl IntoResponse> {
    let req: CreateRequest =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("malformed create request: {e}")))?;
    let png = decode_base64("gray", &req.gray)?;
    let mut cfg = merged_config(&state.config().pipeline, req.config)?;
    let data_dir = state.config().data_dir.clone();

    let session = blocking(move || {
        let gray = io::decode_gray_png(&png).map_err(|e| ApiError::invalid_image(format!("gray: {e}")))?;
        let cands = match req.candidates {
            CandidateSource::Images { images } => candidates_from_uploads(images, gray.dims())?,
            CandidateSource::Dir { path } => {
                cfg.provider = Some(ProviderConfig::Dir { path });
                acquire_candidates(&gray, &cfg)?
            }
            CandidateSource::Http {
                endpoint,
                timeout_secs,
                hed_map,
            } => {
                cfg.provider = Some(ProviderConfig::Http {
                    endpoint,
                    timeout_secs: timeout_secs.unwrap_or(300.0),
                    hed_map,
                });
                cfg.validate()?;
                acquire_candidates(&gray, &cfg)?
            }
        };
        let seg = match &req.segments {
            Some(rle) => {
                let seg = SegmentMap::from_rle(rle).map_err(|e| ApiError::unprocessable("invalid_segments", e.to_string()))?;
                if seg.dims() != gray.dims() {
                    return Err(ApiError::unprocessable(
                        "invalid_segments",
                        format!("segment map is {:?}, input is {:?}", seg.dims(), gray.dims()),
                    ));
                }
                seg
            }
            None => segment(&gray, &cfg)?,
        };

        let id = uuid::Uuid::new_v4().simple().to_string();
        let dir = data_dir.join(&id);
        let built = (|| {
            let data = Session::persist_inputs(&dir, &png, &seg, &cands, &cfg)?;
            let assignment = select(&data.gray, None, &data.cands, &data.seg, &data.cfg)?;
            let r = render(&data, &assignment)?;
            write_revision(&dir, 0, &r)?;
            let revision = Revision {
                number: 0,
                previous: None,
                assignment: r.assignment,
                meta: r.meta,
            };
            let session = Session::new(id.clone(), dir.clone(), Arc::new(data), revision.clone(), SystemTime::now());
            session.commit(revision)?;
            Ok(session)
        })();
        if built.is_err() {
            let _ = std::fs::remove_dir_all(&dir);
        }
        built
    })
    .await?;

    let body = json!({
        "id": session.id,
        "segments": session.data.seg.count(),
        "revision": 0,
    });
    state.insert(session);
    Ok((StatusCode::CREATED, Json(body)))
}

fn state_json(s: &Session, rev: &Revision) -> Value {
    let ids = s.data.cands.ids();
    let assignment: Vec<Value> = rev
        .assignment
        .choices()
        .iter()
        .enumerate()
        .map(|(j, src)| match src {
            Source::Candidate(i) => json!({ "j": j, "candidate": ids[*i] }),
            Source::Patch(_) => json!({ "j": j, "patch": true }),
        })
        .collect();
    let (w, h) = s.data.gray.dims();
    json!({
        "id": s.id,
        "revision": rev.number,
        "width": w,
        "height": h,
        "segment_count": s.data.seg.count(),
        "segments": s.data.seg.to_rle(),
        "candidates": ids,
        "assignment": assignment,
        "result_url": format!("/sessions/{}/result?revision={}", s.id, rev.number),
        "reference_url": format!("/sessions/{}/reference?revision={}", s.id, rev.number),
        "undo_available": rev.previous.is_some(),
        "hints": rev.meta.hints,
        "colorfulness": rev.meta.colorfulness,
        "solver": rev.meta.solver,
    })
}

pub async fn get_state(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let s = state.get(&id)?;
    let rev = s.current();
    Ok(Json(state_json(&s, &rev)))
}

fn parse_segment(s: &Session, j: &str) -> ApiResult<usize> {
    let count = s.data.seg.count();
    j.parse::<usize>()
        .ok()
        .filter(|&j| j < count)
        .ok_or_else(|| ApiError::unprocessable("invalid_segment", format!("segment {j:?} is not in 0..{count}")))
}

/// What a segment is swapped to, before validation against the session.
enum Requested {
    Candidate(String),
    Patch(Vec<u8>),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SwapBody {
    #[serde(default)]
    candidate: Option<String>,
    #[serde(default)]
    patch: Option<String>,
}

async fn read_swap(headers: &HeaderMap, req: Request) -> ApiResult<Requested> {
    let content_type = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .unwrap_or("application/json")
        .to_ascii_lowercase();
    if content_type.starts_with("multipart/form-data") {
        let mut form = Multipart::from_request(req, &())
            .await
            .map_err(|e| ApiError::bad_request(e.body_text()))?;
        let mut found = None;
        while let Some(field) = form.next_field().await.map_err(|e| ApiError::bad_request(e.body_text()))? {
            let name = field.name().unwrap_or_default().to_string();
            let item = match name.as_str() {
                "candidate" => Requested::Candidate(field.text().await.map_err(|e| ApiError::bad_request(e.body_text()))?),
                "patch" => Requested::Patch(field.bytes().await.map_err(|e| ApiError::bad_request(e.body_text()))?.to_vec()),
                _ => continue,
            };
            if found.replace(item).is_some() {
                return Err(ApiError::bad_request("give exactly one of candidate or patch"));
            }
        }
        return found.ok_or_else(|| ApiError::bad_request("form has neither a candidate nor a patch field"));
    }
    let body = Bytes::from_request(req, &())
        .await
        .map_err(|e| ApiError::bad_request(e.body_text()))?;
    if content_type.starts_with("image/png") {
        return Ok(Requested::Patch(body.to_vec()));
    }
    if !content_type.starts_with("application/json") {
        return Err(ApiError::new(
            StatusCode::UNSUPPORTED_MEDIA_TYPE,
            "unsupported_media_type",
            format!("cannot read a swap from {content_type}"),
        ));
    }
    let parsed: SwapBody =
        serde_json::from_slice(&body).map_err(|e| ApiError::bad_request(format!("malformed swap request: {e}")))?;
    match (parsed.candidate, parsed.patch) {
        (Some(c), None) => Ok(Requested::Candidate(c)),
        (None, Some(p)) => Ok(Requested::Patch(decode_base64("patch", &p)?)),
        _ => Err(ApiError::bad_request("give exactly one of candidate or patch")),
    }
}

fn resolve_source(s: &Session, requested: Requested) -> ApiResult<Source> {
    match requested {
        Requested::Candidate(cid) => s
            .data
            .cands
            .index_of(&cid)
            .map(Source::Candidate)
            .ok_or_else(|| ApiError::unprocessable("unknown_candidate", format!("no candidate {cid:?}"))),
        Requested::Patch(bytes) => {
            let img = io::decode_rgb_png(&bytes).map_err(|e| ApiError::invalid_image(format!("patch: {e}")))?;
            let dims = s.data.gray.dims();
            if img.dims() != dims {
                return Err(ApiError::unprocessable(
                    "invalid_patch",
                    format!("patch is {:?}, input is {:?}", img.dims(), dims),
                ));
            }
            Ok(Source::Patch(Arc::new(rgb_to_lab(&img))))
        }
    }
}

pub async fn swap_segment(
    State(state): State<AppState>,
    Path((id, j)): Path<(String, String)>,
    headers: HeaderMap,
    req: Request,
) -> ApiResult<Json<Value>> {
    let s = state.get(&id)?;
    let j = parse_segment(&s, &j)?;
    let source = resolve_source(&s, read_swap(&headers, req).await?)?;

    let _guard = s.edit.lock().await;
    let cur = s.current();
    let assignment = apply_substitution(&cur.assignment, &s.data.cands, j, source)
        .map_err(|e| ApiError::unprocessable("invalid_swap", e.to_string()))?;
    let n = cur.number + 1;
    let worker = s.clone();
    let rev = blocking(move || {
        let r = render(&worker.data, &assignment)?;
        write_revision(&worker.dir, n, &r)?;
        worker.commit(Revision {
            number: n,
            previous: Some(cur.number),
            assignment: r.assignment,
            meta: r.meta,
        })
    })
    .await?;
    Ok(Json(state_json(&s, &rev)))
}

pub async fn undo(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult<Json<Value>> {
    let s = state.get(&id)?;
    let _guard = s.edit.lock().await;
    let cur = s.current();
    let prev = cur
        .previous
        .ok_or_else(|| ApiError::new(StatusCode::CONFLICT, "nothing_to_undo", "no earlier revision is retained"))?;
    let n = cur.number + 1;
    let worker = s.clone();
    let rev = blocking(move || {
        session::copy_revision(&worker.dir, prev, n)?;
        let dir = rev_dir(&worker.dir, n);
        let assignment = load_assignment(&dir)?;
        let meta = io::read_json(&dir.join("meta.json"))?;
        worker.commit(Revision {
            number: n,
            previous: Some(cur.number),
            assignment,
            meta,
        })
    })
    .await?;
    Ok(Json(state_json(&s, &rev)))
}

#[derive(Deserialize)]
pub struct RevisionQuery {
    revision: Option<u64>,
}

pub async fn get_result(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<RevisionQuery>,
) -> ApiResult<Response> {
    let s = state.get(&id)?;
    let current = s.current().number;
    let n = q.revision.unwrap_or(current);
    if n > current {
        return Err(ApiError::not_found(format!("session {id} has no revision {n}")));
    }
    read_png(session::result_path(&s.dir, n), format!("result of revision {n} is gone")).await
}

pub async fn get_reference(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<RevisionQuery>,
) -> ApiResult<Response> {
    let s = state.get(&id)?;
    let n = q.revision.unwrap_or(s.current().number);
    let dir = s
        .retained_rev_dir(n)
        .ok_or_else(|| ApiError::not_found(format!("reference of revision {n} is not retained")))?;
    read_png(dir.join("reference.png"), format!("reference of revision {n} is gone")).await
}

#[derive(Deserialize)]
pub struct ThumbQuery {
    segment: Option<String>,
    size: Option<u32>,
}

const THUMB_BACKGROUND: [u8; 3] = [128, 128, 128];

/// Candidate image, or its crop to one segment's bounding box with pixels
/// outside the segment set to neutral gray, scaled so the longer side is at
/// most `size`.
fn thumbnail(img: &RgbImage, seg: Option<(&SegmentMap, usize)>, size: u32) -> ApiResult<Vec<u8>> {
    let (w, h) = img.dims();
    let (mut x0, mut y0, mut x1, mut y1) = (0, 0, w, h);
    if let Some((seg, j)) = seg {
        (x0, y0, x1, y1) = (w, h, 0, 0);
        for y in 0..h {
            for x in 0..w {
                if seg.label(x, y) == j {
                    (x0, y0, x1, y1) = (x0.min(x), y0.min(y), x1.max(x + 1), y1.max(y + 1));
                }
            }
        }
    }
    let mut data = Vec::with_capacity((x1 - x0) * (y1 - y0) * 3);
    for y in y0..y1 {
        for x in x0..x1 {
            let inside = seg.is_none_or(|(seg, j)| seg.label(x, y) == j);
            data.extend_from_slice(&if inside { img.pixel(x, y) } else { THUMB_BACKGROUND });
        }
    }
    let buf = image::RgbImage::from_raw((x1 - x0) as u32, (y1 - y0) as u32, data)
        .ok_or_else(|| ApiError::internal("thumbnail buffer size"))?;
    let (bw, bh) = buf.dimensions();
    let scale = (f64::from(size) / f64::from(bw.max(bh))).min(1.0);
    let (tw, th) = (
        ((f64::from(bw) * scale).round() as u32).max(1),
        ((f64::from(bh) * scale).round() as u32).max(1),
    );
    let small = image::imageops::thumbnail(&buf, tw, th);
    let out = RgbImage::new(tw as usize, th as usize, small.into_raw())?;
    Ok(io::encode_rgb_png(&out)?)
}

pub async fn get_thumb(
    State(state): State<AppState>,
    Path((id, cid)): Path<(String, String)>,
    Query(q): Query<ThumbQuery>,
) -> ApiResult<Response> {
    let s = state.get(&id)?;
    let i = s
        .data
        .cands
        .index_of(&cid)
        .ok_or_else(|| ApiError::not_found(format!("session {id} has no candidate {cid:?}")))?;
    let j = q.segment.as_deref().map(|j| parse_segment(&s, j)).transpose()?;
    let size = q.size.unwrap_or(128).clamp(8, 1024);
    let bytes = blocking(move || {
        let img = lab_to_rgb(s.data.cands.get(i));
        thumbnail(&img, j.map(|j| (&s.data.seg, j)), size)
    })
    .await?;
    Ok(png_response(bytes))
}

pub async fn no_route() -> ApiError {
    ApiError::not_found("no such route")
}
