//! Session-based HTTP API for interactive recolorization.
//!
//! A session holds one grayscale input, its segment map and a candidate pool.
//! Each swap of a segment's reference source produces a new revision with a
//! fresh composed reference, hints and result. Routes:
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/sessions` | create; 201 `{"id","segments","revision":0}` |
//! | GET | `/sessions/{id}` | state of the committed revision |
//! | PUT | `/sessions/{id}/segments/{j}` | `{"candidate":"c5"}`, `{"patch":"<base64 PNG>"}`, a multipart `candidate`/`patch` field or a raw `image/png` body |
//! | POST | `/sessions/{id}/undo` | back to the previous revision's artifacts, as a new revision |
//! | GET | `/sessions/{id}/result?revision=n` | result PNG |
//! | GET | `/sessions/{id}/reference?revision=n` | composed reference PNG |
//! | GET | `/sessions/{id}/candidates/{cid}/thumb?segment=j&size=s` | candidate thumbnail, optionally masked to one segment |
//!
//! Errors are `{"error":{"code":..,"message":..}}`.

mod api;
mod error;
mod session;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, RwLock};
use std::time::{Duration, SystemTime};

use axum::extract::DefaultBodyLimit;
use axum::routing::{get, post, put};
use axum::Router;
use refcolor_pipeline::PipelineConfig;

pub use error::ApiError;
use session::Session;

pub const DEFAULT_IDLE_TTL: Duration = Duration::from_secs(24 * 60 * 60);

#[derive(Clone, Debug)]
pub struct ServiceConfig {
    /// Root of the per-session directories.
    pub data_dir: PathBuf,
    /// Sessions untouched for this long are deleted.
    pub idle_ttl: Duration,
    pub sweep_interval: Duration,
    /// Defaults for new sessions; a create request may override fields.
    pub pipeline: PipelineConfig,
    pub max_body_bytes: usize,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            data_dir: data_dir.into(),
            idle_ttl: DEFAULT_IDLE_TTL,
            sweep_interval: Duration::from_secs(60),
            pipeline: PipelineConfig::default(),
            max_body_bytes: 256 << 20,
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    cfg: ServiceConfig,
    sessions: RwLock<HashMap<String, Arc<Session>>>,
}

impl AppState {
    /// Opens `data_dir`, reloading every session persisted there and dropping
    /// those already idle past the TTL.
    pub fn open(cfg: ServiceConfig) -> std::io::Result<Self> {
        std::fs::create_dir_all(&cfg.data_dir)?;
        let mut sessions = HashMap::new();
        for entry in std::fs::read_dir(&cfg.data_dir)? {
            let path = entry?.path();
            if !path.is_dir() {
                continue;
            }
            if !path.join(session::SESSION_FILE).is_file() {
                // creation never finished
                let _ = std::fs::remove_dir_all(&path);
                continue;
            }
            match Session::load(&path) {
                Ok(s) => {
                    sessions.insert(s.id.clone(), Arc::new(s));
                }
                Err(e) => eprintln!("refcolor-service: skipping {}: {}", path.display(), e.message),
            }
        }
        let state = Self {
            inner: Arc::new(Inner {
                cfg,
                sessions: RwLock::new(sessions),
            }),
        };
        state.evict_idle(SystemTime::now());
        Ok(state)
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.inner.cfg
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.inner.sessions.read().expect("session table").keys().cloned().collect();
        ids.sort();
        ids
    }

    fn get(&self, id: &str) -> Result<Arc<Session>, ApiError> {
        let s = self
            .inner
            .sessions
            .read()
            .expect("session table")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no session {id:?}")))?;
        s.touch();
        Ok(s)
    }

    fn insert(&self, s: Session) {
        self.inner.sessions.write().expect("session table").insert(s.id.clone(), Arc::new(s));
    }

    /// Deletes sessions idle longer than the TTL as of `now`. Sessions with a
    /// mutation in flight are kept. Returns the evicted ids.
    pub fn evict_idle(&self, now: SystemTime) -> Vec<String> {
        let ttl = self.inner.cfg.idle_ttl;
        let mut table = self.inner.sessions.write().expect("session table");
        let mut evicted = Vec::new();
        table.retain(|id, s| {
            let idle = now.duration_since(s.last_active()).unwrap_or_default();
            if idle <= ttl {
                return true;
            }
            let Ok(_guard) = s.edit.try_lock() else {
                return true;
            };
            let _ = std::fs::remove_dir_all(&s.dir);
            evicted.push(id.clone());
            false
        });
        evicted.sort();
        evicted
    }

    /// Periodically evicts idle sessions until the runtime shuts down.
    pub fn spawn_sweeper(&self) -> tokio::task::JoinHandle<()> {
        let state = self.clone();
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(state.inner.cfg.sweep_interval);
            loop {
                tick.tick().await;
                state.evict_idle(SystemTime::now());
            }
        })
    }
}

pub fn router(state: AppState) -> Router {
    let limit = state.inner.cfg.max_body_bytes;
    Router::new()
        .route("/sessions", post(api::create_session))
        .route("/sessions/{id}", get(api::get_state))
        .route("/sessions/{id}/segments/{j}", put(api::swap_segment))
        .route("/sessions/{id}/undo", post(api::undo))
        .route("/sessions/{id}/result", get(api::get_result))
        .route("/sessions/{id}/reference", get(api::get_reference))
        .route("/sessions/{id}/candidates/{cid}/thumb", get(api::get_thumb))
        .fallback(api::no_route)
        .layer(DefaultBodyLimit::max(limit))
        .with_state(state)
}

/// Serves the API on `listener` with the idle sweeper running.
pub async fn serve(listener: tokio::net::TcpListener, state: AppState) -> std::io::Result<()> {
    let sweeper = state.spawn_sweeper();
    let served = axum::serve(listener, router(state)).await;
    sweeper.abort();
    served
}
