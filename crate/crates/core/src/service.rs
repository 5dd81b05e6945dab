//! HTTP facade over a loaded dataset and cache for interactive what-if
//! removals.
//!
//! `GET /session`, `POST /update`, `GET /compare?a=&b=`. Retraining for the
//! comparison column runs once per distinct removal set and is memoised.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex, OnceLock, RwLock};

use axum::extract::{Query, State};
use axum::http::{header, Method as HttpMethod, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

use crate::bench::inject::pick_rows;
use crate::engine::{Engine, Method};
use crate::error::{Error, Result};
use crate::metrics::{cosine_sim, l2_dist, mse, sign_flip_report, validation_accuracy, SignFlips};
use crate::model::{DeletionRequest, Hyperparams, ModelKind, TrainingDataset};

const PREVIEW_ROWS: usize = 5;
const PREVIEW_COLS: usize = 8;
const SUMMARY_HEAD: usize = 8;

/// A loaded dataset, cache and the request history.
pub struct Session {
    engine: Engine,
    /// Metrics are evaluated here; the training rows when absent.
    validation: Option<TrainingDataset>,
    history: RwLock<Vec<HistoryEntry>>,
    basel: Mutex<HashMap<Vec<u32>, Arc<Vec<f64>>>>,
}

impl Session {
    pub fn new(engine: Engine, validation: Option<TrainingDataset>) -> Result<Self> {
        if let Some(v) = &validation {
            if v.m() != engine.ds.m() || v.kind() != engine.kind() {
                return Err(Error::shape("validation set does not match the training data"));
            }
        }
        Ok(Session {
            engine,
            validation,
            history: RwLock::new(Vec::new()),
            basel: Mutex::new(HashMap::new()),
        })
    }

    fn eval_set(&self) -> &TrainingDataset {
        self.validation.as_ref().unwrap_or(&self.engine.ds)
    }

    fn basel(&self, request: &DeletionRequest) -> Result<Arc<Vec<f64>>> {
        let key = request.removed().to_vec();
        if let Some(w) = self.basel.lock().expect("memo lock").get(&key) {
            return Ok(w.clone());
        }
        let w = if request.is_empty() {
            self.engine.trained().to_vec()
        } else {
            self.engine.run(Method::Basel, request)?.0.w
        };
        let w = Arc::new(w);
        self.basel.lock().expect("memo lock").insert(key, w.clone());
        Ok(w)
    }
}

#[derive(Debug, Clone, Serialize)]
struct HistoryEntry {
    request_id: u64,
    removed: Vec<u32>,
    w: Vec<f64>,
    metrics: UpdateMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WSummary {
    pub len: usize,
    pub norm: f64,
    pub head: Vec<f64>,
}

/// The deterministic part of an update response.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UpdateMetrics {
    pub method: String,
    pub removed_count: usize,
    pub w_summary: WSummary,
    pub l2_dist_to_base: f64,
    /// `null` when either vector is zero.
    pub cosine: Option<f64>,
    pub accuracy: Option<f64>,
    pub mse: Option<f64>,
}

#[derive(Debug, Serialize)]
pub struct UpdateResponse {
    pub request_id: u64,
    pub update_ms: f64,
    pub metrics: UpdateMetrics,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum Removal {
    Ids(Vec<u32>),
    Rate { rate: f64, seed: u64 },
}

#[derive(Debug, Clone, Deserialize)]
pub struct UpdateBody {
    pub removed: Removal,
    #[serde(default = "default_method")]
    pub method: Method,
}

fn default_method() -> Method {
    Method::Priu
}

#[derive(Debug, Deserialize)]
pub struct CompareQuery {
    pub a: u64,
    pub b: u64,
}

#[derive(Debug, Serialize)]
pub struct CompareResponse {
    pub a: u64,
    pub b: u64,
    pub l2_dist: f64,
    pub cosine: Option<f64>,
    pub sign_flips: SignFlips,
}

#[derive(Serialize)]
struct Preview {
    row: usize,
    token: u32,
    label: f64,
    features: Vec<f64>,
}

#[derive(Serialize)]
struct HistoryItem<'a> {
    request_id: u64,
    metrics: &'a UpdateMetrics,
}

#[derive(Serialize)]
struct SessionView<'a> {
    n: usize,
    m: usize,
    q: usize,
    model_kind: ModelKind,
    hp: Hyperparams,
    previews: Vec<Preview>,
    history: Vec<HistoryItem<'a>>,
}

/// Shared server state; the session appears once loading finishes.
#[derive(Default)]
pub struct AppState {
    session: OnceLock<Arc<Session>>,
    load_error: Mutex<Option<String>>,
}

impl AppState {
    pub fn loaded(session: Session) -> Arc<Self> {
        let s = AppState::default();
        let _ = s.session.set(Arc::new(session));
        Arc::new(s)
    }

    pub fn pending() -> Arc<Self> {
        Arc::new(AppState::default())
    }

    pub fn finish_loading(&self, result: Result<Session>) {
        match result {
            Ok(s) => {
                let _ = self.session.set(Arc::new(s));
            }
            Err(e) => *self.load_error.lock().expect("load lock") = Some(e.to_string()),
        }
    }
}

struct ApiError(StatusCode, String);

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

fn session(state: &AppState) -> std::result::Result<Arc<Session>, ApiError> {
    state.session.get().cloned().ok_or_else(|| {
        let msg = match &*state.load_error.lock().expect("load lock") {
            Some(e) => format!("session failed to load: {e}"),
            None => "session is still loading".to_string(),
        };
        ApiError(StatusCode::SERVICE_UNAVAILABLE, msg)
    })
}

fn engine_error(e: Error) -> ApiError {
    let status = match e {
        Error::Config(_) => StatusCode::UNPROCESSABLE_ENTITY,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    };
    ApiError(status, e.to_string())
}

async fn get_session(State(state): State<Arc<AppState>>) -> std::result::Result<Response, ApiError> {
    let s = session(&state)?;
    let ds = &s.engine.ds;
    let previews = (0..ds.n().min(PREVIEW_ROWS))
        .map(|i| Preview {
            row: i,
            token: ds.tokens()[i],
            label: ds.label(i),
            features: ds.features().row_dense(i).into_iter().take(PREVIEW_COLS).collect(),
        })
        .collect();
    let history = s.history.read().expect("history lock");
    let view = SessionView {
        n: ds.n(),
        m: ds.m(),
        q: ds.classes(),
        model_kind: ds.kind(),
        hp: s.engine.prepared.cache.header.hp,
        previews,
        history: history
            .iter()
            .map(|h| HistoryItem {
                request_id: h.request_id,
                metrics: &h.metrics,
            })
            .collect(),
    };
    Ok(Json(view).into_response())
}

fn build_request(ds: &TrainingDataset, removal: &Removal) -> std::result::Result<DeletionRequest, ApiError> {
    let bad = |msg: String| ApiError(StatusCode::BAD_REQUEST, msg);
    let ids = match removal {
        Removal::Ids(ids) => ids.clone(),
        Removal::Rate { rate, seed } => {
            if !(*rate > 0.0 && *rate < 1.0) {
                return Err(bad(format!("rate {rate} must lie in (0, 1)")));
            }
            pick_rows(ds.n(), *rate, *seed)
        }
    };
    let request = DeletionRequest::new(ids, ds.n(), "http").map_err(|e| bad(e.to_string()))?;
    if request.len() >= ds.n() {
        return Err(bad("a request may not remove every sample".into()));
    }
    Ok(request)
}

fn compute_update(s: &Session, method: Method, request: &DeletionRequest) -> Result<(Vec<f64>, f64, UpdateMetrics)> {
    let kind = s.engine.kind();
    if !method.supports(kind) {
        return Err(Error::config(format!("{method} is not available for {kind} models")));
    }
    // nothing to delete: every method returns the trained model unchanged
    let (w, update_ms) = if request.is_empty() {
        (s.engine.trained().to_vec(), 0.0)
    } else {
        let (w, report) = s.engine.run(method, request)?;
        (w.w, report.update_ms)
    };
    let base = s.basel(request)?;
    let eval = s.eval_set();
    let metrics = UpdateMetrics {
        method: method.name().to_string(),
        removed_count: request.len(),
        w_summary: WSummary {
            len: w.len(),
            norm: crate::linalg::norm2(&w),
            head: w.iter().take(SUMMARY_HEAD).copied().collect(),
        },
        l2_dist_to_base: l2_dist(&w, &base)?,
        cosine: cosine_sim(&w, &base).ok(),
        accuracy: kind.is_logistic().then(|| validation_accuracy(eval, &w)).transpose()?,
        mse: (!kind.is_logistic()).then(|| mse(eval, &w)).transpose()?,
    };
    Ok((w, update_ms, metrics))
}

async fn post_update(
    State(state): State<Arc<AppState>>,
    Json(body): Json<UpdateBody>,
) -> std::result::Result<Response, ApiError> {
    let s = session(&state)?;
    let request = build_request(&s.engine.ds, &body.removed)?;
    let worker = s.clone();
    let method = body.method;
    let req = request.clone();
    let (w, update_ms, metrics) = tokio::task::spawn_blocking(move || compute_update(&worker, method, &req))
        .await
        .map_err(|e| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
        .map_err(engine_error)?;
    let mut history = s.history.write().expect("history lock");
    let request_id = history.len() as u64 + 1;
    history.push(HistoryEntry {
        request_id,
        removed: request.removed().to_vec(),
        w,
        metrics: metrics.clone(),
    });
    Ok(Json(UpdateResponse {
        request_id,
        update_ms,
        metrics,
    })
    .into_response())
}

async fn get_compare(
    State(state): State<Arc<AppState>>,
    Query(q): Query<CompareQuery>,
) -> std::result::Result<Response, ApiError> {
    let s = session(&state)?;
    let history = s.history.read().expect("history lock");
    let find = |id: u64| {
        history
            .iter()
            .find(|h| h.request_id == id)
            .ok_or_else(|| ApiError(StatusCode::NOT_FOUND, format!("unknown request id {id}")))
    };
    let (a, b) = (find(q.a)?, find(q.b)?);
    let internal = |e: Error| ApiError(StatusCode::INTERNAL_SERVER_ERROR, e.to_string());
    Ok(Json(CompareResponse {
        a: q.a,
        b: q.b,
        l2_dist: l2_dist(&a.w, &b.w).map_err(internal)?,
        cosine: cosine_sim(&a.w, &b.w).ok(),
        sign_flips: sign_flip_report(&a.w, &b.w).map_err(internal)?,
    })
    .into_response())
}

/// Routes with CORS for `origin` (any origin when `None`).
pub fn router(state: Arc<AppState>, origin: Option<&str>) -> Result<Router> {
    let allow = match origin {
        None => AllowOrigin::from(Any),
        Some(o) => AllowOrigin::exact(
            o.parse()
                .map_err(|_| Error::config(format!("invalid CORS origin {o:?}")))?,
        ),
    };
    let cors = CorsLayer::new()
        .allow_origin(allow)
        .allow_methods([HttpMethod::GET, HttpMethod::POST])
        .allow_headers([header::CONTENT_TYPE]);
    Ok(Router::new()
        .route("/session", get(get_session))
        .route("/update", post(post_update))
        .route("/compare", get(get_compare))
        .layer(cors)
        .with_state(state))
}

/// Binds first, then loads in the background; requests get 503 until the
/// session is ready.
pub async fn serve<F>(addr: SocketAddr, origin: Option<String>, load: F) -> Result<()>
where
    F: FnOnce() -> Result<Session> + Send + 'static,
{
    let state = AppState::pending();
    let app = router(state.clone(), origin.as_deref())?;
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on {}", listener.local_addr()?);
    let loader = state.clone();
    tokio::task::spawn_blocking(move || {
        let result = load();
        if let Err(e) = &result {
            eprintln!("failed to load session: {e}");
        }
        loader.finish_loading(result);
    });
    axum::serve(listener, app).await?;
    Ok(())
}
