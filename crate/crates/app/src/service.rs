//! JSON HTTP API over a loaded model, probe and corpus.
//!
//! Artifacts are loaded once and never written. Counterfactual generation
//! runs on a bounded pool: a fair semaphore admits `workers` jobs at a time
//! and queues the rest in arrival order.

use std::path::PathBuf;
use std::sync::Arc;

use axum::extract::rejection::{JsonRejection, PathRejection, QueryRejection};
use axum::extract::{FromRequest, FromRequestParts, Path, Query, Request, State};
use axum::http::request::Parts;
use axum::http::{header, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use latentgrade::corpus::{load_corpus, Corpus, Split};
use latentgrade::counterfactual::{CeMode, CeSteps};
use latentgrade::dae::{embed_corpus, DaeModel};
use latentgrade::geometry::{predict_grade, signed_distance, Calibration, Hyperplane, Probe};
use latentgrade::image::Image;
use latentgrade::par::Execution;
use latentgrade::Error;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;
use tower_http::cors::{Any, CorsLayer};

use crate::pipeline::{self, CeExport, CurvePoint, Projection};

/// Most frames one counterfactual request may ask for.
pub const MAX_FRAMES: usize = 16;

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub manifest: PathBuf,
    pub checkpoint: PathBuf,
    pub probe: PathBuf,
    pub workers: usize,
    pub steps: CeSteps,
    pub exec: Execution,
}

#[derive(Debug)]
pub struct Loaded {
    pub model: DaeModel,
    pub probe: Probe,
    pub plane: Hyperplane,
    pub cal: Calibration,
}

pub struct AppState {
    pub corpus: Result<Corpus, String>,
    pub loaded: Result<Loaded, String>,
    pub jobs: Arc<Semaphore>,
    pub steps: CeSteps,
    pub exec: Execution,
}

impl AppState {
    /// Load everything `config` names. Failures are kept, not raised: the
    /// service still starts and answers affected endpoints with 503.
    pub fn load(config: &ServeConfig) -> Self {
        let loaded = (|| -> Result<Loaded, Error> {
            let model = DaeModel::load(&config.checkpoint)?;
            let probe = Probe::load(&config.probe)?;
            let plane = probe.hyperplane()?;
            if plane.dim() != model.latent_dim() {
                return Err(Error::Config(format!(
                    "probe is {}-dimensional, model latents are {}-dimensional",
                    plane.dim(),
                    model.latent_dim()
                )));
            }
            let cal = probe.calibration()?.clone();
            Ok(Loaded {
                model,
                probe,
                plane,
                cal,
            })
        })();
        AppState {
            corpus: load_corpus(&config.manifest).map_err(|e| e.to_string()),
            loaded: loaded.map_err(|e| e.to_string()),
            jobs: Arc::new(Semaphore::new(config.workers.max(1))),
            steps: config.steps,
            exec: config.exec,
        }
    }

    fn corpus(&self) -> Result<&Corpus, ApiError> {
        self.corpus
            .as_ref()
            .map_err(|e| ApiError::not_ready("corpus not loaded", e))
    }

    fn loaded(&self) -> Result<&Loaded, ApiError> {
        self.loaded
            .as_ref()
            .map_err(|e| ApiError::not_ready("model, probe or calibration not loaded", e))
    }
}

type Shared = Arc<AppState>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    BadRequest,
    NotFound,
    NotReady,
    Internal,
}

/// Body of every non-2xx response.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    pub detail: Option<String>,
    #[serde(skip)]
    status: Option<StatusCode>,
}

impl ApiError {
    fn new(code: ErrorCode, message: impl Into<String>, detail: Option<String>) -> Self {
        ApiError {
            code,
            message: message.into(),
            detail,
            status: None,
        }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::BadRequest, message, None)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::NotFound, message, None)
    }

    fn not_ready(message: &str, detail: &str) -> Self {
        Self::new(ErrorCode::NotReady, message, Some(detail.to_string()))
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Internal, message, None)
    }

    fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = Some(detail.into());
        self
    }

    fn status(&self) -> StatusCode {
        self.status.unwrap_or(match self.code {
            ErrorCode::BadRequest => StatusCode::BAD_REQUEST,
            ErrorCode::NotFound => StatusCode::NOT_FOUND,
            ErrorCode::NotReady => StatusCode::SERVICE_UNAVAILABLE,
            ErrorCode::Internal => StatusCode::INTERNAL_SERVER_ERROR,
        })
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status(), Json(self)).into_response()
    }
}

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        match e {
            Error::Domain(_)
            | Error::Shape(_)
            | Error::OutOfRange { .. }
            | Error::Config(_)
            | Error::DegenerateData(_)
            | Error::Json(_) => ApiError::bad_request("request rejected").with_detail(e.to_string()),
            _ => ApiError::internal("internal error").with_detail(e.to_string()),
        }
    }
}

impl From<JsonRejection> for ApiError {
    fn from(r: JsonRejection) -> Self {
        ApiError::bad_request("malformed JSON body").with_detail(r.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(r: QueryRejection) -> Self {
        ApiError::bad_request("malformed query string").with_detail(r.body_text())
    }
}

impl From<PathRejection> for ApiError {
    fn from(r: PathRejection) -> Self {
        ApiError::bad_request("malformed path parameter").with_detail(r.body_text())
    }
}

struct ApiJson<T>(T);

impl<S, T> FromRequest<S> for ApiJson<T>
where
    S: Send + Sync,
    Json<T>: FromRequest<S, Rejection = JsonRejection>,
{
    type Rejection = ApiError;

    async fn from_request(req: Request, state: &S) -> Result<Self, ApiError> {
        let Json(v) = Json::<T>::from_request(req, state).await?;
        Ok(ApiJson(v))
    }
}

struct ApiQuery<T>(T);

impl<S, T> FromRequestParts<S> for ApiQuery<T>
where
    S: Send + Sync,
    T: serde::de::DeserializeOwned,
{
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, ApiError> {
        let Query(v) = Query::<T>::from_request_parts(parts, state).await?;
        Ok(ApiQuery(v))
    }
}

struct ApiPath<T>(T);

impl<S, T> FromRequestParts<S> for ApiPath<T>
where
    S: Send + Sync,
    T: serde::de::DeserializeOwned + Send,
{
    type Rejection = ApiError;

    async fn from_request_parts(parts: &mut Parts, state: &S) -> Result<Self, ApiError> {
        let Path(v) = Path::<T>::from_request_parts(parts, state).await?;
        Ok(ApiPath(v))
    }
}

pub fn router(state: Shared) -> Router {
    let cors = CorsLayer::new()
        .allow_origin(Any)
        .allow_methods([Method::GET, Method::POST])
        .allow_headers([header::CONTENT_TYPE]);
    Router::new()
        .route("/api/health", get(health))
        .route("/api/samples", get(samples))
        .route("/api/sample/{id}", get(sample))
        .route("/api/encode", post(encode))
        .route("/api/counterfactual", post(counterfactual))
        .route("/api/calibration", get(calibration))
        .route("/api/projection", get(projection))
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .method_not_allowed_fallback(|| async {
            let mut e = ApiError::bad_request("method not allowed for this endpoint");
            e.status = Some(StatusCode::METHOD_NOT_ALLOWED);
            e
        })
        .layer(cors)
        .with_state(state)
}

pub async fn serve(config: ServeConfig, host: &str, port: u16) -> Result<(), Error> {
    let state = AppState::load(&config);
    if let Err(e) = &state.corpus {
        eprintln!("warning: corpus unavailable: {e}");
    }
    if let Err(e) = &state.loaded {
        eprintln!("warning: model endpoints will answer 503: {e}");
    }
    let addr = format!("{host}:{port}");
    let io = |e| Error::Io {
        path: PathBuf::from(&addr),
        source: e,
    };
    let listener = tokio::net::TcpListener::bind(&addr).await.map_err(io)?;
    eprintln!("listening on http://{}", listener.local_addr().map_err(io)?);
    axum::serve(listener, router(Arc::new(state)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
        .map_err(io)
}

/// Run CPU-bound work off the async executor.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::internal("worker task failed").with_detail(e.to_string()))?
}

#[derive(Serialize)]
struct Health {
    status: &'static str,
    model_loaded: bool,
}

async fn health(State(st): State<Shared>) -> Json<Health> {
    Json(Health {
        status: "ok",
        model_loaded: st.loaded.is_ok(),
    })
}

#[derive(Deserialize)]
struct SplitQuery {
    split: Option<String>,
}

fn parse_split(q: &SplitQuery) -> Result<Split, ApiError> {
    match &q.split {
        None => Ok(Split::Test),
        Some(s) => s
            .parse()
            .map_err(|e: Error| ApiError::bad_request("unknown split").with_detail(e.to_string())),
    }
}

#[derive(Serialize)]
struct SampleSummary {
    id: u64,
    grade: u8,
    g: f64,
}

async fn samples(State(st): State<Shared>, ApiQuery(q): ApiQuery<SplitQuery>) -> Result<Json<Vec<SampleSummary>>, ApiError> {
    let split = parse_split(&q)?;
    let list = st
        .corpus()?
        .split(split)
        .map(|s| SampleSummary {
            id: s.id,
            grade: s.grade,
            g: s.g,
        })
        .collect();
    Ok(Json(list))
}

#[derive(Serialize)]
struct SampleDetail {
    id: u64,
    image: Image,
    grade: u8,
    g: f64,
    split: Split,
}

async fn sample(State(st): State<Shared>, ApiPath(id): ApiPath<u64>) -> Result<Json<SampleDetail>, ApiError> {
    let s = st
        .corpus()?
        .get(id)
        .ok_or_else(|| ApiError::not_found(format!("no sample with id {id}")))?;
    Ok(Json(SampleDetail {
        id: s.id,
        image: s.image.clone(),
        grade: s.grade,
        g: s.g,
        split: s.split,
    }))
}

/// A request's source image: a corpus id or an inline image.
#[derive(Debug, Deserialize)]
struct Source {
    id: Option<u64>,
    image: Option<Image>,
}

impl Source {
    fn resolve(self, st: &AppState, size: usize) -> Result<(Option<u64>, Image), ApiError> {
        match (self.id, self.image) {
            (Some(_), Some(_)) => Err(ApiError::bad_request("give either `id` or `image`, not both")),
            (None, None) => Err(ApiError::bad_request("missing `id` or `image`")),
            (Some(id), None) => {
                let s = st
                    .corpus()?
                    .get(id)
                    .ok_or_else(|| ApiError::not_found(format!("no sample with id {id}")))?;
                Ok((Some(id), s.image.clone()))
            }
            (None, Some(img)) => {
                if img.width != size || img.height != size || img.pixels.len() != size * size {
                    return Err(ApiError::bad_request(format!("image must be {size}×{size}")).with_detail(format!(
                        "got {}×{} with {} pixels",
                        img.width,
                        img.height,
                        img.pixels.len()
                    )));
                }
                if img.pixels.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return Err(ApiError::bad_request("pixels must lie in [0, 1]"));
                }
                Ok((None, img))
            }
        }
    }
}

#[derive(Serialize)]
struct Encoded {
    z_sem: Vec<f64>,
    distance: f64,
    score: f64,
    grade: u8,
}

async fn encode(State(st): State<Shared>, ApiJson(src): ApiJson<Source>) -> Result<Json<Encoded>, ApiError> {
    let size = st.loaded()?.model.image_size();
    let (_, image) = src.resolve(&st, size)?;
    let st2 = st.clone();
    blocking(move || {
        let l = st2.loaded()?;
        let z = l
            .model
            .encode_semantic(&[&image], st2.exec)?
            .pop()
            .ok_or_else(|| ApiError::internal("encoder returned nothing"))?;
        let z = pipeline::to_f64(&z);
        let distance = signed_distance(&z, &l.plane)?;
        let (score, grade) = predict_grade(&z, &l.plane, &l.cal)?;
        Ok(Json(Encoded {
            z_sem: z,
            distance,
            score,
            grade,
        }))
    })
    .await
}

#[derive(Debug, Deserialize)]
struct CeRequest {
    #[serde(flatten)]
    source: Source,
    #[serde(flatten)]
    mode: CeMode,
}

async fn counterfactual(State(st): State<Shared>, ApiJson(req): ApiJson<CeRequest>) -> Result<Json<CeExport>, ApiError> {
    let loaded = st.loaded()?;
    let (id, image) = req.source.resolve(&st, loaded.model.image_size())?;
    req.mode.validate(loaded.cal.gmax)?;
    if let CeMode::Sweep { sweep_grades, .. } = &req.mode {
        if sweep_grades.len() > MAX_FRAMES {
            return Err(ApiError::bad_request(format!("at most {MAX_FRAMES} sweep values per request")));
        }
    }
    // The semaphore is fair, so queued jobs start in arrival order.
    let permit = st
        .jobs
        .clone()
        .acquire_owned()
        .await
        .map_err(|_| ApiError::internal("job queue closed"))?;
    let st2 = st.clone();
    blocking(move || {
        let _permit = permit;
        let l = st2.loaded()?;
        let export = pipeline::run_counterfactual(&l.model, &l.probe, &image, id, &req.mode, st2.steps, st2.exec)?;
        Ok(Json(export))
    })
    .await
}

#[derive(Serialize)]
struct CalibrationView {
    mode: &'static str,
    degree: usize,
    gmax: f64,
    range: [f64; 2],
    points: Vec<CurvePoint>,
}

async fn calibration(State(st): State<Shared>) -> Result<Json<CalibrationView>, ApiError> {
    let cal = &st.loaded()?.cal;
    Ok(Json(CalibrationView {
        mode: pipeline::mode_name(cal.mode),
        degree: cal.degree,
        gmax: cal.gmax,
        range: cal.range,
        points: pipeline::calibration_curve(cal),
    }))
}

async fn projection(State(st): State<Shared>, ApiQuery(q): ApiQuery<SplitQuery>) -> Result<Json<Projection>, ApiError> {
    let split = parse_split(&q)?;
    st.loaded()?;
    st.corpus()?;
    let st2 = st.clone();
    blocking(move || {
        let (l, corpus) = (st2.loaded()?, st2.corpus()?);
        let records = embed_corpus(&l.model, corpus, split, st2.exec)?;
        Ok(Json(pipeline::projection(&records, corpus, split)?))
    })
    .await
}
