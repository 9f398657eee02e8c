use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use dial_core::dial::{
    satisfy, submit_corrections, CorrectionPolicy, FinetuneOptions, RoundState, RoundStatus,
    Workspace,
};
use dial_core::inference::overlay_image;
use dial_core::seed::sha256_hex;
use dial_core::wsi::{read_tile, SlideManifest, TILE_SIZE};
use dial_core::{DialError, LabelMask, LabelRaster, Palette};

use crate::backend::Backend;
use crate::jobs::{Job, JobKind, JobQueue};
use crate::strokes::{apply_delta, rasterize_strokes, Stroke};
use crate::wal::{LogEvent, StrokeLog};

#[derive(Debug)]
pub struct ApiError {
    pub status: StatusCode,
    pub message: String,
}

impl ApiError {
    pub fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn conflict(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::CONFLICT, message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::NOT_FOUND, message)
    }

    fn unprocessable(message: impl Into<String>) -> Self {
        ApiError::new(StatusCode::UNPROCESSABLE_ENTITY, message)
    }
}

impl From<DialError> for ApiError {
    fn from(e: DialError) -> Self {
        let status = match &e {
            DialError::RoundState(_) => StatusCode::CONFLICT,
            DialError::NotFound { .. } => StatusCode::NOT_FOUND,
            DialError::InvalidConfig(_)
            | DialError::InvalidLabel(_)
            | DialError::DimensionMismatch { .. }
            | DialError::SlideMismatch { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl From<std::io::Error> for ApiError {
    fn from(e: std::io::Error) -> Self {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (
            self.status,
            Json(serde_json::json!({ "error": self.message })),
        )
            .into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

pub struct App {
    ws: Workspace,
    backend: Arc<dyn Backend>,
    jobs: JobQueue,
    /// Serializes every state-changing request.
    round: Mutex<RoundState>,
    logs: Mutex<HashMap<(String, usize), StrokeLog>>,
    manifests: BTreeMap<String, SlideManifest>,
    palette: Palette,
    rasters: Mutex<HashMap<(String, String), (String, Arc<LabelRaster>)>>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SlideSummary {
    pub slide_id: String,
    pub case_id: String,
    pub split: String,
    pub width: usize,
    pub height: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CurrentRound {
    pub state: RoundState,
    /// A training or finetuning job is queued or running.
    pub busy: bool,
    pub next_round: usize,
    /// Live strokes per slide for the next round.
    pub strokes: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct CorrectionRequest {
    #[serde(default)]
    pub strokes: Vec<Stroke>,
    /// Ids of earlier strokes to withdraw.
    #[serde(default)]
    pub undo: Vec<u64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CorrectionAck {
    pub round: usize,
    pub ids: Vec<u64>,
    pub version: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FinetuneRequest {
    pub weighting: CorrectionPolicy,
    #[serde(default)]
    pub parent: Option<String>,
    #[serde(default)]
    pub tag: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JobAccepted {
    pub job_id: u64,
}

#[derive(Deserialize)]
struct OverlayQuery {
    alpha: Option<f64>,
}

impl App {
    pub fn open(ws: Workspace, backend: Arc<dyn Backend>) -> dial_core::Result<Arc<App>> {
        let state = ws.load_state()?;
        let mut manifests = BTreeMap::new();
        for s in ws.corpus().train.iter().chain(&ws.corpus().test) {
            manifests.insert(
                s.slide_id.clone(),
                SlideManifest::load(&ws.slide_dir(&s.slide_id))?,
            );
        }
        Ok(Arc::new(App {
            ws,
            backend,
            jobs: JobQueue::start(),
            round: Mutex::new(state),
            logs: Mutex::new(HashMap::new()),
            manifests,
            palette: Palette::default(),
            rasters: Mutex::new(HashMap::new()),
        }))
    }

    pub fn workspace(&self) -> &Workspace {
        &self.ws
    }

    pub fn jobs(&self) -> &JobQueue {
        &self.jobs
    }

    pub fn state(&self) -> RoundState {
        self.round.lock().unwrap().clone()
    }

    fn log_path(&self, slide_id: &str, round: usize) -> std::path::PathBuf {
        self.ws
            .root()
            .join("strokes")
            .join(slide_id)
            .join(format!("round-{round}.log"))
    }

    fn with_log<R>(
        &self,
        slide_id: &str,
        round: usize,
        f: impl FnOnce(&mut StrokeLog) -> R,
    ) -> std::io::Result<R> {
        let mut logs = self.logs.lock().unwrap();
        let key = (slide_id.to_string(), round);
        if !logs.contains_key(&key) {
            let log = StrokeLog::open(self.log_path(slide_id, round))?;
            logs.insert(key.clone(), log);
        }
        Ok(f(logs.get_mut(&key).expect("inserted above")))
    }

    fn manifest(&self, slide_id: &str) -> ApiResult<&SlideManifest> {
        self.manifests
            .get(slide_id)
            .ok_or_else(|| ApiError::not_found(format!("unknown slide {slide_id}")))
    }

    fn live_stroke_counts(&self, round: usize) -> ApiResult<BTreeMap<String, usize>> {
        let mut out = BTreeMap::new();
        for s in &self.ws.corpus().train {
            let n = self.with_log(&s.slide_id, round, |l| l.live().len())?;
            if n > 0 {
                out.insert(s.slide_id.clone(), n);
            }
        }
        Ok(out)
    }

    fn current(&self) -> ApiResult<CurrentRound> {
        let state = self.state();
        let next_round = state.next_correction_round();
        Ok(CurrentRound {
            busy: self.jobs.training_active(),
            strokes: self.live_stroke_counts(next_round)?,
            next_round,
            state,
        })
    }

    /// Checks that corrections may be drawn now.
    fn check_correctable(&self, state: &RoundState) -> ApiResult<()> {
        if self.jobs.training_active() {
            return Err(ApiError::conflict("a training job is queued or running"));
        }
        if state.status != RoundStatus::AwaitingCorrection {
            return Err(ApiError::conflict(format!(
                "corrections are not accepted while status is {:?}",
                state.status
            )));
        }
        if state.pending.is_some() {
            return Err(ApiError::conflict(
                "this round's corrections were already submitted",
            ));
        }
        Ok(())
    }

    pub fn post_corrections(&self, slide_id: &str, body: &[u8]) -> ApiResult<CorrectionAck> {
        self.manifest(slide_id)?;
        if !self.ws.is_training_slide(slide_id) {
            return Err(ApiError::unprocessable(format!(
                "{slide_id} is not a training slide"
            )));
        }
        let req: CorrectionRequest = serde_json::from_slice(body)
            .map_err(|e| ApiError::unprocessable(format!("malformed strokes: {e}")))?;
        if req.strokes.is_empty() && req.undo.is_empty() {
            return Err(ApiError::unprocessable("empty stroke set"));
        }
        for s in &req.strokes {
            s.validate()
                .map_err(|e| ApiError::unprocessable(e.to_string()))?;
        }
        let state = self.round.lock().unwrap();
        self.check_correctable(&state)?;
        let round = state.next_correction_round();
        let result = self.with_log(slide_id, round, |log| -> ApiResult<CorrectionAck> {
            let live: Vec<u64> = log.live().into_iter().map(|(id, _)| id).collect();
            for id in &req.undo {
                if !live.contains(id) {
                    return Err(ApiError::unprocessable(format!(
                        "no live stroke {id} to undo"
                    )));
                }
            }
            let mut next = log.next_id();
            let mut events = Vec::new();
            let mut ids = Vec::new();
            for s in req.strokes {
                ids.push(next);
                events.push(LogEvent::Stroke {
                    id: next,
                    stroke: s,
                });
                next += 1;
            }
            events.extend(req.undo.iter().map(|&id| LogEvent::Undo { id }));
            log.append(&events)?;
            Ok(CorrectionAck {
                round,
                ids,
                version: log.version(),
            })
        })?;
        drop(state);
        result
    }

    /// Rasterizes every slide's live strokes into round-`round` masks.
    fn stroke_masks(&self, round: usize) -> ApiResult<Vec<LabelMask>> {
        let mut masks = Vec::new();
        for s in &self.ws.corpus().train {
            let strokes = self.with_log(&s.slide_id, round, |l| l.live_strokes())?;
            if strokes.is_empty() {
                continue;
            }
            let m = self.manifest(&s.slide_id)?;
            let raster = rasterize_strokes(&strokes, m.width, m.height)
                .map_err(|e| ApiError::unprocessable(e.to_string()))?;
            masks.push(LabelMask::from_raster(
                s.slide_id.clone(),
                round as i32,
                &raster,
            ));
        }
        Ok(masks)
    }

    pub fn post_train(self: &Arc<Self>) -> ApiResult<JobAccepted> {
        let state = self.round.lock().unwrap();
        if self.jobs.training_active() {
            return Err(ApiError::conflict("a training job is queued or running"));
        }
        if state.status != RoundStatus::AwaitingTraining {
            return Err(ApiError::conflict(format!(
                "cannot train while status is {:?}",
                state.status
            )));
        }
        let app = Arc::clone(self);
        let job_id = self.jobs.submit(JobKind::Train, move |h| {
            let start = app.state();
            let next = app
                .backend
                .initial(&app.ws, start, &mut |f, m| h.progress(f, m))
                .map_err(|e| e.to_string())?;
            *app.round.lock().unwrap() = next;
            Ok(())
        });
        drop(state);
        Ok(JobAccepted { job_id })
    }

    pub fn post_finetune(self: &Arc<Self>, body: &[u8]) -> ApiResult<JobAccepted> {
        let req: FinetuneRequest = serde_json::from_slice(body)
            .map_err(|e| ApiError::unprocessable(format!("malformed request: {e}")))?;
        let mut state = self.round.lock().unwrap();
        if self.jobs.training_active() {
            return Err(ApiError::conflict("a training job is queued or running"));
        }
        if state.status != RoundStatus::AwaitingCorrection {
            return Err(ApiError::conflict(format!(
                "cannot finetune while status is {:?}",
                state.status
            )));
        }
        let k = match state.pending {
            Some(k) => k,
            None => {
                let masks = self.stroke_masks(state.next_correction_round())?;
                if !masks.is_empty() {
                    let k = state.next_correction_round();
                    if let Some(p) = &req.parent {
                        check_parent(&state, p, k)?;
                    }
                    *state = submit_corrections(&self.ws, state.clone(), masks, false)?;
                    k
                } else if req.parent.is_some() && state.round_index > 0 {
                    // Another model for the current round, from the same parent round.
                    state.round_index
                } else {
                    return Err(ApiError::conflict(
                        "no corrections to finetune on; use satisfy to finish",
                    ));
                }
            }
        };
        if let Some(p) = &req.parent {
            check_parent(&state, p, k)?;
        }
        if let Some(t) = &req.tag {
            if state.model(t).is_some() {
                return Err(ApiError::conflict(format!("model tag {t} is taken")));
            }
        }
        let app = Arc::clone(self);
        let opts = FinetuneOptions {
            parent: req.parent,
            tag: req.tag,
        };
        let job_id = self.jobs.submit(JobKind::Finetune, move |h| {
            let start = app.state();
            let next = app
                .backend
                .finetune(&app.ws, start, req.weighting, &opts, &mut |f, m| {
                    h.progress(f, m)
                })
                .map_err(|e| e.to_string())?;
            *app.round.lock().unwrap() = next;
            Ok(())
        });
        drop(state);
        Ok(JobAccepted { job_id })
    }

    pub fn post_satisfy(&self) -> ApiResult<RoundState> {
        let mut state = self.round.lock().unwrap();
        self.check_correctable(&state)?;
        if !self
            .live_stroke_counts(state.next_correction_round())?
            .is_empty()
        {
            return Err(ApiError::conflict(
                "strokes are pending for this round; finetune or undo them first",
            ));
        }
        *state = satisfy(&self.ws, state.clone())?;
        Ok(state.clone())
    }

    pub fn post_assess(self: &Arc<Self>) -> ApiResult<JobAccepted> {
        let state = self.state();
        if state.models.is_empty() {
            return Err(ApiError::conflict("no model to assess yet"));
        }
        let app = Arc::clone(self);
        let job_id = self.jobs.submit(JobKind::Assess, move |h| {
            let st = app.state();
            app.backend
                .assess(&app.ws, &st, &mut |f, m| h.progress(f, m))
                .map_err(|e| e.to_string())
        });
        Ok(JobAccepted { job_id })
    }

    pub fn assess_report(&self) -> ApiResult<serde_json::Value> {
        let reports = self.ws.root().join("reports");
        let read = |p: std::path::PathBuf| -> Option<serde_json::Value> {
            serde_json::from_slice(&std::fs::read(p).ok()?).ok()
        };
        let comparison = read(reports.join("comparison.json"));
        let active = self
            .state()
            .active
            .and_then(|t| read(reports.join(t).join("report.json")));
        if comparison.is_none() && active.is_none() {
            return Err(ApiError::not_found("no assessment has been run"));
        }
        Ok(serde_json::json!({ "comparison": comparison, "active": active }))
    }

    pub fn tile_png(
        &self,
        slide_id: &str,
        level: usize,
        row: usize,
        col: usize,
    ) -> ApiResult<Vec<u8>> {
        self.check_tile(slide_id, level, row, col)?;
        let tile = read_tile(&self.ws.slide_dir(slide_id), level, row, col)?;
        Ok(tile.encode_png()?)
    }

    fn check_tile(&self, slide_id: &str, level: usize, row: usize, col: usize) -> ApiResult<()> {
        let m = self.manifest(slide_id)?;
        let info = m
            .levels
            .iter()
            .find(|l| l.level == level)
            .ok_or_else(|| ApiError::not_found(format!("no level {level}")))?;
        if row >= info.tile_rows || col >= info.tile_cols {
            return Err(ApiError::not_found(format!(
                "tile {row}/{col} outside level {level}"
            )));
        }
        Ok(())
    }

    /// Label raster behind an overlay and a version string that changes
    /// whenever its content can change.
    fn overlay_labels(&self, slide_id: &str, which: &str) -> ApiResult<(String, Arc<LabelRaster>)> {
        let state = self.state();
        let version = if which == "pred" {
            let tag = state
                .active
                .clone()
                .ok_or_else(|| ApiError::not_found("no model has been trained yet"))?;
            let hash = &state.require_model(&tag)?.hash;
            if !self.ws.prediction_path(&tag, slide_id).exists() {
                return Err(ApiError::not_found(format!("no prediction for {slide_id}")));
            }
            format!("pred:{tag}:{hash}")
        } else {
            let k: usize = which
                .parse()
                .map_err(|_| ApiError::not_found(format!("unknown overlay `{which}`")))?;
            let next = state.next_correction_round();
            if k > next {
                return Err(ApiError::not_found(format!("round {k} does not exist yet")));
            }
            let submitted = state.corrections.iter().filter(|c| c.round <= k).count();
            let log_version = if k == next && state.pending.is_none() {
                self.with_log(slide_id, k, |l| l.version())?
            } else {
                0
            };
            format!("round:{k}:{submitted}:{log_version}")
        };
        let key = (slide_id.to_string(), which.to_string());
        if let Some((v, r)) = self.rasters.lock().unwrap().get(&key) {
            if *v == version {
                return Ok((version, Arc::clone(r)));
            }
        }
        let raster = if which == "pred" {
            let tag = state.active.as_deref().expect("checked above");
            self.ws.load_prediction(tag, slide_id)?.data().clone()
        } else {
            let k: usize = which.parse().expect("checked above");
            let mut base = if self.ws.is_training_slide(slide_id) {
                self.ws.merged_mask(slide_id, k)?.to_raster()
            } else {
                let m = self.manifest(slide_id)?;
                LabelRaster::unlabeled(m.width, m.height)
            };
            if k == state.next_correction_round()
                && state.pending.is_none()
                && self.ws.is_training_slide(slide_id)
            {
                let strokes = self.with_log(slide_id, k, |l| l.live_strokes())?;
                let (w, h) = base.dims();
                let delta = rasterize_strokes(&strokes, w, h)
                    .map_err(|e| ApiError::unprocessable(e.to_string()))?;
                apply_delta(&mut base, &delta);
            }
            base
        };
        let raster = Arc::new(raster);
        self.rasters
            .lock()
            .unwrap()
            .insert(key, (version.clone(), Arc::clone(&raster)));
        Ok((version, raster))
    }

    pub fn overlay_etag(
        &self,
        version: &str,
        which: &str,
        alpha: f64,
        level: usize,
        row: usize,
        col: usize,
    ) -> String {
        let key = format!(
            "{version}|{which}|{:?}|{:016x}|{level}/{row}/{col}",
            self.palette.0,
            alpha.to_bits()
        );
        format!("\"{}\"", &sha256_hex(key.as_bytes())[..32])
    }

    /// PNG bytes (or `None` when `if_none_match` is current) and the ETag.
    #[allow(clippy::too_many_arguments)]
    pub fn overlay_png(
        &self,
        slide_id: &str,
        which: &str,
        level: usize,
        row: usize,
        col: usize,
        alpha: f64,
        if_none_match: Option<&str>,
    ) -> ApiResult<(Option<Vec<u8>>, String)> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(ApiError::unprocessable(format!(
                "alpha {alpha} outside [0, 1]"
            )));
        }
        self.check_tile(slide_id, level, row, col)?;
        let (version, labels) = self.overlay_labels(slide_id, which)?;
        let etag = self.overlay_etag(&version, which, alpha, level, row, col);
        if if_none_match == Some(etag.as_str()) {
            return Ok((None, etag));
        }
        let tile = read_tile(&self.ws.slide_dir(slide_id), level, row, col)?;
        let img = overlay_image(
            &tile,
            &labels,
            &self.palette,
            alpha,
            level,
            col * TILE_SIZE,
            row * TILE_SIZE,
        )?;
        Ok((Some(img.encode_png()?), etag))
    }

    pub fn slides(&self) -> Vec<SlideSummary> {
        let c = self.ws.corpus();
        c.train
            .iter()
            .map(|s| (s, "train"))
            .chain(c.test.iter().map(|s| (s, "test")))
            .map(|(s, split)| {
                let m = &self.manifests[&s.slide_id];
                SlideSummary {
                    slide_id: s.slide_id.clone(),
                    case_id: s.case_id.clone(),
                    split: split.into(),
                    width: m.width,
                    height: m.height,
                }
            })
            .collect()
    }
}

fn check_parent(state: &RoundState, parent: &str, k: usize) -> ApiResult<()> {
    let m = state.require_model(parent)?;
    if m.round + 1 != k {
        return Err(ApiError::conflict(format!(
            "{parent} was trained in round {}, so it cannot take round-{k} corrections",
            m.round
        )));
    }
    Ok(())
}

async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> ApiResult<T> + Send + 'static,
) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

async fn list_slides(State(app): State<Arc<App>>) -> Json<Vec<SlideSummary>> {
    Json(app.slides())
}

async fn slide_meta(
    State(app): State<Arc<App>>,
    Path(id): Path<String>,
) -> ApiResult<Json<serde_json::Value>> {
    let m = app.manifest(&id)?;
    let split = if app.ws.is_training_slide(&id) {
        "train"
    } else {
        "test"
    };
    Ok(Json(serde_json::json!({ "manifest": m, "split": split })))
}

async fn tile(
    State(app): State<Arc<App>>,
    Path((id, level, row, col)): Path<(String, usize, usize, usize)>,
) -> ApiResult<Response> {
    Ok(png(
        blocking(move || app.tile_png(&id, level, row, col)).await?
    ))
}

async fn overlay(
    State(app): State<Arc<App>>,
    Path((id, which, level, row, col)): Path<(String, String, usize, usize, usize)>,
    Query(q): Query<OverlayQuery>,
    headers: HeaderMap,
) -> ApiResult<Response> {
    let inm = headers
        .get(header::IF_NONE_MATCH)
        .and_then(|v| v.to_str().ok())
        .map(str::to_string);
    let alpha = q.alpha.unwrap_or(0.5);
    let (bytes, etag) =
        blocking(move || app.overlay_png(&id, &which, level, row, col, alpha, inm.as_deref()))
            .await?;
    Ok(match bytes {
        Some(b) => (
            [
                (header::CONTENT_TYPE, "image/png".to_string()),
                (header::ETAG, etag),
            ],
            b,
        )
            .into_response(),
        None => (StatusCode::NOT_MODIFIED, [(header::ETAG, etag)]).into_response(),
    })
}

async fn current_round(State(app): State<Arc<App>>) -> ApiResult<Json<CurrentRound>> {
    Ok(Json(blocking(move || app.current()).await?))
}

async fn train(State(app): State<Arc<App>>) -> ApiResult<(StatusCode, Json<JobAccepted>)> {
    Ok((
        StatusCode::ACCEPTED,
        Json(blocking(move || app.post_train()).await?),
    ))
}

async fn finetune(
    State(app): State<Arc<App>>,
    body: Bytes,
) -> ApiResult<(StatusCode, Json<JobAccepted>)> {
    Ok((
        StatusCode::ACCEPTED,
        Json(blocking(move || app.post_finetune(&body)).await?),
    ))
}

async fn satisfy_round(State(app): State<Arc<App>>) -> ApiResult<Json<RoundState>> {
    Ok(Json(blocking(move || app.post_satisfy()).await?))
}

async fn post_corrections(
    State(app): State<Arc<App>>,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<CorrectionAck>> {
    Ok(Json(
        blocking(move || app.post_corrections(&id, &body)).await?,
    ))
}

async fn get_corrections(
    State(app): State<Arc<App>>,
    Path(id): Path<String>,
) -> ApiResult<Json<serde_json::Value>> {
    app.manifest(&id)?;
    let round = app.state().next_correction_round();
    let strokes = app.with_log(&id, round, |l| {
        l.live()
            .into_iter()
            .map(|(id, s)| serde_json::json!({ "id": id, "stroke": s }))
            .collect::<Vec<_>>()
    })?;
    Ok(Json(
        serde_json::json!({ "round": round, "strokes": strokes }),
    ))
}

async fn list_jobs(State(app): State<Arc<App>>) -> Json<Vec<Job>> {
    Json(app.jobs.list())
}

async fn get_job(State(app): State<Arc<App>>, Path(id): Path<u64>) -> ApiResult<Json<Job>> {
    app.jobs
        .get(id)
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("unknown job {id}")))
}

async fn assess(State(app): State<Arc<App>>) -> ApiResult<(StatusCode, Json<JobAccepted>)> {
    Ok((StatusCode::ACCEPTED, Json(app.post_assess()?)))
}

async fn assess_report(State(app): State<Arc<App>>) -> ApiResult<Json<serde_json::Value>> {
    Ok(Json(blocking(move || app.assess_report()).await?))
}

pub fn router(app: Arc<App>) -> Router {
    Router::new()
        .route("/slides", get(list_slides))
        .route("/slides/{id}/meta", get(slide_meta))
        .route("/slides/{id}/tile/{level}/{row}/{col}", get(tile))
        .route(
            "/slides/{id}/overlay/{which}/{level}/{row}/{col}",
            get(overlay),
        )
        .route("/rounds/current", get(current_round))
        .route("/rounds/train", post(train))
        .route("/rounds/finetune", post(finetune))
        .route("/rounds/satisfy", post(satisfy_round))
        .route(
            "/corrections/{slide_id}",
            post(post_corrections).get(get_corrections),
        )
        .route("/jobs", get(list_jobs))
        .route("/jobs/{id}", get(get_job))
        .route("/assess", post(assess))
        .route("/assess/report", get(assess_report))
        .with_state(app)
}
