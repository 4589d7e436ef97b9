//! Review service: tiles, cached model proposals and journaled annotations.
//!
//! | method | path                      | body / response                                        |
//! |--------|---------------------------|--------------------------------------------------------|
//! | GET    | `/tasks`                  | `[{id, status, proposal_count}]`                       |
//! | GET    | `/tasks/{id}`             | `{id, status, proposal_count, annotation}`             |
//! | GET    | `/tasks/{id}/image`       | PNG bytes                                              |
//! | GET    | `/tasks/{id}/proposals`   | `{task, checkpoint, proposals: [{x_min, y_min, x_max, y_max, score}]}`; `?min_score=` filters |
//! | POST   | `/tasks/{id}/annotations` | `{boxes: [{x_min, y_min, x_max, y_max}], provenance}` → `{task, seq, status, annotation}` |
//! | GET    | `/progress`               | `{total, pending, in_review, verified}`                |
//!
//! Box coordinates are tile pixels. Posted corners are rounded to integers;
//! `provenance` defaults to `verified`, any other value leaves the task in review.
//! Errors come back as `{error}` with a 4xx/5xx status.

use std::collections::HashMap;
use std::io::Cursor;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use seedling_core::data::{
    load_image, AnnotatedObject, AnnotationRecord, PixelBox, Provenance, SEEDLING,
};
use seedling_core::detector::Detector;
use seedling_core::geometry::ScoredBox;

use crate::io::Dataset;
use crate::store::{AnnotationStore, Progress, TaskStatus};

#[derive(Debug, Clone)]
pub struct TaskRef {
    pub id: String,
    pub image: PathBuf,
    pub width: u32,
    pub height: u32,
}

type ProposalKey = (String, String);

pub struct ServiceState {
    tasks: Vec<TaskRef>,
    index: HashMap<String, usize>,
    detector: Arc<Detector>,
    checkpoint_hash: String,
    proposals: Mutex<HashMap<ProposalKey, Arc<Vec<ScoredBox>>>>,
    store: Mutex<AnnotationStore>,
}

impl ServiceState {
    pub fn new(
        dataset: &Dataset,
        detector: Detector,
        checkpoint_hash: String,
        store: AnnotationStore,
    ) -> anyhow::Result<Self> {
        let mut tasks = Vec::new();
        for r in &dataset.manifest.records {
            let image = dataset.image_path(r);
            let (width, height) = image::image_dimensions(&image)
                .map_err(|e| anyhow::anyhow!("{}: {e}", image.display()))?;
            tasks.push(TaskRef {
                id: r.id.clone(),
                image,
                width,
                height,
            });
        }
        let index = tasks
            .iter()
            .enumerate()
            .map(|(i, t)| (t.id.clone(), i))
            .collect();
        Ok(ServiceState {
            tasks,
            index,
            detector: Arc::new(detector),
            checkpoint_hash,
            proposals: Mutex::new(HashMap::new()),
            store: Mutex::new(store),
        })
    }

    pub fn tasks(&self) -> &[TaskRef] {
        &self.tasks
    }

    fn task(&self, id: &str) -> Result<&TaskRef, ApiError> {
        self.index
            .get(id)
            .map(|&i| &self.tasks[i])
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, format!("unknown task {id}")))
    }

    /// Cached per (checkpoint hash, tile id); computed on first request.
    pub fn proposals(&self, task: &TaskRef) -> Result<Arc<Vec<ScoredBox>>, ApiError> {
        let key = (self.checkpoint_hash.clone(), task.id.clone());
        if let Some(p) = self.proposals.lock().expect("cache lock").get(&key) {
            return Ok(p.clone());
        }
        // computed outside the lock so distinct tiles run concurrently
        let img = load_image(&task.image).map_err(ApiError::internal)?;
        let dets = Arc::new(
            self.detector
                .detect_tile(&img)
                .map_err(ApiError::internal)?,
        );
        Ok(self
            .proposals
            .lock()
            .expect("cache lock")
            .entry(key)
            .or_insert(dets)
            .clone())
    }

    pub fn cached_proposal_count(&self) -> usize {
        self.proposals.lock().expect("cache lock").len()
    }

    pub fn progress(&self) -> Progress {
        self.store
            .lock()
            .expect("store lock")
            .progress(self.tasks.iter().map(|t| t.id.as_str()))
    }
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string())
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

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxBody {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalBody {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalsResponse {
    pub task: String,
    pub checkpoint: String,
    pub proposals: Vec<ProposalBody>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub id: String,
    pub status: TaskStatus,
    pub proposal_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationBody {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub provenance: Provenance,
    pub boxes: Vec<BoxBody>,
}

impl From<&AnnotationRecord> for AnnotationBody {
    fn from(r: &AnnotationRecord) -> Self {
        AnnotationBody {
            image_id: r.image_id.clone(),
            width: r.width,
            height: r.height,
            provenance: r.provenance,
            boxes: r
                .objects
                .iter()
                .map(|o| BoxBody {
                    x_min: o.bbox.x_min as f64,
                    y_min: o.bbox.y_min as f64,
                    x_max: o.bbox.x_max as f64,
                    y_max: o.bbox.y_max as f64,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDetail {
    pub id: String,
    pub status: TaskStatus,
    pub proposal_count: usize,
    pub annotation: Option<AnnotationBody>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitRequest {
    pub boxes: Vec<BoxBody>,
    #[serde(default)]
    pub provenance: Option<Provenance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmitResponse {
    pub task: String,
    pub seq: u64,
    pub status: TaskStatus,
    pub annotation: AnnotationBody,
}

#[derive(Debug, Deserialize)]
struct ProposalQuery {
    min_score: Option<f64>,
}

pub fn router(state: Arc<ServiceState>) -> Router {
    Router::new()
        .route("/tasks", get(list_tasks))
        .route("/tasks/{id}", get(get_task))
        .route("/tasks/{id}/image", get(get_image))
        .route("/tasks/{id}/proposals", get(get_proposals))
        .route("/tasks/{id}/annotations", post(post_annotation))
        .route("/progress", get(get_progress))
        .with_state(state)
}

/// Runs blocking model or disk work off the async executor.
async fn blocking<T: Send + 'static>(
    f: impl FnOnce() -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(ApiError::internal)?
}

async fn list_tasks(
    State(s): State<Arc<ServiceState>>,
) -> Result<Json<Vec<TaskSummary>>, ApiError> {
    blocking(move || {
        s.tasks
            .iter()
            .map(|t| {
                let proposal_count = s.proposals(t)?.len();
                let status = s.store.lock().expect("store lock").status(&t.id);
                Ok(TaskSummary {
                    id: t.id.clone(),
                    status,
                    proposal_count,
                })
            })
            .collect::<Result<Vec<_>, ApiError>>()
    })
    .await
    .map(Json)
}

async fn get_task(
    State(s): State<Arc<ServiceState>>,
    Path(id): Path<String>,
) -> Result<Json<TaskDetail>, ApiError> {
    blocking(move || {
        let t = s.task(&id)?;
        let proposal_count = s.proposals(t)?.len();
        let store = s.store.lock().expect("store lock");
        let stored = store.get(&id);
        Ok(TaskDetail {
            id: id.clone(),
            status: stored.map_or(TaskStatus::Pending, |x| x.status),
            proposal_count,
            annotation: stored.map(|x| AnnotationBody::from(&x.record)),
        })
    })
    .await
    .map(Json)
}

async fn get_image(
    State(s): State<Arc<ServiceState>>,
    Path(id): Path<String>,
) -> Result<Response, ApiError> {
    let png = blocking(move || {
        let t = s.task(&id)?;
        let is_png = t
            .image
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png {
            return std::fs::read(&t.image).map_err(ApiError::internal);
        }
        let img = load_image(&t.image).map_err(ApiError::internal)?;
        let mut buf = Cursor::new(Vec::new());
        img.write_to(&mut buf, image::ImageFormat::Png)
            .map_err(ApiError::internal)?;
        Ok(buf.into_inner())
    })
    .await?;
    Ok(([(header::CONTENT_TYPE, "image/png")], png).into_response())
}

async fn get_proposals(
    State(s): State<Arc<ServiceState>>,
    Path(id): Path<String>,
    Query(q): Query<ProposalQuery>,
) -> Result<Json<ProposalsResponse>, ApiError> {
    let min_score = q.min_score.unwrap_or(0.0);
    blocking(move || {
        let t = s.task(&id)?;
        let proposals = s
            .proposals(t)?
            .iter()
            .filter(|d| d.score >= min_score)
            .map(|d| ProposalBody {
                x_min: d.bbox.x_min,
                y_min: d.bbox.y_min,
                x_max: d.bbox.x_max,
                y_max: d.bbox.y_max,
                score: d.score,
            })
            .collect();
        Ok(ProposalsResponse {
            task: id.clone(),
            checkpoint: s.checkpoint_hash.clone(),
            proposals,
        })
    })
    .await
    .map(Json)
}

async fn post_annotation(
    State(s): State<Arc<ServiceState>>,
    Path(id): Path<String>,
    body: Bytes,
) -> Result<Json<SubmitResponse>, ApiError> {
    let req: SubmitRequest = serde_json::from_slice(&body)
        .map_err(|e| ApiError::bad_request(format!("malformed annotation body: {e}")))?;
    blocking(move || {
        let t = s.task(&id)?;
        let mut record = AnnotationRecord::new(t.id.clone(), t.width, t.height);
        record.provenance = req.provenance.unwrap_or(Provenance::Verified);
        for (i, b) in req.boxes.iter().enumerate() {
            let corners = [b.x_min, b.y_min, b.x_max, b.y_max];
            if corners.iter().any(|v| !v.is_finite()) {
                return Err(ApiError::bad_request(format!(
                    "box {i}: non-finite coordinate"
                )));
            }
            let px = PixelBox {
                x_min: b.x_min.round() as i64,
                y_min: b.y_min.round() as i64,
                x_max: b.x_max.round() as i64,
                y_max: b.y_max.round() as i64,
            };
            record.objects.push(AnnotatedObject {
                name: SEEDLING.to_string(),
                bbox: px,
            });
        }
        record
            .validate()
            .map_err(|e| ApiError::bad_request(e.to_string()))?;
        let entry = s
            .store
            .lock()
            .expect("store lock")
            .write(&id, record)
            .map_err(ApiError::internal)?;
        Ok(SubmitResponse {
            task: id.clone(),
            seq: entry.seq,
            status: entry.status,
            annotation: AnnotationBody::from(&entry.record),
        })
    })
    .await
    .map(Json)
}

async fn get_progress(State(s): State<Arc<ServiceState>>) -> Json<Progress> {
    Json(s.progress())
}

/// Serves until the listener fails or ctrl-c arrives.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<ServiceState>,
) -> std::io::Result<()> {
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
