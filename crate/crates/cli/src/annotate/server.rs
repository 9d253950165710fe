use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post, put};
use axum::{Json, Router};
use fairlex::identifier::{category_question, trap_question, format_annotations_tsv, LIKERT_LABELS};
use fairlex::ProtectedCategory;
use serde::{Deserialize, Serialize};
use tower_http::services::ServeDir;

use super::store::{Ack, Progress, Rejection, Store, StoreError, Task};

pub type SharedStore = Arc<Mutex<Store>>;

pub struct ApiError(StatusCode, String);

impl From<Rejection> for ApiError {
    fn from(r: Rejection) -> Self {
        let status = match &r {
            Rejection::BadRequest(_) => StatusCode::BAD_REQUEST,
            Rejection::NotFound(_) => StatusCode::NOT_FOUND,
            Rejection::Conflict(_) => StatusCode::CONFLICT,
        };
        ApiError(status, r.to_string())
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Rejected(r) => r.into(),
            StoreError::Io(e) => {
                log::error!("votes store write failed: {e}");
                ApiError(StatusCode::INTERNAL_SERVER_ERROR, "could not persist the response".into())
            }
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.0, Json(serde_json::json!({ "error": self.1 }))).into_response()
    }
}

fn lock(store: &SharedStore) -> std::sync::MutexGuard<'_, Store> {
    // a panic inside a handler cannot leave the store half-updated: events
    // are applied only after they are persisted
    store.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

#[derive(Serialize)]
struct AnswerOption {
    value: &'static str,
    label: &'static str,
}

#[derive(Serialize)]
struct LikertOption {
    value: u8,
    label: &'static str,
}

fn options() -> Vec<AnswerOption> {
    ProtectedCategory::ALL
        .iter()
        .map(|c| AnswerOption {
            value: c.as_str(),
            label: c.display_name(),
        })
        .chain([AnswerOption {
            value: "none",
            label: "None of the above",
        }])
        .collect()
}

fn likert() -> Vec<LikertOption> {
    LIKERT_LABELS
        .iter()
        .enumerate()
        .map(|(i, label)| LikertOption {
            value: i as u8 + 1,
            label,
        })
        .collect()
}

#[derive(Serialize)]
#[serde(untagged)]
enum TaskView {
    Open {
        session: String,
        complete: bool,
        word: String,
        question: String,
        options: Vec<AnswerOption>,
        trap_question: String,
        likert: Vec<LikertOption>,
        progress: Progress,
    },
    Done {
        session: String,
        complete: bool,
        reliable: Option<bool>,
        progress: Progress,
    },
}

#[derive(Deserialize)]
struct SessionQuery {
    session: String,
}

async fn new_session() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "session": uuid::Uuid::new_v4().to_string() }))
}

async fn task(State(store): State<SharedStore>, Query(q): Query<SessionQuery>) -> Result<Json<TaskView>, ApiError> {
    let task = lock(&store).task(&q.session)?;
    Ok(Json(match task {
        Task::Item { word, progress } => TaskView::Open {
            session: q.session,
            complete: false,
            question: category_question(&word),
            trap_question: trap_question(&word),
            options: options(),
            likert: likert(),
            word,
            progress,
        },
        Task::Complete { reliable, progress } => TaskView::Done {
            session: q.session,
            complete: true,
            reliable,
            progress,
        },
    }))
}

#[derive(Deserialize)]
struct ResponseBody {
    session: String,
    word: String,
    category_choice: String,
    likert: u8,
}

async fn response(State(store): State<SharedStore>, Json(body): Json<ResponseBody>) -> Result<Json<serde_json::Value>, ApiError> {
    let ack = lock(&store).respond(&body.session, &body.word, &body.category_choice, body.likert)?;
    let status = match ack {
        Ack::Recorded => "recorded",
        Ack::Duplicate => "duplicate",
    };
    Ok(Json(serde_json::json!({ "status": status })))
}

async fn tallies(State(store): State<SharedStore>) -> Json<super::store::Tallies> {
    Json(lock(&store).tallies())
}

#[derive(Deserialize)]
struct KappaQuery {
    a: String,
    b: String,
}

async fn kappa(State(store): State<SharedStore>, Query(q): Query<KappaQuery>) -> Result<Json<super::store::KappaCell>, ApiError> {
    Ok(Json(lock(&store).kappa(&q.a, &q.b)?))
}

async fn sources(State(store): State<SharedStore>) -> Json<Vec<String>> {
    Json(lock(&store).source_names())
}

async fn put_source(
    State(store): State<SharedStore>,
    Path(name): Path<String>,
    body: String,
) -> Result<Json<serde_json::Value>, ApiError> {
    let words = lock(&store).put_source(&name, &body)?;
    Ok(Json(serde_json::json!({ "source": name, "words": words })))
}

/// Current decisions as annotation TSV.
async fn export(State(store): State<SharedStore>) -> Response {
    let text = format_annotations_tsv(&lock(&store).decisions());
    ([(header::CONTENT_TYPE, "text/tab-separated-values; charset=utf-8")], text).into_response()
}

/// The HTTP API, plus static files from `static_dir` for everything else.
pub fn router(store: SharedStore, static_dir: Option<PathBuf>) -> Router {
    let api = Router::new()
        .route("/api/session", post(new_session))
        .route("/api/task", get(task))
        .route("/api/response", post(response))
        .route("/api/admin/tallies", get(tallies))
        .route("/api/admin/kappa", get(kappa))
        .route("/api/admin/sources", get(sources))
        .route("/api/admin/sources/{name}", put(put_source))
        .route("/api/admin/export", get(export))
        .with_state(store);
    match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api,
    }
}
