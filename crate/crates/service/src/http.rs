//! HTTP routes over a [`SurveyStore`]. Bodies are JSON; the graph route
//! returns the canonical graph file.

use std::future::Future;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Deserialize;
use tokio::net::TcpListener;

use crate::model::{Selection, SurveyDefinition};
use crate::{ServiceError, SurveyStore};

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match &self {
            ServiceError::Validation(_) => StatusCode::BAD_REQUEST,
            ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
            ServiceError::Conflict(_) => StatusCode::CONFLICT,
            ServiceError::Expired(_) => StatusCode::GONE,
            ServiceError::Storage(_) | ServiceError::Corrupt(_) => {
                log::error!("{self}");
                StatusCode::INTERNAL_SERVER_ERROR
            }
        };
        (status, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

type Shared = Arc<SurveyStore>;

/// Runs a store call off the async workers, since writes block on fsync.
async fn blocking<T, F>(store: &Shared, f: F) -> Result<Json<T>, ServiceError>
where
    T: Send + 'static,
    F: FnOnce(&SurveyStore) -> Result<T, ServiceError> + Send + 'static,
{
    let store = store.clone();
    tokio::task::spawn_blocking(move || f(&store))
        .await
        .map_err(|e| ServiceError::Corrupt(format!("worker failed: {e}")))?
        .map(Json)
}

#[derive(Deserialize)]
struct ResponseBody {
    respondent: String,
    #[serde(default)]
    text: Option<String>,
}

#[derive(Deserialize)]
struct SampleQuery {
    respondent: String,
    k: Option<usize>,
}

#[derive(Deserialize)]
struct JudgmentBody {
    ticket: String,
    selections: Vec<Selection>,
}

#[derive(Deserialize)]
struct GraphQuery {
    #[serde(default)]
    neutralize: bool,
    #[serde(default)]
    seed: u64,
}

pub fn router(store: Shared) -> Router {
    Router::new()
        .route("/health", get(|| async { "ok" }))
        .route(
            "/surveys",
            post(|State(s): State<Shared>, Json(def): Json<SurveyDefinition>| async move {
                blocking(&s, move |st| st.create_survey(def)).await.map(|j| (StatusCode::CREATED, j))
            }),
        )
        .route(
            "/surveys/{survey}",
            get(|State(s): State<Shared>, Path(id): Path<String>| async move {
                blocking(&s, move |st| st.survey(&id)).await
            }),
        )
        .route(
            "/surveys/{survey}/questions/{question}/responses",
            post(
                |State(s): State<Shared>, Path((sv, q)): Path<(String, String)>, Json(b): Json<ResponseBody>| async move {
                    blocking(&s, move |st| st.submit_response(&sv, &q, &b.respondent, b.text))
                        .await
                        .map(|j| (StatusCode::CREATED, j))
                },
            ),
        )
        .route(
            "/surveys/{survey}/questions/{question}/sample",
            get(
                |State(s): State<Shared>, Path((sv, q)): Path<(String, String)>, Query(p): Query<SampleQuery>| async move {
                    blocking(&s, move |st| st.sample_references(&sv, &q, &p.respondent, p.k)).await
                },
            ),
        )
        .route(
            "/surveys/{survey}/questions/{question}/judgments",
            post(
                |State(s): State<Shared>, Path((sv, q)): Path<(String, String)>, Json(b): Json<JudgmentBody>| async move {
                    blocking(&s, move |st| st.submit_judgments(&sv, &q, &b.ticket, &b.selections))
                        .await
                        .map(|j| (StatusCode::CREATED, j))
                },
            ),
        )
        .route(
            "/surveys/{survey}/questions/{question}/graph",
            get(
                |State(s): State<Shared>, Path((sv, q)): Path<(String, String)>, Query(p): Query<GraphQuery>| async move {
                    blocking(&s, move |st| {
                        st.export_graph(&sv, &q, p.neutralize, p.seed).map(|g| g.to_file())
                    })
                    .await
                },
            ),
        )
        .with_state(store)
}

/// Serves until `shutdown` resolves, then writes a snapshot.
pub async fn serve(
    listener: TcpListener,
    store: Shared,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServiceError> {
    axum::serve(listener, router(store.clone()))
        .with_graceful_shutdown(shutdown)
        .await?;
    tokio::task::spawn_blocking(move || store.snapshot())
        .await
        .map_err(|e| ServiceError::Corrupt(format!("worker failed: {e}")))?
}
