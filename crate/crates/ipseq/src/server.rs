//! HTTP service over an [`Engine`].
//!
//! Every body is JSON with an `ok` field. Failures carry `code` and
//! `message`; request bodies are parsed by hand so that malformed input
//! yields an error object rather than a framework rejection.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use axum::body::Bytes;
use axum::handler::HandlerWithoutStateExt;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use ipseq_core::session::Truncation;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};
use tokio::net::TcpListener;
use tokio::sync::oneshot;
use tower_http::services::ServeDir;

use crate::engine::Engine;
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Deserialize)]
struct SessionRequest {
    task_id: String,
    sample_id: usize,
}

#[derive(Deserialize)]
struct PredictRequest {
    session_id: u64,
}

#[derive(Deserialize)]
struct FeedbackRequest {
    session_id: u64,
    prefix: String,
    typed_len: usize,
    moved_pointer: bool,
}

#[derive(Deserialize)]
struct ValidateRequest {
    session_id: u64,
    #[serde(default)]
    learn: bool,
    truncate_to: Option<usize>,
    #[serde(default)]
    truncate_moved_pointer: bool,
}

fn status_for(code: &str) -> StatusCode {
    match code {
        "unknown_task" | "unknown_sample" | "unknown_session" | "not_found" => StatusCode::NOT_FOUND,
        "busy" | "bad_state" => StatusCode::CONFLICT,
        "bad_request" => StatusCode::BAD_REQUEST,
        "method_not_allowed" => StatusCode::METHOD_NOT_ALLOWED,
        _ => StatusCode::INTERNAL_SERVER_ERROR,
    }
}

fn error_response(code: &str, message: String) -> Response {
    (status_for(code), Json(json!({"ok": false, "code": code, "message": message}))).into_response()
}

fn reply(result: Result<Value>) -> Response {
    match result {
        Ok(mut body) => {
            body["ok"] = Value::Bool(true);
            (StatusCode::OK, Json(body)).into_response()
        }
        Err(e) => error_response(e.code(), e.to_string()),
    }
}

fn parse<T: DeserializeOwned>(body: &[u8]) -> Result<T> {
    serde_json::from_slice(body).map_err(|e| Error::BadRequest(e.to_string()))
}

/// Runs blocking engine work off the async executor.
async fn blocking(engine: &Arc<Engine>, f: impl FnOnce(&Engine) -> Result<Value> + Send + 'static) -> Response {
    let engine = engine.clone();
    match tokio::task::spawn_blocking(move || f(&engine)).await {
        Ok(r) => reply(r),
        Err(e) => error_response("internal", format!("request handler failed: {e}")),
    }
}

pub fn router(engine: Arc<Engine>) -> Router {
    let e = engine.clone();
    let tasks = move || {
        let e = e.clone();
        async move { reply(Ok(json!({"tasks": e.tasks()}))) }
    };

    let e = engine.clone();
    let session = move |body: Bytes| {
        let e = e.clone();
        async move {
            blocking(&e, move |engine| {
                let req: SessionRequest = parse(&body)?;
                let (id, preview) = engine.start_session(&req.task_id, req.sample_id)?;
                Ok(json!({"session_id": id, "source_preview": preview}))
            })
            .await
        }
    };

    let e = engine.clone();
    let predict = move |body: Bytes| {
        let e = e.clone();
        async move {
            blocking(&e, move |engine| {
                let req: PredictRequest = parse(&body)?;
                Ok(serde_json::to_value(engine.predict(req.session_id)?).unwrap())
            })
            .await
        }
    };

    let e = engine.clone();
    let feedback = move |body: Bytes| {
        let e = e.clone();
        async move {
            blocking(&e, move |engine| {
                let req: FeedbackRequest = parse(&body)?;
                let p = engine.feedback(req.session_id, &req.prefix, req.typed_len, req.moved_pointer)?;
                Ok(serde_json::to_value(p).unwrap())
            })
            .await
        }
    };

    let e = engine.clone();
    let validate = move |body: Bytes| {
        let e = e.clone();
        async move {
            blocking(&e, move |engine| {
                let req: ValidateRequest = parse(&body)?;
                let truncation = req.truncate_to.map(|chars| Truncation {
                    chars,
                    moved_pointer: req.truncate_moved_pointer,
                });
                let v = engine.validate(req.session_id, req.learn, truncation)?;
                let r = v.report;
                Ok(json!({
                    "final_text": r.final_text,
                    "keystrokes": r.effort.keystrokes,
                    "mouse_actions": r.effort.mouse_actions,
                    "iterations": r.effort.iterations,
                    "ksmr": r.ksmr,
                    "updated": v.update.is_some(),
                }))
            })
            .await
        }
    };

    let mut app = Router::new()
        .route("/version", get(|| async { reply(Ok(json!({"version": SCHEMA_VERSION}))) }))
        .route("/tasks", get(tasks))
        .route("/session", post(session))
        .route("/predict", post(predict))
        .route("/feedback", post(feedback))
        .route("/validate", post(validate));
    for (id, dir) in engine.media_dirs() {
        let missing = (|| async { error_response("not_found", "no such media file".into()) }).into_service();
        app = app.nest_service(&format!("/media/{id}"), ServeDir::new(dir).not_found_service(missing));
    }
    app.fallback(|| async { error_response("not_found", "no such route".into()) })
        .method_not_allowed_fallback(|| async { error_response("method_not_allowed", "method not allowed".into()) })
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    listener: TcpListener,
    engine: Arc<Engine>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    axum::serve(listener, router(engine)).with_graceful_shutdown(shutdown).await
}

/// A server on a background thread with its own runtime; stops on drop.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<std::thread::JoinHandle<std::io::Result<()>>>,
}

impl ServerHandle {
    pub fn spawn(engine: Arc<Engine>, addr: SocketAddr) -> Result<Self> {
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .enable_all()
            .build()
            .map_err(|e| Error::io(PathBuf::from("<runtime>"), e))?;
        let listener = runtime
            .block_on(TcpListener::bind(addr))
            .map_err(|e| Error::io(PathBuf::from(addr.to_string()), e))?;
        let addr = listener.local_addr().map_err(|e| Error::io(PathBuf::from(addr.to_string()), e))?;
        let (tx, rx) = oneshot::channel();
        let thread = std::thread::spawn(move || {
            runtime.block_on(serve(listener, engine, async {
                let _ = rx.await;
            }))
        });
        Ok(ServerHandle {
            addr,
            stop: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
