//! HTTP and websocket front end. Handlers translate requests into [`Op`]s
//! and forward them to the session thread, which applies them one at a time.

use std::hash::{DefaultHasher, Hash, Hasher};
use std::net::SocketAddr;
use std::sync::mpsc;

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{DefaultBodyLimit, Path, Query, State};
use axum::http::{header, HeaderMap, HeaderValue, Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use gsstitch_core::optimize::StitchConfig;
use gsstitch_core::splat::FieldRole;
use serde::Deserialize;
use serde_json::json;
use tokio::sync::{broadcast, oneshot};

use crate::session::{ApiError, ControlOp, Op, Payload, Reply, Session, SessionMsg};
use crate::worker::StreamMessage;

pub const REVISION_HEADER: &str = "x-revision";
const STREAM_CAPACITY: usize = 4096;
const MAX_UPLOAD: usize = 2 << 30;

#[derive(Clone)]
pub struct AppState {
    inbox: mpsc::Sender<SessionMsg>,
    stream: broadcast::Sender<StreamMessage>,
}

impl AppState {
    /// Spawns the session thread.
    pub fn start() -> Self {
        let (inbox, rx) = mpsc::channel::<SessionMsg>();
        let (stream, _) = broadcast::channel(STREAM_CAPACITY);
        let mut session = Session::new(inbox.clone(), stream.clone());
        std::thread::Builder::new()
            .name("gsstitch-session".into())
            .spawn(move || {
                for msg in rx {
                    match msg {
                        SessionMsg::Request { op, token, fingerprint, reply } => {
                            let _ = reply.send(session.handle(op, token, fingerprint));
                        }
                        SessionMsg::Worker { run_id, event } => session.worker_event(run_id, event),
                    }
                }
            })
            .expect("spawn session thread");
        Self { inbox, stream }
    }

    async fn call(&self, op: Op, token: Option<u64>, fingerprint: u64) -> Reply {
        let (tx, rx) = oneshot::channel();
        let gone = Reply {
            status: 503,
            payload: Payload::Json(json!({"error": "session unavailable"})),
            revision: 0,
        };
        if self.inbox.send(SessionMsg::Request { op, token, fingerprint, reply: tx }).is_err() {
            return gone;
        }
        rx.await.unwrap_or(gone)
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/fields", post(upload_field).get(list_fields))
        .route("/fields/{id}", axum::routing::delete(delete_field))
        .route("/fields/{id}/transform", post(set_transform))
        .route("/fields/{id}/selection/box", post(select_box))
        .route("/fields/{id}/selection/brush", post(select_brush))
        .route("/fields/{id}/extract", post(extract))
        .route("/boundary/identify", post(identify_boundary))
        .route("/boundary/stats", get(boundary_stats))
        .route("/palette/aggregate", post(aggregate_palette))
        .route("/palette", get(get_palette))
        .route("/optimize/start", post(optimize_start))
        .route("/optimize/status", get(optimize_status))
        .route("/optimize/{action}", post(optimize_control))
        .route("/render", post(render))
        .route("/export/ply", get(export_ply))
        .route("/config/schema", get(config_schema))
        .route("/stream", get(stream))
        .layer(DefaultBodyLimit::max(MAX_UPLOAD))
        .with_state(state)
}

/// Binds and serves until the process exits.
pub async fn serve(addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(AppState::start())).await
}

fn fingerprint(method: &Method, uri: &Uri, body: &[u8]) -> u64 {
    let mut h = DefaultHasher::new();
    method.as_str().hash(&mut h);
    uri.path().hash(&mut h);
    uri.query().hash(&mut h);
    body.hash(&mut h);
    h.finish()
}

fn revision_token(headers: &HeaderMap) -> Result<Option<u64>, ApiError> {
    match headers.get(REVISION_HEADER) {
        None => Ok(None),
        Some(v) => v
            .to_str()
            .ok()
            .and_then(|s| s.trim().parse().ok())
            .map(Some)
            .ok_or_else(|| ApiError::bad_request(format!("{REVISION_HEADER} must be an unsigned integer"))),
    }
}

fn error_response(e: ApiError) -> Response {
    let status = StatusCode::from_u16(e.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, axum::Json(json!({"error": e.message}))).into_response()
}

fn reply_response(r: Reply) -> Response {
    let status = StatusCode::from_u16(r.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    let mut resp = match r.payload {
        Payload::Json(v) => (status, axum::Json(v)).into_response(),
        Payload::Bytes { content_type, data } => {
            (status, [(header::CONTENT_TYPE, content_type)], data.as_ref().clone()).into_response()
        }
    };
    resp.headers_mut().insert(REVISION_HEADER, HeaderValue::from(r.revision));
    resp
}

fn parse_json<T: for<'de> Deserialize<'de>>(body: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("invalid JSON body: {e}")))
}

/// Empty bodies mean "all defaults".
fn parse_json_or_default<T: for<'de> Deserialize<'de> + Default>(body: &[u8]) -> Result<T, ApiError> {
    if body.iter().all(|b| b.is_ascii_whitespace()) {
        Ok(T::default())
    } else {
        parse_json(body)
    }
}

struct Call<'a> {
    state: &'a AppState,
    method: Method,
    uri: Uri,
    headers: HeaderMap,
}

impl Call<'_> {
    async fn run(self, body: &[u8], op: Result<Op, ApiError>) -> Response {
        let token = match revision_token(&self.headers) {
            Ok(t) => t,
            Err(e) => return error_response(e),
        };
        match op {
            Ok(op) => reply_response(self.state.call(op, token, fingerprint(&self.method, &self.uri, body)).await),
            Err(e) => error_response(e),
        }
    }
}

#[derive(Deserialize)]
struct UploadQuery {
    name: Option<String>,
    role: Option<FieldRole>,
}

async fn upload_field(
    State(state): State<AppState>,
    method: Method,
    uri: Uri,
    headers: HeaderMap,
    query: Result<Query<UploadQuery>, axum::extract::rejection::QueryRejection>,
    body: Bytes,
) -> Response {
    let op = query.map_err(|e| ApiError::bad_request(e.to_string())).map(|Query(q)| Op::UploadField {
        name: q.name.unwrap_or_else(|| "field".into()),
        role: q.role,
        bytes: body.to_vec(),
    });
    Call { state: &state, method, uri, headers }.run(&body, op).await
}

async fn list_fields(State(state): State<AppState>, method: Method, uri: Uri, headers: HeaderMap) -> Response {
    Call { state: &state, method, uri, headers }.run(&[], Ok(Op::ListFields)).await
}

async fn delete_field(State(state): State<AppState>, method: Method, uri: Uri, headers: HeaderMap, Path(id): Path<u64>) -> Response {
    Call { state: &state, method, uri, headers }.run(&[], Ok(Op::DeleteField { id })).await
}

async fn set_transform(
    State(state): State<AppState>,
    method: Method,
    uri: Uri,
    headers: HeaderMap,
    Path(id): Path<u64>,
    body: Bytes,
) -> Response {
    let op = parse_json(&body).map(|transform| Op::SetTransform { id, transform });
    Call { state: &state, method, uri, headers }.run(&body, op).await
}

async fn select_box(
    State(state): State<AppState>,
    method: Method,
    uri: Uri,
    headers: HeaderMap,
    Path(id): Path<u64>,
    body: Bytes,
) -> Response {
    let op = parse_json(&body).map(|selection| Op::SelectBox { id, selection });
    Call { state: &state, method, uri, headers }.run(&body, op).await
}

async fn select_brush(
    State(state): State<AppState>,
    method: Method,
    uri: Uri,
    headers: HeaderMap,
    Path(id): Path<u64>,
    body: Bytes,
) -> Response {
    let op = parse_json(&body).map(|stroke| Op::SelectBrush { id, stroke });
    Call { state: &state, method, uri, headers }.run(&body, op).await
}

async fn extract(
    State(state): State<AppState>,
    method: Method,
    uri: Uri,
    headers: HeaderMap,
    Path(id): Path<u64>,
    body: Bytes,
) -> Response {
    let op = parse_json_or_default(&body).map(|request| Op::Extract { id, request });
    Call { state: &state, method, uri, headers }.run(&body, op).await
}

async fn identify_boundary(State(state): State<AppState>, method: Method, uri: Uri, headers: HeaderMap, body: Bytes) -> Response {
    let op = parse_json_or_default::<StitchConfig>(&body).map(|config| Op::IdentifyBoundary { config });
    Call { state: &state, method, uri, headers }.run(&body, op).await
}

async fn boundary_stats(State(state): State<AppState>, method: Method, uri: Uri, headers: HeaderMap) -> Response {
    Call { state: &state, method, uri, headers }.run(&[], Ok(Op::BoundaryStats)).await
}

async fn aggregate_palette(State(state): State<AppState>, method: Method, uri: Uri, headers: HeaderMap, body: Bytes) -> Response {
    let op = parse_json_or_default::<StitchConfig>(&body).map(|config| Op::AggregatePalette { config });
    Call { state: &state, method, uri, headers }.run(&body, op).await
}

async fn get_palette(State(state): State<AppState>, method: Method, uri: Uri, headers: HeaderMap) -> Response {
    Call { state: &state, method, uri, headers }.run(&[], Ok(Op::GetPalette)).await
}

async fn optimize_start(State(state): State<AppState>, method: Method, uri: Uri, headers: HeaderMap, body: Bytes) -> Response {
    let op = if body.iter().all(|b| b.is_ascii_whitespace()) {
        parse_json(b"{}")
    } else {
        parse_json(&body)
    }
    .map(|req| Op::OptimizeStart(Box::new(req)));
    Call { state: &state, method, uri, headers }.run(&body, op).await
}

async fn optimize_control(
    State(state): State<AppState>,
    method: Method,
    uri: Uri,
    headers: HeaderMap,
    Path(action): Path<String>,
) -> Response {
    let op = match action.as_str() {
        "pause" => Ok(ControlOp::Pause),
        "resume" => Ok(ControlOp::Resume),
        "stop" => Ok(ControlOp::Stop),
        other => Err(ApiError::not_found(format!("unknown optimizer action '{other}'"))),
    }
    .map(Op::OptimizeControl);
    Call { state: &state, method, uri, headers }.run(&[], op).await
}

async fn optimize_status(State(state): State<AppState>, method: Method, uri: Uri, headers: HeaderMap) -> Response {
    Call { state: &state, method, uri, headers }.run(&[], Ok(Op::OptimizeStatus)).await
}

async fn render(State(state): State<AppState>, method: Method, uri: Uri, headers: HeaderMap, body: Bytes) -> Response {
    let op = parse_json(&body).map(|camera| Op::Render { camera });
    Call { state: &state, method, uri, headers }.run(&body, op).await
}

async fn export_ply(State(state): State<AppState>, method: Method, uri: Uri, headers: HeaderMap) -> Response {
    Call { state: &state, method, uri, headers }.run(&[], Ok(Op::ExportPly)).await
}

async fn config_schema() -> Response {
    axum::Json(StitchConfig::json_schema()).into_response()
}

async fn stream(State(state): State<AppState>, ws: WebSocketUpgrade) -> Response {
    ws.on_upgrade(move |socket| forward_stream(state, socket))
}

async fn forward_stream(state: AppState, mut socket: WebSocket) {
    let mut rx = state.stream.subscribe();
    let status = state.call(Op::OptimizeStatus, None, 0).await;
    if let Payload::Json(mut v) = status.payload {
        v["type"] = json!("status");
        if socket.send(Message::Text(v.to_string().into())).await.is_err() {
            return;
        }
    }
    loop {
        tokio::select! {
            msg = rx.recv() => {
                let out = match msg {
                    Ok(StreamMessage::Text(t)) => Message::Text(t.into()),
                    Ok(StreamMessage::Binary(b)) => Message::Binary(b.into()),
                    Err(broadcast::error::RecvError::Lagged(n)) => {
                        log::debug!("stream client lagged by {n} messages");
                        continue;
                    }
                    Err(broadcast::error::RecvError::Closed) => break,
                };
                if socket.send(out).await.is_err() {
                    break;
                }
            }
            incoming = socket.recv() => {
                match incoming {
                    Some(Ok(Message::Close(_))) | None | Some(Err(_)) => break,
                    Some(Ok(_)) => {}
                }
            }
        }
    }
}
