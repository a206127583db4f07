//! Editor session state and the operations the HTTP service exposes. All
//! mutation happens on one thread that owns a [`Session`]; the optimizer
//! worker reports back through [`WorkerEvent`] messages.

use std::collections::BTreeMap;
use std::sync::mpsc::Sender;
use std::sync::Arc;

use gsstitch_core::optimize::{default_palette, LossRecord, Palette, StitchConfig};
use gsstitch_core::ply;
use gsstitch_core::render::{Camera, RenderPlan, ViewSpec, DEFAULT_FOV_Y_DEGREES};
use gsstitch_core::spatial::{extract_selection, select_brush, BrushMode};
use gsstitch_core::splat::{FieldRole, GaussianField, RigidTransform};
use nalgebra::{Vector2, Vector3};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::pipeline::{self, BoundaryStats, BoxSpec, OptimizeResult, PipelineError};
use crate::worker::{self, Control, StreamMessage, WorkerEvent};

/// An error reply: HTTP status plus message.
#[derive(Debug, Clone, PartialEq)]
pub struct ApiError {
    pub status: u16,
    pub message: String,
}

impl ApiError {
    pub fn new(status: u16, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    pub fn bad_request(message: impl Into<String>) -> Self {
        Self::new(400, message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self::new(404, message)
    }

    pub fn conflict(message: impl Into<String>) -> Self {
        Self::new(409, message)
    }
}

impl From<PipelineError> for ApiError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::EmptyBoundary => Self::new(422, e.to_string()),
            PipelineError::Roles(_) => Self::conflict(e.to_string()),
            _ => Self::bad_request(e.to_string()),
        }
    }
}

/// Reply body.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Json(Value),
    Bytes { content_type: &'static str, data: Arc<Vec<u8>> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reply {
    pub status: u16,
    pub payload: Payload,
    /// Session revision after the request.
    pub revision: u64,
}

/// Camera given either as a look-at description or in full.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CameraSpec {
    LookAt(LookAt),
    Full(Camera),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct LookAt {
    pub eye: [f64; 3],
    pub target: [f64; 3],
    #[serde(default)]
    pub up: Option<[f64; 3]>,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub fov_y_degrees: Option<f64>,
}

impl CameraSpec {
    pub fn camera(&self) -> Result<Camera, ApiError> {
        let cam = match self {
            CameraSpec::Full(c) => c.clone(),
            CameraSpec::LookAt(l) => {
                let view = ViewSpec {
                    width: l.width,
                    height: l.height,
                    fov_y_degrees: l.fov_y_degrees.unwrap_or(DEFAULT_FOV_Y_DEGREES),
                };
                if l.width == 0 || l.height == 0 || l.width > 8192 || l.height > 8192 {
                    return Err(ApiError::bad_request("image size must be between 1 and 8192"));
                }
                let (eye, target) = (Vector3::from(l.eye), Vector3::from(l.target));
                match l.up {
                    Some(up) => Camera::look_at_with_up(eye, target, Vector3::from(up), view),
                    None => Camera::look_at(eye, target, view),
                }
                .map_err(|e| ApiError::bad_request(e.to_string()))?
            }
        };
        cam.validate().map_err(|e| ApiError::bad_request(e.to_string()))?;
        Ok(cam)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectMode {
    #[default]
    Replace,
    Add,
    Remove,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BoxSelection {
    #[serde(flatten)]
    pub bbox: BoxSpec,
    #[serde(default)]
    pub mode: SelectMode,
}

/// One brush stroke: the brush is applied at each point in order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct BrushStroke {
    pub camera: CameraSpec,
    pub points: Vec<[f64; 2]>,
    pub radius: f64,
    pub mode: BrushMode,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct ExtractRequest {
    #[serde(default)]
    pub role: Option<FieldRole>,
    /// Remove the original field.
    #[serde(default)]
    pub replace: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StartRequest {
    #[serde(default)]
    pub config: StitchConfig,
    #[serde(default = "default_preview_resolution")]
    pub preview_resolution: u32,
}

fn default_preview_resolution() -> u32 {
    worker::PREVIEW_RESOLUTION
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlOp {
    Pause,
    Resume,
    Stop,
}

/// Everything the service can be asked to do.
#[derive(Debug, Clone)]
pub enum Op {
    UploadField { name: String, role: Option<FieldRole>, bytes: Vec<u8> },
    ListFields,
    DeleteField { id: u64 },
    SetTransform { id: u64, transform: RigidTransform },
    SelectBox { id: u64, selection: BoxSelection },
    SelectBrush { id: u64, stroke: BrushStroke },
    Extract { id: u64, request: ExtractRequest },
    IdentifyBoundary { config: StitchConfig },
    BoundaryStats,
    AggregatePalette { config: StitchConfig },
    GetPalette,
    OptimizeStart(Box<StartRequest>),
    OptimizeControl(ControlOp),
    OptimizeStatus,
    Render { camera: CameraSpec },
    ExportPly,
}

impl Op {
    pub fn is_mutation(&self) -> bool {
        !matches!(
            self,
            Op::ListFields | Op::BoundaryStats | Op::GetPalette | Op::OptimizeStatus | Op::Render { .. } | Op::ExportPly
        )
    }
}

#[derive(Debug, Clone)]
struct FieldEntry {
    id: u64,
    name: String,
    role: Option<FieldRole>,
    field: GaussianField,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum RunState {
    Idle,
    Starting,
    Running,
    Paused,
    Stopped,
    Done,
    Failed,
}

#[derive(Debug, Clone)]
struct OptimizerState {
    state: RunState,
    run_id: u64,
    total_iters: usize,
    t_phase_active: bool,
    last: Option<LossRecord>,
    error: Option<String>,
    control: Option<Arc<Control>>,
}

impl Default for OptimizerState {
    fn default() -> Self {
        Self { state: RunState::Idle, run_id: 0, total_iters: 0, t_phase_active: false, last: None, error: None, control: None }
    }
}

/// Messages into the session thread.
pub enum SessionMsg {
    Request { op: Op, token: Option<u64>, fingerprint: u64, reply: tokio::sync::oneshot::Sender<Reply> },
    Worker { run_id: u64, event: WorkerEvent },
}

const REPLAY_CACHE: usize = 256;

pub struct Session {
    fields: Vec<FieldEntry>,
    next_id: u64,
    revision: u64,
    config: StitchConfig,
    boundary: Option<BoundaryStats>,
    palette: Option<Palette>,
    optimizer: OptimizerState,
    /// Latest global-space fields from the optimizer (live preview, then result).
    live: Option<Vec<GaussianField>>,
    result: Option<OptimizeResult>,
    replay: BTreeMap<u64, (u64, Reply)>,
    inbox: Sender<SessionMsg>,
    stream: tokio::sync::broadcast::Sender<StreamMessage>,
}

impl Session {
    pub fn new(inbox: Sender<SessionMsg>, stream: tokio::sync::broadcast::Sender<StreamMessage>) -> Self {
        Self {
            fields: Vec::new(),
            next_id: 1,
            revision: 0,
            config: StitchConfig::default(),
            boundary: None,
            palette: None,
            optimizer: OptimizerState::default(),
            live: None,
            result: None,
            replay: BTreeMap::new(),
            inbox,
            stream,
        }
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    /// Applies a request with optional revision token. A token equal to the
    /// current revision applies the request; replaying an already-applied
    /// token with the same request returns the original reply; anything
    /// else is a conflict.
    pub fn handle(&mut self, op: Op, token: Option<u64>, fingerprint: u64) -> Reply {
        let mutation = op.is_mutation();
        if mutation {
            if let Some(t) = token {
                if let Some((fp, reply)) = self.replay.get(&t) {
                    if *fp == fingerprint {
                        return reply.clone();
                    }
                    return self.error_reply(ApiError::conflict(format!(
                        "revision {t} was already used by a different request; current revision is {}",
                        self.revision
                    )));
                }
                if t != self.revision {
                    return self.error_reply(ApiError::conflict(format!(
                        "stale revision {t}; current revision is {}",
                        self.revision
                    )));
                }
            }
        }
        let result = self.apply(op);
        let applied = result.is_ok() && mutation;
        if applied {
            self.revision += 1;
            self.broadcast_json(json!({"type": "revision", "revision": self.revision}));
        }
        let reply = match result {
            Ok((status, payload)) => Reply { status, payload, revision: self.revision },
            Err(e) => self.error_reply(e),
        };
        if applied {
            if let Some(t) = token {
                self.replay.insert(t, (fingerprint, reply.clone()));
                while self.replay.len() > REPLAY_CACHE {
                    self.replay.pop_first();
                }
            }
        }
        reply
    }

    fn error_reply(&self, e: ApiError) -> Reply {
        Reply { status: e.status, payload: Payload::Json(json!({"error": e.message})), revision: self.revision }
    }

    fn broadcast_json(&self, v: Value) {
        let _ = self.stream.send(StreamMessage::Text(v.to_string()));
    }

    fn apply(&mut self, op: Op) -> Result<(u16, Payload), ApiError> {
        let ok = |v: Value| Ok((200, Payload::Json(v)));
        match op {
            Op::UploadField { name, role, bytes } => {
                self.ensure_idle()?;
                let field = ply::read_ply(bytes.as_slice()).map_err(|e| ApiError::bad_request(e.to_string()))?;
                let id = self.next_id;
                self.next_id += 1;
                self.fields.push(FieldEntry { id, name, role, field });
                self.invalidate();
                Ok((201, Payload::Json(self.field_info(id)?)))
            }
            Op::ListFields => {
                let roles = self.effective_roles();
                ok(Value::Array(self.fields.iter().zip(roles).map(|(e, r)| field_json(e, r)).collect()))
            }
            Op::DeleteField { id } => {
                self.ensure_idle()?;
                let i = self.index_of(id)?;
                self.fields.remove(i);
                self.invalidate();
                ok(json!({"deleted": id}))
            }
            Op::SetTransform { id, transform } => {
                self.ensure_idle()?;
                let i = self.index_of(id)?;
                self.fields[i].field.local_to_global = transform;
                self.invalidate();
                ok(self.field_info(id)?)
            }
            Op::SelectBox { id, selection } => {
                let i = self.index_of(id)?;
                let field = &self.fields[i].field;
                let hits = pipeline::selection_mask(field, &pipeline::SelectionSpec::Box(selection.bbox))?;
                let mask: Vec<bool> = field
                    .selection
                    .iter()
                    .zip(&hits)
                    .map(|(&old, &hit)| match selection.mode {
                        SelectMode::Replace => hit,
                        SelectMode::Add => old || hit,
                        SelectMode::Remove => old && !hit,
                    })
                    .collect();
                self.fields[i].field.selection = mask;
                ok(json!({"id": id, "selectedCount": self.fields[i].field.selected_count()}))
            }
            Op::SelectBrush { id, stroke } => {
                let i = self.index_of(id)?;
                let camera = stroke.camera.camera()?;
                if !(stroke.radius > 0.0) {
                    return Err(ApiError::bad_request("brush radius must be positive"));
                }
                for p in &stroke.points {
                    let mask = select_brush(&self.fields[i].field, &camera, Vector2::new(p[0], p[1]), stroke.radius, stroke.mode)
                        .map_err(|e| ApiError::bad_request(e.to_string()))?;
                    self.fields[i].field.selection = mask;
                }
                let field = &self.fields[i].field;
                let positions = field.global_positions();
                let projections: Vec<[f64; 2]> = positions
                    .iter()
                    .zip(&field.selection)
                    .filter(|(_, &s)| s)
                    .filter_map(|(p, _)| camera.project(p).map(|(u, v, _)| [u, v]))
                    .collect();
                ok(json!({"id": id, "selectedCount": field.selected_count(), "projections": projections}))
            }
            Op::Extract { id, request } => {
                self.ensure_idle()?;
                let i = self.index_of(id)?;
                let field = extract_selection(&self.fields[i].field).map_err(|e| ApiError::bad_request(e.to_string()))?;
                let name = format!("{}-extract", self.fields[i].name);
                if request.replace {
                    self.fields.remove(i);
                }
                let new_id = self.next_id;
                self.next_id += 1;
                self.fields.push(FieldEntry { id: new_id, name, role: request.role, field });
                self.invalidate();
                Ok((201, Payload::Json(self.field_info(new_id)?)))
            }
            Op::IdentifyBoundary { config } => {
                let prepared = pipeline::prepare(&self.role_fields(), &config)?;
                let Some(b) = &prepared.boundary else {
                    return Err(ApiError::conflict("boundary needs one source and one target field"));
                };
                let stats = BoundaryStats::of(b);
                self.boundary = Some(stats);
                self.config = config;
                let warning = (stats.count == 0).then_some(pipeline::EMPTY_BOUNDARY);
                ok(json!({"stats": stats, "warning": warning, "removedOutliers": prepared.removed_outliers}))
            }
            Op::BoundaryStats => match &self.boundary {
                Some(b) => ok(json!(b)),
                None => Err(ApiError::not_found("boundary not identified yet")),
            },
            Op::AggregatePalette { config } => {
                let prepared = pipeline::prepare(&self.role_fields(), &config)?;
                let Some(s) = prepared.source else {
                    return Err(ApiError::conflict("palette needs a source field"));
                };
                let palette = default_palette(&prepared.fields[s], &config).map_err(PipelineError::from)?;
                self.palette = Some(palette.clone());
                ok(json!(palette))
            }
            Op::GetPalette => match &self.palette {
                Some(p) => ok(json!(p)),
                None => Err(ApiError::not_found("no palette aggregated yet")),
            },
            Op::OptimizeStart(req) => {
                if matches!(self.optimizer.state, RunState::Starting | RunState::Running | RunState::Paused) {
                    return Err(ApiError::conflict("optimization already running"));
                }
                req.config.validate().map_err(|e| ApiError::bad_request(e.to_string()))?;
                if !(1..=4096).contains(&req.preview_resolution) {
                    return Err(ApiError::bad_request("previewResolution must be between 1 and 4096"));
                }
                let control = Arc::new(Control::default());
                let run_id = self.optimizer.run_id + 1;
                self.optimizer = OptimizerState {
                    state: RunState::Starting,
                    run_id,
                    total_iters: req.config.total_iters,
                    control: Some(control.clone()),
                    ..Default::default()
                };
                self.result = None;
                self.live = None;
                let inbox = self.inbox.clone();
                worker::spawn(
                    worker::Job {
                        fields: self.role_fields(),
                        config: req.config,
                        palette: self.palette.clone(),
                        preview_resolution: req.preview_resolution,
                    },
                    control,
                    self.stream.clone(),
                    move |event| inbox.send(SessionMsg::Worker { run_id, event }).is_ok(),
                );
                self.broadcast_status();
                Ok((202, Payload::Json(self.status_json())))
            }
            Op::OptimizeControl(c) => {
                let control = match (&self.optimizer.control, self.optimizer.state) {
                    (Some(ctl), RunState::Starting | RunState::Running | RunState::Paused) => ctl.clone(),
                    _ => return Err(ApiError::conflict("no optimization is running")),
                };
                match c {
                    ControlOp::Pause => {
                        control.pause();
                        self.optimizer.state = RunState::Paused;
                    }
                    ControlOp::Resume => {
                        control.resume();
                        if self.optimizer.state == RunState::Paused {
                            self.optimizer.state = RunState::Running;
                        }
                    }
                    ControlOp::Stop => control.stop(),
                }
                self.broadcast_status();
                ok(self.status_json())
            }
            Op::OptimizeStatus => ok(self.status_json()),
            Op::Render { camera } => {
                let camera = camera.camera()?;
                let fields = self.display_fields();
                let all = pipeline::merged(&fields);
                let img = RenderPlan::build(&all.splats, &camera)
                    .render(&all.features())
                    .map_err(|e| ApiError::new(500, e.to_string()))?;
                let png = img.to_png().map_err(|e| ApiError::new(500, e.to_string()))?;
                Ok((200, Payload::Bytes { content_type: "image/png", data: Arc::new(png) }))
            }
            Op::ExportPly => {
                let merged = match &self.result {
                    Some(r) => r.merged(),
                    None => pipeline::merged(&self.role_fields()),
                };
                let bytes = ply::to_ply_bytes(&merged, true).map_err(|e| ApiError::new(500, e.to_string()))?;
                Ok((200, Payload::Bytes { content_type: "application/octet-stream", data: Arc::new(bytes) }))
            }
        }
    }

    /// Incorporates a worker message. Messages from superseded runs are dropped.
    pub fn worker_event(&mut self, run_id: u64, event: WorkerEvent) {
        if run_id != self.optimizer.run_id {
            return;
        }
        match event {
            WorkerEvent::Started { total_iters } => {
                self.optimizer.total_iters = total_iters;
                if self.optimizer.state == RunState::Starting {
                    self.optimizer.state = RunState::Running;
                }
                self.broadcast_status();
            }
            WorkerEvent::Progress { record, t_phase_active } => {
                self.optimizer.last = Some(record);
                self.optimizer.t_phase_active = t_phase_active;
            }
            WorkerEvent::Snapshot { fields } => self.live = Some(fields),
            WorkerEvent::Finished(result) => {
                self.optimizer.state = if result.stopped { RunState::Stopped } else { RunState::Done };
                self.optimizer.last = result.history.records.last().copied();
                self.optimizer.control = None;
                if let Some(p) = &result.palette {
                    self.palette = Some(p.clone());
                }
                self.boundary = Some(BoundaryStats::of(&result.boundary));
                self.live = Some(result.fields.clone());
                self.result = Some(*result);
                self.revision += 1;
                self.broadcast_status();
            }
            WorkerEvent::Failed(message) => {
                self.optimizer.state = RunState::Failed;
                self.optimizer.error = Some(message);
                self.optimizer.control = None;
                self.revision += 1;
                self.broadcast_status();
            }
        }
    }

    fn broadcast_status(&self) {
        let mut v = self.status_json();
        v["type"] = json!("status");
        self.broadcast_json(v);
    }

    pub fn status_json(&self) -> Value {
        let o = &self.optimizer;
        json!({
            "state": o.state,
            "iteration": o.last.map_or(0, |r| r.iteration + 1),
            "totalIters": o.total_iters,
            "tPhaseActive": o.t_phase_active,
            "last": o.last,
            "error": o.error,
            "revision": self.revision,
        })
    }

    fn ensure_idle(&self) -> Result<(), ApiError> {
        if matches!(self.optimizer.state, RunState::Starting | RunState::Running | RunState::Paused) {
            Err(ApiError::conflict("stop the running optimization before editing fields"))
        } else {
            Ok(())
        }
    }

    /// Field edits make earlier results stale.
    fn invalidate(&mut self) {
        self.boundary = None;
        self.result = None;
        self.live = None;
    }

    fn index_of(&self, id: u64) -> Result<usize, ApiError> {
        self.fields.iter().position(|e| e.id == id).ok_or_else(|| ApiError::not_found(format!("no field {id}")))
    }

    fn effective_roles(&self) -> Vec<FieldRole> {
        let mut fields: Vec<GaussianField> = self.fields.iter().map(|_| GaussianField::new(Vec::new())).collect();
        pipeline::assign_roles(&mut fields, &self.fields.iter().map(|e| e.role).collect::<Vec<_>>());
        fields.iter().map(|f| f.role).collect()
    }

    /// Fields in upload order with roles assigned as the CLI does.
    fn role_fields(&self) -> Vec<GaussianField> {
        let mut fields: Vec<GaussianField> = self.fields.iter().map(|e| e.field.clone()).collect();
        pipeline::assign_roles(&mut fields, &self.fields.iter().map(|e| e.role).collect::<Vec<_>>());
        fields
    }

    fn display_fields(&self) -> Vec<GaussianField> {
        match &self.live {
            Some(f) => f.clone(),
            None => self.fields.iter().map(|e| e.field.clone()).collect(),
        }
    }

    fn field_info(&self, id: u64) -> Result<Value, ApiError> {
        let i = self.index_of(id)?;
        Ok(field_json(&self.fields[i], self.effective_roles()[i]))
    }
}

fn field_json(e: &FieldEntry, role: FieldRole) -> Value {
    let bounds = gsstitch_core::splat::Aabb::from_points(e.field.global_positions().iter());
    json!({
        "id": e.id,
        "name": e.name,
        "count": e.field.len(),
        "role": role,
        "selectedCount": e.field.selected_count(),
        "transform": e.field.local_to_global,
        "bounds": bounds.map(|b| json!({"min": [b.min.x, b.min.y, b.min.z], "max": [b.max.x, b.max.y, b.max.z]})),
    })
}
