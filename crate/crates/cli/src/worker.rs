//! Background optimizer thread. It owns its stitcher outright, publishes
//! progress to the stream, and reports to the session through events.

use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use gsstitch_core::optimize::{LossRecord, Palette, StitchConfig};
use gsstitch_core::render::{turntable_cameras, BoundingSphere, RenderPlan, ViewSpec};
use gsstitch_core::splat::{GaussianField, ShFeatures};
use serde_json::json;

use crate::pipeline::{self, OptimizeJob, OptimizeResult};

pub const PREVIEW_RESOLUTION: u32 = 800;
/// Minimum spacing of preview frames on the stream (10 Hz).
pub const FRAME_INTERVAL: Duration = Duration::from_millis(100);

#[derive(Debug, Clone, PartialEq)]
pub enum StreamMessage {
    Text(String),
    Binary(Vec<u8>),
}

#[derive(Debug)]
pub enum WorkerEvent {
    Started { total_iters: usize },
    Progress { record: LossRecord, t_phase_active: bool },
    /// Global-space fields with the latest target features.
    Snapshot { fields: Vec<GaussianField> },
    Finished(Box<OptimizeResult>),
    Failed(String),
}

#[derive(Debug, Default)]
struct ControlState {
    paused: bool,
    stop: bool,
}

/// Pause/resume/stop requests, honored between iterations.
#[derive(Debug, Default)]
pub struct Control {
    state: Mutex<ControlState>,
    changed: Condvar,
}

impl Control {
    pub fn pause(&self) {
        self.state.lock().expect("control lock").paused = true;
        self.changed.notify_all();
    }

    pub fn resume(&self) {
        self.state.lock().expect("control lock").paused = false;
        self.changed.notify_all();
    }

    pub fn stop(&self) {
        self.state.lock().expect("control lock").stop = true;
        self.changed.notify_all();
    }

    /// Blocks while paused; returns true when a stop was requested.
    fn checkpoint(&self) -> bool {
        let mut s = self.state.lock().expect("control lock");
        while s.paused && !s.stop {
            s = self.changed.wait(s).expect("control lock");
        }
        s.stop
    }
}

pub struct Job {
    pub fields: Vec<GaussianField>,
    pub config: StitchConfig,
    pub palette: Option<Palette>,
    pub preview_resolution: u32,
}

/// Preview of the composite from a fixed camera. Geometry is frozen, so the
/// plan is built once and only the target's features are swapped in.
struct Preview {
    plan: RenderPlan,
    features: Vec<ShFeatures>,
    target_range: std::ops::Range<usize>,
}

impl Preview {
    fn new(job: &OptimizeJob, resolution: u32, radius_factor: f64) -> Option<Self> {
        let fields = job.current_fields();
        let all = pipeline::merged(&fields);
        let sphere = BoundingSphere::of_points(all.positions())?;
        let cam = turntable_cameras(sphere.center, sphere.radius * radius_factor, 1, 20.0, ViewSpec::square(resolution))
            .pop()?;
        let start: usize = fields[..job.target_index()].iter().map(|f| f.len()).sum();
        let target_range = start..start + fields[job.target_index()].len();
        Some(Self { plan: RenderPlan::build(&all.splats, &cam), features: all.features(), target_range })
    }

    fn png(&mut self, target: &[ShFeatures]) -> Option<Vec<u8>> {
        self.features[self.target_range.clone()].copy_from_slice(target);
        self.plan.render(&self.features).ok()?.to_png().ok()
    }
}

/// Spawns the worker. `report` returns false once the session is gone.
pub fn spawn(
    job: Job,
    control: Arc<Control>,
    stream: tokio::sync::broadcast::Sender<StreamMessage>,
    report: impl Fn(WorkerEvent) -> bool + Send + 'static,
) -> std::thread::JoinHandle<()> {
    std::thread::spawn(move || {
        let event = match run(job, &control, &stream, &report) {
            Ok(result) => WorkerEvent::Finished(Box::new(result)),
            Err(e) => {
                log::warn!("optimization failed: {e}");
                let _ = stream.send(StreamMessage::Text(json!({"type": "error", "error": e.to_string()}).to_string()));
                WorkerEvent::Failed(e.to_string())
            }
        };
        report(event);
    })
}

fn run(
    job: Job,
    control: &Control,
    stream: &tokio::sync::broadcast::Sender<StreamMessage>,
    report: &dyn Fn(WorkerEvent) -> bool,
) -> Result<OptimizeResult, pipeline::PipelineError> {
    let mut opt = OptimizeJob::new(&job.fields, &job.config, job.palette)?;
    let total = job.config.total_iters;
    report(WorkerEvent::Started { total_iters: total });
    let mut preview = Preview::new(&opt, job.preview_resolution, job.config.camera_radius_factor);
    let mut last_frame: Option<Instant> = None;
    let mut stopped = false;
    while !opt.stitcher.is_done() {
        if control.checkpoint() {
            stopped = true;
            break;
        }
        let record = opt.stitcher.step()?;
        let t_phase_active = opt.stitcher.t_phase_active();
        let _ = stream.send(StreamMessage::Text(
            json!({
                "type": "progress",
                "iteration": record.iteration,
                "totalIters": total,
                "lFeature": record.l_feature,
                "lColor": record.l_color,
                "lGrad": record.l_grad,
                "lTune": record.l_tune,
                "total": record.total,
                "tPhaseActive": t_phase_active,
            })
            .to_string(),
        ));
        if !report(WorkerEvent::Progress { record, t_phase_active }) {
            stopped = true;
            break;
        }
        let due = last_frame.is_none_or(|t| t.elapsed() >= FRAME_INTERVAL) || opt.stitcher.is_done();
        if due {
            last_frame = Some(Instant::now());
            report(WorkerEvent::Snapshot { fields: opt.current_fields() });
            if let Some(png) = preview.as_mut().and_then(|p| p.png(opt.stitcher.features())) {
                let _ = stream.send(StreamMessage::Text(
                    json!({"type": "frame", "iteration": record.iteration, "width": job.preview_resolution, "height": job.preview_resolution}).to_string(),
                ));
                let _ = stream.send(StreamMessage::Binary(png));
            }
        }
    }
    Ok(opt.finish(stopped))
}
