use std::fmt::Write as _;

use nalgebra::Vector3;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::clone::{build_clone_targets, CloneError, CloneTargets};
use super::config::{ConfigError, StitchConfig};
use super::losses::{gradient_images, loss_color, loss_feature, loss_grad, loss_tune, LossError};
use super::palette::{aggregate_palette, Palette, PaletteError};
use crate::render::{sample_sphere_cameras, BoundingSphere, Camera, ImageBuffer, RenderPlan, ViewSpec};
use crate::spatial::BoundarySet;
use crate::splat::{GaussianField, GaussianSplat, RigidTransform, ShFeatures};

const SALT_GRAD_VIEWS: u64 = 0x6772_6164;
const SALT_TUNE_VIEWS: u64 = 0x7475_6e65;
const SALT_PALETTE: u64 = 0x7061_6c65;
const SALT_ITER: u64 = 0x6974_6572;

#[derive(Debug, thiserror::Error)]
pub enum StitchError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Clone(#[from] CloneError),
    #[error(transparent)]
    Palette(#[from] PaletteError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("boundary does not match the target field")]
    BoundaryMismatch,
    #[error("empty field")]
    EmptyField,
    #[error("non-finite {term} loss at iteration {iteration}")]
    NonFinite { iteration: usize, term: &'static str },
}

/// Per-term losses of one iteration, evaluated before its update.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct LossRecord {
    pub iteration: usize,
    pub l_feature: f64,
    pub l_color: f64,
    pub l_grad: f64,
    pub l_tune: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossHistory {
    pub records: Vec<LossRecord>,
}

impl LossHistory {
    pub const CSV_HEADER: &'static str = "iteration,l_feature,l_color,l_grad,l_tune,total";

    pub fn to_csv(&self) -> String {
        let mut s = String::from(Self::CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            let _ = writeln!(s, "{},{},{},{},{},{}", r.iteration, r.l_feature, r.l_color, r.l_grad, r.l_tune, r.total);
        }
        s
    }

    /// Exponential moving average of the total with span `window`.
    pub fn total_ema(&self, window: usize) -> Vec<f64> {
        let a = 2.0 / (window as f64 + 1.0);
        let mut out = Vec::with_capacity(self.records.len());
        let mut ema = None;
        for r in &self.records {
            let e = match ema {
                None => r.total,
                Some(prev) => a * r.total + (1.0 - a) * prev,
            };
            ema = Some(e);
            out.push(e);
        }
        out
    }
}

/// What a progress callback sees after each iteration.
pub struct Progress<'a> {
    pub record: &'a LossRecord,
    pub total_iters: usize,
    pub t_phase_active: bool,
    /// Current global-space target features.
    pub features: &'a [ShFeatures],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SinkControl {
    Continue,
    Stop,
}

pub trait ProgressSink {
    fn report(&mut self, progress: &Progress<'_>) -> SinkControl;
}

impl<F: FnMut(&Progress<'_>) -> SinkControl> ProgressSink for F {
    fn report(&mut self, progress: &Progress<'_>) -> SinkControl {
        self(progress)
    }
}

/// Sink that ignores progress.
pub struct NoProgress;

impl ProgressSink for NoProgress {
    fn report(&mut self, _: &Progress<'_>) -> SinkControl {
        SinkControl::Continue
    }
}

/// Optimization state over the global-space target features. Geometry,
/// the source field, the boundary and all render plans are frozen at
/// construction.
pub struct Stitcher {
    config: StitchConfig,
    splats: Vec<GaussianSplat>,
    positions: Vec<Vector3<f64>>,
    features: Vec<ShFeatures>,
    boundary: BoundarySet,
    clone: CloneTargets,
    snapshot: Vec<ShFeatures>,
    grad_plans: Vec<RenderPlan>,
    grad_targets: Vec<(ImageBuffer, ImageBuffer)>,
    tune_plans: Vec<RenderPlan>,
    palette: Option<Palette>,
    color_sphere: BoundingSphere,
    adam: Adam,
    rng: ChaCha8Rng,
    iteration: usize,
    history: LossHistory,
}

/// Result of a full run.
#[derive(Debug, Clone)]
pub struct StitchOutcome {
    /// Optimized global-space target features.
    pub features: Vec<ShFeatures>,
    pub history: LossHistory,
    pub palette: Option<Palette>,
    pub stopped: bool,
}

impl Stitcher {
    /// `source` and `target` may carry local-to-global transforms; both are
    /// baked. Local views for the gradient term are sampled around the
    /// target's own bounding sphere in its local frame. When the tune phase
    /// is scheduled and no `palette` is given, one is aggregated from the
    /// source.
    pub fn new(
        source: &GaussianField,
        target: &GaussianField,
        boundary: BoundarySet,
        palette: Option<Palette>,
        config: StitchConfig,
    ) -> Result<Self, StitchError> {
        config.validate()?;
        if source.is_empty() || target.is_empty() {
            return Err(StitchError::EmptyField);
        }
        if boundary.indices.len() != boundary.target_features.len()
            || boundary.indices.iter().any(|&i| i >= target.len())
        {
            return Err(StitchError::BoundaryMismatch);
        }
        let global_target = target.baked().into_owned();
        let global_source = source.baked();
        let positions: Vec<Vector3<f64>> = global_target.positions().copied().collect();
        let features = global_target.features();
        let clone = build_clone_targets(&positions, &boundary, config.k, config.gamma)?;
        let view = ViewSpec::square(config.loss_resolution);

        let local = BoundingSphere::of_points(target.positions()).ok_or(StitchError::EmptyField)?;
        let grad_plans: Vec<RenderPlan> = local_cameras(&local, &target.local_to_global, &config, view)
            .iter()
            .map(|c| RenderPlan::build(&global_target.splats, c))
            .collect();
        let grad_targets = grad_plans
            .iter()
            .map(|p| gradient_images(p, &features))
            .collect::<Result<Vec<_>, _>>()
            .map_err(LossError::from)?;

        let all: Vec<Vector3<f64>> = positions.iter().chain(global_source.positions()).copied().collect();
        let composite = BoundingSphere::of_points(all.iter()).ok_or(StitchError::EmptyField)?;
        let tune_plans = if config.t_phase_enabled && config.tune_views > 0 {
            sample_sphere_cameras(
                composite.center,
                composite.radius * config.camera_radius_factor,
                config.tune_views,
                config.seed ^ SALT_TUNE_VIEWS,
                view,
            )
            .iter()
            .map(|c| RenderPlan::build(&global_target.splats, c))
            .collect()
        } else {
            Vec::new()
        };

        let palette = match palette {
            Some(p) => {
                p.validate()?;
                Some(p)
            }
            None if config.t_phase_start().is_some_and(|s| s < config.total_iters) => {
                Some(default_palette(&global_source, &config)?)
            }
            None => None,
        };

        let color_sphere = BoundingSphere::of_points(positions.iter()).ok_or(StitchError::EmptyField)?;
        let n = features.len();
        Ok(Self {
            adam: Adam::new(n, config.lr_dc, config.lr_rest),
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ SALT_ITER),
            snapshot: features.clone(),
            splats: global_target.splats,
            positions,
            features,
            boundary,
            clone,
            grad_plans,
            grad_targets,
            tune_plans,
            palette,
            color_sphere,
            iteration: 0,
            history: LossHistory::default(),
            config,
        })
    }

    pub fn config(&self) -> &StitchConfig {
        &self.config
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn is_done(&self) -> bool {
        self.iteration >= self.config.total_iters
    }

    pub fn features(&self) -> &[ShFeatures] {
        &self.features
    }

    /// Global-space target splats carrying the current features.
    pub fn splats(&self) -> Vec<GaussianSplat> {
        self.splats.iter().zip(&self.features).map(|(s, f)| GaussianSplat { features: *f, ..s.clone() }).collect()
    }

    pub fn history(&self) -> &LossHistory {
        &self.history
    }

    pub fn palette(&self) -> Option<&Palette> {
        self.palette.as_ref()
    }

    pub fn boundary(&self) -> &BoundarySet {
        &self.boundary
    }

    pub fn clone_targets(&self) -> &CloneTargets {
        &self.clone
    }

    pub fn grad_plans(&self) -> &[RenderPlan] {
        &self.grad_plans
    }

    pub fn tune_plans(&self) -> &[RenderPlan] {
        &self.tune_plans
    }

    pub fn t_phase_active(&self) -> bool {
        self.palette.is_some() && self.config.t_phase_start().is_some_and(|s| self.iteration >= s)
    }

    /// Runs one iteration and returns its losses.
    pub fn step(&mut self) -> Result<LossRecord, StitchError> {
        let it = self.iteration;
        let cfg = &self.config;
        if it % cfg.clone_refresh_interval == 0 {
            for &b in &self.clone.boundary {
                self.snapshot[b] = self.features[b];
            }
        }
        let cam_seed: u64 = self.rng.random();
        let grad_sel: Vec<usize> = sample(&mut self.rng, self.grad_plans.len(), cfg.grad_plans_per_iter).into_vec();
        let tune_active = self.t_phase_active();
        let tune_sel: Vec<usize> = if tune_active && !self.tune_plans.is_empty() {
            sample(&mut self.rng, self.tune_plans.len(), cfg.tune_plans_per_iter).into_vec()
        } else {
            Vec::new()
        };

        let cams = sample_sphere_cameras(
            self.color_sphere.center,
            self.color_sphere.radius * cfg.camera_radius_factor,
            cfg.cameras_per_iter,
            cam_seed,
            ViewSpec::square(cfg.loss_resolution),
        );

        let lf = loss_feature(&self.features, &self.boundary);
        let lc = loss_color(&self.features, &self.snapshot, &self.clone, &self.positions, &cams);
        let lg = if cfg.lambda1 > 0.0 {
            loss_grad(&self.features, &self.grad_plans, &self.grad_targets, &grad_sel)?
        } else {
            super::losses::LossEval::zero(self.features.len())
        };
        let lt = match (&self.palette, tune_active && cfg.lambda2 > 0.0) {
            (Some(p), true) => {
                loss_tune(&self.features, p, &self.tune_plans, &tune_sel, cfg.palette.alpha_threshold)?.loss
            }
            _ => super::losses::LossEval::zero(self.features.len()),
        };

        for (term, v) in [("feature", lf.value), ("color", lc.value), ("grad", lg.value), ("tune", lt.value)] {
            if !v.is_finite() {
                return Err(StitchError::NonFinite { iteration: it, term });
            }
        }
        let (l1, l2) = (cfg.lambda1, cfg.lambda2);
        let record = LossRecord {
            iteration: it,
            l_feature: lf.value,
            l_color: lc.value,
            l_grad: lg.value,
            l_tune: lt.value,
            total: lf.value + lc.value + l1 * lg.value + l2 * lt.value,
        };

        let mut grad = lf.grad;
        for (i, g) in grad.iter_mut().enumerate() {
            *g += lc.grad[i];
            if l1 > 0.0 {
                *g += lg.grad[i] * l1;
            }
            if l2 > 0.0 && tune_active {
                *g += lt.grad[i] * l2;
            }
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(StitchError::NonFinite { iteration: it, term: "gradient" });
        }
        self.adam.step(&mut self.features, &grad);
        self.iteration += 1;
        self.history.records.push(record);
        Ok(record)
    }

    /// Iterates until `total_iters` or until the sink asks to stop.
    pub fn run(&mut self, sink: &mut dyn ProgressSink) -> Result<bool, StitchError> {
        while !self.is_done() {
            let record = self.step()?;
            let progress = Progress {
                record: &record,
                total_iters: self.config.total_iters,
                t_phase_active: self.t_phase_active(),
                features: &self.features,
            };
            if sink.report(&progress) == SinkControl::Stop {
                return Ok(true);
            }
        }
        Ok(false)
    }

    pub fn into_outcome(self, stopped: bool) -> StitchOutcome {
        StitchOutcome { features: self.features, history: self.history, palette: self.palette, stopped }
    }
}

fn local_cameras(local: &BoundingSphere, to_global: &RigidTransform, config: &StitchConfig, view: ViewSpec) -> Vec<Camera> {
    sample_sphere_cameras(
        local.center,
        local.radius * config.camera_radius_factor,
        config.grad_views,
        config.seed ^ SALT_GRAD_VIEWS,
        view,
    )
    .into_iter()
    .map(|c| c.transformed(to_global))
    .collect()
}

/// Palette of `source` (global space) aggregated with the config's
/// parameters from sphere cameras around it.
pub fn default_palette(source: &GaussianField, config: &StitchConfig) -> Result<Palette, PaletteError> {
    let source = source.baked();
    let sphere = BoundingSphere::of_points(source.positions()).ok_or(PaletteError::Transparent)?;
    let cams = sample_sphere_cameras(
        sphere.center,
        sphere.radius * config.camera_radius_factor,
        config.palette.max_iters,
        config.seed ^ SALT_PALETTE,
        ViewSpec::square(config.loss_resolution),
    );
    Ok(aggregate_palette(&source, cams, config.seed ^ SALT_PALETTE, &config.palette)?.palette)
}

/// Builds a [`Stitcher`] and runs it to completion.
pub fn optimize_stitch(
    source: &GaussianField,
    target: &GaussianField,
    boundary: BoundarySet,
    palette: Option<Palette>,
    config: StitchConfig,
    sink: &mut dyn ProgressSink,
) -> Result<StitchOutcome, StitchError> {
    let mut s = Stitcher::new(source, target, boundary, palette, config)?;
    let stopped = s.run(sink)?;
    Ok(s.into_outcome(stopped))
}
