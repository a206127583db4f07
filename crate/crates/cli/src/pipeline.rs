//! The compose and optimize pipelines, shared by the CLI and the service so
//! both produce identical outputs for identical inputs.

use std::path::{Path, PathBuf};

use gsstitch_core::optimize::{
    LossHistory, Palette, ProgressSink, StitchConfig, StitchError, Stitcher,
};
use gsstitch_core::ply::{self, PlyError};
use gsstitch_core::render::{turntable_cameras, BoundingSphere, ImageBuffer, RenderPlan, ViewSpec};
use gsstitch_core::spatial::{
    discard_outliers, extract_selection, identify_boundary, select_box, BoundarySet, OrientedBox,
};
use gsstitch_core::splat::{merge_fields, FieldRole, GaussianField, RigidTransform};
use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

pub const EMPTY_BOUNDARY: &str = "no intersection region; adjust transforms or betaFactor";

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Ply { path: String, source: PlyError },
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{path}: {message}")]
    Json { path: String, message: String },
    #[error("bad field spec '{0}': {1}")]
    FieldSpec(String, String),
    #[error("{0}")]
    Roles(String),
    #[error("{}", EMPTY_BOUNDARY)]
    EmptyBoundary,
    #[error("{0}")]
    Selection(String),
    #[error(transparent)]
    Config(#[from] gsstitch_core::optimize::ConfigError),
    #[error(transparent)]
    Stitch(#[from] StitchError),
    #[error(transparent)]
    Palette(#[from] gsstitch_core::optimize::PaletteError),
    #[error("{0}")]
    Image(String),
}

/// Selection file contents: a box, an explicit mask, or splat indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum SelectionSpec {
    Box(BoxSpec),
    Mask(Vec<bool>),
    Indices(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BoxSpec {
    pub center: [f64; 3],
    pub half_extents: [f64; 3],
    /// `[w, x, y, z]`; identity when absent.
    #[serde(default)]
    pub quat: Option<[f64; 4]>,
}

impl BoxSpec {
    pub fn to_box(&self) -> Result<OrientedBox, PipelineError> {
        let rotation = match self.quat {
            None => UnitQuaternion::identity(),
            Some([w, x, y, z]) => {
                let q = nalgebra::Quaternion::new(w, x, y, z);
                if (q.norm() - 1.0).abs() > 1e-6 {
                    return Err(PipelineError::Selection("box quaternion must be unit length".into()));
                }
                UnitQuaternion::new_unchecked(q)
            }
        };
        Ok(OrientedBox { center: Vector3::from(self.center), half_extents: Vector3::from(self.half_extents), rotation })
    }
}

/// Computes the selection mask for `spec` over `field`.
pub fn selection_mask(field: &GaussianField, spec: &SelectionSpec) -> Result<Vec<bool>, PipelineError> {
    match spec {
        SelectionSpec::Box(b) => select_box(field, &b.to_box()?).map_err(|e| PipelineError::Selection(e.to_string())),
        SelectionSpec::Mask(m) => {
            if m.len() != field.len() {
                return Err(PipelineError::Selection(format!("mask has {} entries for {} splats", m.len(), field.len())));
            }
            Ok(m.clone())
        }
        SelectionSpec::Indices(idx) => {
            let mut m = vec![false; field.len()];
            for &i in idx {
                *m.get_mut(i).ok_or_else(|| PipelineError::Selection(format!("index {i} out of range")))? = true;
            }
            Ok(m)
        }
    }
}

/// One input field on the command line:
/// `PATH[,transform=FILE.json][,selection=FILE.json][,role=source|target|other]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSpec {
    pub path: PathBuf,
    pub transform: Option<PathBuf>,
    pub selection: Option<PathBuf>,
    pub role: Option<FieldRole>,
}

impl std::str::FromStr for FieldSpec {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parts = s.split(',');
        let path = parts.next().filter(|p| !p.is_empty()).ok_or_else(|| PipelineError::FieldSpec(s.into(), "missing path".into()))?;
        let mut spec = FieldSpec { path: path.into(), transform: None, selection: None, role: None };
        for part in parts {
            let (key, value) =
                part.split_once('=').ok_or_else(|| PipelineError::FieldSpec(s.into(), format!("expected key=value, got '{part}'")))?;
            match key {
                "transform" => spec.transform = Some(value.into()),
                "selection" => spec.selection = Some(value.into()),
                "role" => {
                    spec.role = Some(match value {
                        "source" => FieldRole::Source,
                        "target" => FieldRole::Target,
                        "other" => FieldRole::Other,
                        _ => return Err(PipelineError::FieldSpec(s.into(), format!("unknown role '{value}'"))),
                    })
                }
                _ => return Err(PipelineError::FieldSpec(s.into(), format!("unknown key '{key}'"))),
            }
        }
        Ok(spec)
    }
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, PipelineError> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Json { path: path.display().to_string(), message: e.to_string() })
}

pub fn load_config(path: &Path) -> Result<StitchConfig, PipelineError> {
    read_json(path)
}

/// Loads a field and applies its transform and selection (the selection is
/// extracted, so only selected splats remain).
pub fn load_field(spec: &FieldSpec) -> Result<GaussianField, PipelineError> {
    let mut field =
        ply::load_ply(&spec.path).map_err(|source| PipelineError::Ply { path: spec.path.display().to_string(), source })?;
    if let Some(t) = &spec.transform {
        field.local_to_global = read_json::<RigidTransform>(t)?;
    }
    if let Some(s) = &spec.selection {
        let sel: SelectionSpec = read_json(s)?;
        field.selection = selection_mask(&field, &sel)?;
        field = extract_selection(&field).map_err(|e| PipelineError::Selection(e.to_string()))?;
    }
    if let Some(role) = spec.role {
        field.role = role;
    }
    Ok(field)
}

/// Fills in roles: explicit roles win; otherwise the first field is the
/// source and the second the target.
pub fn assign_roles(fields: &mut [GaussianField], explicit: &[Option<FieldRole>]) {
    let any_explicit = explicit.iter().any(|r| r.is_some());
    for (i, f) in fields.iter_mut().enumerate() {
        f.role = match explicit.get(i).copied().flatten() {
            Some(r) => r,
            None if any_explicit => FieldRole::Other,
            None => match i {
                0 => FieldRole::Source,
                1 => FieldRole::Target,
                _ => FieldRole::Other,
            },
        };
    }
}

fn role_index(fields: &[GaussianField], role: FieldRole) -> Result<Option<usize>, PipelineError> {
    let found: Vec<usize> = (0..fields.len()).filter(|&i| fields[i].role == role).collect();
    match found.len() {
        0 => Ok(None),
        1 => Ok(Some(found[0])),
        _ => Err(PipelineError::Roles(format!("more than one {role:?} field"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct BoundaryStats {
    pub count: usize,
    pub mean_neighbor_distance: f64,
    pub beta: f64,
    pub scene_size: f64,
}

impl BoundaryStats {
    pub fn of(b: &BoundarySet) -> Self {
        Self { count: b.len(), mean_neighbor_distance: b.mean_distance(), beta: b.beta, scene_size: b.scene_size }
    }
}

/// Fields after outlier filtering, with the boundary between target and
/// source when both exist.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub fields: Vec<GaussianField>,
    pub source: Option<usize>,
    pub target: Option<usize>,
    pub boundary: Option<BoundarySet>,
    pub removed_outliers: Vec<usize>,
}

pub fn prepare(fields: &[GaussianField], config: &StitchConfig) -> Result<Prepared, PipelineError> {
    config.validate()?;
    let mut out = Vec::with_capacity(fields.len());
    let mut removed = Vec::with_capacity(fields.len());
    for f in fields {
        if config.outlier_filter {
            let r = discard_outliers(f, config.outlier_k, config.outlier_std_ratio);
            removed.push(r.removed.len());
            out.push(r.field);
        } else {
            removed.push(0);
            out.push(f.clone());
        }
    }
    let source = role_index(&out, FieldRole::Source)?;
    let target = role_index(&out, FieldRole::Target)?;
    let boundary = match (source, target) {
        (Some(s), Some(t)) => Some(
            identify_boundary(&out[t], &out[s], config.k, config.tau, config.beta_factor)
                .map_err(|e| PipelineError::Roles(e.to_string()))?,
        ),
        _ => None,
    };
    Ok(Prepared { fields: out, source, target, boundary, removed_outliers: removed })
}

/// Global-space merge of all fields in order.
pub fn merged(fields: &[GaussianField]) -> GaussianField {
    let refs: Vec<&GaussianField> = fields.iter().collect();
    merge_fields(&refs)
}

#[derive(Debug, Clone)]
pub struct ComposeResult {
    pub merged: GaussianField,
    pub boundary: Option<BoundaryStats>,
    pub warnings: Vec<String>,
}

pub fn compose(fields: &[GaussianField], config: &StitchConfig) -> Result<ComposeResult, PipelineError> {
    let p = prepare(fields, config)?;
    let mut warnings = Vec::new();
    let boundary = p.boundary.as_ref().map(BoundaryStats::of);
    if let Some(b) = &boundary {
        if b.count == 0 {
            warnings.push(format!("boundary is empty: {EMPTY_BOUNDARY}"));
        }
    }
    Ok(ComposeResult { merged: merged(&p.fields), boundary, warnings })
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    /// All fields in global space, target features optimized.
    pub fields: Vec<GaussianField>,
    pub target: usize,
    pub boundary: BoundarySet,
    pub history: LossHistory,
    pub palette: Option<Palette>,
    pub stopped: bool,
}

impl OptimizeResult {
    pub fn merged(&self) -> GaussianField {
        merged(&self.fields)
    }
}

/// Ready-to-run optimization: prepared fields plus the stitcher.
pub struct OptimizeJob {
    pub prepared: Prepared,
    pub stitcher: Stitcher,
    source: usize,
    target: usize,
}

impl OptimizeJob {
    pub fn new(fields: &[GaussianField], config: &StitchConfig, palette: Option<Palette>) -> Result<Self, PipelineError> {
        let prepared = prepare(fields, config)?;
        let (Some(source), Some(target)) = (prepared.source, prepared.target) else {
            return Err(PipelineError::Roles("optimization needs one source and one target field".into()));
        };
        let boundary = prepared.boundary.clone().expect("source and target present");
        if boundary.is_empty() {
            return Err(PipelineError::EmptyBoundary);
        }
        let stitcher =
            Stitcher::new(&prepared.fields[source], &prepared.fields[target], boundary, palette, config.clone())?;
        Ok(Self { prepared, stitcher, source, target })
    }

    pub fn source_index(&self) -> usize {
        self.source
    }

    pub fn target_index(&self) -> usize {
        self.target
    }

    /// Current global-space fields with the target's features as they stand.
    pub fn current_fields(&self) -> Vec<GaussianField> {
        let mut fields: Vec<GaussianField> = self.prepared.fields.iter().map(|f| f.baked().into_owned()).collect();
        fields[self.target].set_features(self.stitcher.features());
        fields
    }

    pub fn run(mut self, sink: &mut dyn ProgressSink) -> Result<OptimizeResult, PipelineError> {
        let stopped = self.stitcher.run(sink)?;
        Ok(self.finish(stopped))
    }

    pub fn finish(self, stopped: bool) -> OptimizeResult {
        let fields = self.current_fields();
        let boundary = self.stitcher.boundary().clone();
        let target = self.target;
        let outcome = self.stitcher.into_outcome(stopped);
        OptimizeResult { fields, target, boundary, history: outcome.history, palette: outcome.palette, stopped }
    }
}

/// Renders the composite of `fields` (global space) from `count` turntable
/// cameras around it.
pub fn turntable(fields: &[GaussianField], count: usize, resolution: u32, radius_factor: f64) -> Vec<ImageBuffer> {
    let all = merged(fields);
    let Some(sphere) = BoundingSphere::of_points(all.positions()) else {
        return Vec::new();
    };
    let features = all.features();
    turntable_cameras(sphere.center, sphere.radius * radius_factor, count, 20.0, ViewSpec::square(resolution))
        .iter()
        .map(|c| RenderPlan::build(&all.splats, c).render(&features).expect("features match plan"))
        .collect()
}

/// Which artifacts `write_outputs` produces.
#[derive(Debug, Clone, Copy)]
pub struct OutputOptions {
    pub turntable_views: usize,
    pub preview_resolution: u32,
    pub camera_radius_factor: f64,
}

/// Writes `stitched.ply`, `loss.csv`, `palette.json` (when a palette was
/// used) and `turntable_NN.png` into `dir`. Returns the written paths.
pub fn write_outputs(result: &OptimizeResult, dir: &Path, options: &OutputOptions) -> Result<Vec<PathBuf>, PipelineError> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let ply_path = dir.join("stitched.ply");
    ply::save_ply(&result.merged(), &ply_path, true)
        .map_err(|source| PipelineError::Ply { path: ply_path.display().to_string(), source })?;
    written.push(ply_path);
    let csv = dir.join("loss.csv");
    std::fs::write(&csv, result.history.to_csv())?;
    written.push(csv);
    if let Some(p) = &result.palette {
        let path = dir.join("palette.json");
        std::fs::write(&path, serde_json::to_string_pretty(p).expect("palette serializes"))?;
        written.push(path);
    }
    for (i, img) in turntable(&result.fields, options.turntable_views, options.preview_resolution, options.camera_radius_factor)
        .iter()
        .enumerate()
    {
        let path = dir.join(format!("turntable_{i:02}.png"));
        std::fs::write(&path, img.to_png().map_err(|e| PipelineError::Image(e.to_string()))?)?;
        written.push(path);
    }
    Ok(written)
}
