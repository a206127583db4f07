//! Appearance optimization of the target field: boundary, color and
//! gradient terms first, the palette tune term later.

pub mod adam;
pub mod clone;
pub mod config;
pub mod losses;
pub mod metrics;
pub mod palette;
pub mod stitch;

pub use adam::Adam;
pub use clone::{build_clone_targets, disturbance, phi, CloneError, CloneTargets};
pub use config::{ConfigError, PaletteConfig, StitchConfig};
pub use losses::{loss_color, loss_feature, loss_grad, loss_tune, LossError, LossEval, TuneEval};
pub use palette::{aggregate_palette, Palette, PaletteError, PaletteReport};
pub use stitch::{
    default_palette, optimize_stitch, LossHistory, LossRecord, NoProgress, Progress, ProgressSink, SinkControl,
    StitchError, StitchOutcome, Stitcher,
};
