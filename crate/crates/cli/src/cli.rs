//! Command-line front end.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use gsstitch_core::optimize::{Palette, Progress, SinkControl, StitchConfig};
use gsstitch_core::ply;

use crate::pipeline::{self, FieldSpec, OutputOptions, PipelineError};

#[derive(Debug, Parser)]
#[command(name = "gsstitch", version, about = "Seamless stitching of 3D Gaussian splatting fields")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Merge fields into one global-space PLY and report the boundary.
    Compose(ComposeArgs),
    /// Stitch the target into the source and write the results.
    Optimize(OptimizeArgs),
    /// Run the HTTP/websocket service for the editor.
    Serve(ServeArgs),
    /// Print the JSON schema of the optimizer configuration.
    Schema,
}

/// Overrides applied on top of `--config` (or the defaults).
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigFlags {
    /// StitchConfig JSON file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub beta_factor: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub lambda1: Option<f64>,
    #[arg(long)]
    pub lambda2: Option<f64>,
    /// Total iterations.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Fraction of the iterations after which the tune phase starts.
    #[arg(long)]
    pub tphase_start: Option<f64>,
    /// Disable the tune phase.
    #[arg(long)]
    pub no_tphase: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Loss image resolution in pixels.
    #[arg(long)]
    pub loss_res: Option<u32>,
    #[arg(long)]
    pub no_outlier_filter: bool,
}

impl ConfigFlags {
    pub fn resolve(&self) -> Result<StitchConfig, PipelineError> {
        let mut c = match &self.config {
            Some(p) => pipeline::load_config(p)?,
            None => StitchConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => {
                $(if let Some(v) = self.$flag { c.$field = v; })*
            };
        }
        set!(k => k, tau => tau, beta_factor => beta_factor, gamma => gamma, lambda1 => lambda1,
             lambda2 => lambda2, iters => total_iters, tphase_start => t_phase_start_fraction,
             seed => seed, loss_res => loss_resolution);
        if self.no_tphase {
            c.t_phase_enabled = false;
        }
        if self.no_outlier_filter {
            c.outlier_filter = false;
        }
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Args)]
pub struct ComposeArgs {
    /// PATH[,transform=FILE.json][,selection=FILE.json][,role=source|target|other]
    #[arg(required = true)]
    pub fields: Vec<FieldSpec>,
    /// Output PLY.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigFlags,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    /// PATH[,transform=FILE.json][,selection=FILE.json][,role=source|target|other]
    #[arg(required = true)]
    pub fields: Vec<FieldSpec>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigFlags,
    /// Palette JSON to use instead of aggregating one from the source.
    #[arg(long)]
    pub palette: Option<PathBuf>,
    /// Number of turntable preview images.
    #[arg(long, default_value_t = 8)]
    pub turntable: usize,
    #[arg(long, default_value_t = crate::worker::PREVIEW_RESOLUTION)]
    pub preview_res: u32,
    /// Print progress every N iterations (0 disables).
    #[arg(long, default_value_t = 500)]
    pub progress_every: usize,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
}

fn load_fields(specs: &[FieldSpec]) -> Result<Vec<gsstitch_core::GaussianField>, PipelineError> {
    let mut fields = specs.iter().map(pipeline::load_field).collect::<Result<Vec<_>, _>>()?;
    pipeline::assign_roles(&mut fields, &specs.iter().map(|s| s.role).collect::<Vec<_>>());
    Ok(fields)
}

pub fn compose(args: &ComposeArgs) -> Result<(), PipelineError> {
    let config = args.config.resolve()?;
    let fields = load_fields(&args.fields)?;
    let result = pipeline::compose(&fields, &config)?;
    ply::save_ply(&result.merged, &args.out, true)
        .map_err(|source| PipelineError::Ply { path: args.out.display().to_string(), source })?;
    println!("wrote {} splats to {}", result.merged.len(), args.out.display());
    match result.boundary {
        Some(b) => println!(
            "boundary: {} splats, mean neighbor distance {:.6}, beta {:.6}, scene size {:.6}",
            b.count, b.mean_neighbor_distance, b.beta, b.scene_size
        ),
        None => println!("boundary: not computed (needs one source and one target field)"),
    }
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

pub fn optimize(args: &OptimizeArgs) -> Result<(), PipelineError> {
    let config = args.config.resolve()?;
    let fields = load_fields(&args.fields)?;
    let palette: Option<Palette> = match &args.palette {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            Some(serde_json::from_str(&text).map_err(|e| PipelineError::Json { path: p.display().to_string(), message: e.to_string() })?)
        }
        None => None,
    };
    let job = pipeline::OptimizeJob::new(&fields, &config, palette)?;
    let boundary = job.stitcher.boundary();
    println!("boundary: {} splats, beta {:.6}", boundary.len(), boundary.beta);
    let every = args.progress_every;
    let mut sink = |p: &Progress<'_>| {
        let r = p.record;
        if every > 0 && (r.iteration % every == 0 || r.iteration + 1 == p.total_iters) {
            println!(
                "iter {:>6}/{}  feature {:.4e}  color {:.4e}  grad {:.4e}  tune {:.4e}  total {:.4e}",
                r.iteration + 1,
                p.total_iters,
                r.l_feature,
                r.l_color,
                r.l_grad,
                r.l_tune,
                r.total
            );
        }
        SinkControl::Continue
    };
    let result = job.run(&mut sink)?;
    let options = OutputOptions {
        turntable_views: args.turntable,
        preview_resolution: args.preview_res,
        camera_radius_factor: config.camera_radius_factor,
    };
    for path in pipeline::write_outputs(&result, &args.out, &options)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_config() {
        let cli = Cli::try_parse_from([
            "gsstitch", "optimize", "a.ply", "b.ply,role=target", "--out", "o", "--k", "4", "--lambda1", "0", "--iters",
            "10", "--tphase-start", "0.3", "--seed", "9", "--loss-res", "64", "--no-outlier-filter", "--beta-factor", "0.1",
        ])
        .unwrap();
        let Command::Optimize(args) = cli.command else { panic!("expected optimize") };
        assert_eq!(args.fields.len(), 2);
        let c = args.config.resolve().unwrap();
        assert_eq!((c.k, c.total_iters, c.seed, c.loss_resolution), (4, 10, 9, 64));
        assert_eq!((c.lambda1, c.t_phase_start_fraction, c.beta_factor), (0.0, 0.3, 0.1));
        assert!(!c.outlier_filter);
        assert!(c.t_phase_enabled);
    }

    #[test]
    fn invalid_override_rejected() {
        let flags = ConfigFlags { tau: Some(2.0), ..Default::default() };
        assert!(flags.resolve().is_err());
        assert!(Cli::try_parse_from(["gsstitch", "compose", "a.ply,role=nobody", "--out", "x.ply"]).is_err());
    }
}
