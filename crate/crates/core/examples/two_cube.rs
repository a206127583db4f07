//! Runs the two-cube stitch and prints its metrics.
//!
//! cargo run --release --example two_cube -- [iters] [lambda1] [lambda2] [t_phase 0|1]

use std::time::Instant;

use gsstitch_core::fixtures::{run_two_cube, two_cube, TwoCubeSpec};
use gsstitch_core::optimize::StitchConfig;

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, d: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let config = StitchConfig {
        total_iters: arg(0, 10_000.0) as usize,
        lambda1: arg(1, 2.0),
        lambda2: arg(2, 2.0),
        t_phase_enabled: arg(3, 1.0) != 0.0,
        ..Default::default()
    };
    let spec = TwoCubeSpec { texture_period: arg(4, 3.0), texture_amplitude: arg(5, 0.15), ..Default::default() };
    let fixture = two_cube(&spec);
    let t0 = Instant::now();
    let r = run_two_cube(&fixture, &spec, config).expect("fixture runs");
    println!("time {:.1}s", t0.elapsed().as_secs_f64());
    println!("boundary {}", r.boundary_len);
    println!("feature loss {:.4e} -> {:.4e} (ratio {:.3e})", r.initial_feature_loss, r.final_feature_loss, r.final_feature_loss / r.initial_feature_loss);
    println!("seam {:.4} -> {:.4} (reduction {:.1}%)", r.seam_before, r.seam_after, 100.0 * r.seam_reduction());
    println!("content {:.4} / {:.4} = {:.4} over {} px", r.content.mean_abs_deviation, r.content.dynamic_range, r.content.relative(), r.content.pixels);
    println!("palette distance {:.4}", r.palette_distance);
    let h = &r.outcome.history.records;
    for rec in h.iter().step_by((h.len() / 10).max(1)).chain(h.last()) {
        println!("{rec:?}");
    }
}
