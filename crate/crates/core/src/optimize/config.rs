use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid config: {0}")]
pub struct ConfigError(pub String);

/// Streaming palette parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct PaletteConfig {
    pub initial_bins: usize,
    /// A sample farther than this (rgb distance) from every center spawns a bin.
    pub spawn_distance: f64,
    /// Bins are judged over this many most recent iterations.
    pub expiry_window: usize,
    /// A bin expires when it received less than this share of window samples.
    pub expiry_share: f64,
    pub convergence_tolerance: f64,
    pub convergence_streak: usize,
    pub max_iters: usize,
    /// Surviving bins with a smaller cumulative share are dropped at the end.
    pub min_final_share: f64,
    pub alpha_threshold: f64,
}

impl Default for PaletteConfig {
    fn default() -> Self {
        Self {
            initial_bins: 3,
            spawn_distance: 0.15,
            expiry_window: 20,
            expiry_share: 0.01,
            convergence_tolerance: 1e-3,
            convergence_streak: 5,
            max_iters: 200,
            min_final_share: 0.01,
            alpha_threshold: 0.95,
        }
    }
}

/// Everything that drives boundary detection and the optimizer. Serialized
/// with camelCase keys; missing keys take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default, deny_unknown_fields)]
pub struct StitchConfig {
    pub k: usize,
    pub tau: f64,
    pub beta_factor: f64,
    pub gamma: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Explicit T-phase start iteration; overrides `t_phase_start_fraction`.
    pub s_phase_iters: Option<usize>,
    pub total_iters: usize,
    pub t_phase_start_fraction: f64,
    pub t_phase_enabled: bool,
    pub cameras_per_iter: usize,
    pub grad_plans_per_iter: usize,
    pub grad_views: usize,
    pub tune_plans_per_iter: usize,
    pub tune_views: usize,
    pub lr_dc: f64,
    pub lr_rest: f64,
    pub seed: u64,
    pub loss_resolution: u32,
    /// Camera distance as a multiple of the bounding-sphere radius.
    pub camera_radius_factor: f64,
    pub clone_refresh_interval: usize,
    pub outlier_filter: bool,
    pub outlier_k: usize,
    pub outlier_std_ratio: f64,
    pub palette: PaletteConfig,
}

impl Default for StitchConfig {
    fn default() -> Self {
        Self {
            k: crate::spatial::DEFAULT_K,
            tau: 0.95,
            beta_factor: 0.05,
            gamma: 10.0,
            lambda1: 2.0,
            lambda2: 2.0,
            s_phase_iters: None,
            total_iters: 10_000,
            t_phase_start_fraction: 0.5,
            t_phase_enabled: true,
            cameras_per_iter: 4,
            grad_plans_per_iter: 2,
            grad_views: 12,
            tune_plans_per_iter: 1,
            tune_views: 12,
            lr_dc: 2.5e-3,
            lr_rest: 1.25e-4,
            seed: 0,
            loss_resolution: crate::render::DEFAULT_LOSS_RESOLUTION,
            camera_radius_factor: 2.5,
            clone_refresh_interval: 100,
            outlier_filter: true,
            outlier_k: crate::spatial::DEFAULT_OUTLIER_K,
            outlier_std_ratio: crate::spatial::DEFAULT_OUTLIER_STD_RATIO,
            palette: PaletteConfig::default(),
        }
    }
}

impl StitchConfig {
    /// First iteration at which the tune term is active, if ever.
    pub fn t_phase_start(&self) -> Option<usize> {
        if !self.t_phase_enabled {
            return None;
        }
        Some(
            self.s_phase_iters
                .unwrap_or_else(|| (self.t_phase_start_fraction * self.total_iters as f64).floor() as usize),
        )
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |what: &str| Err(ConfigError(what.to_string()));
        if self.k == 0 {
            return bad("k must be positive");
        }
        if !(self.tau >= 0.0 && self.tau < 1.0) {
            return bad("tau must lie in [0, 1)");
        }
        for (name, v) in [
            ("betaFactor", self.beta_factor),
            ("lrDc", self.lr_dc),
            ("lrRest", self.lr_rest),
            ("cameraRadiusFactor", self.camera_radius_factor),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(&format!("{name} must be positive"));
            }
        }
        for (name, v) in [("gamma", self.gamma), ("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(&format!("{name} must be non-negative"));
            }
        }
        if !(0.0..=1.0).contains(&self.t_phase_start_fraction) {
            return bad("tPhaseStartFraction must lie in [0, 1]");
        }
        if self.cameras_per_iter == 0 || self.loss_resolution == 0 || self.clone_refresh_interval == 0 {
            return bad("camerasPerIter, lossResolution and cloneRefreshInterval must be positive");
        }
        if self.grad_plans_per_iter > self.grad_views || self.tune_plans_per_iter > self.tune_views {
            return bad("plans per iteration cannot exceed the number of views");
        }
        let p = &self.palette;
        if p.initial_bins == 0 || p.expiry_window == 0 || p.max_iters == 0 || p.convergence_streak == 0 {
            return bad("palette counts must be positive");
        }
        if !(p.spawn_distance > 0.0) {
            return bad("palette spawnDistance must be positive");
        }
        Ok(())
    }

    /// JSON schema describing the serialized form, for form builders.
    pub fn json_schema() -> serde_json::Value {
        fn num(min: f64, desc: &str) -> serde_json::Value {
            serde_json::json!({ "type": "number", "minimum": min, "description": desc })
        }
        fn int(min: u64, desc: &str) -> serde_json::Value {
            serde_json::json!({ "type": "integer", "minimum": min, "description": desc })
        }
        let d = StitchConfig::default();
        let p = PaletteConfig::default();
        let palette = serde_json::json!({
            "type": "object",
            "additionalProperties": false,
            "properties": {
                "initialBins": int(1, "bins seeded from the first view"),
                "spawnDistance": { "type": "number", "exclusiveMinimum": 0.0 },
                "expiryWindow": int(1, "iterations"),
                "expiryShare": num(0.0, "minimum vote share over the window"),
                "convergenceTolerance": num(0.0, "center movement"),
                "convergenceStreak": int(1, "iterations"),
                "maxIters": int(1, "iterations"),
                "minFinalShare": num(0.0, "final pruning share"),
                "alphaThreshold": num(0.0, "sample alpha mask")
            }
        });
        let mut schema = serde_json::json!({
            "$schema": "https://json-schema.org/draft/2020-12/schema",
            "title": "StitchConfig",
            "type": "object",
            "additionalProperties": false,
            "properties": {
                "k": int(1, "KNN count"),
                "tau": { "type": "number", "minimum": 0.0, "exclusiveMaximum": 1.0, "description": "boundary opacity threshold" },
                "betaFactor": { "type": "number", "exclusiveMinimum": 0.0, "description": "boundary distance threshold as a fraction of the scene diagonal" },
                "gamma": num(0.0, "disturbance frequency"),
                "lambda1": num(0.0, "gradient loss weight"),
                "lambda2": num(0.0, "tune loss weight"),
                "sPhaseIters": { "type": ["integer", "null"], "minimum": 0, "description": "explicit tune-phase start iteration" },
                "totalIters": int(0, "iterations"),
                "tPhaseStartFraction": { "type": "number", "minimum": 0.0, "maximum": 1.0 },
                "tPhaseEnabled": { "type": "boolean" },
                "camerasPerIter": int(1, "cameras per iteration for the color loss"),
                "gradPlansPerIter": int(0, "local views per iteration for the gradient loss"),
                "gradViews": int(0, "local views prepared for the gradient loss"),
                "tunePlansPerIter": int(0, "global views per iteration for the tune loss"),
                "tuneViews": int(0, "global views prepared for the tune loss"),
                "lrDc": { "type": "number", "exclusiveMinimum": 0.0 },
                "lrRest": { "type": "number", "exclusiveMinimum": 0.0 },
                "seed": int(0, "random seed"),
                "lossResolution": int(1, "loss image size in pixels"),
                "cameraRadiusFactor": { "type": "number", "exclusiveMinimum": 0.0 },
                "cloneRefreshInterval": int(1, "iterations between boundary snapshots"),
                "outlierFilter": { "type": "boolean" },
                "outlierK": int(1, "outlier filter neighbor count"),
                "outlierStdRatio": num(0.0, "outlier filter threshold in standard deviations"),
                "palette": palette
            }
        });
        // Attach defaults from the live values.
        let defaults = serde_json::to_value(&d).expect("config serializes");
        let pdefaults = serde_json::to_value(&p).expect("config serializes");
        if let Some(props) = schema["properties"].as_object_mut() {
            for (key, prop) in props.iter_mut() {
                if key != "palette" {
                    prop["default"] = defaults[key].clone();
                }
            }
        }
        if let Some(props) = schema["properties"]["palette"]["properties"].as_object_mut() {
            for (key, prop) in props.iter_mut() {
                prop["default"] = pdefaults[key].clone();
            }
        }
        schema
    }
}
