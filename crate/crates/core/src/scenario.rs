//! Scenario definition and the plain `key = value` config format used
//! by the CLI.

use std::path::Path;

use crate::channel::{NoiseKind, NoiseModel};
use crate::control::LandingConfig;
use crate::detect::DetectorConfig;
use crate::dynamics::Disturbance;
use crate::error::{Error, Result};
use crate::vision::FitOptions;

/// Where the controller's divergence estimate comes from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EstimatorSource {
    /// Ground truth V_Z/Z.
    Truth,
    /// Truth through a delay line and the fitted noise model.
    Channel {
        kind: NoiseKind,
        lag: usize,
        noise: bool,
    },
    /// Synthetic camera features and one of the vision estimators.
    Vision {
        kind: VisionEstimator,
        focal: f64,
        fov_half_width: f64,
        pixel_noise: f64,
        features: usize,
        min_features: usize,
        /// RANSAC and model options for the flow-field fit.
        fit: FitOptions,
        /// Cap on sampled feature pairs for the size estimator.
        max_pairs: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VisionEstimator {
    Size,
    FieldFit,
}

/// Which control law closes the loop.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ControllerMode {
    FixedP { k_p: f64 },
    FixedPi { k_p: f64, k_i: f64 },
    Adaptive(LandingConfig),
}

/// One closed-loop run description. `seed` drives every stochastic
/// element; identical scenarios replay byte-identically.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub z0: f64,
    pub v0: f64,
    pub dt: f64,
    /// Desired divergence for the fixed controllers (the adaptive
    /// machine carries its own in LandingConfig).
    pub d_star: f64,
    pub max_duration: f64,
    pub seed: u64,
    /// Height treated as ground contact (landing-gear clearance).
    pub touchdown_height: f64,
    /// Command clamp (m/s²).
    pub mu_limit: f64,
    pub estimator: EstimatorSource,
    pub controller: ControllerMode,
    pub detector: DetectorConfig,
    pub disturbance: Disturbance,
    /// Overrides the Table-fitted coefficients for `Channel` runs.
    pub noise_model: Option<NoiseModel>,
    /// Seconds after start (or descend entry, for the adaptive machine)
    /// excluded from the tracking-RMSE summary.
    pub settle_time: f64,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            z0: 3.0,
            v0: 0.0,
            dt: 0.05,
            d_star: -0.3,
            max_duration: 120.0,
            seed: 0,
            touchdown_height: 0.05,
            mu_limit: 6.0,
            estimator: EstimatorSource::Truth,
            controller: ControllerMode::FixedP { k_p: 10.0 },
            detector: DetectorConfig::default(),
            disturbance: Disturbance::None,
            noise_model: None,
            settle_time: 3.0,
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.dt <= 0.0 {
            return Err(Error::Config(format!("dt must be > 0, got {}", self.dt)));
        }
        if self.z0 <= self.touchdown_height {
            return Err(Error::Config(format!(
                "z0 = {} must exceed touchdown height {}",
                self.z0, self.touchdown_height
            )));
        }
        if self.max_duration <= 0.0 {
            return Err(Error::Config("max_duration must be > 0".into()));
        }
        Ok(())
    }

    /// Parse a plain `key = value` scenario file.
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str_named(&text, &path.display().to_string())
    }

    pub fn from_str_named(text: &str, name: &str) -> Result<Self> {
        let mut s = Scenario::default();
        // accumulate multi-key choices, then assemble
        let mut estimator = "truth".to_string();
        let mut channel_kind = NoiseKind::Size;
        let mut channel_lag = 0usize;
        let mut channel_noise = true;
        let mut vision_kind = VisionEstimator::Size;
        let mut vision_focal = 100.0;
        let mut vision_fov = 1.0;
        let mut vision_noise_px = 0.0;
        let mut vision_features = 60usize;
        let mut vision_min_features = 10usize;
        let mut vision_fit = FitOptions::default();
        let mut vision_max_pairs = 500usize;
        let mut controller = "adaptive".to_string();
        let mut k_p = 0.6;
        let mut k_i = 0.1;
        let mut landing = LandingConfig::default();
        let mut disturbance = "none".to_string();
        let mut dist_value = 0.0;
        let mut dist_amplitude = 0.0;
        let mut dist_frequency = 0.0;
        let mut dist_std = 0.0;
        let mut noise_model_file: Option<String> = None;

        let err = |line: usize, msg: String| Error::Parse {
            path: name.to_string(),
            line,
            msg,
        };

        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(idx + 1, format!("expected key = value, got {line:?}")))?;
            let key = key.trim();
            let value = value.trim();
            let fnum = || -> Result<f64> {
                value
                    .parse()
                    .map_err(|_| err(idx + 1, format!("bad number {value:?} for {key}")))
            };
            let unum = || -> Result<usize> {
                value
                    .parse()
                    .map_err(|_| err(idx + 1, format!("bad integer {value:?} for {key}")))
            };
            let flag = || -> Result<bool> {
                match value {
                    "on" | "true" | "1" => Ok(true),
                    "off" | "false" | "0" => Ok(false),
                    _ => Err(err(idx + 1, format!("bad flag {value:?} for {key}"))),
                }
            };
            match key {
                "z0" => s.z0 = fnum()?,
                "v0" => s.v0 = fnum()?,
                "dt" => s.dt = fnum()?,
                "d_star" => s.d_star = fnum()?,
                "max_duration" => s.max_duration = fnum()?,
                "seed" => {
                    s.seed = value
                        .parse()
                        .map_err(|_| err(idx + 1, format!("bad seed {value:?}")))?
                }
                "touchdown_height" => s.touchdown_height = fnum()?,
                "mu_limit" => s.mu_limit = fnum()?,
                "settle_time" => s.settle_time = fnum()?,
                "estimator" => estimator = value.to_string(),
                "channel_kind" => {
                    channel_kind = match value {
                        "size" => NoiseKind::Size,
                        "field" | "field-fit" | "field_fit" => NoiseKind::FieldFit,
                        _ => return Err(err(idx + 1, format!("unknown channel kind {value:?}"))),
                    }
                }
                "channel_lag" => channel_lag = unum()?,
                "channel_noise" => channel_noise = flag()?,
                "noise_model_file" => noise_model_file = Some(value.to_string()),
                "vision_kind" => {
                    vision_kind = match value {
                        "size" => VisionEstimator::Size,
                        "field" | "field-fit" | "field_fit" => VisionEstimator::FieldFit,
                        _ => return Err(err(idx + 1, format!("unknown vision kind {value:?}"))),
                    }
                }
                "vision_focal" => vision_focal = fnum()?,
                "vision_fov" => vision_fov = fnum()?,
                "vision_noise_px" => vision_noise_px = fnum()?,
                "vision_features" => vision_features = unum()?,
                "vision_min_features" => vision_min_features = unum()?,
                "vision_full_model" => vision_fit.full_model = flag()?,
                "vision_ransac_iterations" => vision_fit.ransac_iterations = unum()?,
                "vision_inlier_threshold" => vision_fit.inlier_threshold = fnum()?,
                "vision_min_inlier_fraction" => vision_fit.min_inlier_fraction = fnum()?,
                "vision_max_pairs" => vision_max_pairs = unum()?,
                "controller" => controller = value.to_string(),
                "kp" => k_p = fnum()?,
                "ki" => k_i = fnum()?,
                "kp_start" => landing.k_p_start = fnum()?,
                "kappa" => landing.kappa = fnum()?,
                "ramp" => landing.ramp_per_s = fnum()?,
                "backoff_margin" => landing.backoff_margin = fnum()?,
                "mu_down" => landing.mu_down = fnum()?,
                "mu_up" => landing.mu_up = fnum()?,
                "band" => landing.tracking_band = fnum()?,
                "dwell" => landing.dwell = fnum()?,
                "kp_floor" => landing.k_p_floor = fnum()?,
                "kp0_min" => landing.k_p0_min = fnum()?,
                "integ_limit" => landing.integ_limit = fnum()?,
                "t_search_min" => landing.t_search_min = fnum()?,
                "t_search_max" => landing.t_search_max = fnum()?,
                "detection_latency" => landing.detection_latency = fnum()?,
                "descend_theta_factor" => landing.descend_theta_factor = fnum()?,
                "detector_theta" => s.detector.theta = fnum()?,
                "detector_h0" => s.detector.h0 = unum()?,
                "detector_h_min" => s.detector.h_min = unum()?,
                "detector_h_max" => s.detector.h_max = unum()?,
                "detector_nw_min" => s.detector.n_w_min = unum()?,
                "detector_refractory" => s.detector.refractory = fnum()?,
                "detector_adapt" => s.detector.adapt = flag()?,
                "detector_adapt_every" => s.detector.adapt_every = unum()?,
                "detector_adapt_window" => s.detector.adapt_window = unum()?,
                "detector_dominance" => s.detector.dominance = fnum()?,
                "disturbance" => disturbance = value.to_string(),
                "disturbance_value" => dist_value = fnum()?,
                "disturbance_amplitude" => dist_amplitude = fnum()?,
                "disturbance_frequency" => dist_frequency = fnum()?,
                "disturbance_std" => dist_std = fnum()?,
                other => return Err(err(idx + 1, format!("unknown key {other:?}"))),
            }
        }

        s.estimator = match estimator.as_str() {
            "truth" => EstimatorSource::Truth,
            "channel" => EstimatorSource::Channel {
                kind: channel_kind,
                lag: channel_lag,
                noise: channel_noise,
            },
            "vision" => EstimatorSource::Vision {
                kind: vision_kind,
                focal: vision_focal,
                fov_half_width: vision_fov,
                pixel_noise: vision_noise_px,
                features: vision_features,
                min_features: vision_min_features,
                fit: vision_fit,
                max_pairs: vision_max_pairs,
            },
            other => return Err(Error::Config(format!("unknown estimator {other:?}"))),
        };
        landing.d_star = s.d_star;
        s.controller = match controller.as_str() {
            "p" => ControllerMode::FixedP { k_p },
            "pi" => ControllerMode::FixedPi { k_p, k_i },
            "adaptive" => ControllerMode::Adaptive(landing),
            other => return Err(Error::Config(format!("unknown controller {other:?}"))),
        };
        s.disturbance = match disturbance.as_str() {
            "none" => Disturbance::None,
            "constant" => Disturbance::Constant(dist_value),
            "sine" => Disturbance::Sinusoid {
                amplitude: dist_amplitude,
                frequency: dist_frequency,
            },
            "gusts" => Disturbance::Gusts { std: dist_std },
            other => return Err(Error::Config(format!("unknown disturbance {other:?}"))),
        };
        if let Some(file) = noise_model_file {
            let defaults = NoiseModel::for_kind(channel_kind);
            s.noise_model = Some(NoiseModel::from_file(Path::new(&file), defaults)?);
        }
        s.validate()?;
        Ok(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_minimal_adaptive() {
        let text = "z0 = 4.0\nd_star = -0.2\nseed = 7\nestimator = channel\nchannel_kind = size\nchannel_lag = 1\ncontroller = adaptive\n";
        let s = Scenario::from_str_named(text, "test").unwrap();
        assert_eq!(s.z0, 4.0);
        assert_eq!(s.seed, 7);
        match s.controller {
            ControllerMode::Adaptive(cfg) => assert_eq!(cfg.d_star, -0.2),
            _ => panic!("expected adaptive"),
        }
        match s.estimator {
            EstimatorSource::Channel { kind, lag, noise } => {
                assert_eq!(kind, NoiseKind::Size);
                assert_eq!(lag, 1);
                assert!(noise);
            }
            _ => panic!("expected channel"),
        }
    }

    #[test]
    fn parse_rejects_unknown_key() {
        let e = Scenario::from_str_named("zz0 = 1.0\n", "test").unwrap_err();
        assert!(matches!(e, Error::Parse { .. }));
    }

    #[test]
    fn parse_rejects_bad_geometry() {
        let e = Scenario::from_str_named("z0 = 0.01\n", "test").unwrap_err();
        assert!(matches!(e, Error::Config(_)));
    }

    #[test]
    fn comments_and_blanks_ignored() {
        let text = "# a comment\n\nz0 = 2.0   # trailing\n";
        let s = Scenario::from_str_named(text, "test").unwrap();
        assert_eq!(s.z0, 2.0);
    }
}
