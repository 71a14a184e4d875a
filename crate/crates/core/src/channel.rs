//! Sensor imperfection model for divergence estimates: a fixed sample
//! delay plus the empirically fitted bias/spread model.
//!
//! The bias is linear, f1(D) = a·D + b. The spread is the fitted mean
//! absolute error, f2(D) = c·D² + d·D + e; generation scales a standard
//! normal by f2·√(π/2) so the expected absolute deviation equals f2.

use std::collections::VecDeque;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal, StudentT};

use crate::error::{Error, Result};

/// Which estimator a noise model describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    /// Flow-field fit estimator.
    FieldFit,
    /// Size (line-length) estimator.
    Size,
}

/// E|N(0,1)| = √(2/π); dividing by it turns a mean-absolute target into
/// a normal scale factor.
pub const MEAN_ABS_NORMAL: f64 = 0.797_884_560_802_865_4;
/// E|t₃| for the optional heavy-tail switch.
const MEAN_ABS_STUDENT_T3: f64 = 1.102_657_790_844_127_3;

/// Fitted bias and spread coefficients plus the Gaussian residual
/// statistics reported for validation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
    pub e: f64,
    pub resid_mean: f64,
    pub resid_std: f64,
    /// Draw spread from Student-t (ν=3) instead of a normal; off by default.
    pub heavy_tail: bool,
}

impl NoiseModel {
    pub fn new(a: f64, b: f64, c: f64, d: f64, e: f64, resid_mean: f64, resid_std: f64) -> Result<Self> {
        let m = NoiseModel {
            a,
            b,
            c,
            d,
            e,
            resid_mean,
            resid_std,
            heavy_tail: false,
        };
        m.validate()?;
        Ok(m)
    }

    /// Table-fitted coefficients for the requested estimator.
    pub fn for_kind(kind: NoiseKind) -> Self {
        match kind {
            NoiseKind::FieldFit => NoiseModel {
                a: 0.8519,
                b: -0.0655,
                c: 0.5766,
                d: 0.1918,
                e: 0.0412,
                resid_mean: 0.0173,
                resid_std: 0.1292,
                heavy_tail: false,
            },
            NoiseKind::Size => NoiseModel {
                a: 0.8393,
                b: -0.0060,
                c: 0.1841,
                d: -0.0043,
                e: 0.0455,
                resid_mean: 6.1979e-4,
                resid_std: 0.0937,
                heavy_tail: false,
            },
        }
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("a", self.a),
            ("b", self.b),
            ("c", self.c),
            ("d", self.d),
            ("e", self.e),
            ("resid_mean", self.resid_mean),
            ("resid_std", self.resid_std),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter(format!("noise model {name} not finite")));
            }
        }
        if self.resid_std <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "resid_std must be > 0, got {}",
                self.resid_std
            )));
        }
        // the raw quadratic must be non-negative over the declared
        // domain of the fit (spread() clamps, so check the polynomial)
        let mut d = -1.5;
        while d <= 1.5 {
            let raw = self.c * d * d + self.d * d + self.e;
            if raw < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "spread fit f2({d:.2}) = {raw} is negative"
                )));
            }
            d += 0.01;
        }
        Ok(())
    }

    /// Bias fit f1(D) = a·D + b.
    pub fn bias(&self, d_true: f64) -> f64 {
        self.a * d_true + self.b
    }

    /// Spread fit f2(D) = c·D² + d·D + e, clamped at zero.
    pub fn spread(&self, d_true: f64) -> f64 {
        (self.c * d_true * d_true + self.d * d_true + self.e).max(0.0)
    }

    /// One corrupted sample: f1(D) plus noise whose expected absolute
    /// deviation is f2(D).
    pub fn corrupt<R: Rng + ?Sized>(&self, d_true: f64, rng: &mut R) -> f64 {
        let s = self.spread(d_true);
        let xi = if self.heavy_tail {
            StudentT::new(3.0).unwrap().sample(rng) / MEAN_ABS_STUDENT_T3
        } else {
            Normal::new(0.0, 1.0).unwrap().sample(rng) / MEAN_ABS_NORMAL
        };
        self.bias(d_true) + s * xi
    }

    /// Load coefficients from a plain `key = value` file. Missing keys fall
    /// back to the given defaults.
    pub fn from_file(path: &Path, defaults: NoiseModel) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut m = defaults;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                path: path.display().to_string(),
                line: idx + 1,
                msg: format!("expected key = value, got {line:?}"),
            })?;
            let v: f64 = value.trim().parse().map_err(|_| Error::Parse {
                path: path.display().to_string(),
                line: idx + 1,
                msg: format!("bad number {:?}", value.trim()),
            })?;
            match key.trim() {
                "a" => m.a = v,
                "b" => m.b = v,
                "c" => m.c = v,
                "d" => m.d = v,
                "e" => m.e = v,
                "resid_mean" => m.resid_mean = v,
                "resid_std" => m.resid_std = v,
                other => {
                    return Err(Error::Parse {
                        path: path.display().to_string(),
                        line: idx + 1,
                        msg: format!("unknown key {other:?}"),
                    })
                }
            }
        }
        m.validate()?;
        Ok(m)
    }
}

/// Fixed integer-sample delay line. Before it is primed the oldest
/// available sample is returned.
#[derive(Debug, Clone)]
pub struct DelayLine {
    lag: usize,
    buffer: VecDeque<f64>,
}

impl DelayLine {
    pub fn new(lag: usize) -> Self {
        DelayLine {
            lag,
            buffer: VecDeque::with_capacity(lag + 1),
        }
    }

    pub fn lag(&self) -> usize {
        self.lag
    }

    /// Push the newest sample, return the sample `lag` steps ago.
    pub fn push(&mut self, sample: f64) -> f64 {
        self.buffer.push_back(sample);
        if self.buffer.len() > self.lag + 1 {
            self.buffer.pop_front();
        }
        *self.buffer.front().expect("buffer never empty after push")
    }
}
