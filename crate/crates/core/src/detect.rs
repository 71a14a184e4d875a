//! Real-time self-induced-oscillation detection.
//!
//! The detector compares the most recent window of divergence samples
//! against the same window shifted back by half an oscillation period:
//! a coherent oscillation makes that lagged covariance strongly
//! negative, while noise and smooth trends do not. A DFT utility
//! identifies the dominant period for shift selection and offline
//! calibration.

use std::collections::VecDeque;

use rustfft::{num_complex::Complex, FftPlanner};

/// Configuration for [`CovarianceDetector`].
#[derive(Debug, Clone, Copy)]
pub struct DetectorConfig {
    /// Firing threshold on the lagged covariance ((1/s)²). Negative.
    pub theta: f64,
    /// Default half-period shift in samples, used when no dominant
    /// period is found.
    pub h0: usize,
    /// Bounds for the adapted shift.
    pub h_min: usize,
    pub h_max: usize,
    /// Window length floor; the window is max(2h, n_w_min).
    pub n_w_min: usize,
    /// Seconds after a firing during which verdicts stay false.
    pub refractory: f64,
    /// Enable online shift adaptation from the dominant period.
    pub adapt: bool,
    /// Samples between adaptation attempts.
    pub adapt_every: usize,
    /// Samples in the adaptation window.
    pub adapt_window: usize,
    /// Spectral peak must exceed this multiple of the median bin for the
    /// detector to retune its shift (stricter than the flatness rule of
    /// [`dominant_period`], which keeps spurious retunes from biasing the
    /// covariance toward whatever the noise last did).
    pub dominance: f64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            theta: -3e-3,
            h0: 10,
            h_min: 2,
            h_max: 40,
            n_w_min: 20,
            refractory: 1.5,
            adapt: true,
            adapt_every: 5,
            adapt_window: 32,
            dominance: 3.0,
        }
    }
}

/// One detector evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verdict {
    /// Lagged covariance, `None` until the buffer is primed.
    pub cov: Option<f64>,
    /// True when the covariance crossed the threshold outside refractory.
    pub oscillating: bool,
}

/// Sliding-window covariance oscillation detector (single owner,
/// stateful ring buffer).
#[derive(Debug, Clone)]
pub struct CovarianceDetector {
    cfg: DetectorConfig,
    h: usize,
    buf: VecDeque<f64>,
    refractory_left: f64,
    ticks: usize,
}

impl CovarianceDetector {
    pub fn new(cfg: DetectorConfig) -> Self {
        let h = cfg.h0.clamp(cfg.h_min.max(1), cfg.h_max);
        CovarianceDetector {
            cfg,
            h,
            buf: VecDeque::new(),
            refractory_left: 0.0,
            ticks: 0,
        }
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.cfg
    }

    /// Current half-period shift in samples.
    pub fn shift(&self) -> usize {
        self.h
    }

    pub fn window_len(&self) -> usize {
        (2 * self.h).max(self.cfg.n_w_min)
    }

    /// Override the firing threshold (still negative).
    pub fn set_theta(&mut self, theta: f64) {
        self.cfg.theta = theta;
    }

    /// Force a shift, clamped to the configured bounds.
    pub fn set_shift(&mut self, h: usize) {
        self.h = h.clamp(self.cfg.h_min.max(1), self.cfg.h_max);
    }

    /// Clear the sample window and restart the refractory hold. Used at
    /// phase transitions and gain re-anchors.
    pub fn reset_window(&mut self) {
        self.buf.clear();
        self.refractory_left = self.cfg.refractory;
    }

    fn primed(&self) -> bool {
        self.buf.len() >= self.window_len() + self.h
    }

    /// Lagged-window sample covariance of the buffered signal, if primed.
    pub fn cov_lagged(&self) -> Option<f64> {
        if !self.primed() {
            return None;
        }
        let n_w = self.window_len();
        let len = self.buf.len();
        let cur = len - n_w;
        let lag = len - n_w - self.h;
        let mean_at = |start: usize| -> f64 {
            (0..n_w).map(|i| self.buf[start + i]).sum::<f64>() / n_w as f64
        };
        let mx = mean_at(cur);
        let my = mean_at(lag);
        let mut acc = 0.0;
        for i in 0..n_w {
            acc += (self.buf[cur + i] - mx) * (self.buf[lag + i] - my);
        }
        Some(acc / n_w as f64)
    }

    /// Verdict for the current buffer contents without pushing a sample.
    pub fn is_oscillating(&self) -> bool {
        match self.cov_lagged() {
            Some(c) => c < self.cfg.theta && self.refractory_left <= 0.0,
            None => false,
        }
    }

    /// Push one divergence sample and evaluate. `dt` advances the
    /// refractory clock.
    pub fn step(&mut self, sample: f64, dt: f64) -> Verdict {
        self.buf.push_back(sample);
        let cap = 2 * (self.cfg.h_max.max(self.cfg.n_w_min) + self.cfg.h_max)
            + self.cfg.adapt_window;
        while self.buf.len() > cap {
            self.buf.pop_front();
        }
        self.ticks += 1;

        if self.cfg.adapt
            && self.ticks.is_multiple_of(self.cfg.adapt_every)
            && self.buf.len() >= self.cfg.adapt_window
        {
            self.adapt_shift(dt);
        }

        let cov = self.cov_lagged();
        let oscillating = match cov {
            Some(c) => c < self.cfg.theta && self.refractory_left <= 0.0,
            None => false,
        };
        if oscillating {
            self.refractory_left = self.cfg.refractory;
        } else {
            self.refractory_left -= dt;
        }
        Verdict { cov, oscillating }
    }

    fn adapt_shift(&mut self, dt: f64) {
        let n = self.cfg.adapt_window;
        let start = self.buf.len() - n;
        let window: Vec<f64> = (0..n).map(|i| self.buf[start + i]).collect();
        if let Some(peak) = spectral_peak(&window, dt, self.cfg.dominance) {
            let half_period = (peak.period_samples / 2.0).round() as usize;
            self.set_shift(half_period.max(1));
        }
    }
}

struct SpectralPeak {
    period_samples: f64,
}

/// Largest non-DC bin of the mean-removed DFT, if it clears
/// `dominance` × the median non-DC magnitude.
fn spectral_peak(series: &[f64], _dt: f64, dominance: f64) -> Option<SpectralPeak> {
    let n = series.len();
    if n < 8 {
        return None;
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let mut buf: Vec<Complex<f64>> =
        series.iter().map(|&x| Complex::new(x - mean, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let half = n / 2;
    let mags: Vec<f64> = (1..=half).map(|k| buf[k].norm()).collect();
    let mut sorted = mags.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = sorted[sorted.len() / 2];
    let (kmax, &max) = mags
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())?;
    if median <= 0.0 || max < dominance * median {
        return None;
    }
    Some(SpectralPeak {
        period_samples: n as f64 / (kmax + 1) as f64,
    })
}

/// Flatness rule for [`dominant_period`]: the largest Rayleigh-
/// distributed noise bin among ~64 sits near 2.5× the median, so the
/// peak must clear 4× the median to count as dominant.
pub const FLATNESS_DOMINANCE: f64 = 4.0;

/// Period (s) of the dominant non-DC DFT bin of the mean-removed series.
///
/// Returns `None` when the spectrum is flat (max bin under
/// [`FLATNESS_DOMINANCE`] × the median bin) or the series is shorter
/// than 64 samples.
pub fn dominant_period(series: &[f64], dt: f64) -> Option<f64> {
    if series.len() < 64 {
        return None;
    }
    spectral_peak(series, dt, FLATNESS_DOMINANCE).map(|p| p.period_samples * dt)
}

/// Calibration signal: white noise with one sinusoidal burst, the
/// pattern used to exercise detection selectivity.
pub fn burst_signal(
    amplitude: f64,
    frequency: f64,
    noise_std: f64,
    dt: f64,
    duration: f64,
    burst: (f64, f64),
    seed: u64,
) -> Vec<f64> {
    use rand::SeedableRng;
    use rand_distr::Distribution;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let noise = rand_distr::Normal::<f64>::new(0.0, noise_std.max(0.0)).unwrap();
    (0..(duration / dt) as usize)
        .map(|i| {
            let t = i as f64 * dt;
            let mut x = if noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
            if t >= burst.0 && t < burst.1 {
                x += amplitude * (std::f64::consts::TAU * frequency * t).sin();
            }
            x
        })
        .collect()
}
