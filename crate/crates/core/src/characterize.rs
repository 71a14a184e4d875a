//! Offline characterization of divergence estimates against ground
//! truth: lag estimation by windowed shift search, a moving-median
//! prefilter, robust bisquare regression for the bias and spread fits,
//! and residual statistics.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::channel::NoiseModel;
use crate::error::{Error, Result};

/// Paired truth/estimate series on a uniform time grid.
#[derive(Debug, Clone)]
pub struct PairedLog {
    pub t: Vec<f64>,
    pub truth: Vec<f64>,
    pub estimate: Vec<f64>,
}

impl PairedLog {
    pub fn new(t: Vec<f64>, truth: Vec<f64>, estimate: Vec<f64>) -> Result<Self> {
        if t.len() != truth.len() || t.len() != estimate.len() {
            return Err(Error::InvalidParameter(format!(
                "length mismatch: t {} truth {} estimate {}",
                t.len(),
                truth.len(),
                estimate.len()
            )));
        }
        if t.len() >= 3 {
            let dt = t[1] - t[0];
            for w in t.windows(2) {
                if ((w[1] - w[0]) - dt).abs() > 1e-9 {
                    return Err(Error::InvalidParameter(
                        "non-uniform sample spacing".into(),
                    ));
                }
            }
        }
        Ok(PairedLog { t, truth, estimate })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Read a `t,truth,estimate` CSV (header required, '.' decimal).
    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line: 1,
            msg: "empty file".into(),
        })?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        if cols != ["t", "truth", "estimate"] {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: 1,
                msg: format!("expected header t,truth,estimate got {header:?}"),
            });
        }
        let mut t = Vec::new();
        let mut truth = Vec::new();
        let mut estimate = Vec::new();
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(Error::Parse {
                    path: path.display().to_string(),
                    line: idx + 1,
                    msg: format!("expected 3 fields, got {}", fields.len()),
                });
            }
            let parse = |s: &str| -> Result<f64> {
                s.trim().parse().map_err(|_| Error::Parse {
                    path: path.display().to_string(),
                    line: idx + 1,
                    msg: format!("bad number {s:?}"),
                })
            };
            t.push(parse(fields[0])?);
            truth.push(parse(fields[1])?);
            estimate.push(parse(fields[2])?);
        }
        PairedLog::new(t, truth, estimate)
    }

    /// Write the `t,truth,estimate` CSV (LF line endings).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut s = String::from("t,truth,estimate\n");
        for i in 0..self.len() {
            s.push_str(&format!(
                "{:.6},{:.9},{:.9}\n",
                self.t[i], self.truth[i], self.estimate[i]
            ));
        }
        std::fs::write(path, s)?;
        Ok(())
    }
}

/// Causal moving median. Returns the filtered series and the group delay
/// (N_win − 1)/2 in samples.
pub fn median_filter(series: &[f64], n_win: usize) -> Result<(Vec<f64>, usize)> {
    if n_win == 0 || n_win.is_multiple_of(2) {
        return Err(Error::InvalidParameter(format!(
            "median window must be odd and >= 1, got {n_win}"
        )));
    }
    let delay = (n_win - 1) / 2;
    let mut out = Vec::with_capacity(series.len());
    let mut scratch = Vec::with_capacity(n_win);
    for i in 0..series.len() {
        let start = i.saturating_sub(n_win - 1);
        scratch.clear();
        scratch.extend_from_slice(&series[start..=i]);
        scratch.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out.push(scratch[scratch.len() / 2]);
    }
    Ok((out, delay))
}

/// Lag-search configuration.
#[derive(Debug, Clone, Copy)]
pub struct LagConfig {
    /// Window length W in samples.
    pub window: usize,
    /// Largest shift M searched.
    pub max_shift: usize,
    /// Median-prefilter window; its group delay is subtracted from the
    /// estimated lag.
    pub prefilter: Option<usize>,
}

impl Default for LagConfig {
    fn default() -> Self {
        // 2 s window and 0.5 s search at dt = 0.05
        LagConfig { window: 40, max_shift: 10, prefilter: None }
    }
}

/// Average over anchors of argmin_m Σ (truth[i..i+W] − estimate[i+m..i+W+m])²,
/// rounded to the nearest sample, minus the prefilter group delay.
pub fn estimate_lag(log: &PairedLog, cfg: &LagConfig) -> Result<i64> {
    let w = cfg.window;
    let m_max = cfg.max_shift;
    if w < 8 {
        return Err(Error::InvalidParameter(format!("window must be >= 8, got {w}")));
    }
    if m_max < 1 {
        return Err(Error::InvalidParameter("max shift must be >= 1".into()));
    }
    if log.len() < w + m_max {
        return Err(Error::InvalidParameter(format!(
            "series of {} too short for window {w} + shift {m_max}",
            log.len()
        )));
    }

    let (estimate, filter_delay) = match cfg.prefilter {
        Some(n_win) => median_filter(&log.estimate, n_win)?,
        None => (log.estimate.clone(), 0),
    };

    let n_anchors = log.len() - w - m_max + 1;
    let anchor_lag = |i: usize| -> Option<i64> {
        let truth_win = &log.truth[i..i + w];
        let mean = truth_win.iter().sum::<f64>() / w as f64;
        let var = truth_win.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
        if var < 1e-18 {
            return None; // flat window carries no alignment information
        }
        let mut best = (0usize, f64::INFINITY);
        for m in 0..=m_max {
            let mut sse = 0.0;
            for j in 0..w {
                let d = truth_win[j] - estimate[i + m + j];
                sse += d * d;
            }
            if sse < best.1 {
                best = (m, sse);
            }
        }
        Some(best.0 as i64)
    };

    let lags = crate::par::map_indices(n_anchors, anchor_lag);
    let used: Vec<i64> = lags.into_iter().flatten().collect();
    if used.is_empty() {
        return Err(Error::AllAnchorsFlat);
    }
    let avg = used.iter().sum::<i64>() as f64 / used.len() as f64;
    Ok(avg.round() as i64 - filter_delay as i64)
}

/// Tukey bisquare ψ-weight with the 95%-efficiency tuning constant.
const BISQUARE_C: f64 = 4.685;
const IRLS_TOL: f64 = 1e-10;
const IRLS_MAX_ITER: usize = 50;

fn mad_scale(residuals: &[f64]) -> f64 {
    let mut abs: Vec<f64> = residuals.iter().map(|r| r.abs()).collect();
    abs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let med = abs[abs.len() / 2];
    med / 0.6745
}

/// Iteratively reweighted least squares with bisquare weights on an
/// arbitrary design matrix. Returns the coefficient vector.
fn bisquare_irls(design: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let n = design.nrows();
    let p = design.ncols();
    if n <= p {
        return Err(Error::InvalidParameter(format!(
            "need more points ({n}) than parameters ({p})"
        )));
    }
    let solve_weighted = |w: Option<&[f64]>| -> Result<DVector<f64>> {
        let mut a = design.clone();
        let mut b = y.clone();
        if let Some(w) = w {
            for i in 0..n {
                let sw = w[i].sqrt();
                for j in 0..p {
                    a[(i, j)] *= sw;
                }
                b[i] *= sw;
            }
        }
        let svd = a.svd(true, true);
        let tol = 1e-12 * svd.singular_values.max().max(1e-300);
        if svd.singular_values.iter().any(|&s| s <= tol) {
            return Err(Error::DegenerateGeometry("rank-deficient regression design".into()));
        }
        svd.solve(&b, tol).map_err(|e| Error::DegenerateGeometry(e.to_string()))
    };

    let mut beta = solve_weighted(None)?;
    for _ in 0..IRLS_MAX_ITER {
        let resid: Vec<f64> = (0..n).map(|i| y[i] - design.row(i).dot(&beta.transpose())).collect();
        let scale = mad_scale(&resid);
        if scale < 1e-12 {
            return Ok(beta); // essentially exact fit
        }
        let weights: Vec<f64> = resid
            .iter()
            .map(|r| {
                let u = r / (BISQUARE_C * scale);
                if u.abs() < 1.0 {
                    (1.0 - u * u).powi(2)
                } else {
                    0.0
                }
            })
            .collect();
        if weights.iter().sum::<f64>() < p as f64 {
            return Err(Error::NonConvergent {
                iterations: IRLS_MAX_ITER,
                last: beta.iter().copied().collect(),
            });
        }
        let next = solve_weighted(Some(&weights))?;
        let delta = (&next - &beta).amax();
        beta = next;
        if delta < IRLS_TOL {
            return Ok(beta);
        }
    }
    Err(Error::NonConvergent {
        iterations: IRLS_MAX_ITER,
        last: beta.iter().copied().collect(),
    })
}

/// Robust linear fit estimate = a·truth + b.
pub fn bisquare_fit_linear(d: &[f64], d_hat: &[f64]) -> Result<(f64, f64)> {
    check_fit_inputs(d, d_hat)?;
    let n = d.len();
    let design = DMatrix::from_fn(n, 2, |i, j| if j == 0 { d[i] } else { 1.0 });
    let y = DVector::from_column_slice(d_hat);
    let beta = bisquare_irls(&design, &y)?;
    Ok((beta[0], beta[1]))
}

/// Robust quadratic fit abs_err = c·truth² + d·truth + e.
pub fn bisquare_fit_quadratic(d: &[f64], abs_err: &[f64]) -> Result<(f64, f64, f64)> {
    check_fit_inputs(d, abs_err)?;
    let n = d.len();
    let design = DMatrix::from_fn(n, 3, |i, j| match j {
        0 => d[i] * d[i],
        1 => d[i],
        _ => 1.0,
    });
    let y = DVector::from_column_slice(abs_err);
    let beta = bisquare_irls(&design, &y)?;
    Ok((beta[0], beta[1], beta[2]))
}

fn check_fit_inputs(d: &[f64], y: &[f64]) -> Result<()> {
    if d.len() != y.len() {
        return Err(Error::InvalidParameter("series length mismatch".into()));
    }
    if d.len() < 10 {
        return Err(Error::InvalidParameter(format!(
            "need >= 10 points, got {}",
            d.len()
        )));
    }
    let first = d[0];
    if d.iter().all(|&x| x == first) {
        return Err(Error::DegenerateGeometry("truth series is constant".into()));
    }
    Ok(())
}

/// Residual statistics of an estimate series against a noise model.
#[derive(Debug, Clone, Copy)]
pub struct ResidualStats {
    /// Mean of estimate − f1(truth).
    pub mean: f64,
    /// Sample standard deviation of the same residuals.
    pub std: f64,
    /// RMSE of estimate vs truth with the series aligned as given.
    pub rmse_raw: f64,
    /// RMSE after shifting the estimate back by `lag` samples.
    pub rmse_corrected: f64,
}

/// Residuals are taken against the model's bias fit; the corrected RMSE
/// realigns the estimate by `lag` samples first.
pub fn residual_stats(
    d: &[f64],
    d_hat: &[f64],
    model: &NoiseModel,
    lag: usize,
) -> Result<ResidualStats> {
    if d.len() != d_hat.len() {
        return Err(Error::InvalidParameter("series length mismatch".into()));
    }
    if d.len() < 2 {
        return Err(Error::InvalidParameter("need >= 2 points".into()));
    }
    let n = d.len();
    let resid: Vec<f64> = (0..n).map(|i| d_hat[i] - model.bias(d[i])).collect();
    let mean = resid.iter().sum::<f64>() / n as f64;
    let var = resid.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1) as f64;

    let rmse = |pairs: &mut dyn Iterator<Item = (f64, f64)>| -> f64 {
        let mut acc = 0.0;
        let mut count = 0usize;
        for (a, b) in pairs {
            acc += (a - b) * (a - b);
            count += 1;
        }
        (acc / count.max(1) as f64).sqrt()
    };
    let rmse_raw = rmse(&mut (0..n).map(|i| (d_hat[i], d[i])));
    let rmse_corrected = if lag == 0 || lag >= n {
        rmse_raw
    } else {
        rmse(&mut (0..n - lag).map(|i| (d_hat[i + lag], d[i])))
    };
    Ok(ResidualStats {
        mean,
        std: var.sqrt(),
        rmse_raw,
        rmse_corrected,
    })
}
