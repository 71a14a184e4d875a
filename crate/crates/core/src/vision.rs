//! Synthetic downward-camera feature tracks and the two divergence
//! estimators: the size (line-length) estimator and the flow-field
//! least-squares fit with RANSAC.
//!
//! Image coordinates follow the pinhole model x = f·X/Z with height-up
//! state convention (Z > 0, V_Z < 0 while descending), so the flow field
//! expands during descent and both estimators return negative values
//! there, matching D = V_Z/Z.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};

/// Downward pinhole camera.
#[derive(Debug, Clone, Copy)]
pub struct CameraModel {
    /// Focal length in pixels.
    pub f: f64,
    /// Ground-plane half extent visible per metre of height (m/m); the
    /// image half width is `f * fov_half_width` pixels.
    pub fov_half_width: f64,
    /// Frame interval (s).
    pub dt: f64,
}

impl CameraModel {
    pub fn new(f: f64, fov_half_width: f64, dt: f64) -> Result<Self> {
        if !(f.is_finite() && fov_half_width.is_finite() && dt.is_finite()) {
            return Err(Error::NonFinite("camera model"));
        }
        if f <= 0.0 || dt <= 0.0 || fov_half_width <= 0.0 {
            return Err(Error::InvalidParameter(
                "camera needs f > 0, fov > 0, dt > 0".into(),
            ));
        }
        Ok(CameraModel { f, fov_half_width, dt })
    }

    /// Image half-extent in pixels.
    pub fn image_bound(&self) -> f64 {
        self.f * self.fov_half_width
    }
}

/// One feature observed in two consecutive frames (pixels).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureTrack {
    pub x_prev: f64,
    pub y_prev: f64,
    pub x_cur: f64,
    pub y_cur: f64,
}

impl FeatureTrack {
    pub fn flow(&self) -> (f64, f64) {
        (self.x_cur - self.x_prev, self.y_cur - self.y_prev)
    }
}

/// Result of the flow-field least-squares fit. With the first-order
/// model the quadratic entries stay zero.
#[derive(Debug, Clone)]
pub struct FlowFieldFit {
    /// u = p_u · [1, x, y, x², xy]
    pub p_u: [f64; 5],
    /// v = p_v · [1, x, y, y², xy]
    pub p_v: [f64; 5],
    pub inlier_count: usize,
}

/// Options for [`flow_field_divergence`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    /// Fit the full 5-parameter model instead of the linear one.
    pub full_model: bool,
    pub ransac_iterations: usize,
    /// Flow residual (px) below which a track counts as an inlier.
    pub inlier_threshold: f64,
    /// Minimum inlier fraction for a usable consensus.
    pub min_inlier_fraction: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            full_model: false,
            ransac_iterations: 50,
            inlier_threshold: 0.5,
            min_inlier_fraction: 0.5,
        }
    }
}

/// Project ground points (metres) to image coordinates at height Z,
/// dropping points outside the field of view.
pub fn project_features(
    ground_points: &[(f64, f64)],
    z: f64,
    cam: &CameraModel,
) -> Result<Vec<(f64, f64)>> {
    if !z.is_finite() {
        return Err(Error::NonFinite("height"));
    }
    if z <= 0.0 {
        return Err(Error::InvalidParameter(format!("projection needs Z > 0, got {z}")));
    }
    let bound = cam.image_bound();
    Ok(ground_points
        .iter()
        .filter_map(|&(gx, gy)| {
            let x = cam.f * gx / z;
            let y = cam.f * gy / z;
            (x.abs() <= bound && y.abs() <= bound).then_some((x, y))
        })
        .collect())
}

/// Mean size divergence over sampled feature pairs:
/// D_s = (1/dt) (l_prev − l_cur) / l_prev per pair.
///
/// At most `max_pairs` random pairs are evaluated (all pairs when the
/// count fits); sampling uses the supplied RNG.
pub fn size_divergence<R: Rng + ?Sized>(
    tracks: &[FeatureTrack],
    dt: f64,
    max_pairs: usize,
    rng: &mut R,
) -> Result<f64> {
    if tracks.len() < 2 {
        return Err(Error::Estimation(format!(
            "size divergence needs >= 2 tracks, got {}",
            tracks.len()
        )));
    }
    if dt <= 0.0 {
        return Err(Error::InvalidParameter(format!("dt must be > 0, got {dt}")));
    }
    let n = tracks.len();
    let total_pairs = n * (n - 1) / 2;

    let mut sum = 0.0;
    let mut used = 0usize;
    let mut eval = |a: &FeatureTrack, b: &FeatureTrack| {
        let l_prev = ((a.x_prev - b.x_prev).powi(2) + (a.y_prev - b.y_prev).powi(2)).sqrt();
        if l_prev == 0.0 {
            return; // degenerate pair
        }
        let l_cur = ((a.x_cur - b.x_cur).powi(2) + (a.y_cur - b.y_cur).powi(2)).sqrt();
        sum += (l_prev - l_cur) / l_prev / dt;
        used += 1;
    };

    if total_pairs <= max_pairs {
        for i in 0..n {
            for j in (i + 1)..n {
                eval(&tracks[i], &tracks[j]);
            }
        }
    } else {
        for _ in 0..max_pairs {
            let i = rng.gen_range(0..n);
            let mut j = rng.gen_range(0..n - 1);
            if j >= i {
                j += 1;
            }
            eval(&tracks[i], &tracks[j]);
        }
    }

    if used == 0 {
        return Err(Error::Estimation("all feature pairs degenerate".into()));
    }
    Ok(sum / used as f64)
}

/// Longuet-Higgins/Prazdny rotational flow at normalized coordinates,
/// for de-rotation with body rates (p, q, r) about camera x, y, z.
fn rotational_flow(xn: f64, yn: f64, rates: (f64, f64, f64)) -> (f64, f64) {
    let (p, q, r) = rates;
    let u = p * xn * yn - q * (1.0 + xn * xn) + r * yn;
    let v = p * (1.0 + yn * yn) - q * xn * yn - r * xn;
    (u, v)
}

/// Flow-field divergence: de-rotate, RANSAC-fit the flow field, return
/// the normalized divergence −(p_u2 + p_v3)/(2·dt) and the winning fit.
pub fn flow_field_divergence<R: Rng + ?Sized>(
    tracks: &[FeatureTrack],
    dt: f64,
    derotation_rates: (f64, f64, f64),
    options: &FitOptions,
    focal: f64,
    rng: &mut R,
) -> Result<(f64, FlowFieldFit)> {
    let sample_size = if options.full_model { 5 } else { 3 };
    if tracks.len() < sample_size {
        return Err(Error::Estimation(format!(
            "flow-field fit needs >= {sample_size} tracks, got {}",
            tracks.len()
        )));
    }
    if dt <= 0.0 {
        return Err(Error::InvalidParameter(format!("dt must be > 0, got {dt}")));
    }

    // de-rotated flow at the previous-frame feature positions (the
    // tracker measures flow where it found the feature)
    let pts: Vec<(f64, f64, f64, f64)> = tracks
        .iter()
        .map(|t| {
            let (u, v) = t.flow();
            let xn = t.x_prev / focal;
            let yn = t.y_prev / focal;
            let (ur, vr) = rotational_flow(xn, yn, derotation_rates);
            (t.x_prev, t.y_prev, u - ur * focal * dt, v - vr * focal * dt)
        })
        .collect();

    let n = pts.len();
    let min_inliers = ((n as f64) * options.min_inlier_fraction).ceil() as usize;
    let min_inliers = min_inliers.max(sample_size);

    let mut indices: Vec<usize> = (0..n).collect();
    let mut best_inliers: Vec<usize> = Vec::new();
    for _ in 0..options.ransac_iterations {
        indices.shuffle(rng);
        let sample = &indices[..sample_size];
        let fit = match solve_fit(&pts, sample, options.full_model) {
            Ok(f) => f,
            Err(_) => continue, // collinear sample
        };
        let inliers: Vec<usize> = (0..n)
            .filter(|&i| residual(&pts[i], &fit) <= options.inlier_threshold)
            .collect();
        if inliers.len() > best_inliers.len() {
            best_inliers = inliers;
            if best_inliers.len() == n {
                break;
            }
        }
    }

    if best_inliers.len() < min_inliers {
        return Err(Error::InsufficientInliers {
            found: best_inliers.len(),
            needed: min_inliers,
        });
    }

    let fit = solve_fit(&pts, &best_inliers, options.full_model)?;
    let raw = fit.p_u[1] + fit.p_v[2]; // du/dx + dv/dy per frame
    let divergence = -raw / (2.0 * dt);
    Ok((
        divergence,
        FlowFieldFit {
            inlier_count: best_inliers.len(),
            ..fit
        },
    ))
}

fn residual(pt: &(f64, f64, f64, f64), fit: &FlowFieldFit) -> f64 {
    let (x, y, u, v) = *pt;
    let up = fit.p_u[0] + fit.p_u[1] * x + fit.p_u[2] * y + fit.p_u[3] * x * x + fit.p_u[4] * x * y;
    let vp = fit.p_v[0] + fit.p_v[1] * x + fit.p_v[2] * y + fit.p_v[3] * y * y + fit.p_v[4] * x * y;
    ((u - up).powi(2) + (v - vp).powi(2)).sqrt()
}

fn solve_fit(
    pts: &[(f64, f64, f64, f64)],
    idx: &[usize],
    full: bool,
) -> Result<FlowFieldFit> {
    let cols = if full { 5 } else { 3 };
    let rows = idx.len();
    let mut a_u = DMatrix::zeros(rows, cols);
    let mut a_v = DMatrix::zeros(rows, cols);
    let mut bu = DVector::zeros(rows);
    let mut bv = DVector::zeros(rows);
    for (r, &i) in idx.iter().enumerate() {
        let (x, y, u, v) = pts[i];
        a_u[(r, 0)] = 1.0;
        a_u[(r, 1)] = x;
        a_u[(r, 2)] = y;
        a_v[(r, 0)] = 1.0;
        a_v[(r, 1)] = x;
        a_v[(r, 2)] = y;
        if full {
            a_u[(r, 3)] = x * x;
            a_u[(r, 4)] = x * y;
            a_v[(r, 3)] = y * y;
            a_v[(r, 4)] = x * y;
        }
        bu[r] = u;
        bv[r] = v;
    }
    let pu = lstsq(&a_u, &bu)?;
    let pv = lstsq(&a_v, &bv)?;
    let mut p_u = [0.0; 5];
    let mut p_v = [0.0; 5];
    for c in 0..cols {
        p_u[c] = pu[c];
        p_v[c] = pv[c];
    }
    Ok(FlowFieldFit { p_u, p_v, inlier_count: idx.len() })
}

fn lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    let tol = 1e-9 * svd.singular_values.max();
    if svd.singular_values.iter().any(|&s| s <= tol) {
        return Err(Error::DegenerateGeometry(
            "rank-deficient flow-field design matrix".into(),
        ));
    }
    svd.solve(b, tol)
        .map_err(|e| Error::DegenerateGeometry(e.to_string()))
}

/// Ground feature field for the synthetic camera: uniformly seeded
/// points, re-seeded inside the current footprint when too few remain
/// visible (stands in for tracker re-detection).
#[derive(Debug, Clone)]
pub struct FeatureField {
    points: Vec<(f64, f64)>,
    min_visible: usize,
    target_count: usize,
}

impl FeatureField {
    pub fn new<R: Rng + ?Sized>(target_count: usize, min_visible: usize, extent: f64, rng: &mut R) -> Self {
        let points = (0..target_count)
            .map(|_| (rng.gen_range(-extent..extent), rng.gen_range(-extent..extent)))
            .collect();
        FeatureField { points, min_visible, target_count }
    }

    /// Tracks between two heights for all points visible in both frames;
    /// re-seeds the field if visibility dropped too low.
    pub fn tracks<R: Rng + ?Sized>(
        &mut self,
        z_prev: f64,
        z_cur: f64,
        cam: &CameraModel,
        pixel_noise: f64,
        rng: &mut R,
    ) -> Result<Vec<FeatureTrack>> {
        let visible = |points: &[(f64, f64)]| -> Vec<usize> {
            let half = cam.fov_half_width;
            points
                .iter()
                .enumerate()
                .filter_map(|(i, &(x, y))| {
                    let lim_prev = half * z_prev;
                    let lim_cur = half * z_cur;
                    (x.abs() <= lim_prev.min(lim_cur) && y.abs() <= lim_prev.min(lim_cur))
                        .then_some(i)
                })
                .collect()
        };
        let mut vis = visible(&self.points);
        if vis.len() < self.min_visible {
            let extent = cam.fov_half_width * z_cur.min(z_prev);
            self.points = (0..self.target_count)
                .map(|_| (rng.gen_range(-extent..extent), rng.gen_range(-extent..extent)))
                .collect();
            vis = visible(&self.points);
        }
        let mut tracks = Vec::with_capacity(vis.len());
        for &i in &vis {
            let (gx, gy) = self.points[i];
            let noise = |rng: &mut R| {
                if pixel_noise > 0.0 {
                    use rand_distr::Distribution;
                    rand_distr::Normal::new(0.0, pixel_noise).unwrap().sample(rng)
                } else {
                    0.0
                }
            };
            tracks.push(FeatureTrack {
                x_prev: cam.f * gx / z_prev + noise(rng),
                y_prev: cam.f * gy / z_prev + noise(rng),
                x_cur: cam.f * gx / z_cur + noise(rng),
                y_cur: cam.f * gy / z_cur + noise(rng),
            });
        }
        if tracks.len() < 2 {
            return Err(Error::Estimation("feature field collapsed".into()));
        }
        Ok(tracks)
    }
}

/// Exact pinhole tracks for a vertical move from `z_prev` to `z_cur`.
pub fn exact_tracks(ground_points: &[(f64, f64)], z_prev: f64, z_cur: f64, f: f64) -> Vec<FeatureTrack> {
    ground_points
        .iter()
        .map(|&(gx, gy)| FeatureTrack {
            x_prev: f * gx / z_prev,
            y_prev: f * gy / z_prev,
            x_cur: f * gx / z_cur,
            y_cur: f * gy / z_cur,
        })
        .collect()
}
