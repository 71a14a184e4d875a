//! Discrete-time stability toolkit for the divergence-tracking loop.
//!
//! The double integrator is linearized and discretized at a frozen
//! (Z, V_Z) point; the PI loop closes around the nonlinear observation
//! D = V_Z/Z. The closed-loop characteristic polynomial is a cubic in
//! the discrete operator σ; its roots, the loop zeros, the critical
//! gain 2Z/Δt, and the circular locus of the two-poles-one-zero
//! approximation are all computed here.

use nalgebra::Matrix3;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Frozen linearization point.
#[derive(Debug, Clone, Copy)]
pub struct LinearizationPoint {
    pub z: f64,
    pub v_z: f64,
    pub dt: f64,
}

impl LinearizationPoint {
    pub fn new(z: f64, v_z: f64, dt: f64) -> Result<Self> {
        if !(z.is_finite() && v_z.is_finite() && dt.is_finite()) {
            return Err(Error::NonFinite("linearization point"));
        }
        if z <= 0.0 || dt <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "need Z > 0 and dt > 0, got Z = {z}, dt = {dt}"
            )));
        }
        Ok(LinearizationPoint { z, v_z, dt })
    }
}

/// Critical proportional gain 2Z/Δt: the gain at which a closed-loop
/// pole reaches σ = −1.
pub fn critical_gain(point: &LinearizationPoint) -> f64 {
    2.0 * point.z / point.dt
}

/// The two finite loop zeros:
/// σ01 = (2Z + ΔtV_Z)/(2Z − ΔtV_Z), σ02 = (2κ − Δt)/(2κ + Δt).
pub fn zeros(point: &LinearizationPoint, kappa: f64) -> Result<(f64, f64)> {
    let (z, v, dt) = (point.z, point.v_z, point.dt);
    let den1 = 2.0 * z - dt * v;
    let den2 = 2.0 * kappa + dt;
    if den1.abs() < 1e-300 || den2.abs() < 1e-300 {
        return Err(Error::InvalidParameter("degenerate zero denominator".into()));
    }
    Ok(((2.0 * z + dt * v) / den1, (2.0 * kappa - dt) / den2))
}

/// Coefficients (c3, c2, c1, c0) of the closed-loop characteristic cubic
/// 𝒟(σ) = c3σ³ + c2σ² + c1σ + c0.
pub fn characteristic_coeffs(point: &LinearizationPoint, k_p: f64, kappa: f64) -> [f64; 4] {
    let (z, v, dt) = (point.z, point.v_z, point.dt);
    // Kp·Δt·[VΔt²(σ+1)² + 2Δt(κV − Z)(σ² − 1) − 4Zκ(σ−1)²] − 4κZ²(σ−1)³
    let b2 = v * dt * dt + 2.0 * dt * (kappa * v - z) - 4.0 * z * kappa;
    let b1 = 2.0 * v * dt * dt + 8.0 * z * kappa;
    let b0 = v * dt * dt - 2.0 * dt * (kappa * v - z) - 4.0 * z * kappa;
    let g = k_p * dt;
    let zz = 4.0 * kappa * z * z;
    [-zz, 3.0 * zz + g * b2, -3.0 * zz + g * b1, zz + g * b0]
}

/// Polynomial degree after trimming a cancelled leading coefficient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RootStructure {
    Cubic,
    /// Leading coefficient vanished; roots come from the reduced
    /// polynomial and the root list is padded with infinities.
    Reduced(usize),
}

/// Roots of the characteristic cubic via companion-matrix eigenvalues.
/// K_p = 0 short-circuits to the triple pole at σ = 1.
pub fn characteristic_roots(
    point: &LinearizationPoint,
    k_p: f64,
    kappa: f64,
) -> Result<([Complex64; 3], RootStructure)> {
    if k_p < 0.0 {
        return Err(Error::InvalidParameter(format!("K_p must be >= 0, got {k_p}")));
    }
    if kappa <= 0.0 {
        return Err(Error::InvalidParameter(format!("kappa must be > 0, got {kappa}")));
    }
    if k_p == 0.0 {
        let one = Complex64::new(1.0, 0.0);
        return Ok(([one, one, one], RootStructure::Cubic));
    }
    let c = characteristic_coeffs(point, k_p, kappa);
    let scale = c.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if c[0].abs() <= 1e-14 * scale {
        // reduced-degree: solve the quadratic c1σ² + c2σ + c3 (shifted)
        let (a, b, cc) = (c[1], c[2], c[3]);
        if a.abs() <= 1e-14 * scale {
            return Err(Error::DegenerateGeometry(
                "characteristic polynomial degenerated below quadratic".into(),
            ));
        }
        let disc = Complex64::new(b * b - 4.0 * a * cc, 0.0).sqrt();
        let r1 = (-b + disc.re) / (2.0 * a);
        let r2 = (-b - disc.re) / (2.0 * a);
        let inf = Complex64::new(f64::INFINITY, 0.0);
        return Ok((
            [Complex64::new(r1, disc.im / (2.0 * a)), Complex64::new(r2, -disc.im / (2.0 * a)), inf],
            RootStructure::Reduced(2),
        ));
    }
    // monic companion matrix of σ³ + (c2/c3)σ² + (c1/c3)σ + (c0/c3)
    let a2 = c[1] / c[0];
    let a1 = c[2] / c[0];
    let a0 = c[3] / c[0];
    let companion = Matrix3::new(
        0.0, 0.0, -a0, //
        1.0, 0.0, -a1, //
        0.0, 1.0, -a2,
    );
    let eig = companion.complex_eigenvalues();
    Ok((
        [
            Complex64::new(eig[0].re, eig[0].im),
            Complex64::new(eig[1].re, eig[1].im),
            Complex64::new(eig[2].re, eig[2].im),
        ],
        RootStructure::Cubic,
    ))
}

/// Open-loop plant transfer function
/// G(σ) = Δt[(2Z − ΔtV_Z)σ − (2Z + ΔtV_Z)] / (2Z²(σ−1)²).
pub fn open_loop(point: &LinearizationPoint, sigma: Complex64) -> Option<Complex64> {
    let (z, v, dt) = (point.z, point.v_z, point.dt);
    let den = 2.0 * z * z * (sigma - 1.0).powu(2);
    if den.norm() < 1e-120 {
        return None; // pole of G
    }
    let num = dt * ((2.0 * z - dt * v) * sigma - (2.0 * z + dt * v));
    Some(num / den)
}

/// Discrete PI controller F(σ) = K_p[1 + (Δt/2κ)(σ+1)/(σ−1)].
pub fn pi_transfer(k_p: f64, kappa: f64, dt: f64, sigma: Complex64) -> Option<Complex64> {
    let den = sigma - 1.0;
    if den.norm() < 1e-120 {
        return None;
    }
    Some(k_p * (1.0 + (dt / (2.0 * kappa)) * (sigma + 1.0) / den))
}

/// Closed loop H = GF/(1 + GF), built from the parts.
pub fn closed_loop(
    point: &LinearizationPoint,
    k_p: f64,
    kappa: f64,
    sigma: Complex64,
) -> Option<Complex64> {
    let g = open_loop(point, sigma)?;
    let f = pi_transfer(k_p, kappa, point.dt, sigma)?;
    let gf = g * f;
    let den = 1.0 + gf;
    if den.norm() < 1e-120 {
        return None;
    }
    Some(gf / den)
}

/// Closed loop evaluated from the explicit numerator/denominator
/// polynomials of the transfer function, for cross-checking the
/// composition path.
pub fn closed_loop_explicit(
    point: &LinearizationPoint,
    k_p: f64,
    kappa: f64,
    sigma: Complex64,
) -> Option<Complex64> {
    let (z, v, dt) = (point.z, point.v_z, point.dt);
    let num = k_p
        * dt
        * ((dt - 2.0 * kappa) + (dt + 2.0 * kappa) * sigma)
        * ((dt * v + 2.0 * z) + (dt * v - 2.0 * z) * sigma);
    let c = characteristic_coeffs(point, k_p, kappa);
    let den = ((Complex64::from(c[0]) * sigma + c[1]) * sigma + c[2]) * sigma + c[3];
    if den.norm() < 1e-120 {
        return None;
    }
    Some(num / den)
}

/// Stability summary at one (point, K_p, κ).
#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub sigma01: f64,
    pub sigma02: f64,
    pub poles: [Complex64; 3],
    pub k_cr: f64,
    pub stable: bool,
    /// 1 − max|pole|; negative when unstable.
    pub margin: f64,
}

pub fn stability_report(point: &LinearizationPoint, k_p: f64, kappa: f64) -> Result<StabilityReport> {
    let (s1, s2) = zeros(point, kappa)?;
    let (poles, _) = characteristic_roots(point, k_p, kappa)?;
    let max_abs = poles.iter().map(|p| p.norm()).fold(0.0, f64::max);
    Ok(StabilityReport {
        sigma01: s1,
        sigma02: s2,
        poles,
        k_cr: critical_gain(point),
        stable: max_abs < 1.0,
        margin: 1.0 - max_abs,
    })
}

/// One root-locus row: gain, the three branch-paired roots, and the
/// stability verdict.
#[derive(Debug, Clone)]
pub struct LocusPoint {
    pub k_p: f64,
    pub roots: [Complex64; 3],
    pub max_abs: f64,
    pub stable: bool,
}

/// Root locus over an increasing gain grid with continuity-based branch
/// pairing. Roots are computed per gain (in parallel), then paired
/// sequentially against the previous grid point.
pub fn root_locus(point: &LinearizationPoint, kappa: f64, gains: &[f64]) -> Result<Vec<LocusPoint>> {
    let point = *point;
    let raw: Vec<Result<[Complex64; 3]>> = crate::par::map_indices(gains.len(), |i| {
        characteristic_roots(&point, gains[i], kappa).map(|(r, _)| r)
    });
    let mut out: Vec<LocusPoint> = Vec::with_capacity(gains.len());
    let mut prev: Option<[Complex64; 3]> = None;
    for (i, r) in raw.into_iter().enumerate() {
        let mut roots = r?;
        if let Some(p) = prev {
            roots = pair_to_previous(&p, &roots);
        }
        let max_abs = roots.iter().map(|c| c.norm()).fold(0.0, f64::max);
        out.push(LocusPoint {
            k_p: gains[i],
            roots,
            max_abs,
            stable: max_abs < 1.0,
        });
        prev = Some(roots);
    }
    Ok(out)
}

/// Minimum total-displacement assignment over the 6 permutations.
fn pair_to_previous(prev: &[Complex64; 3], cur: &[Complex64; 3]) -> [Complex64; 3] {
    const PERMS: [[usize; 3]; 6] = [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ];
    let mut best = PERMS[0];
    let mut best_cost = f64::INFINITY;
    for perm in PERMS {
        let cost: f64 = (0..3).map(|i| (cur[perm[i]] - prev[i]).norm()).sum();
        if cost < best_cost {
            best_cost = cost;
            best = perm;
        }
    }
    [cur[best[0]], cur[best[1]], cur[best[2]]]
}

/// Root-locus CSV (columns K_p, re/im of the three branches, max |σ|,
/// stability flag).
pub fn locus_csv(locus: &[LocusPoint]) -> String {
    let mut s = String::from("K_p,re1,im1,re2,im2,re3,im3,max_abs,stable\n");
    for p in locus {
        s.push_str(&format!(
            "{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9},{}\n",
            p.k_p,
            p.roots[0].re,
            p.roots[0].im,
            p.roots[1].re,
            p.roots[1].im,
            p.roots[2].re,
            p.roots[2].im,
            p.max_abs,
            u8::from(p.stable)
        ));
    }
    s
}

/// Roots of the two-poles-one-zero approximation
/// (σ−1)² + K(σ − σ02) = 0 used for the circular-locus result.
pub fn approx_branch_roots(sigma02: f64, k: f64) -> (Complex64, Complex64) {
    // σ² + (K − 2)σ + (1 − K σ02) = 0
    let b = k - 2.0;
    let c = 1.0 - k * sigma02;
    let disc = Complex64::new(b * b - 4.0 * c, 0.0).sqrt();
    let r1 = (Complex64::from(-b) + disc) / 2.0;
    let r2 = (Complex64::from(-b) - disc) / 2.0;
    (r1, r2)
}

/// Gain range (0, K) over which the approximate branch roots are a
/// complex pair.
pub fn approx_complex_gain_limit(sigma02: f64) -> f64 {
    4.0 * (1.0 - sigma02)
}

/// Circle-locus check. For the approximation, complex-pair roots must
/// sit on the circle centered (σ02, 0) with radius 1 − σ02; for the full
/// cubic the deviation is reported without assertion.
#[derive(Debug, Clone, Copy)]
pub struct CircleCheck {
    /// Worst distance-from-circle over the approximate branch.
    pub approx_max_deviation: f64,
    /// Worst deviation of the full cubic's complex pair, for reporting.
    pub full_max_deviation: f64,
}

pub fn circle_locus_check(
    point: &LinearizationPoint,
    kappa: f64,
    gains: &[f64],
) -> Result<CircleCheck> {
    let (_, sigma02) = zeros(point, kappa)?;
    let center = Complex64::new(sigma02, 0.0);
    let radius = 1.0 - sigma02;
    let k_limit = approx_complex_gain_limit(sigma02);

    let mut approx_dev = 0.0f64;
    let grid = 256;
    for i in 1..grid {
        let k = k_limit * i as f64 / grid as f64;
        let (r1, r2) = approx_branch_roots(sigma02, k);
        if r1.im.abs() > 1e-12 {
            for r in [r1, r2] {
                approx_dev = approx_dev.max(((r - center).norm() - radius).abs());
            }
        }
    }

    let mut full_dev = 0.0f64;
    for &k_p in gains {
        let (roots, _) = characteristic_roots(point, k_p, kappa)?;
        for r in roots {
            if r.im.abs() > 1e-9 && r.re.is_finite() {
                full_dev = full_dev.max(((r - center).norm() - radius).abs());
            }
        }
    }
    Ok(CircleCheck {
        approx_max_deviation: approx_dev,
        full_max_deviation: full_dev,
    })
}

/// Smallest gain in `[lo, hi]` at which max|pole| reaches 1, located by
/// scan plus bisection. Returns `None` when the range stays stable.
pub fn instability_threshold(
    point: &LinearizationPoint,
    kappa: f64,
    lo: f64,
    hi: f64,
    scan_steps: usize,
) -> Result<Option<f64>> {
    let max_abs = |k: f64| -> Result<f64> {
        let (roots, _) = characteristic_roots(point, k, kappa)?;
        Ok(roots.iter().map(|r| r.norm()).fold(0.0, f64::max))
    };
    let mut prev_k = lo;
    let mut prev_unstable = max_abs(lo)? > 1.0 + 1e-12;
    if prev_unstable {
        return Ok(Some(lo));
    }
    let mut bracket = None;
    for i in 1..=scan_steps {
        let k = lo + (hi - lo) * i as f64 / scan_steps as f64;
        let unstable = max_abs(k)? > 1.0 + 1e-12;
        if unstable && !prev_unstable {
            bracket = Some((prev_k, k));
            break;
        }
        prev_k = k;
        prev_unstable = unstable;
    }
    let Some((mut a, mut b)) = bracket else {
        return Ok(None);
    };
    for _ in 0..100 {
        let mid = 0.5 * (a + b);
        if max_abs(mid)? > 1.0 + 1e-12 {
            b = mid;
        } else {
            a = mid;
        }
    }
    Ok(Some(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn pt(z: f64, v: f64, dt: f64) -> LinearizationPoint {
        LinearizationPoint::new(z, v, dt).unwrap()
    }

    #[test]
    fn critical_gain_values() {
        assert_relative_eq!(critical_gain(&pt(100.0, -0.5, 0.03)), 6_666.666_666_666_667, max_relative = 1e-12);
        assert_relative_eq!(critical_gain(&pt(10.0, -0.5, 0.03)), 666.666_666_666_666_7, max_relative = 1e-12);
        assert_relative_eq!(critical_gain(&pt(1.0, 0.0, 0.05)), 40.0, max_relative = 1e-15);
    }

    #[test]
    fn zero_values() {
        let (s1, _) = zeros(&pt(1.0, -0.5, 0.05), 6.0).unwrap();
        assert_relative_eq!(s1, 1.975 / 2.025, max_relative = 1e-12);
        let (_, s2) = zeros(&pt(1.0, -0.5, 0.05), 0.025).unwrap();
        assert_abs_diff_eq!(s2, 0.0, epsilon = 1e-15);
        let (s1, _) = zeros(&pt(1.0, 0.0, 0.05), 6.0).unwrap();
        assert_eq!(s1, 1.0);
        // descending flight pins sigma01 into (0, 1)
        for (z, v, dt) in [(0.5, -0.3, 0.05), (3.0, -1.0, 0.03), (10.0, -0.1, 0.05)] {
            let (s1, _) = zeros(&pt(z, v, dt), 6.0).unwrap();
            assert!(s1 > 0.0 && s1 < 1.0);
        }
    }

    #[test]
    fn triple_pole_at_zero_gain() {
        let (roots, _) = characteristic_roots(&pt(5.0, -0.5, 0.05), 0.0, 6.0).unwrap();
        for r in roots {
            assert_eq!(r, Complex64::new(1.0, 0.0));
        }
    }

    #[test]
    fn minus_one_root_at_critical_gain() {
        // D(-1) = 0 exactly when K_p = 2Z/dt, independent of V and kappa
        for (z, v, dt, kappa) in [
            (100.0, -0.5, 0.03, 1e6),
            (10.0, -0.5, 0.03, 1e6),
            (1.0, -1.0, 0.05, 3.0),
            (7.0, 0.0, 0.02, 0.5),
        ] {
            let point = pt(z, v, dt);
            let k_cr = critical_gain(&point);
            let c = characteristic_coeffs(&point, k_cr, kappa);
            let at_minus1 = -c[0] + c[1] - c[2] + c[3];
            let scale = c.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            assert!(at_minus1.abs() <= 1e-12 * scale, "D(-1) = {at_minus1}");
            let (roots, _) = characteristic_roots(&point, k_cr, kappa).unwrap();
            let nearest = roots.iter().map(|r| (r + 1.0).norm()).fold(f64::INFINITY, f64::min);
            assert!(nearest < 1e-6, "nearest to -1: {nearest}");
        }
    }

    #[test]
    fn stability_brackets_critical_gain() {
        let point = pt(10.0, -0.5, 0.03);
        let k_cr = critical_gain(&point);
        let kappa = 100.0 * point.dt;
        let (roots, _) = characteristic_roots(&point, 0.95 * k_cr, kappa).unwrap();
        assert!(roots.iter().all(|r| r.norm() < 1.0));
        let (roots, _) = characteristic_roots(&point, 1.05 * k_cr, kappa).unwrap();
        assert!(roots.iter().any(|r| r.norm() > 1.0));
    }

    #[test]
    fn open_loop_at_zero() {
        let point = pt(2.0, -0.7, 0.05);
        let g = open_loop(&point, Complex64::new(0.0, 0.0)).unwrap();
        let expected = point.dt * (-(2.0 * point.z + point.dt * point.v_z)) / (2.0 * point.z * point.z);
        assert_relative_eq!(g.re, expected, max_relative = 1e-12);
        assert_abs_diff_eq!(g.im, 0.0, epsilon = 1e-15);
        assert!(open_loop(&point, Complex64::new(1.0, 0.0)).is_none());
    }

    #[test]
    fn closed_loop_composition_matches_explicit() {
        let point = pt(3.0, -0.6, 0.04);
        let (k_p, kappa) = (5.0, 2.0);
        for i in 0..100 {
            let theta = i as f64 * 0.0628;
            let sigma = Complex64::new(1.4 * theta.cos(), 1.4 * theta.sin());
            let a = closed_loop(&point, k_p, kappa, sigma);
            let b = closed_loop_explicit(&point, k_p, kappa, sigma);
            if let (Some(a), Some(b)) = (a, b) {
                assert!(
                    (a - b).norm() <= 1e-10 * b.norm().max(1.0),
                    "mismatch at sigma = {sigma}: {a} vs {b}"
                );
            }
        }
    }

    #[test]
    fn closed_loop_zero_gain_vanishes() {
        let point = pt(3.0, -0.6, 0.04);
        let h = closed_loop(&point, 0.0, 2.0, Complex64::new(0.3, 0.4)).unwrap();
        assert_abs_diff_eq!(h.norm(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn transfer_zeros_match_formula() {
        // H's numerator vanishes at sigma01 and sigma02
        let point = pt(2.5, -0.8, 0.05);
        let (k_p, kappa) = (3.0, 0.7);
        let (s1, s2) = zeros(&point, kappa).unwrap();
        for s in [s1, s2] {
            let h = closed_loop(&point, k_p, kappa, Complex64::new(s, 0.0)).unwrap();
            assert!(h.norm() < 1e-10, "H({s}) = {h}");
        }
    }

    #[test]
    fn locus_heights_share_geometry() {
        // the 100 m and 10 m loci coincide as point sets once gains
        // scale by 10
        let kappa = 1e6;
        let p100 = pt(100.0, -0.5, 0.03);
        let p10 = pt(10.0, -0.5, 0.03);
        let gains100: Vec<f64> = (1..=60).map(|i| 6666.67 * i as f64 / 50.0).collect();
        let gains10: Vec<f64> = gains100.iter().map(|g| g / 10.0).collect();
        let l100 = root_locus(&p100, kappa, &gains100).unwrap();
        let l10 = root_locus(&p10, kappa, &gains10).unwrap();
        for (a, b) in l100.iter().zip(&l10) {
            for (ra, rb) in a.roots.iter().zip(&b.roots) {
                // V_Z != 0 breaks exactness mildly via sigma01; tolerance
                // reflects the different V/Z ratios at the two heights
                assert!((ra - rb).norm() < 2e-3, "{ra} vs {rb}");
            }
        }
        assert_relative_eq!(critical_gain(&p100) / critical_gain(&p10), 10.0, max_relative = 1e-12);
    }

    #[test]
    fn kappa_at_half_dt_zeroes_sigma02_and_unit_circle() {
        let dt = 0.03;
        let point = pt(10.0, -0.5, dt);
        let (_, s2) = zeros(&point, dt / 2.0).unwrap();
        assert_abs_diff_eq!(s2, 0.0, epsilon = 1e-15);
        // approximate-branch complex roots on the unit circle when sigma02 = 0
        let limit = approx_complex_gain_limit(0.0);
        for i in 1..64 {
            let k = limit * i as f64 / 64.0;
            let (r1, _) = approx_branch_roots(0.0, k);
            if r1.im.abs() > 1e-9 {
                assert_abs_diff_eq!(r1.norm(), 1.0, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn kappa_below_half_dt_destabilizes() {
        let dt = 0.03;
        let point = pt(10.0, -0.5, dt);
        let kappa = 0.01; // < dt/2 = 0.015
        let k_cr = critical_gain(&point);
        let gains: Vec<f64> = (1..=300).map(|i| k_cr * i as f64 / 300.0).collect();
        let locus = root_locus(&point, kappa, &gains).unwrap();
        assert!(
            locus.iter().any(|p| p.max_abs > 1.0 + 1e-9),
            "expected instability below K_cr for kappa < dt/2"
        );
    }

    #[test]
    fn circle_check_values() {
        // sigma02 = 0.5: center 0.5, radius 0.5; approximate branch exact
        let dt = 0.03;
        let kappa = (dt / 2.0) * 3.0; // sigma02 = (2k-dt)/(2k+dt) = 0.5
        let point = pt(10.0, -0.5, dt);
        let (_, s2) = zeros(&point, kappa).unwrap();
        assert_abs_diff_eq!(s2, 0.5, epsilon = 1e-12);
        let gains: Vec<f64> = (1..=50).map(|i| critical_gain(&point) * i as f64 / 50.0).collect();
        let check = circle_locus_check(&point, kappa, &gains).unwrap();
        assert!(check.approx_max_deviation < 1e-9, "approx deviation {}", check.approx_max_deviation);
        assert!(check.full_max_deviation.is_finite());
    }

    #[test]
    fn pole_zero_cancellation_at_extreme_gain() {
        let point = pt(4.0, -0.9, 0.05);
        let kappa = 2.0;
        let (s1, s2) = zeros(&point, kappa).unwrap();
        let (roots, _) = characteristic_roots(&point, 1e6 * critical_gain(&point), kappa).unwrap();
        let near = |target: f64| {
            roots
                .iter()
                .map(|r| (r - Complex64::from(target)).norm())
                .fold(f64::INFINITY, f64::min)
        };
        assert!(near(s1) < 1e-3, "closest to sigma01: {}", near(s1));
        assert!(near(s2) < 1e-3, "closest to sigma02: {}", near(s2));
    }

    #[test]
    fn threshold_finder_matches_critical_gain() {
        let point = pt(1.0, -0.5, 0.05);
        let kappa = 100.0 * point.dt;
        let k_cr = critical_gain(&point);
        let thr = instability_threshold(&point, kappa, 0.5 * k_cr, 1.5 * k_cr, 200)
            .unwrap()
            .expect("threshold in range");
        assert!(thr / k_cr > 0.99 && thr / k_cr < 1.01, "ratio {}", thr / k_cr);
    }

    #[test]
    fn locus_csv_shape() {
        let point = pt(1.0, -0.5, 0.05);
        let locus = root_locus(&point, 6.0, &[0.1, 1.0, 10.0]).unwrap();
        let csv = locus_csv(&locus);
        assert!(csv.starts_with("K_p,re1,im1,re2,im2,re3,im3,max_abs,stable\n"));
        assert_eq!(csv.lines().count(), 4);
    }
}
