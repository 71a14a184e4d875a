//! Vertical plant model: a double integrator stepped with the exact
//! zero-order-hold map, plus the closed-form constant-divergence
//! reference trajectories.

use crate::error::{Error, Result};

/// State of the vertical axis at one sample instant.
///
/// Heights are in metres above ground, velocities in m/s with negative
/// values descending, accelerations in m/s².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerticalState {
    /// Time since scenario start (s).
    pub t: f64,
    /// Height above ground (m). Positive while airborne.
    pub z: f64,
    /// Vertical velocity (m/s), negative while descending.
    pub v_z: f64,
    /// Commanded vertical acceleration applied over the last step (m/s²).
    pub mu: f64,
    /// Set once the continuous trajectory crosses Z = 0 inside a step.
    pub touched_down: bool,
    /// |V_Z| at the touchdown instant, if touched down.
    pub touchdown_speed: Option<f64>,
}

impl VerticalState {
    pub fn new(z: f64, v_z: f64) -> Self {
        VerticalState {
            t: 0.0,
            z,
            v_z,
            mu: 0.0,
            touched_down: false,
            touchdown_speed: None,
        }
    }

    pub fn airborne(&self) -> bool {
        !self.touched_down
    }
}

/// Exact ZOH update of the double integrator over one sample period.
///
/// The commanded acceleration is held constant over `[t, t + dt)`, so the
/// update is the exact flow map, not an Euler approximation. If the
/// continuous quadratic `z(τ)` crosses zero inside the step, the state
/// freezes at the touchdown instant with `z = 0` and the crossing speed
/// recorded.
pub fn step(state: &VerticalState, mu: f64, dt: f64) -> Result<VerticalState> {
    if !mu.is_finite() {
        return Err(Error::NonFinite("mu"));
    }
    if !dt.is_finite() || dt <= 0.0 {
        return Err(Error::InvalidParameter(format!("dt must be > 0, got {dt}")));
    }
    if !state.z.is_finite() || !state.v_z.is_finite() {
        return Err(Error::NonFinite("state"));
    }
    if state.touched_down {
        return Err(Error::InvalidParameter("step on touched-down state".into()));
    }

    if let Some(tau) = touchdown_time(state.z, state.v_z, mu, dt) {
        let v_at = state.v_z + mu * tau;
        return Ok(VerticalState {
            t: state.t + tau,
            z: 0.0,
            v_z: v_at,
            mu,
            touched_down: true,
            touchdown_speed: Some(v_at.abs()),
        });
    }

    Ok(VerticalState {
        t: state.t + dt,
        z: state.z + state.v_z * dt + 0.5 * mu * dt * dt,
        v_z: state.v_z + mu * dt,
        mu,
        touched_down: false,
        touchdown_speed: None,
    })
}

/// Earliest τ in (0, dt] with z + v·τ + μ·τ²/2 ≤ 0, if any.
fn touchdown_time(z: f64, v: f64, mu: f64, dt: f64) -> Option<f64> {
    let zf = z + v * dt + 0.5 * mu * dt * dt;
    if mu.abs() < 1e-300 {
        if zf > 0.0 {
            return None;
        }
        // linear crossing
        return if v < 0.0 { Some((-z / v).min(dt)) } else { Some(dt) };
    }
    // roots of (mu/2) τ² + v τ + z = 0
    let disc = v * v - 2.0 * mu * z;
    let mut first: Option<f64> = None;
    if disc >= 0.0 {
        let sq = disc.sqrt();
        for r in [(-v - sq) / mu, (-v + sq) / mu] {
            if r > 0.0 && r <= dt {
                first = Some(first.map_or(r, |p: f64| p.min(r)));
            }
        }
    }
    if first.is_none() && zf <= 0.0 {
        // numerical edge: endpoint at or below zero without a bracketed root
        first = Some(dt);
    }
    first
}

/// Ground-truth flow divergence D = V_Z / Z. Defined only while airborne.
pub fn true_divergence(state: &VerticalState) -> Result<f64> {
    if state.z <= 0.0 {
        return Err(Error::UndefinedDivergence { z: state.z });
    }
    Ok(state.v_z / state.z)
}

/// Closed-form constant-divergence descent: Z(t) = Z0·e^(−kt).
///
/// Holding D = −k with k > 0 decays height, speed, and acceleration
/// exponentially; k ≤ 0 never converges and is rejected.
#[derive(Debug, Clone, Copy)]
pub struct ReferenceTrajectory {
    pub z0: f64,
    pub k: f64,
}

impl ReferenceTrajectory {
    pub fn new(z0: f64, k: f64) -> Result<Self> {
        if !(z0.is_finite() && k.is_finite()) {
            return Err(Error::NonFinite("reference trajectory"));
        }
        if z0 <= 0.0 {
            return Err(Error::InvalidParameter(format!("z0 must be > 0, got {z0}")));
        }
        if k <= 0.0 {
            return Err(Error::NonConvergentReference { k });
        }
        Ok(ReferenceTrajectory { z0, k })
    }

    /// (Z, V_Z, A_Z) at time t ≥ 0.
    pub fn at(&self, t: f64) -> (f64, f64, f64) {
        let z = self.z0 * (-self.k * t).exp();
        (z, -self.k * z, self.k * self.k * z)
    }
}

/// Additive disturbance acceleration, zero by default. Used to emulate
/// outdoor gusts; the seeded variant is sampled by the harness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Disturbance {
    None,
    Constant(f64),
    /// amplitude (m/s²), frequency (Hz)
    Sinusoid { amplitude: f64, frequency: f64 },
    /// zero-mean Gaussian, std in m/s², drawn per tick from the run RNG
    Gusts { std: f64 },
}

impl Disturbance {
    /// Deterministic part of the disturbance at time t. `Gusts` is handled
    /// by the harness because it needs the run RNG.
    pub fn deterministic(&self, t: f64) -> f64 {
        match *self {
            Disturbance::None | Disturbance::Gusts { .. } => 0.0,
            Disturbance::Constant(a) => a,
            Disturbance::Sinusoid { amplitude, frequency } => {
                amplitude * (2.0 * std::f64::consts::PI * frequency * t).sin()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    #[test]
    fn zero_dynamics_holds_state() {
        let s = VerticalState::new(1.0, 0.0);
        let n = step(&s, 0.0, 0.05).unwrap();
        assert_eq!(n.z, 1.0);
        assert_eq!(n.v_z, 0.0);
    }

    #[test]
    fn ballistic_step() {
        let s = VerticalState::new(1.0, -1.0);
        let n = step(&s, 0.0, 0.05).unwrap();
        assert_abs_diff_eq!(n.z, 0.95, epsilon = 1e-15);
        assert_eq!(n.v_z, -1.0);
    }

    #[test]
    fn boundary_crossing_touches_down() {
        let s = VerticalState::new(0.02, -1.0, );
        let n = step(&s, 0.0, 0.05).unwrap();
        assert!(n.touched_down);
        assert_eq!(n.z, 0.0);
        assert_abs_diff_eq!(n.touchdown_speed.unwrap(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(n.t, 0.02, epsilon = 1e-12);
    }

    #[test]
    fn touchdown_inside_step_with_acceleration() {
        // decelerating but still crossing
        let s = VerticalState::new(0.01, -1.0);
        let n = step(&s, 2.0, 0.05).unwrap();
        assert!(n.touched_down);
        let tau = n.t;
        assert!(tau > 0.0 && tau < 0.05);
        assert_abs_diff_eq!(0.01 - tau + tau * tau, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_non_finite() {
        let s = VerticalState::new(1.0, 0.0);
        assert!(step(&s, f64::NAN, 0.05).is_err());
        assert!(step(&s, 0.0, 0.0).is_err());
    }

    #[test]
    fn divergence_examples() {
        assert_abs_diff_eq!(
            true_divergence(&VerticalState::new(2.0, -0.6)).unwrap(),
            -0.3,
            epsilon = 1e-15
        );
        assert_eq!(true_divergence(&VerticalState::new(5.0, 0.0)).unwrap(), 0.0);
        assert_abs_diff_eq!(
            true_divergence(&VerticalState::new(0.5, 0.1)).unwrap(),
            0.2,
            epsilon = 1e-15
        );
        assert!(true_divergence(&VerticalState::new(0.0, -1.0)).is_err());
    }

    #[test]
    fn reference_evaluations() {
        let r = ReferenceTrajectory::new(1.0, 0.3).unwrap();
        let (z, v, a) = r.at(0.0);
        assert_eq!(z, 1.0);
        assert_abs_diff_eq!(v, -0.3, epsilon = 1e-15);
        assert_abs_diff_eq!(a, 0.09, epsilon = 1e-15);

        let r = ReferenceTrajectory::new(1.0, 2.0).unwrap();
        let (z, v, a) = r.at(1.0);
        assert_relative_eq!(z, (-2.0f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(v, -2.0 * (-2.0f64).exp(), max_relative = 1e-14);
        assert_relative_eq!(a, 4.0 * (-2.0f64).exp(), max_relative = 1e-14);
    }

    #[test]
    fn non_positive_k_rejected() {
        assert!(matches!(
            ReferenceTrajectory::new(1.0, -2.0),
            Err(Error::NonConvergentReference { .. })
        ));
        assert!(ReferenceTrajectory::new(1.0, 0.0).is_err());
    }

    #[test]
    fn reference_divergence_is_minus_k() {
        let r = ReferenceTrajectory::new(3.0, 0.45).unwrap();
        for i in 0..200 {
            let (z, v, _) = r.at(i as f64 * 0.05);
            assert_relative_eq!(v / z, -0.45, max_relative = 1e-12);
        }
    }

    #[test]
    fn touchdown_time_monotone_in_initial_speed() {
        // ballistic: faster initial descent never lands later
        let mut last = f64::INFINITY;
        for v0 in [-0.5, -1.0, -2.0, -4.0] {
            let mut s = VerticalState::new(2.0, v0);
            while !s.touched_down {
                s = step(&s, 0.0, 0.05).unwrap();
            }
            assert!(s.t <= last);
            last = s.t;
        }
    }
}
