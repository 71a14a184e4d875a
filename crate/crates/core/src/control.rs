//! Divergence-tracking controllers and the two-phase landing machine.
//!
//! Phase I hovers on D* = 0 while ramping the PI gains multiplicatively
//! until the oscillation detector fires; the pre-oscillation gains seed
//! phase II, which tracks D* = −k while decaying both gains by
//! e^(D*·t). Oscillation events re-anchor the gains downward; persistent
//! under-tracking re-anchors them upward.

use crate::channel::{NoiseModel, MEAN_ABS_NORMAL};
use crate::detect::Verdict;
use crate::error::{Error, Result};

/// Proportional command µ = K_p (D* − D̂).
pub fn p_command(k_p: f64, d_star: f64, d_hat: f64) -> f64 {
    k_p * (d_star - d_hat)
}

/// PI gains tied together by the integral time constant κ = K_p / K_i.
///
/// κ is invariant under every scaling in this module: decay, search
/// ramp, and both re-anchor mechanisms multiply K_p and K_i together.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiGains {
    pub k_p: f64,
    pub k_i: f64,
}

impl PiGains {
    pub fn new(k_p: f64, k_i: f64) -> Result<Self> {
        if !(k_p.is_finite() && k_i.is_finite()) {
            return Err(Error::NonFinite("gains"));
        }
        if k_p < 0.0 || k_i < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "gains must be >= 0, got ({k_p}, {k_i})"
            )));
        }
        Ok(PiGains { k_p, k_i })
    }

    pub fn from_kp_kappa(k_p: f64, kappa: f64) -> Result<Self> {
        if kappa <= 0.0 {
            return Err(Error::InvalidParameter(format!("kappa must be > 0, got {kappa}")));
        }
        PiGains::new(k_p, k_p / kappa)
    }

    /// κ = K_p / K_i; +∞ for a pure-P configuration.
    pub fn kappa(&self) -> f64 {
        if self.k_i == 0.0 {
            f64::INFINITY
        } else {
            self.k_p / self.k_i
        }
    }

    pub fn scaled(&self, factor: f64) -> PiGains {
        PiGains {
            k_p: self.k_p * factor,
            k_i: self.k_i * factor,
        }
    }
}

/// Exponential gain decay: both gains scaled by e^(D*·t), κ unchanged.
/// The factor is floored so K_p never drops below `k_p_floor`.
pub fn adaptive_gains(k0: PiGains, d_star: f64, t_descend: f64, k_p_floor: f64) -> PiGains {
    let factor = (d_star * t_descend).exp();
    let floored = if k0.k_p > 0.0 {
        factor.max(k_p_floor / k0.k_p)
    } else {
        factor
    };
    k0.scaled(floored)
}

/// Integrator state for the PI controller.
#[derive(Debug, Clone, Copy, Default)]
pub struct ControllerState {
    /// Accumulated ∫(D* − D̂) dt, trapezoidal.
    pub integ: f64,
    last_err: Option<f64>,
    /// Last commanded acceleration (m/s²).
    pub last_mu: f64,
}

impl ControllerState {
    pub fn reset(&mut self) {
        self.integ = 0.0;
        self.last_err = None;
    }
}

/// One PI update: trapezoidal integral accumulation with anti-windup
/// clamp, then µ = K_p (err + integ / κ).
pub fn pi_command(
    state: &mut ControllerState,
    gains: PiGains,
    d_star: f64,
    d_hat: f64,
    dt: f64,
    integ_limit: f64,
) -> f64 {
    let err = d_star - d_hat;
    if let Some(prev) = state.last_err {
        state.integ += 0.5 * (prev + err) * dt;
        state.integ = state.integ.clamp(-integ_limit, integ_limit);
    }
    state.last_err = Some(err);
    let kappa = gains.kappa();
    let integral_term = if kappa.is_finite() { state.integ / kappa } else { 0.0 };
    let mu = gains.k_p * (err + integral_term);
    state.last_mu = mu;
    mu
}

/// Landing phases of the adaptive strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Hover on D* = 0, ramp gains until the detector fires.
    GainSearch,
    /// Track D* = −k with exponentially decaying gains.
    Descend,
    TouchedDown,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Phase::GainSearch => write!(f, "search"),
            Phase::Descend => write!(f, "descend"),
            Phase::TouchedDown => write!(f, "down"),
        }
    }
}

/// Events emitted by the landing machine, logged by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MachineEvent {
    SearchEnded,
    OscillationReanchor,
    TrackingBoost,
    Touchdown,
}

impl std::fmt::Display for MachineEvent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MachineEvent::SearchEnded => write!(f, "search_end"),
            MachineEvent::OscillationReanchor => write!(f, "gain_cut"),
            MachineEvent::TrackingBoost => write!(f, "gain_boost"),
            MachineEvent::Touchdown => write!(f, "touchdown"),
        }
    }
}

/// Tuning constants of the two-phase strategy. Every value is exposed in
/// the scenario config.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LandingConfig {
    /// Desired divergence during descent (negative).
    pub d_star: f64,
    /// Starting proportional gain for the search ramp.
    pub k_p_start: f64,
    /// Integral time constant κ, shared by both phases.
    pub kappa: f64,
    /// Multiplicative ramp factor per second during the search.
    pub ramp_per_s: f64,
    /// Extra safety factor on the search backoff; multiplies
    /// ramp^(detection-latency window).
    pub backoff_margin: f64,
    /// Gain factor applied on an oscillation re-anchor (< 1).
    pub mu_down: f64,
    /// Gain factor applied on a tracking boost (> 1).
    pub mu_up: f64,
    /// Tracking band (1/s) for the under-tracking dwell.
    pub tracking_band: f64,
    /// Seconds of continuous out-of-band error before a boost.
    pub dwell: f64,
    /// Floor on the decayed K_p.
    pub k_p_floor: f64,
    /// Floor on the phase-II starting gain; a false-positive search end
    /// would otherwise anchor gains too low for µ_up to ever recover.
    pub k_p0_min: f64,
    /// Integral anti-windup clamp.
    pub integ_limit: f64,
    /// Earliest and latest time the search phase may end.
    pub t_search_min: f64,
    pub t_search_max: f64,
    /// Seconds of detection latency assumed by the backoff
    /// (the detector's period-adaptation window).
    pub detection_latency: f64,
    /// Scale on the descend-phase detector threshold relative to the
    /// hover-calibrated value; closed-loop tracking colors the
    /// measurement noise well beyond its open-loop variance.
    pub descend_theta_factor: f64,
}

impl Default for LandingConfig {
    fn default() -> Self {
        LandingConfig {
            d_star: -0.3,
            k_p_start: 0.1,
            kappa: 6.0,
            ramp_per_s: 1.3,
            backoff_margin: 4.0,
            mu_down: 0.6,
            mu_up: 1.3,
            tracking_band: 0.05,
            dwell: 2.0,
            k_p_floor: 0.02,
            k_p0_min: 1.0,
            integ_limit: 1.0,
            t_search_min: 5.0,
            t_search_max: 40.0,
            detection_latency: 1.6,
            descend_theta_factor: 6.0,
        }
    }
}

impl LandingConfig {
    /// Division applied to the gains at the end of the search phase.
    pub fn backoff(&self) -> f64 {
        self.ramp_per_s.powf(self.detection_latency) * self.backoff_margin
    }

    /// Detector threshold for the current phase, scaled by the noise
    /// model's variance at the expected operating divergence.
    pub fn theta_for_phase(&self, phase: Phase, theta0: f64, noise: Option<&NoiseModel>) -> f64 {
        match phase {
            Phase::GainSearch | Phase::TouchedDown => theta0,
            Phase::Descend => {
                let ratio = noise
                    .map(|m| {
                        // loop settles where the biased estimate reads D*
                        let d_exp = (self.d_star - m.b) / m.a;
                        let var = |d: f64| {
                            let s = m.spread(d) / MEAN_ABS_NORMAL;
                            s * s
                        };
                        (var(d_exp) / var(0.0)).max(1.0)
                    })
                    .unwrap_or(1.0);
                self.descend_theta_factor * theta0 * ratio
            }
        }
    }
}

/// The two-phase landing state machine. Owns the controller integrator;
/// the harness owns the detector and plant.
#[derive(Debug, Clone)]
pub struct LandingMachine {
    pub cfg: LandingConfig,
    phase: Phase,
    /// Gains anchored at the last phase transition or re-anchor.
    k0: PiGains,
    gains: PiGains,
    t_phase: f64,
    dwell_timer: f64,
    pub controller: ControllerState,
}

impl LandingMachine {
    pub fn new(cfg: LandingConfig) -> Result<Self> {
        let k0 = PiGains::from_kp_kappa(cfg.k_p_start, cfg.kappa)?;
        Ok(LandingMachine {
            cfg,
            phase: Phase::GainSearch,
            k0,
            gains: k0,
            t_phase: 0.0,
            dwell_timer: 0.0,
            controller: ControllerState::default(),
        })
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn gains(&self) -> PiGains {
        self.gains
    }

    pub fn anchor(&self) -> PiGains {
        self.k0
    }

    pub fn t_phase(&self) -> f64 {
        self.t_phase
    }

    /// Setpoint tracked in the current phase.
    pub fn setpoint(&self) -> f64 {
        match self.phase {
            Phase::GainSearch => 0.0,
            _ => self.cfg.d_star,
        }
    }

    /// One search-phase update. Ramps gains, or locks the pre-oscillation
    /// anchor and enters the descent when the detector fires (or the
    /// search window runs out).
    pub fn gain_search_step(&mut self, oscillating: bool, dt: f64) -> Option<MachineEvent> {
        debug_assert_eq!(self.phase, Phase::GainSearch);
        let can_end = self.t_phase >= self.cfg.t_search_min;
        let must_end = self.t_phase >= self.cfg.t_search_max;
        if (oscillating && can_end) || must_end {
            let backed = self.gains.k_p / self.cfg.backoff();
            let k_p0 = backed.max(self.cfg.k_p0_min).max(self.cfg.k_p_start);
            self.k0 = PiGains::from_kp_kappa(k_p0, self.cfg.kappa).expect("validated in new()");
            self.gains = self.k0;
            self.phase = Phase::Descend;
            self.t_phase = 0.0;
            self.dwell_timer = 0.0;
            self.controller.reset();
            return Some(MachineEvent::SearchEnded);
        }
        self.gains = self.gains.scaled(self.cfg.ramp_per_s.powf(dt));
        self.t_phase += dt;
        None
    }

    /// One descent-phase update: exponential decay from the anchor, a
    /// 0.6× re-anchor on oscillation, a 1.3× boost after persistent
    /// under-tracking, and the touchdown transition.
    pub fn descend_step(
        &mut self,
        verdict: Verdict,
        d_hat: f64,
        touched_down: bool,
        dt: f64,
    ) -> Option<MachineEvent> {
        debug_assert_eq!(self.phase, Phase::Descend);
        if touched_down {
            self.phase = Phase::TouchedDown;
            return Some(MachineEvent::Touchdown);
        }
        let mut event = None;
        let mut reanchored = false;
        if verdict.oscillating {
            let k_p0 = (self.gains.k_p * self.cfg.mu_down).max(self.cfg.k_p_floor);
            self.k0 = PiGains::from_kp_kappa(k_p0, self.cfg.kappa).expect("kappa validated");
            self.t_phase = 0.0;
            self.dwell_timer = 0.0;
            self.controller.reset();
            reanchored = true;
            event = Some(MachineEvent::OscillationReanchor);
        } else if verdict.cov.is_some() && (d_hat - self.cfg.d_star).abs() > self.cfg.tracking_band
        {
            self.dwell_timer += dt;
            if self.dwell_timer > self.cfg.dwell {
                let k_p0 = self.gains.k_p * self.cfg.mu_up;
                self.k0 = PiGains::from_kp_kappa(k_p0, self.cfg.kappa).expect("kappa validated");
                self.t_phase = 0.0;
                self.dwell_timer = 0.0;
                reanchored = true;
                event = Some(MachineEvent::TrackingBoost);
            }
        } else {
            self.dwell_timer = 0.0;
        }
        // clock advances before the gain update so K_p(t)/K_p(0) tracks
        // e^(D* t) exactly against the tick times; re-anchor ticks hold
        // the fresh anchor at t = 0
        if !reanchored {
            self.t_phase += dt;
        }
        self.gains = adaptive_gains(self.k0, self.cfg.d_star, self.t_phase, self.cfg.k_p_floor);
        event
    }

    /// Command for the current tick (call after the phase step).
    pub fn command(&mut self, d_hat: f64, dt: f64) -> f64 {
        let d_star = self.setpoint();
        pi_command(
            &mut self.controller,
            self.gains,
            d_star,
            d_hat,
            dt,
            self.cfg.integ_limit,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn quiet() -> Verdict {
        Verdict { cov: Some(0.0), oscillating: false }
    }

    fn firing() -> Verdict {
        Verdict { cov: Some(-1.0), oscillating: true }
    }

    #[test]
    fn p_command_examples() {
        assert_eq!(p_command(1.0, -0.3, -0.3), 0.0);
        assert_abs_diff_eq!(p_command(2.0, -0.3, -0.1), -0.4, epsilon = 1e-15);
        assert_eq!(p_command(0.0, 1.0, -1.0), 0.0);
    }

    #[test]
    fn pi_zero_error_stays_zero() {
        let gains = PiGains::from_kp_kappa(0.6, 6.0).unwrap();
        let mut st = ControllerState::default();
        for _ in 0..100 {
            assert_eq!(pi_command(&mut st, gains, -0.3, -0.3, 0.05, 1.0), 0.0);
        }
    }

    #[test]
    fn pi_constant_error_closed_form() {
        // err = 0.1, Kp = 0.6, kappa = 6: after 1 s the integral is exactly
        // 0.1, so mu = 0.6 (0.1 + 0.1/6) = 0.07
        let gains = PiGains::from_kp_kappa(0.6, 6.0).unwrap();
        let mut st = ControllerState::default();
        let mut mu = 0.0;
        for _ in 0..21 {
            mu = pi_command(&mut st, gains, -0.3, -0.4, 0.05, 1.0);
        }
        assert_abs_diff_eq!(mu, 0.07, epsilon = 1e-12);
    }

    #[test]
    fn anti_windup_clamps() {
        let gains = PiGains::from_kp_kappa(1.0, 1.0).unwrap();
        let mut st = ControllerState::default();
        for _ in 0..10_000 {
            pi_command(&mut st, gains, 1.0, 0.0, 0.05, 1.0);
        }
        assert!(st.integ <= 1.0);
    }

    #[test]
    fn adaptive_gain_examples() {
        let k0 = PiGains::from_kp_kappa(2.0, 6.0).unwrap();
        let g = adaptive_gains(k0, -0.3, 0.0, 0.02);
        assert_eq!(g, k0);
        let g = adaptive_gains(k0, -0.3, 1.0, 0.02);
        assert_relative_eq!(g.k_p, 2.0 * (-0.3f64).exp(), max_relative = 1e-12);
        // kappa preserved at every t
        for t in [0.0, 0.7, 3.0, 20.0] {
            let g = adaptive_gains(k0, -0.3, t, 0.02);
            assert_relative_eq!(g.kappa(), 6.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn gain_floor_preserves_kappa() {
        let k0 = PiGains::from_kp_kappa(0.1, 6.0).unwrap();
        let g = adaptive_gains(k0, -0.3, 100.0, 0.02);
        assert_abs_diff_eq!(g.k_p, 0.02, epsilon = 1e-15);
        assert_relative_eq!(g.kappa(), 6.0, max_relative = 1e-12);
    }

    #[test]
    fn search_ramp_is_monotone_until_fire() {
        let mut m = LandingMachine::new(LandingConfig::default()).unwrap();
        let mut last = m.gains().k_p;
        for _ in 0..100 {
            assert!(m.gain_search_step(false, 0.05).is_none());
            assert!(m.gains().k_p >= last);
            last = m.gains().k_p;
        }
        assert_relative_eq!(last, 0.1 * 1.3f64.powf(5.0), max_relative = 1e-9);
    }

    #[test]
    fn search_backoff_at_fire() {
        let cfg = LandingConfig { t_search_min: 0.0, ..LandingConfig::default() };
        let mut m = LandingMachine::new(cfg).unwrap();
        for _ in 0..400 {
            m.gain_search_step(false, 0.05);
        }
        let before = m.gains().k_p;
        let ev = m.gain_search_step(true, 0.05);
        assert_eq!(ev, Some(MachineEvent::SearchEnded));
        assert_eq!(m.phase(), Phase::Descend);
        assert_relative_eq!(m.gains().k_p, before / cfg.backoff(), max_relative = 1e-12);
    }

    #[test]
    fn immediate_fire_floors_at_start_gains() {
        let cfg = LandingConfig { t_search_min: 0.0, k_p0_min: 0.0, ..LandingConfig::default() };
        let mut m = LandingMachine::new(cfg).unwrap();
        let ev = m.gain_search_step(true, 0.05);
        assert_eq!(ev, Some(MachineEvent::SearchEnded));
        assert_eq!(m.gains().k_p, cfg.k_p_start);
    }

    #[test]
    fn descend_decay_follows_clock() {
        let cfg = LandingConfig { t_search_min: 0.0, ..LandingConfig::default() };
        let mut m = LandingMachine::new(cfg).unwrap();
        m.gain_search_step(true, 0.05);
        let k0 = m.gains().k_p;
        let dt = 0.05;
        let steps = 200;
        for _ in 0..steps {
            assert!(m.descend_step(quiet(), cfg.d_star, false, dt).is_none());
        }
        let expected = k0 * (cfg.d_star * (steps as f64 * dt)).exp();
        assert_relative_eq!(m.gains().k_p, expected, max_relative = 1e-9);
        assert_relative_eq!(m.gains().kappa(), cfg.kappa, max_relative = 1e-12);
    }

    #[test]
    fn oscillation_reanchors_down_once_per_event() {
        let cfg = LandingConfig { t_search_min: 0.0, ..LandingConfig::default() };
        let mut m = LandingMachine::new(cfg).unwrap();
        m.gain_search_step(true, 0.05);
        for _ in 0..40 {
            m.descend_step(quiet(), cfg.d_star, false, 0.05);
        }
        let before = m.gains().k_p;
        let ev = m.descend_step(firing(), cfg.d_star, false, 0.05);
        assert_eq!(ev, Some(MachineEvent::OscillationReanchor));
        assert_relative_eq!(m.anchor().k_p, before * 0.6, max_relative = 1e-12);
    }

    #[test]
    fn persistent_under_tracking_boosts_once() {
        let cfg = LandingConfig { t_search_min: 0.0, ..LandingConfig::default() };
        let mut m = LandingMachine::new(cfg).unwrap();
        m.gain_search_step(true, 0.05);
        // 3 s of error 0.15 against band 0.05, dwell 2 s: exactly one boost
        let d_hat = cfg.d_star + 0.15;
        let mut boosts = 0;
        for _ in 0..60 {
            if m.descend_step(quiet(), d_hat, false, 0.05) == Some(MachineEvent::TrackingBoost) {
                boosts += 1;
            }
        }
        assert_eq!(boosts, 1);
    }

    #[test]
    fn touchdown_transitions() {
        let cfg = LandingConfig { t_search_min: 0.0, ..LandingConfig::default() };
        let mut m = LandingMachine::new(cfg).unwrap();
        m.gain_search_step(true, 0.05);
        let ev = m.descend_step(quiet(), cfg.d_star, true, 0.05);
        assert_eq!(ev, Some(MachineEvent::Touchdown));
        assert_eq!(m.phase(), Phase::TouchedDown);
    }

    #[test]
    fn critical_gain_safety_scaling() {
        // K_p(t)/K_p(0) = Z(t)/Z(0) exactly, so K_p0 < 2 Z0/dt implies
        // K_p(t) < 2 Z(t)/dt along the ideal trajectory
        let k0 = PiGains::from_kp_kappa(50.0, 6.0).unwrap();
        let d_star = -0.25;
        let z0 = 3.0;
        let dt = 0.05;
        assert!(k0.k_p < 2.0 * z0 / dt);
        for i in 0..2000 {
            let t = i as f64 * dt;
            let g = adaptive_gains(k0, d_star, t, 1e-12);
            let z = z0 * (d_star * t).exp();
            assert!(g.k_p < 2.0 * z / dt + 1e-9);
        }
    }
}
