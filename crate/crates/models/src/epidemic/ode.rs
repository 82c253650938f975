//! Edge-based SIR mean-field equations for a configuration-model network
//! with Poisson(λ) degrees, integrated with classic fourth-order
//! Runge-Kutta.
//!
//! `α` is the fraction of half-edges that have not yet transmitted, `p_S`
//! and `p_I` the shares of such half-edges pointing at susceptible and
//! infectious nodes. The susceptible fraction is `g(α)` where `g` is the
//! degree probability generating function.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OdeError {
    #[error("alpha must be positive, got {0}")]
    Domain(f64),
    #[error("step size must be positive and finite, got {0}")]
    Step(f64),
    #[error("{name} = {value} left [0, 1] at t = {time}")]
    Unstable { name: &'static str, value: f64, time: f64 },
    #[error("output times must be non-decreasing and start at or after 0")]
    Times,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeState {
    pub alpha: f64,
    pub i: f64,
    pub p_s: f64,
    pub p_i: f64,
}

impl OdeState {
    /// One infectious node in `n`: `α = 1`, `I = p_I = 1/n`, `p_S = 1 - 1/n`.
    pub fn seeded(n: usize) -> Self {
        let eps = 1.0 / n as f64;
        Self {
            alpha: 1.0,
            i: eps,
            p_s: 1.0 - eps,
            p_i: eps,
        }
    }

    fn axpy(self, h: f64, d: OdeState) -> OdeState {
        OdeState {
            alpha: self.alpha + h * d.alpha,
            i: self.i + h * d.i,
            p_s: self.p_s + h * d.p_s,
            p_i: self.p_i + h * d.p_i,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OdeParams {
    pub beta: f64,
    pub gamma: f64,
    /// Mean of the Poisson degree law.
    pub lambda: f64,
}

impl OdeParams {
    pub fn g(&self, alpha: f64) -> f64 {
        (self.lambda * (alpha - 1.0)).exp()
    }

    pub fn g_prime(&self, alpha: f64) -> f64 {
        self.lambda * self.g(alpha)
    }

    pub fn g_second(&self, alpha: f64) -> f64 {
        self.lambda * self.lambda * self.g(alpha)
    }
}

/// Time derivatives of the four state variables. The transmission rate
/// also plays the role of the per-edge rate in the `p_I` equation.
pub fn ode_derivatives(s: &OdeState, p: &OdeParams) -> Result<OdeState, OdeError> {
    if !(s.alpha > 0.0) {
        return Err(OdeError::Domain(s.alpha));
    }
    let OdeParams { beta, gamma, .. } = *p;
    let ratio = s.alpha * p.g_second(s.alpha) / p.g_prime(s.alpha);
    Ok(OdeState {
        alpha: -beta * s.p_i * s.alpha,
        i: -gamma * s.i + beta * s.p_i * s.alpha * p.g_prime(s.alpha),
        p_s: -ratio * s.p_s * beta * s.p_i + s.p_s * beta * s.p_i,
        p_i: -gamma * s.p_i + s.p_i * beta * s.p_s * ratio - beta * s.p_i * (1.0 - s.p_i),
    })
}

pub fn rk4_step(s: &OdeState, p: &OdeParams, h: f64) -> Result<OdeState, OdeError> {
    let k1 = ode_derivatives(s, p)?;
    let k2 = ode_derivatives(&s.axpy(h / 2.0, k1), p)?;
    let k3 = ode_derivatives(&s.axpy(h / 2.0, k2), p)?;
    let k4 = ode_derivatives(&s.axpy(h, k3), p)?;
    Ok(OdeState {
        alpha: s.alpha + h / 6.0 * (k1.alpha + 2.0 * k2.alpha + 2.0 * k3.alpha + k4.alpha),
        i: s.i + h / 6.0 * (k1.i + 2.0 * k2.i + 2.0 * k3.i + k4.i),
        p_s: s.p_s + h / 6.0 * (k1.p_s + 2.0 * k2.p_s + 2.0 * k3.p_s + k4.p_s),
        p_i: s.p_i + h / 6.0 * (k1.p_i + 2.0 * k2.p_i + 2.0 * k3.p_i + k4.p_i),
    })
}

/// Compartment fractions at the requested times.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OdeTrajectory {
    pub times: Vec<f64>,
    pub s: Vec<f64>,
    pub i: Vec<f64>,
    pub r: Vec<f64>,
}

const BOUND_SLACK: f64 = 1e-6;

fn check(s: &OdeState, time: f64) -> Result<(), OdeError> {
    for (name, value) in [("alpha", s.alpha), ("I", s.i), ("p_S", s.p_s), ("p_I", s.p_i)] {
        if !(-BOUND_SLACK..=1.0 + BOUND_SLACK).contains(&value) {
            return Err(OdeError::Unstable { name, value, time });
        }
    }
    Ok(())
}

/// Integrates from `t = 0` with steps of at most `dt`, landing exactly on
/// every output time. `S = g(α)` and `R = 1 - S - I`.
pub fn integrate_ode(initial: OdeState, p: &OdeParams, times: &[f64], dt: f64) -> Result<OdeTrajectory, OdeError> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(OdeError::Step(dt));
    }
    if times.first().is_some_and(|&t| t < 0.0) || times.windows(2).any(|w| w[1] < w[0]) {
        return Err(OdeError::Times);
    }
    let mut out = OdeTrajectory::default();
    let mut state = initial;
    let mut now = 0.0;
    check(&state, now)?;
    for &target in times {
        let span = target - now;
        if span > 0.0 {
            let steps = (span / dt - 1e-9).ceil().max(1.0) as usize;
            let h = span / steps as f64;
            for k in 0..steps {
                state = rk4_step(&state, p, h)?;
                check(&state, now + (k + 1) as f64 * h)?;
            }
            now = target;
        }
        let s = p.g(state.alpha);
        out.times.push(target);
        out.s.push(s);
        out.i.push(state.i);
        out.r.push(1.0 - s - state.i);
    }
    Ok(out)
}
