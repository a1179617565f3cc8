//! Hybrid linear inverted pendulum (H-LIP) planner.
//!
//! The horizontal CoM state `(p, v)` is measured relative to the stance foot.
//! A step is one single-support phase of length `t_ssp` followed by a
//! double-support phase of length `t_dsp`. The step-to-step map samples the
//! state at the pre-impact instant (end of single support):
//!
//! ```text
//! reset:  p⁺ = p⁻ + v⁻·t_dsp − u,   v⁺ = v⁻
//! flow:   p̈ = (g / z0) p            for t_ssp seconds
//! ```

use serde::{Deserialize, Serialize};

use crate::bezier::BezierCurve;
use crate::error::{check_finite, Error, Result};
use crate::reference::{Channel, Parity, ReferenceFrame};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HlipParams {
    pub com_height: f64,
    pub gravity: f64,
    pub t_ssp: f64,
    pub t_dsp: f64,
}

impl Default for HlipParams {
    fn default() -> Self {
        Self {
            com_height: 0.62,
            gravity: 9.81,
            t_ssp: 0.4,
            t_dsp: 0.0,
        }
    }
}

impl HlipParams {
    pub fn validate(&self) -> Result<()> {
        check_finite(
            "hlip params",
            &[self.com_height, self.gravity, self.t_ssp, self.t_dsp],
        )?;
        if self.com_height <= 0.0 || self.gravity <= 0.0 || self.t_ssp <= 0.0 || self.t_dsp < 0.0 {
            return Err(Error::validation(
                "hlip params",
                format!("need com_height, gravity, t_ssp > 0 and t_dsp ≥ 0, got {self:?}"),
            ));
        }
        Ok(())
    }

    /// Pendulum rate `sqrt(g / z0)`.
    pub fn lambda(&self) -> f64 {
        (self.gravity / self.com_height).sqrt()
    }

    pub fn step_period(&self) -> f64 {
        self.t_ssp + self.t_dsp
    }

    /// Copy with the CoM height scaled by `factor`.
    pub fn with_height_scale(&self, factor: f64) -> Self {
        Self {
            com_height: self.com_height * factor,
            ..*self
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct HlipState {
    pub p: f64,
    pub v: f64,
}

impl HlipState {
    pub fn new(p: f64, v: f64) -> Self {
        Self { p, v }
    }
}

impl std::ops::Neg for HlipState {
    type Output = HlipState;
    fn neg(self) -> HlipState {
        HlipState::new(-self.p, -self.v)
    }
}

/// Single-support transition matrix `Φ(t)` for pendulum rate `lambda`.
pub fn ssp_transition(lambda: f64, t: f64) -> [[f64; 2]; 2] {
    let (c, s) = ((lambda * t).cosh(), (lambda * t).sinh());
    [[c, s / lambda], [lambda * s, c]]
}

/// Closed-form single-support flow for `t` seconds.
pub fn ssp_flow(state: HlipState, params: &HlipParams, t: f64) -> Result<HlipState> {
    params.validate()?;
    flow_with_lambda(state, params.lambda(), t)
}

pub(crate) fn flow_with_lambda(state: HlipState, lambda: f64, t: f64) -> Result<HlipState> {
    if !(t >= 0.0) {
        return Err(Error::Range {
            what: "ssp flow time",
            value: t,
            lo: 0.0,
            hi: f64::INFINITY,
        });
    }
    let phi = ssp_transition(lambda, t);
    Ok(HlipState::new(
        phi[0][0] * state.p + phi[0][1] * state.v,
        phi[1][0] * state.p + phi[1][1] * state.v,
    ))
}

/// Pre-impact → post-impact reset with step size `u`.
pub fn reset(state: HlipState, params: &HlipParams, u: f64) -> HlipState {
    HlipState::new(state.p + state.v * params.t_dsp - u, state.v)
}

/// Linear step-to-step map `x⁺ = A x + B u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct S2SMatrices {
    pub a: [[f64; 2]; 2],
    pub b: [f64; 2],
}

impl S2SMatrices {
    pub fn apply(&self, x: HlipState, u: f64) -> HlipState {
        HlipState::new(
            self.a[0][0] * x.p + self.a[0][1] * x.v + self.b[0] * u,
            self.a[1][0] * x.p + self.a[1][1] * x.v + self.b[1] * u,
        )
    }

    pub fn det_a(&self) -> f64 {
        self.a[0][0] * self.a[1][1] - self.a[0][1] * self.a[1][0]
    }

    /// Real eigenvalues of `A` (the saddle of the pendulum keeps them real).
    pub fn eigenvalues(&self) -> (f64, f64) {
        let tr = self.a[0][0] + self.a[1][1];
        let disc = (0.25 * tr * tr - self.det_a()).max(0.0).sqrt();
        (0.5 * tr + disc, 0.5 * tr - disc)
    }

    /// Gain `K` of the step-to-step feedback `u = u* + K (x⁻ − x*)` that
    /// places both eigenvalues of `A + B K` at zero.
    pub fn deadbeat_gain(&self) -> Result<[f64; 2]> {
        let (a, b) = (&self.a, &self.b);
        let tr = a[0][0] + a[1][1];
        // det(A + B K) = det A + K adj(A) B
        let c = [a[1][1] * b[0] - a[0][1] * b[1], -a[1][0] * b[0] + a[0][0] * b[1]];
        let det = b[0] * c[1] - b[1] * c[0];
        if det.abs() < 1e-12 {
            return Err(Error::NotStabilizable(format!("step-to-step map is not controllable (det = {det:e})")));
        }
        let (r1, r2) = (-tr, -self.det_a());
        Ok([(r1 * c[1] - b[1] * r2) / det, (b[0] * r2 - c[0] * r1) / det])
    }
}

pub fn s2s_matrices(params: &HlipParams) -> Result<S2SMatrices> {
    params.validate()?;
    let phi = ssp_transition(params.lambda(), params.t_ssp);
    let td = params.t_dsp;
    Ok(S2SMatrices {
        a: [
            [phi[0][0], phi[0][0] * td + phi[0][1]],
            [phi[1][0], phi[1][0] * td + phi[1][1]],
        ],
        b: [-phi[0][0], -phi[1][0]],
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HlipFixedPoint {
    /// Pre-impact state of the periodic orbit.
    pub x_star: HlipState,
    pub u_star: f64,
    pub v_desired: f64,
}

impl HlipFixedPoint {
    /// State at the start of single support (post-reset).
    pub fn post_impact(&self, params: &HlipParams) -> HlipState {
        reset(self.x_star, params, self.u_star)
    }
}

/// Period-one orbit for walking speed `v_desired`, with `u* = v_desired · (t_ssp + t_dsp)`.
pub fn fixed_point(v_desired: f64, params: &HlipParams) -> Result<HlipFixedPoint> {
    check_finite("desired velocity", &[v_desired])?;
    let m = s2s_matrices(params)?;
    let u_star = v_desired * params.step_period();
    // (I − A) x = B u
    let (a11, a12, a21, a22) = (1.0 - m.a[0][0], -m.a[0][1], -m.a[1][0], 1.0 - m.a[1][1]);
    let det = a11 * a22 - a12 * a21;
    if det.abs() < 1e-12 {
        return Err(Error::Degenerate(format!("det(I − A) = {det:e}")));
    }
    let (r1, r2) = (m.b[0] * u_star, m.b[1] * u_star);
    let x_star = HlipState::new((a22 * r1 - a12 * r2) / det, (a11 * r2 - a21 * r1) / det);
    Ok(HlipFixedPoint {
        x_star,
        u_star,
        v_desired,
    })
}

/// CoM reference `t` seconds into single support.
pub fn com_reference(fp: &HlipFixedPoint, params: &HlipParams, t: f64) -> Result<HlipState> {
    if !(0.0..=params.t_ssp).contains(&t) {
        return Err(Error::Range {
            what: "com reference time",
            value: t,
            lo: 0.0,
            hi: params.t_ssp,
        });
    }
    ssp_flow(fp.post_impact(params), params, t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SwingConfig {
    /// Clearance above the higher endpoint at mid-swing (m).
    pub apex_height: f64,
    /// Lateral distance between the feet (m); 0 for sagittal-only gaits.
    pub step_width: f64,
}

impl Default for SwingConfig {
    fn default() -> Self {
        Self {
            apex_height: 0.08,
            step_width: 0.0,
        }
    }
}

/// `amplitude · sin(2π t / t_period + phase)`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuxSinusoid {
    pub name: String,
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HlipReferenceConfig {
    pub swing: SwingConfig,
    pub aux: Vec<AuxSinusoid>,
    /// Full gait cycle (two steps).
    pub t_period: f64,
}

impl Default for HlipReferenceConfig {
    fn default() -> Self {
        Self {
            swing: SwingConfig::default(),
            aux: vec![AuxSinusoid {
                name: "torso_pitch".into(),
                amplitude: 0.05,
                phase: 0.0,
            }],
            t_period: 0.8,
        }
    }
}

/// Time-indexed reference for one commanded velocity.
///
/// Channels: `com_x` (CoM relative to stance foot), `swing_foot` (x, y, z of
/// the swing foot relative to the stance foot), then one channel per
/// auxiliary sinusoid.
#[derive(Debug, Clone)]
pub struct HlipPlanner {
    params: HlipParams,
    cfg: HlipReferenceConfig,
    fp: HlipFixedPoint,
    swing: [BezierCurve; 2],
}

impl HlipPlanner {
    pub fn new(v_desired: f64, params: HlipParams, cfg: HlipReferenceConfig) -> Result<Self> {
        if !(cfg.t_period > 0.0 && cfg.t_period.is_finite()) {
            return Err(Error::validation("t_period", "must be positive"));
        }
        if cfg.aux.iter().any(|a| !(a.amplitude.is_finite() && a.phase.is_finite())) {
            return Err(Error::validation("aux sinusoid", "non-finite amplitude or phase"));
        }
        let fp = fixed_point(v_desired, &params)?;
        let u = fp.u_star;
        let w = cfg.swing.step_width;
        let curve = |y: f64| {
            BezierCurve::fit_swing([-u, y, 0.0], [u, y, 0.0], cfg.swing.apex_height, params.t_ssp)
        };
        // Left stance swings the right foot, which sits at −width.
        let swing = [curve(-w)?, curve(w)?];
        Ok(Self {
            params,
            cfg,
            fp,
            swing,
        })
    }

    pub fn params(&self) -> &HlipParams {
        &self.params
    }

    pub fn config(&self) -> &HlipReferenceConfig {
        &self.cfg
    }

    pub fn fixed_point(&self) -> &HlipFixedPoint {
        &self.fp
    }

    pub fn channels(&self) -> Vec<Channel> {
        let mut ch = vec![Channel::new("com_x", 1), Channel::new("swing_foot", 3)];
        ch.extend(self.cfg.aux.iter().map(|a| Channel::new(a.name.clone(), 1)));
        ch
    }

    /// Swing curve for the given stance parity.
    pub fn swing_curve(&self, parity: Parity) -> &BezierCurve {
        &self.swing[parity.is_odd() as usize]
    }

    /// CoM reference `local` seconds into the current step, covering both
    /// single support and the trailing double support.
    pub fn com_at(&self, local: f64) -> Result<HlipState> {
        if local <= self.params.t_ssp {
            com_reference(&self.fp, &self.params, local)
        } else {
            let x = self.fp.x_star;
            Ok(HlipState::new(x.p + x.v * (local - self.params.t_ssp), x.v))
        }
    }

    /// Step index and time within the step for absolute time `t`.
    pub fn step_of(&self, t: f64) -> (u64, f64) {
        let period = self.params.step_period();
        let k = (t / period).floor().max(0.0);
        let local = (t - k * period).clamp(0.0, period);
        (k as u64, local)
    }

    pub fn frame_at(&self, t: f64) -> Result<ReferenceFrame> {
        if !(t >= 0.0 && t.is_finite()) {
            return Err(Error::Range {
                what: "reference time",
                value: t,
                lo: 0.0,
                hi: f64::INFINITY,
            });
        }
        let (k, local) = self.step_of(t);
        let parity = Parity::from_step(k);
        let com = self.com_at(local)?;

        let curve = self.swing_curve(parity);
        let (sw, swd) = if local <= self.params.t_ssp {
            let s = local / self.params.t_ssp;
            (curve.eval(s)?, curve.eval_rate(s)?)
        } else {
            (curve.eval(1.0)?, vec![0.0; 3])
        };

        let mut y = Vec::with_capacity(4 + self.cfg.aux.len());
        let mut ydot = Vec::with_capacity(y.capacity());
        y.push(com.p);
        ydot.push(com.v);
        y.extend(&sw);
        ydot.extend(&swd);
        let omega = 2.0 * std::f64::consts::PI / self.cfg.t_period;
        for a in &self.cfg.aux {
            let arg = omega * t + a.phase;
            y.push(a.amplitude * arg.sin());
            ydot.push(a.amplitude * omega * arg.cos());
        }
        Ok(ReferenceFrame { y, ydot, parity })
    }
}

/// One-shot reference evaluation at absolute time `t`.
pub fn assemble_reference(
    v_desired: f64,
    params: &HlipParams,
    cfg: &HlipReferenceConfig,
    t: f64,
) -> Result<ReferenceFrame> {
    HlipPlanner::new(v_desired, *params, cfg.clone())?.frame_at(t)
}
