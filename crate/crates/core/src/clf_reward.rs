//! CLF construction and the reward terms built on it.
//!
//! Each scalar output is modeled as a double integrator `ë = μ` with error
//! state `η_i = (e_i, ė_i)`. Its CARE solution `P_i` (2×2, closed form) forms
//! one diagonal block of `P`, so `V(η) = Σ_i η_iᵀ P_i η_i`.

use serde::{Deserialize, Serialize};

use crate::error::{check_finite, Error, Result};

pub type Mat2 = [[f64; 2]; 2];

/// Eigenvalues `(max, min)` of a symmetric 2×2 matrix.
pub fn sym2_eigenvalues(m: &Mat2) -> (f64, f64) {
    let mean = 0.5 * (m[0][0] + m[1][1]);
    let half_diff = 0.5 * (m[0][0] - m[1][1]);
    let rad = (half_diff * half_diff + m[0][1] * m[0][1]).sqrt();
    (mean + rad, mean - rad)
}

fn quad_form(m: &Mat2, x: [f64; 2]) -> f64 {
    x[0] * (m[0][0] * x[0] + m[0][1] * x[1]) + x[1] * (m[1][0] * x[0] + m[1][1] * x[1])
}

/// Per-output CARE weights `Q = diag(q_pos, q_vel)`, `R = r`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CareWeights {
    pub q_pos: f64,
    pub q_vel: f64,
    pub r: f64,
}

impl Default for CareWeights {
    fn default() -> Self {
        Self {
            q_pos: 1.0,
            q_vel: 1.0,
            r: 1.0,
        }
    }
}

/// Stabilizing CARE solution for the double integrator.
pub fn care_2x2(q_pos: f64, q_vel: f64, r: f64) -> Result<Mat2> {
    check_finite("care weights", &[q_pos, q_vel, r])?;
    if !(r > 0.0) || q_pos < 0.0 || q_vel < 0.0 || !(q_pos > 0.0 || q_vel > 0.0) {
        return Err(Error::NotStabilizable(format!(
            "need r > 0, q ≥ 0 and q_pos + q_vel > 0 (got q_pos={q_pos}, q_vel={q_vel}, r={r})"
        )));
    }
    let p12 = (q_pos * r).sqrt();
    let p22 = (r * (q_vel + 2.0 * p12)).sqrt();
    let p11 = p12 * p22 / r;
    Ok([[p11, p12], [p12, p22]])
}

/// `‖Aᵀ P + P A − P B r⁻¹ Bᵀ P + Q‖∞` (max absolute entry) for `A = [[0,1],[0,0]]`, `B = [0,1]ᵀ`.
pub fn care_residual(p: &Mat2, q_pos: f64, q_vel: f64, r: f64) -> f64 {
    let (p11, p12, p21, p22) = (p[0][0], p[0][1], p[1][0], p[1][1]);
    // Aᵀ P + P A = [[0, p11], [p11, p12 + p21]]
    let m = [
        [q_pos - p12 * p21 / r, p11 - p12 * p22 / r],
        [p11 - p22 * p21 / r, p12 + p21 - p22 * p22 / r + q_vel],
    ];
    m.iter().flatten().fold(0.0f64, |acc, x| acc.max(x.abs()))
}

/// Tracking error `η = (y^d − y, ẏ^d − ẏ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputError {
    pub e_pos: Vec<f64>,
    pub e_vel: Vec<f64>,
}

impl OutputError {
    pub fn new(e_pos: Vec<f64>, e_vel: Vec<f64>) -> Result<Self> {
        if e_pos.len() != e_vel.len() {
            return Err(Error::Dimension {
                what: "output error velocity",
                expected: e_pos.len(),
                got: e_vel.len(),
            });
        }
        check_finite("output error", &e_pos)?;
        check_finite("output error", &e_vel)?;
        Ok(Self { e_pos, e_vel })
    }

    pub fn between(yd: &[f64], yd_dot: &[f64], y: &[f64], ydot: &[f64]) -> Result<Self> {
        if yd.len() != y.len() || yd_dot.len() != ydot.len() {
            return Err(Error::Dimension {
                what: "output error",
                expected: yd.len(),
                got: y.len(),
            });
        }
        Self::new(
            yd.iter().zip(y).map(|(a, b)| a - b).collect(),
            yd_dot.iter().zip(ydot).map(|(a, b)| a - b).collect(),
        )
    }

    pub fn zeros(k: usize) -> Self {
        Self {
            e_pos: vec![0.0; k],
            e_vel: vec![0.0; k],
        }
    }

    pub fn dim(&self) -> usize {
        self.e_pos.len()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            e_pos: self.e_pos.iter().map(|x| c * x).collect(),
            e_vel: self.e_vel.iter().map(|x| c * x).collect(),
        }
    }

    /// Euclidean norm of the full error vector.
    pub fn norm(&self) -> f64 {
        self.e_pos.iter().chain(&self.e_vel).map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn pos_norm(&self) -> f64 {
        self.e_pos.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn vel_norm(&self) -> f64 {
        self.e_vel.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Per-channel interleaved layout `[e_0, ė_0, e_1, ė_1, …]`.
    pub fn interleaved(&self) -> Vec<f64> {
        self.e_pos.iter().zip(&self.e_vel).flat_map(|(a, b)| [*a, *b]).collect()
    }
}

/// CLF parameters as they appear in the experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClfConfig {
    /// One entry per output, or a single entry applied to every output.
    pub channels: Vec<CareWeights>,
    pub lambda: f64,
    pub eta_max: f64,
    pub eta_dot_max: f64,
}

impl Default for ClfConfig {
    fn default() -> Self {
        Self {
            channels: vec![CareWeights::default()],
            lambda: 1.0,
            eta_max: 0.1,
            eta_dot_max: 0.5,
        }
    }
}

impl ClfConfig {
    pub fn bundle(&self, outputs: usize) -> Result<ClfBundle> {
        let weights = match self.channels.len() {
            1 => vec![self.channels[0]; outputs],
            n if n == outputs => self.channels.clone(),
            n => {
                return Err(Error::Config(format!(
                    "clf.channels has {n} entries but the environment has {outputs} outputs"
                )))
            }
        };
        build_bundle(&weights, self.lambda, self.eta_max, self.eta_dot_max)
    }
}

/// Block-diagonal CLF with its decay rate and reward normalizers.
#[derive(Debug, Clone, PartialEq)]
pub struct ClfBundle {
    blocks: Vec<Mat2>,
    weights: Vec<CareWeights>,
    lambda: f64,
    eta_max: f64,
    eta_dot_max: f64,
    mu_max: f64,
    sigma_v: f64,
    sigma_vdot: f64,
}

/// Largest CARE residual accepted at bundle construction.
pub const CARE_TOLERANCE: f64 = 1e-10;

pub fn build_bundle(
    channels: &[CareWeights],
    lambda: f64,
    eta_max: f64,
    eta_dot_max: f64,
) -> Result<ClfBundle> {
    if channels.is_empty() {
        return Err(Error::validation("clf bundle", "at least one channel is required"));
    }
    check_finite("clf bundle", &[lambda, eta_max, eta_dot_max])?;
    if lambda <= 0.0 || eta_max <= 0.0 || eta_dot_max <= 0.0 {
        return Err(Error::validation(
            "clf bundle",
            "lambda, eta_max and eta_dot_max must be positive",
        ));
    }
    let mut blocks = Vec::with_capacity(channels.len());
    for w in channels {
        let p = care_2x2(w.q_pos, w.q_vel, w.r)?;
        let scale = 1.0 + w.q_pos.max(w.q_vel).max(p[1][1] * p[1][1] / w.r);
        let res = care_residual(&p, w.q_pos, w.q_vel, w.r);
        if res > CARE_TOLERANCE * scale {
            return Err(Error::Degenerate(format!("CARE residual {res:e} for {w:?}")));
        }
        blocks.push(p);
    }
    let mu_max = blocks
        .iter()
        .map(|b| sym2_eigenvalues(b).0)
        .fold(f64::NEG_INFINITY, f64::max);
    // P is symmetric positive definite, so its spectral norm is mu_max.
    let p_norm = mu_max;
    let sigma_v = mu_max * eta_max * eta_max;
    let sigma_vdot = 2.0 * p_norm * eta_max * eta_dot_max + lambda * mu_max * eta_max * eta_max;
    Ok(ClfBundle {
        blocks,
        weights: channels.to_vec(),
        lambda,
        eta_max,
        eta_dot_max,
        mu_max,
        sigma_v,
        sigma_vdot,
    })
}

impl ClfBundle {
    pub fn blocks(&self) -> &[Mat2] {
        &self.blocks
    }

    pub fn weights(&self) -> &[CareWeights] {
        &self.weights
    }

    pub fn channels(&self) -> usize {
        self.blocks.len()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn eta_max(&self) -> f64 {
        self.eta_max
    }

    pub fn eta_dot_max(&self) -> f64 {
        self.eta_dot_max
    }

    pub fn mu_max(&self) -> f64 {
        self.mu_max
    }

    pub fn sigma_v(&self) -> f64 {
        self.sigma_v
    }

    pub fn sigma_vdot(&self) -> f64 {
        self.sigma_vdot
    }

    /// Copy with a different decay rate (normalizers recomputed).
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        build_bundle(&self.weights, lambda, self.eta_max, self.eta_dot_max)
    }

    /// LQR feedback `μ_i = −r⁻¹ Bᵀ P_i η_i` for every channel.
    pub fn lqr_input(&self, eta: &OutputError) -> Result<Vec<f64>> {
        self.check_dim(eta)?;
        Ok(self
            .blocks
            .iter()
            .zip(&self.weights)
            .zip(eta.e_pos.iter().zip(&eta.e_vel))
            .map(|((p, w), (e, ed))| -(p[1][0] * e + p[1][1] * ed) / w.r)
            .collect())
    }

    /// `M_i = Q_i + P_i B r⁻¹ Bᵀ P_i`, so that closed-loop `V̇ = −Σ η_iᵀ M_i η_i`.
    pub fn closed_loop_dissipation(&self) -> Vec<Mat2> {
        self.blocks
            .iter()
            .zip(&self.weights)
            .map(|(p, w)| {
                let (a, b) = (p[0][1], p[1][1]);
                [
                    [w.q_pos + a * a / w.r, a * b / w.r],
                    [a * b / w.r, w.q_vel + b * b / w.r],
                ]
            })
            .collect()
    }

    /// Rate `c` with `V̇ ≤ −c V` under LQR feedback:
    /// `min λ_min(M_i) / μ_max(P)`.
    pub fn certified_decay_rate(&self) -> f64 {
        let lam_min = self
            .closed_loop_dissipation()
            .iter()
            .map(|m| sym2_eigenvalues(m).1)
            .fold(f64::INFINITY, f64::min);
        lam_min / self.mu_max
    }

    fn check_dim(&self, eta: &OutputError) -> Result<()> {
        if eta.dim() != self.blocks.len() || eta.e_vel.len() != self.blocks.len() {
            return Err(Error::Dimension {
                what: "output error",
                expected: self.blocks.len(),
                got: eta.dim(),
            });
        }
        Ok(())
    }
}

/// `V(η) = ηᵀ P η`.
pub fn lyapunov(eta: &OutputError, bundle: &ClfBundle) -> Result<f64> {
    bundle.check_dim(eta)?;
    Ok(bundle
        .blocks
        .iter()
        .zip(eta.e_pos.iter().zip(&eta.e_vel))
        .map(|(p, (e, ed))| quad_form(p, [*e, *ed]))
        .sum())
}

/// Forward difference `(V_{t+1} − V_t) / Δt`.
pub fn lyapunov_rate_fd(v_prev: f64, v_next: f64, dt: f64) -> Result<f64> {
    if !(dt > 0.0) {
        return Err(Error::validation("finite-difference step", format!("dt must be positive, got {dt}")));
    }
    Ok((v_next - v_prev) / dt)
}

/// `w_v · exp(−V / σ_v)`
pub fn reward_clf_tracking(v: f64, bundle: &ClfBundle, w_v: f64) -> f64 {
    w_v * (-v / bundle.sigma_v).exp()
}

/// `w · tanh(−(V̇ + λV))`, positive exactly when the decay condition holds.
pub fn reward_clf_decay_tanh(v: f64, vdot: f64, bundle: &ClfBundle, w: f64) -> f64 {
    w * (-(vdot + bundle.lambda * v)).tanh()
}

/// Penalty `−w · clamp((V̇ + λV) / σ_v̇, 0, 1)`; zero while the decay condition holds.
pub fn reward_clf_decay_clip(v: f64, vdot: f64, bundle: &ClfBundle, w: f64) -> f64 {
    -w * ((vdot + bundle.lambda * v) / bundle.sigma_vdot).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub w_v: f64,
    pub w_vdot: f64,
    pub w_hpos: f64,
    pub w_hvel: f64,
    pub w_u: f64,
    pub w_delta_a: f64,
    pub w_qlimit: f64,
    pub sigma_p: f64,
    pub sigma_vel_hol: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            w_v: 10.0,
            w_vdot: 2.0,
            w_hpos: 4.0,
            w_hvel: 2.0,
            w_u: 1e-5,
            w_delta_a: 1e-3,
            w_qlimit: 1.0,
            sigma_p: 0.02,
            sigma_vel_hol: 0.1,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [
            self.w_v,
            self.w_vdot,
            self.w_hpos,
            self.w_hvel,
            self.w_u,
            self.w_delta_a,
            self.w_qlimit,
        ];
        check_finite("reward weights", &w)?;
        if w.iter().any(|x| *x < 0.0) {
            return Err(Error::validation("reward weights", "weights must be non-negative"));
        }
        if !(self.sigma_p > 0.0 && self.sigma_vel_hol > 0.0) {
            return Err(Error::validation("reward weights", "sigma_p and sigma_vel_hol must be positive"));
        }
        Ok(())
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Stance-foot holonomic reward.
pub fn reward_holonomic(p_st: [f64; 3], p_st0: [f64; 3], v_st: [f64; 3], weights: &RewardWeights) -> f64 {
    let drift = [p_st[0] - p_st0[0], p_st[1] - p_st0[1], p_st[2] - p_st0[2]];
    weights.w_hpos * (-norm(&drift) / weights.sigma_p).exp()
        + weights.w_hvel * (-norm(&v_st) / weights.sigma_vel_hol).exp()
}

/// Effort, action-rate and joint-limit penalty (always ≤ 0).
pub fn reward_regularization(
    u: &[f64],
    a_t: &[f64],
    a_prev: &[f64],
    q: &[f64],
    q_min: &[f64],
    q_max: &[f64],
    weights: &RewardWeights,
) -> Result<f64> {
    if a_t.len() != a_prev.len() {
        return Err(Error::Dimension {
            what: "previous action",
            expected: a_t.len(),
            got: a_prev.len(),
        });
    }
    if q_min.len() != q.len() || q_max.len() != q.len() {
        return Err(Error::Dimension {
            what: "joint limits",
            expected: q.len(),
            got: q_min.len().min(q_max.len()),
        });
    }
    if let Some(i) = (0..q.len()).find(|&i| q_min[i] > q_max[i]) {
        return Err(Error::Config(format!(
            "joint {i}: q_min {} exceeds q_max {}",
            q_min[i], q_max[i]
        )));
    }
    let effort: f64 = u.iter().map(|x| x * x).sum();
    let rate: f64 = a_t.iter().zip(a_prev).map(|(a, b)| (a - b) * (a - b)).sum();
    let violation: f64 = (0..q.len())
        .map(|i| (q_min[i] - q[i]).max(0.0) + (q[i] - q_max[i]).max(0.0))
        .map(f64::abs)
        .sum();
    Ok(-weights.w_u * effort - weights.w_delta_a * rate - weights.w_qlimit * violation)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_v: f64,
    pub r_vdot: f64,
    pub r_hol: f64,
    pub r_reg: f64,
    pub total: f64,
}

/// Sums the four terms in the fixed order `r_v, r_v̇, r_hol, r_reg`.
pub fn total_reward(r_v: f64, r_vdot: f64, r_hol: f64, r_reg: f64) -> RewardBreakdown {
    RewardBreakdown {
        r_v,
        r_vdot,
        r_hol,
        r_reg,
        total: r_v + r_vdot + r_hol + r_reg,
    }
}
