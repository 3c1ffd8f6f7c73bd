use serde::{Deserialize, Serialize};

use super::AlgorithmError;
use crate::problem::ProblemInstance;
use crate::topology::NetworkTopology;

/// Everything the theorem step-size formulas depend on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremInputs {
    pub m0: f64,
    pub l0: f64,
    pub m_g: f64,
    pub l_g: f64,
    pub l_max: f64,
    pub z: f64,
    pub r_bar: f64,
    pub d: usize,
    pub n: usize,
    pub b_bar: f64,
    pub b_frak: f64,
    pub rho: f64,
    pub dual_bound: f64,
    pub horizon: u64,
    /// `false` when the problem has no coupled constraints.
    pub constrained: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremConstants {
    pub inputs: TheoremInputs,
    pub xi: f64,
    pub zeta: f64,
    pub eta: f64,
    pub mu: f64,
    pub u: f64,
    /// Per-round primal step `1 / (L0 + L_max + 1/eta)`.
    pub eta_step: f64,
}

impl TheoremConstants {
    pub fn from_inputs(inputs: TheoremInputs) -> Result<Self, AlgorithmError> {
        let TheoremInputs {
            m0,
            l0,
            m_g,
            l_g,
            l_max,
            z,
            r_bar,
            d,
            n,
            b_bar,
            b_frak,
            rho,
            dual_bound: c,
            horizon,
            constrained,
        } = inputs.clone();
        let bad = |msg: &str| Err(AlgorithmError::InvalidConstants(msg.to_string()));
        let finite_nonneg = [m0, l0, m_g, l_g, l_max, z, b_bar, b_frak, rho, c];
        if finite_nonneg.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return bad("constants must be finite and nonnegative");
        }
        if !(r_bar > 0.0) || d == 0 || n == 0 || horizon == 0 {
            return bad("need R_bar > 0, d >= 1, n >= 1, T >= 1");
        }
        if rho >= 1.0 {
            return bad("mixing matrix is not contractive (rho >= 1)");
        }
        if constrained && !(c > 0.0) {
            return bad("dual bound C must be positive");
        }
        let df = d as f64;
        let t = horizon as f64;
        let xi = (m0 * b_frak * df.sqrt() + l0 * b_bar * df * r_bar + 2.0 * 3f64.sqrt() * b_frak * df * m0)
            * (24.0 * m0 * m0 + 27.0 * m_g * m_g * c * c).sqrt()
            + 104.0 * m0 * m0 * df
            + 124.0 * m_g * m_g * df * c * c;
        let zeta = 403.0 * df * m_g * m_g * r_bar
            + (6.0 * df * z * z + 3.0 * m_g * m_g * r_bar + 243.0 * r_bar * df * m_g * m_g) / (1.0 - rho);
        if !(xi > 0.0) {
            return bad("xi must be positive (M0 or M_g must be nonzero)");
        }
        let eta = r_bar / (t * xi).sqrt();
        let mu = if constrained {
            if !(zeta > 0.0) {
                return bad("zeta must be positive for a constrained problem");
            }
            c * (2.0 * n as f64).sqrt() / (t * zeta).sqrt()
        } else {
            0.0
        };
        let first = if l_g > 0.0 { m_g / ((df + 6.0) * l_g) } else { f64::INFINITY };
        let curvature = l0.max(l_g);
        let second = if curvature > 0.0 {
            1.0 / (df * t.sqrt() * curvature).sqrt()
        } else {
            f64::INFINITY
        };
        let u = first.min(second);
        if !(u > 0.0 && u.is_finite()) {
            return bad("smoothing radius is not a positive finite number");
        }
        let eta_step = 1.0 / (l0 + l_max + 1.0 / eta);
        Ok(Self {
            inputs,
            xi,
            zeta,
            eta,
            mu,
            u,
            eta_step,
        })
    }
}

/// Theorem parameters for `instance` on `topology` over horizon `horizon`.
pub fn compute_theorem_params(
    instance: &ProblemInstance,
    topology: &NetworkTopology,
    horizon: u64,
    dual_bound: f64,
) -> Result<TheoremConstants, AlgorithmError> {
    let k = instance.constants();
    TheoremConstants::from_inputs(TheoremInputs {
        m0: k.m0,
        l0: k.l0,
        m_g: k.m_g,
        l_g: k.l_g,
        l_max: k.l_max,
        z: k.z,
        r_bar: k.r_bar,
        d: instance.total_dim(),
        n: instance.n(),
        b_bar: topology.b_bar(),
        b_frak: topology.b_frak(),
        rho: topology.rho(),
        dual_bound,
        horizon,
        constrained: instance.m() > 0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum StepRule {
    Constant { eta: f64, mu: f64 },
    /// `eta_t = mu_t = 1 / (sqrt(t) + c)` with rounds counted from 1.
    Diminishing { c: f64 },
    Theorem(TheoremConstants),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSchedule {
    pub rule: StepRule,
    /// Extrapolation weight.
    pub theta: f64,
    /// Averaging weight.
    pub gamma: f64,
    /// Smoothing radius.
    pub u: f64,
    /// Dual ball radius `C`.
    pub dual_bound: f64,
    pub horizon: u64,
}

impl ParamSchedule {
    pub fn constant(eta: f64, mu: f64, u: f64, dual_bound: f64, horizon: u64) -> Self {
        Self {
            rule: StepRule::Constant { eta, mu },
            theta: 1.0,
            gamma: 1.0,
            u,
            dual_bound,
            horizon,
        }
    }

    pub fn diminishing(c: f64, u: f64, dual_bound: f64, horizon: u64) -> Self {
        Self {
            rule: StepRule::Diminishing { c },
            theta: 1.0,
            gamma: 1.0,
            u,
            dual_bound,
            horizon,
        }
    }

    pub fn theorem(constants: TheoremConstants) -> Self {
        Self {
            u: constants.u,
            dual_bound: constants.inputs.dual_bound,
            horizon: constants.inputs.horizon,
            theta: 1.0,
            gamma: 1.0,
            rule: StepRule::Theorem(constants),
        }
    }

    /// Primal step for 0-based round `t`.
    pub fn eta(&self, t: u64) -> f64 {
        match &self.rule {
            StepRule::Constant { eta, .. } => *eta,
            StepRule::Diminishing { c } => 1.0 / (((t + 1) as f64).sqrt() + c),
            StepRule::Theorem(k) => k.eta_step,
        }
    }

    /// Dual step for 0-based round `t`.
    pub fn mu(&self, t: u64) -> f64 {
        match &self.rule {
            StepRule::Constant { mu, .. } => *mu,
            StepRule::Diminishing { c } => 1.0 / (((t + 1) as f64).sqrt() + c),
            StepRule::Theorem(k) => k.mu,
        }
    }

    pub fn theta(&self, _t: u64) -> f64 {
        self.theta
    }

    pub fn gamma(&self, _t: u64) -> f64 {
        self.gamma
    }

    /// Whether `gamma_t theta_t = gamma_{t-1}` and `gamma_t / mu_t` is
    /// constant over the horizon.
    pub fn satisfies_averaging_conditions(&self) -> bool {
        let ratio_constant = match self.rule {
            StepRule::Constant { .. } | StepRule::Theorem(_) => true,
            StepRule::Diminishing { .. } => false,
        };
        (self.gamma * self.theta - self.gamma).abs() <= 1e-15 * self.gamma && ratio_constant
    }

    pub fn validate(&self, constrained: bool) -> Result<(), AlgorithmError> {
        let bad = |msg: String| Err(AlgorithmError::InvalidSchedule(msg));
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if !(self.u > 0.0 && self.u.is_finite()) {
            return bad(format!("smoothing radius must be positive, got {}", self.u));
        }
        if !(self.theta >= 0.0 && self.theta.is_finite()) {
            return bad(format!("theta must be nonnegative, got {}", self.theta));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        if constrained && !(self.dual_bound > 0.0 && self.dual_bound.is_finite()) {
            return bad(format!("dual bound must be positive, got {}", self.dual_bound));
        }
        match &self.rule {
            StepRule::Constant { eta, mu } => {
                if !(*eta > 0.0 && eta.is_finite()) || !(*mu > 0.0 && mu.is_finite()) {
                    return bad(format!("step sizes must be positive, got eta={eta}, mu={mu}"));
                }
            }
            StepRule::Diminishing { c } => {
                if !(*c >= 0.0 && c.is_finite()) {
                    return bad(format!("offset c must be nonnegative, got {c}"));
                }
            }
            StepRule::Theorem(_) => {
                if !self.satisfies_averaging_conditions() {
                    return bad("theorem schedule requires theta = gamma = 1".into());
                }
            }
        }
        Ok(())
    }
}
