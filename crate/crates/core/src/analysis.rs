//! Stability certificates and settling-time bounds.
//!
//! With `ρ = √(L² + α² − 2αβ)`, two conditions are checked independently:
//! `ρ + μ < α` (existence and uniqueness of the solution) and `ρ + μ < β`
//! (the finite- and fixed-time convergence guarantees). The bound calculators
//! refuse to run when the second one fails; solvers never consult them.

use std::f64::consts::{FRAC_PI_2, PI, SQRT_2};
use std::fmt::Write as _;

use serde::Serialize;

use crate::dynamics::FlowParams;
use crate::error::{Error, Result};
use crate::problem::{IqviProblem, OperatorConstantsEstimate};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProblemConstants {
    pub lipschitz: f64,
    pub monotonicity: f64,
    pub mu: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityCertificate {
    pub constants: ProblemConstants,
    pub rho: f64,
    pub condition_a: bool,
    pub condition_beta: bool,
    pub declared_used: bool,
    pub estimated: Option<OperatorConstantsEstimate>,
    pub discrepancy: Option<String>,
}

impl StabilityCertificate {
    /// `β − μ − ρ`, positive exactly when `condition_beta` holds.
    pub fn margin(&self) -> f64 {
        self.constants.monotonicity - self.constants.mu - self.rho
    }

    fn require_beta(&self) -> Result<()> {
        if self.condition_beta {
            Ok(())
        } else {
            Err(Error::ConditionViolated { lhs: self.rho + self.constants.mu, beta: self.constants.monotonicity })
        }
    }
}

/// Certificate from explicit constants.
pub fn certify_constants(c: ProblemConstants) -> Result<StabilityCertificate> {
    let disc = c.lipschitz * c.lipschitz + c.alpha * c.alpha - 2.0 * c.alpha * c.monotonicity;
    if disc < 0.0 {
        return Err(Error::InvalidCertificate { discriminant: disc });
    }
    let rho = disc.sqrt();
    Ok(StabilityCertificate {
        constants: c,
        rho,
        condition_a: rho + c.mu < c.alpha,
        condition_beta: rho + c.mu < c.monotonicity,
        declared_used: false,
        estimated: None,
        discrepancy: None,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct EstimateSettings {
    pub samples: usize,
    pub radius: f64,
    pub seed: u64,
}

impl Default for EstimateSettings {
    fn default() -> Self {
        Self { samples: 4000, radius: 1.0, seed: 0 }
    }
}

pub fn certify(p: &IqviProblem, use_declared: bool) -> Result<StabilityCertificate> {
    certify_with(p, use_declared, &EstimateSettings::default())
}

/// Certificate for `p`, built from declared constants when `use_declared`
/// is set, otherwise from sampled estimates. Estimates are always computed
/// and a discrepancy note is attached when they contradict the declaration
/// by more than 1%.
pub fn certify_with(p: &IqviProblem, use_declared: bool, settings: &EstimateSettings) -> Result<StabilityCertificate> {
    let est = p.estimate_constants(settings.samples, settings.radius, settings.seed)?;
    let declared = p.operator().declared();
    let (lipschitz, monotonicity) = match (use_declared, declared) {
        (true, Some(d)) => (d.lipschitz, d.monotonicity),
        (true, None) => {
            return Err(Error::InvalidArgument("operator has no declared constants; use estimates".into()));
        }
        (false, _) => (est.lipschitz, est.monotonicity.max(0.0)),
    };
    let mut cert = certify_constants(ProblemConstants { lipschitz, monotonicity, mu: p.set().mu(), alpha: p.alpha() })?;
    cert.declared_used = use_declared;
    cert.estimated = Some(est);
    if let Some(d) = declared {
        let mut notes = Vec::new();
        if est.lipschitz > 1.01 * d.lipschitz {
            notes.push(format!("estimated L = {:.6} exceeds declared L = {}", est.lipschitz, d.lipschitz));
        }
        if est.monotonicity < 0.99 * d.monotonicity {
            notes.push(format!("estimated beta = {:.6} is below declared beta = {}", est.monotonicity, d.monotonicity));
        }
        if !notes.is_empty() {
            cert.discrepancy = Some(notes.join("; "));
        }
    }
    Ok(cert)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FixedTimeBound {
    pub r1: f64,
    pub r2: f64,
    pub q1: f64,
    pub q2: f64,
    pub p1: f64,
    pub p2: f64,
    pub s1: f64,
    pub s2: f64,
    /// `1/(s₁(1−p₁)) + 1/(s₂(p₂−1))`.
    pub t_max_general: f64,
    /// `πξ/√(s₁s₂)`, only for `r₁ = 1 − 1/ξ`, `r₂ = 1 + 1/ξ`.
    pub t_max_symmetric: Option<f64>,
}

/// Settling-time bound of the fixed-time flow.
///
/// Along trajectories `V = ½‖u − u*‖²` obeys `V̇ ≤ −(s₁V^{p₁} + s₂V^{p₂})`
/// with `p_i = (1 + r_i)/2` and `s_i = 2^{p_i} q_i`.
pub fn fixed_time_bound(cert: &StabilityCertificate, fp: &FlowParams) -> Result<FixedTimeBound> {
    let FlowParams::FixedTime { a1, a2, r1, r2 } = fp.validated()? else {
        return Err(Error::InvalidArgument("fixed-time bound needs fixed-time parameters".into()));
    };
    cert.require_beta()?;
    let c = &cert.constants;
    let margin = cert.margin();
    let q1 = a1 * margin / (c.lipschitz + c.mu + cert.rho).powf(1.0 - r1);
    let q2 = a2 * margin.powf(r2);
    let p1 = (1.0 + r1) / 2.0;
    let p2 = (1.0 + r2) / 2.0;
    let s1 = 2f64.powf(p1) * q1;
    let s2 = 2f64.powf(p2) * q2;
    let t_max_general = 1.0 / (s1 * (1.0 - p1)) + 1.0 / (s2 * (p2 - 1.0));
    let t_max_symmetric = ((r1 + r2 - 2.0).abs() <= 1e-12).then(|| {
        let xi = 1.0 / (1.0 - r1);
        PI * xi / (s1 * s2).sqrt()
    });
    Ok(FixedTimeBound { r1, r2, q1, q2, p1, p2, s1, s2, t_max_general, t_max_symmetric })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FiniteTimeBound {
    /// `γ / (2(γ − 1))`.
    pub p: f64,
    /// `σ (β − ρ − μ)^{γ/(γ−1)}`.
    pub m: f64,
    /// `M · 2^p`.
    pub k: f64,
    pub initial_distance: f64,
    pub t_max: f64,
}

impl FiniteTimeBound {
    /// `d^{2(1−p)} / (2^{1−p} K (1 − p))`.
    pub fn t_max_for(&self, initial_distance: f64) -> f64 {
        let p = self.p;
        initial_distance.powf(2.0 * (1.0 - p)) / (2f64.powf(1.0 - p) * self.k * (1.0 - p))
    }
}

/// Settling-time bound of the finite-time flow started at distance `d0`
/// from the solution.
pub fn finite_time_bound(cert: &StabilityCertificate, fp: &FlowParams, d0: f64) -> Result<FiniteTimeBound> {
    let FlowParams::FiniteTime { sigma, gamma } = fp.validated()? else {
        return Err(Error::InvalidArgument("finite-time bound needs finite-time parameters".into()));
    };
    if !(d0 >= 0.0 && d0.is_finite()) {
        return Err(Error::InvalidArgument(format!("initial distance must be >= 0, got {d0}")));
    }
    cert.require_beta()?;
    let p = gamma / (2.0 * (gamma - 1.0));
    let m = sigma * cert.margin().powf(gamma / (gamma - 1.0));
    let k = m * 2f64.powf(p);
    let mut bound = FiniteTimeBound { p, m, k, initial_distance: d0, t_max: 0.0 };
    bound.t_max = bound.t_max_for(d0);
    Ok(bound)
}

/// Error envelope of the fixed-step Euler iterates of the fixed-time flow
/// with `r₁ = 1 − 2/ν`, `r₂ = 1 + 2/ν`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorEnvelope {
    pub nu: f64,
    pub lambda: f64,
    pub epsilon: f64,
    pub s1: f64,
    pub s2: f64,
    pub n_star: usize,
}

impl ErrorEnvelope {
    /// Upper bound on `‖u_n − u*‖`; infinite at `n = 0`, `ε` past `n*` or
    /// once the tangent argument reaches zero.
    pub fn bound(&self, n: usize) -> f64 {
        if n == 0 {
            return f64::INFINITY;
        }
        if n > self.n_star {
            return self.epsilon;
        }
        let root = (self.s1 * self.s2).sqrt();
        let arg = FRAC_PI_2 - root / self.nu * self.lambda * n as f64;
        if arg <= 0.0 {
            return self.epsilon;
        }
        SQRT_2 * ((self.s1 / self.s2).sqrt() * arg.tan()).powf(self.nu / 2.0) + self.epsilon
    }
}

pub fn error_envelope(ftb: &FixedTimeBound, nu: f64, lambda: f64, epsilon: f64) -> Result<ErrorEnvelope> {
    if !(nu > 2.0 && nu.is_finite()) {
        return Err(Error::InvalidArgument(format!("nu must be > 2, got {nu}")));
    }
    if !(lambda > 0.0 && lambda.is_finite() && epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!("need lambda > 0 and epsilon > 0, got {lambda}, {epsilon}")));
    }
    if (ftb.r1 - (1.0 - 2.0 / nu)).abs() > 1e-12 || (ftb.r2 - (1.0 + 2.0 / nu)).abs() > 1e-12 {
        return Err(Error::ExponentMismatch { r1: ftb.r1, r2: ftb.r2, nu });
    }
    let n_star = ceil_snapped(nu * PI / (2.0 * lambda * (ftb.s1 * ftb.s2).sqrt())).max(1.0) as usize;
    Ok(ErrorEnvelope { nu, lambda, epsilon, s1: ftb.s1, s2: ftb.s2, n_star })
}

/// Ceiling that treats values within rounding of an integer as that integer.
fn ceil_snapped(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= 1e-12 * x.abs().max(1.0) {
        r
    } else {
        x.ceil()
    }
}

/// Certificate plus whichever bounds apply, as emitted by the CLI.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub certificate: StabilityCertificate,
    pub fixed_time: Option<FixedTimeBound>,
    pub finite_time: Option<FiniteTimeBound>,
}

impl Report {
    /// `key: value` lines, one quantity per line.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        let c = &self.certificate;
        let k = &c.constants;
        let _ = writeln!(out, "L: {}", k.lipschitz);
        let _ = writeln!(out, "beta: {}", k.monotonicity);
        let _ = writeln!(out, "mu: {}", k.mu);
        let _ = writeln!(out, "alpha: {}", k.alpha);
        let _ = writeln!(out, "rho: {}", c.rho);
        let _ = writeln!(out, "condition_a: {}", c.condition_a);
        let _ = writeln!(out, "condition_beta: {}", c.condition_beta);
        let _ = writeln!(out, "declared_used: {}", c.declared_used);
        if let Some(e) = &c.estimated {
            let _ = writeln!(out, "estimated_L: {}", e.lipschitz);
            let _ = writeln!(out, "estimated_beta: {}", e.monotonicity);
        }
        if let Some(d) = &c.discrepancy {
            let _ = writeln!(out, "discrepancy: {d}");
        }
        if let Some(b) = &self.fixed_time {
            for (key, v) in [
                ("q1", b.q1),
                ("q2", b.q2),
                ("p1", b.p1),
                ("p2", b.p2),
                ("s1", b.s1),
                ("s2", b.s2),
                ("t_max_general", b.t_max_general),
            ] {
                let _ = writeln!(out, "fixed_time.{key}: {v}");
            }
            if let Some(t) = b.t_max_symmetric {
                let _ = writeln!(out, "fixed_time.t_max_symmetric: {t}");
            }
        }
        if let Some(b) = &self.finite_time {
            for (key, v) in [("p", b.p), ("M", b.m), ("K", b.k), ("d0", b.initial_distance), ("t_max", b.t_max)] {
                let _ = writeln!(out, "finite_time.{key}: {v}");
            }
        }
        out
    }
}
