//! The residual map `T(u) = f(u) − P_{Φ(u)}(f(u) − αu)` and the vector fields
//! of the nominal, finite-time and fixed-time projection flows.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vector;
use crate::problem::IqviProblem;

/// Residual norms at or below this value are treated as exact zeros.
pub const ZERO_RESIDUAL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "system", rename_all = "snake_case")]
pub enum FlowParams {
    /// `u̇ = −σ T(u)`.
    Nominal { sigma: f64 },
    /// `u̇ = −σ T(u) / ‖T(u)‖^{(γ−2)/(γ−1)}`.
    FiniteTime { sigma: f64, gamma: f64 },
    /// `u̇ = −ψ(u) T(u)` with `ψ = a₁‖T‖^{r₁−1} + a₂‖T‖^{r₂−1}`.
    FixedTime { a1: f64, a2: f64, r1: f64, r2: f64 },
}

impl FlowParams {
    pub fn nominal(sigma: f64) -> Result<Self> {
        Self::Nominal { sigma }.validated()
    }

    pub fn finite_time(sigma: f64, gamma: f64) -> Result<Self> {
        Self::FiniteTime { sigma, gamma }.validated()
    }

    pub fn fixed_time(a1: f64, a2: f64, r1: f64, r2: f64) -> Result<Self> {
        Self::FixedTime { a1, a2, r1, r2 }.validated()
    }

    pub fn validated(self) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        match self {
            Self::Nominal { sigma } if !(sigma > 0.0 && sigma.is_finite()) => bad(format!("sigma must be > 0, got {sigma}")),
            Self::FiniteTime { sigma, .. } if !(sigma > 0.0 && sigma.is_finite()) => {
                bad(format!("sigma must be > 0, got {sigma}"))
            }
            Self::FiniteTime { gamma, .. } if !(gamma > 2.0 && gamma.is_finite()) => {
                bad(format!("gamma must be > 2, got {gamma}"))
            }
            Self::FixedTime { a1, a2, .. } if !(a1 > 0.0 && a2 > 0.0 && a1.is_finite() && a2.is_finite()) => {
                bad(format!("a1, a2 must be > 0, got {a1}, {a2}"))
            }
            Self::FixedTime { r1, r2, .. } if !(r1 > 0.0 && r1 < 1.0 && r2 > 1.0 && r2.is_finite()) => {
                bad(format!("need 0 < r1 < 1 < r2, got r1 = {r1}, r2 = {r2}"))
            }
            ok => Ok(ok),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::Nominal { .. } => "nominal",
            Self::FiniteTime { .. } => "finite",
            Self::FixedTime { .. } => "fixed",
        }
    }

    /// Scalar gain `g(‖T‖)` such that the vector field is `−g · T`.
    ///
    /// Zero whenever `‖T‖ ≤ ZERO_RESIDUAL`, for every variant.
    pub fn gain(&self, residual_norm: f64) -> f64 {
        if residual_norm <= ZERO_RESIDUAL {
            return 0.0;
        }
        match *self {
            Self::Nominal { sigma } => sigma,
            Self::FiniteTime { sigma, gamma } => sigma * residual_norm.powf(-(gamma - 2.0) / (gamma - 1.0)),
            Self::FixedTime { a1, a2, r1, r2 } => a1 * residual_norm.powf(r1 - 1.0) + a2 * residual_norm.powf(r2 - 1.0),
        }
    }
}

/// `T(u) = f(u) − P_{Φ(u)}(f(u) − αu)`.
pub fn residual(p: &IqviProblem, u: &Vector) -> Result<Vector> {
    let fu = p.eval_f(u)?;
    let shifted = &fu - u * p.alpha();
    let proj = p.set().project(u, &shifted)?;
    Ok(fu - proj)
}

/// `ψ(u)` of the fixed-time flow.
pub fn psi(p: &IqviProblem, fp: &FlowParams, u: &Vector) -> Result<f64> {
    if !matches!(fp, FlowParams::FixedTime { .. }) {
        return Err(Error::InvalidArgument("psi is defined for the fixed-time flow only".into()));
    }
    Ok(fp.gain(residual(p, u)?.norm()))
}

/// Right-hand side of the selected flow at `u`.
pub fn rhs(p: &IqviProblem, fp: &FlowParams, u: &Vector) -> Result<Vector> {
    let t = residual(p, u)?;
    Ok(rhs_from_residual(fp, &t))
}

pub(crate) fn rhs_from_residual(fp: &FlowParams, t: &Vector) -> Vector {
    let g = fp.gain(t.norm());
    if g == 0.0 {
        Vector::zeros(t.len())
    } else {
        t * (-g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::MovingSet;
    use crate::problem::OperatorSpec;
    use nalgebra::dmatrix;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn example1() -> IqviProblem {
        let op = OperatorSpec::affine(dmatrix![3.2, 2.0; -0.6, 1.0], Vector::zeros(2), None).unwrap();
        IqviProblem::new(2, op, MovingSet::abs_box(), 2.0).unwrap()
    }

    fn scalar_singleton(slope: f64) -> IqviProblem {
        let op = OperatorSpec::scalar(slope).unwrap();
        IqviProblem::new(1, op, MovingSet::singleton(Vector::zeros(1)).unwrap(), 1.0).unwrap()
    }

    /// Identity-valued residual: `f(u) = u + t` on a set that always projects
    /// to `0`, so `T(u) = u + t`; at `u = 0` this yields the residual `t`.
    fn residual_equal_to(t: &[f64]) -> (IqviProblem, Vector) {
        let n = t.len();
        let op = OperatorSpec::affine(nalgebra::DMatrix::identity(n, n), v(t), None).unwrap();
        let p = IqviProblem::new(n, op, MovingSet::singleton(Vector::zeros(n)).unwrap(), 1.0).unwrap();
        (p, Vector::zeros(n))
    }

    #[test]
    fn residual_examples() {
        let p = example1();
        assert_eq!(residual(&p, &Vector::zeros(2)).unwrap(), Vector::zeros(2));
        let t = residual(&p, &v(&[1.0, 1.0])).unwrap();
        assert!((t[0] - 4.2).abs() < 1e-14 && (t[1] - 1.4).abs() < 1e-14);
        let t = residual(&scalar_singleton(2.0), &v(&[0.5])).unwrap();
        assert_eq!(t[0], 1.0);
    }

    #[test]
    fn psi_examples() {
        let fp = FlowParams::fixed_time(1.0, 1.0, 0.5, 2.0).unwrap();
        let (p, u) = residual_equal_to(&[0.6, 0.8]);
        assert!((psi(&p, &fp, &u).unwrap() - 2.0).abs() < 1e-15);
        let (p, u) = residual_equal_to(&[0.0, 4.0]);
        assert!((psi(&p, &fp, &u).unwrap() - 4.5).abs() < 1e-14);
        let (p, u) = residual_equal_to(&[0.0, 0.0]);
        assert_eq!(psi(&p, &fp, &u).unwrap(), 0.0);
        assert!(psi(&p, &FlowParams::nominal(1.0).unwrap(), &u).is_err());
    }

    #[test]
    fn finite_time_rhs_scales_to_power_of_residual() {
        let fp = FlowParams::finite_time(1.0, 3.0).unwrap();
        let (p, u) = residual_equal_to(&[3.0, 4.0]);
        let r = rhs(&p, &fp, &u).unwrap();
        let s = 5f64.powf(-0.5);
        assert!((r[0] + 3.0 * s).abs() < 1e-15 && (r[1] + 4.0 * s).abs() < 1e-15);
        assert!((r.norm() - 5f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn fixed_time_rhs_scalar_example() {
        let fp = FlowParams::fixed_time(1.0, 1.0, 0.5, 2.0).unwrap();
        let (p, u) = residual_equal_to(&[1.0]);
        assert!((rhs(&p, &fp, &u).unwrap()[0] + 2.0).abs() < 1e-15);
    }

    #[test]
    fn every_variant_vanishes_at_solution() {
        let p = example1();
        for fp in [
            FlowParams::nominal(1.0).unwrap(),
            FlowParams::finite_time(2.0, 3.5).unwrap(),
            FlowParams::fixed_time(20.0, 20.0, 0.95, 1.5).unwrap(),
        ] {
            assert_eq!(rhs(&p, &fp, &Vector::zeros(2)).unwrap(), Vector::zeros(2));
        }
    }

    #[test]
    fn parameter_bounds_are_enforced() {
        assert!(FlowParams::nominal(0.0).is_err());
        assert!(FlowParams::finite_time(1.0, 2.0).is_err());
        assert!(FlowParams::fixed_time(1.0, 1.0, 1.0, 2.0).is_err());
        assert!(FlowParams::fixed_time(1.0, 1.0, 0.5, 1.0).is_err());
        assert!(FlowParams::fixed_time(0.0, 1.0, 0.5, 2.0).is_err());
    }

    #[test]
    fn fixed_time_norm_identity() {
        let fp = FlowParams::fixed_time(1.3, 0.7, 0.4, 2.5).unwrap();
        for t in [[0.3, -0.1], [12.0, 5.0], [1e-6, 2e-6]] {
            let (p, u) = residual_equal_to(&t);
            let n = v(&t).norm();
            let expected = 1.3 * n.powf(0.4) + 0.7 * n.powf(2.5);
            let got = rhs(&p, &fp, &u).unwrap().norm();
            assert!((got - expected).abs() <= 1e-12 * expected, "{got} vs {expected}");
        }
    }
}
