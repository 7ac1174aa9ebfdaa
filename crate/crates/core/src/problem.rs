//! Problem instances: the operator `f`, the moving set `Φ`, the scaling `α`
//! and the constants the certificates are computed from.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{MovingSet, Vector};
use crate::traffic::RoadPricingOperator;

/// A single-valued operator `ℝⁿ → ℝⁿ` supplied by the caller.
pub trait VectorField: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn eval(&self, u: &Vector) -> Result<Vector>;
}

#[derive(Debug, Clone)]
pub enum OperatorKind {
    /// `M u + b`.
    Affine { matrix: DMatrix<f64>, offset: Vector },
    /// `slope · u`.
    Scalar { slope: f64 },
    /// Equilibrium flows on the tolled links as a function of the tolls.
    TrafficEquilibrium(Arc<RoadPricingOperator>),
    Custom(Arc<dyn VectorField>),
}

/// Lipschitz constant `L` and strong-monotonicity modulus `β`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OperatorConstants {
    pub lipschitz: f64,
    pub monotonicity: f64,
}

impl OperatorConstants {
    pub fn new(lipschitz: f64, monotonicity: f64) -> Result<Self> {
        if !(lipschitz.is_finite() && lipschitz > 0.0) {
            return Err(Error::InvalidArgument(format!("L must be positive, got {lipschitz}")));
        }
        if !(monotonicity.is_finite() && monotonicity >= 0.0) {
            return Err(Error::InvalidArgument(format!("beta must be >= 0, got {monotonicity}")));
        }
        if monotonicity > lipschitz {
            return Err(Error::InvalidArgument(format!(
                "beta = {monotonicity} exceeds L = {lipschitz}; no operator has that pair"
            )));
        }
        Ok(Self { lipschitz, monotonicity })
    }
}

#[derive(Debug, Clone)]
pub struct OperatorSpec {
    kind: OperatorKind,
    declared: Option<OperatorConstants>,
}

impl OperatorSpec {
    pub fn new(kind: OperatorKind, declared: Option<OperatorConstants>) -> Result<Self> {
        match &kind {
            OperatorKind::Affine { matrix, offset } => {
                if !matrix.is_square() {
                    return Err(Error::InvalidArgument(format!(
                        "affine matrix must be square, got {}x{}",
                        matrix.nrows(),
                        matrix.ncols()
                    )));
                }
                if offset.len() != matrix.nrows() {
                    return Err(Error::DimensionMismatch { expected: matrix.nrows(), found: offset.len() });
                }
                if !matrix.iter().chain(offset.iter()).all(|x| x.is_finite()) {
                    return Err(Error::NonFiniteInput("affine operator"));
                }
            }
            OperatorKind::Scalar { slope } => {
                if !slope.is_finite() {
                    return Err(Error::NonFiniteInput("scalar slope"));
                }
            }
            _ => {}
        }
        Ok(Self { kind, declared })
    }

    pub fn affine(matrix: DMatrix<f64>, offset: Vector, declared: Option<OperatorConstants>) -> Result<Self> {
        Self::new(OperatorKind::Affine { matrix, offset }, declared)
    }

    /// `slope · u`; its constants are known exactly when `slope > 0`.
    pub fn scalar(slope: f64) -> Result<Self> {
        let declared = if slope > 0.0 { Some(OperatorConstants::new(slope, slope)?) } else { None };
        Self::new(OperatorKind::Scalar { slope }, declared)
    }

    pub fn kind(&self) -> &OperatorKind {
        &self.kind
    }

    pub fn declared(&self) -> Option<OperatorConstants> {
        self.declared
    }

    pub fn fixed_dim(&self) -> Option<usize> {
        match &self.kind {
            OperatorKind::Affine { matrix, .. } => Some(matrix.nrows()),
            OperatorKind::Scalar { .. } => None,
            OperatorKind::TrafficEquilibrium(op) => Some(op.dim()),
            OperatorKind::Custom(op) => Some(op.dim()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct IqviProblem {
    dim: usize,
    operator: OperatorSpec,
    set: MovingSet,
    alpha: f64,
    known_solution: Option<Vector>,
}

impl IqviProblem {
    pub fn new(dim: usize, operator: OperatorSpec, set: MovingSet, alpha: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be at least 1".into()));
        }
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
        }
        for d in [operator.fixed_dim(), set.fixed_dim()].into_iter().flatten() {
            if d != dim {
                return Err(Error::DimensionMismatch { expected: dim, found: d });
            }
        }
        if let crate::geometry::SetKind::TranslatedBox { active, .. } = set.kind() {
            if let Some(&i) = active.iter().find(|&&i| i >= dim) {
                return Err(Error::InvalidArgument(format!("active index {i} out of range for dimension {dim}")));
            }
        }
        Ok(Self { dim, operator, set, alpha, known_solution: None })
    }

    /// Attaches a known solution; used only to report errors in trajectories.
    pub fn with_known_solution(mut self, solution: Vector) -> Result<Self> {
        self.check_state(&solution)?;
        self.known_solution = Some(solution);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn operator(&self) -> &OperatorSpec {
        &self.operator
    }

    pub fn set(&self) -> &MovingSet {
        &self.set
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn known_solution(&self) -> Option<&Vector> {
        self.known_solution.as_ref()
    }

    pub(crate) fn check_state(&self, u: &Vector) -> Result<()> {
        if u.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: u.len() });
        }
        if !u.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFiniteInput("state"));
        }
        Ok(())
    }

    pub fn eval_f(&self, u: &Vector) -> Result<Vector> {
        self.check_state(u)?;
        let out = match &self.operator.kind {
            OperatorKind::Affine { matrix, offset } => matrix * u + offset,
            OperatorKind::Scalar { slope } => u * *slope,
            OperatorKind::TrafficEquilibrium(op) => op.eval(u)?,
            OperatorKind::Custom(op) => op.eval(u)?,
        };
        if out.len() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, found: out.len() });
        }
        Ok(out)
    }

    /// Sampled Lipschitz and monotonicity ratios of `f` over pairs drawn from
    /// the cube `[−radius, radius]^n`.
    pub fn estimate_constants(&self, samples: usize, radius: f64, seed: u64) -> Result<OperatorConstantsEstimate> {
        if samples < 2 {
            return Err(Error::InvalidArgument("estimate_constants needs at least 2 samples".into()));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidArgument(format!("radius must be positive, got {radius}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.dim;
        let mut lipschitz: f64 = 0.0;
        let mut monotonicity = f64::INFINITY;
        for _ in 0..samples {
            let u = Vector::from_fn(n, |_, _| rng.random_range(-radius..=radius));
            let v = Vector::from_fn(n, |_, _| rng.random_range(-radius..=radius));
            let du = &u - &v;
            let dist2 = du.norm_squared();
            if dist2 == 0.0 {
                continue;
            }
            let df = self.eval_f(&u)? - self.eval_f(&v)?;
            lipschitz = lipschitz.max(df.norm() / dist2.sqrt());
            monotonicity = monotonicity.min(df.dot(&du) / dist2);
        }
        Ok(OperatorConstantsEstimate { lipschitz, monotonicity })
    }
}

/// Empirical counterparts of [`OperatorConstants`]; `monotonicity` may be
/// negative when the operator is not monotone.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct OperatorConstantsEstimate {
    pub lipschitz: f64,
    pub monotonicity: f64,
}
