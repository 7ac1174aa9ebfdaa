//! TOML problem files.
//!
//! ```toml
//! dim = 2
//! alpha = 2.0
//! known_solution = [0.0, 0.0]
//! u0 = [1.0, 1.0]
//!
//! [operator]
//! kind = "affine"            # or "scalar"
//! matrix = [[3.2, 2.0], [-0.6, 1.0]]
//! offset = [0.0, 0.0]        # optional
//! L = 2.2                    # optional declared constants
//! beta = 2.0
//!
//! [set]
//! kind = "abs_box"           # fixed_box, translated_box, singleton, following_ball
//! ```

use std::path::Path;

use nalgebra::DMatrix;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::geometry::{FollowingBall, MovingSet, SetKind, Vector};
use crate::problem::{IqviProblem, OperatorConstants, OperatorSpec};

pub const EXAMPLE1_TOML: &str = include_str!("../data/example1.toml");
pub const IDENTITY_TOML: &str = include_str!("../data/identity1d.toml");

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub dim: usize,
    pub alpha: f64,
    #[serde(default)]
    pub known_solution: Option<Vec<f64>>,
    #[serde(default)]
    pub u0: Option<Vec<f64>>,
    pub operator: OperatorSection,
    pub set: SetSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorSection {
    Affine {
        matrix: Vec<Vec<f64>>,
        #[serde(default)]
        offset: Option<Vec<f64>>,
        #[serde(rename = "L", default)]
        lipschitz: Option<f64>,
        #[serde(default)]
        beta: Option<f64>,
    },
    Scalar {
        slope: f64,
    },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SetSection {
    FixedBox { lo: Vec<f64>, hi: Vec<f64> },
    AbsBox {},
    TranslatedBox { lower_shift: Vec<f64>, upper_shift: Vec<f64>, active: Vec<usize> },
    Singleton { point: Vec<f64> },
    FollowingBall { scale: f64, radius: f64 },
}

/// A parsed problem together with its optional starting point.
#[derive(Debug, Clone)]
pub struct LoadedProblem {
    pub problem: IqviProblem,
    pub u0: Option<Vector>,
}

fn field_err(field: &str, e: Error) -> Error {
    Error::Config(format!("{field}: {e}"))
}

impl ProblemFile {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn build(&self) -> Result<LoadedProblem> {
        let n = self.dim;
        let operator = match &self.operator {
            OperatorSection::Affine { matrix, offset, lipschitz, beta } => {
                if matrix.len() != n || matrix.iter().any(|row| row.len() != n) {
                    return Err(Error::Config(format!("operator.matrix: expected a {n}x{n} array")));
                }
                let m = DMatrix::from_fn(n, n, |i, j| matrix[i][j]);
                let b = match offset {
                    Some(o) if o.len() != n => {
                        return Err(Error::Config(format!("operator.offset: expected {n} entries, got {}", o.len())));
                    }
                    Some(o) => Vector::from_column_slice(o),
                    None => Vector::zeros(n),
                };
                let declared = match (lipschitz, beta) {
                    (Some(l), Some(b)) => Some(OperatorConstants::new(*l, *b).map_err(|e| field_err("operator.L/beta", e))?),
                    (None, None) => None,
                    _ => return Err(Error::Config("operator.L/beta: give both or neither".into())),
                };
                OperatorSpec::affine(m, b, declared).map_err(|e| field_err("operator", e))?
            }
            OperatorSection::Scalar { slope } => OperatorSpec::scalar(*slope).map_err(|e| field_err("operator.slope", e))?,
        };
        let vec_of = |field: &str, v: &[f64]| -> Result<Vector> {
            if v.len() != n {
                return Err(Error::Config(format!("{field}: expected {n} entries, got {}", v.len())));
            }
            Ok(Vector::from_column_slice(v))
        };
        let set = match &self.set {
            SetSection::FixedBox { lo, hi } => {
                MovingSet::fixed_box(vec_of("set.lo", lo)?, vec_of("set.hi", hi)?).map_err(|e| field_err("set", e))?
            }
            SetSection::AbsBox {} => MovingSet::abs_box(),
            SetSection::TranslatedBox { lower_shift, upper_shift, active } => MovingSet::new(
                SetKind::TranslatedBox {
                    lower_shift: lower_shift.clone(),
                    upper_shift: upper_shift.clone(),
                    active: active.clone(),
                },
                1.0,
            )
            .map_err(|e| field_err("set", e))?,
            SetSection::Singleton { point } => {
                MovingSet::singleton(vec_of("set.point", point)?).map_err(|e| field_err("set.point", e))?
            }
            SetSection::FollowingBall { scale, radius } => FollowingBall::new(*scale, *radius)
                .and_then(FollowingBall::into_set)
                .map_err(|e| field_err("set", e))?,
        };
        let mut problem = IqviProblem::new(n, operator, set, self.alpha).map_err(|e| field_err("problem", e))?;
        if let Some(s) = &self.known_solution {
            problem = problem
                .with_known_solution(vec_of("known_solution", s)?)
                .map_err(|e| field_err("known_solution", e))?;
        }
        let u0 = self.u0.as_deref().map(|v| vec_of("u0", v)).transpose()?;
        Ok(LoadedProblem { problem, u0 })
    }
}

pub fn load_problem_str(text: &str) -> Result<LoadedProblem> {
    ProblemFile::parse(text)?.build()
}

pub fn load_problem(path: &Path) -> Result<LoadedProblem> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read problem file {}: {e}", path.display())))?;
    load_problem_str(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// The 2-D affine benchmark with the absolute-value box.
pub fn example1() -> LoadedProblem {
    load_problem_str(EXAMPLE1_TOML).expect("shipped problem file is valid")
}

/// `f(u) = u` on `ℝ` with `Φ ≡ {0}` and `α = 1`.
pub fn identity_1d() -> LoadedProblem {
    load_problem_str(IDENTITY_TOML).expect("shipped problem file is valid")
}
