//! Metric projections onto the moving constraint sets `Φ(u)`.
//!
//! Every set family here is a closed convex set parameterised by the current
//! state `u`. The declared modulus `mu` bounds how fast the projector moves
//! with `u`: `‖P_{Φ(u)}(w) − P_{Φ(v)}(w)‖ ≤ mu ‖u − v‖` for all `u, v, w`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;

/// Caller-supplied projector for sets outside the built-in families.
///
/// Implementations must be reentrant; the library may call them from several
/// threads at once.
pub trait Projector: Send + Sync + fmt::Debug {
    fn project(&self, u: &Vector, w: &Vector) -> Vector;

    /// Distance-type measure of how far `x` lies outside `Φ(u)`; zero inside.
    fn violation(&self, u: &Vector, x: &Vector) -> f64;
}

#[derive(Debug, Clone)]
pub enum SetKind {
    /// `[lo, hi]`, independent of `u`.
    FixedBox { lo: Vector, hi: Vector },
    /// `Π_i [−|u_i|, |u_i|]`.
    AbsBox,
    /// `u_i + lower_shift_k ≤ x_i ≤ u_i + upper_shift_k` for `i = active[k]`;
    /// coordinates not listed in `active` are unconstrained.
    TranslatedBox {
        lower_shift: Vec<f64>,
        upper_shift: Vec<f64>,
        active: Vec<usize>,
    },
    Singleton(Vector),
    Custom(Arc<dyn Projector>),
}

#[derive(Debug, Clone)]
pub struct MovingSet {
    kind: SetKind,
    mu: f64,
}

impl MovingSet {
    pub fn new(kind: SetKind, mu: f64) -> Result<Self> {
        if !(mu.is_finite() && mu >= 0.0) {
            return Err(Error::InvalidArgument(format!("mu must be finite and >= 0, got {mu}")));
        }
        match &kind {
            SetKind::FixedBox { lo, hi } => {
                if lo.len() != hi.len() {
                    return Err(Error::DimensionMismatch { expected: lo.len(), found: hi.len() });
                }
                if lo.iter().chain(hi.iter()).any(|x| x.is_nan()) {
                    return Err(Error::NonFiniteInput("box bounds"));
                }
                if let Some(i) = (0..lo.len()).find(|&i| lo[i] > hi[i]) {
                    return Err(Error::InvalidArgument(format!(
                        "box bounds crossed at index {i}: lo = {} > hi = {}",
                        lo[i], hi[i]
                    )));
                }
            }
            SetKind::TranslatedBox { lower_shift, upper_shift, active } => {
                if lower_shift.len() != active.len() || upper_shift.len() != active.len() {
                    return Err(Error::InvalidArgument(format!(
                        "translated box needs one shift pair per active index ({} active, {} lower, {} upper)",
                        active.len(),
                        lower_shift.len(),
                        upper_shift.len()
                    )));
                }
                for k in 0..active.len() {
                    if !(lower_shift[k].is_finite() && upper_shift[k].is_finite()) {
                        return Err(Error::NonFiniteInput("translated box shifts"));
                    }
                    if lower_shift[k] > upper_shift[k] {
                        return Err(Error::InvalidArgument(format!(
                            "shift bounds crossed at active index {k}: A = {} > B = {}",
                            lower_shift[k], upper_shift[k]
                        )));
                    }
                }
                let mut seen = active.clone();
                seen.sort_unstable();
                seen.dedup();
                if seen.len() != active.len() {
                    return Err(Error::InvalidArgument("duplicate active index".into()));
                }
            }
            SetKind::Singleton(p) => {
                if !p.iter().all(|x| x.is_finite()) {
                    return Err(Error::NonFiniteInput("singleton point"));
                }
            }
            SetKind::AbsBox | SetKind::Custom(_) => {}
        }
        Ok(Self { kind, mu })
    }

    pub fn fixed_box(lo: Vector, hi: Vector) -> Result<Self> {
        Self::new(SetKind::FixedBox { lo, hi }, 0.0)
    }

    pub fn abs_box() -> Self {
        Self { kind: SetKind::AbsBox, mu: 1.0 }
    }

    pub fn translated_box(lower_shift: Vec<f64>, upper_shift: Vec<f64>, active: Vec<usize>) -> Result<Self> {
        Self::new(SetKind::TranslatedBox { lower_shift, upper_shift, active }, 1.0)
    }

    pub fn singleton(point: Vector) -> Result<Self> {
        Self::new(SetKind::Singleton(point), 0.0)
    }

    pub fn custom(projector: Arc<dyn Projector>, mu: f64) -> Result<Self> {
        Self::new(SetKind::Custom(projector), mu)
    }

    pub fn kind(&self) -> &SetKind {
        &self.kind
    }

    /// Declared Lipschitz modulus of `u ↦ P_{Φ(u)}(w)`.
    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// Dimension fixed by the set description, if any.
    pub fn fixed_dim(&self) -> Option<usize> {
        match &self.kind {
            SetKind::FixedBox { lo, .. } => Some(lo.len()),
            SetKind::Singleton(p) => Some(p.len()),
            _ => None,
        }
    }

    /// Componentwise bounds of `Φ(u)` for the box families (singletons are
    /// degenerate boxes). `None` for custom sets.
    pub fn bounds(&self, u: &Vector) -> Option<(Vector, Vector)> {
        let n = u.len();
        match &self.kind {
            SetKind::FixedBox { lo, hi } => Some((lo.clone(), hi.clone())),
            SetKind::AbsBox => {
                let hi = u.map(f64::abs);
                Some((-&hi, hi))
            }
            SetKind::TranslatedBox { lower_shift, upper_shift, active } => {
                let mut lo = Vector::from_element(n, f64::NEG_INFINITY);
                let mut hi = Vector::from_element(n, f64::INFINITY);
                for (k, &i) in active.iter().enumerate() {
                    lo[i] = u[i] + lower_shift[k];
                    hi[i] = u[i] + upper_shift[k];
                }
                Some((lo, hi))
            }
            SetKind::Singleton(p) => Some((p.clone(), p.clone())),
            SetKind::Custom(_) => None,
        }
    }

    fn check_dims(&self, u: &Vector, w: &Vector) -> Result<()> {
        if u.len() != w.len() {
            return Err(Error::DimensionMismatch { expected: u.len(), found: w.len() });
        }
        if let Some(d) = self.fixed_dim() {
            if d != u.len() {
                return Err(Error::DimensionMismatch { expected: d, found: u.len() });
            }
        }
        if let SetKind::TranslatedBox { active, .. } = &self.kind {
            if let Some(&i) = active.iter().find(|&&i| i >= u.len()) {
                return Err(Error::InvalidArgument(format!(
                    "active index {i} out of range for dimension {}",
                    u.len()
                )));
            }
        }
        Ok(())
    }

    /// `P_{Φ(u)}(w)`, the nearest point of `Φ(u)` to `w`.
    pub fn project(&self, u: &Vector, w: &Vector) -> Result<Vector> {
        self.check_dims(u, w)?;
        if !u.iter().chain(w.iter()).all(|x| x.is_finite()) {
            return Err(Error::NonFiniteInput("projection arguments"));
        }
        match &self.kind {
            SetKind::Custom(p) => {
                let x = p.project(u, w);
                if x.len() != w.len() {
                    return Err(Error::DimensionMismatch { expected: w.len(), found: x.len() });
                }
                let violation = p.violation(u, &x);
                if !(violation <= 1e-9 * (1.0 + x.norm())) {
                    return Err(Error::InfeasibleProjection { violation });
                }
                Ok(x)
            }
            _ => {
                let (lo, hi) = self.bounds(u).expect("box family");
                Ok(clamp(w, &lo, &hi))
            }
        }
    }

    /// Largest observed `‖P_{Φ(u)}(w) − P_{Φ(v)}(w)‖ / ‖u − v‖` over random
    /// triples drawn uniformly from the cube `[−radius, radius]^dim`.
    ///
    /// This is a lower estimate of the true modulus.
    pub fn estimate_mu(&self, dim: usize, samples: usize, radius: f64, seed: u64) -> Result<f64> {
        if samples < 2 {
            return Err(Error::InvalidArgument("estimate_mu needs at least 2 samples".into()));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::InvalidArgument(format!("radius must be positive, got {radius}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let draw = |rng: &mut ChaCha8Rng| Vector::from_fn(dim, |_, _| rng.random_range(-radius..=radius));
        let mut best: f64 = 0.0;
        for _ in 0..samples {
            let u = draw(&mut rng);
            let v = draw(&mut rng);
            let w = draw(&mut rng);
            let d = (&u - &v).norm();
            if d == 0.0 {
                continue;
            }
            let pu = self.project(&u, &w)?;
            let pv = self.project(&v, &w)?;
            best = best.max((pu - pv).norm() / d);
        }
        Ok(best)
    }
}

fn clamp(w: &Vector, lo: &Vector, hi: &Vector) -> Vector {
    Vector::from_fn(w.len(), |i, _| {
        // ties return the bound itself
        if w[i] <= lo[i] {
            lo[i]
        } else if w[i] >= hi[i] {
            hi[i]
        } else {
            w[i]
        }
    })
}

/// Closed Euclidean ball of fixed radius whose centre follows `scale · u`.
///
/// Its projector moves with modulus `|scale|`.
#[derive(Debug, Clone, Copy)]
pub struct FollowingBall {
    pub scale: f64,
    pub radius: f64,
}

impl FollowingBall {
    pub fn new(scale: f64, radius: f64) -> Result<Self> {
        if !(radius >= 0.0 && radius.is_finite() && scale.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "ball needs finite scale and radius >= 0 (scale {scale}, radius {radius})"
            )));
        }
        Ok(Self { scale, radius })
    }

    pub fn into_set(self) -> Result<MovingSet> {
        let mu = self.scale.abs();
        MovingSet::custom(Arc::new(self), mu)
    }
}

impl Projector for FollowingBall {
    fn project(&self, u: &Vector, w: &Vector) -> Vector {
        let centre = u * self.scale;
        let offset = w - &centre;
        let dist = offset.norm();
        if dist <= self.radius {
            w.clone()
        } else {
            centre + offset * (self.radius / dist)
        }
    }

    fn violation(&self, u: &Vector, x: &Vector) -> f64 {
        ((x - u * self.scale).norm() - self.radius).max(0.0)
    }
}
