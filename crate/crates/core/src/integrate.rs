//! Time discretisations of the projection flows and trajectory bookkeeping.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dynamics::{residual, rhs_from_residual, FlowParams};
use crate::error::{Error, Result};
use crate::geometry::Vector;
use crate::problem::IqviProblem;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StepSchedule {
    Fixed { lambda: f64 },
    /// `λ_n = c / n`, starting at `n = 1`.
    Harmonic { c: f64 },
}

impl StepSchedule {
    pub fn fixed(lambda: f64) -> Result<Self> {
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("step must be > 0, got {lambda}")));
        }
        Ok(Self::Fixed { lambda })
    }

    pub fn harmonic(c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidArgument(format!("harmonic constant must be > 0, got {c}")));
        }
        Ok(Self::Harmonic { c })
    }

    /// Step length `λ_n` for `n ≥ 1`.
    pub fn step(&self, n: usize) -> f64 {
        debug_assert!(n >= 1);
        match *self {
            Self::Fixed { lambda } => lambda,
            Self::Harmonic { c } => c / n as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StopCriteria {
    pub max_iter: usize,
    pub residual_tol: Option<f64>,
    pub error_tol: Option<f64>,
}

impl StopCriteria {
    pub fn iterations(max_iter: usize) -> Self {
        Self { max_iter, residual_tol: None, error_tol: None }
    }

    pub fn with_residual_tol(mut self, tol: f64) -> Self {
        self.residual_tol = Some(tol);
        self
    }

    pub fn with_error_tol(mut self, tol: f64) -> Self {
        self.error_tol = Some(tol);
        self
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::InvalidArgument("max_iter must be at least 1".into()));
        }
        for tol in [self.residual_tol, self.error_tol].into_iter().flatten() {
            if !(tol >= 0.0) {
                return Err(Error::InvalidArgument(format!("tolerances must be >= 0, got {tol}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    MaxIter,
    ResidualTol,
    ErrorTol,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub iter: usize,
    pub time: f64,
    pub state: Vector,
    pub residual_norm: f64,
    pub error_norm: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub records: Vec<Record>,
    pub termination: Termination,
}

impl Trajectory {
    pub fn last(&self) -> &Record {
        self.records.last().expect("trajectory holds at least the initial record")
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// CSV with header `iter,time,u_1..u_n,residual,error`; the error column
    /// is left empty when no reference solution is known.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let dim = self.records.first().map_or(0, |r| r.state.len());
        let mut header = String::from("iter,time");
        for i in 1..=dim {
            header.push_str(&format!(",u_{i}"));
        }
        header.push_str(",residual,error");
        writeln!(out, "{header}")?;
        for r in &self.records {
            let mut line = format!("{},{}", r.iter, fmt_real(r.time));
            for x in r.state.iter() {
                line.push(',');
                line.push_str(&fmt_real(*x));
            }
            line.push(',');
            line.push_str(&fmt_real(r.residual_norm));
            line.push(',');
            if let Some(e) = r.error_norm {
                line.push_str(&fmt_real(e));
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }
}

/// Seventeen significant digits, enough to round-trip an `f64`.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn make_record(p: &IqviProblem, iter: usize, time: f64, state: &Vector, residual_norm: f64) -> Record {
    Record {
        iter,
        time,
        state: state.clone(),
        residual_norm,
        error_norm: p.known_solution().map(|s| (state - s).norm()),
    }
}

/// Forward-Euler iteration `u_{n+1} = u_n + λ_{n+1} · rhs(u_n)`.
///
/// For the fixed-time flow this is `u_{n+1} = u_n − λ ψ(u_n) T(u_n)`; for the
/// nominal flow it is the plain projection iteration `u_n − λ σ T(u_n)`.
pub fn euler(
    p: &IqviProblem,
    fp: &FlowParams,
    u0: &Vector,
    sched: &StepSchedule,
    stop: &StopCriteria,
) -> Result<Trajectory> {
    fp.validated()?;
    stop.validate()?;
    p.check_state(u0)?;

    let mut records = Vec::new();
    let mut u = u0.clone();
    let mut time = 0.0;
    let mut n = 0;
    let termination = loop {
        let t = residual(p, &u)?;
        let rec = make_record(p, n, time, &u, t.norm());
        let hit_residual = stop.residual_tol.is_some_and(|tol| rec.residual_norm <= tol);
        let hit_error = matches!((stop.error_tol, rec.error_norm), (Some(tol), Some(e)) if e <= tol);
        records.push(rec);
        if hit_residual {
            break Termination::ResidualTol;
        }
        if hit_error {
            break Termination::ErrorTol;
        }
        if n >= stop.max_iter {
            break Termination::MaxIter;
        }

        let lambda = sched.step(n + 1);
        let v = rhs_from_residual(fp, &t);
        if v.iter().any(|&x| x != 0.0) {
            u += v * lambda;
            if !u.iter().all(|x| x.is_finite()) {
                return Err(Error::NonFinite { iteration: n + 1 });
            }
        }
        time += lambda;
        n += 1;
    };
    Ok(Trajectory { records, termination })
}

/// Classical fourth-order Runge-Kutta on the selected flow, recording every
/// step up to `t_end`. Serves as a fine-resolution stand-in for the
/// continuous trajectory.
pub fn integrate_reference(p: &IqviProblem, fp: &FlowParams, u0: &Vector, dt: f64, t_end: f64) -> Result<Trajectory> {
    fp.validated()?;
    p.check_state(u0)?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("dt must be > 0, got {dt}")));
    }
    if !(t_end >= dt && t_end.is_finite()) {
        return Err(Error::InvalidArgument(format!("t_end must be >= dt, got {t_end}")));
    }
    let field = |u: &Vector| -> Result<Vector> { Ok(rhs_from_residual(fp, &residual(p, u)?)) };

    let steps = (t_end / dt - 1e-9).ceil() as usize;
    let mut records = Vec::with_capacity(steps + 1);
    let mut u = u0.clone();
    let mut time = 0.0;
    for n in 0..=steps {
        let t = residual(p, &u)?;
        records.push(make_record(p, n, time, &u, t.norm()));
        if n == steps {
            break;
        }
        let h = dt.min(t_end - time);
        let k1 = rhs_from_residual(fp, &t);
        let k2 = field(&(&u + &k1 * (h / 2.0)))?;
        let k3 = field(&(&u + &k2 * (h / 2.0)))?;
        let k4 = field(&(&u + &k3 * h))?;
        u += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        if !u.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite { iteration: n + 1 });
        }
        time = if n + 1 == steps { t_end } else { time + h };
    }
    Ok(Trajectory { records, termination: Termination::MaxIter })
}

/// Elapsed time of the first record after which the error (or, without a
/// reference solution, the residual) stays at or below `tol`.
pub fn measure_settling(traj: &Trajectory, tol: f64) -> Option<f64> {
    let use_error = traj.records.iter().all(|r| r.error_norm.is_some());
    let value = |r: &Record| if use_error { r.error_norm.unwrap_or(f64::INFINITY) } else { r.residual_norm };
    let first_settled = match traj.records.iter().rposition(|r| !(value(r) <= tol)) {
        Some(i) => i + 1,
        None => 0,
    };
    traj.records.get(first_settled).map(|r| r.time)
}

/// Largest `cap · 2^{-k}` (`k ≤ max_halvings`) for which `steps` fixed-step
/// Euler iterations give a nonincreasing distance to `target`.
pub fn find_monotone_step(
    p: &IqviProblem,
    fp: &FlowParams,
    u0: &Vector,
    target: &Vector,
    cap: f64,
    steps: usize,
    max_halvings: usize,
) -> Result<Option<f64>> {
    let mut lambda = cap;
    for _ in 0..=max_halvings {
        let traj = euler(p, fp, u0, &StepSchedule::fixed(lambda)?, &StopCriteria::iterations(steps));
        if let Ok(traj) = traj {
            let dists: Vec<f64> = traj.records.iter().map(|r| (&r.state - target).norm()).collect();
            if dists.windows(2).all(|w| w[1] <= w[0]) {
                return Ok(Some(lambda));
            }
        }
        lambda /= 2.0;
    }
    Ok(None)
}
