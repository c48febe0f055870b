//! Planar serial-chain arm: state, transition, forward kinematics and
//! the positional Jacobian.
//!
//! Joint angles are unwrapped reals. A joint state is an absolute
//! configuration; an action is a joint velocity integrated over one
//! timestep of length `dt`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

/// Geometry and timestep of a planar arm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ArmSpecRaw", into = "ArmSpecRaw")]
pub struct ArmSpec {
    link_lengths: Vec<f64>,
    dt: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArmSpecRaw {
    link_lengths: Vec<f64>,
    dt: f64,
}

impl TryFrom<ArmSpecRaw> for ArmSpec {
    type Error = Error;

    fn try_from(raw: ArmSpecRaw) -> Result<Self> {
        ArmSpec::new(raw.link_lengths, raw.dt)
    }
}

impl From<ArmSpec> for ArmSpecRaw {
    fn from(spec: ArmSpec) -> Self {
        ArmSpecRaw { link_lengths: spec.link_lengths, dt: spec.dt }
    }
}

impl ArmSpec {
    pub fn new(link_lengths: Vec<f64>, dt: f64) -> Result<Self> {
        if link_lengths.len() < 2 {
            return Err(Error::InvalidInput(format!("arm needs at least 2 links, got {}", link_lengths.len())));
        }
        if let Some(l) = link_lengths.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::InvalidInput(format!("link length must be positive, got {l}")));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidInput(format!("dt must be positive, got {dt}")));
        }
        Ok(ArmSpec { link_lengths, dt })
    }

    /// `n` unit-length links.
    pub fn uniform(n: usize, dt: f64) -> Result<Self> {
        ArmSpec::new(vec![1.0; n], dt)
    }

    pub fn dof(&self) -> usize {
        self.link_lengths.len()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn link_lengths(&self) -> &[f64] {
        &self.link_lengths
    }

    /// Sum of link lengths; no end-effector position lies farther from the base.
    pub fn reach(&self) -> f64 {
        self.link_lengths.iter().sum()
    }
}

/// Joint configuration (radians).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<f64>", into = "Vec<f64>")]
pub struct JointState {
    pub q: DVector<f64>,
}

/// Joint-velocity command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<f64>", into = "Vec<f64>")]
pub struct RobotAction {
    pub dq: DVector<f64>,
}

macro_rules! vector_newtype {
    ($ty:ident, $field:ident) => {
        impl $ty {
            pub fn new($field: DVector<f64>) -> Self {
                $ty { $field }
            }

            pub fn from_slice(values: &[f64]) -> Self {
                $ty { $field: DVector::from_column_slice(values) }
            }

            pub fn zeros(n: usize) -> Self {
                $ty { $field: DVector::zeros(n) }
            }

            pub fn len(&self) -> usize {
                self.$field.len()
            }

            pub fn is_empty(&self) -> bool {
                self.$field.is_empty()
            }

            pub fn as_slice(&self) -> &[f64] {
                self.$field.as_slice()
            }

            pub fn is_finite(&self) -> bool {
                self.$field.iter().all(|v| v.is_finite())
            }
        }

        impl From<Vec<f64>> for $ty {
            fn from(values: Vec<f64>) -> Self {
                $ty { $field: DVector::from_vec(values) }
            }
        }

        impl From<$ty> for Vec<f64> {
            fn from(value: $ty) -> Self {
                value.$field.as_slice().to_vec()
            }
        }
    };
}

vector_newtype!(JointState, q);
vector_newtype!(RobotAction, dq);

impl RobotAction {
    pub fn norm(&self) -> f64 {
        self.dq.norm()
    }

    /// Rescales onto the ball of radius `max_norm` if it lies outside.
    pub fn clamped(mut self, max_norm: f64) -> Self {
        let n = self.dq.norm();
        if n > max_norm && n > 0.0 {
            self.dq *= max_norm / n;
        }
        self
    }
}

/// End-effector position and orientation (sum of joint angles).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EePose {
    pub x: f64,
    pub y: f64,
    pub phi: f64,
}

impl EePose {
    pub fn position_distance(&self, other: &EePose) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

fn check_state(spec: &ArmSpec, s: &JointState) -> Result<()> {
    check_dim(spec.dof(), s.len())?;
    if !s.is_finite() {
        return Err(Error::InvalidInput("joint state has non-finite entries".into()));
    }
    Ok(())
}

/// `s + dt * a`, componentwise. Angles are not wrapped.
pub fn step(spec: &ArmSpec, s: &JointState, a: &RobotAction) -> Result<JointState> {
    check_dim(spec.dof(), s.len())?;
    check_dim(spec.dof(), a.len())?;
    Ok(JointState { q: &s.q + &a.dq * spec.dt })
}

/// Positions of the base and every link tip, base first.
pub fn link_endpoints(spec: &ArmSpec, s: &JointState) -> Result<Vec<(f64, f64)>> {
    check_state(spec, s)?;
    let mut points = Vec::with_capacity(spec.dof() + 1);
    let (mut x, mut y, mut angle) = (0.0, 0.0, 0.0);
    points.push((x, y));
    for (len, q) in spec.link_lengths.iter().zip(s.q.iter()) {
        angle += q;
        x += len * angle.cos();
        y += len * angle.sin();
        points.push((x, y));
    }
    Ok(points)
}

pub fn forward_kinematics(spec: &ArmSpec, s: &JointState) -> Result<EePose> {
    let points = link_endpoints(spec, s)?;
    let (x, y) = points[points.len() - 1];
    Ok(EePose { x, y, phi: s.q.sum() })
}

/// 2×n positional Jacobian: column i is `(-(y_e - y_i), x_e - x_i)` where
/// `(x_i, y_i)` is the location of joint i.
pub fn jacobian(spec: &ArmSpec, s: &JointState) -> Result<DMatrix<f64>> {
    let points = link_endpoints(spec, s)?;
    let n = spec.dof();
    let (xe, ye) = points[n];
    Ok(DMatrix::from_fn(2, n, |row, i| {
        let (xi, yi) = points[i];
        if row == 0 {
            -(ye - yi)
        } else {
            xe - xi
        }
    }))
}

/// 3×n Jacobian of `(x, y, phi)`; the orientation row is all ones.
pub fn pose_jacobian(spec: &ArmSpec, s: &JointState) -> Result<DMatrix<f64>> {
    let j = jacobian(spec, s)?;
    let n = spec.dof();
    Ok(DMatrix::from_fn(3, n, |row, i| if row < 2 { j[(row, i)] } else { 1.0 }))
}

/// Damped least-squares pseudo-inverse applied to `target`:
/// `J^T (J J^T + damping^2 I)^-1 target`.
pub fn damped_pinv_apply(j: &DMatrix<f64>, target: &DVector<f64>, damping: f64) -> DVector<f64> {
    let rows = j.nrows();
    let jjt = j * j.transpose() + DMatrix::identity(rows, rows) * (damping * damping);
    // jjt is symmetric positive definite for damping > 0.
    let y = match jjt.clone().cholesky() {
        Some(c) => c.solve(target),
        None => jjt.lu().solve(target).unwrap_or_else(|| DVector::zeros(rows)),
    };
    j.transpose() * y
}
