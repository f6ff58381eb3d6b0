//! Closed-form rigid-body model of the planar two-link direct-drive SCARA arm.
//!
//! The arm moves in a horizontal plane (no gravity) and is described by eight
//! base parameters: two regrouped link inertias, the length-weighted first
//! moments of link 2, and a viscous plus Coulomb friction pair per joint.
//! Torque is linear in those parameters, `tau = IDM(q, qd, qdd) * chi`, with
//! the 2x8 regressor `IDM` evaluated here in closed form.

use nalgebra::{Matrix2, SMatrix, SVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_JOINTS: usize = 2;
pub const NUM_PARAMS: usize = 8;

/// Length of the first link (m).
pub const DEFAULT_LINK_LENGTH: f64 = 0.5;

/// Floor on `|det M|` below which the inertia matrix is treated as singular (kg²·m⁴).
pub const DEFAULT_DET_FLOOR: f64 = 1e-12;

pub type Regressor = SMatrix<f64, NUM_JOINTS, NUM_PARAMS>;
pub type ParamVector = SVector<f64, NUM_PARAMS>;

/// The eight SCARA base parameters, in the canonical order
/// `[ZZ1R, Fv1, Fc1, ZZ2R, LMX2, LMY2, Fv2, Fc2]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaseParameters {
    pub zz1r: f64,
    pub fv1: f64,
    pub fc1: f64,
    pub zz2r: f64,
    pub lmx2: f64,
    pub lmy2: f64,
    pub fv2: f64,
    pub fc2: f64,
}

impl BaseParameters {
    pub const NAMES: [&'static str; NUM_PARAMS] = ["ZZ1R", "FV1", "FC1", "ZZ2R", "LMX2", "LMY2", "FV2", "FC2"];

    /// Values identified on the direct-drive prototype; the ground truth of
    /// the synthetic robot.
    pub const NOMINAL: Self = Self::from_array([3.44, 0.03, 0.82, 0.062, 0.121, 0.007, 0.013, 0.137]);

    pub const fn from_array(a: [f64; NUM_PARAMS]) -> Self {
        Self { zz1r: a[0], fv1: a[1], fc1: a[2], zz2r: a[3], lmx2: a[4], lmy2: a[5], fv2: a[6], fc2: a[7] }
    }

    pub const fn to_array(&self) -> [f64; NUM_PARAMS] {
        [self.zz1r, self.fv1, self.fc1, self.zz2r, self.lmx2, self.lmy2, self.fv2, self.fc2]
    }

    pub fn from_slice(s: &[f64]) -> Result<Self> {
        let a: [f64; NUM_PARAMS] = s
            .try_into()
            .map_err(|_| Error::DimensionMismatch(format!("expected {NUM_PARAMS} parameters, got {}", s.len())))?;
        Ok(Self::from_array(a))
    }

    pub fn from_vector(v: &ParamVector) -> Self {
        Self::from_array((*v).into())
    }

    pub fn to_vector(&self) -> ParamVector {
        ParamVector::from(self.to_array())
    }

    pub const fn zeros() -> Self {
        Self::from_array([0.0; NUM_PARAMS])
    }

    /// Zero parameters except unit rotor inertias (`Ia_j = 1`).
    ///
    /// Rotor inertia of joint 2 is absorbed into `ZZ2R`, so in base-parameter
    /// form this is `[1, 0, 0, 1, 0, 0, 0, 0]` and the inertia matrix is the
    /// constant, regular `[[2, 1], [1, 1]]`.
    pub const fn regular_rotor_init() -> Self {
        Self::from_array([1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0])
    }

    /// Zero parameters except unit link inertias (`ZZ_j = 1`). For this arm it
    /// coincides with [`BaseParameters::regular_rotor_init`].
    pub const fn regular_link_init() -> Self {
        let zz1r = standard_to_base_zz1r(1.0, 0.0, 0.0, DEFAULT_LINK_LENGTH);
        let zz2r = 1.0;
        Self::from_array([zz1r, 0.0, 0.0, zz2r, 0.0, 0.0, 0.0, 0.0])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite())
    }

    /// Positive link inertias and non-negative friction. Checked, never enforced.
    pub fn is_physically_plausible(&self) -> bool {
        self.zz1r > 0.0 && self.zz2r > 0.0 && self.fv1 >= 0.0 && self.fc1 >= 0.0 && self.fv2 >= 0.0 && self.fc2 >= 0.0
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self::from_vector(&(self.to_vector() * k))
    }
}

impl Default for BaseParameters {
    fn default() -> Self {
        Self::zeros()
    }
}

/// Joint positions (rad), velocities (rad/s) and accelerations (rad/s²).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct JointState {
    pub q: [f64; NUM_JOINTS],
    pub qd: [f64; NUM_JOINTS],
    pub qdd: [f64; NUM_JOINTS],
}

impl JointState {
    pub const fn new(q: [f64; 2], qd: [f64; 2], qdd: [f64; 2]) -> Self {
        Self { q, qd, qdd }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(&self.qd).chain(&self.qdd).all(|x| x.is_finite())
    }
}

/// Smoothed sign `ssign(v) = tanh(v / epsilon)` used for Coulomb friction.
///
/// Both the simulator and every regressor evaluation go through the same
/// instance, so simulated torque is exactly `IDM * chi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothSign {
    pub epsilon: f64,
}

impl SmoothSign {
    pub const DEFAULT_EPSILON: f64 = 1e-2;

    pub fn new(epsilon: f64) -> Result<Self> {
        if epsilon > 0.0 && epsilon.is_finite() {
            Ok(Self { epsilon })
        } else {
            Err(Error::InvalidInput(format!("smooth-sign epsilon must be > 0, got {epsilon}")))
        }
    }

    #[inline]
    pub fn apply(&self, v: f64) -> f64 {
        (v / self.epsilon).tanh()
    }
}

impl Default for SmoothSign {
    fn default() -> Self {
        Self { epsilon: Self::DEFAULT_EPSILON }
    }
}

/// The 2x8 regressor of the inverse dynamic model at `state`.
pub fn regressor(state: &JointState, ssign: &SmoothSign) -> Regressor {
    let [_, q2] = state.q;
    let [qd1, qd2] = state.qd;
    let [qdd1, qdd2] = state.qdd;
    let (s2, c2) = q2.sin_cos();

    let a12 = 2.0 * qdd1 + qdd2;
    let v12 = qd2 * (2.0 * qd1 + qd2);
    let qd1_sq = qd1 * qd1;

    #[rustfmt::skip]
    let m = Regressor::from_row_slice(&[
        // ZZ1R  FV1  FC1                 ZZ2R          LMX2                       LMY2                        FV2  FC2
        qdd1,    qd1, ssign.apply(qd1),   qdd1 + qdd2,  a12 * c2 - v12 * s2,       -a12 * s2 - v12 * c2,       0.0, 0.0,
        0.0,     0.0, 0.0,                qdd1 + qdd2,  qdd1 * c2 + qd1_sq * s2,   qd1_sq * c2 - qdd1 * s2,    qd2, ssign.apply(qd2),
    ]);
    m
}

/// Joint torques `IDM(state) * chi` (N·m).
pub fn inverse_dynamics(state: &JointState, chi: &BaseParameters, ssign: &SmoothSign) -> [f64; 2] {
    let tau = regressor(state, ssign) * chi.to_vector();
    [tau[0], tau[1]]
}

/// Inertia matrix `M(q, chi)`; depends only on `q2`.
pub fn inertia_matrix(q: [f64; 2], chi: &BaseParameters) -> Matrix2<f64> {
    let (s2, c2) = q[1].sin_cos();
    let coupling = chi.lmx2 * c2 - chi.lmy2 * s2;
    let m11 = chi.zz1r + chi.zz2r + 2.0 * coupling;
    let m12 = chi.zz2r + coupling;
    Matrix2::new(m11, m12, m12, chi.zz2r)
}

/// Accelerations solving `M(q) qdd = tau - N(q, qd)`, where `N` collects
/// velocity-dependent coupling and friction.
pub fn forward_dynamics(
    q: [f64; 2],
    qd: [f64; 2],
    tau: [f64; 2],
    chi: &BaseParameters,
    ssign: &SmoothSign,
    det_floor: f64,
) -> Result<[f64; 2]> {
    let m = inertia_matrix(q, chi);
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    if !(det.abs() >= det_floor) {
        return Err(Error::SingularInertia { det, floor: det_floor });
    }
    let n = inverse_dynamics(&JointState::new(q, qd, [0.0, 0.0]), chi, ssign);
    let rhs = Vector2::new(tau[0] - n[0], tau[1] - n[1]);
    // Cramer's rule on the 2x2 system.
    let qdd1 = (m[(1, 1)] * rhs[0] - m[(0, 1)] * rhs[1]) / det;
    let qdd2 = (m[(0, 0)] * rhs[1] - m[(1, 0)] * rhs[0]) / det;
    Ok([qdd1, qdd2])
}

/// Worst-case diagonal inertias `(J1, J2)` used to tune the PD loops:
/// `J1 = ZZ1R + ZZ2R + 2 LMX2`, `J2 = ZZ2R`.
pub fn effective_inertia(chi: &BaseParameters) -> [f64; 2] {
    [chi.zz1r + chi.zz2r + 2.0 * chi.lmx2, chi.zz2r]
}

const fn standard_to_base_zz1r(zz1: f64, ia1: f64, m2: f64, link_length: f64) -> f64 {
    zz1 + ia1 + m2 * link_length * link_length
}

/// Regroups standard inertial parameters into the base inertias `ZZ1R` and
/// `ZZ2R`; every other field of `base` is passed through.
pub fn standard_to_base(
    base: &BaseParameters,
    zz1: f64,
    ia1: f64,
    zz2: f64,
    ia2: f64,
    m2: f64,
    link_length: f64,
) -> Result<BaseParameters> {
    if !(link_length >= 0.0) {
        return Err(Error::InvalidInput(format!("link length must be >= 0, got {link_length}")));
    }
    Ok(BaseParameters { zz1r: standard_to_base_zz1r(zz1, ia1, m2, link_length), zz2r: zz2 + ia2, ..*base })
}
