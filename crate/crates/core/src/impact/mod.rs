//! Impact prediction: restitution map, impulse distribution and the
//! whole-body jump predictors.
//!
//! Every predicted discontinuity Δλ is expressed as an affine function of the
//! controller decision variables, Δλ = J_Δ q̈ Δt + C_Δ q̇, so constraint rows
//! can bound post-impact quantities one control step ahead of the impact.

mod distribution;

pub use distribution::{
    build_distribution, zmp_jump, Conditioning, ImpulseDistribution, ImpulseSolution,
    MIN_POST_IMPACT_NORMAL_FORCE,
};

use crate::model::{self, ModelError, RobotModel, RobotState};
use nalgebra::{DMatrix, DVector, Matrix3, Unit, Vector3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImpactError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("impacting end-effector set is empty")]
    EmptyImpactSet,
    #[error("expected {expected} impact configs, got {got}")]
    ConfigCount { expected: usize, got: usize },
    #[error("impact config invalid: {0}")]
    BadConfig(String),
    #[error("impact configs disagree on {0}; one timing per distribution")]
    InconsistentTiming(&'static str),
    #[error("distribution matrix is degenerate (singular values {0:?})")]
    IllConditioned(Vec<f64>),
    #[error("post-impact normal force {0:.3e} N is too close to zero for a ZMP")]
    DegenerateZmp(f64),
    #[error("mass matrix is not positive definite at this state")]
    MassMatrixNotSpd,
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
}

/// Per-contact impact model parameters.
#[derive(Debug, Clone)]
pub struct ImpactConfig {
    /// Coefficient of restitution, >= 0.
    pub restitution: f64,
    /// Contact surface normal, world frame.
    pub normal: Unit<Vector3<f64>>,
    /// Impact duration δt in seconds (force jump = impulse / δt).
    pub impact_duration: f64,
    /// Controller period Δt in seconds.
    pub control_period: f64,
}

impl ImpactConfig {
    pub fn new(
        restitution: f64,
        normal: Vector3<f64>,
        impact_duration: f64,
        control_period: f64,
    ) -> Result<Self, ImpactError> {
        let cfg = Self {
            restitution,
            normal: Unit::new_normalize(normal),
            impact_duration,
            control_period,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ImpactError> {
        if self.restitution < 0.0 {
            return Err(ImpactError::BadConfig("restitution must be >= 0".into()));
        }
        if !(self.impact_duration > 0.0) {
            return Err(ImpactError::BadConfig("impact duration must be > 0".into()));
        }
        if !(self.control_period > 0.0) {
            return Err(ImpactError::BadConfig("control period must be > 0".into()));
        }
        if (self.normal.norm() - 1.0).abs() > 1e-9 {
            return Err(ImpactError::BadConfig("normal must be unit length".into()));
        }
        Ok(())
    }

    /// Projector onto the contact normal, P_n = n nᵀ.
    pub fn normal_projector(&self) -> Matrix3<f64> {
        self.normal.into_inner() * self.normal.into_inner().transpose()
    }

    /// Velocity-jump projector P_Δ = -(1 + c_r) n nᵀ.
    pub fn jump_projector(&self) -> Matrix3<f64> {
        -(1.0 + self.restitution) * self.normal_projector()
    }
}

/// Affine decomposition of a predicted jump: Δλ = J_Δ q̈ Δt + C_Δ q̇.
#[derive(Debug, Clone)]
pub struct JumpDecomposition {
    /// Name of the predicted quantity (for logs and CSV output).
    pub quantity: String,
    /// Gain on q̈ Δt.
    pub accel_gain: DMatrix<f64>,
    /// Gain on q̇.
    pub vel_gain: DMatrix<f64>,
    /// The controller period Δt baked into the accel term.
    pub control_period: f64,
}

impl JumpDecomposition {
    pub fn rows(&self) -> usize {
        self.accel_gain.nrows()
    }

    /// Evaluate Δλ = J_Δ q̈ Δt + C_Δ q̇.
    pub fn evaluate(&self, qdd: &DVector<f64>, qd: &DVector<f64>) -> DVector<f64> {
        &self.accel_gain * qdd * self.control_period + &self.vel_gain * qd
    }

    /// Compose a constant linear map on the left: `map * self`.
    pub fn premultiply(&self, quantity: impl Into<String>, map: &DMatrix<f64>) -> Self {
        Self {
            quantity: quantity.into(),
            accel_gain: map * &self.accel_gain,
            vel_gain: map * &self.vel_gain,
            control_period: self.control_period,
        }
    }

    pub fn zeros(quantity: impl Into<String>, rows: usize, nv: usize, control_period: f64) -> Self {
        Self {
            quantity: quantity.into(),
            accel_gain: DMatrix::zeros(rows, nv),
            vel_gain: DMatrix::zeros(rows, nv),
            control_period,
        }
    }
}

/// Three-dimensional end-effector velocity jump from the restitution law:
/// Δẋ = -(1 + c_r) (n nᵀ) ẋ⁻. The tangential component is untouched.
pub fn restitution_jump(
    config: &ImpactConfig,
    pre_velocity: &Vector3<f64>,
) -> Result<Vector3<f64>, ImpactError> {
    config.validate()?;
    Ok(config.jump_projector() * pre_velocity)
}

/// Jump decomposition of the stacked velocity jumps of the impacting set:
/// J_Δ = P J, C_Δ = P (J + J̇ Δt), with P the block diagonal of the
/// per-contact jump projectors.
pub fn impacting_velocity_jump_map(
    model: &RobotModel,
    state: &RobotState,
    impacting: &[usize],
    configs: &[ImpactConfig],
) -> Result<JumpDecomposition, ImpactError> {
    if impacting.is_empty() {
        return Err(ImpactError::EmptyImpactSet);
    }
    if configs.len() != impacting.len() {
        return Err(ImpactError::ConfigCount {
            expected: impacting.len(),
            got: configs.len(),
        });
    }
    for c in configs {
        c.validate()?;
    }
    let dt = configs[0].control_period;
    if configs.iter().any(|c| (c.control_period - dt).abs() > 1e-12) {
        return Err(ImpactError::InconsistentTiming("control period"));
    }
    let nv = model.nv();
    let mut j = DMatrix::zeros(3 * impacting.len(), nv);
    let mut jdot = DMatrix::zeros(3 * impacting.len(), nv);
    for (k, &ee) in impacting.iter().enumerate() {
        j.rows_mut(3 * k, 3)
            .copy_from(&model::point_jacobian(model, state, ee)?);
        jdot.rows_mut(3 * k, 3)
            .copy_from(&model::jacobian_derivative(model, state, ee)?);
    }
    let p = block_diag_projectors(configs);
    Ok(JumpDecomposition {
        quantity: "impacting_velocity".into(),
        accel_gain: &p * &j,
        vel_gain: &p * (&j + &jdot * dt),
        control_period: dt,
    })
}

pub(crate) fn block_diag_projectors(configs: &[ImpactConfig]) -> DMatrix<f64> {
    let mut p = DMatrix::zeros(3 * configs.len(), 3 * configs.len());
    for (k, c) in configs.iter().enumerate() {
        p.view_mut((3 * k, 3 * k), (3, 3)).copy_from(&c.jump_projector());
    }
    p
}
