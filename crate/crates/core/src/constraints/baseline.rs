//! Baseline (continuous-dynamics) constraint rows.

use super::{
    skew3, BlockKind, BoundsSpec, ComVelPolygon, ConstraintBlock, ConstraintError, ContactSpec,
    Provenance, VariableLayout, ZmpPolygon,
};
use crate::model::{self, RobotModel, RobotState};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3};

/// Torque rows of the equation of motion with previous-step contact forces:
/// ±(M q̈)_i <= ±τ̄/τ̲ ± (prev_force - N)_i over the actuated joints. Rows
/// with an infinite bound are omitted.
///
/// `prev_generalized_force` is Jᵀ F from the previous control step (zero on
/// the first step).
pub fn joint_torque_rows(
    model: &RobotModel,
    state: &RobotState,
    prev_generalized_force: &DVector<f64>,
    bounds: &BoundsSpec,
    layout: &VariableLayout,
) -> Result<ConstraintBlock, ConstraintError> {
    let n = model.n_actuated();
    bounds.validate(n)?;
    if prev_generalized_force.len() != model.nv() {
        return Err(ConstraintError::DimensionMismatch {
            what: "prev_generalized_force",
            expected: model.nv(),
            got: prev_generalized_force.len(),
        });
    }
    let mass = model::mass_matrix(model, state).map_err(model_err)?;
    let bias = model::bias_forces(model, state).map_err(model_err)?;
    let offset = model.actuated_offset();
    let rhs_base = prev_generalized_force - bias;

    let mut rows = Vec::new();
    let mut rhs = Vec::new();
    for i in 0..n {
        let vi = offset + i;
        if bounds.tau_upper[i].is_finite() {
            rows.push((vi, 1.0));
            rhs.push(bounds.tau_upper[i] + rhs_base[vi]);
        }
        if bounds.tau_lower[i].is_finite() {
            rows.push((vi, -1.0));
            rhs.push(-bounds.tau_lower[i] - rhs_base[vi]);
        }
    }
    let mut a = DMatrix::zeros(rows.len(), model.nv());
    for (r, &(vi, sign)) in rows.iter().enumerate() {
        for c in 0..model.nv() {
            a[(r, c)] = sign * mass[(vi, c)];
        }
    }
    ConstraintBlock::from_acceleration_rows(
        "joint_torque",
        BlockKind::Inequality,
        Provenance::Baseline,
        a,
        DVector::from_vec(rhs),
        layout,
    )
}

/// Unactuated rows of the equation of motion with the decision-variable
/// contact forces: (M q̈ + N)_0..6 = (Σ J_iᵀ G_i λ_i)_0..6. Empty for a
/// fixed base. This is what makes the generator weights physical.
pub fn floating_base_dynamics_rows(
    model: &RobotModel,
    state: &RobotState,
    contacts: &[(usize, DMatrix<f64>)],
    layout: &VariableLayout,
) -> Result<ConstraintBlock, ConstraintError> {
    if !model.has_floating_base() {
        return ConstraintBlock::new(
            "floating_dynamics",
            BlockKind::Equality,
            Provenance::Baseline,
            DMatrix::zeros(0, layout.dim()),
            DVector::zeros(0),
        );
    }
    if contacts.len() != layout.n_contacts() {
        return Err(ConstraintError::DimensionMismatch {
            what: "contacts",
            expected: layout.n_contacts(),
            got: contacts.len(),
        });
    }
    let mass = model::mass_matrix(model, state).map_err(model_err)?;
    let bias = model::bias_forces(model, state).map_err(model_err)?;
    let mut a = DMatrix::zeros(6, layout.dim());
    a.view_mut((0, 0), (6, model.nv()))
        .copy_from(&mass.rows(0, 6));
    for (k, (ee, gen)) in contacts.iter().enumerate() {
        let j = model::point_jacobian(model, state, *ee).map_err(model_err)?;
        // Unactuated span of Jᵀ G: (6 x 3) * (3 x k).
        let jt_g = j.columns(0, 6).transpose() * gen;
        let off = layout.lambda_offset(k);
        let len = layout.lambda_len(k);
        if gen.ncols() != len {
            return Err(ConstraintError::DimensionMismatch {
                what: "generator count",
                expected: len,
                got: gen.ncols(),
            });
        }
        a.view_mut((0, off), (6, len)).copy_from(&(-jt_g));
    }
    let b = DVector::from_iterator(6, (0..6).map(|i| -bias[i]));
    ConstraintBlock::new(
        "floating_dynamics",
        BlockKind::Equality,
        Provenance::Baseline,
        a,
        b,
    )
}

/// Velocity and position limits over the actuated joints via Euler backward:
/// ±Δt q̈ <= ±(q̇ bound − q̇) and ±½Δt² q̈ <= ±(q bound − q − q̇ Δt).
pub fn joint_kinematic_rows(
    model: &RobotModel,
    state: &RobotState,
    bounds: &BoundsSpec,
    dt: f64,
    layout: &VariableLayout,
) -> Result<ConstraintBlock, ConstraintError> {
    let n = model.n_actuated();
    bounds.validate(n)?;
    let offset = model.actuated_offset();
    let q_offset = model.nq() - n;

    let mut entries: Vec<(usize, f64)> = Vec::new();
    let mut rhs = Vec::new();
    for i in 0..n {
        let vi = offset + i;
        let qd = state.v[vi];
        if bounds.qd_upper[i].is_finite() {
            entries.push((vi, dt));
            rhs.push(bounds.qd_upper[i] - qd);
        }
        if bounds.qd_lower[i].is_finite() {
            entries.push((vi, -dt));
            rhs.push(qd - bounds.qd_lower[i]);
        }
        let q = state.q[q_offset + i];
        let half = 0.5 * dt * dt;
        if bounds.q_upper[i].is_finite() {
            entries.push((vi, half));
            rhs.push(bounds.q_upper[i] - q - qd * dt);
        }
        if bounds.q_lower[i].is_finite() {
            entries.push((vi, -half));
            rhs.push(q + qd * dt - bounds.q_lower[i]);
        }
    }
    let mut a = DMatrix::zeros(entries.len(), model.nv());
    for (r, &(vi, coeff)) in entries.iter().enumerate() {
        a[(r, vi)] = coeff;
    }
    ConstraintBlock::from_acceleration_rows(
        "joint_kinematics",
        BlockKind::Inequality,
        Provenance::Baseline,
        a,
        DVector::from_vec(rhs),
        layout,
    )
}

/// Zero relative acceleration of established contacts: J q̈ = -J̇ q̇.
pub fn contact_acceleration_rows(
    model: &RobotModel,
    state: &RobotState,
    established: &[usize],
    layout: &VariableLayout,
) -> Result<ConstraintBlock, ConstraintError> {
    let mut a = DMatrix::zeros(3 * established.len(), model.nv());
    let mut b = DVector::zeros(3 * established.len());
    for (k, &ee) in established.iter().enumerate() {
        let j = model::point_jacobian(model, state, ee).map_err(model_err)?;
        let jdot = model::jacobian_derivative(model, state, ee).map_err(model_err)?;
        a.rows_mut(3 * k, 3).copy_from(&j);
        let drift = jdot * &state.v;
        for r in 0..3 {
            b[3 * k + r] = -drift[r];
        }
    }
    ConstraintBlock::from_acceleration_rows(
        "contact_acceleration",
        BlockKind::Equality,
        Provenance::Baseline,
        a,
        b,
        layout,
    )
}

/// Half-plane representation of one contact's wrench cone in its local frame
/// (z along the normal): C W <= offset, with W = [f; τ].
#[derive(Debug, Clone)]
pub struct WrenchCone {
    /// k x 6 rows over the local wrench.
    pub rows: DMatrix<f64>,
    /// Right-hand side; zero except for absolute yaw-torque rows.
    pub offset: DVector<f64>,
}

impl WrenchCone {
    /// The force columns of every row (what force jumps are tested against).
    pub fn force_columns(&self) -> DMatrix<f64> {
        self.rows.columns(0, 3).into_owned()
    }

    /// Evaluate the worst signed violation for a local wrench.
    pub fn violation(&self, wrench: &nalgebra::Vector6<f64>) -> f64 {
        let r = &self.rows * wrench - &self.offset;
        r.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x))
    }
}

/// Linearized friction pyramid (inner approximation), unilateral row, CoP
/// rectangle rows and optional yaw-torque interval rows.
pub fn contact_wrench_cone_rows(spec: &ContactSpec) -> Result<WrenchCone, ConstraintError> {
    spec.validate()?;
    let m = spec.generator_count;
    let mu_eff = spec.effective_friction();
    let (x_ext, y_ext) = spec.cop_half_extents;
    let extra = if spec.yaw_torque_bounds.is_some() { 2 } else { 0 };
    let mut rows = DMatrix::zeros(m + 1 + 4 + extra, 6);
    let mut offset = DVector::zeros(rows.nrows());
    for j in 0..m {
        let phi = 2.0 * std::f64::consts::PI * j as f64 / m as f64;
        rows[(j, 0)] = phi.cos();
        rows[(j, 1)] = phi.sin();
        rows[(j, 2)] = -mu_eff;
    }
    rows[(m, 2)] = -1.0; // f_n > 0
    // |τ_x| <= Y f_z and |τ_y| <= X f_z.
    rows[(m + 1, 3)] = 1.0;
    rows[(m + 1, 2)] = -y_ext;
    rows[(m + 2, 3)] = -1.0;
    rows[(m + 2, 2)] = -y_ext;
    rows[(m + 3, 4)] = 1.0;
    rows[(m + 3, 2)] = -x_ext;
    rows[(m + 4, 4)] = -1.0;
    rows[(m + 4, 2)] = -x_ext;
    if let Some((lo, hi)) = spec.yaw_torque_bounds {
        rows[(m + 5, 5)] = 1.0;
        offset[m + 5] = hi;
        rows[(m + 6, 5)] = -1.0;
        offset[m + 6] = -lo;
    }
    Ok(WrenchCone { rows, offset })
}

/// Wrench-space ZMP rows G_z = [-b nᵀ | A n̂]: G_z W <= 0 is equivalent to
/// A z <= b for any wrench with positive normal force.
pub fn zmp_rows(polygon: &ZmpPolygon) -> DMatrix<f64> {
    let k = polygon.a.nrows();
    let n = polygon.normal.into_inner();
    let n_hat = skew3(&n);
    let mut g = DMatrix::zeros(k, 6);
    for r in 0..k {
        for c in 0..3 {
            g[(r, c)] = -polygon.b[r] * n[c];
        }
        let a_row = Vector3::new(polygon.a[(r, 0)], polygon.a[(r, 1)], polygon.a[(r, 2)]);
        let torque_part = n_hat.transpose() * a_row; // row · n̂ as a column
        for c in 0..3 {
            g[(r, 3 + c)] = torque_part[c];
        }
    }
    g
}

/// COM-velocity polygon rows over q̈ via the Euler-forward velocity map:
/// G (ċ_xy + A_v,xy/M q̈ Δt) <= h.
pub fn com_velocity_rows(
    polygon: &ComVelPolygon,
    model: &RobotModel,
    state: &RobotState,
    dt: f64,
    layout: &VariableLayout,
) -> Result<ConstraintBlock, ConstraintError> {
    polygon.validate()?;
    let cmm = model::centroidal_momentum_matrix(model, state).map_err(model_err)?;
    let vel_map = cmm.linear().rows(0, 2).into_owned() / cmm.total_mass();
    let cdot = &vel_map * &state.v;
    let a = &polygon.g * vel_map * dt;
    let b = &polygon.h - &polygon.g * cdot;
    ConstraintBlock::from_acceleration_rows(
        "com_velocity",
        BlockKind::Inequality,
        Provenance::Baseline,
        a,
        b,
        layout,
    )
}

/// Angular-momentum bound rows over q̈: A_ω Δt q̈ <= k̄ - A_ω q̇.
pub fn angular_momentum_rows(
    model: &RobotModel,
    state: &RobotState,
    upper: &Vector3<f64>,
    dt: f64,
    layout: &VariableLayout,
) -> Result<ConstraintBlock, ConstraintError> {
    let cmm = model::centroidal_momentum_matrix(model, state).map_err(model_err)?;
    let a_w = cmm.angular();
    let current = &a_w * &state.v;
    let a = a_w * dt;
    let b = DVector::from_iterator(3, (0..3).map(|i| upper[i] - current[i]));
    ConstraintBlock::from_acceleration_rows(
        "angular_momentum",
        BlockKind::Inequality,
        Provenance::Baseline,
        a,
        b,
        layout,
    )
}

/// Generator weights are cone coordinates: λ >= 0.
pub fn lambda_nonnegativity_rows(layout: &VariableLayout) -> ConstraintBlock {
    let n = layout.n_lambda();
    let mut a = DMatrix::zeros(n, layout.dim());
    for k in 0..n {
        a[(k, layout.nv() + k)] = -1.0;
    }
    ConstraintBlock::new(
        "lambda_nonnegative",
        BlockKind::Inequality,
        Provenance::Baseline,
        a,
        DVector::zeros(n),
    )
    .expect("structurally finite")
}

/// Cone rows mapped through one contact's generator matrix:
/// C_f (R G λ) <= offset, with R the world-to-local rotation.
pub fn cwc_lambda_rows(
    cone: &WrenchCone,
    generators: &DMatrix<f64>,
    world_to_local: &Matrix3<f64>,
    contact_index: usize,
    layout: &VariableLayout,
) -> Result<ConstraintBlock, ConstraintError> {
    let len = layout.lambda_len(contact_index);
    if generators.ncols() != len {
        return Err(ConstraintError::DimensionMismatch {
            what: "generator count",
            expected: len,
            got: generators.ncols(),
        });
    }
    let mapped = cone.force_columns() * world_to_local * generators;
    let mut a = DMatrix::zeros(mapped.nrows(), layout.dim());
    a.view_mut((0, layout.lambda_offset(contact_index)), (mapped.nrows(), len))
        .copy_from(&mapped);
    ConstraintBlock::new(
        format!("contact_wrench_cone_{contact_index}"),
        BlockKind::Inequality,
        Provenance::Baseline,
        a,
        cone.offset.clone(),
    )
}

/// ZMP rows over the decision forces: G_z Σ [I; (p_i - o)×] G_i λ_i <= 0.
pub fn zmp_lambda_rows(
    polygon: &ZmpPolygon,
    contacts: &[(Vector3<f64>, DMatrix<f64>)],
    origin: &Vector3<f64>,
    layout: &VariableLayout,
) -> Result<ConstraintBlock, ConstraintError> {
    if contacts.len() != layout.n_contacts() {
        return Err(ConstraintError::DimensionMismatch {
            what: "contacts",
            expected: layout.n_contacts(),
            got: contacts.len(),
        });
    }
    let g_z = zmp_rows(polygon);
    let k = g_z.nrows();
    let mut a = DMatrix::zeros(k, layout.dim());
    for (i, (pos, gen)) in contacts.iter().enumerate() {
        let mut map = DMatrix::zeros(6, 3);
        map.view_mut((0, 0), (3, 3)).copy_from(&Matrix3::identity());
        map.view_mut((3, 0), (3, 3)).copy_from(&skew3(&(pos - origin)));
        let block = &g_z * map * gen;
        a.view_mut((0, layout.lambda_offset(i)), (k, layout.lambda_len(i)))
            .copy_from(&block);
    }
    ConstraintBlock::new(
        "zmp",
        BlockKind::Inequality,
        Provenance::Baseline,
        a,
        DVector::zeros(k),
    )
}

fn model_err(e: crate::model::ModelError) -> ConstraintError {
    ConstraintError::BadBounds(e.to_string())
}
