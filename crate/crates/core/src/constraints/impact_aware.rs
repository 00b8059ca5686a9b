//! Impact-aware constraint rows: bound predicted post-impact quantities.
//!
//! The generic template bounds λ⁺ = λ + Δλ with the jump decomposition
//! Δλ = J_Δ q̈ Δt + C_Δ q̇, dropping the pre-impact drift term. Quantities
//! that are exact linear images of q̇ (joint velocity, angular momentum,
//! COM velocity) keep their drift through the decision variable itself, so
//! zeroing the decomposition recovers the baseline rows exactly.

use super::baseline::WrenchCone;
use super::{
    BlockKind, BoundsSpec, ComVelPolygon, ConstraintBlock, ConstraintError, Provenance,
    VariableLayout, ZmpPolygon,
};
use crate::impact::JumpDecomposition;
use crate::model::{RobotModel, RobotState};
use nalgebra::{DMatrix, DVector, Matrix3, Vector3, Vector6};

/// Generic template: D J_Δ q̈ Δt <= bound - D (λ + C_Δ q̇).
///
/// Rows whose bound is infinite are omitted.
pub fn impact_template_rows(
    label: impl Into<String>,
    d: &DMatrix<f64>,
    bound: &DVector<f64>,
    decomposition: &JumpDecomposition,
    current: &DVector<f64>,
    state: &RobotState,
    layout: &VariableLayout,
) -> Result<ConstraintBlock, ConstraintError> {
    if d.nrows() != bound.len() {
        return Err(ConstraintError::DimensionMismatch {
            what: "template bound",
            expected: d.nrows(),
            got: bound.len(),
        });
    }
    if d.ncols() != decomposition.rows() || d.ncols() != current.len() {
        return Err(ConstraintError::DimensionMismatch {
            what: "template quantity",
            expected: d.ncols(),
            got: decomposition.rows(),
        });
    }
    let dt = decomposition.control_period;
    let lhs_full = d * &decomposition.accel_gain * dt;
    let rhs_full = bound - d * (current + &decomposition.vel_gain * &state.v);
    let keep: Vec<usize> = (0..bound.len()).filter(|&r| bound[r].is_finite()).collect();
    let mut a = DMatrix::zeros(keep.len(), layout.nv());
    let mut b = DVector::zeros(keep.len());
    for (r, &src) in keep.iter().enumerate() {
        a.row_mut(r).copy_from(&lhs_full.row(src));
        b[r] = rhs_full[src];
    }
    ConstraintBlock::from_acceleration_rows(
        label,
        BlockKind::Inequality,
        Provenance::ImpactAware,
        a,
        b,
        layout,
    )
}

/// Post-impact joint velocity rows:
/// ±S (I + J_Δq̇) q̈ Δt <= ±bounds ∓ S (I + C_Δq̇) q̇,
/// with S selecting the actuated joints. The pre-impact drift enters through
/// the decision variable itself, so the zero-jump case is exactly the
/// baseline velocity limit.
pub fn impact_joint_velocity_rows(
    model: &RobotModel,
    state: &RobotState,
    decomposition: &JumpDecomposition,
    bounds: &BoundsSpec,
    layout: &VariableLayout,
) -> Result<ConstraintBlock, ConstraintError> {
    let nv = model.nv();
    if decomposition.rows() != nv {
        return Err(ConstraintError::DimensionMismatch {
            what: "joint velocity decomposition",
            expected: nv,
            got: decomposition.rows(),
        });
    }
    bounds.validate(model.n_actuated())?;
    let dt = decomposition.control_period;
    let identity = DMatrix::identity(nv, nv);
    let accel = (&identity + &decomposition.accel_gain) * dt;
    let post_vel = (&identity + &decomposition.vel_gain) * &state.v;
    let offset = model.actuated_offset();

    let mut rows: Vec<(usize, f64, f64)> = Vec::new();
    for i in 0..model.n_actuated() {
        let vi = offset + i;
        if bounds.qd_upper[i].is_finite() {
            rows.push((vi, 1.0, bounds.qd_upper[i] - post_vel[vi]));
        }
        if bounds.qd_lower[i].is_finite() {
            rows.push((vi, -1.0, post_vel[vi] - bounds.qd_lower[i]));
        }
    }
    let mut a = DMatrix::zeros(rows.len(), nv);
    let mut b = DVector::zeros(rows.len());
    for (r, &(vi, sign, rhs)) in rows.iter().enumerate() {
        for c in 0..nv {
            a[(r, c)] = sign * accel[(vi, c)];
        }
        b[r] = rhs;
    }
    ConstraintBlock::from_acceleration_rows(
        "impact_joint_velocity",
        BlockKind::Inequality,
        Provenance::ImpactAware,
        a,
        b,
        layout,
    )
}

/// Post-impact impulsive torque rows: ±S J_γ q̈ Δt <= ±γ bounds ∓ S C_γ q̇.
/// The current impulsive torque is zero (the impact sits one step ahead).
pub fn impact_impulsive_torque_rows(
    model: &RobotModel,
    state: &RobotState,
    decomposition: &JumpDecomposition,
    bounds: &BoundsSpec,
    layout: &VariableLayout,
) -> Result<ConstraintBlock, ConstraintError> {
    let nv = model.nv();
    if decomposition.rows() != nv {
        return Err(ConstraintError::DimensionMismatch {
            what: "impulsive torque decomposition",
            expected: nv,
            got: decomposition.rows(),
        });
    }
    bounds.validate(model.n_actuated())?;
    let dt = decomposition.control_period;
    let jump_vel = &decomposition.vel_gain * &state.v;
    let offset = model.actuated_offset();

    let mut rows: Vec<(usize, f64, f64)> = Vec::new();
    for i in 0..model.n_actuated() {
        let vi = offset + i;
        if bounds.gamma_upper[i].is_finite() {
            rows.push((vi, 1.0, bounds.gamma_upper[i] - jump_vel[vi]));
        }
        if bounds.gamma_lower[i].is_finite() {
            rows.push((vi, -1.0, jump_vel[vi] - bounds.gamma_lower[i]));
        }
    }
    let mut a = DMatrix::zeros(rows.len(), nv);
    let mut b = DVector::zeros(rows.len());
    for (r, &(vi, sign, rhs)) in rows.iter().enumerate() {
        for c in 0..nv {
            a[(r, c)] = sign * decomposition.accel_gain[(vi, c)] * dt;
        }
        b[r] = rhs;
    }
    ConstraintBlock::from_acceleration_rows(
        "impact_impulsive_torque",
        BlockKind::Inequality,
        Provenance::ImpactAware,
        a,
        b,
        layout,
    )
}

/// Post-impact contact wrench cone for one established contact:
/// C_f R (f + Δf) <= offset with Δf the 3-row slice of the force-jump
/// decomposition belonging to this contact.
#[allow(clippy::too_many_arguments)]
pub fn impact_cwc_rows(
    cone: &WrenchCone,
    force_decomposition: &JumpDecomposition,
    contact_slice: usize,
    measured_force_world: &Vector3<f64>,
    world_to_local: &Matrix3<f64>,
    state: &RobotState,
    layout: &VariableLayout,
    label: impl Into<String>,
) -> Result<ConstraintBlock, ConstraintError> {
    let rows = force_decomposition.rows();
    if 3 * contact_slice + 3 > rows {
        return Err(ConstraintError::DimensionMismatch {
            what: "force decomposition slice",
            expected: 3 * contact_slice + 3,
            got: rows,
        });
    }
    let dt = force_decomposition.control_period;
    let j_f = force_decomposition
        .accel_gain
        .rows(3 * contact_slice, 3)
        .into_owned();
    let c_f = force_decomposition
        .vel_gain
        .rows(3 * contact_slice, 3)
        .into_owned();
    let map = cone.force_columns() * world_to_local;
    let a = &map * j_f * dt;
    let post = measured_force_world + c_f * &state.v;
    let b = &cone.offset - map * post;
    ConstraintBlock::from_acceleration_rows(
        label,
        BlockKind::Inequality,
        Provenance::ImpactAware,
        a,
        b,
        layout,
    )
}

/// Post-impact angular momentum rows:
/// (A_ω + J_Δk) q̈ Δt <= k̄ - (A_ω q̇ + C_Δk q̇).
/// The drift A_ω q̈ Δt is kept through the decision variable, so the
/// zero-jump case reduces to the baseline angular-momentum rows.
pub fn impact_angular_momentum_rows(
    angular_map: &DMatrix<f64>,
    decomposition: &JumpDecomposition,
    upper: &Vector3<f64>,
    state: &RobotState,
    layout: &VariableLayout,
) -> Result<ConstraintBlock, ConstraintError> {
    if decomposition.rows() != 3 {
        return Err(ConstraintError::DimensionMismatch {
            what: "angular momentum decomposition",
            expected: 3,
            got: decomposition.rows(),
        });
    }
    let dt = decomposition.control_period;
    let a = (angular_map + &decomposition.accel_gain) * dt;
    let current = angular_map * &state.v + &decomposition.vel_gain * &state.v;
    let b = DVector::from_iterator(3, (0..3).map(|i| upper[i] - current[i]));
    ConstraintBlock::from_acceleration_rows(
        "impact_angular_momentum",
        BlockKind::Inequality,
        Provenance::ImpactAware,
        a,
        b,
        layout,
    )
}

/// Post-impact horizontal COM velocity rows:
/// G (A_v,xy/M + J_Δċ) q̈ Δt <= h - G (ċ_xy + C_Δċ q̇), drift kept.
pub fn impact_com_velocity_rows(
    polygon: &ComVelPolygon,
    velocity_map: &DMatrix<f64>,
    decomposition: &JumpDecomposition,
    state: &RobotState,
    layout: &VariableLayout,
) -> Result<ConstraintBlock, ConstraintError> {
    polygon.validate()?;
    if decomposition.rows() != 2 || velocity_map.nrows() != 2 {
        return Err(ConstraintError::DimensionMismatch {
            what: "com velocity decomposition",
            expected: 2,
            got: decomposition.rows(),
        });
    }
    let dt = decomposition.control_period;
    let a = &polygon.g * (velocity_map + &decomposition.accel_gain) * dt;
    let current = velocity_map * &state.v + &decomposition.vel_gain * &state.v;
    let b = &polygon.h - &polygon.g * current;
    ConstraintBlock::from_acceleration_rows(
        "impact_com_velocity",
        BlockKind::Inequality,
        Provenance::ImpactAware,
        a,
        b,
        layout,
    )
}

/// Post-impact ZMP rows: G_z J_ΔW q̈ Δt <= -G_z (W + C_ΔW q̇), with W the
/// measured net contact wrench at the polygon's reference frame.
pub fn impact_zmp_rows(
    polygon: &ZmpPolygon,
    wrench_decomposition: &JumpDecomposition,
    measured_wrench: &Vector6<f64>,
    state: &RobotState,
    layout: &VariableLayout,
) -> Result<ConstraintBlock, ConstraintError> {
    if wrench_decomposition.rows() != 6 {
        return Err(ConstraintError::DimensionMismatch {
            what: "wrench decomposition",
            expected: 6,
            got: wrench_decomposition.rows(),
        });
    }
    let g_z = super::baseline::zmp_rows(polygon);
    let dt = wrench_decomposition.control_period;
    let a = &g_z * &wrench_decomposition.accel_gain * dt;
    let post = {
        let mut w = DVector::zeros(6);
        for k in 0..6 {
            w[k] = measured_wrench[k];
        }
        w + &wrench_decomposition.vel_gain * &state.v
    };
    let b = -(&g_z * post);
    ConstraintBlock::from_acceleration_rows(
        "impact_zmp",
        BlockKind::Inequality,
        Provenance::ImpactAware,
        a,
        b,
        layout,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::impact::{build_distribution, ImpactConfig};
    use crate::model::{samples, EndEffectorPartition};
    use approx::assert_abs_diff_eq;
    use nalgebra::{DVector, Unit};

    fn toy() -> (
        crate::model::RobotModel,
        RobotState,
        crate::impact::ImpulseDistribution,
    ) {
        let model = samples::planar_two_link(0.5, 0.5);
        let state = RobotState::new(
            DVector::from_vec(vec![0.0, 0.2 * std::f64::consts::PI]),
            DVector::from_vec(vec![0.6, -0.6]),
        );
        let partition = EndEffectorPartition::from_model(&model);
        let cfg = ImpactConfig::new(0.02, Vector3::y(), 0.005, 0.005).unwrap();
        let dist = build_distribution(&model, &state, &partition, &[cfg]).unwrap();
        (model, state, dist)
    }

    #[test]
    fn template_reduces_to_static_bound_with_zero_jump() {
        let (model, state, _) = toy();
        let layout = VariableLayout::acceleration_only(model.nv());
        let zero = crate::impact::JumpDecomposition::zeros("test", 1, model.nv(), 0.005);
        let d = DMatrix::identity(1, 1);
        let block = impact_template_rows(
            "template",
            &d,
            &DVector::from_vec(vec![1.0]),
            &zero,
            &DVector::from_vec(vec![0.9]),
            &state,
            &layout,
        )
        .unwrap();
        assert_eq!(block.rows(), 1);
        assert!(block.a.row(0).iter().all(|&x| x == 0.0));
        assert_abs_diff_eq!(block.b[0], 0.1, epsilon = 1e-12);

        // Scalar with a jump contribution of 0.2 through C q̇.
        let mut jumpy = crate::impact::JumpDecomposition::zeros("test", 1, model.nv(), 0.005);
        jumpy.vel_gain[(0, 0)] = 0.2 / state.v[0];
        let block = impact_template_rows(
            "template",
            &d,
            &DVector::from_vec(vec![1.0]),
            &jumpy,
            &DVector::from_vec(vec![0.9]),
            &state,
            &layout,
        )
        .unwrap();
        assert_abs_diff_eq!(block.b[0], -0.1, epsilon = 1e-12);

        // Infinite bounds produce no rows at all.
        let vacuous = impact_template_rows(
            "template",
            &d,
            &DVector::from_vec(vec![f64::INFINITY]),
            &zero,
            &DVector::from_vec(vec![0.9]),
            &state,
            &layout,
        )
        .unwrap();
        assert!(vacuous.is_empty());
    }

    #[test]
    fn joint_velocity_rows_reduce_to_baseline_at_full_damping() {
        // c_r -> -1 sends P_Δ -> 0, so the impact-aware rows must equal the
        // baseline velocity rows exactly.
        let model = samples::planar_two_link(0.5, 0.5);
        let state = RobotState::new(
            DVector::from_vec(vec![0.0, 0.2 * std::f64::consts::PI]),
            DVector::from_vec(vec![0.6, -0.6]),
        );
        let partition = EndEffectorPartition::from_model(&model);
        let cfg = ImpactConfig::new(0.0, Vector3::y(), 0.005, 0.005).unwrap();
        let dist = build_distribution(&model, &state, &partition, &[cfg]).unwrap();
        let mut decomp = dist.joint_velocity_jump();
        // Analytic limit: zero the jump gains entirely.
        decomp.accel_gain.fill(0.0);
        decomp.vel_gain.fill(0.0);
        let bounds = BoundsSpec::velocity_symmetric(DVector::from_vec(vec![0.9, 0.6]));
        let layout = VariableLayout::acceleration_only(2);
        let aware =
            impact_joint_velocity_rows(&model, &state, &decomp, &bounds, &layout).unwrap();
        let baseline = super::super::joint_kinematic_rows(&model, &state, &bounds, 0.005, &layout)
            .unwrap();
        assert_eq!(aware.rows(), baseline.rows());
        assert!((aware.a.clone() - baseline.a.clone()).norm() < 1e-14);
        assert!((aware.b.clone() - baseline.b.clone()).norm() < 1e-14);
    }

    #[test]
    fn joint_velocity_rows_bound_post_impact_state() {
        // Soundness: any feasible q̈ keeps the predicted post-impact joint
        // velocity within bounds (algebraic, checked numerically).
        let (model, state, dist) = toy();
        let decomp = dist.joint_velocity_jump();
        let bounds = BoundsSpec::velocity_symmetric(DVector::from_vec(vec![0.9, 0.6]));
        let layout = VariableLayout::acceleration_only(2);
        let block =
            impact_joint_velocity_rows(&model, &state, &decomp, &bounds, &layout).unwrap();
        let mut rng = samples::SampleStream::new(4);
        let mut feasible_seen = 0;
        for _ in 0..500 {
            let qdd = DVector::from_fn(2, |_, _| rng.uniform(-400.0, 400.0));
            if block.violation(&qdd) > 0.0 {
                continue;
            }
            feasible_seen += 1;
            let post = &state.v + &qdd * 0.005 + decomp.evaluate(&qdd, &state.v);
            assert!(post[0] <= 0.9 + 1e-9 && post[0] >= -0.9 - 1e-9);
            assert!(post[1] <= 0.6 + 1e-9 && post[1] >= -0.6 - 1e-9);
        }
        assert!(feasible_seen > 20);
    }

    #[test]
    fn impulsive_torque_rows_use_zero_current_torque() {
        let (model, state, dist) = toy();
        let decomp = dist.impulsive_torque_jumps();
        let mut bounds = BoundsSpec::unbounded(2);
        bounds.gamma_lower = DVector::from_vec(vec![-50.0, -50.0]);
        bounds.gamma_upper = DVector::from_vec(vec![50.0, 50.0]);
        let layout = VariableLayout::acceleration_only(2);
        let block =
            impact_impulsive_torque_rows(&model, &state, &decomp, &bounds, &layout).unwrap();
        assert_eq!(block.rows(), 4);
        // Soundness: feasible q̈ keeps the predicted torque jump in bounds.
        let mut rng = samples::SampleStream::new(6);
        for _ in 0..200 {
            let qdd = DVector::from_fn(2, |_, _| rng.uniform(-400.0, 400.0));
            if block.violation(&qdd) > 0.0 {
                continue;
            }
            let gamma = decomp.evaluate(&qdd, &state.v);
            assert!(gamma[0].abs() <= 50.0 + 1e-9);
            assert!(gamma[1].abs() <= 50.0 + 1e-9);
        }
        // All-zero decomposition turns the block vacuous over q̈.
        let zero = crate::impact::JumpDecomposition::zeros("z", 2, 2, 0.005);
        let block =
            impact_impulsive_torque_rows(&model, &state, &zero, &bounds, &layout).unwrap();
        assert!(block.a.iter().all(|&x| x == 0.0));
        assert!(block.b.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn cwc_rows_bound_post_impact_force() {
        // A synthetic force decomposition over one contact.
        let spec = super::super::ContactSpec::point_contact(0.7);
        let cone = super::super::contact_wrench_cone_rows(&spec).unwrap();
        let nv = 2;
        let layout = VariableLayout::acceleration_only(nv);
        let state = RobotState::new(DVector::zeros(2), DVector::from_vec(vec![0.1, -0.2]));
        let mut decomp = crate::impact::JumpDecomposition::zeros("f", 3, nv, 0.005);
        decomp.accel_gain[(2, 0)] = -3.0; // qdd_0 pushes normal force down
        decomp.vel_gain[(0, 1)] = 1.5;
        let f_meas = Vector3::new(0.0, 0.0, 20.0);
        let block = impact_cwc_rows(
            &cone,
            &decomp,
            0,
            &f_meas,
            &Matrix3::identity(),
            &state,
            &layout,
            "cwc_0",
        )
        .unwrap();
        let mut rng = samples::SampleStream::new(10);
        for _ in 0..200 {
            let qdd = DVector::from_fn(nv, |_, _| rng.uniform(-2000.0, 2000.0));
            let jump = decomp.evaluate(&qdd, &state.v);
            let post = f_meas + Vector3::new(jump[0], jump[1], jump[2]);
            let w = nalgebra::Vector6::new(post[0], post[1], post[2], 0.0, 0.0, 0.0);
            let in_cone = cone.violation(&w) <= 1e-9;
            let feasible = block.violation(&qdd) <= 1e-9;
            assert_eq!(in_cone, feasible, "cone membership must match row feasibility");
        }
    }

    #[test]
    fn centroidal_aware_rows_reduce_to_baseline() {
        let mut model = samples::random_serial_arm(55, 6, true);
        let tip = model
            .add_end_effector(crate::model::EndEffectorFrame {
                name: "hand".into(),
                body: model.links().len() - 1,
                transform: nalgebra::Isometry3::translation(0.2, 0.0, 0.0),
                role: crate::model::EndEffectorRole::Impacting,
            })
            .unwrap();
        let _ = tip;
        let state = samples::random_state(&model, 12);
        let partition = EndEffectorPartition::from_model(&model);
        let cfg = ImpactConfig::new(0.1, Vector3::x(), 0.005, 0.005).unwrap();
        let dist = build_distribution(&model, &state, &partition, &[cfg]).unwrap();
        let layout = VariableLayout::acceleration_only(model.nv());
        let cmm = crate::model::centroidal_momentum_matrix(&model, &state).unwrap();
        let k_bound = Vector3::new(2.0, 2.0, 2.0);

        let mut zero_k = dist.angular_momentum_jump().unwrap();
        zero_k.accel_gain.fill(0.0);
        zero_k.vel_gain.fill(0.0);
        let aware =
            impact_angular_momentum_rows(&cmm.angular(), &zero_k, &k_bound, &state, &layout)
                .unwrap();
        let baseline = super::super::angular_momentum_rows(&model, &state, &k_bound, 0.005, &layout)
            .unwrap();
        assert!((aware.a.clone() - baseline.a.clone()).norm() < 1e-12);
        assert!((aware.b.clone() - baseline.b.clone()).norm() < 1e-12);

        let polygon = ComVelPolygon::rectangle(0.5, 0.5).unwrap();
        let vel_map = cmm.linear().rows(0, 2).into_owned() / cmm.total_mass();
        let mut zero_c = dist.com_velocity_jump().unwrap();
        zero_c.accel_gain.fill(0.0);
        zero_c.vel_gain.fill(0.0);
        let aware =
            impact_com_velocity_rows(&polygon, &vel_map, &zero_c, &state, &layout).unwrap();
        let baseline =
            super::super::com_velocity_rows(&polygon, &model, &state, 0.005, &layout).unwrap();
        assert!((aware.a.clone() - baseline.a.clone()).norm() < 1e-12);
        assert!((aware.b.clone() - baseline.b.clone()).norm() < 1e-12);
    }

    #[test]
    fn zmp_rows_flag_polygon_exit() {
        let polygon = ZmpPolygon::rectangle(0.0, 0.0, 0.1, 0.08).unwrap();
        let nv = 3;
        let layout = VariableLayout::acceleration_only(nv);
        let state = RobotState::new(DVector::zeros(3), DVector::zeros(3));
        // Wrench decomposition producing a pure torque jump around y per qdd_0.
        let mut decomp = crate::impact::JumpDecomposition::zeros("w", 6, nv, 0.005);
        decomp.accel_gain[(4, 0)] = -100.0;
        let w = nalgebra::Vector6::new(0.0, 0.0, 50.0, 0.0, 0.0, 0.0); // ZMP at origin
        let block = impact_zmp_rows(&polygon, &decomp, &w, &state, &layout).unwrap();
        // qdd_0 shifts the predicted ZMP x by n̂ Δτ / f_z = 100*0.005*qdd/50.
        let inside = DVector::from_vec(vec![5.0, 0.0, 0.0]); // 0.05 m
        assert!(block.violation(&inside) <= 1e-9);
        let outside = DVector::from_vec(vec![15.0, 0.0, 0.0]); // 0.15 m
        assert!(block.violation(&outside) > 0.0);
        // Zero decomposition: vacuous while the current ZMP is interior.
        let zero = crate::impact::JumpDecomposition::zeros("w", 6, nv, 0.005);
        let block = impact_zmp_rows(&polygon, &zero, &w, &state, &layout).unwrap();
        assert!(block.a.iter().all(|&x| x == 0.0));
        assert!(block.b.iter().all(|&x| x >= 0.0));
    }
}
