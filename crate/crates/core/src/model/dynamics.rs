//! Joint-space inertia matrix and bias forces.
//!
//! The mass matrix comes from the composite-rigid-body recursion in world
//! Plücker coordinates ([omega; v_origin] at the world origin); bias forces
//! are recursive Newton-Euler evaluated at q̈ = 0, aggregated through the
//! link Jacobians.

use super::kinematics::{Kinematics, LinkMotion};
use super::{skew, ModelError, RobotModel, RobotState};
use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Vector3, Vector6};

/// Spatial inertia of one link expressed at the world origin.
fn spatial_inertia_at_origin(mass: f64, com_world: &Vector3<f64>, inertia_world: &Matrix3<f64>) -> Matrix6<f64> {
    let c_hat = skew(com_world);
    let mut i = Matrix6::zeros();
    i.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(inertia_world + mass * c_hat * c_hat.transpose()));
    i.fixed_view_mut::<3, 3>(0, 3).copy_from(&(mass * c_hat));
    i.fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&(mass * c_hat.transpose()));
    i.fixed_view_mut::<3, 3>(3, 3)
        .copy_from(&(Matrix3::identity() * mass));
    i
}

/// Plücker motion vector of one velocity dof at the world origin.
fn motion_vector(kin: &Kinematics, dof: usize) -> Vector6<f64> {
    let omega = kin.angular_column(dof);
    let v_origin = kin.linear_column(dof, &Vector3::zeros());
    let mut s = Vector6::zeros();
    s.fixed_rows_mut::<3>(0).copy_from(&omega);
    s.fixed_rows_mut::<3>(3).copy_from(&v_origin);
    s
}

/// Symmetric positive definite joint-space inertia matrix M(q).
pub fn mass_matrix(model: &RobotModel, state: &RobotState) -> Result<DMatrix<f64>, ModelError> {
    state.validate(model)?;
    let kin = Kinematics::compute(model, &state.q);
    Ok(mass_matrix_with(model, &kin))
}

pub(crate) fn mass_matrix_with(model: &RobotModel, kin: &Kinematics) -> DMatrix<f64> {
    let n_links = model.links().len();
    let mut composite = vec![Matrix6::zeros(); n_links];
    for (l, link) in model.links().iter().enumerate() {
        let pose = &kin.link_poses[l];
        let com_world = pose * nalgebra::Point3::from(link.com);
        let rot = pose.rotation.to_rotation_matrix();
        let inertia_world = rot * link.inertia * rot.transpose();
        composite[l] = spatial_inertia_at_origin(link.mass, &com_world.coords, &inertia_world);
    }
    for l in (0..n_links).rev() {
        if let Some(parent) = model.joints()[l].parent {
            let child_inertia = composite[l];
            composite[parent] += child_inertia;
        }
    }

    let nv = model.nv();
    let mut m = DMatrix::zeros(nv, nv);
    for l in 0..n_links {
        let vo = model.v_offset(l);
        let ndofs = match model.joints()[l].kind {
            super::JointKind::FreeFlyer => 6,
            _ => 1,
        };
        for dj in vo..vo + ndofs {
            let f = composite[l] * motion_vector(kin, dj);
            for &di in &kin.chain[l] {
                if di > dj {
                    continue;
                }
                let val = motion_vector(kin, di).dot(&f);
                m[(di, dj)] = val;
                m[(dj, di)] = val;
            }
        }
    }
    m
}

/// Bias force vector N(q, q̇): Coriolis, centrifugal and gravity loads.
///
/// With q̈ = 0 and no external force the forward dynamics acceleration is
/// exactly -M⁻¹ N.
pub fn bias_forces(model: &RobotModel, state: &RobotState) -> Result<DVector<f64>, ModelError> {
    state.validate(model)?;
    let kin = Kinematics::compute(model, &state.q);
    let motion = LinkMotion::compute(model, &kin, &state.v);
    Ok(bias_forces_with(model, &kin, &motion))
}

pub(crate) fn bias_forces_with(
    model: &RobotModel,
    kin: &Kinematics,
    motion: &LinkMotion,
) -> DVector<f64> {
    let nv = model.nv();
    let g = model.gravity();
    let mut n = DVector::zeros(nv);
    for (l, link) in model.links().iter().enumerate() {
        let pose = &kin.link_poses[l];
        let com_world = (pose * nalgebra::Point3::from(link.com)).coords;
        let rot = pose.rotation.to_rotation_matrix();
        let inertia_world = rot * link.inertia * rot.transpose();

        let a_com = motion.point_bias_acceleration(kin, l, &com_world);
        let force = link.mass * (a_com - g);
        let torque =
            inertia_world * motion.alpha[l] + motion.w[l].cross(&(inertia_world * motion.w[l]));

        for &d in &kin.chain[l] {
            let jv = kin.linear_column(d, &com_world);
            let jw = kin.angular_column(d);
            n[d] += jv.dot(&force) + jw.dot(&torque);
        }
    }
    n
}
