//! Center of mass and the centroidal momentum matrix.

use super::kinematics::Kinematics;
use super::{skew, ModelError, RobotModel, RobotState};
use nalgebra::{DMatrix, Vector3};

/// 6 x nv map from generalized velocity to the robot's spatial momentum at
/// the COM, world-aligned axes. Rows 0..3 are linear, rows 3..6 angular,
/// matching the `[force; torque]` wrench layout used throughout.
#[derive(Debug, Clone)]
pub struct CentroidalMomentumMatrix {
    matrix: DMatrix<f64>,
    total_mass: f64,
    com: Vector3<f64>,
}

impl CentroidalMomentumMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
    /// Linear rows A_vG: A_vG q̇ = total_mass * ċ.
    pub fn linear(&self) -> DMatrix<f64> {
        self.matrix.rows(0, 3).into_owned()
    }
    /// Angular rows A_ωG: angular momentum about the COM.
    pub fn angular(&self) -> DMatrix<f64> {
        self.matrix.rows(3, 3).into_owned()
    }
    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }
    pub fn com(&self) -> Vector3<f64> {
        self.com
    }
}

/// Centroidal momentum matrix A_G(q).
pub fn centroidal_momentum_matrix(
    model: &RobotModel,
    state: &RobotState,
) -> Result<CentroidalMomentumMatrix, ModelError> {
    state.validate(model)?;
    let kin = Kinematics::compute(model, &state.q);
    Ok(centroidal_momentum_matrix_with(model, &kin))
}

pub(crate) fn centroidal_momentum_matrix_with(
    model: &RobotModel,
    kin: &Kinematics,
) -> CentroidalMomentumMatrix {
    let nv = model.nv();
    let total_mass = model.total_mass();
    let mut com = Vector3::zeros();
    let mut com_world = Vec::with_capacity(model.links().len());
    for (l, link) in model.links().iter().enumerate() {
        let c = (kin.link_poses[l] * nalgebra::Point3::from(link.com)).coords;
        com += link.mass * c;
        com_world.push(c);
    }
    com /= total_mass;

    let mut a = DMatrix::zeros(6, nv);
    for (l, link) in model.links().iter().enumerate() {
        let rot = kin.link_poses[l].rotation.to_rotation_matrix();
        let inertia_world = rot * link.inertia * rot.transpose();
        let lever = skew(&(com_world[l] - com));
        for &d in &kin.chain[l] {
            let jv = kin.linear_column(d, &com_world[l]);
            let jw = kin.angular_column(d);
            let lin = link.mass * jv;
            let ang = inertia_world * jw + lever * lin;
            for r in 0..3 {
                a[(r, d)] += lin[r];
                a[(r + 3, d)] += ang[r];
            }
        }
    }
    CentroidalMomentumMatrix {
        matrix: a,
        total_mass,
        com,
    }
}

/// COM position and velocity; ċ = A_vG q̇ / total mass.
pub fn com(model: &RobotModel, state: &RobotState) -> Result<(Vector3<f64>, Vector3<f64>), ModelError> {
    let cmm = centroidal_momentum_matrix(model, state)?;
    let lin = cmm.linear() * &state.v;
    Ok((cmm.com(), Vector3::new(lin[0], lin[1], lin[2]) / cmm.total_mass()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::kinematics::forward_kinematics;
    use crate::model::{samples, RobotState};
    use approx::assert_abs_diff_eq;
    use nalgebra::{DVector, Matrix3};

    #[test]
    fn translating_free_body_momentum() {
        let model = samples::free_body(3.0, Vector3::repeat(0.2), Vector3::zeros());
        let mut state = model.neutral_state();
        state.v[0] = 1.0;
        let cmm = centroidal_momentum_matrix(&model, &state).unwrap();
        let h = cmm.matrix() * &state.v;
        assert_abs_diff_eq!(h[0], 3.0, epsilon = 1e-12);
        for k in 1..6 {
            assert_abs_diff_eq!(h[k], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn linear_rows_match_com_finite_difference() {
        for seed in 0..6 {
            let model = samples::random_serial_arm(700 + seed, 4, seed % 2 == 0);
            let state = samples::random_state(&model, seed);
            let cmm = centroidal_momentum_matrix(&model, &state).unwrap();
            let cdot = cmm.linear() * &state.v / cmm.total_mass();
            let h = 1e-7;
            let advanced = model.integrate(&state, h);
            let (c0, _) = com(&model, &state).unwrap();
            let (c1, _) = com(&model, &advanced).unwrap();
            let fd = (c1 - c0) / h;
            assert!(
                (Vector3::new(cdot[0], cdot[1], cdot[2]) - fd).norm() < 1e-6,
                "seed {seed}"
            );
        }
    }

    #[test]
    fn matches_per_link_momentum_summation() {
        // Independent oracle: link twists from finite differences of forward
        // kinematics only, then sum spatial momenta about the COM.
        let model = samples::random_serial_arm(11, 5, false);
        let state = samples::random_state(&model, 4);
        let cmm = centroidal_momentum_matrix(&model, &state).unwrap();
        let h_pred = cmm.matrix() * &state.v;

        let dt = 1e-7;
        let advanced = model.integrate(&state, dt);
        let f0 = forward_kinematics(&model, &state.q).unwrap();
        let f1 = forward_kinematics(&model, &advanced.q).unwrap();
        let com_now = cmm.com();
        let mut lin = Vector3::zeros();
        let mut ang = Vector3::zeros();
        for (l, link) in model.links().iter().enumerate() {
            let c0 = (f0.link_poses[l] * nalgebra::Point3::from(link.com)).coords;
            let c1 = (f1.link_poses[l] * nalgebra::Point3::from(link.com)).coords;
            let v_c = (c1 - c0) / dt;
            let r0 = f0.link_poses[l].rotation.to_rotation_matrix().into_inner();
            let r1 = f1.link_poses[l].rotation.to_rotation_matrix().into_inner();
            let omega_hat = (r1 - r0) / dt * r0.transpose();
            let omega = Vector3::new(omega_hat[(2, 1)], omega_hat[(0, 2)], omega_hat[(1, 0)]);
            let inertia_world = r0 * link.inertia * r0.transpose();
            lin += link.mass * v_c;
            ang += inertia_world * omega + (c0 - com_now).cross(&(link.mass * v_c));
        }
        for k in 0..3 {
            assert_abs_diff_eq!(h_pred[k], lin[k], epsilon = 1e-5);
            assert_abs_diff_eq!(h_pred[k + 3], ang[k], epsilon = 1e-5);
        }
        // Tight consistency bound: A_vG q̇ = M ċ within 1e-9.
        let (_, cdot) = com(&model, &state).unwrap();
        let lin_rows = cmm.linear() * &state.v;
        assert!((Vector3::new(lin_rows[0], lin_rows[1], lin_rows[2]) - cmm.total_mass() * cdot).norm() < 1e-9);
    }

    #[test]
    fn symmetric_bodies_com_at_midpoint() {
        use crate::model::{EndEffectorFrame, EndEffectorRole, Joint, JointKind, Link, RobotModel};
        use nalgebra::{Isometry3, Translation3, Unit};
        let link = |name: &str, x: f64| Link {
            name: name.into(),
            mass: 2.0,
            com: Vector3::new(x, 0.0, 0.0),
            inertia: Matrix3::identity() * 0.01,
        };
        let links = vec![link("a", 0.0), link("b", 0.0)];
        let joints = vec![
            Joint {
                name: "j0".into(),
                kind: JointKind::Revolute,
                parent: None,
                axis: Unit::new_normalize(Vector3::z()),
                origin: Isometry3::identity(),
            },
            Joint {
                name: "j1".into(),
                kind: JointKind::Prismatic,
                parent: Some(0),
                axis: Unit::new_normalize(Vector3::x()),
                origin: Isometry3::from_parts(
                    Translation3::new(1.0, 0.0, 0.0),
                    nalgebra::UnitQuaternion::identity(),
                ),
            },
        ];
        let model = RobotModel::new(
            links,
            joints,
            vec![EndEffectorFrame {
                name: "e".into(),
                body: 1,
                transform: Isometry3::identity(),
                role: EndEffectorRole::Free,
            }],
            Vector3::zeros(),
        )
        .unwrap();
        let state = RobotState::new(DVector::zeros(2), DVector::zeros(2));
        let (c, _) = com(&model, &state).unwrap();
        assert_abs_diff_eq!(c.x, 0.5, epsilon = 1e-12);

        // Mass-weighted average oracle on a random configuration.
        let state = samples::random_state(&model, 8);
        let (c, _) = com(&model, &state).unwrap();
        let frames = forward_kinematics(&model, &state.q).unwrap();
        let mut acc = Vector3::zeros();
        let mut mass = 0.0;
        for (l, link) in model.links().iter().enumerate() {
            acc += link.mass * (frames.link_poses[l] * nalgebra::Point3::from(link.com)).coords;
            mass += link.mass;
        }
        assert!((c - acc / mass).norm() < 1e-12);
    }
}
