//! Forward kinematics, point Jacobians and their time derivatives.
//!
//! Jacobians are 3-row (linear part only), matching the stacked form used by
//! the impact machinery. All columns are expressed in the world frame.

use super::{JointKind, ModelError, RobotModel, RobotState};
use nalgebra::{DMatrix, Isometry3, Translation3, UnitQuaternion, Vector3};

/// World transforms of every link and end-effector frame.
#[derive(Debug, Clone)]
pub struct Frames {
    pub link_poses: Vec<Isometry3<f64>>,
    pub ee_poses: Vec<Isometry3<f64>>,
}

/// How one velocity dof moves its subtree, in world coordinates.
#[derive(Debug, Clone, Copy)]
pub(crate) enum DofMotion {
    /// Rotation of rate 1 about `axis` through the point `origin`.
    Revolute {
        axis: Vector3<f64>,
        origin: Vector3<f64>,
    },
    /// Translation of rate 1 along `axis`.
    Prismatic { axis: Vector3<f64> },
    /// Free-flyer linear dof along world basis vector `0..3`.
    BaseLinear(usize),
    /// Free-flyer angular dof about the world axis `0..3` through the base origin.
    BaseAngular(usize),
}

/// Position-level kinematics shared by every operation on (model, q).
pub(crate) struct Kinematics {
    pub link_poses: Vec<Isometry3<f64>>,
    /// Per velocity dof: its motion descriptor.
    pub motion: Vec<DofMotion>,
    /// Per velocity dof: index of the link that carries it.
    pub dof_link: Vec<usize>,
    /// Per link: the velocity dofs supporting it (root to leaf order).
    pub chain: Vec<Vec<usize>>,
}

/// Velocity-level kinematics: world link twists and bias (zero-q̈) accelerations.
pub(crate) struct LinkMotion {
    /// Link angular velocity.
    pub w: Vec<Vector3<f64>>,
    /// Link frame-origin linear velocity.
    pub v: Vec<Vector3<f64>>,
    /// Link angular acceleration with q̈ = 0.
    pub alpha: Vec<Vector3<f64>>,
    /// Link frame-origin linear acceleration with q̈ = 0.
    pub a: Vec<Vector3<f64>>,
}

impl Kinematics {
    pub fn compute(model: &RobotModel, q: &nalgebra::DVector<f64>) -> Self {
        let n = model.links().len();
        let mut link_poses = Vec::with_capacity(n);
        let mut motion = vec![DofMotion::Prismatic { axis: Vector3::zeros() }; model.nv()];
        let mut dof_link = vec![0usize; model.nv()];
        let mut chain: Vec<Vec<usize>> = Vec::with_capacity(n);

        for (l, joint) in model.joints().iter().enumerate() {
            let parent_pose = match joint.parent {
                Some(p) => link_poses[p],
                None => Isometry3::identity(),
            };
            let joint_pose = parent_pose * joint.origin;
            let vo = model.v_offset(l);
            let qo = model.q_offset(l);
            let mut dofs = match joint.parent {
                Some(p) => chain[p].clone(),
                None => Vec::new(),
            };
            let pose = match joint.kind {
                JointKind::FreeFlyer => {
                    let base = joint_pose * model.base_pose(&q.rows(qo, 7).into_owned());
                    for k in 0..3 {
                        motion[vo + k] = DofMotion::BaseLinear(k);
                        dof_link[vo + k] = l;
                        dofs.push(vo + k);
                    }
                    for k in 0..3 {
                        motion[vo + 3 + k] = DofMotion::BaseAngular(k);
                        dof_link[vo + 3 + k] = l;
                        dofs.push(vo + 3 + k);
                    }
                    base
                }
                JointKind::Revolute => {
                    let axis_world = joint_pose.rotation * joint.axis.into_inner();
                    let rot = UnitQuaternion::from_axis_angle(&joint.axis, q[qo]);
                    motion[vo] = DofMotion::Revolute {
                        axis: axis_world,
                        origin: joint_pose.translation.vector,
                    };
                    dof_link[vo] = l;
                    dofs.push(vo);
                    joint_pose * rot
                }
                JointKind::Prismatic => {
                    let axis_world = joint_pose.rotation * joint.axis.into_inner();
                    let shift = Translation3::from(joint.axis.into_inner() * q[qo]);
                    motion[vo] = DofMotion::Prismatic { axis: axis_world };
                    dof_link[vo] = l;
                    dofs.push(vo);
                    joint_pose * shift
                }
            };
            link_poses.push(pose);
            chain.push(dofs);
        }
        Self {
            link_poses,
            motion,
            dof_link,
            chain,
        }
    }

    pub fn base_origin(&self) -> Vector3<f64> {
        self.link_poses
            .first()
            .map(|p| p.translation.vector)
            .unwrap_or_default()
    }

    /// Linear Jacobian column of `dof` for a world point `p`.
    pub fn linear_column(&self, dof: usize, p: &Vector3<f64>) -> Vector3<f64> {
        match self.motion[dof] {
            DofMotion::Revolute { axis, origin } => axis.cross(&(p - origin)),
            DofMotion::Prismatic { axis } => axis,
            DofMotion::BaseLinear(k) => basis(k),
            DofMotion::BaseAngular(k) => basis(k).cross(&(p - self.base_origin())),
        }
    }

    /// Angular Jacobian column of `dof`.
    pub fn angular_column(&self, dof: usize) -> Vector3<f64> {
        match self.motion[dof] {
            DofMotion::Revolute { axis, .. } => axis,
            DofMotion::BaseAngular(k) => basis(k),
            DofMotion::Prismatic { .. } | DofMotion::BaseLinear(_) => Vector3::zeros(),
        }
    }
}

impl LinkMotion {
    /// Propagate world twists and zero-q̈ accelerations down the tree.
    pub fn compute(model: &RobotModel, kin: &Kinematics, v: &nalgebra::DVector<f64>) -> Self {
        let n = model.links().len();
        let (mut w, mut vel) = (vec![Vector3::zeros(); n], vec![Vector3::zeros(); n]);
        let (mut alpha, mut acc) = (vec![Vector3::zeros(); n], vec![Vector3::zeros(); n]);

        for (l, joint) in model.joints().iter().enumerate() {
            let vo = model.v_offset(l);
            let x_l = kin.link_poses[l].translation.vector;
            let (wp, vp, alp, ap, xp) = match joint.parent {
                Some(p) => (
                    w[p],
                    vel[p],
                    alpha[p],
                    acc[p],
                    kin.link_poses[p].translation.vector,
                ),
                None => (
                    Vector3::zeros(),
                    Vector3::zeros(),
                    Vector3::zeros(),
                    Vector3::zeros(),
                    Vector3::zeros(),
                ),
            };
            // Parent-rigid transport of the child origin point.
            let r = x_l - xp;
            let v_pt = vp + wp.cross(&r);
            let a_pt = ap + alp.cross(&r) + wp.cross(&wp.cross(&r));
            match joint.kind {
                JointKind::FreeFlyer => {
                    vel[l] = Vector3::new(v[vo], v[vo + 1], v[vo + 2]);
                    w[l] = Vector3::new(v[vo + 3], v[vo + 4], v[vo + 5]);
                    // Bias acceleration of the base itself is zero.
                }
                JointKind::Revolute => {
                    let axis = match kin.motion[vo] {
                        DofMotion::Revolute { axis, .. } => axis,
                        _ => unreachable!(),
                    };
                    w[l] = wp + axis * v[vo];
                    vel[l] = v_pt;
                    alpha[l] = alp + wp.cross(&(axis * v[vo]));
                    acc[l] = a_pt;
                }
                JointKind::Prismatic => {
                    let axis = match kin.motion[vo] {
                        DofMotion::Prismatic { axis } => axis,
                        _ => unreachable!(),
                    };
                    w[l] = wp;
                    vel[l] = v_pt + axis * v[vo];
                    alpha[l] = alp;
                    acc[l] = a_pt + 2.0 * wp.cross(&(axis * v[vo]));
                }
            }
        }
        Self {
            w,
            v: vel,
            alpha,
            a: acc,
        }
    }

    /// World velocity of a point rigidly attached to `link`.
    pub fn point_velocity(
        &self,
        kin: &Kinematics,
        link: usize,
        p: &Vector3<f64>,
    ) -> Vector3<f64> {
        let r = p - kin.link_poses[link].translation.vector;
        self.v[link] + self.w[link].cross(&r)
    }

    /// World acceleration (q̈ = 0) of a point rigidly attached to `link`.
    pub fn point_bias_acceleration(
        &self,
        kin: &Kinematics,
        link: usize,
        p: &Vector3<f64>,
    ) -> Vector3<f64> {
        let r = p - kin.link_poses[link].translation.vector;
        self.a[link] + self.alpha[link].cross(&r) + self.w[link].cross(&self.w[link].cross(&r))
    }
}

fn basis(k: usize) -> Vector3<f64> {
    let mut e = Vector3::zeros();
    e[k] = 1.0;
    e
}

/// World transforms of every link and end-effector frame.
pub fn forward_kinematics(model: &RobotModel, q: &nalgebra::DVector<f64>) -> Result<Frames, ModelError> {
    if q.len() != model.nq() {
        return Err(ModelError::DimensionMismatch {
            what: "q",
            expected: model.nq(),
            got: q.len(),
        });
    }
    let kin = Kinematics::compute(model, q);
    let ee_poses = model
        .end_effectors()
        .iter()
        .map(|ee| kin.link_poses[ee.body] * ee.transform)
        .collect();
    Ok(Frames {
        link_poses: kin.link_poses,
        ee_poses,
    })
}

/// 3 x nv Jacobian mapping generalized velocity to the world linear velocity
/// of the end-effector frame origin.
pub fn point_jacobian(
    model: &RobotModel,
    state: &RobotState,
    frame: usize,
) -> Result<DMatrix<f64>, ModelError> {
    state.validate(model)?;
    let ee = check_frame(model, frame)?;
    let kin = Kinematics::compute(model, &state.q);
    let p = (kin.link_poses[ee.body] * ee.transform).translation.vector;
    Ok(jacobian_for_point(model, &kin, ee.body, &p))
}

pub(crate) fn jacobian_for_point(
    model: &RobotModel,
    kin: &Kinematics,
    body: usize,
    p: &Vector3<f64>,
) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(3, model.nv());
    for &d in &kin.chain[body] {
        j.set_column(d, &kin.linear_column(d, p));
    }
    j
}

/// Time derivative of [`point_jacobian`], computed analytically from the
/// spatial velocities so that frame acceleration = J q̈ + J̇ q̇ holds exactly.
pub fn jacobian_derivative(
    model: &RobotModel,
    state: &RobotState,
    frame: usize,
) -> Result<DMatrix<f64>, ModelError> {
    state.validate(model)?;
    let ee = check_frame(model, frame)?;
    let kin = Kinematics::compute(model, &state.q);
    let motion = LinkMotion::compute(model, &kin, &state.v);
    let p = (kin.link_poses[ee.body] * ee.transform).translation.vector;
    Ok(jacobian_derivative_for_point(
        model, &kin, &motion, ee.body, &p,
    ))
}

pub(crate) fn jacobian_derivative_for_point(
    model: &RobotModel,
    kin: &Kinematics,
    motion: &LinkMotion,
    body: usize,
    p: &Vector3<f64>,
) -> DMatrix<f64> {
    let mut jd = DMatrix::zeros(3, model.nv());
    let p_dot = motion.point_velocity(kin, body, p);
    for &d in &kin.chain[body] {
        let link = kin.dof_link[d];
        let col = match kin.motion[d] {
            DofMotion::Revolute { axis, origin } => {
                let axis_dot = motion.w[link].cross(&axis);
                // The axis point is the child link frame origin.
                let origin_dot = motion.v[link];
                axis_dot.cross(&(p - origin)) + axis.cross(&(p_dot - origin_dot))
            }
            DofMotion::Prismatic { axis } => motion.w[link].cross(&axis),
            DofMotion::BaseLinear(_) => Vector3::zeros(),
            DofMotion::BaseAngular(k) => basis(k).cross(&(p_dot - motion.v[0])),
        };
        jd.set_column(d, &col);
    }
    jd
}

/// World linear velocity of an end-effector frame origin.
pub fn frame_linear_velocity(
    model: &RobotModel,
    state: &RobotState,
    frame: usize,
) -> Result<Vector3<f64>, ModelError> {
    state.validate(model)?;
    let ee = check_frame(model, frame)?;
    let kin = Kinematics::compute(model, &state.q);
    let motion = LinkMotion::compute(model, &kin, &state.v);
    let p = (kin.link_poses[ee.body] * ee.transform).translation.vector;
    Ok(motion.point_velocity(&kin, ee.body, &p))
}

fn check_frame(model: &RobotModel, frame: usize) -> Result<&super::EndEffectorFrame, ModelError> {
    model
        .end_effectors()
        .get(frame)
        .ok_or_else(|| ModelError::BadEndEffector(format!("index {frame}")))
}
