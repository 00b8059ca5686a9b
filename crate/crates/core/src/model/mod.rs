//! Rigid-body model of a floating-base kinematic tree.
//!
//! A [`RobotModel`] is a tree of links connected by revolute, prismatic or
//! (at the root only) free-flyer joints. All public quantities are expressed
//! in the world frame and SI units. Generalized velocities use a 6-vector
//! twist `[v_world, omega_world]` for the free-flyer; its orientation is
//! stored as a unit quaternion in the position vector.

mod centroidal;
mod dynamics;
mod kinematics;
mod load;
pub mod samples;

pub use centroidal::{centroidal_momentum_matrix, com, CentroidalMomentumMatrix};
pub use dynamics::{bias_forces, mass_matrix};
pub use kinematics::{
    forward_kinematics, frame_linear_velocity, jacobian_derivative, point_jacobian, Frames,
};
pub use load::{load_robot, parse_robot};

use nalgebra::{DVector, Isometry3, Matrix3, Translation3, Unit, UnitQuaternion, Vector3};
use thiserror::Error;

/// Numbers of position coordinates held by a free-flyer joint.
pub const FREE_FLYER_NQ: usize = 7;
/// Velocity dimension of a free-flyer joint.
pub const FREE_FLYER_NV: usize = 6;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("link {0} has non-positive mass")]
    NonPositiveMass(String),
    #[error("link {0} has a non-symmetric or non positive definite inertia")]
    BadInertia(String),
    #[error("joint {0} has a non-unit axis")]
    BadAxis(String),
    #[error("free-flyer joint {0} is only allowed at the tree root")]
    FreeFlyerNotRoot(String),
    #[error("tree is not a single-rooted acyclic chain at joint {0}")]
    BadTree(String),
    #[error("unknown link name {0}")]
    UnknownLink(String),
    #[error("end-effector {0} references an invalid body index")]
    BadEndEffector(String),
    #[error("state quaternion is not unit norm (|q| - 1 = {0:.3e})")]
    BadQuaternion(f64),
    #[error("robot description parse error: {0}")]
    Parse(String),
}

/// Which contact role an end-effector frame currently plays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndEffectorRole {
    /// Sustained contact, subject to zero relative acceleration.
    Established,
    /// Expected to strike a surface within the next control step.
    Impacting,
    /// No contact force; its momentum can absorb propagated impulse.
    Free,
}

/// A rigid link: mass, local COM offset and rotational inertia about the COM.
#[derive(Debug, Clone)]
pub struct Link {
    pub name: String,
    /// Mass in kg, strictly positive.
    pub mass: f64,
    /// COM position in the link frame, m.
    pub com: Vector3<f64>,
    /// Rotational inertia about the link COM, link frame, kg m^2.
    pub inertia: Matrix3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointKind {
    Revolute,
    Prismatic,
    /// Six-dof floating joint; allowed at the root only.
    FreeFlyer,
}

/// A joint connecting `parent` (or the world when `None`) to link index `child`.
#[derive(Debug, Clone)]
pub struct Joint {
    pub name: String,
    pub kind: JointKind,
    /// Parent link index; `None` attaches the child to the world.
    pub parent: Option<usize>,
    /// Axis in the joint frame (ignored for free-flyer).
    pub axis: Unit<Vector3<f64>>,
    /// Fixed transform from the parent frame to the joint frame.
    pub origin: Isometry3<f64>,
}

/// A named frame rigidly attached to a link, tagged with its contact role.
#[derive(Debug, Clone)]
pub struct EndEffectorFrame {
    pub name: String,
    /// Link index the frame is attached to.
    pub body: usize,
    /// Fixed body-to-frame transform.
    pub transform: Isometry3<f64>,
    pub role: EndEffectorRole,
}

/// Kinematic tree with floating-base option.
///
/// Link `i` is the child of joint `i`; parents always have smaller indices,
/// which makes every forward pass a single loop over `0..n_links`.
#[derive(Debug, Clone)]
pub struct RobotModel {
    links: Vec<Link>,
    joints: Vec<Joint>,
    end_effectors: Vec<EndEffectorFrame>,
    gravity: Vector3<f64>,
    nq: usize,
    nv: usize,
    /// Start of each joint's velocity span in `v`.
    v_offsets: Vec<usize>,
    /// Start of each joint's position span in `q`.
    q_offsets: Vec<usize>,
}

impl RobotModel {
    pub fn new(
        links: Vec<Link>,
        joints: Vec<Joint>,
        end_effectors: Vec<EndEffectorFrame>,
        gravity: Vector3<f64>,
    ) -> Result<Self, ModelError> {
        if links.len() != joints.len() {
            return Err(ModelError::DimensionMismatch {
                what: "joints per link",
                expected: links.len(),
                got: joints.len(),
            });
        }
        let mut roots = 0;
        for (i, joint) in joints.iter().enumerate() {
            match joint.parent {
                None => {
                    roots += 1;
                    if roots > 1 {
                        return Err(ModelError::BadTree(joint.name.clone()));
                    }
                }
                Some(p) if p >= i => return Err(ModelError::BadTree(joint.name.clone())),
                Some(_) => {
                    if joint.kind == JointKind::FreeFlyer {
                        return Err(ModelError::FreeFlyerNotRoot(joint.name.clone()));
                    }
                }
            }
            if joint.kind == JointKind::FreeFlyer {
                // The q translation and the world twist share one frame;
                // a free-flyer offset belongs in the link geometry instead.
                let off = joint.origin.translation.vector.norm()
                    + joint.origin.rotation.angle().abs();
                if off > 1e-12 {
                    return Err(ModelError::FreeFlyerNotRoot(joint.name.clone()));
                }
            }
            if (joint.axis.norm() - 1.0).abs() > 1e-12 {
                return Err(ModelError::BadAxis(joint.name.clone()));
            }
        }
        if !links.is_empty() && roots != 1 {
            return Err(ModelError::BadTree("<missing root>".into()));
        }
        for link in &links {
            if link.mass <= 0.0 {
                return Err(ModelError::NonPositiveMass(link.name.clone()));
            }
            let sym_err = (link.inertia - link.inertia.transpose()).norm();
            let spd = link.inertia.symmetric_eigenvalues().min() > 0.0;
            if sym_err > 1e-9 || !spd {
                return Err(ModelError::BadInertia(link.name.clone()));
            }
        }
        for ee in &end_effectors {
            if ee.body >= links.len() {
                return Err(ModelError::BadEndEffector(ee.name.clone()));
            }
        }
        let mut q_offsets = Vec::with_capacity(joints.len());
        let mut v_offsets = Vec::with_capacity(joints.len());
        let (mut nq, mut nv) = (0usize, 0usize);
        for joint in &joints {
            q_offsets.push(nq);
            v_offsets.push(nv);
            match joint.kind {
                JointKind::FreeFlyer => {
                    nq += FREE_FLYER_NQ;
                    nv += FREE_FLYER_NV;
                }
                _ => {
                    nq += 1;
                    nv += 1;
                }
            }
        }
        Ok(Self {
            links,
            joints,
            end_effectors,
            gravity,
            nq,
            nv,
            v_offsets,
            q_offsets,
        })
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }
    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }
    pub fn end_effectors(&self) -> &[EndEffectorFrame] {
        &self.end_effectors
    }
    pub fn end_effector(&self, index: usize) -> &EndEffectorFrame {
        &self.end_effectors[index]
    }
    pub fn end_effector_index(&self, name: &str) -> Option<usize> {
        self.end_effectors.iter().position(|e| e.name == name)
    }
    pub fn set_end_effector_role(&mut self, index: usize, role: EndEffectorRole) {
        self.end_effectors[index].role = role;
    }
    /// Attach an extra frame to an existing link; returns its index.
    pub fn add_end_effector(&mut self, frame: EndEffectorFrame) -> Result<usize, ModelError> {
        if frame.body >= self.links.len() {
            return Err(ModelError::BadEndEffector(frame.name));
        }
        self.end_effectors.push(frame);
        Ok(self.end_effectors.len() - 1)
    }
    pub fn gravity(&self) -> Vector3<f64> {
        self.gravity
    }
    /// Generalized position dimension.
    pub fn nq(&self) -> usize {
        self.nq
    }
    /// Generalized velocity dimension (the controller's dof count).
    pub fn nv(&self) -> usize {
        self.nv
    }
    pub fn has_floating_base(&self) -> bool {
        self.joints
            .first()
            .is_some_and(|j| j.kind == JointKind::FreeFlyer)
    }
    /// Number of actuated joints (free-flyer dofs are unactuated).
    pub fn n_actuated(&self) -> usize {
        if self.has_floating_base() {
            self.nv - FREE_FLYER_NV
        } else {
            self.nv
        }
    }
    /// Velocity-space index of the first actuated dof.
    pub fn actuated_offset(&self) -> usize {
        if self.has_floating_base() {
            FREE_FLYER_NV
        } else {
            0
        }
    }
    pub fn q_offset(&self, joint: usize) -> usize {
        self.q_offsets[joint]
    }
    pub fn v_offset(&self, joint: usize) -> usize {
        self.v_offsets[joint]
    }
    pub fn total_mass(&self) -> f64 {
        self.links.iter().map(|l| l.mass).sum()
    }

    /// Neutral configuration: identity free-flyer pose, all joints at zero.
    pub fn neutral_state(&self) -> RobotState {
        let mut q = DVector::zeros(self.nq);
        if self.has_floating_base() {
            q[3] = 1.0; // unit quaternion w component
        }
        RobotState {
            q,
            v: DVector::zeros(self.nv),
        }
    }

    /// Integrate a generalized velocity over `h` seconds.
    ///
    /// The free-flyer orientation is advanced on the quaternion manifold and
    /// renormalized; every other coordinate is a plain Euler step.
    pub fn integrate(&self, state: &RobotState, h: f64) -> RobotState {
        let mut q = state.q.clone();
        let mut offset = 0;
        if self.has_floating_base() {
            for k in 0..3 {
                q[k] += state.v[k] * h;
            }
            let quat = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
                state.q[3], state.q[4], state.q[5], state.q[6],
            ));
            let omega = Vector3::new(state.v[3], state.v[4], state.v[5]);
            let mut rotated = UnitQuaternion::from_scaled_axis(omega * h) * quat;
            rotated.renormalize();
            q[3] = rotated.w;
            q[4] = rotated.i;
            q[5] = rotated.j;
            q[6] = rotated.k;
            offset = FREE_FLYER_NV;
        }
        for j in offset..self.nv {
            q[j + self.nq - self.nv] += state.v[j] * h;
        }
        RobotState { q, v: state.v.clone() }
    }

    /// World pose of the free-flyer base encoded in `q`.
    pub(crate) fn base_pose(&self, q: &DVector<f64>) -> Isometry3<f64> {
        let t = Translation3::new(q[0], q[1], q[2]);
        let rot = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
            q[3], q[4], q[5], q[6],
        ));
        Isometry3::from_parts(t, rot)
    }
}

/// Generalized position and velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotState {
    /// Generalized position; free-flyer stored as `[t(3), quat(w,x,y,z)]`.
    pub q: DVector<f64>,
    /// Generalized velocity; free-flyer twist `[v_world(3), omega_world(3)]`.
    pub v: DVector<f64>,
}

impl RobotState {
    pub fn new(q: DVector<f64>, v: DVector<f64>) -> Self {
        Self { q, v }
    }

    pub fn validate(&self, model: &RobotModel) -> Result<(), ModelError> {
        if self.q.len() != model.nq() {
            return Err(ModelError::DimensionMismatch {
                what: "q",
                expected: model.nq(),
                got: self.q.len(),
            });
        }
        if self.v.len() != model.nv() {
            return Err(ModelError::DimensionMismatch {
                what: "v",
                expected: model.nv(),
                got: self.v.len(),
            });
        }
        if model.has_floating_base() {
            let norm =
                (self.q[3] * self.q[3] + self.q[4] * self.q[4] + self.q[5] * self.q[5]
                    + self.q[6] * self.q[6])
                    .sqrt();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(ModelError::BadQuaternion(norm - 1.0));
            }
        }
        Ok(())
    }
}

/// The three end-effector sets: established contacts, impacting, free limbs.
///
/// Indices refer to `model.end_effectors()`. Stacked quantities throughout the
/// impact module follow the order established, impacting, free.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EndEffectorPartition {
    pub established: Vec<usize>,
    pub impacting: Vec<usize>,
    pub free: Vec<usize>,
}

impl EndEffectorPartition {
    /// Partition taken from the role tags on the model's end-effectors.
    pub fn from_model(model: &RobotModel) -> Self {
        let mut p = Self::default();
        for (i, ee) in model.end_effectors().iter().enumerate() {
            match ee.role {
                EndEffectorRole::Established => p.established.push(i),
                EndEffectorRole::Impacting => p.impacting.push(i),
                EndEffectorRole::Free => p.free.push(i),
            }
        }
        p
    }

    /// All members in stacking order: established, impacting, free.
    pub fn all(&self) -> Vec<usize> {
        let mut v = self.established.clone();
        v.extend(&self.impacting);
        v.extend(&self.free);
        v
    }

    /// Established followed by impacting (the external-impulse carriers).
    pub fn external(&self) -> Vec<usize> {
        let mut v = self.established.clone();
        v.extend(&self.impacting);
        v
    }
}

pub(crate) fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}
