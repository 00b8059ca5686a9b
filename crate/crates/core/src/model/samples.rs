//! Small built-in models used by the toy command and the test suite, plus a
//! deterministic random-model sampler for randomized checks.

use super::{EndEffectorFrame, EndEffectorRole, Joint, JointKind, Link, RobotModel, RobotState};
use nalgebra::{DVector, Isometry3, Matrix3, Translation3, Unit, UnitQuaternion, Vector3};

/// Planar two-link arm in the x-y plane, both joints about +z.
///
/// Links are modeled as slender rods (COM at mid-length); the tip frame is
/// an impacting end-effector at the end of the second link.
pub fn planar_two_link(l1: f64, l2: f64) -> RobotModel {
    let rod = |name: &str, mass: f64, len: f64| Link {
        name: name.into(),
        mass,
        com: Vector3::new(len / 2.0, 0.0, 0.0),
        inertia: Matrix3::from_diagonal(&Vector3::new(
            1e-6,
            mass * len * len / 12.0,
            mass * len * len / 12.0,
        )),
    };
    let links = vec![rod("upper", 1.0, l1), rod("lower", 1.0, l2)];
    let joints = vec![
        Joint {
            name: "shoulder".into(),
            kind: JointKind::Revolute,
            parent: None,
            axis: Unit::new_normalize(Vector3::z()),
            origin: Isometry3::identity(),
        },
        Joint {
            name: "elbow".into(),
            kind: JointKind::Revolute,
            parent: Some(0),
            axis: Unit::new_normalize(Vector3::z()),
            origin: Isometry3::from_parts(
                Translation3::new(l1, 0.0, 0.0),
                nalgebra::UnitQuaternion::identity(),
            ),
        },
    ];
    let ee = vec![EndEffectorFrame {
        name: "tip".into(),
        body: 1,
        transform: Isometry3::translation(l2, 0.0, 0.0),
        role: EndEffectorRole::Impacting,
    }];
    // Gravity is out of plane, so the planar example is gravity-free.
    RobotModel::new(links, joints, ee, Vector3::zeros()).expect("valid sample model")
}

/// Single pendulum swinging in the x-z plane (revolute about +y), with the
/// link COM at `-l_com` along x so the holding torque at the horizontal is
/// `+m g l_com`.
pub fn pendulum(mass: f64, l_com: f64) -> RobotModel {
    let links = vec![Link {
        name: "rod".into(),
        mass,
        com: Vector3::new(-l_com, 0.0, 0.0),
        inertia: Matrix3::from_diagonal(&Vector3::repeat(1e-8)),
    }];
    let joints = vec![Joint {
        name: "pivot".into(),
        kind: JointKind::Revolute,
        parent: None,
        axis: Unit::new_normalize(Vector3::y()),
        origin: Isometry3::identity(),
    }];
    let ee = vec![EndEffectorFrame {
        name: "bob".into(),
        body: 0,
        transform: Isometry3::translation(-l_com, 0.0, 0.0),
        role: EndEffectorRole::Free,
    }];
    RobotModel::new(links, joints, ee, Vector3::new(0.0, 0.0, -9.81)).expect("valid sample model")
}

/// One prismatic dof along `axis`, fixed base, gravity-free; the slider tip
/// is an impacting end-effector.
pub fn prismatic_slider(mass: f64, axis: Vector3<f64>) -> RobotModel {
    let links = vec![Link {
        name: "slider".into(),
        mass,
        com: Vector3::zeros(),
        inertia: Matrix3::from_diagonal(&Vector3::repeat(1e-3)),
    }];
    let joints = vec![Joint {
        name: "slide".into(),
        kind: JointKind::Prismatic,
        parent: None,
        axis: Unit::new_normalize(axis),
        origin: Isometry3::identity(),
    }];
    let ee = vec![EndEffectorFrame {
        name: "tip".into(),
        body: 0,
        transform: Isometry3::identity(),
        role: EndEffectorRole::Impacting,
    }];
    RobotModel::new(links, joints, ee, Vector3::zeros()).expect("valid sample model")
}

/// Deterministic splitmix64 stream, so randomized checks reproduce across
/// platforms without an RNG dependency.
#[derive(Debug, Clone)]
pub struct SampleStream(u64);

impl SampleStream {
    pub fn new(seed: u64) -> Self {
        Self(seed.wrapping_add(0x9e3779b97f4a7c15))
    }
    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }
    /// Uniform sample in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        let u = (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        lo + u * (hi - lo)
    }
    pub fn unit_vector(&mut self) -> Unit<Vector3<f64>> {
        loop {
            let v = Vector3::new(
                self.uniform(-1.0, 1.0),
                self.uniform(-1.0, 1.0),
                self.uniform(-1.0, 1.0),
            );
            if v.norm() > 1e-3 {
                return Unit::new_normalize(v);
            }
        }
    }
}

/// Random serial chain with `n_joints` single-dof joints (optionally on a
/// free-flyer base) and no end-effector frames; attach frames as needed.
pub fn random_serial_arm(seed: u64, n_joints: usize, floating: bool) -> RobotModel {
    let mut rng = SampleStream::new(seed);
    let mut links = Vec::new();
    let mut joints = Vec::new();
    if floating {
        links.push(Link {
            name: "base".into(),
            mass: rng.uniform(2.0, 8.0),
            com: Vector3::new(
                rng.uniform(-0.05, 0.05),
                rng.uniform(-0.05, 0.05),
                rng.uniform(-0.05, 0.05),
            ),
            inertia: random_inertia(&mut rng, 0.05, 0.3),
        });
        joints.push(Joint {
            name: "root".into(),
            kind: JointKind::FreeFlyer,
            parent: None,
            axis: Unit::new_normalize(Vector3::z()),
            origin: Isometry3::identity(),
        });
    }
    for j in 0..n_joints {
        let parent = if links.is_empty() { None } else { Some(links.len() - 1) };
        let kind = if rng.uniform(0.0, 1.0) < 0.8 {
            JointKind::Revolute
        } else {
            JointKind::Prismatic
        };
        links.push(Link {
            name: format!("link{j}"),
            mass: rng.uniform(0.5, 3.0),
            com: Vector3::new(
                rng.uniform(0.05, 0.25),
                rng.uniform(-0.05, 0.05),
                rng.uniform(-0.05, 0.05),
            ),
            inertia: random_inertia(&mut rng, 0.005, 0.05),
        });
        joints.push(Joint {
            name: format!("joint{j}"),
            kind,
            parent,
            axis: rng.unit_vector(),
            origin: Isometry3::from_parts(
                Translation3::new(
                    rng.uniform(0.1, 0.4),
                    rng.uniform(-0.1, 0.1),
                    rng.uniform(-0.1, 0.1),
                ),
                UnitQuaternion::from_scaled_axis(
                    rng.unit_vector().into_inner() * rng.uniform(-0.8, 0.8),
                ),
            ),
        });
    }
    RobotModel::new(links, joints, Vec::new(), Vector3::new(0.0, 0.0, -9.81))
        .expect("random sample models are valid by construction")
}

fn random_inertia(rng: &mut SampleStream, lo: f64, hi: f64) -> Matrix3<f64> {
    let rot = UnitQuaternion::from_scaled_axis(rng.unit_vector().into_inner() * rng.uniform(0.0, 3.0))
        .to_rotation_matrix();
    let diag = Matrix3::from_diagonal(&Vector3::new(
        rng.uniform(lo, hi),
        rng.uniform(lo, hi),
        rng.uniform(lo, hi),
    ));
    rot * diag * rot.transpose()
}

/// Random state with bounded joint values and velocities.
pub fn random_state(model: &RobotModel, seed: u64) -> RobotState {
    let mut rng = SampleStream::new(seed ^ 0x51ed_2701);
    let mut q = DVector::zeros(model.nq());
    let mut offset = 0;
    if model.has_floating_base() {
        for k in 0..3 {
            q[k] = rng.uniform(-0.5, 0.5);
        }
        let quat = UnitQuaternion::from_scaled_axis(
            rng.unit_vector().into_inner() * rng.uniform(0.0, 2.5),
        );
        q[3] = quat.w;
        q[4] = quat.i;
        q[5] = quat.j;
        q[6] = quat.k;
        offset = 7;
    }
    for k in offset..model.nq() {
        q[k] = rng.uniform(-1.2, 1.2);
    }
    let mut v = DVector::zeros(model.nv());
    for k in 0..model.nv() {
        v[k] = rng.uniform(-1.0, 1.0);
    }
    RobotState::new(q, v)
}

/// A single free-flyer rigid body with an impacting frame at its origin.
pub fn free_body(mass: f64, inertia_diag: Vector3<f64>, gravity: Vector3<f64>) -> RobotModel {
    let links = vec![Link {
        name: "body".into(),
        mass,
        com: Vector3::zeros(),
        inertia: Matrix3::from_diagonal(&inertia_diag),
    }];
    let joints = vec![Joint {
        name: "root".into(),
        kind: JointKind::FreeFlyer,
        parent: None,
        axis: Unit::new_normalize(Vector3::z()),
        origin: Isometry3::identity(),
    }];
    let ee = vec![EndEffectorFrame {
        name: "center".into(),
        body: 0,
        transform: Isometry3::identity(),
        role: EndEffectorRole::Impacting,
    }];
    RobotModel::new(links, joints, ee, gravity).expect("valid sample model")
}
