//! Robot description file (JSON) parsing.
//!
//! Schema, SI units throughout:
//! ```json
//! {
//!   "gravity": [0.0, 0.0, -9.81],
//!   "links": [
//!     { "name": "arm", "mass": 1.0, "com": [0.25, 0.0, 0.0],
//!       "inertia": [0.01, 0.0, 0.0, 0.01, 0.0, 0.02] }
//!   ],
//!   "joints": [
//!     { "name": "shoulder", "kind": "revolute", "parent": "world",
//!       "child": "arm", "axis": [0.0, 0.0, 1.0],
//!       "origin": { "translation": [0,0,0], "rotation": [1,0,0,0] } }
//!   ],
//!   "end_effectors": [
//!     { "name": "tip", "body": "arm",
//!       "transform": { "translation": [0.5, 0, 0], "rotation": [1,0,0,0] },
//!       "role": "impacting" }
//!   ]
//! }
//! ```
//! `inertia` holds the upper triangle `[ixx, ixy, ixz, iyy, iyz, izz]` about
//! the link COM; `rotation` quaternions are `[w, x, y, z]`.

use super::{EndEffectorFrame, EndEffectorRole, Joint, JointKind, Link, ModelError, RobotModel};
use nalgebra::{Isometry3, Matrix3, Translation3, Unit, UnitQuaternion, Vector3};
use serde::Deserialize;
use std::path::Path;

#[derive(Deserialize)]
struct TransformSpec {
    #[serde(default)]
    translation: [f64; 3],
    /// Unit quaternion [w, x, y, z]; identity when omitted.
    #[serde(default = "identity_quat")]
    rotation: [f64; 4],
}

fn identity_quat() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

impl TransformSpec {
    fn to_isometry(&self) -> Isometry3<f64> {
        let t = Translation3::new(self.translation[0], self.translation[1], self.translation[2]);
        let r = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
            self.rotation[0],
            self.rotation[1],
            self.rotation[2],
            self.rotation[3],
        ));
        Isometry3::from_parts(t, r)
    }
}

impl Default for TransformSpec {
    fn default() -> Self {
        Self {
            translation: [0.0; 3],
            rotation: identity_quat(),
        }
    }
}

#[derive(Deserialize)]
struct LinkSpec {
    name: String,
    mass: f64,
    com: [f64; 3],
    /// Upper triangle [ixx, ixy, ixz, iyy, iyz, izz].
    inertia: [f64; 6],
}

#[derive(Deserialize)]
struct JointSpec {
    name: String,
    kind: JointKind,
    parent: String,
    child: String,
    #[serde(default = "default_axis")]
    axis: [f64; 3],
    #[serde(default)]
    origin: TransformSpec,
}

fn default_axis() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

#[derive(Deserialize)]
struct EndEffectorSpec {
    name: String,
    body: String,
    #[serde(default)]
    transform: TransformSpec,
    role: EndEffectorRole,
}

#[derive(Deserialize)]
struct RobotSpec {
    #[serde(default = "default_gravity")]
    gravity: [f64; 3],
    links: Vec<LinkSpec>,
    joints: Vec<JointSpec>,
    #[serde(default)]
    end_effectors: Vec<EndEffectorSpec>,
}

fn default_gravity() -> [f64; 3] {
    [0.0, 0.0, -9.81]
}

/// Parse a robot description from JSON text.
pub fn parse_robot(text: &str) -> Result<RobotModel, ModelError> {
    let spec: RobotSpec = serde_json::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;

    // Reorder links so each joint's child matches its own index, parents first.
    let link_index = |name: &str| -> Result<usize, ModelError> {
        spec.links
            .iter()
            .position(|l| l.name == name)
            .ok_or_else(|| ModelError::UnknownLink(name.to_string()))
    };

    let mut order: Vec<usize> = Vec::new(); // joint spec indices in tree order
    let mut placed = vec![false; spec.joints.len()];
    let mut link_slot = vec![usize::MAX; spec.links.len()];
    while order.len() < spec.joints.len() {
        let before = order.len();
        for (ji, j) in spec.joints.iter().enumerate() {
            if placed[ji] {
                continue;
            }
            let parent_ready =
                j.parent == "world" || link_slot[link_index(&j.parent)?] != usize::MAX;
            if parent_ready {
                let child = link_index(&j.child)?;
                link_slot[child] = order.len();
                placed[ji] = true;
                order.push(ji);
            }
        }
        if order.len() == before {
            return Err(ModelError::BadTree("unreachable joints in description".into()));
        }
    }

    let mut links = Vec::with_capacity(spec.joints.len());
    let mut joints = Vec::with_capacity(spec.joints.len());
    for &ji in &order {
        let jspec = &spec.joints[ji];
        let lspec = &spec.links[link_index(&jspec.child)?];
        let [ixx, ixy, ixz, iyy, iyz, izz] = lspec.inertia;
        links.push(Link {
            name: lspec.name.clone(),
            mass: lspec.mass,
            com: Vector3::from(lspec.com),
            inertia: Matrix3::new(ixx, ixy, ixz, ixy, iyy, iyz, ixz, iyz, izz),
        });
        let parent = if jspec.parent == "world" {
            None
        } else {
            Some(link_slot[link_index(&jspec.parent)?])
        };
        joints.push(Joint {
            name: jspec.name.clone(),
            kind: jspec.kind,
            parent,
            axis: Unit::new_normalize(Vector3::from(jspec.axis)),
            origin: jspec.origin.to_isometry(),
        });
    }

    let mut end_effectors = Vec::with_capacity(spec.end_effectors.len());
    for ee in &spec.end_effectors {
        end_effectors.push(EndEffectorFrame {
            name: ee.name.clone(),
            body: link_slot[link_index(&ee.body)?],
            transform: ee.transform.to_isometry(),
            role: ee.role,
        });
    }

    RobotModel::new(
        links,
        joints,
        end_effectors,
        Vector3::from(spec.gravity),
    )
}

/// Load a robot description from a JSON file.
pub fn load_robot(path: &Path) -> Result<RobotModel, ModelError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ModelError::Parse(format!("{}: {e}", path.display())))?;
    parse_robot(&text)
}
