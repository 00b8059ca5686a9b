//! One-shot jump prediction from a state file.
//!
//! Input JSON:
//! ```json
//! {
//!   "model": "robot.json",
//!   "q": [...], "qd": [...], "qdd": [...],
//!   "impact": { "restitution": 0.02, "impact_duration": 0.005,
//!               "control_period": 0.005, "normals": [[0,0,1]] },
//!   "wrench_origin": [0,0,0],
//!   "measured_wrench": [0,0,50, 0,0,0],
//!   "zmp_normal": [0,0,1]
//! }
//! ```
//! `qdd` defaults to zero; `normals` holds one entry per impacting
//! end-effector. The partition comes from the model's role tags.
//!
//! Output CSV (`# impactqp.predict.v1`): one row per predicted scalar with
//! columns quantity, index, the J_Δ row, the C_Δ row, and the evaluated jump.

use crate::impact::{build_distribution, zmp_jump, ImpactConfig, ImpactError, JumpDecomposition};
use crate::model::{self, EndEffectorPartition, RobotModel, RobotState};
use nalgebra::{DVector, Vector3, Vector6};
use serde::Deserialize;
use std::path::Path;

#[derive(Deserialize)]
struct ImpactFileSpec {
    #[serde(default = "default_restitution")]
    restitution: f64,
    #[serde(default = "default_dt")]
    impact_duration: f64,
    #[serde(default = "default_dt")]
    control_period: f64,
    normals: Vec<[f64; 3]>,
}

fn default_restitution() -> f64 {
    0.02
}
fn default_dt() -> f64 {
    0.005
}

#[derive(Deserialize)]
struct PredictFile {
    model: serde_json::Value,
    q: Vec<f64>,
    qd: Vec<f64>,
    #[serde(default)]
    qdd: Option<Vec<f64>>,
    impact: ImpactFileSpec,
    #[serde(default)]
    wrench_origin: Option<[f64; 3]>,
    #[serde(default)]
    measured_wrench: Option<[f64; 6]>,
    #[serde(default)]
    zmp_normal: Option<[f64; 3]>,
}

/// Resolved prediction input.
pub struct PredictInput {
    pub model: RobotModel,
    pub state: RobotState,
    pub qdd: DVector<f64>,
    pub configs: Vec<ImpactConfig>,
    pub wrench_origin: Vector3<f64>,
    pub measured_wrench: Option<Vector6<f64>>,
    pub zmp_normal: Vector3<f64>,
}

pub fn load_input(path: &Path) -> Result<PredictInput, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let file: PredictFile = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let model = match &file.model {
        serde_json::Value::String(p) => {
            let resolved = path.parent().map(|d| d.join(p)).unwrap_or_else(|| p.into());
            model::load_robot(&resolved).map_err(|e| e.to_string())?
        }
        inline => model::parse_robot(&inline.to_string()).map_err(|e| e.to_string())?,
    };
    let state = RobotState::new(DVector::from_vec(file.q), DVector::from_vec(file.qd));
    state.validate(&model).map_err(|e| e.to_string())?;
    let qdd = match file.qdd {
        Some(v) => {
            if v.len() != model.nv() {
                return Err(format!("qdd has {} entries, expected {}", v.len(), model.nv()));
            }
            DVector::from_vec(v)
        }
        None => DVector::zeros(model.nv()),
    };
    let partition = EndEffectorPartition::from_model(&model);
    if file.impact.normals.len() != partition.impacting.len() {
        return Err(format!(
            "impact.normals has {} entries, model has {} impacting end-effectors",
            file.impact.normals.len(),
            partition.impacting.len()
        ));
    }
    let configs = file
        .impact
        .normals
        .iter()
        .map(|n| {
            ImpactConfig::new(
                file.impact.restitution,
                Vector3::from(*n),
                file.impact.impact_duration,
                file.impact.control_period,
            )
            .map_err(|e| e.to_string())
        })
        .collect::<Result<_, _>>()?;
    Ok(PredictInput {
        model,
        state,
        qdd,
        configs,
        wrench_origin: file.wrench_origin.map(Vector3::from).unwrap_or_default(),
        measured_wrench: file.measured_wrench.map(Vector6::from),
        zmp_normal: file
            .zmp_normal
            .map(Vector3::from)
            .unwrap_or_else(Vector3::z),
    })
}

/// Build every decomposition, evaluate at (q̈, q̇), and render the CSV.
pub fn predict_csv(input: &PredictInput) -> Result<String, ImpactError> {
    let partition = EndEffectorPartition::from_model(&input.model);
    let dist = build_distribution(&input.model, &input.state, &partition, &input.configs)?;
    let nv = input.model.nv();

    let mut text = String::from("# impactqp.predict.v1\n");
    text.push_str("quantity,index");
    for k in 0..nv {
        text.push_str(&format!(",j_{k}"));
    }
    for k in 0..nv {
        text.push_str(&format!(",c_{k}"));
    }
    text.push_str(",jump\n");

    let mut emit = |decomp: &JumpDecomposition| {
        let value = decomp.evaluate(&input.qdd, &input.state.v);
        for r in 0..decomp.rows() {
            text.push_str(&format!("{},{r}", decomp.quantity));
            for k in 0..nv {
                text.push_str(&format!(",{}", decomp.accel_gain[(r, k)]));
            }
            for k in 0..nv {
                text.push_str(&format!(",{}", decomp.vel_gain[(r, k)]));
            }
            text.push_str(&format!(",{}\n", value[r]));
        }
    };

    emit(&dist.joint_velocity_jump());
    emit(&dist.force_jumps());
    // Impulses: the force-jump decomposition scaled back by δt.
    let mut impulse = dist.force_jumps();
    impulse.quantity = "impulse".into();
    impulse.accel_gain *= dist.impact_duration();
    impulse.vel_gain *= dist.impact_duration();
    emit(&impulse);
    emit(&dist.impulsive_torque_jumps());
    emit(&dist.ee_velocity_jumps());
    if let Some(k_jump) = dist.angular_momentum_jump() {
        emit(&k_jump);
    }
    if let Some(c_jump) = dist.com_velocity_jump() {
        emit(&c_jump);
    }
    let wrench = dist.wrench_jump(&input.wrench_origin);
    emit(&wrench);

    if let Some(w_meas) = &input.measured_wrench {
        let dw_vec = wrench.evaluate(&input.qdd, &input.state.v);
        let dw = Vector6::from_iterator(dw_vec.iter().copied());
        match zmp_jump(w_meas, &dw, &input.zmp_normal) {
            Ok(dz) => {
                for (r, v) in [dz.x, dz.y, dz.z].into_iter().enumerate() {
                    text.push_str(&format!("zmp,{r}"));
                    for _ in 0..2 * nv {
                        text.push_str(",0");
                    }
                    text.push_str(&format!(",{v}\n"));
                }
            }
            Err(e) => {
                log::warn!("ZMP jump undefined: {e}");
            }
        }
    }
    Ok(text)
}
