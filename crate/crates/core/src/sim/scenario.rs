//! Scenario files and the closed-loop experiment runner.
//!
//! A scenario bundles a robot, a world, bounds, tasks and the phase machine
//! settings. `run_closed_loop` plays the experiment: baseline control in
//! Start, impact-aware control while approaching in Impact, force admittance
//! after detection, then detach and reset, logging state, predictions,
//! events and violations at every controller tick.

use super::fsm::{Phase, PhaseMachine};
use super::{ImpactEvent, SimError, Surface, World};
use crate::constraints::{BoundsSpec, ComVelPolygon, ContactSpec, ZmpPolygon};
use crate::impact::ImpactConfig;
use crate::model::{
    self, EndEffectorPartition, EndEffectorRole, RobotModel, RobotState,
};
use crate::qp::{
    controller_step, end_effector_acceleration_task, joint_acceleration_task, ControlMode,
    ControllerConfig, ControllerContext, Measurements, SolveStatus, TaskObjective,
};
use nalgebra::{DVector, Unit, Vector3, Vector6};
use serde::Deserialize;
use std::path::Path;

fn default_sim_step() -> f64 {
    0.001
}
fn default_control_period() -> f64 {
    0.005
}
fn default_restitution() -> f64 {
    0.02
}
fn default_impact_duration() -> f64 {
    0.005
}
fn default_friction() -> f64 {
    0.7
}
fn default_generators() -> usize {
    4
}
fn default_cop() -> [f64; 2] {
    [0.02, 0.02]
}
fn default_torque_factor() -> f64 {
    0.4
}
fn default_detection_threshold() -> f64 {
    20.0
}
fn default_admittance_setpoint() -> f64 {
    15.0
}
fn default_admittance_gain() -> f64 {
    2e-3
}
fn default_start_duration() -> f64 {
    0.2
}
fn default_admittance_duration() -> f64 {
    1.0
}
fn default_detach_duration() -> f64 {
    0.4
}
fn default_retract_speed() -> f64 {
    0.15
}
fn default_approach_gain() -> f64 {
    40.0
}
fn default_approach_weight() -> f64 {
    1.0
}
fn default_activation_distance() -> f64 {
    0.15
}
fn default_max_wall_time() -> f64 {
    60.0
}
fn default_mode() -> String {
    "aware".into()
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ModelSource {
    Path(String),
    Inline(serde_json::Value),
}

#[derive(Deserialize)]
struct SurfaceFile {
    point: [f64; 3],
    normal: [f64; 3],
    #[serde(default = "default_restitution")]
    restitution: f64,
    #[serde(default = "default_friction")]
    friction: f64,
}

#[derive(Deserialize)]
struct ImpactFile {
    #[serde(default = "default_restitution")]
    restitution: f64,
    #[serde(default = "default_impact_duration")]
    impact_duration: f64,
}

impl Default for ImpactFile {
    fn default() -> Self {
        Self {
            restitution: default_restitution(),
            impact_duration: default_impact_duration(),
        }
    }
}

#[derive(Deserialize, Default)]
struct BoundsFile {
    /// Symmetric joint velocity bounds per actuated joint.
    velocity: Option<Vec<f64>>,
    position_lower: Option<Vec<f64>>,
    position_upper: Option<Vec<f64>>,
    /// Symmetric stall-torque bounds per actuated joint.
    torque: Option<Vec<f64>>,
    #[serde(default = "default_torque_factor")]
    impulsive_torque_factor: f64,
    angular_momentum_upper: Option<[f64; 3]>,
}

#[derive(Deserialize)]
struct ContactFile {
    #[serde(default = "default_friction")]
    friction: f64,
    #[serde(default = "default_cop")]
    cop_half_extents: [f64; 2],
    #[serde(default = "default_generators")]
    generator_count: usize,
}

impl Default for ContactFile {
    fn default() -> Self {
        Self {
            friction: default_friction(),
            cop_half_extents: default_cop(),
            generator_count: default_generators(),
        }
    }
}

#[derive(Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
enum ZmpFile {
    /// Option A: convex hull of the established ground contact points.
    SupportPolygon,
    /// User-supplied rectangle (stand-in for externally computed areas).
    Rectangle { center: [f64; 2], half_extents: [f64; 2] },
}

#[derive(Deserialize)]
struct ApproachFile {
    end_effector: String,
    surface: usize,
    reference_velocity: f64,
    #[serde(default = "default_approach_gain")]
    gain: f64,
    #[serde(default = "default_approach_weight")]
    weight: f64,
}

#[derive(Deserialize)]
struct PostureFile {
    stiffness: f64,
    damping: f64,
    weight: f64,
}

impl Default for PostureFile {
    fn default() -> Self {
        Self {
            stiffness: 25.0,
            damping: 10.0,
            weight: 1e-3,
        }
    }
}

#[derive(Deserialize)]
struct FsmFile {
    #[serde(default = "default_detection_threshold")]
    detection_threshold: f64,
    #[serde(default = "default_admittance_setpoint")]
    admittance_setpoint: f64,
    #[serde(default = "default_admittance_gain")]
    admittance_gain: f64,
    #[serde(default = "default_start_duration")]
    start_duration: f64,
    #[serde(default = "default_admittance_duration")]
    admittance_duration: f64,
    #[serde(default = "default_detach_duration")]
    detach_duration: f64,
    #[serde(default = "default_retract_speed")]
    retract_speed: f64,
}

impl Default for FsmFile {
    fn default() -> Self {
        Self {
            detection_threshold: default_detection_threshold(),
            admittance_setpoint: default_admittance_setpoint(),
            admittance_gain: default_admittance_gain(),
            start_duration: default_start_duration(),
            admittance_duration: default_admittance_duration(),
            detach_duration: default_detach_duration(),
            retract_speed: default_retract_speed(),
        }
    }
}

#[derive(Deserialize)]
struct ScenarioFile {
    name: String,
    model: ModelSource,
    #[serde(default)]
    initial_position: Option<Vec<f64>>,
    surfaces: Vec<SurfaceFile>,
    duration: f64,
    #[serde(default = "default_sim_step")]
    sim_step: f64,
    #[serde(default = "default_control_period")]
    control_period: f64,
    #[serde(default)]
    impact: ImpactFile,
    #[serde(default)]
    bounds: BoundsFile,
    #[serde(default)]
    contact: ContactFile,
    #[serde(default)]
    zmp: Option<ZmpFile>,
    /// Symmetric COM-velocity polygon half extents (x, y).
    #[serde(default)]
    com_velocity: Option<[f64; 2]>,
    approach: Vec<ApproachFile>,
    #[serde(default)]
    posture: PostureFile,
    #[serde(default)]
    fsm: FsmFile,
    #[serde(default = "default_activation_distance")]
    activation_distance: f64,
    #[serde(default = "default_mode")]
    mode: String,
    #[serde(default = "default_max_wall_time")]
    max_wall_time: f64,
}

/// One impact task: which end-effector hits which surface and how fast.
#[derive(Debug, Clone)]
pub struct ApproachSpec {
    pub end_effector: usize,
    pub surface: usize,
    pub reference_velocity: f64,
    pub gain: f64,
    pub weight: f64,
}

/// A fully resolved scenario.
pub struct Scenario {
    pub name: String,
    pub model: RobotModel,
    pub initial_state: RobotState,
    pub world: World,
    pub duration: f64,
    pub control_period: f64,
    pub bounds: BoundsSpec,
    pub contact: ContactSpec,
    pub zmp_polygon: Option<ZmpPolygon>,
    pub com_velocity_polygon: Option<ComVelPolygon>,
    pub approach: Vec<ApproachSpec>,
    pub posture: (f64, f64, f64),
    pub fsm: PhaseMachine,
    pub retract_speed: f64,
    pub activation_distance: f64,
    pub restitution: f64,
    pub impact_duration: f64,
    pub default_mode: ControlMode,
    pub max_wall_time: f64,
    /// Wrench frame origin (centroid of the feet contacts on the ground).
    pub wrench_origin: Vector3<f64>,
}

/// Parse a scenario from JSON text; `base` resolves relative model paths.
pub fn parse_scenario(text: &str, base: Option<&Path>) -> Result<Scenario, SimError> {
    let file: ScenarioFile =
        serde_json::from_str(text).map_err(|e| SimError::BadScenario(e.to_string()))?;
    let model = match &file.model {
        ModelSource::Path(p) => {
            let path = match base {
                Some(dir) => dir.join(p),
                None => Path::new(p).to_path_buf(),
            };
            model::load_robot(&path)?
        }
        ModelSource::Inline(v) => model::parse_robot(&v.to_string())?,
    };
    let n = model.n_actuated();

    let mut state = model.neutral_state();
    if let Some(q0) = &file.initial_position {
        if q0.len() != model.nq() {
            return Err(SimError::BadScenario(format!(
                "initial_position has {} entries, model needs {}",
                q0.len(),
                model.nq()
            )));
        }
        state.q = DVector::from_vec(q0.clone());
    }
    state.validate(&model)?;

    if !(file.sim_step > 0.0 && file.control_period > 0.0 && file.duration > 0.0) {
        return Err(SimError::BadScenario(
            "sim_step, control_period and duration must be positive".into(),
        ));
    }
    let surfaces: Vec<Surface> = file
        .surfaces
        .iter()
        .map(|s| Surface {
            point: Vector3::from(s.point),
            normal: Unit::new_normalize(Vector3::from(s.normal)),
            restitution: s.restitution,
            friction: s.friction,
        })
        .collect();
    if surfaces.is_empty() {
        return Err(SimError::BadScenario("at least one surface required".into()));
    }

    let mut bounds = BoundsSpec::unbounded(n);
    if let Some(v) = &file.bounds.velocity {
        check_len("bounds.velocity", v, n)?;
        bounds.qd_upper = DVector::from_vec(v.clone());
        bounds.qd_lower = -bounds.qd_upper.clone();
    }
    if let Some(v) = &file.bounds.position_lower {
        check_len("bounds.position_lower", v, n)?;
        bounds.q_lower = DVector::from_vec(v.clone());
    }
    if let Some(v) = &file.bounds.position_upper {
        check_len("bounds.position_upper", v, n)?;
        bounds.q_upper = DVector::from_vec(v.clone());
    }
    if let Some(v) = &file.bounds.torque {
        check_len("bounds.torque", v, n)?;
        bounds.tau_upper = DVector::from_vec(v.clone());
        bounds.tau_lower = -bounds.tau_upper.clone();
    }
    bounds = bounds.with_impulsive_fraction(file.bounds.impulsive_torque_factor);
    bounds.angular_momentum_upper = file.bounds.angular_momentum_upper.map(Vector3::from);
    bounds
        .validate(n)
        .map_err(|e| SimError::BadScenario(e.to_string()))?;

    let contact = ContactSpec {
        friction: file.contact.friction,
        cop_half_extents: (file.contact.cop_half_extents[0], file.contact.cop_half_extents[1]),
        yaw_torque_bounds: None,
        generator_count: file.contact.generator_count,
    };
    contact
        .validate()
        .map_err(|e| SimError::BadScenario(e.to_string()))?;

    let partition = EndEffectorPartition::from_model(&model);
    let frames = model::forward_kinematics(&model, &state.q)?;
    let feet_points: Vec<Vector3<f64>> = partition
        .established
        .iter()
        .map(|&ee| frames.ee_poses[ee].translation.vector)
        .collect();
    let wrench_origin = if feet_points.is_empty() {
        Vector3::zeros()
    } else {
        let mut c = Vector3::zeros();
        for p in &feet_points {
            c += p;
        }
        let mut c = c / feet_points.len() as f64;
        c.z = 0.0;
        c
    };

    let zmp_polygon = match &file.zmp {
        None => None,
        Some(ZmpFile::SupportPolygon) => Some(
            ZmpPolygon::from_support_points(&feet_points)
                .map_err(|e| SimError::BadScenario(e.to_string()))?,
        ),
        Some(ZmpFile::Rectangle { center, half_extents }) => Some(
            ZmpPolygon::rectangle(center[0], center[1], half_extents[0], half_extents[1])
                .map_err(|e| SimError::BadScenario(e.to_string()))?,
        ),
    };
    let com_velocity_polygon = match &file.com_velocity {
        None => None,
        Some([hx, hy]) => Some(
            ComVelPolygon::rectangle(*hx, *hy)
                .map_err(|e| SimError::BadScenario(e.to_string()))?,
        ),
    };

    let mut approach = Vec::new();
    for a in &file.approach {
        let ee = model
            .end_effector_index(&a.end_effector)
            .ok_or_else(|| SimError::BadScenario(format!("unknown end-effector {}", a.end_effector)))?;
        if a.surface >= surfaces.len() {
            return Err(SimError::BadScenario(format!(
                "approach surface {} out of range",
                a.surface
            )));
        }
        approach.push(ApproachSpec {
            end_effector: ee,
            surface: a.surface,
            reference_velocity: a.reference_velocity,
            gain: a.gain,
            weight: a.weight,
        });
    }
    if approach.is_empty() {
        return Err(SimError::BadScenario("at least one approach task required".into()));
    }

    let default_mode = match file.mode.as_str() {
        "aware" => ControlMode::ImpactAware,
        "baseline" => ControlMode::Baseline,
        other => {
            return Err(SimError::BadScenario(format!(
                "mode must be aware or baseline, got {other}"
            )))
        }
    };

    Ok(Scenario {
        name: file.name,
        world: World::new(surfaces, file.sim_step, file.impact.impact_duration),
        model,
        initial_state: state,
        duration: file.duration,
        control_period: file.control_period,
        bounds,
        contact,
        zmp_polygon,
        com_velocity_polygon,
        approach,
        posture: (file.posture.stiffness, file.posture.damping, file.posture.weight),
        fsm: PhaseMachine::new(
            file.fsm.detection_threshold,
            file.fsm.admittance_setpoint,
            file.fsm.admittance_gain,
            file.fsm.start_duration,
            file.fsm.admittance_duration,
            file.fsm.detach_duration,
        ),
        retract_speed: file.fsm.retract_speed,
        activation_distance: file.activation_distance,
        restitution: file.impact.restitution,
        impact_duration: file.impact.impact_duration,
        default_mode,
        max_wall_time: file.max_wall_time,
        wrench_origin,
    })
}

fn check_len(what: &str, v: &[f64], n: usize) -> Result<(), SimError> {
    if v.len() != n {
        return Err(SimError::BadScenario(format!(
            "{what} has {} entries, expected {n}",
            v.len()
        )));
    }
    Ok(())
}

pub fn load_scenario(path: &Path) -> Result<Scenario, SimError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| SimError::BadScenario(format!("{}: {e}", path.display())))?;
    parse_scenario(&text, path.parent())
}

/// One controller-tick log record.
#[derive(Debug, Clone)]
pub struct StepRecord {
    pub time: f64,
    pub phase: Phase,
    pub aware_active: bool,
    pub solver_ok: bool,
    pub slack: f64,
    pub q: DVector<f64>,
    pub v: DVector<f64>,
    pub qdd_cmd: DVector<f64>,
    /// Measured established-contact forces (sim ground truth), flattened.
    pub measured_forces: Vec<Vector3<f64>>,
    /// Gap and approach speed per approach end-effector.
    pub gaps: Vec<f64>,
    pub approach_speeds: Vec<f64>,
    /// Predicted post-impact joint velocity when awareness is active.
    pub predicted_post_velocity: Option<DVector<f64>>,
    /// Predicted impulsive torque jump when awareness is active.
    pub predicted_torque_jump: Option<DVector<f64>>,
    /// Measured ZMP from the sim contact forces, when defined.
    pub zmp: Option<Vector3<f64>>,
}

#[derive(Debug, Clone)]
pub struct ViolationRecord {
    pub time: f64,
    pub what: String,
    /// Measured value of the violated quantity.
    pub value: f64,
    /// The bound it broke.
    pub bound: f64,
    /// How far beyond the admissible set the value landed.
    pub excess: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RunLog {
    pub scenario: String,
    pub seed: u64,
    pub records: Vec<StepRecord>,
    pub events: Vec<ImpactEvent>,
    pub violations: Vec<ViolationRecord>,
    /// (time, slack) whenever the feasibility fallback engaged.
    pub slack_events: Vec<(f64, f64)>,
    /// Per impact event: torque jump of the whole resolution, M Δq̇ / δt.
    pub event_torque_jumps: Vec<DVector<f64>>,
}

pub struct RunOutcome {
    pub log: RunLog,
    /// Largest approach speed among the logged events (achieved velocity).
    pub achieved_contact_velocity: f64,
    pub completed_phases: Vec<Phase>,
}

/// Play a scenario in closed loop.
pub fn run_closed_loop(
    scenario: &Scenario,
    mode_override: Option<ControlMode>,
    seed: u64,
) -> Result<RunOutcome, SimError> {
    let started = std::time::Instant::now();
    let model = &scenario.model;
    let n_act = model.n_actuated();
    let mode = mode_override.unwrap_or(scenario.default_mode);

    let base_partition = EndEffectorPartition::from_model(model);
    let feet = base_partition.established.clone();
    let hands: Vec<usize> = scenario.approach.iter().map(|a| a.end_effector).collect();
    for &hand in &hands {
        if model.end_effector(hand).role != EndEffectorRole::Impacting {
            return Err(SimError::BadScenario(format!(
                "approach end-effector {} must have the impacting role",
                model.end_effector(hand).name
            )));
        }
    }

    // Controller context: feet are the established contacts throughout; the
    // hand is handled by the approach/admittance tasks.
    let ground = &scenario.world.surfaces[0];
    let context = ControllerContext {
        partition: base_partition.clone(),
        impact_configs: scenario
            .approach
            .iter()
            .map(|a| {
                ImpactConfig::new(
                    scenario.world.surfaces[a.surface].restitution,
                    scenario.world.surfaces[a.surface].normal.into_inner(),
                    scenario.impact_duration,
                    scenario.control_period,
                )
                .map_err(|e| SimError::BadScenario(e.to_string()))
            })
            .collect::<Result<_, _>>()?,
        bounds: scenario.bounds.clone(),
        contact_specs: vec![scenario.contact.clone(); feet.len()],
        contact_normals: vec![ground.normal; feet.len()],
        zmp_polygon: scenario.zmp_polygon.clone(),
        com_velocity_polygon: scenario.com_velocity_polygon.clone(),
        wrench_origin: scenario.wrench_origin,
        config: ControllerConfig {
            control_period: scenario.control_period,
            activation_distance: scenario.activation_distance,
            ..ControllerConfig::default()
        },
    };

    let q0_act = scenario
        .initial_state
        .q
        .rows(model.nq() - n_act, n_act)
        .into_owned();
    let (kp, kd, posture_weight) = scenario.posture;
    let layout = context.layout(model);

    let mut fsm = scenario.fsm.clone();
    let mut state = scenario.initial_state.clone();
    let mut log = RunLog {
        scenario: scenario.name.clone(),
        seed,
        ..Default::default()
    };
    let mut completed = vec![fsm.phase()];

    let steps_per_tick =
        (scenario.control_period / scenario.world.timestep).round().max(1.0) as usize;
    let n_ticks = (scenario.duration / scenario.control_period).ceil() as usize;

    let mut sim_established = feet.clone();
    let mut hands_established = false;
    let mut measured = vec![Vector3::zeros(); sim_established.len()];
    let mut prev_measured = measured.clone();
    let mut consecutive_slack = 0usize;
    let mut hands_hit: std::collections::BTreeSet<usize> = std::collections::BTreeSet::new();
    // Admittance position references, one per approach hand; the reference
    // creeps along the normal at the admittance velocity, which is what
    // realizes force regulation on a position-tracked contact.
    let mut admittance_refs: Vec<Vector3<f64>> = Vec::new();
    let mut time = 0.0;

    for _tick in 0..n_ticks {
        if started.elapsed().as_secs_f64() > scenario.max_wall_time {
            return Err(SimError::Budget(scenario.max_wall_time));
        }
        let phase = fsm.phase();
        let frames = model::forward_kinematics(model, &state.q)?;

        // Approach geometry.
        let mut gaps = Vec::with_capacity(hands.len());
        let mut approach_speeds = Vec::with_capacity(hands.len());
        for a in &scenario.approach {
            let p = frames.ee_poses[a.end_effector].translation.vector;
            let v = model::frame_linear_velocity(model, &state, a.end_effector)?;
            let surface = &scenario.world.surfaces[a.surface];
            gaps.push(surface.gap(&p));
            approach_speeds.push(-surface.normal.dot(&v));
        }

        // Tasks for this phase.
        let mut tasks: Vec<TaskObjective> = Vec::new();
        let posture_target = DVector::from_fn(n_act, |i, _| {
            let q = state.q[model.nq() - n_act + i];
            let qd = state.v[model.actuated_offset() + i];
            kp * (q0_act[i] - q) - kd * qd
        });
        tasks.push(
            joint_acceleration_task(model, &posture_target, posture_weight, &layout)
                .map_err(|e| SimError::Controller(e.to_string()))?,
        );
        match phase {
            Phase::Start | Phase::Reset => {}
            Phase::Impact => {
                for a in &scenario.approach {
                    let surface = &scenario.world.surfaces[a.surface];
                    let v = model::frame_linear_velocity(model, &state, a.end_effector)?;
                    let v_des = -surface.normal.into_inner() * a.reference_velocity;
                    let acc = a.gain * (v_des - v);
                    tasks.push(
                        end_effector_acceleration_task(
                            model,
                            &state,
                            a.end_effector,
                            &acc,
                            a.weight,
                            &layout,
                        )
                        .map_err(|e| SimError::Controller(e.to_string()))?,
                    );
                }
            }
            Phase::Admittance => {
                for (k, a) in scenario.approach.iter().enumerate() {
                    let surface = &scenario.world.surfaces[a.surface];
                    let n = surface.normal.into_inner();
                    let f_hand = if hands_established {
                        measured
                            .get(feet.len() + k)
                            .copied()
                            .unwrap_or_else(Vector3::zeros)
                    } else {
                        Vector3::zeros()
                    };
                    let f_normal = f_hand.dot(&n);
                    let p = frames.ee_poses[a.end_effector].translation.vector;
                    if admittance_refs.len() <= k {
                        admittance_refs.push(p);
                    }
                    let v_des = -n * fsm.admittance_gain * (fsm.admittance_setpoint - f_normal);
                    admittance_refs[k] += v_des * scenario.control_period;
                    let v = model::frame_linear_velocity(model, &state, a.end_effector)?;
                    let kd = a.gain;
                    let kp = 0.25 * kd * kd;
                    let acc = kp * (admittance_refs[k] - p) + kd * (v_des - v);
                    tasks.push(
                        end_effector_acceleration_task(
                            model,
                            &state,
                            a.end_effector,
                            &acc,
                            a.weight,
                            &layout,
                        )
                        .map_err(|e| SimError::Controller(e.to_string()))?,
                    );
                }
            }
            Phase::Detach => {
                for a in &scenario.approach {
                    let surface = &scenario.world.surfaces[a.surface];
                    let v = model::frame_linear_velocity(model, &state, a.end_effector)?;
                    let v_des = surface.normal.into_inner() * scenario.retract_speed;
                    let acc = a.gain * (v_des - v);
                    tasks.push(
                        end_effector_acceleration_task(
                            model,
                            &state,
                            a.end_effector,
                            &acc,
                            a.weight,
                            &layout,
                        )
                        .map_err(|e| SimError::Controller(e.to_string()))?,
                    );
                }
            }
        }

        // Controller step. Awareness is requested only in the Impact phase.
        let requested_mode = if phase == Phase::Impact {
            mode
        } else {
            ControlMode::Baseline
        };
        let measurements = Measurements {
            contact_forces: measured[..feet.len()].to_vec(),
            prev_contact_forces: prev_measured[..feet.len()].to_vec(),
            surface_distances: gaps.clone(),
        };
        let output = controller_step(model, &state, &context, &tasks, &measurements, requested_mode)
            .map_err(|e| SimError::Controller(e.to_string()))?;
        if !matches!(output.solution.status, SolveStatus::Optimal) {
            return Err(SimError::Controller(format!(
                "solver returned {:?} at t = {time:.3}",
                output.solution.status
            )));
        }
        if let Some(s) = output.slack {
            log.slack_events.push((time, s));
            consecutive_slack += 1;
            if consecutive_slack > 3 {
                log.violations.push(ViolationRecord {
                    time,
                    what: "slack_fallback_persistent".into(),
                    value: consecutive_slack as f64,
                    bound: 3.0,
                    excess: consecutive_slack as f64 - 3.0,
                });
            }
        } else {
            consecutive_slack = 0;
        }

        // Log the tick.
        let zmp_measured = measured_zmp(&frames, &sim_established, &measured, &scenario.wrench_origin);
        log.records.push(StepRecord {
            time,
            phase,
            aware_active: output.aware_active,
            solver_ok: true,
            slack: output.slack.unwrap_or(0.0),
            q: state.q.clone(),
            v: state.v.clone(),
            qdd_cmd: output.qdd.clone(),
            measured_forces: measured.clone(),
            gaps,
            approach_speeds,
            predicted_post_velocity: output
                .predictions
                .as_ref()
                .map(|p| p.post_impact_joint_velocity.clone()),
            predicted_torque_jump: output
                .predictions
                .as_ref()
                .map(|p| p.impulsive_torque_jump.clone()),
            zmp: zmp_measured,
        });

        // Simulate to the next tick under zero-order-held acceleration.
        let impacting_now: Vec<usize> = if matches!(phase, Phase::Start | Phase::Impact) {
            hands.clone()
        } else {
            Vec::new()
        };
        let mut hand_force_peak: f64 = if hands_established {
            (0..hands.len())
                .map(|k| measured.get(feet.len() + k).map(|f| f.norm()).unwrap_or(0.0))
                .fold(0.0, f64::max)
        } else {
            0.0
        };
        for _sub in 0..steps_per_tick {
            let torques = inverse_dynamics_actuated(
                model,
                &state,
                &output.qdd,
                &feet,
                &output.contact_forces,
            )?;
            let result = super::step(
                &scenario.world,
                model,
                &state,
                &torques,
                &sim_established,
                &impacting_now,
                time,
            )?;
            for resolution in &result.resolutions {
                // Impulsive torque jump γ = Σ Jᵀ ι / δt over every contact
                // involved in the resolution.
                let mut generalized_impulse = DVector::zeros(model.nv());
                for (k, &ee) in sim_established.iter().enumerate() {
                    let j = model::point_jacobian(model, &state, ee)?;
                    let iota = &resolution.established_impulses[k];
                    let f = DVector::from_vec(vec![iota.x, iota.y, iota.z]);
                    generalized_impulse += j.transpose() * f;
                }
                let mut wrench_jump: Vector6<f64> = Vector6::zeros();
                let frames_now = model::forward_kinematics(model, &state.q)?;
                let mut add_wrench = |p: Vector3<f64>, iota: &Vector3<f64>| {
                    let f = iota / scenario.impact_duration;
                    let tau = (p - scenario.wrench_origin).cross(&f);
                    for i in 0..3 {
                        wrench_jump[i] += f[i];
                        wrench_jump[3 + i] += tau[i];
                    }
                };
                for (k, &ee) in sim_established.iter().enumerate() {
                    add_wrench(
                        frames_now.ee_poses[ee].translation.vector,
                        &resolution.established_impulses[k],
                    );
                }
                for event in &resolution.events {
                    let j = model::point_jacobian(model, &state, event.end_effector)?;
                    let f = DVector::from_vec(vec![
                        event.impulse.x,
                        event.impulse.y,
                        event.impulse.z,
                    ]);
                    generalized_impulse += j.transpose() * f;
                    add_wrench(
                        frames_now.ee_poses[event.end_effector].translation.vector,
                        &event.impulse,
                    );
                }
                let gamma = generalized_impulse / scenario.impact_duration;
                for event in &resolution.events {
                    log.events.push(event.clone());
                    log.event_torque_jumps.push(gamma.clone());
                    hand_force_peak = hand_force_peak.max(event.force_jump.norm());
                    hands_hit.insert(event.end_effector);
                }
                // The contact-setting transition waits for every impact task.
                if hands_hit.len() == hands.len() {
                    fsm.note_impact_event();
                }
                check_event_violations(
                    scenario,
                    model,
                    &result,
                    &gamma,
                    time,
                    &mut log.violations,
                );
                // Post-impact ZMP during the impulsive interval: the measured
                // pre-impact wrench plus the impulse wrench over δt.
                if let Some(polygon) = &scenario.zmp_polygon {
                    let w_pre = feet_wrench(
                        &frames_now,
                        &sim_established,
                        &measured,
                        &scenario.wrench_origin,
                    );
                    let w_post = w_pre + wrench_jump;
                    if w_post[2].abs() > 1.0 {
                        let tau = Vector3::new(w_post[3], w_post[4], w_post[5]);
                        let z = scenario.wrench_origin + Vector3::z().cross(&tau) / w_post[2];
                        let violation = polygon.violation(&z);
                        log::debug!(
                            "impulsive zmp at t={:.4}: z=({:.4},{:.4}) violation {:.4}",
                            resolution.time, z.x, z.y, violation
                        );
                        if violation > 1e-3 {
                            log.violations.push(ViolationRecord {
                                time: resolution.time,
                                what: "post_impact_zmp".into(),
                                value: violation,
                                bound: 0.0,
                                excess: violation,
                            });
                        }
                    }
                }
            }
            state = result.state;
            if !result.contact_forces.is_empty() {
                prev_measured = measured.clone();
                measured = result.contact_forces;
            }
            time += scenario.world.timestep;
        }

        // Phase transitions and their side effects.
        if let Some(new_phase) = fsm.advance(time, hand_force_peak) {
            completed.push(new_phase);
            match new_phase {
                Phase::Admittance => {
                    // Settle the hands as established contacts in the sim:
                    // apply the sticking impulse and extend the contact set.
                    let mut extended = sim_established.clone();
                    extended.extend(hands.iter().copied());
                    let (_resolution, post_v) = super::resolve_impact(
                        &scenario.world,
                        model,
                        &state,
                        &extended,
                        &[],
                        time,
                    )?;
                    state.v = post_v;
                    sim_established = extended;
                    hands_established = true;
                    measured.resize(sim_established.len(), Vector3::zeros());
                    prev_measured.resize(sim_established.len(), Vector3::zeros());
                }
                Phase::Detach => {
                    sim_established = feet.clone();
                    hands_established = false;
                    measured.truncate(feet.len());
                    prev_measured.truncate(feet.len());
                }
                _ => {}
            }
        }
    }

    let achieved = log
        .events
        .iter()
        .map(|e| e.approach_speed)
        .fold(0.0f64, f64::max);
    Ok(RunOutcome {
        log,
        achieved_contact_velocity: achieved,
        completed_phases: completed,
    })
}

/// Actuated torques realizing a commanded acceleration with the commanded
/// contact forces: τ = (M q̈ + N - Σ Jᵀ f)_actuated.
fn inverse_dynamics_actuated(
    model: &RobotModel,
    state: &RobotState,
    qdd: &DVector<f64>,
    contacts: &[usize],
    forces: &[Vector3<f64>],
) -> Result<DVector<f64>, SimError> {
    let mass = model::mass_matrix(model, state)?;
    let bias = model::bias_forces(model, state)?;
    let mut gen = mass * qdd + bias;
    for (k, &ee) in contacts.iter().enumerate() {
        let j = model::point_jacobian(model, state, ee)?;
        let f = DVector::from_vec(vec![forces[k].x, forces[k].y, forces[k].z]);
        gen -= j.transpose() * f;
    }
    let offset = model.actuated_offset();
    Ok(DVector::from_fn(model.n_actuated(), |i, _| gen[offset + i]))
}

/// Net wrench of the measured contact forces at `origin`.
fn feet_wrench(
    frames: &model::Frames,
    contacts: &[usize],
    forces: &[Vector3<f64>],
    origin: &Vector3<f64>,
) -> Vector6<f64> {
    let mut w: Vector6<f64> = Vector6::zeros();
    for (k, &ee) in contacts.iter().enumerate() {
        let p = frames.ee_poses[ee].translation.vector;
        if let Some(f) = forces.get(k) {
            let tau = (p - origin).cross(f);
            for i in 0..3 {
                w[i] += f[i];
                w[3 + i] += tau[i];
            }
        }
    }
    w
}

/// ZMP of the measured contact forces at `origin`, when the normal force is
/// meaningful.
fn measured_zmp(
    frames: &model::Frames,
    contacts: &[usize],
    forces: &[Vector3<f64>],
    origin: &Vector3<f64>,
) -> Option<Vector3<f64>> {
    let mut w: Vector6<f64> = Vector6::zeros();
    for (k, &ee) in contacts.iter().enumerate() {
        let p = frames.ee_poses[ee].translation.vector;
        let f = forces.get(k)?;
        let tau = (p - origin).cross(f);
        for i in 0..3 {
            w[i] += f[i];
            w[3 + i] += tau[i];
        }
    }
    if w[2].abs() < 1.0 {
        return None;
    }
    let tau = Vector3::new(w[3], w[4], w[5]);
    let z_local = Vector3::z().cross(&tau) / w[2];
    Some(origin + z_local)
}

fn check_event_violations(
    scenario: &Scenario,
    model: &RobotModel,
    result: &super::StepResult,
    torque_jump: &DVector<f64>,
    time: f64,
    violations: &mut Vec<ViolationRecord>,
) {
    let offset = model.actuated_offset();
    let n = model.n_actuated();
    for i in 0..n {
        let v = result.state.v[offset + i];
        let v_excess = (v - scenario.bounds.qd_upper[i]).max(scenario.bounds.qd_lower[i] - v);
        if v_excess > 1e-3 {
            violations.push(ViolationRecord {
                time,
                what: format!("post_impact_joint_velocity_{i}"),
                value: v,
                bound: scenario.bounds.qd_upper[i],
                excess: v_excess,
            });
        }
        let g = torque_jump[offset + i];
        let g_excess = (g - scenario.bounds.gamma_upper[i]).max(scenario.bounds.gamma_lower[i] - g);
        if g_excess > 1e-3 {
            violations.push(ViolationRecord {
                time,
                what: format!("impulsive_torque_{i}"),
                value: g,
                bound: scenario.bounds.gamma_upper[i],
                excess: g_excess,
            });
        }
    }
}
