//! Desk-scale physics world used as ground truth for the predictions.
//!
//! Semi-implicit integration of the rigid-body dynamics with established
//! contacts enforced as bilateral acceleration-level constraints, plane
//! impact detection, and an independent impulse resolution through the
//! Delassus operator (established contacts stick, impacting contacts follow
//! the restitution law).

mod fsm;
mod scenario;

pub use fsm::{Phase, PhaseMachine};
pub use scenario::{
    load_scenario, parse_scenario, run_closed_loop, RunLog, RunOutcome, Scenario, StepRecord,
    ViolationRecord,
};

use crate::model::{self, RobotModel, RobotState};
use nalgebra::{DMatrix, DVector, Unit, Vector3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error("contact constraint unsatisfiable (residual {0:.3e}); Jacobian rank loss")]
    ContactSingular(f64),
    #[error("mass matrix not positive definite")]
    MassMatrixNotSpd,
    #[error("scenario invalid: {0}")]
    BadScenario(String),
    #[error("controller failed: {0}")]
    Controller(String),
    #[error("wall-clock budget of {0:.1}s exceeded")]
    Budget(f64),
}

/// Static plane the robot can collide with.
#[derive(Debug, Clone)]
pub struct Surface {
    /// Any point on the plane.
    pub point: Vector3<f64>,
    /// Unit normal pointing into free space.
    pub normal: Unit<Vector3<f64>>,
    /// Coefficient of restitution of contacts against this plane.
    pub restitution: f64,
    /// Friction coefficient (used by the controller's contact specs).
    pub friction: f64,
}

impl Surface {
    /// Signed distance of a point: positive in free space.
    pub fn gap(&self, p: &Vector3<f64>) -> f64 {
        self.normal.dot(&(p - self.point))
    }
}

/// The simulated environment.
#[derive(Debug, Clone)]
pub struct World {
    pub surfaces: Vec<Surface>,
    /// Integration step h, s.
    pub timestep: f64,
    /// Impact duration δt used to convert impulses into force jumps.
    pub impact_duration: f64,
    /// Minimum approach speed for an impact event, m/s.
    pub approach_speed_floor: f64,
}

impl World {
    /// Panics on non-positive timestep or impact duration.
    pub fn new(surfaces: Vec<Surface>, timestep: f64, impact_duration: f64) -> Self {
        assert!(timestep > 0.0, "integration step must be positive");
        assert!(impact_duration > 0.0, "impact duration must be positive");
        Self {
            surfaces,
            timestep,
            impact_duration,
            approach_speed_floor: 1e-4,
        }
    }
}

/// One resolved impact.
#[derive(Debug, Clone)]
pub struct ImpactEvent {
    pub time: f64,
    pub end_effector: usize,
    pub surface: usize,
    /// Contact-point velocity just before the impulse.
    pub pre_velocity: Vector3<f64>,
    /// Contact-point velocity just after.
    pub post_velocity: Vector3<f64>,
    /// Resolved impulse on the end-effector, N s.
    pub impulse: Vector3<f64>,
    /// Measured force jump, impulse / δt.
    pub force_jump: Vector3<f64>,
    /// Normal approach speed before the impulse (positive towards the plane).
    pub approach_speed: f64,
}

/// One impulse resolution: the events of the impacting set plus the sticking
/// impulses of the established contacts.
#[derive(Debug, Clone)]
pub struct ImpactResolution {
    pub time: f64,
    pub events: Vec<ImpactEvent>,
    /// Sticking impulses per established contact, N s.
    pub established_impulses: Vec<Vector3<f64>>,
}

/// Output of one integration step.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub state: RobotState,
    /// Constraint forces of the established contacts, world frame.
    pub contact_forces: Vec<Vector3<f64>>,
    pub events: Vec<ImpactEvent>,
    /// Impulse resolutions that happened within the step.
    pub resolutions: Vec<ImpactResolution>,
}

/// An impacting end-effector that is at (or through) a surface and closing in.
#[derive(Debug, Clone)]
pub struct PendingImpact {
    pub end_effector: usize,
    pub surface: usize,
    pub gap: f64,
    pub approach_speed: f64,
}

/// Forward dynamics under actuated torques with bilateral contacts.
///
/// Returns (q̈, contact forces). Contacts are enforced at the acceleration
/// level; a damped Delassus solve tolerates redundant contact rows, and an
/// unsatisfiable constraint (true rank loss) is an error.
pub fn forward_dynamics(
    model: &RobotModel,
    state: &RobotState,
    torques: &DVector<f64>,
    established: &[usize],
) -> Result<(DVector<f64>, Vec<Vector3<f64>>), SimError> {
    let nv = model.nv();
    let mass = model::mass_matrix(model, state)?;
    let bias = model::bias_forces(model, state)?;
    let chol = nalgebra::Cholesky::new(mass).ok_or(SimError::MassMatrixNotSpd)?;
    let mut rhs = -bias;
    let offset = model.actuated_offset();
    for i in 0..model.n_actuated() {
        rhs[offset + i] += torques[i];
    }
    if established.is_empty() {
        return Ok((chol.solve(&rhs), Vec::new()));
    }

    let k = established.len();
    let mut j = DMatrix::zeros(3 * k, nv);
    let mut drift = DVector::zeros(3 * k);
    for (i, &ee) in established.iter().enumerate() {
        j.rows_mut(3 * i, 3)
            .copy_from(&model::point_jacobian(model, state, ee)?);
        let jd = model::jacobian_derivative(model, state, ee)?;
        let d = jd * &state.v;
        for r in 0..3 {
            drift[3 * i + r] = d[r];
        }
    }
    let minv_jt = chol.solve(&j.transpose());
    let delassus = &j * &minv_jt;
    let free_acc = chol.solve(&rhs);
    let target = -(&drift) - &j * &free_acc;
    let f = damped_solve(&delassus, &target);
    let qdd = free_acc + minv_jt * &f;

    // Constraint satisfaction check: redundant-but-consistent rows are fine,
    // genuinely unsatisfiable ones are a rank-loss error.
    let residual = (&j * &qdd + drift).norm();
    let scale = 1.0 + state.v.norm() + qdd.norm();
    if residual > 1e-6 * scale {
        return Err(SimError::ContactSingular(residual));
    }
    let forces = (0..k)
        .map(|i| Vector3::new(f[3 * i], f[3 * i + 1], f[3 * i + 2]))
        .collect();
    Ok((qdd, forces))
}

/// Impacting end-effectors at a surface with approach speed above the floor.
pub fn detect_impact(
    world: &World,
    model: &RobotModel,
    state: &RobotState,
    impacting: &[usize],
) -> Result<Vec<PendingImpact>, SimError> {
    let frames = model::forward_kinematics(model, &state.q)?;
    let mut out = Vec::new();
    for &ee in impacting {
        let p = frames.ee_poses[ee].translation.vector;
        let v = model::frame_linear_velocity(model, state, ee)?;
        for (si, surface) in world.surfaces.iter().enumerate() {
            let gap = surface.gap(&p);
            let approach = -surface.normal.dot(&v);
            if gap <= 1e-9 && approach > world.approach_speed_floor {
                out.push(PendingImpact {
                    end_effector: ee,
                    surface: si,
                    gap,
                    approach_speed: approach,
                });
            }
        }
    }
    Ok(out)
}

/// Resolve impact impulses: established contacts stick (their post-impact
/// velocity is zero), impacting contacts follow the restitution law in all
/// three components. Returns the events and the post-impact velocity.
pub fn resolve_impact(
    world: &World,
    model: &RobotModel,
    state: &RobotState,
    established: &[usize],
    hits: &[(usize, usize)],
    time: f64,
) -> Result<(ImpactResolution, DVector<f64>), SimError> {
    let nv = model.nv();
    let total = established.len() + hits.len();
    let mut j = DMatrix::zeros(3 * total, nv);
    let mut target = DVector::zeros(3 * total);

    let mut row = 0;
    for &ee in established {
        let jac = model::point_jacobian(model, state, ee)?;
        let vel = &jac * &state.v;
        j.rows_mut(row, 3).copy_from(&jac);
        for r in 0..3 {
            target[row + r] = -vel[r];
        }
        row += 3;
    }
    let mut pre_velocities = Vec::with_capacity(hits.len());
    for &(ee, si) in hits {
        let jac = model::point_jacobian(model, state, ee)?;
        let vel = &jac * &state.v;
        let pre = Vector3::new(vel[0], vel[1], vel[2]);
        let surface = &world.surfaces[si];
        let n = surface.normal.into_inner();
        let jump = -(1.0 + surface.restitution) * n * n.dot(&pre);
        j.rows_mut(row, 3).copy_from(&jac);
        for r in 0..3 {
            target[row + r] = jump[r];
        }
        pre_velocities.push(pre);
        row += 3;
    }

    let mass = model::mass_matrix(model, state)?;
    let chol = nalgebra::Cholesky::new(mass).ok_or(SimError::MassMatrixNotSpd)?;
    let minv_jt = chol.solve(&j.transpose());
    let delassus = &j * &minv_jt;
    let iota = damped_solve(&delassus, &target);
    let residual = (&delassus * &iota - &target).norm();
    if residual > 1e-6 * (1.0 + target.norm()) {
        log::warn!("impact Delassus solve left residual {residual:.3e} (singular configuration)");
    }
    let delta_v = minv_jt * &iota;
    let post_v = &state.v + &delta_v;

    let mut events = Vec::with_capacity(hits.len());
    for (k, &(ee, si)) in hits.iter().enumerate() {
        let jac = model::point_jacobian(model, state, ee)?;
        let vel_post = &jac * &post_v;
        let r0 = 3 * (established.len() + k);
        let impulse = Vector3::new(iota[r0], iota[r0 + 1], iota[r0 + 2]);
        let surface = &world.surfaces[si];
        events.push(ImpactEvent {
            time,
            end_effector: ee,
            surface: si,
            pre_velocity: pre_velocities[k],
            post_velocity: Vector3::new(vel_post[0], vel_post[1], vel_post[2]),
            impulse,
            force_jump: impulse / world.impact_duration,
            approach_speed: -surface.normal.dot(&pre_velocities[k]),
        });
    }
    let established_impulses = (0..established.len())
        .map(|k| Vector3::new(iota[3 * k], iota[3 * k + 1], iota[3 * k + 2]))
        .collect();
    Ok((
        ImpactResolution {
            time,
            events,
            established_impulses,
        },
        post_v,
    ))
}

/// One semi-implicit step under constant actuated torques.
///
/// Impacts inside the step are located by linear interpolation of the gap,
/// the state is rolled to the crossing, the impulse applied, and the
/// remainder of the step integrated (recursively for multiple crossings).
pub fn step(
    world: &World,
    model: &RobotModel,
    state: &RobotState,
    torques: &DVector<f64>,
    established: &[usize],
    impacting: &[usize],
    time: f64,
) -> Result<StepResult, SimError> {
    step_inner(world, model, state, torques, established, impacting, time, world.timestep, 0)
}

#[allow(clippy::too_many_arguments)]
fn step_inner(
    world: &World,
    model: &RobotModel,
    state: &RobotState,
    torques: &DVector<f64>,
    established: &[usize],
    impacting: &[usize],
    time: f64,
    h: f64,
    depth: usize,
) -> Result<StepResult, SimError> {
    let (qdd, forces) = forward_dynamics(model, state, torques, established)?;
    let mut advanced = state.clone();
    advanced.v += &qdd * h;
    advanced = model.integrate(&advanced, h);

    // Gap crossings within this step, earliest first. An end-effector that
    // is already at (or just through) a surface and still closing in counts
    // as a crossing at the start of the step, so near-simultaneous impacts
    // are resolved together instead of tunnelling.
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    if depth < 4 {
        let frames_now = model::forward_kinematics(model, &state.q)?;
        let frames_next = model::forward_kinematics(model, &advanced.q)?;
        for &ee in impacting {
            let p0 = frames_now.ee_poses[ee].translation.vector;
            let p1 = frames_next.ee_poses[ee].translation.vector;
            for (si, surface) in world.surfaces.iter().enumerate() {
                let g0 = surface.gap(&p0);
                let g1 = surface.gap(&p1);
                let speed = (g0 - g1) / h;
                if speed <= world.approach_speed_floor || g1 > 0.0 {
                    continue;
                }
                if g0 > 0.0 {
                    candidates.push(((g0 / (g0 - g1)).clamp(0.0, 1.0), ee, si));
                } else {
                    candidates.push((0.0, ee, si));
                }
            }
        }
    }
    let crossing: Option<(f64, Vec<(usize, usize)>)> = candidates
        .iter()
        .map(|&(theta, _, _)| theta)
        .min_by(|a, b| a.partial_cmp(b).unwrap())
        .map(|theta_min| {
            (
                theta_min,
                candidates
                    .iter()
                    .filter(|&&(theta, _, _)| theta <= theta_min + 1e-9)
                    .map(|&(_, ee, si)| (ee, si))
                    .collect(),
            )
        });

    let Some((theta, hits)) = crossing else {
        return Ok(StepResult {
            state: advanced,
            contact_forces: forces,
            events: Vec::new(),
            resolutions: Vec::new(),
        });
    };

    // Roll to the crossing, apply the impulse, integrate the remainder.
    let t_hit = theta * h;
    let mut at_impact = state.clone();
    at_impact.v += &qdd * t_hit;
    at_impact = model.integrate(&at_impact, t_hit);
    let (resolution, post_v) =
        resolve_impact(world, model, &at_impact, established, &hits, time + t_hit)?;
    at_impact.v = post_v;
    let mut events = resolution.events.clone();
    let mut resolutions = vec![resolution];
    let remainder = h - t_hit;
    if remainder > 1e-12 {
        let rest = step_inner(
            world,
            model,
            &at_impact,
            torques,
            established,
            impacting,
            time + t_hit,
            remainder,
            depth + 1,
        )?;
        events.extend(rest.events);
        resolutions.extend(rest.resolutions);
        Ok(StepResult {
            state: rest.state,
            contact_forces: rest.contact_forces,
            events,
            resolutions,
        })
    } else {
        Ok(StepResult {
            state: at_impact,
            contact_forces: forces,
            events,
            resolutions,
        })
    }
}

/// Minimum-norm least-squares solve through a damped SVD.
fn damped_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let svd = a.clone().svd(true, true);
    let sigma_max = svd.singular_values.iter().copied().fold(0.0f64, f64::max);
    if sigma_max <= 0.0 {
        return DVector::zeros(a.ncols());
    }
    let tol = 1e-10 * sigma_max;
    svd.solve(b, tol).unwrap_or_else(|_| DVector::zeros(a.ncols()))
}
