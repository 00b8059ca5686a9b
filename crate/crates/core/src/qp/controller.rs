//! Per-step controller: rebuild predictions and constraint blocks, assemble
//! the requested problem, solve, and fall back to a slack-relaxed problem
//! when one-step-ahead awareness is momentarily infeasible.

use super::{assemble, solve, AssembleMode, QpError, QpSolution, SolveStatus, TaskObjective};
use crate::constraints::{
    self, BoundsSpec, ComVelPolygon, ConstraintBlock, ContactSpec, VariableLayout, ZmpPolygon,
};
use crate::impact::{
    build_distribution, ImpactConfig, ImpactError, ImpulseDistribution, ImpulseSolution,
};
use crate::model::{self, EndEffectorPartition, RobotModel, RobotState};
use nalgebra::{DMatrix, DVector, Matrix3, Unit, Vector3, Vector6};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlMode {
    Baseline,
    ImpactAware,
}

#[derive(Debug, Clone)]
pub struct ControllerConfig {
    /// Controller period Δt, s.
    pub control_period: f64,
    /// Impact awareness engages within this distance to a surface, m.
    pub activation_distance: f64,
    /// Weight of the shared slack variable in the feasibility fallback.
    pub slack_weight: f64,
    /// Tiny weight on ‖λ‖² keeping the Hessian well conditioned over the
    /// generator weights without distorting the force distribution.
    pub force_regularization: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            control_period: 0.005,
            activation_distance: 0.15,
            slack_weight: 1e6,
            force_regularization: 1e-6,
        }
    }
}

/// Everything the controller needs that outlives one step.
#[derive(Debug, Clone)]
pub struct ControllerContext {
    pub partition: EndEffectorPartition,
    /// One impact config per impacting end-effector.
    pub impact_configs: Vec<ImpactConfig>,
    pub bounds: BoundsSpec,
    /// One contact spec and world normal per established contact.
    pub contact_specs: Vec<ContactSpec>,
    pub contact_normals: Vec<Unit<Vector3<f64>>>,
    pub zmp_polygon: Option<ZmpPolygon>,
    pub com_velocity_polygon: Option<ComVelPolygon>,
    /// Frame the net contact wrench (and ZMP rows) are expressed at.
    pub wrench_origin: Vector3<f64>,
    pub config: ControllerConfig,
}

/// Closed-loop measurements for one step.
#[derive(Debug, Clone)]
pub struct Measurements {
    /// Current contact force per established contact, world frame.
    pub contact_forces: Vec<Vector3<f64>>,
    /// Previous-step contact forces (zero on the first step).
    pub prev_contact_forces: Vec<Vector3<f64>>,
    /// Signed distance to the target surface per impacting end-effector.
    pub surface_distances: Vec<f64>,
}

impl Measurements {
    pub fn quiescent(n_established: usize, n_impacting: usize) -> Self {
        Self {
            contact_forces: vec![Vector3::zeros(); n_established],
            prev_contact_forces: vec![Vector3::zeros(); n_established],
            surface_distances: vec![f64::INFINITY; n_impacting],
        }
    }
}

/// Evaluated predictions at the commanded acceleration, for logging and
/// downstream checks.
#[derive(Debug, Clone)]
pub struct StepPredictions {
    pub distribution: ImpulseDistribution,
    pub impulse_solution: ImpulseSolution,
    pub joint_velocity_jump: DVector<f64>,
    pub impulsive_torque_jump: DVector<f64>,
    pub ee_velocity_jump: DVector<f64>,
    pub wrench_jump: Vector6<f64>,
    pub angular_momentum_jump: Option<Vector3<f64>>,
    pub com_velocity_jump: Option<nalgebra::Vector2<f64>>,
    /// Post-impact joint velocity (I + jump)(q̇ + q̈ Δt).
    pub post_impact_joint_velocity: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct StepOutput {
    pub solution: QpSolution,
    /// Commanded generalized acceleration.
    pub qdd: DVector<f64>,
    /// Commanded contact forces reconstructed from the generator weights.
    pub contact_forces: Vec<Vector3<f64>>,
    /// Whether the impact-aware blocks were part of the solved problem.
    pub aware_active: bool,
    /// Slack value when the single-step relaxation had to engage.
    pub slack: Option<f64>,
    pub predictions: Option<StepPredictions>,
}

/// One controller step.
///
/// Awareness engages when the requested mode asks for it and any impacting
/// end-effector is within the activation distance of its surface; it is a
/// no-op when the impacting set is empty.
pub fn controller_step(
    model: &RobotModel,
    state: &RobotState,
    context: &ControllerContext,
    tasks: &[TaskObjective],
    measurements: &Measurements,
    mode: ControlMode,
) -> Result<StepOutput, QpError> {
    state.validate(model).map_err(|e| QpError::BadTask(e.to_string()))?;
    let layout = context.layout(model);
    let dt = context.config.control_period;
    let established = &context.partition.established;
    let generators = context.generator_matrices();

    let mut tasks: Vec<super::TaskObjective> = tasks.to_vec();
    if layout.n_lambda() > 0 {
        let mut e = DMatrix::zeros(layout.n_lambda(), layout.dim());
        for k in 0..layout.n_lambda() {
            e[(k, layout.nv() + k)] = 1.0;
        }
        tasks.push(
            super::TaskObjective::new(
                "force_regularization",
                context.config.force_regularization,
                e,
                DVector::zeros(layout.n_lambda()),
            )?,
        );
    }
    let tasks: &[super::TaskObjective] = &tasks;

    let mut blocks: Vec<ConstraintBlock> = Vec::new();

    // Structural and baseline blocks.
    let contact_pairs: Vec<(usize, DMatrix<f64>)> = established
        .iter()
        .copied()
        .zip(generators.iter().cloned())
        .collect();
    blocks.push(constraints::floating_base_dynamics_rows(
        model,
        state,
        &contact_pairs,
        &layout,
    )?);
    blocks.push(constraints::contact_acceleration_rows(
        model,
        state,
        established,
        &layout,
    )?);
    let prev_force = generalized_contact_force(
        model,
        state,
        established,
        &measurements.prev_contact_forces,
    )?;
    blocks.push(constraints::joint_torque_rows(
        model,
        state,
        &prev_force,
        &context.bounds,
        &layout,
    )?);
    blocks.push(constraints::joint_kinematic_rows(
        model,
        state,
        &context.bounds,
        dt,
        &layout,
    )?);
    blocks.push(constraints::lambda_nonnegativity_rows(&layout));
    let frames = model::forward_kinematics(model, &state.q)
        .map_err(|e| QpError::BadTask(e.to_string()))?;
    for (k, spec) in context.contact_specs.iter().enumerate() {
        let cone = constraints::contact_wrench_cone_rows(spec)?;
        let rot = world_to_local(&context.contact_normals[k]);
        blocks.push(constraints::cwc_lambda_rows(
            &cone,
            &generators[k],
            &rot,
            k,
            &layout,
        )?);
    }
    if let Some(polygon) = &context.zmp_polygon {
        let contacts: Vec<(Vector3<f64>, DMatrix<f64>)> = established
            .iter()
            .enumerate()
            .map(|(k, &ee)| {
                (
                    frames.ee_poses[ee].translation.vector,
                    generators[k].clone(),
                )
            })
            .collect();
        blocks.push(constraints::zmp_lambda_rows(
            polygon,
            &contacts,
            &context.wrench_origin,
            &layout,
        )?);
    }
    if let Some(polygon) = &context.com_velocity_polygon {
        if model.has_floating_base() {
            blocks.push(constraints::com_velocity_rows(
                polygon, model, state, dt, &layout,
            )?);
        }
    }
    if let Some(upper) = &context.bounds.angular_momentum_upper {
        if model.has_floating_base() {
            blocks.push(constraints::angular_momentum_rows(
                model, state, upper, dt, &layout,
            )?);
        }
    }

    // Impact awareness.
    let near_surface = measurements
        .surface_distances
        .iter()
        .any(|&d| d <= context.config.activation_distance);
    let aware_requested = mode == ControlMode::ImpactAware
        && !context.partition.impacting.is_empty()
        && near_surface;

    let distribution = if aware_requested {
        match build_distribution(model, state, &context.partition, &context.impact_configs) {
            Ok(d) => Some(d),
            Err(ImpactError::EmptyImpactSet) => None,
            Err(e) => return Err(QpError::BadTask(e.to_string())),
        }
    } else {
        None
    };

    if let Some(dist) = &distribution {
        let dq_jump = dist.joint_velocity_jump();
        blocks.push(constraints::impact_joint_velocity_rows(
            model,
            state,
            &dq_jump,
            &context.bounds,
            &layout,
        )?);
        let torque_jump = dist.impulsive_torque_jumps();
        blocks.push(constraints::impact_impulsive_torque_rows(
            model,
            state,
            &torque_jump,
            &context.bounds,
            &layout,
        )?);
        let force_jump = dist.force_jumps();
        for (k, spec) in context.contact_specs.iter().enumerate() {
            let cone = constraints::contact_wrench_cone_rows(spec)?;
            let rot = world_to_local(&context.contact_normals[k]);
            blocks.push(constraints::impact_cwc_rows(
                &cone,
                &force_jump,
                k,
                &measurements.contact_forces[k],
                &rot,
                state,
                &layout,
                format!("impact_cwc_{k}"),
            )?);
        }
        if model.has_floating_base() {
            let cmm = model::centroidal_momentum_matrix(model, state)
                .map_err(|e| QpError::BadTask(e.to_string()))?;
            if let Some(upper) = &context.bounds.angular_momentum_upper {
                if let Some(k_jump) = dist.angular_momentum_jump() {
                    blocks.push(constraints::impact_angular_momentum_rows(
                        &cmm.angular(),
                        &k_jump,
                        upper,
                        state,
                        &layout,
                    )?);
                }
            }
            if let Some(polygon) = &context.com_velocity_polygon {
                if let Some(c_jump) = dist.com_velocity_jump() {
                    let vel_map = cmm.linear().rows(0, 2).into_owned() / cmm.total_mass();
                    blocks.push(constraints::impact_com_velocity_rows(
                        polygon, &vel_map, &c_jump, state, &layout,
                    )?);
                }
            }
            if let Some(polygon) = &context.zmp_polygon {
                let w_jump = dist.wrench_jump(&context.wrench_origin);
                let w_meas = measured_wrench(
                    &frames,
                    established,
                    &measurements.contact_forces,
                    &context.wrench_origin,
                );
                blocks.push(constraints::impact_zmp_rows(
                    polygon, &w_jump, &w_meas, state, &layout,
                )?);
            }
        }
    }

    let mode_for_assembly = if distribution.is_some() {
        AssembleMode::ImpactAware
    } else {
        AssembleMode::Baseline
    };
    let problem = assemble(tasks, &blocks, mode_for_assembly, &layout)?;
    let mut slack = None;
    let solution = match solve(&problem)? {
        s if matches!(s.status, SolveStatus::Infeasible(_)) && distribution.is_some() => {
            // Single-step fallback: baseline problem plus the aware rows
            // relaxed by one shared slack variable.
            let (relaxed_solution, s_value) =
                solve_with_slack(tasks, &blocks, &layout, context.config.slack_weight)?;
            slack = Some(s_value);
            log::warn!(
                "impact-aware QP infeasible; slack fallback engaged (s = {s_value:.3e})"
            );
            relaxed_solution
        }
        s => s,
    };

    let qdd = solution.nu.rows(0, model.nv()).into_owned();
    let contact_forces = established
        .iter()
        .enumerate()
        .map(|(k, _)| {
            let weights = solution
                .nu
                .rows(layout.lambda_offset(k), layout.lambda_len(k))
                .into_owned();
            let f = &generators[k] * weights;
            Vector3::new(f[0], f[1], f[2])
        })
        .collect();

    let predictions = distribution.map(|dist| {
        let qd = &state.v;
        let impulse_solution = dist.solve(&qdd, qd).expect("dimensions fixed above");
        let dq = dist.joint_velocity_jump().evaluate(&qdd, qd);
        let post = qd + &qdd * dt + &dq;
        let w_jump_vec = dist.wrench_jump(&context.wrench_origin).evaluate(&qdd, qd);
        StepPredictions {
            impulse_solution,
            joint_velocity_jump: dq,
            impulsive_torque_jump: dist.impulsive_torque_jumps().evaluate(&qdd, qd),
            ee_velocity_jump: dist.ee_velocity_jumps().evaluate(&qdd, qd),
            wrench_jump: Vector6::from_iterator(w_jump_vec.iter().copied()),
            angular_momentum_jump: dist.angular_momentum_jump().map(|j| {
                let v = j.evaluate(&qdd, qd);
                Vector3::new(v[0], v[1], v[2])
            }),
            com_velocity_jump: dist.com_velocity_jump().map(|j| {
                let v = j.evaluate(&qdd, qd);
                nalgebra::Vector2::new(v[0], v[1])
            }),
            post_impact_joint_velocity: post,
            distribution: dist,
        }
    });

    Ok(StepOutput {
        aware_active: predictions.is_some(),
        solution,
        qdd,
        contact_forces,
        slack,
        predictions,
    })
}

impl ControllerContext {
    pub fn layout(&self, model: &RobotModel) -> VariableLayout {
        VariableLayout::new(
            model.nv(),
            self.contact_specs.iter().map(|s| s.generator_count).collect(),
        )
    }

    fn generator_matrices(&self) -> Vec<DMatrix<f64>> {
        self.contact_specs
            .iter()
            .zip(&self.contact_normals)
            .map(|(spec, normal)| spec.generator_matrix(normal))
            .collect()
    }
}

/// Net contact wrench at `origin` from per-contact measured forces.
pub fn measured_wrench(
    frames: &model::Frames,
    established: &[usize],
    forces: &[Vector3<f64>],
    origin: &Vector3<f64>,
) -> Vector6<f64> {
    let mut w = Vector6::zeros();
    for (k, &ee) in established.iter().enumerate() {
        let p = frames.ee_poses[ee].translation.vector;
        let f = forces[k];
        let tau = (p - origin).cross(&f);
        for i in 0..3 {
            w[i] += f[i];
            w[3 + i] += tau[i];
        }
    }
    w
}

fn generalized_contact_force(
    model: &RobotModel,
    state: &RobotState,
    established: &[usize],
    forces: &[Vector3<f64>],
) -> Result<DVector<f64>, QpError> {
    let mut g = DVector::zeros(model.nv());
    for (k, &ee) in established.iter().enumerate() {
        let j = model::point_jacobian(model, state, ee)
            .map_err(|e| QpError::BadTask(e.to_string()))?;
        let f = DVector::from_vec(vec![forces[k].x, forces[k].y, forces[k].z]);
        g += j.transpose() * f;
    }
    Ok(g)
}

/// Rotation taking world vectors into a contact-local frame with z = normal.
fn world_to_local(normal: &Unit<Vector3<f64>>) -> Matrix3<f64> {
    let (t1, t2) = constraints::tangent_basis(normal);
    Matrix3::from_rows(&[
        t1.transpose(),
        t2.transpose(),
        normal.into_inner().transpose(),
    ])
}

/// Solve with the impact-aware inequality rows relaxed by a shared slack s:
/// rows become a ν - s <= b with s >= 0 and cost slack_weight s².
fn solve_with_slack(
    tasks: &[TaskObjective],
    blocks: &[ConstraintBlock],
    layout: &VariableLayout,
    slack_weight: f64,
) -> Result<(QpSolution, f64), QpError> {
    use crate::constraints::{BlockKind, Provenance};
    let dim = layout.dim();
    let wide = dim + 1;

    let widen_task = |t: &TaskObjective| -> TaskObjective {
        let mut e = DMatrix::zeros(t.error_map.nrows(), wide);
        e.view_mut((0, 0), (t.error_map.nrows(), dim))
            .copy_from(&t.error_map);
        TaskObjective {
            label: t.label.clone(),
            weight: t.weight,
            error_map: e,
            target: t.target.clone(),
        }
    };
    let mut wide_tasks: Vec<TaskObjective> = tasks.iter().map(widen_task).collect();
    let mut slack_map = DMatrix::zeros(1, wide);
    slack_map[(0, dim)] = 1.0;
    wide_tasks.push(TaskObjective {
        label: "slack".into(),
        weight: slack_weight,
        error_map: slack_map,
        target: DVector::zeros(1),
    });

    let mut wide_blocks: Vec<ConstraintBlock> = Vec::new();
    for block in blocks {
        let mut a = DMatrix::zeros(block.rows(), wide);
        a.view_mut((0, 0), (block.rows(), dim)).copy_from(&block.a);
        if block.kind == BlockKind::Inequality && block.provenance == Provenance::ImpactAware {
            for r in 0..block.rows() {
                a[(r, dim)] = -1.0;
            }
        }
        wide_blocks.push(ConstraintBlock {
            label: block.label.clone(),
            kind: block.kind,
            a,
            b: block.b.clone(),
            provenance: block.provenance,
        });
    }
    // s >= 0.
    let mut s_row = DMatrix::zeros(1, wide);
    s_row[(0, dim)] = -1.0;
    wide_blocks.push(ConstraintBlock {
        label: "slack_nonnegative".into(),
        kind: BlockKind::Inequality,
        a: s_row,
        b: DVector::zeros(1),
        provenance: Provenance::Baseline,
    });

    let wide_layout = VariableLayout::acceleration_only(wide);
    let problem = assemble(&wide_tasks, &wide_blocks, AssembleMode::ImpactAware, &wide_layout)?;
    let wide_solution = solve(&problem)?;
    let s_value = wide_solution.nu[dim];
    let nu = wide_solution.nu.rows(0, dim).into_owned();
    Ok((
        QpSolution {
            nu,
            objective: wide_solution.objective,
            active_set: wide_solution.active_set,
            kkt: wide_solution.kkt,
            status: wide_solution.status,
        },
        s_value,
    ))
}
