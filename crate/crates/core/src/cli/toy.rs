//! The planar two-joint illustration, solved in both modes.

use crate::constraints::{
    impact_joint_velocity_rows, joint_kinematic_rows, BoundsSpec, ConstraintBlock, VariableLayout,
};
use crate::impact::{build_distribution, ImpactConfig, ImpulseDistribution};
use crate::model::{samples, EndEffectorPartition, RobotState};
use crate::qp::{
    assemble, end_effector_acceleration_task, solve, AssembleMode, QpError, TaskObjective,
};
use nalgebra::{DVector, Vector2, Vector3};

/// Everything the toy command reports.
#[derive(Debug, Clone)]
pub struct ToyReport {
    pub pre_impact_velocity: Vector2<f64>,
    pub unaware_acceleration: Vector2<f64>,
    pub aware_acceleration: Vector2<f64>,
    pub unaware_post_impact_velocity: Vector2<f64>,
    pub aware_post_impact_velocity: Vector2<f64>,
    /// Vertices of the baseline feasible box over q̈, CCW.
    pub baseline_vertices: Vec<(f64, f64)>,
    /// Vertices of the shrunken impact-aware polytope over q̈, CCW.
    pub aware_vertices: Vec<(f64, f64)>,
}

struct ToySetup {
    state: RobotState,
    layout: VariableLayout,
    tasks: Vec<TaskObjective>,
    blocks: Vec<ConstraintBlock>,
    distribution: ImpulseDistribution,
}

fn setup() -> Result<ToySetup, QpError> {
    let model = samples::planar_two_link(0.5, 0.5);
    let state = RobotState::new(
        DVector::from_vec(vec![0.0, 0.2 * std::f64::consts::PI]),
        DVector::from_vec(vec![0.6, -0.6]),
    );
    let layout = VariableLayout::acceleration_only(2);
    let bounds = BoundsSpec::velocity_symmetric(DVector::from_vec(vec![0.9, 0.6]));
    let partition = EndEffectorPartition::from_model(&model);
    let config = ImpactConfig::new(0.02, Vector3::y(), 0.005, 0.005)
        .map_err(|e| QpError::BadTask(e.to_string()))?;
    let distribution = build_distribution(&model, &state, &partition, &[config])
        .map_err(|e| QpError::BadTask(e.to_string()))?;

    let mut blocks = vec![joint_kinematic_rows(&model, &state, &bounds, 0.005, &layout)?];
    blocks.push(impact_joint_velocity_rows(
        &model,
        &state,
        &distribution.joint_velocity_jump(),
        &bounds,
        &layout,
    )?);
    let tasks = vec![end_effector_acceleration_task(
        &model,
        &state,
        0,
        &Vector3::new(0.0, 120.0, 0.0),
        1.0,
        &layout,
    )?];
    Ok(ToySetup {
        state,
        layout,
        tasks,
        blocks,
        distribution,
    })
}

/// Solve the toy problem in both modes and enumerate the feasible polytopes.
pub fn toy_two_dof() -> Result<ToyReport, QpError> {
    let toy = setup()?;
    let solve_mode = |mode: AssembleMode| -> Result<DVector<f64>, QpError> {
        let problem = assemble(&toy.tasks, &toy.blocks, mode, &toy.layout)?;
        let solution = solve(&problem)?;
        if !solution.is_optimal() {
            return Err(QpError::BadTask(format!(
                "toy problem unexpectedly returned {:?}",
                solution.status
            )));
        }
        Ok(solution.nu)
    };
    let unaware = solve_mode(AssembleMode::Baseline)?;
    let aware = solve_mode(AssembleMode::ImpactAware)?;

    let post = |qdd: &DVector<f64>| {
        let jump = toy.distribution.joint_velocity_jump().evaluate(qdd, &toy.state.v);
        let v = &toy.state.v + qdd * 0.005 + jump;
        Vector2::new(v[0], v[1])
    };

    let stack_rows = |mode: AssembleMode| -> (Vec<[f64; 2]>, Vec<f64>) {
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        for block in &toy.blocks {
            if mode == AssembleMode::Baseline
                && block.provenance == crate::constraints::Provenance::ImpactAware
            {
                continue;
            }
            for r in 0..block.rows() {
                rows.push([block.a[(r, 0)], block.a[(r, 1)]]);
                rhs.push(block.b[r]);
            }
        }
        (rows, rhs)
    };
    let (rows_b, rhs_b) = stack_rows(AssembleMode::Baseline);
    let (rows_a, rhs_a) = stack_rows(AssembleMode::ImpactAware);

    Ok(ToyReport {
        pre_impact_velocity: Vector2::new(toy.state.v[0], toy.state.v[1]),
        unaware_acceleration: Vector2::new(unaware[0], unaware[1]),
        aware_acceleration: Vector2::new(aware[0], aware[1]),
        unaware_post_impact_velocity: post(&unaware),
        aware_post_impact_velocity: post(&aware),
        baseline_vertices: polytope_vertices_2d(&rows_b, &rhs_b),
        aware_vertices: polytope_vertices_2d(&rows_a, &rhs_a),
    })
}

/// Vertices of {x : A x <= b} in the plane: intersect every row pair, keep
/// feasible points, order CCW around the centroid.
pub fn polytope_vertices_2d(rows: &[[f64; 2]], rhs: &[f64]) -> Vec<(f64, f64)> {
    let mut points: Vec<(f64, f64)> = Vec::new();
    for i in 0..rows.len() {
        for j in (i + 1)..rows.len() {
            let det = rows[i][0] * rows[j][1] - rows[i][1] * rows[j][0];
            if det.abs() < 1e-12 {
                continue;
            }
            let x = (rhs[i] * rows[j][1] - rows[i][1] * rhs[j]) / det;
            let y = (rows[i][0] * rhs[j] - rhs[i] * rows[j][0]) / det;
            let feasible = rows
                .iter()
                .zip(rhs)
                .all(|(a, &b)| a[0] * x + a[1] * y <= b + 1e-7 * (1.0 + b.abs()));
            if feasible {
                points.push((x, y));
            }
        }
    }
    points.sort_by(|a, b| a.partial_cmp(b).unwrap());
    points.dedup_by(|a, b| (a.0 - b.0).abs() < 1e-6 && (a.1 - b.1).abs() < 1e-6);
    if points.len() > 2 {
        let cx = points.iter().map(|p| p.0).sum::<f64>() / points.len() as f64;
        let cy = points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64;
        points.sort_by(|a, b| {
            let ta = (a.1 - cy).atan2(a.0 - cx);
            let tb = (b.1 - cy).atan2(b.0 - cx);
            ta.partial_cmp(&tb).unwrap()
        });
    }
    points
}
