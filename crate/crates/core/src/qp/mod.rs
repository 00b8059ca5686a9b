//! Weighted-task QP assembly and solving.
//!
//! The controller scalarizes task errors e_i(ν) = E_i ν - g_i into
//! Σ w_i ‖e_i(ν)‖² and minimizes subject to the stacked constraint blocks.
//! `assemble` builds the baseline problem or appends the impact-aware block
//! families; `solve` runs the dense active-set solver.

mod controller;
mod solver;

pub use controller::{
    controller_step, ControlMode, ControllerConfig, ControllerContext, Measurements,
    StepOutput, StepPredictions,
};
pub use solver::{InfeasibilityCertificate, KktResiduals, SolveError, SolveStatus};

use crate::constraints::{BlockKind, ConstraintBlock, Provenance, VariableLayout};
use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QpError {
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error(transparent)]
    Constraint(#[from] crate::constraints::ConstraintError),
    #[error("task {0} has non-finite entries or a non-positive weight")]
    BadTask(String),
    #[error("task/block dimension {got} does not match the variable layout {expected}")]
    LayoutMismatch { expected: usize, got: usize },
}

/// One weighted least-squares task: w ‖E ν - g‖².
#[derive(Debug, Clone)]
pub struct TaskObjective {
    pub label: String,
    pub weight: f64,
    pub error_map: DMatrix<f64>,
    pub target: DVector<f64>,
}

impl TaskObjective {
    pub fn new(
        label: impl Into<String>,
        weight: f64,
        error_map: DMatrix<f64>,
        target: DVector<f64>,
    ) -> Result<Self, QpError> {
        let label = label.into();
        if !(weight > 0.0)
            || error_map.iter().any(|x| !x.is_finite())
            || target.iter().any(|x| !x.is_finite())
            || error_map.nrows() != target.len()
        {
            return Err(QpError::BadTask(label));
        }
        Ok(Self {
            label,
            weight,
            error_map,
            target,
        })
    }

    /// Task error at ν.
    pub fn error(&self, nu: &DVector<f64>) -> DVector<f64> {
        &self.error_map * nu - &self.target
    }
}

/// Tracking task for an end-effector frame's linear acceleration:
/// minimize ‖J q̈ + J̇ q̇ - ẍ_des‖², i.e. E = [J | 0], g = ẍ_des - J̇ q̇.
pub fn end_effector_acceleration_task(
    model: &crate::model::RobotModel,
    state: &crate::model::RobotState,
    frame: usize,
    desired_acceleration: &nalgebra::Vector3<f64>,
    weight: f64,
    layout: &VariableLayout,
) -> Result<TaskObjective, QpError> {
    let j = crate::model::point_jacobian(model, state, frame)
        .map_err(|e| QpError::BadTask(e.to_string()))?;
    let jdot = crate::model::jacobian_derivative(model, state, frame)
        .map_err(|e| QpError::BadTask(e.to_string()))?;
    let mut e = DMatrix::zeros(3, layout.dim());
    e.view_mut((0, 0), (3, layout.nv())).copy_from(&j);
    let drift = jdot * &state.v;
    let g = DVector::from_iterator(3, (0..3).map(|k| desired_acceleration[k] - drift[k]));
    TaskObjective::new(format!("ee_accel_{frame}"), weight, e, g)
}

/// Joint-space acceleration tracking over the actuated span (posture/damping).
pub fn joint_acceleration_task(
    model: &crate::model::RobotModel,
    desired: &DVector<f64>,
    weight: f64,
    layout: &VariableLayout,
) -> Result<TaskObjective, QpError> {
    let n = model.n_actuated();
    if desired.len() != n {
        return Err(QpError::LayoutMismatch {
            expected: n,
            got: desired.len(),
        });
    }
    let mut e = DMatrix::zeros(n, layout.dim());
    for i in 0..n {
        e[(i, model.actuated_offset() + i)] = 1.0;
    }
    TaskObjective::new("joint_accel", weight, e, desired.clone())
}

/// Which constraint families enter the problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssembleMode {
    Baseline,
    ImpactAware,
}

/// Assembled strictly convex QP over ν.
#[derive(Debug, Clone)]
pub struct QpProblem {
    pub h: DMatrix<f64>,
    pub c: DVector<f64>,
    pub equalities: Vec<ConstraintBlock>,
    pub inequalities: Vec<ConstraintBlock>,
    pub layout: VariableLayout,
    /// Constant part of Σ w ‖E ν - g‖², for objective reporting.
    constant: f64,
    /// Effective Tikhonov weight (scale-relative).
    epsilon: f64,
}

impl QpProblem {
    /// The scale-relative Tikhonov weight actually applied to H.
    pub fn regularization(&self) -> f64 {
        self.epsilon
    }
}

/// Relative Tikhonov regularization: ε scales with the largest task Hessian
/// diagonal so weight rescaling leaves the minimizer unchanged.
pub const RELATIVE_REGULARIZATION: f64 = 1e-9;

/// Build the QP: H = 2 (Σ w EᵀE + εI), c = -2 Σ w Eᵀ g.
///
/// Baseline mode keeps only baseline-provenance blocks; impact-aware mode
/// appends the impact-aware block families as well.
pub fn assemble(
    tasks: &[TaskObjective],
    blocks: &[ConstraintBlock],
    mode: AssembleMode,
    layout: &VariableLayout,
) -> Result<QpProblem, QpError> {
    let dim = layout.dim();
    let mut h_task = DMatrix::zeros(dim, dim);
    let mut c = DVector::zeros(dim);
    let mut constant = 0.0;
    for task in tasks {
        if task.error_map.ncols() != dim {
            return Err(QpError::LayoutMismatch {
                expected: dim,
                got: task.error_map.ncols(),
            });
        }
        h_task += task.weight * task.error_map.transpose() * &task.error_map;
        c -= 2.0 * task.weight * task.error_map.transpose() * &task.target;
        constant += task.weight * task.target.dot(&task.target);
    }
    let scale = (0..dim).fold(0.0f64, |m, i| m.max(h_task[(i, i)])).max(1.0);
    let epsilon = RELATIVE_REGULARIZATION * scale;
    let mut h = 2.0 * h_task;
    for i in 0..dim {
        h[(i, i)] += 2.0 * epsilon;
    }

    let mut equalities = Vec::new();
    let mut inequalities = Vec::new();
    for block in blocks {
        if block.provenance == Provenance::ImpactAware && mode == AssembleMode::Baseline {
            continue;
        }
        if block.is_empty() {
            continue;
        }
        if block.a.ncols() != dim {
            return Err(QpError::LayoutMismatch {
                expected: dim,
                got: block.a.ncols(),
            });
        }
        match block.kind {
            BlockKind::Equality => equalities.push(block.clone()),
            BlockKind::Inequality => inequalities.push(block.clone()),
        }
    }
    Ok(QpProblem {
        h,
        c,
        equalities,
        inequalities,
        layout: layout.clone(),
        constant,
        epsilon,
    })
}

/// Solver outcome: optimizer, value of Σ w ‖E ν - g‖² + ε‖ν‖², active-set
/// labels, KKT residuals and status.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub nu: DVector<f64>,
    pub objective: f64,
    pub active_set: Vec<String>,
    pub kkt: KktResiduals,
    pub status: SolveStatus,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }
}

/// Stack the blocks and run the active-set solver.
///
/// Redundant equality rows (such as several contact points on one rigid
/// body) are reduced to an independent consistent subset first; inconsistent
/// equalities surface as infeasibility.
pub fn solve(problem: &QpProblem) -> Result<QpSolution, QpError> {
    let dim = problem.layout.dim();
    let (a_eq_full, b_eq_full, eq_labels) = stack(&problem.equalities, dim);
    let (a_in, b_in, in_labels) = stack(&problem.inequalities, dim);

    let (a_eq, b_eq) = if a_eq_full.nrows() > 0 {
        let svd = a_eq_full.clone().svd(true, true);
        let sigma_max = svd.singular_values.iter().copied().fold(0.0f64, f64::max);
        let tol = 1e-12 * sigma_max.max(1.0);
        let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
        let u = svd.u.as_ref().expect("svd with u");
        let u1 = u.columns(0, rank).into_owned();
        let projected = &u1 * (u1.transpose() * &b_eq_full);
        let residual = (&b_eq_full - &projected).norm();
        if residual > 1e-9 * (1.0 + b_eq_full.norm()) {
            let worst = (0..b_eq_full.len())
                .max_by(|&i, &j| {
                    (b_eq_full[i] - projected[i])
                        .abs()
                        .partial_cmp(&(b_eq_full[j] - projected[j]).abs())
                        .unwrap()
                })
                .unwrap_or(0);
            return Ok(QpSolution {
                nu: DVector::zeros(dim),
                objective: f64::INFINITY,
                active_set: vec![eq_labels.get(worst).cloned().unwrap_or_default()],
                kkt: KktResiduals::default(),
                status: SolveStatus::Infeasible(InfeasibilityCertificate {
                    blocking_row: worst,
                    active_rows: Vec::new(),
                }),
            });
        }
        (u1.transpose() * &a_eq_full, u1.transpose() * &b_eq_full)
    } else {
        (a_eq_full.clone(), b_eq_full.clone())
    };
    let raw = solver::solve_qp(&problem.h, &problem.c, &a_eq, &b_eq, &a_in, &b_in)?;

    let mut active_set: Vec<String> = problem
        .equalities
        .iter()
        .map(|b| format!("{}(eq)", b.label))
        .collect();
    for &row in &raw.active_inequalities {
        active_set.push(in_labels[row].clone());
    }
    let mut kkt = raw.kkt.clone();
    if a_eq_full.nrows() > 0 {
        let resid = (&a_eq_full * &raw.x - &b_eq_full).amax();
        kkt.primal = kkt.primal.max(resid);
    }
    let objective = 0.5 * (raw.x.transpose() * &problem.h * &raw.x)[0]
        + problem.c.dot(&raw.x)
        + problem.constant;
    let _ = eq_labels;
    Ok(QpSolution {
        nu: raw.x,
        objective,
        active_set,
        kkt,
        status: raw.status,
    })
}

fn stack(
    blocks: &[ConstraintBlock],
    dim: usize,
) -> (DMatrix<f64>, DVector<f64>, Vec<String>) {
    let rows: usize = blocks.iter().map(|b| b.rows()).sum();
    let mut a = DMatrix::zeros(rows, dim);
    let mut b = DVector::zeros(rows);
    let mut labels = Vec::with_capacity(rows);
    let mut r = 0;
    for block in blocks {
        a.rows_mut(r, block.rows()).copy_from(&block.a);
        b.rows_mut(r, block.rows()).copy_from(&block.b);
        for i in 0..block.rows() {
            labels.push(format!("{}[{}]", block.label, i));
        }
        r += block.rows();
    }
    (a, b, labels)
}
