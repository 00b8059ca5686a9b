//! Dense strictly convex QP solver (dual active-set, Goldfarb–Idnani).
//!
//! Solves min ½ νᵀH ν + cᵀν subject to equality and inequality rows. The
//! method starts from the unconstrained minimizer and activates violated
//! constraints one at a time, so no feasibility phase is needed and
//! infeasibility surfaces as an unbounded dual ray, which doubles as the
//! certificate. Deterministic: ties break on the lowest row index.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error("Hessian is not positive definite")]
    NotPositiveDefinite,
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    /// No point satisfies the constraints; carries the certificate.
    Infeasible(InfeasibilityCertificate),
    IterationLimit,
}

/// The dual ray proving infeasibility: the blocking constraint plus the
/// active rows whose multipliers grow without bound along the ray.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InfeasibilityCertificate {
    /// Row (into the stacked constraint list) that could not be satisfied.
    pub blocking_row: usize,
    /// Active rows forming the separating multiplier direction.
    pub active_rows: Vec<usize>,
}

#[derive(Debug, Clone, Default)]
pub struct KktResiduals {
    /// ‖H ν + c + Aᵀλ‖∞.
    pub stationarity: f64,
    /// max(0, A_in ν - b_in) and |A_eq ν - b_eq| combined.
    pub primal: f64,
    /// Most negative inequality multiplier (0 when clean).
    pub dual: f64,
    /// max |λ_i (a_iᵀ ν - b_i)|.
    pub complementarity: f64,
}

#[derive(Debug, Clone)]
pub struct RawSolution {
    pub x: DVector<f64>,
    pub status: SolveStatus,
    /// Active inequality rows (indices into the stacked inequality matrix).
    pub active_inequalities: Vec<usize>,
    /// Multipliers for every inequality row (zero when inactive).
    #[allow(dead_code)]
    pub inequality_multipliers: DVector<f64>,
    /// Multipliers for the equality rows.
    #[allow(dead_code)]
    pub equality_multipliers: DVector<f64>,
    pub kkt: KktResiduals,
    #[allow(dead_code)]
    pub iterations: usize,
}

struct ActiveEntry {
    /// Stacked row id: equalities first, then inequalities.
    row: usize,
    is_equality: bool,
    /// Sign flip applied when activating an equality from above.
    flip: f64,
    normal: DVector<f64>,
    multiplier: f64,
}

/// Solve the QP. `a_eq`/`a_in` may have zero rows.
pub fn solve_qp(
    h: &DMatrix<f64>,
    c: &DVector<f64>,
    a_eq: &DMatrix<f64>,
    b_eq: &DVector<f64>,
    a_in: &DMatrix<f64>,
    b_in: &DVector<f64>,
) -> Result<RawSolution, SolveError> {
    let n = h.nrows();
    check_dims(n, h, c, a_eq, b_eq, a_in, b_in)?;
    let chol = Cholesky::new(h.clone()).ok_or(SolveError::NotPositiveDefinite)?;

    let n_eq = a_eq.nrows();
    let n_in = a_in.nrows();
    let scale = 1.0
        + b_eq.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
        + b_in.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    let tol = 1e-10 * scale;

    let mut x = chol.solve(&(-c));
    let mut active: Vec<ActiveEntry> = Vec::new();
    let mut iterations = 0;
    let max_iterations = 50 * (n + n_eq + n_in) + 200;

    // In GI convention every constraint reads nᵀx >= d; inequality row
    // aᵀx <= b maps to (-a)ᵀx >= -b.
    let ineq_normal = |row: usize| -> DVector<f64> { -a_in.row(row).transpose() };
    // An equality activates as flip·aᵀx >= flip·b with flip chosen so the
    // current point sits below the bound.
    let eq_normal = |row: usize, flip: f64| -> DVector<f64> { flip * a_eq.row(row).transpose() };

    // Queue: all equalities in order, then repeatedly the most violated
    // inequality.
    let mut pending_eq: std::collections::VecDeque<usize> = (0..n_eq).collect();

    'outer: loop {
        iterations += 1;
        if iterations > max_iterations {
            return Ok(finish(
                x,
                SolveStatus::IterationLimit,
                iterations,
                active,
                n_eq,
                n_in,
                h,
                c,
                a_eq,
                b_eq,
                a_in,
                b_in,
            ));
        }

        // Pick the next constraint to enforce.
        let (row, is_eq, flip, normal, dval) = if let Some(row) = pending_eq.pop_front() {
            let s = a_eq.row(row).transpose().dot(&x) - b_eq[row];
            if s.abs() <= tol {
                continue; // already satisfied; enforce only if it drifts later
            }
            let flip = if s > 0.0 { -1.0 } else { 1.0 };
            let d = flip * b_eq[row];
            (row, true, flip, eq_normal(row, flip), d)
        } else {
            let mut worst = (usize::MAX, 0.0f64);
            for r in 0..n_in {
                let s = a_in.row(r).transpose().dot(&x) - b_in[r];
                if s > worst.1 + 1e-16 && s > tol {
                    worst = (r, s);
                }
            }
            if worst.0 == usize::MAX {
                // Re-check equalities for drift introduced by later steps.
                let mut fixed = true;
                for row in 0..n_eq {
                    if active.iter().any(|a| a.is_equality && a.row == row) {
                        continue;
                    }
                    let s = a_eq.row(row).transpose().dot(&x) - b_eq[row];
                    if s.abs() > tol {
                        pending_eq.push_back(row);
                        fixed = false;
                    }
                }
                if fixed {
                    return Ok(finish(
                        x,
                        SolveStatus::Optimal,
                        iterations,
                        active,
                        n_eq,
                        n_in,
                        h,
                        c,
                        a_eq,
                        b_eq,
                        a_in,
                        b_in,
                    ));
                }
                continue;
            }
            let row = worst.0;
            (row, false, 1.0, ineq_normal(row), -b_in[row])
        };

        // Enforce constraint (row): possibly dropping blockers on the way.
        let mut multiplier = 0.0f64;
        loop {
            iterations += 1;
            if iterations > max_iterations {
                return Ok(finish(
                    x,
                    SolveStatus::IterationLimit,
                    iterations,
                    active,
                    n_eq,
                    n_in,
                    h,
                    c,
                    a_eq,
                    b_eq,
                    a_in,
                    b_in,
                ));
            }
            let s = normal.dot(&x) - dval;
            if s >= -tol {
                // Satisfied; register as active if it carries weight.
                if multiplier > 0.0 || is_eq {
                    active.push(ActiveEntry {
                        row,
                        is_equality: is_eq,
                        flip,
                        normal: normal.clone(),
                        multiplier,
                    });
                }
                continue 'outer;
            }

            // Step directions with the current active set.
            let h_inv_n = chol.solve(&normal);
            let (z, r_dual) = if active.is_empty() {
                (h_inv_n.clone(), DVector::zeros(0))
            } else {
                let q = active.len();
                let mut n_mat = DMatrix::zeros(n, q);
                for (k, entry) in active.iter().enumerate() {
                    n_mat.set_column(k, &entry.normal);
                }
                let h_inv_nmat = chol.solve(&n_mat);
                let gram = n_mat.transpose() * &h_inv_nmat;
                let rhs = n_mat.transpose() * &h_inv_n;
                let r = gram
                    .clone()
                    .lu()
                    .solve(&rhs)
                    .unwrap_or_else(|| DVector::zeros(q));
                let z = &h_inv_n - &h_inv_nmat * &r;
                (z, r)
            };

            let z_norm = z.norm();
            let step_to_feasible = if z_norm > 1e-12 * (1.0 + h_inv_n.norm()) {
                let denom = normal.dot(&z);
                if denom > 0.0 {
                    Some(-s / denom)
                } else {
                    None
                }
            } else {
                None
            };

            // Dual blocking step: smallest u_k / r_k over active inequalities
            // with positive dual direction.
            let mut blocking: Option<(usize, f64)> = None;
            for (k, entry) in active.iter().enumerate() {
                if entry.is_equality || k >= r_dual.len() {
                    continue;
                }
                let rk = r_dual[k];
                if rk > 1e-12 {
                    let t = entry.multiplier / rk;
                    if blocking.is_none_or(|(_, tb)| t < tb - 1e-15) {
                        blocking = Some((k, t));
                    }
                }
            }

            match (step_to_feasible, blocking) {
                (None, None) => {
                    let cert = InfeasibilityCertificate {
                        blocking_row: stacked_row(row, is_eq, n_eq),
                        active_rows: active
                            .iter()
                            .map(|e| stacked_row(e.row, e.is_equality, n_eq))
                            .collect(),
                    };
                    return Ok(finish(
                        x,
                        SolveStatus::Infeasible(cert),
                        iterations,
                        active,
                        n_eq,
                        n_in,
                        h,
                        c,
                        a_eq,
                        b_eq,
                        a_in,
                        b_in,
                    ));
                }
                (t2, t1) => {
                    let (take_full, t) = match (t2, t1) {
                        (Some(t2), Some((_, t1))) if t1 < t2 => (false, t1),
                        (Some(t2), _) => (true, t2),
                        (None, Some((_, t1))) => (false, t1),
                        (None, None) => unreachable!(),
                    };
                    // Dual update.
                    for (k, entry) in active.iter_mut().enumerate() {
                        if k < r_dual.len() {
                            entry.multiplier -= t * r_dual[k];
                        }
                    }
                    multiplier += t;
                    if z_norm > 0.0 {
                        x += t * &z;
                    }
                    if take_full {
                        active.push(ActiveEntry {
                            row,
                            is_equality: is_eq,
                            flip,
                            normal: normal.clone(),
                            multiplier,
                        });
                        continue 'outer;
                    } else {
                        let drop_k = t1.expect("partial step has a blocker").0;
                        active.remove(drop_k);
                        // Re-process the same target constraint.
                    }
                }
            }
        }
    }
}

fn stacked_row(row: usize, is_eq: bool, n_eq: usize) -> usize {
    if is_eq {
        row
    } else {
        n_eq + row
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    x: DVector<f64>,
    status: SolveStatus,
    iterations: usize,
    active: Vec<ActiveEntry>,
    n_eq: usize,
    n_in: usize,
    h: &DMatrix<f64>,
    c: &DVector<f64>,
    a_eq: &DMatrix<f64>,
    b_eq: &DVector<f64>,
    a_in: &DMatrix<f64>,
    b_in: &DVector<f64>,
) -> RawSolution {
    let mut lambda_in = DVector::zeros(n_in);
    let mut mu_eq = DVector::zeros(n_eq);
    let mut active_rows = Vec::new();
    for entry in &active {
        if entry.is_equality {
            // Internal normal was flip·a; ∇L picks up -u flip a.
            mu_eq[entry.row] -= entry.flip * entry.multiplier;
        } else {
            lambda_in[entry.row] += entry.multiplier;
            active_rows.push(entry.row);
        }
    }
    active_rows.sort_unstable();

    let mut grad = h * &x + c;
    if n_eq > 0 {
        grad += a_eq.transpose() * &mu_eq;
    }
    if n_in > 0 {
        grad += a_in.transpose() * &lambda_in;
    }
    let stationarity = grad.amax();
    let mut primal = 0.0f64;
    for r in 0..n_eq {
        primal = primal.max((a_eq.row(r).transpose().dot(&x) - b_eq[r]).abs());
    }
    let mut complementarity = 0.0f64;
    let mut dual = 0.0f64;
    for r in 0..n_in {
        let slack = a_in.row(r).transpose().dot(&x) - b_in[r];
        primal = primal.max(slack);
        complementarity = complementarity.max((lambda_in[r] * slack).abs());
        dual = dual.min(lambda_in[r]);
    }
    RawSolution {
        x,
        status,
        active_inequalities: active_rows,
        inequality_multipliers: lambda_in,
        equality_multipliers: mu_eq,
        kkt: KktResiduals {
            stationarity,
            primal: primal.max(0.0),
            dual,
            complementarity,
        },
        iterations,
    }
}

fn check_dims(
    n: usize,
    h: &DMatrix<f64>,
    c: &DVector<f64>,
    a_eq: &DMatrix<f64>,
    b_eq: &DVector<f64>,
    a_in: &DMatrix<f64>,
    b_in: &DVector<f64>,
) -> Result<(), SolveError> {
    if h.ncols() != n {
        return Err(SolveError::DimensionMismatch {
            what: "H",
            expected: n,
            got: h.ncols(),
        });
    }
    if c.len() != n {
        return Err(SolveError::DimensionMismatch {
            what: "c",
            expected: n,
            got: c.len(),
        });
    }
    for (what, mat, vec) in [("A_eq", a_eq, b_eq), ("A_in", a_in, b_in)] {
        if mat.nrows() != vec.len() {
            return Err(SolveError::DimensionMismatch {
                what,
                expected: mat.nrows(),
                got: vec.len(),
            });
        }
        if mat.nrows() > 0 && mat.ncols() != n {
            return Err(SolveError::DimensionMismatch {
                what,
                expected: n,
                got: mat.ncols(),
            });
        }
    }
    let _ = Dyn(n);
    Ok(())
}
