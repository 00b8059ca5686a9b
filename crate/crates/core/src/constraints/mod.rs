//! Constraint compilation over the controller decision variable
//! ν = { q̈, contact-force generator weights }.
//!
//! Builders return [`ConstraintBlock`]s: stacked half-plane or equality rows
//! with a label and a provenance tag, ready for the QP assembler. Baseline
//! rows encode the continuous-dynamics limits; impact-aware rows bound the
//! predicted post-impact state one control step ahead.

mod baseline;
mod impact_aware;

pub use baseline::{
    angular_momentum_rows, com_velocity_rows, contact_acceleration_rows,
    contact_wrench_cone_rows, cwc_lambda_rows, floating_base_dynamics_rows, joint_kinematic_rows,
    joint_torque_rows, lambda_nonnegativity_rows, zmp_lambda_rows, zmp_rows, WrenchCone,
};
pub use impact_aware::{
    impact_angular_momentum_rows, impact_com_velocity_rows, impact_cwc_rows,
    impact_impulsive_torque_rows, impact_joint_velocity_rows, impact_template_rows,
    impact_zmp_rows,
};

use nalgebra::{DMatrix, DVector, Matrix3, Unit, Vector3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConstraintError {
    #[error("bounds invalid: {0}")]
    BadBounds(String),
    #[error("contact spec invalid: {0}")]
    BadContact(String),
    #[error("polygon invalid: {0}")]
    BadPolygon(String),
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("constraint block {0} contains non-finite entries")]
    NonFinite(String),
}

/// Column layout of the decision variable ν = [q̈ ; λ_0 ; λ_1 ; ...].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariableLayout {
    nv: usize,
    /// Generator-weight count per established contact, in partition order.
    generators: Vec<usize>,
}

impl VariableLayout {
    pub fn new(nv: usize, generators: Vec<usize>) -> Self {
        Self { nv, generators }
    }
    pub fn acceleration_only(nv: usize) -> Self {
        Self {
            nv,
            generators: Vec::new(),
        }
    }
    pub fn nv(&self) -> usize {
        self.nv
    }
    pub fn n_contacts(&self) -> usize {
        self.generators.len()
    }
    pub fn n_lambda(&self) -> usize {
        self.generators.iter().sum()
    }
    pub fn dim(&self) -> usize {
        self.nv + self.n_lambda()
    }
    /// Absolute column of contact `k`'s first generator weight.
    pub fn lambda_offset(&self, k: usize) -> usize {
        self.nv + self.generators[..k].iter().sum::<usize>()
    }
    pub fn lambda_len(&self, k: usize) -> usize {
        self.generators[k]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Equality,
    Inequality,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Baseline,
    ImpactAware,
}

/// Half-plane (`A ν <= b`) or equality (`A ν = b`) rows over ν.
#[derive(Debug, Clone)]
pub struct ConstraintBlock {
    pub label: String,
    pub kind: BlockKind,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub provenance: Provenance,
}

impl ConstraintBlock {
    pub fn new(
        label: impl Into<String>,
        kind: BlockKind,
        provenance: Provenance,
        a: DMatrix<f64>,
        b: DVector<f64>,
    ) -> Result<Self, ConstraintError> {
        let label = label.into();
        if a.nrows() != b.len() {
            return Err(ConstraintError::DimensionMismatch {
                what: "constraint rows",
                expected: a.nrows(),
                got: b.len(),
            });
        }
        if a.iter().any(|x| !x.is_finite()) || b.iter().any(|x| !x.is_finite()) {
            return Err(ConstraintError::NonFinite(label));
        }
        Ok(Self {
            label,
            kind,
            a,
            b,
            provenance,
        })
    }

    /// Build a block whose rows only touch the q̈ span, zero-padded over λ.
    pub fn from_acceleration_rows(
        label: impl Into<String>,
        kind: BlockKind,
        provenance: Provenance,
        a_qdd: DMatrix<f64>,
        b: DVector<f64>,
        layout: &VariableLayout,
    ) -> Result<Self, ConstraintError> {
        let mut a = DMatrix::zeros(a_qdd.nrows(), layout.dim());
        a.view_mut((0, 0), (a_qdd.nrows(), layout.nv()))
            .copy_from(&a_qdd);
        Self::new(label, kind, provenance, a, b)
    }

    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.a.nrows() == 0
    }

    /// Worst signed violation of the block at ν (positive = violated).
    pub fn violation(&self, nu: &DVector<f64>) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let r = &self.a * nu - &self.b;
        match self.kind {
            BlockKind::Inequality => r.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x)),
            BlockKind::Equality => r.iter().fold(0.0f64, |m, &x| m.max(x.abs())),
        }
    }

    /// Debug CSV: label, kind, row index, A entries, b.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for r in 0..self.rows() {
            out.push_str(&self.label);
            out.push(',');
            out.push_str(match self.kind {
                BlockKind::Equality => "eq",
                BlockKind::Inequality => "ineq",
            });
            out.push_str(&format!(",{r}"));
            for c in 0..self.a.ncols() {
                out.push_str(&format!(",{}", self.a[(r, c)]));
            }
            out.push_str(&format!(",{}\n", self.b[r]));
        }
        out
    }
}

/// Joint-space and centroidal bounds over the actuated joints.
#[derive(Debug, Clone)]
pub struct BoundsSpec {
    pub q_lower: DVector<f64>,
    pub q_upper: DVector<f64>,
    pub qd_lower: DVector<f64>,
    pub qd_upper: DVector<f64>,
    pub tau_lower: DVector<f64>,
    pub tau_upper: DVector<f64>,
    /// Impulsive torque bounds γ; typically a fraction of the stall bounds.
    pub gamma_lower: DVector<f64>,
    pub gamma_upper: DVector<f64>,
    /// Upper bound on the centroidal angular momentum, one per axis.
    pub angular_momentum_upper: Option<Vector3<f64>>,
}

impl BoundsSpec {
    /// All bounds infinite for `n` actuated joints.
    pub fn unbounded(n: usize) -> Self {
        let inf = DVector::repeat(n, f64::INFINITY);
        Self {
            q_lower: -inf.clone(),
            q_upper: inf.clone(),
            qd_lower: -inf.clone(),
            qd_upper: inf.clone(),
            tau_lower: -inf.clone(),
            tau_upper: inf.clone(),
            gamma_lower: -inf.clone(),
            gamma_upper: inf,
            angular_momentum_upper: None,
        }
    }

    /// Symmetric velocity bounds only (the planar-example configuration).
    pub fn velocity_symmetric(qd_upper: DVector<f64>) -> Self {
        let mut b = Self::unbounded(qd_upper.len());
        b.qd_lower = -qd_upper.clone();
        b.qd_upper = qd_upper;
        b
    }

    pub fn n(&self) -> usize {
        self.q_lower.len()
    }

    pub fn validate(&self, n_actuated: usize) -> Result<(), ConstraintError> {
        let pairs = [
            ("q", &self.q_lower, &self.q_upper),
            ("qd", &self.qd_lower, &self.qd_upper),
            ("tau", &self.tau_lower, &self.tau_upper),
            ("gamma", &self.gamma_lower, &self.gamma_upper),
        ];
        for (name, lo, hi) in pairs {
            if lo.len() != n_actuated || hi.len() != n_actuated {
                return Err(ConstraintError::DimensionMismatch {
                    what: "bounds",
                    expected: n_actuated,
                    got: lo.len(),
                });
            }
            if lo.iter().zip(hi.iter()).any(|(l, h)| l > h) {
                return Err(ConstraintError::BadBounds(format!(
                    "{name} lower bound exceeds upper bound"
                )));
            }
        }
        Ok(())
    }

    /// Scale the impulsive-torque bounds from the stall-torque bounds.
    pub fn with_impulsive_fraction(mut self, factor: f64) -> Self {
        self.gamma_lower = factor * &self.tau_lower;
        self.gamma_upper = factor * &self.tau_upper;
        self
    }
}

/// Friction and center-of-pressure description of one surface contact.
#[derive(Debug, Clone)]
pub struct ContactSpec {
    /// Coulomb friction coefficient, > 0.
    pub friction: f64,
    /// CoP rectangle half-extents (X, Y) in m.
    pub cop_half_extents: (f64, f64),
    /// Yaw torque interval [min, max] in N m; rows omitted when `None`.
    pub yaw_torque_bounds: Option<(f64, f64)>,
    /// Number of linearized friction generators, >= 4.
    pub generator_count: usize,
}

impl ContactSpec {
    pub fn point_contact(friction: f64) -> Self {
        Self {
            friction,
            cop_half_extents: (1e-3, 1e-3),
            yaw_torque_bounds: None,
            generator_count: 4,
        }
    }

    pub fn validate(&self) -> Result<(), ConstraintError> {
        if !(self.friction > 0.0) {
            return Err(ConstraintError::BadContact("friction must be > 0".into()));
        }
        if !(self.cop_half_extents.0 > 0.0 && self.cop_half_extents.1 > 0.0) {
            return Err(ConstraintError::BadContact(
                "CoP half extents must be > 0".into(),
            ));
        }
        if self.generator_count < 4 {
            return Err(ConstraintError::BadContact(
                "at least 4 friction generators required".into(),
            ));
        }
        if let Some((lo, hi)) = self.yaw_torque_bounds {
            if lo > hi {
                return Err(ConstraintError::BadContact("yaw torque interval empty".into()));
            }
        }
        Ok(())
    }

    /// Effective friction coefficient of the inscribed pyramid,
    /// μ cos(π / generator_count); μ/√2 for four generators.
    pub fn effective_friction(&self) -> f64 {
        self.friction * (std::f64::consts::PI / self.generator_count as f64).cos()
    }

    /// World-frame generator ray matrix (3 x count) for a contact whose
    /// normal is `normal`: rays sit on the exact cone at the inscribed
    /// polygon's vertices, so every nonnegative combination satisfies both
    /// the pyramid rows and the exact cone.
    pub fn generator_matrix(&self, normal: &Unit<Vector3<f64>>) -> DMatrix<f64> {
        let (t1, t2) = tangent_basis(normal);
        let m = self.generator_count;
        let mut g = DMatrix::zeros(3, m);
        for j in 0..m {
            let phi = 2.0 * std::f64::consts::PI * (j as f64 + 0.5) / m as f64;
            let ray = normal.into_inner() + self.friction * (phi.cos() * t1 + phi.sin() * t2);
            g.set_column(j, &ray);
        }
        g
    }
}

/// Any orthonormal tangent pair completing `normal` to a right-handed frame.
pub fn tangent_basis(normal: &Unit<Vector3<f64>>) -> (Vector3<f64>, Vector3<f64>) {
    let n = normal.into_inner();
    let seed = if n.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let t1 = (seed - n * seed.dot(&n)).normalize();
    let t2 = n.cross(&t1);
    (t1, t2)
}

/// Half-plane bound on the ZMP: `a z <= b`, with the supporting surface normal.
#[derive(Debug, Clone)]
pub struct ZmpPolygon {
    /// k x 3 half-plane normals (rows act on the 3D ZMP point).
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub normal: Unit<Vector3<f64>>,
}

impl ZmpPolygon {
    /// Convex hull of ground contact points (Option A support polygon).
    /// Points are projected along z; needs three non-collinear points.
    pub fn from_support_points(points: &[Vector3<f64>]) -> Result<Self, ConstraintError> {
        let flat: Vec<(f64, f64)> = points.iter().map(|p| (p.x, p.y)).collect();
        let hull = convex_hull_2d(&flat);
        if hull.len() < 3 {
            return Err(ConstraintError::BadPolygon(
                "support polygon needs three non-collinear contact points".into(),
            ));
        }
        let k = hull.len();
        let mut a = DMatrix::zeros(k, 3);
        let mut b = DVector::zeros(k);
        for i in 0..k {
            let (x0, y0) = hull[i];
            let (x1, y1) = hull[(i + 1) % k];
            // Outward normal of a CCW edge.
            let (nx, ny) = (y1 - y0, -(x1 - x0));
            let norm = (nx * nx + ny * ny).sqrt();
            a[(i, 0)] = nx / norm;
            a[(i, 1)] = ny / norm;
            b[i] = (nx * x0 + ny * y0) / norm;
        }
        Ok(Self {
            a,
            b,
            normal: Unit::new_normalize(Vector3::z()),
        })
    }

    /// Axis-aligned rectangle centred at (cx, cy) with half extents (hx, hy).
    pub fn rectangle(cx: f64, cy: f64, hx: f64, hy: f64) -> Result<Self, ConstraintError> {
        if !(hx > 0.0 && hy > 0.0) {
            return Err(ConstraintError::BadPolygon("empty rectangle".into()));
        }
        let a = DMatrix::from_row_slice(
            4,
            3,
            &[1.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, -1.0, 0.0],
        );
        let b = DVector::from_vec(vec![cx + hx, -(cx - hx), cy + hy, -(cy - hy)]);
        Ok(Self {
            a,
            b,
            normal: Unit::new_normalize(Vector3::z()),
        })
    }

    pub fn contains(&self, z: &Vector3<f64>, tol: f64) -> bool {
        let r = &self.a * z - &self.b;
        r.iter().all(|&x| x <= tol)
    }

    /// Worst signed distance outside the polygon (negative inside).
    pub fn violation(&self, z: &Vector3<f64>) -> f64 {
        let r = &self.a * z - &self.b;
        r.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x))
    }
}

/// Half-plane bound on the horizontal COM velocity: `g ċ_xy <= h`.
#[derive(Debug, Clone)]
pub struct ComVelPolygon {
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
}

impl ComVelPolygon {
    pub fn rectangle(hx: f64, hy: f64) -> Result<Self, ConstraintError> {
        if !(hx > 0.0 && hy > 0.0) {
            return Err(ConstraintError::BadPolygon("empty rectangle".into()));
        }
        Ok(Self {
            g: DMatrix::from_row_slice(4, 2, &[1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0]),
            h: DVector::from_vec(vec![hx, hx, hy, hy]),
        })
    }

    pub fn validate(&self) -> Result<(), ConstraintError> {
        if self.g.nrows() != self.h.len() || self.g.ncols() != 2 {
            return Err(ConstraintError::BadPolygon("COM velocity polygon shape".into()));
        }
        Ok(())
    }
}

/// Andrew monotone chain; returns the hull CCW without repeated endpoint.
fn convex_hull_2d(points: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    pts.dedup_by(|a, b| (a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12);
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: (f64, f64), a: (f64, f64), b: (f64, f64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut lower: Vec<(f64, f64)> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 1e-12
        {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<(f64, f64)> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 1e-12
        {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

pub(crate) fn skew3(v: &Vector3<f64>) -> Matrix3<f64> {
    crate::model::skew(v)
}
