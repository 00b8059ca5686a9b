//! Impulse distribution across the kinematic tree.
//!
//! The post-impact joint velocity jump and the contact impulses are the
//! minimum-norm solution of the stacked equalities
//!
//! ```text
//!   J_m Δq̇ = Ω ι_e          (operational-space impulse propagation)
//!   A_G Δq̇ = T_c ι_e        (centroidal momentum, floating base only)
//!   J_i Δq̇ = Δẋ_i           (contact velocity restitution)
//! ```
//!
//! solved analytically through the damped pseudoinverse of the block matrix.
//! Only the columns multiplying the restitution target are retained; every
//! whole-body predictor chains those columns with the restitution map.

use super::{block_diag_projectors, ImpactConfig, ImpactError, JumpDecomposition};
use crate::model::{
    self, skew, CentroidalMomentumMatrix, EndEffectorPartition, RobotModel, RobotState,
};
use nalgebra::{DMatrix, DVector, Vector3};

/// Singular values below this fraction of the largest are treated as zero.
const PINV_RELATIVE_TOLERANCE: f64 = 1e-10;

/// Post-impact normal forces smaller than this make the ZMP undefined.
pub const MIN_POST_IMPACT_NORMAL_FORCE: f64 = 1e-6;

/// Rank and spectrum diagnostics of the distribution matrix B.
#[derive(Debug, Clone)]
pub struct Conditioning {
    /// Singular values of B, descending.
    pub singular_values: Vec<f64>,
    /// Number of singular values kept by the damped inverse.
    pub rank: usize,
    /// Condition number of B Bᵀ (square of the spectral ratio); infinite
    /// when B is row-rank deficient.
    pub cond_bbt: f64,
}

impl Conditioning {
    pub fn full_row_rank(&self, rows: usize) -> bool {
        self.rank == rows
    }
}

/// The assembled distribution: right pseudoinverse columns, the matrices the
/// predictors chain with, and conditioning diagnostics. Immutable once built.
#[derive(Debug, Clone)]
pub struct ImpulseDistribution {
    nv: usize,
    m1: usize,
    m2: usize,
    m3: usize,
    /// Controller period Δt.
    control_period: f64,
    /// Impact duration δt shared by the event.
    impact_duration: f64,
    /// nv x 3 m2 block of B⁺ mapping the restitution target to Δq̇.
    pub k_joint_velocity: DMatrix<f64>,
    /// 3(m1+m2) x 3 m2 block of B⁺ mapping the target to the impulses ι.
    pub k_impulse: DMatrix<f64>,
    /// Block diagonal of the per-contact jump projectors P_Δ.
    projector: DMatrix<f64>,
    /// Stacked Jacobian of the impacting set.
    j_impacting: DMatrix<f64>,
    jdot_impacting: DMatrix<f64>,
    /// Stacked Jacobian of every end-effector (established, impacting, free).
    j_all: DMatrix<f64>,
    /// Stacked Jacobian of the external set (established then impacting).
    j_external: DMatrix<f64>,
    /// World positions of the external contacts.
    external_positions: Vec<Vector3<f64>>,
    cmm: Option<CentroidalMomentumMatrix>,
    total_mass: f64,
    b_matrix: DMatrix<f64>,
    pub conditioning: Conditioning,
    partition: EndEffectorPartition,
}

/// Evaluated prediction at a specific (q̈, q̇).
#[derive(Debug, Clone)]
pub struct ImpulseSolution {
    /// Predicted joint velocity jump Δq̇*.
    pub joint_velocity_jump: DVector<f64>,
    /// Predicted impulses for the external set, N s, stacked order.
    pub impulses: Vec<Vector3<f64>>,
    /// Predicted force jumps Δf = ι / δt, N.
    pub force_jumps: Vec<Vector3<f64>>,
}

/// Assemble the impulse-distribution system at the current state.
///
/// `configs` holds one [`ImpactConfig`] per member of `partition.impacting`.
/// For fixed-base models the centroidal row block is omitted: without it the
/// solution reduces to the non-redundant kinematic relation, which is the
/// behaviour the planar example relies on.
pub fn build_distribution(
    model: &RobotModel,
    state: &RobotState,
    partition: &EndEffectorPartition,
    configs: &[ImpactConfig],
) -> Result<ImpulseDistribution, ImpactError> {
    let (m1, m2, m3) = (
        partition.established.len(),
        partition.impacting.len(),
        partition.free.len(),
    );
    if m2 == 0 {
        return Err(ImpactError::EmptyImpactSet);
    }
    if configs.len() != m2 {
        return Err(ImpactError::ConfigCount {
            expected: m2,
            got: configs.len(),
        });
    }
    for c in configs {
        c.validate()?;
    }
    let control_period = configs[0].control_period;
    let impact_duration = configs[0].impact_duration;
    if configs
        .iter()
        .any(|c| (c.control_period - control_period).abs() > 1e-12)
    {
        return Err(ImpactError::InconsistentTiming("control period"));
    }
    if configs
        .iter()
        .any(|c| (c.impact_duration - impact_duration).abs() > 1e-12)
    {
        return Err(ImpactError::InconsistentTiming("impact duration"));
    }

    let nv = model.nv();
    let m = m1 + m2 + m3;
    let n_ext = 3 * (m1 + m2);
    let all = partition.all();
    let external = partition.external();

    let mut j_all = DMatrix::zeros(3 * m, nv);
    for (k, &ee) in all.iter().enumerate() {
        j_all
            .rows_mut(3 * k, 3)
            .copy_from(&model::point_jacobian(model, state, ee)?);
    }
    let j_external = j_all.rows(0, n_ext).into_owned();
    let j_impacting = j_all.rows(3 * m1, 3 * m2).into_owned();
    let mut jdot_impacting = DMatrix::zeros(3 * m2, nv);
    for (k, &ee) in partition.impacting.iter().enumerate() {
        jdot_impacting
            .rows_mut(3 * k, 3)
            .copy_from(&model::jacobian_derivative(model, state, ee)?);
    }

    let frames = model::forward_kinematics(model, &state.q)?;
    let external_positions: Vec<Vector3<f64>> = external
        .iter()
        .map(|&ee| frames.ee_poses[ee].translation.vector)
        .collect();

    let mass = model::mass_matrix(model, state)?;
    let chol = nalgebra::Cholesky::new(mass).ok_or(ImpactError::MassMatrixNotSpd)?;
    // Υ = J_m M⁻¹ J_mᵀ through the factorization, never an explicit inverse.
    let minv_jt = chol.solve(&j_all.transpose());
    let upsilon = &j_all * &minv_jt;
    let omega = upsilon.columns(0, n_ext).into_owned();

    let floating = model.has_floating_base();
    let cmm = if floating {
        Some(model::centroidal_momentum_matrix(model, state)?)
    } else {
        None
    };

    let rows = 3 * m + if floating { 6 } else { 0 } + 3 * m2;
    let cols = nv + n_ext;
    let mut b = DMatrix::zeros(rows, cols);
    b.view_mut((0, 0), (3 * m, nv)).copy_from(&j_all);
    b.view_mut((0, nv), (3 * m, n_ext)).copy_from(&(-&omega));
    let mut row = 3 * m;
    if let Some(cmm) = &cmm {
        b.view_mut((row, 0), (6, nv)).copy_from(cmm.matrix());
        for (k, p) in external_positions.iter().enumerate() {
            let lever = skew(&(p - cmm.com()));
            b.view_mut((row, nv + 3 * k), (3, 3))
                .copy_from(&(-nalgebra::Matrix3::identity()));
            b.view_mut((row + 3, nv + 3 * k), (3, 3)).copy_from(&(-lever));
        }
        row += 6;
    }
    b.view_mut((row, 0), (3 * m2, nv)).copy_from(&j_impacting);

    let (pinv, conditioning) = damped_pseudoinverse(&b)?;
    let k_block = pinv.columns(rows - 3 * m2, 3 * m2);
    let k_joint_velocity = k_block.rows(0, nv).into_owned();
    let k_impulse = k_block.rows(nv, n_ext).into_owned();

    Ok(ImpulseDistribution {
        nv,
        m1,
        m2,
        m3,
        control_period,
        impact_duration,
        k_joint_velocity,
        k_impulse,
        projector: block_diag_projectors(configs),
        j_impacting,
        jdot_impacting,
        j_all,
        j_external,
        external_positions,
        cmm,
        total_mass: model.total_mass(),
        b_matrix: b,
        conditioning,
        partition: partition.clone(),
    })
}

/// Right pseudoinverse Bᵀ(BBᵀ)⁻¹ via SVD, with singular values below
/// `PINV_RELATIVE_TOLERANCE * σ_max` treated as zero.
fn damped_pseudoinverse(b: &DMatrix<f64>) -> Result<(DMatrix<f64>, Conditioning), ImpactError> {
    let svd = b.clone().svd(true, true);
    let mut sigma: Vec<f64> = svd.singular_values.iter().copied().collect();
    sigma.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let sigma_max = sigma.first().copied().unwrap_or(0.0);
    if !(sigma_max.is_finite() && sigma_max > 0.0) {
        return Err(ImpactError::IllConditioned(sigma));
    }
    let tol = PINV_RELATIVE_TOLERANCE * sigma_max;
    let u = svd.u.as_ref().expect("svd with u");
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    let mut inv_s = DMatrix::zeros(v_t.nrows(), u.ncols());
    let mut rank = 0;
    for (i, &s) in svd.singular_values.iter().enumerate() {
        if s > tol {
            inv_s[(i, i)] = 1.0 / s;
            rank += 1;
        }
    }
    let pinv = v_t.transpose() * inv_s * u.transpose();
    let sigma_min_kept = sigma
        .iter()
        .copied()
        .filter(|&s| s > tol)
        .fold(f64::INFINITY, f64::min);
    let cond_bbt = if rank == b.nrows() {
        (sigma_max / sigma_min_kept).powi(2)
    } else {
        f64::INFINITY
    };
    Ok((
        pinv,
        Conditioning {
            singular_values: sigma,
            rank,
            cond_bbt,
        },
    ))
}

impl ImpulseDistribution {
    pub fn nv(&self) -> usize {
        self.nv
    }
    pub fn counts(&self) -> (usize, usize, usize) {
        (self.m1, self.m2, self.m3)
    }
    pub fn partition(&self) -> &EndEffectorPartition {
        &self.partition
    }
    pub fn control_period(&self) -> f64 {
        self.control_period
    }
    pub fn impact_duration(&self) -> f64 {
        self.impact_duration
    }
    pub fn b_matrix(&self) -> &DMatrix<f64> {
        &self.b_matrix
    }
    pub fn external_positions(&self) -> &[Vector3<f64>] {
        &self.external_positions
    }
    pub fn impacting_jacobian(&self) -> &DMatrix<f64> {
        &self.j_impacting
    }

    /// Column block of K_Δq̇ belonging to impacting end-effector `i`
    /// (nv x 3): its contribution to the joint velocity jump.
    pub fn joint_velocity_block(&self, i: usize) -> DMatrix<f64> {
        self.k_joint_velocity.columns(3 * i, 3).into_owned()
    }

    /// Block of K_ι coupling external contact `row` to impacting
    /// end-effector `col` (3 x 3).
    pub fn impulse_block(&self, row: usize, col: usize) -> DMatrix<f64> {
        self.k_impulse.view((3 * row, 3 * col), (3, 3)).into_owned()
    }

    /// Restitution target map: Δẋ_i = P (J q̇ + J q̈ Δt + J̇ q̇ Δt).
    pub fn target_jump_map(&self) -> JumpDecomposition {
        JumpDecomposition {
            quantity: "impacting_velocity".into(),
            accel_gain: &self.projector * &self.j_impacting,
            vel_gain: &self.projector
                * (&self.j_impacting + &self.jdot_impacting * self.control_period),
            control_period: self.control_period,
        }
    }

    /// Δq̇ decomposition: J_Δ = K_Δq̇ P J, C_Δ = K_Δq̇ P (J + J̇ Δt).
    pub fn joint_velocity_jump(&self) -> JumpDecomposition {
        self.target_jump_map()
            .premultiply("joint_velocity", &self.k_joint_velocity)
    }

    /// Force jumps of the external set, scaled from impulses by 1/δt.
    pub fn force_jumps(&self) -> JumpDecomposition {
        let map = &self.k_impulse / self.impact_duration;
        self.target_jump_map().premultiply("contact_force", &map)
    }

    /// Impulsive joint torque jumps Δγ = J_eᵀ Δf.
    pub fn impulsive_torque_jumps(&self) -> JumpDecomposition {
        let jt = self.j_external.transpose();
        self.force_jumps().premultiply("impulsive_torque", &jt)
    }

    /// Velocity jumps of every end-effector, Δẋ_m = J_m Δq̇.
    pub fn ee_velocity_jumps(&self) -> JumpDecomposition {
        self.joint_velocity_jump()
            .premultiply("ee_velocity", &self.j_all)
    }

    /// Angular momentum jump Δk_c = A_ωG Δq̇ (floating base only; the
    /// centroidal rows are what make the momentum split unique).
    pub fn angular_momentum_jump(&self) -> Option<JumpDecomposition> {
        let cmm = self.cmm.as_ref()?;
        Some(
            self.joint_velocity_jump()
                .premultiply("angular_momentum", &cmm.angular()),
        )
    }

    /// Horizontal COM velocity jump Δċ_xy = A_vG,xy Δq̇ / M (floating base only).
    pub fn com_velocity_jump(&self) -> Option<JumpDecomposition> {
        let cmm = self.cmm.as_ref()?;
        let map = cmm.linear().rows(0, 2).into_owned() / self.total_mass;
        Some(self.joint_velocity_jump().premultiply("com_velocity_xy", &map))
    }

    /// Resultant wrench jump at `origin`: ΔW = Σ [I; (p_i - o)×] Δf_i,
    /// 6 rows in `[force; torque]` order.
    pub fn wrench_jump(&self, origin: &Vector3<f64>) -> JumpDecomposition {
        let n_ext = 3 * (self.m1 + self.m2);
        let mut map = DMatrix::zeros(6, n_ext);
        for (k, p) in self.external_positions.iter().enumerate() {
            map.view_mut((0, 3 * k), (3, 3))
                .copy_from(&nalgebra::Matrix3::identity());
            map.view_mut((3, 3 * k), (3, 3)).copy_from(&skew(&(p - origin)));
        }
        self.force_jumps().premultiply("wrench", &map)
    }

    /// Evaluate the distribution at a commanded (q̈, q̇).
    pub fn solve(&self, qdd: &DVector<f64>, qd: &DVector<f64>) -> Result<ImpulseSolution, ImpactError> {
        if qdd.len() != self.nv {
            return Err(ImpactError::DimensionMismatch {
                what: "qdd",
                expected: self.nv,
                got: qdd.len(),
            });
        }
        if qd.len() != self.nv {
            return Err(ImpactError::DimensionMismatch {
                what: "qd",
                expected: self.nv,
                got: qd.len(),
            });
        }
        let target = self.target_jump_map().evaluate(qdd, qd);
        let delta_qd = &self.k_joint_velocity * &target;
        let iota = &self.k_impulse * &target;
        let mut impulses = Vec::with_capacity(self.m1 + self.m2);
        let mut force_jumps = Vec::with_capacity(self.m1 + self.m2);
        for k in 0..(self.m1 + self.m2) {
            let v = Vector3::new(iota[3 * k], iota[3 * k + 1], iota[3 * k + 2]);
            impulses.push(v);
            force_jumps.push(v / self.impact_duration);
        }
        Ok(ImpulseSolution {
            joint_velocity_jump: delta_qd,
            impulses,
            force_jumps,
        })
    }

    /// Residual ‖B u* - b‖ of the stacked equalities at a given target; zero
    /// (to round-off) whenever B has full row rank.
    pub fn residual_for_target(&self, target: &DVector<f64>) -> f64 {
        let u = self.solution_for_target(target);
        let mut b_vec = DVector::zeros(self.b_matrix.nrows());
        b_vec
            .rows_mut(self.b_matrix.nrows() - 3 * self.m2, 3 * self.m2)
            .copy_from(target);
        (&self.b_matrix * u - b_vec).norm()
    }

    /// Stacked minimum-norm solution u* = [Δq̇; ι] for a restitution target.
    pub fn solution_for_target(&self, target: &DVector<f64>) -> DVector<f64> {
        let mut u = DVector::zeros(self.nv + 3 * (self.m1 + self.m2));
        u.rows_mut(0, self.nv)
            .copy_from(&(&self.k_joint_velocity * target));
        u.rows_mut(self.nv, 3 * (self.m1 + self.m2))
            .copy_from(&(&self.k_impulse * target));
        u
    }
}

/// ZMP jump from a wrench jump: Δz = (n × Δτ) / (nᵀ (f + Δf)).
///
/// `wrench` and `delta_wrench` are 6-vectors in `[force; torque]` order at
/// the same frame. Errors when the post-impact normal force is too small.
pub fn zmp_jump(
    wrench: &nalgebra::Vector6<f64>,
    delta_wrench: &nalgebra::Vector6<f64>,
    normal: &Vector3<f64>,
) -> Result<Vector3<f64>, ImpactError> {
    let f = wrench.fixed_rows::<3>(0) + delta_wrench.fixed_rows::<3>(0);
    let denom = normal.dot(&f.into_owned());
    if denom.abs() < MIN_POST_IMPACT_NORMAL_FORCE {
        return Err(ImpactError::DegenerateZmp(denom));
    }
    let dtau = delta_wrench.fixed_rows::<3>(3).into_owned();
    Ok(skew(normal) * dtau / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{samples, EndEffectorFrame, EndEffectorRole, RobotState};
    use approx::assert_abs_diff_eq;
    use nalgebra::{DVector, Isometry3, Unit, Vector6};

    fn config_along(n: Vector3<f64>, cr: f64) -> ImpactConfig {
        ImpactConfig::new(cr, n, 0.005, 0.005).unwrap()
    }

    fn toy_arm() -> (crate::model::RobotModel, RobotState, EndEffectorPartition) {
        let model = samples::planar_two_link(0.5, 0.5);
        let state = RobotState::new(
            DVector::from_vec(vec![0.0, 0.2 * std::f64::consts::PI]),
            DVector::from_vec(vec![0.6, -0.6]),
        );
        let partition = EndEffectorPartition::from_model(&model);
        (model, state, partition)
    }

    /// Attach `m1 + m2 + m3` frames to a random arm and return the pieces for
    /// a distribution build. Frames go on the deepest links, established first.
    fn random_setup(
        seed: u64,
        n_joints: usize,
        floating: bool,
        (m1, m2, m3): (usize, usize, usize),
    ) -> (
        crate::model::RobotModel,
        RobotState,
        EndEffectorPartition,
        Vec<ImpactConfig>,
    ) {
        let mut model = samples::random_serial_arm(seed, n_joints, floating);
        let mut rng = samples::SampleStream::new(seed ^ 0xabc0ffee);
        let n_links = model.links().len();
        let mut partition = EndEffectorPartition::default();
        let total = m1 + m2 + m3;
        for k in 0..total {
            let body = n_links - 1 - (k % n_links.min(total));
            let role = if k < m1 {
                EndEffectorRole::Established
            } else if k < m1 + m2 {
                EndEffectorRole::Impacting
            } else {
                EndEffectorRole::Free
            };
            let idx = model
                .add_end_effector(EndEffectorFrame {
                    name: format!("ee{k}"),
                    body,
                    transform: Isometry3::translation(
                        rng.uniform(0.1, 0.3),
                        rng.uniform(-0.1, 0.1),
                        rng.uniform(-0.1, 0.1),
                    ),
                    role,
                })
                .unwrap();
            match role {
                EndEffectorRole::Established => partition.established.push(idx),
                EndEffectorRole::Impacting => partition.impacting.push(idx),
                EndEffectorRole::Free => partition.free.push(idx),
            }
        }
        let configs = (0..m2)
            .map(|_| {
                ImpactConfig::new(rng.uniform(0.0, 0.5), rng.unit_vector().into_inner(), 0.005, 0.005)
                    .unwrap()
            })
            .collect();
        let state = samples::random_state(&model, seed.wrapping_mul(7).wrapping_add(13));
        (model, state, partition, configs)
    }

    #[test]
    fn restitution_jump_reference_numbers() {
        let cfg = config_along(Vector3::y(), 0.02);
        let jump = super::super::restitution_jump(&cfg, &Vector3::new(0.0, 0.3, 0.0)).unwrap();
        assert_abs_diff_eq!(jump.y, -0.306, epsilon = 1e-12);
        assert_abs_diff_eq!(jump.x, 0.0, epsilon = 1e-15);
        // Tangential pre-impact velocity is untouched.
        let jump = super::super::restitution_jump(&cfg, &Vector3::new(0.4, 0.0, -0.2)).unwrap();
        assert!(jump.norm() < 1e-15);
        // Perfectly inelastic along the normal.
        let cfg = config_along(Vector3::z(), 0.0);
        let jump = super::super::restitution_jump(&cfg, &Vector3::new(0.0, 0.0, 0.8)).unwrap();
        assert_abs_diff_eq!(jump.z, -0.8, epsilon = 1e-15);
    }

    #[test]
    fn velocity_jump_map_zero_acceleration_reduction() {
        let (model, state, partition) = toy_arm();
        let cfg = config_along(Vector3::y(), 0.02);
        let map = super::super::impacting_velocity_jump_map(
            &model,
            &state,
            &partition.impacting,
            std::slice::from_ref(&cfg),
        )
        .unwrap();
        let jump = map.evaluate(&DVector::zeros(2), &state.v);
        assert_abs_diff_eq!(jump[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(jump[1], -0.306, epsilon = 1e-9);
        assert_abs_diff_eq!(jump[2], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn slider_distribution_is_the_two_by_two_reduction() {
        // 1-dof prismatic slider of mass 2 kg: impulse = mass × velocity change.
        let model = samples::prismatic_slider(2.0, Vector3::z());
        let state = RobotState::new(DVector::from_vec(vec![0.5]), DVector::from_vec(vec![0.3]));
        let partition = EndEffectorPartition::from_model(&model);
        let cfg = config_along(Vector3::z(), 0.02);
        let dist =
            build_distribution(&model, &state, &partition, std::slice::from_ref(&cfg)).unwrap();

        let target = DVector::from_vec(vec![0.0, 0.0, -0.4]);
        let u = dist.solution_for_target(&target);
        assert_abs_diff_eq!(u[0], -0.4, epsilon = 1e-12); // Δq̇ = Δẋ
        assert_abs_diff_eq!(u[3], 2.0 * -0.4, epsilon = 1e-12); // ι = M Δẋ
        assert!(dist.residual_for_target(&target) < 1e-12);

        // Evaluated chain at q̈ = 0: Δq̇ = -(1+c_r) q̇ = -0.306.
        let sol = dist.solve(&DVector::zeros(1), &state.v).unwrap();
        assert_abs_diff_eq!(sol.joint_velocity_jump[0], -0.306, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.impulses[0].z, -0.612, epsilon = 1e-12);
        assert_abs_diff_eq!(sol.force_jumps[0].z, -122.4, epsilon = 1e-9);
        let gamma = dist.impulsive_torque_jumps().evaluate(&DVector::zeros(1), &state.v);
        assert_abs_diff_eq!(gamma[0], -122.4, epsilon = 1e-9);
    }

    #[test]
    fn zero_target_gives_zero_solution() {
        let (model, state, partition, configs) = random_setup(5, 6, true, (1, 1, 1));
        let dist = build_distribution(&model, &state, &partition, &configs).unwrap();
        let target = DVector::zeros(3);
        let u = dist.solution_for_target(&target);
        assert!(u.norm() < 1e-15);
        let decomp = dist.joint_velocity_jump();
        let zero = decomp.evaluate(&DVector::zeros(model.nv()), &DVector::zeros(model.nv()));
        assert!(zero.norm() < 1e-15);
    }

    #[test]
    fn toy_joint_velocity_jump_matches_kinematic_reduction() {
        let (model, state, partition) = toy_arm();
        let cfg = config_along(Vector3::y(), 0.02);
        let dist =
            build_distribution(&model, &state, &partition, std::slice::from_ref(&cfg)).unwrap();
        let dq = dist
            .joint_velocity_jump()
            .evaluate(&DVector::zeros(2), &state.v);
        assert_abs_diff_eq!(dq[0], -0.612, epsilon = 1e-3);
        assert_abs_diff_eq!(dq[1], 0.612, epsilon = 1e-3);
    }

    #[test]
    fn nonredundant_fixed_base_reduction_identity() {
        // With m1 = m3 = 0 and an invertible impact Jacobian, the joint
        // velocity gain equals J⁻¹ P_Δ J exactly.
        for seed in 0..10 {
            let (model, state, partition, configs) = random_setup(40 + seed, 3, false, (0, 1, 0));
            let dist = build_distribution(&model, &state, &partition, &configs).unwrap();
            let j = dist.impacting_jacobian().clone();
            if j.clone().lu().determinant().abs() < 1e-4 {
                continue; // skip near-singular arm poses
            }
            let p = configs[0].jump_projector();
            let p_dyn = DMatrix::from_fn(3, 3, |r, c| p[(r, c)]);
            let lhs = &dist.k_joint_velocity * &p_dyn * &j;
            let rhs = j.clone().lu().solve(&(&p_dyn * &j)).unwrap();
            assert!(
                (&lhs - &rhs).norm() < 1e-10 * (1.0 + rhs.norm()),
                "seed {seed}: reduction identity violated"
            );
        }
    }

    #[test]
    fn exactness_and_minimum_norm_on_random_instances() {
        let mut exact_checked = 0;
        for seed in 0..24 {
            // Full row rank of B needs nv >= 3m (+6 when floating); the last
            // arm of the rotation is deliberately rank-deficient to exercise
            // the damped path.
            let spec = match seed % 4 {
                0 => (3, false, (0, 1, 0)),
                1 => (6, false, (1, 1, 0)),
                2 => (7, true, (1, 1, 0)),
                _ => (4, false, (1, 1, 0)),
            };
            let (model, state, partition, configs) =
                random_setup(100 + seed, spec.0, spec.1, spec.2);
            let dist = build_distribution(&model, &state, &partition, &configs).unwrap();
            if !dist.conditioning.full_row_rank(dist.b_matrix().nrows())
                || dist.conditioning.cond_bbt > 1e10
            {
                // Rank-deficient but consistent: predictions stay finite.
                let decomp = dist.joint_velocity_jump();
                assert!(decomp.accel_gain.iter().all(|x| x.is_finite()));
                continue;
            }
            exact_checked += 1;
            let mut rng = samples::SampleStream::new(seed);
            let target = DVector::from_fn(3 * partition.impacting.len(), |_, _| {
                rng.uniform(-1.0, 1.0)
            });
            let res = dist.residual_for_target(&target);
            assert!(res <= 1e-8 * (1.0 + target.norm()), "seed {seed}: residual {res}");

            // Independent minimum-norm oracle: normal equations through LU.
            let b = dist.b_matrix();
            let mut rhs = DVector::zeros(b.nrows());
            rhs.rows_mut(b.nrows() - target.len(), target.len()).copy_from(&target);
            let bbt = b * b.transpose();
            let u_oracle = b.transpose() * bbt.lu().solve(&rhs).expect("full row rank");
            let u = dist.solution_for_target(&target);
            assert!(
                (&u - &u_oracle).norm() <= 1e-7 * (1.0 + u_oracle.norm()),
                "seed {seed}: min-norm solutions disagree"
            );
        }
        assert!(exact_checked >= 12, "too few full-rank instances: {exact_checked}");
    }

    #[test]
    fn ee_velocity_jump_matches_restitution_for_impacting_members() {
        for seed in 0..6 {
            let (model, state, partition, configs) = random_setup(300 + seed, 6, true, (1, 1, 1));
            let dist = build_distribution(&model, &state, &partition, &configs).unwrap();
            if !dist.conditioning.full_row_rank(dist.b_matrix().nrows()) {
                continue;
            }
            let mut rng = samples::SampleStream::new(seed);
            let qdd = DVector::from_fn(model.nv(), |_, _| rng.uniform(-2.0, 2.0));
            let target = dist.target_jump_map().evaluate(&qdd, &state.v);
            let all_jump = dist.ee_velocity_jumps().evaluate(&qdd, &state.v);
            let (m1, m2, _) = dist.counts();
            for k in 0..3 * m2 {
                assert_abs_diff_eq!(all_jump[3 * m1 + k], target[k], epsilon = 1e-8);
            }
            for v in all_jump.iter() {
                assert!(v.is_finite());
            }
        }
    }

    #[test]
    fn decoupled_free_limb_sees_no_jump() {
        // A free frame with an all-zero Jacobian cannot receive any impulse.
        let (model, state, _partition) = toy_arm();
        let mut model = model;
        let free = model
            .add_end_effector(EndEffectorFrame {
                name: "anchor".into(),
                body: 0,
                transform: Isometry3::identity(),
                role: EndEffectorRole::Free,
            })
            .unwrap();
        let partition = EndEffectorPartition::from_model(&model);
        let cfg = config_along(Vector3::y(), 0.02);
        let dist =
            build_distribution(&model, &state, &partition, std::slice::from_ref(&cfg)).unwrap();
        let jumps = dist.ee_velocity_jumps().evaluate(&DVector::zeros(2), &state.v);
        // Free frames stack last; the anchor sits at the shoulder axis.
        let offset = jumps.len() - 3;
        let _ = free;
        for k in 0..3 {
            assert_abs_diff_eq!(jumps[offset + k], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn free_body_com_velocity_jump_newton_oracle() {
        let model = samples::free_body(4.0, Vector3::new(0.1, 0.12, 0.14), Vector3::zeros());
        let mut state = model.neutral_state();
        state.v[2] = -0.5; // falling onto a floor along -z
        let partition = EndEffectorPartition::from_model(&model);
        let cfg = config_along(Vector3::z(), 0.02);
        let dist =
            build_distribution(&model, &state, &partition, std::slice::from_ref(&cfg)).unwrap();
        let sol = dist.solve(&DVector::zeros(6), &state.v).unwrap();
        let dcdot = dist
            .com_velocity_jump()
            .expect("floating base has centroidal rows")
            .evaluate(&DVector::zeros(6), &state.v);
        // Newton: Δċ = ι / M.
        assert_abs_diff_eq!(dcdot[0], sol.impulses[0].x / 4.0, epsilon = 1e-10);
        assert_abs_diff_eq!(dcdot[1], sol.impulses[0].y / 4.0, epsilon = 1e-10);
        let dk = dist
            .angular_momentum_jump()
            .unwrap()
            .evaluate(&DVector::zeros(6), &state.v);
        assert!(dk.norm() < 1e-10, "central impulse adds no angular momentum");
        // Restitution law at the contact: Δv_z = -(1+c_r) v_z.
        assert_abs_diff_eq!(sol.joint_velocity_jump[2], 0.51, epsilon = 1e-10); // -(1+0.02)(-0.5)
    }

    #[test]
    fn fixed_base_centroidal_predictors_are_skipped() {
        let (model, state, partition) = toy_arm();
        let cfg = config_along(Vector3::y(), 0.02);
        let dist =
            build_distribution(&model, &state, &partition, std::slice::from_ref(&cfg)).unwrap();
        assert!(dist.angular_momentum_jump().is_none());
        assert!(dist.com_velocity_jump().is_none());
    }

    #[test]
    fn wrench_jump_lever_arm() {
        let (model, state, partition, configs) = random_setup(777, 3, false, (0, 1, 0));
        let dist = build_distribution(&model, &state, &partition, &configs).unwrap();
        // One external contact at p; about o = p the torque rows vanish.
        let p = dist.external_positions()[0];
        let at_contact = dist.wrench_jump(&p);
        assert!(at_contact.accel_gain.rows(3, 3).norm() < 1e-12);
        assert!(at_contact.vel_gain.rows(3, 3).norm() < 1e-12);

        // Shifted frame: Δτ = (p - o) × Δf with (p - o) = [1, 0, 0].
        let o = p - Vector3::new(1.0, 0.0, 0.0);
        let shifted = dist.wrench_jump(&o);
        let qdd = DVector::zeros(model.nv());
        let w = shifted.evaluate(&qdd, &state.v);
        let f = dist.force_jumps().evaluate(&qdd, &state.v);
        let expected = Vector3::new(1.0, 0.0, 0.0).cross(&Vector3::new(f[0], f[1], f[2]));
        for k in 0..3 {
            assert_abs_diff_eq!(w[3 + k], expected[k], epsilon = 1e-9);
        }
    }

    #[test]
    fn zmp_jump_hand_example() {
        let w = Vector6::new(0.0, 0.0, 50.0, 0.0, 0.0, 0.0);
        let dw = Vector6::new(0.0, 0.0, 0.0, 5.0, -10.0, 0.0);
        let dz = zmp_jump(&w, &dw, &Vector3::z()).unwrap();
        assert_abs_diff_eq!(dz.x, 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(dz.y, 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(dz.z, 0.0, epsilon = 1e-12);

        let no_torque = zmp_jump(&w, &Vector6::zeros(), &Vector3::z()).unwrap();
        assert!(no_torque.norm() < 1e-15);

        // Degenerate denominator: post-impact normal force collapses.
        let cancel = Vector6::new(0.0, 0.0, -50.0 + 1e-9, 1.0, 0.0, 0.0);
        assert!(matches!(
            zmp_jump(&w, &cancel, &Vector3::z()),
            Err(ImpactError::DegenerateZmp(_))
        ));
    }

    #[test]
    fn jumps_are_linear_and_scale_with_restitution() {
        let (model, state, partition, mut configs) = random_setup(901, 6, true, (1, 1, 1));
        let dist = build_distribution(&model, &state, &partition, &configs).unwrap();
        let decomp = dist.joint_velocity_jump();
        let mut rng = samples::SampleStream::new(3);
        let qdd = DVector::from_fn(model.nv(), |_, _| rng.uniform(-1.0, 1.0));
        let qd = DVector::from_fn(model.nv(), |_, _| rng.uniform(-1.0, 1.0));
        // Linearity in each argument; zero at (0, 0).
        let full = decomp.evaluate(&qdd, &qd);
        let a_only = decomp.evaluate(&qdd, &DVector::zeros(model.nv()));
        let v_only = decomp.evaluate(&DVector::zeros(model.nv()), &qd);
        assert!((full.clone() - (&a_only + &v_only)).norm() < 1e-12);
        assert!((decomp.evaluate(&(2.0 * &qdd), &qd) - (2.0 * &a_only + &v_only)).norm() < 1e-10);

        // Doubling (1 + c_r) doubles both gain matrices entrywise.
        let scaled_cr = 2.0 * (1.0 + configs[0].restitution) - 1.0;
        configs[0].restitution = scaled_cr;
        let dist2 = build_distribution(&model, &state, &partition, &configs).unwrap();
        let decomp2 = dist2.joint_velocity_jump();
        assert!((decomp2.accel_gain - 2.0 * &decomp.accel_gain).norm() < 1e-9);
        assert!((decomp2.vel_gain - 2.0 * &decomp.vel_gain).norm() < 1e-9);
    }

    #[test]
    fn torque_two_path_consistency() {
        let (model, state, partition, configs) = random_setup(911, 6, true, (1, 1, 1));
        let dist = build_distribution(&model, &state, &partition, &configs).unwrap();
        let mut rng = samples::SampleStream::new(8);
        let qdd = DVector::from_fn(model.nv(), |_, _| rng.uniform(-1.0, 1.0));
        let gamma = dist.impulsive_torque_jumps().evaluate(&qdd, &state.v);
        // Second path: γ = J_eᵀ Δf with Δf evaluated separately.
        let f = dist.force_jumps().evaluate(&qdd, &state.v);
        let sol = dist.solve(&qdd, &state.v).unwrap();
        let mut f_stacked = DVector::zeros(f.len());
        for (k, fj) in sol.force_jumps.iter().enumerate() {
            for c in 0..3 {
                f_stacked[3 * k + c] = fj[c];
            }
        }
        assert!((f.clone() - &f_stacked).norm() < 1e-10);
        let gamma_two = dist.j_external.transpose() * f_stacked;
        assert!((gamma - gamma_two).norm() < 1e-10);
    }

    #[test]
    fn per_end_effector_blocks_tile_the_gain_matrices() {
        let (model, state, partition, configs) = random_setup(21, 6, true, (1, 2, 0));
        let dist = build_distribution(&model, &state, &partition, &configs).unwrap();
        let (m1, m2, _) = dist.counts();
        for i in 0..m2 {
            let block = dist.joint_velocity_block(i);
            assert_eq!(block.nrows(), model.nv());
            assert!((block - dist.k_joint_velocity.columns(3 * i, 3).into_owned()).norm() < 1e-15);
        }
        for r in 0..m1 + m2 {
            for c in 0..m2 {
                assert_eq!(dist.impulse_block(r, c).nrows(), 3);
            }
        }
    }

    #[test]
    fn empty_impacting_set_is_rejected() {
        let (model, state, _partition) = toy_arm();
        let empty = EndEffectorPartition::default();
        assert!(matches!(
            build_distribution(&model, &state, &empty, &[]),
            Err(ImpactError::EmptyImpactSet)
        ));
    }
}
