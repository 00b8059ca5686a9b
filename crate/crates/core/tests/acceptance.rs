//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with the measured numbers (run with `--nocapture` to see them).

use impactqp::cli::toy_two_dof;
use impactqp::constraints::{
    angular_momentum_rows, com_velocity_rows, contact_wrench_cone_rows, impact_angular_momentum_rows,
    impact_com_velocity_rows, impact_cwc_rows, impact_impulsive_torque_rows,
    impact_joint_velocity_rows, impact_zmp_rows, joint_kinematic_rows, ComVelPolygon,
    ConstraintBlock, ContactSpec, VariableLayout, ZmpPolygon,
};
use impactqp::impact::{build_distribution, ImpactConfig, JumpDecomposition};
use impactqp::model::{
    self, samples, EndEffectorFrame, EndEffectorPartition, EndEffectorRole, RobotState,
};
use impactqp::qp::ControlMode;
use impactqp::sim;
use nalgebra::{DMatrix, DVector, Isometry3, Unit, Vector3, Vector6};
use std::path::PathBuf;
use std::time::Instant;

fn scenario_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

/// Criterion 1: the planar example reproduces the reported post-impact joint
/// velocities, the aware solution rides the velocity bound, and the whole
/// thing takes well under a second.
#[test]
fn acceptance_1_toy_example_reproduction() {
    let started = Instant::now();
    let report = toy_two_dof().expect("toy solves");
    let unaware = report.unaware_post_impact_velocity;
    let aware = report.aware_post_impact_velocity;
    assert!((unaware.x - (-0.618)).abs() <= 0.01, "unaware[0] = {}", unaware.x);
    assert!((unaware.y - 1.345).abs() <= 0.01, "unaware[1] = {}", unaware.y);
    assert!((aware.x - (-0.281)).abs() <= 0.01, "aware[0] = {}", aware.x);
    assert!((aware.y - 0.600).abs() <= 0.01, "aware[1] = {}", aware.y);
    assert!((aware.y - 0.600).abs() <= 1e-6, "aware[1] must sit on the bound");
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 1.0, "took {elapsed:.3}s");
    println!(
        "ACCEPTANCE 1 PASS: unaware [{:.3}, {:.3}], aware [{:.3}, {:.3}] rad/s in {:.3}s",
        unaware.x, unaware.y, aware.x, aware.y, elapsed
    );
}

fn random_instance(
    seed: u64,
    n_joints: usize,
    floating: bool,
    (m1, m2, m3): (usize, usize, usize),
) -> (
    impactqp::model::RobotModel,
    RobotState,
    EndEffectorPartition,
    Vec<ImpactConfig>,
) {
    let mut model = samples::random_serial_arm(seed, n_joints, floating);
    let mut rng = samples::SampleStream::new(seed ^ 0xfeed);
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
            ImpactConfig::new(
                rng.uniform(0.0, 0.4),
                rng.unit_vector().into_inner(),
                0.005,
                0.005,
            )
            .unwrap()
        })
        .collect();
    let state = samples::random_state(&model, seed.wrapping_mul(31).wrapping_add(7));
    (model, state, partition, configs)
}

/// Criterion 2: on 100 random models the distribution solves its stacked
/// equalities exactly and matches an independent least-squares oracle
/// whenever B Bᵀ is well conditioned.
#[test]
fn acceptance_2_impulse_distribution_exactness() {
    let started = Instant::now();
    let mut checked = 0;
    let mut built = 0;
    for seed in 0..100u64 {
        // Mix of sizes (2-8 actuated joints), bases and partitions with
        // m2 in {1, 2}; several arms are deliberately too small for full
        // row rank and exercise the damped path instead.
        let spec = match seed % 8 {
            0 => (3, false, (0, 1, 0)),
            1 => (6, false, (1, 1, 0)),
            2 => (7, true, (1, 1, 0)),
            3 => (8, true, (0, 2, 0)),
            4 => (6, false, (0, 2, 0)),
            5 => (2, false, (0, 1, 0)),
            6 => (8, true, (1, 1, 0)),
            _ => (4, false, (1, 1, 0)),
        };
        let (model, state, partition, configs) = random_instance(seed, spec.0, spec.1, spec.2);
        let dist = build_distribution(&model, &state, &partition, &configs).unwrap();
        built += 1;
        let rows = dist.b_matrix().nrows();
        if !dist.conditioning.full_row_rank(rows) || dist.conditioning.cond_bbt >= 1e10 {
            continue;
        }
        checked += 1;
        let mut rng = samples::SampleStream::new(seed ^ 0xc0de);
        let target = DVector::from_fn(3 * partition.impacting.len(), |_, _| rng.uniform(-1.0, 1.0));
        let residual = dist.residual_for_target(&target);
        assert!(
            residual <= 1e-8 * (1.0 + target.norm()),
            "seed {seed}: residual {residual:.3e}"
        );
        // Independent dense least-squares oracle through LU normal equations.
        let b = dist.b_matrix();
        let mut rhs = DVector::zeros(rows);
        rhs.rows_mut(rows - target.len(), target.len()).copy_from(&target);
        let u_oracle = b.transpose()
            * (b * b.transpose())
                .lu()
                .solve(&rhs)
                .expect("well conditioned");
        let u = dist.solution_for_target(&target);
        assert!(
            (&u - &u_oracle).norm() <= 1e-7 * (1.0 + u_oracle.norm()),
            "seed {seed}: oracle mismatch {:.3e}",
            (&u - &u_oracle).norm()
        );
    }
    let elapsed = started.elapsed().as_secs_f64();
    assert!(elapsed < 10.0, "took {elapsed:.3}s");
    assert!(checked >= 40, "only {checked} full-rank instances of {built}");
    println!(
        "ACCEPTANCE 2 PASS: {built} distributions built, {checked} full-rank instances exact vs oracle in {elapsed:.2}s"
    );
}

/// Criterion 3: fixed-base non-redundant reduction identity
/// K_Δq̇ P J = J⁻¹ P_Δ J within 1e-10 on 50 random states.
#[test]
fn acceptance_3_kinematic_reduction_identity() {
    let mut done = 0;
    let mut seed = 0u64;
    while done < 50 {
        seed += 1;
        let (model, state, partition, configs) = random_instance(1000 + seed, 3, false, (0, 1, 0));
        let dist = build_distribution(&model, &state, &partition, &configs).unwrap();
        let j = dist.impacting_jacobian().clone();
        if j.clone().lu().determinant().abs() < 1e-4 {
            continue; // stay away from kinematic singularities
        }
        let p = configs[0].jump_projector();
        let p_dyn = DMatrix::from_fn(3, 3, |r, c| p[(r, c)]);
        let lhs = &dist.k_joint_velocity * &p_dyn * &j;
        let rhs = j.clone().lu().solve(&(&p_dyn * &j)).unwrap();
        assert!(
            (&lhs - &rhs).norm() <= 1e-10 * (1.0 + rhs.norm()),
            "seed {seed}: identity violated by {:.3e}",
            (&lhs - &rhs).norm()
        );
        done += 1;
    }
    println!("ACCEPTANCE 3 PASS: reduction identity on {done} random states");
}

/// Criterion 4: with m1 = 0 the least-squares prediction agrees with the
/// simulator's Delassus impulse resolution within 1e-6 on 50 states.
#[test]
fn acceptance_4_predictor_simulator_agreement() {
    let mut done = 0;
    let mut seed = 0u64;
    while done < 50 {
        seed += 1;
        let (model, state, partition, _) = random_instance(2000 + seed, 3, false, (0, 1, 0));
        let tip = partition.impacting[0];
        let j = model::point_jacobian(&model, &state, tip).unwrap();
        if j.view((0, 0), (3, 3)).determinant().abs() < 1e-4 {
            continue;
        }
        let restitution = 0.3 * ((seed % 4) as f64) / 3.0;
        let normal = Vector3::z();
        let configs = vec![ImpactConfig::new(restitution, normal, 0.005, 0.005).unwrap()];
        let world = sim::World::new(
            vec![sim::Surface {
                point: Vector3::zeros(),
                normal: Unit::new_normalize(normal),
                restitution,
                friction: 0.7,
            }],
            1e-3,
            5e-3,
        );
        let dist = build_distribution(&model, &state, &partition, &configs).unwrap();
        let pre = &j * &state.v;
        let target_v = -(1.0 + restitution) * normal * normal.dot(&Vector3::new(pre[0], pre[1], pre[2]));
        let target = DVector::from_vec(vec![target_v[0], target_v[1], target_v[2]]);
        let predicted = dist.solution_for_target(&target);
        let (_, post_v) = sim::resolve_impact(&world, &model, &state, &[], &[(tip, 0)], 0.0).unwrap();
        let actual = &post_v - &state.v;
        let diff = (predicted.rows(0, model.nv()) - &actual).norm();
        assert!(
            diff <= 1e-6 * (1.0 + actual.norm()),
            "seed {seed}: prediction vs simulator differ by {diff:.3e}"
        );
        done += 1;
    }
    println!("ACCEPTANCE 4 PASS: predictor matches simulator resolution on {done} states");
}

/// Criterion 5: wall-push closed loop with an infeasible reference velocity:
/// every post-impact bounded quantity within bounds + 1e-3, the QP feasible
/// at every step, slack fallbacks decaying within 3 steps, under 30 s.
#[test]
fn acceptance_5_closed_loop_constraint_soundness() {
    let started = Instant::now();
    let scenario = sim::load_scenario(&scenario_path("wall_push.json")).expect("scenario loads");
    let outcome = sim::run_closed_loop(&scenario, Some(ControlMode::ImpactAware), 0)
        .expect("closed loop runs (QP feasible at every step)");
    let elapsed = started.elapsed().as_secs_f64();
    assert!(!outcome.log.events.is_empty(), "an impact must happen");
    assert!(
        outcome.log.violations.is_empty(),
        "violations: {:?}",
        outcome
            .log
            .violations
            .iter()
            .map(|v| format!("{} {:.4}", v.what, v.value))
            .collect::<Vec<_>>()
    );
    // Slack fallbacks, if any, decayed within 3 consecutive ticks (a
    // persistent run would have been recorded as a violation above).
    assert!(elapsed < 30.0, "took {elapsed:.3}s");
    println!(
        "ACCEPTANCE 5 PASS: impact at {:.3} m/s, {} slack event(s) decayed, all post-impact bounds held, {:.1}s",
        outcome.achieved_contact_velocity,
        outcome.log.slack_events.len(),
        elapsed
    );
}

/// Criterion 6: zeroing the jump decomposition turns each of the six
/// impact-aware blocks into its baseline counterpart: sampled membership
/// over q̈ agrees on 10^4 points per family.
#[test]
fn acceptance_6_template_reduction() {
    // A standing floating-base robot with in-cone contact forces, interior
    // ZMP and interior centroidal values.
    let scenario = sim::load_scenario(&scenario_path("wall_push.json")).expect("scenario loads");
    let model = &scenario.model;
    let state = scenario.initial_state.clone();
    let nv = model.nv();
    let layout = VariableLayout::acceleration_only(nv);
    let partition = EndEffectorPartition::from_model(model);
    let configs = vec![ImpactConfig::new(0.02, -Vector3::x(), 0.005, 0.005).unwrap()];
    let dist = build_distribution(model, &state, &partition, &configs).unwrap();
    let dt = 0.005;

    let mut bounds = scenario.bounds.clone();
    bounds.angular_momentum_upper = Some(Vector3::new(8.0, 8.0, 8.0));
    let zero = |rows: usize| JumpDecomposition::zeros("zero", rows, nv, dt);

    // Measured feet forces from a static equilibrium solve.
    let torques = {
        let mass = model::mass_matrix(model, &state).unwrap();
        let bias = model::bias_forces(model, &state).unwrap();
        let qdd = DVector::zeros(nv);
        let gen = mass * qdd + bias;
        DVector::from_fn(model.n_actuated(), |i, _| gen[model.actuated_offset() + i])
    };
    let (_, feet_forces) =
        sim::forward_dynamics(model, &state, &torques, &partition.established).unwrap();

    let mut pairs: Vec<(&str, ConstraintBlock, Option<ConstraintBlock>)> = Vec::new();

    // 1. Joint velocity: zeroed block equals the baseline velocity rows.
    let mut vel_only = bounds.clone();
    vel_only.q_lower.fill(f64::NEG_INFINITY);
    vel_only.q_upper.fill(f64::INFINITY);
    pairs.push((
        "joint_velocity",
        impact_joint_velocity_rows(model, &state, &zero(nv), &vel_only, &layout).unwrap(),
        Some(joint_kinematic_rows(model, &state, &vel_only, dt, &layout).unwrap()),
    ));
    // 2. Impulsive torque: baseline counterpart is empty (vacuous over q̈).
    pairs.push((
        "impulsive_torque",
        impact_impulsive_torque_rows(model, &state, &zero(nv), &bounds, &layout).unwrap(),
        None,
    ));
    // 3. Contact wrench cone per established contact: vacuous when the
    // measured force is inside the cone.
    let spec = ContactSpec::point_contact(0.7);
    let cone = contact_wrench_cone_rows(&spec).unwrap();
    pairs.push((
        "contact_wrench_cone",
        impact_cwc_rows(
            &cone,
            &zero(3 * partition.external().len()),
            0,
            &feet_forces[0],
            &nalgebra::Matrix3::identity(),
            &state,
            &layout,
            "impact_cwc_0",
        )
        .unwrap(),
        None,
    ));
    // 4. Angular momentum.
    let cmm = model::centroidal_momentum_matrix(model, &state).unwrap();
    pairs.push((
        "angular_momentum",
        impact_angular_momentum_rows(
            &cmm.angular(),
            &zero(3),
            &Vector3::new(8.0, 8.0, 8.0),
            &state,
            &layout,
        )
        .unwrap(),
        Some(angular_momentum_rows(model, &state, &Vector3::new(8.0, 8.0, 8.0), dt, &layout).unwrap()),
    ));
    // 5. COM velocity.
    let polygon = ComVelPolygon::rectangle(0.35, 0.35).unwrap();
    let vel_map = cmm.linear().rows(0, 2).into_owned() / cmm.total_mass();
    pairs.push((
        "com_velocity",
        impact_com_velocity_rows(&polygon, &vel_map, &zero(2), &state, &layout).unwrap(),
        Some(com_velocity_rows(&polygon, model, &state, dt, &layout).unwrap()),
    ));
    // 6. ZMP with the measured standing wrench.
    let frames = model::forward_kinematics(model, &state.q).unwrap();
    let mut w: Vector6<f64> = Vector6::zeros();
    for (k, &ee) in partition.established.iter().enumerate() {
        let p = frames.ee_poses[ee].translation.vector;
        let tau = (p - scenario.wrench_origin).cross(&feet_forces[k]);
        for i in 0..3 {
            w[i] += feet_forces[k][i];
            w[3 + i] += tau[i];
        }
    }
    let zmp_polygon = ZmpPolygon::from_support_points(
        &partition
            .established
            .iter()
            .map(|&ee| frames.ee_poses[ee].translation.vector)
            .collect::<Vec<_>>(),
    )
    .unwrap();
    pairs.push((
        "zmp",
        impact_zmp_rows(&zmp_polygon, &zero(6), &w, &state, &layout).unwrap(),
        None,
    ));

    let mut rng = samples::SampleStream::new(99);
    for (name, zeroed, baseline) in &pairs {
        for trial in 0..10_000 {
            let qdd = DVector::from_fn(nv, |_, _| rng.uniform(-500.0, 500.0));
            let in_zeroed = zeroed.violation(&qdd) <= 1e-9;
            let in_baseline = match baseline {
                Some(b) => b.violation(&qdd) <= 1e-9,
                None => true,
            };
            assert_eq!(
                in_zeroed, in_baseline,
                "{name}: membership disagrees at trial {trial}"
            );
        }
        let _ = dist.control_period();
    }
    println!("ACCEPTANCE 6 PASS: six block families reduce to their baselines on 10k samples each");
}

/// Criterion 7: floating free flight conserves the centroidal momentum at
/// integrator order; every impact event obeys the Newton restitution law.
#[test]
fn acceptance_7_momentum_and_restitution() {
    // Momentum conservation on a tumbling floating chain without gravity.
    let arm = samples::random_serial_arm(4242, 4, true);
    let model = impactqp::model::RobotModel::new(
        arm.links().to_vec(),
        arm.joints().to_vec(),
        arm.end_effectors().to_vec(),
        Vector3::zeros(),
    )
    .unwrap();
    let state0 = samples::random_state(&model, 17);
    let torques = DVector::zeros(model.n_actuated());
    let momentum = |s: &RobotState| {
        let cmm = model::centroidal_momentum_matrix(&model, s).unwrap();
        cmm.matrix() * &s.v
    };
    let drift = |h: f64| {
        let world = sim::World::new(Vec::new(), h, 5e-3);
        let mut s = state0.clone();
        let h0 = momentum(&s);
        for _ in 0..(0.4 / h) as usize {
            s = sim::step(&world, &model, &s, &torques, &[], &[], 0.0).unwrap().state;
        }
        (momentum(&s) - &h0).norm() / (1.0 + h0.norm())
    };
    let coarse = drift(1e-3);
    let fine = drift(1e-4);
    assert!(coarse < 0.02, "coarse drift {coarse:.3e}");
    assert!(fine < coarse / 3.0, "drift must shrink with h: {fine:.3e} vs {coarse:.3e}");

    // Restitution law on random impact resolutions.
    let mut checked_events = 0;
    for seed in 0..20u64 {
        let (model, state, partition, _) = random_instance(3000 + seed, 4, seed % 2 == 0, (0, 1, 0));
        let tip = partition.impacting[0];
        let restitution = (seed % 5) as f64 * 0.25;
        let world = sim::World::new(
            vec![sim::Surface {
                point: Vector3::zeros(),
                normal: Unit::new_normalize(Vector3::z()),
                restitution,
                friction: 0.7,
            }],
            1e-3,
            5e-3,
        );
        let (resolution, _) =
            sim::resolve_impact(&world, &model, &state, &[], &[(tip, 0)], 0.0).unwrap();
        for event in &resolution.events {
            let n = Vector3::z();
            let pre_n = n.dot(&event.pre_velocity);
            let post_n = n.dot(&event.post_velocity);
            assert!(
                (post_n + restitution * pre_n).abs() <= 1e-9 * (1.0 + pre_n.abs()),
                "seed {seed}: restitution law violated"
            );
            checked_events += 1;
        }
    }
    assert!(checked_events >= 20);

    // And on the closed-loop wall-push events.
    let scenario = sim::load_scenario(&scenario_path("wall_push.json")).unwrap();
    let outcome = sim::run_closed_loop(&scenario, Some(ControlMode::ImpactAware), 0).unwrap();
    for event in &outcome.log.events {
        let n = scenario.world.surfaces[event.surface].normal.into_inner();
        let c_r = scenario.world.surfaces[event.surface].restitution;
        let pre_n = n.dot(&event.pre_velocity);
        let post_n = n.dot(&event.post_velocity);
        assert!(
            (post_n + c_r * pre_n).abs() <= 1e-9 * (1.0 + pre_n.abs()),
            "closed-loop event at t = {:.4} violates the restitution law",
            event.time
        );
    }
    println!(
        "ACCEPTANCE 7 PASS: momentum drift {coarse:.2e} -> {fine:.2e}, {checked_events}+{} events obey the restitution law",
        outcome.log.events.len()
    );
}

/// Criterion 8: the hardware numbers are not reproducible at desk scale; the
/// substitute check is qualitative: the aware controller turns the infeasible
/// reference into a strictly smaller achieved contact velocity, while the
/// unaware controller violates at least one post-impact bound.
#[test]
fn acceptance_8_qualitative_hardware_substitute() {
    let scenario = sim::load_scenario(&scenario_path("wall_push.json")).unwrap();
    let reference = scenario.approach[0].reference_velocity;

    let aware = sim::run_closed_loop(&scenario, Some(ControlMode::ImpactAware), 0).unwrap();
    assert!(!aware.log.events.is_empty());
    assert!(
        aware.achieved_contact_velocity > 0.01,
        "aware must still make contact"
    );
    assert!(
        aware.achieved_contact_velocity < reference - 1e-3,
        "aware achieved {} must be strictly below the reference {reference}",
        aware.achieved_contact_velocity
    );
    assert!(aware.log.violations.is_empty());

    let unaware = sim::run_closed_loop(&scenario, Some(ControlMode::Baseline), 0).unwrap();
    assert!(!unaware.log.events.is_empty());
    assert!(
        !unaware.log.violations.is_empty(),
        "the unaware controller must violate at least one post-impact bound"
    );
    println!(
        "ACCEPTANCE 8 PASS: desk-scale substitute (no published robot model for the hardware numbers): \
aware {:.3} m/s < reference {:.1} m/s with 0 violations; unaware {:.3} m/s with {} violation(s): {}",
        aware.achieved_contact_velocity,
        reference,
        unaware.achieved_contact_velocity,
        unaware.log.violations.len(),
        unaware
            .log
            .violations
            .iter()
            .map(|v| v.what.clone())
            .collect::<Vec<_>>()
            .join(", ")
    );
}
