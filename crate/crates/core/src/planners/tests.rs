use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::datasets::generate_maps;
use crate::vrnn::{HyperParams, Normalizer, VrnnModel, VrnnParams};
use crate::world::{Bounds, GoalRegion, ObservationFrame, Obstacle, Vec2};

fn open_map() -> MapConfig {
    MapConfig {
        id: "open".into(),
        initial_pose: Pose2::new(1.5, 4.0, 0.0),
        obstacles: vec![],
        goal: GoalRegion {
            center: Vec2::new(9.0, 4.0),
            radius: 0.5,
        },
        bounds: Bounds::default(),
    }
}

fn at(x: f64, y: f64) -> TableState {
    TableState::at_rest(Pose2::new(x, y, 0.3))
}

#[test]
fn plan_validation_and_targets() {
    let wp = |tick, x| Waypoint {
        tick,
        pose: Pose2::new(x, 0.0, 0.0),
    };
    assert!(Plan::new(vec![]).is_err());
    assert!(Plan::new(vec![wp(3, 0.0), wp(3, 1.0)]).is_err());
    let plan = Plan::new(vec![wp(0, 0.0), wp(10, 1.0), wp(20, 2.0)]).unwrap();
    assert_eq!(plan.target_at(0).x, 0.0);
    assert_eq!(plan.target_at(1).x, 1.0);
    assert_eq!(plan.target_at(10).x, 1.0);
    assert_eq!(plan.target_at(500).x, 2.0);
    let back: Plan = serde_json::from_str(&plan.to_json().unwrap()).unwrap();
    assert_eq!(back, plan);
    assert!(serde_json::from_str::<Plan>("[]").is_err());
}

#[test]
fn p_controller_examples() {
    let s = at(2.0, 3.0);
    assert_eq!(
        p_controller(&s, &Pose2::new(2.0, 3.0, 1.0), 3.0),
        AgentAction::ZERO
    );
    let a = p_controller(&s, &Pose2::new(2.3, 2.8, 0.0), 2.0);
    assert!((a.fx - 0.6).abs() < 1e-12 && (a.fy + 0.4).abs() < 1e-12);
    assert_eq!(
        p_controller(&s, &Pose2::new(7.0, 3.0, 0.0), 1.0),
        AgentAction::new(1.0, 0.0)
    );
}

#[test]
fn dec_rrt_policy_examples() {
    let plan = Plan::new(vec![
        Waypoint {
            tick: 0,
            pose: Pose2::new(2.0, 3.0, 0.0),
        },
        Waypoint {
            tick: 5,
            pose: Pose2::new(3.0, 3.0, 2.0),
        },
    ])
    .unwrap();
    let s = at(2.0, 3.0);
    assert_eq!(dec_rrt_policy(&plan, &s, 0, 1.0), AgentAction::ZERO);
    assert_eq!(
        dec_rrt_policy(&plan, &s, 3, 1.0),
        AgentAction::new(1.0, 0.0)
    );
    assert_eq!(
        dec_rrt_policy(&plan, &at(3.0, 3.0), 99, 1.0),
        AgentAction::ZERO
    );
}

#[test]
fn cost_examples() {
    let map = &generate_maps()[0];
    let g = TableGeometry::default();
    let cp = CostParams::default();
    let start = Pose2::new(8.0, 4.0, 0.0);
    let reach = [start, Pose2::new(9.5, 4.0, 0.0), Pose2::new(10.5, 4.0, 0.0)];
    let short = [start, Pose2::new(8.2, 4.0, 0.0), Pose2::new(8.5, 4.0, 0.0)];
    assert!(cost(&reach, map, &g, &cp) < cost(&short, map, &g, &cp));

    let o = map.obstacles[0].center;
    let clean = [
        Pose2::new(3.0, 1.0, 0.0),
        Pose2::new(4.0, 1.0, 0.0),
        Pose2::new(4.0, 1.5, 0.0),
    ];
    let mut dirty = clean;
    dirty[1] = Pose2::new(o.x, o.y, 0.0);
    let d_end = (Vec2::new(4.0, 1.5) - map.goal.center).norm();
    let d_start = (Vec2::new(3.0, 1.0) - map.goal.center).norm();
    let hand = 1.0 * d_end - 0.5 * (d_start - d_end);
    assert!((cost(&clean, map, &g, &cp) - hand).abs() < 1e-12);
    // The colliding middle pose does not move the endpoints.
    let dirty_hand = 1.0 * d_end + 100.0 - 0.5 * (d_start - d_end);
    assert!((cost(&dirty, map, &g, &cp) - dirty_hand).abs() < 1e-12);
    assert_eq!(cost(&[], map, &g, &cp), 0.0);
}

#[test]
fn selection_prefers_the_only_clean_goal_rollout() {
    let map = &generate_maps()[0];
    let g = TableGeometry::default();
    let o = map.obstacles[0].center;
    let start = Pose2::new(3.0, 4.0, 0.0);
    let mut batch: Vec<Vec<Pose2>> = (0..5)
        .map(|i| {
            vec![
                start,
                Pose2::new(o.x, o.y + 0.1 * i as f64, 0.0),
                Pose2::new(10.5, 4.0, 0.0),
            ]
        })
        .collect();
    batch.insert(
        3,
        vec![start, Pose2::new(6.0, 6.5, 0.0), Pose2::new(10.5, 4.0, 0.0)],
    );
    let costs: Vec<f64> = batch
        .iter()
        .map(|r| cost(r, map, &g, &CostParams::default()))
        .collect();
    assert_eq!(select_rollout(&costs), Some(3));
    assert_eq!(select_rollout(&[2.0, 1.0, 1.0]), Some(1));
    assert_eq!(select_rollout(&[]), None);
}

proptest! {
    #[test]
    fn argmin_is_shift_invariant(costs in prop::collection::vec(-50.0..50.0f64, 1..20), shift in 0.0..100.0f64) {
        let shifted: Vec<f64> = costs.iter().map(|c| c + shift).collect();
        let i = select_rollout(&costs).unwrap();
        let j = select_rollout(&shifted).unwrap();
        // Shifting can merge near-ties through rounding; the chosen cost must stay minimal.
        prop_assert!((costs[j] - costs[i]).abs() < 1e-9);
        prop_assert!(costs.iter().all(|c| *c >= costs[i]));
    }
}

fn check_path(plan: &Plan, map: &MapConfig, g: &TableGeometry) {
    let w = plan.waypoints();
    assert!(check_success(
        &TableState::at_rest(w.last().unwrap().pose),
        &map.goal
    ));
    for pair in w.windows(2) {
        assert!(pair[1].tick > pair[0].tick);
        let n = 64;
        for i in 0..=n {
            let s = i as f64 / n as f64;
            let dth = crate::world::wrap_angle(pair[1].pose.theta - pair[0].pose.theta);
            let p = Pose2::new(
                pair[0].pose.x + s * (pair[1].pose.x - pair[0].pose.x),
                pair[0].pose.y + s * (pair[1].pose.y - pair[0].pose.y),
                pair[0].pose.theta + s * dth,
            );
            assert!(!pose_collides(&p, map, g));
        }
    }
}

use crate::world::check_success;

#[test]
fn rrt_finds_collision_free_plans() {
    let g = TableGeometry::default();
    let p = RrtParams::default();
    let open = open_map();
    let out = rrt_plan(open.initial_pose, &open, &g, &p, 0, 1.0 / 30.0).unwrap();
    check_path(out.plan().unwrap(), &open, &g);

    let map = &generate_maps()[5];
    let out = rrt_plan(
        map.initial_pose,
        map,
        &g,
        &RrtParams { seed: 3, ..p },
        7,
        1.0 / 30.0,
    )
    .unwrap();
    let plan = out.plan().unwrap();
    check_path(plan, map, &g);
    assert_eq!(plan.waypoints()[0].tick, 7);
    // Timed at the nominal speed, up to rounding of each stamp.
    let w = plan.waypoints();
    let len: f64 = w
        .windows(2)
        .map(|p| (p[1].pose.position() - p[0].pose.position()).norm())
        .sum();
    let secs = (w.last().unwrap().tick - 7) as f64 / 30.0;
    assert!((secs - len / RRT_NOMINAL_SPEED).abs() < 0.05 + w.len() as f64 / 30.0);
    assert_eq!(
        rrt_plan(
            map.initial_pose,
            map,
            &g,
            &RrtParams { seed: 3, ..p },
            7,
            1.0 / 30.0
        )
        .unwrap(),
        out
    );
}

#[test]
fn rrt_edges_are_clear_on_every_catalog_map() {
    let g = TableGeometry::default();
    let mut found = 0;
    for map in generate_maps() {
        if let Some(plan) = rrt_plan(
            map.initial_pose,
            &map,
            &g,
            &RrtParams::default(),
            0,
            1.0 / 30.0,
        )
        .unwrap()
        .plan()
        {
            check_path(plan, &map, &g);
            found += 1;
        }
    }
    assert!(found >= 60, "{found} plans");
}

#[test]
fn rrt_rejects_bad_starts_and_reports_exhaustion() {
    let g = TableGeometry::default();
    let map = &generate_maps()[0];
    let inside = Pose2::new(map.obstacles[0].center.x, map.obstacles[0].center.y, 0.0);
    assert!(rrt_plan(inside, map, &g, &RrtParams::default(), 0, 1.0 / 30.0).is_err());

    let mut walled = open_map();
    let c = walled.goal.center;
    for (dx, dy) in [
        (-1.2, 0.0),
        (1.2, 0.0),
        (0.0, 1.2),
        (0.0, -1.2),
        (-1.2, 1.2),
        (1.2, 1.2),
        (-1.2, -1.2),
        (1.2, -1.2),
    ] {
        walled.obstacles.push(Obstacle {
            center: c + Vec2::new(dx, dy),
            half_extent: 0.6,
        });
    }
    let out = rrt_plan(
        walled.initial_pose,
        &walled,
        &g,
        &RrtParams {
            max_iters: 3000,
            ..RrtParams::default()
        },
        0,
        1.0 / 30.0,
    )
    .unwrap();
    assert_eq!(out, RrtOutcome::Exhausted { iterations: 3000 });
}

fn tiny_model() -> VrnnModel {
    let h = HyperParams {
        history_len: 4,
        window_len: 8,
        latent_dim: 2,
        enc_hidden: 8,
        small_hidden: 8,
        gru_hidden: 8,
        ..HyperParams::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let params = VrnnParams::init(&h, &mut rng);
    let mut norm = Normalizer::default();
    norm.std[..4].copy_from_slice(&[0.01, 0.01, 0.001, 0.001]);
    VrnnModel::new(h, params, norm).unwrap()
}

#[test]
fn receding_horizon_warm_up_determinism_and_composition() {
    let model = tiny_model();
    let map = &generate_maps()[0];
    let g = TableGeometry::default();
    let cfg = PlannerConfig {
        horizon: 20,
        n_samples: 6,
        waypoint_stride: 10,
        ..PlannerConfig::default()
    };
    let state = TableState::at_rest(map.initial_pose);
    let frame = ObservationFrame {
        dp: Vec2::new(0.02, 0.0),
        ..Default::default()
    };

    let mut ps = PlannerState::default();
    for _ in 0..3 {
        ps.observe(frame, 4);
    }
    let (a, same) = receding_horizon_step(&ps, &model, map, &g, &cfg, &state, 3, 9).unwrap();
    assert_eq!((a, same.plan), (AgentAction::ZERO, None));

    ps.observe(frame, 4);
    ps.observe(frame, 4);
    assert_eq!(ps.history.len(), 4);
    let (a1, s1) = receding_horizon_step(&ps, &model, map, &g, &cfg, &state, 40, 9).unwrap();
    let (a2, s2) = receding_horizon_step(&ps, &model, map, &g, &cfg, &state, 40, 9).unwrap();
    assert_eq!((a1, &s1), (a2, &s2));
    assert_eq!(s1.plan_birth, Some(40));

    let history: Vec<ObservationFrame> = ps.history.iter().copied().collect();
    let (plan, costs) = make_plan(&model, &history, &state, map, &g, &cfg, 40, 9).unwrap();
    assert_eq!(costs.len(), 6);
    assert_eq!(Some(&plan), s1.plan.as_ref());
    assert_eq!(plan.waypoints()[0].tick, 50);
    assert_eq!(
        a1,
        p_controller(&state, &plan.waypoints()[0].pose, cfg.gain)
    );

    // Between replans the stored plan is tracked, not recomputed.
    let (_, s3) = receding_horizon_step(&s1, &model, map, &g, &cfg, &state, 54, 10).unwrap();
    assert_eq!(s3.plan, s1.plan);
    let (a4, s4) = receding_horizon_step(&s1, &model, map, &g, &cfg, &state, 55, 10).unwrap();
    assert_eq!(s4.plan_birth, Some(55));
    assert!(a4.fx.abs() <= 1.0 && a4.fy.abs() <= 1.0);
}

#[test]
fn per_tick_poses_interpolate_between_waypoints() {
    let plan = Plan::new(vec![
        Waypoint {
            tick: 3,
            pose: Pose2::new(0.0, 0.0, 3.0),
        },
        Waypoint {
            tick: 5,
            pose: Pose2::new(2.0, 1.0, -3.0),
        },
        Waypoint {
            tick: 6,
            pose: Pose2::new(2.0, 2.0, -3.0),
        },
    ])
    .unwrap();
    let p = plan.per_tick_poses();
    assert_eq!(p.len(), 4);
    assert_eq!((p[1].x, p[1].y), (1.0, 0.5));
    // Midway across the branch cut is pi, not zero.
    assert!((p[1].theta.abs() - std::f64::consts::PI).abs() < 1e-12);
    assert_eq!(p[3], Pose2::new(2.0, 2.0, -3.0));
}

#[test]
fn rollout_end_is_goal_entry_or_closest_approach() {
    let map = open_map();
    let line = |xs: &[f64]| {
        xs.iter()
            .map(|&x| Pose2::new(x, 4.2, 0.0))
            .collect::<Vec<_>>()
    };
    // Enters the goal at index 2 and keeps going.
    assert_eq!(rollout_end(&line(&[7.0, 8.0, 8.7, 9.3, 10.5]), &map), 2);
    // Passes beside the goal without entering it.
    let beside: Vec<Pose2> = [7.0, 8.5, 9.1, 10.0, 11.0]
        .iter()
        .map(|&x| Pose2::new(x, 4.8, 0.0))
        .collect();
    assert_eq!(rollout_end(&beside, &map), 2);
    // Still approaching: the last pose.
    assert_eq!(rollout_end(&line(&[3.0, 4.0, 5.0]), &map), 2);
}

#[test]
fn overshooting_rollout_is_scored_up_to_the_goal() {
    // Past the goal the rollout leaves the map; scoring stops at goal entry,
    // so it is not charged for that collision.
    let map = open_map();
    let g = TableGeometry::default();
    let poses: Vec<Pose2> = (0..=40)
        .map(|k| Pose2::new(8.0 + 0.1 * k as f64, 4.0, 0.0))
        .collect();
    assert!(cost(&poses, &map, &g, &CostParams::default()) > 50.0);
    let end = rollout_end(&poses, &map);
    assert!(cost(&poses[..=end], &map, &g, &CostParams::default()) < 50.0);
}
