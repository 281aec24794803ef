//! Scripted carriers used as demonstrators and as the simulated human
//! partner. Each agent is a noisy proportional navigator that drives straight
//! for a while, then passes the blocking obstacle on one side.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{run_episode, AgentAction, Outcome, Policy, SimParams, Trajectory};
use crate::world::{wrap_angle, MapConfig, ObservationFrame, TableState, Vec2};

/// Side on which the blocking obstacle is passed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Larger y.
    Above,
    Below,
}

impl Mode {
    pub fn sign(self) -> f64 {
        match self {
            Mode::Above => 1.0,
            Mode::Below => -1.0,
        }
    }

    pub fn random(rng: &mut impl Rng) -> Self {
        if rng.random_bool(0.5) {
            Mode::Above
        } else {
            Mode::Below
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Robot,
    Human,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NavStyle {
    /// Cruise speed, m/s.
    pub speed: f64,
    /// Ticks of straight driving before turning toward the first via point.
    pub fork_tick: u64,
    /// Stationary std of the Ornstein-Uhlenbeck action noise.
    pub noise_std: f64,
    /// Mean reversion rate of the noise, 1/s.
    pub noise_rate: f64,
    /// Lateral clearance added to the obstacle half extent at via points.
    pub clearance: f64,
    pub heading_gain: f64,
    pub heading_damping: f64,
    pub velocity_gain: f64,
}

impl Default for NavStyle {
    fn default() -> Self {
        NavStyle {
            speed: 1.3,
            fork_tick: 50,
            noise_std: 0.05,
            noise_rate: 2.0,
            clearance: 0.8,
            heading_gain: 2.0,
            heading_damping: 0.6,
            velocity_gain: 4.0,
        }
    }
}

impl NavStyle {
    /// Randomized demonstrator style.
    pub fn sample(rng: &mut impl Rng) -> Self {
        NavStyle {
            speed: rng.random_range(1.1..1.6),
            fork_tick: rng.random_range(40..=60),
            clearance: rng.random_range(0.7..0.95),
            ..NavStyle::default()
        }
    }
}

/// Index of the largest obstacle; ties go to the lowest index.
pub fn blocking_obstacle(map: &MapConfig) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, o) in map.obstacles.iter().enumerate() {
        if best.is_none_or(|b| o.half_extent > map.obstacles[b].half_extent) {
            best = Some(i);
        }
    }
    best
}

/// Via points passing the blocking obstacle on `mode`'s side, then the goal.
pub fn route(map: &MapConfig, mode: Mode, clearance: f64) -> Vec<Vec2> {
    let mut out = Vec::with_capacity(3);
    if let Some(i) = blocking_obstacle(map) {
        let o = &map.obstacles[i];
        let (lo, hi) = (map.bounds.min.y + 0.6, map.bounds.max.y - 0.6);
        let y = (o.center.y + mode.sign() * (o.half_extent + clearance)).clamp(lo, hi);
        out.push(Vec2::new(o.center.x - o.half_extent - 1.0, y));
        out.push(Vec2::new(o.center.x + o.half_extent + 0.6, y));
    }
    out.push(map.goal.center);
    out
}

/// One end of the table following a route. Each agent supplies half of the
/// force needed to track the desired velocity plus its share of the
/// heading-alignment torque.
#[derive(Debug, Clone)]
pub struct ScriptedAgent {
    role: Role,
    mode: Mode,
    style: NavStyle,
    route: Vec<Vec2>,
    next: usize,
    params: SimParams,
    noise: Vec2,
    rng: ChaCha8Rng,
}

impl ScriptedAgent {
    pub fn new(
        role: Role,
        mode: Mode,
        style: NavStyle,
        map: &MapConfig,
        params: &SimParams,
        seed: u64,
    ) -> Self {
        ScriptedAgent {
            role,
            mode,
            style,
            route: route(map, mode, style.clearance),
            next: 0,
            params: *params,
            noise: Vec2::ZERO,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    fn desired_velocity(&mut self, tick: u64, pos: Vec2) -> Vec2 {
        while self.next + 1 < self.route.len()
            && (pos.x > self.route[self.next].x || (self.route[self.next] - pos).norm() < 0.5)
        {
            self.next += 1;
        }
        let goal = *self.route.last().expect("route ends at the goal");
        if tick < self.style.fork_tick && self.route.len() > 1 && pos.x < self.route[0].x - 0.8 {
            let ahead = Vec2::new(self.route[0].x.max(pos.x + 1.0), pos.y);
            return (ahead - pos) * (self.style.speed / (ahead - pos).norm());
        }
        let target = self.route[self.next];
        let d = target - pos;
        let dist = d.norm();
        if dist < 1e-9 {
            return Vec2::ZERO;
        }
        let to_goal = (goal - pos).norm();
        let speed = self.style.speed * (to_goal / 1.0).clamp(0.35, 1.0);
        d * (speed / dist)
    }
}

impl Policy for ScriptedAgent {
    fn act(&mut self, tick: u64, state: &TableState, _history: &[ObservationFrame]) -> AgentAction {
        let p = self.params;
        let pos = state.pose.position();
        let v_des = self.desired_velocity(tick, pos);
        let force =
            v_des * p.lin_damping + (v_des - state.lin_vel) * (self.style.velocity_gain * p.mass);

        let mut torque = -self.style.heading_damping * state.ang_vel;
        if v_des.norm() > 0.2 {
            let err = wrap_angle(v_des.y.atan2(v_des.x) - state.pose.theta);
            torque += self.style.heading_gain * err;
        }
        let axis = state.pose.axis();
        let normal = Vec2::new(-axis.y, axis.x);
        let side = match self.role {
            Role::Robot => 1.0,
            Role::Human => -1.0,
        };
        let lateral = normal * (side * torque / p.table_length);

        let dt = p.dt;
        let rate = self.style.noise_rate;
        let kick = self.style.noise_std * (2.0 * rate * dt).sqrt();
        let e = Vec2::new(
            StandardNormal.sample(&mut self.rng),
            StandardNormal.sample(&mut self.rng),
        );
        self.noise = self.noise * (1.0 - rate * dt) + e * kick;

        let a = (force * 0.5 + lateral) * (1.0 / p.force_scale) + self.noise;
        AgentAction::new(a.x, a.y)
    }
}

/// A demonstrator team sharing one mode and style, with independent noise.
pub fn demo_pair(
    map: &MapConfig,
    params: &SimParams,
    mode: Mode,
    style: NavStyle,
    seed: u64,
) -> (ScriptedAgent, ScriptedAgent) {
    (
        ScriptedAgent::new(Role::Robot, mode, style, map, params, seed.wrapping_mul(2)),
        ScriptedAgent::new(
            Role::Human,
            mode,
            style,
            map,
            params,
            seed.wrapping_mul(2) + 1,
        ),
    )
}

/// Simulated human partner with a randomly preferred mode. It steers the
/// table heading alone, so its heading gains are doubled.
pub fn noisy_human(map: &MapConfig, params: &SimParams, seed: u64) -> ScriptedAgent {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9);
    let mode = Mode::random(&mut rng);
    let base = NavStyle::sample(&mut rng);
    let style = NavStyle {
        noise_std: 0.08,
        heading_gain: 2.0 * base.heading_gain,
        heading_damping: 2.0 * base.heading_damping,
        ..base
    };
    ScriptedAgent::new(Role::Human, mode, style, map, params, seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoMeta {
    pub map_id: String,
    pub mode: Mode,
    pub seed: u64,
}

/// Successful scripted demonstrations, cycling through `maps`. Failed
/// attempts are discarded; gives up after `20 * count` attempts.
pub fn collect_demos(
    maps: &[MapConfig],
    params: &SimParams,
    count: usize,
    max_ticks: u64,
    seed: u64,
) -> Result<(Vec<Trajectory>, Vec<DemoMeta>)> {
    if maps.is_empty() {
        return Err(Error::Invalid("no maps to collect on".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut trajs, mut meta) = (Vec::with_capacity(count), Vec::with_capacity(count));
    let mut attempts = 0usize;
    while trajs.len() < count {
        if attempts >= 20 * count.max(1) {
            return Err(Error::Invalid(format!(
                "only {} of {count} demonstrations succeeded in {attempts} attempts",
                trajs.len()
            )));
        }
        let map = &maps[trajs.len() % maps.len()];
        let mode = Mode::random(&mut rng);
        let style = NavStyle::sample(&mut rng);
        let ep_seed: u64 = rng.random();
        attempts += 1;
        let (mut a, mut b) = demo_pair(map, params, mode, style, ep_seed);
        let t = run_episode(&mut a, &mut b, map, params, max_ticks)?;
        if t.outcome == Outcome::Success {
            trajs.push(t);
            meta.push(DemoMeta {
                map_id: map.id.clone(),
                mode,
                seed: ep_seed,
            });
        }
    }
    Ok((trajs, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{generate_maps, unseen_maps};

    #[test]
    fn route_passes_on_requested_side() {
        let map = &generate_maps()[0];
        let o = &map.obstacles[blocking_obstacle(map).unwrap()];
        let up = route(map, Mode::Above, 0.8);
        let down = route(map, Mode::Below, 0.8);
        assert_eq!(up.len(), 3);
        assert!(up[0].y > o.center.y + o.half_extent && down[0].y < o.center.y - o.half_extent);
        assert_eq!(up[2], map.goal.center);
    }

    fn side_at_obstacle(t: &Trajectory, map: &MapConfig) -> f64 {
        let o = &map.obstacles[blocking_obstacle(map).unwrap()];
        let p = t
            .poses()
            .into_iter()
            .min_by(|a, b| {
                (a.x - o.center.x)
                    .abs()
                    .total_cmp(&(b.x - o.center.x).abs())
            })
            .unwrap();
        p.y - o.center.y
    }

    #[test]
    fn demonstrators_mostly_succeed_in_both_modes() {
        let params = SimParams::default();
        let maps: Vec<MapConfig> = generate_maps().into_iter().chain(unseen_maps()).collect();
        let mut ok = 0;
        for (i, map) in maps.iter().enumerate() {
            for mode in [Mode::Above, Mode::Below] {
                let style = NavStyle::default();
                let (mut a, mut b) = demo_pair(map, &params, mode, style, i as u64);
                let t = run_episode(&mut a, &mut b, map, &params, 900).unwrap();
                if t.outcome == Outcome::Success {
                    ok += 1;
                    assert!(
                        side_at_obstacle(&t, map) * mode.sign() > 0.0,
                        "{} {mode:?}",
                        map.id
                    );
                }
            }
        }
        assert!(
            ok as f64 >= 0.9 * (2 * maps.len()) as f64,
            "{ok} of {}",
            2 * maps.len()
        );
    }

    #[test]
    fn collection_is_seeded() {
        let maps = generate_maps();
        let p = SimParams::default();
        let (a, ma) = collect_demos(&maps[..3], &p, 4, 900, 1).unwrap();
        let (b, mb) = collect_demos(&maps[..3], &p, 4, 900, 1).unwrap();
        assert_eq!((a, ma.clone()), (b, mb));
        assert_eq!(ma[3].map_id, maps[0].id);
        assert!(collect_demos(&[], &p, 1, 900, 1).is_err());
    }
}
