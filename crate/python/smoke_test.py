"""Smoke test for the cocarry Python module.

Build and install first:  maturin develop -m crates/py/Cargo.toml --release
Optional: pass a model checkpoint path to also exercise rollouts.
"""

import math
import sys

import cocarry


def main() -> None:
    maps = cocarry.maps()
    assert len(maps) == 63, len(maps)
    assert len(cocarry.unseen_maps()) > 0
    m = maps[0]
    assert cocarry.find_map(m.id).id == m.id

    # Physics: zero input decays the speed.
    s = cocarry.TableState(m.initial_pose, lin_vel=(1.0, 0.0))
    for _ in range(10):
        nxt = cocarry.step(s, (0.0, 0.0), (0.0, 0.0))
        assert math.hypot(*nxt.lin_vel) < math.hypot(*s.lin_vel)
        s = nxt

    # Scripted episode, replay and JSONL round trip.
    traj = cocarry.scripted_episode(m.id, "above", seed=3)
    assert traj.outcome == "success", traj.outcome
    replayed = cocarry.replay(traj)
    assert [r.pose.x for r in replayed] == [p.x for p in traj.poses()]
    again = cocarry.Trajectory.from_jsonl(traj.to_jsonl())
    assert again.to_jsonl() == traj.to_jsonl()
    assert len(traj.interaction_forces()) == len(traj) - 1

    # Metrics.
    a = [[0.1 * i, math.sin(i)] for i in range(50)]
    assert cocarry.frechet_distance(a, a) < 1e-8
    assert cocarry.interaction_force((1.0, 0.0), (1.0, 0.0), 0.0) == 0.0
    assert cocarry.interaction_force((1.0, 0.0), (-1.0, 0.0), 0.0) == 8.0

    plan = cocarry.rrt_plan(m.id, seed=1)
    assert plan is not None and not any(m.collides(p) for p in plan)
    fd, per_axis = cocarry.fd_pose_batches([plan], [traj.poses()])
    assert fd >= 0.0 and len(per_axis) == 3

    if len(sys.argv) > 1:
        model = cocarry.VrnnModel.load(sys.argv[1])
        samples = model.rollout(traj, n_samples=4, horizon=30, seed=0)
        assert len(samples) == 4 and all(len(s) == 31 for s in samples)
        var = cocarry.temporal_variance(samples)
        print("rollout variance", var)

    print("python smoke test passed")


if __name__ == "__main__":
    main()
