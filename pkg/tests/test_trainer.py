"""Policy-gradient update, rollouts, the training loop and evaluation."""
import numpy as np
import pytest
import scipy.sparse as sparse
from hypothesis import given, settings, strategies as st

from mazebase.cli import oracle_policy, random_policy
from mazebase.encoding import Vocabulary
from mazebase.envs import MAZE_TASKS
from mazebase.neural import checkpoint as ckpt
from mazebase.neural.models import LinearModel, MLPModel, NumericError
from mazebase.trainer import (
    ShardJob,
    TrainConfig,
    Trainer,
    Trajectory,
    _start_episode,
    compute_update,
    evaluate,
    gradient_sum,
)

import criteria


class OneHot:
    def __init__(self, dim):
        self.dim = dim

    def assemble(self, rows):
        n = len(rows)
        return sparse.csr_matrix((np.ones(n), np.asarray(rows, dtype=np.int64), np.arange(n + 1)),
                                 shape=(n, self.dim))


def traj(states, actions, rewards):
    return Trajectory("t", list(states), np.asarray(actions), np.arange(len(actions)),
                      np.asarray(rewards, dtype=float), True, float(np.sum(rewards)))


def small_config(**kw):
    base = dict(tasks=["goto"], model="mlp", batch_size=32, n_batches=10, hidden=8, shard_size=16,
                ranges={"goto": {"width": (3, 3), "height": (3, 3)}}, curriculum=False, seed=5)
    base.update(kw)
    return TrainConfig(**base)


class TestReturns:
    @settings(max_examples=100, deadline=None)
    @given(rewards=st.lists(st.floats(-5, 5), min_size=1, max_size=50))
    def test_suffix_identity(self, rewards):
        t = traj([0] * len(rewards), [0] * len(rewards), rewards)
        R = t.returns()
        nxt = np.append(R[1:], 0.0)
        assert np.allclose(R, np.asarray(rewards) + nxt, atol=1e-9)

    def test_example(self):
        assert np.allclose(traj([0, 0, 0], [0, 0, 0], [-0.1, -0.3, -0.1]).returns(), [-0.5, -0.4, -0.1])

    def test_multi_agent_decisions_share_step_return(self):
        t = Trajectory("t", [0, 1, 0], np.array([1, 2, 0]), np.array([0, 0, 1]), np.array([-1.0, -2.0]),
                       True, -3.0)
        assert np.allclose(t.decision_returns(), [-3.0, -3.0, -2.0])


class TestComputeUpdate:
    def test_single_step_hand_formula(self):
        m = LinearModel(1, 2, params={"W_out": np.array([[0.4, -0.1]]), "b_out": np.array([0.2, 0.0]),
                                      "W_base": np.array([[0.3]]), "b_base": np.array([-0.5])})
        alpha, R, a = 0.25, -0.7, 1
        g = compute_update([traj([0], [a], [R])], m, OneHot(1), alpha)
        z = np.array([0.6, -0.1])
        p = np.exp(z) / np.exp(z).sum()
        b = -0.2
        dlogp = np.eye(2)[a] - p
        assert np.allclose(g["W_out"][0], -(R - b) * dlogp, atol=1e-15)
        assert np.allclose(g["b_out"], -(R - b) * dlogp, atol=1e-15)
        assert g["W_base"][0, 0] == pytest.approx(-2 * alpha * (R - b), abs=1e-15)
        assert g["b_base"][0] == pytest.approx(-2 * alpha * (R - b), abs=1e-15)

    def test_baseline_equal_return_gives_zero(self):
        rewards = [-0.3, -0.5]
        m = LinearModel(2, 3, rng=np.random.default_rng(0))
        m.params["W_base"] = np.array([[-0.8], [-0.5]])
        m.params["b_base"] = np.zeros(1)
        g = compute_update([traj([0, 1], [2, 0], rewards)], m, OneHot(2), 0.5)
        assert all(np.allclose(v, 0, atol=1e-15) for v in g.values())

    def test_alpha_zero_leaves_baseline(self):
        m = LinearModel(3, 2, rng=np.random.default_rng(1))
        g = compute_update([traj([0, 2], [1, 1], [-0.1, -0.4])], m, OneHot(3), 0.0)
        assert not g["W_base"].any() and not g["b_base"].any()
        assert np.abs(g["W_out"]).max() > 0

    def test_alpha_does_not_touch_policy_term(self):
        rng = np.random.default_rng(2)
        m = MLPModel(4, 3, hidden=5, rng=rng)
        m.params = {k: rng.uniform(-1, 1, v.shape) for k, v in m.params.items()}
        ts = [traj([0, 3, 1], [2, 0, 1], [-0.1, -0.3, -0.2]), traj([2], [1], [-0.5])]
        g0, g1, g2 = (compute_update(ts, m, OneHot(4), a) for a in (0.0, 0.1, 0.7))
        assert np.array_equal(g0["W_out"], g2["W_out"]) and np.array_equal(g0["b_out"], g1["b_out"])
        for k in g0:  # the baseline term enters linearly in alpha
            assert np.allclose(7 * (g1[k] - g0[k]), g2[k] - g0[k], atol=1e-13)

    def test_averaged_over_episodes(self):
        m = LinearModel(2, 2, rng=np.random.default_rng(3))
        t = traj([0], [1], [-0.4])
        one = compute_update([t], m, OneHot(2), 0.03)
        two = compute_update([t, t], m, OneHot(2), 0.03)
        assert all(np.allclose(one[k], two[k], atol=1e-15) for k in one)

    def test_non_finite_names_episode(self):
        m = LinearModel(1, 2)
        t = traj([0], [0], [np.nan])
        t.episode_id = 17
        with pytest.raises(NumericError, match="17"):
            gradient_sum([t], m, OneHot(1), 0.03)

    def test_empty_batch_rejected(self):
        with pytest.raises(ValueError):
            compute_update([], LinearModel(1, 2), OneHot(1), 0.03)


class TestToyProblem:
    def test_unbiased(self):
        assert criteria.toy_unbiasedness_error(n_models=10) < 1e-10

    def test_exact_gradient_matches_finite_difference(self):
        model = criteria.toy_model(4)
        exact = criteria.toy_exact_gradient(model)

        def J(m):
            return sum(p * t.total_reward for t, p in criteria.toy_outcomes(m))

        for name in ("W_out", "b_out"):
            for idx in np.ndindex(model.params[name].shape):
                hi, lo = model.copy(), model.copy()
                hi.params[name][idx] += 1e-6
                lo.params[name][idx] -= 1e-6
                assert (J(hi) - J(lo)) / 2e-6 == pytest.approx(exact[name][idx], abs=1e-8)

    def test_outcomes_normalised(self):
        assert sum(p for _, p in criteria.toy_outcomes(criteria.toy_model(1))) == pytest.approx(1.0)

    def test_learned_baseline_reduces_variance(self):
        learned, zero = criteria.toy_variance_pair(n_batches=1000)
        assert learned <= zero


class TestRollouts:
    def test_all_maze_tasks_in_one_batch(self):
        model = LinearModel(4, 9)
        job = ShardJob(model, None, MAZE_TASKS, {}, seed=0, stream=0, batch=0, episodes=tuple(range(512)))
        seen = {_start_episode(job, e)[0].task for e in job.episodes}
        assert seen == set(MAZE_TASKS)

    def test_lengths_capped(self):
        tr = Trainer(small_config(tasks=list(MAZE_TASKS), ranges={}, batch_size=64, model="linear"))
        trajs, _ = tr.rollout_batch()
        assert len(trajs) == 64 and max(t.length for t in trajs) <= 50

    def test_batch_reproducible(self):
        a, b = Trainer(small_config()), Trainer(small_config())
        ta, ga = a.rollout_batch()
        tb, gb = b.rollout_batch()
        assert [t.total_reward for t in ta] == [t.total_reward for t in tb]
        assert all(np.array_equal(ga[k], gb[k]) for k in ga)

    def test_worker_count_invariant(self):
        a, b = Trainer(small_config()), Trainer(small_config(workers=2))
        for _ in range(2):
            a.step()
            b.step()
        b.close()
        assert all(a.model.params[k].tobytes() == b.model.params[k].tobytes() for k in a.model.params)


class TestTraining:
    def test_smoke_run_trend(self, tmp_path):
        tr = Trainer(small_config(batch_size=64, n_batches=10))
        tr.train(metrics_path=tmp_path / "m.csv")
        lines = (tmp_path / "m.csv").read_text().splitlines()
        assert lines[0].startswith("batch,task,mean_reward,success_rate,rel_reward,win_rate,cm_")
        rewards = [float(l.split(",")[2]) for l in lines[1:]]
        assert len(rewards) == 10
        assert np.polyfit(np.arange(10), rewards, 1)[0] >= 0

    def test_resume_bit_exact(self, tmp_path):
        cfg = small_config(n_batches=6, curriculum=True, window=16)
        straight = Trainer(cfg)
        for _ in range(3):
            straight.step()
        straight.save(tmp_path / "c.mzb")
        straight.step()
        resumed = Trainer.load(tmp_path / "c.mzb")
        resumed.step()
        for k in straight.model.params:
            assert straight.model.params[k].tobytes() == resumed.model.params[k].tobytes()
        for k in straight.optimizer.state:
            assert straight.optimizer.state[k].tobytes() == resumed.optimizer.state[k].tobytes()
        assert straight.curricula["goto"].to_dict() == resumed.curricula["goto"].to_dict()

    def test_numeric_abort_keeps_checkpoint(self, tmp_path):
        path = tmp_path / "c.mzb"
        tr = Trainer(small_config(n_batches=4, checkpoint_every=1))
        tr.train(checkpoint_path=path)
        before = path.read_bytes()
        tr = Trainer.load(path, n_batches=8)
        tr.model.params["b_out"][:] = np.nan
        with pytest.raises(NumericError):
            tr.train(checkpoint_path=path)
        assert path.read_bytes() == before

    def test_force_max_in_last_third(self):
        tr = Trainer(small_config(n_batches=3, curriculum=True,
                                  ranges={"goto": {"width": (3, 5), "height": (3, 5)}}))
        for _ in range(2):
            tr.step()
        assert tr.curricula["goto"].ranges()["width"] == (3, 5)

    def test_early_stop(self, tmp_path):
        tr = Trainer(small_config(n_batches=50, eval_every=1, eval_episodes=20, stop_success=0.0))
        tr.train(eval_path=tmp_path / "e.csv")
        assert tr.batch == 1 and tr.stopped

    def test_vocab_mismatch_on_load(self, tmp_path):
        Trainer(small_config(n_batches=1)).save(tmp_path / "c.mzb")
        other = Vocabulary(list(Vocabulary.default().tokens) + ["extra"])
        with pytest.raises(ckpt.CheckpointError):
            Trainer.load(tmp_path / "c.mzb", vocab=other)

    @pytest.mark.parametrize("bad", [dict(alpha=-1.0), dict(batch_size=0), dict(tasks=[]), dict(tasks=["nope"]),
                                     dict(model="cnn"), dict(tasks=["goto", "kiting"]),
                                     dict(ranges={"goto": {"width": (1, 5)}})])
    def test_config_validation(self, bad):
        with pytest.raises(ValueError):
            Trainer(small_config(**bad))

    def test_config_defaults(self):
        c = TrainConfig()
        assert (c.batch_size, c.n_batches, c.alpha, c.rms_decay) == (512, 20000, 0.03, 0.97)


class TestEvaluate:
    def test_oracle_policy_is_optimal(self):
        r = evaluate(None, "goto", 300, 11, policy=oracle_policy)
        assert r.success_rate == 1.0 and abs(r.rel_reward - 1.0) < 1e-9

    def test_oracle_policy_on_tour_tasks(self):
        for task in ("multigoals", "switches", "light_key"):
            r = evaluate(None, task, 40, 3, policy=oracle_policy)
            assert r.success_rate == 1.0 and abs(r.rel_reward - 1.0) < 1e-9

    def test_random_policy_far_from_optimal(self):
        r = evaluate(None, "goto", 300, 12, policy=random_policy,
                     ranges={"width": (10, 10), "height": (10, 10)})
        assert r.rel_reward < 0.5
        assert 0.0 <= r.success_rate <= 1.0

    def test_rejects_zero_episodes(self):
        with pytest.raises(ValueError):
            evaluate(None, "goto", 0, 0, policy=random_policy)

    def test_trainer_evaluate_is_greedy_and_repeatable(self):
        tr = Trainer(small_config())
        assert tr.evaluate(n_episodes=40) == tr.evaluate(n_episodes=40)
