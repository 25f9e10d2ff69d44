import logging

import numpy as np
import pytest

from mapml import Dataset, Metric, TrainConfig, evaluate, full_loss_all, \
    init_latents, train_mapml, train_random_triplet_baseline

from conftest import make_blobs, random_instance


def trace_non_increasing(trace, rtol=1e-6):
    return all(b <= a + rtol * abs(a) for a, b in zip(trace, trace[1:]))


class TestTrainMapml:
    def test_k0_returns_identity_and_init(self):
        rng = np.random.default_rng(0)
        data = make_blobs(rng, 10, [[0.0, 0.0], [4.0, 4.0]], 0.5)
        cfg = TrainConfig(tau=20.0, outer_iters=0, rng_seed=5)
        res = train_mapml(data, cfg)
        np.testing.assert_allclose(res.metric.matrix, np.eye(2), atol=1e-12)
        assert res.loss_trace.shape == (1,)
        assert res.wall_times.shape == (0, 2)

    def test_separable_blobs_beat_euclidean(self):
        rng = np.random.default_rng(1)
        centers = [[0.0, 0.0], [2.6, 0.5]]
        train = make_blobs(rng, 30, centers, 0.9)
        test = make_blobs(rng, 25, centers, 0.9)
        cfg = TrainConfig(tau=10.0, outer_iters=5, inner_iters=2000,
                          lam=10.0, delta=10.0, gamma=0.5, rng_seed=7)
        res = train_mapml(train, cfg)
        assert trace_non_increasing(res.loss_trace)
        learned = evaluate(test, train.features, train.labels, res.metric, k=3)
        euclid = evaluate(test, train.features, train.labels,
                          Metric.identity(2), k=3)
        assert learned.error_rate <= euclid.error_rate

    def test_point_classes_reach_zero_loss(self):
        # every class collapsed to one point, separation > 1: margins are 0
        # and all latent distances exceed the unit margin, so loss is 0
        feats = np.array([[0.0, 0.0]] * 6 + [[2.0, 0.0]] * 6)
        labels = np.array([0] * 6 + [1] * 6)
        data = Dataset(feats, labels)
        cfg = TrainConfig(tau=34.0, outer_iters=2, inner_iters=100, rng_seed=0)
        res = train_mapml(data, cfg)
        assert res.latent_model.per_class_counts.tolist() == [2, 2]
        np.testing.assert_allclose(res.loss_trace, 0.0, atol=1e-12)

    def test_monotone_on_random_instances(self):
        rng = np.random.default_rng(2)
        for seed in range(5):
            data = random_instance(rng)
            cfg = TrainConfig(tau=15.0, outer_iters=6, inner_iters=1000,
                              lam=1.0, delta=10.0, rng_seed=seed)
            res = train_mapml(data, cfg)
            assert trace_non_increasing(res.loss_trace), res.loss_trace
            assert res.metric.min_eigenvalue() >= -1e-9  # finalized

    def test_half_inequalities_hold_in_debug(self, debug_checks, caplog):
        rng = np.random.default_rng(3)
        data = random_instance(rng)
        cfg = TrainConfig(tau=15.0, outer_iters=5, inner_iters=1000, rng_seed=1)
        with caplog.at_level(logging.WARNING, logger="mapml.driver"):
            train_mapml(data, cfg)
        assert not caplog.records

    def test_loss_trace_margins_use_previous_metric(self):
        # the recorded loss must equal full_loss_all under the new metric
        # with the latent model's stage-exit margins (computed under the
        # previous metric)
        rng = np.random.default_rng(4)
        data = random_instance(rng)
        cfg = TrainConfig(tau=15.0, outer_iters=3, inner_iters=500, rng_seed=2)
        res = train_mapml(data, cfg)
        assert res.loss_trace[-1] == pytest.approx(
            full_loss_all(res.metric, res.latent_model), rel=1e-12, abs=1e-12)

    def test_reproducible_bitwise(self):
        rng = np.random.default_rng(5)
        data = random_instance(rng)
        cfg = TrainConfig(tau=20.0, outer_iters=4, inner_iters=600, rng_seed=11)
        a = train_mapml(data, cfg)
        b = train_mapml(data, cfg)
        np.testing.assert_array_equal(a.loss_trace, b.loss_trace)
        np.testing.assert_array_equal(a.metric.matrix, b.metric.matrix)
        np.testing.assert_array_equal(a.latent_model.latents, b.latent_model.latents)

    def test_log_sink_records(self):
        rng = np.random.default_rng(6)
        data = random_instance(rng)
        cfg = TrainConfig(tau=15.0, outer_iters=4, inner_iters=200, rng_seed=3)
        records = []
        train_mapml(data, cfg, log_sink=records.append)
        assert [r["k"] for r in records] == [1, 2, 3, 4]
        for r in records:
            assert {"k", "loss", "active_set_size", "latent_seconds",
                    "metric_seconds", "active_set_seconds"} <= set(r)

    def test_non_finite_loss_raises(self):
        feats = np.array([[0.0, 0.0]] * 4 + [[1e200, 1e200]] * 4)
        data = Dataset(feats, [0] * 4 + [1] * 4)
        cfg = TrainConfig(tau=50.0, outer_iters=1, inner_iters=100)
        with np.errstate(over="ignore", invalid="ignore"):
            with pytest.raises(FloatingPointError):
                train_mapml(data, cfg)

    def test_wall_times_recorded(self):
        rng = np.random.default_rng(7)
        data = random_instance(rng)
        cfg = TrainConfig(tau=15.0, outer_iters=3, inner_iters=200, rng_seed=4)
        res = train_mapml(data, cfg)
        assert res.wall_times.shape == (3, 2)
        assert (res.wall_times >= 0).all()


class TestRandomTripletBaseline:
    def test_zero_steps_identity(self):
        rng = np.random.default_rng(8)
        data = make_blobs(rng, 5, [[0.0], [3.0]], 0.3)
        cfg = TrainConfig(inner_iters=100)
        res = train_random_triplet_baseline(data, cfg, steps=0)
        np.testing.assert_array_equal(res.metric.matrix, np.eye(1))
        assert res.loss_trace.size == 0

    def test_trivial_latent_model(self):
        rng = np.random.default_rng(9)
        data = make_blobs(rng, 6, [[0.0, 1.0], [3.0, -1.0]], 0.4)
        cfg = TrainConfig(inner_iters=50)
        res = train_random_triplet_baseline(data, cfg)
        lm = res.latent_model
        assert lm.m == data.n
        np.testing.assert_allclose(lm.cluster_margins, 0.0)
        # each point is its own latent
        np.testing.assert_array_equal(lm.latents[lm.membership], data.features)
        np.testing.assert_array_equal(lm.latent_labels[lm.membership], data.labels)

    def test_deterministic(self):
        rng = np.random.default_rng(10)
        data = make_blobs(rng, 8, [[0.0, 0.0], [2.0, 2.0]], 0.6)
        cfg = TrainConfig(inner_iters=400, rng_seed=13)
        a = train_random_triplet_baseline(data, cfg)
        b = train_random_triplet_baseline(data, cfg)
        np.testing.assert_array_equal(a.metric.matrix, b.metric.matrix)

    def test_small_class_rejected(self):
        data = Dataset([[0.0], [1.0], [2.0]], [0, 0, 1])
        cfg = TrainConfig(inner_iters=10)
        with pytest.raises(ValueError, match="fewer than 2"):
            train_random_triplet_baseline(data, cfg)

    def test_output_contracts(self):
        rng = np.random.default_rng(11)
        data = make_blobs(rng, 10, [[0.0, 0.0], [1.0, 1.0]], 0.8)
        cfg = TrainConfig(inner_iters=500, delta=3.0, rng_seed=2)
        res = train_random_triplet_baseline(data, cfg)
        assert np.linalg.norm(res.metric.matrix) <= cfg.delta + 1e-9
        assert res.metric.min_eigenvalue() >= -1e-9


class TestInitConsistency:
    def test_initial_loss_matches_init_latents(self):
        # loss_trace[0] is the universe loss of the freshly initialized model
        rng = np.random.default_rng(12)
        data = random_instance(rng)
        cfg = TrainConfig(tau=20.0, outer_iters=0, rng_seed=21)
        res = train_mapml(data, cfg)
        seeds = np.random.SeedSequence(cfg.rng_seed).spawn(1)
        model = init_latents(data, cfg.tau, int(seeds[0].generate_state(1)[0]))
        assert res.loss_trace[0] == pytest.approx(
            full_loss_all(Metric.identity(data.d), model), rel=1e-12)
