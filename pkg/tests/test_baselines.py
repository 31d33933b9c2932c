import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcheck import max_rel_error
from pvess.baselines import (
    KMeansProto,
    LearnedProtoVariant,
    fit_last_layer,
    kmeans_cluster,
    map_centroid_to_state,
    train_variant,
)
from pvess.env import ObsBox
from pvess.neural import DenseNet, digest
from pvess.proto import DistillConfig, PrototypeSet

BOX = ObsBox((0.0, 0.0, 0.1, 5.0), (0.3, 200.0, 0.9, 30.0))


def encoder(seed=0, latent=8):
    return DenseNet((4, 16, latent), np.random.default_rng(seed), out_activation="tanh")


def random_obs(rng, n):
    low, high = np.array(BOX.low), np.array(BOX.high)
    return low + (high - low) * rng.random((n, 4))


class TestKMeans:
    def test_four_points_four_clusters(self):
        x = np.array([[0.0, 0], [1, 0], [0, 1], [5, 5]])
        res = kmeans_cluster(x, 4, seed=0)
        assert res.inertia[-1] == 0.0
        assert sorted(map(tuple, res.centroids)) == sorted(map(tuple, x))

    def test_blob_means(self):
        x = np.array([[0.0, 0.0], [0.0, 2.0], [10.0, 10.0], [12.0, 10.0]])
        res = kmeans_cluster(x, 2, seed=3)
        assert sorted(map(tuple, res.centroids)) == [(0.0, 1.0), (11.0, 10.0)]

    def test_deterministic(self, rng):
        x = rng.normal(size=(200, 3))
        a, b = kmeans_cluster(x, 4, seed=1), kmeans_cluster(x, 4, seed=1)
        assert np.array_equal(a.centroids, b.centroids) and np.array_equal(a.assignments, b.assignments)

    @settings(max_examples=50)
    @given(st.integers(0, 10_000))
    def test_inertia_non_increasing_and_clusters_nonempty(self, seed):
        x = np.random.default_rng(seed).normal(size=(60, 2))
        res = kmeans_cluster(x, 4, seed=seed)
        assert all(b <= a + 1e-9 for a, b in zip(res.inertia, res.inertia[1:]))
        assert len(np.unique(res.assignments)) == 4

    def test_assignments_are_nearest(self, rng):
        x = rng.normal(size=(100, 2))
        res = kmeans_cluster(x, 4)
        d2 = ((x[:, None] - res.centroids[None]) ** 2).sum(axis=2)
        assert np.array_equal(res.assignments, d2.argmin(axis=1))

    def test_too_few_points(self):
        with pytest.raises(ValueError):
            kmeans_cluster(np.zeros((3, 2)), 4)


class TestMapping:
    def test_exact_match(self, rng):
        lat = rng.normal(size=(10, 3))
        assert map_centroid_to_state(lat[6], lat) == 6

    def test_tie_goes_to_lowest_index(self):
        lat = np.array([[9.0, 9], [9, 9], [1, 0], [8, 8], [8, 8], [-1, 0]])
        assert map_centroid_to_state(np.zeros(2), lat) == 2

    def test_singleton(self):
        assert map_centroid_to_state(np.array([100.0, 100.0]), np.zeros((1, 2))) == 0

    def test_empty(self):
        with pytest.raises(ValueError):
            map_centroid_to_state(np.zeros(2), np.zeros((0, 2)))


class TestLastLayer:
    def test_recovers_known_weights(self, rng):
        x = rng.random((500, 4))
        w = rng.normal(size=(4, 4))
        assert np.max(np.abs(fit_last_layer(x, x @ w) - w)) < 1e-6

    def test_zero_targets(self, rng):
        assert np.allclose(fit_last_layer(rng.random((50, 4)), np.zeros((50, 2))), 0.0, atol=1e-12)

    def test_constant_feature_interpolates(self):
        w = fit_last_layer(np.ones((10, 1)), np.full((10, 1), 0.7))
        assert w[0, 0] == pytest.approx(0.7, abs=1e-7)

    def test_residual_matches_pseudo_inverse(self, rng):
        x = rng.random((300, 4))
        y = rng.random((300, 4))
        ours = np.sum((x @ fit_last_layer(x, y) - y) ** 2)
        oracle = np.sum((x @ (np.linalg.pinv(x) @ y) - y) ** 2)
        assert abs(ours - oracle) < 1e-8

    def test_degenerate(self):
        with pytest.raises(np.linalg.LinAlgError):
            fit_last_layer(np.array([[1e12, 1e12]] * 5), np.ones((5, 1)))
        with pytest.raises(ValueError):
            fit_last_layer(np.zeros((0, 2)), np.zeros((0, 1)))


class TestKMeansProto:
    def test_fit_save_load(self, rng, tmp_path):
        enc = encoder()
        obs = random_obs(rng, 300)
        targets = rng.random((300, 4))
        model = KMeansProto.fit(enc, BOX, obs, targets)
        assert all(any(np.array_equal(s, o) for o in obs) for s in model.state_obs)
        # the linear layer is the least-squares optimum on its own features
        feats = model.features(BOX.normalize(obs))
        assert model.mse(BOX.normalize(obs), targets) <= np.mean((feats @ (np.linalg.pinv(feats) @ targets) - targets) ** 2) + 1e-9
        model.save(tmp_path / "k.json")
        back = KMeansProto.load(tmp_path / "k.json")
        x = BOX.normalize(obs[:5])
        assert np.array_equal(back(x), model(x))


class TestVariant:
    def test_gradients(self):
        rng = np.random.default_rng(4)
        worst = 0.0
        for seed in range(25):
            model = LearnedProtoVariant(encoder(seed, 4), BOX, hidden=8, rng=np.random.default_rng(seed))
            x = BOX.normalize(random_obs(rng, 6))
            y = rng.random((6, 4))
            _, grads = model.loss_and_grads(x, y)
            worst = max(worst, max_rel_error(lambda: model.loss_and_grads(x, y)[0], model.trainable, grads, rng, 4))
        assert worst < 1e-4

    def test_zero_epochs_is_initialization(self, rng):
        obs = random_obs(rng, 50)
        cfg = DistillConfig(epochs=0, hidden=8)
        a, _ = train_variant(encoder(), BOX, obs, rng.random((50, 4)), cfg)
        b = LearnedProtoVariant(encoder(), BOX, 8, np.random.default_rng(np.random.default_rng(cfg.seed).integers(2**32)))
        assert digest(a.trainable) == digest(b.trainable)

    def test_training_and_mapping(self, rng, tmp_path):
        obs = random_obs(rng, 400)
        enc = encoder()
        before = digest(enc.params)
        model, res = train_variant(enc, BOX, obs, rng.random((400, 4)) * 0.5, DistillConfig(epochs=5, hidden=8))
        assert res.final_mse < res.initial_mse
        assert digest(enc.params) == before
        assert all(any(np.array_equal(m, o) for o in obs) for m in model.mapped_obs)
        model.save(tmp_path / "v.json")
        back = LearnedProtoVariant.load(tmp_path / "v.json")
        x = BOX.normalize(obs[:5])
        assert np.array_equal(back(x), model(x))
        back.use_mapped = True
        assert back(x).shape == (5, 4)

    def test_empty(self):
        with pytest.raises(ValueError):
            train_variant(encoder(), BOX, np.zeros((0, 4)), np.zeros((0, 4)))


def test_methods_share_the_encoder(rng):
    enc = encoder()
    obs = random_obs(rng, 100)
    pset = PrototypeSet(enc, BOX, hidden=8)
    km = KMeansProto.fit(enc, BOX, obs, rng.random((100, 4)))
    var, _ = train_variant(enc, BOX, obs, rng.random((100, 4)), DistillConfig(epochs=1, hidden=8))
    assert digest(pset.encoder.params) == digest(km.encoder.params) == digest(var.encoder.params)
