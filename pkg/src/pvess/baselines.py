"""Comparison policies: K-Means prototypes and the learned-prototype variant."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .env import ObsBox
from .neural import DenseNet, OptimizerState, digest, load_arrays, net_arrays, net_from_arrays, optimizer_step, save_arrays
from .proto import EPS, WEIGHTS, DistillConfig, DistillResult, FrozenParameterError, _dsim_dd2, similarity, split_dataset


# -- K-Means -----------------------------------------------------------------------


@dataclass
class KMeansResult:
    centroids: np.ndarray
    assignments: np.ndarray
    inertia: list = field(default_factory=list)
    iterations: int = 0


def _assign(x, centroids):
    d2 = ((x[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    labels = d2.argmin(axis=1)
    return labels, d2[np.arange(len(x)), labels]


def kmeans_cluster(latents, k: int = 4, seed: int = 0, max_iter: int = 100) -> KMeansResult:
    """Lloyd's algorithm from ``k`` distinct random data points.

    An emptied cluster is re-seeded at the point farthest from its current
    centroid, so every centroid keeps at least one member.
    """
    x = np.asarray(latents, dtype=np.float64)
    if len(x) < k:
        raise ValueError(f"need at least k={k} points, got {len(x)}")
    rng = np.random.default_rng(seed)
    centroids = x[rng.choice(len(x), size=k, replace=False)].copy()
    labels, d2 = _assign(x, centroids)
    result = KMeansResult(centroids, labels, [float(d2.sum())])
    for it in range(1, max_iter + 1):
        for j in range(k):
            members = labels == j
            if not members.any():
                far = int(np.argmax(d2))
                centroids[j] = x[far]
                labels[far] = j
                d2[far] = 0.0
                members = labels == j
            centroids[j] = x[members].mean(axis=0)
        new_labels, d2 = _assign(x, centroids)
        result.inertia.append(float(d2.sum()))
        result.iterations = it
        if np.array_equal(new_labels, labels):
            labels = new_labels
            break
        labels = new_labels
    result.centroids = centroids
    result.assignments = labels
    return result


def map_centroid_to_state(centroid, latents) -> int:
    """Index of the dataset sample whose latent is nearest ``centroid`` (lowest index on ties)."""
    latents = np.atleast_2d(np.asarray(latents, dtype=np.float64))
    if len(latents) == 0:
        raise ValueError("empty dataset")
    return int(np.argmin(((latents - centroid) ** 2).sum(axis=1)))


def fit_last_layer(features, targets, ridge: float = 1e-6) -> np.ndarray:
    """Ridge least squares ``targets ~ features @ weights`` via the normal equations."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if len(x) == 0:
        raise ValueError("empty dataset")
    gram = x.T @ x + ridge * np.eye(x.shape[1])
    if np.linalg.cond(gram) > 1e14:
        raise np.linalg.LinAlgError("design matrix is degenerate even with the ridge term")
    return np.linalg.solve(gram, x.T @ y)


class KMeansProto:
    """Prototypes are dataset states nearest to latent-space centroids; a linear layer maps similarities to actions."""

    def __init__(self, encoder: DenseNet, box: ObsBox, state_obs, weights, eps: float = EPS):
        self.encoder = encoder
        self.box = box
        self.state_obs = np.asarray(state_obs, dtype=np.float64)
        self.weights = np.asarray(weights, dtype=np.float64)
        self.eps = eps
        self.prototypes = self.encoder(self.box.normalize(self.state_obs))

    @property
    def sim_max(self) -> float:
        return float(np.log(1.0 / self.eps))

    def features(self, obs_norm) -> np.ndarray:
        z = self.encoder(np.atleast_2d(obs_norm))
        return np.stack([similarity(z, p, self.eps) for p in self.prototypes], axis=1) / self.sim_max

    def __call__(self, obs_norm):
        out = self.features(obs_norm) @ self.weights
        return out[0] if np.ndim(obs_norm) == 1 else out

    def mse(self, obs_norm, targets) -> float:
        return float(np.mean((self(obs_norm) - targets) ** 2))

    @classmethod
    def fit(cls, encoder, box, obs_raw, targets, k: int = 4, seed: int = 0, max_iter: int = 100, eps: float = EPS):
        obs_raw = np.asarray(obs_raw, dtype=np.float64)
        latents = encoder(box.normalize(obs_raw))
        clusters = kmeans_cluster(latents, k, seed, max_iter)
        idx = [map_centroid_to_state(c, latents) for c in clusters.centroids]
        model = cls(encoder, box, obs_raw[idx], np.zeros((k, np.shape(targets)[1])), eps)
        model.weights = fit_last_layer(model.features(box.normalize(obs_raw)), targets)
        model.clusters = clusters
        return model

    def save(self, path) -> None:
        arrays = net_arrays("encoder", self.encoder)
        arrays["state_obs"] = self.state_obs
        arrays["weights"] = self.weights
        meta = {
            "kind": "kmeans",
            "eps": self.eps,
            "encoder_sizes": list(self.encoder.sizes),
            "box": {"low": list(self.box.low), "high": list(self.box.high)},
        }
        save_arrays(path, arrays, meta)

    @classmethod
    def load(cls, path) -> "KMeansProto":
        arrays, meta = load_arrays(path)
        if meta.get("kind") != "kmeans":
            raise ValueError(f"{path}: not a K-Means policy file")
        return cls.from_arrays(arrays, meta)

    @classmethod
    def from_arrays(cls, arrays, meta) -> "KMeansProto":
        encoder = net_from_arrays("encoder", arrays, tuple(meta["encoder_sizes"]), out_activation="tanh")
        box = ObsBox(tuple(meta["box"]["low"]), tuple(meta["box"]["high"]))
        return cls(encoder, box, arrays["state_obs"], arrays["weights"], meta["eps"])


# -- learned-prototype variant ---------------------------------------------------------


class LearnedProtoVariant:
    """One shared transform net and four trainable latent prototypes.

    After training each prototype is mapped to its nearest dataset state for
    display. Inference uses the learned vectors unless ``use_mapped`` is set,
    in which case it compares against the transformed latent of that state.
    """

    def __init__(self, encoder: DenseNet, box: ObsBox, hidden: int = 32, rng=None, eps: float = EPS, weights=WEIGHTS):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.encoder = encoder
        self.box = box
        latent = encoder.sizes[-1]
        self.transform = DenseNet((latent, hidden, latent), rng)
        self.prototypes = 0.1 * rng.standard_normal((4, latent))
        self.weights = np.array(weights, dtype=np.float64)
        self.eps = eps
        self.mapped_obs: np.ndarray | None = None
        self.use_mapped = False

    @property
    def sim_max(self) -> float:
        return float(np.log(1.0 / self.eps))

    @property
    def trainable(self) -> list[np.ndarray]:
        return [*self.transform.params, self.prototypes]

    def active_prototypes(self) -> np.ndarray:
        if self.use_mapped and self.mapped_obs is not None:
            return self.transform(self.encoder(self.box.normalize(self.mapped_obs)))
        return self.prototypes

    def normalized_output(self, obs_norm) -> np.ndarray:
        h = self.transform(self.encoder(np.atleast_2d(obs_norm)))
        protos = self.active_prototypes()
        return np.stack([similarity(h, p, self.eps) for p in protos], axis=1) / self.sim_max

    def __call__(self, obs_norm):
        out = self.normalized_output(obs_norm)
        return out[0] if np.ndim(obs_norm) == 1 else out

    def mse(self, obs_norm, targets) -> float:
        return float(np.mean((self.normalized_output(obs_norm) - targets) ** 2))

    def loss_and_grads(self, obs_norm, targets):
        z = self.encoder(obs_norm)
        h, cache = self.transform.forward(z)
        diff = h[:, None, :] - self.prototypes[None, :, :]  # (n, 4, latent)
        d2 = np.sum(diff**2, axis=2)
        preds = np.log((d2 + 1.0) / (d2 + self.eps)) / self.sim_max
        err = preds - targets
        loss = float(np.mean(err**2))
        g_d2 = (2.0 * err / err.size) * _dsim_dd2(d2, self.eps) / self.sim_max
        g_diff = 2.0 * g_d2[:, :, None] * diff
        grads, _ = self.transform.backward(cache, g_diff.sum(axis=1))
        return loss, [*grads, -g_diff.sum(axis=0)]

    def map_prototypes(self, obs_raw) -> np.ndarray:
        """Nearest dataset state (in transformed latent space) for every learned prototype."""
        obs_raw = np.asarray(obs_raw, dtype=np.float64)
        h = self.transform(self.encoder(self.box.normalize(obs_raw)))
        idx = [map_centroid_to_state(p, h) for p in self.prototypes]
        self.mapped_obs = obs_raw[idx]
        return np.array(idx)

    def save(self, path) -> None:
        arrays = net_arrays("encoder", self.encoder)
        arrays.update(net_arrays("H", self.transform))
        arrays["prototypes"] = self.prototypes
        arrays["weights"] = self.weights
        if self.mapped_obs is not None:
            arrays["mapped_obs"] = self.mapped_obs
        meta = {
            "kind": "proto-variant",
            "eps": self.eps,
            "use_mapped": self.use_mapped,
            "encoder_sizes": list(self.encoder.sizes),
            "hidden": self.transform.sizes[1],
            "box": {"low": list(self.box.low), "high": list(self.box.high)},
        }
        save_arrays(path, arrays, meta)

    @classmethod
    def load(cls, path) -> "LearnedProtoVariant":
        arrays, meta = load_arrays(path)
        if meta.get("kind") != "proto-variant":
            raise ValueError(f"{path}: not a prototype-variant file")
        return cls.from_arrays(arrays, meta)

    @classmethod
    def from_arrays(cls, arrays, meta) -> "LearnedProtoVariant":
        enc_sizes = tuple(meta["encoder_sizes"])
        encoder = net_from_arrays("encoder", arrays, enc_sizes, out_activation="tanh")
        box = ObsBox(tuple(meta["box"]["low"]), tuple(meta["box"]["high"]))
        model = cls(encoder, box, hidden=meta["hidden"], eps=meta["eps"], weights=arrays["weights"])
        latent = enc_sizes[-1]
        model.transform = net_from_arrays("H", arrays, (latent, meta["hidden"], latent))
        model.prototypes = arrays["prototypes"].copy()
        model.mapped_obs = arrays.get("mapped_obs")
        model.use_mapped = bool(meta["use_mapped"])
        return model


def train_variant(
    encoder: DenseNet,
    box: ObsBox,
    obs_raw,
    targets,
    config: DistillConfig = DistillConfig(),
    use_mapped: bool = False,
):
    """Jointly fit the shared transform and the prototypes, then map prototypes to dataset states."""
    obs_raw = np.asarray(obs_raw, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if len(obs_raw) == 0:
        raise ValueError("empty distillation dataset")
    rng = np.random.default_rng(config.seed)
    model = LearnedProtoVariant(encoder, box, config.hidden, np.random.default_rng(rng.integers(2**32)))
    obs_norm = box.normalize(obs_raw)
    (x_tr, y_tr), (x_ho, y_ho) = split_dataset(obs_norm, targets, config.holdout, rng)
    frozen = digest([*encoder.params, model.weights])
    params = model.trainable
    opt = OptimizerState.for_params(params, lr=config.lr)
    result = DistillResult(model.mse(x_tr, y_tr), float("nan"), model.mse(x_ho, y_ho) if len(x_ho) else float("nan"), float("nan"))
    for _ in range(config.epochs):
        order = rng.permutation(len(x_tr))
        for lo in range(0, len(x_tr), config.minibatch_size):
            idx = order[lo : lo + config.minibatch_size]
            _, grads = model.loss_and_grads(x_tr[idx], y_tr[idx])
            optimizer_step(params, grads, opt)
        result.epoch_mse.append(model.mse(x_tr, y_tr))
    if digest([*encoder.params, model.weights]) != frozen:
        raise FrozenParameterError("encoder or weights changed while training the variant")
    model.map_prototypes(obs_raw)
    model.use_mapped = use_mapped
    result.final_mse = model.mse(x_tr, y_tr)
    result.final_holdout_mse = model.mse(x_ho, y_ho) if len(x_ho) else float("nan")
    return model, result
