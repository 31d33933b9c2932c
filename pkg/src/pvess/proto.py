"""Prototype-based policy network distilled from a pretrained actor-critic.

Each action dimension k owns a transform net ``H_k`` on the frozen encoder
latent ``z = F(s)`` and a human-chosen prototypical state ``S_k``. The
dimension's output is the log-ratio similarity between ``H_k(z)`` and the
prototype ``p_k = H_k(F(S_k))``, weighted by a fixed sign ``W_k`` and divided
by the largest attainable similarity ``log(1/eps)`` so it lies in (0, 1].

Action dimensions are (BES charge, BES discharge, EL, FC); the battery power
is the weighted sum of the first two.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .env import Action, ObsBox, Plant, scale_action
from .neural import (
    DenseNet,
    OptimizerState,
    digest,
    load_arrays,
    net_arrays,
    net_from_arrays,
    optimizer_step,
    save_arrays,
)

EPS = 1e-5
WEIGHTS = (1.0, -1.0, 1.0, 1.0)
LABELS = ("BES-charge", "BES-discharge", "EL-run", "FC-run")


class FrozenParameterError(RuntimeError):
    pass


@dataclass(frozen=True)
class PrototypicalState:
    obs: tuple[float, float, float, float]  # price, pv, soc, loh
    label: str
    intent: str


def default_prototypes(box: ObsBox) -> list[PrototypicalState]:
    """One intuitive situation per action dimension, built from the extremes of ``box``."""
    (p_lo, pv_lo, soc_lo, loh_lo), (p_hi, pv_hi, soc_hi, loh_hi) = box.low, box.high
    soc_mid = 0.5 * (soc_lo + soc_hi)
    loh_mid = 0.5 * (loh_lo + loh_hi)
    return [
        PrototypicalState((p_lo, pv_hi, soc_lo, loh_mid), LABELS[0], "cheap power and full sun: charge the battery"),
        PrototypicalState((p_hi, pv_lo, soc_hi, loh_lo), LABELS[1], "expensive power and no sun: discharge the battery"),
        PrototypicalState((p_lo, pv_hi, soc_mid, loh_lo), LABELS[2], "cheap power, full sun, empty tank: run the electrolyzer"),
        PrototypicalState((p_hi, pv_lo, soc_mid, loh_hi), LABELS[3], "expensive power, no sun, full tank: run the fuel cell"),
    ]


def similarity(z, p, eps: float = EPS):
    """log((d2 + 1) / (d2 + eps)) with d2 the squared Euclidean distance (row-wise)."""
    d2 = np.sum((np.asarray(z) - np.asarray(p)) ** 2, axis=-1)
    return np.log((d2 + 1.0) / (d2 + eps))


def _dsim_dd2(d2, eps):
    return 1.0 / (d2 + 1.0) - 1.0 / (d2 + eps)


@dataclass
class Explanation:
    t: int
    obs: list[float]
    sims: list[float]
    normalized: list[float]
    contributions: list[float]
    action: list[float]
    nearest_prototype: str

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Explanation":
        return cls(**d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


class PrototypeSet:
    """Transform nets, prototypical states, fixed weights and cached prototypes."""

    def __init__(
        self,
        encoder: DenseNet,
        box: ObsBox,
        states: list[PrototypicalState] | None = None,
        hidden: int = 32,
        rng=None,
        weights=WEIGHTS,
        eps: float = EPS,
    ):
        rng = rng if rng is not None else np.random.default_rng(0)
        self.encoder = encoder
        self.box = box
        self.states = list(states) if states is not None else default_prototypes(box)
        if len(self.states) != 4:
            raise ValueError("exactly one prototypical state per action dimension is required")
        for s in self.states:
            if not box.contains(s.obs):
                raise ValueError(f"prototype {s.label} lies outside the observation box")
        latent = encoder.sizes[-1]
        self.transforms = [DenseNet((latent, hidden, latent), rng) for _ in range(4)]
        self.weights = np.array(weights, dtype=np.float64)
        self.eps = eps
        self.refresh()

    @property
    def sim_max(self) -> float:
        return math.log(1.0 / self.eps)

    @property
    def state_obs(self) -> np.ndarray:
        return np.array([s.obs for s in self.states], dtype=np.float64)

    def state_latents(self) -> np.ndarray:
        return self.encoder(self.box.normalize(self.state_obs))

    def refresh(self) -> None:
        """Recompute every cached prototype from the current transform nets."""
        zs = self.state_latents()
        self.prototypes = np.stack([h(zs[k]) for k, h in enumerate(self.transforms)])

    @property
    def trainable(self) -> list[np.ndarray]:
        return [p for h in self.transforms for p in h.params]

    def frozen_digest(self) -> str:
        return digest([*self.encoder.params, self.weights, self.state_obs])

    # -- inference -----------------------------------------------------------

    def similarities(self, obs_norm) -> np.ndarray:
        z = self.encoder(np.atleast_2d(obs_norm))
        return np.stack(
            [similarity(h(z), self.prototypes[k], self.eps) for k, h in enumerate(self.transforms)], axis=1
        )

    def normalized_output(self, obs_norm) -> np.ndarray:
        """Per-dimension outputs sim_k / sim_max in (0, 1], shape (n, 4)."""
        return self.similarities(obs_norm) / self.sim_max

    def __call__(self, obs_norm) -> np.ndarray:
        out = self.normalized_output(obs_norm)
        return out[0] if np.ndim(obs_norm) == 1 else out

    def compose_action(self, obs_raw, plant: Plant, t: int = 0) -> tuple[Action, Explanation]:
        obs_raw = np.asarray(obs_raw, dtype=np.float64)
        sims = self.similarities(self.box.normalize(obs_raw))[0]
        contributions = self.weights * sims
        normalized = contributions / self.sim_max
        bat = normalized[0] + normalized[1]
        action = scale_action(bat, normalized[2], normalized[3], plant)
        nearest = LABELS[int(np.argmax(sims))]
        explanation = Explanation(
            t=t,
            obs=obs_raw.tolist(),
            sims=sims.tolist(),
            normalized=normalized.tolist(),
            contributions=contributions.tolist(),
            action=[action.p_bat, action.p_el, action.p_fc],
            nearest_prototype=nearest,
        )
        return action, explanation

    # -- training ------------------------------------------------------------

    def loss_and_grads(self, obs_norm, targets):
        """Mean squared error over all four dimensions, with gradients for every H_k.

        Gradients flow through both ``H_k(z)`` and the prototype ``H_k(F(S_k))``.
        """
        n = len(obs_norm)
        z = self.encoder(obs_norm)
        zs = self.state_latents()
        loss = 0.0
        grads = []
        preds = np.empty((n, 4))
        cache = []
        for k, h in enumerate(self.transforms):
            zk, ck = h.forward(z)
            pk, cp = h.forward(zs[k : k + 1])
            diff = zk - pk
            d2 = np.sum(diff**2, axis=1)
            preds[:, k] = np.log((d2 + 1.0) / (d2 + self.eps)) / self.sim_max
            cache.append((ck, cp, diff, d2))
        err = preds - targets
        loss = float(np.mean(err**2))
        g_pred = 2.0 * err / err.size
        for k, h in enumerate(self.transforms):
            ck, cp, diff, d2 = cache[k]
            g_d2 = g_pred[:, k] * _dsim_dd2(d2, self.eps) / self.sim_max
            g_zk = 2.0 * g_d2[:, None] * diff
            gz, _ = h.backward(ck, g_zk)
            gp, _ = h.backward(cp, -g_zk.sum(axis=0, keepdims=True))
            grads.extend(a + b for a, b in zip(gz, gp))
        return loss, grads

    def mse(self, obs_norm, targets) -> float:
        return float(np.mean((self.normalized_output(obs_norm) - targets) ** 2))

    # -- persistence ---------------------------------------------------------

    def to_arrays(self) -> dict:
        arrays = net_arrays("encoder", self.encoder)
        for k, h in enumerate(self.transforms):
            arrays.update(net_arrays(f"H{k}", h))
        arrays["weights"] = self.weights
        arrays["prototypes"] = self.prototypes
        return arrays

    def save(self, path) -> None:
        meta = {
            "kind": "proto",
            "eps": self.eps,
            "encoder_sizes": list(self.encoder.sizes),
            "hidden": self.transforms[0].sizes[1],
            "box": {"low": list(self.box.low), "high": list(self.box.high)},
            "states": [asdict(s) for s in self.states],
        }
        save_arrays(path, self.to_arrays(), meta)

    @classmethod
    def load(cls, path) -> "PrototypeSet":
        arrays, meta = load_arrays(path)
        if meta.get("kind") != "proto":
            raise ValueError(f"{path}: not a prototype-set file")
        return cls.from_arrays(arrays, meta)

    @classmethod
    def from_arrays(cls, arrays, meta) -> "PrototypeSet":
        enc_sizes = tuple(meta["encoder_sizes"])
        encoder = net_from_arrays("encoder", arrays, enc_sizes, out_activation="tanh")
        box = ObsBox(tuple(meta["box"]["low"]), tuple(meta["box"]["high"]))
        states = [PrototypicalState(tuple(s["obs"]), s["label"], s["intent"]) for s in meta["states"]]
        pset = cls(encoder, box, states, hidden=meta["hidden"], weights=arrays["weights"], eps=meta["eps"])
        latent = enc_sizes[-1]
        pset.transforms = [
            net_from_arrays(f"H{k}", arrays, (latent, meta["hidden"], latent)) for k in range(4)
        ]
        pset.refresh()
        return pset


@dataclass(frozen=True)
class DistillConfig:
    epochs: int = 60
    minibatch_size: int = 128
    lr: float = 1e-3
    hidden: int = 32
    holdout: float = 0.1
    seed: int = 0


@dataclass
class DistillResult:
    initial_mse: float
    final_mse: float
    initial_holdout_mse: float
    final_holdout_mse: float
    epoch_mse: list = field(default_factory=list)


def split_dataset(obs, targets, holdout: float, rng):
    n = len(obs)
    order = rng.permutation(n)
    n_hold = int(round(holdout * n))
    hold, train_idx = order[:n_hold], order[n_hold:]
    return (obs[train_idx], targets[train_idx]), (obs[hold], targets[hold])


def distill(pset: PrototypeSet, obs_norm, targets, config: DistillConfig = DistillConfig()):
    """Fit the transform nets to the black-box actions; encoder, weights and states stay fixed."""
    obs_norm = np.asarray(obs_norm, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if len(obs_norm) == 0:
        raise ValueError("empty distillation dataset")
    rng = np.random.default_rng(config.seed)
    (x_tr, y_tr), (x_ho, y_ho) = split_dataset(obs_norm, targets, config.holdout, rng)
    frozen = pset.frozen_digest()
    params = pset.trainable
    opt = OptimizerState.for_params(params, lr=config.lr)

    def holdout_mse():
        return pset.mse(x_ho, y_ho) if len(x_ho) else float("nan")

    result = DistillResult(pset.mse(x_tr, y_tr), float("nan"), holdout_mse(), float("nan"))
    for _ in range(config.epochs):
        order = rng.permutation(len(x_tr))
        for lo in range(0, len(x_tr), config.minibatch_size):
            idx = order[lo : lo + config.minibatch_size]
            _, grads = pset.loss_and_grads(x_tr[idx], y_tr[idx])
            optimizer_step(params, grads, opt)
            pset.refresh()
        result.epoch_mse.append(pset.mse(x_tr, y_tr))
    pset.refresh()
    if pset.frozen_digest() != frozen:
        raise FrozenParameterError("encoder, weights or prototypical states changed during distillation")
    result.final_mse = pset.mse(x_tr, y_tr)
    result.final_holdout_mse = holdout_mse()
    return result


def explain(obs_raw, pset: PrototypeSet, plant: Plant, t: int = 0) -> Explanation:
    return pset.compose_action(obs_raw, plant, t)[1]
