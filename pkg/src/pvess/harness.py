"""Experiment orchestration: cases, training, distillation, evaluation and reports."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .baselines import KMeansProto, LearnedProtoVariant, train_variant
from .config import CASES, ConfigError, ExperimentConfig
from .env import ObsBox, PVESSEnv
from .neural import digest, load_arrays
from .ppo import LR_SCHEDULES, ActorCritic, TrainingCurve, evaluate_policy, train
from .proto import PrototypeSet, default_prototypes, distill

log = logging.getLogger(__name__)

METHODS = ("blackbox", "proto", "proto_variant", "kmeans")


class ReportSchemaError(ValueError):
    pass


def compute_mse(actions_a, actions_b) -> float:
    """Mean over steps and dimensions of the squared difference."""
    a = np.asarray(actions_a, dtype=np.float64)
    b = np.asarray(actions_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"action sequences differ in shape: {a.shape} vs {b.shape}")
    if a.size == 0:
        raise ValueError("empty action sequences")
    return float(np.mean((a - b) ** 2))


def mean_se(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=np.float64)
    se = float(v.std(ddof=1) / math.sqrt(len(v))) if len(v) > 1 else 0.0
    return float(v.mean()), se


# -- reports ---------------------------------------------------------------------


@dataclass
class MetricsReport:
    case_id: int
    method: str
    trials: int
    sims: int
    trial_rewards: list
    reward_mean: float
    reward_se: float
    trial_mse: list
    mse_mean: float
    mse_se: float
    blackbox_reward: float
    config_digest: str
    seeds: dict
    details: dict = field(default_factory=dict)


_REPORT_TYPES = {
    "case_id": int,
    "method": str,
    "trials": int,
    "sims": int,
    "trial_rewards": list,
    "reward_mean": float,
    "reward_se": float,
    "trial_mse": list,
    "mse_mean": float,
    "mse_se": float,
    "blackbox_reward": float,
    "config_digest": str,
    "seeds": dict,
    "details": dict,
}


@dataclass
class AblationResult:
    schedules: list
    curves: dict  # schedule -> per-update mean training reward
    lrs: dict  # schedule -> per-update learning rate
    final_reward: dict  # schedule -> deterministic evaluation mean
    env_digests: dict  # schedule -> digest of the training environment stream
    config_digest: str
    seed: int


def validate_report(doc: dict) -> None:
    if not isinstance(doc, dict) or doc.get("kind") not in ("metrics", "curves"):
        raise ReportSchemaError("report must be an object with kind 'metrics' or 'curves'")
    if doc["kind"] == "metrics":
        reports = doc.get("reports")
        if not isinstance(reports, list) or not reports:
            raise ReportSchemaError("metrics report needs a nonempty 'reports' list")
        for i, rep in enumerate(reports):
            for name, typ in _REPORT_TYPES.items():
                if name not in rep:
                    raise ReportSchemaError(f"reports[{i}]: missing field {name!r}")
                value = rep[name]
                ok = isinstance(value, (int, float)) and not isinstance(value, bool) if typ is float else isinstance(value, typ)
                if not ok:
                    raise ReportSchemaError(f"reports[{i}].{name}: expected {typ.__name__}")
            if rep["method"] not in METHODS:
                raise ReportSchemaError(f"reports[{i}]: unknown method {rep['method']!r}")
            if len(rep["trial_rewards"]) != rep["trials"] or len(rep["trial_mse"]) != rep["trials"]:
                raise ReportSchemaError(f"reports[{i}]: per-trial lists must have 'trials' entries")
    else:
        for name in ("schedules", "curves", "lrs", "final_reward", "env_digests", "config_digest", "seed"):
            if name not in doc:
                raise ReportSchemaError(f"curves report: missing field {name!r}")
        for s in doc["schedules"]:
            if s not in doc["curves"] or s not in doc["final_reward"]:
                raise ReportSchemaError(f"curves report: schedule {s!r} has no curve")


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    try:
        tmp.write_text(text, encoding="utf-8")
        tmp.replace(path)
    except OSError as exc:
        raise OSError(f"{path}: cannot write report ({exc.strerror})") from exc


def _report_doc(report) -> dict:
    if isinstance(report, AblationResult):
        return {"kind": "curves", **asdict(report)}
    if isinstance(report, MetricsReport):
        report = [report]
    return {"kind": "metrics", "reports": [asdict(r) for r in report]}


def _csv_text(doc: dict) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    if doc["kind"] == "metrics":
        writer.writerow(["case_id", "method", "trial", "reward", "mse"])
        for rep in doc["reports"]:
            for i, (r, m) in enumerate(zip(rep["trial_rewards"], rep["trial_mse"])):
                writer.writerow([rep["case_id"], rep["method"], i, repr(r), repr(m)])
    else:
        schedules = doc["schedules"]
        writer.writerow(["update", *schedules])
        n = max(len(doc["curves"][s]) for s in schedules)
        for u in range(n):
            row = [u + 1]
            for s in schedules:
                curve = doc["curves"][s]
                row.append(repr(curve[u]) if u < len(curve) else "")
            writer.writerow(row)
    return buf.getvalue()


def emit_report(report, path) -> tuple[Path, Path]:
    """Write ``path`` (JSON) and a plot-ready CSV beside it; returns both paths."""
    path = Path(path)
    doc = _report_doc(report)
    validate_report(doc)
    csv_path = path.with_suffix(".csv")
    _atomic_write(path, json.dumps(doc, indent=2, sort_keys=True) + "\n")
    _atomic_write(csv_path, _csv_text(doc))
    return path, csv_path


def load_report(path) -> dict:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise OSError(f"{path}: cannot read report ({exc.strerror})") from exc
    validate_report(doc)
    return doc


# -- experiment context ---------------------------------------------------------------


class Lab:
    """Data, plant and cached artifacts for one configuration."""

    def __init__(self, config: ExperimentConfig, cache_dir=None):
        self.config = config
        self.series = config.series()
        if len(self.series) < config.episode.horizon:
            raise ConfigError(f"series of {len(self.series)} h is shorter than the {config.episode.horizon} h horizon")
        self.plant = config.plant
        self.box = ObsBox.for_series(self.series, self.plant)
        self.digest = config.digest()
        self.cache_dir = Path(cache_dir) if cache_dir else None
        if self.cache_dir:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
        self._nets: dict = {}

    def case(self, case_id: int):
        if case_id not in CASES:
            raise ConfigError(f"unknown case {case_id}; expected one of {sorted(CASES)}")
        return CASES[case_id]

    def env(self, case_id: int) -> PVESSEnv:
        return PVESSEnv(self.series, self.plant, self.config.episode, self.case(case_id), self.box)

    def prototype_states(self):
        states = self.config.prototypes
        return list(states) if states is not None else default_prototypes(self.box)

    # -- black box -------------------------------------------------------------

    def train_blackbox(self, case_id: int, lr_schedule: str | None = None, total_steps: int | None = None):
        ppo = self.config.ppo
        if lr_schedule is not None:
            ppo = replace(ppo, lr_schedule=lr_schedule)
        if total_steps is not None:
            ppo = replace(ppo, total_steps=total_steps)
        key = (case_id, ppo)
        if key in self._nets:
            return self._nets[key]
        path = None
        if self.cache_dir:
            path = self.cache_dir / f"blackbox-case{case_id}-{ppo.lr_schedule}-{ppo.total_steps}-{self.digest[:12]}.json"
            if path.exists():
                arrays, meta = load_arrays(path)
                curve = TrainingCurve(**meta["curve"])
                self._nets[key] = (ActorCritic.from_arrays(arrays), curve)
                return self._nets[key]
        log.info("training black box: case %d, schedule %s, %d steps", case_id, ppo.lr_schedule, ppo.total_steps)
        net, curve = train(lambda: self.env(case_id), ppo, seed=self.config.seed)
        if path:
            net.save(path, meta={"kind": "blackbox", "case_id": case_id, "curve": asdict(curve)})
        self._nets[key] = (net, curve)
        return net, curve

    def dataset(self, net: ActorCritic, case_id: int, n_pairs: int | None = None):
        """States visited by the stochastic black box, paired with its clipped mean actions."""
        n_pairs = n_pairs or self.config.evaluation.dataset_pairs
        rng = np.random.default_rng([self.config.evaluation.dataset_seed, case_id])
        env = self.env(case_id)
        obs_raw = []
        while len(obs_raw) < n_pairs:
            obs = env.reset(rng)
            done = False
            while not done and len(obs_raw) < n_pairs:
                obs_raw.append(env.state.observation())
                action, _, _ = net.act(obs, rng)
                obs, _, done = env.step(action)
        obs_raw = np.array(obs_raw)
        targets = np.clip(net.mean(self.box.normalize(obs_raw)), 0.0, 1.0)
        return obs_raw, targets

    # -- interpretable policies ---------------------------------------------------

    def fit_method(self, method: str, net: ActorCritic, obs_raw, targets):
        """Returns ``(model, details)``; the model maps normalized observations to 4-d actions."""
        dcfg = self.config.distill
        if method == "proto":
            pset = PrototypeSet(
                net.encoder, self.box, self.prototype_states(), dcfg.hidden, np.random.default_rng(dcfg.seed)
            )
            result = distill(pset, self.box.normalize(obs_raw), targets, dcfg)
            return pset, _distill_details(result)
        if method == "proto_variant":
            model, result = train_variant(net.encoder, self.box, obs_raw, targets, dcfg)
            details = _distill_details(result)
            details["mapped_states"] = model.mapped_obs.tolist()
            return model, details
        if method == "kmeans":
            model = KMeansProto.fit(net.encoder, self.box, obs_raw, targets, seed=self.config.evaluation.kmeans_seed)
            mse = model.mse(self.box.normalize(obs_raw), targets)
            return model, {
                "final_mse": mse,
                "kmeans_iterations": model.clusters.iterations,
                "mapped_states": model.state_obs.tolist(),
            }
        raise ValueError(f"unknown method {method!r}")

    # -- evaluation ------------------------------------------------------------

    def evaluate(self, policy, reference, case_id: int):
        """Per-trial mean episode reward and action MSE against ``reference`` (both deterministic)."""
        ev = self.config.evaluation
        env = self.env(case_id)
        rewards, mses = [], []
        for trial in range(ev.trials):
            rng = np.random.default_rng([ev.seed, trial])
            visited = []
            returns = evaluate_policy(_Recorder(env, visited), policy, ev.sims, rng)
            obs = np.array(visited)
            rewards.append(float(np.mean(returns)))
            mses.append(compute_mse(np.clip(policy(obs), 0.0, 1.0), np.clip(reference(obs), 0.0, 1.0)))
        return rewards, mses


class _Recorder:
    """Env proxy that logs every observation handed to the policy."""

    def __init__(self, env, sink):
        self.env, self.sink = env, sink

    def reset(self, rng):
        obs = self.env.reset(rng)
        self.sink.append(obs)
        return obs

    def step(self, action):
        obs, r, done = self.env.step(action)
        if not done:
            self.sink.append(obs)
        return obs, r, done


def _distill_details(result) -> dict:
    return {
        "initial_mse": result.initial_mse,
        "final_mse": result.final_mse,
        "initial_holdout_mse": result.initial_holdout_mse,
        "final_holdout_mse": result.final_holdout_mse,
        "epoch_mse": list(result.epoch_mse),
    }


def load_model(path):
    """Load any saved policy; the file's ``kind`` picks the class."""
    try:
        arrays, meta = load_arrays(path)
    except OSError as exc:
        raise OSError(f"{path}: cannot read checkpoint ({exc.strerror})") from exc
    kind = meta.get("kind", "blackbox")
    loaders = {
        "blackbox": lambda: ActorCritic.from_arrays(arrays),
        "proto": lambda: PrototypeSet.from_arrays(arrays, meta),
        "proto-variant": lambda: LearnedProtoVariant.from_arrays(arrays, meta),
        "kmeans": lambda: KMeansProto.from_arrays(arrays, meta),
    }
    if kind not in loaders:
        raise ValueError(f"{path}: unknown checkpoint kind {kind!r}")
    return loaders[kind]()


def policy_fn(model):
    """Deterministic ``obs_norm -> action`` callable for any trained model."""
    if isinstance(model, ActorCritic):
        return model.mean
    if isinstance(model, (PrototypeSet, LearnedProtoVariant, KMeansProto)):
        return model
    raise TypeError(f"not a policy: {type(model).__name__}")


def make_report(lab: Lab, case_id: int, method: str, rewards, mses, blackbox_reward: float, details=None) -> MetricsReport:
    cfg = lab.config
    ev = cfg.evaluation
    r_mean, r_se = mean_se(rewards)
    m_mean, m_se = mean_se(mses)
    seeds = {
        "train": cfg.seed,
        "eval": ev.seed,
        "dataset": ev.dataset_seed,
        "distill": cfg.distill.seed,
        "kmeans": ev.kmeans_seed,
        "data": cfg.data.seed,
    }
    return MetricsReport(
        case_id=case_id,
        method=method,
        trials=ev.trials,
        sims=ev.sims,
        trial_rewards=list(rewards),
        reward_mean=r_mean,
        reward_se=r_se,
        trial_mse=list(mses),
        mse_mean=m_mean,
        mse_se=m_se,
        blackbox_reward=float(blackbox_reward),
        config_digest=lab.digest,
        seeds=seeds,
        details=dict(details or {}),
    )


def run_case(
    config: ExperimentConfig,
    case_id: int,
    methods=METHODS,
    lab: Lab | None = None,
) -> list[MetricsReport]:
    """Train (or reuse) the case's black box, fit each method and evaluate all of them."""
    lab = lab or Lab(config)
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ValueError(f"unknown method(s): {', '.join(unknown)}")
    net, curve = lab.train_blackbox(case_id)
    reference = net.mean
    bb_rewards, bb_mse = lab.evaluate(reference, reference, case_id)
    bb_reward = float(np.mean(bb_rewards))
    fitted = None
    reports = []
    for method in methods:
        if method == "blackbox":
            rewards, mses = bb_rewards, bb_mse
            details = {
                "final_train_loss": curve.loss[-1] if curve.loss else float("nan"),
                "final_train_loss_note": "final-epoch mean PPO training loss",
                "encoder_digest": digest(net.encoder.params),
            }
        else:
            if fitted is None:
                fitted = lab.dataset(net, case_id)
            model, details = lab.fit_method(method, net, *fitted)
            details["encoder_digest"] = digest(model.encoder.params)
            details["dataset_size"] = len(fitted[0])
            rewards, mses = lab.evaluate(policy_fn(model), reference, case_id)
        reports.append(make_report(lab, case_id, method, rewards, mses, bb_reward, details))
    return reports


def lr_ablation(
    config: ExperimentConfig,
    schedules=LR_SCHEDULES,
    case_id: int = 1,
    lab: Lab | None = None,
    total_steps: int | None = None,
) -> AblationResult:
    """Train one black box per learning-rate schedule on identical seeds and data."""
    if not schedules:
        raise ValueError("no schedules given")
    lab = lab or Lab(config)
    curves, lrs, finals, env_digests = {}, {}, {}, {}
    for sched in schedules:
        net, curve = lab.train_blackbox(case_id, sched, total_steps)
        curves[sched] = list(curve.mean_reward)
        lrs[sched] = list(curve.lr)
        env_digests[sched] = curve.env_digest
        rewards, _ = lab.evaluate(net.mean, net.mean, case_id)
        finals[sched] = float(np.mean(rewards))
    return AblationResult(list(schedules), curves, lrs, finals, env_digests, lab.digest, config.seed)
