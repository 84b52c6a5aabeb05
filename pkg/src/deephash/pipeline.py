"""Training loops for triplet-embedding and hashing models.

Both loops share the same skeleton: balanced P x K batches, forward pass,
in-batch mining on squared Euclidean distances, loss, backward pass and an
Adam step. Hash mode reads its margin and quantization weight from the
epoch schedules.
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import losses
from .data import Dataset
from .evaluation import evaluate
from .exceptions import ConfigError, DivergenceError
from .hashing import binarize, pack
from .mining import SelectorKind, balanced_batches, select
from .model import AdamState, MlpParams, adam_step, backward, forward, init_mlp

log = logging.getLogger(__name__)

ALPHA_KINDS = ("constant", "staged_doubling", "linear")


@dataclass
class AlphaSchedule:
    kind: str = "staged_doubling"
    base: float = 1.0
    final: float = 16.0
    stage_epochs: int = 3
    step: float = 3.75  # increment per stage for kind="linear"

    def validate(self):
        if self.kind not in ALPHA_KINDS:
            raise ConfigError(f"alpha.kind must be one of {ALPHA_KINDS}, got {self.kind!r}")
        if self.stage_epochs < 1:
            raise ConfigError("alpha.stage_epochs must be >= 1")
        if not (0 <= self.base <= self.final) or not math.isfinite(self.final):
            raise ConfigError("alpha needs 0 <= base <= final < inf")
        if self.step < 0:
            raise ConfigError("alpha.step must be >= 0")


@dataclass
class LambdaSchedule:
    activate_epoch: int = 15
    value: float = 10.0

    def validate(self):
        if self.activate_epoch < 0:
            raise ConfigError("lambda.activate_epoch must be >= 0")
        if not (self.value >= 0 and math.isfinite(self.value)):
            raise ConfigError("lambda.value must be finite and >= 0")


def alpha_schedule(epoch: int, spec: AlphaSchedule) -> float:
    """Margin for ``epoch`` (0-based).

    ``staged_doubling`` doubles the base every ``stage_epochs`` epochs,
    capped at ``final``; ``linear`` adds ``step`` per stage instead.
    """
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    spec.validate()
    stage = epoch // spec.stage_epochs
    if spec.kind == "constant":
        return float(spec.base)
    if spec.kind == "staged_doubling":
        # Cap the exponent so huge epochs cannot overflow.
        return float(min(spec.final, spec.base * 2.0 ** min(stage, 64)))
    return float(min(spec.final, spec.base + stage * spec.step))


def lambda_schedule(epoch: int, spec: LambdaSchedule) -> float:
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return float(spec.value) if epoch >= spec.activate_epoch else 0.0


@dataclass
class TrainConfig:
    mode: str = "triplet"
    selector: str = "semi_hard"
    margin: float = 1.0
    alpha: AlphaSchedule = field(default_factory=AlphaSchedule)
    lam: LambdaSchedule = field(default_factory=LambdaSchedule)
    sum_reduction: bool = False
    P: int = 10
    K_pc: int = 8
    epochs: int = 30
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    hidden_dims: list[int] = field(default_factory=lambda: [256, 128])
    code_length: int = 32
    normalize: bool | None = None
    init_seed: int = 0
    mining_seed: int = 0
    eval_every: int = 0
    eval_k: int = 5

    def validate(self):
        if self.mode not in ("triplet", "hash"):
            raise ConfigError(f"mode must be 'triplet' or 'hash', got {self.mode!r}")
        try:
            SelectorKind(self.selector)
        except ValueError:
            raise ConfigError(f"unknown selector {self.selector!r}") from None
        if not (self.margin >= 0 and math.isfinite(self.margin)):
            raise ConfigError("margin must be finite and >= 0")
        self.alpha.validate()
        self.lam.validate()
        for name in ("P", "K_pc", "epochs", "code_length", "eval_k"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.K_pc < 2:
            raise ConfigError("K_pc must be >= 2 to form anchor/positive pairs")
        if any(h < 1 for h in self.hidden_dims):
            raise ConfigError("hidden_dims entries must be >= 1")
        if not (self.lr > 0 and 0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ConfigError("invalid optimizer hyperparameters")
        if self.eval_every < 0:
            raise ConfigError("eval_every must be >= 0")

    @property
    def use_normalize(self) -> bool:
        return self.mode == "triplet" if self.normalize is None else bool(self.normalize)

    def layer_dims(self, input_dim: int) -> list[int]:
        return [input_dim, *self.hidden_dims, self.code_length]

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["lambda"] = d.pop("lam")
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        sub = {"alpha": AlphaSchedule, "lam": LambdaSchedule}
        for key, typ in sub.items():
            if key in d:
                if not isinstance(d[key], dict):
                    raise ConfigError(f"config key {key!r} must be an object")
                names = {f.name for f in dataclasses.fields(typ)}
                bad = sorted(set(d[key]) - names)
                if bad:
                    label = "lambda" if key == "lam" else key
                    raise ConfigError(f"unknown config key(s): {', '.join(f'{label}.{b}' for b in bad)}")
                d[key] = typ(**d[key])
        cfg = cls(**d)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "TrainConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(doc)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    qerr: float
    alpha: float
    lam: float
    n_triplets: int
    metrics: dict | None = None

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["lambda"] = d.pop("lam")
        return d


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def append(self, rec: EpochRecord):
        if self.records and rec.epoch != self.records[-1].epoch + 1:
            raise ValueError("epochs must be recorded consecutively")
        self.records.append(rec)

    def column(self, name: str) -> list:
        return [getattr(r, name) for r in self.records]

    def to_dict(self) -> dict:
        return {"epochs": [r.to_dict() for r in self.records]}

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def _epoch_margin(cfg: TrainConfig, epoch: int) -> tuple[float, float]:
    if cfg.mode == "triplet":
        return float(cfg.margin), 0.0
    return alpha_schedule(epoch, cfg.alpha), lambda_schedule(epoch, cfg.lam)


def _batch_loss(cfg, U, triplets, alpha, lam):
    if cfg.mode == "triplet":
        return losses.triplet_margin_loss(U, triplets, alpha, cfg.sum_reduction)
    loss, grad = losses.hash_likelihood_loss(U, triplets, alpha, cfg.sum_reduction)
    if lam > 0:
        q_loss, q_grad = losses.quantization_penalty(U, lam, cfg.sum_reduction)
        loss, grad = loss + q_loss, grad + q_grad
    return loss, grad


def _eval_metrics(params, cfg, eval_data) -> dict:
    db, queries = eval_data
    U_db, _ = forward(params, db.features)
    U_q, _ = forward(params, queries.features)
    k = min(cfg.eval_k, db.n)
    out = {"euclidean": evaluate(U_db, db.labels, U_q, queries.labels, k, "euclidean")}
    if cfg.mode == "hash":
        codes_db, codes_q = pack(binarize(U_db)), pack(binarize(U_q))
        out["hamming"] = evaluate(codes_db, db.labels, codes_q, queries.labels, k, "hamming")
    return {m: {"knn_accuracy": r.knn_accuracy, "map": r.map} for m, r in out.items()}


def train(cfg: TrainConfig, dataset: Dataset, eval_data=None, progress=None):
    """Train a model; returns ``(params, TrainHistory)``.

    ``progress`` is called with each :class:`EpochRecord` as it completes.
    ``eval_data`` is an optional ``(database, queries)`` pair evaluated every
    ``cfg.eval_every`` epochs and after the last one.

    Raises:
        DivergenceError: on a non-finite loss, gradient or parameter.
    """
    cfg.validate()
    # Overflow is caught explicitly by the divergence checks below.
    with np.errstate(over="ignore", invalid="ignore"):
        return _train(cfg, dataset, eval_data, progress)


def _train(cfg, dataset, eval_data, progress):
    params = init_mlp(cfg.layer_dims(dataset.d), cfg.init_seed, cfg.use_normalize)
    state = AdamState.zeros_like(params)
    batch_rng, select_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(cfg.mining_seed).spawn(2)
    )
    X_all = dataset.features.astype(np.float64)
    history = TrainHistory()
    for epoch in range(cfg.epochs):
        alpha, lam = _epoch_margin(cfg, epoch)
        n_classes = np.unique(dataset.labels).size
        plan = balanced_batches(dataset.labels, min(cfg.P, n_classes), cfg.K_pc, batch_rng)
        batch_losses, qerrs, n_trip = [], [], 0
        for b, rows in enumerate(plan):
            X, y = X_all[rows], dataset.labels[rows]
            U, cache = forward(params, X)
            if not np.all(np.isfinite(U)):
                raise DivergenceError(
                    f"non-finite embeddings at epoch {epoch}, batch {b}", epoch, b
                )
            D = losses.pairwise_sq_dists(U)
            triplets = select(cfg.selector, D, y, alpha, select_rng)
            loss, grad = _batch_loss(cfg, U, triplets, alpha, lam)
            if not math.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {b}", epoch, b)
            batch_losses.append(loss)
            qerrs.append(losses.quantization_error_per_bit(U))
            n_trip += len(triplets)
            if len(triplets) == 0 and lam == 0:
                continue
            try:
                params, state = adam_step(
                    params, backward(params, cache, grad), state, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps
                )
            except DivergenceError as exc:
                raise DivergenceError(f"{exc} at epoch {epoch}, batch {b}", epoch, b) from None
            if not all(np.all(np.isfinite(a)) for a in params.arrays()):
                raise DivergenceError(f"non-finite parameters at epoch {epoch}, batch {b}", epoch, b)
        rec = EpochRecord(
            epoch=epoch,
            loss=float(np.mean(batch_losses)) if batch_losses else 0.0,
            qerr=float(np.mean(qerrs)) if qerrs else 0.0,
            alpha=alpha,
            lam=lam,
            n_triplets=n_trip,
        )
        last = epoch == cfg.epochs - 1
        if eval_data is not None and (last or (cfg.eval_every and (epoch + 1) % cfg.eval_every == 0)):
            rec.metrics = _eval_metrics(params, cfg, eval_data)
        history.append(rec)
        log.debug("epoch=%d loss=%.6g alpha=%g lambda=%g qerr=%.6g", epoch, rec.loss, alpha, lam, rec.qerr)
        if progress is not None:
            progress(rec)
    return params, history


def train_triplet(cfg: TrainConfig, dataset: Dataset, **kwargs) -> tuple[MlpParams, TrainHistory]:
    if cfg.mode != "triplet":
        raise ConfigError(f"train_triplet needs mode='triplet', got {cfg.mode!r}")
    return train(cfg, dataset, **kwargs)


def train_hash(cfg: TrainConfig, dataset: Dataset, **kwargs) -> tuple[MlpParams, TrainHistory]:
    if cfg.mode != "hash":
        raise ConfigError(f"train_hash needs mode='hash', got {cfg.mode!r}")
    return train(cfg, dataset, **kwargs)
