"""SGD training (clean and adversarial), evaluation, and summary metrics.

Adversarial mode follows the protocol where every training batch is
replaced by adversarial examples generated against the current model
before the gradient update. Generation runs through an eval-mode closure
with frozen parameters, so batch-norm running statistics are never touched
by attacks; the update itself runs in train mode.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .attacks import ATTACK_ORDER, AttackConfig, attack_name, run_attack
from .data import VideoBatch
from .errors import ArityError, ConfigError, ParamError
from .layers import per_sample_cross_entropy, softmax_cross_entropy
from .models import Model, backbone_forward
from .tensor import Tape, Tensor


@dataclass
class TrainConfig:
    epochs: int = 8
    batch_size: int = 8
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0
    mode: str = "clean"  # clean | adversarial
    train_attack: Optional[AttackConfig] = None
    lr_decay_factor: float = 0.1
    lr_decay_at: tuple = (0.6, 0.85)  # fractions of total epochs
    eval_attacks: tuple = ()  # AttackConfigs evaluated after the final epoch

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch_size < 4:
            raise ConfigError("batch_size must be >= 4")
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.mode not in ("clean", "adversarial"):
            raise ConfigError(f"mode must be clean or adversarial, got {self.mode!r}")
        if self.mode == "adversarial" and self.train_attack is None:
            raise ConfigError("adversarial mode needs a train_attack")

    def lr_at(self, epoch: int) -> float:
        decays = sum(1 for frac in self.lr_decay_at if epoch >= int(frac * self.epochs))
        return self.lr * self.lr_decay_factor ** decays


class ModelClosure:
    """Loss/gradient oracle over pixels with frozen parameters (eval mode).

    Parameter tensors are detached but share storage with the live model,
    so a closure built once stays current across in-place SGD updates.
    """

    def __init__(self, model: Model):
        self._model = model
        self._params = {k: v.detach() for k, v in model.params.items()}

    def loss_and_grad(self, x: np.ndarray, labels: np.ndarray):
        xt = Tensor(x, requires_grad=True)
        with Tape() as tape:
            logits = backbone_forward(xt, self._model.bcfg, self._model.ocfg,
                                      self._params, self._model.bn_state, mode="eval")
            loss = softmax_cross_entropy(logits, labels)
        tape.backward(loss)
        return float(loss.data), xt.grad

    def per_sample_loss(self, x: np.ndarray, labels: np.ndarray) -> np.ndarray:
        logits = backbone_forward(Tensor(x), self._model.bcfg, self._model.ocfg,
                                  self._params, self._model.bn_state, mode="eval")
        return per_sample_cross_entropy(logits.data, labels)


def sgd_step(params, grads, lr, momentum, weight_decay, velocity) -> None:
    """v <- momentum*v + g + weight_decay*w; w <- w - lr*v (in place).

    ``grads`` must carry exactly the parameter names. Updates mutate the
    parameter arrays so detached views stay aligned.
    """
    if set(grads) != set(params):
        missing = set(params) ^ set(grads)
        raise ParamError(f"grads misaligned with params: {sorted(missing)[:4]}")
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.data.shape:
            raise ParamError(f"grad shape {g.shape} != param shape {p.data.shape} for {name}")
        v = velocity.get(name)
        if v is None:
            v = np.zeros_like(p.data)
            velocity[name] = v
        v *= momentum
        v += g + weight_decay * p.data
        p.data -= lr * v


@dataclass
class EpochStats:
    loss: float
    lr: float
    adv_batches: int
    clean_batches: int


def train_epoch(model: Model, train: VideoBatch, cfg: TrainConfig, epoch: int,
                velocity: dict) -> EpochStats:
    """One pass over the training data; deterministic in (cfg.seed, epoch)."""
    n = len(train)
    if cfg.batch_size > n:
        raise ConfigError(f"batch_size {cfg.batch_size} exceeds dataset size {n}")
    order = np.random.default_rng(np.random.SeedSequence([cfg.seed, epoch])).permutation(n)
    lr = cfg.lr_at(epoch)

    total_loss = 0.0
    adv_batches = clean_batches = 0
    for start in range(0, n, cfg.batch_size):
        idx = order[start:start + cfg.batch_size]
        xb = train.pixels[idx]
        yb = train.labels[idx]
        if cfg.mode == "adversarial":
            closure = ModelClosure(model)
            xb = run_attack(closure, xb, yb, cfg.train_attack).x_adv
            adv_batches += 1
        else:
            clean_batches += 1

        with Tape() as tape:
            logits = model.forward(Tensor(xb), mode="train")
            loss = softmax_cross_entropy(logits, yb)
        tape.backward(loss)

        grads = {name: (p.grad if p.grad is not None else np.zeros_like(p.data))
                 for name, p in model.params.items()}
        sgd_step(model.params, grads, lr, cfg.momentum, cfg.weight_decay, velocity)
        for p in model.params.values():
            p.zero_grad()
        total_loss += float(loss.data) * len(idx)

    return EpochStats(total_loss / n, lr, adv_batches, clean_batches)


def evaluate(model: Model, batch: VideoBatch, attack: Optional[AttackConfig] = None,
             batch_size: int = 16) -> float:
    """Accuracy percent under an optional attack (eval-mode forward)."""
    correct = 0
    closure = ModelClosure(model) if attack is not None else None
    for start in range(0, len(batch), batch_size):
        xb = batch.pixels[start:start + batch_size]
        yb = batch.labels[start:start + batch_size]
        if attack is not None:
            xb = run_attack(closure, xb, yb, attack).x_adv
        pred = model.logits(xb).argmax(axis=1)
        correct += int((pred == yb).sum())
    return 100.0 * correct / len(batch)


def avg_adv(accuracies) -> float:
    """Arithmetic mean of the six per-attack accuracies, to 2 decimals."""
    vals = list(accuracies)
    if len(vals) != 6:
        raise ArityError(f"avg_adv needs exactly 6 values, got {len(vals)}")
    return round(sum(float(v) for v in vals) / 6.0, 2)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    clean_acc: float
    attack_acc: dict = field(default_factory=dict)  # attack name -> accuracy
    avg_adv: Optional[float] = None
    seconds: float = 0.0


@dataclass
class TrainReport:
    records: list = field(default_factory=list)
    adv_batches: int = 0
    clean_batches: int = 0

    HEADER = ("epoch", "train_loss", "clean_acc") + ATTACK_ORDER + ("avg_adv", "seconds")

    def to_text(self) -> str:
        lines = ["\t".join(self.HEADER)]
        for r in self.records:
            row = [str(r.epoch), f"{r.train_loss:.6f}", f"{r.clean_acc:.2f}"]
            row += [f"{r.attack_acc[a]:.2f}" if a in r.attack_acc else "-" for a in ATTACK_ORDER]
            row.append(f"{r.avg_adv:.2f}" if r.avg_adv is not None else "-")
            row.append(f"{r.seconds:.3f}")
            lines.append("\t".join(row))
        return "\n".join(lines) + "\n"

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_text())


def fit(model: Model, train: VideoBatch, test: VideoBatch, cfg: TrainConfig) -> TrainReport:
    """Train for cfg.epochs; per-epoch clean accuracy, final-epoch attacks."""
    report = TrainReport()
    velocity: dict = {}
    for epoch in range(cfg.epochs):
        t0 = time.perf_counter()
        stats = train_epoch(model, train, cfg, epoch, velocity)
        clean_acc = evaluate(model, test)
        rec = EpochRecord(epoch=epoch, train_loss=stats.loss, clean_acc=clean_acc)
        if epoch == cfg.epochs - 1:
            for acfg in cfg.eval_attacks:
                rec.attack_acc[attack_name(acfg)] = evaluate(model, test, attack=acfg)
            if len(rec.attack_acc) == 6:
                rec.avg_adv = avg_adv([rec.attack_acc[a] for a in ATTACK_ORDER])
        rec.seconds = time.perf_counter() - t0
        report.records.append(rec)
        report.adv_batches += stats.adv_batches
        report.clean_batches += stats.clean_batches
    return report
