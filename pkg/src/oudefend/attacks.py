"""Six adversarial video attack generators plus constraint verification.

Every generator is untargeted loss ascent against a model closure that
exposes batched cross-entropy loss, its input gradient, and per-sample
losses. Attacks operate on raw pixel arrays in [0, 1]; the closure is
expected to run the model in eval mode with frozen parameters, so attack
generation never mutates model state. sign(0) = 0 throughout. Each
generator records the loss seen at each of its gradient evaluations in
``loss_trace``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Protocol

import numpy as np

from .errors import ConfigError, ShapeError


class LossClosure(Protocol):
    def loss_and_grad(self, x: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]: ...

    def per_sample_loss(self, x: np.ndarray, labels: np.ndarray) -> np.ndarray: ...


ATTACK_ORDER = ("pgd_linf", "pgd_l2", "multav", "roa", "framing", "spa")


@dataclass
class PgdLinf:
    eps: float = 4 / 255
    alpha: float = 1 / 255
    steps: int = 5

    def __post_init__(self):
        if self.eps < 0 or self.alpha <= 0 or self.steps < 1:
            raise ConfigError("pgd_linf needs eps >= 0, alpha > 0, steps >= 1")


@dataclass
class PgdL2:
    """eps and alpha are in 255-scale pixel units (divided by 255 at run)."""

    eps: float = 160.0
    alpha: float = 1.0
    steps: int = 5

    def __post_init__(self):
        if self.eps < 0 or self.alpha <= 0 or self.steps < 1:
            raise ConfigError("pgd_l2 needs eps >= 0, alpha > 0, steps >= 1")


@dataclass
class MultAvLinf:
    eps_m: float = 1.04
    alpha_m: float = 1.01
    steps: int = 5

    def __post_init__(self):
        if self.eps_m < 1 or self.alpha_m <= 1 or self.steps < 1:
            raise ConfigError("multav needs eps_m >= 1, alpha_m > 1, steps >= 1")


@dataclass
class Roa:
    """One gray-initialized rectangle per video, same position on every
    frame; position found by exhaustive stride search, then PGD inside it."""

    rect_h: int = 8
    rect_w: int = 8
    alpha: float = 70 / 255
    steps: int = 5
    search_stride: int = 4

    def __post_init__(self):
        if self.rect_h < 1 or self.rect_w < 1 or self.alpha <= 0 or self.steps < 1 or self.search_stride < 1:
            raise ConfigError("roa needs positive rectangle, alpha, steps, stride")


@dataclass
class Framing:
    """A border band of the given width, shared across frames."""

    width: int = 2
    alpha: float = 70 / 255
    steps: int = 5

    def __post_init__(self):
        if self.width < 0 or self.alpha <= 0 or self.steps < 1:
            raise ConfigError("framing needs width >= 0, alpha > 0, steps >= 1")


@dataclass
class Spa:
    """Per-frame pixel budget driven toward extremes (salt-and-pepper)."""

    pixels_per_frame: int = 20
    alpha: float = 70 / 255
    steps: int = 5

    def __post_init__(self):
        if self.pixels_per_frame < 0 or self.alpha <= 0 or self.steps < 1:
            raise ConfigError("spa needs pixels_per_frame >= 0, alpha > 0, steps >= 1")


AttackConfig = PgdLinf | PgdL2 | MultAvLinf | Roa | Framing | Spa

_NAMES = {PgdLinf: "pgd_linf", PgdL2: "pgd_l2", MultAvLinf: "multav",
          Roa: "roa", Framing: "framing", Spa: "spa"}


def attack_name(cfg: AttackConfig) -> str:
    return _NAMES[type(cfg)]


def paper_attack_configs() -> dict:
    """The six attacks at their published settings."""
    return {
        "pgd_linf": PgdLinf(eps=4 / 255, alpha=1 / 255, steps=5),
        "pgd_l2": PgdL2(eps=160.0, alpha=1.0, steps=5),
        "multav": MultAvLinf(eps_m=1.04, alpha_m=1.01, steps=5),
        "roa": Roa(rect_h=30, rect_w=30, alpha=70 / 255, steps=5, search_stride=5),
        "framing": Framing(width=10, alpha=70 / 255, steps=5),
        "spa": Spa(pixels_per_frame=100, alpha=70 / 255, steps=5),
    }


def desk_attack_configs() -> dict:
    """Geometry scaled down to 32x32 desk frames."""
    return {
        "pgd_linf": PgdLinf(eps=4 / 255, alpha=1 / 255, steps=5),
        "pgd_l2": PgdL2(eps=160.0, alpha=1.0, steps=5),
        "multav": MultAvLinf(eps_m=1.04, alpha_m=1.01, steps=5),
        "roa": Roa(rect_h=8, rect_w=8, alpha=70 / 255, steps=5, search_stride=4),
        "framing": Framing(width=2, alpha=70 / 255, steps=5),
        "spa": Spa(pixels_per_frame=20, alpha=70 / 255, steps=5),
    }


@dataclass
class AttackResult:
    x_adv: np.ndarray
    loss_trace: list
    mask: Optional[np.ndarray] = None  # bool, same shape as x, where present


def _check_input(x):
    if x.ndim != 5:
        raise ShapeError(f"attacks expect (N,C,T,H,W) pixels, got shape {x.shape}")


def pgd_linf(closure: LossClosure, x, labels, cfg: PgdLinf) -> AttackResult:
    _check_input(x)
    xa = x.copy()
    trace = []
    for _ in range(cfg.steps):
        loss, g = closure.loss_and_grad(xa, labels)
        trace.append(loss)
        xa = xa + cfg.alpha * np.sign(g)
        delta = np.clip(xa - x, -cfg.eps, cfg.eps)
        xa = np.clip(x + delta, 0.0, 1.0)
    return AttackResult(xa, trace)


def pgd_l2(closure: LossClosure, x, labels, cfg: PgdL2) -> AttackResult:
    _check_input(x)
    eps = cfg.eps / 255.0
    alpha = cfg.alpha / 255.0
    xa = x.copy()
    trace = []
    for _ in range(cfg.steps):
        loss, g = closure.loss_and_grad(xa, labels)
        trace.append(loss)
        gn = np.sqrt((g * g).sum(axis=(1, 2, 3, 4), keepdims=True))
        step = np.divide(alpha * g, gn, out=np.zeros_like(g), where=gn > 0)
        xa = xa + step
        delta = xa - x
        dn = np.sqrt((delta * delta).sum(axis=(1, 2, 3, 4), keepdims=True))
        scale = np.where(dn > eps, np.divide(eps, dn, out=np.ones_like(dn), where=dn > 0), 1.0)
        xa = np.clip(x + delta * scale, 0.0, 1.0)
    return AttackResult(xa, trace)


def multav_linf(closure: LossClosure, x, labels, cfg: MultAvLinf) -> AttackResult:
    _check_input(x)
    r = np.ones_like(x)
    trace = []
    for _ in range(cfg.steps):
        xa = np.clip(x * r, 0.0, 1.0)
        loss, g = closure.loss_and_grad(xa, labels)
        trace.append(loss)
        r = np.clip(r * cfg.alpha_m ** np.sign(g), 1.0 / cfg.eps_m, cfg.eps_m)
    return AttackResult(np.clip(x * r, 0.0, 1.0), trace)


def roa(closure: LossClosure, x, labels, cfg: Roa) -> AttackResult:
    _check_input(x)
    N, C, T, H, W = x.shape
    if cfg.rect_h > H or cfg.rect_w > W:
        raise ConfigError(f"rectangle {(cfg.rect_h, cfg.rect_w)} exceeds frame {(H, W)}")
    rows = range(0, H - cfg.rect_h + 1, cfg.search_stride)
    cols = range(0, W - cfg.rect_w + 1, cfg.search_stride)

    best = np.full(N, -np.inf)
    best_pos = np.zeros((N, 2), dtype=np.int64)
    for r0 in rows:  # row-major order; strict > keeps the first best position
        for c0 in cols:
            cand = x.copy()
            cand[:, :, :, r0:r0 + cfg.rect_h, c0:c0 + cfg.rect_w] = 0.5
            losses = closure.per_sample_loss(cand, labels)
            better = losses > best
            best[better] = losses[better]
            best_pos[better] = (r0, c0)

    mask = np.zeros(x.shape, dtype=bool)
    xa = x.copy()
    for n in range(N):
        r0, c0 = best_pos[n]
        mask[n, :, :, r0:r0 + cfg.rect_h, c0:c0 + cfg.rect_w] = True
        xa[n, :, :, r0:r0 + cfg.rect_h, c0:c0 + cfg.rect_w] = 0.5

    trace = []
    for _ in range(cfg.steps):
        loss, g = closure.loss_and_grad(xa, labels)
        trace.append(loss)
        xa = np.clip(xa + cfg.alpha * np.sign(g) * mask, 0.0, 1.0)
    return AttackResult(xa, trace, mask)


def adversarial_framing(closure: LossClosure, x, labels, cfg: Framing) -> AttackResult:
    _check_input(x)
    N, C, T, H, W = x.shape
    if cfg.width > min(H, W) // 2:
        raise ConfigError(f"framing width {cfg.width} exceeds half frame {min(H, W) // 2}")
    rr, cc = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    band = (rr < cfg.width) | (rr >= H - cfg.width) | (cc < cfg.width) | (cc >= W - cfg.width)
    mask = np.broadcast_to(band, x.shape).copy()

    framing = np.full((N, C, H, W), 0.5)  # one framing per video, shared by frames
    xa = x.copy()
    xa[:, :, :, band] = framing[:, :, band][:, :, None, :]
    trace = []
    for _ in range(cfg.steps):
        loss, g = closure.loss_and_grad(xa, labels)
        trace.append(loss)
        g_shared = g.sum(axis=2)  # the framing repeats over frames
        framing = np.clip(framing + cfg.alpha * np.sign(g_shared), 0.0, 1.0)
        xa = x.copy()
        xa[:, :, :, band] = framing[:, :, band][:, :, None, :]
    return AttackResult(xa, trace, mask)


def spa(closure: LossClosure, x, labels, cfg: Spa) -> AttackResult:
    _check_input(x)
    N, C, T, H, W = x.shape
    k = cfg.pixels_per_frame
    if k > H * W:
        raise ConfigError(f"pixels_per_frame {k} exceeds frame area {H * W}")

    loss0, g0 = closure.loss_and_grad(x, labels)
    score = np.abs(g0).sum(axis=1).reshape(N, T, H * W)
    site_mask = np.zeros((N, T, H * W), dtype=bool)
    if k > 0:
        # stable sort keeps scan order among ties
        order = np.argsort(-score, axis=-1, kind="stable")[:, :, :k]
        np.put_along_axis(site_mask, order, True, axis=-1)
    mask = np.broadcast_to(site_mask.reshape(N, 1, T, H, W), x.shape).copy()

    xa = x.copy()
    trace = []
    for step in range(cfg.steps):
        if step == 0:
            loss, g = loss0, g0  # selection gradient doubles as the first step
        else:
            loss, g = closure.loss_and_grad(xa, labels)
        trace.append(loss)
        xa = np.clip(xa + cfg.alpha * np.sign(g) * mask, 0.0, 1.0)
    return AttackResult(xa, trace, mask)


_GENERATORS = {PgdLinf: pgd_linf, PgdL2: pgd_l2, MultAvLinf: multav_linf,
               Roa: roa, Framing: adversarial_framing, Spa: spa}


def run_attack(closure: LossClosure, x, labels, cfg: AttackConfig) -> AttackResult:
    try:
        gen = _GENERATORS[type(cfg)]
    except KeyError:
        raise ConfigError(f"unknown attack config {type(cfg).__name__}")
    return gen(closure, x, labels, cfg)


@dataclass
class ConstraintCheck:
    name: str
    passed: bool
    measured: float
    bound: float


@dataclass
class ConstraintReport:
    attack: str
    checks: list

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def lines(self):
        for c in self.checks:
            yield (f"{'PASS' if c.passed else 'FAIL'} {self.attack}.{c.name}: "
                   f"measured={c.measured:.6g} bound={c.bound:.6g}")


def _rect_geometry_ok(mask, rect_h, rect_w):
    """mask (C,T,H,W) for one sample: a single rect, equal on all frames."""
    first = mask[0, 0]
    if not np.all(mask == first[None, None, :, :]):
        return False
    rows = np.flatnonzero(first.any(axis=1))
    cols = np.flatnonzero(first.any(axis=0))
    if rows.size == 0:
        return rect_h == 0 or rect_w == 0
    if rows.size != rect_h or cols.size != rect_w:
        return False
    if rows[-1] - rows[0] + 1 != rect_h or cols[-1] - cols[0] + 1 != rect_w:
        return False
    return bool(first[rows[0]:rows[-1] + 1, cols[0]:cols[-1] + 1].all())


def verify_attack_constraints(x, result: AttackResult, cfg: AttackConfig) -> ConstraintReport:
    """Certify the attack-specific geometry plus the [0, 1] pixel box."""
    xa = result.x_adv
    if xa.shape != x.shape:
        raise ShapeError(f"x_adv shape {xa.shape} does not match x {x.shape}")
    checks = [ConstraintCheck(
        "pixel_range", bool(xa.min() >= 0.0 and xa.max() <= 1.0),
        float(max(0.0 - xa.min(), xa.max() - 1.0, 0.0)), 0.0)]
    diff = xa - x

    if isinstance(cfg, PgdLinf):
        v = float(np.abs(diff).max())
        checks.append(ConstraintCheck("linf_ball", v <= cfg.eps + 1e-12, v, cfg.eps))
    elif isinstance(cfg, PgdL2):
        eps = cfg.eps / 255.0
        v = float(np.sqrt((diff * diff).sum(axis=(1, 2, 3, 4))).max())
        checks.append(ConstraintCheck("l2_ball", v <= eps + 1e-9, v, eps))
    elif isinstance(cfg, MultAvLinf):
        pos = x > 0
        ratio = np.divide(xa, x, out=np.ones_like(x), where=pos)
        hi = float(ratio.max())
        lo = float(ratio.min())
        checks.append(ConstraintCheck("ratio_upper", hi <= cfg.eps_m + 1e-9, hi, cfg.eps_m))
        checks.append(ConstraintCheck("ratio_lower", lo >= 1.0 / cfg.eps_m - 1e-9, lo, 1.0 / cfg.eps_m))
        zeros_kept = float(np.abs(xa[~pos]).max()) if (~pos).any() else 0.0
        checks.append(ConstraintCheck("zeros_fixed", zeros_kept == 0.0, zeros_kept, 0.0))
    elif isinstance(cfg, Roa):
        if result.mask is None:
            checks.append(ConstraintCheck("mask_present", False, 0.0, 0.0))
        else:
            outside = float(np.abs(diff[~result.mask]).max()) if (~result.mask).any() else 0.0
            checks.append(ConstraintCheck("outside_rect_unchanged", outside == 0.0, outside, 0.0))
            geo = all(_rect_geometry_ok(result.mask[n], cfg.rect_h, cfg.rect_w)
                      for n in range(x.shape[0]))
            checks.append(ConstraintCheck("single_shared_rectangle", geo, float(not geo), 0.0))
    elif isinstance(cfg, Framing):
        w = cfg.width
        H, W = x.shape[3], x.shape[4]
        interior = np.zeros((H, W), dtype=bool)
        interior[w:H - w, w:W - w] = True
        inside = float(np.abs(diff[:, :, :, interior]).max()) if interior.any() else 0.0
        checks.append(ConstraintCheck("interior_unchanged", inside == 0.0, inside, 0.0))
        # the framing replaces border pixels, so wherever the attack touched a
        # site, x_adv itself must be constant across frames at that site
        border = ~interior
        drift = 0.0
        if border.any():
            xb = xa[:, :, :, border]
            touched = (diff[:, :, :, border] != 0).any(axis=2)
            if touched.any():
                site_drift = np.abs(xb - xb[:, :, :1]).max(axis=2)
                drift = float(site_drift[touched].max())
        checks.append(ConstraintCheck("framing_shared_over_frames", drift == 0.0, drift, 0.0))
    elif isinstance(cfg, Spa):
        changed = (diff != 0).any(axis=1)  # (N, T, H, W)
        counts = changed.sum(axis=(2, 3))
        v = float(counts.max()) if counts.size else 0.0
        checks.append(ConstraintCheck("sites_per_frame", v <= cfg.pixels_per_frame,
                                      v, float(cfg.pixels_per_frame)))
    else:
        raise ConfigError(f"unknown attack config {type(cfg).__name__}")
    return ConstraintReport(attack_name(cfg), checks)
