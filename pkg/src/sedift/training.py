"""Objectives, optimization, paired augmentation, splitting, and the train loop.

The generator minimizes alpha * L1 + beta * (adversarial term); the
discriminator, when present, alternates one update per generator update.
All randomness (shuffling, dropout, augmentation) flows from one seeded
generator so a run is bit-reproducible from (seed, config, dataset).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.ndimage import affine_transform

from .core import Image, ModalPair, PipelineConfig
from .errors import ConfigError, ContractViolation, DataError, NumericError, require
from .nn.model import DiscriminatorNet, GeneratorNet

PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class LossConfig:
    alpha: float = 100.0
    beta: float = 0.0

    def __post_init__(self):
        require(self.alpha >= 0.0 and self.beta >= 0.0 and self.alpha + self.beta > 0.0,
                "need alpha >= 0, beta >= 0, alpha + beta > 0")


def l1_loss(y, y_hat) -> float:
    """Mean absolute difference over all elements."""
    a = y.data if isinstance(y, Image) else np.asarray(y, dtype=np.float64)
    b = y_hat.data if isinstance(y_hat, Image) else np.asarray(y_hat, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractViolation(f"l1_loss shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b)))


def _clamped(p) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise ContractViolation("probability grid values must lie in (0, 1)")
    return np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)


def cgan_losses(d_real, d_fake):
    """(discriminator loss, generator adversarial loss) from patch grids.

    Discriminator: -mean(log d_real) - mean(log(1 - d_fake)). Generator uses
    the non-saturating form -mean(log d_fake). Probabilities are clamped to
    [1e-7, 1 - 1e-7] before the logs so both terms stay finite.
    """
    pr = _clamped(d_real)
    pf = _clamped(d_fake)
    disc = float(-np.mean(np.log(pr)) - np.mean(np.log(1.0 - pf)))
    gen_adv = float(-np.mean(np.log(pf)))
    return disc, gen_adv


def _disc_loss_grads(d_real, d_fake):
    """Gradients of the discriminator loss wrt the raw probability grids."""
    pr = _clamped(d_real)
    pf = _clamped(d_fake)
    in_r = (d_real > PROB_CLAMP) & (d_real < 1.0 - PROB_CLAMP)
    in_f = (d_fake > PROB_CLAMP) & (d_fake < 1.0 - PROB_CLAMP)
    d_pr = np.where(in_r, -1.0 / (pr * pr.size), 0.0)
    d_pf = np.where(in_f, 1.0 / ((1.0 - pf) * pf.size), 0.0)
    return d_pr, d_pf


def _gen_adv_grad(d_fake):
    pf = _clamped(d_fake)
    in_f = (d_fake > PROB_CLAMP) & (d_fake < 1.0 - PROB_CLAMP)
    return np.where(in_f, -1.0 / (pf * pf.size), 0.0)


def combined_objective(l1: float, g_adv: float, cfg: LossConfig) -> float:
    require(math.isfinite(l1) and math.isfinite(g_adv), "objective terms must be finite")
    return cfg.alpha * l1 + cfg.beta * g_adv


class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self, params: dict):
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}


def adam_step(params: dict, grads: dict, state: AdamState, lr: float = 1e-4,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """One in-place Adam update with bias correction."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient in parameter {name!r} "
                               f"(|g|max={np.max(np.abs(g[np.isfinite(g)])) if np.any(np.isfinite(g)) else 'nan'})")
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name, g in grads.items():
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        params[name] -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return params, state


@dataclass(frozen=True)
class PairTransform:
    """One joint geometric transform applied identically to both channels."""

    flip: bool = False
    angle_deg: float = 0.0
    shift_frac: tuple = (0.0, 0.0)  # (dy, dx) as fractions of H, W
    scale: float = 1.0

    def is_identity_affine(self) -> bool:
        return (self.angle_deg == 0.0 and self.scale == 1.0
                and self.shift_frac == (0.0, 0.0))

    def apply_to_array(self, arr: np.ndarray) -> np.ndarray:
        a = np.asarray(arr, dtype=np.float64)
        squeeze = a.ndim == 3
        if squeeze:
            a = a[:, :, 0]
        if self.flip:
            a = a[:, ::-1]
        if self.is_identity_affine():
            return (a[:, :, None] if squeeze else a).copy()
        h, w = a.shape
        cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
        ty, tx = self.shift_frac[0] * h, self.shift_frac[1] * w
        th = math.radians(self.angle_deg)
        rot = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
        inv = rot.T / self.scale  # inverse of scale * rot
        center = np.array([cy, cx])
        offset = center - inv @ (center + np.array([ty, tx]))
        out = affine_transform(a, inv, offset=offset, order=1, mode="reflect")
        return out[:, :, None] if squeeze else out

    def map_coords(self, pts: np.ndarray, shape) -> np.ndarray:
        """Where (y, x) positions land after the transform; oracle helper."""
        h, w = shape[:2]
        pts = np.asarray(pts, dtype=np.float64).reshape(-1, 2).copy()
        if self.flip:
            pts[:, 1] = (w - 1) - pts[:, 1]
        cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
        th = math.radians(self.angle_deg)
        rot = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
        centered = pts - np.array([cy, cx])
        out = (self.scale * (rot @ centered.T)).T + np.array([cy, cx])
        return out + np.array([self.shift_frac[0] * h, self.shift_frac[1] * w])


def sample_transform(rng) -> PairTransform:
    return PairTransform(
        flip=bool(rng.random() < 0.5),
        angle_deg=float(rng.uniform(-10.0, 10.0)),
        shift_frac=(float(rng.uniform(-0.1, 0.1)), float(rng.uniform(-0.1, 0.1))),
        scale=float(rng.uniform(0.9, 1.1)),
    )


def augment_pair(pair: ModalPair, rng) -> ModalPair:
    """Apply one random rotation/shift/scale/flip to both channels at once."""
    tf = sample_transform(rng)
    return ModalPair(rgb_gray=Image(tf.apply_to_array(pair.rgb_gray.data)),
                     thermal=Image(tf.apply_to_array(pair.thermal.data)),
                     timestamp=pair.timestamp, category=pair.category,
                     scene_id=pair.scene_id)


def split_dataset(items, seed: int, key=None):
    """Deterministic 90/5/5 split with disjoint scene_id groups."""
    key = key or (lambda item: item.scene_id)
    items = list(items)
    if len(items) < 20:
        raise DataError(f"refusing to split {len(items)} pairs; need at least 20")
    groups = {}
    for item in items:
        groups.setdefault(key(item), []).append(item)
    ids = sorted(groups)
    order = np.random.default_rng(seed).permutation(len(ids))
    n = len(items)
    n_test = max(1, round(0.05 * n))
    n_val = max(1, round(0.05 * n))
    test, val, train = [], [], []
    for idx in order:
        bucket = groups[ids[idx]]
        if len(test) < n_test:
            test.extend(bucket)
        elif len(val) < n_val:
            val.extend(bucket)
        else:
            train.extend(bucket)
    return train, val, test


@dataclass(frozen=True)
class TrainSample:
    """One supervised example: input image, global vector, target image."""

    x: np.ndarray       # (H, W, 1)
    g: np.ndarray       # (global_len,)
    y: np.ndarray       # (H, W, 1)
    scene_id: str
    category: str


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 100.0
    beta: float = 0.0
    learning_rate: float = 1e-4
    max_epochs: int = 200
    patience: int = 10
    batch_size: int = 4
    l2_weight: float = 1e-5
    seed: int = 0
    augment: bool = True
    target_train_l1: float = 0.0  # early exit threshold; 0 disables

    @staticmethod
    def from_pipeline(cfg: PipelineConfig, **overrides) -> "TrainConfig":
        base = TrainConfig(alpha=cfg.alpha, beta=cfg.beta,
                           learning_rate=cfg.learning_rate, max_epochs=cfg.max_epochs,
                           patience=cfg.patience, batch_size=cfg.batch_size,
                           l2_weight=cfg.l2_weight, seed=cfg.seed, augment=cfg.augment)
        return replace(base, **overrides)


@dataclass
class TrainState:
    epoch: int = 0
    best_val: float = math.inf
    since_improve: int = 0


@dataclass
class TrainResult:
    params: dict             # best-validation generator parameters
    best_val_l1: float
    history: list            # dict rows: epoch, train_l1, val_l1, disc_loss, gen_adv
    stop_reason: str         # early | max_epochs | target | diverged
    epochs_run: int
    disc_params: dict = None


def history_to_csv(history) -> str:
    lines = ["epoch,train_l1,val_l1,disc_loss,gen_adv"]
    for row in history:
        lines.append(f"{row['epoch']},{row['train_l1']:.8f},{row['val_l1']:.8f},"
                     f"{row['disc_loss']:.8f},{row['gen_adv']:.8f}")
    return "\n".join(lines) + "\n"


def _stack_batch(samples, transform_rng=None):
    xs, gs, ys = [], [], []
    for s in samples:
        x, y = s.x, s.y
        if transform_rng is not None:
            tf = sample_transform(transform_rng)
            x = tf.apply_to_array(x)
            y = tf.apply_to_array(y)
        xs.append(x)
        gs.append(s.g)
        ys.append(y)
    return np.stack(xs), np.stack(gs), np.stack(ys)


def evaluate_l1(generator: GeneratorNet, samples, batch_size: int = 4) -> float:
    """Mean per-sample L1 over a sample list, eval mode."""
    require(len(samples) > 0, "cannot evaluate an empty sample list")
    total = 0.0
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        x, g, y = _stack_batch(chunk)
        y_hat, _ = generator.forward(x, g, mode="eval")
        total += np.abs(y_hat - y).mean(axis=(1, 2, 3)).sum()
    return float(total / len(samples))


def _l2_inject(grads: dict, params: dict, names, weight: float):
    if weight <= 0.0:
        return
    for name in names:
        grads[name] = grads[name] + 2.0 * weight * params[name]


def train(generator: GeneratorNet, train_samples, val_samples, cfg: TrainConfig,
          discriminator: DiscriminatorNet = None) -> TrainResult:
    """Optimize the generator (and discriminator when beta > 0).

    Stops at max_epochs, after `patience` epochs without validation
    improvement, when the train L1 reaches target_train_l1 (if set), or on a
    non-finite loss (returning the best parameters seen so far).
    """
    loss_cfg = LossConfig(cfg.alpha, cfg.beta)
    if (cfg.beta > 0.0) != (discriminator is not None):
        raise ConfigError("discriminator must be present exactly when beta > 0")
    require(len(train_samples) > 0 and len(val_samples) > 0,
            "need non-empty train and validation sets")

    rng = np.random.default_rng(cfg.seed)
    gen_state = AdamState(generator.params)
    disc_state = AdamState(discriminator.params) if discriminator else None
    state = TrainState()
    best_params = {k: v.copy() for k, v in generator.params.items()}
    history = []
    stop_reason = "max_epochs"

    for epoch in range(1, cfg.max_epochs + 1):
        state.epoch = epoch
        order = rng.permutation(len(train_samples))
        epoch_l1 = 0.0
        epoch_disc = 0.0
        epoch_adv = 0.0
        seen = 0
        diverged = False
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            chunk = [train_samples[i] for i in idx]
            x, g, y = _stack_batch(chunk, transform_rng=rng if cfg.augment else None)
            y_hat, tape = generator.forward(x, g, mode="train", rng=rng)
            batch_l1 = float(np.mean(np.abs(y_hat - y)))
            if not math.isfinite(batch_l1):
                diverged = True
                break
            d_loss = 0.0
            g_adv = 0.0
            dy_adv = 0.0
            if discriminator is not None:
                p_real, tape_r = discriminator.forward(x, y)
                p_fake, tape_f = discriminator.forward(x, y_hat)
                d_loss, _ = cgan_losses(p_real, p_fake)
                if not math.isfinite(d_loss):
                    diverged = True
                    break
                d_pr, d_pf = _disc_loss_grads(p_real, p_fake)
                _, _, grads_r = discriminator.backward(tape_r, d_pr)
                _, _, grads_f = discriminator.backward(tape_f, d_pf)
                disc_grads = {k: grads_r[k] + grads_f[k] for k in grads_r}
                _l2_inject(disc_grads, discriminator.params,
                           discriminator.l2_param_names(), cfg.l2_weight)
                try:
                    adam_step(discriminator.params, disc_grads, disc_state,
                              lr=cfg.learning_rate)
                except NumericError:
                    diverged = True
                    break
                p_fake2, tape_f2 = discriminator.forward(x, y_hat)
                _, g_adv = cgan_losses(p_real, p_fake2)
                _, dy_adv, _ = discriminator.backward(
                    tape_f2, cfg.beta * _gen_adv_grad(p_fake2))
            d_l1 = cfg.alpha * np.sign(y_hat - y) / y.size
            dy_total = d_l1 + dy_adv if discriminator is not None else d_l1
            _, gen_grads, _ = generator.backward(tape, dy_total)
            _l2_inject(gen_grads, generator.params, generator.l2_param_names(),
                       cfg.l2_weight)
            try:
                adam_step(generator.params, gen_grads, gen_state, lr=cfg.learning_rate)
            except NumericError:
                diverged = True
                break
            epoch_l1 += batch_l1 * len(chunk)
            epoch_disc += d_loss * len(chunk)
            epoch_adv += g_adv * len(chunk)
            seen += len(chunk)
        if diverged:
            stop_reason = "diverged"
            break
        train_l1 = epoch_l1 / max(seen, 1)
        val_l1 = evaluate_l1(generator, val_samples, cfg.batch_size)
        history.append({"epoch": epoch, "train_l1": train_l1, "val_l1": val_l1,
                        "disc_loss": epoch_disc / max(seen, 1),
                        "gen_adv": epoch_adv / max(seen, 1)})
        if not math.isfinite(val_l1):
            stop_reason = "diverged"
            break
        if val_l1 < state.best_val:
            state.best_val = val_l1
            state.since_improve = 0
            best_params = {k: v.copy() for k, v in generator.params.items()}
        else:
            state.since_improve += 1
        if cfg.target_train_l1 > 0.0 and train_l1 < cfg.target_train_l1:
            stop_reason = "target"
            break
        if state.since_improve >= cfg.patience:
            stop_reason = "early"
            break

    return TrainResult(params=best_params, best_val_l1=state.best_val,
                       history=history, stop_reason=stop_reason,
                       epochs_run=state.epoch,
                       disc_params=dict(discriminator.params) if discriminator else None)
