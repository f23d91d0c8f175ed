"""Minibatch SGD with L2 weight decay, sanity checks, grid search and
finite-difference gradient checking."""

import copy
import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import layers as L
from .data import batch_indices
from .errors import ConfigError, DivergenceError, UsageError
from .evaluation import evaluate
from .hog import hog_batch
from .netspec import build_model, hog_config_for, resolve_arch

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    lr: float
    reg: float
    epochs: int
    batch: int = 128
    momentum: float = 0.0
    seed: int = 0
    hybrid: bool = False
    lr_decay: float = 1.0
    dtype: str = "float32"
    train_acc_samples: int = 1000

    def __post_init__(self):
        if not (self.lr >= 0 and self.reg >= 0 and self.epochs >= 1 and self.batch >= 1
                and self.momentum >= 0):
            raise ConfigError(f"invalid training configuration {self}")


# Hyper-parameters selected by cross-validation for the two reference networks.
TRAIN_PRESETS = {
    "shallow": TrainConfig(lr=0.001, reg=1e-6, epochs=30, batch=128),
    "deep": TrainConfig(lr=0.01, reg=1e-7, epochs=35, batch=128),
}
HIDDEN_PRESETS = {"shallow": (512,), "deep": (256, 512)}


@dataclass
class History:
    loss_per_iteration: list = field(default_factory=list)
    train_acc_per_epoch: list = field(default_factory=list)
    val_acc_per_epoch: list = field(default_factory=list)

    def write_csv(self, directory):
        directory = Path(directory)
        with open(directory / "history.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "loss"])
            for i, loss in enumerate(self.loss_per_iteration, 1):
                w.writerow([i, repr(loss)])
        with open(directory / "epochs.csv", "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "train_acc", "val_acc"])
            for e, (tr, va) in enumerate(zip(self.train_acc_per_epoch,
                                             self.val_acc_per_epoch), 1):
                w.writerow([e, repr(tr), repr(va)])


def weight_names(params):
    return [k for k in params if k.endswith(".W")]


def total_loss(model, x, labels, reg, hog=None, rng=None):
    """Softmax loss plus 0.5*reg*||W||^2 over conv/fc weights, with gradients."""
    model.train()
    scores, caches = model.forward(x, hog, rng)
    loss, dscores = L.softmax_loss(scores, labels)
    grads = model.backward(dscores, caches)
    if reg:
        for k in weight_names(model.params):
            w = model.params[k]
            loss += 0.5 * reg * float(np.sum(w * w))
            grads[k] = grads[k] + reg * w
    return loss, grads


def penalized_loss(model, x, labels, reg, hog=None, rng=None):
    """Forward-only train-mode version of ``total_loss`` (no gradients)."""
    model.train()
    scores, _ = model.forward(x, hog, rng)
    loss, _ = L.softmax_loss(scores, labels)
    if reg:
        loss += 0.5 * reg * sum(float(np.sum(model.params[k] ** 2))
                                for k in weight_names(model.params))
    return loss


def sgd_step(params, grads, velocity, lr, momentum=0.0):
    """In-place SGD update; ``velocity`` is filled lazily when momentum > 0."""
    for k, g in grads.items():
        w = params[k]
        if g.shape != w.shape:
            raise UsageError(f"gradient for {k} has shape {g.shape}, parameter {w.shape}")
        if momentum:
            v = velocity.get(k)
            if v is None:
                v = velocity[k] = np.zeros_like(w)
            v *= momentum
            v -= lr * g
            w += v
        else:
            w -= lr * g
    return params, velocity


@dataclass
class SanityReport:
    name: str
    passed: bool
    measured: float
    target: float
    detail: str = ""

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        return f"{self.name}: {status} (measured {self.measured:.4f}, target {self.target:.4f}) {self.detail}".rstrip()


def random_batch(spec, n, seed):
    """Mean-free pixel-scale noise images and uniform labels."""
    rng = np.random.default_rng(seed)
    H, W = spec.input_hw
    x = 60.0 * rng.standard_normal((n, 1, H, W))
    y = rng.integers(0, spec.num_classes, size=n)
    return x, y


def _hog_for(spec, raw_images):
    if not spec.hog_concat:
        return None
    return hog_batch(raw_images, hog_config_for(spec))


def sanity_initial_loss(spec, x=None, labels=None, seed=0, batch=32, weight_scale=1.0,
                        tol=0.05):
    """Unregularised loss of a fresh model should sit at ln(num_classes)."""
    spec = resolve_arch(spec)
    model = build_model(spec, seed, weight_scale=weight_scale)
    if x is None:
        x, labels = random_batch(spec, batch, seed)
        hog = _hog_for(spec, x + 128.0)
    else:
        hog = _hog_for(spec, x)
    with np.errstate(over="ignore", invalid="ignore"):
        loss, _ = total_loss(model, x, labels, 0.0, hog)
    target = math.log(spec.num_classes)
    ok = bool(np.isfinite(loss) and abs(loss - target) < tol)
    return SanityReport("initial-loss", ok, loss, target, f"tolerance {tol}")


def without_dropout(spec):
    return replace(spec, conv_layers=tuple(replace(c, dropout=None) for c in spec.conv_layers),
                   fc_layers=tuple(replace(f, dropout=None) for f in spec.fc_layers))


def sanity_overfit(spec, train_set, n_small=20, lr=0.05, momentum=0.9, epochs=200,
                   seed=0, train_hog=None, dtype="float32", dropout=False, trace=None):
    """Fit ``n_small`` training samples with every regularizer off.

    L2 is zero and, unless ``dropout`` is set, dropout layers are removed.
    Passes when eval-mode accuracy on the subset reaches 100% and the
    eval-mode loss drops below 0.05 within ``epochs`` full-batch epochs.
    Train-mode losses are appended to ``trace`` when it is a list.
    """
    spec = resolve_arch(spec)
    if not dropout:
        spec = without_dropout(spec)
    idx = np.arange(min(n_small, len(train_set)))
    subset = train_set.take(idx)
    hog = None if train_hog is None else train_hog[idx]
    cfg = TrainConfig(lr=lr, reg=0.0, epochs=epochs, batch=len(idx), momentum=momentum,
                      seed=seed, dtype=dtype)
    model = build_model(spec, seed, dtype=np.dtype(dtype))
    x = subset.images.astype(model.dtype)
    velocity = {}
    loss = acc = float("nan")
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(1, epochs + 1):
            for b in batch_indices(len(idx), cfg.batch, seed, epoch):
                train_loss, grads = total_loss(model, x[b], subset.labels[b], 0.0,
                                               None if hog is None else hog[b])
                if trace is not None:
                    trace.append(train_loss)
                sgd_step(model.params, grads, velocity, lr, momentum)
            model.eval()
            scores, _ = model.forward(x, hog)
            loss, _ = L.softmax_loss(scores.astype(np.float64), subset.labels)
            acc = float(np.mean(scores.argmax(axis=1) == subset.labels))
            if not np.isfinite(loss):
                break
            if acc == 1.0 and loss < 0.05:
                return SanityReport("overfit", True, loss, 0.05,
                                    f"train acc 100% after {epoch} epochs")
    return SanityReport("overfit", False, loss, 0.05,
                        f"train acc {100 * acc:.1f}% after {epochs} epochs")


@dataclass
class TrainResult:
    model: object
    history: History
    best_model: object
    best_epoch: int
    best_val_acc: float


def _batches(n, cfg, epoch, has_bn):
    chunks = batch_indices(n, cfg.batch, cfg.seed, epoch)
    # BN cannot normalise a single sample; fold a singleton tail into the previous batch
    if has_bn and len(chunks) > 1 and len(chunks[-1]) == 1:
        chunks[-2:] = [np.concatenate(chunks[-2:])]
    return chunks


def train(spec, cfg, train_set, val_set, train_hog=None, val_hog=None, on_epoch=None):
    """Run ``cfg.epochs`` epochs of minibatch SGD.

    ``train_set``/``val_set`` must already be normalised (and augmented).
    Hybrid specs need HOG rows for every sample. Returns the final model,
    the history and a copy of the model at the best validation epoch.
    """
    spec = resolve_arch(spec, hybrid=cfg.hybrid)
    if spec.hog_concat and (train_hog is None or val_hog is None):
        raise ConfigError("hybrid training needs precomputed HOG features for train and val")
    model = build_model(spec, cfg.seed, dtype=np.dtype(cfg.dtype))
    has_bn = bool(model.bn)
    x = train_set.images.astype(model.dtype)
    y = train_set.labels
    acc_rng = np.random.default_rng([cfg.seed, 7])
    acc_idx = np.sort(acc_rng.permutation(len(y))[:cfg.train_acc_samples])
    acc_set = train_set.take(acc_idx)
    acc_hog = None if train_hog is None else train_hog[acc_idx]

    history = History()
    velocity = {}
    lr = cfg.lr
    best_model, best_epoch, best_acc = None, 0, -1.0
    it = 0
    for epoch in range(cfg.epochs):
        for idx in _batches(len(y), cfg, epoch, has_bn):
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grads = total_loss(model, x[idx], y[idx], cfg.reg,
                                         None if train_hog is None else train_hog[idx])
            it += 1
            if not np.isfinite(loss):
                raise DivergenceError(it, loss)
            history.loss_per_iteration.append(loss)
            sgd_step(model.params, grads, velocity, lr, cfg.momentum)
        lr *= cfg.lr_decay
        with np.errstate(over="ignore", invalid="ignore"):
            train_acc, _ = evaluate(model, acc_set, acc_hog)
            val_acc, _ = evaluate(model, val_set, val_hog)
        history.train_acc_per_epoch.append(train_acc)
        history.val_acc_per_epoch.append(val_acc)
        log.info("epoch %d/%d loss %.4f train %.3f val %.3f",
                 epoch + 1, cfg.epochs, history.loss_per_iteration[-1], train_acc, val_acc)
        if val_acc > best_acc:
            best_model, best_epoch, best_acc = copy.deepcopy(model), epoch + 1, val_acc
        if on_epoch is not None:
            on_epoch(epoch + 1, model, history)
    model.eval()
    best_model.eval()
    return TrainResult(model, history, best_model, best_epoch, best_acc)


@dataclass(frozen=True)
class GridSpec:
    lr_values: tuple
    reg_values: tuple
    hidden_values: tuple

    def __post_init__(self):
        if not (self.lr_values and self.reg_values and self.hidden_values):
            raise ConfigError("every grid axis needs at least one value")

    def combos(self):
        for lr in self.lr_values:
            for reg in self.reg_values:
                for hidden in self.hidden_values:
                    yield lr, reg, hidden


@dataclass
class GridResult:
    lr: float
    reg: float
    hidden: tuple
    val_acc: float
    diverged: bool = False

    def sort_key(self):
        return (self.diverged, -self.val_acc, self.lr, self.reg, self.hidden)


def _as_hidden(h):
    return (int(h),) if isinstance(h, (int, np.integer)) else tuple(int(v) for v in h)


def grid_search(spec, grid, train_set, val_set, short_epochs, base_cfg, train_hog=None,
                val_hog=None, threads=1):
    """Train every (lr, reg, hidden) combination and rank by validation accuracy.

    Divergent runs rank last with ``diverged`` set. Ties break on
    (lr, reg, hidden) ascending. Results never depend on ``threads``.
    """
    spec = resolve_arch(spec, hybrid=base_cfg.hybrid)

    def run(combo):
        lr, reg, hidden = combo
        hidden = _as_hidden(hidden)
        cfg = replace(base_cfg, lr=lr, reg=reg, epochs=short_epochs)
        s = spec.with_hidden(hidden if len(hidden) > 1 else hidden[0])
        try:
            res = train(s, cfg, train_set, val_set, train_hog, val_hog)
        except DivergenceError:
            return GridResult(lr, reg, hidden, float("nan"), diverged=True)
        return GridResult(lr, reg, hidden, res.best_val_acc)

    combos = list(grid.combos())
    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            results = list(pool.map(run, combos))
    else:
        results = [run(c) for c in combos]
    return sorted(results, key=GridResult.sort_key)


def relative_error(a, b):
    return np.abs(a - b) / np.maximum(np.abs(a) + np.abs(b), 1e-8)


def _decision_pattern(caches):
    """ReLU on/off states and max-pool winners of one forward pass."""
    out = []
    for c in caches.conv:
        out.append(c["relu"] > 0)
        if "pool" in c:
            out.append(c["pool"][1])
    out.extend(c["relu"] > 0 for c in caches.fc)
    return out


def _same_pattern(a, b):
    return all(np.array_equal(u, v) for u, v in zip(a, b))


def grad_check(spec, n_samples=2, step=1e-5, seed=0, reg=0.0, max_coords=None,
               fd_dtype=np.float64, skipped=None):
    """Max relative error between analytic and central-difference gradients,
    per parameter tensor.

    Analytic gradients are computed in float64. Every loss evaluation reuses
    one dropout generator state, so masks are identical across perturbations;
    BN running stats are restored afterwards. A coordinate whose +/- step
    flips any ReLU or max-pool decision straddles a kink and is left out
    (counted in ``skipped`` when a dict is passed). ``fd_dtype`` sets the
    precision of the finite-difference evaluations; a wider type lowers the
    round-off floor for parameters whose true gradient is zero, such as conv
    biases feeding batch norm. ``max_coords`` caps the coordinates checked
    per tensor.
    """
    spec = resolve_arch(spec)
    model = build_model(spec, seed, dtype=np.float64)
    rng = np.random.default_rng([seed, 3])
    H, W = spec.input_hw
    raw = rng.uniform(0, 255, size=(n_samples, 1, H, W))
    x = raw - raw.mean()
    y = rng.integers(0, spec.num_classes, size=n_samples)
    hog = _hog_for(spec, raw)

    def masks():
        return np.random.default_rng([seed, 5])

    _, analytic = total_loss(model, x, y, reg, hog, rng=masks())
    probe = copy.deepcopy(model).astype(fd_dtype)
    xf = x.astype(fd_dtype)
    hf = None if hog is None else hog.astype(fd_dtype)

    def f():
        scores, caches = probe.forward(xf, hf, masks())
        loss, _ = L.softmax_loss(scores, y)
        if reg:
            loss += 0.5 * reg * sum(np.sum(probe.params[k] ** 2)
                                    for k in weight_names(probe.params))
        return loss, _decision_pattern(caches)

    probe.train()
    _, base = f()
    report = {}
    for name, p in probe.params.items():
        flat = p.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.choice(flat.size, max_coords, replace=False))
        keep, numeric = [], []
        for c in coords:
            old = flat[c]
            flat[c] = old + step
            fp, pat_p = f()
            flat[c] = old - step
            fm, pat_m = f()
            flat[c] = old
            if _same_pattern(pat_p, base) and _same_pattern(pat_m, base):
                keep.append(c)
                numeric.append(float((fp - fm) / (2 * step)))
        if skipped is not None:
            skipped[name] = len(coords) - len(keep)
        a = analytic[name].reshape(-1)[np.array(keep, dtype=np.int64)]
        err = relative_error(a, np.array(numeric))
        report[name] = float(err.max()) if err.size else 0.0
    return report
