"""Optimization loop: AdamW with decoupled decay, one-cycle LR schedule,
global gradient-norm clipping, epoch orchestration and evaluation.

Training is deterministic for fixed (model seed, data seed) in the default
single-threaded mode: the epoch shuffle and flip coins derive from
``seed + epoch`` and nothing else consumes randomness.
"""

import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from . import data as datamod
from .errors import ConfigError, ContractError, NumericsError

METRICS_HEADER = "epoch,loss,train_acc,test_acc,lr,seconds"


@dataclass
class OneCycle:
    """Cosine ramp to max_lr over warmup, cosine anneal to the floor after.

    lr(0) = max_lr / div_factor; lr(peak) = max_lr exactly at step
    floor(warmup_frac * total_steps); the final floor is start_lr / final_div.
    """

    max_lr: float
    total_steps: int
    warmup_frac: float = 0.3
    div_factor: float = 25.0
    final_div: float = 1e4

    def __post_init__(self):
        if self.total_steps < 2:
            raise ConfigError("schedule needs at least 2 steps")
        if not 0.0 < self.warmup_frac < 1.0:
            raise ConfigError("warmup_frac must lie in (0, 1)")
        # floor(warmup_frac * total); the tiny epsilon keeps decimals entered
        # as floats (0.3 * 70) from flooring one step short.
        self.peak_step = math.floor(self.warmup_frac * self.total_steps + 1e-9)
        if self.peak_step < 1:
            self.peak_step = 1

    def lr(self, step):
        if not 0 <= step < self.total_steps:
            raise ContractError(f"step {step} outside [0, {self.total_steps})")
        lo = self.max_lr / self.div_factor
        if step <= self.peak_step:
            t = step / self.peak_step
            return lo + (self.max_lr - lo) * 0.5 * (1.0 - math.cos(math.pi * t))
        end = lo / self.final_div
        t = (step - self.peak_step) / (self.total_steps - self.peak_step)
        return end + (self.max_lr - end) * 0.5 * (1.0 + math.cos(math.pi * t))


def decay_exempt(name):
    """Biases and norm affine terms skip weight decay."""
    return name.endswith((".bias", ".gamma", ".beta"))


class AdamW:
    """Adam with bias correction and decoupled weight decay applied first."""

    def __init__(self, params, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=0.005):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.weight_decay = weight_decay
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.step_count = 0

    def load_state(self, m, v, step_count):
        for k in self.m:
            self.m[k][...] = m[k]
            self.v[k][...] = v[k]
        self.step_count = int(step_count)

    def step(self, params, grads, lr):
        """One update in place; raises NumericsError naming any NaN gradient."""
        for name in params:
            if name not in grads:
                raise ContractError(f"missing gradient for {name!r}")
            if not np.isfinite(grads[name]).all():
                raise NumericsError(f"non-finite gradient for parameter {name!r}")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for name, w in params.items():
            g = grads[name]
            if self.weight_decay and not decay_exempt(name):
                w -= lr * self.weight_decay * w
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            mhat = m / bc1
            vhat = v / bc2
            w -= lr * mhat / (np.sqrt(vhat) + self.eps)


def clip_grad_norm(grads, max_norm):
    """Scale all grads so the global L2 norm is at most max_norm.

    Returns the pre-clip norm; grads are modified in place when clipping.
    """
    if max_norm <= 0:
        raise ConfigError("max_norm must be positive")
    total = 0.0
    for g in grads.values():
        total += float(np.vdot(g, g))
    norm = math.sqrt(total)
    if norm > max_norm:
        factor = max_norm / norm
        for g in grads.values():
            g *= factor
    return norm


def accuracy(logits, labels):
    """Exact top-1 fraction; argmax ties resolve to the lowest class index."""
    return float((np.argmax(logits, axis=1) == labels).mean())


def evaluate(model, dataset, batch_size=256):
    """Eval-mode top-1 accuracy and mean cross-entropy over a dataset."""
    correct = 0
    loss_sum = 0.0
    for imgs, labels in datamod.batches(dataset, batch_size):
        _, loss, logits = model.loss(imgs, labels, train=False)
        n = len(labels)
        loss_sum += float(loss.data.reshape(())) * n
        correct += int((np.argmax(logits.data.reshape(n, -1), axis=1) == labels).sum())
    return correct / dataset.n, loss_sum / dataset.n


@dataclass
class TrainSettings:
    epochs: int = 10
    batch_size: int = 64
    max_lr: float = 0.01
    weight_decay: float = 0.005
    clip_norm: float | None = 1.0
    seed: int = 0
    augment: bool = True
    eval_batch: int = 256
    warmup_frac: float = 0.3
    div_factor: float = 25.0
    final_div: float = 1e4
    timing: bool = False  # wall-clock seconds in metrics rows (breaks byte determinism)


@dataclass
class EpochRow:
    epoch: int
    loss: float
    train_acc: float
    test_acc: float | None
    lr: float
    seconds: float

    def csv(self):
        test = f"{self.test_acc:.6f}" if self.test_acc is not None else ""
        return (f"{self.epoch},{self.loss:.6f},{self.train_acc:.6f},{test},"
                f"{self.lr:.8g},{self.seconds:.3f}")


def _write_metrics(path, rows):
    lines = [METRICS_HEADER] + [r.csv() for r in rows]
    Path(path).write_text("\n".join(lines) + "\n")


def _read_metrics(path):
    rows = []
    lines = Path(path).read_text().strip().split("\n")
    for line in lines[1:]:
        epoch, loss, tr, te, lr, sec = line.split(",")
        rows.append(EpochRow(int(epoch), float(loss), float(tr),
                             float(te) if te else None, float(lr), float(sec)))
    return rows


def train(model, train_ds, test_ds=None, settings=None, out_dir=None,
          log=None, resume=None, stop_after=None):
    """Run the full loop; returns the list of per-epoch metric rows.

    With out_dir set, writes metrics.csv after every epoch plus last.spmx and
    best.spmx (best test accuracy, falling back to train accuracy). On a
    non-finite loss the epoch-start snapshot is written to last.spmx and
    NumericsError propagates. ``resume`` takes a last.spmx path and continues
    after the epochs it already covers, reproducing an uninterrupted run;
    ``stop_after`` ends the run early (simulating an interruption) while
    keeping the full-length schedule.
    """
    settings = settings or TrainSettings()
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    steps_per_epoch = -(-train_ds.n // settings.batch_size)
    total_steps = settings.epochs * steps_per_epoch
    schedule = OneCycle(settings.max_lr, max(total_steps, 2),
                        warmup_frac=settings.warmup_frac,
                        div_factor=settings.div_factor,
                        final_div=settings.final_div)
    optim = AdamW(model.params, weight_decay=settings.weight_decay)

    rows = []
    start_epoch = 0
    best_metric = -1.0
    if resume is not None:
        loaded, aux = ckpt.load_checkpoint(resume, expect_config=model.config)
        model.load_arrays(loaded.params, loaded.state)
        if "optim_m" in aux:
            optim.load_state(aux["optim_m"], aux["optim_v"], aux["optim_step"])
        start_epoch = int(aux["extra"].get("epochs_done", 0))
        best_metric = float(aux["extra"].get("best_metric", -1.0))
        if optim.step_count != start_epoch * steps_per_epoch:
            raise ContractError(
                "resume checkpoint was written with different batch settings")
        prior_csv = out_dir / "metrics.csv" if out_dir is not None else None
        if prior_csv is not None and prior_csv.exists():
            rows = [r for r in _read_metrics(prior_csv) if r.epoch <= start_epoch]

    last_epoch = settings.epochs if stop_after is None else min(
        settings.epochs, stop_after)
    step = optim.step_count
    for epoch in range(start_epoch, last_epoch):
        t0 = time.perf_counter()
        snapshot = ({k: v.copy() for k, v in model.params.items()},
                    {k: v.copy() for k, v in model.state.items()})
        loss_sum = 0.0
        seen = 0
        correct = 0
        lr = schedule.lr(min(step, total_steps - 1))
        for imgs, labels in datamod.batches(
                train_ds, settings.batch_size, seed=settings.seed + epoch,
                shuffle=True, augment=settings.augment):
            tape, loss, logits = model.loss(imgs, labels, train=True)
            loss_val = float(loss.data.reshape(()))
            if not math.isfinite(loss_val):
                if out_dir is not None:
                    model.load_arrays(*snapshot)
                    save_training_checkpoint(model, optim, out_dir / "last.spmx",
                                             epochs_done=epoch, best_metric=best_metric)
                raise NumericsError(f"loss became non-finite at epoch {epoch}")
            grads = tape.backward(loss)
            if settings.clip_norm is not None:
                clip_grad_norm(grads, settings.clip_norm)
            lr = schedule.lr(step)
            optim.step(model.params, grads, lr)
            step += 1
            n = len(labels)
            seen += n
            loss_sum += loss_val * n
            correct += int((np.argmax(logits.data.reshape(n, -1), axis=1)
                            == labels).sum())

        test_acc = None
        if test_ds is not None:
            test_acc, _ = evaluate(model, test_ds, settings.eval_batch)
        seconds = time.perf_counter() - t0 if settings.timing else 0.0
        row = EpochRow(epoch + 1, loss_sum / seen, correct / seen, test_acc,
                       lr, seconds)
        rows.append(row)
        if log is not None:
            wall = time.perf_counter() - t0
            log(f"epoch {row.epoch}/{settings.epochs} loss={row.loss:.4f} "
                f"train_acc={row.train_acc:.4f} "
                f"test_acc={'-' if test_acc is None else f'{test_acc:.4f}'} "
                f"lr={row.lr:.5f} ({wall:.1f}s)")

        metric = test_acc if test_acc is not None else row.train_acc
        if out_dir is not None:
            if metric > best_metric:
                best_metric = metric
                save_training_checkpoint(model, optim, out_dir / "best.spmx",
                                         epochs_done=epoch + 1,
                                         best_metric=best_metric)
            save_training_checkpoint(model, optim, out_dir / "last.spmx",
                                     epochs_done=epoch + 1, best_metric=best_metric)
            _write_metrics(out_dir / "metrics.csv", rows)
        else:
            best_metric = max(best_metric, metric)

    if step != total_steps and start_epoch == 0 and last_epoch == settings.epochs:
        raise ContractError(f"schedule consumed {step} of {total_steps} steps")
    return rows


def save_training_checkpoint(model, optim, path, epochs_done, best_metric):
    ckpt.save_checkpoint(model, path, optimizer=optim,
                         extra={"epochs_done": epochs_done,
                                "best_metric": best_metric})
