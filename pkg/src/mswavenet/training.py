"""Training recipe: Adam, plateau LR scheduler with best-model reload,
portable binary checkpoints, and MAE/MSE evaluation in physical units.

The loss is MSE on min-max-normalized wind speed; reported metrics
de-normalize predictions back to m/s first.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import DatasetTensor, MinMaxScaler, batch_iter
from .model import ModelConfig, Network


class TrainingError(Exception):
    pass


class CheckpointError(Exception):
    pass


# ---------------------------------------------------------------------------
# checkpoint format: magic, entry count, (name, dims, float64 data) entries,
# then a length-prefixed JSON trailer with config/scaler/seed/epoch/val_loss

MAGIC = b"STGW1"


@dataclass
class Checkpoint:
    params: dict  # name -> float64 ndarray
    config: dict
    scaler: dict
    seed: int
    epoch: int
    val_loss: float
    run_config: dict = None  # full RunConfig echo, when launched via the CLI

    def save(self, path) -> None:
        chunks = [MAGIC, struct.pack("<I", len(self.params))]
        for name in sorted(self.params):
            arr = np.ascontiguousarray(self.params[name], dtype="<f8")
            name_b = name.encode("utf-8")
            chunks.append(struct.pack("<I", len(name_b)))
            chunks.append(name_b)
            chunks.append(struct.pack("<I", arr.ndim))
            chunks.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
            chunks.append(arr.tobytes())
        trailer = json.dumps(
            {
                "config": self.config,
                "scaler": self.scaler,
                "seed": self.seed,
                "epoch": self.epoch,
                "val_loss": self.val_loss,
                "run_config": self.run_config,
            },
            sort_keys=True,
        ).encode("utf-8")
        chunks.append(struct.pack("<I", len(trailer)))
        chunks.append(trailer)
        with open(path, "wb") as fh:
            fh.write(b"".join(chunks))

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with open(path, "rb") as fh:
            blob = fh.read()
        if blob[:5] != MAGIC:
            raise CheckpointError(f"{path}: bad magic {blob[:5]!r}")
        off = 5

        def take(n):
            nonlocal off
            if off + n > len(blob):
                raise CheckpointError(f"{path}: truncated at byte {off}")
            out = blob[off : off + n]
            off += n
            return out

        (count,) = struct.unpack("<I", take(4))
        params = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<I", take(4))
            name = take(name_len).decode("utf-8")
            (rank,) = struct.unpack("<I", take(4))
            dims = struct.unpack(f"<{rank}I", take(4 * rank))
            size = int(np.prod(dims)) if rank else 1
            arr = np.frombuffer(take(8 * size), dtype="<f8").reshape(dims).copy()
            params[name] = arr
        (trailer_len,) = struct.unpack("<I", take(4))
        trailer = json.loads(take(trailer_len).decode("utf-8"))
        if off != len(blob):
            raise CheckpointError(
                f"{path}: {len(blob) - off} trailing bytes after trailer"
            )
        return cls(
            params=params,
            config=trailer["config"],
            scaler=trailer["scaler"],
            seed=trailer["seed"],
            epoch=trailer["epoch"],
            val_loss=trailer["val_loss"],
            run_config=trailer.get("run_config"),
        )

    def build_network(self, node_order=None) -> Network:
        net = Network(ModelConfig.from_dict(self.config), seed=self.seed, node_order=node_order)
        net.load_state_dict(self.params)
        return net


# ---------------------------------------------------------------------------


class AdamOptimizer:
    """Standard Adam with bias correction."""

    def __init__(self, params, lr=0.001, beta1=0.9, beta2=0.999, epsilon=1e-8):
        self.params = list(params)  # (name, Variable)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self.m = {name: np.zeros_like(p.value) for name, p in self.params}
        self.v = {name: np.zeros_like(p.value) for name, p in self.params}

    def step(self):
        self.step_count += 1
        t = self.step_count
        for name, p in self.params:
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient in parameter {name!r}")
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            m_hat = m / (1 - self.beta1**t)
            v_hat = v / (1 - self.beta2**t)
            p.value = p.value - self.lr * m_hat / (np.sqrt(v_hat) + self.epsilon)


class PlateauScheduler:
    """Cut the LR by ``factor`` after ``patience`` consecutive non-improving
    epochs, restoring the best-so-far parameters on every cut."""

    def __init__(self, optimizer, save_best, restore_best, factor=0.7, patience=3):
        self.optimizer = optimizer
        self.save_best = save_best
        self.restore_best = restore_best
        self.factor = factor
        self.patience = patience
        self.best_val_loss = math.inf
        self.epochs_since_improvement = 0
        self.has_best = False

    def step(self, val_loss: float) -> dict:
        """Call once per epoch after validation; returns event flags."""
        improved = val_loss < self.best_val_loss
        cut = False
        if improved:
            self.best_val_loss = val_loss
            self.epochs_since_improvement = 0
            self.save_best()
            self.has_best = True
        else:
            self.epochs_since_improvement += 1
            if self.epochs_since_improvement >= self.patience:
                if not self.has_best:
                    raise TrainingError("learning-rate cut without a saved best model")
                self.optimizer.lr *= self.factor
                self.restore_best()
                self.epochs_since_improvement = 0
                cut = True
        return {"improved": improved, "cut": cut, "lr": self.optimizer.lr}


@dataclass
class Metrics:
    mae: float
    mse: float
    per_node: dict  # node name -> {"mae": ..., "mse": ...}
    horizon: int


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: list = field(default_factory=list)  # per-epoch dicts


def _normalized_targets(dataset: DatasetTensor, scaler: MinMaxScaler) -> np.ndarray:
    out = np.empty_like(dataset.targets)
    for j, node in enumerate(dataset.target_nodes):
        out[:, j] = scaler.normalize_wind_speed(dataset.targets[:, j], node)
    return out


def _eval_loss(net: Network, inputs, norm_targets, batch_size=256) -> float:
    total_sq = 0.0
    n = 0
    for start in range(0, inputs.shape[0], batch_size):
        xb = inputs[start : start + batch_size]
        tb = norm_targets[start : start + batch_size]
        pred = net.forward(xb).value
        total_sq += float(((pred - tb) ** 2).sum())
        n += tb.size
    return total_sq / n


def train(
    net: Network,
    train_ds: DatasetTensor,
    val_ds: DatasetTensor,
    scaler: MinMaxScaler,
    checkpoint_path,
    lr: float = 0.001,
    epochs: int = 50,
    batch_size: int = 64,
    factor: float = 0.7,
    patience: int = 3,
    seed: int = 0,
    log_fn=None,
    run_config: dict = None,
) -> TrainResult:
    """Run the full recipe and return the best-validation checkpoint."""
    if len(train_ds) == 0:
        raise TrainingError("training split is empty")
    optimizer = AdamOptimizer(net.parameters(), lr=lr)
    train_targets = _normalized_targets(train_ds, scaler)
    val_targets = _normalized_targets(val_ds, scaler) if len(val_ds) else None

    def make_checkpoint(epoch, val_loss):
        return Checkpoint(
            params=net.state_dict(),
            config=net.config.to_dict(),
            scaler=scaler.state(),
            seed=net.seed,
            epoch=epoch,
            val_loss=val_loss,
            run_config=run_config,
        )

    state = {"epoch": 0, "val_loss": math.inf}

    def save_best():
        make_checkpoint(state["epoch"], state["val_loss"]).save(checkpoint_path)

    def restore_best():
        try:
            best = Checkpoint.load(checkpoint_path)
        except (OSError, CheckpointError) as exc:
            raise TrainingError(f"best checkpoint unavailable for reload: {exc}") from exc
        net.load_state_dict(best.params)

    scheduler = PlateauScheduler(optimizer, save_best, restore_best, factor, patience)
    log = []
    for epoch in range(1, epochs + 1):
        epoch_sq = 0.0
        epoch_n = 0
        for xb, tb in batch_iter(train_ds, batch_size, shuffle=True, seed=seed + epoch):
            tb_norm = np.empty_like(tb)
            for j, node in enumerate(train_ds.target_nodes):
                tb_norm[:, j] = scaler.normalize_wind_speed(tb[:, j], node)
            net.zero_grad()
            loss = ad.mse_loss(net.forward(xb), tb_norm)
            if not np.isfinite(loss.value):
                raise TrainingError(
                    f"training diverged at epoch {epoch}: loss {loss.value}"
                )
            ad.backward(loss)
            optimizer.step()
            epoch_sq += float(loss.value) * tb.size
            epoch_n += tb.size
        train_loss = epoch_sq / epoch_n
        if val_targets is not None:
            val_loss = _eval_loss(net, val_ds.inputs, val_targets)
        else:
            val_loss = train_loss
        state["epoch"] = epoch
        state["val_loss"] = val_loss
        events = scheduler.step(val_loss)
        row = {
            "epoch": epoch,
            "train_loss": train_loss,
            "val_loss": val_loss,
            "lr": events["lr"],
            "reload": events["cut"],
        }
        log.append(row)
        if log_fn:
            log_fn(row)
    best = Checkpoint.load(checkpoint_path)
    return TrainResult(checkpoint=best, log=log)


def overfit(net: Network, inputs, targets, max_steps=2000, lr=0.001, tol=1e-3):
    """Full-batch Adam until the training MSE drops below tol (memorization
    sanity check). Returns (steps_taken, final_mse)."""
    optimizer = AdamOptimizer(net.parameters(), lr=lr)
    mse = math.inf
    for step in range(1, max_steps + 1):
        net.zero_grad()
        loss = ad.mse_loss(net.forward(inputs), targets)
        mse = float(loss.value)
        if mse < tol:
            return step, mse
        ad.backward(loss)
        optimizer.step()
    return max_steps, mse


def _metrics_from_errors(pred: np.ndarray, target: np.ndarray, node_names, horizon) -> Metrics:
    err = pred - target
    per_node = {}
    for j, name in enumerate(node_names):
        per_node[name] = {
            "mae": float(np.abs(err[:, j]).mean()),
            "mse": float((err[:, j] ** 2).mean()),
        }
    return Metrics(
        mae=float(np.abs(err).mean()),
        mse=float((err**2).mean()),
        per_node=per_node,
        horizon=horizon,
    )


def predict_physical(net: Network, dataset: DatasetTensor, scaler: MinMaxScaler, batch_size=256):
    """Model forecasts de-normalized to m/s, [S, n_targets]."""
    preds = []
    for start in range(0, len(dataset), batch_size):
        xb = dataset.inputs[start : start + batch_size]
        preds.append(net.forward(xb).value)
    pred = np.concatenate(preds, axis=0) if preds else np.zeros_like(dataset.targets)
    out = np.empty_like(pred)
    for j, node in enumerate(dataset.target_nodes):
        out[:, j] = scaler.invert_wind_speed(pred[:, j], node)
    return out


def evaluate(checkpoint: Checkpoint, dataset: DatasetTensor, scaler: MinMaxScaler) -> Metrics:
    """MAE/MSE in m/s over a split, with a per-target-node breakdown."""
    if checkpoint.scaler != scaler.state():
        raise TrainingError("scaler does not match the one stored in the checkpoint")
    net = checkpoint.build_network(node_order=dataset.node_order)
    pred = predict_physical(net, dataset, scaler)
    names = [dataset.node_order[i] for i in dataset.target_nodes]
    return _metrics_from_errors(pred, dataset.targets, names, dataset.horizon)


def persistence_baseline(dataset: DatasetTensor, scaler: MinMaxScaler) -> Metrics:
    """Forecast = last observed wind speed in the window, in m/s."""
    from .data import WIND_SPEED

    pred = np.empty_like(dataset.targets)
    for j, node in enumerate(dataset.target_nodes):
        last = dataset.inputs[:, WIND_SPEED, node, -1]
        pred[:, j] = scaler.invert_wind_speed(last, node)
    names = [dataset.node_order[i] for i in dataset.target_nodes]
    return _metrics_from_errors(pred, dataset.targets, names, dataset.horizon)
