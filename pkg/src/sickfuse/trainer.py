"""Training loop, cross-validation harness, and evaluation metrics.

Per fold: severity thresholds and normalization constants are fit on that
fold's training windows only, a fresh model is trained with Adam under
early stopping (validation loss, best-parameter restoration), and the held
-out partition is scored. Validation data is carved out of the training
partition, never the test set. Folds are independent and could run in
parallel; each fold's loop is sequential and seeded.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DivergenceError
from .labeling import (SEVERITY_CLASSES, classify_severity, compute_fms_quantiles,
                       compute_norm_stats, severity_index, window_to_model_inputs)
from .model import (FusionModel, ModelConfig, build_model, loss_crossentropy,
                    loss_rmse)
from .rng import seed_stream
from .tensor import AdamState, Tape, Tensor, adam_step, backward, ops


@dataclass
class TrainConfig:
    epochs: int = 300          # paper-scale default; desk runs pass fewer
    batch_size: int = 512
    patience: int = 20
    val_fraction: float = 0.2
    folds: int = 10
    seed: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError("val_fraction must be in (0,1)")
        if self.patience < 1:
            raise ConfigError("patience must be >= 1")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")


def kfold_split(n: int, k: int, seed: int) -> list:
    """k disjoint covering index sets, sizes within 1, deterministic per seed."""
    if n < k:
        raise ConfigError(f"cannot split {n} samples into {k} folds")
    rng = seed_stream(seed, "cv.folds")
    perm = rng.permutation(n)
    base = n // k
    extra = n % k
    folds = []
    start = 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        folds.append(np.sort(perm[start:start + size]))
        start += size
    return folds


# ---------------------------------------------------------------------------
# dataset assembly
# ---------------------------------------------------------------------------

@dataclass
class ArrayDataset:
    """Model-ready stacked inputs plus raw scores, one row per window."""

    inputs: dict          # modality -> (N, ...) float64
    fms: np.ndarray       # (N,)
    session_keys: list

    def __len__(self):
        return len(self.fms)

    def subset_batch(self, indices):
        return {m: a[indices] for m, a in self.inputs.items()}


def build_dataset(windows, config: ModelConfig, per_session=None,
                  pooled=None) -> ArrayDataset:
    """Stack window tensors, normalizing eye/head with the given statistics."""
    per_session = per_session or {}
    stacks = {m: [] for m in config.modalities}
    for w in windows:
        norm = per_session.get(w.session_key, pooled)
        tensors = window_to_model_inputs(
            w, timestep=config.timestep, norm=norm,
            modalities=config.modalities, selection=config.selection,
            max_disparity=config.max_disparity)
        for m in config.modalities:
            stacks[m].append(tensors[m])
    inputs = {m: np.stack(v) if v else np.zeros((0,) + config.input_shape(m))
              for m, v in stacks.items()}
    return ArrayDataset(inputs, np.array([w.fms for w in windows]),
                        [w.session_key for w in windows])


def classification_targets(fms, quantiles):
    labels = np.array([severity_index(classify_severity(v, quantiles)) for v in fms])
    onehot = np.zeros((len(fms), len(SEVERITY_CLASSES)))
    onehot[np.arange(len(fms)), labels] = 1.0
    return labels, onehot


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

def _task_loss(config, pred, target):
    if config.task == "classification":
        return loss_crossentropy(pred, target)
    return loss_rmse(pred, target)


def _dataset_loss(model, data: ArrayDataset, targets, indices, batch_size):
    """Task loss over a subset in infer mode (no dropout, running stats)."""
    total, count = 0.0, 0
    for lo in range(0, len(indices), batch_size):
        idx = indices[lo:lo + batch_size]
        pred = model.forward(data.subset_batch(idx), mode="infer")
        loss = _task_loss(model.config, pred, Tensor(targets[idx], checked=False))
        total += loss.item() * len(idx)
        count += len(idx)
    return total / max(count, 1)


@dataclass
class History:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = 0
    stop_epoch: int = 0
    seconds: float = 0.0


def train(model: FusionModel, data: ArrayDataset, targets: np.ndarray,
          config: TrainConfig, fit_idx=None, val_idx=None,
          stream_prefix: str = "train", val_loss_fn=None) -> History:
    """Minibatch Adam with early stopping on validation loss.

    `targets` holds one row per window (one-hot or (N,1) scores). When
    fit/val index sets are not given, a seeded `val_fraction` split of all
    rows is used. `val_loss_fn(model, epoch)` can replace the validation
    evaluation (test instrumentation). Training restores the best-validation
    parameters before returning.
    """
    n = len(data)
    if n == 0:
        raise ConfigError("empty training set")
    if fit_idx is None or val_idx is None:
        split_rng = seed_stream(config.seed, f"{stream_prefix}.valsplit")
        order = split_rng.permutation(n)
        n_val = max(1, int(round(config.val_fraction * n)))
        if n_val >= n:
            raise ConfigError("validation split leaves no training data")
        val_idx, fit_idx = np.sort(order[:n_val]), np.sort(order[n_val:])

    shuffle_rng = seed_stream(config.seed, f"{stream_prefix}.shuffle")
    dropout_rng = seed_stream(config.seed, f"{stream_prefix}.dropout")
    params = model.parameters()
    adam = AdamState(params, lr=config.lr, beta1=config.beta1,
                     beta2=config.beta2, eps=config.eps)

    history = History()
    best_val = np.inf
    best_params = None
    since_improvement = 0
    started = time.perf_counter()

    for epoch in range(1, config.epochs + 1):
        order = fit_idx[shuffle_rng.permutation(len(fit_idx))]
        epoch_loss, seen = 0.0, 0
        for bi, lo in enumerate(range(0, len(order), config.batch_size)):
            idx = order[lo:lo + config.batch_size]
            if len(idx) < 2:
                continue  # batchnorm train mode needs >= 2 rows
            with Tape() as tape:
                tape.watch_all(params)
                pred = model.forward(data.subset_batch(idx), mode="train",
                                     rng=dropout_rng)
                loss = ops.add(_task_loss(model.config, pred,
                                          Tensor(targets[idx], checked=False)),
                               tape.regularization_total())
            value = loss.item()
            if not np.isfinite(value):
                raise DivergenceError(epoch, bi)
            backward(tape, loss)
            adam_step(params, adam)
            epoch_loss += value * len(idx)
            seen += len(idx)
        history.train_loss.append(epoch_loss / max(seen, 1))

        if val_loss_fn is not None:
            val = float(val_loss_fn(model, epoch))
        else:
            val = _dataset_loss(model, data, targets, val_idx, config.batch_size)
        history.val_loss.append(val)

        if val < best_val:
            best_val = val
            best_params = model.parameter_arrays()
            history.best_epoch = epoch
            since_improvement = 0
        else:
            since_improvement += 1
        if since_improvement >= config.patience:
            history.stop_epoch = epoch
            break
    else:
        history.stop_epoch = config.epochs

    if best_params is not None:
        model.load_parameter_arrays(best_params)
    history.seconds = time.perf_counter() - started
    return history


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def evaluate_classification(preds, labels, n_classes: int = 4) -> dict:
    """Accuracy plus per-class precision/recall; undefined entries are None."""
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    metrics = {"accuracy": float((preds == labels).mean())}
    for c in range(n_classes):
        name = SEVERITY_CLASSES[c] if n_classes == len(SEVERITY_CLASSES) else str(c)
        predicted = preds == c
        actual = labels == c
        hits = float((predicted & actual).sum())
        metrics[f"precision_{name}"] = hits / predicted.sum() if predicted.any() else None
        metrics[f"recall_{name}"] = hits / actual.sum() if actual.any() else None
    return metrics


def evaluate_regression(preds, targets) -> dict:
    """RMSE, Pearson correlation (None when undefined), and R^2."""
    preds = np.asarray(preds, dtype=np.float64).reshape(-1)
    targets = np.asarray(targets, dtype=np.float64).reshape(-1)
    diff = preds - targets
    rmse = float(np.sqrt((diff * diff).mean()))
    pc = preds - preds.mean()
    tc = targets - targets.mean()
    denom = np.sqrt((pc * pc).sum() * (tc * tc).sum())
    plcc = float((pc * tc).sum() / denom) if denom > 0 else None
    ss_tot = float((tc * tc).sum())
    r2 = 1.0 - float((diff * diff).sum()) / ss_tot if ss_tot > 0 else None
    return {"rmse": rmse, "plcc": plcc, "r2": r2}


# ---------------------------------------------------------------------------
# cross-validation
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    task: str
    fold_metrics: list
    mean_metrics: dict
    histories: list
    hygiene: list

    def metric_names(self):
        names = []
        for fold in self.fold_metrics:
            for k in fold:
                if k not in names:
                    names.append(k)
        return names

    def to_csv(self) -> str:
        names = self.metric_names()
        lines = ["fold," + ",".join(names)]
        for i, fold in enumerate(self.fold_metrics):
            cells = [_fmt(fold.get(k)) for k in names]
            lines.append(f"{i}," + ",".join(cells))
        lines.append("mean," + ",".join(_fmt(self.mean_metrics.get(k)) for k in names))
        return "\n".join(lines) + "\n"

    def summary(self) -> str:
        lines = [f"{self.task} cross-validation over {len(self.fold_metrics)} folds"]
        for k in self.metric_names():
            lines.append(f"  mean {k}: {_fmt(self.mean_metrics.get(k))}")
        stops = [h.stop_epoch for h in self.histories]
        lines.append(f"  stop epochs: {stops}")
        return "\n".join(lines) + "\n"


def _fmt(v):
    return "" if v is None else f"{v:.6f}"


def mean_over_folds(fold_metrics) -> dict:
    out = {}
    keys = []
    for fold in fold_metrics:
        for k in fold:
            if k not in keys:
                keys.append(k)
    for k in keys:
        vals = [f[k] for f in fold_metrics if f.get(k) is not None]
        out[k] = float(np.mean(vals)) if vals else None
    return out


def run_cv(windows, model_cfg: ModelConfig, train_cfg: TrainConfig) -> EvalReport:
    """K-fold cross-validation with per-fold leakage hygiene.

    Quantile thresholds and normalization statistics are recomputed from
    each fold's training windows; the hygiene record of every fold carries
    the index sets and thresholds so tests can audit the separation.
    """
    n = len(windows)
    folds = kfold_split(n, train_cfg.folds, train_cfg.seed)
    fms = np.array([w.fms for w in windows])

    fold_metrics, histories, hygiene = [], [], []
    for i, test_idx in enumerate(folds):
        train_mask = np.ones(n, bool)
        train_mask[test_idx] = False
        train_idx = np.flatnonzero(train_mask)

        quantiles = compute_fms_quantiles(fms[train_idx])
        per_session, pooled = compute_norm_stats(windows, train_idx)
        data = build_dataset(windows, model_cfg, per_session, pooled)

        split_rng = seed_stream(train_cfg.seed, f"cv.fold{i}.valsplit")
        order = split_rng.permutation(len(train_idx))
        n_val = max(1, int(round(train_cfg.val_fraction * len(train_idx))))
        val_idx = np.sort(train_idx[order[:n_val]])
        fit_idx = np.sort(train_idx[order[n_val:]])

        init_seed = int(seed_stream(train_cfg.seed, f"cv.fold{i}.init")
                        .integers(2 ** 31))
        fold_model = build_model(model_cfg, seed=init_seed)

        if model_cfg.task == "classification":
            _, targets = classification_targets(fms, quantiles)
        else:
            targets = fms.reshape(-1, 1)

        history = train(fold_model, data, targets, train_cfg,
                        fit_idx=fit_idx, val_idx=val_idx,
                        stream_prefix=f"cv.fold{i}")

        preds = []
        for lo in range(0, len(test_idx), train_cfg.batch_size):
            idx = test_idx[lo:lo + train_cfg.batch_size]
            out = fold_model.forward(data.subset_batch(idx), mode="infer")
            preds.append(out.data)
        preds = np.concatenate(preds) if preds else np.zeros((0, 1))

        if model_cfg.task == "classification":
            test_labels, _ = classification_targets(fms[test_idx], quantiles)
            metrics = evaluate_classification(np.argmax(preds, axis=1), test_labels,
                                              model_cfg.n_classes)
        else:
            metrics = evaluate_regression(preds, fms[test_idx])
        fold_metrics.append(metrics)
        histories.append(history)
        hygiene.append({
            "test": test_idx.tolist(),
            "val": val_idx.tolist(),
            "fit": fit_idx.tolist(),
            "quantiles": quantiles.as_tuple(),
            "norm_sessions": sorted(per_session),
            "norm_fit_on": train_idx.tolist(),
        })

    return EvalReport(model_cfg.task, fold_metrics, mean_over_folds(fold_metrics),
                      histories, hygiene)
