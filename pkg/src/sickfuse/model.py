"""The deep fusion network and its task losses.

Architecture: each video-type modality (video, flow, disparity) runs through
stacked [conv3d 3x3x3 + ReLU + L2 -> maxpool 2x2x2 stride 2 -> batchnorm]
blocks and is flattened; eye and head tracking run through a time-distributed
conv1d (+ReLU) over 4 subsequences, a time-distributed maxpool, dropout,
per-subsequence flatten, an LSTM with recurrent dropout, a dense layer and a
batchnorm. Branch outputs are concatenated and passed through a 256-wide
ReLU dense layer into the task head: softmax over 4 severity classes, or a
single linear unit for score regression.

A model instance is mutated only by its owning training loop; inference on
a frozen model is safe to run concurrently.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .errors import ConfigError, ShapeError
from .labeling import EYE_FEATURES, HEAD_FEATURES, SEVERITY_CLASSES, SUBSEQUENCES
from .rng import seed_stream
from .tensor import Parameter, Tensor, ops

VIDEO_MODALITIES = ("video", "flow", "disparity")
ALL_MODALITIES = VIDEO_MODALITIES + ("eye", "head")
MODALITY_CHANNELS = {"video": 3, "flow": 3, "disparity": 1}


@dataclass
class ModelConfig:
    modalities: tuple = ("eye", "head")
    task: str = "classification"  # classification | regression
    timestep: int = 60
    frame_size: int = 256
    conv3d_filters: tuple = (16, 32, 64)   # one conv/pool/bn block per entry
    conv3d_kernel: tuple = (3, 3, 3)
    pool: tuple = (2, 2, 2)
    pool_stride: int = 2
    l2: float = 0.01
    td_filters: int = 64
    td_kernel: int = 3
    dropout: float = 0.5
    lstm_hidden: int = 128
    recurrent_dropout: float = 0.2
    branch_dense: int = 256
    fusion_dense: int = 256
    n_classes: int = 4
    padding: str = "same"
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1
    selection: str = "tail"
    max_disparity: int = 64

    def __post_init__(self):
        self.modalities = tuple(self.modalities)
        self.conv3d_filters = tuple(self.conv3d_filters)
        if not self.modalities:
            raise ConfigError("at least one modality must be enabled")
        unknown = set(self.modalities) - set(ALL_MODALITIES)
        if unknown:
            raise ConfigError(f"unknown modalities {sorted(unknown)}")
        if self.task not in ("classification", "regression"):
            raise ConfigError(f"task must be classification|regression, got {self.task!r}")
        if self.timestep % SUBSEQUENCES != 0:
            raise ConfigError(f"timestep must be a multiple of {SUBSEQUENCES}")
        for name in ("td_filters", "lstm_hidden", "branch_dense", "fusion_dense",
                     "n_classes", "timestep", "frame_size"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        if any(f <= 0 for f in self.conv3d_filters):
            raise ConfigError("conv3d filter counts must be positive")
        if set(self.modalities) & set(VIDEO_MODALITIES):
            self._video_flat_size()  # raises if pooling exhausts a dimension

    @property
    def sub_len(self) -> int:
        return self.timestep // SUBSEQUENCES

    def input_shape(self, modality: str) -> tuple:
        if modality in VIDEO_MODALITIES:
            return (self.timestep, self.frame_size, self.frame_size,
                    MODALITY_CHANNELS[modality])
        if modality == "eye":
            return (SUBSEQUENCES, self.sub_len, EYE_FEATURES)
        if modality == "head":
            return (SUBSEQUENCES, self.sub_len, HEAD_FEATURES)
        raise ConfigError(f"unknown modality {modality!r}")

    def _video_dims_after_blocks(self):
        dims = [self.timestep, self.frame_size, self.frame_size]
        for i in range(len(self.conv3d_filters)):
            if self.padding == "valid":
                dims = [d - k + 1 for d, k in zip(dims, self.conv3d_kernel)]
            for d, w in zip(dims, self.pool):
                if w > d:
                    raise ConfigError(
                        f"pool window {self.pool} exceeds block {i} dims {tuple(dims)}; "
                        f"use fewer conv blocks for this input size")
            dims = [(d - w) // self.pool_stride + 1 for d, w in zip(dims, self.pool)]
        return dims

    def _video_flat_size(self, modality="video"):
        dims = self._video_dims_after_blocks()
        return int(np.prod(dims)) * self.conv3d_filters[-1]

    def branch_output_size(self, modality: str) -> int:
        if modality in VIDEO_MODALITIES:
            return self._video_flat_size(modality)
        return self.branch_dense

    def to_kv(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            out[f.name] = str(v)
        return out


_CFG_INT = {"timestep", "frame_size", "pool_stride", "td_filters", "td_kernel",
            "lstm_hidden", "branch_dense", "fusion_dense", "n_classes",
            "max_disparity"}
_CFG_FLOAT = {"l2", "dropout", "recurrent_dropout", "bn_eps", "bn_momentum"}
_CFG_TUPLE_INT = {"conv3d_filters", "conv3d_kernel", "pool"}


def config_from_kv(pairs: dict) -> ModelConfig:
    kwargs = {}
    known = {f.name for f in fields(ModelConfig)}
    for key, raw in pairs.items():
        if key not in known:
            raise ConfigError(f"unknown model config key {key!r}")
        if key == "modalities":
            kwargs[key] = tuple(s.strip() for s in raw.split(",") if s.strip())
        elif key in _CFG_TUPLE_INT:
            kwargs[key] = tuple(int(s) for s in raw.split(",") if s.strip())
        elif key in _CFG_INT:
            kwargs[key] = int(raw)
        elif key in _CFG_FLOAT:
            kwargs[key] = float(raw)
        else:
            kwargs[key] = raw
    return ModelConfig(**kwargs)


class FusionModel:
    """Parameter container plus the forward pass; built by `build_model`."""

    def __init__(self, config: ModelConfig, seed: int):
        self.config = config
        self.seed = seed
        self.params: "OrderedDict[str, Parameter]" = OrderedDict()
        self.bn_stats: "OrderedDict[str, ops.RunningStats]" = OrderedDict()

    # -- construction ------------------------------------------------------

    def _add(self, name, shape, rng, kind):
        if kind == "uniform":
            fan_in = int(np.prod(shape[:-1]))
            fan_out = int(shape[-1])
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            value = rng.uniform(-limit, limit, size=shape)
        elif kind == "zeros":
            value = np.zeros(shape)
        else:  # ones
            value = np.ones(shape)
        self.params[name] = Parameter(name, value)
        return self.params[name]

    def _add_bn(self, name, channels, rng):
        self._add(f"{name}.gamma", (channels,), rng, "ones")
        self._add(f"{name}.beta", (channels,), rng, "zeros")
        self.bn_stats[name] = ops.RunningStats(channels)

    def parameters(self):
        return list(self.params.values())

    def parameter_arrays(self) -> OrderedDict:
        out = OrderedDict((n, p.value.data.copy()) for n, p in self.params.items())
        for name, st in self.bn_stats.items():
            out[f"{name}.running_mean"] = st.mean.copy()
            out[f"{name}.running_var"] = st.var.copy()
        return out

    def load_parameter_arrays(self, arrays) -> None:
        for name, p in self.params.items():
            if name not in arrays:
                raise ConfigError(f"checkpoint is missing parameter {name!r}")
            p.assign(np.asarray(arrays[name]))
        for name, st in self.bn_stats.items():
            st.mean = np.array(arrays[f"{name}.running_mean"])
            st.var = np.array(arrays[f"{name}.running_var"])

    # -- shape validation ----------------------------------------------------

    def validate_batch(self, batch: dict) -> int:
        sizes = set()
        for modality in self.config.modalities:
            if modality not in batch:
                raise ShapeError(f"batch is missing modality {modality!r}")
            arr = batch[modality]
            expected = self.config.input_shape(modality)
            if arr.ndim != len(expected) + 1 or tuple(arr.shape[1:]) != expected:
                raise ShapeError(
                    f"{modality} batch shape {tuple(arr.shape)} does not match "
                    f"(B,) + {expected}")
            sizes.add(arr.shape[0])
        if len(sizes) != 1:
            raise ShapeError(f"inconsistent batch sizes {sorted(sizes)}")
        return sizes.pop()

    # -- forward -------------------------------------------------------------

    def forward(self, batch: dict, mode: str = "infer", rng=None) -> Tensor:
        """Predictions for a batch dict of modality arrays (B, ...).

        Classification returns (B, n_classes) softmax rows; regression
        returns (B, 1) linear outputs. Train mode needs an rng for dropout.
        """
        if mode not in ("train", "infer"):
            raise ConfigError(f"mode must be train|infer, got {mode!r}")
        if mode == "train" and rng is None:
            raise ConfigError("train-mode forward needs an rng")
        self.validate_batch(batch)
        cfg = self.config
        branch_outputs = []
        for modality in cfg.modalities:
            x = Tensor(np.asarray(batch[modality], dtype=np.float64), checked=False)
            if modality in VIDEO_MODALITIES:
                branch_outputs.append(self._video_branch(modality, x, mode))
            else:
                branch_outputs.append(self._tracking_branch(modality, x, mode, rng))
        fused = branch_outputs[0] if len(branch_outputs) == 1 \
            else ops.concat(branch_outputs, axis=-1)
        h = ops.relu(ops.dense(fused, self.params["fusion.dense.w"].value,
                               self.params["fusion.dense.b"].value))
        out = ops.dense(h, self.params["fusion.out.w"].value,
                        self.params["fusion.out.b"].value)
        if cfg.task == "classification":
            return ops.softmax(out)
        return out

    def _video_branch(self, modality, x, mode):
        cfg = self.config
        for i in range(len(cfg.conv3d_filters)):
            base = f"{modality}.block{i}"
            x = ops.conv3d(x, self.params[f"{base}.kernel"].value,
                           self.params[f"{base}.bias"].value,
                           padding=cfg.padding, l2=cfg.l2)
            x = ops.relu(x)
            x = ops.maxpool(x, cfg.pool, (cfg.pool_stride,) * 3)
            x = ops.batchnorm(x, self.params[f"{base}.bn.gamma"].value,
                              self.params[f"{base}.bn.beta"].value,
                              self.bn_stats[f"{base}.bn"], mode,
                              eps=cfg.bn_eps, momentum=cfg.bn_momentum)
        return ops.flatten(x)

    def _tracking_branch(self, modality, x, mode, rng):
        cfg = self.config
        B = x.shape[0]
        feat = x.shape[-1]
        # time-distributed conv over the 4 subsequences (shared weights)
        x = ops.reshape(x, (B * SUBSEQUENCES, cfg.sub_len, feat))
        x = ops.conv1d(x, self.params[f"{modality}.conv.kernel"].value,
                       self.params[f"{modality}.conv.bias"].value, padding="same")
        x = ops.relu(x)
        if cfg.sub_len >= 2:
            x = ops.maxpool(x, (2,), (2,))
        x = ops.dropout(x, cfg.dropout, mode, rng)
        x = ops.reshape(x, (B, SUBSEQUENCES, -1))
        x = ops.lstm_forward(x, self.params[f"{modality}.lstm.wx"].value,
                             self.params[f"{modality}.lstm.wh"].value,
                             self.params[f"{modality}.lstm.b"].value,
                             recurrent_dropout=cfg.recurrent_dropout,
                             mode=mode, rng=rng)
        x = ops.dense(x, self.params[f"{modality}.dense.w"].value,
                      self.params[f"{modality}.dense.b"].value)
        x = ops.flatten(x)  # already flat; kept as a no-op for symmetry
        return ops.batchnorm(x, self.params[f"{modality}.bn.gamma"].value,
                             self.params[f"{modality}.bn.beta"].value,
                             self.bn_stats[f"{modality}.bn"], mode,
                             eps=cfg.bn_eps, momentum=cfg.bn_momentum)


def build_model(config: ModelConfig, seed: int = 0) -> FusionModel:
    """Instantiate parameters (uniform fan-based init, deterministic per seed)."""
    model = FusionModel(config, seed)
    rng = seed_stream(seed, "model.init")
    cfg = config
    for modality in cfg.modalities:
        if modality in VIDEO_MODALITIES:
            cin = MODALITY_CHANNELS[modality]
            for i, cout in enumerate(cfg.conv3d_filters):
                base = f"{modality}.block{i}"
                model._add(f"{base}.kernel", cfg.conv3d_kernel + (cin, cout),
                           rng, "uniform")
                model._add(f"{base}.bias", (cout,), rng, "zeros")
                model._add_bn(f"{base}.bn", cout, rng)
                cin = cout
        else:
            feat = EYE_FEATURES if modality == "eye" else HEAD_FEATURES
            model._add(f"{modality}.conv.kernel", (cfg.td_kernel, feat, cfg.td_filters),
                       rng, "uniform")
            model._add(f"{modality}.conv.bias", (cfg.td_filters,), rng, "zeros")
            pooled = cfg.sub_len // 2 if cfg.sub_len >= 2 else cfg.sub_len
            lstm_in = pooled * cfg.td_filters
            model._add(f"{modality}.lstm.wx", (lstm_in, 4 * cfg.lstm_hidden),
                       rng, "uniform")
            model._add(f"{modality}.lstm.wh", (cfg.lstm_hidden, 4 * cfg.lstm_hidden),
                       rng, "uniform")
            model._add(f"{modality}.lstm.b", (4 * cfg.lstm_hidden,), rng, "zeros")
            model._add(f"{modality}.dense.w", (cfg.lstm_hidden, cfg.branch_dense),
                       rng, "uniform")
            model._add(f"{modality}.dense.b", (cfg.branch_dense,), rng, "zeros")
            model._add_bn(f"{modality}.bn", cfg.branch_dense, rng)
    total = sum(cfg.branch_output_size(m) for m in cfg.modalities)
    model._add("fusion.dense.w", (total, cfg.fusion_dense), rng, "uniform")
    model._add("fusion.dense.b", (cfg.fusion_dense,), rng, "zeros")
    out_width = cfg.n_classes if cfg.task == "classification" else 1
    model._add("fusion.out.w", (cfg.fusion_dense, out_width), rng, "uniform")
    model._add("fusion.out.b", (out_width,), rng, "zeros")
    return model


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def loss_rmse(pred: Tensor, target: Tensor) -> Tensor:
    """Root-mean-square error over the batch."""
    if pred.shape != target.shape:
        raise ShapeError(f"rmse: {pred.shape} vs {target.shape}")
    diff = ops.sub(pred, target)
    return ops.sqrt(ops.mean(ops.mul(diff, diff)))


def loss_crossentropy(pred: Tensor, target: Tensor) -> Tensor:
    """Mean categorical cross-entropy; probabilities clamped at 1e-12."""
    if pred.shape != target.shape:
        raise ShapeError(f"crossentropy: {pred.shape} vs {target.shape}")
    logp = ops.log(ops.maximum_scalar(pred, 1e-12))
    per_sample = ops.neg(ops.sum(ops.mul(target, logp), axis=-1))
    return ops.mean(per_sample)


# ---------------------------------------------------------------------------
# prediction
# ---------------------------------------------------------------------------

# ---------------------------------------------------------------------------
# persistence: SFM1 checkpoint plus a key=value sidecar
# ---------------------------------------------------------------------------

def save_model(dirpath, model: FusionModel, per_session=None, pooled=None):
    """Write model.sfm (parameters + batchnorm buffers) and model.cfg.

    The sidecar records every config field plus the normalization constants
    (pooled and per-session) needed to prepare inputs at inference time.
    """
    from pathlib import Path
    from .kvconfig import save_kv
    from .labeling import EyeHeadNorm
    from .tensor import checkpoint

    dirpath = Path(dirpath)
    dirpath.mkdir(parents=True, exist_ok=True)
    checkpoint.save_arrays(dirpath / "model.sfm", model.parameter_arrays())
    pairs = {f"config.{k}": v for k, v in model.config.to_kv().items()}
    pairs["seed"] = str(model.seed)

    def put_norm(prefix, norm):
        as_csv = lambda vec: ",".join(repr(float(v)) for v in vec)
        pairs[f"{prefix}.eye_mu"] = as_csv(norm.eye_mu)
        pairs[f"{prefix}.eye_sigma"] = as_csv(norm.eye_sigma)
        pairs[f"{prefix}.head_mu"] = as_csv(norm.head_mu)
        pairs[f"{prefix}.head_sigma"] = as_csv(norm.head_sigma)

    put_norm("norm.pooled", pooled if pooled is not None else EyeHeadNorm.identity())
    for key in sorted(per_session or {}):
        put_norm(f"norm.session.{key}", per_session[key])
    save_kv(dirpath / "model.cfg", pairs)


def load_model(dirpath):
    """Counterpart of save_model; returns (model, per_session, pooled)."""
    from pathlib import Path
    from .kvconfig import load_kv
    from .labeling import EyeHeadNorm
    from .tensor import checkpoint

    dirpath = Path(dirpath)
    pairs = load_kv(dirpath / "model.cfg")
    config = config_from_kv({k[len("config."):]: v for k, v in pairs.items()
                             if k.startswith("config.")})
    model = build_model(config, seed=int(pairs.get("seed", "0")))
    model.load_parameter_arrays(checkpoint.load_arrays(dirpath / "model.sfm"))

    def get_norm(prefix):
        vec = lambda key: np.array([float(v) for v in pairs[key].split(",")])
        return EyeHeadNorm(vec(f"{prefix}.eye_mu"), vec(f"{prefix}.eye_sigma"),
                           vec(f"{prefix}.head_mu"), vec(f"{prefix}.head_sigma"))

    pooled = get_norm("norm.pooled")
    per_session = {}
    seen = set()
    for key in pairs:
        if key.startswith("norm.session."):
            session_key = key[len("norm.session."):].rsplit(".", 1)[0]
            if session_key not in seen:
                seen.add(session_key)
                per_session[session_key] = get_norm(f"norm.session.{session_key}")
    return model, per_session, pooled


@dataclass
class Prediction:
    task: str
    severity: str | None = None
    class_index: int | None = None
    probabilities: np.ndarray | None = None
    fms: float | None = None       # clamped to [0,10] for reporting
    fms_raw: float | None = None   # untouched network output


def predict(model: FusionModel, inputs: dict) -> Prediction:
    """Single-window prediction in infer mode.

    Classification takes the argmax (lowest index wins ties); regression
    clamps the reported value to [0,10] and keeps the raw output alongside.
    """
    batch = {k: np.asarray(v)[None] for k, v in inputs.items()}
    out = model.forward(batch, mode="infer").data[0]
    if model.config.task == "classification":
        idx = int(np.argmax(out))
        return Prediction(task="classification", severity=SEVERITY_CLASSES[idx],
                          class_index=idx, probabilities=out)
    raw = float(out[0])
    return Prediction(task="regression", fms=float(np.clip(raw, 0.0, 10.0)),
                      fms_raw=raw)
