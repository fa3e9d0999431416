"""Data ingestion, synthetic benchmark generation, vector augmentation,
Adam, and the epoch loop.

Feature files are either CSV (one row per item) or the NSHF binary layout;
labels use the NSHL binary layout. Training arithmetic is float64; the
binary feature format stores 32-bit reals.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import FormatError, require_param, require_shape
from .model import (
    GradientSet,
    ModelParams,
    VariantConfig,
    forward_backward,
    init_params,
)
from .numerics import Rng

NSHF_MAGIC = b"NSHF"
NSHF_VERSION = 1
NSHL_MAGIC = b"NSHL"
_NSHF_HEADER = struct.Struct("<4sIQQ")
_NSHL_HEADER = struct.Struct("<4sQI")


@dataclass
class Dataset:
    features: np.ndarray                 # (N, d_x) float64
    labels: Optional[np.ndarray] = None  # (N, L) uint8 multi-hot

    def __post_init__(self):
        if self.labels is not None:
            require_shape(self.labels.shape[0] == self.features.shape[0],
                          f"labels rows {self.labels.shape} do not match features {self.features.shape}")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    def take(self, indices: np.ndarray) -> "Dataset":
        labels = None if self.labels is None else self.labels[indices]
        return Dataset(features=self.features[indices], labels=labels)


def synth_clusters(k: int, per_cluster: int, d_x: int, center_stddev: float,
                   cluster_stddev: float, seed: int) -> Dataset:
    """Gaussian-cluster benchmark: k centers, per_cluster samples each,
    one-hot labels, cluster-major row order."""
    require_param(k >= 2, f"need at least 2 clusters, got {k}")
    require_param(center_stddev > 0 and cluster_stddev > 0,
                  f"stddevs must be > 0, got {center_stddev}, {cluster_stddev}")
    rng = Rng(seed)
    centers = rng.normal(k, d_x, 0.0, center_stddev)
    features = np.concatenate(
        [centers[c] + rng.normal(per_cluster, d_x, 0.0, cluster_stddev) for c in range(k)]
    )
    labels = np.zeros((k * per_cluster, k), dtype=np.uint8)
    for c in range(k):
        labels[c * per_cluster:(c + 1) * per_cluster, c] = 1
    return Dataset(features=features, labels=labels)


def split_query_database(dataset: Dataset, n_query: int, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded split into (database, query); the database doubles as train set."""
    require_param(0 < n_query < dataset.n,
                  f"query count {n_query} must be in (0, {dataset.n})")
    perm = Rng(seed).permutation(dataset.n)
    return dataset.take(perm[n_query:]), dataset.take(perm[:n_query])


@dataclass
class AugmentConfig:
    noise_stddev: float = 0.1
    mask_prob: float = 0.2

    def __post_init__(self):
        require_param(self.noise_stddev >= 0, f"noise_stddev must be >= 0, got {self.noise_stddev}")
        require_param(0.0 <= self.mask_prob < 1.0, f"mask_prob must be in [0, 1), got {self.mask_prob}")


def augment(x: np.ndarray, cfg: AugmentConfig, rng: Rng) -> np.ndarray:
    """Additive Gaussian noise, then independent coordinate zeroing."""
    rows, cols = x.shape
    out = x + rng.normal(rows, cols, 0.0, cfg.noise_stddev)
    mask = rng.uniform(rows, cols) < cfg.mask_prob
    out[mask] = 0.0
    return out


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int
    lr: float
    beta1: float
    beta2: float
    eps: float


def init_adam(params: ModelParams, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8) -> AdamState:
    return AdamState(
        m=[np.zeros_like(a) for a in params.arrays()],
        v=[np.zeros_like(a) for a in params.arrays()],
        step=0, lr=lr, beta1=beta1, beta2=beta2, eps=eps,
    )


def adam_step(params: ModelParams, grads: GradientSet, state: AdamState):
    """Bias-corrected Adam update; returns (new params, new state)."""
    p_arrays = params.arrays()
    g_arrays = grads.arrays()
    require_shape(
        len(p_arrays) == len(g_arrays)
        and all(p.shape == g.shape for p, g in zip(p_arrays, g_arrays)),
        "gradients are not co-shaped with parameters",
    )
    t = state.step + 1
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    new_m, new_v, updated = [], [], []
    for p, g, m, v in zip(p_arrays, g_arrays, state.m, state.v):
        m_t = state.beta1 * m + (1.0 - state.beta1) * g
        v_t = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        step_val = state.lr * (m_t / bc1) / (np.sqrt(v_t / bc2) + state.eps)
        new_m.append(m_t)
        new_v.append(v_t)
        updated.append(p - step_val)
    flat = np.concatenate([a.ravel() for a in updated])
    new_params = params.with_vector(flat)
    new_state = AdamState(m=new_m, v=new_v, step=t, lr=state.lr,
                          beta1=state.beta1, beta2=state.beta2, eps=state.eps)
    return new_params, new_state


@dataclass
class RunConfig:
    d_b: int = 16
    d_z: int = 64
    batch_size: int = 50
    epochs: int = 30
    learning_rate: float = 1e-3
    seed: int = 0
    hidden: tuple[int, ...] = (256, 256)
    variant: VariantConfig = field(default_factory=VariantConfig)
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        require_param(self.d_b >= 1, f"code length must be >= 1, got {self.d_b}")
        require_param(self.batch_size >= 2, f"batch size must be >= 2, got {self.batch_size}")
        require_param(self.variant.m < self.batch_size,
                      f"positive count m={self.variant.m} must be below batch size {self.batch_size}")
        require_param(self.epochs >= 0, f"epochs must be >= 0, got {self.epochs}")
        require_param(self.learning_rate > 0, f"learning rate must be > 0, got {self.learning_rate}")


_CONFIG_KEYS = ("d_b", "d_z", "batch_size", "epochs", "learning_rate", "seed",
                "hidden", "variant", "m", "tau_c", "tau_s", "noise_stddev", "mask_prob")


def parse_config_text(text: str) -> RunConfig:
    """Line-based key=value config covering every run field; '#' starts a comment."""
    values: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise FormatError(f"config line {lineno}: expected key=value, got {line!r}")
        key, _, value = stripped.partition("=")
        key = key.strip()
        if key not in _CONFIG_KEYS:
            raise FormatError(f"config line {lineno}: unknown key {key!r}")
        values[key] = value.strip()

    def get(key, cast, default):
        return cast(values[key]) if key in values else default

    tau_s_raw = values.get("tau_s", "none").lower()
    tau_s = None if tau_s_raw in ("none", "") else float(tau_s_raw)
    hidden_raw = values.get("hidden", "256,256")
    hidden = tuple(int(v) for v in hidden_raw.split(",") if v.strip())
    try:
        variant = VariantConfig(
            variant=values.get("variant", "full"),
            m=get("m", int, 2),
            tau_c=get("tau_c", float, 0.1),
            tau_s=tau_s,
        )
        return RunConfig(
            d_b=get("d_b", int, 16),
            d_z=get("d_z", int, 64),
            batch_size=get("batch_size", int, 50),
            epochs=get("epochs", int, 30),
            learning_rate=get("learning_rate", float, 1e-3),
            seed=get("seed", int, 0),
            hidden=hidden,
            variant=variant,
            augment=AugmentConfig(
                noise_stddev=get("noise_stddev", float, 0.1),
                mask_prob=get("mask_prob", float, 0.2),
            ),
        )
    except ValueError as exc:
        raise FormatError(f"config: {exc}") from exc


def serialize_config(cfg: RunConfig) -> str:
    tau_s = "none" if cfg.variant.tau_s is None else repr(cfg.variant.tau_s)
    lines = [
        f"d_b={cfg.d_b}",
        f"d_z={cfg.d_z}",
        f"batch_size={cfg.batch_size}",
        f"epochs={cfg.epochs}",
        f"learning_rate={cfg.learning_rate!r}",
        f"seed={cfg.seed}",
        "hidden=" + ",".join(str(w) for w in cfg.hidden),
        f"variant={cfg.variant.variant}",
        f"m={cfg.variant.m}",
        f"tau_c={cfg.variant.tau_c!r}",
        f"tau_s={tau_s}",
        f"noise_stddev={cfg.augment.noise_stddev!r}",
        f"mask_prob={cfg.augment.mask_prob!r}",
    ]
    return "\n".join(lines) + "\n"


@dataclass
class StepLoss:
    step: int
    loss: float
    loss_sorted: float
    loss_quant: float


@dataclass
class TrainResult:
    params: ModelParams
    history: list[StepLoss]


def train(dataset: Dataset, cfg: RunConfig) -> TrainResult:
    """Epoch loop: seeded shuffle, two augmented views per batch, analytic
    backward, Adam. The trailing partial batch is dropped so the per-query
    sort tensors keep a constant batch size."""
    require_param(dataset.n >= cfg.batch_size,
                  f"dataset of {dataset.n} rows cannot fill a batch of {cfg.batch_size}")
    master = Rng(cfg.seed)
    params = init_params(dataset.features.shape[1], cfg.hidden, cfg.d_b, cfg.d_z,
                         master.child(0))
    shuffle_rng = master.child(1)
    aug_rng = master.child(2)
    adam = init_adam(params, cfg.learning_rate)
    history: list[StepLoss] = []
    step = 0
    for _ in range(cfg.epochs):
        order = shuffle_rng.permutation(dataset.n)
        for start in range(0, dataset.n - cfg.batch_size + 1, cfg.batch_size):
            x = dataset.features[order[start:start + cfg.batch_size]]
            view1 = augment(x, cfg.augment, aug_rng)
            view2 = augment(x, cfg.augment, aug_rng)
            result = forward_backward(params, view1, view2, cfg.variant)
            params, adam = adam_step(params, result.grads, adam)
            history.append(StepLoss(step, result.loss, result.loss_sorted, result.loss_quant))
            step += 1
    return TrainResult(params=params, history=history)


def write_history_csv(path, history: list[StepLoss]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "loss", "l_sorted", "l_r"])
        for row in history:
            writer.writerow([row.step, repr(row.loss), repr(row.loss_sorted), repr(row.loss_quant)])


def save_features(path, features: np.ndarray) -> None:
    n, d = features.shape
    with open(path, "wb") as fh:
        fh.write(_NSHF_HEADER.pack(NSHF_MAGIC, NSHF_VERSION, n, d))
        fh.write(np.ascontiguousarray(features, dtype="<f4").tobytes())


def _load_features_binary(raw: bytes, path) -> np.ndarray:
    magic, version, n, d = _NSHF_HEADER.unpack_from(raw, 0)
    if version != NSHF_VERSION:
        raise FormatError(f"{path}: unsupported feature file version {version} at offset 4")
    expected = n * d * 4
    actual = len(raw) - _NSHF_HEADER.size
    if actual != expected:
        raise FormatError(
            f"{path}: payload at offset {_NSHF_HEADER.size}: expected {expected} bytes, got {actual}"
        )
    data = np.frombuffer(raw, dtype="<f4", offset=_NSHF_HEADER.size).reshape(n, d)
    if not np.all(np.isfinite(data)):
        bad = int(np.flatnonzero(~np.isfinite(data.ravel()))[0])
        raise FormatError(f"{path}: non-finite value at entry {bad} "
                          f"(offset {_NSHF_HEADER.size + 4 * bad})")
    return data.astype(np.float64)


def _load_features_csv(path) -> np.ndarray:
    rows: list[list[float]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                row = [float(tok) for tok in line.split(",")]
            except ValueError as exc:
                raise FormatError(f"{path}: line {lineno}: {exc}") from exc
            if rows and len(row) != len(rows[0]):
                raise FormatError(
                    f"{path}: line {lineno}: expected {len(rows[0])} columns, got {len(row)}"
                )
            rows.append(row)
    if not rows:
        raise FormatError(f"{path}: empty feature file")
    data = np.asarray(rows, dtype=np.float64)
    if not np.all(np.isfinite(data)):
        raise FormatError(f"{path}: non-finite value in CSV features")
    return data


def load_features(path) -> np.ndarray:
    """Feature matrix from an NSHF binary file or a CSV of reals."""
    with open(path, "rb") as fh:
        head = fh.read(4)
    if head == NSHF_MAGIC:
        with open(path, "rb") as fh:
            raw = fh.read()
        if len(raw) < _NSHF_HEADER.size:
            raise FormatError(f"{path}: truncated header, {len(raw)} bytes at offset 0")
        return _load_features_binary(raw, path)
    return _load_features_csv(path)


def save_labels(path, labels: np.ndarray) -> None:
    n, width = labels.shape
    with open(path, "wb") as fh:
        fh.write(_NSHL_HEADER.pack(NSHL_MAGIC, n, width))
        fh.write(np.ascontiguousarray(labels, dtype=np.uint8).tobytes())


def load_labels(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _NSHL_HEADER.size:
        raise FormatError(f"{path}: truncated header, {len(raw)} bytes at offset 0")
    magic, n, width = _NSHL_HEADER.unpack_from(raw, 0)
    if magic != NSHL_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at offset 0, expected {NSHL_MAGIC!r}")
    expected = n * width
    actual = len(raw) - _NSHL_HEADER.size
    if actual != expected:
        raise FormatError(
            f"{path}: payload at offset {_NSHL_HEADER.size}: expected {expected} bytes, got {actual}"
        )
    data = np.frombuffer(raw, dtype=np.uint8, offset=_NSHL_HEADER.size).reshape(n, width)
    bad = (data > 1)
    if np.any(bad):
        entry = int(np.flatnonzero(bad.ravel())[0])
        raise FormatError(f"{path}: label byte not in {{0,1}} at entry {entry} "
                          f"(offset {_NSHL_HEADER.size + entry})")
    return data.copy()
