"""Twin-bottleneck encoder, soft-gathered candidate lists, the sorted-list
contrastive loss, and the fused forward/backward pass.

There is no generic autograd here: every composite operation ships its own
analytic backward, and the finite-difference oracle in ``numerics`` is used
by the tests to verify each of them through the full composition.

The encoder produces, per item, a pre-binarization vector h in (-1, 1)
(tanh), a binary code b = sign(h), and a unit-norm latent z. Code
similarities are soft-sorted per query (descending, so each query's own
counterpart lands first), the latents are gathered into that order, and the
loss contrasts the first m gathered rows against each query's second-view
latent. Binarization trains through the straight-through identity
estimator; a quantization term pulls h toward its code.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import FormatError, NumericError, require_param, require_shape
from .hashcore import (
    quantization_loss,
    sign_ste,
    sign_ste_backward,
    similarity_backward,
    similarity_matrix,
)
from .numerics import Rng, check_finite, l2_normalize_backward, l2_normalize_rows
from .sortcore import SoftSortResult, hard_argsort_desc, softsort_backward, softsort_forward

VARIANTS = ("full", "hard_sort", "no_quant", "single_bottleneck", "no_softsort", "multilabel_nce")

NSHP_MAGIC = b"NSHP"
NSHP_VERSION = 1


@dataclass
class Dense:
    w: np.ndarray
    b: np.ndarray


@dataclass
class ModelParams:
    """Encoder weights: ReLU backbone plus hash and latent heads.

    The same container holds gradients (``GradientSet``); the two are
    co-shaped by construction.
    """

    backbone: list[Dense]
    hash_head: Dense
    latent_head: Dense

    def layers(self) -> list[Dense]:
        return [*self.backbone, self.hash_head, self.latent_head]

    def arrays(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers():
            out.append(layer.w)
            out.append(layer.b)
        return out

    @property
    def num_params(self) -> int:
        return sum(a.size for a in self.arrays())

    @property
    def d_x(self) -> int:
        first = self.backbone[0] if self.backbone else self.hash_head
        return first.w.shape[0]

    @property
    def d_b(self) -> int:
        return self.hash_head.w.shape[1]

    @property
    def d_z(self) -> int:
        return self.latent_head.w.shape[1]

    def zeros_like(self) -> "ModelParams":
        return ModelParams(
            backbone=[Dense(np.zeros_like(l.w), np.zeros_like(l.b)) for l in self.backbone],
            hash_head=Dense(np.zeros_like(self.hash_head.w), np.zeros_like(self.hash_head.b)),
            latent_head=Dense(np.zeros_like(self.latent_head.w), np.zeros_like(self.latent_head.b)),
        )

    def copy(self) -> "ModelParams":
        return ModelParams(
            backbone=[Dense(l.w.copy(), l.b.copy()) for l in self.backbone],
            hash_head=Dense(self.hash_head.w.copy(), self.hash_head.b.copy()),
            latent_head=Dense(self.latent_head.w.copy(), self.latent_head.b.copy()),
        )

    def to_vector(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_vector(self, vec: np.ndarray) -> "ModelParams":
        """New params with the same shapes, values taken from a flat vector."""
        require_shape(vec.size == self.num_params,
                      f"vector length {vec.size} does not match {self.num_params} parameters")
        out = self.zeros_like()
        offset = 0
        for arr in out.arrays():
            arr[...] = vec[offset:offset + arr.size].reshape(arr.shape)
            offset += arr.size
        return out


GradientSet = ModelParams


def init_params(d_x: int, hidden: tuple[int, ...], d_b: int, d_z: int, rng: Rng) -> ModelParams:
    """He-style Gaussian init for ReLU layers, smaller scale for the heads."""
    backbone = []
    fan_in = d_x
    for width in hidden:
        w = rng.normal(fan_in, width, 0.0, np.sqrt(2.0 / fan_in))
        backbone.append(Dense(w, np.zeros(width)))
        fan_in = width
    hash_head = Dense(rng.normal(fan_in, d_b, 0.0, np.sqrt(1.0 / fan_in)), np.zeros(d_b))
    latent_head = Dense(rng.normal(fan_in, d_z, 0.0, np.sqrt(1.0 / fan_in)), np.zeros(d_z))
    return ModelParams(backbone=backbone, hash_head=hash_head, latent_head=latent_head)


@dataclass
class TwinEncoding:
    h: np.ndarray  # (n, d_b), tanh outputs in (-1, 1)
    b: np.ndarray  # (n, d_b), sign(h)
    z: np.ndarray  # (n, d_z), unit rows


@dataclass
class EncodeCache:
    x: np.ndarray
    pre: list[np.ndarray]    # backbone pre-activations
    post: list[np.ndarray]   # backbone post-ReLU outputs
    a_lat: np.ndarray        # latent head pre-normalization


def _encode_cached(params: ModelParams, x: np.ndarray) -> tuple[TwinEncoding, EncodeCache]:
    require_shape(x.ndim == 2 and x.shape[1] == params.d_x,
                  f"encode input {x.shape} does not match input width {params.d_x}")
    y = x
    pre, post = [], []
    for layer in params.backbone:
        a = y @ layer.w + layer.b
        pre.append(a)
        y = np.maximum(a, 0.0)
        post.append(y)
    h = np.tanh(y @ params.hash_head.w + params.hash_head.b)
    a_lat = y @ params.latent_head.w + params.latent_head.b
    z = l2_normalize_rows(a_lat)
    check_finite("encoder h", h)
    check_finite("encoder z", z)
    enc = TwinEncoding(h=h, b=sign_ste(h), z=z)
    return enc, EncodeCache(x=x, pre=pre, post=post, a_lat=a_lat)


def encode(params: ModelParams, x: np.ndarray) -> TwinEncoding:
    """Forward encoding only; training uses the cached variant internally."""
    enc, _ = _encode_cached(params, x)
    return enc


def _encode_backward(params: ModelParams, enc: TwinEncoding, cache: EncodeCache,
                     d_h: np.ndarray, d_z: np.ndarray, grads: GradientSet) -> None:
    """Accumulate parameter gradients for one encoded view."""
    d_a_hash = d_h * (1.0 - enc.h * enc.h)
    d_a_lat = l2_normalize_backward(cache.a_lat, d_z)
    y = cache.post[-1] if params.backbone else cache.x
    grads.hash_head.w += y.T @ d_a_hash
    grads.hash_head.b += d_a_hash.sum(axis=0)
    grads.latent_head.w += y.T @ d_a_lat
    grads.latent_head.b += d_a_lat.sum(axis=0)
    d_y = d_a_hash @ params.hash_head.w.T + d_a_lat @ params.latent_head.w.T
    for i in range(len(params.backbone) - 1, -1, -1):
        d_a = d_y * (cache.pre[i] > 0.0)
        inp = cache.post[i - 1] if i > 0 else cache.x
        grads.backbone[i].w += inp.T @ d_a
        grads.backbone[i].b += d_a.sum(axis=0)
        d_y = d_a @ params.backbone[i].w.T


@dataclass
class PermutationStack:
    """One soft permutation per in-batch query; slice i sorts row i of S."""

    p: np.ndarray  # (n, n, n)
    rows: list[SoftSortResult]


def build_permutations(s: np.ndarray, tau_s: float) -> PermutationStack:
    """Soft-sort every similarity row descending, so each query's most
    similar candidate is routed to position 0 of its list."""
    require_shape(s.ndim == 2 and s.shape[0] == s.shape[1],
                  f"similarity matrix must be square, got {s.shape}")
    rows = [softsort_forward(s[i], tau_s) for i in range(s.shape[0])]
    return PermutationStack(p=np.stack([r.perm for r in rows]), rows=rows)


def permutations_backward(stack: PermutationStack, d_p: np.ndarray) -> np.ndarray:
    """Route per-slice permutation gradients back to similarity rows."""
    n = stack.p.shape[0]
    require_shape(d_p.shape == stack.p.shape,
                  f"permutation grad {d_p.shape} does not match stack {stack.p.shape}")
    return np.stack([softsort_backward(stack.rows[i], d_p[i]) for i in range(n)])


def soft_gather(p: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Per-query reordering of the candidate rows: out[i] = p[i] @ z."""
    require_shape(p.ndim == 3 and z.ndim == 2 and p.shape[2] == z.shape[0],
                  f"soft_gather shape mismatch: stack {p.shape} vs rows {z.shape}")
    return np.einsum("ijk,kd->ijd", p, z)


def soft_gather_backward(p: np.ndarray, z: np.ndarray, d_e: np.ndarray):
    """Gradients of soft_gather w.r.t. the stack and the gathered rows."""
    require_shape(d_e.shape == (p.shape[0], p.shape[1], z.shape[1]),
                  f"soft_gather grad {d_e.shape} vs stack {p.shape}, rows {z.shape}")
    d_p = np.einsum("ijd,kd->ijk", d_e, z)
    d_z = np.einsum("ijk,ijd->kd", p, d_e)
    return d_p, d_z


def _cosine_vs_query(e: np.ndarray, z_hat: np.ndarray):
    """cos[i, j] between gathered row e[i, j] and query vector z_hat[i]."""
    e_n = l2_normalize_rows(e)
    z_n = l2_normalize_rows(z_hat)
    cos = np.einsum("ijd,id->ij", e_n, z_n)
    return cos, e_n, z_n


def _cosine_vs_query_backward(e, z_hat, e_n, z_n, d_cos):
    d_e = l2_normalize_backward(e, d_cos[:, :, None] * z_n[:, None, :])
    d_z = l2_normalize_backward(z_hat, np.einsum("ij,ijd->id", d_cos, e_n))
    return d_e, d_z


def sorted_nce_op_count(n: int, m: int) -> int:
    """Pairwise interaction terms per query: m softmaxes over 1 + (n - m) logits."""
    return m * (n - m + 1)


def sorted_nce(e: np.ndarray, z_hat: np.ndarray, m: int, tau_c: float):
    """Contrastive loss over position-sorted candidate lists.

    Positions 0..m-1 of each list are positives; each forms its own
    softmax whose denominator is that positive plus the trailing n-m
    negatives. Other positives never appear in the denominator. Returns
    (loss, dL/de, dL/dz_hat) with loss averaged by 1/(m n).
    """
    n = e.shape[0]
    require_shape(e.ndim == 3 and e.shape[0] == e.shape[1] and z_hat.shape == (n, e.shape[2]),
                  f"sorted_nce shapes: lists {e.shape} vs queries {z_hat.shape}")
    require_param(1 <= m < n, f"positive count m must satisfy 1 <= m < n, got m={m}, n={n}")
    require_param(tau_c > 0, f"contrastive temperature must be > 0, got {tau_c}")
    cos, e_n, z_n = _cosine_vs_query(e, z_hat)
    logits = cos / tau_c
    neg = logits[:, m:]
    d_logits = np.zeros_like(logits)
    total = 0.0
    for j in range(m):
        block = np.concatenate([logits[:, j:j + 1], neg], axis=1)
        mx = block.max(axis=1, keepdims=True)
        lse = mx[:, 0] + np.log(np.exp(block - mx).sum(axis=1))
        total += float(np.sum(lse - logits[:, j]))
        probs = np.exp(block - lse[:, None])
        d_logits[:, j] += probs[:, 0] - 1.0
        d_logits[:, m:] += probs[:, 1:]
    scale = 1.0 / (m * n)
    d_cos = d_logits * (scale / tau_c)
    d_e, d_z = _cosine_vs_query_backward(e, z_hat, e_n, z_n, d_cos)
    return total * scale, d_e, d_z


def multilabel_nce(e: np.ndarray, z_hat: np.ndarray, m: int, tau_c: float):
    """Summed-numerator alternative: one term per query, numerator adding the
    m positive kernels, denominator adding all n. Returns (loss, de, dz)."""
    n = e.shape[0]
    require_param(1 <= m < n, f"positive count m must satisfy 1 <= m < n, got m={m}, n={n}")
    require_param(tau_c > 0, f"contrastive temperature must be > 0, got {tau_c}")
    cos, e_n, z_n = _cosine_vs_query(e, z_hat)
    logits = cos / tau_c
    mx_all = logits.max(axis=1, keepdims=True)
    lse_all = mx_all[:, 0] + np.log(np.exp(logits - mx_all).sum(axis=1))
    pos = logits[:, :m]
    mx_pos = pos.max(axis=1, keepdims=True)
    lse_pos = mx_pos[:, 0] + np.log(np.exp(pos - mx_pos).sum(axis=1))
    loss = float(np.sum(lse_all - lse_pos)) / n
    q = np.exp(logits - lse_all[:, None])
    d_logits = q.copy()
    d_logits[:, :m] -= np.exp(pos - lse_pos[:, None])
    d_cos = d_logits / (n * tau_c)
    d_e, d_z = _cosine_vs_query_backward(e, z_hat, e_n, z_n, d_cos)
    return loss, d_e, d_z


def two_view_infonce(a: np.ndarray, b: np.ndarray, tau_c: float):
    """Symmetric single-positive contrastive loss between two row-aligned
    views: row i of each view is the positive for row i of the other, all
    other cross-view rows are negatives. Returns (loss, da, db)."""
    require_shape(a.shape == b.shape and a.ndim == 2,
                  f"two_view_infonce expects equal shapes, got {a.shape} and {b.shape}")
    require_param(tau_c > 0, f"contrastive temperature must be > 0, got {tau_c}")
    n = a.shape[0]
    a_n = l2_normalize_rows(a)
    b_n = l2_normalize_rows(b)
    logits = (a_n @ b_n.T) / tau_c
    mx_r = logits.max(axis=1, keepdims=True)
    lse_r = mx_r[:, 0] + np.log(np.exp(logits - mx_r).sum(axis=1))
    mx_c = logits.max(axis=0, keepdims=True)
    lse_c = mx_c[0, :] + np.log(np.exp(logits - mx_c).sum(axis=0))
    diag = np.diag(logits)
    loss = float(np.sum(lse_r - diag) + np.sum(lse_c - diag)) / (2.0 * n)
    p_r = np.exp(logits - lse_r[:, None])
    p_c = np.exp(logits - lse_c[None, :])
    d_logits = (p_r + p_c - 2.0 * np.eye(n)) / (2.0 * n)
    d_cos = d_logits / tau_c
    d_a = l2_normalize_backward(a, d_cos @ b_n)
    d_b = l2_normalize_backward(b, d_cos.T @ a_n)
    return loss, d_a, d_b


@dataclass
class VariantConfig:
    """Loss-pathway switches and their temperatures.

    ``tau_s = None`` resolves to the code length at use time. ``m`` must
    stay below the batch size, checked when the batch is known.
    """

    variant: str = "full"
    m: int = 2
    tau_c: float = 0.1
    tau_s: Optional[float] = None

    def __post_init__(self):
        require_param(self.variant in VARIANTS,
                      f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        require_param(self.m >= 1, f"positive count m must be >= 1, got {self.m}")
        require_param(self.tau_c > 0, f"contrastive temperature must be > 0, got {self.tau_c}")
        if self.tau_s is not None:
            require_param(self.tau_s > 0, f"sort temperature must be > 0, got {self.tau_s}")

    def resolve_tau_s(self, d_b: int) -> float:
        return float(d_b) if self.tau_s is None else float(self.tau_s)


@dataclass
class ForwardBackwardResult:
    loss: float
    loss_sorted: float
    loss_quant: float
    grads: GradientSet
    d_similarity: np.ndarray  # gradient that reached the similarity matrix


SteAnchor = tuple[tuple[np.ndarray, np.ndarray], tuple[np.ndarray, np.ndarray]]


def forward_backward(
    params: ModelParams,
    batch1: np.ndarray,
    batch2: np.ndarray,
    cfg: VariantConfig,
    ste_anchor: Optional[SteAnchor] = None,
) -> ForwardBackwardResult:
    """One training step's loss and analytic parameter gradients.

    ``batch1``/``batch2`` are two augmented views of the same items,
    row-aligned. ``ste_anchor`` is a verification hook: given the
    ((codes, h), (codes, h)) pair captured from an unperturbed run, the
    hard binarizer is replaced by its local linear model b = h + (b0 - h0),
    which is the differentiable function whose exact gradient the identity
    straight-through estimator computes. Finite-difference checks use it;
    training never does.
    """
    require_shape(batch1.shape == batch2.shape and batch1.ndim == 2,
                  f"views must be row-aligned matrices, got {batch1.shape} and {batch2.shape}")
    n = batch1.shape[0]
    require_param(cfg.m < n, f"positive count m={cfg.m} must be below batch size n={n}")

    enc1, cache1 = _encode_cached(params, batch1)
    enc2, cache2 = _encode_cached(params, batch2)
    if ste_anchor is None:
        b1, b2 = enc1.b, enc2.b
        quant_target1, quant_target2 = enc1.b, enc2.b
    else:
        (b1_ref, h1_ref), (b2_ref, h2_ref) = ste_anchor
        b1 = enc1.h + (b1_ref - h1_ref)
        b2 = enc2.h + (b2_ref - h2_ref)
        quant_target1, quant_target2 = b1_ref, b2_ref

    d_b = params.d_b
    tau_s = cfg.resolve_tau_s(d_b)
    s = similarity_matrix(b1, b2)
    check_finite("similarity matrix", s)

    zeros_codes = np.zeros_like(b1)
    d_z1 = np.zeros_like(enc1.z)
    d_z2 = np.zeros_like(enc2.z)

    if cfg.variant == "hard_sort":
        orders = [hard_argsort_desc(s[i]) for i in range(n)]
        e = np.stack([enc1.z[order] for order in orders])
        loss_sorted, d_e, d_z2 = sorted_nce(e, enc2.z, cfg.m, cfg.tau_c)
        for i, order in enumerate(orders):
            np.add.at(d_z1, order, d_e[i])
        d_s = np.zeros((n, n))
        d_b1, d_b2 = zeros_codes.copy(), zeros_codes.copy()
    elif cfg.variant == "no_softsort":
        e1 = s @ b1
        e2 = s @ b2
        loss_sorted, d_e1, d_e2 = two_view_infonce(e1, e2, cfg.tau_c)
        d_s = d_e1 @ b1.T + d_e2 @ b2.T
        d_b1_sim, d_b2_sim = similarity_backward(d_s, b1, b2)
        d_b1 = d_b1_sim + s.T @ d_e1
        d_b2 = d_b2_sim + s.T @ d_e2
    else:
        stack = build_permutations(s, tau_s)
        if cfg.variant == "single_bottleneck":
            e = soft_gather(stack.p, b1)
            loss_sorted, d_e, d_query = sorted_nce(e, b2, cfg.m, cfg.tau_c)
        elif cfg.variant == "multilabel_nce":
            e = soft_gather(stack.p, enc1.z)
            loss_sorted, d_e, d_query = multilabel_nce(e, enc2.z, cfg.m, cfg.tau_c)
        else:  # full, no_quant
            e = soft_gather(stack.p, enc1.z)
            loss_sorted, d_e, d_query = sorted_nce(e, enc2.z, cfg.m, cfg.tau_c)
        gather_src = b1 if cfg.variant == "single_bottleneck" else enc1.z
        d_p, d_src = soft_gather_backward(stack.p, gather_src, d_e)
        d_s = permutations_backward(stack, d_p)
        d_b1, d_b2 = similarity_backward(d_s, b1, b2)
        if cfg.variant == "single_bottleneck":
            d_b1 = d_b1 + d_src
            d_b2 = d_b2 + d_query
        else:
            d_z1 = d_src
            d_z2 = d_query

    loss_quant = 0.0
    d_h1 = sign_ste_backward(d_b1)
    d_h2 = sign_ste_backward(d_b2)
    if cfg.variant != "no_quant":
        q1, dq1 = quantization_loss(enc1.h, quant_target1, n)
        q2, dq2 = quantization_loss(enc2.h, quant_target2, n)
        loss_quant = q1 + q2
        d_h1 = d_h1 + dq1
        d_h2 = d_h2 + dq2

    grads = params.zeros_like()
    _encode_backward(params, enc1, cache1, d_h1, d_z1, grads)
    _encode_backward(params, enc2, cache2, d_h2, d_z2, grads)

    loss = loss_sorted + loss_quant
    if not np.isfinite(loss):
        raise NumericError(f"non-finite loss: sorted={loss_sorted}, quant={loss_quant}")
    return ForwardBackwardResult(loss=loss, loss_sorted=loss_sorted, loss_quant=loss_quant,
                                 grads=grads, d_similarity=d_s)


def save_checkpoint(path, params: ModelParams) -> None:
    """NSHP container: per tensor a rank, the dims, then float64 data, all
    little-endian. Round-trips exactly."""
    arrays = params.arrays()
    with open(path, "wb") as fh:
        fh.write(NSHP_MAGIC)
        fh.write(struct.pack("<II", NSHP_VERSION, len(arrays)))
        for arr in arrays:
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_checkpoint(path) -> ModelParams:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 12 or raw[:4] != NSHP_MAGIC:
        raise FormatError(f"bad checkpoint magic {raw[:4]!r} at offset 0, expected {NSHP_MAGIC!r}")
    version, count = struct.unpack_from("<II", raw, 4)
    if version != NSHP_VERSION:
        raise FormatError(f"unsupported checkpoint version {version} at offset 4")
    offset = 12
    arrays = []
    for _ in range(count):
        if offset + 4 > len(raw):
            raise FormatError(f"checkpoint truncated in tensor header at offset {offset}")
        (rank,) = struct.unpack_from("<I", raw, offset)
        offset += 4
        if offset + 8 * rank > len(raw):
            raise FormatError(f"checkpoint truncated in dims at offset {offset}")
        dims = struct.unpack_from(f"<{rank}Q", raw, offset)
        offset += 8 * rank
        size = int(np.prod(dims, dtype=np.int64)) if rank else 1
        end = offset + 8 * size
        if end > len(raw):
            raise FormatError(
                f"checkpoint payload at offset {offset}: expected {8 * size} bytes, got {len(raw) - offset}"
            )
        arrays.append(np.frombuffer(raw, dtype="<f8", count=size, offset=offset)
                      .reshape(dims).astype(np.float64))
        offset = end
    if len(arrays) % 2 != 0 or len(arrays) < 4:
        raise FormatError(f"checkpoint holds {len(arrays)} tensors; expected weight/bias pairs")
    layers = [Dense(arrays[i], arrays[i + 1]) for i in range(0, len(arrays), 2)]
    return ModelParams(backbone=layers[:-2], hash_head=layers[-2], latent_head=layers[-1])
