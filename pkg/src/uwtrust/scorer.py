"""Behavioral trust scorer: a small transformer encoder over feature windows.

The scorer maps a (seq_len, input_dim) window of per-interval feature
vectors to a trustworthiness score in (0, 1), 1 meaning fully benign.
Architecture: input projection, learned positional embeddings, four
pre-norm encoder blocks (multi-head self-attention + SiLU feed-forward,
both residual), masked mean-pool over valid positions, linear head with
logistic squashing. Front padding is excluded from attention keys and
from the pool, so a window's score depends only on its valid rows.

Forward, backward, and the Adam loop are written directly against numpy
arrays; `gradient_check` verifies every parameter tensor against central
finite differences, which is the correctness anchor for the hand-derived
backward pass. Weights live in a flat {name: array} dict in a fixed
canonical order (see `tensor_names`) that also defines the byte layout of
the model file.

Model file layout (little-endian):
    magic b"UWTM" | u32 version | u32 header_len | header JSON (UTF-8)
    | concatenated C-order tensor bytes in header order
The header records config, dtype, per-tensor shapes/offsets, a SHA-256
hex digest of the payload, and optional metadata. Round-trips are
bit-exact; a corrupted payload fails the digest check on load.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

ALL_PADDING_SCORE = 0.8     # convention for a window with no observations yet
MODEL_MAGIC = b"UWTM"
MODEL_VERSION = 1
_LN_EPS = 1e-5
_NEG_INF = -1e9


@dataclass(frozen=True)
class ScorerConfig:
    layers: int = 4
    model_dim: int = 128
    heads: int = 4
    ff_dim: int = 896
    input_dim: int = 7
    seq_len: int = 64

    def __post_init__(self) -> None:
        for name in ("layers", "model_dim", "heads", "ff_dim", "input_dim", "seq_len"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.model_dim % self.heads != 0:
            raise ValueError("model_dim must be divisible by heads")

    @property
    def head_dim(self) -> int:
        return self.model_dim // self.heads

    def param_count(self) -> int:
        d, f = self.model_dim, self.ff_dim
        per_layer = 4 * d + 4 * (d * d + d) + (d * f + f) + (f * d + d)
        return (self.input_dim * d + d) + self.seq_len * d \
            + self.layers * per_layer + (d + 1)


def tensor_names(config: ScorerConfig) -> list[str]:
    """Canonical parameter order, shared by init, Adam, and serialization."""
    names = ["in_w", "in_b", "pos"]
    for i in range(config.layers):
        names += [f"l{i}.{n}" for n in (
            "ln1_g", "ln1_b", "wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
            "ln2_g", "ln2_b", "w1", "b1", "w2", "b2")]
    names += ["head_w", "head_b"]
    return names


def init_params(config: ScorerConfig, rng: np.random.Generator,
                dtype=np.float32) -> dict[str, np.ndarray]:
    d, f, k = config.model_dim, config.ff_dim, config.seq_len
    std = 0.02

    def normal(*shape):
        return rng.normal(0.0, std, size=shape).astype(dtype)

    params: dict[str, np.ndarray] = {
        "in_w": normal(config.input_dim, d),
        "in_b": np.zeros(d, dtype),
        "pos": normal(k, d),
    }
    for i in range(config.layers):
        p = f"l{i}."
        params[p + "ln1_g"] = np.ones(d, dtype)
        params[p + "ln1_b"] = np.zeros(d, dtype)
        for n in ("wq", "wk", "wv", "wo"):
            params[p + n] = normal(d, d)
        for n in ("bq", "bk", "bv", "bo"):
            params[p + n] = np.zeros(d, dtype)
        params[p + "ln2_g"] = np.ones(d, dtype)
        params[p + "ln2_b"] = np.zeros(d, dtype)
        params[p + "w1"] = normal(d, f)
        params[p + "b1"] = np.zeros(f, dtype)
        params[p + "w2"] = normal(f, d)
        params[p + "b2"] = np.zeros(d, dtype)
    params["head_w"] = normal(d)
    params["head_b"] = np.zeros(1, dtype)
    return {name: params[name] for name in tensor_names(config)}


def param_count(params: dict[str, np.ndarray]) -> int:
    return sum(int(v.size) for v in params.values())


# ------------------------------------------------------------------ forward


def _layer_norm(x: np.ndarray, g: np.ndarray, b: np.ndarray):
    mu = x.mean(-1, keepdims=True)
    var = x.var(-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + _LN_EPS)
    xhat = (x - mu) * inv
    return xhat * g + b, (xhat, inv)


def _layer_norm_backward(dy, cache, g):
    xhat, inv = cache
    dg = (dy * xhat).sum(axis=tuple(range(dy.ndim - 1)))
    db = dy.sum(axis=tuple(range(dy.ndim - 1)))
    dxhat = dy * g
    dx = inv * (dxhat - dxhat.mean(-1, keepdims=True)
                - xhat * (dxhat * xhat).mean(-1, keepdims=True))
    return dx, dg, db


def _softmax(x: np.ndarray) -> np.ndarray:
    m = x.max(-1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(-1, keepdims=True)


def _split_heads(x: np.ndarray, heads: int) -> np.ndarray:
    b, k, d = x.shape
    return x.reshape(b, k, heads, d // heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    b, h, k, dh = x.shape
    return x.transpose(0, 2, 1, 3).reshape(b, k, h * dh)


def forward(params: dict[str, np.ndarray], config: ScorerConfig,
            x: np.ndarray, valid_len: np.ndarray, want_cache: bool = False):
    """Batched forward pass. Returns (probs, cache); cache is None unless asked.

    x: (B, seq_len, input_dim); valid_len: (B,) with 1 <= n <= seq_len.
    Valid rows occupy the LAST n positions; the front is zero padding.
    """
    if x.ndim != 3 or x.shape[1:] != (config.seq_len, config.input_dim):
        raise ValueError(f"expected (B, {config.seq_len}, {config.input_dim}) input")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite feature input")
    valid_len = np.asarray(valid_len, dtype=np.int64)
    if np.any(valid_len < 1) or np.any(valid_len > config.seq_len):
        raise ValueError("valid_len out of range (all-padding handled by score())")

    dtype = params["in_w"].dtype
    x = x.astype(dtype, copy=False)
    b, k = x.shape[0], config.seq_len
    mask = (np.arange(k)[None, :] >= (k - valid_len[:, None]))       # (B, K) valid
    key_bias = np.where(mask[:, None, None, :], 0.0, _NEG_INF).astype(dtype)
    scale = np.asarray(1.0 / np.sqrt(config.head_dim), dtype)

    h = x @ params["in_w"] + params["in_b"] + params["pos"]
    caches = []
    for i in range(config.layers):
        p = f"l{i}."
        a, ln1c = _layer_norm(h, params[p + "ln1_g"], params[p + "ln1_b"])
        q = _split_heads(a @ params[p + "wq"] + params[p + "bq"], config.heads)
        kk = _split_heads(a @ params[p + "wk"] + params[p + "bk"], config.heads)
        v = _split_heads(a @ params[p + "wv"] + params[p + "bv"], config.heads)
        scores = q @ kk.transpose(0, 1, 3, 2) * scale + key_bias
        attn = _softmax(scores)
        o = _merge_heads(attn @ v)
        h1 = h + o @ params[p + "wo"] + params[p + "bo"]
        a2, ln2c = _layer_norm(h1, params[p + "ln2_g"], params[p + "ln2_b"])
        z1 = a2 @ params[p + "w1"] + params[p + "b1"]
        sig = 0.5 * (1.0 + np.tanh(0.5 * z1))                    # overflow-safe logistic
        s = z1 * sig                                             # SiLU
        h = h1 + s @ params[p + "w2"] + params[p + "b2"]
        if want_cache:
            caches.append((h, a, ln1c, q, kk, v, attn, o, h1, a2, ln2c, z1, sig, s))

    fmask = mask.astype(dtype)
    denom = fmask.sum(-1, keepdims=True)
    pooled = (h * fmask[:, :, None]).sum(1) / denom              # (B, D)
    logit = pooled @ params["head_w"] + params["head_b"][0]
    prob = 0.5 * (1.0 + np.tanh(0.5 * logit))
    cache = (x, mask, fmask, denom, h, pooled, logit, prob, caches) if want_cache else None
    return prob, cache


def bce_loss(logit: np.ndarray, y: np.ndarray) -> float:
    # numerically stable binary cross-entropy on logits
    return float(np.mean(np.maximum(logit, 0) - logit * y
                         + np.log1p(np.exp(-np.abs(logit)))))


def _flat(t: np.ndarray) -> np.ndarray:
    # (B, K, D) -> (B*K, D) view for BLAS-backed weight-gradient matmuls
    return t.reshape(-1, t.shape[-1])


def loss_and_grads(params: dict[str, np.ndarray], config: ScorerConfig,
                   x: np.ndarray, valid_len: np.ndarray, y: np.ndarray):
    """Mean BCE loss and analytic gradients for every parameter tensor."""
    prob, cache = forward(params, config, x, valid_len, want_cache=True)
    xin, mask, fmask, denom, h_out, pooled, logit, _, caches = cache
    dtype = params["in_w"].dtype
    y = y.astype(dtype, copy=False)
    b = x.shape[0]
    loss = bce_loss(logit, y)

    grads = {name: np.zeros_like(p) for name, p in params.items()}
    dlogit = (prob - y).astype(dtype) / b                           # (B,)
    grads["head_w"] = pooled.T @ dlogit
    grads["head_b"] = np.array([dlogit.sum()], dtype)
    dpooled = dlogit[:, None] * params["head_w"][None, :]
    dh = dpooled[:, None, :] * (fmask[:, :, None] / denom[:, :, None])

    scale = np.asarray(1.0 / np.sqrt(config.head_dim), dtype)
    for i in reversed(range(config.layers)):
        p = f"l{i}."
        _, a, ln1c, q, kk, v, attn, o, h1, a2, ln2c, z1, sig, s = caches[i]
        # feed-forward block
        dh1 = dh.copy()
        dout = dh
        grads[p + "w2"] = _flat(s).T @ _flat(dout)
        grads[p + "b2"] = dout.sum((0, 1))
        ds = dout @ params[p + "w2"].T
        dz1 = ds * (sig * (1.0 + z1 * (1.0 - sig)))
        grads[p + "w1"] = _flat(a2).T @ _flat(dz1)
        grads[p + "b1"] = dz1.sum((0, 1))
        da2 = dz1 @ params[p + "w1"].T
        dx2, dg2, db2 = _layer_norm_backward(da2, ln2c, params[p + "ln2_g"])
        grads[p + "ln2_g"], grads[p + "ln2_b"] = dg2, db2
        dh1 += dx2
        # attention block
        dh = dh1.copy()
        do_merged = dh1 @ params[p + "wo"].T
        grads[p + "wo"] = _flat(o).T @ _flat(dh1)
        grads[p + "bo"] = dh1.sum((0, 1))
        do = _split_heads(do_merged, config.heads)
        dattn = do @ v.transpose(0, 1, 3, 2)
        dv = attn.transpose(0, 1, 3, 2) @ do
        dscores = attn * (dattn - (dattn * attn).sum(-1, keepdims=True))
        dq = dscores @ kk * scale
        dk = dscores.transpose(0, 1, 3, 2) @ q * scale
        dqm, dkm, dvm = (_merge_heads(t) for t in (dq, dk, dv))
        grads[p + "wq"] = _flat(a).T @ _flat(dqm)
        grads[p + "bq"] = dqm.sum((0, 1))
        grads[p + "wk"] = _flat(a).T @ _flat(dkm)
        grads[p + "bk"] = dkm.sum((0, 1))
        grads[p + "wv"] = _flat(a).T @ _flat(dvm)
        grads[p + "bv"] = dvm.sum((0, 1))
        da = dqm @ params[p + "wq"].T + dkm @ params[p + "wk"].T \
            + dvm @ params[p + "wv"].T
        dx1, dg1, db1 = _layer_norm_backward(da, ln1c, params[p + "ln1_g"])
        grads[p + "ln1_g"], grads[p + "ln1_b"] = dg1, db1
        dh += dx1

    grads["pos"] = dh.sum(0)
    grads["in_b"] = dh.sum((0, 1))
    grads["in_w"] = _flat(xin).T @ _flat(dh)
    return loss, grads


# ------------------------------------------------------------------ scoring


def score(params: dict[str, np.ndarray], config: ScorerConfig,
          seq: np.ndarray, valid_len: int) -> float:
    """Trust score in (0,1) for one window; all-padding bypasses the network."""
    if valid_len == 0:
        return ALL_PADDING_SCORE
    prob, _ = forward(params, config, seq[None, :, :],
                      np.array([valid_len]))
    return float(prob[0])


def score_batch(params: dict[str, np.ndarray], config: ScorerConfig,
                x: np.ndarray, valid_len: np.ndarray) -> np.ndarray:
    valid_len = np.asarray(valid_len, dtype=np.int64)
    out = np.full(x.shape[0], ALL_PADDING_SCORE)
    live = valid_len > 0
    if np.any(live):
        probs, _ = forward(params, config, x[live], valid_len[live])
        out[live] = probs
    return out


# ----------------------------------------------------------- gradient check


def gradient_check(params: dict[str, np.ndarray], config: ScorerConfig,
                   x: np.ndarray, valid_len: np.ndarray, y: np.ndarray,
                   h: float = 1e-5,
                   samples_per_tensor: Optional[int] = None,
                   rng: Optional[np.random.Generator] = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    Runs in double precision regardless of the stored parameter dtype.
    With `samples_per_tensor` set, checks that many randomly chosen entries
    per tensor instead of every entry (needed for the full-size model).
    """
    p64 = {k: v.astype(np.float64) for k, v in params.items()}
    x64 = x.astype(np.float64)
    y64 = y.astype(np.float64)
    _, grads = loss_and_grads(p64, config, x64, valid_len, y64)
    if rng is None:
        rng = np.random.default_rng(0)

    worst = 0.0
    for name, tensor in p64.items():
        flat = tensor.reshape(-1)
        n = flat.size
        if samples_per_tensor is None or samples_per_tensor >= n:
            idxs: Iterable[int] = range(n)
        else:
            idxs = rng.choice(n, size=samples_per_tensor, replace=False)
        gflat = grads[name].reshape(-1)
        for j in idxs:
            orig = flat[j]
            flat[j] = orig + h
            lp, _ = _loss_only(p64, config, x64, valid_len, y64)
            flat[j] = orig - h
            lm, _ = _loss_only(p64, config, x64, valid_len, y64)
            flat[j] = orig
            numeric = (lp - lm) / (2.0 * h)
            analytic = gflat[j]
            rel = abs(analytic - numeric) / max(abs(analytic) + abs(numeric), 1e-6)
            worst = max(worst, rel)
    return worst


def _loss_only(params, config, x, valid_len, y):
    prob, cache = forward(params, config, x, valid_len, want_cache=True)
    logit = cache[6]
    return bce_loss(logit, y.astype(logit.dtype)), prob


# ----------------------------------------------------------------- training


@dataclass
class TrainReport:
    epochs: int
    epoch_losses: list[float]
    val_accuracy: float
    val_precision: float
    val_recall: float
    n_train: int
    n_val: int
    param_count: int
    final_loss: float = field(init=False)

    def __post_init__(self) -> None:
        self.final_loss = self.epoch_losses[-1] if self.epoch_losses else float("nan")


def _adam_step(params, grads, m, v, t, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    b1t = 1.0 - beta1 ** t
    b2t = 1.0 - beta2 ** t
    for name, p in params.items():
        g = grads[name].astype(np.float32)
        m[name] = beta1 * m[name] + (1.0 - beta1) * g
        v[name] = beta2 * v[name] + (1.0 - beta2) * g * g
        mhat = m[name] / b1t
        vhat = v[name] / b2t
        p -= (lr * mhat / (np.sqrt(vhat) + eps)).astype(p.dtype)


def train(train_x: np.ndarray, train_valid: np.ndarray, train_y: np.ndarray,
          val_x: np.ndarray, val_valid: np.ndarray, val_y: np.ndarray,
          config: ScorerConfig, rng: np.random.Generator,
          epochs: int = 3, batch_size: int = 64, lr: float = 3e-4,
          log=None) -> tuple[dict[str, np.ndarray], TrainReport]:
    """Adam + BCE training loop, deterministic given the generator state.

    Labels: 1 = benign, 0 = attack-active. The same generator drives weight
    init and per-epoch shuffling, so one seed pins the whole run.
    """
    train_y = np.asarray(train_y, dtype=np.float32)
    if len(np.unique(train_y)) < 2:
        raise ValueError("training set contains a single class")
    params = init_params(config, rng)
    m = {k: np.zeros_like(v, dtype=np.float32) for k, v in params.items()}
    v2 = {k: np.zeros_like(p, dtype=np.float32) for k, p in params.items()}

    n = train_x.shape[0]
    step = 0
    epoch_losses = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        total, seen = 0.0, 0
        for lo in range(0, n, batch_size):
            idx = order[lo:lo + batch_size]
            loss, grads = loss_and_grads(params, config, train_x[idx],
                                         train_valid[idx], train_y[idx])
            if not np.isfinite(loss):
                raise RuntimeError(
                    f"training diverged: non-finite loss at epoch {epoch} "
                    f"step {step} (lr={lr}, batch={len(idx)})")
            step += 1
            _adam_step(params, grads, m, v2, step, lr)
            total += loss * len(idx)
            seen += len(idx)
        epoch_losses.append(total / seen)
        if log is not None:
            msg = f"epoch {epoch}: loss {epoch_losses[-1]:.4f}"
            if val_x.shape[0]:
                a, p, r = evaluate(params, config, val_x, val_valid, val_y)
                msg += f"  val acc {a:.3f} prec {p:.3f} rec {r:.3f}"
            log(msg)

    acc, prec, rec = evaluate(params, config, val_x, val_valid, val_y)
    report = TrainReport(epochs=epochs, epoch_losses=epoch_losses,
                         val_accuracy=acc, val_precision=prec, val_recall=rec,
                         n_train=n, n_val=val_x.shape[0],
                         param_count=param_count(params))
    return params, report


def evaluate(params, config, x, valid_len, y,
             batch_size: int = 256) -> tuple[float, float, float]:
    """Accuracy / precision / recall on the ATTACK class (label 0).

    A window is predicted attack when its trust score falls below 0.5.
    Zero predicted positives → precision 1.0 by convention.
    """
    if x.shape[0] == 0:
        return float("nan"), float("nan"), float("nan")
    probs = np.concatenate([
        score_batch(params, config, x[i:i + batch_size], valid_len[i:i + batch_size])
        for i in range(0, x.shape[0], batch_size)])
    pred_attack = probs < 0.5
    is_attack = np.asarray(y) < 0.5
    tp = int(np.sum(pred_attack & is_attack))
    fp = int(np.sum(pred_attack & ~is_attack))
    fn = int(np.sum(~pred_attack & is_attack))
    acc = float(np.mean(pred_attack == is_attack))
    prec = tp / (tp + fp) if (tp + fp) > 0 else 1.0
    rec = tp / (tp + fn) if (tp + fn) > 0 else 1.0
    return acc, prec, rec


# -------------------------------------------------------------- persistence


def save_model(path, params: dict[str, np.ndarray], config: ScorerConfig,
               meta: Optional[dict] = None) -> None:
    names = tensor_names(config)
    if list(params.keys()) != names:
        raise ValueError("parameter dict does not match canonical tensor order")
    for name, t in params.items():
        if not np.all(np.isfinite(t)):
            raise ValueError(f"non-finite values in tensor {name}")
    payload = b"".join(np.ascontiguousarray(params[n]).tobytes() for n in names)
    tensors = []
    offset = 0
    for n in names:
        nbytes = params[n].nbytes
        tensors.append({"name": n, "shape": list(params[n].shape),
                        "offset": offset, "nbytes": nbytes})
        offset += nbytes
    header = {
        "config": {f: getattr(config, f) for f in
                   ("layers", "model_dim", "heads", "ff_dim", "input_dim", "seq_len")},
        "dtype": str(params[names[0]].dtype),
        "tensors": tensors,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
        "meta": meta or {},
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<II", MODEL_VERSION, len(hbytes)))
        fh.write(hbytes)
        fh.write(payload)


def load_model(path) -> tuple[dict[str, np.ndarray], ScorerConfig, dict]:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != MODEL_MAGIC:
            raise ValueError("not a scorer model file (bad magic)")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != MODEL_VERSION:
            raise ValueError(f"unsupported model file version {version}")
        header = json.loads(fh.read(hlen).decode())
        payload = fh.read()
    if hashlib.sha256(payload).hexdigest() != header["payload_sha256"]:
        raise ValueError("model payload checksum mismatch (file corrupted)")
    config = ScorerConfig(**header["config"])
    dtype = np.dtype(header["dtype"])
    params: dict[str, np.ndarray] = {}
    for spec in header["tensors"]:
        raw = payload[spec["offset"]:spec["offset"] + spec["nbytes"]]
        arr = np.frombuffer(raw, dtype=dtype).reshape(spec["shape"]).copy()
        params[spec["name"]] = arr
    if list(params.keys()) != tensor_names(config):
        raise ValueError("model tensor list does not match config")
    for name, t in params.items():
        if not np.all(np.isfinite(t)):
            raise ValueError(f"non-finite values in tensor {name}")
    return params, config, header.get("meta", {})
