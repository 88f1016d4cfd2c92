"""Reference numerical kernel for the contrastive training objective.

Covers the projection head (ReLU + average pooling), dot/cosine
similarity, the in-batch InfoNCE loss with optional per-instance hard
negatives, the MLE term, and the combined objective. Every quantity is
returned as a loss (smaller is better). Analytic gradients are verified
against central finite differences by :func:`grad_check`.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np


class ShapeMismatch(Exception):
    pass


class ZeroNorm(Exception):
    """Cosine similarity is undefined for a zero-norm vector."""


class EmptySequence(Exception):
    pass


@dataclass(frozen=True)
class LossConfig:
    tau: float = 0.05
    alpha: float = 0.1
    sim_kind: str = "dot"  # dot | cosine

    def __post_init__(self):
        if self.tau <= 0:
            raise ValueError("tau must be positive")
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.sim_kind not in ("dot", "cosine"):
            raise ValueError(f"sim_kind must be dot or cosine, got {self.sim_kind!r}")


@dataclass
class HiddenBatch:
    """Per-instance encoder/decoder hidden matrices plus the shared
    projection parameters. ``negatives[i]`` may be None."""

    sources: list  # n matrices, (src_len_i, d)
    targets: list  # n matrices, (tgt_len_i, d)
    negatives: list  # n entries, (neg_len_i, d) or None
    W: np.ndarray  # (p, d)
    b: np.ndarray  # (p,)

    def __post_init__(self):
        self.sources = [np.asarray(m, dtype=float) for m in self.sources]
        self.targets = [np.asarray(m, dtype=float) for m in self.targets]
        self.negatives = [None if m is None else np.asarray(m, dtype=float)
                          for m in self.negatives]
        self.W = np.asarray(self.W, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        if not (len(self.sources) == len(self.targets) == len(self.negatives)):
            raise ShapeMismatch("sources, targets, negatives must have equal length")
        if self.n < 1:
            raise ShapeMismatch("batch must contain at least one instance")
        if self.W.ndim != 2 or self.b.shape != (self.p,):
            raise ShapeMismatch("W must be (p, d) and b must be (p,)")
        for m in self.sources + self.targets + [x for x in self.negatives if x is not None]:
            if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] != self.d:
                raise ShapeMismatch(f"matrix shape {m.shape} incompatible with d={self.d}")

    @property
    def n(self) -> int:
        return len(self.sources)

    @property
    def d(self) -> int:
        return self.W.shape[1]

    @property
    def p(self) -> int:
        return self.W.shape[0]


def project(M, W, b) -> np.ndarray:
    """AvgPool over tokens of ReLU(W m_t + b)."""
    M = np.asarray(M, dtype=float)
    W = np.asarray(W, dtype=float)
    b = np.asarray(b, dtype=float)
    if M.ndim != 2 or W.ndim != 2 or M.shape[1] != W.shape[1] or b.shape != (W.shape[0],):
        raise ShapeMismatch(f"project: M {M.shape}, W {W.shape}, b {b.shape}")
    return np.maximum(M @ W.T + b, 0.0).mean(axis=0)


def _project_backward(M, W, b, g_z):
    """Gradients of project(M, W, b) contracted with an upstream g_z."""
    pre = M @ W.T + b  # (T, p)
    G = (pre > 0) * (g_z / M.shape[0])  # (T, p)
    return G @ W, G.T @ M, G.sum(axis=0)  # gM, gW, gb


def similarity(z1, z2, kind: str = "dot") -> float:
    z1 = np.asarray(z1, dtype=float)
    z2 = np.asarray(z2, dtype=float)
    if z1.shape != z2.shape:
        raise ShapeMismatch(f"similarity: {z1.shape} vs {z2.shape}")
    dot = float(z1 @ z2)
    if kind == "dot":
        return dot
    if kind == "cosine":
        n1, n2 = np.linalg.norm(z1), np.linalg.norm(z2)
        if n1 == 0.0 or n2 == 0.0:
            raise ZeroNorm("cosine similarity undefined for zero-norm vector")
        return dot / (n1 * n2)
    raise ValueError(f"unknown similarity kind {kind!r}")


def _sim_with_grad(u, v, kind):
    """(sim, d sim/d u, d sim/d v)."""
    if kind == "dot":
        return float(u @ v), v.copy(), u.copy()
    nu, nv = np.linalg.norm(u), np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ZeroNorm("cosine similarity undefined for zero-norm vector")
    s = float(u @ v) / (nu * nv)
    gu = v / (nu * nv) - s * u / nu**2
    gv = u / (nu * nv) - s * v / nv**2
    return s, gu, gv


def _logsumexp(row):
    m = np.max(row)
    return m + np.log(np.sum(np.exp(row - m)))


def contrastive_loss(zx, zs, cfg: LossConfig = LossConfig()) -> float:
    """In-batch InfoNCE: negatives for instance i are all batch targets."""
    return contrastive_loss_hard(zx, zs, None, cfg)


def contrastive_loss_hard(zx, zs, zbar=None, cfg: LossConfig = LossConfig()) -> float:
    """InfoNCE whose denominator additionally holds the instance's hard
    negative when present; reduces to contrastive_loss when all are absent."""
    zx = np.asarray(zx, dtype=float)
    zs = np.asarray(zs, dtype=float)
    if zx.shape != zs.shape or zx.ndim != 2:
        raise ShapeMismatch(f"contrastive loss: zx {zx.shape}, zs {zs.shape}")
    n = zx.shape[0]
    if zbar is None:
        zbar = [None] * n
    if len(zbar) != n:
        raise ShapeMismatch("zbar must have one (possibly None) entry per instance")
    total = 0.0
    for i in range(n):
        logits = [similarity(zx[i], zs[k], cfg.sim_kind) / cfg.tau for k in range(n)]
        if zbar[i] is not None:
            logits.append(similarity(zx[i], np.asarray(zbar[i], dtype=float), cfg.sim_kind) / cfg.tau)
        logits = np.array(logits)
        total += _logsumexp(logits) - logits[i]
    return float(total)


def mle_loss(token_logprobs) -> float:
    """Negated sum of gold-token log-probabilities over all instances."""
    seqs = [list(seq) for seq in token_logprobs]
    if not seqs or any(not seq for seq in seqs):
        raise EmptySequence("every instance needs at least one token log-probability")
    return float(-sum(sum(seq) for seq in seqs))


def total_loss(mle: float, cont_hard: float, cfg: LossConfig = LossConfig()) -> float:
    """Combined objective: MLE plus alpha-weighted contrastive term."""
    return float(mle + cfg.alpha * cont_hard)


def batch_projections(batch: HiddenBatch):
    zx = np.stack([project(m, batch.W, batch.b) for m in batch.sources])
    zs = np.stack([project(m, batch.W, batch.b) for m in batch.targets])
    zbar = [None if m is None else project(m, batch.W, batch.b) for m in batch.negatives]
    return zx, zs, zbar


def batch_loss(batch: HiddenBatch, cfg: LossConfig = LossConfig()) -> float:
    zx, zs, zbar = batch_projections(batch)
    return contrastive_loss_hard(zx, zs, zbar, cfg)


def batch_loss_and_grads(batch: HiddenBatch, cfg: LossConfig = LossConfig()):
    """Loss plus analytic gradients w.r.t. W, b, and all hidden matrices."""
    n = batch.n
    zx, zs, zbar = batch_projections(batch)

    g_zx = np.zeros_like(zx)
    g_zs = np.zeros_like(zs)
    g_zbar = [None if z is None else np.zeros_like(z) for z in zbar]
    total = 0.0
    for i in range(n):
        sims, dzx_parts, dother_parts = [], [], []
        for k in range(n):
            s, gu, gv = _sim_with_grad(zx[i], zs[k], cfg.sim_kind)
            sims.append(s)
            dzx_parts.append(gu)
            dother_parts.append(("s", k, gv))
        if zbar[i] is not None:
            s, gu, gv = _sim_with_grad(zx[i], zbar[i], cfg.sim_kind)
            sims.append(s)
            dzx_parts.append(gu)
            dother_parts.append(("bar", i, gv))
        logits = np.array(sims) / cfg.tau
        lse = _logsumexp(logits)
        total += lse - logits[i]
        probs = np.exp(logits - lse)
        # d loss_i / d sim_j = (p_j - delta_ij) / tau
        coeff = probs.copy()
        coeff[i] -= 1.0
        coeff /= cfg.tau
        for j, c in enumerate(coeff):
            g_zx[i] += c * dzx_parts[j]
            tag, idx, gv = dother_parts[j]
            if tag == "s":
                g_zs[idx] += c * gv
            else:
                g_zbar[idx] += c * gv

    gW = np.zeros_like(batch.W)
    gb = np.zeros_like(batch.b)
    gM, gH, gHbar = [], [], []
    for i in range(n):
        gm, gw, gbv = _project_backward(batch.sources[i], batch.W, batch.b, g_zx[i])
        gM.append(gm)
        gW += gw
        gb += gbv
        gh, gw, gbv = _project_backward(batch.targets[i], batch.W, batch.b, g_zs[i])
        gH.append(gh)
        gW += gw
        gb += gbv
        if batch.negatives[i] is None:
            gHbar.append(None)
        else:
            gn, gw, gbv = _project_backward(batch.negatives[i], batch.W, batch.b, g_zbar[i])
            gHbar.append(gn)
            gW += gw
            gb += gbv
    return float(total), {"W": gW, "b": gb, "M": gM, "H": gH, "Hbar": gHbar}


def _forward_loss(sources, targets, negatives, W, b, cfg: LossConfig):
    """Dtype-generic forward pass (works on float64 and longdouble)."""
    def pooled(m):
        return np.maximum(m @ W.T + b, 0).mean(axis=0)

    zx = [pooled(m) for m in sources]
    zs = [pooled(m) for m in targets]
    zbar = [None if m is None else pooled(m) for m in negatives]

    def sim(u, v):
        if cfg.sim_kind == "dot":
            return u @ v
        nu = np.sqrt(u @ u)
        nv = np.sqrt(v @ v)
        if nu == 0 or nv == 0:
            raise ZeroNorm("cosine similarity undefined for zero-norm vector")
        return (u @ v) / (nu * nv)

    n = len(sources)
    total = zx[0][0] * 0  # zero of the working dtype
    for i in range(n):
        logits = [sim(zx[i], zs[k]) / cfg.tau for k in range(n)]
        if zbar[i] is not None:
            logits.append(sim(zx[i], zbar[i]) / cfg.tau)
        logits = np.array(logits)
        total = total + _logsumexp(logits) - logits[i]
    return total


def grad_check(batch: HiddenBatch, cfg: LossConfig = LossConfig(),
               epsilon: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients
    over all entries of W, b, and the source/target matrices.

    Differences are taken in extended precision with one Richardson
    extrapolation step, so entries whose true gradient is far below the
    1e-8 denominator floor still compare cleanly.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError("epsilon must lie in [1e-7, 1e-3]")
    _, grads = batch_loss_and_grads(batch, cfg)

    hp = np.longdouble
    sources = [m.astype(hp) for m in batch.sources]
    targets = [m.astype(hp) for m in batch.targets]
    negatives = [None if m is None else m.astype(hp) for m in batch.negatives]
    W = batch.W.astype(hp)
    b = batch.b.astype(hp)

    def loss():
        return _forward_loss(sources, targets, negatives, W, b, cfg)

    def numeric(array):
        g = np.zeros(array.shape, dtype=hp)
        flat = array.ravel()
        out = g.ravel()
        for j in range(flat.size):
            orig = flat[j]

            def central(h):
                flat[j] = orig + h
                hi = loss()
                flat[j] = orig - h
                lo = loss()
                flat[j] = orig
                return (hi - lo) / (2 * h)

            d1 = central(hp(epsilon))
            d2 = central(hp(epsilon) / 2)
            out[j] = (4 * d2 - d1) / 3
        return g

    def rel_err(analytic, fd):
        analytic = analytic.astype(hp)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), hp(1e-8))
        return float(np.max(np.abs(analytic - fd) / denom)) if analytic.size else 0.0

    worst = rel_err(grads["W"], numeric(W))
    worst = max(worst, rel_err(grads["b"], numeric(b)))
    for i in range(batch.n):
        worst = max(worst, rel_err(grads["M"][i], numeric(sources[i])))
        worst = max(worst, rel_err(grads["H"][i], numeric(targets[i])))
    return worst


def random_batch(seed: int, n=3, d=4, p=2, max_len=4, kink_margin=1e-3) -> HiddenBatch:
    """Seeded random batch whose pre-activations stay away from the ReLU
    kink, so finite differences remain valid."""
    rng = np.random.default_rng(seed)

    def matrices(count, optional=False):
        out = []
        for i in range(count):
            if optional and rng.random() < 0.3:
                out.append(None)
            else:
                out.append(rng.normal(size=(int(rng.integers(1, max_len + 1)), d)))
        return out

    for _ in range(100):
        W = rng.normal(size=(p, d))
        b = rng.normal(size=p)
        sources = matrices(n)
        targets = matrices(n)
        negatives = matrices(n, optional=True)
        pres = [m @ W.T + b for m in sources + targets + [x for x in negatives if x is not None]]
        if min(np.min(np.abs(pre)) for pre in pres) <= kink_margin:
            continue
        # fully-dead projections break cosine similarity; resample those too
        pooled = [np.maximum(pre, 0.0).mean(axis=0) for pre in pres]
        if min(np.linalg.norm(z) for z in pooled) > kink_margin:
            return HiddenBatch(sources, targets, negatives, W, b)
    raise RuntimeError("could not sample a kink-free batch")


# --- batch file formats -------------------------------------------------

_MAGIC = b"CDHB"


def save_batch(path, batch: HiddenBatch) -> None:
    path = str(path)
    if path.endswith(".json"):
        payload = {
            "n": batch.n, "d": batch.d, "p": batch.p,
            "instances": [
                {
                    "source": batch.sources[i].tolist(),
                    "target": batch.targets[i].tolist(),
                    "negative": None if batch.negatives[i] is None else batch.negatives[i].tolist(),
                }
                for i in range(batch.n)
            ],
            "W": batch.W.tolist(),
            "b": batch.b.tolist(),
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh)
        return
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<III", batch.n, batch.d, batch.p))
        for i in range(batch.n):
            neg = batch.negatives[i]
            fh.write(struct.pack("<III", batch.sources[i].shape[0],
                                 batch.targets[i].shape[0],
                                 0 if neg is None else neg.shape[0]))
            fh.write(batch.sources[i].astype("<f8").tobytes())
            fh.write(batch.targets[i].astype("<f8").tobytes())
            if neg is not None:
                fh.write(neg.astype("<f8").tobytes())
        fh.write(batch.W.astype("<f8").tobytes())
        fh.write(batch.b.astype("<f8").tobytes())


def load_batch(path) -> HiddenBatch:
    path = str(path)
    if path.endswith(".json"):
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        return HiddenBatch(
            sources=[inst["source"] for inst in payload["instances"]],
            targets=[inst["target"] for inst in payload["instances"]],
            negatives=[inst["negative"] for inst in payload["instances"]],
            W=payload["W"], b=payload["b"],
        )
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != _MAGIC:
        raise ValueError("not a hidden-batch file")
    off = 4
    n, d, p = struct.unpack_from("<III", data, off)
    off += 12

    def take(rows, cols):
        nonlocal off
        count = rows * cols
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(rows, cols).copy()
        off += count * 8
        return arr

    sources, targets, negatives = [], [], []
    for _ in range(n):
        src_len, tgt_len, neg_len = struct.unpack_from("<III", data, off)
        off += 12
        sources.append(take(src_len, d))
        targets.append(take(tgt_len, d))
        negatives.append(take(neg_len, d) if neg_len else None)
    W = take(p, d)
    b = take(1, p).ravel()
    return HiddenBatch(sources, targets, negatives, W, b)
