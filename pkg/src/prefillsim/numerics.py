"""Toy decoder block on float64 matrices: full vs hybrid execution.

The block is causal single-head attention followed by a SiLU-gated MLP.
`block_forward_full` runs every stage over all rows at once and keeps
each stage's output alive for the whole pass, the way traditional
prefilling stores intermediates for all input tokens. The hybrid path
runs the attention stage identically but pushes every linear stage
through a chunk loop, so only chunk-sized temporaries exist at any
moment; optional output preallocation and in-place reuse shrink the
footprint further. Both paths register every allocation with a
ScratchTracker so peak scratch can be compared by ledger arithmetic.

Chunking a linear stage cannot change its result: each output row
depends only on the matching input row.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

_F64 = 8  # bytes per scalar


class NumericsError(ValueError):
    """Shape mismatch or invalid chunking."""


@dataclass
class ScratchTracker:
    """Running allocation ledger with peak tracking."""

    current: int = 0
    peak: int = 0
    ledger: list[tuple[str, int, str]] = field(default_factory=list)

    def alloc(self, label: str, nbytes: int):
        self.current += nbytes
        self.peak = max(self.peak, self.current)
        self.ledger.append((label, nbytes, "alloc"))

    def free(self, label: str, nbytes: int):
        if nbytes > self.current:
            raise NumericsError(f"freeing {nbytes} B with only {self.current} B live")
        self.current -= nbytes
        self.ledger.append((label, nbytes, "free"))

    def stage_peak(self, prefix: str) -> int:
        """Peak bytes among ledger entries whose label starts with prefix."""
        cur = peak = 0
        for label, nbytes, kind in self.ledger:
            if not label.startswith(prefix):
                continue
            cur += nbytes if kind == "alloc" else -nbytes
            peak = max(peak, cur)
        return peak


@dataclass(frozen=True)
class ToyBlockParams:
    """Weights of one attention projection set and one gated MLP."""

    w_qkv: np.ndarray  # (hidden, 3*hidden)
    w_out: np.ndarray  # (hidden, hidden)
    w_gate_up: np.ndarray  # (hidden, 2*intermediate)
    w_down: np.ndarray  # (intermediate, hidden)

    def __post_init__(self):
        h = self.w_qkv.shape[0]
        inter = self.w_down.shape[0]
        expected = {
            "w_qkv": (h, 3 * h),
            "w_out": (h, h),
            "w_gate_up": (h, 2 * inter),
            "w_down": (inter, h),
        }
        for name, shape in expected.items():
            w = getattr(self, name)
            if w.shape != shape:
                raise NumericsError(f"{name} has shape {w.shape}, expected {shape}")
            if not np.isfinite(w).all():
                raise NumericsError(f"{name} has non-finite entries")

    @property
    def hidden(self) -> int:
        return self.w_qkv.shape[0]

    @property
    def intermediate(self) -> int:
        return self.w_down.shape[0]

    @classmethod
    def random(cls, seed: int, hidden: int, intermediate: int) -> "ToyBlockParams":
        rng = np.random.default_rng(seed)

        def w(rows, cols):
            return rng.normal(0.0, 1.0 / np.sqrt(rows), size=(rows, cols))

        return cls(
            w_qkv=w(hidden, 3 * hidden),
            w_out=w(hidden, hidden),
            w_gate_up=w(hidden, 2 * intermediate),
            w_down=w(intermediate, hidden),
        )


def random_input(seed: int, n: int, hidden: int) -> np.ndarray:
    return np.random.default_rng(seed + 1).normal(size=(n, hidden))


def _validate_input(params: ToyBlockParams, x: np.ndarray):
    if x.ndim != 2 or x.shape[1] != params.hidden:
        raise NumericsError(
            f"input shape {x.shape} incompatible with hidden={params.hidden}"
        )
    if x.shape[0] < 1:
        raise NumericsError("input must have at least one row")
    if not np.isfinite(x).all():
        raise NumericsError("input has non-finite entries")


def _silu(z: np.ndarray) -> np.ndarray:
    return z / (1.0 + np.exp(-z))


def _tracked(tracker: ScratchTracker, label: str, shape) -> np.ndarray:
    tracker.alloc(label, _F64 * int(np.prod(shape)))
    return np.empty(shape)


def _attention(qkv: np.ndarray, tracker: ScratchTracker) -> np.ndarray:
    """Causal single-head attention over all rows in one pass."""
    n = qkv.shape[0]
    h = qkv.shape[1] // 3
    q, k, v = qkv[:, :h], qkv[:, h : 2 * h], qkv[:, 2 * h :]
    scores = _tracked(tracker, "attn_scores", (n, n))
    np.matmul(q, k.T, out=scores)
    scores /= np.sqrt(h)
    scores[np.triu_indices(n, k=1)] = -np.inf
    scores -= scores.max(axis=1, keepdims=True)
    np.exp(scores, out=scores)
    scores /= scores.sum(axis=1, keepdims=True)
    ctx = _tracked(tracker, "attn_ctx", (n, h))
    np.matmul(scores, v, out=ctx)
    return ctx


def block_forward_full(
    params: ToyBlockParams, x: np.ndarray, tracker: ScratchTracker
) -> np.ndarray:
    """Forward the block over all rows at once, tracking every temporary."""
    _validate_input(params, x)
    n = x.shape[0]
    h, inter = params.hidden, params.intermediate

    qkv = _tracked(tracker, "qkv_out", (n, 3 * h))
    np.matmul(x, params.w_qkv, out=qkv)

    ctx = _attention(qkv, tracker)

    attn_out = _tracked(tracker, "proj_out", (n, h))
    np.matmul(ctx, params.w_out, out=attn_out)

    gate_up = _tracked(tracker, "mlp_gate_up", (n, 2 * inter))
    np.matmul(attn_out, params.w_gate_up, out=gate_up)
    act = _tracked(tracker, "mlp_act", (n, inter))
    np.multiply(_silu(gate_up[:, :inter]), gate_up[:, inter:], out=act)
    out = _tracked(tracker, "mlp_out", (n, h))
    np.matmul(act, params.w_down, out=out)
    return out


class _ChunkedStage:
    """One linear stage's output handling inside the chunk loop.

    prealloc: the (n, cols) output exists before the loop and chunk
    results are written straight into it. Otherwise chunk outputs are
    kept and concatenated afterwards, which transiently doubles the
    output footprint (elided when the loop ran a single chunk).
    """

    def __init__(self, tracker: ScratchTracker, label: str, n: int, cols: int, prealloc: bool):
        self.tracker = tracker
        self.label = label
        self.n, self.cols = n, cols
        self.prealloc = prealloc
        self.pieces: list[np.ndarray] = []
        self.buf = _tracked(tracker, label, (n, cols)) if prealloc else None

    def dest(self, lo: int, hi: int) -> np.ndarray:
        if self.prealloc:
            return self.buf[lo:hi]
        piece = _tracked(self.tracker, f"{self.label}_chunk", (hi - lo, self.cols))
        self.pieces.append(piece)
        return piece

    def finish(self) -> np.ndarray:
        if self.prealloc:
            return self.buf
        if len(self.pieces) == 1:
            return self.pieces[0]
        out = _tracked(self.tracker, self.label, (self.n, self.cols))
        np.concatenate(self.pieces, axis=0, out=out)
        for piece in self.pieces:
            self.tracker.free(f"{self.label}_chunk", piece.nbytes)
        return out


def _chunks(n: int, chunk: int):
    for lo in range(0, n, chunk):
        yield lo, min(lo + chunk, n)


def block_forward_hybrid(
    params: ToyBlockParams,
    x: np.ndarray,
    chunk: int,
    tracker: ScratchTracker,
    prealloc: bool = True,
    inplace: bool = False,
) -> np.ndarray:
    """Forward the block with chunked linear stages and full attention.

    Equals block_forward_full exactly in exact arithmetic; in float64 the
    results agree within 1e-9 relative Frobenius error. With `inplace`, a
    stage whose output shape matches its input shape writes back into the
    input buffer chunk by chunk.
    """
    _validate_input(params, x)
    if chunk < 1:
        raise NumericsError("chunk must be >= 1")
    n = x.shape[0]
    h, inter = params.hidden, params.intermediate

    qkv_stage = _ChunkedStage(tracker, "qkv_out", n, 3 * h, prealloc)
    for lo, hi in _chunks(n, chunk):
        np.matmul(x[lo:hi], params.w_qkv, out=qkv_stage.dest(lo, hi))
    qkv = qkv_stage.finish()

    ctx = _attention(qkv, tracker)

    # out projection: (n, h) -> (n, h), in-place eligible
    if inplace:
        attn_out = ctx
        for lo, hi in _chunks(n, chunk):
            tmp = _tracked(tracker, "proj_chunk_tmp", (hi - lo, h))
            np.matmul(ctx[lo:hi], params.w_out, out=tmp)
            ctx[lo:hi] = tmp
            tracker.free("proj_chunk_tmp", tmp.nbytes)
    else:
        proj_stage = _ChunkedStage(tracker, "proj_out", n, h, prealloc)
        for lo, hi in _chunks(n, chunk):
            np.matmul(ctx[lo:hi], params.w_out, out=proj_stage.dest(lo, hi))
        attn_out = proj_stage.finish()

    # gated MLP: gate/up and down run per chunk so only chunk-sized
    # gate/up tensors ever exist; (n, h) -> (n, h), in-place eligible
    mlp_stage = None
    if inplace:
        out = attn_out
    else:
        mlp_stage = _ChunkedStage(tracker, "mlp_out", n, h, prealloc)
    for lo, hi in _chunks(n, chunk):
        gate_up = _tracked(tracker, "mlp_gate_up_chunk", (hi - lo, 2 * inter))
        np.matmul(attn_out[lo:hi], params.w_gate_up, out=gate_up)
        act = _tracked(tracker, "mlp_act_chunk", (hi - lo, inter))
        np.multiply(_silu(gate_up[:, :inter]), gate_up[:, inter:], out=act)
        tracker.free("mlp_gate_up_chunk", gate_up.nbytes)
        dest = attn_out[lo:hi] if inplace else mlp_stage.dest(lo, hi)
        np.matmul(act, params.w_down, out=dest)
        tracker.free("mlp_act_chunk", act.nbytes)
    if not inplace:
        out = mlp_stage.finish()
    return out


def peak_ratio(full: ScratchTracker, hybrid: ScratchTracker) -> float:
    """hybrid peak over full peak; in (0, 1] for chunk < n with prealloc."""
    if full.peak == 0:
        raise NumericsError("full-path tracker recorded no allocations")
    return hybrid.peak / full.peak
