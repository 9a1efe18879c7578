"""Job-completion-time estimation for prefill-only requests.

A JctProfile is an ordinary-least-squares fit of latency against
(input tokens, cached tokens). The profile powers one scoring mode of
the scheduler; the default scoring is the cache-miss-token proxy, which
needs no fit at all.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class FitError(ValueError):
    """Degenerate sample set: the regression is underdetermined."""


@dataclass(frozen=True)
class JctSample:
    """One profiling observation."""

    n_input: int
    n_cached: int
    latency: float

    def __post_init__(self):
        if not 0 <= self.n_cached <= self.n_input:
            raise ValueError(f"need 0 <= n_cached <= n_input, got {self}")
        if self.latency <= 0:
            raise ValueError(f"latency must be positive, got {self}")


@dataclass(frozen=True)
class JctProfile:
    """Linear latency predictor over (input tokens, cached tokens)."""

    coef_input: float
    coef_cached: float
    intercept: float
    fit_r2: float


def fit(samples: Sequence[JctSample]) -> JctProfile:
    """Least-squares fit of latency on (n_input, n_cached, 1)."""
    if len(samples) < 3:
        raise FitError(f"need at least 3 samples, got {len(samples)}")
    if len({s.n_input for s in samples}) < 2:
        raise FitError("samples must span at least 2 distinct n_input values")
    design = np.array([[s.n_input, s.n_cached, 1.0] for s in samples])
    y = np.array([s.latency for s in samples])
    if np.linalg.matrix_rank(design) < 3:
        raise FitError("collinear samples: design matrix is rank-deficient")
    coeffs, _, _, _ = np.linalg.lstsq(design, y, rcond=None)
    residual = y - design @ coeffs
    ss_res = float(residual @ residual)
    centered = y - y.mean()
    ss_tot = float(centered @ centered)
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return JctProfile(
        coef_input=float(coeffs[0]),
        coef_cached=float(coeffs[1]),
        intercept=float(coeffs[2]),
        fit_r2=min(1.0, max(0.0, r2)),
    )


def get_jct(profile: JctProfile, n_input: int, n_cached: int) -> float:
    """Predicted completion seconds, clamped below at zero."""
    if not 0 <= n_cached <= n_input:
        raise ValueError(f"need 0 <= n_cached <= n_input, got ({n_input}, {n_cached})")
    est = profile.coef_input * n_input + profile.coef_cached * n_cached + profile.intercept
    return max(0.0, est)


def proxy_miss(n_input: int, n_cached: int) -> int:
    """Cache-miss tokens, the default stand-in for the JCT."""
    if not 0 <= n_cached <= n_input:
        raise ValueError(f"need 0 <= n_cached <= n_input, got ({n_input}, {n_cached})")
    return n_input - n_cached


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Sample Pearson correlation coefficient."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.shape != ys.shape or xs.ndim != 1 or len(xs) < 2:
        raise ValueError("need two equal-length sequences of at least 2 values")
    xc = xs - xs.mean()
    yc = ys - ys.mean()
    denom = np.sqrt((xc @ xc) * (yc @ yc))
    if denom == 0.0:
        raise ValueError("zero variance in at least one input")
    return float(np.clip((xc @ yc) / denom, -1.0, 1.0))


def profile_grid(max_input: int, step: int = 1000) -> list[tuple[int, int]]:
    """(n_input, n_cached) pairs covering the input range at `step` granularity."""
    pairs = []
    for n in range(step, max_input + 1, step):
        for nc in range(0, n + 1, step):
            pairs.append((n, nc))
    return pairs


def generate_samples(
    latency_fn,
    max_input: int,
    step: int = 1000,
    noise_std: float = 0.0,
    seed: int = 0,
) -> list[JctSample]:
    """Profile samples from a latency model over the standard grid.

    `latency_fn(n_input, n_cached)` is typically the execution model;
    Gaussian noise is off by default so profiling stays deterministic.
    """
    rng = np.random.default_rng(seed)
    samples = []
    for n, nc in profile_grid(max_input, step):
        latency = latency_fn(n, nc)
        if noise_std > 0.0:
            latency = max(1e-12, latency + rng.normal(0.0, noise_std))
        samples.append(JctSample(n_input=n, n_cached=nc, latency=latency))
    return samples


def save_profile(profile: JctProfile, path: str | Path):
    text = (
        f"coef_input = {profile.coef_input!r}\n"
        f"coef_cached = {profile.coef_cached!r}\n"
        f"intercept = {profile.intercept!r}\n"
        f"fit_r2 = {profile.fit_r2!r}\n"
    )
    Path(path).write_text(text, encoding="utf-8")


def load_profile(path: str | Path) -> JctProfile:
    fields = {}
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, _, value = line.partition("=")
        fields[key.strip()] = float(value.strip())
    try:
        return JctProfile(**fields)
    except TypeError as exc:
        raise FitError(f"{path}: malformed profile file") from exc
