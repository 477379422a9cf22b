"""Laplace-based randomization primitives, privacy accounting and the
max-information bound."""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

Label = Union[int, str]

_MASK64 = (1 << 64) - 1


class EmptyCandidates(ValueError):
    pass


class NoiselessBudget(ValueError):
    pass


def _label_int(label: Label) -> int:
    if isinstance(label, str):
        return zlib.crc32(label.encode()) | (1 << 40)
    return int(label) & _MASK64


class RngStream:
    """Reproducible uniform stream keyed by ``(seed, stream_id)``.

    Backed by numpy's counter-based Philox generator.  Two streams built from
    the same pair yield identical draws; :meth:`child` derives independent
    substreams from labels such as ``("trial", 3)``.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed) & _MASK64
        self.stream_id = int(stream_id) & _MASK64
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=(self.stream_id,))
        self._gen = np.random.Generator(np.random.Philox(ss))

    def child(self, *labels: Label) -> "RngStream":
        ss = np.random.SeedSequence(
            entropy=self.seed, spawn_key=(self.stream_id, *(_label_int(x) for x in labels))
        )
        sid = int(ss.generate_state(1, dtype=np.uint64)[0])
        return RngStream(self.seed, sid)

    def uniform(self) -> float:
        """A draw from the open interval (0, 1)."""
        while True:
            u = self._gen.random()
            if u > 0.0:
                return u

    def uniforms(self, k: int) -> np.ndarray:
        u = self._gen.random(k)
        while np.any(u == 0.0):
            u[u == 0.0] = self._gen.random(int(np.sum(u == 0.0)))
        return u

    def integers(self, high: int) -> int:
        return int(self._gen.integers(high))

    def normal(self, size) -> np.ndarray:
        return self._gen.standard_normal(size)

    def permutation(self, k: int) -> np.ndarray:
        return self._gen.permutation(k)

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id})"


def laplace_from_uniform(u, scale: float):
    """Inverse Laplace CDF: -scale * sgn(u - 1/2) * ln(1 - 2|u - 1/2|)."""
    c = np.asarray(u, dtype=float) - 0.5
    out = -scale * np.sign(c) * np.log1p(-2.0 * np.abs(c))
    return float(out) if out.ndim == 0 else out


def laplace(rng: RngStream, scale: float) -> float:
    if scale < 0:
        raise ValueError("scale must be non-negative")
    if scale == 0:
        return 0.0
    return laplace_from_uniform(rng.uniform(), scale)


def laplace_vector(rng: RngStream, scale: float, k: int) -> np.ndarray:
    if scale < 0:
        raise ValueError("scale must be non-negative")
    if scale == 0:
        return np.zeros(k)
    return laplace_from_uniform(rng.uniforms(k), scale)


def noisy_argmax(values: Sequence[float], noise: np.ndarray) -> int:
    """argmax of values + noise, lowest index on exact ties."""
    total = np.asarray(values, dtype=float) + noise
    return int(np.argmax(total))


def report_noisy_max(values: Sequence[float], scale: float, rng: RngStream) -> int:
    if len(values) == 0:
        raise EmptyCandidates("report_noisy_max needs at least one candidate")
    vals = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(vals)):
        raise ValueError("candidate values must be finite")
    return noisy_argmax(vals, laplace_vector(rng, scale, len(vals)))


class AboveThreshold:
    """Sparse-vector style test: one noisy threshold, fresh noise per query.

    ``query(q)`` reports whether ``q + eta > threshold + nu``.
    """

    def __init__(self, threshold: float, noise_scale_nu: float, noise_scale_eta: float, rng: RngStream):
        self.threshold = threshold
        self.noise_scale_eta = noise_scale_eta
        self.rng = rng
        self.nu = laplace(rng, noise_scale_nu)
        self.noisy_threshold = threshold + self.nu
        self.last_eta = 0.0

    def query(self, q: float) -> bool:
        self.last_eta = laplace(self.rng, self.noise_scale_eta)
        return q + self.last_eta > self.noisy_threshold


def above_threshold_session(threshold: float, noise_scale_nu: float, noise_scale_eta: float,
                            rng: RngStream) -> AboveThreshold:
    return AboveThreshold(threshold, noise_scale_nu, noise_scale_eta, rng)


@dataclass(frozen=True)
class PrivacyBudget:
    """Privacy parameters for noisy search.

    ``tau`` is the local-score sensitivity.  ``noiseless=True`` is the
    infinite-epsilon mode where every noise draw is zero.
    """

    eps_score: float = math.inf
    eps_thresh: float = math.inf
    e_max: int = 10
    tau: float = 1.0
    noiseless: bool = False

    def __post_init__(self):
        if self.e_max < 0 or int(self.e_max) != self.e_max:
            raise ValueError("e_max must be a non-negative integer")
        if not self.noiseless:
            if not (self.eps_score > 0 and self.eps_thresh > 0):
                raise ValueError("eps_score and eps_thresh must be positive")
            if not (math.isfinite(self.eps_score) and math.isfinite(self.eps_thresh)):
                raise ValueError("use noiseless=True for infinite epsilon")
            if not self.tau > 0:
                raise ValueError("tau must be positive")

    @classmethod
    def plain(cls, e_max: int = 10) -> "PrivacyBudget":
        return cls(e_max=e_max, noiseless=True)

    @classmethod
    def default_schedule(cls, n: int, tau: float, e_max: int = 10) -> "PrivacyBudget":
        """eps_score = 1/sqrt(n), eps_thresh = e_max * eps_score."""
        eps = 1.0 / math.sqrt(n)
        return cls(eps_score=eps, eps_thresh=e_max * eps, e_max=e_max, tau=tau)

    def with_tau(self, tau: float) -> "PrivacyBudget":
        return PrivacyBudget(self.eps_score, self.eps_thresh, self.e_max, tau, self.noiseless)

    # noise scales used by the greedy pass
    def _scale(self, mult: float, eps: float) -> float:
        return 0.0 if self.noiseless else mult * self.tau / eps

    @property
    def score_scale(self) -> float:
        return self._scale(4.0, self.eps_score)

    @property
    def threshold_scale(self) -> float:
        return self._scale(4.0, self.eps_thresh)

    @property
    def query_scale(self) -> float:
        return self._scale(8.0, self.eps_thresh)


def total_epsilon(b: PrivacyBudget, mode: str = "ges") -> float:
    """Overall privacy level: 2 eps_thresh + 2 e_max eps_score for greedy
    search, or ``eps_score`` alone for one-shot exact selection."""
    if b.noiseless:
        raise NoiselessBudget("noiseless runs carry no finite privacy guarantee")
    if mode == "ges":
        return 2 * b.eps_thresh + 2 * b.e_max * b.eps_score
    if mode == "exact":
        return b.eps_score
    raise ValueError(f"unknown mode {mode!r}")


def max_info_bound(n: int, eps: float, gamma: float, log_arg_two: bool = True) -> float:
    """Upper bound on gamma-approximate max-information of an eps-DP output.

    ``n/2 eps^2 + eps sqrt(n log(c/gamma) / 2)`` with ``c = 2`` by default and
    ``c = 1`` when ``log_arg_two`` is false.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if not eps >= 0:
        raise ValueError("eps must be non-negative")
    if not 0 < gamma < 1:
        raise ValueError("gamma must lie in (0, 1)")
    c = 2.0 if log_arg_two else 1.0
    return 0.5 * n * eps * eps + eps * math.sqrt(n * math.log(c / gamma) / 2)


@dataclass(frozen=True)
class MaxInfoBound:
    i_bound: float
    gamma: float

    def __post_init__(self):
        if self.i_bound < 0:
            raise ValueError("max-information bound must be non-negative")

    @classmethod
    def from_privacy(cls, n: int, eps: float, gamma: float, log_arg_two: bool = True) -> "MaxInfoBound":
        return cls(max_info_bound(n, eps, gamma, log_arg_two), gamma)
