"""Data sources: a Gaussian mixture with closed-form posterior and delimited files.

Labels are 0-based inside the package. Files on disk use 1-based labels.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .core_math import InvalidInputError


class DataFormatError(InvalidInputError):
    """A dataset file line could not be parsed."""


@dataclass
class StreamRecord:
    x: np.ndarray
    y: int


@dataclass
class Batch:
    """Contiguous block of records, stored column-wise for vectorised work."""

    index: int
    xs: np.ndarray
    ys: np.ndarray

    def __len__(self):
        return self.ys.shape[0]

    def records(self) -> list[StreamRecord]:
        return [StreamRecord(x, int(y)) for x, y in zip(self.xs, self.ys)]


@dataclass
class GaussianMixtureSpec:
    """Isotropic mixture ``x | y=k ~ N(means[k], sigma^2 I)`` with class priors."""

    priors: np.ndarray
    means: np.ndarray
    sigma: float = 1.0

    def __post_init__(self):
        self.priors = np.asarray(self.priors, dtype=np.float64)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        if self.priors.ndim != 1 or self.priors.size < 2:
            raise InvalidInputError("need at least two classes")
        if np.any(self.priors < 0) or abs(self.priors.sum() - 1.0) > 1e-9:
            raise InvalidInputError("priors must be nonnegative and sum to 1")
        if self.means.shape[0] != self.priors.size:
            raise InvalidInputError("one mean per class")
        if not np.all(np.isfinite(self.means)):
            raise InvalidInputError("means must be finite")
        if self.sigma <= 0:
            raise InvalidInputError("sigma must be > 0")

    @property
    def n_classes(self) -> int:
        return self.priors.size

    @property
    def n_features(self) -> int:
        return self.means.shape[1]

    @classmethod
    def separated(cls, n_classes: int, n_features: int, separation: float = 3.0,
                  sigma: float = 1.0, priors=None) -> "GaussianMixtureSpec":
        """Means placed ``separation`` apart along coordinate axes.

        With more classes than features the means sit on a circle of radius
        ``separation`` in the first two coordinates instead.
        """
        means = np.zeros((n_classes, n_features))
        if n_classes <= n_features:
            means[np.arange(n_classes), np.arange(n_classes)] = separation
        else:
            if n_features < 2:
                raise InvalidInputError("need d >= 2 when K > d")
            ang = 2 * np.pi * np.arange(n_classes) / n_classes
            means[:, 0] = separation * np.cos(ang)
            means[:, 1] = separation * np.sin(ang)
        if priors is None:
            priors = np.full(n_classes, 1.0 / n_classes)
        return cls(priors, means, sigma)


def gm_sample(spec: GaussianMixtureSpec, rng, n: int):
    """Draw ``n`` i.i.d. pairs; returns ``(xs, ys)`` arrays."""
    if n == 0:
        return np.empty((0, spec.n_features)), np.empty(0, dtype=np.intp)
    ys = rng.choice(spec.n_classes, size=n, p=spec.priors)
    xs = spec.means[ys] + spec.sigma * rng.standard_normal((n, spec.n_features))
    return xs, ys.astype(np.intp)


def gm_records(spec: GaussianMixtureSpec, rng, n: int) -> list[StreamRecord]:
    xs, ys = gm_sample(spec, rng, n)
    return [StreamRecord(x, int(y)) for x, y in zip(xs, ys)]


def gm_posterior(spec: GaussianMixtureSpec, x) -> np.ndarray:
    """Exact Bayes posterior ``P(Y=k | x)`` for one point or a batch."""
    x = np.asarray(x, dtype=np.float64)
    sq = ((x[..., None, :] - spec.means) ** 2).sum(axis=-1)
    with np.errstate(divide="ignore"):
        log_w = np.log(spec.priors) - sq / (2 * spec.sigma ** 2)
    log_w = log_w - log_w.max(axis=-1, keepdims=True)
    w = np.exp(log_w)
    return w / w.sum(axis=-1, keepdims=True)


_SPLIT = re.compile(r"[,\s]+")


def file_stream(path, n_features: int | None = None, n_classes: int | None = None,
                header: bool = False) -> Iterator[StreamRecord]:
    """Yield records from a comma- or whitespace-delimited file.

    Each line holds the features followed by an integer label in ``1..K``.
    Blank lines and ``#`` comments are skipped.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset file not found: {path}")
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if header and lineno == 1:
                continue
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            fields = [f for f in _SPLIT.split(text) if f]
            if n_features is None:
                n_features = len(fields) - 1
            if len(fields) != n_features + 1:
                raise DataFormatError(
                    f"{path}:{lineno}: expected {n_features + 1} fields, got {len(fields)}"
                )
            try:
                x = np.array([float(v) for v in fields[:-1]])
                label = int(fields[-1])
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
            if label < 1 or (n_classes is not None and label > n_classes):
                raise DataFormatError(f"{path}:{lineno}: label {label} out of range")
            yield StreamRecord(x, label - 1)


def load_file(path, n_features=None, n_classes=None, header=False):
    """Read a whole dataset file into ``(xs, ys)`` arrays."""
    recs = list(file_stream(path, n_features, n_classes, header))
    if not recs:
        d = n_features or 0
        return np.empty((0, d)), np.empty(0, dtype=np.intp)
    return np.stack([r.x for r in recs]), np.array([r.y for r in recs], dtype=np.intp)


def batch_iterator(source, batch_size: int, shuffle_buffer: int = 0, rng=None) -> Iterator[Batch]:
    """Group a record iterable into batches; the last batch may be short.

    With ``shuffle_buffer > 0`` records pass through a reservoir of that size
    and leave it in random order (seeded by ``rng``).
    """
    if batch_size < 1:
        raise InvalidInputError("batch_size must be >= 1")
    if shuffle_buffer > 0 and rng is None:
        raise InvalidInputError("shuffling needs a random generator")

    def shuffled():
        buf = []
        for rec in source:
            buf.append(rec)
            if len(buf) >= shuffle_buffer:
                i = int(rng.integers(len(buf)))
                buf[i], buf[-1] = buf[-1], buf[i]
                yield buf.pop()
        order = rng.permutation(len(buf))
        for i in order:
            yield buf[i]

    stream = shuffled() if shuffle_buffer > 0 else iter(source)
    index, chunk = 0, []
    for rec in stream:
        chunk.append(rec)
        if len(chunk) == batch_size:
            yield _make_batch(index, chunk)
            index, chunk = index + 1, []
    if chunk:
        yield _make_batch(index, chunk)


def _make_batch(index, chunk) -> Batch:
    return Batch(index, np.stack([r.x for r in chunk]), np.array([r.y for r in chunk], dtype=np.intp))


class GaussianMixtureSource:
    """Endless i.i.d. batches from a mixture; also exposes the true posterior."""

    def __init__(self, spec: GaussianMixtureSpec, rng):
        self.spec = spec
        self.rng = rng

    n_classes = property(lambda self: self.spec.n_classes)
    n_features = property(lambda self: self.spec.n_features)

    def next_batch(self, index: int, size: int) -> Batch:
        xs, ys = gm_sample(self.spec, self.rng, size)
        return Batch(index, xs, ys)

    def posterior(self, xs) -> np.ndarray:
        return gm_posterior(self.spec, xs)


class ArraySource:
    """Finite dataset replayed in passes, reshuffled before every pass."""

    def __init__(self, xs, ys, n_classes: int, rng, shuffle: bool = True):
        if len(ys) == 0:
            raise InvalidInputError("dataset is empty")
        self.xs, self.ys = np.asarray(xs), np.asarray(ys, dtype=np.intp)
        self.n_classes = n_classes
        self.n_features = self.xs.shape[1]
        self.rng, self.shuffle = rng, shuffle
        self._order = self._new_order()
        self._pos = 0

    def _new_order(self):
        n = self.ys.shape[0]
        return self.rng.permutation(n) if self.shuffle else np.arange(n)

    def next_batch(self, index: int, size: int) -> Batch:
        take = []
        while size > 0:
            if self._pos == self._order.size:
                self._order, self._pos = self._new_order(), 0
            chunk = self._order[self._pos:self._pos + size]
            take.append(chunk)
            self._pos += chunk.size
            size -= chunk.size
        idx = np.concatenate(take)
        return Batch(index, self.xs[idx], self.ys[idx])

    posterior = None
