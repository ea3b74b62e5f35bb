"""Censored observations, CSV ingestion and truncation-time handling."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

TAU_MARGIN = 1.05

_INF_TOKENS = {"", "inf", "+inf", "infinity", "na", "nan"}


class DataError(ValueError):
    """Raised for malformed input data."""


class Censoring(str, Enum):
    EXACT = "exact"
    LEFT = "left"
    INTERVAL = "interval"
    RIGHT = "right"


@dataclass(frozen=True)
class Observation:
    """One subject: event time in ``(y1, y2]`` (``y1 == y2`` when exact)."""

    delta: int
    x: tuple[float, ...]
    y1: float
    y2: float

    def __post_init__(self):
        if self.delta not in (0, 1):
            raise DataError(f"delta must be 0 or 1, got {self.delta!r}")
        if not self.y1 >= 0 or math.isinf(self.y1):
            raise DataError(f"y1 must be finite and nonnegative, got {self.y1!r}")
        if self.delta == 0 and not (self.y1 == self.y2 and math.isfinite(self.y2)):
            raise DataError(f"exact observation needs y1 == y2 < inf, got ({self.y1}, {self.y2})")
        if self.delta == 1 and not self.y1 < self.y2:
            raise DataError(f"censored observation needs y1 < y2, got ({self.y1}, {self.y2})")


def classify(obs: Observation) -> Censoring:
    if obs.delta == 0:
        return Censoring.EXACT
    if math.isinf(obs.y2):
        return Censoring.RIGHT
    if obs.y1 == 0:
        return Censoring.LEFT
    return Censoring.INTERVAL


@dataclass(frozen=True, eq=False)
class Dataset:
    """Column-oriented collection of observations sharing one covariate dimension.

    ``tau`` is ``None`` until :func:`select_tau` is applied.  When
    ``rescaled`` is true, times are in units of ``tau`` (so finite endpoints
    lie in ``[0, 1]``) and ``tau`` still records the original scale.
    """

    y1: np.ndarray
    y2: np.ndarray
    delta: np.ndarray
    x: np.ndarray
    covariate_names: tuple[str, ...] = ()
    tau: float | None = None
    rescaled: bool = False

    def __post_init__(self):
        y1 = np.asarray(self.y1, dtype=float)
        y2 = np.asarray(self.y2, dtype=float)
        delta = np.asarray(self.delta, dtype=int)
        x = np.asarray(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1) if x.size else x.reshape(y1.size, 0)
        if not (y1.shape == y2.shape == delta.shape == (x.shape[0],)):
            raise DataError("column lengths disagree")
        for a in (y1, y2, delta, x):
            a.setflags(write=False)
        object.__setattr__(self, "y1", y1)
        object.__setattr__(self, "y2", y2)
        object.__setattr__(self, "delta", delta)
        object.__setattr__(self, "x", x)
        if not self.covariate_names:
            names = tuple(f"x{i + 1}" for i in range(x.shape[1]))
            object.__setattr__(self, "covariate_names", names)
        elif len(self.covariate_names) != x.shape[1]:
            raise DataError("covariate_names length does not match covariate dimension")

    @classmethod
    def from_observations(
        cls, observations: Iterable[Observation], covariate_names: Sequence[str] = ()
    ) -> "Dataset":
        obs = list(observations)
        if not obs:
            raise DataError("no observations")
        d = len(obs[0].x)
        if any(len(o.x) != d for o in obs):
            raise DataError("observations have differing covariate dimensions")
        return cls(
            y1=np.array([o.y1 for o in obs]),
            y2=np.array([o.y2 for o in obs]),
            delta=np.array([o.delta for o in obs]),
            x=np.array([o.x for o in obs], dtype=float).reshape(len(obs), d),
            covariate_names=tuple(covariate_names),
        )

    @property
    def n(self) -> int:
        return self.y1.size

    @property
    def dim(self) -> int:
        return self.x.shape[1]

    @property
    def observations(self) -> list[Observation]:
        return [
            Observation(int(self.delta[i]), tuple(float(v) for v in self.x[i]), float(self.y1[i]), float(self.y2[i]))
            for i in range(self.n)
        ]

    @property
    def exact(self) -> np.ndarray:
        return self.delta == 0

    def max_finite_endpoint(self) -> float:
        ends = np.concatenate([self.y1, self.y2[np.isfinite(self.y2)]])
        return float(ends.max())

    def class_counts(self) -> dict[Censoring, int]:
        counts = {c: 0 for c in Censoring}
        for o in self.observations:
            counts[classify(o)] += 1
        return counts

    def with_covariates(self, x: np.ndarray, names: Sequence[str] = ()) -> "Dataset":
        return replace(self, x=x, covariate_names=tuple(names))


def _parse_float(text: str, lineno: int, column: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise DataError(f"line {lineno}: cannot parse {column}={text!r} as a number") from None


def parse_csv(path: str | Path, covariate_columns: Sequence[str] | None = None) -> Dataset:
    """Read observations from a CSV file with columns ``y1``, ``y2``, optional ``delta``.

    All other columns are covariates unless ``covariate_columns`` restricts
    them.  An empty ``y2`` or one of ``inf``/``Inf`` marks right censoring.
    """
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError("no observations") from None
        for col in ("y1", "y2"):
            if col not in header:
                raise DataError(f"missing required column {col!r}")
        if covariate_columns is None:
            covariate_columns = [h for h in header if h not in ("y1", "y2", "delta")]
        missing = [c for c in covariate_columns if c not in header]
        if missing:
            raise DataError(f"missing covariate column(s): {', '.join(missing)}")
        idx = {h: i for i, h in enumerate(header)}
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
            y1 = _parse_float(row[idx["y1"]].strip(), lineno, "y1")
            raw2 = row[idx["y2"]].strip()
            y2 = math.inf if raw2.lower() in _INF_TOKENS else _parse_float(raw2, lineno, "y2")
            if "delta" in idx and row[idx["delta"]].strip() != "":
                delta = int(_parse_float(row[idx["delta"]].strip(), lineno, "delta"))
            else:
                delta = 0 if y1 == y2 else 1
            x = tuple(_parse_float(row[idx[c]].strip(), lineno, c) for c in covariate_columns)
            try:
                rows.append(Observation(delta, x, y1, y2))
            except DataError as exc:
                raise DataError(f"line {lineno}: {exc}") from None
    if not rows:
        raise DataError("no observations")
    return Dataset.from_observations(rows, covariate_columns)


def write_csv(dataset: Dataset, path: str | Path) -> None:
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["y1", "y2", "delta", *dataset.covariate_names])
        for i in range(dataset.n):
            y2 = "inf" if math.isinf(dataset.y2[i]) else repr(float(dataset.y2[i]))
            w.writerow([repr(float(dataset.y1[i])), y2, int(dataset.delta[i]), *(repr(float(v)) for v in dataset.x[i])])


def select_tau(dataset: Dataset, user_tau: float | None = None) -> Dataset:
    """Attach the truncation time: ``user_tau`` or ``1.05`` times the largest finite endpoint."""
    if dataset.rescaled:
        raise DataError("select_tau expects a dataset on its original time scale")
    ymax = dataset.max_finite_endpoint()
    if user_tau is not None:
        if not user_tau > ymax:
            raise DataError(f"tau={user_tau} must exceed the largest finite endpoint {ymax}")
        tau = float(user_tau)
    else:
        if ymax <= 0:
            raise DataError("all finite endpoints are zero; cannot choose tau")
        tau = TAU_MARGIN * ymax
    return replace(dataset, tau=tau)


def rescale(dataset: Dataset) -> Dataset:
    """Divide all times by ``tau``.  A no-op on an already rescaled dataset."""
    if dataset.rescaled:
        return dataset
    if dataset.tau is None:
        raise DataError("select_tau must be applied before rescale")
    t = dataset.tau
    return replace(dataset, y1=dataset.y1 / t, y2=dataset.y2 / t, rescaled=True)


def unscale(dataset: Dataset) -> Dataset:
    if not dataset.rescaled:
        return dataset
    t = dataset.tau
    return replace(dataset, y1=dataset.y1 * t, y2=dataset.y2 * t, rescaled=False)
