"""Score streams: synthetic generators and CSV ingestion.

Every generator draws row by row from a per-trial Philox stream, so generating
a stream in time blocks yields exactly the same numbers as generating it in
one go.  The engine relies on this to keep memory flat for classification
streams with many candidates.
"""

from __future__ import annotations

import csv
import math
from collections.abc import Iterator
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
from numpy.typing import NDArray

from ..core import CANDIDATE_ATOL, ConfigurationError, Mode, ScoreStream

STREAM_TAG = 0x5C0E

Generator = Literal["uniform", "beta", "gaussian_clipped", "classification_softmax_like"]

_DEFAULT_PARAMS: dict[str, dict[str, float]] = {
    "uniform": {"low": 0.0, "high": 1.0},
    "beta": {"a": 2.0, "b": 5.0},
    "gaussian_clipped": {"mu": 0.0, "sigma": 0.25},
    "classification_softmax_like": {"margin": 3.0, "spread": 1.0, "difficulty": 1.5, "temperature": 1.0},
}


class IngestionError(ValueError):
    """A score file is malformed or violates the score range."""


@dataclass(frozen=True)
class StreamSpec:
    """Where scores come from.

    Generator parameters are given as fractions of the score bound ``B`` where
    they are lengths (``low``, ``high``, ``mu``, ``sigma``).
    """

    source: Literal["file", "synthetic"] = "synthetic"
    path: str | None = None
    generator: Generator = "uniform"
    params: dict[str, float] = field(default_factory=dict)
    mode: Mode = "regression"
    n_candidates: int = 100

    def __post_init__(self) -> None:
        if self.source == "file":
            if not self.path:
                raise ConfigurationError("file stream needs a path")
            return
        if self.source != "synthetic":
            raise ConfigurationError(f"unknown stream source {self.source!r}")
        if self.generator not in _DEFAULT_PARAMS:
            raise ConfigurationError(f"unknown generator {self.generator!r}")
        unknown = set(self.params) - set(_DEFAULT_PARAMS[self.generator])
        if unknown:
            raise ConfigurationError(f"unknown {self.generator} parameters {sorted(unknown)}")
        want = "classification" if self.generator == "classification_softmax_like" else "regression"
        if self.mode != want:
            raise ConfigurationError(f"generator {self.generator} produces {want} streams, mode is {self.mode}")
        p = self.resolved_params()
        if self.generator == "uniform" and not 0.0 <= p["low"] <= p["high"] <= 1.0:
            raise ConfigurationError("uniform generator needs 0 <= low <= high <= 1")
        if self.generator == "beta" and not (p["a"] > 0 and p["b"] > 0):
            raise ConfigurationError("beta generator needs a, b > 0")
        if self.generator == "gaussian_clipped" and not p["sigma"] > 0:
            raise ConfigurationError("gaussian_clipped generator needs sigma > 0")
        if self.generator == "classification_softmax_like":
            if self.n_candidates < 2:
                raise ConfigurationError("classification generator needs at least 2 candidates")
            if not p["temperature"] > 0:
                raise ConfigurationError("temperature must be positive")

    def resolved_params(self) -> dict[str, float]:
        return {**_DEFAULT_PARAMS[self.generator], **self.params}


def stream_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, STREAM_TAG])))


def _draw_rows(spec: StreamSpec, rng: np.random.Generator, n: int, B: float):
    p = spec.resolved_params()
    g = spec.generator
    if g == "uniform":
        return B * (p["low"] + (p["high"] - p["low"]) * rng.random(n)), None
    if g == "beta":
        return B * rng.beta(p["a"], p["b"], n), None
    if g == "gaussian_clipped":
        return np.minimum(np.abs(B * (p["mu"] + p["sigma"] * rng.standard_normal(n))), B), None
    K = spec.n_candidates
    noise = rng.standard_normal((n, K + 1))
    logits = p["spread"] * noise[:, :K]
    logits[:, 0] += p["margin"] + p["difficulty"] * noise[:, K]
    logits /= p["temperature"]
    logits -= logits.max(axis=1, keepdims=True)
    probs = np.exp(logits)
    probs /= probs.sum(axis=1, keepdims=True)
    cands = np.clip(B * (1.0 - probs), 0.0, B)
    return cands[:, 0].copy(), cands


def stream_blocks(spec: StreamSpec, seed: int, T: int, B: float, block: int = 1000,
                  fixed: ScoreStream | None = None) -> Iterator[tuple[NDArray, NDArray | None]]:
    """Yield ``(scores, candidates)`` blocks of at most ``block`` rounds.

    The true label of the classification generator sits in candidate column 0.
    """
    if spec.source == "file":
        if fixed is None:
            raise ConfigurationError("file stream must be loaded before iterating")
        for t0 in range(0, T, block):
            cands = None if fixed.candidates is None else fixed.candidates[t0:t0 + block]
            yield fixed.scores[t0:t0 + block], cands
        return
    rng = stream_rng(seed)
    for t0 in range(0, T, block):
        yield _draw_rows(spec, rng, min(block, T - t0), B)


def synth_stream(spec: StreamSpec, seed: int, T: int, B: float) -> ScoreStream:
    """Materialise a synthetic stream of ``T`` rounds for trial seed ``seed``."""
    if spec.source != "synthetic":
        raise ConfigurationError("synth_stream needs a synthetic stream spec")
    scores, cands = _draw_rows(spec, stream_rng(seed), T, B)
    return ScoreStream(scores, cands, spec.mode)


def load_stream(spec: StreamSpec, B: float) -> ScoreStream:
    """Read a score CSV.

    Regression files have columns ``t,s_true``; classification files add
    candidate columns ``c1..cK``.  A column named ``s`` (as written in trace
    files) is accepted in place of ``s_true``; other columns are ignored.
    """
    if spec.source != "file" or not spec.path:
        raise ConfigurationError("load_stream needs a file stream spec")
    path = Path(spec.path)
    try:
        fh = path.open(newline="")
    except OSError as exc:
        raise IngestionError(f"{path}: cannot open ({exc.strerror})") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise IngestionError(f"{path}: empty file") from None
        if "t" not in header:
            raise IngestionError(f"{path}: header lacks a 't' column")
        s_col = "s_true" if "s_true" in header else "s" if "s" in header else None
        if s_col is None:
            raise IngestionError(f"{path}: header lacks an 's_true' column")
        c_cols = [i for i, h in enumerate(header) if h.startswith("c") and h[1:].isdigit()]
        c_cols.sort(key=lambda i: int(header[i][1:]))
        if spec.mode == "classification" and not c_cols:
            raise IngestionError(f"{path}: classification file needs candidate columns c1..cK")
        i_t, i_s = header.index("t"), header.index(s_col)
        scores: list[float] = []
        cands: list[list[float]] = []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not x.strip() for x in row):
                continue
            if len(row) != len(header):
                raise IngestionError(f"{path}:{line_no}: expected {len(header)} fields, got {len(row)}")
            try:
                t = int(row[i_t])
                s = float(row[i_s])
                c = [float(row[i]) for i in c_cols] if spec.mode == "classification" else []
            except ValueError as exc:
                raise IngestionError(f"{path}:{line_no}: {exc}") from None
            if t != len(scores) + 1:
                raise IngestionError(f"{path}:{line_no}: expected t={len(scores) + 1}, got {t}")
            if not (math.isfinite(s) and 0.0 <= s <= B):
                raise IngestionError(f"{path}:{line_no}: round {t} score {s} outside [0, {B}]")
            if c:
                if any(not (0.0 <= x <= B) for x in c):
                    raise IngestionError(f"{path}:{line_no}: round {t} candidate outside [0, {B}]")
                if not any(abs(x - s) <= CANDIDATE_ATOL for x in c):
                    raise IngestionError(f"{path}:{line_no}: round {t} has no candidate equal to s_true")
            scores.append(s)
            cands.append(c)
    if not scores:
        raise IngestionError(f"{path}: no data rows")
    if spec.mode == "classification":
        return ScoreStream(np.array(scores), np.array(cands), "classification")
    return ScoreStream(np.array(scores))


def write_stream(stream: ScoreStream, path: str | Path) -> None:
    """Write a stream in the format :func:`load_stream` reads."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        if stream.candidates is None:
            w.writerow(["t", "s_true"])
            for i, s in enumerate(stream.scores.tolist(), start=1):
                w.writerow([i, repr(s)])
        else:
            K = stream.candidates.shape[1]
            w.writerow(["t", "s_true", *[f"c{k}" for k in range(1, K + 1)]])
            for i, (s, c) in enumerate(zip(stream.scores.tolist(), stream.candidates.tolist()), start=1):
                w.writerow([i, repr(s), *map(repr, c)])

