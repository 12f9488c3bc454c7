"""Loss oracles that stand in for proxy-model training.

The synthetic oracle maps mixture weights to per-group losses with an
exponential-decay family: loss_i(w) = v_i * exp(-s * w_i). Adding data
from a group has diminishing returns, the aggregate is strictly convex on
the simplex for s > 0, and the minimizer has a closed form, which makes
the oracle a ground-truth anchor for the weight-search tests. The file
oracle replays externally produced trials and refuses to interpolate.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class OracleEval:
    per_group: np.ndarray
    aggregate: float


def _weight_vector(w, m: int) -> np.ndarray:
    vec = np.asarray(getattr(w, "w", w), dtype=np.float64)
    if vec.shape != (m,):
        raise DataError(f"weight vector has {vec.shape} entries, oracle expects {m}")
    return vec


@dataclass(frozen=True)
class SyntheticOracle:
    """Closed-form per-group losses v_i * exp(-s * w_i), optionally noisy."""

    v: tuple[float, ...]
    s: float
    noise_sd: float = 0.0
    seed: int = 0
    names: tuple[str, ...] = field(default=())
    grouping: str = "oracle"

    def __post_init__(self):
        if any(x <= 0 for x in self.v):
            raise DataError("oracle group values v must be positive")
        if self.s < 0:
            raise DataError("saturation rate s must be >= 0")
        if self.noise_sd < 0:
            raise DataError("noise_sd must be >= 0")
        if not self.names:
            object.__setattr__(self, "names", tuple(f"g{i}" for i in range(len(self.v))))
        if len(self.names) != len(self.v):
            raise DataError("names and v lengths disagree")

    @property
    def m(self) -> int:
        return len(self.v)

    def eval(self, w) -> OracleEval:
        vec = _weight_vector(w, self.m)
        losses = np.asarray(self.v, dtype=np.float64) * np.exp(-self.s * vec)
        if self.noise_sd > 0:
            digest = hashlib.blake2b(vec.tobytes(), digest_size=8).digest()
            key = int.from_bytes(digest, "little")
            rng = np.random.default_rng(np.random.SeedSequence([self.seed, key]))
            losses = losses + rng.normal(0.0, self.noise_sd, size=self.m)
        if not np.all(np.isfinite(losses)):
            raise DataError("oracle produced non-finite losses")
        return OracleEval(per_group=losses, aggregate=float(losses.sum()))

    def to_json(self) -> dict:
        return {
            "m": self.m,
            "v": list(self.v),
            "s": self.s,
            "noise_sd": self.noise_sd,
            "seed": self.seed,
            "names": list(self.names),
            "grouping": self.grouping,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "SyntheticOracle":
        v = tuple(float(x) for x in obj["v"])
        if "m" in obj and int(obj["m"]) != len(v):
            raise DataError("oracle spec: m does not match len(v)")
        return cls(
            v=v,
            s=float(obj["s"]),
            noise_sd=float(obj.get("noise_sd", 0.0)),
            seed=int(obj.get("seed", 0)),
            names=tuple(obj["names"]) if "names" in obj else (),
            grouping=str(obj.get("grouping", "oracle")),
        )


def load_oracle(path: str | Path) -> SyntheticOracle:
    with open(path, "r", encoding="utf-8") as fh:
        return SyntheticOracle.from_json(json.load(fh))


def save_oracle(oracle: SyntheticOracle, path: str | Path) -> None:
    from .ioutil import atomic_open

    with atomic_open(path, "w") as fh:
        json.dump(oracle.to_json(), fh, sort_keys=True)
        fh.write("\n")


def true_optimum(oracle: SyntheticOracle):
    """Closed-form minimizer of the aggregate loss on the simplex.

    Stationarity gives w_i* = max(0, (ln(v_i * s) - ln(lam)) / s) with the
    multiplier lam fixed by sum(w*) = 1; lam is found by bisection. Only
    defined for the noiseless, strictly convex case (s > 0, noise_sd = 0).
    """
    from .mixing import MixtureWeights

    if oracle.noise_sd > 0:
        raise DataError("true_optimum requires noise_sd = 0")
    if oracle.s <= 0:
        raise DataError("true_optimum requires s > 0")
    v = np.asarray(oracle.v, dtype=np.float64)
    s = float(oracle.s)
    log_vs = np.log(v * s)

    def total(log_lam: float) -> float:
        return float(np.maximum(0.0, (log_vs - log_lam) / s).sum())

    hi = float(log_vs.max())            # total(hi) = 0
    lo = hi - s                         # largest coordinate alone reaches 1
    while total(lo) < 1.0:
        lo -= s
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if total(mid) >= 1.0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15:
            break
    log_lam = 0.5 * (lo + hi)
    w = np.maximum(0.0, (log_vs - log_lam) / s)
    w = w / w.sum()
    return MixtureWeights(grouping=oracle.grouping, names=oracle.names, w=w)


QUANT_DECIMALS = 6


def _quantize(vec: np.ndarray) -> tuple[float, ...]:
    return tuple(round(float(x), QUANT_DECIMALS) for x in vec)


class FileOracle:
    """Replays per-group losses recorded in a trials JSONL file.

    Lookups are exact on weight vectors quantized to 6 decimals; an
    unrecorded vector is an error, never an interpolation, so surrogate
    bugs cannot masquerade as oracle truth.
    """

    def __init__(self, names: Sequence[str], grouping: str,
                 table: Mapping[tuple[float, ...], np.ndarray]):
        self.names = tuple(names)
        self.grouping = grouping
        self._table = dict(table)

    @property
    def m(self) -> int:
        return len(self.names)

    @classmethod
    def from_trials(cls, trials) -> "FileOracle":
        trials = list(trials)
        if not trials:
            raise DataError("file oracle needs at least one trial")
        names = trials[0].weights.names
        grouping = trials[0].weights.grouping
        table = {}
        for trial in trials:
            if trial.weights.names != names:
                raise DataError("trials mix different group name sets")
            table[_quantize(trial.weights.w)] = np.asarray(trial.per_group_loss, np.float64)
        return cls(names, grouping, table)

    def eval(self, w) -> OracleEval:
        vec = _weight_vector(w, self.m)
        key = _quantize(vec)
        if key not in self._table:
            raise DataError(
                f"weight vector {key} not recorded in the trials file; "
                "the file oracle does not interpolate"
            )
        losses = self._table[key]
        return OracleEval(per_group=losses, aggregate=float(losses.sum()))


def simplex_grid(m: int, step: float = 0.05) -> np.ndarray:
    """All weight vectors on the simplex whose coordinates are multiples
    of ``step``; used as an exhaustive search oracle in tests."""
    units = round(1.0 / step)
    if abs(units * step - 1.0) > 1e-9:
        raise DataError("step must divide 1 evenly")
    rows: list[tuple[int, ...]] = []

    def rec(prefix: tuple[int, ...], remaining: int, slots: int):
        if slots == 1:
            rows.append(prefix + (remaining,))
            return
        for take in range(remaining + 1):
            rec(prefix + (take,), remaining - take, slots - 1)

    rec((), units, m)
    return np.asarray(rows, dtype=np.float64) / units
