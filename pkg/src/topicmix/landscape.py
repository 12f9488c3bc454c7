"""Loss-landscape probing of a fitted surrogate: random-probe summaries
(lowest-half average as a robust minimum) and 2-D slice grids for
plotting.

Probes draw from a wider candidate distribution than trial sampling
(lower Dirichlet concentration, tau=0.5 by default) to cover the simplex
corners.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .mixing import MixtureWeights, SurrogateModel, _dirichlet_matrix

PROBE_TAU = 0.5
SLICE_EPS = 1e-9
SLICE_MODES = ("rescale", "freeze")


@dataclass(frozen=True)
class ProbeResult:
    n: int
    seed: int
    losses: np.ndarray
    lowest_half_mean: float
    min: float
    mean: float

    def to_json(self) -> dict:
        return {"n": self.n, "seed": self.seed,
                "lowest_half_mean": self.lowest_half_mean,
                "min": self.min, "mean": self.mean}


def probe(model: SurrogateModel, base: MixtureWeights, n: int,
          seed: int = 0, tau: float = PROBE_TAU) -> ProbeResult:
    """Predict losses for n random mixtures; the headline statistic is the
    mean of the floor(n/2) smallest predictions."""
    if n < 2:
        raise DataError("probe needs n >= 2")
    draws = _dirichlet_matrix(base, n, tau, seed)
    losses = np.asarray(model.predict(draws), dtype=np.float64)
    ordered = np.sort(losses)
    lowest_half = ordered[: n // 2]
    return ProbeResult(
        n=n,
        seed=seed,
        losses=losses,
        lowest_half_mean=float(lowest_half.mean()),
        min=float(ordered[0]),
        mean=float(losses.mean()),
    )


@dataclass(frozen=True)
class SliceGrid:
    group_i: str
    group_j: str
    axis: np.ndarray           # shared grid coordinates for both axes
    loss: np.ndarray           # (steps, steps), NaN where infeasible

    def csv(self) -> str:
        out = io.StringIO()
        out.write("wi,wj,loss\n")
        for a, wi in enumerate(self.axis):
            for b, wj in enumerate(self.axis):
                value = self.loss[a, b]
                cell = "" if np.isnan(value) else f"{value:.6f}"
                out.write(f"{wi:.6f},{wj:.6f},{cell}\n")
        return out.getvalue()


def slice_grid(model: SurrogateModel, base: MixtureWeights, i: str | int,
               j: str | int, steps: int = 25, mode: str = "rescale") -> SliceGrid:
    """Predicted loss over a (w_i, w_j) grid.

    mode="rescale" (default): off-slice groups keep their base
    proportions, rescaled to the mass 1 - w_i - w_j. mode="freeze":
    off-slice groups stay at their base values and the whole vector is
    renormalized. Cells with w_i + w_j > 1 are infeasible and left empty.
    """
    if steps < 2:
        raise DataError("slice grid needs steps >= 2")
    if mode not in SLICE_MODES:
        raise DataError(f"unknown slice mode {mode!r}; expected one of {SLICE_MODES}")
    names = list(base.names)
    gi = names.index(i) if isinstance(i, str) else int(i)
    gj = names.index(j) if isinstance(j, str) else int(j)
    if gi == gj:
        raise DataError("slice groups must differ")
    if not (0 <= gi < base.m and 0 <= gj < base.m):
        raise DataError("slice group out of range")

    others = [k for k in range(base.m) if k not in (gi, gj)]
    other_mass = float(base.w[others].sum())
    if others and other_mass > 0:
        other_frac = base.w[others] / other_mass
    else:
        other_frac = np.full(len(others), 1.0 / len(others)) if others else np.empty(0)

    axis = np.linspace(0.0, 1.0 - SLICE_EPS, steps)
    loss = np.full((steps, steps), np.nan)
    points = []
    cells = []
    for a, wi in enumerate(axis):
        for b, wj in enumerate(axis):
            rest = 1.0 - wi - wj
            if rest < -1e-12:
                continue
            rest = max(rest, 0.0)
            vec = np.zeros(base.m)
            vec[gi] = wi
            vec[gj] = wj
            if others:
                if mode == "rescale":
                    vec[others] = other_frac * rest
                else:
                    vec[others] = base.w[others]
                    vec = vec / vec.sum()
            elif rest > 1e-9:
                continue  # two-group simplex: only the diagonal is feasible
            points.append(vec)
            cells.append((a, b))
    if points:
        predicted = model.predict(np.stack(points))
        for (a, b), value in zip(cells, predicted):
            loss[a, b] = value
    return SliceGrid(group_i=names[gi], group_j=names[gj], axis=axis, loss=loss)
