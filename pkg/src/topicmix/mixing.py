"""Mixture weights on the probability simplex and the four strategies
that produce them: temperature scaling, performance-based reweighting,
regression-guided search over random candidates, and multiplicative
group-robust updates.

Every public operation returns a validated ``MixtureWeights`` (vector
non-negative, summing to one) over a fixed, named group order.
"""

from __future__ import annotations

import json
import warnings
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import GroupStats, cell_label
from .errors import DataError
from .gbdt import GradientBoostedTrees

SIMPLEX_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class MixtureWeights:
    """A named probability vector: one non-negative weight per group."""

    grouping: str
    names: tuple[str, ...]
    w: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, MixtureWeights):
            return NotImplemented
        return (self.grouping == other.grouping and self.names == other.names
                and np.array_equal(self.w, other.w))

    def __post_init__(self):
        w = np.asarray(self.w, dtype=np.float64)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "names", tuple(self.names))
        if w.ndim != 1 or len(w) != len(self.names):
            raise DataError("weight vector and names lengths disagree")
        if len(set(self.names)) != len(self.names):
            raise DataError("group names are not unique")
        if not np.all(np.isfinite(w)):
            raise DataError("weights must be finite")
        if np.any(w < 0):
            raise DataError(f"negative weight: min={w.min():g}")
        if abs(w.sum() - 1.0) > SIMPLEX_TOL:
            raise DataError(f"weights sum to {w.sum():.12f}, not 1")

    @property
    def m(self) -> int:
        return len(self.names)

    def __getitem__(self, name: str) -> float:
        try:
            return float(self.w[self.names.index(name)])
        except ValueError:
            raise DataError(f"unknown group {name!r}") from None

    @classmethod
    def uniform(cls, grouping: str, names: Sequence[str]) -> "MixtureWeights":
        n = len(names)
        return cls(grouping=grouping, names=tuple(names), w=np.full(n, 1.0 / n))

    def to_json(self) -> dict:
        return {"grouping": self.grouping, "names": list(self.names),
                "weights": [float(x) for x in self.w]}

    @classmethod
    def from_json(cls, obj: Mapping) -> "MixtureWeights":
        return cls(grouping=obj["grouping"], names=tuple(obj["names"]),
                   w=np.asarray(obj["weights"], dtype=np.float64))


def save_weights(weights: MixtureWeights, path: str | Path) -> None:
    from .ioutil import atomic_open

    with atomic_open(path, "w") as fh:
        json.dump(weights.to_json(), fh, sort_keys=True, indent=2)
        fh.write("\n")


def load_weights(path: str | Path) -> MixtureWeights:
    with open(path, "r", encoding="utf-8") as fh:
        return MixtureWeights.from_json(json.load(fh))


@dataclass(frozen=True, eq=False)
class MixtureTrial:
    """One (weights, per-group validation losses) record; the aggregate is
    the plain sum over groups."""

    weights: MixtureWeights
    per_group_loss: np.ndarray
    aggregate: float

    def __eq__(self, other):
        if not isinstance(other, MixtureTrial):
            return NotImplemented
        return (self.weights == other.weights and self.aggregate == other.aggregate
                and np.array_equal(self.per_group_loss, other.per_group_loss))

    def __post_init__(self):
        losses = np.asarray(self.per_group_loss, dtype=np.float64)
        object.__setattr__(self, "per_group_loss", losses)
        if losses.shape != (self.weights.m,):
            raise DataError("per-group losses do not match group count")
        if not np.all(np.isfinite(losses)):
            raise DataError("trial losses must be finite")
        if abs(self.aggregate - losses.sum()) > 1e-9:
            raise DataError("trial aggregate is not the sum of per-group losses")

    @classmethod
    def from_losses(cls, weights: MixtureWeights, losses) -> "MixtureTrial":
        losses = np.asarray(losses, dtype=np.float64)
        return cls(weights=weights, per_group_loss=losses, aggregate=float(losses.sum()))


def write_trials(trials: Iterable[MixtureTrial], path: str | Path) -> None:
    from .ioutil import atomic_open

    with atomic_open(path, "w") as fh:
        for trial in trials:
            fh.write(json.dumps({
                "weights": trial.weights.to_json(),
                "per_group_loss": [float(x) for x in trial.per_group_loss],
                "aggregate": trial.aggregate,
            }, sort_keys=True) + "\n")


def read_trials(path: str | Path) -> list[MixtureTrial]:
    trials = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"line {lineno}: parse failure: {exc}") from exc
            trials.append(MixtureTrial(
                weights=MixtureWeights.from_json(obj["weights"]),
                per_group_loss=np.asarray(obj["per_group_loss"], dtype=np.float64),
                aggregate=float(obj["aggregate"]),
            ))
    return trials


# ---------------------------------------------------------------------------
# Baseline weights
# ---------------------------------------------------------------------------

def natural_weights(stats: GroupStats) -> MixtureWeights:
    """Weights that follow the corpus token distribution exactly."""
    return MixtureWeights(grouping=stats.grouping, names=stats.names,
                          w=np.asarray(stats.proportions, dtype=np.float64))


def temperature_weights(stats: GroupStats, t: float) -> MixtureWeights:
    """Token counts raised to the power t, renormalized.

    t=1 reproduces the natural distribution, t=0 the uniform one. Counts
    are pre-scaled by their maximum so the result is exactly invariant to
    rescaling all counts by a common factor.
    """
    if t < 0:
        raise DataError(f"temperature must be >= 0, got {t}")
    counts = np.asarray(stats.token_counts, dtype=np.float64)
    zero = [name for name, c in zip(stats.names, counts) if c <= 0]
    if zero:
        raise DataError(f"temperature weights need positive token counts; zero for {zero}")
    q = counts / counts.max()
    scaled = q**t
    return MixtureWeights(grouping=stats.grouping, names=stats.names, w=scaled / scaled.sum())


# ---------------------------------------------------------------------------
# PerfRe: upsample chosen groups, renormalize the rest
# ---------------------------------------------------------------------------

def perfre_upsample(base: MixtureWeights, groups: Iterable[str],
                    factor: float) -> MixtureWeights:
    """Scale the selected groups' weights by ``factor``; the remaining
    mass is shared among the other groups in proportion to their base
    weights."""
    if factor <= 0:
        raise DataError(f"upsample factor must be positive, got {factor}")
    selected = set(groups)
    unknown = selected - set(base.names)
    if unknown:
        raise DataError(f"unknown groups: {sorted(unknown)}")
    mask = np.array([name in selected for name in base.names])
    sel_mass = float(base.w[mask].sum())
    boosted = factor * sel_mass
    if boosted >= 1.0:
        raise DataError(f"upsampled mass >= 1 ({boosted:.4f}); lower the factor")
    w = base.w.copy()
    w[mask] = factor * base.w[mask]
    rest_mass = float(base.w[~mask].sum())
    if rest_mass == 0.0:
        if np.any(~mask) or factor != 1.0:
            raise DataError("no unselected mass to absorb the renormalization")
    else:
        w[~mask] = base.w[~mask] * ((1.0 - boosted) / rest_mass)
    return MixtureWeights(grouping=base.grouping, names=base.names, w=w)


def perfre_select(scores: Mapping[str, float], baseline: float, k: int) -> list[str]:
    """The k groups whose score improves most over the baseline.

    Ties break lexicographically. ``scores`` holds one downstream score
    per group, each measured after upsampling that group alone.
    """
    if k < 0 or k > len(scores):
        raise DataError(f"k={k} out of range for {len(scores)} groups")
    ranked = sorted(scores.items(), key=lambda kv: (-(kv[1] - baseline), kv[0]))
    return [name for name, _ in ranked[:k]]


# ---------------------------------------------------------------------------
# Random mixtures on the simplex
# ---------------------------------------------------------------------------

ALPHA_FLOOR = 1e-3


def _dirichlet_matrix(base: MixtureWeights, n: int, tau: float, seed: int) -> np.ndarray:
    """n Dirichlet draws centered on ``base`` as an (n, m) matrix.

    Concentration alpha_i = tau * base_i * m, so the mean is the base
    vector and tau=1 gives moderate spread. Zero base coordinates get
    alpha clamped to a small floor; in the measure-zero event that every
    gamma draw underflows to zero, the row falls back to uniform.
    """
    if n < 1:
        raise DataError("need at least one draw")
    if tau <= 0:
        raise DataError(f"tau must be positive, got {tau}")
    m = base.m
    alpha = tau * base.w * m
    alpha = np.maximum(alpha, ALPHA_FLOOR)
    rng = np.random.default_rng(seed)
    g = rng.gamma(shape=alpha, size=(n, m))
    totals = g.sum(axis=1)
    bad = ~np.isfinite(totals) | (totals <= 0.0)
    if np.any(bad):
        g[bad] = 1.0
        totals[bad] = float(m)
    return g / totals[:, None]


def sample_mixtures(base: MixtureWeights, n: int, tau: float = 1.0,
                    seed: int = 0) -> list[MixtureWeights]:
    """Independent Dirichlet draws around ``base``; see _dirichlet_matrix."""
    draws = _dirichlet_matrix(base, n, tau, seed)
    return [MixtureWeights(grouping=base.grouping, names=base.names, w=row)
            for row in draws]


# ---------------------------------------------------------------------------
# Regression surrogate over trials
# ---------------------------------------------------------------------------

SURROGATE_KINDS = ("gbdt", "quadratic-ridge")
RIDGE_LAMBDA = 1e-3


def _quadratic_features(W: np.ndarray) -> np.ndarray:
    n, m = W.shape
    cols = [W]
    for i in range(m):
        for j in range(i, m):
            cols.append((W[:, i] * W[:, j])[:, None])
    return np.hstack(cols)


class SurrogateModel:
    """A fitted mapping from mixture weights to predicted aggregate loss."""

    def __init__(self, kind: str, grouping: str, names: tuple[str, ...],
                 predictor, train_rmse: float, n_trials: int):
        self.kind = kind
        self.grouping = grouping
        self.names = names
        self._predictor = predictor
        self.train_rmse = train_rmse
        self.n_trials = n_trials

    def predict(self, W) -> np.ndarray:
        """Predicted loss for an (n, m) weight matrix or one MixtureWeights."""
        if isinstance(W, MixtureWeights):
            return float(self._predictor(W.w[None, :])[0])
        W = np.asarray(W, dtype=np.float64)
        if W.ndim == 1:
            return float(self._predictor(W[None, :])[0])
        return self._predictor(W)


def fit_surrogate(trials: Sequence[MixtureTrial], kind: str = "gbdt",
                  seed: int = 0) -> SurrogateModel:
    """Fit a loss surrogate on recorded trials.

    gbdt: boosted regression trees (500 trees, depth 3, learning rate
    0.05, 0.8 row subsampling, squared loss). quadratic-ridge: least
    squares on [w, all w_i*w_j] with a small ridge (lambda=1e-3) solved on
    standardized features. All-identical targets yield a constant model.
    """
    trials = list(trials)
    if len(trials) < 10:
        raise DataError(f"need at least 10 trials to fit a surrogate, got {len(trials)}")
    if kind not in SURROGATE_KINDS:
        raise DataError(f"unknown surrogate kind {kind!r}; expected one of {SURROGATE_KINDS}")
    names = trials[0].weights.names
    grouping = trials[0].weights.grouping
    for trial in trials:
        if trial.weights.names != names:
            raise DataError("trials mix different group name sets")
    X = np.stack([t.weights.w for t in trials])
    y = np.asarray([t.aggregate for t in trials], dtype=np.float64)

    if float(np.ptp(y)) == 0.0:
        warnings.warn("all trial targets identical; fitting a constant surrogate")
        const = float(y[0])
        return SurrogateModel(kind, grouping, names,
                              lambda W: np.full(len(W), const), 0.0, len(trials))

    if kind == "gbdt":
        booster = GradientBoostedTrees(seed=seed).fit(X, y)
        predictor = booster.predict
    else:
        phi = _quadratic_features(X)
        mu = phi.mean(axis=0)
        sd = phi.std(axis=0)
        sd[sd == 0.0] = 1.0
        Z = (phi - mu) / sd
        y_mean = float(y.mean())
        lam = np.sqrt(RIDGE_LAMBDA)
        A = np.vstack([Z, lam * np.eye(Z.shape[1])])
        rhs = np.concatenate([y - y_mean, np.zeros(Z.shape[1])])
        beta, *_ = np.linalg.lstsq(A, rhs, rcond=None)

        def predictor(W: np.ndarray, beta=beta, mu=mu, sd=sd, y_mean=y_mean) -> np.ndarray:
            return y_mean + ((_quadratic_features(W) - mu) / sd) @ beta

    rmse = float(np.sqrt(np.mean((predictor(X) - y) ** 2)))
    return SurrogateModel(kind, grouping, names, predictor, rmse, len(trials))


def regmix_best(model: SurrogateModel, base: MixtureWeights, n_sim: int = 100_000,
                top_k: int = 100, seed: int = 0, tau: float = 1.0) -> MixtureWeights:
    """Search n_sim random candidates and return the (renormalized)
    coordinate-wise mean of the top_k lowest-predicted mixtures.

    top_k=1 returns the single best-predicted candidate; the default
    averages 100 for stability under surrogate noise.
    """
    if not (1 <= top_k <= n_sim):
        raise DataError(f"need 1 <= top_k <= n_sim, got top_k={top_k}, n_sim={n_sim}")
    if base.names != model.names:
        raise DataError("base weights and surrogate use different group names")
    candidates = _dirichlet_matrix(base, n_sim, tau, seed)
    predicted = model.predict(candidates)
    keep = np.argsort(predicted, kind="stable")[:top_k]
    best = candidates[keep].mean(axis=0)
    return MixtureWeights(grouping=base.grouping, names=base.names, w=best / best.sum())


# ---------------------------------------------------------------------------
# Group-robust multiplicative updates
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DoremiRun:
    """Full update trace: pre/post-smoothing weights per step plus the
    averaged final weights."""

    weights: MixtureWeights
    step_weights_pre: tuple[np.ndarray, ...]
    step_weights_post: tuple[np.ndarray, ...]


def doremi_run(oracle, ref_loss, steps: int = 30, eta: float = 1.0,
               smooth: float = 1e-3, seed: int = 0) -> DoremiRun:
    """Multiplicative weight updates driven by excess loss over a reference.

    Starting from uniform weights, each step queries the oracle at the
    current mixture, exponentiates the clipped excess loss (only groups
    doing worse than the reference gain weight), renormalizes, and mixes
    in a little uniform mass. The returned weights are the per-step
    average of the smoothed weights.
    """
    if steps < 1:
        raise DataError("steps must be >= 1")
    if eta <= 0:
        raise DataError("eta must be positive")
    if not (0.0 <= smooth < 1.0):
        raise DataError("smooth must be in [0, 1)")
    m = oracle.m
    names = tuple(oracle.names)
    grouping = getattr(oracle, "grouping", "oracle")
    ref = np.asarray(ref_loss, dtype=np.float64)
    if ref.shape != (m,):
        raise DataError(f"reference losses must have {m} entries")
    uniform = np.full(m, 1.0 / m)
    alpha = uniform.copy()
    pre: list[np.ndarray] = []
    post: list[np.ndarray] = []
    for _ in range(steps):
        current = MixtureWeights(grouping=grouping, names=names, w=alpha)
        losses = oracle.eval(current).per_group
        if not np.all(np.isfinite(losses)):
            raise DataError("oracle returned non-finite losses")
        excess = np.maximum(losses - ref, 0.0)
        alpha = alpha * np.exp(eta * excess)
        alpha = alpha / alpha.sum()
        pre.append(alpha.copy())
        alpha = (1.0 - smooth) * alpha + smooth * uniform
        post.append(alpha.copy())
    avg = np.mean(post, axis=0)
    final = MixtureWeights(grouping=grouping, names=names, w=avg / avg.sum())
    return DoremiRun(weights=final, step_weights_pre=tuple(pre), step_weights_post=tuple(post))


def doremi_weights(oracle, ref_loss, steps: int = 30, eta: float = 1.0,
                   smooth: float = 1e-3, seed: int = 0) -> MixtureWeights:
    return doremi_run(oracle, ref_loss, steps=steps, eta=eta, smooth=smooth, seed=seed).weights


# ---------------------------------------------------------------------------
# Topic x source composition
# ---------------------------------------------------------------------------

def cartesian_weights(
    topic_w: MixtureWeights,
    source_w: MixtureWeights,
    available: Iterable[tuple[str, str]] | None = None,
) -> MixtureWeights:
    """Product weights over (topic, source) cells, renormalized over the
    cells that actually exist in the corpus."""
    if available is None:
        cells = [(t, s) for t in topic_w.names for s in source_w.names]
    else:
        cells = sorted(set(available))
        for t, s in cells:
            if t not in topic_w.names:
                raise DataError(f"unknown topic in mask: {t!r}")
            if s not in source_w.names:
                raise DataError(f"unknown source in mask: {s!r}")
    if not cells:
        raise DataError("no available cells")
    cells = sorted(cells)
    w = np.array([topic_w[t] * source_w[s] for t, s in cells], dtype=np.float64)
    total = w.sum()
    if total <= 0.0:
        raise DataError("all available cells have zero weight")
    return MixtureWeights(
        grouping="topic_source",
        names=tuple(cell_label(t, s) for t, s in cells),
        w=w / total,
    )
