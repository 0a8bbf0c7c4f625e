"""Three-parameter logistic response model over a binary correctness matrix.

Respondents are classifiers, items are test instances, and an entry is 1 when
the classifier got the instance right. Fitting is marginal maximum likelihood
via EM on a fixed quadrature grid with a standard-normal ability prior:
the E-step distributes each respondent over the grid nodes, the M-step
re-estimates each item's discrimination/difficulty/guessing by bounded
L-BFGS-B on the expected-count objective. Abilities are expected-a-posteriori
means on the same grid.

Estimation is bounded rather than penalized: parameters live in a box that
always contains the current iterate, which preserves the EM guarantee that
the (quadrature-discretized) observed-data log-likelihood never decreases.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, logsumexp

__all__ = [
    "RESPONDENT_KINDS",
    "SingularityError",
    "ResponseMatrix",
    "ItemParameterSet",
    "AbilityEstimates",
    "FitConfig",
    "FitResult",
    "p3pl",
    "quadrature",
    "fit_3pl",
    "eap_ability",
    "true_score",
    "normalize",
]

RESPONDENT_KINDS = ("trained", "random", "optimistic", "pessimistic")

_PCLIP = 1e-10


class SingularityError(ValueError):
    """A constant item column with no artificial respondents to break it."""


@dataclass(frozen=True)
class ResponseMatrix:
    """Binary correctness matrix: respondents x items, entries in {0, 1}."""

    correctness: np.ndarray
    respondent_ids: tuple[str, ...]
    respondent_kinds: tuple[str, ...]
    item_ids: tuple[str, ...]

    def __post_init__(self):
        m = np.asarray(self.correctness, dtype=np.int8)
        object.__setattr__(self, "correctness", m)
        if m.ndim != 2:
            raise ValueError("correctness must be 2-D")
        if m.shape[0] < 2 or m.shape[1] < 2:
            raise ValueError("need at least 2 respondents and 2 items")
        if not np.isin(m, (0, 1)).all():
            raise ValueError("correctness entries must be 0 or 1")
        if len(self.respondent_ids) != m.shape[0]:
            raise ValueError("respondent_ids do not match row count")
        if len(set(self.respondent_ids)) != m.shape[0]:
            raise ValueError("respondent_ids must be unique")
        if len(self.respondent_kinds) != m.shape[0]:
            raise ValueError("respondent_kinds do not match row count")
        bad = set(self.respondent_kinds) - set(RESPONDENT_KINDS)
        if bad:
            raise ValueError(f"unknown respondent kinds {sorted(bad)}")
        if len(self.item_ids) != m.shape[1]:
            raise ValueError("item_ids do not match column count")
        if len(set(self.item_ids)) != m.shape[1]:
            raise ValueError("item_ids must be unique")
        m.setflags(write=False)

    @property
    def n_respondents(self) -> int:
        return self.correctness.shape[0]

    @property
    def n_items(self) -> int:
        return self.correctness.shape[1]

    def has_artificials(self) -> bool:
        return any(k != "trained" for k in self.respondent_kinds)

    def row_accuracies(self) -> np.ndarray:
        return self.correctness.mean(axis=1)


@dataclass(frozen=True)
class ItemParameterSet:
    """Per-item discrimination (a), difficulty (b) and guessing floor (c),
    plus their min-max normalized forms once :func:`normalize` has run."""

    item_ids: tuple[str, ...]
    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    a_norm: np.ndarray | None = None
    b_norm: np.ndarray | None = None
    degenerate: tuple[str, ...] = ()

    def __post_init__(self):
        for name in ("a", "b", "c"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            object.__setattr__(self, name, arr)
            if arr.shape != (len(self.item_ids),):
                raise ValueError(f"{name} does not match item count")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
            arr.setflags(write=False)
        if np.any(self.a <= 0):
            raise ValueError("discrimination must be > 0")
        if np.any((self.c < 0) | (self.c >= 1)):
            raise ValueError("guessing must lie in [0, 1)")
        for name in ("a_norm", "b_norm"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr, dtype=np.float64)
                object.__setattr__(self, name, arr)
                arr.setflags(write=False)

    @property
    def n_items(self) -> int:
        return len(self.item_ids)


@dataclass(frozen=True)
class AbilityEstimates:
    """EAP ability and posterior spread per respondent."""

    respondent_ids: tuple[str, ...]
    theta: np.ndarray
    posterior_sd: np.ndarray

    def __post_init__(self):
        for name in ("theta", "posterior_sd"):
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            object.__setattr__(self, name, arr)
            if arr.shape != (len(self.respondent_ids),):
                raise ValueError(f"{name} does not match respondent count")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} contains non-finite values")
            arr.setflags(write=False)


@dataclass(frozen=True)
class FitConfig:
    """EM settings. Defaults: 61 equispaced nodes on [-6, 6], convergence at
    max parameter change < 1e-4, at most 500 iterations, a in (0, 10],
    c in [0, 0.35]."""

    n_quadrature: int = 61
    theta_min: float = -6.0
    theta_max: float = 6.0
    max_iter: int = 500
    tol: float = 1e-4
    a_min: float = 0.01
    a_max: float = 10.0
    c_max: float = 0.35
    waive_singularity_guard: bool = False

    def __post_init__(self):
        if self.n_quadrature < 3:
            raise ValueError("need at least 3 quadrature nodes")
        if not self.theta_min < self.theta_max:
            raise ValueError("theta_min must be below theta_max")
        if not 0 < self.a_min < self.a_max:
            raise ValueError("need 0 < a_min < a_max")
        if not 0 <= self.c_max < 1:
            raise ValueError("c_max must lie in [0, 1)")


@dataclass(frozen=True)
class FitResult:
    items: ItemParameterSet
    abilities: AbilityEstimates
    true_scores: np.ndarray
    respondent_kinds: tuple[str, ...]
    loglik_path: tuple[float, ...]
    converged: bool
    n_iter: int


def p3pl(theta, a, b, c):
    """Probability of a correct response: c + (1 - c) * logistic(a(theta - b)).

    Strictly increasing in theta with range (c, 1). Scalars broadcast, so
    vectors of abilities or item parameters evaluate in one call.
    """
    a = np.asarray(a, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    if np.any(a <= 0):
        raise ValueError("discrimination a must be > 0")
    if np.any((c < 0) | (c >= 1)):
        raise ValueError("guessing c must lie in [0, 1)")
    theta = np.asarray(theta, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    out = c + (1.0 - c) * expit(a * (theta - b))
    return float(out) if out.ndim == 0 else out


def quadrature(cfg: FitConfig = FitConfig()) -> tuple[np.ndarray, np.ndarray]:
    """Equispaced ability nodes with normalized standard-normal weights."""
    nodes = np.linspace(cfg.theta_min, cfg.theta_max, cfg.n_quadrature)
    w = np.exp(-0.5 * nodes ** 2)
    return nodes, w / w.sum()


def _item_curves(nodes, a, b, c):
    """P[q, j] = p3pl(nodes[q], a_j, b_j, c_j), clipped away from {0, 1}."""
    p = c[None, :] + (1.0 - c[None, :]) * expit(
        a[None, :] * (nodes[:, None] - b[None, :]))
    return np.clip(p, _PCLIP, 1.0 - _PCLIP)


def _m_objective(x, nodes, r_bar, n_bar):
    """Negative expected complete-data log-likelihood over all items at once
    (the objective is separable, so one bounded quasi-Newton solve updates
    every item), with the analytic gradient in (a_j, b_j, c_j) per item."""
    n_items = r_bar.shape[1]
    a = x[:n_items]
    b = x[n_items:2 * n_items]
    c = x[2 * n_items:]
    s = expit(a[None, :] * (nodes[:, None] - b[None, :]))
    p = np.clip(c[None, :] + (1.0 - c[None, :]) * s, _PCLIP, 1.0 - _PCLIP)
    miss = n_bar[:, None] - r_bar
    f = r_bar * np.log(p) + miss * np.log1p(-p)
    dp = r_bar / p - miss / (1.0 - p)
    ds = s * (1.0 - s)
    ga = ((1.0 - c)[None, :] * ds * (nodes[:, None] - b[None, :]) * dp).sum(0)
    gb = (-(a * (1.0 - c))[None, :] * ds * dp).sum(0)
    gc = ((1.0 - s) * dp).sum(0)
    return -float(f.sum()), -np.concatenate([ga, gb, gc])


def fit_3pl(rm: ResponseMatrix, cfg: FitConfig = FitConfig()) -> FitResult:
    """EM fit of the 3PL model; see the module docstring for the scheme.

    Raises :class:`SingularityError` when an item column is constant and the
    matrix carries no artificial respondents (an all-correct or all-wrong
    item cannot anchor the logistic curve on its own); injecting
    random/optimistic/pessimistic rows or waiving the guard in ``cfg``
    lifts the error. Non-convergence within ``cfg.max_iter`` is reported via
    ``converged=False``, never an exception.
    """
    u = rm.correctness.astype(np.float64)
    n_resp, n_items = u.shape
    column_sums = u.sum(axis=0)
    degenerate = (column_sums == 0) | (column_sums == n_resp)
    if degenerate.any() and not rm.has_artificials() \
            and not cfg.waive_singularity_guard:
        bad = rm.item_ids[int(np.argmax(degenerate))]
        raise SingularityError(
            f"item {bad!r} has a constant response column and no artificial "
            "respondents are present; inject random/optimistic/pessimistic "
            "rows or set waive_singularity_guard"
        )

    nodes, weights = quadrature(cfg)
    logw = np.log(weights)

    p_bar = np.clip(u.mean(axis=0), 0.02, 0.98)
    a = np.ones(n_items)
    b = np.clip(-np.log(p_bar / (1.0 - p_bar)), cfg.theta_min, cfg.theta_max)
    c = np.full(n_items, min(0.1, cfg.c_max) if cfg.c_max > 0 else 0.0)

    bounds = ([(cfg.a_min, cfg.a_max)] * n_items
              + [(cfg.theta_min, cfg.theta_max)] * n_items
              + [(0.0, cfg.c_max)] * n_items)
    loglik_path: list[float] = []
    converged = False
    n_iter = 0

    def e_step(a, b, c):
        p = _item_curves(nodes, a, b, c)
        # log L[i, q] = sum_j u_ij log p_qj + (1 - u_ij) log(1 - p_qj)
        loglik = u @ np.log(p).T + (1.0 - u) @ np.log1p(-p).T
        joint = loglik + logw[None, :]
        norm = logsumexp(joint, axis=1)
        post = np.exp(joint - norm[:, None])
        return post, float(norm.sum())

    for n_iter in range(1, cfg.max_iter + 1):
        post, ll = e_step(a, b, c)
        loglik_path.append(ll)
        n_bar = post.sum(axis=0)
        r_bar = post.T @ u                       # (nodes, items)
        x0 = np.concatenate([a, b, c])
        res = minimize(_m_objective, x0, jac=True, method="L-BFGS-B",
                       bounds=bounds, options={"maxiter": 60},
                       args=(nodes, r_bar, n_bar))
        f0, _ = _m_objective(x0, nodes, r_bar, n_bar)
        x_new = res.x if res.fun <= f0 else x0    # never step downhill
        max_change = float(np.abs(x_new - x0).max())
        a = x_new[:n_items].copy()
        b = x_new[n_items:2 * n_items].copy()
        c = x_new[2 * n_items:].copy()
        if max_change < cfg.tol:
            converged = True
            break

    post, ll = e_step(a, b, c)
    loglik_path.append(ll)
    theta = post @ nodes
    spread = post @ (nodes ** 2) - theta ** 2
    sd = np.sqrt(np.maximum(spread, 0.0))

    items = ItemParameterSet(item_ids=rm.item_ids, a=a.copy(), b=b.copy(),
                             c=c.copy())
    abilities = AbilityEstimates(respondent_ids=rm.respondent_ids,
                                 theta=theta, posterior_sd=sd)
    scores = np.array([true_score(t, items) for t in theta])
    _check_bracketing(rm.respondent_kinds, scores)
    return FitResult(items=items, abilities=abilities, true_scores=scores,
                     respondent_kinds=rm.respondent_kinds,
                     loglik_path=tuple(loglik_path), converged=converged,
                     n_iter=n_iter)


def _check_bracketing(kinds, scores) -> None:
    """Optimistic rows must sit at the score maximum, pessimistic at the
    minimum; anything else means the fit is inconsistent."""
    tol = 1e-8
    for i, kind in enumerate(kinds):
        if kind == "optimistic" and scores[i] < scores.max() - tol:
            raise RuntimeError(
                "optimistic respondent does not attain the maximum true score"
            )
        if kind == "pessimistic" and scores[i] > scores.min() + tol:
            raise RuntimeError(
                "pessimistic respondent does not attain the minimum true score"
            )


def eap_ability(responses, items: ItemParameterSet,
                cfg: FitConfig = FitConfig()) -> tuple[float, float]:
    """Posterior mean and sd of ability for one response row under fitted
    item parameters and the standard-normal prior."""
    responses = np.asarray(responses, dtype=np.float64).reshape(-1)
    if responses.shape[0] != items.n_items:
        raise ValueError("response row does not match item count")
    nodes, weights = quadrature(cfg)
    p = _item_curves(nodes, items.a, items.b, items.c)
    loglik = np.log(p) @ responses + np.log1p(-p) @ (1.0 - responses)
    joint = loglik + np.log(weights)
    post = np.exp(joint - logsumexp(joint))
    theta = float(post @ nodes)
    var = float(post @ (nodes ** 2) - theta ** 2)
    return theta, float(np.sqrt(max(var, 0.0)))


def true_score(theta: float, items: ItemParameterSet) -> float:
    """Expected number of correct responses at ability theta: the sum of the
    item curves. Strictly increasing in theta; range (sum c, n_items)."""
    return float(p3pl(theta, items.a, items.b, items.c).sum())


def _minmax(values: np.ndarray) -> tuple[np.ndarray, bool]:
    lo, hi = float(values.min()), float(values.max())
    if hi - lo == 0.0:
        return np.full_like(values, 0.5), True
    return (values - lo) / (hi - lo), False


def normalize(items: ItemParameterSet) -> ItemParameterSet:
    """Min-max rescale discrimination and difficulty onto [0, 1].

    Order-preserving; an all-equal parameter maps every item to 0.5 and the
    parameter's name is recorded in ``degenerate``.
    """
    a_norm, a_flat = _minmax(items.a)
    b_norm, b_flat = _minmax(items.b)
    flagged = tuple(name for name, flat in (("a", a_flat), ("b", b_flat))
                    if flat)
    return replace(items, a_norm=a_norm, b_norm=b_norm, degenerate=flagged)
