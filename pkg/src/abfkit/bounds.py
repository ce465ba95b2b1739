"""Constraint Lipschitz bounds and minimum sample counts.

The scenario guarantee needs, for every decay candidate ``gamma_t_k``, a
Lipschitz constant ``L_k`` of the two constraint functions with respect to
the sampled state. For quadratic-form candidates these follow in closed form
from norm bounds on the dynamics:

  linear plants ``x+ = A x + B nu``::

      L1   = 8 * alpha1 * lambda_max
      L2_k = 2 * lambda_max * (2 a1^2 alpha1 + 2 a1 a2 alpha2 + a1 delta
                               + 2 alpha1 gamma_t_k)

  with ``a1 >= ||A||``, ``a2 >= ||B||``;

  general nonlinear plants::

      L2_k = 2 * lambda_max * (2 f_bound jac_bound + f_bound delta
                               + 2 alpha1 gamma_t_k)

  with ``f_bound >= ||f||`` and ``jac_bound >= ||df/dx||``.

In both cases the reported constant is ``max(L1, L2_k)``. ``lambda_max``
bounds the largest eigenvalue of the quadratic-form matrix and is obtained
from entry-wise coefficient intervals via Gershgorin discs.

The minimum number of one-step experiments for thresholds ``eps_k``, scaled
as ``eps_bar_k = (eps_k / L_k)^n``, and confidence parameter ``beta`` is the
smallest N with::

    sum_k sum_{i<r} C(N, i) eps_bar_k^i (1 - eps_bar_k)^(N-i)  <=  beta

where ``r`` counts the free decision variables. Tails are evaluated with
exact binomial coefficients for small N and in log space with compensated
summation otherwise; the search is a monotone bisection seeded from a
Poisson bracket, and minimality is certified by checking that N-1 fails.
"""
from __future__ import annotations

import dataclasses
import json
import math
from typing import Iterable, Sequence

import numpy as np

from .errors import InfeasibleError, InsufficientDataError
from .systems import Dataset, SamplePair

__all__ = [
    "LipschitzInputs",
    "SampleSpec",
    "gershgorin_lambda_max",
    "lipschitz_linear",
    "lipschitz_nonlinear",
    "estimate_lipschitz_from_data",
    "min_samples",
    "data_requirement_surface",
    "write_surface",
]

_EXACT_COMB_LIMIT = 1200  # below this N, tails use exact integer binomials


def gershgorin_lambda_max(entry_intervals, dimension: int | None = None) -> float:
    """Largest-eigenvalue bound from entry-wise intervals of a symmetric matrix.

    ``entry_intervals`` has shape ``(n, n, 2)`` holding ``[lo, hi]`` per
    entry; the bound is the worst Gershgorin disc edge:
    ``max_i ( hi_ii + sum_{j != i} max(|lo_ij|, |hi_ij|) )``.
    """
    box = np.asarray(entry_intervals, dtype=float)
    if box.ndim != 3 or box.shape[0] != box.shape[1] or box.shape[2] != 2:
        raise ValueError("entry_intervals must have shape (n, n, 2)")
    n = box.shape[0]
    if dimension is not None and dimension != n:
        raise ValueError(f"expected dimension {dimension}, got {n}")
    radius = np.maximum(np.abs(box[..., 0]), np.abs(box[..., 1]))
    best = -math.inf
    for i in range(n):
        off = float(np.sum(radius[i])) - radius[i, i]
        best = max(best, float(box[i, i, 1]) + off)
    return best


@dataclasses.dataclass(frozen=True)
class LipschitzInputs:
    """Norm bounds feeding the closed-form constraint Lipschitz constants."""

    kind: str                       # 'linear' | 'nonlinear'
    alpha1: float                   # bound on ||x|| over the state box
    alpha2: float = 0.0             # bound on ||nu|| over the input set
    script_i1: float | None = None  # linear: bound on ||A||
    script_i2: float | None = None  # linear: bound on ||B||
    script_if: float | None = None  # nonlinear: bound on ||f||
    script_ix: float | None = None  # nonlinear: bound on ||df/dx||
    lambda_max_bound: float = 1.0
    lambda_min_bound: float = 0.0
    delta: float = 0.0
    gamma_tilde_set: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in ("linear", "nonlinear"):
            raise ValueError("kind must be 'linear' or 'nonlinear'")
        for name in ("alpha1", "alpha2", "lambda_min_bound", "delta"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not self.lambda_max_bound > 0:
            raise ValueError("lambda_max_bound must be positive")
        gs = tuple(float(g) for g in self.gamma_tilde_set)
        if not gs:
            raise ValueError("gamma_tilde_set must be nonempty")
        if any(not 0.0 < g < 1.0 for g in gs):
            raise ValueError("gamma_tilde values must lie strictly inside (0, 1)")
        object.__setattr__(self, "gamma_tilde_set", gs)


def _lipschitz_phi1(inp: LipschitzInputs) -> float:
    # conservative form: 4 * alpha1 * (lambda_max + lambda_max)
    return 8.0 * inp.alpha1 * inp.lambda_max_bound


def lipschitz_linear(inp: LipschitzInputs) -> np.ndarray:
    """Per-candidate constants ``max(L1, L2_k)`` for linear plants."""
    if inp.kind != "linear":
        raise ValueError("lipschitz_linear needs kind='linear'")
    if inp.script_i1 is None or inp.script_i2 is None:
        raise ValueError("linear bounds require script_i1 and script_i2")
    a1, a2 = float(inp.script_i1), float(inp.script_i2)
    if a1 < 0 or a2 < 0:
        raise ValueError("script_i1 and script_i2 must be nonnegative")
    l1 = _lipschitz_phi1(inp)
    gs = np.asarray(inp.gamma_tilde_set)
    l2 = 2.0 * inp.lambda_max_bound * (
        2.0 * a1 * a1 * inp.alpha1
        + 2.0 * a1 * a2 * inp.alpha2
        + a1 * inp.delta
        + 2.0 * inp.alpha1 * gs
    )
    return np.maximum(l1, l2)


def lipschitz_nonlinear(inp: LipschitzInputs) -> np.ndarray:
    """Per-candidate constants ``max(L1, L2_k)`` for general nonlinear plants."""
    if inp.kind != "nonlinear":
        raise ValueError("lipschitz_nonlinear needs kind='nonlinear'")
    if inp.script_if is None or inp.script_ix is None:
        raise ValueError("nonlinear bounds require script_if and script_ix")
    f_bound, jac_bound = float(inp.script_if), float(inp.script_ix)
    if f_bound < 0 or jac_bound < 0:
        raise ValueError("script_if and script_ix must be nonnegative")
    l1 = _lipschitz_phi1(inp)
    gs = np.asarray(inp.gamma_tilde_set)
    l2 = 2.0 * inp.lambda_max_bound * (
        2.0 * f_bound * jac_bound + f_bound * inp.delta + 2.0 * inp.alpha1 * gs
    )
    return np.maximum(l1, l2)


def estimate_lipschitz_from_data(
    data: Dataset | Iterable[SamplePair], safety_factor: float = 1.0
) -> float:
    """Slope estimate of the dynamics' Lipschitz constant from paired samples.

    Uses the largest ratio ``||f(xa, nu) - f(xb, nu)|| / ||xa - xb||`` over
    all pairs sharing an input, inflated by ``safety_factor``. Needs at least
    two pairs under some common input.
    """
    if safety_factor < 1.0:
        raise ValueError("safety_factor must be >= 1")
    if isinstance(data, Dataset):
        groups = [
            (data.states, data.successors[:, u, :]) for u in range(data.inputs.count)
        ]
    else:
        by_input: dict[int, list[SamplePair]] = {}
        for pair in data:
            by_input.setdefault(int(pair.nu_index), []).append(pair)
        groups = [
            (np.stack([p.x for p in pairs]), np.stack([p.x_next for p in pairs]))
            for pairs in by_input.values()
        ]
    best = -math.inf
    comparable = False
    for xs, ys in groups:
        k = xs.shape[0]
        if k < 2:
            continue
        comparable = True
        # chunked pairwise ratios to keep memory flat for large groups
        chunk = max(1, int(2_000_000 // max(k, 1)))
        for lo in range(0, k, chunk):
            xa = xs[lo:lo + chunk, None, :]
            ya = ys[lo:lo + chunk, None, :]
            dx = np.linalg.norm(xa - xs[None, :, :], axis=2)
            dy = np.linalg.norm(ya - ys[None, :, :], axis=2)
            mask = dx > 0.0
            if np.any(mask):
                best = max(best, float(np.max(dy[mask] / dx[mask])))
    if not comparable or not math.isfinite(best):
        raise InsufficientDataError(
            "need at least two distinct samples under a common input"
        )
    return float(safety_factor) * best


@dataclasses.dataclass(frozen=True)
class SampleSpec:
    """Inputs of the minimum-sample-count computation."""

    epsilon: tuple[float, ...]
    beta: float
    n: int
    r: int
    lipschitz: tuple[float, ...]
    n_min: int | None = None

    def __post_init__(self) -> None:
        eps = tuple(float(e) for e in self.epsilon)
        lip = tuple(float(v) for v in self.lipschitz)
        if len(eps) != len(lip) or not eps:
            raise ValueError("epsilon and lipschitz must be nonempty lists of equal length")
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError("beta must lie in [0, 1]")
        if self.n < 1 or self.r < 1:
            raise ValueError("n and r must be positive integers")
        for e, L in zip(eps, lip):
            if e < 0 or L <= 0 or e > L:
                raise ValueError("each epsilon_k must satisfy 0 <= epsilon_k <= L_k")
        object.__setattr__(self, "epsilon", eps)
        object.__setattr__(self, "lipschitz", lip)

    @property
    def l(self) -> int:
        return len(self.epsilon)

    @property
    def epsilon_bar(self) -> tuple[float, ...]:
        return tuple((e / L) ** self.n for e, L in zip(self.epsilon, self.lipschitz))


def _log_comb(n: int, k: int) -> float:
    return math.lgamma(n + 1) - math.lgamma(k + 1) - math.lgamma(n - k + 1)


def _binomial_tail(n: int, p: float, r: int) -> float:
    """P[Bin(n, p) <= r - 1], accurate over the whole parameter range."""
    top = min(r - 1, n)
    if p >= 1.0:
        return 1.0 if top >= n else 0.0
    if p <= 0.0:
        return 1.0
    if n <= _EXACT_COMB_LIMIT:
        terms = [math.comb(n, i) * p**i * (1.0 - p) ** (n - i) for i in range(top + 1)]
    else:
        log_p = math.log(p)
        log_q = math.log1p(-p)
        terms = [
            math.exp(_log_comb(n, i) + i * log_p + (n - i) * log_q)
            for i in range(top + 1)
        ]
    return min(1.0, math.fsum(terms))


def _tail(n: int, eps_bar: Sequence[float], r: int) -> float:
    return math.fsum(_binomial_tail(n, p, r) for p in eps_bar)


def _poisson_tail(lam: float, r: int) -> float:
    log_terms = [-lam + i * math.log(lam) - math.lgamma(i + 1) for i in range(r)]
    return math.fsum(math.exp(t) for t in log_terms)


def min_samples(spec: SampleSpec) -> int:
    """Exact minimal sample count meeting the confidence target.

    Raises :class:`InfeasibleError` when some ``eps_bar_k`` is zero (the tail
    never drops) or ``beta`` is zero.
    """
    eps_bar = spec.epsilon_bar
    if any(p <= 0.0 for p in eps_bar):
        raise InfeasibleError("a zero epsilon_bar admits no finite sample count")
    if spec.beta <= 0.0:
        raise InfeasibleError("beta = 0 admits no finite sample count")
    r, l, beta = spec.r, spec.l, spec.beta

    if _tail(1, eps_bar, r) <= beta:
        return 1

    # Poisson-based seed for the upper bracket, then doubling to certainty.
    lam = max(float(r), 1.0)
    target = beta / l
    while _poisson_tail(lam, r) > target and lam < 1e9:
        lam *= 2.0
    hi = max(2, int(math.ceil(lam / min(eps_bar))))
    while _tail(hi, eps_bar, r) > beta:
        hi *= 2
        if hi > 10**15:
            raise InfeasibleError("sample requirement exceeds 1e15; relax the thresholds")

    lo = 1  # known failing (checked above)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if _tail(mid, eps_bar, r) <= beta:
            hi = mid
        else:
            lo = mid
    assert _tail(hi, eps_bar, r) <= beta and _tail(hi - 1, eps_bar, r) > beta
    return hi


def data_requirement_surface(
    spec: SampleSpec,
    epsilon_grid: Sequence[float],
    beta_grid: Sequence[float],
) -> list[tuple[float, float, int]]:
    """Minimum sample counts over a (threshold, confidence) grid.

    Each grid threshold is broadcast to every candidate slot of ``spec``.
    Returns long-form rows ``(epsilon, beta, N)``; N is nonincreasing along
    both axes.
    """
    if len(epsilon_grid) == 0 or len(beta_grid) == 0:
        raise ValueError("epsilon_grid and beta_grid must be nonempty")
    rows: list[tuple[float, float, int]] = []
    for eps in epsilon_grid:
        for beta in beta_grid:
            point = dataclasses.replace(
                spec, epsilon=(float(eps),) * spec.l, beta=float(beta), n_min=None
            )
            rows.append((float(eps), float(beta), min_samples(point)))
    return rows


def write_surface(rows: Sequence[tuple[float, float, int]], csv_path, json_path) -> None:
    """Long-form CSV ``epsilon, beta, N`` plus a plotting-hint sidecar."""
    with open(csv_path, "w") as fh:
        fh.write("epsilon,beta,N\n")
        for eps, beta, n in rows:
            fh.write(f"{eps!r},{beta!r},{int(n)}\n")
    with open(json_path, "w") as fh:
        json.dump({"columns": ["epsilon", "beta", "N"], "value_scale": "log"}, fh, indent=2)
        fh.write("\n")
