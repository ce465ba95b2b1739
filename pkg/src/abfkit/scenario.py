"""Scenario program assembly, LP solving, and the certification verdict.

For a fixed decay candidate ``gamma_t`` the scenario program is the linear
program::

    min mu   s.t.   phi1(x_i, xhat)           - mu <= 0   for all i, xhat
                    phi2(x_i, xhat, nu, ...)  - mu <= 0   for all i, xhat, nu
                    coefficient box / positivity rows

over the decision vector ``[sigma; eta; (rho_t); mu]``. The first family does
not depend on the input, so it is deduplicated over ``nu``. The full
constraint set is far too large to hand to a solver at once, so the solve
works over an active working set: solve the small LP, stream-scan every
constraint at the solution for violations, admit the worst offenders, and
repeat until the scan is clean. Because violated rows are always admitted,
the final optimum equals the full-LP optimum.

The optimal ``mu`` alone does not pin down a useful solution: ``sigma`` only
appears with nonnegative coefficients, so the LP is free to leave it at its
floor, which would make the certified precision ``sqrt(rho / sigma)``
useless. A second lexicographic pass therefore maximizes ``sigma`` subject
to ``mu`` staying at its optimum.

Candidates ``gamma_t_k`` are enumerated (the product ``gamma_t * eta`` is
bilinear, so each candidate gets its own LP); ties in the optimum resolve to
the smallest candidate. The verdict accepts when
``mu_star + max_k epsilon_k <= 0`` and then packages the solution as a
certificate with confidence ``1 - beta``.
"""
from __future__ import annotations

import dataclasses
import json
from typing import Sequence

import numpy as np

from . import abf
from .abstraction import FiniteAbstraction, representatives
from .errors import LpInfeasibleError, OutOfDomainError, TemplateError
from .lp import INFEASIBLE, OPTIMAL, UNBOUNDED, solve_lp
from .systems import Dataset

__all__ = [
    "ScenarioProblem",
    "SolveReport",
    "Rejection",
    "constraint_value",
    "solve_sop",
    "verdict",
    "write_report",
    "write_problem_manifest",
]

_VIOLATION_TOL = 1e-9
_ACTIVE_TOL = 1e-7
_MAX_ROUNDS = 500


@dataclasses.dataclass(frozen=True)
class ScenarioProblem:
    """A sampled dataset, an abstraction, and a candidate-function family."""

    template: abf.AbfTemplate
    dataset: Dataset
    abstraction: FiniteAbstraction
    gamma_tilde_set: tuple[float, ...]
    rho_tilde: float | None = None      # None makes rho_t a decision variable
    rho_tilde_max: float = 100.0
    sigma_floor: float = 1e-9
    sigma_max: float = 1e9

    def __post_init__(self) -> None:
        if len(self.dataset) == 0:
            raise ValueError("dataset must be nonempty")
        if self.template.dimension != self.abstraction.grid.dimension:
            raise ValueError("template and grid dimensions disagree")
        if self.dataset.dimension != self.abstraction.grid.dimension:
            raise ValueError("dataset and grid dimensions disagree")
        if not np.array_equal(self.dataset.inputs.vectors, self.abstraction.inputs.vectors):
            raise ValueError("dataset and abstraction must share one input set")
        gs = tuple(float(g) for g in self.gamma_tilde_set)
        if not gs or any(not 0.0 < g < 1.0 for g in gs):
            raise ValueError("gamma_tilde candidates must lie strictly inside (0, 1)")
        object.__setattr__(self, "gamma_tilde_set", gs)
        if self.rho_tilde is not None and self.rho_tilde < 0.0:
            raise ValueError("a fixed rho_tilde must be nonnegative")
        if not 0.0 < self.sigma_floor <= self.sigma_max:
            raise ValueError("need 0 < sigma_floor <= sigma_max")

    @property
    def free_rho(self) -> bool:
        return self.rho_tilde is None

    @property
    def decision_count(self) -> int:
        """Free decision variables: sigma, the coefficients, and rho_t if free."""
        return 1 + self.template.size + (1 if self.free_rho else 0)

    # decision vector layout: [sigma, eta_0..eta_{z-1}, (rho_t), mu]
    @property
    def n_vars(self) -> int:
        return self.decision_count + 1

    @property
    def constraint_count(self) -> tuple[int, int]:
        """(family-1 count, family-2 count); family 2 omits out-sink successors."""
        n = self.dataset.sample_count
        s = self.abstraction.n_states
        valid = int(np.sum(self.abstraction.transitions != self.abstraction.out_index))
        return n * s, n * valid

    def manifest(self) -> dict:
        f1, f2 = self.constraint_count
        return {
            "template": self.template.descriptor(),
            "gamma_tilde_set": list(self.gamma_tilde_set),
            "rho_tilde": self.rho_tilde,
            "rho_tilde_max": self.rho_tilde_max,
            "sigma_floor": self.sigma_floor,
            "sigma_max": self.sigma_max,
            "sample_count": self.dataset.sample_count,
            "input_count": self.dataset.inputs.count,
            "abstract_states": self.abstraction.n_states,
            "constraints_family1": f1,
            "constraints_family2": f2,
        }


@dataclasses.dataclass(frozen=True)
class SolveReport:
    """Outcome of one scenario solve (verdict fields filled separately)."""

    mu_star: float
    best_k: int
    gamma_tilde: float
    sigma: float
    eta: np.ndarray
    rho_tilde: float
    mu_per_gamma: tuple[float, ...]
    constraints_total: int
    constraints_active: int
    sample_count: int
    template: abf.AbfTemplate
    verdict: bool | None = None
    confidence: float | None = None
    epsilon_used: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        eta = np.asarray(self.eta, dtype=float)
        eta.setflags(write=False)
        object.__setattr__(self, "eta", eta)

    def with_verdict(self, epsilon: Sequence[float], beta: float) -> "SolveReport":
        eps = tuple(float(e) for e in epsilon)
        ok = self.mu_star + max(eps) <= 0.0
        return dataclasses.replace(
            self,
            verdict=ok,
            confidence=(1.0 - float(beta)) if ok else None,
            epsilon_used=eps,
        )

    def to_json_dict(self) -> dict:
        return {
            "mu_star": self.mu_star,
            "best_k": self.best_k,
            "gamma_tilde": self.gamma_tilde,
            "sigma": self.sigma,
            "eta": self.eta.tolist(),
            "rho_tilde": self.rho_tilde,
            "mu_per_gamma": list(self.mu_per_gamma),
            "constraints_total": self.constraints_total,
            "constraints_active": self.constraints_active,
            "sample_count": self.sample_count,
            "template": self.template.descriptor(),
            "verdict": self.verdict,
            "confidence": self.confidence,
            "epsilon_used": None if self.epsilon_used is None else list(self.epsilon_used),
        }


@dataclasses.dataclass(frozen=True)
class Rejection:
    """Failed verdict: the optimum plus the worst threshold stayed positive."""

    mu_star: float
    max_epsilon: float

    @property
    def slack(self) -> float:
        return self.mu_star + self.max_epsilon


class _Workspace:
    """Precomputed geometry and (when affordable) cached basis tensors."""

    def __init__(self, problem: ScenarioProblem, cache_limit: float = 4e7) -> None:
        self.problem = problem
        ds = problem.dataset
        grid = problem.abstraction.grid
        self.X = ds.states                                   # (N, n)
        self.XN = ds.successors                              # (N, M, n)
        self.reps = representatives(grid)                    # (S, n)
        self.succ = problem.abstraction.transitions          # (S, M)
        self.mask = self.succ != problem.abstraction.out_index
        self.succ_reps = self.reps[np.where(self.mask, self.succ, 0)]  # (S, M, n)
        self.N = ds.sample_count
        self.S = grid.n_states
        self.M = ds.inputs.count
        self.z = problem.template.size
        self.f1_count = self.N * self.S
        self.template = problem.template

        self.cache_q1 = self.N * self.S * (self.z + 1) <= cache_limit
        self.cache_qn = self.N * self.S * self.M * self.z <= cache_limit
        if self.cache_q1:
            diff = self.X[:, None, :] - self.reps[None, :, :]
            self.SQD = np.einsum("isk,isk->is", diff, diff)
            self.Q1 = self.template.basis_matrix(self.X[:, None, :], self.reps[None, :, :])
        if self.cache_qn:
            self.QN = self.template.basis_matrix(
                self.XN[:, None, :, :], self.succ_reps[None, :, :, :]
            )
        # sample-block size for streamed scans
        per_sample = self.S * max(self.M, 1) * (self.z + 2)
        self.block = max(1, int(cache_limit // max(per_sample, 1)))

    # -- scalar accessors (used for row assembly and the per-id API) --------

    def sqd_at(self, i: int, s: int) -> float:
        if self.cache_q1:
            return float(self.SQD[i, s])
        d = self.X[i] - self.reps[s]
        return float(d @ d)

    def q1_at(self, i: int, s: int) -> np.ndarray:
        if self.cache_q1:
            return self.Q1[i, s]
        return self.template.basis_matrix(self.X[i], self.reps[s])

    def qn_at(self, i: int, s: int, u: int) -> np.ndarray:
        if self.cache_qn:
            return self.QN[i, s, u]
        return self.template.basis_matrix(self.XN[i, u], self.succ_reps[s, u])

    # -- streamed violation scan --------------------------------------------

    def scan(
        self,
        gamma: float,
        sigma: float,
        eta: np.ndarray,
        rho: float,
        mu: float,
        top_k: int,
        exclude: set[int],
    ) -> tuple[float, list[int]]:
        """Worst constraint violations at a decision point.

        Returns the maximum violation and up to ``top_k`` violating ids,
        ordered by decreasing violation (ties by id) and filtered against
        ``exclude``.
        """
        best: list[tuple[float, int]] = []
        max_viol = -np.inf
        S, M = self.S, self.M
        flat_mask = self.mask.ravel()
        for lo in range(0, self.N, self.block):
            hi = min(self.N, lo + self.block)
            if self.cache_q1:
                sqd = self.SQD[lo:hi]
                q1 = self.Q1[lo:hi]
            else:
                diff = self.X[lo:hi, None, :] - self.reps[None, :, :]
                sqd = np.einsum("isk,isk->is", diff, diff)
                q1 = self.template.basis_matrix(
                    self.X[lo:hi, None, :], self.reps[None, :, :]
                )
            v1 = q1 @ eta
            phi1 = sigma * sqd - v1 - mu                      # (b, S)
            if self.cache_qn:
                qn = self.QN[lo:hi]
            else:
                qn = self.template.basis_matrix(
                    self.XN[lo:hi, None, :, :], self.succ_reps[None, :, :, :]
                )
            phi2 = qn @ eta - gamma * v1[:, :, None] - rho - mu  # (b, S, M)
            phi2 = phi2.reshape(hi - lo, S * M)
            phi2[:, ~flat_mask] = -np.inf

            for values, offset, width in (
                (phi1.ravel(), lo * S, S),
                (phi2.ravel(), self.f1_count + lo * S * M, S * M),
            ):
                if values.size == 0:
                    continue
                block_max = float(np.max(values))
                max_viol = max(max_viol, block_max)
                if block_max <= _VIOLATION_TOL:
                    continue
                k = min(top_k, values.size)
                idx = np.argpartition(values, -k)[-k:]
                for j in idx:
                    v = float(values[j])
                    if v > _VIOLATION_TOL:
                        best.append((v, offset + int(j)))
        best.sort(key=lambda t: (-t[0], t[1]))
        picked: list[int] = []
        for _, cid in best:
            if cid not in exclude and cid not in picked:
                picked.append(cid)
            if len(picked) >= top_k:
                break
        return max_viol, picked

    # -- LP row assembly ------------------------------------------------------

    def decode(self, constraint_id: int) -> tuple[int, int, int, int]:
        """(family, sample, state, input); input is -1 for family 1."""
        total = self.f1_count + self.N * self.S * self.M
        if not 0 <= constraint_id < total:
            raise IndexError(f"constraint id {constraint_id} out of range [0, {total})")
        if constraint_id < self.f1_count:
            i, s = divmod(constraint_id, self.S)
            return 1, i, s, -1
        rem = constraint_id - self.f1_count
        isq, u = divmod(rem, self.M)
        i, s = divmod(isq, self.S)
        return 2, i, s, u

    def row(
        self, constraint_id: int, gamma: float, include_mu: bool, mu_fixed: float = 0.0
    ) -> tuple[np.ndarray, float]:
        """Affine row ``a . w <= b`` for one scenario constraint."""
        problem = self.problem
        z = self.z
        nv = problem.n_vars if include_mu else problem.n_vars - 1
        a = np.zeros(nv)
        family, i, s, u = self.decode(constraint_id)
        if family == 1:
            a[0] = self.sqd_at(i, s)
            a[1:1 + z] = -self.q1_at(i, s)
            rhs = 0.0
        else:
            if not self.mask[s, u]:
                raise OutOfDomainError(
                    "constraint excluded: abstract successor leaves the state box"
                )
            a[1:1 + z] = self.qn_at(i, s, u) - gamma * self.q1_at(i, s)
            if problem.free_rho:
                a[1 + z] = -1.0
                rhs = 0.0
            else:
                rhs = float(problem.rho_tilde)
        if include_mu:
            a[-1] = -1.0
        else:
            rhs += mu_fixed
        return a, rhs

    def seed_ids(self) -> list[int]:
        """Small deterministic spread of constraints to bootstrap the LP."""
        ids: list[int] = []
        samples = np.unique(np.linspace(0, self.N - 1, num=min(4, self.N), dtype=int))
        states = np.unique(np.linspace(0, self.S - 1, num=min(2, self.S), dtype=int))
        for i in samples:
            for s in states:
                ids.append(int(i) * self.S + int(s))
                valid = np.flatnonzero(self.mask[s])
                if valid.size:
                    u = int(valid[0])
                    ids.append(self.f1_count + (int(i) * self.S + int(s)) * self.M + u)
        return ids


def constraint_value(
    problem: ScenarioProblem,
    gamma_tilde: float,
    decision,
    constraint_id: int,
) -> float:
    """Value of one scenario constraint, ``phi_j(...) - mu``, at a decision point.

    ``decision`` is laid out as ``[sigma, eta..., (rho_t), mu]``; when the
    problem fixes ``rho_t`` the vector omits that slot.
    """
    w = np.asarray(decision, dtype=float)
    if w.shape != (problem.n_vars,):
        raise ValueError(f"decision vector must have length {problem.n_vars}")
    ws = _Workspace(problem, cache_limit=0)
    z = problem.template.size
    sigma = float(w[0])
    eta = w[1:1 + z]
    rho = float(w[1 + z]) if problem.free_rho else float(problem.rho_tilde)
    mu = float(w[-1])
    family, i, s, u = ws.decode(constraint_id)
    x = problem.dataset.states[i]
    x_hat = ws.reps[s]
    if family == 1:
        return abf.phi1(problem.template, sigma, eta, x, x_hat) - mu
    if not ws.mask[s, u]:
        raise OutOfDomainError(
            "constraint excluded: abstract successor leaves the state box"
        )
    x_next = problem.dataset.successors[i, u]
    xhat_next = ws.succ_reps[s, u]
    return (
        abf.phi2(problem.template, eta, gamma_tilde, rho, x_next, xhat_next, x, x_hat)
        - mu
    )


def _check_coefficient_feasibility(problem: ScenarioProblem) -> None:
    """Fail early, with a name, if the coefficient constraints are empty."""
    box = problem.template.coefficient_box
    for j in range(problem.template.size):
        if box[j, 0] > box[j, 1]:
            raise LpInfeasibleError(f"coefficient {j} has an empty interval bound")
    rows = problem.template.positivity_rows()
    if not rows:
        return
    a = np.stack([r[0] for r in rows])
    b = np.array([r[1] for r in rows])
    res = solve_lp(np.zeros(problem.template.size), a, b, box[:, 0], box[:, 1])
    if res.status == INFEASIBLE:
        raise LpInfeasibleError(
            "positive-definiteness rows are incompatible with the coefficient box"
        )


def _assemble(
    ws: _Workspace,
    ids: Sequence[int],
    gamma: float,
    include_mu: bool,
    mu_fixed: float = 0.0,
) -> tuple[np.ndarray, np.ndarray]:
    problem = ws.problem
    nv = problem.n_vars if include_mu else problem.n_vars - 1
    z = problem.template.size
    rows = []
    rhs = []
    for cid in ids:
        a, b = ws.row(cid, gamma, include_mu, mu_fixed)
        rows.append(a)
        rhs.append(b)
    for a_eta, b in problem.template.positivity_rows():
        a = np.zeros(nv)
        a[1:1 + z] = a_eta
        rows.append(a)
        rhs.append(b)
    return np.stack(rows), np.asarray(rhs)


def _bounds(problem: ScenarioProblem, include_mu: bool) -> tuple[np.ndarray, np.ndarray]:
    box = problem.template.coefficient_box
    lower = [problem.sigma_floor, *box[:, 0]]
    upper = [problem.sigma_max, *box[:, 1]]
    if problem.free_rho:
        lower.append(0.0)
        upper.append(problem.rho_tilde_max)
    if include_mu:
        lower.append(-np.inf)
        upper.append(np.inf)
    return np.asarray(lower), np.asarray(upper)


def _unpack(problem: ScenarioProblem, w: np.ndarray) -> tuple[float, np.ndarray, float]:
    z = problem.template.size
    sigma = float(w[0])
    eta = np.array(w[1:1 + z])
    rho = float(w[1 + z]) if problem.free_rho else float(problem.rho_tilde)
    return sigma, eta, rho


def solve_sop(
    problem: ScenarioProblem,
    top_k: int = 64,
    cache_limit: float = 4e7,
) -> SolveReport:
    """Solve the scenario program by exchange-style constraint generation.

    Each decay candidate gets an independent LP sequence; the reported
    solution carries the smallest optimum (ties to the smallest candidate)
    and is refined by a second pass that maximizes ``sigma`` at that optimum.
    Identical inputs reproduce the report bit for bit.
    """
    _check_coefficient_feasibility(problem)
    ws = _Workspace(problem, cache_limit=cache_limit)
    lb, ub = _bounds(problem, include_mu=True)
    c = np.zeros(problem.n_vars)
    c[-1] = 1.0

    per_gamma: list[tuple[float, np.ndarray, list[int]]] = []
    for gamma in problem.gamma_tilde_set:
        working = list(dict.fromkeys(ws.seed_ids()))
        solution = None
        for _ in range(_MAX_ROUNDS):
            a, b = _assemble(ws, working, gamma, include_mu=True)
            res = solve_lp(c, a, b, lb, ub)
            if res.status == INFEASIBLE:
                raise LpInfeasibleError(
                    "scenario LP infeasible under the coefficient constraints"
                )
            if res.status == UNBOUNDED:
                raise TemplateError(
                    "scenario LP unbounded: the template must bound sigma and "
                    "every coefficient"
                )
            w = res.x
            sigma, eta, rho = _unpack(problem, w)
            mu = float(w[-1])
            max_viol, fresh = ws.scan(
                gamma, sigma, eta, rho, mu, top_k, exclude=set(working)
            )
            if max_viol <= _VIOLATION_TOL or not fresh:
                solution = (mu, w, working)
                break
            working.extend(fresh)
        if solution is None:
            raise RuntimeError("constraint generation did not converge")
        per_gamma.append(solution)

    mu_values = [mu for mu, _, _ in per_gamma]
    best_k = min(
        range(len(per_gamma)),
        key=lambda k: (mu_values[k], problem.gamma_tilde_set[k]),
    )
    gamma_best = problem.gamma_tilde_set[best_k]
    mu_star, w_best, working = per_gamma[best_k]

    # Second pass: keep mu at its optimum (tiny slack guards float ties) and
    # push sigma as high as the constraints allow.
    mu_fixed = mu_star + 2.0 * _VIOLATION_TOL
    lb2, ub2 = _bounds(problem, include_mu=False)
    c2 = np.zeros(problem.n_vars - 1)
    c2[0] = -1.0
    working2 = list(working)
    w2 = w_best[:-1]
    for _ in range(_MAX_ROUNDS):
        a, b = _assemble(ws, working2, gamma_best, include_mu=False, mu_fixed=mu_fixed)
        res = solve_lp(c2, a, b, lb2, ub2)
        if res.status != OPTIMAL:
            break  # keep the first-pass solution
        w2 = res.x
        sigma, eta, rho = _unpack(problem, w2)
        max_viol, fresh = ws.scan(
            gamma_best, sigma, eta, rho, mu_fixed, top_k, exclude=set(working2)
        )
        if max_viol <= _VIOLATION_TOL or not fresh:
            break
        working2.extend(fresh)

    sigma, eta, rho = _unpack(problem, w2)
    w_full = np.concatenate([w2, [mu_star]])
    a, b = _assemble(ws, working2, gamma_best, include_mu=True)
    residuals = a @ w_full - b
    active = int(np.sum(np.abs(residuals) <= _ACTIVE_TOL))
    f1, f2 = problem.constraint_count

    return SolveReport(
        mu_star=mu_star,
        best_k=best_k,
        gamma_tilde=gamma_best,
        sigma=sigma,
        eta=eta,
        rho_tilde=rho,
        mu_per_gamma=tuple(mu_values),
        constraints_total=f1 + f2,
        constraints_active=active,
        sample_count=problem.dataset.sample_count,
        template=problem.template,
    )


def verdict(
    report: SolveReport,
    epsilon: Sequence[float],
    beta: float,
    psi: float | None = None,
) -> abf.AbfCertificate | Rejection:
    """Accept or reject the solved program at the given thresholds.

    Acceptance requires ``mu_star + max_k epsilon_k <= 0`` (non-strict). On
    success the implication-form pair is converted to max-form constants
    using ``psi`` (default: the value that makes the recovered decay 0.99)
    and packaged with confidence ``1 - beta``.
    """
    eps = tuple(float(e) for e in epsilon)
    if not eps or any(e < 0 for e in eps):
        raise ValueError("epsilon must be a nonempty list of nonnegative thresholds")
    if not 0.0 <= beta <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    slack = report.mu_star + max(eps)
    if slack > 0.0:
        return Rejection(mu_star=report.mu_star, max_epsilon=max(eps))
    if psi is None:
        psi = abf.default_psi(report.gamma_tilde)
    return abf.AbfCertificate.build(
        template=report.template,
        eta=report.eta,
        sigma=report.sigma,
        gamma_tilde=report.gamma_tilde,
        rho_tilde=report.rho_tilde,
        psi=psi,
        confidence=1.0 - float(beta),
        sample_count=report.sample_count,
        epsilon=eps,
        beta=beta,
    )


def write_report(report: SolveReport, path) -> None:
    with open(path, "w") as fh:
        json.dump(report.to_json_dict(), fh, indent=2)
        fh.write("\n")


def write_problem_manifest(problem: ScenarioProblem, path) -> None:
    with open(path, "w") as fh:
        json.dump(problem.manifest(), fh, indent=2)
        fh.write("\n")
