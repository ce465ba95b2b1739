"""Candidate-function templates, closeness certificates, and their algebra.

A candidate function has the parametric form ``V(eta, x, xhat) =
sum_j eta_j * q_j(x, xhat)`` with user-chosen basis terms ``q_j`` and
coefficients ``eta`` constrained to a bounded box. Two constraint functions
drive the whole construction::

    phi1 = sigma * ||x - xhat||^2 - V(eta, x, xhat)
    phi2 = V(eta, x_next, xhat_next) - gamma_t * V(eta, x, xhat) - rho_t

where the successors are observed (never recomputed from a model). Both are
affine in the decision variables ``(sigma, eta, rho_t)`` for a fixed decay
candidate ``gamma_t``, which is what makes the scenario program a linear
program.

From a solved ``(gamma_t, rho_t)`` pair the max-form decay/offset constants
are recovered, for any mixing parameter ``0 < psi < 1``, as::

    gamma = 1 - (1 - psi) * (1 - gamma_t)
    rho   = rho_t / ((1 - gamma_t) * psi)

and the guaranteed state-matching precision is ``epsilon_t = sqrt(rho / sigma)``.
The induced relation is the sublevel set ``{(x, xhat) : V(x, xhat) <= rho}``.
"""
from __future__ import annotations

import ast
import dataclasses
import itertools
import json
import math
from typing import Sequence

import numpy as np

from .errors import NumericError, TemplateError

__all__ = [
    "BasisFunction",
    "AbfTemplate",
    "AbfCertificate",
    "quadratic_form_template",
    "diagonal_even_power_template",
    "custom_template",
    "eval_V",
    "phi1",
    "phi2",
    "recover_gamma_rho",
    "psi_for_target_gamma",
    "default_psi",
    "epsilon_tilde",
    "in_relation",
    "write_certificate",
    "read_certificate",
]

_ALLOWED_NODES = (
    ast.Expression,
    ast.BinOp,
    ast.UnaryOp,
    ast.Constant,
    ast.Name,
    ast.Load,
    ast.Add,
    ast.Sub,
    ast.Mult,
    ast.Div,
    ast.Pow,
    ast.USub,
    ast.UAdd,
)


class BasisFunction:
    """One closed-form basis term, evaluable pointwise and on batches.

    Expressions use ``x1..xn`` for the concrete state, ``xh1..xhn`` for the
    abstract state, numeric literals, and ``+ - * / **`` arithmetic only.
    """

    __slots__ = ("expression", "dimension", "_code")

    def __init__(self, expression: str, dimension: int) -> None:
        self.expression = str(expression)
        self.dimension = int(dimension)
        names = {f"x{i + 1}" for i in range(dimension)} | {
            f"xh{i + 1}" for i in range(dimension)
        }
        try:
            tree = ast.parse(self.expression, mode="eval")
        except SyntaxError as exc:
            raise TemplateError(f"cannot parse basis expression {expression!r}") from exc
        for node in ast.walk(tree):
            if not isinstance(node, _ALLOWED_NODES):
                raise TemplateError(
                    f"unsupported syntax {type(node).__name__!r} in {expression!r}"
                )
            if isinstance(node, ast.Name) and node.id not in names:
                raise TemplateError(f"unknown name {node.id!r} in {expression!r}")
            if isinstance(node, ast.Constant) and not isinstance(node.value, (int, float)):
                raise TemplateError(f"non-numeric constant in {expression!r}")
        self._code = compile(tree, "<basis>", "eval")

    def _env(self, x, x_hat) -> dict:
        env = {}
        for i in range(self.dimension):
            env[f"x{i + 1}"] = x[..., i]
            env[f"xh{i + 1}"] = x_hat[..., i]
        return env

    def evaluate(self, x, x_hat) -> float:
        x = np.asarray(x, dtype=float)
        x_hat = np.asarray(x_hat, dtype=float)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            value = float(eval(self._code, {"__builtins__": {}}, self._env(x, x_hat)))
        if not math.isfinite(value):
            raise NumericError(f"basis term {self.expression!r} evaluated to {value}")
        return value

    def evaluate_batch(self, x: np.ndarray, x_hat: np.ndarray) -> np.ndarray:
        """Row-wise evaluation; inputs broadcast against each other."""
        x = np.asarray(x, dtype=float)
        x_hat = np.asarray(x_hat, dtype=float)
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            out = eval(self._code, {"__builtins__": {}}, self._env(x, x_hat))
        shape = np.broadcast_shapes(x.shape[:-1], x_hat.shape[:-1])
        return np.broadcast_to(np.asarray(out, dtype=float), shape).copy()

    def __repr__(self) -> str:
        return f"BasisFunction({self.expression!r}, dimension={self.dimension})"


@dataclasses.dataclass(frozen=True)
class AbfTemplate:
    """Parametric candidate-function family with a bounded coefficient box.

    ``kind`` is one of ``quadratic_form``, ``diagonal_even_power``, or
    ``custom``. The first two carry enough structure to bound the largest
    eigenvalue of the associated quadratic-form matrix from the coefficient
    box; custom templates do not.
    """

    kind: str
    dimension: int
    basis: tuple[BasisFunction, ...]
    coefficient_box: np.ndarray
    power: int | None = None
    pd_margin: float = 0.0

    def __post_init__(self) -> None:
        if self.kind not in ("quadratic_form", "diagonal_even_power", "custom"):
            raise TemplateError(f"unknown template kind {self.kind!r}")
        if len(self.basis) < 1:
            raise TemplateError("template needs at least one basis term")
        box = np.asarray(self.coefficient_box, dtype=float)
        if box.shape != (len(self.basis), 2):
            raise TemplateError("coefficient_box must have shape (z, 2)")
        if not np.all(np.isfinite(box)):
            raise TemplateError("coefficient_box must be bounded")
        if np.any(box[:, 0] > box[:, 1]):
            raise TemplateError("coefficient_box has an empty interval")
        box = np.array(box, copy=True)
        box.setflags(write=False)
        object.__setattr__(self, "coefficient_box", box)
        object.__setattr__(self, "basis", tuple(self.basis))

    @property
    def size(self) -> int:
        return len(self.basis)

    def basis_matrix(self, x: np.ndarray, x_hat: np.ndarray) -> np.ndarray:
        """Stack basis evaluations: output shape ``broadcast(...) + (z,)``."""
        cols = [q.evaluate_batch(x, x_hat) for q in self.basis]
        return np.stack(cols, axis=-1)

    # -- structure used by the eigenvalue / sample-count machinery ----------

    def p_entry_intervals(self) -> np.ndarray | None:
        """Entry-wise intervals of the symmetric quadratic-form matrix.

        Shape ``(n, n, 2)``. For the diagonal family the coefficients map to
        the diagonal (the constant term, when present, is excluded); for the
        full quadratic form the off-diagonal coefficient is split across the
        two symmetric entries. Custom templates return ``None``.
        """
        n = self.dimension
        box = self.coefficient_box
        if self.kind == "diagonal_even_power":
            out = np.zeros((n, n, 2))
            for i in range(n):
                out[i, i] = box[i]
            return out
        if self.kind == "quadratic_form":
            out = np.zeros((n, n, 2))
            k = 0
            for i in range(n):
                for j in range(i, n):
                    if i == j:
                        out[i, i] = box[k]
                    else:
                        out[i, j] = box[k] / 2.0
                        out[j, i] = box[k] / 2.0
                    k += 1
            return out
        return None

    def positivity_rows(self) -> list[tuple[np.ndarray, float]]:
        """Linear rows ``a . eta <= b`` enforcing positive definiteness.

        Only the full quadratic form needs them: strict diagonal dominance,
        written out for every sign pattern of the off-diagonal entries (an
        exact linearization, exponential in n, fine for low dimensions).
        """
        if self.kind != "quadratic_form":
            return []
        n = self.dimension
        index = {}
        k = 0
        for i in range(n):
            for j in range(i, n):
                index[(i, j)] = k
                k += 1
        rows: list[tuple[np.ndarray, float]] = []
        for i in range(n):
            others = [j for j in range(n) if j != i]
            for signs in itertools.product((-1.0, 1.0), repeat=len(others)):
                a = np.zeros(self.size)
                a[index[(i, i)]] = -1.0
                for s, j in zip(signs, others):
                    key = (min(i, j), max(i, j))
                    a[index[key]] += s * 0.5
                rows.append((a, -float(self.pd_margin)))
        return rows

    # -- serialization -------------------------------------------------------

    def descriptor(self) -> dict:
        return {
            "kind": self.kind,
            "dimension": self.dimension,
            "expressions": [q.expression for q in self.basis],
            "coefficient_box": self.coefficient_box.tolist(),
            "power": self.power,
            "pd_margin": self.pd_margin,
        }

    @classmethod
    def from_descriptor(cls, data: dict) -> "AbfTemplate":
        dim = int(data["dimension"])
        basis = tuple(BasisFunction(e, dim) for e in data["expressions"])
        return cls(
            kind=data["kind"],
            dimension=dim,
            basis=basis,
            coefficient_box=np.asarray(data["coefficient_box"], dtype=float),
            power=data.get("power"),
            pd_margin=float(data.get("pd_margin", 0.0)),
        )


def quadratic_form_template(
    dimension: int, entry_bound: float = 0.2, pd_margin: float = 1e-6
) -> AbfTemplate:
    """Full quadratic form ``(x - xhat)^T P (x - xhat)`` with box-bounded entries.

    Coefficients are the independent entries of symmetric ``P``, diagonal
    first within each row (``d_i * d_j`` basis terms carry ``2 * P_ij`` for
    ``i < j``).
    """
    exprs = []
    for i in range(dimension):
        for j in range(i, dimension):
            exprs.append(f"(x{i + 1} - xh{i + 1})*(x{j + 1} - xh{j + 1})")
    z = len(exprs)
    box = np.tile([-abs(entry_bound), abs(entry_bound)], (z, 1))
    basis = tuple(BasisFunction(e, dimension) for e in exprs)
    return AbfTemplate("quadratic_form", dimension, basis, box, pd_margin=pd_margin)


def diagonal_even_power_template(
    dimension: int,
    power: int = 2,
    coefficient_min: float = -0.2,
    coefficient_max: float = 0.2,
    include_constant: bool = True,
) -> AbfTemplate:
    """Per-axis even powers of the state mismatch plus an optional constant."""
    if power < 2 or power % 2 != 0:
        raise TemplateError("power must be an even integer >= 2")
    exprs = [f"(x{i + 1} - xh{i + 1})**{power}" for i in range(dimension)]
    if include_constant:
        exprs.append("1")
    basis = tuple(BasisFunction(e, dimension) for e in exprs)
    box = np.tile([float(coefficient_min), float(coefficient_max)], (len(exprs), 1))
    return AbfTemplate("diagonal_even_power", dimension, basis, box, power=power)


def custom_template(
    dimension: int, expressions: Sequence[str], coefficient_box
) -> AbfTemplate:
    basis = tuple(BasisFunction(e, dimension) for e in expressions)
    return AbfTemplate(
        "custom", dimension, basis, np.asarray(coefficient_box, dtype=float)
    )


# ---------------------------------------------------------------------------
# Pointwise algebra
# ---------------------------------------------------------------------------


def eval_V(template: AbfTemplate, eta, x, x_hat) -> float:
    """Weighted basis sum ``sum_j eta_j q_j(x, xhat)``."""
    eta = np.asarray(eta, dtype=float)
    if eta.shape != (template.size,):
        raise ValueError(f"eta must have length {template.size}")
    x = np.asarray(x, dtype=float)
    x_hat = np.asarray(x_hat, dtype=float)
    value = float(template.basis_matrix(x, x_hat) @ eta)
    if not math.isfinite(value):
        raise NumericError("candidate function evaluated to a non-finite value")
    return value


def phi1(template: AbfTemplate, sigma: float, eta, x, x_hat) -> float:
    """Lower-bound defect ``sigma ||x - xhat||^2 - V``; feasible when <= 0."""
    x = np.asarray(x, dtype=float)
    x_hat = np.asarray(x_hat, dtype=float)
    gap = float(np.dot(x - x_hat, x - x_hat))
    return float(sigma) * gap - eval_V(template, eta, x, x_hat)


def phi2(
    template: AbfTemplate,
    eta,
    gamma_tilde: float,
    rho_tilde: float,
    x_next,
    xhat_next,
    x,
    x_hat,
) -> float:
    """Decay defect at observed successors; feasible when <= 0.

    ``x_next`` is the measured concrete successor and ``xhat_next`` the
    tabulated abstract one; this function never queries any dynamics.
    """
    v_next = eval_V(template, eta, x_next, xhat_next)
    v_now = eval_V(template, eta, x, x_hat)
    return v_next - float(gamma_tilde) * v_now - float(rho_tilde)


def recover_gamma_rho(gamma_tilde: float, rho_tilde: float, psi: float) -> tuple[float, float]:
    """Max-form constants from the implication-form pair, for any ``0 < psi < 1``."""
    if not 0.0 < psi < 1.0:
        raise ValueError("psi must lie strictly inside (0, 1)")
    if not 0.0 < gamma_tilde < 1.0:
        raise ValueError("gamma_tilde must lie strictly inside (0, 1)")
    if rho_tilde < 0.0:
        raise ValueError("rho_tilde must be nonnegative")
    gamma = 1.0 - (1.0 - psi) * (1.0 - gamma_tilde)
    rho = rho_tilde / ((1.0 - gamma_tilde) * psi)
    return float(gamma), float(rho)


def psi_for_target_gamma(gamma_tilde: float, gamma_target: float = 0.99) -> float:
    """The mixing parameter that makes the recovered decay equal ``gamma_target``."""
    if not 0.0 < gamma_tilde < 1.0:
        raise ValueError("gamma_tilde must lie strictly inside (0, 1)")
    if not gamma_tilde < gamma_target < 1.0:
        raise ValueError("gamma_target must lie strictly between gamma_tilde and 1")
    return 1.0 - (1.0 - gamma_target) / (1.0 - gamma_tilde)


def default_psi(gamma_tilde: float) -> float:
    """Mixing parameter used when none is configured: recover decay 0.99.

    Falls back to 1/2 when the solved candidate already exceeds 0.99.
    """
    if gamma_tilde < 0.99:
        return psi_for_target_gamma(gamma_tilde, 0.99)
    return 0.5


def epsilon_tilde(rho: float, sigma: float) -> float:
    """Guaranteed matching precision ``sqrt(rho / sigma)``."""
    if not sigma > 0.0:
        raise ValueError("sigma must be positive")
    if rho < 0.0:
        raise ValueError("rho must be nonnegative")
    return math.sqrt(rho / sigma)


@dataclasses.dataclass(frozen=True)
class AbfCertificate:
    """A solved candidate function together with its derived guarantees.

    Invariants: ``gamma = 1 - (1 - psi) (1 - gamma_tilde)``,
    ``rho = rho_tilde / ((1 - gamma_tilde) psi)``, and
    ``epsilon_tilde = sqrt(rho / sigma)``.
    """

    template: AbfTemplate
    eta: np.ndarray
    sigma: float
    gamma_tilde: float
    rho_tilde: float
    psi: float
    gamma: float
    rho: float
    epsilon_tilde: float
    confidence: float
    sample_count: int | None = None
    epsilon: tuple[float, ...] | None = None
    beta: float | None = None

    def __post_init__(self) -> None:
        eta = np.asarray(self.eta, dtype=float)
        eta.setflags(write=False)
        object.__setattr__(self, "eta", eta)
        g, r = recover_gamma_rho(self.gamma_tilde, self.rho_tilde, self.psi)
        if not (math.isclose(g, self.gamma, rel_tol=1e-9, abs_tol=1e-12)
                and math.isclose(r, self.rho, rel_tol=1e-9, abs_tol=1e-12)):
            raise ValueError("gamma/rho are inconsistent with gamma_tilde, rho_tilde, psi")
        e = epsilon_tilde(self.rho, self.sigma)
        if not math.isclose(e, self.epsilon_tilde, rel_tol=1e-9, abs_tol=1e-12):
            raise ValueError("epsilon_tilde is inconsistent with rho and sigma")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must lie in [0, 1]")

    @classmethod
    def build(
        cls,
        template: AbfTemplate,
        eta,
        sigma: float,
        gamma_tilde: float,
        rho_tilde: float,
        psi: float,
        confidence: float,
        sample_count: int | None = None,
        epsilon: Sequence[float] | None = None,
        beta: float | None = None,
    ) -> "AbfCertificate":
        gamma, rho = recover_gamma_rho(gamma_tilde, rho_tilde, psi)
        return cls(
            template=template,
            eta=np.asarray(eta, dtype=float),
            sigma=float(sigma),
            gamma_tilde=float(gamma_tilde),
            rho_tilde=float(rho_tilde),
            psi=float(psi),
            gamma=gamma,
            rho=rho,
            epsilon_tilde=epsilon_tilde(rho, sigma),
            confidence=float(confidence),
            sample_count=None if sample_count is None else int(sample_count),
            epsilon=None if epsilon is None else tuple(float(e) for e in epsilon),
            beta=None if beta is None else float(beta),
        )

    def to_json_dict(self) -> dict:
        return {
            "template": self.template.descriptor(),
            "eta": self.eta.tolist(),
            "sigma": self.sigma,
            "gamma_tilde": self.gamma_tilde,
            "rho_tilde": self.rho_tilde,
            "psi": self.psi,
            "gamma": self.gamma,
            "rho": self.rho,
            "epsilon_tilde": self.epsilon_tilde,
            "confidence": self.confidence,
            "sample_count": self.sample_count,
            "epsilon": None if self.epsilon is None else list(self.epsilon),
            "beta": self.beta,
        }

    @classmethod
    def from_json_dict(cls, data: dict) -> "AbfCertificate":
        return cls(
            template=AbfTemplate.from_descriptor(data["template"]),
            eta=np.asarray(data["eta"], dtype=float),
            sigma=float(data["sigma"]),
            gamma_tilde=float(data["gamma_tilde"]),
            rho_tilde=float(data["rho_tilde"]),
            psi=float(data["psi"]),
            gamma=float(data["gamma"]),
            rho=float(data["rho"]),
            epsilon_tilde=float(data["epsilon_tilde"]),
            confidence=float(data["confidence"]),
            sample_count=None if data.get("sample_count") is None else int(data["sample_count"]),
            epsilon=None if data.get("epsilon") is None else tuple(data["epsilon"]),
            beta=None if data.get("beta") is None else float(data["beta"]),
        )


def in_relation(certificate: AbfCertificate, x, x_hat) -> bool:
    """Membership test of the sublevel-set relation ``V(x, xhat) <= rho``."""
    return eval_V(certificate.template, certificate.eta, x, x_hat) <= certificate.rho


def write_certificate(certificate: AbfCertificate, path) -> None:
    with open(path, "w") as fh:
        json.dump(certificate.to_json_dict(), fh, indent=2)
        fh.write("\n")


def read_certificate(path) -> AbfCertificate:
    with open(path) as fh:
        return AbfCertificate.from_json_dict(json.load(fh))
