"""Run configuration: flat key-value files with dotted section keys.

A config file holds ``section.key = value`` lines (``#`` starts a comment).
Values are scalars, space-separated lists, or semicolon-separated vectors.
Two profiles preset every key for the built-in plants: ``desk`` keeps all
stages small enough for a workstation run in minutes, ``paper`` selects the
full-scale study parameters and is explicitly long-running. Explicit file
keys always win over profile presets.
"""
from __future__ import annotations

import dataclasses

import numpy as np

from . import abf, bounds as bounds_mod, systems
from .abstraction import Grid
from .errors import ConfigError

__all__ = ["RunConfig", "desk_profile", "paper_profile"]


def _parse_scalar(text: str):
    text = text.strip()
    lowered = text.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def desk_profile(system_id: str) -> dict:
    """Workstation-scale defaults: coarse grid, wide thresholds, tiny input set."""
    common = {
        "box.lower": "-0.5 -0.5",
        "box.upper": "0.5 0.5",
        "grid.delta": "0.4",
        "template.kind": "diagonal_even_power",
        "template.coefficient_min": "-1.0",
        "template.coefficient_max": "1.0",
        "abf.gamma_tilde": "0.2 0.5",
        "abf.rho_tilde": "0.6",
        "abf.psi": "auto",
        "abf.sigma_floor": "1e-9",
        "abf.sigma_max": "1e9",
        "bounds.kind": "nonlinear",
        "bounds.alpha1": "auto",
        "bounds.alpha2": "auto",
        "bounds.lambda_max": "auto",
        "bounds.script_if": "auto",
        "bounds.script_ix": "estimate",
        "bounds.safety_factor": "1.1",
        "bounds.estimate_samples": "64",
        "scenario.epsilon": "0.3",
        "scenario.beta": "0.05",
        "scenario.sample_count": "auto",
        "scenario.top_k": "64",
        "simulate.horizon": "100",
        "io.write_dataset": "true",
    }
    if system_id == "dc_motor":
        common.update({
            "inputs.values": "-0.3 -0.3; -0.3 0.3; 0.3 -0.3; 0.3 0.3",
            "template.power": "4",
            "simulate.x0": "0.3 -0.3",
        })
    elif system_id == "jet_engine":
        common.update({
            "inputs.values": "-0.5; 0.0; 0.5",
            "template.power": "2",
            "simulate.x0": "0.1 -0.1",
        })
    return common


def paper_profile(system_id: str) -> dict:
    """Full-scale study parameters; sample counts run into the hundreds of thousands."""
    common = {
        "box.lower": "-0.5 -0.5",
        "box.upper": "0.5 0.5",
        "grid.delta": "0.05",
        "template.kind": "diagonal_even_power",
        "template.coefficient_min": "-0.2",
        "template.coefficient_max": "0.2",
        "abf.gamma_tilde": "0.1 0.2 0.3",
        "abf.psi": "auto",
        "abf.sigma_floor": "1e-9",
        "abf.sigma_max": "1e9",
        "scenario.beta": "0.01",
        "scenario.sample_count": "auto",
        "scenario.top_k": "64",
        "simulate.horizon": "100",
        "io.write_dataset": "false",
    }
    if system_id == "dc_motor":
        common.update({
            "inputs.values": "benchmark",
            "template.power": "4",
            "abf.rho_tilde": "0.015",
            "scenario.epsilon": "0.013",
            "bounds.lipschitz": "1.55 1.55 1.55",
            "complexity.reference_n": "156052",
            "simulate.x0": "0.3 -0.3",
        })
    elif system_id == "jet_engine":
        common.update({
            "inputs.values": "benchmark",
            "template.power": "2",
            "abf.rho_tilde": "0.01",
            "scenario.epsilon": "0.006",
            "bounds.lipschitz": "1.8 1.9 2.02",
            "complexity.reference_n": "1100794",
            "simulate.x0": "0.1 -0.1",
        })
    return common


@dataclasses.dataclass
class RunConfig:
    """Typed access over the flat key-value map, with profile presets applied."""

    values: dict[str, str]

    @classmethod
    def from_file(cls, path, overrides: dict[str, str] | None = None) -> "RunConfig":
        raw: dict[str, str] = {}
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                stripped = line.split("#", 1)[0].strip()
                if not stripped:
                    continue
                if "=" not in stripped:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
                key, _, value = stripped.partition("=")
                raw[key.strip()] = value.strip()
        return cls.from_dict(raw, overrides)

    @classmethod
    def from_dict(cls, raw: dict[str, str], overrides: dict[str, str] | None = None) -> "RunConfig":
        raw = {str(k): str(v) for k, v in raw.items()}
        if overrides:
            raw.update({str(k): str(v) for k, v in overrides.items()})
        merged: dict[str, str] = {}
        profile = raw.get("profile", "desk")
        system_id = raw.get("system.id", "")
        if profile == "desk":
            merged.update(desk_profile(system_id))
        elif profile == "paper":
            merged.update(paper_profile(system_id))
        else:
            raise ConfigError(f"unknown profile {profile!r} (expected desk or paper)")
        merged.update(raw)
        merged.setdefault("profile", profile)
        merged.setdefault("seed", "7")
        config = cls(merged)
        config.validate()
        return config

    # -- raw getters ----------------------------------------------------------

    _MISSING = object()

    def get(self, key: str, default=_MISSING):
        if key not in self.values:
            if default is not self._MISSING:
                return default
            raise ConfigError(f"missing config key {key!r}")
        return _parse_scalar(self.values[key])

    def get_list(self, key: str, default: str | None = None) -> list[float]:
        text = self.values.get(key, default)
        if text is None:
            raise ConfigError(f"missing config key {key!r}")
        return [float(tok) for tok in str(text).split()]

    def get_vectors(self, key: str) -> np.ndarray:
        if key not in self.values:
            raise ConfigError(f"missing config key {key!r}")
        groups = [g.strip() for g in self.values[key].split(";") if g.strip()]
        return np.array([[float(tok) for tok in g.split()] for g in groups])

    @property
    def profile(self) -> str:
        return self.values.get("profile", "desk")

    @property
    def seed(self) -> int:
        return int(self.get("seed"))

    def validate(self) -> None:
        if "system.id" not in self.values:
            raise ConfigError("missing config key 'system.id'")
        system_id = self.values["system.id"]
        if system_id not in ("dc_motor", "jet_engine", "external"):
            raise ConfigError(
                f"unknown system.id {system_id!r} (expected dc_motor, jet_engine, external)"
            )
        if system_id == "external":
            for key in ("system.command", "system.dimension", "system.input_dimension"):
                if key not in self.values:
                    raise ConfigError(f"external systems need {key!r}")
        for key in ("box.lower", "box.upper", "grid.delta", "inputs.values"):
            if key not in self.values:
                raise ConfigError(f"missing config key {key!r}")
        psi = self.values.get("abf.psi", "auto")
        if psi != "auto" and not 0.0 < float(psi) < 1.0:
            raise ConfigError("abf.psi must be 'auto' or a value in (0, 1)")
        rho = self.values.get("abf.rho_tilde", "free")
        if rho != "free" and float(rho) < 0.0:
            raise ConfigError("abf.rho_tilde must be 'free' or nonnegative")
        beta = float(self.get("scenario.beta"))
        if not 0.0 <= beta <= 1.0:
            raise ConfigError("scenario.beta must lie in [0, 1]")
        if any(e <= 0 for e in self.get_list("scenario.epsilon")):
            raise ConfigError("scenario.epsilon entries must be positive")

    # -- stage builders --------------------------------------------------------

    def build_box(self) -> systems.StateBox:
        return systems.StateBox(
            np.array(self.get_list("box.lower")), np.array(self.get_list("box.upper"))
        )

    def build_inputs(self) -> systems.InputSet:
        raw = self.values["inputs.values"]
        if raw.strip() == "benchmark":
            system_id = self.values["system.id"]
            if system_id == "dc_motor":
                return systems.dc_motor_input_set()
            if system_id == "jet_engine":
                return systems.jet_engine_input_set()
            raise ConfigError("inputs.values = benchmark needs a built-in system.id")
        return systems.InputSet(self.get_vectors("inputs.values"))

    def build_system(self) -> systems.BlackBoxSystem:
        system_id = self.values["system.id"]
        if system_id == "dc_motor":
            return systems.dc_motor()
        if system_id == "jet_engine":
            return systems.jet_engine()
        return systems.ExternalCommandSystem(
            self.values["system.command"],
            int(self.get("system.dimension")),
            int(self.get("system.input_dimension")),
        )

    def build_grid(self) -> Grid:
        return Grid.from_delta(self.build_box(), float(self.get("grid.delta")))

    def build_template(self) -> abf.AbfTemplate:
        kind = self.values.get("template.kind", "diagonal_even_power")
        dimension = self.build_box().dimension
        if kind == "diagonal_even_power":
            return abf.diagonal_even_power_template(
                dimension,
                power=int(self.get("template.power", 2)),
                coefficient_min=float(self.get("template.coefficient_min", -0.2)),
                coefficient_max=float(self.get("template.coefficient_max", 0.2)),
                include_constant=bool(self.get("template.include_constant", True)),
            )
        if kind == "quadratic_form":
            return abf.quadratic_form_template(
                dimension,
                entry_bound=float(self.get("template.entry_bound", 0.2)),
                pd_margin=float(self.get("template.pd_margin", 1e-6)),
            )
        if kind == "custom":
            exprs = [e.strip() for e in self.values["template.expressions"].split(";") if e.strip()]
            box = self.get_vectors("template.coefficient_box")
            return abf.custom_template(dimension, exprs, box)
        raise ConfigError(f"unknown template.kind {kind!r}")

    @property
    def gamma_tilde_set(self) -> tuple[float, ...]:
        return tuple(self.get_list("abf.gamma_tilde"))

    @property
    def rho_tilde(self) -> float | None:
        raw = self.values.get("abf.rho_tilde", "free")
        return None if raw == "free" else float(raw)

    def psi(self, gamma_tilde: float) -> float:
        raw = self.values.get("abf.psi", "auto")
        if raw == "auto":
            return abf.default_psi(gamma_tilde)
        return float(raw)

    @property
    def epsilon(self) -> tuple[float, ...]:
        eps = self.get_list("scenario.epsilon")
        l = len(self.gamma_tilde_set)
        if len(eps) == 1:
            eps = eps * l
        if len(eps) != l:
            raise ConfigError("scenario.epsilon must have one entry, or one per gamma_tilde")
        return tuple(eps)

    @property
    def beta(self) -> float:
        return float(self.get("scenario.beta"))

    def lipschitz_constants(self, system, box, inputs, grid, template, seed) -> tuple[float, ...]:
        """Per-candidate constraint Lipschitz constants.

        Uses an explicit ``bounds.lipschitz`` override when present;
        otherwise evaluates the closed-form bounds, estimating any
        'estimate'-directed dynamics constants from a probe dataset.
        """
        if "bounds.lipschitz" in self.values:
            lip = tuple(self.get_list("bounds.lipschitz"))
            if len(lip) != len(self.gamma_tilde_set):
                raise ConfigError("bounds.lipschitz must list one constant per gamma_tilde")
            return lip
        kind = self.values.get("bounds.kind", "nonlinear")
        alpha1 = self.values.get("bounds.alpha1", "auto")
        alpha1 = box.max_state_norm() if alpha1 == "auto" else float(alpha1)
        alpha2 = self.values.get("bounds.alpha2", "auto")
        alpha2 = inputs.max_input_norm() if alpha2 == "auto" else float(alpha2)
        lam = self.values.get("bounds.lambda_max", "auto")
        if lam == "auto":
            entry_box = template.p_entry_intervals()
            if entry_box is None:
                raise ConfigError(
                    "bounds.lambda_max = auto needs a structured template; "
                    "give an explicit value for custom templates"
                )
            lam_value = bounds_mod.gershgorin_lambda_max(entry_box)
        else:
            lam_value = float(lam)

        def resolve(key: str, auto_value: float | None = None) -> float | None:
            raw = self.values.get(key)
            if raw is None:
                return None
            if raw == "auto":
                if auto_value is None:
                    raise ConfigError(f"{key} = auto is not available here")
                return auto_value
            if raw == "estimate":
                probe = systems.collect_dataset(
                    system, box, inputs,
                    int(self.get("bounds.estimate_samples", 64)),
                    seed,
                )
                return bounds_mod.estimate_lipschitz_from_data(
                    probe, safety_factor=float(self.get("bounds.safety_factor", 1.1))
                )
            return float(raw)

        common = dict(
            alpha1=alpha1,
            alpha2=alpha2,
            lambda_max_bound=lam_value,
            delta=grid.delta,
            gamma_tilde_set=self.gamma_tilde_set,
        )
        if kind == "linear":
            inp = bounds_mod.LipschitzInputs(
                kind="linear",
                script_i1=resolve("bounds.script_i1"),
                script_i2=resolve("bounds.script_i2"),
                **common,
            )
            return tuple(float(v) for v in bounds_mod.lipschitz_linear(inp))
        if kind == "nonlinear":
            inp = bounds_mod.LipschitzInputs(
                kind="nonlinear",
                script_if=resolve("bounds.script_if", auto_value=alpha1),
                script_ix=resolve("bounds.script_ix"),
                **common,
            )
            return tuple(float(v) for v in bounds_mod.lipschitz_nonlinear(inp))
        raise ConfigError(f"unknown bounds.kind {kind!r}")
