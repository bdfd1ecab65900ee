"""Run configuration: sectioned plain-text files, validation, canonical form.

Sections: ``[physics]``, ``[grid]``, ``[kernels.v1]`` .. ``[kernels.z2]``,
``[solver]``, ``[study]``, ``[output]``, ``[tolerances]``.  Every field has a
default except the kernel family names.  Validation is eager and collects
*all* problems (unknown sections/keys, type errors, out-of-range values,
inadmissible kernel amplitudes) before anything runs.

``serialize`` emits a canonical form (fixed section/key order, repr floats);
``parse_string(serialize(cfg))`` reproduces ``cfg`` exactly.
"""

from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field

import numpy as np

from .analysis import DEFAULT_TOLERANCES
from .kernels import KernelValidationError, builtin_kernels
from .model import Grid, PhysicalParams, ScalarField

SOLVER_KINDS = ("smoluchowski", "kinetic", "langevin")
STUDY_KINDS = (
    "epsilon_convergence",
    "tail_scaling",
    "spectral_checks",
    "integral_pd_check",
    "langevin_vs_smoluchowski",
    "compare_formulations",
)
DENSITY_KINDS = ("boltzmann", "uniform", "cosine_bump", "gaussian_bump")

# (type, default, admissible-range description).  Types: f=float, f+=positive
# float, i=int, i+=positive int, b=bool, s=string, fl=float list, il=int list.
_SCHEMA = {
    "physics": {
        "kBT": ("f+", 1.0, "> 0"),
        "m": ("f+", 1.0, "> 0"),
        "gamma": ("f+", 1.0, "> 0"),
        "dimension": ("i", 1, "1, 2 or 3"),
    },
    "grid": {
        "lengths": ("fl", (10.0,), "positive, one per dimension"),
        "n_cells": ("il", (64,), ">= 2, one per dimension"),
    },
    "solver": {
        "kind": ("s", "smoluchowski", ", ".join(SOLVER_KINDS + STUDY_KINDS)),
        "seed": ("i", 12345, "any integer"),
        "t_final": ("f+", 1.0, "> 0"),
        "dt_max": ("f+", 1e-3, "> 0"),
        "rhs": ("s", "new", "new, new_expanded, rex_lowen"),
        "nmax": ("i", 8, ">= 4"),
        "n_traj": ("i+", 100, "> 0"),
        "n_particles": ("i+", 50, "> 0"),
        "dt": ("f+", 5e-3, "> 0"),
        "snapshot_times": ("fl", (), "non-negative times"),
        "initial_density": ("s", "boltzmann", ", ".join(DENSITY_KINDS)),
        "bump_amplitude": ("f", 0.5, "|amp| < 1 for cosine_bump"),
        "bump_width": ("f+", 1.0, "> 0"),
        "n_total": ("f+", 50.0, "> 0 (density normalisation)"),
    },
    "study": {
        "eps_list": ("fl", (0.2, 0.1, 0.05), ">= 3 values spanning factor >= 4"),
        "gamma_list": ("fl", (1.0, 4.0, 16.0), "increasing, positive"),
        "lambda_list": ("fl", (0.05, 0.1, 0.2), "positive amplitudes"),
        "t_final": ("f+", 0.3, "> 0"),
        "n_samples": ("i+", 50, "> 0"),
        "interacting": ("b", False, "true/false"),
    },
    "output": {
        "directory": ("s", "out", "path"),
        "emit_plotdata": ("b", False, "true/false"),
        "dump_matrix": ("b", False, "true/false"),
    },
}
_KERNEL_SECTIONS = ("kernels.v1", "kernels.v2", "kernels.g", "kernels.z1", "kernels.z2")


class ConfigError(ValueError):
    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("configuration invalid:\n  " + "\n  ".join(self.errors))


@dataclass
class RunConfig:
    physics: dict
    grid: dict
    kernels: dict          # slot -> {"family": ..., **params} (resolved)
    solver: dict
    study: dict
    output: dict
    tolerances: dict = field(default_factory=dict)

    # -- builders -----------------------------------------------------------
    def physical_params(self) -> PhysicalParams:
        p = self.physics
        return PhysicalParams(kBT=p["kBT"], m=p["m"], gamma=p["gamma"],
                              dim=p["dimension"])

    def make_grid(self) -> Grid:
        return Grid(self.grid["lengths"], self.grid["n_cells"])

    def kernel_spec(self) -> dict:
        return {slot: dict(cfg) for slot, cfg in self.kernels.items()}

    def build_kernels(self, validate_pd=False):
        return builtin_kernels(self.kernel_spec(), self.grid["lengths"],
                               validate_pd=validate_pd)

    def initial_density(self, grid: Grid, kernels) -> ScalarField:
        kind = self.solver["initial_density"]
        x = grid.cell_centers()
        L = np.asarray(grid.lengths)
        c = 0.5 * L
        if kind == "boltzmann":
            vals = np.exp(-kernels.v1_value(x) / self.physics["kBT"])
        elif kind == "uniform":
            vals = np.ones(grid.size)
        elif kind == "cosine_bump":
            amp = self.solver["bump_amplitude"]
            vals = 1.0 + amp * np.prod(np.cos(2.0 * np.pi * (x - c) / L), axis=1)
        else:
            width = self.solver["bump_width"]
            d2 = np.sum(grid.min_image(x - c) ** 2, axis=1)
            vals = 0.05 + np.exp(-0.5 * d2 / width**2)
        vals = vals * self.solver["n_total"] / (vals.sum() * grid.cell_volume)
        return ScalarField(grid, vals)


# ---------------------------------------------------------------------------
# value parsing / formatting

def _parse_value(kind, raw, where, errors):
    raw = raw.strip()
    try:
        if kind in ("f", "f+"):
            val = float(raw)
            if kind == "f+" and not val > 0:
                raise ValueError
            return val
        if kind in ("i", "i+"):
            val = int(raw)
            if kind == "i+" and not val > 0:
                raise ValueError
            return val
        if kind == "b":
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError
        if kind == "fl":
            return tuple(float(tok) for tok in raw.split(",") if tok.strip()) \
                if raw else ()
        if kind == "il":
            return tuple(int(tok) for tok in raw.split(",") if tok.strip()) \
                if raw else ()
        return raw
    except ValueError:
        errors.append(f"{where}: cannot parse {raw!r} as {kind}")
        return None


def _format_value(val):
    if isinstance(val, bool):
        return "true" if val else "false"
    if isinstance(val, float):
        return repr(val)
    if isinstance(val, (tuple, list)):
        return ", ".join(_format_value(v) for v in val)
    return str(val)


def parse_string(text: str) -> RunConfig:
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",),
                                   comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError([f"syntax error: {exc}"])

    errors = []
    known = set(_SCHEMA) | set(_KERNEL_SECTIONS) | {"tolerances"}
    for sec in cp.sections():
        if sec not in known:
            errors.append(f"unknown section [{sec}]")

    parsed = {}
    for sec, keys in _SCHEMA.items():
        out = {}
        present = cp[sec] if cp.has_section(sec) else {}
        for key in present:
            if key not in keys:
                errors.append(f"[{sec}] {key}: unknown key")
        for key, (kind, default, admissible) in keys.items():
            if key in present:
                val = _parse_value(kind, present[key], f"[{sec}] {key}", errors)
                if val is None:
                    continue
            else:
                val = default
            out[key] = val
        parsed[sec] = out

    # semantic validation with admissible ranges in the messages
    phys = parsed["physics"]
    if phys.get("dimension") not in (1, 2, 3):
        errors.append("[physics] dimension: out of range; admissible: 1, 2 or 3")
    dim = phys.get("dimension") if phys.get("dimension") in (1, 2, 3) else 1
    for key in ("lengths", "n_cells"):
        vals = parsed["grid"].get(key)
        if vals is not None:
            if len(vals) == 1 and dim > 1:
                vals = vals * dim
                parsed["grid"][key] = vals
            if len(vals) != dim:
                errors.append(
                    f"[grid] {key}: got {len(vals)} entries; admissible: one per "
                    f"dimension ({dim})"
                )
    if any(L <= 0 for L in parsed["grid"].get("lengths", ())):
        errors.append("[grid] lengths: out of range; admissible: positive")
    if any(n < 2 for n in parsed["grid"].get("n_cells", ())):
        errors.append("[grid] n_cells: out of range; admissible: >= 2")

    sol = parsed["solver"]
    if sol.get("kind") not in SOLVER_KINDS + STUDY_KINDS:
        errors.append(
            f"[solver] kind: {sol.get('kind')!r} unknown; admissible: "
            + ", ".join(SOLVER_KINDS + STUDY_KINDS)
        )
    if sol.get("rhs") not in ("new", "new_expanded", "rex_lowen"):
        errors.append("[solver] rhs: unknown; admissible: new, new_expanded, rex_lowen")
    if sol.get("nmax", 8) < 4:
        errors.append("[solver] nmax: out of range; admissible: >= 4")
    if sol.get("initial_density") not in DENSITY_KINDS:
        errors.append(
            "[solver] initial_density: unknown; admissible: " + ", ".join(DENSITY_KINDS)
        )
    if abs(sol.get("bump_amplitude", 0.0)) >= 1.0 and sol.get("initial_density") == "cosine_bump":
        errors.append("[solver] bump_amplitude: out of range; admissible: |amp| < 1")

    # kernel sections: family names are the one field without a default
    kern_spec = {}
    for sec in _KERNEL_SECTIONS:
        slot = sec.split(".", 1)[1]
        if not cp.has_section(sec):
            errors.append(f"[{sec}]: section required (kernel family has no default)")
            continue
        entry = {}
        for key, raw in cp[sec].items():
            if key == "family":
                entry["family"] = raw.strip()
            elif key == "center":
                entry["center"] = _parse_value("fl", raw, f"[{sec}] {key}", errors)
            elif key == "mode":
                entry["mode"] = _parse_value("i", raw, f"[{sec}] {key}", errors)
            else:
                entry[key] = _parse_value("f", raw, f"[{sec}] {key}", errors)
        if "family" not in entry:
            errors.append(f"[{sec}] family: required, no default")
        kern_spec[slot] = entry

    tolerances = {}
    if cp.has_section("tolerances"):
        for key, raw in cp["tolerances"].items():
            if key not in DEFAULT_TOLERANCES:
                errors.append(
                    f"[tolerances] {key}: unknown; admissible: "
                    + ", ".join(sorted(DEFAULT_TOLERANCES))
                )
            else:
                val = _parse_value("f", raw, f"[tolerances] {key}", errors)
                if val is not None:
                    tolerances[key] = val

    resolved_kernels = None
    if not errors:
        lengths = parsed["grid"]["lengths"]
        try:
            ks = builtin_kernels(kern_spec, lengths, validate_pd=True)
            resolved_kernels = {
                slot: {"family": fam, **{k: v for k, v in prm.items()}}
                for slot, (fam, prm) in (
                    ("v1", ks.v1), ("v2", ks.v2), ("g", ks.g),
                    ("z1", ks.z1), ("z2", ks.z2),
                )
            }
        except KernelValidationError as exc:
            errors.extend(f"[kernels] {msg}" for msg in exc.errors)

    if errors:
        raise ConfigError(errors)
    return RunConfig(parsed["physics"], parsed["grid"], resolved_kernels,
                     parsed["solver"], parsed["study"], parsed["output"],
                     tolerances)


def parse_config(path) -> RunConfig:
    try:
        with open(path, "r") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError([f"cannot read config file {path}: {exc}"])
    return parse_string(text)


def serialize(cfg: RunConfig) -> str:
    """Canonical text form: fixed section and key order, repr floats."""
    buf = io.StringIO()
    for sec in ("physics", "grid"):
        buf.write(f"[{sec}]\n")
        for key in _SCHEMA[sec]:
            buf.write(f"{key} = {_format_value(getattr(cfg, sec)[key])}\n")
        buf.write("\n")
    for slot in ("v1", "v2", "g", "z1", "z2"):
        buf.write(f"[kernels.{slot}]\n")
        entry = cfg.kernels[slot]
        buf.write(f"family = {entry['family']}\n")
        for key in sorted(k for k in entry if k != "family"):
            buf.write(f"{key} = {_format_value(entry[key])}\n")
        buf.write("\n")
    for sec in ("solver", "study", "output"):
        buf.write(f"[{sec}]\n")
        for key in _SCHEMA[sec]:
            buf.write(f"{key} = {_format_value(getattr(cfg, sec)[key])}\n")
        buf.write("\n")
    buf.write("[tolerances]\n")
    for key in sorted(cfg.tolerances):
        buf.write(f"{key} = {_format_value(cfg.tolerances[key])}\n")
    return buf.getvalue()
