"""Declarative experiments: JSON spec in, result table out.

A spec is a JSON object::

    {"kind": "bohm-equivalence", "seed": 7,
     "preset": "sec52-momentum-mixture", "preset_args": {},
     "params": {"n": 10000}}

``kind`` and ``seed`` are required.  ``preset`` names a scenario from
``dmrlab.presets``; alternatively an ``explicit`` block gives the lattice and
the initial mixture inline (see ``explicit_scenario``).  ``params`` tunes the
run (ensemble sizes, step, bins, tolerances).
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import __version__, bohm, grw, presets, stats, subsystem, typicality
from .errors import ConfigurationError, ValidationError
from .hilbert import (DensityMatrix, LatticeSpace, PureState, build_hamiltonian,
                      mix_density)

PROJECTOR_TOL = 1e-10

KINDS = ("bohm-equivalence", "grw-equivalence", "measurement-demo", "typicality",
         "lindblad-divergence", "equivariance")

# every experiment kind and the claim it probes
CLAIMS = {
    "bohm-equivalence": "W-BM and Psi-BM with psi_0 drawn from a decomposition of W give the same configuration statistics",
    "grw-equivalence": "W-GRWm and Psi-GRWm with mixture-consistent initial data give the same mass-density and flash statistics",
    "measurement-demo": "the conditional density matrix of a measured system collapses to a branch with Born frequency while W never collapses",
    "typicality": "reduced states of typical pure states in a large subspace match the reduced normalised projection",
    "lindblad-divergence": "open-system (GKLS) evolution of W changes configuration statistics, unlike closed evolution",
    "equivariance": "the W guidance law transports the diagonal of W along with the von Neumann evolution",
}

DEFAULT_PRESETS = {
    "bohm-equivalence": "sec52-momentum-mixture",
    "equivariance": "free-packet",
    "grw-equivalence": "grw-diagram",
    "measurement-demo": "sec52-momentum-mixture",
    "lindblad-divergence": "lindblad-cat",
    "typicality": "typicality-sweep",
}


def everett_probability(w, projector: np.ndarray) -> float:
    """``tr(W P)`` for an orthogonal projector ``P`` (unit-norm representation), clamped to ``[0, 1]``."""
    p = np.asarray(projector)
    if p.ndim != 2 or p.shape[0] != p.shape[1]:
        raise ValidationError("projector must be a square matrix")
    if np.max(np.abs(p - p.conj().T)) > PROJECTOR_TOL or np.max(np.abs(p @ p - p)) > PROJECTOR_TOL:
        raise ValidationError("operator is not an orthogonal projector")
    m = w.matrix if isinstance(w, DensityMatrix) else np.outer(w.vector, w.vector.conj())
    value = float(np.real(np.sum(m * p.T)))
    if value < -PROJECTOR_TOL or value > 1 + PROJECTOR_TOL:
        raise ValidationError(f"probability {value} outside [0, 1]")
    return min(max(value, 0.0), 1.0)


# ---- spec and results ----

@dataclass
class ExperimentSpec:
    kind: str
    seed: int
    preset: Optional[str] = None
    preset_args: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    explicit: Optional[dict] = None

    @classmethod
    def from_dict(cls, data: dict, seed: int = None) -> "ExperimentSpec":
        data = dict(data)
        unknown = set(data) - {"kind", "seed", "preset", "preset_args", "params", "explicit", "out", "format"}
        if unknown:
            raise ConfigurationError(f"unknown spec fields: {sorted(unknown)}")
        kind = data.get("kind")
        if kind not in KINDS:
            raise ConfigurationError(f"unknown experiment kind {kind!r}; choose from {KINDS}")
        if seed is not None:
            data["seed"] = seed
        if not isinstance(data.get("seed"), int) or isinstance(data.get("seed"), bool) or data["seed"] < 0:
            raise ConfigurationError("a non-negative integer seed is required")
        preset = data.get("preset")
        if preset is not None and preset not in presets.PRESETS:
            raise ConfigurationError(f"unknown preset {preset!r}")
        return cls(kind, data["seed"], preset, dict(data.get("preset_args") or {}),
                   dict(data.get("params") or {}), data.get("explicit"))

    @classmethod
    def load(cls, path: str, seed: int = None) -> "ExperimentSpec":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read spec {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigurationError("spec must be a JSON object")
        return cls.from_dict(data, seed)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "seed": self.seed, "params": self.params, "preset_args": self.preset_args}
        if self.preset is not None:
            out["preset"] = self.preset
        if self.explicit is not None:
            out["explicit"] = self.explicit
        return out

    def digest(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode()).hexdigest()


@dataclass(frozen=True)
class Row:
    time: Optional[float]
    statistic: str
    value: float
    n: int
    tolerance: str = ""
    passed: Optional[bool] = None


def check(value: float, tolerance: str) -> bool:
    """Evaluate tolerance strings ``<=x``, ``<x``, ``>=x``, ``>x`` and ``in[a,b]``."""
    if tolerance.startswith("in["):
        lo, hi = (float(s) for s in tolerance[3:-1].split(","))
        return lo <= value <= hi
    for op in ("<=", ">=", "<", ">"):
        if tolerance.startswith(op):
            bound = float(tolerance[len(op):])
            return {"<=": value <= bound, ">=": value >= bound,
                    "<": value < bound, ">": value > bound}[op]
    raise ConfigurationError(f"bad tolerance {tolerance!r}")


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "pass" if x else "fail"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return format(float(x), ".17g")


@dataclass
class ResultTable:
    kind: str
    seed: int
    spec_hash: str
    rows: list = field(default_factory=list)
    version: str = __version__
    attachments: dict = field(default_factory=dict)

    def add(self, statistic: str, value: float, n: int, tolerance: str = "", time: float = None):
        value = float(value)
        passed = check(value, tolerance) if tolerance else None
        self.rows.append(Row(None if time is None else float(time), statistic, value, int(n), tolerance, passed))

    def sorted_rows(self) -> list:
        return sorted(self.rows, key=lambda r: (-math.inf if r.time is None else r.time, r.statistic))

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows if r.passed is not None)

    def failures(self) -> list:
        return [r for r in self.rows if r.passed is False]

    def metadata(self) -> dict:
        return {"kind": self.kind, "seed": self.seed, "spec_hash": self.spec_hash, "code_version": self.version}

    def to_csv(self) -> str:
        buf = io.StringIO()
        for k, v in self.metadata().items():
            buf.write(f"# {k}={v}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("time", "statistic", "value", "n", "tolerance", "pass"))
        for r in self.sorted_rows():
            w.writerow((_fmt(r.time), r.statistic, _fmt(r.value), r.n, r.tolerance, _fmt(r.passed)))
        return buf.getvalue()

    def to_json(self) -> str:
        rows = [{"time": r.time, "statistic": r.statistic, "value": r.value, "n": r.n,
                 "tolerance": r.tolerance, "pass": r.passed} for r in self.sorted_rows()]
        doc = {"metadata": self.metadata(), "passed": self.passed, "rows": rows}
        doc.update(self.attachments)
        return json.dumps(doc, sort_keys=True, indent=1, default=_json_default) + "\n"


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


# ---- scenarios ----

def explicit_scenario(block: dict) -> presets.Scenario:
    """Scenario from inline arrays.

    ``{"space": {"particles": 1, "points": 32, "spacing": 0.5, "masses": [1]},
    "potential": [...], "mixture": [{"weight": 1, "re": [...], "im": [...]}],
    "times": [...], "dt": 0.01}``
    """
    try:
        sp = block["space"]
        space = LatticeSpace(int(sp["particles"]), int(sp["points"]), float(sp.get("spacing", 1.0)),
                             sp.get("masses"))
        potential = block.get("potential")
        h = build_hamiltonian(space, None if potential is None else np.asarray(potential, dtype=float))
        decomposition = []
        for item in block["mixture"]:
            amp = np.asarray(item["re"], dtype=float) + 1j * np.asarray(item.get("im", np.zeros(len(item["re"]))))
            decomposition.append((float(item["weight"]), PureState.from_values(amp, space)))
        w0 = mix_density(decomposition)
        return presets.Scenario("explicit", space, h, w0, tuple(float(t) for t in block["times"]),
                                float(block.get("dt", 0.01)), decomposition)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigurationError(f"invalid explicit scenario: {exc}") from None


def _scenario(spec: ExperimentSpec) -> presets.Scenario:
    if spec.explicit is not None:
        return explicit_scenario(spec.explicit)
    name = spec.preset or DEFAULT_PRESETS.get(spec.kind)
    try:
        return presets.resolve(name, **spec.preset_args)
    except TypeError as exc:
        raise ConfigurationError(f"bad preset arguments for {name}: {exc}") from None


# ---- runners ----

def _run_equivariance(spec, table, threads, strict):
    sc = _scenario(spec)
    n = int(spec.params.get("n", 10000))
    tol = float(spec.params.get("tv_tolerance", 0.05))
    bins = spec.params.get("bins")
    guide = bohm.DensityGuide(sc.initial, sc.propagator)
    runs = bohm.run_ensemble(bohm.sample_initial(sc.initial, n, spec.seed), guide, sc.times,
                             float(spec.params.get("dt", sc.dt)), strict=strict, threads=threads)
    for t, ens in zip(sc.times, runs):
        table.add("tv_vs_diagonal", bohm.equivariance_check(ens, guide.distribution(t), bins), n, f"<={tol:g}", t)
        table.add("flagged_fraction", ens.flagged_fraction, n, f"<={bohm.FLAG_LIMIT:g}", t)


def _run_bohm_equivalence(spec, table, threads, strict):
    sc = _scenario(spec)
    n = int(spec.params.get("n", 10000))
    dt = float(spec.params.get("dt", sc.dt))
    bins = spec.params.get("bins")
    rep = bohm.checked_equivalence(sc.initial, sc.decomposition, sc.propagator, sc.times, n, spec.seed,
                                      dt, bins=bins, threads=threads, strict=strict)
    for k, t in enumerate(rep.times):
        table.add("tv_w_vs_psi", rep.tv[k], n, "<=0.05", t)
        table.add("ks_pvalue", rep.ks_pvalue[k], n, ">0.01", t)
        table.add("ks_statistic", rep.ks_statistic[k], n, "", t)
    wrong = spec.params.get("negative_weights", [0.9, 0.1])
    if wrong and sc.name == "sec52-momentum-mixture":
        wrong_dec = presets.momentum_mixture(tuple(wrong), **spec.preset_args).decomposition
        t2 = sc.extra["t2"]
        neg = bohm.compare_w_and_psi(sc.initial, wrong_dec, sc.propagator, [t2], n, spec.seed, dt,
                                     bins=bins, threads=threads, strict=strict)
        table.add("negative_control_tv", neg.tv[0], n, ">0.2", t2)


def _run_grw(spec, table, threads, strict):
    sc = _scenario(spec)
    ex = dict(sc.extra)
    ex.update({k: spec.params[k] for k in ("rate", "width", "t_final", "histories", "flash_bins")
               if k in spec.params})
    params = grw.GrwParams(float(ex["rate"]), float(ex["width"]))
    h = int(ex["histories"])
    times = [t for t in sc.times if t <= ex["t_final"] + 1e-12]
    rep = grw.grw_equivalence(sc.initial, sc.decomposition, sc.propagator, params, float(ex["t_final"]),
                              times, h, spec.seed, int(ex["flash_bins"]), threads)
    for t, tv in zip(rep.sample_times, rep.mass_tv):
        table.add("mass_density_tv", tv, h, "<=0.05", t)
    table.add("mass_density_tv_time_averaged", rep.mass_tv_time_averaged, h, "<=0.05")
    table.add("flash_center_tv", rep.flash_tv, h, "<=0.05")
    expected = sc.space.particles * params.rate * float(ex["t_final"])
    table.add("mean_events_w", rep.mean_events_w, h, "")
    table.add("mean_events_psi", rep.mean_events_psi, h, "")
    table.add("expected_events", expected, h, "")


def _run_demo(spec, table, threads, strict):
    n = int(spec.params.get("n", 1000))
    rep = subsystem.measurement_demo(n, spec.seed, float(spec.params.get("coupling", 1.0)),
                                     float(spec.params.get("k", 1.0)),
                                     float(spec.params.get("epsilon", subsystem.DEFAULT_EPSILON)),
                                     threads, _scenario(spec))
    table.add("w_frequency_minus", rep.w_frequencies["minus"], n, "in[0.45,0.55]", rep.t2)
    table.add("psi_frequency_minus", rep.psi_frequencies["minus"], n, "", rep.t2)
    table.add("frequency_gap", abs(rep.w_frequencies["minus"] - rep.psi_frequencies["minus"]), n,
              f"<={2 / math.sqrt(n):.6g}", rep.t2)
    dev = max(abs(r.pre_purity - 0.5) for r in rep.w_records)
    table.add("pre_purity_deviation", dev, n, "<=1e-06", 0.0)
    table.add("min_post_purity", rep.min_post_purity, n, ">=0.99", rep.t2)
    table.add("psi_max_mixedness", rep.max_psi_mixedness, n, "<=1e-10", rep.t2)
    table.add("pointer_overlap", rep.overlap, n, f"<={rep.epsilon:g}", rep.t2)
    table.add("jitter_sensitivity", rep.jitter, n, "", rep.t2)
    table.attachments["demo"] = rep.to_json()


def _run_typicality(spec, table, threads, strict):
    try:
        p = presets.resolve(spec.preset or "typicality-sweep", **spec.preset_args)
    except TypeError as exc:
        raise ConfigurationError(f"bad preset arguments: {exc}") from None
    if not isinstance(p, dict):
        raise ConfigurationError(f"preset {spec.preset!r} is not a typicality sweep")
    p.update(spec.params)
    rows = typicality.typicality_experiment(int(p["d_s"]), [int(d) for d in p["d_e"]], p.get("rule", "full"),
                                            int(p["samples"]), spec.seed, p.get("r"), threads)
    for r in rows:
        table.add(f"mean_D[d_E={r.d_e}]", r.mean_d, r.samples)
        table.add(f"max_D[d_E={r.d_e}]", r.max_d, r.samples)
        table.add(f"std_D[d_E={r.d_e}]", r.std_d, r.samples)
    means = [r.mean_d for r in rows]
    table.add("strictly_decreasing", float(all(a > b for a, b in zip(means, means[1:]))), len(rows), ">=1")
    if p.get("convergence", True):
        rng = stats.stream(spec.seed, stats.HAAR, 1)
        c = typicality.make_constraint("random", 2, 4, rng, int(p.get("convergence_rank", 8)))
        sizes = p.get("convergence_sizes", [100, 300, 1000, 3000])
        _, _, slope = typicality.projector_convergence(c, sizes, spec.seed, int(p.get("repetitions", 8)))
        table.add("projector_convergence_slope", slope, max(sizes), "in[-0.65,-0.35]")
    table.attachments["typicality_csv"] = typicality.rows_to_csv(rows)


def _run_lindblad(spec, table, threads, strict):
    sc = _scenario(spec)
    n = int(spec.params.get("n", 10000))
    t = sc.times[-1]
    dt = float(spec.params.get("dt", sc.dt))
    threshold = float(spec.params.get("threshold", sc.extra["threshold"]))
    open_guide = bohm.LindbladGuide(sc.initial, sc.hamiltonian, sc.extra["spec"], sc.extra["lindblad_dt"], t)
    closed_guide = bohm.DensityGuide(sc.initial, sc.propagator)
    ens = bohm.sample_initial(sc.initial, n, spec.seed)
    e_open = bohm.integrate_ensemble(ens, open_guide, t, dt, strict=strict, threads=threads)
    e_closed = bohm.integrate_ensemble(ens, closed_guide, t, dt, strict=strict, threads=threads)
    bins = stats.default_bins(sc.space)
    tv = stats.total_variation(stats.position_histogram(sc.space, e_open.active, bins),
                               stats.position_histogram(sc.space, e_closed.active, bins))
    table.add("tv_open_vs_closed", tv, n, f">={threshold:.6g}", t)
    table.add("open_equivariance_tv", bohm.equivariance_check(e_open, open_guide.distribution(t)), n, "<=0.05", t)
    table.add("closed_equivariance_tv", bohm.equivariance_check(e_closed, closed_guide.distribution(t)), n,
              "<=0.05", t)
    exact = stats.total_variation(stats.binned_distribution(sc.space, open_guide.distribution(t), bins),
                                  stats.binned_distribution(sc.space, closed_guide.distribution(t), bins))
    table.add("exact_tv_open_vs_closed", exact, n, "", t)


RUNNERS = {
    "equivariance": _run_equivariance,
    "bohm-equivalence": _run_bohm_equivalence,
    "grw-equivalence": _run_grw,
    "measurement-demo": _run_demo,
    "typicality": _run_typicality,
    "lindblad-divergence": _run_lindblad,
}


def run_experiment(spec: ExperimentSpec, threads: int = 1, strict: bool = False) -> ResultTable:
    """Dispatch ``spec`` to its runner; deterministic given the spec (thread count does not matter)."""
    table = ResultTable(spec.kind, spec.seed, spec.digest())
    RUNNERS[spec.kind](spec, table, max(int(threads), 1), strict)
    return table
