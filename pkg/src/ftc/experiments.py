"""Experiment configuration and the two benchmark pipelines.

Experiment one compares safe H2, H-infinity and FTC controllers on a family of
disturbance profiles. Experiment two compares FTC against regret minimization
when the benchmark is a preview-limited constrained clairvoyant policy and the
disturbances are vertices of ``W`` that nearly activate the safe set.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from ftc import clairvoyant, conic, evaluation, synthesis
from ftc.lifted import CostWeights, LtvSystem, build_lifted
from ftc.safety import SafetySpec

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1

EXAMPLE_A = [[0.7, 0.2, 0.0], [0.3, 0.7, -0.1], [0.0, -0.2, 0.8]]
EXAMPLE_B = [[1.0, 0.2], [2.0, 0.3], [1.5, 0.5]]

TABLE_PROFILES = [
    {"tag": "gauss01"},
    {"tag": "uniform", "lo": 0.5, "hi": 1.0},
    {"tag": "uniform", "lo": 0.0, "hi": 1.0},
    {"tag": "constant_one"},
    {"tag": "sin"},
    {"tag": "sawtooth"},
    {"tag": "step"},
    {"tag": "stairs"},
    {"tag": "worst"},
]


def example_system(T: int = 30, rho: float = 1.05) -> dict:
    return {
        "n": 3,
        "m": 2,
        "T": T,
        "time_invariant": True,
        "A": (rho * np.array(EXAMPLE_A)).tolist(),
        "B": EXAMPLE_B,
    }


@dataclass
class ExperimentConfig:
    system: dict | str = field(default_factory=example_system)
    cost: dict = field(default_factory=lambda: {"Q_diag": 1.0, "R_diag": 1.0})
    safety: dict = field(default_factory=lambda: {"kind": "box", "x_max": 10.0, "u_max": 10.0, "w_max": 1.0})
    benchmark: dict = field(default_factory=lambda: {"kind": "h2_safe", "preview": "full"})
    criteria: list = field(default_factory=lambda: ["h2", "hinf", "ftc"])
    profiles: list = field(default_factory=lambda: [dict(p) for p in TABLE_PROFILES])
    N: int = 1000
    seed: int = 0
    threshold: float = 0.95
    max_draws: int = 1_000_000  # vertex draws allowed before the sampler gives up
    worst_metric: str = "cost"  # each policy under its own worst unit-norm disturbance
    tolerances: dict = field(default_factory=dict)
    property_tolerance: float | None = None
    out_dir: str = "out"
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {self.schema_version}")
        bad = set(self.criteria) - set(synthesis.CRITERIA)
        if bad:
            raise ValueError(f"unknown criteria {sorted(bad)}; allowed {synthesis.CRITERIA}")
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.max_draws < 1:
            raise ValueError("max_draws must be >= 1")
        if isinstance(self.system, str) and not Path(self.system).is_file():
            raise FileNotFoundError(self.system)
        if self.worst_metric not in ("regret", "cost"):
            raise ValueError("worst_metric must be 'regret' or 'cost'")
        for p in self.profiles:
            evaluation.DisturbanceProfile(**p)

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        if isinstance(d.get("system"), str) and base_dir is not None:
            d["system"] = str(Path(base_dir) / d["system"])
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        return cls.from_dict(json.loads(path.read_text()), base_dir=path.parent)

    def to_dict(self) -> dict:
        return asdict(self)


def exp1_config(**overrides) -> ExperimentConfig:
    return ExperimentConfig(**overrides)


def exp2_config(**overrides) -> ExperimentConfig:
    base = dict(
        safety={"kind": "box", "x_max": 10.0, "u_max": 5.0, "w_max": 1.0},
        benchmark={"kind": "h2_safe", "preview": 5},
        criteria=["ftc", "regret"],
        profiles=[],
        max_draws=100_000_000,
    )
    base.update(overrides)
    return ExperimentConfig(**base)


@dataclass
class Setup:
    sys: LtvSystem
    ops: object
    cw: CostWeights
    safety: SafetySpec
    tol: conic.Tolerances


def build(cfg: ExperimentConfig) -> Setup:
    if isinstance(cfg.system, str):
        sys = LtvSystem.from_dict(json.loads(Path(cfg.system).read_text()))
    else:
        sys = LtvSystem.from_dict(cfg.system)
    ops = build_lifted(sys)
    cw = CostWeights.from_dict(cfg.cost, sys.n, sys.m, sys.T)
    safety = SafetySpec.from_dict(cfg.safety, sys.n, sys.m, sys.T)
    return Setup(sys, ops, cw, safety, conic.Tolerances(**cfg.tolerances))


def benchmark(cfg: ExperimentConfig, s: Setup) -> clairvoyant.NoncausalResponse:
    kind = cfg.benchmark.get("kind", "h2_safe")
    if kind == "unconstrained":
        return clairvoyant.unconstrained_optimal(s.ops, s.cw)
    if kind == "h2_safe":
        return clairvoyant.constrained_h2(s.ops, s.cw, s.safety, cfg.benchmark.get("preview", "full"), s.tol)
    raise ValueError(f"unknown benchmark kind {kind!r}")


def synthesize(criterion: str, s: Setup, bench) -> synthesis.SynthesisResult:
    log.info("synthesizing %s controller", criterion)
    if criterion == "ftc":
        return synthesis.synthesize_ftc(s.ops, s.cw, bench, s.safety, s.tol)
    if criterion == "regret":
        return synthesis.synthesize_regret(s.ops, s.cw, bench, s.safety, s.tol)
    if criterion == "h2":
        return synthesis.synthesize_h2(s.ops, s.cw, s.safety, s.tol)
    if criterion == "hinf":
        return synthesis.synthesize_hinf(s.ops, s.cw, s.safety, s.tol)
    raise ValueError(criterion)


def _summary(res: synthesis.SynthesisResult, safety: SafetySpec) -> dict:
    return {
        "lambda": res.objective_value,
        "lambda_eval": res.solver_stats.get("lambda_eval"),
        "min_slack": float(np.min(synthesis.certify_safety(res.response, safety))) if safety.q else None,
    }


def table_rows(cfg: ExperimentConfig, s: Setup, policies: dict, star) -> list:
    """``(profile, policy, avg_cost, pct_vs_best)`` for every profile and policy."""
    n, T = s.sys.n, s.sys.T
    rows = []
    for p in cfg.profiles:
        prof = evaluation.DisturbanceProfile(**{"seed": cfg.seed, **p})
        if prof.tag == "worst":
            costs = {}
            for name, res in policies.items():
                w, _ = evaluation.worst_case_disturbance(res, star, s.cw, cfg.worst_metric)
                costs[name] = evaluation.average_costs({name: res}, w[None, :], s.cw)[name]
        else:
            draws = cfg.N if prof.tag in evaluation.STOCHASTIC else 1
            W = np.vstack([evaluation.generate(prof, n, T, i) for i in range(draws)])
            costs = evaluation.average_costs(policies, W, s.cw)
        best = min(costs.values())
        for name, c in costs.items():
            pct = 100.0 * (c / best - 1.0) if best > 0 else (0.0 if c == 0 else float("inf"))
            rows.append((prof.label, name, c, pct))
    return rows


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def run_experiment_one(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Safe H2 / H-infinity / FTC comparison; writes ``table1.csv`` and ``exp1_report.json``."""
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    s = build(cfg)
    star = clairvoyant.unconstrained_optimal(s.ops, s.cw)
    bench = benchmark(cfg, s)
    coincidence = clairvoyant.coincides(bench, star)
    log.info("benchmark vs unconstrained clairvoyant: %.3e", coincidence)

    results = {c: synthesize(c, s, bench) for c in cfg.criteria}
    report = {
        "benchmark_coincidence": coincidence,
        "controllers": {c: _summary(r, s.safety) for c, r in results.items()},
    }
    checks = {"benchmark_coincides": coincidence <= 1e-4}
    if "ftc" in results:
        _, wc = evaluation.worst_case_disturbance(results["ftc"].response, star, s.cw, "regret")
        report["ftc_worst_case_regret"] = wc
        log.info("worst-case regret of the FTC policy: %.4f", wc)
    for c, summ in report["controllers"].items():
        if summ["min_slack"] is not None:
            checks[f"{c}_safe"] = summ["min_slack"] >= -1e-6

    policies = {c: results[c].response for c in cfg.criteria}
    rows = table_rows(cfg, s, policies, star)
    evaluation.write_table_csv(out / "table1.csv", rows)
    report["table"] = [
        {"profile": p, "policy": c, "avg_cost": v, "pct_vs_best": pct} for p, c, v, pct in rows
    ]
    report["checks"] = checks
    report["passed"] = all(checks.values())
    _write_json(out / "exp1_report.json", report)
    return report


def run_experiment_two(cfg: ExperimentConfig, out_dir=None) -> dict:
    """FTC vs regret-optimal under a preview-limited safe benchmark.

    Writes ``delta_E.csv`` and ``delta_J.csv`` (per-step relative differences of
    the regret policy against FTC) and ``exp2_report.json``.
    """
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    s = build(cfg)
    bench = benchmark(cfg, s)
    ftc = synthesize("ftc", s, bench)
    reg = synthesize("regret", s, bench)

    W = evaluation.sample_near_active_vertices(
        bench, s.safety, cfg.N, cfg.threshold, cfg.seed, max_draws=cfg.max_draws
    )
    n, m = s.sys.n, s.sys.m
    E_F, J_F = evaluation.cumulative_series(ftc.response, bench, W, n, m)
    E_R, J_R = evaluation.cumulative_series(reg.response, bench, W, n, m)
    ms = evaluation.aggregate_metrics(E_R, J_R, E_F, J_F)
    evaluation.write_series_csv(out / "delta_E.csv", ms.dE, ms.dE_std, ms.dE_min, ms.dE_max)
    evaluation.write_series_csv(out / "delta_J.csv", ms.dJ, ms.dJ_std, ms.dJ_min, ms.dJ_max)

    checks = {
        "ftc_safe": float(np.min(synthesis.certify_safety(ftc.response, s.safety))) >= -1e-6,
        "regret_safe": float(np.min(synthesis.certify_safety(reg.response, s.safety))) >= -1e-6,
    }
    report = {
        "controllers": {"ftc": _summary(ftc, s.safety), "regret": _summary(reg, s.safety)},
        "N": int(W.shape[0]),
        "delta_E_final": float(ms.dE[-1]),
        "delta_J_final": float(ms.dJ[-1]),
        "checks": checks,
        "passed": all(checks.values()),
    }
    log.info("final-time tracking error increase %.2f%%, cost increase %.2f%%",
             100 * report["delta_E_final"], 100 * report["delta_J_final"])
    _write_json(out / "exp2_report.json", report)
    return report


def run_synthesis(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Synthesize every configured criterion and write one JSON artifact per controller."""
    out = Path(out_dir or cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    s = build(cfg)
    needs_bench = {"ftc", "regret"} & set(cfg.criteria)
    bench = benchmark(cfg, s) if needs_bench else None
    summary = {}
    for c in cfg.criteria:
        res = synthesize(c, s, bench)
        _write_json(out / f"{c}.json", res.to_dict(s.ops, s.tol))
        summary[c] = _summary(res, s.safety)
    return summary
