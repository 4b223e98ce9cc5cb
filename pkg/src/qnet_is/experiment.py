"""JSON experiment configs and the table-style runner behind the CLI."""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .hamiltonian import verify_saddle
from .network import (FEEDBACK, TANDEM, ModelError, NetworkModel, TargetSet, analytic_decay_rate,
                      build_feedback, build_tandem)
from .oracle import (ARRIVAL_START, DEFAULT_TOL, StateSpaceTooLarge, check_start,
                     solve_exact)
from .sampler import (estimate, kernel_plain, kernel_standard_heuristic, kernel_subsolution)
from .subsolution import build_for, resolve_delta, schedule, verify_subsolution

KERNELS = ("subsolution", "standard", "plain")
TABLE_IDS = ("1", "2", "4", "5", "6", "7", "8", "9")

CSV_COLUMNS = ("label", "n", "kernel", "eps", "delta", "estimate", "std_err", "ci95_low",
               "ci95_high", "exact_value", "empirical_decay_rate", "analytic_gamma",
               "replications", "seed", "hit_count")


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    model: dict
    target: dict = field(default_factory=lambda: {"kind": "total_population"})
    n: list = field(default_factory=lambda: [20])
    kernel: str = "subsolution"
    eps: float = 0.02
    delta: float | str = "auto"
    schedule: bool = False
    replications: int = 20000
    seed: int = 1
    exact: bool = True
    start: str = ARRIVAL_START
    label: str = ""

    def __post_init__(self):
        if isinstance(self.n, int):
            self.n = [self.n]
        self.n = [int(v) for v in self.n]
        if not self.n or any(v < 1 for v in self.n):
            raise ConfigError(f"n values must be positive integers, got {self.n}")
        if self.kernel not in KERNELS:
            raise ConfigError(f"kernel must be one of {KERNELS}, got {self.kernel!r}")
        if int(self.replications) < 2:
            raise ConfigError("replications must be >= 2")
        self.replications = int(self.replications)
        if not (isinstance(self.seed, int) and 0 <= self.seed < 2**64):
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed!r}")
        try:
            check_start(self.start)
            self.eps = float(self.eps)
            if self.kernel == "subsolution" and not self.schedule:
                resolve_delta(self.eps, self.delta)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        # fail early on bad model parameters
        self.build_model()
        self.build_target()

    def build_model(self) -> NetworkModel:
        m = self.model
        try:
            kind = m["kind"]
            if kind == TANDEM:
                mu = list(m["mu"])
                return build_tandem(int(m.get("d", len(mu))), float(m["lam"]), mu)
            if kind == FEEDBACK:
                mu1, mu2 = m["mu"]
                return build_feedback(float(m["lam"]), float(mu1), float(mu2), float(m["beta"]))
        except KeyError as exc:
            raise ConfigError(f"model: missing field {exc}") from None
        except (ModelError, TypeError, ValueError) as exc:
            raise ConfigError(f"model: {exc}") from None
        raise ConfigError(f"model: unknown kind {m.get('kind')!r}")

    def build_target(self) -> TargetSet:
        try:
            t = self.target
            if t.get("kind") == "individual_buffers":
                return TargetSet.buffers(t["bounds"])
            return TargetSet(t.get("kind", "total_population"))
        except (KeyError, ModelError, TypeError) as exc:
            raise ConfigError(f"target: {exc}") from None

    def params_for(self, n: int) -> tuple[float, float]:
        if self.schedule:
            return schedule(n)
        return self.eps, resolve_delta(self.eps, self.delta)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict, where: str = "config") -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"{where}: unknown fields {sorted(unknown)}")
        if "model" not in data:
            raise ConfigError(f"{where}: missing 'model'")
        try:
            return cls(**data)
        except ConfigError as exc:
            raise ConfigError(f"{where}: {exc}") from None


def parse_config_text(text: str, source: str = "<config>") -> list[ExperimentConfig]:
    """A single experiment object, or ``{"defaults": {...}, "experiments": [...]}``."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")
    if "experiments" in data:
        defaults = data.get("defaults", {})
        return [ExperimentConfig.from_dict({**defaults, **e}, f"{source}: experiments[{i}]")
                for i, e in enumerate(data["experiments"])]
    return [ExperimentConfig.from_dict(data, source)]


def load_config(path) -> list[ExperimentConfig]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    return parse_config_text(text, str(path))


def table_config(table_id: str) -> list[ExperimentConfig]:
    table_id = str(table_id)
    if table_id not in TABLE_IDS:
        raise ConfigError(f"unknown table {table_id!r}; available: {', '.join(TABLE_IDS)}")
    text = resources.files("qnet_is").joinpath(f"configs/table{table_id}.json").read_text()
    return parse_config_text(text, f"table{table_id}.json")


def apply_overrides(configs: list[ExperimentConfig], **overrides) -> list[ExperimentConfig]:
    """CLI flags win over file values; ``None`` means not given."""
    given = {k: v for k, v in overrides.items() if v is not None}
    if not given:
        return configs
    out = []
    for c in configs:
        d = c.to_dict()
        d.update(given)
        out.append(ExperimentConfig.from_dict(d, c.label or "config"))
    return out


def make_kernel(cfg: ExperimentConfig, model: NetworkModel, target: TargetSet, n: int):
    eps, delta = cfg.params_for(n)
    if cfg.kernel == "plain":
        return kernel_plain(model), None
    if cfg.kernel == "standard":
        return kernel_standard_heuristic(model), None
    spec = build_for(model, target, eps, delta)
    return kernel_subsolution(model, spec), spec


def run_experiment(cfg: ExperimentConfig, workers: int | None = None,
                   exact_cache=None) -> list[dict]:
    """One row per n; ``exact_value`` is None when the oracle is off or infeasible."""
    model, target = cfg.build_model(), cfg.build_target()
    gamma = analytic_decay_rate(model, target)
    rows = []
    for n in cfg.n:
        t0 = time.perf_counter()
        kernel, spec = make_kernel(cfg, model, target, n)
        stats = estimate(model, target, n, kernel, cfg.replications, cfg.seed, workers=workers,
                         start=cfg.start)
        exact = None
        if cfg.exact:
            try:
                if exact_cache is not None:
                    exact = exact_cache.get(model, target, n, DEFAULT_TOL, start=cfg.start).p
                else:
                    exact = solve_exact(model, target, n, start=cfg.start).p
            except StateSpaceTooLarge:
                exact = None
        eps, delta = cfg.params_for(n) if spec is not None else (None, None)
        rows.append({
            "label": cfg.label, "n": n, "kernel": cfg.kernel, "eps": eps, "delta": delta,
            "estimate": stats.mean, "std_err": stats.std_err, "ci95_low": stats.ci95_low,
            "ci95_high": stats.ci95_high, "exact_value": exact,
            "empirical_decay_rate": stats.empirical_decay_rate, "analytic_gamma": gamma,
            "replications": cfg.replications, "seed": cfg.seed, "hit_count": stats.hit_count,
            "wall_time": time.perf_counter() - t0,
        })
    return rows


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float):
        return f"{v:.3e}"
    return str(v)


def rows_to_csv(configs: list[ExperimentConfig], rows: list[dict]) -> str:
    """CSV with a ``# config:`` metadata line per experiment; no timing columns."""
    buf = io.StringIO()
    for c in configs:
        buf.write("# config: " + json.dumps(c.to_dict(), sort_keys=True) + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def parse_csv(text: str) -> tuple[list[dict], list[dict]]:
    """Inverse of :func:`rows_to_csv`: (config dicts, row dicts of strings)."""
    meta, body = [], []
    for line in text.splitlines():
        if line.startswith("# config: "):
            meta.append(json.loads(line[len("# config: "):]))
        elif not line.startswith("#"):
            body.append(line)
    rows = list(csv.DictReader(body))
    return meta, rows


def write_results(out: str | Path, configs, rows, extra: dict | None = None) -> tuple[Path, Path]:
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    csv_path = out.with_suffix(".csv")
    json_path = out.with_suffix(".json")
    csv_path.write_text(rows_to_csv(configs, rows))
    summary = {"configs": [c.to_dict() for c in configs], "rows": rows}
    if extra:
        summary.update(extra)
    json_path.write_text(json.dumps(summary, indent=2, default=_json_default))
    return csv_path, json_path


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o))


def exact_rows(cfg: ExperimentConfig) -> list[dict]:
    """Exact values for every n of a config; raises if the oracle is infeasible."""
    model, target = cfg.build_model(), cfg.build_target()
    gamma = analytic_decay_rate(model, target)
    rows = []
    for n in cfg.n:
        res = solve_exact(model, target, n, start=cfg.start)
        rows.append({"label": cfg.label, "n": n, "exact_value": res.p,
                     "exact_decay_rate": -math.log(res.p) / n if res.p > 0 else None,
                     "analytic_gamma": gamma, "states": res.states,
                     "sweeps": res.iterations, "wall_time": res.seconds})
    return rows


def verification_document(cfg: ExperimentConfig, samples: int = 1000, resolution: int = 40,
                          random_gradients: int = 5) -> dict:
    """Subsolution and saddle-point checks for one configuration."""
    model, target = cfg.build_model(), cfg.build_target()
    n = cfg.n[0]
    eps, delta = cfg.params_for(n)
    spec = build_for(model, target, eps, delta)
    report = verify_subsolution(spec, model, target, samples=samples, seed=cfg.seed % 2**32)
    rng = np.random.default_rng(cfg.seed)
    grads = [np.zeros(model.d)] + list(spec.gradients)
    grads += list(rng.uniform(-2.0, 2.0, size=(random_gradients, model.d)))
    saddle = []
    for p in grads:
        rep = verify_saddle(model, p, resolution if model.n_events <= 5 else 12)
        saddle.append({"p": list(map(float, p)), **rep.to_dict()})
    saddle_ok = all(s["gap"] >= -1e-10 and s["gap"] <= s["grid_error_bound"] + 1e-12
                    and abs(s["analytic"] - s["hamiltonian"]) <= 1e-10 for s in saddle)
    return {"label": cfg.label, "model": model.describe(), "target": target.describe(),
            "subsolution": spec.describe(), "verification": report.to_dict(),
            "saddle": saddle, "ok": bool(report.ok and saddle_ok)}
