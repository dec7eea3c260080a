"""Command-line runner: scenario JSON in, report JSON and per-client CSV out.

Exit codes: 0 success, 2 configuration error, 3 solver non-convergence
(the report is still written), 4 numerical-integrity error or oracle
disagreement.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import sys
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.stats import spearmanr

from . import __version__
from .client_game import best_response, nash_solve, perf_impact, perf_impact_derivative, thresholds
from .embedding import dist_sq
from .errors import ConfigError, DegenerateStateError, IntegrityError
from .scenario import GameProfile, ScenarioConfig, build_profile, config_from_dict
from .server_opt import SolverConfig, haipo, metric_bounds, payment_caps, server_utility, uniform_baseline

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NONCONVERGED = 3
EXIT_INTEGRITY = 4

MODES = ("nash", "haipo", "uniform", "sweep", "oracle-suite")
CSV_COLUMNS = ("client_id", "alpha", "cost", "het_to_removed", "payment", "participation", "q_bound")
PROFILE_KEYS = {"gram", "alpha", "cost", "removed_weights", "delta"}


@dataclass(frozen=True)
class RunRequest:
    mode: str
    config_path: str
    out_path: str
    payment_override: tuple[float, ...] | None = None
    sweep_key: str | None = None
    sweep_values: tuple | None = None
    sweep_mode: str = "haipo"
    seed_override: int | None = None
    budget_override: float | None = None
    epsilon: float | None = None
    grid_points: int = 101
    quiet: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode: must be one of {', '.join(MODES)}")
        if not self.config_path or not self.out_path:
            raise ConfigError("config and out paths must be nonempty")
        if self.mode == "sweep" and (not self.sweep_key or not self.sweep_values):
            raise ConfigError("sweep mode needs --sweep-key and --sweep-values")
        if self.sweep_mode not in ("nash", "haipo", "uniform"):
            raise ConfigError("sweep-mode: must be nash, haipo or uniform")
        if self.grid_points < 2:
            raise ConfigError("grid-points: must be >= 2")


@dataclass(frozen=True)
class Scenario:
    """Validated config plus an optional explicit profile block."""

    config: ScenarioConfig
    explicit: dict | None = None

    def to_dict(self) -> dict:
        d = self.config.to_dict()
        if self.explicit is not None:
            d["profile"] = self.explicit
        return d

    def replace(self, **changes) -> "Scenario":
        raw = self.config.to_dict()
        raw.update(changes)
        return Scenario(config_from_dict(raw), self.explicit)

    def profile(self) -> GameProfile:
        if self.explicit is None:
            return build_profile(self.config)
        e, c = self.explicit, self.config
        return GameProfile.from_gram(
            np.array(e["gram"], dtype=float), e["alpha"], e["cost"],
            removed_weights=e.get("removed_weights"), lambda_v=c.lambda_v, lambda_s=c.lambda_s,
            lambda_q=c.lambda_q, C=c.bound_constant, budget=c.budget, delta=e.get("delta"),
        )


def parse_scenario(raw) -> Scenario:
    if not isinstance(raw, dict):
        raise ConfigError("scenario file must hold a JSON object")
    raw = dict(raw)
    explicit = raw.pop("profile", None)
    if explicit is not None:
        if not isinstance(explicit, dict):
            raise ConfigError("profile: must be an object")
        unknown = sorted(set(explicit) - PROFILE_KEYS)
        missing = sorted({"gram", "alpha", "cost"} - set(explicit))
        if unknown or missing:
            raise ConfigError(f"profile: unknown keys {unknown}, missing keys {missing}")
    scenario = Scenario(config_from_dict(raw), explicit)
    if explicit is not None:
        try:
            scenario.profile()
        except (ValueError, TypeError) as exc:
            raise ConfigError(f"profile: {exc}") from exc
    return scenario


def load_scenario(path: str | Path) -> Scenario:
    try:
        raw = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON in {path}: {exc}") from exc
    return parse_scenario(raw)


# -- report pieces ------------------------------------------------------------


def het_to_removed(profile: GameProfile) -> list[float | None]:
    if profile.mu_R is None:
        return [None] * profile.n_clients
    return [math.sqrt(dist_sq(profile.table, profile.client_basis(i), profile.mu_R))
            for i in range(profile.n_clients)]


def profile_summary(profile: GameProfile) -> dict:
    R = profile.remaining_gram
    d = np.diag(R)
    D = np.sqrt(np.maximum(d[:, None] + d[None, :] - 2.0 * R, 0.0))
    return {
        "n_clients": profile.n_clients,
        "alpha": profile.alpha.tolist(),
        "cost": profile.cost.tolist(),
        "gamma": profile.gamma,
        "budget": profile.budget,
        "pairwise_distance": D.tolist(),
        "het_to_removed": het_to_removed(profile),
    }


def _spearman(x, y) -> float | None:
    if y is None or any(v is None for v in y):
        return None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        r = spearmanr(x, y)[0]
    return None if not np.isfinite(r) else float(r)


def participation_correlations(profile: GameProfile, x) -> dict:
    return {
        "alpha": _spearman(x, profile.alpha),
        "het_to_removed": _spearman(x, het_to_removed(profile)),
    }


def compare_modes(profile: GameProfile, cfg: SolverConfig = SolverConfig()) -> dict:
    """HAIPO and the uniform price side by side on one profile."""
    results = {"haipo": haipo(profile, cfg), "uniform": uniform_baseline(profile, cfg)}
    table = {}
    for name, r in results.items():
        table[name] = {
            "server_utility": r.server_utility,
            "payment_total": r.payment_total,
            "metrics": metric_bounds(profile, r.x_star).to_dict(),
            "correlations": participation_correlations(profile, r.x_star),
        }
    table["utility_gap"] = results["haipo"].server_utility - results["uniform"].server_utility
    return {"table": table, "results": {k: v.to_dict() for k, v in results.items()},
            "_raw": results}


def client_rows(profile: GameProfile, p, x) -> list[dict]:
    het = het_to_removed(profile)
    q = metric_bounds(profile, x).q_bounds
    return [
        {"client_id": i, "alpha": float(profile.alpha[i]), "cost": float(profile.cost[i]),
         "het_to_removed": het[i], "payment": float(p[i]), "participation": float(x[i]),
         "q_bound": float(q[i])}
        for i in range(profile.n_clients)
    ]


def rows_to_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: "" if r[k] is None else repr(r[k]) for k in CSV_COLUMNS})
    return buf.getvalue()


def _clean(obj):
    """Make a report JSON-safe: numpy to Python, non-finite floats to null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def canonical_json(obj) -> str:
    return json.dumps(_clean(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


# -- modes ------------------------------------------------------------------------


class _Timer:
    def __init__(self):
        self.stages: dict[str, float] = {}

    def run(self, name, fn, *args, **kwargs):
        t0 = time.perf_counter()
        try:
            return fn(*args, **kwargs)
        finally:
            self.stages[name] = self.stages.get(name, 0.0) + time.perf_counter() - t0


def _solver_config(req: RunRequest) -> SolverConfig:
    if req.epsilon is None:
        return SolverConfig()
    if not req.epsilon > 0:
        raise ConfigError("epsilon: must be > 0")
    return SolverConfig(epsilon=req.epsilon)


def _payments(req: RunRequest, profile: GameProfile) -> np.ndarray:
    if req.payment_override is None:
        return np.zeros(profile.n_clients)
    p = np.array(req.payment_override, dtype=float)
    if p.shape != (profile.n_clients,) or np.any(p < 0) or not np.all(np.isfinite(p)):
        raise ConfigError(f"payments: need {profile.n_clients} finite values >= 0")
    return p


def _run_single(mode: str, req: RunRequest, scenario: Scenario, cfg: SolverConfig, timer: _Timer):
    """Run one non-sweep mode; returns (outputs, payments, participation, converged)."""
    profile = timer.run("profile", scenario.profile)
    out: dict = {"profile_summary": profile_summary(profile)}
    if mode == "nash":
        p = _payments(req, profile)
        eq = timer.run("nash", nash_solve, profile, p, tol=cfg.nash_tol, max_iters=cfg.nash_max_iters)
        out["equilibrium"] = eq.to_dict()
        out["payments"] = p.tolist()
        out["server_utility"] = server_utility(profile, eq.x_star, p)
        x, converged = eq.x_star, eq.converged
    elif mode == "haipo":
        r = timer.run("haipo", haipo, profile, cfg)
        out["haipo"] = r.to_dict()
        p, x, converged = r.p_star, r.x_star, r.converged
    elif mode == "uniform":
        cmp = timer.run("compare", compare_modes, profile, cfg)
        raw = cmp.pop("_raw")
        out["comparison"] = cmp
        r = raw["uniform"]
        p, x = r.p_star, r.x_star
        converged = raw["uniform"].converged and raw["haipo"].converged
    else:
        suite = timer.run("oracles", oracle_suite, profile, req.grid_points, cfg)
        out["oracle_suite"] = suite
        p = np.array(suite["payments"])
        x = np.array(suite["nash_x"])
        converged = True
    out["metrics"] = metric_bounds(profile, x).to_dict()
    out["correlations"] = participation_correlations(profile, x)
    return out, client_rows(profile, p, x), converged


def oracle_suite(profile: GameProfile, grid_points: int, cfg: SolverConfig) -> dict:
    """Cross-check the closed forms on this profile against brute force."""
    from .oracles import finite_difference, grid_best_response, grid_nash_set, grid_payment_search

    n = profile.n_clients
    ones = np.ones(n)
    # threshold midpoints against full participation exercise the interior zone
    p = np.array([max(0.0, 0.5 * sum(thresholds(profile, k, ones))) for k in range(n)])
    eq = nash_solve(profile, p, tol=cfg.nash_tol, max_iters=cfg.nash_max_iters)
    checks = []
    step = 1.0 / (grid_points - 1)
    for k in range(n):
        for pk in np.linspace(0.0, 2.0 * profile.cost[k], 5):
            br = best_response(profile, k, pk, ones)
            g = grid_best_response(profile, k, pk, ones, grid_points)
            checks.append({"check": "best_response", "client": k, "payment": float(pk),
                           "value": br, "oracle": g, "ok": abs(br - g) <= step + 1e-12})
        x = np.full(n, 0.5)
        fd = finite_difference(lambda v: perf_impact(profile, v, k), x, k)
        an = perf_impact_derivative(profile, x, k)
        checks.append({"check": "impact_derivative", "client": k, "value": an, "oracle": fd,
                       "ok": abs(an - fd) <= 1e-4 * max(1.0, abs(fd))})
    if n <= 3:
        g = grid_nash_set(profile, p, grid_points)
        ok = np.all(np.abs(g - eq.x_star) <= 2 * step + 1e-12, axis=1)
        checks.append({"check": "nash", "value": eq.x_star.tolist(), "oracle": g.tolist(),
                       "ok": bool(ok.any())})
    if n <= 2:
        r = haipo(profile, cfg)
        _, gu = grid_payment_search(profile, grid_points, cfg)
        checks.append({"check": "haipo", "value": r.server_utility, "oracle": gu,
                       "ok": r.server_utility >= gu - 0.05 * abs(gu)})
    return {"payments": p.tolist(), "nash_x": eq.x_star.tolist(), "grid_points": grid_points, "checks": checks,
            "passed": all(c["ok"] for c in checks), "caps": payment_caps(profile, cfg).tolist()}


def _coerce_sweep_value(key: str, text: str):
    field = {f.name: f for f in dataclasses.fields(ScenarioConfig)}.get(key)
    if field is None or key == "deltas":
        raise ConfigError(f"sweep-key: {key!r} is not a sweepable scenario field")
    try:
        v = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"sweep-values: cannot parse {text!r}") from exc
    return v


def run(req: RunRequest) -> int:
    """Execute a request and write its outputs; returns the exit code."""
    timer = _Timer()
    t0 = time.perf_counter()
    scenario = load_scenario(req.config_path)
    overrides = {}
    if req.seed_override is not None:
        overrides["seed"] = req.seed_override
    if req.budget_override is not None:
        overrides["budget"] = req.budget_override
    if overrides:
        scenario = scenario.replace(**overrides)
    cfg = _solver_config(req)
    out = Path(req.out_path)
    out.parent.mkdir(parents=True, exist_ok=True)

    canonical = {
        "version": __version__,
        "mode": req.mode,
        "config": scenario.to_dict(),
        "solver": dataclasses.asdict(cfg),
    }
    if req.mode == "nash":
        canonical["payment_override"] = None if req.payment_override is None else list(req.payment_override)
    if req.mode == "oracle-suite":
        canonical["grid_points"] = req.grid_points

    converged = True
    if req.mode == "sweep":
        values = [_coerce_sweep_value(req.sweep_key, v) for v in req.sweep_values]
        variants = [scenario.replace(**{req.sweep_key: v}) for v in values]
        timers = [_Timer() for _ in variants]

        def one(i):
            return _run_single(req.sweep_mode, req, variants[i], cfg, timers[i])

        with ThreadPoolExecutor(max_workers=min(4, len(variants))) as pool:
            results = list(pool.map(one, range(len(variants))))
        rows = []
        for v, (outputs, crows, ok), var in zip(values, results, variants):
            rows.append({"key": req.sweep_key, "value": v, "config": var.to_dict(), "outputs": outputs})
            converged &= ok
            (out.parent / f"{out.stem}_{req.sweep_key}_{_slug(v)}.csv").write_text(rows_to_csv(crows))
        canonical["sweep"] = {"key": req.sweep_key, "mode": req.sweep_mode, "rows": rows}
        timing = {"entries": [t.stages for t in timers]}
    else:
        outputs, crows, converged = _run_single(req.mode, req, scenario, cfg, timer)
        canonical["outputs"] = outputs
        out.with_suffix(".csv").write_text(rows_to_csv(crows))
        timing = {"stages": timer.stages}
    canonical["converged"] = converged
    timing["total"] = time.perf_counter() - t0

    report = {"canonical": canonical, "timing": timing}
    out.write_text(canonical_json(report))
    if not req.quiet:
        print(f"{req.mode}: wrote {out}", file=sys.stderr)
    if req.mode == "oracle-suite" and not canonical["outputs"]["oracle_suite"]["passed"]:
        return EXIT_INTEGRITY
    return EXIT_OK if converged else EXIT_NONCONVERGED


def _slug(v) -> str:
    return json.dumps(v).replace(".", "p").replace("-", "m").replace('"', "")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fuincentive", description="Federated unlearning incentive game runner.")
    ap.add_argument("--mode", required=True, choices=MODES)
    ap.add_argument("--config", required=True, help="scenario JSON file")
    ap.add_argument("--out", required=True, help="report JSON path; CSV goes next to it")
    ap.add_argument("--seed-override", type=int)
    ap.add_argument("--epsilon", type=float, help="HAIPO stopping tolerance on payment steps")
    ap.add_argument("--budget-override", type=float)
    ap.add_argument("--grid-points", type=int, default=101, help="oracle grid resolution")
    ap.add_argument("--quiet", action="store_true")
    ap.add_argument("--payments", type=float, nargs="+", help="payment vector for nash mode (default zero)")
    ap.add_argument("--sweep-key", help="scenario field varied in sweep mode")
    ap.add_argument("--sweep-values", nargs="+", help="JSON values for the sweep key")
    ap.add_argument("--sweep-mode", default="haipo", choices=("nash", "haipo", "uniform"))
    return ap


def _fail(code: int, kind: str, exc: BaseException) -> int:
    print(json.dumps({"error": kind, "message": str(exc)}), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        req = RunRequest(
            mode=args.mode, config_path=args.config, out_path=args.out,
            payment_override=None if args.payments is None else tuple(args.payments),
            sweep_key=args.sweep_key,
            sweep_values=None if args.sweep_values is None else tuple(args.sweep_values),
            sweep_mode=args.sweep_mode, seed_override=args.seed_override,
            budget_override=args.budget_override, epsilon=args.epsilon,
            grid_points=args.grid_points, quiet=args.quiet,
        )
        return run(req)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", exc)
    except (IntegrityError, DegenerateStateError) as exc:
        return _fail(EXIT_INTEGRITY, "integrity", exc)


if __name__ == "__main__":
    sys.exit(main())
