"""
Suite Runner for martnorm
Runs one seeded check over a block of generated instances, writes the
per-seed CSV and aggregates a CSV back into a summary.
"""

import csv
import io
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from app.core.exceptions import MalformedReportError, SuiteConfigError
from app.models.filtration import AdaptedProcess, StoppingPartition, StoppingTime
from app.schemas.generators import GeneratorSpec
from app.schemas.reports import SummaryReport, Window
from app.schemas.suite import SuiteConfig
from app.services.decomposition import decomposition_service
from app.services.drbsde import drbsde_service
from app.services.generators import generator_service
from app.services.gexp import g_expectation_service
from app.services.model_io import LoadedModel

logger = logging.getLogger(__name__)

SCHEMA_LINE = "# schema: martnorm.suite.v1"

Row = Dict[str, Optional[float]]


def _load(config: SuiteConfig, seed: int, kind: str, **extra) -> LoadedModel:
    spec = GeneratorSpec(
        seed=seed,
        depth=config.depth.for_seed(seed),
        branching=config.branching,
        value_scale=config.value_scale,
        kind=kind,
        **extra,
    )
    return LoadedModel(generator_service.random_instance(spec))


# Checks -------------------------------------------------------------------------


def check_doob(config: SuiteConfig, seed: int) -> Row:
    loaded = _load(config, seed, "random_semimartingale")
    model, P, Y = loaded.model, loaded.measure(), loaded.process("Y")
    dec = decomposition_service.doob_decompose(model, P, Y)
    reconstruction = np.max(np.abs(Y.values - dec.base - dec.M.values - dec.A.values))
    drift = np.max(np.abs(decomposition_service.martingale_drift(model, P, dec.M)))
    spread = max(
        (float(np.ptp(dec.A.values[list(kids)])) for kids in model.children if kids),
        default=0.0,
    )
    return {"reconstruction": reconstruction, "drift": drift, "spread": spread,
            "value": max(reconstruction, drift, spread)}


def check_finest_identity(config: SuiteConfig, seed: int) -> Row:
    loaded = _load(config, seed, "random_semimartingale")
    model, P, Y = loaded.model, loaded.measure(), loaded.process("Y")
    report = decomposition_service.norm_p(model, P, Y, "finest")
    dec = decomposition_service.doob_decompose(model, P, Y)
    tv = decomposition_service.total_variation(model, dec.A).values[model.leaves]
    expected = report.norm_p0_sq + decomposition_service.core.leaf_expectation(model, P, tv ** 2)
    return {"norm_p_sq": report.norm_p_sq, "expected": expected, "value": abs(report.norm_p_sq - expected)}


def check_norm_equivalence(config: SuiteConfig, seed: int) -> Row:
    loaded = _load(config, seed, "random_semimartingale")
    report = decomposition_service.norm_p(loaded.model, loaded.measure(), loaded.process("Y"),
                                          config.strategy, config.max_segments)
    return {"norm_p0_sq": report.norm_p0_sq, "norm_p_sq": report.norm_p_sq,
            "decomposition_energy": report.decomposition_energy, "value": report.ratio}


def check_monotone_energy(config: SuiteConfig, seed: int) -> Row:
    loaded = _load(config, seed, "random_semimartingale", monotone=True)
    result = decomposition_service.monotone_energy_check(loaded.model, loaded.measure(), loaded.process("Y"))
    return {"energy": result.energy, "norm_p0_sq": result.reference, "value": result.ratio}


def check_sampled_energy(config: SuiteConfig, seed: int) -> Row:
    loaded = _load(config, seed, "random_semimartingale", stride=2)
    model = loaded.model
    result = decomposition_service.sampled_energy_check(
        model, loaded.measure(), loaded.process("Y"), StoppingPartition.grid(model)
    )
    return {"energy": result.energy, "sampled_norm_sq": result.reference, "value": result.ratio}


def check_partition_sup(config: SuiteConfig, seed: int) -> Row:
    loaded = _load(config, seed, "random_semimartingale")
    model, P, Y = loaded.model, loaded.measure(), loaded.process("Y")
    finest = decomposition_service.norm_p(model, P, Y, "finest").norm_p_sq
    exact = decomposition_service.norm_p(model, P, Y, "enumerate", config.max_segments).norm_p_sq
    return {"finest": finest, "enumerate": exact, "strict_excess": float(exact > finest * (1 + 1e-12)),
            "value": exact / finest if finest > 0 else 1.0}


def check_zigzag(config: SuiteConfig, seed: int) -> Row:
    loaded = _load(config, seed, "zigzag")
    model, K, Y = loaded.model, loaded.process("K"), loaded.process("Y")
    tv = decomposition_service.total_variation(model, Y).values[model.leaves]
    tv_gap = float(np.max(np.abs(tv - K.values[model.leaves])))
    bound_gap = max(float(Y.values.max()), float(-1.0 - Y.values.min()), 0.0)
    return {"K_N_max": float(K.values.max()), "tv_gap": tv_gap, "bound_gap": bound_gap,
            "value": max(tv_gap, bound_gap)}


def _solved(config: SuiteConfig, seed: int):
    loaded = _load(config, seed, "random_barriers")
    instance = loaded.instance()
    measure = loaded.measure()
    return loaded.model, measure, instance, drbsde_service.solve(loaded.model, measure, instance)


def check_skorokhod(config: SuiteConfig, seed: int) -> Row:
    model, _, instance, sol = _solved(config, seed)
    Y, L, U = sol.Y.values, instance.lower.values, instance.upper.values
    inside = float(max(np.max(L - Y), np.max(Y - U), 0.0))
    up, down = sol.push_up, sol.push_down
    orthogonal = float(np.max(np.minimum(up, down)))
    touch = float(max(np.max(np.abs(Y - L)[up > 0], initial=0.0), np.max(np.abs(Y - U)[down > 0], initial=0.0)))
    return {"inside": inside, "orthogonal": orthogonal, "touch": touch, "value": max(inside, orthogonal, touch)}


def check_penalization(config: SuiteConfig, seed: int) -> Row:
    model, measure, instance, sol = _solved(config, seed)
    penalized = drbsde_service.solve_penalized(model, measure, instance)
    gap = float(np.max(np.abs(sol.Y.values - penalized.Y.values)))
    return {"value": gap}


def check_sandwich(config: SuiteConfig, seed: int) -> Row:
    """Each barrier term against the matching term of the witness norm; every ratio is at most 1"""
    model, measure, instance, _ = _solved(config, seed)
    L, U = instance.lower, instance.upper
    S = drbsde_service.mokobodski_witness(model, measure, L, U)
    strategy = "enumerate" if config.strategy == "greedy" else config.strategy
    barrier = drbsde_service.barrier_partition(model, measure, L, U, strategy, config.max_segments)
    witness = decomposition_service.partition_term(model, measure, S, strategy, config.max_segments)
    residual = drbsde_service.sandwich_gap(model, measure, L, U, S, barrier.partition)
    sup_sq = decomposition_service.norm_p0(model, measure, S)
    lower_sq = decomposition_service.norm_p0(model, measure, AdaptedProcess(np.maximum(L.values, 0.0)))
    upper_sq = decomposition_service.norm_p0(model, measure, AdaptedProcess(np.maximum(-U.values, 0.0)))

    def ratio(a: float, b: float) -> float:
        return a / b if b > 0 else (0.0 if a <= 0 else math.inf)

    return {
        "barrier_partition_term": barrier.value,
        "witness_partition_term": witness.value,
        "sandwich_residual": residual,
        "value": max(ratio(barrier.value, witness.value), ratio(lower_sq, sup_sq), ratio(upper_sq, sup_sq)),
    }


def check_solution_estimate(config: SuiteConfig, seed: int) -> Row:
    model, measure, instance, _ = _solved(config, seed)
    report = drbsde_service.estimate_report(model, measure, instance)
    return {"i0_sq": report.i0_sq, "barrier_norm_sq": report.barrier_norm_sq,
            "solution_norm_sq": report.solution_norm_sq, "value": report.ratio}


def check_sensitivity(config: SuiteConfig, seed: int) -> Row:
    model, measure, instance, _ = _solved(config, seed)
    report = drbsde_service.barrier_shift_sensitivity(model, measure, instance)
    return {"lhs_first": report.points[0].report.lhs, "lhs_last": report.points[-1].report.lhs,
            "value": report.decay_rate}


def _family_instance(config: SuiteConfig, seed: int):
    loaded = _load(config, seed, "random_semimartingale")
    return loaded.model, loaded.family(), loaded.process("Y"), loaded.process("Y2")


def check_dpp(config: SuiteConfig, seed: int) -> Row:
    model, family, Y, _ = _family_instance(config, seed)
    base = family.selection_measure({}, "base")
    first = StoppingTime.constant(model, min(1, model.horizon))
    second = StoppingTime.first_hitting(model, Y.values > Y.values[0], after=first)
    tower = g_expectation_service.dpp_tower(model, family, Y, first, second, base)
    below = {int(v): 1 for v in family.internal_nodes() if first.stop_node[v] >= 0}
    other = family.selection_measure(below, "other")
    _, paste_gap = g_expectation_service.pasting_maximum(model, base, other, Y, first)
    return {"tower_gap": tower.gap, "paste_gap": paste_gap, "value": max(tower.gap, paste_gap)}


def check_classification(config: SuiteConfig, seed: int) -> Row:
    model, family, Y, Y2 = _family_instance(config, seed)
    broken = 0
    for process in (Y, Y2):
        broken += len(g_expectation_service.classify(model, family, process).implication_violations())
    return {"value": float(broken)}


def check_family_norm_ratio(config: SuiteConfig, seed: int) -> Row:
    model, family, Y, _ = _family_instance(config, seed)
    cp = g_expectation_service.norm_cp(model, family, Y, config.strategy, config.max_segments).value_sq
    g = g_expectation_service.norm_g(model, family, Y, config.strategy, config.max_segments).value_sq
    return {"norm_cp_sq": cp, "norm_g_sq": g, "value": math.sqrt(cp / g) if g > 0 else None}


def check_g_triangle(config: SuiteConfig, seed: int) -> Row:
    model, family, Y, Y2 = _family_instance(config, seed)
    return {"value": g_expectation_service.triangle_defect(model, family, Y, Y2, config.strategy)}


CHECKS: Dict[str, Callable[[SuiteConfig, int], Row]] = {
    "doob": check_doob,
    "finest_identity": check_finest_identity,
    "norm_equivalence": check_norm_equivalence,
    "monotone_energy": check_monotone_energy,
    "sampled_energy": check_sampled_energy,
    "partition_sup": check_partition_sup,
    "zigzag": check_zigzag,
    "skorokhod": check_skorokhod,
    "penalization": check_penalization,
    "sandwich": check_sandwich,
    "solution_estimate": check_solution_estimate,
    "sensitivity": check_sensitivity,
    "dpp": check_dpp,
    "classification": check_classification,
    "family_norm_ratio": check_family_norm_ratio,
    "g_triangle": check_g_triangle,
}


def _run_seed(payload: Tuple[str, int]) -> Row:
    raw, seed = payload
    config = SuiteConfig.model_validate_json(raw)
    row = CHECKS[config.check](config, seed)
    return {"seed": seed, "depth": config.depth.for_seed(seed), **row}


def in_window(value: Optional[float], window: Window) -> bool:
    return value is None or window[0] <= value <= window[1]


class SuiteRunner:
    """Fans a check out over seeds; rows come back ordered by seed"""

    def __init__(self, config: SuiteConfig):
        self.config = config
        self.window: Optional[Window] = tuple(config.window) if config.window else None

    def require_window(self) -> Window:
        if self.window is None:
            raise SuiteConfigError(f"suite config for {self.config.check} has no window; run it with --pilot first")
        return self.window

    def rows(self) -> List[Row]:
        raw = self.config.model_dump_json()
        payloads = [(raw, seed) for seed in self.config.seeds.seeds()]
        logger.info(f"suite {self.config.check}: {len(payloads)} seeds on {self.config.workers} worker(s)")
        if self.config.workers == 1:
            return [_run_seed(p) for p in payloads]
        with ProcessPoolExecutor(max_workers=self.config.workers) as pool:
            return list(pool.map(_run_seed, payloads))

    def to_csv(self, rows: List[Row], reproducible: bool = False) -> str:
        self.require_window()
        buffer = io.StringIO()
        buffer.write(SCHEMA_LINE + "\n")
        buffer.write(f"# check: {self.config.check}\n")
        buffer.write(f"# window: {self.window[0]!r},{self.window[1]!r}\n")
        if not reproducible:
            buffer.write(f"# generated: {datetime.now(timezone.utc).isoformat()}\n")
        columns = list(rows[0].keys()) + ["in_window"] if rows else ["seed", "depth", "value", "in_window"]
        writer = csv.DictWriter(buffer, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for row in rows:
            value = row.get("value")
            record = {k: "" if v is None else (repr(float(v)) if k not in ("seed", "depth") else int(v))
                      for k, v in row.items()}
            record["in_window"] = int(in_window(value, self.window))
            writer.writerow(record)
        return buffer.getvalue()

    def run(self, out: Optional[str] = None, reproducible: bool = False) -> str:
        self.require_window()
        rows = self.rows()
        text = self.to_csv(rows, reproducible)
        out = out or self.config.csv
        if out:
            Path(out).parent.mkdir(parents=True, exist_ok=True)
            Path(out).write_text(text, encoding="utf-8")
            logger.info(f"wrote {len(rows)} rows to {out}")
        return text

    def pilot(self, margin: float = 0.1) -> Window:
        """Empirical window of the check over the seed block, widened by ``margin``"""
        values = [row["value"] for row in self.rows() if row.get("value") is not None]
        if not values:
            raise MalformedReportError("pilot run produced no values")
        low, high = min(values), max(values)
        low, high = low - margin * abs(low), high + margin * abs(high)
        if high <= low:
            high = low + max(abs(low), 1.0) * 1e-12
        return (low, high)


def report_summary(text: str) -> SummaryReport:
    """Aggregate suite CSV text: min, max, mean and the seeds outside the recorded window"""
    lines = text.splitlines()
    if not lines or lines[0].strip() != SCHEMA_LINE:
        raise MalformedReportError("missing suite schema line")
    check, window = None, None
    body_start = 1
    for i, line in enumerate(lines[1:], start=1):
        if not line.startswith("#"):
            body_start = i
            break
        key, _, rest = line[1:].partition(":")
        key, rest = key.strip(), rest.strip()
        if key == "check":
            check = rest
        elif key == "window":
            try:
                low, high = (float(x) for x in rest.split(","))
            except ValueError:
                raise MalformedReportError(f"bad window line: {line}")
            window = (low, high)
    else:
        body_start = len(lines)
    if check is None or window is None:
        raise MalformedReportError("missing check or window header")

    reader = csv.DictReader(lines[body_start:])
    if not reader.fieldnames or not {"seed", "value"} <= set(reader.fieldnames):
        raise MalformedReportError("suite CSV needs seed and value columns")
    values, violating, count = [], [], 0
    for row in reader:
        count += 1
        try:
            seed = int(row["seed"])
            value = float(row["value"]) if row["value"] not in ("", None) else None
        except (TypeError, ValueError):
            raise MalformedReportError(f"bad row: {row}")
        if value is None:
            continue
        values.append(value)
        if not in_window(value, window):
            violating.append(seed)
    return SummaryReport(
        check=check,
        count=count,
        min=min(values) if values else None,
        max=max(values) if values else None,
        mean=float(np.mean(values)) if values else None,
        window=window,
        violating_seeds=violating,
        passed=not violating,
    )


def write_pilot_config(config: SuiteConfig, window: Window, path: str, margin: float = 0.1) -> None:
    """Copy of ``config`` with the pilot window and where it came from"""
    data = config.model_dump(exclude_none=True)
    data["window"] = list(window)
    data["provenance"] = {
        "source": "pilot",
        "seeds": config.seeds.model_dump(),
        "margin": margin,
        "generated": datetime.now(timezone.utc).date().isoformat(),
    }
    SuiteConfig.model_validate(data)
    Path(path).write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
