"""Experiment grids: train, compile and transfer over maps, sizes, seeds and test types."""

from __future__ import annotations

import csv
import io
import json
import logging
import os
from collections import Counter, defaultdict
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Iterable, Sequence

import yaml
from scipy.stats import beta

from .edge_matcher import MatchCriterion
from .gridworld import resolve_map
from .learner import Hyperparams, extract_state_centric_options, train
from .option_compiler import compile as compile_options
from .taskgen import GenParams, SpecType, sample_set
from .transfer import (
    RANDOM_BUDGET,
    FailureCause,
    TransferConfig,
    TransferContext,
    TransferOutcome,
    lpopl_baseline,
    random_baseline,
    transfer,
)

log = logging.getLogger(__name__)

BASELINES = ("random", "lpopl")
TEST_SEED_OFFSET = 1000


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    maps: tuple[str, ...]
    train_type: SpecType = SpecType.MIXED
    train_sizes: tuple[int, ...] = (5, 10, 20)
    test_types: tuple[SpecType, ...] = tuple(SpecType)
    test_size: int = 50
    criteria: tuple[MatchCriterion, ...] = tuple(MatchCriterion)
    baselines: tuple[str, ...] = ()
    seeds: tuple[int, ...] = (0,)
    workers: int = 1
    output: str = "results"
    hyperparams: Hyperparams = Hyperparams()
    generator: GenParams = GenParams()
    n_rollouts: int = 1
    step_cap: int | None = None
    step_budget: int = 500

    def __post_init__(self):
        if not self.maps:
            raise ConfigError("at least one map is required")
        if not self.train_sizes or any(n <= 0 for n in self.train_sizes):
            raise ConfigError("train sizes must be positive")
        if self.test_size <= 0:
            raise ConfigError("test size must be positive")
        if not self.seeds:
            raise ConfigError("at least one seed is required")
        unknown = set(self.baselines) - set(BASELINES)
        if unknown:
            raise ConfigError(f"unknown baselines {sorted(unknown)}; expected {list(BASELINES)}")

    @classmethod
    def from_dict(cls, doc: dict, base_dir: Path | None = None) -> "ExperimentConfig":
        doc = dict(doc)
        known = {f.name for f in fields(cls)}
        extra = set(doc) - known
        if extra:
            raise ConfigError(f"unknown config keys {sorted(extra)}")
        try:
            if "maps" in doc:
                doc["maps"] = tuple(_map_ref(m, base_dir) for m in _as_list(doc["maps"]))
            if "train_type" in doc:
                doc["train_type"] = SpecType.parse(doc["train_type"])
            if "test_types" in doc:
                doc["test_types"] = tuple(SpecType.parse(t) for t in _as_list(doc["test_types"]))
            if "criteria" in doc:
                doc["criteria"] = tuple(MatchCriterion.parse(c) for c in _as_list(doc["criteria"]))
            for key in ("train_sizes", "seeds", "baselines"):
                if key in doc:
                    doc[key] = tuple(_as_list(doc[key]))
            if "hyperparams" in doc:
                doc["hyperparams"] = Hyperparams(**doc["hyperparams"])
            if "generator" in doc:
                g = dict(doc["generator"])
                for key in ("subtasks", "constraints", "vocab"):
                    if key in g:
                        g[key] = tuple(g[key])
                doc["generator"] = GenParams(**g)
            return cls(**doc)
        except (TypeError, ValueError) as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(str(e)) from None

    def to_dict(self) -> dict:
        return {
            "maps": list(self.maps),
            "train_type": self.train_type.value,
            "train_sizes": list(self.train_sizes),
            "test_types": [t.value for t in self.test_types],
            "test_size": self.test_size,
            "criteria": [c.value for c in self.criteria],
            "baselines": list(self.baselines),
            "seeds": list(self.seeds),
            "workers": self.workers,
            "output": self.output,
            "hyperparams": asdict(self.hyperparams),
            "generator": {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self.generator).items()},
            "n_rollouts": self.n_rollouts,
            "step_cap": self.step_cap,
            "step_budget": self.step_budget,
        }


def _as_list(v) -> list:
    return list(v) if isinstance(v, (list, tuple)) else [v]


def _map_ref(ref: str, base_dir: Path | None) -> str:
    if base_dir is not None and not Path(ref).is_absolute() and (base_dir / ref).is_file():
        return str(base_dir / ref)
    try:
        resolve_map(ref)
    except (OSError, ValueError) as e:
        raise ConfigError(f"map {ref!r}: {e}") from None
    return ref


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: {e}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    return ExperimentConfig.from_dict(doc, base_dir=path.parent)


# --- results -----------------------------------------------------------------

CAUSE_COLUMNS = {c: c.slug for c in FailureCause}


@dataclass(frozen=True)
class ResultRow:
    map: str
    train_type: str
    train_size: int
    test_type: str
    criterion: str
    seed: int
    n_tests: int
    n_success: int
    success_rate: float
    specification_failure: int
    no_feasible_path: int
    options_exhausted: int
    mean_steps: float

    @property
    def key(self) -> tuple:
        return (self.map, self.train_type, self.train_size, self.test_type, self.criterion, self.seed)

    @classmethod
    def from_outcomes(cls, key: tuple, outcomes: Sequence[TransferOutcome]) -> "ResultRow":
        causes = Counter(o.cause for o in outcomes if not o.success)
        n = len(outcomes)
        s = sum(o.success for o in outcomes)
        steps = sum(o.n_steps for o in outcomes) / n if n else 0.0
        return cls(
            *key,
            n_tests=n,
            n_success=s,
            success_rate=round(s / n, 6) if n else 0.0,
            specification_failure=causes[FailureCause.SPECIFICATION_FAILURE],
            no_feasible_path=causes[FailureCause.NO_FEASIBLE_PATH],
            options_exhausted=causes[FailureCause.OPTIONS_EXHAUSTED],
            mean_steps=round(steps, 4),
        )


COLUMNS = [f.name for f in fields(ResultRow)]


@dataclass
class ResultTable:
    rows: list[ResultRow] = field(default_factory=list)

    def sorted(self) -> "ResultTable":
        return ResultTable(sorted(self.rows, key=lambda r: r.key))

    def where(self, **match) -> list[ResultRow]:
        return [r for r in self.rows if all(getattr(r, k) == v for k, v in match.items())]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in self.sorted().rows:
            w.writerow([getattr(r, c) for c in COLUMNS])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps([asdict(r) for r in self.sorted().rows], indent=1)

    def write(self, out_dir: str | Path) -> tuple[Path, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        csv_path, json_path = out / "results.csv", out / "results.json"
        csv_path.write_text(self.to_csv(), encoding="utf-8")
        json_path.write_text(self.to_json() + "\n", encoding="utf-8")
        return csv_path, json_path

    @classmethod
    def read(cls, path: str | Path) -> "ResultTable":
        path = Path(path)
        if path.suffix == ".json":
            return cls([ResultRow(**r) for r in json.loads(path.read_text(encoding="utf-8"))])
        rows = []
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != COLUMNS:
                raise ValueError(f"{path}: columns {reader.fieldnames} do not match {COLUMNS}")
            for rec in reader:
                rows.append(_row_from_strings(rec))
        return cls(rows)


def _row_from_strings(rec: dict) -> ResultRow:
    conv = {}
    for f in fields(ResultRow):
        v = rec[f.name]
        conv[f.name] = int(v) if f.type == "int" else float(v) if f.type == "float" else v
    return ResultRow(**conv)


# --- running -----------------------------------------------------------------


@dataclass(frozen=True)
class _Cell:
    map_ref: str
    seed: int
    config: ExperimentConfig


def _test_sets(cfg: ExperimentConfig, seed: int, train_pool: list) -> dict:
    gen = cfg.generator
    params = GenParams(gen.subtasks, gen.constraints, gen.vocab, seed + TEST_SEED_OFFSET)
    return {t: sample_set(t, cfg.test_size, params, exclude=train_pool) for t in cfg.test_types}


def run_cell(cell: _Cell, keep_outcomes: bool = False):
    cfg = cell.config
    grid = resolve_map(cell.map_ref)
    map_name = grid.name or cell.map_ref
    gen = cfg.generator
    params = GenParams(gen.subtasks, gen.constraints, gen.vocab, cell.seed)
    pool = sample_set(cfg.train_type, max(cfg.train_sizes), params)
    tests = _test_sets(cfg, cell.seed, pool)
    h = Hyperparams(**{**asdict(cfg.hyperparams), "seed": cell.seed})
    rows, kept = [], []
    for size in sorted(set(cfg.train_sizes)):
        train_set = pool[:size]
        bank = train(grid, train_set, h)
        options = compile_options(
            grid, train_set, extract_state_centric_options(bank, train_set), cfg.n_rollouts, cfg.step_cap
        )
        ctx = TransferContext(grid, options)
        log.info("%s seed %d size %d: %d subtasks, %d options", map_name, cell.seed, size, len(bank), len(options))
        for t, formulas in tests.items():
            groups = {}
            for c in cfg.criteria:
                tc = TransferConfig(criterion=c, step_budget=cfg.step_budget)
                groups[c.value] = [transfer(grid, f, options, tc, ctx) for f in formulas]
            if "random" in cfg.baselines:
                groups["random"] = [
                    random_baseline(grid, f, RANDOM_BUDGET, seed=cell.seed * 100_003 + i) for i, f in enumerate(formulas)
                ]
            if "lpopl" in cfg.baselines:
                groups["lpopl"] = [lpopl_baseline(grid, f, options.policies, RANDOM_BUDGET) for f in formulas]
            for name, outcomes in groups.items():
                key = (map_name, cfg.train_type.value, size, t.value, name, cell.seed)
                rows.append(ResultRow.from_outcomes(key, outcomes))
                if keep_outcomes:
                    kept.append((key, outcomes))
    return rows, kept


def _worker_count(requested: int) -> int:
    env = os.environ.get("LTL_TRANSFER_WORKERS")
    return max(1, int(env)) if env else max(1, requested)


def run_experiment(cfg: ExperimentConfig, keep_outcomes: bool = False):
    """Returns the result table and, if asked, every outcome keyed by its row."""
    cells = [_Cell(m, s, cfg) for m in cfg.maps for s in cfg.seeds]
    workers = _worker_count(cfg.workers)
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(cells))) as ex:
            results = list(ex.map(run_cell, cells, [keep_outcomes] * len(cells)))
    else:
        results = [run_cell(c, keep_outcomes) for c in cells]
    table = ResultTable([r for rows, _ in results for r in rows]).sorted()
    outcomes = [o for _, kept in results for o in kept]
    return table, outcomes


# --- reporting ---------------------------------------------------------------


def credible_interval(successes: int, failures: int, level: float = 0.95) -> tuple[float, float]:
    """Equal-tailed interval of the Beta(1 + s, 1 + f) posterior."""
    tail = (1 - level) / 2
    d = beta(1 + successes, 1 + failures)
    return float(d.ppf(tail)), float(d.ppf(1 - tail))


def _pool(rows: Iterable[ResultRow], keyf) -> dict:
    acc: dict = defaultdict(lambda: Counter())
    for r in rows:
        c = acc[keyf(r)]
        c["n"] += r.n_tests
        c["s"] += r.n_success
        c["specification_failure"] += r.specification_failure
        c["no_feasible_path"] += r.no_feasible_path
        c["options_exhausted"] += r.options_exhausted
    return acc


def report(table: ResultTable) -> dict[str, str]:
    """CSV documents: success rates with intervals, a success matrix, and failure breakdowns."""
    rows = table.sorted().rows
    test_types = [t.value for t in SpecType if any(r.test_type == t.value for r in rows)]

    rates = _pool(rows, lambda r: (r.criterion, r.train_type, r.train_size, r.test_type))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["criterion", "train_type", "train_size", "test_type", "n_tests", "n_success", "success_rate", "ci_low", "ci_high"])
    for key in sorted(rates):
        c = rates[key]
        lo, hi = credible_interval(c["s"], c["n"] - c["s"])
        w.writerow([*key, c["n"], c["s"], f"{c['s'] / c['n']:.4f}", f"{lo:.4f}", f"{hi:.4f}"])
    success = buf.getvalue()

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["criterion", "train_type", "train_size", *test_types])
    for crit, tt, size in sorted({k[:3] for k in rates}):
        cells = []
        for t in test_types:
            c = rates.get((crit, tt, size, t))
            cells.append("" if not c else f"{c['s'] / c['n']:.4f}")
        w.writerow([crit, tt, size, *cells])
    matrix = buf.getvalue()

    causes = _pool(rows, lambda r: (r.criterion, r.train_type, r.train_size, r.test_type))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    names = [c.slug for c in FailureCause]
    w.writerow(["criterion", "train_type", "train_size", "test_type", "n_failures", *names, *[f"{n}_share" for n in names]])
    for key in sorted(causes):
        c = causes[key]
        nf = c["n"] - c["s"]
        shares = [f"{c[n] / nf:.4f}" if nf else "" for n in names]
        w.writerow([*key, nf, *[c[n] for n in names], *shares])
    failures = buf.getvalue()
    return {"success_rates.csv": success, "success_matrix.csv": matrix, "failure_breakdown.csv": failures}


def write_report(table: ResultTable, out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, text in report(table).items():
        p = out / name
        p.write_text(text, encoding="utf-8")
        paths.append(p)
    return paths
