"""Config-driven matrix-fit experiments and the CSV files behind the plots.

A run is a grid of (budget, kind) cells. Each cell solves the knob for its
budget, builds one operator per layer, fits it to that layer's dense teacher
and records an :class:`ExperimentResult`. Cells are independent; every random
stream is derived from the master seed and the cell index, so the output
bytes depend only on the config.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import re
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from . import budget as bud
from . import linop
from .analysis import assemble_report
from .errors import ConfigError, OutOfSupportError, ResultsParseError, SpecError
from .linop import DEFAULT_COST_MODEL, Kind, OperatorSpec
from .training import TrainConfig, effective_decay, fit_matrix, random_teacher

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_ALL_DIVERGED = 0, 1, 2, 3

_AUTO = re.compile(r"^auto:(\d+)$")


@dataclass(frozen=True)
class ExperimentConfig:
    kinds: tuple[Kind, ...]
    layer_dims: tuple[tuple[int, int], ...]
    budgets: Any  # list of parameter counts, or "auto:k"
    train: TrainConfig = field(default_factory=TrainConfig)
    crs_off_repeat: bool = False
    output_dir: str = "results"
    seed: int = 0

    @classmethod
    def from_json(cls, obj: dict) -> "ExperimentConfig":
        if not isinstance(obj, dict):
            raise ConfigError("config must be a JSON object")
        try:
            kinds = tuple(Kind.parse(k) for k in obj.get("kinds", ()))
        except SpecError as exc:
            raise ConfigError(str(exc)) from None
        if not kinds:
            raise ConfigError("config needs at least one kind")
        dims = obj.get("layer_dims")
        if not dims:
            raise ConfigError("config needs layer_dims")
        try:
            dims = tuple((int(o), int(i)) for o, i in dims)
        except (TypeError, ValueError):
            raise ConfigError("layer_dims must be a list of [n_out, n_in] pairs") from None
        if any(o < 1 or i < 1 for o, i in dims):
            raise ConfigError("layer dims must be positive")
        budgets = obj.get("budgets", "auto:3")
        if isinstance(budgets, str):
            m = _AUTO.match(budgets.strip())
            if not m or int(m.group(1)) < 1:
                raise ConfigError(f"budgets must be a list or 'auto:k', got {budgets!r}")
            budgets = budgets.strip()
        else:
            try:
                budgets = tuple(float(b) for b in budgets)
            except (TypeError, ValueError):
                raise ConfigError("budgets must be numbers") from None
            if not budgets or any(not b > 0 for b in budgets):
                raise ConfigError("budgets must be positive")
        try:
            train = TrainConfig.from_json(obj.get("train", {}))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad train section: {exc}") from None
        ablations = obj.get("ablations", {}) or {}
        return cls(
            kinds=kinds,
            layer_dims=dims,
            budgets=budgets,
            train=train,
            crs_off_repeat=bool(ablations.get("crs_off_repeat", False)),
            output_dir=str(obj.get("output_dir", "results")),
            seed=int(obj.get("seed", 0)),
        )

    @classmethod
    def load(cls, path: "str | Path") -> "ExperimentConfig":
        text = Path(path).read_text()
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON at offset {exc.pos}: {exc.msg}") from None
        return cls.from_json(obj)

    def to_json(self) -> dict:
        return {
            "kinds": [k.value for k in self.kinds],
            "layer_dims": [list(d) for d in self.layer_dims],
            "budgets": self.budgets if isinstance(self.budgets, str) else list(self.budgets),
            "train": self.train.to_json(),
            "ablations": {"crs_off_repeat": self.crs_off_repeat},
            "output_dir": self.output_dir,
            "seed": self.seed,
        }


def resolve_budgets(config: ExperimentConfig) -> list[float]:
    if not isinstance(config.budgets, str):
        return list(config.budgets)
    k = int(_AUTO.match(config.budgets).group(1))
    curves = []
    for kind in config.kinds:
        try:
            curves.append(bud.knob_curve(kind, config.layer_dims, resolution=2))
        except SpecError:
            log.warning("%s cannot cover layer dims %s; left out of the support interval", kind, config.layer_dims)
    if not curves:
        raise ConfigError("no kind supports the configured layer dims")
    lo, hi = bud.support_interval(curves)
    return [float(b) for b in bud.geometric_budgets(lo, hi, k)]


def derive_seed(*key: int) -> int:
    return int(np.random.SeedSequence([int(k) for k in key]).generate_state(1, np.uint64)[0])


@dataclass
class ExperimentResult:
    cell: int
    label: str
    kind: str
    budget_index: int
    target_params: float
    status: str
    crs_enabled: bool
    seed: int
    t: float | None = None
    hypers: list | None = None
    params: int | None = None
    multadds: int | None = None
    dense_params: int | None = None
    param_ratio: float | None = None
    multadd_ratio: float | None = None
    eval_loss: float | None = None
    train_loss: float | None = None
    layer_eval_losses: list | None = None
    effective_decays: list | None = None
    epochs_run: list | None = None
    diverged: bool = False
    trace_files: list = field(default_factory=list)
    message: str = ""
    train: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return dict(self.__dict__)


def _finite_or_none(x: float) -> float | None:
    return x if math.isfinite(x) else None


def _run_cell(job: tuple) -> list[ExperimentResult]:
    config, cell, bi, target, kind, out_dir = job
    cell_seed = derive_seed(config.seed, cell)
    variants = [("crs_on", True), ("crs_off", False)] if config.crs_off_repeat else [
        ("crs_on" if config.train.crs_enabled else "crs_off", config.train.crs_enabled)
    ]
    common = dict(cell=cell, kind=kind.value, budget_index=bi, target_params=target, seed=cell_seed)
    try:
        sol = bud.solve_budget(kind, config.layer_dims, target)
    except (OutOfSupportError, SpecError) as exc:
        return [
            ExperimentResult(label=lab, status="unsupported", crs_enabled=crs, message=str(exc), **common)
            for lab, crs in variants
        ]

    specs = [
        OperatorSpec(kind, n_out, n_in, hyper, derive_seed(config.seed, cell, li))
        for li, ((n_out, n_in), hyper) in enumerate(zip(config.layer_dims, sol.hypers))
    ]
    params = sum(linop.param_count(s) for s in specs)
    dense = sum(s.dense_params for s in specs)
    madds = [linop.multadd_count(s, DEFAULT_COST_MODEL) for s in specs]
    multadds = None if any(m is None for m in madds) else int(sum(madds))

    out = []
    for label, crs in variants:
        layer_losses, train_losses, decays, epochs_run, files = [], [], [], [], []
        diverged = False
        for li, spec in enumerate(specs):
            teacher = random_teacher(spec.n_out, spec.n_in, derive_seed(config.seed, 1 << 32, li))
            cfg = replace(config.train, crs_enabled=crs, seed=derive_seed(config.seed, config.train.seed, cell, li))
            trace = fit_matrix(spec, teacher, cfg)
            name = f"traces/{cell:03d}_{kind.value}_{label}_layer{li}.csv"
            if out_dir is not None:
                trace.to_csv(Path(out_dir) / name)
            files.append(name)
            diverged |= trace.diverged
            layer_losses.append(_finite_or_none(trace.final_eval_loss))
            train_losses.append(trace.records[-1].train_loss if trace.records else math.nan)
            decays.append(effective_decay(spec, cfg))
            epochs_run.append(len(trace.records))
        weights = [s.dense_params for s in specs]
        if diverged:
            eval_loss = train_loss = None
        else:
            eval_loss = float(sum(w * l for w, l in zip(weights, layer_losses)) / sum(weights))
            train_loss = _finite_or_none(float(np.mean(train_losses)))
        out.append(
            ExperimentResult(
                label=label,
                status="diverged" if diverged else "ok",
                crs_enabled=crs,
                t=sol.t,
                hypers=sol.hypers,
                params=params,
                multadds=multadds,
                dense_params=dense,
                param_ratio=params / dense,
                multadd_ratio=None if multadds is None else multadds / dense,
                eval_loss=eval_loss,
                train_loss=train_loss,
                layer_eval_losses=layer_losses,
                effective_decays=decays,
                epochs_run=epochs_run,
                diverged=diverged,
                trace_files=files,
                train=replace(config.train, crs_enabled=crs).to_json(),
                **common,
            )
        )
    return out


def run_experiments(config: ExperimentConfig, out_dir: "str | Path | None" = None, jobs: int = 1) -> list[ExperimentResult]:
    """Run every (budget, kind) cell; results come back in cell order."""
    budgets = resolve_budgets(config)
    if out_dir is not None:
        (Path(out_dir) / "traces").mkdir(parents=True, exist_ok=True)
    work = []
    for bi, target in enumerate(budgets):
        for ki, kind in enumerate(config.kinds):
            work.append((config, bi * len(config.kinds) + ki, bi, target, kind, None if out_dir is None else str(out_dir)))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_run_cell, work))
    else:
        chunks = [_run_cell(w) for w in work]
    return [r for chunk in chunks for r in chunk]


def results_json(results: list[ExperimentResult]) -> str:
    return json.dumps([r.to_json() for r in results], indent=2, sort_keys=True) + "\n"


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _num(x) -> str:
    if x is None:
        return ""
    return repr(float(x)) if isinstance(x, float) else str(x)


def write_pareto(results: list[dict], path: Path) -> None:
    attempted = [r for r in results if r.get("status") != "unsupported"]
    if not attempted:
        _write_csv(path, PARETO_FIELDS, [])
        return
    table = assemble_report(attempted)
    on_front = {id(r) for r in table.frontier}
    rows = [
        [r.kind, r.label, json.dumps(r.knob, sort_keys=True), r.params, _num(r.multadds), _num(r.param_ratio),
         _num(r.eval_loss), int(r.diverged), int(id(r) in on_front)]
        for r in table.rows
    ]
    _write_csv(path, PARETO_FIELDS, rows)


PARETO_FIELDS = ["kind", "label", "knob", "params", "multadds", "param_ratio", "eval_loss", "diverged", "pareto"]


def crs_delta_rows(results: list[dict]) -> list[list]:
    pairs: dict[tuple, dict] = {}
    for r in results:
        if r.get("status") == "unsupported":
            continue
        pairs.setdefault((r["kind"], r["budget_index"]), {})[r["label"]] = r
    rows = []
    for (kind, bi), both in sorted(pairs.items(), key=lambda kv: (kv[0][1], kv[0][0])):
        if "crs_on" not in both or "crs_off" not in both:
            continue
        on, off = both["crs_on"], both["crs_off"]
        l_on = math.inf if on["eval_loss"] is None else on["eval_loss"]
        l_off = math.inf if off["eval_loss"] is None else off["eval_loss"]
        delta = l_off - l_on if math.isfinite(l_on) or math.isfinite(l_off) else math.nan
        rows.append([kind, bi, _num(on["target_params"]), on["params"], repr(float(l_on)), repr(float(l_off)), repr(float(delta))])
    return rows


CRS_DELTA_FIELDS = ["kind", "budget_index", "target_params", "params", "eval_loss_crs_on", "eval_loss_crs_off", "delta_off_minus_on"]


def run(config: ExperimentConfig, jobs: int = 1) -> int:
    """Run the experiment grid and write results.json, pareto.csv and traces; returns an exit code."""
    out_dir = Path(config.output_dir)
    results = run_experiments(config, out_dir, jobs)
    dicts = [r.to_json() for r in results]
    (out_dir / "results.json").write_text(results_json(results))
    write_pareto(dicts, out_dir / "pareto.csv")
    if config.crs_off_repeat:
        _write_csv(out_dir / "crs_delta.csv", CRS_DELTA_FIELDS, crs_delta_rows(dicts))
    attempted = [r for r in results if r.status != "unsupported"]
    for r in results:
        log.info("%s %s budget=%s status=%s eval=%s", r.kind, r.label, r.target_params, r.status, r.eval_loss)
    if attempted and all(r.diverged for r in attempted):
        return EXIT_ALL_DIVERGED
    return EXIT_OK


REQUIRED_FIELDS = ("kind", "label", "budget_index", "status")


def load_results(path: "str | Path") -> list[dict]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ResultsParseError(str(path), 0, f"cannot read: {exc.strerror or exc}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ResultsParseError(str(path), exc.pos, exc.msg) from None
    if not isinstance(data, list):
        raise ResultsParseError(str(path), 0, "expected a JSON array of results")
    for i, r in enumerate(data):
        if not isinstance(r, dict) or any(k not in r for k in REQUIRED_FIELDS):
            raise ResultsParseError(str(path), 0, f"result #{i} lacks required fields")
    return data


def emit_plotdata(results_path: "str | Path", out_dir: "str | Path | None" = None) -> list[Path]:
    """Write params_vs_loss.csv, multadds_vs_loss.csv and (with ablation data) crs_delta.csv."""
    results = load_results(results_path)
    out = Path(out_dir) if out_dir is not None else Path(results_path).parent
    out.mkdir(parents=True, exist_ok=True)
    live = [r for r in results if r["status"] != "unsupported"]

    def loss(r):
        return math.inf if r.get("eval_loss") is None else float(r["eval_loss"])

    written = []
    p = out / "params_vs_loss.csv"
    _write_csv(
        p,
        ["kind", "label", "budget_index", "params", "param_ratio", "eval_loss", "diverged"],
        [[r["kind"], r["label"], r["budget_index"], r["params"], repr(float(r["param_ratio"])), repr(loss(r)), int(r["diverged"])]
         for r in live],
    )
    written.append(p)
    p = out / "multadds_vs_loss.csv"
    _write_csv(
        p,
        ["kind", "label", "budget_index", "multadds", "multadd_ratio", "eval_loss", "diverged"],
        [[r["kind"], r["label"], r["budget_index"], r["multadds"], repr(float(r["multadd_ratio"])), repr(loss(r)), int(r["diverged"])]
         for r in live if r.get("multadds") is not None],
    )
    written.append(p)
    delta = crs_delta_rows(results)
    if delta:
        p = out / "crs_delta.csv"
        _write_csv(p, CRS_DELTA_FIELDS, delta)
        written.append(p)
    return written
