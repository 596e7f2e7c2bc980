"""Component ablations: train and evaluate named configuration arms over several seeds."""
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence

from app.config import Settings
from app.core.errors import ConfigError
from app.core.logging import get_logger
from app.models.ablation import AblationReport, ArmResult
from app.models.dataset import DatasetManifest
from app.services.inference import evaluate
from app.services.training import train

logger = get_logger("ablation")

_NO_SHUFFLE = {"use_local_shuffle": False, "use_global_shuffle": False}
_FULL = {"use_local_shuffle": True, "use_global_shuffle": False, "use_matching": True}

ARMS: Dict[str, Dict[str, object]] = {
    "baseline": {**_NO_SHUFFLE, "use_matching": False},
    "shuffle": {"use_local_shuffle": True, "use_global_shuffle": False, "use_matching": False},
    "matching": {**_NO_SHUFFLE, "use_matching": True},
    "full": dict(_FULL),
    "global": {"use_local_shuffle": False, "use_global_shuffle": True, "use_matching": True},
    "full_mu0.5": {**_FULL, "stair_scale": 0.5},
    "full_mu0.7": {**_FULL, "stair_scale": 0.7},
    "full_dagger": {**_FULL, "use_across_transformer": True},
}

METRIC_FIELDS = ("top1_loc", "top5_loc", "gt_known_loc")


def arm_settings(base: Settings, overrides: Mapping[str, object], seed: int) -> Settings:
    values = base.model_dump()
    values.update(overrides)
    values["seed"] = seed
    return Settings(**values)


def resolve_arms(names: Optional[Sequence[str]]) -> Dict[str, Dict[str, object]]:
    if not names:
        return dict(ARMS)
    unknown = [n for n in names if n not in ARMS]
    if unknown:
        raise ConfigError(f"unknown ablation arms {unknown}; choose from {sorted(ARMS)}")
    return {n: ARMS[n] for n in names}


def ablation_run(settings: Settings, manifest: DatasetManifest, arms: Mapping[str, Mapping[str, object]],
                 seeds: Sequence[int], out_dir: Path) -> AblationReport:
    """Train and evaluate every arm with every seed; one report row per arm"""
    if not seeds:
        raise ConfigError("ablation_run: at least one seed is required")
    out_dir = Path(out_dir)
    rows: List[ArmResult] = []
    for name, overrides in arms.items():
        runs = []
        for seed in seeds:
            run_settings = arm_settings(settings, overrides, seed)
            run_dir = out_dir / name / f"seed{seed}"
            params, _ = train(run_settings.model_copy(update={"checkpoint_path": run_dir / "model.ckpt"}),
                              manifest, run_dir=run_dir)
            scores = evaluate(params, manifest, run_settings, out_dir=run_dir,
                              dagger=run_settings.use_across_transformer)
            runs.append(scores)
            logger.info("ablation_run", arm=name, seed=seed,
                        **{f: getattr(scores, f) for f in METRIC_FIELDS})
        rows.append(ArmResult(arm=name, overrides=dict(overrides), seeds=list(seeds), runs=runs))
    return AblationReport(rows=rows)


def format_report(report: AblationReport) -> str:
    """Plain-text table: one row per arm, mean +- std per metric"""
    header = f"{'arm':<14}" + "".join(f"{f:>22}" for f in METRIC_FIELDS) + f"{'seeds':>7}"
    lines = [header, "-" * len(header)]
    for row in report.rows:
        cells = "".join(f"{row.mean(f):>13.4f} +- {row.std(f):<5.3f}" for f in METRIC_FIELDS)
        lines.append(f"{row.arm:<14}{cells}{len(row.seeds):>7}")
    arms = {row.arm for row in report.rows}
    if {"full", "baseline"} <= arms:
        lines.append(f"gt_known_loc gap full - baseline: {gt_known_gap(report):+.4f}")
    return "\n".join(lines)


def gt_known_gap(report: AblationReport, arm: str = "full", reference: str = "baseline") -> float:
    """Mean GT-known difference between two arms of a report"""
    by_name = {r.arm: r for r in report.rows}
    if arm not in by_name or reference not in by_name:
        raise ConfigError(f"report lacks arm {arm!r} or {reference!r}")
    return by_name[arm].mean("gt_known_loc") - by_name[reference].mean("gt_known_loc")
