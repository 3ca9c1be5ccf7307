"""Suite manifests, CSV persistence, and the suite runner.

The manifest is a plain-text section/key-value format::

    # comment
    [defaults]
    budget = 15
    n_init = 1

    [run]
    function = gramacy_lee
    policy = ei
    seeds = 0..19

    [run]
    function = gramacy_lee
    policy = rollout
    horizon = 1
    samples = 8
    seeds = 0..19

Every ``[run]`` section inherits the ``[defaults]`` section. ``seeds``
accepts ``a..b`` (inclusive) or a comma list. Recognized keys: function,
policy, seeds, budget, n_init, horizon, samples, qmc, crn, cv, xi,
ucb_beta, adam_restarts, adam_iters.

Results go to ``results.csv`` (one row per iteration, fully deterministic
for fixed seeds), aggregate statistics to ``summary.csv`` and wall-clock
measurements to ``timings.csv``. Timing lives in its own file because the
result rows are required to be byte-identical across repeated runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

from .functions import get as get_function
from .loop import BenchRun, LoopConfig, run_bo

RESULTS_HEADER = "# rollbo bench results v1"
SUMMARY_HEADER = "# rollbo bench summary v1"
TIMINGS_HEADER = "# rollbo bench timings v1"

RESULT_COLUMNS = ("function", "policy", "seed", "iteration", "incumbent", "gap")


@dataclass(frozen=True)
class RunSpec:
    function: str
    policy: str
    seeds: tuple[int, ...]
    budget: int = 15
    n_init: int = 1
    cfg: LoopConfig = LoopConfig()


_TRUTHY = {"on": True, "true": True, "1": True, "yes": True,
           "off": False, "false": False, "0": False, "no": False}


def _parse_flag(value: str) -> bool:
    try:
        return _TRUTHY[value.strip().lower()]
    except KeyError:
        raise ValueError(f"expected on/off, got {value!r}") from None


def _parse_seeds(value: str) -> tuple[int, ...]:
    value = value.strip()
    if ".." in value:
        a, b = value.split("..")
        return tuple(range(int(a), int(b) + 1))
    return tuple(int(tok) for tok in value.split(",") if tok.strip())


def parse_manifest(text: str) -> list[RunSpec]:
    """Parse manifest text into run specifications."""
    sections: list[tuple[str, dict[str, str]]] = []
    current: dict[str, str] | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip().lower()
            if name not in ("defaults", "run"):
                raise ValueError(f"line {lineno}: unknown section [{name}]")
            current = {}
            sections.append((name, current))
            continue
        if "=" not in line or current is None:
            raise ValueError(f"line {lineno}: expected 'key = value' inside a section")
        key, value = line.split("=", 1)
        current[key.strip().lower()] = value.strip()

    defaults: dict[str, str] = {}
    specs = []
    for name, kv in sections:
        if name == "defaults":
            defaults.update(kv)
            continue
        merged = {**defaults, **kv}
        if "function" not in merged or "policy" not in merged:
            raise ValueError("every [run] needs at least function and policy")
        cfg = LoopConfig(
            n_init=int(merged.get("n_init", 1)),
            xi=float(merged.get("xi", 0.0)),
            ucb_beta=float(merged.get("ucb_beta", 2.0)),
            horizon=int(merged.get("horizon", 1)),
            n_samples=int(merged.get("samples", 8)),
            qmc=_parse_flag(merged.get("qmc", "on")),
            crn=_parse_flag(merged.get("crn", "on")),
            control_variate=_parse_flag(merged.get("cv", "on")),
            adam_restarts=int(merged.get("adam_restarts", 3)),
            adam_iters=int(merged.get("adam_iters", 25)),
        )
        specs.append(RunSpec(
            function=merged["function"],
            policy=merged["policy"],
            seeds=_parse_seeds(merged.get("seeds", "0")),
            budget=int(merged.get("budget", 15)),
            n_init=int(merged.get("n_init", 1)),
            cfg=cfg,
        ))
    return specs


def result_rows(run: BenchRun) -> list[str]:
    """Per-iteration CSV rows for one run (deterministic formatting)."""
    from .loop import gap as gap_fn

    rows = []
    f_opt = get_function(run.function).f_opt
    for it, inc in enumerate(run.history):
        g = gap_fn(run.history[: it + 1], f_opt)
        rows.append(f"{run.function},{run.policy},{run.seed},{it},{inc!r},{g!r}")
    return rows


def write_results_csv(path: Path, runs: list[BenchRun]) -> None:
    lines = [RESULTS_HEADER, ",".join(RESULT_COLUMNS)]
    for run in sorted(runs, key=lambda r: (r.function, r.policy, r.seed)):
        if run.aborted:
            continue
        lines.extend(result_rows(run))
    path.write_text("\n".join(lines) + "\n")


def write_summary_csv(path: Path, runs: list[BenchRun]) -> None:
    groups: dict[tuple[str, str], list[float]] = {}
    for run in runs:
        if run.aborted or math.isnan(run.gap):
            continue
        groups.setdefault((run.function, run.policy), []).append(run.gap)
    lines = [SUMMARY_HEADER, "function,policy,mean_gap,median_gap,n_runs"]
    for (fn, pol) in sorted(groups):
        gaps = sorted(groups[(fn, pol)])
        n = len(gaps)
        mean = sum(gaps) / n
        mid = n // 2
        median = gaps[mid] if n % 2 else 0.5 * (gaps[mid - 1] + gaps[mid])
        lines.append(f"{fn},{pol},{mean!r},{median!r},{n}")
    path.write_text("\n".join(lines) + "\n")


def write_timings_csv(path: Path, runs: list[BenchRun]) -> None:
    lines = [TIMINGS_HEADER, "function,policy,seed,budget,wall_ms,aborted"]
    for run in sorted(runs, key=lambda r: (r.function, r.policy, r.seed)):
        lines.append(
            f"{run.function},{run.policy},{run.seed},{run.budget},"
            f"{run.wall_ms:.3f},{int(run.aborted)}"
        )
    path.write_text("\n".join(lines) + "\n")


def run_suite(specs: list[RunSpec], out_dir: Path) -> list[BenchRun]:
    """Execute every (spec, seed) run; partial failures are recorded and the
    suite continues. Writes results.csv, summary.csv and timings.csv."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    runs: list[BenchRun] = []
    for spec in specs:
        fn = get_function(spec.function)
        for seed in spec.seeds:
            try:
                run = run_bo(fn, spec.policy, seed, spec.budget, spec.n_init, spec.cfg)
            except Exception as exc:  # record, keep going
                run = BenchRun(
                    function=spec.function,
                    policy=spec.policy, seed=seed, budget=spec.budget,
                    n_init=spec.n_init, history=(), gap=math.nan,
                    wall_ms=0.0, aborted=True, abort_reason=str(exc),
                )
            runs.append(run)
    write_results_csv(out_dir / "results.csv", runs)
    write_summary_csv(out_dir / "summary.csv", runs)
    write_timings_csv(out_dir / "timings.csv", runs)
    failures = [r for r in runs if r.aborted]
    if failures:
        lines = [f"{r.function},{r.policy},{r.seed}: {r.abort_reason}" for r in failures]
        (out_dir / "failures.txt").write_text("\n".join(lines) + "\n")
    return runs
