"""Deterministic plot-script emission from result CSVs.

Writes small matplotlib scripts that read the CSVs at render time; nothing
is plotted in-process, and regenerating a script from the same CSV yields
byte-identical text.
"""

from __future__ import annotations

from pathlib import Path

from .suite import RESULT_COLUMNS


def _read_results(path: Path):
    lines = path.read_text().splitlines()
    body = [ln for ln in lines if ln and not ln.startswith("#")]
    if not body:
        raise ValueError(f"{path}: empty results file")
    header = tuple(body[0].split(","))
    if header != RESULT_COLUMNS:
        raise ValueError(
            f"{path}: unexpected columns {header}, need {RESULT_COLUMNS}"
        )
    rows = [ln.split(",") for ln in body[1:]]
    return rows


_GAP_TEMPLATE = '''"""Mean gap per iteration, one curve per policy (generated script)."""

import csv
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

RESULTS = {results_path!r}

by_policy = defaultdict(lambda: defaultdict(list))
with open(RESULTS) as fh:
    for row in csv.DictReader(
        (ln for ln in fh if not ln.startswith("#"))
    ):
        by_policy[row["policy"]][int(row["iteration"])].append(float(row["gap"]))

fig, ax = plt.subplots(figsize=(7, 4.5))
for policy in sorted(by_policy):
    iters = sorted(by_policy[policy])
    means = [sum(by_policy[policy][i]) / len(by_policy[policy][i]) for i in iters]
    ax.plot(iters, means, marker="o", markersize=3, label=policy)
ax.set_xlabel("iteration")
ax.set_ylabel("mean gap")
ax.set_ylim(0.0, 1.0)
ax.legend()
fig.tight_layout()
fig.savefig("gap_vs_iteration.png", dpi=150)
print("wrote gap_vs_iteration.png")
'''

_COST_TEMPLATE = '''"""Mean proposal wall-clock versus rollout horizon (generated script)."""

import csv
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

TIMINGS = {timings_path!r}

per_policy = defaultdict(list)
with open(TIMINGS) as fh:
    for row in csv.DictReader(
        (ln for ln in fh if not ln.startswith("#"))
    ):
        if row.get("aborted", "0") == "1":
            continue
        per_policy[row["policy"]].append(
            float(row["wall_ms"]) / max(int(row["budget"]), 1)
        )

pairs = []
for policy, costs in per_policy.items():
    if policy.startswith("alpha_"):
        pairs.append((int(policy.split("_", 1)[1]), sum(costs) / len(costs)))
pairs.sort()

fig, ax = plt.subplots(figsize=(7, 4.5))
if pairs:
    ax.plot([h for h, _ in pairs], [c for _, c in pairs], marker="o")
ax.set_xlabel("horizon")
ax.set_ylabel("mean proposal wall-clock [ms]")
fig.tight_layout()
fig.savefig("cost_vs_horizon.png", dpi=150)
print("wrote cost_vs_horizon.png")
'''

_EMPTY_NOTE = "# NOTE: the results file had no data rows; the plot will be empty.\n"


def emit_plots(results_csv: Path, out_dir: Path, timings_csv: Path | None = None):
    """Write plot scripts referencing the CSVs; returns the script paths."""
    results_csv = Path(results_csv)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = _read_results(results_csv)

    gap_script = _GAP_TEMPLATE.format(results_path=str(results_csv))
    if not rows:
        gap_script = _EMPTY_NOTE + gap_script
    gap_path = out_dir / "plot_gap_vs_iteration.py"
    gap_path.write_text(gap_script)
    written = [gap_path]

    if timings_csv is not None:
        cost_path = out_dir / "plot_cost_vs_horizon.py"
        cost_path.write_text(_COST_TEMPLATE.format(timings_path=str(Path(timings_csv))))
        written.append(cost_path)
    return written
