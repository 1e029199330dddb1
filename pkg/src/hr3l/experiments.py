"""Experiment grid: named presets, per-run output folders and the drop summary.

Runs live in ``<out>/<env>/<method>__<channel>[__G<g>]/seed<k>/``. A run
directory holds ``config.ini`` (the resolved configuration, one seed)
and ``metrics.csv``. Summaries are computed from those files alone.
"""
from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ExperimentConfig, parse_config, serialize_config
from .orchestrator import RunMetrics, run_experiment

OUT_ENV = "HR3L_OUT"
PRESETS = ("ideal", "ge955", "ge925", "delay1", "delay2", "delay3", "capsweep")
CAPSWEEP_G = (50, 25, 12, 6)
FINAL_WINDOW = 5  # rounds averaged into the final score


class MissingAnchor(LookupError):
    pass


def default_out_root() -> Path:
    return Path(os.environ.get(OUT_ENV, "runs"))


def preset_configs(name: str, base: ExperimentConfig | None = None) -> list[ExperimentConfig]:
    """Every (method, channel) configuration a preset needs, anchors included."""
    base = base or ExperimentConfig()
    if name == "ideal":
        grid = [("hr3l", "ideal"), ("ppo_hold", "ideal")]
    elif name in ("ge955", "ge925"):
        grid = [("hr3l", "ideal"), ("hr3l", name), ("ppo_hold", "ideal"), ("ppo_hold", name)]
    elif name in ("delay1", "delay2", "delay3"):
        grid = [("hr3l", "ideal"), ("hr3l", name), ("ppo_delay_aug", "ideal"), ("ppo_delay_aug", name)]
    elif name == "capsweep":
        F = base.transmitter.n_features
        return [
            base.replace(method="hr3l", channel=f"cap:{16 * G + F}", mode="compressed", G=G).validate()
            for G in CAPSWEEP_G if G <= F
        ]
    else:
        raise ValueError(f"unknown preset {name!r}; expected one of {PRESETS}")
    return [base.replace(method=m, channel=c).validate() for m, c in grid]


def run_label(cfg: ExperimentConfig) -> str:
    label = f"{cfg.method}__{cfg.channel.replace(':', '')}"
    if cfg.mode == "compressed":
        label += f"__G{cfg.n_sent_features}"
    return label


def run_dir(out_dir, cfg: ExperimentConfig, seed: int) -> Path:
    return Path(out_dir) / cfg.env / run_label(cfg) / f"seed{seed}"


def _run_one(job) -> str:
    cfg, seed, path = job
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    (path / "config.ini").write_text(serialize_config(cfg.replace(seeds=(seed,))))
    run_experiment(cfg, seed).write_csv(path / "metrics.csv")
    return str(path)


def run_jobs(jobs, workers: int | None = None) -> list[str]:
    """Run ``(cfg, seed, run_dir)`` jobs, in a process pool when workers > 1."""
    workers = workers or os.cpu_count() or 1
    if workers == 1 or len(jobs) <= 1:
        return [_run_one(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_one, jobs))


def run_config(cfg: ExperimentConfig, out_dir, workers: int | None = None) -> list[str]:
    return run_jobs([(cfg, s, run_dir(out_dir, cfg, s)) for s in cfg.seeds], workers)


def run_preset(name: str, seeds, out_dir, base: ExperimentConfig | None = None,
               workers: int | None = None) -> "Summary":
    """Run a preset over `seeds` (an int k means seeds 0..k-1) and summarize it."""
    seeds = tuple(range(seeds)) if isinstance(seeds, int) else tuple(seeds)
    out_dir = Path(out_dir)
    jobs = [(cfg, s, run_dir(out_dir, cfg, s)) for cfg in preset_configs(name, base) for s in seeds]
    run_jobs(jobs, workers)
    summary = summarize(out_dir)
    (out_dir / "summary.csv").write_text(summary.to_csv())
    return summary


# --------------------------------------------------------------------------
# summaries


def final_reward(metrics: RunMetrics, window: int = FINAL_WINDOW) -> float:
    """Mean per-step reward over the last `window` rounds."""
    r = metrics.column("mean_reward")
    if r.size == 0:
        raise ValueError("run has no rounds")
    return float(np.mean(r[-window:]))


def relative_change(score: float, anchor: float) -> float:
    """Signed percentage change; a run at half the anchor gives -50."""
    return 100.0 * (score - anchor) / anchor


@dataclass
class RunRecord:
    cfg: ExperimentConfig
    seed: int
    final: float
    path: str


@dataclass
class SummaryRow:
    env: str
    method: str
    label: str
    n_seeds: int
    median_final: float
    rel_change: float
    normalized: float  # median final over the best single run in this env
    is_anchor: bool


@dataclass
class Summary:
    rows: list

    def row(self, method: str, channel: str, env: str | None = None) -> SummaryRow:
        for r in self.rows:
            if (r.method == method and r.label.split("__")[0] == channel.replace(":", "")
                    and env in (None, r.env)):
                return r
        raise KeyError((method, channel))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["env", "method", "channel", "n_seeds", "median_final_reward", "rel_change_pct",
                    "normalized_reward", "anchor"])
        for r in self.rows:
            w.writerow([r.env, r.method, r.label, r.n_seeds, repr(r.median_final), repr(r.rel_change),
                        repr(r.normalized), int(r.is_anchor)])
        return buf.getvalue()

    def format(self) -> str:
        lines = [f"{'env':<10}{'method':<15}{'channel':<16}{'seeds':>6}{'final':>9}{'norm':>7}{'change %':>10}"]
        for r in self.rows:
            mark = " *" if r.is_anchor else ""
            lines.append(f"{r.env:<10}{r.method:<15}{r.label:<16}{r.n_seeds:>6}{r.median_final:>9.4f}"
                         f"{r.normalized:>7.3f}{r.rel_change:>10.2f}{mark}")
        return "\n".join(lines)


def load_runs(root) -> list[RunRecord]:
    root = Path(root)
    runs = []
    for csv_path in sorted(root.rglob("metrics.csv")):
        cfg_path = csv_path.with_name("config.ini")
        if not cfg_path.exists():
            continue
        cfg = parse_config(cfg_path.read_text())
        m = RunMetrics.from_csv(csv_path.read_text())
        runs.append(RunRecord(cfg, cfg.seeds[0], final_reward(m), str(csv_path.parent)))
    return runs


def _budget(cfg: ExperimentConfig) -> tuple:
    cap = cfg.channel_config.capacity_bits
    return (np.inf if cap is None else cap, cfg.n_sent_features)


def summarize_runs(runs: list[RunRecord]) -> Summary:
    """Median final reward per (method, channel) and change vs the method's anchor.

    The anchor of a method is its lossless, zero-delay configuration with the
    largest bit budget.
    """
    groups: dict = {}
    for r in runs:
        groups.setdefault((r.cfg.env, r.cfg.method, run_label(r.cfg)), []).append(r)
    medians = {k: float(np.median([r.final for r in v])) for k, v in groups.items()}
    best = {}
    for r in runs:
        best[r.cfg.env] = max(best.get(r.cfg.env, -np.inf), r.final)
    rows = []
    for env, method in sorted({k[:2] for k in groups}):
        keys = [k for k in groups if k[:2] == (env, method)]
        clean = [k for k in keys
                 if groups[k][0].cfg.channel_config.lossless and groups[k][0].cfg.channel_config.delay_steps == 0]
        if not clean:
            raise MissingAnchor(f"no lossless zero-delay run for method {method!r} on {env}")
        anchor = max(clean, key=lambda k: (_budget(groups[k][0].cfg), k[2]))
        order = lambda k: (k != anchor, tuple(-b for b in _budget(groups[k][0].cfg)), k[2])
        for k in sorted(keys, key=order):
            rows.append(SummaryRow(env, method, k[2].split("__", 1)[1], len(groups[k]), medians[k],
                                   relative_change(medians[k], medians[anchor]), medians[k] / best[env],
                                   k == anchor))
    return Summary(rows)


def summarize(root) -> Summary:
    runs = load_runs(root)
    if not runs:
        raise FileNotFoundError(f"no runs under {root}")
    return summarize_runs(runs)
