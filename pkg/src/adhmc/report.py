"""Delimited output, metadata sidecars, and figure rendering.

Every experiment writes into one directory with fixed file names.  CSV files
are the machine contract: floats are formatted with 17 significant digits so
identical runs byte-reproduce, booleans as ``true``/``false``, missing values
as empty fields.  The ``meta`` sidecar echoes the full configuration (it
parses back to the original), together with seed, model identifiers, library
version, a content hash of the canonical configuration, and the wall time
(the one field allowed to differ between identical runs).

Figures are rendered alongside the CSVs on the report path; they are a
convenience view of the same data and carry no additional information.
"""

from __future__ import annotations

import hashlib
from pathlib import Path
from typing import Iterable, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import yaml


def format_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".17g")
    return str(value)


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(format_value(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def config_hash(canonical_config: str) -> str:
    return hashlib.sha256(canonical_config.encode("utf-8")).hexdigest()


def write_meta(path, config_echo: str, *, seed: int, potential: str, kinetic: str,
               version: str, wall_time: float, extra: dict | None = None) -> None:
    meta = {
        "config": yaml.safe_load(config_echo),
        "config_sha256": config_hash(config_echo),
        "seed": int(seed),
        "potential": potential,
        "kinetic": kinetic,
        "library_version": version,
        "wall_time_seconds": float(wall_time),
    }
    if extra:
        meta.update(extra)
    Path(path).write_text(yaml.safe_dump(meta, sort_keys=True), encoding="utf-8")


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------

def render_chain_figure(record, path) -> None:
    """Trace of the first coordinate plus its marginal histogram."""
    xs = record.positions[:, 0]
    fig, (ax0, ax1) = plt.subplots(1, 2, figsize=(9, 3.2),
                                   gridspec_kw={"width_ratios": [2.2, 1.0]})
    ax0.plot(xs, lw=0.4)
    ax0.set_xlabel("step")
    ax0.set_ylabel("$q_0$")
    ax0.set_title(f"{record.config.algorithm} trace "
                  f"(accept {record.acceptance_rate:.3f})")
    ax1.hist(xs[record.burn_in_default():], bins=60, density=True, alpha=0.75)
    ax1.set_xlabel("$q_0$")
    ax1.set_title("post-warmup marginal")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_sweep_figure(result, path) -> None:
    """Log-log one-step errors with the fitted slopes."""
    fig, ax = plt.subplots(figsize=(5.2, 3.8))
    etas = np.asarray(result.etas)
    for name, key, series, ses in (
        ("position", "q", result.q_errors, result.q_ses),
        ("momentum", "p", result.p_errors, result.p_ses),
        ("energy", "h", result.h_errors, result.h_ses),
    ):
        slope, _ = result.slopes[key]
        ax.errorbar(etas, series, yerr=ses, marker="o", ms=3.5, lw=1.0,
                    label=f"{name} (slope {slope:.2f})")
    ref = result.q_errors[0] * (etas / etas[0]) ** 3
    ax.plot(etas, ref, "k--", lw=0.8, label="cubic reference")
    ax.set_xscale("log")
    ax.set_yscale("log")
    ax.set_xlabel(r"step size $\eta$")
    ax.set_ylabel("one-step error")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_tv_figure(report, path) -> None:
    """Semilog TV decay with the fitted contraction and noise floor."""
    fig, ax = plt.subplots(figsize=(5.2, 3.8))
    ts = np.asarray(report.times)
    tv = np.asarray(report.tv)
    ax.semilogy(ts, tv, "o-", ms=3.5, lw=1.0, label="measured TV")
    fit_t = ts[report.fit_start:report.fit_stop]
    if fit_t.size:
        anchor = tv[report.fit_start]
        ax.semilogy(fit_t, anchor * report.contraction ** (fit_t - fit_t[0]),
                    "r--", lw=1.0,
                    label=f"fit: contraction {report.contraction:.3f}")
    ax.axhline(report.noise_floor, color="gray", ls=":", lw=0.8, label="noise floor")
    ax.set_xlabel("sweep")
    ax.set_ylabel("TV distance to target")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def render_diagnose_figure(rows, path) -> None:
    """Bound-margin bars: measured value relative to its bound (log scale)."""
    labelled = [(r[0] + " " + str(r[1]), r[2], r[3]) for r in rows
                if isinstance(r[2], float) and isinstance(r[3], float)
                and np.isfinite(r[2]) and np.isfinite(r[3]) and r[3] > 0 and r[2] > 0]
    if not labelled:
        return
    fig, ax = plt.subplots(figsize=(6.4, 0.45 * len(labelled) + 1.4))
    names = [l[0] for l in labelled]
    margins = [l[1] / l[2] for l in labelled]
    ax.barh(range(len(names)), margins, height=0.6)
    ax.axvline(1.0, color="r", lw=1.0)
    ax.set_yticks(range(len(names)))
    ax.set_yticklabels(names, fontsize=7)
    ax.set_xscale("log")
    ax.set_xlabel("measured / bound (must stay left of 1)")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)
