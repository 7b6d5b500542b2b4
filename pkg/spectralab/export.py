# spectralab/export.py
"""Result files: JSON lines, fixed-schema CSVs and Plotly figures.

CSV outputs carry no timestamps so identical runs produce identical bytes.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import os
from typing import Any, Iterable, Sequence

import numpy as np
import plotly.graph_objects as go

from .experiments import ExperimentResult
from .perturb import DeterminantCheck
from .stats import CountRecord, DosEstimate, PoissonFit

logger = logging.getLogger(__name__)

SUMMARY_COLUMNS = ("name", "estimate", "ci_low", "ci_high", "reference_bound", "verdict")


def _json_default(obj: Any) -> Any:
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _cell(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(float(value)) if math.isfinite(value) else str(value)
    return str(value)


def write_rows(path: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def append_results_jsonl(path: str, results: Sequence[ExperimentResult]) -> None:
    """Append one schema-versioned line per result."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "a", encoding="utf-8") as f:
        for r in results:
            f.write(json.dumps(r.to_dict(), sort_keys=True, default=_json_default) + "\n")


def read_results_jsonl(path: str) -> list[dict[str, Any]]:
    with open(path, "r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def write_summary_csv(path: str, results: Sequence[ExperimentResult]) -> None:
    rows = []
    for r in results:
        lo, hi = r.interval if r.interval is not None else (None, None)
        rows.append((r.name, float(r.estimate), lo, hi, r.reference_bound, r.verdict))
    write_rows(path, SUMMARY_COLUMNS, rows)


def write_dos_csv(path: str, dos: DosEstimate) -> None:
    write_rows(path, ("energy", "N_hat", "nu_hat"),
               ((float(e), float(n), float(v)) for e, n, v in zip(dos.grid, dos.n_hat, dos.nu_hat)))


def write_counts_csv(path: str, counts: CountRecord) -> None:
    write_rows(path, ("sample", "window", "count"),
               ((i, j, int(c)) for i, row in enumerate(counts.counts) for j, c in enumerate(row)))


def write_fit_csv(path: str, fit: PoissonFit) -> None:
    rows = []
    for j, w in enumerate(fit.windows):
        for k, emp, ref in zip(w.ks, w.empirical, w.poisson):
            rows.append((j, k, emp, ref, w.tv))
    write_rows(path, ("window", "k", "empirical", "poisson", "tv"), rows)


def write_determinants_csv(path: str, checks: Sequence[DeterminantCheck]) -> None:
    write_rows(path, ("case", "draws", "max_rel_err"), ((c.case.value, c.draws, c.max_rel_err) for c in checks))


PERTURBATION_COLUMNS = ("n_sites", "sample", "index", "energy", "gap", "grad_rel_err", "sum_rule_rel_err",
                        "hess_rel_err", "hessian_norm")


def write_perturbation_csv(path: str, rows: Sequence[dict[str, Any]]) -> None:
    write_rows(path, PERTURBATION_COLUMNS, ([r[c] for c in PERTURBATION_COLUMNS] for r in rows))


# ---- figures ---------------------------------------------------------------------

def save_figure(fig: go.Figure, html_path: str, *, width: int = 800, height: int = 500) -> None:
    """Write the HTML figure and try a PNG next to it (needs kaleido)."""
    fig.write_html(html_path, include_plotlyjs="cdn")
    png_path = os.path.splitext(html_path)[0] + ".png"
    try:
        fig.write_image(png_path, format="png", width=width, height=height)
    except Exception as e:
        logger.warning("PNG export skipped for %s: %s", png_path, e)


def dos_figure(dos: DosEstimate) -> go.Figure:
    fig = go.Figure()
    fig.add_trace(go.Scatter(x=dos.grid, y=dos.n_hat, mode="lines", name="N_hat (IDS)"))
    fig.add_trace(go.Scatter(x=dos.grid, y=dos.nu_hat, mode="lines", name="nu_hat (DOS)", yaxis="y2"))
    fig.update_layout(
        title=f"Density of states (N={dos.n_sites}, samples={dos.n_samples})",
        xaxis_title="Energy",
        yaxis=dict(title="N_hat"),
        yaxis2=dict(title="nu_hat", overlaying="y", side="right"),
        template="plotly_white",
    )
    return fig


def count_pmf_figure(fit: PoissonFit) -> go.Figure:
    fig = go.Figure()
    for j, w in enumerate(fit.windows):
        fig.add_trace(go.Bar(x=list(w.ks), y=list(w.empirical), name=f"window {j} empirical"))
        fig.add_trace(go.Scatter(x=list(w.ks), y=list(w.poisson), mode="lines+markers",
                                 name=f"window {j} Poisson({w.intensity:g})"))
    fig.update_layout(title="Window count distribution", xaxis_title="count k", yaxis_title="probability",
                      barmode="group", template="plotly_white")
    return fig


def decorrelation_figure(results: Sequence[ExperimentResult]) -> go.Figure:
    per_l = [r for r in results if r.name == "decorrelation" and r.estimate > 0]
    x = [r.details["l_over_L"] for r in per_l]
    fig = go.Figure()
    fig.add_trace(go.Scatter(x=x, y=[r.estimate for r in per_l], mode="lines+markers", name="P_joint"))
    fig.add_trace(go.Scatter(x=x, y=[r.details["product"] for r in per_l], mode="lines+markers",
                             name="P_E * P_E'"))
    fig.update_layout(title="Two-energy decorrelation", xaxis_title="l / L", yaxis_title="probability",
                      xaxis_type="log", yaxis_type="log", template="plotly_white")
    return fig
