"""Comparison table and curve data, as CSV plus a PDF rendering of the table."""

from __future__ import annotations

import logging
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd
from reportlab.lib import colors
from reportlab.lib.pagesizes import A4, landscape
from reportlab.lib.styles import getSampleStyleSheet
from reportlab.platypus import Paragraph, SimpleDocTemplate, Spacer, Table, TableStyle

from smident.errors import DataError
from smident.estimators import DecayFit, EstimationSummary
from smident.lti_sim import IORecord
from smident.predictors import METHODS, IdentResult

logger = logging.getLogger(__name__)

HEADER_STYLE = [
    ("TEXTCOLOR", (0, 0), (-1, 0), colors.white),
    ("GRID", (0, 0), (-1, -1), 0.5, colors.HexColor("#d1d5db")),
    ("FONTNAME", (0, 0), (-1, 0), "Helvetica-Bold"),
    ("FONTSIZE", (0, 0), (-1, -1), 9),
]


def select_horizons(horizons: Sequence[int], pbar: int) -> list[int]:
    """Requested horizons within 1..pbar; pbar alone when none qualifies."""
    kept = sorted({int(p) for p in horizons if 1 <= p <= pbar})
    dropped = sorted({int(p) for p in horizons} - set(kept))
    if dropped:
        logger.warning("Horizons %s exceed pbar=%d and are left out of the table", dropped, pbar)
    return kept or [pbar]


def comparison_table(results: Mapping[str, IdentResult], horizons: Sequence[int]) -> pd.DataFrame:
    """One row per horizon; tau_hat, e and the e <= tau_hat flag per method."""
    rows = []
    for p in horizons:
        row: dict[str, object] = {"p": p}
        for method in METHODS:
            if method not in results:
                continue
            bounds = results[method].bounds
            if bounds is None or bounds.tau_hat is None or bounds.e is None:
                raise DataError(f"{method} has not been evaluated")
            if p > bounds.tau_hat.size:
                raise DataError(f"Horizon {p} exceeds the evaluated range of {method} ({bounds.tau_hat.size})")
            tau, err = float(bounds.tau_hat[p - 1]), float(bounds.e[p - 1])
            row[f"{method}_tau_hat"] = tau
            row[f"{method}_e"] = err
            row[f"{method}_e_le_tau"] = bool(err <= tau)
        rows.append(row)
    return pd.DataFrame(rows)


def curves_frame(results: Mapping[str, IdentResult]) -> pd.DataFrame:
    frames = []
    for method in METHODS:
        if method not in results or results[method].bounds is None:
            continue
        frame = results[method].bounds.to_frame()
        frame.insert(0, "method", method)
        frames.append(frame)
    if not frames:
        raise DataError("No evaluated identification results to report")
    return pd.concat(frames, ignore_index=True)


def decay_frame(summary: EstimationSummary, fit: DecayFit) -> pd.DataFrame:
    p = np.arange(1, len(summary.eps_hat) + 1)
    return pd.DataFrame({"p": p, "eps_hat": summary.eps_hat, "envelope": fit.envelope(p)})


def record_frame(io: IORecord) -> pd.DataFrame:
    frame = pd.DataFrame({"k": np.arange(len(io)), "t": np.arange(len(io)) * io.ts, "u": io.u, "y": io.y})
    if io.z is not None:
        frame["z"] = io.z
    return frame


def write_csv(frame: pd.DataFrame, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format="%.6g")
    return path


def _styled(rows: list[list[str]], header: str, widths: list[float] | None = None) -> Table:
    table = Table(rows, colWidths=widths)
    table.setStyle(TableStyle([("BACKGROUND", (0, 0), (-1, 0), colors.HexColor(header)), *HEADER_STYLE]))
    return table


def write_pdf(table: pd.DataFrame, summary: EstimationSummary, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = SimpleDocTemplate(
        str(path), pagesize=landscape(A4), leftMargin=24, rightMargin=24, topMargin=24, bottomMargin=24,
        invariant=1, title="Guaranteed bounds and validation errors",
    )
    styles = getSampleStyleSheet()
    story = [Paragraph("Guaranteed bounds and validation errors", styles["Title"]), Spacer(1, 10)]

    estimates = [
        ["Estimate", "Value"],
        ["dbar", f"{summary.dbar:.4g}"],
        ["pbar", str(summary.pbar)],
        ["o", str(summary.o)],
        ["rho_hat", f"{summary.rho_hat:.4f}"],
        ["Lz_hat", f"{summary.Lz_hat:.4f}"],
        ["Lu_hat", f"{summary.Lu_hat:.4f}"],
    ]
    story.append(Paragraph("Estimated quantities", styles["Heading3"]))
    story.append(_styled(estimates, "#115e59", [200, 160]))
    story.append(Spacer(1, 10))

    methods = [m for m in METHODS if f"{m}_tau_hat" in table.columns]
    rows = [["p"] + [f"{m} tau_hat / e" for m in methods]]
    for _, record in table.iterrows():
        cells = [str(int(record["p"]))]
        for m in methods:
            mark = "" if record[f"{m}_e_le_tau"] else " !"
            cells.append(f"{record[f'{m}_tau_hat']:.3f} / {record[f'{m}_e']:.3f}{mark}")
        rows.append(cells)
    story.append(Paragraph("Comparison by horizon", styles["Heading3"]))
    story.append(_styled(rows, "#0f172a"))

    doc.build(story)
    return path
