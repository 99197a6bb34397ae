"""Plain-text rendering of the selection-accuracy table."""

from __future__ import annotations

from .results import ResultsTable

MISSING = "—"  # em dash stands in for absent cells

METRICS = ("treatment_accuracy", "timing_accuracy")


def render_selection_table(results_csv, out_path=None,
                           metrics=METRICS) -> str:
    """Accuracy blocks grouped by gamma setting, one row per horizon.

    Returns the rendered text; also writes it to ``out_path`` if given.
    """
    table = ResultsTable.from_csv(results_csv)
    models = table.models()
    taus = sorted({r["tau"] for r in table.rows
                   if r["metric"] in metrics})
    lines = []
    for metric in metrics:
        lines.append(f"== {metric} ==")
        for gc, gr in table.gamma_settings():
            block = [r for r in table.rows
                     if r["metric"] == metric
                     and (r["gamma_c"], r["gamma_r"]) == (gc, gr)]
            if not block:
                continue
            lines.append(f"-- gamma_c={gc:g}, gamma_r={gr:g} --")
            header = ["tau"] + models
            widths = [max(len(h), 8) for h in header]
            lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)))
            for tau in taus:
                cells = [str(tau)]
                for model in models:
                    v = table.value(gc, gr, model, tau, metric)
                    cells.append(MISSING if v is None else f"{v:.3f}")
                lines.append("  ".join(c.ljust(w)
                                       for c, w in zip(cells, widths)))
        lines.append("")
    text = "\n".join(lines)
    if out_path is not None:
        with open(out_path, "w") as f:
            f.write(text)
    return text
