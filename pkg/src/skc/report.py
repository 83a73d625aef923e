"""Run orchestration and report emission.

A run produces three files:

* ``report.txt``: human-readable summary with the chosen kernel and a
  hyperparameter table in original units;
* ``trace.jsonl``: one JSON object per evaluated candidate (schema below);
* ``intervals.csv``: per-depth BIC intervals for external plotting.

Variances are reported in normalized-target units; lengthscales, periods and
LIN offsets are converted back to the original input units.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from . import kernels as kern
from .exceptions import SKCError
from .gp import GPModel, lin_slope
from .search import run_search

TRACE_SCHEMA = 1


# ---------------------------------------------------------------------------
# unit conversion
# ---------------------------------------------------------------------------


def denormalize_base(b, data):
    """Base kernel with lengthscale/period/offset in original units of its column."""
    mu, sd = float(data.x_mean[b.dim]), float(data.x_std[b.dim])
    vals = []
    for name, v in zip(b.names, b.params):
        if name in ("len", "per"):
            v = v * sd
        elif name == "off":
            v = v * sd + mu
        vals.append(v)
    return kern.BaseKernel(b.kind, b.dim, tuple(vals))


def renormalize_base(b, data):
    mu, sd = float(data.x_mean[b.dim]), float(data.x_std[b.dim])
    vals = []
    for name, v in zip(b.names, b.params):
        if name in ("len", "per"):
            v = v / sd
        elif name == "off":
            v = (v - mu) / sd
        vals.append(v)
    return kern.BaseKernel(b.kind, b.dim, tuple(vals))


def _map_bases(k, fn):
    if isinstance(k, kern.BaseKernel):
        return fn(k)
    return type(k)(tuple(_map_bases(c, fn) for c in k.children))


def denormalize_kernel(k, data):
    return _map_bases(k, lambda b: denormalize_base(b, data))


def renormalize_kernel(k, data):
    return _map_bases(k, lambda b: renormalize_base(b, data))


# ---------------------------------------------------------------------------
# report model
# ---------------------------------------------------------------------------


@dataclass
class Report:
    result: object
    data: object
    config: object
    kernel_normalized: str
    kernel_original: str
    rows: list
    interpretation: list
    noise: float
    extra: dict = field(default_factory=dict)

    @property
    def chosen(self):
        return self.result.chosen


def _column(data, dim):
    return data.column_names[dim] if dim < len(data.column_names) else f"x{dim}"


def interpret(model, data):
    """Hyperparameter table rows and one interpretation line per base kernel."""
    k = kern.canonical(model.kernel)
    rows = []
    lines = []
    for i, b in enumerate(kern.bases(k)):
        ob = denormalize_base(b, data)
        col = _column(data, b.dim)
        row = {"term": i, "kernel": b.kind, "column": col, "variance": ob.param("var")}
        if b.kind == kern.SE:
            row["lengthscale"] = ob.param("len")
            lines.append(f"SE on {col}: lengthscale {ob.param('len'):.6g}")
        elif b.kind == kern.PER:
            row["lengthscale"] = ob.param("len")
            row["period"] = ob.param("per")
            lines.append(
                f"PER on {col}: period {ob.param('per'):.6g}, lengthscale {ob.param('len'):.6g}"
            )
        else:
            row["offset"] = ob.param("off")
            # slope of the posterior mean under this LIN term alone
            slope_n = lin_slope(GPModel(b, model.noise), data, b.dim)
            slope = slope_n * data.y_std / float(data.x_std[b.dim])
            row["slope"] = slope
            lines.append(
                f"LIN on {col}: slope {slope:.6g} ({data.target_name} per unit {col}), "
                f"offset {ob.param('off'):.6g}"
            )
        rows.append(row)
    return rows, lines


def build_report(result, data, config):
    model = result.chosen.model
    k = kern.canonical(model.kernel)
    rows, lines = interpret(model, data)
    return Report(
        result=result,
        data=data,
        config=config,
        kernel_normalized=kern.to_string(k),
        kernel_original=kern.to_string(denormalize_kernel(k, data), precision=6),
        rows=rows,
        interpretation=lines,
        noise=model.noise,
    )


def run(config, dataset):
    """Execute the configured search and assemble a :class:`Report`."""
    result = run_search(dataset, config)
    return build_report(result, dataset, config)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def _num(v):
    if v is None:
        return None
    v = float(v)
    return v if math.isfinite(v) else None


def trace_records(report):
    """One dict per evaluated candidate, in evaluation order."""
    chosen_id = report.chosen.id
    timing = bool(getattr(report.config, "record_timing", False))
    out = []
    for c in report.result.candidates:
        rec = {
            "schema": TRACE_SCHEMA,
            "id": c.id,
            "depth": c.depth,
            "parent": c.parent,
            "structure": c.structure,
            "status": c.status,
            "p": c.p,
        }
        if c.ok:
            iv = c.interval
            sw = iv.sandwich
            rec.update(
                kernel=c.kernel_string,
                noise=_num(c.model.noise),
                lower=_num(iv.lower),
                upper=_num(iv.upper),
                m=iv.m,
                logml_lower=_num(sw.lower) if sw else None,
                logml_upper=_num(sw.upper) if sw else None,
                nld_ub=_num(sw.nld_ub) if sw else None,
                nip_ub=_num(sw.nip_ub) if sw else None,
                cg_iterations=sw.cg_iterations if sw else None,
                cg_converged=sw.cg_converged if sw else None,
                exact_bic=_num(c.exact_bic),
            )
        else:
            rec["error"] = c.error
        rec.update(
            restarts={
                "count": len(c.restart_objectives),
                "best": c.best_restart,
                "objectives": [_num(o) for o in c.restart_objectives],
                "iterations": c.iterations,
                "converged": c.converged,
            },
            in_buffer=c.in_buffer,
            chosen=c.id == chosen_id,
        )
        if timing:
            rec["seconds"] = round(c.seconds, 6)
        out.append(rec)
    return out


def trace_jsonl(report):
    return "".join(json.dumps(r, sort_keys=True) + "\n" for r in trace_records(report))


INTERVAL_COLUMNS = ["depth", "id", "parent", "kernel", "lower", "upper", "exact_bic", "in_buffer", "chosen"]


def intervals_csv(report):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(INTERVAL_COLUMNS)
    for c in report.result.candidates:
        if not c.ok:
            continue
        w.writerow(
            [
                c.depth,
                c.id,
                "" if c.parent is None else c.parent,
                c.structure,
                repr(float(c.lower)),
                repr(float(c.upper)),
                "" if c.exact_bic is None else repr(float(c.exact_bic)),
                int(c.in_buffer),
                int(c.id == report.chosen.id),
            ]
        )
    return buf.getvalue()


def _fmt(v, width=12):
    if v is None or v == "":
        return " " * (width - 1) + "-"
    if isinstance(v, float):
        return f"{v:>{width}.6g}"
    return f"{v!s:>{width}}"


def text_report(report):
    data, cfg, res = report.data, report.config, report.result
    c = report.chosen
    out = []
    out.append("Kernel structure search report")
    out.append("=" * 30)
    src = data.source_path or "<in-memory>"
    out.append(f"data: {src}  N={data.n}  D={data.d}  target={data.target_name}  dropped rows={data.dropped_rows}")
    out.append(
        f"mode: {cfg.mode}  depth: {cfg.depth}  m: {cfg.m}  buffer: {cfg.buffer}  "
        f"restarts: {cfg.restarts}  precond: {cfg.precond}  seed: {cfg.seed}"
    )
    out.append("")
    out.append(f"chosen kernel: {c.structure}")
    if c.lower == c.upper:
        out.append(f"  BIC: {c.lower:.6f}")
    else:
        out.append(f"  BIC interval: [{c.lower:.6f}, {c.upper:.6f}]")
    if c.exact_bic is not None:
        out.append(f"  exact BIC: {c.exact_bic:.6f}")
    out.append(f"  normalized:     {report.kernel_normalized}")
    out.append(f"  original units: {report.kernel_original}")
    out.append(f"  noise variance (normalized): {report.noise:.6g}")
    out.append("")
    out.append("hyperparameters (variance in normalized target units; other values in original input units)")
    cols = ["term", "kernel", "column", "variance", "lengthscale", "period", "offset", "slope"]
    out.append("".join(f"{h:>12}" for h in cols))
    for row in report.rows:
        out.append("".join(_fmt(row.get(h)) for h in cols))
    out.append("")
    out.append("interpretation")
    for line in report.interpretation:
        out.append(f"  {line}")
    out.append("")
    out.append("search tree")
    for depth, cands in sorted(res.by_depth().items()):
        out.append(f"depth {depth}")
        for cand in cands:
            if not cand.ok:
                out.append(f"  {cand.structure:<40} failed: {cand.error}")
                continue
            flags = ("B" if cand.in_buffer else " ") + ("*" if cand.id == c.id else " ")
            out.append(f"  {flags} {cand.structure:<40} [{cand.lower:14.6f}, {cand.upper:14.6f}]")
    out.append("")
    out.append(f"total search time: {res.seconds:.2f} s")
    out.append("")
    out.append("config")
    out.append(json.dumps(cfg.to_dict(), sort_keys=True, indent=2, default=str))
    return "\n".join(out) + "\n"


OUTPUTS = {
    "text": ("report.txt", text_report),
    "trace": ("trace.jsonl", trace_jsonl),
    "intervals": ("intervals.csv", intervals_csv),
}


def emit_report(report, out_dir, formats=("text", "trace", "intervals")):
    """Write the selected outputs into ``out_dir``; returns {format: path}."""
    unknown = set(formats) - set(OUTPUTS)
    if unknown:
        raise ValueError(f"unknown report formats: {sorted(unknown)}")
    out = Path(out_dir)
    paths = {}
    try:
        out.mkdir(parents=True, exist_ok=True)
        for fmt in formats:
            name, render = OUTPUTS[fmt]
            paths[fmt] = out / name
            paths[fmt].write_text(render(report), encoding="utf-8")
    except OSError as exc:
        raise SKCError(f"cannot write report to {out}: {exc}") from exc
    return paths
