"""Static report artifacts: PSNR-vs-density plot, ablation and size tables."""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Dict, List, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import DataError  # noqa: E402


def load_sparsify_log(path) -> List[dict]:
    """Per-epoch sparsify records; every line needs a density in [0, 1] and a PSNR."""
    records = []
    lines = Path(path).read_text().splitlines()
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DataError(f"{path}:{lineno}: malformed log record ({exc.msg})") from exc
        if not isinstance(rec, dict) or "density" not in rec or "psnr" not in rec:
            raise DataError(f"{path}:{lineno}: record lacks density or psnr")
        if not 0.0 <= float(rec["density"]) <= 1.0:
            raise DataError(f"{path}:{lineno}: density {rec['density']} outside [0, 1]")
        records.append(rec)
    if not records:
        raise DataError(f"{path}: no records")
    return records


def plot_density_curve(records: Sequence[dict], path, title: str = "PSNR against density") -> Path:
    density = [100.0 * float(r["density"]) for r in records]
    quality = [float(r["psnr"]) for r in records]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(density, quality, marker="o")
    for r, x, y in zip(records, density, quality):
        ax.annotate(str(r.get("epoch", "")), (x, y), fontsize=7, xytext=(3, 3), textcoords="offset points")
    ax.set_xlabel("density (%)")
    ax.set_ylabel("validation PSNR (dB)")
    ax.invert_xaxis()
    ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def markdown_table(rows: Sequence[dict], columns: Sequence[str]) -> str:
    def fmt(v):
        if isinstance(v, float):
            return f"{v:.4f}" if abs(v) < 10 else f"{v:.2f}"
        return str(v)

    lines = ["| " + " | ".join(columns) + " |", "|" + "---|" * len(columns)]
    lines += ["| " + " | ".join(fmt(r.get(c, "")) for c in columns) + " |" for r in rows]
    return "\n".join(lines) + "\n"


def csv_table(rows: Sequence[dict], columns: Sequence[str]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


ABLATION_COLUMNS = ("name", "mode", "F", "d", "params", "psnr", "ssim")
SIZE_COLUMNS = ("name", "params", "kernel_params", "checkpoint_bytes", "psnr")


def load_eval(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}:{exc.lineno}: malformed evaluation file ({exc.msg})") from exc
    for key in ("name", "psnr", "ssim", "params"):
        if key not in data:
            raise DataError(f"{path}: evaluation file lacks {key!r}")
    return data


def write_report(out_dir, sparsify_log=None, evals: Sequence = ()) -> Dict[str, Path]:
    """Emit whichever artifacts the given inputs support."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = {}
    if sparsify_log:
        records = load_sparsify_log(sparsify_log)
        written["density_plot"] = plot_density_curve(records, out_dir / "psnr_vs_density.png")
        cols = ("epoch", "density", "psnr", "loss")
        (out_dir / "sparsify_table.md").write_text(markdown_table(records, cols))
        written["sparsify_table"] = out_dir / "sparsify_table.md"
    if evals:
        rows = [load_eval(p) for p in evals]
        (out_dir / "ablation.md").write_text(markdown_table(rows, ABLATION_COLUMNS))
        (out_dir / "ablation.csv").write_text(csv_table(rows, ABLATION_COLUMNS))
        (out_dir / "sizes.md").write_text(markdown_table(rows, SIZE_COLUMNS))
        (out_dir / "sizes.csv").write_text(csv_table(rows, SIZE_COLUMNS))
        written.update(ablation=out_dir / "ablation.md", sizes=out_dir / "sizes.md")
    if not written:
        raise DataError("nothing to report: pass a sparsify log and/or evaluation files")
    return written

