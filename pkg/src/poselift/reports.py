"""JSON/CSV report files and an optional static SVG plot of a training log.

Everything written here is byte-stable for identical inputs; the only
time-dependent value is ``metadata.generated_at`` in the JSON file, and it is
written only when a timestamp is requested.
"""

from __future__ import annotations

import csv
import json
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

from .accounting import CostReport
from .metrics import MetricsReport


def _check_dir(out_dir: str | Path) -> Path:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create report directory {out}: {exc}") from exc
    return out


def write_json(obj: dict, path: str | Path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def emit_report(
    report: MetricsReport | CostReport,
    out_dir: str | Path,
    joint_names: Sequence[str] = (),
    stem: str = "metrics",
    timestamp: bool = True,
) -> list[Path]:
    """Write ``<stem>.json`` plus CSV tables; returns the written paths."""
    out = _check_dir(out_dir)
    doc = report.to_dict()
    if timestamp:
        doc.setdefault("metadata", {})["generated_at"] = datetime.now(timezone.utc).isoformat(timespec="seconds")
    paths = [out / f"{stem}.json"]
    write_json(doc, paths[0])

    if isinstance(report, MetricsReport):
        paths.append(out / "per_action.csv")
        with open(paths[-1], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["action", "mpjpe_mm", "p_mpjpe_mm", "frames"])
            for action, row in report.per_action.items():
                w.writerow([action, repr(row["mpjpe_mm"]), repr(row["p_mpjpe_mm"]), row["frames"]])
        paths.append(out / "per_joint.csv")
        with open(paths[-1], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["joint", "name", "mpjpe_mm"])
            for j, err in enumerate(report.per_joint):
                w.writerow([j, joint_names[j] if j < len(joint_names) else "", repr(err)])
    else:
        paths.append(out / "breakdown.csv")
        with open(paths[-1], "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["module", "macs"])
            w.writerows(report.breakdown)
    return paths


def strip_timestamp(doc: dict) -> dict:
    """Copy of a report document without the timestamp field, for comparisons."""
    doc = json.loads(json.dumps(doc))
    doc.get("metadata", {}).pop("generated_at", None)
    return doc


def plot_training_log(rows: Sequence[dict], path: str | Path) -> Path:
    """Static SVG line plot of per-epoch loss and evaluation errors."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "poselift"
    epochs = [r["epoch"] for r in rows]
    fig, (ax_loss, ax_err) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax_loss.plot(epochs, [r["train_loss"] for r in rows], color="black")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("train loss")
    ax_loss.set_yscale("log")
    for key, label in (("eval_p1", "P1"), ("eval_p2", "P2"), ("eval_accel", "accel")):
        ax_err.plot(epochs, [r[key] for r in rows], label=label)
    ax_err.set_xlabel("epoch")
    ax_err.set_ylabel("mm")
    ax_err.legend()
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return path
