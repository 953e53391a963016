"""MAE aggregation of sweep tables into a robustness report, plus plot data."""

import csv
import hashlib
import io
import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ValidationError

TREND_TOLERANCE = 0.01

# Reference values reported on ACDC at full training scale.
REFERENCE_MAE = {
    "baseline": {0.0: (0.04, 0.05), 0.05: (0.08, 0.06), 0.1: (0.11, 0.07), 0.2: (0.14, 0.08), 0.3: (0.16, 0.09)},
    "proposed": {0.0: (0.04, 0.05), 0.05: (0.07, 0.06), 0.1: (0.09, 0.06), 0.2: (0.09, 0.07), 0.3: (0.12, 0.09)},
}


def mae(predictions, truths):
    """Mean and population standard deviation of ``|prediction - truth|``."""
    p = np.asarray(predictions, dtype=np.float64)
    t = np.asarray(truths, dtype=np.float64)
    if p.shape != t.shape:
        raise ValidationError(f"length mismatch: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise ValidationError("mae of an empty list")
    err = np.abs(p - t)
    return float(err.mean()), float(err.std())


@dataclass
class RobustnessReport:
    rows: list
    provenance: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    notes: dict = field(default_factory=lambda: {
        "std": "population standard deviation of per-slice absolute errors (divide by n)",
        "n": "number of test slices (candidate segmentations) per row",
    })

    def curves(self):
        """``{(method, surface): [(epsilon, mae_mean), ...]}`` in epsilon order."""
        out = defaultdict(list)
        for r in self.rows:
            out[(r["method"], r["surface"])].append((r["epsilon"], r["mae_mean"]))
        return {k: sorted(v) for k, v in out.items()}

    def lookup(self, method, surface, epsilon):
        for r in self.rows:
            if (r["method"], r["surface"], r["epsilon"]) == (method, surface, epsilon):
                return r
        raise KeyError((method, surface, epsilon))

    def to_dict(self):
        return {"rows": self.rows, "checks": self.checks, "provenance": self.provenance, "notes": self.notes}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["method", "surface", "epsilon", "mae_mean", "mae_std", "n"])
        for r in self.rows:
            w.writerow([r["method"], r["surface"], repr(r["epsilon"]), repr(r["mae_mean"]), repr(r["mae_std"]),
                        r["n"]])
        return buf.getvalue()

    def to_markdown(self):
        eps = sorted({r["epsilon"] for r in self.rows})
        lines = ["| Method | Surface | " + " | ".join(f"eps={e:g}" for e in eps) + " |",
                 "|---|---|" + "---|" * len(eps)]
        for method, surface in sorted({(r["method"], r["surface"]) for r in self.rows},
                                      key=lambda k: (k[0] != "baseline", k)):
            cells = []
            for e in eps:
                try:
                    r = self.lookup(method, surface, e)
                    cells.append(f"{r['mae_mean']:.2f}±{r['mae_std']:.2f}")
                except KeyError:
                    cells.append("-")
            lines.append(f"| {method} | {surface} | " + " | ".join(cells) + " |")
        for name, check in sorted(self.checks.items()):
            status = "PASS" if check["passed"] else "FAIL"
            lines.append("")
            lines.append(f"- {name}: {status} ({check['detail']})")
        return "\n".join(lines) + "\n"

    def write(self, out_dir):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "report.json").write_text(self.to_json())
        (out_dir / "report.csv").write_text(self.to_csv())
        (out_dir / "report.md").write_text(self.to_markdown())
        return out_dir

    @classmethod
    def from_json(cls, text):
        raw = json.loads(text)
        return cls(rows=raw["rows"], provenance=raw["provenance"], checks=raw["checks"], notes=raw["notes"])


def _trend_checks(curves, tol):
    checks = {}
    for (method, surface), pts in sorted(curves.items()):
        values = [m for _, m in pts]
        drops = [round(values[i] - values[i + 1], 12) for i in range(len(values) - 1)
                 if values[i + 1] < values[i] - tol]
        checks[f"monotone_trend[{method}/{surface}]"] = {
            "passed": not drops,
            "detail": "MAE non-decreasing in epsilon within %.2g" % tol
                      + (f"; drops {drops}" if drops else ""),
        }
    return checks


def _relative_check(curves):
    base = curves.get(("baseline", "input_image"))
    prop = {s: v for (m, s), v in curves.items() if m == "proposed"}
    if not base or not prop or len(base) < 2:
        return {}
    base_delta = base[-1][1] - base[0][1]
    deltas = {s: v[-1][1] - v[0][1] for s, v in sorted(prop.items()) if len(v) >= 2 and v[0][0] == base[0][0]
              and v[-1][0] == base[-1][0]}
    winners = [s for s, d in deltas.items() if d < base_delta]
    detail = f"baseline increase {base_delta:.4f}; proposed increases " + ", ".join(
        f"{s}={d:.4f}" for s, d in deltas.items())
    return {"relative_robustness": {"passed": bool(winners), "detail": detail,
                                    "baseline_delta": base_delta, "proposed_deltas": deltas,
                                    "surfaces_more_robust": winners}}


def build_report(sweep_tables, provenance=None, tolerance=TREND_TOLERANCE):
    """Aggregate sweep rows into one MAE row per (method, surface, epsilon).

    ``sweep_tables`` is a list of row lists as produced by ``attack.sweep`` or
    ``attack.read_sweep_csv``. Every table must cover the same test samples.
    """
    tables = [list(t) for t in sweep_tables]
    if not tables or not any(tables):
        raise ValidationError("no sweep rows to aggregate")
    ref_ids = None
    groups = defaultdict(lambda: ([], [], []))
    for table in tables:
        ids = sorted({r["sample_id"] for r in table})
        if ref_ids is None:
            ref_ids = ids
        elif ids != ref_ids:
            raise ValidationError("sweep tables were computed on different test splits")
        for r in table:
            key = (r["mode"], r["surface"], float(r["epsilon"]))
            g = groups[key]
            g[0].append(float(r["attacked_pred"]))
            g[1].append(float(r["gt_dice"]))
            g[2].append(r["sample_id"])
    rows = []
    for (method, surface, eps) in sorted(groups, key=lambda k: (k[0] != "baseline", k[0], k[1], k[2])):
        preds, truths, ids = groups[(method, surface, eps)]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"duplicate samples in {method}/{surface} at epsilon {eps}")
        mean, std = mae(preds, truths)
        rows.append({"method": method, "surface": surface, "epsilon": eps,
                     "mae_mean": mean, "mae_std": std, "n": len(preds)})
    report = RobustnessReport(rows=rows, provenance=dict(provenance or {}))
    curves = report.curves()
    report.checks.update(_trend_checks(curves, tolerance))
    report.checks.update(_relative_check(curves))
    report.provenance.setdefault("reference_mae_acdc", {
        m: {repr(e): v for e, v in t.items()} for m, t in REFERENCE_MAE.items()})
    return report


def emit_plot_data(report, out_dir):
    """Write ``curves.csv`` and one MAE-vs-epsilon PNG per attacked surface."""
    if not report.rows:
        raise ValidationError("empty report")
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    curves = report.curves()
    written = [out_dir / "curves.csv"]
    with open(written[0], "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["method", "surface", "epsilon", "mae_mean"])
        for (method, surface), pts in sorted(curves.items()):
            for eps, m in pts:
                w.writerow([method, surface, repr(eps), repr(m)])
    for surface in sorted({s for _, s in curves}):
        fig, ax = plt.subplots(figsize=(4.5, 3.5))
        for (method, s), pts in sorted(curves.items()):
            if s != surface and method != "baseline":
                continue
            label = method if s == surface else f"{method} ({s})"
            ax.plot(*zip(*pts), marker="o", label=label, linestyle="-" if s == surface else "--")
        ax.set_xlabel("epsilon")
        ax.set_ylabel("MAE of predicted Dice")
        ax.set_title(f"FGSM on {surface}")
        ax.legend()
        fig.tight_layout()
        path = out_dir / f"mae_vs_epsilon_{surface}.png"
        fig.savefig(path, dpi=100)
        plt.close(fig)
        written.append(path)
    return written


def file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def masked_residual_scores(differences, candidates):
    """Mean ``|difference|`` inside each candidate mask; NaN where the mask is empty."""
    out = np.full(len(differences), np.nan)
    for i, (dif, cand) in enumerate(zip(differences, candidates)):
        sel = np.asarray(cand).astype(bool)
        if sel.any():
            out[i] = np.abs(np.asarray(dif, dtype=np.float64)[sel]).mean()
    return out


def rationale_correlation(differences, candidates, gt_dice):
    """Spearman rank correlation of masked residual against true Dice.

    Candidates with an empty mask have no region to average over and are
    left out. Returns ``(rho, n_used)``.
    """
    from scipy.stats import spearmanr

    scores = masked_residual_scores(differences, candidates)
    keep = ~np.isnan(scores)
    rho = spearmanr(scores[keep], np.asarray(gt_dice)[keep]).statistic
    return float(rho), int(keep.sum())
