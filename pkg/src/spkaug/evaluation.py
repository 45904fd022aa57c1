"""Listening-test statistics: MOS/DMOS tables, Mann-Whitney significance
against respective baselines, dialect confusion matrices and Frobenius
distance to the natural-speech confusion matrix.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal

import numpy as np

DIALECT_CATEGORIES = ("American", "Canadian", "English", "Irish",
                      "Northern Irish", "Scottish")
RATINGS_HEADER = ("listener_id", "utt_id", "system_id", "split",
                  "mos", "dmos", "dialect_choice", "true_dialect")
SPLIT_ORDER = ("train", "dev", "test")


@dataclass(frozen=True)
class RatingRecord:
    listener_id: str
    utt_id: str
    system_id: str
    split: str
    mos: int
    dmos: int
    dialect_choice: str
    true_dialect: str

    def __post_init__(self):
        for field_name in ("mos", "dmos"):
            v = getattr(self, field_name)
            if not (isinstance(v, int) and 1 <= v <= 5):
                raise ValueError(f"{field_name} must be an integer in 1..5, got {v!r}")


def load_ratings_csv(path_or_file):
    if hasattr(path_or_file, "read"):
        rows = list(csv.DictReader(path_or_file))
    else:
        with open(path_or_file, newline="") as f:
            rows = list(csv.DictReader(f))
    return [RatingRecord(
        listener_id=r["listener_id"], utt_id=r["utt_id"],
        system_id=r["system_id"], split=r["split"],
        mos=int(r["mos"]), dmos=int(r["dmos"]),
        dialect_choice=r["dialect_choice"], true_dialect=r["true_dialect"],
    ) for r in rows]


@dataclass
class ConfusionMatrix:
    """Rows are true categories, columns are guesses."""

    categories: tuple
    counts: np.ndarray

    def normalized(self):
        """(row-stochastic matrix, empty-row flags); empty rows stay zero."""
        counts = self.counts.astype(np.float64)
        sums = counts.sum(axis=1)
        empty = sums == 0
        safe = np.where(empty, 1.0, sums)
        return counts / safe[:, None], empty


def confusion_from_ratings(ratings, categories=DIALECT_CATEGORIES):
    """Count true-vs-guessed categories for one system+split's ratings."""
    categories = tuple(categories)
    index = {c: i for i, c in enumerate(categories)}
    counts = np.zeros((len(categories), len(categories)), dtype=np.int64)
    for r in ratings:
        if r.true_dialect not in index:
            raise ValueError(f"unknown true dialect '{r.true_dialect}'")
        if r.dialect_choice not in index:
            raise ValueError(f"unknown dialect choice '{r.dialect_choice}'")
        counts[index[r.true_dialect], index[r.dialect_choice]] += 1
    return ConfusionMatrix(categories, counts)


def frobenius(a, b):
    """sqrt of the summed squared entrywise differences."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.sqrt(((a - b) ** 2).sum()))


def confusion_distance(system_cm, natural_cm, normalize=True):
    """Frobenius distance between two confusion matrices.

    Row-normalized proportions by default (sample-size independent);
    ``normalize=False`` compares raw counts.
    """
    if normalize:
        a, _ = system_cm.normalized()
        b, _ = natural_cm.normalized()
    else:
        a, b = system_cm.counts, natural_cm.counts
    return frobenius(a, b)


# ---------------------------------------------------------------------------
# Mann-Whitney U
# ---------------------------------------------------------------------------

EXACT_LIMIT = 12


@dataclass(frozen=True)
class MannWhitneyResult:
    U: float
    p_two_sided: float
    mode: str


def _midranks(pooled):
    order = np.argsort(pooled, kind="stable")
    ranks = np.empty(len(pooled))
    i = 0
    while i < len(pooled):
        j = i
        while j + 1 < len(pooled) and pooled[order[j + 1]] == pooled[order[i]]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def _exact_two_sided_p(ranks2, n1, u_obs_2):
    """Exact p by counting size-n1 subsets of doubled midranks via DP.

    ranks2 are midranks * 2 (integers); u_obs_2 is 2 * U_x for the observed
    split. Returns P(min(U, n1*n2 - U) <= min(u_obs, n1*n2 - u_obs)).
    """
    n = len(ranks2)
    n2 = n - n1
    total2 = 2 * n1 * n2
    stat_obs = min(u_obs_2, total2 - u_obs_2)
    # counts[k] maps doubled rank sum -> number of size-k subsets
    counts = [dict() for _ in range(n1 + 1)]
    counts[0][0] = 1
    for r in ranks2:
        for k in range(min(n1, n1) - 1, -1, -1):
            if not counts[k]:
                continue
            dst = counts[k + 1]
            for s, c in counts[k].items():
                dst[s + r] = dst.get(s + r, 0) + c
    offset = n1 * (n1 + 1)  # 2 * n1(n1+1)/2
    hits = 0
    total = 0
    for s2, c in counts[n1].items():
        u2 = s2 - offset
        total += c
        if min(u2, total2 - u2) <= stat_obs:
            hits += c
    return hits / total


def mann_whitney_u(x, y, mode="exact"):
    """Mann-Whitney U (midranks for ties) with exact or normal-mode p.

    Exact mode enumerates the permutation distribution (sample sizes up to
    |x|+|y| = 12); normal mode uses the tie-corrected variance with a
    continuity correction. Returns U for the x sample; U_x + U_y = |x|*|y|.
    """
    x = [float(v) for v in x]
    y = [float(v) for v in y]
    if not x or not y:
        raise ValueError("both samples must be non-empty")
    n1, n2 = len(x), len(y)
    pooled = np.array(x + y)
    ranks = _midranks(pooled)
    r1 = ranks[:n1].sum()
    u1 = r1 - n1 * (n1 + 1) / 2.0
    if mode == "exact":
        if n1 + n2 > EXACT_LIMIT:
            raise ValueError(
                f"exact mode requires |x|+|y| <= {EXACT_LIMIT}, got {n1 + n2}"
            )
        ranks2 = np.rint(ranks * 2).astype(int)
        p = _exact_two_sided_p(list(ranks2), n1, int(round(2 * u1)))
        return MannWhitneyResult(u1, p, "exact")
    if mode != "normal":
        raise ValueError(f"mode must be 'exact' or 'normal', got '{mode}'")
    n = n1 + n2
    _, tie_counts = np.unique(pooled, return_counts=True)
    tie_term = float(((tie_counts ** 3) - tie_counts).sum())
    var = n1 * n2 / 12.0 * ((n + 1) - tie_term / (n * (n - 1)))
    if var <= 0:
        return MannWhitneyResult(u1, 1.0, "normal")
    mu = n1 * n2 / 2.0
    diff = u1 - mu
    cc = 0.5 * np.sign(diff)
    z = (diff - cc) / math.sqrt(var)
    p = min(1.0, 2.0 * 0.5 * math.erfc(abs(z) / math.sqrt(2.0)))
    return MannWhitneyResult(u1, p, "normal")


# ---------------------------------------------------------------------------
# MOS tables and significance
# ---------------------------------------------------------------------------


def round_half_up_1(values_sum, count):
    """Mean to one decimal, half-up — exact integer arithmetic, no float."""
    mean_exact = Decimal(int(values_sum)) / Decimal(int(count))
    return float(mean_exact.quantize(Decimal("0.1"), rounding=ROUND_HALF_UP))


@dataclass
class MosCell:
    mean: float
    samples: tuple

    @property
    def n(self):
        return len(self.samples)


@dataclass
class MosTable:
    measure: str
    systems: tuple
    splits: tuple
    cells: dict  # (system, split) -> MosCell; missing pairs absent


def mos_table(ratings, measure="mos"):
    """Means per system x split on 1 decimal (half-up); samples retained."""
    if measure not in ("mos", "dmos"):
        raise ValueError(f"measure must be 'mos' or 'dmos', got '{measure}'")
    grouped = {}
    systems = []
    for r in ratings:
        key = (r.system_id, r.split)
        if r.system_id not in systems:
            systems.append(r.system_id)
        grouped.setdefault(key, []).append(getattr(r, measure))
    cells = {}
    for key, values in grouped.items():
        cells[key] = MosCell(round_half_up_1(sum(values), len(values)),
                             tuple(values))
    splits = tuple(s for s in SPLIT_ORDER if any(k[1] == s for k in cells))
    return MosTable(measure, tuple(systems), splits, cells)


def significance_marks(table, baseline_map, alpha=0.01):
    """Two-sided Mann-Whitney vs each system's own baseline, per split.

    Returns (system, split) -> "better" | "worse" | "n.s." | "baseline";
    cells missing on either side are reported as "missing".
    """
    baselines = set(baseline_map.values())
    marks = {}
    for system in table.systems:
        if system in baselines and system not in baseline_map:
            for split in table.splits:
                if (system, split) in table.cells:
                    marks[(system, split)] = "baseline"
            continue
        if system not in baseline_map:
            raise ValueError(f"system '{system}' has no baseline mapping")
        base = baseline_map[system]
        for split in table.splits:
            if (system, split) not in table.cells:
                continue
            if (base, split) not in table.cells:
                marks[(system, split)] = "missing"
                continue
            xs = table.cells[(system, split)].samples
            ys = table.cells[(base, split)].samples
            mode = "exact" if len(xs) + len(ys) <= EXACT_LIMIT else "normal"
            result = mann_whitney_u(xs, ys, mode)
            if result.p_two_sided < alpha:
                direction = np.mean(xs) - np.mean(ys)
                marks[(system, split)] = "better" if direction > 0 else "worse"
            else:
                marks[(system, split)] = "n.s."
    return marks


_MARK_SYMBOL = {"better": "+", "worse": "-", "n.s.": " ", "baseline": "B",
                "missing": "?"}


def format_mos_report(table, marks=None):
    """Plain-text table, one row per system, with +/- significance marks."""
    lines = [f"{table.measure.upper()} (systems x splits)"]
    header = "system".ljust(24) + "".join(s.rjust(12) for s in table.splits)
    lines.append(header)
    for system in table.systems:
        row = system.ljust(24)
        for split in table.splits:
            cell = table.cells.get((system, split))
            if cell is None:
                row += "missing".rjust(12)
                continue
            mark = _MARK_SYMBOL.get(marks.get((system, split), " "), " ") \
                if marks else " "
            row += f"{cell.mean:.1f}{mark}".rjust(12)
        lines.append(row)
    return "\n".join(lines) + "\n"


def write_mos_csv(path, table, marks=None):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["system", "split", table.measure, "n", "mark"])
        for system in table.systems:
            for split in table.splits:
                cell = table.cells.get((system, split))
                if cell is None:
                    continue
                mark = marks.get((system, split), "") if marks else ""
                writer.writerow([system, split, f"{cell.mean:.1f}", cell.n, mark])


def format_confusion_report(distances):
    """Text report of per-system Frobenius distances: {system: {split: d}}."""
    out = io.StringIO()
    splits = sorted({s for by_split in distances.values() for s in by_split},
                    key=lambda s: SPLIT_ORDER.index(s) if s in SPLIT_ORDER else 99)
    out.write("Dialect confusion (Frobenius distance to natural speech)\n")
    out.write("system".ljust(24) + "".join(s.rjust(12) for s in splits) + "\n")
    for system, by_split in distances.items():
        row = system.ljust(24)
        for s in splits:
            row += (f"{by_split[s]:.2f}" if s in by_split else "-").rjust(12)
        out.write(row + "\n")
    return out.getvalue()
