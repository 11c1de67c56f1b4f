"""Chain diagnostics: acceptance tallies, proposal-delta traces, posterior
predictive intervals, empirical coverage and the distinct-structure census.
All tabular outputs are plain headered CSV so they can be plotted elsewhere.
"""
from __future__ import annotations

import csv
from collections import Counter

import numpy as np

from .proposals import ProposalKind
from .tree import parse, structure_key

__all__ = [
    "acceptance_rate",
    "delta_logil_trace",
    "predictive_interval",
    "empirical_coverage",
    "tree_census",
    "acceptance_summary",
    "write_traces_csv",
    "write_intervals_csv",
    "write_census_csv",
    "write_acceptance_csv",
]


def _normalize_kinds(kinds):
    if kinds is None:
        return None
    if isinstance(kinds, ProposalKind):
        return {kinds}
    return set(kinds)


def _select(outcomes, kinds=None, window=None):
    kinds = _normalize_kinds(kinds)
    lo, hi = window if window is not None else (0, None)
    for o in outcomes:
        if kinds is not None and o.kind not in kinds:
            continue
        if o.iteration < lo:
            continue
        if hi is not None and o.iteration >= hi:
            continue
        yield o


def acceptance_rate(outcomes, kinds=None, window=None):
    """Accepted / proposed over the window ``(first_iter, end_iter)``.

    Returns None when nothing matches the filter.
    """
    proposed = accepted = 0
    for o in _select(outcomes, kinds, window):
        proposed += 1
        accepted += o.accepted
    if proposed == 0:
        return None
    return accepted / proposed


def delta_logil_trace(outcomes, kinds=None, window=None) -> np.ndarray:
    """Per-proposal change in log integrated likelihood, in proposal order.
    Structurally impossible proposals appear as NaN."""
    return np.array([o.delta_log_il for o in _select(outcomes, kinds, window)])


def predictive_interval(draws: np.ndarray, level: float):
    """Equal-tailed empirical interval of posterior draws.

    ``draws`` is (n_draws,) for a single point or (n_draws, n_points); the
    bounds come back with matching shape.
    """
    draws = np.asarray(draws, dtype=float)
    if draws.shape[0] < 20:
        raise ValueError("need at least 20 draws for a stable interval")
    if not 0.0 < level <= 1.0:
        raise ValueError("level must lie in (0, 1]")
    tail = (1.0 - level) / 2.0
    lower = np.quantile(draws, tail, axis=0)
    upper = np.quantile(draws, 1.0 - tail, axis=0)
    return lower, upper


def empirical_coverage(lower, upper, truth) -> float:
    """Fraction of truths inside their intervals (bounds inclusive)."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if not (len(lower) == len(upper) == len(truth)):
        raise ValueError("mismatched lengths")
    return float(np.mean((truth >= lower) & (truth <= upper)))


def tree_census(draws) -> Counter:
    """Multiset of distinct canonical tree structures over kept draws.

    ``draws`` is an iterable of per-draw iterables of serialized trees
    (full or rules-only forms both work; leaf values are stripped).
    """
    census = Counter()
    cache = {}
    for draw in draws:
        if isinstance(draw, str):
            draw = (draw,)
        for text in draw:
            key = cache.get(text)
            if key is None:
                key = structure_key(parse(text))
                cache[text] = key
            census[key] += 1
    return census


def acceptance_summary(outcomes, window=None):
    """Per-kind (proposed, accepted, rate) rows in a stable order."""
    rows = []
    for kind in ProposalKind:
        proposed = accepted = 0
        for o in _select(outcomes, kind, window):
            proposed += 1
            accepted += o.accepted
        if proposed:
            rows.append((kind.value, proposed, accepted, accepted / proposed))
    total_p = sum(r[1] for r in rows)
    total_a = sum(r[2] for r in rows)
    if total_p:
        rows.append(("all", total_p, total_a, total_a / total_p))
    return rows


def write_traces_csv(path, outcomes) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iter", "tree", "kind", "accepted", "delta_logil"])
        for o in outcomes:
            writer.writerow([o.iteration, o.tree_index, o.kind.value,
                             int(o.accepted), repr(o.delta_log_il)])


def write_intervals_csv(path, lower, mean, upper, truth=None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x_id", "lower", "mean", "upper", "truth"])
        for i in range(len(lower)):
            row = [i, repr(float(lower[i])), repr(float(mean[i])),
                   repr(float(upper[i]))]
            row.append(repr(float(truth[i])) if truth is not None else "")
            writer.writerow(row)


def write_census_csv(path, census: Counter) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["canonical", "count"])
        for key, count in sorted(census.items(), key=lambda kv: (-kv[1], kv[0])):
            writer.writerow([key, count])


def write_acceptance_csv(path, outcomes, window=None) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["kind", "proposed", "accepted", "rate"])
        for kind, proposed, accepted, rate in acceptance_summary(outcomes, window):
            writer.writerow([kind, proposed, accepted, repr(rate)])
