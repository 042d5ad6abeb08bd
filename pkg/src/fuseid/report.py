"""Report directory writer: delimited score/CMC data plus rendered figures.

All numeric formatting is pinned so identical experiments produce
byte-identical files; the CMC figure is rendered through the Agg
backend with fixed metadata for the same reason.
"""

from __future__ import annotations

import os
from typing import TYPE_CHECKING, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

if TYPE_CHECKING:  # pragma: no cover
    from fuseid.evaluate import CmcCurve, IdentifyResult
    from fuseid.weighting import UserWeights

SCORE_FMT = "%.6f"
WEIGHT_FMT = "%.10f"

_CURVE_STYLE = {
    "fingerprint": dict(color="#1f77b4", marker="o"),
    "ear": dict(color="#2ca02c", marker="s"),
    "fused": dict(color="#9467bd", marker="^"),
    "weighted": dict(color="#d62728", marker="D"),
}


def write_scores_csv(
    path: str, gallery_ids: Sequence[str], rows: Sequence[tuple[str, Sequence[float]]]
) -> None:
    """Probe-by-gallery matrix of normalized scores, 6 decimal places."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("probe_id," + ",".join(gallery_ids) + "\n")
        for probe_id, scores in rows:
            fh.write(probe_id + "," + ",".join(SCORE_FMT % s for s in scores) + "\n")


def write_cmc_csv(path: str, cmc: "CmcCurve") -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("rank,hit_rate\n")
        for rank, rate in zip(cmc.ranks, cmc.hit_rates):
            fh.write(("%d," + SCORE_FMT + "\n") % (rank, rate))


def write_weights_csv(
    path: str, weights: dict[str, "UserWeights"], matchers: Sequence[str], order: Sequence[str]
) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("user_id,matcher,raw_weight,adapted_weight\n")
        for sid in order:
            uw = weights[sid]
            for i, m in enumerate(matchers):
                fh.write(
                    ("%s,%s," + WEIGHT_FMT + "," + WEIGHT_FMT + "\n")
                    % (sid, m, uw.raw[i], uw.adapted[i])
                )


def write_summary(
    path: str,
    gallery_size: int,
    probe_count: int,
    rank1: dict[str, float],
    flags: Sequence[str],
) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("gallery_size=%d\n" % gallery_size)
        fh.write("probes=%d\n" % probe_count)
        for name, rate in rank1.items():
            fh.write(("rank1_%s=" + SCORE_FMT + "\n") % (name, rate))
        fh.write("flags=%d\n" % len(flags))
        for flag in flags:
            fh.write("# %s\n" % flag)


def render_cmc_figure(path: str, cmc: dict[str, "CmcCurve"]) -> None:
    """Overlay all CMC curves into one PNG."""
    fig, ax = plt.subplots(figsize=(6.0, 4.0), dpi=150)
    for name, curve in cmc.items():
        style = _CURVE_STYLE.get(name, {})
        ax.plot(curve.ranks, curve.hit_rates, label=name, markersize=3.5, linewidth=1.4, **style)
    ax.set_xlabel("Rank")
    ax.set_ylabel("Identification rate")
    ax.set_ylim(0.0, 1.02)
    ax.set_xlim(1, max(len(c) for c in cmc.values()))
    ax.grid(True, alpha=0.3)
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, metadata={"Software": "fuseid"})
    plt.close(fig)


def write_report(
    out_dir: str,
    subjects: Sequence[str],
    probe_ids: Sequence[str],
    results: Sequence["IdentifyResult"],
    matchers: Sequence[str],
    cmc: dict[str, "CmcCurve"],
    rank1: dict[str, float],
    weights: dict[str, "UserWeights"],
    flags: Sequence[str],
) -> None:
    for m in matchers:
        rows = [(pid, r.matcher_norm[m]) for pid, r in zip(probe_ids, results)]
        write_scores_csv(os.path.join(out_dir, f"scores_{m}.csv"), subjects, rows)
    weighted_rows = [(pid, r.weighted) for pid, r in zip(probe_ids, results)]
    write_scores_csv(os.path.join(out_dir, "scores_weighted.csv"), subjects, weighted_rows)

    for name, curve in cmc.items():
        write_cmc_csv(os.path.join(out_dir, f"cmc_{name}.csv"), curve)
    write_weights_csv(os.path.join(out_dir, "weights.csv"), weights, matchers, subjects)
    write_summary(
        os.path.join(out_dir, "summary.txt"),
        gallery_size=len(subjects),
        probe_count=len(probe_ids),
        rank1=rank1,
        flags=flags,
    )
    render_cmc_figure(os.path.join(out_dir, "cmc.png"), cmc)
