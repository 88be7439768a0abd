"""Static SVG renderings of the result CSVs.

Plots are a courtesy; the CSV files are the contract.  matplotlib is
imported lazily so the rest of the package works without it.
"""

from __future__ import annotations

import io


def _figure():
    try:
        import matplotlib
    except ImportError as exc:  # pragma: no cover - depends on environment
        raise RuntimeError("plotting needs matplotlib (pip install 'artifact[plot]')") from exc
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "cogradio"
    return plt


def _svg(fig, plt) -> str:
    buf = io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None})
    plt.close(fig)
    return buf.getvalue()


def roc_svg(rows) -> str:
    """ROC curve: analytic line with empirical markers."""
    plt = _figure()
    fig, ax = plt.subplots(figsize=(5, 4))
    pf_a = [r[1] for r in rows]
    pd_a = [r[2] for r in rows]
    ax.plot(pf_a, pd_a, "-", label="analytic")
    ax.plot([r[3] for r in rows], [r[4] for r in rows], "o", ms=3, label="Monte Carlo")
    ax.set_xlabel("probability of false alarm $P_f$")
    ax.set_ylabel("probability of detection $P_d$")
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.legend(loc="lower right")
    return _svg(fig, plt)


def sweep_svg(rows) -> str:
    """Normalized throughput against secondary-user density."""
    plt = _figure()
    fig, ax = plt.subplots(figsize=(5, 4))
    d = [r.density for r in rows]
    ax.plot(d, [r.normalized_throughput for r in rows], "o-", label="network")
    ax.plot(d, [r.per_user_normalized_throughput for r in rows], "s--", label="per user")
    ax.set_xlabel("average secondary user density per km$^2$")
    ax.set_ylabel("normalized throughput ratio")
    ax.set_ylim(0, 1.05)
    ax.legend()
    return _svg(fig, plt)
