"""Static SVG panels from CSV outputs.

Output is byte-stable for identical input: the SVG id salt is fixed and the
date metadata suppressed.
"""

from __future__ import annotations

import io

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from gemsim.io import read_csv  # noqa: E402


def _kind(header):
    if header[0] == "detuning_hz":
        return "raman"
    if "efficiency" in header and "storage_time_s" in header:
        return "decay"
    if header[:2] == ["time_s", "re_field"]:
        return "traces"
    return "series"


def render_svg(csv_path, loglog: bool = False, title: str = "") -> str:
    header, cols = read_csv(csv_path)
    if len(header) < 2:
        raise ValueError(f"{csv_path}: need at least two columns to plot")
    kind = _kind(header)
    with matplotlib.rc_context({"svg.hashsalt": "gemsim", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 4))
        try:
            if kind == "raman":
                x = cols["detuning_hz"] / 1e3
                for name in header[1:]:
                    if name.startswith("absorbed"):
                        ax.plot(x, cols[name], label=name)
                ax.set_xlabel("two-photon detuning (kHz)")
                ax.set_ylabel("absorbed fraction")
            elif kind == "decay":
                labels = cols.get("label_index")
                x, y = cols["storage_time_s"] * 1e6, cols["efficiency"]
                if labels is None:
                    ax.plot(x, y, "o-")
                else:
                    for k in sorted(set(labels.tolist())):
                        sel = labels == k
                        ax.plot(x[sel], y[sel], "o-", label=f"config {int(k)}")
                ax.set_xlabel("storage time (us)")
                ax.set_ylabel("efficiency")
            elif kind == "traces":
                ax.plot(cols["time_s"] * 1e6, cols["intensity"])
                ax.set_xlabel("time (us)")
                ax.set_ylabel("output intensity")
            else:
                x = cols[header[0]]
                for name in header[1:]:
                    ax.plot(x, cols[name], label=name)
                ax.set_xlabel(header[0])
                ax.set_ylabel(header[1] if len(header) == 2 else "value")
            if loglog:
                ax.set_xscale("log")
                ax.set_yscale("log")
            if ax.get_legend_handles_labels()[0] and len(ax.lines) > 1:
                ax.legend()
            if title:
                ax.set_title(title)
            buf = io.StringIO()
            fig.savefig(buf, format="svg", metadata={"Date": None})
        finally:
            plt.close(fig)
    return buf.getvalue()
