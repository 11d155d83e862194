"""Report figures for split and dataset statistics.

All functions write a PNG and close their figure; nothing is shown.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

SET_COLOURS = {"train": "#4C72B0", "val": "#DD8452", "test": "#55A868"}

STYLE = {
    "figure.figsize": (6.4, 4.0),
    "figure.dpi": 100,
    "savefig.dpi": 150,
    "font.size": 10,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "legend.frameon": False,
}


def _grouped_bars(ax, groups, series: dict[str, list[float]]):
    x = np.arange(len(groups))
    width = 0.8 / max(len(series), 1)
    for j, (name, vals) in enumerate(series.items()):
        vals = [np.nan if v is None else v for v in vals]
        ax.bar(x + (j - (len(series) - 1) / 2) * width, vals, width,
               label=name, color=SET_COLOURS.get(name))
    ax.set_xticks(x)
    ax.set_xticklabels(groups)
    ax.legend()


def _save(fig, path) -> Path:
    path = Path(path)
    fig.tight_layout()
    # no Software tag, so reruns give identical bytes
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def plot_class_distribution(report: dict, path) -> Path:
    subsets = report["subsets"]
    classes = list(next(iter(subsets.values()))["class_distribution"])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        _grouped_bars(ax, classes, {name: [s["class_distribution"][c] for c in classes]
                                    for name, s in subsets.items()})
        ax.set_ylabel("objects per image")
        ax.set_title("Class occurrence per set")
        return _save(fig, path)


def plot_size_distribution(report: dict, cls: str, path) -> Path:
    subsets = report["subsets"]
    sizes = list(next(iter(subsets.values()))["size_distribution"][cls])
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        _grouped_bars(ax, sizes, {name: [s["size_distribution"][cls][z] for z in sizes]
                                  for name, s in subsets.items()})
        ax.set_ylabel("objects per image")
        ax.set_title(f"Box size distribution: {cls}")
        return _save(fig, path)


def plot_day_night(report: dict, cls: str, path) -> Path:
    subsets = report["subsets"]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        names = list(subsets)
        day = [subsets[n]["day_ratio"][cls] for n in names]
        day = [np.nan if v is None else v for v in day]
        night = [np.nan if np.isnan(v) else 1.0 - v for v in day]
        ax.bar(names, day, label="day", color="#E8C547")
        ax.bar(names, night, bottom=day, label="night", color="#30323D")
        ax.set_ylim(0, 1)
        ax.set_ylabel("fraction of objects")
        ax.set_title(f"Day/night split: {cls}")
        ax.legend()
        return _save(fig, path)


def plot_split_report(report: dict, out_dir) -> list[Path]:
    """Class, per-class size and per-class day/night figures for a split."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = [plot_class_distribution(report, out_dir / "class_distribution.png")]
    classes = list(next(iter(report["subsets"].values()))["class_distribution"])
    for cls in classes:
        slug = cls.lower().replace(" ", "_")
        paths.append(plot_size_distribution(report, cls, out_dir / f"size_distribution_{slug}.png"))
        paths.append(plot_day_night(report, cls, out_dir / f"day_night_distribution_{slug}.png"))
    return paths


def plot_area_boxplots(records, class_names, path) -> Path:
    """Box plot of normalised box areas for each class."""
    data = [[r.area for r in records if r.class_id == i] for i in range(len(class_names))]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        keep = [(n, d) for n, d in zip(class_names, data) if d]
        if keep:
            ax.boxplot([d for _, d in keep])
            ax.set_xticks(range(1, len(keep) + 1))
            ax.set_xticklabels([n for n, _ in keep])
        ax.set_ylabel("normalised box area")
        ax.set_title("Bounding-box area per class")
        return _save(fig, path)


def plot_camera_counts(header, rows, path) -> Path:
    """Stacked day/night image counts per camera from a stats table."""
    cams = [r[0] for r in rows]
    day = [r[header.index("No. Day Images")] for r in rows]
    night = [r[header.index("No. Night Images")] for r in rows]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.bar(cams, day, label="day", color="#E8C547")
        ax.bar(cams, night, bottom=day, label="night", color="#30323D")
        ax.set_ylabel("labelled images")
        ax.legend()
        plt.setp(ax.get_xticklabels(), rotation=45, ha="right")
        return _save(fig, path)
