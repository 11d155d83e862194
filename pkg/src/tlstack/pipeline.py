"""End-to-end drivers used by the command line."""

from __future__ import annotations

import dataclasses
import functools
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from . import container, plotting
from .background import BackgroundModel, build_background
from .diffmask import (DEFAULT_RIDGE, DEFAULT_STRIDE, apply_color_correction, assemble_stack,
                       diff_mask, fit_color_matrix)
from .ingest import (DEFAULT_CHROMA_THRESHOLD, DEFAULT_WINDOW, ImageDecodeError, ModalityPolicy,
                     load_manifest, load_rgb)
from .split import (DEFAULT_MAX_EVAL_FRACTION, ClassSet, build_profiles, emit_split,
                    kmedoids_pam, labelled_frames, parse_annotations, search_partition)
from .stats import stats_rows, write_stats_csv

DEFAULT_CLASSES = ("Adult", "Chick", "Egg")


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    manifest: Path | None = None
    out_dir: Path = Path("out")
    window: int = DEFAULT_WINDOW
    policy: str = "chroma"
    chroma_threshold: float = DEFAULT_CHROMA_THRESHOLD
    stride: int = DEFAULT_STRIDE
    ridge: float = DEFAULT_RIDGE
    jobs: int | None = None
    debug_png: bool = False
    figures: bool = True
    # split
    labels: Path | None = None
    index: Path | None = None
    classes: tuple[str, ...] = DEFAULT_CLASSES
    clusters: int = 3
    sizes: tuple[int, int, int] | None = None
    forced: dict = field(default_factory=dict)
    max_eval_fraction: float = DEFAULT_MAX_EVAL_FRACTION
    term_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        for name in ("manifest", "labels", "index"):
            v = getattr(self, name)
            if v is not None and not isinstance(v, Path):
                setattr(self, name, Path(v))
        self.out_dir = Path(self.out_dir)
        self.classes = tuple(self.classes)
        self.term_weights = tuple(float(w) for w in self.term_weights)
        if self.sizes is not None:
            self.sizes = tuple(int(s) for s in self.sizes)
        self.validate()

    def validate(self):
        if not isinstance(self.window, int) or self.window < 1:
            raise ConfigError(f"window size must be >= 1, got {self.window!r}")
        if self.ridge < 0:
            raise ConfigError(f"ridge must be >= 0, got {self.ridge}")
        if not isinstance(self.stride, int) or self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride!r}")
        if not 0 < self.max_eval_fraction <= 1:
            raise ConfigError(f"max_eval_fraction must be in (0, 1], got {self.max_eval_fraction}")
        if self.jobs is not None and self.jobs < 1:
            raise ConfigError(f"jobs must be >= 1, got {self.jobs}")
        if self.policy not in ("chroma", "clock"):
            raise ConfigError(f"policy must be 'chroma' or 'clock', got {self.policy!r}")
        if len(self.term_weights) != 3:
            raise ConfigError("term_weights needs three values")

    @property
    def modality_policy(self) -> ModalityPolicy:
        return ModalityPolicy(kind=self.policy, chroma_threshold=self.chroma_threshold)

    @classmethod
    def from_sources(cls, command: str, file_values: dict | None = None, **overrides):
        """Merge a JSON config dict with CLI overrides (overrides win).

        A bare ``k`` key means the window size for ``stack`` and the number
        of size clusters for ``split``.
        """
        values = dict(file_values or {})
        if "k" in values:
            values.setdefault("clusters" if command == "split" else "window", values.pop("k"))
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        values.update({k: v for k, v in overrides.items() if v is not None})
        try:
            return cls(**values)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None


def load_config_file(path) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return data


# --- stack -----------------------------------------------------------------

def stack_path(out_dir: Path, frame) -> Path:
    return out_dir / "stacks" / frame.camera_id / f"{frame.path.stem}.tlf5"


def process_frame(manifest, frame, config: PipelineConfig, load=load_rgb):
    """Build one feature stack. Returns ``(stack, background, colour matrix)``
    or a ``Skipped`` marker when the window is incomplete."""
    bg = build_background(manifest, frame, config.window, load=load)
    if not isinstance(bg, BackgroundModel):
        return bg
    current = load(frame.path)
    if current.shape != bg.rgb.shape:
        raise ImageDecodeError(frame.path, f"size {current.shape[:2]} differs from its "
                                           f"background {bg.rgb.shape[:2]}")
    cm = fit_color_matrix(current, bg.rgb, config.stride, config.ridge)
    corrected = apply_color_correction(bg.rgb, cm)
    dm = diff_mask(current, corrected)
    provenance = {
        "frame": str(frame.path),
        "camera": frame.camera_id,
        "timestamp": frame.timestamp.isoformat(),
        "modality": frame.modality.value,
        "window": bg.window.describe(),
        "color_matrix": cm.m.tolist(),
        "color_fit": cm.diagnostics() | {"stride": config.stride},
        "planes": ["R", "G", "B", "T", "D"],
    }
    return assemble_stack(current, bg, dm, provenance), bg, cm


def run_stack(config: PipelineConfig) -> dict:
    """Write one TLF5 file per frame with a full prior window.

    Frames without a window land in ``skip_report.jsonl``; decode failures
    are reported there too and counted as ``failed``.
    """
    if config.manifest is None:
        raise ConfigError("stack needs a manifest")
    manifest = load_manifest(config.manifest, config.modality_policy)
    out_dir = config.out_dir
    out_dir.mkdir(parents=True, exist_ok=True)
    load = functools.lru_cache(maxsize=4 * config.window + 8)(load_rgb)

    def work(frame):
        try:
            result = process_frame(manifest, frame, config, load=load)
        except ImageDecodeError as exc:
            return frame, "failed", f"decode error: {exc}"
        if not isinstance(result, tuple):
            return frame, "skipped", result.reason
        stack, bg, _ = result
        path = stack_path(out_dir, frame)
        path.parent.mkdir(parents=True, exist_ok=True)
        container.write_stack(stack, path)
        if config.debug_png:
            dbg = out_dir / "debug" / frame.camera_id
            container.export_pngs(stack, dbg, frame.path.stem)
            container.save_plane_png(bg.grey, dbg / f"{frame.path.stem}_background_grey.png", 1 / 255)
        return frame, "written", str(path)

    frames = list(manifest)
    jobs = config.jobs or os.cpu_count() or 1
    if jobs == 1:
        results = [work(f) for f in frames]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(work, frames))

    counts = {"written": 0, "skipped": 0, "failed": 0}
    report = []
    for frame, status, detail in results:
        counts[status] += 1
        if status != "written":
            report.append({"path": str(frame.path), "reason": detail})
    report.sort(key=lambda r: r["path"])
    with open(out_dir / "skip_report.jsonl", "w", encoding="utf-8") as fh:
        for rec in report:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return counts | {"out_dir": str(out_dir)}


# --- split / stats ---------------------------------------------------------

def load_annotated(config: PipelineConfig):
    if config.manifest is None or config.labels is None:
        raise ConfigError("split/stats need a manifest and a label directory")
    classes = ClassSet(config.classes)
    manifest = load_manifest(config.manifest, config.modality_policy)
    frames = labelled_frames(config.labels, manifest, config.index)
    records = parse_annotations(config.labels, manifest, classes)
    return manifest, classes, frames, records


def run_split(config: PipelineConfig):
    """Partition cameras, write split manifests, report and figures.

    Returns ``(partition, report)``.
    """
    manifest, classes, frames, records = load_annotated(config)
    clusters = kmedoids_pam([r.area for r in records], config.clusters)
    profiles = build_profiles(records, frames, clusters, classes)
    sizes = config.sizes
    if sizes is None:
        raise ConfigError("split needs subset sizes")
    partition = search_partition(profiles, sizes, config.forced,
                                 config.max_eval_fraction, config.term_weights)
    report = emit_split(partition, manifest, config.out_dir, classes, clusters)
    if config.figures:
        plotting.plot_split_report(report, config.out_dir / "figures")
    return partition, report


def run_stats(config: PipelineConfig) -> dict:
    """Per-camera CSV table plus area and image-count figures."""
    manifest, classes, frames, records = load_annotated(config)
    clusters = kmedoids_pam([r.area for r in records], config.clusters)
    profiles = build_profiles(records, frames, clusters, classes)
    config.out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = write_stats_csv(profiles, classes, config.out_dir / "camera_stats.csv")
    out = {"csv": str(csv_path), "cameras": len(profiles), "images": len(frames),
           "objects": len(records), "size_medoids": list(clusters.medoids)}
    if config.figures:
        header, rows = stats_rows(profiles, classes)
        fig_dir = config.out_dir / "figures"
        fig_dir.mkdir(exist_ok=True)
        out["figures"] = [
            str(plotting.plot_area_boxplots(records, classes.names, fig_dir / "object_sizes.png")),
            str(plotting.plot_camera_counts(header, rows, fig_dir / "camera_images.png")),
        ]
    return out


# --- small utilities -------------------------------------------------------

def fitness(map_50: float, map_05_95: float) -> float:
    """Checkpoint selection score ``0.1 * mAP@0.5 + 0.9 * mAP@0.05:0.95``."""
    for name, v in (("mAP@0.5", map_50), ("mAP@0.05:0.95", map_05_95)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} must be in [0, 1], got {v}")
    return 0.1 * map_50 + 0.9 * map_05_95


def export_debug(stack_file, out_dir) -> list[Path]:
    stack = container.read_stack(stack_file)
    return container.export_pngs(stack, out_dir, Path(stack_file).stem)
