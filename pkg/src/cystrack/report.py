"""Report generation: delimited tables, figures, overlay renders, manifest.

Output directory layout (fixed):

    manifest.json
    metrics.csv  population.csv  growth.csv  metrics.json
    plots/{areas,circularity,scatter,heatmap}.svg
    overlays/{overlay,masks,side_by_side}/frame_%04d.png
    overlays/{overlay,masks,side_by_side}.gif

Everything written here is deterministic: identical inputs give
byte-identical files (no timestamps anywhere, fixed SVG hash salt), so
whole reports can be compared by content hash.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.patches import Rectangle
from PIL import Image

from . import __version__
from .metrics import CystRecord, GrowthSummary, PopulationSeries

plt.rcParams["svg.hashsalt"] = "cystrack"

# One stable color per cyst id (cycled); chosen for contrast on grayscale.
PALETTE = [
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200),
    (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
    (210, 245, 60), (250, 190, 212), (0, 128, 128), (220, 190, 255),
]

OVERLAY_ALPHA = 0.45
PREVIEW_LONG_EDGE = 512
GIF_FRAME_MS = 500

TABLE_FILES = ("metrics.csv", "population.csv", "growth.csv", "metrics.json")
PLOT_FILES = (
    "plots/areas.svg", "plots/circularity.svg",
    "plots/scatter.svg", "plots/heatmap.svg",
)
OVERLAY_KINDS = ("overlay", "masks", "side_by_side")


class IoFailureError(Exception):
    """A report artifact could not be written; message carries the path."""


@dataclass
class ReportBundle:
    out_dir: Path
    quality: str
    manifest: dict
    population_summary: dict | None = None

    @property
    def artifacts(self) -> list[dict]:
        return self.manifest["artifacts"]


def cyst_color(cyst_id: int) -> tuple[int, int, int]:
    return PALETTE[cyst_id % len(PALETTE)]


def _fmt(value) -> str:
    """Full-precision cell formatting; absent values are empty."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as exc:
        raise IoFailureError(f"cannot write {path}: {exc}") from exc


def write_tables(
    records: list[CystRecord],
    series: PopulationSeries,
    summary: GrowthSummary | None,
    out_dir,
) -> list[Path]:
    """Write metrics.csv, population.csv, growth.csv and metrics.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    metrics_rows = []
    for r in records:
        for f in r.frames:
            metrics_rows.append([
                r.cyst_id, r.organoid_id, f.frame, _fmt(f.time_h), _fmt(f.present),
                _fmt(f.area_px), _fmt(f.area_um2), _fmt(f.perimeter_um),
                _fmt(f.circularity),
                _fmt(f.centroid[0] if f.centroid else None),
                _fmt(f.centroid[1] if f.centroid else None),
                _fmt(f.unreliable),
            ])
    _write_csv(
        out / "metrics.csv",
        ["cyst_id", "organoid_id", "frame", "time_h", "present", "area_px",
         "area_um2", "perimeter_um", "circularity", "centroid_x", "centroid_y",
         "unreliable"],
        metrics_rows,
    )

    _write_csv(
        out / "population.csv",
        ["time_h", "formation_rate_percent", "cyst_density"],
        [
            [_fmt(f.time_h), format(f.formation_rate_percent, ".6f"),
             format(f.cyst_density, ".6f")]
            for f in series.frames
        ],
    )

    growth_rows = []
    if summary is not None:
        growth_rows = [
            [row.cyst_id, _fmt(row.overall_growth_rate), row.phenotype, row.heatmap_row]
            for row in summary.rows
        ]
    _write_csv(
        out / "growth.csv",
        ["cyst_id", "overall_growth_rate", "phenotype", "heatmap_row"],
        growth_rows,
    )

    doc = {
        "records": [
            {
                "cyst_id": r.cyst_id,
                "organoid_id": r.organoid_id,
                "frames": [
                    {
                        "frame": f.frame,
                        "time_h": f.time_h,
                        "present": f.present,
                        "area_px": f.area_px,
                        "area_um2": f.area_um2,
                        "perimeter_um": f.perimeter_um,
                        "circularity": f.circularity,
                        "centroid": list(f.centroid) if f.centroid else None,
                        "unreliable": f.unreliable,
                    }
                    for f in r.frames
                ],
            }
            for r in records
        ],
        "population": {
            "n_total_organoids": series.n_total_organoids,
            "frames": [
                {
                    "frame": f.frame,
                    "time_h": f.time_h,
                    "n_organoids_with_cysts": f.n_organoids_with_cysts,
                    "n_total_cysts": f.n_total_cysts,
                    "formation_rate_percent": f.formation_rate_percent,
                    "cyst_density": f.cyst_density,
                }
                for f in series.frames
            ],
        },
        "growth": {
            "rows": [
                {
                    "cyst_id": row.cyst_id,
                    "overall_growth_rate": row.overall_growth_rate,
                    "phenotype": row.phenotype,
                    "heatmap_row": row.heatmap_row,
                }
                for row in (summary.rows if summary is not None else ())
            ],
        },
    }
    try:
        with open(out / "metrics.json", "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise IoFailureError(f"cannot write {out / 'metrics.json'}: {exc}") from exc

    return [out / name for name in TABLE_FILES]


def _save_svg(fig, path: Path) -> None:
    try:
        fig.savefig(path, format="svg", metadata={"Date": None})
    except OSError as exc:
        raise IoFailureError(f"cannot write {path}: {exc}") from exc
    finally:
        plt.close(fig)


def _no_data(ax, label: str) -> None:
    ax.text(0.5, 0.5, f"no data\n({label})", ha="center", va="center",
            transform=ax.transAxes, color="0.5")
    ax.set_xticks([])
    ax.set_yticks([])


def _mpl_color(cyst_id: int):
    return tuple(c / 255 for c in cyst_color(cyst_id))


def _trajectory(record: CystRecord, attr: str):
    times = [f.time_h for f in record.frames]
    values = [getattr(f, attr) if f.present else np.nan for f in record.frames]
    return np.array(times), np.array(values, dtype=float)


def _line_figure(records, attr, ylabel, title, ylim=None):
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    if not records:
        _no_data(ax, title)
        return fig
    stacked = []
    for r in records:
        t, v = _trajectory(r, attr)
        ax.plot(t, v, marker="o", markersize=3, linewidth=1.2,
                color=_mpl_color(r.cyst_id), label=f"cyst {r.cyst_id}")
        stacked.append(v)
    grid = np.vstack(stacked)
    # Frames where no cyst exists yet stay NaN and break the mean line.
    mean = np.full(grid.shape[1], np.nan)
    has_data = ~np.all(np.isnan(grid), axis=0)
    mean[has_data] = np.nanmean(grid[:, has_data], axis=0)
    t = [f.time_h for f in records[0].frames]
    ax.plot(t, mean, color="black", linewidth=2.6, linestyle="--", label="mean")
    ax.set_xlabel("time (h)")
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    if ylim:
        ax.set_ylim(*ylim)
    if len(records) <= 12:
        ax.legend(fontsize=7, ncol=2)
    fig.tight_layout()
    return fig


def render_plots(
    records: list[CystRecord],
    series: PopulationSeries,
    summary: GrowthSummary | None,
    out_dir,
    quality: str = "full",
) -> list[Path]:
    """Render the four analysis figures as SVG.

    Vector output regardless of quality (the quality switch only affects
    raster overlays). Absent frames break trajectory lines and leave
    heatmap cells hatched.
    """
    out = Path(out_dir)
    plots = out / "plots"
    plots.mkdir(parents=True, exist_ok=True)

    _save_svg(
        _line_figure(records, "area_um2", "area (µm²)", "Cyst area trajectories"),
        plots / "areas.svg",
    )
    _save_svg(
        _line_figure(
            records, "circularity", "circularity", "Cyst circularity evolution",
            ylim=(0.0, 1.05),
        ),
        plots / "circularity.svg",
    )
    _save_svg(_scatter_figure(records), plots / "scatter.svg")
    _save_svg(_heatmap_figure(records, summary), plots / "heatmap.svg")
    return [out / name for name in PLOT_FILES]


def _scatter_figure(records):
    from .metrics import correlation_table

    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    points = correlation_table(records)
    if not points:
        _no_data(ax, "circularity-area-time")
        return fig
    t, c, a, _ = zip(*points)
    sc = ax.scatter(t, c, c=a, cmap="viridis", s=28, edgecolors="none")
    fig.colorbar(sc, ax=ax, label="area (µm²)")
    ax.set_xlabel("time (h)")
    ax.set_ylabel("circularity")
    ax.set_ylim(0.0, 1.05)
    ax.set_title("Circularity vs time (area as color)")
    fig.tight_layout()
    return fig


def heatmap_grid(records, summary):
    """Area grid for the heatmap: one row per summary cyst, one column per
    frame, NaN where absent. Returns (grid, ordered_rows)."""
    by_id = {r.cyst_id: r for r in records}
    ordered = [row for row in summary.rows if row.cyst_id in by_id]
    n_frames = len(next(iter(by_id.values())).frames)
    grid = np.full((len(ordered), n_frames), np.nan)
    for i, row in enumerate(ordered):
        for f in by_id[row.cyst_id].frames:
            if f.present:
                grid[i, f.frame] = f.area_um2
    return grid, ordered


def _heatmap_figure(records, summary):
    fig = plt.figure(figsize=(7.6, 4.2))
    if summary is None or not summary.rows or not records:
        ax = fig.add_subplot(111)
        _no_data(ax, "growth heatmap")
        return fig

    grid, ordered = heatmap_grid(records, summary)
    n_frames = grid.shape[1]

    gs = fig.add_gridspec(1, 2, width_ratios=(3.2, 1.0), wspace=0.08)
    ax = fig.add_subplot(gs[0])
    axr = fig.add_subplot(gs[1], sharey=ax)

    cmap = plt.get_cmap("viridis").copy()
    cmap.set_bad("0.92")
    im = ax.imshow(grid, aspect="auto", cmap=cmap, interpolation="nearest")
    for i in range(grid.shape[0]):
        for j in range(n_frames):
            if np.isnan(grid[i, j]):
                ax.add_patch(
                    Rectangle((j - 0.5, i - 0.5), 1, 1, fill=False,
                              hatch="///", edgecolor="0.6", linewidth=0.0)
                )
    ax.set_xlabel("frame")
    ax.set_ylabel("cyst (sorted by growth rate)")
    ax.set_yticks(range(len(ordered)))
    ax.set_yticklabels([str(row.cyst_id) for row in ordered], fontsize=7)
    ax.set_title("Area heatmap")
    fig.colorbar(im, ax=ax, label="area (µm²)", fraction=0.05)

    rates = [row.overall_growth_rate for row in ordered]
    colors = ["#2166ac" if r >= 0 else "#b2182b" for r in rates]
    axr.barh(range(len(ordered)), rates, color=colors, height=0.7)
    axr.axvline(0.0, color="0.4", linewidth=0.8)
    axr.set_xlabel("growth rate (µm²/h)")
    axr.tick_params(labelleft=False)
    axr.set_title("Overall growth rate")
    return fig


def blend_overlay(frame_rgb: np.ndarray, mask: np.ndarray, color) -> np.ndarray:
    """Alpha-blend ``color`` over the masked pixels: round((1-a)*src + a*c)."""
    out = frame_rgb.copy()
    mixed = (1.0 - OVERLAY_ALPHA) * frame_rgb[mask].astype(np.float64)
    mixed += OVERLAY_ALPHA * np.asarray(color, dtype=np.float64)
    out[mask] = np.floor(mixed + 0.5).astype(np.uint8)
    return out


def _to_rgb(frame: np.ndarray) -> np.ndarray:
    if frame.dtype == np.uint16:
        frame = (frame // 257).astype(np.uint8)
    return np.repeat(frame[..., None], 3, axis=2)


def _downscale(img: np.ndarray, quality: str) -> np.ndarray:
    if quality != "preview":
        return img
    h, w = img.shape[:2]
    long_edge = max(h, w)
    if long_edge <= PREVIEW_LONG_EDGE:
        return img
    scale = PREVIEW_LONG_EDGE / long_edge
    size = (max(1, int(w * scale)), max(1, int(h * scale)))
    return np.asarray(Image.fromarray(img).resize(size, Image.NEAREST))


def render_overlays(frames, track, out_dir, quality: str = "full") -> dict:
    """Write the three per-frame image sequences plus animated GIFs.

    overlay: masks alpha-blended onto the source video; masks: colored
    masks on black; side_by_side: source next to overlay. Colors are
    stable per cyst id across all frames. ``preview`` quality downscales
    to PREVIEW_LONG_EDGE on the long edge.
    """
    out = Path(out_dir) / "overlays"
    sequences = {kind: [] for kind in OVERLAY_KINDS}
    for kind in OVERLAY_KINDS:
        (out / kind).mkdir(parents=True, exist_ok=True)

    order = sorted(track.tracks)
    for fidx, frame in enumerate(frames):
        src = _to_rgb(np.asarray(frame))
        overlay = src.copy()
        mask_img = np.zeros_like(src)
        for cyst_id in order:
            ct = track.tracks[cyst_id]
            if not ct.present[fidx]:
                continue
            mask = ct.masks[fidx]
            overlay = blend_overlay(overlay, mask, cyst_color(cyst_id))
            mask_img[mask] = cyst_color(cyst_id)
        composite = {
            "overlay": overlay,
            "masks": mask_img,
            "side_by_side": np.hstack([src, overlay]),
        }
        for kind in OVERLAY_KINDS:
            img = _downscale(composite[kind], quality)
            path = out / kind / f"frame_{fidx:04d}.png"
            try:
                Image.fromarray(img).save(path)
            except OSError as exc:
                raise IoFailureError(f"cannot write {path}: {exc}") from exc
            sequences[kind].append(path)

    gifs = {}
    for kind, paths in sequences.items():
        gif_path = out / f"{kind}.gif"
        images = [Image.open(p).convert("P", palette=Image.ADAPTIVE) for p in paths]
        try:
            images[0].save(
                gif_path, save_all=True, append_images=images[1:],
                duration=GIF_FRAME_MS, loop=0,
            )
        except OSError as exc:
            raise IoFailureError(f"cannot write {gif_path}: {exc}") from exc
        gifs[kind] = gif_path
    return {"sequences": sequences, "gifs": gifs}


def sha256_file(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def hash_inputs(frames, session_doc: dict, params: dict) -> dict:
    """Content hashes of everything that determines the report."""
    frame_digest = hashlib.sha256()
    for frame in frames:
        arr = np.ascontiguousarray(frame)
        frame_digest.update(str(arr.shape).encode())
        frame_digest.update(str(arr.dtype).encode())
        frame_digest.update(arr.tobytes())
    return {
        "frames": frame_digest.hexdigest(),
        "annotation": sha256_bytes(
            json.dumps(session_doc, sort_keys=True).encode("utf-8")
        ),
        "params": sha256_bytes(json.dumps(params, sort_keys=True).encode("utf-8")),
    }


def write_report(
    records,
    series,
    summary,
    frames,
    track,
    out_dir,
    quality: str = "full",
    inputs: dict | None = None,
    params: dict | None = None,
    warnings: list[str] | None = None,
) -> ReportBundle:
    """Produce the complete report directory and its manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    table_paths = write_tables(records, series, summary, out)
    plot_paths = render_plots(records, series, summary, out, quality)
    overlay_out = render_overlays(frames, track, out, quality)

    artifacts = []
    for path in [*table_paths, *plot_paths]:
        artifacts.append({
            "path": str(path.relative_to(out)),
            "kind": "file",
            "sha256": sha256_file(path),
        })
    for kind in OVERLAY_KINDS:
        gif = overlay_out["gifs"][kind]
        artifacts.append({
            "path": str(gif.relative_to(out)),
            "kind": "file",
            "sha256": sha256_file(gif),
        })
    for kind in OVERLAY_KINDS:
        files = overlay_out["sequences"][kind]
        artifacts.append({
            "path": f"overlays/{kind}",
            "kind": "sequence",
            "frame_count": len(files),
            "files": [
                {"path": str(p.relative_to(out)), "sha256": sha256_file(p)}
                for p in files
            ],
        })

    import PIL
    import skimage

    manifest = {
        "quality": quality,
        "inputs": inputs or {},
        "params": params or {},
        "versions": {
            "cystrack": __version__,
            "numpy": np.__version__,
            "matplotlib": matplotlib.__version__,
            "pillow": PIL.__version__,
            "scikit-image": skimage.__version__,
        },
        "warnings": list(warnings or []),
        "artifacts": artifacts,
    }
    try:
        with open(out / "manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise IoFailureError(f"cannot write {out / 'manifest.json'}: {exc}") from exc

    population_summary = None
    if series.frames:
        first, last = series.frames[0], series.frames[-1]
        population_summary = {
            "formation_rate_initial_percent": first.formation_rate_percent,
            "formation_rate_final_percent": last.formation_rate_percent,
            "cyst_density_initial": first.cyst_density,
            "cyst_density_final": last.cyst_density,
        }
    return ReportBundle(
        out_dir=out, quality=quality, manifest=manifest,
        population_summary=population_summary,
    )
