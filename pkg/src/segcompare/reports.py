"""Self-contained HTML/SVG renderings of the three comparison views.

Every document embeds its thumbnails as base64 PNG and carries no external
references; rendering is a pure function of its inputs, so identical inputs
produce byte-identical files. Each view also gets a JSON sidecar mirroring
every number shown, for machine verification.
"""

from __future__ import annotations

import base64
import html as html_mod
from dataclasses import dataclass, field

import numpy as np

from .clustering import BinningSpec, ClusterStats, ConceptCluster
from .pngio import encode_png
from .segmentation import crop_segment


@dataclass(frozen=True)
class ReportStyle:
    quadrant_colors: dict = field(
        default_factory=lambda: {
            "TP": "#0000FF",
            "TN": "#FF0000",
            "FP": "#0AC7C7",
            "FN": "#FE04F9",
        }
    )
    model_colors: dict = field(
        default_factory=lambda: {"A": "#FF7F0D", "B": "#1F77B4"}
    )
    tile_px: int = 32
    hist_tile_truncation: int = 5


@dataclass
class ReportDocument:
    kind: str
    html: str
    sidecar: dict


def fmt(x: float) -> str:
    s = format(float(x), ".6g")
    return "0" if s == "-0" else s


def thumbnail_data_uri(image: np.ndarray, tile_px: int) -> str:
    """Nearest-neighbor upscale of a crop, quantized and PNG-encoded."""
    arr = np.asarray(image, dtype=np.float64)
    quant = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    rows = (np.arange(tile_px) * quant.shape[0] // tile_px).clip(0, quant.shape[0] - 1)
    cols = (np.arange(tile_px) * quant.shape[1] // tile_px).clip(0, quant.shape[1] - 1)
    resized = quant[rows][:, cols]
    return "data:image/png;base64," + base64.b64encode(encode_png(resized)).decode()


class ThumbnailProvider:
    """Caches one thumbnail per segment record, cropped from the original."""

    def __init__(self, load_image, tile_px: int):
        self.load_image = load_image
        self.tile_px = tile_px
        self._images: dict[str, np.ndarray] = {}
        self._thumbs: dict[tuple, str] = {}

    def __call__(self, record) -> str:
        key = record.seg.key()
        if key not in self._thumbs:
            image_id = record.seg.image_id
            if image_id not in self._images:
                self._images[image_id] = self.load_image(image_id)
            crop = crop_segment(self._images[image_id], record.seg)
            self._thumbs[key] = thumbnail_data_uri(crop, self.tile_px)
        return self._thumbs[key]


_CSS = """
body { font-family: sans-serif; margin: 16px; background: #fafafa; }
h1 { font-size: 1.3em; } h2 { font-size: 1.05em; margin: 18px 0 6px; }
section.cluster { background: #fff; border: 1px solid #ddd; padding: 8px 12px; margin-bottom: 14px; }
table.bins { border-collapse: collapse; }
table.bins td.bin { border-left: 1px solid #eee; vertical-align: bottom; min-width: 22px; padding: 1px; }
table.bins td.tick { font-size: 0.7em; color: #444; text-align: center; }
.tiles img { display: block; margin: 1px auto; }
.overflow { font-size: 0.7em; text-align: center; color: #333; }
.model-tag { font-weight: bold; margin-right: 6px; }
.row-label { font-size: 0.8em; color: #444; }
.thumb { display: inline-block; position: relative; margin: 2px; border-width: 2px; border-style: solid; }
.thumb .bar-track { position: absolute; left: 0; bottom: 0; width: 100%; height: 5px; background: rgba(255,255,255,0.55); }
.thumb .bar { position: absolute; bottom: 0; height: 5px; }
.legend span { margin-right: 10px; font-size: 0.8em; }
.plots svg { margin-right: 14px; background: #fff; border: 1px solid #eee; }
.empty-row { color: #888; font-size: 0.8em; }
table.confusion { border-collapse: collapse; margin-right: 24px; }
table.confusion td { border: 1px solid #bbb; vertical-align: top; padding: 4px; min-width: 160px; }
.quad-label { font-size: 0.8em; font-weight: bold; }
"""


def _document(title: str, body: str) -> str:
    return (
        "<!doctype html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n"
        f"<title>{html_mod.escape(title)}</title>\n<style>{_CSS}</style>\n"
        f"</head>\n<body>\n{body}\n</body>\n</html>\n"
    )


def _legend(style: ReportStyle, model_ids: list[str]) -> str:
    parts = ["<div class=\"legend\">"]
    for role, mid in zip(("A", "B"), model_ids):
        color = style.model_colors[role]
        parts.append(
            f"<span style=\"color:{color}\">model {html_mod.escape(mid)} ({role})</span>"
        )
    for quad in ("TP", "TN", "FP", "FN"):
        color = style.quadrant_colors[quad]
        parts.append(f"<span style=\"color:{color}\">{quad}</span>")
    parts.append("</div>")
    return "".join(parts)


def _role_color(style: ReportStyle, model_ids: list[str], mid: str) -> str:
    role = "A" if mid == model_ids[0] else "B"
    return style.model_colors[role]


def _target_score(record, target_class: str) -> float:
    return record.shapley.get(target_class, 0.0)


def _tile(record, thumb, style: ReportStyle) -> str:
    border = style.quadrant_colors[record.quadrant]
    seg = record.seg
    title = f"{seg.image_id} r{seg.row}c{seg.col} {record.quadrant}"
    return (
        f"<img src=\"{thumb(record)}\" width=\"{style.tile_px}\" "
        f"height=\"{style.tile_px}\" title=\"{html_mod.escape(title, quote=True)}\" "
        f"style=\"border:2px solid {border}\">"
    )


def _sorted_by_score(members, target_class):
    return sorted(
        members,
        key=lambda m: (
            -_target_score(m, target_class),
            m.seg.image_id,
            m.seg.row,
            m.seg.col,
        ),
    )


def render_histogram_view(
    ordered: list[tuple[ConceptCluster, ClusterStats]],
    binning: BinningSpec,
    style: ReportStyle,
    target_class: str,
    model_ids: list[str],
    thumb,
) -> ReportDocument:
    """Tile histograms per cluster: model A stacked above model B.

    Every cluster shares the same horizontal axis; bins show at most
    `hist_tile_truncation` thumbnails plus a "+n" overflow marker.
    """
    cap = style.hist_tile_truncation
    tick_lo, tick_mid, tick_hi = fmt(-binning.limit), "0", fmt(binning.limit)
    body = [f"<h1>Segment score histograms: {html_mod.escape(target_class)}</h1>"]
    body.append(_legend(style, model_ids))
    sidecar = {
        "kind": "cluster_histogram",
        "target_class": target_class,
        "binning": {
            "low": -binning.limit,
            "high": binning.limit,
            "bins": binning.bins,
        },
        "tile_cap": cap,
        "cluster_order": [cluster.cluster_id for cluster, _ in ordered],
        "clusters": [],
    }

    for cluster, stats in ordered:
        body.append(f"<section class=\"cluster\" id=\"cluster-{cluster.cluster_id}\">")
        body.append(f"<h2>Cluster {cluster.cluster_id}</h2>")
        side_rows = {}
        for mid in model_ids:
            color = _role_color(style, model_ids, mid)
            members = [m for m in cluster.members if m.source_model == mid]
            bins: list[list] = [[] for _ in range(binning.bins)]
            for member in _sorted_by_score(members, target_class):
                bins[binning.index(_target_score(member, target_class))].append(member)
            shown = [min(len(b), cap) for b in bins]
            overflow = [max(0, len(b) - cap) for b in bins]
            side_rows[mid] = {
                "bin_counts": [len(b) for b in bins],
                "shown": shown,
                "overflow": overflow,
            }
            body.append(f"<div class=\"hist-row\" data-model=\"{html_mod.escape(mid)}\">")
            body.append(
                f"<span class=\"model-tag\" style=\"color:{color}\">{html_mod.escape(mid)}</span>"
                f"<span class=\"row-label\">{sum(len(b) for b in bins)} segments</span>"
            )
            body.append("<table class=\"bins\"><tr>")
            for b in bins:
                cell = ["<td class=\"bin\"><div class=\"tiles\">"]
                for member in b[:cap]:
                    cell.append(_tile(member, thumb, style))
                if len(b) > cap:
                    cell.append(f"<div class=\"overflow\">+{len(b) - cap}</div>")
                cell.append("</div></td>")
                body.append("".join(cell))
            body.append("</tr><tr>")
            for i in range(binning.bins):
                label = ""
                if i == 0:
                    label = tick_lo
                elif i == binning.bins // 2:
                    label = tick_mid
                elif i == binning.bins - 1:
                    label = tick_hi
                body.append(f"<td class=\"tick\">{label}</td>")
            body.append("</tr></table></div>")
        sidecar["clusters"].append(
            {"cluster_id": cluster.cluster_id, "rows": side_rows}
        )
        body.append("</section>")
    return ReportDocument(
        kind="cluster_histogram",
        html=_document("Cluster histograms", "\n".join(body)),
        sidecar=sidecar,
    )


def _svg_composition(stats: ClusterStats, model_ids, style, max_total: int) -> str:
    width, height, pad = 120, 90, 12
    scale = (height - 2 * pad) / max(1, max_total)
    bars = [("total", stats.total, "#000000")]
    for mid in model_ids:
        bars.append((mid, stats.per_model_counts[mid], _role_color(style, model_ids, mid)))
    parts = [
        f"<svg class=\"composition\" width=\"{width}\" height=\"{height}\" "
        f"xmlns=\"http://www.w3.org/2000/svg\">"
    ]
    bar_w = 24
    for i, (label, count, color) in enumerate(bars):
        x = pad + i * (bar_w + 10)
        h = fmt(count * scale)
        y = fmt(height - pad - count * scale)
        parts.append(
            f"<rect x=\"{x}\" y=\"{y}\" width=\"{bar_w}\" height=\"{h}\" fill=\"{color}\"/>"
        )
        parts.append(
            f"<text x=\"{x + bar_w // 2}\" y=\"{height - 2}\" font-size=\"7\" "
            f"text-anchor=\"middle\">{html_mod.escape(str(label))}:{count}</text>"
        )
    parts.append("</svg>")
    return "".join(parts)


def _svg_full_histogram(stats: ClusterStats, binning, model_ids, style) -> str:
    width, height, pad = 240, 90, 12
    bins = binning.bins
    peak = max(
        [c for mid in model_ids for c in stats.histogram[mid]] + [1]
    )
    slot = (width - 2 * pad) / bins
    bar_w = fmt(slot / 2 - 0.5)
    parts = [
        f"<svg class=\"score-hist\" width=\"{width}\" height=\"{height}\" "
        f"xmlns=\"http://www.w3.org/2000/svg\">"
    ]
    for j, mid in enumerate(model_ids):
        color = _role_color(style, model_ids, mid)
        for i, count in enumerate(stats.histogram[mid]):
            if count == 0:
                continue
            h = (height - 2 * pad) * count / peak
            x = fmt(pad + i * slot + j * slot / 2)
            parts.append(
                f"<rect x=\"{x}\" y=\"{fmt(height - pad - h)}\" width=\"{bar_w}\" "
                f"height=\"{fmt(h)}\" fill=\"{color}\"/>"
            )
    mid_x = fmt(pad + (width - 2 * pad) / 2)
    parts.append(
        f"<line x1=\"{mid_x}\" y1=\"{pad}\" x2=\"{mid_x}\" y2=\"{height - pad}\" "
        f"stroke=\"#999\" stroke-dasharray=\"2,2\"/>"
    )
    parts.append(
        f"<text x=\"{pad}\" y=\"{height - 2}\" font-size=\"7\">{fmt(-binning.limit)}</text>"
    )
    parts.append(
        f"<text x=\"{width - pad}\" y=\"{height - 2}\" font-size=\"7\" "
        f"text-anchor=\"end\">{fmt(binning.limit)}</text>"
    )
    parts.append("</svg>")
    return "".join(parts)


def _svg_importance(stats: ClusterStats, model_ids, style) -> str:
    """Mean attribution per model with a black line at the global max mean."""
    width, height, pad = 170, 90, 12
    means = [stats.mean_attribution[mid] for mid in model_ids]
    scale_max = max([abs(v) for v in means] + [abs(stats.global_max_mean), 1e-12])
    zero_x = pad + (width - 2 * pad) / 2
    half = (width - 2 * pad) / 2

    def x_of(value: float) -> str:
        return fmt(zero_x + half * value / scale_max)

    parts = [
        f"<svg class=\"importance\" width=\"{width}\" height=\"{height}\" "
        f"xmlns=\"http://www.w3.org/2000/svg\">"
    ]
    bar_h = 14
    for i, mid in enumerate(model_ids):
        color = _role_color(style, model_ids, mid)
        value = stats.mean_attribution[mid]
        y = pad + 7 + i * (bar_h + 10)
        parts.append(
            f"<line class=\"mean-bar\" x1=\"{fmt(zero_x)}\" y1=\"{y}\" "
            f"x2=\"{x_of(value)}\" y2=\"{y}\" stroke=\"{color}\" "
            f"stroke-width=\"{bar_h}\"/>"
        )
        parts.append(
            f"<text x=\"2\" y=\"{y + bar_h}\" font-size=\"7\">{html_mod.escape(mid)}"
            f"={fmt(value)}</text>"
        )
    ref_x = x_of(stats.global_max_mean)
    parts.append(
        f"<line class=\"max-mean-ref\" x1=\"{ref_x}\" y1=\"{pad - 4}\" "
        f"x2=\"{ref_x}\" y2=\"{height - pad + 4}\" stroke=\"#000000\" stroke-width=\"2\"/>"
    )
    parts.append(
        f"<line x1=\"{fmt(zero_x)}\" y1=\"{pad - 4}\" x2=\"{fmt(zero_x)}\" "
        f"y2=\"{height - pad + 4}\" stroke=\"#ccc\"/>"
    )
    parts.append("</svg>")
    return "".join(parts)


def _thumb_with_bar(record, thumb, style, model_ids, binning, target_class) -> str:
    border = style.quadrant_colors[record.quadrant]
    color = _role_color(style, model_ids, record.source_model)
    score = _target_score(record, target_class)
    frac = min(1.0, abs(score) / binning.limit) if binning.limit > 0 else 0.0
    half_pct = 50.0 * frac
    if score >= 0:
        left, width_pct = "50", fmt(half_pct)
    else:
        left, width_pct = fmt(50.0 - half_pct), fmt(half_pct)
    seg = record.seg
    title = (
        f"{seg.image_id} r{seg.row}c{seg.col} {record.quadrant} "
        f"score={fmt(score)}"
    )
    return (
        f"<div class=\"thumb\" style=\"border-color:{border}\" "
        f"title=\"{html_mod.escape(title, quote=True)}\">"
        f"<img src=\"{thumb(record)}\" width=\"{style.tile_px}\" height=\"{style.tile_px}\">"
        f"<div class=\"bar-track\"></div>"
        f"<div class=\"bar\" style=\"background:{color};left:{left}%;width:{width_pct}%\"></div>"
        f"</div>"
    )


def render_concept_view(
    ordered: list[tuple[ConceptCluster, ClusterStats]],
    sorted_rows: dict[int, dict[str, list]],
    binning: BinningSpec,
    style: ReportStyle,
    target_class: str,
    model_ids: list[str],
    thumb,
) -> ReportDocument:
    """Thumbnail rows per model plus composition / score / importance plots."""
    body = [f"<h1>Concept clusters: {html_mod.escape(target_class)}</h1>"]
    body.append(_legend(style, model_ids))
    max_total = max([stats.total for _, stats in ordered] + [1])
    sidecar = {
        "kind": "concept_cluster",
        "target_class": target_class,
        "binning": {
            "low": -binning.limit,
            "high": binning.limit,
            "bins": binning.bins,
        },
        "cluster_order": [cluster.cluster_id for cluster, _ in ordered],
        "global_max_mean": ordered[0][1].global_max_mean if ordered else 0.0,
        "clusters": [],
    }
    for cluster, stats in ordered:
        body.append(f"<section class=\"cluster\" id=\"cluster-{cluster.cluster_id}\">")
        body.append(f"<h2>Cluster {cluster.cluster_id}</h2>")
        rows = sorted_rows[cluster.cluster_id]
        for mid in model_ids:
            color = _role_color(style, model_ids, mid)
            body.append(f"<div class=\"member-row\" data-model=\"{html_mod.escape(mid)}\">")
            body.append(
                f"<span class=\"model-tag\" style=\"color:{color}\">{html_mod.escape(mid)}</span>"
            )
            members = rows.get(mid, [])
            if members:
                for member in members:
                    body.append(
                        _thumb_with_bar(member, thumb, style, model_ids, binning, target_class)
                    )
            else:
                body.append("<span class=\"empty-row\">no segments</span>")
            body.append("</div>")
        body.append("<div class=\"plots\">")
        body.append(_svg_composition(stats, model_ids, style, max_total))
        body.append(_svg_full_histogram(stats, binning, model_ids, style))
        body.append(_svg_importance(stats, model_ids, style))
        body.append("</div>")
        body.append("</section>")
        sidecar["clusters"].append(
            {
                "cluster_id": cluster.cluster_id,
                "total": stats.total,
                "per_model_counts": stats.per_model_counts,
                "histogram": stats.histogram,
                "mean_attribution": stats.mean_attribution,
                "empty_models": stats.empty_models,
                "members": {
                    mid: [
                        {
                            "image_id": m.seg.image_id,
                            "row": m.seg.row,
                            "col": m.seg.col,
                            "quadrant": m.quadrant,
                            "score": _target_score(m, target_class),
                        }
                        for m in sorted_rows[cluster.cluster_id].get(mid, [])
                    ]
                    for mid in model_ids
                },
            }
        )
    return ReportDocument(
        kind="concept_cluster",
        html=_document("Concept clusters", "\n".join(body)),
        sidecar=sidecar,
    )


def render_confusion_view(
    cluster: ConceptCluster,
    style: ReportStyle,
    target_class: str,
    model_ids: list[str],
    thumb,
) -> ReportDocument:
    """One cluster exploded into two side-by-side confusion matrices."""
    layout = [("TP", "FP"), ("FN", "TN")]
    body = [
        f"<h1>Cluster {cluster.cluster_id} confusion matrices: "
        f"{html_mod.escape(target_class)}</h1>"
    ]
    body.append(_legend(style, model_ids))
    sidecar = {
        "kind": "confusion_matrix",
        "target_class": target_class,
        "cluster_id": cluster.cluster_id,
        "panels": {},
    }
    body.append("<div style=\"display:flex\">")
    for mid in model_ids:
        color = _role_color(style, model_ids, mid)
        members = [m for m in cluster.members if m.source_model == mid]
        by_quadrant = {
            q: _sorted_by_score(
                [m for m in members if m.quadrant == q], target_class
            )
            for q in ("TP", "TN", "FP", "FN")
        }
        sidecar["panels"][mid] = {
            q: [
                {
                    "image_id": m.seg.image_id,
                    "row": m.seg.row,
                    "col": m.seg.col,
                    "score": _target_score(m, target_class),
                }
                for m in by_quadrant[q]
            ]
            for q in ("TP", "TN", "FP", "FN")
        }
        body.append(f"<div class=\"panel\" data-model=\"{html_mod.escape(mid)}\">")
        body.append(
            f"<h2 style=\"color:{color}\">model {html_mod.escape(mid)} "
            f"({len(members)} segments)</h2>"
        )
        body.append("<table class=\"confusion\">")
        for row_quads in layout:
            body.append("<tr>")
            for quad in row_quads:
                qcolor = style.quadrant_colors[quad]
                body.append("<td>")
                body.append(
                    f"<div class=\"quad-label\" style=\"color:{qcolor}\">{quad} "
                    f"({len(by_quadrant[quad])})</div>"
                )
                for member in by_quadrant[quad]:
                    body.append(_tile(member, thumb, style))
                body.append("</td>")
            body.append("</tr>")
        body.append("</table></div>")
    body.append("</div>")
    return ReportDocument(
        kind="confusion_matrix",
        html=_document("Cluster confusion matrices", "\n".join(body)),
        sidecar=sidecar,
    )
