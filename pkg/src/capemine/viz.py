"""Static SVG 1.1 figures: padding, attention sampling points, predictions.

Every figure embeds its image as a PNG data URI and carries a JSON
``<metadata>`` block with the numbers it draws, so tests (and people) can
read them back without parsing geometry.  Output depends only on inputs.
"""

import base64
import json
import struct
import zlib
from xml.sax.saxutils import escape, unescape

import numpy as np

from .graph import edge_list

PANEL = 256
MARGIN = 8
HEAD_COLORS = ("#2ca02c", "#1f77b4", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf", "#bcbd22")


def png_bytes(image):
    """Encode an ``(H, W, 3)`` float image in [0, 1] as an 8-bit RGB PNG."""
    img = np.clip(np.round(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)
    h, w, _ = img.shape
    raw = b"".join(b"\x00" + img[r].tobytes() for r in range(h))

    def chunk(tag, data):
        body = tag + data
        return struct.pack(">I", len(data)) + body + struct.pack(">I", zlib.crc32(body) & 0xFFFFFFFF)

    header = struct.pack(">IIBBBBB", w, h, 8, 2, 0, 0, 0)
    return b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", header) + chunk(b"IDAT", zlib.compress(raw, 9)) + chunk(b"IEND", b"")


def _f(x):
    return f"{x:.3f}"


class _Canvas:
    def __init__(self, panels, title):
        self.width = panels * (PANEL + MARGIN) + MARGIN
        self.height = PANEL + 2 * MARGIN + 16
        self.parts = []
        self.title = title

    def xy(self, panel, p):
        x0 = MARGIN + panel * (PANEL + MARGIN)
        return x0 + float(p[0]) * PANEL, MARGIN + 16 + float(p[1]) * PANEL

    def image(self, panel, img, label):
        x, y = self.xy(panel, (0, 0))
        uri = base64.b64encode(png_bytes(img)).decode("ascii")
        self.parts.append(f'<image class="frame" x="{_f(x)}" y="{_f(y)}" width="{PANEL}" height="{PANEL}" '
                          f'preserveAspectRatio="none" xlink:href="data:image/png;base64,{uri}"/>')
        self.parts.append(f'<text class="label" x="{_f(x)}" y="{_f(y - 4)}" font-size="11">{escape(label)}</text>')

    def line(self, panel, a, b, cls, color, width=1.5, dash=None, opacity=1.0):
        (x1, y1), (x2, y2) = self.xy(panel, a), self.xy(panel, b)
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(f'<line class="{cls}" x1="{_f(x1)}" y1="{_f(y1)}" x2="{_f(x2)}" y2="{_f(y2)}" '
                          f'stroke="{color}" stroke-width="{width}" stroke-opacity="{_f(opacity)}"{extra}/>')

    def circle(self, panel, p, r, cls, fill, opacity=1.0, stroke="#000000", data=""):
        x, y = self.xy(panel, p)
        self.parts.append(f'<circle class="{cls}" cx="{_f(x)}" cy="{_f(y)}" r="{r}" fill="{fill}" '
                          f'fill-opacity="{opacity!r}" stroke="{stroke}" stroke-width="0.8"{data}/>')

    def cross(self, panel, p, size, cls, color):
        x, y = self.xy(panel, p)
        d = f"M {_f(x - size)} {_f(y - size)} L {_f(x + size)} {_f(y + size)} M {_f(x - size)} {_f(y + size)} L {_f(x + size)} {_f(y - size)}"
        self.parts.append(f'<path class="{cls}" d="{d}" stroke="{color}" stroke-width="2" fill="none"/>')

    def arrow(self, panel, a, b, cls, color):
        self.line(panel, a, b, cls, color, width=1.2)
        (x1, y1), (x2, y2) = self.xy(panel, a), self.xy(panel, b)
        ang = np.arctan2(y2 - y1, x2 - x1)
        pts = [(x2, y2)]
        for da in (2.6, -2.6):
            pts.append((x2 + 5 * np.cos(ang + da), y2 + 5 * np.sin(ang + da)))
        path = " ".join(f"{_f(px)},{_f(py)}" for px, py in pts)
        self.parts.append(f'<polygon class="{cls}-head" points="{path}" fill="{color}"/>')

    def render(self, metadata):
        meta = escape(json.dumps(metadata, sort_keys=True))
        head = ('<?xml version="1.0" encoding="UTF-8" standalone="no"?>\n'
                '<svg xmlns="http://www.w3.org/2000/svg" xmlns:xlink="http://www.w3.org/1999/xlink" '
                f'version="1.1" width="{self.width}" height="{self.height}" '
                f'viewBox="0 0 {self.width} {self.height}">\n'
                f'<title>{escape(self.title)}</title>\n<metadata id="capemine-data">{meta}</metadata>\n'
                f'<rect class="background" x="0" y="0" width="{self.width}" height="{self.height}" fill="#ffffff"/>\n')
        return head + "\n".join(self.parts) + "\n</svg>\n"


def _skeleton(canvas, panel, coords, links, cls, color, dash=None, width=1.5, opacity=1.0):
    for i, j in edge_list(links):
        canvas.line(panel, coords[i], coords[j], cls, color, width=width, dash=dash, opacity=opacity)


def padding_svg(image, raw, padded, raw_links, padded_links, title="keypoint padding"):
    """Padded skeleton over the raw one; raw keypoints red, padded ones blue.

    Every keypoint is drawn exactly once, so the figure carries ``K`` glyphs.
    """
    kc = raw.raw_count
    c = _Canvas(1, title)
    c.image(0, image, f"{kc} raw + {len(padded) - kc} padded keypoints")
    _skeleton(c, 0, raw.coords, raw_links, "link raw", "#ffffff", width=3.0, opacity=0.35)
    _skeleton(c, 0, padded.coords, padded_links, "link padded", "#ffffff", dash="3,2")
    for k in range(kc):
        c.circle(0, padded.coords[k], 4, "keypoint raw", "#d62728", data=f' data-k="{k}"')
    for k in range(kc, len(padded)):
        c.circle(0, padded.coords[k], 3, "keypoint padded", "#1f77b4", data=f' data-k="{k}"')
    meta = {"mode": "padding", "raw_count": int(kc), "K": int(len(padded)),
            "raw": raw.coords[:kc].tolist(), "padded": padded.coords.tolist(),
            "padded_weight": padded.weight.tolist()}
    return c.render(meta)


def attention_svg(support_image, query_image, attn, keypoint=0, layer=-1, title="attention sampling points"):
    """Reference crosses and sampling points of one keypoint's heads.

    ``attn`` is the ``ForwardTrace.attn`` list; the support and query miners
    of the chosen layer are drawn side by side.  Point opacity is the
    attention weight, which sums to 1 per head.
    """
    layers = sorted({l for _, l, _ in attn})
    lsel = layers[layer]
    picked = {side: info for side, l, info in attn if l == lsel}
    c = _Canvas(2, title)
    meta = {"mode": "attention", "layer": int(lsel), "keypoint": int(keypoint), "heads": {}}
    for panel, side, img in ((0, "support", support_image), (1, "query", query_image)):
        info = picked[side]
        c.image(panel, img, f"{side}, layer {lsel + 1}, keypoint {keypoint}")
        locs = info["locations"][keypoint]
        w = info["weights"][keypoint]
        heads = locs.shape[0]
        rows = []
        for m in range(heads):
            color = HEAD_COLORS[m % len(HEAD_COLORS)]
            pts = locs[m].reshape(-1, 2)
            for p, wt in zip(pts, w[m]):
                c.circle(panel, p, 3, f"sample-point head-{m}", color, opacity=float(wt), stroke="none")
            c.cross(panel, info["refs"][keypoint, m], 5, f"ref-cross head-{m}", "#d62728")
            rows.append({"reference": info["refs"][keypoint, m].tolist(), "points": pts.tolist(),
                         "weights": w[m].tolist()})
        meta["heads"][side] = rows
    return c.render(meta)


def prediction_svg(image, pred, gt, title="prediction vs ground truth"):
    """Estimated (blue) and ground-truth (red) keypoints, joined by deviation arrows."""
    kc = gt.raw_count
    c = _Canvas(1, title)
    c.image(0, image, f"{kc} keypoints")
    for k in range(kc):
        if gt.weight[k] > 0:
            c.arrow(0, gt.coords[k], pred[k], "deviation", "#ffbf00")
        c.circle(0, gt.coords[k], 4, "keypoint gt", "#d62728", data=f' data-k="{k}"')
        c.circle(0, pred[k], 3, "keypoint pred", "#1f77b4", data=f' data-k="{k}"')
    err = np.linalg.norm(np.asarray(pred)[:kc] - gt.coords[:kc], axis=-1)
    meta = {"mode": "prediction", "pred": np.asarray(pred)[:kc].tolist(), "gt": gt.coords[:kc].tolist(),
            "visible": gt.weight[:kc].tolist(), "error": err.tolist()}
    return c.render(meta)


def read_metadata(svg_text):
    start = svg_text.index('<metadata id="capemine-data">') + len('<metadata id="capemine-data">')
    end = svg_text.index("</metadata>", start)
    return json.loads(unescape(svg_text[start:end]))
