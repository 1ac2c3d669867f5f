"""ASCII geometry and image file formats.

* OBJ subset (v/f lines) for location meshes and coarse-mesh blocks.
* PLY (ascii 1.0, xyz + rgb) for point-cloud exports.
* PGM (P2) / PPM (P3) for simulator depth and color frame assets.

Writers use the canonical float formatter so identical data produces
byte-identical files on every platform.
"""

from __future__ import annotations

from pathlib import Path
from typing import Tuple

import numpy as np

from .canonical import fmt_float
from .geometry import TriangleMesh


def load_obj(path) -> TriangleMesh:
    """Parse the v/f subset of ASCII OBJ; polygons are fan-triangulated."""
    vertices = []
    triangles = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise ValueError(f"{path}:{lineno}: malformed vertex line")
                vertices.append([float(parts[1]), float(parts[2]), float(parts[3])])
            elif tag == "f":
                idx = []
                for tok in parts[1:]:
                    # tolerate v/vt/vn face syntax, keep the vertex index only
                    idx.append(int(tok.split("/")[0]))
                if len(idx) < 3:
                    raise ValueError(f"{path}:{lineno}: face with fewer than 3 vertices")
                idx = [i - 1 if i > 0 else len(vertices) + i for i in idx]
                for k in range(1, len(idx) - 1):
                    triangles.append([idx[0], idx[k], idx[k + 1]])
            # all other tags (vn, vt, o, g, usemtl...) are ignored
    return TriangleMesh(
        np.array(vertices, dtype=np.float64).reshape(-1, 3),
        np.array(triangles, dtype=np.int64).reshape(-1, 3),
    )


def save_obj(path, mesh: TriangleMesh) -> None:
    lines = []
    for v in mesh.vertices:
        lines.append(f"v {fmt_float(v[0])} {fmt_float(v[1])} {fmt_float(v[2])}")
    for t in mesh.triangles:
        lines.append(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def save_ply(path, points: np.ndarray, colors: np.ndarray) -> None:
    """ASCII PLY with x y z + red green blue per vertex."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    colors = np.asarray(colors, dtype=np.int64).reshape(-1, 3)
    if len(points) != len(colors):
        raise ValueError("point/color count mismatch")
    lines = [
        "ply",
        "format ascii 1.0",
        f"element vertex {len(points)}",
        "property float x",
        "property float y",
        "property float z",
        "property uchar red",
        "property uchar green",
        "property uchar blue",
        "end_header",
    ]
    for p, c in zip(points, colors):
        lines.append(
            f"{fmt_float(p[0])} {fmt_float(p[1])} {fmt_float(p[2])} {c[0]} {c[1]} {c[2]}"
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_ply(path) -> Tuple[np.ndarray, np.ndarray]:
    with open(path, "r", encoding="utf-8") as f:
        header = f.readline().strip()
        if header != "ply":
            raise ValueError(f"{path}: not a PLY file")
        n = 0
        while True:
            line = f.readline()
            if not line:
                raise ValueError(f"{path}: truncated header")
            line = line.strip()
            if line.startswith("element vertex"):
                n = int(line.split()[-1])
            if line == "end_header":
                break
        pts = np.zeros((n, 3), dtype=np.float64)
        cols = np.zeros((n, 3), dtype=np.int64)
        for i in range(n):
            parts = f.readline().split()
            pts[i] = [float(parts[0]), float(parts[1]), float(parts[2])]
            cols[i] = [int(parts[3]), int(parts[4]), int(parts[5])]
    return pts, cols


def save_pgm(path, values: np.ndarray, maxval: int = 65535) -> None:
    """P2 (ASCII) grayscale image; used for integer-scaled depth frames."""
    values = np.asarray(values, dtype=np.int64)
    h, w = values.shape
    if values.min() < 0 or values.max() > maxval:
        raise ValueError("pixel value out of range")
    rows = [" ".join(str(v) for v in row) for row in values]
    Path(path).write_text(f"P2\n{w} {h}\n{maxval}\n" + "\n".join(rows) + "\n", encoding="utf-8")


def load_pgm(path) -> Tuple[np.ndarray, int]:
    toks = _pnm_tokens(path, "P2")
    w, h, maxval = int(toks[0]), int(toks[1]), int(toks[2])
    data = np.array(toks[3 : 3 + w * h], dtype=np.int64).reshape(h, w)
    return data, maxval


def save_ppm(path, rgb: np.ndarray) -> None:
    """P3 (ASCII) color image, 8-bit channels."""
    rgb = np.asarray(rgb, dtype=np.int64)
    h, w, _ = rgb.shape
    rows = [" ".join(str(v) for v in row.reshape(-1)) for row in rgb]
    Path(path).write_text(f"P3\n{w} {h}\n255\n" + "\n".join(rows) + "\n", encoding="utf-8")


def load_ppm(path) -> np.ndarray:
    toks = _pnm_tokens(path, "P3")
    w, h, maxval = int(toks[0]), int(toks[1]), int(toks[2])
    if maxval != 255:
        raise ValueError(f"{path}: expected 8-bit PPM")
    return np.array(toks[3 : 3 + w * h * 3], dtype=np.int64).reshape(h, w, 3)


def _pnm_tokens(path, magic: str) -> list:
    text = Path(path).read_text(encoding="utf-8")
    toks = []
    for line in text.splitlines():
        body = line.split("#", 1)[0]
        toks.extend(body.split())
    if not toks or toks[0] != magic:
        raise ValueError(f"{path}: expected {magic} file")
    return toks[1:]
