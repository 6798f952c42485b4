"""Result files: legacy VTK, CSV curves and a minimal SVG line plot.

All writers format numbers with fixed repr-style precision and write to a
temporary file that is renamed on success, so identical inputs give
byte-identical files and a failure leaves no partial file behind.
"""
import csv
import io
import os
import tempfile
from xml.sax.saxutils import escape

import numpy as np

VTK_QUAD = 9
VTK_QUADRATIC_QUAD = 23


def _fmt(x):
    return format(float(x), ".17g")


def atomic_write(path, text):
    """Write ``text`` to ``path`` through a temporary file in the same directory."""
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# ---------------------------------------------------------------------------
# VTK


def vtk_text(nodes, elements, cell_data=None, point_data=None, title="romaeh"):
    """Legacy ASCII VTK unstructured grid.

    Parameters
    ----------
    nodes : ndarray (n, 2)
    elements : ndarray (ne, 4) or (ne, 8)
        Q4 or Q8 connectivity; the Q8 node order matches VTK's quadratic quad.
    cell_data, point_data : dict, optional
        Name -> scalar array (ne,) / (n,) or vector array (.., 2 or 3).
    """
    nodes = np.asarray(nodes, dtype=float)
    elements = np.asarray(elements, dtype=np.int64)
    nen = elements.shape[1]
    if nen not in (4, 8):
        raise ValueError("elements must have 4 or 8 nodes")
    ctype = VTK_QUAD if nen == 4 else VTK_QUADRATIC_QUAD
    out = io.StringIO()
    w = out.write
    w("# vtk DataFile Version 3.0\n")
    w(title.replace("\n", " ")[:255] + "\n")
    w("ASCII\nDATASET UNSTRUCTURED_GRID\n")
    w(f"POINTS {len(nodes)} double\n")
    for x, y in nodes:
        w(f"{_fmt(x)} {_fmt(y)} 0\n")
    w(f"CELLS {len(elements)} {len(elements) * (nen + 1)}\n")
    for e in elements:
        w(f"{nen} " + " ".join(str(int(i)) for i in e) + "\n")
    w(f"CELL_TYPES {len(elements)}\n")
    w("".join(f"{ctype}\n" for _ in range(len(elements))))
    for kind, data, count in (("CELL_DATA", cell_data, len(elements)), ("POINT_DATA", point_data, len(nodes))):
        if not data:
            continue
        w(f"{kind} {count}\n")
        for name in sorted(data):
            arr = np.asarray(data[name], dtype=float)
            if arr.shape[0] != count:
                raise ValueError(f"{kind} field {name!r} has {arr.shape[0]} values, expected {count}")
            if " " in name:
                raise ValueError(f"field name {name!r} must not contain spaces")
            if arr.ndim == 1:
                w(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
                w("".join(_fmt(v) + "\n" for v in arr))
            else:
                if arr.shape[1] == 2:
                    arr = np.column_stack([arr, np.zeros(len(arr))])
                w(f"VECTORS {name} double\n")
                w("".join(" ".join(_fmt(v) for v in row) + "\n" for row in arr))
    return out.getvalue()


def write_vtk(path, nodes, elements, cell_data=None, point_data=None, title="romaeh"):
    atomic_write(path, vtk_text(nodes, elements, cell_data, point_data, title))


def read_vtk(path):
    """Read back a file written by :func:`write_vtk`.

    Returns
    -------
    nodes, elements, cell_data, point_data
    """
    with open(path, encoding="utf-8") as fh:
        tokens = fh.read().split("\n")
    it = iter(tokens[4:])
    line = next(it).split()
    n = int(line[1])
    nodes = np.array([[float(v) for v in next(it).split()[:2]] for _ in range(n)])
    ne = int(next(it).split()[1])
    elements = np.array([[int(v) for v in next(it).split()[1:]] for _ in range(ne)], dtype=np.int64)
    next(it)
    for _ in range(ne):
        next(it)
    cell_data, point_data = {}, {}
    target, count = None, 0
    for line in it:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "CELL_DATA":
            target, count = cell_data, int(parts[1])
        elif parts[0] == "POINT_DATA":
            target, count = point_data, int(parts[1])
        elif parts[0] == "SCALARS":
            next(it)
            target[parts[1]] = np.array([float(next(it)) for _ in range(count)])
        elif parts[0] == "VECTORS":
            target[parts[1]] = np.array([[float(v) for v in next(it).split()] for _ in range(count)])
    return nodes, elements, cell_data, point_data


# ---------------------------------------------------------------------------
# CSV


def csv_text(header, columns):
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    cols = [np.asarray(c) for c in columns]
    for row in zip(*cols):
        wr.writerow([_fmt(v) if np.issubdtype(type(v), np.floating) else str(v) for v in row])
    return buf.getvalue()


def write_csv(path, header, columns):
    atomic_write(path, csv_text(header, columns))


def read_csv(path):
    """Header and float columns of a numeric CSV file."""
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    data = np.array([[float(v) for v in r] for r in rows[1:]]).reshape(-1, len(header))
    return header, data


# ---------------------------------------------------------------------------
# SVG


def _ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / n
    mag = 10 ** np.floor(np.log10(raw))
    step = min((s * mag for s in (1, 2, 2.5, 5, 10) if s * mag >= raw), default=raw)
    start = np.ceil(lo / step - 1e-9) * step
    return [start + k * step for k in range(int(np.floor((hi - start) / step + 1e-9)) + 1)]


def svg_text(series, xlabel="", ylabel="", title="", width=640, height=420):
    """Line plot of ``series``: list of (label, x, y)."""
    colors = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf")
    left, right, top, bottom = 70, 20, 40, 55
    xs = np.concatenate([np.asarray(s[1], float) for s in series]) if series else np.zeros(1)
    ys = np.concatenate([np.asarray(s[2], float) for s in series]) if series else np.zeros(1)
    x0, x1 = min(0.0, xs.min()), xs.max()
    y0, y1 = min(0.0, ys.min()), ys.max()
    x1 = x1 if x1 > x0 else x0 + 1.0
    y1 = y1 if y1 > y0 else y0 + 1.0
    y1 += 0.05 * (y1 - y0)
    pw, ph = width - left - right, height - top - bottom

    def px(x):
        return left + (x - x0) / (x1 - x0) * pw

    def py(y):
        return top + ph - (y - y0) / (y1 - y0) * ph

    f = "{:.2f}".format
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
           f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>']
    for t in _ticks(x0, x1):
        out.append(f'<line x1="{f(px(t))}" y1="{top + ph}" x2="{f(px(t))}" y2="{top + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{f(px(t))}" y="{top + ph + 18}" text-anchor="middle">{t:.4g}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<line x1="{left - 5}" y1="{f(py(t))}" x2="{left}" y2="{f(py(t))}" stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{f(py(t) + 4)}" text-anchor="end">{t:.4g}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{top + ph / 2}" text-anchor="middle" '
               f'transform="rotate(-90 16 {top + ph / 2})">{escape(ylabel)}</text>')
    out.append(f'<text x="{left + pw / 2}" y="24" text-anchor="middle" font-size="14">{escape(title)}</text>')
    for i, (label, x, y) in enumerate(series):
        c = colors[i % len(colors)]
        pts = " ".join(f"{f(px(a))},{f(py(b))}" for a, b in zip(x, y))
        out.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{pts}"/>')
        ly = top + 16 + 16 * i
        out.append(f'<line x1="{left + pw - 150}" y1="{ly - 4}" x2="{left + pw - 125}" y2="{ly - 4}" '
                   f'stroke="{c}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw - 120}" y="{ly}">{escape(label)}</text>')
    out.append("</svg>\n")
    return "\n".join(out)


def write_svg(path, series, xlabel="", ylabel="", title=""):
    atomic_write(path, svg_text(series, xlabel, ylabel, title))
