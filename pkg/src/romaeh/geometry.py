"""Structured unit-cell meshes, partition schemes and the mesh text format.

Coordinates are in mm. Elements are 4-node quadrilaterals ordered
counter-clockwise. Partition indices are 0-based in memory and 1-based in
the mesh file.
"""
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

FIBER = 0
MATRIX = 1
PHASE_NAMES = ("fiber", "matrix")

BUILTIN_SCHEMES = ("F1-M1", "F1-M2", "F1-M4", "F1-M8", "single")


class MeshError(ValueError):
    """Invalid geometry, resolution or partition assignment."""


@dataclass(frozen=True, eq=False)
class RveMesh:
    """Periodic unit-cell mesh.

    Attributes
    ----------
    nodes : ndarray (n_nodes, 2)
    elements : ndarray (n_elem, 4)
        Node indices, counter-clockwise.
    phase : ndarray (n_elem,)
        ``FIBER`` or ``MATRIX``.
    partition : ndarray (n_elem,) or None
        Partition index per element, ``None`` before assignment.
    periodic_pairs : ndarray (n_pairs, 2) int and offsets (n_pairs, 2)
        ``nodes[slave] = nodes[master] + offset``.
    cell_size : float
    scheme : str
    partition_names : tuple of str
    polygons : dict
        Optional custom-scheme polygons, partition -> (k, 2) vertex array.
    """

    nodes: np.ndarray
    elements: np.ndarray
    phase: np.ndarray
    periodic_pairs: np.ndarray
    periodic_offsets: np.ndarray
    cell_size: float
    partition: np.ndarray = None
    scheme: str = ""
    partition_names: tuple = ()
    polygons: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("nodes", "elements", "phase", "periodic_pairs", "periodic_offsets", "partition"):
            value = getattr(self, name)
            if isinstance(value, np.ndarray):
                value.setflags(write=False)

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_elements(self):
        return len(self.elements)

    @property
    def n_partitions(self):
        return 0 if self.partition is None else int(self.partition.max()) + 1

    def element_coords(self):
        """Corner coordinates, shape (n_elem, 4, 2)."""
        return self.nodes[self.elements]

    def element_centroids(self):
        return self.element_coords().mean(axis=1)

    def element_areas(self):
        xy = self.element_coords()
        x, y = xy[..., 0], xy[..., 1]
        return 0.5 * np.sum(x * np.roll(y, -1, axis=1) - np.roll(x, -1, axis=1) * y, axis=1)

    def elements_of(self, beta):
        return np.flatnonzero(self.partition == beta)

    def partition_phase(self):
        """Phase of each partition (partitions never mix phases)."""
        out = np.empty(self.n_partitions, dtype=int)
        for b in range(self.n_partitions):
            out[b] = self.phase[self.elements_of(b)[0]]
        return out


def _grid(nx, ny, lx, ly, x0=0.0, y0=0.0):
    xs = x0 + np.linspace(0.0, lx, nx + 1)
    ys = y0 + np.linspace(0.0, ly, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    nodes = np.column_stack([X.ravel(), Y.ravel()])
    j, i = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
    n0 = (j * (nx + 1) + i).ravel()
    elements = np.column_stack([n0, n0 + 1, n0 + nx + 2, n0 + nx + 1])
    return nodes, elements


def _periodic_pairs(n, cell_size):
    """Left->right and bottom->top node pairs of an (n+1)x(n+1) grid."""
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)  # [row j, col i]
    pairs = []
    offsets = []
    for j in range(n + 1):
        pairs.append((idx[j, 0], idx[j, n]))
        offsets.append((cell_size, 0.0))
    for i in range(n + 1):
        pairs.append((idx[0, i], idx[n, i]))
        offsets.append((0.0, cell_size))
    return np.array(pairs, dtype=np.int64), np.array(offsets, dtype=float)


def build_unit_cell(cell_size, fiber_diameter, elements_per_side):
    """Square cell with a centred circular fiber on a structured grid.

    Elements are assigned to the fiber when their centroid lies inside the
    circle, so the interface is a staircase. ``fiber_diameter == 0`` gives a
    homogeneous all-matrix cell.
    """
    n = int(elements_per_side)
    if cell_size <= 0:
        raise MeshError("cell_size must be positive")
    if fiber_diameter < 0 or fiber_diameter >= cell_size:
        raise MeshError(
            f"fiber_diameter must satisfy 0 <= d < cell_size (got d={fiber_diameter}, cell={cell_size})")
    if n < 8:
        raise MeshError(f"elements_per_side must be >= 8 (got {n})")
    h = cell_size / n
    if 0 < fiber_diameter < 4 * h:
        raise MeshError(
            f"resolution too coarse: {fiber_diameter / h:.2f} elements across the fiber, need >= 4")
    nodes, elements = _grid(n, n, cell_size, cell_size)
    centroids = nodes[elements].mean(axis=1)
    c = 0.5 * cell_size
    r = 0.5 * fiber_diameter
    inside = np.hypot(centroids[:, 0] - c, centroids[:, 1] - c) < r
    phase = np.where(inside, FIBER, MATRIX)
    pairs, offsets = _periodic_pairs(n, cell_size)
    return RveMesh(nodes, elements, phase, pairs, offsets, float(cell_size))


def build_laminate_cell(cell_size, elements_per_side, layer_fraction=0.5):
    """Two horizontal layers: ``FIBER`` phase below, ``MATRIX`` above."""
    n = int(elements_per_side)
    if n < 2:
        raise MeshError("elements_per_side must be >= 2")
    nodes, elements = _grid(n, n, cell_size, cell_size)
    cy = nodes[elements].mean(axis=1)[:, 1]
    phase = np.where(cy < layer_fraction * cell_size, FIBER, MATRIX)
    pairs, offsets = _periodic_pairs(n, cell_size)
    return RveMesh(nodes, elements, phase, pairs, offsets, float(cell_size))


def fiber_fraction(mesh):
    areas = mesh.element_areas()
    return areas[mesh.phase == FIBER].sum() / areas.sum()


def ring_tolerance(cell_size, fiber_diameter, elements_per_side):
    """Area fraction of one element ring around the fiber perimeter."""
    h = cell_size / elements_per_side
    return np.pi * fiber_diameter * h / cell_size ** 2


# ---------------------------------------------------------------------------
# partition schemes


@dataclass(frozen=True)
class PartitionScheme:
    """Either a built-in name or a custom polygon list.

    Custom polygons map a 0-based partition index to a vertex array; an
    element belongs to the first polygon containing its centroid.
    """

    name: str
    polygons: dict = field(default_factory=dict)
    strip_width: float = None

    @classmethod
    def builtin(cls, name, strip_width=None):
        if name not in BUILTIN_SCHEMES:
            raise MeshError(f"unknown scheme {name!r}; built-ins are {', '.join(BUILTIN_SCHEMES)}")
        return cls(name, strip_width=strip_width)


def _wedge(dx, dy):
    """Angular quadrant around the cell centre: 0=W, 1=S, 2=E, 3=N."""
    ax, ay = np.abs(dx), np.abs(dy)
    tol = 1e-9 * np.maximum(ax, ay)
    w = np.where(ax > ay, np.where(dx < 0, 0, 2), np.where(dy < 0, 1, 3))
    # diagonal ties go to the wedge that keeps the split invariant under
    # 90 degree rotation: (-,-) W, (+,-) S, (+,+) E, (-,+) N
    tie = np.abs(ax - ay) <= tol
    tie_w = np.where(dy < 0, np.where(dx < 0, 0, 1), np.where(dx > 0, 2, 3))
    return np.where(tie, tie_w, w)


def _builtin_assignment(mesh, scheme):
    L = mesh.cell_size
    cen = mesh.element_centroids()
    dx = cen[:, 0] - 0.5 * L
    dy = cen[:, 1] - 0.5 * L
    fiber = mesh.phase == FIBER
    name = scheme.name
    if name == "single":
        return np.zeros(mesh.n_elements, dtype=int), ("C1",)
    if not fiber.any() or fiber.all():
        raise MeshError(f"scheme {name} needs a two-phase cell")
    part = np.zeros(mesh.n_elements, dtype=int)
    if name == "F1-M1":
        part[~fiber] = 1
        return part, ("F1", "M1")
    if name == "F1-M2":
        part[~fiber] = np.where(dx[~fiber] < 0, 1, 2)
        return part, ("F1", "M2-left", "M2-right")
    sides = ("W", "S", "E", "N")
    wedge = _wedge(dx, dy)
    if name == "F1-M4":
        part[~fiber] = 1 + wedge[~fiber]
        return part, ("F1",) + tuple(f"M4-{s}" for s in sides)
    # F1-M8: the ligament grid along the cell faces (width w) and the core
    # matrix inside it. Ligament bands run the full cell length so a band-wide
    # eigenstrain is compatible; the corner crossings are kept apart because
    # they belong to both bands.
    w = scheme.strip_width
    if w is None:
        # ligament width: matrix columns between the fiber and the cell face
        fiber_xy = mesh.nodes[mesh.elements[fiber]].reshape(-1, 2)
        w = 0.5 * L - np.abs(fiber_xy - 0.5 * L).max()
        w = max(w, np.sqrt(mesh.element_areas().max()))
    in_x = 0.5 * L - np.abs(dx) < w
    in_y = 0.5 * L - np.abs(dy) < w
    quad = _quadrant(dx, dy)  # 0=BL, 1=BR, 2=TR, 3=TL
    m = ~fiber
    part[m & in_x & ~in_y] = 1
    part[m & in_y & ~in_x] = 2
    cross = m & in_x & in_y
    part[cross] = np.where(quad[cross] % 2 == 0, 3, 4)
    core = m & ~in_x & ~in_y
    part[core] = 5 + quad[core]
    if fiber[in_x | in_y].any():
        raise MeshError(f"ligament width {w} cuts into the fiber")
    names = ("F1", "M8a-X", "M8a-Y", "M8a-C1", "M8a-C2", "M8b-BL", "M8b-BR", "M8b-TR", "M8b-TL")
    return part, names


def _quadrant(dx, dy):
    """Quadrant by polar angle with half-open sectors, so a 90 degree
    rotation maps BL->BR->TR->TL exactly: 0=BL, 1=BR, 2=TR, 3=TL."""
    ang = np.arctan2(dy, dx)
    scale = np.maximum(np.abs(dx), np.abs(dy))
    # snap exact axis directions to the sector they close
    q = np.floor((ang + np.pi) / (0.5 * np.pi) - 1e-9).astype(int) % 4
    return np.where(scale > 0, q, 0)


def point_in_polygon(points, poly):
    """Even-odd ray casting; ``points`` (n, 2), ``poly`` (k, 2)."""
    x, y = points[:, 0], points[:, 1]
    inside = np.zeros(len(points), dtype=bool)
    px, py = poly[:, 0], poly[:, 1]
    k = len(poly)
    for i in range(k):
        x1, y1 = px[i], py[i]
        x2, y2 = px[(i + 1) % k], py[(i + 1) % k]
        crosses = (y1 > y) != (y2 > y)
        with np.errstate(divide="ignore", invalid="ignore"):
            xint = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
        inside ^= crosses & (x < xint)
    return inside


def assign_partitions(mesh, scheme):
    """Return a copy of ``mesh`` with ``partition`` populated."""
    if isinstance(scheme, str):
        scheme = PartitionScheme.builtin(scheme)
    if scheme.polygons:
        cen = mesh.element_centroids()
        part = np.full(mesh.n_elements, -1, dtype=int)
        for beta in sorted(scheme.polygons):
            hit = point_in_polygon(cen, np.asarray(scheme.polygons[beta], dtype=float))
            part[hit & (part < 0)] = beta
        if (part < 0).any():
            raise MeshError(f"{int((part < 0).sum())} elements not covered by any scheme polygon")
        names = tuple(f"P{b + 1}" for b in range(part.max() + 1))
        polygons = {b: np.asarray(p, dtype=float) for b, p in scheme.polygons.items()}
    else:
        part, names = _builtin_assignment(mesh, scheme)
        polygons = {}
    for b in range(part.max() + 1):
        members = part == b
        if not members.any():
            raise MeshError(f"partition {names[b]} is empty")
        if len(np.unique(mesh.phase[members])) > 1:
            raise MeshError(f"partition {names[b]} straddles the fiber/matrix interface")
    return replace(mesh, partition=part, scheme=scheme.name, partition_names=names, polygons=polygons)


def partition_volume_fractions(mesh):
    """Volume fraction ``c_beta`` of each partition, summing to one."""
    if mesh.partition is None:
        raise MeshError("partitions not assigned")
    areas = mesh.element_areas()
    vol = np.bincount(mesh.partition, weights=areas, minlength=mesh.n_partitions)
    if (vol <= 0).any():
        raise MeshError(f"empty partition(s): {np.flatnonzero(vol <= 0).tolist()}")
    return vol / areas.sum()


def parent_map(mesh_a, mesh_b):
    """Partition of ``mesh_a`` containing each partition of ``mesh_b``, or None if not nested."""
    parents = np.empty(mesh_b.n_partitions, dtype=int)
    for b in range(mesh_b.n_partitions):
        owners = np.unique(mesh_a.partition[mesh_b.partition == b])
        if len(owners) != 1:
            return None
        parents[b] = owners[0]
    return parents


def partition_footprint(mesh, beta):
    """Crack-band footprint quadrilateral of a partition (counter-clockwise).

    The axis-aligned bounding box of the partition's elements, measured on
    the periodic cell. A partition split across opposite faces is unwrapped
    first (its pieces are one region of the periodic medium). Along an axis
    where the box touches exactly one cell face, the partition's periodic
    twin lies across that face and softens with it, so the box is mirrored
    across the face to cover both.
    """
    if mesh.polygons and beta in mesh.polygons:
        pts = np.asarray(mesh.polygons[beta], dtype=float)
    else:
        pts = mesh.nodes[mesh.elements[mesh.elements_of(beta)]].reshape(-1, 2)
    L = mesh.cell_size
    tol = 1e-9 * L
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    for ax in range(2):
        at_lo = lo[ax] <= tol
        at_hi = hi[ax] >= L - tol
        if at_lo and at_hi:
            # unwrap points of the upper half across the face
            v = np.where(pts[:, ax] > 0.5 * L, pts[:, ax] - L, pts[:, ax])
            if np.ptp(v) < hi[ax] - lo[ax] - tol:
                lo[ax], hi[ax] = v.min(), v.max()
        elif at_lo:
            lo[ax] = -hi[ax]
        elif at_hi:
            hi[ax] = 2 * L - lo[ax]
    return np.array([[lo[0], lo[1]], [hi[0], lo[1]], [hi[0], hi[1]], [lo[0], hi[1]]])


# ---------------------------------------------------------------------------
# periodic pairing


def resolve_periodic(mesh):
    """Map every node to a representative node and its offset from it.

    Returns ``rep`` (n_nodes,) and ``offset`` (n_nodes, 2) such that
    ``nodes[i] = nodes[rep[i]] + offset[i]``. Raises when the pair chains
    carry conflicting offsets.
    """
    n = mesh.n_nodes
    adj = [[] for _ in range(n)]
    for (a, b), off in zip(mesh.periodic_pairs, mesh.periodic_offsets):
        adj[a].append((b, off))
        adj[b].append((a, -off))
    rep = np.full(n, -1, dtype=np.int64)
    offset = np.zeros((n, 2))
    tol = 1e-9 * mesh.cell_size
    for start in range(n):
        if rep[start] >= 0:
            continue
        rep[start] = start
        stack = [start]
        while stack:
            i = stack.pop()
            for j, off in adj[i]:
                o = offset[i] + off
                if rep[j] < 0:
                    rep[j] = start
                    offset[j] = o
                    stack.append(j)
                elif np.abs(offset[j] - o).max() > tol:
                    raise MeshError(f"inconsistent periodic offsets at node {j}")
    # representative = lowest-coordinate member so offsets are non-negative
    for r in np.unique(rep):
        members = np.flatnonzero(rep == r)
        k = members[np.lexsort((offset[members, 0], offset[members, 1]))[0]]
        base = offset[k].copy()
        rep[members] = k
        offset[members] -= base
    return rep, offset


def check_periodic_geometry(mesh):
    """Paired nodes must differ by exactly their offset vector."""
    a, b = mesh.periodic_pairs.T
    err = mesh.nodes[b] - mesh.nodes[a] - mesh.periodic_offsets
    return float(np.abs(err).max()) if len(err) else 0.0


# ---------------------------------------------------------------------------
# text format


def write_mesh(mesh, path):
    path = Path(path)
    lines = ["# romaeh unit-cell mesh, units mm", f"CELL {mesh.cell_size!r}", f"SCHEME {mesh.scheme or '-'}"]
    lines.append(f"NODES {mesh.n_nodes}")
    lines += [f"{i + 1} {x!r} {y!r}" for i, (x, y) in enumerate(mesh.nodes.tolist())]
    lines.append(f"ELEMENTS {mesh.n_elements}")
    lines += [f"{e + 1} " + " ".join(str(n + 1) for n in conn) for e, conn in enumerate(mesh.elements.tolist())]
    lines.append("PHASE")
    lines += [f"{e + 1} {PHASE_NAMES[p]}" for e, p in enumerate(mesh.phase.tolist())]
    if mesh.partition is not None:
        lines.append(f"PARTITION {mesh.n_partitions}")
        lines += [f"{e + 1} {b + 1}" for e, b in enumerate(mesh.partition.tolist())]
        lines.append("NAMES")
        lines += [f"{b + 1} {name}" for b, name in enumerate(mesh.partition_names)]
    lines.append(f"PERIODIC {len(mesh.periodic_pairs)}")
    for (a, b), (dx, dy) in zip(mesh.periodic_pairs.tolist(), mesh.periodic_offsets.tolist()):
        lines.append(f"{a + 1} {b + 1} {dx!r} {dy!r}")
    for beta, poly in sorted(mesh.polygons.items()):
        lines.append(f"POLYGON {beta + 1} {len(poly)}")
        lines += [f"{x!r} {y!r}" for x, y in np.asarray(poly).tolist()]
    path.write_text("\n".join(lines) + "\n")


def read_mesh(path):
    """Parse the text mesh format written by :func:`write_mesh`.

    A file with POLYGON sections and no PARTITION section is partitioned
    from its polygons.
    """
    rows = [ln.split() for ln in Path(path).read_text().splitlines()]
    rows = [r for r in rows if r and not r[0].startswith("#")]
    cell = None
    scheme = ""
    nodes = elements = phase = partition = None
    pairs, offsets, names, polygons = [], [], {}, {}
    i = 0

    def take(count):
        nonlocal i
        block = rows[i:i + count]
        i += count
        return block

    try:
        while i < len(rows):
            key = rows[i][0].upper()
            args = rows[i][1:]
            i += 1
            if key == "CELL":
                cell = float(args[0])
            elif key == "SCHEME":
                scheme = "" if args[0] == "-" else args[0]
            elif key == "NODES":
                block = take(int(args[0]))
                nodes = np.array([[float(r[1]), float(r[2])] for r in block])
            elif key == "ELEMENTS":
                block = take(int(args[0]))
                elements = np.array([[int(v) - 1 for v in r[1:5]] for r in block], dtype=np.int64)
            elif key == "PHASE":
                block = take(len(elements))
                phase = np.array([PHASE_NAMES.index(r[1].lower()) for r in block])
            elif key == "PARTITION":
                block = take(len(elements))
                partition = np.array([int(r[1]) - 1 for r in block])
            elif key == "NAMES":
                while i < len(rows) and rows[i][0].isdigit() and len(rows[i]) == 2 and not _is_float(rows[i][1]):
                    names[int(rows[i][0]) - 1] = rows[i][1]
                    i += 1
            elif key == "PERIODIC":
                for r in take(int(args[0])):
                    pairs.append((int(r[0]) - 1, int(r[1]) - 1))
                    offsets.append((float(r[2]), float(r[3])))
            elif key == "POLYGON":
                beta, k = int(args[0]) - 1, int(args[1])
                polygons[beta] = np.array([[float(r[0]), float(r[1])] for r in take(k)])
            else:
                raise MeshError(f"unknown section {key!r}")
    except (IndexError, ValueError) as exc:
        raise MeshError(f"malformed mesh file {path}: {exc}") from exc
    if nodes is None or elements is None or phase is None:
        raise MeshError("mesh file needs NODES, ELEMENTS and PHASE sections")
    if cell is None:
        cell = float(np.ptp(nodes[:, 0]))
    mesh = RveMesh(nodes, elements, phase, np.array(pairs, dtype=np.int64).reshape(-1, 2),
                   np.array(offsets, dtype=float).reshape(-1, 2), cell)
    if partition is not None:
        pnames = tuple(names.get(b, f"P{b + 1}") for b in range(partition.max() + 1))
        mesh = replace(mesh, partition=partition, scheme=scheme, partition_names=pnames, polygons=polygons)
    elif polygons:
        mesh = assign_partitions(mesh, PartitionScheme(scheme or "custom", polygons))
    return mesh


def _is_float(s):
    try:
        float(s)
    except ValueError:
        return False
    return True


def partition_diagnostics(mesh_a, mesh_b, materials, rtol=1e-6):
    """Flag whether scheme B refines scheme A's partition-average stresses.

    See :func:`romaeh.coefficients.partition_diagnostics`; kept here so the
    mesh-level API is complete.
    """
    from .coefficients import partition_diagnostics as _diag

    return _diag(mesh_a, mesh_b, materials, rtol)
