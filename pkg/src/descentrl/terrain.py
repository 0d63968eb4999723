"""Digital terrain maps and a fast plane-stack radar altimeter model.

The altimeter finds, for each beam, intersections of the beam ray with a
stack of horizontal planes spanning the map's elevation range, looks up the
terrain elevation at each intersection's (x, y), and keeps the intersection
whose plane height is closest to the terrain it indexed. This trades
low-altitude accuracy for speed; the error behaviour is characterized by
``characterize_error``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CONE_ANGLE = np.pi / 8.0  # beam offset from the central axis, rad
MISS_RANGE = 10_000.0     # sentinel reported for beams that leave the map, m
PLANE_SPACING = 10.0      # m of elevation between stacked planes


class ParseError(Exception):
    pass


class DimensionError(Exception):
    pass


class DegenerateDirection(Exception):
    """Central beam axis does not point downward."""


class OutOfMap(Exception):
    pass


def _plane_stack(elev: np.ndarray, spacing: float = PLANE_SPACING) -> np.ndarray:
    lo = float(elev.min())
    hi = float(elev.max())
    n = max(int(np.ceil((hi - lo) / spacing)) + 1, 1)
    return lo + spacing * np.arange(n)


@dataclass
class TerrainMap:
    """Row-major elevation grid; row index maps to y, column index to x."""

    elev: np.ndarray
    cell: float
    origin: np.ndarray = field(default_factory=lambda: np.zeros(2))  # (x0, y0) m
    planes: np.ndarray = None

    def __post_init__(self):
        self.elev = np.asarray(self.elev, dtype=float)
        if self.elev.ndim != 2:
            raise DimensionError("elevation grid must be 2-D")
        if self.cell <= 0:
            raise ValueError("cell size must be positive")
        self.origin = np.asarray(self.origin, dtype=float)
        if self.planes is None:
            self.planes = _plane_stack(self.elev)

    @property
    def rows(self) -> int:
        return self.elev.shape[0]

    @property
    def cols(self) -> int:
        return self.elev.shape[1]

    def extent(self):
        """(xmin, xmax, ymin, ymax) of the map footprint in meters."""
        x0, y0 = self.origin
        return x0, x0 + self.cols * self.cell, y0, y0 + self.rows * self.cell

    def elevation_at(self, x, y):
        """Nearest-cell elevation lookup; inputs may be arrays."""
        col = np.floor((np.asarray(x) - self.origin[0]) / self.cell).astype(int)
        row = np.floor((np.asarray(y) - self.origin[1]) / self.cell).astype(int)
        col = np.clip(col, 0, self.cols - 1)
        row = np.clip(row, 0, self.rows - 1)
        return self.elev[row, col]

    def contains(self, x, y):
        x0, x1, y0, y1 = self.extent()
        return (x >= x0) & (x < x1) & (y >= y0) & (y < y1)


@dataclass
class BeamSet:
    dirs: np.ndarray  # (4, 3) unit vectors

    def __post_init__(self):
        self.dirs = np.asarray(self.dirs, dtype=float)
        norms = np.linalg.norm(self.dirs, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-9):
            raise ValueError("beam directions must be unit vectors")
        if np.any(self.dirs[:, 2] >= 0):
            raise DegenerateDirection("all beams must point downward")


@dataclass
class AltimeterReading:
    ranges: np.ndarray  # (4,) m, sentinel where missed
    missed: np.ndarray  # (4,) bool


def load_dtm(path) -> TerrainMap:
    """Read the plain-text grid format: 'rows cols cellsize' then elevations."""
    with open(path) as f:
        tokens = f.read().split()
    if len(tokens) < 3:
        raise ParseError("grid file needs a 'rows cols cellsize' header")
    try:
        rows, cols = int(tokens[0]), int(tokens[1])
        cell = float(tokens[2])
        values = np.array([float(t) for t in tokens[3:]])
    except ValueError as e:
        raise ParseError(f"bad token in grid file: {e}") from None
    if values.size != rows * cols:
        raise DimensionError(
            f"expected {rows * cols} elevations, found {values.size}"
        )
    return TerrainMap(values.reshape(rows, cols), cell)


def save_dtm(path, terrain: TerrainMap) -> None:
    with open(path, "w") as f:
        f.write(f"{terrain.rows} {terrain.cols} {terrain.cell:.10g}\n")
        for row in terrain.elev:
            f.write(" ".join(f"{v:.10g}" for v in row) + "\n")


def _diamond_square(n: int, rng: np.random.Generator, roughness: float = 0.55) -> np.ndarray:
    size = 1
    while size + 1 < n:
        size *= 2
    size += 1  # 2^k + 1 grid, cropped to n afterwards
    g = np.zeros((size, size))
    g[0, 0], g[0, -1], g[-1, 0], g[-1, -1] = rng.normal(0, 1, 4)
    step = size - 1
    amp = 1.0
    while step > 1:
        half = step // 2
        # diamond: centers from 4 corners
        cr = np.arange(half, size, step)
        cc = np.arange(half, size, step)
        rr, cc2 = np.meshgrid(cr, cc, indexing="ij")
        avg = 0.25 * (
            g[rr - half, cc2 - half]
            + g[rr - half, cc2 + half]
            + g[rr + half, cc2 - half]
            + g[rr + half, cc2 + half]
        )
        g[rr, cc2] = avg + amp * rng.normal(0, 1, rr.shape)
        # square: edge midpoints from their (up to 4) diamond neighbours
        for parity in (0, 1):
            r_idx = np.arange(half * parity, size, step)
            c_idx = np.arange(half * (1 - parity), size, step)
            rr, cc2 = np.meshgrid(r_idx, c_idx, indexing="ij")
            total = np.zeros(rr.shape)
            count = np.zeros(rr.shape)
            for dr, dc in ((-half, 0), (half, 0), (0, -half), (0, half)):
                r2, c2 = rr + dr, cc2 + dc
                ok = (r2 >= 0) & (r2 < size) & (c2 >= 0) & (c2 < size)
                total[ok] += g[r2[ok], c2[ok]]
                count[ok] += 1
            g[rr, cc2] = total / count + amp * rng.normal(0, 1, rr.shape)
        step = half
        amp *= roughness
    return g[:n, :n]


def synthetic_dtm(
    seed: int,
    size: int = 1024,
    cell: float = 10.0,
    elev_range: tuple[float, float] = (0.0, 380.0),
) -> TerrainMap:
    """Fractal terrain rescaled to ``elev_range``; deterministic in ``seed``."""
    rng = np.random.default_rng(seed)
    g = _diamond_square(size, rng)
    lo, hi = elev_range
    g = lo + (hi - lo) * (g - g.min()) / (g.max() - g.min())
    return TerrainMap(g, cell)


def add_landing_hill(
    terrain: TerrainMap, x: float, y: float, peak: float = 350.0, radius: float = 400.0
) -> TerrainMap:
    """Blend a smooth hill of the given peak elevation into the map at (x, y).

    Gives a synthetic map a deterministic feature to hang the landing site on.
    """
    xs = terrain.origin[0] + terrain.cell * (np.arange(terrain.cols) + 0.5)
    ys = terrain.origin[1] + terrain.cell * (np.arange(terrain.rows) + 0.5)
    dx = xs[None, :] - x
    dy = ys[:, None] - y
    hill = peak * np.exp(-(dx**2 + dy**2) / (2 * radius**2))
    cap = max(float(terrain.elev.max()), peak)
    elev = np.clip(np.maximum(terrain.elev, hill), None, cap)
    return TerrainMap(elev, terrain.cell, terrain.origin.copy())


def generate_or_load_dtm(source) -> TerrainMap:
    """Build a map from either a file path (str) or an int synthetic seed."""
    if isinstance(source, (int, np.integer)):
        return synthetic_dtm(int(source))
    return load_dtm(source)


def mirror_map(terrain: TerrainMap) -> TerrainMap:
    """Double the row count by reflecting the grid about its last row edge."""
    elev = np.vstack([terrain.elev, terrain.elev[::-1]])
    return TerrainMap(elev, terrain.cell, terrain.origin.copy())


def beam_directions(
    position: np.ndarray,
    velocity: np.ndarray,
    mode: str = "velocity",
    target: np.ndarray | None = None,
) -> BeamSet:
    """Four beams on a cone of half-angle pi/8 about the central axis.

    mode 'velocity': axis halfway between the unit velocity and straight down.
    mode 'target':   axis locked on the target point.
    """
    if mode == "velocity":
        speed = np.linalg.norm(velocity)
        if speed <= 0:
            raise DegenerateDirection("velocity-averaged mode needs nonzero velocity")
        c = velocity / speed + np.array([0.0, 0.0, -1.0])
    elif mode == "target":
        if target is None:
            raise ValueError("target-pointing mode needs a target")
        c = np.asarray(target, dtype=float) - np.asarray(position, dtype=float)
    else:
        raise ValueError(f"unknown beam mode {mode!r}")
    n = np.linalg.norm(c)
    if n < 1e-12:
        raise DegenerateDirection("central axis undefined")
    c = c / n
    if c[2] >= 0:
        raise DegenerateDirection("central axis must point downward")

    u = np.cross(c, [0.0, 0.0, 1.0])
    un = np.linalg.norm(u)
    if un < 1e-9:
        u = np.array([1.0, 0.0, 0.0])
    else:
        u = u / un
    w = np.cross(c, u)
    ca, sa = np.cos(CONE_ANGLE), np.sin(CONE_ANGLE)
    azimuths = np.array([0.0, 0.5, 1.0, 1.5]) * np.pi
    dirs = ca * c[None, :] + sa * (
        np.cos(azimuths)[:, None] * u[None, :] + np.sin(azimuths)[:, None] * w[None, :]
    )
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return BeamSet(dirs)


def _stack_range(terrain: TerrainMap, position: np.ndarray, direction: np.ndarray) -> float:
    """Plane-stack range along one ray; inf when no intersection is usable."""
    dz = direction[2]
    if dz >= 0:
        return np.inf
    t = (terrain.planes - position[2]) / dz
    valid = t > 0
    if not np.any(valid):
        return np.inf
    t = t[valid]
    x = position[0] + t * direction[0]
    y = position[1] + t * direction[1]
    inside = terrain.contains(x, y)
    if not np.any(inside):
        return np.inf
    t, x, y = t[inside], x[inside], y[inside]
    plane_z = position[2] + t * dz
    ground = terrain.elevation_at(x, y)
    best = np.argmin(np.abs(plane_z - ground))
    return float(t[best])


def measure(terrain: TerrainMap, position: np.ndarray, beams: BeamSet) -> AltimeterReading:
    """Plane-stack ranges for all four beams from ``position``."""
    position = np.asarray(position, dtype=float)
    if not bool(terrain.contains(position[0], position[1])):
        return AltimeterReading(np.full(4, MISS_RANGE), np.ones(4, dtype=bool))
    ranges = np.array([_stack_range(terrain, position, d) for d in beams.dirs])
    missed = ~np.isfinite(ranges)
    ranges[missed] = MISS_RANGE
    return AltimeterReading(ranges, missed)


def ray_march_range(
    terrain: TerrainMap,
    position: np.ndarray,
    direction: np.ndarray,
    step_frac: float = 0.25,
    max_range: float = 50_000.0,
) -> float:
    """Ground-truth range by dense marching at sub-cell resolution.

    Marches until the ray drops below the (piecewise-constant) terrain
    surface, then bisects the bracketing interval. Returns inf if the ray
    leaves the map without hitting terrain. Slow; test/reference only.
    """
    step = terrain.cell * step_frac
    t = np.arange(0.0, max_range, step)
    x = position[0] + t * direction[0]
    y = position[1] + t * direction[1]
    z = position[2] + t * direction[2]
    inside = terrain.contains(x, y)
    if not np.any(inside) or not inside[0]:
        return np.inf
    # stop the scan where the ray first leaves the footprint
    first_out = int(np.argmin(inside)) if not inside.all() else len(t)
    x, y, z, t = x[:first_out], y[:first_out], z[:first_out], t[:first_out]
    below = z <= terrain.elevation_at(x, y)
    if not np.any(below):
        return np.inf
    hit = int(np.argmax(below))
    if hit == 0:
        return 0.0
    lo, hi = t[hit - 1], t[hit]
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        px = position[0] + mid * direction[0]
        py = position[1] + mid * direction[1]
        pz = position[2] + mid * direction[2]
        if pz <= terrain.elevation_at(px, py):
            hi = mid
        else:
            lo = mid
    return float(0.5 * (lo + hi))


@dataclass
class ErrorRow:
    elevation: float
    mean_abs: float
    std: float
    max_abs: float
    miss_pct: float
    samples: int


def characterize_error(
    terrain: TerrainMap,
    rng: np.random.Generator,
    elevations,
    samples: int = 2000,
) -> list[ErrorRow]:
    """Plane-stack error statistics against the ray-marching oracle.

    For each altitude: pick random terrain cells and random observer
    positions at that altitude, aim a ray from observer at the ground point,
    and compare the plane-stack range with the marched ground truth.
    """
    x0, x1, y0, y1 = terrain.extent()
    margin = 0.05
    xs_lo, xs_hi = x0 + margin * (x1 - x0), x1 - margin * (x1 - x0)
    ys_lo, ys_hi = y0 + margin * (y1 - y0), y1 - margin * (y1 - y0)
    rows = []
    for elevation in elevations:
        errors = []
        misses = 0
        n = 0
        while n < samples:
            gx = rng.uniform(xs_lo, xs_hi)
            gy = rng.uniform(ys_lo, ys_hi)
            gz = float(terrain.elevation_at(gx, gy))
            if gz >= elevation - 2.0 * terrain.cell:
                continue  # observer must sit above the aimed-at ground
            px = rng.uniform(xs_lo, xs_hi)
            py = rng.uniform(ys_lo, ys_hi)
            p = np.array([px, py, float(elevation)])
            d = np.array([gx, gy, gz]) - p
            d /= np.linalg.norm(d)
            n += 1
            measured = _stack_range(terrain, p, d)
            if not np.isfinite(measured):
                misses += 1
                continue
            truth = ray_march_range(terrain, p, d)
            if not np.isfinite(truth):
                misses += 1
                continue
            errors.append(measured - truth)
        errors = np.array(errors) if errors else np.zeros(1)
        rows.append(
            ErrorRow(
                elevation=float(elevation),
                mean_abs=float(np.mean(np.abs(errors))),
                std=float(np.std(errors)),
                max_abs=float(np.max(np.abs(errors))),
                miss_pct=100.0 * misses / samples,
                samples=samples,
            )
        )
    return rows
