"""Simulated environment: elevation grids, Dubins-car motion, noisy sensing.

Grid convention: ``values[i, j]`` is the cell whose centre sits at
``x1 = x1_min + (j + 0.5) * dx1`` and ``x2 = x2_min + (i + 0.5) * dx2``, so
row 0 is the southern edge. File formats are stored north row first.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from robust_ipp._validation import check_probability
from robust_ipp.exceptions import GridParseError

TWO_PI = 2.0 * math.pi
PAPER_STEERING = (-0.15, -0.075, 0.0, 0.075, 0.15)


@dataclass(frozen=True)
class GridGeometry:
    x1_min: float
    x1_max: float
    x2_min: float
    x2_max: float
    n_rows: int
    n_cols: int

    def __post_init__(self):
        if self.n_rows < 2 or self.n_cols < 2:
            raise ValueError("grid needs at least 2 rows and 2 columns")
        if not (self.x1_min < self.x1_max and self.x2_min < self.x2_max):
            raise ValueError("extent min must be below max on both axes")

    @property
    def extent(self):
        return (self.x1_min, self.x1_max, self.x2_min, self.x2_max)

    @property
    def shape(self):
        return (self.n_rows, self.n_cols)

    @property
    def dx1(self):
        return (self.x1_max - self.x1_min) / self.n_cols

    @property
    def dx2(self):
        return (self.x2_max - self.x2_min) / self.n_rows

    def contains(self, x1, x2):
        return self.x1_min <= x1 <= self.x1_max and self.x2_min <= x2 <= self.x2_max

    def cell_center(self, i, j):
        return (self.x1_min + (j + 0.5) * self.dx1, self.x2_min + (i + 0.5) * self.dx2)

    def world_to_cell(self, x1, x2):
        j = min(max(int(math.floor((x1 - self.x1_min) / self.dx1)), 0), self.n_cols - 1)
        i = min(max(int(math.floor((x2 - self.x2_min) / self.dx2)), 0), self.n_rows - 1)
        return i, j

    def cells_of(self, locations):
        """Vectorized :meth:`world_to_cell` for an (M, 2) array."""
        loc = np.asarray(locations, dtype=float).reshape(-1, 2)
        j = np.clip(np.floor((loc[:, 0] - self.x1_min) / self.dx1).astype(int), 0, self.n_cols - 1)
        i = np.clip(np.floor((loc[:, 1] - self.x2_min) / self.dx2).astype(int), 0, self.n_rows - 1)
        return i, j

    def cell_centers(self):
        """All cell centres as an (H*W, 2) array in row-major order."""
        x1 = self.x1_min + (np.arange(self.n_cols) + 0.5) * self.dx1
        x2 = self.x2_min + (np.arange(self.n_rows) + 0.5) * self.dx2
        g1, g2 = np.meshgrid(x1, x2)
        return np.column_stack([g1.ravel(), g2.ravel()])


@dataclass(frozen=True)
class ElevationGrid:
    values: np.ndarray
    geometry: GridGeometry

    @classmethod
    def from_array(cls, values, extent=None):
        values = np.asarray(values, dtype=float)
        h, w = values.shape
        if extent is None:
            extent = (0.0, float(w), 0.0, float(h))
        values.setflags(write=False)
        return cls(values, GridGeometry(*map(float, extent), h, w))

    @property
    def extent(self):
        return self.geometry.extent

    def interpolate(self, x1, x2):
        """Bilinear interpolation between cell centres, clamped at the border."""
        g = self.geometry
        fj = min(max((x1 - g.x1_min) / g.dx1 - 0.5, 0.0), g.n_cols - 1.0)
        fi = min(max((x2 - g.x2_min) / g.dx2 - 0.5, 0.0), g.n_rows - 1.0)
        j0 = min(int(fj), g.n_cols - 2)
        i0 = min(int(fi), g.n_rows - 2)
        tj = fj - j0
        ti = fi - i0
        v = self.values
        return float(
            (1 - ti) * ((1 - tj) * v[i0, j0] + tj * v[i0, j0 + 1])
            + ti * ((1 - tj) * v[i0 + 1, j0] + tj * v[i0 + 1, j0 + 1])
        )


@dataclass(frozen=True)
class RobotState:
    x1: float
    x2: float
    heading: float

    def __post_init__(self):
        object.__setattr__(self, "heading", float(self.heading) % TWO_PI)

    def as_tuple(self):
        return (self.x1, self.x2, self.heading)


@dataclass(frozen=True)
class MotionConfig:
    speed: float = 2.0
    dt: float = 1.0
    steering_set: tuple = PAPER_STEERING

    def __post_init__(self):
        steer = tuple(float(u) for u in self.steering_set)
        object.__setattr__(self, "steering_set", steer)
        if self.speed <= 0 or self.dt <= 0:
            raise ValueError("speed and dt must be positive")
        if len(steer) % 2 != 1 or list(steer) != sorted(steer):
            raise ValueError("steering_set must be sorted with an odd number of entries")
        if not np.allclose(steer, [-u for u in reversed(steer)], rtol=0, atol=1e-12) or 0.0 not in steer:
            raise ValueError("steering_set must be symmetric about 0 and contain 0")

    @classmethod
    def discretized(cls, max_steering=0.15, count=5, **kwargs):
        return cls(steering_set=tuple(np.linspace(-max_steering, max_steering, count)), **kwargs)

    @property
    def straight_index(self):
        return self.steering_set.index(0.0)


@dataclass(frozen=True)
class Sample:
    location: tuple
    value: float
    is_injected_outlier: bool = False


def _step(x1, x2, heading, steering, speed, dt):
    return (
        x1 + speed * math.cos(heading) * dt,
        x2 + speed * math.sin(heading) * dt,
        (heading + steering * dt) % TWO_PI,
    )


def dubins_step(state, steering, cfg):
    """One explicit-Euler step of the constant-speed Dubins car."""
    lim = max(abs(u) for u in cfg.steering_set)
    if abs(steering) > lim + 1e-12:
        raise ValueError(f"steering {steering} outside [-{lim}, {lim}]")
    return RobotState(*_step(state.x1, state.x2, state.heading, steering, cfg.speed, cfg.dt))


@dataclass(frozen=True)
class Workspace:
    """Geometry plus optional occupancy mask used for action feasibility."""

    geometry: GridGeometry
    occupancy: np.ndarray = field(default=None)

    def is_free(self, x1, x2):
        if not self.geometry.contains(x1, x2):
            return False
        if self.occupancy is None:
            return True
        i, j = self.geometry.world_to_cell(x1, x2)
        return not bool(self.occupancy[i, j])

    def feasible_actions(self, pose, motion):
        x1, x2, h = pose
        out = []
        for k, u in enumerate(motion.steering_set):
            nx1, nx2, _ = _step(x1, x2, h, u, motion.speed, motion.dt)
            if self.is_free(nx1, nx2):
                out.append(k)
        return out


def sense(grid, location, noise_std, rng):
    x1, x2 = map(float, location)
    if not grid.geometry.contains(x1, x2):
        raise ValueError(f"location ({x1}, {x2}) outside grid extent {grid.extent}")
    return grid.interpolate(x1, x2) + float(rng.normal(0.0, noise_std))


def injection_count(rho, m):
    return int(math.floor(rho * m + 0.5))


def inject_values(values, rho, rng):
    """Spike injection on a value array; returns ``(new_values, flags)``."""
    rho = check_probability(rho, "rho")
    values = np.asarray(values, dtype=float)
    m = len(values)
    out = values.copy()
    flags = np.zeros(m, dtype=bool)
    k = injection_count(rho, m)
    if k == 0:
        return out, flags
    q05, q95 = np.quantile(values, [0.05, 0.95])
    spread = q95 - q05
    idx = rng.choice(m, size=k, replace=False)
    amp = rng.uniform(1.0, 2.0, size=k)
    sign = rng.choice(np.array([-1.0, 1.0]), size=k)
    out[idx] += sign * amp * spread
    flags[idx] = True
    return out, flags


def inject_outliers(batch, rho, rng):
    if not batch:
        raise ValueError("batch must contain at least one sample")
    values, flags = inject_values([s.value for s in batch], rho, rng)
    return [
        replace(s, value=float(v), is_injected_outlier=s.is_injected_outlier or bool(f))
        for s, v, f in zip(batch, values, flags)
    ]


# Closed loop of four cubic segments in unit-square coordinates. The first
# three sweep the perimeter at a 10% inset; the last cuts through the interior.
_PILOT_SEGMENTS = (
    ((0.5, 0.1), (0.9, 0.1), (0.9, 0.1), (0.9, 0.5)),
    ((0.9, 0.5), (0.9, 0.9), (0.9, 0.9), (0.5, 0.9)),
    ((0.5, 0.9), (0.1, 0.9), (0.1, 0.9), (0.1, 0.5)),
    ((0.1, 0.5), (0.1, 0.1), (0.6, 0.6), (0.5, 0.1)),
)


def _bezier(ctrl, t):
    p0, p1, p2, p3 = (np.asarray(c, dtype=float) for c in ctrl)
    s = 1.0 - t
    return (s**3)[:, None] * p0 + (3 * s**2 * t)[:, None] * p1 + (3 * s * t**2)[:, None] * p2 + (t**3)[:, None] * p3


def bezier_pilot_path(extent, n_samples):
    """Sample ``n_samples`` points at uniform parameter spacing around the pilot loop."""
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    x1_min, x1_max, x2_min, x2_max = extent
    u = np.arange(n_samples) * (len(_PILOT_SEGMENTS) / n_samples)
    seg = np.minimum(u.astype(int), len(_PILOT_SEGMENTS) - 1)
    pts = np.empty((n_samples, 2))
    for s in range(len(_PILOT_SEGMENTS)):
        mask = seg == s
        if mask.any():
            pts[mask] = _bezier(_PILOT_SEGMENTS[s], u[mask] - s)
    pts[:, 0] = x1_min + pts[:, 0] * (x1_max - x1_min)
    pts[:, 1] = x2_min + pts[:, 1] * (x2_max - x2_min)
    return pts


def pilot_poses(extent, n_samples):
    """Pilot points with headings along the loop (chord to the next point)."""
    pts = bezier_pilot_path(extent, n_samples)
    nxt = np.roll(pts, -1, axis=0) - pts
    heading = np.mod(np.arctan2(nxt[:, 1], nxt[:, 0]), TWO_PI)
    return np.column_stack([pts, heading])


def save_path_csv(poses, path):
    """Write (x1, x2, heading) rows; an optional leading epoch column is kept."""
    poses = np.asarray(poses, dtype=float)
    cols = ["x1", "x2", "heading"] if poses.shape[1] == 3 else ["epoch", "x1", "x2", "heading"]
    with open(path, "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in poses:
            vals = [repr(float(v)) for v in row]
            if len(cols) == 4:
                vals[0] = str(int(row[0]))
            fh.write(",".join(vals) + "\n")


def outlier_occurrence_grid(flag_locations, geometry):
    counts = np.zeros(geometry.shape)
    loc = np.asarray(flag_locations, dtype=float).reshape(-1, 2)
    if len(loc):
        i, j = geometry.cells_of(loc)
        np.add.at(counts, (i, j), 1.0)
    return counts


def gaussian_smooth(grid, sigma_cells=3.0):
    """Normalized Gaussian blur, kernel truncated at 3 sigma, reflected borders."""
    if sigma_cells <= 0:
        raise ValueError("sigma_cells must be positive")
    return ndimage.gaussian_filter(np.asarray(grid, dtype=float), sigma_cells, mode="reflect", truncate=3.0)


def synth_terrain(seed, n_rows=50, n_cols=50, peak_count=6, extent=None):
    """Synthetic elevation map: planar trend, gentle hills and one cratered cone.

    The cone is the only region with steep, high-variance relief, the role the
    volcano plays in a real elevation raster.
    """
    if peak_count < 1:
        raise ValueError("peak_count must be >= 1")
    rng = np.random.default_rng(seed)
    u = (np.arange(n_cols) + 0.5) / n_cols
    v = (np.arange(n_rows) + 0.5) / n_rows
    U, V = np.meshgrid(u, v)
    z = 20.0 + 10.0 * (rng.uniform(-1, 1) * U + rng.uniform(-1, 1) * V)
    for _ in range(peak_count - 1):
        cu, cv = rng.uniform(0.1, 0.9, size=2)
        su, sv = rng.uniform(0.1, 0.25, size=2)
        z += rng.uniform(4.0, 12.0) * np.exp(-0.5 * (((U - cu) / su) ** 2 + ((V - cv) / sv) ** 2))
    cu, cv = rng.uniform(0.35, 0.65, size=2)
    r2 = (U - cu) ** 2 + (V - cv) ** 2
    z += 80.0 * np.exp(-0.5 * r2 / 0.09**2)
    z -= 45.0 * np.exp(-0.5 * r2 / 0.035**2)
    if extent is None:
        extent = (0.0, float(n_cols), 0.0, float(n_rows))
    return ElevationGrid.from_array(z, extent)


def _fill_nodata(values, mask):
    if mask.all():
        raise GridParseError("grid contains only NODATA cells")
    if not mask.any():
        return values
    idx = ndimage.distance_transform_edt(mask, return_distances=False, return_indices=True)
    return values[tuple(idx)]


_ESRI_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "xllcenter", "yllcenter", "cellsize", "nodata_value")


def _parse_rows(lines, start_line, ncols, sep=None):
    rows = []
    for offset, line in enumerate(lines):
        if not line.strip():
            continue
        parts = line.split(sep) if sep else line.split()
        if len(parts) != ncols:
            raise GridParseError(f"expected {ncols} values, found {len(parts)}", start_line + offset)
        try:
            rows.append([float(p) for p in parts])
        except ValueError:
            raise GridParseError("non-numeric value", start_line + offset) from None
    return rows


def _load_esri(lines):
    header = {}
    n = 0
    for n, line in enumerate(lines):
        parts = line.split()
        if not parts:
            continue
        key = parts[0].lower()
        if key not in _ESRI_KEYS:
            break
        if len(parts) != 2:
            raise GridParseError(f"malformed header entry {line.strip()!r}", n + 1)
        try:
            header[key] = float(parts[1])
        except ValueError:
            raise GridParseError(f"non-numeric header value for {key}", n + 1) from None
    else:
        n = len(lines)
    for req in ("ncols", "nrows", "cellsize"):
        if req not in header:
            raise GridParseError(f"missing header key {req}", n + 1)
    ncols, nrows, cs = int(header["ncols"]), int(header["nrows"]), header["cellsize"]
    if "xllcorner" in header:
        x0 = header["xllcorner"]
    elif "xllcenter" in header:
        x0 = header["xllcenter"] - cs / 2
    else:
        raise GridParseError("missing xllcorner/xllcenter", n + 1)
    if "yllcorner" in header:
        y0 = header["yllcorner"]
    elif "yllcenter" in header:
        y0 = header["yllcenter"] - cs / 2
    else:
        raise GridParseError("missing yllcorner/yllcenter", n + 1)
    rows = _parse_rows(lines[n:], n + 1, ncols)
    if len(rows) != nrows:
        raise GridParseError(f"expected {nrows} data rows, found {len(rows)}", len(lines))
    extent = (x0, x0 + ncols * cs, y0, y0 + nrows * cs)
    return np.array(rows)[::-1], extent, header.get("nodata_value")


_CSV_HEADER = ("x1_min", "x1_max", "x2_min", "x2_max", "nodata")


def _load_csv(lines):
    names = [p.strip().lower() for p in lines[0].split(",")]
    if tuple(names) != _CSV_HEADER:
        raise GridParseError(f"CSV grid header must be {','.join(_CSV_HEADER)}", 1)
    try:
        meta = [p.strip() for p in lines[1].split(",")]
        extent = tuple(float(p) for p in meta[:4])
        nodata = float(meta[4]) if len(meta) > 4 and meta[4] else None
    except (ValueError, IndexError):
        raise GridParseError("malformed extent row", 2) from None
    body = [ln for ln in lines[2:]]
    first = next((ln for ln in body if ln.strip()), None)
    if first is None:
        raise GridParseError("no data rows", 3)
    ncols = len(first.split(","))
    rows = _parse_rows(body, 3, ncols, sep=",")
    return np.array(rows)[::-1], extent, nodata


def load_grid(path):
    """Read an ESRI ASCII grid or a headered CSV grid; NODATA is nearest-filled."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise GridParseError("empty file", 1)
    if lines[0].split(",")[0].strip().lower() == "x1_min":
        values, extent, nodata = _load_csv(lines)
    else:
        values, extent, nodata = _load_esri(lines)
    mask = ~np.isfinite(values)
    if nodata is not None:
        mask |= values == nodata
    values = _fill_nodata(values, mask)
    try:
        return ElevationGrid.from_array(values, extent)
    except ValueError as exc:
        raise GridParseError(str(exc)) from None


def save_grid(grid, path, fmt="esri"):
    g = grid.geometry
    rows = grid.values[::-1]
    with open(path, "w") as fh:
        if fmt == "esri":
            if not math.isclose(g.dx1, g.dx2, rel_tol=1e-12):
                raise ValueError("ESRI ASCII grids need square cells")
            fh.write(f"ncols {g.n_cols}\nnrows {g.n_rows}\n")
            fh.write(f"xllcorner {g.x1_min!r}\nyllcorner {g.x2_min!r}\ncellsize {g.dx1!r}\n")
            fh.write("NODATA_value -9999\n")
            for row in rows:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")
        elif fmt == "csv":
            fh.write(",".join(_CSV_HEADER) + "\n")
            fh.write(",".join(repr(float(v)) for v in g.extent) + ",\n")
            for row in rows:
                fh.write(",".join(repr(float(v)) for v in row) + "\n")
        else:
            raise ValueError(f"unknown grid format {fmt!r}")
