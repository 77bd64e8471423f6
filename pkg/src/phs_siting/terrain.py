"""Elevation grids and the terrain analysis feeding the siting model.

The grid convention is row-major with row 0 at the top (north) edge, matching
the ESRI ASCII layout. All distances are meters in the horizontal plane of the
grid; elevations are meters above the same datum as the lower water body.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
from scipy import ndimage

from .errors import GridFormatError, InfeasibleProblemError

Adjacency = Literal["four", "eight"]
DistanceMetric = Literal["horizontal", "slant"]

#: Row/column offsets of the 4-neighborhood used by the reservoir shape rules.
FOUR_NEIGHBORS = ((-1, 0), (1, 0), (0, -1), (0, 1))
#: 8-neighborhood used by the perimeter tour constraints.
EIGHT_NEIGHBORS = FOUR_NEIGHBORS + ((-1, -1), (-1, 1), (1, -1), (1, 1))

_CROSS = np.array([[0, 1, 0], [1, 1, 1], [0, 1, 0]], dtype=bool)
_MIN_SIDE = 3


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr)
    arr.setflags(write=False)
    return arr


def cells_to_mask(cells, shape: tuple[int, int]) -> np.ndarray:
    """Normalize a cell collection (mask array or iterable of (i, j)) to a bool mask."""
    if cells is None:
        return np.zeros(shape, dtype=bool)
    arr = np.asarray(cells)
    if arr.dtype == bool and arr.shape == shape:
        return arr.copy()
    mask = np.zeros(shape, dtype=bool)
    for i, j in arr.reshape(-1, 2):
        mask[int(i), int(j)] = True
    return mask


@dataclass(frozen=True)
class TerrainGrid:
    """A square-celled elevation raster with its lower-reservoir mask.

    Attributes:
        elevations: 2-D float array, NaN on NODATA cells.
        cell_length: side length of one cell in meters.
        lower_mask: True where the cell belongs to the existing lower body.
        nodata: True where the DEM has no data.
        lower_elevation: water level of the lower body, meters.
        xllcorner/yllcorner: lower-left corner, used only for file output.
    """

    elevations: np.ndarray
    cell_length: float
    lower_mask: np.ndarray
    nodata: np.ndarray
    lower_elevation: float
    xllcorner: float = 0.0
    yllcorner: float = 0.0

    def __post_init__(self):
        elev = np.asarray(self.elevations, dtype=float)
        if elev.ndim != 2:
            raise ValueError(f"elevations must be 2-D, got {elev.ndim}-D")
        if min(elev.shape) < _MIN_SIDE:
            raise ValueError(f"grid side must be >= {_MIN_SIDE}, got {elev.shape}")
        if not self.cell_length > 0:
            raise ValueError(f"cell_length must be positive, got {self.cell_length}")
        lower = np.asarray(self.lower_mask, dtype=bool)
        nodata = np.asarray(self.nodata, dtype=bool)
        if lower.shape != elev.shape or nodata.shape != elev.shape:
            raise ValueError("lower_mask/nodata shape does not match elevations")
        if np.any(lower & nodata):
            raise ValueError("lower_mask overlaps NODATA cells")
        if not np.all(np.isfinite(elev[~nodata])):
            raise ValueError("non-NODATA elevations must be finite")
        if not math.isfinite(self.lower_elevation):
            raise ValueError("lower_elevation must be finite")
        object.__setattr__(self, "elevations", _readonly(elev))
        object.__setattr__(self, "lower_mask", _readonly(lower))
        object.__setattr__(self, "nodata", _readonly(nodata))

    @property
    def shape(self) -> tuple[int, int]:
        return self.elevations.shape

    @property
    def nrows(self) -> int:
        return self.elevations.shape[0]

    @property
    def ncols(self) -> int:
        return self.elevations.shape[1]

    @property
    def cell_area(self) -> float:
        """Horizontal area of one cell, m^2."""
        return self.cell_length**2

    def valid_cell_count(self) -> int:
        return int(np.count_nonzero(~self.nodata))


@dataclass(frozen=True)
class ByElevation:
    """Lower body defined by cells at a given water level (within a tolerance)."""

    level: float
    tolerance: float = 0.5


@dataclass(frozen=True)
class MaskFile:
    """Lower body defined by an external 0/1 raster in ESRI ASCII layout."""

    path: str | Path


LowerSpec = ByElevation | MaskFile


@dataclass(frozen=True)
class CandidateSets:
    """Cell eligibility for the three reservoir roles.

    interior_ok: cells allowed to hold water (below the target water level).
    perimeter_ok: cells allowed to carry embankment; each has at least one
        4-neighbor in interior_ok.
    reservoir_ok: union of the two.
    """

    interior_ok: np.ndarray
    perimeter_ok: np.ndarray
    reservoir_ok: np.ndarray
    excluded: np.ndarray

    def __post_init__(self):
        for name in ("interior_ok", "perimeter_ok", "reservoir_ok", "excluded"):
            object.__setattr__(self, name, _readonly(np.asarray(getattr(self, name), dtype=bool)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.interior_ok.shape

    def interior_cells(self) -> list[tuple[int, int]]:
        return [(int(i), int(j)) for i, j in np.argwhere(self.interior_ok)]

    def perimeter_cells(self) -> list[tuple[int, int]]:
        return [(int(i), int(j)) for i, j in np.argwhere(self.perimeter_ok)]

    def reservoir_cells(self) -> list[tuple[int, int]]:
        return [(int(i), int(j)) for i, j in np.argwhere(self.reservoir_ok)]


@dataclass(frozen=True)
class DistanceField:
    """Per-cell distance (m) to the nearest lower-body cell center."""

    values: np.ndarray
    cell_length: float
    metric: DistanceMetric = "horizontal"

    def __post_init__(self):
        object.__setattr__(self, "values", _readonly(np.asarray(self.values, dtype=float)))


# ---------------------------------------------------------------------------
# File loading
# ---------------------------------------------------------------------------

_ESRI_KEYS = {"ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value"}


def _parse_float(token: str, context: str) -> float:
    try:
        return float(token)
    except ValueError:
        raise GridFormatError(f"non-numeric value {token!r} in {context}") from None


def _parse_esri_ascii(text: str, context: str):
    """Parse ESRI ASCII grid text into (values, header dict).

    One data line per raster row; wrapped data lines are rejected so that
    inconsistent row lengths are detectable.
    """
    header: dict[str, float] = {}
    lines = [ln for ln in text.splitlines() if ln.strip()]
    idx = 0
    while idx < len(lines):
        parts = lines[idx].split()
        if not parts[0][0].isalpha():
            break
        key = parts[0].lower()
        if key not in _ESRI_KEYS:
            raise GridFormatError(f"unknown header key {parts[0]!r} in {context}")
        if len(parts) != 2:
            raise GridFormatError(f"malformed header line {lines[idx]!r} in {context}")
        header[key] = _parse_float(parts[1], context)
        idx += 1
    for required in ("ncols", "nrows", "cellsize"):
        if required not in header:
            raise GridFormatError(f"missing header key {required!r} in {context}")
    ncols, nrows = int(header["ncols"]), int(header["nrows"])
    if ncols != header["ncols"] or nrows != header["nrows"]:
        raise GridFormatError(f"non-integer ncols/nrows in {context}")
    data_lines = lines[idx:]
    if len(data_lines) != nrows:
        raise GridFormatError(f"expected {nrows} data rows, found {len(data_lines)} in {context}")
    rows = []
    for ln in data_lines:
        tokens = ln.split()
        if len(tokens) != ncols:
            raise GridFormatError(
                f"inconsistent row length: expected {ncols} values, got {len(tokens)} in {context}"
            )
        rows.append([_parse_float(tok, context) for tok in tokens])
    return np.array(rows, dtype=float), header


def _parse_csv_grid(text: str, context: str) -> np.ndarray:
    rows = []
    width = None
    for ln in text.splitlines():
        if not ln.strip():
            continue
        tokens = [t.strip() for t in ln.split(",")]
        if width is None:
            width = len(tokens)
        elif len(tokens) != width:
            raise GridFormatError(
                f"inconsistent row length: expected {width} values, got {len(tokens)} in {context}"
            )
        rows.append([_parse_float(tok, context) for tok in tokens])
    if not rows:
        raise GridFormatError(f"empty grid in {context}")
    return np.array(rows, dtype=float)


def _parse_keyvalue(text: str, context: str) -> dict[str, float]:
    out: dict[str, float] = {}
    for ln in text.splitlines():
        ln = ln.strip()
        if not ln or ln.startswith("#"):
            continue
        if "=" not in ln:
            raise GridFormatError(f"expected key=value, got {ln!r} in {context}")
        key, _, value = ln.partition("=")
        out[key.strip().lower()] = _parse_float(value.strip(), context)
    return out


def _pad_square(values: np.ndarray, nodata: np.ndarray):
    side = max(values.shape)
    padded = np.full((side, side), np.nan)
    padded_nd = np.ones((side, side), dtype=bool)
    padded[: values.shape[0], : values.shape[1]] = values
    padded_nd[: values.shape[0], : values.shape[1]] = nodata
    return padded, padded_nd


def load_grid(
    path: str | Path,
    fmt: Literal["esri_ascii", "csv"] = "esri_ascii",
    lower: LowerSpec | None = None,
    *,
    pad_nonsquare: bool = False,
    lower_elevation: float | None = None,
) -> TerrainGrid:
    """Load a DEM file and mark its lower water body.

    Args:
        path: grid file. CSV grids need a sidecar ``<path>.meta`` with at least
            ``cell_length=<m>`` (``nodata_value``, ``xllcorner``, ``yllcorner``
            optional).
        fmt: "esri_ascii" or "csv".
        lower: how to identify lower-body cells; required.
        pad_nonsquare: pad a non-square file with NODATA instead of rejecting it.
        lower_elevation: explicit water level of the lower body. Required
            semantics: for ByElevation the level itself is used; for MaskFile
            the median elevation over mask cells is used unless given here.
    """
    path = Path(path)
    if lower is None:
        raise ValueError("a lower-body specification is required")
    try:
        text = path.read_text()
    except OSError as exc:
        raise GridFormatError(f"cannot read {path}: {exc}") from exc

    xll = yll = 0.0
    nodata_value = None
    if fmt == "esri_ascii":
        values, header = _parse_esri_ascii(text, str(path))
        cell_length = header["cellsize"]
        nodata_value = header.get("nodata_value")
        xll = header.get("xllcorner", 0.0)
        yll = header.get("yllcorner", 0.0)
    elif fmt == "csv":
        values = _parse_csv_grid(text, str(path))
        meta_path = Path(str(path) + ".meta")
        try:
            meta = _parse_keyvalue(meta_path.read_text(), str(meta_path))
        except OSError as exc:
            raise GridFormatError(f"missing sidecar metadata {meta_path}: {exc}") from exc
        if "cell_length" not in meta:
            raise GridFormatError(f"sidecar {meta_path} lacks cell_length")
        cell_length = meta["cell_length"]
        nodata_value = meta.get("nodata_value")
        if lower_elevation is None and "lower_elevation" in meta:
            lower_elevation = meta["lower_elevation"]
        xll = meta.get("xllcorner", 0.0)
        yll = meta.get("yllcorner", 0.0)
    else:
        raise ValueError(f"unknown grid format {fmt!r}")

    nodata = np.zeros(values.shape, dtype=bool) if nodata_value is None else values == nodata_value
    values = np.where(nodata, np.nan, values)

    if values.shape[0] != values.shape[1]:
        if not pad_nonsquare:
            raise GridFormatError(
                f"{path}: grid is {values.shape[0]}x{values.shape[1]}; "
                "square input required (set pad_nonsquare to pad with NODATA)"
            )
        values, nodata = _pad_square(values, nodata)

    if isinstance(lower, ByElevation):
        with np.errstate(invalid="ignore"):
            lower_mask = np.abs(values - lower.level) <= lower.tolerance
        lower_mask &= ~nodata
        level = lower.level if lower_elevation is None else lower_elevation
    elif isinstance(lower, MaskFile):
        mask_values, _ = _parse_esri_ascii(Path(lower.path).read_text(), str(lower.path))
        if mask_values.shape != values.shape:
            raise GridFormatError(
                f"lower mask shape {mask_values.shape} does not match DEM {values.shape}"
            )
        lower_mask = mask_values != 0
        if np.any(lower_mask & nodata):
            raise GridFormatError("lower mask covers NODATA cells")
        if lower_elevation is not None:
            level = lower_elevation
        elif np.any(lower_mask):
            level = float(statistics.median(values[lower_mask].tolist()))
        else:
            level = math.nan
    else:
        raise ValueError(f"unsupported lower spec {lower!r}")

    if not np.any(lower_mask):
        raise InfeasibleProblemError(
            "lower-body mask is empty; the siting model requires an existing lower reservoir"
        )
    return TerrainGrid(values, cell_length, lower_mask, nodata, level, xll, yll)


def write_esri_ascii(
    path: str | Path,
    values: np.ndarray,
    cell_length: float,
    *,
    nodata: np.ndarray | None = None,
    nodata_value: float = -9999,
    xllcorner: float = 0.0,
    yllcorner: float = 0.0,
    value_format: str = "{:.6g}",
) -> None:
    """Write a raster in the same ESRI ASCII layout accepted by load_grid."""
    values = np.asarray(values, dtype=float)
    out = values.copy()
    if nodata is not None:
        out[np.asarray(nodata, dtype=bool)] = nodata_value
    out[~np.isfinite(out)] = nodata_value
    lines = [
        f"ncols {out.shape[1]}",
        f"nrows {out.shape[0]}",
        f"xllcorner {xllcorner:.6f}",
        f"yllcorner {yllcorner:.6f}",
        f"cellsize {cell_length:.6f}",
        f"NODATA_value {nodata_value:g}",
    ]
    for row in out:
        lines.append(" ".join(value_format.format(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Grid transformations
# ---------------------------------------------------------------------------


def aggregate(grid: TerrainGrid, factor: int) -> TerrainGrid:
    """Coarsen the grid by merging factor x factor blocks into super-cells.

    Super-cell elevation is the mean over non-NODATA children; the lower-body
    flag needs a strict majority of valid children; a super-cell is NODATA only
    when every child is. Edges are padded with NODATA when factor does not
    divide the grid side.
    """
    if int(factor) != factor or factor < 1:
        raise ValueError(f"aggregation factor must be a positive integer, got {factor}")
    factor = int(factor)
    if factor == 1:
        return grid
    nr, nc = grid.shape
    nr2, nc2 = -(-nr // factor), -(-nc // factor)
    if min(nr2, nc2) < _MIN_SIDE:
        raise ValueError(f"factor {factor} collapses the grid below {_MIN_SIDE} cells per side")

    pad_r, pad_c = nr2 * factor - nr, nc2 * factor - nc
    elev = np.pad(grid.elevations, ((0, pad_r), (0, pad_c)), constant_values=np.nan)
    nodata = np.pad(grid.nodata, ((0, pad_r), (0, pad_c)), constant_values=True)
    lower = np.pad(grid.lower_mask, ((0, pad_r), (0, pad_c)), constant_values=False)

    valid = ~nodata
    blocks = lambda a: a.reshape(nr2, factor, nc2, factor)
    counts = blocks(valid.astype(int)).sum(axis=(1, 3))
    sums = blocks(np.where(valid, elev, 0.0)).sum(axis=(1, 3))
    lower_counts = blocks(lower.astype(int)).sum(axis=(1, 3))

    new_nodata = counts == 0
    with np.errstate(invalid="ignore"):
        new_elev = np.where(new_nodata, np.nan, sums / np.maximum(counts, 1))
    new_lower = (2 * lower_counts > counts) & ~new_nodata

    return TerrainGrid(
        new_elev,
        grid.cell_length * factor,
        new_lower,
        new_nodata,
        grid.lower_elevation,
        grid.xllcorner,
        grid.yllcorner - pad_r * grid.cell_length,
    )


def clip(
    grid: TerrainGrid, cells, margin_cells: int
) -> tuple[TerrainGrid, tuple[int, int]]:
    """Cut the sub-grid covering the bounding box of ``cells`` plus a margin.

    Returns the sub-grid and the (row, col) offset of its top-left corner in
    the parent grid. The window is truncated at the grid boundary and widened
    to the minimum legal grid side if needed.
    """
    mask = cells_to_mask(cells, grid.shape)
    idx = np.argwhere(mask)
    if idx.size == 0:
        raise ValueError("cannot clip around an empty cell set")
    if margin_cells < 0:
        raise ValueError("margin_cells must be >= 0")
    r0 = max(0, int(idx[:, 0].min()) - margin_cells)
    r1 = min(grid.nrows, int(idx[:, 0].max()) + 1 + margin_cells)
    c0 = max(0, int(idx[:, 1].min()) - margin_cells)
    c1 = min(grid.ncols, int(idx[:, 1].max()) + 1 + margin_cells)
    # Grow degenerate windows until they satisfy the minimum-side invariant.
    while r1 - r0 < _MIN_SIDE and (r0 > 0 or r1 < grid.nrows):
        r0, r1 = max(0, r0 - 1), min(grid.nrows, r1 + 1)
    while c1 - c0 < _MIN_SIDE and (c0 > 0 or c1 < grid.ncols):
        c0, c1 = max(0, c0 - 1), min(grid.ncols, c1 + 1)

    sub = TerrainGrid(
        grid.elevations[r0:r1, c0:c1],
        grid.cell_length,
        grid.lower_mask[r0:r1, c0:c1],
        grid.nodata[r0:r1, c0:c1],
        grid.lower_elevation,
        grid.xllcorner + c0 * grid.cell_length,
        grid.yllcorner + (grid.nrows - r1) * grid.cell_length,
    )
    return sub, (r0, c0)


# ---------------------------------------------------------------------------
# Candidate analysis
# ---------------------------------------------------------------------------


def _dilate4(mask: np.ndarray) -> np.ndarray:
    out = np.zeros_like(mask)
    out[:-1, :] |= mask[1:, :]
    out[1:, :] |= mask[:-1, :]
    out[:, :-1] |= mask[:, 1:]
    out[:, 1:] |= mask[:, :-1]
    return out


def candidate_sets(
    grid: TerrainGrid, water_elevation: float, excluded=None
) -> CandidateSets:
    """Compute role eligibility for a target water level.

    Interior candidates sit below the water level; perimeter candidates touch
    at least one interior candidate through the 4-neighborhood. Lower-body,
    NODATA and explicitly excluded cells are removed from every set.
    """
    if not water_elevation > grid.lower_elevation:
        raise ValueError(
            f"water_elevation {water_elevation} must exceed lower body level {grid.lower_elevation}"
        )
    excluded_mask = cells_to_mask(excluded, grid.shape)
    blocked = grid.lower_mask | grid.nodata | excluded_mask
    with np.errstate(invalid="ignore"):
        interior = (grid.elevations < water_elevation) & ~blocked
    if not np.any(interior):
        raise InfeasibleProblemError(
            f"no interior candidates below water level {water_elevation}; head infeasible here"
        )
    perimeter = _dilate4(interior) & ~blocked
    return CandidateSets(interior, perimeter, interior | perimeter, excluded_mask)


def distance_field(grid: TerrainGrid, metric: DistanceMetric = "horizontal") -> DistanceField:
    """Exact center-to-center distance from every cell to the nearest lower cell.

    "horizontal" measures in the grid plane; "slant" adds the vertical offset
    between the cell elevation and the lower water level (exact, since the
    vertical component is shared by all lower cells).
    """
    if not np.any(grid.lower_mask):
        raise InfeasibleProblemError("distance field needs a non-empty lower-body mask")
    horizontal = ndimage.distance_transform_edt(
        ~grid.lower_mask, sampling=(grid.cell_length, grid.cell_length)
    )
    if metric == "horizontal":
        values = horizontal
    elif metric == "slant":
        drop = np.abs(grid.elevations - grid.lower_elevation)
        drop = np.where(np.isfinite(drop), drop, 0.0)
        values = np.hypot(horizontal, drop)
    else:
        raise ValueError(f"unknown distance metric {metric!r}")
    return DistanceField(values, grid.cell_length, metric)


def connected_components(mask: np.ndarray, adjacency: Adjacency = "four") -> list[np.ndarray]:
    """Split a boolean mask into connected components.

    Returns one (k, 2) index array per component, ordered by size descending
    and then by the row-major position of the first cell.
    """
    mask = np.asarray(mask, dtype=bool)
    if adjacency == "four":
        structure = _CROSS
    elif adjacency == "eight":
        structure = np.ones((3, 3), dtype=bool)
    else:
        raise ValueError(f"unknown adjacency {adjacency!r}")
    labels, count = ndimage.label(mask, structure=structure)
    comps = [np.argwhere(labels == lbl) for lbl in range(1, count + 1)]
    comps.sort(key=lambda c: (-len(c), tuple(c[0])))
    return comps
