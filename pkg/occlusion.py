from dataclasses import dataclass
from typing import Mapping, NamedTuple, Optional
import numpy as np
from loguru import logger
from scipy import ndimage, spatial

from flow_core import (
    FlowError,
    FlowField,
    Interval,
    InvalidArgumentError,
    OcclusionMask,
    check_same_shape,
    magnitude,
    pixel_grid,
    select_by_mask,
    warp_flow,
)
from settings import CONSISTENCY_TOL_ABS, CONSISTENCY_TOL_REL


DETECTOR_STRATEGIES = ("consistency", "range-map", "ground-truth")
SOLVER_STRATEGIES = ("zero", "extrapolate", "nearest", "oracle")


class MissingInputError(FlowError, LookupError):
    pass


def out_of_bounds(flow: FlowField) -> np.ndarray:
    """
    Returns:
        H x W bool array, True where x + flow(x) leaves the pixel grid
    """
    h, w = flow.shape
    xs, ys = pixel_grid(h, w)
    qx = xs + flow.u.astype(np.float64)
    qy = ys + flow.v.astype(np.float64)
    return (qx < 0) | (qx > w - 1) | (qy < 0) | (qy > h - 1)


def detect_consistency(
    fwd: FlowField,
    bwd: FlowField,
    tol_abs: float = CONSISTENCY_TOL_ABS,
    tol_rel: float = CONSISTENCY_TOL_REL,
    mark_out_of_bounds: bool = False,
) -> OcclusionMask:
    """
    Forward-backward check: x is occluded when the backward flow sampled at
    its endpoint does not bring it back, i.e.
    |fwd + bwd~|^2 > tol_rel * (|fwd|^2 + |bwd~|^2) + tol_abs.
    """
    check_same_shape(fwd, bwd)
    if tol_abs <= 0:
        raise InvalidArgumentError("tol_abs must be positive, got %s" % tol_abs)
    if tol_rel < 0:
        raise InvalidArgumentError("tol_rel must be non-negative, got %s" % tol_rel)

    f = fwd.data.astype(np.float64)
    b = warp_flow(bwd, fwd).data.astype(np.float64)
    squared_diff = np.sum((f + b) ** 2, axis=-1)
    threshold = tol_rel * (np.sum(f**2, axis=-1) + np.sum(b**2, axis=-1)) + tol_abs
    occ = squared_diff > threshold
    if mark_out_of_bounds:
        occ |= out_of_bounds(fwd)
    return OcclusionMask(occ)


def detect_range_map(fwd: FlowField) -> OcclusionMask:
    """
    Splats every pixel to its rounded (edge-clamped) endpoint. When several
    pixels claim one target cell, the one with the smallest flow magnitude stays
    visible (ties go to the smaller raster index); the others are occluded.
    """
    h, w = fwd.shape
    xs, ys = pixel_grid(h, w)
    tx = np.clip(np.floor(xs + fwd.u + 0.5), 0, w - 1).astype(np.int64)
    ty = np.clip(np.floor(ys + fwd.v + 0.5), 0, h - 1).astype(np.int64)

    cell = (ty * w + tx).ravel()
    mag = magnitude(fwd).ravel()
    raster = np.arange(cell.size)
    # last key is primary
    order = np.lexsort((raster, mag, cell))
    sorted_cell = cell[order]
    winner = np.ones(cell.size, dtype=bool)
    winner[1:] = sorted_cell[1:] != sorted_cell[:-1]

    occ = np.ones(cell.size, dtype=np.uint8)
    occ[order[winner]] = 0
    return OcclusionMask(occ.reshape(h, w))


def solve_zero(local: FlowField, occ: OcclusionMask) -> FlowField:
    return select_by_mask(local, occ, FlowField.zeros(local.width, local.height))


def solve_extrapolate(local: FlowField, remaining_steps: int, occ: OcclusionMask) -> FlowField:
    """
    Constant-velocity fill: occluded pixels keep moving with `local` for
    `remaining_steps` frames.
    """
    if remaining_steps < 1:
        raise InvalidArgumentError(
            "remaining_steps must be >= 1, got %d" % remaining_steps
        )
    scaled = FlowField(local.data * np.float32(remaining_steps))
    return select_by_mask(local, occ, scaled)


def solve_nearest_visible(candidate: FlowField, occ: OcclusionMask) -> FlowField:
    """
    Occluded pixels copy the vector of the closest visible pixel (Euclidean
    grid distance, ties to the smaller raster index).
    """
    check_same_shape(candidate, occ)
    occluded = occ.occluded
    if occluded.all():
        raise InvalidArgumentError("every pixel is occluded, nothing to copy from")
    if not occluded.any():
        return candidate

    distance = ndimage.distance_transform_edt(occluded)
    visible_yx = np.argwhere(~occluded)  # raster order
    occluded_yx = np.argwhere(occluded)
    tree = spatial.cKDTree(visible_yx)
    radius = distance[occluded] * (1 + 1e-9) + 1e-9
    neighbours = tree.query_ball_point(occluded_yx, r=radius)
    nearest = np.fromiter((min(n) for n in neighbours), dtype=np.intp, count=len(neighbours))

    data = candidate.data.copy()
    src = visible_yx[nearest]
    data[occluded_yx[:, 0], occluded_yx[:, 1]] = candidate.data[src[:, 0], src[:, 1]]
    return FlowField(data)


@dataclass(frozen=True)
class OccDetector:
    """
    Produces the occlusion mask of the leader flow of one accumulation step.
    """

    strategy: str = "ground-truth"
    tol_abs: float = CONSISTENCY_TOL_ABS
    tol_rel: float = CONSISTENCY_TOL_REL
    mark_out_of_bounds: bool = True

    def __post_init__(self):
        if self.strategy not in DETECTOR_STRATEGIES:
            raise InvalidArgumentError(
                "unknown detector %r, expected one of %s"
                % (self.strategy, ", ".join(DETECTOR_STRATEGIES))
            )

    @property
    def needs_backward(self) -> bool:
        return self.strategy == "consistency"

    @property
    def needs_masks(self) -> bool:
        return self.strategy == "ground-truth"

    def detect(
        self,
        interval: Interval,
        leader: FlowField,
        reverse: Optional[FlowField] = None,
        masks: Optional[Mapping[Interval, OcclusionMask]] = None,
    ) -> OcclusionMask:
        """
        Args:
            interval: (i, k), the frames spanned by `leader` (F_{i,k})
            leader: F_{i,k}
            reverse: F_{k,i}, required by the consistency strategy
            masks: ground-truth masks keyed by interval
        """
        if self.strategy == "consistency":
            if reverse is None:
                raise MissingInputError(
                    "consistency detector needs the reverse flow F_%d,%d" % interval[::-1]
                )
            return detect_consistency(
                leader, reverse, self.tol_abs, self.tol_rel, self.mark_out_of_bounds
            )
        if self.strategy == "range-map":
            return detect_range_map(leader)
        if masks is None or interval not in masks:
            raise MissingInputError("no ground-truth mask O_%d,%d" % interval)
        mask = masks[interval]
        check_same_shape(mask, leader)
        return mask


class SolveContext(NamedTuple):
    """
    Everything a solver may look at for one step producing F_{target}.

    composed: leader (+) follower without occlusion handling
    velocity, remaining_steps: last visible motion and how many frames to extrapolate it
    reference: ground-truth F_{target}, when known
    """

    target: Interval
    occ: OcclusionMask
    composed: FlowField
    velocity: FlowField
    remaining_steps: int
    reference: Optional[FlowField] = None


@dataclass(frozen=True)
class OccSolver:
    """
    Fills in the long-range flow at occluded pixels, where composition has nothing to chain.
    """

    strategy: str = "zero"

    def __post_init__(self):
        if self.strategy not in SOLVER_STRATEGIES:
            raise InvalidArgumentError(
                "unknown solver %r, expected one of %s"
                % (self.strategy, ", ".join(SOLVER_STRATEGIES))
            )

    @property
    def needs_reference(self) -> bool:
        return self.strategy == "oracle"

    def solve(self, ctx: SolveContext) -> FlowField:
        if self.strategy == "zero":
            return solve_zero(ctx.composed, ctx.occ)
        if self.strategy == "extrapolate":
            return solve_extrapolate(ctx.velocity, ctx.remaining_steps, ctx.occ)
        if self.strategy == "nearest":
            if ctx.occ.occluded.all():
                logger.warning(
                    "F_{}_{}: no visible pixel to copy from, falling back to zero fill",
                    *ctx.target
                )
                return solve_zero(ctx.composed, ctx.occ)
            return solve_nearest_visible(ctx.composed, ctx.occ)
        if ctx.reference is None:
            raise MissingInputError("oracle solver has no reference F_%d,%d" % ctx.target)
        return select_by_mask(ctx.composed, ctx.occ, ctx.reference)
