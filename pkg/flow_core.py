from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Optional, Sequence, Tuple
import numpy as np


Interval = Tuple[int, int]

DEFAULT_MAGNITUDE_BINS = (0.0, 5.0, 10.0, 25.0, 50.0, 75.0, 100.0, 125.0, np.inf)


class FlowError(Exception):
    pass


class ShapeMismatchError(FlowError, ValueError):
    pass


class InvalidArgumentError(FlowError, ValueError):
    pass


class PixelCoord(NamedTuple):
    # origin top-left, x rightward, y downward
    x: float
    y: float


@dataclass(frozen=True, eq=False)
class FlowField:
    """
    Dense motion field between two frames.

    Args:
        data: H x W x 2 array, channel 0 is u (horizontal), channel 1 is v (vertical).
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=np.float32, copy=True)
        if arr.ndim != 3 or arr.shape[-1] != 2:
            raise InvalidArgumentError(
                "flow data must be H x W x 2, got shape %s" % (arr.shape,)
            )
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InvalidArgumentError("flow field must have at least one pixel")
        if not np.isfinite(arr).all():
            raise InvalidArgumentError("flow field contains NaN or Inf")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @classmethod
    def zeros(cls, width: int, height: int) -> "FlowField":
        return cls(np.zeros((height, width, 2), dtype=np.float32))

    @classmethod
    def constant(cls, width: int, height: int, u: float, v: float) -> "FlowField":
        data = np.empty((height, width, 2), dtype=np.float32)
        data[..., 0] = u
        data[..., 1] = v
        return cls(data)

    @classmethod
    def from_components(cls, u: np.ndarray, v: np.ndarray) -> "FlowField":
        return cls(np.stack([u, v], axis=-1))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.height, self.width

    @property
    def u(self) -> np.ndarray:
        return self.data[..., 0]

    @property
    def v(self) -> np.ndarray:
        return self.data[..., 1]

    def __repr__(self) -> str:
        return "FlowField(%dx%d)" % (self.width, self.height)


@dataclass(frozen=True, eq=False)
class OcclusionMask:
    """
    Binary per-pixel mask, 1 = occluded, 0 = visible.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise InvalidArgumentError(
                "mask data must be a non-empty H x W array, got shape %s" % (arr.shape,)
            )
        if arr.dtype == np.bool_:
            arr = arr.astype(np.uint8)
        elif not np.isin(arr, (0, 1)).all():
            raise InvalidArgumentError("mask values must be 0 or 1")
        else:
            arr = arr.astype(np.uint8)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @classmethod
    def zeros(cls, width: int, height: int) -> "OcclusionMask":
        return cls(np.zeros((height, width), dtype=np.uint8))

    @classmethod
    def ones(cls, width: int, height: int) -> "OcclusionMask":
        return cls(np.ones((height, width), dtype=np.uint8))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.height, self.width

    @property
    def occluded(self) -> np.ndarray:
        return self.data.astype(bool)

    def count(self) -> int:
        return int(np.count_nonzero(self.data))

    def __repr__(self) -> str:
        return "OcclusionMask(%dx%d, %d occluded)" % (
            self.width,
            self.height,
            self.count(),
        )


@dataclass(frozen=True, eq=False)
class FlowSequence:
    """
    Local flows of an N-frame clip, with optional extras used by the
    accumulation drivers.

    Time indices are 1-based: `local(t)` is F_{t,t+1}, `backward_local(t)` is F_{t+1,t}.
    `occ_masks` and `reference_flows` are keyed by (i, k) frame pairs.
    """

    local_flows: Tuple[FlowField, ...]
    backward_local_flows: Optional[Tuple[FlowField, ...]] = None
    occ_masks: Mapping[Interval, OcclusionMask] = field(default_factory=dict)
    reference_flows: Mapping[Interval, FlowField] = field(default_factory=dict)
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "local_flows", tuple(self.local_flows))
        if not self.local_flows:
            raise InvalidArgumentError("a flow sequence needs at least one local flow")
        shape = self.local_flows[0].shape
        members = list(self.local_flows)
        if self.backward_local_flows is not None:
            object.__setattr__(
                self, "backward_local_flows", tuple(self.backward_local_flows)
            )
            if len(self.backward_local_flows) != len(self.local_flows):
                raise InvalidArgumentError(
                    "expected %d backward local flows, got %d"
                    % (len(self.local_flows), len(self.backward_local_flows))
                )
            members += list(self.backward_local_flows)
        members += list(self.occ_masks.values()) + list(self.reference_flows.values())
        for m in members:
            if m.shape != shape:
                raise ShapeMismatchError(
                    "sequence member %r does not match %dx%d" % (m, shape[1], shape[0])
                )
        object.__setattr__(self, "occ_masks", dict(self.occ_masks))
        object.__setattr__(self, "reference_flows", dict(self.reference_flows))

    @property
    def length(self) -> int:
        return len(self.local_flows) + 1

    @property
    def shape(self) -> Tuple[int, int]:
        return self.local_flows[0].shape

    @property
    def has_backward(self) -> bool:
        return self.backward_local_flows is not None

    def local(self, t: int) -> FlowField:
        if not 1 <= t < self.length:
            raise InvalidArgumentError(
                "local flow index %d outside [1, %d]" % (t, self.length - 1)
            )
        return self.local_flows[t - 1]

    def backward_local(self, t: int) -> FlowField:
        if self.backward_local_flows is None:
            raise InvalidArgumentError("sequence %r has no backward flows" % self.name)
        if not 1 <= t < self.length:
            raise InvalidArgumentError(
                "backward flow index %d outside [1, %d]" % (t, self.length - 1)
            )
        return self.backward_local_flows[t - 1]


def check_same_shape(*items) -> None:
    shapes = {item.shape for item in items}
    if len(shapes) > 1:
        raise ShapeMismatchError(
            "incompatible fields: %s" % ", ".join(repr(i) for i in items)
        )


def pixel_grid(height: int, width: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Returns:
        (xs, ys): H x W float64 arrays of pixel column and row indices.
    """
    ys, xs = np.mgrid[0:height, 0:width]
    return xs.astype(np.float64), ys.astype(np.float64)


def bilinear_lookup(data: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """
    Bilinear interpolation of an H x W x C grid at real positions, clamped to the edges.

    Positions that land exactly on the lattice return the stored value unchanged.

    Args:
        data: H x W x C array
        xs, ys: arrays of the same shape, sub-pixel column and row coordinates
    Returns:
        (*xs.shape, C) float64 array
    """
    h, w = data.shape[:2]
    xs = np.clip(np.asarray(xs, dtype=np.float64), 0, w - 1)
    ys = np.clip(np.asarray(ys, dtype=np.float64), 0, h - 1)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (xs - x0)[..., None]
    fy = (ys - y0)[..., None]

    grid = data.astype(np.float64)
    q00 = grid[y0, x0]
    q01 = grid[y0, x1]
    q10 = grid[y1, x0]
    q11 = grid[y1, x1]

    top = np.where(fx > 0, q00 * (1 - fx) + q01 * fx, q00)
    bottom = np.where(fx > 0, q10 * (1 - fx) + q11 * fx, q10)
    return np.where(fy > 0, top * (1 - fy) + bottom * fy, top)


def sample_bilinear(field: FlowField, p: PixelCoord) -> np.ndarray:
    """
    Returns:
        the (u, v) vector of `field` at sub-pixel position `p`
    """
    x, y = p
    return bilinear_lookup(field.data, np.array([x]), np.array([y]))[0]


def warp_flow(follower: FlowField, leader: FlowField) -> FlowField:
    """
    Moves the start points of `follower` (F_{k,j}) onto the reference frame of
    `leader` (F_{i,k}): output(x) = follower(x + leader(x)).
    """
    check_same_shape(follower, leader)
    xs, ys = pixel_grid(*leader.shape)
    warped = bilinear_lookup(
        follower.data,
        xs + leader.u.astype(np.float64),
        ys + leader.v.astype(np.float64),
    )
    return FlowField(warped.astype(np.float32))


def compose(leader: FlowField, follower: FlowField) -> FlowField:
    """
    Chains F_{i,k} and F_{k,j} into F_{i,j}, ignoring occlusion.
    """
    check_same_shape(leader, follower)
    warped = warp_flow(follower, leader)
    return FlowField(leader.data + warped.data)


def select_by_mask(
    visible: FlowField, occ: OcclusionMask, fill: FlowField
) -> FlowField:
    check_same_shape(visible, occ, fill)
    return FlowField(np.where(occ.occluded[..., None], fill.data, visible.data))


def compose_masked(
    leader: FlowField, follower: FlowField, occ: OcclusionMask, fill: FlowField
) -> FlowField:
    """
    Composition where occluded pixels of the leader take their value from `fill`.
    """
    check_same_shape(leader, follower, occ, fill)
    return select_by_mask(compose(leader, follower), occ, fill)


def occlusion_proportion(occ: OcclusionMask) -> float:
    return occ.count() / float(occ.data.size)


def magnitude(field: FlowField) -> np.ndarray:
    u = field.u.astype(np.float64)
    v = field.v.astype(np.float64)
    return np.sqrt(u * u + v * v)


def magnitude_histogram(
    field: FlowField, bin_edges: Sequence[float] = DEFAULT_MAGNITUDE_BINS
) -> np.ndarray:
    """
    Counts per-pixel flow magnitudes into the bins [e_i, e_{i+1}).

    Magnitudes below the first edge land in the first bin and magnitudes at or
    past the last edge land in the last bin, so the counts always sum to W x H.
    """
    edges = np.asarray(bin_edges, dtype=np.float64)
    if edges.ndim != 1 or edges.size < 2:
        raise InvalidArgumentError("need at least two bin edges")
    if np.isnan(edges).any() or not (np.diff(edges) > 0).all():
        raise InvalidArgumentError("bin edges must be strictly increasing")
    n_bins = edges.size - 1
    idx = np.searchsorted(edges, magnitude(field).ravel(), side="right") - 1
    idx = np.clip(idx, 0, n_bins - 1)
    return np.bincount(idx, minlength=n_bins).astype(np.int64)
