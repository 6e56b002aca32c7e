"""
Procedural layered scenes with analytic flows and occlusion masks.

A scene is a stack of rigid layers: sprites in front-to-back order followed by
an infinite background. Every layer moves by pure translation, so the flow of a
pixel between any two frames is the displacement of the layer it shows, and a
pixel is occluded when a nearer layer covers its destination or the destination
leaves the canvas.
"""

import json
import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple, Union
import numpy as np
from loguru import logger
from scipy import ndimage

from flow_core import (
    FlowError,
    FlowField,
    FlowSequence,
    Interval,
    InvalidArgumentError,
    OcclusionMask,
    occlusion_proportion,
    pixel_grid,
)
from flow_io import load_flo, load_mask_png, save_flo, save_mask_png, save_rgb_png
from settings import DEFAULT_CANVAS, DEFAULT_FRAMES


Vec = Tuple[float, float]

DIFFICULTIES = {
    # max |sprite velocity| per axis, max |background velocity| per axis
    "easy": (4, 1),
    "hard": (16, 4),
}
MAX_SPRITES = 5
SPRITE_SIZE_RANGE = (0.05, 0.25)
# fraction of a sprite's bounding box allowed past each canvas border in random_spec
MAX_OVERHANG = 0.1
TEXTURE_TILE = 64


class SceneSpecError(FlowError, ValueError):
    pass


def _vec(v: Sequence[float]) -> np.ndarray:
    return np.asarray(v, dtype=np.float64).reshape(2)


def _is_integral(*values: float) -> bool:
    return all(float(x).is_integer() for x in values)


@dataclass(frozen=True)
class ConstantVelocity:
    velocity: Vec = (0.0, 0.0)

    def displacement(self, frame: int) -> np.ndarray:
        return (frame - 1) * _vec(self.velocity)

    @property
    def is_integral(self) -> bool:
        return _is_integral(*self.velocity)

    @property
    def is_linear(self) -> bool:
        return True


@dataclass(frozen=True)
class PiecewiseLinear:
    """Per-step velocities; step s moves frame s to s+1, the last velocity repeats."""

    velocities: Tuple[Vec, ...]

    def __post_init__(self):
        if not self.velocities:
            raise SceneSpecError("piecewise-linear trajectory needs at least one velocity")

    def displacement(self, frame: int) -> np.ndarray:
        d = np.zeros(2)
        for s in range(frame - 1):
            d += _vec(self.velocities[min(s, len(self.velocities) - 1)])
        return d

    @property
    def is_integral(self) -> bool:
        return all(_is_integral(*v) for v in self.velocities)

    @property
    def is_linear(self) -> bool:
        return len(set(map(tuple, self.velocities))) == 1


@dataclass(frozen=True)
class Quadratic:
    """Discrete constant acceleration: step s moves by velocity + (s - 1) * acceleration."""

    velocity: Vec
    acceleration: Vec

    def displacement(self, frame: int) -> np.ndarray:
        n = frame - 1
        return n * _vec(self.velocity) + (n * (n - 1) / 2) * _vec(self.acceleration)

    @property
    def is_integral(self) -> bool:
        return _is_integral(*self.velocity, *self.acceleration)

    @property
    def is_linear(self) -> bool:
        return not any(self.acceleration)


Trajectory = Union[ConstantVelocity, PiecewiseLinear, Quadratic]


@dataclass(frozen=True)
class Rect:
    width: int
    height: int

    @property
    def extent(self) -> Vec:
        return float(self.width), float(self.height)

    def contains(self, dx: np.ndarray, dy: np.ndarray) -> np.ndarray:
        return (dx >= 0) & (dx < self.width) & (dy >= 0) & (dy < self.height)


@dataclass(frozen=True)
class Disc:
    radius: float

    @property
    def extent(self) -> Vec:
        return 2.0 * self.radius, 2.0 * self.radius

    def contains(self, dx: np.ndarray, dy: np.ndarray) -> np.ndarray:
        r = self.radius
        return (dx - r) ** 2 + (dy - r) ** 2 <= r * r


Shape = Union[Rect, Disc]


@dataclass(frozen=True)
class SpriteSpec:
    """
    Args:
        origin: top-left corner of the shape's bounding box in frame 1
        texture: amplitude of the per-sprite noise pattern, 0 for flat colour
    """

    shape: Shape
    origin: Vec
    trajectory: Trajectory = ConstantVelocity()
    color: Tuple[int, int, int] = (255, 255, 255)
    texture: float = 0.0

    def offset(self, frame: int) -> np.ndarray:
        return _vec(self.origin) + self.trajectory.displacement(frame)

    def contains(self, frame: int, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        ox, oy = self.offset(frame)
        return self.shape.contains(xs - ox, ys - oy)


@dataclass(frozen=True)
class SceneSpec:
    """
    Sprites are listed front to back; the background sits behind all of them.
    """

    width: int = DEFAULT_CANVAS
    height: int = DEFAULT_CANVAS
    frames: int = DEFAULT_FRAMES
    background: ConstantVelocity = ConstantVelocity()
    sprites: Tuple[SpriteSpec, ...] = ()
    seed: int = 0
    background_texture: float = 0.3

    @property
    def n_layers(self) -> int:
        return len(self.sprites) + 1

    @property
    def is_integral(self) -> bool:
        return self.background.is_integral and all(
            s.trajectory.is_integral and _is_integral(*s.origin) for s in self.sprites
        )

    def layer_displacement(self, layer: int, frame: int) -> np.ndarray:
        if layer == len(self.sprites):
            return self.background.displacement(frame)
        return self.sprites[layer].trajectory.displacement(frame)


def _sprite_window(
    sprite: SpriteSpec, frame: int
) -> Tuple[int, int, np.ndarray]:
    # lattice points of the sprite's bounding box, not clipped to the canvas
    ox, oy = sprite.offset(frame)
    ew, eh = sprite.shape.extent
    x_lo, x_hi = math.ceil(ox), math.floor(ox + ew)
    y_lo, y_hi = math.ceil(oy), math.floor(oy + eh)
    ys, xs = np.mgrid[y_lo : y_hi + 1, x_lo : x_hi + 1]
    return x_lo, y_lo, sprite.contains(frame, xs.astype(np.float64), ys.astype(np.float64))


def on_canvas_fraction(spec: SceneSpec, sprite: SpriteSpec, frame: int) -> float:
    x_lo, y_lo, inside = _sprite_window(sprite, frame)
    total = int(inside.sum())
    if total == 0:
        return 0.0
    h, w = inside.shape
    ys, xs = np.mgrid[y_lo : y_lo + h, x_lo : x_lo + w]
    visible = inside & (xs >= 0) & (xs < spec.width) & (ys >= 0) & (ys < spec.height)
    return float(visible.sum()) / total


def validate_spec(spec: SceneSpec) -> None:
    if spec.width < 1 or spec.height < 1:
        raise SceneSpecError("canvas must be at least 1x1, got %dx%d" % (spec.width, spec.height))
    if spec.frames < 2:
        raise SceneSpecError("a scene needs at least 2 frames, got %d" % spec.frames)
    if not isinstance(spec.background, ConstantVelocity):
        raise SceneSpecError("background must be static or a constant translation")
    for idx, sprite in enumerate(spec.sprites):
        if isinstance(sprite.shape, Rect) and (sprite.shape.width < 1 or sprite.shape.height < 1):
            raise SceneSpecError("sprite %d has an empty rectangle" % idx)
        if isinstance(sprite.shape, Disc) and sprite.shape.radius <= 0:
            raise SceneSpecError("sprite %d has a non-positive radius" % idx)
        for frame in range(1, spec.frames + 1):
            fraction = on_canvas_fraction(spec, sprite, frame)
            if fraction < 0.5:
                raise SceneSpecError(
                    "sprite %d is only %.0f%% on canvas in frame %d"
                    % (idx, 100 * fraction, frame)
                )


def _texture_tile(rng: np.random.Generator) -> np.ndarray:
    return rng.random((TEXTURE_TILE, TEXTURE_TILE)) - 0.5


@dataclass(frozen=True, eq=False)
class SceneSequence:
    """
    Rendered frames plus analytic ground truth. Flows and masks for any frame
    pair are computed on first access and cached.

    Frame indices are 1-based.
    """

    spec: SceneSpec
    frames: Tuple[np.ndarray, ...]
    layer_maps: Tuple[np.ndarray, ...]
    _cache: Dict[Any, Any] = field(default_factory=dict, repr=False)

    @property
    def length(self) -> int:
        return self.spec.frames

    @property
    def shape(self) -> Tuple[int, int]:
        return self.spec.height, self.spec.width

    def frame(self, k: int) -> np.ndarray:
        return self.frames[k - 1]

    def layer_map(self, k: int) -> np.ndarray:
        return self.layer_maps[k - 1]

    def _check_pair(self, i: int, k: int) -> None:
        n = self.length
        if not (1 <= i <= n and 1 <= k <= n):
            raise InvalidArgumentError("frame pair (%d, %d) outside [1, %d]" % (i, k, n))

    def flow(self, i: int, k: int) -> FlowField:
        """F_{i,k}: displacement of the layer visible at each pixel of frame i."""
        self._check_pair(i, k)
        key = ("flow", i, k)
        if key not in self._cache:
            table = np.stack(
                [
                    self.spec.layer_displacement(layer, k)
                    - self.spec.layer_displacement(layer, i)
                    for layer in range(self.spec.n_layers)
                ]
            )
            self._cache[key] = FlowField(table[self.layer_map(i)].astype(np.float32))
        return self._cache[key]

    def occlusion(self, i: int, k: int) -> OcclusionMask:
        """O_{i,k}: covered in frame k by a strictly nearer layer, or carried off-canvas."""
        self._check_pair(i, k)
        key = ("occ", i, k)
        if key not in self._cache:
            h, w = self.shape
            xs, ys = pixel_grid(h, w)
            f = self.flow(i, k)
            qx = xs + f.u.astype(np.float64)
            qy = ys + f.v.astype(np.float64)
            occ = (qx < 0) | (qx > w - 1) | (qy < 0) | (qy > h - 1)
            layers = self.layer_map(i)
            for j, sprite in enumerate(self.spec.sprites):
                nearer = layers > j
                if nearer.any():
                    occ |= nearer & sprite.contains(k, qx, qy)
            self._cache[key] = OcclusionMask(occ)
        return self._cache[key]

    @property
    def local_flows_fwd(self) -> Tuple[FlowField, ...]:
        return tuple(self.flow(t, t + 1) for t in range(1, self.length))

    @property
    def local_flows_bwd(self) -> Tuple[FlowField, ...]:
        return tuple(self.flow(t + 1, t) for t in range(1, self.length))

    @property
    def cross_flows_from_first(self) -> Dict[int, FlowField]:
        return {t: self.flow(1, t) for t in range(2, self.length + 1)}

    @property
    def cross_flows_to_last(self) -> Dict[int, FlowField]:
        return {t: self.flow(t, self.length) for t in range(1, self.length)}

    def flow_pairs(self) -> List[Interval]:
        """Every (i, k) pair shipped with the sequence, in a fixed order."""
        n = self.length
        pairs: List[Interval] = []
        for t in range(1, n):
            pairs += [(t, t + 1), (t + 1, t)]
        pairs += [(1, t) for t in range(3, n + 1)]
        pairs += [(t, n) for t in range(1, n - 1) if t != 1]
        return pairs

    @property
    def occ_masks(self) -> Dict[Interval, OcclusionMask]:
        return {pair: self.occlusion(*pair) for pair in self.flow_pairs()}

    def to_flow_sequence(
        self,
        with_backward: bool = True,
        with_masks: bool = True,
        with_reference: bool = True,
        name: str = "",
    ) -> FlowSequence:
        """
        Packs the ground-truth local flows into the accumulation input, optionally
        with backward locals, the masks both drivers consume and the long-range
        references for the oracle solver.
        """
        n = self.length
        masks: Dict[Interval, OcclusionMask] = {}
        refs: Dict[Interval, FlowField] = {}
        if with_masks:
            for t in range(2, n):
                masks[(1, t)] = self.occlusion(1, t)
                masks[(t - 1, t)] = self.occlusion(t - 1, t)
        if with_reference:
            for t in range(2, n):
                refs[(1, t + 1)] = self.flow(1, t + 1)
                refs[(t - 1, n)] = self.flow(t - 1, n)
        return FlowSequence(
            local_flows=self.local_flows_fwd,
            backward_local_flows=self.local_flows_bwd if with_backward else None,
            occ_masks=masks,
            reference_flows=refs,
            name=name,
        )


def _render(spec: SceneSpec) -> Tuple[Tuple[np.ndarray, ...], Tuple[np.ndarray, ...]]:
    rng = np.random.default_rng(spec.seed)
    bg_tile = _texture_tile(rng)
    sprite_tiles = [_texture_tile(rng) for _ in spec.sprites]
    h, w = spec.height, spec.width
    xs, ys = pixel_grid(h, w)
    background_layer = len(spec.sprites)

    frames, layer_maps = [], []
    for k in range(1, spec.frames + 1):
        layers = np.full((h, w), background_layer, dtype=np.int16)
        bx, by = spec.background.displacement(k)
        shade = 0.5 + spec.background_texture * bg_tile[
            np.floor(ys - by).astype(np.int64) % TEXTURE_TILE,
            np.floor(xs - bx).astype(np.int64) % TEXTURE_TILE,
        ]
        image = np.repeat(shade[..., None], 3, axis=-1)

        # back to front, so nearer sprites overwrite
        for j in range(len(spec.sprites) - 1, -1, -1):
            sprite = spec.sprites[j]
            inside = sprite.contains(k, xs, ys)
            if not inside.any():
                continue
            layers[inside] = j
            ox, oy = sprite.offset(k)
            noise = sprite_tiles[j][
                np.floor(ys[inside] - oy).astype(np.int64) % TEXTURE_TILE,
                np.floor(xs[inside] - ox).astype(np.int64) % TEXTURE_TILE,
            ]
            base = np.asarray(sprite.color, dtype=np.float64) / 255.0
            image[inside] = base[None, :] + sprite.texture * noise[:, None]

        frames.append(np.round(np.clip(image, 0, 1) * 255).astype(np.uint8))
        layer_maps.append(layers)
    return tuple(frames), tuple(layer_maps)


def generate(spec: SceneSpec) -> SceneSequence:
    validate_spec(spec)
    frames, layer_maps = _render(spec)
    return SceneSequence(spec=spec, frames=frames, layer_maps=layer_maps)


def oracle_long_range(seq: SceneSequence) -> FlowField:
    return seq.cross_flows_from_first[seq.length]


def interior_mask(seq: SceneSequence, radius: Optional[int] = None) -> np.ndarray:
    """
    Pixels of frame 1 whose chained lookups never reach another layer.

    A pixel qualifies when, in every intermediate frame 2 .. N-1, the square of
    side 2 * radius + 1 around its tracked position lies on the canvas and shows
    only the pixel's own layer. Every flow is constant over such a square, so
    bilinear chaining there is exact up to float rounding on real-valued scenes.
    `radius` defaults to N, which also covers the widening stencil of the
    backward recursion.

    Returns:
        H x W bool array
    """
    n = seq.length
    r = n if radius is None else radius
    h, w = seq.shape
    xs, ys = pixel_grid(h, w)
    own = seq.layer_map(1)
    square = np.ones((2 * r + 1, 2 * r + 1), dtype=bool)
    interior = np.ones((h, w), dtype=bool)
    for k in range(2, n):
        f = seq.flow(1, k)
        cx = np.floor(xs + f.u.astype(np.float64)).astype(np.intp)
        cy = np.floor(ys + f.v.astype(np.float64)).astype(np.intp)
        interior &= (cx >= 0) & (cx < w) & (cy >= 0) & (cy < h)
        cx, cy = np.clip(cx, 0, w - 1), np.clip(cy, 0, h - 1)
        for layer in np.unique(own):
            core = ndimage.binary_erosion(
                seq.layer_map(k) == layer, structure=square, border_value=0
            )
            sel = own == layer
            interior[sel] &= core[cy[sel], cx[sel]]
    return interior


def alpha_series(seq: SceneSequence) -> List[float]:
    """
    Returns:
        occlusion proportion of O_{1,1+delta} for delta = 1 .. N-1
    """
    return [occlusion_proportion(seq.occlusion(1, k)) for k in range(2, seq.length + 1)]


def alpha_closed_form(
    velocity: float, sprite_width: int, sprite_height: int, width: int, height: int, delta: int
) -> float:
    """Occluded share after `delta` frames for one rectangle sliding over a static background."""
    return min(abs(velocity) * delta, sprite_width) * sprite_height / float(width * height)


def _sample_origin_axis(
    rng: np.random.Generator,
    canvas: int,
    extent: float,
    displacements: np.ndarray,
    integral: bool,
) -> Optional[float]:
    lo = -MAX_OVERHANG * extent - displacements.min()
    hi = canvas - (1 - MAX_OVERHANG) * extent - displacements.max()
    if integral:
        lo, hi = math.ceil(lo), math.floor(hi)
        if lo > hi:
            return None
        return float(rng.integers(lo, hi + 1))
    if lo > hi:
        return None
    return float(rng.uniform(lo, hi))


def _sample_velocity(rng: np.random.Generator, vmax: int, integral: bool) -> Vec:
    if integral:
        return tuple(float(x) for x in rng.integers(-vmax, vmax + 1, size=2))
    return tuple(float(x) for x in rng.uniform(-vmax, vmax, size=2))


def _sample_trajectory(
    rng: np.random.Generator, vmax: int, integral: bool, linear: bool, frames: int
) -> Trajectory:
    if vmax == 0:
        return ConstantVelocity()
    kind = "constant" if linear else rng.choice(["constant", "piecewise", "quadratic"])
    if kind == "constant":
        return ConstantVelocity(_sample_velocity(rng, vmax, integral))
    if kind == "piecewise":
        knots = int(rng.integers(2, 4))
        return PiecewiseLinear(tuple(_sample_velocity(rng, vmax, integral) for _ in range(knots)))
    accel_max = max(1, vmax // max(1, frames - 2))
    return Quadratic(
        _sample_velocity(rng, vmax // 2, integral), _sample_velocity(rng, accel_max, integral)
    )


def _sample_sprite(
    rng: np.random.Generator,
    canvas: int,
    frames: int,
    vmax: int,
    integral: bool,
    linear: bool,
) -> SpriteSpec:
    side = canvas * rng.uniform(*SPRITE_SIZE_RANGE)
    if rng.random() < 0.5:
        shape: Shape = Rect(
            max(1, int(round(side))), max(1, int(round(canvas * rng.uniform(*SPRITE_SIZE_RANGE))))
        )
    else:
        shape = Disc(float(max(1, int(round(side / 2)))))
    color = tuple(int(c) for c in rng.integers(0, 256, size=3))
    texture = float(rng.uniform(0.0, 0.2))

    trajectory = _sample_trajectory(rng, vmax, integral, linear, frames)
    while True:
        displacements = np.stack([trajectory.displacement(k) for k in range(1, frames + 1)])
        ew, eh = shape.extent
        ox = _sample_origin_axis(rng, canvas, ew, displacements[:, 0], integral)
        oy = _sample_origin_axis(rng, canvas, eh, displacements[:, 1], integral)
        if ox is not None and oy is not None:
            return SpriteSpec(shape, (ox, oy), trajectory, color, texture)
        # too fast to stay on canvas: slow down and retry
        vmax = max(0, vmax // 2)
        trajectory = _sample_trajectory(rng, vmax, integral, linear, frames)


def random_spec(
    seed: int,
    difficulty: str = "easy",
    canvas: int = DEFAULT_CANVAS,
    frames: int = DEFAULT_FRAMES,
    real_valued: bool = False,
    linear: bool = True,
) -> SceneSpec:
    """
    Samples a scene with 1-5 sprites whose sizes are 5-25% of the canvas side.

    `difficulty` bounds the per-axis velocity ("easy": 4 px/frame, "hard": 16 px/frame).
    Specs are redrawn until every sprite keeps at least half of itself on canvas.
    """
    if difficulty not in DIFFICULTIES:
        raise InvalidArgumentError(
            "difficulty must be one of %s, got %r" % (", ".join(DIFFICULTIES), difficulty)
        )
    vmax, bg_vmax = DIFFICULTIES[difficulty]
    integral = not real_valued
    rng = np.random.default_rng(seed)
    while True:
        n_sprites = int(rng.integers(1, MAX_SPRITES + 1))
        sprites = tuple(
            _sample_sprite(rng, canvas, frames, vmax, integral, linear) for _ in range(n_sprites)
        )
        if rng.random() < 0.5:
            background = ConstantVelocity()
        else:
            background = ConstantVelocity(_sample_velocity(rng, bg_vmax, integral))
        spec = SceneSpec(
            width=canvas,
            height=canvas,
            frames=frames,
            background=background,
            sprites=sprites,
            seed=int(rng.integers(0, 2**31 - 1)),
        )
        try:
            validate_spec(spec)
        except SceneSpecError as e:
            logger.debug("seed {}: redrawing spec ({})", seed, e)
            continue
        return spec


def spec_to_dict(spec: SceneSpec) -> Dict[str, Any]:
    def trajectory_dict(t: Trajectory) -> Dict[str, Any]:
        if isinstance(t, ConstantVelocity):
            return {"kind": "constant", "velocity": list(t.velocity)}
        if isinstance(t, PiecewiseLinear):
            return {"kind": "piecewise", "velocities": [list(v) for v in t.velocities]}
        return {
            "kind": "quadratic",
            "velocity": list(t.velocity),
            "acceleration": list(t.acceleration),
        }

    def shape_dict(s: Shape) -> Dict[str, Any]:
        if isinstance(s, Rect):
            return {"kind": "rect", "width": s.width, "height": s.height}
        return {"kind": "disc", "radius": s.radius}

    return {
        "width": spec.width,
        "height": spec.height,
        "frames": spec.frames,
        "seed": spec.seed,
        "background": trajectory_dict(spec.background),
        "background_texture": spec.background_texture,
        "sprites": [
            {
                "shape": shape_dict(s.shape),
                "origin": list(s.origin),
                "trajectory": trajectory_dict(s.trajectory),
                "color": list(s.color),
                "texture": s.texture,
            }
            for s in spec.sprites
        ],
    }


def spec_from_dict(d: Dict[str, Any]) -> SceneSpec:
    def trajectory(t: Dict[str, Any]) -> Trajectory:
        if t["kind"] == "constant":
            return ConstantVelocity(tuple(t["velocity"]))
        if t["kind"] == "piecewise":
            return PiecewiseLinear(tuple(tuple(v) for v in t["velocities"]))
        if t["kind"] == "quadratic":
            return Quadratic(tuple(t["velocity"]), tuple(t["acceleration"]))
        raise SceneSpecError("unknown trajectory kind %r" % t["kind"])

    def shape(s: Dict[str, Any]) -> Shape:
        if s["kind"] == "rect":
            return Rect(int(s["width"]), int(s["height"]))
        if s["kind"] == "disc":
            return Disc(float(s["radius"]))
        raise SceneSpecError("unknown shape kind %r" % s["kind"])

    try:
        return SceneSpec(
            width=int(d["width"]),
            height=int(d["height"]),
            frames=int(d["frames"]),
            seed=int(d["seed"]),
            background=trajectory(d["background"]),
            background_texture=float(d.get("background_texture", 0.3)),
            sprites=tuple(
                SpriteSpec(
                    shape=shape(s["shape"]),
                    origin=tuple(s["origin"]),
                    trajectory=trajectory(s["trajectory"]),
                    color=tuple(s["color"]),
                    texture=float(s.get("texture", 0.0)),
                )
                for s in d["sprites"]
            ),
        )
    except (KeyError, TypeError) as e:
        raise SceneSpecError("malformed scene description: %s" % e) from e


def flow_file(i: int, k: int) -> str:
    """Path of F_{i,k} relative to a sequence directory."""
    direction = "fwd" if i < k else "bwd"
    return "flow/%s_%03d_%03d.flo" % (direction, i, k)


def occ_file(i: int, k: int) -> str:
    return "occ/occ_%03d_%03d.png" % (i, k)


def write_sequence(seq: SceneSequence, directory: str) -> Dict[str, Any]:
    """
    Writes frames/, flow/, occ/ and manifest.json for one sequence.

    Returns:
        the manifest that was written
    """
    for sub in ("frames", "flow", "occ"):
        os.makedirs(os.path.join(directory, sub), exist_ok=True)

    files: Dict[str, List[str]] = {"frames": [], "flow": [], "occ": []}
    for k in range(1, seq.length + 1):
        name = "frames/frame_%03d.png" % k
        save_rgb_png(os.path.join(directory, name), seq.frame(k))
        files["frames"].append(name)
    for i, k in seq.flow_pairs():
        flow_name = flow_file(i, k)
        save_flo(os.path.join(directory, flow_name), seq.flow(i, k))
        files["flow"].append(flow_name)
        occ_name = occ_file(i, k)
        save_mask_png(os.path.join(directory, occ_name), seq.occlusion(i, k))
        files["occ"].append(occ_name)

    manifest = {
        "frames": seq.length,
        "width": seq.spec.width,
        "height": seq.spec.height,
        "seed": seq.spec.seed,
        "spec": spec_to_dict(seq.spec),
        "files": files,
    }
    with open(os.path.join(directory, "manifest.json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    logger.debug("wrote {} ({} flows)", directory, len(files["flow"]))
    return manifest


def read_manifest(directory: str) -> Dict[str, Any]:
    path = os.path.join(directory, "manifest.json")
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError as e:
        raise InvalidArgumentError("%s is not a sequence directory (no manifest.json)" % directory) from e


def load_flow_sequence(directory: str, name: str = "") -> FlowSequence:
    """
    Reads a sequence directory back into an accumulation input. Backward locals,
    masks and long-range references are attached when their files exist.
    """
    n = int(read_manifest(directory)["frames"])

    def flow_path(i: int, k: int) -> str:
        return os.path.join(directory, flow_file(i, k))

    def occ_path(i: int, k: int) -> str:
        return os.path.join(directory, occ_file(i, k))

    local = tuple(load_flo(flow_path(t, t + 1)) for t in range(1, n))
    backward: Optional[Tuple[FlowField, ...]] = None
    if all(os.path.exists(flow_path(t + 1, t)) for t in range(1, n)):
        backward = tuple(load_flo(flow_path(t + 1, t)) for t in range(1, n))

    masks: Dict[Interval, OcclusionMask] = {}
    refs: Dict[Interval, FlowField] = {}
    for t in range(2, n):
        for pair in ((1, t), (t - 1, t)):
            if pair not in masks and os.path.exists(occ_path(*pair)):
                masks[pair] = load_mask_png(occ_path(*pair))
        for pair in ((1, t + 1), (t - 1, n)):
            if pair not in refs and os.path.exists(flow_path(*pair)):
                refs[pair] = load_flo(flow_path(*pair))
    return FlowSequence(local, backward, masks, refs, name=name or os.path.basename(directory))


def load_ground_truth(directory: str) -> Tuple[FlowField, OcclusionMask]:
    """
    Returns:
        (F_{1,N}, O_{1,N}) of a sequence directory
    """
    n = int(read_manifest(directory)["frames"])
    flow = load_flo(os.path.join(directory, flow_file(1, n)))
    occ = load_mask_png(os.path.join(directory, occ_file(1, n)))
    return flow, occ


def iter_alpha_from_directory(directory: str) -> Iterator[Tuple[int, float]]:
    """Yields (delta, alpha) from the stored O_{1,1+delta} masks."""
    n = int(read_manifest(directory)["frames"])
    for k in range(2, n + 1):
        mask = load_mask_png(os.path.join(directory, occ_file(1, k)))
        yield k - 1, occlusion_proportion(mask)


def sequence_seed(seed: int, index: int) -> int:
    """Seed of the index-th sequence of a dataset, independent of worker scheduling."""
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def sequence_name(index: int) -> str:
    return "seq_%05d" % index


def synth_sequence(
    root: str,
    index: int,
    seed: int,
    difficulty: str = "easy",
    canvas: int = DEFAULT_CANVAS,
    frames: int = DEFAULT_FRAMES,
    real_valued: bool = False,
    linear: bool = True,
) -> Dict[str, Any]:
    """
    Samples, renders and writes one sequence of a dataset.

    Returns:
        the dataset manifest entry for the sequence
    """
    name = sequence_name(index)
    spec = random_spec(sequence_seed(seed, index), difficulty, canvas, frames, real_valued, linear)
    write_sequence(generate(spec), os.path.join(root, name))
    return {"name": name, "seed": spec.seed, "sprites": len(spec.sprites)}


def write_dataset_manifest(
    root: str, entries: List[Dict[str, Any]], split: str, **params: Any
) -> Dict[str, Any]:
    manifest = {"split": split, "sequences": entries, "params": params}
    with open(os.path.join(root, "manifest.json"), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    return manifest


def list_sequences(root: str) -> List[str]:
    """
    Names of the sequences in a dataset directory, in manifest order.
    """
    manifest = read_manifest(root)
    if "sequences" not in manifest:
        raise InvalidArgumentError("%s is a sequence, not a dataset directory" % root)
    return [entry["name"] for entry in manifest["sequences"]]
