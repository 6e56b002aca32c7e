import json

import numpy as np
import pytest

from flow_core import InvalidArgumentError, compose
from synthgen import (
    ConstantVelocity,
    Disc,
    PiecewiseLinear,
    Quadratic,
    Rect,
    SceneSpec,
    SceneSpecError,
    SpriteSpec,
    alpha_closed_form,
    alpha_series,
    flow_file,
    generate,
    load_flow_sequence,
    load_ground_truth,
    occ_file,
    oracle_long_range,
    random_spec,
    spec_from_dict,
    spec_to_dict,
    validate_spec,
    write_sequence,
)


def sliding_rect_spec(v: int, sprite_w: int, canvas_w: int, frames: int, height: int = 20) -> SceneSpec:
    sprite = SpriteSpec(Rect(sprite_w, height), (5.0, 0.0), ConstantVelocity((float(v), 0.0)))
    return SceneSpec(width=canvas_w, height=height, frames=frames, sprites=(sprite,))


def test_static_scene_has_no_motion_and_no_occlusion():
    seq = generate(SceneSpec(width=16, height=12, frames=4))
    for i, k in seq.flow_pairs():
        np.testing.assert_array_equal(seq.flow(i, k).data, 0)
        assert seq.occlusion(i, k).count() == 0
    np.testing.assert_array_equal(oracle_long_range(seq).data, 0)


@pytest.mark.parametrize(
    "v, sprite_w, canvas_w, delta",
    [
        (2, 10, 100, 3),
        (2, 10, 100, 10),
        (1, 5, 50, 7),
        (3, 4, 60, 2),
        (4, 8, 80, 9),
        (5, 6, 64, 6),
    ],
)
def test_alpha_matches_closed_form(v, sprite_w, canvas_w, delta):
    spec = sliding_rect_spec(v, sprite_w, canvas_w, frames=delta + 1)
    seq = generate(spec)
    alpha = alpha_series(seq)[delta - 1]
    assert alpha == alpha_closed_form(v, sprite_w, 20, canvas_w, 20, delta)


def test_alpha_example_values():
    seq = generate(sliding_rect_spec(2, 10, 100, frames=11))
    alphas = alpha_series(seq)
    assert alphas[2] == pytest.approx(0.06)
    assert alphas[9] == pytest.approx(0.10)


def test_oracle_long_range_on_constant_velocity_sprite():
    seq = generate(sliding_rect_spec(3, 6, 64, frames=7))
    long_range = oracle_long_range(seq)
    on_sprite = seq.layer_map(1) == 0
    np.testing.assert_array_equal(long_range.u[on_sprite], 6 * 3)
    np.testing.assert_array_equal(long_range.u[~on_sprite], 0)


def test_off_canvas_departure_is_occluded():
    bg = ConstantVelocity((2.0, 0.0))
    seq = generate(SceneSpec(width=10, height=3, frames=3, background=bg))
    occ = seq.occlusion(1, 3)
    np.testing.assert_array_equal(occ.occluded[:, 6:], True)
    np.testing.assert_array_equal(occ.occluded[:, :6], False)


def test_front_sprite_covers_back_sprite():
    front = SpriteSpec(Rect(4, 4), (10.0, 2.0), ConstantVelocity())
    back = SpriteSpec(Rect(4, 4), (4.0, 2.0), ConstantVelocity((3.0, 0.0)))
    seq = generate(SceneSpec(width=24, height=8, frames=3, sprites=(front, back)))
    layers = seq.layer_map(3)
    # back sprite now spans x 10..13 but sits behind the front one
    np.testing.assert_array_equal(layers[2:6, 10:14], 0)
    occ = seq.occlusion(1, 3)
    assert occ.occluded[2:6, 4:8].all()
    assert not occ.occluded[2:6, 10:14].any()


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_flows_are_coherent_with_masks(seed):
    seq = generate(random_spec(seed, "hard", canvas=64))
    h, w = seq.shape
    ys, xs = np.mgrid[0:h, 0:w]
    for i, k in [(1, 2), (1, 7), (3, 7), (6, 2)]:
        f = seq.flow(i, k)
        visible = ~seq.occlusion(i, k).occluded
        qx = (xs + f.u).astype(np.int64)[visible]
        qy = (ys + f.v).astype(np.int64)[visible]
        np.testing.assert_array_equal(seq.layer_map(k)[qy, qx], seq.layer_map(i)[visible])
        # the reverse flow at the endpoint brings the pixel back
        back = seq.flow(k, i)
        np.testing.assert_array_equal(back.u[qy, qx], -f.u[visible])
        np.testing.assert_array_equal(back.v[qy, qx], -f.v[visible])


def test_long_range_flow_equals_compose_chain_where_visible():
    seq = generate(random_spec(11, "easy", canvas=64))
    chained = seq.flow(1, 2)
    for t in range(2, seq.length):
        chained = compose(chained, seq.flow(t, t + 1))
    visible = ~seq.occlusion(1, seq.length).occluded
    for t in range(2, seq.length):
        visible &= ~seq.occlusion(1, t).occluded
    err = np.linalg.norm(chained.data - oracle_long_range(seq).data, axis=-1)
    assert err[visible].max() <= 0.1


def test_trajectories():
    np.testing.assert_array_equal(ConstantVelocity((1.0, -2.0)).displacement(4), [3, -6])
    piecewise = PiecewiseLinear(((1.0, 0.0), (2.0, 0.0)))
    np.testing.assert_array_equal(piecewise.displacement(4), [5, 0])
    quad = Quadratic((1.0, 0.0), (2.0, 1.0))
    np.testing.assert_array_equal(quad.displacement(1), [0, 0])
    np.testing.assert_array_equal(quad.displacement(3), [4, 1])
    assert not quad.is_linear
    assert ConstantVelocity((0.5, 0.0)).is_integral is False


def test_disc_contains_relative_to_bounding_box():
    disc = Disc(2.0)
    assert disc.contains(np.array(2.0), np.array(2.0))
    assert not disc.contains(np.array(0.0), np.array(0.0))


def test_sprite_mostly_off_canvas_is_rejected():
    sprite = SpriteSpec(Rect(10, 10), (-8.0, 0.0))
    with pytest.raises(SceneSpecError):
        generate(SceneSpec(width=32, height=32, frames=3, sprites=(sprite,)))


def test_sprite_leaving_canvas_later_is_rejected():
    sprite = SpriteSpec(Rect(10, 10), (20.0, 0.0), ConstantVelocity((5.0, 0.0)))
    with pytest.raises(SceneSpecError):
        validate_spec(SceneSpec(width=32, height=32, frames=4, sprites=(sprite,)))


def test_random_spec_is_deterministic():
    assert random_spec(42, "hard") == random_spec(42, "hard")
    assert random_spec(42, "easy") != random_spec(43, "easy")


def test_random_spec_rejects_unknown_difficulty():
    with pytest.raises(InvalidArgumentError):
        random_spec(0, "medium")


@pytest.mark.parametrize("difficulty", ["easy", "hard"])
def test_random_specs_respect_constraints(difficulty):
    vmax = 4 if difficulty == "easy" else 16
    for seed in range(40):
        spec = random_spec(seed, difficulty)
        validate_spec(spec)
        assert 1 <= len(spec.sprites) <= 5
        assert spec.is_integral
        for sprite in spec.sprites:
            assert max(abs(x) for x in sprite.trajectory.velocity) <= vmax
            ew, eh = sprite.shape.extent
            assert ew <= 0.25 * 128 + 1 and eh <= 0.25 * 128 + 1


def test_real_valued_and_nonlinear_specs_generate():
    spec = random_spec(5, "easy", canvas=48, real_valued=True, linear=False)
    seq = generate(spec)
    assert len(seq.frames) == 7
    assert seq.frame(1).shape == (48, 48, 3)
    assert seq.frame(1).dtype == np.uint8


def test_rendering_is_deterministic():
    spec = random_spec(9, "easy", canvas=32)
    a, b = generate(spec), generate(spec)
    for k in range(1, spec.frames + 1):
        np.testing.assert_array_equal(a.frame(k), b.frame(k))


def test_spec_dict_roundtrip():
    spec = random_spec(8, "hard", linear=False)
    assert spec_from_dict(json.loads(json.dumps(spec_to_dict(spec)))) == spec


def test_spec_from_malformed_dict():
    with pytest.raises(SceneSpecError):
        spec_from_dict({"width": 10})


def test_write_and_load_sequence(tmp_path):
    seq = generate(random_spec(2, "easy", canvas=32))
    manifest = write_sequence(seq, str(tmp_path))
    assert manifest["frames"] == 7
    for i, k in seq.flow_pairs():
        assert (tmp_path / flow_file(i, k)).is_file()
        assert (tmp_path / occ_file(i, k)).is_file()
    assert len(list((tmp_path / "frames").iterdir())) == 7

    loaded = load_flow_sequence(str(tmp_path))
    assert loaded.length == 7 and loaded.has_backward
    for t in range(1, 7):
        np.testing.assert_array_equal(loaded.local(t).data, seq.flow(t, t + 1).data)
        np.testing.assert_array_equal(loaded.backward_local(t).data, seq.flow(t + 1, t).data)
    assert set(loaded.occ_masks) == set(seq.to_flow_sequence().occ_masks)
    assert set(loaded.reference_flows) == set(seq.to_flow_sequence().reference_flows)

    gt, occ = load_ground_truth(str(tmp_path))
    np.testing.assert_array_equal(gt.data, oracle_long_range(seq).data)
    np.testing.assert_array_equal(occ.data, seq.occlusion(1, 7).data)


@pytest.mark.slow
def test_median_alpha_grows_with_interval():
    samples = np.array([alpha_series(generate(random_spec(seed, "easy"))) for seed in range(500)])
    medians = np.median(samples, axis=0)
    assert (np.diff(medians) >= 0).all()
    # linear motion keeps most individual series non-decreasing too
    growing = (np.diff(samples, axis=1) >= 0).all(axis=1)
    assert growing.mean() >= 0.9
