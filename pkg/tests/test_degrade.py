import logging

import numpy as np
import pytest

from stripeclean.degrade import (NoiseKind, StripeNoiseSpec, builtin_textures, has_vertical_step, load_corpus,
                                 make_corpus, sample_spec, stripe_field, synth_stripe)
from stripeclean.errors import ConfigError
from stripeclean.imageio import read_dir, write_gray16
from stripeclean.wavelet import hdwt
from stripeclean.tensor import Tensor

ZERO_SPECS = [StripeNoiseSpec.gaussian(0.0), StripeNoiseSpec.uniform(0.0),
              StripeNoiseSpec.periodic(7, 0.0), StripeNoiseSpec.poly3(0.0, 0.0, 0.0)]
ADDITIVE_SPECS = [StripeNoiseSpec.gaussian(0.05, 1), StripeNoiseSpec.uniform(0.08, 2),
                  StripeNoiseSpec.periodic(9, 0.08, True, 3)]


@pytest.fixture
def texture():
    return builtin_textures(1, 64, seed=5)[0]


@pytest.mark.parametrize("spec", ZERO_SPECS, ids=lambda s: s.kind.value)
def test_zero_strength_is_identity(texture, spec):
    degraded, noise = synth_stripe(texture, spec)
    np.testing.assert_array_equal(degraded, texture)
    np.testing.assert_array_equal(noise, 0.0)


@pytest.mark.parametrize("spec", ADDITIVE_SPECS, ids=lambda s: s.kind.value)
def test_additive_noise_is_column_constant_where_unclamped(spec):
    clean = np.random.default_rng(0).uniform(0.3, 0.7, (32, 48))  # far from the clamp for |offset| < 0.3
    degraded, noise = synth_stripe(clean, spec)
    np.testing.assert_allclose(noise, np.broadcast_to(noise[:1], noise.shape), rtol=0, atol=1e-15)
    np.testing.assert_allclose(noise[0], stripe_field(spec, clean.shape)[0], atol=1e-15)


@pytest.mark.parametrize("spec", ADDITIVE_SPECS + [StripeNoiseSpec.poly3(0.3, 0.3, 0.3, 9)], ids=lambda s: s.kind.value)
def test_noise_is_exact_difference_and_clamped(texture, spec):
    degraded, noise = synth_stripe(texture, spec)
    assert np.array_equal(degraded - texture, noise)
    assert degraded.min() >= 0.0 and degraded.max() <= 1.0


def test_periodic_without_jitter_repeats():
    flat = np.full((8, 40), 0.5)
    _, noise = synth_stripe(flat, StripeNoiseSpec.periodic(4, 0.1, jitter=False, seed=3))
    np.testing.assert_array_equal(noise[:, :-4], noise[:, 4:])


def test_gaussian_offsets_have_requested_spread():
    flat = np.full((4, 512), 0.5)
    _, noise = synth_stripe(flat, StripeNoiseSpec.gaussian(0.05, seed=0))
    assert 0.04 <= noise[0].std() <= 0.06


def test_poly3_matches_formula():
    rng = np.random.default_rng(1)
    clean = rng.uniform(0.2, 0.6, (6, 10))
    spec = StripeNoiseSpec.poly3(0.01, 0.02, 0.03, seed=4)
    n1, n2, n3 = np.random.default_rng(4).normal(0, [[0.01], [0.02], [0.03]], size=(3, 10))
    want = np.clip(clean + n1 + n2 * clean + n3 * clean ** 2, 0, 1)
    np.testing.assert_allclose(synth_stripe(clean, spec)[0], want, atol=1e-15)


@pytest.mark.parametrize("spec", ADDITIVE_SPECS, ids=lambda s: s.kind.value)
def test_additive_field_wavelet_signature(spec):
    field = stripe_field(spec, (16, 32))
    bands = hdwt(Tensor(field[None, None])).data[0]
    assert np.all(bands[1] == 0.0) and np.all(bands[3] == 0.0)


def test_same_spec_same_bits(texture):
    spec = StripeNoiseSpec.poly3(0.1, 0.1, 0.1, seed=77)
    assert synth_stripe(texture, spec)[1].tobytes() == synth_stripe(texture, spec)[1].tobytes()


@pytest.mark.parametrize("kind,params", [("gaussian", (-0.1,)), ("periodic", (1, 0.1, 0)), ("periodic", (6.5, 0.1, 0)),
                                         ("uniform", (0.1, 0.2)), ("poly3", (0.1, float("nan"), 0.1))])
def test_invalid_parameters_rejected(kind, params):
    with pytest.raises(ConfigError):
        StripeNoiseSpec(kind, params)


def test_sample_spec_ranges():
    rng = np.random.default_rng(0)
    specs = [sample_spec(NoiseKind.PERIODIC, 0.1, rng, i) for i in range(200)]
    assert {int(s.params[0]) for s in specs} == {6, 7, 8, 9}
    assert all(0 <= s.params[1] <= 0.1 for s in specs)
    sig = [sample_spec("gaussian", 0.15, rng, 0).params[0] for _ in range(500)]
    assert 0 <= min(sig) and max(sig) <= 0.15 and max(sig) > 0.14


# -- textures ---------------------------------------------------------------------

def test_textures_deterministic_and_in_range():
    a, b = builtin_textures(4, 64, seed=2), builtin_textures(4, 64, seed=2)
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a, b))
    assert all(x.min() >= 0 and x.max() <= 1 and x.shape == (64, 64) for x in a)
    assert any(not np.array_equal(x, y) for x, y in zip(a, builtin_textures(4, 64, seed=3)))


def _vertical_edge_oracle(img, contrast=0.3, run=8):
    """Some column boundary has a step >= contrast over >= run consecutive rows."""
    step = np.abs(np.diff(img, axis=1)) >= contrast
    for col in step.T:
        length = 0
        for v in col:
            length = length + 1 if v else 0
            if length >= run:
                return True
    return False


def test_textures_contain_vertical_edges():
    imgs = builtin_textures(30, 96, seed=0)
    flags = [_vertical_edge_oracle(im) for im in imgs]
    assert flags == [has_vertical_step(im) for im in imgs]
    assert np.mean(flags) >= 0.2


# -- corpus -----------------------------------------------------------------------

def test_corpus_is_byte_deterministic(tmp_path):
    src = [("a", t) for t in builtin_textures(2, 96, seed=1)]
    make_corpus(src, tmp_path / "x", 10, seed=4)
    make_corpus(src, tmp_path / "y", 10, seed=4)
    for f in ("data.bin", "manifest.txt"):
        assert (tmp_path / "x" / f).read_bytes() == (tmp_path / "y" / f).read_bytes()


def test_corpus_pairs_obey_bookkeeping(tmp_path):
    src = [("a", t) for t in builtin_textures(3, 80, seed=1)]
    make_corpus(src, tmp_path, 12, patch=32, kind="poly3", level=0.2, seed=0)
    clean, degraded, recs = load_corpus(tmp_path)
    assert clean.shape == degraded.shape == (12, 32, 32)
    for c, d, r in zip(clean, degraded, recs):
        want, noise = synth_stripe(c, r.spec)
        assert np.array_equal(d, want)
        assert np.array_equal(d - c, noise)


def test_rot90_augmentation_emits_rotated_copy(tmp_path):
    img = np.linspace(0, 1, 32 * 32).reshape(32, 32)  # asymmetric, exactly one patch
    make_corpus([("ramp", img)], tmp_path, 40, patch=32, aug=("rot90",), seed=0)
    clean, _, recs = load_corpus(tmp_path)
    keys = {c.tobytes() for c in clean}
    assert np.rot90(img).astype(np.float32).tobytes() in keys
    assert {r.rot for r in recs} == {0, 1, 2, 3}


def test_fixed_params_and_levels(tmp_path):
    src = [("a", builtin_textures(1, 64, seed=0)[0])]
    recs = make_corpus(src, tmp_path, 5, patch=32, kind="periodic", params=(6, 0.05, 0), seed=1)
    assert all(r.spec.params == (6.0, 0.05, 0.0) for r in recs)
    assert len({r.spec.seed for r in recs}) == 5


def test_corpus_errors(tmp_path):
    with pytest.raises(ConfigError, match="no clean image"):
        make_corpus([("tiny", np.zeros((8, 8)))], tmp_path, 3, patch=32)
    with pytest.raises(ConfigError, match="augmentation"):
        make_corpus([("a", np.zeros((64, 64)))], tmp_path, 3, aug=("shear",))
    with pytest.raises(ConfigError):
        make_corpus([("a", np.zeros((64, 64)))], tmp_path, 3, kind="periodic", params=(1, 0.1, 0))


def test_unreadable_image_skipped_with_warning(tmp_path, caplog):
    write_gray16(tmp_path / "ok.png", np.full((8, 8), 0.25))
    (tmp_path / "bad.png").write_bytes(b"not a png")
    with caplog.at_level(logging.WARNING):
        imgs = read_dir(tmp_path)
    assert [n for n, _ in imgs] == ["ok.png"]
    assert "bad.png" in caplog.text
    assert imgs[0][1][0, 0] == pytest.approx(0.25, abs=1e-5)
