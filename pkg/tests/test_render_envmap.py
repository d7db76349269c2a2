import numpy as np
import pytest

from texdistill.assets.hdr import EnvironmentMap
from texdistill.errors import ConfigError
from texdistill.render import env_brdf_lut, make_studio_env, make_training_env, prefilter_env
from texdistill.render.envmap import (_equirect_dirs, _equirect_solid_angles,
                                      _fetch_bilinear)


@pytest.fixture(scope="module")
def lut():
    return env_brdf_lut(64)


def test_prefilter_requires_two_levels():
    env = EnvironmentMap(np.ones((8, 16, 3), np.float32))
    with pytest.raises(ConfigError):
        prefilter_env(env, mips=1)


def test_constant_env_stays_constant():
    env = EnvironmentMap(np.full((32, 64, 3), 0.7, np.float32))
    penv = prefilter_env(env, mips=4, samples_per_texel=64)
    for lvl in penv.levels:
        assert np.abs(lvl - 0.7).max() < 0.007  # within 1%
    assert np.abs(penv.irradiance - 0.7).max() < 0.007


def test_zero_env_all_zero():
    env = EnvironmentMap(np.zeros((16, 32, 3), np.float32))
    penv = prefilter_env(env, mips=3, samples_per_texel=32)
    for lvl in penv.levels:
        assert np.all(lvl == 0.0)
    assert np.all(penv.irradiance == 0.0)


def test_impulse_spreads_monotonically():
    rad = np.zeros((32, 64, 3), np.float32)
    rad[10, 20] = 200.0
    env = EnvironmentMap(rad)
    penv = prefilter_env(env, mips=5, samples_per_texel=128)

    peaks, spreads = [], []
    impulse_dir = _equirect_dirs(32, 64)[10, 20]
    for lvl in penv.levels[1:]:
        lum = lvl.mean(axis=-1)
        peaks.append(lum.max())
        dirs = _equirect_dirs(*lvl.shape[:2])
        w = lum * _equirect_solid_angles(*lvl.shape[:2])
        ang = np.arccos(np.clip(dirs @ impulse_dir, -1, 1))
        spreads.append(float((w * ang).sum() / max(w.sum(), 1e-12)))
    assert all(a > b for a, b in zip(peaks, peaks[1:]))
    assert all(a < b for a, b in zip(spreads, spreads[1:]))


def ggx_reference_convolution(src, direction, roughness, h, w):
    """Direct quadrature of the prefiltering estimator's expectation."""
    n = direction / np.linalg.norm(direction)
    dirs = _equirect_dirs(h, w).reshape(-1, 3)
    dw = _equirect_solid_angles(h, w).reshape(-1)
    nol = dirs @ n
    keep = nol > 0
    half = dirs[keep] + n
    half /= np.linalg.norm(half, axis=1, keepdims=True)
    noh = np.clip(half @ n, 0, 1)
    alpha = roughness ** 2
    d = alpha ** 2 / (np.pi * ((noh ** 2) * (alpha ** 2 - 1) + 1) ** 2)
    # pdf of sampled light directions with N=V is D*NoH/(4*VoH) = D/4
    weight = nol[keep] * d / 4.0 * dw[keep]
    radiance = _fetch_bilinear(src.astype(np.float64), dirs[keep])
    return (radiance * weight[:, None]).sum(axis=0) / weight.sum()


def test_prefilter_matches_reference_convolution():
    rng = np.random.default_rng(5)
    # smooth random environment at high resolution so quadrature resolves the lobe
    base = rng.uniform(0.2, 2.0, (16, 32, 3))
    src = np.clip(_fetch_bilinear(base, _equirect_dirs(128, 256)), 0, None).astype(np.float32)
    env = EnvironmentMap(src)
    penv = prefilter_env(env, mips=5, samples_per_texel=256)

    for k in (2, 3):
        lvl = penv.levels[k]
        roughness = k / 4
        hh, ww = lvl.shape[:2]
        for (ty, tx) in [(hh // 3, ww // 4), (hh // 2, 3 * ww // 4)]:
            direction = _equirect_dirs(hh, ww)[ty, tx]
            ref = ggx_reference_convolution(src, direction, roughness, 128, 256)
            got = lvl[ty, tx]
            assert np.abs(got - ref).max() / ref.max() < 0.05


def test_lut_bounds_and_limits(lut):
    assert lut.shape == (64, 64, 2)
    assert lut.min() >= 0.0
    assert lut.max() <= 1.0
    assert (lut.sum(axis=-1) <= 1.01).all()
    # smooth limit: roughness -> 0 at NoV = 1 gives (A, B) -> (1, 0)
    a, b = lut[0, -1]
    assert abs(a - 1.0) < 0.02
    assert abs(b) < 0.02


def test_lut_rejects_small_resolution():
    with pytest.raises(ConfigError):
        env_brdf_lut(8)


def test_builtin_envs():
    train = make_training_env()
    studio = make_studio_env()
    for env in (train, studio):
        env.validate()
        assert env.width == 2 * env.height
    # training rig: single dominant source, weak ambient
    lum = train.radiance.mean(axis=-1)
    assert lum.max() > 20 * np.median(lum)
    assert not np.allclose(train.radiance, studio.radiance)
