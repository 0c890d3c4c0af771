import cmath
import math
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from carsfit.errors import DomainError, FormatError, VersionError
from carsfit.library import sample_physical_parameters
from carsfit.oracle import (
    DEFAULT_BOXES,
    PHYSICAL_LIMITS,
    OracleConfig,
    ParameterVector,
    WavenumberGrid,
    add_noise,
    generate_spectrum,
    oracle_cost_model,
)


@pytest.fixture(scope="module")
def grid():
    return WavenumberGrid.uniform(512)


def hand_log_intensity(temperature, nu, offset, spacing, energy, width, n_lines=8):
    """Scalar evaluation of log|sum_l a_l / (p_l - nu - i sigma)|^2 with cmath."""
    sigma = width * (1 + 0.5 * temperature / 1000)
    total = 0j
    for l in range(1, n_lines + 1):
        a = math.exp(-energy * l / (temperature / 1000))
        total += a / complex(offset + l * spacing - nu, -sigma)
    return math.log(abs(total) ** 2)


def test_pure_water_is_flat_nonresonant(grid):
    cfg = OracleConfig()
    r = generate_spectrum(ParameterVector(1500.0, 0.0, 0.0, 0.0, 1.0), grid, cfg, boxes=PHYSICAL_LIMITS)
    np.testing.assert_allclose(r, math.log(cfg.nonresonant**2), rtol=0, atol=1e-15)


def test_deterministic(grid):
    x = ParameterVector(1234.5, 0.5, 0.2, 0.1, 0.2)
    a = generate_spectrum(x, grid)
    b = generate_spectrum(x, grid)
    assert a.tobytes() == b.tobytes()


def test_single_species_matches_hand_evaluation():
    grid = WavenumberGrid(np.array([0.0, 0.5]))
    r = generate_spectrum([1500.0, 1.0, 0.0, 0.0, 0.0], grid, boxes=PHYSICAL_LIMITS)
    expected = hand_log_intensity(1500.0, 0.5, offset=0.05, spacing=0.03, energy=0.3, width=0.004)
    assert r[1] == pytest.approx(expected, rel=1e-13)


def test_out_of_box_is_domain_error(grid):
    with pytest.raises(DomainError):
        generate_spectrum([400.0, 0.5, 0.2, 0.1, 0.2], grid)
    with pytest.raises(DomainError):
        generate_spectrum([1500.0, 0.9, 0.0, 0.0, 0.1], grid)


def test_grid_validation():
    with pytest.raises(DomainError):
        WavenumberGrid(np.array([0.5]))
    with pytest.raises(DomainError):
        WavenumberGrid(np.array([0.2, 0.1]))
    with pytest.raises(DomainError):
        WavenumberGrid(np.array([0.0, 1.5]))


def test_species_influence(grid):
    base = np.array([1500.0, 0.5, 0.2, 0.1, 0.2])
    r0 = generate_spectrum(base, grid)
    for j in range(5):
        bumped = base.copy()
        bumped[j] += 10.0 if j == 0 else 0.01
        assert np.max(np.abs(generate_spectrum(bumped, grid) - r0)) > 0


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_continuity(seed):
    grid = WavenumberGrid.uniform(256)
    x = sample_physical_parameters(1, rng_seed=seed)[0]
    direction = np.random.default_rng(seed).normal(size=5)
    direction /= np.linalg.norm(direction)
    width = DEFAULT_BOXES[:, 1] - DEFAULT_BOXES[:, 0]
    shifted = np.clip(x + 1e-6 * direction * width, DEFAULT_BOXES[:, 0], DEFAULT_BOXES[:, 1])
    assert np.max(np.abs(generate_spectrum(shifted, grid) - generate_spectrum(x, grid))) <= 1e-3


def test_noise_infinite_snr_is_identity(grid):
    r = generate_spectrum([1500.0, 0.5, 0.2, 0.1, 0.2], grid)
    assert np.array_equal(add_noise(r, math.inf, 3), r)


def test_noise_seeded(grid):
    r = generate_spectrum([1500.0, 0.5, 0.2, 0.1, 0.2], grid)
    assert np.array_equal(add_noise(r, 50, 11), add_noise(r, 50, 11))
    assert not np.array_equal(add_noise(r, 50, 11), add_noise(r, 50, 12))


def test_noise_std_and_mean_monte_carlo():
    clean = np.full(10**6, 1.7)
    diff = add_noise(clean, 50, 2024) - clean
    assert abs(diff.std() - 0.02) <= 0.01 * 0.02
    assert abs(diff.mean()) <= 3 * 0.02 / math.sqrt(diff.size)


@pytest.mark.parametrize("snr", [0, -1.0])
def test_noise_rejects_nonpositive_snr(snr):
    with pytest.raises(DomainError):
        add_noise(np.zeros(4), snr, 0)


def test_cost_model_delay(grid):
    x = [1500.0, 0.5, 0.2, 0.1, 0.2]
    assert oracle_cost_model(OracleConfig()) == 0.0
    slow = OracleConfig(delay_seconds=1.0)
    assert oracle_cost_model(slow) == 1.0
    t0 = time.perf_counter()
    r = generate_spectrum(x, grid, slow)
    assert time.perf_counter() - t0 >= 1.0
    assert np.array_equal(r, generate_spectrum(x, grid))


def test_cost_model_accumulates(grid):
    cfg = OracleConfig(delay_seconds=0.05)
    t0 = time.perf_counter()
    for _ in range(10):
        generate_spectrum([1500.0, 0.5, 0.2, 0.1, 0.2], grid, cfg)
    assert time.perf_counter() - t0 >= 0.5


def test_config_json_round_trip(tmp_path):
    cfg = OracleConfig(delay_seconds=0.25)
    cfg.save(tmp_path / "oracle.json")
    again = OracleConfig.load(tmp_path / "oracle.json")
    assert again == cfg
    assert again.digest() == OracleConfig().digest()  # delay does not change spectra


def test_config_version_and_format_errors(tmp_path):
    d = OracleConfig().to_dict()
    d["schema"] = 2
    with pytest.raises(VersionError):
        OracleConfig.from_dict(d)
    (tmp_path / "bad.json").write_text("{not json", encoding="utf-8")
    with pytest.raises(FormatError):
        OracleConfig.load(tmp_path / "bad.json")


def test_parameter_vector_helpers():
    pv = ParameterVector.from_array([1000, 0.5, 0.2, 0.1, 0.2])
    assert pv.temperature == 1000
    assert pv.is_physical()
    assert not ParameterVector(1000, 0.5, 0.2, 0.1, 0.3).is_physical()
