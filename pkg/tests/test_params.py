import math

import pytest

from sbmlab.params import derive_params

TOL = 1e-12


@pytest.mark.parametrize("d", [2, 3])
def test_identities(d):
    mp = derive_params(d)
    assert abs(mp.p - (mp.mu + mp.nu)) < TOL
    assert abs(mp.d_f - (d + 2 - mp.p)) < TOL
    assert abs(mp.alpha * (4 - d) - (mp.p - 2)) < TOL
    assert abs(mp.nu - math.sqrt(mp.mu**2 + 4 * (4 - d))) < TOL
    assert abs(mp.lambda_d - 2 * (4 - d)) < TOL


def test_d2_values():
    mp = derive_params(2)
    assert mp.mu == 0.0
    assert abs(mp.p - 2 * math.sqrt(2)) < TOL
    assert abs(mp.d_f - (4 - 2 * math.sqrt(2))) < TOL
    assert abs(mp.alpha - (math.sqrt(2) - 1)) < TOL
    assert abs(mp.nu - 2 * math.sqrt(2)) < TOL
    # decimal anchors
    assert mp.p == pytest.approx(2.828427, abs=1e-6)
    assert mp.d_f == pytest.approx(1.171573, abs=1e-6)


def test_d3_values():
    mp = derive_params(3)
    s17 = math.sqrt(17)
    assert mp.mu == 0.5
    assert abs(mp.p - (1 + s17) / 2) < TOL
    assert abs(mp.d_f - (9 - s17) / 2) < TOL
    assert abs(mp.alpha - (s17 - 3) / 2) < TOL
    assert mp.p == pytest.approx(2.561553, abs=1e-6)
    assert mp.d_f == pytest.approx(2.438447, abs=1e-6)


@pytest.mark.parametrize("d", [0, 1, 4, -1])
def test_rejects_bad_dimension(d):
    with pytest.raises(ValueError):
        derive_params(d)


def test_immutable():
    mp = derive_params(2)
    with pytest.raises(Exception):
        mp.p = 3.0
