import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stacksim.config import default_scenario
from stacksim.geometry import (atom_index, geometry_report, in_plane_spacing, interlayer_distance,
                               source_distance_matrix, source_to_layer_distance, spacing_matrix,
                               transmission_delay_D2)


@pytest.mark.parametrize("m,per_row,row,col", [(1, 6, 1, 1), (7, 6, 2, 1), (36, 6, 6, 6), (6, 6, 1, 6), (5, 3, 2, 2)])
def test_atom_index(m, per_row, row, col):
    idx = atom_index(m, per_row)
    assert (idx.row, idx.col) == (row, col)


@pytest.mark.parametrize("m", [0, 37, -1])
def test_atom_index_out_of_range(m):
    with pytest.raises(IndexError):
        atom_index(m, 6)


def test_centre_atom_sits_one_gap_from_single_source():
    s = default_scenario().replace(atoms_tx=9, num_streams=1)
    d = source_to_layer_distance(1, atom_index(5, 3), s)
    assert d == pytest.approx(s.layer_gap_tx, rel=1e-15)


def test_corner_source_distance_by_hand():
    s = default_scenario().replace(num_streams=1)
    expect = math.sqrt((2.5 * 0.0107) ** 2 + (2.5 * 0.0107) ** 2 + (0.1 / 3) ** 2)
    assert source_to_layer_distance(1, atom_index(1, 6), s) == pytest.approx(expect, rel=1e-14)


def test_stream_offset_moves_along_rows():
    s = default_scenario().replace(num_streams=2, atoms_tx=9)
    lam = s.wavelength
    # centre atom; streams sit at -+ lambda/4 along the row axis
    for st_idx in (1, 2):
        expect = math.hypot(lam / 4, s.layer_gap_tx)
        assert source_to_layer_distance(st_idx, atom_index(5, 3), s) == pytest.approx(expect)


def test_invalid_stream_index():
    with pytest.raises(IndexError):
        source_to_layer_distance(4, atom_index(1, 6), default_scenario())
    with pytest.raises(ValueError):
        source_to_layer_distance(1, atom_index(1, 6), default_scenario(), side="up")


@settings(max_examples=60, deadline=None)
@given(S=st.integers(1, 5), m=st.integers(1, 36), side=st.sampled_from(["tx", "rx"]))
def test_source_distance_at_least_gap(S, m, side):
    s = default_scenario().replace(num_streams=S)
    for stream in range(1, S + 1):
        assert source_to_layer_distance(stream, atom_index(m, 6), s, side) >= s.layer_gap_tx


def test_vectorised_source_distances_match_scalar_form():
    s = default_scenario().replace(num_streams=4)
    D = source_distance_matrix(s, "rx")
    for m in (1, 8, 17, 36):
        for stream in range(1, 5):
            assert D[m - 1, stream - 1] == pytest.approx(
                source_to_layer_distance(stream, atom_index(m, 6), s, "rx"), rel=1e-14)


def test_aligned_atoms_one_gap_apart(scenario):
    a = atom_index(8, 6)
    assert interlayer_distance(a, a, scenario) == scenario.layer_gap_tx


def test_three_four_five_spacing():
    assert in_plane_spacing(atom_index(1, 6), atom_index(3 * 6 + 5, 6), 0.01) == pytest.approx(0.05)


def test_diagonal_neighbour_distance(scenario):
    expect = math.sqrt((0.0107 * math.sqrt(2)) ** 2 + (0.1 / 3) ** 2)
    assert interlayer_distance(atom_index(1, 6), atom_index(8, 6), scenario) == pytest.approx(expect, rel=1e-14)


def test_mixed_grids_rejected(scenario):
    with pytest.raises(ValueError):
        interlayer_distance(atom_index(1, 6), atom_index(1, 3), scenario)


def test_report_invariants(scenario):
    g = geometry_report(scenario)
    assert np.array_equal(g.spacing_tx, g.spacing_tx.T)
    assert g.hop_tx.min() >= g.gap_tx
    np.testing.assert_array_equal(np.diag(g.hop_tx), g.gap_tx)
    off = g.hop_tx[~np.eye(36, dtype=bool)]
    assert off.min() > g.gap_tx
    assert g.source_tx.shape == (36, 3) and g.source_rx.shape == (36, 3)


def test_report_table_has_one_row_per_pair():
    s = default_scenario().replace(atoms_tx=4, atoms_rx=4, num_streams=2)
    text = geometry_report(s).to_table()
    lines = text.strip().splitlines()
    assert lines[0].startswith("kind\tside")
    assert len(lines) == 1 + 2 * 4 * 2 + 2 * 16 + 1


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 36), st.integers(1, 36), st.integers(1, 36))
def test_spacing_triangle_inequality(i, j, k):
    r = spacing_matrix(6, 0.0107)
    assert r[i - 1, k - 1] <= r[i - 1, j - 1] + r[j - 1, k - 1] + 1e-15


def test_single_atom_single_layer_delay():
    s = default_scenario().replace(atoms_tx=1, atoms_rx=1, num_streams=1, layers_tx=1, layers_rx=1)
    assert transmission_delay_D2(s) == pytest.approx(0.1 / 3e8 + 0.1 / 3e8, rel=1e-14)


def _brute_force_d2(s):
    """Longest atom chain per stream, enumerated exhaustively."""
    best = 0.0
    for stream in range(1, s.num_streams + 1):
        total = 0.0
        for side, layers, speed in (("tx", s.layers_tx, s.wave_speed_tx), ("rx", s.layers_rx, s.wave_speed_rx)):
            per_row = math.isqrt(s.atoms_tx if side == "tx" else s.atoms_rx)
            n = per_row * per_row
            longest = 0.0
            for chain in itertools.product(range(1, n + 1), repeat=layers):
                idx = [atom_index(m, per_row) for m in chain]
                length = source_to_layer_distance(stream, idx[0], s, side)
                for a, b in zip(idx, idx[1:]):
                    length += interlayer_distance(a, b, s, side)
                longest = max(longest, length)
            total += longest / speed
        best = max(best, total)
    return best


@pytest.mark.parametrize("S", [1, 2, 3])
def test_worst_case_delay_matches_exhaustive_chains(S):
    s = default_scenario().replace(atoms_tx=4, atoms_rx=4, num_streams=S, layers_tx=3, layers_rx=3)
    assert transmission_delay_D2(s) == pytest.approx(_brute_force_d2(s), rel=1e-13)


def test_aligned_path_is_shorter(scenario):
    assert transmission_delay_D2(scenario, "aligned") < transmission_delay_D2(scenario, "worst")
    with pytest.raises(ValueError):
        transmission_delay_D2(scenario, "scenic")


def test_delay_grows_with_layers_at_fixed_gap():
    gap = 0.1 / 3
    values = [transmission_delay_D2(default_scenario().replace(
        layers_tx=L, layers_rx=L, thickness_tx=gap * L, thickness_rx=gap * L)) for L in range(1, 6)]
    assert all(b > a for a, b in zip(values, values[1:]))


def test_default_delay_value(scenario):
    # geometry only: repeated calls agree, nanosecond scale
    assert transmission_delay_D2(scenario) == transmission_delay_D2(scenario)
    assert 1e-9 < transmission_delay_D2(scenario) < 2e-9
