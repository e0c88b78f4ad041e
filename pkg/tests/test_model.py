from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from paralangevin.model import (
    LangevinParams,
    NodeTrajectory,
    PhaseState,
    read_trajectory_csv,
    write_trajectory_csv,
)


def _traj(positions, momenta=None):
    states = []
    for i, q in enumerate(positions):
        p = momenta[i] if momenta is not None else [0.0] * len(q)
        states.append(PhaseState(q=q, p=p))
    return NodeTrajectory(tuple(states))


class TestPhaseState:
    def test_basic(self):
        s = PhaseState(q=[1.0, 2.0], p=[3.0, 4.0])
        assert s.dim == 2
        assert np.array_equal(s.q, [1.0, 2.0])

    def test_rejects_nonfinite(self):
        with pytest.raises(ValueError):
            PhaseState(q=[np.nan], p=[0.0])
        with pytest.raises(ValueError):
            PhaseState(q=[0.0], p=[np.inf])

    def test_rejects_dimension_mismatch(self):
        with pytest.raises(ValueError):
            PhaseState(q=[1.0, 2.0], p=[1.0])

    def test_rejects_empty_and_nonvector(self):
        with pytest.raises(ValueError):
            PhaseState(q=[], p=[])
        with pytest.raises(ValueError):
            PhaseState(q=[[1.0]], p=[[1.0]])

    def test_immutable(self):
        s = PhaseState(q=[1.0], p=[2.0])
        with pytest.raises(ValueError):
            s.q[0] = 5.0

    def test_input_aliasing_is_safe(self):
        src = np.array([1.0, 2.0])
        s = PhaseState(q=src, p=[0.0, 0.0])
        src[0] = 99.0
        assert s.q[0] == 1.0

    def test_equality(self):
        assert PhaseState(q=[1.0], p=[2.0]) == PhaseState(q=[1.0], p=[2.0])
        assert PhaseState(q=[1.0], p=[2.0]) != PhaseState(q=[1.0], p=[2.5])


class TestLangevinParams:
    def test_window_dt_derived(self):
        p = LangevinParams(gamma=1.0, inv_beta=1.0, dt=0.25, substeps=4)
        assert p.window_dt == 1.0

    def test_rejects_gamma_dt_at_stability_bound(self):
        with pytest.raises(ValueError):
            LangevinParams(gamma=2.0, inv_beta=1.0, dt=1.0)
        LangevinParams(gamma=1.9, inv_beta=1.0, dt=1.0)  # below the bound is fine

    def test_gamma_zero_allowed(self):
        p = LangevinParams(gamma=0.0, inv_beta=0.0, dt=0.1)
        assert p.gamma == 0.0

    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(gamma=-1.0, inv_beta=1.0, dt=0.1),
            dict(gamma=1.0, inv_beta=-0.5, dt=0.1),
            dict(gamma=1.0, inv_beta=1.0, dt=0.0),
            dict(gamma=1.0, inv_beta=1.0, dt=0.1, substeps=0),
            dict(gamma=1.0, inv_beta=1.0, dt=0.1, mass=[0.0]),
            dict(gamma=1.0, inv_beta=1.0, dt=0.1, mass=[1.0, -2.0]),
        ],
    )
    def test_rejects_invalid(self, kwargs):
        with pytest.raises(ValueError):
            LangevinParams(**kwargs)

    def test_mass_vector(self):
        p = LangevinParams(gamma=1.0, inv_beta=1.0, dt=0.1, mass=[1.0, 2.0])
        assert np.array_equal(p.mass_vector(2), [1.0, 2.0])
        with pytest.raises(ValueError):
            p.mass_vector(3)
        unit = LangevinParams(gamma=1.0, inv_beta=1.0, dt=0.1)
        assert np.array_equal(unit.mass_vector(3), [1.0, 1.0, 1.0])


class TestNodeTrajectory:
    def test_slice_reindexes(self):
        t = _traj([[0.0], [1.0], [2.0], [3.0]])
        s = t.slice(1, 3)
        assert s.n_windows == 2
        assert s[0].q[0] == 1.0
        assert s[2].q[0] == 3.0

    def test_slice_range_errors(self):
        t = _traj([[0.0], [1.0], [2.0]])
        with pytest.raises(IndexError):
            t.slice(2, 1)
        with pytest.raises(IndexError):
            t.slice(0, 3)
        with pytest.raises(IndexError):
            t.slice(-1, 1)

    def test_single_node_trajectory(self):
        t = _traj([[5.0]])
        assert t.n_windows == 0
        assert t.slice(0, 0) == t

    def test_rejects_mixed_dimensions(self):
        with pytest.raises(ValueError):
            NodeTrajectory(
                (PhaseState(q=[1.0], p=[0.0]), PhaseState(q=[1.0, 2.0], p=[0.0, 0.0]))
            )

    @given(
        st.integers(min_value=1, max_value=12),
        st.integers(min_value=0, max_value=12),
        st.random_module(),
    )
    @settings(max_examples=50, deadline=None)
    def test_slice_concat_roundtrip(self, n_windows, cut, _rng):
        cut = min(cut, n_windows)
        rng = np.random.default_rng(0)
        qs = rng.normal(size=(n_windows + 1, 2))
        t = _traj(qs.tolist())
        left = t.slice(0, cut)
        right = t.slice(cut, n_windows)
        rebuilt = NodeTrajectory(left.states + right.states[1:])
        assert rebuilt == t


class TestTrajectoryCsv:
    def test_roundtrip_bitwise(self, tmp_path):
        rng = np.random.default_rng(7)
        states = tuple(
            PhaseState(q=rng.normal(size=3) * 10.0**k, p=rng.normal(size=3))
            for k in range(-3, 4)
        )
        t = NodeTrajectory(states)
        path = tmp_path / "traj.csv"
        write_trajectory_csv(t, path, window_dt=0.125)
        back = read_trajectory_csv(path)
        assert back == t

    def test_header_and_time_column(self, tmp_path):
        t = _traj([[0.0, 0.0], [1.0, -1.0]])
        path = tmp_path / "traj.csv"
        write_trajectory_csv(t, path, window_dt=0.5)
        lines = path.read_text().strip().splitlines()
        assert lines[0] == "n,t,q_0,q_1,p_0,p_1"
        assert lines[1].startswith("0,0,")
        assert lines[2].startswith("1,0.5,")

    def test_rejects_unknown_header(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("a,b,c\n1,2,3\n")
        with pytest.raises(ValueError):
            read_trajectory_csv(path)
