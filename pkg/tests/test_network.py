"""測試網路模型 - 導納矩陣、三角形接線關聯矩陣與 JSON 載入。"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest

import der_feedback_simulator
from der_feedback_simulator.errors import PhaseError, SchemaError, TopologyError, UnknownLineError
from der_feedback_simulator.network import (
    InjectionPoint,
    PhaseConnection,
    build_admittance,
    build_delta_incidence,
    load_grid,
    parse_connection,
    phase_index,
)

FEEDERS = Path(der_feedback_simulator.__file__).parent / "feeders"
Z = complex(0.02, 0.04)


def two_node(**line_extra) -> dict:
    return {
        "nodes": [{"id": 0, "phases": "abc"}, {"id": 1, "phases": "a"}],
        "lines": [{"id": 1, "from": 0, "to": 1, "phases": "a", "z_series": [Z.real, Z.imag], **line_extra}],
    }


@pytest.fixture(scope="module")
def grid13():
    return load_grid(FEEDERS / "feeder_13node.json")


# ── 導納矩陣 ─────────────────────────────────────────────────────


class TestBuildAdmittance:
    """測試 build_admittance()。"""

    def test_two_node_blocks(self):
        """單相兩節點：Y = [[y, -y], [-y, y]]。"""
        y = 1.0 / Z
        blocks = build_admittance(load_grid(two_node()))
        assert blocks.n_phi == 1
        assert blocks.Y00[0, 0] == pytest.approx(y)
        assert blocks.Y0L[0, 0] == pytest.approx(-y)
        assert blocks.YL0[0, 0] == pytest.approx(-y)
        assert blocks.YLL[0, 0] == pytest.approx(y)
        # 未接線的 b、c 相
        np.testing.assert_allclose(blocks.Y00[1:, 1:], 0.0)

    def test_shunt_split_between_ends(self):
        """並聯導納兩端各掛一半。"""
        y = 1.0 / Z
        blocks = build_admittance(load_grid(two_node(y_shunt=[0.0, 0.1])))
        assert blocks.YLL[0, 0] == pytest.approx(y + 0.05j)
        assert blocks.Y00[0, 0] == pytest.approx(y + 0.05j)
        assert blocks.Y0L[0, 0] == pytest.approx(-y)

    def test_row_sums_vanish_without_shunts(self, grid13):
        """無並聯元件時，完整 Y 每列總和為 0。"""
        full = build_admittance(grid13).full
        np.testing.assert_allclose(full.sum(axis=1), 0.0, atol=1e-9)

    def test_diagonal_matches_incident_lines(self, grid13):
        """對角元素等於所有相接線路的自導納總和。"""
        blocks = build_admittance(grid13)
        expected = np.zeros(blocks.n_phi, dtype=complex)
        for line in grid13.lines:
            for end in (line.from_node, line.to_node):
                if end == 0:
                    continue
                for n, ph in enumerate(line.phases):
                    expected[blocks.phase_index[(end, ph)]] += line.y_series[n, n]
        np.testing.assert_allclose(np.diag(blocks.YLL), expected, rtol=1e-12)

    def test_phase_index_is_bijection(self, grid13):
        index = phase_index(grid13)
        assert sorted(index.values()) == list(range(len(index)))
        assert (0, "a") not in index

    def test_isolated_phase_rejected(self):
        """節點的 b 相沒有任何線路連回饋線頭。"""
        raw = two_node()
        raw["nodes"][1]["phases"] = "ab"
        with pytest.raises(TopologyError):
            build_admittance(load_grid(raw))

    def test_only_slack_rejected(self):
        raw = {"nodes": [{"id": 0, "phases": "abc"}], "lines": []}
        with pytest.raises(TopologyError):
            build_admittance(load_grid(raw))


# ── 三角形接線 ───────────────────────────────────────────────────


class TestDeltaIncidence:
    """測試 build_delta_incidence()。"""

    def test_no_delta_devices(self, grid13):
        inc = build_delta_incidence(grid13, [(4, PhaseConnection.A)])
        np.testing.assert_array_equal(inc.H, 0.0)
        assert inc.delta_index == {}

    def test_single_ab_row(self, grid13):
        index = phase_index(grid13)
        inc = build_delta_incidence(grid13, [(2, PhaseConnection.AB)])
        row = index[(2, "a")]
        assert inc.H[row, index[(2, "a")]] == 1.0
        assert inc.H[row, index[(2, "b")]] == -1.0
        assert inc.H[row, index[(2, "c")]] == 0.0
        assert inc.delta_index == {(2, PhaseConnection.AB): row}

    def test_full_delta_block(self, grid13):
        """完整三角形接線：H v 給出三個線間電壓。"""
        index = phase_index(grid13)
        inc = build_delta_incidence(grid13, [(3, c) for c in parse_connection("delta")])
        cols = [index[(3, ph)] for ph in "abc"]
        block = inc.H[np.ix_(cols, cols)]
        np.testing.assert_array_equal(block, [[1, -1, 0], [0, 1, -1], [-1, 0, 1]])

        v = np.zeros(len(index), dtype=complex)
        phasors = np.exp(-2j * np.pi / 3 * np.arange(3))
        v[cols] = phasors
        v_ll = (inc.H @ v)[cols]
        expected = [phasors[0] - phasors[1], phasors[1] - phasors[2], phasors[2] - phasors[0]]
        np.testing.assert_allclose(v_ll, expected)
        np.testing.assert_allclose(np.abs(v_ll), np.sqrt(3.0))

    def test_missing_phase_raises(self, grid13):
        """節點 10 只有 a 相，無法接 ab。"""
        with pytest.raises(PhaseError):
            build_delta_incidence(grid13, [(10, PhaseConnection.AB)])


# ── 接線與注入點 ─────────────────────────────────────────────────


class TestConnections:

    def test_parse_abc(self):
        assert parse_connection("abc") == (PhaseConnection.A, PhaseConnection.B, PhaseConnection.C)

    def test_parse_list(self):
        assert parse_connection(["ab", "c"]) == (PhaseConnection.AB, PhaseConnection.C)

    def test_parse_unknown(self):
        with pytest.raises(SchemaError):
            parse_connection("ba")

    def test_delta_flags(self):
        assert PhaseConnection.CA.is_delta
        assert PhaseConnection.CA.phases == ("c", "a")
        assert not PhaseConnection.B.is_delta

    def test_injection_at_slack_rejected(self, grid13):
        with pytest.raises(PhaseError):
            InjectionPoint(0, (PhaseConnection.A,)).validate(grid13)

    def test_injection_missing_phase(self, grid13):
        with pytest.raises(PhaseError):
            InjectionPoint(9, (PhaseConnection.A,)).validate(grid13)


# ── JSON 載入 ────────────────────────────────────────────────────


class TestLoadGrid:

    def test_shipped_feeders(self, grid13):
        grid4 = load_grid(FEEDERS / "feeder_4node.json")
        assert len(grid4.nodes) == 4
        assert len(grid13.nodes) == 13
        assert grid13.base.kva == pytest.approx(1000.0)

    def test_siemens_units_scaled_by_base(self):
        """units=siemens 時阻抗以歐姆給定，除以 z_base 換成 p.u.。"""
        raw = two_node()
        raw["units"] = "siemens"
        raw["base"] = {"kv_ln": 2.4, "kva": 1000.0}
        z_base = 2400.0**2 / 1e6
        blocks = build_admittance(load_grid(raw))
        assert blocks.YLL[0, 0] == pytest.approx(z_base / Z)

    def test_unknown_field(self):
        raw = two_node()
        raw["colour"] = "red"
        with pytest.raises(SchemaError):
            load_grid(raw)

    def test_line_needs_exactly_one_impedance(self):
        raw = two_node(y_series=[1.0, -2.0])
        with pytest.raises(SchemaError):
            load_grid(raw)

    def test_line_to_missing_node(self):
        raw = two_node()
        raw["lines"][0]["to"] = 5
        with pytest.raises(TopologyError):
            load_grid(raw)

    def test_unknown_line_lookup(self, grid13):
        with pytest.raises(UnknownLineError):
            grid13.line(99)
