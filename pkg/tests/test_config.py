import math
import textwrap

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nhspin.config import (
    SCENARIOS,
    ConfigError,
    ExperimentSpec,
    UnitError,
    parse_config,
    parse_config_text,
    parse_quantity,
    preset,
    scenario_presets,
    serialize,
    spec_from_dict,
)
from nhspin.effective import EffectiveModel


@pytest.mark.parametrize("text,kind,value", [
    ("13 MHz", "frequency", 13e6), ("247 kHz", "frequency", 247e3), ("2.87 GHz", "frequency", 2.87e9),
    ("0.1 kHz", "frequency", 100.0), ("10 uT", "field", 10e-6), ("10 μT", "field", 10e-6),
    ("51.4 mT", "field", 0.0514), ("0.7 ms", "time", 7e-4), ("3 s", "time", 3.0), ("5 us", "time", 5e-6),
    ("1e3 Hz", "frequency", 1e3), ("28.024 GHz/T", "gyro", 28.024e9),
])
def test_parse_quantity(text, kind, value):
    assert parse_quantity(text, kind) == pytest.approx(value, rel=1e-12)


@pytest.mark.parametrize("text", ["13 Mhzz", "13", "MHz", "13 T", 13, True, None])
def test_parse_quantity_rejects(text):
    with pytest.raises(UnitError):
        parse_quantity(text, "frequency", "chain.J_d")


def test_malformed_unit_names_the_key():
    text = textwrap.dedent("""\
        scenario: pair_dynamics
        chain:
          sites:
            - {A_zz: 13 Mhzz}
            - {}
        """)
    with pytest.raises(UnitError) as info:
        parse_config_text(text)
    assert info.value.key == "chain.sites[0].A_zz"
    assert "13 Mhzz" in str(info.value)
    assert info.value.line == 4


def test_unknown_key_is_fatal():
    with pytest.raises(ConfigError) as info:
        parse_config_text("scenario: effective_chain\neffective: {n_sites: 4, Gamma_e: 100 Hz, rat: 1 Hz}\n")
    assert info.value.key == "effective.rat"
    with pytest.raises(ConfigError):
        parse_config_text("scenario: ep_scan\ncolour: blue\n")


@pytest.mark.parametrize("text,key", [
    ("chain: {}\n", "scenario"),
    ("scenario: warp_drive\n", "scenario"),
    ("scenario: pair_dynamics\n", "chain"),
    ("scenario: effective_chain\nchain: {n_sites: 2}\n", "effective"),
    ("scenario: defect_protocol\nchain: {n_sites: 3}\n", "protocol"),
    ("scenario: ep_scan\nt_max: 0 s\n", "t_max"),
    ("scenario: ep_scan\nn_traj: 0\n", "n_traj"),
    ("scenario: ep_scan\nn_outputs: 2.5\n", "n_outputs"),
    ("scenario: effective_chain\neffective: {n_sites: 3, rate: 1 Hz, Gamma_e: 1 Hz}\n", "effective"),
    ("scenario: effective_tree\neffective: {topology: tree, directed: [[1, 9, 1 Hz]], n_sites: 3}\n", "effective"),
])
def test_missing_or_invalid_fields(text, key):
    with pytest.raises(ConfigError) as info:
        parse_config_text(text)
    assert info.value.key == key


def test_yaml_syntax_error_has_line():
    with pytest.raises(ConfigError) as info:
        parse_config_text("scenario: ep_scan\noptions: {J_eff: [\n")
    assert info.value.line is not None


def test_parse_config_file(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("scenario: effective_ring\neffective: {n_sites: 5, topology: ring, Gamma_e: 100 Hz}\n"
                 "initial_state: [1, 0, 0, 0, 0]\nt_max: 2 s\n")
    spec = parse_config(p)
    assert spec.chain == EffectiveModel.ring(5, abs(math.log(7 / 8)) * 100)
    assert spec.initial_state == (1, 0, 0, 0, 0)


# ---------------------------------------------------------------------------
# presets


def test_preset_count_and_validity():
    presets = scenario_presets()
    assert len(presets) >= 8
    for name, spec in presets.items():
        assert isinstance(spec, ExperimentSpec)
        assert spec.scenario in SCENARIOS
        assert parse_config_text(serialize(spec)) == spec, name


def test_fig2b_preset():
    s = preset("fig2b")
    c = s.chain
    assert c.J_d == 247e3
    assert all(x.A_zz == x.A_zx == 13e6 and x.Ap_zz == x.Ap_zx == 4e6 for x in c.sites)
    assert s.gamma_op_factor == 1.0
    assert s.field_mode == "matching"


def test_fig4_preset():
    s = preset("fig4")
    assert s.chain.J_d == 62e3
    assert s.chain.Gamma_e == 100.0
    assert s.gamma_op_factor == pytest.approx(1.0)
    assert s.chain.n_sites == 4


def test_fig7_preset():
    s = preset("fig7")
    assert s.chain.n_sites == 10
    assert s.chain.topology == "open"
    for _, _, r in s.chain.directed_bonds:
        assert r == pytest.approx(abs(math.log(7 / 8)) * 100)
        assert r == pytest.approx(13.35, abs=0.01)


def test_fig5b_preset():
    m = preset("fig5b").chain
    assert m.topology == "tree"
    assert m.directed_bonds == ((5, 6, 13.0),)
    assert len(m.coherent_bonds) == 4
    assert all(J == 547.0 for _, _, J in m.coherent_bonds)


def test_fig8_preset():
    s = preset("fig8")
    assert [x.Ap_zz for x in s.chain.sites] == [3.75e6, 4.25e6, 3.75e6]
    assert [x.Ap_zx for x in s.chain.sites] == [3.75e6, 4.25e6, 3.75e6]
    assert s.protocol.amplitude == pytest.approx(10e-6)
    assert s.protocol.waveform == "triangular"


def test_unknown_preset():
    with pytest.raises(ConfigError):
        preset("fig99")


# ---------------------------------------------------------------------------
# round trip

rates = st.floats(1e-3, 1e6, allow_nan=False, allow_infinity=False)


@st.composite
def effective_specs(draw):
    n = draw(st.integers(3, 12))
    topo = draw(st.sampled_from(["open", "ring"]))
    rate = draw(rates)
    model = EffectiveModel.chain(n, rate) if topo == "open" else EffectiveModel.ring(n, rate)
    init = draw(st.one_of(st.sampled_from(["unpolarized", "random"]),
                          st.lists(st.integers(0, 1), min_size=n, max_size=n).map(tuple)))
    return ExperimentSpec("effective_chain" if topo == "open" else "effective_ring", model, init,
                          t_max=draw(st.floats(1e-6, 1e3)), n_outputs=draw(st.integers(2, 500)),
                          n_traj=draw(st.integers(1, 10**6)), master_seed=draw(st.integers(0, 2**63 - 1)))


@st.composite
def chain_specs(draw):
    from dataclasses import replace

    base = preset("fig8")
    sites = tuple(replace(s, Ap_zz=draw(rates), A_zx=draw(rates)) for s in base.chain.sites)
    chain = replace(base.chain, sites=sites, J_d=draw(rates), Gamma_e=draw(rates))
    proto = replace(base.protocol, frequency=draw(rates), amplitude=draw(st.floats(1e-9, 1e-3)),
                    steps_per_period=4 * draw(st.integers(1, 100)))
    return replace(base, chain=chain, protocol=proto, gamma_op_factor=draw(st.floats(0.01, 100.0)),
                   master_seed=draw(st.integers(0, 2**63 - 1)))


@settings(max_examples=100)
@given(st.one_of(effective_specs(), chain_specs()))
def test_round_trip(spec):
    assert parse_config_text(serialize(spec)) == spec


def test_with_seed():
    s = preset("fig4").with_seed(99)
    assert s.master_seed == 99
    with pytest.raises(ConfigError):
        preset("fig4").with_seed(-1)


def test_spec_from_dict_symbolic_gamma():
    s = spec_from_dict({"scenario": "chain_qjm", "chain": {"n_sites": 3, "Gamma_op": "2.5 J_eff"}})
    assert s.gamma_op_factor == 2.5
    s = spec_from_dict({"scenario": "chain_qjm", "chain": {"n_sites": 3, "Gamma_op": "300 Hz"}})
    assert s.gamma_op_factor is None and s.chain.Gamma_op == 300.0
