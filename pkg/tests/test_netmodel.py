import json

import pytest

from allflow import netmodel
from allflow.netmodel import CaseError, NoSuchLineError, line_admittance

from conftest import case_text


MINIMAL = {
    "base_mva": 100.0,
    "buses": [
        {"id": 1, "kind": "slack", "voltage_setpoint": 1.0, "angle_setpoint": 0.0},
        {"id": 2, "kind": "load", "shunt_conductance": 0.5},
    ],
    "lines": [{"from": 1, "to": 2, "impedance": [0.0, 0.1]}],
    "generators": [
        {"bus": 1, "inertia": 5.0, "internal_voltage": 1.05,
         "transient_reactance": 0.3, "mechanical_power": 0.5,
         "scheduled_active_power": 0.5},
    ],
    "wind_plant": None,
}


def mutate(**changes):
    doc = json.loads(json.dumps(MINIMAL))
    doc.update(changes)
    return json.dumps(doc)


def test_minimal_two_bus_case():
    net = netmodel.load_case(json.dumps(MINIMAL))
    assert len(net.buses) == 2
    assert len(net.lines) == 1
    assert net.slack_bus.id == 1
    assert net.wind_plant is None


def test_seven_bus_case_mirrors_topology(brazil7_net):
    net = brazil7_net
    assert [b.id for b in net.buses] == [1, 2, 3, 4, 5, 6, 7]
    assert net.slack_bus.id == 7
    assert net.wind_bus.id == 6
    assert [b.id for b in net.buses_of_kind("pv")] == [1, 2, 3, 4]
    assert [b.id for b in net.buses_of_kind("load")] == [5]
    assert net.wind_plant.bus == 6
    assert len(net.generators) == 5


def test_duplicate_slack_rejected():
    doc = json.loads(json.dumps(MINIMAL))
    doc["buses"][1] = {"id": 2, "kind": "slack", "voltage_setpoint": 1.0}
    with pytest.raises(CaseError, match="slack"):
        netmodel.load_case(json.dumps(doc))


def test_unknown_keys_rejected():
    doc = json.loads(json.dumps(MINIMAL))
    doc["buses"][0]["frobnicate"] = 1
    with pytest.raises(CaseError, match="unknown keys"):
        netmodel.load_case(json.dumps(doc))


def test_dangling_line_reference_rejected():
    doc = json.loads(json.dumps(MINIMAL))
    doc["lines"][0]["to"] = 99
    with pytest.raises(CaseError, match="dangling"):
        netmodel.load_case(json.dumps(doc))


def test_disconnected_graph_rejected():
    doc = json.loads(json.dumps(MINIMAL))
    doc["buses"].append({"id": 3, "kind": "load"})
    with pytest.raises(CaseError, match="connected"):
        netmodel.load_case(json.dumps(doc))


def test_load_bus_with_setpoint_rejected():
    doc = json.loads(json.dumps(MINIMAL))
    doc["buses"][1]["voltage_setpoint"] = 1.0
    with pytest.raises(CaseError):
        netmodel.load_case(json.dumps(doc))


def test_validate_clean_on_loaded_cases(twobus_net, brazil7_net):
    assert netmodel.validate(twobus_net) == []
    assert netmodel.validate(brazil7_net) == []


def test_validate_flags_zero_impedance(twobus_net):
    bad = netmodel.Network(
        buses=twobus_net.buses,
        lines=(netmodel.Line(1, 2, 0j),),
        generators=twobus_net.generators,
        wind_plant=None,
        base_mva=100.0,
    )
    codes = [d.code for d in netmodel.validate(bad)]
    assert "zero-impedance" in codes


def test_validate_flags_nonphysical_inductance(brazil7_net):
    wp = brazil7_net.wind_plant
    bad_dfig = netmodel.Dfig(
        r_s=wp.dfig.r_s, r_r=wp.dfig.r_r, l_ls=wp.dfig.l_ls,
        l_lr=wp.dfig.l_lr, l_m=-1.0, poles=wp.dfig.poles,
        sync_speed=wp.dfig.sync_speed,
    )
    bad_plant = netmodel.WindPlant(
        bus=wp.bus, turbine=wp.turbine, dfig=bad_dfig,
        operating_point=wp.operating_point, unit_scale=wp.unit_scale,
    )
    bad = netmodel.Network(
        buses=brazil7_net.buses, lines=brazil7_net.lines,
        generators=brazil7_net.generators, wind_plant=bad_plant,
        base_mva=brazil7_net.base_mva,
    )
    codes = [d.code for d in netmodel.validate(bad)]
    assert "non-physical-inductance" in codes


def test_line_admittance_reciprocal(twobus_net):
    y = line_admittance(twobus_net, 1, 2)
    assert y == pytest.approx(0.0 - 10.0j)


def test_line_admittance_complex_reciprocal():
    doc = json.loads(json.dumps(MINIMAL))
    doc["lines"][0]["impedance"] = [0.01, 0.1]
    net = netmodel.load_case(json.dumps(doc))
    y = line_admittance(net, 1, 2)
    # 1/(0.01 + 0.1j) computed by hand
    assert y.real == pytest.approx(0.990099, rel=1e-5)
    assert y.imag == pytest.approx(-9.90099, rel=1e-5)


def test_line_admittance_symmetric(brazil7_net):
    for ln in brazil7_net.lines:
        assert line_admittance(brazil7_net, ln.from_bus, ln.to_bus) == \
            line_admittance(brazil7_net, ln.to_bus, ln.from_bus)


def test_line_admittance_absent_line(twobus_net):
    with pytest.raises(NoSuchLineError):
        line_admittance(twobus_net, 1, 99)


def test_serialize_round_trip(twobus_net, brazil7_net):
    for net in (twobus_net, brazil7_net):
        doc = netmodel.serialize(net)
        again = netmodel.load_case(json.dumps(doc))
        assert netmodel.serialize(again) == doc
        assert again == net


def test_swept_area_warning():
    text = case_text("brazil7")
    doc = json.loads(text)
    doc["wind_plant"]["turbine"]["swept_area"] = 2000.0
    net = netmodel.load_case(json.dumps(doc))
    warnings = [d for d in netmodel.validate(net, include_warnings=True)
                if d.severity == "warning"]
    assert any(d.code == "swept-area-mismatch" for d in warnings)


def test_torque_consistency_is_quiet_on_shipped_fixture(brazil7_net):
    warnings = [d for d in netmodel.validate(brazil7_net, include_warnings=True)]
    assert not any(d.code == "torque-mismatch" for d in warnings)


def test_zero_inertia_rejected():
    doc = json.loads(json.dumps(MINIMAL))
    doc["generators"][0]["inertia"] = 0.0
    with pytest.raises(CaseError, match="inertia"):
        netmodel.load_case(json.dumps(doc))


def test_duplicate_wind_bus_rejected():
    doc = json.loads(case_text("brazil7"))
    doc["buses"][4]["kind"] = "wind"
    doc["buses"][4]["voltage_setpoint"] = 1.0
    with pytest.raises(CaseError, match="wind"):
        netmodel.load_case(json.dumps(doc))


def test_torque_mismatch_warning_fires_on_inconsistent_schedule():
    doc = json.loads(case_text("brazil7"))
    doc["wind_plant"]["operating_point"]["wind_speed"] = 14.0
    net = netmodel.load_case(json.dumps(doc))
    warnings = netmodel.validate(net, include_warnings=True)
    assert any(d.code == "torque-mismatch" for d in warnings)
