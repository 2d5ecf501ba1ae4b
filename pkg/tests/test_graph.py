import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from blockflow.core import DataType, input_port, output_port
from blockflow.diagnostics import ModelError
from blockflow.graph import (AlgebraicLoopError, BlockPorts, Connection, compute_schedule,
                             dependency_edges, load_graph, order_blocks, parse_endpoint, parse_graph,
                             resolve_widths, validate, validate_file)
from blockflow.plugin import PluginRegistry

from helpers import block, conn, graph, has_cycle_dfs, random_port_graph, shuffled


def codes(diags):
    return [d.code for d in diags]


@pytest.fixture
def stdreg():
    return PluginRegistry(use_env=False)


# --- loading --------------------------------------------------------------

def test_minimal_file(write_graph, tmp_path):
    path = write_graph(graph([block("c", "Constant", value=1.0),
                              block("s", "CsvSink", path=str(tmp_path / "o.csv"))],
                             [conn("c.0", "s.0")]))
    model = load_graph(path)
    assert len(model.blocks) == 2 and len(model.connections) == 1
    assert model.connections[0] == Connection("c", 0, "s", 0)


def test_dangling_endpoint_names_block(write_graph):
    path = write_graph(graph([block("plant", "Pendulum")], [conn("ctrl.0", "plant.0")]))
    with pytest.raises(ModelError) as info:
        load_graph(path)
    d = info.value.diagnostics[0]
    assert d.code == "dangling-endpoint" and d.block == "ctrl" and "'ctrl'" in d.message


@pytest.mark.parametrize("dt", [0, -0.1])
def test_step_size_must_be_positive(write_graph, dt):
    path = write_graph(graph([block("c", "Constant", value=1.0)], [], step_size=dt))
    with pytest.raises(ModelError, match="stepSize must be positive"):
        load_graph(path)


def test_parse_error_has_line_and_column(write_graph):
    path = write_graph('{\n  "step_size": 0.1,\n  "blocks": [,]\n}')
    with pytest.raises(ModelError) as info:
        load_graph(path)
    d = info.value.diagnostics[0]
    assert d.code == "parse" and "line 3, column 14" in d.message


def test_missing_file_is_io(tmp_path):
    with pytest.raises(ModelError) as info:
        load_graph(tmp_path / "absent.json")
    assert info.value.exit_code == 3


def test_duplicate_names(write_graph):
    path = write_graph(graph([block("a", "Constant", value=1.0), block("a", "Constant", value=2.0)], []))
    with pytest.raises(ModelError) as info:
        load_graph(path)
    assert "duplicate-block" in codes(info.value.diagnostics)


def test_multiply_driven_input_rejected(write_graph):
    path = write_graph(graph([block("a", "Constant", value=1.0), block("b", "Constant", value=2.0),
                              block("g", "Gain", gain=1.0)],
                             [conn("a.0", "g.0"), conn("b.0", "g.0")]))
    _, diags = parse_graph(path)
    assert codes(diags) == ["multiple-drivers"]


def test_schema_problems_all_reported(write_graph):
    doc = graph([block("a", "Constant", value=[[1]]), {"name": "b", "library": "stdblocks"}],
                [{"from": "a.x", "to": "b.0"}])
    doc["extra"] = 1
    _, diags = parse_graph(write_graph(doc))
    assert codes(diags).count("schema") == 3 and "bad-parameter" in codes(diags)


@pytest.mark.parametrize("text, expected", [("a.0", ("a", 0)), ("my_block.12", ("my_block", 12))])
def test_parse_endpoint(text, expected):
    assert parse_endpoint(text) == expected


@pytest.mark.parametrize("text", ["a", "a.", ".0", "a.-1", "a.b", 3])
def test_parse_endpoint_rejects(text):
    with pytest.raises(ValueError):
        parse_endpoint(text)


def test_to_dict_round_trips(demo_model_path):
    model = load_graph(demo_model_path)
    again, diags = parse_graph("mem", text=json.dumps(model.to_dict()))
    assert diags == [] and again == model


# --- width resolution -----------------------------------------------------

def _ports(ins=(), outs=()):
    return BlockPorts(tuple(ins), tuple(outs))


def test_dynamic_width_propagates():
    declared = {"c": _ports(outs=[output_port(0, 3)]),
                "g": _ports([input_port(0)], [output_port(0)])}
    model = _model(["c", "g"], [Connection("c", 0, "g", 0)])
    resolved = resolve_widths(model, declared)
    assert resolved["g"].inputs[0].width == 3 and resolved["g"].outputs[0].width == 3


def test_width_mismatch_names_both_sides():
    declared = {"c": _ports(outs=[output_port(0, 3)]),
                "s": _ports([input_port(0, 2), input_port(1, 2)], [output_port(0, 2)]),
                "d": _ports(outs=[output_port(0, 2)])}
    model = _model(["c", "s", "d"], [Connection("c", 0, "s", 0), Connection("d", 0, "s", 1)])
    with pytest.raises(ModelError) as info:
        resolve_widths(model, declared)
    (d,) = info.value.diagnostics
    assert d.code == "width-mismatch" and "3 vs 2" in d.message
    assert "c.0" in d.message and "s.0" in d.message


def test_unresolvable_dynamic_chain():
    declared = {"a": _ports(outs=[output_port(0)]), "b": _ports([input_port(0)])}
    model = _model(["a", "b"], [Connection("a", 0, "b", 0)])
    with pytest.raises(ModelError) as info:
        resolve_widths(model, declared)
    assert codes(info.value.diagnostics) == ["unresolved-width", "unresolved-width"]


def test_dtype_mismatch():
    declared = {"a": _ports(outs=[output_port(0, 1, DataType.BOOL)]), "b": _ports([input_port(0, 1)])}
    with pytest.raises(ModelError, match="dtype mismatch bool vs float64"):
        resolve_widths(_model(["a", "b"], [Connection("a", 0, "b", 0)]), declared)


def test_unconnected_input_is_error():
    declared = {"b": _ports([input_port(0, 1)])}
    with pytest.raises(ModelError) as info:
        resolve_widths(_model(["b"], []), declared)
    assert codes(info.value.diagnostics) == ["unconnected-input"]


def test_port_out_of_range():
    declared = {"a": _ports(outs=[output_port(0, 1)]), "b": _ports([input_port(0, 1)])}
    model = _model(["a", "b"], [Connection("a", 0, "b", 0), Connection("a", 1, "b", 5)])
    with pytest.raises(ModelError) as info:
        resolve_widths(model, declared)
    assert codes(info.value.diagnostics) == ["port-range", "port-range"]


def test_width_flows_backwards_through_group():
    # fixed consumer pins an otherwise undetermined dynamic chain
    declared = {"src": _ports(outs=[output_port(0)]),
                "g": _ports([input_port(0)], [output_port(0)]),
                "sink": _ports([input_port(0, 4)])}
    model = _model(["src", "g", "sink"], [Connection("src", 0, "g", 0), Connection("g", 0, "sink", 0)])
    resolved = resolve_widths(model, declared)
    assert resolved["src"].outputs[0].width == 4


# --- scheduling -----------------------------------------------------------

def _model(names, conns):
    from blockflow.graph import BlockDescriptor, GraphModel
    return GraphModel(tuple(BlockDescriptor(n, "x", "X") for n in names), tuple(conns), 0.01)


def _unit(n_in, feedthrough=True):
    return _ports([input_port(i, 1, feedthrough=feedthrough) for i in range(n_in)], [output_port(0, 1)])


def test_chain_order():
    model = _model(["C", "B", "A"], [Connection("A", 0, "B", 0), Connection("B", 0, "C", 0)])
    ports = {"A": _unit(0), "B": _unit(1), "C": _unit(1)}
    assert compute_schedule(model, ports).order == ("A", "B", "C")


def test_delay_breaks_loop():
    model = _model(["P", "C"], [Connection("P", 0, "C", 0), Connection("C", 0, "P", 0)])
    ports = {"P": _unit(1), "C": _unit(1, feedthrough=False)}
    assert compute_schedule(model, ports).order == ("C", "P")


def test_algebraic_loop_lists_both_blocks():
    model = _model(["g1", "g2"], [Connection("g1", 0, "g2", 0), Connection("g2", 0, "g1", 0)])
    ports = {"g1": _unit(1), "g2": _unit(1)}
    edges = dependency_edges(model.connections, ports)
    assert has_cycle_dfs(["g1", "g2"], edges)
    with pytest.raises(AlgebraicLoopError) as info:
        compute_schedule(model, ports)
    assert info.value.cycle == ["g1", "g2"]
    assert "g1 -> g2 -> g1" in str(info.value)


def test_self_loop():
    with pytest.raises(AlgebraicLoopError) as info:
        order_blocks(["a", "b"], [("a", "a")])
    assert info.value.cycle == ["a"]


def test_reported_cycle_is_a_real_cycle():
    edges = {("a", "b"), ("b", "c"), ("c", "a"), ("c", "d"), ("d", "e"), ("x", "a")}
    with pytest.raises(AlgebraicLoopError) as info:
        order_blocks("abcdex", edges)
    cyc = info.value.cycle
    assert all((cyc[i], cyc[(i + 1) % len(cyc)]) in edges for i in range(len(cyc)))
    assert cyc == ["a", "b", "c"]


def test_ties_broken_by_name():
    assert order_blocks(["zeta", "alpha", "mid"], []) == ["alpha", "mid", "zeta"]


def test_buffer_plan_lists_consumers():
    model = _model(["a", "b", "c"], [Connection("a", 0, "c", 0), Connection("a", 0, "b", 0)])
    ports = {"a": _unit(0), "b": _unit(1), "c": _unit(1)}
    (buf,) = compute_schedule(model, ports).buffers
    assert buf.producer == "a" and buf.consumers == (("b", 0), ("c", 0))


def _assert_valid_order(order, edges):
    pos = {n: i for i, n in enumerate(order)}
    assert all(pos[a] < pos[b] for a, b in edges)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 10), st.booleans())
def test_cycle_iff_dfs_finds_one(seed, n, acyclic):
    model, ports, edges = random_port_graph(random.Random(seed), n, acyclic)
    expect_cycle = has_cycle_dfs(model.names, edges)
    if acyclic:
        assert not expect_cycle
    try:
        sched = compute_schedule(model, ports)
    except AlgebraicLoopError as exc:
        assert expect_cycle
        cyc = exc.cycle
        assert all((cyc[i], cyc[(i + 1) % len(cyc)]) in edges for i in range(len(cyc)))
    else:
        assert not expect_cycle
        assert sorted(sched.order) == sorted(model.names)
        _assert_valid_order(sched.order, edges)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32), st.integers(1, 12))
def test_schedule_independent_of_declaration_order(seed, n):
    rng = random.Random(seed)
    model, ports, _ = random_port_graph(rng, n, acyclic=True)
    from blockflow.graph import GraphModel
    blocks = list(model.blocks)
    conns = list(model.connections)
    rng.shuffle(blocks)
    rng.shuffle(conns)
    other = GraphModel(tuple(blocks), tuple(conns), model.step_size)
    assert compute_schedule(model, ports).to_json() == compute_schedule(other, ports).to_json()


# --- validate -------------------------------------------------------------

def test_demo_model_validates(demo_model_path, stdreg):
    _, report = validate_file(demo_model_path, stdreg)
    assert report.ok and report.exit_code == 0
    assert report.schedule.order == ("delay", "ref", "theta", "err", "pid", "sat", "plant")


def test_two_independent_faults_reported_together(write_graph, stdreg):
    doc = graph([block("c", "Constant", value=1.0), block("g", "Gian", gain=2.0),
                 block("s", "Sum", signs="+-")],
                [conn("c.0", "s.0"), conn("c.0", "g.0"), conn("nobody.0", "s.1")])
    _, report = validate_file(write_graph(doc), stdreg)
    assert set(codes(report.diagnostics)) == {"dangling-endpoint", "unknown-label"}
    assert report.exit_code == 2


def test_unknown_label_cites_library_and_labels(write_graph, stdreg):
    _, report = validate_file(write_graph(graph([block("g", "Gian", gain=1.0)], [])), stdreg)
    (d,) = report.diagnostics
    assert d.code == "unknown-label" and d.block == "g"
    assert "'stdblocks'" in d.message
    for label in stdreg.manifest("stdblocks").labels:
        assert label in d.message


def test_missing_library(write_graph, stdreg):
    _, report = validate_file(write_graph(graph([block("g", "Gain", library="nolib", gain=1.0)], [])), stdreg)
    assert codes(report.diagnostics) == ["plugin-not-found"]


def test_bad_parameter_reported_with_instance(write_graph, stdreg):
    _, report = validate_file(write_graph(graph([block("wave", "SineSource", frequency=-2.0)], [])), stdreg)
    (d,) = report.diagnostics
    assert d.code == "block-config" and "wave" in d.message


def test_loop_still_found_alongside_other_fault(write_graph, stdreg):
    doc = graph([block("g1", "Gain", gain=1.0), block("g2", "Gain", gain=1.0), block("bad", "Nope")],
                [conn("g1.0", "g2.0"), conn("g2.0", "g1.0")])
    _, report = validate_file(write_graph(doc), stdreg)
    assert set(codes(report.diagnostics)) == {"unknown-label", "algebraic-loop"}


def test_loop_reported_even_when_widths_unresolvable(write_graph, stdreg):
    doc = graph([block("g1", "Gain", gain=1.0), block("g2", "Gain", gain=1.0)],
                [conn("g1.0", "g2.0"), conn("g2.0", "g1.0")])
    _, report = validate_file(write_graph(doc), stdreg)
    assert codes(report.diagnostics)[0] == "algebraic-loop"
    assert "unresolved-width" in codes(report.diagnostics)


def test_gain_loop_without_delay(write_graph, stdreg):
    doc = graph([block("a", "Constant", value=1.0), block("s", "Sum", signs="++"), block("g", "Gain", gain=0.5)],
                [conn("a.0", "s.0"), conn("g.0", "s.1"), conn("s.0", "g.0")])
    _, report = validate_file(write_graph(doc), stdreg)
    assert codes(report.diagnostics) == ["algebraic-loop"]
    assert "g -> s -> g" in report.diagnostics[0].message


def test_validate_runs_structure_checks_when_called_directly(stdreg):
    model = _model(["a"], [Connection("ghost", 0, "a", 0)])
    report = validate(model, stdreg)
    assert "dangling-endpoint" in codes(report.diagnostics)


def test_shuffled_file_gives_identical_schedule(demo_model_path, write_graph, stdreg):
    doc = json.loads(demo_model_path.read_text())
    base = validate_file(demo_model_path, stdreg)[1].schedule.to_json()
    rng = random.Random(3)
    for _ in range(10):
        assert validate_file(write_graph(shuffled(doc, rng)), stdreg)[1].schedule.to_json() == base
