"""Model builders and independent oracles shared by the tests."""
from __future__ import annotations

import math
import random

from blockflow.core import input_port, output_port
from blockflow.graph import BlockDescriptor, BlockPorts, Connection, GraphModel
from blockflow.plugin import PluginRegistry
from blockflow.testing import BlockHarness


def block(name, label, library="stdblocks", **params):
    return {"name": name, "library": library, "label": label, "parameters": params}


def conn(src, dst):
    return {"from": src, "to": dst}


def graph(blocks, connections, step_size=0.01, configuration=None):
    return {"step_size": step_size, "configuration": configuration or {},
            "blocks": blocks, "connections": connections}


def has_cycle_dfs(nodes, edges) -> bool:
    """Recursive three-colour DFS; deliberately unrelated to the scheduler's Kahn pass."""
    succ = {n: [] for n in nodes}
    for a, b in edges:
        succ[a].append(b)
    colour = dict.fromkeys(nodes, 0)

    def visit(n):
        colour[n] = 1
        for m in succ[n]:
            if colour[m] == 1 or (colour[m] == 0 and visit(m)):
                return True
        colour[n] = 2
        return False

    return any(colour[n] == 0 and visit(n) for n in nodes)


def random_port_graph(rng: random.Random, n_nodes: int, acyclic: bool, p_delay: float = 0.15):
    """Random synthetic graph: (model, ports, feedthrough_edges).

    Each node gets 0-3 inputs, each driven by one output of some node. With
    ``acyclic`` the feedthrough inputs only draw from nodes earlier in a
    hidden random order; non-feedthrough inputs may draw from anywhere.
    """
    names = [f"n{i:02d}" for i in range(n_nodes)]
    hidden = names[:]
    rng.shuffle(hidden)
    rank = {n: i for i, n in enumerate(hidden)}
    ports, conns, edges = {}, [], set()
    for name in names:
        k = rng.randint(0, 3)
        inputs = []
        for i in range(k):
            ft = rng.random() >= p_delay
            pool = [m for m in names if rank[m] < rank[name]] if (acyclic and ft) else names
            if not pool:
                ft = False
                pool = names
            src = rng.choice(pool)
            inputs.append(input_port(i, 1, feedthrough=ft))
            conns.append(Connection(src, 0, name, i))
            if ft:
                edges.add((src, name))
        ports[name] = BlockPorts(tuple(inputs), (output_port(0, 1),))
    blocks = tuple(BlockDescriptor(n, "synthetic", "Node") for n in names)
    return GraphModel(blocks, tuple(conns), 0.01), ports, edges


_WORDS = ["alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india",
          "juliet", "kilo", "lima", "mike", "november", "oscar", "papa", "quebec", "romeo",
          "sierra", "tango", "uniform", "victor", "whiskey", "xray", "yankee", "zulu"]


def random_stdblocks_model(rng: random.Random, n_blocks: int) -> dict:
    """Random runnable stdblocks graph with feedback through unit delays.

    Every non-delay block's inputs come from blocks created before it; delays
    are fed from blocks whose width is pinned by a source.
    """
    width = rng.choice([1, 1, 2, 3])
    names = rng.sample(_WORDS, n_blocks)
    blocks, conns = [], []
    delays = []
    for i, name in enumerate(names):
        earlier = names[:i]
        if i < 2 or rng.random() < 0.1:
            kind = "source"
        else:
            kind = rng.choice(["Gain", "Sum", "Saturation", "DiscreteFilter", "UnitDelay", "PID"])
        if kind == "source":
            if width == 1 and rng.random() < 0.5:
                blocks.append(block(name, "SineSource", amplitude=rng.uniform(0.5, 2),
                                    frequency=rng.uniform(0.1, 5), phase=rng.uniform(0, 3)))
            else:
                blocks.append(block(name, "Constant", value=[rng.uniform(-2, 2) for _ in range(width)]))
        elif kind == "Gain":
            blocks.append(block(name, "Gain", gain=rng.uniform(-0.9, 0.9)))
            conns.append(conn(f"{rng.choice(earlier)}.0", f"{name}.0"))
        elif kind == "Sum":
            signs = "".join(rng.choice("+-") for _ in range(rng.randint(2, 3)))
            blocks.append(block(name, "Sum", signs=signs))
            for j in range(len(signs)):
                conns.append(conn(f"{rng.choice(earlier)}.0", f"{name}.{j}"))
        elif kind == "Saturation":
            blocks.append(block(name, "Saturation", lower=-1.5, upper=1.5))
            conns.append(conn(f"{rng.choice(earlier)}.0", f"{name}.0"))
        elif kind == "DiscreteFilter":
            blocks.append(block(name, "DiscreteFilter", numerator=[0.2, 0.1],
                                denominator=[1.0, -0.5]))
            conns.append(conn(f"{rng.choice(earlier)}.0", f"{name}.0"))
        elif kind == "PID":
            blocks.append(block(name, "PID", Kp=0.5, Ki=0.1, Kd=0.001))
            conns.append(conn(f"{rng.choice(earlier)}.0", f"{name}.0"))
        else:
            blocks.append(block(name, "UnitDelay", initial_condition=[0.0] * width if width > 1 else 0.0))
            delays.append(name)
    # a delay's width is only known through its producer, so feed delays from
    # blocks whose width traces forward to a source without passing a delay
    drivers = {}
    for c in conns:
        drivers.setdefault(c["to"].split(".")[0], []).append(c["from"].split(".")[0])
    anchored = set()
    for name, b in zip(names, blocks):
        if b["label"] in ("Constant", "SineSource") or any(d in anchored for d in drivers.get(name, ())):
            anchored.add(name)
    pool = sorted(anchored)
    for name in delays:
        conns.append(conn(f"{rng.choice(pool)}.0", f"{name}.0"))
    return graph(blocks, conns, step_size=0.01)


def shuffled(doc: dict, rng: random.Random) -> dict:
    out = dict(doc)
    out["blocks"] = rng.sample(doc["blocks"], len(doc["blocks"]))
    out["connections"] = rng.sample(doc["connections"], len(doc["connections"]))
    return out


# --- pendulum oracles ---------------------------------------------------------

def pendulum_run(params, steps, tau=0.0, dt=0.001):
    block_ = PluginRegistry(use_env=False).instantiate("stdblocks", "Pendulum")
    h = BlockHarness(block_, params, input_widths=(1,), step_size=dt).setup()
    return [h.step([tau])[0] for _ in range(steps)]


def energy(theta, omega, m, l, g):
    return 0.5 * m * l * l * omega * omega + m * g * l * (1.0 - math.cos(theta))


def pendulum_energy_drift(theta0=0.01, steps=10_000, dt=0.001, m=1.0, l=1.0, g=9.81):
    e0 = energy(theta0, 0.0, m, l, g)
    trace = pendulum_run({"mass": m, "length": l, "gravity": g, "theta0": theta0, "damping": 0.0}, steps, dt=dt)
    return max(abs(energy(th, om, m, l, g) - e0) / e0 for th, om in trace)


def pendulum_period(theta0=0.01, seconds=20.0, dt=0.001, l=1.0, g=9.81):
    """Mean period from upward zero crossings, linearly interpolated."""
    steps = int(round(seconds / dt))
    trace = pendulum_run({"length": l, "gravity": g, "theta0": theta0, "damping": 0.0}, steps, dt=dt)
    theta = [s[0] for s in trace]
    crossings = []
    for k in range(1, len(theta)):
        if theta[k - 1] < 0.0 <= theta[k]:
            frac = -theta[k - 1] / (theta[k] - theta[k - 1])
            crossings.append((k + frac) * dt)  # output k is the state at time (k+1)*dt
    return (crossings[-1] - crossings[0]) / (len(crossings) - 1)
