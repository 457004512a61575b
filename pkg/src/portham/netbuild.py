"""Mass-spring-damper networks assembled into port-Hamiltonian models.

A network is a directed graph: nodes are point masses, edges are
springs or dampers, and a subset of nodes takes an external force.  The
state stacks spring elongations over node momenta; the incidence
matrices of the two edge families fill in the structure blocks, so the
resulting model is port-Hamiltonian by construction.

An edge endpoint may be the reserved name "ground": a virtual immovable
node that contributes no momentum coordinate (its incidence row is
dropped).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import PhsModel, QuadraticHamiltonian

GROUND = "ground"

SIGN_CONVENTION = "+1 at the tail, -1 at the head"


class GraphError(ValueError):
    pass


def _as_edge(value, weight_key, where):
    if isinstance(value, dict):
        try:
            return str(value["from"]), str(value["to"]), float(value[weight_key])
        except KeyError as missing:
            raise GraphError(f"{where}: missing field {missing}") from None
        except (TypeError, ValueError):
            raise GraphError(f"{where}: {weight_key} must be a number") from None
    tail, head, weight = value
    return str(tail), str(head), float(weight)


@dataclass
class MsdGraph:
    """Node masses, spring and damper edges, and the actuated nodes.

    nodes: (name, mass) pairs; springs/dampers: (tail, head, weight)
    triples.  Everything is validated on construction."""

    nodes: list
    springs: list = field(default_factory=list)
    dampers: list = field(default_factory=list)
    actuated: list = field(default_factory=list)

    def __post_init__(self):
        self.nodes = [(str(n), float(m)) for n, m in self.nodes]
        self.springs = [_as_edge(e, "k", f"springs[{i}]")
                        for i, e in enumerate(self.springs)]
        self.dampers = [_as_edge(e, "d", f"dampers[{i}]")
                        for i, e in enumerate(self.dampers)]
        self.actuated = [str(a) for a in self.actuated]
        if not self.nodes:
            raise GraphError("a network needs at least one node")
        names = [n for n, _ in self.nodes]
        if GROUND in names:
            raise GraphError(
                f"'{GROUND}' is reserved for the virtual immovable node")
        if len(set(names)) != len(names):
            raise GraphError("node names must be unique")
        for name, mass in self.nodes:
            if not mass > 0.0:
                raise GraphError(f"node '{name}' needs a positive mass")
        for kind, edges in (("spring", self.springs), ("damper", self.dampers)):
            for tail, head, weight in edges:
                for end in (tail, head):
                    if end != GROUND and end not in names:
                        raise GraphError(
                            f"{kind} endpoint '{end}' is not a declared node")
                if tail == head:
                    raise GraphError(
                        f"{kind} endpoints coincide at '{tail}'")
                if not weight > 0.0:
                    raise GraphError(
                        f"{kind} {tail}->{head} needs a positive coefficient")
        seen = set()
        for name in self.actuated:
            if name not in names:
                raise GraphError(f"actuated node '{name}' is not declared")
            if name in seen:
                raise GraphError(f"actuated node '{name}' listed twice")
            seen.add(name)

    @classmethod
    def from_dict(cls, doc) -> "MsdGraph":
        """Build from the JSON form {nodes: [{name, mass}], springs:
        [{from, to, k}], dampers: [{from, to, d}], actuated: [names]}."""
        if not isinstance(doc, dict):
            raise GraphError("graph document must be a JSON object")
        raw_nodes = doc.get("nodes")
        if not isinstance(raw_nodes, list):
            raise GraphError("nodes: expected a list of {name, mass} objects")
        nodes = []
        for i, entry in enumerate(raw_nodes):
            if not isinstance(entry, dict) or "name" not in entry \
                    or "mass" not in entry:
                raise GraphError(f"nodes[{i}]: expected {{name, mass}}")
            nodes.append((entry["name"], entry["mass"]))
        return cls(nodes=nodes,
                   springs=list(doc.get("springs", [])),
                   dampers=list(doc.get("dampers", [])),
                   actuated=list(doc.get("actuated", [])))

    def node_names(self):
        return [n for n, _ in self.nodes]


def incidence(graph: MsdGraph):
    """Incidence matrices (nodes x springs, nodes x dampers) with +1 at
    the tail and -1 at the head of each edge; ground rows are dropped."""
    names = graph.node_names()
    index = {name: i for i, name in enumerate(names)}

    def build(edges):
        d = np.zeros((len(names), len(edges)))
        for j, (tail, head, _) in enumerate(edges):
            if tail != GROUND:
                d[index[tail], j] = 1.0
            if head != GROUND:
                d[index[head], j] = -1.0
        return d

    return build(graph.springs), build(graph.dampers)


def build_msd(graph: MsdGraph) -> PhsModel:
    """The network as a PhsModel on (spring elongations, node momenta).

    H = sum k_j q_j^2 / 2 + sum p_i^2 / (2 m_i); the spring incidence
    couples the two blocks skew-symmetrically, the dampers contribute
    D_d diag(d) D_d^T on the momentum block, and each actuated node
    gets a force column.  The output is the actuated-node velocities."""
    d_s, d_d = incidence(graph)
    ns, nn = len(graph.springs), len(graph.nodes)
    names = graph.node_names()
    state = tuple(f"q{j + 1}" for j in range(ns)) \
        + tuple(f"p_{name}" for name in names)

    j_top = np.hstack([np.zeros((ns, ns)), d_s.T])
    j_bot = np.hstack([-d_s, np.zeros((nn, nn))])
    j = np.vstack([j_top, j_bot])

    r_bar = np.diag([d for _, _, d in graph.dampers])
    r = np.zeros((ns + nn, ns + nn))
    r[ns:, ns:] = d_d @ r_bar @ d_d.T

    e = np.zeros((nn, len(graph.actuated)))
    for col, name in enumerate(graph.actuated):
        e[names.index(name), col] = 1.0
    g = np.vstack([np.zeros((ns, len(graph.actuated))), e])

    stiff = [k for _, _, k in graph.springs]
    inv_mass = [1.0 / m for _, m in graph.nodes]
    h = QuadraticHamiltonian(np.diag(stiff + inv_mass))
    return PhsModel(state_names=state, J=j, R=r, G=g, H=h,
                    metadata={"network": "mass-spring-damper",
                              "incidence_sign": SIGN_CONVENTION,
                              "actuated": list(graph.actuated)})
