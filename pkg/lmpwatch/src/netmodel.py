"""Grid and market data model.

Holds the network description, the DC power transfer distribution factors and
the compact market-clearing QP

    min  1/2 x'Qx + q'x   s.t.  Ax <= B xi + b

with x = [p; l_shed], one column of B per load. Constraint rows are laid out as
balance; flow-upper; flow-lower; gen-upper; shed-upper; gen-lower; shed-lower.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, NamedTuple, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
import scipy.linalg

from lmpwatch.src.errors import InputError, NumericError, StructuralError
from lmpwatch.src.utils.py_utils import array_digest

_LOGGER = logging.getLogger('lmpwatch.' + Path(__file__).stem)

NOMINAL = 'nominal'

ROW_KINDS = ('balance', 'flow-upper', 'flow-lower', 'gen-upper', 'shed-upper', 'gen-lower', 'shed-lower')


@dataclass(frozen=True)
class Line:
    from_bus: int
    to_bus: int
    susceptance: float
    limit: float


@dataclass(frozen=True)
class Generator:
    bus: int
    p_min: float
    p_max: float
    cost_quadratic: float
    cost_linear: float


@dataclass(frozen=True)
class Load:
    bus: int
    demand: float
    xi_bound: Optional[float] = None
    """Half-width of the perturbation box in MW. None leaves the choice to the scenario."""


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class NetworkCase:
    name: str
    buses: Tuple[int, ...]
    lines: Tuple[Line, ...]
    generators: Tuple[Generator, ...]
    loads: Tuple[Load, ...]
    shed_quadratic: np.ndarray
    shed_linear: np.ndarray
    slack_bus: int
    base_mva: float = 100.0

    def __post_init__(self):
        object.__setattr__(self, 'buses', tuple(self.buses))
        object.__setattr__(self, 'lines', tuple(self.lines))
        object.__setattr__(self, 'generators', tuple(self.generators))
        object.__setattr__(self, 'loads', tuple(self.loads))
        object.__setattr__(self, 'shed_quadratic', _frozen(np.atleast_2d(self.shed_quadratic)))
        object.__setattr__(self, 'shed_linear', _frozen(np.atleast_1d(self.shed_linear)))
        self._validate()

    def _validate(self):
        if len(set(self.buses)) != len(self.buses):
            raise InputError(f'{self.name}: duplicate bus identifiers {self.buses}')
        if self.slack_bus not in self.buses:
            raise InputError(f'{self.name}: slack bus {self.slack_bus} is not a bus')
        for k, line in enumerate(self.lines):
            if line.from_bus not in self.buses or line.to_bus not in self.buses:
                raise InputError(f'{self.name}: line {k} connects unknown buses {line.from_bus}-{line.to_bus}')
            if line.from_bus == line.to_bus:
                raise InputError(f'{self.name}: line {k} is a self loop at bus {line.from_bus}')
            if line.limit <= 0:
                raise InputError(f'{self.name}: line {k} has non-positive flow limit {line.limit}')
            if line.susceptance == 0:
                raise InputError(f'{self.name}: line {k} has zero susceptance')
        for g, gen in enumerate(self.generators):
            if gen.bus not in self.buses:
                raise InputError(f'{self.name}: generator {g} sits at unknown bus {gen.bus}')
            if gen.p_min > gen.p_max:
                raise InputError(f'{self.name}: generator {g} has p_min {gen.p_min} > p_max {gen.p_max}')
            if gen.cost_quadratic <= 0:
                raise InputError(f'{self.name}: generator {g} needs a positive quadratic cost, got {gen.cost_quadratic}')
        load_buses = [load.bus for load in self.loads]
        if len(set(load_buses)) != len(load_buses):
            raise InputError(f'{self.name}: at most one load per bus is supported, got loads at {load_buses}')
        for d, load in enumerate(self.loads):
            if load.bus not in self.buses:
                raise InputError(f'{self.name}: load {d} sits at unknown bus {load.bus}')
            if load.demand < 0:
                raise InputError(f'{self.name}: load {d} has negative demand {load.demand}')
            if load.xi_bound is not None and load.xi_bound < 0:
                raise InputError(f'{self.name}: load {d} has negative perturbation bound {load.xi_bound}')
        n_d = len(self.loads)
        if self.shed_quadratic.shape != (n_d, n_d) or self.shed_linear.shape != (n_d,):
            raise InputError(f'{self.name}: shed costs must be {n_d}x{n_d} and {n_d}, '
                             f'got {self.shed_quadratic.shape} and {self.shed_linear.shape}')
        if not nx.is_connected(self.graph()):
            raise StructuralError(f'{self.name}: network is not connected')

    @property
    def n_buses(self) -> int:
        return len(self.buses)

    @property
    def n_lines(self) -> int:
        return len(self.lines)

    @property
    def n_generators(self) -> int:
        return len(self.generators)

    @property
    def n_loads(self) -> int:
        return len(self.loads)

    @property
    def demand(self) -> np.ndarray:
        return np.array([load.demand for load in self.loads])

    def bus_index(self, bus: int) -> int:
        try:
            return self.buses.index(bus)
        except ValueError:
            raise InputError(f'{self.name}: unknown bus {bus}')

    def line_index(self, from_bus: int, to_bus: int) -> int:
        """Index of the line joining two buses, in either direction."""
        for k, line in enumerate(self.lines):
            if {line.from_bus, line.to_bus} == {from_bus, to_bus}:
                return k
        raise InputError(f'{self.name}: no line between buses {from_bus} and {to_bus}')

    def line_label(self, k: int) -> str:
        line = self.lines[k]
        return f'line {line.from_bus}-{line.to_bus}'

    def graph(self) -> nx.MultiGraph:
        graph = nx.MultiGraph()
        graph.add_nodes_from(self.buses)
        graph.add_edges_from((line.from_bus, line.to_bus, k) for k, line in enumerate(self.lines))
        return graph

    def islands_without(self, k: int) -> bool:
        graph = self.graph()
        line = self.lines[k]
        graph.remove_edge(line.from_bus, line.to_bus, key=k)
        return not nx.is_connected(graph)

    def without_line(self, k: int) -> 'NetworkCase':
        if not 0 <= k < self.n_lines:
            raise InputError(f'{self.name}: unknown line {k}')
        if self.islands_without(k):
            raise StructuralError(f'{self.name}: removing {self.line_label(k)} islands the network')
        lines = self.lines[:k] + self.lines[k + 1:]
        return NetworkCase(name=f'{self.name}-{self.line_label(k).replace(" ", "")}', buses=self.buses,
                           lines=lines, generators=self.generators, loads=self.loads,
                           shed_quadratic=self.shed_quadratic, shed_linear=self.shed_linear,
                           slack_bus=self.slack_bus, base_mva=self.base_mva)

    def with_shed_costs(self, linear: Optional[float] = None, quadratic: Optional[float] = None) -> 'NetworkCase':
        """Copy with uniform load-shedding costs replacing the case's own."""
        if linear is None and quadratic is None:
            return self
        shed_linear = self.shed_linear if linear is None else np.full(self.n_loads, float(linear))
        shed_quadratic = self.shed_quadratic if quadratic is None else float(quadratic) * np.eye(self.n_loads)
        return NetworkCase(name=self.name, buses=self.buses, lines=self.lines, generators=self.generators,
                           loads=self.loads, shed_quadratic=shed_quadratic, shed_linear=shed_linear,
                           slack_bus=self.slack_bus, base_mva=self.base_mva)

    def gen_incidence(self) -> np.ndarray:
        """M_p, buses x generators."""
        m = np.zeros((self.n_buses, self.n_generators))
        for g, gen in enumerate(self.generators):
            m[self.bus_index(gen.bus), g] = 1.0
        return m

    def load_incidence(self) -> np.ndarray:
        """M_l, buses x loads."""
        m = np.zeros((self.n_buses, self.n_loads))
        for d, load in enumerate(self.loads):
            m[self.bus_index(load.bus), d] = 1.0
        return m

    def branch_incidence(self) -> np.ndarray:
        """Lines x buses, +1 at the from-bus and -1 at the to-bus."""
        m = np.zeros((self.n_lines, self.n_buses))
        for k, line in enumerate(self.lines):
            m[k, self.bus_index(line.from_bus)] = 1.0
            m[k, self.bus_index(line.to_bus)] = -1.0
        return m

    @classmethod
    def from_dict(cls, data: dict, name: str = 'case') -> 'NetworkCase':
        """Build a case from the parsed YAML case file layout."""
        try:
            buses = [int(b) for b in data['buses']]
            lines = []
            for entry in data.get('lines', []):
                if 'susceptance' in entry:
                    susceptance = float(entry['susceptance'])
                elif 'reactance' in entry:
                    susceptance = 1.0 / float(entry['reactance'])
                else:
                    raise InputError(f'{name}: line {entry} needs a susceptance or reactance')
                lines.append(Line(int(entry['from']), int(entry['to']), susceptance, float(entry['limit'])))
            generators = [Generator(bus=int(g['bus']),
                                    p_min=float(g.get('p_min', 0.0)),
                                    p_max=float(g['p_max']),
                                    cost_quadratic=float(g['cost_quadratic']),
                                    cost_linear=float(g['cost_linear']))
                          for g in data.get('generators', [])]
            loads = [Load(bus=int(d['bus']),
                          demand=float(d['demand']),
                          xi_bound=None if d.get('xi_bound') is None else float(d['xi_bound']))
                     for d in data.get('loads', [])]
            shed = data.get('shed', {}) or {}
            shed_quadratic = _shed_matrix(shed.get('quadratic', 0.1), len(loads))
            shed_linear = np.broadcast_to(np.asarray(shed.get('linear', 1000.0), dtype=float), (len(loads),)).copy()
            slack_bus = int(data.get('slack_bus', buses[0]))
        except (KeyError, TypeError, ValueError) as e:
            raise InputError(f'{name}: malformed case data ({e.__class__.__name__}: {e})')

        return cls(name=str(data.get('name', name)), buses=tuple(buses), lines=tuple(lines),
                   generators=tuple(generators), loads=tuple(loads), shed_quadratic=shed_quadratic,
                   shed_linear=shed_linear, slack_bus=slack_bus, base_mva=float(data.get('base_mva', 100.0)))


def _shed_matrix(value, n: int) -> np.ndarray:
    a = np.asarray(value, dtype=float)
    if a.ndim == 0:
        return float(a) * np.eye(n)
    if a.ndim == 1:
        return np.diag(a)
    return a


@dataclass(frozen=True)
class OutageSpec:
    kind: str
    element: int

    def __post_init__(self):
        if self.kind not in ('line', 'generator'):
            raise InputError(f'unknown outage kind "{self.kind}", expected line or generator')
        object.__setattr__(self, 'element', int(self.element))

    @property
    def key(self) -> str:
        """Structure id of the post-outage market, e.g. 'line:2'."""
        return f'{self.kind}:{self.element}'

    def label(self, case: NetworkCase) -> str:
        if self.kind == 'line':
            return case.line_label(self.element)
        return f'gen {self.element} (bus {case.generators[self.element].bus})'

    def validate(self, case: NetworkCase):
        if self.kind == 'line':
            if not 0 <= self.element < case.n_lines:
                raise InputError(f'{case.name}: unknown line {self.element}')
            if case.islands_without(self.element):
                raise StructuralError(f'{case.name}: outage of {case.line_label(self.element)} islands the network')
        elif not 0 <= self.element < case.n_generators:
            raise InputError(f'{case.name}: unknown generator {self.element}')


class RowLabel(NamedTuple):
    kind: str
    element: Optional[int] = None

    def __str__(self):
        return self.kind if self.element is None else f'{self.kind}({self.element})'


@dataclass(frozen=True, eq=False)
class MarketQP:
    Q: np.ndarray
    q: np.ndarray
    A: np.ndarray
    B: np.ndarray
    b: np.ndarray
    Lambda: np.ndarray
    row_labels: Tuple[RowLabel, ...]
    structure_id: str = NOMINAL
    gen_ids: Tuple[int, ...] = ()
    """Original generator index of every dispatch variable."""
    n_loads: int = 0
    _hash: List[str] = field(default_factory=list, repr=False)

    def __post_init__(self):
        for name in ('Q', 'q', 'A', 'B', 'b', 'Lambda'):
            object.__setattr__(self, name, _frozen(getattr(self, name)))
        object.__setattr__(self, 'row_labels', tuple(self.row_labels))
        object.__setattr__(self, 'gen_ids', tuple(int(g) for g in self.gen_ids))

        n = self.Q.shape[0]
        if self.Q.shape != (n, n) or not np.allclose(self.Q, self.Q.T):
            raise InputError('Q must be square and symmetric')
        if np.linalg.eigvalsh(self.Q).min() <= 0:
            raise InputError('Q must be positive definite')
        m = self.A.shape[0]
        if self.A.shape[1] != n or self.q.shape != (n,):
            raise InputError(f'A has {self.A.shape[1]} columns and q {self.q.shape}, expected {n}')
        if self.B.shape[0] != m or self.b.shape != (m,) or len(self.row_labels) != m:
            raise InputError('A, B, b and row labels must share one row count')
        if self.Lambda.shape[1] != m:
            raise InputError('Lambda needs one column per constraint row')
        if n != len(self.gen_ids) + self.n_loads:
            raise InputError('x must stack one dispatch variable per generator and one shed variable per load')

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]

    @property
    def n_vars(self) -> int:
        return self.A.shape[1]

    @property
    def n_xi(self) -> int:
        return self.B.shape[1]

    @property
    def n_gens(self) -> int:
        return len(self.gen_ids)

    def rows(self, kind: str) -> np.ndarray:
        return np.array([i for i, label in enumerate(self.row_labels) if label.kind == kind], dtype=int)

    def flow_rows(self) -> np.ndarray:
        return np.array([i for i, label in enumerate(self.row_labels)
                         if label.kind in ('flow-upper', 'flow-lower')], dtype=int)

    @property
    def line_ids(self) -> Tuple[int, ...]:
        return tuple(label.element for label in self.row_labels if label.kind == 'flow-upper')

    def rhs(self, xi) -> np.ndarray:
        return self.B @ np.asarray(xi, dtype=float) + self.b

    def objective(self, x) -> float:
        return float(0.5 * x @ self.Q @ x + self.q @ x)

    def content_hash(self) -> str:
        if not self._hash:
            self._hash.append(array_digest(
                (self.Q, self.q, self.A, self.B, self.b, self.Lambda),
                extra=[self.structure_id, *map(str, self.row_labels), *map(str, self.gen_ids)]))
        return self._hash[0]


def compute_ptdf(case: NetworkCase) -> np.ndarray:
    """DC power transfer distribution factors, lines x buses.

    Column j gives the line flows (positive from from-bus to to-bus) caused by
    injecting 1 MW at bus j and withdrawing it at the slack bus, so the slack
    column is zero. Any balanced injection vector P gives flows F @ P.
    """
    if not nx.is_connected(case.graph()):
        raise StructuralError(f'{case.name}: network is not connected')

    incidence = case.branch_incidence()
    b_f = np.diag([line.susceptance for line in case.lines]) @ incidence
    b_bus = incidence.T @ b_f

    slack = case.bus_index(case.slack_bus)
    keep = [j for j in range(case.n_buses) if j != slack]
    b_red = b_bus[np.ix_(keep, keep)]
    if not keep:
        return np.zeros((case.n_lines, case.n_buses))

    try:
        lu = scipy.linalg.lu_factor(b_red, check_finite=True)
    except (ValueError, np.linalg.LinAlgError) as e:
        raise NumericError(f'{case.name}: reduced susceptance matrix cannot be factorised ({e})')
    if np.any(np.abs(np.diag(lu[0])) < 1e-12 * max(1.0, np.abs(b_red).max())):
        raise NumericError(f'{case.name}: reduced susceptance matrix is singular')

    ptdf = np.zeros((case.n_lines, case.n_buses))
    ptdf[:, keep] = scipy.linalg.lu_solve(lu, b_f[:, keep].T, trans=1).T
    return ptdf


def assemble_qp(case: NetworkCase) -> MarketQP:
    """Compact market-clearing QP of the nominal structure."""
    return _assemble(case, compute_ptdf(case), line_ids=range(case.n_lines),
                     gen_ids=range(case.n_generators), structure_id=NOMINAL)


def _assemble(case: NetworkCase,
              ptdf: np.ndarray,
              line_ids: Sequence[int],
              gen_ids: Sequence[int],
              structure_id: str) -> MarketQP:
    line_ids = list(line_ids)
    gen_ids = list(gen_ids)
    n_l, n_g, n_d = case.n_lines, len(gen_ids), case.n_loads
    if len(line_ids) != n_l or ptdf.shape != (n_l, case.n_buses):
        raise InputError('PTDF and line ids must match the case lines')

    gens = [case.generators[g] for g in gen_ids]
    m_p = case.gen_incidence()[:, gen_ids]
    m_l = case.load_incidence()
    demand = case.demand
    limits = np.array([line.limit for line in case.lines])

    s = np.asarray(case.shed_quadratic)
    if not np.allclose(s, s.T) or (n_d and np.linalg.eigvalsh(s).min() <= 0):
        raise InputError(f'{case.name}: shed cost matrix S must be symmetric positive definite')

    Q = scipy.linalg.block_diag(np.diag([g.cost_quadratic for g in gens]), s)
    q = np.concatenate([[g.cost_linear for g in gens], case.shed_linear])

    f_p = ptdf @ m_p
    f_l = ptdf @ m_l
    eye_g, eye_d = np.eye(n_g), np.eye(n_d)
    zeros_gd, zeros_dg = np.zeros((n_g, n_d)), np.zeros((n_d, n_g))

    A = np.vstack([
        -np.ones((1, n_g + n_d)),
        np.hstack([f_p, f_l]),
        -np.hstack([f_p, f_l]),
        np.hstack([eye_g, zeros_gd]),
        np.hstack([zeros_dg, eye_d]),
        -np.hstack([eye_g, zeros_gd]),
        -np.hstack([zeros_dg, eye_d]),
    ])
    B = np.vstack([
        -np.ones((1, n_d)),
        f_l,
        -f_l,
        np.zeros((n_g, n_d)),
        m_l.T @ m_l,
        np.zeros((n_g, n_d)),
        np.zeros((n_d, n_d)),
    ])
    b = np.concatenate([
        [-demand.sum()],
        f_l @ demand + limits,
        -f_l @ demand + limits,
        [g.p_max for g in gens],
        demand,
        [-g.p_min for g in gens],
        np.zeros(n_d),
    ])
    Lambda = np.hstack([
        np.ones((case.n_buses, 1)),
        -ptdf.T,
        ptdf.T,
        np.zeros((case.n_buses, 2 * n_g + 2 * n_d)),
    ])
    labels = ([RowLabel('balance')]
              + [RowLabel('flow-upper', k) for k in line_ids]
              + [RowLabel('flow-lower', k) for k in line_ids]
              + [RowLabel('gen-upper', g) for g in gen_ids]
              + [RowLabel('shed-upper', d) for d in range(n_d)]
              + [RowLabel('gen-lower', g) for g in gen_ids]
              + [RowLabel('shed-lower', d) for d in range(n_d)])

    return MarketQP(Q=Q, q=q, A=A, B=B, b=b, Lambda=Lambda, row_labels=labels,
                    structure_id=structure_id, gen_ids=gen_ids, n_loads=n_d)


def apply_outage(qp: MarketQP, case: NetworkCase, spec: OutageSpec, recompute_ptdf: bool = False) -> MarketQP:
    """Post-outage market QP.

    A line outage deletes the faulted line's two flow rows and their Lambda
    columns, keeping the PTDF of the surviving lines. With recompute_ptdf the
    PTDF is instead rebuilt on the reduced topology. A generator outage drops
    the generator's variable and its two limit rows.
    """
    if qp.structure_id != NOMINAL:
        raise InputError(f'outages apply to the nominal market only, got structure {qp.structure_id}')
    spec.validate(case)

    if spec.kind == 'line':
        if recompute_ptdf:
            reduced = case.without_line(spec.element)
            line_ids = [k for k in range(case.n_lines) if k != spec.element]
            gen_ids = list(qp.gen_ids)
            return _assemble(reduced, compute_ptdf(reduced), line_ids=line_ids, gen_ids=gen_ids,
                             structure_id=spec.key)

        drop = [i for i, label in enumerate(qp.row_labels)
                if label.kind in ('flow-upper', 'flow-lower') and label.element == spec.element]
        keep = np.array([i for i in range(qp.n_rows) if i not in drop], dtype=int)
        return MarketQP(Q=qp.Q, q=qp.q, A=qp.A[keep], B=qp.B[keep], b=qp.b[keep],
                        Lambda=qp.Lambda[:, keep], row_labels=[qp.row_labels[i] for i in keep],
                        structure_id=spec.key, gen_ids=qp.gen_ids, n_loads=qp.n_loads)

    if spec.element not in qp.gen_ids:
        raise InputError(f'generator {spec.element} is not part of structure {qp.structure_id}')
    col = qp.gen_ids.index(spec.element)
    cols = np.array([j for j in range(qp.n_vars) if j != col], dtype=int)
    keep = np.array([i for i, label in enumerate(qp.row_labels)
                     if not (label.kind in ('gen-upper', 'gen-lower') and label.element == spec.element)], dtype=int)
    return MarketQP(Q=qp.Q[np.ix_(cols, cols)], q=qp.q[cols], A=qp.A[np.ix_(keep, cols)], B=qp.B[keep],
                    b=qp.b[keep], Lambda=qp.Lambda[:, keep], row_labels=[qp.row_labels[i] for i in keep],
                    structure_id=spec.key, gen_ids=[g for g in qp.gen_ids if g != spec.element],
                    n_loads=qp.n_loads)
