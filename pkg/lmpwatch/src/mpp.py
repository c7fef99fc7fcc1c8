"""Multi-parametric decomposition of the market-clearing QP.

For a fixed set of active rows the KKT system is linear in xi, so the duals of
the active rows and the primal solution are affine maps

    mu_active = D xi + d        x = P xi + p

valid on the polyhedral critical region {xi : H xi <= h}. A RegionAtlas holds
the regions found so far for one market structure and answers point-location
queries, discovering new regions on the fly.
"""
import logging
import threading
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import scipy.linalg
from scipy.optimize import linprog
from scipy.spatial import HalfspaceIntersection
from tqdm import tqdm

from lmpwatch.src.errors import DegenerateRegionError
from lmpwatch.src.netmodel import MarketQP
from lmpwatch.src.qpsolve import QpSolver

_LOGGER = logging.getLogger('lmpwatch.' + Path(__file__).stem)

_PRIMAL_CHECK_TOL = 1e-6
_DUAL_CHECK_TOL = 1e-5


@dataclass(frozen=True, eq=False)
class CriticalRegion:
    id: int
    active_set: Tuple[int, ...]
    """Rows defining the affine maps: the active rows, minus degenerate and linearly dependent ones."""
    D: np.ndarray
    d: np.ndarray
    P: np.ndarray
    p: np.ndarray
    H: np.ndarray
    h: np.ndarray
    strict: np.ndarray
    """True for the primal-feasibility rows of H, which hold strictly in the interior."""
    lambda_tilde: np.ndarray
    """Columns of Lambda for the active rows; only balance and flow rows are nonzero."""
    structure_id: str
    point: np.ndarray
    """Perturbation the region was generated from."""
    flagged: bool = False
    """Linearly dependent active rows were dropped when building the maps."""
    dropped_rows: Tuple[int, ...] = ()
    n_gens: int = 0
    """Leading entries of x that are generator dispatch; the rest is load shedding."""

    def contains(self, xi, tol: float = 1e-8) -> bool:
        return bool(np.all(self.H @ np.asarray(xi, dtype=float) <= self.h + tol * (1.0 + np.abs(self.h))))

    def primal(self, xi) -> np.ndarray:
        return self.P @ xi + self.p

    def dual(self, xi) -> np.ndarray:
        """Duals of the active rows, in active_set order."""
        return self.D @ xi + self.d

    def full_dual(self, xi, n_rows: int) -> np.ndarray:
        mu = np.zeros(n_rows)
        mu[list(self.active_set)] = self.dual(xi)
        return mu

    def with_id(self, region_id: int) -> 'CriticalRegion':
        return CriticalRegion(id=region_id, active_set=self.active_set, D=self.D, d=self.d, P=self.P, p=self.p,
                              H=self.H, h=self.h, strict=self.strict, lambda_tilde=self.lambda_tilde,
                              structure_id=self.structure_id, point=self.point, flagged=self.flagged,
                              dropped_rows=self.dropped_rows, n_gens=self.n_gens)


def _independent_rows(A_t: np.ndarray, rows: Sequence[int]) -> Tuple[List[int], List[int]]:
    """Split rows into a linearly independent subset and the dependent remainder."""
    if not rows:
        return [], []
    _, r, piv = scipy.linalg.qr(A_t.T, mode='economic', pivoting=True)
    diag = np.abs(np.diag(r))
    rank = int(np.sum(diag > 1e-10 * max(1.0, diag[0])))
    keep = sorted(rows[i] for i in piv[:rank])
    dropped = sorted(rows[i] for i in piv[rank:])
    return keep, dropped


def region_from_point(qp: MarketQP, xi, solver: Optional[QpSolver] = None, region_id: int = -1) -> CriticalRegion:
    solver = solver or QpSolver()
    xi = np.asarray(xi, dtype=float)
    sol = solver.solve(qp, xi)
    active = solver.classify_active(sol, qp, xi)

    candidates = [i for i in active.rows if i not in active.degenerate]
    rows, dropped = _independent_rows(qp.A[candidates], candidates)
    if dropped:
        _LOGGER.debug(f'Dropped linearly dependent active rows {dropped} at xi={xi.tolist()}')

    q_factor = scipy.linalg.cho_factor(qp.Q)
    qinv_q = scipy.linalg.cho_solve(q_factor, qp.q)
    A_t, B_t, b_t = qp.A[rows], qp.B[rows], qp.b[rows]

    if rows:
        qinv_at = scipy.linalg.cho_solve(q_factor, A_t.T)
        m = A_t @ qinv_at
        if np.linalg.cond(m) > 1e12:
            raise DegenerateRegionError('singular reduced KKT matrix', active_set=rows, xi=xi)
        try:
            D = -np.linalg.solve(m, B_t)
            d = -np.linalg.solve(m, b_t + A_t @ qinv_q)
        except np.linalg.LinAlgError as e:
            raise DegenerateRegionError(f'singular reduced KKT matrix ({e})', active_set=rows, xi=xi)
        P = -qinv_at @ D
        p = -qinv_q - qinv_at @ d
    else:
        D, d = np.zeros((0, qp.n_xi)), np.zeros(0)
        P, p = np.zeros((qp.n_vars, qp.n_xi)), -qinv_q

    inactive = [i for i in range(qp.n_rows) if i not in rows]
    A_bar, B_bar, b_bar = qp.A[inactive], qp.B[inactive], qp.b[inactive]
    H = np.vstack([A_bar @ P - B_bar, -D])
    h = np.concatenate([b_bar - A_bar @ p, d])
    strict = np.concatenate([np.ones(len(inactive), dtype=bool), np.zeros(len(rows), dtype=bool)])

    region = CriticalRegion(id=region_id, active_set=tuple(rows), D=D, d=d, P=P, p=p, H=H, h=h, strict=strict,
                            lambda_tilde=qp.Lambda[:, rows], structure_id=qp.structure_id, point=xi.copy(),
                            flagged=bool(dropped), dropped_rows=tuple(dropped), n_gens=qp.n_gens)

    x_err = np.abs(region.primal(xi) - sol.x).max(initial=0.0)
    if x_err > _PRIMAL_CHECK_TOL * (1.0 + np.abs(sol.x).max(initial=0.0)):
        raise DegenerateRegionError(f'affine primal map misses the solver optimum by {x_err:.3g}',
                                    active_set=rows, xi=xi)
    dual_floor = region.dual(xi).min(initial=0.0)
    if dual_floor < -_DUAL_CHECK_TOL * (1.0 + np.abs(qp.q).max(initial=0.0)):
        raise DegenerateRegionError(f'affine dual map is negative ({dual_floor:.3g}) at its generating point',
                                    active_set=rows, xi=xi)
    return region


def contains(region: CriticalRegion, xi, tol: float = 1e-8) -> bool:
    return region.contains(xi, tol)


class RegionAtlas():
    """Critical regions of one market structure, searched most-recently-hit first."""

    def __init__(self,
                 qp: MarketQP,
                 solver: Optional[QpSolver] = None,
                 region_tol: float = 1e-8,
                 regions: Iterable[CriticalRegion] = (),
                 ):
        self.qp = qp
        self.solver = solver or QpSolver()
        self.region_tol = region_tol
        self._regions: List[CriticalRegion] = []
        self._order: List[int] = []
        self._by_active: Dict[Tuple[int, ...], int] = {}
        self._lock = threading.RLock()
        self.quarantined: List[np.ndarray] = []
        self.discovered = 0
        for region in regions:
            self.add(region)

    def __getstate__(self):
        state = self.__dict__.copy()
        del state['_lock']
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._lock = threading.RLock()

    @property
    def structure_id(self) -> str:
        return self.qp.structure_id

    @property
    def regions(self) -> List[CriticalRegion]:
        return list(self._regions)

    @property
    def lookup_order(self) -> List[int]:
        return list(self._order)

    def __len__(self):
        return len(self._regions)

    def __iter__(self):
        return iter(self.regions)

    def __getitem__(self, region_id: int) -> CriticalRegion:
        return self._regions[region_id]

    def add(self, region: CriticalRegion) -> CriticalRegion:
        """Append a region, or return the stored one with the same active set."""
        with self._lock:
            existing = self._by_active.get(region.active_set)
            if existing is not None:
                return self._regions[existing]
            region = region.with_id(len(self._regions))
            self._regions.append(region)
            self._by_active[region.active_set] = region.id
            self._order.insert(0, region.id)
            return region

    def find(self, xi) -> Optional[CriticalRegion]:
        xi = np.asarray(xi, dtype=float)
        for region_id in list(self._order):
            region = self._regions[region_id]
            if region.contains(xi, self.region_tol):
                self._touch(region_id)
                return region
        return None

    def _touch(self, region_id: int):
        with self._lock:
            if self._order and self._order[0] != region_id:
                self._order.remove(region_id)
                self._order.insert(0, region_id)

    def locate(self, xi) -> CriticalRegion:
        region = self.find(xi)
        if region is not None:
            return region
        new = region_from_point(self.qp, xi, self.solver)
        with self._lock:
            known = self._by_active.get(new.active_set)
            region = self.add(new)
            if known is None:
                self.discovered += 1
                _LOGGER.info(f'Discovered region {region.id} of structure {self.structure_id} online '
                             f'at xi={np.asarray(xi).tolist()}')
            else:
                self._touch(region.id)
        return region


def locate(atlas: RegionAtlas, xi) -> CriticalRegion:
    return atlas.locate(xi)


def _build_sequential(atlas: RegionAtlas, samples: np.ndarray, quarantine: bool, progress: bool) -> RegionAtlas:
    for sample in tqdm(samples, desc=f'atlas {atlas.structure_id}', disable=not progress, leave=False):
        if atlas.find(sample) is not None:
            continue
        try:
            atlas.add(region_from_point(atlas.qp, sample, atlas.solver))
        except DegenerateRegionError as e:
            if not quarantine:
                raise DegenerateRegionError(f'atlas construction failed for structure {atlas.structure_id}',
                                            active_set=e.active_set, xi=sample)
            _LOGGER.warning(f'Quarantined sample {sample.tolist()} of structure {atlas.structure_id}: {e}')
            atlas.quarantined.append(sample.copy())
    return atlas


def _build_chunk(args) -> Tuple[List[CriticalRegion], List[np.ndarray]]:
    qp, solver, region_tol, samples, quarantine = args
    atlas = _build_sequential(RegionAtlas(qp, solver, region_tol), samples, quarantine, progress=False)
    return atlas.regions, atlas.quarantined


def build_atlas(qp: MarketQP,
                samples,
                solver: Optional[QpSolver] = None,
                region_tol: float = 1e-8,
                quarantine: bool = False,
                workers: int = 1,
                progress: bool = False,
                ) -> RegionAtlas:
    """Sampling-driven region enumeration.

    Each sample already covered by a known region is skipped; otherwise its
    region is built and appended. With several workers the samples are split
    into contiguous chunks whose atlases are merged in chunk order, dropping
    repeated active sets.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    atlas = RegionAtlas(qp, solver, region_tol)

    if workers <= 1 or len(samples) < 2 * workers:
        _build_sequential(atlas, samples, quarantine, progress)
    else:
        chunks = np.array_split(samples, workers)
        jobs = [(qp, atlas.solver, region_tol, chunk, quarantine) for chunk in chunks]
        with ProcessPoolExecutor(max_workers=workers) as executor:
            for regions, quarantined in executor.map(_build_chunk, jobs):
                for region in regions:
                    atlas.add(region)
                atlas.quarantined.extend(quarantined)

    _LOGGER.info(f'Atlas of structure {qp.structure_id}: {len(atlas)} regions from {len(samples)} samples'
                 + (f', {len(atlas.quarantined)} quarantined' if atlas.quarantined else ''))
    return atlas


def sample_box(lower, upper, grid_points: int = 101, n_random: int = 10000, seed: int = 0) -> np.ndarray:
    """Sample plan over the perturbation box.

    A uniform grid when at most two components can move, uniform random
    points otherwise. Components with a degenerate box stay at their bound.
    """
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    free = np.flatnonzero(upper > lower)

    if len(free) == 0:
        return lower[None, :].copy()

    if len(free) <= 2:
        axes = [np.linspace(lower[i], upper[i], grid_points) for i in free]
        mesh = np.meshgrid(*axes, indexing='ij')
        points = np.stack([m.ravel() for m in mesh], axis=1)
    else:
        rng = np.random.Generator(np.random.PCG64(seed))
        points = rng.uniform(lower[free], upper[free], size=(n_random, len(free)))

    samples = np.tile(lower, (len(points), 1))
    samples[:, free] = points
    return samples


@dataclass
class RegionPolygon:
    region_id: int
    vertices: np.ndarray = field(repr=False)


def region_polygons(atlas: RegionAtlas, lower, upper, dims: Tuple[int, int] = (0, 1)) -> List[RegionPolygon]:
    """Polygons of the regions on a two-component slice of the box, other components at 0."""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    dims = list(dims)
    box = np.vstack([np.eye(2), -np.eye(2)])
    box_h = np.concatenate([upper[dims], -lower[dims]])

    polygons = []
    for region in atlas.regions:
        H = np.vstack([region.H[:, dims], box])
        h = np.concatenate([region.h, box_h])
        norms = np.linalg.norm(H, axis=1)
        nonzero = norms > 1e-12
        if np.any(h[~nonzero] < -1e-9):
            continue
        H, h, norms = H[nonzero], h[nonzero], norms[nonzero]

        res = linprog(c=[0.0, 0.0, -1.0], A_ub=np.hstack([H, norms[:, None]]), b_ub=h,
                      bounds=[(None, None), (None, None), (0.0, None)], method='highs')
        if res.status != 0 or res.x[2] <= 1e-9:
            _LOGGER.debug(f'Region {region.id} has no interior on slice {dims}')
            continue

        intersection = HalfspaceIntersection(np.hstack([H, -h[:, None]]), res.x[:2])
        vertices = np.unique(np.round(intersection.intersections, 9), axis=0)
        centre = vertices.mean(axis=0)
        angles = np.arctan2(vertices[:, 1] - centre[1], vertices[:, 0] - centre[0])
        polygons.append(RegionPolygon(region.id, vertices[np.argsort(angles)]))
    return polygons
