"""Gaussian models of observed increments inside one critical region.

Within a region the LMPs are affine in xi, so for Wiener demand perturbations
the LMP increments are zero-mean Gaussian with covariance G S G' where G is the
region's LMP sensitivity and S the covariance of the perturbation increments.
Components frozen at their box bound are left out of G and S. Increments that
leave the region or move a frozen component are centred on the part the maps
predict outside that model, see predicted_shift.
"""
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Hashable, Optional, Tuple

import numpy as np
import scipy.linalg

from lmpwatch.src.errors import DegenerateDensityError, InputError
from lmpwatch.src.mpp import CriticalRegion

_LOGGER = logging.getLogger('lmpwatch.' + Path(__file__).stem)

_LOG_2PI = np.log(2.0 * np.pi)

CHANNELS = ('lmp', 'dispatch')
COVARIANCE_MODES = ('regularized', 'support')


@dataclass(frozen=True, eq=False)
class NoiseModel:
    Sigma: np.ndarray
    """Covariance of one step of the perturbation random walk, MW^2."""
    lower: np.ndarray
    upper: np.ndarray
    boundary_tol: float = 1e-6

    def __post_init__(self):
        sigma = np.atleast_2d(np.asarray(self.Sigma, dtype=float))
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        k = sigma.shape[0]
        if sigma.shape != (k, k) or lower.shape != (k,) or upper.shape != (k,):
            raise InputError(f'noise model needs a square Sigma and bounds of one length, got '
                             f'{sigma.shape}, {lower.shape}, {upper.shape}')
        if not np.allclose(sigma, sigma.T) or np.linalg.eigvalsh(sigma).min() < -1e-12 * max(1.0, np.abs(sigma).max()):
            raise InputError('Sigma must be symmetric positive semidefinite')
        if not (np.all(np.isfinite(lower)) and np.all(np.isfinite(upper))) or np.any(lower > upper):
            raise InputError('perturbation bounds must be finite with lower <= upper')
        object.__setattr__(self, 'Sigma', sigma)
        object.__setattr__(self, 'lower', lower)
        object.__setattr__(self, 'upper', upper)

    @property
    def dim(self) -> int:
        return self.Sigma.shape[0]

    def inside(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        return (xi >= self.lower + self.boundary_tol) & (xi <= self.upper - self.boundary_tol)

    def selection(self, xi_prev, xi_t) -> np.ndarray:
        """Components strictly inside their box at both ends of the increment."""
        return self.inside(xi_prev) & self.inside(xi_t)


@dataclass(frozen=True, eq=False)
class IncrementDensity:
    region_id: int
    channel: str
    covariance: np.ndarray
    regularized_covariance: np.ndarray
    log_normalizer: float
    whitener: np.ndarray
    """W with delta' C^-1 delta = |W delta|^2 for the covariance C in use."""
    rank: int
    mode: str = 'regularized'

    @property
    def dim(self) -> int:
        return self.covariance.shape[0]

    def log_density(self, delta) -> float:
        z = self.whitener @ np.atleast_1d(np.asarray(delta, dtype=float))
        return float(self.log_normalizer - 0.5 * z @ z)


def lmp_map(region: CriticalRegion) -> Tuple[np.ndarray, np.ndarray]:
    """LMPs as an affine function of xi inside the region: (Lambda~ D, Lambda~ d)."""
    return region.lambda_tilde @ region.D, region.lambda_tilde @ region.d


def dispatch_map(region: CriticalRegion) -> Tuple[np.ndarray, float]:
    """Total generator dispatch as an affine function of xi: (1'P_gen, 1'p_gen)."""
    return region.P[:region.n_gens].sum(axis=0), float(region.p[:region.n_gens].sum())


def observation_map(region: CriticalRegion, channel: str) -> Tuple[np.ndarray, np.ndarray]:
    """Observed channel as an affine function of xi inside the region."""
    if channel == 'lmp':
        return lmp_map(region)
    if channel == 'dispatch':
        g, offset = dispatch_map(region)
        return g[None, :], np.array([offset])
    raise InputError(f'unknown channel "{channel}", expected one of {CHANNELS}')


def predicted_shift(region_prev: CriticalRegion,
                    region_t: CriticalRegion,
                    xi_prev,
                    xi_t,
                    selection,
                    channel: str = 'lmp',
                    ) -> np.ndarray:
    """Mean of an observed increment beyond what the density of region_t models.

    The density of region_t covers G_t[:, sel] applied to the selected
    perturbation steps. Frozen components still move when they land on or
    leave their bound, and the affine maps jump when xi crosses into another
    region; both are deterministic given xi_prev and xi_t. Zero inside one
    region with every component selected.
    """
    xi_prev = np.asarray(xi_prev, dtype=float)
    xi_t = np.asarray(xi_t, dtype=float)
    sel = np.asarray(selection, dtype=bool)
    step = xi_t - xi_prev
    g_t, h_t = observation_map(region_t, channel)
    if (region_prev.structure_id, region_prev.id) == (region_t.structure_id, region_t.id):
        return g_t[:, ~sel] @ step[~sel]
    g_prev, h_prev = observation_map(region_prev, channel)
    jump = (g_t @ xi_t + h_t) - (g_prev @ xi_prev + h_prev)
    return jump - g_t[:, sel] @ step[sel]


def increment_covariance(region: CriticalRegion,
                         noise: NoiseModel,
                         channel: str = 'lmp',
                         selection=None,
                         epsilon_scale: float = 1e-6,
                         mode: str = 'regularized',
                         ) -> IncrementDensity:
    if mode not in COVARIANCE_MODES:
        raise InputError(f'unknown covariance mode "{mode}", expected one of {COVARIANCE_MODES}')
    selection = np.ones(noise.dim, dtype=bool) if selection is None else np.asarray(selection, dtype=bool)
    if selection.shape != (noise.dim,):
        raise InputError(f'selection has length {selection.shape}, expected {noise.dim}')
    sel = np.flatnonzero(selection)
    if len(sel) == 0:
        raise DegenerateDensityError(f'every perturbation component is frozen in region {region.id}')

    g = observation_map(region, channel)[0][:, sel]
    cov = g @ noise.Sigma[np.ix_(sel, sel)] @ g.T
    cov = 0.5 * (cov + cov.T)
    k = cov.shape[0]
    trace = float(np.trace(cov))
    if trace <= 1e-12:
        raise DegenerateDensityError(f'zero {channel} increment covariance in region {region.id}')

    regularized = cov + epsilon_scale * trace / k * np.eye(k)

    if mode == 'regularized':
        chol = scipy.linalg.cholesky(regularized, lower=True)
        whitener = scipy.linalg.solve_triangular(chol, np.eye(k), lower=True)
        log_normalizer = -0.5 * (k * _LOG_2PI + 2.0 * np.log(np.diag(chol)).sum())
        rank = k
    else:
        eigval, eigvec = np.linalg.eigh(cov)
        support = eigval > 1e-10 * eigval.max()
        eigval, eigvec = eigval[support], eigvec[:, support]
        whitener = (eigvec / np.sqrt(eigval)).T
        rank = int(support.sum())
        log_normalizer = -0.5 * (rank * _LOG_2PI + np.log(eigval).sum())

    return IncrementDensity(region_id=region.id, channel=channel, covariance=cov,
                            regularized_covariance=regularized, log_normalizer=float(log_normalizer),
                            whitener=whitener, rank=rank, mode=mode)


def log_density(density: IncrementDensity, delta) -> float:
    return density.log_density(delta)


def kl_divergence(post: IncrementDensity, nominal: IncrementDensity) -> float:
    """KL(post || nominal) between zero-mean Gaussians on the regularized covariances."""
    if post.dim != nominal.dim:
        raise InputError(f'densities of dimension {post.dim} and {nominal.dim} cannot be compared')
    c0 = scipy.linalg.cho_factor(nominal.regularized_covariance)
    ca = scipy.linalg.cho_factor(post.regularized_covariance)
    trace_term = np.trace(scipy.linalg.cho_solve(c0, post.regularized_covariance))
    logdet0 = 2.0 * np.log(np.diag(c0[0])).sum()
    logdeta = 2.0 * np.log(np.diag(ca[0])).sum()
    return float(max(0.0, 0.5 * (trace_term - post.dim + logdet0 - logdeta)))


class DensityCache():
    """Densities keyed by structure, region, channel and selection."""

    def __init__(self,
                 noise: NoiseModel,
                 channel: str = 'lmp',
                 epsilon_scale: float = 1e-6,
                 mode: str = 'regularized',
                 ):
        self.noise = noise
        self.channel = channel
        self.epsilon_scale = epsilon_scale
        self.mode = mode
        self._cache: Dict[Hashable, Optional[IncrementDensity]] = {}

    def get(self, region: CriticalRegion, selection: np.ndarray) -> Optional[IncrementDensity]:
        """Density of the region under the selection, None when it is degenerate."""
        key = (region.structure_id, region.id, tuple(bool(s) for s in selection))
        if key not in self._cache:
            try:
                self._cache[key] = increment_covariance(region, self.noise, self.channel, selection,
                                                        self.epsilon_scale, self.mode)
            except DegenerateDensityError as e:
                _LOGGER.debug(f'Degenerate density: {e}')
                self._cache[key] = None
        return self._cache[key]

    def __len__(self):
        return len(self._cache)
