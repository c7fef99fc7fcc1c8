import json
import logging
import re
import zipfile
from pathlib import Path
from typing import Optional

import numpy as np

from lmpwatch.src.errors import CacheError
from lmpwatch.src.mpp import CriticalRegion, RegionAtlas
from lmpwatch.src.netmodel import MarketQP
from lmpwatch.src.qpsolve import QpSolver

_LOGGER = logging.getLogger('lmpwatch.' + Path(__file__).stem)

FORMAT_VERSION = 1

_REGION_ARRAYS = ('active', 'D', 'd', 'P', 'p', 'H', 'h', 'strict', 'point', 'dropped')


class AtlasHandler():
    """Region atlases cached as .npz files keyed by the content hash of their market QP."""

    def __init__(self, cache_dir: str):
        self.cache_dir = Path(cache_dir)

    def path_for(self, qp: MarketQP) -> Path:
        structure = re.sub(r'[^A-Za-z0-9_-]+', '_', qp.structure_id)
        return self.cache_dir / f'{structure}-{qp.content_hash()[:16]}.npz'

    def exists(self, qp: MarketQP) -> bool:
        return self.path_for(qp).is_file()

    def save(self, atlas: RegionAtlas) -> Path:
        path = self.path_for(atlas.qp)
        header = {
            'format_version': FORMAT_VERSION,
            'qp_hash': atlas.qp.content_hash(),
            'structure_id': atlas.structure_id,
            'regions': [{'id': r.id, 'flagged': r.flagged, 'n_gens': r.n_gens} for r in atlas.regions],
            'quarantined': [q.tolist() for q in atlas.quarantined],
        }
        arrays = {'header': np.array(json.dumps(header, sort_keys=True))}
        for r in atlas.regions:
            values = (np.array(r.active_set, dtype=int), r.D, r.d, r.P, r.p, r.H, r.h, r.strict, r.point,
                      np.array(r.dropped_rows, dtype=int))
            for name, value in zip(_REGION_ARRAYS, values):
                arrays[f'r{r.id}_{name}'] = value
        try:
            self.cache_dir.mkdir(parents=True, exist_ok=True)
            tmp = path.with_name(path.name + '.tmp')
            with open(tmp, 'wb') as f:
                np.savez(f, **arrays)
            tmp.replace(path)
        except OSError as e:
            raise CacheError(f'cannot write atlas cache {path}: {e}')
        _LOGGER.info(f'Cached {len(atlas)} regions of structure {atlas.structure_id} in {path}')
        return path

    def load(self, qp: MarketQP, solver: Optional[QpSolver] = None, region_tol: float = 1e-8) -> Optional[RegionAtlas]:
        """The cached atlas of this exact market, None on a miss."""
        path = self.path_for(qp)
        if not path.is_file():
            return None
        try:
            with np.load(path, allow_pickle=False) as data:
                header = json.loads(str(data['header']))
                if (header.get('format_version') != FORMAT_VERSION
                        or header.get('qp_hash') != qp.content_hash()
                        or header.get('structure_id') != qp.structure_id):
                    _LOGGER.info(f'Atlas cache {path} belongs to another market or format; ignoring it')
                    return None
                regions = []
                for meta in header['regions']:
                    a = {name: data[f'r{meta["id"]}_{name}'] for name in _REGION_ARRAYS}
                    active = tuple(int(i) for i in a['active'])
                    regions.append(CriticalRegion(
                        id=int(meta['id']), active_set=active, D=a['D'], d=a['d'], P=a['P'], p=a['p'],
                        H=a['H'], h=a['h'], strict=a['strict'].astype(bool),
                        lambda_tilde=qp.Lambda[:, list(active)], structure_id=qp.structure_id, point=a['point'],
                        flagged=bool(meta['flagged']), dropped_rows=tuple(int(i) for i in a['dropped']),
                        n_gens=int(meta['n_gens'])))
        except (OSError, KeyError, ValueError, zipfile.BadZipFile) as e:
            raise CacheError(f'atlas cache {path} is unreadable ({e.__class__.__name__}: {e}); '
                             f'delete it to rebuild')

        atlas = RegionAtlas(qp, solver, region_tol, regions=sorted(regions, key=lambda r: r.id))
        atlas.quarantined = [np.array(q) for q in header.get('quarantined', [])]
        _LOGGER.info(f'Loaded {len(atlas)} regions of structure {qp.structure_id} from {path}')
        return atlas
