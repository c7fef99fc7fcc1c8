import hashlib
import traceback
from typing import Iterable, List

import numpy as np


# from https://stackoverflow.com/a/37135014/3508719
def exception_to_string(excp):
    stack = traceback.extract_stack()[:-2] + traceback.extract_tb(excp.__traceback__)
    pretty = traceback.format_list(stack)
    return ''.join(pretty) + '\n  {} {}'.format(excp.__class__, excp)


# from: https://github.com/drgarcia1986/simple-settings/pull/281/files
_MAP = {
    'y': True,
    'yes': True,
    't': True,
    'true': True,
    'on': True,
    '1': True,
    'n': False,
    'no': False,
    'f': False,
    'false': False,
    'off': False,
    '0': False
}


def strtobool(value):
    try:
        return _MAP[str(value).lower()]
    except KeyError:
        raise ValueError('"{}" is not a valid bool value'.format(value))


def parse_float_list(value) -> List[float]:
    """Parse '10,20,30' (or an iterable of numbers) into a list of floats."""
    if isinstance(value, str):
        return [float(v) for v in value.replace(';', ',').split(',') if v.strip()]
    return [float(v) for v in value]


def array_digest(arrays: Iterable, extra: Iterable[str] = ()) -> str:
    """sha256 over the shapes and little-endian float64 bytes of the given arrays."""
    h = hashlib.sha256()
    for a in arrays:
        a = np.ascontiguousarray(np.asarray(a, dtype='<f8'))
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    for s in extra:
        h.update(str(s).encode())
    return h.hexdigest()
