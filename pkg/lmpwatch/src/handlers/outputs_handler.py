import logging
from pathlib import Path

import pandas as pd
import yaml

_LOGGER = logging.getLogger('lmpwatch.' + Path(__file__).stem)


class OutputsHandler():
    """Writes command results into one output directory.

    Nothing written here carries a timestamp, so reruns give identical files.
    """

    def __init__(self, out_dir: str, float_format: str = '%.10g'):
        self.out_dir = Path(out_dir)
        self.float_format = float_format

    def path(self, name: str) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        return self.out_dir / name

    def write_frame(self, name: str, frame: pd.DataFrame, float_format: str = None) -> Path:
        path = self.path(name)
        frame.to_csv(path, index=False, float_format=float_format or self.float_format, lineterminator='\n')
        _LOGGER.info(f'Wrote {path}')
        return path

    def write_text(self, name: str, text: str) -> Path:
        path = self.path(name)
        path.write_text(text)
        _LOGGER.info(f'Wrote {path}')
        return path

    def write_yaml(self, name: str, data: dict) -> Path:
        path = self.path(name)
        with open(path, 'w') as f:
            yaml.safe_dump(data, f, sort_keys=False)
        _LOGGER.info(f'Wrote {path}')
        return path
