import logging
from pathlib import Path
from typing import List, Optional, Tuple

import yaml

from lmpwatch.src.errors import InputError
from lmpwatch.src.netmodel import NetworkCase, OutageSpec
from lmpwatch.src.stream import ScenarioSpec

_LOGGER = logging.getLogger('lmpwatch.' + Path(__file__).stem)


class InputsHandler():
    """Finds and parses case files, scenario files and hypothesis lists."""

    def __init__(self,
                 cases_dir: str,
                 scenarios_dir: str,
                 shed_linear_cost: Optional[float] = None,
                 shed_quadratic_cost: Optional[float] = None,
                 ):
        self.cases_dir = cases_dir
        self.scenarios_dir = scenarios_dir
        self.shed_linear_cost = shed_linear_cost
        self.shed_quadratic_cost = shed_quadratic_cost

    @staticmethod
    def resolve(ref: str, directory: str, kind: str) -> Path:
        """A path as given, or a bundled file name with or without its .yaml suffix."""
        candidates = [Path(ref), Path(directory) / ref, Path(directory) / f'{ref}.yaml']
        for candidate in candidates:
            if candidate.is_file():
                return candidate
        raise InputError(f'{kind} "{ref}" not found (looked in {[str(c) for c in candidates]})')

    @staticmethod
    def _read_yaml(path: Path) -> dict:
        try:
            with open(path, 'r') as f:
                data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise InputError(f'{path} is not valid YAML: {e}')
        if not isinstance(data, dict):
            raise InputError(f'{path} does not hold a mapping')
        return data

    def load_case(self, ref: str) -> NetworkCase:
        path = self.resolve(ref, self.cases_dir, 'case')
        case = NetworkCase.from_dict(self._read_yaml(path), name=path.stem)
        if self.shed_linear_cost is not None or self.shed_quadratic_cost is not None:
            _LOGGER.info(f'Overriding shed costs of {case.name}: linear={self.shed_linear_cost}, '
                         f'quadratic={self.shed_quadratic_cost}')
            case = case.with_shed_costs(self.shed_linear_cost, self.shed_quadratic_cost)
        _LOGGER.debug(f'Loaded case {case.name} from {path}: {case.n_buses} buses, {case.n_lines} lines, '
                      f'{case.n_generators} generators, {case.n_loads} loads')
        return case

    def scenario_case_ref(self, ref: str) -> str:
        path = self.resolve(ref, self.scenarios_dir, 'scenario')
        return str(self._read_yaml(path).get('case', ''))

    def load_scenario(self, ref: str, case: Optional[NetworkCase] = None) -> ScenarioSpec:
        path = self.resolve(ref, self.scenarios_dir, 'scenario')
        spec = ScenarioSpec.from_dict(self._read_yaml(path), case=case, name=path.stem)
        if case is not None:
            spec.validate(case)
        return spec

    @staticmethod
    def parse_hypotheses(text: Optional[str], case: NetworkCase) -> List[Tuple[OutageSpec, str]]:
        """Outages from 'line:1-5,line:3,gen:2'.

        A line is named by its bus pair or its index, a generator by its index.
        Without a list every line whose loss keeps the network connected is used.
        """
        if not text:
            outages = [OutageSpec('line', k) for k in range(case.n_lines) if not case.islands_without(k)]
            skipped = case.n_lines - len(outages)
            if skipped:
                _LOGGER.info(f'Skipping {skipped} lines whose outage would island {case.name}')
        else:
            outages = []
            for item in [s.strip() for s in text.split(',') if s.strip()]:
                kind, _, element = item.partition(':')
                kind = {'gen': 'generator'}.get(kind.strip(), kind.strip())
                try:
                    if kind == 'line' and '-' in element:
                        from_bus, to_bus = (int(b) for b in element.split('-'))
                        outages.append(OutageSpec('line', case.line_index(from_bus, to_bus)))
                    else:
                        outages.append(OutageSpec(kind, int(element)))
                except ValueError:
                    raise InputError(f'cannot parse hypothesis "{item}", expected e.g. line:1-5 or gen:2')
            if len(set(outages)) != len(outages):
                raise InputError(f'hypotheses repeat: {text}')

        for outage in outages:
            outage.validate(case)
        return [(outage, outage.label(case)) for outage in outages]

