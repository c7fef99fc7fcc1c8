from lmpwatch.src.var import UNDEFINED


class Config():
    def __init__(self, variables):
        self._all_variables = variables.copy()

    def __getattr__(self, key):
        if key.startswith('_'):
            raise AttributeError(key)
        try:
            value = self._all_variables[key]
        except KeyError:
            raise AttributeError(f'{key} is not a valid config key. Existing keys: {list(self._all_variables.keys())}')
        if value is UNDEFINED:
            raise ValueError(f'Variable "LMPWATCH_{key}" is undefined. Fix by setting "LMPWATCH_{key}" environment variable.')
        return value

    def replace(self, **overrides) -> 'Config':
        """Copy with some variables overridden, e.g. by command line flags."""
        variables = self._all_variables.copy()
        for key, value in overrides.items():
            if key not in variables:
                raise AttributeError(f'{key} is not a valid config key.')
            if value is not None:
                variables[key] = value
        return Config(variables)

    @property
    def all_variables(self):
        return self._all_variables.copy()
