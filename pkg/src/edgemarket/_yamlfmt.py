"""YAML emission with 12-significant-digit floats.

All solution and instance documents go through here so serialized output
is byte-stable across runs.
"""

import math

import yaml


class _Dumper(yaml.SafeDumper):
    pass


def _float_representer(dumper, value):
    if math.isnan(value):
        text = ".nan"
    elif math.isinf(value):
        text = ".inf" if value > 0 else "-.inf"
    else:
        text = f"{value:.12g}"
    return dumper.represent_scalar("tag:yaml.org,2002:float", text)


_Dumper.add_representer(float, _float_representer)


def dump_yaml(data) -> str:
    return yaml.dump(data, Dumper=_Dumper, sort_keys=False, default_flow_style=None)
