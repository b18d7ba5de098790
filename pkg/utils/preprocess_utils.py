import json

import yaml


def read_json(data_path):
    with open(data_path, 'r', encoding='utf-8') as load_file:
        data_json = json.load(load_file)

    return data_json


def read_yaml(config_path):
    with open(config_path, 'r', encoding='utf-8') as load_file:
        data_yaml = yaml.safe_load(load_file)

    return data_yaml or {}


def read_config(config_path):
    """Load a run configuration from a .json or .yaml/.yml file into a dict."""
    if config_path.endswith('.json'):
        return read_json(config_path)
    elif config_path.endswith('.yaml') or config_path.endswith('.yml'):
        return read_yaml(config_path)
    else:
        raise ValueError("Invalid config file extension, use .json, .yaml or .yml")


def read_field_csv(field_path):
    """Read a per-vertex field written by `write_csv`: header `vertex,value`, manifest comment allowed."""
    values = {}
    with open(field_path, 'r', encoding='utf-8') as load_file:
        for line in load_file:
            line = line.strip()
            if not line or line.startswith('#') or line.startswith('vertex'):
                continue
            vertex, value = line.split(',')[:2]
            values[int(vertex)] = float(value)
    if sorted(values) != list(range(len(values))):
        raise ValueError("Field file must list every vertex 0..N-1 exactly once")
    return [values[v] for v in range(len(values))]
