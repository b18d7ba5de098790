import hashlib
import json
import os


def canonical_json(data):
    return json.dumps(data, sort_keys=True, separators=(',', ':'), default=float)


def manifest_hash(data):
    return hashlib.sha256(canonical_json(data).encode('utf-8')).hexdigest()[:16]


def get_exact_output_path(output_path, command, subcommand, seed, fmt):
    if fmt not in ('json', 'csv', 'jsonl', 'txt'):
        raise ValueError("Invalid output format")
    if subcommand:
        file_name = f"{command}_{subcommand}_seed{seed}.{fmt}"
    else:
        file_name = f"{command}_seed{seed}.{fmt}"
    return os.path.join(output_path, file_name)


def write_json(data, output_path, manifest=None):
    if manifest is not None:
        data = dict(data)
        data['manifest_hash'] = manifest
    with open(output_path, 'w', encoding='utf-8') as write_file:
        json.dump(data, write_file, indent=4, sort_keys=True, default=float)
        write_file.write('\n')


def write_csv(header, rows, output_path, manifest=None):
    with open(output_path, 'w', encoding='utf-8') as write_file:
        if manifest is not None:
            write_file.write(f'# manifest={manifest}\n')
        write_file.write(','.join(header) + '\n')
        for row in rows:
            write_file.write(','.join(format_cell(cell) for cell in row) + '\n')


def write_jsonl(events, output_path, manifest=None):
    with open(output_path, 'w', encoding='utf-8') as write_file:
        if manifest is not None:
            write_file.write(json.dumps({'manifest_hash': manifest}) + '\n')
        for event in events:
            write_file.write(json.dumps(event, sort_keys=True, default=float) + '\n')


def format_cell(cell):
    # repr keeps full float precision so replays are byte-identical
    if isinstance(cell, float):
        return repr(cell)
    if isinstance(cell, bool):
        return 'true' if cell else 'false'
    return str(cell)
