"""
Lossless CSV and JSON records.

Floats are written with ``repr``, which round-trips exactly, and parsed
back to the narrowest of ``int``, ``float``, ``bool`` or ``str``.

Example:
    >>> from ionpf.util_records import write_csv, read_csv
    >>> import ubelt as ub
    >>> dpath = ub.Path.appdir('ionpf', 'tests', 'doctest').ensuredir()
    >>> rows = [{'t': 0, 'mean': 0.1 + 0.2, 'name': 'npf'}]
    >>> fpath = write_csv(dpath / 'records.csv', rows)
    >>> assert read_csv(fpath) == rows
"""
import csv
import json
import math
import numpy as np
import ubelt as ub


def _format(value):
    if value is None:
        return ''
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    if isinstance(value, np.integer):
        return str(int(value))
    return str(value)


def _parse(text):
    if text == '':
        return None
    if text in {'True', 'False'}:
        return text == 'True'
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def write_csv(fpath, rows, columns=None):
    """
    Args:
        fpath (PathLike): destination
        rows (List[dict]): records
        columns (List[str] | None): column order, defaults to the keys of
            the first row

    Returns:
        ub.Path
    """
    fpath = ub.Path(fpath)
    fpath.parent.ensuredir()
    if columns is None:
        columns = list(rows[0].keys()) if rows else []
    with open(fpath, 'w', newline='') as file:
        writer = csv.writer(file, lineterminator='\n')
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_format(row.get(c)) for c in columns])
    return fpath


def read_csv(fpath):
    fpath = ub.Path(fpath)
    with open(fpath, newline='') as file:
        reader = csv.reader(file)
        columns = next(reader)
        return [dict(zip(columns, map(_parse, row))) for row in reader]


def jsonable(data):
    """
    Convert numpy values nested in containers to builtins.

    Example:
        >>> from ionpf.util_records import jsonable
        >>> import numpy as np
        >>> jsonable({'a': np.arange(2), 'b': np.float64(1.5)})
        {'a': [0, 1], 'b': 1.5}
    """
    if isinstance(data, dict):
        return {str(k): jsonable(v) for k, v in data.items()}
    if isinstance(data, (list, tuple)):
        return [jsonable(v) for v in data]
    if isinstance(data, np.ndarray):
        return jsonable(data.tolist())
    if isinstance(data, np.generic):
        return data.item()
    if isinstance(data, float) and not math.isfinite(data):
        return None
    return data


def write_json(fpath, data):
    fpath = ub.Path(fpath)
    fpath.parent.ensuredir()
    fpath.write_text(json.dumps(jsonable(data), indent=2))
    return fpath
