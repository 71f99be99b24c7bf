import csv
import json
import math
from functools import reduce
from pathlib import Path
from typing import Iterable, List, Sequence

from pipebrew.validation import is_positive_integer


def ceil_div(a: int, b: int) -> int:
    """
    Integer ceiling of ``a / b`` for positive ``b``.

    :raises ValidationError: If `b` is not a positive integer.
    """
    is_positive_integer(b)
    return -(-a // b)


def lcm_of(values: Iterable[int]) -> int:
    """
    Least common multiple of a collection of positive integers.

    :param values: The integers. An empty collection gives 1.
    :return: The least common multiple.
    :rtype: int
    """
    return reduce(math.lcm, values, 1)


def write_json(payload: dict, path) -> Path:
    """
    Write a JSON document with sorted keys and a trailing newline.

    Output is byte-stable for equal payloads.

    :param payload: A JSON-serializable mapping.
    :param path: Destination file path.
    :return: The path written.
    :rtype: Path
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
    return path


def write_csv(header: Sequence[str], rows: Iterable[Sequence], path) -> Path:
    """
    Write rows to a CSV file with a header line.

    :param header: Column names.
    :param rows: Row sequences, each as long as the header.
    :param path: Destination file path.
    :return: The path written.
    :rtype: Path
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)
    return path


def dash_join(values: List[int]) -> str:
    return "-".join(str(v) for v in values)
