import csv
import math
from typing import Any, Iterable, Mapping, Sequence, TextIO


def format_cell(value: Any) -> str:
    """Round-trippable text for one CSV cell"""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return format(value, ".17g")
    return str(value)


def write_csv(out: TextIO, schema: str, header: Sequence[str], rows: Iterable[Mapping[str, Any]]):
    """Schema comment, header row, then one line per mapping in header order"""
    out.write(f"# schema={schema} v1\n")
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([format_cell(row.get(column)) for column in header])
