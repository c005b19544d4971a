import logging
import re

import numpy as np

from models.errors import ParseError, SchemaError
from models.schemas import StochasticMatrix

logger = logging.getLogger(__name__)

MATRIX_HEADER = re.compile(r"^#\s*stochastic-matrix v1,\s*size=(\d+)\s*$")


def read_matrix(path: str) -> StochasticMatrix:
    """Load a dense row-stochastic matrix written by write_matrix"""
    with open(path, "r") as f:
        header = f.readline().strip()
        match = MATRIX_HEADER.match(header)
        if match is None:
            raise SchemaError(f"{path} does not start with a stochastic-matrix v1 header", key="header")
        size = int(match.group(1))
        try:
            entries = np.loadtxt(f, delimiter=",", ndmin=2)
        except ValueError as e:
            raise ParseError(f"unreadable matrix body in {path}: {e}", line=2) from e

    if entries.shape != (size, size):
        raise SchemaError(f"expected {size}x{size} entries, found {entries.shape}", key="size")
    logger.info(f"Read {size}-state matrix from {path}")
    return StochasticMatrix(entries=entries)


def write_matrix(matrix: StochasticMatrix, path: str):
    dense = matrix.dense()
    with open(path, "w") as f:
        f.write(f"# stochastic-matrix v1, size={matrix.size}\n")
        for row in dense:
            f.write(",".join(format(float(x), ".17g") for x in row) + "\n")
