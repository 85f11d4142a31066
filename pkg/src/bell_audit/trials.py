"""
Columnar trial blocks and the trial CSV format.

CSV layout: header `trial,a,b,A,B`; a, b in {1, 2}; A, B in {1, 0}
(1 = '+', 0 = undetected); UTF-8 with LF line endings.
"""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator, Optional, Union

import numpy as np
import polars as pl

from .core import CountsTable, TrialRecord
from .errors import TrialOrderError, ValidationError

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["trial", "a", "b", "A", "B"]
BLOCK_SIZE = 1 << 18

_CSV_SCHEMA = {name: pl.Int64 for name in CSV_COLUMNS}


@dataclass(frozen=True, eq=False)
class TrialBlock:
    """
    A contiguous run of trials in columnar form.

    `a` and `b` hold setting indices (0 = first, 1 = second); `A` and `B`
    hold outcomes (1 = '+', 0 = undetected).
    """
    index: np.ndarray
    a: np.ndarray
    b: np.ndarray
    A: np.ndarray
    B: np.ndarray

    def __post_init__(self):
        size = len(self.index)
        for name in ("a", "b", "A", "B"):
            column = getattr(self, name)
            if len(column) != size:
                raise ValidationError(f"Column {name} has {len(column)} rows, expected {size}")
            if size and (column.min() < 0 or column.max() > 1):
                raise ValidationError(f"Column {name} holds values outside {{0, 1}}")

    def __len__(self) -> int:
        return len(self.index)

    def counts(self) -> CountsTable:
        return CountsTable.from_arrays(self.a, self.b, self.A, self.B)

    def records(self) -> Iterator[TrialRecord]:
        for n, a, b, A, B in zip(
            self.index.tolist(), self.a.tolist(), self.b.tolist(), self.A.tolist(), self.B.tolist()
        ):
            yield TrialRecord(index=n, a=a + 1, b=b + 1, A=A, B=B)

    def to_frame(self) -> pl.DataFrame:
        return pl.DataFrame(
            {
                "trial": self.index.astype(np.int64),
                "a": self.a.astype(np.int64) + 1,
                "b": self.b.astype(np.int64) + 1,
                "A": self.A.astype(np.int64),
                "B": self.B.astype(np.int64),
            }
        )

    @classmethod
    def from_frame(cls, frame: pl.DataFrame) -> "TrialBlock":
        """Build from a CSV-layout frame (settings 1/2, outcomes 1/0)."""
        if frame.columns != CSV_COLUMNS:
            raise ValidationError(f"Expected columns {CSV_COLUMNS}, got {frame.columns}")
        if frame.null_count().sum_horizontal().item() > 0:
            raise ValidationError("Trial CSV contains empty fields")
        columns = {name: frame.get_column(name).to_numpy() for name in CSV_COLUMNS}
        for name in ("a", "b"):
            if len(columns[name]) and (columns[name].min() < 1 or columns[name].max() > 2):
                raise ValidationError(f"Column {name} must hold settings 1 or 2")
        return cls(
            index=columns["trial"].astype(np.int64),
            a=(columns["a"] - 1).astype(np.int8),
            b=(columns["b"] - 1).astype(np.int8),
            A=columns["A"].astype(np.int8),
            B=columns["B"].astype(np.int8),
        )


def check_order(block: TrialBlock, last_index: int) -> int:
    """
    Verify indices are strictly increasing and continue past `last_index`.

    Returns:
        The last index of the block (or `last_index` for an empty block)

    Raises:
        TrialOrderError: On any non-increasing index
    """
    if not len(block):
        return last_index
    first = int(block.index[0])
    if first <= last_index:
        raise TrialOrderError(f"Trial index {first} does not follow {last_index}")
    steps = np.diff(block.index)
    if steps.size and steps.min() <= 0:
        pos = int(np.argmax(steps <= 0))
        raise TrialOrderError(
            f"Trial index {int(block.index[pos + 1])} does not follow {int(block.index[pos])}"
        )
    return int(block.index[-1])


def blocks_from_records(
    records: Iterable[TrialRecord],
    block_size: int = BLOCK_SIZE
) -> Iterator[TrialBlock]:
    """Group TrialRecords into columnar blocks, preserving order."""
    rows: list[tuple[int, int, int, int, int]] = []
    for record in records:
        rows.append((record.index, record.a.index, record.b.index, int(record.A), int(record.B)))
        if len(rows) == block_size:
            yield _block_from_rows(rows)
            rows = []
    if rows:
        yield _block_from_rows(rows)


def _block_from_rows(rows: list) -> TrialBlock:
    arr = np.array(rows, dtype=np.int64)
    return TrialBlock(
        index=arr[:, 0],
        a=arr[:, 1].astype(np.int8),
        b=arr[:, 2].astype(np.int8),
        A=arr[:, 3].astype(np.int8),
        B=arr[:, 4].astype(np.int8),
    )


def as_blocks(trials: Iterable[Union[TrialBlock, TrialRecord]]) -> Iterator[TrialBlock]:
    """Accept either blocks or records and yield blocks."""
    iterator = iter(trials)
    try:
        first = next(iterator)
    except StopIteration:
        return
    if isinstance(first, TrialBlock):
        yield first
        yield from iterator
        return

    def chained():
        yield first
        yield from iterator

    yield from blocks_from_records(chained())


def iter_records(blocks: Iterable[TrialBlock]) -> Iterator[TrialRecord]:
    for block in blocks:
        yield from block.records()


def count_trials(blocks: Iterable[TrialBlock]) -> CountsTable:
    total = CountsTable.zeros()
    for block in blocks:
        total = total + block.counts()
    return total


def write_trials_csv(blocks: Iterable[TrialBlock], path: Union[str, Path]) -> int:
    """
    Write trial blocks to a CSV file.

    Args:
        blocks: Trial blocks in index order
        path: Output file path

    Returns:
        Number of rows written
    """
    rows = 0
    with open(path, "wb") as fh:
        header = True
        for block in blocks:
            block.to_frame().write_csv(fh, include_header=header, line_terminator="\n")
            header = False
            rows += len(block)
        if header:
            fh.write((",".join(CSV_COLUMNS) + "\n").encode("utf-8"))
    logger.debug("Wrote %d trials to %s", rows, path)
    return rows


_PARSE_ERRORS = (
    pl.exceptions.ComputeError,
    pl.exceptions.InvalidOperationError,
    pl.exceptions.NoDataError,
    pl.exceptions.SchemaError,
)


def _csv_frames(path: Path, batch_size: int) -> Iterator[pl.DataFrame]:
    if hasattr(pl.LazyFrame, "collect_batches"):
        yield from pl.scan_csv(path, schema=_CSV_SCHEMA).collect_batches(chunk_size=batch_size)
        return
    reader = pl.read_csv_batched(path, batch_size=batch_size, schema_overrides=_CSV_SCHEMA)
    while True:
        batches = reader.next_batches(1)
        if not batches:
            return
        yield from batches


def read_trials_csv(
    path: Union[str, Path],
    batch_size: int = BLOCK_SIZE,
    limit: Optional[int] = None
) -> Iterator[TrialBlock]:
    """
    Stream a trial CSV as blocks in file order.

    Args:
        path: CSV file path
        batch_size: Rows per parsed batch (a hint to the reader)
        limit: Stop after this many trials

    Yields:
        TrialBlocks; index order is checked by the consumer

    Raises:
        ValidationError: On a wrong header or a field that is not an integer
    """
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().rstrip("\r\n").split(",")
    if header != CSV_COLUMNS:
        raise ValidationError(f"Expected header {','.join(CSV_COLUMNS)}, got {','.join(header)}")

    remaining = limit
    frames = _csv_frames(path, batch_size)
    while True:
        try:
            frame = next(frames)
        except StopIteration:
            return
        except _PARSE_ERRORS as e:
            raise ValidationError(f"Malformed trial CSV {path}: {e}") from None
        if remaining is not None:
            if remaining <= 0:
                return
            frame = frame.head(remaining)
            remaining -= frame.height
        yield TrialBlock.from_frame(frame)
