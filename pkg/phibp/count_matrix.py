"""Grouped species count matrices: validation, delimited-text I/O and splitting."""
import csv
import io
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .exceptions import AlignmentError, CountMatrixParseError, DomainError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class CountMatrix:
    """Aggregated counts N[j, l] of species l in group j.

    All-zero species columns are dropped on construction unless
    `drop_empty` is False.

    Args:
        groups (list of str): J row labels.
        species (list of str): Column labels.
        values (array-like): Nonnegative integer counts of shape (J, r).
        samples (array-like, optional): Per-group sample counts M_j. Defaults to 1.
        exposure (array-like, optional): Per-group total sample weights; defaults
            to `samples` (unit weights).
        drop_empty (bool): Drop species with zero total count. Defaults to True.
    """

    def __init__(
        self,
        groups: Sequence[str],
        species: Sequence[str],
        values,
        samples=None,
        exposure=None,
        drop_empty: bool = True,
    ):
        values = np.asarray(values)
        if values.ndim != 2:
            raise DomainError("count values must be a 2-d array")
        if values.size and not np.all(np.equal(np.mod(values, 1), 0)):
            raise DomainError("counts must be integers")
        values = values.astype(np.int64)
        if np.any(values < 0):
            raise DomainError("counts must be nonnegative")
        if values.shape != (len(groups), len(species)):
            raise DomainError(
                f"values shape {values.shape} does not match {len(groups)} groups "
                f"and {len(species)} species"
            )
        if len(set(species)) != len(species):
            raise DomainError("species labels must be unique")

        self.groups = [str(g) for g in groups]
        self.species = [str(s) for s in species]
        self.values = values

        self.samples = (
            np.ones(len(groups), dtype=np.int64)
            if samples is None
            else np.asarray(samples, dtype=np.int64).reshape(-1)
        )
        if len(self.samples) != len(groups) or np.any(self.samples < 0):
            raise DomainError("one nonnegative sample count per group is required")
        self.exposure = (
            self.samples.astype(float)
            if exposure is None
            else np.asarray(exposure, dtype=float).reshape(-1)
        )
        if len(self.exposure) != len(groups) or np.any(self.exposure < 0):
            raise DomainError("one nonnegative exposure per group is required")

        if drop_empty:
            empty = self.values.sum(axis=0) == 0
            if np.any(empty):
                dropped = [s for s, e in zip(self.species, empty) if e]
                logger.warning("Dropping %d all-zero species columns: %s", len(dropped), dropped[:10])
                self.values = self.values[:, ~empty]
                self.species = [s for s, e in zip(self.species, empty) if not e]

    @property
    def n_groups(self) -> int:
        return len(self.groups)

    @property
    def n_species(self) -> int:
        return len(self.species)

    @property
    def max_count(self) -> int:
        return int(self.values.max(initial=0))

    def __eq__(self, other):
        if not isinstance(other, CountMatrix):
            return NotImplemented
        return (
            self.groups == other.groups
            and self.species == other.species
            and np.array_equal(self.values, other.values)
            and np.array_equal(self.samples, other.samples)
            and np.allclose(self.exposure, other.exposure)
        )

    def __repr__(self):
        return (
            f"CountMatrix(groups={self.n_groups}, species={self.n_species}, "
            f"total={int(self.values.sum())})"
        )

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            self.values,
            index=pd.Index(self.groups, name="group"),
            columns=self.species,
        )

    def align(self, other: "CountMatrix") -> Tuple[np.ndarray, np.ndarray, List[str]]:
        """
        Align another matrix to this one's species.

        Args:
            other (CountMatrix): A matrix over the same groups, e.g. test counts.

        Returns:
            Tuple[np.ndarray, np.ndarray, List[str]]: Counts of `other` on this
            matrix's species (zero where absent), counts of the species absent
            from this matrix, and the labels of those novel species.
        """
        if other.groups != self.groups:
            raise AlignmentError(
                f"group labels differ: {self.groups} versus {other.groups}"
            )
        index = {s: i for i, s in enumerate(other.species)}
        existing = np.zeros_like(self.values)
        for l, label in enumerate(self.species):
            if label in index:
                existing[:, l] = other.values[:, index[label]]
        known = set(self.species)
        novel_labels = [s for s in other.species if s not in known]
        novel = other.values[:, [index[s] for s in novel_labels]].reshape(self.n_groups, -1)
        return existing, novel, novel_labels


def _read_table(path: PathLike, sep: Optional[str]) -> List[List[str]]:
    text = Path(path).read_text(encoding="utf-8")
    if sep is None:
        first = text.splitlines()[0] if text else ""
        sep = "\t" if first.count("\t") > first.count(",") else ","
    return [row for row in csv.reader(io.StringIO(text), delimiter=sep)]


def load_count_matrix(
    path: PathLike, samples_path: Optional[PathLike] = None, sep: Optional[str] = None
) -> CountMatrix:
    """
    Load a delimited count table.

    The first row holds species labels, the first column group labels. Comma
    and tab delimiters are auto-detected. An optional sidecar file with columns
    `group,samples[,exposure]` gives M_j; otherwise every group is one pooled
    sample.

    Args:
        path (str or Path): Count table.
        samples_path (str or Path, optional): Sidecar of per-group sample counts.
        sep (str, optional): Delimiter; auto-detected when None.

    Returns:
        CountMatrix: The validated matrix, columns in input order.
    """
    rows = _read_table(path, sep)
    rows = [row for row in rows if row]
    if not rows:
        raise CountMatrixParseError("empty count file", row=1)

    header = rows[0]
    species = [s.strip() for s in header[1:]]
    if len(species) == 0:
        raise CountMatrixParseError("no species columns", row=1)

    groups = []
    values = np.zeros((len(rows) - 1, len(species)), dtype=np.int64)
    for i, row in enumerate(rows[1:]):
        line = i + 2
        if len(row) != len(header):
            raise CountMatrixParseError(
                f"expected {len(header)} fields, found {len(row)}", row=line
            )
        groups.append(row[0].strip())
        for l, cell in enumerate(row[1:]):
            cell = cell.strip()
            try:
                value = int(cell)
            except ValueError:
                try:
                    as_float = float(cell)
                except ValueError:
                    as_float = None
                if as_float is None or not as_float.is_integer():
                    raise CountMatrixParseError(
                        f"non-integer count {cell!r}", row=line, column=species[l]
                    ) from None
                value = int(as_float)
            if value < 0:
                raise CountMatrixParseError(
                    f"negative count {value}", row=line, column=species[l]
                )
            values[i, l] = value

    samples = exposure = None
    if samples_path is not None:
        samples, exposure = _load_samples(samples_path, groups)

    logger.info("Loaded %d groups x %d species from %s", len(groups), len(species), path)
    return CountMatrix(groups, species, values, samples=samples, exposure=exposure)


def _load_samples(path: PathLike, groups: List[str]):
    frame = pd.read_csv(path, sep=None, engine="python", dtype={"group": str})
    if "group" not in frame.columns or "samples" not in frame.columns:
        raise CountMatrixParseError("sample sidecar needs 'group' and 'samples' columns", row=1)
    frame = frame.set_index("group")
    missing = [g for g in groups if g not in frame.index]
    if missing:
        raise CountMatrixParseError(f"groups missing from sample sidecar: {missing}")
    samples = frame.loc[groups, "samples"].to_numpy()
    exposure = frame.loc[groups, "exposure"].to_numpy() if "exposure" in frame.columns else None
    return samples, exposure


def save_count_matrix(
    counts: CountMatrix, path: PathLike, samples_path: Optional[PathLike] = None
) -> None:
    """
    Write a count matrix in canonical form (comma-separated, `group` header cell).

    Args:
        counts (CountMatrix): The matrix.
        path (str or Path): Output count table.
        samples_path (str or Path, optional): Output sample sidecar.
    """
    counts.to_frame().to_csv(path, lineterminator="\n")
    if samples_path is not None:
        sidecar = pd.DataFrame(
            {"group": counts.groups, "samples": counts.samples, "exposure": counts.exposure}
        )
        sidecar.to_csv(samples_path, index=False, lineterminator="\n", float_format="%.17g")


def binomial_split(rng, counts: CountMatrix, M, m) -> Tuple[CountMatrix, CountMatrix]:
    """
    Thin counts into train and test sets.

    Each cell draws N_train ~ Binomial(N, M_j / (M_j + m_j)) and N_test = N - N_train.
    Each side drops the species columns it left empty, so the two matrices
    usually cover different species. `counts.align(train)` and
    `counts.align(test)` put both back on the original columns, where they
    sum to the original cell by cell.

    Args:
        rng (RngHandle): Random stream.
        counts (CountMatrix): Original counts.
        M (array-like): Training sample counts per group, at least 1.
        m (array-like): Test sample counts per group, at least 1.

    Returns:
        Tuple[CountMatrix, CountMatrix]: Train and test matrices.
    """
    M = np.broadcast_to(np.asarray(M, dtype=np.int64), (counts.n_groups,))
    m = np.broadcast_to(np.asarray(m, dtype=np.int64), (counts.n_groups,))
    if np.any(M < 1) or np.any(m < 1):
        raise DomainError("binomial_split needs M_j >= 1 and m_j >= 1")

    p = M / (M + m)
    train = rng.generator.binomial(counts.values, p[:, None]).astype(np.int64)
    test = counts.values - train
    return (
        CountMatrix(counts.groups, counts.species, train, samples=M),
        CountMatrix(counts.groups, counts.species, test, samples=m),
    )
