"""Input checks shared by the estimator and the CLI."""
from __future__ import annotations

import dataclasses
from typing import Sequence

import numpy as np

from .data import LABELS, Dataset, Instance


def check_dataset(X, *, allow_empty: bool = False) -> Dataset:
    """Coerce ``X`` to a validated :class:`Dataset`.

    A bare sequence of instances is accepted when none of them has users,
    since profiles cannot be recovered without the user table.
    """
    if isinstance(X, Dataset):
        ds = X
    elif isinstance(X, Sequence) and all(isinstance(i, Instance) for i in X):
        ds = Dataset(tuple(X))
    else:
        raise TypeError(f"expected a Dataset or a sequence of Instance, got {type(X).__name__}")
    if not allow_empty and len(ds) == 0:
        raise ValueError("dataset has no instances")
    return ds.validate()


def check_labels(ds: Dataset, y=None) -> Dataset:
    """Apply ``y`` (class indices or N/F/T/U strings) to the instances."""
    if y is None:
        return ds
    y = list(y)
    if len(y) != len(ds):
        raise ValueError(f"y has {len(y)} entries for {len(ds)} instances")
    labels = []
    for v in y:
        if isinstance(v, str):
            if v not in LABELS:
                raise ValueError(f"unknown label {v!r}")
            labels.append(v)
        else:
            iv = int(v)
            if not 0 <= iv < len(LABELS):
                raise ValueError(f"label index {iv} out of range")
            labels.append(LABELS[iv])
    inst = tuple(dataclasses.replace(i, label=lab) for i, lab in zip(ds.instances, labels))
    return ds.replace(instances=inst)


def check_finite(name: str, a: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise FloatingPointError(f"{name} contains NaN or Inf")
    return a
