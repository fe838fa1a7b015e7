from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import IntEnum

import numpy as np

from fedfusion.clustering import FeatureSubset


class ClientStatus(IntEnum):
    FULLY_LABELLED = 1
    PARTIALLY_LABELLED = 2
    FULLY_UNLABELLED = 3

    @classmethod
    def from_mask(cls, mask: np.ndarray) -> ClientStatus:
        if mask.all():
            return cls.FULLY_LABELLED
        if not mask.any():
            return cls.FULLY_UNLABELLED
        return cls.PARTIALLY_LABELLED


@dataclass(frozen=True)
class ImageBatchMeta:
    side: int
    channels: int = 1

    @property
    def n_pixels(self) -> int:
        return self.side * self.side * self.channels

    def check(self, X: np.ndarray) -> None:
        if X.shape[1] != self.n_pixels:
            raise ValueError(
                f"image batch has {X.shape[1]} columns, expected {self.side}^2 x {self.channels}"
            )


@dataclass
class FullDataset:
    """A whole dataset before it is split across clients."""

    X: np.ndarray
    y: np.ndarray
    feature_names: list[str]
    task: str = "classification"
    n_classes: int | None = None
    is_test: np.ndarray | None = None
    image: ImageBatchMeta | None = None
    name: str = "dataset"
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.is_test is None:
            self.is_test = np.zeros(len(self.X), dtype=bool)

    @property
    def n_features(self) -> int:
        return self.X.shape[1]

    def rows(self, idx) -> FullDataset:
        return replace(self, X=self.X[idx], y=self.y[idx], is_test=self.is_test[idx])


@dataclass
class ClientDataset:
    """One client's private data. ``y`` is kept for evaluation; training code
    only reads labels where ``labelled_mask`` is true."""

    X: np.ndarray
    y: np.ndarray | None
    feature_subset: FeatureSubset
    labelled_mask: np.ndarray
    X_test: np.ndarray | None = None
    y_test: np.ndarray | None = None
    image: ImageBatchMeta | None = None
    task: str = "classification"
    n_classes: int | None = None
    name: str = ""

    def __post_init__(self):
        if self.X.shape[1] != len(self.feature_subset.indices):
            raise ValueError(
                f"X has {self.X.shape[1]} columns but the feature subset has "
                f"{len(self.feature_subset.indices)}"
            )
        self.labelled_mask = np.asarray(self.labelled_mask, dtype=bool)
        if len(self.labelled_mask) != len(self.X):
            raise ValueError("labelled_mask length differs from row count")

    @property
    def n(self) -> int:
        return len(self.X)

    @property
    def status(self) -> ClientStatus:
        return ClientStatus.from_mask(self.labelled_mask)

    @property
    def X_lab(self) -> np.ndarray:
        return self.X[self.labelled_mask]

    @property
    def y_lab(self) -> np.ndarray:
        return self.y[self.labelled_mask]

    @property
    def X_unlab(self) -> np.ndarray:
        return self.X[~self.labelled_mask]

    def project(self, columns: list[int]) -> ClientDataset:
        """Restrict to a subset of this client's global feature ids."""
        pos = {f: i for i, f in enumerate(self.feature_subset.indices)}
        missing = [c for c in columns if c not in pos]
        if missing:
            raise ValueError(f"client does not hold features {missing}")
        cols = [pos[c] for c in columns]
        return replace(
            self,
            X=self.X[:, cols],
            X_test=None if self.X_test is None else self.X_test[:, cols],
            feature_subset=FeatureSubset(tuple(columns), self.feature_subset.n_features),
        )
