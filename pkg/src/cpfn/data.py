"""Paired covariate/response samples, CSV ingestion and fold splitting."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import DimensionMismatch, EmptyDataset, InvalidConfig, ParseError

log = logging.getLogger(__name__)

TRANSFORMS = ("identity", "log1p")


@dataclass
class Dataset:
    """n paired rows of covariates ``X`` (n, d) and responses ``Y`` (n, q).

    ``Y`` is stored in the *transformed* scale named by ``y_transform``;
    :meth:`raw_y` undoes the transform.
    """

    X: np.ndarray
    Y: np.ndarray
    x_names: list = None
    y_names: list = None
    x_kinds: list = None
    y_transform: str = "identity"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        Y = np.asarray(self.Y, dtype=np.float64)
        if X.ndim == 1:
            X = X[:, None]
        if Y.ndim == 1:
            Y = Y[:, None]
        if X.shape[0] != Y.shape[0]:
            raise DimensionMismatch(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Y))):
            raise DimensionMismatch("dataset contains NaN or Inf")
        if self.y_transform not in TRANSFORMS:
            raise InvalidConfig(f"unknown response transform {self.y_transform!r}")
        self.X, self.Y = X, Y
        self.x_names = list(self.x_names) if self.x_names else [f"x{j}" for j in range(X.shape[1])]
        self.y_names = list(self.y_names) if self.y_names else [f"y{j}" for j in range(Y.shape[1])]
        self.x_kinds = list(self.x_kinds) if self.x_kinds else ["continuous"] * X.shape[1]

    @property
    def n(self):
        return self.X.shape[0]

    @property
    def d(self):
        return self.X.shape[1]

    @property
    def q(self):
        return self.Y.shape[1]

    def __len__(self):
        return self.n

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.X[idx], self.Y[idx], self.x_names, self.y_names, self.x_kinds,
                       self.y_transform, dict(self.meta))

    def raw_y(self) -> np.ndarray:
        return inverse_transform(self.y_transform, self.Y)

    def with_transform(self, y_transform: str) -> "Dataset":
        """Re-express Y (currently raw) in the named transformed scale."""
        if self.y_transform != "identity":
            raise InvalidConfig("dataset response is already transformed")
        return Dataset(self.X, forward_transform(y_transform, self.Y), self.x_names, self.y_names,
                       self.x_kinds, y_transform, dict(self.meta))

    def to_frame(self) -> pd.DataFrame:
        cols = {name: self.X[:, j] for j, name in enumerate(self.x_names)}
        cols.update({name: self.raw_y()[:, j] for j, name in enumerate(self.y_names)})
        return pd.DataFrame(cols)


def forward_transform(name, y):
    y = np.asarray(y, dtype=np.float64)
    if name == "identity":
        return y
    if name == "log1p":
        if np.any(y <= -1):
            raise InvalidConfig("log1p transform needs responses > -1")
        return np.log1p(y)
    raise InvalidConfig(f"unknown response transform {name!r}")


def inverse_transform(name, y):
    y = np.asarray(y, dtype=np.float64)
    if name == "identity":
        return y
    if name == "log1p":
        return np.expm1(y)
    raise InvalidConfig(f"unknown response transform {name!r}")


def log_abs_jacobian(name, y_raw):
    """log |det dg/dy| summed over response coordinates, at raw-scale ``y``."""
    y_raw = np.asarray(y_raw, dtype=np.float64)
    if name == "identity":
        return np.zeros(y_raw.shape[:-1])
    return -np.log1p(y_raw).sum(axis=-1)


def one_hot_encode(df: pd.DataFrame, columns) -> tuple:
    """Expand discrete columns into indicator columns (sorted level order)."""
    out, names = [], []
    for c in columns:
        levels = sorted(df[c].unique())
        for lev in levels:
            out.append((df[c] == lev).astype(np.float64).to_numpy())
            names.append(f"{c}={lev:g}")
    return (np.column_stack(out) if out else np.empty((len(df), 0))), names


def _parse_float(text):
    try:
        return float(text)
    except ValueError:
        return np.nan


def ingest_csv(path, x_columns, y_columns, y_transform="identity", discrete_columns=(),
               one_hot=False) -> Dataset:
    """Read a comma-separated file with a header row into a :class:`Dataset`.

    Rows with a missing value in any declared column are dropped (and the
    count logged).  A non-numeric cell raises :class:`ParseError` naming its
    1-based data row and column.
    """
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except FileNotFoundError:
        raise
    except Exception as exc:  # pandas raises a zoo of parser errors
        raise ParseError(f"could not parse {path}: {exc}") from None
    x_columns, y_columns = list(x_columns), list(y_columns)
    missing = [c for c in x_columns + y_columns if c not in df.columns]
    if missing:
        raise ParseError(f"columns not found: {missing}", column=missing[0])
    cols = x_columns + y_columns
    raw = df[cols].apply(lambda s: s.str.strip())
    blank = raw.isin(["", "NA", "NaN", "nan", "?"])
    # float() parses with correct rounding, so written files read back bit-exactly
    numeric = raw.apply(lambda s: s.map(_parse_float))
    bad = numeric.isna() & ~blank
    if bad.to_numpy().any():
        r, c = np.argwhere(bad.to_numpy())[0]
        raise ParseError(f"non-numeric value {raw.iat[r, c]!r} at row {r + 1}, column {cols[c]!r}",
                         row=int(r + 1), column=cols[c])
    keep = ~blank.any(axis=1)
    dropped = int((~keep).sum())
    if dropped:
        log.warning("dropped %d rows with missing values from %s", dropped, path)
    numeric = numeric[keep.to_numpy()]
    if len(numeric) == 0:
        raise EmptyDataset(f"{path} has no complete rows")
    discrete = set(discrete_columns)
    if one_hot and discrete:
        cont = [c for c in x_columns if c not in discrete]
        disc_block, disc_names = one_hot_encode(numeric, [c for c in x_columns if c in discrete])
        X = np.column_stack([numeric[cont].to_numpy(np.float64), disc_block])
        x_names = cont + disc_names
        kinds = ["continuous"] * len(cont) + ["discrete"] * len(disc_names)
    else:
        X = numeric[x_columns].to_numpy(np.float64)
        x_names = x_columns
        kinds = ["discrete" if c in discrete else "continuous" for c in x_columns]
    Y = forward_transform(y_transform, numeric[y_columns].to_numpy(np.float64))
    return Dataset(X, Y, x_names, y_columns, kinds, y_transform, {"source": str(path)})


def write_csv(data: Dataset, path) -> None:
    data.to_frame().to_csv(path, index=False, float_format="%.17g")


@dataclass(frozen=True)
class FoldSplit:
    """k disjoint test-index blocks over a seeded permutation of row indices."""

    folds: tuple

    @property
    def k(self):
        return len(self.folds)

    def train_test(self, i):
        test = self.folds[i]
        train = np.concatenate([f for j, f in enumerate(self.folds) if j != i])
        return np.sort(train), np.sort(test)


def kfold_split(n: int, k: int, seed: int) -> FoldSplit:
    if k < 2 or n < k:
        raise InvalidConfig(f"need k >= 2 and n >= k (got n={n}, k={k})")
    perm = np.random.default_rng([seed, 0xF01D]).permutation(n)
    return FoldSplit(tuple(np.array(b) for b in np.array_split(perm, k)))


def validation_split(n: int, fraction: float, rng) -> tuple:
    """(train_idx, val_idx) by seeded uniform shuffle."""
    if not 0 <= fraction < 1:
        raise InvalidConfig("validation_fraction must lie in [0, 1)")
    n_val = int(math.floor(fraction * n + 0.5)) if fraction > 0 else 0
    if fraction > 0:
        n_val = min(max(n_val, 1), n - 1)
    perm = rng.permutation(n)
    return np.sort(perm[n_val:]), np.sort(perm[:n_val])
