"""Model specifications and design-matrix assembly."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.sparse as sp

from ..core import LinkKind
from ..errors import DegenerateDataError, SpecError

INTERCEPT = "(Intercept)"


def factor_columns(factor: str) -> Tuple[str, ...]:
    """Columns combined into a grouping factor; ``"a:b"`` crosses ``a`` and ``b``."""
    return tuple(part.strip() for part in factor.split(":"))


@dataclass(frozen=True)
class ModelSpec:
    """Declarative binomial GLMM with random intercepts.

    ``random_factors`` entries name grouping columns. A colon joins several
    columns into one interaction factor, e.g. ``"labeler_id:judge_id"``.
    """

    outcome: str
    fixed: Tuple[str, ...] = ()
    random_factors: Tuple[str, ...] = ()
    link: LinkKind = LinkKind.LOGIT
    standardize: Tuple[str, ...] = ()
    name: str = "model"
    labels: Dict[str, str] = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "fixed", tuple(self.fixed))
        object.__setattr__(self, "random_factors", tuple(self.random_factors))
        object.__setattr__(self, "standardize", tuple(self.standardize))
        object.__setattr__(self, "link", LinkKind.parse(self.link))
        if self.outcome in self.fixed:
            raise SpecError(f"outcome {self.outcome!r} also listed as a fixed effect")
        if len(set(self.fixed)) != len(self.fixed):
            raise SpecError("duplicate fixed-effect columns")
        if len(set(self.random_factors)) != len(self.random_factors):
            raise SpecError("random factors must be pairwise distinct")
        extra = set(self.standardize) - set(self.fixed)
        if extra:
            raise SpecError(f"standardized columns not among fixed effects: {sorted(extra)}")

    @property
    def columns(self) -> Tuple[str, ...]:
        cols = [self.outcome, *self.fixed]
        for f in self.random_factors:
            cols.extend(factor_columns(f))
        seen = []
        for c in cols:
            if c not in seen:
                seen.append(c)
        return tuple(seen)

    def label(self, column: str) -> str:
        return self.labels.get(column, column)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "outcome": self.outcome,
            "fixed": list(self.fixed),
            "random_factors": list(self.random_factors),
            "link": self.link.value,
            "standardize": list(self.standardize),
            "labels": dict(self.labels),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        known = {"name", "outcome", "fixed", "random_factors", "link", "standardize", "labels"}
        unknown = set(d) - known
        if unknown:
            raise SpecError(f"unknown model-spec fields: {sorted(unknown)}")
        if "outcome" not in d:
            raise SpecError("model spec needs an 'outcome'")
        return cls(
            outcome=d["outcome"],
            fixed=tuple(d.get("fixed", ())),
            random_factors=tuple(d.get("random_factors", ())),
            link=d.get("link", "logit"),
            standardize=tuple(d.get("standardize", ())),
            name=d.get("name", "model"),
            labels=dict(d.get("labels", {})),
        )


@dataclass(frozen=True)
class FactorInfo:
    name: str
    start: int
    stop: int
    levels: Tuple[str, ...]

    @property
    def n_levels(self) -> int:
        return self.stop - self.start

    @property
    def slice(self) -> slice:
        return slice(self.start, self.stop)


@dataclass(frozen=True)
class DesignMatrices:
    y: np.ndarray
    X: np.ndarray
    Z: sp.csc_matrix
    fixed_names: Tuple[str, ...]
    factors: Tuple[FactorInfo, ...]
    link: LinkKind = LinkKind.LOGIT
    n_dropped: int = 0
    standardization: Dict[str, Tuple[float, float]] = field(default_factory=dict)
    level_index: np.ndarray = None  # (n, n_factors) level codes per row

    @property
    def n_obs(self) -> int:
        return self.y.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def q(self) -> int:
        return self.Z.shape[1]

    @property
    def factor_map(self) -> Dict[str, FactorInfo]:
        return {f.name: f for f in self.factors}

    def expand_theta(self, theta) -> np.ndarray:
        """Per-column random-effect SD vector."""
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (len(self.factors),):
            raise ValueError(f"theta must have length {len(self.factors)}")
        return np.repeat(theta, [f.n_levels for f in self.factors])


def _factor_codes(data: pd.DataFrame, factor: str):
    cols = factor_columns(factor)
    if len(cols) == 1:
        keys = data[cols[0]].astype(str)
    else:
        keys = data[list(cols)].astype(str).agg(":".join, axis=1)
    codes, uniques = pd.factorize(keys, sort=False)
    return codes.astype(np.int64), tuple(str(u) for u in uniques)


def build_design(data: pd.DataFrame, spec: ModelSpec) -> DesignMatrices:
    """Assemble ``y``, dense ``X`` (with intercept) and one-hot sparse ``Z``.

    Rows with a missing value in any modelled column are dropped and
    counted. Factor levels are coded in order of first appearance.
    """
    missing = [c for c in spec.columns if c not in data.columns]
    if missing:
        raise SpecError(f"columns not found in dataset: {missing}")
    if len(data) == 0:
        raise DegenerateDataError("dataset is empty")

    frame = data.loc[:, list(spec.columns)]
    keep = frame.notna().all(axis=1).to_numpy()
    n_dropped = int((~keep).sum())
    frame = frame.loc[keep]
    if len(frame) == 0:
        raise DegenerateDataError("no rows left after dropping missing values")

    y = pd.to_numeric(frame[spec.outcome].astype(float), errors="raise").to_numpy(dtype=float)
    if not np.all((y == 0) | (y == 1)):
        raise DegenerateDataError(f"outcome {spec.outcome!r} is not binary")
    if np.all(y == y[0]):
        raise DegenerateDataError(f"outcome {spec.outcome!r} is constant")

    n = len(frame)
    cols = [np.ones(n)]
    scaling = {}
    for name in spec.fixed:
        raw = frame[name]
        if raw.dtype == object:
            raise SpecError(f"fixed effect {name!r} must be numeric or boolean")
        x = raw.astype(float).to_numpy()
        if name in spec.standardize:
            mean = float(x.mean())
            sd = float(x.std(ddof=1)) if n > 1 else 0.0
            if not sd > 0:
                raise DegenerateDataError(f"cannot standardize constant column {name!r}")
            x = (x - mean) / sd
            scaling[name] = (mean, sd)
        cols.append(x)
    X = np.column_stack(cols)

    blocks, factors, codes_all = [], [], []
    start = 0
    for f in spec.random_factors:
        codes, levels = _factor_codes(frame, f)
        if len(levels) < 2:
            raise SpecError(f"random factor {f!r} has a single level")
        blocks.append(sp.csc_matrix((np.ones(n), (np.arange(n), codes)), shape=(n, len(levels))))
        factors.append(FactorInfo(f, start, start + len(levels), levels))
        codes_all.append(codes)
        start += len(levels)
    Z = sp.hstack(blocks, format="csc") if blocks else sp.csc_matrix((n, 0))
    level_index = np.column_stack(codes_all) if codes_all else np.zeros((n, 0), dtype=np.int64)

    return DesignMatrices(
        y=y,
        X=X,
        Z=Z,
        fixed_names=(INTERCEPT, *spec.fixed),
        factors=tuple(factors),
        link=spec.link,
        n_dropped=n_dropped,
        standardization=scaling,
        level_index=level_index,
    )


def design_from_arrays(y: Sequence[float], X=None, groups: Sequence[Sequence] = (),
                       factor_names: Sequence[str] = None, link=LinkKind.LOGIT) -> DesignMatrices:
    """Design matrices straight from arrays; ``X`` must include any intercept column."""
    y = np.asarray(y, dtype=float)
    n = y.shape[0]
    X = np.ones((n, 1)) if X is None else np.asarray(X, dtype=float).reshape(n, -1)
    names = factor_names or [f"g{k}" for k in range(len(groups))]
    blocks, factors, codes_all, start = [], [], [], 0
    for name, g in zip(names, groups):
        codes, uniques = pd.factorize(pd.Series(list(g)).astype(str), sort=False)
        blocks.append(sp.csc_matrix((np.ones(n), (np.arange(n), codes)), shape=(n, len(uniques))))
        factors.append(FactorInfo(name, start, start + len(uniques), tuple(uniques)))
        codes_all.append(codes)
        start += len(uniques)
    Z = sp.hstack(blocks, format="csc") if blocks else sp.csc_matrix((n, 0))
    return DesignMatrices(
        y=y, X=X, Z=Z,
        fixed_names=tuple(f"x{k}" for k in range(X.shape[1])),
        factors=tuple(factors),
        link=LinkKind.parse(link),
        level_index=np.column_stack(codes_all) if codes_all else np.zeros((n, 0), dtype=np.int64),
    )
