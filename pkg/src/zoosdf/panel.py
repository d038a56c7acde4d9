"""Return/factor panel ingestion, validation, and standardization.

All estimation modules consume the immutable :class:`ReturnPanel`.  Tradable
factors whose name matches an asset column are treated as test assets too
(they must self-price); nontradable factors get their own slot in the stacked
vector Y_t = assets + unmatched factors.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from .errors import (
    AlignmentError,
    DataError,
    DegenerateColumnError,
    DimensionError,
    SchemaError,
)

ASSET_CLASSES = ("bond", "stock", "nontradable")

KAPPA_SUM_TOL = 1e-12
STD_TOL = 1e-10


@dataclass(frozen=True)
class FactorMeta:
    """Static description of one candidate factor."""

    name: str
    tradable: bool
    asset_class: str
    kappa_tilt: float = 0.0

    def __post_init__(self):
        if self.asset_class not in ASSET_CLASSES:
            raise SchemaError(
                f"factor {self.name!r}: asset_class must be one of {ASSET_CLASSES}, "
                f"got {self.asset_class!r}"
            )
        if not -1.0 < self.kappa_tilt < 1.0:
            raise SchemaError(
                f"factor {self.name!r}: kappa_tilt must lie in (-1, 1), got {self.kappa_tilt}"
            )


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ReturnPanel:
    """Aligned monthly excess returns and candidate factors.

    ``factors_as_assets`` maps a factor index to the asset column carrying the
    same series; such factors do not get a separate slot in Y_t.
    """

    dates: tuple[str, ...]
    returns: np.ndarray
    factors: np.ndarray
    factor_meta: tuple[FactorMeta, ...]
    asset_names: tuple[str, ...]
    standardized: bool = False
    factors_as_assets: dict[int, int] = field(default_factory=dict)
    return_scales: np.ndarray | None = None
    factor_scales: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "returns", _readonly(self.returns))
        object.__setattr__(self, "factors", _readonly(self.factors))
        self._validate()

    # -- basic dimensions ---------------------------------------------------
    @property
    def n_periods(self) -> int:
        return self.returns.shape[0]

    @property
    def n_assets(self) -> int:
        return self.returns.shape[1]

    @property
    def n_factors(self) -> int:
        return self.factors.shape[1]

    @property
    def factor_names(self) -> tuple[str, ...]:
        return tuple(m.name for m in self.factor_meta)

    @property
    def kappa(self) -> np.ndarray:
        return np.array([m.kappa_tilt for m in self.factor_meta])

    @property
    def tradable_mask(self) -> np.ndarray:
        return np.array([m.tradable for m in self.factor_meta], dtype=bool)

    @property
    def stacked_dim(self) -> int:
        """Dimension p of Y_t = assets plus factors without an asset copy."""
        return self.n_assets + sum(
            1 for j in range(self.n_factors) if j not in self.factors_as_assets
        )

    def factor_y_indices(self) -> np.ndarray:
        """Position of each factor inside the stacked vector Y_t."""
        idx = np.empty(self.n_factors, dtype=np.intp)
        extra = self.n_assets
        for j in range(self.n_factors):
            if j in self.factors_as_assets:
                idx[j] = self.factors_as_assets[j]
            else:
                idx[j] = extra
                extra += 1
        return idx

    def stacked(self) -> np.ndarray:
        """T x p matrix Y with assets first, unmatched factors after."""
        extras = [j for j in range(self.n_factors) if j not in self.factors_as_assets]
        if not extras:
            return self.returns
        return np.hstack([self.returns, self.factors[:, extras]])

    # -- validation ---------------------------------------------------------
    def _validate(self):
        t_len, n = self.returns.shape
        if self.factors.ndim != 2 or self.factors.shape[0] != t_len:
            raise DimensionError(
                f"factors must be T x K with T={t_len}, got shape {self.factors.shape}"
            )
        if len(self.dates) != t_len:
            raise DimensionError(f"{len(self.dates)} dates for {t_len} rows")
        if len(self.asset_names) != n:
            raise DimensionError(f"{len(self.asset_names)} asset names for {n} columns")
        if len(self.factor_meta) != self.factors.shape[1]:
            raise DimensionError(
                f"{len(self.factor_meta)} meta entries for {self.factors.shape[1]} factors"
            )
        if not np.all(np.isfinite(self.returns)) or not np.all(np.isfinite(self.factors)):
            raise DataError("panel contains non-finite values")
        if any(self.dates[i] >= self.dates[i + 1] for i in range(t_len - 1)):
            raise AlignmentError("dates must be strictly increasing")

        names = [m.name for m in self.factor_meta]
        if len(set(names)) != len(names):
            dupes = sorted({x for x in names if names.count(x) > 1})
            raise SchemaError(f"duplicate factor names: {dupes}")
        if len(set(self.asset_names)) != len(self.asset_names):
            raise SchemaError("duplicate asset column names")

        ksum = float(np.sum([m.kappa_tilt for m in self.factor_meta]))
        if abs(ksum) > KAPPA_SUM_TOL:
            raise SchemaError(f"kappa_tilt entries must sum to 0, got {ksum:.3e}")

        for j, i in self.factors_as_assets.items():
            if not (0 <= j < self.factors.shape[1]) or not (0 <= i < n):
                raise DimensionError(f"factors_as_assets entry {j}->{i} out of range")
            if not np.allclose(self.factors[:, j], self.returns[:, i], atol=1e-12, rtol=0.0):
                raise DataError(
                    f"factor {names[j]!r} mapped to asset {self.asset_names[i]!r} "
                    "but the two series differ"
                )

        if t_len < self.stacked_dim + 3:
            raise DataError(
                f"T={t_len} is too short: need T >= p + 3 with stacked dimension "
                f"p={self.stacked_dim} for a proper inverse-Wishart posterior"
            )

        if self.standardized:
            for label, mat in (("asset", self.returns), ("factor", self.factors)):
                sd = mat.std(axis=0, ddof=1)
                bad = np.where(np.abs(sd - 1.0) > STD_TOL)[0]
                if bad.size:
                    raise DataError(
                        f"standardized panel has {label} column {bad[0]} with sd {sd[bad[0]]!r}"
                    )


@dataclass(frozen=True)
class DurationInputs:
    """Bond returns paired one-to-one with duration-matched Treasury returns."""

    bond_returns: np.ndarray
    matched_treasury_returns: np.ndarray
    risk_free: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.bond_returns, dtype=np.float64)
        m = np.asarray(self.matched_treasury_returns, dtype=np.float64)
        rf = np.asarray(self.risk_free, dtype=np.float64)
        if b.shape != m.shape or b.ndim != 2:
            raise DimensionError(
                f"bond and treasury matrices must share a T x B shape, "
                f"got {b.shape} vs {m.shape}"
            )
        if rf.shape != (b.shape[0],):
            raise DimensionError(f"risk_free must have length T={b.shape[0]}")
        object.__setattr__(self, "bond_returns", _readonly(b))
        object.__setattr__(self, "matched_treasury_returns", _readonly(m))
        object.__setattr__(self, "risk_free", _readonly(rf))


def duration_adjust(inputs: DurationInputs) -> np.ndarray:
    """Bond return net of its duration-matched Treasury return.

    Algebraically equal to (excess return) - (Treasury excess return); the
    risk-free series cancels and never enters the arithmetic.
    """
    return inputs.bond_returns - inputs.matched_treasury_returns


# ---------------------------------------------------------------------------
# CSV interfaces
# ---------------------------------------------------------------------------

def _read_csv(path, what: str) -> pd.DataFrame:
    try:
        df = pd.read_csv(path, dtype={0: str}, float_precision="round_trip")
    except FileNotFoundError:
        raise DataError(f"{what} file not found: {path}") from None
    if df.shape[1] < 2 or df.columns[0] != "date":
        raise SchemaError(f"{what} file {path}: first column must be 'date'")
    return df


def _check_cells(df: pd.DataFrame, what: str):
    values = df.iloc[:, 1:]
    mask = values.isna().to_numpy()
    if mask.any():
        r, c = np.argwhere(mask)[0]
        raise DataError(
            f"{what}: missing/blank value at date {df.iloc[r, 0]!r}, "
            f"column {values.columns[c]!r}"
        )
    arr = values.to_numpy(dtype=np.float64)
    bad = ~np.isfinite(arr)
    if bad.any():
        r, c = np.argwhere(bad)[0]
        raise DataError(
            f"{what}: non-finite value at date {df.iloc[r, 0]!r}, column {values.columns[c]!r}"
        )
    return arr


def _check_alignment(dates_r, dates_f):
    n = min(len(dates_r), len(dates_f))
    for i in range(n):
        if dates_r[i] != dates_f[i]:
            raise AlignmentError(
                f"returns/factors date mismatch at row {i}: "
                f"{dates_r[i]!r} vs {dates_f[i]!r}"
            )
    if len(dates_r) != len(dates_f):
        longer, row = ("returns", dates_r[n]) if len(dates_r) > n else ("factors", dates_f[n])
        raise AlignmentError(f"{longer} file has extra date {row!r} at row {n}")


def load_panel(returns_path, factors_path, meta_path) -> ReturnPanel:
    """Load and cross-validate the three CSV inputs into a raw ReturnPanel."""
    rets = _read_csv(returns_path, "returns")
    facs = _read_csv(factors_path, "factors")
    ret_arr = _check_cells(rets, "returns")
    fac_arr = _check_cells(facs, "factors")
    dates_r = [str(d) for d in rets.iloc[:, 0]]
    dates_f = [str(d) for d in facs.iloc[:, 0]]
    _check_alignment(dates_r, dates_f)

    try:
        meta_df = pd.read_csv(meta_path, dtype={"name": str, "asset_class": str})
    except FileNotFoundError:
        raise DataError(f"meta file not found: {meta_path}") from None
    required = {"name", "tradable", "asset_class", "kappa_tilt"}
    if not required.issubset(meta_df.columns):
        raise SchemaError(f"meta file must have columns {sorted(required)}")

    factor_cols = list(facs.columns[1:])
    meta_by_name = {}
    for _, row in meta_df.iterrows():
        name = str(row["name"])
        if name in meta_by_name:
            raise SchemaError(f"duplicate factor name in meta file: {name!r}")
        if row["tradable"] not in (0, 1):
            raise SchemaError(f"meta tradable for {name!r} must be 0 or 1")
        meta_by_name[name] = FactorMeta(
            name=name,
            tradable=bool(int(row["tradable"])),
            asset_class=str(row["asset_class"]),
            kappa_tilt=float(row["kappa_tilt"]),
        )
    missing = [c for c in factor_cols if c not in meta_by_name]
    if missing:
        raise SchemaError(f"factors without meta entry: {missing}")
    extra = [n for n in meta_by_name if n not in factor_cols]
    if extra:
        raise SchemaError(f"meta entries without factor column: {extra}")
    meta = tuple(meta_by_name[c] for c in factor_cols)

    asset_names = tuple(rets.columns[1:])
    asset_pos = {name: i for i, name in enumerate(asset_names)}
    mapping = {
        j: asset_pos[name]
        for j, name in enumerate(factor_cols)
        if meta[j].tradable and name in asset_pos
    }

    return ReturnPanel(
        dates=tuple(dates_r),
        returns=ret_arr,
        factors=fac_arr,
        factor_meta=meta,
        asset_names=asset_names,
        standardized=False,
        factors_as_assets=mapping,
    )


def save_panel(panel: ReturnPanel, returns_path, factors_path, meta_path):
    """Write a panel back to the three-CSV layout accepted by load_panel."""
    pd.DataFrame(
        np.asarray(panel.returns), columns=list(panel.asset_names),
    ).assign(date=list(panel.dates)).set_index("date").to_csv(returns_path, float_format="%.17g")
    pd.DataFrame(
        np.asarray(panel.factors), columns=list(panel.factor_names),
    ).assign(date=list(panel.dates)).set_index("date").to_csv(factors_path, float_format="%.17g")
    pd.DataFrame(
        {
            "name": list(panel.factor_names),
            "tradable": [int(m.tradable) for m in panel.factor_meta],
            "asset_class": [m.asset_class for m in panel.factor_meta],
            "kappa_tilt": [repr(m.kappa_tilt) for m in panel.factor_meta],
        }
    ).to_csv(meta_path, index=False)


# ---------------------------------------------------------------------------
# standardization
# ---------------------------------------------------------------------------

def _column_sds(mat: np.ndarray, names, what: str) -> np.ndarray:
    sd = mat.std(axis=0, ddof=1)
    span = mat.max(axis=0) - mat.min(axis=0)
    scale = np.maximum(1.0, np.abs(mat.mean(axis=0)))
    bad = np.where((span == 0.0) | (sd <= 1e-12 * scale))[0]
    if bad.size:
        raise DegenerateColumnError(
            f"{what} column {names[bad[0]]!r} has zero variance and cannot be standardized"
        )
    return sd


def standardize(panel: ReturnPanel) -> ReturnPanel:
    """Rescale every column to unit sample standard deviation (no demeaning).

    Means are left untouched so that expected returns stay interpretable in
    Sharpe-ratio units; the scales are recorded for the inverse transform.
    """
    if panel.standardized:
        raise DataError("panel is already standardized")
    ret_sd = _column_sds(panel.returns, panel.asset_names, "asset")
    fac_sd = _column_sds(panel.factors, panel.factor_names, "factor")
    return replace(
        panel,
        returns=panel.returns / ret_sd,
        factors=panel.factors / fac_sd,
        standardized=True,
        return_scales=_readonly(ret_sd),
        factor_scales=_readonly(fac_sd),
    )


def unstandardize(panel: ReturnPanel) -> ReturnPanel:
    """Undo :func:`standardize` using the recorded scaling constants."""
    if not panel.standardized:
        raise DataError("panel is not standardized")
    if panel.return_scales is None or panel.factor_scales is None:
        raise DataError("panel lacks recorded standardization constants")
    return replace(
        panel,
        returns=panel.returns * panel.return_scales,
        factors=panel.factors * panel.factor_scales,
        standardized=False,
        return_scales=None,
        factor_scales=None,
    )


def apply_scales(panel: ReturnPanel, return_scales: np.ndarray, factor_scales: np.ndarray) -> ReturnPanel:
    """Standardize with externally supplied constants (e.g. training-window scales)."""
    if panel.standardized:
        raise DataError("panel is already standardized")
    ret = panel.returns / np.asarray(return_scales, dtype=np.float64)
    fac = panel.factors / np.asarray(factor_scales, dtype=np.float64)
    return replace(
        panel,
        returns=ret,
        factors=fac,
        standardized=False,  # unit-sd only in the window that produced the scales
        return_scales=_readonly(return_scales),
        factor_scales=_readonly(factor_scales),
    )


def window(panel: ReturnPanel, start: int, stop: int) -> ReturnPanel:
    """Contiguous sub-panel over rows [start, stop)."""
    return replace(
        panel,
        dates=panel.dates[start:stop],
        returns=panel.returns[start:stop],
        factors=panel.factors[start:stop],
        standardized=False,
        return_scales=None,
        factor_scales=None,
    )
