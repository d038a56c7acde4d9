import numpy as np
import pytest

from zoosdf.panel import FactorMeta, ReturnPanel


def toy_panel(seed=0, t_len=120, n_assets=4, n_factors=2, tradable=False, kappa=None):
    """Random well-conditioned panel; tradable factors get asset copies."""
    rng = np.random.default_rng(seed)
    factors = rng.standard_normal((t_len, n_factors)) * 0.04 + 0.005
    loadings = rng.standard_normal((n_assets, n_factors))
    returns = 0.002 + factors @ loadings.T + 0.03 * rng.standard_normal((t_len, n_assets))
    if kappa is None:
        kappa = [0.0] * n_factors
    dates = [f"{1990 + i // 12:04d}-{i % 12 + 1:02d}" for i in range(t_len)]
    asset_names = [f"A{i}" for i in range(n_assets)]
    mapping = {}
    if tradable:
        returns = np.hstack([returns, factors])
        asset_names += [f"F{j}" for j in range(n_factors)]
        mapping = {j: n_assets + j for j in range(n_factors)}
    meta = tuple(
        FactorMeta(name=f"F{j}", tradable=tradable, asset_class="stock", kappa_tilt=kappa[j])
        for j in range(n_factors)
    )
    return ReturnPanel(
        dates=tuple(dates),
        returns=returns,
        factors=factors,
        factor_meta=meta,
        asset_names=tuple(asset_names),
        factors_as_assets=mapping,
    )


@pytest.fixture
def small_panel():
    return toy_panel()
