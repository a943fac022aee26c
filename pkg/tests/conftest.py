import pytest

from gchain.params import PRESETS, SpecConfig, build_scales


@pytest.fixture(scope="session")
def table_a():
    return build_scales(PRESETS["A"])


@pytest.fixture(scope="session")
def table_small():
    # base marker length 3, five block scales, tiny recurrence spans:
    # the whole hierarchy fits in a few hundred cells
    cfg = SpecConfig(epsilon=0.3, K=4, k_max=6, window_depth=512, clamp_enabled=True)
    return build_scales(cfg)


@pytest.fixture(scope="session")
def table_fast():
    cfg = SpecConfig(epsilon=0.3, K=5, k_max=7, window_depth=2048, clamp_enabled=True)
    return build_scales(cfg)
