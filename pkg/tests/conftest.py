import numpy as np
import pytest

from risgreen.netmodel import ChannelRealization, SystemConfig


def small_config(M=2, K=2, L=1, N=4, **kw) -> SystemConfig:
    base = SystemConfig(num_antennas=M, num_users=K, **kw).with_num_ris(L)
    return base.replace(elements_per_ris=(N,) * L if np.isscalar(N) else tuple(N))


def random_channels(rng, M, K, elements) -> ChannelRealization:
    def cn(*shape):
        return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)

    return ChannelRealization(cn(K, M), tuple(cn(n, M) for n in elements), tuple(cn(K, n) for n in elements))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
