import numpy as np
import pytest

from varibit import nn
from varibit.datasets import generate_blobs
from varibit.fixed_point import quantize_tensor
from varibit.rng import substream


@pytest.fixture(scope="session")
def blobs_500():
    return generate_blobs(classes=2, samples=500, separation=8.0, seed=11)


@pytest.fixture
def mlp_arch():
    return [nn.dense(2, 16), nn.relu(), nn.dense(16, 2)]


def quantized_net(arch, input_shape, fmt, seed, tnvs_scale=1.0):
    """Network with master TNVS weights and shadows quantized at ``fmt``."""
    net = nn.build_network(arch, input_shape, tnvs_scale, seed)
    for name in net.trainable_names():
        net.quant[name] = {
            p: quantize_tensor(net.master[name][p], fmt, substream(seed, name, p, "q"))
            for p in ("w", "b")
        }
    return net


def numeric_weight_grad(network, x, y, name, pname, h=1e-4):
    """Central-difference gradient w.r.t. one quantized parameter tensor."""
    flat = network.quant[name][pname].values.reshape(-1)
    g = np.zeros(flat.size)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        _, _, lp = nn.forward(network, x, y)
        flat[i] = orig - h
        _, _, lm = nn.forward(network, x, y)
        flat[i] = orig
        g[i] = (lp - lm) / (2 * h)
    return g.reshape(network.quant[name][pname].values.shape)
