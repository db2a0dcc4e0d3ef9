import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from awe import losses
from awe.net import Affine, Conv1D, LossEval, MaxPool, ReLU, Softmax, init_network, \
    network_backward, network_forward


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def small_stack(rng, b=5, n_pad=20, filters=4, width=3, pool=2, out=6, head=None):
    layers = [Conv1D(filters, width), ReLU(), MaxPool(pool), Affine(out)]
    if head == "softmax":
        layers.append(Softmax())
    return init_network(layers, (b, n_pad), rng)


def siamese_loss_fn(kind, margin=0.15):
    """Loss closure over a (x1, x2, x3) sample for the gradient checker."""

    def fn(net, sample):
        x = np.stack(sample)
        trace = network_forward(net, x)
        e = trace.output
        if kind == losses.COS_HINGE:
            loss, g1, g2, g3 = losses.cos_hinge_batch(e[:1], e[1:2], e[2:], margin)
            arg = margin + losses.pair_distance(e[:1], e[1:2])[0] - losses.pair_distance(e[:1], e[2:])[0]
            pattern = trace.pattern() + bytes([int(arg[0] > 0)])
            g = np.concatenate([g1, g2, g3])
        else:
            l1, a1, a2 = losses.coscos2_batch(e[:1], e[1:2], True)
            l2, b1, b3 = losses.coscos2_batch(e[:1], e[2:], False)
            loss = l1 + l2
            g = np.concatenate([a1 + b1, a2, b3])
            pattern = trace.pattern()
        grads, _ = network_backward(net, trace, g)
        return LossEval(float(loss.sum()), grads, pattern)

    return fn


def cross_entropy_fn(net, sample):
    x, target = sample
    trace = network_forward(net, x)
    loss, g = losses.cross_entropy_batch(trace.output, [target])
    grads, _ = network_backward(net, trace, g, from_layer=len(net.layers) - 1)
    return LossEval(float(loss[0]), grads, trace.pattern())
