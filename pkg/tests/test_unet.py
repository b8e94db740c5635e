import numpy as np
import pytest

from mrtherm.nn.unet import UNet, UNetSpec

RNG = np.random.default_rng(99)


def closed_form_param_count(spec: UNetSpec) -> int:
    """Independent arithmetic over the fixed topology."""
    kh, kw = spec.kernel
    b, cin, cout, d = (spec.base_channels, spec.in_channels,
                       spec.out_channels, spec.depth)

    def conv(ci, co, k=kh * kw):
        return co * ci * k + co

    def bn(c):
        return 2 * c

    def tconv(ci, co):
        return ci * co * 4 + co

    total = 0
    prev = cin
    chans = [b * 2 ** i for i in range(d)]
    for c in chans:
        total += conv(prev, c) + bn(c) + conv(c, c) + bn(c)
        prev = c
    bridge = b * 2 ** d
    total += conv(prev, bridge) + bn(bridge) + conv(bridge, bridge) + bn(bridge)
    up = bridge
    for c in reversed(chans):
        total += tconv(up, c) + conv(2 * c, c) + bn(c) + conv(c, c) + bn(c)
        up = c
    return total + conv(up, cout, k=1)


def test_layer_census_matches_fixed_topology():
    net = UNet(UNetSpec(3, 2, base_channels=4), seed=0)
    assert net.census() == {"conv": 19, "batchnorm": 18, "relu": 18,
                            "maxpool": 4, "tconv": 4, "concat": 4}


@pytest.mark.parametrize("in_ch,out_ch,base", [(3, 2, 16), (3, 1, 16), (2, 2, 8)])
def test_param_count_closed_form(in_ch, out_ch, base):
    spec = UNetSpec(in_ch, out_ch, base_channels=base)
    net = UNet(spec, seed=0)
    assert net.param_count() == closed_form_param_count(spec)


def test_head_tail_shapes():
    net = UNet(UNetSpec(3, 2, base_channels=4), seed=0)
    y = net.forward(np.zeros((2, 32, 32, 3)), train=False)
    assert y.shape == (2, 32, 32, 2)
    net1 = UNet(UNetSpec(3, 1, base_channels=4), seed=0)
    assert net1.forward(np.zeros((1, 32, 32, 3)), train=False).shape == (1, 32, 32, 1)


def test_zero_final_layer_gives_zero_output():
    net = UNet(UNetSpec(3, 2, base_channels=4), seed=0)
    net.final.params["w"][:] = 0
    net.final.params["b"][:] = 0
    x = RNG.standard_normal((1, 16, 16, 3))
    assert np.abs(net.forward(x, train=False)).max() == 0


def test_indivisible_dims_rejected():
    net = UNet(UNetSpec(3, 2, base_channels=4), seed=0)
    with pytest.raises(ValueError):
        net.forward(np.zeros((1, 24, 24, 3)))
    with pytest.raises(ValueError):
        net.forward(np.zeros((1, 32, 32, 4)))


def test_infer_mode_is_pure_and_batch_independent():
    net = UNet(UNetSpec(2, 1, base_channels=4), seed=3)
    # push some training steps so running stats move off their init
    for _ in range(5):
        net.forward(RNG.standard_normal((2, 16, 16, 2)), train=True)
    x = RNG.standard_normal((1, 16, 16, 2))
    y1 = net.forward(x, train=False)
    y2 = net.forward(x, train=False)
    assert np.array_equal(y1, y2)
    other = RNG.standard_normal((1, 16, 16, 2)) * 50
    y3 = net.forward(np.concatenate([x, other]), train=False)
    # BLAS blocking may reorder sums across batch shapes; semantics identical
    assert np.abs(y1 - y3[:1]).max() < 1e-10


def test_end_to_end_gradient_check():
    net = UNet(UNetSpec(3, 2, base_channels=4), seed=1)
    x = RNG.standard_normal((2, 16, 16, 3))
    w = RNG.standard_normal((2, 16, 16, 2))
    net.forward(x, train=True)
    dx = net.backward(w)

    def loss(v):
        return float((net.forward(v, train=True) * w).sum())

    h = 1e-6
    worst = 0.0
    for idx in [(0, 3, 5, 0), (1, 10, 2, 1), (0, 15, 15, 2), (1, 0, 0, 0),
                (0, 7, 8, 1), (1, 12, 9, 2)]:
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        num = (loss(xp) - loss(xm)) / (2 * h)
        worst = max(worst, abs(dx[idx] - num) / (abs(num) + 1e-12))
    assert worst < 1e-3


def test_state_dict_round_trip():
    net = UNet(UNetSpec(3, 2, base_channels=4), seed=5)
    net.forward(RNG.standard_normal((2, 16, 16, 3)), train=True)  # move stats
    net.step_count = 17
    state = net.state_dict()
    other = UNet(UNetSpec(3, 2, base_channels=4), seed=99)
    other.load_state_dict(state)
    x = RNG.standard_normal((1, 16, 16, 3))
    assert np.array_equal(net.forward(x, train=False),
                          other.forward(x, train=False))
    assert other.step_count == 17


def test_spec_validation():
    with pytest.raises(ValueError):
        UNetSpec(0, 2)
    with pytest.raises(ValueError):
        UNetSpec(3, 2, kernel=(4, 4))
