import numpy as np
import pytest

from awnet import autodiff as ad
from awnet.attention_zoo import CbamModule, SeModule, cbam_params, gate_range_check, se_params
from awnet.autodiff import Tape, grad_check


def _x(rng, shape=(2, 16, 5, 5)):
    return rng.standard_normal(shape)


def test_se_zero_fc2_halves(rng):
    se = SeModule(16, 4, rng=rng, dtype=np.float64)
    se.mlp.fc2.weight.value[...] = 0
    x = _x(rng)
    assert np.array_equal(se(Tape().constant(x)).value, x * 0.5)


def test_se_gate_spatially_uniform(rng):
    g = SeModule(16, 4, rng=rng, dtype=np.float64).gate(Tape().constant(_x(rng)))
    assert g.shape == (2, 16, 1, 1)


def test_se_param_count():
    assert se_params(256, 16) == 8_464
    assert SeModule(256, 16, rng=np.random.default_rng(0)).num_parameters() == 8_464


def test_cbam_constant_input_doubles_preactivation(rng):
    cb = CbamModule(16, 4, rng=rng, dtype=np.float64)
    x = np.full((1, 16, 4, 4), 0.7)
    x[0, 3] = -1.2
    t = Tape()
    g = cb.channel_gate(t.constant(x)).value.reshape(16)
    pre = cb.mlp(t.constant(x[:, :, 0, 0])).value.reshape(16)
    assert np.allclose(g, 1 / (1 + np.exp(-2 * pre)), rtol=1e-14, atol=0)


def test_cbam_spatial_gate_shape_and_params(rng):
    cb = CbamModule(16, 4, rng=rng, dtype=np.float64)
    s = cb.spatial_gate(Tape().constant(_x(rng)))
    assert s.shape == (2, 1, 5, 5)
    assert cbam_params(16, 4, "full") - se_params(16, 4) == 98
    assert cbam_params(16, 4, "full", spatial_bn=True) - se_params(16, 4) == 100
    assert CbamModule(16, 4, spatial_bn=True, rng=rng).num_parameters() == cbam_params(16, 4, spatial_bn=True)


@pytest.mark.parametrize("variant", ["full", "maxpool", "spatial"])
def test_cbam_variants(rng, variant):
    cb = CbamModule(16, 4, variant, rng=rng, dtype=np.float64)
    assert cb.num_parameters() == cbam_params(16, 4, variant)
    assert (cb.spatial is None) == (variant == "maxpool")
    assert gate_range_check(cb, _x(rng))


def test_cbam_zeroed_gate_layers_scale_by_quarter_or_half(rng):
    cb = CbamModule(16, 4, rng=rng, dtype=np.float64)
    cb.mlp.fc2.weight.value[...] = 0
    cb.spatial.weight.value[...] = 0
    x = _x(rng)
    # fc2 bias is zero-initialized; both gates sit at 0.5
    assert np.array_equal(cb(Tape().constant(x)).value, x * 0.5 * 0.5)
    mp = CbamModule(16, 4, "maxpool", rng=rng, dtype=np.float64)
    mp.mlp.fc2.weight.value[...] = 0
    assert np.array_equal(mp(Tape().constant(x)).value, x * 0.5)


def test_gate_range_on_extreme_input(rng):
    x = _x(rng) * 1e6
    assert gate_range_check(SeModule(16, 4, rng=rng), x.astype(np.float32))
    assert gate_range_check(CbamModule(16, 4, rng=rng), x.astype(np.float32))


def test_unknown_variant():
    with pytest.raises(ValueError):
        CbamModule(8, 2, "both", rng=np.random.default_rng(0))


def test_gate_gradients(rng):
    x = _x(rng, (2, 8, 4, 4))
    W = rng.standard_normal(x.shape)
    for m in (SeModule(8, 2, rng=rng, dtype=np.float64),
              CbamModule(8, 2, rng=rng, dtype=np.float64)):
        rep = grad_check(lambda t: ad.sum_all(ad.mul(m(t.constant(x)), t.constant(W))),
                         m.parameters())
        assert rep.passed, rep
