import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mrtherm.container import (ContainerError, load_arrays, load_session,
                               load_weights, save_arrays, save_session,
                               save_weights, MAGIC)
from mrtherm.nn.unet import UNet, UNetSpec
from mrtherm.phantom import disk_phantom, HeatingProtocol, SonicationEvent
from mrtherm.sim import AcquisitionParams, generate_session


DTYPES = [np.float32, np.float64, np.complex64, np.complex128, np.uint8]


@pytest.mark.parametrize("dtype", DTYPES)
def test_round_trip_bit_exact(tmp_path, dtype):
    rng = np.random.default_rng(0)
    if np.issubdtype(dtype, np.complexfloating):
        arr = (rng.standard_normal((5, 7))
               + 1j * rng.standard_normal((5, 7))).astype(dtype)
    elif dtype == np.uint8:
        arr = rng.integers(0, 256, (5, 7)).astype(dtype)
    else:
        arr = rng.standard_normal((5, 7)).astype(dtype)
    path = tmp_path / "a.mrts"
    save_arrays(path, {"x": arr})
    back = load_arrays(path)["x"]
    assert back.dtype == np.dtype(dtype)
    assert np.array_equal(back.view(np.uint8), arr.view(np.uint8))


def test_empty_container(tmp_path):
    path = tmp_path / "empty.mrts"
    save_arrays(path, {})
    assert load_arrays(path) == {}


def test_bool_saved_as_u8(tmp_path):
    path = tmp_path / "b.mrts"
    save_arrays(path, {"mask": np.array([True, False, True])})
    back = load_arrays(path)["mask"]
    assert back.dtype == np.uint8
    assert list(back) == [1, 0, 1]


def test_multiple_entries_and_shapes(tmp_path):
    arrays = {
        "scalar": np.array(3.5),
        "vec": np.arange(4, dtype=np.float32),
        "cube": np.zeros((2, 3, 4), dtype=np.complex64),
    }
    path = tmp_path / "m.mrts"
    save_arrays(path, arrays)
    back = load_arrays(path)
    assert back["scalar"].shape == ()
    assert back["cube"].shape == (2, 3, 4)
    assert np.array_equal(back["vec"], arrays["vec"])


def test_corrupt_magic_names_offset(tmp_path):
    path = tmp_path / "bad.mrts"
    save_arrays(path, {"x": np.zeros(2, dtype=np.float32)})
    raw = bytearray(path.read_bytes())
    raw[0] = ord("X")
    path.write_bytes(bytes(raw))
    with pytest.raises(ContainerError, match="offset 0"):
        load_arrays(path)


def test_unknown_version_rejected(tmp_path):
    path = tmp_path / "v.mrts"
    save_arrays(path, {"x": np.zeros(2, dtype=np.float32)})
    raw = bytearray(path.read_bytes())
    raw[4] = 99
    path.write_bytes(bytes(raw))
    with pytest.raises(ContainerError, match="version"):
        load_arrays(path)


def test_truncated_payload_rejected(tmp_path):
    path = tmp_path / "t.mrts"
    save_arrays(path, {"x": np.zeros(100, dtype=np.float64)})
    raw = path.read_bytes()
    path.write_bytes(raw[:-5])
    with pytest.raises(ContainerError, match="truncated"):
        load_arrays(path)


def test_trailing_garbage_rejected(tmp_path):
    path = tmp_path / "g.mrts"
    save_arrays(path, {"x": np.zeros(2, dtype=np.float32)})
    path.write_bytes(path.read_bytes() + b"junk")
    with pytest.raises(ContainerError, match="trailing"):
        load_arrays(path)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(
    st.text(min_size=1, max_size=20),
    st.integers(min_value=0, max_value=30)), max_size=5,
    unique_by=lambda t: t[0]))
def test_property_names_and_lengths_survive(tmp_path_factory, entries):
    arrays = {name: np.arange(n, dtype=np.float64) for name, n in entries}
    path = tmp_path_factory.mktemp("prop") / "p.mrts"
    save_arrays(path, arrays)
    back = load_arrays(path)
    assert set(back) == set(arrays)
    for k in arrays:
        assert np.array_equal(back[k], arrays[k])


def test_session_round_trip(tmp_path):
    ph = disk_phantom((32, 32), seed=1)
    params = AcquisitionParams(matrix=(32, 32), n_keep=6, te_ms=(3.0, 13.4),
                               noise_snr=25.0)
    proto = HeatingProtocol(focus=(16, 16), power=1.0,
                            schedule=[SonicationEvent(1, True)])
    ds = generate_session(ph, proto, params, 3, seed=2)
    path = tmp_path / "s.mrts"
    save_session(path, ds)
    back = load_session(path)
    assert back.params.te_ms == ds.params.te_ms
    assert back.params.n_keep == ds.params.n_keep
    assert back.n_dynamics == 3
    assert np.array_equal(back.mask.keep, ds.mask.keep)
    for t in range(3):
        for l in range(2):
            assert np.array_equal(back.treat_k[t][l], ds.treat_k[t][l])
            assert np.array_equal(back.treat_full_k[t][l], ds.treat_full_k[t][l])
        assert np.array_equal(back.ground_truth_dt[t], ds.ground_truth_dt[t])
    assert np.array_equal(back.b1_pair[1], ds.b1_pair[1])


def test_weights_round_trip(tmp_path):
    net = UNet(UNetSpec(3, 2, base_channels=4), seed=8)
    rng = np.random.default_rng(0)
    net.forward(rng.standard_normal((2, 16, 16, 3)), train=True)
    net.step_count = 42
    path = tmp_path / "w.mrts"
    save_weights(path, net)
    back = load_weights(path)
    assert back.spec == net.spec
    assert back.step_count == 42
    x = rng.standard_normal((1, 16, 16, 3))
    assert np.allclose(back.forward(x, train=False),
                       net.forward(x, train=False), atol=1e-12)


def test_weights_loader_rejects_plain_container(tmp_path):
    path = tmp_path / "x.mrts"
    save_arrays(path, {"y": np.zeros(3, dtype=np.float64)})
    with pytest.raises(ContainerError, match="net/spec"):
        load_weights(path)


def test_magic_constant():
    assert MAGIC == b"MRTS"
