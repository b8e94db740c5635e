import numpy as np
import pytest

from mrtherm.kspace import (apply_mask, channels_to_complex,
                            complex_to_channels, fft2c, ifft2c, keyhole_recon,
                            make_center_mask, roemer_combine, subject_mask,
                            zero_fill_recon)


def random_image(shape=(112, 112), seed=0):
    rng = np.random.default_rng(seed)
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def test_fft_dc_only():
    k = fft2c(np.ones((4, 4), dtype=complex))
    assert k[2, 2] == pytest.approx(4.0)
    k[2, 2] = 0
    assert np.abs(k).max() < 1e-14


def test_fft_round_trip_and_parseval():
    img = random_image()
    k = fft2c(img)
    assert np.abs(ifft2c(k) - img).max() < 1e-12
    e_img = (np.abs(img) ** 2).sum()
    e_k = (np.abs(k) ** 2).sum()
    assert abs(e_img - e_k) / e_img < 1e-10


def test_fft_rejects_non_finite():
    bad = np.ones((4, 4), dtype=complex)
    bad[1, 1] = np.nan
    with pytest.raises(ValueError):
        fft2c(bad)
    bad[1, 1] = np.inf
    with pytest.raises(ValueError):
        ifft2c(bad)


def test_center_mask_blocks():
    m = make_center_mask(112, 16)
    lines = np.flatnonzero(m.keep)
    assert lines[0] == 48 and lines[-1] == 63 and m.n_keep == 16
    assert m.acceleration == pytest.approx(7.0)

    assert make_center_mask(4, 4).keep.all()
    assert list(np.flatnonzero(make_center_mask(8, 2).keep)) == [3, 4]


def test_center_mask_always_contains_dc():
    for n in (4, 5, 7, 8, 112):
        for k in range(1, n + 1):
            m = make_center_mask(n, k)
            assert m.keep[n // 2]
            lines = np.flatnonzero(m.keep)
            assert lines[-1] - lines[0] == k - 1    # contiguous


def test_center_mask_rejects_bad_counts():
    with pytest.raises(ValueError):
        make_center_mask(8, 9)
    with pytest.raises(ValueError):
        make_center_mask(8, 0)


def test_zero_fill_full_mask_is_identity():
    k = fft2c(random_image((16, 16), seed=1))
    full = make_center_mask(16, 16)
    assert np.array_equal(zero_fill_recon(k, full), ifft2c(k))


def test_zero_fill_zero_input():
    m = make_center_mask(8, 4)
    out = zero_fill_recon(np.zeros((8, 8), dtype=complex), m)
    assert np.abs(out).max() == 0


def test_zero_fill_blurs_sharp_phantom():
    img = np.zeros((112, 112), dtype=complex)
    img[40:70, 30:80] = 1.0
    k = fft2c(img)
    m = make_center_mask(112, 16)
    zf = zero_fill_recon(k, m)
    err = (np.abs(zf - img) ** 2).sum() / (np.abs(img) ** 2).sum()
    assert err > 0.01


def test_keyhole_static_scene_equals_reference():
    k_ref = fft2c(random_image((32, 32), seed=2))
    m = make_center_mask(32, 8)
    k_dyn = apply_mask(k_ref, m)
    out = keyhole_recon(k_dyn, k_ref, m)
    ref = ifft2c(k_ref)
    assert np.abs(out - ref).max() / np.abs(ref).max() < 1e-12


def test_keyhole_full_mask_uses_dynamic():
    k_ref = fft2c(random_image((16, 16), seed=3))
    k_dyn = fft2c(random_image((16, 16), seed=4))
    m = make_center_mask(16, 16)
    assert np.allclose(keyhole_recon(k_dyn, k_ref, m), ifft2c(k_dyn))


def test_keyhole_beats_zero_fill_on_heated_frame():
    # hotspot phase on a textured object: keyhole borrows the reference
    # periphery and should land closer to the fully sampled reconstruction
    rng = np.random.default_rng(5)
    base = np.zeros((112, 112), dtype=complex)
    base[20:92, 20:92] = 1.0 + 0.2 * rng.standard_normal((72, 72))
    y, x = np.mgrid[:112, :112]
    hot = 8.0 * np.exp(-((y - 56) ** 2 + (x - 56) ** 2) / (2 * 3.0 ** 2))
    dyn = base * np.exp(1j * 0.1 * hot)
    m = make_center_mask(112, 16)
    k_ref, k_dyn = fft2c(base), fft2c(dyn)
    full = ifft2c(k_dyn)
    kh = keyhole_recon(apply_mask(k_dyn, m), k_ref, m)
    zf = zero_fill_recon(k_dyn, m)

    def err(a):
        return (np.abs(a - full) ** 2).sum() / (np.abs(full) ** 2).sum()

    assert err(kh) < err(zf)


def test_keyhole_shape_mismatch():
    m = make_center_mask(8, 2)
    with pytest.raises(ValueError):
        keyhole_recon(np.zeros((8, 8), complex), np.zeros((8, 4), complex), m)


def test_channel_ops_round_trip():
    img = random_image((7, 9), seed=6)
    st = complex_to_channels(img)
    assert st.shape == (7, 9, 2)
    assert np.array_equal(st[..., 0], img.real)
    assert np.array_equal(st[..., 1], img.imag)
    back = channels_to_complex(st)
    assert np.array_equal(back, img)


def test_channel_ops_scalar_case():
    st = complex_to_channels(np.array([[3 + 4j]]))
    assert st[0, 0, 0] == 3 and st[0, 0, 1] == 4
    assert channels_to_complex(st)[0, 0] == 3 + 4j


def test_channels_pure_real():
    st = complex_to_channels(np.ones((3, 3), dtype=complex))
    assert np.all(st[..., 1] == 0)


def test_channels_inverse_requires_two():
    with pytest.raises(ValueError):
        channels_to_complex(np.zeros((4, 4, 3)))


def test_roemer_single_coil_identity():
    img = random_image((8, 8), seed=7)
    out, valid = roemer_combine([img], [np.ones((8, 8), complex)])
    assert np.allclose(out, img)
    assert valid.all()


def test_roemer_recovers_ground_truth():
    m = random_image((8, 8), seed=8)
    rng = np.random.default_rng(9)
    sens = [rng.standard_normal((8, 8)) + 1j * rng.standard_normal((8, 8))
            for _ in range(2)]
    out, valid = roemer_combine([s * m for s in sens], sens)
    assert np.abs(out - m).max() < 1e-12
    assert valid.all()


def test_roemer_zero_sensitivity_flagged():
    img = random_image((4, 4), seed=10)
    sens = np.ones((4, 4), dtype=complex)
    sens[2, 2] = 0
    out, valid = roemer_combine([img], [sens])
    assert out[2, 2] == 0
    assert not valid[2, 2]
    assert valid.sum() == 15


def test_roemer_linear_in_images():
    rng = np.random.default_rng(11)
    sens = [rng.standard_normal((6, 6)) + 1j * rng.standard_normal((6, 6))
            for _ in range(3)]
    a = [random_image((6, 6), seed=s) for s in (12, 13, 14)]
    b = [random_image((6, 6), seed=s) for s in (15, 16, 17)]
    out_a, _ = roemer_combine(a, sens)
    out_b, _ = roemer_combine(b, sens)
    out_ab, _ = roemer_combine([2 * x + 3 * y for x, y in zip(a, b)], sens)
    assert np.abs(out_ab - (2 * out_a + 3 * out_b)).max() < 1e-10


def test_subject_mask_matches_support():
    mag = np.zeros((64, 64))
    mag[10:50, 12:52] = 1.0
    got = subject_mask(mag)
    want = mag > 0
    dice = 2 * (got & want).sum() / (got.sum() + want.sum())
    assert dice > 0.99


def test_subject_mask_degenerate_cases():
    assert not subject_mask(np.zeros((5, 5))).any()
    assert subject_mask(np.full((5, 5), 2.7)).all()
    with pytest.raises(ValueError):
        subject_mask(-np.ones((3, 3)))
