import math

import numpy as np
import pytest

from mrtherm.kspace import ifft2c
from mrtherm.phantom import (HeatingProtocol, PhantomSpec, SonicationEvent,
                             TemperatureField, disk_phantom, fat_layer_phantom,
                             focal_gaussian, step_heating)
from mrtherm.sim import (AcquisitionParams, afi_ratio, generate_session,
                         spgr_signal, synthesize_afi_pair, synthesize_frame)


def small_params(**kw):
    base = dict(matrix=(32, 32), n_keep=6, te_ms=(3.0, 13.4))
    base.update(kw)
    return AcquisitionParams(**base)


def zero_field(shape):
    return TemperatureField(dt=np.zeros(shape), t_index=0)


class TestSPGR:
    def test_reference_value(self):
        # closed form at TR/T1 = 0.05, FA 10 deg, negligible TE decay
        mag = spgr_signal(1.0, 1000.0, 1e12, 10.0, 50.0, 1e-12)
        e1 = math.exp(-0.05)
        expect = math.sin(math.radians(10)) * (1 - e1) \
            / (1 - e1 * math.cos(math.radians(10)))
        assert mag == pytest.approx(expect, rel=1e-12)
        assert mag == pytest.approx(0.13396, abs=5e-6)

    def test_small_flip_angle_vanishes(self):
        assert spgr_signal(1.0, 1000.0, 30.0, 1e-7, 50.0, 3.0) < 1e-8

    def test_saturation_limit(self):
        assert spgr_signal(1.0, 1e12, 30.0, 10.0, 50.0, 3.0) < 1e-9

    def test_monotone_in_t1_above_ernst(self):
        # signal falls with T1 on either side of the Ernst angle comparison
        t1 = np.linspace(200.0, 3000.0, 50)
        s = spgr_signal(1.0, t1, 1e12, 35.0, 50.0, 1e-12)
        assert np.all(np.diff(s) < 0)

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            spgr_signal(1.0, -5.0, 30.0, 10.0, 50.0, 3.0)
        with pytest.raises(ValueError):
            spgr_signal(1.0, 1000.0, 30.0, 0.0, 50.0, 3.0)


class TestHeating:
    def proto(self, **kw):
        base = dict(focus=(16, 16), power=2.0, sigma_f=2.0, tau_cool=60.0,
                    kappa=0.05, frame_dt=0.5)
        base.update(kw)
        return HeatingProtocol(**base)

    def test_off_is_fixed_point(self):
        f = zero_field((32, 32))
        nxt = step_heating(f, self.proto())
        assert nxt.t_index == 1
        assert np.all(nxt.dt == 0)

    def test_single_step_peak(self):
        proto = self.proto(kappa=0.0, schedule=[SonicationEvent(0, True)])
        nxt = step_heating(zero_field((32, 32)), proto)
        assert nxt.dt[16, 16] == pytest.approx(proto.frame_dt * proto.power)

    def test_newtonian_cooling_matches_closed_form(self):
        proto = self.proto(kappa=0.0, frame_dt=0.3)
        dt = np.zeros((32, 32))
        dt[16, 16] = 10.0
        field = TemperatureField(dt=dt, t_index=1)
        for i in range(20):
            field = step_heating(field, proto)
        expect = 10.0 * (1 - proto.frame_dt / proto.tau_cool) ** 20
        continuous = 10.0 * math.exp(-20 * proto.frame_dt / proto.tau_cool)
        assert field.dt[16, 16] == pytest.approx(expect, rel=1e-12)
        assert field.dt[16, 16] == pytest.approx(continuous, rel=0.01)

    def test_heating_non_negative_and_monotone_decay(self):
        proto = self.proto(schedule=[SonicationEvent(0, True),
                                     SonicationEvent(5, False)])
        field = zero_field((32, 32))
        peaks = []
        for _ in range(12):
            field = step_heating(field, proto)
            assert field.dt.min() >= 0
            peaks.append(field.dt.max())
        assert np.all(np.diff(peaks[5:]) < 0)   # cooling after sonication off

    def test_diffusion_conserves_mass_with_neumann_boundary(self):
        proto = self.proto(kappa=0.4, tau_cool=1e9, frame_dt=0.5)
        dt = np.zeros((16, 16))
        dt[8, 8] = 4.0
        field = TemperatureField(dt=dt, t_index=1)
        for _ in range(10):
            field = step_heating(field, proto)
        assert field.dt.sum() == pytest.approx(4.0, rel=1e-7)

    def test_stability_validation(self):
        with pytest.raises(ValueError):
            self.proto(kappa=1.0, frame_dt=0.5)
        with pytest.raises(ValueError):
            self.proto(frame_dt=120.0)

    def test_schedule_resolution(self):
        proto = self.proto(schedule=[SonicationEvent(2, True, focus=(4, 5)),
                                     SonicationEvent(7, False)])
        assert proto.settings_at(0) == (False, (16, 16), 2.0)
        assert proto.settings_at(2) == (True, (4, 5), 2.0)
        assert proto.settings_at(9) == (False, (4, 5), 2.0)

    def test_focal_gaussian_peak(self):
        g = focal_gaussian((9, 9), (4, 4), 1.5)
        assert g[4, 4] == pytest.approx(1.0)
        assert g[0, 0] < g[4, 4]


class TestSynthesize:
    def test_baseline_matches_spgr_and_phase(self):
        ph = disk_phantom((32, 32), seed=0)
        params = small_params()
        imgs = synthesize_frame(ph, zero_field((32, 32)), params, 35.0)
        expect = spgr_signal(ph.m0, ph.t1_ms, ph.t2star_ms, 35.0,
                             params.tr_ms, params.te_ms[0])
        assert np.abs(np.abs(imgs[0]) - expect).max() < 1e-12
        sup = ph.support
        assert np.abs(np.angle(imgs[0])[sup] - ph.baseline_phase[sup]).max() < 1e-9

    def test_water_phase_shift_matches_coefficient(self):
        ph = disk_phantom((32, 32), seed=0)
        params = small_params()
        dt = np.where(ph.support, 10.0, 0.0)
        imgs = synthesize_frame(ph, TemperatureField(dt=dt, t_index=1),
                                params, 35.0)
        pre = synthesize_frame(ph, zero_field((32, 32)), params, 35.0)
        dphi = np.angle(pre[1] * np.conj(imgs[1]))
        coef = params.prf_rad_per_degc(13.4)
        assert coef == pytest.approx(0.10754, abs=2e-5)
        assert np.abs(dphi[ph.support] - coef * 10.0).max() < 1e-9

    def test_fat_voxels_are_prf_inactive(self):
        ph = fat_layer_phantom((32, 32), seed=0)
        params = small_params()
        dt = np.where(ph.support, 10.0, 0.0)
        pre = synthesize_frame(ph, zero_field((32, 32)), params, 35.0)
        now = synthesize_frame(ph, TemperatureField(dt=dt, t_index=1),
                               params, 35.0)
        dphi = np.angle(pre[1] * np.conj(now[1]))
        assert np.abs(dphi[ph.fat]).max() < 1e-12
        # magnitude still changes through T1
        dmag = np.abs(np.abs(now[0]) - np.abs(pre[0]))
        assert dmag[ph.fat].max() > 0

    def test_unphysical_heating_rejected(self):
        ph = disk_phantom((32, 32), seed=0)
        dt = np.where(ph.support, -1e6, 0.0)
        with pytest.raises(ValueError):
            synthesize_frame(ph, TemperatureField(dt=dt, t_index=1),
                             small_params(), 35.0)

    def test_noise_at_snr(self):
        ph = disk_phantom((64, 64), seed=1)
        params = AcquisitionParams(matrix=(64, 64), n_keep=8,
                                   te_ms=(3.0,), noise_snr=30.0)
        rng = np.random.default_rng(0)
        noisy = synthesize_frame(ph, zero_field((64, 64)), params, 35.0, rng)
        clean = synthesize_frame(ph, zero_field((64, 64)), params, 35.0)
        resid = (noisy[0] - clean[0])[~ph.support]
        sigma_hat = resid.real.std()
        sigma = np.abs(clean[0][ph.support]).mean() / 30.0
        assert sigma_hat == pytest.approx(sigma, rel=0.15)


class TestAFI:
    def test_ratio_analytic_pair(self):
        assert afi_ratio(60.0, 5.0) == pytest.approx(7 / 11, rel=1e-12)

    def test_ratio_limit_small_angle(self):
        assert afi_ratio(1e-6, 5.0) == pytest.approx(1.0, abs=1e-9)

    def test_pair_ratio_field(self):
        ph = disk_phantom((32, 32), seed=2)
        fa = np.full((32, 32), 42.0)
        s1, s2 = synthesize_afi_pair(ph, fa, 25.0, 125.0)
        sup = ph.support
        r = np.abs(s2[sup]) / np.abs(s1[sup])
        assert np.abs(r - afi_ratio(42.0, 5.0)).max() < 1e-12

    def test_rejects_bad_trs(self):
        ph = disk_phantom((16, 16), seed=0)
        with pytest.raises(ValueError):
            synthesize_afi_pair(ph, 60.0, 125.0, 25.0)


class TestParams:
    def test_validation(self):
        with pytest.raises(ValueError):
            AcquisitionParams(tr_ms=-1)
        with pytest.raises(ValueError):
            AcquisitionParams(te_ms=(5.0, 3.0))
        with pytest.raises(ValueError):
            AcquisitionParams(fa1_deg=40.0, fa2_deg=35.0)
        with pytest.raises(ValueError):
            AcquisitionParams(alpha_ppm_per_degc=0.0)
        with pytest.raises(ValueError):
            AcquisitionParams(matrix=(16, 16), n_keep=20)

    def test_acquisition_time_arithmetic(self):
        p = AcquisitionParams()
        assert p.tr_ms * p.matrix[0] / 1000.0 == pytest.approx(5.6)
        assert p.tr_ms * p.n_keep / 1000.0 == pytest.approx(0.8)


class TestGenerateSession:
    def proto(self):
        return HeatingProtocol(focus=(16, 16), power=1.5, frame_dt=0.8,
                               schedule=[SonicationEvent(2, True)])

    def test_structure_and_masking(self):
        ph = disk_phantom((32, 32), seed=3)
        params = small_params()
        ds = generate_session(ph, self.proto(), params, 5, seed=4)
        assert ds.n_dynamics == 5 and ds.n_echoes == 2
        keep = ds.mask.keep
        for t in range(5):
            for l in range(2):
                assert np.all(ds.treat_k[t][l][~keep] == 0)
                got = ds.treat_k[t][l][keep]
                assert np.array_equal(got, ds.treat_full_k[t][l][keep])
        assert np.all(ds.ground_truth_dt[0] == 0)

    def test_static_scene_matches_pretreatment(self):
        ph = disk_phantom((32, 32), seed=3)
        params = small_params()
        proto = HeatingProtocol(focus=(16, 16), power=1.5, frame_dt=0.8)
        ds = generate_session(ph, proto, params, 3, seed=0)
        pre = ifft2c(ds.pretreat_full_k[2][0])
        for t in range(3):
            treat = ifft2c(ds.treat_full_k[t][0])
            assert np.abs(treat - pre).max() < 1e-12

    def test_deterministic_under_seed(self):
        ph = disk_phantom((32, 32), seed=3)
        params = small_params(noise_snr=20.0)
        a = generate_session(ph, self.proto(), params, 4, seed=9)
        b = generate_session(ph, self.proto(), params, 4, seed=9)
        for t in range(4):
            for l in range(2):
                assert np.array_equal(a.treat_k[t][l], b.treat_k[t][l])
        assert np.array_equal(a.b1_pair[0], b.b1_pair[0])

    def test_heating_recorded_in_ground_truth(self):
        ph = disk_phantom((32, 32), seed=3)
        ds = generate_session(ph, self.proto(), small_params(), 6, seed=0)
        assert ds.ground_truth_dt[5].max() > ds.ground_truth_dt[1].max()
        dt1 = ds.ground_truth_t1[5] - ds.ground_truth_t1[0]
        focus_gain = dt1[16, 16]
        assert focus_gain == pytest.approx(
            7.04 * ds.ground_truth_dt[5][16, 16], rel=1e-9)
