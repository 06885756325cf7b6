"""Detection statistic (fast path vs oracle), noise law and OS-CFAR."""

import itertools
import math

import numpy as np
import pytest
from scipy import stats

from _instances import SMALL, random_echoes, small_map, small_parts
from isactrack.channel import RxBlocks, simulate_epoch_rx
from isactrack.config import noise_variance
from isactrack.detector import (CfarConfig, calibrate_cfar, cfar_decision_map,
                                denominator, glrt_map_fast,
                                glrt_statistic_oracle, make_grid, os_cfar,
                                order_statistic_map, threshold_map)
from isactrack.scene import Echoes

# alpha for P_fa = 1e-2, default window and map shape, default_rng(0)
FROZEN_ALPHA = 3.4991710663839286


def test_fast_map_matches_oracle_cell_by_cell():
    for seed in range(3):
        rx, frames, grid = small_map(seed)
        peak_ell = grid.values.max()
        peak_amp = np.abs(grid.amp).max()
        worst = 0.0
        for idx in itertools.product(*map(range, grid.shape)):
            ell, amp = glrt_statistic_oracle(rx, frames, grid.cell(idx), SMALL)
            worst = max(worst,
                        abs(grid.values[idx] - ell) / peak_ell,
                        abs(grid.amp[idx] - amp) / peak_amp)
        assert worst < 1e-9, f"seed {seed}: worst relative error {worst:.3e}"


def test_denominator_constant_over_nu_tau_and_matches_oracle():
    # ||G_b zeta_b||^2 via explicit construction at random (nu, tau)
    rng, cb, plan, beam, frames = small_parts(4)
    nm = SMALL.N * SMALL.M
    for sin_phi in (-0.05, 0.0, 0.08):
        tx = None
        dens = []
        for _ in range(10):
            nu = rng.uniform(-4e6, 4e6)
            tau = rng.uniform(0.0, 0.9 / SMALL.delta_f)
            den = 0.0
            a = np.exp(1j * math.pi * np.arange(SMALL.N_a) * sin_phi)
            txv = a.conj() @ beam.weights
            for b in range(SMALL.B):
                cap = plan.matrices[b].conj().T @ a          # (n_rf,)
                t_idx = b * SMALL.N + np.arange(SMALL.N)
                ramp = np.exp(2j * math.pi * (SMALL.T_0 * nu * t_idx[:, None]
                              - SMALL.delta_f * tau * np.arange(SMALL.M)))
                g_full = np.kron(np.diag(ramp.reshape(nm)), (cap * txv)[:, None])
                model = g_full @ frames[b].reshape(nm)
                den += float(np.vdot(model, model).real)
            dens.append(den)
        dens = np.array(dens)
        assert np.ptp(dens) <= 1e-12 * dens.mean()
        closed = float(denominator(np.array([sin_phi]), frames, plan, beam)[0])
        assert abs(closed - dens.mean()) <= 1e-12 * dens.mean()


def test_statistic_invariances():
    rx, frames, grid = small_map(5)
    gamma, theta = 1.9, 0.7
    rx2 = RxBlocks(data=gamma * np.exp(1j * theta) * rx.data,
                   plan=rx.plan, beam=rx.beam)
    grid2 = make_grid(SMALL, rx.plan.codebook, pad_doppler=2)
    glrt_map_fast(rx2, frames, grid2, SMALL)
    # global phase leaves ell untouched; amplitude scales ell by gamma^2
    assert np.allclose(grid2.values, gamma ** 2 * grid.values, rtol=1e-12,
                       atol=1e-12 * grid.values.max())
    assert np.allclose(grid2.amp, gamma * np.exp(1j * theta) * grid.amp,
                       rtol=1e-12, atol=1e-12 * np.abs(grid.amp).max())


def test_noiseless_on_grid_echo_is_localized_exactly():
    for seed in range(5):
        rng, cb, plan, beam, frames = small_parts(seed)
        grid = make_grid(SMALL, cb, pad_doppler=1)
        cell = (int(rng.integers(grid.shape[0])),
                int(rng.integers(grid.shape[1])),
                int(rng.integers(1, grid.shape[2] - 1)))
        gain = 1e-4 * complex(rng.standard_normal(), rng.standard_normal())
        nu, tau, phi = grid.cell(cell)
        ech = Echoes(gain=np.array([gain]), delay=np.array([tau]),
                     doppler=np.array([nu]), angle=np.array([phi]))
        rx = simulate_epoch_rx(ech, frames, beam, plan, SMALL, rng,
                               noise_power=0.0)
        glrt_map_fast(rx, frames, grid, SMALL)
        assert np.unravel_index(grid.values.argmax(), grid.shape) == cell
        want = gain * math.sqrt(SMALL.P_tx)
        assert abs(grid.amp[cell] - want) <= 1e-10 * abs(want)


def test_noise_only_statistic_is_exponential():
    # at one angle the (nu, tau) plane of an unpadded grid is an orthogonal
    # transform of white noise: ell / sigma^2 must be Exp(1) iid
    sigma2 = noise_variance(SMALL)
    vals = []
    empty = Echoes(gain=np.zeros(0, complex), delay=np.zeros(0),
                   doppler=np.zeros(0), angle=np.zeros(0))
    for seed in range(400):
        rx, frames, grid = small_map(seed, echoes=empty, pad_doppler=1)
        vals.append(grid.values[:, :, 4].ravel())
    vals = np.concatenate(vals) / sigma2
    assert len(vals) >= 1e4
    p = stats.kstest(vals, "expon").pvalue
    print(f"KS against Exp(1): n={len(vals)}, p={p:.3f}")
    assert p > 0.01


def test_calibration_frozen_value_and_monotonicity():
    cal = calibrate_cfar(1e-2, np.random.default_rng(0))
    assert abs(cal.alpha - FROZEN_ALPHA) < 1e-9
    alphas = [calibrate_cfar(p, np.random.default_rng(1), map_shape=(10, 14, 14),
                             n_maps=20).alpha for p in (1e-1, 1e-2, 1e-3)]
    assert alphas[0] < alphas[1] < alphas[2]


def test_false_alarm_rate_matches_target():
    cal = calibrate_cfar(1e-2, np.random.default_rng(2))
    rng = np.random.default_rng(3)
    hits = cells = 0
    for _ in range(80):
        noise = rng.exponential(1.0, size=(12, 20, 20))
        mask = cfar_decision_map(noise, cal)
        hits += int(mask.sum())
        cells += noise.size
    rate = hits / cells
    print(f"CFAR empirical rate {rate:.5f} over {cells} cells (target 1e-2)")
    assert 1e-2 / 1.3 < rate < 1.3e-2


def test_decision_map_equals_brute_force():
    # independent python re-implementation with clipped windows
    rng = np.random.default_rng(4)
    values = rng.exponential(1.0, size=(5, 6, 7))
    cfar = CfarConfig(alpha=3.0, p_fa=1e-2, window=(2, 2, 2), guard=(1, 1, 1))
    mask = cfar_decision_map(values, cfar)
    thr = threshold_map(values, cfar)
    for c in itertools.product(*map(range, values.shape)):
        refs = []
        for off in itertools.product(*(range(-2, 3) for _ in range(3))):
            if all(abs(o) <= 1 for o in off):
                continue
            idx = tuple(ci + oi for ci, oi in zip(c, off))
            if all(0 <= i < n for i, n in zip(idx, values.shape)):
                refs.append(values[idx])
        k = max(math.ceil(0.75 * len(refs)), 1)
        q = sorted(refs)[k - 1]
        assert mask[c] == (values[c] > cfar.alpha * q)
        assert abs(thr[c] - cfar.alpha * q) < 1e-12 * max(1.0, q)


def test_os_cfar_detections_consistent_with_maps():
    rx, frames, grid = small_map(6)
    cal = CfarConfig(alpha=2.0, p_fa=1e-2)   # low threshold, many crossings
    dets = os_cfar(grid, cal)
    mask = cfar_decision_map(grid.values, cal)
    thr = threshold_map(grid.values, cal)
    assert {d.cell for d in dets} == {tuple(c) for c in np.argwhere(mask)}
    assert len(dets) > 0
    for d in dets:
        assert d.ell > d.threshold
        assert abs(d.threshold - thr[d.cell]) <= 1e-12 * thr[d.cell]
        assert (d.nu, d.tau, d.phi) == grid.cell(d.cell)
        assert d.amp == complex(grid.amp[d.cell])


def test_cfar_parameter_validation():
    with pytest.raises(ValueError):
        CfarConfig(alpha=3.0, p_fa=1e-2, window=(1, 1, 1), guard=(1, 1, 1))
    with pytest.raises(ValueError):
        CfarConfig(alpha=3.0, p_fa=1e-2, order_fraction=0.0)
    with pytest.raises(ValueError):
        CfarConfig(alpha=-1.0, p_fa=1e-2)
    with pytest.raises(ValueError):
        CfarConfig(alpha=3.0, p_fa=1.0)
    with pytest.raises(ValueError, match="does not fit"):
        order_statistic_map(np.ones((3, 3, 3)),
                            CfarConfig(alpha=3.0, p_fa=1e-2))
    with pytest.raises(ValueError):
        calibrate_cfar(0.0, np.random.default_rng(0))


def test_grid_rejects_bad_padding():
    _, cb, *_ = small_parts(0)
    with pytest.raises(ValueError):
        make_grid(SMALL, cb, pad_doppler=0)
