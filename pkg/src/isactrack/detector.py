"""Multi-block GLRT detection maps and ordered-statistic CFAR.

For a hypothesized (nu, tau, phi) cell the known part of the signal in
block b is G_b zeta_b with G_b = T(tau, nu) kron U_b^H a(phi) a(phi)^H f,
where T is the diagonal of per-symbol/subcarrier phase ramps (symbol index
global across blocks).  The detection statistic and amplitude estimate are

    ell = |sum_b r_b^H G_b zeta_b|^2 / sum_b ||G_b zeta_b||^2
    h'  = sum_b zeta_b^H G_b^H r_b   / sum_b ||G_b zeta_b||^2

glrt_statistic_oracle evaluates a single cell by building G_b explicitly.
glrt_map_fast computes the whole grid: projecting each block on the
hypothesized receive signature turns the numerator into a 2-D DFT over
(global symbol, subcarrier), done with zero-padded FFTs; the denominator
has the closed form |a^H f|^2 * sum_b ||U_b^H a||^2 ||zeta_b||^2, which
depends on the angle only.  On noise alone ell / sigma_n^2 is unit-mean
exponential in every cell, which is what the CFAR calibration assumes.
"""

from __future__ import annotations

import csv
import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

from .arrays import DftCodebook, ReductionPlan, TxBeam, steering_from_sin
from .channel import RxBlocks
from .config import SystemConfig

# cells whose denominator falls below this fraction of the grid maximum are
# treated as blind (statistic forced to zero) instead of dividing by ~0
_DEGENERATE_REL = 1e-12


@dataclass(frozen=True, eq=False)
class DetectionGrid:
    """Search grid and (after glrt_map_fast) statistic and amplitude maps.

    Axes in order: Doppler nu (Hz), delay tau (s), angle phi (rad).  values
    holds ell, amp holds h'.  The angle axis samples the codebook's covered
    sin interval at four points per DFT beamwidth.
    """

    nu: np.ndarray
    tau: np.ndarray
    phi: np.ndarray
    sin_phi: np.ndarray
    values: np.ndarray
    amp: np.ndarray
    pad_doppler: int
    pad_delay: int

    @property
    def shape(self) -> tuple[int, int, int]:
        return (len(self.nu), len(self.tau), len(self.phi))

    def cell(self, idx: tuple[int, int, int]) -> tuple[float, float, float]:
        return (float(self.nu[idx[0]]), float(self.tau[idx[1]]), float(self.phi[idx[2]]))


def make_grid(cfg: SystemConfig, codebook: DftCodebook, pad_doppler: int = 1,
              pad_delay: int = 1, n_delay: int | None = None) -> DetectionGrid:
    """Detection grid matched to the FFT fast path.

    Doppler: pad_doppler * B * N cells spaced 1 / (pad * B * N * T_0),
    covering the unambiguous span +-1/(2 T_0).  Delay: cells spaced
    1 / (pad_delay * W) from zero, by default covering the full unambiguous
    range 1/delta_f (n_delay trims this).  Angle: 4 cells per DFT beamwidth
    across the codebook interval, 4 D + 1 points.
    """
    if pad_doppler < 1 or pad_delay < 1:
        raise ValueError("padding factors must be >= 1")
    l_nu = pad_doppler * cfg.B * cfg.N
    nu = (np.arange(l_nu) - l_nu // 2) / (l_nu * cfg.T_0)
    l_tau = pad_delay * cfg.M
    if n_delay is None:
        n_delay = l_tau
    if not 1 <= n_delay <= l_tau:
        raise ValueError(f"n_delay must lie in [1, {l_tau}]: {n_delay}")
    tau = np.arange(n_delay) / (pad_delay * cfg.W)
    lo, hi = codebook.sin_interval
    n_phi = 4 * codebook.d_count + 1
    sin_phi = np.linspace(lo, hi, n_phi)
    phi = np.arcsin(np.clip(sin_phi, -1.0, 1.0))
    shape = (l_nu, n_delay, n_phi)
    return DetectionGrid(nu=nu, tau=tau, phi=phi, sin_phi=sin_phi,
                         values=np.zeros(shape), amp=np.zeros(shape, dtype=complex),
                         pad_doppler=pad_doppler, pad_delay=pad_delay)


# -- statistic evaluation --------------------------------------------------


def _block_signatures(plan: ReductionPlan, beam: TxBeam, sin_phi) -> tuple[np.ndarray, np.ndarray]:
    """Per-block receive signatures g_b = U_b^H a and Tx gains a^H f.

    Returns (cap, tx): cap has shape (B, n_rf, n_phi), tx (n_phi,).
    """
    a_mat = steering_from_sin(sin_phi, plan.codebook.n_a)
    tx = a_mat.conj().T @ beam.weights
    cap = np.einsum("bar,ap->brp", plan.matrices.conj(), a_mat)
    return cap, tx


def glrt_statistic_oracle(rx: RxBlocks, frames: np.ndarray,
                          cell: tuple[float, float, float],
                          cfg: SystemConfig) -> tuple[float, complex]:
    """Single-cell statistic by explicit construction of G_b (slow, exact).

    cell is (nu, tau, phi) in Hz, s, rad.  Returns (ell, h').
    """
    nu, tau, phi = cell
    plan, beam = rx.plan, rx.beam
    cap, tx = _block_signatures(plan, beam, np.array([math.sin(phi)]))
    nm = cfg.N * cfg.M
    num = 0.0 + 0.0j
    den = 0.0
    for b in range(cfg.B):
        g_b = (cap[b, :, 0] * tx[0])[:, None]                      # (n_rf, 1)
        t_idx = b * cfg.N + np.arange(cfg.N)
        ramp = np.exp(2j * math.pi * (cfg.T_0 * nu * t_idx[:, None]
                                      - cfg.delta_f * tau * np.arange(cfg.M)))
        t_mat = np.diag(ramp.reshape(nm))
        g_full = np.kron(t_mat, g_b)                               # (nm*n_rf, nm)
        model = g_full @ frames[b].reshape(nm)
        r_vec = rx.data[b].reshape(nm * plan.n_rf)
        num += model.conj() @ r_vec
        den += float(np.vdot(model, model).real)
    if den <= 0.0 or not np.isfinite(den):
        return 0.0, 0.0 + 0.0j
    ell = abs(num) ** 2 / den
    return float(ell), complex(num / den)


def denominator(sin_phi, frames: np.ndarray, plan: ReductionPlan,
                beam: TxBeam) -> np.ndarray:
    """Closed-form sum_b ||G_b zeta_b||^2 per angle; (nu, tau) drop out."""
    cap, tx = _block_signatures(plan, beam, np.atleast_1d(sin_phi))
    frame_energy = np.sum(np.abs(frames) ** 2, axis=(1, 2))          # (B,)
    cap_energy = np.sum(np.abs(cap) ** 2, axis=1)                    # (B, n_phi)
    return np.abs(tx) ** 2 * (frame_energy @ cap_energy)


def glrt_map_fast(rx: RxBlocks, frames: np.ndarray, grid: DetectionGrid,
                  cfg: SystemConfig) -> DetectionGrid:
    """Fill grid.values and grid.amp for all cells via per-angle 2-D FFTs.

    Equivalent to glrt_statistic_oracle on every cell up to floating-point
    rounding.
    """
    plan, beam = rx.plan, rx.beam
    cap, tx = _block_signatures(plan, beam, grid.sin_phi)
    # project each block on the per-angle receive signature, conjugate the
    # known symbols away: z[p, t, m] with t = b N + n the global symbol
    y = np.einsum("brp,bnmr->pbnm", cap.conj(), rx.data)
    z = tx.conj()[:, None, None, None] * frames.conj()[None, ...] * y
    z = z.reshape(len(grid.sin_phi), cfg.B * cfg.N, cfg.M)

    l_nu = grid.pad_doppler * cfg.B * cfg.N
    l_tau = grid.pad_delay * cfg.M
    s_num = np.fft.fft(z, n=l_nu, axis=1)
    s_num = np.fft.ifft(s_num, n=l_tau, axis=2) * l_tau
    s_num = np.fft.fftshift(s_num, axes=1)[:, :, :len(grid.tau)]     # (phi, nu, tau)
    s_num = np.moveaxis(s_num, 0, 2)                                 # (nu, tau, phi)

    den = denominator(grid.sin_phi, frames, plan, beam)
    floor = _DEGENERATE_REL * max(float(den.max()), 1e-300)
    ok = den > floor
    safe = np.where(ok, den, 1.0)
    grid.values[...] = np.where(ok, np.abs(s_num) ** 2 / safe, 0.0)
    grid.amp[...] = np.where(ok, s_num / safe, 0.0)
    return grid


# -- ordered-statistic CFAR ------------------------------------------------


class CalibrationError(RuntimeError):
    """alpha search failed for the requested false-alarm rate."""


@dataclass(frozen=True)
class CfarConfig:
    """3-D OS-CFAR parameters.

    window and guard are per-axis half-sizes (Doppler, delay, angle); the
    reference set is the window box minus the guard box, clipped at grid
    edges.  The order statistic index is ceil(order_fraction * n_ref) for
    each cell's actual reference count, and a cell detects when its value
    exceeds alpha times that order statistic.
    """

    alpha: float
    p_fa: float
    window: tuple[int, int, int] = (2, 2, 2)
    guard: tuple[int, int, int] = (1, 1, 1)
    order_fraction: float = 0.75

    def __post_init__(self) -> None:
        if len(self.window) != 3 or len(self.guard) != 3:
            raise ValueError("window and guard must have one half-size per axis")
        if any(g < 0 for g in self.guard) or any(w <= g for w, g in zip(self.window, self.guard)):
            raise ValueError(f"need window > guard >= 0 per axis: "
                             f"window={self.window} guard={self.guard}")
        if not 0.0 < self.order_fraction <= 1.0:
            raise ValueError(f"order_fraction must lie in (0, 1]: {self.order_fraction}")
        if self.alpha <= 0.0:
            raise ValueError(f"alpha must be positive: {self.alpha}")
        if not 0.0 < self.p_fa < 1.0:
            raise ValueError(f"p_fa must lie in (0, 1): {self.p_fa}")


@dataclass(frozen=True)
class Detection:
    """One CFAR crossing: cell indices, physical coordinates, statistic,
    threshold actually applied, and the amplitude estimate."""

    cell: tuple[int, int, int]
    nu: float
    tau: float
    phi: float
    ell: float
    threshold: float
    amp: complex


def _reference_offsets(window, guard) -> list[tuple[int, int, int]]:
    offs = []
    for d in itertools.product(*(range(-w, w + 1) for w in window)):
        if all(abs(di) <= gi for di, gi in zip(d, guard)):
            continue  # guard box, includes the cell under test
        offs.append(d)
    return offs


def _check_window(shape, window) -> None:
    for ax, (n, w) in enumerate(zip(shape, window)):
        if 2 * w + 1 > n:
            raise ValueError(f"CFAR window does not fit axis {ax}: "
                             f"size {n} < {2 * w + 1}")


def _ref_counts(shape, window, guard) -> np.ndarray:
    """Per-cell reference count for clipped windows (separable product)."""
    def extents(n, h):
        i = np.arange(n)
        return np.minimum(i, h) + np.minimum(n - 1 - i, h) + 1
    box = np.multiply.outer(np.multiply.outer(
        extents(shape[0], window[0]), extents(shape[1], window[1])), extents(shape[2], window[2]))
    gbox = np.multiply.outer(np.multiply.outer(
        extents(shape[0], guard[0]), extents(shape[1], guard[1])), extents(shape[2], guard[2]))
    return box - gbox


def _order_indices(n_ref: np.ndarray, fraction: float) -> np.ndarray:
    return np.maximum(np.ceil(fraction * n_ref).astype(int), 1)


def _shifted(values: np.ndarray, off, fill: float) -> np.ndarray:
    """values shifted by -off with out-of-grid cells set to fill, so that
    out[c] = values[c + off] where defined."""
    out = np.full_like(values, fill)
    src = []
    dst = []
    for o, n in zip(off, values.shape):
        if o >= 0:
            src.append(slice(o, n))
            dst.append(slice(0, n - o))
        else:
            src.append(slice(0, n + o))
            dst.append(slice(-o, n))
    out[tuple(dst)] = values[tuple(src)]
    return out


def order_statistic_map(values: np.ndarray, cfar: CfarConfig) -> np.ndarray:
    """Per-cell k-th smallest reference value (k from the clipped count)."""
    _check_window(values.shape, cfar.window)
    offs = _reference_offsets(cfar.window, cfar.guard)
    stack = np.empty((len(offs),) + values.shape)
    for i, off in enumerate(offs):
        stack[i] = _shifted(values, off, np.inf)
    stack.sort(axis=0)
    n_ref = _ref_counts(values.shape, cfar.window, cfar.guard)
    k_idx = _order_indices(n_ref, cfar.order_fraction) - 1
    return np.take_along_axis(stack, k_idx[None, ...], axis=0)[0]


def threshold_map(values: np.ndarray, cfar: CfarConfig) -> np.ndarray:
    """Full CFAR threshold map alpha * q_k (slower than os_cfar's decision)."""
    return cfar.alpha * order_statistic_map(values, cfar)


def os_cfar(grid: DetectionGrid, cfar: CfarConfig) -> list[Detection]:
    """CFAR crossings of a filled detection grid.

    The decision "value > alpha * q_k" is evaluated as "at least k reference
    cells fall below value / alpha", which needs no sorting; thresholds are
    then recovered exactly for the (few) detected cells only.
    """
    values = grid.values
    mask = cfar_decision_map(values, cfar)
    cells = np.argwhere(mask)
    if len(cells) == 0:
        return []
    detections = []
    offs = _reference_offsets(cfar.window, cfar.guard)
    n_ref = _ref_counts(values.shape, cfar.window, cfar.guard)
    k_all = _order_indices(n_ref, cfar.order_fraction)
    for c in map(tuple, cells):
        refs = []
        for off in offs:
            idx = tuple(ci + oi for ci, oi in zip(c, off))
            if all(0 <= i < n for i, n in zip(idx, values.shape)):
                refs.append(values[idx])
        q_k = np.sort(np.asarray(refs))[k_all[c] - 1]
        detections.append(Detection(cell=c, nu=float(grid.nu[c[0]]),
                                    tau=float(grid.tau[c[1]]), phi=float(grid.phi[c[2]]),
                                    ell=float(values[c]), threshold=float(cfar.alpha * q_k),
                                    amp=complex(grid.amp[c])))
    return detections


def cfar_decision_map(values: np.ndarray, cfar: CfarConfig) -> np.ndarray:
    """Boolean detection mask, equivalent to values > threshold_map(values)."""
    _check_window(values.shape, cfar.window)
    level = values / cfar.alpha
    counts = np.zeros(values.shape, dtype=np.int32)
    for off in _reference_offsets(cfar.window, cfar.guard):
        counts += _shifted(values, off, np.inf) < level
    n_ref = _ref_counts(values.shape, cfar.window, cfar.guard)
    return counts >= _order_indices(n_ref, cfar.order_fraction)


def calibrate_cfar(p_fa: float, rng: np.random.Generator,
                   window=(2, 2, 2), guard=(1, 1, 1), order_fraction: float = 0.75,
                   map_shape=(16, 24, 24), n_maps: int = 30) -> CfarConfig:
    """Monte-Carlo alpha for a per-cell false-alarm target.

    Draws unit-mean exponential maps of the given shape (matching the
    production grid shape keeps the edge-cell mix honest), pools the
    order statistics q_k of every cell, and solves
        mean(exp(-alpha * q_k)) = p_fa
    for alpha.  Conditioning on q_k this average is the exact false-alarm
    probability of an exponential cell under test, so no cell draws are
    wasted on the rare threshold crossings themselves.
    """
    if not 0.0 < p_fa < 1.0:
        raise ValueError(f"p_fa must lie in (0, 1): {p_fa}")
    probe = CfarConfig(alpha=1.0, p_fa=p_fa, window=tuple(window),
                       guard=tuple(guard), order_fraction=order_fraction)
    qs = []
    for _ in range(n_maps):
        noise = rng.exponential(1.0, size=tuple(map_shape))
        qs.append(order_statistic_map(noise, probe).ravel())
    q = np.concatenate(qs)

    def fa_rate(alpha: float) -> float:
        return float(np.mean(np.exp(-alpha * q)))

    lo, hi = 1e-3, 8.0
    while fa_rate(hi) > p_fa:
        hi *= 2.0
        if hi > 1e6:
            raise CalibrationError(
                f"alpha search diverged for p_fa={p_fa}; window too small "
                "or order_fraction too low for this target")
    if fa_rate(lo) < p_fa:
        lo = 1e-8
        if fa_rate(lo) < p_fa:
            raise CalibrationError(f"p_fa={p_fa} is too large for this window")
    alpha = brentq(lambda a: fa_rate(a) - p_fa, lo, hi, xtol=1e-10, rtol=1e-12)
    return CfarConfig(alpha=float(alpha), p_fa=p_fa, window=tuple(window),
                      guard=tuple(guard), order_fraction=order_fraction)


# -- exports ---------------------------------------------------------------


def detections_to_csv(detections: list[Detection], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["nu_idx", "tau_idx", "phi_idx", "nu_hz", "tau_s", "phi_rad",
                     "ell", "threshold", "amp_re", "amp_im"])
        for d in detections:
            wr.writerow([*d.cell, d.nu, d.tau, d.phi, d.ell, d.threshold,
                         d.amp.real, d.amp.imag])


def detections_to_json(detections: list[Detection], path: str | Path) -> None:
    rows = [{"cell": list(d.cell), "nu_hz": d.nu, "tau_s": d.tau, "phi_rad": d.phi,
             "ell": d.ell, "threshold": d.threshold,
             "amp": [d.amp.real, d.amp.imag]} for d in detections]
    Path(path).write_text(json.dumps(rows, indent=1))


def grid_to_csv(grid: DetectionGrid, path: str | Path) -> None:
    """Long-format dump of the statistic map (one row per cell)."""
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["nu_hz", "tau_s", "phi_rad", "ell", "amp_re", "amp_im"])
        for i, nu in enumerate(grid.nu):
            for j, tau in enumerate(grid.tau):
                for k, phi in enumerate(grid.phi):
                    a = grid.amp[i, j, k]
                    wr.writerow([nu, tau, phi, grid.values[i, j, k], a.real, a.imag])
