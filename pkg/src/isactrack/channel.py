"""OFDM frame generation and the backscatter receive-signal simulator.

An epoch consists of B blocks of N OFDM symbols over M subcarriers.  The
transmitter sends unit-modulus QPSK frames through a fixed beam f; the
receiver observes each block through its own reduction matrix U_b.  For a
scatterer with gain h, delay tau, Doppler nu at angle phi, symbol n of
block b on subcarrier m contributes

    h * sqrt(P_tx) * U_b^H a(phi) a(phi)^H f * zeta_b[n, m]
      * exp(j 2 pi ((b N + n) T_0 nu - m delta_f tau))

plus reduced white noise U_b^H w.  The symbol index runs globally across
blocks, so Doppler phase keeps advancing between blocks.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .arrays import ReductionPlan, TxBeam, steering_from_sin
from .config import SystemConfig, noise_variance
from .scene import Echoes

_QPSK = np.exp(1j * (math.pi / 4.0 + math.pi / 2.0 * np.arange(4)))


def generate_frame(n_symbols: int, m_subcarriers: int,
                   rng: np.random.Generator) -> np.ndarray:
    """One block of uniform QPSK symbols, shape (n_symbols, m_subcarriers)."""
    return _QPSK[rng.integers(0, 4, size=(n_symbols, m_subcarriers))]


def generate_epoch_frames(cfg: SystemConfig, rng: np.random.Generator) -> np.ndarray:
    """Independent frames for all B blocks, shape (B, N, M)."""
    return np.stack([generate_frame(cfg.N, cfg.M, rng) for _ in range(cfg.B)])


@dataclass(frozen=True, eq=False)
class RxBlocks:
    """Reduced receive samples for one epoch, shape (B, N, M, N_rf)."""

    data: np.ndarray
    plan: ReductionPlan
    beam: TxBeam


def simulate_epoch_rx(echoes: Echoes, frames: np.ndarray, beam: TxBeam,
                      plan: ReductionPlan, cfg: SystemConfig,
                      rng: np.random.Generator,
                      noise_power: float | None = None) -> RxBlocks:
    """Simulate the reduced receive signal of one epoch.

    noise_power defaults to N_0 * W; pass 0.0 for a noiseless run.  Noise is
    drawn at the elements and then reduced, so any orthonormal U_b yields
    white noise of the same power per RF chain.
    """
    b_blocks, n_sym, m_sub = frames.shape
    if (b_blocks, n_sym, m_sub) != (cfg.B, cfg.N, cfg.M):
        raise ValueError(f"frames shape {frames.shape} does not match config "
                         f"({cfg.B}, {cfg.N}, {cfg.M})")
    if plan.matrices.shape[0] != cfg.B:
        raise ValueError("reduction plan block count does not match config")
    if np.any(echoes.delay >= 1.0 / cfg.delta_f):
        raise ValueError("echo delay exceeds the unambiguous range 1/delta_f")
    sigma2 = noise_variance(cfg) if noise_power is None else float(noise_power)

    n_rf = plan.n_rf
    data = np.zeros((cfg.B, cfg.N, cfg.M, n_rf), dtype=complex)
    if len(echoes) > 0:
        a_mat = steering_from_sin(np.sin(echoes.angle), cfg.N_a)      # (N_a, P)
        tx = a_mat.conj().T @ beam.weights                            # a(phi)^H f
        amp = echoes.gain * math.sqrt(cfg.P_tx) * tx                  # (P,)
        spatial = np.einsum("bar,ap->brp", plan.matrices.conj(), a_mat)
        t_global = np.arange(cfg.B * cfg.N).reshape(cfg.B, cfg.N)
        dopp = np.exp(2j * math.pi * cfg.T_0
                      * echoes.doppler[:, None, None] * t_global)      # (P, B, N)
        dely = np.exp(-2j * math.pi * cfg.delta_f
                      * np.outer(echoes.delay, np.arange(cfg.M)))      # (P, M)
        data = np.einsum("brp,p,pbn,pm->bnmr", spatial, amp, dopp, dely)
        data *= frames[..., None]
    if sigma2 > 0.0:
        scale = math.sqrt(sigma2 / 2.0)
        w = scale * (rng.standard_normal((cfg.B, cfg.N, cfg.M, cfg.N_a))
                     + 1j * rng.standard_normal((cfg.B, cfg.N, cfg.M, cfg.N_a)))
        data = data + np.einsum("bar,bnma->bnmr", plan.matrices.conj(), w)
    return RxBlocks(data=data, plan=plan, beam=beam)


def comm_gain(d0: float, cfg: SystemConfig) -> float:
    """Free-space line-of-sight power gain (lambda / 4 pi d0)^2."""
    if d0 <= 0:
        raise ValueError(f"distance must be positive: {d0}")
    return (cfg.wavelength / (4.0 * math.pi * d0)) ** 2


# -- raw sample dump -------------------------------------------------------
#
# Layout: magic b"RXB1", four little-endian uint32 (B, N, M, N_rf), then
# B*N*M*N_rf little-endian float64 pairs (real, imag) in C order.

_MAGIC = b"RXB1"


def dump_rx(rx: RxBlocks, path: str | Path) -> None:
    d = rx.data
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<4I", *d.shape))
        inter = np.empty(d.shape + (2,), dtype="<f8")
        inter[..., 0] = d.real
        inter[..., 1] = d.imag
        fh.write(inter.tobytes())


def load_rx_data(path: str | Path) -> np.ndarray:
    """Read back the sample array written by dump_rx (plan/beam not stored)."""
    raw = Path(path).read_bytes()
    if raw[:4] != _MAGIC:
        raise ValueError(f"{path}: not an RXB1 dump")
    shape = struct.unpack("<4I", raw[4:20])
    flat = np.frombuffer(raw[20:], dtype="<f8").reshape(shape + (2,))
    return (flat[..., 0] + 1j * flat[..., 1]).astype(complex)
