"""Half-wavelength ULA primitives: steering, DFT codebooks, RF-chain
reduction draws and flat-top transmit beams.

Angles follow the array convention used throughout the package: boresight
along +y, phi = atan(x/y), positive towards +x.  All beam geometry is done
in the sin(phi) domain where DFT beams are uniformly spaced with width
2/N_a.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np


def steering(phi: float, n_a: int) -> np.ndarray:
    """Unnormalized steering vector, element i carries exp(j*pi*i*sin(phi)).

    phi must lie strictly inside (-pi/2, pi/2).
    """
    if not -math.pi / 2 < phi < math.pi / 2:
        raise ValueError(f"angle {phi!r} rad is outside the array field of view")
    return np.exp(1j * math.pi * np.arange(n_a) * math.sin(phi))


def steering_from_sin(sin_phi: np.ndarray, n_a: int) -> np.ndarray:
    """Steering vectors for a vector of sin-angles, shape (n_a, len(sin_phi))."""
    s = np.atleast_1d(np.asarray(sin_phi, dtype=float))
    return np.exp(1j * math.pi * np.outer(np.arange(n_a), s))


@dataclass(frozen=True, eq=False)
class DftCodebook:
    """Contiguous block of orthonormal DFT receive beams.

    matrix holds the columns (n_a x d_count), column d points at
    sin(phi) = 2*indices[d]/n_a and has norm 1.  sin_interval is the covered
    sin-angle band, beam centers plus half a beamwidth on each side.
    """

    n_a: int
    indices: tuple[int, ...]
    matrix: np.ndarray
    sin_centers: np.ndarray
    sin_interval: tuple[float, float]

    @property
    def d_count(self) -> int:
        return len(self.indices)


def build_codebook(n_a: int, center_sin: float, d_count: int) -> DftCodebook:
    """d_count adjacent DFT beams centered (in sin space) near center_sin.

    Raises if the requested block would need beams beyond sin(phi) = +-1;
    beams are never wrapped because wrapped columns point backwards.
    """
    if not 1 <= d_count <= n_a:
        raise ValueError(f"d_count must lie in [1, {n_a}]: {d_count}")
    if not -1.0 <= center_sin <= 1.0:
        raise ValueError(f"center_sin outside [-1, 1]: {center_sin}")
    d0 = round(center_sin * n_a / 2)
    idx = np.arange(d_count) - d_count // 2 + d0
    lo_ok = idx[0] >= -(n_a // 2)
    hi_ok = idx[-1] <= (n_a - 1) // 2
    if not (lo_ok and hi_ok):
        raise ValueError(
            f"beam block {idx[0]}..{idx[-1]} exceeds the codebook span for N_a={n_a}")
    centers = 2.0 * idx / n_a
    mat = steering_from_sin(centers, n_a) / math.sqrt(n_a)
    interval = (float(centers[0] - 1.0 / n_a), float(centers[-1] + 1.0 / n_a))
    return DftCodebook(n_a=n_a, indices=tuple(int(d) for d in idx), matrix=mat,
                       sin_centers=centers, sin_interval=interval)


@dataclass(frozen=True, eq=False)
class ReductionPlan:
    """Per-block RF-chain reduction matrices drawn from a codebook.

    matrices has shape (B, n_a, n_rf); block b observes U_b^H r with
    orthonormal U_b, so white noise stays white after reduction.
    """

    codebook: DftCodebook
    column_indices: np.ndarray   # (B, n_rf) positions into codebook.matrix
    matrices: np.ndarray         # (B, n_a, n_rf)

    @property
    def n_blocks(self) -> int:
        return self.matrices.shape[0]

    @property
    def n_rf(self) -> int:
        return self.matrices.shape[2]


def draw_reduction_plan(codebook: DftCodebook, n_blocks: int, n_rf: int,
                        rng: np.random.Generator,
                        balanced: bool = False) -> ReductionPlan:
    """Random selection of n_rf distinct beams per block.

    balanced=False draws each block independently (uniform without
    replacement).  balanced=True slices one random beam permutation,
    repeated, into consecutive blocks: each block is still a uniform
    random n_rf-subset, but appearance counts across the epoch differ by
    at most one, so no beam direction can go unobserved.  Independent
    draws leave a beam out of every block with probability
    ((d-n_rf)/d)^B; a target sitting exactly on that beam's center is
    invisible for the whole epoch (DFT beams are orthogonal there).
    """
    d = codebook.d_count
    if not 1 <= n_rf <= d:
        raise ValueError(f"n_rf must lie in [1, {d}]: {n_rf}")
    if balanced:
        perm = rng.permutation(d)
        seq = np.tile(perm, -(-n_blocks * n_rf // d))[:n_blocks * n_rf]
        cols = seq.reshape(n_blocks, n_rf)
    else:
        cols = np.stack([rng.choice(d, size=n_rf, replace=False)
                         for _ in range(n_blocks)])
    mats = np.stack([codebook.matrix[:, c] for c in cols])
    return ReductionPlan(codebook=codebook, column_indices=cols, matrices=mats)


@dataclass(frozen=True, eq=False)
class TxBeam:
    """Unit-norm transmit weights approximating a flat-top sector beam."""

    weights: np.ndarray
    center_phi: float            # rad
    width_deg: float
    sin_interval: tuple[float, float]   # nominal main lobe in sin space


def max_steerable_angle(width_deg: float, n_a: int) -> float:
    """Largest |center| (radians) at which a lobe of this width is feasible.

    Off boresight the lobe's sin-space span shrinks by cos(center); past
    the returned angle it would fall below one DFT beamwidth (or leave the
    visible region) and design_tx_beam rejects it.
    """
    half = math.radians(width_deg) / 2.0
    s = math.sin(half) * n_a
    by_span = math.acos(min(1.0, 1.0 / s)) if s > 1.0 else 0.0
    by_fov = math.pi / 2 - half
    return 0.999 * min(by_span, by_fov)


def design_tx_beam(center_phi: float, width_deg: float, n_a: int,
                   oversample: int = 16) -> TxBeam:
    """Least-squares flat-top beam of the given angular width.

    The target pattern is 1 inside [center - width/2, center + width/2]
    (mapped to sin space) and 0 outside, joined by a raised-cosine ramp one
    DFT beamwidth wide on each side.  Constraining the transition this way
    keeps the fit from ringing at the lobe edges; a hard 1/0 mask leaves
    several dB of Gibbs overshoot.
    """
    half = math.radians(width_deg) / 2.0
    lo_phi, hi_phi = center_phi - half, center_phi + half
    if not (-math.pi / 2 < lo_phi and hi_phi < math.pi / 2):
        raise ValueError(
            f"beam [{math.degrees(lo_phi):.1f}, {math.degrees(hi_phi):.1f}] deg "
            "extends beyond the array field of view")
    s1, s2 = math.sin(lo_phi), math.sin(hi_phi)
    trans = 2.0 / n_a
    if s2 - s1 < trans:
        raise ValueError(
            f"width {width_deg} deg spans {s2 - s1:.4f} in sin space, narrower than "
            f"one DFT beam (2/N_a = {trans:.4f}); infeasible for N_a={n_a}")
    if s2 - s1 < 1.05 * trans:
        # a one-beamwidth request degenerates to the matched phased beam;
        # the LS fit below would smear it over the transition bands instead
        f = steering(center_phi, n_a) / math.sqrt(n_a)
        return TxBeam(weights=f, center_phi=float(center_phi),
                      width_deg=float(width_deg), sin_interval=(s1, s2))

    step = trans / oversample
    grid = np.arange(-1.0, 1.0 + step / 2, step)
    mask = np.zeros_like(grid)
    mask[(grid >= s1) & (grid <= s2)] = 1.0
    lo_ramp = (grid >= s1 - trans) & (grid < s1)
    hi_ramp = (grid > s2) & (grid <= s2 + trans)
    mask[lo_ramp] = 0.5 * (1.0 + np.cos(np.pi * (s1 - grid[lo_ramp]) / trans))
    mask[hi_ramp] = 0.5 * (1.0 + np.cos(np.pi * (grid[hi_ramp] - s2) / trans))

    rows = steering_from_sin(grid, n_a).conj().T  # (G, n_a), row g is a(s_g)^H
    # a(s)^H f only carries sin-space frequencies 0..n_a-1; a zero-phase
    # target needs symmetric content and the fit would degenerate to its
    # one-sided (Hilbert) envelope with edge spikes.  The linear phase
    # recenters the required band at (n_a-1)/2.
    target = mask * np.exp(-1j * math.pi * 0.5 * (n_a - 1) * grid)
    f, *_ = np.linalg.lstsq(rows, target, rcond=None)
    f = f / np.linalg.norm(f)
    return TxBeam(weights=f, center_phi=float(center_phi), width_deg=float(width_deg),
                  sin_interval=(s1, s2))


def beam_pattern(weights: np.ndarray, sin_grid: np.ndarray) -> np.ndarray:
    """Complex pattern a(s)^H f on a sin-angle grid."""
    return steering_from_sin(sin_grid, len(weights)).conj().T @ weights


def in_mainlobe(beam: TxBeam, phi) -> np.ndarray | bool:
    """True where sin(phi) falls inside the nominal lobe (closed interval)."""
    s = np.sin(np.asarray(phi, dtype=float))
    lo, hi = beam.sin_interval
    out = (s >= lo) & (s <= hi)
    return bool(out) if np.isscalar(phi) else out


def export_beam_csv(beam: TxBeam, path: str | Path, n_points: int = 721) -> None:
    """Dump the power pattern (sin angle, angle in deg, gain in dB) to CSV."""
    s = np.linspace(-1.0, 1.0, n_points)
    g = np.abs(beam_pattern(beam.weights, s)) ** 2
    g_db = 10.0 * np.log10(np.maximum(g, 1e-300))
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["sin_angle", "angle_deg", "gain_db"])
        for si, gi in zip(s, g_db):
            wr.writerow([f"{si:.6f}", f"{math.degrees(math.asin(si)):.4f}", f"{gi:.4f}"])
