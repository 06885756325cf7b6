"""Model-free tracking of the target center and transmit-beam adaptation.

Detections are fused into a position fix by a statistic-weighted center of
mass.  The next-epoch position comes from the quadratic extrapolation

    p[t+1] = 3 p[t] - 3 p[t-1] + p[t-2]

which is exact for any constant-acceleration motion and needs no motion
model.  From the prediction the tracker picks the narrowest configured
beamwidth that covers the target body plus a margin, and places the
receive codebook around the predicted angle.

The tracker warms up for three epochs on externally supplied position
estimates (the run harness feeds perturbed ground truth, standing in for
an acquisition stage).  With a full history it runs on its own detections
and coasts on the previous prediction whenever an epoch yields none.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import SystemConfig
from .detector import Detection

WARMUP_EPOCHS = 3


@dataclass(frozen=True)
class CodebookPlacement:
    """Receive codebook request: center in sin space and beam count."""

    center_sin: float
    d_count: int


@dataclass(frozen=True)
class TrackState:
    """history holds the last <= 3 position fixes, newest last.  prediction,
    phi_pred, d_pred, width_deg and placement describe the next epoch and
    are None until the history fills.  coast_count counts consecutive
    coasted epochs."""

    history: tuple[tuple[float, float], ...] = ()
    prediction: tuple[float, float] | None = None
    phi_pred: float | None = None
    d_pred: float | None = None
    width_deg: float | None = None
    placement: CodebookPlacement | None = None
    coasting: bool = False
    coast_count: int = 0

    @property
    def warmed_up(self) -> bool:
        return len(self.history) >= WARMUP_EPOCHS


def strongest_cluster(detections: list[Detection],
                      radius: tuple[int, int, int] = (2, 8, 8)) -> list[Detection]:
    """Detections within a cell box around the highest-statistic detection.

    Single-target tracking fuses every detection directly (the statistic
    weighting keeps isolated false alarms from mattering much); a
    multi-target extension needs detections grouped per target first.
    This helper provides that grouping primitive: the box (by default
    +-2 Doppler cells, +-8 delay cells, +-8 angle cells) generously covers
    one vehicle body around the strongest cell.
    """
    if not detections:
        return []
    anchor = max(detections, key=lambda d: d.ell).cell
    return [d for d in detections
            if all(abs(ci - ai) <= r for ci, ai, r in zip(d.cell, anchor, radius))]


def fuse_center(detections: list[Detection], c: float) -> tuple[float, float]:
    """Statistic-weighted center of mass of the detected cells in x-y.

    Each detection maps to a point at range c tau / 2 along its angle.
    """
    if not detections:
        raise ValueError("cannot fuse an empty detection list")
    w = np.array([d.ell for d in detections])
    if not np.all(np.isfinite(w)) or w.sum() <= 0:
        raise ValueError("detection statistics must be finite and not all zero")
    d_r = c * np.array([d.tau for d in detections]) / 2.0
    phi = np.array([d.phi for d in detections])
    x = d_r * np.sin(phi)
    y = d_r * np.cos(phi)
    w = w / w.sum()
    return float(w @ x), float(w @ y)


def predict(history: tuple[tuple[float, float], ...]) -> tuple[float, float]:
    """Next position from the last three fixes (degree-2 extrapolation)."""
    if len(history) != WARMUP_EPOCHS:
        raise ValueError(f"need exactly {WARMUP_EPOCHS} fixes, got {len(history)}")
    (x2, y2), (x1, y1), (x0, y0) = history  # oldest first
    return (3.0 * x0 - 3.0 * x1 + x2, 3.0 * y0 - 3.0 * y1 + y2)


def pointing(pos: tuple[float, float]) -> tuple[float, float]:
    """(phi, distance) of a position; phi = atan(x/y), boresight +y.

    Positions behind the array plane are rejected: the geometry here only
    serves the forward half-plane.
    """
    x, y = pos
    d = math.hypot(x, y)
    if d <= 0.0:
        raise ValueError("cannot point at the origin")
    if y <= 0.0:
        raise ValueError(f"position ({x:.1f}, {y:.1f}) is behind the array plane")
    return math.atan2(x, y), d


def select_beamwidth(d_pred: float, target_length: float,
                     fov_set: tuple[float, ...], margin_deg: float) -> float:
    """Narrowest configured width covering the body extent plus margin.

    Falls back to the widest entry when even that is too narrow.
    """
    if d_pred <= 0.0:
        raise ValueError(f"predicted distance must be positive: {d_pred}")
    required = 2.0 * math.degrees(math.atan(target_length / (2.0 * d_pred))) + margin_deg
    for w in fov_set:
        if w >= required:
            return float(w)
    return float(fov_set[-1])


def place_rx_codebook(phi_pred: float, width_deg: float,
                      cfg: SystemConfig) -> CodebookPlacement:
    """Codebook centered on the predicted angle, sized to the Tx lobe.

    Beam count: enough DFT beams to span the lobe plus one guard beam per
    side, rounded up to an even count, forced above N_rf and clamped to
    what fits inside sin(phi) in [-1, 1].
    """
    half = math.radians(width_deg) / 2.0
    lim = math.pi / 2.0 - 1e-6
    lo = math.sin(max(phi_pred - half, -lim))
    hi = math.sin(min(phi_pred + half, lim))
    beamwidth = 2.0 / cfg.N_a
    cover = int(math.ceil((hi - lo) / beamwidth - 1e-9))
    d_count = cover + 2
    if d_count % 2:
        d_count += 1
    while d_count <= cfg.N_rf:
        d_count += 2
    d_count = min(d_count, cfg.N_a)
    # keep the whole block inside the codebook span (one index of slack for
    # center rounding)
    max_center = 1.0 - (d_count + 1) / cfg.N_a
    center = math.sin(phi_pred)
    if max_center > 0:
        center = min(max(center, -max_center), max_center)
    else:
        center = 0.0
    return CodebookPlacement(center_sin=center, d_count=d_count)


def track_epoch(state: TrackState, detections: list[Detection], cfg: SystemConfig,
                target_length: float, margin_deg: float,
                truth_estimate: tuple[float, float] | None = None,
                width_override: float | None = None) -> TrackState:
    """Fold one epoch of detections into the track.

    During warm-up truth_estimate must be given and is used as the fix.
    Afterwards the fix is the statistic-weighted center of every detection
    in the epoch; when the epoch yields none, the previous prediction
    stands in as the fix so the three-term extrapolation stays defined.

    The next beam is steered at the prediction.  An extrapolation past the
    array plane cannot steer a beam, so the previous pointing is kept
    until the history recovers.

    width_override pins the transmit beamwidth (fixed-width policies); the
    codebook placement always follows the width actually in force.
    """
    coasting = False
    if not state.warmed_up:
        if truth_estimate is None:
            raise ValueError("warm-up epochs need an externally supplied estimate")
        fix = (float(truth_estimate[0]), float(truth_estimate[1]))
    elif detections:
        fix = fuse_center(detections, cfg.c)
    else:
        if state.prediction is None:
            raise ValueError("cannot coast without a prediction")
        coasting = True
        fix = state.prediction

    history = (state.history + (fix,))[-WARMUP_EPOCHS:]
    if len(history) == WARMUP_EPOCHS:
        pred = predict(history)
    else:
        pred = fix  # best available guess while the history fills
    try:
        phi_pred, d_pred = pointing(pred)
    except ValueError:
        if state.phi_pred is None:
            raise
        phi_pred, d_pred = state.phi_pred, state.d_pred
    width = width_override if width_override is not None else select_beamwidth(
        d_pred, target_length, cfg.fov_set, margin_deg)
    placement = place_rx_codebook(phi_pred, width, cfg)
    return TrackState(history=history, prediction=pred, phi_pred=phi_pred,
                      d_pred=d_pred, width_deg=float(width), placement=placement,
                      coasting=coasting,
                      coast_count=state.coast_count + 1 if coasting else 0)
