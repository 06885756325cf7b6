"""Extended target geometry, visibility, echo parameters and trajectories.

The target is a rectangle of point scatterers on its perimeter, moving in
the x-y plane.  The base station sits at radar_pos (origin by default) and
looks along +y; target angles use phi = atan(x/y).

Trajectories are sequences of poses sampled every delta_T.  Consecutive
samples obey exact constant-acceleration kinematics
    x' = x + v dt + a dt^2 / 2,   v' = v + a dt
with the (vector) acceleration held constant over each interval; the
generator picks accelerations so the target follows a corner-rounded
waypoint polyline with a speed profile that brakes into turns.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import ScenarioConfig, SystemConfig


@dataclass(frozen=True)
class TargetState:
    """Pose of the body center: position, velocity, acceleration, heading (rad)."""

    x: float
    y: float
    vx: float = 0.0
    vy: float = 0.0
    ax: float = 0.0
    ay: float = 0.0
    heading: float = 0.0

    @property
    def speed(self) -> float:
        return math.hypot(self.vx, self.vy)

    @property
    def pos(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class Scatterer:
    """One perimeter point in body coordinates (x forward, y left).

    sides lists the rectangle sides the point lies on; corner points carry
    two entries and count as visible when either side faces the radar.
    phase is the point's fixed reflection phase offset (sub-wavelength
    position within its resolution cell); the constellation is rigid, so
    it stays constant while the body moves.
    """

    body_x: float
    body_y: float
    rcs: float
    sides: tuple[int, ...]
    phase: float = 0.0


# side i runs from corner i to corner i+1 (counterclockwise walk); outward
# unit normals in body coordinates, same indexing
_SIDE_NORMALS = np.array([[0.0, 1.0], [-1.0, 0.0], [0.0, -1.0], [1.0, 0.0]])


def scatterer_layout(length: float, width: float, per_side: int,
                     total_rcs: float,
                     rng: np.random.Generator | None = None) -> list[Scatterer]:
    """Evenly spaced perimeter points, per_side per side, equal RCS split.

    Each side contributes its starting corner plus per_side - 1 interior
    points, so per_side = 1 gives exactly the 4 corners.  With an rng the
    reflection phases are drawn uniformly once, here; without one they are
    all zero (useful for deterministic checks).
    """
    if per_side < 1:
        raise ValueError(f"per_side must be >= 1: {per_side}")
    hl, hw = length / 2.0, width / 2.0
    corners = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    rcs_each = total_rcs / (4 * per_side)
    out = []
    for i in range(4):
        p0, p1 = corners[i], corners[(i + 1) % 4]
        for j in range(per_side):
            t = j / per_side
            p = p0 + t * (p1 - p0)
            sides = ((i - 1) % 4, i) if j == 0 else (i,)
            phase = float(rng.uniform(0.0, 2.0 * math.pi)) if rng is not None else 0.0
            out.append(Scatterer(float(p[0]), float(p[1]), rcs_each, sides, phase))
    return out


def _rotation(heading: float) -> np.ndarray:
    c, s = math.cos(heading), math.sin(heading)
    return np.array([[c, -s], [s, c]])


def scatterer_world(scatterers: list[Scatterer], state: TargetState) -> np.ndarray:
    """World positions, shape (len(scatterers), 2)."""
    body = np.array([[sc.body_x, sc.body_y] for sc in scatterers])
    return state.pos + body @ _rotation(state.heading).T


def visible_scatterers(scatterers: list[Scatterer], state: TargetState,
                       radar_pos=(0.0, 0.0)) -> list[Scatterer]:
    """Scatterers on sides whose outward normal points towards the radar.

    The sign of n . (radar - p) is constant along a straight side, so the
    test is evaluated at the side midpoints.  At most two sides can face
    the radar; corner points count if either adjoining side does.
    """
    rot = _rotation(state.heading)
    radar = np.asarray(radar_pos, dtype=float)
    normals = _SIDE_NORMALS @ rot.T
    world = scatterer_world(scatterers, state)
    facing = np.zeros(4, dtype=bool)
    for i in range(4):
        members = [k for k, sc in enumerate(scatterers) if i in sc.sides]
        mid = world[members].mean(axis=0)
        facing[i] = float(normals[i] @ (radar - mid)) > 0.0
    vis = [sc for sc in scatterers if any(facing[s] for s in sc.sides)]
    if not vis:
        raise ValueError("no visible side; is the radar inside the target?")
    return vis


@dataclass(frozen=True, eq=False)
class Echoes:
    """Propagation parameters of the currently visible scatterers.

    gain is the complex two-way channel coefficient (radar equation
    amplitude with the scatterer's fixed reflection phase), and
    delay/doppler/angle are seconds, Hz, radians.
    """

    gain: np.ndarray
    delay: np.ndarray
    doppler: np.ndarray
    angle: np.ndarray
    pos: np.ndarray | None = None
    dist: np.ndarray | None = None
    rcs: np.ndarray | None = None

    def __len__(self) -> int:
        return len(self.gain)


def scatter_echoes(scatterers: list[Scatterer], state: TargetState,
                   cfg: SystemConfig,
                   radar_pos=(0.0, 0.0)) -> Echoes:
    """Echo parameters for the given (already visibility-filtered) scatterers.

    Scatterer velocity is taken as the body-center velocity; the rotation
    contribution is negligible at these epoch lengths.  Doppler is positive
    for closing targets: nu = 2 v_r f_c / c with v_r the range rate towards
    the radar.  Reflection phases come from the scatterers themselves, so
    repeated calls with unchanged geometry give identical echoes.
    """
    world = scatterer_world(scatterers, state)
    radar = np.asarray(radar_pos, dtype=float)
    rel = world - radar
    dist = np.hypot(rel[:, 0], rel[:, 1])
    if np.any(dist <= 0):
        raise ValueError("scatterer coincides with the radar position")
    angle = np.arctan2(rel[:, 0], rel[:, 1])  # boresight +y convention
    delay = 2.0 * dist / cfg.c
    if np.any(delay >= 1.0 / cfg.delta_f):
        worst = float(dist.max())
        raise ValueError(
            f"scatterer at {worst:.1f} m exceeds the unambiguous delay range "
            f"{cfg.c / (2 * cfg.delta_f):.1f} m")
    v = np.array([state.vx, state.vy])
    v_r = -(rel @ v) / dist
    doppler = 2.0 * v_r * cfg.f_c / cfg.c
    rcs = np.array([sc.rcs for sc in scatterers])
    lam = cfg.wavelength
    mag = np.sqrt(lam ** 2 * rcs / ((4.0 * math.pi) ** 3 * dist ** 4))
    phase = np.array([sc.phase for sc in scatterers])
    gain = mag * np.exp(1j * phase)
    return Echoes(gain=gain, delay=delay, doppler=doppler, angle=angle,
                  pos=world, dist=dist, rcs=rcs)


def step_kinematics(state: TargetState, dt: float, accel=(0.0, 0.0)) -> TargetState:
    """One exact constant-acceleration step; heading follows the new velocity."""
    ax, ay = float(accel[0]), float(accel[1])
    x = state.x + state.vx * dt + 0.5 * ax * dt * dt
    y = state.y + state.vy * dt + 0.5 * ay * dt * dt
    vx = state.vx + ax * dt
    vy = state.vy + ay * dt
    heading = math.atan2(vy, vx) if math.hypot(vx, vy) > 1e-9 else state.heading
    return TargetState(x=x, y=y, vx=vx, vy=vy, ax=ax, ay=ay, heading=heading)


# -- waypoint path with rounded corners ------------------------------------


class _Path:
    """Polyline with circular corner fillets, parameterized by arc length."""

    def __init__(self, waypoints, turn_radius: float):
        pts = [np.asarray(p, dtype=float) for p in waypoints]
        if len(pts) < 2:
            raise ValueError("need at least two waypoints")
        self.segments = []  # (kind, data..., length); kind in {"line", "arc"}
        cursor = pts[0]
        for i in range(1, len(pts) - 1):
            a, b, c = cursor, pts[i], pts[i + 1]
            u_in = b - a
            u_out = c - b
            len_in, len_out = np.linalg.norm(u_in), np.linalg.norm(u_out)
            if len_in < 1e-9 or len_out < 1e-9:
                continue
            u_in /= len_in
            u_out /= len_out
            cross = u_in[0] * u_out[1] - u_in[1] * u_out[0]
            dot = float(np.clip(u_in @ u_out, -1.0, 1.0))
            theta = math.atan2(abs(cross), dot)  # turn angle at the corner
            if theta < 1e-6:
                self._add_line(cursor, b)
                cursor = b
                continue
            r = turn_radius
            tan_len = r * math.tan(theta / 2.0)
            limit = 0.45 * min(len_in, len_out)
            if tan_len > limit:  # shrink the fillet on short legs
                tan_len = limit
                r = tan_len / math.tan(theta / 2.0)
            p_in = b - u_in * tan_len
            p_out = b + u_out * tan_len
            self._add_line(cursor, p_in)
            n_in = np.array([-u_in[1], u_in[0]]) * (1.0 if cross > 0 else -1.0)
            center = p_in + n_in * r
            ang0 = math.atan2(*(p_in - center)[::-1])
            dang = theta if cross > 0 else -theta
            self.segments.append(("arc", center, r, ang0, dang, abs(dang) * r))
            cursor = p_out
        self._add_line(cursor, pts[-1])
        self.cum = np.concatenate([[0.0], np.cumsum([s[-1] for s in self.segments])])
        self.length = float(self.cum[-1])

    def _add_line(self, p0, p1):
        length = float(np.linalg.norm(p1 - p0))
        if length > 1e-9:
            self.segments.append(("line", p0, p1, length))

    def _locate(self, s: float):
        s = min(max(s, 0.0), self.length)
        i = int(np.searchsorted(self.cum, s, side="right") - 1)
        i = min(i, len(self.segments) - 1)
        return i, s - self.cum[i]

    def point(self, s: float) -> np.ndarray:
        i, ds = self._locate(s)
        seg = self.segments[i]
        if seg[0] == "line":
            _, p0, p1, length = seg
            return p0 + (p1 - p0) * (ds / length)
        _, center, r, ang0, dang, length = seg
        ang = ang0 + math.copysign(ds / r, dang)
        return center + r * np.array([math.cos(ang), math.sin(ang)])

    def tangent(self, s: float) -> np.ndarray:
        i, ds = self._locate(s)
        seg = self.segments[i]
        if seg[0] == "line":
            _, p0, p1, length = seg
            return (p1 - p0) / length
        _, center, r, ang0, dang, length = seg
        ang = ang0 + math.copysign(ds / r, dang)
        t = np.array([-math.sin(ang), math.cos(ang)])
        return t if dang > 0 else -t

    def curvature(self, s: float) -> float:
        i, _ = self._locate(s)
        seg = self.segments[i]
        return 0.0 if seg[0] == "line" else 1.0 / seg[2]


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Pose samples every delta_t plus the along-path arc length of each."""

    states: tuple[TargetState, ...]
    delta_t: float
    path_s: np.ndarray

    def __len__(self) -> int:
        return len(self.states)


def _speed_limit_profile(path: _Path, scen: ScenarioConfig, ds: float = 0.5):
    """Backward-pass speed limit over arc length: curve limits plus braking."""
    n = max(2, int(math.ceil(path.length / ds)) + 1)
    s_grid = np.linspace(0.0, path.length, n)
    ds = s_grid[1] - s_grid[0] if n > 1 else ds
    v_lim = np.empty(n)
    for i, s in enumerate(s_grid):
        kap = path.curvature(s)
        v_curve = math.sqrt(scen.a_lat_max / kap) if kap > 0 else math.inf
        v_lim[i] = min(scen.v_max, v_curve)
    v_lim[-1] = 0.0  # come to a stop if the road runs out
    for i in range(n - 2, -1, -1):  # can always brake in time for the next limit
        v_lim[i] = min(v_lim[i], math.sqrt(v_lim[i + 1] ** 2 + 2 * scen.a_brake * ds))
    return s_grid, v_lim


def _random_waypoints(scen: ScenarioConfig, rng: np.random.Generator,
                      min_length: float) -> tuple[tuple[float, float], ...]:
    """Random road polyline inside the service wedge, long enough for a trial."""
    half = math.radians(scen.sector_half_angle_deg)
    d_lo, d_hi = scen.d_min, scen.d_max

    def in_bounds(p):
        d = math.hypot(p[0], p[1])
        return d_lo <= d <= d_hi and abs(math.atan2(p[0], p[1])) <= half

    for _attempt in range(200):
        ang = rng.uniform(-0.8 * half, 0.8 * half)
        d = rng.uniform(d_lo + 10.0, d_hi - 10.0)
        pts = [np.array([d * math.sin(ang), d * math.cos(ang)])]
        direction = rng.uniform(0.0, 2.0 * math.pi)
        total = 0.0
        while total < min_length and len(pts) < 12:
            step = rng.uniform(scen.segment_len_min, scen.segment_len_max)
            for _try in range(40):
                cand_dir = direction + rng.choice([0.0, math.pi / 2, -math.pi / 2],
                                                  p=[0.5, 0.25, 0.25])
                cand_dir += rng.uniform(-0.2, 0.2)
                cand = pts[-1] + step * np.array([math.cos(cand_dir), math.sin(cand_dir)])
                mid = 0.5 * (pts[-1] + cand)
                if in_bounds(cand) and in_bounds(mid):
                    pts.append(cand)
                    direction = cand_dir
                    total += step
                    break
            else:
                break
        if total >= min_length:
            return tuple((float(p[0]), float(p[1])) for p in pts)
    raise ValueError("could not place a road inside the configured sector")


def generate_trajectory(cfg: SystemConfig, rng: np.random.Generator,
                        waypoints=None, n_epochs: int | None = None) -> Trajectory:
    """Sampled trajectory along a (given or random) road.

    The speed performs a bounded random walk, accelerations drawn uniformly
    in [-a_max, a_max] each epoch and clipped against the braking-feasible
    curve speed limits.  Positions land exactly on the rounded path; the
    per-epoch vector acceleration is then solved so consecutive states obey
    the constant-acceleration update exactly.
    """
    scen = cfg.scenario
    n_epochs = cfg.epochs if n_epochs is None else n_epochs
    dt = cfg.delta_T
    need = scen.v_max * dt * (n_epochs + 2) + 5.0
    wp = waypoints if waypoints is not None else scen.waypoints
    if wp is None:
        wp = _random_waypoints(scen, rng, need)
    path = _Path(wp, scen.turn_radius)
    s_grid, v_lim = _speed_limit_profile(path, scen)

    def limit_at(s):
        return float(np.interp(s, s_grid, v_lim))

    # scalar speed plan and arc-length positions
    w = min(scen.v_init, limit_at(0.0))
    s = 0.0
    s_list, w_list = [s], [w]
    for _ in range(n_epochs - 1):
        accel = rng.uniform(-scen.a_max, scen.a_max)
        w_next = min(max(w + accel * dt, scen.v_min), scen.v_max)
        w_next = min(w_next, limit_at(s + w * dt))
        s_next = min(s + 0.5 * (w + w_next) * dt, path.length)
        if s_next >= path.length:
            w_next = 0.0
        s, w = s_next, w_next
        s_list.append(s)
        w_list.append(w)

    pos = np.array([path.point(si) for si in s_list])
    states = []
    v = path.tangent(s_list[0]) * w_list[0]
    heading = math.atan2(v[1], v[0])
    for t in range(n_epochs):
        if t < n_epochs - 1:
            a = 2.0 * (pos[t + 1] - pos[t] - v * dt) / (dt * dt)
        else:
            a = np.zeros(2)
        a_mag = float(np.hypot(a[0], a[1]))
        if a_mag > scen.a_cap:
            raise ValueError(
                f"infeasible path: epoch {t} needs {a_mag:.1f} m/s^2 "
                f"(cap {scen.a_cap}); slow down or widen the turns")
        v_next = v + a * dt
        if np.hypot(*v) > 1e-9:
            heading = math.atan2(v[1], v[0])
        states.append(TargetState(x=float(pos[t][0]), y=float(pos[t][1]),
                                  vx=float(v[0]), vy=float(v[1]),
                                  ax=float(a[0]), ay=float(a[1]), heading=heading))
        v = v_next
    return Trajectory(states=tuple(states), delta_t=dt, path_s=np.array(s_list))


def export_trajectory_csv(traj: Trajectory, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "s", "x", "y", "vx", "vy", "ax", "ay", "heading"])
        for t, st in enumerate(traj.states):
            wr.writerow([t * traj.delta_t, f"{traj.path_s[t]:.3f}",
                         st.x, st.y, st.vx, st.vy, st.ax, st.ay, st.heading])
