"""Billiard flow in the exterior of the obstacles, restricted to simply
reflecting rays.

Rays move at unit speed inside the reference ball, reflect specularly at
obstacle boundaries, continue straight through diffractive tangencies, and
finish when they cross the boundary sphere outward. Orbits that graze into
the boundary (gliding) are detected and rejected, never integrated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .geometry import canonical_json

TANGENCY_THRESHOLD = 1e-7   # |<v, normal>| at or below this is a tangent encounter
REHIT_FACTOR = 1e-9         # advance after an event, in units of the ball radius
MARCH_DIVISIONS = 1024      # marching step = ball_radius / MARCH_DIVISIONS
GLIDING_ARC_FACTOR = 0.01   # same-obstacle tangencies closer than this * a reject the orbit
_TANGENT_DEAD_ZONE = 1e-5   # * a; residual grazing roots inside it are skipped, not events
_PENETRATION_PROBE = 1e-4   # * a; straight continuation probed here after a tangency


class RootPolishFailed(RuntimeError):
    """Boundary root bracketing did not converge."""


class NotScattered(RuntimeError):
    """Operation requires an exited trajectory."""


@dataclass
class PhasePoint:
    q: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        self.v = np.asarray(self.v, dtype=float)

    def unit_check(self):
        if abs(float(self.v @ self.v) - 1.0) > 1e-9:
            raise ValueError("direction must be a unit vector")


@dataclass
class Event:
    t: float
    x: np.ndarray
    obstacle: int
    type: str            # "transversal" | "tangent"
    v_in: np.ndarray
    v_out: np.ndarray


@dataclass
class Trajectory:
    entry: PhasePoint
    events: list
    status: str          # "exited" | "trapped" | "gliding_rejected"
    exit_state: PhasePoint | None
    total_time: float | None
    cutoff_reason: str | None = None
    segment_lengths: list = field(default_factory=list)


@dataclass
class Limits:
    n_max: int = 10000
    t_max: float | None = None       # defaults to 1000 * ball radius
    gliding_arc: float | None = None  # defaults to GLIDING_ARC_FACTOR * ball radius


def reflect(v, normal):
    """Specular reflection v' = v - 2 <v,n> n; requires an approaching ray."""
    v = np.asarray(v, dtype=float)
    n = np.asarray(normal, dtype=float)
    c = float(v @ n)
    if c >= 0.0:
        raise ValueError("reflect requires <v, normal> < 0 (approaching ray)")
    return v - 2.0 * c * n


def _ball_exit_time(q, v, a):
    b = float(q @ v)
    c0 = float(q @ q) - a * a
    disc = b * b - c0
    if disc <= 0.0:
        return 0.0
    return -b + math.sqrt(disc)


def _march_first_root(obs, q, v, t_lo, t_hi, step):
    """First sign change of the implicit value along the ray, bracketed on a
    marching grid clipped to the obstacle bounding sphere, then polished.

    Returns ("root", t), ("penetration", t) when the ray runs into the solid
    without a detectable free-to-solid crossing (a gliding start or a hop
    below the re-hit guard), or None.
    """
    bc, br = obs.bounding_center(), obs.bounding_radius()
    d = q - bc
    b = float(d @ v)
    c0 = float(d @ d) - br * br
    disc = b * b - c0
    if disc <= 0.0:
        return None
    sq = math.sqrt(disc)
    w0, w1 = max(t_lo, -b - sq), min(t_hi, -b + sq)
    if w1 <= w0:
        return None
    tol_pen = 1e-9 * max(1.0, step * MARCH_DIVISIONS)  # ~1e-9 * ball radius
    n_steps = max(2, int(math.ceil((w1 - w0) / step)) + 1)
    prev_t, prev_f = None, None
    lo, chunk = 0, 64  # grow the chunk so short segments stay cheap
    while lo < n_steps:
        hi = min(lo + chunk, n_steps)
        ts = w0 + (w1 - w0) * np.arange(lo, hi) / (n_steps - 1)
        fs = obs.implicit_batch(q[None, :] + ts[:, None] * v[None, :])
        if prev_t is not None:
            ts = np.concatenate([[prev_t], ts])
            fs = np.concatenate([[prev_f], fs])
        elif fs[0] <= 0.0:
            # started at or below the surface: penetration unless the value
            # recovers before dipping decisively into the solid
            deep = np.where(fs < -tol_pen)[0]
            free = np.where(fs > 0.0)[0]
            if deep.size and (not free.size or deep[0] < free[0]):
                return "penetration", float(ts[deep[0]])
        pos = fs[:-1] > 0.0
        neg = fs[1:] <= 0.0
        hits = np.where(pos & neg)[0]
        if hits.size:
            k = int(hits[0])
            return "root", _polish(obs, q, v, float(ts[k]), float(ts[k + 1]), step)
        prev_t, prev_f = float(ts[-1]), float(fs[-1])
        lo, chunk = hi, min(2 * chunk, 1024)
    return None


def _polish(obs, q, v, lo, hi, scale):
    """Safeguarded Newton/bisection on F(q + t v) inside a sign-change bracket."""
    tol_f = 1e-12 * max(1.0, scale * MARCH_DIVISIONS)  # ~1e-12 * ball radius
    t = 0.5 * (lo + hi)
    for _ in range(200):
        x = q + t * v
        f, grad = obs.implicit_grad(x)
        if abs(f) <= tol_f:
            return t
        if f > 0.0:
            lo = t
        else:
            hi = t
        if hi - lo <= 1e-15 * max(1.0, abs(hi)):
            return 0.5 * (lo + hi)
        g = float(grad @ v)
        t_newton = t - f / g if g != 0.0 else t
        t = t_newton if lo < t_newton < hi else 0.5 * (lo + hi)
    raise RootPolishFailed(f"no convergence in bracket [{lo}, {hi}]")


def _first_root(scene, q, v, t_min, cap):
    """Smallest boundary root over all obstacles in (t_min, cap].

    Returns (kind, t, obstacle index, point) with kind "root" or
    "penetration", or None."""
    step = scene.ball_radius / MARCH_DIVISIONS
    best = None
    for idx, obs in enumerate(scene.obstacles):
        limit = cap if best is None else best[1]
        roots = obs.ray_roots(q, v)
        if roots is not None:
            t = next((r for r in roots if t_min < r <= limit), None)
            found = None if t is None else ("root", t)
        else:
            found = _march_first_root(obs, q, v, t_min, limit, step)
            if found is not None and not (t_min < found[1] <= limit):
                found = None
        if found is not None and (best is None or found[1] < best[1]):
            best = (found[0], found[1], idx)
    if best is None:
        return None
    kind, t, idx = best
    return kind, t, idx, q + t * v


def first_hit(scene, phase_point: PhasePoint, max_advance: float):
    """First obstacle intersection of the ray, or None if the ray leaves the
    ball (or reaches max_advance) first. Returns (t, obstacle index, point).

    Raises RootPolishFailed if the ray starts inside an obstacle (the
    precondition requires a free or outgoing phase point)."""
    q, v = phase_point.q, phase_point.v
    a = scene.ball_radius
    t_min = REHIT_FACTOR * a
    cap = min(max_advance, _ball_exit_time(q, v, a))
    if cap <= t_min:
        return None
    res = _first_root(scene, q, v, t_min, cap)
    if res is None:
        return None
    kind, t, idx, x = res
    if kind == "penetration":
        raise RootPolishFailed("ray runs inside an obstacle (bad start point)")
    return t, idx, x


def _normal_at(scene, idx, x):
    obs = scene.obstacles[idx]
    g = obs.gradient(x)
    gn = float(np.linalg.norm(g))
    if gn < 1e-14:
        raise geometry.SingularGradient(f"singular normal on obstacle {idx}")
    return g / gn


def trace_phase(scene, q, v, limits: Limits | None = None) -> Trajectory:
    """Trace from an arbitrary phase point inside the ball (no entry check)."""
    limits = limits or Limits()
    a = scene.ball_radius
    t_max = limits.t_max if limits.t_max is not None else 1000.0 * a
    gliding_arc = limits.gliding_arc if limits.gliding_arc is not None else GLIDING_ARC_FACTOR * a
    guard = REHIT_FACTOR * a
    dead_zone = _TANGENT_DEAD_ZONE * a

    q = np.asarray(q, dtype=float)
    v = np.asarray(v, dtype=float)
    v = v / np.linalg.norm(v)
    entry = PhasePoint(q.copy(), v.copy())

    events: list[Event] = []
    seg_lengths: list[float] = []
    total = 0.0
    last_tangent = None  # (obstacle index, point)

    while True:
        if len(events) >= limits.n_max:
            return Trajectory(entry, events, "trapped", None, None, "max_reflections", seg_lengths)
        if total > t_max:
            return Trajectory(entry, events, "trapped", None, None, "max_time", seg_lengths)

        t_ball = _ball_exit_time(q, v, a)
        t_min = guard
        hit = None
        for _ in range(32):
            res = _first_root(scene, q, v, t_min, t_ball)
            if res is None:
                break
            kind, t_hit, idx, x_hit = res
            if kind == "penetration":
                return Trajectory(entry, events, "gliding_rejected", None, None,
                                  "boundary_penetration", seg_lengths)
            normal = _normal_at(scene, idx, x_hit)
            cos_in = float(v @ normal)
            if abs(cos_in) <= TANGENCY_THRESHOLD:
                if (
                    last_tangent is not None
                    and last_tangent[0] == idx
                    and float(np.linalg.norm(x_hit - last_tangent[1])) < dead_zone
                ):
                    t_min = t_hit + guard  # residue of the same grazing chord
                    continue
                hit = (t_hit, idx, x_hit, normal, "tangent")
            elif cos_in < 0.0:
                hit = (t_hit, idx, x_hit, normal, "transversal")
            else:
                t_min = t_hit + guard  # outgoing root (e.g. far side of a chord)
                continue
            break
        else:
            raise RootPolishFailed("root skipping did not terminate")

        if hit is None:
            seg_lengths.append(t_ball)
            total += t_ball
            exit_q = q + t_ball * v
            return Trajectory(entry, events, "exited", PhasePoint(exit_q, v.copy()), total,
                              None, seg_lengths)

        t_hit, idx, x_hit, normal, etype = hit
        if etype == "transversal":
            v_out = reflect(v, normal)
        else:
            v_out = v.copy()
        events.append(Event(total + t_hit, x_hit, idx, etype, v.copy(), v_out.copy()))
        seg_lengths.append(t_hit)
        total += t_hit

        if etype == "tangent":
            probe = _PENETRATION_PROBE * a
            f_probe = scene.obstacles[idx].implicit(x_hit + probe * v_out)
            if f_probe < -1e-12 * a:
                return Trajectory(entry, events, "gliding_rejected", None, None,
                                  "boundary_penetration", seg_lengths)
            if (
                last_tangent is not None
                and last_tangent[0] == idx
                and float(np.linalg.norm(x_hit - last_tangent[1])) < gliding_arc
            ):
                return Trajectory(entry, events, "gliding_rejected", None, None,
                                  "tangency_chain", seg_lengths)
            last_tangent = (idx, x_hit.copy())

        q, v = x_hit, v_out


def trace(scene, entry: PhasePoint, limits: Limits | None = None) -> Trajectory:
    """Trace an entry phase point: position on the boundary sphere, direction
    with non-negative inward component."""
    entry.unit_check()
    a = scene.ball_radius
    if abs(float(np.linalg.norm(entry.q)) - a) > 1e-6 * a:
        raise ValueError("entry point must lie on the boundary sphere")
    inward = -float(entry.q @ entry.v) / a
    if inward < -1e-9:
        raise ValueError("entry direction points outward")
    return trace_phase(scene, entry.q, entry.v, limits)


def travelling_time(scene, entry: PhasePoint, limits: Limits | None = None):
    """Travelling time of an entry: ("exited", t) with the time to leave the
    ball, or ("trapped", None) / ("gliding_rejected", None).

    Entries tangent to the boundary sphere report time zero immediately."""
    inward = -float(entry.q @ entry.v) / scene.ball_radius
    if abs(inward) <= 1e-12:
        return "exited", 0.0
    traj = trace(scene, entry, limits)
    if traj.status == "exited":
        return "exited", traj.total_time
    return traj.status, None


def omega_theta(trajectory: Trajectory):
    """(incoming direction, outgoing direction) of an exited trajectory."""
    if trajectory.status != "exited":
        raise NotScattered(f"trajectory status is {trajectory.status}")
    return trajectory.entry.v.copy(), trajectory.exit_state.v.copy()


def sojourn_time(scene, trajectory: Trajectory) -> float:
    """Sojourn time: length between the support planes tangent to the sphere
    and orthogonal to the incoming/outgoing directions, minus one diameter."""
    if trajectory.status != "exited":
        raise NotScattered(f"trajectory status is {trajectory.status}")
    omega, theta = omega_theta(trajectory)
    q0 = trajectory.entry.q
    q1 = trajectory.exit_state.q
    return trajectory.total_time + float(q0 @ omega) - float(q1 @ theta)


def reflection_count(trajectory: Trajectory) -> int:
    if trajectory.status != "exited":
        raise NotScattered(f"trajectory status is {trajectory.status}")
    return len(trajectory.events)


def state_at(trajectory: Trajectory, t: float):
    """Phase state (position, direction) at time t along the trajectory;
    continues straight past the exit."""
    if t < 0:
        raise ValueError("time must be non-negative")
    q, v, t0 = trajectory.entry.q, trajectory.entry.v, 0.0
    for ev in trajectory.events:
        if t <= ev.t:
            return q + (t - t0) * v, v.copy()
        q, v, t0 = ev.x, ev.v_out, ev.t
    if trajectory.status != "exited" and t > t0:
        raise ValueError(f"time {t} beyond the truncated trajectory")
    return q + (t - t0) * v, v.copy()


def trajectory_jsonl(trajectory: Trajectory, header_extra: dict | None = None) -> str:
    """JSONL dump: one header line, then one line per event."""
    header = {
        "entry_q": list(trajectory.entry.q),
        "entry_v": list(trajectory.entry.v),
        "status": trajectory.status,
        "total_time": trajectory.total_time,
        "cutoff_reason": trajectory.cutoff_reason,
        "n_events": len(trajectory.events),
    }
    if header_extra:
        header.update(header_extra)
    lines = [canonical_json(header)]
    for ev in trajectory.events:
        lines.append(
            canonical_json(
                {
                    "t": ev.t,
                    "x": list(ev.x),
                    "obstacle": ev.obstacle,
                    "type": ev.type,
                    "v_in": list(ev.v_in),
                    "v_out": list(ev.v_out),
                }
            )
        )
    return "\n".join(lines) + "\n"
