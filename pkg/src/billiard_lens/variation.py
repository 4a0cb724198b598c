"""Linearized dynamics along trajectories.

A JacobiFrame carries the transverse position block A and direction block B
of a family of variations, expressed in an orthonormal basis orthogonal to
the current ray direction. Free flight maps (A, B) to (A + tB, B); a
transversal reflection mirrors the basis and adds the curvature term
C = 2 cos(phi) * dy^T S dy built from the boundary shape operator, where dy
projects transverse offsets onto the tangent plane along the ray. Both maps
are linear symplectic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import flow, geometry
from .flow import TANGENCY_THRESHOLD
from .geometry import tangent_basis


class TangentIncidence(RuntimeError):
    """Reflection transfer is undefined at (near-)tangent incidence."""


class TangentOnPath(RuntimeError):
    """Differentials are only propagated across transversal events."""


class ItineraryChanged(RuntimeError):
    """A finite-difference probe changed the event sequence."""


class IndexOutOfRange(IndexError):
    pass


@dataclass
class JacobiFrame:
    A: np.ndarray          # (n-1, n-1) transverse position variation
    B: np.ndarray          # (n-1, n-1) transverse direction variation
    basis: np.ndarray      # (n, n-1) orthonormal columns orthogonal to direction
    direction: np.ndarray  # (n,)


@dataclass
class Incidence:
    v_in: np.ndarray
    normal: np.ndarray
    shape_ambient: np.ndarray  # (n, n) symmetric, annihilates the normal

    @property
    def cos_incidence(self) -> float:
        return -float(self.v_in @ self.normal)


def seed_frame(direction, A0, B0) -> JacobiFrame:
    v = np.asarray(direction, dtype=float)
    m = v.shape[0] - 1
    A = np.asarray(A0, dtype=float) * np.eye(m) if np.isscalar(A0) else np.array(A0, dtype=float)
    B = np.asarray(B0, dtype=float) * np.eye(m) if np.isscalar(B0) else np.array(B0, dtype=float)
    return JacobiFrame(A, B, tangent_basis(v), v.copy())


def propagate_free(frame: JacobiFrame, t: float) -> JacobiFrame:
    """Flat free flight for time t >= 0: positions pick up t * direction variation."""
    if t < 0:
        raise ValueError("free flight time must be non-negative")
    return JacobiFrame(frame.A + t * frame.B, frame.B.copy(), frame.basis.copy(),
                       frame.direction.copy())


def _reflect_basis(basis: np.ndarray, normal: np.ndarray):
    """Mirror the transverse basis and re-orthonormalize; returns the new
    basis and the (tiny) change-of-coordinates matrix."""
    mirrored = basis - 2.0 * np.outer(normal, normal @ basis)
    Q, R = np.linalg.qr(mirrored)
    signs = np.where(np.diag(R) < 0.0, -1.0, 1.0)
    fresh = Q * signs
    return fresh, fresh.T @ mirrored


def propagate_reflection(frame: JacobiFrame, incidence: Incidence) -> JacobiFrame:
    """Reflection transfer of the transverse variations at a transversal event."""
    v = incidence.v_in
    n = incidence.normal
    cos_phi = incidence.cos_incidence
    if cos_phi <= TANGENCY_THRESHOLD:
        raise TangentIncidence(f"cos(incidence) = {cos_phi:g}")
    E = frame.basis
    coef = (n @ E) / float(v @ n)
    dy = E - np.outer(v, coef)
    C = 2.0 * cos_phi * (dy.T @ incidence.shape_ambient @ dy)
    C = 0.5 * (C + C.T)
    v_out = v - 2.0 * float(v @ n) * n
    new_basis, M = _reflect_basis(E, n)
    return JacobiFrame(M @ frame.A, M @ (frame.B + C @ frame.A), new_basis, v_out)


def symplectic_pairing(f1: JacobiFrame, f2: JacobiFrame) -> np.ndarray:
    """A1^T B2 - B1^T A2; conserved by free flight and reflection."""
    return f1.A.T @ f2.B - f1.B.T @ f2.A


def _incidence_at(scene, event) -> Incidence:
    sf = geometry.surface_frame(scene.obstacles[event.obstacle], event.x)
    return Incidence(event.v_in, sf.normal, sf.shape_ambient())


def _frames_along(scene, trajectory, t: float, seeds):
    """Propagate seed frames from the entry to time t through the recorded
    transversal events. Raises TangentOnPath on a tangent event before t."""
    frames = [seed_frame(trajectory.entry.v, A0, B0) for A0, B0 in seeds]
    t_prev = 0.0
    for ev in trajectory.events:
        if ev.t >= t:
            break
        if ev.type != "transversal":
            raise TangentOnPath(f"tangent event at t = {ev.t:g}")
        inc = _incidence_at(scene, ev)
        frames = [propagate_reflection(propagate_free(f, ev.t - t_prev), inc) for f in frames]
        t_prev = ev.t
    return [propagate_free(f, t - t_prev) for f in frames]


def flow_differentials(scene, entry: flow.PhasePoint, t: float, trajectory=None):
    """Transverse blocks of the flow differential at time t.

    Returns (position-by-direction, direction-by-position): the position
    response to a unit direction perturbation (seed A=0, B=I) and the
    direction response to a unit transverse position perturbation (seed
    A=I, B=0), both (n-1) x (n-1) in the propagated transverse basis.
    """
    if trajectory is None:
        trajectory = flow.trace(scene, entry)
    if trajectory.status != "exited" and trajectory.events and t > trajectory.events[-1].t:
        raise ValueError("time t beyond a truncated trajectory")
    f_dir, f_pos = _frames_along(scene, trajectory, t, [(0.0, 1.0), (1.0, 0.0)])
    return f_dir.A.copy(), f_pos.B.copy()


def transport_basis(scene, trajectory, t: float):
    """Transverse basis and direction at time t, mirrored through the same
    chain used by the frame propagation."""
    basis = tangent_basis(trajectory.entry.v)
    v = trajectory.entry.v.copy()
    for ev in trajectory.events:
        if ev.t >= t:
            break
        if ev.type != "transversal":
            raise TangentOnPath(f"tangent event at t = {ev.t:g}")
        normal = _incidence_at(scene, ev).normal
        basis, _ = _reflect_basis(basis, normal)
        v = ev.v_out.copy()
    return basis, v


def _itinerary(trajectory, t: float):
    return tuple((ev.obstacle, ev.type) for ev in trajectory.events if ev.t < t)


def fd_flow_jacobian(scene, entry: flow.PhasePoint, t: float, h: float):
    """Central finite differences of the traced flow: the independent oracle
    for flow_differentials. Raises ItineraryChanged if a probe orbit gains or
    loses an event before time t."""
    central = flow.trace(scene, entry)
    signature = _itinerary(central, t)
    basis_t, _ = transport_basis(scene, central, t)
    basis_0 = tangent_basis(entry.v)
    m = entry.q.shape[0] - 1
    pos_block = np.zeros((m, m))
    dir_block = np.zeros((m, m))
    for i in range(m):
        e = basis_0[:, i]
        # direction perturbation -> position response
        states = []
        for sign in (+1.0, -1.0):
            v = np.cos(h) * entry.v + np.sin(h) * sign * e
            traj = flow.trace_phase(scene, entry.q, v)
            if _itinerary(traj, t) != signature:
                raise ItineraryChanged(f"direction probe {i} changed the event list")
            states.append(flow.state_at(traj, t))
        pos_block[:, i] = basis_t.T @ (states[0][0] - states[1][0]) / (2.0 * h)
        # position perturbation -> direction response
        states = []
        for sign in (+1.0, -1.0):
            traj = flow.trace_phase(scene, entry.q + sign * h * e, entry.v)
            if _itinerary(traj, t) != signature:
                raise ItineraryChanged(f"position probe {i} changed the event list")
            states.append(flow.state_at(traj, t))
        dir_block[:, i] = basis_t.T @ (states[0][1] - states[1][1]) / (2.0 * h)
    return pos_block, dir_block


@dataclass
class RankReport:
    matrix: np.ndarray
    singular_values: np.ndarray  # descending
    rank: int
    tolerance: float

    def to_dict(self):
        return {
            "singular_values": [float(s) for s in self.singular_values],
            "rank": self.rank,
            "tolerance": self.tolerance,
        }


def rank_report(matrix: np.ndarray, tolerance: float, floor: float = 0.0) -> RankReport:
    """Singular values and rank at tolerance * max(largest value, floor).

    The floor supplies an absolute scale so that a numerically-zero block
    still reads as rank deficient; with floor 0 the test is purely relative.
    """
    sv = np.linalg.svd(matrix, compute_uv=False)
    sv = np.sort(sv)[::-1]
    smax = float(sv[0]) if sv.size else 0.0
    threshold = tolerance * max(smax, floor)
    rank = int(np.count_nonzero(sv > threshold)) if threshold > 0 else int(np.count_nonzero(sv > 0))
    return RankReport(np.array(matrix), sv, rank, tolerance)


@dataclass
class RegularityResult:
    position_by_direction: RankReport
    direction_by_position: RankReport
    regular: bool
    t: float

    def to_dict(self):
        return {
            "position_by_direction": self.position_by_direction.to_dict(),
            "direction_by_position": self.direction_by_position.to_dict(),
            "regular": self.regular,
            "t": self.t,
        }


def regularity_test(scene, entry: flow.PhasePoint, t: float | None = None,
                    tolerance: float = 1e-6) -> RegularityResult:
    """Rank reports of both flow differentials at time t (default: exit time
    plus one ball radius). A trajectory that meets the boundary is regular
    when both ranks equal the transverse dimension n-1; a free ray never
    reflects, its direction response to position offsets is identically
    zero, and it counts as regular vacuously."""
    trajectory = flow.trace(scene, entry)
    if t is None:
        if trajectory.status != "exited":
            raise ValueError(f"cannot pick default t: trajectory is {trajectory.status}")
        t = trajectory.total_time + scene.ball_radius
    pos_block, dir_block = flow_differentials(scene, entry, t, trajectory)
    m = entry.q.shape[0] - 1
    rep_pos = rank_report(pos_block, tolerance, floor=abs(t))
    rep_dir = rank_report(dir_block, tolerance, floor=abs(t))
    free = not any(ev.t < t for ev in trajectory.events)
    regular = True if free else (rep_pos.rank == m and rep_dir.rank == m)
    return RegularityResult(rep_pos, rep_dir, regular, t)


@dataclass
class ConjugateResult:
    conjugate: bool
    smallest_singular_value: float
    singular_values: np.ndarray
    tolerance: float

    def to_dict(self):
        return {
            "conjugate": self.conjugate,
            "smallest_singular_value": self.smallest_singular_value,
            "singular_values": [float(s) for s in self.singular_values],
            "tolerance": self.tolerance,
        }


def conjugate_test(scene, trajectory, i: int, j: int, tolerance: float = 1e-4) -> ConjugateResult:
    """Conjugacy of two boundary reflection points along a trajectory.

    Builds the differential of the map sending a direction perturbation just
    after event i to the boundary arrival point near event j (projected onto
    the tangent plane along the ray) and declares the pair conjugate when the
    smallest singular value drops below tolerance times the larger of the
    largest singular value and the flight span between the events (the span
    is the natural magnitude of the map, so a fully collapsed 1x1 block in
    the plane still registers)."""
    events = trajectory.events
    if not (0 <= i < j < len(events)):
        raise IndexOutOfRange(f"need 0 <= i < j < {len(events)}, got ({i}, {j})")
    if events[i].type != "transversal" or events[j].type != "transversal":
        raise TangentIncidence("conjugate_test endpoints must be transversal events")
    frame = seed_frame(events[i].v_out, 0.0, 1.0)
    t_prev = events[i].t
    for k in range(i + 1, j):
        ev = events[k]
        if ev.type != "transversal":
            raise TangentIncidence(f"tangent event between indices {i} and {j}")
        frame = propagate_reflection(propagate_free(frame, ev.t - t_prev), _incidence_at(scene, ev))
        t_prev = ev.t
    frame = propagate_free(frame, events[j].t - t_prev)

    arrival = events[j]
    normal = _incidence_at(scene, arrival).normal
    v = arrival.v_in
    cos_j = -float(v @ normal)
    if cos_j <= TANGENCY_THRESHOLD:
        raise TangentIncidence("tangent incidence at the arrival event")
    ambient = frame.basis @ frame.A
    coef = (normal @ ambient) / float(v @ normal)
    onto_boundary = ambient - np.outer(v, coef)
    T = tangent_basis(normal)
    dG = T.T @ onto_boundary
    sv = np.sort(np.linalg.svd(dG, compute_uv=False))[::-1]
    smax = float(sv[0]) if sv.size else 0.0
    smin = float(sv[-1]) if sv.size else 0.0
    span = events[j].t - events[i].t
    conjugate = smin <= tolerance * max(smax, span)
    return ConjugateResult(conjugate, smin, sv, tolerance)
