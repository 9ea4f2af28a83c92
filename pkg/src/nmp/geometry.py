"""Path primitives: Fresnel integrals, Clothoid curves, bicycle kinematics and
space-time trajectories built from a (path, velocity profile) pair."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

DEFAULT_WHEELBASE = 2.8

STRAIGHT = "straight"
CIRCLE = "circle"
CLOTHOID = "clothoid"
PATH_KINDS = (STRAIGHT, CIRCLE, CLOTHOID)

_SERIES_LIMIT = 1.6
_SERIES_TERMS = 48
_CF_MAX_ITER = 300
_CF_EPS = 1e-16


def wrap_angle(theta):
    """Map angles to (-pi, pi]."""
    wrapped = np.mod(np.asarray(theta, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    wrapped = np.where(wrapped <= -np.pi, wrapped + 2.0 * np.pi, wrapped)
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class Pose2:
    x: float
    y: float
    heading: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "heading", wrap_angle(self.heading))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.heading])


@dataclass(frozen=True)
class SdvState:
    pose: Pose2
    velocity: float
    steering_angle: float = 0.0
    wheelbase: float = DEFAULT_WHEELBASE

    def __post_init__(self):
        if self.velocity < 0:
            raise ValueError(f"velocity must be >= 0, got {self.velocity}")
        if self.wheelbase <= 0:
            raise ValueError(f"wheelbase must be > 0, got {self.wheelbase}")

    @property
    def curvature(self) -> float:
        return curvature_from_steering(self.steering_angle, self.wheelbase)


@dataclass(frozen=True)
class PathSpec:
    kind: str
    scale_a: float = 0.0
    flipped: bool = False
    radius: float = 0.0
    start_arc_offset: float = 0.0

    def __post_init__(self):
        if self.kind not in PATH_KINDS:
            raise ValueError(f"unknown path kind {self.kind!r}")
        if self.kind == CLOTHOID:
            if not 6.0 <= self.scale_a <= 80.0:
                raise ValueError(f"clothoid scale must lie in [6, 80], got {self.scale_a}")
            if self.start_arc_offset < 0:
                raise ValueError("clothoid start_arc_offset must be >= 0")
        if self.kind == CIRCLE and self.radius == 0:
            raise ValueError("circle radius must be nonzero")


@dataclass(frozen=True)
class VelocityProfile:
    initial_velocity: float
    acceleration: float = 0.0

    def __post_init__(self):
        if not -5.0 <= self.acceleration <= 5.0:
            raise ValueError(f"acceleration must lie in [-5, 5], got {self.acceleration}")
        if self.initial_velocity < 0:
            raise ValueError("initial velocity must be >= 0")


@dataclass
class Trajectory:
    """T waypoints at times dt, 2*dt, ..., T*dt.

    ``xy`` is (T, 2), ``heading`` and ``speed`` are (T,).
    """

    xy: np.ndarray
    heading: np.ndarray
    speed: np.ndarray
    dt: float
    path: Optional[PathSpec] = None
    profile: Optional[VelocityProfile] = None
    out_of_bounds: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.xy = np.asarray(self.xy, dtype=float).reshape(-1, 2)
        self.heading = np.asarray(self.heading, dtype=float).reshape(-1)
        self.speed = np.asarray(self.speed, dtype=float).reshape(-1)
        if not (len(self.xy) == len(self.heading) == len(self.speed)):
            raise ValueError("trajectory arrays must share length T")

    def __len__(self) -> int:
        return len(self.xy)

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(1, len(self) + 1)

    @property
    def waypoints(self) -> list[tuple[Pose2, float]]:
        return [
            (Pose2(float(x), float(y), float(h)), float(v))
            for (x, y), h, v in zip(self.xy, self.heading, self.speed)
        ]

    def poses(self) -> np.ndarray:
        """(T, 3) array of x, y, heading."""
        return np.column_stack([self.xy, self.heading])


def fresnel(x):
    """Fresnel integrals C(x), S(x) with the pi*u^2/2 phase convention.

    Power series near the origin, a continued fraction for the complementary
    error function beyond |x| = 1.6. Accepts scalars or arrays.
    """
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)):
        raise ValueError("fresnel argument must be finite")
    ax = np.abs(arr)
    c = np.zeros_like(ax)
    s = np.zeros_like(ax)

    small = ax <= _SERIES_LIMIT
    if np.any(small):
        c[small], s[small] = _fresnel_series(ax[small])
    big = ~small
    if np.any(big):
        c[big], s[big] = _fresnel_continued_fraction(ax[big])

    sign = np.sign(arr)
    c, s = sign * c, sign * s
    if arr.ndim == 0:
        return float(c), float(s)
    return c, s


def _fresnel_series(ax: np.ndarray):
    # term_k = x * (pi x^2 / 2)^k / k! / (2k + 1); even k feed C, odd k feed S
    z = 0.5 * np.pi * ax * ax
    power = ax.copy()
    c = np.zeros_like(ax)
    s = np.zeros_like(ax)
    for k in range(_SERIES_TERMS):
        if k > 0:
            power = power * z / k
        term = power / (2 * k + 1)
        if k % 2 == 0:
            c += term if k % 4 == 0 else -term
        else:
            s += term if k % 4 == 1 else -term
    return c, s


def _fresnel_continued_fraction(ax: np.ndarray):
    pix2 = np.pi * ax * ax
    b = 1.0 - 1j * pix2
    cc = np.full(ax.shape, 1e300, dtype=complex)
    d = 1.0 / b
    h = d.copy()
    n = -1
    done = np.zeros(ax.shape, dtype=bool)
    for _ in range(_CF_MAX_ITER):
        n += 2
        a = -n * (n + 1.0)
        b = b + 4.0
        d = 1.0 / (a * d + b)
        cc = b + a / cc
        delta = cc * d
        delta = np.where(done, 1.0 + 0j, delta)
        h = h * delta
        done |= (np.abs(delta.real - 1.0) + np.abs(delta.imag)) < _CF_EPS
        if np.all(done):
            break
    h = (ax - 1j * ax) * h
    cs = (0.5 + 0.5j) * (1.0 - (np.cos(0.5 * pix2) + 1j * np.sin(0.5 * pix2)) * h)
    return cs.real, cs.imag


def curvature_from_steering(steering: float, wheelbase: float = DEFAULT_WHEELBASE) -> float:
    """Bicycle-model path curvature 2 tan(steering) / wheelbase."""
    if wheelbase <= 0:
        raise ValueError("wheelbase must be > 0")
    if abs(steering) >= math.pi / 2:
        raise ValueError(f"|steering| must be < pi/2, got {steering}")
    return 2.0 * math.tan(steering) / wheelbase


def steering_from_curvature(curvature: float, wheelbase: float = DEFAULT_WHEELBASE) -> float:
    return math.atan(0.5 * curvature * wheelbase)


def match_initial_curvature(
    spec: PathSpec, state: SdvState, max_offset: Optional[float] = None
) -> PathSpec:
    """Place the SDV on the Clothoid where the curve's curvature equals the
    SDV's current curvature.

    Returns a copy of ``spec`` with ``start_arc_offset`` set to
    |kappa0| a^2 / pi. A nonzero curvature decides the mirror flag: left turns
    use the canonical curve, right turns its mirror.
    """
    if spec.kind != CLOTHOID:
        raise ValueError("match_initial_curvature needs a clothoid spec")
    kappa0 = state.curvature
    offset = abs(kappa0) * spec.scale_a**2 / math.pi
    if max_offset is not None and offset > max_offset:
        raise ValueError(f"clothoid offset {offset:.2f} m exceeds budget {max_offset:.2f} m")
    flipped = spec.flipped if kappa0 == 0 else kappa0 < 0
    return PathSpec(CLOTHOID, scale_a=spec.scale_a, flipped=flipped, start_arc_offset=offset)


def clothoid_point(spec: PathSpec, start: Pose2, arc_length):
    """Pose(s) on the Clothoid at ``arc_length`` past the matched start point.

    Returns ``Pose2`` for scalar input, else an (n, 3) array.
    """
    if spec.kind != CLOTHOID:
        raise ValueError("clothoid_point needs a clothoid spec")
    xs, ys, hs = _clothoid_arrays(spec, start, np.asarray(arc_length, dtype=float))
    if np.ndim(arc_length) == 0:
        return Pose2(float(xs), float(ys), float(hs))
    return np.column_stack([np.atleast_1d(xs), np.atleast_1d(ys), np.atleast_1d(hs)])


def clothoid_curvature(spec: PathSpec, arc_length):
    """Signed curvature pi (xi + xi0) / a^2 at arc length past the start."""
    k = np.pi * (np.asarray(arc_length, dtype=float) + spec.start_arc_offset) / spec.scale_a**2
    return -k if spec.flipped else k


def _clothoid_arrays(spec: PathSpec, start: Pose2, arc: np.ndarray):
    a = spec.scale_a
    xi0 = spec.start_arc_offset
    c0, s0 = fresnel(xi0 / a)
    c1, s1 = fresnel((arc + xi0) / a)
    # canonical-frame displacement from the matched point
    dx = a * (np.asarray(c1) - c0)
    dy = a * (np.asarray(s1) - s0)
    tangent0 = 0.5 * math.pi * (xi0 / a) ** 2
    turn = 0.5 * np.pi * ((arc + xi0) ** 2 - xi0**2) / a**2
    if spec.flipped:
        dy = -dy
        tangent0 = -tangent0
        turn = -turn
    rot = start.heading - tangent0
    cr, sr = math.cos(rot), math.sin(rot)
    xs = start.x + cr * dx - sr * dy
    ys = start.y + sr * dx + cr * dy
    return xs, ys, wrap_angle(start.heading + turn)


def path_poses(spec: PathSpec, start: Pose2, arc) -> np.ndarray:
    """(n, 3) poses along any path kind at the given arc lengths."""
    arc = np.atleast_1d(np.asarray(arc, dtype=float))
    if spec.kind == STRAIGHT:
        ch, sh = math.cos(start.heading), math.sin(start.heading)
        return np.column_stack(
            [start.x + ch * arc, start.y + sh * arc, np.full_like(arc, start.heading)]
        )
    if spec.kind == CIRCLE:
        r = spec.radius
        turn = arc / r
        h = start.heading + turn
        # center sits at distance r along the left normal (negative r => right)
        xs = start.x + r * (np.sin(h) - math.sin(start.heading))
        ys = start.y - r * (np.cos(h) - math.cos(start.heading))
        return np.column_stack([xs, ys, wrap_angle(h)])
    xs, ys, hs = _clothoid_arrays(spec, start, arc)
    return np.column_stack([np.atleast_1d(xs), np.atleast_1d(ys), np.atleast_1d(hs)])


def profile_speed(profile: VelocityProfile, t):
    """Speed at time t with the no-reverse clamp."""
    t = np.asarray(t, dtype=float)
    return np.maximum(0.0, profile.initial_velocity + profile.acceleration * t)


def profile_arc_length(profile: VelocityProfile, t):
    """Distance travelled by time t: integral of max(0, v0 + a tau)."""
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 0):
        raise ValueError("t must be >= 0")
    v0, acc = profile.initial_velocity, profile.acceleration
    if acc < 0:
        t_stop = v0 / -acc
        te = np.minimum(t_arr, t_stop)
    else:
        te = t_arr
    dist = v0 * te + 0.5 * acc * te * te
    if np.ndim(t) == 0:
        return float(dist)
    return dist


def trajectory_poses_at(
    spec: PathSpec, profile: VelocityProfile, start: Pose2, times
) -> np.ndarray:
    """(n, 4) rows of x, y, heading, speed at arbitrary times."""
    times = np.atleast_1d(np.asarray(times, dtype=float))
    arc = profile_arc_length(profile, times)
    poses = path_poses(spec, start, arc)
    return np.column_stack([poses, profile_speed(profile, times)])


def build_trajectory(
    spec: PathSpec,
    profile: VelocityProfile,
    state: SdvState,
    T: int,
    dt: float,
    bound: Optional[Sequence[float]] = None,
) -> Trajectory:
    """Sample the space-time trajectory at t = dt, ..., T*dt.

    ``bound`` is (x_min, x_max, y_min, y_max); leaving it sets
    ``out_of_bounds`` on the result rather than failing.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    if dt <= 0:
        raise ValueError("dt must be > 0")
    rows = trajectory_poses_at(spec, profile, state.pose, dt * np.arange(1, T + 1))
    traj = Trajectory(rows[:, :2], rows[:, 2], rows[:, 3], dt, path=spec, profile=profile)
    if bound is not None:
        x0, x1, y0, y1 = bound
        xs, ys = traj.xy[:, 0], traj.xy[:, 1]
        traj.out_of_bounds = bool(np.any((xs < x0) | (xs >= x1) | (ys < y0) | (ys >= y1)))
    return traj
