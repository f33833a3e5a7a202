"""Vectorized fixed-step integration core shared by flow, boundary and measures.

States are stored as separate float64 arrays (x, y, vx, vy) over a leading
sample axis; direction angles are measured in the orthonormal frame of the
metric at the basepoint.  All public propagators accept scalars or arrays.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import ConvergenceError, ExcursionError
from .geometry import MetricModel, PoincareDisc

#: disc states with 1 - |z|^2 below this are numerically degenerate
_DISC_DEPTH_FLOOR = 1e-13


def guard_fn(model: MetricModel):
    """Per-model admissibility test used during stepping."""
    if isinstance(model, PoincareDisc):
        return lambda x, y: x * x + y * y < 1.0 - _DISC_DEPTH_FLOOR
    if model.kind == "polar":
        r_max = getattr(model.profile, "r_max", math.inf)
        guard = model.pole_guard
        return lambda x, y: (x > guard) & (x <= r_max)
    return model.in_domain


def velocity_from_angle(model, x, y, theta):
    """Chart velocity of the unit vector with frame angle theta."""
    c, s = np.cos(theta), np.sin(theta)
    if model.kind == "conformal":
        scale = np.exp(-model.logf(x, y))
        return scale * c, scale * s
    return c, s / model.warp(x)


def angle_from_velocity(model, x, y, vx, vy):
    """Frame angle of a chart velocity (need not be unit)."""
    if model.kind == "conformal":
        return np.arctan2(vy, vx)
    return np.arctan2(model.warp(x) * vy, vx)


def speed(model, x, y, vx, vy):
    """Metric norm of a chart velocity."""
    if model.kind == "conformal":
        return np.exp(model.logf(x, y)) * np.hypot(vx, vy)
    f = model.warp(x)
    return np.sqrt(vx * vx + f * f * vy * vy)


def _accel(model, x, y, vx, vy):
    if model.kind == "conformal":
        lx, ly = model.logf_grad(x, y)
        ax = -lx * (vx * vx - vy * vy) - 2.0 * ly * vx * vy
        ay = -ly * (vy * vy - vx * vx) - 2.0 * lx * vx * vy
        return ax, ay
    f = model.warp(x)
    fd = model.warp_d(x)
    ar = f * fd * vy * vy
    at = -2.0 * (fd / f) * vx * vy
    return ar, at


def rk4_step(model, x, y, vx, vy, dt):
    """One explicit 4th-order step of the geodesic equation. dt may be an array."""
    ax1, ay1 = _accel(model, x, y, vx, vy)
    h = dt / 2.0

    x2, y2 = x + h * vx, y + h * vy
    vx2, vy2 = vx + h * ax1, vy + h * ay1
    ax2, ay2 = _accel(model, x2, y2, vx2, vy2)

    x3, y3 = x + h * vx2, y + h * vy2
    vx3, vy3 = vx + h * ax2, vy + h * ay2
    ax3, ay3 = _accel(model, x3, y3, vx3, vy3)

    x4, y4 = x + dt * vx3, y + dt * vy3
    vx4, vy4 = vx + dt * ax3, vy + dt * ay3
    ax4, ay4 = _accel(model, x4, y4, vx4, vy4)

    sixth = dt / 6.0
    xn = x + sixth * (vx + 2 * vx2 + 2 * vx3 + vx4)
    yn = y + sixth * (vy + 2 * vy2 + 2 * vy3 + vy4)
    vxn = vx + sixth * (ax1 + 2 * ax2 + 2 * ax3 + ax4)
    vyn = vy + sixth * (ay1 + 2 * ay2 + 2 * ay3 + ay4)
    return xn, yn, vxn, vyn


def rk4_step_riccati(model, x, y, vx, vy, u, logj, dt):
    """Coupled step of the geodesic equation with Riccati channels.

    ``u`` has shape (channels, n) and obeys u' = -K - u^2 along the orbit;
    ``logj`` accumulates the integral of u.
    """

    def f(x_, y_, vx_, vy_, u_):
        ax, ay = _accel(model, x_, y_, vx_, vy_)
        K = model.curvature_xy(x_, y_)
        return ax, ay, -K - u_ * u_

    ax1, ay1, du1 = f(x, y, vx, vy, u)
    h = dt / 2.0

    x2, y2, vx2, vy2, u2 = x + h * vx, y + h * vy, vx + h * ax1, vy + h * ay1, u + h * du1
    ax2, ay2, du2 = f(x2, y2, vx2, vy2, u2)

    x3, y3, vx3, vy3, u3 = x + h * vx2, y + h * vy2, vx + h * ax2, vy + h * ay2, u + h * du2
    ax3, ay3, du3 = f(x3, y3, vx3, vy3, u3)

    x4, y4 = x + dt * vx3, y + dt * vy3
    vx4, vy4, u4 = vx + dt * ax3, vy + dt * ay3, u + dt * du3
    ax4, ay4, du4 = f(x4, y4, vx4, vy4, u4)

    sixth = dt / 6.0
    xn = x + sixth * (vx + 2 * vx2 + 2 * vx3 + vx4)
    yn = y + sixth * (vy + 2 * vy2 + 2 * vy3 + vy4)
    vxn = vx + sixth * (ax1 + 2 * ax2 + 2 * ax3 + ax4)
    vyn = vy + sixth * (ay1 + 2 * ay2 + 2 * ay3 + ay4)
    un = u + sixth * (du1 + 2 * du2 + 2 * du3 + du4)
    logjn = logj + sixth * (u + 2 * u2 + 2 * u3 + u4)
    return xn, yn, vxn, vyn, un, logjn


def renormalize(model, x, y, vx, vy):
    sp = speed(model, x, y, vx, vy)
    return vx / sp, vy / sp


def _split_steps(t_abs, dt):
    n = int(math.floor(t_abs / dt + 1e-12))
    rem = t_abs - n * dt
    if rem < 1e-12:
        rem = 0.0
    return n, rem


def propagate_flow(model, x, y, theta, t, dt=1e-3, renorm_every=16, guard="raise"):
    """Flow unit vectors for a common signed time t.

    guard: "raise" aborts on a domain excursion; "freeze" stops offending
    samples at their last valid state and returns a validity mask.
    """
    x = np.atleast_1d(np.asarray(x, dtype=float)).copy()
    y = np.atleast_1d(np.asarray(y, dtype=float)).copy()
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    vx, vy = velocity_from_angle(model, x, y, theta)
    ok = guard_fn(model)
    alive = np.ones(x.shape, dtype=bool)

    n, rem = _split_steps(abs(t), dt)
    h = math.copysign(dt, t) if t != 0 else dt
    for k in range(n + (1 if rem else 0)):
        step = h if k < n else math.copysign(rem, t)
        xn, yn, vxn, vyn = rk4_step(model, x, y, vx, vy, step)
        good = ok(xn, yn) & alive
        if not np.all(good[alive]):
            if guard == "raise":
                raise ExcursionError(
                    f"{int(np.sum(alive & ~good))} trajectories left the {model.name} domain",
                    last_state=(x, y, vx, vy),
                )
            alive = good
        upd = alive
        x[upd], y[upd] = xn[upd], yn[upd]
        vx[upd], vy[upd] = vxn[upd], vyn[upd]
        if (k + 1) % renorm_every == 0:
            vx[upd], vy[upd] = renormalize(model, x[upd], y[upd], vx[upd], vy[upd])
    th = angle_from_velocity(model, x, y, vx, vy)
    if guard == "freeze":
        return x, y, th, alive
    return x, y, th


def propagate_riccati(model, x, y, theta, t, u0, dt=1e-3, renorm_every=16):
    """Flow with Riccati channels for a common signed time t.

    ``u0`` is scalar, (n,), or (channels, n); returns (x, y, theta, u, logj)
    with u and logj of shape (channels, n).  ``logj`` is the signed integral
    of u along the orbit (so for t < 0 it approximates log of the backward
    Jacobian when u follows the matching invariant branch).
    """
    x = np.atleast_1d(np.asarray(x, dtype=float)).copy()
    y = np.atleast_1d(np.asarray(y, dtype=float)).copy()
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    vx, vy = velocity_from_angle(model, x, y, theta)
    u = np.asarray(u0, dtype=float)
    if u.ndim == 0:
        u = np.full((1, x.size), float(u))
    elif u.ndim == 1:
        u = np.broadcast_to(u, (1, x.size)).copy()
    else:
        u = u.copy()
    logj = np.zeros_like(u)
    ok = guard_fn(model)

    n, rem = _split_steps(abs(t), dt)
    h = math.copysign(dt, t) if t != 0 else dt
    for k in range(n + (1 if rem else 0)):
        step = h if k < n else math.copysign(rem, t)
        x, y, vx, vy, u, logj = rk4_step_riccati(model, x, y, vx, vy, u, logj, step)
        if (k + 1) % renorm_every == 0:
            if not np.all(ok(x, y)):
                raise ExcursionError(
                    f"riccati orbit left the {model.name} domain",
                    last_state=(x, y, vx, vy),
                )
            vx, vy = renormalize(model, x, y, vx, vy)
    th = angle_from_velocity(model, x, y, vx, vy)
    return x, y, th, u, logj


def propagate_flow_vartime(model, x, y, theta, times, dt=1e-3, renorm_every=16):
    """Flow samples for per-sample nonnegative times (guard freezes samples)."""
    x = np.atleast_1d(np.asarray(x, dtype=float)).copy()
    y = np.atleast_1d(np.asarray(y, dtype=float)).copy()
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    rem = np.broadcast_to(np.asarray(times, dtype=float), x.shape).astype(float).copy()
    vx, vy = velocity_from_angle(model, x, y, theta)
    ok = guard_fn(model)
    alive = np.ones(x.shape, dtype=bool)
    k = 0
    while True:
        act = alive & (rem > 0)
        if not np.any(act):
            break
        h = np.minimum(dt, rem[act])
        xn, yn, vxn, vyn = rk4_step(model, x[act], y[act], vx[act], vy[act], h)
        good = ok(xn, yn)
        ia = np.nonzero(act)[0]
        upd = ia[good]
        x[upd], y[upd] = xn[good], yn[good]
        vx[upd], vy[upd] = vxn[good], vyn[good]
        rem[upd] -= h[good]
        alive[ia[~good]] = False
        k += 1
        if k % renorm_every == 0:
            vx[upd], vy[upd] = renormalize(model, x[upd], y[upd], vx[upd], vy[upd])
    th = angle_from_velocity(model, x, y, vx, vy)
    return x, y, th, alive


def _frame_offset(model, x, y, qx, qy):
    """Offset to q expressed in the orthonormal frame at (x, y)."""
    if model.kind == "polar":
        dth = np.mod(qy - y + np.pi, 2 * np.pi) - np.pi
        f = model.warp(x)
        return qx - x, f * dth
    scale = np.exp(model.logf(x, y))
    return scale * (qx - x), scale * (qy - y)


def _fan_closest_approach(model, x0, y0, thetas, qx, qy, t_total, dt):
    """Track the closest approach to per-sample targets along a batch of rays.

    All arrays are flat and aligned; returns (perp, t_min, side, reached)
    where ``perp`` is the metric-weighted perpendicular miss at closest
    approach and ``side`` the sign of the lateral offset there.
    """
    x = np.asarray(x0, dtype=float).copy()
    y = np.asarray(y0, dtype=float).copy()
    vx, vy = velocity_from_angle(model, x, y, thetas)
    perp_best = np.full(x.shape, np.inf)
    t_best = np.zeros(x.shape)
    side = np.zeros(x.shape)
    ok = guard_fn(model)
    alive = np.ones(x.shape, dtype=bool)

    n_steps = int(math.ceil(t_total / dt))
    t = 0.0
    for k in range(n_steps):
        if not np.any(alive):
            break
        ox, oy = _frame_offset(model, x, y, qx, qy)
        if model.kind == "polar":
            fvx, fvy = vx, model.warp(x) * vy
        else:
            s = np.exp(model.logf(x, y))
            fvx, fvy = s * vx, s * vy
        v2 = np.maximum(fvx * fvx + fvy * fvy, 1e-300)
        tau = (ox * fvx + oy * fvy) / v2
        cross = fvx * oy - fvy * ox
        perp = np.abs(cross) / np.sqrt(v2)
        better = (perp < perp_best) & alive & (np.abs(tau) <= dt)
        perp_best[better] = perp[better]
        t_best[better] = t + tau[better]
        side[better] = np.sign(cross[better])
        xn, yn, vxn, vyn = rk4_step(model, x[alive], y[alive], vx[alive], vy[alive], dt)
        good = ok(xn, yn)
        ia = np.nonzero(alive)[0]
        upd = ia[good]
        x[upd], y[upd] = xn[good], yn[good]
        vx[upd], vy[upd] = vxn[good], vyn[good]
        alive[ia[~good]] = False
        t += dt
        if (k + 1) % 16 == 0:
            vx[upd], vy[upd] = renormalize(model, x[upd], y[upd], vx[upd], vy[upd])
    reached = np.isfinite(perp_best)
    return perp_best, t_best, side, reached


def _refine_hit(model, x0, y0, thetas, t_hit, qx, qy, dt, newton=2):
    """Newton-correct the hit time along the ray; return (time, residual, signed perp).

    Measuring at the refined point keeps the chart-linearization error of the
    offset at O(|offset|^2), so the signed perpendicular is accurate enough to
    drive a secant polish of the launch angle.
    """
    t_hit = np.maximum(np.asarray(t_hit, dtype=float), 0.0)
    res = perp = None
    for _ in range(newton + 1):
        x, y, th, alive = propagate_flow_vartime(model, x0, y0, thetas, t_hit, dt=dt)
        ox, oy = _frame_offset(model, x, y, qx, qy)
        res = np.hypot(ox, oy)
        res[~alive] = np.inf
        perp = np.cos(th) * oy - np.sin(th) * ox
        along = ox * np.cos(th) + oy * np.sin(th)
        t_hit = np.maximum(t_hit + np.where(alive, along, 0.0), 0.0)
    return t_hit, res, perp


def shoot_distance_batch(model, px, py, qx, qy, dt=1e-3, n_scan=64, tol=1e-8, max_iter=60):
    """Two-point distances by bisection on launch angles, batched over pairs.

    Scans ``n_scan`` directions per pair to bracket the connecting geodesic,
    bisects on the sign of the lateral offset at closest approach, and
    certifies the result by re-flowing to the hit time and measuring the
    metric residual (tolerance ``tol``).
    """
    px = np.atleast_1d(np.asarray(px, dtype=float))
    py = np.atleast_1d(np.asarray(py, dtype=float))
    qx = np.atleast_1d(np.asarray(qx, dtype=float))
    qy = np.atleast_1d(np.asarray(qy, dtype=float))
    m = px.size

    if model.kind == "polar":
        t_total = float(np.max(px + qx)) + 0.5
    else:
        ox, oy = _frame_offset(model, px, py, qx, qy)
        oqx, oqy = _frame_offset(model, qx, qy, px, py)
        chord = np.maximum(np.hypot(ox, oy), np.hypot(oqx, oqy))
        t_total = float(np.max(chord)) * 2.0 + 0.1

    # bracketing only needs a coarse step; the secant polish runs at dt
    dt_coarse = max(dt, 4e-3)

    thetas = np.linspace(0.0, 2 * np.pi, n_scan, endpoint=False)
    TH = np.repeat(thetas, m)
    X0 = np.tile(px, n_scan)
    Y0 = np.tile(py, n_scan)
    QX = np.tile(qx, n_scan)
    QY = np.tile(qy, n_scan)
    perp, t_min, side, reached = _fan_closest_approach(
        model, X0, Y0, TH, QX, QY, t_total, dt_coarse
    )
    perp = perp.reshape(n_scan, m)
    t_min = t_min.reshape(n_scan, m)
    side = side.reshape(n_scan, m)
    if not np.all(np.any(np.isfinite(perp), axis=0)):
        raise ConvergenceError("distance scan found no admissible trajectory", residual=None)

    j = np.argmin(np.where(np.isfinite(perp), perp, np.inf), axis=0)
    cols = np.arange(m)
    lo = thetas[(j - 1) % n_scan]
    hi = thetas[(j + 1) % n_scan]
    hi = np.where(hi < lo, hi + 2 * np.pi, hi)
    best_perp = perp[j, cols]
    best_t = t_min[j, cols]

    p_lo, _, side_lo, _ = _fan_closest_approach(model, px, py, lo, qx, qy, t_total, dt_coarse)
    if np.any(side_lo == 0):
        raise ConvergenceError("distance bracket edge has no defined side", residual=None)

    n_bisect = min(max_iter, 40)
    for _ in range(n_bisect):
        mid = 0.5 * (lo + hi)
        p_m, t_m, s_m, _ = _fan_closest_approach(model, px, py, mid, qx, qy, t_total, dt_coarse)
        better = p_m < best_perp
        best_perp = np.where(better, p_m, best_perp)
        best_t = np.where(better, t_m, best_t)
        same = s_m == side_lo
        lo = np.where(same, mid, lo)
        hi = np.where(same, hi, mid)
        if np.all(hi - lo < 1e-7):
            break

    # secant polish on the signed perpendicular, measured accurately at the
    # Newton-refined hit point (the coarse tracking above floors at O(dt^2))
    th0, th1 = lo, hi
    t_hit, res0, f0 = _refine_hit(model, px, py, th0, best_t, qx, qy, dt)
    t_hit, res1, f1 = _refine_hit(model, px, py, th1, t_hit, qx, qy, dt)
    residual = res1
    theta = th1
    for _ in range(max_iter - n_bisect if max_iter > n_bisect else 8):
        if np.all(residual < 0.5 * tol):
            break
        df = f1 - f0
        safe = np.abs(df) > 1e-300
        step = np.where(safe, f1 * (th1 - th0) / np.where(safe, df, 1.0), 0.0)
        th2 = th1 - step
        th0, f0 = th1, f1
        t_hit, residual, f1 = _refine_hit(model, px, py, th2, t_hit, qx, qy, dt)
        th1 = th2
        theta = th1
    if not np.all(residual < tol):
        finite = residual[np.isfinite(residual)]
        worst = float(np.max(finite)) if finite.size else math.inf
        raise ConvergenceError(
            f"distance shooting stalled at residual {worst:.3e}", residual=worst
        )
    return t_hit, theta


def shoot_distance(model, p, q, dt=1e-3, n_scan=64, tol=1e-8, max_iter=60):
    """Two-point distance between chart points p and q (single-pair wrapper)."""
    t, _ = shoot_distance_batch(
        model,
        np.array([p[0]]),
        np.array([p[1]]),
        np.array([q[0]]),
        np.array([q[1]]),
        dt=dt,
        n_scan=n_scan,
        tol=tol,
        max_iter=max_iter,
    )
    return float(t[0])
