"""Numerical kernels for the contact simulator and the trajectory optimizer.

Everything here operates on flat numpy arrays so the hot loops can be
jitted by numba; the public modules (physics, manipulator, ilqr, ...) wrap
these functions with friendly value types.  All functions are deterministic:
fixed iteration order, no RNG, no threading.

Conventions
-----------
Bodies are indexed 0..B-1 with residents first; the gripped object, when
present, is always the last row.  Per-body arrays:

    pose (B, 4)  x, y, z, yaw          vel (B, 4)  vx, vy, vz, yaw rate
    gtypes (B,)  GT_CYL | GT_BOX       dims (B, 3) (r, h, -) | (hx, hy, hz)
    rc (B,)      circumscribed horizontal radius
    hh (B,)      vertical half extent
    mass, iyaw (B,)

Contact rows (CON_COLS wide): ia, ib, nx, ny, nz, depth, px, py, pz,
fx, fy, fz with the normal pointing a -> b and the stored force acting on b.
Negative body codes label statics: FLOOR, WALL_X0, WALL_X1, WALL_Y0, WALL_Y1.

Contact parameter array cp: [stiffness, damping, friction_mu, smoothing_eps,
linear_drag, yaw_drag, tangent_vel_eps, body_speed_cap].

State vector layout (n = 8 + 8*n_res + 2), the single source of truth for
all Jacobian indexing:

    x[0:4]  q      x[4:8]  qdot
    x[8+8*i : 16+8*i]  resident i  (x, y, z, yaw, vx, vy, vz, yaw rate)
    x[-2:]  attachment tilt
"""

import math

import numpy as np

from ._jit import njit

GT_CYL = 0
GT_BOX = 1

FLOOR = -1
WALL_X0 = -2
WALL_X1 = -3
WALL_Y0 = -4
WALL_Y1 = -5

CON_COLS = 12
MAX_CONTACTS = 128

# cp indices
CP_STIFF = 0
CP_DAMP = 1
CP_MU = 2
CP_EPS = 3
CP_DRAG = 4
CP_YAW_DRAG = 5
CP_VT_EPS = 6
CP_VCAP = 7

# attachment parameter array ap: [tilt_stiffness, tilt_damping, detach_angle]
AP_STIFF = 0
AP_DAMP = 1
AP_DETACH = 2


@njit
def smooth_ramp(d, eps):
    """C1 penetration smoothing: 0 at 0 with zero slope, identity past eps."""
    if d <= 0.0:
        return 0.0
    if d >= eps:
        return d
    u = d / eps
    return eps * u * u * (2.0 - u)


@njit
def circumradius(gt, d0, d1):
    if gt == GT_CYL:
        return d0
    return math.sqrt(d0 * d0 + d1 * d1)


@njit
def half_height(gt, d1, d2):
    if gt == GT_CYL:
        return 0.5 * d1
    return d2


@njit
def tilt_axis(t1, t2):
    """Unit axis from pump tip to object center for tilt (t1, t2).

    Axis-angle style: tilt direction (t1, t2)/|t|, magnitude |t|, so the
    angle between the object z-axis and world z is exactly |t|.
    """
    s = math.sqrt(t1 * t1 + t2 * t2)
    if s < 1e-12:
        return t1, t2, -1.0
    f = math.sin(s) / s
    return f * t1, f * t2, -math.cos(s)


@njit
def gripped_center(q0, q1, q2, t1, t2, tip_off):
    dx, dy, dz = tilt_axis(t1, t2)
    return q0 + tip_off * dx, q1 + tip_off * dy, q2 + tip_off * dz


@njit
def _cyl_cyl(ax, ay, az, ra, ha, bx, by, bz, rb, hb):
    dx = bx - ax
    dy = by - ay
    rsum = ra + rb
    d2 = dx * dx + dy * dy
    if d2 >= rsum * rsum:
        return False, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0
    lo = max(az - ha, bz - hb)
    hi = min(az + ha, bz + hb)
    v_ov = hi - lo
    if v_ov <= 0.0:
        return False, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0
    d = math.sqrt(d2)
    h_pen = rsum - d
    if d > 1e-12:
        nhx = dx / d
        nhy = dy / d
    else:
        nhx = 1.0
        nhy = 0.0
    if h_pen <= v_ov:
        t = ra - 0.5 * h_pen
        return True, nhx, nhy, 0.0, h_pen, ax + nhx * t, ay + nhy * t, 0.5 * (lo + hi)
    nz = 1.0 if bz >= az else -1.0
    w = ra / rsum
    return True, 0.0, 0.0, nz, v_ov, ax + dx * w, ay + dy * w, 0.5 * (lo + hi)


@njit
def _cyl_box(ax, ay, az, r, ha, bx, by, bz, hx, hy, hb, byaw):
    """Cylinder a against box b; normal points a -> b."""
    c = math.cos(byaw)
    s = math.sin(byaw)
    rx = ax - bx
    ry = ay - by
    lx = rx * c + ry * s
    ly = -rx * s + ry * c
    qx = min(max(lx, -hx), hx)
    qy = min(max(ly, -hy), hy)
    inside = abs(lx) <= hx and abs(ly) <= hy
    if inside:
        fx = hx - abs(lx)
        fy = hy - abs(ly)
        if fx < fy:
            h_pen = r + fx
            nlx = -1.0 if lx >= 0.0 else 1.0
            nly = 0.0
        else:
            h_pen = r + fy
            nlx = 0.0
            nly = -1.0 if ly >= 0.0 else 1.0
        pmx = lx
        pmy = ly
    else:
        ddx = lx - qx
        ddy = ly - qy
        dd = math.sqrt(ddx * ddx + ddy * ddy)
        h_pen = r - dd
        if h_pen <= 0.0:
            return False, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0
        nlx = -ddx / dd
        nly = -ddy / dd
        pmx = 0.5 * (qx + lx + r * nlx)
        pmy = 0.5 * (qy + ly + r * nly)
    lo = max(az - ha, bz - hb)
    hi = min(az + ha, bz + hb)
    v_ov = hi - lo
    if v_ov <= 0.0:
        return False, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0
    px = bx + pmx * c - pmy * s
    py = by + pmx * s + pmy * c
    if h_pen <= v_ov:
        nwx = nlx * c - nly * s
        nwy = nlx * s + nly * c
        return True, nwx, nwy, 0.0, h_pen, px, py, 0.5 * (lo + hi)
    nz = 1.0 if bz >= az else -1.0
    return True, 0.0, 0.0, nz, v_ov, px, py, 0.5 * (lo + hi)


@njit
def _box_box(ax, ay, az, hxa, hya, ha, ayaw, bx, by, bz, hxb, hyb, hb, byaw):
    ca = math.cos(ayaw)
    sa = math.sin(ayaw)
    cb = math.cos(byaw)
    sb = math.sin(byaw)
    dx = bx - ax
    dy = by - ay
    best = 1e30
    bnx = 0.0
    bny = 0.0
    for axis in range(4):
        if axis == 0:
            ux = ca
            uy = sa
        elif axis == 1:
            ux = -sa
            uy = ca
        elif axis == 2:
            ux = cb
            uy = sb
        else:
            ux = -sb
            uy = cb
        exta = hxa * abs(ux * ca + uy * sa) + hya * abs(-ux * sa + uy * ca)
        extb = hxb * abs(ux * cb + uy * sb) + hyb * abs(-ux * sb + uy * cb)
        sproj = dx * ux + dy * uy
        ov = exta + extb - abs(sproj)
        if ov <= 0.0:
            return False, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0
        if ov < best:
            best = ov
            if sproj >= 0.0:
                bnx = ux
                bny = uy
            else:
                bnx = -ux
                bny = -uy
    lo = max(az - ha, bz - hb)
    hi = min(az + ha, bz + hb)
    v_ov = hi - lo
    if v_ov <= 0.0:
        return False, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0
    if best <= v_ov:
        # support corner of b against the normal and of a along it
        sxa = 1.0 if (bnx * ca + bny * sa) >= 0.0 else -1.0
        sya = 1.0 if (-bnx * sa + bny * ca) >= 0.0 else -1.0
        cax = ax + sxa * hxa * ca - sya * hya * sa
        cay = ay + sxa * hxa * sa + sya * hya * ca
        sxb = 1.0 if (bnx * cb + bny * sb) >= 0.0 else -1.0
        syb = 1.0 if (-bnx * sb + bny * cb) >= 0.0 else -1.0
        cbx = bx - sxb * hxb * cb + syb * hyb * sb
        cby = by - sxb * hxb * sb - syb * hyb * cb
        return True, bnx, bny, 0.0, best, 0.5 * (cax + cbx), 0.5 * (cay + cby), 0.5 * (lo + hi)
    nz = 1.0 if bz >= az else -1.0
    return True, 0.0, 0.0, nz, v_ov, 0.5 * (ax + bx), 0.5 * (ay + by), 0.5 * (lo + hi)


@njit
def pair_contact(gtypes, dims, pose, i, j):
    """Deepest-point contact between bodies i and j; normal points i -> j."""
    gi = gtypes[i]
    gj = gtypes[j]
    if gi == GT_CYL and gj == GT_CYL:
        return _cyl_cyl(
            pose[i, 0], pose[i, 1], pose[i, 2], dims[i, 0], 0.5 * dims[i, 1],
            pose[j, 0], pose[j, 1], pose[j, 2], dims[j, 0], 0.5 * dims[j, 1],
        )
    if gi == GT_CYL and gj == GT_BOX:
        return _cyl_box(
            pose[i, 0], pose[i, 1], pose[i, 2], dims[i, 0], 0.5 * dims[i, 1],
            pose[j, 0], pose[j, 1], pose[j, 2], dims[j, 0], dims[j, 1], dims[j, 2],
            pose[j, 3],
        )
    if gi == GT_BOX and gj == GT_CYL:
        hit, nx, ny, nz, depth, px, py, pz = _cyl_box(
            pose[j, 0], pose[j, 1], pose[j, 2], dims[j, 0], 0.5 * dims[j, 1],
            pose[i, 0], pose[i, 1], pose[i, 2], dims[i, 0], dims[i, 1], dims[i, 2],
            pose[i, 3],
        )
        return hit, -nx, -ny, -nz, depth, px, py, pz
    return _box_box(
        pose[i, 0], pose[i, 1], pose[i, 2], dims[i, 0], dims[i, 1], dims[i, 2], pose[i, 3],
        pose[j, 0], pose[j, 1], pose[j, 2], dims[j, 0], dims[j, 1], dims[j, 2], pose[j, 3],
    )


@njit
def _extent_xy(gt, d0, d1, yaw):
    """Horizontal half extents of the footprint along the world axes."""
    if gt == GT_CYL:
        return d0, d0
    c = abs(math.cos(yaw))
    s = abs(math.sin(yaw))
    return d0 * c + d1 * s, d0 * s + d1 * c


@njit
def _min_x_corner(px, py, hx, hy, yaw, sign):
    """World xy of the box corner extremal along +/- x (sign = -1 for min)."""
    c = math.cos(yaw)
    s = math.sin(yaw)
    bx = px
    by = py
    best = 1e30
    for sx in (-1.0, 1.0):
        for sy in (-1.0, 1.0):
            ox = sx * hx * c - sy * hy * s
            if sign * ox < best:
                best = sign * ox
                bx = px + ox
                by = py + sx * hx * s + sy * hy * c
    return bx, by


@njit
def _min_y_corner(px, py, hx, hy, yaw, sign):
    c = math.cos(yaw)
    s = math.sin(yaw)
    bx = px
    by = py
    best = 1e30
    for sx in (-1.0, 1.0):
        for sy in (-1.0, 1.0):
            oy = sx * hx * s + sy * hy * c
            if sign * oy < best:
                best = sign * oy
                bx = px + sx * hx * c - sy * hy * s
                by = py + oy
    return bx, by


@njit
def gather_contacts(pose, gtypes, dims, rc, hh, n_bodies, cw, cl, con, only_body):
    """Fill con with all current contacts; returns the row count.

    only_body >= 0 restricts to contacts involving that body (force probes);
    pass -1 for the full sweep.  Iteration order is fixed for determinism.
    """
    ncon = 0
    for i in range(n_bodies):
        for j in range(i + 1, n_bodies):
            if only_body >= 0 and i != only_body and j != only_body:
                continue
            dx = pose[j, 0] - pose[i, 0]
            dy = pose[j, 1] - pose[i, 1]
            rr = rc[i] + rc[j]
            if dx * dx + dy * dy >= rr * rr:
                continue
            hit, nx, ny, nz, depth, px, py, pz = pair_contact(gtypes, dims, pose, i, j)
            if hit:
                con[ncon, 0] = i
                con[ncon, 1] = j
                con[ncon, 2] = nx
                con[ncon, 3] = ny
                con[ncon, 4] = nz
                con[ncon, 5] = depth
                con[ncon, 6] = px
                con[ncon, 7] = py
                con[ncon, 8] = pz
                ncon += 1
    for k in range(n_bodies):
        if only_body >= 0 and k != only_body:
            continue
        x = pose[k, 0]
        y = pose[k, 1]
        z = pose[k, 2]
        gt = gtypes[k]
        ex, ey = _extent_xy(gt, dims[k, 0], dims[k, 1], pose[k, 3])
        bottom = z - hh[k]
        if bottom < 0.0:
            con[ncon, 0] = FLOOR
            con[ncon, 1] = k
            con[ncon, 2] = 0.0
            con[ncon, 3] = 0.0
            con[ncon, 4] = 1.0
            con[ncon, 5] = -bottom
            con[ncon, 6] = x
            con[ncon, 7] = y
            con[ncon, 8] = bottom
            ncon += 1
        if x - ex < 0.0:
            if gt == GT_BOX:
                px, py = _min_x_corner(x, y, dims[k, 0], dims[k, 1], pose[k, 3], -1.0)
            else:
                px = x - ex
                py = y
            con[ncon, 0] = WALL_X0
            con[ncon, 1] = k
            con[ncon, 2] = 1.0
            con[ncon, 3] = 0.0
            con[ncon, 4] = 0.0
            con[ncon, 5] = ex - x
            con[ncon, 6] = px
            con[ncon, 7] = py
            con[ncon, 8] = z
            ncon += 1
        if x + ex > cw:
            if gt == GT_BOX:
                px, py = _min_x_corner(x, y, dims[k, 0], dims[k, 1], pose[k, 3], 1.0)
            else:
                px = x + ex
                py = y
            con[ncon, 0] = WALL_X1
            con[ncon, 1] = k
            con[ncon, 2] = -1.0
            con[ncon, 3] = 0.0
            con[ncon, 4] = 0.0
            con[ncon, 5] = x + ex - cw
            con[ncon, 6] = px
            con[ncon, 7] = py
            con[ncon, 8] = z
            ncon += 1
        if y - ey < 0.0:
            if gt == GT_BOX:
                px, py = _min_y_corner(x, y, dims[k, 0], dims[k, 1], pose[k, 3], -1.0)
            else:
                px = x
                py = y - ey
            con[ncon, 0] = WALL_Y0
            con[ncon, 1] = k
            con[ncon, 2] = 0.0
            con[ncon, 3] = 1.0
            con[ncon, 4] = 0.0
            con[ncon, 5] = ey - y
            con[ncon, 6] = px
            con[ncon, 7] = py
            con[ncon, 8] = z
            ncon += 1
        if y + ey > cl:
            if gt == GT_BOX:
                px, py = _min_y_corner(x, y, dims[k, 0], dims[k, 1], pose[k, 3], 1.0)
            else:
                px = x
                py = y + ey
            con[ncon, 0] = WALL_Y1
            con[ncon, 1] = k
            con[ncon, 2] = 0.0
            con[ncon, 3] = -1.0
            con[ncon, 4] = 0.0
            con[ncon, 5] = y + ey - cl
            con[ncon, 6] = px
            con[ncon, 7] = py
            con[ncon, 8] = z
            ncon += 1
    return ncon


@njit
def contact_force_single(nx, ny, nz, depth, vrx, vry, vrz, cp):
    """Spring-damper normal force plus regularized Coulomb friction.

    vr is the velocity of b relative to a at the contact point; returns the
    force acting on b.  The normal component is clamped non-negative so a
    fast-separating pair never experiences adhesion.
    """
    vn = vrx * nx + vry * ny + vrz * nz
    fn = cp[CP_STIFF] * smooth_ramp(depth, cp[CP_EPS]) - cp[CP_DAMP] * vn
    if fn < 0.0:
        fn = 0.0
    vtx = vrx - vn * nx
    vty = vry - vn * ny
    vtz = vrz - vn * nz
    vtm = math.sqrt(vtx * vtx + vty * vty + vtz * vtz)
    scale = -cp[CP_MU] * fn / (vtm + cp[CP_VT_EPS])
    return fn * nx + scale * vtx, fn * ny + scale * vty, fn * nz + scale * vtz


@njit
def resolve_forces(pose, vel, con, ncon, cp, force):
    """Fill contact force columns and accumulate per-body force/yaw torque."""
    for r in range(ncon):
        ia = int(con[r, 0])
        ib = int(con[r, 1])
        nx = con[r, 2]
        ny = con[r, 3]
        nz = con[r, 4]
        px = con[r, 6]
        py = con[r, 7]
        vrx = 0.0
        vry = 0.0
        vrz = 0.0
        if ib >= 0:
            wz = vel[ib, 3]
            vrx = vel[ib, 0] - wz * (py - pose[ib, 1])
            vry = vel[ib, 1] + wz * (px - pose[ib, 0])
            vrz = vel[ib, 2]
        if ia >= 0:
            wz = vel[ia, 3]
            vrx -= vel[ia, 0] - wz * (py - pose[ia, 1])
            vry -= vel[ia, 1] + wz * (px - pose[ia, 0])
            vrz -= vel[ia, 2]
        fx, fy, fz = contact_force_single(nx, ny, nz, con[r, 5], vrx, vry, vrz, cp)
        con[r, 9] = fx
        con[r, 10] = fy
        con[r, 11] = fz
        if ib >= 0:
            force[ib, 0] += fx
            force[ib, 1] += fy
            force[ib, 2] += fz
            force[ib, 3] += (px - pose[ib, 0]) * fy - (py - pose[ib, 1]) * fx
        if ia >= 0:
            force[ia, 0] -= fx
            force[ia, 1] -= fy
            force[ia, 2] -= fz
            force[ia, 3] -= (px - pose[ia, 0]) * fy - (py - pose[ia, 1]) * fx


@njit
def integrate(pose, vel, force, mass, iyaw, n_dyn, cp, dt, g):
    """Semi-implicit Euler on the first n_dyn bodies (the dynamic prefix)."""
    drag = 1.0 - cp[CP_DRAG] * dt
    ydrag = 1.0 - cp[CP_YAW_DRAG] * dt
    vcap = cp[CP_VCAP]
    for k in range(n_dyn):
        inv_m = 1.0 / mass[k]
        vx = (vel[k, 0] + dt * force[k, 0] * inv_m) * drag
        vy = (vel[k, 1] + dt * force[k, 1] * inv_m) * drag
        vz = (vel[k, 2] + dt * (force[k, 2] * inv_m - g)) * drag
        wz = (vel[k, 3] + dt * force[k, 3] / iyaw[k]) * ydrag
        s2 = vx * vx + vy * vy + vz * vz
        if s2 > vcap * vcap:
            f = vcap / math.sqrt(s2)
            vx *= f
            vy *= f
            vz *= f
        vel[k, 0] = vx
        vel[k, 1] = vy
        vel[k, 2] = vz
        vel[k, 3] = wz
        pose[k, 0] += dt * vx
        pose[k, 1] += dt * vy
        pose[k, 2] += dt * vz
        pose[k, 3] += dt * wz


@njit
def step_bodies(pose, vel, gtypes, dims, rc, hh, mass, iyaw, n_dyn, cw, cl, cp, dt, g, con, force):
    """One physics step on free bodies; returns contact count or -1 on a
    non-finite state (exploding stiffness/dt combination)."""
    n_bodies = pose.shape[0]
    ncon = gather_contacts(pose, gtypes, dims, rc, hh, n_bodies, cw, cl, con, -1)
    for k in range(n_bodies):
        force[k, 0] = 0.0
        force[k, 1] = 0.0
        force[k, 2] = 0.0
        force[k, 3] = 0.0
    resolve_forces(pose, vel, con, ncon, cp, force)
    integrate(pose, vel, force, mass, iyaw, n_dyn, cp, dt, g)
    for k in range(n_dyn):
        for c in range(4):
            if not math.isfinite(pose[k, c]) or not math.isfinite(vel[k, c]):
                return -1
    return ncon


@njit
def settle_bodies(pose, vel, gtypes, dims, rc, hh, mass, iyaw, steps, cw, cl, cp, dt, g, con, force):
    """Integrate objects-only physics for a fixed number of steps."""
    n_bodies = pose.shape[0]
    for _ in range(steps):
        ok = step_bodies(pose, vel, gtypes, dims, rc, hh, mass, iyaw, n_bodies,
                         cw, cl, cp, dt, g, con, force)
        if ok < 0:
            return -1
    return 0


# ---------------------------------------------------------------------------
# Coupled gantry + container dynamics: the f(x, u) of the MPC model.
# ---------------------------------------------------------------------------


@njit
def clamp_control(u0, u1, u2, u3, vmax):
    c0 = min(max(u0, -vmax[0]), vmax[0])
    c1 = min(max(u1, -vmax[1]), vmax[1])
    c2 = min(max(u2, -vmax[2]), vmax[2])
    c3 = min(max(u3, -vmax[3]), vmax[3])
    return c0, c1, c2, c3


@njit
def unpack_bodies(x, n_res, pose, vel, gtypes, dims, tip_off, attached_vel_dt):
    """Write body rows from a state vector; the gripped object (last row)
    is slaved to the gantry tip composed with the attachment tilt."""
    for i in range(n_res):
        b = 8 + 8 * i
        pose[i, 0] = x[b]
        pose[i, 1] = x[b + 1]
        pose[i, 2] = x[b + 2]
        pose[i, 3] = x[b + 3]
        vel[i, 0] = x[b + 4]
        vel[i, 1] = x[b + 5]
        vel[i, 2] = x[b + 6]
        vel[i, 3] = x[b + 7]
    t1 = x[8 + 8 * n_res]
    t2 = x[9 + 8 * n_res]
    cx, cy, cz = gripped_center(x[0], x[1], x[2], t1, t2, tip_off)
    pose[n_res, 0] = cx
    pose[n_res, 1] = cy
    pose[n_res, 2] = cz
    pose[n_res, 3] = x[3]
    if attached_vel_dt > 0.0:
        vel[n_res, 0] = x[4]
        vel[n_res, 1] = x[5]
        vel[n_res, 2] = x[6]
        vel[n_res, 3] = x[7]


@njit
def world_step(x, u, out_x, n_res, gtypes, dims, rc, hh, mass, iyaw,
               cw, cl, cp, dt, g, qlo, qhi, vmax, tip_off, ap,
               pose, vel, force, con):
    """Advance the coupled state one step.

    Returns (ok, fee_x, fee_y, fee_z, tau1, tau2, detached) where fee is the
    net contact force on the gripped object (the end-effector force sensor)
    and tau the torque about the pump tip driving the compliance tilt.
    The gripped object is kinematic: contact forces are measured on it and
    tilt the attachment but never push the gantry joints back.
    """
    c0, c1, c2, c3 = clamp_control(u[0], u[1], u[2], u[3], vmax)
    q0 = min(max(x[0] + dt * c0, qlo[0]), qhi[0])
    q1 = min(max(x[1] + dt * c1, qlo[1]), qhi[1])
    q2 = min(max(x[2] + dt * c2, qlo[2]), qhi[2])
    q3 = min(max(x[3] + dt * c3, qlo[3]), qhi[3])

    nt = 8 + 8 * n_res
    t1 = x[nt]
    t2 = x[nt + 1]

    for i in range(n_res):
        b = 8 + 8 * i
        pose[i, 0] = x[b]
        pose[i, 1] = x[b + 1]
        pose[i, 2] = x[b + 2]
        pose[i, 3] = x[b + 3]
        vel[i, 0] = x[b + 4]
        vel[i, 1] = x[b + 5]
        vel[i, 2] = x[b + 6]
        vel[i, 3] = x[b + 7]

    ocx, ocy, ocz = gripped_center(x[0], x[1], x[2], t1, t2, tip_off)
    ncx, ncy, ncz = gripped_center(q0, q1, q2, t1, t2, tip_off)
    new = n_res
    pose[new, 0] = ncx
    pose[new, 1] = ncy
    pose[new, 2] = ncz
    pose[new, 3] = q3
    inv_dt = 1.0 / dt
    vel[new, 0] = (ncx - ocx) * inv_dt
    vel[new, 1] = (ncy - ocy) * inv_dt
    vel[new, 2] = (ncz - ocz) * inv_dt
    vel[new, 3] = (q3 - x[3]) * inv_dt

    n_bodies = n_res + 1
    ncon = gather_contacts(pose, gtypes, dims, rc, hh, n_bodies, cw, cl, con, -1)
    for k in range(n_bodies):
        force[k, 0] = 0.0
        force[k, 1] = 0.0
        force[k, 2] = 0.0
        force[k, 3] = 0.0
    resolve_forces(pose, vel, con, ncon, cp, force)
    integrate(pose, vel, force, mass, iyaw, n_res, cp, dt, g)

    fee_x = force[new, 0]
    fee_y = force[new, 1]
    fee_z = force[new, 2]

    tau1 = 0.0
    tau2 = 0.0
    for r in range(ncon):
        ia = int(con[r, 0])
        ib = int(con[r, 1])
        if ia == new:
            s = -1.0
        elif ib == new:
            s = 1.0
        else:
            continue
        fx = s * con[r, 9]
        fy = s * con[r, 10]
        fz = s * con[r, 11]
        lever = q2 - con[r, 8]
        tau1 += lever * fx - (con[r, 6] - q0) * fz
        tau2 += lever * fy - (con[r, 7] - q1) * fz

    t1n = t1 + dt * (tau1 - ap[AP_STIFF] * t1) / ap[AP_DAMP]
    t2n = t2 + dt * (tau2 - ap[AP_STIFF] * t2) / ap[AP_DAMP]
    detached = math.sqrt(t1n * t1n + t2n * t2n) > ap[AP_DETACH]

    out_x[0] = q0
    out_x[1] = q1
    out_x[2] = q2
    out_x[3] = q3
    out_x[4] = c0
    out_x[5] = c1
    out_x[6] = c2
    out_x[7] = c3
    for i in range(n_res):
        b = 8 + 8 * i
        out_x[b] = pose[i, 0]
        out_x[b + 1] = pose[i, 1]
        out_x[b + 2] = pose[i, 2]
        out_x[b + 3] = pose[i, 3]
        out_x[b + 4] = vel[i, 0]
        out_x[b + 5] = vel[i, 1]
        out_x[b + 6] = vel[i, 2]
        out_x[b + 7] = vel[i, 3]
    out_x[nt] = t1n
    out_x[nt + 1] = t2n

    ok = True
    for i in range(out_x.shape[0]):
        if not math.isfinite(out_x[i]):
            ok = False
            break
    return ok, fee_x, fee_y, fee_z, tau1, tau2, detached


@njit
def probe_fee(x, n_res, gtypes, dims, rc, hh, cw, cl, cp, tip_off, pose, vel, con):
    """Net contact force on the gripped object as a pure function of x."""
    unpack_bodies(x, n_res, pose, vel, gtypes, dims, tip_off, 1.0)
    new = n_res
    ncon = gather_contacts(pose, gtypes, dims, rc, hh, n_res + 1, cw, cl, con, new)
    fee_x = 0.0
    fee_y = 0.0
    fee_z = 0.0
    for r in range(ncon):
        ia = int(con[r, 0])
        ib = int(con[r, 1])
        nx = con[r, 2]
        ny = con[r, 3]
        nz = con[r, 4]
        px = con[r, 6]
        py = con[r, 7]
        vrx = 0.0
        vry = 0.0
        vrz = 0.0
        if ib >= 0:
            wz = vel[ib, 3]
            vrx = vel[ib, 0] - wz * (py - pose[ib, 1])
            vry = vel[ib, 1] + wz * (px - pose[ib, 0])
            vrz = vel[ib, 2]
        if ia >= 0:
            wz = vel[ia, 3]
            vrx -= vel[ia, 0] - wz * (py - pose[ia, 1])
            vry -= vel[ia, 1] + wz * (px - pose[ia, 0])
            vrz -= vel[ia, 2]
        fx, fy, fz = contact_force_single(nx, ny, nz, con[r, 5], vrx, vry, vrz, cp)
        if ib == new:
            fee_x += fx
            fee_y += fy
            fee_z += fz
        else:
            fee_x -= fx
            fee_y -= fy
            fee_z -= fz
    return fee_x, fee_y, fee_z


@njit
def near_gripped_mask(x, n_res, gtypes, dims, rc, hh, tip_off, margin, out_mask):
    """Residents whose footprint is within margin of the gripped object's;
    only these can influence the end-effector force under tiny perturbations."""
    t1 = x[8 + 8 * n_res]
    t2 = x[9 + 8 * n_res]
    cx, cy, cz = gripped_center(x[0], x[1], x[2], t1, t2, tip_off)
    new = n_res
    count = 0
    for i in range(n_res):
        b = 8 + 8 * i
        dx = x[b] - cx
        dy = x[b + 1] - cy
        rr = rc[i] + rc[new] + margin
        near_h = dx * dx + dy * dy < rr * rr
        vgap = abs(x[b + 2] - cz) - (hh[i] + hh[new] + margin)
        out_mask[i] = near_h and vgap < 0.0
        if out_mask[i]:
            count += 1
    return count


@njit
def rollout_controls(x0, U, X, n_res, gtypes, dims, rc, hh, mass, iyaw,
                     cw, cl, cp, dt, g, qlo, qhi, vmax, tip_off, ap,
                     pose, vel, force, con):
    """Open-loop rollout; X must be (T+1, n).  Returns the index of the
    first failing step or -1 on success."""
    T = U.shape[0]
    for i in range(x0.shape[0]):
        X[0, i] = x0[i]
    for t in range(T):
        ok = world_step(X[t], U[t], X[t + 1], n_res, gtypes, dims, rc, hh,
                        mass, iyaw, cw, cl, cp, dt, g, qlo, qhi, vmax,
                        tip_off, ap, pose, vel, force, con)[0]
        if not ok:
            return t
    return -1


@njit
def rollout_policy(Xn, Un, kff, Kfb, alpha, X, U, n_res, gtypes, dims, rc, hh,
                   mass, iyaw, cw, cl, cp, dt, g, qlo, qhi, vmax, tip_off, ap,
                   pose, vel, force, con):
    """Closed-loop rollout u = u_nom + alpha*k + K (x - x_nom)."""
    T = Un.shape[0]
    n = Xn.shape[1]
    m = Un.shape[1]
    for i in range(n):
        X[0, i] = Xn[0, i]
    for t in range(T):
        for a in range(m):
            acc = Un[t, a] + alpha * kff[t, a]
            for b in range(n):
                acc += Kfb[t, a, b] * (X[t, b] - Xn[t, b])
            U[t, a] = acc
        ok = world_step(X[t], U[t], X[t + 1], n_res, gtypes, dims, rc, hh,
                        mass, iyaw, cw, cl, cp, dt, g, qlo, qhi, vmax,
                        tip_off, ap, pose, vel, force, con)[0]
        if not ok:
            return t
    return -1


@njit
def linearize_trajectory(X, U, kskip, fd_eps, n_res, gtypes, dims, rc, hh,
                         mass, iyaw, cw, cl, cp, dt, g, qlo, qhi, vmax,
                         tip_off, ap, pose, vel, force, con, A, B):
    """Central finite-difference dynamics Jacobians on the set-interval grid.

    Exact pairs are computed at t = 0, k, 2k, ...; every other step holds the
    most recent computed pair (bit-equal copy).  Returns (t, col) of the first
    non-finite entry packed as t*10000 + col, or -1 when clean.
    """
    T = U.shape[0]
    n = X.shape[1]
    m = U.shape[1]
    xp = np.empty(n)
    xm = np.empty(n)
    op = np.empty(n)
    om = np.empty(n)
    up = np.empty(m)
    last = -1
    for t in range(T):
        if t % kskip == 0:
            for c in range(n):
                for i in range(n):
                    xp[i] = X[t, i]
                    xm[i] = X[t, i]
                xp[c] += fd_eps
                xm[c] -= fd_eps
                world_step(xp, U[t], op, n_res, gtypes, dims, rc, hh, mass, iyaw,
                           cw, cl, cp, dt, g, qlo, qhi, vmax, tip_off, ap,
                           pose, vel, force, con)
                world_step(xm, U[t], om, n_res, gtypes, dims, rc, hh, mass, iyaw,
                           cw, cl, cp, dt, g, qlo, qhi, vmax, tip_off, ap,
                           pose, vel, force, con)
                inv = 0.5 / fd_eps
                for i in range(n):
                    v = (op[i] - om[i]) * inv
                    if not math.isfinite(v):
                        return t * 10000 + c
                    A[t, i, c] = v
            for c in range(m):
                for i in range(m):
                    up[i] = U[t, i]
                up[c] = U[t, c] + fd_eps
                world_step(X[t], up, op, n_res, gtypes, dims, rc, hh, mass, iyaw,
                           cw, cl, cp, dt, g, qlo, qhi, vmax, tip_off, ap,
                           pose, vel, force, con)
                up[c] = U[t, c] - fd_eps
                world_step(X[t], up, om, n_res, gtypes, dims, rc, hh, mass, iyaw,
                           cw, cl, cp, dt, g, qlo, qhi, vmax, tip_off, ap,
                           pose, vel, force, con)
                inv = 0.5 / fd_eps
                for i in range(n):
                    v = (op[i] - om[i]) * inv
                    if not math.isfinite(v):
                        return t * 10000 + n + c
                    B[t, i, c] = v
            last = t
        else:
            for i in range(n):
                for j in range(n):
                    A[t, i, j] = A[last, i, j]
                for c in range(m):
                    B[t, i, c] = B[last, i, c]
    return -1
