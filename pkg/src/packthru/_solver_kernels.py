"""Jitted residual, cost, and Gauss-Newton expansion kernels.

Residual vector layout (K = 15 + len(G)), fixed for the life of a solve:

    0..2    gripped-object position error (x, y, z) against the goal
    3       upright deviation = |tilt|
    4..6    end-effector contact force (per axis)
    7..10   joint-limit proximity  cosh(q_i - mid_i) - 1
    11..14  joint velocity (commanded u_i for running cost, qdot_i terminal)
    15..    obstacle repulsion exp(-planar distance to goal) per tracked id

Argument packs (plain tuples so numba can specialize):

    geom = (n_res, gtypes, dims, rc, hh, mass, iyaw, cw, cl)
    dyn  = (cp, dt, g, qlo, qhi, vmax, tip_off, ap)
    bufs = (pose, vel, force, con)
    cost_ctx = (goal, gidx, qmid, w_run, w_fin, norm_kind, norm_eps,
                fd_pos, fd_contact, ee_margin)
"""

import math

import numpy as np

from ._jit import njit
from ._kernels import gather_contacts, contact_force_single, gripped_center

R_POSX = 0
R_POSY = 1
R_POSZ = 2
R_UP = 3
R_EE0 = 4
R_RJL0 = 7
R_RJV0 = 11
R_OR0 = 15
N_FIXED = 15

NORM_QUAD = 0
NORM_SMOOTH_ABS = 1


@njit
def _fee_at(x, geom, dyn, bufs):
    n_res, gtypes, dims, rc, hh, mass, iyaw, cw, cl = geom
    cp, dt, g, qlo, qhi, vmax, tip_off, ap = dyn
    pose, vel, con = bufs[0], bufs[1], bufs[3]
    nt = 8 + 8 * n_res
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
    cx, cy, cz = gripped_center(x[0], x[1], x[2], x[nt], x[nt + 1], tip_off)
    new = n_res
    pose[new, 0] = cx
    pose[new, 1] = cy
    pose[new, 2] = cz
    pose[new, 3] = x[3]
    vel[new, 0] = x[4]
    vel[new, 1] = x[5]
    vel[new, 2] = x[6]
    vel[new, 3] = x[7]
    ncon = gather_contacts(pose, gtypes, dims, rc, hh, new + 1, cw, cl, con, new)
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
def residual_vector(x, u, use_u, with_fee, geom, dyn, bufs, goal, gidx, qmid, r_out):
    """Evaluate the full residual stack at one state; rows 4..6 are left at
    zero when with_fee is False (callers patch in a cached force)."""
    n_res = geom[0]
    tip_off = dyn[6]
    nt = 8 + 8 * n_res
    t1 = x[nt]
    t2 = x[nt + 1]
    cx, cy, cz = gripped_center(x[0], x[1], x[2], t1, t2, tip_off)
    r_out[R_POSX] = cx - goal[0]
    r_out[R_POSY] = cy - goal[1]
    r_out[R_POSZ] = cz - goal[2]
    r_out[R_UP] = math.sqrt(t1 * t1 + t2 * t2)
    if with_fee:
        fx, fy, fz = _fee_at(x, geom, dyn, bufs)
        r_out[R_EE0] = fx
        r_out[R_EE0 + 1] = fy
        r_out[R_EE0 + 2] = fz
    else:
        r_out[R_EE0] = 0.0
        r_out[R_EE0 + 1] = 0.0
        r_out[R_EE0 + 2] = 0.0
    for i in range(4):
        r_out[R_RJL0 + i] = math.cosh(x[i] - qmid[i]) - 1.0
        if use_u:
            r_out[R_RJV0 + i] = u[i]
        else:
            r_out[R_RJV0 + i] = x[4 + i]
    for j in range(gidx.shape[0]):
        b = 8 + 8 * gidx[j]
        dx = x[b] - goal[0]
        dy = x[b + 1] - goal[1]
        r_out[R_OR0 + j] = math.exp(-math.sqrt(dx * dx + dy * dy))


@njit
def norm_value(r, kind, eps):
    if kind == NORM_SMOOTH_ABS:
        return math.sqrt(r * r + eps * eps) - eps
    return 0.5 * r * r


@njit
def norm_d1(r, kind, eps):
    if kind == NORM_SMOOTH_ABS:
        return r / math.sqrt(r * r + eps * eps)
    return r


@njit
def norm_d2(r, kind, eps):
    if kind == NORM_SMOOTH_ABS:
        s = r * r + eps * eps
        return eps * eps / (s * math.sqrt(s))
    return 1.0


@njit
def weighted_cost(r, w, norm_kind, norm_eps):
    acc = 0.0
    for i in range(r.shape[0]):
        if w[i] > 0.0:
            acc += w[i] * norm_value(r[i], norm_kind[i], norm_eps[i])
    return acc


@njit
def trajectory_cost(X, U, geom, dyn, bufs, cost_ctx):
    """Sum of running costs over U plus the terminal cost at X[-1]."""
    goal, gidx, qmid, w_run, w_fin, norm_kind, norm_eps = cost_ctx[:7]
    K = w_run.shape[0]
    r = np.empty(K)
    total = 0.0
    T = U.shape[0]
    for t in range(T):
        residual_vector(X[t], U[t], True, True, geom, dyn, bufs, goal, gidx, qmid, r)
        total += weighted_cost(r, w_run, norm_kind, norm_eps)
    residual_vector(X[T], U[0], False, True, geom, dyn, bufs, goal, gidx, qmid, r)
    total += weighted_cost(r, w_fin, norm_kind, norm_eps)
    return total


@njit
def _support_columns(x, geom, dyn, w, terminal, ee_margin, cols, fee_dep, gidx):
    """Columns of the state with a possibly nonzero residual Jacobian entry.

    Everything outside this set is provably flat: positions/limits see only
    q and tilt, repulsion sees only its resident's planar coordinates, and
    the force probe sees residents within ee_margin of the gripped object.
    Returns the column count; fee_dep flags columns the force can react to.
    """
    n_res, gtypes, dims, rc, hh = geom[0], geom[1], geom[2], geom[3], geom[4]
    tip_off = dyn[6]
    nt = 8 + 8 * n_res
    ee_on = w[R_EE0] > 0.0 or w[R_EE0 + 1] > 0.0 or w[R_EE0 + 2] > 0.0
    rjv_on = False
    for i in range(4):
        if w[R_RJV0 + i] > 0.0:
            rjv_on = True
    nc = 0
    for c in range(4):
        cols[nc] = c
        fee_dep[nc] = ee_on
        nc += 1
    if ee_on or (terminal and rjv_on):
        for c in range(4, 8):
            cols[nc] = c
            fee_dep[nc] = ee_on
            nc += 1
    cols[nc] = nt
    fee_dep[nc] = ee_on
    nc += 1
    cols[nc] = nt + 1
    fee_dep[nc] = ee_on
    nc += 1
    t1 = x[nt]
    t2 = x[nt + 1]
    ncx, ncy, ncz = gripped_center(x[0], x[1], x[2], t1, t2, tip_off)
    for i in range(n_res):
        b = 8 + 8 * i
        near = False
        if ee_on:
            dx = x[b] - ncx
            dy = x[b + 1] - ncy
            rr = rc[i] + rc[n_res] + ee_margin
            if dx * dx + dy * dy < rr * rr:
                if abs(x[b + 2] - ncz) < hh[i] + hh[n_res] + ee_margin:
                    near = True
        in_g = False
        for j in range(gidx.shape[0]):
            if gidx[j] == i and w[R_OR0 + j] > 0.0:
                in_g = True
        if near:
            for c in range(b, b + 8):
                cols[nc] = c
                fee_dep[nc] = True
                nc += 1
        elif in_g:
            cols[nc] = b
            fee_dep[nc] = False
            nc += 1
            cols[nc] = b + 1
            fee_dep[nc] = False
            nc += 1
    return nc


@njit
def gn_expand_point(x, u, terminal, geom, dyn, bufs, cost_ctx,
                    lx, lu, lxx, luu, lux):
    """Gauss-Newton cost expansion at a single (x, u) point.

    Residual Jacobians come from central finite differences over the support
    columns (step fd_contact where the force probe reacts, fd_pos elsewhere);
    first derivatives are J' W n'(r) and Hessians the PSD J' W diag(n'') J.
    Returns the cost at the point.
    """
    goal, gidx, qmid, w_run, w_fin, norm_kind, norm_eps, fd_pos, fd_contact, ee_margin = cost_ctx
    n = x.shape[0]
    m = 4
    w = w_fin if terminal else w_run
    use_u = not terminal
    K = w.shape[0]
    r0 = np.empty(K)
    residual_vector(x, u, use_u, True, geom, dyn, bufs, goal, gidx, qmid, r0)
    cost = weighted_cost(r0, w, norm_kind, norm_eps)

    wn1 = np.empty(K)
    wn2 = np.empty(K)
    for i in range(K):
        if w[i] > 0.0:
            wn1[i] = w[i] * norm_d1(r0[i], norm_kind[i], norm_eps[i])
            wn2[i] = w[i] * norm_d2(r0[i], norm_kind[i], norm_eps[i])
        else:
            wn1[i] = 0.0
            wn2[i] = 0.0

    for i in range(n):
        lx[i] = 0.0
        for j in range(n):
            lxx[i, j] = 0.0
    for i in range(m):
        lu[i] = 0.0
        for j in range(m):
            luu[i, j] = 0.0
        for j in range(n):
            lux[i, j] = 0.0

    cols = np.empty(n, dtype=np.int64)
    fee_dep = np.empty(n, dtype=np.bool_)
    nc = _support_columns(x, geom, dyn, w, terminal, ee_margin, cols, fee_dep, gidx)

    J = np.zeros((K, nc))
    rp = np.empty(K)
    rm = np.empty(K)
    xp = x.copy()
    for a in range(nc):
        c = cols[a]
        with_fee = fee_dep[a]
        h = fd_contact if with_fee else fd_pos
        xs = x[c]
        xp[c] = xs + h
        residual_vector(xp, u, use_u, with_fee, geom, dyn, bufs, goal, gidx, qmid, rp)
        xp[c] = xs - h
        residual_vector(xp, u, use_u, with_fee, geom, dyn, bufs, goal, gidx, qmid, rm)
        xp[c] = xs
        inv = 0.5 / h
        for k in range(K):
            J[k, a] = (rp[k] - rm[k]) * inv
        if not with_fee:
            J[R_EE0, a] = 0.0
            J[R_EE0 + 1, a] = 0.0
            J[R_EE0 + 2, a] = 0.0

    for a in range(nc):
        ca = cols[a]
        acc = 0.0
        for k in range(K):
            acc += J[k, a] * wn1[k]
        lx[ca] = acc
        for b in range(a, nc):
            cb = cols[b]
            h = 0.0
            for k in range(K):
                h += wn2[k] * J[k, a] * J[k, b]
            lxx[ca, cb] = h
            lxx[cb, ca] = h

    if use_u:
        # residuals are flat in u except the commanded-velocity rows, and the
        # force probe cannot react to u either; rows 4..6 stay patched at 0.
        Ju = np.zeros((K, m))
        up = np.empty(m)
        for a in range(m):
            for i in range(m):
                up[i] = u[i]
            up[a] = u[a] + fd_pos
            residual_vector(x, up, True, False, geom, dyn, bufs, goal, gidx, qmid, rp)
            up[a] = u[a] - fd_pos
            residual_vector(x, up, True, False, geom, dyn, bufs, goal, gidx, qmid, rm)
            inv = 0.5 / fd_pos
            for k in range(K):
                Ju[k, a] = (rp[k] - rm[k]) * inv
        for a in range(m):
            acc = 0.0
            for k in range(K):
                acc += Ju[k, a] * wn1[k]
            lu[a] = acc
            for b in range(m):
                h = 0.0
                for k in range(K):
                    h += wn2[k] * Ju[k, a] * Ju[k, b]
                luu[a, b] = h
    return cost


@njit
def expand_trajectory(X, U, geom, dyn, bufs, cost_ctx, lx, lu, lxx, luu, lux):
    """Cost expansions along a trajectory; index T holds the terminal set.
    Returns the total trajectory cost (running sum plus terminal)."""
    T = U.shape[0]
    n = X.shape[1]
    m = U.shape[1]
    total = 0.0
    for t in range(T):
        total += gn_expand_point(X[t], U[t], False, geom, dyn, bufs, cost_ctx,
                                 lx[t], lu[t], lxx[t], luu[t], lux[t])
    lu_s = np.empty(m)
    luu_s = np.empty((m, m))
    lux_s = np.empty((m, n))
    total += gn_expand_point(X[T], U[T - 1], True, geom, dyn, bufs, cost_ctx,
                             lx[T], lu_s, lxx[T], luu_s, lux_s)
    return total
