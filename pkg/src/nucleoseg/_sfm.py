"""Numba kernels for the sparse field level-set method.

Conventions: ``phi`` is positive inside. ``lab`` holds the layer of every
voxel of the working subvolume: 0 for the zero layer, +-1 and +-2 for the
inner/outer neighbor layers, +-3 for voxels beyond the band. All arrays are
C-contiguous and addressed by flat index.
"""

import numba
import numpy as np

UNIFORM_MODELING = 0
MEANS_SEPARATION = 1


@numba.njit(cache=True, nogil=True, inline="always")
def _unravel(p, ny, nz):
    return p // (ny * nz), (p // nz) % ny, p % nz


@numba.njit(cache=True, nogil=True)
def _neighbors(p, nx, ny, nz, out):
    x, y, z = _unravel(p, ny, nz)
    n = 0
    if x > 0:
        out[n] = p - ny * nz
        n += 1
    if x < nx - 1:
        out[n] = p + ny * nz
        n += 1
    if y > 0:
        out[n] = p - nz
        n += 1
    if y < ny - 1:
        out[n] = p + nz
        n += 1
    if z > 0:
        out[n] = p - 1
        n += 1
    if z < nz - 1:
        out[n] = p + 1
        n += 1
    return n


@numba.njit(cache=True, nogil=True)
def sfm_update(phi, lab, shape, lz, ln1, lp1, ln2, lp2, dphi):
    """One Whitaker update: move the zero layer by ``dphi`` and repair layers.

    Returns the five new layer lists and the number of zero-layer voxels
    that left the zero layer.
    """
    nx, ny, nz = shape[0], shape[1], shape[2]
    cap = 7 * (lz.size + ln1.size + lp1.size + ln2.size + lp2.size) + 16
    new_z = np.empty(cap, np.int64)
    new_n1 = np.empty(cap, np.int64)
    new_p1 = np.empty(cap, np.int64)
    new_n2 = np.empty(cap, np.int64)
    new_p2 = np.empty(cap, np.int64)
    s_z = np.empty(cap, np.int64)
    s_n1 = np.empty(cap, np.int64)
    s_p1 = np.empty(cap, np.int64)
    s_n2 = np.empty(cap, np.int64)
    s_p2 = np.empty(cap, np.int64)
    cz = cn1 = cp1 = cn2 = cp2 = 0
    sz = sn1 = sp1 = sn2 = sp2 = 0
    nb = np.empty(6, np.int64)
    moved = 0

    for a in range(lz.size):
        p = lz[a]
        phi[p] += dphi[a]
        if phi[p] > 0.5:
            s_p1[sp1] = p
            sp1 += 1
            moved += 1
        elif phi[p] < -0.5:
            s_n1[sn1] = p
            sn1 += 1
            moved += 1
        else:
            new_z[cz] = p
            cz += 1

    for a in range(ln1.size):
        p = ln1[a]
        k = _neighbors(p, nx, ny, nz, nb)
        best = -np.inf
        touches = False
        for i in range(k):
            q = nb[i]
            if lab[q] == 0:
                touches = True
            if lab[q] == 0 and phi[q] > best:
                best = phi[q]
        if not touches:
            s_n2[sn2] = p
            sn2 += 1
            continue
        phi[p] = best - 1.0
        if phi[p] >= -0.5:
            s_z[sz] = p
            sz += 1
        elif phi[p] < -1.5:
            s_n2[sn2] = p
            sn2 += 1
        else:
            new_n1[cn1] = p
            cn1 += 1

    for a in range(lp1.size):
        p = lp1[a]
        k = _neighbors(p, nx, ny, nz, nb)
        best = np.inf
        touches = False
        for i in range(k):
            q = nb[i]
            if lab[q] == 0:
                touches = True
            if lab[q] == 0 and phi[q] < best:
                best = phi[q]
        if not touches:
            s_p2[sp2] = p
            sp2 += 1
            continue
        phi[p] = best + 1.0
        if phi[p] <= 0.5:
            s_z[sz] = p
            sz += 1
        elif phi[p] > 1.5:
            s_p2[sp2] = p
            sp2 += 1
        else:
            new_p1[cp1] = p
            cp1 += 1

    for a in range(ln2.size):
        p = ln2[a]
        k = _neighbors(p, nx, ny, nz, nb)
        best = -np.inf
        touches = False
        for i in range(k):
            q = nb[i]
            if lab[q] == -1:
                touches = True
            if lab[q] == -1 and phi[q] > best:
                best = phi[q]
        if not touches:
            lab[p] = -3
            phi[p] = -3.0
            continue
        phi[p] = best - 1.0
        if phi[p] >= -1.5:
            s_n1[sn1] = p
            sn1 += 1
        elif phi[p] < -2.5:
            lab[p] = -3
            phi[p] = -3.0
        else:
            new_n2[cn2] = p
            cn2 += 1

    for a in range(lp2.size):
        p = lp2[a]
        k = _neighbors(p, nx, ny, nz, nb)
        best = np.inf
        touches = False
        for i in range(k):
            q = nb[i]
            if lab[q] == 1:
                touches = True
            if lab[q] == 1 and phi[q] < best:
                best = phi[q]
        if not touches:
            lab[p] = 3
            phi[p] = 3.0
            continue
        phi[p] = best + 1.0
        if phi[p] <= 1.5:
            s_p1[sp1] = p
            sp1 += 1
        elif phi[p] > 2.5:
            lab[p] = 3
            phi[p] = 3.0
        else:
            new_p2[cp2] = p
            cp2 += 1

    for a in range(sz):
        p = s_z[a]
        lab[p] = 0
        new_z[cz] = p
        cz += 1

    for a in range(sn1):
        p = s_n1[a]
        lab[p] = -1
        new_n1[cn1] = p
        cn1 += 1
        k = _neighbors(p, nx, ny, nz, nb)
        for i in range(k):
            q = nb[i]
            if lab[q] == -3:
                phi[q] = phi[p] - 1.0
                lab[q] = -2
                s_n2[sn2] = q
                sn2 += 1

    for a in range(sp1):
        p = s_p1[a]
        lab[p] = 1
        new_p1[cp1] = p
        cp1 += 1
        k = _neighbors(p, nx, ny, nz, nb)
        for i in range(k):
            q = nb[i]
            if lab[q] == 3:
                phi[q] = phi[p] + 1.0
                lab[q] = 2
                s_p2[sp2] = q
                sp2 += 1

    for a in range(sn2):
        p = s_n2[a]
        lab[p] = -2
        new_n2[cn2] = p
        cn2 += 1

    for a in range(sp2):
        p = s_p2[a]
        lab[p] = 2
        new_p2[cp2] = p
        cp2 += 1

    return (
        new_z[:cz].copy(),
        new_n1[:cn1].copy(),
        new_p1[:cp1].copy(),
        new_n2[:cn2].copy(),
        new_p2[:cp2].copy(),
        moved,
    )


@numba.njit(cache=True, nogil=True)
def heaviside_dirac(points, phi, eps, H, D):
    """Write smoothed Heaviside and Dirac values of ``phi`` at ``points``."""
    inv_pi = 1.0 / np.pi
    for a in range(points.size):
        p = points[a]
        f = phi[p]
        if f > eps:
            H[p] = 1.0
            D[p] = 0.0
        elif f < -eps:
            H[p] = 0.0
            D[p] = 0.0
        else:
            t = f / eps
            H[p] = 0.5 * (1.0 + t + inv_pi * np.sin(np.pi * t))
            D[p] = (1.0 + np.cos(np.pi * t)) / (2.0 * eps)


@numba.njit(cache=True, nogil=True)
def _ball_fits(x, y, z, reach, nx, ny, nz):
    return (
        x >= reach and y >= reach and z >= reach
        and x + reach < nx and y + reach < ny and z + reach < nz
    )


@numba.njit(cache=True, nogil=True)
def _surface_intensity(p, image, phi, shape):
    """Trilinear image value at the zero crossing nearest to voxel ``p``.

    The crossing is estimated as ``x - phi(x) grad phi / |grad phi|**2``.
    """
    nx, ny, nz = shape[0], shape[1], shape[2]
    x, y, z = _unravel(p, ny, nz)
    sx = ny * nz
    xm = p - sx if x > 0 else p
    xp = p + sx if x < nx - 1 else p
    ym = p - nz if y > 0 else p
    yp = p + nz if y < ny - 1 else p
    zm = p - 1 if z > 0 else p
    zp = p + 1 if z < nz - 1 else p
    gx = (phi[xp] - phi[xm]) / max((xp - xm) // sx, 1)
    gy = (phi[yp] - phi[ym]) / max((yp - ym) // nz, 1)
    gz = (phi[zp] - phi[zm]) / max(zp - zm, 1)
    g2 = gx * gx + gy * gy + gz * gz
    if g2 < 1e-12:
        return image[p]
    t = phi[p] / g2
    fx = min(max(x - t * gx, 0.0), nx - 1.0)
    fy = min(max(y - t * gy, 0.0), ny - 1.0)
    fz = min(max(z - t * gz, 0.0), nz - 1.0)
    i0 = min(int(fx), nx - 2) if nx > 1 else 0
    j0 = min(int(fy), ny - 2) if ny > 1 else 0
    k0 = min(int(fz), nz - 2) if nz > 1 else 0
    ax = fx - i0
    ay = fy - j0
    az = fz - k0
    val = 0.0
    for di in range(2):
        wi = ax if di else 1.0 - ax
        i = min(i0 + di, nx - 1)
        for dj in range(2):
            wj = ay if dj else 1.0 - ay
            j = min(j0 + dj, ny - 1)
            for dk in range(2):
                wk = az if dk else 1.0 - az
                k = min(k0 + dk, nz - 1)
                val += wi * wj * wk * image[(i * ny + j) * nz + k]
    return val


@numba.njit(cache=True, nogil=True)
def local_force(lz, image, phi, H, D, psi, radius, shape, offsets, flat_offsets, offdist, kind):
    """Localized region force at each zero-layer voxel (positive = grow).

    Every zero-layer voxel ``y`` gets interior/exterior means ``u_y``, ``v_y``,
    Heaviside-weighted over its ball ``|z - y| < min(radius, psi[y])``. The
    force at ``x`` is the variation of the localized energy with respect to
    ``phi(x)``: a Dirac-weighted sum, over the zero-layer voxels ``y`` in the
    ball of ``x``, of the energy derivative at intensity ``I(x)`` under the
    means of ``y``. ``I(x)`` is sampled at the sub-voxel zero crossing.

    Also returns the stiffness of each force, its rate of change per unit of
    normalized intensity ``(I(x) - v) / (u - v)``: zero where no neighbor has
    a defined contrast.
    """
    nx, ny, nz = shape[0], shape[1], shape[2]
    reach = int(np.ceil(radius))
    n = lz.size
    # per zero-layer voxel: slope A and intercept B of the force in I(x)
    slope = np.zeros(H.size)
    icept = np.zeros(H.size)
    stiff = np.zeros(H.size)
    for a in range(n):
        p = lz[a]
        r = min(radius, psi[p])
        x, y, z = _unravel(p, ny, nz)
        interior = _ball_fits(x, y, z, reach, nx, ny, nz)
        sh = 0.0
        shi = 0.0
        st = 0.0
        sti = 0.0
        for k in range(offsets.shape[0]):
            if offdist[k] >= r:
                break
            if interior:
                q = p + flat_offsets[k]
            else:
                qx = x + offsets[k, 0]
                qy = y + offsets[k, 1]
                qz = z + offsets[k, 2]
                if qx < 0 or qy < 0 or qz < 0 or qx >= nx or qy >= ny or qz >= nz:
                    continue
                q = (qx * ny + qy) * nz + qz
            val = image[q]
            h = H[q]
            st += 1.0
            sti += val
            sh += h
            shi += h * val
        ah = sh
        ao = st - sh
        if ah < 1e-9 or ao < 1e-9:
            continue
        u = shi / ah
        v = (sti - shi) / ao
        c = u - v
        d = D[p]
        if kind == UNIFORM_MODELING:
            # (I - v)^2 - (I - u)^2 = 2 (u - v) I - (u^2 - v^2)
            slope[p] = d * 2.0 * c
            icept[p] = d * (u * u - v * v)
        else:
            # (u - v) [(I - u) / f_in + (I - v) / f_out] with f the interior and
            # exterior fractions of the ball, so the force is O(1) like the
            # uniform-modeling one and lam weighs the same against both
            fi = ah / st
            fo = ao / st
            slope[p] = d * c * (1.0 / fi + 1.0 / fo)
            icept[p] = d * c * (u / fi + v / fo)
        stiff[p] = slope[p] * c

    out = np.zeros(n)
    kout = np.zeros(n)
    for a in range(n):
        p = lz[a]
        r = min(radius, psi[p])
        x, y, z = _unravel(p, ny, nz)
        interior = _ball_fits(x, y, z, reach, nx, ny, nz)
        sa = 0.0
        sb = 0.0
        sk = 0.0
        for k in range(offsets.shape[0]):
            if offdist[k] >= r:
                break
            if interior:
                q = p + flat_offsets[k]
            else:
                qx = x + offsets[k, 0]
                qy = y + offsets[k, 1]
                qz = z + offsets[k, 2]
                if qx < 0 or qy < 0 or qz < 0 or qx >= nx or qy >= ny or qz >= nz:
                    continue
                q = (qx * ny + qy) * nz + qz
            sa += slope[q]
            sb += icept[q]
            sk += stiff[q]
        if sa == 0.0:
            continue
        out[a] = sa * _surface_intensity(p, image, phi, shape) - sb
        kout[a] = sk
    return out, kout


@numba.njit(cache=True, nogil=True)
def curvature(points, phi, shape):
    """``div(grad phi / |grad phi|)`` by central differences (clamped edges)."""
    nx, ny, nz = shape[0], shape[1], shape[2]
    out = np.zeros(points.size)
    for a in range(points.size):
        p = points[a]
        x, y, z = _unravel(p, ny, nz)
        xm = max(x - 1, 0)
        xp = min(x + 1, nx - 1)
        ym = max(y - 1, 0)
        yp = min(y + 1, ny - 1)
        zm = max(z - 1, 0)
        zp = min(z + 1, nz - 1)

        def at(i, j, k):
            return phi[(i * ny + j) * nz + k]

        c = at(x, y, z)
        fx = 0.5 * (at(xp, y, z) - at(xm, y, z))
        fy = 0.5 * (at(x, yp, z) - at(x, ym, z))
        fz = 0.5 * (at(x, y, zp) - at(x, y, zm))
        fxx = at(xp, y, z) - 2 * c + at(xm, y, z)
        fyy = at(x, yp, z) - 2 * c + at(x, ym, z)
        fzz = at(x, y, zp) - 2 * c + at(x, y, zm)
        fxy = 0.25 * (at(xp, yp, z) - at(xp, ym, z) - at(xm, yp, z) + at(xm, ym, z))
        fxz = 0.25 * (at(xp, y, zp) - at(xp, y, zm) - at(xm, y, zp) + at(xm, y, zm))
        fyz = 0.25 * (at(x, yp, zp) - at(x, yp, zm) - at(x, ym, zp) + at(x, ym, zm))
        g2 = fx * fx + fy * fy + fz * fz
        num = (
            fxx * (fy * fy + fz * fz)
            + fyy * (fx * fx + fz * fz)
            + fzz * (fx * fx + fy * fy)
            - 2.0 * (fx * fy * fxy + fx * fz * fxz + fy * fz * fyz)
        )
        out[a] = num / (g2 ** 1.5 + 1e-12)
    return out


@numba.njit(cache=True, nogil=True)
def tidy_layers(phi, lab, shape, ln1, lp1, ln2, lp2):
    """Demote +-1 voxels that lost their zero-layer neighbor and drop +-2
    voxels that lost their +-1 neighbor, so every layer touches the next
    inner one."""
    nx, ny, nz = shape[0], shape[1], shape[2]
    nb = np.empty(6, np.int64)
    cap = ln1.size + lp1.size + ln2.size + lp2.size + 1
    keep1 = np.empty(cap, np.int64)
    keep2 = np.empty(cap, np.int64)
    out = []
    for sgn, l1, l2 in ((-1, ln1, ln2), (1, lp1, lp2)):
        c1 = 0
        c2 = 0
        for a in range(l1.size):
            p = l1[a]
            k = _neighbors(p, nx, ny, nz, nb)
            ok = False
            for i in range(k):
                if lab[nb[i]] == 0:
                    ok = True
            if ok:
                keep1[c1] = p
                c1 += 1
            else:
                lab[p] = 2 * sgn
                keep2[c2] = p
                c2 += 1
        for a in range(l2.size):
            keep2[c2] = l2[a]
            c2 += 1
        c2b = 0
        for a in range(c2):
            p = keep2[a]
            k = _neighbors(p, nx, ny, nz, nb)
            best = np.inf
            found = False
            for i in range(k):
                q = nb[i]
                if lab[q] == sgn:
                    found = True
                    if sgn * phi[q] < best:
                        best = sgn * phi[q]
            if found:
                mag = min(max(best + 1.0, 1.5 + 1e-9), 2.5)
                if sgn * phi[p] <= 1.5 or sgn * phi[p] > 2.5:
                    phi[p] = sgn * mag
                keep2[c2b] = p
                c2b += 1
            else:
                lab[p] = 3 * sgn
                phi[p] = 3.0 * sgn
        out.append(keep1[:c1].copy())
        out.append(keep2[:c2b].copy())
    return out[0], out[2], out[1], out[3]
