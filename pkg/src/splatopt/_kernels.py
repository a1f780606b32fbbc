"""Single-threaded numba kernels for tile-based splat compositing.

Per-contribution rules shared by both directions (and by the naive reference
rasterizer, which must agree exactly):

  * a contribution is skipped when its Gaussian exponent exceeds SIGMA_CUT
    (the 3-sigma footprint) or its alpha falls below ALPHA_MIN;
  * alpha is clamped at ALPHA_MAX so backward transmittance division stays
    finite;
  * compositing stops for a pixel once transmittance would drop below T_MIN,
    excluding the triggering contribution.

The backward pass re-walks each tile's depth-sorted list in reverse,
recomputing the forward quantities instead of storing per-contribution state.
"""

import numpy as np
from numba import njit

SIGMA_CUT = 4.5        # quadratic form / 2 at the 3-sigma ellipse
ALPHA_MIN = 1.0 / 255.0
ALPHA_MAX = 0.9999
T_MIN = 1.0e-4
DEPTH_EPS = 1.0e-8     # floor on the expected-depth alpha denominator
NORM_FLOOR = 1.0e-3    # floor on the normal-map normalization


@njit(cache=True, fastmath=True, inline="always")
def _row_span(mx, ca, cb, cc, dy, px_lo, px_hi, sigma_cut):
    """Pixel-column interval of the 3-sigma ellipse on one row (inclusive,
    padded by the conservative floor/ceil so the per-pixel test stays the
    sole arbiter)."""
    B = cb * dy
    C = cc * dy * dy - 2.0 * sigma_cut
    disc = B * B - ca * C
    if disc < 0.0:
        return 1, 0
    root = np.sqrt(disc)
    lo = (-B - root) / ca + mx - 0.5
    hi = (-B + root) / ca + mx - 0.5
    a = int(np.floor(lo))
    b = int(np.ceil(hi))
    if a < px_lo:
        a = px_lo
    if b > px_hi:
        b = px_hi
    return a, b


@njit(cache=True, fastmath=True)
def composite_forward(
    tile_ranges, sorted_ids,
    means2d, conics, radii, depths, colors, alphas, normals,
    bg, H, W, tile, dist_l2, sigma_cut,
    out_rgb, out_alpha, out_depth, out_normal, out_nraw,
    out_final_t, out_last_idx, out_wsum, out_wdsum, out_wd2sum, out_dist,
):
    tiles_x = (W + tile - 1) // tile
    tiles_y = (H + tile - 1) // tile
    npx = tile * tile

    T = np.empty(npx)
    done = np.empty(npx, np.uint8)
    acc_rgb = np.empty((npx, 3))
    acc_n = np.empty((npx, 3))
    wsum = np.empty(npx)
    wdsum = np.empty(npx)
    wd2sum = np.empty(npx)
    distv = np.empty(npx)
    last = np.empty(npx, np.int64)

    for ty in range(tiles_y):
        for tx in range(tiles_x):
            tid = ty * tiles_x + tx
            s0 = tile_ranges[tid]
            s1 = tile_ranges[tid + 1]
            x0t = tx * tile
            y0t = ty * tile
            x1t = min(x0t + tile, W)
            y1t = min(y0t + tile, H)

            for i in range(npx):
                T[i] = 1.0
                done[i] = 0
                acc_rgb[i, 0] = 0.0
                acc_rgb[i, 1] = 0.0
                acc_rgb[i, 2] = 0.0
                acc_n[i, 0] = 0.0
                acc_n[i, 1] = 0.0
                acc_n[i, 2] = 0.0
                wsum[i] = 0.0
                wdsum[i] = 0.0
                wd2sum[i] = 0.0
                distv[i] = 0.0
                last[i] = -1

            active = (x1t - x0t) * (y1t - y0t)
            for k in range(s0, s1):
                if active <= 0:
                    break
                gid = sorted_ids[k]
                mx = means2d[gid, 0]
                my = means2d[gid, 1]
                r = radii[gid]
                ca = conics[gid, 0]
                cb = conics[gid, 1]
                cc = conics[gid, 2]
                al = alphas[gid]
                dep = depths[gid]

                px0 = int(np.floor(mx - r))
                py0 = int(np.floor(my - r))
                px1 = int(np.ceil(mx + r))
                py1 = int(np.ceil(my + r))
                if px0 < x0t:
                    px0 = x0t
                if py0 < y0t:
                    py0 = y0t
                if px1 > x1t - 1:
                    px1 = x1t - 1
                if py1 > y1t - 1:
                    py1 = y1t - 1

                for py in range(py0, py1 + 1):
                    dy = (py + 0.5) - my
                    pxa, pxb = _row_span(mx, ca, cb, cc, dy, px0, px1, sigma_cut)
                    for px in range(pxa, pxb + 1):
                        lp = (py - y0t) * tile + (px - x0t)
                        if done[lp]:
                            continue
                        dx = (px + 0.5) - mx
                        sig = 0.5 * (ca * dx * dx + cc * dy * dy) + cb * dx * dy
                        if sig > sigma_cut or sig < 0.0:
                            continue
                        a = al * np.exp(-sig)
                        if a < ALPHA_MIN:
                            continue
                        if a > ALPHA_MAX:
                            a = ALPHA_MAX
                        t_new = T[lp] * (1.0 - a)
                        if t_new < T_MIN:
                            done[lp] = 1
                            active -= 1
                            continue
                        w = a * T[lp]
                        acc_rgb[lp, 0] += w * colors[gid, 0]
                        acc_rgb[lp, 1] += w * colors[gid, 1]
                        acc_rgb[lp, 2] += w * colors[gid, 2]
                        acc_n[lp, 0] += w * normals[gid, 0]
                        acc_n[lp, 1] += w * normals[gid, 1]
                        acc_n[lp, 2] += w * normals[gid, 2]
                        # pairwise |d_i - d_j| over the prefix, before updating sums
                        distv[lp] += w * (dep * wsum[lp] - wdsum[lp])
                        wsum[lp] += w
                        wdsum[lp] += w * dep
                        wd2sum[lp] += w * dep * dep
                        T[lp] = t_new
                        last[lp] = k

            for py in range(y0t, y1t):
                for px in range(x0t, x1t):
                    lp = (py - y0t) * tile + (px - x0t)
                    tf = T[lp]
                    out_rgb[py, px, 0] = acc_rgb[lp, 0] + tf * bg[0]
                    out_rgb[py, px, 1] = acc_rgb[lp, 1] + tf * bg[1]
                    out_rgb[py, px, 2] = acc_rgb[lp, 2] + tf * bg[2]
                    out_alpha[py, px] = 1.0 - tf
                    ws = wsum[lp]
                    denom = ws if ws > DEPTH_EPS else DEPTH_EPS
                    out_depth[py, px] = wdsum[lp] / denom
                    nx = acc_n[lp, 0]
                    ny = acc_n[lp, 1]
                    nz = acc_n[lp, 2]
                    nn = np.sqrt(nx * nx + ny * ny + nz * nz)
                    nd = nn if nn > NORM_FLOOR else NORM_FLOOR
                    out_normal[py, px, 0] = nx / nd
                    out_normal[py, px, 1] = ny / nd
                    out_normal[py, px, 2] = nz / nd
                    out_nraw[py, px, 0] = nx
                    out_nraw[py, px, 1] = ny
                    out_nraw[py, px, 2] = nz
                    out_final_t[py, px] = tf
                    out_last_idx[py, px] = last[lp]
                    out_wsum[py, px] = ws
                    out_wdsum[py, px] = wdsum[lp]
                    out_wd2sum[py, px] = wd2sum[lp]
                    if dist_l2:
                        out_dist[py, px] = ws * wd2sum[lp] - wdsum[lp] * wdsum[lp]
                    else:
                        out_dist[py, px] = distv[lp]


@njit(cache=True, fastmath=True)
def composite_backward(
    tile_ranges, sorted_ids,
    means2d, conics, radii, depths, colors, alphas, normals,
    bg, H, W, tile, dist_l2, dist_coeff, sigma_cut,
    final_t, last_idx, wsum_img, wdsum_img, wd2sum_img, nraw_img,
    g_rgb, g_alpha, g_depth, g_normal,
    o_mean2d, o_conic, o_depth, o_alpha, o_color, o_normal, touched,
):
    tiles_x = (W + tile - 1) // tile
    tiles_y = (H + tile - 1) // tile
    npx = tile * tile

    T_after = np.empty(npx)
    s_c = np.empty((npx, 3))
    s_d = np.empty(npx)
    s_n = np.empty((npx, 3))
    s_wg = np.empty(npx)
    w_suf = np.empty(npx)
    d_suf = np.empty(npx)
    p_gdnum = np.empty(npx)
    p_gaeff = np.empty(npx)
    p_gnraw = np.empty((npx, 3))
    p_grgb = np.empty((npx, 3))
    p_last = np.empty(npx, np.int64)
    p_ws = np.empty(npx)
    p_wd = np.empty(npx)
    p_wd2 = np.empty(npx)
    p_tfin = np.empty(npx)

    for ty in range(tiles_y):
        for tx in range(tiles_x):
            tid = ty * tiles_x + tx
            s0 = tile_ranges[tid]
            s1 = tile_ranges[tid + 1]
            if s1 <= s0:
                continue
            x0t = tx * tile
            y0t = ty * tile
            x1t = min(x0t + tile, W)
            y1t = min(y0t + tile, H)

            tile_last = np.int64(-1)
            for py in range(y0t, y1t):
                for px in range(x0t, x1t):
                    lp = (py - y0t) * tile + (px - x0t)
                    li = last_idx[py, px]
                    p_last[lp] = li
                    if li < 0:
                        continue
                    if li > tile_last:
                        tile_last = li
                    tf = final_t[py, px]
                    ws = wsum_img[py, px]
                    wd = wdsum_img[py, px]
                    T_after[lp] = tf
                    p_tfin[lp] = tf
                    s_c[lp, 0] = tf * bg[0]
                    s_c[lp, 1] = tf * bg[1]
                    s_c[lp, 2] = tf * bg[2]
                    s_d[lp] = 0.0
                    s_n[lp, 0] = 0.0
                    s_n[lp, 1] = 0.0
                    s_n[lp, 2] = 0.0
                    s_wg[lp] = 0.0
                    w_suf[lp] = 0.0
                    d_suf[lp] = 0.0
                    p_ws[lp] = ws
                    p_wd[lp] = wd
                    p_wd2[lp] = wd2sum_img[py, px]
                    p_grgb[lp, 0] = g_rgb[py, px, 0]
                    p_grgb[lp, 1] = g_rgb[py, px, 1]
                    p_grgb[lp, 2] = g_rgb[py, px, 2]
                    # chain of depth = wdsum / max(wsum, eps)
                    gd = g_depth[py, px]
                    denom = ws if ws > DEPTH_EPS else DEPTH_EPS
                    p_gdnum[lp] = gd / denom
                    extra = 0.0
                    if ws > DEPTH_EPS:
                        extra = -gd * wd / (ws * ws)
                    p_gaeff[lp] = g_alpha[py, px] + extra
                    # chain of normal = nraw / max(|nraw|, floor)
                    nx = nraw_img[py, px, 0]
                    ny = nraw_img[py, px, 1]
                    nz = nraw_img[py, px, 2]
                    nn = np.sqrt(nx * nx + ny * ny + nz * nz)
                    gx = g_normal[py, px, 0]
                    gy = g_normal[py, px, 1]
                    gz = g_normal[py, px, 2]
                    if nn > NORM_FLOOR:
                        ux = nx / nn
                        uy = ny / nn
                        uz = nz / nn
                        dot = ux * gx + uy * gy + uz * gz
                        p_gnraw[lp, 0] = (gx - ux * dot) / nn
                        p_gnraw[lp, 1] = (gy - uy * dot) / nn
                        p_gnraw[lp, 2] = (gz - uz * dot) / nn
                    else:
                        p_gnraw[lp, 0] = gx / NORM_FLOOR
                        p_gnraw[lp, 1] = gy / NORM_FLOOR
                        p_gnraw[lp, 2] = gz / NORM_FLOOR
            if tile_last < 0:
                continue

            for k in range(min(tile_last, s1 - 1), s0 - 1, -1):
                gid = sorted_ids[k]
                mx = means2d[gid, 0]
                my = means2d[gid, 1]
                r = radii[gid]
                ca = conics[gid, 0]
                cb = conics[gid, 1]
                cc = conics[gid, 2]
                al = alphas[gid]
                dep = depths[gid]
                c0 = colors[gid, 0]
                c1 = colors[gid, 1]
                c2 = colors[gid, 2]
                n0 = normals[gid, 0]
                n1 = normals[gid, 1]
                n2 = normals[gid, 2]

                px0 = int(np.floor(mx - r))
                py0 = int(np.floor(my - r))
                px1 = int(np.ceil(mx + r))
                py1 = int(np.ceil(my + r))
                if px0 < x0t:
                    px0 = x0t
                if py0 < y0t:
                    py0 = y0t
                if px1 > x1t - 1:
                    px1 = x1t - 1
                if py1 > y1t - 1:
                    py1 = y1t - 1

                acc_m0 = 0.0
                acc_m1 = 0.0
                acc_q0 = 0.0
                acc_q1 = 0.0
                acc_q2 = 0.0
                acc_dep = 0.0
                acc_al = 0.0
                acc_c0 = 0.0
                acc_c1 = 0.0
                acc_c2 = 0.0
                acc_n0 = 0.0
                acc_n1 = 0.0
                acc_n2 = 0.0
                hit = False

                for py in range(py0, py1 + 1):
                    dy = (py + 0.5) - my
                    pxa, pxb = _row_span(mx, ca, cb, cc, dy, px0, px1, sigma_cut)
                    for px in range(pxa, pxb + 1):
                        lp = (py - y0t) * tile + (px - x0t)
                        if p_last[lp] < k:
                            continue
                        dx = (px + 0.5) - mx
                        sig = 0.5 * (ca * dx * dx + cc * dy * dy) + cb * dx * dy
                        if sig > sigma_cut or sig < 0.0:
                            continue
                        g = np.exp(-sig)
                        a_raw = al * g
                        if a_raw < ALPHA_MIN:
                            continue
                        a = a_raw if a_raw < ALPHA_MAX else ALPHA_MAX
                        one_m = 1.0 - a
                        t_before = T_after[lp] / one_m
                        w = a * t_before
                        hit = True

                        gr0 = p_grgb[lp, 0]
                        gr1 = p_grgb[lp, 1]
                        gr2 = p_grgb[lp, 2]
                        gDn = p_gdnum[lp]
                        gn0 = p_gnraw[lp, 0]
                        gn1 = p_gnraw[lp, 1]
                        gn2 = p_gnraw[lp, 2]

                        dLda = (
                            gr0 * (t_before * c0 - s_c[lp, 0] / one_m)
                            + gr1 * (t_before * c1 - s_c[lp, 1] / one_m)
                            + gr2 * (t_before * c2 - s_c[lp, 2] / one_m)
                            + p_gaeff[lp] * p_tfin[lp] / one_m
                            + gDn * (t_before * dep - s_d[lp] / one_m)
                            + gn0 * (t_before * n0 - s_n[lp, 0] / one_m)
                            + gn1 * (t_before * n1 - s_n[lp, 1] / one_m)
                            + gn2 * (t_before * n2 - s_n[lp, 2] / one_m)
                        )

                        gw_dist = 0.0
                        if dist_coeff != 0.0:
                            if dist_l2:
                                gw_dist = dist_coeff * (
                                    p_wd2[lp] + dep * dep * p_ws[lp] - 2.0 * dep * p_wd[lp]
                                )
                                acc_dep += dist_coeff * 2.0 * w * (dep * p_ws[lp] - p_wd[lp])
                            else:
                                w_pre = p_ws[lp] - w - w_suf[lp]
                                d_pre = p_wd[lp] - w * dep - d_suf[lp]
                                gw_dist = dist_coeff * (
                                    (dep * w_pre - d_pre) + (d_suf[lp] - dep * w_suf[lp])
                                )
                                acc_dep += dist_coeff * w * (w_pre - w_suf[lp])
                            dLda += gw_dist * t_before - s_wg[lp] / one_m

                        acc_c0 += w * gr0
                        acc_c1 += w * gr1
                        acc_c2 += w * gr2
                        acc_dep += w * gDn
                        acc_n0 += w * gn0
                        acc_n1 += w * gn1
                        acc_n2 += w * gn2

                        if a_raw < ALPHA_MAX:
                            acc_al += g * dLda
                            dLdsig = -al * g * dLda
                            acc_m0 += dLdsig * (-(ca * dx + cb * dy))
                            acc_m1 += dLdsig * (-(cb * dx + cc * dy))
                            acc_q0 += dLdsig * 0.5 * dx * dx
                            acc_q1 += dLdsig * dx * dy
                            acc_q2 += dLdsig * 0.5 * dy * dy

                        s_c[lp, 0] += w * c0
                        s_c[lp, 1] += w * c1
                        s_c[lp, 2] += w * c2
                        s_d[lp] += w * dep
                        s_n[lp, 0] += w * n0
                        s_n[lp, 1] += w * n1
                        s_n[lp, 2] += w * n2
                        w_suf[lp] += w
                        d_suf[lp] += w * dep
                        s_wg[lp] += gw_dist * w
                        T_after[lp] = t_before

                if hit:
                    o_mean2d[gid, 0] += acc_m0
                    o_mean2d[gid, 1] += acc_m1
                    o_conic[gid, 0] += acc_q0
                    o_conic[gid, 1] += acc_q1
                    o_conic[gid, 2] += acc_q2
                    o_depth[gid] += acc_dep
                    o_alpha[gid] += acc_al
                    o_color[gid, 0] += acc_c0
                    o_color[gid, 1] += acc_c1
                    o_color[gid, 2] += acc_c2
                    o_normal[gid, 0] += acc_n0
                    o_normal[gid, 1] += acc_n1
                    o_normal[gid, 2] += acc_n2
                    touched[gid] = 1
