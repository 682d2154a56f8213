"""Pure-numpy batched cell kernels.

One call per timestep over the whole batch.  Forward kernels fill
caller-provided output/cache buffers; backward kernels fill dx/dh buffers
and accumulate (+=) parameter gradients, matching the compiled backend's
contract exactly.  Shapes: x (B, D), h (B, N), weight matrices as stored in
the parameter bundles, i.e. w_x* (N, D) and w_h* (N, N).
"""

import numpy as np
from scipy.special import expit

NAME = "numpy"


def srnn_fwd(w_xh, w_hh, b_h, x, h, h_out):
    h_out[...] = np.tanh(x @ w_xh.T + h @ w_hh.T + b_h)


def srnn_bwd(w_xh, w_hh, x, h, h_new, dh_new, dx, dh,
             g_wxh, g_whh, g_bh):
    du = dh_new * (1.0 - h_new * h_new)
    g_wxh += du.T @ x
    g_whh += du.T @ h
    g_bh += du.sum(axis=0)
    dx[...] = du @ w_xh
    dh[...] = du @ w_hh


def lstm_fwd(w_xi, w_xf, w_xc, w_xo, w_hi, w_hf, w_hc, w_ho,
             b_i, b_f, b_c, b_o, x, h, c,
             i_out, f_out, g_out, o_out, c_out, tc_out, h_out):
    i_out[...] = expit(x @ w_xi.T + h @ w_hi.T + b_i)
    f_out[...] = expit(x @ w_xf.T + h @ w_hf.T + b_f)
    g_out[...] = np.tanh(x @ w_xc.T + h @ w_hc.T + b_c)
    o_out[...] = expit(x @ w_xo.T + h @ w_ho.T + b_o)
    c_out[...] = f_out * c + i_out * g_out
    tc_out[...] = np.tanh(c_out)
    h_out[...] = o_out * tc_out


def lstm_bwd(w_xi, w_xf, w_xc, w_xo, w_hi, w_hf, w_hc, w_ho,
             x, h, c, i, f, g, o, tc, dh_new, dc_new, dx, dh, dc,
             g_wxi, g_wxf, g_wxc, g_wxo, g_whi, g_whf, g_whc, g_who,
             g_bi, g_bf, g_bc, g_bo):
    do = dh_new * tc
    dct = dc_new + dh_new * o * (1.0 - tc * tc)
    df = dct * c
    di = dct * g
    dg = dct * i
    dc[...] = dct * f
    dui = di * i * (1.0 - i)
    duf = df * f * (1.0 - f)
    dug = dg * (1.0 - g * g)
    duo = do * o * (1.0 - o)
    g_wxi += dui.T @ x
    g_wxf += duf.T @ x
    g_wxc += dug.T @ x
    g_wxo += duo.T @ x
    g_whi += dui.T @ h
    g_whf += duf.T @ h
    g_whc += dug.T @ h
    g_who += duo.T @ h
    g_bi += dui.sum(axis=0)
    g_bf += duf.sum(axis=0)
    g_bc += dug.sum(axis=0)
    g_bo += duo.sum(axis=0)
    dx[...] = dui @ w_xi + duf @ w_xf + dug @ w_xc + duo @ w_xo
    dh[...] = dui @ w_hi + duf @ w_hf + dug @ w_hc + duo @ w_ho


def gru_fwd(w_xr, w_xz, w_xh, w_hr, w_hz, w_hh, b_r, b_z, b_h,
            x, h, r_out, z_out, hc_out, h_out):
    r_out[...] = expit(x @ w_xr.T + h @ w_hr.T + b_r)
    z_out[...] = expit(x @ w_xz.T + h @ w_hz.T + b_z)
    hc_out[...] = np.tanh(x @ w_xh.T + (r_out * h) @ w_hh.T + b_h)
    h_out[...] = z_out * h + (1.0 - z_out) * hc_out


def gru_bwd(w_xr, w_xz, w_xh, w_hr, w_hz, w_hh,
            x, h, r, z, hc, dh_new, dx, dh,
            g_wxr, g_wxz, g_wxh, g_whr, g_whz, g_whh,
            g_br, g_bz, g_bh):
    dz = dh_new * (h - hc)
    duz = dz * z * (1.0 - z)
    duh = dh_new * (1.0 - z) * (1.0 - hc * hc)
    dh[...] = dh_new * z
    drh = duh @ w_hh          # gradient into r*h
    dh += drh * r
    dur = (drh * h) * r * (1.0 - r)
    g_wxh += duh.T @ x
    g_whh += duh.T @ (r * h)
    g_bh += duh.sum(axis=0)
    g_wxz += duz.T @ x
    g_whz += duz.T @ h
    g_bz += duz.sum(axis=0)
    g_wxr += dur.T @ x
    g_whr += dur.T @ h
    g_br += dur.sum(axis=0)
    dx[...] = duh @ w_xh + duz @ w_xz + dur @ w_xr
    dh += duz @ w_hz + dur @ w_hr
