"""Inner loops of the Monte Carlo engine.

Every path is pre-digested into a padded node list: node times, step
lengths, Brownian increments per step and the jump (if any) applied on
arrival at a node. The kernels then only do arithmetic.

The step functions are built once from a single source by ``_make_steps``:
wrapped with ``numba.njit`` they run on scalars inside a per-path loop, left
plain they run on whole arrays of paths. ``CATMMV_BACKEND=numpy`` selects the
plain version.

Coefficient tables live on a uniform time grid, so lookups are an index
computation plus a linear blend.
"""

from __future__ import annotations

import os
from types import SimpleNamespace

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

__all__ = ["HAVE_NUMBA", "default_backend", "run_jump_kernel", "run_diffusion_kernel", "P", "N_PAR", "REC_FIELDS"]

# parameter vector layout
P = dict(
    r=0, mu0=1, sigma0=2, kappa=3, kappa_r=4, iota=5, iota_r=6, rho=7, delta=8, k=9,
    mu1=10, s1sq=11, mu2=12, theta=13, T=14, c=15,
    s_pi=16, s_u=17, s_v=18, c_pi=19, c_u=20, c_v=21, s_o=22, s_p=23, s_q=24,
    feedback=25, y_scheme=26, w_shift=27, s2sq=28, c0=29, c1=30, zeta_lin=31,
    g0=32, inv_dg=33, n_cells=34,
)
N_PAR = 35

# recorded per node of interest: state then the controls chosen there
REC_FIELDS = ("X", "Y", "lambda", "pi", "u", "v")

# jump tables: eta, zeta, alpha, beta, phi, ycomp
# diffusion tables: xi, eta, zeta, alpha, beta


def default_backend() -> str:
    want = os.environ.get("CATMMV_BACKEND", "numba").strip().lower()
    if want not in ("numba", "numpy"):
        raise ValueError(f"CATMMV_BACKEND must be numba or numpy, got {want!r}")
    return "numba" if (want == "numba" and HAVE_NUMBA) else "numpy"


def grid_par(grid: np.ndarray) -> tuple[float, float, float]:
    """(g0, 1/dg, number of cells) of a uniform grid."""
    n = grid.size - 1
    dg = (grid[-1] - grid[0]) / n
    if not np.allclose(np.diff(grid), dg, rtol=1e-9, atol=0.0):
        raise ValueError("coefficient grid must be uniform")
    return float(grid[0]), 1.0 / dg, float(n)


def _make_steps(wrap):
    @wrap
    def coord(t, par):
        x = (t - par[32]) * par[33]
        x = np.minimum(np.maximum(x, 0.0), par[34])
        i = np.int64(np.minimum(np.floor(x), par[34] - 1.0))
        return i, x - i

    @wrap
    def lk(tabs, row, i, w):
        return tabs[row, i] * (1.0 - w) + tabs[row, i + 1] * w

    # ------------------------------------------------------------ jump model

    @wrap
    def jump_controls(t, X, Y, lam, par, tabs):
        i, w = coord(t, par)
        G = np.exp(par[0] * (par[14] - t))
        a = lk(tabs, 2, i, w)
        H = np.exp(lk(tabs, 0, i, w) * lam + lk(tabs, 1, i, w)) / (2.0 * par[13])
        fb = par[25]
        D = fb * (2.0 * H * Y / G) + (1.0 - fb) * (par[15] - G * X - (a * lam + lk(tabs, 3, i, w))) / G
        pi = par[16] * (par[1] - par[0]) * D / (par[2] * par[2]) + par[19]
        u = par[17] * par[4] * par[10] * D / par[11] + par[20]
        v = par[18] * (lk(tabs, 4, i, w) * D + a / G) / par[9] + par[21]
        return pi, u, v

    @wrap
    def jump_euler(t, h, dw, X, Y, lam, pi, u, v, par, tabs):
        r, mu0, sigma0 = par[0], par[1], par[2]
        kappa, kappa_r, iota, iota_r = par[3], par[4], par[5], par[6]
        rho, delta, k, mu1, s1sq, mu2 = par[7], par[8], par[9], par[10], par[11], par[12]
        # ∫ λ over the step, exact for the decaying intensity
        if delta > 0.0:
            Lam = lam * (-np.expm1(-delta * h)) / delta
        else:
            Lam = lam * h
        Xn = (
            X
            + (r * X + pi * (mu0 - r) + rho * k * mu2 * ((1.0 + iota_r) * v - iota_r + iota)) * h
            + ((1.0 + kappa_r) * u - kappa_r + kappa) * mu1 * Lam
            + pi * sigma0 * (dw + par[27] * h)
        )
        o = -par[22] * (mu0 - r) / sigma0
        i, w = coord(t, par)
        comp = par[23] * kappa_r * mu1 * mu1 / s1sq * Lam + rho * par[24] * lk(tabs, 5, i, w) * h
        if par[26] == 1.0:
            Yn = Y * np.exp(o * dw - 0.5 * o * o * h - comp)
        else:
            Yn = Y * (1.0 + o * dw - comp)
        return Xn, Yn, lam * np.exp(-delta * h)

    @wrap
    def jump_event(t, typ, z, X, Y, lam, u, v, par, tabs):
        """Ordinary claim (typ 1) or catastrophe (typ 2) at the pre-jump controls."""
        o1 = (typ == 1) * 1.0
        o2 = (typ == 2) * 1.0
        i, w = coord(t, par)
        qs = np.exp(-lk(tabs, 0, i, w) * z) * (1.0 + lk(tabs, 4, i, w) * z) - 1.0
        Xn = X - o1 * u * z - o2 * par[9] * v * z
        Yn = Y * (1.0 + o1 * par[23] * par[4] * par[10] * z / par[11] + o2 * par[24] * qs)
        return Xn, Yn, lam + o2 * z

    @wrap
    def jump_identity(t, X, Y, lam, par, tabs):
        """(G X + 2 Y H + I - c, |G X| + |2 Y H| + |I| + |c|)."""
        i, w = coord(t, par)
        G = np.exp(par[0] * (par[14] - t))
        I = lk(tabs, 2, i, w) * lam + lk(tabs, 3, i, w)
        YH2 = Y * np.exp(lk(tabs, 0, i, w) * lam + lk(tabs, 1, i, w)) / par[13]
        res = G * X + YH2 + I - par[15]
        return res, np.abs(G * X) + np.abs(YH2) + np.abs(I) + np.abs(par[15])

    # ------------------------------------------------------- diffusion model

    @wrap
    def diffusion_controls(t, X, Y, lam, par, tabs):
        i, w = coord(t, par)
        G = np.exp(par[0] * (par[14] - t))
        xi = lk(tabs, 0, i, w)
        e = lk(tabs, 1, i, w)
        a = lk(tabs, 3, i, w)
        H = np.exp(xi * lam * lam + e * lam + lk(tabs, 2, i, w)) / (2.0 * par[13])
        fb = par[25]
        D = fb * (2.0 * H * Y / G) + (1.0 - fb) * (par[15] - G * X - (a * lam + lk(tabs, 4, i, w))) / G
        pi = par[16] * (par[1] - par[0]) * D / (par[2] * par[2]) + par[19]
        u = par[17] * par[4] * par[10] * lam * par[8] * D / (par[11] * par[7] * par[12]) + par[20]
        v = par[18] * ((par[6] * par[12] / par[28] + 2.0 * xi * lam + e) * D + a / G) / par[9] + par[21]
        return pi, u, v

    @wrap
    def diffusion_euler(t, h, dw0, dw1, dw2, X, Y, lam, pi, u, v, par, tabs):
        r, mu0, sigma0 = par[0], par[1], par[2]
        kappa, kappa_r, iota, iota_r = par[3], par[4], par[5], par[6]
        rho, delta, k, mu1, s1sq, mu2, s2sq = par[7], par[8], par[9], par[10], par[11], par[12], par[28]
        vol1 = np.sqrt(s1sq * rho * mu2 / delta)
        vol2 = np.sqrt(s2sq * rho)
        Xn = (
            X
            + (r * X + pi * (mu0 - r) + (kappa_r * u - kappa_r + kappa) * mu1 * lam
               + (iota_r * v - iota_r + iota) * k * mu2 * rho) * h
            + pi * sigma0 * dw0
            - u * vol1 * dw1
            - k * v * vol2 * dw2
        )
        lamn = lam + (-delta * lam + rho * mu2) * h + vol2 * dw2
        o = -par[22] * (mu0 - r) / sigma0
        p = par[23] * kappa_r * mu1 * lam / vol1
        q = par[24] * iota_r * mu2 * np.sqrt(rho) / np.sqrt(s2sq)
        scheme = par[26]
        if scheme == 1.0:
            Yn = Y * np.exp(o * dw0 + p * dw1 + q * dw2 - 0.5 * (o * o + p * p + q * q) * h)
        elif scheme == 2.0:
            # Euler on Z = Y H, then Y = Z / H at the new node
            i, w = coord(t, par)
            xi = lk(tabs, 0, i, w)
            e = lk(tabs, 1, i, w)
            c0, c1 = par[29], par[30]
            a2 = 2.0 * rho * s2sq
            dxi = -(a2 * xi * xi - 2.0 * delta * xi + c0)
            deta = (delta - a2 * xi) * e - 2.0 * c1 * xi
            dzeta = -(c1 * e + 0.5 * rho * s2sq * e * e + rho * s2sq * xi + par[31])
            L1 = 2.0 * xi * lam + e
            m = (
                dxi * lam * lam + deta * lam + dzeta
                + (-delta * lam + rho * mu2) * L1
                + 0.5 * rho * s2sq * (L1 * L1 + 2.0 * xi)
                + q * vol2 * L1
            )
            H = np.exp(xi * lam * lam + e * lam + lk(tabs, 2, i, w)) / (2.0 * par[13])
            Zn = Y * H * (1.0 + m * h + o * dw0 + p * dw1 + (q + vol2 * L1) * dw2)
            i2, w2 = coord(t + h, par)
            Hn = np.exp(
                lk(tabs, 0, i2, w2) * lamn * lamn + lk(tabs, 1, i2, w2) * lamn + lk(tabs, 2, i2, w2)
            ) / (2.0 * par[13])
            Yn = Zn / Hn
        else:
            Yn = Y * (1.0 + o * dw0 + p * dw1 + q * dw2)
        return Xn, Yn, lamn

    @wrap
    def diffusion_identity(t, X, Y, lam, par, tabs):
        i, w = coord(t, par)
        G = np.exp(par[0] * (par[14] - t))
        I = lk(tabs, 3, i, w) * lam + lk(tabs, 4, i, w)
        YH2 = Y * np.exp(lk(tabs, 0, i, w) * lam * lam + lk(tabs, 1, i, w) * lam + lk(tabs, 2, i, w)) / par[13]
        res = G * X + YH2 + I - par[15]
        return res, np.abs(G * X) + np.abs(YH2) + np.abs(I) + np.abs(par[15])

    return SimpleNamespace(**{k: v for k, v in locals().items() if callable(v) and k != "wrap"})


# --------------------------------------------------------------- kernels
#
# Shapes (m paths, K nodes, R record points):
#   t_node (m, K), h (m, K-1), dw (m, K-1[, 3]), ev_type (m, K) int64,
#   ev_mark (m, K), rec_idx (m, R) int64, x0 (m, 3) initial (X, Y, λ)
# Outputs: rec (m, R, 6) and diag (m, 4) = max|identity|, max scale,
#   nonfinite flag, first nonfinite time.


def _make_assemble(wrap):
    @wrap
    def assemble(fine_t, sqrt_h, node_mask, z, ev_t, ev_typ, ev_mark, bz, record_pos, sign,
                 t_row, dw_row, typ_row, mark_row, rec_row):
        """Merge the Euler grid with the event times of one path.

        W is built on the fine grid from the normals z; an event inside a
        fine cell gets a Brownian-bridge value from normals bz, bridged
        sequentially from the previous event in the same cell. Writes the
        node arrays into the given rows and returns the node count.
        """
        n_w = z.shape[1]
        F = fine_t.size - 1
        E = ev_t.size
        W = np.zeros(n_w)
        Wb = np.zeros(n_w)
        left_W = np.zeros(n_w)
        last_W = np.zeros(n_w)
        t_row[0] = fine_t[0]
        typ_row[0] = 0
        mark_row[0] = 0.0
        k = 1
        g = 1
        r = 0
        if record_pos[0] == 0:
            rec_row[0] = 0
            r = 1
        e = 0
        for j in range(F):
            a = fine_t[j]
            b = fine_t[j + 1]
            for c in range(n_w):
                Wb[c] = W[c] + sign * sqrt_h[j] * z[j, c]
                left_W[c] = W[c]
            left_t = a
            while e < E and ev_t[e] < b:
                te = ev_t[e]
                span = b - left_t
                frac = (te - left_t) / span
                sd = np.sqrt(max((te - left_t) * (b - te) / span, 0.0))
                for c in range(n_w):
                    we = left_W[c] + frac * (Wb[c] - left_W[c]) + sign * sd * bz[e, c]
                    dw_row[k - 1, c] = we - last_W[c]
                    last_W[c] = we
                    left_W[c] = we
                t_row[k] = te
                typ_row[k] = ev_typ[e]
                mark_row[k] = ev_mark[e]
                left_t = te
                k += 1
                e += 1
            if node_mask[j + 1]:
                for c in range(n_w):
                    dw_row[k - 1, c] = Wb[c] - last_W[c]
                    last_W[c] = Wb[c]
                t_row[k] = b
                typ_row[k] = 0
                mark_row[k] = 0.0
                if r < record_pos.size and record_pos[r] == g:
                    rec_row[r] = k
                    r += 1
                g += 1
                k += 1
            for c in range(n_w):
                W[c] = Wb[c]
        return k

    return assemble


assemble_py = _make_assemble(lambda f: f)
assemble_nb = _make_assemble(numba.njit(cache=True, nogil=True)) if HAVE_NUMBA else None


def _make_numpy_kernel(st, jump: bool):
    def kernel(t_node, h, dw, ev_type, ev_mark, rec_idx, x0, par, tabs, rec, diag):
        m, K = t_node.shape
        R = rec_idx.shape[1]
        X, Y, lam = x0[:, 0].copy(), x0[:, 1].copy(), x0[:, 2].copy()
        bad_t = np.full(m, np.nan)
        max_res = np.zeros(m)
        max_scale = np.zeros(m)
        ctrl = st.jump_controls if jump else st.diffusion_controls
        ident = st.jump_identity if jump else st.diffusion_identity
        for kk in range(K):
            t = t_node[:, kk]
            if jump and kk > 0:
                _, u, v = ctrl(t, X, Y, lam, par, tabs)
                X, Y, lam = st.jump_event(t, ev_type[:, kk], ev_mark[:, kk], X, Y, lam, u, v, par, tabs)
            res, sc = ident(t, X, Y, lam, par, tabs)
            max_res = np.maximum(max_res, np.abs(res))
            max_scale = np.maximum(max_scale, sc)
            pi, u, v = ctrl(t, X, Y, lam, par, tabs)
            fin = np.isfinite(X) & np.isfinite(Y) & np.isfinite(lam)
            bad_t = np.where(~fin & np.isnan(bad_t), t, bad_t)
            for j in range(R):
                hit = rec_idx[:, j] == kk
                if hit.any():
                    for f, val in enumerate((X, Y, lam, pi, u, v)):
                        rec[hit, j, f] = val[hit]
            if kk < K - 1:
                if jump:
                    X, Y, lam = st.jump_euler(t, h[:, kk], dw[:, kk], X, Y, lam, pi, u, v, par, tabs)
                else:
                    X, Y, lam = st.diffusion_euler(
                        t, h[:, kk], dw[:, kk, 0], dw[:, kk, 1], dw[:, kk, 2], X, Y, lam, pi, u, v, par, tabs
                    )
        diag[:, 0] = max_res
        diag[:, 1] = max_scale
        diag[:, 2] = np.where(np.isnan(bad_t), 0.0, 1.0)
        diag[:, 3] = bad_t

    return kernel


_PY = _make_steps(lambda f: f)
_jump_kernel_py = _make_numpy_kernel(_PY, True)
_diffusion_kernel_py = _make_numpy_kernel(_PY, False)


if HAVE_NUMBA:
    _NB = _make_steps(numba.njit(cache=True, nogil=True))
    _jc, _je, _jv, _ji = _NB.jump_controls, _NB.jump_euler, _NB.jump_event, _NB.jump_identity
    _dc, _de, _di = _NB.diffusion_controls, _NB.diffusion_euler, _NB.diffusion_identity

    @numba.njit(cache=True, nogil=True)
    def _jump_kernel_nb(t_node, h, dw, ev_type, ev_mark, rec_idx, x0, par, tabs, rec, diag):
        m, K = t_node.shape
        R = rec_idx.shape[1]
        for i in range(m):
            X, Y, lam = x0[i, 0], x0[i, 1], x0[i, 2]
            max_res = 0.0
            max_scale = 0.0
            bad = 0.0
            bad_t = np.nan
            j = 0
            for kk in range(K):
                t = t_node[i, kk]
                if kk > 0 and ev_type[i, kk] != 0:
                    _, u, v = _jc(t, X, Y, lam, par, tabs)
                    X, Y, lam = _jv(t, ev_type[i, kk], ev_mark[i, kk], X, Y, lam, u, v, par, tabs)
                res, sc = _ji(t, X, Y, lam, par, tabs)
                max_res = max(max_res, abs(res))
                max_scale = max(max_scale, sc)
                pi, u, v = _jc(t, X, Y, lam, par, tabs)
                if bad == 0.0 and not (np.isfinite(X) and np.isfinite(Y) and np.isfinite(lam)):
                    bad = 1.0
                    bad_t = t
                while j < R and rec_idx[i, j] == kk:
                    rec[i, j, 0] = X
                    rec[i, j, 1] = Y
                    rec[i, j, 2] = lam
                    rec[i, j, 3] = pi
                    rec[i, j, 4] = u
                    rec[i, j, 5] = v
                    j += 1
                if kk < K - 1:
                    X, Y, lam = _je(t, h[i, kk], dw[i, kk], X, Y, lam, pi, u, v, par, tabs)
            diag[i, 0] = max_res
            diag[i, 1] = max_scale
            diag[i, 2] = bad
            diag[i, 3] = bad_t

    @numba.njit(cache=True, nogil=True)
    def _diffusion_kernel_nb(t_node, h, dw, ev_type, ev_mark, rec_idx, x0, par, tabs, rec, diag):
        m, K = t_node.shape
        R = rec_idx.shape[1]
        for i in range(m):
            X, Y, lam = x0[i, 0], x0[i, 1], x0[i, 2]
            max_res = 0.0
            max_scale = 0.0
            bad = 0.0
            bad_t = np.nan
            j = 0
            for kk in range(K):
                t = t_node[i, kk]
                res, sc = _di(t, X, Y, lam, par, tabs)
                max_res = max(max_res, abs(res))
                max_scale = max(max_scale, sc)
                pi, u, v = _dc(t, X, Y, lam, par, tabs)
                if bad == 0.0 and not (np.isfinite(X) and np.isfinite(Y) and np.isfinite(lam)):
                    bad = 1.0
                    bad_t = t
                while j < R and rec_idx[i, j] == kk:
                    rec[i, j, 0] = X
                    rec[i, j, 1] = Y
                    rec[i, j, 2] = lam
                    rec[i, j, 3] = pi
                    rec[i, j, 4] = u
                    rec[i, j, 5] = v
                    j += 1
                if kk < K - 1:
                    X, Y, lam = _de(
                        t, h[i, kk], dw[i, kk, 0], dw[i, kk, 1], dw[i, kk, 2], X, Y, lam, pi, u, v, par, tabs
                    )
            diag[i, 0] = max_res
            diag[i, 1] = max_scale
            diag[i, 2] = bad
            diag[i, 3] = bad_t


def _run(jump: bool, backend: str, *args) -> None:
    if backend == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba backend requested but numba is not importable")
        (_jump_kernel_nb if jump else _diffusion_kernel_nb)(*args)
    elif backend == "numpy":
        (_jump_kernel_py if jump else _diffusion_kernel_py)(*args)
    else:
        raise ValueError(f"unknown backend {backend!r}")


def run_jump_kernel(backend: str, *args) -> None:
    """Jump-engine kernel; see the shape notes above."""
    _run(True, backend, *args)


def run_diffusion_kernel(backend: str, *args) -> None:
    """Diffusion-engine kernel; see the shape notes above."""
    _run(False, backend, *args)
