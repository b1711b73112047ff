"""Optional compiled inner loop for 1+1-dimensional kernel sums.

Sources are sorted by state once; each query scans the contiguous state
window of the inner kernel's support and filters on the parameter window,
evaluating both polynomial kernels by Horner's rule. Falls back silently to
the numpy cell engine when numba is unavailable.
"""

from __future__ import annotations

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is an optional accelerator
    HAVE_NUMBA = False


if HAVE_NUMBA:

    @numba.njit(cache=True, nogil=True)
    def _bisect_left(a, x):
        lo = 0
        hi = a.shape[0]
        while lo < hi:
            mid = (lo + hi) // 2
            if a[mid] < x:
                lo = mid + 1
            else:
                hi = mid
        return lo

    @numba.njit(cache=True, nogil=True)
    def _bisect_right(a, x):
        lo = 0
        hi = a.shape[0]
        while lo < hi:
            mid = (lo + hi) // 2
            if x < a[mid]:
                hi = mid
            else:
                lo = mid + 1
        return lo

    @numba.njit(cache=True, nogil=True)
    def accumulate_1d(q_l, q_z, src_l, src_z, orig_idx, exclude, h,
                      ck, cdk, ch, rk, rh, out_s, out_g):
        """Kernel value and gradient sums per query; sources sorted by state."""
        for qi in range(q_l.shape[0]):
            lq = q_l[qi]
            zq = q_z[qi]
            lo = _bisect_left(src_z, zq - h * rh)
            hi = _bisect_right(src_z, zq + h * rh)
            excl = exclude[qi]
            s_acc = 0.0
            g_acc = 0.0
            for jj in range(lo, hi):
                if orig_idx[jj] == excl:
                    continue
                dl = (lq - src_l[jj]) / h
                if dl < -rk or dl > rk:
                    continue
                dz = (zq - src_z[jj]) / h
                kv = ck[ck.shape[0] - 1]
                for c in range(ck.shape[0] - 2, -1, -1):
                    kv = kv * dl + ck[c]
                dv = cdk[cdk.shape[0] - 1]
                for c in range(cdk.shape[0] - 2, -1, -1):
                    dv = dv * dl + cdk[c]
                hv = ch[ch.shape[0] - 1]
                for c in range(ch.shape[0] - 2, -1, -1):
                    hv = hv * dz + ch[c]
                s_acc += kv * hv
                g_acc += dv * hv
            out_s[qi] = s_acc
            out_g[qi] = g_acc


def fast_sums_1d(lambdas, zs, q_l, q_z, exclude, h, kernel_K, kernel_H):
    """Driver for the compiled loop; returns (S, G) like the cell engine."""
    order = np.argsort(zs[:, 0], kind="stable")
    src_l = np.ascontiguousarray(lambdas[order, 0])
    src_z = np.ascontiguousarray(zs[order, 0])
    n_q = q_l.shape[0]
    out_s = np.zeros(n_q)
    out_g = np.zeros(n_q)
    accumulate_1d(
        np.ascontiguousarray(q_l[:, 0]),
        np.ascontiguousarray(q_z[:, 0]),
        src_l,
        src_z,
        order.astype(np.int64),
        exclude,
        float(h),
        np.ascontiguousarray(kernel_K.factors[0].poly_coef),
        np.ascontiguousarray(kernel_K.factors[0].dpoly_coef),
        np.ascontiguousarray(kernel_H.factors[0].poly_coef),
        float(kernel_K.factors[0].support_radius),
        float(kernel_H.factors[0].support_radius),
        out_s,
        out_g,
    )
    return out_s, out_g[:, None]


def fast_path_available(kernel_K, kernel_H, d: int, n: int) -> bool:
    return (
        HAVE_NUMBA
        and d == 1
        and n == 1
        and kernel_K.factors[0].poly_coef is not None
        and kernel_H.factors[0].poly_coef is not None
    )
