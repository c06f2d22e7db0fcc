"""Compiled stencils for the block Lindblad generator.

Every term of the generator couples an element (k, n, k', n') of a spin
block to at most nine neighbours, so one fused pass per block replaces a
sequence of full-size numpy temporaries.
"""

import numba
import numpy as np


@numba.njit(cache=True)
def coherent_part(rho, out, energy, jx, sqrt_n, twog, phase, kappa, parity_only):
    """out = -i(H_eff rho - rho H_eff^dag) + kappa a rho a^dag.

    ``energy[k, n]`` is the complex diagonal of H_eff, ``jx[k]`` the
    element <k|J_x|k+1>, and ``phase`` multiplies ``a`` (its conjugate
    multiplies ``a^dag``).  With ``parity_only`` only elements with even
    k + n + k' + n' are computed; the others are left untouched.
    """
    step = 2 if parity_only else 1
    K, F = energy.shape
    cph = np.conj(phase)
    for k in range(K):
        up = twog * jx[k - 1] if k > 0 else 0.0  # couples to k-1
        dn = twog * jx[k] if k + 1 < K else 0.0  # couples to k+1
        ku = k - 1 if k > 0 else k
        kd = k + 1 if k + 1 < K else k
        for n in range(F):
            e_l = energy[k, n]
            sa = sqrt_n[n + 1] if n + 1 < F else 0.0
            sd = sqrt_n[n]
            na = n + 1 if n + 1 < F else n
            nd = n - 1 if n > 0 else n
            for kp in range(K):
                upr = twog * jx[kp - 1] if kp > 0 else 0.0
                dnr = twog * jx[kp] if kp + 1 < K else 0.0
                kpu = kp - 1 if kp > 0 else kp
                kpd = kp + 1 if kp + 1 < K else kp
                start = (k + n + kp) % 2 if parity_only else 0
                for npr in range(start, F, step):
                    acc = (e_l - np.conj(energy[kp, npr])) * rho[k, n, kp, npr]
                    # terms multiplying a (phase) and a^dag (conj phase)
                    ta = sa * (up * rho[ku, na, kp, npr] + dn * rho[kd, na, kp, npr])
                    td = sd * (up * rho[ku, nd, kp, npr] + dn * rho[kd, nd, kp, npr])
                    sra = sqrt_n[npr]
                    npd = npr - 1 if npr > 0 else npr
                    ta -= sra * (upr * rho[k, n, kpu, npd] + dnr * rho[k, n, kpd, npd])
                    if npr + 1 < F:
                        srd = sqrt_n[npr + 1]
                        td -= srd * (upr * rho[k, n, kpu, npr + 1] + dnr * rho[k, n, kpd, npr + 1])
                    acc += phase * ta + cph * td
                    val = -1j * acc
                    if kappa != 0.0 and n + 1 < F and npr + 1 < F:
                        val += kappa * sa * sqrt_n[npr + 1] * rho[k, na, kp, npr + 1]
                    out[k, n, kp, npr] = val


@numba.njit(cache=True)
def add_jump(out, src, lo, hi, shift, w):
    """out[K, :, K', :] += w[K-lo, K'-lo] src[K+shift, :, K'+shift, :]."""
    F = out.shape[1]
    for k in range(lo, hi):
        for n in range(F):
            for kp in range(lo, hi):
                c = w[k - lo, kp - lo]
                for npr in range(F):
                    out[k, n, kp, npr] += c * src[k + shift, n, kp + shift, npr]
