"""Compiled inner loops for the VI optimiser.

These mirror ``vi._log_joint_batch`` for a single parameter vector and run
the whole Adam loop without returning to Python. Draws are generated by the
caller so results stay tied to numpy's Generator streams.
"""

import math

import numpy as np
from numba import njit

FAMILY_CODES = {"linear": 0, "sigmoid": 1, "constant": 2}

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@njit(cache=True)
def log_joint_grad(theta, x, y, K, d, p, fam, pv, lp_const, ig_a, ig_b, grad, buf):
    """Value of the log joint at theta; gradient written into ``grad``.

    ``buf`` is scratch space of shape (4, K).
    """
    n = x.shape[0]
    o_a1 = K
    o_b = K + K * d
    o_u = o_b + K * p
    n_coef = o_u
    val = lp_const
    for i in range(n_coef):
        val -= 0.5 * theta[i] * theta[i] / pv[i]
        grad[i] = -theta[i] / pv[i]
    for k in range(K):
        u = theta[o_u + k]
        inv = math.exp(-u)
        val += -ig_a * u - ig_b * inv
        grad[o_u + k] = -ig_a + ig_b * inv

    logit = buf[0]
    lj = buf[1]
    mu = buf[2]
    dmu = buf[3]
    for i in range(n):
        for k in range(K):
            z = theta[k]
            for j in range(d):
                z += x[i, j] * theta[o_a1 + k * d + j]
            logit[k] = z
            if fam == 0:
                m = theta[o_b + k * p]
                for j in range(d):
                    m += x[i, j] * theta[o_b + k * p + 1 + j]
                dmu[k] = 1.0
            elif fam == 1:
                z2 = 0.0
                for j in range(d):
                    z2 += x[i, j] * theta[o_b + k * p + j]
                if z2 >= 0:
                    m = 1.0 / (1.0 + math.exp(-z2))
                else:
                    ez = math.exp(z2)
                    m = ez / (1.0 + ez)
                dmu[k] = m * (1.0 - m)
            else:
                m = theta[o_b + k * p]
                dmu[k] = 1.0
            mu[k] = m
        lmax = logit[0]
        for k in range(1, K):
            if logit[k] > lmax:
                lmax = logit[k]
        gsum = 0.0
        for k in range(K):
            gsum += math.exp(logit[k] - lmax)
        lse_gate = lmax + math.log(gsum)
        jmax = -np.inf
        for k in range(K):
            u = theta[o_u + k]
            r = y[i] - mu[k]
            lj[k] = logit[k] - lse_gate - _HALF_LOG_2PI - 0.5 * u - 0.5 * r * r * math.exp(-u)
            if lj[k] > jmax:
                jmax = lj[k]
        jsum = 0.0
        for k in range(K):
            jsum += math.exp(lj[k] - jmax)
        ll = jmax + math.log(jsum)
        val += ll
        for k in range(K):
            resp = math.exp(lj[k] - ll)
            gate = math.exp(logit[k] - lse_gate)
            dl = resp - gate
            grad[k] += dl
            for j in range(d):
                grad[o_a1 + k * d + j] += dl * x[i, j]
            u = theta[o_u + k]
            inv = math.exp(-u)
            r = y[i] - mu[k]
            w = resp * r * inv * dmu[k]
            if fam == 0:
                grad[o_b + k * p] += w
                for j in range(d):
                    grad[o_b + k * p + 1 + j] += w * x[i, j]
            elif fam == 1:
                for j in range(d):
                    grad[o_b + k * p + j] += w * x[i, j]
            else:
                grad[o_b + k * p] += w
            grad[o_u + k] += resp * (0.5 * r * r * inv - 0.5)
    return val


@njit(cache=True)
def adam_loop(m, s, eps_all, x, y, K, d, p, fam, pv, lp_const, ig_a, ig_b,
              lrs, b1, b2, ae, trace):
    """Single-draw pathwise Adam ascent; returns 0 or the failing iteration (1-based)."""
    P = m.shape[0]
    T = eps_all.shape[0]
    mom = np.zeros(2 * P)
    vel = np.zeros(2 * P)
    theta = np.empty(P)
    g = np.empty(P)
    gfull = np.empty(2 * P)
    buf = np.empty((4, K))
    half_log_2pi = _HALF_LOG_2PI
    for t in range(1, T + 1):
        eps = eps_all[t - 1]
        entropy = 0.0
        for i in range(P):
            sd = math.exp(s[i])
            theta[i] = m[i] + eps[i] * sd
            entropy += half_log_2pi + 0.5 + s[i]
        val = log_joint_grad(theta, x, y, K, d, p, fam, pv, lp_const, ig_a, ig_b, g, buf)
        elbo = val + entropy
        trace[t - 1] = elbo
        ok = math.isfinite(elbo)
        for i in range(P):
            gfull[i] = g[i]
            gfull[P + i] = g[i] * eps[i] * math.exp(s[i]) + 1.0
        for i in range(2 * P):
            if not math.isfinite(gfull[i]):
                ok = False
        if not ok:
            return t
        c1 = 1.0 - b1 ** t
        c2 = 1.0 - b2 ** t
        for i in range(2 * P):
            mom[i] = b1 * mom[i] + (1.0 - b1) * gfull[i]
            vel[i] = b2 * vel[i] + (1.0 - b2) * gfull[i] * gfull[i]
            step = lrs[t - 1] * (mom[i] / c1) / (math.sqrt(vel[i] / c2) + ae)
            if i < P:
                m[i] += step
            else:
                s[i - P] += step
    return 0
