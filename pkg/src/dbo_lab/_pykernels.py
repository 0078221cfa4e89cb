"""Pure numpy implementations of the hot kernels.

Every function here has a twin in ``_ckernels.pyx``. The gossip sums are
accumulated slot by slot (ascending neighbour index per row), the same order
the compiled loops use, so both backends agree bit-for-bit on the combine.
"""
import numpy as np

NAME = "python"


def gossip(slot_idx, slot_w, z):
    out = np.zeros_like(z)
    for s in range(slot_idx.shape[1]):
        out += slot_w[:, s, None] * z[slot_idx[:, s]]
    return out


def track(slot_idx, slot_w, t_prev, d_prev, d):
    return (gossip(slot_idx, slot_w, t_prev) - d_prev) + d


def combine(slot_idx, slot_w, z, t, step, radius):
    out = gossip(slot_idx, slot_w, z + step * t)
    if radius < 0:
        return out, np.zeros(out.shape[0], dtype=bool)
    norms = np.sqrt(np.einsum("ij,ij->i", out, out))
    active = norms > radius
    if active.any():
        out[active] *= (radius / norms[active])[:, None]
    return out, active


def dpsi(t):
    e = np.exp(-np.abs(t))
    return np.where(t >= 0, -e / (1.0 + e), -1.0 / (1.0 + e))


def d2psi(t):
    e = np.exp(-np.abs(t))
    return e / ((1.0 + e) * (1.0 + e))


def logistic_directions(x_tr, y_tr, x_te, y_te, lam, omega, v, w_tr, w_te):
    """Fused (d_y, d_v, d_x) for one agent of the logistic hyperparameter problem."""
    # overflow on a diverging iterate is reported by the caller's finiteness check
    with np.errstate(over="ignore", invalid="ignore"):
        el = np.exp(lam)
        m_tr = y_tr * (x_tr @ omega)
        m_te = y_te * (x_te @ omega)
        g_lower = w_tr * (x_tr.T @ (dpsi(m_tr) * y_tr)) + el * omega
        g_upper = w_te * (x_te.T @ (dpsi(m_te) * y_te))
        hv = w_tr * (x_tr.T @ (d2psi(m_tr) * (x_tr @ v))) + el * v
        return g_lower, g_upper - hv, -(el * omega * v)
