"""Reference numpy implementations of the hot loops (used when the extension is unavailable).

Signatures match ``rebus._ckernels`` exactly.
"""

import math

import numpy as np


def _sigmoid(x):
    if x >= 0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


def _softplus(x):
    # log(1 + exp(x))
    if x > 0:
        return x + math.log1p(math.exp(-x))
    return math.log1p(math.exp(x))


def bpr_grad(P, beta, long_ptr, long_idx, short_ptr, short_idx, short_w, rows, pos, neg,
             alpha, a, b, scale, gP, gbeta):
    """Accumulate ``scale`` times the gradient of sum(-log sigmoid(s_pos - s_neg)) into gP/gbeta.

    Returns the unscaled loss sum.
    """
    k = P.shape[1]
    zero = np.zeros(k)
    loss = 0.0
    for n in range(len(rows)):
        r = rows[n]
        J = long_idx[long_ptr[r]:long_ptr[r + 1]]
        M = short_idx[short_ptr[r]:short_ptr[r + 1]]
        W = short_w[short_ptr[r]:short_ptr[r + 1]]
        S = P[J].sum(axis=0) if len(J) else zero
        st = W @ P[M] if b != 0.0 else zero
        parts = []
        for c in (pos[n], neg[n]):
            in_j = bool(np.any(J == c))
            n_j = len(J) - in_j
            if a != 0.0 and n_j > 0:
                coef = 1.0 / n_j ** alpha
                lt = (S - P[c]) * coef if in_j else S * coef
            else:
                coef = 0.0
                lt = zero
            d = a * lt + b * st - P[c]
            parts.append((c, coef, d, -(beta[c] + d @ d)))
        x = parts[0][3] - parts[1][3]
        loss += _softplus(-x)
        g = -_sigmoid(-x) * scale
        for (c, coef, d, _), e in zip(parts, (g, -g)):
            gbeta[c] -= e
            q = (-2.0 * e) * d
            gP[c] -= q
            if coef != 0.0:
                others = J[J != c]
                gP[others] += (a * coef) * q
            if b != 0.0:
                np.add.at(gP, M, (b * W)[:, None] * q[None, :])
    return loss


def context_vectors(P, long_ptr, long_idx, short_ptr, short_idx, short_w, rows, alpha, a, b):
    """Combined context vector per row, long-term part over the full window set."""
    V = np.zeros((len(rows), P.shape[1]))
    for n in range(len(rows)):
        r = rows[n]
        if a != 0.0:
            J = long_idx[long_ptr[r]:long_ptr[r + 1]]
            if len(J):
                V[n] += (a / len(J) ** alpha) * P[J].sum(axis=0)
        if b != 0.0:
            M = short_idx[short_ptr[r]:short_ptr[r + 1]]
            W = short_w[short_ptr[r]:short_ptr[r + 1]]
            V[n] += b * (W @ P[M])
    return V


def adam_step(theta, grad, m, v, lr, beta1, beta2, eps, t, l2):
    """In-place Adam update of ``theta`` with ``2*l2*theta`` added to ``grad`` first."""
    g = grad + (2.0 * l2) * theta if l2 != 0.0 else grad
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    theta -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
