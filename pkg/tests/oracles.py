"""Slow, independent reference implementations used only by the tests."""

import math

import numpy as np
from scipy import integrate

MASK = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15


def _mix(z):
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK
    return z ^ (z >> 31)


def node_stream(seed, tree, node):
    s = _mix((seed + GOLDEN) & MASK)
    s = _mix(s ^ ((tree + GOLDEN) & MASK))
    return _mix(s ^ ((node + GOLDEN) & MASK))


def sampled_covariates(seed, tree, node, k, mtry):
    state = node_stream(seed, tree, node)
    cand = list(range(k))
    for i in range(mtry):
        state = (state + GOLDEN) & MASK
        u = (_mix(state) >> 11) * (1.0 / 9007199254740992.0)
        r = min(int(u * (k - i)), k - i - 1)
        cand[i], cand[i + r] = cand[i + r], cand[i]
    return sorted(cand[:mtry])


def walk(tree, x):
    """Leaf reached by ``x``, replaying the split predicates one node at a time."""
    node = 0
    while tree.feature[node] >= 0:
        node = tree.left[node] if x[tree.feature[node]] <= tree.threshold[node] else tree.right[node]
    return node


def brute_force_weights(forest, x):
    """w_t(x) with leaf membership recomputed by predicate replay for every record.

    Uses the same arithmetic order as the library: per tree ``c * (1 / |L|)``
    accumulated over trees in ascending order, then divided by B.
    """
    B, N = forest.counts.shape
    w = [0.0] * N
    for b in range(B):
        tree = forest.tree(b)
        leaf = walk(tree, x)
        members = [t for t in range(N) if forest.counts[b, t] > 0 and walk(tree, forest.train_stats[t]) == leaf]
        size = float(sum(int(forest.counts[b, t]) for t in members))
        inv = 1.0 / size
        for t in members:
            w[t] += int(forest.counts[b, t]) * inv
    return np.array([v / B for v in w])


def split_scores(X, y, counts, rows, j):
    """All (score, threshold) candidates for covariate j on the given in-bag rows."""
    order = sorted(rows, key=lambda t: (X[t, j], t))
    W = float(sum(counts[t] for t in rows))
    S = float(sum(counts[t] * y[t] for t in rows))
    out = []
    wl = sl = 0.0
    for a, b in zip(order[:-1], order[1:]):
        wl += counts[a]
        sl += counts[a] * y[a]
        if X[b, j] > X[a, j]:
            out.append((sl * sl / wl + (S - sl) ** 2 / (W - wl), 0.5 * (X[a, j] + X[b, j])))
    return out


def inverse_gamma_moments_by_quadrature(shape, scale):
    """Mean, variance, and a CDF function from numerical integration of the density."""

    def logpdf(x):
        return shape * math.log(scale) - math.lgamma(shape) - (shape + 1) * math.log(x) - scale / x

    def pdf(x):
        return math.exp(logpdf(x)) if x > 0 else 0.0

    mode = scale / (shape + 1)
    pts = [mode * f for f in (0.25, 0.5, 1, 2, 4, 8)]
    mass = integrate.quad(pdf, 0, np.inf, points=None, epsabs=0, epsrel=1e-12, limit=500)[0]
    m1 = sum(integrate.quad(lambda x: x * pdf(x), a, b, epsabs=0, epsrel=1e-13, limit=500)[0]
             for a, b in zip([0] + pts, pts + [np.inf]))
    m2 = sum(integrate.quad(lambda x: x * x * pdf(x), a, b, epsabs=0, epsrel=1e-13, limit=500)[0]
             for a, b in zip([0] + pts, pts + [np.inf]))

    def cdf(q):
        return integrate.quad(pdf, 0, q, epsabs=0, epsrel=1e-12, limit=500)[0]

    return mass, m1, m2 - m1 * m1, cdf


def zellner_covariance_mc(y, X, draws=1_000_000, seed=0):
    """Cov(beta1, beta2 | y) by self-normalized importance sampling.

    The target is the unnormalized joint posterior written directly from the
    likelihood and the priors, so no closed form is shared with the library.
    Returns (covariance, effective sample size).
    """
    rng = np.random.default_rng(seed)
    n = len(y)
    xtx = X.T @ X
    v = np.linalg.inv(xtx)
    bhat = v @ X.T @ y
    rss = float(np.sum((y - X @ bhat) ** 2))

    # proposal: sigma2 ~ IG(a, c), beta | sigma2 ~ N(m, s * sigma2 * V); wider than the target
    a, c = n / 2.0 + 2.0, rss / 2.0 + 3.0
    s = 1.5
    m = bhat * n / (n + 1.0)
    sigma2 = c / rng.gamma(a, 1.0, size=draws)
    chol = np.linalg.cholesky(s * v)
    z = rng.standard_normal((draws, 2))
    beta = m + (z @ chol.T) * np.sqrt(sigma2)[:, None]

    def quad(d, A):
        return np.einsum("ij,jk,ik->i", d, A, d)

    resid2 = rss + quad(beta - bhat, xtx)  # ||y - X beta||^2
    log_target = (
        -(n / 2.0) * np.log(sigma2) - resid2 / (2 * sigma2)
        - np.log(sigma2) - quad(beta, xtx) / (2 * n * sigma2)
        - 5.0 * np.log(sigma2) - 3.0 / sigma2
    )
    log_prop = (
        -(a + 1.0) * np.log(sigma2) - c / sigma2
        - np.log(sigma2) - quad(beta - m, xtx) / (2 * s * sigma2)
    )
    lw = log_target - log_prop
    w = np.exp(lw - lw.max())
    w /= w.sum()
    mu = w @ beta
    d = beta - mu
    cov = float(w @ (d[:, 0] * d[:, 1]))
    return cov, 1.0 / float(w @ w)
