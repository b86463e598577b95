"""Discrete check of what maximizes ``lambda H(Z) - H(Z|Y)``.

The feature sphere is replaced by ``K`` bins and each class by a row of a
``(C, K)`` conditional table. Maximization runs projected gradient ascent from
many random starts; small problems can also be solved by brute force on a
simplex grid. All entropies are in nats.
"""

import itertools
from dataclasses import dataclass

import numpy as np

_LOG_FLOOR = 1e-12


@dataclass
class DiscreteJoint:
    prior: np.ndarray        # (C,) p(y)
    cond: np.ndarray         # (C, K) p(z | y)

    def __post_init__(self):
        self.prior = np.asarray(self.prior, dtype=np.float64)
        self.cond = np.asarray(self.cond, dtype=np.float64)
        if self.cond.ndim != 2 or self.prior.shape != (self.cond.shape[0],):
            raise ValueError("prior must have one entry per row of cond")
        for name, arr, axis in (("prior", self.prior, None), ("cond", self.cond, -1)):
            if np.any(arr < 0) or np.any(np.abs(arr.sum(axis=axis) - 1) > 1e-12):
                raise ValueError(f"{name} rows must be probability vectors")

    @property
    def marginal(self):
        return self.prior @ self.cond


def _entropy(p, axis=-1):
    p = np.asarray(p)
    return -np.sum(np.where(p > 0, p * np.log(np.where(p > 0, p, 1.0)), 0.0), axis=axis)


def entropies(joint):
    """``{"H(Z)", "H(Z|Y)", "H(Y)", "H(Y|Z)"}`` in nats."""
    hz = float(_entropy(joint.marginal))
    hzy = float(joint.prior @ _entropy(joint.cond))
    hy = float(_entropy(joint.prior))
    return {"H(Z)": hz, "H(Z|Y)": hzy, "H(Y)": hy, "H(Y|Z)": hy + hzy - hz}


def lambda_objective(joint, lam):
    h = entropies(joint)
    return lam * h["H(Z)"] - h["H(Z|Y)"]


def _objective_batch(cond, prior, lam):
    q = np.einsum("c,sck->sk", prior, cond)
    return lam * _entropy(q) - _entropy(cond) @ prior


def project_simplex(v):
    """Euclidean projection of each row of ``v`` onto the probability simplex."""
    v = np.asarray(v, dtype=np.float64)
    u = -np.sort(-v, axis=-1)
    css = np.cumsum(u, axis=-1) - 1.0
    k = np.arange(1, v.shape[-1] + 1)
    rho = np.count_nonzero(u - css / k > 0, axis=-1)
    theta = np.take_along_axis(css, (rho - 1)[..., None], axis=-1) / rho[..., None]
    return np.maximum(v - theta, 0.0)


def _gradient(cond, prior, lam):
    # constant per-row terms drop out under the simplex projection
    q = np.einsum("c,sck->sk", prior, cond)
    logp = np.log(np.maximum(cond, _LOG_FLOOR))
    logq = np.log(np.maximum(q, _LOG_FLOOR))
    return prior[None, :, None] * (logp - lam * logq[:, None, :])


def diagnostics(joint, support_tol=1e-6):
    h = entropies(joint)
    weighted = joint.prior[:, None] * joint.cond
    overlap = float(np.sum(weighted.sum(axis=0) - weighted.max(axis=0)))
    marg = joint.marginal
    return {
        "H(Z)": h["H(Z)"],
        "H(Y|Z)": h["H(Y|Z)"],
        "overlap": overlap,
        "support_sizes": [int(n) for n in np.sum(joint.cond > support_tol, axis=1)],
        "marginal": marg.tolist(),
        "uniformity_gap": float(np.max(np.abs(marg - 1.0 / marg.size))),
    }


@dataclass
class SearchResult:
    joint: DiscreteJoint
    objective: float
    converged: bool
    starts_converged: int
    diagnostics: dict


def maximize_lambda_objective(K, C, lam, prior=None, starts=64, step=0.1, max_iter=10_000,
                              tol=1e-13, seed=0):
    """Multi-start projected gradient ascent on the rows of ``p(z|y)``."""
    if K < C:
        raise ValueError("need at least as many bins as classes")
    prior = np.full(C, 1.0 / C) if prior is None else np.asarray(prior, dtype=np.float64)
    rng = np.random.default_rng(seed)
    cond = rng.dirichlet(np.ones(K), size=(starts, C))
    done = np.zeros(starts, dtype=bool)
    for _ in range(max_iter):
        active = ~done
        nxt = project_simplex(cond[active] + step * _gradient(cond[active], prior, lam))
        moved = np.max(np.abs(nxt - cond[active]), axis=(1, 2))
        cond[active] = nxt
        done[np.flatnonzero(active)[moved < tol]] = True
        if done.all():
            break
    values = _objective_batch(cond, prior, lam)
    best = int(np.argmax(values))
    joint = DiscreteJoint(prior, cond[best] / cond[best].sum(axis=1, keepdims=True))
    return SearchResult(joint, lambda_objective(joint, lam), bool(done[best]),
                        int(done.sum()), diagnostics(joint))


def simplex_grid(K, resolution):
    """All points of the K-simplex whose coordinates are multiples of ``1/resolution``."""
    pts = [np.diff([0, *cuts, resolution + K]) - 1
           for cuts in itertools.combinations(range(1, resolution + K), K - 1)]
    return np.array(pts, dtype=np.float64) / resolution


def grid_search(K, C, lam, prior=None, resolution=20):
    """Exhaustive maximization over a simplex grid; practical for ``K <= 4, C <= 2``."""
    prior = np.full(C, 1.0 / C) if prior is None else np.asarray(prior, dtype=np.float64)
    grid = simplex_grid(K, resolution)
    best_val, best = -np.inf, None
    h_rows = _entropy(grid)
    for combo in itertools.product(range(len(grid)), repeat=C - 1):
        rest = grid[list(combo)]                       # (C-1, K)
        q = prior[0] * grid + prior[1:] @ rest         # (G, K)
        vals = lam * _entropy(q) - prior[0] * h_rows - prior[1:] @ h_rows[list(combo)]
        i = int(np.argmax(vals))
        if vals[i] > best_val:
            best_val, best = vals[i], np.vstack([grid[i], rest])
    joint = DiscreteJoint(prior, best)
    return SearchResult(joint, float(best_val), True, 1, diagnostics(joint))


def block_joint(K, C, per_class_bins):
    """Class ``c`` spread uniformly over its own block of ``per_class_bins`` bins."""
    if per_class_bins * C > K:
        raise ValueError("blocks do not fit into K bins")
    cond = np.zeros((C, K))
    for c in range(C):
        cond[c, c * per_class_bins:(c + 1) * per_class_bins] = 1.0 / per_class_bins
    return DiscreteJoint(np.full(C, 1.0 / C), cond)


def lambda_one_invariance(K, C):
    """Objective at ``lambda = 1`` for two different disjoint-support maximizers."""
    return lambda_objective(block_joint(K, C, 1), 1.0), lambda_objective(block_joint(K, C, K // C), 1.0)


def theory_table(K=8, C=2, lambdas=(0.5, 1.0, 1.5), **search):
    rows = []
    for lam in lambdas:
        res = maximize_lambda_objective(K, C, lam, **search)
        d = res.diagnostics
        rows.append({
            "lambda": lam,
            "objective": res.objective,
            "support_sizes": " ".join(map(str, d["support_sizes"])),
            "overlap": d["overlap"],
            "uniformity_gap": d["uniformity_gap"],
            "converged": res.converged,
        })
    return rows
