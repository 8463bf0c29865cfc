"""Diagonal-covariance Gaussian mixture models.

Provides k-means initialization, EM fitting, log-density evaluation,
utterance scoring, and stochastic sampling.  The same type serves as a
per-speaker model and as the universal background model; only the component
count differs.  All probability work happens in log space.
"""

import struct
from dataclasses import dataclass

import numpy as np

LOG_2PI = np.log(2.0 * np.pi)

GMM_MAGIC = b"OSIDGMM1"


@dataclass(frozen=True)
class EmConfig:
    max_iterations: int = 100
    rel_tol: float = 1e-5
    variance_floor: float = 1e-4
    kmeans_iterations: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.rel_tol <= 0.0:
            raise ValueError("rel_tol must be positive")
        if self.variance_floor <= 0.0:
            raise ValueError("variance_floor must be positive")


@dataclass(frozen=True)
class DiagGmm:
    """Mixture weights, means, and per-dimension variances."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=np.float64)
        means = np.asarray(self.means, dtype=np.float64)
        variances = np.asarray(self.variances, dtype=np.float64)
        if means.ndim != 2 or variances.shape != means.shape:
            raise ValueError("means and variances must be matching M x D matrices")
        if weights.shape != (means.shape[0],):
            raise ValueError("weights must have one entry per component")
        if np.any(weights < 0.0) or abs(float(np.sum(weights)) - 1.0) > 1e-9:
            raise ValueError("weights must be non-negative and sum to 1")
        if np.any(variances <= 0.0):
            raise ValueError("variances must be strictly positive")
        object.__setattr__(self, "weights", weights)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", variances)

    @property
    def num_components(self):
        return self.means.shape[0]

    @property
    def dim(self):
        return self.means.shape[1]


def _as_matrix(X):
    """Accept a FeatureSet or a plain array of row vectors."""
    return np.asarray(getattr(X, "vectors", X), dtype=np.float64)


def _logsumexp(a, axis):
    peak = np.max(a, axis=axis, keepdims=True)
    peak = np.where(np.isfinite(peak), peak, 0.0)
    return np.squeeze(peak, axis=axis) + np.log(
        np.sum(np.exp(a - peak), axis=axis))


def _component_log_densities(model, X):
    """N x M matrix of log w_m + log N(x_n; mu_m, diag sigma^2_m).

    The Mahalanobis term is expanded into three matrix products so memory
    stays O(N*M) even for a 1024-component background model.
    """
    inv_var = 1.0 / model.variances
    quad = (X * X) @ inv_var.T
    quad -= 2.0 * (X @ (model.means * inv_var).T)
    quad += np.sum(model.means**2 * inv_var, axis=1)
    log_norm = -0.5 * (model.dim * LOG_2PI + np.sum(np.log(model.variances), axis=1))
    with np.errstate(divide="ignore"):
        log_weights = np.log(model.weights)
    return log_weights + log_norm - 0.5 * quad


def log_density_batch(model, X):
    """Per-row mixture log-density for an N x D matrix."""
    X = _as_matrix(X)
    if X.shape[1] != model.dim:
        raise ValueError(f"expected dimension {model.dim}, got {X.shape[1]}")
    return _logsumexp(_component_log_densities(model, X), axis=1)


def log_density(model, x):
    """log sum_m w_m N(x; mu_m, diag sigma^2_m) for a single vector."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (model.dim,):
        raise ValueError(f"expected a vector of dimension {model.dim}")
    return float(log_density_batch(model, x[None, :])[0])


def mean_log_likelihood(model, X):
    """Average per-frame log-density of an utterance under the model."""
    X = _as_matrix(X)
    if X.shape[0] < 1:
        raise ValueError("feature set must contain at least one frame")
    return float(np.mean(log_density_batch(model, X)))


def kmeans_init(data, num_clusters, iterations=20, seed=0):
    """Lloyd's algorithm from a seeded choice of distinct starting points.

    Clusters that fall empty are re-seeded to the point farthest from its
    currently assigned centroid.  Returns (centroids, assignments).
    """
    data = _as_matrix(data)
    n = data.shape[0]
    if n < num_clusters:
        raise ValueError(f"need at least {num_clusters} points, got {n}")
    rng = np.random.default_rng(seed)
    centroids = data[rng.choice(n, size=num_clusters, replace=False)].copy()
    sq_norms = np.sum(data * data, axis=1)
    assignments = np.zeros(n, dtype=np.intp)
    for _ in range(max(iterations, 1)):
        dists = sq_norms[:, None] - 2.0 * (data @ centroids.T) + np.sum(
            centroids * centroids, axis=1)
        new_assignments = np.argmin(dists, axis=1)
        point_dists = dists[np.arange(n), new_assignments]
        taken = set()
        for k in range(num_clusters):
            members = new_assignments == k
            if np.any(members):
                centroids[k] = np.mean(data[members], axis=0)
            else:
                order = np.argsort(point_dists)[::-1]
                far = next(int(i) for i in order if int(i) not in taken)
                taken.add(far)
                centroids[k] = data[far]
                new_assignments[far] = k
        if np.array_equal(new_assignments, assignments):
            break
        assignments = new_assignments
    return centroids, assignments


def em_fit(data, num_components, cfg=EmConfig(), return_trace=False):
    """Fit a diagonal GMM by EM from a k-means start.

    Iterates until the relative improvement of the mean log-likelihood drops
    below cfg.rel_tol or cfg.max_iterations is reached.  Variances are floored
    after every M-step.  With return_trace=True also returns the per-iteration
    mean log-likelihood sequence, which is non-decreasing up to float noise.
    """
    X = _as_matrix(data)
    n, dim = X.shape
    if n < num_components:
        raise ValueError(f"need at least {num_components} points, got {n}")

    centroids, assignments = kmeans_init(
        X, num_components, cfg.kmeans_iterations, cfg.seed)
    counts = np.bincount(assignments, minlength=num_components).astype(np.float64)
    weights = counts / n
    means = centroids.copy()
    variances = np.full((num_components, dim), cfg.variance_floor)
    for k in range(num_components):
        members = assignments == k
        if np.any(members):
            diff = X[members] - means[k]
            variances[k] = np.maximum(np.mean(diff * diff, axis=0),
                                      cfg.variance_floor)

    model = DiagGmm(weights=weights, means=means, variances=variances)
    xsq = X * X
    trace = []
    prev_ll = -np.inf
    for _ in range(cfg.max_iterations):
        log_joint = _component_log_densities(model, X)
        per_point = _logsumexp(log_joint, axis=1)
        mean_ll = float(np.mean(per_point))
        trace.append(mean_ll)
        if mean_ll - prev_ll < cfg.rel_tol * abs(prev_ll):
            break
        prev_ll = mean_ll

        resp = np.exp(log_joint - per_point[:, None])
        occupancy = np.sum(resp, axis=0)
        safe = np.maximum(occupancy, np.finfo(np.float64).tiny)
        new_means = (resp.T @ X) / safe[:, None]
        new_vars = (resp.T @ xsq) / safe[:, None] - new_means**2
        dead = occupancy <= 0.0
        new_means[dead] = model.means[dead]
        model = DiagGmm(
            weights=occupancy / n,
            means=new_means,
            variances=np.maximum(new_vars, cfg.variance_floor),
        )
    if return_trace:
        return model, np.asarray(trace)
    return model


def sample(model, count, seed=0):
    """Draw count independent vectors from the mixture, seeded."""
    if count < 1:
        raise ValueError("count must be at least 1")
    rng = np.random.default_rng(seed)
    weights = model.weights / np.sum(model.weights)
    picks = rng.choice(model.num_components, size=count, p=weights)
    noise = rng.standard_normal((count, model.dim))
    return model.means[picks] + noise * np.sqrt(model.variances[picks])


def save_gmm(path, model):
    """Serialize to the binary model format; round-trips are bit-exact."""
    with open(path, "wb") as f:
        f.write(GMM_MAGIC)
        f.write(struct.pack("<II", model.num_components, model.dim))
        f.write(np.ascontiguousarray(model.weights, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(model.means, dtype="<f8").tobytes())
        f.write(np.ascontiguousarray(model.variances, dtype="<f8").tobytes())


def load_gmm(path):
    with open(path, "rb") as f:
        magic = f.read(8)
        if magic != GMM_MAGIC:
            raise ValueError(f"{path}: bad magic {magic!r}")
        m, d = struct.unpack("<II", f.read(8))
        weights = np.frombuffer(f.read(m * 8), dtype="<f8")
        means = np.frombuffer(f.read(m * d * 8), dtype="<f8").reshape(m, d)
        variances = np.frombuffer(f.read(m * d * 8), dtype="<f8").reshape(m, d)
        if f.read(1):
            raise ValueError(f"{path}: trailing bytes after model data")
    if weights.size != m or means.size != m * d:
        raise ValueError(f"{path}: truncated model file")
    return DiagGmm(weights=weights.astype(np.float64),
                   means=means.astype(np.float64),
                   variances=variances.astype(np.float64))
