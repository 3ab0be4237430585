"""Synthetic hierarchical regression problems with group-structured precisions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import HierarchicalDataset, InvalidInputError, SubTaskData, symmetrize


@dataclass(frozen=True)
class SyntheticSpec:
    """Generation settings; defaults follow the 7 × 15 × 50 benchmark with 100 samples."""

    T: int = 7
    m: int = 15
    d: int = 50
    n: int = 100
    dof: int = 10
    groups: int = 3
    noise_var: float = 0.1
    seed: int = 0
    within: float = 0.7
    ridge: float = 0.01

    def __post_init__(self):
        for name in ("T", "m", "d", "n", "dof", "groups"):
            if getattr(self, name) < 1:
                raise InvalidInputError(f"{name} must be >= 1")
        if self.groups > self.m:
            raise InvalidInputError("groups cannot exceed m")
        if self.noise_var < 0:
            raise InvalidInputError("noise_var must be nonnegative")


def make_group_scale_matrix(m, groups, within=0.7, jitter=0.0):
    """Block matrix with unit diagonal and ``within`` inside each group.

    Sub-tasks are split into ``groups`` contiguous blocks whose sizes differ
    by at most one. ``jitter`` is added to the diagonal.
    """
    if not 0 <= within < 1:
        raise InvalidInputError(f"within must lie in [0, 1) to stay positive definite, got {within}")
    if not 1 <= groups <= m:
        raise InvalidInputError("groups must be between 1 and m")
    scale = np.zeros((m, m))
    for block in np.array_split(np.arange(m), groups):
        scale[np.ix_(block, block)] = within
    np.fill_diagonal(scale, 1.0 + jitter)
    return scale


def sample_wishart(scale, dof, rng, ridge=0.01):
    """Wishart(scale, dof) draw ``Σ g gᵀ`` with ``g ~ N(0, scale)``, plus ``ridge · I``.

    With ``dof < m`` the raw draw is singular; the ridge keeps it positive definite.
    """
    scale = np.asarray(scale, dtype=float)
    if dof < 1:
        raise InvalidInputError("dof must be >= 1")
    try:
        chol = np.linalg.cholesky(symmetrize(scale))
    except np.linalg.LinAlgError as exc:
        raise InvalidInputError("Wishart scale matrix must be positive definite") from exc
    g = rng.standard_normal((dof, scale.shape[0])) @ chol.T
    return symmetrize(g.T @ g) + ridge * np.eye(scale.shape[0])


def sample_precision_rows(omega, n_rows, rng):
    """Rows drawn from N(0, Ω⁻¹) using the Cholesky factor of the precision."""
    chol = np.linalg.cholesky(omega)
    z = rng.standard_normal((omega.shape[0], n_rows))
    return np.linalg.solve(chol.T, z).T


def generate_hierarchical_dataset(spec=None):
    """Draw a dataset together with the true weights and precisions.

    Random numbers are consumed super-task by super-task in the order
    precision, weights, designs, noise. A dataset with fewer super-tasks is
    therefore a prefix of one generated with more (same seed otherwise).

    Returns
    -------
    dataset : HierarchicalDataset
    thetas : list of (d, m) arrays
    omegas : list of (m, m) arrays
    """
    spec = spec or SyntheticSpec()
    rng = np.random.default_rng(spec.seed)
    scale = make_group_scale_matrix(spec.m, spec.groups, spec.within)
    super_tasks, thetas, omegas = [], [], []
    for _ in range(spec.T):
        omega = sample_wishart(scale, spec.dof, rng, spec.ridge)
        theta = sample_precision_rows(omega, spec.d, rng)
        Xs = rng.standard_normal((spec.m, spec.n, spec.d))
        noise = np.sqrt(spec.noise_var) * rng.standard_normal((spec.m, spec.n))
        super_tasks.append(tuple(
            SubTaskData(Xs[k], Xs[k] @ theta[:, k] + noise[k]) for k in range(spec.m)))
        thetas.append(theta)
        omegas.append(omega)
    return HierarchicalDataset(tuple(super_tasks)), thetas, omegas


def split_samples(dataset, n_train):
    """First ``n_train`` rows of every sub-task for training, the rest for testing."""
    train, test = [], []
    for st in dataset:
        train.append(tuple(SubTaskData(s.X[:n_train], s.y[:n_train]) for s in st))
        test.append(tuple(SubTaskData(s.X[n_train:], s.y[n_train:]) for s in st))
    return HierarchicalDataset(tuple(train)), HierarchicalDataset(tuple(test))


@dataclass(frozen=True)
class ClimateSynthSpec:
    """Settings of the gridded pseudo-climate generator."""

    rows: int = 5
    cols: int = 5
    d: int = 32
    variables: tuple = ("temperature", "precipitation")
    start_year: int = 1901
    years: int = 100
    seed: int = 0

    def __post_init__(self):
        for name in ("rows", "cols", "d", "years"):
            if getattr(self, name) < 1:
                raise InvalidInputError(f"{name} must be >= 1")
        if not self.variables:
            raise InvalidInputError("need at least one variable")
        object.__setattr__(self, "variables", tuple(self.variables))


# level, seasonal amplitude, trend per century, anomaly sd, for the first two variables
_CLIMATE_PROFILES = ((24.0, 3.0, 1.0, 0.8), (12.0, 6.0, -0.5, 2.5))


def _smooth_field(rng, rows, cols, scale):
    """Spatially smooth random field: a random plane plus a gentle bump."""
    r, c = np.meshgrid(np.linspace(-1, 1, rows), np.linspace(-1, 1, cols), indexing="ij")
    a, b, e = rng.standard_normal(3)
    return (scale * (a * r + b * c + e * np.exp(-(r ** 2 + c ** 2)))).ravel()


def generate_synthetic_climate(spec=None):
    """Monthly pseudo-observations and ``d`` biased, noisy pseudo-models on a lattice.

    For every variable and location a truth series (seasonal cycle, linear
    trend, AR(1) anomalies) is drawn. Model ``j`` reports
    ``a_j(loc) · truth + b_j(loc) + noise_j`` with spatially smooth scale
    errors ``a`` and biases ``b`` and model-specific noise levels; the
    observation is the truth plus a small measurement error.

    Returns
    -------
    ClimateTable
    """
    from .data_io import ClimateTable
    from .baselines import GridSpec

    spec = spec or ClimateSynthSpec()
    rng = np.random.default_rng(spec.seed)
    m, d = spec.rows * spec.cols, spec.d
    n = 12 * spec.years
    idx = np.arange(n)
    years = spec.start_year + idx // 12
    months = 1 + idx % 12
    phase = np.cos(2 * np.pi * (months - 1) / 12)
    time_frac = idx / n
    lat = np.repeat(-5.0 - 5.0 * np.arange(spec.rows), spec.cols)
    lon = np.tile(-70.0 + 5.0 * np.arange(spec.cols), spec.rows)

    observed = np.empty((len(spec.variables), m, n))
    esm = np.empty((len(spec.variables), m, n, d))
    for v, _ in enumerate(spec.variables):
        level, amp, trend, sd = _CLIMATE_PROFILES[v % len(_CLIMATE_PROFILES)]
        level_field = level + _smooth_field(rng, spec.rows, spec.cols, 0.2 * level)
        model_scale = 1.0 + 0.15 * rng.standard_normal(d)
        model_bias = sd * (0.5 + rng.standard_normal(d))
        model_noise = sd * rng.uniform(0.3, 1.5, size=d)
        scale_fields = [_smooth_field(rng, spec.rows, spec.cols, 0.05) for _ in range(d)]
        bias_fields = [_smooth_field(rng, spec.rows, spec.cols, 0.5 * sd) for _ in range(d)]
        for k in range(m):
            eps = sd * rng.standard_normal(n)
            anomaly = np.empty(n)
            anomaly[0] = eps[0]
            for i in range(1, n):
                anomaly[i] = 0.6 * anomaly[i - 1] + np.sqrt(1 - 0.36) * eps[i]
            truth = level_field[k] + amp * phase + trend * time_frac + anomaly
            observed[v, k] = truth + 0.2 * sd * rng.standard_normal(n)
            a = model_scale + np.array([f[k] for f in scale_fields])
            b = model_bias + np.array([f[k] for f in bias_fields])
            noise = model_noise * rng.standard_normal((n, d))
            esm[v, k] = truth[:, None] * a + b + noise
    return ClimateTable(spec.variables, tuple(range(1, m + 1)), years, months, years.copy(),
                        observed, esm, lat, lon, GridSpec(spec.rows, spec.cols))
