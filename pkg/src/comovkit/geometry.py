"""Numerical differential geometry on the chart's spatial slices.

The comoving metric splits into a time block g00 (a function of the time
coordinate only; -1 in the proper-time gauge) and a spatial 3-metric
sigma on the level surface. A ``MetricPatch`` packages sigma together
with everything downstream code needs: inverse, volume factor, noise
factor G with G G^T = sigma^{-1}, Christoffel symbols, and their
contraction. Curvature comes from finite differences of the Christoffel
field; the error budget C h^2 is calibrated against a flat metric written
in polar coordinates, where every nonzero Riemann component is pure
numerical error. A unit-sphere patch provides the negative control that
must fail the flatness gate.

All index layouts are explicit: Gamma[i, j, k] = Gamma^i_{jk},
riemann[i, k, l, m] = R^i_{klm}, sigma derivative D[i, j, k] =
d_i sigma_{jk}.
"""

import numpy as np

from .constants import ETA
from .errors import NotSpacelike

DEFAULT_H = 1e-2


class MetricPatch:
    """A positive-definite 3-metric field with derived objects.

    ``sigma`` maps a 3-point to a symmetric (3, 3) matrix. Derivatives
    come from ``sigma_gradient`` when supplied (layout D[i, j, k] =
    d_i sigma_jk), otherwise from central differences with ``fd_step``.
    ``g00`` is the time-block function of xi0 (defaults to -1).
    """

    def __init__(self, sigma, g00=None, sigma_gradient=None, fd_step=1e-3,
                 name="", is_constant=False):
        self._sigma = sigma
        self._dsigma = sigma_gradient
        self.g00 = g00 if g00 is not None else (lambda xi0: -1.0)
        self.fd_step = fd_step
        self.name = name
        # constant metrics let the simulator hoist the noise factor out of
        # the step loop and drop the (identically zero) drift correction
        self.is_constant = is_constant

    # --- pointwise metric data ---------------------------------------------
    def metric(self, q):
        q = np.asarray(q, dtype=float)
        sig = np.asarray(self._sigma(q), dtype=float)
        if sig.shape != (3, 3):
            raise ValueError("sigma must evaluate to a 3x3 matrix")
        return sig

    def _spd_factors(self, q):
        sig = self.metric(q)
        w, v = np.linalg.eigh(sig)
        if np.min(w) <= 0.0:
            raise NotSpacelike(
                f"spatial metric not positive-definite at {np.asarray(q).tolist()}: "
                f"eigenvalues {w.tolist()}"
            )
        return sig, w, v

    def inverse(self, q):
        _, w, v = self._spd_factors(q)
        return (v / w) @ v.T

    def sqrt_det(self, q):
        _, w, _ = self._spd_factors(q)
        return float(np.sqrt(np.prod(w)))

    def noise_factor(self, q):
        """Lower-triangular G with G G^T = sigma^{-1}."""
        return np.linalg.cholesky(self.inverse(q))

    # --- derivatives ---------------------------------------------------------
    def sigma_derivatives(self, q, h=None):
        """D[i, j, k] = d sigma_jk / d q^i."""
        q = np.asarray(q, dtype=float)
        if self._dsigma is not None:
            return np.asarray(self._dsigma(q), dtype=float)
        h = h or self.fd_step
        out = np.empty((3, 3, 3))
        for i in range(3):
            e = np.zeros(3)
            e[i] = h
            out[i] = (self.metric(q + e) - self.metric(q - e)) / (2.0 * h)
        return out

    def christoffel(self, q, h=None):
        """Gamma[i, j, k] = 1/2 sigma^{il} (d_j s_lk + d_k s_lj - d_l s_jk)."""
        inv = self.inverse(q)
        d = self.sigma_derivatives(q, h=h)
        # term[l, j, k]
        term = (
            np.transpose(d, (1, 0, 2))   # d_j sigma_lk -> [l, j, k]
            + np.transpose(d, (1, 2, 0))  # d_k sigma_lj -> [l, j, k]
            - d                           # d_l sigma_jk
        )
        return 0.5 * np.einsum("il,ljk->ijk", inv, term)

    def christoffel_contraction(self, q, h=None):
        """sigma^{jk} Gamma^i_{jk}: the curvature correction in drifts."""
        return np.einsum(
            "jk,ijk->i", self.inverse(q), self.christoffel(q, h=h)
        )

    # --- constructors ---------------------------------------------------------
    @classmethod
    def euclidean(cls):
        return cls(lambda q: np.eye(3), name="euclidean", is_constant=True)

    @classmethod
    def constant(cls, sigma_matrix, g00=None):
        mat = np.asarray(sigma_matrix, dtype=float)
        return cls(
            lambda q: mat.copy(),
            g00=g00,
            sigma_gradient=lambda q: np.zeros((3, 3, 3)),
            name="constant",
            is_constant=True,
        )

    @classmethod
    def from_chart(cls, chart, fd_step=1e-3):
        """Graph-coordinate surface metric of the chart's origin level set.

        Spatial points are the base coordinates q; the chart's linear frame
        normalization is a constant reparametrization that leaves all
        curvature quantities unchanged.
        """
        surface = chart.surface
        g00 = chart.time_convention.g00
        return cls(
            lambda q: surface.metric(q), g00=g00, fd_step=fd_step,
            name="chart_surface",
        )


def polar_flat_patch(analytic_derivatives=True):
    """Flat space in cylindrical polar coordinates (r, theta, z).

    sigma = diag(1, r^2, 1): Gamma^r_tt = -r, Gamma^t_rt = 1/r, and every
    Riemann component is exactly zero, which makes this the calibration
    fixture for the finite-difference curvature budget.
    """

    def sigma(q):
        return np.diag([1.0, q[0] ** 2, 1.0])

    def dsigma(q):
        d = np.zeros((3, 3, 3))
        d[0, 1, 1] = 2.0 * q[0]
        return d

    return MetricPatch(
        sigma,
        sigma_gradient=dsigma if analytic_derivatives else None,
        name="polar_flat",
    )


def unit_sphere_patch(analytic_derivatives=True):
    """Unit 2-sphere times a line, coordinates (theta, phi, z).

    sigma = diag(1, sin^2 theta, 1); scalar curvature 2. Serves as the
    negative control that must fail the flatness gate.
    """

    def sigma(q):
        return np.diag([1.0, np.sin(q[0]) ** 2, 1.0])

    def dsigma(q):
        d = np.zeros((3, 3, 3))
        d[0, 1, 1] = np.sin(2.0 * q[0])
        return d

    return MetricPatch(
        sigma,
        sigma_gradient=dsigma if analytic_derivatives else None,
        name="unit_sphere",
    )


# ---------------------------------------------------------------------------
# chart-level metric evaluations


def pullback_metric(chart, xi, step=1e-3):
    """g_munu(xi) = eta_ab (dx^a/dxi^mu)(dx^b/dxi^nu) via the FD Jacobian."""
    a = chart.inverse_jacobian(xi, step=step)
    return a.T @ ETA @ a


def spatial_metric(chart, q):
    """sigma, inverse, volume factor, and noise factor at base point q."""
    patch = MetricPatch.from_chart(chart)
    sig = patch.metric(q)
    inv = patch.inverse(q)
    return {
        "sigma": sig,
        "inverse": inv,
        "sqrt_det": patch.sqrt_det(q),
        "noise_factor": patch.noise_factor(q),
    }


# ---------------------------------------------------------------------------
# curvature


def riemann(patch, q, h=DEFAULT_H):
    """R^i_{klm} from finite differences of the Christoffel field."""
    q = np.asarray(q, dtype=float)
    gamma = patch.christoffel(q, h=h)
    dgamma = np.empty((3, 3, 3, 3))  # dgamma[l, i, k, m] = d_l Gamma^i_km
    for axis in range(3):
        e = np.zeros(3)
        e[axis] = h
        dgamma[axis] = (
            patch.christoffel(q + e, h=h) - patch.christoffel(q - e, h=h)
        ) / (2.0 * h)
    quad = np.einsum("ial,akm->iklm", gamma, gamma)
    r = (
        np.transpose(dgamma, (1, 2, 0, 3))  # d_l Gamma^i_km -> [i,k,l,m]
        - np.transpose(dgamma, (1, 2, 3, 0))  # d_m Gamma^i_kl
        + quad
        - np.transpose(quad, (0, 1, 3, 2))
    )
    return r


def ricci_scalar(patch, q, h=DEFAULT_H):
    """sigma^{km} R^i_{kim}."""
    r = riemann(patch, q, h=h)
    ricci = np.einsum("ikim->km", r)
    return float(np.einsum("km,km->", patch.inverse(q), ricci))


_BUDGET_PROBES = np.array([
    [0.7, 0.3, 0.1],
    [1.3, -0.8, 0.4],
    [0.9, 1.1, -0.6],
    [1.7, 0.2, 0.8],
])


def curvature_budget(h=DEFAULT_H, safety=10.0):
    """FD curvature error budget C h^2, calibrated on the polar fixture.

    The polar patch is exactly flat, so the largest Riemann component it
    produces through the same FD pipeline (sigma derivatives included)
    measures the method error; the budget is that residual times a safety
    factor, floored at a roundoff allowance.
    """
    patch = polar_flat_patch(analytic_derivatives=False)
    resid = max(
        float(np.max(np.abs(riemann(patch, p, h=h)))) for p in _BUDGET_PROBES
    )
    return safety * max(resid, 1e-12)


def flatness_report(patch, points, h=DEFAULT_H, budget=None):
    """Max |R^i_klm| over sample points against the FD budget.

    Returns a JSON-able dict; ``flat`` is True iff the largest residual
    stays below the budget.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if budget is None:
        budget = curvature_budget(h=h)
    worst = 0.0
    worst_point = points[0]
    for p in points:
        val = float(np.max(np.abs(riemann(patch, p, h=h))))
        if val > worst:
            worst = val
            worst_point = p
    return {
        "max_riemann": worst,
        "budget": float(budget),
        "fd_step": float(h),
        "n_points": int(len(points)),
        "worst_point": [float(v) for v in worst_point],
        "flat": bool(worst <= budget),
    }


# ---------------------------------------------------------------------------
# covariant derivatives


def covariant_derivative_covector(patch, u, q, h=None):
    """C[j, k] = d_j u_k - Gamma^l_{jk} u_l for covariant components u_k."""
    q = np.asarray(q, dtype=float)
    h = h or patch.fd_step
    du = np.empty((3, 3))
    for j in range(3):
        e = np.zeros(3)
        e[j] = h
        du[j] = (np.asarray(u(q + e)) - np.asarray(u(q - e))) / (2.0 * h)
    gamma = patch.christoffel(q, h=h)
    return du - np.einsum("ljk,l->jk", gamma, np.asarray(u(q)))


def laplace_beltrami(patch, u, q, h=None):
    """(Delta u)_k = sigma^{ij} (nabla_i nabla_j u)_k for a covector field.

    Metric compatibility of the computed Christoffel symbols is assumed
    (it holds to FD accuracy), so the operator is the trace of the second
    covariant derivative.
    """
    q = np.asarray(q, dtype=float)
    h = h or patch.fd_step
    gamma = patch.christoffel(q, h=h)
    c0 = covariant_derivative_covector(patch, u, q, h=h)
    dc = np.empty((3, 3, 3))  # dc[i, j, k] = d_i C_jk
    for i in range(3):
        e = np.zeros(3)
        e[i] = h
        dc[i] = (
            covariant_derivative_covector(patch, u, q + e, h=h)
            - covariant_derivative_covector(patch, u, q - e, h=h)
        ) / (2.0 * h)
    t = (
        dc
        - np.einsum("mij,mk->ijk", gamma, c0)
        - np.einsum("mik,jm->ijk", gamma, c0)
    )
    return np.einsum("ij,ijk->k", patch.inverse(q), t)


def metric_compatibility_residual(patch, q, h=None):
    """max |nabla_i sigma_jk|; should vanish to FD accuracy."""
    q = np.asarray(q, dtype=float)
    h = h or patch.fd_step
    d = patch.sigma_derivatives(q, h=h)
    gamma = patch.christoffel(q, h=h)
    sig = patch.metric(q)
    nabla = (
        d
        - np.einsum("lij,lk->ijk", gamma, sig)
        - np.einsum("lik,jl->ijk", gamma, sig)
    )
    return float(np.max(np.abs(nabla)))


# ---------------------------------------------------------------------------
# diagnostics


def geometry_diagnostics(chart, half_width=1.0, n_per_axis=3, xi0=0.0,
                         h=DEFAULT_H, jac_step=1e-3):
    """Lattice summary of metric blocks and curvature for one chart."""
    axes = [np.linspace(-half_width, half_width, n_per_axis)] * 3
    mesh = np.meshgrid(*axes, indexing="ij")
    spatial = np.stack([m.ravel() for m in mesh], axis=-1)
    patch = MetricPatch.from_chart(chart)
    budget = curvature_budget(h=h)

    g_records = []
    eig_records = []
    max_g0i = 0.0
    max_g00_dev = 0.0
    for sp in spatial:
        xi = np.concatenate([[xi0], sp])
        g = pullback_metric(chart, xi, step=jac_step)
        g_records.append(g.tolist())
        max_g0i = max(max_g0i, float(np.max(np.abs(g[0, 1:]))))
        max_g00_dev = max(
            max_g00_dev,
            float(abs(g[0, 0] - chart.time_convention.g00(xi0))),
        )
        q = chart.base_origin + chart.frame_matrix_inv @ sp
        eig_records.append(np.linalg.eigvalsh(patch.metric(q)).tolist())

    base_pts = np.stack([
        chart.base_origin + chart.frame_matrix_inv @ sp for sp in spatial
    ])
    flat = flatness_report(patch, base_pts, h=h, budget=budget)
    return {
        "xi0": float(xi0),
        "lattice_half_width": float(half_width),
        "n_points": int(len(spatial)),
        "max_abs_g0i": max_g0i,
        "max_abs_g00_deviation": max_g00_dev,
        "sigma_eigenvalues": eig_records,
        "metric_components": g_records,
        "flatness": flat,
    }
