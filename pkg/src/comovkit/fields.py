"""Scalar field bundles on Minkowski space and their derived velocity fields.

A *field bundle* packages a positive density p(x) and a phase S(x) on a
declared box domain, together with analytic first and second derivatives.
Two constructive families are provided:

* ``make_plane_wave`` - a single mode with the relativistic dispersion
  relation, p identically 1 and a globally linear phase;
* ``make_packet`` - a finite positive-weight superposition of such modes.
  The density is the squared modulus of the superposition, and the phase is
  the continuously unwrapped argument.

For superpositions the phase *value* needs a branch choice: the argument is
accumulated along axis sweeps from the domain corner on a lattice sized by a
rigorous phase-rate bound, and off-lattice values combine the trilinearly
interpolated lattice phase (branch selection only) with the exact local
argument, so S keeps the smoothness of the underlying field.

The gradient of the phase divided by the mass is the current four-velocity
field; the half-log-gradient of the density scaled by hbar/2m is the osmotic
four-velocity. ``check_theorem_hypotheses`` scans a lattice for the three
conditions the chart construction needs: nonvanishing time component of the
phase gradient, closedness of its derivative (symmetric second derivatives),
and timelike character.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .constants import PhysicalConstants, raise_index
from .errors import DensityZero, NodeInDomain, OutOfDomain

DENSITY_FLOOR = 1e-12


# ---------------------------------------------------------------------------
# points, boxes, lattices


@dataclass(frozen=True)
class SpacetimePoint:
    """A frame-tagged event. Coordinates are (x0, x1, x2, x3)."""

    coords: tuple
    frame: str = "inertial"

    def __post_init__(self):
        arr = np.asarray(self.coords, dtype=float)
        if arr.shape != (4,) or not np.all(np.isfinite(arr)):
            raise ValueError("SpacetimePoint needs 4 finite coordinates")
        object.__setattr__(self, "coords", tuple(arr))
        if self.frame not in ("inertial", "comoving"):
            raise ValueError("frame must be 'inertial' or 'comoving'")

    @property
    def array(self):
        return np.asarray(self.coords, dtype=float)


def as_coords(point, frame="inertial"):
    """Coerce a SpacetimePoint or array-like to a (..., 4) float array.

    SpacetimePoint inputs must carry the expected frame tag; mixing frames
    is a hard error rather than a silent reinterpretation.
    """
    if isinstance(point, SpacetimePoint):
        if point.frame != frame:
            raise ValueError(
                f"point is tagged '{point.frame}' but a '{frame}' point is required"
            )
        return point.array
    arr = np.asarray(point, dtype=float)
    if arr.shape[-1] != 4:
        raise ValueError("expected coordinates with trailing dimension 4")
    return arr


@dataclass(frozen=True)
class Box:
    """Axis-aligned box, any dimension."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("box bounds must be 1-d arrays of equal length")
        if not np.all(hi > lo):
            raise ValueError("box must have positive extent on every axis")
        object.__setattr__(self, "lo", tuple(lo))
        object.__setattr__(self, "hi", tuple(hi))

    @property
    def ndim(self):
        return len(self.lo)

    @property
    def lo_array(self):
        return np.asarray(self.lo, dtype=float)

    @property
    def hi_array(self):
        return np.asarray(self.hi, dtype=float)

    @property
    def extent(self):
        return self.hi_array - self.lo_array

    def contains(self, x, margin=0.0):
        x = np.asarray(x, dtype=float)
        lo = self.lo_array + margin
        hi = self.hi_array - margin
        return np.all((x >= lo) & (x <= hi), axis=-1)

    def grid(self, shape):
        """Tensor lattice of the given per-axis point counts, as (N, ndim)."""
        axes = [
            np.linspace(self.lo[i], self.hi[i], int(shape[i]))
            for i in range(self.ndim)
        ]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1), axes


def default_plane_wave_box(half_width=1e6):
    return Box((-half_width,) * 4, (half_width,) * 4)


# ---------------------------------------------------------------------------
# scalar fields and differentiation


class ScalarField:
    """A scalar function on spacetime with optional analytic derivatives.

    ``gradient`` and ``hessian``, when absent, are filled in by central
    finite differences of ``value`` with step ``fd_step``.
    """

    def __init__(self, value, gradient=None, hessian=None, domain=None,
                 smoothness_order=2, fd_step=1e-3, name=""):
        self._value = value
        self._gradient = gradient
        self._hessian = hessian
        self.domain = domain
        self.smoothness_order = smoothness_order
        self.fd_step = fd_step
        self.name = name

    @property
    def derivative_mode(self):
        return "analytic" if self._gradient is not None else "fd"

    def value(self, x):
        return self._value(np.asarray(x, dtype=float))

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        if self._gradient is not None:
            return self._gradient(x)
        return _fd_gradient(self._value, x, self.fd_step)

    def hessian(self, x):
        x = np.asarray(x, dtype=float)
        if self._hessian is not None:
            return self._hessian(x)
        return _fd_hessian(self._value, x, self.fd_step)


def _fd_gradient(f, x, h):
    x = np.asarray(x, dtype=float)
    out = np.empty(x.shape, dtype=float)
    for mu in range(x.shape[-1]):
        e = np.zeros(x.shape[-1])
        e[mu] = h
        out[..., mu] = (f(x + e) - f(x - e)) / (2.0 * h)
    return out


def _fd_hessian(f, x, h):
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    out = np.empty(x.shape[:-1] + (n, n), dtype=float)
    f0 = f(x)
    for mu in range(n):
        emu = np.zeros(n)
        emu[mu] = h
        out[..., mu, mu] = (f(x + emu) - 2.0 * f0 + f(x - emu)) / h ** 2
        for nu in range(mu + 1, n):
            enu = np.zeros(n)
            enu[nu] = h
            mixed = (
                f(x + emu + enu) - f(x + emu - enu)
                - f(x - emu + enu) + f(x - emu - enu)
            ) / (4.0 * h ** 2)
            out[..., mu, nu] = mixed
            out[..., nu, mu] = mixed
    return out


def differentiate(fld, point, multi_index, step=None):
    """Partial derivative of a scalar field at a point.

    ``multi_index`` is a tuple of axis indices: ``()`` returns the value,
    ``(mu,)`` a first derivative, ``(mu, nu)`` a second derivative. The
    order must not exceed the field's smoothness order, and the point must
    sit inside the field domain with a margin of twice the FD step.
    """
    if not isinstance(fld, ScalarField):
        fld = ScalarField(fld, fd_step=step or 1e-3)
    order = len(multi_index)
    if order > fld.smoothness_order:
        raise ValueError(
            f"derivative order {order} exceeds smoothness order {fld.smoothness_order}"
        )
    x = as_coords(point)
    h = step or fld.fd_step
    if fld.domain is not None and not np.all(fld.domain.contains(x, margin=2.0 * h)):
        raise OutOfDomain(
            f"point {np.asarray(x).tolist()} is not interior to the field domain "
            f"with margin {2.0 * h:g}"
        )
    if order == 0:
        return fld.value(x)
    if order == 1:
        return fld.gradient(x)[..., multi_index[0]]
    if order == 2:
        return fld.hessian(x)[..., multi_index[0], multi_index[1]]
    raise ValueError("only derivatives up to order 2 are supported")


# ---------------------------------------------------------------------------
# four-vector fields


class FourVectorField:
    """A four-component vector field with explicit variance and frame tags.

    Index raising/lowering with the constant Minkowski metric is only
    meaningful for inertial-frame fields; comoving-frame fields need the
    chart metric and refuse the operation here.
    """

    def __init__(self, components, variance, frame="inertial", name=""):
        if variance not in ("covariant", "contravariant"):
            raise ValueError("variance must be 'covariant' or 'contravariant'")
        if frame not in ("inertial", "comoving"):
            raise ValueError("frame must be 'inertial' or 'comoving'")
        self._components = components
        self.variance = variance
        self.frame = frame
        self.name = name

    def __call__(self, x):
        return self._components(np.asarray(x, dtype=float))

    def with_flipped_index(self):
        """Raise a covariant field / lower a contravariant one with eta."""
        if self.frame != "inertial":
            raise ValueError(
                "index raising with the flat metric is only valid in the inertial frame"
            )
        other = "contravariant" if self.variance == "covariant" else "covariant"
        return FourVectorField(
            lambda x: raise_index(self._components(x)),
            variance=other,
            frame=self.frame,
            name=self.name,
        )

    def minkowski_norm_squared(self, x):
        if self.frame != "inertial":
            raise ValueError("flat norm is only defined for inertial-frame fields")
        comp = self(x)
        return np.einsum("...i,...i->...", comp, raise_index(comp))


# ---------------------------------------------------------------------------
# bundles


class FieldBundle:
    """Density + phase pair with analytic derivatives on a box domain.

    Subclasses implement `_density*` and `_phase*`; the public accessors
    route through the derivative mode so a finite-difference view of the
    same bundle (``with_fd_derivatives``) exercises the generic fallback.
    """

    def __init__(self, constants, domain, smoothness_order=np.inf,
                 derivative_mode="analytic", fd_step=1e-3):
        self.constants = constants
        self.domain = domain
        self.smoothness_order = smoothness_order
        self.derivative_mode = derivative_mode
        self.fd_step = fd_step

    # subclass interface -----------------------------------------------------
    def _density(self, x):
        raise NotImplementedError

    def _density_gradient(self, x):
        raise NotImplementedError

    def _density_hessian(self, x):
        raise NotImplementedError

    def _phase(self, x):
        raise NotImplementedError

    def _phase_gradient(self, x):
        raise NotImplementedError

    def _phase_hessian(self, x):
        raise NotImplementedError

    # public API ---------------------------------------------------------
    def density(self, x):
        return self._density(as_coords(x))

    def phase(self, x):
        return self._phase(as_coords(x))

    def density_gradient(self, x):
        x = as_coords(x)
        if self.derivative_mode == "analytic":
            return self._density_gradient(x)
        return _fd_gradient(self._density, x, self.fd_step)

    def density_hessian(self, x):
        x = as_coords(x)
        if self.derivative_mode == "analytic":
            return self._density_hessian(x)
        return _fd_hessian(self._density, x, self.fd_step)

    def phase_gradient(self, x):
        x = as_coords(x)
        if self.derivative_mode == "analytic":
            return self._phase_gradient(x)
        return _fd_gradient(self._phase, x, self.fd_step)

    def phase_hessian(self, x):
        x = as_coords(x)
        if self.derivative_mode == "analytic":
            return self._phase_hessian(x)
        return _fd_hessian(self._phase, x, self.fd_step)

    def amplitude(self, x):
        """Complex field sqrt(p) * exp(i S / hbar)."""
        x = as_coords(x)
        return np.sqrt(self.density(x)) * np.exp(
            1j * self.phase(x) / self.constants.hbar
        )

    def amplitude_gradient(self, x):
        """Analytic gradient of the complex field, from p and S derivatives."""
        x = as_coords(x)
        p = self.density(x)
        dp = self.density_gradient(x)
        ds = self.phase_gradient(x)
        amp = self.amplitude(x)
        log_grad = dp / (2.0 * p[..., None]) + 1j * ds / self.constants.hbar
        return amp[..., None] * log_grad

    def density_field(self):
        grad = self._density_gradient if self.derivative_mode == "analytic" else None
        hess = self._density_hessian if self.derivative_mode == "analytic" else None
        return ScalarField(self._density, grad, hess, self.domain,
                           self.smoothness_order, self.fd_step, name="density")

    def phase_field(self):
        grad = self._phase_gradient if self.derivative_mode == "analytic" else None
        hess = self._phase_hessian if self.derivative_mode == "analytic" else None
        return ScalarField(self._phase, grad, hess, self.domain,
                           self.smoothness_order, self.fd_step, name="phase")

    def with_fd_derivatives(self, step):
        """A view of this bundle whose derivatives come from central FD."""
        import copy

        view = copy.copy(self)
        view.derivative_mode = "fd"
        view.fd_step = step
        return view

    def conjugate(self):
        """Phase-conjugated view of this bundle: same p, S -> -S."""
        return ConjugateBundle(self)


class ConjugateBundle(FieldBundle):
    """Complex conjugate of a bundle: density unchanged, phase negated.

    Conjugation maps positive-frequency solutions onto the opposite branch,
    so the four-current flips sign everywhere and the solution class swaps.
    Conjugating twice returns the original bundle object.
    """

    def __init__(self, base):
        super().__init__(base.constants, base.domain,
                         smoothness_order=base.smoothness_order,
                         derivative_mode=base.derivative_mode,
                         fd_step=base.fd_step)
        self.base = base

    def conjugate(self):
        return self.base

    def _density(self, x):
        return self.base._density(x)

    def _density_gradient(self, x):
        return self.base._density_gradient(x)

    def _density_hessian(self, x):
        return self.base._density_hessian(x)

    def _phase(self, x):
        return -self.base._phase(x)

    def _phase_gradient(self, x):
        return -self.base._phase_gradient(x)

    def _phase_hessian(self, x):
        return -self.base._phase_hessian(x)


class PlaneWaveBundle(FieldBundle):
    """Single-mode bundle: p = 1 and S = hbar (k.x - omega t).

    omega defaults to the relativistic dispersion value; passing
    ``frequency`` overrides it (used for detuned negative controls).
    """

    def __init__(self, k, constants, domain, frequency=None):
        super().__init__(constants, domain)
        self.k = np.asarray(k, dtype=float)
        kc = constants.compton_wavenumber
        self.omega = (
            float(frequency)
            if frequency is not None
            else constants.c * np.sqrt(self.k @ self.k + kc ** 2)
        )
        # covariant phase wave-vector: partial_mu S / hbar
        self.kappa = np.concatenate(([-self.omega / constants.c], self.k))

    @property
    def velocity(self):
        """Three-velocity c^2 k / omega of the phase congruence."""
        return self.constants.c ** 2 * self.k / self.omega

    def _density(self, x):
        return np.ones(np.asarray(x).shape[:-1])

    def _density_gradient(self, x):
        return np.zeros(np.asarray(x).shape)

    def _density_hessian(self, x):
        return np.zeros(np.asarray(x).shape + (4,))

    def _phase(self, x):
        return self.constants.hbar * (np.asarray(x) @ self.kappa)

    def _phase_gradient(self, x):
        return np.broadcast_to(
            self.constants.hbar * self.kappa, np.asarray(x).shape
        ).copy()

    def _phase_hessian(self, x):
        return np.zeros(np.asarray(x).shape + (4,))


class PacketBundle(FieldBundle):
    """Positive-weight superposition of dispersion-relation modes.

    Derivatives of p and S are computed from the complex mode sum (exact,
    no unwrapping needed); phase *values* use a cached lattice branch.
    """

    def __init__(self, wavevectors, weights, constants, domain,
                 floor=None, _skip_node_check=False):
        super().__init__(constants, domain)
        self.wavevectors = np.atleast_2d(np.asarray(wavevectors, dtype=float))
        self.weights = np.asarray(weights, dtype=float)
        if self.wavevectors.shape != (self.weights.size, 3):
            raise ValueError("wavevectors must be (n_modes, 3) matching weights")
        if np.any(self.weights <= 0):
            raise ValueError("mode weights must be positive")
        if self.weights.size < 1:
            raise ValueError("at least one mode is required")
        kc = constants.compton_wavenumber
        self.omegas = constants.c * np.sqrt(
            np.einsum("jm,jm->j", self.wavevectors, self.wavevectors) + kc ** 2
        )
        # covariant per-mode wave four-vectors (rows: partial_mu theta_j)
        self.kappas = np.concatenate(
            [(-self.omegas / constants.c)[:, None], self.wavevectors], axis=1
        )
        self.floor = (
            float(floor) if floor is not None else 1e-6 * float(self.weights.sum())
        )
        self._phase_cache = None
        if not _skip_node_check:
            self._check_for_nodes()

    # --- mode bookkeeping -------------------------------------------------
    @property
    def dominant_index(self):
        return int(np.argmax(self.weights))

    @property
    def dominance_margin(self):
        """w0 - sum of the other weights; positive means globally node-free."""
        j0 = self.dominant_index
        return float(self.weights[j0] - (self.weights.sum() - self.weights[j0]))

    def _mode_phases(self, x):
        return np.asarray(x) @ self.kappas.T  # (..., n_modes)

    def _amp(self, x):
        return np.exp(1j * self._mode_phases(x)) @ self.weights

    def _amp_mu(self, x):
        th = self._mode_phases(x)
        return np.einsum(
            "...j,jm->...m", np.exp(1j * th) * self.weights, 1j * self.kappas
        )

    def _amp_munu(self, x):
        th = self._mode_phases(x)
        kk = -np.einsum("jm,jn->jmn", self.kappas, self.kappas)
        return np.einsum("...j,jmn->...mn", np.exp(1j * th) * self.weights, kk)

    # --- node detection ---------------------------------------------------
    def _check_for_nodes(self):
        if self.dominance_margin > self.floor:
            return
        # No dominance certificate: scan a lattice and flag cells that could
        # hide a zero, using the Lipschitz bound |grad |phi|| <= sum w |kappa|.
        lip = float(self.weights @ np.linalg.norm(self.kappas, axis=1))
        extent = self.domain.extent
        shape = np.minimum(
            np.maximum((extent * lip / np.pi).astype(int) + 2, 5), 40
        )
        pts, _ = self.domain.grid(shape)
        mod = np.abs(self._amp(pts))
        spacing = float(np.max(extent / (shape - 1)))
        # half the cell diagonal bounds the distance to the nearest sample
        reach = 0.5 * spacing * 2.0
        threshold = max(self.floor, lip * reach)
        m = float(mod.min())
        if m < threshold:
            worst = pts[int(np.argmin(mod))]
            raise NodeInDomain(
                f"field modulus reaches {m:.3e} at {worst.tolist()} "
                f"(floor plus Lipschitz reach {threshold:.3e}); a zero may lie "
                "inside the domain"
            )

    # --- phase branch cache -------------------------------------------------
    def _phase_rate_bounds(self):
        """Rigorous bounds on |grad arg phi| and |grad^2 arg phi|.

        Writing phi = w0 exp(i theta0) (1 + R), R = sum_{j!=0} (wj/w0)
        exp(i (theta_j - theta0)), the argument deviates from the carrier by
        arg(1+R), whose derivatives are bounded through the dominance margin.
        """
        j0 = self.dominant_index
        margin = self.dominance_margin
        if margin <= 0:
            raise ValueError(
                "phase values need a dominant mode (weight above the sum of "
                "the others); this superposition has no single-valued branch "
                "certificate"
            )
        dk = np.linalg.norm(self.kappas - self.kappas[j0], axis=1)
        w = self.weights
        rest = np.arange(w.size) != j0
        s1 = float(w[rest] @ dk[rest])
        s2 = float(w[rest] @ dk[rest] ** 2)
        rate1 = float(np.linalg.norm(self.kappas[j0])) + s1 / margin
        rate2 = (s2 + s1 ** 2 / margin) / margin
        return rate1, rate2

    def _build_phase_cache(self):
        if self.weights.size == 1:
            return None
        rate1, rate2 = self._phase_rate_bounds()
        # the interpolated branch must stay within pi of the true argument;
        # a Lipschitz bound over the full 4-d cell diagonal (2 * spacing)
        # with a factor-2 safety margin gives spacing <= pi / (4 rate1)
        spacing = np.pi / (4.0 * rate1)
        if rate2 > 0:
            spacing = min(spacing, np.sqrt(np.pi / (2.0 * rate2)))
        extent = self.domain.extent
        shape = np.maximum((extent / spacing).astype(int) + 2, 2)
        if np.prod(shape.astype(float)) > 4e7:
            raise ValueError(
                "phase branch cache would need "
                f"{np.prod(shape.astype(float)):.2e} lattice nodes; shrink the "
                "domain or the mode spread"
            )
        pts, axes = self.domain.grid(shape)
        raw = np.angle(self._amp(pts)).reshape(tuple(shape))
        # grow a coherent branch corner-outward, one axis at a time
        raw[:, 0, 0, 0] = np.unwrap(raw[:, 0, 0, 0])
        raw[:, :, 0, 0] = np.unwrap(raw[:, :, 0, 0], axis=1)
        raw[:, :, :, 0] = np.unwrap(raw[:, :, :, 0], axis=2)
        raw = np.unwrap(raw, axis=3)
        return RegularGridInterpolator(axes, raw, method="linear",
                                       bounds_error=False, fill_value=None)

    def _branch_phase(self, x):
        if self._phase_cache is None:
            self._phase_cache = self._build_phase_cache()
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        pts = x[None] if single else x.reshape(-1, 4)
        local = np.angle(self._amp(pts))
        approx = self._phase_cache(pts)
        turns = np.round((approx - local) / (2.0 * np.pi))
        out = local + 2.0 * np.pi * turns
        return out[0] if single else out.reshape(x.shape[:-1])

    # --- bundle interface ---------------------------------------------------
    def _density(self, x):
        a = self._amp(x)
        return (a * a.conj()).real

    def _density_gradient(self, x):
        a = self._amp(x)
        da = self._amp_mu(x)
        return 2.0 * (a.conj()[..., None] * da).real

    def _density_hessian(self, x):
        da = self._amp_mu(x)
        dda = self._amp_munu(x)
        a = self._amp(x)
        return 2.0 * (
            np.einsum("...m,...n->...mn", da.conj(), da)
            + a.conj()[..., None, None] * dda
        ).real

    def _phase(self, x):
        x = np.asarray(x, dtype=float)
        if self.weights.size == 1:
            return self.constants.hbar * self._mode_phases(x)[..., 0]
        return self.constants.hbar * self._branch_phase(x)

    def _phase_gradient(self, x):
        a = self._amp(x)
        da = self._amp_mu(x)
        return self.constants.hbar * (da / a[..., None]).imag

    def _phase_hessian(self, x):
        a = self._amp(x)
        da = self._amp_mu(x)
        dda = self._amp_munu(x)
        la = da / a[..., None]
        return self.constants.hbar * (
            dda / a[..., None, None] - np.einsum("...m,...n->...mn", la, la)
        ).imag


def make_plane_wave(k, constants=None, domain=None, frequency=None):
    """Plane-wave bundle with dispersion-relation frequency.

    Plane waves are globally analytic with unit density, so the default
    domain is a very large box; pass a Box to restrict it.
    """
    constants = constants or PhysicalConstants()
    domain = domain or default_plane_wave_box()
    return PlaneWaveBundle(k, constants, domain, frequency=frequency)


def make_packet(wavevectors, weights, domain, constants=None, floor=None):
    """Superposition bundle over a required box domain.

    Raises NodeInDomain when the modulus provably (dominance certificate)
    cannot stay above the floor, or when a lattice scan finds values below
    the floor plus the cell Lipschitz reach.
    """
    constants = constants or PhysicalConstants()
    if not isinstance(domain, Box):
        raise ValueError("packet bundles require an explicit Box domain")
    return PacketBundle(wavevectors, weights, constants, domain, floor=floor)


# ---------------------------------------------------------------------------
# derived velocity fields


def four_velocity(bundle):
    """Covariant current four-velocity V_mu = (partial_mu S) / m."""
    m = bundle.constants.mass

    def comp(x):
        return bundle.phase_gradient(x) / m

    return FourVectorField(comp, "covariant", "inertial", name="four_velocity")


def four_velocity_contravariant(bundle):
    return four_velocity(bundle).with_flipped_index()


def congruence_speed(bundle, x):
    """sqrt(-V_mu V^mu): c for on-shell plane waves, near c for packets."""
    v = four_velocity(bundle)(x)
    return np.sqrt(-np.einsum("...i,...i->...", v, raise_index(v)))


def osmotic_four_velocity(bundle, floor=DENSITY_FLOOR):
    """Covariant osmotic four-velocity U_mu = (hbar/2m) partial_mu ln p."""
    scale = bundle.constants.hbar / (2.0 * bundle.constants.mass)

    def comp(x):
        p = bundle.density(x)
        if np.any(p < floor):
            raise DensityZero(
                f"density fell below the positivity floor {floor:g}"
            )
        return scale * bundle.density_gradient(x) / np.asarray(p)[..., None]

    return FourVectorField(comp, "covariant", "inertial", name="osmotic_four_velocity")


# ---------------------------------------------------------------------------
# hypothesis checking


@dataclass
class HypothesisReport:
    """Lattice scan summary for the chart-construction hypotheses.

    (i)   the time component of the phase gradient never vanishes,
    (ii)  the derivative of the four-velocity is symmetric (closed form),
    (iii) the four-velocity is timelike everywhere.
    """

    min_abs_v0: float
    v0_sign_change: bool
    max_closedness: float
    timelike_fraction: float
    min_density: float
    v0_floor: float
    closedness_tol: float
    lattice_shape: tuple
    argmin_v0: tuple
    violated: list = field(default_factory=list)

    @property
    def passed(self):
        return not self.violated

    def to_dict(self):
        return {
            "min_abs_v0": self.min_abs_v0,
            "v0_sign_change": self.v0_sign_change,
            "max_closedness": self.max_closedness,
            "timelike_fraction": self.timelike_fraction,
            "min_density": self.min_density,
            "v0_floor": self.v0_floor,
            "closedness_tol": self.closedness_tol,
            "lattice_shape": list(self.lattice_shape),
            "argmin_v0": list(self.argmin_v0),
            "violated": list(self.violated),
            "passed": self.passed,
        }


def check_theorem_hypotheses(bundle, box=None, shape=(7, 7, 7, 7),
                             v0_floor=None, closedness_tol=None):
    """Scan a lattice for the three chart-construction hypotheses.

    Returns a HypothesisReport; ``violated`` holds labels "(i)", "(ii)",
    "(iii)" for every failed condition, in that order.
    """
    c = bundle.constants.c
    if box is None:
        lo = bundle.domain.lo_array
        hi = bundle.domain.hi_array
        # plane-wave default domains are huge; scan a representative window
        half = np.minimum((hi - lo) / 2.0, 4.0)
        mid = (lo + hi) / 2.0
        box = Box(mid - half, mid + half)
    pts, _ = box.grid(shape)

    v = bundle.phase_gradient(pts) / bundle.constants.mass
    v0 = v[..., 0]
    vv = np.einsum("...i,...i->...", v, raise_index(v))
    hess = bundle.phase_hessian(pts)
    closedness = np.max(np.abs(hess - np.swapaxes(hess, -1, -2)), axis=(-1, -2))

    if v0_floor is None:
        v0_floor = 1e-8 * c
    if closedness_tol is None:
        scale = float(np.max(np.abs(hess))) + 1e-300
        closedness_tol = 1e-10 * scale + 1e-14

    min_abs_v0 = float(np.min(np.abs(v0)))
    # a sign change proves a zero of V_0 between lattice points even when
    # no sample lands near it
    sign_change = bool((np.max(v0) > 0.0) and (np.min(v0) < 0.0))
    max_closed = float(np.max(closedness))
    timelike = float(np.mean(vv < 0.0))
    argmin = pts[int(np.argmin(np.abs(v0)))]

    violated = []
    if min_abs_v0 <= v0_floor or sign_change:
        violated.append("(i)")
    if max_closed >= closedness_tol:
        violated.append("(ii)")
    if timelike < 1.0:
        violated.append("(iii)")

    return HypothesisReport(
        min_abs_v0=min_abs_v0,
        v0_sign_change=sign_change,
        max_closedness=max_closed,
        timelike_fraction=timelike,
        min_density=float(np.min(bundle.density(pts))),
        v0_floor=float(v0_floor),
        closedness_tol=float(closedness_tol),
        lattice_shape=tuple(int(s) for s in shape),
        argmin_v0=tuple(float(t) for t in argmin),
        violated=violated,
    )
