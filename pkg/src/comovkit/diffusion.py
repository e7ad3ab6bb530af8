"""Stationary Markov kinematics on the spatial slice.

Euler-Maruyama integration of dq^i = beta^i dt + sqrt(nu dt) G^i_k z^k
with G G^T = sigma^{-1}, where beta is the coordinate drift obtained from
the invariant (vector) drift by subtracting the Christoffel contraction.

Reproducibility contract: the noise draw consumed by (path, step) is a
pure function of the master seed, the path's chunk (paths are grouped in
fixed-size chunks set by the config, never by the executor), and the step
index. Chunks evaluate on independent counter-based streams, so any
thread count produces bit-identical ensembles; ``recompute_noise``
rebuilds any single draw from scratch for verification.

Full trajectories at the acceptance scale would need tens of gigabytes,
so ensembles store (state, next state) pairs at a strided set of
post-burn-in steps plus the final step: everything the drift and density
estimators condition on, at a few hundred megabytes.
"""

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigInvalid, Explosion, InsufficientSamples
from .fields import Box

DEFAULT_CHUNK = 16384
DEFAULT_BATCHES = 32


@dataclass
class DiffusionConfig:
    """Simulation parameters; validated on construction."""

    dt: float
    horizon: float
    n_paths: int
    master_seed: int
    nu: float = 1.0
    initial: tuple = ("point", (0.0, 0.0, 0.0))
    burn_in_fraction: float = 0.2
    n_snapshots: int = 24
    chunk_size: int = DEFAULT_CHUNK
    n_threads: int = 1
    clip_box: Box = None
    explosion_radius: float = 1e6

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigInvalid("dt must be positive")
        if self.horizon < 10 * self.dt:
            raise ConfigInvalid("horizon must be at least 10 dt")
        if self.n_paths < 1:
            raise ConfigInvalid("need at least one path")
        if self.nu <= 0:
            raise ConfigInvalid("diffusion coefficient must be positive")
        if self.chunk_size < 1 or self.n_threads < 1:
            raise ConfigInvalid("chunk_size and n_threads must be positive")
        if not 0.0 <= self.burn_in_fraction < 1.0:
            raise ConfigInvalid("burn_in_fraction must lie in [0, 1)")

    @property
    def n_steps(self):
        return int(round(self.horizon / self.dt))

    def snapshot_steps(self):
        """Strided post-burn-in step indices, always including the last."""
        steps = self.n_steps
        burn = int(self.burn_in_fraction * steps)
        last = steps - 1
        if self.n_snapshots <= 1 or burn >= last:
            return [last]
        stride = max(1, (last - burn) // max(self.n_snapshots - 1, 1))
        ks = list(range(burn, last, stride))[: self.n_snapshots - 1]
        if ks and ks[-1] == last:
            ks = ks[:-1]
        return ks + [last]


@dataclass
class PathEnsemble:
    """Pair snapshots of a simulated ensemble.

    ``pre[n, m]`` is the state of path n at ``times[m]`` and ``post[n, m]``
    the state one step later; the estimators condition forward statistics
    on ``pre`` and backward statistics on ``post``.
    """

    times: np.ndarray
    pre: np.ndarray
    post: np.ndarray
    dt: float
    nu: float
    direction: str = "forward"
    clipped: np.ndarray = None
    master_seed: int = None
    chunk_size: int = DEFAULT_CHUNK
    meta: dict = field(default_factory=dict)

    @property
    def n_paths(self):
        return self.pre.shape[0]

    @property
    def n_snapshots(self):
        return self.pre.shape[1]

    def final_states(self):
        return self.post[:, -1]


def _noise_stream(master_seed, chunk_index):
    seq = np.random.SeedSequence(entropy=master_seed,
                                 spawn_key=(chunk_index, 0))
    return np.random.Generator(np.random.Philox(seq))


def _init_stream(master_seed, chunk_index):
    seq = np.random.SeedSequence(entropy=master_seed,
                                 spawn_key=(chunk_index, 1))
    return np.random.Generator(np.random.Philox(seq))


def _chunk_ranges(n_paths, chunk_size):
    return [(lo, min(lo + chunk_size, n_paths))
            for lo in range(0, n_paths, chunk_size)]


def _sample_initial(config, rng, count):
    kind = config.initial[0]
    if kind == "point":
        q0 = np.asarray(config.initial[1], dtype=float)
        return np.tile(q0, (count, 1))
    if kind == "density":
        # rejection sampling proportional to weight(q) inside a box
        _, weight, box, sup = config.initial
        lo = box.lo_array
        hi = box.hi_array
        out = np.empty((count, 3))
        have = 0
        while have < count:
            m = max(4 * (count - have), 1024)
            prop = rng.uniform(lo, hi, size=(m, 3))
            accept = rng.uniform(0.0, sup, size=m) < weight(prop)
            took = prop[accept]
            take = min(len(took), count - have)
            out[have:have + take] = took[:take]
            have += take
        return out
    raise ConfigInvalid(f"unknown initial sampler '{kind}'")


def drift_from_fields(u, patch, nu):
    """Coordinate drift beta^i = u^i - (nu/2) sigma^{jk} Gamma^i_{jk}.

    ``u`` maps (n, 3) points to (n, 3) contravariant components. For
    constant metrics the correction vanishes identically and the drift is
    u itself.
    """
    if getattr(patch, "is_constant", False):
        return u

    def beta(q):
        q = np.atleast_2d(np.asarray(q, dtype=float))
        corr = np.stack([patch.christoffel_contraction(row) for row in q])
        return u(q) - 0.5 * nu * corr

    return beta


def simulate(drift, patch, config):
    """Euler-Maruyama ensemble of the forward diffusion.

    ``drift`` maps (n, 3) states to (n, 3) coordinate drifts (already
    including any Christoffel correction; see ``drift_from_fields``).
    Raises Explosion when any path norm exceeds the configured radius;
    paths leaving ``clip_box`` freeze in place and are flagged.
    """
    steps = config.n_steps
    snap_steps = config.snapshot_steps()
    snap_index = {k: m for m, k in enumerate(snap_steps)}
    n_snaps = len(snap_steps)
    root_nudt = np.sqrt(config.nu * config.dt)
    constant_metric = getattr(patch, "is_constant", False)
    g_const = patch.noise_factor(np.zeros(3)) if constant_metric else None

    def run_chunk(chunk_index, lo, hi):
        count = hi - lo
        rng = _noise_stream(config.master_seed, chunk_index)
        q = _sample_initial(
            config, _init_stream(config.master_seed, chunk_index), count
        )
        pre = np.empty((count, n_snaps, 3))
        post = np.empty((count, n_snaps, 3))
        clipped = np.zeros(count, dtype=bool)
        for k in range(steps):
            z = rng.standard_normal((count, 3))
            beta = np.asarray(drift(q), dtype=float)
            if constant_metric:
                step = beta * config.dt + root_nudt * z @ g_const.T
            else:
                gs = np.stack([patch.noise_factor(row) for row in q])
                step = beta * config.dt + root_nudt * np.einsum(
                    "nij,nj->ni", gs, z
                )
            qn = q + step
            if config.clip_box is not None:
                outside = ~config.clip_box.contains(qn)
                if np.any(outside):
                    qn[outside] = q[outside]
                    clipped |= outside
            worst = float(np.max(np.einsum("ni,ni->n", qn, qn)))
            if worst > config.explosion_radius ** 2:
                raise Explosion(
                    f"path norm exceeded {config.explosion_radius:g} at "
                    f"step {k}"
                )
            m = snap_index.get(k)
            if m is not None:
                pre[:, m] = q
                post[:, m] = qn
            q = qn
        return pre, post, clipped

    ranges = _chunk_ranges(config.n_paths, config.chunk_size)
    results = [None] * len(ranges)
    if config.n_threads > 1 and len(ranges) > 1:
        with ThreadPoolExecutor(max_workers=config.n_threads) as pool:
            futures = [
                pool.submit(run_chunk, ci, lo, hi)
                for ci, (lo, hi) in enumerate(ranges)
            ]
            for ci, fut in enumerate(futures):
                results[ci] = fut.result()
    else:
        for ci, (lo, hi) in enumerate(ranges):
            results[ci] = run_chunk(ci, lo, hi)

    pre = np.concatenate([r[0] for r in results], axis=0)
    post = np.concatenate([r[1] for r in results], axis=0)
    clipped = np.concatenate([r[2] for r in results], axis=0)
    times = np.asarray(snap_steps, dtype=float) * config.dt
    return PathEnsemble(
        times=times, pre=pre, post=post, dt=config.dt, nu=config.nu,
        direction="forward", clipped=clipped,
        master_seed=config.master_seed, chunk_size=config.chunk_size,
        meta={"n_steps": steps, "horizon": config.horizon},
    )


def recompute_noise(config, path, step):
    """Rebuild the exact standard-normal 3-vector consumed by (path, step).

    Regenerates the path's chunk stream from the master seed; used to
    assert that draws are pure functions of (seed, path, step).
    """
    chunk_index = path // config.chunk_size
    lo, hi = _chunk_ranges(config.n_paths, config.chunk_size)[chunk_index]
    row = path - lo
    rng = _noise_stream(config.master_seed, chunk_index)
    z = None
    for _ in range(step + 1):
        z = rng.standard_normal((hi - lo, 3))
    return z[row]


def specular_reverse(ensemble):
    """Time-reversed ensemble: q'(t') = q(-t'), pairs swapped and reordered.

    An exact involution on the stored arrays; the reversed time stamps lie
    in [-horizon, 0].
    """
    direction = "specular" if ensemble.direction == "forward" else "forward"
    return PathEnsemble(
        times=(-(ensemble.times + ensemble.dt))[::-1].copy(),
        pre=ensemble.post[:, ::-1].copy(),
        post=ensemble.pre[:, ::-1].copy(),
        dt=ensemble.dt,
        nu=ensemble.nu,
        direction=direction,
        clipped=None if ensemble.clipped is None else ensemble.clipped.copy(),
        master_seed=ensemble.master_seed,
        chunk_size=ensemble.chunk_size,
        meta=dict(ensemble.meta),
    )


# ---------------------------------------------------------------------------
# binned drift estimators


@dataclass
class BinSpec:
    """Uniform rectangular bins over a 3-d box."""

    lo: tuple
    hi: tuple
    shape: tuple

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float)
        hi = np.asarray(self.hi, dtype=float)
        shape = np.asarray(self.shape, dtype=int)
        if not (np.all(hi > lo) and np.all(shape >= 1)):
            raise ConfigInvalid("bad bin specification")
        object.__setattr__(self, "lo", tuple(lo))
        object.__setattr__(self, "hi", tuple(hi))
        object.__setattr__(self, "shape", tuple(int(s) for s in shape))

    @property
    def n_bins(self):
        return int(np.prod(self.shape))

    def centers(self):
        axes = [
            np.linspace(self.lo[i], self.hi[i], self.shape[i] + 1)
            for i in range(3)
        ]
        mids = [0.5 * (a[1:] + a[:-1]) for a in axes]
        mesh = np.meshgrid(*mids, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def flat_index(self, points):
        """Flat bin index per point; -1 for points outside the box."""
        points = np.asarray(points, dtype=float)
        lo = np.asarray(self.lo)
        hi = np.asarray(self.hi)
        shape = np.asarray(self.shape)
        frac = (points - lo) / (hi - lo)
        inside = np.all((frac >= 0.0) & (frac < 1.0), axis=-1)
        idx3 = np.clip((frac * shape).astype(int), 0, shape - 1)
        flat = np.ravel_multi_index(
            tuple(idx3[..., i] for i in range(3)), self.shape
        )
        return np.where(inside, flat, -1)


@dataclass
class DriftEstimate:
    """Per-bin conditional drift with path-batch standard errors.

    ``batch_mean[b, j]`` is the bin-j mean over path batch b (NaN when the
    batch has no samples in the bin); linear combinations of forward and
    backward estimates must be formed batchwise, because both condition on
    the same sample pairs and their errors are strongly correlated.
    """

    centers: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    count: np.ndarray
    valid: np.ndarray
    direction: str
    min_count: int
    batch_mean: np.ndarray = None
    batch_count: np.ndarray = None
    anchor_mean: np.ndarray = None

    def eval_points(self):
        """Sample-mean anchor per bin, falling back to the bin center.

        Conditional targets should be evaluated here: the estimate in a
        bin is conditioned on the empirical anchor distribution, not on
        the geometric center, and for affine targets the anchor mean is
        exact while the center carries the full binning bias.
        """
        out = self.centers.copy()
        ok = np.isfinite(self.anchor_mean[:, 0])
        out[ok] = self.anchor_mean[ok]
        return out


def _binned_drift(ensemble, bins, condition_on, min_count, n_batches):
    """Bin (post - pre)/dt by either the pre or the post state.

    Standard errors come from the spread of per-path-batch means, which is
    insensitive to correlation between snapshots of the same path.
    """
    n = ensemble.n_paths
    values = (ensemble.post - ensemble.pre) / ensemble.dt
    anchor = ensemble.pre if condition_on == "pre" else ensemble.post
    k = bins.n_bins

    flat_vals = values.reshape(-1, 3)
    flat_bins = bins.flat_index(anchor.reshape(-1, 3))
    batch_of_path = np.minimum(
        np.arange(n) // max(1, int(np.ceil(n / n_batches))), n_batches - 1
    )
    flat_batch = np.repeat(batch_of_path, ensemble.n_snapshots)

    keep = flat_bins >= 0
    fb = flat_bins[keep]
    fv = flat_vals[keep]
    fg = flat_batch[keep]

    fa = anchor.reshape(-1, 3)[keep]
    count = np.bincount(fb, minlength=k).astype(int)
    sums = np.stack([
        np.bincount(fb, weights=fv[:, d], minlength=k) for d in range(3)
    ], axis=-1)
    overall = np.divide(
        sums, count[:, None], out=np.zeros((k, 3)), where=count[:, None] > 0
    )
    anchor_sums = np.stack([
        np.bincount(fb, weights=fa[:, d], minlength=k) for d in range(3)
    ], axis=-1)
    anchor_mean = np.divide(
        anchor_sums, count[:, None],
        out=np.full((k, 3), np.nan), where=count[:, None] > 0,
    )

    cell = fg * k + fb
    bcount = np.bincount(cell, minlength=n_batches * k).reshape(n_batches, k)
    bsums = np.stack([
        np.bincount(cell, weights=fv[:, d], minlength=n_batches * k)
        for d in range(3)
    ], axis=-1).reshape(n_batches, k, 3)
    bmeans = np.divide(
        bsums, bcount[..., None],
        out=np.full((n_batches, k, 3), np.nan), where=bcount[..., None] > 0,
    )
    nb_eff = np.sum(bcount > 0, axis=0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        spread = np.nanstd(bmeans, axis=0, ddof=1)
    se = np.where(
        nb_eff[:, None] >= 2, spread / np.sqrt(np.maximum(nb_eff, 1))[:, None],
        np.inf,
    )

    valid = (count >= min_count) & (nb_eff >= 2)
    if not np.any(valid):
        raise InsufficientSamples(
            f"no bin reached the minimum occupancy {min_count}"
        )
    return DriftEstimate(
        centers=bins.centers(), mean=overall, se=se, count=count,
        valid=valid, direction=condition_on, min_count=min_count,
        batch_mean=bmeans, batch_count=bcount, anchor_mean=anchor_mean,
    )


def combine_drift_estimates(first, second, coeff_first, coeff_second):
    """Batchwise linear combination of two estimates on the same ensemble.

    Returns (mean, se, valid). Errors of the two inputs are correlated
    (they see the same increments), so the combination is formed per path
    batch and its spread across batches gives the standard error.
    """
    combo = coeff_first * first.batch_mean + coeff_second * second.batch_mean
    finite = np.isfinite(combo[..., 0])
    n_eff = finite.sum(axis=0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        mean = np.nanmean(combo, axis=0)
        spread = np.nanstd(combo, axis=0, ddof=1)
    se = np.where(
        n_eff[:, None] >= 2,
        spread / np.sqrt(np.maximum(n_eff, 1))[:, None],
        np.inf,
    )
    valid = first.valid & second.valid & (n_eff >= 2)
    return mean, se, valid


def forward_drift_estimate(ensemble, bins, min_count=200,
                           n_batches=DEFAULT_BATCHES):
    """beta_plus(q) ~= E[q(t+dt) - q(t) | q(t) = q] / dt."""
    return _binned_drift(ensemble, bins, "pre", min_count, n_batches)


def backward_drift_estimate(ensemble, bins, min_count=200,
                            n_batches=DEFAULT_BATCHES):
    """beta_minus(q) ~= E[q(t) - q(t-dt) | q(t) = q] / dt."""
    return _binned_drift(ensemble, bins, "post", min_count, n_batches)


def variance_report(ensemble, n_batches=DEFAULT_BATCHES):
    """Per-snapshot, per-axis ensemble variance with path-batch SEs."""
    n = ensemble.n_paths
    states = ensemble.pre
    batch = np.minimum(
        np.arange(n) // max(1, int(np.ceil(n / n_batches))), n_batches - 1
    )
    var = states.var(axis=0, ddof=1)
    bvars = np.stack([
        states[batch == b].var(axis=0, ddof=1) for b in range(n_batches)
        if np.sum(batch == b) > 1
    ])
    if len(bvars) >= 2:
        se = bvars.std(axis=0, ddof=1) / np.sqrt(len(bvars))
    else:
        se = np.full_like(var, np.inf)
    return {
        "times": ensemble.times.copy(),
        "variance": var,
        "se": se,
    }
