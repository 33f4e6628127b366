"""Time evolution of collectively decaying emitters.

Density matrices are integrated block by block over hole sectors. Without a
drive, the generator never mixes the sector-diagonal blocks with the
coherences between sectors, so the default ``"sector"`` mode carries only
the diagonal blocks. That is exact for every number-conserving observable,
which covers all emission quantities in :mod:`superrad.observables`.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.integrate import solve_ivp
from scipy.linalg import expm
from scipy.optimize import minimize_scalar

from ._moments import Moments, block_moments, pure_moments
from .couplings import CouplingMatrices, JumpBasis, build_matrices, diagonalize
from .errors import BasisCoverageError, IntegrationError, InvalidArgumentError
from .geometry import AtomArray
from .kernels import make_kernels
from .states import DensityMatrix, ManyBodyState, SpinBasis, full_basis

__all__ = [
    "Drive",
    "TimeGrid",
    "EvolutionSetup",
    "make_setup",
    "dicke_setup",
    "MasterResult",
    "evolve_master",
    "evolve_master_truncated",
    "evolve_driven",
    "TrajectoryRecord",
    "TrajectoryResult",
    "EnsembleResult",
    "run_trajectory",
    "run_ensemble",
    "trajectory_seed",
    "path_parity",
    "DickeResult",
    "dicke_reference",
    "dicke_peak",
    "dicke_ladder_rate",
    "FULL_ME_CAP",
]

FULL_ME_CAP = 14
TRUNCATED_CAP = 20
TRACE_DRIFT_TOL = 1e-6
DEFICIT_THRESHOLD = 0.05
ME_RTOL = 1e-10
ME_ATOL = 1e-12
TRAJ_RTOL = 1e-9
TRAJ_ATOL = 1e-12
# coupling scale times duration above which small systems use exact propagation
STIFF_RATIO = 1e4
EXPM_MAX_SIZE = 600


@dataclass(frozen=True)
class Drive:
    """Resonant step drive: Rabi frequency ``omega`` for ``0 <= t < tau``.

    ``k`` is the drive wave vector in units of k0.
    """

    omega: float
    k: tuple = (0.0, 0.0, 1.0)
    tau: float = 0.0

    def __post_init__(self):
        if not self.omega >= 0:
            raise InvalidArgumentError("drive strength must be >= 0")
        if not self.tau >= 0:
            raise InvalidArgumentError("drive duration must be >= 0")
        k = tuple(float(x) for x in self.k)
        if len(k) != 3:
            raise InvalidArgumentError("drive wave vector needs three components")
        object.__setattr__(self, "k", k)


@dataclass(frozen=True)
class TimeGrid:
    samples: np.ndarray
    t_start: Optional[float] = None
    t_end: Optional[float] = None

    def __post_init__(self):
        s = np.array(self.samples, dtype=float).ravel()
        if s.size == 0:
            raise InvalidArgumentError("time grid needs at least one sample")
        if np.any(np.diff(s) <= 0):
            raise InvalidArgumentError("sample times must be strictly increasing")
        t0 = float(s[0]) if self.t_start is None else float(self.t_start)
        t1 = float(s[-1]) if self.t_end is None else float(self.t_end)
        if not (t0 <= s[0] and s[-1] <= t1):
            raise InvalidArgumentError("samples must lie inside [t_start, t_end]")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "t_start", t0)
        object.__setattr__(self, "t_end", t1)

    @classmethod
    def linspace(cls, t_end: float, n: int, t_start: float = 0.0) -> "TimeGrid":
        return cls(np.linspace(t_start, t_end, n))


class EvolutionSetup:
    """Everything the generators need, with lazily built kernels.

    ``gamma_scale`` multiplies all couplings (both J and Gamma scale with the
    single-atom rate); setting it to zero switches dissipation off.
    """

    def __init__(
        self,
        couplings: CouplingMatrices,
        basis: SpinBasis,
        jump_basis: Optional[JumpBasis] = None,
        drive: Optional[Drive] = None,
        array: Optional[AtomArray] = None,
        gamma_scale: float = 1.0,
        backend: Optional[str] = None,
    ):
        if couplings.n_atoms != basis.n_atoms:
            raise InvalidArgumentError("couplings and basis sizes differ")
        if drive is not None and drive.omega > 0 and array is None:
            raise InvalidArgumentError("a drive needs emitter positions")
        if not gamma_scale >= 0:
            raise InvalidArgumentError("gamma_scale must be >= 0")
        self.couplings = couplings
        self.basis = basis
        self.jump_basis = jump_basis if jump_basis is not None else diagonalize(couplings)
        self.drive = drive
        self.array = array
        self.gamma_scale = float(gamma_scale)
        self.backend = backend
        self._kernels = None

    def __getstate__(self):
        state = self.__dict__.copy()
        state["_kernels"] = None
        return state

    @property
    def n_atoms(self) -> int:
        return self.basis.n_atoms

    @property
    def effective(self) -> np.ndarray:
        return self.gamma_scale * self.couplings.effective

    @property
    def gamma(self) -> np.ndarray:
        return self.gamma_scale * np.asarray(self.couplings.Gamma)

    @property
    def rates(self) -> np.ndarray:
        return self.gamma_scale * self.jump_basis.rates

    @property
    def kernels(self):
        if self._kernels is None:
            self._kernels = make_kernels(self.basis, self.effective, self.gamma, self.backend)
        return self._kernels

    def with_drive(self, drive: Optional[Drive]) -> "EvolutionSetup":
        return EvolutionSetup(self.couplings, self.basis, self.jump_basis, drive, self.array,
                              self.gamma_scale, self.backend)


def make_setup(
    array: AtomArray,
    max_holes: Optional[int] = None,
    drive: Optional[Drive] = None,
    gamma_scale: float = 1.0,
    backend: Optional[str] = None,
) -> EvolutionSetup:
    couplings = build_matrices(array)
    basis = SpinBasis(array.n_atoms, max_holes)
    return EvolutionSetup(couplings, basis, diagonalize(couplings), drive, array, gamma_scale, backend)


def dicke_setup(n: int, max_holes: Optional[int] = None) -> EvolutionSetup:
    """All emitters at one point: a single bright operator with rate ``n``."""
    couplings = CouplingMatrices(np.zeros((n, n)), np.ones((n, n)))
    V = diagonalize(couplings).coefficients
    rates = np.zeros(n)
    rates[0] = float(n)
    return EvolutionSetup(couplings, SpinBasis(n, max_holes), JumpBasis(rates, V))


# ---------------------------------------------------------------- master equation


class _Layout:
    """Packing of sector blocks into one flat complex vector."""

    def __init__(self, basis: SpinBasis, mode: str):
        dims = [len(s) for s in basis.sectors]
        nsec = len(dims)
        if mode == "sector":
            pairs = [(h, h) for h in range(nsec)]
        elif mode == "full":
            pairs = [(a, b) for a in range(nsec) for b in range(nsec)]
        else:
            raise InvalidArgumentError(f"unknown mode {mode!r}")
        self.basis = basis
        self.mode = mode
        self.dims = dims
        self.pairs = pairs
        self.offsets = {}
        pos = 0
        for a, b in pairs:
            self.offsets[a, b] = (pos, (dims[a], dims[b]))
            pos += dims[a] * dims[b]
        self.size = pos

    def views(self, y):
        return {
            key: y[o : o + shape[0] * shape[1]].reshape(shape)
            for key, (o, shape) in self.offsets.items()
        }

    def pack_matrix(self, rho: np.ndarray) -> np.ndarray:
        y = np.empty(self.size, dtype=complex)
        v = self.views(y)
        b = self.basis
        for a, c in self.pairs:
            v[a, c][...] = rho[b.sector_slice(a), b.sector_slice(c)]
        return y

    def pack_pure(self, psi: np.ndarray) -> np.ndarray:
        y = np.empty(self.size, dtype=complex)
        v = self.views(y)
        b = self.basis
        for a, c in self.pairs:
            v[a, c][...] = np.outer(psi[b.sector_slice(a)], psi[b.sector_slice(c)].conj())
        return y

    def unpack(self, y) -> np.ndarray:
        b = self.basis
        rho = np.zeros((b.dim, b.dim), dtype=complex)
        for (a, c), blk in self.views(y).items():
            rho[b.sector_slice(a), b.sector_slice(c)] = blk
        return rho

    def diagonal_blocks(self, y):
        v = self.views(y)
        return [v[h, h] for h in range(len(self.dims))]


def _site_operators(basis: SpinBasis):
    """Sparse ``sigma_ge^j`` on ``basis`` (transitions leaving the basis dropped)."""
    ops = []
    cfg = basis.configs
    for j in range(basis.n_atoms):
        bit = np.int64(1) << j
        src = np.nonzero(cfg & bit)[0]
        dst = basis.index_of[cfg[src] ^ bit]
        keep = dst >= 0
        ops.append(
            sp.csr_matrix(
                (np.ones(keep.sum()), (dst[keep], src[keep])), shape=(basis.dim, basis.dim)
            )
        )
    return ops


def _drive_operator(setup: EvolutionSetup) -> sp.csr_matrix:
    drive = setup.drive
    phases = np.exp(2j * np.pi * (setup.array.positions @ np.asarray(drive.k)))
    lower = _site_operators(setup.basis)
    raise_sum = sum(phases[j] * lower[j].T for j in range(setup.n_atoms))
    return (0.5 * drive.omega * (raise_sum + raise_sum.conj().T)).tocsr()


def _site_rhs(setup: EvolutionSetup, layout: _Layout, drive_op=None, linear=False):
    """Site-form generator on packed blocks.

    By default ``rho H^dag`` is taken as ``(H rho)^dag``, which needs one
    kernel pass but is only real-linear (valid for Hermitian ``rho``).
    ``linear=True`` evaluates ``(H rho^dag)^dag`` instead, giving the exact
    complex-linear Liouvillian used to assemble dense propagators.
    """
    K = setup.kernels
    pairs = layout.pairs
    dims = layout.dims
    starts = [setup.basis.sector_bounds[h][0] for h in range(len(dims))]
    if drive_op is not None:
        # sector-resolved pieces D[a, a +- 1]
        D = {}
        for a in range(len(dims)):
            for c in (a - 1, a + 1):
                if 0 <= c < len(dims):
                    blk = drive_op[starts[a] : starts[a] + dims[a], starts[c] : starts[c] + dims[c]]
                    if blk.nnz:
                        D[a, c] = blk.tocsr()

    def apply_h(blocks):
        X = {}
        for key in pairs:
            x = np.empty(blocks[key].shape, dtype=complex)
            K.heff(key[0], blocks[key], x)
            X[key] = x
        if drive_op is not None:
            for (a, c), Dac in D.items():
                for b in range(len(dims)):
                    X[a, b] += Dac @ blocks[c, b]
        return X

    def rhs(t, y):
        blocks = layout.views(y)
        out = np.empty_like(y)
        ob = layout.views(out)
        X = apply_h(blocks)
        if linear:
            Y = apply_h({(a, b): np.ascontiguousarray(blocks[b, a].conj().T) for a, b in pairs})
        else:
            Y = X
        for a, b in pairs:
            o = ob[a, b]
            np.subtract(1j * Y[b, a].conj().T, 1j * X[a, b], out=o)
            if a and b:
                K.jump(a, b, blocks[a - 1, b - 1], o)
        return out

    return rhs


def _jump_form_rhs(setup: EvolutionSetup, drive_op=None):
    """Dense generator written with the collective jump operators."""
    basis = setup.basis
    if basis.kind != "full":
        raise BasisCoverageError("the jump-operator generator needs the full basis")
    low = _site_operators(basis)
    V = setup.jump_basis.coefficients
    rates = setup.rates
    n = setup.n_atoms
    O = [sum(V[j, nu] * low[j] for j in range(n)).tocsr() for nu in range(n)]
    J = setup.gamma_scale * np.asarray(setup.couplings.J)
    H = sp.csr_matrix((basis.dim, basis.dim), dtype=complex)
    for i in range(n):
        for j in range(n):
            if i != j and J[i, j] != 0.0:
                H = H + J[i, j] * (low[i].T @ low[j])
    A = sum(rates[nu] * (O[nu].T @ O[nu]) for nu in range(n))
    Heff = (H - 0.5j * A).tocsr()
    if drive_op is not None:
        Heff = (Heff + drive_op).tocsr()
    dim = basis.dim

    def rhs(t, y):
        rho = y.reshape(dim, dim)
        X = Heff @ rho
        out = -1j * X + 1j * (Heff @ rho.conj().T).conj().T
        for nu in range(n):
            if rates[nu] != 0.0:
                out += rates[nu] * (O[nu] @ (O[nu] @ rho.conj().T).conj().T)
        return out.ravel()

    return rhs


@dataclass
class MasterResult:
    times: np.ndarray
    moments: list
    n_exc: np.ndarray
    rate: np.ndarray
    trace: np.ndarray
    norm_deficit: np.ndarray
    states: Optional[list] = None
    deficit_exceeded: bool = False
    deficit_threshold: float = DEFICIT_THRESHOLD
    diagnostics: dict = field(default_factory=dict)

    def state_at(self, i: int):
        if self.states is None:
            raise InvalidArgumentError("states were not kept; pass keep_states=True")
        return self.states[i]


def _initial_vector(state0, layout: _Layout, generator: str):
    basis = layout.basis
    if isinstance(state0, ManyBodyState):
        if state0.basis != basis:
            raise InvalidArgumentError("initial state basis differs from the setup basis")
        psi = state0.amplitudes
        if generator == "jump":
            return np.outer(psi, psi.conj()).ravel(), 0.0
        return layout.pack_pure(psi), state0.norm_deficit
    if isinstance(state0, DensityMatrix):
        if state0.basis != basis:
            raise InvalidArgumentError("initial state basis differs from the setup basis")
        if generator == "jump":
            return state0.matrix.astype(complex).ravel(), 0.0
        return layout.pack_matrix(state0.matrix), state0.norm_deficit
    raise InvalidArgumentError("initial state must be a ManyBodyState or DensityMatrix")


def _dense_generator(rhs, size):
    """Dense matrix of a complex-linear generator, one unit vector at a time."""
    L = np.empty((size, size), dtype=complex)
    e = np.zeros(size, dtype=complex)
    for k in range(size):
        e[k] = 1.0
        L[:, k] = rhs(0.0, e)
        e[k] = 0.0
    return L


def _propagate_expm(rhs, y, t0, t_eval):
    L = _dense_generator(rhs, y.size)
    out = np.empty((y.size, len(t_eval)), dtype=complex)
    cache = {}
    t = t0
    for col, te in enumerate(t_eval):
        dt = float(te - t)
        if dt != 0.0:
            key = round(dt, 15)
            if key not in cache:
                cache[key] = expm(L * dt)
            y = cache[key] @ y
        out[:, col] = y
        t = te
    return out


def _evolve(state0, setup: EvolutionSetup, grid: TimeGrid, mode, generator, rtol, atol, order,
            keep_states, threshold, method="auto"):
    basis = setup.basis
    drive = setup.drive if setup.drive is not None and setup.drive.omega > 0 else None
    if mode == "auto":
        mode = "full" if drive is not None else "sector"
    if drive is not None and mode != "full":
        raise InvalidArgumentError("driven evolution needs mode='full'")
    if drive is not None and basis.kind != "full":
        raise BasisCoverageError("driven evolution needs the full basis")
    if generator not in ("site", "jump"):
        raise InvalidArgumentError(f"unknown generator {generator!r}")

    layout = _Layout(basis, mode)
    y0, deficit0 = _initial_vector(state0, layout, generator)
    dim = basis.dim
    drive_op = _drive_operator(setup) if drive is not None else None

    if method == "auto":
        scale = float(np.max(np.abs(setup.effective))) + (drive.omega if drive is not None else 0.0)
        stiff = scale * (grid.t_end - grid.t_start) > STIFF_RATIO
        method = "expm" if stiff and y0.size <= EXPM_MAX_SIZE else "DOP853"

    def make_rhs(with_drive):
        dop = drive_op if with_drive else None
        if generator == "jump":
            return _jump_form_rhs(setup, dop)
        return _site_rhs(setup, layout, dop, linear=method == "expm")

    # integration legs: drive on for t < tau, off afterwards
    t0, t1 = grid.t_start, grid.t_end
    legs = []
    if drive is not None and drive.tau > t0:
        tau = min(drive.tau, t1)
        legs.append((t0, tau, make_rhs(True)))
        if tau < t1:
            legs.append((tau, t1, make_rhs(False)))
    else:
        legs.append((t0, t1, make_rhs(False)))

    samples = grid.samples
    sampled_y = [None] * len(samples)
    y = y0
    nfev = 0
    for k, (a, b, rhs) in enumerate(legs):
        last = k == len(legs) - 1
        sel = np.nonzero((samples >= a) & ((samples <= b) if last else (samples < b)))[0]
        if b <= a:
            for i in sel:
                sampled_y[i] = y.copy()
            continue
        t_eval = samples[sel] if last else np.append(samples[sel], b)
        if method == "expm":
            ys = _propagate_expm(rhs, y, a, t_eval)
            nfev += 2 * y.size
        else:
            sol = solve_ivp(rhs, (a, b), y, method=method, t_eval=t_eval, rtol=rtol, atol=atol)
            if sol.status != 0:
                raise IntegrationError(
                    f"master-equation solve failed: {sol.message}",
                    {"t_fail": float(sol.t[-1]) if sol.t.size else a, "nfev": sol.nfev},
                )
            nfev += sol.nfev
            ys = sol.y
        for col, i in enumerate(sel):
            sampled_y[i] = np.ascontiguousarray(ys[:, col])
        y = np.ascontiguousarray(ys[:, -1])

    moments, states = [], [] if keep_states else None
    truncated = basis.kind != "full"
    for i, yi in enumerate(sampled_y):
        if generator == "jump":
            rho = yi.reshape(dim, dim)
            blocks = [rho[basis.sector_slice(h), basis.sector_slice(h)]
                      for h in range(basis.n_sectors)]
        else:
            blocks = layout.diagonal_blocks(yi)
        m = block_moments(basis, blocks, order)
        m.norm_deficit = max(0.0, 1.0 - m.trace) if truncated else deficit0
        moments.append(m)
        if keep_states:
            rho = yi.reshape(dim, dim) if generator == "jump" else layout.unpack(yi)
            states.append(DensityMatrix(basis, rho, m.norm_deficit))

    trace = np.array([m.trace for m in moments])
    deficit = np.array([m.norm_deficit for m in moments])
    G = setup.gamma
    rate = np.array([float(np.real(np.sum(G * m.c1))) for m in moments])
    n_exc = np.array([m.n_exc for m in moments])
    diagnostics = {"nfev": int(nfev), "mode": mode, "generator": generator, "method": method,
                   "backend": type(setup.kernels).__module__.rsplit(".", 1)[-1],
                   "rtol": rtol, "atol": atol}
    if truncated:
        if np.any(trace > 1.0 + TRACE_DRIFT_TOL) or np.any(np.diff(trace) > TRACE_DRIFT_TOL):
            raise IntegrationError("truncated trace grew during evolution",
                                   {**diagnostics, "max_trace": float(trace.max())})
    else:
        drift = np.abs(trace + deficit0 - 1.0)
        if drift.max() > TRACE_DRIFT_TOL:
            i = int(np.argmax(drift))
            raise IntegrationError(
                f"trace drift {drift[i]:.2e} at t={samples[i]:.6g}",
                {**diagnostics, "t": float(samples[i]), "drift": float(drift[i])},
            )
    exceeded = bool(truncated and np.any(deficit > threshold))
    return MasterResult(samples.copy(), moments, n_exc, rate, trace, deficit, states, exceeded,
                        threshold, diagnostics)


def evolve_master(
    rho0,
    setup: EvolutionSetup,
    grid: TimeGrid,
    *,
    mode: str = "auto",
    generator: str = "site",
    rtol: float = ME_RTOL,
    atol: float = ME_ATOL,
    order: int = 1,
    keep_states: bool = False,
    method: str = "auto",
) -> MasterResult:
    """Integrate the Lindblad equation on the full basis.

    ``generator="site"`` uses the pairwise site form with the compiled
    kernels; ``"jump"`` builds the same generator from the collective jump
    operators with sparse matrices (slow, used for cross-checks). ``order=2``
    also records pair moments for photon correlations.

    ``method`` is a :func:`scipy.integrate.solve_ivp` method name or
    ``"expm"`` (exact propagation with the dense generator, for small stiff
    problems such as closely spaced emitters). ``"auto"`` picks ``"expm"``
    when the coupling scale times the time span exceeds ``STIFF_RATIO`` and
    the packed state is small, else ``"DOP853"``.
    """
    if setup.basis.kind != "full":
        raise BasisCoverageError("evolve_master needs the full basis; use evolve_master_truncated")
    if setup.n_atoms > FULL_ME_CAP:
        raise InvalidArgumentError(f"full master equation is capped at N={FULL_ME_CAP}")
    return _evolve(rho0, setup, grid, mode, generator, rtol, atol, order, keep_states,
                   DEFICIT_THRESHOLD, method)


def evolve_master_truncated(
    state0,
    setup: EvolutionSetup,
    grid: TimeGrid,
    *,
    threshold: float = DEFICIT_THRESHOLD,
    rtol: float = ME_RTOL,
    atol: float = ME_ATOL,
    order: int = 1,
    keep_states: bool = False,
    method: str = "auto",
) -> MasterResult:
    """Master equation restricted to the kept hole shells.

    Decay out of the last kept shell is absorbed: ``norm_deficit`` counts the
    lost population and ``deficit_exceeded`` flags samples past ``threshold``.
    """
    if setup.n_atoms > TRUNCATED_CAP:
        raise InvalidArgumentError(f"truncated evolution is capped at N={TRUNCATED_CAP}")
    if setup.drive is not None and setup.drive.omega > 0:
        raise InvalidArgumentError("truncated evolution does not support a drive")
    return _evolve(state0, setup, grid, "sector", "site", rtol, atol, order, keep_states,
                   threshold, method)


@dataclass
class DrivenResult:
    series: MasterResult
    state_at_tau: DensityMatrix


def evolve_driven(state0, setup: EvolutionSetup, grid: TimeGrid, **kwargs) -> DrivenResult:
    """Drive for ``[0, tau)`` then free decay; the sample at ``tau`` is returned separately."""
    if setup.drive is None:
        raise InvalidArgumentError("setup has no drive")
    tau = setup.drive.tau
    samples = np.union1d(grid.samples, [tau]) if grid.t_start <= tau <= grid.t_end else grid.samples
    g = TimeGrid(samples, grid.t_start, grid.t_end)
    kwargs.setdefault("mode", "full")
    res = evolve_master(state0, setup, g, keep_states=True, **kwargs)
    i = int(np.searchsorted(res.times, tau))
    if i >= len(res.times) or res.times[i] != tau:
        raise InvalidArgumentError("drive duration lies outside the time grid")
    return DrivenResult(res, res.states[i])


# ---------------------------------------------------------------- trajectories


@dataclass
class TrajectoryRecord:
    seed: int
    jumps: list
    completed: bool
    end_reason: str = "t_max"

    @property
    def times(self) -> np.ndarray:
        return np.array([t for t, _ in self.jumps], dtype=float)

    @property
    def nus(self) -> list:
        return [nu for _, nu in self.jumps]

    @property
    def path(self) -> str:
        return "→".join(str(nu) for nu in self.nus)


@dataclass
class TrajectoryResult:
    record: TrajectoryRecord
    times: np.ndarray
    n_exc: np.ndarray
    rate: np.ndarray
    states: Optional[list] = None


def trajectory_seed(master_seed: int, index: int) -> int:
    """Counter-based 64-bit seed of trajectory ``index``."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


class _JumpApplier:
    """All ``O_nu psi`` at once via the lowering tables."""

    def __init__(self, setup: EvolutionSetup):
        b = setup.basis
        self.basis = b
        self.V = setup.jump_basis.coefficients
        self.rates = setup.rates
        self.tables = [None] + [b.lowering_table(h) for h in range(1, min(b.n_atoms, b.max_holes + 1) + 1)]
        self.outside = b.max_holes < b.n_atoms

    def apply(self, psi):
        """Return (images[nu, dim], leak[nu]) with leak the norm^2 outside the basis."""
        b = self.basis
        n = b.n_atoms
        img = np.zeros((n, b.dim), dtype=complex)
        leak = np.zeros(n)
        for h in range(1, len(self.tables)):
            src = np.zeros(len(b.shell_configs(h - 1)) + 1, dtype=complex)
            src[:-1] = psi[b.sector_slice(h - 1)]
            phi = src[self.tables[h]]  # (n, dim_h)
            part = self.V.T @ phi
            if h <= b.max_holes:
                img[:, b.sector_slice(h)] = part
            else:
                leak += np.sum(np.abs(part) ** 2, axis=1)
        return img, leak

    def rate(self, psi):
        img, leak = self.apply(psi)
        return float(self.rates @ (np.sum(np.abs(img) ** 2, axis=1) + leak))


def _heff_vec(setup: EvolutionSetup):
    K = setup.kernels
    b = setup.basis
    slices = [b.sector_slice(h) for h in range(b.n_sectors)]

    def f(t, y):
        out = np.empty_like(y)
        for h, sl in enumerate(slices):
            K.heff(h, y[sl].reshape(-1, 1), out[sl].reshape(-1, 1))
        out *= -1j
        return out

    return f


def run_trajectory(
    psi0: ManyBodyState,
    setup: EvolutionSetup,
    t_max: float,
    seed: int,
    sample_times=None,
    keep_states: bool = False,
    rtol: float = TRAJ_RTOL,
    atol: float = TRAJ_ATOL,
    rate_floor: Optional[float] = None,
) -> TrajectoryResult:
    """One quantum-jump trajectory with the waiting-time (norm threshold) scheme.

    Operators with rate at or below ``rate_floor`` (default ``1e-12 N``)
    never fire.
    """
    if not isinstance(psi0, ManyBodyState):
        raise InvalidArgumentError("trajectories need a pure initial state")
    if setup.drive is not None and setup.drive.omega > 0:
        raise InvalidArgumentError("trajectories do not support a drive")
    if not t_max > 0:
        raise InvalidArgumentError("t_max must be positive")
    basis = setup.basis
    n = basis.n_atoms
    floor = 1e-12 * n if rate_floor is None else rate_floor
    active = setup.rates > floor
    applier = _JumpApplier(setup)
    rhs = _heff_vec(setup)
    rng = np.random.Generator(np.random.PCG64(int(seed)))
    ts = np.asarray(sample_times if sample_times is not None else [0.0, t_max], dtype=float)
    n_s = len(ts)
    n_exc = np.zeros(n_s)
    rate = np.zeros(n_s)
    states = [None] * n_s if keep_states else None
    exc = basis.excitations

    def record(i, psi):
        p = np.abs(psi) ** 2
        norm2 = p.sum()
        n_exc[i] = (p @ exc) / norm2
        rate[i] = applier.rate(psi) / norm2
        if keep_states:
            states[i] = ManyBodyState(basis, psi / np.sqrt(norm2))

    psi = psi0.amplitudes / np.sqrt(psi0.norm2)
    t = 0.0
    jumps = []
    reason = "t_max"
    si = 0
    while True:
        u = rng.random()
        if u <= 1e-300:
            raise IntegrationError("norm threshold underflow", {"t": t, "seed": int(seed)})

        def crossing(tt, y, u=u):
            return float(np.vdot(y, y).real) - u

        crossing.terminal = True
        crossing.direction = -1
        sol = solve_ivp(rhs, (t, t_max), psi, method="DOP853", events=crossing,
                        dense_output=True, rtol=rtol, atol=atol)
        if sol.status == -1:
            raise IntegrationError(f"trajectory solve failed: {sol.message}",
                                   {"t": t, "seed": int(seed)})
        jumped = sol.status == 1
        t_end = float(sol.t_events[0][0]) if jumped else t_max
        while si < n_s and (ts[si] < t_end or (not jumped and ts[si] <= t_end)):
            record(si, sol.sol(ts[si]) if ts[si] > t else psi)
            si += 1
        if not jumped:
            break
        psi = sol.y_events[0][0]
        t = t_end
        img, leak = applier.apply(psi)
        weights = np.where(active, setup.rates * (np.sum(np.abs(img) ** 2, axis=1) + leak), 0.0)
        total = weights.sum()
        if total <= 0.0:
            # no allowed jump: the state is dark for the enabled operators
            psi = psi / np.sqrt(np.vdot(psi, psi).real)
            continue
        nu = int(np.searchsorted(np.cumsum(weights), rng.random() * total, side="right"))
        nu = min(nu, n - 1)
        jumps.append((t, nu))
        if leak[nu] > 0.0:
            reason = "left_basis"
            break
        psi = img[nu] / np.sqrt(np.sum(np.abs(img[nu]) ** 2))
        if basis.kind == "full" and abs(psi[-1]) ** 2 > 1.0 - 1e-12:
            reason = "ground"
            psi = np.zeros_like(psi)
            psi[-1] = 1.0
            break
    while si < n_s:
        if reason == "left_basis":
            n_exc[si:] = np.nan
            rate[si:] = np.nan
            break
        record(si, psi)
        si += 1
    rec = TrajectoryRecord(int(seed), jumps, reason in ("ground", "t_max"), reason)
    return TrajectoryResult(rec, ts, n_exc, rate, states)


@dataclass
class EnsembleResult:
    times: np.ndarray
    mean_n_exc: np.ndarray
    sem_n_exc: np.ndarray
    mean_rate: np.ndarray
    path_counts: dict
    records: list
    master_seed: int

    def unfinished_fraction(self) -> float:
        """Fraction of trajectories that still hold an excitation at the last sample."""
        return float(np.mean([r.end_reason != "ground" for r in self.records]))


def _ensemble_chunk(args):
    psi0, setup, t_max, seeds, sample_times = args
    return [run_trajectory(psi0, setup, t_max, s, sample_times) for s in seeds]


def run_ensemble(
    psi0: ManyBodyState,
    setup: EvolutionSetup,
    t_max: float,
    n_traj: int,
    master_seed: int,
    sample_times=None,
    jobs: int = 1,
) -> EnsembleResult:
    """Average of ``n_traj`` seeded trajectories plus jump-path counts.

    Results do not depend on ``jobs``: seeds are derived per index and the
    reduction runs in index order.
    """
    if n_traj < 1:
        raise InvalidArgumentError("n_traj must be >= 1")
    ts = np.asarray(sample_times if sample_times is not None else np.linspace(0, t_max, 101))
    seeds = [trajectory_seed(master_seed, i) for i in range(n_traj)]
    if jobs > 1:
        jobs = min(jobs, os.cpu_count() or 1, n_traj)
        chunks = [seeds[i::jobs] for i in range(jobs)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(_ensemble_chunk, [(psi0, setup, t_max, c, ts) for c in chunks]))
        results = [None] * n_traj
        for w, part in enumerate(parts):
            for j, r in enumerate(part):
                results[w + j * jobs] = r
    else:
        results = _ensemble_chunk((psi0, setup, t_max, seeds, ts))
    ne = np.array([r.n_exc for r in results])
    rt = np.array([r.rate for r in results])
    counts: dict = {}
    for r in results:
        counts[r.record.path] = counts.get(r.record.path, 0) + 1
    counts = dict(sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])))
    sem = ne.std(axis=0, ddof=1) / np.sqrt(n_traj) if n_traj > 1 else np.zeros(len(ts))
    return EnsembleResult(ts, ne.mean(axis=0), sem, rt.mean(axis=0), counts,
                          [r.record for r in results], int(master_seed))


def path_parity(path: str, parities) -> int:
    """Product of operator mirror parities along ``path`` (0 if any is undefined)."""
    if not path:
        return 1
    out = 1
    for tok in path.split("→"):
        out *= int(parities[int(tok)])
    return out


# ---------------------------------------------------------------- Dicke ladder


def dicke_ladder_rate(n: int, m: int) -> float:
    """Emission rate of the symmetric ladder state with ``m`` excitations."""
    return float(m * (n - m + 1))


def _ladder_generator(n: int) -> np.ndarray:
    A = np.zeros((n + 1, n + 1))
    for m in range(1, n + 1):
        r = dicke_ladder_rate(n, m)
        A[m, m] -= r
        A[m - 1, m] += r
    return A


@dataclass
class DickeResult:
    times: np.ndarray
    populations: np.ndarray  # (T, n+1), column m = m excitations
    rate: np.ndarray


def dicke_reference(n: int, grid) -> DickeResult:
    """Symmetric-ladder rate equations from the fully excited rung."""
    if int(n) != n or n < 1:
        raise InvalidArgumentError("n must be a positive integer")
    n = int(n)
    times = grid.samples if isinstance(grid, TimeGrid) else np.asarray(grid, dtype=float)
    A = _ladder_generator(n)
    p0 = np.zeros(n + 1)
    p0[n] = 1.0
    pops = np.array([expm(A * t) @ p0 for t in times])
    rungs = np.array([dicke_ladder_rate(n, m) for m in range(n + 1)])
    return DickeResult(np.array(times, dtype=float), pops, pops @ rungs)


def dicke_peak(n: int) -> tuple:
    """(t_peak, R_peak) of the ladder emission rate; t_peak = 0 without a burst."""
    A = _ladder_generator(n)
    p0 = np.zeros(n + 1)
    p0[n] = 1.0
    rungs = np.array([dicke_ladder_rate(n, m) for m in range(n + 1)])

    def rate(t):
        return float(rungs @ (expm(A * t) @ p0))

    grid = np.linspace(0.0, 10.0 / n, 401)
    vals = np.array([rate(t) for t in grid])
    i = int(np.argmax(vals))
    if i == 0:
        return 0.0, vals[0]
    res = minimize_scalar(lambda t: -rate(t), bounds=(grid[i - 1], grid[min(i + 1, 400)]),
                          method="bounded", options={"xatol": 1e-12})
    return float(res.x), -float(res.fun)
