"""Emitter position sets: chains, rings and disordered lattice realizations.

All lengths are in units of the transition wavelength.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import CoincidentPointError, InvalidArgumentError

__all__ = [
    "AtomArray",
    "DisorderSpec",
    "Provenance",
    "build_chain",
    "build_ring",
    "apply_disorder",
    "named_rng",
    "write_array",
    "read_array",
]


def named_rng(seed: int, name: str) -> np.random.Generator:
    """Independent generator for the stream ``name`` derived from ``seed``.

    Streams are keyed by a CRC of the name, so adding a new stream never
    perturbs the draws of an existing one.
    """
    key = zlib.crc32(name.encode("utf-8"))
    ss = np.random.SeedSequence(int(seed), spawn_key=(key,))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class Provenance:
    kind: str  # chain | ring | disordered | custom
    n_atoms: int
    d: Optional[float] = None
    seed: Optional[int] = None
    sigma: Optional[tuple] = None
    n_sites: Optional[int] = None
    sites: Optional[tuple] = None
    parent: Optional[str] = None

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "n_atoms": self.n_atoms}
        for key in ("d", "seed", "sigma", "n_sites", "sites", "parent"):
            value = getattr(self, key)
            if value is not None:
                out[key] = list(value) if isinstance(value, tuple) else value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "Provenance":
        kw = dict(data)
        for key in ("sigma", "sites"):
            if kw.get(key) is not None:
                kw[key] = tuple(kw[key])
        return cls(**kw)


@dataclass(frozen=True)
class AtomArray:
    positions: np.ndarray
    provenance: Optional[Provenance] = field(default=None, compare=False)

    def __post_init__(self):
        pos = np.array(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[1] != 3 or pos.shape[0] < 1:
            raise InvalidArgumentError("positions must be a non-empty (N, 3) array")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        if self.provenance is None:
            object.__setattr__(self, "provenance", Provenance("custom", pos.shape[0]))
        if pos.shape[0] > 1 and self.min_distance() <= 0.0:
            raise CoincidentPointError("two emitters share a position")

    @property
    def n_atoms(self) -> int:
        return self.positions.shape[0]

    @property
    def z(self) -> np.ndarray:
        return self.positions[:, 2]

    @property
    def is_chain(self) -> bool:
        p = self.positions
        return self.provenance.kind == "chain" or bool(
            np.all(p[:, :2] == 0.0) and np.all(np.diff(p[:, 2]) > 0)
        )

    def min_distance(self) -> float:
        p = self.positions
        if len(p) < 2:
            return np.inf
        diff = p[:, None, :] - p[None, :, :]
        dist = np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))
        dist[np.diag_indices(len(p))] = np.inf
        return float(dist.min())


@dataclass(frozen=True)
class DisorderSpec:
    sigma: tuple
    n_sites: int
    n_atoms: int
    seed: int

    def __post_init__(self):
        sigma = tuple(float(s) for s in self.sigma)
        if len(sigma) != 3:
            raise InvalidArgumentError("sigma must have three components")
        if any(s < 0 for s in sigma):
            raise InvalidArgumentError("sigma components must be >= 0")
        if self.n_sites < 1 or self.n_atoms < 1:
            raise InvalidArgumentError("n_sites and n_atoms must be positive")
        if self.n_atoms > self.n_sites:
            raise InvalidArgumentError(
                f"n_atoms={self.n_atoms} exceeds n_sites={self.n_sites}"
            )
        if not 0 <= int(self.seed) < 2**64:
            raise InvalidArgumentError("seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "sigma", sigma)


def build_chain(n: int, d: float) -> AtomArray:
    """``n`` emitters on the z axis at ``(0, 0, i*d)``."""
    if int(n) != n or n < 1:
        raise InvalidArgumentError("chain needs n >= 1")
    if not d > 0:
        raise InvalidArgumentError("lattice constant must be positive")
    n = int(n)
    pos = np.zeros((n, 3))
    pos[:, 2] = np.arange(n) * float(d)
    return AtomArray(pos, Provenance("chain", n, d=float(d)))


def build_ring(n: int, d: float) -> AtomArray:
    """Regular ``n``-gon in the x-z plane with nearest-neighbour chord ``d``."""
    if int(n) != n or n < 2:
        raise InvalidArgumentError("ring needs n >= 2")
    if not d > 0:
        raise InvalidArgumentError("lattice constant must be positive")
    n = int(n)
    radius = d / (2.0 * np.sin(np.pi / n))
    phi = 2.0 * np.pi * np.arange(n) / n
    pos = np.zeros((n, 3))
    pos[:, 0] = radius * np.cos(phi)
    pos[:, 2] = radius * np.sin(phi)
    return AtomArray(pos, Provenance("ring", n, d=float(d)))


def apply_disorder(lattice: AtomArray, spec: DisorderSpec) -> AtomArray:
    """Random partial filling plus Gaussian position noise.

    ``spec.n_atoms`` of the ``spec.n_sites`` lattice sites are occupied
    (uniformly, without replacement) and every occupied site is displaced
    by independent normal draws with per-axis widths ``spec.sigma``. Site
    selection and displacements come from separate named streams of
    ``spec.seed``; kept sites stay in lattice order.
    """
    if lattice.n_atoms != spec.n_sites:
        raise InvalidArgumentError(
            f"lattice has {lattice.n_atoms} sites, spec expects {spec.n_sites}"
        )
    site_rng = named_rng(spec.seed, "geometry.sites")
    noise_rng = named_rng(spec.seed, "geometry.noise")
    if spec.n_atoms == spec.n_sites:
        sites = np.arange(spec.n_sites)
    else:
        sites = np.sort(site_rng.choice(spec.n_sites, size=spec.n_atoms, replace=False))
    noise = noise_rng.standard_normal((spec.n_atoms, 3)) * np.asarray(spec.sigma)
    pos = lattice.positions[sites] + noise
    prov = Provenance(
        "disordered",
        spec.n_atoms,
        d=lattice.provenance.d,
        seed=int(spec.seed),
        sigma=spec.sigma,
        n_sites=spec.n_sites,
        sites=tuple(int(s) for s in sites),
        parent=lattice.provenance.kind,
    )
    return AtomArray(pos, prov)


def write_array(path, array: AtomArray) -> None:
    prov = array.provenance.to_dict()
    lines = [
        "# superrad atom array, lengths in lambda0",
        "# provenance: " + json.dumps(prov, sort_keys=True),
        f"# seed: {prov.get('seed', 'none')}",
    ]
    lines += ["{!r} {!r} {!r}".format(*map(float, p)) for p in array.positions]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def read_array(path) -> AtomArray:
    prov = None
    rows: list[Sequence[float]] = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if line.startswith("# provenance:"):
                    prov = Provenance.from_dict(json.loads(line.split(":", 1)[1]))
                continue
            rows.append([float(tok) for tok in line.split()])
    pos = np.array(rows, dtype=float)
    if prov is None:
        prov = Provenance("custom", len(pos))
    return AtomArray(pos, prov)
