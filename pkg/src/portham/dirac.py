"""Constant Dirac structures in kernel representation.

A structure on a k-dimensional port space is D = {(f, e) : F f + E e = 0}
with F, E square.  D is Dirac exactly when rank [F | E] = k and
F E^T + E F^T = 0; power conservation e^T f = 0 on D follows.  Rank
decisions use a singular-value cutoff of 1e-10 times the largest
singular value.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import null_space

RESIDUAL_TOL = 1e-10
RANK_RTOL = 1e-10


class DiracError(ValueError):
    pass


def _rank(matrix) -> int:
    if matrix.size == 0:
        return 0
    svals = np.linalg.svd(matrix, compute_uv=False)
    if svals.size == 0 or svals[0] == 0.0:
        return 0
    return int(np.sum(svals > RANK_RTOL * svals[0]))


def _normalize_ports(ports, dim):
    if ports is None:
        return (("p", dim),) if dim else ()
    out = tuple((str(name), int(width)) for name, width in ports)
    if sum(w for _, w in out) != dim:
        raise DiracError(f"port widths {out} do not sum to dimension {dim}")
    names = [name for name, _ in out]
    if len(set(names)) != len(names):
        raise DiracError("duplicate port names")
    return out


@dataclass
class DiracStructure:
    """Kernel representation (F, E) with a named port layout."""

    F: np.ndarray
    E: np.ndarray
    ports: tuple

    def __post_init__(self):
        self.F = np.asarray(self.F, dtype=float)
        self.E = np.asarray(self.E, dtype=float)
        if self.F.size == 0:
            self.F = self.F.reshape(0, 0)
        if self.E.size == 0:
            self.E = self.E.reshape(0, 0)
        k = self.F.shape[0]
        if self.F.shape != (k, k) or self.E.shape != (k, k):
            raise DiracError(
                f"F and E must be square of equal size, got {self.F.shape}, {self.E.shape}")
        self.ports = _normalize_ports(self.ports, k)

    @property
    def dim(self) -> int:
        return self.F.shape[0]

    def port_slice(self, name: str) -> slice:
        offset = 0
        for pname, width in self.ports:
            if pname == name:
                return slice(offset, offset + width)
            offset += width
        raise DiracError(f"no port named {name!r}")

    def contains(self, f, e, tol: float = 1e-9) -> bool:
        res = self.F @ np.asarray(f, dtype=float) + self.E @ np.asarray(e, dtype=float)
        return bool(np.abs(res).max() <= tol) if res.size else True

    def as_dict(self):
        return {"F": self.F.tolist(), "E": self.E.tolist(),
                "ports": [[n, w] for n, w in self.ports]}

    @classmethod
    def from_dict(cls, data):
        return cls(np.array(data["F"], dtype=float), np.array(data["E"], dtype=float),
                   tuple((n, w) for n, w in data["ports"]))


def empty_structure() -> DiracStructure:
    return DiracStructure(np.zeros((0, 0)), np.zeros((0, 0)), ())


def from_skew_map(J, ports=None) -> DiracStructure:
    """Graph of f = J e for skew J, as the kernel of [I | -J]."""
    J = np.asarray(J, dtype=float)
    if J.ndim != 2 or J.shape[0] != J.shape[1]:
        raise DiracError(f"skew map must be square, got {J.shape}")
    if np.abs(J + J.T).max() > 1e-12:
        raise DiracError("map is not skew-symmetric to 1e-12")
    return DiracStructure(np.eye(J.shape[0]), -J, _normalize_ports(ports, J.shape[0]))


def from_kirchhoff(K, ports=None) -> DiracStructure:
    """D = K x K^perp for a flow-constraint subspace K, given by a basis
    matrix whose d columns span K inside R^k."""
    K = np.asarray(K, dtype=float)
    if K.ndim != 2:
        raise DiracError("subspace basis must be a matrix")
    k, d = K.shape
    if d > k or _rank(K) != d:
        raise DiracError(f"basis columns must be independent, got shape {K.shape}")
    # f in K  <=>  N f = 0 with rows of N spanning K^perp;
    # e in K^perp  <=>  K^T e = 0.  Stacking both gives a square kernel
    # representation with F E^T + E F^T = N K = 0 by construction.
    N = null_space(K.T).T if d < k else np.zeros((0, k))
    q, _ = np.linalg.qr(K)
    F = np.vstack([N, np.zeros((d, k))])
    E = np.vstack([np.zeros((k - d, k)), q.T])
    return DiracStructure(F, E, _normalize_ports(ports, k))


@dataclass
class DiracReport:
    dim: int
    rank: int
    skew_residual: float
    power_residual: float

    @property
    def passed(self) -> bool:
        return (self.rank == self.dim
                and self.skew_residual <= RESIDUAL_TOL
                and self.power_residual <= RESIDUAL_TOL)

    def as_dict(self):
        return {"dim": self.dim, "rank": self.rank,
                "skew_residual": float(self.skew_residual),
                "power_residual": float(self.power_residual),
                "passed": self.passed}


def verify_dirac(F, E) -> DiracReport:
    """Check the kernel-representation invariants and measure the worst
    power pairing e^T f over an orthonormal basis of the kernel."""
    F = np.asarray(F, dtype=float)
    E = np.asarray(E, dtype=float)
    k = F.shape[0]
    if k == 0:
        return DiracReport(0, 0, 0.0, 0.0)
    rank = _rank(np.hstack([F, E]))
    skew = float(np.abs(F @ E.T + E @ F.T).max())
    basis = null_space(np.hstack([F, E]))
    if basis.size:
        wf, we = basis[:k, :], basis[k:, :]
        pairing = we.T @ wf
        power = float(np.abs(pairing + pairing.T).max()) / 2.0
    else:
        power = 0.0
    return DiracReport(k, rank, skew, power)


def compose(a: DiracStructure, b: DiracStructure, shared) -> DiracStructure:
    """Interconnect two structures through shared ports.

    `shared` pairs port names of `a` with port names of `b`; paired
    ports carry f_a = -f_b and e_a = e_b.  The shared variables are
    eliminated and the projection onto the remaining ports is returned.
    A composition whose projected subspace fails to be Dirac (rank
    defect under the SVD cutoff) is reported as an error.
    """
    shared = list(shared)
    if not shared and b.dim == 0:
        return a
    pairs = []
    for name_a, name_b in shared:
        sl_a, sl_b = a.port_slice(name_a), b.port_slice(name_b)
        if sl_a.stop - sl_a.start != sl_b.stop - sl_b.start:
            raise DiracError(f"shared ports {name_a!r} and {name_b!r} differ in width")
        pairs.append((sl_a, sl_b))
    ia = np.concatenate([np.arange(s.start, s.stop) for s, _ in pairs]) \
        if pairs else np.zeros(0, dtype=int)
    ib = np.concatenate([np.arange(s.start, s.stop) for _, s in pairs]) \
        if pairs else np.zeros(0, dtype=int)
    if len(set(ia.tolist())) != ia.size or len(set(ib.tolist())) != ib.size:
        raise DiracError("a port may appear in at most one shared pair")
    ext_a = np.setdiff1d(np.arange(a.dim), ia)
    ext_b = np.setdiff1d(np.arange(b.dim), ib)
    k_ext = ext_a.size + ext_b.size

    # Unknowns: external (f_a_ext, f_b_ext, e_a_ext, e_b_ext) and
    # internal (f_sh, e_sh) on a's side of the pairing; b's shared
    # variables are substituted as f_b = -f_sh, e_b = e_sh.
    rows = a.dim + b.dim
    A_ext = np.zeros((rows, 2 * k_ext))
    A_int = np.zeros((rows, 2 * ia.size))
    ra = slice(0, a.dim)
    rb = slice(a.dim, rows)

    A_ext[ra, :ext_a.size] = a.F[:, ext_a]
    A_ext[rb, ext_a.size:k_ext] = b.F[:, ext_b]
    A_ext[ra, k_ext:k_ext + ext_a.size] = a.E[:, ext_a]
    A_ext[rb, k_ext + ext_a.size:] = b.E[:, ext_b]

    A_int[ra, :ia.size] = a.F[:, ia]
    A_int[rb, :ia.size] = -b.F[:, ib]
    A_int[ra, ia.size:] = a.E[:, ia]
    A_int[rb, ia.size:] = b.E[:, ib]

    if A_int.shape[1]:
        U = null_space(A_int.T)
        M = U.T @ A_ext
    else:
        M = A_ext
    rank = _rank(M)
    if rank != k_ext:
        raise DiracError(
            f"degenerate composition: projected rank {rank}, expected {k_ext}")
    if k_ext == 0:
        F_new = np.zeros((0, 0))
        E_new = np.zeros((0, 0))
    else:
        _, _, vt = np.linalg.svd(M)
        rowspace = vt[:rank]
        F_new = rowspace[:, :k_ext]
        E_new = rowspace[:, k_ext:]
    ports = [(n, w) for n, w in a.ports if n not in {p for p, _ in shared}]
    used = {n for n, _ in ports}
    for n, w in b.ports:
        if n in {p for _, p in shared}:
            continue
        while n in used:  # keep remaining port names unique
            n = n + "'"
        used.add(n)
        ports.append((n, w))
    return DiracStructure(F_new, E_new, tuple(ports))
