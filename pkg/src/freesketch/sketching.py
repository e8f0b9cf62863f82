"""Random sketch families normalized so that ``S @ S.T`` is close to the identity.

Every operator is fully determined by ``(kind, p, q, seed)``. Internals are
re-derived from the seed with a counter-based generator (Philox), so an
operator can be serialized as a four-field descriptor.

Application is matrix-free where the structure allows it:

* Gaussian / Orthogonal: dense ``p x q`` matrix, ``O(npq)``.
* CountSketch: hash ``h: [p] -> [q]`` plus signs, applied as a sparse matrix in ``O(nnz(X))``.
* SRDCT: random signs, orthonormal DCT-II, row subsample, scale ``sqrt(p/q)``,
  applied with an FFT in ``O(np log p)``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
import scipy.fft
import scipy.sparse as sp

from .errors import InvalidArgumentError, SizeGuardError

MATERIALIZE_LIMIT = 10**8

_MASK64 = (1 << 64) - 1


class SketchKind(str, enum.Enum):
    GAUSSIAN = "gaussian"
    ORTHOGONAL = "orthogonal"
    COUNTSKETCH = "countsketch"
    SRDCT = "srdct"
    IDENTITY = "identity"

    @classmethod
    def parse(cls, value) -> "SketchKind":
        if isinstance(value, cls):
            return value
        key = str(value).strip().lower().replace("_", "").replace("-", "")
        aliases = {"iid": "gaussian", "orth": "orthogonal", "count": "countsketch",
                   "countsketch": "countsketch", "dct": "srdct", "none": "identity"}
        key = aliases.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise InvalidArgumentError(f"unknown sketch kind {value!r}") from None


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


def derive_seed(base: int, *path: int) -> int:
    """Child seed for stream ``path`` under ``base`` (e.g. trial, member)."""
    s = splitmix64(int(base) & _MASK64)
    for k in path:
        s = splitmix64(s ^ splitmix64((int(k) + 1) & _MASK64))
    return s


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed) & _MASK64))


@dataclass(frozen=True)
class SketchOperator:
    """A ``p x q`` sketch ``S``; features are sketched as ``X @ S``.

    For observation sketching the same object plays ``T`` (``n x m``) and is
    applied as ``T.T @ X`` via :meth:`apply_transpose`.
    """

    kind: SketchKind
    p: int
    q: int
    seed: int
    _dense: np.ndarray | None = field(default=None, repr=False, compare=False)
    _hash: np.ndarray | None = field(default=None, repr=False, compare=False)
    _signs: np.ndarray | None = field(default=None, repr=False, compare=False)
    _index: np.ndarray | None = field(default=None, repr=False, compare=False)
    _sparse: sp.csr_matrix | None = field(default=None, repr=False, compare=False)

    @property
    def alpha(self) -> float:
        return self.q / self.p

    @property
    def scale(self) -> float:
        return float(np.sqrt(self.p / self.q))

    # -- application -----------------------------------------------------

    def apply_right(self, X):
        """``X @ S`` for an ``n x p`` dense or sparse matrix."""
        if X.ndim != 2 or X.shape[1] != self.p:
            raise InvalidArgumentError(
                f"expected {self.p} columns, got shape {X.shape}")
        kind = self.kind
        if kind is SketchKind.IDENTITY:
            return X.toarray() if sp.issparse(X) else np.array(X, dtype=float)
        if kind is SketchKind.COUNTSKETCH:
            out = X @ self._sparse
            return out.toarray() if sp.issparse(out) else np.asarray(out)
        if kind is SketchKind.SRDCT:
            Xd = X.toarray() if sp.issparse(X) else np.asarray(X, dtype=float)
            Z = scipy.fft.dct(Xd * self._signs, type=2, norm="ortho", axis=1)
            return Z[:, self._index] * self.scale
        out = X @ self._dense
        return np.asarray(out)

    def apply_transpose(self, Z):
        """``S.T @ Z`` for a length-``p`` vector or ``p x k`` matrix."""
        Z = Z.toarray() if sp.issparse(Z) else np.asarray(Z, dtype=float)
        if Z.shape[0] != self.p:
            raise InvalidArgumentError(
                f"expected leading dimension {self.p}, got shape {Z.shape}")
        kind = self.kind
        if kind is SketchKind.IDENTITY:
            return Z.copy()
        if kind is SketchKind.COUNTSKETCH:
            return np.asarray(self._sparse.T @ Z)
        if kind is SketchKind.SRDCT:
            signs = self._signs if Z.ndim == 1 else self._signs[:, None]
            W = scipy.fft.dct(Z * signs, type=2, norm="ortho", axis=0)
            return W[self._index] * self.scale
        return self._dense.T @ Z

    def apply(self, B):
        """``S @ B`` for a length-``q`` vector or ``q x k`` matrix."""
        B = np.asarray(B, dtype=float)
        if B.shape[0] != self.q:
            raise InvalidArgumentError(
                f"expected leading dimension {self.q}, got shape {B.shape}")
        kind = self.kind
        if kind is SketchKind.IDENTITY:
            return B.copy()
        if kind is SketchKind.COUNTSKETCH:
            return np.asarray(self._sparse @ B)
        if kind is SketchKind.SRDCT:
            full = np.zeros((self.p,) + B.shape[1:])
            full[self._index] = B
            W = scipy.fft.idct(full, type=2, norm="ortho", axis=0)
            signs = self._signs if B.ndim == 1 else self._signs[:, None]
            return W * signs * self.scale
        return self._dense @ B

    def materialize(self) -> np.ndarray:
        if self.p * self.q > MATERIALIZE_LIMIT:
            raise SizeGuardError(
                f"dense {self.p}x{self.q} sketch exceeds {MATERIALIZE_LIMIT} entries")
        if self._dense is not None:
            return self._dense.copy()
        if self.kind is SketchKind.IDENTITY:
            return np.eye(self.p)
        if self.kind is SketchKind.COUNTSKETCH:
            return self._sparse.toarray()
        return self.apply(np.eye(self.q))

    def gram(self, A: np.ndarray) -> np.ndarray:
        """``S.T @ A @ S`` for a symmetric ``p x p`` matrix ``A``."""
        AS = self.apply_right(np.asarray(A, dtype=float))
        G = self.apply_transpose(AS)
        return (G + G.T) / 2

    # -- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "p": self.p, "q": self.q, "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "SketchOperator":
        return make_sketch(d["kind"], d["p"], d["q"], d["seed"])


def make_sketch(kind, p: int, q: int, seed: int) -> SketchOperator:
    """Build a sketch of the given family; identical arguments give identical operators."""
    kind = SketchKind.parse(kind)
    p, q = int(p), int(q)
    if p < 1 or q < 1:
        raise InvalidArgumentError(f"dimensions must be positive, got p={p}, q={q}")
    if kind is SketchKind.IDENTITY and q != p:
        raise InvalidArgumentError("identity sketch requires q == p")
    if kind in (SketchKind.ORTHOGONAL, SketchKind.SRDCT, SketchKind.COUNTSKETCH) and q > p:
        raise InvalidArgumentError(f"{kind.value} sketch requires q <= p, got q={q} > p={p}")
    rng = make_rng(seed)
    extra = {}
    if kind is SketchKind.GAUSSIAN:
        extra["_dense"] = rng.standard_normal((p, q)) / np.sqrt(q)
    elif kind is SketchKind.ORTHOGONAL:
        Q, R = np.linalg.qr(rng.standard_normal((p, q)))
        # sign fix makes Q Haar-distributed
        d = np.sign(np.diag(R))
        d[d == 0] = 1.0
        extra["_dense"] = Q * d * np.sqrt(p / q)
    elif kind is SketchKind.COUNTSKETCH:
        h = rng.integers(0, q, size=p)
        signs = rng.integers(0, 2, size=p) * 2.0 - 1.0
        extra["_hash"] = h
        extra["_signs"] = signs
        extra["_sparse"] = sp.csr_matrix((signs, (np.arange(p), h)), shape=(p, q))
    elif kind is SketchKind.SRDCT:
        extra["_signs"] = rng.integers(0, 2, size=p) * 2.0 - 1.0
        extra["_index"] = np.sort(rng.choice(p, size=q, replace=False))
    return SketchOperator(kind, p, q, int(seed), **extra)


def apply_right(X, S: SketchOperator):
    return S.apply_right(X)


def apply_transpose(S: SketchOperator, x):
    return S.apply_transpose(x)


def materialize(S: SketchOperator) -> np.ndarray:
    return S.materialize()


def member_sketches(kind, p: int, q: int, K: int, seed: int) -> list[SketchOperator]:
    """``K`` independent sketches whose seeds are split off ``seed``."""
    return [make_sketch(kind, p, q, derive_seed(seed, k)) for k in range(K)]
