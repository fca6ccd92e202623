"""Squared-exponential base kernels and the control-affine composite kernel.

The composite kernel acts on pairs ``(x, y)`` where ``x`` is a state feature
vector and ``y = [1, u]`` is the augmented input::

    k((x, y), (x', y')) = y^T diag(k_1(x, x'), ..., k_{m+1}(x, x')) y'

Points are stored as rows: ``X`` has shape ``(N, D)`` and ``Y`` has shape
``(N, m + 1)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

KINDS = ("squared-exponential",)


def _as_point(x) -> np.ndarray:
    return np.atleast_1d(np.asarray(x, dtype=float))


@dataclass(frozen=True)
class BaseKernelParams:
    """ARD squared-exponential kernel ``s2 * exp(-0.5 * sum(((a - b) / l)**2))``."""

    lengthscales: np.ndarray
    signal_variance: float
    kind: str = "squared-exponential"

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float)).copy()
        ls.flags.writeable = False
        object.__setattr__(self, "lengthscales", ls)
        object.__setattr__(self, "signal_variance", float(self.signal_variance))
        if self.kind not in KINDS:
            raise ValueError(f"unsupported kernel kind {self.kind!r}")
        if ls.size == 0 or not np.all(ls > 0) or not np.all(np.isfinite(ls)):
            raise ValueError("lengthscales must be positive and finite")
        if not (self.signal_variance > 0 and np.isfinite(self.signal_variance)):
            raise ValueError("signal_variance must be positive and finite")

    @property
    def dim(self) -> int:
        return self.lengthscales.size

    def matrix(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        """Kernel matrix between the rows of ``A`` and ``B``."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        B = np.atleast_2d(np.asarray(B, dtype=float))
        if A.shape[1] != self.dim or B.shape[1] != self.dim:
            raise ValueError(
                f"expected {self.dim}-dimensional points, got {A.shape[1]} and {B.shape[1]}"
            )
        diff = (A[:, None, :] - B[None, :, :]) / self.lengthscales
        return self.signal_variance * np.exp(-0.5 * np.einsum("ijk,ijk->ij", diff, diff))

    def __eq__(self, other):
        if not isinstance(other, BaseKernelParams):
            return NotImplemented
        return (
            self.kind == other.kind
            and self.signal_variance == other.signal_variance
            and np.array_equal(self.lengthscales, other.lengthscales)
        )

    def __hash__(self):
        return hash((self.kind, self.signal_variance, self.lengthscales.tobytes()))


def base_eval(params: BaseKernelParams, x, x_prime) -> float:
    x = _as_point(x)
    x_prime = _as_point(x_prime)
    if x.shape != (params.dim,) or x_prime.shape != (params.dim,):
        raise ValueError(
            f"dimension mismatch: kernel has {params.dim} lengthscales, "
            f"points have {x.size} and {x_prime.size} entries"
        )
    r = (x - x_prime) / params.lengthscales
    return params.signal_variance * float(np.exp(-0.5 * np.dot(r, r)))


@dataclass(frozen=True)
class CompositeKernel:
    """Diagonal control-affine kernel built from ``m + 1`` base kernels."""

    base: tuple[BaseKernelParams, ...]
    region_id: int = 1

    def __post_init__(self):
        base = tuple(self.base)
        if len(base) < 2:
            raise ValueError("composite kernel needs m + 1 >= 2 base kernels")
        dims = {b.dim for b in base}
        if len(dims) != 1:
            raise ValueError("all base kernels must share the state dimension")
        object.__setattr__(self, "base", base)

    @property
    def n_outputs(self) -> int:
        """Length of the augmented input ``y`` (``m + 1``)."""
        return len(self.base)

    @property
    def state_dim(self) -> int:
        return self.base[0].dim

    def lambda_diag(self, x, x_prime) -> np.ndarray:
        """Diagonal of Lambda(x, x') as a vector."""
        return np.array([base_eval(b, x, x_prime) for b in self.base])

    def base_matrices(self, A: np.ndarray, B: np.ndarray) -> np.ndarray:
        """Stacked base kernel matrices, shape ``(m + 1, len(A), len(B))``."""
        return np.stack([b.matrix(A, B) for b in self.base])

    # log-space packing: per base kernel [log l_1..log l_D, log s2]
    def to_log_params(self) -> np.ndarray:
        parts = []
        for b in self.base:
            parts.append(np.log(b.lengthscales))
            parts.append([np.log(b.signal_variance)])
        return np.concatenate(parts)

    @classmethod
    def from_log_params(cls, theta, n_outputs: int, state_dim: int, region_id: int = 1):
        theta = np.asarray(theta, dtype=float)
        per = state_dim + 1
        if theta.size != per * n_outputs:
            raise ValueError("log-parameter vector has the wrong length")
        base = []
        for i in range(n_outputs):
            chunk = theta[i * per:(i + 1) * per]
            base.append(BaseKernelParams(np.exp(chunk[:-1]), float(np.exp(chunk[-1]))))
        return cls(tuple(base), region_id)

    def to_dict(self) -> dict:
        return {
            "region_id": self.region_id,
            "base": [
                {
                    "kind": b.kind,
                    "lengthscales": [float(v) for v in b.lengthscales],
                    "signal_variance": b.signal_variance,
                }
                for b in self.base
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CompositeKernel":
        base = tuple(
            BaseKernelParams(np.array(b["lengthscales"], dtype=float), b["signal_variance"], b["kind"])
            for b in d["base"]
        )
        return cls(base, int(d["region_id"]))


def se_composite(m: int, lengthscales, signal_variance=1.0, region_id: int = 1) -> CompositeKernel:
    """Composite kernel whose ``m + 1`` base kernels all share the same parameters."""
    b = BaseKernelParams(np.atleast_1d(np.asarray(lengthscales, dtype=float)), signal_variance)
    return CompositeKernel(tuple([b] * (m + 1)), region_id)


def augment(u) -> np.ndarray:
    """``y = [1, u]`` for a single input or ``[1, u_j]`` rows for a batch."""
    u = np.asarray(u, dtype=float)
    if u.ndim <= 1:
        return np.concatenate([[1.0], np.atleast_1d(u)])
    return np.hstack([np.ones((u.shape[0], 1)), u])


def composite_eval(kernel: CompositeKernel, a, b) -> float:
    """Evaluate the composite kernel on ``a = (x, y)`` and ``b = (x', y')``."""
    x, y = a
    xp, yp = b
    y = _as_point(y)
    yp = _as_point(yp)
    if y.size != kernel.n_outputs or yp.size != kernel.n_outputs:
        raise ValueError(
            f"augmented inputs must have length {kernel.n_outputs}, got {y.size} and {yp.size}"
        )
    return float(np.sum(y * kernel.lambda_diag(x, xp) * yp))


def _check_data(kernel: CompositeKernel, X, Y):
    X = np.asarray(X, dtype=float).reshape(-1, kernel.state_dim)
    Y = np.asarray(Y, dtype=float).reshape(-1, kernel.n_outputs)
    if X.shape[0] != Y.shape[0]:
        raise ValueError(f"X has {X.shape[0]} points but Y has {Y.shape[0]}")
    return X, Y


def gram(kernel: CompositeKernel, X, Y) -> np.ndarray:
    """Gram matrix ``K_ij = k((x_i, y_i), (x_j, y_j))``; symmetric by construction."""
    X, Y = _check_data(kernel, X, Y)
    Kb = kernel.base_matrices(X, X)
    K = np.einsum("ni,inm,mi->nm", Y, Kb, Y)
    return 0.5 * (K + K.T)


def cross_matrix(kernel: CompositeKernel, x_star, X, Y) -> np.ndarray:
    """Cross-covariance block ``Kbar`` of shape ``(m + 1, N)``.

    Column ``i`` is ``[k_1(x*, x_i), ..., k_{m+1}(x*, x_i)] * y_i``.
    """
    X, Y = _check_data(kernel, X, Y)
    x_star = _as_point(x_star)
    if x_star.size != kernel.state_dim:
        raise ValueError(f"test state must have {kernel.state_dim} entries, got {x_star.size}")
    if X.shape[0] == 0:
        return np.zeros((kernel.n_outputs, 0))
    kb = kernel.base_matrices(x_star[None, :], X)[:, 0, :]
    return kb * Y.T
