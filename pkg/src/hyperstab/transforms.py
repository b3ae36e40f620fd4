"""Discrete integral transform, its exact inverse, and the feedback laws.

The transform maps a state z to gamma = z - quadrature(K z): each left
component i >= 2 subtracts trapezoid integrals of kernel rows against the
lower components, while component 1 and every right component pass through
untouched.  In component-major ordering the discrete matrix is unit lower
block-triangular, so the inverse is exact forward substitution, no
conditioning argument needed, and the inverse kernel has the same cascade
shape with entries recoverable column-by-column from sampled impulses.

Feedback variants: ``zero``; ``riesz`` (node tables f_ij integrated against
the full state); ``fredholm`` (minus the kernel trace at x = 1 integrated
against the inverse-transformed left block), the one that realizes the
optimal vanishing time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import FredholmKernel, write_kernel_tables_csv
from .system_model import Grid, StateVector

__all__ = [
    "IntegralOperator",
    "InverseKernel",
    "FeedbackLaw",
    "apply_fredholm",
    "invert_fredholm",
    "inverse_kernel",
    "feedback_H",
    "feedback_H_via_theta",
    "feedback_riesz",
]


@dataclass(frozen=True)
class IntegralOperator:
    """Forward transform (identity minus weighted kernel quadrature)."""

    kernel: FredholmKernel
    grid: Grid
    weighted: dict[tuple[int, int], np.ndarray]  # table * trapezoid weights

    @classmethod
    def from_kernel(cls, kernel: FredholmKernel) -> "IntegralOperator":
        w = kernel.grid.trapezoid_weights()
        weighted = {key: tab * w[None, :] for key, tab in kernel.tables.items()}
        return cls(kernel, kernel.grid, weighted)

    @property
    def m(self) -> int:
        return self.kernel.m

    def _check(self, state: StateVector) -> None:
        if state.grid.n_cells != self.grid.n_cells:
            raise ValueError(
                f"state grid N={state.grid.n_cells} does not match operator "
                f"grid N={self.grid.n_cells}"
            )

    def _apply_data(self, data: np.ndarray) -> np.ndarray:
        out = data.copy()
        for (i, j), kw in self.weighted.items():
            out[i - 1] -= kw @ data[j - 1]
        return out

    def _invert_data(self, data: np.ndarray) -> np.ndarray:
        out = data.copy()
        for i in range(2, self.m + 1):
            for j in range(1, i):
                kw = self.weighted.get((i, j))
                if kw is not None:
                    out[i - 1] += kw @ out[j - 1]
        return out


def apply_fredholm(op: IntegralOperator, state: StateVector) -> StateVector:
    """gamma_i = z_i - sum_{j<i} quadrature(k_ij z_j) for 2 <= i <= m."""
    op._check(state)
    return StateVector(state.grid, state.m, op._apply_data(state.data))


def invert_fredholm(op: IntegralOperator, state: StateVector) -> StateVector:
    """Exact discrete inverse by forward substitution in component order."""
    op._check(state)
    return StateVector(state.grid, state.m, op._invert_data(state.data))


@dataclass(frozen=True)
class InverseKernel:
    """Cascade-shaped kernel of the inverse transform."""

    m: int
    grid: Grid
    tables: dict[tuple[int, int], np.ndarray]

    def write_csv(self, path) -> None:
        write_kernel_tables_csv(self.tables, self.grid, path)


def inverse_kernel(op: IntegralOperator) -> InverseKernel:
    """Recover the inverse-transform kernel from sampled impulse columns.

    Feeding the canonical impulse basis of component j through the forward
    substitution reads off the discrete inverse column by column; dividing
    out the quadrature weights turns columns back into node tables.
    """
    grid, m = op.grid, op.m
    nn = grid.n_nodes
    w = grid.trapezoid_weights()
    tables: dict[tuple[int, int], np.ndarray] = {}
    for j in range(1, m):
        batch = np.zeros((m, nn, nn))
        batch[j - 1] = np.eye(nn)
        out = batch.copy()
        for i in range(2, m + 1):
            for jj in range(1, i):
                kw = op.weighted.get((i, jj))
                if kw is not None:
                    out[i - 1] += kw @ out[jj - 1]
        for i in range(j + 1, m + 1):
            theta = -out[i - 1] / w[None, :]
            if np.any(theta):
                tables[(i, j)] = theta
    return InverseKernel(m, grid, tables)


@dataclass(frozen=True)
class FeedbackLaw:
    """Boundary feedback for the left components at x = 1.

    Variants: ``zero``; ``riesz`` with square-integrable node tables of
    shape (m, n, nodes); ``fredholm`` carrying the transform operator whose
    kernel trace at x = 1 defines the optimal-time law.
    """

    variant: str
    riesz_tables: np.ndarray | None = None
    operator: IntegralOperator | None = None
    grid: Grid | None = None

    def __post_init__(self):
        if self.variant not in ("zero", "riesz", "fredholm"):
            raise ValueError(f"unknown feedback variant {self.variant!r}")
        if self.variant == "riesz" and (self.riesz_tables is None or self.grid is None):
            raise ValueError("riesz feedback needs node tables and a grid")
        if self.variant == "fredholm" and self.operator is None:
            raise ValueError("fredholm feedback needs an integral operator")

    @classmethod
    def zero(cls) -> "FeedbackLaw":
        return cls("zero")

    @classmethod
    def riesz(cls, tables: np.ndarray, grid: Grid) -> "FeedbackLaw":
        tables = np.asarray(tables, dtype=float)
        if tables.ndim != 3 or tables.shape[2] != grid.n_nodes:
            raise ValueError(f"riesz tables must be (m, n, {grid.n_nodes})")
        return cls("riesz", riesz_tables=tables, grid=grid)

    @classmethod
    def fredholm(cls, operator: IntegralOperator) -> "FeedbackLaw":
        return cls("fredholm", operator=operator, grid=operator.grid)

    def evaluate(self, state: StateVector, m: int | None = None) -> np.ndarray:
        if self.variant == "zero":
            return np.zeros(m if m is not None else state.m)
        if self.variant == "riesz":
            return feedback_riesz(self, state)
        return feedback_H(self, state)


def feedback_H(law: FeedbackLaw, state: StateVector) -> np.ndarray:
    """Optimal-time feedback: invert the transform, integrate the x=1 trace.

    Component i gets minus the trapezoid integral of k_ij(1, .) against the
    recovered lower components; component 1 has no kernel row and is 0.
    """
    if law.variant != "fredholm":
        raise ValueError(f"feedback_H needs the fredholm variant, got {law.variant!r}")
    op = law.operator
    op._check(state)
    z = op._invert_data(state.data)
    out = np.zeros(op.m)
    for (i, j), kw in op.weighted.items():
        out[i - 1] -= kw[-1, :] @ z[j - 1]
    return out


def feedback_H_via_theta(
    op: IntegralOperator, theta: InverseKernel, state: StateVector
) -> np.ndarray:
    """Same law, routed through a tabulated inverse kernel instead.

    Applies the inverse transform as identity-minus-quadrature with the
    theta tables, then integrates the x=1 kernel trace.  Kept alongside
    :func:`feedback_H` so the two routes can be cross-checked.
    """
    op._check(state)
    w = op.grid.trapezoid_weights()
    z = state.data.copy()
    for (i, j), tab in theta.tables.items():
        z[i - 1] -= (tab * w[None, :]) @ state.data[j - 1]
    out = np.zeros(op.m)
    for (i, j), kw in op.weighted.items():
        out[i - 1] -= kw[-1, :] @ z[j - 1]
    return out


def feedback_riesz(law: FeedbackLaw, state: StateVector) -> np.ndarray:
    """Component i = sum_j trapezoid(f_ij u_j) over the full state."""
    if law.variant != "riesz":
        raise ValueError(f"feedback_riesz needs the riesz variant, got {law.variant!r}")
    if state.grid.n_cells != law.grid.n_cells:
        raise ValueError("state grid does not match the feedback tables")
    w = state.grid.trapezoid_weights()
    # (m, n, nodes) x (n, nodes) -> (m,)
    return np.einsum("ijk,jk->i", law.riesz_tables, w[None, :] * state.data)
