"""Closed-form solutions and analytic predictions for the synthetic problem.

Two interpolants of ``Xw = y`` matter here:

* the minimum-norm solution ``X^T (XX^T)^{-1} y``, the fixed point of
  methods that stay inside the row span, and
* the sign solution ``tau * sign(X^T y)``, the fixed point of the
  diagonally preconditioned methods whenever ``X sign(X^T y) = c y`` for a
  scalar c (then ``tau = 1/c`` makes it interpolate).

On the synthetic family the Gram matrix has integer entries (4 or 8 on the
diagonal, 3 or 1 off it) and the minimum-norm coefficients collapse to one
value per class.  Two closed forms for that pair are provided:
`synthetic_alphas` is the published reduced-system form, which solves

    (3*n_pos + 1) a_plus - n_neg a_minus = 1
    -n_pos a_plus + (3*n_neg + 3) a_minus = 1,

while `exact_synthetic_alphas` solves the reduction of the actual Gram
matrix, whose negative-class row carries ``3*n_neg + 5`` (diagonal 8, not
6).  Only the latter reproduces `min_norm_solution` numerically; both give
the same classification signs for every ``n_pos, n_neg >= 1``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import LemmaPreconditionError, SingularKernelError
from .lsq import Dataset

__all__ = [
    "OracleSolution",
    "LemmaTrace",
    "label_correlation",
    "lemma_condition_check",
    "sign_solution",
    "min_norm_solution",
    "kernel_matrix",
    "synthetic_alphas",
    "exact_synthetic_alphas",
    "predicted_test_score",
    "analytic_test_error",
    "verify_lemma_trajectory",
    "solution_to_document",
    "solution_from_document",
    "save_solution",
    "load_solution",
]


@dataclass(frozen=True)
class OracleSolution:
    """A closed-form weight vector plus its derivation constants."""

    kind: str  # "min_norm" or "sign"
    w: np.ndarray
    c: float | None = None
    tau: float | None = None
    alpha_plus: float | None = None
    alpha_minus: float | None = None


@dataclass(frozen=True)
class LemmaTrace:
    """Deviation of a trajectory from the constant-sign-pattern line.

    `lambdas` holds the per-iterate scale read off the first supported
    coordinate; `max_deviation` is the largest gap to ``lambda_k * sign(u)``
    over supported coordinates; `off_support_max` is the largest absolute
    value ever seen on coordinates where ``u = X^T y`` vanishes (exactly 0.0
    for a conforming run).  `mus`/`nus` are optional diagnostics: the scalar
    residual factor and preconditioner scale of the constant-direction
    recursion.
    """

    lambdas: np.ndarray
    max_deviation: float
    off_support_max: float
    mus: np.ndarray | None = None
    nus: np.ndarray | None = None


def label_correlation(ds: Dataset) -> np.ndarray:
    """The vector ``u = X^T y`` (exact for integer-valued designs)."""
    return ds.matrix.T @ ds.y


def _active_columns(ds: Dataset) -> np.ndarray:
    """Boolean mask of columns touched by at least one example."""
    active = np.zeros(ds.d, dtype=bool)
    for row in ds.rows:
        for j, v in row:
            if v != 0.0:
                active[j - 1] = True
    return active


def lemma_condition_check(ds: Dataset) -> float | None:
    """Scalar c with ``X sign(X^T y) = c y`` exactly, if one exists.

    Returns None when any *active* column of X has a zero label
    correlation, when the row sums disagree, or when they disagree in sign
    with y.  Columns no example touches are structurally zero in every
    gradient and are not part of the test.
    """
    u = label_correlation(ds)
    if np.any(u[_active_columns(ds)] == 0.0):
        return None
    v = ds.matrix @ np.sign(u)
    cs = v * ds.y
    c = float(cs[0])
    if c <= 0.0 or np.any(cs != c):
        return None
    return c


def sign_solution(ds: Dataset) -> OracleSolution:
    """The interpolating constant-magnitude solution ``(1/c) sign(X^T y)``."""
    c = lemma_condition_check(ds)
    if c is None:
        raise LemmaPreconditionError(
            "no scalar c with X sign(X^T y) = c y; sign solution undefined"
        )
    tau = 1.0 / c
    w = tau * np.sign(label_correlation(ds))
    return OracleSolution(kind="sign", w=w, c=c, tau=tau)


def kernel_matrix(ds: Dataset) -> np.ndarray:
    """The row Gram matrix ``X X^T``."""
    return ds.gram


def min_norm_solution(ds: Dataset) -> OracleSolution:
    """The least-L2-norm interpolant ``X^T (XX^T)^{-1} y``."""
    K = kernel_matrix(ds)
    try:
        coef = np.linalg.solve(K, ds.y)
    except np.linalg.LinAlgError as exc:
        raise SingularKernelError("rows are linearly dependent") from exc
    resid = float(np.linalg.norm(K @ coef - ds.y))
    if not np.all(np.isfinite(coef)) or resid > 1e-8 * np.sqrt(ds.n):
        raise SingularKernelError(f"Gram solve residual {resid:.3e} too large")
    w = ds.matrix.T @ coef
    a_plus = a_minus = None
    if ds.p is not None:
        pos, neg = ds.y > 0, ds.y < 0
        if pos.any():
            a_plus = float(np.mean(coef[pos]))
        if neg.any():
            a_minus = float(-np.mean(coef[neg]))
    return OracleSolution(kind="min_norm", w=w, alpha_plus=a_plus, alpha_minus=a_minus)


def synthetic_alphas(n_pos: int, n_neg: int) -> tuple[float, float]:
    """Published class coefficients for the synthetic minimum-norm solution.

    Solves the reduced system quoted in the module docstring; see
    `exact_synthetic_alphas` for the variant consistent with the actual
    Gram matrix.  Both coefficients are strictly positive.
    """
    if n_pos < 1 or n_neg < 1:
        raise ValueError("n_pos and n_neg must be at least 1")
    denom = 9.0 * n_pos + 3.0 * n_neg + 8.0 * n_pos * n_neg + 3.0
    return (4.0 * n_neg + 3.0) / denom, (4.0 * n_pos + 1.0) / denom


def exact_synthetic_alphas(n_pos: int, n_neg: int) -> tuple[float, float]:
    """Class coefficients from the reduction of the actual synthetic Gram.

    With diagonal entries 4 (positive rows) and 8 (negative rows) the
    reduced system is ``(3*n_pos+1) a+ - n_neg a- = 1`` and
    ``-n_pos a+ + (3*n_neg+5) a- = 1``; this matches `min_norm_solution`
    on generated data to solver precision.
    """
    if n_pos < 1 or n_neg < 1:
        raise ValueError("n_pos and n_neg must be at least 1")
    denom = 15.0 * n_pos + 3.0 * n_neg + 8.0 * n_pos * n_neg + 5.0
    return (4.0 * n_neg + 5.0) / denom, (4.0 * n_pos + 1.0) / denom


def predicted_test_score(
    kind: str, n_pos: int, n_neg: int, y_test: float, tau: float = 0.25
) -> float:
    """Closed-form score of a fresh draw against the named solution.

    The sign solution scores ``tau * (y_test + 2)`` -- positive for both
    labels, so every fresh negative is misclassified.  The minimum-norm
    score uses `synthetic_alphas`; its sign agrees with the exact solution's
    score for every class-count pair, though the magnitude differs.
    """
    if kind == "sign":
        return float(tau * (y_test + 2.0))
    if kind == "min_norm":
        a_plus, a_minus = synthetic_alphas(n_pos, n_neg)
        sym = n_pos * a_plus + n_neg * a_minus
        skew = n_pos * a_plus - n_neg * a_minus
        return float(y_test * sym + 2.0 * skew)
    raise ValueError(f"unknown solution kind {kind!r}")


def analytic_test_error(kind: str, p: float, n_pos: int, n_neg: int) -> float:
    """Population error of the named solution under positive-class rate p.

    A class contributes its probability mass when the predicted score for
    its label has the wrong sign (zero counts as wrong).  The sign solution
    labels everything positive, so its error is ``1 - p``; the minimum-norm
    solution separates both classes whenever ``n_pos > n_neg / 3``.
    """
    if not 0.5 < p < 1.0:
        raise ValueError(f"p must lie in (1/2, 1), got {p}")
    if kind == "sign":
        return 1.0 - p
    err = 0.0
    if predicted_test_score(kind, n_pos, n_neg, +1.0) <= 0.0:
        err += p
    if predicted_test_score(kind, n_pos, n_neg, -1.0) >= 0.0:
        err += 1.0 - p
    return err


def verify_lemma_trajectory(
    iterates, ds: Dataset, precond_diags=None
) -> LemmaTrace:
    """Measure how far a trajectory strays from the constant-sign line.

    `iterates` must start at the zero vector (raises otherwise).  For each
    iterate the scale ``lambda_k`` is read off the first supported
    coordinate of ``u = X^T y`` (for synthetic data that is coordinate 1,
    whose correlation is n > 0); the deviation is measured on supported
    coordinates and the largest magnitude seen off support is reported
    separately, since a conforming run keeps those exactly zero.

    When per-iterate preconditioner diagonals are supplied, the implied
    scale ``nu_k = h_k / |u|`` at the reference coordinate is recorded.
    The residual factors ``mu_k`` are reconstructed from the lambdas when
    the proportionality scalar of `lemma_condition_check` exists.
    """
    iterates = list(iterates)
    if not iterates:
        raise ValueError("empty trajectory")
    first = np.asarray(iterates[0], dtype=np.float64)
    if np.any(first != 0.0):
        raise LemmaPreconditionError("trajectory must start at the zero vector")

    u = label_correlation(ds)
    support = u != 0.0
    if not support.any():
        raise LemmaPreconditionError("X^T y vanishes everywhere")
    signs = np.sign(u[support])
    j0 = int(np.argmax(support))
    s0 = np.sign(u[j0])

    lambdas = np.empty(len(iterates))
    max_dev = 0.0
    off_max = 0.0
    for t, w in enumerate(iterates):
        w = np.asarray(w, dtype=np.float64)
        lam = float(w[j0] * s0)
        lambdas[t] = lam
        max_dev = max(max_dev, float(np.max(np.abs(w[support] - lam * signs))))
        if not support.all():
            off_max = max(off_max, float(np.max(np.abs(w[~support]))))

    mus = None
    c = lemma_condition_check(ds)
    if c is not None and len(lambdas) > 1:
        # Residual factor of the scalar recursion, one per performed step
        # (gradient evaluated at the pre-step iterate; no extrapolation,
        # matching the adaptive columns where gamma = 0).
        mus = c * lambdas[:-1] - 1.0

    nus = None
    if precond_diags is not None:
        diags = [np.asarray(h, dtype=np.float64) for h in precond_diags]
        nus = np.array([float(h[j0] / abs(u[j0])) for h in diags])

    return LemmaTrace(
        lambdas=lambdas,
        max_deviation=max_dev,
        off_support_max=off_max,
        mus=mus,
        nus=nus,
    )


# ---------------------------------------------------------------------------
# serialization (same document style as datasets, plus a metadata block)
# ---------------------------------------------------------------------------


def solution_to_document(sol: OracleSolution) -> dict:
    return {
        "kind": sol.kind,
        "c": sol.c,
        "tau": sol.tau,
        "alpha_plus": sol.alpha_plus,
        "alpha_minus": sol.alpha_minus,
        "w": [float(v) for v in sol.w],
    }


def solution_from_document(doc: dict) -> OracleSolution:
    return OracleSolution(
        kind=str(doc["kind"]),
        w=np.asarray(doc["w"], dtype=np.float64),
        c=None if doc.get("c") is None else float(doc["c"]),
        tau=None if doc.get("tau") is None else float(doc["tau"]),
        alpha_plus=None if doc.get("alpha_plus") is None else float(doc["alpha_plus"]),
        alpha_minus=None if doc.get("alpha_minus") is None else float(doc["alpha_minus"]),
    )


def save_solution(sol: OracleSolution, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(solution_to_document(sol), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_solution(path) -> OracleSolution:
    with open(path, "r", encoding="utf-8") as fh:
        return solution_from_document(json.load(fh))
