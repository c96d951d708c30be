"""One update engine behind six first-order methods.

Every method is an instance of

    w_{k+1} = w_k - a_k H_k^{-1} g_k + b_k H_k^{-1} H_{k-1} (w_k - w_{k-1}),

where ``g_k`` is the gradient at the extrapolated point
``w_k + c_k (w_k - w_{k-1})`` and ``H_k`` is a diagonal preconditioner built
from a running combination ``G_k`` of squared gradients,
``H_k = sqrt(G_k) + epsilon`` elementwise.  Non-adaptive methods use the
identity preconditioner.  `table1_coefficients` supplies the per-method,
per-step scalars (a_k, b_k, c_k) and the G-recurrence weights.

Conventions that the rest of the lab relies on:

* ``H_0`` (needed by the very first momentum term) is the identity; the
  difference ``w_0 - w_{-1}`` is zero there anyway.
* epsilon is added after the square root, so with ``epsilon=0`` the
  preconditioner is exactly proportional to accumulated |gradient| patterns.
* A coordinate whose preconditioner entry is zero can only arise when that
  coordinate has never seen a nonzero gradient; such coordinates simply do
  not move.  A zero entry that would have to divide a nonzero quantity
  raises `SingularPreconditionerError` instead of producing NaN.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .errors import DivergedError, SingularPreconditionerError, UnsupportedPresetError

__all__ = [
    "MethodKind",
    "ADAPTIVE_METHODS",
    "OptimizerSpec",
    "OptimizerState",
    "StepCoefficients",
    "init_state",
    "table1_coefficients",
    "step",
    "preconditioner_diag",
    "framework_preset",
    "reference_adam_run",
    "adam_recurrence_deviation",
]

GradientFn = Callable[[np.ndarray], np.ndarray]


class MethodKind(enum.Enum):
    SGD = "sgd"
    HB = "hb"
    NAG = "nag"
    ADAGRAD = "adagrad"
    RMSPROP = "rmsprop"
    ADAM = "adam"

    @property
    def adaptive(self) -> bool:
        return self in ADAPTIVE_METHODS

    @classmethod
    def parse(cls, name: str) -> "MethodKind":
        try:
            return cls(name.strip().lower())
        except ValueError:
            raise ValueError(
                f"unknown method {name!r}; expected one of "
                f"{', '.join(m.value for m in cls)}"
            ) from None


ADAPTIVE_METHODS = frozenset({MethodKind.ADAGRAD, MethodKind.RMSPROP, MethodKind.ADAM})


@dataclass(frozen=True)
class OptimizerSpec:
    """Method identity plus hyperparameters.

    `beta` is the heavy-ball/Nesterov momentum, `beta1`/`beta2` the moment
    decays of the adaptive family, `epsilon` the post-square-root smoothing,
    and `g_init` the initial mean of the squared-gradient accumulator.
    Fields irrelevant to a method are simply ignored by the engine.
    """

    method: MethodKind
    alpha: float
    beta: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    g_init: float = 0.0

    def __post_init__(self) -> None:
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.epsilon < 0:
            raise ValueError("epsilon must be nonnegative")
        if self.g_init < 0:
            raise ValueError("g_init must be nonnegative")
        for name in ("beta", "beta1", "beta2"):
            v = getattr(self, name)
            if not 0.0 <= v < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {v}")


@dataclass(frozen=True)
class OptimizerState:
    """Iterate pair and squared-gradient accumulator after `k` steps.

    `g_accum` holds the *raw* weighted sum of squared gradients.  For
    AdaGrad and RMSProp that is already the preconditioner square; Adam's
    preconditioner square additionally divides by ``1 - beta2^k``
    (equivalently, the published combination weights
    ``beta2/(1-beta2^k)`` and ``(1-beta2)/(1-beta2^k)`` applied to the raw
    sum).  Keeping the raw sum is what makes the corrected combination
    finite at every k; compounding the correction into the stored
    accumulator itself grows like ``prod_j beta2/(1-beta2^j)`` and
    overflows float64 within a few hundred steps at beta2 = 0.999.

    Arrays are treated as read-only by the engine; `step` returns a fresh
    state and never mutates its input.
    """

    k: int
    w: np.ndarray
    w_prev: np.ndarray
    g_accum: np.ndarray


@dataclass(frozen=True)
class StepCoefficients:
    alpha_k: float
    beta_k: float
    gamma_k: float
    g_keep: float  # weight on the previous accumulator
    g_new: float   # weight on the current squared gradient


def init_state(spec: OptimizerSpec, w0: np.ndarray) -> OptimizerState:
    """Fresh state at iteration 0 with no momentum history."""
    w0 = np.asarray(w0, dtype=np.float64).copy()
    return OptimizerState(
        k=0,
        w=w0,
        w_prev=w0.copy(),
        g_accum=np.full_like(w0, spec.g_init),
    )


def table1_coefficients(spec: OptimizerSpec, k: int) -> StepCoefficients:
    """Per-step scalars of the unified update for step index ``k >= 1``.

    Only Adam has k-dependent coefficients: its step size and momentum carry
    the usual zero-initialization corrections, and both accumulator weights
    are divided by ``1 - beta2^k``.
    """
    if k < 1:
        raise ValueError("step index k starts at 1")
    a, m = spec.alpha, spec.method
    if m is MethodKind.SGD:
        return StepCoefficients(a, 0.0, 0.0, 1.0, 0.0)
    if m is MethodKind.HB:
        return StepCoefficients(a, spec.beta, 0.0, 1.0, 0.0)
    if m is MethodKind.NAG:
        return StepCoefficients(a, spec.beta, spec.beta, 1.0, 0.0)
    if m is MethodKind.ADAGRAD:
        return StepCoefficients(a, 0.0, 0.0, 1.0, 1.0)
    if m is MethodKind.RMSPROP:
        return StepCoefficients(a, 0.0, 0.0, spec.beta2, 1.0 - spec.beta2)
    if m is MethodKind.ADAM:
        b1, b2 = spec.beta1, spec.beta2
        corr1 = 1.0 - b1**k
        corr2 = 1.0 - b2**k
        return StepCoefficients(
            alpha_k=a * (1.0 - b1) / corr1,
            beta_k=b1 * (1.0 - b1 ** (k - 1)) / corr1,
            gamma_k=0.0,
            g_keep=b2 / corr2,
            g_new=(1.0 - b2) / corr2,
        )
    raise AssertionError(f"unhandled method {m}")


def _raw_accum_weights(spec: OptimizerSpec) -> tuple[float, float]:
    """(keep, new) weights for the raw squared-gradient sum."""
    if spec.method is MethodKind.ADAGRAD:
        return 1.0, 1.0
    if spec.method in (MethodKind.RMSPROP, MethodKind.ADAM):
        return spec.beta2, 1.0 - spec.beta2
    return 1.0, 0.0


def _precond_scale(spec: OptimizerSpec, k: int) -> float:
    """Factor turning the raw accumulator into the preconditioner square."""
    if spec.method is MethodKind.ADAM and k >= 1:
        return 1.0 / (1.0 - spec.beta2**k)
    return 1.0


def _precond_diag(spec: OptimizerSpec, g_accum: np.ndarray, k: int) -> np.ndarray:
    return np.sqrt(_precond_scale(spec, k) * g_accum) + spec.epsilon


def step(
    state: OptimizerState,
    spec: OptimizerSpec,
    grad_at: GradientFn,
    alpha_override: float | None = None,
) -> OptimizerState:
    """Advance one iteration; returns the new state.

    `alpha_override`, when given, replaces the base step size for this step
    only (decay schedules feed the current rate through here).
    """
    eff = spec if alpha_override is None else replace(spec, alpha=float(alpha_override))
    k = state.k + 1
    c = table1_coefficients(eff, k)
    w, w_prev = state.w, state.w_prev

    if c.gamma_k != 0.0:
        eval_point = w + c.gamma_k * (w - w_prev)
    else:
        eval_point = w
    g = np.asarray(grad_at(eval_point), dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise DivergedError(f"non-finite gradient at step {k}")

    if not spec.method.adaptive:
        w_next = w - c.alpha_k * g
        if c.beta_k != 0.0:
            w_next = w_next + c.beta_k * (w - w_prev)
        g_accum = state.g_accum
    else:
        keep, new = _raw_accum_weights(eff)
        g_accum = keep * state.g_accum + new * (g * g)
        h_now = _precond_diag(spec, g_accum, k)
        if state.k == 0:
            h_prev = np.ones_like(w)
        else:
            h_prev = _precond_diag(spec, state.g_accum, state.k)
        dw = w - w_prev
        dead = h_now == 0.0
        if dead.any():
            needs_div = bool(np.any(g[dead] != 0.0)) or (
                c.beta_k != 0.0 and bool(np.any(dw[dead] != 0.0))
            )
            if needs_div:
                raise SingularPreconditionerError(
                    f"zero preconditioner entry with nonzero update at step {k} "
                    f"(epsilon={spec.epsilon})"
                )
            h_safe = np.where(dead, 1.0, h_now)
        else:
            h_safe = h_now
        w_next = w - c.alpha_k * (g / h_safe)
        if c.beta_k != 0.0:
            w_next = w_next + c.beta_k * ((h_prev / h_safe) * dw)

    if not np.all(np.isfinite(w_next)):
        raise DivergedError(f"non-finite iterate at step {k}")
    return OptimizerState(k=k, w=w_next, w_prev=w, g_accum=g_accum)


def preconditioner_diag(state: OptimizerState, spec: OptimizerSpec) -> np.ndarray:
    """Current diagonal of H; all ones for the non-adaptive methods."""
    if not spec.method.adaptive:
        return np.ones_like(state.w)
    return _precond_diag(spec, state.g_accum, state.k)


# ---------------------------------------------------------------------------
# framework presets
# ---------------------------------------------------------------------------

FRAMEWORKS = ("torch", "tensorflow", "dynet")

# Published framework defaults for the adaptive family.  "epsilon=0.0" for
# tensorflow AdaGrad encodes that the smoothing term is not used there.
_ADAPTIVE_DEFAULTS = {
    ("torch", MethodKind.ADAGRAD): dict(g_init=0.0, epsilon=1e-10),
    ("tensorflow", MethodKind.ADAGRAD): dict(g_init=0.1, epsilon=0.0),
    ("dynet", MethodKind.ADAGRAD): dict(g_init=0.0, epsilon=1e-20),
    ("torch", MethodKind.RMSPROP): dict(g_init=0.0, beta2=0.99, epsilon=1e-8),
    ("tensorflow", MethodKind.RMSPROP): dict(g_init=1.0, beta2=0.9, epsilon=1e-10),
    ("torch", MethodKind.ADAM): dict(beta1=0.9, beta2=0.999, epsilon=1e-8),
    ("tensorflow", MethodKind.ADAM): dict(beta1=0.9, beta2=0.999, epsilon=1e-8),
    ("dynet", MethodKind.ADAM): dict(beta1=0.9, beta2=0.999, epsilon=1e-8),
}


def framework_preset(framework: str, method: MethodKind, alpha: float = 0.001) -> OptimizerSpec:
    """Spec pre-filled with a framework's default hyperparameters.

    The base step size is not part of any framework's defaults table here;
    pass `alpha` explicitly for anything but smoke tests.  Momentum methods
    use the constant beta = 0.9 everywhere.  RMSProp is unavailable under
    dynet and raises `UnsupportedPresetError`.
    """
    if framework not in FRAMEWORKS:
        raise ValueError(f"unknown framework {framework!r}; expected one of {FRAMEWORKS}")
    if method in (MethodKind.SGD, MethodKind.HB, MethodKind.NAG):
        return OptimizerSpec(method=method, alpha=alpha, beta=0.9)
    key = (framework, method)
    if key not in _ADAPTIVE_DEFAULTS:
        raise UnsupportedPresetError(f"{method.value} has no {framework} preset")
    return OptimizerSpec(method=method, alpha=alpha, **_ADAPTIVE_DEFAULTS[key])


# ---------------------------------------------------------------------------
# diagnostic: table-form Adam vs the classic moment-estimate form
# ---------------------------------------------------------------------------


def reference_adam_run(
    spec: OptimizerSpec, w0: np.ndarray, grad_at: GradientFn, iters: int
) -> list[np.ndarray]:
    """Classic Adam (explicit first/second moment estimates), for comparison.

    Written in the textbook moment form rather than the unified
    gradient-plus-momentum-term form of `step`; `adam_recurrence_deviation`
    measures the gap between the two, which should be roundoff-level.
    """
    w = np.asarray(w0, dtype=np.float64).copy()
    m = np.zeros_like(w)
    v = np.full_like(w, spec.g_init)
    out = [w.copy()]
    for k in range(1, iters + 1):
        g = np.asarray(grad_at(w), dtype=np.float64)
        m = spec.beta1 * m + (1.0 - spec.beta1) * g
        v = spec.beta2 * v + (1.0 - spec.beta2) * (g * g)
        m_hat = m / (1.0 - spec.beta1**k)
        v_hat = v / (1.0 - spec.beta2**k)
        denom = np.sqrt(v_hat) + spec.epsilon
        dead = denom == 0.0
        if dead.any():
            denom = np.where(dead & (m_hat == 0.0), 1.0, denom)
        w = w - spec.alpha * m_hat / denom
        out.append(w.copy())
    return out


def adam_recurrence_deviation(
    spec: OptimizerSpec, w0: np.ndarray, grad_at: GradientFn, iters: int
) -> float:
    """Max relative L2 gap between the engine's Adam and `reference_adam_run`."""
    if spec.method is not MethodKind.ADAM:
        raise ValueError("diagnostic is specific to the adam method")
    ref = reference_adam_run(spec, w0, grad_at, iters)
    state = init_state(spec, w0)
    gap = 0.0
    for k in range(1, iters + 1):
        state = step(state, spec, grad_at)
        scale = max(float(np.linalg.norm(ref[k])), 1e-30)
        gap = max(gap, float(np.linalg.norm(state.w - ref[k])) / scale)
    return gap


def self_corrected_accumulator_log10_scale(beta2: float, iters: int) -> float:
    """log10 of the growth factor of the *self-referential* corrected
    recurrence ``G_k = beta2/(1-beta2^k) G_{k-1} + ...``.

    Compounding the correction into the stored accumulator multiplies it by
    ``beta2/(1-beta2^k)`` every step; this returns the log10 of that product,
    which crosses float64 range (~308) within a few hundred steps at
    beta2 = 0.999.  It documents why the engine stores the raw sum and
    applies the correction in the preconditioner instead.
    """
    if not 0.0 < beta2 < 1.0:
        raise ValueError("beta2 must lie in (0, 1)")
    return float(
        sum(math.log10(beta2) - math.log10(1.0 - beta2**k) for k in range(1, iters + 1))
    )
