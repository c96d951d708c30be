"""Step-size decay schedules shared by the run loop and the tuner."""

from __future__ import annotations

from dataclasses import dataclass

__all__ = ["DecayPolicy", "next_alpha"]

DECAY_KINDS = ("none", "dev_decay", "fixed_decay")


@dataclass(frozen=True)
class DecayPolicy:
    """How the step size shrinks over epochs.

    ``dev_decay`` multiplies by `delta` on every epoch without a new best
    development metric and carries no other knob; ``fixed_decay`` multiplies
    by `delta` every `period` epochs; ``none`` leaves the rate alone.
    """

    kind: str = "none"
    delta: float = 0.9
    period: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in DECAY_KINDS:
            raise ValueError(f"unknown decay kind {self.kind!r}; expected one of {DECAY_KINDS}")
        if self.kind != "none" and not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if self.kind == "fixed_decay":
            if self.period is None or self.period < 1:
                raise ValueError("fixed_decay needs a positive period")
        elif self.period is not None:
            raise ValueError(f"{self.kind} does not take a period")


def next_alpha(
    policy: DecayPolicy,
    current_alpha: float,
    epoch: int,
    dev_metric: float | None = None,
    best_so_far: float | None = None,
    higher_is_better: bool = False,
) -> tuple[float, float | None]:
    """Step size for the next epoch, plus the updated best metric.

    For ``dev_decay`` an epoch that strictly improves on `best_so_far`
    keeps the rate (a missing best counts as an improvement); any other
    epoch multiplies it by delta.  For ``fixed_decay`` the rate shrinks
    exactly when `epoch` is a multiple of the period.
    """
    if epoch < 1:
        raise ValueError("epochs are counted from 1")
    best = best_so_far
    if dev_metric is not None:
        if best is None:
            improved = True
        elif higher_is_better:
            improved = dev_metric > best
        else:
            improved = dev_metric < best
        if improved:
            best = dev_metric
    else:
        improved = False

    if policy.kind == "none":
        return current_alpha, best
    if policy.kind == "dev_decay":
        if dev_metric is None:
            raise ValueError("dev_decay needs a dev metric each epoch")
        return (current_alpha if improved else current_alpha * policy.delta), best
    # fixed_decay
    if epoch % policy.period == 0:
        return current_alpha * policy.delta, best
    return current_alpha, best
