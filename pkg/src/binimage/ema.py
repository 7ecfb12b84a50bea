"""Teacher maintenance: an exponential moving average of the student.

The teacher mirrors the student's structure exactly and is never touched
by gradients; every tensor moves toward the student by (1 - tau) per
update. An optional linear tau warmup is available but off by default.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadConfig, StructuralMismatch
from .model import ModelParams


@dataclass
class EmaConfig:
    """Moving-average multiplier, optionally warmed up from tau_start."""

    tau: float = 0.999
    warmup_steps: int = 0
    tau_start: float = 0.9

    def __post_init__(self) -> None:
        if not 0.0 <= self.tau <= 1.0:
            raise BadConfig(f"tau must be in [0,1], got {self.tau}")
        if not 0.0 <= self.tau_start <= 1.0:
            raise BadConfig(f"tau_start must be in [0,1], got {self.tau_start}")
        if self.warmup_steps < 0:
            raise BadConfig(f"warmup_steps must be >= 0, got {self.warmup_steps}")

    def tau_at(self, step: int) -> float:
        """Effective tau for the given update index (0-based)."""
        if self.warmup_steps <= 0 or step >= self.warmup_steps:
            return self.tau
        frac = step / self.warmup_steps
        return self.tau_start + (self.tau - self.tau_start) * frac


@dataclass
class TeacherState:
    """Teacher parameters plus the number of updates applied so far."""

    params: ModelParams
    step: int = 0


def init_teacher(student: ModelParams) -> TeacherState:
    """Deep-copy the student into a fresh teacher at update step 0."""
    return TeacherState(params=student.copy(role="teacher"), step=0)


def ema_update(teacher: TeacherState, student: ModelParams, config: EmaConfig) -> TeacherState:
    """Move every teacher tensor to tau*t + (1-tau)*s in place.

    The student is read-only here; the teacher's step counter advances by
    one. Structure (names and shapes) must match exactly.
    """
    if teacher.params.structure() != student.structure():
        raise StructuralMismatch("teacher/student tensor structure differs")
    tau = config.tau_at(teacher.step)
    dtype = teacher.params.dtype
    t_tau = dtype.type(tau)
    t_rest = dtype.type(1.0 - tau)
    for t, s in zip(teacher.params.tensors().values(), student.tensors().values()):
        if tau == 1.0:
            continue  # exact fixed point, avoid +0.0 rounding on the no-op
        if tau == 0.0:
            t[...] = s.astype(dtype, copy=False)
            continue
        t *= t_tau
        t += t_rest * s.astype(dtype, copy=False)
    teacher.step += 1
    return teacher
