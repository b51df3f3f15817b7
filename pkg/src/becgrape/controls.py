"""Piecewise-constant phase controls on a uniform time grid."""

from dataclasses import dataclass, field, replace

import numpy as np

CHANNELS_2D = ("phi12", "phi23", "phi31")


@dataclass(frozen=True)
class ControlGrid:
    """Phase controls, one row per channel and one column per time step.

    The value ``values[c, k]`` applies on ``[k*dt, (k+1)*dt)``. ``optimize``
    flags which channels the optimizer may update; frozen channels keep
    their values.
    """

    t_f: float
    values: np.ndarray
    optimize: tuple = field(default=None)

    def __post_init__(self):
        values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if values.ndim != 2:
            raise ValueError("control values must be 1D or 2D")
        if values.shape[0] not in (1, 3):
            raise ValueError(f"expected 1 or 3 channels, got {values.shape[0]}")
        if values.shape[1] < 1:
            raise ValueError("at least one time step is required")
        if not np.all(np.isfinite(values)):
            raise ValueError("control values must be finite")
        if not (np.isfinite(self.t_f) and self.t_f > 0):
            raise ValueError(f"t_f must be positive and finite, got {self.t_f}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        flags = self.optimize
        if flags is None:
            flags = (True,) * values.shape[0]
        flags = tuple(bool(f) for f in flags)
        if len(flags) != values.shape[0]:
            raise ValueError("one optimize flag per channel is required")
        object.__setattr__(self, "optimize", flags)

    @classmethod
    def constant(cls, t_f, n_steps, value=0.0, channels=1, optimize=None):
        values = np.broadcast_to(np.asarray(value, dtype=float).reshape(-1, 1), (channels, n_steps))
        return cls(t_f, np.array(values), optimize)

    @property
    def n_steps(self):
        return self.values.shape[1]

    @property
    def channels(self):
        return self.values.shape[0]

    @property
    def dt(self):
        return self.t_f / self.n_steps

    @property
    def times(self):
        """Step boundaries t_0 = 0, ..., t_n = t_f."""
        return np.linspace(0.0, self.t_f, self.n_steps + 1)

    @property
    def mask(self):
        """Boolean array (channels, 1) of optimizable channels."""
        return np.array(self.optimize, dtype=bool)[:, None]

    def with_values(self, values):
        return replace(self, values=np.asarray(values, dtype=float).reshape(self.values.shape))

    def reversed(self):
        """Same pulse played backwards in time."""
        return self.with_values(self.values[:, ::-1])

    def __eq__(self, other):
        if not isinstance(other, ControlGrid):
            return NotImplemented
        return (
            self.t_f == other.t_f
            and self.optimize == other.optimize
            and self.values.shape == other.values.shape
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None
