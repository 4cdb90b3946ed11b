"""Weak-approximation step kernels and the whole-path simulator.

Four kernels: the Euler update on the Ito form, and three compositions of
frozen-field flows (single-flow third-order cubature, the flow-reversal
splitting, and the two-family splitting). Flow-based kernels accept batched
states and integrate every path's flow duration in one vectorised RK5 pass.
"""

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor
from .errors import InvalidParameterError, ShapeError, UnknownSchemeError
from .fields import ito_drift
from .qmc import CubatureDraws, DrawBlock
from .rk5 import flow


@dataclass(frozen=True)
class Partition:
    """Ordered time grid 0 = t_0 < ... < t_n = T."""

    times: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=np.float64)
        object.__setattr__(self, "times", t)
        if t.ndim != 1 or t.size < 1:
            raise InvalidParameterError("partition needs a 1-D times array")
        if t[0] != 0.0:
            raise InvalidParameterError("partition must start at t_0 = 0")
        d = np.diff(t)
        if np.any(d <= 0):
            raise InvalidParameterError("partition times must be strictly increasing")
        if abs(d.sum() - (t[-1] - t[0])) > 1e-12:
            raise InvalidParameterError("partition step sizes do not sum to T")

    @property
    def deltas(self):
        return np.diff(self.times)

    @property
    def steps(self):
        return self.times.size - 1

    @property
    def T(self):
        return float(self.times[-1])


def uniform_partition(T, steps):
    if steps < 0 or T < 0:
        raise InvalidParameterError("uniform partition needs T >= 0 and steps >= 0")
    return Partition(np.linspace(0.0, T, steps + 1))


@dataclass(frozen=True)
class PathBatch:
    """Simulated states shaped [batch, steps+1, N] on a partition."""

    states: np.ndarray
    partition: Partition
    scheme: str


def _rows(x):
    """View a state as (batch, N), remembering whether it was a single row."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return x[None, :], True
    return x, False


def _frozen_field(model, coeff0, weights):
    """Field z -> coeff0 * V_0(t,z) + sum_i weights[:, i] * V_i(t,z)."""
    v0 = model.stratonovich_fields[0]
    diffusions = model.stratonovich_fields[1:]

    def ev(t, z):
        out = coeff0 * v0.eval(t, z)
        for i, vi in enumerate(diffusions):
            out = out + weights[:, i : i + 1] * vi.eval(t, z)
        return out

    return ev


def em_step(model, x, dt, eta_row, t=0.0):
    """One Euler step x + dt * V~_0(x) + sqrt(dt) sum_i V_i(x) eta^i."""
    x2, single = _rows(x)
    eta2 = np.atleast_2d(np.asarray(eta_row, dtype=np.float64))
    drift = ito_drift(model)
    out = x2 + dt * drift.eval(t, x2)
    sdt = np.sqrt(dt)
    for i, vi in enumerate(model.stratonovich_fields[1:]):
        out = out + sdt * eta2[:, i : i + 1] * vi.eval(t, x2)
    return out[0] if single else out


def cub3_step(model, x, dt, eta_row, substeps=1, t=0.0):
    """Unit-time flow along the frozen field dt*V_0 + sqrt(dt) sum eta^i V_i."""
    x2, single = (x, False) if isinstance(x, Tensor) else _rows(x)
    eta2 = np.atleast_2d(np.asarray(eta_row, dtype=np.float64))
    f = _frozen_field(model, dt, np.sqrt(dt) * eta2)
    out = flow(f, t, x2, 1.0, substeps)
    return out[0] if single else out


def _nv_compose(model, x, dt, eta2, descending, substeps, t):
    v0 = model.stratonovich_fields[0]
    diffusions = model.stratonovich_fields[1:]
    sdt = np.sqrt(dt)
    x = flow(v0, t, x, dt / 2.0, substeps)
    order = range(len(diffusions) - 1, -1, -1) if descending else range(len(diffusions))
    for i in order:
        x = flow(diffusions[i], t, x, sdt * eta2[:, i : i + 1], substeps)
    return flow(v0, t, x, dt / 2.0, substeps)


def nv_step(model, x, dt, eta_row, lam, substeps=1, t=0.0):
    """Flow-reversal splitting step.

    lam = +1 runs the half drift flow, then the diffusion flows from V_d
    down to V_1, then the half drift flow; lam = -1 reverses the diffusion
    order. lam may be a per-path array for batched states.
    """
    tensor_state = isinstance(x, Tensor)
    x2, single = (x, False) if tensor_state else _rows(x)
    eta2 = np.atleast_2d(np.asarray(eta_row, dtype=np.float64))
    if np.ndim(lam) == 0:
        if lam not in (-1, 1):
            raise InvalidParameterError("lam must be +1 or -1")
        out = _nv_compose(model, x2, dt, eta2, lam > 0, substeps, t)
        return out[0] if single else out
    if tensor_state:
        raise InvalidParameterError("per-path lam with a taped state is not supported here")
    lam = np.asarray(lam)
    if model.d == 1:
        # single diffusion field: both orders coincide
        out = _nv_compose(model, x2, dt, eta2, True, substeps, t)
        return out[0] if single else out
    out = np.empty_like(x2)
    for value, descending in ((1.0, True), (-1.0, False)):
        mask = lam == value
        if np.any(mask):
            out[mask] = _nv_compose(model, x2[mask], dt, eta2[mask], descending, substeps, t)
    return out[0] if single else out


def nn_constants(u, sign=1):
    """Constants (c1, c2, R11, R22, R12) of the two-family splitting."""
    if u < 0.5:
        raise InvalidParameterError("the two-family scheme requires u >= 1/2")
    if sign not in (1, -1):
        raise InvalidParameterError("sign must be +1 (upper branch) or -1 (lower)")
    root = np.sqrt((2.0 * u - 1.0) / 2.0)
    c1 = -sign * root
    c2 = 1.0 - c1
    r11 = u
    r22 = 1.0 + u + sign * np.sqrt(2.0 * (2.0 * u - 1.0))
    r12 = -u - sign * root
    if r22 - r12 * r12 / r11 < 0:
        raise InvalidParameterError("residual variance negative; invalid (u, sign)")
    return c1, c2, r11, r22, r12


def nn_step(model, x, dt, eta_row, xi_row, u=0.5, sign=1, substeps=1, t=0.0):
    """Two-family splitting step of Gaussian pairs (eta, zeta).

    zeta = (R12/sqrt(R11)) eta + sqrt(R22 - R12^2/R11) xi; the step flows
    unit time along c2*dt*V_0 + sqrt(dt) sum zeta^i V_i, then along
    c1*dt*V_0 + sqrt(R11*dt) sum eta^i V_i.
    """
    c1, c2, r11, r22, r12 = nn_constants(u, sign)
    tensor_state = isinstance(x, Tensor)
    x2, single = (x, False) if tensor_state else _rows(x)
    eta2 = np.atleast_2d(np.asarray(eta_row, dtype=np.float64))
    xi2 = np.atleast_2d(np.asarray(xi_row, dtype=np.float64))
    zeta = (r12 / np.sqrt(r11)) * eta2 + np.sqrt(r22 - r12 * r12 / r11) * xi2
    sdt = np.sqrt(dt)
    f_second = _frozen_field(model, c2 * dt, sdt * zeta)
    f_first = _frozen_field(model, c1 * dt, np.sqrt(r11) * sdt * eta2)
    out = flow(f_second, t, x2, 1.0, substeps)
    out = flow(f_first, t, out, 1.0, substeps)
    return out[0] if single else out


def _unpack_draws(draws):
    if isinstance(draws, DrawBlock):
        return draws.eta, draws.xi, draws.lam
    if isinstance(draws, CubatureDraws):
        return draws.eta_tilde, draws.xi_tilde, draws.lam
    raise ShapeError("draws must be a DrawBlock or CubatureDraws")


def simulate(model, scheme, partition, draws, batch=None, substeps=1, u=0.5, sign=1):
    """Run the chosen kernel across the partition for every path.

    Shapes are validated before any computation: eta must be
    (batch, steps, model.d), the flow-reversal scheme needs lam of shape
    (batch, steps), and the two-family scheme needs xi congruent to eta.
    """
    scheme = scheme.lower()
    if scheme not in ("em", "cub3", "nv", "nn"):
        raise UnknownSchemeError(f"unknown scheme tag: {scheme!r}")
    eta, xi, lam = _unpack_draws(draws)
    steps = partition.steps
    if eta.ndim != 3 or eta.shape[1] != steps or eta.shape[2] != model.d:
        raise ShapeError(f"eta shaped {eta.shape}, expected (batch, {steps}, {model.d})")
    nb = eta.shape[0]
    if batch is not None and batch != nb:
        raise ShapeError(f"draws carry batch {nb}, expected {batch}")
    if scheme == "nv":
        if lam is None or lam.shape != (nb, steps):
            raise ShapeError("flow-reversal scheme needs lam shaped (batch, steps)")
    if scheme == "nn":
        if xi is None or xi.shape != eta.shape:
            raise ShapeError("two-family scheme needs xi congruent to eta")

    times = partition.times
    deltas = partition.deltas
    states = np.empty((nb, steps + 1, model.N))
    states[:, 0, :] = model.x0
    drift = ito_drift(model) if scheme == "em" else None
    diffusions = model.stratonovich_fields[1:]
    for k in range(steps):
        x = states[:, k, :]
        tk = float(times[k])
        dt = float(deltas[k])
        if scheme == "em":
            out = x + dt * drift.eval(tk, x)
            sdt = np.sqrt(dt)
            for i, vi in enumerate(diffusions):
                out = out + sdt * eta[:, k, i : i + 1] * vi.eval(tk, x)
        elif scheme == "cub3":
            out = cub3_step(model, x, dt, eta[:, k], substeps=substeps, t=tk)
        elif scheme == "nv":
            out = nv_step(model, x, dt, eta[:, k], lam[:, k], substeps=substeps, t=tk)
        else:
            out = nn_step(model, x, dt, eta[:, k], xi[:, k], u=u, sign=sign, substeps=substeps, t=tk)
        states[:, k + 1, :] = out
    return PathBatch(states=states, partition=partition, scheme=scheme)
