"""Viscous Burgers family with a pseudo-spectral reference solver.

u_t + u u_x = nu u_xx on the periodic unit interval, initial condition
drawn from a Gaussian random field.  The reference integrates in
Fourier space: the stiff diffusion term is absorbed exactly by an
integrating factor, the advection term is advanced with classical RK4
in conservative form under the 2/3 dealiasing rule.  The solver shares
no code with the decoder jets, so it can serve as an oracle.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from madpde.problems.base import ProblemInstance

NX = 1024
NT = 101
DESCRIPTOR_POINTS = 128


class BurgersBlowupError(RuntimeError):
    """Time integration produced non-finite modes."""

    def __init__(self, step: int, time: float):
        super().__init__(f"burgers_reference: non-finite state at step {step} (t={time:.6g})")
        self.step = step
        self.time = time


@dataclass
class BurgersField:
    """Reference field on the space-time mesh, with spectral readback."""

    x: np.ndarray
    t: np.ndarray
    u: np.ndarray
    nu: float
    _modes: dict = field(default_factory=dict, repr=False)

    def slice_modes(self, i: int) -> np.ndarray:
        if i not in self._modes:
            self._modes[i] = np.fft.rfft(self.u[i])
        return self._modes[i]

    def eval_slice(self, i: int, xq, order: int = 0) -> np.ndarray:
        """Trigonometric interpolant of slice i (or its x-derivative)."""
        return _trig_eval(self.slice_modes(i), np.asarray(xq, dtype=np.float64),
                          order, self.x.size)

    def __call__(self, points) -> np.ndarray:
        """Values at (x, t) points; t must lie on the stored slices."""
        points = np.asarray(points, dtype=np.float64)
        dt_slice = self.t[1] - self.t[0]
        idx = np.rint(points[:, 1] / dt_slice).astype(int)
        if np.any((idx < 0) | (idx >= self.t.size)) or \
                np.max(np.abs(points[:, 1] - self.t[np.clip(idx, 0, self.t.size - 1)])) > 1e-9:
            raise ValueError("BurgersField: t does not lie on a stored time slice")
        out = np.empty(points.shape[0])
        for i in np.unique(idx):
            rows = idx == i
            out[rows] = self.eval_slice(int(i), points[rows, 0])
        return out


def _trig_eval(modes: np.ndarray, xq: np.ndarray, order: int, nx: int) -> np.ndarray:
    k = 2j * np.pi * np.arange(modes.shape[0])
    weights = np.full(modes.shape[0], 2.0)
    weights[0] = 1.0
    if nx % 2 == 0:
        weights[-1] = 1.0
    c = modes if order == 0 else modes * k ** order
    phases = np.exp(2j * np.pi * np.multiply.outer(xq, np.arange(modes.shape[0])))
    return (phases @ (c * weights)).real / nx


def burgers_reference(u0, nu: float, nx: int = NX, nt: int = NT,
                      t_end: float = 1.0, steps_per_slice: int = 20) -> BurgersField:
    """Integrate the PDE and record nt uniform time slices on [0, t_end].

    steps_per_slice controls the RK4 step (dt = t_end/((nt-1)*steps_per_slice));
    the default keeps advection comfortably inside the RK4 stability region
    for fields of unit amplitude.  Content above the dealiasing cutoff is
    removed from the initial condition.
    """
    if nx < 4 or (nx & (nx - 1)) != 0:
        raise ValueError("burgers_reference: nx must be a power of two")
    if not (np.isfinite(nu) and nu > 0):
        raise ValueError("burgers_reference: nu must be positive")
    if nt < 2 or steps_per_slice < 1:
        raise ValueError("burgers_reference: need nt >= 2 and steps_per_slice >= 1")

    x = np.arange(nx) / nx
    u_init = np.asarray(u0(x), dtype=np.float64)
    if u_init.shape != (nx,) or not np.all(np.isfinite(u_init)):
        raise ValueError("burgers_reference: u0 must give finite values on the grid")

    k = 2.0 * np.pi * np.arange(nx // 2 + 1)
    keep = np.arange(nx // 2 + 1) <= nx // 3
    dt = t_end / ((nt - 1) * steps_per_slice)
    half = np.exp(-nu * k ** 2 * dt / 2.0)
    full = half * half

    def nonlin(v):
        w = np.fft.irfft(v, nx)
        return np.where(keep, -0.5j * k * np.fft.rfft(w * w), 0.0)

    v = np.where(keep, np.fft.rfft(u_init), 0.0)
    slices = np.empty((nt, nx))
    slices[0] = np.fft.irfft(v, nx)
    step = 0
    # Overflow en route to blowup is detected and raised; keep numpy quiet.
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(1, nt):
            for _ in range(steps_per_slice):
                k1 = nonlin(v)
                k2 = nonlin(half * (v + (dt / 2.0) * k1))
                k3 = nonlin(half * v + (dt / 2.0) * k2)
                k4 = nonlin(full * v + dt * half * k3)
                v = full * v + (dt / 6.0) * (full * k1 + 2.0 * half * (k2 + k3) + k4)
                step += 1
                if not np.all(np.isfinite(v)):
                    raise BurgersBlowupError(step, step * dt)
            slices[i] = np.fft.irfft(v, nx)

    t = np.linspace(0.0, t_end, nt)
    return BurgersField(x=x, t=t, u=slices, nu=float(nu))


def burgers_instance(u0, nu: float, heterogeneous: bool = False) -> ProblemInstance:
    """Task for one initial condition; the reference solve is lazy.

    The initial condition enters the loss as the t=0 boundary term;
    periodicity in x is left to the network embedding.
    """
    if not (np.isfinite(nu) and nu > 0):
        raise ValueError("burgers_instance: nu must be positive")
    nu = float(nu)

    desc = np.asarray(u0(np.arange(DESCRIPTOR_POINTS) / DESCRIPTOR_POINTS),
                      dtype=np.float64)
    if heterogeneous:
        desc = np.append(desc, nu)

    def residual(jet, x: np.ndarray):
        tape = jet.val.tape
        advection = tape.mul(jet.val, jet.d1[0])
        viscous = tape.mul(tape.constant(-nu), jet.d2[0])
        return jet.d1[1] + advection + viscous

    def boundary(u, x: np.ndarray):
        target = np.asarray(u0(x[:, 0]), dtype=np.float64)[:, None]
        return u + (-u.tape.constant(target))

    def interior_sampler(rng: np.random.Generator, m: int) -> np.ndarray:
        xs = rng.uniform(0.0, 1.0, m)
        ts = 1.0 - rng.uniform(0.0, 1.0, m)  # t in (0, 1]
        return np.column_stack([xs, ts])

    def boundary_sampler(rng: np.random.Generator, m: int) -> np.ndarray:
        return np.column_stack([rng.uniform(0.0, 1.0, m), np.zeros(m)])

    cell: list = []

    def solved() -> BurgersField:
        if not cell:
            cell.append(burgers_reference(u0, nu))
        return cell[0]

    def reference(points: np.ndarray) -> np.ndarray:
        return solved()(points)

    def eval_grid_builder():
        f = solved()
        points = np.column_stack([np.tile(f.x, f.t.size), np.repeat(f.t, f.x.size)])
        return points, f.u.ravel()

    meta = {"family": "burgers", "nu": nu, "heterogeneous": bool(heterogeneous)}
    if hasattr(u0, "spec") and hasattr(u0, "coeffs"):
        meta["u0"] = {
            "spec": {
                "scale": u0.spec.scale,
                "shift": u0.spec.shift,
                "exponent": u0.spec.exponent,
                "max_mode": u0.spec.max_mode,
                "domain": u0.spec.domain,
            },
            "coeffs": np.asarray(u0.coeffs).tolist(),
        }

    return ProblemInstance(
        family="burgers",
        spatial_dim=2,
        residual=residual,
        boundary=boundary,
        interior_sampler=interior_sampler,
        boundary_sampler=boundary_sampler,
        reference=reference,
        d1_mask=(True, True),
        d2_mask=(True, False),
        descriptor=desc,
        embedding=(0, 1.0),
        meta=meta,
        eval_grid_builder=eval_grid_builder,
    )
