"""Physics-informed objectives and the training regimes.

One generic single-task Adam loop drives fine-tuning (latent-only or
joint), the from-scratch baseline, both transfer-learning phases, and
the Reptile inner loop; pre-training over a task set has its own loop
because it interleaves one weight update with per-task latent updates.

Determinism contract: every regime derives its streams from the config
seed via SeedSequence spawning, task losses are summed left to right,
and batches are drawn in a fixed order (per task: interior then
boundary, preceded by one probe draw for the iteration-0 trace row).
Strict mode zeroes the elapsed-time column so traces and checkpoints
are byte-comparable across runs.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Union

import numpy as np

from madpde import __version__
from madpde.evaluation import relative_l2
from madpde.graph import NonFiniteGradientError, Tape, backward
from madpde.network import (
    LatentVector,
    NetworkConfig,
    NetworkWeights,
    WeightNodes,
    forward,
    forward_values,
    forward_with_jets,
    init_weights,
    register_weights,
)
from madpde.problems.base import ProblemInstance

MODES = ("mad-l", "mad-lm")
TRACE_COLUMNS = ("iteration", "loss", "relative_l2", "lr", "elapsed_ms")


class TrainingError(RuntimeError):
    pass


class NonFiniteResidualError(TrainingError):
    """A physics operator produced a non-finite value at a sample point."""

    def __init__(self, kind: str, point):
        self.kind = kind
        self.point = np.asarray(point)
        super().__init__(f"non-finite {kind} at sample point {self.point.tolist()}")


class TrainingDiverged(TrainingError):
    """Aborted run; carries the best-loss state seen before divergence."""

    def __init__(self, iteration: int, best_loss: float, weights, latent=None,
                 bank=None, trace=None):
        self.iteration = iteration
        self.best_loss = best_loss
        self.weights = weights
        self.latent = latent
        self.bank = bank
        self.trace = trace
        super().__init__(
            f"training diverged at iteration {iteration}; "
            f"best recorded loss {best_loss:.6g}")


@dataclass(frozen=True)
class TrainConfig:
    """Settings for one training stage.

    network is required for pretraining and the baselines; fine-tuning
    takes its decoder topology from the pretrained model instead.
    alpha_z (pre-training latent rate, default lr0) follows the same
    decay profile as the weight rate.
    """

    network: Optional[NetworkConfig] = None
    iterations: int = 1000
    m_r: int = 256
    m_bc: int = 64
    lam_bc: float = 1.0
    sigma: float = 100.0
    p: float = 2.0
    lr0: float = 1e-3
    milestones: tuple = (0.4, 0.6, 0.8)
    decay: float = 0.5
    mode: str = "mad-lm"
    seed: int = 0
    alpha_z: Optional[float] = None
    z_init_std: float = 1e-2
    eval_every: int = 1
    penalty_in_finetune: bool = True
    source_iterations: Optional[int] = None
    reptile_inner_steps: int = 8
    reptile_epsilon: float = 0.1
    strict: bool = False

    def __post_init__(self):
        if self.iterations < 0:
            raise ValueError("TrainConfig: iterations must be >= 0")
        if self.m_r < 1 or self.m_bc < 1:
            raise ValueError("TrainConfig: M_r and M_bc must be >= 1")
        if not self.lam_bc > 0:
            raise ValueError("TrainConfig: lam_bc must be positive")
        if not self.sigma > 0:
            raise ValueError("TrainConfig: sigma must be positive")
        if not self.p >= 1:
            raise ValueError("TrainConfig: p must be >= 1")
        if not self.lr0 > 0:
            raise ValueError("TrainConfig: lr0 must be positive")
        if list(self.milestones) != sorted(self.milestones) or any(
                not 0 < f < 1 for f in self.milestones):
            raise ValueError("TrainConfig: milestones must be ascending fractions in (0, 1)")
        if not 0 < self.decay <= 1:
            raise ValueError("TrainConfig: decay must be in (0, 1]")
        if self.mode not in MODES:
            raise ValueError(f"TrainConfig: mode must be one of {MODES}")
        if self.alpha_z is not None and self.alpha_z < 0:
            raise ValueError("TrainConfig: alpha_z must be >= 0")
        if self.z_init_std < 0:
            raise ValueError("TrainConfig: z_init_std must be >= 0")
        if self.eval_every < 1:
            raise ValueError("TrainConfig: eval_every must be >= 1")
        if self.source_iterations is not None and self.source_iterations < 0:
            raise ValueError("TrainConfig: source_iterations must be >= 0")
        if self.reptile_inner_steps < 1:
            raise ValueError("TrainConfig: reptile_inner_steps must be >= 1")
        if not 0 <= self.reptile_epsilon <= 1:
            raise ValueError("TrainConfig: reptile_epsilon must be in [0, 1]")

    @property
    def effective_alpha_z(self) -> float:
        return self.lr0 if self.alpha_z is None else self.alpha_z

    def to_dict(self) -> dict:
        out = {
            "iterations": self.iterations, "m_r": self.m_r, "m_bc": self.m_bc,
            "lam_bc": self.lam_bc, "sigma": self.sigma, "p": self.p,
            "lr0": self.lr0, "milestones": list(self.milestones),
            "decay": self.decay, "mode": self.mode, "seed": self.seed,
            "alpha_z": self.alpha_z, "z_init_std": self.z_init_std,
            "eval_every": self.eval_every,
            "penalty_in_finetune": self.penalty_in_finetune,
            "source_iterations": self.source_iterations,
            "reptile_inner_steps": self.reptile_inner_steps,
            "reptile_epsilon": self.reptile_epsilon, "strict": self.strict,
            "network": None if self.network is None else self.network.to_dict(),
        }
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        net = d.pop("network", None)
        if net is not None:
            net = NetworkConfig.from_dict(net)
        d["milestones"] = tuple(d.get("milestones", (0.4, 0.6, 0.8)))
        return cls(network=net, **d)


@dataclass
class RunTrace:
    """Per-iteration log; CSV round-trips exactly in strict mode."""

    columns: tuple = TRACE_COLUMNS
    rows: list = field(default_factory=list)

    def append(self, **values):
        self.rows.append(tuple(values.get(c) for c in self.columns))

    def column(self, name: str) -> np.ndarray:
        i = self.columns.index(name)
        if name == "phase":
            return np.array([r[i] for r in self.rows], dtype=object)
        return np.array([np.nan if r[i] is None else float(r[i])
                         for r in self.rows])

    def phase_rows(self, phase: str):
        """(iterations, relative_l2) restricted to one transfer phase."""
        i = self.columns.index("phase")
        rows = [r for r in self.rows if r[i] == phase]
        its = np.array([float(r[self.columns.index("iteration")]) for r in rows])
        errs = np.array([np.nan if r[self.columns.index("relative_l2")] is None
                         else float(r[self.columns.index("relative_l2")])
                         for r in rows])
        return its, errs

    def _format_cell(self, name: str, value) -> str:
        if value is None:
            return ""
        if name == "iteration":
            return str(int(value))
        if name == "phase":
            return str(value)
        return repr(float(value))

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            f.write(",".join(self.columns) + "\n")
            for row in self.rows:
                f.write(",".join(self._format_cell(c, v)
                                 for c, v in zip(self.columns, row)) + "\n")

    @classmethod
    def read_csv(cls, path) -> "RunTrace":
        with open(path, "r", newline="") as f:
            lines = [ln.rstrip("\n") for ln in f if ln.strip()]
        columns = tuple(lines[0].split(","))
        rows = []
        for ln in lines[1:]:
            cells = ln.split(",")
            row = []
            for name, cell in zip(columns, cells):
                if cell == "":
                    row.append(None)
                elif name == "iteration":
                    row.append(int(cell))
                elif name == "phase":
                    row.append(cell)
                else:
                    row.append(float(cell))
            rows.append(tuple(row))
        return cls(columns=columns, rows=rows)


@dataclass
class AdamState:
    """Per-parameter moments; beta and eps fixed at the usual values."""

    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[np.ndarray]) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params],
                   v=[np.zeros_like(p) for p in params])


def adam_step(state: AdamState, params: Sequence[np.ndarray],
              grads: Sequence[np.ndarray], lr: float):
    """One bias-corrected update; params are replaced, state mutates."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise TrainingError("adam_step: parameter/gradient count mismatch")
    for p, g in zip(params, grads):
        if np.shape(p) != np.shape(g):
            raise TrainingError("adam_step: shape mismatch")
        if not np.all(np.isfinite(g)):
            raise TrainingError("adam_step: non-finite gradient rejected")
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[i] / c1
        v_hat = state.v[i] / c2
        out.append(p - lr * m_hat / (np.sqrt(v_hat) + state.eps))
    return out, state


def lr_at(step: int, total: int, lr0: float, milestones=(0.4, 0.6, 0.8),
          factor: float = 0.5) -> float:
    """Piecewise-constant rate: decays after each milestone fraction."""
    if step < 0 or step > max(total, 0):
        raise ValueError("lr_at: need 0 <= step <= total")
    if total <= 0:
        return lr0
    passed = sum(1 for f in milestones if step >= f * total)
    return lr0 * factor ** passed


def _check_finite(values: np.ndarray, batch: np.ndarray, kind: str):
    finite = np.isfinite(values).ravel()
    if not np.all(finite):
        idx = int(np.argmin(finite))
        raise NonFiniteResidualError(kind, batch[idx])


def mc_physics_loss(tape: Tape, w, z, instance: ProblemInstance,
                    batch_interior, batch_boundary, lam_bc: float = 1.0,
                    p: float = 2.0) -> "Node":
    """Monte Carlo physics loss: mean |residual|^p plus weighted mean
    |boundary mismatch|^p, normalized by the actual batch sizes.

    w is either the registered decoder (WeightNodes, with z its latent)
    or an analytic jet closure (tape, points) -> Jet2 with z = None.
    """
    bi = np.asarray(batch_interior, dtype=np.float64)
    bb = np.asarray(batch_boundary, dtype=np.float64)
    if bi.size == 0 or bb.size == 0:
        raise ValueError("mc_physics_loss: batches must be nonempty")
    if isinstance(w, WeightNodes):
        jet = forward_with_jets(tape, w, bi, z, d1_mask=instance.d1_mask,
                                d2_mask=instance.d2_mask)
        u_bc = forward_values(tape, w, bb, z)
    elif callable(w):
        if z is not None:
            raise TrainingError("mc_physics_loss: analytic solutions take no latent")
        jet = w(tape, bi)
        u_bc = w(tape, bb).val
    else:
        raise TypeError("mc_physics_loss: w must be WeightNodes or a jet closure")

    res = instance.residual(jet, bi)
    _check_finite(res.value, bi, "residual")
    mis = instance.boundary(u_bc, bb)
    _check_finite(mis.value, bb, "boundary")

    n_res = res.value.shape[0] if res.value.ndim else 1
    n_mis = mis.value.shape[0] if mis.value.ndim else 1
    loss_r = tape.mul(tape.constant(1.0 / n_res), tape.sum(tape.abspow(res, p)))
    loss_b = tape.mul(tape.constant(lam_bc / n_mis), tape.sum(tape.abspow(mis, p)))
    return loss_r + loss_b


def regularized_loss(tape: Tape, w, z, instance: ProblemInstance,
                     batch_interior, batch_boundary, lam_bc: float = 1.0,
                     p: float = 2.0, sigma: Optional[float] = None) -> "Node":
    """Physics loss plus the soft latent penalty (1/sigma^2)||z||^2."""
    base = mc_physics_loss(tape, w, z, instance, batch_interior,
                           batch_boundary, lam_bc, p)
    if z is None or sigma is None:
        return base
    penalty = tape.mul(tape.constant(1.0 / sigma ** 2), tape.sum(tape.mul(z, z)))
    return base + penalty


# ---------------------------------------------------------------- models

@dataclass
class LatentBank:
    """Latent codes from pre-training, with task descriptors when the
    family is homogeneous (descriptors drive nearest-neighbor init)."""

    latents: np.ndarray
    descriptors: Optional[np.ndarray] = None

    def __post_init__(self):
        self.latents = np.asarray(self.latents, dtype=np.float64)
        if self.latents.ndim != 2:
            raise ValueError("LatentBank: latents must be (count, n)")
        if self.descriptors is not None:
            self.descriptors = np.asarray(self.descriptors, dtype=np.float64)
            if self.descriptors.ndim != 2 or \
                    self.descriptors.shape[0] != self.latents.shape[0]:
                raise ValueError("LatentBank: descriptor rows must match latents")

    @property
    def size(self) -> int:
        return self.latents.shape[0]


@dataclass
class PretrainedModel:
    weights: NetworkWeights
    bank: LatentBank
    family: str
    manifest: dict


# ------------------------------------------------------------- internals

def _theta_arrays(weights: NetworkWeights):
    out = []
    for w, b in zip(weights.matrices, weights.biases):
        out.append(w)
        out.append(b)
    return out


def _theta_nodes(wn: WeightNodes):
    out = []
    for w, b in wn.layers:
        out.append(w)
        out.append(b)
    return out


def _rebuild_weights(config: NetworkConfig, arrays) -> NetworkWeights:
    matrices = list(arrays[0::2])
    biases = list(arrays[1::2])
    return NetworkWeights(config, matrices, biases)


def _eval_relative_l2(weights: NetworkWeights, z, instance: ProblemInstance,
                      chunk: int = 16384) -> float:
    points, values = instance.eval_grid()
    preds = np.empty(values.shape[0])
    for s in range(0, values.shape[0], chunk):
        preds[s:s + chunk] = forward(weights, points[s:s + chunk], z).ravel()
    return relative_l2(preds, values)


def _draw_batches(rng: np.random.Generator, instance: ProblemInstance,
                  config: TrainConfig):
    bi = instance.interior_sampler(rng, config.m_r)
    bb = instance.boundary_sampler(rng, config.m_bc)
    return bi, bb


def _probe_loss(config: TrainConfig, instance: ProblemInstance,
                weights: NetworkWeights, z, rng, use_penalty: bool) -> float:
    bi, bb = _draw_batches(rng, instance, config)
    tape = Tape()
    wn = register_weights(tape, weights, trainable=False)
    z_node = tape.constant(z) if z is not None else None
    loss = regularized_loss(tape, wn, z_node, instance, bi, bb, config.lam_bc,
                            config.p, config.sigma if use_penalty else None)
    return float(loss.value)


def _train_task(config: TrainConfig, instance: ProblemInstance,
                weights: NetworkWeights, z0: Optional[np.ndarray], *,
                iterations: int, train_theta: bool, train_z: bool,
                use_penalty: bool, batch_rng: np.random.Generator,
                trace: Optional[RunTrace] = None, phase: Optional[str] = None,
                clock: Optional[float] = None, schedule: bool = True):
    """Generic Adam loop on one instance; returns (weights, z, last_loss).

    With train_theta False the decoder weights are registered as
    constants, so the backward pass never touches them. A trace, when
    given, receives an iteration-0 row (probe batch at the initial
    state) and then one row per update; relative L2 is evaluated on the
    instance grid every eval_every iterations and at the end.
    """
    z = None if z0 is None else np.asarray(z0, dtype=np.float64).copy()
    if clock is None:
        clock = time.perf_counter()

    theta_state = AdamState.for_params(_theta_arrays(weights)) if train_theta else None
    z_state = AdamState.for_params([z]) if train_z else None
    best_loss = np.inf
    best = (weights, z)

    def lr_for(step: int) -> float:
        if not schedule:
            return config.lr0
        return lr_at(step, iterations, config.lr0, config.milestones, config.decay)

    def log(i: int, loss_val: float):
        if trace is None:
            return
        do_eval = (i % config.eval_every == 0) or i == iterations
        rel = _eval_relative_l2(weights, z, instance) if do_eval else None
        elapsed = 0.0 if config.strict else (time.perf_counter() - clock) * 1e3
        trace.append(iteration=i, loss=loss_val, relative_l2=rel,
                     lr=lr_for(max(i - 1, 0)), elapsed_ms=elapsed, phase=phase)

    last_loss = None
    if trace is not None:
        last_loss = _probe_loss(config, instance, weights, z, batch_rng, use_penalty)
        if np.isfinite(last_loss) and last_loss < best_loss:
            best_loss, best = last_loss, (weights, z)
        log(0, last_loss)

    for i in range(1, iterations + 1):
        bi, bb = _draw_batches(batch_rng, instance, config)
        if not weights.all_finite() or (z is not None and not np.all(np.isfinite(z))):
            raise TrainingDiverged(i, best_loss, best[0], latent=best[1],
                                   trace=trace)
        tape = Tape()
        wn = register_weights(tape, weights, trainable=train_theta)
        if z is None:
            z_node = None
        elif train_z:
            z_node = tape.param(z)
        else:
            z_node = tape.constant(z)
        try:
            loss = regularized_loss(tape, wn, z_node, instance, bi, bb,
                                    config.lam_bc, config.p,
                                    config.sigma if use_penalty else None)
            loss_val = float(loss.value)
            if not np.isfinite(loss_val):
                raise TrainingDiverged(i, best_loss, best[0], latent=best[1],
                                       trace=trace)
            if loss_val < best_loss:
                best_loss, best = loss_val, (weights, z)
            grad_map = backward(loss)
        except (NonFiniteGradientError, NonFiniteResidualError):
            raise TrainingDiverged(i, best_loss, best[0], latent=best[1],
                                   trace=trace) from None
        lr = lr_for(i - 1)
        if train_theta:
            theta_grads = [grad_map.wrt(n) for n in _theta_nodes(wn)]
            new_theta, _ = adam_step(theta_state, _theta_arrays(weights),
                                     theta_grads, lr)
            weights = _rebuild_weights(weights.config, new_theta)
        if train_z:
            (z,), _ = adam_step(z_state, [z], [grad_map.wrt(z_node)], lr)
        last_loss = loss_val
        log(i, loss_val)

    return weights, z, last_loss


def _require_network(config: TrainConfig, latent_free: bool) -> NetworkConfig:
    net = config.network
    if net is None:
        raise TrainingError("TrainConfig.network is required for this regime")
    if latent_free and net.latent_dim != 0:
        raise TrainingError("this baseline trains a latent-free network "
                            f"(latent_dim 0, got {net.latent_dim})")
    if net.output_dim != 1:
        raise TrainingError("training expects scalar network output")
    return net


def _check_instance(net: NetworkConfig, instance: ProblemInstance):
    if net.spatial_dim != instance.spatial_dim:
        raise TrainingError(
            f"network spatial_dim {net.spatial_dim} does not match "
            f"instance '{instance.family}' ({instance.spatial_dim})")
    if net.periodic_embedding != instance.embedding:
        raise TrainingError(
            f"network embedding {net.periodic_embedding} does not match "
            f"instance '{instance.family}' ({instance.embedding})")


# --------------------------------------------------------------- regimes

def pretrain(config: TrainConfig, instances: Sequence[ProblemInstance],
             batch_rng: Optional[np.random.Generator] = None):
    """Joint optimization of decoder weights and one latent per task.

    Returns (PretrainedModel, RunTrace). The trace's relative_l2 column
    is the mean over tasks. Divergence aborts with the best-loss state
    attached to the raised TrainingDiverged.
    """
    if len(instances) < 1:
        raise TrainingError("pretrain: need at least one instance")
    net = _require_network(config, latent_free=False)
    for inst in instances:
        _check_instance(net, inst)
    family = instances[0].family
    n = net.latent_dim
    count = len(instances)

    init_ss, z_ss, batch_ss = np.random.SeedSequence(config.seed).spawn(3)
    weights = init_weights(net, np.random.default_rng(init_ss))
    z_bank = np.random.default_rng(z_ss).normal(0.0, config.z_init_std, (count, n))
    rng = batch_rng if batch_rng is not None else np.random.default_rng(batch_ss)

    with_desc = [inst.descriptor is not None for inst in instances]
    if all(with_desc):
        descriptors = np.stack([np.asarray(i.descriptor, dtype=np.float64)
                                for i in instances])
    elif not any(with_desc):
        descriptors = None
    else:
        raise TrainingError("pretrain: descriptors must be present for all "
                            "tasks or none")

    trace = RunTrace()
    clock = time.perf_counter()
    theta_state = AdamState.for_params(_theta_arrays(weights))
    z_state = AdamState.for_params([z_bank]) if n > 0 else None
    total_iters = config.iterations
    best_loss = np.inf
    best = (weights, z_bank)

    def mean_rel(w: NetworkWeights, bank: np.ndarray) -> float:
        vals = [
            _eval_relative_l2(w, bank[j] if n > 0 else None, instances[j])
            for j in range(count)
        ]
        return float(np.mean(vals))

    def log(i: int, loss_val: float):
        do_eval = (i % config.eval_every == 0) or i == total_iters
        rel = mean_rel(weights, z_bank) if do_eval else None
        elapsed = 0.0 if config.strict else (time.perf_counter() - clock) * 1e3
        lr_step = max(i - 1, 0)
        trace.append(iteration=i, loss=loss_val, relative_l2=rel,
                     lr=lr_at(lr_step, total_iters, config.lr0,
                              config.milestones, config.decay),
                     elapsed_ms=elapsed)

    # Iteration-0 probe: summed loss at the fresh initialization.
    probe = 0.0
    for j, inst in enumerate(instances):
        probe += _probe_loss(config, inst, weights,
                             z_bank[j] if n > 0 else None, rng, use_penalty=n > 0)
    if np.isfinite(probe):
        best_loss, best = probe, (weights, z_bank)
    log(0, probe)

    def diverged(i: int):
        bank = LatentBank(best[1], descriptors)
        return TrainingDiverged(i, best_loss, best[0], bank=bank, trace=trace)

    for i in range(1, total_iters + 1):
        batches = [_draw_batches(rng, inst, config) for inst in instances]
        if not weights.all_finite() or not np.all(np.isfinite(z_bank)):
            raise diverged(i)
        # One tape per task keeps peak memory independent of the task
        # count; summed-loss gradients are accumulated across tapes.
        loss_val = 0.0
        theta_grads = None
        z_grads = np.zeros_like(z_bank) if n > 0 else None
        try:
            for j, inst in enumerate(instances):
                bi, bb = batches[j]
                tape = Tape()
                wn = register_weights(tape, weights, trainable=True)
                z_node = tape.param(z_bank[j]) if n > 0 else None
                task_loss = regularized_loss(tape, wn, z_node, inst, bi, bb,
                                             config.lam_bc, config.p,
                                             config.sigma if n > 0 else None)
                task_val = float(task_loss.value)
                if not np.isfinite(task_val):
                    raise diverged(i)
                loss_val += task_val
                grad_map = backward(task_loss)
                task_theta = [grad_map.wrt(node) for node in _theta_nodes(wn)]
                if theta_grads is None:
                    theta_grads = task_theta
                else:
                    theta_grads = [a + g for a, g in zip(theta_grads, task_theta)]
                if n > 0:
                    z_grads[j] = grad_map.wrt(z_node)
        except (NonFiniteGradientError, NonFiniteResidualError):
            raise diverged(i) from None
        if loss_val < best_loss:
            best_loss, best = loss_val, (weights, z_bank)

        lr = lr_at(i - 1, total_iters, config.lr0, config.milestones, config.decay)
        new_theta, _ = adam_step(theta_state, _theta_arrays(weights), theta_grads, lr)
        weights = _rebuild_weights(net, new_theta)
        if n > 0:
            z_lr = config.effective_alpha_z * (lr / config.lr0)
            (z_bank,), _ = adam_step(z_state, [z_bank], [z_grads], z_lr)
        log(i, loss_val)

    manifest = {
        "code_version": __version__,
        "family": family,
        "train_config": config.to_dict(),
        "network": net.to_dict(),
        "task_count": count,
        "instances": [inst.meta for inst in instances],
    }
    model = PretrainedModel(weights=weights,
                            bank=LatentBank(z_bank, descriptors),
                            family=family, manifest=manifest)
    return model, trace


def latent_init(pretrained: PretrainedModel, eta_new=None) -> LatentVector:
    """Starting latent for a new task: nearest bank entry by descriptor
    distance (ties to the smallest index), or the bank mean when either
    side has no descriptor."""
    bank = pretrained.bank
    if bank.size < 1:
        raise TrainingError("latent_init: empty latent bank")
    desc = eta_new.descriptor if isinstance(eta_new, ProblemInstance) else eta_new
    if bank.descriptors is not None and desc is not None:
        d = np.asarray(desc, dtype=np.float64).ravel()
        if d.shape[0] != bank.descriptors.shape[1]:
            raise TrainingError("latent_init: descriptor length mismatch")
        idx = int(np.argmin(np.linalg.norm(bank.descriptors - d, axis=1)))
        return LatentVector(bank.latents[idx].copy(), owner=f"bank[{idx}]")
    return LatentVector(bank.latents.mean(axis=0), owner="bank-mean")


def finetune(config: TrainConfig, pretrained: PretrainedModel,
             instance_new: ProblemInstance,
             batch_rng: Optional[np.random.Generator] = None):
    """Adapt to an unseen task. mad-l optimizes the latent only (the
    decoder weights provably never change); mad-lm optimizes both from
    the pre-trained state. Returns (weights, LatentVector, RunTrace)."""
    net = pretrained.weights.config
    if net.latent_dim < 1:
        raise TrainingError("finetune: pretrained model has no latent input")
    _check_instance(net, instance_new)
    z0 = latent_init(pretrained, instance_new)
    rng = batch_rng if batch_rng is not None else \
        np.random.default_rng(np.random.SeedSequence(config.seed))
    trace = RunTrace()
    weights, z, _ = _train_task(
        config, instance_new, pretrained.weights, z0.components,
        iterations=config.iterations, train_theta=(config.mode == "mad-lm"),
        train_z=True, use_penalty=config.penalty_in_finetune, batch_rng=rng,
        trace=trace)
    return weights, LatentVector(z, owner=z0.owner), trace


def from_scratch(config: TrainConfig, instance: ProblemInstance,
                 batch_rng: Optional[np.random.Generator] = None,
                 initial_weights: Optional[NetworkWeights] = None):
    """Plain physics-informed training of a latent-free network.

    initial_weights warm-starts the loop (used by the Reptile
    evaluation path); the seed-derived init stream is spawned either
    way so batch draws do not depend on the warm start."""
    net = _require_network(config, latent_free=True)
    _check_instance(net, instance)
    init_ss, batch_ss = np.random.SeedSequence(config.seed).spawn(2)
    weights = initial_weights if initial_weights is not None else \
        init_weights(net, np.random.default_rng(init_ss))
    rng = batch_rng if batch_rng is not None else np.random.default_rng(batch_ss)
    trace = RunTrace()
    weights, _, _ = _train_task(
        config, instance, weights, None, iterations=config.iterations,
        train_theta=True, train_z=False, use_penalty=False, batch_rng=rng,
        trace=trace)
    return weights, trace


def transfer_learning(config: TrainConfig, source_instance: ProblemInstance,
                      target_instance: ProblemInstance,
                      batch_rng: Optional[np.random.Generator] = None):
    """From-scratch on the source task, then full fine-tuning on the
    target from that initialization with a fresh optimizer. The trace
    carries a phase column; iteration numbering restarts per phase.
    Returns (weights, RunTrace)."""
    net = _require_network(config, latent_free=True)
    _check_instance(net, source_instance)
    _check_instance(net, target_instance)
    init_ss, src_ss, tgt_ss = np.random.SeedSequence(config.seed).spawn(3)
    weights = init_weights(net, np.random.default_rng(init_ss))
    trace = RunTrace(columns=TRACE_COLUMNS + ("phase",))
    clock = time.perf_counter()
    source_iters = config.iterations if config.source_iterations is None \
        else config.source_iterations

    src_rng = batch_rng if batch_rng is not None else np.random.default_rng(src_ss)
    weights, _, _ = _train_task(
        config, source_instance, weights, None, iterations=source_iters,
        train_theta=True, train_z=False, use_penalty=False, batch_rng=src_rng,
        trace=trace, phase="source", clock=clock)

    tgt_rng = batch_rng if batch_rng is not None else np.random.default_rng(tgt_ss)
    weights, _, _ = _train_task(
        config, target_instance, weights, None, iterations=config.iterations,
        train_theta=True, train_z=False, use_penalty=False, batch_rng=tgt_rng,
        trace=trace, phase="target", clock=clock)
    return weights, trace


def reptile_pretrain(config: TrainConfig, instances: Sequence[ProblemInstance],
                     batch_rng: Optional[np.random.Generator] = None):
    """First-order meta-learning baseline on a latent-free network.

    Each meta-iteration runs reptile_inner_steps Adam steps from the
    current meta-weights on one sampled task (fresh optimizer, constant
    lr0), then moves the meta-weights by epsilon toward the result.
    Returns (weights, RunTrace); the trace logs the final inner loss of
    each meta-iteration and leaves relative_l2 empty."""
    if len(instances) < 1:
        raise TrainingError("reptile_pretrain: need at least one instance")
    net = _require_network(config, latent_free=True)
    for inst in instances:
        _check_instance(net, inst)
    init_ss, pick_ss, batch_ss = np.random.SeedSequence(config.seed).spawn(3)
    weights = init_weights(net, np.random.default_rng(init_ss))
    pick_rng = np.random.default_rng(pick_ss)
    rng = batch_rng if batch_rng is not None else np.random.default_rng(batch_ss)
    eps = config.reptile_epsilon
    trace = RunTrace()
    clock = time.perf_counter()

    for m in range(1, config.iterations + 1):
        j = int(pick_rng.integers(len(instances)))
        task_weights, _, inner_loss = _train_task(
            config, instances[j], weights, None,
            iterations=config.reptile_inner_steps, train_theta=True,
            train_z=False, use_penalty=False, batch_rng=rng, trace=None,
            schedule=False)
        if eps == 1.0:
            weights = task_weights
        else:
            blended = [w + eps * (tw - w) for w, tw in
                       zip(_theta_arrays(weights), _theta_arrays(task_weights))]
            weights = _rebuild_weights(net, blended)
        elapsed = 0.0 if config.strict else (time.perf_counter() - clock) * 1e3
        trace.append(iteration=m, loss=inner_loss, relative_l2=None,
                     lr=config.lr0, elapsed_ms=elapsed)
    return weights, trace
