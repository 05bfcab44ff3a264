"""Objective and regime tests on tiny decoders.

Gradients of the full regularized objective are checked against central
differences; the pre-training loop is pinned to the single-task
baseline through a bit-exactness reduction (frozen zero latent, zero
latent rate); determinism claims compare byte images of the weights.
"""

import numpy as np
import pytest

import madpde.training as T
from madpde.graph import Jet2, Tape, backward, finite_diff_check
from madpde.network import (
    LatentVector,
    NetworkConfig,
    NetworkWeights,
    init_weights,
    register_weights,
)
from madpde.problems import laplace_instance, ode_eta_grid, ode_instance, ode_reference_jets
from madpde.problems.laplace import polygon_sample
from madpde.training import (
    AdamState,
    LatentBank,
    PretrainedModel,
    RunTrace,
    TrainConfig,
    TrainingDiverged,
    TrainingError,
    adam_step,
    lr_at,
)


def tiny_net(latent_dim=1, width=16, depth=3, omega0=1.0):
    return NetworkConfig(spatial_dim=1, latent_dim=latent_dim, depth=depth,
                         width=width, omega0=omega0)


# ------------------------------------------------------------- schedule

def test_lr_at_step_decay():
    assert lr_at(0, 100, 1e-3) == 1e-3
    assert lr_at(39, 100, 1e-3) == 1e-3
    assert lr_at(40, 100, 1e-3) == 5e-4
    assert lr_at(60, 100, 1e-3) == 2.5e-4
    assert lr_at(90, 100, 1e-3) == 1.25e-4
    vals = [lr_at(s, 100, 1e-3) for s in range(101)]
    assert np.all(np.diff(vals) <= 0)


def test_lr_at_degenerate_cases():
    assert lr_at(0, 0, 2e-3) == 2e-3
    assert lr_at(7, 10, 1e-3, milestones=()) == 1e-3
    assert lr_at(9, 10, 1e-3, factor=1.0) == 1e-3
    with pytest.raises(ValueError):
        lr_at(-1, 10, 1e-3)
    with pytest.raises(ValueError):
        lr_at(11, 10, 1e-3)


# ----------------------------------------------------------------- adam

def test_adam_zero_gradient_keeps_params():
    p = [np.array([1.0, -2.0]), np.array([[3.0]])]
    st = AdamState.for_params(p)
    out, st = adam_step(st, p, [np.zeros(2), np.zeros((1, 1))], lr=0.1)
    assert st.step == 1
    assert np.array_equal(out[0], p[0]) and np.array_equal(out[1], p[1])


def test_adam_first_step_is_signed_rate():
    # Bias correction makes the first update lr * g / (|g| + eps).
    st = AdamState.for_params([np.array([0.0])])
    out, _ = adam_step(st, [np.array([0.0])], [np.array([4.0])], lr=0.1)
    assert abs(out[0][0] + 0.1) < 1e-7


def test_adam_rejects_bad_inputs():
    st = AdamState.for_params([np.zeros(2)])
    with pytest.raises(TrainingError):
        adam_step(st, [np.zeros(2)], [np.zeros(3)], lr=0.1)
    with pytest.raises(TrainingError):
        adam_step(st, [np.zeros(2)], [np.zeros(2), np.zeros(2)], lr=0.1)
    with pytest.raises(TrainingError):
        adam_step(st, [np.zeros(2)], [np.array([np.nan, 0.0])], lr=0.1)


def test_adam_deterministic_bytes():
    rng = np.random.default_rng(3)
    grads = [rng.normal(size=(5,)) for _ in range(10)]

    def run():
        p = [np.zeros(5)]
        st = AdamState.for_params(p)
        for g in grads:
            p, st = adam_step(st, p, [g], lr=0.05)
        return p[0].tobytes()

    assert run() == run()


# ---------------------------------------------------- physics objective

def test_physics_loss_vanishes_on_reference():
    inst = ode_instance(0.7)
    rng = np.random.default_rng(1)
    bi = inst.interior_sampler(rng, 200)
    bb = inst.boundary_sampler(rng, 2)
    tape = Tape()
    loss = T.mc_physics_loss(tape, ode_reference_jets(0.7), None, inst, bi, bb)
    assert float(loss.value) < 1e-10


def test_physics_loss_zero_candidate_closed_form():
    # u = 0 leaves the mean squared forcing plus the boundary term.
    eta = 0.0
    inst = ode_instance(eta)
    rng = np.random.default_rng(2)
    bi = inst.interior_sampler(rng, 64)
    bb = inst.boundary_sampler(rng, 2)

    def zero_jet(tape, x):
        zeros = np.zeros((x.shape[0], 1))
        return Jet2(val=tape.constant(zeros), d1=(tape.constant(zeros),), d2=(None,))

    tape = Tape()
    loss = float(T.mc_physics_loss(tape, zero_jet, None, inst, bi, bb).value)
    forcing = 2.0 * (bi[:, 0] - eta) * np.cos((bi[:, 0] - eta) ** 2)
    want = np.mean(forcing ** 2) + np.mean(np.sin((bb[:, 0] - eta) ** 2) ** 2)
    assert abs(loss - want) < 1e-12 * max(1.0, want)


def test_physics_loss_p_changes_value():
    inst = ode_instance(0.3)
    rng = np.random.default_rng(4)
    bi = inst.interior_sampler(rng, 32)
    bb = inst.boundary_sampler(rng, 2)

    def zero_jet(tape, x):
        zeros = np.zeros((x.shape[0], 1))
        return Jet2(val=tape.constant(zeros), d1=(tape.constant(zeros),), d2=(None,))

    l2 = float(T.mc_physics_loss(Tape(), zero_jet, None, inst, bi, bb, p=2.0).value)
    l1 = float(T.mc_physics_loss(Tape(), zero_jet, None, inst, bi, bb, p=1.0).value)
    assert l1 != l2


def test_physics_loss_rejects_empty_batch_and_closure_latent():
    inst = ode_instance(0.3)
    bb = inst.boundary_sampler(np.random.default_rng(0), 2)
    with pytest.raises(ValueError):
        T.mc_physics_loss(Tape(), ode_reference_jets(0.3), None, inst,
                          np.empty((0, 1)), bb)
    with pytest.raises(TrainingError):
        T.mc_physics_loss(Tape(), ode_reference_jets(0.3), np.zeros(1), inst,
                          np.array([[0.1]]), bb)


def test_nonfinite_residual_names_the_point():
    inst = ode_instance(0.0)
    bi = np.array([[0.5], [0.0], [1.0]])
    bb = inst.boundary_sampler(np.random.default_rng(0), 2)

    def singular_jet(tape, x):
        col = tape.constant(x[:, :1])
        zeros = tape.constant(np.zeros((x.shape[0], 1)))
        return Jet2(val=zeros, d1=(tape.reciprocal(col),), d2=(None,))

    with pytest.raises(T.NonFiniteResidualError) as err:
        with np.errstate(divide="ignore"):
            T.mc_physics_loss(Tape(), singular_jet, None, inst, bi, bb)
    assert err.value.kind == "residual"
    assert err.value.point.tolist() == [0.0]


def test_regularized_loss_penalty_value_and_gradient():
    net = tiny_net(latent_dim=2, width=8)
    weights = init_weights(net, np.random.default_rng(0))
    inst = ode_instance(0.5)
    rng = np.random.default_rng(1)
    bi = inst.interior_sampler(rng, 8)
    bb = inst.boundary_sampler(rng, 2)
    z0 = np.array([0.3, -0.2])
    sigma = 10.0

    def z_grad(with_sigma):
        tape = Tape()
        wn = register_weights(tape, weights, trainable=False)
        z = tape.param(z0)
        loss = T.regularized_loss(tape, wn, z, inst, bi, bb,
                                  sigma=sigma if with_sigma else None)
        return float(loss.value), backward(loss).wrt(z)

    base_val, base_grad = z_grad(False)
    reg_val, reg_grad = z_grad(True)
    assert abs((reg_val - base_val) - np.sum(z0 ** 2) / sigma ** 2) < 1e-15
    assert np.allclose(reg_grad - base_grad, 2.0 * z0 / sigma ** 2, atol=1e-14)

    tape = Tape()
    wn = register_weights(tape, weights, trainable=False)
    z = tape.constant(np.zeros(2))
    with_pen = T.regularized_loss(tape, wn, z, inst, bi, bb, sigma=sigma)
    tape2 = Tape()
    wn2 = register_weights(tape2, weights, trainable=False)
    plain = T.mc_physics_loss(tape2, wn2, tape2.constant(np.zeros(2)), inst, bi, bb)
    assert float(with_pen.value) == float(plain.value)


def test_full_gradient_matches_finite_differences():
    net = NetworkConfig(spatial_dim=1, latent_dim=2, depth=3, width=8)
    weights = init_weights(net, np.random.default_rng(7))
    inst = ode_instance(0.9)
    bi = np.array([[0.2], [-1.1], [2.4], [-2.9]])
    bb = inst.boundary_sampler(np.random.default_rng(0), 2)
    z0 = np.array([0.05, -0.04])
    shapes = [a.shape for a in T._theta_arrays(weights)] + [z0.shape]

    def unflatten(vec):
        parts, pos = [], 0
        for s in shapes:
            n = int(np.prod(s))
            parts.append(np.asarray(vec[pos:pos + n]).reshape(s))
            pos += n
        return parts[:-1], parts[-1]

    def f(vec):
        arrays, z = unflatten(vec)
        w = T._rebuild_weights(net, arrays)
        tape = Tape()
        wn = register_weights(tape, w, trainable=False)
        loss = T.regularized_loss(tape, wn, tape.constant(z), inst, bi, bb,
                                  lam_bc=1.0, p=2.0, sigma=100.0)
        return float(loss.value)

    tape = Tape()
    wn = register_weights(tape, weights, trainable=True)
    z_node = tape.param(z0)
    loss = T.regularized_loss(tape, wn, z_node, inst, bi, bb,
                              lam_bc=1.0, p=2.0, sigma=100.0)
    grads = backward(loss)
    flat_grad = np.concatenate(
        [grads.wrt(n).ravel() for n in T._theta_nodes(wn)] + [grads.wrt(z_node)])
    x0 = np.concatenate([a.ravel() for a in T._theta_arrays(weights)] + [z0])

    report = finite_diff_check(f, x0, 1e-5, flat_grad)
    assert not report.nonfinite
    assert report.max_rel_err < 1e-4


# ----------------------------------------------------------- run traces

def test_trace_csv_round_trip(tmp_path):
    tr = RunTrace()
    tr.append(iteration=0, loss=0.123456789012345, relative_l2=None,
              lr=1e-3, elapsed_ms=0.0)
    tr.append(iteration=1, loss=7.0 / 3.0, relative_l2=0.25, lr=5e-4,
              elapsed_ms=0.0)
    path = tmp_path / "trace.csv"
    tr.write_csv(path)
    back = RunTrace.read_csv(path)
    assert back.columns == tr.columns
    assert back.rows == tr.rows


def test_trace_phase_round_trip_and_columns(tmp_path):
    tr = RunTrace(columns=T.TRACE_COLUMNS + ("phase",))
    tr.append(iteration=0, loss=1.0, relative_l2=0.5, lr=1e-3,
              elapsed_ms=0.0, phase="source")
    tr.append(iteration=0, loss=0.9, relative_l2=None, lr=1e-3,
              elapsed_ms=0.0, phase="target")
    path = tmp_path / "trace.csv"
    tr.write_csv(path)
    back = RunTrace.read_csv(path)
    assert back.rows == tr.rows
    its, errs = back.phase_rows("target")
    assert its.tolist() == [0.0] and np.isnan(errs[0])
    rel = tr.column("relative_l2")
    assert rel[0] == 0.5 and np.isnan(rel[1])
    assert tr.column("phase").tolist() == ["source", "target"]


# ------------------------------------------------------------- pretrain

def _small_instances(count=3, skip=None):
    grid = ode_eta_grid()
    etas = [e for i, e in enumerate(grid) if i != skip]
    return [ode_instance(e) for e in etas[:count]]


def test_pretrain_zero_budget_returns_initial_state():
    net = tiny_net(latent_dim=1, width=8)
    cfg = TrainConfig(network=net, iterations=0, m_r=8, m_bc=2, seed=5,
                      strict=True)
    insts = _small_instances(3)
    model, trace = T.pretrain(cfg, insts)

    init_ss, z_ss, _ = np.random.SeedSequence(5).spawn(3)
    want_w = init_weights(net, np.random.default_rng(init_ss))
    want_z = np.random.default_rng(z_ss).normal(0.0, cfg.z_init_std, (3, 1))
    assert model.weights.theta_bytes() == want_w.theta_bytes()
    assert model.bank.latents.tobytes() == want_z.tobytes()
    assert model.bank.descriptors.shape == (3, 1)
    assert len(trace.rows) == 1 and trace.rows[0][0] == 0
    assert model.manifest["task_count"] == 3


def test_pretrain_deterministic_bytes():
    net = tiny_net(latent_dim=1, width=8)
    cfg = TrainConfig(network=net, iterations=8, m_r=8, m_bc=2, lr0=1e-3,
                      seed=11, strict=True, eval_every=4)
    a, tra = T.pretrain(cfg, _small_instances(2))
    b, trb = T.pretrain(cfg, _small_instances(2))
    assert a.weights.theta_bytes() == b.weights.theta_bytes()
    assert a.bank.latents.tobytes() == b.bank.latents.tobytes()
    assert tra.rows == trb.rows


def test_pretrain_loss_drops():
    net = NetworkConfig(spatial_dim=1, latent_dim=1, depth=4, width=32,
                        omega0=30.0)
    cfg = TrainConfig(network=net, iterations=120, m_r=64, m_bc=2, lr0=1e-2,
                      alpha_z=0.1, milestones=(), seed=0, eval_every=1000)
    _, trace = T.pretrain(cfg, _small_instances(4))
    loss = trace.column("loss")
    assert loss[0] / np.min(loss[1:]) >= 10.0


def test_pretrain_rejects_mixed_descriptors():
    import dataclasses

    net = tiny_net(latent_dim=1, width=8)
    cfg = TrainConfig(network=net, iterations=1, m_r=4, m_bc=2)
    a = ode_instance(0.1)
    b = dataclasses.replace(ode_instance(0.2), descriptor=None)
    with pytest.raises(TrainingError):
        T.pretrain(cfg, [a, b])


def test_pretrain_rejects_mismatched_instance():
    net = tiny_net(latent_dim=1, width=8)
    cfg = TrainConfig(network=net, iterations=1, m_r=4, m_bc=2)
    poly = polygon_sample(np.random.default_rng(0))
    inst = laplace_instance(poly, np.array([0.0, 1.0, 0.0]))
    with pytest.raises(TrainingError):
        T.pretrain(cfg, [inst])


def test_pretrain_single_task_reduces_to_from_scratch():
    # Frozen zero latent and zero latent rate leave exactly the baseline
    # computation; traces and shared parameters must agree bit for bit.
    seed = 21
    lat_net = tiny_net(latent_dim=1, width=16, depth=4, omega0=30.0)
    lf_net = tiny_net(latent_dim=0, width=16, depth=4, omega0=30.0)
    inst = ode_instance(0.5)
    common = dict(iterations=30, m_r=16, m_bc=2, lr0=1e-2, seed=seed,
                  strict=True, eval_every=1)
    cfg_lat = TrainConfig(network=lat_net, alpha_z=0.0, z_init_std=0.0, **common)
    cfg_lf = TrainConfig(network=lf_net, **common)

    init_ss, _, _ = np.random.SeedSequence(seed).spawn(3)
    w0 = init_weights(lat_net, np.random.default_rng(init_ss))
    sliced = NetworkWeights(
        lf_net,
        [w0.matrices[0][:lat_net.embedded_dim].copy()] +
        [m.copy() for m in w0.matrices[1:]],
        [b.copy() for b in w0.biases],
    )

    model, tr_pre = T.pretrain(cfg_lat, [inst],
                               batch_rng=np.random.default_rng(99))
    ws, tr_fs = T.from_scratch(cfg_lf, inst,
                               batch_rng=np.random.default_rng(99),
                               initial_weights=sliced)

    assert np.all(model.bank.latents == 0.0)
    assert tr_pre.rows == tr_fs.rows
    assert model.weights.matrices[0][:1].tobytes() == ws.matrices[0].tobytes()
    for a, b in zip(model.weights.matrices[1:], ws.matrices[1:]):
        assert a.tobytes() == b.tobytes()
    for a, b in zip(model.weights.biases, ws.biases):
        assert a.tobytes() == b.tobytes()


# ---------------------------------------------------------- latent init

def _bank_model(latents, descriptors):
    net = tiny_net(latent_dim=np.shape(latents)[1] or 1, width=8)
    w = init_weights(net, np.random.default_rng(0))
    return PretrainedModel(weights=w, bank=LatentBank(latents, descriptors),
                           family="ode", manifest={})


def test_latent_init_nearest_descriptor_and_tie():
    model = _bank_model(np.array([[0.0], [1.0], [2.0]]),
                        np.array([[0.0], [1.0], [2.0]]))
    pick = T.latent_init(model, np.array([1.2]))
    assert pick.components.tolist() == [1.0] and pick.owner == "bank[1]"
    tie = T.latent_init(model, np.array([0.5]))
    assert tie.owner == "bank[0]"


def test_latent_init_mean_fallback():
    model = _bank_model(np.array([[0.0], [3.0]]), None)
    pick = T.latent_init(model, np.array([0.1]))
    assert pick.components.tolist() == [1.5] and pick.owner == "bank-mean"
    with_desc = _bank_model(np.array([[0.0], [3.0]]), np.array([[0.0], [1.0]]))
    assert T.latent_init(with_desc, None).owner == "bank-mean"


def test_latent_init_nineteen_point_grid():
    grid = ode_eta_grid()
    keep = [i for i in range(20) if i != 7]
    descs = grid[keep][:, None]
    latents = np.arange(19, dtype=np.float64)[:, None]
    model = _bank_model(latents, descs)
    eta_new = 1.03
    want = int(np.argmin(np.abs(descs[:, 0] - eta_new)))
    pick = T.latent_init(model, ode_instance(eta_new))
    assert pick.components[0] == float(want)
    assert pick.owner == f"bank[{want}]"


def test_latent_init_errors():
    model = _bank_model(np.array([[0.0]]), np.array([[0.0]]))
    with pytest.raises(TrainingError):
        T.latent_init(model, np.array([0.0, 1.0]))
    empty = _bank_model(np.zeros((0, 1)), None)
    with pytest.raises(TrainingError):
        T.latent_init(empty)


# -------------------------------------------------------------- finetune

def _pretrained(seed=0, iterations=10):
    net = tiny_net(latent_dim=1, width=16, depth=4, omega0=30.0)
    cfg = TrainConfig(network=net, iterations=iterations, m_r=16, m_bc=2,
                      lr0=1e-2, alpha_z=1e-2, seed=seed, strict=True,
                      eval_every=100)
    model, _ = T.pretrain(cfg, _small_instances(3))
    return model


def test_finetune_latent_only_never_touches_weights():
    model = _pretrained()
    before = model.weights.theta_bytes()
    cfg = TrainConfig(iterations=25, m_r=16, m_bc=2, lr0=1e-2, mode="mad-l",
                      seed=1, strict=True, eval_every=100)
    weights, z, trace = T.finetune(cfg, model, ode_instance(1.9))
    assert weights.theta_bytes() == before
    assert model.weights.theta_bytes() == before
    assert len(trace.rows) == 26
    assert z.components.shape == (1,)


def test_finetune_joint_mode_updates_weights():
    model = _pretrained()
    cfg = TrainConfig(iterations=5, m_r=16, m_bc=2, lr0=1e-2, mode="mad-lm",
                      seed=1, strict=True, eval_every=100)
    weights, _, _ = T.finetune(cfg, model, ode_instance(1.9))
    assert weights.theta_bytes() != model.weights.theta_bytes()


def test_finetune_zero_budget_returns_latent_init():
    model = _pretrained()
    cfg = TrainConfig(iterations=0, m_r=16, m_bc=2, mode="mad-l", seed=1,
                      strict=True)
    inst = ode_instance(1.9)
    weights, z, trace = T.finetune(cfg, model, inst)
    assert weights.theta_bytes() == model.weights.theta_bytes()
    want = T.latent_init(model, inst)
    assert z.components.tolist() == want.components.tolist()
    assert z.owner == want.owner
    assert len(trace.rows) == 1


def test_finetune_requires_latent_input():
    net = tiny_net(latent_dim=0, width=8)
    model = PretrainedModel(weights=init_weights(net, np.random.default_rng(0)),
                            bank=LatentBank(np.zeros((2, 0))), family="ode",
                            manifest={})
    cfg = TrainConfig(iterations=1, m_r=4, m_bc=2)
    with pytest.raises(TrainingError):
        T.finetune(cfg, model, ode_instance(0.4))


def test_finetune_trace_losses_recomputable():
    # Row losses must be exactly reproducible from the recorded batch
    # stream: probe row at the initial state, then one row per step
    # evaluated before that step's update.
    model = _pretrained()
    inst = ode_instance(1.9)
    cfg = TrainConfig(iterations=1, m_r=8, m_bc=2, lr0=1e-2, mode="mad-l",
                      seed=0, strict=True)
    _, _, trace = T.finetune(cfg, model, inst,
                             batch_rng=np.random.default_rng(777))

    rng = np.random.default_rng(777)
    z0 = T.latent_init(model, inst).components

    def loss_next_batch():
        bi = inst.interior_sampler(rng, cfg.m_r)
        bb = inst.boundary_sampler(rng, cfg.m_bc)
        tape = Tape()
        wn = register_weights(tape, model.weights, trainable=False)
        loss = T.regularized_loss(tape, wn, tape.constant(z0), inst, bi, bb,
                                  cfg.lam_bc, cfg.p, cfg.sigma)
        return float(loss.value)

    assert trace.rows[0][1] == loss_next_batch()
    assert trace.rows[1][1] == loss_next_batch()


# ---------------------------------------------------------- from scratch

def test_from_scratch_rejects_latent_network():
    cfg = TrainConfig(network=tiny_net(latent_dim=1), iterations=1, m_r=4,
                      m_bc=2)
    with pytest.raises(TrainingError):
        T.from_scratch(cfg, ode_instance(0.2))


def test_from_scratch_deterministic_and_positive_start():
    net = tiny_net(latent_dim=0, width=16, depth=4, omega0=30.0)
    cfg = TrainConfig(network=net, iterations=10, m_r=16, m_bc=2, lr0=1e-2,
                      seed=2, strict=True, eval_every=5)
    wa, tra = T.from_scratch(cfg, ode_instance(1.0))
    wb, trb = T.from_scratch(cfg, ode_instance(1.0))
    assert wa.theta_bytes() == wb.theta_bytes()
    assert tra.rows == trb.rows
    assert tra.rows[0][1] > 0.0


def test_from_scratch_lr_column_non_increasing():
    net = tiny_net(latent_dim=0, width=8)
    cfg = TrainConfig(network=net, iterations=20, m_r=8, m_bc=2, lr0=1e-3,
                      milestones=(0.25, 0.5, 0.75), seed=0, strict=True,
                      eval_every=100)
    _, trace = T.from_scratch(cfg, ode_instance(0.6))
    lr = trace.column("lr")
    assert np.all(np.diff(lr) <= 0)
    assert lr[0] == 1e-3 and lr[-1] == 1e-3 * 0.5 ** 3


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_aborts_with_best_state():
    net = tiny_net(latent_dim=0, width=8)
    cfg = TrainConfig(network=net, iterations=50, m_r=8, m_bc=2, lr0=1e300,
                      seed=0, strict=True, eval_every=100)
    with pytest.raises(TrainingDiverged) as err:
        T.from_scratch(cfg, ode_instance(0.6))
    exc = err.value
    assert exc.iteration >= 1
    assert np.isfinite(exc.best_loss)
    assert exc.weights.all_finite()
    assert exc.trace is not None and len(exc.trace.rows) >= 1


# ------------------------------------------------------------- transfer

def test_transfer_phase_markers_and_numbering():
    net = tiny_net(latent_dim=0, width=8)
    cfg = TrainConfig(network=net, iterations=4, source_iterations=6, m_r=8,
                      m_bc=2, lr0=1e-3, seed=3, strict=True, eval_every=100)
    _, trace = T.transfer_learning(cfg, ode_instance(0.2), ode_instance(1.4))
    phases = trace.column("phase")
    assert list(phases[:7]) == ["source"] * 7
    assert list(phases[7:]) == ["target"] * 5
    src_it, _ = trace.phase_rows("source")
    tgt_it, _ = trace.phase_rows("target")
    assert src_it.tolist() == list(range(7))
    assert tgt_it.tolist() == list(range(5))


def test_transfer_zero_target_budget_keeps_source_weights():
    net = tiny_net(latent_dim=0, width=8)
    cfg = TrainConfig(network=net, iterations=0, source_iterations=12, m_r=8,
                      m_bc=2, lr0=1e-3, seed=4, strict=True, eval_every=100)
    src = ode_instance(0.2)
    got, trace = T.transfer_learning(cfg, src, ode_instance(1.4))

    init_ss, src_ss, _ = np.random.SeedSequence(4).spawn(3)
    w0 = init_weights(net, np.random.default_rng(init_ss))
    manual = RunTrace(columns=T.TRACE_COLUMNS + ("phase",))
    want, _, _ = T._train_task(cfg, src, w0, None, iterations=12,
                               train_theta=True, train_z=False,
                               use_penalty=False,
                               batch_rng=np.random.default_rng(src_ss),
                               trace=manual, phase="source")
    assert got.theta_bytes() == want.theta_bytes()
    assert len(trace.phase_rows("target")[0]) == 1


def test_transfer_same_task_loss_is_continuous():
    # With source == target the second phase resumes the same problem,
    # so its probe loss stays within a factor of the source's last loss.
    net = NetworkConfig(spatial_dim=1, latent_dim=0, depth=4, width=32,
                        omega0=30.0)
    cfg = TrainConfig(network=net, iterations=60, source_iterations=150,
                      m_r=64, m_bc=2, lr0=5e-3, milestones=(), seed=0,
                      strict=True, eval_every=1000)
    inst = ode_instance(0.8)
    _, trace = T.transfer_learning(cfg, inst, inst)
    i = trace.columns.index("loss")
    src_rows = [r for r in trace.rows if r[-1] == "source"]
    tgt_rows = [r for r in trace.rows if r[-1] == "target"]
    assert tgt_rows[0][i] <= 2.0 * src_rows[-1][i]


# -------------------------------------------------------------- reptile

def test_reptile_epsilon_zero_never_moves():
    net = tiny_net(latent_dim=0, width=8)
    cfg = TrainConfig(network=net, iterations=5, m_r=8, m_bc=2, lr0=1e-3,
                      reptile_inner_steps=3, reptile_epsilon=0.0, seed=6,
                      strict=True)
    got, trace = T.reptile_pretrain(cfg, _small_instances(3))
    init_ss, _, _ = np.random.SeedSequence(6).spawn(3)
    want = init_weights(net, np.random.default_rng(init_ss))
    assert got.theta_bytes() == want.theta_bytes()
    assert len(trace.rows) == 5


def test_reptile_epsilon_one_telescopes():
    net = tiny_net(latent_dim=0, width=8)
    cfg = TrainConfig(network=net, iterations=3, m_r=8, m_bc=2, lr0=1e-3,
                      reptile_inner_steps=4, reptile_epsilon=1.0, seed=7,
                      strict=True)
    insts = _small_instances(3)
    got, _ = T.reptile_pretrain(cfg, insts)

    init_ss, pick_ss, batch_ss = np.random.SeedSequence(7).spawn(3)
    weights = init_weights(net, np.random.default_rng(init_ss))
    pick = np.random.default_rng(pick_ss)
    rng = np.random.default_rng(batch_ss)
    for _ in range(3):
        j = int(pick.integers(len(insts)))
        weights, _, _ = T._train_task(
            cfg, insts[j], weights, None, iterations=4, train_theta=True,
            train_z=False, use_penalty=False, batch_rng=rng, schedule=False)
    assert got.theta_bytes() == weights.theta_bytes()


def test_reptile_trace_shape():
    net = tiny_net(latent_dim=0, width=8)
    cfg = TrainConfig(network=net, iterations=4, m_r=8, m_bc=2,
                      reptile_inner_steps=2, seed=8, strict=True)
    _, trace = T.reptile_pretrain(cfg, _small_instances(2))
    assert trace.column("iteration").tolist() == [1.0, 2.0, 3.0, 4.0]
    assert np.all(np.isnan(trace.column("relative_l2")))
    assert np.all(np.isfinite(trace.column("loss")))


# --------------------------------------------------------------- config

def test_train_config_validation():
    bad = [
        dict(iterations=-1),
        dict(m_r=0),
        dict(m_bc=0),
        dict(lam_bc=0.0),
        dict(sigma=0.0),
        dict(p=0.5),
        dict(lr0=0.0),
        dict(milestones=(0.6, 0.4)),
        dict(milestones=(0.0, 0.5)),
        dict(decay=0.0),
        dict(mode="mad"),
        dict(alpha_z=-1e-3),
        dict(z_init_std=-1.0),
        dict(eval_every=0),
        dict(source_iterations=-1),
        dict(reptile_inner_steps=0),
        dict(reptile_epsilon=1.5),
    ]
    for kwargs in bad:
        with pytest.raises(ValueError):
            TrainConfig(**kwargs)


def test_train_config_round_trip_and_alpha():
    net = tiny_net(latent_dim=2)
    cfg = TrainConfig(network=net, iterations=7, milestones=(0.5,),
                      alpha_z=None, lr0=2e-3, mode="mad-l", strict=True)
    assert cfg.effective_alpha_z == 2e-3
    back = TrainConfig.from_dict(cfg.to_dict())
    assert back == cfg
    explicit = TrainConfig(alpha_z=5e-4)
    assert explicit.effective_alpha_z == 5e-4
