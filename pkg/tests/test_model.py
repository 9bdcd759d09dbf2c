import numpy as np
import pytest

from edpgnn.autodiff import Tape
from edpgnn.graphs import (
    GraphInstance,
    NoiseSchedule,
    Permutation,
    er_graph,
    permute,
)
from edpgnn.model import (
    CheckpointError,
    EdpGnn,
    LineIntegralProbe,
    ModelConfig,
    invariance_probe,
    line_integral,
    load_checkpoint,
    preprocess_input,
    read_checkpoint_config,
    save_checkpoint,
)

SMALL = ModelConfig(layers=2, msg_steps=2, channels=2, hidden=6, node_width=4, levels=3)


def path_graph(n):
    a = np.zeros((n, n))
    for i in range(n - 1):
        a[i, i + 1] = a[i + 1, i] = 1.0
    return GraphInstance(a)


# --- preprocessing ---------------------------------------------------------


def test_preprocess_degree_features():
    stack, z0 = preprocess_input(path_graph(3))
    assert np.array_equal(z0[:, 0], [1.0, 2.0, 1.0])


def test_preprocess_negated_channel_edgeless():
    g = GraphInstance(np.zeros((3, 3)))
    stack, _ = preprocess_input(g)
    expected = np.ones((3, 3)) - np.eye(3)
    assert np.array_equal(stack[1], expected)


def test_preprocess_channels_sum_to_offdiag_ones():
    rng = np.random.default_rng(0)
    g = er_graph(6, 0.5, rng)
    stack, _ = preprocess_input(g)
    assert np.array_equal(stack[0] + stack[1], np.ones((6, 6)) - np.eye(6))


def test_preprocess_concats_node_features():
    g = path_graph(3)
    g.node_features = np.array([[5.0], [6.0], [7.0]])
    _, z0 = preprocess_input(g)
    assert z0.shape == (3, 2)
    assert np.array_equal(z0[:, 0], [5.0, 6.0, 7.0])
    assert np.array_equal(z0[:, 1], [1.0, 2.0, 1.0])


def test_preprocess_single_channel_mode():
    g = path_graph(3)
    stack, _ = preprocess_input(g, multi_channel=False)
    assert stack.shape == (1, 3, 3)
    assert np.array_equal(stack[0], g.adj)


# --- forward output structure ----------------------------------------------


def test_score_symmetric_zero_diagonal():
    rng = np.random.default_rng(1)
    model = EdpGnn(SMALL, seed=3)
    g = er_graph(7, 0.4, rng)
    s = model.forward_score(g, level=0)
    assert np.array_equal(s, s.T)
    assert np.all(np.diagonal(s) == 0.0)


def test_intermediate_stacks_symmetric():
    # run the forward manually and check each layer's output channels
    from edpgnn.autodiff import Tensor
    from edpgnn.graphs import offdiag_mask

    rng = np.random.default_rng(2)
    model = EdpGnn(SMALL, seed=1)
    g = er_graph(6, 0.5, rng)
    stack0, z0 = preprocess_input(g)
    a, z = Tensor(stack0[None]), Tensor(z0[None])
    off = Tensor(offdiag_mask(6))
    for layer in model.layers:
        a, z = layer(a, z, (0,), 1, off)
        for c in range(a.shape[1]):
            assert np.array_equal(a.data[0, c], a.data[0, c].T)
            assert np.all(np.diagonal(a.data[0, c]) == 0.0)


def test_levels_change_output():
    from conftest import randomize_params

    rng = np.random.default_rng(3)
    model = randomize_params(EdpGnn(SMALL, seed=5), rng)
    g = er_graph(6, 0.5, rng)
    s0 = model.forward_score(g, 0)
    s1 = model.forward_score(g, 1)
    assert not np.allclose(s0, s1)


def test_levels_identical_at_init():
    # gains start at 1 and shifts at 0, so conditioning is identity-like
    # until training moves it
    rng = np.random.default_rng(3)
    model = EdpGnn(SMALL, seed=5)
    g = er_graph(6, 0.5, rng)
    assert np.array_equal(model.forward_score(g, 0), model.forward_score(g, 1))


def test_level_out_of_range():
    model = EdpGnn(SMALL, seed=0)
    g = path_graph(4)
    with pytest.raises(ValueError, match="out of range"):
        model.forward_score(g, SMALL.levels)
    with pytest.raises(ValueError, match="out of range"):
        model.forward_score(g, -1)


def test_feature_width_mismatch_rejected():
    model = EdpGnn(SMALL, seed=0)
    g = path_graph(4)
    g.node_features = np.ones((4, 2))
    with pytest.raises(ValueError, match="extra node features"):
        model.forward_score(g, 0)


def test_node_width_progression():
    cfg = ModelConfig()
    widths = cfg.node_widths()
    assert widths[0] == 1
    # each layer's node output concatenates its msg_steps step outputs
    assert widths[1:] == [4 * 16] * cfg.layers
    assert len(widths) == cfg.layers + 1


# --- equivariance ----------------------------------------------------------


@pytest.mark.parametrize("learnable,multi", [(True, True), (True, False),
                                             (False, True), (False, False)])
def test_forward_score_equivariant(learnable, multi):
    from conftest import randomize_params

    rng = np.random.default_rng(10)
    cfg = ModelConfig(layers=2, msg_steps=2, channels=2, hidden=6, node_width=4,
                      levels=2, learnable_adj=learnable, multi_channel=multi)
    for trial in range(5):
        model = randomize_params(EdpGnn(cfg, seed=trial), rng)
        g = er_graph(int(rng.integers(4, 10)), 0.5, rng, weighted=True)
        pi = Permutation.random(g.n, rng)
        s_direct = model.forward_score(permute(g, pi), 0)
        s_perm = pi.apply_matrix(model.forward_score(g, 0))
        assert np.max(np.abs(s_direct - s_perm)) < 1e-8


def test_equivariance_with_node_features():
    rng = np.random.default_rng(11)
    cfg = ModelConfig(layers=2, msg_steps=2, channels=2, hidden=6, node_width=4,
                      levels=2, extra_feature_dim=1)
    model = EdpGnn(cfg, seed=7)
    g = er_graph(8, 0.4, rng, weighted=True)
    g.node_features = rng.normal(size=(8, 1))
    pi = Permutation.random(8, rng)
    s_direct = model.forward_score(permute(g, pi), 1)
    s_perm = pi.apply_matrix(model.forward_score(g, 1))
    assert np.max(np.abs(s_direct - s_perm)) < 1e-8


# --- parameter accounting ---------------------------------------------------


def test_param_count_accounting():
    model = EdpGnn(SMALL, seed=0)
    shared, per_level = model.param_counts()
    total = sum(t.data.size for t in model.params())
    assert total == shared + SMALL.levels * per_level


def test_conditioning_scales_linearly_with_levels():
    base = ModelConfig(layers=2, msg_steps=2, channels=2, hidden=6, node_width=4, levels=2)
    more = ModelConfig(layers=2, msg_steps=2, channels=2, hidden=6, node_width=4, levels=5)
    shared_a, per_a = EdpGnn(base, seed=0).param_counts()
    shared_b, per_b = EdpGnn(more, seed=0).param_counts()
    assert shared_a == shared_b
    assert per_a == per_b


def test_init_conditioning_is_identity_like():
    model = EdpGnn(SMALL, seed=0)
    for name, t in model.named_params():
        if ".gain" in name:
            assert np.all(t.data == 1.0)
        elif ".shift" in name or name.endswith(".bias"):
            assert np.all(t.data == 0.0)
        elif name.endswith(".eps"):
            assert t.data == 0.0


# --- gradient flow ----------------------------------------------------------


def test_dsm_gradient_matches_finite_differences():
    # full score-matching loss on a 4-node graph; every parameter checked
    from edpgnn.training import dsm_loss_given

    cfg = ModelConfig(layers=2, msg_steps=2, channels=2, hidden=4, node_width=3,
                      levels=2)
    model = EdpGnn(cfg, seed=2)
    schedule = NoiseSchedule((0.8, 0.4))
    rng = np.random.default_rng(0)
    g = er_graph(4, 0.5, rng)
    perturbed = [g.adj + 0.3 * rng.normal(size=(4, 4)) for _ in range(2)]
    perturbed = [np.triu(p, 1) + np.triu(p, 1).T for p in perturbed]

    with Tape() as tape:
        loss, _ = dsm_loss_given(model, g, perturbed, schedule)
        tape.backward(loss)
    grads = {name: t.grad.copy() for name, t in model.named_params()}

    h = 1e-5
    checked = 0
    for name, t in model.named_params():
        flat = t.data.reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            lp, _ = dsm_loss_given(model, g, perturbed, schedule)
            flat[idx] = orig - h
            lm, _ = dsm_loss_given(model, g, perturbed, schedule)
            flat[idx] = orig
            fd = (lp.item() - lm.item()) / (2 * h)
            got = grads[name].reshape(-1)[idx]
            err = abs(got - fd)
            assert err < 1e-7 or err < 1e-4 * max(abs(fd), abs(got)), (
                f"{name}[{idx}]: autodiff {got} vs fd {fd}"
            )
            checked += 1
    assert checked == sum(t.data.size for t in model.params())


# --- invariance probe -------------------------------------------------------


class ConstantScore:
    """score(x) == S for a fixed symmetric matrix S."""

    def __init__(self, s):
        self.s = s

    def score(self, adj, node_features, level):
        return self.s


def test_probe_closed_form_for_constant_score():
    rng = np.random.default_rng(4)
    s = rng.normal(size=(5, 5))
    s = s + s.T
    g = er_graph(5, 0.6, rng)
    val = line_integral(ConstantScore(s), g.adj, 0, steps=100)
    assert val == pytest.approx(float(np.vdot(s, g.adj)), rel=1e-12)


def test_probe_zero_endpoint():
    model = EdpGnn(SMALL, seed=1)
    assert line_integral(model, np.zeros((4, 4)), 0, steps=100) == pytest.approx(0.0, abs=1e-12)


def test_probe_invariance_and_convergence():
    from conftest import randomize_params

    rng = np.random.default_rng(6)
    model = randomize_params(EdpGnn(SMALL, seed=9), rng)
    g = er_graph(6, 0.5, rng)
    pi = Permutation.random(6, rng)
    # invariance at M = 1000
    probe = LineIntegralProbe(endpoint=g, permutation=pi, steps=1000)
    f_a, f_api = invariance_probe(model, probe, 0)
    assert abs(f_a - f_api) < 1e-6 * (1.0 + abs(f_a))
    # quadrature error decreases with step count
    reference = line_integral(model, g.adj, 0, steps=8000)
    errors = [abs(line_integral(model, g.adj, 0, steps=m) - reference)
              for m in (250, 500, 1000)]
    assert errors[2] <= errors[0]


def test_probe_rejects_too_few_steps():
    g = path_graph(4)
    with pytest.raises(ValueError, match="100"):
        LineIntegralProbe(endpoint=g, permutation=Permutation.identity(4), steps=50)


# --- checkpoints -------------------------------------------------------------


def test_checkpoint_roundtrip(tmp_path):
    model = EdpGnn(SMALL, seed=12)
    schedule = NoiseSchedule((1.6, 0.8, 0.1))
    path = tmp_path / "model.ckpt"
    save_checkpoint(model, schedule, path)
    loaded, sched = load_checkpoint(path)
    assert sched.sigmas == schedule.sigmas
    assert loaded.config == model.config
    for (na, ta), (nb, tb) in zip(model.named_params(), loaded.named_params()):
        assert na == nb
        assert np.array_equal(ta.data, tb.data)
    # forward agreement, bit for bit
    rng = np.random.default_rng(0)
    g = er_graph(5, 0.5, rng)
    assert np.array_equal(model.forward_score(g, 1), loaded.forward_score(g, 1))


def test_checkpoint_header_written(tmp_path):
    model = EdpGnn(SMALL, seed=0)
    path = tmp_path / "model.ckpt"
    save_checkpoint(model, NoiseSchedule((0.5, 0.25, 0.1)), path)
    assert path.read_text().splitlines()[0] == "EDPGNN-CKPT v1"


def test_checkpoint_rejects_corrupt_header(tmp_path):
    path = tmp_path / "bad.ckpt"
    path.write_text("NOT-A-CKPT v9\nlayers 2\n")
    with pytest.raises(CheckpointError, match="header"):
        read_checkpoint_config(path)


def test_checkpoint_reports_architecture(tmp_path):
    model = EdpGnn(SMALL, seed=0)
    path = tmp_path / "model.ckpt"
    save_checkpoint(model, NoiseSchedule((0.5, 0.25, 0.1)), path)
    cfg, _ = read_checkpoint_config(path)
    assert cfg == SMALL
