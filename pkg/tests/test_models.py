import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mgdamtl.core_types import ParameterStore
from mgdamtl.harness.verify import _random_model, model_from_case
from mgdamtl.models import (Batch, EncoderSpec, HeadSpec, LossKind, MtlModel, backward_encoder,
                            backward_task_heads, encode, forward, head_forward, load_checkpoint,
                            materialize_jacobian, save_checkpoint, task_losses)
from mgdamtl.oracles import central_difference_gradient, relative_error


def linear_model(d_in, d_repr, shared, heads, blocks):
    enc = EncoderSpec("linear", d_in, d_repr)
    return MtlModel(enc, heads, ParameterStore(np.asarray(shared, float), [np.asarray(b, float) for b in blocks]))


def identity_encoder(d):
    return np.concatenate([np.eye(d).ravel(), np.zeros(d)])


def test_zero_encoder_with_zero_targets_has_zero_loss():
    m = linear_model(3, 2, np.zeros(8), [HeadSpec(1, LossKind.MSE)], [np.ones(3)])
    m.params.task_blocks[0][-1] = 0.0
    batch = Batch(np.random.default_rng(0).normal(size=(4, 3)), [np.zeros((4, 1))])
    assert forward(m, batch).losses.values[0] == 0.0


def test_identity_encoder_and_head_reproduce_inputs():
    d = 3
    head = np.concatenate([np.eye(d).ravel(), np.zeros(d)])
    m = linear_model(d, d, identity_encoder(d), [HeadSpec(d, LossKind.MSE)], [head])
    x = np.random.default_rng(1).normal(size=(5, d))
    assert forward(m, Batch(x, [x])).losses.values[0] == 0.0


def test_cross_entropy_at_uniform_logits_is_ln2():
    m = linear_model(1, 1, [0.0, 0.0], [HeadSpec(2, LossKind.SOFTMAX_CE)], [np.zeros(4)])
    loss = forward(m, Batch([[1.0]], [np.array([0])])).losses.values[0]
    assert loss == pytest.approx(np.log(2.0), abs=1e-15)


def test_mse_hand_case():
    # W = 3, z = 2, y = 5: loss (6 - 5)^2 = 1, dL/dz = 2 * 1 * 3 = 6
    m = linear_model(1, 1, [1.0, 0.0], [HeadSpec(1, LossKind.MSE)], [[3.0, 0.0]])
    batch = Batch([[2.0]], [np.array([[5.0]])])
    fwd = forward(m, batch)
    assert fwd.losses.values[0] == 1.0
    g = backward_task_heads(m, batch, fwd)
    assert g.z_grads[0][0, 0] == 6.0
    # head gradient: dL/dW = 2 * 1 * z = 4, dL/db = 2
    np.testing.assert_array_equal(g.param_grads[0], [4.0, 2.0])


def test_softmax_gradient_at_uniform_logits():
    # identity encoder and identity head make dL/dz equal dL/dlogits
    head = np.concatenate([np.eye(2).ravel(), np.zeros(2)])
    m = linear_model(2, 2, identity_encoder(2), [HeadSpec(2, LossKind.SOFTMAX_CE)], [head])
    n = 4
    batch = Batch(np.zeros((n, 2)), [np.zeros(n, dtype=int)])
    g = backward_task_heads(m, batch, forward(m, batch)).z_grads[0]
    np.testing.assert_allclose(g, np.tile([-0.5, 0.5], (n, 1)) / n, atol=1e-16)


def test_zero_upstream_gives_zero_encoder_gradient():
    case = _random_model(np.random.default_rng(2), "mlp", 3, 2, 4, ["mse"], 3)
    m, batch = model_from_case(case)
    fwd = forward(m, batch)
    assert not np.any(backward_encoder(m, batch, np.zeros_like(fwd.z), fwd))


def test_linear_encoder_gradient_is_upstream_t_x():
    x = np.array([[1.0, 2.0], [3.0, -1.0]])
    u = np.array([[0.5, -1.0], [2.0, 0.25]])
    m = linear_model(2, 2, np.arange(6.0), [HeadSpec(1, LossKind.MSE)], [np.zeros(3)])
    batch = Batch(x, [np.zeros((2, 1))])
    g = backward_encoder(m, batch, u, forward(m, batch))
    # U^T X = [[0.5*1 + 2*3, 0.5*2 + 2*(-1)], [-1*1 + 0.25*3, -1*2 + 0.25*(-1)]]
    np.testing.assert_array_equal(g[:4], [6.5, -1.0, -0.25, -2.25])
    np.testing.assert_array_equal(g[4:], [2.5, -0.75])


def test_backward_encoder_rejects_bad_upstream():
    case = _random_model(np.random.default_rng(3), "linear", 3, 2, 0, ["mse"], 2)
    m, batch = model_from_case(case)
    fwd = forward(m, batch)
    with pytest.raises(ValueError, match="shape"):
        backward_encoder(m, batch, np.zeros((3, 2)), fwd)
    with pytest.raises(FloatingPointError):
        backward_encoder(m, batch, np.full((2, 2), np.nan), fwd)


def test_forward_shape_errors():
    case = _random_model(np.random.default_rng(4), "linear", 3, 2, 0, ["mse", "mse"], 2)
    m, batch = model_from_case(case)
    with pytest.raises(ValueError, match="features"):
        forward(m, Batch(np.zeros((2, 4)), batch.labels))
    with pytest.raises(ValueError, match="tasks"):
        forward(m, batch.select_tasks([0]))
    with pytest.raises(ValueError, match="labels"):
        Batch(np.zeros((2, 3)), [np.zeros(3)])


def test_non_finite_activation_is_reported():
    case = _random_model(np.random.default_rng(5), "linear", 2, 2, 0, ["mse"], 1)
    m, _ = model_from_case(case)
    with pytest.raises(FloatingPointError, match="non-finite"):
        forward(m, Batch([[np.inf, 0.0]], [np.zeros((1, 2))]))


def test_linear_jacobian_single_example_rank():
    x = np.array([[1.0, -2.0, 0.5]])
    m = linear_model(3, 2, np.zeros(8), [HeadSpec(1, LossKind.MSE)], [np.zeros(3)])
    jac = materialize_jacobian(m, Batch(x, [np.zeros((1, 1))]))
    assert jac.matrix.shape == (2, 8)
    assert np.linalg.matrix_rank(jac.matrix) == 2
    assert jac.full_rank and jac.full_row_rank
    # row a holds x in the W[a, :] columns and 1 in the b[a] column
    np.testing.assert_array_equal(jac.matrix[0], [1.0, -2.0, 0.5, 0, 0, 0, 1, 0])


def test_zero_input_without_bias_is_rank_deficient():
    # with zero inputs only the bias columns survive; two examples share them
    m = linear_model(3, 2, np.zeros(8), [HeadSpec(1, LossKind.MSE)], [np.zeros(3)])
    jac = materialize_jacobian(m, Batch(np.zeros((2, 3)), [np.zeros((2, 1))]))
    assert not np.any(jac.matrix[:, :6])
    assert not jac.full_rank


def test_jacobian_budget():
    m = linear_model(100, 10, np.zeros(1010), [HeadSpec(1, LossKind.MSE)], [np.zeros(11)])
    with pytest.raises(ValueError, match="budget"):
        materialize_jacobian(m, Batch(np.zeros((200, 100)), [np.zeros((200, 1))]))


@pytest.mark.parametrize("seed", range(10))
def test_mlp_jacobian_matches_finite_differences(seed):
    case = _random_model(np.random.default_rng(seed), "mlp", 4, 3, 5, ["mse"], 3)
    m, batch = model_from_case(case)
    ja = materialize_jacobian(m, batch, "analytic").matrix
    jf = materialize_jacobian(m, batch, "fd").matrix
    assert np.max(np.abs(ja - jf)) <= 1e-5


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.sampled_from(["linear", "mlp"]))
def test_all_gradients_match_finite_differences(seed, kind):
    rng = np.random.default_rng(seed)
    case = _random_model(rng, kind, int(rng.integers(2, 5)), int(rng.integers(1, 4)), int(rng.integers(2, 5)),
                         ["softmax_ce", "mse"], int(rng.integers(1, 4)))
    m, batch = model_from_case(case)
    fwd = forward(m, batch)
    heads = backward_task_heads(m, batch, fwd)
    for t in range(m.n_tasks):
        def loss_shared(th, t=t):
            c = m.copy()
            c.params.shared[:] = th
            return task_losses(c, batch)[t]

        def loss_head(th, t=t):
            c = m.copy()
            c.params.task_blocks[t][:] = th
            return task_losses(c, batch)[t]

        g_sh = backward_encoder(m, batch, heads.z_grads[t], fwd)
        assert relative_error(g_sh, central_difference_gradient(loss_shared, m.params.shared)) <= 1e-4
        fd_head = central_difference_gradient(loss_head, m.params.task_blocks[t])
        assert relative_error(heads.param_grads[t], fd_head) <= 1e-4


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_head_perturbation_leaves_other_tasks_unchanged(seed):
    rng = np.random.default_rng(seed)
    case = _random_model(rng, "mlp", 3, 2, 3, ["mse", "softmax_ce", "mse"], 3)
    m, batch = model_from_case(case)
    base = task_losses(m, batch)
    tp = int(rng.integers(0, 3))
    m.params.task_blocks[tp] += rng.normal(size=m.params.task_blocks[tp].size)
    after = task_losses(m, batch)
    others = [t for t in range(3) if t != tp]
    assert np.array_equal(after[others], base[others])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_backward_encoder_is_linear_in_upstream(seed):
    rng = np.random.default_rng(seed)
    m, batch = model_from_case(_random_model(rng, "mlp", 3, 2, 4, ["mse"], 3))
    fwd = forward(m, batch)
    u1, u2 = rng.normal(size=fwd.z.shape), rng.normal(size=fwd.z.shape)
    a, b = rng.normal(size=2)
    combined = backward_encoder(m, batch, a * u1 + b * u2, fwd)
    split = a * backward_encoder(m, batch, u1, fwd) + b * backward_encoder(m, batch, u2, fwd)
    assert relative_error(combined, split) <= 1e-10


def test_forward_is_deterministic():
    m, batch = model_from_case(_random_model(np.random.default_rng(6), "mlp", 4, 3, 5, ["softmax_ce", "mse"], 6))
    a, b = forward(m, batch), forward(m, batch)
    assert np.array_equal(a.losses.values, b.losses.values) and np.array_equal(a.z, b.z)


def test_init_is_seeded_and_subset_consistent():
    enc = EncoderSpec("mlp", 5, 3, 4)
    heads = [HeadSpec(2, LossKind.SOFTMAX_CE), HeadSpec(1, LossKind.MSE), HeadSpec(3, LossKind.MSE)]
    a = MtlModel.init(enc, heads, seed=7)
    b = MtlModel.init(enc, heads, seed=7)
    c = MtlModel.init(enc, heads, seed=8)
    assert np.array_equal(a.params.shared, b.params.shared)
    assert not np.array_equal(a.params.shared, c.params.shared)
    only = MtlModel.init(enc, [heads[2]], seed=7, head_keys=[2])
    assert np.array_equal(only.params.shared, a.params.shared)
    assert np.array_equal(only.params.task_blocks[0], a.params.task_blocks[2])
    bound = 1 / np.sqrt(5)
    w1 = a.shared_views()[0]
    assert np.all(np.abs(w1) <= bound)


def test_checkpoint_round_trip_is_bit_identical(tmp_path):
    enc = EncoderSpec("mlp", 4, 3, 5, "relu")
    heads = [HeadSpec(3, LossKind.SOFTMAX_CE), HeadSpec(2, LossKind.MSE)]
    m = MtlModel.init(enc, heads, seed=3)
    path = tmp_path / "model.npz"
    save_checkpoint(m, path)
    back = load_checkpoint(path)
    assert back.encoder == m.encoder and back.heads == m.heads
    rng = np.random.default_rng(0)
    batch = Batch(rng.normal(size=(6, 4)), [rng.integers(0, 3, 6), rng.normal(size=(6, 2))])
    assert np.array_equal(forward(m, batch).losses.values, forward(back, batch).losses.values)


def test_checkpoint_rejects_foreign_file(tmp_path):
    path = tmp_path / "x.npz"
    np.savez(path, meta=np.array('{"format": "other"}'))
    with pytest.raises(ValueError, match="not a model checkpoint"):
        load_checkpoint(path)


def test_spec_validation():
    with pytest.raises(ValueError):
        EncoderSpec("conv", 2, 2)
    with pytest.raises(ValueError):
        EncoderSpec("mlp", 2, 2, 0)
    with pytest.raises(ValueError):
        HeadSpec(1, LossKind.SOFTMAX_CE)
    assert HeadSpec(2, "mse").loss is LossKind.MSE
    with pytest.raises(ValueError, match="task block"):
        linear_model(2, 1, np.zeros(3), [HeadSpec(1, LossKind.MSE)], [np.zeros(5)])


def test_head_forward_uses_given_block():
    m, batch = model_from_case(_random_model(np.random.default_rng(9), "linear", 2, 2, 0, ["mse"], 2))
    z, _ = encode(m, batch.inputs)
    out = head_forward(m, 0, z, np.zeros_like(m.params.task_blocks[0]))
    assert not np.any(out)
