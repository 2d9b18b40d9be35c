import subprocess
import sys

import numpy as np
import pytest

from subvp.errors import ParseError, ShapeError
from subvp.nn import checkpoint, kernels
from subvp.nn import layers as L
from subvp.nn.optim import AdamState, adam_step

EPS = 1e-6


def numeric_grad(f, x):
    """Central differences of the scalar ``f()`` with respect to ``x`` (perturbed in place)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + EPS
        a = f()
        x[i] = old - EPS
        b = f()
        x[i] = old
        g[i] = (a - b) / (2 * EPS)
    return g


def rel_err(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)


def check(forward, backward, inputs, rng):
    """Project the output on a random tensor and compare analytic and numeric gradients."""
    out, cache = forward(*inputs)
    proj = rng.standard_normal(np.shape(out))
    analytic = backward(proj, cache)
    if isinstance(analytic, np.ndarray):
        analytic = (analytic,)
    loss = lambda: float(np.sum(forward(*inputs)[0] * proj))
    for x, g in zip(inputs, analytic):
        assert rel_err(numeric_grad(loss, x), g) < 1e-4


@pytest.mark.parametrize("seed", range(10))
def test_dense_gradient(seed):
    rng = np.random.default_rng(seed)
    check(L.dense_forward, L.dense_backward,
          [rng.standard_normal((3, 4)), rng.standard_normal((4, 5)), rng.standard_normal(5)], rng)


@pytest.mark.parametrize("seed", range(10))
def test_activation_gradients(seed):
    rng = np.random.default_rng(seed)
    check(L.tanh_forward, L.tanh_backward, [rng.standard_normal((4, 6))], rng)
    x = rng.standard_normal((4, 6))
    x[np.abs(x) < 1e-3] = 0.5  # keep away from the kink
    check(L.relu_forward, L.relu_backward, [x], rng)


@pytest.mark.parametrize("seed", range(10))
def test_conv2d_gradient(seed):
    rng = np.random.default_rng(seed)
    check(L.conv2d_forward, L.conv2d_backward,
          [rng.standard_normal((2, 3, 4, 6)), rng.standard_normal((2, 3, 3, 3)), rng.standard_normal(2)], rng)


@pytest.mark.parametrize("seed", range(10))
def test_maxpool_gradient(seed):
    rng = np.random.default_rng(seed)
    x = rng.permutation(96).reshape(2, 3, 4, 4) * 0.1  # distinct values, no ties
    check(L.maxpool2_forward, L.maxpool2_backward, [x.astype(float)], rng)


@pytest.mark.parametrize("seed", range(10))
def test_lstm_cell_gradient(seed):
    rng = np.random.default_rng(seed)
    H, D = 3, 4
    args = [rng.standard_normal((2, D)), rng.standard_normal((2, H)), rng.standard_normal((2, H)),
            0.5 * rng.standard_normal((D, 4 * H)), 0.5 * rng.standard_normal((H, 4 * H)), rng.standard_normal(4 * H)]
    ph, pc = rng.standard_normal((2, 2, H))

    def loss():
        h, c, _ = L.lstm_cell_forward(*args)
        return float(np.sum(h * ph) + np.sum(c * pc))

    _, _, cache = L.lstm_cell_forward(*args)
    dx, dh, dc, dWx, dWh, db = L.lstm_cell_backward(ph, pc, cache)
    for x, g in zip(args, (dx, dh, dc, dWx, dWh, db)):
        assert rel_err(numeric_grad(loss, x), g) < 1e-4


@pytest.mark.parametrize("seed", range(10))
def test_lstm_sequence_gradient(seed):
    rng = np.random.default_rng(seed)
    B, T, D, H = 2, 4, 3, 3
    args = [rng.standard_normal((B, T, D)), rng.standard_normal((B, H)), rng.standard_normal((B, H)),
            0.5 * rng.standard_normal((D, 4 * H)), 0.5 * rng.standard_normal((H, 4 * H)), rng.standard_normal(4 * H)]
    phs, ph, pc = rng.standard_normal((B, T, H)), rng.standard_normal((B, H)), rng.standard_normal((B, H))

    def loss():
        hs, h, c, _ = L.lstm_forward(*args)
        return float(np.sum(hs * phs) + np.sum(h * ph) + np.sum(c * pc))

    _, _, _, caches = L.lstm_forward(*args)
    grads = L.lstm_backward(phs, ph, pc, caches)
    for x, g in zip(args, grads):
        assert rel_err(numeric_grad(loss, x), g) < 1e-4


@pytest.mark.parametrize("seed", range(10))
def test_embedding_gradient(seed):
    rng = np.random.default_rng(seed)
    ids = rng.integers(0, 5, (3, 4))  # repeated ids exercise accumulation
    E = rng.standard_normal((5, 3))
    proj = rng.standard_normal((3, 4, 3))
    out, cache = L.embedding_forward(ids, E)
    assert np.array_equal(out[1, 2], E[ids[1, 2]])
    g = L.embedding_backward(proj, cache)
    assert rel_err(numeric_grad(lambda: float(np.sum(L.embedding_forward(ids, E)[0] * proj)), E), g) < 1e-4


@pytest.mark.parametrize("seed", range(10))
def test_mse_gradient(seed):
    rng = np.random.default_rng(seed)
    p, t = rng.standard_normal((2, 3, 4))
    loss, g = L.mse_loss(p, t)
    assert loss == pytest.approx(np.mean((p - t) ** 2), rel=1e-12)
    assert rel_err(numeric_grad(lambda: L.mse_loss(p, t)[0], p), g) < 1e-4


def test_shape_errors():
    with pytest.raises(ShapeError):
        L.dense_forward(np.zeros((2, 3)), np.zeros((4, 5)), np.zeros(5))
    with pytest.raises(ShapeError):
        L.conv2d_forward(np.zeros((1, 2, 4, 4)), np.zeros((3, 1, 3, 3)), np.zeros(3))
    with pytest.raises(ShapeError):
        L.maxpool2_forward(np.zeros((1, 1, 3, 4)))
    with pytest.raises(ShapeError):
        L.mse_loss(np.zeros(3), np.zeros(4))


def conv_oracle(x, w, b):
    N, C, H, W = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    out = np.zeros((N, w.shape[0], H, W))
    for i in range(H):
        for j in range(W):
            out[:, :, i, j] = np.einsum("ncij,fcij->nf", xp[:, :, i:i + 3, j:j + 3], w) + b
    return out


def test_conv_matches_direct_oracle():
    rng = np.random.default_rng(0)
    x, w, b = rng.standard_normal((2, 3, 5, 8)), rng.standard_normal((4, 3, 3, 3)), rng.standard_normal(4)
    ref = conv_oracle(x, w, b)
    assert np.max(np.abs(kernels.conv3x3_forward_numpy(x, w, b) - ref)) < 1e-12
    assert np.max(np.abs(kernels.conv3x3_forward_loops(x, w, b) - ref)) < 1e-12


@pytest.mark.parametrize("dtype, tol", [(np.float64, 1e-12), (np.float32, 1e-5)])
def test_loop_and_numpy_kernels_agree(dtype, tol):
    rng = np.random.default_rng(1)
    x = rng.standard_normal((3, 2, 6, 8)).astype(dtype)
    w = rng.standard_normal((4, 2, 3, 3)).astype(dtype)
    b = rng.standard_normal(4).astype(dtype)
    dy = rng.standard_normal((3, 4, 6, 8)).astype(dtype)
    assert np.max(np.abs(kernels.conv3x3_forward_loops(x, w, b) - kernels.conv3x3_forward_numpy(x, w, b))) < tol
    for a, c in zip(kernels.conv3x3_backward_loops(dy, x, w), kernels.conv3x3_backward_numpy(dy, x, w)):
        assert a.dtype == dtype
        assert np.max(np.abs(a - c)) < tol * 10
    o1, a1 = kernels.maxpool2_forward_loops(x)
    o2, a2 = kernels.maxpool2_forward_numpy(x)
    assert np.array_equal(o1, o2) and np.array_equal(a1, a2)
    d = rng.standard_normal(o1.shape).astype(dtype)
    assert np.array_equal(kernels.maxpool2_backward_loops(d, a1), kernels.maxpool2_backward_numpy(d, a2))


def test_maxpool_tie_takes_first():
    x = np.ones((1, 1, 2, 2))
    out, arg = L.maxpool2_forward(x)
    assert out[0, 0, 0, 0] == 1.0
    assert L.maxpool2_backward(np.ones((1, 1, 1, 1)), arg)[0, 0].tolist() == [[1.0, 0.0], [0.0, 0.0]]


def test_numba_can_be_disabled_by_env():
    code = "import subvp; print(subvp.backend())"
    env = {"SUBVP_DISABLE_NUMBA": "1", "PATH": ""}
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"


def test_adam_first_step_moves_by_lr():
    params = {"w": np.array([1.0, -2.0, 3.0])}
    grads = {"w": np.array([0.5, -10.0, 1e-3])}
    state = AdamState(lr=0.001)
    adam_step(params, grads, state)
    # bias-corrected first step is lr * g / |g| up to eps
    assert np.allclose(params["w"], [1.0 - 0.001, -2.0 + 0.001, 3.0 - 0.001], atol=1e-8)
    assert state.k == 1


def test_adam_weight_decay_shrinks_matrices_only():
    params = {"W": np.full((2, 2), 2.0), "b": np.full(2, 2.0)}
    zero = {k: np.zeros_like(v) for k, v in params.items()}
    adam_step(params, zero, AdamState(lr=0.1, weight_decay=0.5))
    assert np.allclose(params["W"], 2.0 * (1 - 0.1 * 0.5), atol=1e-15)
    assert np.array_equal(params["b"], np.full(2, 2.0))


def test_adam_minimizes_quadratic():
    params = {"w": np.array([3.0, -4.0])}
    state = AdamState(lr=0.05)
    for _ in range(2000):
        adam_step(params, {"w": 2 * params["w"]}, state)
    assert np.max(np.abs(params["w"])) < 1e-3


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    params = {"b.w": rng.standard_normal((3, 4)).astype(np.float32), "a": rng.standard_normal(5).astype(np.float32)}
    config = {"hidden": 64, "variant": "full"}
    path = tmp_path / "m.vspm"
    checkpoint.save(path, params, config)
    back, cfg = checkpoint.load(path)
    assert cfg == config
    assert list(back) == ["b.w", "a"]
    for k in params:
        assert np.array_equal(back[k], params[k])
    assert path.read_bytes()[:4] == b"VSPM"


@pytest.mark.parametrize("mangle", [
    lambda d: b"XXXX" + d[4:],
    lambda d: d[:8],
    lambda d: d[:4] + (7).to_bytes(4, "little") + d[8:],
    lambda d: d[:-3],
    lambda d: d + b"\0\0\0\0",
])
def test_checkpoint_corruption_is_parse_error(mangle):
    data = checkpoint.dumps({"w": np.ones((2, 2), np.float32)}, {})
    with pytest.raises(ParseError):
        checkpoint.loads(mangle(data))
