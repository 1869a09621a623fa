import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ocvqa import diffcore as dc


def _store(rng, **shapes):
    s = dc.ParamStore()
    for name, shape in shapes.items():
        s.add(name, rng.normal(size=shape))
    return s


# -- forward oracles --------------------------------------------------------

def _matmul_loops(a, b):
    n, k = a.shape
    m = b.shape[1]
    out = [[0.0] * m for _ in range(n)]
    for i in range(n):
        for j in range(m):
            out[i][j] = math.fsum(a[i, p] * b[p, j] for p in range(k))
    return np.array(out)


def _softmax_scalar(row, mask):
    live = [x for x, keep in zip(row, mask) if keep]
    if not live:
        return [0.0] * len(row)
    top = max(live)
    z = math.fsum(math.exp(x - top) for x in live)
    return [math.exp(x - top) / z if keep else 0.0 for x, keep in zip(row, mask)]


def _sig(x):
    return 1.0 / (1.0 + math.exp(-x))


@given(st.integers(1, 5), st.integers(1, 5), st.integers(1, 5), st.integers(0, 2 ** 31))
@settings(max_examples=40, deadline=None)
def test_matmul_matches_loops(n, k, m, seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(n, k)), rng.normal(size=(k, m))
    np.testing.assert_allclose(dc.matmul(a, b).data, _matmul_loops(a, b), rtol=1e-12, atol=1e-12)


def test_matmul_shape_error_names_shapes():
    with pytest.raises(dc.DimensionError, match=r"\(2, 3\).*\(4, 5\)"):
        dc.matmul(np.ones((2, 3)), np.ones((4, 5)))


@given(st.integers(1, 7), st.integers(0, 2 ** 31), st.floats(0.0, 1.0))
@settings(max_examples=60, deadline=None)
def test_softmax_matches_scalar_reference(n, seed, p_mask):
    rng = np.random.default_rng(seed)
    x = rng.normal(scale=5.0, size=(3, n))
    mask = rng.random((3, n)) >= p_mask
    got = dc.softmax(x, axis=-1, mask=mask).data
    for r in range(3):
        np.testing.assert_allclose(got[r], _softmax_scalar(x[r], mask[r]), rtol=1e-12, atol=1e-15)
        if mask[r].any():
            assert abs(got[r].sum() - 1.0) < 1e-9
        assert np.all(got[r][~mask[r]] == 0.0)


def test_softmax_extreme_logits_stay_finite():
    x = np.array([[1e4, -1e4, 0.0], [800.0, 799.0, -800.0]])
    p = dc.softmax(x).data
    assert np.all(np.isfinite(p))
    np.testing.assert_allclose(p.sum(-1), 1.0, atol=1e-12)


def test_masked_softmax_gradient_is_exactly_zero_on_masked_entries():
    x = dc.Tensor(np.random.default_rng(0).normal(size=(4, 5)), requires_grad=True, name="x")
    mask = np.array([[1, 0, 1, 1, 0]] * 4, dtype=bool)
    p = dc.softmax(x, mask=mask)
    g = dc.backward(dc.tsum(p * np.arange(5.0)))["x"]
    assert np.all(g[:, ~mask[0]] == 0.0)


def test_lstm_cell_matches_scalar_recurrence():
    rng = np.random.default_rng(3)
    d_in, d_h = 3, 2
    x, h, c = rng.normal(size=d_in), rng.normal(size=d_h), rng.normal(size=d_h)
    w_x, w_h, b = rng.normal(size=(d_in, 4 * d_h)), rng.normal(size=(d_h, 4 * d_h)), rng.normal(size=4 * d_h)
    h_new, c_new = dc.lstm_cell(x, h, c, w_x, w_h, b)
    for j in range(d_h):
        z = [math.fsum([b[g * d_h + j]] + [x[p] * w_x[p, g * d_h + j] for p in range(d_in)]
                       + [h[p] * w_h[p, g * d_h + j] for p in range(d_h)]) for g in range(4)]
        i, f, o, cand = _sig(z[0]), _sig(z[1]), _sig(z[2]), math.tanh(z[3])
        c_ref = f * c[j] + i * cand
        assert abs(c_new.data[j] - c_ref) < 1e-12
        assert abs(h_new.data[j] - o * math.tanh(c_ref)) < 1e-12


def test_cross_entropy_floor_and_label_errors():
    probs = np.array([[0.0, 1.0], [0.5, 0.5]])
    value = dc.cross_entropy(probs, np.array([0, 1])).data
    assert abs(value - (-math.log(1e-12) - math.log(0.5)) / 2) < 1e-12
    with pytest.raises(ValueError):
        dc.cross_entropy(probs, np.array([0, 2]))


# -- backward ---------------------------------------------------------------

def test_square_derivative():
    x = dc.Tensor(np.array(3.0), requires_grad=True, name="x")
    assert dc.backward(x * x)["x"] == 6.0


def test_constant_expression_has_zero_gradients():
    s = _store(np.random.default_rng(0), w=(2, 2))
    root = dc.tsum(dc.Tensor(np.ones((2, 2))) * 3.0)
    grads = dc.backward(root, s)
    assert np.all(grads["w"] == 0.0)


def test_backward_rejects_non_scalar_root():
    x = dc.Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError):
        dc.backward(x * 2.0)


def test_no_grad_records_nothing():
    x = dc.Tensor(np.ones(3), requires_grad=True)
    with dc.no_grad():
        y = dc.tanh(x) * 2.0
    assert y.parents == () and y.op == "leaf"


def _composite(s):
    h = dc.tanh(s["x"] @ s["w"] + s["b"])
    a = dc.softmax(dc.elu(h) * s["v"], axis=-1, mask=np.array([True, True, False, True]))
    hc, cc = dc.lstm_cell(h, dc.sigmoid(h[:, :2]), h[:, 2:], s["lx"], s["lh"], s["lb"])
    return dc.tsum(a * a) + dc.mean(dc.exp(hc * 0.5)) + dc.tsum(dc.log(dc.sigmoid(cc) + 1.0))


def _composite_store(seed):
    return _store(np.random.default_rng(seed), x=(3, 5), w=(5, 4), b=(4,), v=(4,),
                  lx=(4, 8), lh=(2, 8), lb=(8,))


@given(st.integers(0, 2 ** 31))
@settings(max_examples=25, deadline=None)
def test_linearity_of_backward(seed):
    s = _composite_store(seed)
    other = dc.tsum(s["w"] * s["w"]) + dc.tsum(dc.tanh(s["x"]))
    both = dc.backward(_composite(s) + other, s)
    g1 = dc.backward(_composite(s), s)
    g2 = dc.backward(dc.tsum(s["w"] * s["w"]) + dc.tsum(dc.tanh(s["x"])), s)
    for name in s:
        np.testing.assert_allclose(both[name], g1[name] + g2[name], rtol=0, atol=1e-12)


@given(st.integers(0, 2 ** 31))
@settings(max_examples=10, deadline=None)
def test_composite_expression_passes_gradcheck(seed):
    s = _composite_store(seed)
    report = dc.gradcheck(lambda: _composite(s), s, reference_dtype=np.longdouble)
    assert report.passed, report.summary()


PRIMITIVES = {
    "add": lambda s: dc.tsum((s["a"] + s["b"][0]) * s["a"]),
    "sub": lambda s: dc.tsum((s["a"] - s["b"]) * s["a"]),
    "mul": lambda s: dc.tsum(s["a"] * s["b"] * s["a"]),
    "div": lambda s: dc.tsum(s["a"] / (dc.exp(s["b"]) + 1.0)),
    "neg": lambda s: dc.tsum(-s["a"] * s["b"]),
    "tanh": lambda s: dc.tsum(dc.tanh(s["a"]) * s["b"]),
    "sigmoid": lambda s: dc.tsum(dc.sigmoid(s["a"]) * s["b"]),
    "elu": lambda s: dc.tsum(dc.elu(s["a"]) * s["b"]),
    "exp": lambda s: dc.tsum(dc.exp(s["a"]) * s["b"]),
    "log": lambda s: dc.tsum(dc.log(dc.exp(s["a"]) + 0.5) * s["b"]),
    "matmul": lambda s: dc.tsum(dc.tanh(s["a"] @ dc.transpose(s["b"], (1, 0)))),
    "tsum": lambda s: dc.tsum(dc.tsum(s["a"] * s["b"], axis=0) * dc.tsum(s["a"], axis=0)),
    "seqsum": lambda s: dc.tsum(dc.tanh(dc.seqsum(s["a"] * s["b"], axis=1))),
    "mean": lambda s: dc.tsum(dc.mean(s["a"] * s["b"], axis=1) * dc.mean(s["a"])),
    "reshape": lambda s: dc.tsum(dc.reshape(s["a"], (-1,)) * dc.reshape(s["b"], (-1,))),
    "getitem": lambda s: dc.tsum(s["a"][:, 1:] * s["b"][:, :-1]) + dc.tsum(s["a"][0] * s["a"][0]),
    "concat": lambda s: dc.tsum(dc.tanh(dc.concat([s["a"], s["b"] * s["a"]], axis=0))),
    "stack": lambda s: dc.tsum(dc.tanh(dc.stack([s["a"], s["b"]], axis=1)) * dc.stack([s["b"], s["a"]], axis=1)),
    "where": lambda s: dc.tsum(dc.where(np.array([[True, False, True]]), s["a"], s["b"] * s["a"])),
    "softmax": lambda s: dc.tsum(dc.softmax(s["a"], axis=-1) * s["b"]),
    "embedding": lambda s: dc.tsum(dc.embedding(s["a"], np.array([[0, 1], [1, 1]])) * s["b"][0, 0]),
    "cross_entropy": lambda s: dc.cross_entropy(dc.softmax(s["a"] * s["b"]), np.array([2, 0])),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_passes_gradcheck(name):
    s = _store(np.random.default_rng(7), a=(2, 3), b=(2, 3))
    report = dc.gradcheck(lambda: PRIMITIVES[name](s), s, reference_dtype=np.longdouble)
    assert report.passed, report.summary()


def test_lstm_cell_passes_gradcheck():
    s = _store(np.random.default_rng(1), x=(2, 3, 5), h=(2, 3, 4), c=(2, 3, 4),
               w_x=(5, 16), w_h=(4, 16), b=(16,))

    def loss():
        h, c = dc.lstm_cell(s["x"], s["h"], s["c"], s["w_x"], s["w_h"], s["b"])
        h, c = dc.lstm_cell(s["x"], h, c, s["w_x"], s["w_h"], s["b"])
        return dc.tsum(h * h) + dc.tsum(c * c)

    report = dc.gradcheck(loss, s, reference_dtype=np.longdouble)
    assert report.passed, report.summary()


def test_quadratic_gradcheck_is_tight():
    s = _store(np.random.default_rng(0), w=(3, 3))
    report = dc.gradcheck(lambda: dc.tsum(s["w"] * s["w"]), s)
    assert report.max_rel_error < 1e-10


def test_gradcheck_negative_control(monkeypatch):
    s = _store(np.random.default_rng(2), a=(2, 3), b=(2, 3))
    orig = dc.RULES["sigmoid"]
    monkeypatch.setitem(dc.RULES, "sigmoid", lambda node, g: tuple(x * 1.1 for x in orig(node, g)))
    report = dc.gradcheck(lambda: PRIMITIVES["sigmoid"](s), s)
    assert not report.passed
    assert report.worst_param in ("a", "b")
    assert "FAIL" in report.summary()


def test_gradcheck_rejects_nondeterministic_loss():
    s = _store(np.random.default_rng(0), w=(2,))
    rng = np.random.default_rng(1)
    with pytest.raises(dc.NondeterministicLoss):
        dc.gradcheck(lambda: dc.tsum(s["w"] * rng.normal()), s)


def test_gradcheck_restores_parameters_and_precision():
    s = _store(np.random.default_rng(0), w=(2, 2))
    before = s["w"].data.copy()
    dc.gradcheck(lambda: dc.tsum(dc.tanh(s["w"])), s, reference_dtype=np.longdouble)
    assert s["w"].data.dtype == np.float64
    assert s["w"].data.tobytes() == before.tobytes()
    assert dc.compute_dtype() is np.float64


def test_rel_error_floor():
    assert dc.rel_error(0.0, 0.0) == 0.0
    assert dc.rel_error(0.0, 1e-12) == pytest.approx(1e-4)


def test_forward_backward_bit_identical():
    g1 = dc.backward(_composite(_composite_store(5)), _composite_store(5))
    s = _composite_store(5)
    a = dc.backward(_composite(s), s)
    b = dc.backward(_composite(s), s)
    for name in s:
        assert a[name].tobytes() == b[name].tobytes()
    assert set(g1) == set(a)


# -- optimizer --------------------------------------------------------------

def _adam_scalar(x, grad_fn, lr, steps, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    out = []
    for t in range(1, steps + 1):
        g = grad_fn(x)
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x = x - lr * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
        out.append(x)
    return out


def test_adam_three_steps_on_quadratic():
    s = dc.ParamStore()
    s.add("x", np.array([2.0]))
    traj = []
    for _ in range(3):
        grads = dc.backward(dc.tsum((s["x"] - 0.5) * (s["x"] - 0.5) * 3.0), s)
        dc.adam_step(s, grads, lr=0.1)
        traj.append(float(s["x"].data[0]))
    ref = _adam_scalar(2.0, lambda x: 6.0 * (x - 0.5), 0.1, 3)
    np.testing.assert_allclose(traj, ref, rtol=0, atol=1e-14)
    assert s.step == 3


def test_adam_zero_gradient_leaves_parameters():
    s = _store(np.random.default_rng(0), w=(3,))
    before = s["w"].data.copy()
    dc.adam_step(s, {"w": np.zeros(3)}, lr=0.1)
    assert np.array_equal(s["w"].data, before)


@given(st.floats(1e-6, 1e6), st.integers(0, 2 ** 31))
@settings(max_examples=30, deadline=None)
def test_adam_first_step_magnitude_is_lr(scale, seed):
    s = _store(np.random.default_rng(seed), w=(4,))
    before = s["w"].data.copy()
    g = np.random.default_rng(seed + 1).choice([-1.0, 1.0], size=4) * scale
    dc.adam_step(s, {"w": g}, lr=1e-3, eps=0.0)
    np.testing.assert_allclose(np.abs(s["w"].data - before), 1e-3, rtol=1e-9)


def test_adam_shape_mismatch():
    s = _store(np.random.default_rng(0), w=(3,))
    with pytest.raises(dc.DimensionError):
        dc.adam_step(s, {"w": np.zeros(4)}, lr=0.1)


def test_fan_in_initialization_bounds():
    s = dc.ParamStore()
    w = s.weight("w", np.random.default_rng(0), 16, (16, 50))
    b = s.bias("b", (50,))
    assert np.abs(w.data).max() <= 0.25
    assert np.all(b.data == 0.0)
    with pytest.raises(KeyError):
        s.add("w", np.zeros(1))


# -- checkpoints ------------------------------------------------------------

@given(st.lists(st.lists(st.integers(0, 4), min_size=0, max_size=3), min_size=1, max_size=5),
       st.integers(0, 2 ** 31))
@settings(max_examples=100, deadline=None)
def test_checkpoint_round_trip_is_byte_exact(shapes, seed):
    rng = np.random.default_rng(seed)
    arrays = {f"group/a{i}": rng.normal(size=tuple(sh)) * 10.0 ** rng.integers(-300, 300)
              for i, sh in enumerate(shapes)}
    arrays["special"] = np.array([np.inf, -0.0, 5e-324, np.nan])
    raw = dc.checkpoint.dumps(arrays, {"epoch": "3", "note": "x y"})
    back, meta = dc.checkpoint.loads(raw)
    assert meta == {"epoch": "3", "note": "x y"}
    assert list(back) == list(arrays)
    for name, a in arrays.items():
        assert back[name].shape == a.shape
        assert back[name].astype("<f8").tobytes() == a.astype("<f8").tobytes()
    assert dc.checkpoint.dumps(back, meta) == raw


def test_checkpoint_layout_is_manifest_then_little_endian_floats(tmp_path):
    arrays = {"a": np.arange(6.0).reshape(2, 3), "b": np.array([1.5])}
    path = tmp_path / "x.ckpt"
    dc.checkpoint.save(path, arrays)
    raw = path.read_bytes()
    head, payload = raw.split(b"\nend\n", 1)
    lines = head.decode().splitlines()
    assert lines[0].startswith("ocvqa-checkpoint")
    entries = [ln.split() for ln in lines if ln.startswith("array ")]
    assert [e[1] for e in entries] == ["a", "b"]
    assert np.array_equal(np.frombuffer(payload, dtype="<f8"), np.r_[np.arange(6.0), 1.5])
    loaded, _ = dc.checkpoint.load(path)
    assert np.array_equal(loaded["a"], arrays["a"])


def test_checkpoint_rejects_corruption():
    raw = dc.checkpoint.dumps({"a": np.ones(4)})
    with pytest.raises(dc.checkpoint.CheckpointError):
        dc.checkpoint.loads(raw[:-8])
    with pytest.raises(dc.checkpoint.CheckpointError):
        dc.checkpoint.loads(b"garbage\n" + raw)
