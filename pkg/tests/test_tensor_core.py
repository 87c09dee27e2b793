import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from mm2ct.tensor_core import (
    F, CheckpointError, Conv2d, Linear, Module, Parameter, Tensor, backward, grad, grad_check,
    no_grad, precision, read_tensor, reset_graph, write_tensor,
)
from mm2ct.tensor_core import checkpoint


def rand(rng, *shape, scale=1.0):
    return Tensor(rng.standard_normal(shape) * scale)


def test_add_mul_grad_by_hand():
    a, b = Tensor(np.array([1.0, 2.0, 3.0])), Tensor(np.array([4.0, 5.0, 6.0]))
    a.requires_grad = b.requires_grad = True
    backward(F.sum(a * b + a))
    np.testing.assert_allclose(a.grad, [5.0, 6.0, 7.0])
    np.testing.assert_allclose(b.grad, [1.0, 2.0, 3.0])


def test_broadcast_grad_sums_over_expanded_axes():
    a = Tensor(np.ones((3, 4)))
    b = Tensor(np.ones((4,)))
    a.requires_grad = b.requires_grad = True
    backward(F.sum(a * b))
    np.testing.assert_allclose(b.grad, np.full(4, 3.0))


def test_reused_node_accumulates():
    x = Tensor(np.array([2.0]))
    x.requires_grad = True
    backward(F.sum(x * x * x))
    np.testing.assert_allclose(x.grad, [12.0])


def test_no_grad_records_nothing():
    x = Tensor(np.ones(3))
    x.requires_grad = True
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad


def test_tape_cleared_unless_retained():
    x = Tensor(np.ones(3))
    x.requires_grad = True
    y = F.sum(x * 3.0)
    backward(y, retain_graph=True)
    backward(y)
    np.testing.assert_allclose(x.grad, np.full(3, 6.0))
    backward(y)  # tape gone: nothing more accumulates
    np.testing.assert_allclose(x.grad, np.full(3, 6.0))


@pytest.mark.parametrize("name,fn", [
    ("exp", F.exp), ("tanh", F.tanh), ("sigmoid", F.sigmoid), ("silu", F.silu),
    ("softplus", F.softplus), ("softmax", lambda a: F.softmax(a, axis=-1)),
    ("layer_norm_like", lambda a: F.instance_norm(F.reshape(a, (1, 1, 3, 4)))),
])
def test_unary_gradients(name, fn):
    rng = np.random.default_rng(1)
    x = rand(rng, 3, 4)
    with precision(np.float64):
        x = Tensor(x.data.astype(np.float64))
        R = Tensor(rng.standard_normal((3, 4)) if name != "layer_norm_like" else rng.standard_normal((1, 1, 3, 4)))
        err = grad_check(lambda: F.sum(fn(x) * R), x, h=1e-6)
    assert err < 1e-6, name


@pytest.mark.parametrize("stride,pad", [(1, 1), (2, 1), (1, 0), (2, 0)])
def test_conv2d_grad(stride, pad):
    rng = np.random.default_rng(2)
    with precision(np.float64):
        x = Tensor(rng.standard_normal((2, 3, 7, 6)))
        w = Tensor(rng.standard_normal((4, 3, 3, 3)))
        b = Tensor(rng.standard_normal(4))
        R = Tensor(rng.standard_normal(F.conv2d(x, w, b, stride, pad).shape))
        err = grad_check(lambda: F.sum(F.conv2d(x, w, b, stride, pad) * R), [x, w, b], h=1e-6)
    assert err < 1e-6


def test_conv2d_matches_direct_loop():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((1, 2, 5, 5))
    w = rng.standard_normal((3, 2, 3, 3))
    with precision(np.float64):
        out = F.conv2d(Tensor(x), Tensor(w), pad=1).data
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    ref = np.zeros((1, 3, 5, 5))
    for o in range(3):
        for i in range(5):
            for j in range(5):
                ref[0, o, i, j] = np.sum(xp[0, :, i:i + 3, j:j + 3] * w[o])
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_kink_skipping_reports_skips():
    # relu at points straddling 0: every probe crosses the kink for tiny |x| < h
    x = Tensor(np.array([1e-4, -1e-4, 0.5, -0.5]))
    stats = {}
    err = grad_check(lambda: F.sum(F.relu(x)), x, h=1e-3, stats=stats)
    assert stats["skipped"] == 2 and stats["probed"] == 2
    assert err < 1e-3


def test_grad_helper_returns_without_touching_grad():
    x = Tensor(np.array([3.0]))
    x.requires_grad = True
    (g,) = grad(F.sum(x * x), [x])
    np.testing.assert_allclose(g, [6.0])


class Tiny(Module):
    def __init__(self, rng):
        self.conv = Conv2d(rng, 1, 2, 3)
        self.head = Linear(rng, 2, 1)
        self.blocks = [Linear(rng, 2, 2), Linear(rng, 2, 2)]


def test_named_parameters_are_unique_and_ordered():
    names = [n for n, _ in Tiny(np.random.default_rng(0)).named_parameters()]
    assert len(names) == len(set(names))
    assert "blocks.1.weight" in names


def test_state_dict_round_trip():
    a, b = Tiny(np.random.default_rng(0)), Tiny(np.random.default_rng(1))
    b.load_state_dict(a.state_dict())
    for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
        assert na == nb and np.array_equal(pa.data, pb.data)


def test_load_state_dict_strict_rejects_missing():
    m = Tiny(np.random.default_rng(0))
    sd = m.state_dict()
    sd.pop("head.bias")
    with pytest.raises(KeyError):
        m.load_state_dict(sd)


# ---------------------------------------------------------------- tensor files
# raw bit patterns, so NaN payloads, subnormals and -0.0 all appear
any_f32 = hnp.arrays(np.uint32, hnp.array_shapes(min_dims=1, max_dims=4, max_side=5)).map(
    lambda a: a.view(np.float32))


@settings(max_examples=60, deadline=None)
@given(any_f32)
def test_tensor_file_round_trip_bit_exact(tmp_path_factory, arr):
    path = tmp_path_factory.mktemp("t") / "x.ten"
    write_tensor(path, arr)
    back = read_tensor(path)
    assert back.dtype == np.float32 and back.shape == arr.shape
    assert back.tobytes() == arr.tobytes()


def test_special_floats_survive(tmp_path):
    arr = np.array([np.nan, np.inf, -np.inf, -0.0, 1e-45], dtype=np.float32)
    write_tensor(tmp_path / "s.ten", arr)
    assert read_tensor(tmp_path / "s.ten").tobytes() == arr.tobytes()


def test_checkpoint_meta_and_arrays(tmp_path):
    arrays = {"gen.w": np.arange(6, dtype=np.float32).reshape(2, 3), "dis.b": np.ones(1, np.float32)}
    checkpoint.save(tmp_path / "c.ckpt", arrays, {"config_fingerprint": "abc", "note": "x;y"})
    back, meta = checkpoint.load(tmp_path / "c.ckpt")
    assert meta == {"config_fingerprint": "abc", "note": "x;y"}
    assert set(back) == set(arrays)
    for k in arrays:
        assert back[k].tobytes() == arrays[k].tobytes()


def test_encode_is_deterministic():
    arrays = {"b": np.ones(2, np.float32), "a": np.zeros(3, np.float32)}
    assert checkpoint.encode(arrays) == checkpoint.encode(dict(reversed(list(arrays.items()))))


@pytest.mark.parametrize("mutate", [
    lambda b: b"XXXX" + b[4:],
    lambda b: b[:-3],
    lambda b: b[:4] + (99).to_bytes(4, "little") + b[8:],
    lambda b: b + b"\x00",
])
def test_corrupt_files_rejected(mutate):
    buf = checkpoint.encode({"w": np.ones((2, 2), np.float32)})
    with pytest.raises(CheckpointError):
        checkpoint.decode(mutate(buf))


def test_header_layout():
    buf = checkpoint.encode({"w": np.ones((2, 3), np.float32)})
    assert buf[:4] == b"MM2T"
    assert int.from_bytes(buf[4:8], "little") == 1
    assert int.from_bytes(buf[8:12], "little") == 1
    assert int.from_bytes(buf[12:14], "little") == 1 and buf[14:15] == b"w"
    assert buf[15] == 2
    assert len(buf) == 12 + 2 + 1 + 1 + 8 + 6 * 4
