import io

import numpy as np
import pytest

from stripeclean.errors import CheckpointError, ContractError, DimensionError
from stripeclean.tensor import Tensor, dumps_tensor, loads_tensor, no_grad, read_tensor, write_tensor

from helpers import f64


def test_linear_map_gradient_is_exact(rng):
    x = rng.standard_normal((3, 4))
    w = Tensor(rng.standard_normal((3, 4)), requires_grad=True)
    (w * Tensor(x)).sum().backward()
    np.testing.assert_array_equal(w.grad, x)


def test_two_backward_calls_double_gradients(rng):
    w = f64(rng, 2, 3)
    x = Tensor(rng.standard_normal((2, 3)))
    loss = (w * w * x).sum()
    loss.backward()
    first = w.grad.copy()
    loss.backward()
    np.testing.assert_array_equal(w.grad, 2 * first)


def test_non_scalar_backward_rejected(rng):
    w = f64(rng, 2, 2)
    with pytest.raises(ContractError):
        (w * 2.0).backward()


def test_backward_requires_grad():
    with pytest.raises(ContractError):
        Tensor(np.ones(1)).sum().backward()


def test_shared_subexpression_accumulates(rng):
    # y = a*a + a  => dy/da = 2a + 1
    a = f64(rng, 5)
    ((a * a) + a).sum().backward()
    np.testing.assert_allclose(a.grad, 2 * a.data + 1, rtol=0, atol=1e-15)


def test_broadcast_hadamard_matches_replication(rng):
    x = rng.standard_normal((2, 3, 4, 5))
    w = rng.standard_normal((2, 3, 1, 5))
    got = (Tensor(x) * Tensor(w)).data
    np.testing.assert_array_equal(got, x * np.repeat(w, 4, axis=2))


def test_broadcast_gradient_sums_over_singleton_axis(rng):
    x = Tensor(rng.standard_normal((2, 3, 4, 5)))
    w = Tensor(rng.standard_normal((2, 3, 1, 5)), requires_grad=True)
    (x * w).sum().backward()
    np.testing.assert_allclose(w.grad, x.data.sum(axis=2, keepdims=True), atol=1e-12)


def test_hadamard_with_ones_is_identity(rng):
    x = rng.standard_normal((2, 3))
    np.testing.assert_array_equal((Tensor(x) * Tensor(np.ones((2, 3)))).data, x)


def test_non_broadcastable_names_axis():
    with pytest.raises(DimensionError, match="axis"):
        Tensor(np.ones((2, 3))) + Tensor(np.ones((2, 4)))


def test_scalar_constants_keep_float32():
    x = Tensor(np.ones((2, 2), dtype=np.float32), requires_grad=True)
    y = (x * 0.5 + 1.0 - 2.0) / 3.0
    assert y.dtype == np.float32
    y.sum().backward()
    assert x.grad.dtype == np.float32


def test_no_grad_records_nothing(rng):
    w = f64(rng, 3)
    with no_grad():
        y = (w * w).sum()
    assert not y.requires_grad


def test_integer_input_promoted_to_float():
    assert Tensor(np.arange(3)).dtype == np.float64


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
@pytest.mark.parametrize("shape", [(1,), (3, 4), (2, 3, 4, 5)])
def test_tnsr_round_trip_is_bitwise(rng, dtype, shape):
    arr = rng.standard_normal(shape).astype(dtype)
    back = loads_tensor(dumps_tensor(arr))
    assert back.dtype == dtype and back.shape == shape
    assert back.tobytes() == arr.tobytes()


def test_tnsr_header_format():
    blob = dumps_tensor(np.zeros((2, 3), dtype=np.float32))
    header, payload = blob.split(b"\n", 1)
    assert header == b"TNSR v1 dtype=f32 shape=2,3"
    assert len(payload) == 2 * 3 * 4


def test_tnsr_is_little_endian():
    blob = dumps_tensor(np.array([1.0], dtype=np.float64))
    assert blob.split(b"\n", 1)[1] == np.array([1.0], dtype="<f8").tobytes()


def test_tnsr_truncated_payload_rejected():
    blob = dumps_tensor(np.ones((4, 4), dtype=np.float32))
    with pytest.raises(CheckpointError, match="truncated"):
        read_tensor(io.BytesIO(blob[:-3]))


def test_tnsr_bad_header_rejected():
    with pytest.raises(CheckpointError):
        read_tensor(io.BytesIO(b"NOPE v1 dtype=f32 shape=1\n\0\0\0\0"))


def test_tnsr_stream_of_several_blocks(rng):
    f = io.BytesIO()
    arrs = [rng.standard_normal((2, 2)).astype(np.float32), rng.standard_normal(5)]
    for a in arrs:
        write_tensor(f, a)
    f.seek(0)
    for a in arrs:
        assert read_tensor(f).tobytes() == a.tobytes()
