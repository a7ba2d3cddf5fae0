import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rino import autodiff as ad
from rino import binfmt, rinonet
from rino.autodiff import Tensor
from rino.rinonet import NetConfig

from conftest import quiet_prepare, random_rotation, rel

SMALL = NetConfig(c=6, blocks=2, out_dim=8, mlp_hidden=7, knn=8)


@pytest.fixture(scope="module")
def small_params():
    return rinonet.init_params(3, SMALL)


def test_default_parameter_count():
    assert rinonet.count_params() == 328_570
    assert rinonet.init_params(0).count() == 328_570
    assert abs(328_570 / 327_714 - 1) < 0.01


def test_param_shapes_follow_config():
    s = rinonet.param_shapes(NetConfig(c=5, blocks=3, out_dim=11, mlp_hidden=9))
    assert s["block2.W1"] == (9, 15)
    assert s["out.W"] == (11, 15)
    assert "block3.theta" not in s
    with pytest.raises(ValueError):
        NetConfig(c=0)


def test_init_is_deterministic_and_seed_sensitive():
    a, b = rinonet.init_params(5, SMALL), rinonet.init_params(5, SMALL)
    for k in a.arrays:
        np.testing.assert_array_equal(a.arrays[k], b.arrays[k])
    c = rinonet.init_params(6, SMALL)
    assert not np.array_equal(a.arrays["out.W"], c.arrays["out.W"])
    np.testing.assert_allclose(a.diffusion_times(0), rinonet.reference_diffusion_time())


def test_save_load_roundtrip_and_corruption(tmp_path, small_params):
    path = tmp_path / "p.rinp"
    data = rinonet.save_params(path, small_params, {"opt.step": np.array(7.0)})
    back, extra = rinonet.load_params(path, with_extra=True)
    assert back.config == small_params.config and back.seed == small_params.seed
    for k in small_params.arrays:
        np.testing.assert_array_equal(back.arrays[k], small_params.arrays[k])
    assert float(extra["opt.step"]) == 7.0
    assert rinonet.save_params(tmp_path / "q.rinp", back, {"opt.step": np.array(7.0)}) == data
    raw = bytearray(data)
    raw[-20] ^= 1
    path.write_bytes(bytes(raw))
    with pytest.raises(binfmt.ChecksumError):
        rinonet.load_params(path)


# layer equivariance --------------------------------------------------------------------

@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_vn_linear_and_relu_are_equivariant(seed):
    rng = np.random.default_rng(seed)
    R = random_rotation(rng)
    u = rng.normal(size=(7, 5, 3))
    W, K = Tensor(rng.normal(size=(4, 5))), Tensor(rng.normal(size=(5, 5)))
    assert rel(rinonet.vn_linear(Tensor(u @ R), W).data, rinonet.vn_linear(Tensor(u), W).data @ R) < 1e-12
    assert rel(rinonet.vn_relu(Tensor(u @ R), K).data, rinonet.vn_relu(Tensor(u), K).data @ R) < 1e-12


def test_vn_relu_examples():
    K = Tensor(np.eye(1))
    u = Tensor(np.array([[[1.0, 2.0, 3.0]]]))
    # k = u so <u, k> > 0 and the vector passes through
    np.testing.assert_array_equal(rinonet.vn_relu(u, K).data, u.data)
    out = rinonet.vn_relu(u, Tensor(-np.eye(1))).data
    # k = -u: the whole vector lies along k and is removed
    np.testing.assert_allclose(out, 0.0, atol=1e-15)


def test_gradient_invariant_examples():
    w = np.array([[[1 + 1j, 0, 2j]]])
    A = np.eye(1)
    s = rinonet.gradient_invariant(Tensor(w.real), Tensor(w.imag), Tensor((A @ w[0]).real[None]),
                              Tensor((A @ w[0]).imag[None]))
    np.testing.assert_allclose(s.data, [[np.sum(np.abs(w) ** 2)]])


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 31 - 1))
def test_edgeconv_and_invariant_layer(seed):
    rng = np.random.default_rng(seed)
    R = random_rotation(rng)
    v = rng.normal(size=(30, 3))
    nb = rinonet.knn_graph(v, 6)
    p = rinonet.init_params(seed % 100, SMALL).tensors(False)
    a = rinonet.vn_edgeconv(v, nb, p["edge.W"], p["edge.K"]).data
    b = rinonet.vn_edgeconv(v @ R, nb, p["edge.W"], p["edge.K"]).data
    assert rel(b, a @ R) < 1e-12
    ia = rinonet.vn_invariant(Tensor(a), p["inv.W1"], p["inv.K1"], p["inv.W2"]).data
    ib = rinonet.vn_invariant(Tensor(b), p["inv.W1"], p["inv.K1"], p["inv.W2"]).data
    assert rel(ib, ia) < 1e-12


def test_edgeconv_needs_neighbours():
    with pytest.raises(ValueError):
        rinonet.vn_edgeconv(np.zeros((3, 3)), np.zeros((3, 0), dtype=int), np.ones((2, 2)), np.ones((2, 2)))


def test_vn_gradient_is_invariant_under_frame_phase(blob_shape):
    # a per-vertex change of tangent frame multiplies each gradient row by a unit phase
    rng = np.random.default_rng(0)
    h = rng.normal(size=(blob_shape.n, 4, 3))
    A = Tensor(rng.normal(size=(4, 4, 2)))
    G = blob_shape.ops.grad
    ph = np.exp(1j * rng.uniform(0, 2 * np.pi, blob_shape.n))
    g0, _ = rinonet.vn_gradient(Tensor(h), G, A)
    g1, _ = rinonet.vn_gradient(Tensor(h), G.multiply(ph[:, None]).tocsr(), A)
    assert rel(g1.data, g0.data) < 1e-12


def test_block_is_equivariant(blob_shape, small_params):
    rng = np.random.default_rng(1)
    R = random_rotation(rng)
    u = rng.normal(size=(blob_shape.n, SMALL.c, 3))
    p = small_params.tensors(False)
    G = rinonet.complex_grad_parts(blob_shape.ops.grad)
    a = rinonet.rino_block(Tensor(u), blob_shape.basis, G, p, "block0.").data
    b = rinonet.rino_block(Tensor(u @ R), blob_shape.basis, G, p, "block0.").data
    assert rel(b, a @ R) < 1e-12


# whole network ---------------------------------------------------------------------------

def test_network_is_rotation_invariant(blob_mesh, blob_shape, small_params):
    F = rinonet.features(blob_shape, small_params)
    assert F.shape == (blob_shape.n, SMALL.out_dim)
    for s in range(2):
        R = random_rotation(np.random.default_rng(10 + s))
        FR = rinonet.features(quiet_prepare(blob_mesh.rotated(R), 40, 12), small_params)
        assert rel(FR, F) < 1e-8


def test_network_is_permutation_equivariant(blob_mesh, blob_shape, small_params):
    perm = np.random.default_rng(2).permutation(blob_mesh.n_vertices)
    F = rinonet.features(blob_shape, small_params)
    Fp = rinonet.features(quiet_prepare(blob_mesh.permuted(perm), 40, 12), small_params)
    assert rel(Fp, F[perm]) < 1e-8


def test_forward_is_deterministic(blob_shape, small_params):
    np.testing.assert_array_equal(rinonet.features(blob_shape, small_params),
                                  rinonet.features(blob_shape, small_params))


def test_end_to_end_gradient_check(tiny_pair, small_params):
    sh = tiny_pair[0]
    nb = rinonet.shape_neighbors(sh, SMALL.knn)
    W = np.random.default_rng(0).normal(size=(sh.n, SMALL.out_dim))
    for name in ("block1.A", "block0.theta", "edge.W", "inv.W1"):
        def f(x, name=name):
            p = small_params.tensors(False)
            p[name] = x
            return ad.sum(ad.mul(rinonet.rinonet_forward(sh, small_params, p, nb), Tensor(W)))

        # h=1e-5: at 1e-6 the central difference is round-off limited for this network
        assert ad.gradient_check(f, small_params.arrays[name], h=1e-5, max_coords=24) <= 1e-5, name


def test_mutated_invariant_breaks_rotation_invariance(blob_shape):
    def bad(wr, wi, awr, awi):
        # depends on the raw first axis, so not rotation invariant
        return ad.add(rinonet.gradient_invariant(wr, wi, awr, awi), ad.getitem(wr, (slice(None), slice(None), 0)))

    from rino.selfcheck import check_gradient_invariant
    assert check_gradient_invariant(bad, n_rot=5) > 1e-3
    assert check_gradient_invariant(n_rot=5) < 1e-12
