import csv

import numpy as np
import pytest

from rino import autodiff as ad
from rino import rinonet, training
from rino.autodiff import Tensor
from rino.training import ALL_TERMS, LossWeights, ShapeContext, TrainConfig

CFG = TrainConfig(lr=1e-3, steps=4, seed=1, k=12, kq=6, c=4, blocks=1, out_dim=8, mlp_hidden=5, knn=8,
                  gamma=1.0, gamma_q=1.0)


@pytest.fixture(scope="module")
def ctx_pair(tiny_pair):
    return ShapeContext(tiny_pair[0], CFG.knn), ShapeContext(tiny_pair[1], CFG.knn)


@pytest.fixture(scope="module")
def params():
    return rinonet.init_params(CFG.seed, CFG.net_config())


# loss examples -----------------------------------------------------------------------

def test_loss_examples():
    assert training.loss_orth(np.eye(4)) == 0.0
    assert training.loss_orth(2 * np.eye(3)) == pytest.approx(27.0)
    R = np.linalg.qr(np.random.default_rng(0).normal(size=(5, 5)))[0]
    assert training.loss_orth(R) < 1e-28
    U = np.linalg.qr(np.random.default_rng(1).normal(size=(4, 4)) + 1j)[0]
    assert training.loss_orth(U) < 1e-28
    assert training.loss_orth(Tensor(ad.from_complex(U))).item() < 1e-28
    C = np.random.default_rng(2).normal(size=(4, 4))
    assert training.loss_bij(C, np.linalg.inv(C)) < 1e-20
    assert training.loss_diff(np.ones(3), np.zeros(3)) == 3.0


def test_loss_tensor_and_numpy_agree():
    C = np.random.default_rng(3).normal(size=(4, 4))
    D = np.random.default_rng(4).normal(size=(4, 4))
    assert training.loss_orth(Tensor(C)).item() == pytest.approx(training.loss_orth(C), rel=1e-13)
    assert training.loss_bij(Tensor(C), Tensor(D)).item() == pytest.approx(training.loss_bij(C, D), rel=1e-13)


def test_row_normalize():
    F = np.array([[3.0, 4.0], [0.0, 0.0]])
    np.testing.assert_allclose(training.row_normalize(F), [[0.6, 0.8], [0.0, 0.0]])
    np.testing.assert_allclose(training.row_normalize(Tensor(F)).data, training.row_normalize(F))


def test_default_weights():
    w = LossWeights().term_weights()
    assert list(w) == list(ALL_TERMS)
    assert (w["orth_C_XY"], w["orth_Q_XY"], w["bij_XY"], w["pic_XY"], w["piq_XY"], w["contr_X"]) == \
        (1.0, 0.1, 1.0, 1.0, 0.1, 1.0)
    assert w["cq_XY"] == 0
    with pytest.raises(ValueError):
        LossWeights(lambda1=-1.0)


# ablation toggles ---------------------------------------------------------------------

def _terms(ctx_pair, params, weights):
    return training.total_loss(*ctx_pair, params, CFG, weights=weights)


@pytest.mark.parametrize("toggle,removed", [
    ({"struct": False}, {"orth_C_XY", "orth_C_YX", "orth_Q_XY", "orth_Q_YX", "bij_XY", "bij_YX"}),
    ({"couple": False}, {"pic_XY", "pic_YX", "piq_XY", "piq_YX"}),
    ({"contr": False}, {"contr_X", "contr_Y"}),
    ({"qbranch": False}, {"orth_Q_XY", "orth_Q_YX", "piq_XY", "piq_YX"}),
    ({"pi_q": False}, {"piq_XY", "piq_YX"}),
])
def test_each_toggle_removes_exactly_its_terms(ctx_pair, params, toggle, removed):
    full_w = LossWeights()
    total, terms = _terms(ctx_pair, params, full_w)
    w = LossWeights(**toggle)
    t2, terms2 = _terms(ctx_pair, params, w)
    assert set(terms) - set(terms2) == removed
    tw = full_w.term_weights()
    expect = sum(tw[k] * terms[k].item() for k in removed)
    assert abs((total.item() - t2.item()) - expect) <= 1e-12 * max(1.0, total.item())


def test_cq_coupling_adds_its_term(ctx_pair, params):
    total, terms = _terms(ctx_pair, params, LossWeights())
    t2, terms2 = _terms(ctx_pair, params, LossWeights(couple_cq=True))
    assert set(terms2) - set(terms) == {"cq_XY", "cq_YX"}
    assert abs(t2.item() - total.item() - terms2["cq_XY"].item() - terms2["cq_YX"].item()) <= 1e-12 * t2.item()


def test_all_terms_disabled_gives_zero(ctx_pair, params):
    w = LossWeights(struct=False, couple=False, contr=False)
    total, terms = _terms(ctx_pair, params, w)
    assert total.item() == 0.0 and not terms
    loss, _, grads = training.loss_and_grads(*ctx_pair, params, CFG, w)
    assert loss == 0.0 and all(np.all(g == 0) for g in grads.values())


def test_total_loss_gradient(ctx_pair, params):
    def f(x):
        p = params.tensors(False)
        p["block0.W2"] = x
        return training.total_loss(*ctx_pair, params, CFG, tensors=p)[0]

    assert ad.gradient_check(f, params.arrays["block0.W2"], max_coords=10) <= 1e-4


# optimiser and loop ------------------------------------------------------------------

def test_adam_first_step_moves_by_lr():
    p = rinonet.init_params(0, rinonet.NetConfig(c=2, blocks=1, out_dim=2, mlp_hidden=2))
    grads = {k: np.full_like(a, 3.0) for k, a in p.arrays.items()}
    new, st = training.adam_update(p, grads, training.AdamState.zeros_like(p), CFG)
    for k in p.arrays:
        np.testing.assert_allclose(p.arrays[k] - new.arrays[k], CFG.lr, rtol=1e-6)
    assert st.step == 1
    back = training.AdamState.from_arrays(st.to_arrays())
    np.testing.assert_array_equal(back.m["out.W"], st.m["out.W"])


def test_zero_learning_rate_leaves_params(ctx_pair, params):
    cfg = TrainConfig(**{**CFG.__dict__, "lr": 0.0, "steps": 2})
    out, log = training.train_loop([ctx_pair], cfg, params.copy())
    for k in params.arrays:
        np.testing.assert_array_equal(out.arrays[k], params.arrays[k])
    assert log[0][1] == log[1][1]


def test_training_is_deterministic(ctx_pair):
    a, la = training.train_loop([ctx_pair, ctx_pair[::-1]], CFG)
    b, lb = training.train_loop([ctx_pair, ctx_pair[::-1]], CFG)
    np.testing.assert_array_equal(np.array(la), np.array(lb))
    for k in a.arrays:
        np.testing.assert_array_equal(a.arrays[k], b.arrays[k])


def test_resume_reproduces_uninterrupted_run(ctx_pair, tmp_path):
    pairs = [ctx_pair, ctx_pair[::-1]]
    full, lf = training.train_loop(pairs, CFG)
    ck = str(tmp_path / "ck.rinp")
    cfg = TrainConfig(**{**CFG.__dict__, "checkpoint": ck, "checkpoint_every": 1})
    training.train_loop(pairs, cfg, stop_at=2)
    res, lr_ = training.train_loop(pairs, cfg, resume=ck)
    np.testing.assert_array_equal(np.array(lr_), np.array(lf))
    for k in full.arrays:
        np.testing.assert_array_equal(res.arrays[k], full.arrays[k])


def test_loss_csv(ctx_pair, tmp_path):
    path = tmp_path / "loss.csv"
    _, log = training.train_loop([ctx_pair], CFG, log_csv=str(path))
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["step", "term", "value"]
    assert len(rows) == 1 + CFG.steps * (1 + len(ALL_TERMS))
    assert rows[1][:2] == ["1", "total"] and float(rows[1][2]) == log[0][1]


def test_empty_dataset_and_nonfinite(ctx_pair, params):
    with pytest.raises(training.TrainingError, match="empty"):
        training.train_loop([], CFG)
    bad = params.copy()
    bad.arrays["out.W"][0, 0] = np.nan
    with pytest.raises(training.TrainingError, match="non-finite.*ck.rinp"):
        training.train_step(*ctx_pair, bad, training.AdamState.zeros_like(bad), CFG, last_good="ck.rinp")


def test_pair_order_is_a_permutation_per_epoch():
    order = [training.pair_order(5, s, 3) for s in range(15)]
    for e in range(3):
        assert sorted(order[5 * e:5 * e + 5]) == list(range(5))
    assert order == [training.pair_order(5, s, 3) for s in range(15)]


def test_smoothed():
    np.testing.assert_allclose(training.smoothed([1, 2, 3, 4], window=2), [1, 1.5, 2.5, 3.5])


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(tau=0.0)
    with pytest.raises(ValueError):
        TrainConfig(lr=-1.0)
    cfg = training.with_weights(CFG, contr=False)
    assert not cfg.weights.contr and CFG.weights.contr
