import math

import numpy as np
import pytest

from tkan.data import ClassDistribution, make_windows, synth_clusters
from tkan.errors import (
    ClassWeightError,
    ConfigError,
    DivergenceError,
    LabelError,
    NonFiniteError,
    NonFiniteGradientError,
)
from tkan.models import ModelConfig, build_model
from tkan.numerics import grad_check, make_rng
from tkan.training import (
    AdamState,
    ClassWeights,
    TrainConfig,
    TrainReport,
    inverse_freq_weights,
    objective_and_grads,
    parse_key_values,
    sgd_adaptive_step,
    train,
    train_config_from_mapping,
    uniform_weights,
    weighted_ce,
)

SMALL = ModelConfig(input_dim=6, hidden_dim=5, window=3, head_hidden=4)


def dist(*counts):
    return ClassDistribution(np.array(counts), sum(counts))


def test_inverse_frequency_paper_counts():
    w = inverse_freq_weights(dist(36533, 138391, 37135)).w
    np.testing.assert_allclose(w, [212059 / (3 * 36533), 212059 / (3 * 138391), 212059 / (3 * 37135)])
    assert [round(v, 2) for v in w] == [1.93, 0.51, 1.90]


def test_inverse_frequency_small_cases():
    np.testing.assert_allclose(inverse_freq_weights(dist(10, 10, 10)).w, [1, 1, 1])
    np.testing.assert_allclose(inverse_freq_weights(dist(1, 1, 2)).w, [4 / 3, 4 / 3, 2 / 3])
    with pytest.raises(ClassWeightError, match="uniform"):
        inverse_freq_weights(dist(5, 0, 5))
    with pytest.raises(ClassWeightError):
        ClassWeights([1.0, -1.0, 1.0])


def test_ce_uniform_logits_is_ln3():
    loss, _ = weighted_ce(np.zeros((4, 3)), [0, 1, 2, 1], uniform_weights())
    assert loss == pytest.approx(math.log(3), abs=1e-15)


def test_ce_confident_correct_is_zero():
    loss, grad = weighted_ce(np.array([[0.0, 800.0, 0.0]]), [1])
    assert loss == pytest.approx(0.0, abs=1e-300)
    assert np.abs(grad).max() < 1e-300


def test_ce_unit_weights_match_plain_ce(rng):
    z = rng.normal(size=(6, 3))
    y = rng.integers(0, 3, size=6)
    p = np.exp(z) / np.exp(z).sum(axis=1, keepdims=True)
    plain = -np.mean(np.log(p[np.arange(6), y]))
    assert weighted_ce(z, y, ClassWeights([1, 1, 1]))[0] == pytest.approx(plain, abs=1e-14)
    assert weighted_ce(z, y, ClassWeights([1, 1, 1]))[0] == weighted_ce(z, y)[0]


def test_ce_shift_invariance(rng):
    z = rng.normal(size=(5, 3))
    y = rng.integers(0, 3, size=5)
    w = ClassWeights([1.9, 0.5, 1.9])
    shifted = z + rng.normal(scale=50, size=(5, 1))
    assert abs(weighted_ce(z, y, w)[0] - weighted_ce(shifted, y, w)[0]) < 1e-12


def test_ce_gradient_fd(rng):
    z = rng.normal(size=(5, 3))
    y = rng.integers(0, 3, size=5)
    w = ClassWeights([1.93, 0.51, 1.90])
    _, grad = weighted_ce(z, y, w)
    rep = grad_check(lambda v: weighted_ce(v.reshape(5, 3), y, w)[0], grad.ravel(), z.ravel())
    assert rep.passed(1e-6), rep


def test_ce_weighting_scales_by_batch_size():
    z = np.zeros((2, 3))
    loss, _ = weighted_ce(z, [0, 0], ClassWeights([2.0, 1.0, 1.0]))
    assert loss == pytest.approx(2 * math.log(3))


def test_ce_rejects_bad_labels():
    with pytest.raises(LabelError):
        weighted_ce(np.zeros((2, 3)), [0, 3])


def test_adam_zero_gradient_keeps_params():
    p = [np.array([1.0, -2.0]), np.array([[3.0]])]
    before = [a.copy() for a in p]
    state = AdamState()
    for _ in range(5):
        sgd_adaptive_step(p, [np.zeros(2), np.zeros((1, 1))], state, 0.1)
    for a, b in zip(p, before):
        np.testing.assert_array_equal(a, b)


def test_adam_constant_gradient_step_is_lr_sign():
    p = [np.zeros(3)]
    g = np.array([0.5, -3.0, 1e-3])
    state = AdamState()
    lr = 1e-2
    for step in range(1, 200):
        prev = p[0].copy()
        sgd_adaptive_step(p, [g.copy()], state, lr)
        delta = p[0] - prev
        # with bias correction m_hat = g and v_hat = g^2 exactly in closed form
        np.testing.assert_allclose(delta, -lr * g / (np.abs(g) + 1e-8), rtol=1e-9)
    np.testing.assert_allclose(np.abs(delta), lr, rtol=1e-5)


def test_adam_non_finite_gradient_index():
    p = [np.zeros(2), np.zeros(3)]
    with pytest.raises(NonFiniteGradientError) as exc:
        sgd_adaptive_step(p, [np.zeros(2), np.array([0.0, np.nan, 0.0])], AdamState(), 1e-3)
    assert exc.value.index == 3


def test_adam_deterministic(rng):
    g_seq = [rng.normal(size=4) for _ in range(10)]
    runs = []
    for _ in range(2):
        p, s = [np.ones(4)], AdamState()
        for g in g_seq:
            sgd_adaptive_step(p, [g], s, 1e-2)
        runs.append(p[0].tobytes())
    assert runs[0] == runs[1]


def test_train_config_validation_and_parsing():
    with pytest.raises(ConfigError):
        TrainConfig(lam=-1)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=0)
    with pytest.raises(ConfigError):
        TrainConfig(class_weight_mode="explicit")
    values = parse_key_values("lr = 0.01\n# comment\nbatch=32\nlambda=0\nexplicit_weights = 1, 2, 3\nk = 20\n")
    cfg = train_config_from_mapping({**values, "class_weight_mode": "explicit"})
    assert (cfg.lr, cfg.batch_size, cfg.lam, cfg.horizon) == (0.01, 32, 0.0, 20)
    assert cfg.explicit_weights == (1.0, 2.0, 3.0)
    with pytest.raises(ConfigError):
        train_config_from_mapping({"warmup": "3"})
    with pytest.raises(ConfigError):
        parse_key_values("lr 0.1")


def cluster_sets(seed, n=300, T=3, features=6, separation=1.0):
    ws = synth_clusters(make_rng(seed, "clusters"), n, T=T, n_features=features, separation=separation)
    cut = int(0.8 * n)
    return ws[:cut], ws[cut:]


def test_single_batch_descent():
    model = build_model(SMALL, seed=0)
    tr, _ = cluster_sets(0, n=32)
    X, y = tr.X, tr.label(100)
    params = [a for _, a in model.parameters()]
    state = AdamState()
    w = uniform_weights()
    before, grads = objective_and_grads(model, X, y, w, 0.0)
    sgd_adaptive_step(params, grads, state, 1e-4)
    after, _ = objective_and_grads(model, X, y, w, 0.0)
    assert after < before


def test_composite_objective_fd(rng):
    model = build_model(SMALL, seed=1)
    X = rng.normal(size=(3, 3, 6))
    y = np.array([0, 1, 2])
    w = ClassWeights([1.5, 0.7, 1.2])
    lam = 1e-2
    loss, grads = objective_and_grads(model, X, y, w, lam)
    base = model.get_flat()
    assert np.all(np.concatenate([layer.coefficients.ravel() for layer in model.kan_layers()]) != 0)

    def f(v):
        model.set_flat(v)
        return objective_and_grads(model, X, y, w, lam)[0]

    rep = grad_check(f, np.concatenate([g.ravel() for g in grads]), base)
    model.set_flat(base)
    assert rep.passed(1e-5), rep


def test_patience_zero_stops_after_first_non_improvement():
    tr, va = cluster_sets(1, separation=0.0)
    cfg = TrainConfig(lr=1e-3, batch_size=32, max_epochs=20, patience=0, lam=0.0,
                      class_weight_mode="uniform")
    _, report = train(build_model(SMALL, seed=0), tr, va, cfg)
    f1 = report.valid_f1
    best = [max(f1[:i + 1]) for i in range(len(f1))]
    stop = next((i for i in range(1, len(f1)) if f1[i] <= best[i - 1]), None)
    assert stop is not None and len(f1) == stop + 1


def test_train_separable_reaches_high_f1():
    tr, va = cluster_sets(2, n=600, separation=5.0)
    cfg = TrainConfig(lr=1e-2, batch_size=32, max_epochs=20, patience=3, class_weight_mode="uniform")
    model, report = train(build_model(SMALL, seed=0), tr, va, cfg)
    assert max(report.valid_f1) >= 0.9
    assert len(report.epochs) <= 20
    assert report.valid_f1[report.best_epoch - 1] == max(report.valid_f1)
    # the returned model holds the best-epoch parameters
    from tkan.evaluation import macro_f1
    assert macro_f1(va.label(100), model.predict(va.X)) == pytest.approx(max(report.valid_f1))


def test_train_is_deterministic():
    tr, va = cluster_sets(3, n=120)
    cfg = TrainConfig(lr=1e-2, batch_size=16, max_epochs=2, patience=5)
    a, ra = train(build_model(SMALL, seed=0), tr, va, cfg)
    b, rb = train(build_model(SMALL, seed=0), tr, va, cfg)
    assert a.get_flat().tobytes() == b.get_flat().tobytes()
    assert ra.train_loss == rb.train_loss


def test_train_rejects_non_finite_data():
    tr, va = cluster_sets(4, n=60)
    bad = build_model(SMALL, seed=0)
    tr.X[0, 0, 0] = np.nan
    with pytest.raises(NonFiniteError, match="training windows"):
        train(bad, tr, va, TrainConfig(max_epochs=1, batch_size=60))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence_from_huge_params():
    tr, va = cluster_sets(5, n=60)
    model = build_model(SMALL, seed=0)
    model.set_flat(model.get_flat() * 1e200)
    with pytest.raises(DivergenceError) as exc:
        train(model, tr, va, TrainConfig(max_epochs=1, batch_size=20))
    assert exc.value.epoch == 1


def test_train_report_csv(tmp_path):
    rep = TrainReport([1, 2], [1.0, 0.5], [1.1, 0.6], [0.3, 0.4])
    text = rep.to_csv(tmp_path / "r.csv").read_text().splitlines()
    assert text[0] == "epoch,train_loss,valid_loss,valid_f1"
    assert len(text) == 3


def test_l1_pressure_trend_across_lambda():
    totals = {lam: [] for lam in (0.0, 1e-4, 1e-2)}
    for seed in range(3):
        tr, va = cluster_sets(10 + seed, n=150)
        for lam in totals:
            cfg = TrainConfig(lr=1e-2, batch_size=30, max_epochs=5, patience=10, lam=lam, seed=seed,
                              class_weight_mode="uniform")
            model, _ = train(build_model(SMALL, seed=seed), tr, va, cfg)
            totals[lam].append(model.l1_penalty())
    means = [np.mean(totals[lam]) for lam in (0.0, 1e-4, 1e-2)]
    assert means[0] >= means[1] >= means[2]
    assert all(a > b for a, b in zip(totals[0.0], totals[1e-2]))
