import csv
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mhparse import graphgan
from mhparse.graphgan import (GanConfig, TrainingError, discriminator_objective, gan_losses, gan_value,
                              gcn_embedding, gcn_forward, generator_objective, init_gcn, l2_affinity_loss,
                              new_state, normalize_adjacency, prepare_sample, train, train_step)
from mhparse.affinity import AffinityGraph, gt_affinity
from mhparse.numcore import autodiff as ad
from mhparse.numcore import grad_check
from mhparse.parsernet import init_params
from mhparse.scene import SceneConfig, generate_scene
from helpers import tiny_scene


def random_adjacency(rng, n):
    a = rng.uniform(size=(n, n))
    a = (a + a.T) / 2
    np.fill_diagonal(a, 0)
    return a


def test_normalize_adjacency_examples():
    np.testing.assert_allclose(normalize_adjacency([[0.0]]), [[1.0]])
    np.testing.assert_allclose(normalize_adjacency([[0, 1], [1, 0]]), [[0.5, 0.5], [0.5, 0.5]])
    with pytest.raises(ValueError):
        normalize_adjacency([[0, -1], [-1, 0]])


def test_normalize_adjacency_entrywise_oracle():
    a = random_adjacency(np.random.default_rng(0), 5)
    out = normalize_adjacency(a)
    for i in range(5):
        for j in range(5):
            ah = a[i, j] + (i == j)
            di = 1 + a[i].sum()
            dj = 1 + a[j].sum()
            assert out[i, j] == pytest.approx(ah / math.sqrt(di * dj), rel=1e-12)
    assert np.abs(np.linalg.eigvalsh(out)).max() <= 1 + 1e-12


@given(st.integers(1, 12), st.integers(0, 10 ** 6))
def test_normalize_adjacency_equivariant(n, seed):
    rng = np.random.default_rng(seed)
    a = random_adjacency(rng, n)
    perm = rng.permutation(n)
    out = normalize_adjacency(a)
    np.testing.assert_allclose(normalize_adjacency(a[np.ix_(perm, perm)]), out[np.ix_(perm, perm)], atol=1e-12)
    np.testing.assert_allclose(out, out.T, atol=1e-12)


def test_gcn_single_node_attention_weight_one():
    p = init_gcn(GanConfig(max_nodes=4), seed=1)
    wts, pooled, h = gcn_embedding(p, normalize_adjacency([[0.0]]), np.eye(1), np.random.default_rng(0).uniform(size=(1, 19)))
    assert wts.tolist() == [1.0]
    np.testing.assert_allclose(pooled, h[0])
    assert 0 < gcn_forward(p, normalize_adjacency([[0.0]]), np.eye(1), np.ones((1, 19))) < 1


def test_gcn_linear_identity_averages_rows():
    cfg = GanConfig(layers=2, hidden=2, max_nodes=2)
    p = init_gcn(cfg, num_classes=3)
    p["gcn0_w"] = np.eye(2)
    p["gcn1_w"] = np.eye(2)
    x = np.array([[1.0, 3.0], [5.0, -1.0]])
    wts, _, h = gcn_embedding(p, normalize_adjacency([[0, 1], [1, 0]]), x, np.zeros((2, 3)),
                              activation="linear")
    # two rounds of averaging leave the mean row
    np.testing.assert_allclose(h, [[3.0, 1.0], [3.0, 1.0]])
    single = dict(p)
    del single["gcn1_w"], single["gcn1_b"]
    _, _, h1 = gcn_embedding(single, normalize_adjacency([[0, 1], [1, 0]]), x, np.zeros((2, 3)), activation="linear")
    np.testing.assert_allclose(h1, [[3.0, 1.0], [3.0, 1.0]])


def test_gcn_matches_hand_unrolled_two_layers():
    cfg = GanConfig(layers=2, hidden=5, max_nodes=6)
    rng = np.random.default_rng(3)
    p = init_gcn(cfg, num_classes=4, seed=2)
    p = {k: v + rng.normal(0, 0.1, v.shape) for k, v in p.items()}
    a = normalize_adjacency(random_adjacency(rng, 4))
    x = np.eye(4)
    att = rng.uniform(size=(4, 4))
    h0 = np.tanh(a @ (x @ p["gcn0_w"][:4]) + p["gcn0_b"])
    h1 = np.tanh(a @ (h0 @ p["gcn1_w"]) + p["gcn1_b"])
    z = att @ p["att_w"] + p["att_b"][0]
    w = np.exp(z) / np.exp(z).sum()
    hg = sum(w[i] * h1[i] for i in range(4))
    ref = 1 / (1 + np.exp(-(hg @ p["cls_w"] + p["cls_b"][0])))
    assert gcn_forward(p, a, x, att) == pytest.approx(ref, rel=1e-12)


def test_gcn_width_errors():
    p = init_gcn(GanConfig(max_nodes=4), num_classes=19)
    with pytest.raises(ValueError):
        gcn_forward(p, np.eye(5), np.eye(5), np.ones((5, 19)))
    with pytest.raises(ValueError):
        gcn_forward(p, np.eye(3), np.eye(3), np.ones((3, 7)))
    with pytest.raises(ValueError):
        gcn_forward(p, np.eye(3), np.eye(2), np.ones((3, 19)))


@given(st.integers(2, 10), st.integers(0, 10 ** 6))
def test_discriminator_node_permutation_invariance(n, seed):
    rng = np.random.default_rng(seed)
    p = init_gcn(GanConfig(max_nodes=16), num_classes=5, seed=seed % 7)
    a = random_adjacency(rng, n)
    att = rng.uniform(size=(n, 5))
    perm = rng.permutation(n)
    base = gcn_forward(p, normalize_adjacency(a), np.eye(n), att)
    moved = gcn_forward(p, normalize_adjacency(a[np.ix_(perm, perm)]), np.eye(n)[perm], att[perm])
    assert moved == pytest.approx(base, abs=1e-6)


def test_l2_loss_examples_and_oracle():
    sigma = np.array([1, 1, 2, 0, 0])
    gt = gt_affinity(sigma, 5)
    perfect = AffinityGraph(gt.affinity.copy(), gt.foreground, "predicted")
    assert l2_affinity_loss(perfect, gt) == 0.0
    noisy_bg = gt.affinity.copy()
    noisy_bg[3, 4] = noisy_bg[4, 3] = 0.7
    assert l2_affinity_loss(AffinityGraph(noisy_bg, gt.foreground, "predicted"), gt) == 0.0
    bg = gt_affinity(np.zeros(4, int), 4)
    rnd = np.random.default_rng(0).uniform(size=(4, 4))
    assert l2_affinity_loss(AffinityGraph(rnd, np.zeros(4, bool), "predicted"), bg) == 0.0
    pred = np.random.default_rng(1).uniform(size=(5, 5))
    ref = 0.0
    for i in range(5):
        for j in range(5):
            mask = 1.0 if gt.foreground[i] and gt.foreground[j] else 0.0
            ref += (gt.affinity[i, j] - pred[i, j] * mask) ** 2
    assert l2_affinity_loss(AffinityGraph(pred, gt.foreground, "predicted"), gt) == pytest.approx(ref)


def test_gan_loss_examples():
    assert gan_value(0.5, 0.5) == pytest.approx(-2 * math.log(2))
    assert gan_value(1.0, 0.0) == pytest.approx(0.0, abs=1e-6)
    d, g = gan_losses(0.5, 0.5)
    assert d == pytest.approx(2 * math.log(2)) and g == pytest.approx(math.log(2))
    d, g = gan_losses(0.9, 0.2, non_saturating=False)
    assert d == pytest.approx(-(math.log(0.9) + math.log(0.8)))
    assert g == pytest.approx(math.log(0.8))
    d, g = gan_losses(0.0, 1.0)
    assert math.isfinite(d) and math.isfinite(g)


@pytest.mark.parametrize("non_saturating", [True, False])
def test_gan_loss_gradients(non_saturating):
    def f(x):
        leaf = ad.param(x)
        dr = ad.reshape(ad.take_rows(leaf, np.array([0])), ())
        df = ad.reshape(ad.take_rows(leaf, np.array([1])), ())
        _, d, g = graphgan.gan_losses_var(dr, df, non_saturating)
        out = ad.add(d, ad.scale(g, 0.7))
        ad.backward(out)
        return out.value, leaf.grad

    assert grad_check(f, np.array([0.63, 0.27])) < 1e-6


@pytest.fixture(scope="module")
def tiny_sample():
    return prepare_sample(tiny_scene(), target_size=8)


def test_discriminator_gradient(tiny_sample):
    cfg = GanConfig(max_nodes=64)
    att = np.random.default_rng(0).dirichlet(np.ones(19), size=tiny_sample.sp.n)
    fake = np.random.default_rng(1).uniform(size=(tiny_sample.sp.n,) * 2)
    fake = (fake + fake.T) / 2

    def f(p):
        leaves = {k: ad.param(v) for k, v in p.items()}
        d_loss, _, _ = discriminator_objective(leaves, fake, tiny_sample.gt.affinity, att, cfg)
        return d_loss.value, ad.grads_of(d_loss, leaves)

    assert grad_check(f, init_gcn(cfg, seed=1), max_coords=8) < 1e-3


@pytest.mark.parametrize("non_saturating", [True, False])
def test_combined_loss_gradient_through_discriminator(tiny_sample, non_saturating):
    cfg = GanConfig(max_nodes=64, lam=0.5, non_saturating=non_saturating)
    disc = init_gcn(cfg, seed=3)

    def f(p):
        leaves = {k: ad.param(v) for k, v in p.items()}
        total, parts = generator_objective(leaves, disc, tiny_sample, cfg)
        assert "g_loss" in parts
        return total.value, ad.grads_of(total, leaves)

    assert grad_check(f, init_params(seed=2), max_coords=6) < 1e-3


def test_l2_loss_gradient_through_generator(tiny_sample):
    def f(p):
        leaves = {k: ad.param(v) for k, v in p.items()}
        _, parts = generator_objective(leaves, None, tiny_sample, GanConfig(), with_gan=False)
        return parts["l2_loss"].value, ad.grads_of(parts["l2_loss"], leaves)

    # eps=1e-4 straddles a ReLU kink for one probed coordinate of this input
    assert grad_check(f, init_params(seed=5), eps=1e-5, max_coords=6) < 1e-3


def small_samples(n=3):
    return [prepare_sample(generate_scene(SceneConfig(height=32, width=32, max_persons=3), seed=i), target_size=16)
            for i in range(n)]


def test_lambda_zero_matches_supervised_build():
    samples = small_samples()
    a = train(samples, 3, GanConfig(lam=0.0, batch_size=2))
    b = train(samples, 3, GanConfig(use_gan=False, batch_size=2))
    for k in a.gen:
        assert np.array_equal(a.gen[k], b.gen[k])
    for ra, rb in zip(a.history, b.history):
        assert ra["seg_loss"] == rb["seg_loss"] and ra["l2_loss"] == rb["l2_loss"]


def test_train_deterministic_and_log(tmp_path):
    samples = small_samples()
    log = tmp_path / "log.csv"
    a = train(samples, 3, GanConfig(batch_size=2), log_path=log)
    b = train(samples, 3, GanConfig(batch_size=2))
    for k in a.gen:
        assert np.array_equal(a.gen[k], b.gen[k])
    with open(log) as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0].keys()) == list(graphgan.LOG_FIELDS)
    assert [int(r["step"]) for r in rows] == [0, 1, 2]
    assert all(math.isfinite(float(r[k])) for r in rows for k in graphgan.LOG_FIELDS)


def test_non_finite_loss_aborts_with_record():
    samples = small_samples(1)
    state = new_state(GanConfig(batch_size=1))
    state.gen["seg_b"] = state.gen["seg_b"] + np.nan
    with pytest.raises(TrainingError) as info:
        train_step(state, samples, GanConfig(batch_size=1))
    assert info.value.record is not None and "seg_loss" in info.value.record
    with pytest.raises(ValueError):
        train_step(new_state(), [], GanConfig())


def test_config_validation():
    with pytest.raises(ValueError):
        GanConfig(lam=-0.1)
    with pytest.raises(ValueError):
        GanConfig(layers=1)
