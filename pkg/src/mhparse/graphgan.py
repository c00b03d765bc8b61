"""Graph-GAN: GCN discriminator over affinity graphs and the joint training loop."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import parsernet
from .affinity import gt_affinity, pooling_matrix, predicted_affinity_var, superpixel_majority
from .numcore import autodiff as ad
from .parsernet import ModelConfig
from .scene import LabeledScene, SuperpixelMap, make_superpixels

EPS_PROB = 1e-7


class TrainingError(RuntimeError):
    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record


@dataclass(frozen=True)
class GanConfig:
    lam: float = 0.1
    d_steps: int = 1
    lr_g: float = 0.02
    lr_d: float = 0.2
    momentum: float = 0.9
    clip_g: float | None = 1.0
    clip_d: float | None = 1.0
    layers: int = 3
    hidden: int = 32
    max_nodes: int = 256
    embed_scale: float = 2.0
    theta: float = 1.0
    non_saturating: bool = True
    use_gan: bool = True
    batch_size: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lam must be >= 0")
        if self.layers < 2:
            raise ValueError("need at least 2 GCN layers")


def init_gcn(cfg: GanConfig = GanConfig(), num_classes: int = 19, seed: int = 0) -> dict:
    rng = np.random.default_rng([seed, 17])
    p = {}
    widths = [cfg.max_nodes] + [cfg.hidden] * cfg.layers
    for l in range(cfg.layers):
        fan_in, fan_out = widths[l], widths[l + 1]
        std = cfg.embed_scale if l == 0 else np.sqrt(1.0 / fan_in)
        p[f"gcn{l}_w"] = rng.normal(0.0, std, size=(fan_in, fan_out))
        p[f"gcn{l}_b"] = np.zeros(fan_out)
    p["att_w"] = rng.normal(0.0, 0.1, size=(num_classes,))
    p["att_b"] = np.zeros(1)
    p["cls_w"] = rng.normal(0.0, 0.1, size=(cfg.hidden,))
    p["cls_b"] = np.zeros(1)
    return p


def normalize_adjacency_var(a) -> ad.Var:
    a = ad.const(a)
    n = a.shape[0]
    a_hat = ad.add(a, np.eye(n))
    dinv = ad.power(ad.total(a_hat, axis=1), -0.5)
    return ad.mul(ad.mul(a_hat, ad.reshape(dinv, (n, 1))), ad.reshape(dinv, (1, n)))


def normalize_adjacency(a) -> np.ndarray:
    """``D^-1/2 (A + I) D^-1/2`` with ``D`` the row sums of ``A + I``."""
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"expected a square matrix, got {a.shape}")
    if (a < 0).any():
        raise ValueError("adjacency must be nonnegative")
    return normalize_adjacency_var(a).value


_ACTIVATIONS = {"tanh": ad.tanh, "linear": lambda v: v}


def gcn_forward_var(p: dict, norm_adj, node_features, att_input, activation="tanh") -> ad.Var:
    """Discriminator probability that the graph is a ground-truth one."""
    norm_adj = ad.const(norm_adj)
    h = ad.const(node_features)
    att_input = ad.const(att_input)
    n = norm_adj.shape[0]
    if h.shape[0] != n or att_input.shape[0] != n:
        raise ValueError("node feature rows must match the adjacency size")
    sigma = _ACTIVATIONS[activation]
    layers = sum(1 for k in p if k.startswith("gcn") and k.endswith("_w"))
    for l in range(layers):
        w = ad.const(p[f"gcn{l}_w"])
        if l == 0:
            if h.shape[1] > w.shape[0]:
                raise ValueError(f"{h.shape[1]} input features exceed the {w.shape[0]} rows of the first layer")
            w = ad.take_rows(w, np.arange(h.shape[1]))
        elif h.shape[1] != w.shape[0]:
            raise ValueError(f"layer {l}: width {h.shape[1]} does not match weights {w.shape}")
        h = sigma(ad.add(ad.matmul(norm_adj, ad.matmul(h, w)), p[f"gcn{l}_b"]))
    if att_input.shape[1] != ad.const(p["att_w"]).shape[0]:
        raise ValueError("attention input width does not match attention weights")
    scores = ad.add(ad.matmul(att_input, p["att_w"]), p["att_b"])
    weights = ad.softmax(scores, axis=0)
    pooled = ad.total(ad.mul(h, ad.reshape(weights, (n, 1))), axis=0)
    logit = ad.add(ad.matmul(pooled, p["cls_w"]), p["cls_b"])
    return ad.reshape(ad.sigmoid(logit), ())


def gcn_forward(params: dict, adjacency, node_features, att_input, activation="tanh") -> float:
    vs = {k: ad.const(v) for k, v in params.items()}
    return float(gcn_forward_var(vs, adjacency, node_features, att_input, activation).value)


def gcn_embedding(params: dict, adjacency, node_features, att_input, activation="tanh"):
    """Attention weights and pooled graph descriptor (for inspection and tests)."""
    vs = {k: ad.const(v) for k, v in params.items()}
    sigma = _ACTIVATIONS[activation]
    h = ad.const(node_features)
    layers = sum(1 for k in vs if k.startswith("gcn") and k.endswith("_w"))
    for l in range(layers):
        w = vs[f"gcn{l}_w"]
        if l == 0:
            w = ad.take_rows(w, np.arange(h.shape[1]))
        h = sigma(ad.add(ad.matmul(adjacency, ad.matmul(h, w)), vs[f"gcn{l}_b"]))
    z = np.asarray(att_input) @ params["att_w"] + params["att_b"]
    wts = np.exp(z - z.max())
    wts /= wts.sum()
    return wts, (h.value * wts[:, None]).sum(axis=0), h.value


def fg_mask(foreground) -> np.ndarray:
    fg = np.asarray(foreground, dtype=np.float64)
    return np.outer(fg, fg)


def l2_affinity_loss_var(pred, gt_a, foreground) -> ad.Var:
    diff = ad.sub(gt_a, ad.mul(pred, fg_mask(foreground)))
    return ad.total(ad.mul(diff, diff))


def l2_affinity_loss(pred, gt) -> float:
    """``|A - pred * A_fg|^2`` summed over all entries."""
    if pred.n != gt.n:
        raise ValueError("graphs differ in size")
    return float(l2_affinity_loss_var(pred.affinity, gt.affinity, gt.foreground).value)


def _clamped(d):
    return ad.clip(ad.const(d), EPS_PROB, 1.0 - EPS_PROB)


def gan_losses_var(d_real, d_fake, non_saturating: bool = True):
    """``(value, d_loss, g_loss)`` with value = log D(real) + log(1 - D(fake))."""
    dr = _clamped(d_real)
    df = _clamped(d_fake)
    log_real = ad.log(dr)
    log_fake_c = ad.log(ad.sub(1.0, df))
    value = ad.add(log_real, log_fake_c)
    d_loss = ad.scale(value, -1.0)
    g_loss = ad.scale(ad.log(df), -1.0) if non_saturating else log_fake_c
    return value, d_loss, g_loss


def gan_losses(d_real: float, d_fake: float, non_saturating: bool = True):
    """Discriminator and generator losses from the two discriminator outputs."""
    value, d_loss, g_loss = gan_losses_var(d_real, d_fake, non_saturating)
    return float(d_loss.value), float(g_loss.value)


def gan_value(d_real: float, d_fake: float) -> float:
    return float(gan_losses_var(d_real, d_fake)[0].value)


# ------------------------------------------------------------------ training

@dataclass
class Sample:
    """A scene with everything the losses need precomputed."""
    scene: LabeledScene
    sp: SuperpixelMap
    pool: np.ndarray
    gt: object
    seg_target: np.ndarray
    persons: int


def prepare_sample(scene: LabeledScene, model_cfg: ModelConfig = ModelConfig(),
                   target_size: int = 32, sp: SuperpixelMap | None = None) -> Sample:
    sp = make_superpixels(scene, target_size) if sp is None else sp
    h, w = scene.shape
    feat_hw = (h // model_cfg.downscale, w // model_cfg.downscale)
    pool = pooling_matrix(sp, feat_hw)
    sigma = superpixel_majority(scene.instance_map(), sp)
    return Sample(scene, sp, pool, gt_affinity(sigma, sp.n),
                  parsernet.downsample_labels(scene.part_labels, model_cfg.downscale),
                  scene.person_count)


def _graph_inputs(gen: dict, sample: Sample, model_cfg, theta):
    logits, feats, count = parsernet.forward_graph(gen, sample.scene.image, model_cfg)
    a_bar = predicted_affinity_var(feats, sample.pool, theta)
    probs = ad.softmax(ad.reshape(logits, (-1, logits.shape[-1])), axis=1)
    att = ad.matmul(sample.pool, probs)
    return logits, feats, count, a_bar, att


def generator_objective(gen_params: dict, disc_params: dict, sample: Sample,
                        cfg: GanConfig = GanConfig(), model_cfg: ModelConfig = ModelConfig(),
                        with_gan: bool = True):
    """Combined generator loss for one scene as an autodiff graph.

    ``gen_params`` maps names to autodiff leaves. Returns the total and a
    dict of its components.
    """
    logits, _, count, a_bar, att = _graph_inputs(gen_params, sample, model_cfg, cfg.theta)
    seg = parsernet.seg_loss_var(logits, sample.seg_target)
    l2 = l2_affinity_loss_var(a_bar, sample.gt.affinity, sample.gt.foreground)
    cnt = parsernet.count_loss_var(count, sample.persons)
    total = ad.add(ad.add(seg, l2), cnt)
    parts = {"seg_loss": seg, "l2_loss": l2, "count_loss": cnt}
    if with_gan and cfg.lam > 0:
        fake = ad.mul(a_bar, fg_mask(sample.gt.foreground))
        n = sample.sp.n
        d_fake = gcn_forward_var(disc_params, normalize_adjacency_var(fake), np.eye(n), att)
        _, _, g = gan_losses_var(0.5, d_fake, cfg.non_saturating)
        total = ad.add(total, ad.scale(g, cfg.lam))
        parts["g_loss"] = g
    return total, parts


def discriminator_objective(disc_params: dict, fake_adj, real_adj, att, cfg: GanConfig = GanConfig()):
    n = real_adj.shape[0]
    eye = np.eye(n)
    d_real = gcn_forward_var(disc_params, normalize_adjacency(real_adj), eye, att)
    d_fake = gcn_forward_var(disc_params, normalize_adjacency(fake_adj), eye, att)
    value, d_loss, _ = gan_losses_var(d_real, d_fake, cfg.non_saturating)
    return d_loss, float(d_real.value), float(d_fake.value)


@dataclass
class TrainState:
    gen: dict
    disc: dict
    opt_g: parsernet.SGD
    opt_d: parsernet.SGD
    step: int = 0
    history: list = field(default_factory=list)


def new_state(cfg: GanConfig = GanConfig(), model_cfg: ModelConfig = ModelConfig(),
              gen: dict | None = None, disc: dict | None = None) -> TrainState:
    return TrainState(
        gen=parsernet.init_params(model_cfg, cfg.seed) if gen is None else gen,
        disc=init_gcn(cfg, model_cfg.num_classes, cfg.seed) if disc is None else disc,
        opt_g=parsernet.SGD(cfg.lr_g, cfg.momentum, cfg.clip_g),
        opt_d=parsernet.SGD(cfg.lr_d, cfg.momentum, cfg.clip_d),
    )


def _mean_grads(grad_list):
    keys = grad_list[0].keys()
    return {k: sum(g[k] for g in grad_list) / len(grad_list) for k in keys}


def discriminator_step(state: TrainState, batch, cfg: GanConfig, model_cfg: ModelConfig):
    """One ascent step of the discriminator on a batch; generator is held fixed."""
    consts = {k: ad.const(v) for k, v in state.gen.items()}
    grads, d_losses, correct = [], [], 0
    for s in batch:
        _, _, _, a_bar, att = _graph_inputs(consts, s, model_cfg, cfg.theta)
        fake = a_bar.value * fg_mask(s.gt.foreground)
        leaves = {k: ad.param(v) for k, v in state.disc.items()}
        d_loss, dr, df = discriminator_objective(leaves, fake, s.gt.affinity, att.value, cfg)
        grads.append(ad.grads_of(d_loss, leaves))
        d_losses.append(float(d_loss.value))
        correct += (dr > 0.5) + (df < 0.5)
    state.disc = state.opt_d.step(state.disc, _mean_grads(grads))
    return float(np.mean(d_losses)), correct / (2 * len(batch))


def generator_step(state: TrainState, batch, cfg: GanConfig, model_cfg: ModelConfig):
    with_gan = cfg.use_gan and cfg.lam > 0
    grads = []
    rec = {"seg_loss": 0.0, "l2_loss": 0.0, "count_loss": 0.0, "g_loss": float("nan")}
    g_losses = []
    for s in batch:
        leaves = {k: ad.param(v) for k, v in state.gen.items()}
        total, parts = generator_objective(leaves, state.disc, s, cfg, model_cfg, with_gan)
        grads.append(ad.grads_of(total, leaves))
        for k in ("seg_loss", "l2_loss", "count_loss"):
            rec[k] += float(parts[k].value) / len(batch)
        if "g_loss" in parts:
            g_losses.append(float(parts["g_loss"].value))
    if g_losses:
        rec["g_loss"] = float(np.mean(g_losses))
    state.gen = state.opt_g.step(state.gen, _mean_grads(grads))
    return rec


def train_step(state: TrainState, batch, cfg: GanConfig = GanConfig(),
               model_cfg: ModelConfig = ModelConfig()) -> dict:
    """Discriminator step(s) followed by one generator step; returns the loss record."""
    if not batch:
        raise ValueError("empty batch")
    d_loss = float("nan")
    if cfg.use_gan:
        for _ in range(cfg.d_steps):
            d_loss, _ = discriminator_step(state, batch, cfg, model_cfg)
    rec = generator_step(state, batch, cfg, model_cfg)
    rec["d_loss"] = d_loss
    rec["step"] = state.step
    state.step += 1
    for k in ("seg_loss", "l2_loss", "count_loss"):
        if not math.isfinite(rec[k]):
            raise TrainingError(f"non-finite {k} at step {rec['step']}", rec)
    for k in ("d_loss", "g_loss"):
        if cfg.use_gan and cfg.lam > 0 and not math.isfinite(rec[k]):
            raise TrainingError(f"non-finite {k} at step {rec['step']}", rec)
    state.history.append(rec)
    return rec


LOG_FIELDS = ("step", "seg_loss", "l2_loss", "d_loss", "g_loss", "count_loss")


def train(samples, steps: int, cfg: GanConfig = GanConfig(), model_cfg: ModelConfig = ModelConfig(),
          state: TrainState | None = None, log_path=None, callback=None) -> TrainState:
    """Run ``steps`` training steps over ``samples``, reshuffling every epoch."""
    state = new_state(cfg, model_cfg) if state is None else state
    rng = np.random.default_rng([cfg.seed, 101])
    order = []
    fh = writer = None
    if log_path is not None:
        fh = open(log_path, "a", newline="")
        writer = csv.DictWriter(fh, fieldnames=LOG_FIELDS, extrasaction="ignore")
        if fh.tell() == 0:
            writer.writeheader()
    try:
        for _ in range(steps):
            if len(order) < cfg.batch_size:
                order.extend(rng.permutation(len(samples)).tolist())
            idx, order = order[:cfg.batch_size], order[cfg.batch_size:]
            rec = train_step(state, [samples[i] for i in idx], cfg, model_cfg)
            if writer is not None:
                writer.writerow(rec)
                fh.flush()
            if callback is not None:
                callback(rec)
    finally:
        if fh is not None:
            fh.close()
    return state


def evaluate_losses(gen: dict, samples, cfg: GanConfig = GanConfig(), model_cfg: ModelConfig = ModelConfig()):
    """Mean seg / L2 / count losses of a generator over samples (no updates)."""
    consts = {k: ad.const(v) for k, v in gen.items()}
    out = {"seg_loss": 0.0, "l2_loss": 0.0, "count_loss": 0.0}
    for s in samples:
        _, parts = generator_objective(consts, None, s, cfg, model_cfg, with_gan=False)
        for k in out:
            out[k] += float(parts[k].value) / len(samples)
    return out


def discriminator_accuracy(gen: dict, disc: dict, samples, cfg: GanConfig = GanConfig(),
                           model_cfg: ModelConfig = ModelConfig()) -> float:
    consts = {k: ad.const(v) for k, v in gen.items()}
    correct = 0
    for s in samples:
        _, _, _, a_bar, att = _graph_inputs(consts, s, model_cfg, cfg.theta)
        fake = a_bar.value * fg_mask(s.gt.foreground)
        eye = np.eye(s.sp.n)
        dr = gcn_forward(disc, normalize_adjacency(s.gt.affinity), eye, att.value)
        df = gcn_forward(disc, normalize_adjacency(fake), eye, att.value)
        correct += (dr > 0.5) + (df < 0.5)
    return correct / (2 * len(samples))
