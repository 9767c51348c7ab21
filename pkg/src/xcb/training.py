"""Loss composition and the optimization loop.

The step loss is l_asr + l_bias + alpha * l_ce_2nd:

  * l_asr: cross-entropy of the main decode over teacher-length fired
    tokens, plus an L1 penalty |sum(w) - target_len| on the raw predictor
    weights.
  * l_bias: cross-entropy of the biasing branch, where each position's
    target is the reference token when it lies inside a listed-hotword
    occurrence and the no-bias class otherwise.
  * l_ce_2nd: cross-entropy of the secondary-language branch, which runs
    the adapter output through the shared predictor and decoder against
    the masked labels (L1 positions replaced by <unk>). The branch never
    touches the merging gate.

Training is plain Adam (0.9/0.999, eps 1e-8) with seeded shuffling; batch
loss is the mean over the batch's utterances.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import model as M
from . import tensor as T
from .data import (
    HotwordList,
    NO_BIAS_ID,
    UNK_ID,
    Phrase,
    Utterance,
    corpus_hotword_lists,
    mask_l1,
)
from .errors import ConfigError, InputError, NumericalError
from .model import InferenceMode, ModelConfig, ModelParams
from .tensor import Tensor


@dataclass
class TrainConfig:
    lr: float = 0.0002
    batch_size: int = 30
    epochs: int = 10
    alpha: float = 0.3
    seed: int = 0
    freeze_backbone: bool = False
    train_hotword_n: int = 10
    l2nd_include_unk: bool = True
    l2nd_stop_shared_grad: bool = False

    def __post_init__(self):
        if self.lr <= 0:
            raise ConfigError("lr must be positive")
        if self.alpha < 0:
            raise ConfigError("alpha must be >= 0")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")


@dataclass
class LossBreakdown:
    l_asr: float
    l_bias: float
    l_ce_2nd: float
    alpha: float
    l_total: float

    def to_dict(self) -> dict:
        return {
            "l_asr": self.l_asr,
            "l_bias": self.l_bias,
            "l_ce_2nd": self.l_ce_2nd,
            "alpha": self.alpha,
            "l_total": self.l_total,
        }


def bias_targets(ref_ids: Sequence[int], hotwords: HotwordList) -> list[int]:
    """Per-position biasing targets: the reference token inside any listed
    phrase occurrence, the no-bias class elsewhere."""
    covered = set()
    for phrase in hotwords.phrases:
        ids = [t.id for t in phrase]
        k = len(ids)
        for s in range(len(ref_ids) - k + 1):
            if list(ref_ids[s:s + k]) == ids:
                covered.update(range(s, s + k))
    return [ref_ids[i] if i in covered else NO_BIAS_ID for i in range(len(ref_ids))]


def _shared_view(params: ModelParams, stop_shared: bool) -> ModelParams:
    """Parameters as seen by the secondary branch; optionally detach the
    shared predictor/decoder so its gradients stay inside the adapter."""
    if not stop_shared:
        return params
    view = dict(params)
    for name, p in params.items():
        if name.startswith(("predictor.", "decoder.")):
            view[name] = p.detached()
    return view


def _main_losses(utt: Utterance, hotwords: HotwordList, params: ModelParams,
                 config: ModelConfig, mode: InferenceMode,
                 hidden: Tensor | None = None) -> tuple[Tensor, Tensor]:
    h = hidden if hidden is not None else M.encode(utt.features, params, config)
    if mode is InferenceMode.ACTIVE_XCB and M.has_xcb(params):
        e = M.bm_gate(h, M.lb_adapter(h, params), params)
    else:
        e = h
    ref = utt.ref_ids
    fired, wsum = M.cif_predict(e, params, config, target_len=len(ref))
    ce = T.cross_entropy(M.decode(fired, params, config), ref)
    qty = T.abs_(wsum - float(len(ref)) * config.cif_threshold)
    l_asr = ce + qty
    embs = M.embed_hotwords(hotwords, params, config)
    l_bias = T.cross_entropy(
        M.bias_decode(fired, embs, params, config), bias_targets(ref, hotwords))
    return l_asr, l_bias


def asr_loss(utt: Utterance, params: ModelParams, config: ModelConfig,
             mode: InferenceMode = InferenceMode.ACTIVE_XCB) -> Tensor:
    """Main-branch loss: length-conditioned decode CE + quantity penalty."""
    h = M.encode(utt.features, params, config)
    if mode is InferenceMode.ACTIVE_XCB and M.has_xcb(params):
        e = M.bm_gate(h, M.lb_adapter(h, params), params)
    else:
        e = h
    ref = utt.ref_ids
    fired, wsum = M.cif_predict(e, params, config, target_len=len(ref))
    ce = T.cross_entropy(M.decode(fired, params, config), ref)
    return ce + T.abs_(wsum - float(len(ref)) * config.cif_threshold)


def bias_loss(utt: Utterance, hotwords: HotwordList, params: ModelParams,
              config: ModelConfig,
              mode: InferenceMode = InferenceMode.ACTIVE_XCB) -> Tensor:
    """Biasing-branch cross-entropy against span-derived targets."""
    _, l_bias = _main_losses(utt, hotwords, params, config, mode)
    return l_bias


def l2nd_loss(utt: Utterance, params: ModelParams, config: ModelConfig,
              include_unk: bool = True, stop_shared_grad: bool = False,
              hidden: Tensor | None = None) -> Tensor:
    """Secondary-language branch: adapter output through the shared
    predictor and decoder, scored against the masked labels."""
    if not M.has_xcb(params):
        raise InputError("secondary-language branch needs the adapter parameters")
    h = hidden if hidden is not None else M.encode(utt.features, params, config)
    adapted = M.lb_adapter(h, params)
    masked_ids = [t.id for t in mask_l1(utt.tokens)]
    shared = _shared_view(params, stop_shared_grad)
    fired, _ = M.cif_predict(adapted, shared, config, target_len=len(masked_ids))
    logits = M.decode(fired, shared, config)
    ignore = None if include_unk else UNK_ID
    return T.cross_entropy(logits, masked_ids, ignore_index=ignore)


def _graph_total(utt: Utterance, hotwords: HotwordList, params: ModelParams,
                 config: ModelConfig, tc: TrainConfig,
                 mode: InferenceMode) -> tuple[Tensor, LossBreakdown]:
    h = M.encode(utt.features, params, config)
    l_asr, l_bias = _main_losses(utt, hotwords, params, config, mode, hidden=h)
    if M.has_xcb(params):
        l_2nd = l2nd_loss(utt, params, config, include_unk=tc.l2nd_include_unk,
                          stop_shared_grad=tc.l2nd_stop_shared_grad, hidden=h)
        l_2nd_val = l_2nd.item()
    else:
        l_2nd = None
        l_2nd_val = 0.0
    total = l_asr + l_bias
    if l_2nd is not None and tc.alpha != 0.0:
        total = total + tc.alpha * l_2nd
    bd = LossBreakdown(l_asr.item(), l_bias.item(), l_2nd_val, tc.alpha,
                       l_asr.item() + l_bias.item() + tc.alpha * l_2nd_val)
    return total, bd


def total_loss(utt: Utterance, hotwords: HotwordList, params: ModelParams,
               config: ModelConfig, alpha: float,
               mode: InferenceMode = InferenceMode.ACTIVE_XCB,
               include_unk: bool = True, stop_shared_grad: bool = False) -> LossBreakdown:
    """All loss components for one utterance; the secondary branch is still
    evaluated when alpha is zero, it just contributes nothing."""
    tc = TrainConfig(alpha=alpha, l2nd_include_unk=include_unk,
                     l2nd_stop_shared_grad=stop_shared_grad)
    with T.no_grad():
        _, bd = _graph_total(utt, hotwords, params, config, tc, mode)
    return bd


def _adam_step(params: ModelParams, m: dict, v: dict, t: int, lr: float,
               freeze_backbone: bool) -> None:
    b1, b2, eps = 0.9, 0.999, 1e-8
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for name, p in params.items():
        if freeze_backbone and not name.startswith("xcb."):
            continue
        g = p.grad
        if g is None:
            continue
        m[name] = b1 * m[name] + (1.0 - b1) * g
        v[name] = b2 * v[name] + (1.0 - b2) * (g * g)
        p.data = p.data - lr * (m[name] / c1) / (np.sqrt(v[name] / c2) + eps)


def train(train_utts: Sequence[Utterance], entity_pool: Sequence[Phrase],
          params: ModelParams, model_config: ModelConfig, tc: TrainConfig,
          report_sink: Callable[[dict], None] | None = None
          ) -> tuple[ModelParams, list[LossBreakdown]]:
    """Optimize params in place; returns (params, per-epoch mean losses).

    Deterministic given the seed. Aborts with NumericalError on a
    non-finite loss.
    """
    if not train_utts:
        raise InputError("training corpus is empty")
    mode = InferenceMode.ACTIVE_XCB if M.has_xcb(params) else InferenceMode.INACTIVE_XCB
    lists = corpus_hotword_lists(train_utts, entity_pool, tc.train_hotword_n, tc.seed)
    m = {name: np.zeros_like(p.data) for name, p in params.items()}
    v = {name: np.zeros_like(p.data) for name, p in params.items()}
    perm_rng = np.random.default_rng(np.random.SeedSequence([tc.seed, 0x5E]))
    n = len(train_utts)
    step = 0
    curve: list[LossBreakdown] = []
    for epoch in range(1, tc.epochs + 1):
        order = perm_rng.permutation(n)
        sums = np.zeros(3)
        for start in range(0, n, tc.batch_size):
            batch = order[start:start + tc.batch_size]
            for p in params.values():
                p.grad = None
            inv = 1.0 / len(batch)
            for idx in batch:
                utt = train_utts[int(idx)]
                total, bd = _graph_total(utt, lists[int(idx)], params,
                                         model_config, tc, mode)
                if not math.isfinite(bd.l_total):
                    raise NumericalError(
                        f"non-finite loss at epoch {epoch}, utterance {utt.id}: {bd}")
                T.backward(total * inv)
                sums += (bd.l_asr, bd.l_bias, bd.l_ce_2nd)
            step += 1
            _adam_step(params, m, v, step, tc.lr, tc.freeze_backbone)
        means = sums / n
        epoch_bd = LossBreakdown(
            means[0], means[1], means[2], tc.alpha,
            means[0] + means[1] + tc.alpha * means[2])
        curve.append(epoch_bd)
        if report_sink is not None:
            report_sink({"epoch": epoch, "l_asr": epoch_bd.l_asr,
                         "l_bias": epoch_bd.l_bias, "l_ce_2nd": epoch_bd.l_ce_2nd,
                         "l_total": epoch_bd.l_total})
    return params, curve
