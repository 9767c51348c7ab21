"""The biasing-enhanced ASR network.

Pipeline: frame features -> encoder -> optional cross-lingual biasing
insert (bottleneck adapter + merging gate) -> integrate-and-fire length
predictor -> non-autoregressive decoder, with a hotword biasing branch
(cross-attention over hotword embeddings) merged additively into the
decoder logits at inference.

Two inference modes: ACTIVE_XCB routes the encoder output through the
adapter and gate; INACTIVE_XCB feeds it to the predictor untouched, so
the decode is a pure function of the non-insert parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
import numpy as np

from . import tensor as T
from .data import NO_BIAS_ID, PAD_ID, UNK_ID, HotwordList
from .errors import ConfigError, DimensionError, InputError
from .tensor import Tensor

ModelParams = dict[str, Tensor]


class InferenceMode(Enum):
    ACTIVE_XCB = "active"
    INACTIVE_XCB = "inactive"


@dataclass
class ModelConfig:
    d_model: int = 64
    encoder_layers: int = 2
    decoder_layers: int = 1
    adapter_bottleneck: int = 16
    vocab_size: int = 73
    d_feat: int = 16
    ffn_dim: int = 128
    cif_threshold: float = 1.0
    max_hotwords: int = 60
    bias_weight: float = 1.0
    use_positional: bool = True
    max_frames: int = 512

    def __post_init__(self):
        if self.adapter_bottleneck >= self.d_model:
            raise ConfigError("adapter_bottleneck must be smaller than d_model")
        if self.vocab_size <= NO_BIAS_ID:
            raise ConfigError("vocab_size must cover the special tokens")
        if self.cif_threshold <= 0:
            raise ConfigError("cif_threshold must be positive")
        if self.encoder_layers < 1 or self.decoder_layers < 0:
            raise ConfigError("need at least one encoder layer")
        if self.max_hotwords < 1:
            raise ConfigError("max_hotwords must be >= 1")


def _block_manifest(prefix: str, d: int, ffn: int) -> list[tuple[str, tuple[int, ...]]]:
    return [
        (f"{prefix}.attn.wq", (d, d)), (f"{prefix}.attn.bq", (d,)),
        (f"{prefix}.attn.wk", (d, d)), (f"{prefix}.attn.bk", (d,)),
        (f"{prefix}.attn.wv", (d, d)), (f"{prefix}.attn.bv", (d,)),
        (f"{prefix}.attn.wo", (d, d)), (f"{prefix}.attn.bo", (d,)),
        (f"{prefix}.ln1.g", (d,)), (f"{prefix}.ln1.b", (d,)),
        (f"{prefix}.ffn.w1", (d, ffn)), (f"{prefix}.ffn.b1", (ffn,)),
        (f"{prefix}.ffn.w2", (ffn, d)), (f"{prefix}.ffn.b2", (d,)),
        (f"{prefix}.ln2.g", (d,)), (f"{prefix}.ln2.b", (d,)),
    ]


def param_manifest(config: ModelConfig, variant: str = "xcb") -> list[tuple[str, tuple[int, ...]]]:
    """Name -> shape table for every learned tensor of the given variant."""
    if variant not in ("baseline", "xcb"):
        raise ConfigError(f"unknown variant {variant!r}")
    d, v, b = config.d_model, config.vocab_size, config.adapter_bottleneck
    entries: list[tuple[str, tuple[int, ...]]] = [
        ("encoder.in.w", (config.d_feat, d)),
        ("encoder.in.b", (d,)),
    ]
    if config.use_positional:
        entries.append(("encoder.pos", (config.max_frames, d)))
    for i in range(config.encoder_layers):
        entries.extend(_block_manifest(f"encoder.l{i}", d, config.ffn_dim))
    if variant == "xcb":
        entries.extend([
            ("xcb.adapter.down.w", (d, b)), ("xcb.adapter.down.b", (b,)),
            ("xcb.adapter.ln1.g", (b,)), ("xcb.adapter.ln1.b", (b,)),
            ("xcb.adapter.up.w", (b, d)), ("xcb.adapter.up.b", (d,)),
            ("xcb.adapter.ln2.g", (d,)), ("xcb.adapter.ln2.b", (d,)),
            ("xcb.gate.wh", (d, d)), ("xcb.gate.bh", (d,)),
            ("xcb.gate.wl", (d, d)), ("xcb.gate.bl", (d,)),
        ])
    entries.extend([("predictor.w", (d, 1)), ("predictor.b", (1,))])
    for i in range(config.decoder_layers):
        entries.extend(_block_manifest(f"decoder.l{i}", d, config.ffn_dim))
    entries.extend([
        ("decoder.out.w", (d, v)), ("decoder.out.b", (v,)),
        ("bias.embed", (v, d)),
        ("bias.proj.w", (d, d)), ("bias.proj.b", (d,)),
        ("bias.nobias", (1, d)),
        ("bias.attn.wq", (d, d)), ("bias.attn.bq", (d,)),
        ("bias.attn.wk", (d, d)), ("bias.attn.bk", (d,)),
        ("bias.attn.wv", (d, d)), ("bias.attn.bv", (d,)),
        ("bias.out.w", (d, v)), ("bias.out.b", (v,)),
    ])
    return entries


GATE_BIAS_INIT = -4.0


def init_params(config: ModelConfig, seed: int, variant: str = "xcb") -> ModelParams:
    """Seeded scaled-normal init; layernorm gains 1, biases 0.

    Gate biases start strongly negative so the merge is near-identity
    (residual dominant) and the insert opens only as training asks for it;
    this also keeps the active and inactive forwards interchangeable early
    on.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x11]))
    params: ModelParams = {}
    for name, shape in param_manifest(config, variant):
        if name.endswith(".g"):
            data = np.ones(shape)
        elif name in ("xcb.gate.bh", "xcb.gate.bl"):
            data = np.full(shape, GATE_BIAS_INIT)
        elif name.endswith((".b", ".bq", ".bk", ".bv", ".bo", ".b1", ".b2")):
            data = np.zeros(shape)
        elif name == "bias.nobias":
            data = rng.standard_normal(shape) / math.sqrt(shape[-1])
        else:
            fan_in = shape[0] if len(shape) == 2 else shape[-1]
            data = rng.standard_normal(shape) / math.sqrt(fan_in)
        params[name] = Tensor(data, requires_grad=True)
    return params


def check_params(params: ModelParams, config: ModelConfig, variant: str = "xcb") -> None:
    manifest = dict(param_manifest(config, variant))
    for name, shape in manifest.items():
        if name not in params:
            raise ConfigError(f"missing parameter {name!r}")
        if params[name].shape != shape:
            raise ConfigError(
                f"parameter {name!r} has shape {params[name].shape}, expected {shape}"
            )
    extra = set(params) - set(manifest)
    if extra:
        raise ConfigError(f"unexpected parameters: {sorted(extra)}")


def has_xcb(params: ModelParams) -> bool:
    return "xcb.adapter.down.w" in params


def _linear(x: Tensor, params: ModelParams, prefix: str) -> Tensor:
    return T.matmul(x, params[f"{prefix}.w"]) + params[f"{prefix}.b"]


def _self_attention(x: Tensor, params: ModelParams, prefix: str) -> Tensor:
    d = x.shape[-1]
    q = T.matmul(x, params[f"{prefix}.wq"]) + params[f"{prefix}.bq"]
    k = T.matmul(x, params[f"{prefix}.wk"]) + params[f"{prefix}.bk"]
    v = T.matmul(x, params[f"{prefix}.wv"]) + params[f"{prefix}.bv"]
    scores = T.matmul(q, T.transpose(k)) * (1.0 / math.sqrt(d))
    attn = T.softmax_lastaxis(scores)
    out = T.matmul(attn, v)
    return T.matmul(out, params[f"{prefix}.wo"]) + params[f"{prefix}.bo"]


def _sa_block(x: Tensor, params: ModelParams, prefix: str) -> Tensor:
    h = T.layernorm(x + _self_attention(x, params, f"{prefix}.attn"),
                    params[f"{prefix}.ln1.g"], params[f"{prefix}.ln1.b"])
    ffn = T.matmul(T.relu(T.matmul(h, params[f"{prefix}.ffn.w1"]) + params[f"{prefix}.ffn.b1"]),
                   params[f"{prefix}.ffn.w2"]) + params[f"{prefix}.ffn.b2"]
    return T.layernorm(h + ffn, params[f"{prefix}.ln2.g"], params[f"{prefix}.ln2.b"])


def encode(features: Tensor, params: ModelParams, config: ModelConfig) -> Tensor:
    """Map [T, d_feat] frames to hidden representations [T, d_model]."""
    if features.ndim != 2 or features.shape[0] < 1:
        raise InputError(f"need at least one frame, got shape {features.shape}")
    n = features.shape[0]
    x = _linear(features, params, "encoder.in")
    if config.use_positional:
        if n > config.max_frames:
            raise InputError(f"{n} frames exceed the positional table ({config.max_frames})")
        x = x + T.gather_rows(params["encoder.pos"], np.arange(n))
    for i in range(config.encoder_layers):
        x = _sa_block(x, params, f"encoder.l{i}")
    return x


def lb_adapter(hidden: Tensor, params: ModelParams) -> Tensor:
    """Bottleneck adapter: down-project, normalize, ReLU, up-project, normalize."""
    z = _linear(hidden, params, "xcb.adapter.down")
    z = T.layernorm(z, params["xcb.adapter.ln1.g"], params["xcb.adapter.ln1.b"])
    z = T.relu(z)
    z = _linear(z, params, "xcb.adapter.up")
    return T.layernorm(z, params["xcb.adapter.ln2.g"], params["xcb.adapter.ln2.b"])


def bm_gate(hidden: Tensor, adapted: Tensor, params: ModelParams) -> Tensor:
    """Merge raw and adapter paths under sigmoid gates, keeping a residual
    from the raw input: out = hidden + g_h * hidden + g_a * adapted."""
    if hidden.shape != adapted.shape:
        raise DimensionError(f"gate inputs differ: {hidden.shape} vs {adapted.shape}")
    g_h = T.sigmoid(T.matmul(hidden, params["xcb.gate.wh"]) + params["xcb.gate.bh"])
    g_a = T.sigmoid(T.matmul(adapted, params["xcb.gate.wl"]) + params["xcb.gate.bl"])
    return hidden + g_h * hidden + g_a * adapted


def gate_values(hidden: Tensor, adapted: Tensor, params: ModelParams) -> tuple[Tensor, Tensor]:
    """The two gate activations, for inspection."""
    g_h = T.sigmoid(T.matmul(hidden, params["xcb.gate.wh"]) + params["xcb.gate.bh"])
    g_a = T.sigmoid(T.matmul(adapted, params["xcb.gate.wl"]) + params["xcb.gate.bl"])
    return g_h, g_a


def forward_hidden(features: Tensor, params: ModelParams, config: ModelConfig,
                   mode: InferenceMode) -> Tensor:
    """Encoder output, routed through the biasing insert only in ACTIVE mode."""
    h = encode(features, params, config)
    if mode is InferenceMode.ACTIVE_XCB and has_xcb(params):
        return bm_gate(h, lb_adapter(h, params), params)
    return h


# --- integrate-and-fire predictor -------------------------------------------


def fired_token_count(weights: np.ndarray, threshold: float) -> int:
    """Inference-time output length: floor(sum(w)/threshold + 0.5)."""
    return int(math.floor(float(weights.sum()) / threshold + 0.5))


def cif_alloc(weights: Tensor, n_tokens: int, threshold: float) -> Tensor:
    """Allocation matrix A[l, t]: how much of frame t's weight lands in
    output token l when accumulating left to right and firing each time the
    running total crosses another multiple of the threshold.

    Token l covers the cumulative-mass interval [l*thr, (l+1)*thr), so
    A[l, t] = clamp(min(S_t, (l+1)thr) - max(S_{t-1}, l*thr), 0) with S the
    inclusive prefix sums. Differentiable in the weights almost everywhere.
    """
    w = weights
    if w.ndim != 1:
        raise DimensionError(f"cif_alloc needs a weight vector, got {w.shape}")
    n_frames = w.shape[0]
    if n_tokens == 0:
        return T.node(np.zeros((0, n_frames)), (w,), lambda g: (np.zeros(n_frames),))
    s = np.cumsum(w.data)
    s_prev = s - w.data
    lo = threshold * np.arange(n_tokens)[:, None]
    hi = lo + threshold
    upper = np.minimum(s[None, :], hi)
    lower = np.maximum(s_prev[None, :], lo)
    alloc = np.maximum(upper - lower, 0.0)

    def vjp(g):
        active = alloc > 0.0
        # d alloc / d S_t is 1 where the upper clamp tracks S_t,
        # d alloc / d S_{t-1} is -1 where the lower clamp tracks S_{t-1}.
        d_s = (g * (active & (s[None, :] < hi))).sum(axis=0)
        d_sprev = (g * (active & (s_prev[None, :] > lo))).sum(axis=0)
        gs = d_s.copy()
        gs[:-1] -= d_sprev[1:]
        # S_t = sum of w_1..w_t, so dL/dw_u = sum_{t >= u} dL/dS_t.
        return (np.cumsum(gs[::-1])[::-1],)

    return T.node(alloc, (w,), vjp)


def cif_predict(embeddings: Tensor, params: ModelParams, config: ModelConfig,
                target_len: int | None = None) -> tuple[Tensor, Tensor]:
    """Fire weighted-average token embeddings from per-frame weights.

    Training (target_len given): weights are rescaled so they sum to
    target_len * threshold, which makes the walk emit exactly target_len
    tokens. Inference: raw weights, remainder >= threshold/2 fires a final
    partial token. Returns (fired [L, d], raw weight sum).
    """
    thr = config.cif_threshold
    w = T.reshape(T.sigmoid(_linear(embeddings, params, "predictor")), (embeddings.shape[0],))
    weight_sum = T.sum_all(w)
    if target_len is not None:
        if target_len <= 0:
            raise InputError(f"target_len must be positive, got {target_len}")
        scale = (float(target_len) * thr) * T.reciprocal(weight_sum)
        w_scaled = w * scale
        n_tokens = target_len
    else:
        w_scaled = w
        n_tokens = fired_token_count(w.data, thr)
    alloc = cif_alloc(w_scaled, n_tokens, thr)
    fired = T.matmul(alloc, embeddings) * (1.0 / thr)
    return fired, weight_sum


# --- hotword biasing branch ---------------------------------------------------


def embed_hotwords(hotwords: HotwordList, params: ModelParams,
                   config: ModelConfig) -> Tensor:
    """One row per phrase (mean token embedding, projected), plus the
    reserved no-bias row appended last."""
    phrases = hotwords.phrases
    n = len(phrases)
    if not 1 <= n <= config.max_hotwords:
        raise InputError(f"hotword list size {n} outside [1, {config.max_hotwords}]")
    rows = []
    for phrase in phrases:
        if len(phrase) == 0:
            raise InputError("empty hotword phrase")
        ids = [t.id for t in phrase]
        embs = T.gather_rows(params["bias.embed"], ids)
        mean = T.matmul(Tensor(np.full((1, len(ids)), 1.0 / len(ids))), embs)
        rows.append(_linear(mean, params, "bias.proj"))
    rows.append(params["bias.nobias"])
    return T.concat_rows(rows)


def bias_decode(acoustic: Tensor, hotword_embs: Tensor, params: ModelParams,
                config: ModelConfig, return_attention: bool = False):
    """Cross-attention from fired acoustic tokens onto the hotword rows,
    followed by the bias output head."""
    if acoustic.ndim != 2 or acoustic.shape[0] < 1:
        raise InputError(f"need at least one acoustic token, got {acoustic.shape}")
    d = acoustic.shape[-1]
    q = T.matmul(acoustic, params["bias.attn.wq"]) + params["bias.attn.bq"]
    k = T.matmul(hotword_embs, params["bias.attn.wk"]) + params["bias.attn.bk"]
    v = T.matmul(hotword_embs, params["bias.attn.wv"]) + params["bias.attn.bv"]
    attn = T.softmax_lastaxis(T.matmul(q, T.transpose(k)) * (1.0 / math.sqrt(d)))
    logits = _linear(T.matmul(attn, v), params, "bias.out")
    if return_attention:
        return logits, attn
    return logits


def decode(acoustic: Tensor, params: ModelParams, config: ModelConfig) -> Tensor:
    """Non-autoregressive decoder over fired tokens -> vocabulary logits."""
    if acoustic.ndim != 2 or acoustic.shape[0] < 1:
        raise InputError(f"need at least one acoustic token, got {acoustic.shape}")
    x = acoustic
    for i in range(config.decoder_layers):
        x = _sa_block(x, params, f"decoder.l{i}")
    return _linear(x, params, "decoder.out")


def merged_logits(asr_logits: Tensor, bias_logits: Tensor | None,
                  config: ModelConfig) -> np.ndarray:
    merged = asr_logits.data.copy()
    if bias_logits is not None:
        merged += config.bias_weight * bias_logits.data
    # The no-bias class is branch-internal bookkeeping, never an output token.
    merged[:, NO_BIAS_ID] = -np.inf
    return merged


def infer(features: Tensor, hotwords: HotwordList | None, mode: InferenceMode,
          params: ModelParams, config: ModelConfig) -> list[int]:
    """Decode one utterance to a token-id sequence.

    Per fired position the output distribution is
    softmax(asr_logits + bias_weight * bias_logits); the argmax is taken and
    <pad>/<unk> are stripped. An empty or absent hotword list skips the
    biasing branch entirely (plain ASR).
    """
    with T.no_grad():
        hidden = forward_hidden(features, params, config, mode)
        fired, _ = cif_predict(hidden, params, config, target_len=None)
        if fired.shape[0] == 0:
            return []
        asr_logits = decode(fired, params, config)
        bias_logits = None
        if hotwords is not None and len(hotwords.phrases) > 0:
            embs = embed_hotwords(hotwords, params, config)
            bias_logits = bias_decode(fired, embs, params, config)
        merged = merged_logits(asr_logits, bias_logits, config)
    ids = merged.argmax(axis=1)
    return [int(i) for i in ids if int(i) not in (PAD_ID, UNK_ID)]
