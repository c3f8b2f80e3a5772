"""Edge-reweighting GNN on a frequency-adaptive backbone.

Forward pass, per node ``v`` and layer ``l = 1..L``::

    h0_v   = act(e_v @ W_e)
    w_uv   = combine(w_llm(u, v), tanh(g_l . [h_u || h_v]))     (arc u -> v)
    h_v^l  = eps * h0_v + sum_{u in N(v)} w_uv / sqrt(d_u d_v) * h_u^{l-1}
    logits = h_v^L @ W_o

with ``w_llm = tanh(w_ho)`` for a Yes verdict and ``tanh(w_he)`` for No. The
objective is mean cross-entropy on training nodes plus
``lam * max(0, w_he - w_ho + alpha)``. Gradients are derived by hand; the
verdicts are constants.
"""

from __future__ import annotations

import csv
import enum
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from hetg.discriminator.oracle import OracleVerdict, Verdict
from hetg.errors import NumericalError, ValidationError
from hetg.graph import SplitAssignment, TextGraph, k_hop_neighbors
from hetg.pairs import canonical

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "hetg-model"
CHECKPOINT_VERSION = 1


class EdgeWeightMode(enum.Enum):
    AVERAGED = "averaged"
    LLM_ONLY = "llm_only"
    GRAPH_ONLY = "graph_only"
    # averaged, with the LLM weight pinned to +1 / -1 instead of tanh(w_ho) / tanh(w_he)
    FIXED = "fixed"


@dataclass
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 500
    patience: int = 100
    lam: float = 0.1
    alpha: float = 0.3
    seed: int = 0
    weight_mode: EdgeWeightMode = EdgeWeightMode.AVERAGED
    init_w_ho: float = 1.5
    init_w_he: float = -0.5
    hidden: int = 32
    layers: int = 2
    epsilon: float = 0.4
    activation: str = "relu"
    hops: int = 1
    dropout: float = 0.0
    weight_decay: float = 0.0

    def __post_init__(self):
        self.weight_mode = EdgeWeightMode(self.weight_mode)
        if self.lam < 0 or self.alpha < 0:
            raise ValidationError("lam and alpha must be non-negative")
        if self.epochs < 1 or self.layers < 1 or self.hidden < 1:
            raise ValidationError("epochs, layers and hidden must be >= 1")
        if self.activation not in ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}")
        if self.hops not in (1, 2):
            raise ValidationError("hops must be 1 or 2")
        if not 0.0 <= self.dropout < 1.0:
            raise ValidationError("dropout must lie in [0, 1)")

    def to_dict(self):
        d = asdict(self)
        d["weight_mode"] = self.weight_mode.value
        return d


# activation -> (f, f')
ACTIVATIONS = {
    "relu": (lambda z: np.maximum(z, 0.0), lambda z: (z > 0).astype(z.dtype)),
    "tanh": (np.tanh, lambda z: 1.0 - np.tanh(z) ** 2),
}


@dataclass
class ModelParams:
    W_e: np.ndarray
    gates: list
    W_o: np.ndarray
    w_ho: float
    w_he: float
    epsilon: float = 0.4
    activation: str = "relu"

    @property
    def layers(self) -> int:
        return len(self.gates)

    @property
    def hidden(self) -> int:
        return self.W_e.shape[1]

    def arrays(self):
        """Trainable tensors in a fixed order (scalars packed last)."""
        return [self.W_e, *self.gates, self.W_o, np.array([self.w_ho, self.w_he])]

    @classmethod
    def from_arrays(cls, arrays, like):
        *head, scal = arrays
        return cls(
            W_e=head[0], gates=list(head[1:-1]), W_o=head[-1],
            w_ho=float(scal[0]), w_he=float(scal[1]),
            epsilon=like.epsilon, activation=like.activation,
        )

    def copy(self):
        return ModelParams.from_arrays([a.copy() for a in self.arrays()], self)

    @classmethod
    def init(cls, d_in, n_classes, config: TrainConfig, rng=None):
        rng = rng if rng is not None else np.random.default_rng(config.seed)

        def glorot(fan_in, fan_out, shape):
            lim = np.sqrt(6.0 / (fan_in + fan_out))
            return rng.uniform(-lim, lim, size=shape)

        h = config.hidden
        return cls(
            W_e=glorot(d_in, h, (d_in, h)),
            gates=[glorot(2 * h, 1, (2 * h,)) for _ in range(config.layers)],
            W_o=glorot(h, n_classes, (h, n_classes)),
            w_ho=float(config.init_w_ho),
            w_he=float(config.init_w_he),
            epsilon=config.epsilon,
            activation=config.activation,
        )


# -- edge weights ------------------------------------------------------------


def llm_edge_weight(verdict, params: ModelParams) -> float:
    """``tanh(w_ho)`` for a Yes verdict, ``tanh(w_he)`` for No."""
    value = verdict.value if isinstance(verdict, OracleVerdict) else Verdict(verdict)
    if value is Verdict.YES:
        return float(np.tanh(params.w_ho))
    if value is Verdict.NO:
        return float(np.tanh(params.w_he))
    raise ValidationError("unparseable verdicts carry no LLM weight")


def graph_edge_weight(h_u, h_v, gate) -> float:
    """Self-gating weight ``tanh(gate . [h_u || h_v])`` for the arc ``u -> v``."""
    h_u, h_v, gate = np.asarray(h_u, float), np.asarray(h_v, float), np.asarray(gate, float)
    if gate.shape != (h_u.size + h_v.size,):
        raise ValidationError(f"gate length {gate.size} != {h_u.size} + {h_v.size}")
    return float(np.tanh(gate @ np.concatenate([h_u, h_v])))


def combine_weights(w_llm, w_graph, mode: EdgeWeightMode):
    """Final arc weight; ``w_llm=None`` marks an unparseable verdict."""
    mode = EdgeWeightMode(mode)
    if mode is EdgeWeightMode.GRAPH_ONLY:
        return w_graph
    if mode is EdgeWeightMode.LLM_ONLY:
        if w_llm is None:
            raise ValidationError("LLM-only weighting needs a parseable verdict for every edge")
        return w_llm
    if w_llm is None:
        return w_graph
    return 0.5 * (w_llm + w_graph)


# -- forward -----------------------------------------------------------------


@dataclass(frozen=True)
class EdgeContext:
    """Arc arrays, degree normalisation and per-arc verdict codes (+1/-1/0)."""

    n: int
    src: np.ndarray
    dst: np.ndarray
    norm: np.ndarray
    code: np.ndarray


def _verdict_code(v):
    if v is None:
        return 0
    value = v.value if isinstance(v, OracleVerdict) else Verdict(v)
    return {Verdict.YES: 1, Verdict.NO: -1}.get(value, 0)


def build_context(graph: TextGraph, verdicts=None, hops=1) -> EdgeContext:
    verdicts = verdicts or {}
    if hops == 1:
        src, dst = graph.arcs()
    else:
        pairs = [(u, w) for w in range(graph.num_nodes) for u in sorted(k_hop_neighbors(graph, w, hops))]
        arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
        src, dst = arr[:, 0], arr[:, 1]
    deg = graph.degrees().astype(np.float64)
    norm = 1.0 / np.sqrt(deg[src] * deg[dst]) if src.size else np.zeros(0)
    code = np.array([_verdict_code(verdicts.get(canonical(int(u), int(v)))) for u, v in zip(src, dst)],
                    dtype=np.int8)
    return EdgeContext(graph.num_nodes, src, dst, norm, code)


@dataclass
class ForwardTrace:
    h0: np.ndarray
    hidden: list
    weights: list
    logits: np.ndarray
    # backward caches
    z0: np.ndarray = field(repr=False, default=None)
    graph_weights: list = field(repr=False, default_factory=list)
    llm_weight: np.ndarray = field(repr=False, default=None)
    drop_mask: np.ndarray = field(repr=False, default=None)


def _llm_arc_weights(ctx: EdgeContext, params: ModelParams, mode: EdgeWeightMode):
    """Per-arc LLM weight; NaN marks arcs without a usable verdict."""
    out = np.full(ctx.code.shape, np.nan)
    if mode is EdgeWeightMode.FIXED:
        yes, no = 1.0, -1.0
    else:
        yes, no = np.tanh(params.w_ho), np.tanh(params.w_he)
    out[ctx.code == 1] = yes
    out[ctx.code == -1] = no
    return out


def _combine_arrays(w_llm, w_graph, mode: EdgeWeightMode):
    if mode is EdgeWeightMode.GRAPH_ONLY:
        return w_graph
    if mode is EdgeWeightMode.LLM_ONLY:
        return w_llm
    return np.where(np.isnan(w_llm), w_graph, 0.5 * (np.nan_to_num(w_llm) + w_graph))


def _check_finite(arr, what):
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"non-finite values in {what}")


def forward_ctx(ctx: EdgeContext, X, params: ModelParams, mode, drop_mask=None) -> ForwardTrace:
    mode = EdgeWeightMode(mode)
    X = np.asarray(X, dtype=np.float64)
    if X.shape != (ctx.n, params.W_e.shape[0]):
        raise ValidationError(f"embeddings shape {X.shape} != ({ctx.n}, {params.W_e.shape[0]})")
    h = params.hidden
    for g in params.gates:
        if g.shape != (2 * h,):
            raise ValidationError(f"gate shape {g.shape} != ({2 * h},)")
    if params.W_o.shape[0] != h:
        raise ValidationError(f"W_o has {params.W_o.shape[0]} rows, expected {h}")
    if mode is EdgeWeightMode.LLM_ONLY and (ctx.code == 0).any():
        raise ValidationError("LLM-only weighting needs a parseable verdict for every edge")

    act, _ = ACTIVATIONS[params.activation]
    z0 = X @ params.W_e
    h0 = act(z0)
    if drop_mask is not None:
        h0 = h0 * drop_mask
    _check_finite(h0, "layer 0")
    w_llm = _llm_arc_weights(ctx, params, mode)
    hidden, weights, gws = [], [], []
    prev = h0
    for l, gate in enumerate(params.gates, 1):
        if ctx.src.size:
            s = prev[ctx.src] @ gate[:h] + prev[ctx.dst] @ gate[h:]
            wg = np.tanh(s)
            w = _combine_arrays(w_llm, wg, mode)
            A = sp.csr_matrix((w * ctx.norm, (ctx.dst, ctx.src)), shape=(ctx.n, ctx.n))
            cur = params.epsilon * h0 + A @ prev
        else:
            wg = w = np.zeros(0)
            cur = params.epsilon * h0
        _check_finite(cur, f"layer {l}")
        hidden.append(cur)
        weights.append(w)
        gws.append(wg)
        prev = cur
    logits = prev @ params.W_o
    _check_finite(logits, "output layer")
    return ForwardTrace(h0, hidden, weights, logits, z0, gws, w_llm, drop_mask)


def forward(graph: TextGraph, embeddings, verdicts, params: ModelParams, mode=EdgeWeightMode.AVERAGED, hops=1):
    return forward_ctx(build_context(graph, verdicts, hops), embeddings, params, mode)


# -- objective and gradients -------------------------------------------------


def _log_softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def hinge(params: ModelParams, alpha) -> float:
    return max(0.0, params.w_he - params.w_ho + alpha)


def loss(trace: ForwardTrace, labels, train_mask, params: ModelParams, config: TrainConfig) -> float:
    """Mean cross-entropy over ``train_mask`` plus the weight-margin hinge."""
    idx = np.flatnonzero(train_mask)
    if idx.size == 0:
        raise ValidationError("train mask is empty")
    logp = _log_softmax(trace.logits[idx])
    ce = -logp[np.arange(idx.size), np.asarray(labels)[idx]].mean()
    return float(ce + config.lam * hinge(params, config.alpha))


def backward(ctx: EdgeContext, X, trace: ForwardTrace, labels, train_mask, params: ModelParams,
             config: TrainConfig) -> ModelParams:
    """Reverse-mode gradients of ``loss`` with respect to every trainable tensor."""
    mode = config.weight_mode
    h = params.hidden
    idx = np.flatnonzero(train_mask)
    probs = np.exp(_log_softmax(trace.logits[idx]))
    probs[np.arange(idx.size), np.asarray(labels)[idx]] -= 1.0
    d_logits = np.zeros_like(trace.logits)
    d_logits[idx] = probs / idx.size

    top = trace.hidden[-1]
    g_Wo = top.T @ d_logits
    d_cur = d_logits @ params.W_o.T
    d_h0 = np.zeros_like(trace.h0)
    g_gates = [None] * params.layers
    g_ho = g_he = 0.0
    has_llm = ~np.isnan(trace.llm_weight)
    is_yes, is_no = ctx.code == 1, ctx.code == -1

    for l in range(params.layers - 1, -1, -1):
        prev = trace.hidden[l - 1] if l > 0 else trace.h0
        gate = params.gates[l]
        d_h0 += params.epsilon * d_cur
        d_prev = np.zeros_like(prev)
        if ctx.src.size:
            w = trace.weights[l]
            coef = w * ctx.norm
            A_T = sp.csr_matrix((coef, (ctx.src, ctx.dst)), shape=(ctx.n, ctx.n))
            d_prev += A_T @ d_cur
            d_w = np.einsum("ij,ij->i", d_cur[ctx.dst], prev[ctx.src]) * ctx.norm
            if mode is EdgeWeightMode.GRAPH_ONLY:
                d_wg, d_wl = d_w, np.zeros_like(d_w)
            elif mode is EdgeWeightMode.LLM_ONLY:
                d_wg, d_wl = np.zeros_like(d_w), d_w
            else:
                d_wg = np.where(has_llm, 0.5 * d_w, d_w)
                d_wl = np.where(has_llm, 0.5 * d_w, 0.0)
            d_s = d_wg * (1.0 - trace.graph_weights[l] ** 2)
            g_gates[l] = np.concatenate([d_s @ prev[ctx.src], d_s @ prev[ctx.dst]])
            d_prev += np.bincount(ctx.src, weights=d_s, minlength=ctx.n)[:, None] * gate[None, :h]
            d_prev += np.bincount(ctx.dst, weights=d_s, minlength=ctx.n)[:, None] * gate[None, h:]
            if mode is not EdgeWeightMode.FIXED:
                g_ho += d_wl[is_yes].sum() * (1.0 - np.tanh(params.w_ho) ** 2)
                g_he += d_wl[is_no].sum() * (1.0 - np.tanh(params.w_he) ** 2)
        else:
            g_gates[l] = np.zeros_like(gate)
        if l > 0:
            d_cur = d_prev
        else:
            d_h0 += d_prev

    if trace.drop_mask is not None:
        d_h0 = d_h0 * trace.drop_mask
    _, dact = ACTIVATIONS[params.activation]
    d_z0 = d_h0 * dact(trace.z0)
    g_We = np.asarray(X).T @ d_z0

    if params.w_he - params.w_ho + config.alpha > 0:
        g_he += config.lam
        g_ho -= config.lam
    return ModelParams(g_We, g_gates, g_Wo, float(g_ho), float(g_he), params.epsilon, params.activation)


def compute_gradients(graph, embeddings, verdicts, params, labels, train_mask, config: TrainConfig):
    ctx = build_context(graph, verdicts, config.hops)
    trace = forward_ctx(ctx, embeddings, params, config.weight_mode)
    return backward(ctx, embeddings, trace, labels, train_mask, params, config)


# -- training ----------------------------------------------------------------


class Adam:
    def __init__(self, shapes, lr=0.01, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.lr, self.betas, self.eps, self.wd = lr, betas, eps, weight_decay
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.betas
        out = []
        for i, (p, g) in enumerate(zip(params, grads)):
            if self.wd:
                g = g + self.wd * p
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * g * g
            m_hat = self.m[i] / (1 - b1 ** self.t)
            v_hat = self.v[i] / (1 - b2 ** self.t)
            out.append(p - self.lr * m_hat / (np.sqrt(v_hat) + self.eps))
        return out


HISTORY_FIELDS = ("epoch", "train_loss", "train_acc", "val_acc", "w_Ho", "w_He")


@dataclass
class FitResult:
    params: ModelParams
    history: list
    best_epoch: int
    best_val_acc: float


def _accuracy(logits, labels, mask):
    return float((logits[mask].argmax(axis=1) == labels[mask]).mean())


def fit(graph: TextGraph, embeddings, verdicts, splits: SplitAssignment, config: TrainConfig) -> FitResult:
    """Full-batch Adam with early stopping on validation accuracy.

    Returns the parameter snapshot with the best validation accuracy (earliest
    epoch on ties) and one history row per completed epoch.
    """
    X = np.asarray(embeddings, dtype=np.float64)
    labels = graph.labels
    train, val = splits.mask("train"), splits.mask("val")
    ctx = build_context(graph, verdicts, config.hops)
    rng = np.random.default_rng(config.seed)
    params = ModelParams.init(X.shape[1], len(graph.classes), config, rng)
    opt = Adam([a.shape for a in params.arrays()], lr=config.learning_rate, weight_decay=config.weight_decay)
    mode = config.weight_mode

    best = params.copy()
    best_val, best_epoch, stale = -1.0, 0, 0
    history = []
    for epoch in range(1, config.epochs + 1):
        mask = None
        if config.dropout > 0:
            keep = 1.0 - config.dropout
            mask = (rng.random((ctx.n, params.hidden)) < keep) / keep
        trace = forward_ctx(ctx, X, params, mode, drop_mask=mask)
        train_loss = loss(trace, labels, train, params, config)
        if not np.isfinite(train_loss):
            raise NumericalError(f"non-finite training loss at epoch {epoch}")
        grads = backward(ctx, X, trace, labels, train, params, config)
        eval_trace = trace if mask is None else forward_ctx(ctx, X, params, mode)
        train_acc = _accuracy(eval_trace.logits, labels, train)
        val_acc = _accuracy(eval_trace.logits, labels, val)
        history.append({
            "epoch": epoch, "train_loss": train_loss, "train_acc": train_acc,
            "val_acc": val_acc, "w_Ho": params.w_ho, "w_He": params.w_he,
        })
        # history row describes the parameters *before* this epoch's update
        if val_acc > best_val:
            best, best_val, best_epoch, stale = params.copy(), val_acc, epoch, 0
        else:
            stale += 1
            if stale >= config.patience:
                break
        new = opt.step(params.arrays(), grads.arrays())
        params = ModelParams.from_arrays(new, params)
        if not all(np.all(np.isfinite(a)) for a in new):
            raise NumericalError(f"parameters diverged at epoch {epoch}")
    return FitResult(best, history, best_epoch, best_val)


def predict(params: ModelParams, graph: TextGraph, embeddings, verdicts, mode=EdgeWeightMode.AVERAGED, hops=1):
    """Class index per node; ties go to the lowest index."""
    logits = forward(graph, embeddings, verdicts, params, mode, hops).logits
    return logits.argmax(axis=1)


# -- persistence -------------------------------------------------------------


def write_history(history, path):
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=HISTORY_FIELDS, lineterminator="\n")
        writer.writeheader()
        for row in history:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def save_checkpoint(params: ModelParams, path, config: TrainConfig | None = None, template_hash=None):
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "W_e": params.W_e.tolist(),
        "gates": [g.tolist() for g in params.gates],
        "W_o": params.W_o.tolist(),
        "w_ho": params.w_ho,
        "w_he": params.w_he,
        "epsilon": params.epsilon,
        "activation": params.activation,
        "config": config.to_dict() if config is not None else None,
        "template_hash": template_hash,
    }
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def load_checkpoint(path):
    """Return ``(params, config_or_None, template_hash)``."""
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if payload.get("format") != CHECKPOINT_FORMAT or payload.get("version") != CHECKPOINT_VERSION:
        raise ValidationError(f"{path}: not a {CHECKPOINT_FORMAT} v{CHECKPOINT_VERSION} checkpoint")
    params = ModelParams(
        W_e=np.asarray(payload["W_e"], dtype=np.float64),
        gates=[np.asarray(g, dtype=np.float64) for g in payload["gates"]],
        W_o=np.asarray(payload["W_o"], dtype=np.float64),
        w_ho=float(payload["w_ho"]),
        w_he=float(payload["w_he"]),
        epsilon=float(payload["epsilon"]),
        activation=payload["activation"],
    )
    config = TrainConfig(**payload["config"]) if payload.get("config") else None
    return params, config, payload.get("template_hash")


def with_mode(config: TrainConfig, mode) -> TrainConfig:
    return replace(config, weight_mode=EdgeWeightMode(mode))
