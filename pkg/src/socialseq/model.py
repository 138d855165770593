"""LSTM sequence classifier in four wirings, with exact gradients.

Stack: per-frame FC + ReLU -> LSTM -> dropout on the final hidden state
(train mode, inverted scaling) -> softmax head(s).

  st-rel / st-dom  one softmax head over relations / domains
  mt-ind           domain and relation heads both read the hidden state
  mt-td            the relation head additionally reads the domain head's
                   softmax output (soft, differentiable coupling)

`backward` is a hand-rolled BPTT that matches the loss exactly, including
the gradient path from the relation loss through the domain softmax in
mt-td. It is checked against central finite differences in the tests.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Mapping

import numpy as np

from socialseq import __version__
from socialseq.container import read_container, write_container
from socialseq.dataset import ValidationError
from socialseq.numerics import Rng, relu, softmax
from socialseq.taxonomy import N_DOMAINS, N_RELATIONS

_CE_EPS = 1e-12


class Arch(str, Enum):
    ST_REL = "st-rel"
    ST_DOM = "st-dom"
    MT_IND = "mt-ind"
    MT_TD = "mt-td"

    @property
    def has_domain_head(self) -> bool:
        return self is not Arch.ST_REL

    @property
    def has_relation_head(self) -> bool:
        return self is not Arch.ST_DOM

    @property
    def tasks(self) -> tuple[str, ...]:
        tasks = ()
        if self.has_domain_head:
            tasks += ("domain",)
        if self.has_relation_head:
            tasks += ("relation",)
        return tasks


@dataclass(eq=False)
class DenseParams:
    w: np.ndarray  # [out, in]
    b: np.ndarray  # [out]


@dataclass(eq=False)
class LstmParams:
    """Gate parameters stacked row-wise in (input, forget, output, candidate)
    order: w [4h, in], u [4h, h], b [4h]."""

    w: np.ndarray
    u: np.ndarray
    b: np.ndarray

    @property
    def hidden(self) -> int:
        return self.u.shape[1]

    @property
    def input_dim(self) -> int:
        return self.w.shape[1]

    def _gate(self, arr: np.ndarray, g: int) -> np.ndarray:
        h = self.hidden
        return arr[g * h:(g + 1) * h]

    # Per-gate views into the stacked arrays.
    @property
    def w_input(self): return self._gate(self.w, 0)
    @property
    def w_forget(self): return self._gate(self.w, 1)
    @property
    def w_output(self): return self._gate(self.w, 2)
    @property
    def w_candidate(self): return self._gate(self.w, 3)
    @property
    def u_input(self): return self._gate(self.u, 0)
    @property
    def u_forget(self): return self._gate(self.u, 1)
    @property
    def u_output(self): return self._gate(self.u, 2)
    @property
    def u_candidate(self): return self._gate(self.u, 3)
    @property
    def b_input(self): return self._gate(self.b, 0)
    @property
    def b_forget(self): return self._gate(self.b, 1)
    @property
    def b_output(self): return self._gate(self.b, 2)
    @property
    def b_candidate(self): return self._gate(self.b, 3)


@dataclass(eq=False)
class ModelParams:
    arch: Arch
    fc_in: DenseParams
    lstm: LstmParams
    head_domain: DenseParams | None
    head_relation: DenseParams | None

    @property
    def input_dim(self) -> int:
        return self.fc_in.w.shape[1]

    @property
    def hidden(self) -> int:
        return self.lstm.hidden

    def named_arrays(self) -> Iterator[tuple[str, np.ndarray]]:
        yield "fc_in.w", self.fc_in.w
        yield "fc_in.b", self.fc_in.b
        yield "lstm.w", self.lstm.w
        yield "lstm.u", self.lstm.u
        yield "lstm.b", self.lstm.b
        if self.head_domain is not None:
            yield "head_domain.w", self.head_domain.w
            yield "head_domain.b", self.head_domain.b
        if self.head_relation is not None:
            yield "head_relation.w", self.head_relation.w
            yield "head_relation.b", self.head_relation.b

    def weight_matrices(self) -> Iterator[np.ndarray]:
        for name, arr in self.named_arrays():
            if name.endswith(".w"):
                yield arr

    def copy(self) -> "ModelParams":
        return copy.deepcopy(self)


def _glorot(rng: Rng, shape: tuple[int, int]) -> np.ndarray:
    fan_out, fan_in = shape
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def init_params(arch: Arch, input_dim: int, hidden: int, rng: Rng) -> ModelParams:
    """Uniform Glorot weights, zero biases, forget-gate bias +1."""
    arch = Arch(arch)
    fc = DenseParams(w=_glorot(rng, (hidden, input_dim)), b=np.zeros(hidden))
    lstm_w = np.concatenate([_glorot(rng, (hidden, hidden)) for _ in range(4)])
    lstm_u = np.concatenate([_glorot(rng, (hidden, hidden)) for _ in range(4)])
    lstm_b = np.zeros(4 * hidden)
    lstm_b[hidden:2 * hidden] = 1.0
    lstm = LstmParams(w=lstm_w, u=lstm_u, b=lstm_b)
    head_domain = None
    head_relation = None
    if arch.has_domain_head:
        head_domain = DenseParams(w=_glorot(rng, (N_DOMAINS, hidden)), b=np.zeros(N_DOMAINS))
    if arch.has_relation_head:
        rel_in = hidden + N_DOMAINS if arch is Arch.MT_TD else hidden
        head_relation = DenseParams(w=_glorot(rng, (N_RELATIONS, rel_in)), b=np.zeros(N_RELATIONS))
    return ModelParams(arch=arch, fc_in=fc, lstm=lstm,
                       head_domain=head_domain, head_relation=head_relation)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    # tanh form is overflow-free for any input
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass(eq=False)
class LstmTrace:
    inputs: np.ndarray  # [T, in]
    i: np.ndarray  # [T, h] gate activations
    f: np.ndarray
    o: np.ndarray
    g: np.ndarray  # candidate (tanh)
    c: np.ndarray  # cell states
    tanh_c: np.ndarray
    h: np.ndarray  # hidden states


def lstm_forward(params: LstmParams, inputs) -> tuple[np.ndarray, LstmTrace]:
    """Run the LSTM recurrence from zero initial state; returns the final
    hidden state and the per-timestep activations needed for backprop."""
    a = np.asarray(inputs, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"expected [T, in] inputs, got shape {a.shape}")
    if a.shape[0] < 1:
        raise ValueError("empty sequence")
    if a.shape[1] != params.input_dim:
        raise ValueError(f"input width {a.shape[1]} != lstm input {params.input_dim}")
    t_len, h = a.shape[0], params.hidden
    zx = a @ params.w.T + params.b  # input contribution for all t at once
    gi = np.empty((t_len, h)); gf = np.empty((t_len, h))
    go = np.empty((t_len, h)); gg = np.empty((t_len, h))
    cs = np.empty((t_len, h)); tcs = np.empty((t_len, h)); hs = np.empty((t_len, h))
    h_prev = np.zeros(h)
    c_prev = np.zeros(h)
    for t in range(t_len):
        z = zx[t] + params.u @ h_prev
        sig = _sigmoid(z[:3 * h])
        i, f, o = sig[:h], sig[h:2 * h], sig[2 * h:]
        g = np.tanh(z[3 * h:])
        c = f * c_prev + i * g
        tc = np.tanh(c)
        ht = o * tc
        gi[t], gf[t], go[t], gg[t] = i, f, o, g
        cs[t], tcs[t], hs[t] = c, tc, ht
        h_prev, c_prev = ht, c
    trace = LstmTrace(inputs=a, i=gi, f=gf, o=go, g=gg, c=cs, tanh_c=tcs, h=hs)
    return hs[-1], trace


def lstm_backward(
    params: LstmParams, trace: LstmTrace, d_h_last: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """BPTT given the gradient at the final hidden state.

    Returns (dw, du, db, d_inputs)."""
    t_len, h = trace.h.shape
    dz_all = np.empty((t_len, 4 * h))
    dh = d_h_last
    dc = np.zeros(h)
    u_t = params.u.T
    for t in range(t_len - 1, -1, -1):
        i, f, o, g = trace.i[t], trace.f[t], trace.o[t], trace.g[t]
        tc = trace.tanh_c[t]
        c_prev = trace.c[t - 1] if t > 0 else 0.0
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        dz = dz_all[t]
        dz[:h] = (dc * g) * i * (1.0 - i)
        dz[h:2 * h] = (dc * c_prev) * f * (1.0 - f)
        dz[2 * h:3 * h] = do * o * (1.0 - o)
        dz[3 * h:] = (dc * i) * (1.0 - g * g)
        dh = u_t @ dz
        dc = dc * f
    # Parameter gradients collapse to single matmuls over the timestep axis;
    # the t=0 recurrent term vanishes because h_{-1} = 0.
    dw = dz_all.T @ trace.inputs
    du = dz_all[1:].T @ trace.h[:-1] if t_len > 1 else np.zeros_like(params.u)
    db = dz_all.sum(axis=0)
    d_inputs = dz_all @ params.w
    return dw, du, db, d_inputs


@dataclass(eq=False)
class ForwardTrace:
    """Cached activations from one forward pass, enough for exact backprop."""

    x: np.ndarray  # raw frames [T, in]
    a: np.ndarray  # FC+ReLU output [T, h]
    lstm: LstmTrace
    dropout_mask: np.ndarray | None
    h_drop: np.ndarray
    domain_probs: np.ndarray | None
    relation_probs: np.ndarray | None
    relation_input: np.ndarray | None


@dataclass(eq=False)
class HeadOutputs:
    domain_probs: np.ndarray | None
    relation_probs: np.ndarray | None
    trace: ForwardTrace

    def probs(self, task: str) -> np.ndarray:
        p = self.domain_probs if task == "domain" else self.relation_probs
        if p is None:
            raise ValueError(f"model has no {task} head")
        return p


def forward(
    model: ModelParams,
    frames,
    *,
    train: bool = False,
    dropout_rate: float = 0.0,
    rng: Rng | None = None,
    dropout_mask: np.ndarray | None = None,
) -> HeadOutputs:
    """Forward pass over one sequence.

    In train mode with a positive dropout rate, an inverted-scaling dropout
    mask is drawn from `rng` (or taken from `dropout_mask`, used by the
    gradient checks) and applied to the final hidden state; eval mode is a
    pure function of (params, frames).
    """
    x = np.asarray(frames, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 1:
        raise ValueError(f"expected a nonempty [T, {model.input_dim}] array, got {x.shape}")
    if x.shape[1] != model.input_dim:
        raise ValueError(f"frame width {x.shape[1]} != model input {model.input_dim}")
    a = relu(x @ model.fc_in.w.T + model.fc_in.b)
    h_last, lstm_trace = lstm_forward(model.lstm, a)

    mask = None
    h_drop = h_last
    if train and dropout_rate > 0.0:
        if dropout_mask is not None:
            mask = dropout_mask
        else:
            if rng is None:
                raise ValueError("train-mode dropout needs an rng or an explicit mask")
            keep = 1.0 - dropout_rate
            mask = (rng.uniform(size=h_last.shape[0]) >= dropout_rate) / keep
        h_drop = h_last * mask

    domain_probs = None
    relation_probs = None
    relation_input = None
    if model.head_domain is not None:
        domain_probs = softmax(model.head_domain.w @ h_drop + model.head_domain.b)
    if model.head_relation is not None:
        if model.arch is Arch.MT_TD:
            relation_input = np.concatenate([h_drop, domain_probs])
        else:
            relation_input = h_drop
        relation_probs = softmax(model.head_relation.w @ relation_input + model.head_relation.b)

    trace = ForwardTrace(
        x=x, a=a, lstm=lstm_trace, dropout_mask=mask, h_drop=h_drop,
        domain_probs=domain_probs, relation_probs=relation_probs,
        relation_input=relation_input,
    )
    return HeadOutputs(domain_probs=domain_probs, relation_probs=relation_probs, trace=trace)


def class_weights(label_counts) -> np.ndarray:
    """Inverse-frequency class weights w_c = N / (C * max(n_c, 1)); balanced
    counts give unit weights."""
    counts = np.asarray(label_counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise ValueError("need at least one labelled example")
    return total / (len(counts) * np.maximum(counts, 1.0))


def weighted_cross_entropy(probs, label: int, weights) -> float:
    """-w[label] * ln(p[label] + 1e-12)."""
    p = np.asarray(probs, dtype=np.float64)
    if not 0 <= label < p.shape[0]:
        raise ValueError(f"label {label} out of range for {p.shape[0]} classes")
    w = np.asarray(weights, dtype=np.float64)
    return float(-w[label] * np.log(p[label] + _CE_EPS))


def l2_penalty(weight_matrices, l2: float) -> float:
    """l2/2 * sum of squared entries over the given weight matrices."""
    if l2 == 0.0:
        return 0.0
    return 0.5 * l2 * float(sum(np.sum(w * w) for w in weight_matrices))


def joint_loss(
    outputs: HeadOutputs,
    labels: tuple[int, int],
    weights: Mapping[str, np.ndarray],
    l2: float,
    model: ModelParams,
    tasks: tuple[str, ...] | None = None,
) -> float:
    """Sum of the per-head weighted cross-entropies (equal importance) plus
    the L2 penalty on weight matrices. `tasks` restricts which head losses
    are counted; defaults to every head the architecture has."""
    domain_label, relation_label = labels
    if tasks is None:
        tasks = model.arch.tasks
    total = l2_penalty(model.weight_matrices(), l2)
    for task in tasks:
        label = domain_label if task == "domain" else relation_label
        total += weighted_cross_entropy(outputs.probs(task), label, weights[task])
    return total


def _ce_softmax_grad(probs: np.ndarray, label: int, weights: np.ndarray) -> np.ndarray:
    # d/dz of -w_y ln(softmax(z)_y + eps); the p/(p+eps) factor keeps this
    # exact for the eps-guarded loss.
    scale = weights[label] * probs[label] / (probs[label] + _CE_EPS)
    dz = scale * probs
    dz[label] -= scale
    return dz


def backward(
    model: ModelParams,
    trace: ForwardTrace,
    labels: tuple[int, int],
    weights: Mapping[str, np.ndarray],
    l2: float,
    tasks: tuple[str, ...] | None = None,
) -> dict[str, np.ndarray]:
    """Exact gradients of joint_loss w.r.t. every parameter.

    In mt-td the relation loss backpropagates through the domain softmax
    into the domain head and the shared trunk."""
    domain_label, relation_label = labels
    if tasks is None:
        tasks = model.arch.tasks
    tasks = tuple(tasks)
    grads: dict[str, np.ndarray] = {}
    h = model.hidden
    d_hdrop = np.zeros(h)
    dz_domain = np.zeros(N_DOMAINS) if model.head_domain is not None else None

    if model.head_relation is not None:
        if "relation" in tasks:
            dz_rel = _ce_softmax_grad(trace.relation_probs, relation_label,
                                      weights["relation"])
            grads["head_relation.w"] = np.outer(dz_rel, trace.relation_input)
            grads["head_relation.b"] = dz_rel
            d_rel_in = model.head_relation.w.T @ dz_rel
            if model.arch is Arch.MT_TD:
                d_hdrop += d_rel_in[:h]
                dp = d_rel_in[h:]  # gradient into the domain softmax output
                pd = trace.domain_probs
                dz_domain += pd * (dp - np.dot(dp, pd))
            else:
                d_hdrop += d_rel_in
        else:
            grads["head_relation.w"] = np.zeros_like(model.head_relation.w)
            grads["head_relation.b"] = np.zeros_like(model.head_relation.b)
    elif "relation" in tasks:
        raise ValueError("relation loss requested but model has no relation head")

    if model.head_domain is not None:
        if "domain" in tasks:
            dz_domain += _ce_softmax_grad(trace.domain_probs, domain_label,
                                          weights["domain"])
        grads["head_domain.w"] = np.outer(dz_domain, trace.h_drop)
        grads["head_domain.b"] = dz_domain
        d_hdrop += model.head_domain.w.T @ dz_domain
    elif "domain" in tasks:
        raise ValueError("domain loss requested but model has no domain head")

    d_h_last = d_hdrop * trace.dropout_mask if trace.dropout_mask is not None else d_hdrop
    dw, du, db, d_a = lstm_backward(model.lstm, trace.lstm, d_h_last)
    grads["lstm.w"] = dw
    grads["lstm.u"] = du
    grads["lstm.b"] = db

    d_pre = d_a * (trace.a > 0)
    grads["fc_in.w"] = d_pre.T @ trace.x
    grads["fc_in.b"] = d_pre.sum(axis=0)

    if l2:
        for name, arr in model.named_arrays():
            if name.endswith(".w"):
                grads[name] += l2 * arr
    return grads


def save_model(path, model: ModelParams, *, manifest_hash: str = "",
               config_hash: str = "", seed: int = 0, meta: dict | None = None) -> None:
    header = {
        "kind": "model",
        "format": 1,
        "toolkit_version": __version__,
        "arch": model.arch.value,
        "input_dim": model.input_dim,
        "hidden": model.hidden,
        "manifest_hash": manifest_hash,
        "config_hash": config_hash,
        "seed": seed,
        "meta": meta or {},
    }
    write_container(path, header, list(model.named_arrays()))


def load_model(path, *, expect_manifest_hash: str | None = None) -> tuple[ModelParams, dict]:
    header, arrays = read_container(path)
    if header.get("kind") != "model":
        raise ValidationError(f"{path}: not a model container")
    if expect_manifest_hash is not None and header["manifest_hash"] != expect_manifest_hash:
        raise ValidationError(
            f"{path}: layout manifest hash mismatch "
            f"(model {header['manifest_hash'][:12]}..., dataset {expect_manifest_hash[:12]}...)"
        )
    arch = Arch(header["arch"])
    model = ModelParams(
        arch=arch,
        fc_in=DenseParams(w=arrays["fc_in.w"], b=arrays["fc_in.b"]),
        lstm=LstmParams(w=arrays["lstm.w"], u=arrays["lstm.u"], b=arrays["lstm.b"]),
        head_domain=(
            DenseParams(w=arrays["head_domain.w"], b=arrays["head_domain.b"])
            if arch.has_domain_head else None
        ),
        head_relation=(
            DenseParams(w=arrays["head_relation.w"], b=arrays["head_relation.b"])
            if arch.has_relation_head else None
        ),
    )
    h = model.hidden
    if model.head_domain is not None and model.head_domain.w.shape != (N_DOMAINS, h):
        raise ValidationError(f"{path}: domain head shape {model.head_domain.w.shape}")
    if model.head_relation is not None:
        rel_in = h + N_DOMAINS if arch is Arch.MT_TD else h
        if model.head_relation.w.shape != (N_RELATIONS, rel_in):
            raise ValidationError(
                f"{path}: relation head shape {model.head_relation.w.shape} "
                f"does not match the {arch.value} wiring"
            )
    return model, header
