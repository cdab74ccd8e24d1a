"""CNN encoder producing the three-step score sequence, plus the softmax
baseline path, parameter initialization and checkpointing.

Both tasks share the word embeddings and the two CNNs (one for entity
parts, one for context parts). Each task owns its hidden sub-layers and
output projection: the per-part pooled features concatenate into a context
group and an entity group, each goes through its own tanh hidden layer, and
the two hidden vectors concatenate before the linear output map onto the
full unified label space.
"""

import json
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np

from entrel import crf
from entrel.corpus import EmbeddingTable, LabelSpace
from entrel.kernels import (
    ParamTensor,
    conv1d,
    conv1d_backward,
    kmax_pool,
    kmax_pool_backward,
    matvec,
    scaled_uniform,
    softmax,
    tanh_backward,
)
from entrel.querygen import Query, entity_parts, split_context

TASKS = ("ec", "re")
# part-role layout per task: which parts feed the context CNN vs entity CNN
_CTX_PART_SLOTS = {"ec": (0, 2), "re": (0, 2, 3, 5)}
_ENT_PART_SLOTS = {"ec": (1,), "re": (1, 4)}

# Tuned layer sizes per (output layer, setup): nk_c, nk_e, h_c, h_e
_DEFAULT_SIZES = {
    ("crf", 1): (200, 50, 100, 50),
    ("crf", 2): (500, 100, 200, 50),
    ("crf", 3): (500, 100, 100, 50),
    ("softmax", 1): (500, 100, 100, 50),
    ("softmax", 2): (500, 100, 100, 50),
    ("softmax", 3): (500, 100, 100, 50),
}


@dataclass
class HyperParams:
    nk_c: int = 200  # context CNN filters
    nk_e: int = 50  # entity CNN filters
    h_c: int = 100  # context hidden width
    h_e: int = 50  # entity hidden width
    k: int = 3  # k-max pooling
    emb_dim: int = 50
    ctx_width: int = 3  # context filter width
    ent_width: int = 2  # entity filter width
    output_layer: str = "crf"  # "crf" or "softmax"
    dtype: str = "float64"

    def __post_init__(self):
        for name in ("nk_c", "nk_e", "h_c", "h_e", "k", "emb_dim", "ctx_width", "ent_width"):
            if getattr(self, name) < 1:
                raise ValueError(f"hyperparameter {name} must be positive")
        if self.output_layer not in ("crf", "softmax"):
            raise ValueError(f"unknown output layer {self.output_layer!r}")

    @classmethod
    def defaults_for(cls, setup: int, output_layer: str, **overrides) -> "HyperParams":
        nk_c, nk_e, h_c, h_e = _DEFAULT_SIZES[(output_layer, setup)]
        base = dict(nk_c=nk_c, nk_e=nk_e, h_c=h_c, h_e=h_e, output_layer=output_layer)
        base.update(overrides)
        return cls(**base)

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32

    def ctx_in(self, task: str) -> int:
        return len(_CTX_PART_SLOTS[task]) * self.k * self.nk_c

    def ent_in(self, task: str) -> int:
        return len(_ENT_PART_SLOTS[task]) * self.k * self.nk_e


class ModelParams:
    """All trainable tensors with paired gradient buffers.

    Tensor order is fixed; checkpoints and init draws depend on it.
    """

    def __init__(self, hyper: HyperParams, label_space: LabelSpace,
                 embeddings: EmbeddingTable, tensors: dict):
        self.hyper = hyper
        self.label_space = label_space
        self.embeddings = embeddings
        self._tensors = tensors
        names = list(tensors)
        if len(set(names)) != len(names):
            raise ValueError("duplicate tensor names")

    def __getitem__(self, name: str) -> ParamTensor:
        return self._tensors[name]

    def all_tensors(self):
        return list(self._tensors.values())

    def trainable_tensors(self):
        out = []
        for tensor in self._tensors.values():
            if tensor.name == "embeddings" and not self.embeddings.trainable:
                continue
            if tensor.name == "transitions" and self.hyper.output_layer != "crf":
                continue
            out.append(tensor)
        return out

    def zero_grads(self):
        for tensor in self._tensors.values():
            tensor.zero_grad()

    def task_tensors(self, task: str):
        return (
            self[f"{task}_ctx_w"],
            self[f"{task}_ctx_b"],
            self[f"{task}_ent_w"],
            self[f"{task}_ent_b"],
            self[f"{task}_out"],
        )

    @property
    def transitions(self) -> ParamTensor:
        return self["transitions"]


def tensor_shapes(hyper: HyperParams, label_space: LabelSpace, n_emb_rows: int):
    """Ordered (name, shape) pairs for every tensor in the model."""
    n = label_space.n_classes
    shapes = [
        ("embeddings", (n_emb_rows, hyper.emb_dim)),
        ("ctx_filters", (hyper.nk_c, hyper.ctx_width, hyper.emb_dim)),
        ("ctx_bias", (hyper.nk_c,)),
        ("ent_filters", (hyper.nk_e, hyper.ent_width, hyper.emb_dim)),
        ("ent_bias", (hyper.nk_e,)),
    ]
    for task in TASKS:
        shapes.extend(
            [
                (f"{task}_ctx_w", (hyper.ctx_in(task), hyper.h_c)),
                (f"{task}_ctx_b", (hyper.h_c,)),
                (f"{task}_ent_w", (hyper.ent_in(task), hyper.h_e)),
                (f"{task}_ent_b", (hyper.h_e,)),
                (f"{task}_out", (hyper.h_c + hyper.h_e, n)),
            ]
        )
    shapes.append(("transitions", (label_space.size_with_tags, label_space.size_with_tags)))
    return shapes


def init_params(hyper: HyperParams, label_space: LabelSpace,
                embeddings: EmbeddingTable, seed: int) -> ModelParams:
    """Deterministic init: scaled-uniform weights, zero biases, zero Q."""
    rng = np.random.default_rng(seed)
    dtype = hyper.np_dtype
    if embeddings.dim != hyper.emb_dim:
        raise ValueError(
            f"embedding dim {embeddings.dim} != configured emb_dim {hyper.emb_dim}"
        )
    embeddings.matrix = embeddings.matrix.astype(dtype)
    tensors = {}
    for name, shape in tensor_shapes(hyper, label_space, embeddings.n_rows):
        if name == "embeddings":
            value = embeddings.matrix
        elif name.endswith(("_bias", "_b")) or name == "transitions":
            value = np.zeros(shape, dtype=dtype)
        elif name.endswith("filters"):
            nk, width, emb = shape
            value = scaled_uniform(rng, shape, width * emb, nk, dtype=dtype)
        else:
            value = scaled_uniform(rng, shape, shape[0], shape[1], dtype=dtype)
        tensors[name] = ParamTensor(name, value)
    return ModelParams(hyper, label_space, embeddings, tensors)


def _embed_part(tokens, params: ModelParams, width: int):
    """Embed one token sequence, right-padding with zero rows up to the
    filter width. Returns (row ids with -1 for padding, [max(L,w), emb])."""
    table = params.embeddings
    emb = params["embeddings"].value
    ids = [table.lookup(tok) for tok in tokens]
    rows = max(len(ids), width)
    mat = np.zeros((rows, emb.shape[1]), dtype=emb.dtype)
    if ids:
        mat[: len(ids)] = emb[ids]
    padded_ids = np.array(ids + [-1] * (rows - len(ids)), dtype=np.intp)
    return padded_ids, mat


def _run_cnn(parts, params, filters, bias, width, k):
    """Embed, convolve and pool each part; returns flat features + cache."""
    flats, caches = [], []
    for tokens in parts:
        ids, mat = _embed_part(tokens, params, width)
        conv = conv1d(mat, filters.value, bias.value)
        pooled, sel = kmax_pool(conv, k)
        flats.append(pooled.ravel())
        caches.append({"ids": ids, "mat": mat, "sel": sel,
                       "conv_rows": conv.shape[0], "pooled": pooled})
    return np.concatenate(flats), caches


def encode_task(parts, task: str, params: ModelParams):
    """Task representation h_z for the given sentence parts.

    The entity-classification path takes 3 parts (left, entity, right); the
    relation path takes the 6-part context split. Entity parts go through
    the entity CNN, context parts through the context CNN; each group's
    pooled features feed a tanh hidden layer and the two hidden vectors
    concatenate.
    """
    hyper = params.hyper
    expected = 3 if task == "ec" else 6
    if task not in TASKS or len(parts) != expected:
        raise ValueError(f"task {task!r} expects {expected} parts, got {len(parts)}")
    ctx_parts = [parts[i] for i in _CTX_PART_SLOTS[task]]
    ent_parts = [parts[i] for i in _ENT_PART_SLOTS[task]]
    ctx_w, ctx_b, ent_w, ent_b, _ = params.task_tensors(task)

    ctx_concat, ctx_caches = _run_cnn(
        ctx_parts, params, params["ctx_filters"], params["ctx_bias"], hyper.ctx_width, hyper.k
    )
    ent_concat, ent_caches = _run_cnn(
        ent_parts, params, params["ent_filters"], params["ent_bias"], hyper.ent_width, hyper.k
    )
    h_ctx = np.tanh(matvec(ctx_w.value.T, ctx_concat) + ctx_b.value)
    h_ent = np.tanh(matvec(ent_w.value.T, ent_concat) + ent_b.value)
    h = np.concatenate([h_ctx, h_ent])
    cache = {
        "task": task,
        "ctx_concat": ctx_concat,
        "ent_concat": ent_concat,
        "ctx_caches": ctx_caches,
        "ent_caches": ent_caches,
        "h_ctx": h_ctx,
        "h_ent": h_ent,
    }
    return h, cache


def score_task(h, task: str, params: ModelParams):
    """Linear map from the task representation onto the unified label space."""
    out = params.task_tensors(task)[4]
    return matvec(out.value.T, h)


def _backward_cnn(grad_concat, caches, params, filters, bias, k):
    """Split the concatenated feature gradient per part and push it back
    through pooling, convolution and the embedding lookup."""
    nk = filters.value.shape[0]
    per_part = k * nk
    emb = params["embeddings"]
    scatter = params.embeddings.trainable
    for idx, cache in enumerate(caches):
        grad_flat = grad_concat[idx * per_part : (idx + 1) * per_part]
        grad_pooled = grad_flat.reshape(k, nk)
        grad_conv = kmax_pool_backward(grad_pooled, cache["sel"], cache["conv_rows"])
        grad_seq, grad_filters, grad_bias = conv1d_backward(
            grad_conv, cache["mat"], filters.value
        )
        filters.grad += grad_filters
        bias.grad += grad_bias
        if scatter:
            ids = cache["ids"]
            real = ids >= 0
            if real.any():
                np.add.at(emb.grad, ids[real], grad_seq[: len(ids)][real])


def encode_task_backward(grad_h, cache, params: ModelParams):
    """Accumulate gradients of one encode_task call into the param buffers."""
    hyper = params.hyper
    task = cache["task"]
    ctx_w, ctx_b, ent_w, ent_b, _ = params.task_tensors(task)
    h_c = hyper.h_c
    grad_pre_ctx = tanh_backward(cache["h_ctx"], grad_h[:h_c])
    grad_pre_ent = tanh_backward(cache["h_ent"], grad_h[h_c:])
    ctx_w.grad += np.outer(cache["ctx_concat"], grad_pre_ctx)
    ctx_b.grad += grad_pre_ctx
    ent_w.grad += np.outer(cache["ent_concat"], grad_pre_ent)
    ent_b.grad += grad_pre_ent
    grad_ctx_concat = ctx_w.value @ grad_pre_ctx
    grad_ent_concat = ent_w.value @ grad_pre_ent
    _backward_cnn(grad_ctx_concat, cache["ctx_caches"], params,
                  params["ctx_filters"], params["ctx_bias"], hyper.k)
    _backward_cnn(grad_ent_concat, cache["ent_caches"], params,
                  params["ent_filters"], params["ent_bias"], hyper.k)


def query_parts(query: Query):
    """(e1 EC parts, RE six-part split, e2 EC parts) for one query."""
    tokens = query.sentence.tokens
    e1 = entity_parts(tokens, query.span_i)
    e2 = entity_parts(tokens, query.span_j)
    re_parts = split_context(tokens, query.span_i, query.span_j).parts()
    return e1, re_parts, e2


def forward_query(query: Query, params: ModelParams):
    """Score sequence d (3 x N): EC scores for e1, RE scores, EC scores for e2."""
    e1_parts, re_parts, e2_parts = query_parts(query)
    h1, c1 = encode_task(list(e1_parts), "ec", params)
    hr, cr = encode_task(re_parts, "re", params)
    h2, c2 = encode_task(list(e2_parts), "ec", params)
    d = np.stack(
        [score_task(h1, "ec", params), score_task(hr, "re", params), score_task(h2, "ec", params)]
    )
    cache = {"h": (h1, hr, h2), "enc": (c1, cr, c2)}
    return d, cache


def backward_query(grad_d, cache, params: ModelParams):
    """Push a gradient on the score sequence back into all parameters."""
    if cache is None:
        raise RuntimeError("backward_query called before forward_query")
    tasks = ("ec", "re", "ec")
    for row in range(3):
        task = tasks[row]
        out = params.task_tensors(task)[4]
        h = cache["h"][row]
        out.grad += np.outer(h, grad_d[row])
        grad_h = out.value @ grad_d[row]
        encode_task_backward(grad_h, cache["enc"][row], params)


def gold_indices(query: Query, label_space: LabelSpace):
    return (
        label_space.unified(query.gold_t1),
        label_space.unified(query.gold_rel),
        label_space.unified(query.gold_t2),
    )


def crf_loss_and_grad(d, params: ModelParams, gold):
    loss, grad_d, grad_q = crf.nll_and_gradients(d, params.transitions.value, gold)
    return loss, grad_d, grad_q


def softmax_forward(query: Query, params: ModelParams):
    """Baseline distributions: task-restricted score slices normalized
    independently. Returns (p1, pr, p2, d, cache)."""
    ls = params.label_space
    d, cache = forward_query(query, params)
    p1 = softmax(d[0, : ls.n_ec])
    pr = softmax(d[1, ls.n_ec :])
    p2 = softmax(d[2, : ls.n_ec])
    return p1, pr, p2, d, cache


def softmax_loss_and_grad(d, label_space: LabelSpace, gold):
    """Sum of the three slice cross-entropies and its gradient on d."""
    n_ec = label_space.n_ec
    y1, y2, y3 = gold
    grad_d = np.zeros_like(d)
    loss = 0.0
    for row, (lo, hi, target) in enumerate(
        [(0, n_ec, y1), (n_ec, d.shape[1], y2), (0, n_ec, y3)]
    ):
        probs = softmax(d[row, lo:hi])
        local = target - lo
        if not (0 <= local < hi - lo):
            raise ValueError(f"gold index {target} outside task slice [{lo},{hi})")
        loss -= float(np.log(probs[local]))
        grad_d[row, lo:hi] = probs
        grad_d[row, lo + local] -= 1.0
    return loss, grad_d


def decode_query(d, params: ModelParams, masked: bool = False):
    """Predicted (t1, r, t2) unified indices for one score sequence."""
    ls = params.label_space
    if params.hyper.output_layer == "softmax":
        n_ec = ls.n_ec
        return (
            int(np.argmax(d[0, :n_ec])),
            n_ec + int(np.argmax(d[1, n_ec:])),
            int(np.argmax(d[2, :n_ec])),
        )
    allowed = ls.position_mask() if masked else None
    best, _ = crf.viterbi(d, params.transitions.value, allowed)
    return best


def predict_queries(queries, params: ModelParams, masked: bool = False):
    """Decode a batch of queries into unified (t1, r, t2) index triples."""
    preds = []
    for query in queries:
        d, _ = forward_query(query, params)
        preds.append(decode_query(d, params, masked))
    return preds


# ---------------------------------------------------------------------------
# Checkpointing: manifest.json + params.bin (little-endian IEEE-754 values
# concatenated row-major in manifest order).

MANIFEST_NAME = "manifest.json"
PARAMS_NAME = "params.bin"
_DTYPE_CODES = {"float64": "<f8", "float32": "<f4"}


def save_checkpoint(directory, params: ModelParams, seed: int, extra: dict | None = None):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    hyper = params.hyper
    ls = params.label_space
    code = _DTYPE_CODES[hyper.dtype]
    entries = []
    offset = 0
    blobs = []
    for tensor in params.all_tensors():
        data = np.ascontiguousarray(tensor.value, dtype=code).tobytes()
        entries.append({"name": tensor.name, "shape": list(tensor.shape), "offset": offset})
        offset += len(data)
        blobs.append(data)
    table = params.embeddings
    manifest = {
        "format": 1,
        "seed": seed,
        "dtype": hyper.dtype,
        "hyperparams": asdict(hyper),
        "ec_labels": list(ls.ec_labels),
        "re_labels": list(ls.re_labels),
        "vocab": [[word, row] for word, row in table.words_in_row_order()],
        "unk_row": table.unk_row,
        "embeddings_trainable": table.trainable,
        "tensors": entries,
        "total_bytes": offset,
    }
    if extra:
        manifest["extra"] = extra
    with open(directory / PARAMS_NAME, "wb") as handle:
        for blob in blobs:
            handle.write(blob)
    with open(directory / MANIFEST_NAME, "w", encoding="utf-8") as handle:
        json.dump(manifest, handle, sort_keys=True, separators=(",", ":"))
        handle.write("\n")


def load_checkpoint(directory):
    """Load a checkpoint directory; validates shapes against the manifest."""
    directory = Path(directory)
    with open(directory / MANIFEST_NAME, encoding="utf-8") as handle:
        manifest = json.load(handle)
    hyper = HyperParams(**manifest["hyperparams"])
    ls = LabelSpace(tuple(manifest["ec_labels"]), tuple(manifest["re_labels"]))
    code = _DTYPE_CODES[manifest["dtype"]]
    raw = (directory / PARAMS_NAME).read_bytes()
    if len(raw) != manifest["total_bytes"]:
        raise ValueError(
            f"checkpoint payload is {len(raw)} bytes, manifest says {manifest['total_bytes']}"
        )
    vocab = {word: row for word, row in manifest["vocab"]}
    tensors = {}
    for entry in manifest["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = entry["offset"]
        value = np.frombuffer(raw, dtype=code, count=count, offset=start).reshape(shape).copy()
        tensors[entry["name"]] = ParamTensor(entry["name"], value)
    expected = dict(tensor_shapes(hyper, ls, tensors["embeddings"].shape[0]))
    for name, tensor in tensors.items():
        if name not in expected or tuple(expected[name]) != tensor.shape:
            raise ValueError(f"tensor {name} has shape {tensor.shape}, manifest/model disagree")
    embeddings = EmbeddingTable(
        hyper.emb_dim,
        vocab,
        tensors["embeddings"].value,
        manifest["unk_row"],
        manifest["embeddings_trainable"],
    )
    params = ModelParams(hyper, ls, embeddings, tensors)
    meta = {"seed": manifest["seed"], "extra": manifest.get("extra")}
    return params, meta
