"""Desk-scale learnable components with hand-written reverse-mode gradients.

Per-view MLP encoders/decoders, a shared projection head, a single-head
scaled dot-product attention block over the batch (yielding structure-aware
features, the consensus representation and the pairwise structure matrix),
a cosine classifier, and Adam.

Everything is plain float64 numpy. ``forward`` returns a cache holding the
intermediate values that ``backward`` consumes; ``backward`` accumulates
exact gradients for every parameter from whichever upstream loss gradients
are supplied.
"""

from dataclasses import dataclass, field

import numpy as np

from .mathops import softmax_rows, substream

_CHECKPOINT_VERSION = 1


@dataclass
class NetworkConfig:
    view_dims: tuple
    n_classes: int
    encoder_dims: tuple = (64, 32)
    projection_dim: int = 16
    tau_l: float = 1.0

    def __post_init__(self):
        self.view_dims = tuple(int(d) for d in self.view_dims)
        self.encoder_dims = tuple(int(d) for d in self.encoder_dims)
        if len(self.encoder_dims) < 1:
            raise ValueError("encoder needs at least one layer")

    @property
    def n_views(self):
        return len(self.view_dims)

    @property
    def latent_dim(self):
        return self.encoder_dims[-1]


class ModelParams:
    """Named parameter tensors plus Adam moments and the step counter."""

    def __init__(self, config, tensors):
        self.config = config
        self.tensors = tensors
        self.m = {k: np.zeros_like(t) for k, t in tensors.items()}
        self.v = {k: np.zeros_like(t) for k, t in tensors.items()}
        self.step = 0

    def __getitem__(self, key):
        return self.tensors[key]

    def zero_like_grads(self):
        return {k: np.zeros_like(t) for k, t in self.tensors.items()}

    def names(self):
        return list(self.tensors)


def _layer_dims(config):
    enc = {}
    dec = {}
    for v, d_in in enumerate(config.view_dims):
        dims = (d_in,) + config.encoder_dims
        enc[v] = list(zip(dims[:-1], dims[1:]))
        rev = tuple(reversed(dims))
        dec[v] = list(zip(rev[:-1], rev[1:]))
    return enc, dec


def init_params(config, seed):
    """Seeded uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization."""
    tensors = {}

    def draw(name, shape):
        fan_in = shape[0] if len(shape) == 2 else max(shape[0], 1)
        bound = 1.0 / np.sqrt(fan_in)
        tensors[name] = substream(seed, f"init:{name}").uniform(
            -bound, bound, size=shape)

    enc_dims, dec_dims = _layer_dims(config)
    for v in range(config.n_views):
        for i, (a, b) in enumerate(enc_dims[v]):
            draw(f"enc{v}:W{i}", (a, b))
            draw(f"enc{v}:b{i}", (b,))
        for i, (a, b) in enumerate(dec_dims[v]):
            draw(f"dec{v}:W{i}", (a, b))
            draw(f"dec{v}:b{i}", (b,))
    d = config.latent_dim
    draw("proj:W0", (d, d))
    draw("proj:b0", (d,))
    draw("proj:W1", (d, config.projection_dim))
    draw("proj:b1", (config.projection_dim,))
    draw("attn:Wq", (config.n_views * d, d))
    draw("attn:Wk", (config.n_views * d, d))
    draw("attn:Wv", (d, d))
    draw("clf:W", (config.n_classes, d))
    tensors["clf:W"] /= np.linalg.norm(tensors["clf:W"], axis=1,
                                       keepdims=True)
    return ModelParams(config, tensors)


def _mlp_forward(x, params, prefix, n_layers):
    """Linear layers with ReLU on all but the last; returns output and the
    per-layer (input, preactivation) pairs needed for the backward pass."""
    steps = []
    a = x
    for i in range(n_layers):
        pre = a @ params[f"{prefix}:W{i}"] + params[f"{prefix}:b{i}"]
        steps.append((a, pre))
        a = np.maximum(pre, 0.0) if i < n_layers - 1 else pre
    return a, steps


def _mlp_backward(d_out, steps, params, prefix, grads):
    n_layers = len(steps)
    g = d_out
    for i in range(n_layers - 1, -1, -1):
        a, pre = steps[i]
        if i < n_layers - 1:
            g = g * (pre > 0)
        grads[f"{prefix}:W{i}"] += a.T @ g
        grads[f"{prefix}:b{i}"] += g.sum(axis=0)
        g = g @ params[f"{prefix}:W{i}"].T
    return g


def _normalize_rows(x):
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise ValueError("zero-norm row where a direction is required")
    return x / norms, norms


def _normalize_rows_backward(d_hat, x_hat, norms):
    return (d_hat - x_hat * np.sum(d_hat * x_hat, axis=1, keepdims=True)) \
        / norms


def _softmax_backward(p, dp):
    return p * (dp - np.sum(dp * p, axis=1, keepdims=True))


@dataclass
class ForwardCache:
    views: list
    z: list
    enc_steps: list
    xhat: list | None = None
    dec_steps: list | None = None
    zcat: np.ndarray | None = None
    q: np.ndarray | None = None
    k: np.ndarray | None = None
    attn: np.ndarray | None = None
    zw: list | None = None
    s: list | None = None
    u: np.ndarray | None = None
    structure: np.ndarray | None = None
    proj_steps: list | None = None
    h: list | None = None
    u_proj: np.ndarray | None = None
    proj_u_steps: list | None = None
    p_views: list | None = None
    p_consensus: np.ndarray | None = None
    clf_feat: dict = field(default_factory=dict)


def classify(features, params):
    """Cosine-classifier probabilities for a batch of feature rows."""
    logits, _ = _classify_with_cache(features, params)
    return softmax_rows(logits)


def _classify_with_cache(features, params):
    config = params.config
    f_hat, f_norms = _normalize_rows(features)
    w_hat, w_norms = _normalize_rows(params["clf:W"])
    logits = (f_hat @ w_hat.T) / config.tau_l
    return logits, (f_hat, f_norms, w_hat, w_norms)


def _classifier_backward(d_probs, probs, cache, params, grads):
    config = params.config
    d_logits = _softmax_backward(probs, d_probs)
    f_hat, f_norms, w_hat, w_norms = cache
    d_fhat = (d_logits @ w_hat) / config.tau_l
    d_what = (d_logits.T @ f_hat) / config.tau_l
    grads["clf:W"] += _normalize_rows_backward(d_what, w_hat, w_norms)
    return _normalize_rows_backward(d_fhat, f_hat, f_norms)


def encode(x, view, params):
    """Latent features of one view's inputs."""
    z, _ = _mlp_forward(np.asarray(x, dtype=np.float64), params,
                        f"enc{view}", len(params.config.encoder_dims))
    return z


def decode(z, view, params):
    """Reconstruction of one view's inputs from latent features."""
    xhat, _ = _mlp_forward(np.asarray(z, dtype=np.float64), params,
                           f"dec{view}", len(params.config.encoder_dims))
    return xhat


def structure_attention(zs, params):
    """Structure features from single-head attention over the batch.

    Concatenated per-view latents drive one scaled dot-product attention
    whose weights are shared across views; per view the value-mapped latents
    are mixed into structure-aware features S^v. Returns (S list, G, U)
    where G is the symmetrized, row-max-normalized weight matrix with unit
    diagonal and U the view-mean of the S^v.
    """
    cache = ForwardCache(views=None, z=list(zs), enc_steps=None)
    _attention_forward(cache, params)
    return cache.s, cache.structure, cache.u


def _attention_forward(cache, params):
    config = params.config
    d = config.latent_dim
    zcat = np.concatenate(cache.z, axis=1)
    q = zcat @ params["attn:Wq"]
    k = zcat @ params["attn:Wk"]
    attn = softmax_rows((q @ k.T) / np.sqrt(d))
    zw = [z @ params["attn:Wv"] for z in cache.z]
    # residual connection, as in a standard transformer block: the mixed
    # value features refine the per-view latents instead of replacing them
    s = [z + attn @ m for z, m in zip(cache.z, zw)]
    u = np.mean(s, axis=0)
    b = 0.5 * (attn + attn.T)
    row_max = b.max(axis=1)
    den = np.maximum(row_max[:, None], row_max[None, :])
    structure = b / den
    np.fill_diagonal(structure, 1.0)
    cache.zcat = zcat
    cache.q = q
    cache.k = k
    cache.attn = attn
    cache.zw = zw
    cache.s = s
    cache.u = u
    cache.structure = structure


def _attention_backward(cache, params, grads, d_s, d_u, d_structure):
    """Backprop through S^v, U and G into attention params and dZ^v."""
    config = params.config
    n_views = len(cache.z)
    d = config.latent_dim
    attn = cache.attn
    n = attn.shape[0]
    d_attn = np.zeros_like(attn)
    ds_list = [np.zeros_like(s) for s in cache.s]
    if d_u is not None:
        for v in range(n_views):
            ds_list[v] += d_u / n_views
    if d_s is not None:
        for v in range(n_views):
            if d_s[v] is not None:
                ds_list[v] += d_s[v]
    d_z = [np.zeros_like(z) for z in cache.z]
    for v in range(n_views):
        ds = ds_list[v]
        if not ds.any():
            continue
        d_z[v] += ds  # residual path
        d_attn += ds @ cache.zw[v].T
        d_zw = attn.T @ ds
        grads["attn:Wv"] += cache.z[v].T @ d_zw
        d_z[v] += d_zw @ params["attn:Wv"].T
    if d_structure is not None and d_structure.any():
        b = 0.5 * (attn + attn.T)
        row_max = b.max(axis=1)
        arg_max = b.argmax(axis=1)
        den = np.maximum(row_max[:, None], row_max[None, :])
        dg = d_structure.copy()
        np.fill_diagonal(dg, 0.0)  # diagonal is a constant
        d_b = dg / den
        d_den = -dg * b / den ** 2
        # max(s_i, s_j) routes its gradient to the larger side
        from_i = row_max[:, None] >= row_max[None, :]
        d_row_max = np.where(from_i, d_den, 0.0).sum(axis=1) \
            + np.where(~from_i.T, d_den.T, 0.0).sum(axis=1)
        d_b[np.arange(n), arg_max] += d_row_max
        d_attn += 0.5 * (d_b + d_b.T)
    if d_attn.any():
        d_scores = _softmax_backward(attn, d_attn) / np.sqrt(d)
        d_q = d_scores @ cache.k
        d_k = d_scores.T @ cache.q
        grads["attn:Wq"] += cache.zcat.T @ d_q
        grads["attn:Wk"] += cache.zcat.T @ d_k
        d_zcat = d_q @ params["attn:Wq"].T + d_k @ params["attn:Wk"].T
        offset = 0
        for v in range(n_views):
            width = cache.z[v].shape[1]
            d_z[v] += d_zcat[:, offset: offset + width]
            offset += width
    return d_z


def forward(views, params, with_decoder=True, with_heads=True):
    """Full forward pass over a batch; every intermediate lands in the cache.

    views: list of (n, D_v) arrays in the configured view order.
    """
    config = params.config
    if len(views) != config.n_views:
        raise ValueError(f"expected {config.n_views} views, got {len(views)}")
    n_layers = len(config.encoder_dims)
    z = []
    enc_steps = []
    for v, x in enumerate(views):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1] != config.view_dims[v]:
            raise ValueError(f"view {v} has width {x.shape[1]}, expected "
                             f"{config.view_dims[v]}")
        zv, steps = _mlp_forward(x, params, f"enc{v}", n_layers)
        z.append(zv)
        enc_steps.append(steps)
    cache = ForwardCache(views=[np.asarray(x, dtype=np.float64)
                                for x in views],
                         z=z, enc_steps=enc_steps)
    if with_decoder:
        cache.xhat = []
        cache.dec_steps = []
        for v in range(config.n_views):
            xhat, steps = _mlp_forward(z[v], params, f"dec{v}", n_layers)
            cache.xhat.append(xhat)
            cache.dec_steps.append(steps)
    if with_heads:
        _attention_forward(cache, params)
        cache.proj_steps = []
        cache.h = []
        for v in range(config.n_views):
            hv, steps = _mlp_forward(z[v], params, "proj", 2)
            cache.h.append(hv)
            cache.proj_steps.append(steps)
        # consensus goes through the same head so contrastive comparisons
        # against the per-view projections are dimensionally consistent
        cache.u_proj, cache.proj_u_steps = _mlp_forward(cache.u, params,
                                                        "proj", 2)
        cache.p_views = []
        for v in range(config.n_views):
            logits, cc = _classify_with_cache(z[v], params)
            cache.clf_feat[f"view{v}"] = cc
            cache.p_views.append(softmax_rows(logits))
        logits, cc = _classify_with_cache(cache.u, params)
        cache.clf_feat["consensus"] = cc
        cache.p_consensus = softmax_rows(logits)
    return cache


def backward(params, cache, d_xhat=None, d_h=None, d_u=None, d_u_proj=None,
             d_structure=None, d_p_views=None, d_p_consensus=None):
    """Accumulate parameter gradients from upstream loss gradients.

    Each argument matches the cache field of the same name (lists are per
    view); missing pieces of the cache raise if a gradient targets them.
    """
    config = params.config
    grads = params.zero_like_grads()
    n_views = config.n_views
    d_z = [np.zeros_like(z) for z in cache.z]
    if d_xhat is not None:
        if cache.dec_steps is None:
            raise ValueError("cache lacks decoder intermediates")
        for v in range(n_views):
            if d_xhat[v] is None:
                continue
            d_z[v] += _mlp_backward(d_xhat[v], cache.dec_steps[v], params,
                                    f"dec{v}", grads)
    d_u_total = np.zeros_like(cache.u) if cache.u is not None else None
    if d_u is not None:
        d_u_total += d_u
    if d_u_proj is not None:
        d_u_total += _mlp_backward(d_u_proj, cache.proj_u_steps, params,
                                   "proj", grads)
    if d_p_consensus is not None:
        d_u_total += _classifier_backward(d_p_consensus, cache.p_consensus,
                                          cache.clf_feat["consensus"],
                                          params, grads)
    if d_p_views is not None:
        for v in range(n_views):
            if d_p_views[v] is None:
                continue
            d_z[v] += _classifier_backward(d_p_views[v], cache.p_views[v],
                                           cache.clf_feat[f"view{v}"],
                                           params, grads)
    if d_h is not None:
        for v in range(n_views):
            if d_h[v] is None:
                continue
            d_z[v] += _mlp_backward(d_h[v], cache.proj_steps[v], params,
                                    "proj", grads)
    needs_attention = (d_u_total is not None and d_u_total.any()) or \
        (d_structure is not None)
    if needs_attention:
        dz_attn = _attention_backward(cache, params, grads, d_s=None,
                                      d_u=d_u_total,
                                      d_structure=d_structure)
        for v in range(n_views):
            d_z[v] += dz_attn[v]
    for v in range(n_views):
        if d_z[v].any():
            _mlp_backward(d_z[v], cache.enc_steps[v], params, f"enc{v}",
                          grads)
    return grads


def adam_step(params, grads, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    """Standard bias-corrected Adam update; cosine-classifier rows are
    re-normalized to unit length afterwards."""
    params.step += 1
    t = params.step
    for name, g in grads.items():
        m = params.m[name]
        v = params.v[name]
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        params.tensors[name] -= lr * m_hat / (np.sqrt(v_hat) + eps)
    w = params.tensors["clf:W"]
    params.tensors["clf:W"] = w / np.linalg.norm(w, axis=1, keepdims=True)
    return params


def save_params(params, path):
    """Versioned binary key->tensor checkpoint (.npz)."""
    payload = {f"tensor:{k}": v for k, v in params.tensors.items()}
    payload.update({f"adam_m:{k}": v for k, v in params.m.items()})
    payload.update({f"adam_v:{k}": v for k, v in params.v.items()})
    payload["version"] = np.array(_CHECKPOINT_VERSION)
    payload["step"] = np.array(params.step)
    np.savez(path, **payload)


def load_params(path, config):
    """Load a checkpoint; shapes must match the configuration exactly."""
    with np.load(path) as data:
        if "version" not in data or int(data["version"]) != \
                _CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version")
        expected = init_params(config, seed=0)
        tensors = {}
        for name, ref in expected.tensors.items():
            key = f"tensor:{name}"
            if key not in data:
                raise ValueError(f"{path}: missing tensor {name!r}")
            t = data[key]
            if t.shape != ref.shape:
                raise ValueError(
                    f"{path}: tensor {name!r} has shape {t.shape}, "
                    f"expected {ref.shape}")
            tensors[name] = t
        out = ModelParams(config, tensors)
        out.step = int(data["step"])
        for name in tensors:
            out.m[name] = data[f"adam_m:{name}"]
            out.v[name] = data[f"adam_v:{name}"]
    return out
