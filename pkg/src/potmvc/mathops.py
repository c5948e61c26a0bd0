"""Dense numeric primitives: stable softmax, log-sum-exp, cosine similarity,
and seedable split-off random streams.

All functions are pure; matrices are plain float64 numpy arrays in row-major
order.
"""

import hashlib

import numpy as np

from ._validation import as_matrix, as_vector


def softmax_rows(m):
    """Row-wise softmax with max-subtraction for overflow safety.

    Parameters
    ----------
    m : array (n, k)
        Finite real logits.

    Returns
    -------
    array (n, k) with nonnegative rows summing to 1.
    """
    m = as_matrix(m, "logits")
    shifted = m - m.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def log_sum_exp(v):
    """log(sum(exp(v))) of a non-empty vector, computed with max-shift."""
    v = as_vector(v, "log_sum_exp input")
    if v.size == 0:
        raise ValueError("log_sum_exp of an empty vector")
    hi = v.max()
    return float(hi + np.log(np.exp(v - hi).sum()))


def logsumexp_axis(a, axis):
    """Array log-sum-exp along one axis; tolerates -inf entries."""
    hi = np.max(a, axis=axis, keepdims=True)
    hi = np.where(np.isfinite(hi), hi, 0.0)
    with np.errstate(divide="ignore"):
        return np.squeeze(hi, axis=axis) + np.log(
            np.exp(a - hi).sum(axis=axis))


def cosine_sim(u, v):
    """Cosine similarity of two nonzero vectors, in [-1, 1]."""
    u = as_vector(u, "u")
    v = as_vector(v, "v")
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu == 0.0 or nv == 0.0:
        raise ValueError("cosine_sim requires nonzero-norm inputs")
    return float(np.dot(u, v) / (nu * nv))


def substream(seed, label):
    """Deterministic named PCG64 stream derived from a 64-bit master seed.

    Identical (seed, label) pairs always yield bit-identical streams; distinct
    labels yield statistically independent streams. Labels are hashed with
    SHA-256 so the mapping is stable across platforms and Python processes.
    """
    digest = hashlib.sha256(str(label).encode("utf-8")).digest()
    words = np.frombuffer(digest[:16], dtype=np.uint32)
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *map(int, words)])
    return np.random.Generator(np.random.PCG64(ss))
