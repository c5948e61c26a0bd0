import numpy as np
import pytest

from potmvc.networks import NetworkConfig, forward, init_params


def flatten_params(params):
    names = sorted(params.tensors)
    vec = np.concatenate([params.tensors[n].ravel() for n in names])
    return vec, names


def write_params(params, vec, names):
    offset = 0
    for n in names:
        t = params.tensors[n]
        t[...] = vec[offset: offset + t.size].reshape(t.shape)
        offset += t.size


def flatten_grads(grads, names):
    return np.concatenate([grads[n].ravel() for n in names])


def numerical_gradient(fn, params, h=1e-4):
    """Central finite differences of a scalar function of the parameters."""
    vec, names = flatten_params(params)
    out = np.zeros_like(vec)
    for i in range(len(vec)):
        orig = vec[i]
        vec[i] = orig + h
        write_params(params, vec, names)
        hi = fn()
        vec[i] = orig - h
        write_params(params, vec, names)
        lo = fn()
        vec[i] = orig
        out[i] = (hi - lo) / (2 * h)
    write_params(params, vec, names)
    return out


def gradient_relative_error(analytic, numeric):
    denom = max(np.linalg.norm(numeric), 1e-10)
    return np.linalg.norm(analytic - numeric) / denom


@pytest.fixture
def small_net():
    """4-sample, latent-8, 3-class two-view configuration for grad checks."""
    config = NetworkConfig(view_dims=(5, 4), n_classes=3,
                           encoder_dims=(6, 8), projection_dim=5)
    params = init_params(config, seed=123)
    rng = np.random.default_rng(99)
    views = [rng.normal(size=(4, 5)), rng.normal(size=(4, 4))]
    return config, params, views


def loss_gradient_check(params, views, loss_from_cache, backward_kwargs_fn,
                        h=1e-4):
    """Compare backward() gradients with finite differences of the loss."""
    from potmvc.networks import backward

    def scalar():
        cache = forward(views, params)
        return loss_from_cache(cache).value

    cache = forward(views, params)
    grads = backward(params, cache, **backward_kwargs_fn(cache))
    _, names = flatten_params(params)
    analytic = flatten_grads(grads, names)
    numeric = numerical_gradient(scalar, params, h=h)
    return gradient_relative_error(analytic, numeric)
