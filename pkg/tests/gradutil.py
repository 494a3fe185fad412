"""Finite-difference checks shared by the unit and acceptance tests."""

import numpy as np

from ntpdetect.neural import max_relative_error, numerical_gradient


def check_model(model, batch, eps=1e-5):
    """Max relative error per parameter tensor of ``model.loss_and_grads``.

    The scalar being differentiated is the batch-mean total loss, which is
    what the analytic gradients are taken of.
    """
    _, grads = model.loss_and_grads(batch)
    params = model.params()
    loss = lambda: float(model.loss_and_grads(batch)[0]["total"].mean())
    return {name: max_relative_error(grads[name], numerical_gradient(loss, params[name], eps))
            for name in sorted(grads)}


def tiny_vocab(rng, n_templates, n_words, max_len, pad_index):
    """Random template/word matrix with row 0 playing UNKNOWN."""
    words = np.full((n_templates, max_len), pad_index, dtype=np.int64)
    for t in range(n_templates):
        k = rng.integers(1, max_len + 1)
        words[t, :k] = rng.integers(2, n_words, size=k)
    return n_words, words, pad_index
