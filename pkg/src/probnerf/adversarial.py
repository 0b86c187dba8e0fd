"""Scale-conditioned convolutional patch discriminator and the GAN objective."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nn import Module

IN_EPS = 1e-5


def _unit(v):
    n = np.linalg.norm(v)
    return v / n if n > 0 else v


def spectral_normalize(weight, u=None, n_iter=1, rng=None):
    """Divide ``weight`` by its top singular value estimated by power iteration.

    The weight is viewed as a matrix (out, rest). ``u`` is the left singular
    vector estimate carried between calls; it is updated in place when given.
    Returns the normalized weight (differentiable in ``weight``) and ``u``.
    """
    weight = ad.as_tensor(weight)
    mat = weight.data.reshape(weight.shape[0], -1)
    if not np.any(mat):
        return weight, u
    if u is None:
        rng = rng or np.random.default_rng(0)
        u = _unit(rng.standard_normal(mat.shape[0]))
    for _ in range(n_iter):
        v = _unit(mat.T @ u)
        u[:] = _unit(mat @ v)
    v = _unit(mat.T @ u)
    # sigma = u^T W v with u, v held constant, as in standard spectral normalization
    sigma = (weight.reshape(mat.shape) * np.outer(u, v)).sum()
    return weight / sigma, u


def instance_norm(x):
    mu = x.mean(axis=(2, 3), keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=(2, 3), keepdims=True)
    return centered * ad.power(var + IN_EPS, -0.5)


class Discriminator(Module):
    """Stride-2 conv blocks with leaky-relu, instance norm on blocks after the first
    (skipped at 1x1 resolution), spectral norm on every weight, linear head to one logit.

    Scale conditioning: the scale is appended to the RGB input as a constant channel.
    """

    def __init__(self, patch_side, rng, widths=(32, 64, 128, 128)):
        self.patch_side = patch_side
        chans = (4,) + tuple(widths)
        self.conv_w, self.conv_b, self.sn_u = [], [], []
        self._normed = []
        side = patch_side
        for i, (cin, cout) in enumerate(zip(chans[:-1], chans[1:])):
            bound = 1.0 / np.sqrt(cin * 16)
            self.conv_w.append(Tensor(rng.uniform(-bound, bound, (cout, cin, 4, 4)),
                                      requires_grad=True))
            self.sn_u.append(Tensor(_unit(rng.standard_normal(cout))))
            side = (side + 2 - 4) // 2 + 1
            if side < 1:
                raise ValueError(f"patch side {patch_side} too small for {len(widths)} blocks")
            normed = i > 0 and side > 1
            self._normed.append(normed)
            # instance norm removes any per-channel bias, so normalized blocks carry none
            self.conv_b.append(None if normed else
                               Tensor(np.zeros((1, cout, 1, 1)), requires_grad=True))
        self._final_side = side
        n_flat = widths[-1] * side * side
        self.head_w = Tensor(rng.uniform(-1, 1, (1, n_flat)) / np.sqrt(n_flat), requires_grad=True)
        self.head_b = Tensor(np.zeros(1), requires_grad=True)
        self.sn_u.append(Tensor(np.ones(1)))
        self.refresh_spectral_norm()

    def normalized_weights(self, update=False):
        """Spectrally normalized conv and head weights; ``update`` advances power iteration."""
        out = []
        for w, u in zip(self.conv_w + [self.head_w], self.sn_u):
            buf = u.data if update else u.data.copy()
            out.append(spectral_normalize(w, buf, n_iter=1 if update else 0)[0])
        return out

    def refresh_spectral_norm(self):
        """Reset every stored vector to the exact top left singular vector of its weight.

        Called after each optimizer step. A single power iteration per step lags
        behind Adam, which grows the directions the stored vector underweights.
        """
        for w, u in zip(self.conv_w + [self.head_w], self.sn_u):
            mat = w.data.reshape(w.shape[0], -1)
            if not np.any(mat):
                continue
            _, vecs = np.linalg.eigh(mat @ mat.T)
            top = vecs[:, -1]
            u.data[:] = top if top @ u.data >= 0 else -top

    def __call__(self, patches, scale, update_sn=False):
        return self.discriminate(patches, scale, update_sn)

    def discriminate(self, patches, scale, update_sn=False):
        """Logits (B,) for patches (B, K, K, 3) with values in [0, 1] at scale ``scale``."""
        patches = ad.as_tensor(patches)
        if patches.ndim == 3:
            patches = patches.reshape((1,) + patches.shape)
        b, k1, k2, c = patches.shape
        if k1 != self.patch_side or k2 != self.patch_side or c != 3:
            raise ValueError(f"expected patches of shape (B, {self.patch_side}, "
                             f"{self.patch_side}, 3), got {patches.shape}")
        s = np.broadcast_to(np.asarray(scale, dtype=np.float64).reshape(-1), (b,))
        x = patches.transpose(0, 3, 1, 2) * 2.0 - 1.0
        s_map = np.broadcast_to(s[:, None, None, None], (b, 1, k1, k2))
        x = ad.concat([x, Tensor(s_map)], axis=1)
        weights = self.normalized_weights(update=update_sn)
        for w, bias, normed in zip(weights[:-1], self.conv_b, self._normed):
            x = ad.conv2d(x, w, stride=2, padding=1)
            x = instance_norm(x) if normed else x + bias
            x = ad.leaky_relu(x)
        flat = x.reshape(b, -1)
        return (flat @ weights[-1].transpose() + self.head_b).reshape(b)


def gan_losses(real_logits, fake_logits):
    """Discriminator loss and non-saturating generator loss from logits.

    ``log sigmoid(x) = -softplus(-x)`` keeps both terms stable for large logits.
    """
    real_logits, fake_logits = ad.as_tensor(real_logits), ad.as_tensor(fake_logits)
    loss_d = ad.softplus(-real_logits).mean() + ad.softplus(fake_logits).mean()
    loss_g = ad.softplus(-fake_logits).mean()
    return loss_d, loss_g


def top_singular_values(disc):
    """Dense-SVD top singular value of every normalized weight, using stored iteration state."""
    with ad.no_grad():
        ws = disc.normalized_weights(update=False)
    return [float(np.linalg.svd(w.data.reshape(w.shape[0], -1), compute_uv=False)[0]) for w in ws]
