"""Actor-critic network in plain numpy with hand-written gradients.

Structure: a two-stage convolutional encoder over the polar occupancy
grid (circular padding along the azimuth axis, zero padding along
elevation) feeding a fully connected grid feature; that feature is
concatenated with the ego and neighbor blocks and passed through a
two-layer trunk; a Gaussian actor head (state-independent learned
log-std) and a scalar critic head share the trunk output.

Every layer implements forward with an activation cache and backward
with explicit gradient accumulation, so the whole model supports exact
finite-difference verification.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LOG_STD_MIN = -5.0
LOG_STD_MAX = 2.0


@dataclass
class NetConfig:
    grid_channels: int = 2
    grid_azimuth: int = 72
    grid_elevation: int = 12
    ego_dim: int = 7
    neighbor_dim: int = 42
    action_dim: int = 3
    conv_channels: tuple = (16, 32)
    conv_strides: tuple = (1, 2)
    kernel: int = 3
    grid_feature_dim: int = 256
    trunk_hidden: int = 512
    trunk_dim: int = 512
    head_hidden: int = 256
    log_std_init: float = -0.7
    dtype: str = "float32"

    @staticmethod
    def desk():
        """Reduced-width profile for desk-scale training on one core."""
        return NetConfig(conv_channels=(4, 8), grid_feature_dim=64,
                         trunk_hidden=128, trunk_dim=128, head_hidden=64)

    @staticmethod
    def tiny():
        """Few-thousand-parameter profile used by gradient verification."""
        return NetConfig(grid_azimuth=8, grid_elevation=4,
                         conv_channels=(2, 3), grid_feature_dim=12,
                         trunk_hidden=16, trunk_dim=16, head_hidden=8,
                         dtype="float64")

    @property
    def np_dtype(self):
        return np.dtype(self.dtype)

    @property
    def grid_shape(self):
        return (self.grid_channels, self.grid_azimuth, self.grid_elevation)


class Param:
    __slots__ = ("v", "g", "name")

    def __init__(self, value, name):
        self.v = value
        self.g = np.zeros_like(value)
        self.name = name


def _orthogonal(rng, shape, gain, dtype):
    flat = (shape[0], int(np.prod(shape[1:])))
    a = rng.standard_normal(size=(max(flat), min(flat)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    q = q.T if flat[0] < flat[1] else q
    # C order so a reloaded checkpoint takes the same BLAS paths
    return np.ascontiguousarray(
        (gain * q[:flat[0], :flat[1]]).reshape(shape).astype(dtype))


class Dense:
    def __init__(self, rng, n_in, n_out, name, gain=1.0, dtype=np.float32):
        self.w = Param(_orthogonal(rng, (n_in, n_out), gain, dtype), f"{name}.w")
        self.b = Param(np.zeros(n_out, dtype=dtype), f"{name}.b")
        self._x = None

    def params(self):
        return [self.w, self.b]

    def forward(self, x, cache):
        if cache:
            self._x = x
        return x @ self.w.v + self.b.v

    def backward(self, dy):
        self.w.g += self._x.T @ dy
        self.b.g += dy.sum(axis=0)
        return dy @ self.w.v.T


class Tanh:
    def __init__(self):
        self._y = None

    def params(self):
        return []

    def forward(self, x, cache):
        y = np.tanh(x)
        if cache:
            self._y = y
        return y

    def backward(self, dy):
        return dy * (1.0 - self._y * self._y)


class ConvPolar:
    """3x3 convolution over (B, C, A, E) maps: circular along A (azimuth),
    zero-padded along E (elevation), configurable stride."""

    def __init__(self, rng, c_in, c_out, stride, kernel, name, dtype=np.float32):
        assert kernel % 2 == 1
        self.k = kernel
        self.stride = stride
        self.c_in = c_in
        self.c_out = c_out
        self.w = Param(_orthogonal(rng, (c_out, c_in, kernel, kernel), 1.0, dtype),
                       f"{name}.w")
        self.b = Param(np.zeros(c_out, dtype=dtype), f"{name}.b")
        self._xpad = None
        self._out_hw = None

    def params(self):
        return [self.w, self.b]

    def out_shape(self, a, e):
        pad = self.k // 2
        ao = (a + 2 * pad - self.k) // self.stride + 1
        eo = (e + 2 * pad - self.k) // self.stride + 1
        return ao, eo

    def _pad(self, x):
        pad = self.k // 2
        x = np.concatenate([x[:, :, -pad:, :], x, x[:, :, :pad, :]], axis=2)
        return np.pad(x, ((0, 0), (0, 0), (0, 0), (pad, pad)))

    def forward(self, x, cache):
        b, c, a, e = x.shape
        ao, eo = self.out_shape(a, e)
        xpad = self._pad(x)
        if cache:
            self._xpad = xpad
            self._out_hw = (a, e, ao, eo)
        out = np.zeros((b * ao * eo, self.c_out), dtype=x.dtype)
        s = self.stride
        for di in range(self.k):
            for dj in range(self.k):
                xs = xpad[:, :, di:di + s * ao:s, dj:dj + s * eo:s]
                xs_flat = xs.transpose(0, 2, 3, 1).reshape(-1, self.c_in)
                out += xs_flat @ self.w.v[:, :, di, dj].T
        out += self.b.v
        return out.reshape(b, ao, eo, self.c_out).transpose(0, 3, 1, 2)

    def backward(self, dy):
        b = dy.shape[0]
        a, e, ao, eo = self._out_hw
        s = self.stride
        dy_flat = dy.transpose(0, 2, 3, 1).reshape(-1, self.c_out)
        self.b.g += dy_flat.sum(axis=0)
        dxpad = np.zeros_like(self._xpad)
        for di in range(self.k):
            for dj in range(self.k):
                xs = self._xpad[:, :, di:di + s * ao:s, dj:dj + s * eo:s]
                xs_flat = xs.transpose(0, 2, 3, 1).reshape(-1, self.c_in)
                self.w.g[:, :, di, dj] += dy_flat.T @ xs_flat
                dxs_flat = dy_flat @ self.w.v[:, :, di, dj]
                dxs = dxs_flat.reshape(b, ao, eo, self.c_in).transpose(0, 3, 1, 2)
                dxpad[:, :, di:di + s * ao:s, dj:dj + s * eo:s] += dxs
        pad = self.k // 2
        dx = dxpad[:, :, pad:pad + a, pad + 0:pad + e].copy()
        # fold the circular azimuth pads back onto the wrapped rows
        dx[:, :, -pad:, :] += dxpad[:, :, :pad, pad:pad + e]
        dx[:, :, :pad, :] += dxpad[:, :, pad + a:, pad:pad + e]
        return dx


class ActorCritic:
    """Policy + value network over (ego, neighbor, grid) observations."""

    def __init__(self, config: NetConfig = None, seed: int = 0):
        self.config = config or NetConfig()
        cfg = self.config
        dtype = cfg.np_dtype
        rng = np.random.default_rng(seed)

        c1, c2 = cfg.conv_channels
        s1, s2 = cfg.conv_strides
        self.conv1 = ConvPolar(rng, cfg.grid_channels, c1, s1, cfg.kernel,
                               "conv1", dtype)
        self.conv2 = ConvPolar(rng, c1, c2, s2, cfg.kernel, "conv2", dtype)
        self.act1 = Tanh()
        self.act2 = Tanh()
        a1, e1 = self.conv1.out_shape(cfg.grid_azimuth, cfg.grid_elevation)
        a2, e2 = self.conv2.out_shape(a1, e1)
        self._conv_out_shape = (c2, a2, e2)
        flat = c2 * a2 * e2

        self.grid_fc = Dense(rng, flat, cfg.grid_feature_dim, "grid_fc", 1.0, dtype)
        self.grid_act = Tanh()

        trunk_in = cfg.grid_feature_dim + cfg.ego_dim + cfg.neighbor_dim
        self.trunk1 = Dense(rng, trunk_in, cfg.trunk_hidden, "trunk1", 1.0, dtype)
        self.trunk1_act = Tanh()
        self.trunk2 = Dense(rng, cfg.trunk_hidden, cfg.trunk_dim, "trunk2", 1.0, dtype)
        self.trunk2_act = Tanh()

        self.actor_fc = Dense(rng, cfg.trunk_dim, cfg.head_hidden, "actor_fc", 1.0, dtype)
        self.actor_act = Tanh()
        self.actor_mean = Dense(rng, cfg.head_hidden, cfg.action_dim,
                                "actor_mean", 0.01, dtype)
        self.log_std = Param(np.full(cfg.action_dim, cfg.log_std_init, dtype=dtype),
                             "log_std")

        self.critic_fc = Dense(rng, cfg.trunk_dim, cfg.head_hidden, "critic_fc", 1.0, dtype)
        self.critic_act = Tanh()
        self.critic_out = Dense(rng, cfg.head_hidden, 1, "critic_out", 1.0, dtype)

        self._layers = [self.conv1, self.conv2, self.grid_fc, self.trunk1,
                        self.trunk2, self.actor_fc, self.actor_mean,
                        self.critic_fc, self.critic_out]
        self._cache_sizes = None

    # ----- parameter plumbing -----

    def params(self):
        out = []
        for layer in self._layers:
            out.extend(layer.params())
        out.append(self.log_std)
        return out

    def n_params(self):
        return sum(p.v.size for p in self.params())

    def get_flat(self):
        return np.concatenate([p.v.ravel() for p in self.params()])

    def set_flat(self, vec):
        i = 0
        for p in self.params():
            n = p.v.size
            p.v = vec[i:i + n].reshape(p.v.shape).astype(p.v.dtype)
            i += n
        if i != len(vec):
            raise ValueError("flat vector length mismatch")

    def get_flat_grad(self):
        return np.concatenate([p.g.ravel() for p in self.params()])

    def zero_grad(self):
        for p in self.params():
            p.g = np.zeros_like(p.v)

    # ----- forward / backward -----

    def effective_log_std(self):
        return np.clip(self.log_std.v, LOG_STD_MIN, LOG_STD_MAX)

    def conv_features(self, grid, cache=False):
        h = self.act1.forward(self.conv1.forward(grid, cache), cache)
        return self.act2.forward(self.conv2.forward(h, cache), cache)

    def forward(self, ego, neigh, grid, cache=False):
        """Returns (mean (B, act), log_std (act,), value (B,)).

        Raises on non-finite outputs, naming the first offending stage.
        """
        cfg = self.config
        dtype = cfg.np_dtype
        ego = np.asarray(ego, dtype=dtype).reshape(-1, cfg.ego_dim)
        neigh = np.asarray(neigh, dtype=dtype).reshape(-1, cfg.neighbor_dim)
        grid = np.asarray(grid, dtype=dtype).reshape(-1, *cfg.grid_shape)

        conv_out = self.conv_features(grid, cache)
        b = conv_out.shape[0]
        flat = conv_out.reshape(b, -1)
        gfeat = self.grid_act.forward(self.grid_fc.forward(flat, cache), cache)
        fused = np.concatenate([gfeat, ego, neigh], axis=1)
        h = self.trunk1_act.forward(self.trunk1.forward(fused, cache), cache)
        trunk = self.trunk2_act.forward(self.trunk2.forward(h, cache), cache)

        ah = self.actor_act.forward(self.actor_fc.forward(trunk, cache), cache)
        mean = self.actor_mean.forward(ah, cache)
        ch = self.critic_act.forward(self.critic_fc.forward(trunk, cache), cache)
        value = self.critic_out.forward(ch, cache)[:, 0]

        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(value))):
            stage = self._locate_nonfinite(grid, ego, neigh)
            raise FloatingPointError(f"non-finite activation at stage '{stage}'")
        return mean, self.effective_log_std(), value

    def _locate_nonfinite(self, grid, ego, neigh):
        stages = [("input.grid", grid), ("input.ego", ego), ("input.neigh", neigh)]
        for name, arr in stages:
            if not np.all(np.isfinite(arr)):
                return name
        h = self.conv1.forward(grid, False)
        if not np.all(np.isfinite(h)):
            return "conv1"
        h = self.act2.forward(self.conv2.forward(np.tanh(h), False), False)
        if not np.all(np.isfinite(h)):
            return "conv2"
        return "trunk_or_heads"

    def backward(self, dmean, dvalue, dlog_std=None):
        """Accumulate parameter gradients from output cotangents. forward()
        must have been called with cache=True on the same batch."""
        cfg = self.config
        dmean = np.asarray(dmean, dtype=cfg.np_dtype)
        dvalue = np.asarray(dvalue, dtype=cfg.np_dtype)

        d_ah = self.actor_mean.backward(dmean)
        d_trunk_a = self.actor_fc.backward(self.actor_act.backward(d_ah))
        d_ch = self.critic_out.backward(dvalue[:, None])
        d_trunk_c = self.critic_fc.backward(self.critic_act.backward(d_ch))
        d_trunk = d_trunk_a + d_trunk_c

        d_h = self.trunk2.backward(self.trunk2_act.backward(d_trunk))
        d_fused = self.trunk1.backward(self.trunk1_act.backward(d_h))

        gdim = cfg.grid_feature_dim
        d_gfeat = d_fused[:, :gdim]
        d_flat = self.grid_fc.backward(self.grid_act.backward(d_gfeat))
        d_conv = d_flat.reshape(-1, *self._conv_out_shape)
        d_c1 = self.conv2.backward(self.act2.backward(d_conv))
        self.conv1.backward(self.act1.backward(d_c1))

        if dlog_std is not None:
            # clamp gate: no gradient where the raw parameter sits outside
            inside = ((self.log_std.v > LOG_STD_MIN) & (self.log_std.v < LOG_STD_MAX))
            self.log_std.g += np.asarray(dlog_std, dtype=cfg.np_dtype) * inside

    # ----- policy interface -----

    def log_prob_entropy(self, mean, log_std, actions):
        """Diagonal-Gaussian log density per row and the distribution's
        closed-form entropy (batch independent)."""
        std = np.exp(log_std)
        z = (actions - mean) / std
        logp = -0.5 * np.sum(z * z, axis=1) - np.sum(log_std) \
            - 0.5 * len(log_std) * np.log(2.0 * np.pi)
        entropy = float(np.sum(log_std) + 0.5 * len(log_std) * np.log(2.0 * np.pi * np.e))
        return logp, entropy

    def act(self, ego, neigh, grid, rng=None, deterministic=False):
        """Sample (or take the mean) action. Returns (actions, logp, value)."""
        mean, log_std, value = self.forward(ego, neigh, grid, cache=False)
        if deterministic:
            actions = mean.copy()
        else:
            noise = rng.standard_normal(size=mean.shape)
            actions = mean + np.exp(log_std) * noise
        actions = actions.astype(np.float64)
        logp, _ = self.log_prob_entropy(mean.astype(np.float64),
                                        log_std.astype(np.float64), actions)
        return actions, logp, value.astype(np.float64)

    def value(self, ego, neigh, grid):
        _, _, v = self.forward(ego, neigh, grid, cache=False)
        return v.astype(np.float64)


def manifest(model: ActorCritic):
    """Ordered layer manifest: (name, shape, size) per parameter tensor."""
    return [(p.name, tuple(p.v.shape), int(p.v.size)) for p in model.params()]
