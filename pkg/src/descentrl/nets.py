"""Policy and value function approximators built on the local autodiff engine.

Both networks are four layers with tanh hidden activations and a linear
output. Layer 2 is either a plain dense layer (the "mlp" kind) or a gated
recurrent unit (the "rnn" kind). Layer widths follow the sizing rule
h1 = 10*obs_dim, h3 = 10*act_dim (policy) or 5 (value),
h2 = round(sqrt(h1*h3)).

Training-time forward passes unroll the recurrent layer ``T`` steps in a
batch: the layer-1 activations for ``m`` stacked steps are regrouped into
``m/T`` segments, the recorded rollout hidden state seeds each segment's
first step, and later steps evolve under the current parameters. This is
what lets whole batches of episodes run through the GRU in parallel while
still training with backprop through time.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

LOG_2PI = math.log(2.0 * math.pi)


class ShapeError(Exception):
    pass


@dataclass(frozen=True)
class LayerSpec:
    obs_dim: int
    act_dim: int
    role: str        # "policy" | "value"
    recurrent: bool
    h1: int
    h2: int
    h3: int
    out: int


def make_spec(obs_dim: int, act_dim: int, role: str, recurrent: bool) -> LayerSpec:
    if role not in ("policy", "value"):
        raise ValueError(f"unknown network role {role!r}")
    h1 = 10 * obs_dim
    h3 = 10 * act_dim if role == "policy" else 5
    h2 = int(round(math.sqrt(h1 * h3)))
    out = act_dim if role == "policy" else 1
    return LayerSpec(obs_dim, act_dim, role, recurrent, h1, h2, h3, out)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    lim = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-lim, lim, size=(fan_in, fan_out))


def init_params(
    spec: LayerSpec, rng: np.random.Generator, init_action_std: float = 0.6
) -> dict[str, np.ndarray]:
    p: dict[str, np.ndarray] = {}
    p["w1"] = _glorot(rng, spec.obs_dim, spec.h1)
    p["b1"] = np.zeros(spec.h1)
    if spec.recurrent:
        for gate in ("z", "r", "h"):
            p[f"w{gate}"] = _glorot(rng, spec.h1, spec.h2)
            p[f"u{gate}"] = _glorot(rng, spec.h2, spec.h2)
            p[f"b{gate}"] = np.zeros(spec.h2)
    else:
        p["w2"] = _glorot(rng, spec.h1, spec.h2)
        p["b2"] = np.zeros(spec.h2)
    p["w3"] = _glorot(rng, spec.h2, spec.h3)
    p["b3"] = np.zeros(spec.h3)
    p["w4"] = _glorot(rng, spec.h3, spec.out)
    p["b4"] = np.zeros(spec.out)
    if spec.role == "policy":
        p["log_std"] = np.full(spec.act_dim, math.log(init_action_std))
    return p


def gru_step(p, h, x):
    """One GRU update. Accepts Tensors (training) or ndarrays (rollout)."""
    z = ad.sigmoid(x @ p["wz"] + h @ p["uz"] + p["bz"])
    r = ad.sigmoid(x @ p["wr"] + h @ p["ur"] + p["br"])
    cand = ad.tanh(x @ p["wh"] + (r * h) @ p["uh"] + p["bh"])
    return (1.0 - z) * h + z * cand


def forward(p, spec: LayerSpec, obs, hidden0=None, unroll: int = 1):
    """Batched forward pass over ``m`` stacked steps.

    For recurrent specs, ``obs`` rows must be grouped into segments of
    ``unroll`` consecutive steps (m divisible by unroll) and ``hidden0``
    carries the recorded hidden state for each segment's first step,
    shape (m/unroll, h2). Returns (output, hidden_trace); the trace has one
    row per input step for recurrent specs, None otherwise.
    """
    m = obs.shape[0]
    x = ad.tanh(obs @ p["w1"] + p["b1"])
    if spec.recurrent:
        T = int(unroll)
        if T < 1 or m % T != 0:
            raise ShapeError(f"batch of {m} steps does not divide into segments of {T}")
        S = m // T
        h = np.zeros((S, spec.h2)) if hidden0 is None else hidden0
        if ad.value_of(h).shape != (S, spec.h2):
            raise ShapeError(f"hidden0 must have shape {(S, spec.h2)}")
        step_offsets = unroll * np.arange(S)
        outs = []
        for t in range(T):
            xt = ad.take_rows(x, step_offsets + t)
            h = gru_step(p, h, xt)
            outs.append(h)
        stacked = ad.concat_rows(outs)  # row t*S + s  <->  segment s, step t
        s_idx = np.repeat(np.arange(S), T)
        t_idx = np.tile(np.arange(T), S)
        x = ad.take_rows(stacked, t_idx * S + s_idx)
        trace = x
    else:
        x = ad.tanh(x @ p["w2"] + p["b2"])
        trace = None
    x = ad.tanh(x @ p["w3"] + p["b3"])
    return x @ p["w4"] + p["b4"], trace


def act(p, spec: LayerSpec, obs_vec: np.ndarray, h: np.ndarray | None = None):
    """Single-step inference on raw ndarrays; returns (output, new hidden)."""
    x = np.tanh(obs_vec @ p["w1"] + p["b1"])
    if spec.recurrent:
        h_new = gru_step(p, h, x)
        x = h_new
    else:
        h_new = None
        x = np.tanh(x @ p["w2"] + p["b2"])
    x = np.tanh(x @ p["w3"] + p["b3"])
    return x @ p["w4"] + p["b4"], h_new


# -- diagonal Gaussian action distribution ----------------------------------

def sample_action(mean: np.ndarray, log_std: np.ndarray, rng: np.random.Generator):
    """Draw an action and its log density under the current policy."""
    noise = rng.standard_normal(mean.shape)
    action = mean + np.exp(log_std) * noise
    lp = -0.5 * float(noise @ noise) - float(np.sum(log_std)) - 0.5 * mean.size * LOG_2PI
    return action, lp


def gaussian_log_prob(mean, log_std, actions):
    """Log density of ``actions``; differentiable when mean/log_std are Tensors."""
    inv_std = ad.exp(-log_std)
    z = (actions - mean) * inv_std
    quad = (z * z).sum(axis=-1)
    k = ad.value_of(actions).shape[-1]
    return -0.5 * quad - log_std.sum() - 0.5 * k * LOG_2PI


def gaussian_kl(mu0, log_std0, mu1, log_std1) -> np.ndarray:
    """Per-sample KL(old || new) between diagonal Gaussians (plain numpy)."""
    var0 = np.exp(2.0 * log_std0)
    var1 = np.exp(2.0 * log_std1)
    per_axis = log_std1 - log_std0 + (var0 + (mu0 - mu1) ** 2) / (2.0 * var1) - 0.5
    return per_axis.sum(axis=-1)


# -- observation normalization ------------------------------------------------

class RunningScaler:
    """Running mean/std normalizer; identity until first update."""

    def __init__(self, dim: int):
        self.mean = np.zeros(dim)
        self.var = np.ones(dim)
        self.count = 0.0

    def update(self, batch: np.ndarray) -> None:
        batch = np.asarray(batch, dtype=float)
        n = batch.shape[0]
        if n == 0:
            return
        b_mean = batch.mean(axis=0)
        b_var = batch.var(axis=0)
        if self.count == 0.0:
            self.mean, self.var, self.count = b_mean, b_var, float(n)
            return
        tot = self.count + n
        delta = b_mean - self.mean
        new_mean = self.mean + delta * (n / tot)
        m_a = self.var * self.count
        m_b = b_var * n
        self.var = (m_a + m_b + delta**2 * self.count * n / tot) / tot
        self.mean = new_mean
        self.count = tot

    def transform(self, x: np.ndarray) -> np.ndarray:
        if self.count == 0.0:
            return np.asarray(x, dtype=float)
        return (x - self.mean) / (np.sqrt(self.var) + 1e-8)

    def state(self) -> dict[str, np.ndarray]:
        return {
            "mean": self.mean.copy(),
            "var": self.var.copy(),
            "count": np.array([self.count]),
        }

    @classmethod
    def from_state(cls, mean, var, count) -> "RunningScaler":
        s = cls(len(mean))
        s.mean = np.asarray(mean, dtype=float).copy()
        s.var = np.asarray(var, dtype=float).copy()
        s.count = float(np.asarray(count).ravel()[0])
        return s


# -- bundled network -----------------------------------------------------------

@dataclass
class Network:
    spec: LayerSpec
    params: dict[str, np.ndarray]

    @classmethod
    def build(
        cls,
        obs_dim: int,
        act_dim: int,
        role: str,
        recurrent: bool,
        rng: np.random.Generator,
        init_action_std: float = 0.6,
    ) -> "Network":
        spec = make_spec(obs_dim, act_dim, role, recurrent)
        return cls(spec, init_params(spec, rng, init_action_std))

    def zero_hidden(self) -> np.ndarray | None:
        return np.zeros(self.spec.h2) if self.spec.recurrent else None

    def forward(self, obs, hidden0=None, unroll: int = 1, params=None):
        return forward(params or self.params, self.spec, obs, hidden0, unroll)

    def act(self, obs_vec, h=None):
        return act(self.params, self.spec, obs_vec, h)

    def copy_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params.items()}

    def set_params(self, params: dict[str, np.ndarray]) -> None:
        for k in self.params:
            self.params[k][...] = params[k]


# -- checkpoint io --------------------------------------------------------------

CHECKPOINT_VERSION = 1


def save_checkpoint(
    path,
    policy: Network,
    value: Network | None,
    scaler: RunningScaler | None,
    meta: dict | None = None,
) -> None:
    """Write every parameter array plus enough metadata to rebuild exactly."""
    arrays: dict[str, np.ndarray] = {"version": np.array([CHECKPOINT_VERSION])}
    header = {
        "meta": meta or {},
        "policy_spec": _spec_dict(policy.spec),
        "value_spec": _spec_dict(value.spec) if value is not None else None,
        "has_scaler": scaler is not None,
    }
    arrays["header"] = np.frombuffer(json.dumps(header, sort_keys=True).encode(), dtype=np.uint8)
    for k, v in policy.params.items():
        arrays[f"pi.{k}"] = v
    if value is not None:
        for k, v in value.params.items():
            arrays[f"vf.{k}"] = v
    if scaler is not None:
        for k, v in scaler.state().items():
            arrays[f"scaler.{k}"] = v
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def load_checkpoint(path):
    """Return (policy, value, scaler, meta); value/scaler may be None."""
    with np.load(path, allow_pickle=False) as z:
        version = int(z["version"][0])
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        header = json.loads(bytes(z["header"]).decode())
        policy = Network(
            _spec_from_dict(header["policy_spec"]),
            {k[3:]: z[k].copy() for k in z.files if k.startswith("pi.")},
        )
        value = None
        if header["value_spec"] is not None:
            value = Network(
                _spec_from_dict(header["value_spec"]),
                {k[3:]: z[k].copy() for k in z.files if k.startswith("vf.")},
            )
        scaler = None
        if header["has_scaler"]:
            scaler = RunningScaler.from_state(
                z["scaler.mean"], z["scaler.var"], z["scaler.count"]
            )
    return policy, value, scaler, header["meta"]


def _spec_dict(spec: LayerSpec) -> dict:
    return {
        "obs_dim": spec.obs_dim,
        "act_dim": spec.act_dim,
        "role": spec.role,
        "recurrent": spec.recurrent,
    }


def _spec_from_dict(d: dict) -> LayerSpec:
    return make_spec(d["obs_dim"], d["act_dim"], d["role"], d["recurrent"])
