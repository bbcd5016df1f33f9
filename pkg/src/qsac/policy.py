"""Squashed-Gaussian policies: the data re-uploading circuit policy and its MLP baseline.

Quantum policy layout, per re-uploading layer ``l`` and qubit ``i``::

    RX(scale[l, i] * arctan(obs[i % obs_dim]))   # encoder, scale only if enabled
    RY(theta[l, i])                              # variational
    CZ ring (i, i+1 mod n), unique pairs only

followed by <Z_i> on every qubit and a single affine head producing
``mu`` and ``log_std`` (each ``act_dim`` wide). Circuit parameter vector layout is
``[theta (n_layers*n_qubits), scale (n_layers*n_qubits, if enabled)]``.

Both policies expose the same backend surface to the trainer:
``distribution(obs) -> (mu, log_std, cache)`` and
``backward(cache, grad_mu, grad_log_std) -> flat grads``.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import qsim
from .errors import ConfigurationError, StructuralError
from .nn import DEFAULT_HIDDEN, DenseNet, mlp_param_count
from .qsim import CZ, CircuitSpec, DataFeature, Gate, ObservableSet, TrainableParam

LOG_STD_BOUNDS = (-5.0, 2.0)
TANH_EPS = 1e-6
HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)
CHECKPOINT_VERSION = 1


@dataclass
class ReuploadingPolicyConfig:
    obs_dim: int
    act_dim: int
    n_layers: int = 2
    n_qubits: int | None = None
    use_input_scaling: bool = False
    log_std_bounds: tuple[float, float] = LOG_STD_BOUNDS

    def __post_init__(self):
        if self.n_qubits is None:
            self.n_qubits = self.obs_dim
        self.log_std_bounds = tuple(float(b) for b in self.log_std_bounds)
        if self.obs_dim < 1 or self.act_dim < 1:
            raise ConfigurationError("obs_dim and act_dim must be >= 1")
        if self.n_layers < 1:
            raise ConfigurationError("n_layers must be >= 1")
        if not 1 <= self.n_qubits <= qsim.MAX_QUBITS:
            raise ConfigurationError(f"n_qubits must be in [1, {qsim.MAX_QUBITS}]")
        if self.n_qubits < self.obs_dim:
            raise ConfigurationError(
                f"{self.obs_dim} features need at least {self.obs_dim} qubits, got {self.n_qubits}")
        lo, hi = self.log_std_bounds
        if not lo < hi:
            raise ConfigurationError("log_std_bounds must satisfy min < max")

    @property
    def n_circuit_params(self) -> int:
        return self.n_layers * self.n_qubits * (2 if self.use_input_scaling else 1)

    @property
    def n_head_params(self) -> int:
        return 2 * self.act_dim * self.n_qubits + 2 * self.act_dim


@dataclass
class PolicyParams:
    circuit_params: np.ndarray
    head_weights: np.ndarray   # (2*act_dim, n_qubits)
    head_bias: np.ndarray      # (2*act_dim,)

    def flat(self) -> np.ndarray:
        return np.concatenate([self.circuit_params, self.head_weights.ravel(), self.head_bias])

    @classmethod
    def from_flat(cls, cfg: ReuploadingPolicyConfig, flat) -> "PolicyParams":
        flat = np.asarray(flat, dtype=np.float64)
        nc, nq, out = cfg.n_circuit_params, cfg.n_qubits, 2 * cfg.act_dim
        if flat.shape != (nc + out * nq + out,):
            raise StructuralError(f"expected {nc + out * nq + out} parameters, got {flat.shape}")
        return cls(flat[:nc].copy(), flat[nc:nc + out * nq].reshape(out, nq).copy(),
                   flat[nc + out * nq:].copy())

    def count(self) -> int:
        return self.circuit_params.size + self.head_weights.size + self.head_bias.size


@dataclass
class PolicyOutput:
    mu: np.ndarray
    sigma: np.ndarray
    pre_squash_sample: np.ndarray
    action: np.ndarray
    log_prob: float | np.ndarray


def build_reuploading_circuit(cfg: ReuploadingPolicyConfig) -> CircuitSpec:
    n, L = cfg.n_qubits, cfg.n_layers
    gates = []
    ring = []
    if n > 1:
        seen = set()
        for i in range(n):
            pair = (i, (i + 1) % n)
            if frozenset(pair) not in seen:
                seen.add(frozenset(pair))
                ring.append(pair)
    for layer in range(L):
        for i in range(n):
            scale = L * n + layer * n + i if cfg.use_input_scaling else None
            gates.append(Gate("RX", i, angle_source=DataFeature(i % cfg.obs_dim, scale)))
        for i in range(n):
            gates.append(Gate("RY", i, angle_source=TrainableParam(layer * n + i)))
        gates.extend(CZ(a, b) for a, b in ring)
    return CircuitSpec(n, gates, cfg.n_circuit_params, cfg.obs_dim)


def init_policy_params(cfg: ReuploadingPolicyConfig, rng) -> PolicyParams:
    n_var = cfg.n_layers * cfg.n_qubits
    circuit = rng.uniform(-np.pi, np.pi, n_var)
    if cfg.use_input_scaling:
        circuit = np.concatenate([circuit, np.ones(n_var)])
    bound = 1.0 / math.sqrt(cfg.n_qubits)
    weights = rng.uniform(-bound, bound, (2 * cfg.act_dim, cfg.n_qubits))
    return PolicyParams(circuit, weights, np.zeros(2 * cfg.act_dim))


def encode_features(obs) -> np.ndarray:
    """Map unbounded observations into (-pi/2, pi/2) rotation angles."""
    return np.arctan(np.asarray(obs, dtype=np.float64))


def _rows(obs, width):
    obs = np.asarray(obs, dtype=np.float64)
    single = obs.ndim == 1
    rows = obs[None, :] if single else obs
    if rows.ndim != 2 or rows.shape[1] != width:
        raise StructuralError(f"observation of length {width} expected, got shape {obs.shape}")
    return rows, single


def _head(cfg, params: PolicyParams, z):
    h = z @ params.head_weights.T + params.head_bias
    lo, hi = cfg.log_std_bounds
    raw = h[:, cfg.act_dim:]
    return h[:, :cfg.act_dim], np.clip(raw, lo, hi), (raw > lo) & (raw < hi)


def circuit_features(cfg, spec, params: PolicyParams, obs):
    """Return (encoded features, <Z> per qubit) for a (B, obs_dim) block."""
    feats = encode_features(obs)
    amps = qsim.evolve_batch(spec, params.circuit_params, feats)
    return feats, qsim.z_expectations(amps, spec.n_qubits, range(spec.n_qubits))


def policy_forward(cfg: ReuploadingPolicyConfig, params: PolicyParams, obs, spec=None):
    """Mean and standard deviation of the pre-squash Gaussian for one or more observations."""
    spec = build_reuploading_circuit(cfg) if spec is None else spec
    rows, single = _rows(obs, cfg.obs_dim)
    _, z = circuit_features(cfg, spec, params, rows)
    mu, log_std, _ = _head(cfg, params, z)
    sigma = np.exp(log_std)
    return (mu[0], sigma[0]) if single else (mu, sigma)


def log_prob(mu, sigma, pre_squash):
    """Log-density of ``tanh(u)`` where ``u ~ N(mu, sigma)``, summed over the last axis."""
    mu, sigma, u = (np.asarray(a, dtype=np.float64) for a in (mu, sigma, pre_squash))
    t = np.tanh(u)
    terms = (-np.log(sigma) - HALF_LOG_2PI - 0.5 * ((u - mu) / sigma) ** 2
             - np.log(1.0 - t * t + TANH_EPS))
    return terms.sum(axis=-1)


def sample_action(mu, sigma, noise) -> PolicyOutput:
    mu, sigma, noise = (np.asarray(a, dtype=np.float64) for a in (mu, sigma, noise))
    if np.any(sigma <= 0):
        raise ConfigurationError("sigma must be strictly positive")
    u = mu + sigma * noise
    return PolicyOutput(mu, sigma, u, np.tanh(u), log_prob(mu, sigma, u))


def policy_gradient(cfg: ReuploadingPolicyConfig, params: PolicyParams, obs, upstream,
                    spec=None) -> PolicyParams:
    """Gradient of a loss over all policy parameters.

    ``upstream`` holds dLoss/d(mu, log_std) per observation, shape (2*act_dim,) or
    (B, 2*act_dim); batch rows are summed. Entries of ``log_std`` sitting at a clamp
    bound pass no gradient.
    """
    spec = build_reuploading_circuit(cfg) if spec is None else spec
    rows, single = _rows(obs, cfg.obs_dim)
    up = np.asarray(upstream, dtype=np.float64)
    up = up[None, :] if single else up
    A = cfg.act_dim
    if up.shape != (rows.shape[0], 2 * A):
        raise StructuralError(f"upstream must have shape ({rows.shape[0]}, {2 * A}), got {up.shape}")
    feats, z = circuit_features(cfg, spec, params, rows)
    _, _, free = _head(cfg, params, z)
    g_h = np.concatenate([up[:, :A], up[:, A:] * free], axis=1)
    g_w = g_h.T @ z
    g_b = g_h.sum(axis=0)
    g_z = g_h @ params.head_weights
    if np.any(g_z):
        jac = qsim.shift_jacobian(spec, params.circuit_params, feats, tuple(range(cfg.n_qubits)))
        g_c = np.einsum("bq,bqp->p", g_z, jac)
    else:
        g_c = np.zeros(cfg.n_circuit_params)
    return PolicyParams(g_c, g_w, g_b)


def param_count(cfg: ReuploadingPolicyConfig, hidden=DEFAULT_HIDDEN) -> tuple[int, int]:
    """(quantum policy, classical MLP baseline) trainable parameter counts."""
    return cfg.n_circuit_params + cfg.n_head_params, mlp_param_count(cfg.obs_dim, 2 * cfg.act_dim, hidden)


# ---------------------------------------------------------------- backends used by the trainer

@dataclass
class _QuantumCache:
    feats: np.ndarray
    z: np.ndarray
    free: np.ndarray
    version: int


class QuantumPolicy:
    kind = "quantum"

    def __init__(self, cfg: ReuploadingPolicyConfig, rng=None, params: PolicyParams | None = None):
        self.cfg = cfg
        self.spec = build_reuploading_circuit(cfg)
        if params is None:
            params = init_policy_params(cfg, np.random.default_rng() if rng is None else rng)
        self._p = params
        self._version = 0

    @property
    def params(self) -> np.ndarray:
        return self._p.flat()

    @params.setter
    def params(self, flat):
        self._p = PolicyParams.from_flat(self.cfg, flat)
        self._version += 1

    @property
    def structured(self) -> PolicyParams:
        return self._p

    @property
    def n_params(self) -> int:
        return self._p.count()

    def distribution(self, obs):
        rows, _ = _rows(obs, self.cfg.obs_dim)
        feats, z = circuit_features(self.cfg, self.spec, self._p, rows)
        mu, log_std, free = _head(self.cfg, self._p, z)
        return mu, log_std, _QuantumCache(feats, z, free, self._version)

    def backward(self, cache: _QuantumCache, grad_mu, grad_log_std) -> np.ndarray:
        if cache.version != self._version:
            raise StructuralError("policy cache is stale")
        g_h = np.concatenate([grad_mu, grad_log_std * cache.free], axis=1)
        g_w = g_h.T @ cache.z
        g_b = g_h.sum(axis=0)
        g_z = g_h @ self._p.head_weights
        jac = qsim.shift_jacobian(self.spec, self._p.circuit_params, cache.feats,
                                  tuple(range(self.cfg.n_qubits)))
        g_c = np.einsum("bq,bqp->p", g_z, jac)
        return np.concatenate([g_c, g_w.ravel(), g_b])

    def to_dict(self) -> dict:
        cfg = asdict(self.cfg)
        cfg["log_std_bounds"] = list(cfg["log_std_bounds"])
        return {"kind": self.kind, "config": cfg, "circuit": self.spec.to_dict(),
                "params": self.params.tolist()}


class GaussianMLPPolicy:
    """Classical baseline: MLP(obs -> hidden... -> 2*act_dim) with the same squashed head."""

    kind = "classical"

    def __init__(self, obs_dim, act_dim, hidden=DEFAULT_HIDDEN, rng=None,
                 log_std_bounds=LOG_STD_BOUNDS, params=None):
        self.obs_dim, self.act_dim = obs_dim, act_dim
        self.hidden = tuple(hidden)
        self.log_std_bounds = tuple(float(b) for b in log_std_bounds)
        self.net = DenseNet((obs_dim, *self.hidden, 2 * act_dim), rng=rng, params=params)

    @property
    def params(self):
        return self.net.params

    @params.setter
    def params(self, flat):
        self.net.params = flat

    @property
    def n_params(self):
        return self.net.n_params

    def distribution(self, obs):
        rows, _ = _rows(obs, self.obs_dim)
        h, cache = self.net.forward(rows)
        lo, hi = self.log_std_bounds
        raw = h[:, self.act_dim:]
        free = (raw > lo) & (raw < hi)
        return h[:, :self.act_dim], np.clip(raw, lo, hi), (cache, free)

    def backward(self, cache, grad_mu, grad_log_std):
        net_cache, free = cache
        grads, _ = self.net.backward(net_cache, np.concatenate([grad_mu, grad_log_std * free], axis=1))
        return grads

    def to_dict(self) -> dict:
        return {"kind": self.kind,
                "config": {"obs_dim": self.obs_dim, "act_dim": self.act_dim, "hidden": list(self.hidden),
                           "log_std_bounds": list(self.log_std_bounds)},
                "params": self.params.tolist()}


def policy_from_dict(doc: dict):
    if doc["kind"] == "quantum":
        cfg = ReuploadingPolicyConfig(**doc["config"])
        policy = QuantumPolicy(cfg, params=PolicyParams.from_flat(cfg, doc["params"]))
        if "circuit" in doc and qsim.CircuitSpec.from_dict(doc["circuit"]) != policy.spec:
            raise ConfigurationError("checkpoint circuit does not match its policy config")
        return policy
    if doc["kind"] == "classical":
        c = doc["config"]
        return GaussianMLPPolicy(c["obs_dim"], c["act_dim"], c["hidden"],
                                 log_std_bounds=c["log_std_bounds"],
                                 params=np.asarray(doc["params"], dtype=np.float64))
    raise ConfigurationError(f"unknown policy kind {doc['kind']!r}")


def save_checkpoint(policy, path) -> None:
    doc = {"format": "qsac-policy", "version": CHECKPOINT_VERSION, "policy": policy.to_dict()}
    with open(path, "w") as fh:
        json.dump(doc, fh)


def load_checkpoint(path, expected_config: ReuploadingPolicyConfig | None = None):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") != "qsac-policy" or doc.get("version") != CHECKPOINT_VERSION:
        raise ConfigurationError(f"unsupported checkpoint format in {path}")
    policy = policy_from_dict(doc["policy"])
    if expected_config is not None and getattr(policy, "cfg", None) != expected_config:
        raise ConfigurationError("checkpoint config does not match the requested policy config")
    return policy
