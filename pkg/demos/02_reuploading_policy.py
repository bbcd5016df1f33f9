"""
The re-uploading circuit policy
===============================

Observations are squashed with arctan, encoded as RX angles on every layer,
mixed by trainable RY rotations and a CZ ring, and read out as per-qubit <Z>.
One affine layer turns those readings into a Gaussian over actions.
"""
import numpy as np

from qsac.policy import (ReuploadingPolicyConfig, build_reuploading_circuit, init_policy_params,
                         param_count, policy_forward, sample_action)

cfg = ReuploadingPolicyConfig(obs_dim=3, act_dim=1, n_layers=2)
spec = build_reuploading_circuit(cfg)
for g in spec.gates[:7]:
    print(g.kind, g.target, g.control, g.angle_source)
print("...", len(spec.gates), "gates,", spec.n_trainable, "trainable angles")

# %%
rng = np.random.default_rng(0)
params = init_policy_params(cfg, rng)
obs = np.array([np.cos(0.4), np.sin(0.4), -1.5])
mu, sigma = policy_forward(cfg, params, obs)
print("mu", mu, "sigma", sigma)

# %%
# Reparameterized sample: action = tanh(mu + sigma * noise), with the tanh
# change-of-variables folded into the log-density.
out = sample_action(mu, sigma, rng.standard_normal(cfg.act_dim))
print("action", out.action, "log_prob", out.log_prob)

# %%
# Parameter counts at Walker2d-like sizes: 17 observations, 6 torques.
for layers in (1, 2, 3):
    q, c = param_count(ReuploadingPolicyConfig(17, 6, n_layers=layers))
    print(f"{layers} layers: circuit policy {q} parameters, MLP(64, 64) policy {c}")
