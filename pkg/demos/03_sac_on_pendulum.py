"""
Soft Actor-Critic on pendulum, classical and quantum
====================================================

The same trainer drives both policy backends. Short runs keep this script to a
couple of minutes; the acceptance suite trains for much longer.
"""
import numpy as np

from qsac.envs import PendulumEnv
from qsac.policy import GaussianMLPPolicy, QuantumPolicy, ReuploadingPolicyConfig
from qsac.sac import SACAgent, SACTrainer, SacHyperparams, evaluate

STEPS = 4000


def train(policy, rng, seed=0):
    env = PendulumEnv()
    agent = SACAgent(policy, env.spec, SacHyperparams(), rng)
    trainer = SACTrainer(agent, env, seed)
    for step in range(1, STEPS + 1):
        info = trainer.train_step()
        if step % 1000 == 0:
            score = np.mean(evaluate(agent, PendulumEnv(), 5, seed))
            print(f"  step {step}: eval {score:8.1f}  alpha {agent.alpha:.3f}")
    return agent


# %%
print("classical MLP policy")
rng = np.random.default_rng(0)
train(GaussianMLPPolicy(3, 1, rng=rng), rng)

# %%
# Three qubits, two re-uploading layers: 6 angles plus an 8-entry head.
print("3-qubit re-uploading policy")
rng = np.random.default_rng(0)
agent = train(QuantumPolicy(ReuploadingPolicyConfig(3, 1, n_layers=2), rng), rng)
print("policy parameters:", agent.policy.n_params)
