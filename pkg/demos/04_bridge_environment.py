"""
Driving an external simulator over the JSON-lines bridge
========================================================

Any process that speaks one JSON document per line can host the environment.
Here the built-in mock server plays a Walker2d-sized scripted environment
(17 observations, 6 actions) and the client checks the reward stream.
"""
import numpy as np

from qsac.envs import BridgeEnv, MockEnvServer, ScriptedEnv, encode_message
from qsac.errors import ContractError

print(encode_message({"cmd": "step", "action": [0.25, -1.0]}))

# %%
with MockEnvServer(lambda: ScriptedEnv(obs_dim=17, act_dim=6, episode_length=1000)) as server:
    print("serving on", server.address)
    with BridgeEnv(server.address) as env:
        print("spec:", env.spec)
        env.reset(seed=42)
        rewards = [env.step(np.zeros(6)).reward for _ in range(1000)]
        print("rewards match the script:", np.array_equal(rewards, ScriptedEnv.reward_script(42, 1000)))

        # actions are checked before anything is sent
        try:
            env.step(np.zeros(5))
        except ContractError as exc:
            print("rejected:", exc)

# %%
# From a shell the same server runs as ``qsac serve-env-mock --port 5555`` and a
# training run attaches with ``qsac train --env bridge:127.0.0.1:5555``.
