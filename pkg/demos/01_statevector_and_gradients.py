"""
Statevector simulation and parameter-shift gradients
====================================================

Build a small circuit, read out Pauli-Z expectations and compare the exact
parameter-shift gradient with a finite-difference estimate.
"""
import numpy as np

from qsac import qsim
from qsac.qsim import CZ, RX, RY, CircuitSpec, DataFeature, ObservableSet, TrainableParam

# %%
# Qubit q is bit q of the basis index, so |01> (qubit 0 set) is index 1.
state = qsim.init_zero_state(2)
state = qsim.apply_gate(state, RY(0, TrainableParam(0)), angle=np.pi)
print("RY(pi) on qubit 0:", np.round(state.amplitudes, 12))

# %%
# A two-qubit circuit with one data feature and two trainable angles.
spec = CircuitSpec(
    n_qubits=2,
    gates=[RX(0, DataFeature(0)), RX(1, DataFeature(0)),
           RY(0, TrainableParam(0)), RY(1, TrainableParam(1)), CZ(0, 1)],
    n_trainable=2, n_features=1)
params = np.array([0.3, -1.1])
features = np.array([0.8])
obs = ObservableSet.all_z(2)
z = qsim.expectations(qsim.run_circuit(spec, params, features), obs)
print("<Z0>, <Z1> =", z)

# %%
# Each parameter is shifted by +-pi/2; sites sharing a parameter add up.
grad = qsim.parameter_shift_gradient(spec, params, features, obs)

h = 1e-5
fd = np.zeros_like(grad)
for j in range(len(params)):
    step = np.zeros_like(params)
    step[j] = h
    plus = qsim.expectations(qsim.run_circuit(spec, params + step, features), obs)
    minus = qsim.expectations(qsim.run_circuit(spec, params - step, features), obs)
    fd[:, j] = (plus - minus) / (2 * h)
print("parameter shift:\n", grad)
print("max |shift - finite difference|:", np.abs(grad - fd).max())

# %%
# Circuits serialize to JSON so a run can record exactly what it used.
print(spec.to_json()[:120], "...")
assert CircuitSpec.from_json(spec.to_json()) == spec
