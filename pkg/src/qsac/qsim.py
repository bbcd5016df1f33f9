"""Dense statevector simulation of parameterized circuits over the gate set {RX, RY, RZ, CZ}.

Amplitude storage is little-endian: in basis index ``b``, qubit ``q`` is bit ``q``
of ``b``. So for two qubits the order is ``|q1 q0> = 00, 01, 10, 11`` and the
amplitude of "qubit 0 is 1, qubit 1 is 0" lives at index 1.

Rotations follow ``R_P(theta) = exp(-i theta P / 2)``.

Everything in here works on a leading batch axis internally: the policy needs one
circuit evaluation per observation and two per parameter-shift site, and running
those as one stacked array is much cheaper than looping in Python.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence, Union

import numpy as np

from .errors import ConfigurationError, StructuralError

MAX_QUBITS = 20
GATE_KINDS = ("RX", "RY", "RZ", "CZ")
ROTATIONS = ("RX", "RY", "RZ")
SHIFT = np.pi / 2

# Upper bound on complex amplitudes materialized at once by the batched routines.
_CHUNK_AMPLITUDES = 1 << 22


@dataclass(frozen=True)
class Constant:
    value: float


@dataclass(frozen=True)
class TrainableParam:
    index: int


@dataclass(frozen=True)
class DataFeature:
    """Angle taken from an input feature, optionally multiplied by a trainable scale."""

    index: int
    scale_param: int | None = None


AngleSource = Union[Constant, TrainableParam, DataFeature]


@dataclass(frozen=True)
class Gate:
    kind: str
    target: int
    control: int | None = None
    angle_source: AngleSource | None = None

    def __post_init__(self):
        if self.kind not in GATE_KINDS:
            raise StructuralError(f"unknown gate kind {self.kind!r}")
        if self.kind == "CZ":
            if self.control is None:
                raise StructuralError("CZ needs a control qubit")
            if self.control == self.target:
                raise StructuralError("CZ control and target must differ")
        elif self.control is not None:
            raise StructuralError(f"{self.kind} takes no control qubit")

    def check(self, n_qubits: int) -> None:
        for q in (self.target, self.control):
            if q is not None and not 0 <= q < n_qubits:
                raise StructuralError(
                    f"{self.kind} on qubit {q} is out of range for {n_qubits} qubits")


def RX(target, source=None):
    return Gate("RX", target, angle_source=source)


def RY(target, source=None):
    return Gate("RY", target, angle_source=source)


def RZ(target, source=None):
    return Gate("RZ", target, angle_source=source)


def CZ(control, target):
    return Gate("CZ", target, control=control)


@dataclass
class StateVector:
    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.complex128)
        if self.amplitudes.shape != (2 ** self.n_qubits,):
            raise StructuralError(
                f"expected {2 ** self.n_qubits} amplitudes, got shape {self.amplitudes.shape}")

    def norm_squared(self) -> float:
        return float(np.vdot(self.amplitudes, self.amplitudes).real)

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2


@dataclass
class CircuitSpec:
    n_qubits: int
    gates: list[Gate] = field(default_factory=list)
    n_trainable: int = 0
    n_features: int = 0

    def __post_init__(self):
        _check_qubits(self.n_qubits)
        self.gates = list(self.gates)
        for gate in self.gates:
            gate.check(self.n_qubits)
            src = gate.angle_source
            if gate.kind == "CZ":
                continue
            if src is None:
                raise StructuralError(f"{gate.kind} on qubit {gate.target} has no angle source")
            if isinstance(src, TrainableParam) and not 0 <= src.index < self.n_trainable:
                raise StructuralError(f"trainable index {src.index} outside [0, {self.n_trainable})")
            if isinstance(src, DataFeature):
                if not 0 <= src.index < self.n_features:
                    raise StructuralError(f"feature index {src.index} outside [0, {self.n_features})")
                if src.scale_param is not None and not 0 <= src.scale_param < self.n_trainable:
                    raise StructuralError(
                        f"scale index {src.scale_param} outside [0, {self.n_trainable})")

    def to_dict(self) -> dict:
        return {
            "n_qubits": self.n_qubits,
            "n_trainable": self.n_trainable,
            "n_features": self.n_features,
            "gates": [_gate_to_dict(g) for g in self.gates],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "CircuitSpec":
        try:
            gates = [_gate_from_dict(g) for g in doc["gates"]]
            return cls(int(doc["n_qubits"]), gates, int(doc["n_trainable"]), int(doc["n_features"]))
        except (KeyError, TypeError) as exc:
            raise StructuralError(f"malformed circuit document: {exc}") from exc

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_json(cls, text: str) -> "CircuitSpec":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class ObservableSet:
    """Single-qubit Pauli-Z measurements, one per listed qubit."""

    qubits: tuple[int, ...]

    @classmethod
    def all_z(cls, n_qubits: int) -> "ObservableSet":
        return cls(tuple(range(n_qubits)))

    def __len__(self):
        return len(self.qubits)


def _gate_to_dict(gate: Gate) -> dict:
    src = gate.angle_source
    if src is None:
        source = None
    elif isinstance(src, Constant):
        source = {"type": "constant", "value": float(src.value)}
    elif isinstance(src, TrainableParam):
        source = {"type": "trainable", "index": src.index}
    else:
        source = {"type": "feature", "index": src.index, "scale_param": src.scale_param}
    return {"kind": gate.kind, "target": gate.target, "control": gate.control, "angle_source": source}


def _gate_from_dict(doc: dict) -> Gate:
    src = doc.get("angle_source")
    if src is None:
        source = None
    elif src["type"] == "constant":
        source = Constant(float(src["value"]))
    elif src["type"] == "trainable":
        source = TrainableParam(int(src["index"]))
    elif src["type"] == "feature":
        scale = src.get("scale_param")
        source = DataFeature(int(src["index"]), None if scale is None else int(scale))
    else:
        raise StructuralError(f"unknown angle source type {src['type']!r}")
    return Gate(doc["kind"], int(doc["target"]), doc.get("control"), source)


def _check_qubits(n_qubits):
    if not isinstance(n_qubits, (int, np.integer)) or not 1 <= n_qubits <= MAX_QUBITS:
        raise ConfigurationError(f"n_qubits must be in [1, {MAX_QUBITS}], got {n_qubits!r}")


def init_zero_state(n_qubits: int) -> StateVector:
    _check_qubits(n_qubits)
    amps = np.zeros(2 ** n_qubits, dtype=np.complex128)
    amps[0] = 1.0
    return StateVector(int(n_qubits), amps)


# ---------------------------------------------------------------- kernels

@lru_cache(maxsize=None)
def _cz_signs(n_qubits: int, a: int, b: int) -> np.ndarray:
    idx = np.arange(2 ** n_qubits)
    both = ((idx >> a) & 1) & ((idx >> b) & 1)
    return np.where(both == 1, -1.0, 1.0)


@lru_cache(maxsize=None)
def _z_signs(n_qubits: int, qubits: tuple[int, ...]) -> np.ndarray:
    idx = np.arange(2 ** n_qubits)
    return np.stack([1.0 - 2.0 * ((idx >> q) & 1) for q in qubits], axis=1)


def _apply_batch(amps: np.ndarray, n_qubits: int, kind: str, target: int,
                 control: int | None, angles) -> np.ndarray:
    """Apply one gate to a (B, 2**n) amplitude block; ``angles`` has shape (B,)."""
    if kind == "CZ":
        return amps * _cz_signs(n_qubits, control, target)
    batch = amps.shape[0]
    view = amps.reshape(batch, 2 ** (n_qubits - 1 - target), 2, 2 ** target)
    half = 0.5 * np.asarray(angles, dtype=np.float64).reshape(-1, 1, 1)
    a0 = view[:, :, 0, :]
    a1 = view[:, :, 1, :]
    out = np.empty_like(view)
    if kind == "RZ":
        phase = np.exp(-1j * half)
        out[:, :, 0, :] = phase * a0
        out[:, :, 1, :] = np.conj(phase) * a1
    else:
        c, s = np.cos(half), np.sin(half)
        if kind == "RX":
            js = -1j * s
            out[:, :, 0, :] = c * a0 + js * a1
            out[:, :, 1, :] = js * a0 + c * a1
        else:
            out[:, :, 0, :] = c * a0 - s * a1
            out[:, :, 1, :] = s * a0 + c * a1
    return out.reshape(batch, -1)


def apply_gate(state: StateVector, gate: Gate, angle: float = 0.0) -> StateVector:
    """Return a new state with ``gate`` applied at the given angle (ignored for CZ)."""
    gate.check(state.n_qubits)
    amps = _apply_batch(state.amplitudes[None, :], state.n_qubits, gate.kind,
                        gate.target, gate.control, np.array([angle], dtype=np.float64))
    return StateVector(state.n_qubits, amps[0])


def _as_rows(values, width: int, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != width:
        raise StructuralError(f"{name} must have length {width}, got shape {np.shape(values)}")
    return arr


def _gate_angles(gate: Gate, params: np.ndarray, features: np.ndarray) -> np.ndarray | float:
    src = gate.angle_source
    if isinstance(src, Constant):
        return src.value
    if isinstance(src, TrainableParam):
        return params[:, src.index]
    angle = features[:, src.index]
    if src.scale_param is not None:
        angle = params[:, src.scale_param] * angle
    return angle


def evolve_batch(spec: CircuitSpec, params, features, offsets=None) -> np.ndarray:
    """Run the circuit for a batch of (params, features) rows; returns (B, 2**n) amplitudes.

    ``params`` is (n_trainable,) or (B, n_trainable), ``features`` likewise with
    n_features. ``offsets`` (B, n_gates) is added to each gate's resolved angle and
    is what the parameter-shift rule uses to move one gate site at a time.
    """
    params = _as_rows(params, spec.n_trainable, "params")
    features = _as_rows(features, spec.n_features, "features")
    batch = max(params.shape[0], features.shape[0])
    if offsets is not None:
        offsets = np.asarray(offsets, dtype=np.float64)
        batch = max(batch, offsets.shape[0])
    for arr in (params, features) + ((offsets,) if offsets is not None else ()):
        if arr.shape[0] not in (1, batch):
            raise StructuralError("batch sizes of params, features and offsets disagree")
    n = spec.n_qubits
    amps = np.zeros((batch, 2 ** n), dtype=np.complex128)
    amps[:, 0] = 1.0
    for g, gate in enumerate(spec.gates):
        if gate.kind == "CZ":
            amps = _apply_batch(amps, n, "CZ", gate.target, gate.control, None)
            continue
        angles = np.broadcast_to(_gate_angles(gate, params, features), (batch,))
        if offsets is not None:
            angles = angles + offsets[:, g]
        amps = _apply_batch(amps, n, gate.kind, gate.target, None, angles)
    return amps


def run_circuit(spec: CircuitSpec, params, features) -> StateVector:
    params = np.asarray(params, dtype=np.float64)
    features = np.asarray(features, dtype=np.float64)
    if params.shape != (spec.n_trainable,):
        raise StructuralError(f"expected {spec.n_trainable} params, got shape {params.shape}")
    if features.shape != (spec.n_features,):
        raise StructuralError(f"expected {spec.n_features} features, got shape {features.shape}")
    return StateVector(spec.n_qubits, evolve_batch(spec, params, features)[0])


def z_expectations(amps: np.ndarray, n_qubits: int, qubits: Sequence[int]) -> np.ndarray:
    """<Z_q> for every row of a (B, 2**n) amplitude block; returns (B, len(qubits))."""
    for q in qubits:
        if not 0 <= q < n_qubits:
            raise StructuralError(f"observable qubit {q} out of range for {n_qubits} qubits")
    probs = amps.real ** 2 + amps.imag ** 2
    return probs @ _z_signs(n_qubits, tuple(qubits))


def expectations(state: StateVector, obs: ObservableSet) -> np.ndarray:
    return z_expectations(state.amplitudes[None, :], state.n_qubits, obs.qubits)[0]


def _shift_sites(spec: CircuitSpec):
    """(gate index, trainable index, feature index or None) for every trainable angle site."""
    sites = []
    for g, gate in enumerate(spec.gates):
        src = gate.angle_source
        if isinstance(src, TrainableParam):
            sites.append((g, src.index, None))
        elif isinstance(src, DataFeature) and src.scale_param is not None:
            sites.append((g, src.scale_param, src.index))
    return sites


def shift_jacobian(spec: CircuitSpec, params, features, qubits: Sequence[int]) -> np.ndarray:
    """Parameter-shift Jacobian d<Z_q>/d(param) for a batch of feature rows.

    Returns an array of shape (B, len(qubits), n_trainable). Every gate site that
    depends on a trainable parameter is shifted on its own by +-pi/2 and the
    contributions of sites sharing a parameter are summed. A scaled data-encoding
    site ``angle = scale * x`` contributes ``x`` times its shifted difference.
    """
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (spec.n_trainable,):
        raise StructuralError(f"expected {spec.n_trainable} params, got shape {params.shape}")
    features = _as_rows(features, spec.n_features, "features")
    batch = features.shape[0]
    n_obs = len(qubits)
    jac = np.zeros((batch, n_obs, spec.n_trainable))
    sites = _shift_sites(spec)
    if not sites:
        return jac
    n_gates = len(spec.gates)
    per_site = 2 * batch * 2 ** spec.n_qubits
    chunk = max(1, _CHUNK_AMPLITUDES // per_site)
    for start in range(0, len(sites), chunk):
        block = sites[start:start + chunk]
        k = len(block)
        # Row layout: (site, sign, batch row).
        offsets = np.zeros((k, 2, batch, n_gates))
        for i, (g, _, _) in enumerate(block):
            offsets[i, 0, :, g] = SHIFT
            offsets[i, 1, :, g] = -SHIFT
        rows = np.broadcast_to(features, (k, 2, batch, spec.n_features)).reshape(k * 2 * batch, -1)
        amps = evolve_batch(spec, params, rows, offsets.reshape(-1, n_gates))
        ev = z_expectations(amps, spec.n_qubits, qubits).reshape(k, 2, batch, n_obs)
        diff = 0.5 * (ev[:, 0] - ev[:, 1])
        # Fixed site order keeps the accumulation deterministic.
        for i, (_, j, feat) in enumerate(block):
            if feat is None:
                jac[:, :, j] += diff[i]
            else:
                jac[:, :, j] += diff[i] * features[:, feat, None]
    return jac


def parameter_shift_gradient(spec: CircuitSpec, params, features, obs: ObservableSet) -> np.ndarray:
    """Exact gradient matrix [n_observables x n_trainable] of Pauli-Z expectations."""
    features = np.asarray(features, dtype=np.float64)
    if features.shape != (spec.n_features,):
        raise StructuralError(f"expected {spec.n_features} features, got shape {features.shape}")
    return shift_jacobian(spec, params, features, obs.qubits)[0]
