"""Continuous-control environments and the JSON-lines bridge to external simulators.

Policies emit actions in (-1, 1); :func:`scale_action` maps them onto an
environment's ``[low, high]`` box. Every environment here takes and returns
env-scale actions.

Bridge wire format: one UTF-8 JSON document per ``\\n``-terminated line, compact
separators, strictly one request in flight::

    {"cmd":"spec"}                 -> {"obs_dim":..,"act_dim":..,"low":[..],"high":[..]}
    {"cmd":"reset","seed":n}       -> {"obs":[..]}
    {"cmd":"step","action":[..]}   -> {"obs":[..],"reward":r,"terminated":b,"truncated":b}

A server that cannot honour a request answers ``{"error": "..."}``.
"""
from __future__ import annotations

import json
import math
import socket
import socketserver
import threading
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError, ContractError, ProtocolError, TransportError

DEFAULT_TIMEOUT = 30.0


@dataclass(frozen=True)
class EnvSpec:
    obs_dim: int
    act_dim: int
    action_low: tuple[float, ...]
    action_high: tuple[float, ...]
    max_episode_steps: int | None = None

    def __post_init__(self):
        if self.obs_dim < 1 or self.act_dim < 1:
            raise ConfigurationError("obs_dim and act_dim must be >= 1")
        if len(self.action_low) != self.act_dim or len(self.action_high) != self.act_dim:
            raise ConfigurationError("action bounds must have act_dim entries")
        if not all(lo < hi for lo, hi in zip(self.action_low, self.action_high)):
            raise ConfigurationError("action_low must be below action_high elementwise")


@dataclass
class StepResult:
    obs: np.ndarray
    reward: float
    terminated: bool
    truncated: bool


def scale_action(unit_action, spec: EnvSpec) -> np.ndarray:
    """Affine map from [-1, 1] onto the action box."""
    lo, hi = np.asarray(spec.action_low), np.asarray(spec.action_high)
    return lo + (np.asarray(unit_action, dtype=np.float64) + 1.0) * 0.5 * (hi - lo)


def unscale_action(action, spec: EnvSpec) -> np.ndarray:
    lo, hi = np.asarray(spec.action_low), np.asarray(spec.action_high)
    return 2.0 * (np.asarray(action, dtype=np.float64) - lo) / (hi - lo) - 1.0


def _check_action(action, spec: EnvSpec) -> np.ndarray:
    a = np.asarray(action, dtype=np.float64).reshape(-1)
    if a.shape != (spec.act_dim,):
        raise ContractError(f"action must have {spec.act_dim} entries, got {np.shape(action)}")
    if not np.all(np.isfinite(a)):
        raise ContractError(f"action contains non-finite values: {a.tolist()}")
    return a


# ---------------------------------------------------------------- pendulum

PENDULUM_G, PENDULUM_M, PENDULUM_L, PENDULUM_DT = 10.0, 1.0, 1.0, 0.05
PENDULUM_MAX_SPEED, PENDULUM_MAX_TORQUE, PENDULUM_STEPS = 8.0, 2.0, 200
PENDULUM_SPEC = EnvSpec(3, 1, (-PENDULUM_MAX_TORQUE,), (PENDULUM_MAX_TORQUE,), PENDULUM_STEPS)


class PendulumState(NamedTuple):
    theta: float
    theta_dot: float
    t: int = 0


def angle_normalize(x):
    return ((x + math.pi) % (2 * math.pi)) - math.pi


def pendulum_obs(state: PendulumState) -> np.ndarray:
    return np.array([math.cos(state.theta), math.sin(state.theta), state.theta_dot])


def pendulum_reset(seed=None) -> tuple[PendulumState, np.ndarray]:
    rng = np.random.default_rng(seed)
    state = PendulumState(float(rng.uniform(-math.pi, math.pi)), float(rng.uniform(-1.0, 1.0)), 0)
    return state, pendulum_obs(state)


def pendulum_step(state: PendulumState, action) -> tuple[PendulumState, StepResult]:
    """Swing-up dynamics; theta = 0 is upright. Pure: returns the next state."""
    u = min(max(float(np.asarray(action).reshape(-1)[0]), -PENDULUM_MAX_TORQUE), PENDULUM_MAX_TORQUE)
    th, thdot = state.theta, state.theta_dot
    cost = angle_normalize(th) ** 2 + 0.1 * thdot ** 2 + 0.001 * u ** 2
    g, m, l, dt = PENDULUM_G, PENDULUM_M, PENDULUM_L, PENDULUM_DT
    new_thdot = thdot + (3 * g / (2 * l) * math.sin(th) + 3.0 / (m * l ** 2) * u) * dt
    new_thdot = min(max(new_thdot, -PENDULUM_MAX_SPEED), PENDULUM_MAX_SPEED)
    new_state = PendulumState(th + new_thdot * dt, new_thdot, state.t + 1)
    return new_state, StepResult(pendulum_obs(new_state), -cost, False, new_state.t >= PENDULUM_STEPS)


# ---------------------------------------------------------------- 1-D hopper

HOPPER_DT, HOPPER_G, HOPPER_K, HOPPER_REST = 0.02, 10.0, 100.0, 1.0
HOPPER_DAMPING, HOPPER_LIFT = 1.0, 0.5
HOPPER_BOUNDS = (0.2, 2.0)
HOPPER_STEPS = 500
HOPPER_SPEC = EnvSpec(4, 1, (-1.0,), (1.0,), HOPPER_STEPS)


class HopperState(NamedTuple):
    x: float
    vx: float
    h: float
    vh: float
    t: int = 0


def hopper_obs(state: HopperState) -> np.ndarray:
    return np.array([state.h, state.vh, state.vx, max(0.0, HOPPER_REST - state.h)])


def hopper1d_reset(seed=None) -> tuple[HopperState, np.ndarray]:
    """Start near the spring equilibrium with no forward motion."""
    rng = np.random.default_rng(seed)
    h_eq = HOPPER_REST - HOPPER_G / HOPPER_K
    state = HopperState(0.0, 0.0, h_eq + float(rng.uniform(-0.02, 0.02)), float(rng.uniform(-0.05, 0.05)), 0)
    return state, hopper_obs(state)


def hopper1d_step(state: HopperState, action) -> tuple[HopperState, StepResult]:
    """Point mass on a spring leg, pushed forward by a horizontal force.

    Forward motion is integrated with the trapezoid rule so the work done by the
    force equals the change in forward kinetic energy exactly. Forward speed
    generates lift, so running too fast throws the mass out of the height band.
    """
    lo, hi = HOPPER_SPEC.action_low[0], HOPPER_SPEC.action_high[0]
    a = min(max(float(np.asarray(action).reshape(-1)[0]), lo), hi)
    dt = HOPPER_DT
    vx = state.vx + a * dt
    x = state.x + 0.5 * (state.vx + vx) * dt
    acc_h = (-HOPPER_G + HOPPER_K * max(0.0, HOPPER_REST - state.h)
             - HOPPER_DAMPING * state.vh + HOPPER_LIFT * state.vx ** 2)
    vh = state.vh + acc_h * dt
    h = state.h + vh * dt
    new_state = HopperState(x, vx, h, vh, state.t + 1)
    terminated = not HOPPER_BOUNDS[0] <= h <= HOPPER_BOUNDS[1]
    truncated = (not terminated) and new_state.t >= HOPPER_STEPS
    return new_state, StepResult(hopper_obs(new_state), vx - 0.001 * a * a, terminated, truncated)


class _BuiltinEnv:
    """Stateful wrapper over a pure (reset, step) pair."""

    spec: EnvSpec

    def __init__(self, reset_fn, step_fn, spec):
        self._reset_fn, self._step_fn, self.spec = reset_fn, step_fn, spec
        self.state = None

    def reset(self, seed=None) -> np.ndarray:
        self.state, obs = self._reset_fn(seed)
        return obs

    def step(self, action) -> StepResult:
        if self.state is None:
            raise ContractError("step() called before reset()")
        self.state, result = self._step_fn(self.state, _check_action(action, self.spec))
        return result

    def close(self):
        pass


class PendulumEnv(_BuiltinEnv):
    def __init__(self):
        super().__init__(pendulum_reset, pendulum_step, PENDULUM_SPEC)


class Hopper1DEnv(_BuiltinEnv):
    def __init__(self):
        super().__init__(hopper1d_reset, hopper1d_step, HOPPER_SPEC)


# ---------------------------------------------------------------- scripted env for bridge tests

class ScriptedEnv:
    """Deterministic stand-in for a remote simulator.

    Rewards follow :meth:`reward_script` for the seed passed to ``reset``; the
    first ``min(obs_dim, act_dim)`` observation entries echo the last action.
    """

    def __init__(self, obs_dim=17, act_dim=6, episode_length=1000, bound=1.0):
        self.spec = EnvSpec(obs_dim, act_dim, (-bound,) * act_dim, (bound,) * act_dim, episode_length)
        self._rewards = None
        self._rng = None
        self.t = 0

    @staticmethod
    def reward_script(seed, n) -> np.ndarray:
        return np.random.default_rng([int(seed), 0x5C121]).normal(size=n)

    def reset(self, seed=None) -> np.ndarray:
        seed = 0 if seed is None else seed
        self._rewards = self.reward_script(seed, self.spec.max_episode_steps)
        self._rng = np.random.default_rng([int(seed), 1])
        self.t = 0
        return self._rng.normal(size=self.spec.obs_dim)

    def step(self, action) -> StepResult:
        a = _check_action(action, self.spec)
        obs = self._rng.normal(size=self.spec.obs_dim)
        k = min(self.spec.obs_dim, self.spec.act_dim)
        obs[:k] = a[:k]
        reward = float(self._rewards[self.t])
        self.t += 1
        return StepResult(obs, reward, False, self.t >= self.spec.max_episode_steps)

    def close(self):
        pass


# ---------------------------------------------------------------- bridge protocol

def _reject_constant(name):
    raise ValueError(f"non-finite number {name} is not allowed")


def encode_message(msg: dict) -> bytes:
    try:
        text = json.dumps(msg, separators=(",", ":"), allow_nan=False)
    except ValueError as exc:
        raise ContractError(f"cannot encode message: {exc}") from exc
    return text.encode("utf-8") + b"\n"


def decode_message(line) -> dict:
    """Parse one protocol line; errors carry the offending line as received."""
    text = line
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ProtocolError("line is not UTF-8", line) from exc
    if text.endswith("\n"):
        text = text[:-1]
    try:
        msg = json.loads(text, parse_constant=_reject_constant)
    except ValueError as exc:
        raise ProtocolError(f"malformed line ({exc})", line) from exc
    if not isinstance(msg, dict):
        raise ProtocolError("message is not a JSON object", line)
    return msg


def parse_address(address: str) -> tuple[str, int]:
    host, sep, port = str(address).rpartition(":")
    if not sep or not port.isdigit():
        raise ConfigurationError(f"bridge address must look like host:port, got {address!r}")
    return host or "127.0.0.1", int(port)


def _vector(msg, key, length, line):
    value = msg.get(key)
    if not isinstance(value, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool)
                                              for v in value):
        raise ProtocolError(f"field {key!r} must be a list of numbers", line)
    if length is not None and len(value) != length:
        raise ContractError(f"field {key!r} has {len(value)} entries, expected {length}")
    return np.asarray(value, dtype=np.float64)


class BridgeEnv:
    """Client side of the bridge; behaves like a built-in environment."""

    def __init__(self, address, timeout=DEFAULT_TIMEOUT):
        self.address = address
        host, port = parse_address(address)
        try:
            self._sock = socket.create_connection((host, port), timeout=timeout)
        except OSError as exc:
            raise TransportError(f"cannot connect to environment bridge at {address}: {exc}") from exc
        self._sock.settimeout(timeout)
        self._reader = self._sock.makefile("rb")
        self.spec = self._fetch_spec()

    def _request(self, msg: dict) -> dict:
        payload = encode_message(msg)
        try:
            self._sock.sendall(payload)
            line = self._reader.readline()
        except socket.timeout as exc:
            raise TransportError(f"bridge at {self.address} timed out") from exc
        except OSError as exc:
            raise TransportError(f"bridge at {self.address} failed: {exc}") from exc
        if not line:
            raise TransportError(f"bridge at {self.address} closed the connection")
        if not line.endswith(b"\n"):
            raise ProtocolError("reply is not newline-terminated", line)
        reply = decode_message(line)
        if "error" in reply:
            raise ProtocolError(f"remote error: {reply['error']}", line)
        reply["_line"] = line
        return reply

    def _fetch_spec(self) -> EnvSpec:
        reply = self._request({"cmd": "spec"})
        line = reply["_line"]
        try:
            obs_dim, act_dim = int(reply["obs_dim"]), int(reply["act_dim"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ProtocolError("spec reply lacks obs_dim/act_dim", line) from exc
        low = _vector(reply, "low", act_dim, line)
        high = _vector(reply, "high", act_dim, line)
        steps = reply.get("max_episode_steps")
        return EnvSpec(obs_dim, act_dim, tuple(low.tolist()), tuple(high.tolist()),
                       None if steps is None else int(steps))

    def reset(self, seed=None) -> np.ndarray:
        msg = {"cmd": "reset"}
        if seed is not None:
            msg["seed"] = int(seed)
        reply = self._request(msg)
        return _vector(reply, "obs", self.spec.obs_dim, reply["_line"])

    def step(self, action) -> StepResult:
        a = _check_action(action, self.spec)
        reply = self._request({"cmd": "step", "action": a.tolist()})
        line = reply["_line"]
        obs = _vector(reply, "obs", self.spec.obs_dim, line)
        reward = reply.get("reward")
        term, trunc = reply.get("terminated"), reply.get("truncated")
        if not isinstance(reward, (int, float)) or isinstance(reward, bool):
            raise ProtocolError("step reply needs a numeric reward", line)
        if not isinstance(term, bool) or not isinstance(trunc, bool):
            raise ProtocolError("step reply needs boolean terminated/truncated", line)
        return StepResult(obs, float(reward), term, trunc)

    def close(self):
        try:
            self._reader.close()
            self._sock.close()
        except OSError:
            pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def bridge_connect(address, timeout=DEFAULT_TIMEOUT) -> BridgeEnv:
    return BridgeEnv(address, timeout)


class _BridgeHandler(socketserver.StreamRequestHandler):
    def handle(self):
        env = self.server.env_factory()
        for line in self.rfile:
            try:
                reply = self._serve(env, decode_message(line))
            except ProtocolError as exc:
                reply = {"error": str(exc)}
            except (ContractError, ConfigurationError, ValueError, TypeError) as exc:
                reply = {"error": str(exc)}
            try:
                self.wfile.write(encode_message(reply))
            except ContractError as exc:
                self.wfile.write(encode_message({"error": str(exc)}))
            self.wfile.flush()

    @staticmethod
    def _serve(env, msg):
        cmd = msg.get("cmd")
        if cmd == "spec":
            s = env.spec
            return {"obs_dim": s.obs_dim, "act_dim": s.act_dim, "low": list(s.action_low),
                    "high": list(s.action_high), "max_episode_steps": s.max_episode_steps}
        if cmd == "reset":
            return {"obs": np.asarray(env.reset(msg.get("seed"))).tolist()}
        if cmd == "step":
            action = msg.get("action")
            if not isinstance(action, list):
                raise ContractError("step needs an action list")
            r = env.step(action)
            return {"obs": np.asarray(r.obs).tolist(), "reward": float(r.reward),
                    "terminated": bool(r.terminated), "truncated": bool(r.truncated)}
        raise ContractError(f"unknown cmd {cmd!r}")


class MockEnvServer(socketserver.ThreadingTCPServer):
    """Serves any environment over the bridge protocol; one fresh env per connection."""

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, env_factory, host="127.0.0.1", port=0):
        self.env_factory = env_factory
        super().__init__((host, port), _BridgeHandler)
        self._thread = None

    @property
    def address(self) -> str:
        host, port = self.server_address[:2]
        return f"{host}:{port}"

    def start(self) -> "MockEnvServer":
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def stop(self):
        self.shutdown()
        self.server_close()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


BUILTIN_ENVS = {"pendulum": PendulumEnv, "hopper1d": Hopper1DEnv}


def make_env(name: str, timeout=DEFAULT_TIMEOUT):
    """Built-in env by name, or ``bridge:host:port`` for a remote simulator."""
    if name in BUILTIN_ENVS:
        return BUILTIN_ENVS[name]()
    if name.startswith("bridge:"):
        return BridgeEnv(name[len("bridge:"):], timeout)
    raise ConfigurationError(f"unknown environment {name!r}")
