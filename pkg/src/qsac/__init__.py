"""Soft Actor-Critic with a data re-uploading quantum policy, simulated on a numpy statevector backend."""

__version__ = "0.1.0"
