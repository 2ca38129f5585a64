"""Cooperative two-player gridworld lab.

Environments (a paired-destination gridworld and a two-cook kitchen),
procedural kitchen generation, recurrent PPO self-play training, and
cross-play evaluation tools for studying zero-shot coordination.
"""

__version__ = "0.1.0"
