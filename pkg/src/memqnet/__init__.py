"""memqnet: tabular multi-agent mixed Q-learning with digital cousins.

Library + deterministic simulation harness for a grid wireless network with
mobile transmitters that learn BS associations, coordinating through a leader
only in high-interference states.
"""

__version__ = "0.1.0"

from .mdp import (  # noqa: F401
    LearningSchedule,
    NoValidActionError,
    Policy,
    QTable,
    TransitionTensor,
    epsilon_greedy,
    greedy_policy,
    q_update,
    value_iteration,
)
