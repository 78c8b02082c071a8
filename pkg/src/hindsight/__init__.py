"""Counterfactual explanations for a model-based RL agent via a reverse world model.

A forward recurrent state-space world model learns the kitchen gridworld's
dynamics and trains an actor-critic in imagination; a reverse world model of
the same architecture, trained on time-reversed action-shifted replay data,
generates the states the world "should have been in" for the agent to prefer
a desired action.
"""

__version__ = "0.1.0"
