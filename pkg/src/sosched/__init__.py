"""Second-order wireless scheduling: channel models, capacity region, AoI.

Models every delivery and channel process by its long-run mean and temporal
variance; solves for the AoI-optimal operating point inside the feasible
region; simulates the variance-weighted-deficit scheduler against Whittle,
stationary randomized, and max-weight baselines.
"""

__version__ = "0.1.0"
