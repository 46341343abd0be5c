"""Multi-agent patrolling on grid maps with battery hot-swaps: simulator,
heuristic baselines and a MAPPO trainer with learned messages."""

__version__ = "0.1.0"
