"""Grid-world games for reinforcement learning, with oracles, text encodings,
policy-gradient training and small combat scenarios."""
from .engine import Action, GameState, GenerationError, ItemKind, Position, apply_action
from .tasks import TaskKind, generate_instance

__version__ = "0.1.0"

__all__ = ["Action", "GameState", "GenerationError", "ItemKind", "Position", "apply_action", "TaskKind",
           "generate_instance", "__version__"]
