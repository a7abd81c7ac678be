from .core import NodeCore
from .http import NodeServer

__all__ = ["NodeCore", "NodeServer"]
