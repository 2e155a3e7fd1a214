"""CHC solving with symbolic safe/unsafe zones and a learned partition."""

from .engine import EngineConfig, SolveResult, Strategy, solve
from .frontend import parse, parse_file
from .model import normalize_system

__all__ = ["EngineConfig", "SolveResult", "Strategy", "solve", "parse", "parse_file", "normalize_system"]
