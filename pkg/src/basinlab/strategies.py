"""The two focal repeated-game strategies as two-state automata.

Grim cooperates until the first failed round (own defection or an F signal)
and defects forever after within a supergame; AllD always defects. Both are
driven through a shared contract: fresh_state / next_action / update_state.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import InvalidParameter
from .game import Action, Signal


class StrategyKind(enum.Enum):
    GRIM = "grim"
    ALL_D = "all_d"


@dataclass(frozen=True)
class StrategyState:
    """Automaton state. ``triggered`` is meaningful only for Grim and is
    monotone within a supergame."""

    kind: StrategyKind
    triggered: bool = False


def fresh_state(kind: StrategyKind) -> StrategyState:
    """Supergame-start state (trigger reset: matches stranger rematching)."""
    return StrategyState(kind=kind, triggered=False)


def next_action(state: StrategyState) -> Action:
    if state.kind is StrategyKind.ALL_D:
        return Action.D
    return Action.D if state.triggered else Action.C


def update_state(state: StrategyState, own: Action, signal: Signal) -> StrategyState:
    """Advance past a completed round. Grim stays untriggered only after
    (own C, signal S); AllD never changes."""
    if state.kind is StrategyKind.ALL_D:
        return state
    still_cooperative = (not state.triggered) and own is Action.C and signal is Signal.S
    return StrategyState(kind=StrategyKind.GRIM, triggered=not still_cooperative)


@dataclass(frozen=True)
class Mixture:
    """Grim-vs-AllD mixture: probability p of playing Grim."""

    p: float | Fraction

    def __post_init__(self):
        if not (0 <= self.p <= 1):
            raise InvalidParameter("p", f"mixture probability must be in [0, 1], got {self.p}")


def sample_strategy(mixture: Mixture, rng: np.random.Generator) -> StrategyKind:
    """Draw one strategy from the mixture; consumes exactly one uniform."""
    return StrategyKind.GRIM if rng.random() < mixture.p else StrategyKind.ALL_D
