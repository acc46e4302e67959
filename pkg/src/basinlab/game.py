"""Stage game for N-player repeated social dilemmas with an aggregate signal.

Each group member chooses Cooperate or Defect and is paid from a 2x2 table
over the own action and a binary Success/Failure signal: Success only when
every *other* group member cooperated. The table is parameterized by a money
baseline ``pi0``, a cooperation premium ``delta_pi``, and a relative
cooperation cost ``cost_x``:

    (C, S) -> pi0 + delta_pi
    (D, S) -> pi0 + (1 + x) * delta_pi
    (C, F) -> pi0 - x * delta_pi
    (D, F) -> pi0

Money is held as exact rationals so derived tables are bit-exact; float
entry points are rounded to cents (half away from zero) at construction.
``GeneralPD`` is the two-player form with separate temptation/sucker
parameters; it reduces to a ``Treatment`` table when g = s = x and N = 2.
"""

from __future__ import annotations

import configparser
import enum
import io
from dataclasses import dataclass
from decimal import Decimal, ROUND_HALF_UP
from fractions import Fraction
from typing import Sequence

from .errors import ConfigError, EmptyOthers, InvalidParameter

Rational = int | float | str | Fraction


class Action(enum.Enum):
    C = "C"
    D = "D"


class Signal(enum.Enum):
    S = "S"
    F = "F"


def as_money(value: Rational, field: str = "money") -> Fraction:
    """Convert to an exact money amount. Floats are rounded to cents,
    half away from zero; strings accept decimals and "a/b" rationals."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise InvalidParameter(field, f"expected a money amount, got {value!r}")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        cents = Decimal(repr(value)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP)
        return Fraction(cents)
    if isinstance(value, str):
        try:
            return Fraction(value.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise InvalidParameter(field, f"unparseable money value {value!r}") from exc
    raise InvalidParameter(field, f"expected a money amount, got {type(value).__name__}")


def as_ratio(value: Rational, field: str = "ratio") -> Fraction:
    """Convert to an exact dimensionless rational. Floats convert exactly
    (binary value); strings accept "a/b" and decimals."""
    if isinstance(value, bool):
        raise InvalidParameter(field, f"expected a number, got {value!r}")
    try:
        return Fraction(value.strip() if isinstance(value, str) else value)
    except (ValueError, TypeError, ZeroDivisionError) as exc:
        raise InvalidParameter(field, f"unparseable value {value!r}") from exc


def format_rational(value: Fraction) -> str:
    """Render a Fraction as "a" or "a/b" for config and JSON output."""
    if value.denominator == 1:
        return str(value.numerator)
    return f"{value.numerator}/{value.denominator}"


@dataclass(frozen=True)
class Treatment:
    """One game parameterization: group size, relative cooperation cost,
    continuation probability, and the money scale/normalization."""

    players: int
    cost_x: Fraction
    delta: Fraction
    pi0: Fraction
    delta_pi: Fraction
    label: str = ""

    def __post_init__(self):
        if not isinstance(self.players, int) or self.players < 2:
            raise InvalidParameter("players", f"need an integer >= 2, got {self.players!r}")
        if self.cost_x <= 0:
            raise InvalidParameter("cost_x", f"need x > 0, got {self.cost_x}")
        if not (0 < self.delta < 1):
            raise InvalidParameter("delta", f"need 0 < delta < 1, got {self.delta}")
        if self.delta_pi <= 0:
            raise InvalidParameter("delta_pi", f"need a positive premium, got {self.delta_pi}")
        table = self.payoff_table()
        ds, cs, df, cf = (
            table[(Action.D, Signal.S)],
            table[(Action.C, Signal.S)],
            table[(Action.D, Signal.F)],
            table[(Action.C, Signal.F)],
        )
        if not (ds > cs > df > cf):
            raise InvalidParameter(
                "payoffs", f"dilemma ordering D,S > C,S > D,F > C,F violated: {ds}, {cs}, {df}, {cf}"
            )

    @property
    def cost_abs(self) -> Fraction:
        """Absolute money cost of cooperating, X = x * delta_pi."""
        return self.cost_x * self.delta_pi

    def payoff_table(self) -> dict[tuple[Action, Signal], Fraction]:
        return {
            (Action.C, Signal.S): self.pi0 + self.delta_pi,
            (Action.D, Signal.S): self.pi0 + (1 + self.cost_x) * self.delta_pi,
            (Action.C, Signal.F): self.pi0 - self.cost_x * self.delta_pi,
            (Action.D, Signal.F): self.pi0,
        }


def build_treatment(
    players: int,
    cost_x: Rational,
    delta: Rational,
    pi0: Rational,
    delta_pi: Rational,
    label: str = "",
) -> Treatment:
    """Validate and construct a Treatment from loosely-typed inputs."""
    return Treatment(
        players=players,
        cost_x=as_ratio(cost_x, "cost_x"),
        delta=as_ratio(delta, "delta"),
        pi0=as_money(pi0, "pi0"),
        delta_pi=as_money(delta_pi, "delta_pi"),
        label=label,
    )


def stage_payoff(treatment: Treatment, action: Action, signal: Signal) -> Fraction:
    """Money payoff for one round given the own action and the group signal."""
    return treatment.payoff_table()[(action, signal)]


def signal_of(others: Sequence[Action]) -> Signal:
    """Success iff every other member cooperated, Failure otherwise."""
    if len(others) == 0:
        raise EmptyOthers("signal needs at least one other player's action")
    return Signal.S if all(a is Action.C for a in others) else Signal.F


def normalize(pi: Rational, pi0: Rational, delta_pi: Rational) -> Fraction:
    """Map money to the dimensionless scale where pi0 -> 0 and pi0 + delta_pi -> 1."""
    base = as_money(pi0, "pi0")
    premium = as_money(delta_pi, "delta_pi")
    if premium <= 0:
        raise InvalidParameter("delta_pi", f"need a positive premium, got {premium}")
    return (as_money(pi, "pi") - base) / premium


@dataclass(frozen=True)
class GeneralPD:
    """Two-player dilemma with separate temptation (g) and sucker (s) costs."""

    temptation: Fraction
    sucker: Fraction
    delta: Fraction
    pi0: Fraction
    delta_pi: Fraction

    def __post_init__(self):
        if self.temptation <= 0:
            raise InvalidParameter("temptation", f"need g > 0, got {self.temptation}")
        if self.sucker <= 0:
            raise InvalidParameter("sucker", f"need s > 0, got {self.sucker}")
        if not (0 < self.delta < 1):
            raise InvalidParameter("delta", f"need 0 < delta < 1, got {self.delta}")
        if self.delta_pi <= 0:
            raise InvalidParameter("delta_pi", f"need a positive premium, got {self.delta_pi}")


def build_general_pd(
    temptation: Rational, sucker: Rational, delta: Rational, pi0: Rational, delta_pi: Rational
) -> GeneralPD:
    return GeneralPD(
        temptation=as_ratio(temptation, "temptation"),
        sucker=as_ratio(sucker, "sucker"),
        delta=as_ratio(delta, "delta"),
        pi0=as_money(pi0, "pi0"),
        delta_pi=as_money(delta_pi, "delta_pi"),
    )


def general_pd_payoffs(pd: GeneralPD) -> dict[tuple[Action, Action], Fraction]:
    """2x2 table keyed by (own action, other action)."""
    return {
        (Action.C, Action.C): pd.pi0 + pd.delta_pi,
        (Action.D, Action.C): pd.pi0 + (1 + pd.temptation) * pd.delta_pi,
        (Action.C, Action.D): pd.pi0 - pd.sucker * pd.delta_pi,
        (Action.D, Action.D): pd.pi0,
    }


TREATMENT_SECTION = "treatment"
_TREATMENT_KEYS = ("players", "cost_x", "delta", "pi0", "delta_pi", "label")


def treatment_to_config(treatment: Treatment) -> str:
    """Serialize to the key = value config block (section [treatment])."""
    parser = configparser.ConfigParser()
    parser[TREATMENT_SECTION] = {
        "players": str(treatment.players),
        "cost_x": format_rational(treatment.cost_x),
        "delta": format_rational(treatment.delta),
        "pi0": format_rational(treatment.pi0),
        "delta_pi": format_rational(treatment.delta_pi),
        "label": treatment.label,
    }
    out = io.StringIO()
    parser.write(out)
    return out.getvalue()


def treatment_from_config(text: str) -> Treatment:
    """Parse a [treatment] config block. Rationals accepted as "a/b" or decimals."""
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unparseable config: {exc}") from exc
    if not parser.has_section(TREATMENT_SECTION):
        raise ConfigError("config is missing the [treatment] section")
    section = parser[TREATMENT_SECTION]
    unknown = set(section) - set(_TREATMENT_KEYS)
    if unknown:
        raise ConfigError(f"unknown treatment keys: {sorted(unknown)}")
    for key in ("players", "cost_x", "delta", "pi0", "delta_pi"):
        if key not in section:
            raise ConfigError(f"treatment config is missing key {key!r}")
    try:
        players = int(section["players"])
    except ValueError as exc:
        raise ConfigError(f"players: not an integer: {section['players']!r}") from exc
    return build_treatment(
        players=players,
        cost_x=section["cost_x"],
        delta=section["delta"],
        pi0=section["pi0"],
        delta_pi=section["delta_pi"],
        label=section.get("label", ""),
    )
