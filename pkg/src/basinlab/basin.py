"""Basin-of-attraction measures for the AllD strategy, and their inverses.

The width of the belief interval on which AllD beats Grim is the package's
strategic-uncertainty measure. Three closed forms are provided:

* ``basin_two_player(g, s, delta)`` for the asymmetric two-player dilemma,
* ``basin_corr(x, delta)`` treating the other players' strategies as
  perfectly correlated (group size drops out),
* ``basin_ind(x, players, delta)`` treating them as independent, which takes
  the (N-1)-th root of the correlated measure.

All basins equal 1 whenever joint cooperation is not a strict equilibrium
(including the knife-edge boundary x = delta/(1-delta)). Rational inputs are
kept in exact rational arithmetic; only the (N-1)-th root is evaluated in
floating point. ``strategy_values`` gives the per-period expected payoffs of
the two strategies against a joint-cooperation belief Q, whose indifference
point ``critical_joint_belief`` is verified by the Monte Carlo
``indifference_oracle``. ``solve_cost`` / ``solve_players`` invert the
independent measure for treatment design.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .errors import Infeasible, InvalidParameter, NotSPE
from .game import Rational, Treatment, as_money, as_ratio, format_rational

_MAX_ORACLE_ROUNDS = 1000


def _positive_ratio(value: Rational, field: str) -> Fraction:
    out = as_ratio(value, field)
    if out <= 0:
        raise InvalidParameter(field, f"must be positive, got {out}")
    return out


def _continuation(value: Rational, field: str = "delta") -> Fraction:
    out = as_ratio(value, field)
    if not (0 < out < 1):
        raise InvalidParameter(field, f"must lie in (0, 1), got {out}")
    return out


def _player_count(players: int) -> int:
    if not isinstance(players, int) or isinstance(players, bool) or players < 2:
        raise InvalidParameter("players", f"need an integer >= 2, got {players!r}")
    return players


def critical_joint_belief(cost_x: Rational, delta: Rational) -> Fraction:
    """Joint-cooperation belief at which Grim and AllD have equal expected
    value: (1-delta)/delta * x, capped at 1. Exact for rational inputs."""
    x = _positive_ratio(cost_x, "cost_x")
    d = _continuation(delta)
    return min(Fraction(1), (1 - d) / d * x)


def basin_corr(cost_x: Rational, delta: Rational) -> Fraction:
    """AllD basin width under perfectly correlated beliefs; identical to the
    critical joint belief by construction."""
    return critical_joint_belief(cost_x, delta)


def _integer_root(value: int, k: int) -> int | None:
    """Exact k-th root of a nonnegative integer, or None."""
    try:
        guess = round(value ** (1.0 / k))
    except OverflowError:
        return None
    for candidate in (guess - 1, guess, guess + 1):
        if candidate >= 0 and candidate**k == value:
            return candidate
    return None


def _rational_root(q: Fraction, k: int) -> Fraction | None:
    num = _integer_root(q.numerator, k)
    den = _integer_root(q.denominator, k)
    if num is None or den is None:
        return None
    return Fraction(num, den)


def basin_ind(cost_x: Rational, players: int, delta: Rational) -> Fraction | float:
    """AllD basin width under independent beliefs: the (N-1)-th root of the
    correlated measure. Exact when the root is rational (always at N = 2 and
    at the cap); float otherwise."""
    n = _player_count(players)
    q = critical_joint_belief(cost_x, delta)
    if q == 1 or n == 2:
        return q
    root = _rational_root(q, n - 1)
    if root is not None:
        return root
    return float(q) ** (1.0 / (n - 1))


def basin_two_player(g: Rational, s: Rational, delta: Rational) -> Fraction:
    """AllD basin width in the two-player dilemma with temptation g and
    sucker cost s: (1-d)s / (d - (1-d)(g-s)), or 1 when joint cooperation
    is not a strict equilibrium (g >= d/(1-d))."""
    gf = _positive_ratio(g, "g")
    sf = _positive_ratio(s, "s")
    d = _continuation(delta)
    if gf >= d / (1 - d):
        return Fraction(1)
    width = (1 - d) * sf / (d - (1 - d) * (gf - sf))
    return min(Fraction(1), width)


def grim_spe_status(cost_x: Rational, delta: Rational) -> tuple[bool, bool]:
    """(is_spe, knife_edge): joint Grim play is an equilibrium iff
    x <= delta/(1-delta); equality is the non-robust knife edge."""
    x = _positive_ratio(cost_x, "cost_x")
    d = _continuation(delta)
    bound = d / (1 - d)
    return x <= bound, x == bound


class RiskDominance(enum.Enum):
    GRIM = "grim"
    ALL_D = "all_d"
    TIE = "tie"


def risk_dominance(cost_x: Rational, players: int, delta: Rational) -> RiskDominance:
    """Grim risk-dominates iff the independent basin is below 1/2. Compared
    exactly on the pre-root quantity: (1-d)x/d vs (1/2)^(N-1)."""
    n = _player_count(players)
    x = _positive_ratio(cost_x, "cost_x")
    d = _continuation(delta)
    q = (1 - d) / d * x
    half_power = Fraction(1, 2 ** (n - 1))
    if q < half_power:
        return RiskDominance.GRIM
    if q > half_power:
        return RiskDominance.ALL_D
    return RiskDominance.TIE


@dataclass(frozen=True)
class BasinReport:
    """The three basin measures plus equilibrium flags for one treatment."""

    players: int
    cost_x: Fraction
    delta: Fraction
    p_star_corr: float
    p_star_ind: float
    q_star: float
    p_star_corr_exact: Fraction
    q_star_exact: Fraction
    p_star_ind_exact: Fraction | None
    grim_is_spe: bool
    knife_edge: bool
    risk_dominant: RiskDominance

    def to_json_dict(self) -> dict:
        out = {
            "players": self.players,
            "cost_x": format_rational(self.cost_x),
            "delta": format_rational(self.delta),
            "p_star_corr": self.p_star_corr,
            "p_star_corr_exact": format_rational(self.p_star_corr_exact),
            "p_star_ind": self.p_star_ind,
            "p_star_ind_exact": (
                format_rational(self.p_star_ind_exact) if self.p_star_ind_exact is not None else None
            ),
            "q_star": self.q_star,
            "q_star_exact": format_rational(self.q_star_exact),
            "grim_is_spe": self.grim_is_spe,
            "knife_edge": self.knife_edge,
            "risk_dominant": self.risk_dominant.value,
        }
        return out


def basin_report(cost_x: Rational, players: int, delta: Rational) -> BasinReport:
    """Compute every basin measure and flag for one (x, N, delta) point."""
    n = _player_count(players)
    corr = basin_corr(cost_x, delta)
    ind = basin_ind(cost_x, n, delta)
    q = critical_joint_belief(cost_x, delta)
    is_spe, knife = grim_spe_status(cost_x, delta)
    return BasinReport(
        players=n,
        cost_x=as_ratio(cost_x, "cost_x"),
        delta=as_ratio(delta, "delta"),
        p_star_corr=float(corr),
        p_star_ind=float(ind),
        q_star=float(q),
        p_star_corr_exact=corr,
        q_star_exact=q,
        p_star_ind_exact=ind if isinstance(ind, Fraction) else None,
        grim_is_spe=is_spe,
        knife_edge=knife,
        risk_dominant=risk_dominance(cost_x, n, delta),
    )


@dataclass(frozen=True)
class ValuePair:
    """Per-period expected payoffs of the two strategies at a joint belief."""

    v_grim: float | Fraction
    v_alld: float | Fraction


def strategy_values(q: Rational, treatment: Treatment) -> ValuePair:
    """Expected per-period payoff of Grim and AllD when the other N-1
    players jointly play Grim with probability q (and otherwise include at
    least one AllD player). Exact when q is rational."""
    if isinstance(q, (str, Fraction)):
        qv: Fraction | float = as_ratio(q, "q")
    elif isinstance(q, (int, float)) and not isinstance(q, bool):
        qv = q
    else:
        raise InvalidParameter("q", f"expected a probability, got {q!r}")
    if not (0 <= qv <= 1):
        raise InvalidParameter("q", f"joint belief must lie in [0, 1], got {qv}")
    pi0, dp = treatment.pi0, treatment.delta_pi
    x, d = treatment.cost_x, treatment.delta
    v_grim = qv * (pi0 + dp) + (1 - qv) * ((1 - d) * (pi0 - x * dp) + d * pi0)
    v_alld = qv * ((1 - d) * (pi0 + (1 + x) * dp) + d * pi0) + (1 - qv) * pi0
    return ValuePair(v_grim=v_grim, v_alld=v_alld)


@dataclass(frozen=True)
class OracleResult:
    """Monte Carlo estimate of the Grim-minus-AllD value difference."""

    difference: float
    std_error: float
    replications: int
    q: float


def indifference_oracle(
    cost_x: Rational,
    players: int,
    delta: Rational,
    pi0: Rational,
    delta_pi: Rational,
    replications: int,
    rng: np.random.Generator,
    q: float | None = None,
) -> OracleResult:
    """Brute-force check of the critical joint belief.

    Simulates supergames of geometric length (continuation delta) in which
    the N-1 other players jointly play Grim with probability q (default: the
    critical belief) and otherwise include one AllD player. A Grim agent and
    an AllD agent play the same draw of (length, opponent composition), and
    only last-round payoffs count, mirroring the payment scheme. Returns the
    mean paired difference and its standard error.
    """
    n = _player_count(players)
    x = _positive_ratio(cost_x, "cost_x")
    d = _continuation(delta)
    base = as_money(pi0, "pi0")
    premium = as_money(delta_pi, "delta_pi")
    if premium <= 0:
        raise InvalidParameter("delta_pi", f"need a positive premium, got {premium}")
    if x > d / (1 - d):
        raise NotSPE(f"joint cooperation is not an equilibrium at x={x}, delta={d}")
    if not isinstance(replications, int) or replications < 2:
        raise InvalidParameter("replications", f"need an integer >= 2, got {replications!r}")
    q_used = float(critical_joint_belief(x, d)) if q is None else float(q)
    if not (0 <= q_used <= 1):
        raise InvalidParameter("q", f"joint belief must lie in [0, 1], got {q_used}")

    pay = {
        "CS": float(base + premium),
        "DS": float(base + (1 + x) * premium),
        "CF": float(base - x * premium),
        "DF": float(base),
    }
    lengths = np.minimum(rng.geometric(1.0 - float(d), size=replications), _MAX_ORACLE_ROUNDS)
    all_grim = rng.random(replications) < q_used

    pay_grim = _last_round_payoff(True, lengths, all_grim, n, pay)
    pay_alld = _last_round_payoff(False, lengths, all_grim, n, pay)
    diff = pay_grim - pay_alld
    mean = float(diff.mean())
    se = float(diff.std(ddof=1) / math.sqrt(replications))
    return OracleResult(difference=mean, std_error=se, replications=replications, q=q_used)


def _last_round_payoff(
    focal_grim: bool,
    lengths: np.ndarray,
    all_grim: np.ndarray,
    players: int,
    pay: dict[str, float],
) -> np.ndarray:
    """Play every replication's supergame round by round (vectorized over
    replications) and collect the focal player's last-round payoff."""
    k = lengths.size
    n_opp = players - 1
    last = np.empty(k)
    focal_trig = np.zeros(k, dtype=bool)
    opp_alld = np.zeros((k, n_opp), dtype=bool)
    opp_alld[~all_grim, 0] = True
    opp_trig = np.zeros((k, n_opp), dtype=bool)

    active = np.arange(k)
    t = 1
    while active.size:
        focal_c = (~focal_trig[active]) if focal_grim else np.zeros(active.size, dtype=bool)
        opp_c = ~(opp_alld[active] | opp_trig[active])
        focal_s = opp_c.all(axis=1)
        # opponent j's signal: focal cooperated and every other opponent did
        others_c = (opp_c.sum(axis=1, keepdims=True) - opp_c) == (n_opp - 1)
        opp_s = focal_c[:, None] & others_c

        payoff = np.where(
            focal_c,
            np.where(focal_s, pay["CS"], pay["CF"]),
            np.where(focal_s, pay["DS"], pay["DF"]),
        )
        done = lengths[active] == t
        last[active[done]] = payoff[done]

        if focal_grim:
            focal_trig[active] |= ~(focal_c & focal_s)
        opp_trig[active] |= ~opp_s
        active = active[~done]
        t += 1
    return last


def solve_cost(target_p: Rational, players: int, delta: Rational) -> Fraction:
    """Relative cost x whose independent basin equals ``target_p``:
    x = delta/(1-delta) * target^(N-1). Exact for rational targets."""
    n = _player_count(players)
    target = as_ratio(target_p, "target_p")
    if not (0 < target < 1):
        raise InvalidParameter("target_p", f"target basin must lie in (0, 1), got {target}")
    d = _continuation(delta)
    x = d / (1 - d) * target ** (n - 1)
    if x >= d / (1 - d):
        raise Infeasible(
            f"x = {x} reaches the knife edge delta/(1-delta) = {d / (1 - d)}; "
            "joint cooperation would not be a strict equilibrium"
        )
    return x


@dataclass(frozen=True)
class PlayerSolution:
    """Group size solving the independent-basin inversion. ``n_real`` is the
    exact-arithmetic solution (not silently rounded); the bracketing
    integers carry their implied basins, and ``exact`` is set only when one
    of them reproduces the target to 1e-12."""

    n_real: float
    lower: int
    lower_basin: float
    upper: int
    upper_basin: float
    exact: int | None


def solve_players(target_p: Rational, cost_x: Rational, delta: Rational) -> PlayerSolution:
    """Group size N whose independent basin equals ``target_p`` at cost x:
    N = 1 + ln(Q*)/ln(target)."""
    x = _positive_ratio(cost_x, "cost_x")
    d = _continuation(delta)
    target = as_ratio(target_p, "target_p")
    if not (0 < target < 1):
        raise InvalidParameter("target_p", f"target basin must lie in (0, 1), got {target}")
    q = (1 - d) / d * x
    if q >= 1:
        raise Infeasible(f"Q* = {q} >= 1: joint cooperation is not a strict equilibrium")
    n_real = 1.0 + math.log(float(q)) / math.log(float(target))
    if n_real < 2.0 - 1e-9:
        raise Infeasible(
            f"solved N = {n_real:.6g} < 2 (target basin {float(target):.6g} is below "
            f"the correlated basin {float(q):.6g})"
        )
    lower = max(2, math.floor(n_real + 1e-9))
    upper = max(lower, math.ceil(n_real - 1e-9))
    lower_basin = float(basin_ind(x, lower, d))
    upper_basin = float(basin_ind(x, upper, d))
    exact = None
    for k, b in ((lower, lower_basin), (upper, upper_basin)):
        if abs(b - float(target)) <= 1e-12:
            exact = k
            break
    return PlayerSolution(
        n_real=n_real,
        lower=lower,
        lower_basin=lower_basin,
        upper=upper,
        upper_basin=upper_basin,
        exact=exact,
    )
