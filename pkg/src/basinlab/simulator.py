"""Monte Carlo session engine for the repeated-dilemma protocol.

A session is a sequence of supergames with geometric random termination
(die-roll semantics when 100*delta is an integer), uniform stranger
rematching into groups, and automaton agents. Strategies are redrawn from a
mixture each supergame (or fixed per session behind a flag), or chosen by a
belief-threshold adaptive rule that compares the smoothed frequency of
round-one joint cooperation with the critical belief.

Randomness is counter-based: the session seed and a stream index key a
Philox generator per supergame, so per-supergame draws are independent of
execution order. Identical configs produce byte-identical records.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Sequence

import numpy as np

from .basin import critical_joint_belief
from .errors import ConfigError, EmptyWindow, InvalidParameter, LengthCapExceeded
from .game import Treatment, format_rational
from .strategies import Mixture, StrategyKind

MAX_ROUNDS = 1000
_LENGTH_STREAM = 1 << 32
_MASK64 = (1 << 64) - 1


def substream(seed: int, index: int) -> np.random.Generator:
    """Counter-based per-purpose stream: Philox keyed on (seed, index)."""
    key = np.array([seed & _MASK64, index & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class AdaptiveSettings:
    """Belief-threshold dynamic: start from an initial Grim share, then each
    agent tracks whether its round-one signal was a success over a trailing
    window (add-one smoothing) and plays Grim iff that belief exceeds the
    critical joint belief (previous strategy kept at exact indifference)."""

    initial_p: float
    belief_window: int = 3

    def __post_init__(self):
        if not (0 <= self.initial_p <= 1):
            raise InvalidParameter("initial_p", f"must lie in [0, 1], got {self.initial_p}")
        if not isinstance(self.belief_window, int) or self.belief_window < 1:
            raise InvalidParameter("belief_window", f"need an integer >= 1, got {self.belief_window!r}")


@dataclass(frozen=True)
class SessionConfig:
    treatment: Treatment
    subjects: int
    seed: int
    supergames: int = 20
    mixture: Mixture | None = None
    adaptive: AdaptiveSettings | None = None
    fixed_types: bool = False
    length_schedule: tuple[int, ...] | None = None
    metric_window: tuple[int, int] | None = None  # 1-based inclusive; default last 5
    switch_at: int | None = None  # first supergame (1-based) played under switch_treatment
    switch_treatment: Treatment | None = None
    session_id: str = "session"

    def __post_init__(self):
        if (self.mixture is None) == (self.adaptive is None):
            raise ConfigError("exactly one of mixture / adaptive must be set")
        if self.supergames < 1:
            raise ConfigError(f"supergames must be >= 1, got {self.supergames}")
        if self.subjects < self.treatment.players or self.subjects % self.treatment.players:
            raise ConfigError(
                f"subjects ({self.subjects}) must be a positive multiple of group size "
                f"({self.treatment.players})"
            )
        if self.fixed_types and self.adaptive is not None:
            raise ConfigError("fixed_types applies to static mixtures only")
        if self.length_schedule is not None and len(self.length_schedule) != self.supergames:
            raise ConfigError(
                f"length_schedule has {len(self.length_schedule)} entries for "
                f"{self.supergames} supergames"
            )
        start, end = self.window()
        if not (1 <= start <= end <= self.supergames):
            raise ConfigError(f"metric window {start}:{end} outside 1:{self.supergames}")
        if (self.switch_at is None) != (self.switch_treatment is None):
            raise ConfigError("switch_at and switch_treatment must be set together")
        if self.switch_at is not None:
            if not (2 <= self.switch_at <= self.supergames):
                raise ConfigError(f"switch_at must lie in 2:{self.supergames}, got {self.switch_at}")
            if self.subjects % self.switch_treatment.players:
                raise ConfigError(
                    f"subjects ({self.subjects}) not divisible by post-switch group size "
                    f"({self.switch_treatment.players})"
                )

    def window(self) -> tuple[int, int]:
        if self.metric_window is not None:
            return self.metric_window
        return (max(1, self.supergames - 4), self.supergames)

    def treatment_at(self, supergame: int) -> Treatment:
        """Treatment in force at a 1-based supergame index."""
        if self.switch_at is not None and supergame >= self.switch_at:
            return self.switch_treatment
        return self.treatment


@dataclass
class SupergameLog:
    """Columnar log of one supergame. Rows of the 2-d arrays are rounds.
    ``triggered`` holds the state each agent acted from (start of round)."""

    length: int
    group_of: np.ndarray  # (subjects,) int32
    grim: np.ndarray  # (subjects,) bool: strategy kind drawn for the supergame
    coop: np.ndarray  # (length, subjects) bool: action == C
    success: np.ndarray  # (length, subjects) bool: signal == S
    triggered: np.ndarray  # (length, subjects) bool


@dataclass
class SessionRecord:
    config: SessionConfig
    lengths: tuple[int, ...]
    supergames: list[SupergameLog] = field(default_factory=list)


def draw_lengths(
    delta: float,
    k: int,
    rng: np.random.Generator,
    max_rounds: int = MAX_ROUNDS,
) -> np.ndarray:
    """Draw k supergame lengths with P(L = t) = delta^(t-1) * (1-delta).

    When 100*delta is an integer m, each round rolls a uniform 1..100 die
    and continues iff the roll is <= m; otherwise a generic geometric
    continuation draw is used. delta = 0 degenerates to all-ones.
    """
    d = float(delta)
    if not (0.0 <= d < 1.0):
        raise InvalidParameter("delta", f"must lie in [0, 1), got {delta}")
    if not isinstance(k, int) or k < 1:
        raise InvalidParameter("k", f"need an integer >= 1, got {k!r}")
    hundred = 100.0 * d
    die_cut = int(round(hundred)) if abs(hundred - round(hundred)) < 1e-9 else None

    lengths = np.ones(k, dtype=np.int64)
    alive = np.arange(k)
    t = 1
    while alive.size:
        if die_cut is not None:
            cont = rng.integers(1, 101, size=alive.size) <= die_cut
        else:
            cont = rng.random(alive.size) < d
        alive = alive[cont]
        if alive.size:
            t += 1
            if t > max_rounds:
                raise LengthCapExceeded(f"a supergame exceeded {max_rounds} rounds")
            lengths[alive] = t
    return lengths


def adaptive_step(
    round1_signals: Sequence[bool],
    previous: StrategyKind,
    q_star: float | Fraction,
    window: int = 3,
) -> StrategyKind:
    """Strategy for the next supergame from the trailing history of
    round-one success observations (True = all partners cooperated)."""
    if len(round1_signals) == 0:
        raise InvalidParameter("round1_signals", "need at least one completed supergame")
    recent = list(round1_signals)[-window:]
    belief = Fraction(sum(bool(s) for s in recent) + 1, len(recent) + 2)
    q = q_star if isinstance(q_star, Fraction) else Fraction(float(q_star))
    if belief > q:
        return StrategyKind.GRIM
    if belief < q:
        return StrategyKind.ALL_D
    return previous


def _adaptive_choices(
    history: np.ndarray,
    completed: int,
    previous: np.ndarray,
    q_star: Fraction,
    window: int,
) -> np.ndarray:
    """Vectorized adaptive_step over subjects: history is (supergames,
    subjects) bool of round-one successes, of which ``completed`` rows are
    filled. Exact integer cross-multiplication replicates the Fraction
    comparison."""
    n_window = min(window, completed)
    successes = history[completed - n_window : completed].sum(axis=0)
    # belief = (successes + 1) / (n_window + 2), compared exactly with q_star
    lhs = (successes + 1) * q_star.denominator
    rhs = q_star.numerator * (n_window + 2)
    grim = previous.copy()
    grim[lhs > rhs] = True
    grim[lhs < rhs] = False
    return grim


def run_session(config: SessionConfig) -> SessionRecord:
    """Play a full session and return its complete log."""
    n_subjects = config.subjects
    if config.length_schedule is not None:
        lengths = np.asarray(config.length_schedule, dtype=np.int64)
        if (lengths < 1).any() or (lengths > MAX_ROUNDS).any():
            raise ConfigError("length_schedule entries must lie in 1..1000")
    else:
        lengths = draw_lengths(
            float(config.treatment.delta), config.supergames, substream(config.seed, _LENGTH_STREAM)
        )

    history = np.zeros((config.supergames, n_subjects), dtype=bool)
    previous_grim = np.zeros(n_subjects, dtype=bool)
    fixed_grim: np.ndarray | None = None
    record = SessionRecord(config=config, lengths=tuple(int(v) for v in lengths))

    for sg in range(config.supergames):
        treatment = config.treatment_at(sg + 1)
        n_players = treatment.players
        n_groups = n_subjects // n_players
        rng = substream(config.seed, sg)

        perm = rng.permutation(n_subjects)
        group_of = np.empty(n_subjects, dtype=np.int32)
        group_of[perm] = np.arange(n_subjects, dtype=np.int32) // n_players

        if config.mixture is not None:
            if config.fixed_types:
                if fixed_grim is None:
                    fixed_grim = rng.random(n_subjects) < float(config.mixture.p)
                grim = fixed_grim
            else:
                grim = rng.random(n_subjects) < float(config.mixture.p)
        else:
            if sg == 0:
                grim = rng.random(n_subjects) < config.adaptive.initial_p
            else:
                q_star = critical_joint_belief(treatment.cost_x, treatment.delta)
                grim = _adaptive_choices(
                    history, sg, previous_grim, q_star, config.adaptive.belief_window
                )
            previous_grim = grim

        log = _play_supergame(int(lengths[sg]), group_of, grim, n_players, n_groups)
        history[sg] = log.success[0]
        record.supergames.append(log)
    return record


def _play_supergame(
    length: int,
    group_of: np.ndarray,
    grim: np.ndarray,
    n_players: int,
    n_groups: int,
) -> SupergameLog:
    n_subjects = group_of.size
    coop = np.zeros((length, n_subjects), dtype=bool)
    success = np.zeros((length, n_subjects), dtype=bool)
    triggered_log = np.zeros((length, n_subjects), dtype=bool)
    trig = np.zeros(n_subjects, dtype=bool)
    for t in range(length):
        acts_c = grim & ~trig
        coop_per_group = np.bincount(group_of[acts_c], minlength=n_groups)
        others_c = coop_per_group[group_of] - acts_c
        sig_s = others_c == (n_players - 1)
        coop[t] = acts_c
        success[t] = sig_s
        triggered_log[t] = trig
        trig = grim & (trig | ~sig_s)
    return SupergameLog(
        length=length,
        group_of=group_of,
        grim=grim.copy(),
        coop=coop,
        success=success,
        triggered=triggered_log,
    )


@dataclass(frozen=True)
class CoopStats:
    """Cooperation and success rates over a supergame window. Cooperation
    rates carry subject-clustered standard errors; success rates do not
    (they are deterministic aggregates of the actions). Ongoing fields are
    None when the window contains no rounds after the first."""

    initial_coop: float
    initial_coop_se: float
    ongoing_coop: float | None
    ongoing_coop_se: float | None
    initial_success: float
    ongoing_success: float | None
    n_subjects: int
    n_decisions: int

    def to_json_dict(self) -> dict:
        return {
            "initial_coop": self.initial_coop,
            "initial_coop_se": self.initial_coop_se,
            "ongoing_coop": self.ongoing_coop,
            "ongoing_coop_se": self.ongoing_coop_se,
            "initial_success": self.initial_success,
            "ongoing_success": self.ongoing_success,
            "n_subjects": self.n_subjects,
            "n_decisions": self.n_decisions,
        }


def _subject_sums(record: SessionRecord, window: tuple[int, int]) -> dict[str, np.ndarray]:
    """Per-subject counts over the window: decisions and cooperations,
    split into round one vs later rounds, plus success counts."""
    n = record.config.subjects
    sums = {
        key: np.zeros(n, dtype=np.int64)
        for key in ("init_n", "init_c", "ong_n", "ong_c", "init_s", "ong_s")
    }
    start, end = window
    for sg in range(start - 1, end):
        log = record.supergames[sg]
        sums["init_n"] += 1
        sums["init_c"] += log.coop[0]
        sums["init_s"] += log.success[0]
        if log.length > 1:
            sums["ong_n"] += log.length - 1
            sums["ong_c"] += log.coop[1:].sum(axis=0)
            sums["ong_s"] += log.success[1:].sum(axis=0)
    return sums


def _clustered_rate(num: np.ndarray, den: np.ndarray) -> tuple[float, float]:
    """Proportion with a cluster-robust (sandwich over cluster sums)
    standard error, clusters being the rows of num/den, with the usual
    G/(G-1) small-sample factor."""
    total = den.sum()
    rate = num.sum() / total
    g = int((den > 0).sum())
    if g < 2:
        return float(rate), 0.0
    resid = num - rate * den
    var = g / (g - 1) * float((resid * resid).sum()) / float(total) ** 2
    return float(rate), float(np.sqrt(var))


def compute_stats(record: SessionRecord, window: tuple[int, int] | None = None) -> CoopStats:
    """Cooperation/success rates for one session (see pool_stats)."""
    return pool_stats([record], window=window)


def pool_stats(records: Sequence[SessionRecord], window: tuple[int, int] | None = None) -> CoopStats:
    """Pool sessions into one set of rates; clusters are (session, subject)."""
    if not records:
        raise InvalidParameter("records", "need at least one session record")
    parts = []
    for rec in records:
        win = window if window is not None else rec.config.window()
        start, end = win
        if not (1 <= start <= end <= rec.config.supergames):
            raise EmptyWindow(f"window {start}:{end} outside 1:{rec.config.supergames}")
        parts.append(_subject_sums(rec, win))
    merged = {key: np.concatenate([p[key] for p in parts]) for key in parts[0]}

    initial_coop, initial_se = _clustered_rate(merged["init_c"], merged["init_n"])
    initial_success = float(merged["init_s"].sum() / merged["init_n"].sum())
    n_decisions = int(merged["init_n"].sum() + merged["ong_n"].sum())
    if merged["ong_n"].sum() > 0:
        ongoing_coop, ongoing_se = _clustered_rate(merged["ong_c"], merged["ong_n"])
        ongoing_success = float(merged["ong_s"].sum() / merged["ong_n"].sum())
    else:
        ongoing_coop = ongoing_se = ongoing_success = None
    return CoopStats(
        initial_coop=initial_coop,
        initial_coop_se=initial_se,
        ongoing_coop=ongoing_coop,
        ongoing_coop_se=ongoing_se,
        initial_success=initial_success,
        ongoing_success=ongoing_success,
        n_subjects=int(merged["init_n"].size),
        n_decisions=n_decisions,
    )


def expected_success(q: float, players: int) -> float:
    """Expected success rate when each other member independently
    cooperates with probability q: q^(N-1)."""
    if not (0 <= q <= 1):
        raise InvalidParameter("q", f"cooperation rate must lie in [0, 1], got {q}")
    if not isinstance(players, int) or isinstance(players, bool) or players < 2:
        raise InvalidParameter("players", f"need an integer >= 2, got {players!r}")
    return float(q) ** (players - 1)


CSV_COLUMNS = (
    "session_id",
    "treatment_label",
    "supergame",
    "round",
    "subject",
    "group",
    "strategy",
    "action",
    "signal",
)


def record_to_csv(record: SessionRecord) -> str:
    """Render the full round log as CSV (one row per subject-round)."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    session_id = record.config.session_id
    for sg_index, log in enumerate(record.supergames, start=1):
        label = record.config.treatment_at(sg_index).label
        for t in range(log.length):
            coop_t, success_t = log.coop[t], log.success[t]
            for subject in range(log.group_of.size):
                writer.writerow(
                    (
                        session_id,
                        label,
                        sg_index,
                        t + 1,
                        subject,
                        int(log.group_of[subject]),
                        StrategyKind.GRIM.value if log.grim[subject] else StrategyKind.ALL_D.value,
                        "C" if coop_t[subject] else "D",
                        "S" if success_t[subject] else "F",
                    )
                )
    return out.getvalue()


def config_to_json_dict(config: SessionConfig) -> dict:
    t = config.treatment
    out = {
        "session_id": config.session_id,
        "seed": config.seed,
        "subjects": config.subjects,
        "supergames": config.supergames,
        "metric_window": list(config.window()),
        "fixed_types": config.fixed_types,
        "treatment": {
            "label": t.label,
            "players": t.players,
            "cost_x": format_rational(t.cost_x),
            "delta": format_rational(t.delta),
            "pi0": format_rational(t.pi0),
            "delta_pi": format_rational(t.delta_pi),
        },
    }
    if config.mixture is not None:
        out["mixture_p"] = float(config.mixture.p)
    if config.adaptive is not None:
        out["adaptive"] = {
            "initial_p": config.adaptive.initial_p,
            "belief_window": config.adaptive.belief_window,
        }
    if config.switch_at is not None:
        s = config.switch_treatment
        out["switch_at"] = config.switch_at
        out["switch_treatment"] = {
            "label": s.label,
            "players": s.players,
            "cost_x": format_rational(s.cost_x),
            "delta": format_rational(s.delta),
            "pi0": format_rational(s.pi0),
            "delta_pi": format_rational(s.delta_pi),
        }
    return out


def record_sidecar(record: SessionRecord) -> str:
    """JSON sidecar with the config echo, seed, and drawn lengths."""
    payload = {
        "config": config_to_json_dict(record.config),
        "lengths": list(record.lengths),
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def stats_table(stats: CoopStats, label: str = "") -> str:
    """Aligned text table: action and signal rates with clustered SEs in
    parentheses under the cooperation rows."""

    def fmt(v: float | None) -> str:
        return "   --" if v is None else f"{v:.3f}"

    def fmt_se(v: float | None) -> str:
        return "" if v is None else f"({v:.3f})"

    rows = [
        ("Initial coop.", fmt(stats.initial_coop), fmt_se(stats.initial_coop_se)),
        ("Ongoing coop.", fmt(stats.ongoing_coop), fmt_se(stats.ongoing_coop_se)),
        ("Initial success", fmt(stats.initial_success), ""),
        ("Ongoing success", fmt(stats.ongoing_success), ""),
    ]
    width = max(len(r[0]) for r in rows)
    col = max(len(label), 7)
    lines = [f"{'':{width}}  {label:>{col}}"]
    for name, value, se in rows:
        lines.append(f"{name:{width}}  {value:>{col}}")
        if se:
            lines.append(f"{'':{width}}  {se:>{col}}")
    return "\n".join(lines) + "\n"


def with_schedule(config: SessionConfig, lengths: Sequence[int]) -> SessionConfig:
    """Copy a config with a pre-drawn length schedule (matched designs)."""
    return replace(config, length_schedule=tuple(int(v) for v in lengths))
