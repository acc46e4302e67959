"""Piecewise probit of cooperation on basin size, with clustered errors.

The latent index is piecewise linear in the basin measure with a fixed knot
at 1/2 (the risk-dominance dividing point) and level continuity enforced by
the covariate construction z1 = min(p, 1/2), z2 = max(p - 1/2, 0). Fitting
is damped Newton on the (globally concave) probit log-likelihood; the
covariance is the cluster sandwich A^-1 B A^-1 with a G/(G-1) small-sample
factor. A treatment-dummy decomposition of a 2x2 design and the mechanical
initial-to-ongoing mapping p^N round out the module.

Normal CDF/quantile come from scipy.special (ndtr / log_ndtr / ndtri),
which are accurate to well below 1e-12 and tail-safe in log space.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import log_ndtr, ndtr, ndtri

from .errors import (
    InvalidParameter,
    MissingCell,
    NotConverged,
    SchemaError,
    Separation,
    TooFewClusters,
)

KNOT = 0.5
_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Observation:
    """One cooperation decision tagged with its basin size and cluster."""

    cooperated: bool
    p_star: float
    cluster_id: str
    weight: float = 1.0

    def __post_init__(self):
        if not (0 < self.p_star <= 1):
            raise InvalidParameter("p_star", f"must lie in (0, 1], got {self.p_star}")
        if not (self.weight > 0):
            raise InvalidParameter("weight", f"must be positive, got {self.weight}")


def basin_covariates(p_star: float) -> tuple[float, float]:
    """Split a basin size at the knot: (min(p, 1/2), max(p - 1/2, 0)).
    The index b0 + b1*z1 + b2*z2 is continuous in p at the knot."""
    if not (0 < p_star <= 1):
        raise InvalidParameter("p_star", f"must lie in (0, 1], got {p_star}")
    return min(p_star, KNOT), max(p_star - KNOT, 0.0)


@dataclass(frozen=True)
class ProbitFit:
    """Probit MLE with cluster-robust covariance."""

    beta: np.ndarray  # (k,)
    vcov: np.ndarray  # (k, k) cluster sandwich
    vcov_classical: np.ndarray  # (k, k) inverse negative Hessian
    log_likelihood: float
    n_obs: int
    n_clusters: int
    converged: bool
    iterations: int
    gradient_norm: float
    columns: tuple[str, ...]

    def std_errors(self) -> np.ndarray:
        return np.sqrt(np.diag(self.vcov))

    def to_json_dict(self) -> dict:
        return {
            "columns": list(self.columns),
            "beta": [float(b) for b in self.beta],
            "std_errors": [float(s) for s in self.std_errors()],
            "vcov": [float(v) for v in self.vcov.ravel()],
            "log_likelihood": self.log_likelihood,
            "n_obs": self.n_obs,
            "n_clusters": self.n_clusters,
            "converged": self.converged,
            "iterations": self.iterations,
            "gradient_norm": self.gradient_norm,
        }


def _loglik(beta: np.ndarray, X: np.ndarray, sign: np.ndarray, w: np.ndarray) -> float:
    return float(w @ log_ndtr(sign * (X @ beta)))


def probit_mle(
    X: np.ndarray,
    y: np.ndarray,
    weights: np.ndarray,
    clusters: np.ndarray,
    *,
    columns: tuple[str, ...],
    cluster_correction: bool = True,
    tol: float = 1e-10,
    max_iter: int = 200,
    coef_bound: float = 50.0,
    iteration_callback=None,
) -> ProbitFit:
    """Damped Newton probit fit with cluster-sandwich covariance.

    Starts at beta = (ndtri(mean rate), 0, ..., 0); a step is halved until
    the log-likelihood does not decrease. Declares Separation when any
    coefficient passes ``coef_bound`` (the covariates here are O(1), so the
    raw bound is the standardized one) or when the outcome is constant.
    """
    n, k = X.shape
    if n < 3:
        raise InvalidParameter("data", f"need at least 3 observations, got {n}")
    y = np.asarray(y, dtype=float)
    if y.min() == y.max():
        raise Separation("all outcomes identical; no finite maximizer exists")
    labels = np.unique(clusters)
    if labels.size < 2:
        raise TooFewClusters(f"need at least 2 clusters, got {labels.size}")
    w = np.asarray(weights, dtype=float)
    sign = 2.0 * y - 1.0

    rate = float(np.clip((w * y).sum() / w.sum(), 1e-6, 1 - 1e-6))
    beta = np.zeros(k)
    beta[0] = ndtri(rate)
    ll = _loglik(beta, X, sign, w)

    converged = False
    iterations = 0
    grad_norm = math.inf
    for iterations in range(1, max_iter + 1):
        eta = X @ beta
        # lambda_i = sign * phi(eta) / Phi(sign * eta), computed in log space
        lam = sign * np.exp(-0.5 * eta * eta - _LOG_SQRT_2PI - log_ndtr(sign * eta))
        score = X.T @ (w * lam)
        grad_norm = float(np.abs(score).max())
        if grad_norm < tol:
            converged = True
            break
        omega = lam * (lam + eta)
        hess = X.T @ (X * (w * omega)[:, None])
        step = np.linalg.solve(hess, score)
        # accept slack is relative: the log-likelihood is a sum of n terms,
        # so its float resolution scales with |ll|
        slack = 1e-12 * max(1.0, abs(ll))
        scale = 1.0
        for _ in range(60):
            candidate = beta + scale * step
            cand_ll = _loglik(candidate, X, sign, w)
            if cand_ll >= ll - slack:
                break
            scale *= 0.5
        beta = beta + scale * step
        ll = cand_ll
        if iteration_callback is not None:
            iteration_callback(iterations, ll)
        if np.abs(beta).max() > coef_bound:
            raise Separation(
                f"coefficients diverged past {coef_bound}; the data are separated"
            )
    if not converged:
        raise NotConverged(
            f"gradient max-norm {grad_norm:.3g} after {max_iter} iterations (tol {tol:g})"
        )

    eta = X @ beta
    lam = sign * np.exp(-0.5 * eta * eta - _LOG_SQRT_2PI - log_ndtr(sign * eta))
    omega = lam * (lam + eta)
    a_matrix = X.T @ (X * (w * omega)[:, None])
    a_inv = np.linalg.inv(a_matrix)
    scores = X * (w * lam)[:, None]
    _, inverse = np.unique(clusters, return_inverse=True)
    cluster_sums = np.zeros((labels.size, k))
    np.add.at(cluster_sums, inverse, scores)
    b_matrix = cluster_sums.T @ cluster_sums
    g = labels.size
    factor = g / (g - 1) if cluster_correction else 1.0
    vcov = factor * a_inv @ b_matrix @ a_inv
    return ProbitFit(
        beta=beta,
        vcov=vcov,
        vcov_classical=a_inv,
        log_likelihood=ll,
        n_obs=n,
        n_clusters=int(g),
        converged=converged,
        iterations=iterations,
        gradient_norm=grad_norm,
        columns=columns,
    )


PIECEWISE_COLUMNS = ("const", "below_knot", "above_knot")


def fit_piecewise_probit(
    data: list[Observation],
    *,
    cluster_correction: bool = True,
    tol: float = 1e-10,
    max_iter: int = 200,
) -> ProbitFit:
    """Fit cooperation ~ probit(b0 + b1*min(p,1/2) + b2*max(p-1/2,0))."""
    if len(data) < 3:
        raise InvalidParameter("data", f"need at least 3 observations, got {len(data)}")
    X = np.empty((len(data), 3))
    y = np.empty(len(data))
    w = np.empty(len(data))
    clusters = np.empty(len(data), dtype=object)
    for i, obs in enumerate(data):
        z1, z2 = basin_covariates(obs.p_star)
        X[i] = (1.0, z1, z2)
        y[i] = float(obs.cooperated)
        w[i] = obs.weight
        clusters[i] = obs.cluster_id
    return probit_mle(
        X,
        y,
        w,
        clusters,
        columns=PIECEWISE_COLUMNS,
        cluster_correction=cluster_correction,
        tol=tol,
        max_iter=max_iter,
    )


def predict_rate(fit: ProbitFit, p_star: float) -> tuple[float, float]:
    """Predicted cooperation rate at a basin size, with delta-method SE."""
    if not fit.converged:
        raise NotConverged("cannot predict from a fit that did not converge")
    z1, z2 = basin_covariates(p_star)
    x = np.array([1.0, z1, z2])
    eta = float(x @ fit.beta)
    rate = float(ndtr(eta))
    density = math.exp(-0.5 * eta * eta - _LOG_SQRT_2PI)
    se = density * math.sqrt(float(x @ fit.vcov @ x))
    return rate, se


def ongoing_from_initial(p_init: float, players: int) -> float:
    """Ongoing cooperation implied by grim-trigger coordination: the
    probability all N members cooperate initially, p^N."""
    if not (0 <= p_init <= 1):
        raise InvalidParameter("p_init", f"must lie in [0, 1], got {p_init}")
    if not isinstance(players, int) or isinstance(players, bool) or players < 2:
        raise InvalidParameter("players", f"need an integer >= 2, got {players!r}")
    return float(p_init) ** players


@dataclass(frozen=True)
class CellObservation:
    """One cooperation decision tagged with its 2x2 design cell: low_cost
    marks the reduced-cooperation-cost arm (correlated-basin decrease) and
    high_players the larger-group arm within each cost (independent-basin
    increase)."""

    cooperated: bool
    low_cost: bool
    high_players: bool
    cluster_id: str
    weight: float = 1.0

    def __post_init__(self):
        if not (self.weight > 0):
            raise InvalidParameter("weight", f"must be positive, got {self.weight}")


@dataclass(frozen=True)
class DummyDecomposition:
    """Predicted level at the constant plus the two discrete basin-shift
    effects, each with a delta-method, cluster-robust SE."""

    baseline_rate: float
    baseline_se: float
    effect_ind_increase: float
    effect_ind_se: float
    effect_corr_decrease: float
    effect_corr_se: float
    fit: ProbitFit

    def to_json_dict(self) -> dict:
        return {
            "baseline_rate": self.baseline_rate,
            "baseline_se": self.baseline_se,
            "effect_ind_increase": self.effect_ind_increase,
            "effect_ind_se": self.effect_ind_se,
            "effect_corr_decrease": self.effect_corr_decrease,
            "effect_corr_se": self.effect_corr_se,
            "fit": self.fit.to_json_dict(),
        }


DUMMY_COLUMNS = ("const", "ind_increase", "corr_decrease")


def dummy_decomposition(
    data: list[CellObservation],
    *,
    cluster_correction: bool = True,
) -> DummyDecomposition:
    """Probit of cooperation on the two basin-shift dummies; reports the
    baseline rate Phi(b0) and the marginal effects Phi(b0 + bd) - Phi(b0)."""
    cells = {(obs.low_cost, obs.high_players) for obs in data}
    missing = [
        cell
        for cell in ((False, False), (False, True), (True, False), (True, True))
        if cell not in cells
    ]
    if missing:
        names = ", ".join(f"(low_cost={a}, high_players={b})" for a, b in missing)
        raise MissingCell(f"empty design cells: {names}")
    X = np.empty((len(data), 3))
    y = np.empty(len(data))
    w = np.empty(len(data))
    clusters = np.empty(len(data), dtype=object)
    for i, obs in enumerate(data):
        X[i] = (1.0, float(obs.high_players), float(obs.low_cost))
        y[i] = float(obs.cooperated)
        w[i] = obs.weight
        clusters[i] = obs.cluster_id
    fit = probit_mle(
        X, y, w, clusters, columns=DUMMY_COLUMNS, cluster_correction=cluster_correction
    )

    def phi(v: float) -> float:
        return math.exp(-0.5 * v * v - _LOG_SQRT_2PI)

    b0, b_ind, b_corr = fit.beta
    baseline = float(ndtr(b0))
    grad0 = np.array([phi(b0), 0.0, 0.0])
    baseline_se = math.sqrt(float(grad0 @ fit.vcov @ grad0))

    def effect(b_d: float, position: int) -> tuple[float, float]:
        shifted = float(ndtr(b0 + b_d))
        grad = np.zeros(3)
        grad[0] = phi(b0 + b_d) - phi(b0)
        grad[position] = phi(b0 + b_d)
        return shifted - baseline, math.sqrt(float(grad @ fit.vcov @ grad))

    eff_ind, se_ind = effect(float(b_ind), 1)
    eff_corr, se_corr = effect(float(b_corr), 2)
    return DummyDecomposition(
        baseline_rate=baseline,
        baseline_se=baseline_se,
        effect_ind_increase=eff_ind,
        effect_ind_se=se_ind,
        effect_corr_decrease=eff_corr,
        effect_corr_se=se_corr,
        fit=fit,
    )


def decomposition_table(decomp: DummyDecomposition, outcome: str = "Cooperation") -> str:
    """Text table mirroring the 2x2 decomposition layout: predicted level at
    the constant, then the marginal effect of each basin shift."""
    header = ("", "Baseline", "Ind. basin increase", "Corr. basin decrease")
    values = (
        outcome,
        f"{decomp.baseline_rate:.3f}",
        f"{decomp.effect_ind_increase:+.3f}",
        f"{decomp.effect_corr_decrease:+.3f}",
    )
    ses = (
        "",
        f"({decomp.baseline_se:.3f})",
        f"({decomp.effect_ind_se:.3f})",
        f"({decomp.effect_corr_se:.3f})",
    )
    widths = [max(len(h), len(v), len(s)) for h, v, s in zip(header, values, ses)]
    rows = [header, values, ses]
    return "\n".join("  ".join(f"{c:>{w}}" for c, w in zip(row, widths)) for row in rows) + "\n"


OBSERVATION_COLUMNS = ("cooperated", "p_star", "cluster_id", "weight")
CELL_COLUMNS = ("cooperated", "low_cost", "high_players", "cluster_id", "weight")


def _parse_binary(value: str, row: int, column: str) -> bool:
    if value in ("0", "1"):
        return value == "1"
    raise SchemaError(f"expected 0/1, got {value!r}", row=row, column=column)


def read_observations_csv(text: str) -> list[Observation]:
    """Parse observation CSV: cooperated (0/1), p_star, cluster_id[, weight]."""
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None:
        raise SchemaError("empty observations file")
    missing = {"cooperated", "p_star", "cluster_id"} - set(reader.fieldnames)
    if missing:
        raise SchemaError(f"missing columns: {sorted(missing)}")
    out = []
    for row_num, row in enumerate(reader, start=2):
        try:
            p_star = float(row["p_star"])
        except (TypeError, ValueError) as exc:
            raise SchemaError(
                f"unparseable number {row['p_star']!r}", row=row_num, column="p_star"
            ) from exc
        weight = 1.0
        if row.get("weight") not in (None, ""):
            try:
                weight = float(row["weight"])
            except ValueError as exc:
                raise SchemaError(
                    f"unparseable number {row['weight']!r}", row=row_num, column="weight"
                ) from exc
        try:
            out.append(
                Observation(
                    cooperated=_parse_binary(row["cooperated"], row_num, "cooperated"),
                    p_star=p_star,
                    cluster_id=row["cluster_id"],
                    weight=weight,
                )
            )
        except InvalidParameter as exc:
            raise SchemaError(str(exc), row=row_num, column=exc.field) from exc
    return out


def read_cells_csv(text: str) -> list[CellObservation]:
    """Parse 2x2-cell CSV: cooperated, low_cost, high_players (all 0/1),
    cluster_id[, weight]."""
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None:
        raise SchemaError("empty cell-observations file")
    missing = {"cooperated", "low_cost", "high_players", "cluster_id"} - set(reader.fieldnames)
    if missing:
        raise SchemaError(f"missing columns: {sorted(missing)}")
    out = []
    for row_num, row in enumerate(reader, start=2):
        weight = 1.0
        if row.get("weight") not in (None, ""):
            try:
                weight = float(row["weight"])
            except ValueError as exc:
                raise SchemaError(
                    f"unparseable number {row['weight']!r}", row=row_num, column="weight"
                ) from exc
        out.append(
            CellObservation(
                cooperated=_parse_binary(row["cooperated"], row_num, "cooperated"),
                low_cost=_parse_binary(row["low_cost"], row_num, "low_cost"),
                high_players=_parse_binary(row["high_players"], row_num, "high_players"),
                cluster_id=row["cluster_id"],
                weight=weight,
            )
        )
    return out


def observations_to_csv(data: list[Observation]) -> str:
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(OBSERVATION_COLUMNS)
    for obs in data:
        writer.writerow(
            (int(obs.cooperated), repr(obs.p_star), obs.cluster_id, repr(obs.weight))
        )
    return out.getvalue()
