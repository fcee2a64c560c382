"""Prediction across a noise-indexed family of agents.

The family's agents are classifiers trained at increasing noise variances.
Fitting recovers per-agent utilities and costs plus the anchored cost
envelope; a query at a new noise level linearly interpolates the two
surrounding utilities and re-solves the strategy choice problem against the
cost envelope, a single LP once the value term scores each observation with
its labelled action.  That surrogate is exact whenever the optimizer's best
responses agree with its labels, which is certified after the fact rather
than assumed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .brp import UtilityProfile, brp_max_margin
from .costs import CostPiece, PiecewiseAffineCost
from .dataset import DecisionDataset, atomic_write_text
from .errors import (
    DegenerateDataset,
    DimensionMismatch,
    IoFailure,
    NonSquare,
    NumericalFailure,
    OutOfRange,
    ShapeMismatch,
)
from .lp import LinearProgram, LpStatus, solve_lp

__all__ = [
    "NoiseFamily",
    "PredictionOutcome",
    "fit_family",
    "interpolate_utility",
    "predict_choice",
    "predict_at",
    "score_prediction",
    "save_family",
    "load_family",
    "prediction_to_dict",
]

_NIAS_CERT_TOL = 1e-9
_OBJECTIVE_SLACK = 1e-9


@dataclass(frozen=True)
class NoiseFamily:
    """Fitted model for agents indexed by an increasing noise grid."""

    etas: np.ndarray
    dataset: DecisionDataset
    fitted: UtilityProfile
    cost: PiecewiseAffineCost

    def __post_init__(self):
        etas = np.asarray(self.etas, dtype=float)
        if etas.ndim != 1 or etas.shape[0] != self.dataset.num_agents:
            raise DimensionMismatch("need one noise level per agent")
        if np.any(np.diff(etas) <= 0):
            raise DimensionMismatch("noise levels must be strictly increasing")
        etas.setflags(write=False)
        object.__setattr__(self, "etas", etas)

    @property
    def num_agents(self) -> int:
        return self.dataset.num_agents


@dataclass(frozen=True)
class PredictionOutcome:
    """One query: interpolated utility, predicted strategy, and scores."""

    eta: float
    interpolated_utility: np.ndarray
    predicted_choice: np.ndarray
    nias_consistent: bool
    per_class_error: np.ndarray | None = None
    kl_score: float | None = None


def fit_family(d: DecisionDataset, etas) -> NoiseFamily:
    """Fit the family: max-margin utilities plus the anchored cost envelope.

    The envelope pieces are the per-agent linearized ones (offset at the
    fitted cost, gradient prior-weighted fitted utility), which is what the
    prediction LP optimizes against.
    """
    etas = np.asarray(etas, dtype=float)
    if etas.shape != (d.num_agents,):
        raise DimensionMismatch(
            f"{etas.shape[0] if etas.ndim == 1 else 'malformed'} noise levels "
            f"for {d.num_agents} agents"
        )
    if np.any(np.diff(etas) <= 0):
        raise DimensionMismatch("noise levels must be strictly increasing")
    profile, report = brp_max_margin(d)
    if report.degenerate:
        raise DegenerateDataset(
            "max-margin fit is numerically zero; predictions are meaningless"
        )
    pieces = tuple(
        CostPiece(
            offset=float(profile.costs[k]),
            anchor=d.choice(k),
            gradient=d.prior[:, None] * profile.utilities[k],
        )
        for k in range(d.num_agents)
    )
    cost = PiecewiseAffineCost(pieces=pieces, linearized=True)
    return NoiseFamily(etas=etas, dataset=d, fitted=profile, cost=cost)


def _bracket(f: NoiseFamily, eta: float) -> int:
    etas = f.etas
    if eta < etas[0] or eta > etas[-1]:
        raise OutOfRange(
            f"noise level {eta} outside the fitted grid "
            f"[{etas[0]}, {etas[-1]}]; no extrapolation"
        )
    g = int(np.searchsorted(etas, eta, side="right") - 1)
    return min(g, etas.shape[0] - 2)


def interpolate_utility(f: NoiseFamily, eta: float) -> np.ndarray:
    """Linear interpolation of the fitted utilities at ``eta``.

    Grid points reproduce their fitted utility exactly; interior points mix
    the two bracketing utilities with weights proportional to distance over
    the local spacing (so non-uniform grids work unchanged).
    """
    g = _bracket(f, eta)
    etas = f.etas
    if eta == etas[g]:
        return f.fitted.utilities[g].copy()
    if eta == etas[g + 1]:
        return f.fitted.utilities[g + 1].copy()
    h = etas[g + 1] - etas[g]
    w_hi = (eta - etas[g]) / h
    return (1.0 - w_hi) * f.fitted.utilities[g] + w_hi * f.fitted.utilities[g + 1]


def predict_choice(
    f: NoiseFamily, interpolated: np.ndarray, *, eta: float | None = None
) -> tuple[np.ndarray, bool]:
    """Strategy maximizing interpolated value minus the fitted cost envelope.

    Variables are the choice probabilities plus the envelope's epigraph
    scalar.  The optimum is often a face rather than a point (exactly at
    grid etas the whole piece-dominance region ties), so when ``eta`` is
    given, a second stage picks the optimal strategy closest (entrywise L1)
    to the noise-interpolated in-sample strategy, which keeps grid queries
    pinned to the observed behavior.  The returned flag certifies that the
    labelled-action value surrogate agreed with re-optimized actions at the
    optimum.
    """
    u_hat = np.asarray(interpolated, dtype=float)
    X, A = f.dataset.num_states, f.dataset.num_actions
    if u_hat.shape != (X, A):
        raise DimensionMismatch(f"interpolated utility must be ({X}, {A})")
    if not np.all(np.isfinite(u_hat)) or np.any(u_hat < 0):
        raise DimensionMismatch("interpolated utility must be finite and nonnegative")

    gradients = [piece.gradient for piece in f.cost.pieces]
    offsets = [
        piece.offset - float((piece.gradient * piece.anchor).sum())
        for piece in f.cost.pieces
    ]
    bound = max(
        abs(o) + float(np.abs(g).sum()) for o, g in zip(offsets, gradients)
    ) + 1.0

    n = X * A + 1
    lower = np.zeros(n)
    upper = np.ones(n)
    lower[-1], upper[-1] = -bound, bound
    objective = np.zeros(n)
    objective[: X * A] = (f.dataset.prior[:, None] * u_hat).ravel()
    objective[-1] = -1.0
    lp = LinearProgram(objective, lower, upper)
    for x in range(X):
        lp.add_eq({x * A + a: 1.0 for a in range(A)}, 1.0)
    for offset, gradient in zip(offsets, gradients):
        coeffs = {i: v for i, v in enumerate(gradient.ravel()) if v}
        coeffs[n - 1] = -1.0
        lp.add_leq(coeffs, -offset)
    first = solve_lp(lp)
    if first.status is not LpStatus.OPTIMAL:
        raise NumericalFailure(f"prediction program reported {first.status.value}")

    point = first.point
    if eta is not None:
        point = _refine_toward_anchor(f, lp, first, eta)
    strategy = point[: X * A].reshape(X, A)
    strategy = np.clip(strategy, 0.0, None)
    strategy /= strategy.sum(axis=1, keepdims=True)
    return strategy, _nias_certificate(f.dataset.prior, strategy, u_hat)


def _refine_toward_anchor(f: NoiseFamily, lp, first, eta: float) -> np.ndarray:
    """Among optimal strategies, take the L1-closest to the interpolated
    in-sample strategy; inert when the first-stage optimum is unique."""
    g = _bracket(f, eta)
    etas = f.etas
    h = etas[g + 1] - etas[g]
    w_hi = (eta - etas[g]) / h
    target = ((1.0 - w_hi) * f.dataset.choice(g) + w_hi * f.dataset.choice(g + 1)).ravel()

    base = lp.num_vars
    cells = target.shape[0]
    objective = np.zeros(base + cells)
    objective[base:] = -1.0
    lower = np.concatenate([lp.lower, np.zeros(cells)])
    upper = np.concatenate([lp.upper, np.ones(cells)])
    refined = LinearProgram(objective, lower, upper)
    for coeffs, rhs in lp.rows:
        refined.add_leq(coeffs, rhs)
    refined.add_leq(
        {i: -v for i, v in enumerate(lp.objective) if v},
        -(first.objective_value - _OBJECTIVE_SLACK),
    )
    for i in range(cells):
        refined.add_leq({i: 1.0, base + i: -1.0}, float(target[i]))
        refined.add_leq({i: -1.0, base + i: -1.0}, -float(target[i]))
    second = solve_lp(refined)
    if second.status is not LpStatus.OPTIMAL:
        raise NumericalFailure("prediction refinement failed to solve")
    return second.point[:base]


def _nias_certificate(prior, strategy, utility) -> bool:
    joint = prior[:, None] * strategy
    marginal = joint.sum(axis=0)
    ok = True
    for a in np.flatnonzero(marginal > 0):
        posterior = joint[:, a] / marginal[a]
        scores = posterior @ utility
        if scores.max() - scores[a] > _NIAS_CERT_TOL:
            ok = False
            break
    return ok


def predict_at(
    f: NoiseFamily, eta: float, truth: np.ndarray | None = None
) -> PredictionOutcome:
    """Full query pipeline: interpolate, optimize, optionally score."""
    u_hat = interpolate_utility(f, eta)
    strategy, consistent = predict_choice(f, u_hat, eta=eta)
    per_class = None
    kl = None
    if truth is not None:
        per_class, kl = score_prediction(strategy, truth, f.dataset.prior)
    return PredictionOutcome(
        eta=float(eta),
        interpolated_utility=u_hat,
        predicted_choice=strategy,
        nias_consistent=consistent,
        per_class_error=per_class,
        kl_score=kl,
    )


def score_prediction(
    predicted: np.ndarray, truth, prior
) -> tuple[np.ndarray, float]:
    """Per-class diagonal error and prior-weighted divergence.

    The error vector compares correct-classification probabilities class by
    class (defined only when actions and states coincide); the divergence is
    the prior-weighted relative entropy of the true rows against the
    predicted ones, with predicted entries floored away from zero inside the
    logarithm.
    """
    p_hat = np.asarray(predicted, dtype=float)
    p_true = np.asarray(getattr(truth, "choice_prob", truth), dtype=float)
    mu = np.asarray(prior, dtype=float)
    if p_hat.shape != p_true.shape:
        raise ShapeMismatch(f"predicted {p_hat.shape} vs true {p_true.shape}")
    if p_hat.shape[0] != p_hat.shape[1]:
        raise NonSquare("per-class accuracy needs as many actions as states")
    if mu.shape != (p_hat.shape[0],):
        raise ShapeMismatch("prior length must match the number of states")
    delta = np.abs(np.diag(p_hat) - np.diag(p_true))
    ratio = np.zeros_like(p_true)
    mask = p_true > 0
    ratio[mask] = p_true[mask] * (
        np.log(p_true[mask]) - np.log(np.maximum(p_hat[mask], 1e-12))
    )
    kl = float(mu @ ratio.sum(axis=1))
    return delta, max(kl, 0.0)


# ---------------------------------------------------------------------------
# Files


def save_family(path: str, f: NoiseFamily) -> None:
    from .brp import profile_to_dict
    from .dataset import dataset_to_dict

    payload = {
        "etas": f.etas.tolist(),
        "dataset": dataset_to_dict(f.dataset),
        "profile": profile_to_dict(f.dataset, f.fitted),
    }
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_family(path: str) -> NoiseFamily:
    from .dataset import validate_dataset

    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise IoFailure(f"could not read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise IoFailure(f"{path} is not valid JSON: {exc}") from exc
    dataset = validate_dataset(raw["dataset"])
    agents = raw["profile"]["agents"]
    profile = UtilityProfile(
        utilities=tuple(np.asarray(a["utility"], dtype=float) for a in agents),
        costs=np.asarray([a["cost"] for a in agents], dtype=float),
        margin=float(raw["profile"]["margin"]),
    )
    pieces = tuple(
        CostPiece(
            offset=float(profile.costs[k]),
            anchor=dataset.choice(k),
            gradient=dataset.prior[:, None] * profile.utilities[k],
        )
        for k in range(dataset.num_agents)
    )
    return NoiseFamily(
        etas=np.asarray(raw["etas"], dtype=float),
        dataset=dataset,
        fitted=profile,
        cost=PiecewiseAffineCost(pieces=pieces, linearized=True),
    )


def prediction_to_dict(
    outcome: PredictionOutcome, truth: np.ndarray | None = None, labels=None
) -> dict:
    """JSON payload for one query, including the per-class table rows."""
    out = {
        "eta": outcome.eta,
        "kl": outcome.kl_score,
        "nias_consistent": outcome.nias_consistent,
        "per_class": [],
    }
    diag = np.diag(outcome.predicted_choice)
    for x in range(outcome.predicted_choice.shape[0]):
        row = {
            "class": labels[x] if labels else str(x),
            "predicted_diag": float(diag[x]),
            "true_diag": float(truth[x, x]) if truth is not None else None,
            "delta": (
                float(outcome.per_class_error[x])
                if outcome.per_class_error is not None
                else None
            ),
        }
        out["per_class"].append(row)
    return out
