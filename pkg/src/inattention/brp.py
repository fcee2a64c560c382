"""Rationality test for a collection of agents with private utilities.

The test asks whether there exist per-agent utility matrices and scalar
information costs under which (a) every agent's action is a best response to
its own revealed posterior and (b) no agent would gain by swapping to another
agent's information net of the cost difference.  Both families of residuals
are linear in the utilities once the per-observation best responses are
pinned, so maximizing the common slack margin is a linear program; the best
responses themselves are generated lazily as cutting planes.

A margin of zero is always attainable (constant utilities satisfy everything
with equality), so "passes" means the optimal margin is strictly positive.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .constants import DEGENERATE_MARGIN, MARGIN_CAP, UNIT_FLOOR
from .costs import CostPiece, PiecewiseAffineCost
from .dataset import DecisionDataset, atomic_write_text, joint_and_posterior
from .errors import (
    DegenerateDataset,
    DimensionMismatch,
    IoFailure,
    NumericalFailure,
    ProfileMismatch,
    TooFewAgents,
)
from .lp import LinearProgram, LpStatus, solve_lp

__all__ = [
    "UtilityProfile",
    "MarginReport",
    "nias_residuals",
    "niac_residuals",
    "brp_max_margin",
    "brp_sparsest",
    "reconstruct_cost",
    "normalize_profile",
    "save_profile",
    "load_profile",
]

_CUT_TOL = 1e-10
_MAX_CUT_ROUNDS = 100


@dataclass(frozen=True)
class UtilityProfile:
    """A rationality certificate: per-agent utilities, costs, and the margin.

    ``margin`` is the negated maximum of the strict-set residuals, computed
    at construction by :meth:`from_certificate`; solver outputs are
    nonnegative, normalized profiles may carry any positive scale (their
    entries routinely leave the unit box the solver searched).
    """

    utilities: tuple[np.ndarray, ...]
    costs: np.ndarray
    margin: float

    def __post_init__(self):
        utilities = []
        for u in self.utilities:
            arr = np.asarray(u, dtype=float)
            if arr.ndim != 2 or not np.all(np.isfinite(arr)):
                raise DimensionMismatch("utilities must be finite 2-D matrices")
            arr.setflags(write=False)
            utilities.append(arr)
        costs = np.asarray(self.costs, dtype=float)
        if costs.shape != (len(utilities),) or not np.all(np.isfinite(costs)):
            raise DimensionMismatch("need one finite cost per agent")
        costs.setflags(write=False)
        object.__setattr__(self, "utilities", tuple(utilities))
        object.__setattr__(self, "costs", costs)
        object.__setattr__(self, "margin", float(self.margin))

    @classmethod
    def from_certificate(
        cls,
        dataset: DecisionDataset,
        utilities: Sequence[np.ndarray],
        costs: Sequence[float],
    ) -> "UtilityProfile":
        utilities = tuple(np.asarray(u, dtype=float) for u in utilities)
        costs = np.asarray(costs, dtype=float)
        margin = strict_margin(dataset, utilities, costs)
        return cls(utilities=utilities, costs=costs, margin=margin)

    @property
    def num_agents(self) -> int:
        return len(self.utilities)

    def scaled(self, factor: float) -> "UtilityProfile":
        """Rescale utilities, costs, and margin jointly.

        Valid because every residual is positively homogeneous of degree one
        in (utilities, costs) jointly.
        """
        if factor <= 0:
            raise ValueError("scale factor must be positive")
        return UtilityProfile(
            utilities=tuple(factor * u for u in self.utilities),
            costs=factor * self.costs,
            margin=factor * self.margin,
        )

    def squared_norms(self) -> np.ndarray:
        return np.array([float((u * u).sum()) for u in self.utilities])

    def total_l1(self) -> float:
        return float(sum(np.abs(u).sum() for u in self.utilities))


@dataclass(frozen=True)
class MarginReport:
    """Goodness-of-fit summary for a max-margin run.

    ``robustness`` is the margin normalized by the mean squared utility norm
    at the optimizer.  The margin itself is maximized inside the unit boxes
    and the ratio is evaluated afterwards; maximizing the ratio directly is
    scale-degenerate, see ``method``.
    """

    epsilon_star: float
    robustness: float
    utility_norms: np.ndarray
    degenerate: bool
    method: str = "max margin in unit box, ratio reported at optimizer"

    def __post_init__(self):
        norms = np.asarray(self.utility_norms, dtype=float)
        norms.setflags(write=False)
        object.__setattr__(self, "utility_norms", norms)

    @classmethod
    def from_solution(
        cls, margin: float, utility_norms: np.ndarray
    ) -> "MarginReport":
        eps = max(float(margin), 0.0)
        total = float(np.sum(utility_norms))
        robustness = eps * len(utility_norms) / total if total > 0 else 0.0
        return cls(
            epsilon_star=eps,
            robustness=robustness,
            utility_norms=np.asarray(utility_norms, dtype=float),
            degenerate=eps <= DEGENERATE_MARGIN,
        )


# ---------------------------------------------------------------------------
# Residuals


def _check_profile_dims(d: DecisionDataset, utilities) -> list[np.ndarray]:
    mats = [np.asarray(u, dtype=float) for u in utilities]
    if len(mats) != d.num_agents:
        raise DimensionMismatch(
            f"{len(mats)} utility matrices for {d.num_agents} agents"
        )
    for k, u in enumerate(mats):
        if u.shape != (d.num_states, d.num_actions):
            raise DimensionMismatch(
                f"utility {k} has shape {u.shape}, expected "
                f"({d.num_states}, {d.num_actions})"
            )
    return mats


def nias_residuals(d: DecisionDataset, utilities) -> np.ndarray:
    """Best-response residuals, shape (K, A, A).

    Entry (k, a, b) is the gain agent k would see from answering b instead of
    a under its revealed posterior after a; nonpositive everywhere (off the
    diagonal) means every observed action is a best response.  Rows of
    actions an agent never takes are NaN: there is no posterior to test.
    """
    mats = _check_profile_dims(d, utilities)
    out = np.full((d.num_agents, d.num_actions, d.num_actions), np.nan)
    for k, u in enumerate(mats):
        jp = joint_and_posterior(d, k)
        defined = jp.defined_actions
        scores = jp.posterior.T @ u  # (A, A); rows NaN where undefined
        out[k, defined, :] = scores[defined, :] - np.diag(scores)[defined, None]
    return out


def niac_residuals(d: DecisionDataset, utilities, costs) -> np.ndarray:
    """Information-swap residuals, shape (K, K).

    Entry (j, k) compares agent k's realized value against adopting agent j's
    information (with re-optimized actions), net of the cost difference.
    The diagonal carries no cost terms and is always nonnegative.
    """
    mats = _check_profile_dims(d, utilities)
    c = np.asarray(costs, dtype=float)
    if c.shape != (d.num_agents,):
        raise DimensionMismatch(f"costs shape {c.shape}, expected ({d.num_agents},)")
    joints = [joint_and_posterior(d, k).joint for k in range(d.num_agents)]
    K = d.num_agents
    gain = np.empty((K, K))
    realized = np.empty(K)
    for k, u in enumerate(mats):
        realized[k] = float((joints[k] * u).sum())
        for j in range(K):
            gain[j, k] = float((joints[j].T @ u).max(axis=1).sum())
    return gain - c[:, None] - realized[None, :] + c[None, :]


def strict_margin(d: DecisionDataset, utilities, costs) -> float:
    """Negated maximum residual over the strict sets (b != a, j != k)."""
    nias = nias_residuals(d, utilities)
    niac = niac_residuals(d, utilities, costs)
    K, A = d.num_agents, d.num_actions
    off_action = ~np.eye(A, dtype=bool)
    worst = -np.inf
    for k in range(K):
        block = nias[k][off_action]
        block = block[~np.isnan(block)]
        if block.size:
            worst = max(worst, float(block.max()))
    off_agent = ~np.eye(K, dtype=bool)
    worst = max(worst, float(niac[off_agent].max()))
    return -worst


# ---------------------------------------------------------------------------
# Max-margin / sparsity programs


class _BrpProgram:
    """Shared LP assembly for the margin and sparsity stages.

    Variables: K utility matrices (flattened), K costs, and optionally the
    margin.  Best-response rows for the swap residuals are added lazily: a
    candidate solution is scored exactly, and any observation whose true best
    response beats the responses already modelled contributes a new row.
    """

    def __init__(self, d: DecisionDataset):
        if d.num_agents < 2:
            raise TooFewAgents("margin test needs at least two agents")
        self.d = d
        self.K, self.X, self.A = d.num_agents, d.num_states, d.num_actions
        self.jps = [joint_and_posterior(d, k) for k in range(self.K)]
        self.block = self.X * self.A
        # selections[(j, k)] = list of response maps already modelled
        self.selections: dict[tuple[int, int], list[tuple[int, ...]]] = {
            (j, k): [tuple(range(self.A))]
            for j in range(self.K)
            for k in range(self.K)
            if j != k
        }

    def iu(self, k: int, x: int, a: int) -> int:
        return k * self.block + x * self.A + a

    def ic(self, k: int) -> int:
        return self.K * self.block + k

    @property
    def num_core_vars(self) -> int:
        return self.K * self.block + self.K

    def build(self, *, with_margin: bool, rhs_offset: float, objective: np.ndarray):
        n = self.num_core_vars + (1 if with_margin else 0)
        lower = np.full(n, UNIT_FLOOR)
        upper = np.ones(n)
        if with_margin:
            lower[-1] = 0.0
            upper[-1] = MARGIN_CAP
        lp = LinearProgram(objective, lower, upper)
        ieps = n - 1 if with_margin else None

        for k in range(self.K):
            posterior = self.jps[k].posterior
            for a in np.flatnonzero(self.jps[k].defined_actions):
                q = posterior[:, a]
                for b in range(self.A):
                    if b == int(a):
                        continue
                    coeffs: dict[int, float] = {}
                    for x in range(self.X):
                        if q[x] == 0.0:
                            continue
                        coeffs[self.iu(k, x, b)] = coeffs.get(self.iu(k, x, b), 0.0) + q[x]
                        coeffs[self.iu(k, x, int(a))] = (
                            coeffs.get(self.iu(k, x, int(a)), 0.0) - q[x]
                        )
                    if ieps is not None:
                        coeffs[ieps] = 1.0
                    lp.add_leq(coeffs, rhs_offset)

        for (j, k), sigmas in self.selections.items():
            joint_j = self.jps[j].joint
            joint_k = self.jps[k].joint
            for sigma in sigmas:
                coeffs = {}
                for a in range(self.A):
                    for x in range(self.X):
                        if joint_j[x, a]:
                            key = self.iu(k, x, sigma[a])
                            coeffs[key] = coeffs.get(key, 0.0) + joint_j[x, a]
                        if joint_k[x, a]:
                            key = self.iu(k, x, a)
                            coeffs[key] = coeffs.get(key, 0.0) - joint_k[x, a]
                coeffs[self.ic(k)] = coeffs.get(self.ic(k), 0.0) + 1.0
                coeffs[self.ic(j)] = coeffs.get(self.ic(j), 0.0) - 1.0
                if ieps is not None:
                    coeffs[ieps] = 1.0
                lp.add_leq(coeffs, rhs_offset)
        return lp

    def extract(self, point: np.ndarray):
        utilities = tuple(
            point[k * self.block : (k + 1) * self.block].reshape(self.X, self.A).copy()
            for k in range(self.K)
        )
        costs = point[self.K * self.block : self.K * self.block + self.K].copy()
        return utilities, costs

    def add_violated_selections(self, utilities, costs, bound: float) -> bool:
        """Score the candidate exactly; model any better response found.

        ``bound`` is what every swap residual must stay below; a pair whose
        exact residual exceeds it (beyond tolerance) gets its current best
        response appended as a new row.  Returns True if anything was added.
        """
        added = False
        for (j, k), sigmas in self.selections.items():
            scores = self.jps[j].joint.T @ utilities[k]  # (A, A)
            sigma = tuple(int(b) for b in scores.argmax(axis=1))
            if sigma in sigmas:
                continue
            exact = (
                float(scores.max(axis=1).sum())
                - costs[j]
                - float((self.jps[k].joint * utilities[k]).sum())
                + costs[k]
            )
            if exact > bound + _CUT_TOL:
                sigmas.append(sigma)
                added = True
        return added

    def solve_with_cuts(self, *, with_margin: bool, rhs_offset: float, objective):
        for _ in range(_MAX_CUT_ROUNDS):
            lp = self.build(
                with_margin=with_margin, rhs_offset=rhs_offset, objective=objective
            )
            sol = solve_lp(lp)
            if sol.status is not LpStatus.OPTIMAL:
                # The all-floor certificate satisfies every residual with
                # equality, so the margin stage cannot be infeasible; the
                # sparsity stage inherits feasibility from the margin stage.
                raise NumericalFailure(
                    f"feasibility program reported {sol.status.value}; "
                    "this indicates a solver defect, not an infeasible dataset"
                )
            utilities, costs = self.extract(sol.point)
            margin = float(sol.point[-1]) if with_margin else None
            bound = -margin if with_margin else rhs_offset
            if not self.add_violated_selections(utilities, costs, bound):
                return sol, utilities, costs, margin
        raise NumericalFailure("best-response row generation did not converge")


def brp_max_margin(d: DecisionDataset) -> tuple[UtilityProfile, MarginReport]:
    """Maximize the common slack by which the dataset passes the test.

    Returns the optimizing certificate and a report with the normalized
    robustness value.  Never returns "infeasible": constant utilities with
    equal costs always satisfy the residuals with zero slack.
    """
    program = _BrpProgram(d)
    objective = np.zeros(program.num_core_vars + 1)
    objective[-1] = 1.0
    _, utilities, costs, _ = program.solve_with_cuts(
        with_margin=True, rhs_offset=0.0, objective=objective
    )
    profile = UtilityProfile.from_certificate(d, utilities, costs)
    report = MarginReport.from_solution(profile.margin, profile.squared_norms())
    return profile, report


def brp_sparsest(
    d: DecisionDataset,
    margin_fraction: float = 0.5,
    *,
    normalize: bool = True,
) -> UtilityProfile:
    """Sparsest certificate that keeps a fixed fraction of the best margin.

    Stage one finds the max margin; stage two minimizes the total utility
    mass (the entrywise L1 norm, which is just the entry sum inside the
    nonnegative box) subject to every strict residual staying below
    ``-margin_fraction * margin``.  With ``normalize`` the result is rescaled
    so the squared utility norms sum to the number of agents, the gauge in
    which profiles are compared; rescaling preserves feasibility because the
    residuals are homogeneous in (utilities, costs).
    """
    if not 0.0 < margin_fraction < 1.0:
        raise ValueError("margin_fraction must lie strictly between 0 and 1")
    program = _BrpProgram(d)
    objective = np.zeros(program.num_core_vars + 1)
    objective[-1] = 1.0
    _, _, _, margin = program.solve_with_cuts(
        with_margin=True, rhs_offset=0.0, objective=objective
    )
    if margin is None or margin <= DEGENERATE_MARGIN:
        raise DegenerateDataset(
            f"max margin {margin!r} is numerically zero; sparsity is undefined"
        )
    target = -margin_fraction * margin
    sparse_objective = np.zeros(program.num_core_vars)
    sparse_objective[: program.K * program.block] = -1.0
    _, utilities, costs, _ = program.solve_with_cuts(
        with_margin=False, rhs_offset=target, objective=sparse_objective
    )
    profile = UtilityProfile.from_certificate(d, utilities, costs)
    return normalize_profile(profile) if normalize else profile


def normalize_profile(profile: UtilityProfile) -> UtilityProfile:
    """Rescale so the squared utility norms sum to the number of agents."""
    total = float(profile.squared_norms().sum())
    if total <= 0:
        raise ProfileMismatch("cannot normalize an all-zero profile")
    return profile.scaled(float(np.sqrt(profile.num_agents / total)))


def reconstruct_cost(d: DecisionDataset, prof: UtilityProfile) -> PiecewiseAffineCost:
    """Anchor one cost piece at each agent's strategy.

    Evaluating the result at an in-sample strategy returns that agent's
    fitted cost exactly, and each agent's strategy maximizes value minus
    cost over all strategies (the envelope uses re-optimized actions).
    """
    if prof.num_agents != d.num_agents:
        raise ProfileMismatch(
            f"profile has {prof.num_agents} agents, dataset {d.num_agents}"
        )
    for u in prof.utilities:
        if u.shape != (d.num_states, d.num_actions):
            raise ProfileMismatch("profile utilities do not match dataset shape")
    if strict_margin(d, prof.utilities, prof.costs) < -1e-7:
        raise ProfileMismatch(
            "profile violates the feasibility residuals; its cost is not defined"
        )
    pieces = []
    for k in range(d.num_agents):
        gradient = d.prior[:, None] * prof.utilities[k]
        pieces.append(
            CostPiece(
                offset=float(prof.costs[k]),
                anchor=d.choice(k),
                gradient=gradient,
            )
        )
    return PiecewiseAffineCost(pieces=tuple(pieces), linearized=False)


# ---------------------------------------------------------------------------
# Profile files


def profile_to_dict(
    d: DecisionDataset, prof: UtilityProfile, report: MarginReport | None = None,
    metadata: dict | None = None,
) -> dict:
    out = {
        "model": "umri",
        "margin": prof.margin,
        "degenerate": prof.margin <= DEGENERATE_MARGIN,
        "agents": [
            {
                "agent_id": d.agents[k].agent_id,
                "utility": prof.utilities[k].tolist(),
                "cost": float(prof.costs[k]),
            }
            for k in range(prof.num_agents)
        ],
    }
    if report is not None:
        out["robustness"] = report.robustness
    if metadata:
        out["metadata"] = metadata
    return out


def save_profile(
    path: str,
    d: DecisionDataset,
    prof: UtilityProfile,
    report: MarginReport | None = None,
    metadata: dict | None = None,
) -> None:
    payload = profile_to_dict(d, prof, report, metadata)
    atomic_write_text(path, json.dumps(payload, indent=2, sort_keys=True) + "\n")


def load_profile(path: str) -> tuple[UtilityProfile, dict]:
    """Read a profile file; returns the profile and the raw payload."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise IoFailure(f"could not read {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise IoFailure(f"{path} is not valid JSON: {exc}") from exc
    if raw.get("model") != "umri":
        raise IoFailure(f"{path} is not a umri profile file")
    utilities = tuple(np.asarray(a["utility"], dtype=float) for a in raw["agents"])
    costs = np.asarray([a["cost"] for a in raw["agents"]], dtype=float)
    return (
        UtilityProfile(utilities=utilities, costs=costs, margin=float(raw["margin"])),
        raw,
    )
