import numpy as np
import pytest

from inattention.dataset import validate_dataset


def dataset_from_matrices(prior, matrices, ids=None):
    ids = ids or [f"agent-{i}" for i in range(len(matrices))]
    return validate_dataset(
        {
            "num_states": len(prior),
            "num_actions": np.asarray(matrices[0]).shape[1],
            "prior": list(prior),
            "agents": [
                {"agent_id": agent_id, "choice_prob": np.asarray(m).tolist()}
                for agent_id, m in zip(ids, matrices)
            ],
        }
    )


@pytest.fixture
def d2():
    """Two-state fixture with a hand-verified rationality certificate."""
    return dataset_from_matrices(
        [0.5, 0.5],
        [
            [[0.9, 0.1], [0.1, 0.9]],
            [[0.6, 0.4], [0.4, 0.6]],
        ],
        ids=["sharp", "blurry"],
    )


D2_CERTIFICATE = {
    "utilities": [
        np.eye(2),
        np.array([[0.6, 0.4], [0.4, 0.6]]),
    ],
    "costs": np.array([0.2, 0.05]),
    "margin": 0.04,
}


@pytest.fixture
def identical_pair():
    """Two agents sharing one informative strategy: margin is exactly zero."""
    p = [[0.8, 0.2], [0.3, 0.7]]
    return dataset_from_matrices([0.4, 0.6], [p, p])


@pytest.fixture
def uniform_dataset():
    """Non-informative rows for every agent; robustness must be zero."""
    p = np.full((4, 4), 0.25)
    return dataset_from_matrices([0.25] * 4, [p, p, p])


def random_dataset(rng, num_agents=2, num_states=2, num_actions=2):
    prior = rng.dirichlet(np.ones(num_states))
    mats = [
        rng.dirichlet(np.ones(num_actions), size=num_states)
        for _ in range(num_agents)
    ]
    return dataset_from_matrices(prior, mats)


def make_noise_family(seed, num_grid=11, num_classes=3):
    """Smoothly varying synthetic agent family for prediction tests.

    Each class x mislabels with probability tau_x(eta), a gently curved
    function of the noise level eta, spreading the error mass over a fixed
    per-class profile.  The curvature keeps midpoint ground truth off the
    chord between grid anchors, so interpolation-based prediction has a real
    (small) error to make.  Returns (etas, dataset, truth_fn).
    """
    rng = np.random.default_rng(seed)
    etas = np.array([1.0 + 0.1 * g for g in range(num_grid)])
    base = rng.uniform(0.08, 0.15, size=num_classes)
    slope = rng.uniform(0.12, 0.25, size=num_classes)
    curve = rng.uniform(-0.1, 0.1, size=num_classes)
    off_profiles = np.zeros((num_classes, num_classes))
    for x in range(num_classes):
        others = [a for a in range(num_classes) if a != x]
        weights = rng.uniform(0.3, 0.7, size=len(others))
        weights /= weights.sum()
        off_profiles[x, others] = weights

    def truth_at(eta):
        t = eta - 1.0
        tau = base + slope * t + curve * t * t
        mat = off_profiles * tau[:, None]
        np.fill_diagonal(mat, 1.0 - tau)
        return mat

    matrices = [truth_at(eta) for eta in etas]
    dataset = dataset_from_matrices(
        np.full(num_classes, 1.0 / num_classes),
        matrices,
        ids=[f"eta-{eta:.2f}" for eta in etas],
    )
    return etas, dataset, truth_at
