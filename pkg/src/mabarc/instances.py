"""Problem instances: data model, validation, JSON I/O, and the catalog.

An instance is a K x |C| matrix of mean rewards, known context
probabilities, one revenue threshold per arm, and a reward noise model.
The catalog tabulates weighted means p_c * mu_{k,c}; catalog instances use
uniform context probabilities and scale the tabulated values back up by
|C|, which leaves every planning quantity unchanged while fixing a
concrete reward scale for simulation.
"""

import json
from typing import List, Optional, Sequence, Tuple

import numpy as np

GAUSSIAN = "gaussian"
BERNOULLI = "bernoulli"
DETERMINISTIC = "deterministic"

_PROB_TOL = 1e-12


class InstanceError(ValueError):
    """Invalid instance data or malformed instance document."""


class GenerationError(RuntimeError):
    """Rejection sampling failed to produce a suitable instance."""


class RewardModel:
    """Conditional reward distribution attached to an instance.

    kind is "gaussian" (requires sigma > 0, default 1), "bernoulli"
    (instance means must lie in [0, 1]) or "deterministic" (rewards equal
    the means exactly).
    """

    __slots__ = ("kind", "sigma")

    def __init__(self, kind: str = GAUSSIAN, sigma: Optional[float] = None):
        if kind == GAUSSIAN:
            sigma = 1.0 if sigma is None else float(sigma)
            if not sigma > 0:
                raise InstanceError(f"gaussian noise needs sigma > 0, got {sigma}")
        elif kind in (BERNOULLI, DETERMINISTIC):
            if sigma is not None:
                raise InstanceError(f"{kind} noise takes no sigma")
        else:
            raise InstanceError(f"unknown noise kind {kind!r}")
        self.kind = kind
        self.sigma = sigma

    def draw(self, rng: np.random.Generator, mean: float) -> float:
        """Sample one reward with the given conditional mean."""
        if self.kind == GAUSSIAN:
            return float(mean + self.sigma * rng.standard_normal())
        if self.kind == BERNOULLI:
            return float(rng.random() < mean)
        return float(mean)

    def __eq__(self, other) -> bool:
        return (isinstance(other, RewardModel)
                and self.kind == other.kind and self.sigma == other.sigma)

    def __repr__(self) -> str:
        if self.kind == GAUSSIAN:
            return f"RewardModel({self.kind!r}, sigma={self.sigma})"
        return f"RewardModel({self.kind!r})"


class Instance:
    """A revenue-constrained bandit problem.

    Parameters
    ----------
    means:
        K x |C| matrix of conditional mean rewards mu_{k,c}.
    probs:
        Context probabilities, length |C|; must sum to one.
    thresholds:
        Per-arm minimum aggregated revenue per round, length K.
    noise:
        RewardModel; defaults to unit-variance Gaussian.
    name:
        Free-form label used in logs and filenames.
    """

    __slots__ = ("means", "probs", "thresholds", "noise", "name")

    def __init__(self, means, probs, thresholds,
                 noise: Optional[RewardModel] = None, name: str = "unnamed"):
        means = np.array(means, dtype=float)
        probs = np.array(probs, dtype=float)
        thresholds = np.array(thresholds, dtype=float)
        if means.ndim != 2 or means.shape[0] < 1 or means.shape[1] < 1:
            raise InstanceError("means must be a K x C matrix, K, C >= 1")
        num_arms, num_contexts = means.shape
        if probs.shape != (num_contexts,):
            raise InstanceError(
                f"probs shape {probs.shape}, expected ({num_contexts},)")
        if thresholds.shape != (num_arms,):
            raise InstanceError(
                f"thresholds shape {thresholds.shape}, expected ({num_arms},)")
        if not np.isfinite(means).all() or not np.isfinite(thresholds).all():
            raise InstanceError("means and thresholds must be finite")
        if not np.isfinite(probs).all() or (probs <= 0).any():
            raise InstanceError("context probabilities must be positive")
        if abs(float(probs.sum()) - 1.0) > _PROB_TOL:
            raise InstanceError(
                f"context probabilities sum to {probs.sum()!r}, not 1")
        noise = RewardModel() if noise is None else noise
        if noise.kind == BERNOULLI and ((means < 0).any() or (means > 1).any()):
            raise InstanceError("bernoulli rewards need means in [0, 1]")
        for arr in (means, probs, thresholds):
            arr.flags.writeable = False
        self.means = means
        self.probs = probs
        self.thresholds = thresholds
        self.noise = noise
        self.name = str(name)

    @property
    def num_arms(self) -> int:
        return self.means.shape[0]

    @property
    def num_contexts(self) -> int:
        return self.means.shape[1]

    @property
    def kappa(self) -> int:
        """Total number of (arm, context) cells."""
        return self.means.size

    @property
    def contexts(self) -> List[Tuple[float, np.ndarray]]:
        """Per-context view: list of (probability, mean column)."""
        return [(float(self.probs[c]), self.means[:, c])
                for c in range(self.num_contexts)]

    @property
    def weighted_means(self) -> np.ndarray:
        """Matrix G with G_{k,c} = p_c * mu_{k,c} (the planning input)."""
        return self.means * self.probs

    def __eq__(self, other) -> bool:
        return (isinstance(other, Instance)
                and self.name == other.name
                and self.noise == other.noise
                and np.array_equal(self.means, other.means)
                and np.array_equal(self.probs, other.probs)
                and np.array_equal(self.thresholds, other.thresholds))

    def __repr__(self) -> str:
        return (f"Instance({self.name!r}, K={self.num_arms}, "
                f"C={self.num_contexts})")


def load_instance(text) -> Instance:
    """Parse an instance document (JSON text or an equivalent dict).

    Schema: { name, arms, thresholds: [...], contexts: [ { prob,
    means: [mu_{0,c} .. mu_{K-1,c}] } ... ], noise: { kind, sigma? } }.
    """
    if isinstance(text, (str, bytes)):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise InstanceError(f"not valid JSON: {exc}") from exc
    elif isinstance(text, dict):
        doc = text
    else:
        raise InstanceError(f"cannot parse {type(text).__name__} as instance")
    if not isinstance(doc, dict):
        raise InstanceError("instance document must be an object")
    try:
        num_arms = int(doc["arms"])
        thresholds = [float(v) for v in doc["thresholds"]]
        contexts = doc["contexts"]
        noise_doc = doc.get("noise", {"kind": GAUSSIAN, "sigma": 1.0})
        name = str(doc.get("name", "unnamed"))
    except (KeyError, TypeError, ValueError) as exc:
        raise InstanceError(f"malformed instance document: {exc}") from exc
    if not isinstance(contexts, list) or not contexts:
        raise InstanceError("contexts must be a non-empty list")
    probs, columns = [], []
    for entry in contexts:
        try:
            probs.append(float(entry["prob"]))
            col = [float(v) for v in entry["means"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise InstanceError(f"malformed context entry: {exc}") from exc
        if len(col) != num_arms:
            raise InstanceError(
                f"context means length {len(col)} != arms {num_arms}")
        columns.append(col)
    if not isinstance(noise_doc, dict) or "kind" not in noise_doc:
        raise InstanceError("noise must be an object with a 'kind'")
    noise = RewardModel(noise_doc["kind"], noise_doc.get("sigma"))
    means = np.asarray(columns, dtype=float).T  # columns are per-context
    return Instance(means, probs, thresholds, noise, name)


def save_instance(inst: Instance) -> str:
    """Serialize an Instance to its JSON document (round-trips exactly)."""
    noise = {"kind": inst.noise.kind}
    if inst.noise.sigma is not None:
        noise["sigma"] = inst.noise.sigma
    doc = {
        "name": inst.name,
        "arms": inst.num_arms,
        "thresholds": [float(v) for v in inst.thresholds],
        "contexts": [
            {"prob": float(inst.probs[c]),
             "means": [float(v) for v in inst.means[:, c]]}
            for c in range(inst.num_contexts)
        ],
        "noise": noise,
    }
    return json.dumps(doc, indent=2)


def _from_table(name: str, table, thresholds) -> Instance:
    """Catalog constructor: tabulated weighted means, uniform contexts."""
    table = np.asarray(table, dtype=float)
    num_contexts = table.shape[1]
    probs = np.full(num_contexts, 1.0 / num_contexts)
    return Instance(num_contexts * table, probs, thresholds,
                    RewardModel(GAUSSIAN, 1.0), name)


def _require_eps(eps, default, low, high, low_open):
    if eps is None:
        return default
    eps = float(eps)
    if eps < low or (low_open and eps == low) or eps >= high:
        span = ("(" if low_open else "[") + f"{low}, {high})"
        raise InstanceError(f"eps={eps} outside {span}")
    return eps


# Weighted-mean tables and thresholds for the built-in instances.
_NOMINAL_TABLE = [[3.0, 1.0, 1.0], [0.0, 0.5, 0.0], [0.0, 0.0, 2.0]]
_NOMINAL_THRESHOLDS = [1.0, 0.25, 1.0]

_CATALOG_DESCRIPTIONS = {
    "nu0": "Nominal 3-arm, 3-context instance; one arm earns only in one context.",
    "nu_plus": "Nominal instance with arm 1's context-1 weighted mean raised to (1+eps)/2.",
    "nu_minus": "Nominal instance with arm 1's context-1 weighted mean lowered to (1-eps)/2.",
    "nu_prime_lb": "Nominal instance with arm 0's context-2 weighted mean inflated to 2+eps.",
    "nu_sim": "Simulation benchmark: 3 arms, 3 contexts, two arms saturate at the optimum.",
    "nu_prime_ns": "Non-saturating benchmark: identity allocation is optimal, no arm saturates.",
    "greedy_ce": "2x2 instance where greedy estimation locks onto the wrong matching.",
}


def catalog_names() -> List[Tuple[str, str]]:
    """Built-in instance names with one-line descriptions."""
    return sorted(_CATALOG_DESCRIPTIONS.items())


def catalog_get(name: str, eps: Optional[float] = None) -> Instance:
    """Fetch a built-in instance by name.

    eps parametrizes the perturbed variants: nu_plus / nu_minus accept
    eps in [0, 1/4) (0 reproduces the nominal data) and nu_prime_lb
    accepts eps in (0, 1].  Fixed instances reject an eps argument.
    """
    if name in ("nu_plus", "nu_minus"):
        eps = _require_eps(eps, 0.1, 0.0, 0.25, low_open=False)
        sign = 1.0 if name == "nu_plus" else -1.0
        table = [row[:] for row in _NOMINAL_TABLE]
        table[1][1] = (1.0 + sign * eps) / 2.0
        return _from_table(name, table, _NOMINAL_THRESHOLDS)
    if name == "nu_prime_lb":
        eps = _require_eps(eps, 0.5, 0.0, 1.0 + 1e-12, low_open=True)
        table = [row[:] for row in _NOMINAL_TABLE]
        table[0][2] = 2.0 + eps
        return _from_table(name, table, _NOMINAL_THRESHOLDS)
    if eps is not None:
        raise InstanceError(f"instance {name!r} takes no eps parameter")
    if name == "nu0":
        return _from_table(name, _NOMINAL_TABLE, _NOMINAL_THRESHOLDS)
    if name == "nu_sim":
        return _from_table(name,
                           [[3.0, 1.0, 2.0], [0.0, 0.5, 0.0], [0.0, 0.0, 1.0]],
                           [1.0, 0.25, 0.5])
    if name == "nu_prime_ns":
        return _from_table(name,
                           [[3.0, 1.0, 1.0], [0.0, 3.0, 1.0], [1.0, 1.0, 3.0]],
                           [1.0, 1.0, 1.0])
    if name == "greedy_ce":
        return _from_table(name, [[1.0, 2.0], [2.0, 1.0]], [0.1, 0.1])
    raise InstanceError(f"unknown catalog instance {name!r}")


def random_feasible_instance(num_arms: int, num_contexts: int,
                             bounds: Tuple[float, float] = (0.1, 1.0),
                             gamma_min: float = 0.0,
                             seed: int = 0,
                             max_attempts: int = 1000) -> Instance:
    """Draw a strictly feasible instance with feasibility margin >= gamma_min.

    Mean rewards are uniform on bounds, context probabilities Dirichlet(1),
    and thresholds uniform below half of each arm's uniform-allocation
    revenue, which makes acceptance likely; every draw is still re-checked
    with the exact margin computation and rejected if short.  Deterministic
    for a fixed seed.
    """
    from . import oracle  # deferred: oracle depends on this module

    if num_arms < 1 or num_contexts < 1:
        raise InstanceError("need at least one arm and one context")
    if gamma_min < 0:
        raise InstanceError("gamma_min must be >= 0")
    low, high = float(bounds[0]), float(bounds[1])
    if not low < high:
        raise InstanceError(f"empty mean range {bounds}")
    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        means = rng.uniform(low, high, size=(num_arms, num_contexts))
        probs = rng.dirichlet(np.ones(num_contexts))
        uniform_revenue = (means * probs).sum(axis=1) / num_arms
        thresholds = rng.uniform(0.0, np.maximum(uniform_revenue, 0.0) / 2.0)
        inst = Instance(means, probs, thresholds,
                        RewardModel(GAUSSIAN, 1.0),
                        name=f"random-K{num_arms}-C{num_contexts}-seed{seed}")
        margin = oracle.feasibility_margin(inst)
        if margin > 0 and margin >= gamma_min:
            return inst
    raise GenerationError(
        f"no instance with margin >= {gamma_min} in {max_attempts} attempts")
