"""Private aggregation of teacher ensembles over a shared frozen encoder.

Teachers are trained on pairwise-disjoint chunks of the sensitive pool and
differ only in their trainable weights; the frozen base stays bit-identical
across the ensemble. A query tallies the teachers' argmax predictions into
a vote histogram, perturbs every count with i.i.d. Laplace noise, and
releases the noisy argmax. The student then trains exclusively on
(public input, released label) pairs.

Accounting uses the data-independent bound for the aggregation mechanism:
swapping one teacher's training chunk moves two vote counts by one each, so
the released label is pure ``2 / noise_scale``-DP per query. The curve
returned by :func:`per_query_rdp` carries that bound at order infinity plus
the standard relaxation ``0.5 * eps^2 * alpha`` at finite orders, which is
what makes many queries affordable under one budget. The per-query vote gap
(winner minus runner-up) is recorded in the ledger so a data-dependent
accountant can be layered on later without touching the mechanism.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from privadapt import nets
from privadapt.datagen import PUBLIC, LabeledDataset, subset
from privadapt.privacy import (
    DEFAULT_ALPHAS,
    PrivacyBudget,
    RdpCurve,
    best_dp,
    compose,
    compose_repeated,
)

__all__ = [
    "BudgetExceededError",
    "VoteHistogram",
    "TeacherEnsemble",
    "PateConfig",
    "QueryLedger",
    "LabelingResult",
    "partition_disjoint",
    "train_teachers",
    "vote",
    "noisy_aggregate",
    "noisy_aggregate_many",
    "per_query_rdp",
    "label_student_data",
    "train_student",
]


class BudgetExceededError(RuntimeError):
    """Raised when a query is requested from an already exhausted ledger."""


@dataclass(frozen=True)
class VoteHistogram:
    """Per-class teacher vote counts for a single query."""

    counts: np.ndarray

    def __post_init__(self) -> None:
        counts = np.asarray(self.counts, dtype=int)
        if counts.ndim != 1 or counts.size < 2:
            raise ValueError("need counts for at least two classes")
        if np.any(counts < 0):
            raise ValueError("vote counts must be nonnegative")
        counts = counts.copy()
        counts.flags.writeable = False
        object.__setattr__(self, "counts", counts)

    @property
    def num_teachers(self) -> int:
        return int(self.counts.sum())

    @property
    def gap(self) -> int:
        """Winner count minus runner-up count."""
        top_two = np.partition(self.counts, -2)[-2:]
        return int(top_two[1] - top_two[0])


@dataclass(frozen=True)
class PateConfig:
    lam: float
    num_teachers: int
    max_queries: int
    target_budget: PrivacyBudget

    def __post_init__(self) -> None:
        if not self.lam > 0.0:
            raise ValueError(f"lam must be positive, got {self.lam}")
        if self.num_teachers < 2:
            raise ValueError("need at least two teachers")
        if self.max_queries < 0:
            raise ValueError("max_queries must be >= 0")


@dataclass
class TeacherEnsemble:
    """N trainable weight sets layered over one shared frozen base model."""

    base: nets.Classifier
    mode: str
    teacher_params: list[dict[str, np.ndarray]]

    def __post_init__(self) -> None:
        if len(self.teacher_params) < 2:
            raise ValueError("an ensemble needs at least two teachers")

    def __len__(self) -> int:
        return len(self.teacher_params)

    @property
    def num_classes(self) -> int:
        return self.base.num_classes

    def materialize(self, index: int) -> nets.Classifier:
        """Classifier with teacher ``index``'s weights swapped in."""
        model = nets.clone(self.base)
        for name, value in self.teacher_params[index].items():
            model.set_param(name, value)
        return model


def partition_disjoint(
    dataset: LabeledDataset, n_teachers: int, rng: np.random.Generator
) -> list[LabeledDataset]:
    """Split into ``n_teachers`` disjoint chunks whose sizes differ by <= 1."""
    if n_teachers < 1:
        raise ValueError("n_teachers must be >= 1")
    if n_teachers > len(dataset):
        raise ValueError(f"cannot split {len(dataset)} rows into {n_teachers} chunks")
    order = rng.permutation(len(dataset))
    return [subset(dataset, part) for part in np.array_split(order, n_teachers)]


def train_teachers(
    chunks: Sequence[LabeledDataset],
    base: nets.Classifier,
    mode: str,
    train_cfg: nets.TrainConfig,
    rng: np.random.Generator,
) -> TeacherEnsemble:
    """Train one weight set per chunk; the base model is never mutated."""
    if len(chunks) < 2:
        raise ValueError("need at least two chunks")
    if any(len(chunk) == 0 for chunk in chunks):
        raise ValueError("every teacher chunk must be non-empty")
    names = nets.trainable_names(base, mode)
    streams = rng.spawn(len(chunks))
    teacher_params = []
    for chunk, stream in zip(chunks, streams):
        trained, _ = nets.train(base, chunk, mode, train_cfg, stream)
        merged = trained.all_params()
        teacher_params.append({name: merged[name] for name in names})
    return TeacherEnsemble(base=base, mode=mode, teacher_params=teacher_params)


def vote(ensemble: TeacherEnsemble, x: np.ndarray) -> VoteHistogram:
    """Tally of the teachers' argmax predictions on one input."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1:
        raise ValueError("vote takes a single feature vector")
    counts = np.zeros(ensemble.num_classes, dtype=int)
    for i in range(len(ensemble)):
        logits = ensemble.materialize(i).forward(x)
        counts[int(np.argmax(logits))] += 1
    return VoteHistogram(counts)


def _batch_vote_counts(ensemble: TeacherEnsemble, features: np.ndarray) -> np.ndarray:
    """(n, num_classes) vote counts; one forward pass per teacher."""
    counts = np.zeros((len(features), ensemble.num_classes), dtype=int)
    for i in range(len(ensemble)):
        logits = ensemble.materialize(i).forward(features)
        predictions = np.argmax(logits, axis=1)
        counts[np.arange(len(features)), predictions] += 1
    return counts


def noisy_aggregate(
    hist: VoteHistogram,
    lam: float,
    rng: np.random.Generator,
    noise_free: bool = False,
) -> int:
    """Argmax over Laplace-perturbed counts; ties go to the lowest index.

    ``noise_free`` skips the perturbation entirely (a debugging aid, not a
    private release).
    """
    if noise_free:
        return int(np.argmax(hist.counts))
    if not lam > 0.0:
        raise ValueError(f"lam must be positive, got {lam}")
    noisy = hist.counts + rng.laplace(0.0, lam, size=hist.counts.size)
    return int(np.argmax(noisy))


def noisy_aggregate_many(
    hist: VoteHistogram, lam: float, rng: np.random.Generator, trials: int
) -> np.ndarray:
    """``trials`` independent draws of the noisy argmax on one histogram.

    Vectorized audit path for Monte-Carlo estimates of the release
    distribution; given the same generator state it returns exactly the
    labels that ``trials`` sequential :func:`noisy_aggregate` calls would.
    """
    if not lam > 0.0:
        raise ValueError(f"lam must be positive, got {lam}")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    noise = rng.laplace(0.0, lam, size=(trials, hist.counts.size))
    return np.argmax(hist.counts + noise, axis=1)


def per_query_rdp(
    lam: float, n_teachers: int, alphas: Sequence[float] = DEFAULT_ALPHAS
) -> RdpCurve:
    """Privacy curve of a single noisy-argmax release.

    One replaced teacher moves two counts by one each (L1 sensitivity 2
    under per-count Laplace noise), so the release is pure ``2/lam``-DP;
    that bound sits at order infinity. Finite orders carry the generic
    relaxation of a pure guarantee, ``min(eps, 0.5 * eps^2 * alpha)``.
    The bound does not depend on the ensemble size.
    """
    if not lam > 0.0:
        raise ValueError(f"lam must be positive, got {lam}")
    if n_teachers < 2:
        raise ValueError("need at least two teachers")
    eps_pure = 2.0 / lam
    grid = tuple(float(a) for a in alphas)
    eps = tuple(min(eps_pure, 0.5 * eps_pure**2 * a) for a in grid)
    return RdpCurve(grid + (math.inf,), eps + (eps_pure,))


@dataclass
class QueryLedger:
    """Sequential record of aggregation queries and their composed cost.

    The ledger is the single synchronization point for budget enforcement:
    queries must be recorded through it one at a time, and a query is
    admitted only if the composed cost after answering it would still fit
    the budget.
    """

    per_query: RdpCurve
    accumulated: RdpCurve
    queries_spent: int = 0
    vote_gaps: list[int] = field(default_factory=list)

    @classmethod
    def fresh(cls, per_query: RdpCurve) -> "QueryLedger":
        return cls(per_query=per_query, accumulated=RdpCurve.zero(per_query.alphas))

    def epsilon_spent(self, delta: float) -> float:
        """Tightest epsilon for the queries answered so far (0 for none)."""
        if self.queries_spent == 0:
            return 0.0
        return best_dp(self.accumulated, delta).budget.epsilon

    def epsilon_after_next(self, delta: float) -> float:
        return best_dp(compose_repeated(self.per_query, self.queries_spent + 1), delta).budget.epsilon

    def can_afford_next(self, budget: PrivacyBudget) -> bool:
        return self.epsilon_after_next(budget.delta) <= budget.epsilon

    def record(self, gap: int) -> None:
        self.queries_spent += 1
        self.accumulated = compose(self.accumulated, self.per_query)
        self.vote_gaps.append(int(gap))

    def to_json(self) -> str:
        """Audit document: query count, order grid, curves, and vote gaps."""
        def encode(values):
            return [("inf" if math.isinf(v) else v) for v in values]

        return json.dumps(
            {
                "queries_spent": self.queries_spent,
                "alphas": encode(self.per_query.alphas),
                "per_query_eps": encode(self.per_query.eps),
                "accumulated_eps": encode(self.accumulated.eps),
                "vote_gaps": self.vote_gaps,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "QueryLedger":
        doc = json.loads(text)

        def decode(values):
            return tuple(math.inf if v == "inf" else float(v) for v in values)

        alphas = decode(doc["alphas"])
        return cls(
            per_query=RdpCurve(alphas, decode(doc["per_query_eps"])),
            accumulated=RdpCurve(alphas, decode(doc["accumulated_eps"])),
            queries_spent=int(doc["queries_spent"]),
            vote_gaps=[int(g) for g in doc["vote_gaps"]],
        )


class LabelingResult(NamedTuple):
    dataset: LabeledDataset
    ledger: QueryLedger
    truncated: bool


def label_student_data(
    ensemble: TeacherEnsemble,
    public_inputs: LabeledDataset,
    config: PateConfig,
    ledger: QueryLedger,
    rng: np.random.Generator,
) -> LabelingResult:
    """Release one noisy label per public input until a cap is hit.

    Stops early, returning the partial output with ``truncated=True``, as
    soon as the next query would push the composed cost past
    ``config.target_budget``. Entering with a ledger that can no longer
    afford any query at all raises :class:`BudgetExceededError` instead.

    The inputs' ground-truth labels are never read; only their features.
    """
    if public_inputs.sensitivity != PUBLIC:
        raise ValueError("refusing to query teachers with a non-public input pool")
    remaining = config.max_queries - ledger.queries_spent
    if remaining <= 0:
        return LabelingResult(subset(public_inputs, []), ledger, False)
    if ledger.queries_spent > 0 and not ledger.can_afford_next(config.target_budget):
        raise BudgetExceededError(
            f"ledger already spent {ledger.epsilon_spent(config.target_budget.delta):.4f} "
            f"of epsilon {config.target_budget.epsilon}"
        )

    n = min(len(public_inputs), remaining)
    counts = _batch_vote_counts(ensemble, public_inputs.features[:n])
    labels = []
    truncated = False
    for i in range(n):
        if not ledger.can_afford_next(config.target_budget):
            truncated = True
            break
        hist = VoteHistogram(counts[i])
        labels.append(noisy_aggregate(hist, config.lam, rng))
        ledger.record(hist.gap)

    labeled = LabeledDataset(
        public_inputs.features[: len(labels)],
        np.asarray(labels, dtype=int),
        PUBLIC,
        ensemble.num_classes,
    )
    return LabelingResult(labeled, ledger, truncated)


def train_student(
    labeled_public: LabeledDataset,
    base: nets.Classifier,
    mode: str,
    train_cfg: nets.TrainConfig,
    rng: np.random.Generator,
) -> nets.Classifier:
    """Train the student on privately labeled public data only."""
    if labeled_public.sensitivity != PUBLIC:
        raise ValueError("the student only ever trains on public data")
    if len(labeled_public) == 0:
        raise ValueError("no labeled data to train the student on")
    student, _ = nets.train(base, labeled_public, mode, train_cfg, rng)
    return student
