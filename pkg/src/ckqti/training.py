"""Pairwise RankNet training with candidate and collection negatives."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterator, Mapping, Sequence

import numpy as np

from ckqti.checkpoint import Checkpoint
from ckqti.collection import FeatureBuilder
from ckqti.optim import Adam, AdamState
from ckqti.scorer import CKModel
from ckqti.tensor import Tape, Tensor, getitem, mean, no_grad, softplus, sub
from ckqti.text import tokenize

log = logging.getLogger(__name__)

PAIRS_PER_EXAMPLE = 5
# slot order within an example: positive, candidate negative, two collection negatives
POS, CAND, NEG1, NEG2 = range(4)
_PAIR_SLOTS = ((POS, CAND), (POS, NEG1), (POS, NEG2), (CAND, NEG1), (CAND, NEG2))


class TrainingError(RuntimeError):
    def __init__(self, message: str, last_good: Checkpoint | None = None):
        super().__init__(message)
        self.last_good = last_good


@dataclass(frozen=True)
class TrainingExample:
    qid: str
    positive: int
    candidate: int
    negatives: tuple[int, int]

    def __post_init__(self) -> None:
        docs = (self.positive, self.candidate, *self.negatives)
        if len(set(docs)) != 4:
            raise ValueError(f"training example documents must be distinct: {docs}")

    @property
    def docs(self) -> tuple[int, int, int, int]:
        return (self.positive, self.candidate, *self.negatives)


def build_pairs(ex: TrainingExample) -> list[tuple[int, int]]:
    """The five (preferred, other) document pairs of one example.

    The positive beats all three negatives; the candidate negative, drawn from
    the first-stage ranking, beats both random collection negatives.
    """
    docs = ex.docs
    return [(docs[hi], docs[lo]) for hi, lo in _PAIR_SLOTS]


def ranknet_loss(s_hi: Tensor, s_lo: Tensor) -> Tensor:
    """``log(1 + exp(-(s_hi - s_lo)))``, elementwise and overflow-free."""
    return softplus(-sub(s_hi, s_lo))


class ExampleSampler:
    """Deterministic stream of training examples.

    Epochs shuffle the positive pairs with the seeded generator; negatives are
    drawn uniformly, rejecting collisions.
    """

    def __init__(self, positives: Sequence[tuple[str, str]], candidates: Mapping[str, Sequence[str]],
                 builder: FeatureBuilder, rng: np.random.Generator):
        self.builder = builder
        self.rng = rng
        store = builder.store
        self.known: dict[str, set[int]] = {}
        self.pairs = []
        for qid, docid in positives:
            if docid not in store:
                log.warning("training pair (%s, %s): unknown document, skipped", qid, docid)
                continue
            self.pairs.append((qid, store.ordinals[docid]))
            self.known.setdefault(qid, set()).add(store.ordinals[docid])
        self.candidates: dict[str, list[int]] = {}
        for qid, docs in candidates.items():
            known = self.known.get(qid, set())
            self.candidates[qid] = [store.ordinals[d] for d in docs
                                    if d in store and store.ordinals[d] not in known]
        barren = sorted({q for q, _ in self.pairs if not self.candidates.get(q)})
        if barren:
            log.warning("%d queries have no candidate negatives outside their positives; "
                        "their pairs are skipped (first: %s)", len(barren), barren[0])
            self.pairs = [(q, d) for q, d in self.pairs if self.candidates.get(q)]
        if not self.pairs:
            raise ValueError("no usable training pairs")
        self._order: list[int] = []

    def _next_pair(self) -> tuple[str, int]:
        if not self._order:
            self._order = list(self.rng.permutation(len(self.pairs)))[::-1]
        return self.pairs[self._order.pop()]

    def sample(self) -> TrainingExample:
        qid, pos = self._next_pair()
        cands = self.candidates[qid]
        cand = cands[int(self.rng.integers(len(cands)))]
        n = len(self.builder.store)
        taken = {pos, cand} | self.known[qid]
        if n - len(taken) < 2:
            raise ValueError("collection too small to sample two distinct negatives")
        negs = []
        while len(negs) < 2:
            d = int(self.rng.integers(n))
            if d not in taken:
                taken.add(d)
                negs.append(d)
        return TrainingExample(qid, pos, cand, (negs[0], negs[1]))

    def batch(self, size: int) -> list[TrainingExample]:
        return [self.sample() for _ in range(size)]


def batch_loss(model: CKModel, builder: FeatureBuilder, queries: Mapping[str, list[str]],
               examples: Sequence[TrainingExample], rng: np.random.Generator | None,
               training: bool = True) -> Tensor:
    """Mean RankNet loss over the five pairs of every example."""
    qterms, ordinals = [], []
    for ex in examples:
        for d in ex.docs:
            qterms.append(queries[ex.qid])
            ordinals.append(d)
    scores = model.score(builder.batch(qterms, ordinals), training=training, rng=rng)
    base = 4 * np.arange(len(examples))[:, None]
    hi = (base + np.array([h for h, _ in _PAIR_SLOTS])).reshape(-1)
    lo = (base + np.array([l for _, l in _PAIR_SLOTS])).reshape(-1)
    return mean(ranknet_loss(getitem(scores, hi), getitem(scores, lo)))


def train(model: CKModel, builder: FeatureBuilder, queries: Mapping[str, str],
          positives: Sequence[tuple[str, str]], candidates: Mapping[str, Sequence[str]],
          vocab_hash: bytes, optimizer_state: AdamState | None = None,
          losses: list[float] | None = None) -> Iterator[Checkpoint]:
    """Run ``cfg.steps`` optimizer steps, yielding periodic and final checkpoints.

    The final checkpoint has its normalization statistics frozen.  ``losses``,
    when given, receives the mean batch loss of every step.
    """
    cfg = model.cfg
    rng = np.random.default_rng(cfg.seed)
    sampler = ExampleSampler(positives, candidates, builder, rng)
    qterms = {qid: tokenize(text)[:cfg.max_query_len] for qid, text in queries.items()}
    opt = Adam(model.params, lr=cfg.learning_rate, state=optimizer_state)
    names = list(model.params)
    tensors = [model.params[n] for n in names]
    micro = cfg.micro_batch or cfg.batch_size
    last_good = Checkpoint.from_model(model, vocab_hash, opt.state, opt.state.step)
    start = opt.state.step
    for step in range(start + 1, start + cfg.steps + 1):
        examples = sampler.batch(cfg.batch_size)
        grads = {n: np.zeros_like(p.data) for n, p in model.params.items()}
        total = 0.0
        for i in range(0, len(examples), micro):
            chunk = examples[i:i + micro]
            weight = len(chunk) / len(examples)
            with Tape() as tape:
                loss = batch_loss(model, builder, qterms, chunk, rng)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss at step {step}", last_good)
            for n, g in zip(names, tape.backward(loss, tensors)):
                grads[n] += weight * g
            total += weight * value
        try:
            opt.step(grads)
        except FloatingPointError as e:
            raise TrainingError(str(e), last_good) from e
        if losses is not None:
            losses.append(total)
        if step % 50 == 0:
            log.info("step %d loss %.4f", step, total)
        if cfg.checkpoint_every and step % cfg.checkpoint_every == 0 and step < start + cfg.steps:
            last_good = Checkpoint.from_model(model, vocab_hash, opt.state, step)
            yield last_good
    model.stats.frozen = True
    yield Checkpoint.from_model(model, vocab_hash, opt.state, start + cfg.steps)


def calibrate(model: CKModel, builder: FeatureBuilder, queries: Mapping[str, str],
              positives: Sequence[tuple[str, str]], candidates: Mapping[str, Sequence[str]],
              batches: int = 4) -> None:
    """Fill and freeze normalization statistics without touching parameters.

    Gives an untrained model the running statistics inference needs, so it can
    be scored as a baseline.
    """
    cfg = model.cfg
    rng = np.random.default_rng(cfg.seed)
    sampler = ExampleSampler(positives, candidates, builder, rng)
    qterms = {qid: tokenize(text)[:cfg.max_query_len] for qid, text in queries.items()}
    with no_grad():
        for _ in range(batches):
            batch_loss(model, builder, qterms, sampler.batch(cfg.batch_size), rng)
    model.stats.frozen = True
