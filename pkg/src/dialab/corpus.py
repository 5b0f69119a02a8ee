"""Dialogue-corpus tooling.

Corpora are generated by a handcrafted controller (optionally degraded by
random action substitutions), rated 0-3 by a deterministic rubric that
replays the controller's rule table against the logged features, filtered to
expert subsets, and converted into supervised (features, action) pairs and
RL transitions for the two-stage pipeline.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import tracker
from .environment import (ORIGINAL_ACTIONS, SUMMARY_ACTIONS, DialogueEnv,
                          EpisodeLog, Transition, run_episode)
from .ontology import CONSTRAINT_SLOTS
from .seeding import rng_stream

CORPUS_SCHEMA = "dialab-corpus"
SCHEMA_VERSION = 1

PROVENANCES = ("handcrafted", "noisy-handcrafted", "agent")


class CorpusFormatError(ValueError):
    pass


@dataclass
class CorpusDialogue:
    log: EpisodeLog
    rating: int
    provenance: str = "handcrafted"

    def __post_init__(self):
        if self.rating not in (0, 1, 2, 3):
            raise CorpusFormatError(f"rating {self.rating} outside 0..3")
        if self.provenance not in PROVENANCES:
            raise CorpusFormatError(f"unknown provenance '{self.provenance}'")


@dataclass
class Corpus:
    dialogues: list
    space: str
    feature_names: list

    def __len__(self) -> int:
        return len(self.dialogues)


class HandcraftedPolicy:
    """Deterministic rule table over belief features.

    Request each constraint slot (canonical order) while its top-value
    probability is essentially zero; explicitly confirm slots still below
    the confidence threshold; offer once every slot clears it. Repeated
    offers answer the user's outstanding requests. With p_blunder, a turn's
    action is replaced by a uniformly random one.
    """

    def __init__(self, space: str, threshold: float = 0.7,
                 request_bar: float = 0.05, p_blunder: float = 0.0,
                 rng: np.random.Generator | None = None):
        if space not in ("summary", "original"):
            raise ValueError(f"unknown space '{space}'")
        self.space = space
        self.threshold = threshold
        self.request_bar = request_bar
        self.p_blunder = p_blunder
        self.rng = rng
        self.actions = SUMMARY_ACTIONS if space == "summary" else ORIGINAL_ACTIONS

    def decide(self, features: np.ndarray) -> int:
        """The blunder-free rule action for one feature vector."""
        if self.space == "original":
            for i, slot in enumerate(CONSTRAINT_SLOTS):
                if features[2 * i] < self.request_bar:
                    return self.actions.index(f"request-{slot}")
            for i, slot in enumerate(CONSTRAINT_SLOTS):
                if features[2 * i] < self.threshold:
                    return self.actions.index(f"expl-conf-{slot}")
            return self.actions.index("offer")
        for i in range(len(CONSTRAINT_SLOTS)):
            block = int(np.argmax(features[5 * i: 5 * i + 5]))
            if block == 4:
                return self.actions.index("request")
        for i in range(len(CONSTRAINT_SLOTS)):
            block = int(np.argmax(features[5 * i: 5 * i + 5]))
            if block in (2, 3):
                return self.actions.index("expl-conf")
        return self.actions.index("offer")

    def __call__(self, features: np.ndarray) -> int:
        if self.p_blunder > 0.0 and self.rng is not None \
                and self.rng.random() < self.p_blunder:
            return int(self.rng.integers(len(self.actions)))
        return self.decide(features)


class RandomPolicy:
    def __init__(self, n_actions: int, rng: np.random.Generator):
        self.n_actions = n_actions
        self.rng = rng

    def __call__(self, features) -> int:
        return int(self.rng.integers(self.n_actions))


@dataclass(frozen=True)
class BlunderSchedule:
    """Mixture of per-dialogue blunder rates; weights need not sum to one.

    The default mix is calibrated so roughly a third of generated dialogues
    earn the top rating under the default channel noise.
    """

    mix: tuple = ((0.27, 0.0), (0.26, 0.12), (0.26, 0.28), (0.21, 0.55))

    def draw(self, rng: np.random.Generator) -> float:
        weights = np.array([w for w, _ in self.mix], dtype=float)
        i = int(rng.choice(len(self.mix), p=weights / weights.sum()))
        return self.mix[i][1]


def grounded_fraction(log: EpisodeLog) -> float:
    """Share of constraint slots the final belief pins to a concrete value."""
    final = np.asarray(log.final_features, dtype=float)
    hits = 0
    for i in range(len(CONSTRAINT_SLOTS)):
        if log.space == "original":
            if final[2 * i] >= 0.5:
                hits += 1
        else:
            if int(np.argmax(final[5 * i: 5 * i + 5])) != 4:
                hits += 1
    return hits / len(CONSTRAINT_SLOTS)


def count_blunders(log: EpisodeLog) -> int:
    rule = HandcraftedPolicy(log.space)
    return sum(1 for rec in log.records
               if rec.action != rule.decide(np.asarray(rec.features)))


def rate(dialogue: CorpusDialogue | EpisodeLog) -> int:
    """Deterministic 0-3 quality proxy, a pure function of the log.

    3: success with no off-rule turns; 2: success with at most two;
    1: failure with at least half the constraints grounded; 0: otherwise.
    """
    log = dialogue.log if isinstance(dialogue, CorpusDialogue) else dialogue
    blunders = count_blunders(log)
    if log.success and blunders == 0:
        return 3
    if log.success and blunders <= 2:
        return 2
    if not log.success and grounded_fraction(log) >= 0.5:
        return 1
    return 0


def generate_corpus(env: DialogueEnv, n: int, seed: int,
                    schedule: BlunderSchedule | None = None,
                    threshold: float = 0.7) -> Corpus:
    """Run n handcrafted dialogues with per-dialogue blunder rates drawn from
    the schedule; deterministic per seed, parallelizable per dialogue."""
    if n <= 0:
        raise ValueError("corpus size must be positive")
    schedule = schedule or BlunderSchedule()
    dialogues = []
    for i in range(n):
        rng = rng_stream(seed, "corpus", i)
        p_blunder = schedule.draw(rng)
        policy = HandcraftedPolicy(env.config.space, threshold=threshold,
                                   p_blunder=p_blunder, rng=rng)
        log = run_episode(env, policy, rng)
        provenance = "handcrafted" if p_blunder == 0.0 else "noisy-handcrafted"
        dialogues.append(CorpusDialogue(log=log, rating=rate(log),
                                        provenance=provenance))
    return Corpus(dialogues=dialogues, space=env.config.space,
                  feature_names=tracker.feature_names(env.config.space))


def filter_expert(corpus: Corpus) -> Corpus:
    """The rating-3 subset, order preserved."""
    return Corpus(dialogues=[d for d in corpus.dialogues if d.rating == 3],
                  space=corpus.space, feature_names=list(corpus.feature_names))


def _check_layout(corpus: Corpus) -> None:
    want = len(corpus.feature_names)
    for d in corpus.dialogues:
        if d.log.space != corpus.space:
            raise CorpusFormatError(
                f"mixed feature layouts: dialogue space {d.log.space!r} in a "
                f"{corpus.space!r} corpus")
        for rec in d.log.records:
            if len(rec.features) != want:
                raise CorpusFormatError(
                    f"feature length {len(rec.features)} != manifest {want}")


def to_supervised(corpus: Corpus) -> list[tuple[np.ndarray, int]]:
    """One (features, demonstrated action) pair per system turn."""
    _check_layout(corpus)
    pairs = []
    for d in corpus.dialogues:
        for rec in d.log.records:
            pairs.append((np.asarray(rec.features, dtype=float), rec.action))
    return pairs


def to_transitions(corpus: Corpus) -> list[Transition]:
    _check_layout(corpus)
    out = []
    for d in corpus.dialogues:
        out.extend(d.log.transitions())
    return out


def save_corpus(corpus: Corpus, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps({"schema": CORPUS_SCHEMA, "version": SCHEMA_VERSION,
                             "space": corpus.space,
                             "feature_names": list(corpus.feature_names)}) + "\n")
        for d in corpus.dialogues:
            fh.write(json.dumps({"rating": d.rating,
                                 "provenance": d.provenance,
                                 "log": d.log.to_dict()}) + "\n")


def load_corpus(path: str) -> Corpus:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise CorpusFormatError(f"{path}: empty corpus file")
    head = json.loads(lines[0])
    if head.get("schema") != CORPUS_SCHEMA or head.get("version") != SCHEMA_VERSION:
        raise CorpusFormatError(f"{path}: unrecognized corpus header {head!r}")
    dialogues = []
    for ln in lines[1:]:
        if not ln.strip():
            continue
        rec = json.loads(ln)
        dialogues.append(CorpusDialogue(log=EpisodeLog.from_dict(rec["log"]),
                                        rating=rec["rating"],
                                        provenance=rec["provenance"]))
    corpus = Corpus(dialogues=dialogues, space=head["space"],
                    feature_names=head["feature_names"])
    _check_layout(corpus)
    return corpus
