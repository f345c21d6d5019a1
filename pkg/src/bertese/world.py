"""Synthetic relational-fact world with a deliberate template gap.

Facts are (subject, relation, object) triples. Subjects are shared
across relations, so the object depends on *both* the subject and the
relation, and the relation is identifiable only from the template
wording. Each relation renders through two templates: a canonical one
(the only phrasing the predictor sees during its pretraining) and a
perturbed paraphrase whose distinguishing words never occur in the
pretraining corpus. Queries phrased with the perturbed template are
therefore much harder for the frozen predictor, which is the gap the
rewriter is trained to close.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .seeding import derived_rng
from .vocab import CLS, MASK, SEP, ClozeQuery, SPECIAL_TOKENS, Vocabulary, tokenize

# (relation, canonical template, perturbed template). Slots: [X] subject,
# [Y] object. Every template is six tokens with [X], [Y] and the period
# at the same positions, so no relation is identifiable from sentence
# length or slot position alone — only from the three middle words. The
# perturbed middle words never appear in any canonical template (the
# predictor's pretraining corpus), so the predictor cannot have learned
# them; position alignment means a paraphrase is always repairable by
# per-position token substitution.
TEMPLATE_CATALOG: tuple[tuple[str, str, str], ...] = (
    ("born_in", "[X] was born in [Y] .", "[X] got hatched from [Y] ."),
    ("works_for", "[X] works daily for [Y] .", "[X] toils gladly under [Y] ."),
    ("plays", "[X] plays the loud [Y] .", "[X] strums some quiet [Y] ."),
    ("lives_in", "[X] lives deep inside [Y] .", "[X] dwells far beyond [Y] ."),
    ("speaks", "[X] speaks very fluent [Y] .", "[X] utters rather clumsy [Y] ."),
    ("owns", "[X] owns exactly one [Y] .", "[X] hoards nearly every [Y] ."),
    ("studies", "[X] studies mostly ancient [Y] .", "[X] ponders dusty old [Y] ."),
    ("follows", "[X] follows each new [Y] .", "[X] trails whatever odd [Y] ."),
)

_WORD_CATEGORY = {
    "was": "verb", "got": "verb", "born": "verb", "hatched": "verb",
    "works": "verb", "toils": "verb", "plays": "verb", "strums": "verb",
    "lives": "verb", "dwells": "verb", "speaks": "verb", "utters": "verb",
    "owns": "verb", "hoards": "verb", "studies": "verb", "ponders": "verb",
    "follows": "verb", "trails": "verb",
    "the": "determiner", "some": "determiner", "one": "determiner",
    "every": "determiner", "each": "determiner", "whatever": "determiner",
    "exactly": "determiner", "nearly": "determiner", "mostly": "determiner",
    "in": "noun-filler", "from": "noun-filler", "for": "noun-filler",
    "under": "noun-filler", "inside": "noun-filler", "beyond": "noun-filler",
    "daily": "noun-filler", "gladly": "noun-filler", "deep": "noun-filler",
    "far": "noun-filler", "very": "noun-filler", "rather": "noun-filler",
    "loud": "noun-filler", "quiet": "noun-filler", "fluent": "noun-filler",
    "clumsy": "noun-filler", "ancient": "noun-filler", "dusty": "noun-filler",
    "old": "noun-filler", "new": "noun-filler", "odd": "noun-filler",
    ".": "noun-filler",
}

TOKEN_CATEGORIES = ("entity", "verb", "determiner", "noun-filler")


@dataclass(frozen=True)
class SyntheticWorldSpec:
    relation_count: int = 8
    entities_per_relation: int = 100
    objects_per_relation: int = 20
    eval_fraction: float = 0.5
    seed: int = 0
    templates: tuple[tuple[str, str, str], ...] | None = None

    def resolved_templates(self) -> tuple[tuple[str, str, str], ...]:
        catalog = self.templates if self.templates is not None else TEMPLATE_CATALOG
        if not 1 <= self.relation_count <= len(catalog):
            raise ValueError(
                f"relation_count must be in 1..{len(catalog)} for this template set"
            )
        return tuple(catalog[: self.relation_count])

    def validate(self) -> None:
        if self.entities_per_relation < 2:
            raise ValueError("entities_per_relation must be at least 2")
        if self.objects_per_relation < 2:
            raise ValueError("objects_per_relation must be at least 2")
        if not 0.0 < self.eval_fraction < 1.0:
            raise ValueError("eval_fraction must be strictly between 0 and 1")
        for name, canonical, perturbed in self.resolved_templates():
            for tpl in (canonical, perturbed):
                words = tpl.split()
                if words.count("[X]") != 1 or words.count("[Y]") != 1:
                    raise ValueError(f"template for {name} needs one [X] and one [Y]: {tpl!r}")
            words_c, words_p = canonical.split(), perturbed.split()
            if len(words_c) != len(words_p):
                raise ValueError(
                    f"templates for {name} must have equal length (rewrites are "
                    f"length-preserving): {canonical!r} vs {perturbed!r}"
                )
            for slot in ("[X]", "[Y]"):
                if words_c.index(slot) != words_p.index(slot):
                    raise ValueError(
                        f"templates for {name} must keep {slot} at the same position"
                    )
            if words_c == words_p:
                raise ValueError(
                    f"templates for {name} must differ in at least one non-slot token"
                )


@dataclass(frozen=True)
class Fact:
    subject: str
    relation: str
    object: str


@dataclass
class World:
    spec: SyntheticWorldSpec
    vocab: Vocabulary
    facts: tuple[Fact, ...]
    canonical: tuple[ClozeQuery, ...]
    perturbed_train: tuple[ClozeQuery, ...]
    perturbed_eval: tuple[ClozeQuery, ...]
    token_category: dict[str, str]
    train_subjects: tuple[str, ...]
    eval_subjects: tuple[str, ...]

    def fact_sentences(self) -> list[tuple[int, ...]]:
        """Canonical-template sentences with the object filled in,
        [CLS]/[SEP]-framed — the predictor's pretraining corpus."""
        templates = {n: c for n, c, _ in self.spec.resolved_templates()}
        out = []
        for fact in self.facts:
            text = templates[fact.relation].replace("[X]", fact.subject)
            text = text.replace("[Y]", fact.object)
            ids = [CLS] + [self.vocab.id_of(t) for t in tokenize(text)] + [SEP]
            out.append(tuple(ids))
        return out

    def max_query_len(self) -> int:
        return max(
            len(q) for q in self.canonical + self.perturbed_train + self.perturbed_eval
        )


def _render_query(template: str, subject: str) -> str:
    return template.replace("[X]", subject).replace("[Y]", "[MASK]")


def _make_query(template: str, fact: Fact, vocab: Vocabulary) -> ClozeQuery:
    ids = [CLS] + [vocab.id_of(t) for t in tokenize(_render_query(template, fact.subject))] + [SEP]
    return ClozeQuery(
        tokens=tuple(ids),
        mask_index=ids.index(MASK),
        answer=vocab.id_of(fact.object),
        relation=fact.relation,
    )


def generate_world(spec: SyntheticWorldSpec) -> World:
    """Deterministically build facts, vocabulary, and query splits."""
    spec.validate()
    templates = spec.resolved_templates()

    subjects = [f"ent_{i:03d}" for i in range(spec.entities_per_relation)]
    rng = derived_rng(spec.seed, "world-facts")
    facts: list[Fact] = []
    for name, _, _ in templates:
        objects = [f"obj_{name}_{j:02d}" for j in range(spec.objects_per_relation)]
        seen: set[str] = set()
        for subject in subjects:
            if subject in seen:
                raise ValueError(f"duplicate subject {subject!r} in relation {name}")
            seen.add(subject)
            facts.append(Fact(subject, name, objects[int(rng.integers(spec.objects_per_relation))]))

    words: set[str] = set()
    for name, canonical, perturbed in templates:
        for tpl in (canonical, perturbed):
            words.update(w for w in tokenize(tpl) if w not in ("[x]", "[y]"))
    words.update(subjects)
    words.update(f.object for f in facts)
    words -= set(SPECIAL_TOKENS)
    vocab = Vocabulary.from_corpus(words)

    token_category: dict[str, str] = {}
    for word in vocab.tokens[5:]:
        if word.startswith(("ent_", "obj_")):
            token_category[word] = "entity"
        elif word in _WORD_CATEGORY:
            token_category[word] = _WORD_CATEGORY[word]
        else:
            token_category[word] = "noun-filler"

    split_rng = derived_rng(spec.seed, "subject-split")
    order = list(subjects)
    split_rng.shuffle(order)
    eval_count = max(1, round(len(order) * spec.eval_fraction))
    eval_subjects = tuple(sorted(order[:eval_count]))
    train_subjects = tuple(sorted(order[eval_count:]))

    by_name = {n: (c, p) for n, c, p in templates}
    canonical_queries, perturbed_train, perturbed_eval = [], [], []
    for fact in facts:
        canonical_tpl, perturbed_tpl = by_name[fact.relation]
        canonical_queries.append(_make_query(canonical_tpl, fact, vocab))
        target = perturbed_eval if fact.subject in eval_subjects else perturbed_train
        target.append(_make_query(perturbed_tpl, fact, vocab))

    world = World(
        spec=spec,
        vocab=vocab,
        facts=tuple(facts),
        canonical=tuple(canonical_queries),
        perturbed_train=tuple(perturbed_train),
        perturbed_eval=tuple(perturbed_eval),
        token_category=token_category,
        train_subjects=train_subjects,
        eval_subjects=eval_subjects,
    )
    _check_world(world)
    return world


def _check_world(world: World) -> None:
    """Exhaustive post-generation invariant checks."""
    gold = {}
    for fact in world.facts:
        key = (fact.subject, fact.relation)
        if key in gold:
            raise ValueError(f"duplicate subject {fact.subject!r} in relation {fact.relation!r}")
        gold[key] = fact.object
    for q in world.canonical + world.perturbed_train + world.perturbed_eval:
        assert q.tokens.count(MASK) == 1 and q.tokens[q.mask_index] == MASK
        assert q.tokens[0] == CLS and q.tokens[-1] == SEP
        assert 0 <= q.answer < len(world.vocab)
    if set(world.train_subjects) & set(world.eval_subjects):
        raise ValueError("rewriter train/eval subject splits overlap")


# --- world file round-trip -------------------------------------------------


def _query_to_dict(q: ClozeQuery) -> dict:
    return {
        "tokens": list(q.tokens),
        "mask_index": q.mask_index,
        "answer": q.answer,
        "relation": q.relation,
    }


def _query_from_dict(d: dict) -> ClozeQuery:
    return ClozeQuery(
        tokens=tuple(d["tokens"]),
        mask_index=d["mask_index"],
        answer=d["answer"],
        relation=d["relation"],
    )


def save_world(world: World, path) -> None:
    spec = world.spec
    payload = {
        "spec": {
            "relation_count": spec.relation_count,
            "entities_per_relation": spec.entities_per_relation,
            "objects_per_relation": spec.objects_per_relation,
            "eval_fraction": spec.eval_fraction,
            "seed": spec.seed,
            "templates": [list(t) for t in spec.resolved_templates()],
        },
        "vocab": list(world.vocab.tokens),
        "facts": [[f.subject, f.relation, f.object] for f in world.facts],
        "canonical": [_query_to_dict(q) for q in world.canonical],
        "perturbed_train": [_query_to_dict(q) for q in world.perturbed_train],
        "perturbed_eval": [_query_to_dict(q) for q in world.perturbed_eval],
        "token_category": world.token_category,
        "train_subjects": list(world.train_subjects),
        "eval_subjects": list(world.eval_subjects),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_world(path) -> World:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    s = payload["spec"]
    spec = SyntheticWorldSpec(
        relation_count=s["relation_count"],
        entities_per_relation=s["entities_per_relation"],
        objects_per_relation=s["objects_per_relation"],
        eval_fraction=s["eval_fraction"],
        seed=s["seed"],
        templates=tuple(tuple(t) for t in s["templates"]),
    )
    return World(
        spec=spec,
        vocab=Vocabulary(payload["vocab"]),
        facts=tuple(Fact(*f) for f in payload["facts"]),
        canonical=tuple(_query_from_dict(d) for d in payload["canonical"]),
        perturbed_train=tuple(_query_from_dict(d) for d in payload["perturbed_train"]),
        perturbed_eval=tuple(_query_from_dict(d) for d in payload["perturbed_eval"]),
        token_category=payload["token_category"],
        train_subjects=tuple(payload["train_subjects"]),
        eval_subjects=tuple(payload["eval_subjects"]),
    )
