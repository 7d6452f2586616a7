"""Logically inconsistent negatives via relation editing.

A donor sentence carrying some other relation between a pair of entities
is rewritten so that its entity pair becomes the target pair: the donor's
relation is transplanted onto the target entities, breaking the logical
consistency that the positive answer has with its context. Negatives keep
the same entity identities as the positive, so identity alone cannot
separate candidates.

Option-oriented: the rewritten donor replaces the answer. Context-oriented:
it replaces one context sentence, and the pair rewritten into it must lie
on the meta-path.

Donor sentences from the host document are preferred over the
cross-document pool; a donor whose only usable pair IS the target pair is
used by exchanging the two target surfaces (the swap fallback). Sampling
is driven entirely by the per-instance generator, so outputs are
reproducible byte-for-byte for a fixed seed.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Iterator, Sequence

from .corpus import Document
from .metapath import PositiveInstance, collect_answer_candidates
from .spans import MentionSpan, rewrite_mentions


@dataclass(frozen=True)
class DonorSentence:
    """A sentence usable as a relation provider, with its mention spans."""

    doc_id: str
    sentence: int
    text: str
    mentions: tuple[MentionSpan, ...]

    @property
    def entity_ids(self) -> frozenset[str]:
        return frozenset(m[0] for m in self.mentions)


@dataclass(frozen=True)
class SynthSentence:
    """A rewritten donor: differs from the donor only inside mention spans."""

    text: str
    donor_doc: str
    donor_sentence: int
    replaced: tuple[tuple[str, str], ...]  # (donor entity -> target entity), 2 entries
    mentions: tuple[MentionSpan, ...]  # every mention span in the new text
    swap: bool = False

    def replaced_map(self) -> dict[str, str]:
        return dict(self.replaced)


@dataclass(frozen=True)
class ContextVariant:
    """A context set with exactly one sentence swapped for a synthetic one."""

    replaced_sentence: int
    replacement: SynthSentence


@dataclass(frozen=True)
class NegativeSet:
    orientation: str  # "option" | "context"
    items: tuple[SynthSentence, ...] | tuple[ContextVariant, ...]
    requested: int

    @property
    def shortfall(self) -> int:
        return self.requested - len(self.items)


def donor_from_document(doc: Document, k: int) -> DonorSentence:
    return DonorSentence(
        doc_id=doc.id,
        sentence=k,
        text=doc.sentences[k].text,
        mentions=tuple(doc.mentions_in_sentence(k)),
    )


def build_donor_pool(
    docs: Sequence[Document], pool_size: int, rng: random.Random
) -> list[DonorSentence]:
    """Cross-document donor pool: sentences mentioning >=2 distinct entities.

    When more are eligible than pool_size, a seeded sample is taken; corpus
    order is preserved so pool content is independent of scheduling.
    """
    refs: list[tuple[int, int]] = []
    for d, doc in enumerate(docs):
        for k in range(len(doc.sentences)):
            if len(doc.sentence_entity_sets[k]) >= 2:
                refs.append((d, k))
    if pool_size >= 0 and len(refs) > pool_size:
        refs = sorted(rng.sample(refs, pool_size))
    return [donor_from_document(docs[d], k) for d, k in refs]


def relation_replace(
    donor: DonorSentence,
    donor_pair: tuple[str, str],
    target: tuple[tuple[str, str], tuple[str, str]],
) -> SynthSentence:
    """Rewrite the donor pair's mentions to the target pair's surfaces.

    `target` is ((entity id, surface), (entity id, surface)). Every mention
    of donor_pair[0] becomes the first target surface, every mention of
    donor_pair[1] the second; all other bytes are preserved and all spans
    are recomputed. Overlapping donor mentions raise OverlappingSpans.
    """
    e_a, e_b = donor_pair
    if e_a == e_b:
        raise ValueError("donor pair entities must differ")
    present = donor.entity_ids
    if e_a not in present or e_b not in present:
        raise ValueError(f"donor does not mention pair ({e_a!r}, {e_b!r})")
    (t_i, surf_i), (t_j, surf_j) = target
    mapping = {e_a: (t_i, surf_i), e_b: (t_j, surf_j)}
    text, mentions = rewrite_mentions(donor.text, list(donor.mentions), mapping)
    return SynthSentence(
        text=text,
        donor_doc=donor.doc_id,
        donor_sentence=donor.sentence,
        replaced=((e_a, t_i), (e_b, t_j)),
        mentions=tuple(mentions),
        swap={e_a, e_b} == {t_i, t_j},
    )


def _eligible_pairs(
    donor: DonorSentence, target_pair: tuple[str, str], rng: random.Random
) -> list[tuple[str, str]]:
    """Ordered donor pairs usable without exchanging the targets, shuffled."""
    t_i, t_j = target_pair
    ids = sorted(donor.entity_ids)
    normal = [
        (a, b)
        for a in ids
        for b in ids
        if a != b and {a, b} != {t_i, t_j}
    ]
    rng.shuffle(normal)
    return normal


def iter_donor_candidates(
    doc: Document,
    pool: Sequence[DonorSentence],
    target_pair: tuple[str, str],
    excluded_sentences: frozenset[int],
    rng: random.Random,
    *,
    swap_fallback: bool = True,
    allow_cross_document: bool = True,
    host_donors: Sequence[DonorSentence] | None = None,
) -> Iterator[tuple[DonorSentence, tuple[str, str]]]:
    """Yield (donor, ordered pair) candidates: host document first, then pool.

    A donor whose only contribution would be the target pair itself is a
    last resort: its exchanged pair is yielded only after every ordinary
    pair of every donor has been tried. `host_donors` may carry the host
    document's precomputed donor sentences (answer exclusion still applies).
    """
    t_i, t_j = target_pair
    if host_donors is None:
        host_donors = [
            donor_from_document(doc, k)
            for k in range(len(doc.sentences))
            if len(doc.sentence_entity_sets[k]) >= 2
        ]
    in_doc = [d for d in host_donors if d.sentence not in excluded_sentences]
    rng.shuffle(in_doc)
    swaps: list[DonorSentence] = []
    for donor in in_doc:
        for pair in _eligible_pairs(donor, target_pair, rng):
            yield donor, pair
        if swap_fallback and {t_i, t_j} <= donor.entity_ids:
            swaps.append(donor)
    if allow_cross_document:
        # Materialized only when the host document runs dry: most instances
        # never touch the pool, and filtering it per instance is not free.
        foreign = [d for d in pool if d.doc_id != doc.id]
        rng.shuffle(foreign)
        for donor in foreign:
            for pair in _eligible_pairs(donor, target_pair, rng):
                yield donor, pair
            if swap_fallback and {t_i, t_j} <= donor.entity_ids:
                swaps.append(donor)
    for donor in swaps:
        yield donor, (t_j, t_i)  # exchange the target mentions


def sample_relation_provider(
    inst: PositiveInstance,
    doc: Document,
    pool: Sequence[DonorSentence],
    rng: random.Random,
    *,
    swap_fallback: bool = True,
    allow_cross_document: bool = True,
    host_donors: Sequence[DonorSentence] | None = None,
) -> tuple[DonorSentence, tuple[str, str], bool] | None:
    """First eligible (donor, pair, is_swap) for the instance, or None."""
    answers = collect_answer_candidates(doc, inst.pair)
    for donor, pair in iter_donor_candidates(
        doc,
        pool,
        inst.pair,
        answers,
        rng,
        swap_fallback=swap_fallback,
        allow_cross_document=allow_cross_document,
        host_donors=host_donors,
    ):
        return donor, pair, set(pair) == set(inst.pair)
    return None


def _target_with_surfaces(doc: Document, pair: tuple[str, str]):
    a, b = pair
    return ((a, doc.entity_index[a].surface), (b, doc.entity_index[b].surface))


def make_negative_options(
    inst: PositiveInstance,
    doc: Document,
    pool: Sequence[DonorSentence],
    k: int,
    rng: random.Random,
    *,
    swap_fallback: bool = True,
    allow_cross_document: bool = True,
    ready: Sequence[SynthSentence] = (),
    host_donors: Sequence[DonorSentence] | None = None,
) -> NegativeSet:
    """Up to k distinct synthetic answer options for the instance.

    Each candidate mentions both target entities. Candidates textually
    equal to any answer sentence of the pair, to the donor itself, or to a
    previously taken negative are rejected and the next donor is tried.
    `ready` holds pre-built candidates (answer sentences of other documents
    linking the same pair) tried before any relation editing.
    """
    answers = collect_answer_candidates(doc, inst.pair)
    forbidden = {doc.sentences[a].text for a in answers}
    target = _target_with_surfaces(doc, inst.pair)
    taken: list[SynthSentence] = []
    seen_texts: set[str] = set()

    def consider(synth: SynthSentence, donor_text: str) -> bool:
        if synth.text == donor_text or synth.text in forbidden or synth.text in seen_texts:
            return False
        taken.append(synth)
        seen_texts.add(synth.text)
        return len(taken) == k

    if k > 0:
        prebuilt = list(ready)
        rng.shuffle(prebuilt)
        done = False
        for synth in prebuilt:
            if consider(synth, ""):
                done = True
                break
        if not done:
            for donor, pair in iter_donor_candidates(
                doc,
                pool,
                inst.pair,
                answers,
                rng,
                swap_fallback=swap_fallback,
                allow_cross_document=allow_cross_document,
                host_donors=host_donors,
            ):
                if consider(relation_replace(donor, pair, target), donor.text):
                    break
    return NegativeSet(orientation="option", items=tuple(taken), requested=k)


def make_negative_contexts(
    inst: PositiveInstance,
    doc: Document,
    pool: Sequence[DonorSentence],
    k: int,
    rng: random.Random,
    *,
    swap_fallback: bool = True,
    allow_cross_document: bool = True,
    host_donors: Sequence[DonorSentence] | None = None,
) -> NegativeSet:
    """Up to k context variants, each replacing one context sentence.

    The pair rewritten into the chosen sentence is drawn from the
    meta-path entities mentioned there; variants cycle over the context
    sentences so no single sentence absorbs every edit.
    """
    answers = collect_answer_candidates(doc, inst.pair)
    path_entities = inst.path_entities

    # Per context sentence: a lazily advanced stream of replacement tries.
    streams: list[tuple[int, Iterator[SynthSentence]]] = []
    order = list(inst.context)
    rng.shuffle(order)
    for s_i in order:
        in_sentence = sorted(doc.sentence_entity_sets[s_i] & path_entities)
        pairs = [(p, q) for p in in_sentence for q in in_sentence if p != q]
        rng.shuffle(pairs)
        if not pairs:
            continue

        def tries(s_i=s_i, pairs=pairs) -> Iterator[SynthSentence]:
            for p, q in pairs:
                target = _target_with_surfaces(doc, (p, q))
                for donor, dpair in iter_donor_candidates(
                    doc,
                    pool,
                    (p, q),
                    answers,
                    rng,
                    swap_fallback=swap_fallback,
                    allow_cross_document=allow_cross_document,
                    host_donors=host_donors,
                ):
                    yield relation_replace(donor, dpair, target)

        streams.append((s_i, tries()))

    taken: list[ContextVariant] = []
    seen: set[tuple[int, str]] = set()
    while len(taken) < k and streams:
        live: list[tuple[int, Iterator[SynthSentence]]] = []
        for s_i, stream in streams:
            if len(taken) >= k:
                live.append((s_i, stream))
                continue
            original = doc.sentences[s_i].text
            for synth in stream:
                key = (s_i, synth.text)
                if synth.text == original or key in seen:
                    continue
                seen.add(key)
                taken.append(ContextVariant(replaced_sentence=s_i, replacement=synth))
                live.append((s_i, stream))
                break
            # else: stream exhausted, dropped from the rotation
        streams = live
    return NegativeSet(orientation="context", items=tuple(taken), requested=k)
