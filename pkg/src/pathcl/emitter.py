"""Final contrastive instances: assembly, serialization, statistics.

An option-oriented instance queries with the joined context and ranks the
true answer against synthetic options; a context-oriented instance
queries with the answer and ranks the true context against corrupted
ones. The gold index is placed by a seeded per-instance permutation so
position carries no signal. Output is line-delimited JSON:

    {"orientation": "option"|"context", "query": str, "candidates": [str],
     "gold": int, "meta": {"doc": str, "pair": [str, str], "path": [str],
     "counterfactual": bool, "replacements": {str: str}, "strategy": str,
     "context_texts": [str]}}

meta.context_texts preserves the context's sentence boundaries, which the
joined query/candidate strings erase.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator

from .bundle import InstanceBundle
from .negatives import ContextVariant, SynthSentence
from .seeding import derive_rng

JOIN = " "


class DatasetError(Exception):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class InstanceMeta:
    doc: str
    pair: tuple[str, str]
    path: tuple[str, ...]
    counterfactual: bool
    replacements: tuple[tuple[str, str], ...]
    strategy: str
    context_texts: tuple[str, ...]


@dataclass(frozen=True)
class ContrastiveInstance:
    orientation: str  # "option" | "context"
    query: str
    candidates: tuple[str, ...]
    gold: int
    meta: InstanceMeta

    def __post_init__(self):
        if self.orientation not in ("option", "context"):
            raise ValueError(f"unknown orientation {self.orientation!r}")
        if not 0 <= self.gold < len(self.candidates):
            raise ValueError(f"gold index {self.gold} outside {len(self.candidates)} candidates")


def _donor_tag(s: SynthSentence) -> str:
    tag = f"{s.donor_doc}:{s.donor_sentence}"
    if s.swap:
        tag += "+swap"
    if all(a == b for a, b in s.replaced):
        tag += "+ready"
    return tag


def _place_gold(gold_text: str, negatives: list[str], rng) -> tuple[tuple[str, ...], int]:
    gold = rng.randrange(len(negatives) + 1)
    candidates = negatives[:gold] + [gold_text] + negatives[gold:]
    return tuple(candidates), gold


def bundle_to_instances(
    bundle: InstanceBundle, root_seed: int, *, shuffle_gold: bool = True
) -> list[ContrastiveInstance]:
    """Both orientations for one bundle, skipping under-filled ones.

    Only orientations with the full complement of negatives are emitted,
    keeping candidate counts uniform at K+1 across the dataset.
    """
    out: list[ContrastiveInstance] = []
    context_texts = tuple(t.text for t in bundle.context)
    context_joined = JOIN.join(context_texts)
    k = bundle.requested_negatives

    def meta(strategy: str) -> InstanceMeta:
        return InstanceMeta(
            doc=bundle.doc_id,
            pair=bundle.pair,
            path=bundle.path_entities,
            counterfactual=bundle.counterfactual,
            replacements=bundle.replacements,
            strategy=strategy,
            context_texts=context_texts,
        )

    if len(bundle.options) == k and k > 0:
        rng = derive_rng(root_seed, "gold", *bundle.key(), "option")
        negatives = [s.text for s in bundle.options]
        if shuffle_gold:
            candidates, gold = _place_gold(bundle.answer.text, negatives, rng)
        else:
            candidates, gold = tuple([bundle.answer.text] + negatives), 0
        strategy = "donors=" + ",".join(_donor_tag(s) for s in bundle.options)
        out.append(
            ContrastiveInstance(
                orientation="option",
                query=context_joined,
                candidates=candidates,
                gold=gold,
                meta=meta(strategy),
            )
        )

    if len(bundle.context_variants) == k and k > 0:
        rng = derive_rng(root_seed, "gold", *bundle.key(), "context")
        negatives = [_variant_text(bundle, v) for v in bundle.context_variants]
        if shuffle_gold:
            candidates, gold = _place_gold(context_joined, negatives, rng)
        else:
            candidates, gold = tuple([context_joined] + negatives), 0
        strategy = "donors=" + ",".join(
            f"{_donor_tag(v.replacement)}>{v.replaced_sentence}"
            for v in bundle.context_variants
        )
        out.append(
            ContrastiveInstance(
                orientation="context",
                query=bundle.answer.text,
                candidates=candidates,
                gold=gold,
                meta=meta(strategy),
            )
        )
    return out


def _variant_text(bundle: InstanceBundle, variant: ContextVariant) -> str:
    parts = []
    for k, at in zip(bundle.context_sentences, bundle.context):
        parts.append(variant.replacement.text if k == variant.replaced_sentence else at.text)
    return JOIN.join(parts)


def instance_to_record(inst: ContrastiveInstance) -> dict:
    return {
        "orientation": inst.orientation,
        "query": inst.query,
        "candidates": list(inst.candidates),
        "gold": inst.gold,
        "meta": {
            "doc": inst.meta.doc,
            "pair": list(inst.meta.pair),
            "path": list(inst.meta.path),
            "counterfactual": inst.meta.counterfactual,
            "replacements": {a: b for a, b in inst.meta.replacements},
            "strategy": inst.meta.strategy,
            "context_texts": list(inst.meta.context_texts),
        },
    }


def emit_instances(
    instances: Iterable[ContrastiveInstance],
    ratio: tuple[int, int],
    fp: IO[str],
) -> int:
    """Write instances interleaved at the original:counterfactual ratio.

    The pattern repeats `ratio[0]` originals then `ratio[1]` counterfactual
    instances until both queues drain, so a streaming reader sees a
    stationary mixture. A zero component drops that queue entirely.
    """
    orig_n, cf_n = ratio
    if orig_n < 0 or cf_n < 0:
        raise ValueError("ratio components must be >= 0")
    originals: deque[ContrastiveInstance] = deque()
    counterfactuals: deque[ContrastiveInstance] = deque()
    for inst in instances:
        (counterfactuals if inst.meta.counterfactual else originals).append(inst)
    if orig_n == 0:
        originals.clear()
    if cf_n == 0:
        counterfactuals.clear()
    count = 0
    while originals or counterfactuals:
        for _ in range(orig_n):
            if originals:
                fp.write(json.dumps(instance_to_record(originals.popleft()), ensure_ascii=False) + "\n")
                count += 1
        for _ in range(cf_n):
            if counterfactuals:
                fp.write(json.dumps(instance_to_record(counterfactuals.popleft()), ensure_ascii=False) + "\n")
                count += 1
    return count


def _require(obj: dict, key: str, kind: type, line: int):
    if key not in obj:
        raise DatasetError(line, f"missing field {key!r}")
    value = obj[key]
    if kind is int and isinstance(value, bool) or not isinstance(value, kind):
        raise DatasetError(line, f"field {key!r}: expected {kind.__name__}")
    return value


def instance_from_record(obj: dict, line: int = 0) -> ContrastiveInstance:
    orientation = _require(obj, "orientation", str, line)
    query = _require(obj, "query", str, line)
    candidates = _require(obj, "candidates", list, line)
    gold = _require(obj, "gold", int, line)
    meta = _require(obj, "meta", dict, line)
    if not all(isinstance(c, str) for c in candidates):
        raise DatasetError(line, "candidates must be strings")
    pair = _require(meta, "pair", list, line)
    if len(pair) != 2:
        raise DatasetError(line, "meta.pair must have 2 entries")
    try:
        return ContrastiveInstance(
            orientation=orientation,
            query=query,
            candidates=tuple(candidates),
            gold=gold,
            meta=InstanceMeta(
                doc=_require(meta, "doc", str, line),
                pair=(pair[0], pair[1]),
                path=tuple(_require(meta, "path", list, line)),
                counterfactual=_require(meta, "counterfactual", bool, line),
                replacements=tuple(sorted(_require(meta, "replacements", dict, line).items())),
                strategy=_require(meta, "strategy", str, line),
                context_texts=tuple(_require(meta, "context_texts", list, line)),
            ),
        )
    except ValueError as exc:
        raise DatasetError(line, str(exc)) from exc


def read_instances(lines: Iterable[str]) -> Iterator[ContrastiveInstance]:
    for line_no, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise DatasetError(line_no, f"invalid JSON: {exc.msg}") from exc
        yield instance_from_record(obj, line_no)


@dataclass
class DatasetStats:
    total: int = 0
    by_orientation: dict = field(default_factory=dict)
    counterfactual: int = 0
    mean_path_length: float = 0.0
    mean_context_size: float = 0.0
    mean_candidates: float = 0.0
    gold_histogram: dict = field(default_factory=dict)

    @property
    def counterfactual_share(self) -> float:
        return self.counterfactual / self.total if self.total else 0.0

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "by_orientation": dict(sorted(self.by_orientation.items())),
            "counterfactual": self.counterfactual,
            "counterfactual_share": self.counterfactual_share,
            "mean_path_length": self.mean_path_length,
            "mean_context_size": self.mean_context_size,
            "mean_candidates": self.mean_candidates,
            "gold_histogram": {str(k): v for k, v in sorted(self.gold_histogram.items())},
        }


def stats(lines: Iterable[str]) -> DatasetStats:
    out = DatasetStats()
    path_total = 0
    context_total = 0
    candidate_total = 0
    for inst in read_instances(lines):
        out.total += 1
        out.by_orientation[inst.orientation] = out.by_orientation.get(inst.orientation, 0) + 1
        out.counterfactual += inst.meta.counterfactual
        out.gold_histogram[inst.gold] = out.gold_histogram.get(inst.gold, 0) + 1
        path_total += len(inst.meta.path)
        context_total += len(inst.meta.context_texts)
        candidate_total += len(inst.candidates)
    if out.total:
        out.mean_path_length = path_total / out.total
        out.mean_context_size = context_total / out.total
        out.mean_candidates = candidate_total / out.total
    return out
