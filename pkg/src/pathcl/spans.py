"""Span-preserving mention rewriting.

Shared by negative synthesis and counterfactual augmentation: both edit a
sentence only inside annotated mention spans, keeping every other byte
intact, and need the resulting spans for later rewrites of the same text.
"""

from __future__ import annotations

MentionSpan = tuple[str, int, int]  # (entity id, start, end), half-open


class OverlappingSpans(ValueError):
    """Mention spans overlap; span-based rewriting would be ambiguous."""


def check_disjoint(text: str, mentions: list[MentionSpan]) -> list[MentionSpan]:
    """Return mentions sorted by start, raising if any pair overlaps."""
    ordered = sorted(mentions, key=lambda m: (m[1], m[2]))
    prev_end = 0
    for eid, start, end in ordered:
        if start < prev_end:
            raise OverlappingSpans(f"mention of {eid!r} at [{start}, {end}) overlaps previous span")
        if not 0 <= start < end <= len(text):
            raise OverlappingSpans(f"mention of {eid!r} span [{start}, {end}) outside text")
        prev_end = end
    return ordered


def rewrite_mentions(
    text: str,
    mentions: list[MentionSpan],
    mapping: dict[str, tuple[str, str]],
) -> tuple[str, list[MentionSpan]]:
    """Rewrite every mention of a mapped entity to its replacement surface.

    `mapping` sends an entity id to (new entity id, new surface). Unmapped
    mentions are kept verbatim; all spans are recomputed for the new text.
    Returns (new text, new mention list sorted by start).
    """
    ordered = check_disjoint(text, mentions)
    pieces: list[str] = []
    new_mentions: list[MentionSpan] = []
    cursor = 0
    offset = 0
    for eid, start, end in ordered:
        pieces.append(text[cursor:start])
        if eid in mapping:
            new_id, surface = mapping[eid]
        else:
            new_id, surface = eid, text[start:end]
        new_start = start + offset
        pieces.append(surface)
        new_mentions.append((new_id, new_start, new_start + len(surface)))
        offset += len(surface) - (end - start)
        cursor = end
    pieces.append(text[cursor:])
    return "".join(pieces), new_mentions


def diff_outside_spans(original: str, edited: str, original_spans: list[MentionSpan]) -> bool:
    """True iff `edited` can differ from `original` only inside the given spans.

    Used as the machine check that a synthetic sentence is byte-identical
    to its donor outside the recorded replacement spans.
    """
    ordered = sorted(original_spans, key=lambda m: m[1])
    fixed: list[str] = []
    cursor = 0
    for _, start, end in ordered:
        fixed.append(original[cursor:start])
        cursor = end
    fixed.append(original[cursor:])
    if len(fixed) == 1:  # no spans: nothing may change
        return edited == original
    # The fixed fragments must appear in `edited`, in order, non-overlapping,
    # anchored at the ends.
    pos = 0
    for i, frag in enumerate(fixed):
        if i == 0:
            if not edited.startswith(frag):
                return False
            pos = len(frag)
        elif i == len(fixed) - 1:
            if not edited.endswith(frag) or len(edited) - len(frag) < pos:
                return False
        else:
            found = edited.find(frag, pos) if frag else pos
            if found < 0:
                return False
            pos = found + len(frag)
    return True
