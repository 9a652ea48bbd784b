"""Parsers and serializers for tagged relation outputs.

Three structured answer formats are supported:

* scene graph captions -- free text carrying ``<ref>label</ref><box>[[x1,y1,x2,y2],...]</box>``
  entity mentions and ``<pred>p</pred><box>subject boxes</box><box>object boxes</box>``
  predicate mentions;
* triplet lists -- ``[[subject, [x1,y1,x2,y2], object, [x1,y1,x2,y2], predicate], ...]``;
* situation frames -- a verb-centric sentence with ``<role>entity</role><box>[x1,y1,x2,y2]</box>``
  bindings.

All parsers are total: arbitrary byte input yields a result plus diagnostics,
never an exception. That is a hard requirement for reward scoring, where
garbage model output must score 0 instead of crashing the run.
"""

from __future__ import annotations

import ast
import enum
import json
import re
from dataclasses import dataclass, field

from .geom import SENTINEL_BOX, BoundingBox


def normalize_label(text: str) -> str:
    """Canonical form for labels, predicates, roles, and verbs: lowercase,
    trimmed, internal whitespace collapsed."""
    return " ".join(text.split()).lower()


@dataclass(frozen=True)
class ParseDiagnostic:
    code: str
    message: str
    offset: int | None = None  # byte offset into the parsed text, if known

    def render(self) -> str:
        pos = "-" if self.offset is None else str(self.offset)
        return f"{pos}: {self.code}: {self.message}"


class TaskKind(enum.Enum):
    BINARY = "binary"
    NARY = "nary"


def detect_task(answer: str) -> TaskKind:
    """Multi-task gate: an answer is a binary-relation solution iff it
    contains at least one ``<ref>`` tag."""
    return TaskKind.BINARY if "<ref>" in answer else TaskKind.NARY


# ---------------------------------------------------------------------------
# Envelope
# ---------------------------------------------------------------------------

_WELL_FORMED_RE = re.compile(
    r"\A\s*<think>(.*?)</think>\s*<answer>(.*?)</answer>\s*\Z", re.DOTALL
)
_ANSWER_RE = re.compile(r"<answer>(.*?)</answer>", re.DOTALL)
_THINK_RE = re.compile(r"<think>(.*?)</think>", re.DOTALL)


@dataclass(frozen=True)
class Envelope:
    """A raw completion split into think and answer segments.

    ``well_formed`` is true iff the raw text is exactly one think block
    followed by one answer block with nothing but whitespace outside.
    """

    think: str
    answer: str
    well_formed: bool


def parse_envelope(raw: str) -> Envelope:
    m = _WELL_FORMED_RE.match(raw)
    if m:
        return Envelope(think=m.group(1), answer=m.group(2), well_formed=True)
    # Best effort: salvage inner blocks so malformed output can still be scored.
    think_m = _THINK_RE.search(raw)
    answer_m = _ANSWER_RE.search(raw)
    return Envelope(
        think=think_m.group(1) if think_m else "",
        answer=answer_m.group(1) if answer_m else raw,
        well_formed=False,
    )


# ---------------------------------------------------------------------------
# Shared box-list machinery
# ---------------------------------------------------------------------------


def _byte_offset(text: str, pos: int) -> int:
    return len(text[:pos].encode("utf-8"))


def _coerce_coord(value) -> int | None:
    if isinstance(value, bool):
        return None
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    return None


def _coerce_box(values) -> BoundingBox | None:
    if not isinstance(values, (list, tuple)) or len(values) != 4:
        return None
    coords = [_coerce_coord(v) for v in values]
    if any(c is None for c in coords):
        return None
    try:
        return BoundingBox(*coords)  # type: ignore[arg-type]
    except ValueError:
        return None


def _parse_box_payload(body: str, offset: int, diags: list[ParseDiagnostic]):
    """Parse the text inside one <box> tag into a list of boxes.

    Accepts both the caption form [[x1,y1,x2,y2],...] and the flat frame
    form [x1,y1,x2,y2]. Bad elements are dropped with a diagnostic.
    """
    text = body.strip()
    try:
        data = json.loads(text)
    except (json.JSONDecodeError, ValueError):
        diags.append(
            ParseDiagnostic("malformed-box", f"unparseable coordinates {text!r}", offset)
        )
        return []
    if isinstance(data, list) and data and all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in data
    ):
        data = [data]  # flat [x1,y1,x2,y2]
    if not isinstance(data, list):
        diags.append(
            ParseDiagnostic("malformed-box", f"expected a coordinate list, got {text!r}", offset)
        )
        return []
    boxes = []
    for element in data:
        box = _coerce_box(element)
        if box is None:
            diags.append(
                ParseDiagnostic("malformed-box", f"bad box element {element!r}", offset)
            )
        else:
            boxes.append(box)
    return boxes


def _render_box(box: BoundingBox) -> str:
    return f"[{box.x1},{box.y1},{box.x2},{box.y2}]"


def _render_box_list(boxes) -> str:
    return "[" + ",".join(_render_box(b) for b in boxes) + "]"


# ---------------------------------------------------------------------------
# Scene graph captions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EntityMention:
    label: str
    boxes: tuple[BoundingBox, ...]

    def __post_init__(self):
        if not self.label:
            raise ValueError("entity label must be non-empty")
        if not self.boxes:
            raise ValueError("entity mention needs at least one box")


@dataclass(frozen=True)
class PredicateMention:
    predicate: str
    subject_boxes: tuple[BoundingBox, ...]
    object_boxes: tuple[BoundingBox, ...]

    def __post_init__(self):
        if not self.predicate:
            raise ValueError("predicate must be non-empty")
        if not self.subject_boxes or not self.object_boxes:
            raise ValueError("predicate mention needs subject and object boxes")


@dataclass
class SceneGraphCaption:
    raw_text: str
    entities: list[EntityMention] = field(default_factory=list)
    predicates: list[PredicateMention] = field(default_factory=list)
    diagnostics: list[ParseDiagnostic] = field(default_factory=list)


_CAPTION_TOKEN_RE = re.compile(r"<(ref|pred|box)>(.*?)</\1>", re.DOTALL)
_STRAY_TAG_RE = re.compile(r"</?(?:ref|pred|box)>")


def _stray_tag_diagnostics(text: str, spans, diags: list[ParseDiagnostic]) -> None:
    for m in _STRAY_TAG_RE.finditer(text):
        if any(start <= m.start() < end for start, end in spans):
            continue
        diags.append(
            ParseDiagnostic(
                "dangling-tag",
                f"unmatched tag {m.group(0)!r}",
                _byte_offset(text, m.start()),
            )
        )


def parse_scene_graph_caption(answer: str) -> SceneGraphCaption:
    """Extract entity and predicate mentions from caption text in textual
    order. Unmatched or malformed tags never abort; they only add
    diagnostics."""
    caption = SceneGraphCaption(raw_text=answer)
    diags = caption.diagnostics
    tokens = list(_CAPTION_TOKEN_RE.finditer(answer))
    _stray_tag_diagnostics(answer, [t.span() for t in tokens], diags)

    i = 0
    while i < len(tokens):
        tok = tokens[i]
        kind = tok.group(1)
        offset = _byte_offset(answer, tok.start())
        if kind == "ref":
            if i + 1 < len(tokens) and tokens[i + 1].group(1) == "box":
                boxes = _parse_box_payload(
                    tokens[i + 1].group(2), _byte_offset(answer, tokens[i + 1].start()), diags
                )
                label = normalize_label(tok.group(2))
                if not label:
                    diags.append(ParseDiagnostic("empty-label", "empty <ref> label", offset))
                elif not boxes:
                    diags.append(
                        ParseDiagnostic("missing-box", f"<ref>{label}</ref> has no valid box", offset)
                    )
                else:
                    caption.entities.append(EntityMention(label, tuple(boxes)))
                i += 2
            else:
                diags.append(
                    ParseDiagnostic("dangling-ref", "<ref> without a following <box>", offset)
                )
                i += 1
        elif kind == "pred":
            following = []
            j = i + 1
            while j < len(tokens) and len(following) < 2 and tokens[j].group(1) == "box":
                following.append(tokens[j])
                j += 1
            predicate = normalize_label(tok.group(2))
            if len(following) < 2:
                diags.append(
                    ParseDiagnostic(
                        "dangling-pred",
                        f"<pred>{predicate}</pred> needs two <box> groups, found {len(following)}",
                        offset,
                    )
                )
            else:
                subj = _parse_box_payload(
                    following[0].group(2), _byte_offset(answer, following[0].start()), diags
                )
                obj = _parse_box_payload(
                    following[1].group(2), _byte_offset(answer, following[1].start()), diags
                )
                if not predicate:
                    diags.append(ParseDiagnostic("empty-label", "empty <pred> label", offset))
                elif not subj or not obj:
                    diags.append(
                        ParseDiagnostic(
                            "missing-box", f"<pred>{predicate}</pred> lost its boxes", offset
                        )
                    )
                else:
                    caption.predicates.append(PredicateMention(predicate, tuple(subj), tuple(obj)))
            i = j
        else:  # a <box> not claimed by any ref/pred
            diags.append(
                ParseDiagnostic("dangling-box", "<box> not attached to a <ref> or <pred>", offset)
            )
            i += 1
    return caption


def serialize_caption(caption: SceneGraphCaption) -> str:
    """Canonical caption text: entity mentions, then predicate mentions.

    Prose outside tags is not reproduced; parse(serialize(c)) recovers the
    entities and predicates exactly.
    """
    chunks = [
        f"<ref>{e.label}</ref><box>{_render_box_list(e.boxes)}</box>" for e in caption.entities
    ]
    chunks.extend(
        f"<pred>{p.predicate}</pred><box>{_render_box_list(p.subject_boxes)}</box>"
        f"<box>{_render_box_list(p.object_boxes)}</box>"
        for p in caption.predicates
    )
    return " ".join(chunks)


# ---------------------------------------------------------------------------
# Triplets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Triplet:
    subject_label: str
    subject_box: BoundingBox
    predicate: str
    object_label: str
    object_box: BoundingBox

    def __post_init__(self):
        if not (self.subject_label and self.predicate and self.object_label):
            raise ValueError("triplet labels must be non-empty")

    def as_list(self):
        return [
            self.subject_label,
            self.subject_box.as_list(),
            self.object_label,
            self.object_box.as_list(),
            self.predicate,
        ]


def extract_triplets(caption: SceneGraphCaption):
    """Expand predicate mentions into triplets.

    Every (subject box, object box) pair in the Cartesian product of a
    predicate's box lists yields one triplet. Labels are resolved by exact
    coordinate equality against the caption's entity mentions; an unresolved
    box keeps the triplet with label "unknown" plus a diagnostic.
    """
    by_box: dict[BoundingBox, str] = {}
    for entity in caption.entities:
        for box in entity.boxes:
            by_box.setdefault(box, entity.label)

    triplets: list[Triplet] = []
    diags: list[ParseDiagnostic] = []

    def resolve(box: BoundingBox, side: str, predicate: str) -> str:
        label = by_box.get(box)
        if label is None:
            diags.append(
                ParseDiagnostic(
                    "unresolved-box",
                    f"{side} box {box.as_list()} of <pred>{predicate}</pred> matches no <ref>",
                )
            )
            return "unknown"
        return label

    for pred in caption.predicates:
        for sbox in pred.subject_boxes:
            for obox in pred.object_boxes:
                triplets.append(
                    Triplet(
                        subject_label=resolve(sbox, "subject", pred.predicate),
                        subject_box=sbox,
                        predicate=pred.predicate,
                        object_label=resolve(obox, "object", pred.predicate),
                        object_box=obox,
                    )
                )
    return triplets, diags


def parse_scene_graph_list(answer: str):
    """Parse the bracketed-list scene graph format into triplets.

    Returns (triplets, diagnostics). Entries that are not a 5-element
    [subject, subject box, object, object box, predicate] row are dropped
    with a diagnostic; the row order is preserved.
    """
    diags: list[ParseDiagnostic] = []
    text = answer.strip()
    start = text.find("[")
    end = text.rfind("]")
    if start < 0 or end <= start:
        diags.append(ParseDiagnostic("no-list", "no bracketed list found", 0))
        return [], diags
    payload = text[start : end + 1]
    data = None
    try:
        data = json.loads(payload)
    except (json.JSONDecodeError, ValueError):
        try:
            data = ast.literal_eval(payload)
        except (ValueError, SyntaxError):
            diags.append(
                ParseDiagnostic("no-list", "bracketed region is not a literal list", _byte_offset(answer, start))
            )
            return [], diags
    if not isinstance(data, (list, tuple)):
        diags.append(ParseDiagnostic("no-list", "top-level value is not a list", _byte_offset(answer, start)))
        return [], diags

    triplets: list[Triplet] = []
    for idx, entry in enumerate(data):
        if not isinstance(entry, (list, tuple)) or len(entry) != 5:
            diags.append(
                ParseDiagnostic("bad-entry", f"entry {idx} is not a 5-element triplet row")
            )
            continue
        subj, sbox_raw, obj, obox_raw, predicate = entry
        sbox = _coerce_box(sbox_raw)
        obox = _coerce_box(obox_raw)
        if not isinstance(subj, str) or not isinstance(obj, str) or not isinstance(predicate, str):
            diags.append(ParseDiagnostic("bad-entry", f"entry {idx} labels must be strings"))
            continue
        subj_n, obj_n, pred_n = normalize_label(subj), normalize_label(obj), normalize_label(predicate)
        if sbox is None or obox is None or not (subj_n and obj_n and pred_n):
            diags.append(ParseDiagnostic("bad-entry", f"entry {idx} has malformed boxes or empty labels"))
            continue
        triplets.append(Triplet(subj_n, sbox, pred_n, obj_n, obox))
    return triplets, diags


def serialize_list(triplets) -> str:
    return json.dumps([t.as_list() for t in triplets])


# ---------------------------------------------------------------------------
# Situation frames
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RoleBinding:
    role: str
    entity_label: str
    box: BoundingBox  # may be the sentinel for ungrounded roles

    def __post_init__(self):
        if not self.role or not self.entity_label:
            raise ValueError("role and entity label must be non-empty")


@dataclass
class SituationFrame:
    verb: str  # empty only for lenient parses that found no verb
    raw_text: str = ""
    roles: list[RoleBinding] = field(default_factory=list)
    diagnostics: list[ParseDiagnostic] = field(default_factory=list)

    def __post_init__(self):
        names = [r.role for r in self.roles]
        if len(names) != len(set(names)):
            raise ValueError("role names must be unique within a frame")


class VerbLexicon:
    """Maps surface verb tokens to verb classes.

    The shipped default combines an explicit inflection table with a
    productive rule: any token ending in "-ing" (outside a small stoplist)
    is its own class. GSR verb classes are gerunds, so canonical frames
    round-trip without per-corpus configuration.
    """

    _NON_VERB_ING = frozenset(
        {"during", "thing", "things", "something", "anything", "nothing", "everything"}
    )

    def __init__(self, table: dict[str, str] | None = None, gerund_rule: bool = True):
        self.table = {normalize_label(k): normalize_label(v) for k, v in (table or {}).items()}
        self.gerund_rule = gerund_rule

    def lookup(self, token: str) -> str | None:
        t = token.lower()
        if t in self.table:
            return self.table[t]
        if self.gerund_rule and len(t) >= 5 and t.endswith("ing") and t not in self._NON_VERB_ING:
            return t
        return None


_DEFAULT_INFLECTIONS = {
    "drink": "drinking", "drinks": "drinking",
    "eat": "eating", "eats": "eating",
    "ride": "riding", "rides": "riding",
    "throw": "throwing", "throws": "throwing",
    "read": "reading", "reads": "reading",
    "wash": "washing", "washes": "washing",
    "paint": "painting", "paints": "painting",
    "carry": "carrying", "carries": "carrying",
}

DEFAULT_VERB_LEXICON = VerbLexicon(_DEFAULT_INFLECTIONS)

_RESERVED_TAGS = frozenset({"think", "answer", "ref", "pred", "box"})
_FRAME_TOKEN_RE = re.compile(r"<([a-zA-Z][a-zA-Z0-9_-]*)>(.*?)</\1>", re.DOTALL)
_WORD_RE = re.compile(r"[A-Za-z]+")


def parse_situation_frame(answer: str, lexicon: VerbLexicon | None = None) -> SituationFrame:
    """Parse a verb-centric sentence with role/box bindings.

    The verb is the first token outside any tag that the lexicon recognizes;
    if none is found the frame is returned with an empty verb and a
    MissingVerb diagnostic. A role tag without a following box is bound to
    the sentinel box. Duplicate role names keep the first occurrence.
    """
    lexicon = lexicon or DEFAULT_VERB_LEXICON
    frame = SituationFrame(verb="", raw_text=answer)
    diags = frame.diagnostics

    tokens = [t for t in _FRAME_TOKEN_RE.finditer(answer)]
    spans = [t.span() for t in tokens]

    # Verb search over text outside all tags.
    verb = ""
    cursor = 0
    outside_chunks = []
    for start, end in spans:
        outside_chunks.append((cursor, answer[cursor:start]))
        cursor = end
    outside_chunks.append((cursor, answer[cursor:]))
    for base, chunk in outside_chunks:
        for wm in _WORD_RE.finditer(chunk):
            hit = lexicon.lookup(wm.group(0))
            if hit:
                verb = hit
                break
        if verb:
            break
    if not verb:
        diags.append(ParseDiagnostic("missing-verb", "no lexicon verb found", None))
    frame.verb = verb

    seen_roles = set()
    i = 0
    while i < len(tokens):
        tok = tokens[i]
        tag = tok.group(1).lower()
        if tag in _RESERVED_TAGS:
            if tag == "box":
                diags.append(
                    ParseDiagnostic(
                        "dangling-box",
                        "<box> not attached to a role",
                        _byte_offset(answer, tok.start()),
                    )
                )
            i += 1
            continue
        role = normalize_label(tag)
        label = normalize_label(tok.group(2))
        offset = _byte_offset(answer, tok.start())
        box = SENTINEL_BOX
        consumed = 1
        if i + 1 < len(tokens) and tokens[i + 1].group(1).lower() == "box":
            box_tok = tokens[i + 1]
            boxes = _parse_box_payload(
                box_tok.group(2), _byte_offset(answer, box_tok.start()), diags
            )
            if len(boxes) > 1:
                diags.append(
                    ParseDiagnostic(
                        "extra-boxes",
                        f"role <{role}> has {len(boxes)} boxes; keeping the first",
                        _byte_offset(answer, box_tok.start()),
                    )
                )
            if boxes:
                box = boxes[0]
            consumed = 2
        if not label:
            diags.append(ParseDiagnostic("empty-label", f"role <{role}> has an empty entity", offset))
        elif role in seen_roles:
            diags.append(
                ParseDiagnostic("duplicate-role", f"role <{role}> repeated; keeping the first", offset)
            )
        else:
            seen_roles.add(role)
            frame.roles.append(RoleBinding(role, label, box))
        i += consumed
    return frame


def serialize_frame(frame: SituationFrame) -> str:
    """Canonical frame sentence. Ungrounded roles carry an explicit sentinel
    box so parse(serialize(f)) reproduces the bindings exactly."""
    verb_phrase = frame.verb if frame.verb else "an activity"
    parts = [f"The image depicts {verb_phrase}."]
    parts.extend(
        f"<{r.role}>{r.entity_label}</{r.role}><box>{_render_box(r.box)}</box>"
        for r in frame.roles
    )
    return " ".join(parts)
