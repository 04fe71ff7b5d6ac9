"""Seeded generators for long documents with known ground truth.

Fact documents bury key/value sentences ("The code of alpha is 7Q2X9.") in
word-salad filler; event documents narrate timestamped events out of
chronological order; template QA extraction turns sampled spans into
question/answer training pairs. Documents are one sentence per line, so a
newline byte doubles as the end-of-answer marker downstream.

Everything is a pure function of its parameters and seed, so corpora can
be regenerated byte-identically from a manifest.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import encode, decode_text

# filler vocabulary: common short words, lowercase, ASCII only
_WORDS = (
    "the quick brown river stone garden window harvest meadow lantern copper "
    "silver marble willow thunder breeze orchard saddle barrel candle anchor "
    "ribbon timber hollow ember falcon harbor juniper kettle ladder magnet "
    "needle oyster parlor quarry raven sparrow tunnel velvet walnut yarrow "
    "amber basil cedar dahlia elder fennel ginger hazel iris jasmine clover "
    "linden maple nettle olive poppy rowan sage tansy violet wheat acorn "
    "beacon cliff dune estuary fjord glacier heath inlet knoll lagoon mesa "
    "notch outcrop plateau ridge summit terrace upland valley wharf zephyr "
    "bright calm distant eager faint gentle hidden idle keen lively mellow "
    "narrow open pale quiet rough steep tall uneven vivid wide young ancient "
    "walks turns rests drifts settles gathers leans spreads rises folds"
).split()

# readable unique keys for facts; extended with a numeric suffix past 26
_KEY_NAMES = (
    "alpha bravo charlie delta echo foxtrot golf hotel india juliet kilo "
    "lima mike november oscar papa quebec romeo sierra tango uniform victor "
    "whiskey xray yankee zulu"
).split()

# event labels (distinct from filler so string search is unambiguous)
_EVENT_LABELS = (
    "eclipse regatta coronation armistice eruption landslide festival "
    "blockade census migration drought aurora comet monsoon equinox"
).split()

# value alphabet avoids 0/O, 1/I/L confusables; 31^5 >> 1e4 guesses
VALUE_ALPHABET = "ABCDEFGHJKMNPQRSTUVWXYZ23456789"
VALUE_LENGTH = 5


def fact_sentence(key: str, value: str) -> str:
    return f"The code of {key} is {value}."


def fact_question(key: str) -> str:
    return f"What is the code of {key}?"


def completion_stem(key: str) -> str:
    """The fact sentence up to (not including) the value."""
    return f"The code of {key} is"


def wrap_question(text: str) -> str:
    """Serialization used for QA conditioning: leading newline, Q/A markers."""
    return f"\nQ: {text}\nA:"


def wrap_answer(text: str) -> str:
    return f" {text}\n"


@dataclass(frozen=True)
class Fact:
    key: str
    value: str
    char_pos: int  # where the fact sentence starts in the document text

    @property
    def sentence(self) -> str:
        return fact_sentence(self.key, self.value)


@dataclass(frozen=True)
class QAPair:
    """Token-level QA pair; `question` is the full conditioning sequence."""
    question: tuple[int, ...]
    answer: tuple[int, ...]
    source_span: tuple[int, int]  # [start, end) into the source document

    @property
    def question_text(self) -> str:
        return decode_text(self.question)

    @property
    def answer_text(self) -> str:
        return decode_text(self.answer)


@dataclass
class QASet:
    pairs: list[QAPair] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def __getitem__(self, i) -> QAPair:
        return self.pairs[i]


@dataclass
class FactDoc:
    text: str
    facts: list[Fact]
    seed: int
    target_len: int

    def tokens(self) -> list[int]:
        return encode(self.text)

    def middle_third(self) -> tuple[int, int]:
        n = len(self.text)
        return n // 3, 2 * n // 3

    def facts_in_middle(self) -> list[Fact]:
        lo, hi = self.middle_third()
        return [f for f in self.facts
                if f.char_pos >= lo and f.char_pos + len(f.sentence) <= hi]


@dataclass
class EventDoc:
    text: str
    events: list[tuple[str, int]]  # (label, char_pos) in narrative order
    true_order: list[int]          # narrative indices in chronological order
    seed: int
    target_len: int

    def tokens(self) -> list[int]:
        return encode(self.text)

    def chronological_labels(self) -> list[str]:
        return [self.events[j][0] for j in self.true_order]


# --- filler -----------------------------------------------------------------


def _filler_sentence(rng: np.random.Generator) -> str:
    k = int(rng.integers(4, 9))
    words = [str(w) for w in rng.choice(_WORDS, size=k)]
    s = " ".join(words)
    return s[0].upper() + s[1:] + "."


def _fact_keys(n: int) -> list[str]:
    keys = []
    for i in range(n):
        base = _KEY_NAMES[i % len(_KEY_NAMES)]
        keys.append(base if i < len(_KEY_NAMES) else f"{base}{i // len(_KEY_NAMES) + 1}")
    return keys


def _unique_values(rng: np.random.Generator, n: int) -> list[str]:
    seen: set[str] = set()
    out = []
    while len(out) < n:
        v = "".join(str(c) for c in rng.choice(list(VALUE_ALPHABET), size=VALUE_LENGTH))
        if v not in seen:
            seen.add(v)
            out.append(v)
    return out


def _assemble(rng: np.random.Generator, target_len: int,
              inserts: list[tuple[int, str]]) -> tuple[str, list[int]]:
    """Grow filler lines, splicing each insert in when its target position
    is reached. Returns the exact-length text and actual insert positions."""
    parts: list[str] = []
    cur = 0
    placed: list[tuple[int, int]] = []  # (insert index, actual position)
    queue = sorted(range(len(inserts)), key=lambda i: inserts[i][0])
    qi = 0
    while cur < target_len or qi < len(queue):
        if qi < len(queue) and cur >= inserts[queue[qi]][0]:
            sentence = inserts[queue[qi]][1]
            placed.append((queue[qi], cur))
            parts.append(sentence + "\n")
            cur += len(sentence) + 1
            qi += 1
            continue
        s = _filler_sentence(rng)
        parts.append(s + "\n")
        cur += len(s) + 1
    text = "".join(parts)[:target_len]
    ordered = [pos for _, pos in sorted(placed)]
    return text, ordered


_MAX_FILLER_LEN = 9 * 8 + 8  # 8 words of <=9 chars, separators, period, newline


def gen_fact_doc(n_facts: int, target_len: int, seed: int,
                 placement: str = "spread") -> FactDoc:
    """A filler document of exactly target_len chars with fact sentences
    planted at seeded positions.

    placement="spread" cycles facts through the first/middle/last thirds
    (so at least floor(n/3) land in the middle); placement="middle" puts
    every fact inside the middle third.
    """
    if placement not in ("spread", "middle"):
        raise ValueError(f"unknown placement {placement!r}")
    if n_facts < 0:
        raise ValueError("n_facts must be non-negative")
    rng = np.random.default_rng(seed)
    keys = _fact_keys(n_facts)
    values = _unique_values(rng, n_facts)
    sentences = [fact_sentence(k, v) for k, v in zip(keys, values)]
    max_sent = max((len(s) for s in sentences), default=0) + 1

    tail_margin = _MAX_FILLER_LEN + max_sent  # keep facts clear of the trim
    if n_facts:
        t1, t2 = target_len // 3, 2 * target_len // 3
        if placement == "middle":
            lo, hi = t1, t2 - max_sent - _MAX_FILLER_LEN
        else:
            lo, hi = 0, target_len - tail_margin
        need = n_facts * (max_sent + 2)
        if hi - lo < need:
            raise ValueError(f"target_len {target_len} too small for {n_facts} facts "
                             f"with placement {placement!r}")

    inserts: list[tuple[int, str]] = []
    if n_facts:
        if placement == "middle":
            slots = np.linspace(lo, hi, n_facts + 1)
            targets = [int(rng.integers(int(slots[i]), max(int(slots[i]) + 1, int(slots[i + 1]) - max_sent)))
                       for i in range(n_facts)]
        else:
            thirds = [(0, t1), (t1, t2), (t2, target_len - tail_margin)]
            region_of = [i % 3 for i in range(n_facts)]
            # visit regions in order so targets stay sorted
            targets_by_fact: dict[int, int] = {}
            for region in range(3):
                members = [i for i in range(n_facts) if region_of[i] == region]
                if not members:
                    continue
                rlo, rhi = thirds[region]
                rhi = max(rlo + 1, rhi - max_sent - _MAX_FILLER_LEN)
                slots = np.linspace(rlo, rhi, len(members) + 1)
                for j, i in enumerate(members):
                    a, b = int(slots[j]), max(int(slots[j]) + 1, int(slots[j + 1]) - max_sent)
                    targets_by_fact[i] = int(rng.integers(a, b))
            targets = [targets_by_fact[i] for i in range(n_facts)]
        inserts = list(zip(targets, sentences))

    text, positions = _assemble(rng, target_len, inserts)
    facts = [Fact(k, v, p) for k, v, p in zip(keys, values, positions)]
    for f in facts:
        if text[f.char_pos:f.char_pos + len(f.sentence)] != f.sentence:
            raise AssertionError("fact sentence corrupted during assembly")
    return FactDoc(text=text, facts=facts, seed=seed, target_len=target_len)


def gen_event_doc(n_events: int, target_len: int, seed: int) -> EventDoc:
    """A filler document narrating n_events timestamped events out of order.

    Chronological rank follows the hour in each sentence; the narrative
    order is a seeded shuffle with ordinal cues (First/Later/Finally).
    true_order[r] is the narrative index of the r-th chronological event.
    """
    if not 1 <= n_events <= len(_EVENT_LABELS):
        raise ValueError(f"n_events must be in [1, {len(_EVENT_LABELS)}]")
    rng = np.random.default_rng(seed)
    labels = [str(w) for w in rng.choice(_EVENT_LABELS, size=n_events, replace=False)]
    hours = sorted(int(h) for h in rng.choice(24, size=n_events, replace=False))
    perm = [int(i) for i in rng.permutation(n_events)]  # narrative j -> chrono rank perm[j]

    sentences = []
    for j in range(n_events):
        rank = perm[j]
        cue = "First" if j == 0 else ("Finally" if j == n_events - 1 else "Later")
        sentences.append(f"{cue}, at hour {hours[rank]:02d}, the {labels[rank]} took place.")
    max_sent = max(len(s) for s in sentences) + 1
    tail_margin = _MAX_FILLER_LEN + max_sent
    usable = target_len - tail_margin
    if usable < n_events * (max_sent + 2):
        raise ValueError(f"target_len {target_len} too small for {n_events} events")
    slots = np.linspace(0, usable, n_events + 1)
    targets = [int(rng.integers(int(slots[j]), max(int(slots[j]) + 1, int(slots[j + 1]) - max_sent)))
               for j in range(n_events)]

    text, positions = _assemble(rng, target_len, list(zip(targets, sentences)))
    events = [(labels[perm[j]], positions[j]) for j in range(n_events)]
    # chronological rank r was narrated at index perm.index(r)
    true_order = [perm.index(r) for r in range(n_events)]
    return EventDoc(text=text, events=events, true_order=true_order,
                    seed=seed, target_len=target_len)


# --- QA extraction ------------------------------------------------------------


def _fact_pair(fact: Fact, span: tuple[int, int]) -> QAPair:
    return QAPair(
        question=tuple(encode(wrap_question(fact_question(fact.key)))),
        answer=tuple(encode(wrap_answer(fact.value))),
        source_span=span,
    )


def _cloze_pair(span_text: str, span: tuple[int, int]) -> QAPair | None:
    """Last word of the span's final full words as the answer."""
    words = [w.strip(".,") for w in span_text.split() if w.strip(".,")]
    if len(words) < 5:
        return None
    prompt_words, answer_word = words[-5:-1], words[-1]
    return QAPair(
        question=tuple(encode(wrap_question("Complete: " + " ".join(prompt_words)))),
        answer=tuple(encode(wrap_answer(answer_word))),
        source_span=span,
    )


def synth_qa_from_segments(doc: FactDoc | EventDoc, n_segments: int,
                           seg_len: int, seed: int) -> QASet:
    """Template QA pairs from seeded random spans of the document.

    A span containing a complete fact sentence yields the fact's template
    question; otherwise a cloze pair (complete the span's last words). An
    empty result is allowed and flagged in warnings.
    """
    if n_segments < 0:
        raise ValueError("n_segments must be non-negative")
    if seg_len < 8:
        raise ValueError("seg_len too small to extract any QA")
    rng = np.random.default_rng(seed)
    text = doc.text
    n = len(text)
    qa = QASet()
    if n_segments == 0:
        qa.warnings.append("no segments sampled")
        return qa
    facts = doc.facts if isinstance(doc, FactDoc) else []
    hi = max(1, n - seg_len + 1)
    for start in (int(s) for s in rng.integers(0, hi, size=n_segments)):
        span = (start, min(n, start + seg_len))
        inside = [f for f in facts
                  if f.char_pos >= span[0] and f.char_pos + len(f.sentence) <= span[1]]
        if inside:
            for f in inside:
                qa.pairs.append(_fact_pair(f, span))
        else:
            pair = _cloze_pair(text[span[0]:span[1]], span)
            if pair is not None:
                qa.pairs.append(pair)
    if not qa.pairs:
        qa.warnings.append("no QA pairs extracted")
    return qa


def make_fact_eval_qas(doc: FactDoc, n_questions: int, seed: int,
                       style: str = "completion", region: str = "middle") -> QASet:
    """Held-out questions targeting the document's planted facts.

    style="completion" asks the model to continue the fact sentence stem
    ("\\nThe code of alpha is" -> " 7Q2X9.\\n"); style="qa" uses the Q/A
    template. region restricts to facts wholly inside the middle third.
    """
    if style not in ("completion", "qa"):
        raise ValueError(f"unknown eval question style {style!r}")
    if region not in ("middle", "any"):
        raise ValueError(f"unknown region {region!r}")
    pool = doc.facts_in_middle() if region == "middle" else list(doc.facts)
    qa = QASet()
    if len(pool) < n_questions:
        qa.warnings.append(f"only {len(pool)} facts available in region {region!r}")
    picks = pool[:n_questions] if len(pool) <= n_questions else [
        pool[i] for i in sorted(np.random.default_rng(seed).choice(
            len(pool), size=n_questions, replace=False))]
    for f in picks:
        span = (f.char_pos, f.char_pos + len(f.sentence))
        if style == "completion":
            qa.pairs.append(QAPair(
                question=tuple(encode("\n" + completion_stem(f.key))),
                answer=tuple(encode(f" {f.value}.\n")),
                source_span=span,
            ))
        else:
            qa.pairs.append(_fact_pair(f, span))
    return qa


def gen_sft_corpus(n_docs: int, qa_per_doc: int, target_len: int, seed: int,
                   qa_seg_len: int = 48) -> list[tuple[FactDoc, QASet]]:
    """Training corpus on its own seed namespace ("sft/..."): held-out test
    documents derive from "test/..." labels and can never collide."""
    from .seeding import derive_seed
    if n_docs < 1:
        raise ValueError("n_docs must be at least 1")
    corpus = []
    for i in range(n_docs):
        doc = gen_fact_doc(n_facts=max(2, qa_per_doc // 2), target_len=target_len,
                           seed=derive_seed(seed, f"sft/doc/{i}"))
        qas = synth_qa_from_segments(doc, n_segments=qa_per_doc, seg_len=qa_seg_len,
                                     seed=derive_seed(seed, f"sft/qa/{i}"))
        qas.pairs = qas.pairs[:qa_per_doc]
        corpus.append((doc, qas))
    return corpus


# --- serialization --------------------------------------------------------------


def doc_to_record(doc: FactDoc | EventDoc, qas: QASet | None = None) -> dict:
    """JSON-serializable record (documents are ASCII, so text round-trips)."""
    if isinstance(doc, FactDoc):
        rec: dict = {
            "type": "fact_doc",
            "seed": doc.seed,
            "target_len": doc.target_len,
            "text": doc.text,
            "facts": [[f.key, f.value, f.char_pos] for f in doc.facts],
        }
    else:
        rec = {
            "type": "event_doc",
            "seed": doc.seed,
            "target_len": doc.target_len,
            "text": doc.text,
            "events": [[label, pos] for label, pos in doc.events],
            "true_order": list(doc.true_order),
        }
    rec["qa"] = [] if qas is None else [
        {"question": p.question_text, "answer": p.answer_text,
         "span": list(p.source_span)} for p in qas
    ]
    return rec


def record_to_doc(rec: dict) -> tuple[FactDoc | EventDoc, QASet]:
    kind = rec.get("type")
    if kind == "fact_doc":
        doc: FactDoc | EventDoc = FactDoc(
            text=rec["text"],
            facts=[Fact(k, v, int(p)) for k, v, p in rec["facts"]],
            seed=int(rec["seed"]),
            target_len=int(rec["target_len"]),
        )
    elif kind == "event_doc":
        doc = EventDoc(
            text=rec["text"],
            events=[(label, int(pos)) for label, pos in rec["events"]],
            true_order=[int(i) for i in rec["true_order"]],
            seed=int(rec["seed"]),
            target_len=int(rec["target_len"]),
        )
    else:
        raise ValueError(f"unknown document record type {kind!r}")
    qas = QASet(pairs=[
        QAPair(question=tuple(encode(q["question"])),
               answer=tuple(encode(q["answer"])),
               source_span=(int(q["span"][0]), int(q["span"][1])))
        for q in rec.get("qa", [])
    ])
    return doc, qas
