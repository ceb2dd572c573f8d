#!/usr/bin/env python3
"""Generates data/toy.props, the small PropBank-style corpus used by the tests.

The output is committed; rerunning this script reproduces it byte-for-byte.
"""
import random
import sys

rng = random.Random(20181019)

AGENTS = [["the", "company"], ["the", "bank"], ["John"], ["Mary"], ["the", "committee"],
          ["investors"], ["the", "government"], ["the", "board"], ["analysts"], ["the", "firm"]]
THEMES = [["the", "bonds"], ["a", "report"], ["the", "plan"], ["new", "shares"], ["the", "loan"],
          ["its", "stake"], ["the", "proposal"], ["a", "contract"], ["the", "assets"], ["profits"]]
RECIPIENTS = [["investors"], ["the", "bank"], ["Mary"], ["the", "public"], ["its", "clients"]]
TEMPORALS = [["yesterday"], ["last", "week"], ["in", "March"], ["recently"], ["on", "Monday"]]
LOCATIONS = [["in", "Tokyo"], ["in", "London"], ["at", "the", "exchange"], ["in", "Chicago"]]
MANNERS = [["quickly"], ["slowly"], ["sharply"], ["quietly"]]
MODALS = ["will", "could", "may", "would"]

# (surface, lemma, takes_recipient)
TRANSITIVE = [("sold", "sell", True), ("bought", "buy", False), ("approved", "approve", False),
              ("rejected", "reject", False), ("offered", "offer", True), ("released", "release", False),
              ("gave", "give", True), ("acquired", "acquire", False), ("sent", "send", True),
              ("reviewed", "review", False)]
BASE = {"sold": "sell", "bought": "buy", "approved": "approve", "rejected": "reject",
        "offered": "offer", "released": "release", "gave": "give", "acquired": "acquire",
        "sent": "send", "reviewed": "review"}
SAY = [("said", "say"), ("reported", "report"), ("announced", "announce")]


def pick(items):
    return list(rng.choice(items))


class Builder:
    def __init__(self):
        self.tokens = []
        self.preds = {}  # token index -> (lemma, spans)

    def add(self, words):
        start = len(self.tokens)
        self.tokens.extend(words)
        return start, len(self.tokens) - 1

    def pred(self, index, lemma):
        self.preds[index] = (lemma, [])
        return self.preds[index][1]


def simple_clause(b, frame, agent=None, allow_extras=True):
    """Appends [TMP] AGENT [MOD] [NEG] VERB THEME [to RECIP] [LOC] [MNR]; returns (verb idx, span list)."""
    spans = []
    if allow_extras and rng.random() < 0.2:
        s, e = b.add(pick(TEMPORALS))
        spans.append((s, e, "AM-TMP"))
        if rng.random() < 0.5:
            b.add([","])
    s, e = b.add(agent or pick(AGENTS))
    spans.append((s, e, "A0"))
    surface, lemma, recip = frame
    if allow_extras and rng.random() < 0.25:
        s, e = b.add([rng.choice(MODALS)])
        spans.append((s, e, "AM-MOD"))
        if rng.random() < 0.4:
            s, e = b.add(["not"])
            spans.append((s, e, "AM-NEG"))
        surface = BASE[surface]
    v, _ = b.add([surface])
    spans.append((v, v, "V"))
    s, e = b.add(pick(THEMES))
    spans.append((s, e, "A1"))
    if recip and rng.random() < 0.6:
        s, e = b.add(["to"] + pick(RECIPIENTS))
        spans.append((s, e, "A2"))
    if allow_extras and rng.random() < 0.3:
        s, e = b.add(pick(LOCATIONS))
        spans.append((s, e, "AM-LOC"))
    elif allow_extras and rng.random() < 0.25:
        s, e = b.add(pick(MANNERS))
        spans.append((s, e, "AM-MNR"))
    return v, lemma, spans


def sentence_simple():
    b = Builder()
    if rng.random() < 0.15:
        b.add(["However", ","])
        disc = True
    else:
        disc = False
    v, lemma, spans = simple_clause(b, rng.choice(TRANSITIVE))
    if disc:
        spans.append((0, 0, "AM-DIS"))
    b.add(["."])
    b.pred(v, lemma).extend(spans)
    return b


def sentence_report():
    b = Builder()
    sayer = pick(AGENTS)
    s0, e0 = b.add(sayer)
    say_surface, say_lemma = rng.choice(SAY)
    sv, _ = b.add([say_surface])
    that_start = len(b.tokens)
    b.add(["that"])
    v, lemma, spans = simple_clause(b, rng.choice(TRANSITIVE), allow_extras=rng.random() < 0.5)
    that_end = len(b.tokens) - 1
    b.add(["."])
    b.pred(sv, say_lemma).extend([(s0, e0, "A0"), (sv, sv, "V"), (that_start, that_end, "A1")])
    b.pred(v, lemma).extend(spans)
    return b


def sentence_coordinated():
    b = Builder()
    agent = pick(AGENTS)
    s0, e0 = b.add(agent)
    f1, f2 = rng.sample(TRANSITIVE, 2)
    v1, _ = b.add([f1[0]])
    t1s, t1e = b.add(pick(THEMES))
    b.add(["and"])
    v2, _ = b.add([f2[0]])
    t2s, t2e = b.add(pick(THEMES))
    spans2 = [(s0, e0, "A0"), (v2, v2, "V"), (t2s, t2e, "A1")]
    if rng.random() < 0.4:
        s, e = b.add(pick(TEMPORALS))
        spans2.append((s, e, "AM-TMP"))
    b.add(["."])
    b.pred(v1, f1[1]).extend([(s0, e0, "A0"), (v1, v1, "V"), (t1s, t1e, "A1")])
    b.pred(v2, f2[1]).extend(spans2)
    return b


def sentence_relative():
    b = Builder()
    head = pick(AGENTS)
    hs, he = b.add(head)
    rs, re_ = b.add(["that"])
    f1, f2 = rng.sample(TRANSITIVE, 2)
    v1, _ = b.add([f1[0]])
    t1s, t1e = b.add(pick(THEMES))
    v2, _ = b.add([f2[0]])
    t2s, t2e = b.add(pick(THEMES))
    spans2 = [(hs, t1e, "A0"), (v2, v2, "V"), (t2s, t2e, "A1")]
    if rng.random() < 0.5:
        s, e = b.add(pick(MANNERS))
        spans2.append((s, e, "AM-MNR"))
    b.add(["."])
    b.pred(v1, f1[1]).extend([(hs, he, "A0"), (rs, re_, "R-A0"), (v1, v1, "V"), (t1s, t1e, "A1")])
    b.pred(v2, f2[1]).extend(spans2)
    return b


def sentence_intransitive():
    b = Builder()
    subj = pick(THEMES)
    s0, e0 = b.add(subj)
    surface, lemma = rng.choice([("rose", "rise"), ("fell", "fall"), ("jumped", "jump"), ("slipped", "slip")])
    v, _ = b.add([surface])
    spans = [(s0, e0, "A1"), (v, v, "V")]
    amount = rng.choice([["5", "%"], ["sharply"], ["10", "cents"], ["2", "points"]])
    s, e = b.add(amount)
    spans.append((s, e, "AM-MNR" if amount == ["sharply"] else "A2"))
    if rng.random() < 0.5:
        s, e = b.add(pick(TEMPORALS))
        spans.append((s, e, "AM-TMP"))
    b.add(["."])
    b.pred(v, lemma).extend(spans)
    return b


def sentence_table():
    b = Builder()
    b.add("The trade figures turn out well , and all those recently unloaded bonds spurt in price .".split())
    b.pred(3, "turn").extend([(0, 2, "A1"), (3, 4, "V"), (5, 5, "A2")])
    b.pred(11, "unload").extend([(10, 10, "AM-TMP"), (11, 11, "V"), (12, 12, "A1")])
    b.pred(13, "spurt").extend([(8, 12, "A1"), (13, 13, "V"), (14, 15, "AM-ADV")])
    return b


def sentence_plain():
    b = Builder()
    b.add(rng.choice([["Shares", "were", "mixed", "."], ["No", "comment", "was", "available", "."],
                      ["The", "market", "was", "closed", "."]]))
    return b


def render(b):
    n = len(b.tokens)
    order = sorted(b.preds)
    cols = []
    for idx in order:
        lemma, spans = b.preds[idx]
        cells = ["*"] * n
        for s, e, role in sorted(spans):
            cells[s] = "(" + role + "*"
            cells[e] += ")"
        cols.append(cells)
    lines = []
    for t, tok in enumerate(b.tokens):
        lemma = b.preds[t][0] if t in b.preds else "-"
        lines.append(" ".join([tok, lemma] + [c[t] for c in cols]))
    return "\n".join(lines) + "\n\n"


def main():
    makers = [sentence_simple] * 5 + [sentence_report] * 3 + [sentence_coordinated] * 2 + \
             [sentence_relative] * 2 + [sentence_intransitive] * 2
    sentences = [sentence_table()]
    while len(sentences) < 58:
        sentences.append(rng.choice(makers)())
    sentences.insert(20, sentence_plain())
    sentences.insert(40, sentence_plain())
    out = sys.stdout if len(sys.argv) < 2 else open(sys.argv[1], "w")
    for b in sentences:
        out.write(render(b))


if __name__ == "__main__":
    main()
