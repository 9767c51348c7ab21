"""Mixed-script scoring: edit-distance alignment, the corpus mixed error
rate, error rates restricted to hotword spans, their count-weighted mean,
and phrase-level precision/recall.

Scoring units are per-token: L1 tokens count as single characters, L2
tokens as whole words; specials are stripped. Rates may exceed 1.0 in
insertion-heavy regions, following word-error-rate convention.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

from .data import HotwordList, Lang, Phrase, Token
from .errors import MetricError

MATCH = "MATCH"
SUB = "SUB"
INS = "INS"
DEL = "DEL"


@dataclass(frozen=True)
class Unit:
    surface: str
    lang: Lang


@dataclass(frozen=True)
class AlignOp:
    kind: str
    ref_index: int | None
    hyp_index: int | None


@dataclass
class Alignment:
    ops: list[AlignOp]
    cost: int


def tokenize_mixed(tokens: Sequence[Token]) -> list[Unit]:
    """Tokens -> scoring units; specials are dropped."""
    return [Unit(t.surface, t.lang) for t in tokens if t.lang is not Lang.SPECIAL]


def align(ref: Sequence[Unit], hyp: Sequence[Unit]) -> Alignment:
    """Minimal-cost alignment; ties broken DEL before INS before SUB."""
    n, m = len(ref), len(hyp)
    dp = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        dp[i][0] = i
    for j in range(1, m + 1):
        dp[0][j] = j
    for i in range(1, n + 1):
        row, prev = dp[i], dp[i - 1]
        ri = ref[i - 1]
        for j in range(1, m + 1):
            diag = prev[j - 1] + (0 if ri == hyp[j - 1] else 1)
            row[j] = min(diag, prev[j] + 1, row[j - 1] + 1)

    ops: list[AlignOp] = []
    i, j = n, m
    while i > 0 or j > 0:
        here = dp[i][j]
        if i > 0 and j > 0 and ref[i - 1] == hyp[j - 1] and dp[i - 1][j - 1] == here:
            ops.append(AlignOp(MATCH, i - 1, j - 1))
            i, j = i - 1, j - 1
        elif i > 0 and dp[i - 1][j] + 1 == here:
            ops.append(AlignOp(DEL, i - 1, None))
            i -= 1
        elif j > 0 and dp[i][j - 1] + 1 == here:
            ops.append(AlignOp(INS, None, j - 1))
            j -= 1
        else:
            ops.append(AlignOp(SUB, i - 1, j - 1))
            i, j = i - 1, j - 1
    ops.reverse()
    return Alignment(ops, dp[n][m])


def mer(refs: Sequence[Sequence[Unit]], hyps: Sequence[Sequence[Unit]]) -> float:
    """Corpus error rate over mixed units: (SUB+INS+DEL) / reference units."""
    total_units = sum(len(r) for r in refs)
    if total_units == 0:
        raise MetricError("no reference units; error rate undefined")
    total_errors = sum(align(r, h).cost for r, h in zip(refs, hyps))
    return total_errors / total_units


def find_occurrences(units: Sequence[Unit], phrase: Phrase) -> list[tuple[int, int]]:
    """All exact contiguous occurrences of a phrase, as (start, end) pairs."""
    surfaces = [t.surface for t in phrase]
    k = len(surfaces)
    out = []
    for s in range(len(units) - k + 1):
        if all(units[s + i].surface == surfaces[i] for i in range(k)):
            out.append((s, s + k))
    return out


def hotword_span_indices(units: Sequence[Unit], hotwords: HotwordList) -> set[int]:
    """Reference unit indices covered by any listed phrase occurrence."""
    covered: set[int] = set()
    for phrase in hotwords.phrases:
        for s, e in find_occurrences(units, phrase):
            covered.update(range(s, e))
    return covered


def biased_rates(refs: Sequence[Sequence[Unit]], hyps: Sequence[Sequence[Unit]],
                 hotword_lists: Sequence[HotwordList]):
    """Error rates restricted to hotword spans.

    SUB/DEL errors are charged to the span that owns the reference unit.
    An INS is charged to the span of the nearest preceding alignment op
    that carries a reference index, if that unit lies in a span; other
    insertions are ignored. Returns (bcer, n_bc, bwer, n_bw) with a rate
    of None when its unit count is zero.
    """
    err = {Lang.L1: 0, Lang.L2: 0}
    count = {Lang.L1: 0, Lang.L2: 0}
    for ref, hyp, hotwords in zip(refs, hyps, hotword_lists):
        in_span = hotword_span_indices(ref, hotwords)
        for idx in in_span:
            count[ref[idx].lang] += 1
        last_ref = None
        for op in align(ref, hyp).ops:
            if op.ref_index is not None:
                last_ref = op.ref_index
            if op.kind == MATCH:
                continue
            if op.kind in (SUB, DEL):
                if op.ref_index in in_span:
                    err[ref[op.ref_index].lang] += 1
            else:  # INS
                if last_ref is not None and last_ref in in_span:
                    err[ref[last_ref].lang] += 1
    bcer = err[Lang.L1] / count[Lang.L1] if count[Lang.L1] else None
    bwer = err[Lang.L2] / count[Lang.L2] if count[Lang.L2] else None
    return bcer, count[Lang.L1], bwer, count[Lang.L2]


def bmer(bcer: float | None, n_bc: int, bwer: float | None, n_bw: int) -> float:
    """Count-weighted mean of the two biased rates; undefined rates carry
    zero weight rather than polluting the aggregate."""
    terms = []
    if n_bc > 0 and bcer is not None:
        terms.append((n_bc, bcer))
    if n_bw > 0 and bwer is not None:
        terms.append((n_bw, bwer))
    if not terms:
        raise MetricError("both biased unit counts are zero; BMER undefined")
    denom = sum(n for n, _ in terms)
    return sum(n * r for n, r in terms) / denom


def phrase_pr(refs: Sequence[Sequence[Unit]], hyps: Sequence[Sequence[Unit]],
              hotword_lists: Sequence[HotwordList]):
    """Phrase-level precision/recall per language.

    A reference occurrence of a listed phrase is recalled iff the phrase
    appears contiguously anywhere in the hypothesis. A hypothesis
    occurrence counts as correct if it pairs with a reference occurrence,
    greedily one-to-one in order. Returns
    (precision_l1, recall_l1, precision_l2, recall_l2), None when undefined.
    """
    stats = {Lang.L1: [0, 0, 0, 0], Lang.L2: [0, 0, 0, 0]}  # [rec_num, rec_den, prec_num, prec_den]
    for ref, hyp, hotwords in zip(refs, hyps, hotword_lists):
        for phrase in hotwords.phrases:
            lang = phrase[0].lang
            ref_occs = find_occurrences(ref, phrase)
            hyp_occs = find_occurrences(hyp, phrase)
            s = stats[lang]
            s[1] += len(ref_occs)
            if hyp_occs:
                s[0] += len(ref_occs)
            s[3] += len(hyp_occs)
            s[2] += min(len(ref_occs), len(hyp_occs))
    out = []
    for lang in (Lang.L1, Lang.L2):
        rec_num, rec_den, prec_num, prec_den = stats[lang]
        out.append(prec_num / prec_den if prec_den else None)
        out.append(rec_num / rec_den if rec_den else None)
    p1, r1, p2, r2 = out
    return p1, r1, p2, r2


@dataclass
class EvalReport:
    mer: float
    bmer: float | None
    bcer: float | None
    n_bc: int
    bwer: float | None
    n_bw: int
    precision_l1: float | None
    recall_l1: float | None
    precision_l2: float | None
    recall_l2: float | None

    def to_dict(self) -> dict:
        return {
            "mer": self.mer,
            "bmer": self.bmer,
            "bcer": self.bcer,
            "n_bc": self.n_bc,
            "bwer": self.bwer,
            "n_bw": self.n_bw,
            "precision_l1": self.precision_l1,
            "recall_l1": self.recall_l1,
            "precision_l2": self.precision_l2,
            "recall_l2": self.recall_l2,
        }


CSV_FIELDS = ["system", "seed", "checkpoint", "mer", "bmer", "bcer", "n_bc",
              "bwer", "n_bw", "precision_l1", "recall_l1", "precision_l2", "recall_l2"]


def evaluate_corpus(ref_tokens: Sequence[Sequence[Token]],
                    hyp_tokens: Sequence[Sequence[Token]],
                    hotword_lists: Sequence[HotwordList]) -> EvalReport:
    """Score a decoded corpus end to end."""
    refs = [tokenize_mixed(r) for r in ref_tokens]
    hyps = [tokenize_mixed(h) for h in hyp_tokens]
    corpus_mer = mer(refs, hyps)
    bcer, n_bc, bwer, n_bw = biased_rates(refs, hyps, hotword_lists)
    overall = bmer(bcer, n_bc, bwer, n_bw) if (n_bc or n_bw) else None
    p1, r1, p2, r2 = phrase_pr(refs, hyps, hotword_lists)
    return EvalReport(corpus_mer, overall, bcer, n_bc, bwer, n_bw, p1, r1, p2, r2)


def report_to_json(report: EvalReport, extra: dict | None = None) -> str:
    obj = dict(report.to_dict())
    if extra:
        obj.update(extra)
    return json.dumps(obj, sort_keys=True, indent=2) + "\n"


def report_csv_row(system: str, seed, checkpoint: str, report: EvalReport) -> list:
    d = report.to_dict()
    return [system, seed, checkpoint] + [d[k] for k in CSV_FIELDS[3:]]
