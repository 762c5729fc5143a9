"""Bit-exact execution of staged programs, and the oracle equivalence checker.

Execution follows match-action semantics: stages run in order, a table reads
only fields produced at earlier stages, exact/range/ternary matching picks an
entry (ternary by entry order; compiled patterns are disjoint so order is a
safety net), and a miss fires the table's default action.  Load-time
validation asserts these structural properties instead of trusting the
compiler.
"""

from __future__ import annotations

import itertools
import weakref
from bisect import bisect_right
from dataclasses import dataclass
from fractions import Fraction
from math import exp
from typing import Callable, Sequence

from .errors import DomainTooLarge, FeatureError, ProgramError
from .model_ir import (
    EnsembleModel,
    Model,
    Prediction,
    TreeModel,
    argmax_tiebreak,
    check_vector,
    direct_class,
    evaluate_direct,
    vector_values,
)
from .pipeline import StagedProgram, dependency_levels
from .program import (
    ClassVote,
    CodeLookup,
    PairVote,
    SumArgmin,
    SummedPairVote,
    SumThreshold,
    TableDef,
    VoteMajority,
    WeightedSumArgmax,
)
from .rng import SplitMix64

EXHAUSTIVE_GUARD = 1 << 24
_PAIRWISE_CHECK_LIMIT = 1 << 12  # entry pairs; above this, sample
_MISMATCH_KEEP = 200


def _quantize_unit(value: float, frac_bits: int) -> Fraction:
    """Clamp to [0,1] and round to the q-bit lookup grid (round half to even)."""
    scaled = round(Fraction(min(max(value, 0.0), 1.0)) * (1 << frac_bits))
    return Fraction(scaled, 1 << frac_bits)


class _Table:
    """Prebuilt matcher for one table."""

    __slots__ = ("name", "key_getters", "field_names", "lookup")

    def __init__(self, table: TableDef, feature_index: dict[str, int]):
        self.name = table.name
        self.field_names = tuple(a.name for a in table.action_fields)
        getters: list[tuple[bool, object]] = []
        for k in table.key_fields:
            if k.is_feature:
                getters.append((True, feature_index[k.source_name]))
            else:
                getters.append((False, k.source_name))
        self.key_getters = tuple(getters)
        self.lookup = self._build(table)

    def _build(self, table: TableDef) -> Callable:
        default = table.default_action
        if table.match_kind == "exact":
            mapping = {e.key: e.action for e in table.entries}
            return lambda key: mapping.get(key, default)
        if table.match_kind == "range":
            if len(table.key_fields) == 1:
                entries = sorted(table.entries, key=lambda e: e.key[0][0])
                los = [e.key[0][0] for e in entries]
                his = [e.key[0][1] for e in entries]
                acts = [e.action for e in entries]

                def range_lookup(key):
                    v = key[0]
                    i = bisect_right(los, v) - 1
                    if i >= 0 and v <= his[i]:
                        return acts[i]
                    return default

                return range_lookup
            ents = [(e.key, e.action) for e in table.entries]

            def multirange_lookup(key):
                for ranges, action in ents:
                    if all(lo <= v <= hi for v, (lo, hi) in zip(key, ranges)):
                        return action
                return default

            return multirange_lookup
        # ternary: concatenate key fields into one int, first match wins
        widths = [k.width for k in table.key_fields]
        pats = []
        for e in table.entries:
            value = 0
            mask = 0
            for (v, m), w in zip(e.key, widths):
                value = (value << w) | (v & ((1 << w) - 1))
                mask = (mask << w) | (m & ((1 << w) - 1))
            pats.append((mask, value & mask, e.action))

        def ternary_lookup(key):
            packed = 0
            for v, w in zip(key, widths):
                packed = (packed << w) | v
            for mask, value, action in pats:
                if packed & mask == value:
                    return action
            return default

        return ternary_lookup


def _check_range_partition(table: TableDef) -> None:
    width = table.key_fields[0].width
    entries = sorted(table.entries, key=lambda e: e.key[0][0])
    expect = 0
    for e in entries:
        lo, hi = e.key[0]
        if lo != expect or hi < lo:
            raise ProgramError(
                f"table {table.name}: range entries do not partition the domain at {lo}"
            )
        expect = hi + 1
    if expect != (1 << width):
        raise ProgramError(
            f"table {table.name}: range entries stop at {expect}, domain is {1 << width}"
        )


def _check_ternary_disjoint(table: TableDef, seed: int = 7) -> None:
    n = len(table.entries)
    pairs = n * (n - 1) // 2
    if pairs == 0:
        return

    def overlap(a, b) -> bool:
        for (va, ma), (vb, mb) in zip(a.key, b.key):
            common = ma & mb
            if (va & common) != (vb & common):
                return False
        return True

    if pairs <= _PAIRWISE_CHECK_LIMIT:
        candidates = itertools.combinations(table.entries, 2)
    else:
        rng = SplitMix64(seed)
        sampled = []
        for _ in range(_PAIRWISE_CHECK_LIMIT):
            i = rng.next_below(n)
            j = rng.next_below(n)
            if i != j:
                sampled.append((table.entries[i], table.entries[j]))
        candidates = sampled
    for a, b in candidates:
        if overlap(a, b):
            raise ProgramError(
                f"table {table.name}: overlapping ternary patterns {a.key} and {b.key}"
            )


class Runner:
    """Reusable executor for one staged program."""

    def __init__(self, staged: StagedProgram):
        program = staged.program
        self.program = program
        self.feature_specs = program.feature_specs
        feature_index = {f.name: f.index for f in program.feature_specs}

        dependency_levels(program)  # raises ProgramError on bad wiring
        stage = dict(staged.stage_of)
        producers: dict[str, str] = {}
        for t in program.tables:
            for a in t.action_fields:
                producers[a.name] = t.name
        for t in program.tables:
            for k in t.key_fields:
                if not k.is_feature and stage[producers[k.source_name]] >= stage[t.name]:
                    raise ProgramError(
                        f"table {t.name} reads {k.source_name!r} in or before the "
                        "stage that writes it"
                    )
        for t in program.tables:
            if t.match_kind == "range" and len(t.key_fields) == 1:
                _check_range_partition(t)
            elif t.match_kind == "ternary":
                _check_ternary_disjoint(t)

        ordered = sorted(program.tables, key=lambda t: (stage[t.name], t.name))
        self.tables = [_Table(t, feature_index) for t in ordered]
        self.combine = program.combine
        acc_width = dict(program.notes).get("acc_width")
        self._acc_limit = (1 << (acc_width - 1)) if acc_width else None
        self._known_meta = {f.name for f in program.metadata_fields}

    # -- execution ---------------------------------------------------------

    def _metadata(self, values: Sequence[int]) -> dict[str, int]:
        meta: dict[str, int] = {}
        for table in self.tables:
            key = tuple(
                values[ref] if is_feature else meta.get(ref, 0)
                for is_feature, ref in table.key_getters
            )
            action = table.lookup(key)
            for name, v in zip(table.field_names, action):
                meta[name] = v
        return meta

    def _checked_sum(self, parts, bias: int = 0) -> int:
        total = bias
        for p in parts:
            total += p
        if self._acc_limit is not None and not (-self._acc_limit <= total < self._acc_limit):
            raise ProgramError(
                f"combine sum {total} overflows the sized accumulator; compiler bug"
            )
        return total

    def run_raw(self, values: Sequence[int]) -> tuple[int, tuple[int, ...], bool, dict[str, int]]:
        """(class_id, integer scores, top-score tie flag, metadata)."""
        meta = self._metadata(values)
        combine = self.combine

        if isinstance(combine, CodeLookup):
            cls = meta.get(combine.class_field, 0)
            scores = tuple(1 if y == cls else 0 for y in range(combine.n_classes))
            return cls, scores, False, meta

        if isinstance(combine, VoteMajority):
            votes = [0] * combine.n_classes
            for src in combine.sources:
                if isinstance(src, ClassVote):
                    votes[meta.get(src.field, 0)] += 1
                elif isinstance(src, PairVote):
                    votes[src.pair[0] if meta.get(src.bit_field, 0) else src.pair[1]] += 1
                else:
                    assert isinstance(src, SummedPairVote)
                    s = self._checked_sum((meta.get(f, 0) for f in src.fields), src.bias)
                    votes[src.pair[0] if s >= 0 else src.pair[1]] += 1
            cls = argmax_tiebreak(votes)
            tied = votes.count(votes[cls]) > 1
            return cls, tuple(votes), tied, meta

        if isinstance(combine, WeightedSumArgmax):
            scores = tuple(
                self._checked_sum((meta.get(f, 0) for f in t.fields), t.bias)
                for t in combine.terms
            )
            cls = argmax_tiebreak(scores)
            tied = scores.count(scores[cls]) > 1
            return cls, scores, tied, meta

        if isinstance(combine, SumArgmin):
            sums = [
                self._checked_sum((meta.get(f, 0) for f in t.fields), t.bias)
                for t in combine.terms
            ]
            scores = tuple(-s for s in sums)
            cls = argmax_tiebreak(scores)
            tied = scores.count(scores[cls]) > 1
            return cls, scores, tied, meta

        assert isinstance(combine, SumThreshold)
        total = self._checked_sum(meta.get(f, 0) for f in combine.fields)
        scores = (total - combine.threshold, combine.threshold - total)
        cls = argmax_tiebreak(scores)
        return cls, scores, scores[0] == scores[1], meta

    def _confidence(self, cls: int, scores: tuple[int, ...]) -> Fraction:
        combine = self.combine
        q = self.program.frac_bits
        if isinstance(combine, VoteMajority):
            if combine.confidence == "none":
                return Fraction(1)
            n = len(combine.sources)
            return _quantize_unit(scores[cls] / n, q) if n else Fraction(1)
        if isinstance(combine, WeightedSumArgmax):
            if combine.confidence == "none":
                return Fraction(1)
            floats = [s / (1 << q) for s in scores]
            top = max(floats)
            exps = [exp(f - top) for f in floats]
            return _quantize_unit(exps[cls] / sum(exps), q)
        if isinstance(combine, SumThreshold):
            if combine.confidence == "none" or combine.path_norm is None:
                return Fraction(1)
            total = scores[0] + combine.threshold
            avg = total / combine.n_trees
            s = 2.0 ** (-avg / float(combine.path_norm))
            return _quantize_unit(s if cls == 1 else 1.0 - s, q)
        return Fraction(1)

    def run(self, x) -> Prediction:
        values = vector_values(x)
        check_vector(self.feature_specs, values)
        cls, scores, _, _ = self.run_raw(values)
        return Prediction(
            class_id=cls,
            scores=tuple(Fraction(s) for s in scores),
            confidence=self._confidence(cls, scores),
        )


_runner_cache: dict[int, tuple[object, Runner]] = {}


def runner_for(staged: StagedProgram) -> Runner:
    entry = _runner_cache.get(id(staged))
    if entry is not None and entry[0]() is staged:
        return entry[1]
    runner = Runner(staged)
    ref = weakref.ref(staged, lambda _, key=id(staged): _runner_cache.pop(key, None))
    _runner_cache[id(staged)] = (ref, runner)
    return runner


def run_vector(staged: StagedProgram, x) -> Prediction:
    """Execute one feature vector through the staged program."""
    return runner_for(staged).run(x)


def run_batch(staged: StagedProgram, xs: Sequence) -> list[Prediction]:
    """Order-preserving batch execution; per-input errors carry the input index."""
    runner = runner_for(staged)
    out = []
    for i, x in enumerate(xs):
        try:
            out.append(runner.run(x))
        except FeatureError as exc:
            raise FeatureError(f"input {i}: {exc}") from exc
    return out


# --------------------------------------------------------------------------
# Equivalence checking
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EquivalenceReport:
    inputs_tested: int
    mismatch_count: int
    mismatches: tuple[tuple[tuple[int, ...], int, int], ...]  # (input, oracle, pipeline)
    tie_count: int
    mismatch_tied_count: int
    max_score_dev: Fraction

    @property
    def ok(self) -> bool:
        return self.mismatch_count == 0

    def to_dict(self) -> dict:
        return {
            "inputs_tested": self.inputs_tested,
            "mismatch_count": self.mismatch_count,
            "tie_count": self.tie_count,
            "mismatch_tied_count": self.mismatch_tied_count,
            "max_score_dev": str(self.max_score_dev),
            "mismatches": [
                {"input": list(x), "oracle": o, "pipeline": p}
                for x, o, p in self.mismatches
            ],
        }


def _input_iter(widths: Sequence[int], mode: str, n: int, seed: int):
    if mode == "exhaustive":
        total = 1
        for w in widths:
            total <<= w
        if total > EXHAUSTIVE_GUARD:
            raise DomainTooLarge(
                f"exhaustive domain of 2^{sum(widths)} inputs exceeds {EXHAUSTIVE_GUARD}"
            )
        return itertools.product(*(range(1 << w) for w in widths))
    if mode == "sample":
        rng = SplitMix64(seed)
        return (
            tuple(rng.next_below(1 << w) for w in widths) for _ in range(n)
        )
    raise ValueError(f"unknown input mode {mode!r}")


def check_equivalence(
    model: Model,
    staged: StagedProgram,
    mode: str = "exhaustive",
    n: int = 100_000,
    seed: int = 1,
) -> EquivalenceReport:
    """Compare the pipeline against the direct oracle over a domain sweep.

    Exhaustive mode enumerates the full integer feature domain (guarded);
    sample mode draws seeded uniform vectors.  Reported score deviation is
    max |pipeline score - score_scale * oracle score| over classes.
    """
    program = staged.program
    if tuple(model.features) != program.feature_specs:
        raise FeatureError("model and program use different feature specs")
    runner = runner_for(staged)
    widths = [f.width_bits for f in model.features]
    scale = program.score_scale

    fast_votes = isinstance(model, TreeModel) or (
        isinstance(model, EnsembleModel) and model.mode == "bagging"
    )

    inputs_tested = 0
    mismatch_count = 0
    tie_count = 0
    mismatch_tied = 0
    kept: list[tuple[tuple[int, ...], int, int]] = []
    max_dev = Fraction(0)

    for values in _input_iter(widths, mode, n, seed):
        inputs_tested += 1
        p_cls, p_scores, tied, _ = runner.run_raw(values)
        if fast_votes:
            o_cls = direct_class(model, values)
            if isinstance(model, TreeModel):
                dev = max(
                    abs(p - (scale if y == o_cls else 0)) for y, p in enumerate(p_scores)
                )
            else:
                votes = [0] * model.n_classes
                for tree in model.trees:
                    votes[tree.leaf_for(values).class_id] += 1
                dev = max(abs(p - scale * o) for p, o in zip(p_scores, votes))
            if dev > max_dev:
                max_dev = Fraction(dev)
        else:
            pred = evaluate_direct(model, values)
            o_cls = pred.class_id
            for p, o in zip(p_scores, pred.scores):
                d = abs(Fraction(p) - scale * o)
                if d > max_dev:
                    max_dev = d
        if tied:
            tie_count += 1
        if p_cls != o_cls:
            mismatch_count += 1
            if tied:
                mismatch_tied += 1
            if len(kept) < _MISMATCH_KEEP:
                kept.append((tuple(values), o_cls, p_cls))

    return EquivalenceReport(
        inputs_tested=inputs_tested,
        mismatch_count=mismatch_count,
        mismatches=tuple(kept),
        tie_count=tie_count,
        mismatch_tied_count=mismatch_tied,
        max_score_dev=max_dev,
    )
