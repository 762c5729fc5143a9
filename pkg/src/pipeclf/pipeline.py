"""Stage placement, resource accounting, entry bounds, and prefix expansion.

Latency is modeled as stages used; memory is modeled as entry counts against
SRAM/TCAM budgets plus informational bit totals.  Both are profile-relative:
the default profile is switch-like in shape without claiming any vendor's
numbers.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, asdict
from typing import Iterable, Sequence

from .errors import ArgumentError, PlacementError, ProgramError, RangeError, SchemaError
from .program import (
    Entry,
    PipelineProgram,
    TableDef,
    CodeLookup,
    SumArgmin,
    SumThreshold,
    VoteMajority,
    WeightedSumArgmax,
    SummedPairVote,
)

PROFILE_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class ResourceProfile:
    """Budget set a staged program must fit.  All values strictly positive."""

    name: str = "generic-12"
    n_stages: int = 12
    max_tables_per_stage: int = 8
    sram_entries_budget: int = 1 << 20
    tcam_entries_budget: int = 1 << 16
    max_key_bits: int = 512
    max_action_bits: int = 128
    metadata_bits_budget: int = 1024
    adds_per_stage: int = 4
    max_extracted_features: int = 16
    word_bits: int = 32  # SRAM row granularity for bit accounting

    def __post_init__(self):
        for fname, value in asdict(self).items():
            if fname != "name" and value <= 0:
                raise ArgumentError(f"profile field {fname} must be positive, got {value}")


GENERIC_12 = ResourceProfile()


def profile_to_json(profile: ResourceProfile) -> str:
    doc = {"schema": PROFILE_SCHEMA_VERSION, **asdict(profile)}
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def profile_from_json(text: str) -> ResourceProfile:
    doc = json.loads(text)
    if doc.pop("schema", None) != PROFILE_SCHEMA_VERSION:
        raise SchemaError(f"profile schema must be {PROFILE_SCHEMA_VERSION}")
    known = {f for f in ResourceProfile.__dataclass_fields__}
    unknown = set(doc) - known
    if unknown:
        raise SchemaError(f"unknown profile fields: {sorted(unknown)}")
    return ResourceProfile(**doc)


# --------------------------------------------------------------------------
# Dependency analysis and placement
# --------------------------------------------------------------------------


def producer_map(program: PipelineProgram) -> dict[str, str]:
    """metadata field name -> name of the single table that writes it."""
    producers: dict[str, str] = {}
    for t in program.tables:
        for a in t.action_fields:
            if a.name in producers:
                raise ProgramError(
                    f"metadata field {a.name!r} written by both "
                    f"{producers[a.name]!r} and {t.name!r}"
                )
            producers[a.name] = t.name
    return producers


def dependency_levels(program: PipelineProgram) -> dict[str, int]:
    """Table name -> dependency level (0 = keys are features only)."""
    producers = producer_map(program)
    levels: dict[str, int] = {}
    remaining = {t.name: t for t in program.tables}
    while remaining:
        progressed = False
        for name in sorted(remaining):
            t = remaining[name]
            deps = []
            ok = True
            for k in t.key_fields:
                if k.is_feature:
                    continue
                src = producers.get(k.source_name)
                if src is None:
                    raise ProgramError(
                        f"table {t.name!r} reads metadata field {k.source_name!r} "
                        "that no table writes"
                    )
                if src not in levels:
                    ok = False
                    break
                deps.append(levels[src])
            if ok:
                levels[name] = max(deps) + 1 if deps else 0
                del remaining[name]
                progressed = True
        if not progressed:
            raise ProgramError(f"dependency cycle among tables {sorted(remaining)}")
    return levels


def _combine_reduction_groups(program: PipelineProgram) -> list[list[int]]:
    """Sequential phases of parallel reductions, as addend-count groups."""
    combine = program.combine
    if isinstance(combine, CodeLookup):
        return []
    if isinstance(combine, VoteMajority):
        adders = []
        for src in combine.sources:
            if isinstance(src, SummedPairVote):
                adders.append(len(src.fields) + 1)  # fields + bias
        phases = []
        if adders:
            phases.append(adders)
        # vote counting: one sum of n sources per class, then the argmax scan
        phases.append([len(combine.sources)] * combine.n_classes)
        phases.append([combine.n_classes])
        return phases
    if isinstance(combine, (WeightedSumArgmax, SumArgmin)):
        phases = [[len(t.fields) + (1 if t.bias else 0) for t in combine.terms]]
        phases.append([combine.n_classes])
        return phases
    assert isinstance(combine, SumThreshold)
    return [[len(combine.fields)], [2]]  # sum depths, then compare with threshold


def _schedule_reductions(groups: Sequence[Sequence[int]], adds_per_stage: int) -> list[int]:
    """Stages for the combine phases; returns adds executed per stage."""
    stage_adds: list[int] = []
    for phase in groups:
        sizes = [s for s in phase if s > 1]
        while sizes:
            budget = adds_per_stage
            next_sizes = []
            for s in sizes:
                doable = min(s // 2, budget)
                budget -= doable
                s -= doable
                if s > 1:
                    next_sizes.append(s)
            stage_adds.append(adds_per_stage - budget)
            sizes = next_sizes
    return stage_adds


@dataclass(frozen=True)
class StagedProgram:
    program: PipelineProgram
    stage_of: tuple[tuple[str, int], ...]  # (table name, stage index)
    combine_stage_adds: tuple[int, ...]  # adds per combine stage, after the tables
    dependency_depth: int

    @property
    def stages_used(self) -> int:
        last_table = max((s for _, s in self.stage_of), default=-1)
        return last_table + 1 + len(self.combine_stage_adds)

    def stage_of_table(self, name: str) -> int:
        for n, s in self.stage_of:
            if n == name:
                return s
        raise KeyError(name)


def place_stages(program: PipelineProgram, profile: ResourceProfile) -> StagedProgram:
    """Greedy layered placement under the profile's budgets.

    Tables at dependency level 0 fill the earliest stages, multiple tables per
    stage up to the limit; each later level starts strictly after the stage of
    its last producer.  Placement order inside a level is lexicographic.
    Raises PlacementError naming the first violated budget.
    """
    for t in program.tables:
        if t.key_bits() > profile.max_key_bits:
            raise PlacementError(
                "key_too_wide",
                f"table {t.name}: key {t.key_bits()} bits > {profile.max_key_bits}",
            )
        if t.action_bits() > profile.max_action_bits:
            raise PlacementError(
                "key_too_wide",
                f"table {t.name}: action {t.action_bits()} bits > {profile.max_action_bits}",
            )

    meta_bits = sum(f.width for f in program.metadata_fields)
    if meta_bits > profile.metadata_bits_budget:
        raise PlacementError(
            "metadata_overflow",
            f"{meta_bits} metadata bits > {profile.metadata_bits_budget}",
        )

    feature_keys = {
        k.source_name for t in program.tables for k in t.key_fields if k.is_feature
    }
    if len(feature_keys) > profile.max_extracted_features:
        raise PlacementError(
            "feature_overflow",
            f"{len(feature_keys)} extracted features > {profile.max_extracted_features}",
        )

    sram = sum(len(t.entries) for t in program.tables if t.match_kind in ("exact", "range"))
    tcam = sum(len(t.entries) for t in program.tables if t.match_kind == "ternary")
    if sram > profile.sram_entries_budget:
        raise PlacementError(
            "memory_overflow", f"{sram} SRAM entries > {profile.sram_entries_budget}"
        )
    if tcam > profile.tcam_entries_budget:
        raise PlacementError(
            "memory_overflow", f"{tcam} TCAM entries > {profile.tcam_entries_budget}"
        )

    levels = dependency_levels(program)
    depth = max(levels.values()) + 1 if levels else 0
    by_level: dict[int, list[str]] = {}
    for name, level in levels.items():
        by_level.setdefault(level, []).append(name)

    stage_of: dict[str, int] = {}
    next_free = 0
    for level in sorted(by_level):
        names = sorted(by_level[level])
        start = next_free
        for i, name in enumerate(names):
            stage_of[name] = start + i // profile.max_tables_per_stage
        next_free = start + (len(names) + profile.max_tables_per_stage - 1) // profile.max_tables_per_stage

    combine_adds = _schedule_reductions(
        _combine_reduction_groups(program), profile.adds_per_stage
    )
    total = next_free + len(combine_adds)
    if total > profile.n_stages:
        raise PlacementError(
            "stage_overflow", f"needs {total} stages > {profile.n_stages} available"
        )
    return StagedProgram(
        program=program,
        stage_of=tuple(sorted(stage_of.items())),
        combine_stage_adds=tuple(combine_adds),
        dependency_depth=depth,
    )


# --------------------------------------------------------------------------
# Resource report
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TableUsage:
    name: str
    role: str
    match_kind: str
    stage: int
    entries: int
    key_bits: int
    action_bits: int
    sram_entries: int
    tcam_entries: int
    sram_bits: int


@dataclass(frozen=True)
class ResourceReport:
    profile_name: str
    tables: tuple[TableUsage, ...]
    stages_used: int
    dependency_depth: int
    metadata_bits: int
    sram_entries: int
    tcam_entries: int
    sram_bits: int
    pct_stages: float
    pct_sram_entries: float
    pct_tcam_entries: float
    pct_metadata_bits: float
    tables_by_role: tuple[tuple[str, int], ...]
    classification_entries: int | None = None
    entry_bound_lower: int | None = None
    entry_bound_upper: int | None = None
    entry_key_space: int | None = None

    def to_dict(self) -> dict:
        return {
            "profile": self.profile_name,
            "stages_used": self.stages_used,
            "dependency_depth": self.dependency_depth,
            "metadata_bits": self.metadata_bits,
            "sram_entries": self.sram_entries,
            "tcam_entries": self.tcam_entries,
            "sram_bits": self.sram_bits,
            "pct_stages": self.pct_stages,
            "pct_sram_entries": self.pct_sram_entries,
            "pct_tcam_entries": self.pct_tcam_entries,
            "pct_metadata_bits": self.pct_metadata_bits,
            "tables_by_role": dict(self.tables_by_role),
            "classification_entries": self.classification_entries,
            "entry_bound_lower": self.entry_bound_lower,
            "entry_bound_upper": self.entry_bound_upper,
            "entry_key_space": self.entry_key_space,
            "tables": [asdict(t) for t in self.tables],
        }

    def to_text(self) -> str:
        lines = [
            f"profile: {self.profile_name}",
            f"stages used: {self.stages_used} ({self.pct_stages:.1f}% of budget)",
            f"dependency depth: {self.dependency_depth}",
            f"metadata bits: {self.metadata_bits} ({self.pct_metadata_bits:.1f}%)",
            f"SRAM entries: {self.sram_entries} ({self.pct_sram_entries:.3f}%)",
            f"TCAM entries: {self.tcam_entries} ({self.pct_tcam_entries:.3f}%)",
            f"SRAM bits: {self.sram_bits}",
            "tables by role: "
            + ", ".join(f"{role}={n}" for role, n in self.tables_by_role),
        ]
        if self.classification_entries is not None:
            lines.append(
                f"classification entries: {self.classification_entries} "
                f"(bounds {self.entry_bound_lower}..{self.entry_bound_upper}, "
                f"key space {self.entry_key_space})"
            )
        lines.append(f"{'table':<24}{'stage':>6}{'kind':>9}{'entries':>9}{'key':>5}{'act':>5}")
        for t in self.tables:
            lines.append(
                f"{t.name:<24}{t.stage:>6}{t.match_kind:>9}{t.entries:>9}"
                f"{t.key_bits:>5}{t.action_bits:>5}"
            )
        return "\n".join(lines) + "\n"


def _roundup(bits: int, word: int) -> int:
    return ((bits + word - 1) // word) * word


def resource_report(staged: StagedProgram, profile: ResourceProfile) -> ResourceReport:
    """Pure accounting over a placed program."""
    rows = []
    roles: dict[str, int] = {}
    for t in staged.program.tables:
        entries = len(t.entries)
        is_ternary = t.match_kind == "ternary"
        sram_entries = 0 if is_ternary else entries
        row_bits = _roundup(t.key_bits() + t.action_bits(), profile.word_bits)
        rows.append(
            TableUsage(
                name=t.name,
                role=t.role,
                match_kind=t.match_kind,
                stage=staged.stage_of_table(t.name),
                entries=entries,
                key_bits=t.key_bits(),
                action_bits=t.action_bits(),
                sram_entries=sram_entries,
                tcam_entries=entries if is_ternary else 0,
                sram_bits=sram_entries * row_bits,
            )
        )
        roles[t.role] = roles.get(t.role, 0) + 1
    sram_entries = sum(r.sram_entries for r in rows)
    tcam_entries = sum(r.tcam_entries for r in rows)
    meta_bits = sum(f.width for f in staged.program.metadata_fields)

    cls_entries = lower = upper = key_space = None
    stats = staged.program.tree_stats
    if stats is not None:
        bounds = classification_entry_bounds(
            stats.branches, len(stats.per_feature_branches), stats.per_feature_branches
        )
        lower, upper, key_space = bounds.lower, bounds.upper, bounds.key_space
        for t in staged.program.tables:
            if t.role == "classification":
                cls_entries = len(t.entries)

    return ResourceReport(
        profile_name=profile.name,
        tables=tuple(rows),
        stages_used=staged.stages_used,
        dependency_depth=staged.dependency_depth,
        metadata_bits=meta_bits,
        sram_entries=sram_entries,
        tcam_entries=tcam_entries,
        sram_bits=sum(r.sram_bits for r in rows),
        pct_stages=100.0 * staged.stages_used / profile.n_stages,
        pct_sram_entries=100.0 * sram_entries / profile.sram_entries_budget,
        pct_tcam_entries=100.0 * tcam_entries / profile.tcam_entries_budget,
        pct_metadata_bits=100.0 * meta_bits / profile.metadata_bits_budget,
        tables_by_role=tuple(sorted(roles.items())),
        classification_entries=cls_entries,
        entry_bound_lower=lower,
        entry_bound_upper=upper,
        entry_key_space=key_space,
    )


# --------------------------------------------------------------------------
# Entry-count bounds for tree classification tables
# --------------------------------------------------------------------------


def _ceil_log2(n: int) -> int:
    if n < 1:
        raise ArgumentError(f"ceil_log2 of {n}")
    return (n - 1).bit_length()


def _ceil_log2_frac(num: int, den: int) -> int:
    """Smallest e with 2^e >= num/den."""
    e = 0
    while (den << e) < num:
        e += 1
    return e


@dataclass(frozen=True)
class EntryBounds:
    """Classification-table entry-space bounds for a tree with B branches.

    ``key_space`` is 2^(sum of per-feature code widths) for the given branch
    counts; generated entries can never exceed it.  ``upper`` is the key
    space when branches split evenly across features, ``lower`` when F-1
    features carry a single branch each.  The printed form of the source
    bound is ambiguous about exponent placement; this key-width derivation is
    the implemented reading, and reports carry all three values.
    """

    lower: int
    upper: int
    key_space: int


def classification_entry_bounds(
    branches: int, n_features: int, per_feature_branches: Sequence[int]
) -> EntryBounds:
    if n_features < 1:
        raise ArgumentError("need at least one feature")
    counts = list(per_feature_branches)
    if len(counts) != n_features:
        raise ArgumentError(f"got {len(counts)} branch counts for {n_features} features")
    if any(b < 1 for b in counts):
        raise ArgumentError("per-feature branch counts must be >= 1")
    if sum(counts) != branches:
        raise ArgumentError(f"branch counts sum to {sum(counts)}, expected {branches}")
    key_space = 1 << sum(_ceil_log2(b + 1) for b in counts)
    upper = 1 << (n_features * _ceil_log2_frac(branches + n_features, n_features))
    lower = 1 << ((n_features - 1) + _ceil_log2(branches - n_features + 2))
    return EntryBounds(lower=lower, upper=upper, key_space=key_space)


# --------------------------------------------------------------------------
# Range to ternary expansion
# --------------------------------------------------------------------------


def expand_range_to_ternary(lo: int, hi: int, width: int) -> list[tuple[int, int]]:
    """Minimal prefix cover of [lo, hi] as (value, mask) pairs; mask bit 1 = care.

    Greedy aligned-block decomposition: patterns are disjoint, their union is
    exactly [lo, hi], and their count is at most max(1, 2*width - 2).
    """
    if width < 1:
        raise RangeError(f"width must be >= 1, got {width}")
    full = (1 << width) - 1
    if not (0 <= lo <= hi <= full):
        raise RangeError(f"invalid range [{lo}, {hi}] for width {width}")
    out: list[tuple[int, int]] = []
    cur = lo
    while cur <= hi:
        size = cur & -cur if cur else 1 << width
        while cur + size - 1 > hi:
            size >>= 1
        out.append((cur, (full ^ (size - 1)) & full))
        cur += size
    return out


def range_table_to_exact(table: TableDef) -> TableDef:
    """Expand a single-key range table into its exact-match equivalent."""
    if table.match_kind != "range" or len(table.key_fields) != 1:
        raise ArgumentError("only single-key range tables can be expanded here")
    entries = []
    for e in table.entries:
        lo, hi = e.key[0]
        for v in range(lo, hi + 1):
            entries.append(Entry(key=(v,), action=e.action))
    return TableDef(
        name=table.name,
        role=table.role,
        match_kind="exact",
        key_fields=table.key_fields,
        action_fields=table.action_fields,
        entries=tuple(sorted(entries, key=lambda e: e.key)),
        default_action=table.default_action,
    )


def ternary_patterns_disjoint(entries: Iterable[Entry]) -> bool:
    """True when no two ternary entries can match the same key."""
    ents = list(entries)
    for i in range(len(ents)):
        for j in range(i + 1, len(ents)):
            if _ternary_overlap(ents[i].key, ents[j].key):
                return False
    return True


def _ternary_overlap(key_a, key_b) -> bool:
    for (va, ma), (vb, mb) in zip(key_a, key_b):
        common = ma & mb
        if (va & common) != (vb & common):
            return False
    return True
