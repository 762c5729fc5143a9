"""Match-action pipeline program IR and its two-file serialization.

A program splits into two artifacts mirroring how a deployment splits into a
data plane and a control plane:

* ``program.json`` holds the schema only: tables (names, match kinds, key and
  action field layouts), metadata fields, and the combine descriptor.  The
  ``shape_hash`` is computed over exactly this information, so two programs
  with equal hashes accept the same entries file.
* ``entries.json`` holds the data: per-table entry lists, default-action
  values, and the combine constants (biases, thresholds).  Retraining a model
  under fixed shape constraints changes only this file.

Entry lists are kept in a canonical sort order.  Ternary priority is entry
order (first match wins), but compiled patterns are pairwise disjoint, so the
canonical order never changes semantics.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Mapping, Sequence, Union

from .errors import SchemaError
from .model_ir import FeatureSpec, parse_feature_specs, _feature_spec_dict
from .rational import format_rational, parse_rational

PROGRAM_SCHEMA_VERSION = 1

MATCH_KINDS = ("exact", "range", "ternary")

# table roles, for reporting only
ROLE_FEATURE = "feature"
ROLE_CLASSIFICATION = "classification"
ROLE_TREE = "tree"
ROLE_CLASS_SCORE = "class_score"
ROLE_HYPERPLANE = "hyperplane"
ROLE_BIN = "bin"
ROLE_OTHER = "other"


@dataclass(frozen=True)
class KeyField:
    name: str
    width: int
    source: str  # "feature:<name>" or "meta:<field>"

    @property
    def is_feature(self) -> bool:
        return self.source.startswith("feature:")

    @property
    def source_name(self) -> str:
        return self.source.split(":", 1)[1]


@dataclass(frozen=True)
class ActionField:
    name: str
    width: int
    signed: bool = False


@dataclass(frozen=True)
class Entry:
    """One table entry.

    ``key`` layout depends on the table's match kind:
      exact   -> tuple of ints, one per key field
      range   -> tuple of (lo, hi) inclusive pairs
      ternary -> tuple of (value, mask) pairs; mask bit 1 = care
    ``action`` is aligned with the table's action_fields.
    """

    key: tuple
    action: tuple[int, ...]


@dataclass(frozen=True)
class TableDef:
    name: str
    role: str
    match_kind: str
    key_fields: tuple[KeyField, ...]
    action_fields: tuple[ActionField, ...]
    entries: tuple[Entry, ...]
    default_action: tuple[int, ...]

    def key_bits(self) -> int:
        return sum(k.width for k in self.key_fields)

    def action_bits(self) -> int:
        return sum(a.width for a in self.action_fields)


# --------------------------------------------------------------------------
# Combine descriptors
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class ClassVote:
    """A metadata field that holds a class id (one tree's decision)."""

    field: str


@dataclass(frozen=True)
class PairVote:
    """A 1-bit field: 1 votes pair[0] (the lower class id), 0 votes pair[1]."""

    bit_field: str
    pair: tuple[int, int]


@dataclass(frozen=True)
class SummedPairVote:
    """Sum fields plus a constant; >= 0 votes pair[0], else pair[1]."""

    fields: tuple[str, ...]
    bias: int  # constant: quantized intercept
    pair: tuple[int, int]


VoteSource = Union[ClassVote, PairVote, SummedPairVote]


@dataclass(frozen=True)
class ClassTerm:
    """One class's score: the sum of fields plus a constant."""

    fields: tuple[str, ...]
    bias: int = 0


@dataclass(frozen=True)
class CodeLookup:
    class_field: str
    n_classes: int


@dataclass(frozen=True)
class VoteMajority:
    sources: tuple[VoteSource, ...]
    n_classes: int
    frac_bits: int
    confidence: str = "vote_fraction"  # or "none"


@dataclass(frozen=True)
class WeightedSumArgmax:
    terms: tuple[ClassTerm, ...]
    n_classes: int
    frac_bits: int
    confidence: str = "softmax"  # or "none"


@dataclass(frozen=True)
class SumArgmin:
    terms: tuple[ClassTerm, ...]
    n_classes: int
    frac_bits: int


@dataclass(frozen=True)
class SumThreshold:
    """Anomaly iff summed depth < threshold; ties resolve to class 0 (normal)."""

    fields: tuple[str, ...]
    threshold: int  # constant
    n_trees: int
    frac_bits: int
    path_norm: Fraction | None = None  # c(n) for the confidence lookup
    confidence: str = "isolation"  # or "none"


Combine = Union[CodeLookup, VoteMajority, WeightedSumArgmax, SumArgmin, SumThreshold]

_COMBINE_KINDS = {
    CodeLookup: "code_lookup",
    VoteMajority: "vote_majority",
    WeightedSumArgmax: "weighted_sum_argmax",
    SumArgmin: "sum_argmin",
    SumThreshold: "sum_threshold",
}


def combine_kind(combine: Combine) -> str:
    return _COMBINE_KINDS[type(combine)]


@dataclass(frozen=True)
class TreeStats:
    """Branch statistics of a compiled single tree, for entry-bound reporting."""

    branches: int
    per_feature_branches: tuple[int, ...]


@dataclass(frozen=True)
class PipelineProgram:
    feature_specs: tuple[FeatureSpec, ...]
    tables: tuple[TableDef, ...]
    metadata_fields: tuple[ActionField, ...]
    combine: Combine
    score_scale: int  # pipeline scores approximate score_scale * oracle scores
    frac_bits: int
    tree_stats: TreeStats | None = None
    notes: tuple[tuple[str, int], ...] = ()
    shape_hash: str = ""

    def table(self, name: str) -> TableDef:
        for t in self.tables:
            if t.name == name:
                return t
        raise KeyError(name)


# --------------------------------------------------------------------------
# Canonical entry ordering
# --------------------------------------------------------------------------


def _entry_sort_key(entry: Entry):
    flat = []
    for part in entry.key:
        if isinstance(part, tuple):
            flat.extend(part)
        else:
            flat.append(part)
    return tuple(flat)


def sort_entries(entries: Sequence[Entry]) -> tuple[Entry, ...]:
    return tuple(sorted(entries, key=_entry_sort_key))


# --------------------------------------------------------------------------
# Schema projection and shape hash
# --------------------------------------------------------------------------


def _key_field_dict(k: KeyField) -> dict:
    return {"name": k.name, "width": k.width, "source": k.source}


def _action_field_dict(a: ActionField) -> dict:
    return {"name": a.name, "width": a.width, "signed": a.signed}


def _vote_source_dict(src: VoteSource, schema_only: bool) -> dict:
    if isinstance(src, ClassVote):
        return {"kind": "class_vote", "field": src.field}
    if isinstance(src, PairVote):
        return {"kind": "pair_vote", "bit_field": src.bit_field, "pair": list(src.pair)}
    d = {"kind": "summed_pair_vote", "fields": list(src.fields), "pair": list(src.pair)}
    if not schema_only:
        d["bias"] = src.bias
    return d


def _class_term_dict(term: ClassTerm, schema_only: bool) -> dict:
    d: dict = {"fields": list(term.fields)}
    if not schema_only:
        d["bias"] = term.bias
    return d


def combine_dict(combine: Combine, schema_only: bool) -> dict:
    kind = combine_kind(combine)
    if isinstance(combine, CodeLookup):
        return {"kind": kind, "class_field": combine.class_field, "n_classes": combine.n_classes}
    if isinstance(combine, VoteMajority):
        return {
            "kind": kind,
            "sources": [_vote_source_dict(s, schema_only) for s in combine.sources],
            "n_classes": combine.n_classes,
            "frac_bits": combine.frac_bits,
            "confidence": combine.confidence,
        }
    if isinstance(combine, (WeightedSumArgmax, SumArgmin)):
        d = {
            "kind": kind,
            "terms": [_class_term_dict(t, schema_only) for t in combine.terms],
            "n_classes": combine.n_classes,
            "frac_bits": combine.frac_bits,
        }
        if isinstance(combine, WeightedSumArgmax):
            d["confidence"] = combine.confidence
        return d
    assert isinstance(combine, SumThreshold)
    d = {
        "kind": kind,
        "fields": list(combine.fields),
        "n_trees": combine.n_trees,
        "frac_bits": combine.frac_bits,
        "confidence": combine.confidence,
    }
    if combine.path_norm is not None:
        d["path_norm"] = format_rational(combine.path_norm)
    if not schema_only:
        d["threshold"] = combine.threshold
    return d


def _combine_from_dict(d: dict, constants: dict | None = None) -> Combine:
    constants = constants or {}
    kind = d.get("kind")
    if kind == "code_lookup":
        return CodeLookup(class_field=d["class_field"], n_classes=d["n_classes"])
    if kind == "vote_majority":
        sources = []
        source_biases = constants.get("source_biases", {})
        for i, s in enumerate(d["sources"]):
            if s["kind"] == "class_vote":
                sources.append(ClassVote(field=s["field"]))
            elif s["kind"] == "pair_vote":
                sources.append(PairVote(bit_field=s["bit_field"], pair=tuple(s["pair"])))
            else:
                sources.append(
                    SummedPairVote(
                        fields=tuple(s["fields"]),
                        bias=int(s.get("bias", source_biases.get(str(i), 0))),
                        pair=tuple(s["pair"]),
                    )
                )
        return VoteMajority(
            sources=tuple(sources),
            n_classes=d["n_classes"],
            frac_bits=d["frac_bits"],
            confidence=d.get("confidence", "vote_fraction"),
        )
    if kind in ("weighted_sum_argmax", "sum_argmin"):
        term_biases = constants.get("term_biases", {})
        terms = tuple(
            ClassTerm(fields=tuple(t["fields"]), bias=int(t.get("bias", term_biases.get(str(i), 0))))
            for i, t in enumerate(d["terms"])
        )
        if kind == "weighted_sum_argmax":
            return WeightedSumArgmax(
                terms=terms,
                n_classes=d["n_classes"],
                frac_bits=d["frac_bits"],
                confidence=d.get("confidence", "softmax"),
            )
        return SumArgmin(terms=terms, n_classes=d["n_classes"], frac_bits=d["frac_bits"])
    if kind == "sum_threshold":
        return SumThreshold(
            fields=tuple(d["fields"]),
            threshold=int(d.get("threshold", constants.get("threshold", 0))),
            n_trees=d["n_trees"],
            frac_bits=d["frac_bits"],
            path_norm=parse_rational(d["path_norm"]) if "path_norm" in d else None,
            confidence=d.get("confidence", "isolation"),
        )
    raise SchemaError(f"unknown combine kind {kind!r}")


def combine_constants(combine: Combine) -> dict:
    """The data-plane constants a retrain may change (control-plane updatable)."""
    if isinstance(combine, VoteMajority):
        biases = {
            str(i): s.bias for i, s in enumerate(combine.sources) if isinstance(s, SummedPairVote)
        }
        return {"source_biases": biases} if biases else {}
    if isinstance(combine, (WeightedSumArgmax, SumArgmin)):
        return {"term_biases": {str(i): t.bias for i, t in enumerate(combine.terms)}}
    if isinstance(combine, SumThreshold):
        return {"threshold": combine.threshold}
    return {}


def _table_schema_dict(t: TableDef) -> dict:
    return {
        "name": t.name,
        "role": t.role,
        "match_kind": t.match_kind,
        "key_fields": [_key_field_dict(k) for k in t.key_fields],
        "action_fields": [_action_field_dict(a) for a in t.action_fields],
    }


def program_schema_dict(program: PipelineProgram) -> dict:
    return {
        "schema": PROGRAM_SCHEMA_VERSION,
        "feature_specs": [_feature_spec_dict(f) for f in program.feature_specs],
        "tables": [_table_schema_dict(t) for t in program.tables],
        "metadata_fields": [_action_field_dict(a) for a in program.metadata_fields],
        "combine": combine_dict(program.combine, schema_only=True),
        "score_scale": program.score_scale,
        "frac_bits": program.frac_bits,
    }


def compute_shape_hash(program: PipelineProgram) -> str:
    blob = json.dumps(program_schema_dict(program), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def make_program(
    feature_specs: Sequence[FeatureSpec],
    tables: Sequence[TableDef],
    metadata_fields: Sequence[ActionField],
    combine: Combine,
    score_scale: int,
    frac_bits: int,
    tree_stats: TreeStats | None = None,
    notes: Mapping[str, int] | None = None,
) -> PipelineProgram:
    """Assemble a program with canonically sorted entries and a computed shape hash."""
    tables = tuple(replace(t, entries=sort_entries(t.entries)) for t in tables)
    program = PipelineProgram(
        feature_specs=tuple(feature_specs),
        tables=tables,
        metadata_fields=tuple(metadata_fields),
        combine=combine,
        score_scale=score_scale,
        frac_bits=frac_bits,
        tree_stats=tree_stats,
        notes=tuple(sorted((notes or {}).items())),
    )
    return replace(program, shape_hash=compute_shape_hash(program))


# --------------------------------------------------------------------------
# Serialization
# --------------------------------------------------------------------------


def _entry_to_json(entry: Entry, match_kind: str) -> dict:
    if match_kind == "exact":
        key = list(entry.key)
    else:
        key = [list(p) for p in entry.key]
    return {"key": key, "action": list(entry.action)}


def _entry_from_json(d: dict, match_kind: str) -> Entry:
    if match_kind == "exact":
        key = tuple(int(v) for v in d["key"])
    else:
        key = tuple((int(p[0]), int(p[1])) for p in d["key"])
    return Entry(key=key, action=tuple(int(a) for a in d["action"]))


def program_json(program: PipelineProgram) -> str:
    doc = program_schema_dict(program)
    doc["shape_hash"] = program.shape_hash
    if program.tree_stats is not None:
        doc["tree_stats"] = {
            "branches": program.tree_stats.branches,
            "per_feature_branches": list(program.tree_stats.per_feature_branches),
        }
    if program.notes:
        doc["notes"] = dict(program.notes)
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def entries_json(program: PipelineProgram) -> str:
    doc = {
        "schema": PROGRAM_SCHEMA_VERSION,
        "shape_hash": program.shape_hash,
        "tables": {
            t.name: {
                "default_action": list(t.default_action),
                "entries": [_entry_to_json(e, t.match_kind) for e in t.entries],
            }
            for t in program.tables
        },
        "combine_constants": combine_constants(program.combine),
    }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def load_program(program_text: str, entries_text: str) -> PipelineProgram:
    """Rebuild a PipelineProgram from the two emitted artifacts."""
    try:
        pdoc = json.loads(program_text)
        edoc = json.loads(entries_text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"not valid JSON: {exc}") from exc
    if pdoc.get("schema") != PROGRAM_SCHEMA_VERSION or edoc.get("schema") != PROGRAM_SCHEMA_VERSION:
        raise SchemaError(f"program/entries schema must be {PROGRAM_SCHEMA_VERSION}")
    if pdoc.get("shape_hash") != edoc.get("shape_hash"):
        raise SchemaError("entries file does not match the program's shape hash")

    feature_specs = parse_feature_specs(pdoc["feature_specs"])
    tables = []
    table_entries = edoc.get("tables", {})
    for traw in pdoc["tables"]:
        name = traw["name"]
        if name not in table_entries:
            raise SchemaError(f"entries file is missing table {name!r}")
        eraw = table_entries[name]
        match_kind = traw["match_kind"]
        if match_kind not in MATCH_KINDS:
            raise SchemaError(f"table {name}: unknown match kind {match_kind!r}")
        tables.append(
            TableDef(
                name=name,
                role=traw.get("role", ROLE_OTHER),
                match_kind=match_kind,
                key_fields=tuple(
                    KeyField(k["name"], int(k["width"]), k["source"]) for k in traw["key_fields"]
                ),
                action_fields=tuple(
                    ActionField(a["name"], int(a["width"]), bool(a.get("signed", False)))
                    for a in traw["action_fields"]
                ),
                entries=tuple(_entry_from_json(e, match_kind) for e in eraw["entries"]),
                default_action=tuple(int(v) for v in eraw["default_action"]),
            )
        )
    combine = _combine_from_dict(pdoc["combine"], edoc.get("combine_constants"))
    tree_stats = None
    if "tree_stats" in pdoc:
        tree_stats = TreeStats(
            branches=int(pdoc["tree_stats"]["branches"]),
            per_feature_branches=tuple(int(b) for b in pdoc["tree_stats"]["per_feature_branches"]),
        )
    program = make_program(
        feature_specs=feature_specs,
        tables=tables,
        metadata_fields=tuple(
            ActionField(a["name"], int(a["width"]), bool(a.get("signed", False)))
            for a in pdoc["metadata_fields"]
        ),
        combine=combine,
        score_scale=int(pdoc["score_scale"]),
        frac_bits=int(pdoc["frac_bits"]),
        tree_stats=tree_stats,
        notes=pdoc.get("notes"),
    )
    if program.shape_hash != pdoc["shape_hash"]:
        raise SchemaError("recomputed shape hash disagrees with the program file")
    return program
