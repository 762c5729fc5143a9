"""The core compiler: trained models to match-action pipeline programs.

Trees become one range table per tested feature (value -> interval code) and
one ternary classification table keyed on the concatenated codes, so stage
depth never depends on tree depth.  Ensembles share the feature tables: each
shared table's action packs one code per tree, and each tree keeps its own
code-to-decision table.  SVM, NB and K-Means compile to quantized lookup
programs in one of two layouts: a table per feature emitting partial-score
vectors, or a table per class/hyperplane keyed on all features.

Tree and bagging paths involve no quantization anywhere, so the emulated
pipeline is bit-equal to the direct evaluator over the whole feature domain.
"""

from __future__ import annotations

import itertools
import math
from bisect import bisect_left
from dataclasses import dataclass, replace
from fractions import Fraction
from typing import Mapping, Sequence

from .errors import ArgumentError, BinCountError, BinningRequired, CodeWidthError, DomainError, ShapeMismatch
from .model_ir import (
    EnsembleModel,
    FeatureSpec,
    KMeansModel,
    LeafNode,
    NBModel,
    SplitNode,
    SVMModel,
    TreeModel,
    nb_log_score,
)
from .pipeline import expand_range_to_ternary
from .program import (
    ActionField,
    ClassTerm,
    ClassVote,
    CodeLookup,
    Entry,
    KeyField,
    PairVote,
    PipelineProgram,
    SumArgmin,
    SummedPairVote,
    SumThreshold,
    TableDef,
    TreeStats,
    VoteMajority,
    WeightedSumArgmax,
    combine_constants,
    make_program,
    sort_entries,
    ROLE_BIN,
    ROLE_CLASS_SCORE,
    ROLE_CLASSIFICATION,
    ROLE_FEATURE,
    ROLE_HYPERPLANE,
    ROLE_TREE,
)


@dataclass(frozen=True)
class QuantConfig:
    """Fixed-point and sizing knobs for compilation."""

    frac_bits: int = 16
    action_width: int = 32
    bins: int | None = None
    classification_match: str = "ternary"  # or "exact"
    emit_confidence: bool = True
    max_entries_per_table: int = 1 << 20

    def __post_init__(self):
        if self.frac_bits < 1:
            raise ArgumentError("frac_bits must be >= 1")
        if self.action_width < self.frac_bits + 2:
            raise ArgumentError("action_width must be >= frac_bits + 2")
        if self.classification_match not in ("ternary", "exact"):
            raise ArgumentError("classification_match must be 'ternary' or 'exact'")


@dataclass(frozen=True)
class CompiledShape:
    """Frozen table shape so retrained models map to entries-only updates.

    ``feature_indices`` fixes which features get tables (a retrained tree may
    stop testing one), ``code_width`` fixes every code field's width, and
    ``n_trees`` fixes the tree-table count.  Widths fit any tree whose branch
    count stays within the training constraints used to derive the shape.
    """

    feature_indices: tuple[int, ...]
    code_width: int
    n_trees: int = 1


def shape_for_params(
    features: Sequence[FeatureSpec], max_depth: int, max_leaf_nodes: int, n_trees: int = 1
) -> CompiledShape:
    """Derive a frozen shape from training constraints.

    A binary tree under both caps has at most min(2^max_depth, max_leaf_nodes) - 1
    internal nodes, which bounds the distinct thresholds any one feature can
    collect.
    """
    max_branches = min((1 << max_depth), max_leaf_nodes) - 1
    width = max(1, _ceil_log2(max_branches + 1))
    return CompiledShape(
        feature_indices=tuple(f.index for f in features),
        code_width=width,
        n_trees=n_trees,
    )


def _ceil_log2(n: int) -> int:
    return (n - 1).bit_length() if n > 1 else 0


def _class_width(n_classes: int) -> int:
    return max(1, _ceil_log2(n_classes))


# --------------------------------------------------------------------------
# Intervals and codes
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class IntervalSpec:
    """Per-feature sorted threshold lists and the intervals they imply.

    Feature f's intervals are [0..t1], (t1..t2], ..., (t_last..2^w - 1]; the
    code of a value is its interval index, needing ceil(log2(|T|+1)) bits.
    Features never tested carry an empty threshold list and get no table.
    """

    features: tuple[FeatureSpec, ...]
    thresholds: tuple[tuple[int, ...], ...]  # aligned with features

    def code_width(self, index: int) -> int:
        n = len(self.thresholds[index])
        return _ceil_log2(n + 1) if n else 0

    def intervals(self, index: int) -> list[tuple[int, int]]:
        """Inclusive [lo, hi] ranges partitioning the feature's domain."""
        ts = self.thresholds[index]
        top = self.features[index].domain_size - 1
        out = []
        lo = 0
        for t in ts:
            out.append((lo, t))
            lo = t + 1
        out.append((lo, top))
        return out

    def code_of(self, index: int, value: int) -> int:
        return bisect_left(self.thresholds[index], value)

    def used_features(self) -> list[int]:
        return [i for i, ts in enumerate(self.thresholds) if ts]


def extract_intervals(trees: Sequence[TreeModel]) -> IntervalSpec:
    """Union of branch thresholds over all trees, per feature, sorted and deduplicated."""
    if not trees:
        raise ArgumentError("need at least one tree")
    features = trees[0].features
    for t in trees[1:]:
        if t.features != features:
            raise DomainError("trees do not share a feature spec")
    merged: list[set[int]] = [set() for _ in features]
    for tree in trees:
        for f, ts in tree.thresholds_by_feature().items():
            merged[f].update(ts)
    return IntervalSpec(
        features=features, thresholds=tuple(tuple(sorted(s)) for s in merged)
    )


# --------------------------------------------------------------------------
# Quantization and binning
# --------------------------------------------------------------------------


def quantize(value: Fraction | int, frac_bits: int, width: int) -> int:
    """Round-half-to-even of value * 2^frac_bits into a signed `width`-bit field."""
    scaled = Fraction(value) * (1 << frac_bits)
    result = round(scaled)  # Fraction.__round__ is round-half-to-even
    if abs(result) >= 1 << (width - 1):
        raise OverflowError(
            f"{value} needs more than {width} signed bits at {frac_bits} fraction bits"
        )
    return result


def bin_feature(
    domain_width: int, n_bins: int, sample: Sequence[int] | None = None
) -> tuple[int, ...]:
    """Upper-inclusive bin edges producing exactly n_bins non-empty covering ranges.

    Equal-width by default; quantile edges when a sample is supplied.  The
    returned edges exclude the domain maximum (the last bin is implied), so
    they slot directly into an IntervalSpec threshold list.
    """
    domain = 1 << domain_width
    if not (1 <= n_bins <= domain):
        raise BinCountError(f"n_bins {n_bins} outside 1..{domain}")
    if n_bins == 1:
        return ()
    if sample is None:
        edges = [((i + 1) * domain) // n_bins - 1 for i in range(n_bins - 1)]
        return tuple(edges)
    if not sample:
        raise BinCountError("quantile binning needs a non-empty sample")
    ordered = sorted(sample)
    n = len(ordered)
    edges = []
    for i in range(1, n_bins):
        pos = max(0, -(-n * i // n_bins) - 1)  # ceil(n*i/n_bins) - 1
        edges.append(ordered[pos])
    # enforce strictly increasing edges within [0, domain-2] so every bin is
    # a non-empty integer range
    fixed: list[int] = []
    for e in edges:
        e = max(e, (fixed[-1] + 1) if fixed else 0)
        fixed.append(e)
    limit = domain - 2
    for i in range(len(fixed) - 1, -1, -1):
        cap = limit - (len(fixed) - 1 - i)
        if fixed[i] > cap:
            fixed[i] = cap
    for a, b in zip(fixed, fixed[1:]):
        if not (0 <= a < b <= limit):
            raise BinCountError(f"cannot fit {n_bins} non-empty bins in {domain} values")
    if fixed and fixed[0] < 0:
        raise BinCountError(f"cannot fit {n_bins} non-empty bins in {domain} values")
    return tuple(fixed)


def _bin_ranges(spec: FeatureSpec, q: QuantConfig, sample=None) -> list[tuple[int, int]]:
    """Key ranges for one feature table: per-value, or per-bin when configured."""
    if q.bins is None:
        if spec.domain_size > q.max_entries_per_table:
            raise BinningRequired(
                f"feature {spec.name}: 2^{spec.width_bits} entries exceed "
                f"{q.max_entries_per_table}; set a bin count"
            )
        return [(v, v) for v in range(spec.domain_size)]
    edges = bin_feature(spec.width_bits, q.bins, sample)
    ranges = []
    lo = 0
    for e in edges:
        ranges.append((lo, e))
        lo = e + 1
    ranges.append((lo, spec.domain_size - 1))
    return ranges


def _representative(lo: int, hi: int) -> int:
    return (lo + hi) // 2


# --------------------------------------------------------------------------
# Tree compilation
# --------------------------------------------------------------------------


def _leaf_boxes(
    tree: TreeModel, threshold_index: Mapping[int, Mapping[int, int]]
) -> list[tuple[int, dict[int, tuple[int, int]]]]:
    """(leaf node id, per-feature inclusive code range) for every leaf.

    ``threshold_index[f][t]`` is the code-space position of threshold t: going
    left at (f, t) caps the code at that position, going right starts one past
    it.
    """
    out = []

    def walk(node_id: int, box: dict[int, tuple[int, int]]):
        node = tree.nodes[node_id]
        if isinstance(node, LeafNode):
            out.append((node_id, box))
            return
        assert isinstance(node, SplitNode)
        pos = threshold_index[node.feature][node.threshold]
        lo, hi = box.get(node.feature, (0, None))
        left_box = dict(box)
        left_box[node.feature] = (lo, pos if hi is None else min(hi, pos))
        walk(node.left, left_box)
        right_box = dict(box)
        right_lo = max(lo, pos + 1)
        right_box[node.feature] = (right_lo, hi)
        walk(node.right, right_box)

    walk(tree.root, {})
    return out


def _rightmost_leaf(tree: TreeModel) -> int:
    node_id = tree.root
    while isinstance(tree.nodes[node_id], SplitNode):
        node_id = tree.nodes[node_id].right
    return node_id


def _box_ranges(
    box: Mapping[int, tuple[int, int | None]],
    key_order: Sequence[int],
    max_codes: Mapping[int, int],
) -> list[tuple[int, int]] | None:
    """Per-field inclusive code ranges for a leaf, or None for an unreachable leaf."""
    out = []
    for f in key_order:
        lo, hi = box.get(f, (0, None))
        hi = max_codes[f] if hi is None else hi
        if lo > hi:
            return None  # contradictory path; the leaf can never be hit
        out.append((lo, hi))
    return out


def _box_patterns(
    ranges: Sequence[tuple[int, int]],
    key_order: Sequence[int],
    widths: Mapping[int, int],
    max_codes: Mapping[int, int],
) -> list[tuple[tuple[int, int], ...]]:
    """Cross product of per-field prefix covers for one leaf's code box.

    Unconstrained fields (and fields constrained to their full code range)
    become full don't-care.
    """
    per_field: list[list[tuple[int, int]]] = []
    for f, (lo, hi) in zip(key_order, ranges):
        if lo == 0 and hi == max_codes[f]:
            per_field.append([(0, 0)])  # don't-care
        else:
            per_field.append(expand_range_to_ternary(lo, hi, max(widths[f], 1)))
    return [tuple(combo) for combo in itertools.product(*per_field)]


def _decision_table(
    tree: TreeModel,
    local_spec: IntervalSpec,
    key_order: Sequence[int],
    widths: Mapping[int, int],
    name: str,
    role: str,
    key_source: Mapping[int, str],
    action_of_leaf,
    action_fields: tuple[ActionField, ...],
    q: QuantConfig,
) -> TableDef:
    """Code-tuple -> leaf decision table for one tree (classification or tree table).

    The leaf on the all-right path becomes the default action and emits no
    entries; remaining leaves' patterns are pairwise disjoint and, with the
    default, cover the whole code space.
    """
    threshold_index = {
        f: {t: i for i, t in enumerate(local_spec.thresholds[f])}
        for f in range(len(local_spec.features))
    }
    max_codes = {f: len(local_spec.thresholds[f]) for f in key_order}
    default_leaf = _rightmost_leaf(tree)
    entries: list[Entry] = []
    for leaf_id, box in _leaf_boxes(tree, threshold_index):
        if leaf_id == default_leaf:
            continue
        ranges = _box_ranges(box, key_order, max_codes)
        if ranges is None:
            continue
        action = action_of_leaf(tree.nodes[leaf_id])
        if q.classification_match == "ternary":
            for pattern in _box_patterns(ranges, key_order, widths, max_codes):
                entries.append(Entry(key=pattern, action=action))
        else:
            for codes in itertools.product(*(range(lo, hi + 1) for lo, hi in ranges)):
                entries.append(Entry(key=codes, action=action))
    return TableDef(
        name=name,
        role=role,
        match_kind=q.classification_match,
        key_fields=tuple(
            KeyField(name=key_source[f], width=max(widths[f], 1), source=f"meta:{key_source[f]}")
            for f in key_order
        ),
        action_fields=action_fields,
        entries=sort_entries(entries),
        default_action=action_of_leaf(tree.nodes[default_leaf]),
    )


def compile_tree(
    model: TreeModel, q: QuantConfig = QuantConfig(), shape: CompiledShape | None = None
) -> PipelineProgram:
    """Single tree: range feature tables plus one ternary classification table.

    The program always has exactly two dependency layers, whatever the tree
    depth.
    """
    ispec = extract_intervals([model])
    if shape is None:
        used = ispec.used_features()
        widths = {f: ispec.code_width(f) for f in used}
    else:
        used = [f for f in shape.feature_indices]
        widths = {f: shape.code_width for f in used}
        for f in used:
            if ispec.code_width(f) > shape.code_width:
                raise CodeWidthError(
                    f"feature {model.features[f].name}: fitted code width "
                    f"{ispec.code_width(f)} exceeds reserved {shape.code_width}"
                )

    code_field = {f: f"code_{model.features[f].name}" for f in used}
    tables = []
    meta: list[ActionField] = []
    for f in used:
        spec = model.features[f]
        field = ActionField(name=code_field[f], width=max(widths[f], 1))
        meta.append(field)
        tables.append(
            TableDef(
                name=f"feat_{spec.name}",
                role=ROLE_FEATURE,
                match_kind="range",
                key_fields=(KeyField(spec.name, spec.width_bits, f"feature:{spec.name}"),),
                action_fields=(field,),
                entries=tuple(
                    Entry(key=((lo, hi),), action=(code,))
                    for code, (lo, hi) in enumerate(ispec.intervals(f))
                ),
                default_action=(0,),
            )
        )

    class_field = ActionField(name="class", width=_class_width(model.n_classes))
    tables.append(
        _decision_table(
            tree=model,
            local_spec=ispec,
            key_order=used,
            widths=widths,
            name="classify",
            role=ROLE_CLASSIFICATION,
            key_source=code_field,
            action_of_leaf=lambda leaf: (leaf.class_id,),
            action_fields=(class_field,),
            q=q,
        )
    )
    meta.append(class_field)

    branch_counts = {}
    for node in model.split_nodes():
        branch_counts[node.feature] = branch_counts.get(node.feature, 0) + 1
    stats = TreeStats(
        branches=model.n_branches(),
        per_feature_branches=tuple(branch_counts[f] for f in sorted(branch_counts)),
    ) if branch_counts else None

    return make_program(
        feature_specs=model.features,
        tables=tables,
        metadata_fields=meta,
        combine=CodeLookup(class_field="class", n_classes=model.n_classes),
        score_scale=1,
        frac_bits=q.frac_bits,
        tree_stats=stats,
        notes={"required_key_bits": sum(max(widths[f], 1) for f in used)},
    )


# --------------------------------------------------------------------------
# Ensemble compilation
# --------------------------------------------------------------------------


def compile_ensemble(
    model: EnsembleModel, q: QuantConfig = QuantConfig(), shape: CompiledShape | None = None
) -> PipelineProgram:
    """Shared feature tables plus one decision table per tree.

    Feature-table count equals the number of distinct tested features,
    independent of tree count; each shared table's action carries one local
    code per tree.
    """
    if shape is not None and shape.n_trees != len(model.trees):
        raise ShapeMismatch(
            f"shape reserves {shape.n_trees} trees, model has {len(model.trees)}"
        )
    global_spec = extract_intervals(model.trees)
    local_specs = []
    for tree in model.trees:
        by_feature = tree.thresholds_by_feature()
        local_specs.append(
            IntervalSpec(
                features=model.features,
                thresholds=tuple(
                    tuple(by_feature.get(f, ())) for f in range(len(model.features))
                ),
            )
        )

    if shape is None:
        used = global_spec.used_features()
        width_of = lambda t, f: local_specs[t].code_width(f)
    else:
        used = list(shape.feature_indices)
        width_of = lambda t, f: shape.code_width
        for t, ls in enumerate(local_specs):
            for f in used:
                if ls.code_width(f) > shape.code_width:
                    raise CodeWidthError(
                        f"tree {t} feature {model.features[f].name}: fitted code width "
                        f"{ls.code_width(f)} exceeds reserved {shape.code_width}"
                    )

    def trees_using(f: int) -> list[int]:
        if shape is not None:
            return list(range(len(model.trees)))
        return [t for t, ls in enumerate(local_specs) if ls.thresholds[f]]

    tables = []
    meta: list[ActionField] = []
    code_field = {}
    for f in used:
        spec = model.features[f]
        users = trees_using(f)
        if not users:
            continue
        packed = sum(max(width_of(t, f), 1) for t in users)
        if packed > q.action_width:
            raise CodeWidthError(
                f"feature {spec.name}: packed codes need {packed} bits "
                f"> action width {q.action_width}"
            )
        fields = []
        for t in users:
            name = f"code_t{t}_{spec.name}"
            code_field[(t, f)] = name
            fields.append(ActionField(name=name, width=max(width_of(t, f), 1)))
        meta.extend(fields)
        entries = []
        for lo, hi in global_spec.intervals(f):
            action = tuple(local_specs[t].code_of(f, lo) for t in users)
            entries.append(Entry(key=((lo, hi),), action=action))
        tables.append(
            TableDef(
                name=f"feat_{spec.name}",
                role=ROLE_FEATURE,
                match_kind="range",
                key_fields=(KeyField(spec.name, spec.width_bits, f"feature:{spec.name}"),),
                action_fields=tuple(fields),
                entries=tuple(entries),
                default_action=tuple(0 for _ in fields),
            )
        )

    mode = model.mode
    scale = 1 << q.frac_bits
    acc_bound = 0
    combine = None
    for t, tree in enumerate(model.trees):
        if shape is None:
            key_order = [f for f in used if local_specs[t].thresholds[f]]
        else:
            key_order = list(used)
        widths = {f: width_of(t, f) for f in key_order}
        if mode == "bagging":
            fields = (ActionField(name=f"vote_t{t}", width=_class_width(model.n_classes)),)
            action_of_leaf = lambda leaf: (leaf.class_id,)
        elif mode == "boosting":
            fields = tuple(
                ActionField(name=f"score_t{t}_c{y}", width=q.action_width, signed=True)
                for y in range(model.n_classes)
            )
            action_of_leaf = lambda leaf: tuple(
                quantize(model.weight_scale * leaf.weight, q.frac_bits, q.action_width)
                if y == leaf.class_id
                else 0
                for y in range(model.n_classes)
            )
        else:  # isolation
            fields = (ActionField(name=f"depth_t{t}", width=16),)
            action_of_leaf = lambda leaf: (leaf.depth,)
        meta.extend(fields)
        tables.append(
            _decision_table(
                tree=tree,
                local_spec=local_specs[t],
                key_order=key_order,
                widths=widths,
                name=f"tree_{t}",
                role=ROLE_TREE,
                key_source={f: code_field[(t, f)] for f in key_order},
                action_of_leaf=action_of_leaf,
                action_fields=fields,
                q=q,
            )
        )

    n_trees = len(model.trees)
    if mode == "bagging":
        combine = VoteMajority(
            sources=tuple(ClassVote(field=f"vote_t{t}") for t in range(n_trees)),
            n_classes=model.n_classes,
            frac_bits=q.frac_bits,
            confidence="vote_fraction" if q.emit_confidence else "none",
        )
        score_scale = 1
        acc_bound = n_trees
    elif mode == "boosting":
        bias = model.bias or tuple(Fraction(0) for _ in range(model.n_classes))
        terms = []
        for y in range(model.n_classes):
            bias_q = quantize(bias[y], q.frac_bits, q.action_width)
            terms.append(
                ClassTerm(
                    fields=tuple(f"score_t{t}_c{y}" for t in range(n_trees)),
                    bias=bias_q,
                )
            )
        combine = WeightedSumArgmax(
            terms=tuple(terms),
            n_classes=model.n_classes,
            frac_bits=q.frac_bits,
            confidence="softmax" if q.emit_confidence else "none",
        )
        score_scale = scale
        acc_bound = max(
            abs(term.bias)
            + sum(
                _max_abs_action(tbl, f"score_t{t}_c{y}")
                for t, tbl in enumerate(tb for tb in tables if tb.role == ROLE_TREE)
            )
            for y, term in enumerate(terms)
        )
    else:
        assert model.depth_threshold is not None
        combine = SumThreshold(
            fields=tuple(f"depth_t{t}" for t in range(n_trees)),
            threshold=model.depth_threshold,
            n_trees=n_trees,
            frac_bits=q.frac_bits,
            path_norm=model.expected_path_norm,
            confidence="isolation" if q.emit_confidence else "none",
        )
        score_scale = 1
        acc_bound = sum(
            _max_abs_action(tbl, f"depth_t{t}")
            for t, tbl in enumerate(tb for tb in tables if tb.role == ROLE_TREE)
        ) + abs(model.depth_threshold)

    return make_program(
        feature_specs=model.features,
        tables=tables,
        metadata_fields=meta,
        combine=combine,
        score_scale=score_scale,
        frac_bits=q.frac_bits,
        notes={"acc_width": max(acc_bound, 1).bit_length() + 1},
    )


def _max_abs_action(table: TableDef, field_name: str) -> int:
    idx = None
    for i, a in enumerate(table.action_fields):
        if a.name == field_name:
            idx = i
            break
    if idx is None:
        return 0
    values = [abs(e.action[idx]) for e in table.entries]
    values.append(abs(table.default_action[idx]))
    return max(values)


# --------------------------------------------------------------------------
# Classical models
# --------------------------------------------------------------------------


def _full_domain_key_tables_guard(features: Sequence[FeatureSpec], q: QuantConfig) -> None:
    total = 1
    for f in features:
        total *= f.domain_size
    if q.bins is None and total > q.max_entries_per_table:
        raise BinningRequired(
            f"per-class tables need {total} entries; set a bin count"
        )


def _per_feature_tables(
    features: Sequence[FeatureSpec],
    q: QuantConfig,
    field_namer,
    value_fn,
    role: str = ROLE_FEATURE,
) -> tuple[list[TableDef], list[ActionField]]:
    """One table per feature mapping (possibly binned) value -> score vector."""
    tables = []
    meta = []
    for spec in features:
        fields = tuple(
            ActionField(name=name, width=q.action_width, signed=True)
            for name in field_namer(spec)
        )
        meta.extend(fields)
        entries = []
        for lo, hi in _bin_ranges(spec, q):
            rep = _representative(lo, hi)
            entries.append(Entry(key=((lo, hi),), action=value_fn(spec, rep)))
        tables.append(
            TableDef(
                name=f"feat_{spec.name}",
                role=role,
                match_kind="range",
                key_fields=(KeyField(spec.name, spec.width_bits, f"feature:{spec.name}"),),
                action_fields=fields,
                entries=tuple(entries),
                default_action=tuple(0 for _ in fields),
            )
        )
    return tables, meta


def _per_class_key(combo, q: QuantConfig) -> tuple[int, ...]:
    """Exact key for a per-class table row: raw values, or bin codes when binned."""
    if q.bins is None:
        return tuple(lo for _, (lo, _) in combo)
    return tuple(idx for idx, _ in combo)


def _per_class_key_layout(
    features: Sequence[FeatureSpec], q: QuantConfig
) -> tuple[list[TableDef], list[ActionField], list[KeyField], list[list[tuple[int, int]]]]:
    """Key fields plus optional bin layer for table-per-class compilations.

    Without binning the class tables key directly on the raw features; with
    binning a range table per feature first maps values to bin codes.
    """
    if q.bins is None:
        _full_domain_key_tables_guard(features, q)
        keys = [KeyField(f.name, f.width_bits, f"feature:{f.name}") for f in features]
        ranges = [[(v, v) for v in range(f.domain_size)] for f in features]
        return [], [], keys, ranges
    tables = []
    meta = []
    keys = []
    ranges = []
    total = 1
    for spec in features:
        bins = _bin_ranges(spec, q)
        total *= len(bins)
        if total > q.max_entries_per_table:
            raise BinningRequired(
                f"per-class tables still need more than {q.max_entries_per_table} "
                "entries after binning; lower the bin count"
            )
        width = max(1, _ceil_log2(len(bins)))
        field = ActionField(name=f"bin_{spec.name}", width=width)
        meta.append(field)
        keys.append(KeyField(field.name, width, f"meta:{field.name}"))
        tables.append(
            TableDef(
                name=f"bin_{spec.name}",
                role=ROLE_BIN,
                match_kind="range",
                key_fields=(KeyField(spec.name, spec.width_bits, f"feature:{spec.name}"),),
                action_fields=(field,),
                entries=tuple(
                    Entry(key=((lo, hi),), action=(i,)) for i, (lo, hi) in enumerate(bins)
                ),
                default_action=(0,),
            )
        )
        ranges.append(bins)
    return tables, meta, keys, ranges


def compile_svm(
    model: SVMModel, strategy: str = "per_feature", q: QuantConfig = QuantConfig()
) -> PipelineProgram:
    """SVM as summed per-feature product vectors, or one exact table per hyperplane."""
    if strategy not in ("per_feature", "per_hyperplane"):
        raise ArgumentError(f"unknown SVM strategy {strategy!r}")
    m = len(model.hyperplanes)
    scale = 1 << q.frac_bits

    if strategy == "per_feature":
        def namer(spec):
            i = spec.index
            return [f"hp{j}_f{i}" for j in range(m)]

        def values(spec, rep):
            return tuple(
                quantize(h.coefficients[spec.index] * rep, q.frac_bits, q.action_width)
                for h in model.hyperplanes
            )

        tables, meta = _per_feature_tables(model.features, q, namer, values)
        sources = []
        acc_bound = 1
        for j, h in enumerate(model.hyperplanes):
            bias = quantize(h.intercept, q.frac_bits, q.action_width)
            fields = tuple(f"hp{j}_f{i}" for i in range(len(model.features)))
            sources.append(SummedPairVote(fields=fields, bias=bias, pair=h.class_pair))
            bound = abs(bias) + sum(
                _max_abs_action(t, name) for t, name in zip(tables, fields)
            )
            acc_bound = max(acc_bound, bound)
        combine = VoteMajority(
            sources=tuple(sources),
            n_classes=model.n_classes,
            frac_bits=q.frac_bits,
            confidence="vote_fraction" if q.emit_confidence else "none",
        )
        return make_program(
            feature_specs=model.features,
            tables=tables,
            metadata_fields=meta,
            combine=combine,
            score_scale=1,  # final scores are votes; hyperplane sums are 2^q-scaled
            frac_bits=q.frac_bits,
            notes={"acc_width": acc_bound.bit_length() + 1},
        )

    # per_hyperplane: exact tables keyed on every feature, 1-bit vote out
    bin_tables, meta, keys, ranges = _per_class_key_layout(model.features, q)
    tables = list(bin_tables)
    sources = []
    for j, h in enumerate(model.hyperplanes):
        field = ActionField(name=f"vote_hp{j}", width=1)
        meta.append(field)
        entries = []
        for combo in itertools.product(*(list(enumerate(r)) for r in ranges)):
            reps = [_representative(lo, hi) for _, (lo, hi) in combo]
            value = sum(c * r for c, r in zip(h.coefficients, reps)) + h.intercept
            bit = 1 if value >= 0 else 0
            key = _per_class_key(combo, q)
            entries.append(Entry(key=key, action=(bit,)))
        tables.append(
            TableDef(
                name=f"hp_{j}",
                role=ROLE_HYPERPLANE,
                match_kind="exact",
                key_fields=tuple(keys),
                action_fields=(field,),
                entries=sort_entries(entries),
                default_action=(0,),
            )
        )
        sources.append(PairVote(bit_field=field.name, pair=h.class_pair))
    combine = VoteMajority(
        sources=tuple(sources),
        n_classes=model.n_classes,
        frac_bits=q.frac_bits,
        confidence="vote_fraction" if q.emit_confidence else "none",
    )
    return make_program(
        feature_specs=model.features,
        tables=tables,
        metadata_fields=meta,
        combine=combine,
        score_scale=1,
        frac_bits=q.frac_bits,
        notes={"required_key_bits": sum(k.width for k in keys)},
    )


def compile_nb(
    model: NBModel, strategy: str = "per_feature", q: QuantConfig = QuantConfig()
) -> PipelineProgram:
    """Gaussian NB in quantized log space: summed per-feature vectors or a table per class."""
    if strategy not in ("per_feature", "per_class"):
        raise ArgumentError(f"unknown NB strategy {strategy!r}")
    k = model.n_classes

    def log_likelihood(y: int, i: int, v: int) -> float:
        var = float(model.variances[y][i])
        diff = float(Fraction(v) - model.means[y][i])
        return -0.5 * math.log(2.0 * math.pi * var) - (diff * diff) / (2.0 * var)

    if strategy == "per_feature":
        def namer(spec):
            return [f"nbs_f{spec.index}_c{y}" for y in range(k)]

        def values(spec, rep):
            return tuple(
                quantize(Fraction(log_likelihood(y, spec.index, rep)), q.frac_bits, q.action_width)
                for y in range(k)
            )

        tables, meta = _per_feature_tables(model.features, q, namer, values)
        terms = []
        acc_bound = 1
        for y in range(k):
            prior_q = quantize(
                Fraction(math.log(float(model.priors[y]))), q.frac_bits, q.action_width
            )
            fields = tuple(f"nbs_f{i}_c{y}" for i in range(len(model.features)))
            terms.append(ClassTerm(fields=fields, bias=prior_q))
            acc_bound = max(
                acc_bound,
                abs(prior_q)
                + sum(_max_abs_action(t, name) for t, name in zip(tables, fields)),
            )
        combine = WeightedSumArgmax(
            terms=tuple(terms),
            n_classes=k,
            frac_bits=q.frac_bits,
            confidence="softmax" if q.emit_confidence else "none",
        )
        return make_program(
            feature_specs=model.features,
            tables=tables,
            metadata_fields=meta,
            combine=combine,
            score_scale=1 << q.frac_bits,
            frac_bits=q.frac_bits,
            notes={"acc_width": acc_bound.bit_length() + 1},
        )

    # per_class: the joint log score is quantized once, after the exact sum
    bin_tables, meta, keys, ranges = _per_class_key_layout(model.features, q)
    tables = list(bin_tables)
    terms = []
    for y in range(k):
        field = ActionField(name=f"nbj_c{y}", width=q.action_width, signed=True)
        meta.append(field)
        entries = []
        for combo in itertools.product(*(list(enumerate(r)) for r in ranges)):
            reps = [_representative(lo, hi) for _, (lo, hi) in combo]
            score = nb_log_score(model, y, reps)
            entries.append(
                Entry(
                    key=_per_class_key(combo, q),
                    action=(quantize(Fraction(score), q.frac_bits, q.action_width),),
                )
            )
        tables.append(
            TableDef(
                name=f"class_{y}",
                role=ROLE_CLASS_SCORE,
                match_kind="exact",
                key_fields=tuple(keys),
                action_fields=(field,),
                entries=sort_entries(entries),
                default_action=(0,),
            )
        )
        terms.append(ClassTerm(fields=(field.name,), bias=0))
    combine = WeightedSumArgmax(
        terms=tuple(terms),
        n_classes=k,
        frac_bits=q.frac_bits,
        confidence="softmax" if q.emit_confidence else "none",
    )
    return make_program(
        feature_specs=model.features,
        tables=tables,
        metadata_fields=meta,
        combine=combine,
        score_scale=1 << q.frac_bits,
        frac_bits=q.frac_bits,
        notes={"required_key_bits": sum(kf.width for kf in keys)},
    )


def compile_kmeans(
    model: KMeansModel, strategy: str = "per_feature", q: QuantConfig = QuantConfig()
) -> PipelineProgram:
    """Nearest centroid via quantized squared distances, summed or per-class."""
    if strategy not in ("per_feature", "per_class"):
        raise ArgumentError(f"unknown K-Means strategy {strategy!r}")
    k = model.n_classes

    if strategy == "per_feature":
        def namer(spec):
            return [f"km_f{spec.index}_c{y}" for y in range(k)]

        def values(spec, rep):
            return tuple(
                quantize((Fraction(rep) - model.centers[y][spec.index]) ** 2, q.frac_bits, q.action_width)
                for y in range(k)
            )

        tables, meta = _per_feature_tables(model.features, q, namer, values)
        terms = []
        acc_bound = 1
        for y in range(k):
            fields = tuple(f"km_f{i}_c{y}" for i in range(len(model.features)))
            terms.append(ClassTerm(fields=fields, bias=0))
            acc_bound = max(
                acc_bound, sum(_max_abs_action(t, name) for t, name in zip(tables, fields))
            )
        combine = SumArgmin(terms=tuple(terms), n_classes=k, frac_bits=q.frac_bits)
        return make_program(
            feature_specs=model.features,
            tables=tables,
            metadata_fields=meta,
            combine=combine,
            score_scale=1 << q.frac_bits,
            frac_bits=q.frac_bits,
            notes={"acc_width": acc_bound.bit_length() + 1},
        )

    bin_tables, meta, keys, ranges = _per_class_key_layout(model.features, q)
    tables = list(bin_tables)
    terms = []
    for y in range(k):
        field = ActionField(name=f"kmd_c{y}", width=q.action_width, signed=True)
        meta.append(field)
        entries = []
        for combo in itertools.product(*(list(enumerate(r)) for r in ranges)):
            reps = [_representative(lo, hi) for _, (lo, hi) in combo]
            dist = sum(
                (Fraction(r) - c) ** 2 for r, c in zip(reps, model.centers[y])
            )
            entries.append(
                Entry(key=_per_class_key(combo, q), action=(quantize(dist, q.frac_bits, q.action_width),))
            )
        tables.append(
            TableDef(
                name=f"class_{y}",
                role=ROLE_CLASS_SCORE,
                match_kind="exact",
                key_fields=tuple(keys),
                action_fields=(field,),
                entries=sort_entries(entries),
                default_action=(0,),
            )
        )
        terms.append(ClassTerm(fields=(field.name,), bias=0))
    combine = SumArgmin(terms=tuple(terms), n_classes=k, frac_bits=q.frac_bits)
    return make_program(
        feature_specs=model.features,
        tables=tables,
        metadata_fields=meta,
        combine=combine,
        score_scale=1 << q.frac_bits,
        frac_bits=q.frac_bits,
        notes={"required_key_bits": sum(kf.width for kf in keys)},
    )


# --------------------------------------------------------------------------
# Entries-only diffs
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class TableDiff:
    entries_added: tuple[Entry, ...]
    entries_removed: tuple[tuple, ...]  # keys only
    entries_modified: tuple[Entry, ...]  # new versions
    default_action: tuple[int, ...] | None  # new default when changed

    @property
    def empty(self) -> bool:
        return not (
            self.entries_added
            or self.entries_removed
            or self.entries_modified
            or self.default_action is not None
        )


@dataclass(frozen=True)
class EntryDiff:
    shape_hash: str
    tables: tuple[tuple[str, TableDiff], ...]
    constants: dict | None  # new combine constants when changed

    @property
    def empty(self) -> bool:
        return all(d.empty for _, d in self.tables) and self.constants is None

    def change_count(self) -> int:
        n = 0
        for _, d in self.tables:
            n += len(d.entries_added) + len(d.entries_removed) + len(d.entries_modified)
            n += 1 if d.default_action is not None else 0
        return n + (1 if self.constants is not None else 0)


def diff_entries(old: PipelineProgram, new: PipelineProgram) -> EntryDiff:
    """Per-table set difference of entries between two same-shape programs."""
    if old.shape_hash != new.shape_hash:
        raise ShapeMismatch(
            "programs have different table schemas; a redeploy is required"
        )
    diffs = []
    for old_t, new_t in zip(old.tables, new.tables):
        old_by_key = {e.key: e for e in old_t.entries}
        new_by_key = {e.key: e for e in new_t.entries}
        added = tuple(e for k, e in sorted(new_by_key.items()) if k not in old_by_key)
        removed = tuple(k for k in sorted(old_by_key) if k not in new_by_key)
        modified = tuple(
            e
            for k, e in sorted(new_by_key.items())
            if k in old_by_key and old_by_key[k].action != e.action
        )
        default = new_t.default_action if old_t.default_action != new_t.default_action else None
        diffs.append((old_t.name, TableDiff(added, removed, modified, default)))
    old_const = combine_constants(old.combine)
    new_const = combine_constants(new.combine)
    constants = new_const if old_const != new_const else None
    return EntryDiff(shape_hash=old.shape_hash, tables=tuple(diffs), constants=constants)


def apply_entry_diff(old: PipelineProgram, diff: EntryDiff) -> PipelineProgram:
    """Reconstruct the new program by applying a diff to the old entries."""
    if old.shape_hash != diff.shape_hash:
        raise ShapeMismatch("diff was computed against a different program shape")
    by_name = dict(diff.tables)
    tables = []
    for t in old.tables:
        d = by_name.get(t.name)
        if d is None or d.empty:
            tables.append(t)
            continue
        entries = {e.key: e for e in t.entries}
        for k in d.entries_removed:
            entries.pop(k, None)
        for e in d.entries_modified:
            entries[e.key] = e
        for e in d.entries_added:
            entries[e.key] = e
        tables.append(
            replace(
                t,
                entries=sort_entries(entries.values()),
                default_action=d.default_action if d.default_action is not None else t.default_action,
            )
        )
    combine = old.combine
    if diff.constants is not None:
        combine = _apply_constants(combine, diff.constants)
    return make_program(
        feature_specs=old.feature_specs,
        tables=tables,
        metadata_fields=old.metadata_fields,
        combine=combine,
        score_scale=old.score_scale,
        frac_bits=old.frac_bits,
        tree_stats=old.tree_stats,
        notes=dict(old.notes),
    )


def _apply_constants(combine, constants: dict):
    if isinstance(combine, VoteMajority):
        biases = constants.get("source_biases", {})
        sources = tuple(
            replace(s, bias=int(biases.get(str(i), s.bias)))
            if isinstance(s, SummedPairVote)
            else s
            for i, s in enumerate(combine.sources)
        )
        return replace(combine, sources=sources)
    if isinstance(combine, (WeightedSumArgmax, SumArgmin)):
        biases = constants.get("term_biases", {})
        terms = tuple(
            replace(t, bias=int(biases.get(str(i), t.bias)))
            for i, t in enumerate(combine.terms)
        )
        return replace(combine, terms=terms)
    if isinstance(combine, SumThreshold):
        return replace(combine, threshold=int(constants.get("threshold", combine.threshold)))
    return combine
