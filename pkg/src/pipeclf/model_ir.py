"""Neutral in-memory representation of trained models plus the direct evaluator.

The direct evaluator is the ground truth every compiled pipeline is checked
against.  All algebraic scores (tree paths, votes, margins, squared
distances) are computed with exact rationals; only inherently transcendental
quantities (Gaussian log densities, logistic / softmax confidences) go
through double precision, and those floats are stored as their exact binary
rational so downstream comparisons stay deterministic.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence, Union

from .errors import DomainError, FeatureError, SchemaError
from .rational import format_rational, parse_rational

SCHEMA_VERSION = 1

MODEL_TYPES = ("tree", "forest", "xgboost", "isolation_forest", "svm", "nb", "kmeans")


# --------------------------------------------------------------------------
# Domain types
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class FeatureSpec:
    """One input feature: a w-bit unsigned integer, optionally a scaled fixed-point."""

    name: str
    index: int
    width_bits: int
    kind: str = "integer"  # "integer" or "fixed_point"
    scale: Fraction | None = None  # only for fixed_point

    @property
    def domain_size(self) -> int:
        return 1 << self.width_bits


@dataclass(frozen=True)
class SplitNode:
    feature: int
    threshold: int  # x[feature] <= threshold goes left
    left: int
    right: int


@dataclass(frozen=True)
class LeafNode:
    class_id: int
    weight: Fraction = Fraction(0)  # boosting contribution
    depth: int = 0  # isolation path length


Node = Union[SplitNode, LeafNode]


@dataclass(frozen=True)
class TreeModel:
    features: tuple[FeatureSpec, ...]
    n_classes: int
    nodes: tuple[Node, ...]
    root: int = 0

    def leaf_for(self, x: Sequence[int]) -> LeafNode:
        node = self.nodes[self.root]
        guard = len(self.nodes) + 1
        while isinstance(node, SplitNode):
            guard -= 1
            if guard < 0:
                raise DomainError("tree traversal did not terminate (cycle)")
            node = self.nodes[node.left if x[node.feature] <= node.threshold else node.right]
        return node

    def split_nodes(self) -> list[SplitNode]:
        return [n for n in self.nodes if isinstance(n, SplitNode)]

    def thresholds_by_feature(self) -> dict[int, list[int]]:
        """Sorted distinct thresholds per tested feature index."""
        out: dict[int, set[int]] = {}
        for n in self.split_nodes():
            out.setdefault(n.feature, set()).add(n.threshold)
        return {f: sorted(ts) for f, ts in out.items()}

    def n_branches(self) -> int:
        return len(self.split_nodes())


@dataclass(frozen=True)
class EnsembleModel:
    features: tuple[FeatureSpec, ...]
    n_classes: int
    trees: tuple[TreeModel, ...]
    mode: str  # "bagging" | "boosting" | "isolation"
    bias: tuple[Fraction, ...] | None = None  # boosting, one per class
    weight_scale: Fraction = Fraction(1)  # boosting leaf-weight multiplier
    depth_threshold: int | None = None  # isolation: anomaly iff summed depth < threshold
    expected_path_norm: Fraction | None = None  # isolation c(n), confidence only


@dataclass(frozen=True)
class Hyperplane:
    coefficients: tuple[Fraction, ...]
    intercept: Fraction
    class_pair: tuple[int, int]  # (a, b) with a < b; value >= 0 votes a


@dataclass(frozen=True)
class SVMModel:
    features: tuple[FeatureSpec, ...]
    n_classes: int
    hyperplanes: tuple[Hyperplane, ...]


@dataclass(frozen=True)
class NBModel:
    """Gaussian Naive Bayes: per class a prior, per (class, feature) mean/variance."""

    features: tuple[FeatureSpec, ...]
    n_classes: int
    priors: tuple[Fraction, ...]
    means: tuple[tuple[Fraction, ...], ...]  # [class][feature]
    variances: tuple[tuple[Fraction, ...], ...]  # [class][feature]


@dataclass(frozen=True)
class KMeansModel:
    features: tuple[FeatureSpec, ...]
    n_classes: int  # k
    centers: tuple[tuple[Fraction, ...], ...]  # [cluster][feature]


Model = Union[TreeModel, EnsembleModel, SVMModel, NBModel, KMeansModel]


def argmax_tiebreak(scores: Sequence) -> int:
    """Index of the maximum; the lowest index wins all ties (global rule)."""
    best = 0
    for i in range(1, len(scores)):
        if scores[i] > scores[best]:
            best = i
    return best


@dataclass(frozen=True)
class Prediction:
    class_id: int
    scores: tuple[Fraction, ...]
    confidence: Fraction

    def __post_init__(self):
        if self.scores and argmax_tiebreak(self.scores) != self.class_id:
            raise DomainError("class_id is not the tie-broken argmax of scores")
        if not (0 <= self.confidence <= 1):
            raise DomainError(f"confidence {self.confidence} outside [0, 1]")


# --------------------------------------------------------------------------
# Validation
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    code: str
    message: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    def add(self, code: str, message: str) -> None:
        self.violations.append(Violation(code, message))

    @property
    def ok(self) -> bool:
        return not self.violations

    def codes(self) -> set[str]:
        return {v.code for v in self.violations}


def _validate_features(features: Sequence[FeatureSpec], report: ValidationReport) -> None:
    indices = [f.index for f in features]
    if sorted(indices) != list(range(len(features))):
        report.add("FEATURE_INDEX_GAP", f"indices {indices} are not contiguous 0..F-1")
    names = [f.name for f in features]
    if len(set(names)) != len(names):
        report.add("FEATURE_NAME_DUP", "duplicate feature names")
    for f in features:
        if not (1 <= f.width_bits <= 32):
            report.add("FEATURE_WIDTH", f"feature {f.name}: width {f.width_bits} outside 1..32")


def _validate_tree(tree: TreeModel, report: ValidationReport, label: str = "tree") -> None:
    n = len(tree.nodes)
    if not (0 <= tree.root < n):
        report.add("TREE_BAD_ROOT", f"{label}: root {tree.root} out of range")
        return
    parents: dict[int, int] = {}
    for i, node in enumerate(tree.nodes):
        if isinstance(node, SplitNode):
            for child in (node.left, node.right):
                if not (0 <= child < n):
                    report.add("TREE_BAD_CHILD", f"{label}: node {i} child {child} out of range")
                    return
                if child in parents:
                    report.add("TREE_MULTI_PARENT", f"{label}: node {child} has two parents")
                parents[child] = i
            if not (0 <= node.feature < len(tree.features)):
                report.add("TREE_FEATURE_RANGE", f"{label}: node {i} tests feature {node.feature}")
            else:
                width = tree.features[node.feature].width_bits
                if not (0 <= node.threshold < (1 << width)):
                    report.add(
                        "TREE_THRESHOLD_RANGE",
                        f"{label}: node {i} threshold {node.threshold} outside feature domain",
                    )
        else:
            if not (0 <= node.class_id < tree.n_classes):
                report.add("TREE_CLASS_RANGE", f"{label}: leaf {i} class {node.class_id}")
    if tree.root in parents:
        report.add("TREE_NOT_ACYCLIC", f"{label}: root has a parent (cycle)")
    # Reachability walk; a cycle or disconnected node shows up here.
    seen: set[int] = set()
    stack = [tree.root]
    while stack:
        i = stack.pop()
        if i in seen:
            report.add("TREE_NOT_ACYCLIC", f"{label}: node {i} reachable twice")
            return
        seen.add(i)
        node = tree.nodes[i]
        if isinstance(node, SplitNode):
            stack.extend((node.left, node.right))
    if len(seen) != n:
        report.add("TREE_UNREACHABLE", f"{label}: {n - len(seen)} unreachable nodes")


def validate_model(model: Model) -> ValidationReport:
    """Collect every invariant violation; an empty report means the model is valid."""
    report = ValidationReport()
    _validate_features(model.features, report)

    if isinstance(model, TreeModel):
        _validate_tree(model, report)
    elif isinstance(model, EnsembleModel):
        if model.mode not in ("bagging", "boosting", "isolation"):
            report.add("ENSEMBLE_MODE", f"unknown mode {model.mode!r}")
        if not model.trees:
            report.add("ENSEMBLE_EMPTY", "ensemble has no trees")
        for t, tree in enumerate(model.trees):
            if tree.features != model.features or tree.n_classes != model.n_classes:
                report.add("ENSEMBLE_MIXED_SPEC", f"tree {t} disagrees on features/classes")
            _validate_tree(tree, report, label=f"tree {t}")
        if model.mode == "boosting":
            if model.bias is None or len(model.bias) != model.n_classes:
                report.add("BOOST_BIAS", "boosting requires one bias per class")
        if model.mode == "isolation":
            if model.depth_threshold is None:
                report.add("ISO_THRESHOLD", "isolation requires a depth threshold")
            if model.n_classes != 2:
                report.add("ISO_CLASSES", "isolation is a 2-class model (normal/anomaly)")
    elif isinstance(model, SVMModel):
        k = model.n_classes
        want = k * (k - 1) // 2
        if len(model.hyperplanes) != want:
            report.add(
                "SVM_PAIR_COUNT",
                f"{len(model.hyperplanes)} hyperplanes, need k(k-1)/2 = {want}",
            )
        pairs = set()
        for h in model.hyperplanes:
            a, b = h.class_pair
            if not (0 <= a < b < k):
                report.add("SVM_PAIR_RANGE", f"bad class pair {h.class_pair}")
            if (a, b) in pairs:
                report.add("SVM_PAIR_DUP", f"pair {h.class_pair} appears twice")
            pairs.add((a, b))
            if len(h.coefficients) != len(model.features):
                report.add("SVM_COEF_COUNT", f"pair {h.class_pair}: wrong coefficient count")
    elif isinstance(model, NBModel):
        if len(model.priors) != model.n_classes:
            report.add("NB_PRIOR_COUNT", "one prior per class required")
        elif abs(sum(model.priors) - 1) > Fraction(1, 10**9):
            report.add("NB_PRIOR_SUM", f"priors sum to {sum(model.priors)}")
        for y, row in enumerate(model.variances):
            for i, var in enumerate(row):
                if var <= 0:
                    report.add("NB_VARIANCE", f"class {y} feature {i}: variance {var} <= 0")
        for name, rows in (("means", model.means), ("variances", model.variances)):
            if len(rows) != model.n_classes or any(len(r) != len(model.features) for r in rows):
                report.add("NB_SHAPE", f"{name} must be n_classes x n_features")
    elif isinstance(model, KMeansModel):
        if model.n_classes < 1 or len(model.centers) != model.n_classes:
            report.add("KMEANS_K", "need k >= 1 centers")
        if len(set(model.centers)) != len(model.centers):
            report.add("KMEANS_DUP_CENTER", "centers are not distinct")
        if any(len(c) != len(model.features) for c in model.centers):
            report.add("KMEANS_SHAPE", "each center needs one coordinate per feature")
    else:
        report.add("MODEL_TYPE", f"unknown model class {type(model).__name__}")
    return report


# --------------------------------------------------------------------------
# Direct evaluation (the oracle)
# --------------------------------------------------------------------------


def check_vector(features: Sequence[FeatureSpec], x: Sequence[int]) -> None:
    values = getattr(x, "values", x)
    if len(values) != len(features):
        raise FeatureError(f"expected {len(features)} feature values, got {len(values)}")
    for spec, v in zip(features, values):
        if not (0 <= v < spec.domain_size):
            raise FeatureError(f"feature {spec.name}: value {v} outside [0, 2^{spec.width_bits})")


def vector_values(x) -> Sequence[int]:
    return getattr(x, "values", x)


def _logistic(margin: float) -> Fraction:
    if margin >= 0:
        p = 1.0 / (1.0 + math.exp(-margin))
    else:
        e = math.exp(margin)
        p = e / (1.0 + e)
    return Fraction(p)


def _softmax_confidence(scores: Sequence[Fraction], winner: int) -> Fraction:
    floats = [float(s) for s in scores]
    top = max(floats)
    exps = [math.exp(f - top) for f in floats]
    return Fraction(exps[winner] / sum(exps))


def evaluate_direct(model: Model, x: Sequence[int]) -> Prediction:
    """Full-precision evaluation; see the module docstring for what is exact."""
    check_vector(model.features, x)
    values = vector_values(x)

    if isinstance(model, TreeModel):
        leaf = model.leaf_for(values)
        scores = tuple(Fraction(1 if y == leaf.class_id else 0) for y in range(model.n_classes))
        return Prediction(leaf.class_id, scores, Fraction(1))

    if isinstance(model, EnsembleModel):
        return _evaluate_ensemble(model, values)

    if isinstance(model, SVMModel):
        votes = [0] * model.n_classes
        for h in model.hyperplanes:
            value = sum(c * v for c, v in zip(h.coefficients, values)) + h.intercept
            votes[h.class_pair[0] if value >= 0 else h.class_pair[1]] += 1
        winner = argmax_tiebreak(votes)
        m = len(model.hyperplanes)
        return Prediction(
            winner,
            tuple(Fraction(v) for v in votes),
            Fraction(votes[winner], m) if m else Fraction(1),
        )

    if isinstance(model, NBModel):
        scores = tuple(
            Fraction(nb_log_score(model, y, values)) for y in range(model.n_classes)
        )
        winner = argmax_tiebreak(scores)
        return Prediction(winner, scores, _softmax_confidence(scores, winner))

    if isinstance(model, KMeansModel):
        dists = [
            sum((Fraction(v) - c) ** 2 for v, c in zip(values, center))
            for center in model.centers
        ]
        scores = tuple(-d for d in dists)
        return Prediction(argmax_tiebreak(scores), scores, Fraction(1))

    raise DomainError(f"cannot evaluate model of type {type(model).__name__}")


def nb_log_score(model: NBModel, y: int, values: Sequence[int]) -> float:
    """log P(y) + sum_i log P(x_i | y), Gaussian likelihoods, double precision."""
    score = math.log(float(model.priors[y]))
    for i, v in enumerate(values):
        var = float(model.variances[y][i])
        diff = float(Fraction(v) - model.means[y][i])
        score += -0.5 * math.log(2.0 * math.pi * var) - (diff * diff) / (2.0 * var)
    return score


def nb_likelihood_product(model: NBModel, y: int, values: Sequence[int]) -> float:
    """P(y) * prod_i P(x_i | y) evaluated directly (underflow-prone; for cross-checks)."""
    p = float(model.priors[y])
    for i, v in enumerate(values):
        var = float(model.variances[y][i])
        diff = float(Fraction(v) - model.means[y][i])
        p *= math.exp(-(diff * diff) / (2.0 * var)) / math.sqrt(2.0 * math.pi * var)
    return p


def _evaluate_ensemble(model: EnsembleModel, values: Sequence[int]) -> Prediction:
    if model.mode == "bagging":
        votes = [0] * model.n_classes
        for tree in model.trees:
            votes[tree.leaf_for(values).class_id] += 1
        winner = argmax_tiebreak(votes)
        return Prediction(
            winner,
            tuple(Fraction(v) for v in votes),
            Fraction(votes[winner], len(model.trees)),
        )

    if model.mode == "boosting":
        margins = list(model.bias or [Fraction(0)] * model.n_classes)
        for tree in model.trees:
            leaf = tree.leaf_for(values)
            margins[leaf.class_id] += model.weight_scale * leaf.weight
        winner = argmax_tiebreak(margins)
        if model.n_classes == 2:
            other = 1 - winner
            conf = _logistic(float(margins[winner] - margins[other]))
        else:
            conf = _softmax_confidence(margins, winner)
        return Prediction(winner, tuple(margins), conf)

    if model.mode == "isolation":
        total = sum(tree.leaf_for(values).depth for tree in model.trees)
        thr = model.depth_threshold
        assert thr is not None
        # scores ordered (normal, anomaly); a depth tie is resolved to normal.
        scores = (Fraction(total - thr), Fraction(thr - total))
        winner = argmax_tiebreak(scores)
        if model.expected_path_norm:
            avg = total / len(model.trees)
            s = 2.0 ** (-avg / float(model.expected_path_norm))
            s = min(max(s, 0.0), 1.0)
            conf = Fraction(s) if winner == 1 else Fraction(1.0 - s)
        else:
            conf = Fraction(1)
        return Prediction(winner, scores, conf)

    raise DomainError(f"unknown ensemble mode {model.mode!r}")


def direct_class(model: Model, values: Sequence[int]) -> int:
    """Class id only, skipping score/confidence construction (hot loops)."""
    if isinstance(model, TreeModel):
        return model.leaf_for(values).class_id
    if isinstance(model, EnsembleModel) and model.mode == "bagging":
        votes = [0] * model.n_classes
        for tree in model.trees:
            votes[tree.leaf_for(values).class_id] += 1
        return argmax_tiebreak(votes)
    return evaluate_direct(model, values).class_id


# --------------------------------------------------------------------------
# Model files
# --------------------------------------------------------------------------


def _require(obj: dict, key: str, ctx: str):
    if key not in obj:
        raise SchemaError(f"{ctx}: missing field {key!r}")
    return obj[key]


def parse_feature_specs(items: Iterable[dict]) -> tuple[FeatureSpec, ...]:
    specs = []
    for item in items:
        kind = item.get("kind", "integer")
        scale = None
        if isinstance(kind, dict):
            scale = parse_rational(_require(kind, "fixed_point", "feature kind"))
            kind = "fixed_point"
        elif kind not in ("integer", "fixed_point"):
            raise SchemaError(f"feature kind {kind!r} not recognized")
        specs.append(
            FeatureSpec(
                name=str(_require(item, "name", "feature")),
                index=int(_require(item, "index", "feature")),
                width_bits=int(_require(item, "width_bits", "feature")),
                kind=kind,
                scale=scale,
            )
        )
    return tuple(sorted(specs, key=lambda s: s.index))


def _feature_spec_dict(spec: FeatureSpec) -> dict:
    out: dict = {"name": spec.name, "index": spec.index, "width_bits": spec.width_bits}
    if spec.kind == "fixed_point":
        out["kind"] = {"fixed_point": format_rational(spec.scale or Fraction(1))}
    return out


def _parse_tree_params(params: dict, features, n_classes: int) -> TreeModel:
    nodes: list[Node] = []
    for i, raw in enumerate(_require(params, "nodes", "tree params")):
        kind = _require(raw, "kind", f"node {i}")
        if kind == "split":
            nodes.append(
                SplitNode(
                    feature=int(_require(raw, "feature", f"node {i}")),
                    threshold=int(_require(raw, "threshold", f"node {i}")),
                    left=int(_require(raw, "left", f"node {i}")),
                    right=int(_require(raw, "right", f"node {i}")),
                )
            )
        elif kind == "leaf":
            nodes.append(
                LeafNode(
                    class_id=int(_require(raw, "class_id", f"node {i}")),
                    weight=parse_rational(raw.get("weight", 0)),
                    depth=int(raw.get("depth", 0)),
                )
            )
        else:
            raise SchemaError(f"node {i}: unknown kind {kind!r}")
    return TreeModel(
        features=features,
        n_classes=n_classes,
        nodes=tuple(nodes),
        root=int(params.get("root", 0)),
    )


def parse_model_file(text: str) -> Model:
    """Parse and validate a model-file JSON document.

    Raises SchemaError for structural problems, DomainError / FeatureError
    when the parsed model violates an invariant.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise SchemaError("top level must be an object")
    if doc.get("schema") != SCHEMA_VERSION:
        raise SchemaError(f"schema must be {SCHEMA_VERSION}")
    model_type = _require(doc, "model_type", "document")
    if model_type not in MODEL_TYPES:
        raise SchemaError(f"model_type {model_type!r} not one of {MODEL_TYPES}")
    features = parse_feature_specs(_require(doc, "features", "document"))
    n_classes = int(_require(doc, "n_classes", "document"))
    params = _require(doc, "params", "document")

    model: Model
    if model_type == "tree":
        model = _parse_tree_params(params, features, n_classes)
    elif model_type in ("forest", "xgboost", "isolation_forest"):
        mode = {"forest": "bagging", "xgboost": "boosting", "isolation_forest": "isolation"}[
            model_type
        ]
        trees = tuple(
            _parse_tree_params(p, features, n_classes)
            for p in _require(params, "trees", "ensemble params")
        )
        bias = None
        if mode == "boosting":
            bias = tuple(parse_rational(b) for b in _require(params, "bias", "boosting params"))
        model = EnsembleModel(
            features=features,
            n_classes=n_classes,
            trees=trees,
            mode=mode,
            bias=bias,
            weight_scale=parse_rational(params.get("weight_scale", 1)),
            depth_threshold=(
                int(_require(params, "depth_threshold", "isolation params"))
                if mode == "isolation"
                else None
            ),
            expected_path_norm=(
                parse_rational(params["expected_path_norm"])
                if params.get("expected_path_norm") is not None
                else None
            ),
        )
    elif model_type == "svm":
        hyperplanes = []
        for raw in _require(params, "hyperplanes", "svm params"):
            pair = _require(raw, "class_pair", "hyperplane")
            hyperplanes.append(
                Hyperplane(
                    coefficients=tuple(
                        parse_rational(c) for c in _require(raw, "coefficients", "hyperplane")
                    ),
                    intercept=parse_rational(_require(raw, "intercept", "hyperplane")),
                    class_pair=(int(pair[0]), int(pair[1])),
                )
            )
        model = SVMModel(features=features, n_classes=n_classes, hyperplanes=tuple(hyperplanes))
    elif model_type == "nb":
        model = NBModel(
            features=features,
            n_classes=n_classes,
            priors=tuple(parse_rational(p) for p in _require(params, "priors", "nb params")),
            means=tuple(
                tuple(parse_rational(m) for m in row)
                for row in _require(params, "means", "nb params")
            ),
            variances=tuple(
                tuple(parse_rational(v) for v in row)
                for row in _require(params, "variances", "nb params")
            ),
        )
    else:  # kmeans
        model = KMeansModel(
            features=features,
            n_classes=n_classes,
            centers=tuple(
                tuple(parse_rational(c) for c in row)
                for row in _require(params, "centers", "kmeans params")
            ),
        )

    report = validate_model(model)
    if not report.ok:
        feature_codes = {"FEATURE_INDEX_GAP", "FEATURE_NAME_DUP", "FEATURE_WIDTH",
                         "TREE_FEATURE_RANGE"}
        exc = FeatureError if report.codes() <= feature_codes else DomainError
        raise exc("; ".join(f"{v.code}: {v.message}" for v in report.violations)) from None
    return model


def model_type_of(model: Model) -> str:
    if isinstance(model, TreeModel):
        return "tree"
    if isinstance(model, EnsembleModel):
        return {"bagging": "forest", "boosting": "xgboost", "isolation": "isolation_forest"}[
            model.mode
        ]
    if isinstance(model, SVMModel):
        return "svm"
    if isinstance(model, NBModel):
        return "nb"
    return "kmeans"


def _tree_params_dict(tree: TreeModel) -> dict:
    nodes = []
    for node in tree.nodes:
        if isinstance(node, SplitNode):
            nodes.append(
                {
                    "kind": "split",
                    "feature": node.feature,
                    "threshold": node.threshold,
                    "left": node.left,
                    "right": node.right,
                }
            )
        else:
            nodes.append(
                {
                    "kind": "leaf",
                    "class_id": node.class_id,
                    "weight": format_rational(node.weight),
                    "depth": node.depth,
                }
            )
    return {"nodes": nodes, "root": tree.root}


def emit_model_file(model: Model) -> str:
    """Serialize a model; parse_model_file(emit_model_file(m)) == m."""
    doc: dict = {
        "schema": SCHEMA_VERSION,
        "model_type": model_type_of(model),
        "features": [_feature_spec_dict(f) for f in model.features],
        "n_classes": model.n_classes,
    }
    if isinstance(model, TreeModel):
        doc["params"] = _tree_params_dict(model)
    elif isinstance(model, EnsembleModel):
        params: dict = {"trees": [_tree_params_dict(t) for t in model.trees]}
        if model.mode == "boosting":
            params["bias"] = [format_rational(b) for b in model.bias or ()]
            params["weight_scale"] = format_rational(model.weight_scale)
        if model.mode == "isolation":
            params["depth_threshold"] = model.depth_threshold
            if model.expected_path_norm is not None:
                params["expected_path_norm"] = format_rational(model.expected_path_norm)
        doc["params"] = params
    elif isinstance(model, SVMModel):
        doc["params"] = {
            "hyperplanes": [
                {
                    "coefficients": [format_rational(c) for c in h.coefficients],
                    "intercept": format_rational(h.intercept),
                    "class_pair": list(h.class_pair),
                }
                for h in model.hyperplanes
            ]
        }
    elif isinstance(model, NBModel):
        doc["params"] = {
            "priors": [format_rational(p) for p in model.priors],
            "means": [[format_rational(m) for m in row] for row in model.means],
            "variances": [[format_rational(v) for v in row] for row in model.variances],
        }
    else:
        doc["params"] = {
            "centers": [[format_rational(c) for c in row] for row in model.centers]
        }
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
