"""Tag configuration sheet: the machine-readable contract between plant
domain knowledge and the steering pipeline.

The sheet declares tags (with kinds, bounds, targets, weights), signed
relations between control tags and the quantities they move, and the
global windowing / data-check knobs every downstream stage reads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

from .errors import (
    ConfigDuplicateError,
    ConfigReferenceError,
    ConfigSchemaError,
    ConfigSyntaxError,
    KindError,
)

DEFAULT_BROKEN_FRACTION_LIMIT = 0.25
DEFAULT_OUTLIER_FENCE_K = 1.5
DEFAULT_OUTLIER_ALERT_FRACTION = 0.05


class TagKind(str, Enum):
    CONTROL = "control"
    CONSTRAINT = "constraint"
    OPTIMIZE = "optimize"
    NORMALIZE = "normalize"


class RelationSign(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


@dataclass(frozen=True)
class TagSpec:
    """One named sensor or set-point series and its declared envelope."""

    name: str
    kind: TagKind
    unit: str = ""
    static_bounds: tuple[float, float] | None = None
    broken_sensor_bounds: tuple[float, float] | None = None
    target: float | None = None
    weight: float | None = None
    max_step: float | None = None
    survival_threshold: float | None = None

    def validate(self) -> None:
        for label, interval in (
            ("static_bounds", self.static_bounds),
            ("broken_sensor_bounds", self.broken_sensor_bounds),
        ):
            if interval is not None and not interval[0] < interval[1]:
                raise ConfigSchemaError(
                    f"tag {self.name!r}: {label} must satisfy lo < hi, got {interval}"
                )
        if self.kind is TagKind.CONSTRAINT and self.static_bounds is None:
            raise ConfigSchemaError(f"constraint tag {self.name!r} requires static_bounds")
        if self.kind is TagKind.CONTROL:
            if self.max_step is None:
                raise ConfigSchemaError(f"control tag {self.name!r} requires max_step")
            if self.max_step <= 0:
                raise ConfigSchemaError(f"control tag {self.name!r}: max_step must be positive")
        if self.kind in (TagKind.OPTIMIZE, TagKind.NORMALIZE):
            if self.weight is None or self.target is None:
                raise ConfigSchemaError(
                    f"{self.kind.value} tag {self.name!r} requires weight and target"
                )
        if self.weight is not None and self.weight < 0:
            raise ConfigSchemaError(f"tag {self.name!r}: weight must be non-negative")
        if self.survival_threshold is not None and self.kind is not TagKind.CONSTRAINT:
            raise ConfigSchemaError(
                f"tag {self.name!r}: survival_threshold is only valid on constraint tags"
            )


@dataclass(frozen=True)
class TagRelation:
    """Signed monotone influence of a control tag on a monitored tag."""

    cause: str
    effect: str
    sign: RelationSign


@dataclass(frozen=True)
class AceConfig:
    tags: dict[str, TagSpec]
    relations: tuple[TagRelation, ...]
    sample_period_ms: int
    window_size: int
    prediction_length: int
    broken_fraction_limit: float = DEFAULT_BROKEN_FRACTION_LIMIT
    outlier_fence_k: float = DEFAULT_OUTLIER_FENCE_K
    outlier_alert_fraction: float = DEFAULT_OUTLIER_ALERT_FRACTION

    def tags_of_kind(self, kind: TagKind) -> list[TagSpec]:
        return [spec for spec in self.tags.values() if spec.kind is kind]

    @property
    def control_tags(self) -> list[str]:
        return [t.name for t in self.tags_of_kind(TagKind.CONTROL)]

    @property
    def response_tags(self) -> list[str]:
        """Everything measured rather than commanded, in declaration order."""
        return [t.name for t in self.tags.values() if t.kind is not TagKind.CONTROL]

    def validate(self) -> None:
        if not self.tags:
            raise ConfigSchemaError("configuration declares no tags")
        for spec in self.tags.values():
            spec.validate()
        if self.window_size < 1:
            raise ConfigSchemaError("window_size must be >= 1")
        if self.prediction_length < 1:
            raise ConfigSchemaError("prediction_length must be >= 1")
        if self.sample_period_ms <= 0:
            raise ConfigSchemaError("sample_period_ms must be positive")
        if not 0.0 < self.broken_fraction_limit < 1.0:
            raise ConfigSchemaError("broken_fraction_limit must lie in (0, 1)")
        if self.outlier_fence_k < 0:
            raise ConfigSchemaError("outlier_fence_k must be non-negative")
        if not 0.0 < self.outlier_alert_fraction < 1.0:
            raise ConfigSchemaError("outlier_alert_fraction must lie in (0, 1)")
        if not self.control_tags:
            raise ConfigSchemaError("configuration requires at least one control tag")
        if not any(
            spec.kind in (TagKind.CONSTRAINT, TagKind.OPTIMIZE) for spec in self.tags.values()
        ):
            raise ConfigSchemaError(
                "configuration requires at least one constraint or optimize tag"
            )
        seen_pairs: set[tuple[str, str]] = set()
        for rel in self.relations:
            if rel.cause not in self.tags or self.tags[rel.cause].kind is not TagKind.CONTROL:
                raise ConfigReferenceError(
                    f"relation cause {rel.cause!r} is not a declared control tag"
                )
            if rel.effect not in self.tags:
                raise ConfigReferenceError(f"relation effect {rel.effect!r} is not declared")
            if self.tags[rel.effect].kind is TagKind.CONTROL:
                raise ConfigReferenceError(
                    f"relation effect {rel.effect!r} must not be a control tag"
                )
            pair = (rel.cause, rel.effect)
            if pair in seen_pairs:
                raise ConfigDuplicateError(f"relation {pair} declared twice")
            seen_pairs.add(pair)


_TAG_FIELDS = {
    "name", "kind", "unit", "static_bounds", "broken_sensor_bounds",
    "target", "weight", "max_step", "survival_threshold",
}


def _interval(raw: object, where: str) -> tuple[float, float]:
    if (
        not isinstance(raw, (list, tuple))
        or len(raw) != 2
        or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in raw)
    ):
        raise ConfigSchemaError(f"{where}: expected a [lo, hi] pair, got {raw!r}")
    return float(raw[0]), float(raw[1])


def _scalar(raw: object, where: str) -> float:
    if not isinstance(raw, (int, float)) or isinstance(raw, bool):
        raise ConfigSchemaError(f"{where}: expected a number, got {raw!r}")
    return float(raw)


def _parse_tag(raw: object) -> TagSpec:
    if not isinstance(raw, dict):
        raise ConfigSchemaError(f"tag entry must be an object, got {raw!r}")
    unknown = set(raw) - _TAG_FIELDS
    if unknown:
        raise ConfigSchemaError(f"tag entry has unknown fields {sorted(unknown)}")
    name = raw.get("name")
    if not isinstance(name, str) or not name:
        raise ConfigSchemaError(f"tag entry missing a non-empty name: {raw!r}")
    try:
        kind = TagKind(raw.get("kind"))
    except ValueError:
        raise ConfigSchemaError(f"tag {name!r}: unknown kind {raw.get('kind')!r}") from None
    where = f"tag {name!r}"
    return TagSpec(
        name=name,
        kind=kind,
        unit=str(raw.get("unit", "")),
        static_bounds=(
            _interval(raw["static_bounds"], where) if "static_bounds" in raw else None
        ),
        broken_sensor_bounds=(
            _interval(raw["broken_sensor_bounds"], where)
            if "broken_sensor_bounds" in raw
            else None
        ),
        target=_scalar(raw["target"], where) if "target" in raw else None,
        weight=_scalar(raw["weight"], where) if "weight" in raw else None,
        max_step=_scalar(raw["max_step"], where) if "max_step" in raw else None,
        survival_threshold=(
            _scalar(raw["survival_threshold"], where) if "survival_threshold" in raw else None
        ),
    )


def parse_ace_dict(doc: object) -> AceConfig:
    """Validate an already-decoded configuration document."""
    if not isinstance(doc, dict):
        raise ConfigSchemaError("top-level configuration must be an object")
    for required in ("sample_period_ms", "window_size", "prediction_length", "tags"):
        if required not in doc:
            raise ConfigSchemaError(f"configuration missing required field {required!r}")
    raw_tags = doc["tags"]
    if not isinstance(raw_tags, list):
        raise ConfigSchemaError("'tags' must be an array of tag objects")
    tags: dict[str, TagSpec] = {}
    for raw in raw_tags:
        spec = _parse_tag(raw)
        if spec.name in tags:
            raise ConfigDuplicateError(f"tag {spec.name!r} declared twice")
        tags[spec.name] = spec
    relations: list[TagRelation] = []
    for raw in doc.get("relations", []):
        if not isinstance(raw, dict) or set(raw) != {"cause", "effect", "sign"}:
            raise ConfigSchemaError(f"relation entry must have cause/effect/sign: {raw!r}")
        try:
            sign = RelationSign(raw["sign"])
        except ValueError:
            raise ConfigSchemaError(f"relation has unknown sign {raw['sign']!r}") from None
        relations.append(TagRelation(cause=str(raw["cause"]), effect=str(raw["effect"]), sign=sign))

    def _int_field(key: str) -> int:
        value = doc[key]
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigSchemaError(f"{key} must be an integer, got {value!r}")
        return value

    config = AceConfig(
        tags=tags,
        relations=tuple(relations),
        sample_period_ms=_int_field("sample_period_ms"),
        window_size=_int_field("window_size"),
        prediction_length=_int_field("prediction_length"),
        broken_fraction_limit=(
            _scalar(doc["broken_fraction_limit"], "broken_fraction_limit")
            if "broken_fraction_limit" in doc
            else DEFAULT_BROKEN_FRACTION_LIMIT
        ),
        outlier_fence_k=(
            _scalar(doc["outlier_fence_k"], "outlier_fence_k")
            if "outlier_fence_k" in doc
            else DEFAULT_OUTLIER_FENCE_K
        ),
        outlier_alert_fraction=(
            _scalar(doc["outlier_alert_fraction"], "outlier_alert_fraction")
            if "outlier_alert_fraction" in doc
            else DEFAULT_OUTLIER_ALERT_FRACTION
        ),
    )
    config.validate()
    return config


def parse_ace(text: str) -> AceConfig:
    """Parse and fully validate a UTF-8 JSON configuration document."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigSyntaxError(f"configuration is not valid JSON: {exc}") from exc
    return parse_ace_dict(doc)


def serialize_ace(config: AceConfig) -> str:
    """Render a configuration back to its document form.

    Optional fields are omitted when absent, never emitted as null, so the
    output re-parses to an equal AceConfig.
    """
    tags = []
    for spec in config.tags.values():
        entry: dict[str, object] = {"name": spec.name, "kind": spec.kind.value, "unit": spec.unit}
        if spec.static_bounds is not None:
            entry["static_bounds"] = list(spec.static_bounds)
        if spec.broken_sensor_bounds is not None:
            entry["broken_sensor_bounds"] = list(spec.broken_sensor_bounds)
        if spec.target is not None:
            entry["target"] = spec.target
        if spec.weight is not None:
            entry["weight"] = spec.weight
        if spec.max_step is not None:
            entry["max_step"] = spec.max_step
        if spec.survival_threshold is not None:
            entry["survival_threshold"] = spec.survival_threshold
        tags.append(entry)
    doc = {
        "sample_period_ms": config.sample_period_ms,
        "window_size": config.window_size,
        "prediction_length": config.prediction_length,
        "broken_fraction_limit": config.broken_fraction_limit,
        "outlier_fence_k": config.outlier_fence_k,
        "outlier_alert_fraction": config.outlier_alert_fraction,
        "tags": tags,
        "relations": [
            {"cause": r.cause, "effect": r.effect, "sign": r.sign.value}
            for r in config.relations
        ],
    }
    return json.dumps(doc, indent=2) + "\n"


def dynamic_bounds(spec: TagSpec, current: float) -> tuple[float, float]:
    """Admissible interval for the next set point: current +/- max_step,
    clipped into the tag's static bounds when those exist."""
    if spec.kind is not TagKind.CONTROL or spec.max_step is None:
        raise KindError(f"dynamic bounds are only defined for control tags, not {spec.name!r}")
    lo = current - spec.max_step
    hi = current + spec.max_step
    if spec.static_bounds is not None:
        s_lo, s_hi = spec.static_bounds
        lo = min(max(lo, s_lo), s_hi)
        hi = min(max(hi, s_lo), s_hi)
    return lo, hi


def relation_sign(config: AceConfig, cause: str, effect: str) -> RelationSign | None:
    """Declared sign for (cause, effect), or None when no relation exists."""
    for rel in config.relations:
        if rel.cause == cause and rel.effect == effect:
            return rel.sign
    return None


def related_controls(config: AceConfig, effect: str) -> list[TagRelation]:
    """All declared relations whose effect is the given tag, in declaration order."""
    return [rel for rel in config.relations if rel.effect == effect]
