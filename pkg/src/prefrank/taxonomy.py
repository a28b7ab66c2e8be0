"""Rule-based wine style taxonomy.

Pipeline per wine: standardize variety names, take the variety *set*
(proportions ignored), try the canonical-style rulebook in order, otherwise
keep the single variety name or collapse a blend to its colour category.
A final per-region pass collapses rare labels to colour categories.

The rulebook is data (``data/rulebook.json`` by default), so rules can be
edited without touching code.
"""

from __future__ import annotations

import csv
import enum
import json
import re
import unicodedata
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConfigError, IngestionError

MATCH_MODES = ("at_least_two", "all_required", "must_include_single", "include_plus_any_international")
CATEGORIES = ("sparkling", "fortified", "none")
RULE_COLORS = ("red", "white", "rosé", "sparkling-neutral")
WINE_COLORS = ("red", "white", "rosé")


class Stage(str, enum.Enum):
    CANONICAL = "canonical"
    VARIETY_SET = "variety_set"
    COLLAPSED = "collapsed"


def fold(name: str) -> str:
    """Case- and diacritic-insensitive key: ``"Mourvèdre"`` -> ``"mourvedre"``."""
    decomposed = unicodedata.normalize("NFKD", name)
    stripped = "".join(ch for ch in decomposed if not unicodedata.combining(ch))
    return re.sub(r"\s+", " ", stripped).strip().casefold()


@dataclass(frozen=True)
class StyleRule:
    name: str
    core: frozenset
    match: str
    category: str = "none"
    color: str = "sparkling-neutral"
    direct_labels: frozenset = frozenset()
    inferred: bool = False

    def __post_init__(self):
        if self.match not in MATCH_MODES:
            raise ConfigError(f"rule {self.name!r}: unknown match mode {self.match!r}")
        if self.category not in CATEGORIES:
            raise ConfigError(f"rule {self.name!r}: unknown category {self.category!r}")
        if self.color not in RULE_COLORS:
            raise ConfigError(f"rule {self.name!r}: unknown color {self.color!r}")
        if self.match == "must_include_single" and len(self.core) != 1:
            raise ConfigError(f"rule {self.name!r}: must_include_single needs exactly one core variety")


@dataclass(frozen=True)
class Rulebook:
    synonym_map: dict
    style_rules: tuple[StyleRule, ...]
    international_varieties: frozenset
    ignored_names: frozenset = frozenset()
    color_labels: dict = field(default_factory=lambda: {"red": "Red wine", "white": "White wine", "rosé": "Rosé wine"})
    min_products: int = 10
    cumulative_share: float = 0.8

    def __post_init__(self):
        names = [r.name for r in self.style_rules]
        dupes = [n for n, c in Counter(names).items() if c > 1]
        if dupes:
            raise ConfigError(f"duplicate style names {dupes}")

    def canonical(self, raw: str) -> str | None:
        return self.synonym_map.get(fold(raw))

    @classmethod
    def from_dict(cls, doc: dict) -> "Rulebook":
        synonyms = {fold(k): v for k, v in doc.get("synonyms", {}).items()}
        # Canonical names always map to themselves.
        for v in list(synonyms.values()):
            synonyms.setdefault(fold(v), v)

        def canon(name):
            return synonyms.get(fold(name), name)

        rules = tuple(
            StyleRule(
                r["name"],
                frozenset(canon(v) for v in r["core"]),
                r["match"],
                r.get("category", "none"),
                r.get("color", "sparkling-neutral"),
                frozenset(canon(v) for v in r.get("direct_labels", ())),
                bool(r.get("inferred", False)),
            )
            for r in doc["styles"]
        )
        collapse = doc.get("collapse", {})
        labels = {"red": "Red wine", "white": "White wine", "rosé": "Rosé wine", **doc.get("labels", {})}
        return cls(
            synonyms,
            rules,
            frozenset(canon(v) for v in doc.get("international_varieties", ())),
            frozenset(fold(n) for n in doc.get("ignored_names", ())),
            labels,
            int(collapse.get("min_products", 10)),
            float(collapse.get("cumulative_share", 0.8)),
        )


def load_rulebook(path=None) -> Rulebook:
    """Load a rulebook JSON; the packaged default when ``path`` is None."""
    if path is None:
        text = resources.files("prefrank").joinpath("data/rulebook.json").read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    try:
        return Rulebook.from_dict(json.loads(text))
    except (KeyError, TypeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"malformed rulebook: {exc}") from None


@dataclass(frozen=True)
class WineInput:
    product_id: str
    region: str
    raw_varieties: tuple[tuple[str, float | None], ...]
    color: str
    sparkling: bool = False
    fortified: bool = False

    def __post_init__(self):
        if not self.raw_varieties:
            raise IngestionError(f"product {self.product_id!r}: no grape varieties")
        if self.color not in WINE_COLORS:
            raise IngestionError(f"product {self.product_id!r}: color must be one of {WINE_COLORS}")

    def percentage_warning(self) -> str | None:
        pcts = [p for _, p in self.raw_varieties]
        if pcts and all(p is not None for p in pcts) and abs(sum(pcts) - 100.0) > 1.0:
            return f"percentages sum to {sum(pcts):g}, not 100"
        return None


@dataclass(frozen=True)
class StyleLabel:
    label: str
    stage: Stage

    def __post_init__(self):
        if not self.label:
            raise ValueError("empty style label")


@dataclass(frozen=True)
class TaxonomyWarning:
    product_id: str
    name: str
    message: str


def standardize(raw_varieties: Iterable, rulebook: Rulebook, product_id: str = "", warnings=None) -> frozenset:
    """Map raw names to canonical varieties; drop proportions and placeholders like "Other".

    Unknown names are kept verbatim and reported in ``warnings`` if a list is given.
    """
    out = set()
    for item in raw_varieties:
        name = item[0] if isinstance(item, tuple) else item
        name = name.strip()
        if not name or fold(name) in rulebook.ignored_names:
            continue
        canon = rulebook.canonical(name)
        if canon is None:
            canon = name
            if warnings is not None:
                warnings.append(TaxonomyWarning(product_id, name, "unmapped variety kept verbatim"))
        out.add(canon)
    return frozenset(out)


def _rule_fires(rule: StyleRule, varieties: frozenset, color: str, sparkling: bool, fortified: bool,
                rulebook: Rulebook) -> bool:
    if rule.color != "sparkling-neutral" and rule.color != color:
        return False
    if rule.category == "sparkling" and not sparkling:
        return False
    if rule.category == "fortified" and not fortified:
        return False
    if rule.direct_labels & varieties:
        return True
    if rule.match == "at_least_two":
        return len(varieties & rule.core) >= 2
    if rule.match == "all_required":
        return rule.core <= varieties
    if rule.match == "must_include_single":
        return rule.core <= varieties
    # include_plus_any_international
    return rule.core <= varieties and bool((varieties - rule.core) & rulebook.international_varieties)


def match_canonical(varieties: frozenset, color: str, sparkling: bool, fortified: bool,
                    rulebook: Rulebook) -> StyleLabel | None:
    """First rule (in rulebook order) whose criteria the variety set meets."""
    for rule in rulebook.style_rules:
        if _rule_fires(rule, varieties, color, sparkling, fortified, rulebook):
            return StyleLabel(rule.name, Stage.CANONICAL)
    return None


def color_label(color: str, rulebook: Rulebook) -> StyleLabel:
    return StyleLabel(rulebook.color_labels[color], Stage.COLLAPSED)


def preliminary_label(varieties: frozenset, color: str, canonical: StyleLabel | None, rulebook: Rulebook) -> StyleLabel:
    if canonical is not None:
        return canonical
    if len(varieties) == 1:
        return StyleLabel(next(iter(varieties)), Stage.VARIETY_SET)
    return color_label(color, rulebook)


@dataclass(frozen=True)
class LabeledWine:
    product_id: str
    region: str
    color: str
    varieties: frozenset
    label: StyleLabel


def collapse_rare_styles(wines: Sequence[LabeledWine], rulebook: Rulebook) -> list[LabeledWine]:
    """Per region, keep only major labels; pool the rest into colour categories.

    A label is major when it has more than ``min_products`` distinct products
    AND falls inside the smallest count-ordered prefix of labels whose
    cumulative product share reaches ``cumulative_share``. Colour categories
    are catch-alls: they count toward the region total but are not ranked.
    Ties in count are ordered by label name.
    """
    by_region: dict[str, list[LabeledWine]] = defaultdict(list)
    for w in wines:
        by_region[w.region].append(w)
    major: dict[str, set] = {}
    for region, members in by_region.items():
        total = len({w.product_id for w in members})
        products = defaultdict(set)
        for w in members:
            if w.label.stage != Stage.COLLAPSED:
                products[w.label.label].add(w.product_id)
        ranked = sorted(products.items(), key=lambda kv: (-len(kv[1]), kv[0]))
        keep, cum = set(), 0
        for label, ids in ranked:
            if cum / total >= rulebook.cumulative_share:
                break
            cum += len(ids)
            if len(ids) > rulebook.min_products:
                keep.add(label)
        major[region] = keep
    out = []
    for w in wines:
        if w.label.stage == Stage.COLLAPSED or w.label.label in major[w.region]:
            out.append(w)
        else:
            out.append(LabeledWine(w.product_id, w.region, w.color, w.varieties, color_label(w.color, rulebook)))
    return out


def label_wine(wine: WineInput, rulebook: Rulebook, warnings=None) -> LabeledWine:
    """Standardize, match and label one wine (before regional collapsing)."""
    if warnings is not None:
        msg = wine.percentage_warning()
        if msg:
            warnings.append(TaxonomyWarning(wine.product_id, "", msg))
    varieties = standardize(wine.raw_varieties, rulebook, wine.product_id, warnings)
    if not varieties:
        raise IngestionError(f"product {wine.product_id!r}: no recognizable grape variety")
    canonical = match_canonical(varieties, wine.color, wine.sparkling, wine.fortified, rulebook)
    label = preliminary_label(varieties, wine.color, canonical, rulebook)
    return LabeledWine(wine.product_id, wine.region, wine.color, varieties, label)


@dataclass
class Classification:
    preliminary: list
    final: list
    warnings: list


def classify(wines: Sequence[WineInput], rulebook: Rulebook | None = None) -> Classification:
    rulebook = rulebook or load_rulebook()
    warnings: list = []
    prelim = [label_wine(w, rulebook, warnings) for w in wines]
    return Classification(prelim, collapse_rare_styles(prelim, rulebook), warnings)


_PCT = re.compile(r"^(?P<name>.*?)\s*(?P<pct>\d+(?:\.\d+)?)\s*%$")
_TRUE = {"1", "true", "yes", "y", "t"}
_FALSE = {"0", "false", "no", "n", "f", ""}


def parse_varieties(text: str) -> tuple[tuple[str, float | None], ...]:
    """Parse ``"Grenache 70%, Syrah 8%"`` or ``"Pinot Noir / Poulsard (Ploussard)"``.

    Parenthesised aliases and "(proportions unknown)" notes are dropped.
    """
    text = re.sub(r"\([^)]*\)", "", text)
    out = []
    for part in re.split(r"[,/;]", text):
        part = part.strip()
        if not part:
            continue
        m = _PCT.match(part)
        if m:
            out.append((m.group("name").strip(), float(m.group("pct"))))
        else:
            out.append((part, None))
    return tuple(out)


def _flag(value: str | None, what: str, lineno: int) -> bool:
    v = (value or "").strip().casefold()
    if v in _TRUE:
        return True
    if v in _FALSE:
        return False
    raise IngestionError(f"line {lineno}: bad {what} flag {value!r}")


PRODUCT_COLUMNS = ("product_id", "region", "varieties", "color")


def read_products_csv(path) -> list[WineInput]:
    """Read ``product_id,region,varieties,color[,sparkling,fortified]`` rows."""
    path = Path(path)
    wines = []
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            return []
        missing = set(PRODUCT_COLUMNS) - set(reader.fieldnames)
        if missing:
            raise IngestionError(f"{path}: missing columns {sorted(missing)}")
        for lineno, row in enumerate(reader, start=2):
            if None in row or any(row.get(c) is None for c in PRODUCT_COLUMNS):
                raise IngestionError(f"{path}:{lineno}: wrong number of fields")
            color = fold(row["color"])
            color = "rosé" if color in ("rose", "rosé") else color
            try:
                wines.append(WineInput(
                    row["product_id"], row["region"], parse_varieties(row["varieties"]), color,
                    _flag(row.get("sparkling"), "sparkling", lineno), _flag(row.get("fortified"), "fortified", lineno),
                ))
            except IngestionError as exc:
                raise IngestionError(f"{path}:{lineno}: {exc}") from None
    return wines


def write_labels_csv(result: Classification, path) -> None:
    prelim = {w.product_id: w.label for w in result.preliminary}
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["product_id", "region", "color", "variety_set", "preliminary_label",
                         "preliminary_stage", "final_label", "final_stage"])
        for w in result.final:
            p = prelim[w.product_id]
            writer.writerow([w.product_id, w.region, w.color, " | ".join(sorted(w.varieties)),
                             p.label, p.stage.value, w.label.label, w.label.stage.value])


def write_warnings_csv(warnings: Sequence[TaxonomyWarning], path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["product_id", "name", "message"])
        for w in warnings:
            writer.writerow([w.product_id, w.name, w.message])
