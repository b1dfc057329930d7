"""Prompt specifications, the verification template, and probe generation.

Every extraction renders statements through the same fixed template the
verifier was calibrated on:

    Context: {context} Statement: {statement}

A prompt without context (the bare condition) is the statement alone.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .errors import ConfigurationError, ManifestError

TEMPLATE = "Context: {context} Statement: {statement}"


@dataclass(frozen=True)
class PromptSpec:
    """One prompt to capture: id, statement, optional context and label."""

    prompt_id: str
    statement: str
    context: str | None = None
    label: int | None = None

    def __post_init__(self):
        if not self.prompt_id:
            raise ConfigurationError("prompt_id must be non-empty")
        if not self.statement or not self.statement.strip():
            raise ConfigurationError(f"prompt {self.prompt_id!r} has no statement")
        if self.label is not None and self.label not in (0, 1):
            raise ConfigurationError(
                f"prompt {self.prompt_id!r}: label must be 0 or 1, got {self.label!r}"
            )
        ctx = self.context
        if ctx is not None and not ctx.strip():
            object.__setattr__(self, "context", None)

    def render(self) -> str:
        if self.context is None:
            return self.statement
        return TEMPLATE.format(context=self.context, statement=self.statement)


def load_prompts_jsonl(path: str | Path) -> list[PromptSpec]:
    """Read prompts from JSON-lines: {"id", "statement", "context"?, "label"?}."""
    path = Path(path)
    specs = []
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{path}:{lineno}: not valid JSON: {exc}") from None
        if not isinstance(row, dict):
            raise ConfigurationError(f"{path}:{lineno}: expected a JSON object")
        missing = [k for k in ("id", "statement") if not row.get(k)]
        if missing:
            raise ConfigurationError(
                f"{path}:{lineno}: missing field(s) {', '.join(missing)}"
            )
        specs.append(
            PromptSpec(
                prompt_id=str(row["id"]),
                statement=str(row["statement"]),
                context=row.get("context"),
                label=row.get("label"),
            )
        )
    if not specs:
        raise ConfigurationError(f"{path}: no prompts found")
    _check_unique(specs)
    return specs


def _check_unique(specs: Sequence[PromptSpec]) -> None:
    seen: set[str] = set()
    for spec in specs:
        if spec.prompt_id in seen:
            raise ManifestError(f"duplicate prompt_id {spec.prompt_id!r}")
        seen.add(spec.prompt_id)


# ---------------------------------------------------------------------------
# probe construction: world facts with a supported and a contradicted reading


@dataclass(frozen=True)
class ProbeTemplate:
    """A context with slots plus one consistent and one inconsistent statement.

    kind separates invented worlds ("fictional") from common-knowledge facts
    ("familiar"); a probe set must contain both so the contrast is not an
    artifact of either.
    """

    name: str
    kind: str  # "fictional" | "familiar"
    context: str
    supported: str
    contradicted: str

    def __post_init__(self):
        if self.kind not in ("fictional", "familiar"):
            raise ConfigurationError(
                f"template {self.name!r}: kind must be fictional or familiar"
            )


DEFAULT_TEMPLATES = (
    ProbeTemplate(
        name="resident",
        kind="fictional",
        context="{person} has lived in the town of {place} since childhood.",
        supported="{person} lives in {place}.",
        contradicted="{person} has never been to {place}.",
    ),
    ProbeTemplate(
        name="keeper",
        kind="fictional",
        context="{person} keeps a tame {animal} in a pen behind the house in {place}.",
        supported="{person} owns a {animal}.",
        contradicted="{person} has no animals at all.",
    ),
    ProbeTemplate(
        name="trade",
        kind="fictional",
        context="The market in {place} sells {goods}, and {person} buys some every week.",
        supported="{goods} can be bought in {place}.",
        contradicted="Nobody in {place} has ever sold {goods}.",
    ),
    ProbeTemplate(
        name="capital",
        kind="familiar",
        context="The capital of {country} is {capital}, as any atlas will confirm.",
        supported="The capital of {country} is {capital}.",
        contradicted="The capital of {country} is {not_capital}.",
    ),
    ProbeTemplate(
        name="conductor",
        kind="familiar",
        context="Solid {metal} conducts electricity well and is used in wiring.",
        supported="{metal} conducts electricity.",
        contradicted="{metal} cannot conduct electricity at all.",
    ),
)

_ENTITY_ROWS = (
    # person, place, animal, goods            | country, capital, not_capital, metal
    ("Mirela", "Vastruno", "heron", "river salt", "France", "Paris", "Marseille", "Copper"),
    ("Oduya", "Kelpost", "marten", "dried figs", "Japan", "Tokyo", "Osaka", "Silver"),
    ("Tashfin", "Brandt Hollow", "raven", "wool thread", "Egypt", "Cairo", "Luxor", "Aluminium"),
    ("Ilka", "Dorvessa", "badger", "clay lamps", "Canada", "Ottawa", "Calgary", "Gold"),
    ("Ruven", "Malqat", "lynx", "pressed oil", "Norway", "Oslo", "Bergen", "Iron"),
    ("Senna", "Tirlow", "falcon", "oat flour", "Kenya", "Nairobi", "Mombasa", "Nickel"),
    ("Petrov", "Ashqelon Ridge", "otter", "birch tar", "Spain", "Madrid", "Seville", "Zinc"),
    ("Yuki", "Carnmouth", "stoat", "rope bundles", "India", "New Delhi", "Pune", "Tin"),
    ("Amara", "Feldspur", "goshawk", "smoked fish", "Australia", "Canberra", "Perth", "Platinum"),
    ("Dovid", "Quellan", "ferret", "candle wax", "Poland", "Warsaw", "Krakow", "Titanium"),
    ("Nokomis", "Braywick", "osprey", "barley malt", "Chile", "Santiago", "Valparaiso", "Brass"),
    ("Ercan", "Suluvia", "pine marten", "iron nails", "Brazil", "Brasilia", "Recife", "Steel"),
)

DEFAULT_ENTITIES = tuple(
    {
        "person": person, "place": place, "animal": animal, "goods": goods,
        "country": country, "capital": capital, "not_capital": not_capital,
        "metal": metal,
    }
    for person, place, animal, goods, country, capital, not_capital, metal in _ENTITY_ROWS
)


def probe_prompts(
    templates: Sequence[ProbeTemplate] = DEFAULT_TEMPLATES,
    entities: Sequence[Mapping[str, str]] = DEFAULT_ENTITIES,
    n_pairs: int | None = None,
    include_bare: bool = False,
) -> list[PromptSpec]:
    """Instantiate templates over entities into a balanced labeled probe set.

    Each (template, entity) combination yields one supported (label 1) and
    one contradicted (label 0) prompt; n_pairs caps how many combinations are
    used (None = all). include_bare adds an unlabeled context-free prompt per
    combination. The template set must cover both the fictional and the
    familiar condition.
    """
    templates = list(templates)
    if not templates or not entities:
        raise ConfigurationError("need at least one template and one entity")
    kinds = {t.kind for t in templates}
    if kinds != {"fictional", "familiar"}:
        raise ConfigurationError(
            "template set must cover both fictional and familiar conditions, "
            f"got {sorted(kinds)}"
        )
    combos = list(itertools.product(templates, entities))
    if n_pairs is not None:
        if not 1 <= n_pairs <= len(combos):
            raise ConfigurationError(
                f"n_pairs must be in [1, {len(combos)}], got {n_pairs}"
            )
        combos = combos[:n_pairs]
    specs: list[PromptSpec] = []
    for i, (template, entity) in enumerate(combos):
        context = template.context.format_map(entity)
        base = f"{template.name}-{i:03d}"
        specs.append(
            PromptSpec(
                prompt_id=f"{base}-supported",
                statement=template.supported.format_map(entity),
                context=context,
                label=1,
            )
        )
        specs.append(
            PromptSpec(
                prompt_id=f"{base}-contradicted",
                statement=template.contradicted.format_map(entity),
                context=context,
                label=0,
            )
        )
        if include_bare:
            specs.append(
                PromptSpec(
                    prompt_id=f"{base}-bare",
                    statement=template.supported.format_map(entity),
                    context=None,
                    label=None,
                )
            )
    _check_unique(specs)
    return specs
