"""Hyperparameter search spaces and genotypes.

A :class:`SearchSpace` is an ordered list of :class:`LocusSpec` entries; a
genotype is a plain tuple with one value per locus, in locus order.
Continuous and integer loci hold floats (integer loci are rounded only when
decoded or explicitly clamped, so small multiplicative mutations can
accumulate), categorical loci hold an ``int`` index into ``categories``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
import yaml

CONTINUOUS = "continuous"
INTEGER = "integer"
CATEGORICAL = "categorical"
KINDS = (CONTINUOUS, INTEGER, CATEGORICAL)
SCALES = ("linear", "log")

Genotype = tuple

CONFIG_DIR = Path(__file__).parent / "configs"


class SpaceError(ValueError):
    """Raised when a search space or genotype violates its invariants."""

    def __init__(self, errors: Sequence[str]):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


@dataclass(frozen=True)
class LocusSpec:
    name: str
    kind: str = CONTINUOUS
    min: float | None = None
    max: float | None = None
    scale: str = "linear"
    categories: tuple[str, ...] = ()

    @property
    def is_numeric(self) -> bool:
        return self.kind != CATEGORICAL

    @property
    def span(self) -> float:
        return float(self.max) - float(self.min)

    def problems(self) -> list[str]:
        errs = []
        label = self.name or "<unnamed>"
        if not self.name:
            errs.append("locus name must be nonempty")
        if self.kind not in KINDS:
            errs.append(f"{label}: unknown kind {self.kind!r}")
            return errs
        if self.is_numeric:
            if self.min is None or self.max is None:
                errs.append(f"{label}: numeric locus needs min and max")
                return errs
            if not (math.isfinite(self.min) and math.isfinite(self.max)):
                errs.append(f"{label}: bounds must be finite")
            elif self.min == self.max:
                errs.append(f"{label}: degenerate bounds")
            elif self.min > self.max:
                errs.append(f"{label}: min greater than max")
            if self.scale not in SCALES:
                errs.append(f"{label}: unknown scale {self.scale!r}")
            elif self.scale == "log" and self.min <= 0:
                errs.append(f"{label}: log scale requires positive min")
            if self.kind == INTEGER and not (float(self.min).is_integer() and float(self.max).is_integer()):
                errs.append(f"{label}: integer locus needs whole-number bounds")
        else:
            if len(set(self.categories)) < 2:
                errs.append(f"{label}: categorical locus needs at least 2 distinct categories")
            elif len(set(self.categories)) != len(self.categories):
                errs.append(f"{label}: duplicate categories")
        return errs


@dataclass(frozen=True)
class SearchSpace:
    loci: tuple[LocusSpec, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "loci", tuple(self.loci))

    def __len__(self) -> int:
        return len(self.loci)

    def __iter__(self):
        return iter(self.loci)

    @property
    def names(self) -> list[str]:
        return [loc.name for loc in self.loci]

    def index(self, name: str) -> int:
        return self.names.index(name)

    def decode(self, g: Genotype) -> dict[str, Any]:
        """Map a genotype to named phenotype values.

        Integer loci are rounded, categorical indices become category names.
        """
        out: dict[str, Any] = {}
        for loc, v in zip(self.loci, g):
            if loc.kind == INTEGER:
                out[loc.name] = int(round(v))
            elif loc.kind == CATEGORICAL:
                out[loc.name] = loc.categories[int(v)]
            else:
                out[loc.name] = float(v)
        return out

    def encode(self, values: Mapping[str, Any]) -> Genotype:
        """Inverse of :meth:`decode`; every locus must be present."""
        g = []
        for loc in self.loci:
            v = values[loc.name]
            if loc.kind == CATEGORICAL:
                g.append(v if isinstance(v, int) else loc.categories.index(v))
            else:
                g.append(float(v))
        return tuple(g)

    def to_dict(self) -> dict:
        return {"loci": [locus_to_dict(loc) for loc in self.loci]}


def validate_space(space: SearchSpace) -> list[str]:
    """Return every invariant violation in *space*; an empty list means valid."""
    errs: list[str] = []
    if len(space.loci) == 0:
        errs.append("search space has no loci")
    seen: set[str] = set()
    for loc in space.loci:
        errs.extend(loc.problems())
        if loc.name in seen:
            errs.append(f"{loc.name}: duplicate locus name")
        seen.add(loc.name)
    return errs


def check_space(space: SearchSpace) -> SearchSpace:
    errs = validate_space(space)
    if errs:
        raise SpaceError(errs)
    return space


def validate_genotype(space: SearchSpace, g: Genotype) -> list[str]:
    if len(g) != len(space):
        return [f"genotype has {len(g)} values, space has {len(space)} loci"]
    errs = []
    for loc, v in zip(space.loci, g):
        if loc.kind == CATEGORICAL:
            if not isinstance(v, (int, np.integer)) or not 0 <= v < len(loc.categories):
                errs.append(f"{loc.name}: category index {v!r} out of range")
        elif not (math.isfinite(v) and loc.min <= v <= loc.max):
            errs.append(f"{loc.name}: value {v!r} outside [{loc.min}, {loc.max}]")
    return errs


def sample_genotype(space: SearchSpace, rng: np.random.Generator) -> Genotype:
    """Draw one genotype, each locus independently uniform in its own scale."""
    g = []
    for loc in space.loci:
        if loc.kind == CATEGORICAL:
            g.append(int(rng.integers(len(loc.categories))))
            continue
        lo, hi = float(loc.min), float(loc.max)
        if loc.scale == "log":
            v = math.exp(rng.uniform(math.log(lo), math.log(hi)))
        else:
            v = rng.uniform(lo, hi)
        if loc.kind == INTEGER:
            v = float(round(v))
        g.append(min(max(v, lo), hi))
    return tuple(g)


def clamp(space: SearchSpace, g: Genotype, *, round_integers: bool = True) -> Genotype:
    """Project numeric values into their bounds.

    Integer loci are rounded first unless ``round_integers`` is false (the
    mutation operator keeps the fractional part so drift can accumulate).
    """
    if len(g) != len(space):
        raise SpaceError([f"genotype has {len(g)} values, space has {len(space)} loci"])
    out = []
    for loc, v in zip(space.loci, g):
        if loc.kind == CATEGORICAL:
            out.append(v)
            continue
        v = float(v)
        if loc.kind == INTEGER and round_integers:
            v = float(round(v))
        out.append(min(max(v, float(loc.min)), float(loc.max)))
    return tuple(out)


# --- configuration files -------------------------------------------------


def locus_from_dict(d: Mapping[str, Any]) -> LocusSpec:
    kind = d.get("kind", CONTINUOUS)
    if kind == CATEGORICAL:
        return LocusSpec(name=str(d.get("name", "")), kind=kind,
                         categories=tuple(str(c) for c in d.get("categories", ())))
    lo, hi = d.get("min"), d.get("max")
    return LocusSpec(
        name=str(d.get("name", "")),
        kind=kind,
        min=None if lo is None else float(lo),
        max=None if hi is None else float(hi),
        scale=d.get("scale", "linear"),
    )


def locus_to_dict(loc: LocusSpec) -> dict:
    if loc.kind == CATEGORICAL:
        return {"name": loc.name, "kind": loc.kind, "categories": list(loc.categories)}
    return {"name": loc.name, "kind": loc.kind, "min": loc.min, "max": loc.max, "scale": loc.scale}


def space_from_dict(d: Mapping[str, Any]) -> SearchSpace:
    return check_space(SearchSpace(tuple(locus_from_dict(x) for x in d["loci"])))


def load_space(ref: str | Path | Mapping[str, Any]) -> SearchSpace:
    """Load a search space from a mapping, a YAML file, or a bundled config name.

    Bundled names are ``candle_p3b1``, ``rpv`` and ``lenet`` (plus the desk-scale
    spaces shipped alongside them).
    """
    if isinstance(ref, Mapping):
        return space_from_dict(ref)
    path = Path(ref)
    if not path.exists():
        bundled = CONFIG_DIR / f"{ref}.yaml"
        if not bundled.exists():
            raise FileNotFoundError(f"no search space file or bundled config named {ref!r}")
        path = bundled
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    return space_from_dict(doc)
