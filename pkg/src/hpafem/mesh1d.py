"""Dyadic master tree over a root partition of [0, 1].

Elements are addressed by integer triples ``(root, level, position)``; interval
endpoints are derived on demand from the root breakpoints so that deep
refinement never accumulates floating point drift.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Iterator

MAX_LEVEL = 60
_TILING_TOL = 1e-14


class MeshError(ValueError):
    """Invalid element, partition, or mixed root configurations."""


class ConfigurationMismatch(MeshError):
    """Two partitions live on different root partitions."""


@dataclass(frozen=True)
class ElementId:
    """A node ``(root, level, position)`` of the dyadic master tree."""

    root: int
    level: int
    position: int

    def __post_init__(self) -> None:
        if self.root < 0 or self.level < 0:
            raise MeshError(f"negative index in {self!r}")
        if self.level > MAX_LEVEL:
            raise MeshError(
                f"level {self.level} exceeds the maximum refinement depth {MAX_LEVEL}"
            )
        if not 0 <= self.position < (1 << self.level):
            raise MeshError(f"position out of range in {self!r}")

    def children(self) -> tuple[ElementId, ElementId]:
        lvl = self.level + 1
        if lvl > MAX_LEVEL:
            raise MeshError(
                f"cannot bisect {self!r}: maximum refinement depth {MAX_LEVEL} reached"
            )
        k = 2 * self.position
        return ElementId(self.root, lvl, k), ElementId(self.root, lvl, k + 1)

    def parent(self) -> ElementId | None:
        if self.level == 0:
            return None
        return ElementId(self.root, self.level - 1, self.position // 2)

    def sibling(self) -> ElementId | None:
        if self.level == 0:
            return None
        return ElementId(self.root, self.level, self.position ^ 1)

    def ancestor_at(self, level: int) -> ElementId:
        if level > self.level:
            raise MeshError(f"{self!r} has no ancestor at level {level}")
        return ElementId(self.root, level, self.position >> (self.level - level))

    def is_ancestor_of(self, other: ElementId) -> bool:
        """True when ``self`` is a strict ancestor of ``other``."""
        return (
            self.root == other.root
            and self.level < other.level
            and other.position >> (other.level - self.level) == self.position
        )

    def contains(self, other: ElementId) -> bool:
        return self == other or self.is_ancestor_of(other)

    def sort_key(self) -> tuple[int, Fraction, int]:
        """Canonical order: by root, then left endpoint, then level."""
        return (self.root, Fraction(self.position, 1 << self.level), self.level)

    def relative_span(self) -> tuple[Fraction, Fraction]:
        """Exact sub-interval of the root, as fractions of the root length."""
        scale = 1 << self.level
        return Fraction(self.position, scale), Fraction(self.position + 1, scale)


@dataclass(frozen=True)
class RootPartition:
    """The root element domains, given by strictly increasing breakpoints."""

    breakpoints: tuple[float, ...] = (0.0, 1.0)

    def __post_init__(self) -> None:
        bp = tuple(float(b) for b in self.breakpoints)
        object.__setattr__(self, "breakpoints", bp)
        if len(bp) < 2 or bp[0] != 0.0 or bp[-1] != 1.0:
            raise MeshError("root breakpoints must start at 0 and end at 1")
        if any(b1 <= b0 for b0, b1 in zip(bp, bp[1:])):
            raise MeshError("root breakpoints must be strictly increasing")

    @classmethod
    def uniform(cls, n: int) -> RootPartition:
        return cls(tuple(i / n for i in range(n)) + (1.0,))

    @property
    def n_roots(self) -> int:
        return len(self.breakpoints) - 1

    def roots(self) -> list[ElementId]:
        return [ElementId(r, 0, 0) for r in range(self.n_roots)]

    def interval(self, k: ElementId) -> tuple[float, float]:
        if k.root >= self.n_roots:
            raise MeshError(f"{k!r} refers to a root outside this configuration")
        a, b = self.breakpoints[k.root], self.breakpoints[k.root + 1]
        h = (b - a) / (1 << k.level)
        left = a + k.position * h
        right = b if k.position + 1 == (1 << k.level) else a + (k.position + 1) * h
        return left, right

    def length(self, k: ElementId) -> float:
        a, b = self.interval(k)
        return b - a

    def bisected(self) -> RootPartition:
        """Root partition whose roots are the children of the current roots."""
        pts = []
        for a, b in zip(self.breakpoints, self.breakpoints[1:]):
            pts.extend([a, a + 0.5 * (b - a)])
        pts.append(1.0)
        return RootPartition(tuple(pts))


def _check_tiling(roots: RootPartition, elements: list[ElementId]) -> None:
    by_root: dict[int, list[ElementId]] = {}
    for k in elements:
        if k.root >= roots.n_roots:
            raise MeshError(f"{k!r} refers to a root outside this configuration")
        by_root.setdefault(k.root, []).append(k)
    if sorted(by_root) != list(range(roots.n_roots)):
        raise MeshError("partition does not cover every root")
    for r, ks in by_root.items():
        ks.sort(key=ElementId.sort_key)
        pos = Fraction(0)
        for k in ks:
            lo, hi = k.relative_span()
            if lo != pos:
                raise MeshError(f"gap or overlap in root {r} before {k!r}")
            pos = hi
        if pos != 1:
            raise MeshError(f"root {r} is not fully covered")
    # float-level sanity check of the derived endpoints
    ivs = sorted(roots.interval(k) for k in elements)
    if abs(ivs[0][0]) > _TILING_TOL or abs(ivs[-1][1] - 1.0) > _TILING_TOL:
        raise MeshError("leaf intervals do not span [0, 1]")
    for (_, b0), (a1, _) in zip(ivs, ivs[1:]):
        if abs(a1 - b0) > _TILING_TOL:
            raise MeshError("leaf intervals leave a gap or overlap")


@dataclass(frozen=True)
class HPartition:
    """Leaves of a subtree of the master tree, in canonical order."""

    roots: RootPartition
    leaves: tuple[ElementId, ...]

    def __post_init__(self) -> None:
        leaves = sorted(set(self.leaves), key=ElementId.sort_key)
        if len(leaves) != len(self.leaves):
            raise MeshError("duplicate leaves")
        _check_tiling(self.roots, leaves)
        object.__setattr__(self, "leaves", tuple(leaves))

    @classmethod
    def root_partition(cls, roots: RootPartition) -> HPartition:
        return cls(roots, tuple(roots.roots()))

    def __len__(self) -> int:
        return len(self.leaves)

    def __iter__(self) -> Iterator[ElementId]:
        return iter(self.leaves)

    def intervals(self) -> list[tuple[float, float]]:
        return [self.roots.interval(k) for k in self.leaves]


@dataclass(frozen=True)
class HpElement:
    element: ElementId
    degree: int

    def __post_init__(self) -> None:
        if self.degree < 1:
            raise MeshError(f"degree must be >= 1, got {self.degree}")


@dataclass(frozen=True)
class HpPartition:
    """A set of (element, degree) pairs whose domains tile [0, 1]."""

    roots: RootPartition
    elements: tuple[HpElement, ...]
    _index: dict = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self) -> None:
        els = sorted(self.elements, key=lambda e: e.element.sort_key())
        ks = [e.element for e in els]
        if len(set(ks)) != len(ks):
            raise MeshError("duplicate element domains")
        _check_tiling(self.roots, ks)
        object.__setattr__(self, "elements", tuple(els))
        object.__setattr__(self, "_index", {e.element: e.degree for e in els})

    @classmethod
    def from_pairs(
        cls, roots: RootPartition, pairs: Iterable[tuple[ElementId, int]]
    ) -> HpPartition:
        return cls(roots, tuple(HpElement(k, d) for k, d in pairs))

    @classmethod
    def uniform(cls, roots: RootPartition, level: int, degree: int) -> HpPartition:
        pairs = [
            (ElementId(r, level, k), degree)
            for r in range(roots.n_roots)
            for k in range(1 << level)
        ]
        return cls.from_pairs(roots, pairs)

    def __len__(self) -> int:
        return len(self.elements)

    def __iter__(self) -> Iterator[HpElement]:
        return iter(self.elements)

    def degree_of(self, k: ElementId) -> int:
        return self._index[k]

    def __contains__(self, k: object) -> bool:
        return k in self._index

    @property
    def h_partition(self) -> HPartition:
        return HPartition(self.roots, tuple(e.element for e in self.elements))

    @property
    def total_dof(self) -> int:
        return sum(e.degree for e in self.elements)

    @property
    def degrees(self) -> list[int]:
        return [e.degree for e in self.elements]

    def intervals(self) -> list[tuple[float, float]]:
        return [self.roots.interval(e.element) for e in self.elements]

    def breakpoints(self) -> list[float]:
        ivs = self.intervals()
        return [ivs[0][0]] + [b for _, b in ivs]

    def with_degrees(self, new: dict[ElementId, int]) -> HpPartition:
        pairs = [(e.element, new.get(e.element, e.degree)) for e in self.elements]
        return HpPartition.from_pairs(self.roots, pairs)

    def find_container(self, k: ElementId) -> HpElement | None:
        """The element of this partition equal to or containing ``k``."""
        for lvl in range(k.level, -1, -1):
            anc = k.ancestor_at(lvl)
            if anc in self._index:
                return HpElement(anc, self._index[anc])
        return None

    # serialization: one "root level position degree" line per element
    def dumps(self) -> str:
        head = "# roots: " + " ".join(repr(b) for b in self.roots.breakpoints)
        body = [
            f"{e.element.root} {e.element.level} {e.element.position} {e.degree}"
            for e in self.elements
        ]
        return "\n".join([head, *body]) + "\n"

    @classmethod
    def loads(cls, text: str, roots: RootPartition | None = None) -> HpPartition:
        pairs = []
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if line[1:].strip().startswith("roots:") and roots is None:
                    vals = line.split(":", 1)[1].split()
                    roots = RootPartition(tuple(float(v) for v in vals))
                continue
            r, lvl, pos, deg = (int(t) for t in line.split())
            pairs.append((ElementId(r, lvl, pos), deg))
        return cls.from_pairs(roots or RootPartition(), pairs)


def children(k: ElementId) -> tuple[ElementId, ElementId]:
    return k.children()


def total_dof(d: HpPartition) -> int:
    return d.total_dof


def refines(d1: HpPartition, d2: HpPartition) -> bool:
    """True iff ``d2`` is a refinement of ``d1`` (``d1 <= d2``).

    Every element of ``d2`` must coincide with or descend from an element of
    ``d1`` whose degree does not exceed its own.
    """
    if d1.roots != d2.roots:
        raise ConfigurationMismatch("partitions are over different root partitions")
    for e in d2.elements:
        coarse = d1.find_container(e.element)
        if coarse is None or coarse.degree > e.degree:
            return False
    return True


def bisect_element(d: HpPartition, k: ElementId) -> HpPartition:
    """Replace ``k`` by its two children, each inheriting the degree."""
    deg = d.degree_of(k)
    pairs = [(e.element, e.degree) for e in d.elements if e.element != k]
    pairs += [(c, deg) for c in k.children()]
    return HpPartition.from_pairs(d.roots, pairs)
