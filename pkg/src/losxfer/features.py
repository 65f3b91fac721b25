"""Feature spaces: the ordered, named input axis of a domain's model."""

from dataclasses import dataclass, field

from losxfer.errors import ValidationError


def canonical_name(name: str) -> str:
    """Feature identity is exact string match on canonical names."""
    return " ".join(str(name).lower().split())


@dataclass(frozen=True)
class FeatureSpace:
    """Ordered feature names of one domain; order is the kernel row order.

    Names are canonicalized (lowercased, single-spaced) at construction so
    that alignment between domains is an exact string match.
    """

    names: tuple = ()
    domain: str = ""
    _index: dict = field(init=False, repr=False, compare=False, hash=False, default=None)

    def __post_init__(self):
        canon = tuple(canonical_name(n) for n in self.names)
        if len(set(canon)) != len(canon):
            dupes = sorted({n for n in canon if canon.count(n) > 1})
            raise ValidationError(f"duplicate feature names after canonicalization: {dupes}")
        object.__setattr__(self, "names", canon)
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(canon)})

    def __len__(self) -> int:
        return len(self.names)

    def __contains__(self, name: str) -> bool:
        return canonical_name(name) in self._index

    def index_of(self, name: str) -> int:
        return self._index[canonical_name(name)]
