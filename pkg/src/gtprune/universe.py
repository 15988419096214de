"""Items, defective sets, tests, the test oracle and seeded permutations.

Items are the integers ``1..n``. Sets are stored as dense characteristic vectors
(``numpy`` boolean arrays indexed by ``item - 1``), every random stream is a
``Philox`` counter-based generator keyed by a stable hash of a `Seed`.
"""
import hashlib
from typing import Any, FrozenSet, Iterable, Iterator, Mapping, Optional, Tuple

import attr
import numpy as np
import numpy.typing as npt

from gtprune.errors import ErrorInfo, UsageError

__all__ = [
    "MAX_UNIVERSE_SIZE",
    "Seed",
    "ItemSet",
    "Permutation",
    "oracle_answer",
    "random_permutation",
    "apply_permutation",
    "sample_defective_set",
]

# Dense representation ceiling
MAX_UNIVERSE_SIZE = 1 << 22

BoolArray = npt.NDArray[np.bool_]
IndexArray = npt.NDArray[np.intp]


def _check_universe_size(n: int, target: str = "n") -> None:
    if not isinstance(n, (int, np.integer)) or isinstance(n, bool):
        raise UsageError(ErrorInfo.invalid_type(int, type(n), target=target))
    if not 1 <= n <= MAX_UNIVERSE_SIZE:
        raise UsageError.out_of_range(target, n, f"1 <= n <= {MAX_UNIVERSE_SIZE}")


def _check_same_universe(left: int, right: int) -> None:
    if left != right:
        raise UsageError(
            ErrorInfo(
                message=f"Universe sizes differ: {left} != {right}",
                code="universe_mismatch",
            )
        )


def _master_validator(instance: Any, attribute: "attr.Attribute[int]", value: int) -> None:
    if not 0 <= value < (1 << 64):
        raise UsageError.out_of_range(attribute.name, value, "a 64-bit unsigned integer")


@attr.frozen
class Seed:
    """Master seed plus a derivation path.

    Child seeds are derived by hashing, never by drawing from a parent stream,
    so trial ``k`` gets the same stream no matter in which order trials run.
    """

    master: int = attr.field(validator=_master_validator)
    path: Tuple[int, ...] = attr.field(default=(), converter=tuple)

    def child(self, *keys: int) -> "Seed":
        return Seed(self.master, self.path + tuple(int(k) for k in keys))

    def key(self) -> int:
        digest = hashlib.blake2b(digest_size=16, person=b"gtprune-seed")
        digest.update(self.master.to_bytes(8, "little"))
        for component in self.path:
            digest.update(int(component).to_bytes(8, "little", signed=True))
        return int.from_bytes(digest.digest(), "little")

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=self.key()))


class ItemSet:
    """Immutable subset of the universe ``[n]``"""

    __slots__ = "universe_size", "_mask", "_indices", "_size"

    def __init__(self, universe_size: int, mask: BoolArray):
        _check_universe_size(universe_size, target="universe_size")
        mask = np.asarray(mask, dtype=np.bool_)
        if mask.shape != (universe_size,):
            raise UsageError(
                ErrorInfo(
                    message=f"Expected a mask of shape ({universe_size},), got {mask.shape}",
                    code="invalid_mask",
                    target="mask",
                )
            )
        if mask.flags.writeable:
            mask = mask.copy()
            mask.setflags(write=False)
        self.universe_size = int(universe_size)
        self._mask: BoolArray = mask
        self._indices: Optional[IndexArray] = None
        self._size: Optional[int] = None

    @classmethod
    def from_members(cls, universe_size: int, members: Iterable[int]) -> "ItemSet":
        _check_universe_size(universe_size, target="universe_size")
        items = np.fromiter((int(m) for m in members), dtype=np.int64)
        if items.size and (items.min() < 1 or items.max() > universe_size):
            bad = items[(items < 1) | (items > universe_size)][0]
            raise UsageError.out_of_range(
                "members", int(bad), f"an item in [1, {universe_size}]"
            )
        return cls.from_indices(universe_size, items - 1)

    @classmethod
    def from_indices(cls, universe_size: int, indices: npt.ArrayLike) -> "ItemSet":
        """Builds a set from zero-based positions (item ``k`` lives at ``k - 1``)"""
        mask = np.zeros(universe_size, dtype=np.bool_)
        mask[np.asarray(indices, dtype=np.intp)] = True
        mask.setflags(write=False)
        return cls(universe_size, mask)

    @classmethod
    def empty(cls, universe_size: int) -> "ItemSet":
        mask = np.zeros(universe_size, dtype=np.bool_)
        mask.setflags(write=False)
        return cls(universe_size, mask)

    @classmethod
    def full(cls, universe_size: int) -> "ItemSet":
        mask = np.ones(universe_size, dtype=np.bool_)
        mask.setflags(write=False)
        return cls(universe_size, mask)

    @property
    def mask(self) -> BoolArray:
        return self._mask

    @property
    def indices(self) -> IndexArray:
        if self._indices is None:
            indices = np.flatnonzero(self._mask)
            indices.setflags(write=False)
            self._indices = indices
        return self._indices

    def members(self) -> FrozenSet[int]:
        return frozenset(int(k) + 1 for k in self.indices)

    def intersects(self, other: "ItemSet") -> bool:
        _check_same_universe(self.universe_size, other.universe_size)
        small, large = (self, other) if len(self) <= len(other) else (other, self)
        return bool(large._mask[small.indices].any())

    def __len__(self) -> int:
        if self._size is None:
            self._size = int(np.count_nonzero(self._mask))
        return self._size

    def __contains__(self, item: object) -> bool:
        if not isinstance(item, (int, np.integer)) or not 1 <= item <= self.universe_size:
            return False
        return bool(self._mask[int(item) - 1])

    def __iter__(self) -> Iterator[int]:
        return (int(k) + 1 for k in self.indices)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ItemSet):
            return NotImplemented
        return self.universe_size == other.universe_size and bool(
            np.array_equal(self._mask, other._mask)
        )

    def __hash__(self) -> int:
        return hash((self.universe_size, np.packbits(self._mask).tobytes()))

    def __repr__(self) -> str:
        if len(self) <= 16:
            return f"ItemSet(n={self.universe_size}, members={sorted(self)})"
        return f"ItemSet(n={self.universe_size}, size={len(self)})"


class Permutation:
    """Bijection of ``[n]`` stored as zero-based image array"""

    __slots__ = "universe_size", "_forward", "_inverse"

    def __init__(self, forward: npt.ArrayLike, *, validate: bool = True):
        images = np.asarray(forward, dtype=np.intp)
        if images.ndim != 1:
            raise UsageError(
                ErrorInfo(message="Expected a flat image array", code="invalid_permutation")
            )
        _check_universe_size(images.size, target="universe_size")
        if validate:
            counts = np.bincount(images, minlength=images.size) if images.min() >= 0 else None
            if counts is None or counts.size != images.size or not (counts == 1).all():
                raise UsageError(
                    ErrorInfo(message="Mapping is not a bijection", code="invalid_permutation")
                )
        images.setflags(write=False)
        self.universe_size = int(images.size)
        self._forward: IndexArray = images
        self._inverse: Optional[IndexArray] = None

    @classmethod
    def identity(cls, universe_size: int) -> "Permutation":
        return cls(np.arange(universe_size), validate=False)

    @classmethod
    def from_mapping(cls, mapping: Mapping[int, int]) -> "Permutation":
        """Builds from a one-based ``{item: image}`` mapping covering ``1..n``"""
        n = len(mapping)
        if sorted(mapping) != list(range(1, n + 1)):
            raise UsageError(
                ErrorInfo(
                    message=f"Mapping domain must be exactly 1..{n}",
                    code="invalid_permutation",
                )
            )
        return cls([mapping[k] - 1 for k in range(1, n + 1)])

    @property
    def forward(self) -> IndexArray:
        return self._forward

    @property
    def backward(self) -> IndexArray:
        if self._inverse is None:
            inverse = np.empty_like(self._forward)
            inverse[self._forward] = np.arange(self.universe_size)
            inverse.setflags(write=False)
            self._inverse = inverse
        return self._inverse

    def inverse(self) -> "Permutation":
        return Permutation(self.backward, validate=False)

    def compose(self, other: "Permutation") -> "Permutation":
        """``self ∘ other``: applies `other` first"""
        _check_same_universe(self.universe_size, other.universe_size)
        return Permutation(self._forward[other._forward], validate=False)

    def __call__(self, item: int) -> int:
        if not 1 <= item <= self.universe_size:
            raise UsageError.out_of_range("item", item, f"an item in [1, {self.universe_size}]")
        return int(self._forward[item - 1]) + 1

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Permutation):
            return NotImplemented
        return bool(np.array_equal(self._forward, other._forward))

    def __hash__(self) -> int:
        return hash(self._forward.tobytes())

    def __repr__(self) -> str:
        if self.universe_size <= 16:
            return f"Permutation({[int(k) + 1 for k in self._forward]})"
        return f"Permutation(n={self.universe_size})"


def oracle_answer(test: ItemSet, defective: ItemSet) -> int:
    """1 if the test contains at least one defective item, 0 otherwise"""
    _check_same_universe(test.universe_size, defective.universe_size)
    return int(test.intersects(defective))


def random_permutation(n: int, seed: Seed) -> Permutation:
    _check_universe_size(n)
    # Generator.permutation is a Fisher-Yates shuffle
    return Permutation(seed.generator().permutation(n), validate=False)


def apply_permutation(permutation: Permutation, items: ItemSet) -> ItemSet:
    _check_same_universe(permutation.universe_size, items.universe_size)
    return ItemSet.from_indices(items.universe_size, permutation.forward[items.indices])


def sample_defective_set(n: int, d: int, seed: Seed) -> ItemSet:
    _check_universe_size(n)
    if not 1 <= d <= n:
        raise UsageError.out_of_range("d", d, f"1 <= d <= {n}")
    indices = seed.generator().choice(n, size=d, replace=False)
    return ItemSet.from_indices(n, indices)
