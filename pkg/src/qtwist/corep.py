"""Iterated coproduct representations of the SU_q(2) generators."""

from __future__ import annotations

import functools
import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import Sequence

from .linalg import probe_residual, tensor
from .suq2 import (
    DEFAULT_LEVELS,
    GenSet,
    SpectralElems,
    TruncSpec,
    build_generators,
    build_spectral_elems,
    haar,
)


@dataclass(frozen=True, eq=False)
class CoprodRep:
    """Generators of the L-fold coproduct, pi_L = pi^{(x)L} o Delta^{(L-1)}."""

    gens: GenSet
    order: str

    @property
    def specs(self) -> tuple[TruncSpec, ...]:
        return self.gens.specs

    @property
    def num_legs(self) -> int:
        return self.gens.num_legs

    @property
    def legs(self):
        return self.gens.legs

    def spectral(self, levels: int = DEFAULT_LEVELS) -> SpectralElems:
        return corep_spectral(self, levels)

    def haar(self):
        return haar(self.gens)


def _coproduct(left: GenSet, right: GenSet) -> GenSet:
    """Delta(a) = a (x) a - q b* (x) b,  Delta(b) = b (x) a + a* (x) b, with the given leg groups."""
    q = left.q
    a = tensor(left.a, right.a) - q * tensor(left.b.adjoint(), right.b)
    b = tensor(left.b, right.a) + tensor(left.a.adjoint(), right.b)
    return GenSet(a, b, left.specs + right.specs)


@functools.lru_cache(maxsize=32)
def _build(specs: tuple[TruncSpec, ...], order: str) -> CoprodRep:
    if len({s.q for s in specs}) != 1:
        raise ValueError("iterated coproducts need one q for every leg")
    gens = [build_generators(s) for s in specs]
    if order == "left":
        acc = gens[0]
        for g in gens[1:]:
            acc = _coproduct(acc, g)
    else:
        acc = gens[-1]
        for g in reversed(gens[:-1]):
            acc = _coproduct(g, acc)
    return CoprodRep(acc, order)


def corep_generators(specs: Sequence[TruncSpec], order: str = "left") -> CoprodRep:
    """Left order absorbs each new leg on the right: a_L = a_{L-1} (x) a - q b_{L-1}* (x) b.

    Right order absorbs new legs on the left.  Both give the same operators.
    """
    specs = tuple(specs)
    if not specs:
        raise ValueError("at least one leg is required")
    if order not in ("left", "right"):
        raise ValueError(f"order must be 'left' or 'right', got {order!r}")
    for s in specs:
        if not isinstance(s, TruncSpec):
            raise TypeError("specs must be TruncSpec values")
    return _build(specs, order)


def coassoc_residual(spec: TruncSpec, probes: int = 20, seed: int = 42) -> float:
    """Probe residual between the left- and right-ordered three-leg generators."""
    left = corep_generators([spec] * 3, "left").gens
    right = corep_generators([spec] * 3, "right").gens
    return max(
        probe_residual(left.a, right.a, probes, seed),
        probe_residual(left.b, right.b, probes, seed),
    )


_SPECTRAL_CACHE: dict = {}
_LOCK = threading.Lock()
_LARGE_CACHE: OrderedDict = OrderedDict()
# Spectral elements on three or more legs are large; only the most recent few are kept.
LARGE_CACHE_SIZE = 2


def corep_spectral(rep: CoprodRep, levels: int = DEFAULT_LEVELS) -> SpectralElems:
    """Spectral elements of pi_L(a)* pi_L(a); e.g. Delta(w) for L = 2."""
    key = (rep.specs, rep.order, levels)
    if rep.num_legs <= 2:
        if key not in _SPECTRAL_CACHE:
            _SPECTRAL_CACHE[key] = build_spectral_elems(rep.gens, levels)
        return _SPECTRAL_CACHE[key]
    with _LOCK:
        if key in _LARGE_CACHE:
            _LARGE_CACHE.move_to_end(key)
            return _LARGE_CACHE[key]
    elems = build_spectral_elems(rep.gens, levels)
    with _LOCK:
        _LARGE_CACHE[key] = elems
        while len(_LARGE_CACHE) > LARGE_CACHE_SIZE:
            _LARGE_CACHE.popitem(last=False)
    return elems

