"""Temporal attention maps: the record captured in a forward pass and the
controller that every temporal attention site consults.

A map at one site has shape ``(batch * height * width, heads, k, k)``; row
``i`` holds the weights frame ``i`` puts on every frame ``j``.
"""
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, Optional, Tuple

import torch

from core.errors import StructureError

# (batch, heads, height, width, frames)
SiteGeometry = Tuple[int, int, int, int, int]


@dataclass
class AttentionRecord:
    maps: Dict[str, torch.Tensor] = field(default_factory=dict)
    geometry: Dict[str, SiteGeometry] = field(default_factory=dict)

    @property
    def sites(self) -> Tuple[str, ...]:
        return tuple(self.maps)

    def __len__(self) -> int:
        return len(self.maps)

    def __iter__(self) -> Iterator[str]:
        return iter(self.maps)

    def matrix_count(self) -> int:
        return sum(int(m.shape[0]) * int(m.shape[1]) for m in self.maps.values())

    def map(self, fn: Callable[[torch.Tensor], torch.Tensor]) -> "AttentionRecord":
        return AttentionRecord({site: fn(m) for site, m in self.maps.items()}, dict(self.geometry))

    def subset(self, prefix: str) -> "AttentionRecord":
        keep = [s for s in self.maps if s.startswith(prefix + ".")]
        return AttentionRecord({s: self.maps[s] for s in keep}, {s: self.geometry[s] for s in keep if s in self.geometry})

    def validate(self, atol: float = 1e-5) -> None:
        for site, m in self.maps.items():
            if m.ndim != 4 or m.shape[-1] != m.shape[-2]:
                raise StructureError(f"site {site}: expected (N, heads, k, k) maps, got {tuple(m.shape)}")
            if bool((m < 0).any()):
                raise StructureError(f"site {site}: negative attention weight")
            rows = m.sum(dim=-1)
            if not torch.allclose(rows, torch.ones_like(rows), atol=atol, rtol=0):
                raise StructureError(f"site {site}: rows do not sum to 1")


def identity_record(like: AttentionRecord) -> AttentionRecord:
    """Same sites and geometry as ``like`` with every map set to I."""

    def eye(m: torch.Tensor) -> torch.Tensor:
        k = m.shape[-1]
        return torch.eye(k, dtype=m.dtype, device=m.device).expand_as(m).clone()

    return like.map(eye)


class AttentionControl:
    """Per-pass state for the temporal attention sites.

    ``capture`` stores every site's softmax output; ``inject`` replaces it with
    the provided record (value and output projections still run). Create a
    fresh control per pass; it is not shared across threads.
    """

    def __init__(self, mode: str = "off", record: Optional[AttentionRecord] = None):
        if mode not in {"off", "capture", "inject"}:
            raise ValueError(f"unknown attention mode {mode!r}")
        if mode == "inject" and record is None:
            raise StructureError("inject mode needs an attention record")
        self.mode = mode
        self.source = record
        self.captured = AttentionRecord()
        self._consumed = set()

    @classmethod
    def capture(cls) -> "AttentionControl":
        return cls("capture")

    @classmethod
    def inject(cls, record: AttentionRecord) -> "AttentionControl":
        return cls("inject", record)

    @property
    def injecting(self) -> bool:
        return self.mode == "inject"

    def lookup(self, site: str, geometry: SiteGeometry, dtype: torch.dtype) -> torch.Tensor:
        assert self.source is not None
        if site not in self.source.maps:
            raise StructureError(f"attention record has no site {site!r}")
        recorded = self.source.geometry.get(site)
        if recorded is not None and tuple(recorded) != tuple(geometry):
            raise StructureError(f"site {site!r}: record geometry {recorded} != model geometry {geometry}")
        batch, heads, height, width, frames = geometry
        m = self.source.maps[site]
        if tuple(m.shape) != (batch * height * width, heads, frames, frames):
            raise StructureError(f"site {site!r}: record map shape {tuple(m.shape)} does not fit geometry {geometry}")
        self._consumed.add(site)
        return m.to(dtype)

    def store(self, site: str, geometry: SiteGeometry, probs: torch.Tensor) -> None:
        if self.mode != "capture":
            return
        if site in self.captured.maps:
            raise StructureError(f"attention site {site!r} visited twice in one pass")
        self.captured.maps[site] = probs.detach()
        self.captured.geometry[site] = tuple(geometry)

    def finish(self, prefix: Optional[str] = None) -> None:
        """In inject mode, every recorded site under ``prefix`` must have been used."""
        if not self.injecting:
            return
        assert self.source is not None
        scope = self.source if prefix is None else self.source.subset(prefix)
        expected = set(scope.maps)
        unused = expected - self._consumed
        if unused:
            raise StructureError(f"attention record sites not present in model: {sorted(unused)}")
