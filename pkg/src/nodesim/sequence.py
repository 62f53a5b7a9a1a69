"""Pulse-sequence primitives and their JSON form.

Durations are in seconds and rotation phases in radians. An ``XY8Block`` of
``repeats`` expands to ``8 * repeats`` pi pulses with the X-Y-X-Y-Y-X-Y-X
phase pattern, each pulse centred in a ``tau - pi - tau`` window, so the block
lasts ``16 * repeats * tau``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Union

XY8_PHASES = (0.0, math.pi / 2, 0.0, math.pi / 2, math.pi / 2, 0.0, math.pi / 2, 0.0)


class SequenceError(ValueError):
    pass


@dataclass(frozen=True)
class MWRotation:
    """Electron rotation about the in-plane axis at ``phase`` (0 = X, pi/2 = Y)."""

    angle: float = math.pi
    phase: float = 0.0

    def __post_init__(self):
        if not math.isfinite(self.angle) or not math.isfinite(self.phase):
            raise SequenceError("MWRotation angle and phase must be finite")

    @property
    def duration(self) -> float:
        return 0.0

    @property
    def is_pi(self) -> bool:
        r = math.remainder(abs(self.angle), 2 * math.pi)
        return abs(abs(r) - math.pi) < 1e-9


@dataclass(frozen=True)
class Wait:
    duration: float

    def __post_init__(self):
        if not self.duration >= 0:
            raise SequenceError("Wait duration must be >= 0")


@dataclass(frozen=True)
class XY8Block:
    repeats: int
    tau: float

    def __post_init__(self):
        if int(self.repeats) != self.repeats or self.repeats < 1:
            raise SequenceError("XY8 repeats must be an integer >= 1")
        if not self.tau >= 0:
            raise SequenceError("XY8 tau must be >= 0")

    @property
    def duration(self) -> float:
        return 16 * self.repeats * self.tau

    def expand(self) -> list["Primitive"]:
        out: list[Primitive] = []
        for _ in range(self.repeats):
            for ph in XY8_PHASES:
                out += [Wait(self.tau), MWRotation(math.pi, ph), Wait(self.tau)]
        return out


@dataclass(frozen=True)
class OpticalPump:
    """Reset the electron to ``target`` ('up' or 'down'); ``error`` leaves it in the other state."""

    target: str = "up"
    error: float = 0.0

    def __post_init__(self):
        if self.target not in ("up", "down"):
            raise SequenceError("OpticalPump target must be 'up' or 'down'")
        if not 0 <= self.error <= 1:
            raise SequenceError("OpticalPump error must lie in [0, 1]")

    @property
    def duration(self) -> float:
        return 0.0


@dataclass(frozen=True)
class Readout:
    """Projective electron readout in the Z basis (non-selective in simulation)."""

    @property
    def duration(self) -> float:
        return 0.0


Primitive = Union[MWRotation, Wait, XY8Block, OpticalPump, Readout]
PRIMITIVES = {cls.__name__: cls for cls in (MWRotation, Wait, XY8Block, OpticalPump, Readout)}


@dataclass(frozen=True)
class PulseSequence:
    primitives: tuple = ()
    name: str = ""
    target: str = ""

    def __post_init__(self):
        prims = tuple(self.primitives)
        for p in prims:
            if type(p).__name__ not in PRIMITIVES:
                raise SequenceError(f"unknown primitive {p!r}")
        object.__setattr__(self, "primitives", prims)

    def __len__(self) -> int:
        return len(self.primitives)

    def __add__(self, other: "PulseSequence") -> "PulseSequence":
        return PulseSequence(self.primitives + other.primitives, self.name or other.name, self.target)

    @property
    def duration(self) -> float:
        return sum(p.duration for p in self.primitives)

    def expanded(self) -> tuple:
        out = []
        for p in self.primitives:
            out.extend(p.expand() if isinstance(p, XY8Block) else [p])
        return tuple(out)

    @property
    def n_pi_pulses(self) -> int:
        return sum(1 for p in self.expanded() if isinstance(p, MWRotation) and p.is_pi)

    def to_list(self) -> list[dict]:
        return [{"type": type(p).__name__, "params": asdict(p)} for p in self.primitives]

    def to_json(self) -> str:
        return json.dumps({"name": self.name, "target": self.target, "pulses": self.to_list()}, sort_keys=True)

    @classmethod
    def from_list(cls, items, name: str = "", target: str = "") -> "PulseSequence":
        prims = []
        for i, item in enumerate(items):
            if not isinstance(item, dict) or "type" not in item:
                raise SequenceError(f"pulse {i}: expected an object with a 'type' field")
            kind = item["type"]
            if kind not in PRIMITIVES:
                raise SequenceError(f"pulse {i}: unknown primitive type {kind!r}; valid: {sorted(PRIMITIVES)}")
            extra = set(item) - {"type", "params"}
            if extra:
                raise SequenceError(f"pulse {i}: unknown fields {sorted(extra)}")
            try:
                prims.append(PRIMITIVES[kind](**item.get("params", {})))
            except TypeError as exc:
                raise SequenceError(f"pulse {i} ({kind}): {exc}") from None
        return cls(tuple(prims), name, target)

    @classmethod
    def from_json(cls, text: str) -> "PulseSequence":
        data = json.loads(text)
        if isinstance(data, list):
            return cls.from_list(data)
        if isinstance(data, dict) and "pulses" in data:
            return cls.from_list(data["pulses"], data.get("name", ""), data.get("target", ""))
        raise SequenceError("sequence JSON must be a list of pulses or an object with 'pulses'")


def decoupling_sequence(n_pulses: int, tau: float, phase: float = 0.0) -> list[Primitive]:
    """(tau - pi - tau)^N with every pulse at one phase."""
    out: list[Primitive] = []
    for _ in range(n_pulses):
        out += [Wait(tau), MWRotation(math.pi, phase), Wait(tau)]
    return out


def echo_wait(duration: float) -> list[Primitive]:
    """Wait(t/2) - pi - Wait(t/2) - pi: both electron branches see the averaged precession."""
    half = duration / 2
    return [Wait(half), MWRotation(math.pi), Wait(half), MWRotation(math.pi)]
