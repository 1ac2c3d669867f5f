"""Authored scene model: object hierarchy, transforms, materials, params,
and the field-level delta machinery that keeps peers in sync.

A scene is a value; mutation produces a new state. ``diff`` emits the
minimal per-field deltas between two states, ``apply_deltas`` folds deltas
into a state (tolerant of stale/duplicate deltas so lossy replays keep
going), and ``state_hash`` digests the canonical serialization.

Conflict rule: field-level last-writer-wins in server-sequence order.
"""

from __future__ import annotations

import random
import secrets
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from .canonical import CFloat, canon_float, tree_hash

# Below these thresholds a transform component counts as unchanged; keeps
# float jitter from turning into delta storms.
POS_EPS = 1e-5
QUAT_EPS = 1e-5
SCALE_EPS = 1e-5


class DuplicateCreate(ValueError):
    pass


class UnknownObject(KeyError):
    pass


def new_object_id(rng: Optional[random.Random] = None) -> str:
    """128-bit random id, canonical lowercase hex."""
    if rng is None:
        return secrets.token_hex(16)
    return format(rng.getrandbits(128), "032x")


# --- values ------------------------------------------------------------

# Material property values: scalar, RGBA color, or texture reference.
# Script params: bool, int, float, text, or 3-vector.
# Both use a tagged wire form so 1 and 1.0 stay distinguishable.

MatValue = Union[float, Tuple[float, float, float, float], str]
ParamValue = Union[bool, int, float, str, Tuple[float, float, float]]


def _mat_to_tree(v: MatValue) -> dict:
    if isinstance(v, str):
        return {"tex": v}
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return {"f": CFloat(float(v))}
    if isinstance(v, (tuple, list)) and len(v) == 4:
        return {"rgba": [CFloat(float(c)) for c in v]}
    raise TypeError(f"bad material value: {v!r}")


def _mat_from_tree(d: dict) -> MatValue:
    if "tex" in d:
        return str(d["tex"])
    if "f" in d:
        return float(d["f"])
    if "rgba" in d:
        return tuple(float(c) for c in d["rgba"])
    raise ValueError(f"bad material value tree: {d!r}")


def _param_to_tree(v: ParamValue) -> dict:
    if isinstance(v, bool):
        return {"b": v}
    if isinstance(v, int):
        return {"i": v}
    if isinstance(v, float):
        return {"f": CFloat(v)}
    if isinstance(v, str):
        return {"s": v}
    if isinstance(v, (tuple, list, np.ndarray)) and len(v) == 3:
        return {"v3": [CFloat(float(c)) for c in v]}
    raise TypeError(f"bad param value: {v!r}")


def _param_from_tree(d: dict) -> ParamValue:
    if "b" in d:
        return bool(d["b"])
    if "i" in d:
        return int(d["i"])
    if "f" in d:
        return float(d["f"])
    if "s" in d:
        return str(d["s"])
    if "v3" in d:
        return tuple(float(c) for c in d["v3"])
    raise ValueError(f"bad param value tree: {d!r}")


def _values_equal(a, b) -> bool:
    """Exact comparison for material/param values (type-sensitive)."""
    if type(a) is not type(b):
        # int vs float params count as different values
        if isinstance(a, tuple) and isinstance(b, tuple):
            pass
        else:
            return False
    if isinstance(a, tuple):
        return len(a) == len(b) and all(x == y for x, y in zip(a, b))
    return a == b


# --- transform and objects ----------------------------------------------


@dataclass
class Transform:
    position: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    rotation: Tuple[float, float, float, float] = (1.0, 0.0, 0.0, 0.0)  # w,x,y,z
    scale: Tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        self.position = tuple(float(v) for v in self.position)
        self.rotation = tuple(float(v) for v in self.rotation)
        self.scale = tuple(float(v) for v in self.scale)
        n = sum(c * c for c in self.rotation) ** 0.5
        if abs(n - 1.0) > 1e-6:
            raise ValueError(f"rotation not unit norm: {self.rotation}")
        if any(s <= 0 for s in self.scale):
            raise ValueError(f"scale components must be positive: {self.scale}")

    def approx_equal(self, other: "Transform") -> bool:
        return (
            all(abs(a - b) <= POS_EPS for a, b in zip(self.position, other.position))
            and all(abs(a - b) <= QUAT_EPS for a, b in zip(self.rotation, other.rotation))
            and all(abs(a - b) <= SCALE_EPS for a, b in zip(self.scale, other.scale))
        )

    def to_tree(self) -> dict:
        return {
            "position": [CFloat(v) for v in self.position],
            "rotation": [CFloat(v) for v in self.rotation],
            "scale": [CFloat(v) for v in self.scale],
        }

    @staticmethod
    def from_tree(d: dict) -> "Transform":
        return Transform(
            tuple(float(v) for v in d["position"]),
            tuple(float(v) for v in d["rotation"]),
            tuple(float(v) for v in d["scale"]),
        )


@dataclass
class SceneObject:
    id: str
    name: str = ""
    parent: Optional[str] = None
    transform: Transform = field(default_factory=Transform)
    material: Dict[str, MatValue] = field(default_factory=dict)
    params: Dict[str, ParamValue] = field(default_factory=dict)

    def to_tree(self) -> dict:
        return {
            "id": self.id,
            "material": {k: _mat_to_tree(v) for k, v in self.material.items()},
            "name": self.name,
            "params": {k: _param_to_tree(v) for k, v in self.params.items()},
            "parent": self.parent,
            "transform": self.transform.to_tree(),
        }

    @staticmethod
    def from_tree(d: dict) -> "SceneObject":
        return SceneObject(
            id=str(d["id"]),
            name=str(d["name"]),
            parent=None if d.get("parent") is None else str(d["parent"]),
            transform=Transform.from_tree(d["transform"]),
            material={k: _mat_from_tree(v) for k, v in d["material"].items()},
            params={k: _param_from_tree(v) for k, v in d["params"].items()},
        )


def _copy_object(o: SceneObject) -> SceneObject:
    # transform fields are immutable tuples, so sharing the Transform is safe
    return SceneObject(o.id, o.name, o.parent, o.transform, dict(o.material), dict(o.params))


@dataclass
class SceneState:
    objects: Dict[str, SceneObject] = field(default_factory=dict)

    def copy(self) -> "SceneState":
        return SceneState({oid: _copy_object(o) for oid, o in self.objects.items()})

    def validate(self) -> None:
        for oid, obj in self.objects.items():
            if obj.id != oid:
                raise ValueError(f"object keyed {oid} carries id {obj.id}")
            if obj.parent is not None and obj.parent not in self.objects:
                raise ValueError(f"dangling parent {obj.parent} on {oid}")
        # parent chains must be acyclic
        for oid in self.objects:
            seen = set()
            cur: Optional[str] = oid
            while cur is not None:
                if cur in seen:
                    raise ValueError(f"parent cycle through {oid}")
                seen.add(cur)
                cur = self.objects[cur].parent

    def children_of(self, oid: str) -> List[str]:
        return sorted(c for c, o in self.objects.items() if o.parent == oid)

    def to_tree(self) -> dict:
        # sorted ids give the canonical, byte-stable serialization order
        return {"objects": {oid: obj.to_tree() for oid, obj in self.objects.items()}}

    @staticmethod
    def from_tree(d: dict) -> "SceneState":
        return SceneState({oid: SceneObject.from_tree(t) for oid, t in d["objects"].items()})


# --- deltas --------------------------------------------------------------

CREATE = "create"
DESTROY = "destroy"
SET_TRANSFORM = "set_transform"
SET_MATERIAL = "set_material"
SET_PARAM = "set_param"
SET_PARENT = "set_parent"


@dataclass
class Delta:
    kind: str
    object: str
    # payload fields; which ones are set depends on kind
    spec: Optional[SceneObject] = None  # create
    transform: Optional[Transform] = None  # set_transform
    prop: Optional[str] = None  # set_material / set_param key
    value: Optional[object] = None  # set_material / set_param value
    parent: Optional[str] = None  # set_parent

    def coalesce_key(self) -> Optional[tuple]:
        """(object, field) key for latest-wins coalescing; None = never drop."""
        if self.kind == SET_TRANSFORM:
            return (self.object, "transform")
        if self.kind == SET_PARENT:
            return (self.object, "parent")
        if self.kind == SET_MATERIAL:
            return (self.object, "material", self.prop)
        if self.kind == SET_PARAM:
            return (self.object, "param", self.prop)
        return None  # create/destroy are structural, keep all

    def to_tree(self) -> dict:
        t: dict = {"kind": self.kind, "object": self.object}
        if self.kind == CREATE:
            t["spec"] = self.spec.to_tree()
        elif self.kind == SET_TRANSFORM:
            t["transform"] = self.transform.to_tree()
        elif self.kind == SET_MATERIAL:
            t["prop"] = self.prop
            t["value"] = _mat_to_tree(self.value)
        elif self.kind == SET_PARAM:
            t["prop"] = self.prop
            t["value"] = _param_to_tree(self.value)
        elif self.kind == SET_PARENT:
            t["parent"] = self.parent
        elif self.kind != DESTROY:
            raise ValueError(f"unknown delta kind {self.kind}")
        return t

    @staticmethod
    def from_tree(d: dict) -> "Delta":
        kind = d["kind"]
        oid = str(d["object"])
        if kind == CREATE:
            return Delta(CREATE, oid, spec=SceneObject.from_tree(d["spec"]))
        if kind == DESTROY:
            return Delta(DESTROY, oid)
        if kind == SET_TRANSFORM:
            return Delta(SET_TRANSFORM, oid, transform=Transform.from_tree(d["transform"]))
        if kind == SET_MATERIAL:
            return Delta(SET_MATERIAL, oid, prop=str(d["prop"]), value=_mat_from_tree(d["value"]))
        if kind == SET_PARAM:
            return Delta(SET_PARAM, oid, prop=str(d["prop"]), value=_param_from_tree(d["value"]))
        if kind == SET_PARENT:
            return Delta(SET_PARENT, oid, parent=None if d["parent"] is None else str(d["parent"]))
        raise ValueError(f"unknown delta kind {kind!r}")


def _topo_create_order(state: SceneState, ids: List[str]) -> List[str]:
    """Parents before children, id order as tiebreak."""
    pending = sorted(ids)
    placed: List[str] = []
    done = set()
    while pending:
        progressed = False
        rest = []
        for oid in pending:
            parent = state.objects[oid].parent
            if parent is None or parent in done or parent not in set(pending):
                placed.append(oid)
                done.add(oid)
                progressed = True
            else:
                rest.append(oid)
        pending = rest
        if not progressed:  # cycle among new objects; emit in id order
            placed.extend(pending)
            break
    return placed


def diff(prev: SceneState, next: SceneState) -> List[Delta]:
    """Minimal field-level deltas taking ``prev`` to ``next``.

    Output order is deterministic and chosen so a strict fold never
    trips its own safety checks:

      1. creates, parents before children;
      2. reparents, ordered to avoid transient cycles (a detach-to-root
         is inserted when two subtrees swap);
      3. destroys, cascade roots only (descendants fall with them);
      4. per-field updates sorted by (object id, field, key).
    """
    deltas: List[Delta] = []
    prev_ids = set(prev.objects)
    next_ids = set(next.objects)
    doomed = prev_ids - next_ids

    created = list(next_ids - prev_ids)
    for oid in _topo_create_order(next, created):
        deltas.append(Delta(CREATE, oid, spec=_copy_object(next.objects[oid])))

    # shadow forest: prev parents + created objects, used to order reparents
    shadow: Dict[str, Optional[str]] = {oid: o.parent for oid, o in prev.objects.items()}
    for oid in created:
        shadow[oid] = next.objects[oid].parent

    def chain_hits(start: Optional[str], target: str) -> bool:
        cur = start
        while cur is not None:
            if cur == target:
                return True
            cur = shadow.get(cur)
        return False

    pending = [
        (oid, next.objects[oid].parent)
        for oid in sorted(prev_ids & next_ids)
        if prev.objects[oid].parent != next.objects[oid].parent
    ]
    while pending:
        progressed = False
        for i, (oid, new_parent) in enumerate(pending):
            if new_parent is None or not chain_hits(new_parent, oid):
                deltas.append(Delta(SET_PARENT, oid, parent=new_parent))
                shadow[oid] = new_parent
                del pending[i]
                progressed = True
                break
        if not progressed:
            # mutual swap: detach the first still-attached pending child to
            # break the knot (with every pending child detached, any chain
            # that still blocked an edge would be a cycle in `next`)
            for oid, _ in pending:
                if shadow.get(oid) is not None:
                    deltas.append(Delta(SET_PARENT, oid, parent=None))
                    shadow[oid] = None
                    break

    for oid in sorted(doomed):
        parent = prev.objects[oid].parent
        if parent is None or parent not in doomed:
            deltas.append(Delta(DESTROY, oid))  # cascade takes the subtree

    for oid in sorted(prev_ids & next_ids):
        a, b = prev.objects[oid], next.objects[oid]
        fields: List[Delta] = []
        if not a.transform.approx_equal(b.transform):
            fields.append(Delta(SET_TRANSFORM, oid, transform=b.transform))
        for k in sorted(set(a.material) | set(b.material)):
            if k not in b.material:
                continue  # property removal not modeled; latest value wins
            if k not in a.material or not _values_equal(a.material[k], b.material[k]):
                fields.append(Delta(SET_MATERIAL, oid, prop=k, value=b.material[k]))
        for k in sorted(set(a.params) | set(b.params)):
            if k not in b.params:
                continue
            if k not in a.params or not _values_equal(a.params[k], b.params[k]):
                fields.append(Delta(SET_PARAM, oid, prop=k, value=b.params[k]))
        fields.sort(key=lambda d: (d.object, d.kind, d.prop or ""))
        deltas.extend(fields)
    return deltas


@dataclass
class ApplyResult:
    state: SceneState
    skipped: List[Tuple[Delta, str]] = field(default_factory=list)


def apply_deltas(state: SceneState, deltas: List[Delta], strict: bool = False) -> ApplyResult:
    """Fold deltas into a new state, last-writer-wins per field.

    Tolerant mode (default) skips deltas that cannot apply (unknown
    object, duplicate create, dangling parent, parent cycle) and reports
    them; replay over lossy transports must not halt mid-stream.
    """
    # copy-on-write: share untouched objects with the input state
    out = SceneState(dict(state.objects))
    touched: set = set()
    skipped: List[Tuple[Delta, str]] = []

    def mutate(oid: str) -> SceneObject:
        if oid not in touched:
            out.objects[oid] = _copy_object(out.objects[oid])
            touched.add(oid)
        return out.objects[oid]

    def reject(d: Delta, reason: str, exc):
        if strict:
            raise exc(reason)
        skipped.append((d, reason))

    for d in deltas:
        if d.kind == CREATE:
            if d.object in out.objects:
                reject(d, f"duplicate create of {d.object}", DuplicateCreate)
                continue
            if d.spec.parent is not None and d.spec.parent not in out.objects:
                reject(d, f"create {d.object} references missing parent {d.spec.parent}", UnknownObject)
                continue
            obj = _copy_object(d.spec)
            obj.id = d.object
            out.objects[d.object] = obj
            touched.add(d.object)
            continue
        if d.object not in out.objects:
            reject(d, f"{d.kind} on missing object {d.object}", UnknownObject)
            continue
        if d.kind == DESTROY:
            # destroy cascades to descendants
            doomed = [d.object]
            i = 0
            while i < len(doomed):
                doomed.extend(out.children_of(doomed[i]))
                i += 1
            for oid in doomed:
                out.objects.pop(oid, None)
                touched.discard(oid)
        elif d.kind == SET_TRANSFORM:
            mutate(d.object).transform = d.transform
        elif d.kind == SET_MATERIAL:
            mutate(d.object).material[d.prop] = d.value
        elif d.kind == SET_PARAM:
            mutate(d.object).params[d.prop] = d.value
        elif d.kind == SET_PARENT:
            if d.parent is not None and d.parent not in out.objects:
                reject(d, f"set_parent to missing {d.parent}", UnknownObject)
                continue
            # refuse cycles
            cur = d.parent
            ok = True
            while cur is not None:
                if cur == d.object:
                    ok = False
                    break
                cur = out.objects[cur].parent
            if not ok:
                reject(d, f"set_parent would create a cycle at {d.object}", ValueError)
                continue
            mutate(d.object).parent = d.parent
        else:
            reject(d, f"unknown delta kind {d.kind}", ValueError)
    return ApplyResult(out, skipped)


def state_hash(state: SceneState) -> str:
    """sha256 of the canonical serialization; equal states <=> equal digests."""
    return tree_hash(state.to_tree())


def canon_transform(t: Transform) -> Transform:
    """Quantize a transform to canonical wire precision."""
    return Transform(
        tuple(canon_float(v) for v in t.position),
        tuple(canon_float(v) for v in t.rotation),
        tuple(canon_float(v) for v in t.scale),
    )
