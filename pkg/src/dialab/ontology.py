"""Restaurant domain: slots, values, dialogue acts, user goals, and the database.

Slot and value orderings are canonical and never change at runtime: every
feature layout downstream indexes into them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

CONSTRAINT_SLOTS = ("area", "food", "pricerange")
REQUEST_SLOTS = ("area", "food", "address", "name", "pricerange", "postcode",
                 "signature", "phone")
# request slots that are informable from a DB record but are not constraints
RECORD_ONLY_SLOTS = ("address", "postcode", "phone", "signature")

SYSTEM_ACT_TYPES = ("offer", "select", "request", "expl-conf", "repeat",
                    "cannothelp", "confirmdomain")
USER_ACT_TYPES = ("deny", "null", "reqmore", "confirm", "ack", "affirm",
                  "request", "inform", "thankyou", "repeat", "reqalts",
                  "negate", "bye", "hello", "restart")

ONTOLOGY_SCHEMA = "dialab-ontology"
DB_SCHEMA = "dialab-restaurant-db"
SCHEMA_VERSION = 1

_DEFAULT_VALUES = {
    "area": ("centre", "east", "north", "south", "west"),
    "food": ("british", "chinese", "french", "indian", "italian",
             "japanese", "spanish", "thai", "turkish", "vietnamese"),
    "pricerange": ("budget", "cheap", "expensive", "moderate", "premium"),
}

_NAME_ADJECTIVES = ("golden", "blue", "silver", "old", "jolly", "royal",
                    "quiet", "lucky", "copper", "velvet", "ivory", "amber")
_NAME_NOUNS = ("fork", "lantern", "table", "kettle", "garden", "anchor",
               "pepper", "olive", "spoon", "hearth", "orchard", "bell")
_STREETS = ("mill lane", "king street", "bridge road", "station parade",
            "orchard row", "market hill", "castle way", "abbey walk")
_DISHES = ("dumplings", "tagine", "risotto", "noodles", "pie", "curry",
           "paella", "terrine", "skewers", "stew")


class OntologyError(ValueError):
    """Malformed ontology/database document or domain-rule violation."""


class GoalConfigError(ValueError):
    """Goal-sampling configuration outside its valid ranges."""


@dataclass(frozen=True)
class Ontology:
    """Slot inventory plus the ordered value list of each constraint slot."""

    constraint_slots: tuple[str, ...] = CONSTRAINT_SLOTS
    request_slots: tuple[str, ...] = REQUEST_SLOTS
    values: Mapping[str, tuple[str, ...]] = field(
        default_factory=lambda: dict(_DEFAULT_VALUES))

    def __post_init__(self):
        for slot in self.constraint_slots:
            vals = self.values.get(slot)
            if not vals:
                raise OntologyError(f"no values for slot '{slot}'")
        shared = set(self.constraint_slots) - set(self.request_slots)
        if shared:
            raise OntologyError(
                f"constraint slots missing from request slots: {sorted(shared)}")

    def check_value(self, slot: str, value: str) -> None:
        if slot not in self.constraint_slots:
            raise OntologyError(f"unknown constraint slot '{slot}'")
        if value not in self.values[slot]:
            raise OntologyError(f"unknown value '{value}' for slot '{slot}'")


def default_ontology() -> Ontology:
    return Ontology()


@dataclass(frozen=True)
class Restaurant:
    """One database record: a value per constraint slot plus contact fields."""

    name: str
    area: str
    food: str
    pricerange: str
    address: str
    postcode: str
    phone: str
    signature: str

    def slot_value(self, slot: str) -> str:
        if slot == "name":
            return self.name
        return getattr(self, slot)


def generate_db(ontology: Ontology, n: int = 150,
                rng: np.random.Generator | None = None) -> list[Restaurant]:
    """Synthesize a seeded restaurant database of ``n`` records.

    Names are unique; constraint values are sampled uniformly from the
    ontology so every value inventory is reachable by queries.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    combos = [f"the {a} {b}" for a in _NAME_ADJECTIVES for b in _NAME_NOUNS]
    order = rng.permutation(len(combos))
    records = []
    for i in range(n):
        base = combos[order[i % len(combos)]]
        name = base if i < len(combos) else f"{base} {i // len(combos) + 1}"
        area = str(rng.choice(ontology.values["area"]))
        food = str(rng.choice(ontology.values["food"]))
        price = str(rng.choice(ontology.values["pricerange"]))
        records.append(Restaurant(
            name=name,
            area=area,
            food=food,
            pricerange=price,
            address=f"{int(rng.integers(1, 99))} {rng.choice(_STREETS)}",
            postcode=f"cb{int(rng.integers(1, 6))} {int(rng.integers(1, 10))}"
                     f"{chr(97 + int(rng.integers(0, 26)))}"
                     f"{chr(97 + int(rng.integers(0, 26)))}",
            phone=f"01223 {int(rng.integers(100000, 999999))}",
            signature=f"{rng.choice(_NAME_ADJECTIVES)} {rng.choice(_DISHES)}",
        ))
    return records


def query(db: Sequence[Restaurant], constraints: Mapping[str, str]) -> list[Restaurant]:
    """Return exactly the records matching all given constraint values."""
    for slot in constraints:
        if slot not in CONSTRAINT_SLOTS:
            raise OntologyError(f"unknown constraint slot '{slot}'")
    return [r for r in db
            if all(r.slot_value(s) == v for s, v in constraints.items())]


@dataclass(frozen=True)
class UserGoal:
    """What the simulated user wants: constraint values plus request slots."""

    constraints: Mapping[str, str]
    requests: tuple[str, ...]

    def __post_init__(self):
        if not self.constraints:
            raise OntologyError("goal needs at least one constraint")
        if not self.requests:
            raise OntologyError("goal needs at least one request slot")
        for slot in self.constraints:
            if slot not in CONSTRAINT_SLOTS:
                raise OntologyError(f"goal constraint on non-constraint slot '{slot}'")
        for slot in self.requests:
            if slot not in REQUEST_SLOTS:
                raise OntologyError(f"goal request of unknown slot '{slot}'")


@dataclass(frozen=True)
class GoalConfig:
    """Sampling knobs for user goals.

    ``constraint_probs`` gives the per-slot inclusion probability,
    ``request_count_weights`` the distribution of how many request slots a
    goal carries, and ``satisfiable_frac`` the fraction of goals guaranteed
    to match at least one database record.
    """

    constraint_probs: Mapping[str, float] = field(
        default_factory=lambda: {s: 1.0 for s in CONSTRAINT_SLOTS})
    request_count_weights: Mapping[int, float] = field(
        default_factory=lambda: {1: 0.35, 2: 0.35, 3: 0.2, 4: 0.1})
    satisfiable_frac: float = 1.0

    def __post_init__(self):
        for slot, p in self.constraint_probs.items():
            if not 0.0 <= p <= 1.0:
                raise GoalConfigError(f"constraint_probs[{slot}]={p} outside [0,1]")
        if not 0.0 <= self.satisfiable_frac <= 1.0:
            raise GoalConfigError(f"satisfiable_frac={self.satisfiable_frac} outside [0,1]")
        for k, w in self.request_count_weights.items():
            if k < 1 or w < 0:
                raise GoalConfigError(f"bad request-count weight {k}: {w}")


def sample_goal(ontology: Ontology, db: Sequence[Restaurant],
                rng: np.random.Generator, cfg: GoalConfig | None = None) -> UserGoal:
    """Draw a goal; resampled against the DB so a ``satisfiable_frac`` share
    of goals has at least one matching restaurant."""
    cfg = cfg or GoalConfig()
    slots = [s for s in ontology.constraint_slots
             if rng.random() < cfg.constraint_probs.get(s, 0.0)]
    if not slots:
        slots = [ontology.constraint_slots[int(rng.integers(len(ontology.constraint_slots)))]]

    must_match = rng.random() < cfg.satisfiable_frac
    constraints: dict[str, str] = {}
    for _ in range(1000):
        constraints = {s: str(rng.choice(ontology.values[s])) for s in slots}
        if not must_match or query(db, constraints):
            break
    else:
        # value inventory too sparse for rejection sampling: copy a record
        record = db[int(rng.integers(len(db)))]
        constraints = {s: record.slot_value(s) for s in slots}

    counts = sorted(cfg.request_count_weights)
    weights = np.array([cfg.request_count_weights[c] for c in counts], dtype=float)
    k = int(rng.choice(counts, p=weights / weights.sum()))
    k = min(k, len(ontology.request_slots))
    picked = rng.choice(len(ontology.request_slots), size=k, replace=False)
    requests = tuple(ontology.request_slots[i] for i in sorted(picked))
    return UserGoal(constraints=constraints, requests=requests)


@dataclass(frozen=True)
class SystemAct:
    """A machine dialogue act.

    ``slot``/``value`` are used by request, select and expl-conf;
    ``options`` carries the two select alternatives; ``payload`` carries the
    offer's name plus one value per understood constraint slot.
    """

    act_type: str
    slot: str | None = None
    value: str | None = None
    options: tuple[str, str] | None = None
    payload: Mapping[str, str] | None = None
    restaurant: Restaurant | None = None

    def __post_init__(self):
        t = self.act_type
        if t not in SYSTEM_ACT_TYPES:
            raise OntologyError(f"unknown system act type '{t}'")
        if t in ("request", "select", "expl-conf"):
            if self.slot not in CONSTRAINT_SLOTS:
                raise OntologyError(f"{t} must carry exactly one constraint slot")
        elif self.slot is not None:
            raise OntologyError(f"{t} carries no slot")
        if t == "offer":
            if not self.payload or "name" not in self.payload:
                raise OntologyError("offer payload must carry a restaurant name")
            for k in self.payload:
                if k != "name" and k not in CONSTRAINT_SLOTS:
                    raise OntologyError(f"offer payload has non-constraint slot '{k}'")
        elif self.payload is not None:
            raise OntologyError(f"{t} carries no payload")

    def render(self) -> str:
        if self.act_type == "offer":
            inner = ", ".join(f"{k}={v}" for k, v in self.payload.items())
            return f"offer({inner})"
        if self.act_type == "select":
            v1, v2 = self.options or ("", "")
            return f"select({self.slot}: {v1}|{v2})"
        if self.act_type == "expl-conf":
            return f"expl-conf({self.slot}={self.value})"
        if self.act_type == "request":
            return f"request({self.slot})"
        return self.act_type


@dataclass(frozen=True)
class UserAct:
    """A user dialogue act; inform carries slot+value, request a slot."""

    act_type: str
    slot: str | None = None
    value: str | None = None

    def __post_init__(self):
        t = self.act_type
        if t not in USER_ACT_TYPES:
            raise OntologyError(f"unknown user act type '{t}'")
        if t == "inform":
            if self.slot not in CONSTRAINT_SLOTS or self.value is None:
                raise OntologyError("inform must carry a constraint slot and value")
        elif t == "request":
            if self.slot not in REQUEST_SLOTS or self.value is not None:
                raise OntologyError("request carries a request slot and no value")
        elif t == "confirm":
            if self.slot is None or self.value is None:
                raise OntologyError("confirm carries slot and value")
        elif self.slot is not None or self.value is not None:
            raise OntologyError(f"{t} carries neither slot nor value")

    def render(self) -> str:
        if self.act_type == "inform":
            return f"inform({self.slot}={self.value})"
        if self.act_type == "request":
            return f"request({self.slot})"
        if self.act_type == "confirm":
            return f"confirm({self.slot}={self.value})"
        return self.act_type


def parse_user_act(text: str) -> UserAct:
    """Parse the documented act syntax, e.g. ``inform(food=italian)``."""
    text = text.strip()
    if not text:
        return UserAct("null")
    if "(" in text:
        if not text.endswith(")"):
            raise OntologyError(f"unbalanced parentheses in act '{text}'")
        head, inner = text[:-1].split("(", 1)
        head = head.strip()
        inner = inner.strip()
        if "=" in inner:
            slot, value = (p.strip() for p in inner.split("=", 1))
            return UserAct(head, slot=slot, value=value)
        return UserAct(head, slot=inner or None)
    return UserAct(text)


# ---------------------------------------------------------------------------
# line-delimited file formats (schema-version header + one JSON record/line)

def save_ontology(ontology: Ontology, path: str) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps({"schema": ONTOLOGY_SCHEMA,
                             "version": SCHEMA_VERSION}) + "\n")
        fh.write(json.dumps({"record": "slots",
                             "constraint_slots": list(ontology.constraint_slots),
                             "request_slots": list(ontology.request_slots)}) + "\n")
        for slot in ontology.constraint_slots:
            fh.write(json.dumps({"record": "values", "slot": slot,
                                 "values": list(ontology.values[slot])}) + "\n")


def _read_header(line: str, schema: str, path: str) -> None:
    try:
        head = json.loads(line)
    except json.JSONDecodeError as exc:
        raise OntologyError(f"{path}: header is not valid JSON: {exc}") from exc
    if head.get("schema") != schema:
        raise OntologyError(f"{path}: expected schema '{schema}', got {head.get('schema')!r}")
    if head.get("version") != SCHEMA_VERSION:
        raise OntologyError(f"{path}: unsupported version {head.get('version')!r}")


def load_ontology(path: str) -> Ontology:
    """Parse an ontology document; errors name the offending field."""
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise OntologyError(f"{path}: empty document")
    _read_header(lines[0], ONTOLOGY_SCHEMA, path)
    constraint: list[str] | None = None
    request: list[str] | None = None
    values: dict[str, tuple[str, ...]] = {}
    for ln in lines[1:]:
        rec = json.loads(ln)
        kind = rec.get("record")
        if kind == "slots":
            constraint = rec.get("constraint_slots")
            request = rec.get("request_slots")
        elif kind == "values":
            slot = rec.get("slot")
            vals = rec.get("values")
            if not slot:
                raise OntologyError(f"{path}: values record missing 'slot'")
            if not vals:
                raise OntologyError(f"{path}: no values for slot '{slot}'")
            values[slot] = tuple(vals)
        else:
            raise OntologyError(f"{path}: unknown record kind {kind!r}")
    if not constraint or not request:
        raise OntologyError(f"{path}: missing 'slots' record")
    for slot in constraint:
        if slot not in values:
            raise OntologyError(f"{path}: no values for slot '{slot}'")
    return Ontology(tuple(constraint), tuple(request), values)


def save_db(db: Iterable[Restaurant], path: str) -> None:
    with open(path, "w") as fh:
        fh.write(json.dumps({"schema": DB_SCHEMA, "version": SCHEMA_VERSION}) + "\n")
        for r in db:
            fh.write(json.dumps(r.__dict__, sort_keys=True) + "\n")


def load_db(path: str, ontology: Ontology | None = None) -> list[Restaurant]:
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise OntologyError(f"{path}: empty document")
    _read_header(lines[0], DB_SCHEMA, path)
    db = []
    for ln in lines[1:]:
        rec = json.loads(ln)
        try:
            restaurant = Restaurant(**rec)
        except TypeError as exc:
            raise OntologyError(f"{path}: bad restaurant record: {exc}") from exc
        if ontology is not None:
            for slot in ontology.constraint_slots:
                ontology.check_value(slot, restaurant.slot_value(slot))
        db.append(restaurant)
    return db
