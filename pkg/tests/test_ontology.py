import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dialab.ontology import (CONSTRAINT_SLOTS, REQUEST_SLOTS, GoalConfig,
                             GoalConfigError, Ontology, OntologyError,
                             Restaurant, SystemAct, UserAct, default_ontology,
                             generate_db, load_db, load_ontology, query,
                             sample_goal, save_db, save_ontology)


@pytest.fixture(scope="module")
def ontology():
    return default_ontology()


@pytest.fixture(scope="module")
def db(ontology):
    return generate_db(ontology, n=150, rng=np.random.default_rng(7))


class TestOntology:
    def test_constraint_slots(self, ontology):
        assert ontology.constraint_slots == ("area", "food", "pricerange")

    def test_request_slot_count(self, ontology):
        assert len(ontology.request_slots) == 8
        assert set(ontology.request_slots) == {
            "area", "food", "address", "name", "pricerange", "postcode",
            "signature", "phone"}

    def test_constraint_slots_have_at_least_five_values(self, ontology):
        for slot in ontology.constraint_slots:
            assert len(ontology.values[slot]) >= 5

    def test_missing_value_list_is_parse_error(self, tmp_path):
        path = tmp_path / "onto.jsonl"
        save_ontology(default_ontology(), path)
        lines = path.read_text().splitlines()
        kept = [ln for ln in lines if '"slot": "food"' not in ln]
        path.write_text("\n".join(kept) + "\n")
        with pytest.raises(OntologyError, match="food"):
            load_ontology(str(path))

    def test_roundtrip(self, tmp_path, ontology):
        path = tmp_path / "onto.jsonl"
        save_ontology(ontology, path)
        loaded = load_ontology(str(path))
        assert loaded.constraint_slots == ontology.constraint_slots
        assert loaded.request_slots == ontology.request_slots
        assert dict(loaded.values) == dict(ontology.values)

    def test_db_roundtrip(self, tmp_path, ontology, db):
        path = tmp_path / "db.jsonl"
        save_db(db, path)
        assert load_db(str(path), ontology) == db


class TestQuery:
    def test_empty_constraints_return_everything(self, db):
        assert query(db, {}) == list(db)

    def test_unmatched_value_returns_nothing(self, db):
        # "thai" may or may not exist in the sampled db; use a value we
        # construct to be absent instead
        assert query(db, {"food": "no-such-cuisine"}) == []

    def test_unknown_slot_rejected(self, db):
        with pytest.raises(OntologyError):
            query(db, {"postcode": "cb1"})

    def test_monotone_in_constraints(self, ontology, db):
        # exhaustive: every 1-constraint query dominates its 2-constraint
        # extensions, which dominate the 3-constraint ones
        for a in ontology.values["area"]:
            base = query(db, {"area": a})
            for f in ontology.values["food"]:
                mid = query(db, {"area": a, "food": f})
                assert len(mid) <= len(base)
                for p in ontology.values["pricerange"]:
                    assert len(query(db, {"area": a, "food": f,
                                          "pricerange": p})) <= len(mid)


class TestGoals:
    def test_all_constraints_forced(self, ontology, db):
        cfg = GoalConfig(constraint_probs={s: 1.0 for s in CONSTRAINT_SLOTS})
        goal = sample_goal(ontology, db, np.random.default_rng(0), cfg)
        assert len(goal.constraints) == 3

    def test_same_seed_same_goal(self, ontology, db):
        g1 = sample_goal(ontology, db, np.random.default_rng(42))
        g2 = sample_goal(ontology, db, np.random.default_rng(42))
        assert g1 == g2

    def test_satisfiable_goals_match_db(self, ontology, db):
        cfg = GoalConfig(satisfiable_frac=1.0)
        rng = np.random.default_rng(3)
        for _ in range(1000):
            goal = sample_goal(ontology, db, rng, cfg)
            assert query(db, goal.constraints), goal

    def test_goal_values_exist_in_ontology(self, ontology, db):
        rng = np.random.default_rng(5)
        for _ in range(200):
            goal = sample_goal(ontology, db, rng)
            for slot, value in goal.constraints.items():
                assert value in ontology.values[slot]

    def test_bad_probability_rejected(self):
        with pytest.raises(GoalConfigError):
            GoalConfig(constraint_probs={"area": 1.5})
        with pytest.raises(GoalConfigError):
            GoalConfig(satisfiable_frac=-0.1)

    def test_goal_needs_requests_and_constraints(self):
        from dialab.ontology import UserGoal
        with pytest.raises(OntologyError):
            UserGoal(constraints={}, requests=("phone",))
        with pytest.raises(OntologyError):
            UserGoal(constraints={"food": "thai"}, requests=())


class TestActWellFormedness:
    def test_request_needs_constraint_slot(self):
        with pytest.raises(OntologyError):
            SystemAct("request", slot="phone")
        SystemAct("request", slot="food")

    def test_repeat_carries_nothing(self):
        with pytest.raises(OntologyError):
            SystemAct("repeat", slot="food")
        SystemAct("repeat")

    def test_offer_needs_name(self):
        with pytest.raises(OntologyError):
            SystemAct("offer", payload={"food": "thai"})
        SystemAct("offer", payload={"name": "x", "food": "thai"})

    def test_offer_payload_slots_are_constraints(self):
        with pytest.raises(OntologyError):
            SystemAct("offer", payload={"name": "x", "phone": "123"})

    def test_inform_needs_slot_and_value(self):
        with pytest.raises(OntologyError):
            UserAct("inform", slot="food")
        UserAct("inform", slot="food", value="thai")

    def test_plain_user_acts_carry_nothing(self):
        with pytest.raises(OntologyError):
            UserAct("affirm", slot="food")
        UserAct("affirm")

    def test_unknown_types_rejected(self):
        with pytest.raises(OntologyError):
            SystemAct("greet")
        with pytest.raises(OntologyError):
            UserAct("shout")


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=2 ** 31 - 1), st.data())
def test_query_monotonicity_property(seed, data):
    ontology = default_ontology()
    db = generate_db(ontology, n=60, rng=np.random.default_rng(seed))
    slots = list(CONSTRAINT_SLOTS)
    chosen = data.draw(st.lists(st.sampled_from(slots), unique=True,
                                min_size=1, max_size=3))
    constraints = {}
    prev = len(db)
    for slot in chosen:
        constraints[slot] = data.draw(st.sampled_from(ontology.values[slot]))
        now = len(query(db, constraints))
        assert now <= prev
        prev = now
