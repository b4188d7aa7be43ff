"""Order-key arithmetic and rank behaviour of insertion."""

import random
from fractions import Fraction

from hypothesis import given, strategies as st

from lineweave.order import child_key, slot_between
from lineweave.project import Engine


fractions = st.fractions(min_value=-1000, max_value=1000)


@given(fractions, fractions)
def test_slot_between_is_strictly_between(a, b):
    if a == b:
        return
    lo, hi = min(a, b), max(a, b)
    mid = slot_between(lo, hi)
    assert lo < mid < hi


@given(fractions)
def test_slot_against_open_ends(a):
    assert slot_between(a, None) > a
    assert slot_between(None, a) < a
    assert slot_between(None, None) == Fraction(0)


@given(st.lists(fractions, min_size=1, max_size=4), fractions)
def test_child_keys_sort_inside_parent_region(parent_slots, slot):
    parent = tuple(parent_slots)
    child = child_key(parent, slot)
    assert parent < child
    assert child[: len(parent)] == parent


def test_random_single_user_inserts_keep_editor_ranks():
    # Inserting after rank i always lands at rank i+1 in the author's view.
    rng = random.Random(7)
    p = Engine().create_project("ranks")
    p.add_member("ada")
    p.import_base("f", [f"line{i}" for i in range(5)])
    for step in range(200):
        doc = p.render_view("f", "ada", prefs={})
        ids = [l.line for l in doc.lines]
        anchor_rank = rng.randrange(0, len(ids) + 1)
        anchor = ids[anchor_rank - 1] if anchor_rank else None
        new = p.apply_edit("ada", "f", "insert_after", anchor, f"new{step}").line
        ids_after = [l.line for l in p.render_view("f", "ada", prefs={}).lines]
        assert ids_after.index(new) == anchor_rank


def test_relative_order_is_stable_once_assigned():
    rng = random.Random(11)
    p = Engine().create_project("stable")
    for u in ("ada", "ben"):
        p.add_member(u)
    p.import_base("f", ["a", "b", "c"])
    seen_pairs = set()
    for step in range(120):
        user = rng.choice(["ada", "ben"])
        doc = p.render_view("f", user, prefs={})
        ids = [l.line for l in doc.lines]
        anchor = rng.choice([None] + ids)
        p.apply_edit(user, "f", "insert_after", anchor, f"x{step}")
        fs = p.files["f"]
        order = [lid for _, lid in fs._order]
        for i, a in enumerate(order):
            for b in order[i + 1 :]:
                assert (b, a) not in seen_pairs, "relative order flipped"
                seen_pairs.add((a, b))
