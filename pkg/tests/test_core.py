"""Project lifecycle, imports, edits, and conflict lookup."""

import pytest

from lineweave.model import (
    DuplicateName,
    FileExists,
    InvalidName,
    LineDeleted,
    NotMember,
    TOMBSTONE,
    UnknownLine,
)
from lineweave.project import Engine

from naive_oracle import DEL, NaiveCheck  # noqa: F401  (helper import below)

STACK_LINES = [
    "class STACK",
    "feature",
    "  count: INTEGER",
    "  -- operations",
    "push (v: INTEGER)",
    "  do",
    "  end",
]


@pytest.fixture
def engine():
    return Engine()


@pytest.fixture
def project(engine):
    p = engine.create_project("editor")
    for user in ("claudia", "stu"):
        p.add_member(user)
    p.import_base("stack.e", STACK_LINES)
    return p


def line_at_rank(project, file, rank):
    rows = project.base_version().content[file]
    return rows[rank - 1][0]


def test_create_project_starts_at_base_zero(engine):
    p = engine.create_project("editor")
    assert p.base_number == 0
    assert p.materialize(set()) == {}


def test_create_project_rejects_empty_name(engine):
    with pytest.raises(InvalidName):
        engine.create_project("")


def test_create_project_rejects_duplicate(engine):
    engine.create_project("editor")
    with pytest.raises(DuplicateName):
        engine.create_project("editor")


def test_import_places_lines_by_rank(project):
    rows = project.base_version().content["stack.e"]
    assert [text for _, _, text in rows] == STACK_LINES
    assert rows[4][2] == "push (v: INTEGER)"  # rank 5


def test_import_empty_file(project):
    project.import_base("empty.e", [])
    assert project.materialize(set())["empty.e"] == []


def test_reimport_rejected(project):
    with pytest.raises(FileExists):
        project.import_base("stack.e", ["x"])


def test_single_edit_creates_record_without_conflict(project):
    lid = line_at_rank(project, "stack.e", 5)
    outcome = project.apply_edit("claudia", "stack.e", "replace", lid, "push (v: ANY)")
    assert outcome.line == lid
    assert outcome.conflicts_created == ()
    assert project.conflicts() == []
    line = project.files["stack.e"].lines[lid]
    assert [(sorted(r.owners), r.content) for r in line.records] == [
        (["claudia"], "push (v: ANY)")
    ]


def test_divergent_edits_conflict_with_both_variants(project):
    lid = line_at_rank(project, "stack.e", 5)
    project.apply_edit("claudia", "stack.e", "replace", lid, "push (v: ANY)")
    outcome = project.apply_edit(
        "stu", "stack.e", "replace", lid, "push (v: INTEGER): BOOLEAN"
    )
    assert len(outcome.conflicts_created) == 1
    conflicts = project.conflicts("stack.e")
    assert len(conflicts) == 1
    c = conflicts[0]
    assert c.line == lid
    assert c.base == "push (v: INTEGER)"
    assert c.variants == (
        (frozenset({"claudia"}), "push (v: ANY)"),
        (frozenset({"stu"}), "push (v: INTEGER): BOOLEAN"),
    )


def test_edit_back_to_base_cancels_record(project):
    lid = line_at_rank(project, "stack.e", 5)
    project.apply_edit("stu", "stack.e", "replace", lid, "push (v: ANY)")
    outcome = project.apply_edit("stu", "stack.e", "replace", lid, "push (v: INTEGER)")
    assert outcome.cancelled
    assert project.files["stack.e"].lines[lid].records == []


def test_equal_edits_do_not_conflict(project):
    # Oracle check (per-user copies, three-way by line): both copies differ
    # from base but equal each other -> clean merge, zero conflicts.
    lid = line_at_rank(project, "stack.e", 5)
    project.apply_edit("claudia", "stack.e", "replace", lid, "push (v: ANY)")
    project.apply_edit("stu", "stack.e", "replace", lid, "push (v: ANY)")
    assert project.conflicts() == []
    oracle = NaiveCheck.from_project_setup(["claudia", "stu"], "stack.e", STACK_LINES)
    oracle.edit("claudia", "stack.e", "replace", oracle.rank_id(5), "push (v: ANY)")
    oracle.edit("stu", "stack.e", "replace", oracle.rank_id(5), "push (v: ANY)")
    assert oracle.oracle.conflicts() == []


def test_edit_vs_delete_is_a_conflict(project):
    # Oracle treats deletion as a distinct variant: 1 conflict expected.
    lid = line_at_rank(project, "stack.e", 5)
    project.apply_edit("claudia", "stack.e", "replace", lid, "push (v: ANY)")
    project.apply_edit("stu", "stack.e", "delete", lid)
    conflicts = project.conflicts()
    assert len(conflicts) == 1
    assert conflicts[0].variants == (
        (frozenset({"claudia"}), "push (v: ANY)"),
        (frozenset({"stu"}), TOMBSTONE),
    )


def test_fresh_project_has_no_conflicts(project):
    assert project.conflicts() == []


def test_edit_by_non_member_rejected(project):
    lid = line_at_rank(project, "stack.e", 5)
    with pytest.raises(NotMember):
        project.apply_edit("mallory", "stack.e", "replace", lid, "x")


def test_edit_unknown_line_rejected(project):
    with pytest.raises(UnknownLine):
        project.apply_edit("stu", "stack.e", "replace", "l999", "x")


def test_edit_other_users_pending_insert_rejected(project):
    lid = line_at_rank(project, "stack.e", 5)
    inserted = project.apply_edit(
        "claudia", "stack.e", "insert_after", lid, "  ensure"
    ).line
    with pytest.raises(UnknownLine):
        project.apply_edit("stu", "stack.e", "replace", inserted, "hijack")


def test_edit_line_deleted_from_base_rejected(project):
    lid = line_at_rank(project, "stack.e", 4)
    project.apply_edit("stu", "stack.e", "delete", lid)
    project.commit("stu")
    with pytest.raises(LineDeleted):
        project.apply_edit("claudia", "stack.e", "replace", lid, "x")


def test_insert_lands_right_after_anchor_in_own_view(project):
    lid = line_at_rank(project, "stack.e", 5)
    new = project.apply_edit("stu", "stack.e", "insert_after", lid, "  require").line
    doc = project.render_view("stack.e", "stu", prefs={})
    ids = [l.line for l in doc.lines]
    assert ids.index(new) == ids.index(lid) + 1


def test_insert_at_top_of_file(project):
    new = project.apply_edit(
        "stu", "stack.e", "insert_after", None, "-- header"
    ).line
    doc = project.render_view("stack.e", "stu", prefs={})
    assert doc.lines[0].line == new
    assert doc.lines[0].text == "-- header"


def test_blind_same_position_inserts_order_by_owner_name(project):
    # Neither sees the other's pending line: both lines exist, ordered by
    # owner name, and no conflict is reported.
    anchor = line_at_rank(project, "stack.e", 2)
    by_stu = project.apply_edit("stu", "stack.e", "insert_after", anchor, "s1").line
    by_claudia = project.apply_edit(
        "claudia", "stack.e", "insert_after", anchor, "c1"
    ).line
    assert project.conflicts() == []
    merged = project.materialize({"stu", "claudia"})["stack.e"]
    assert merged[2:4] == ["c1", "s1"]  # claudia < stu
    fs = project.files["stack.e"]
    assert fs.lines[by_claudia].key < fs.lines[by_stu].key


def test_own_insert_chain_stays_contiguous(project):
    anchor = line_at_rank(project, "stack.e", 2)
    s1 = project.apply_edit("stu", "stack.e", "insert_after", anchor, "s1").line
    project.apply_edit("stu", "stack.e", "insert_after", s1, "s2")
    project.apply_edit("claudia", "stack.e", "insert_after", anchor, "c1")
    merged = project.materialize({"stu", "claudia"})["stack.e"]
    assert merged[2:5] == ["c1", "s1", "s2"]


def test_delete_own_pending_insert_cancels_it(project):
    lid = line_at_rank(project, "stack.e", 5)
    new = project.apply_edit("stu", "stack.e", "insert_after", lid, "tmp").line
    outcome = project.apply_edit("stu", "stack.e", "delete", new)
    assert outcome.cancelled
    assert project.files["stack.e"].lines[new].records == []
    assert new not in [l.line for l in project.render_view("stack.e", "stu", prefs={}).lines]
