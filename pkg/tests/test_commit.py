"""Commit promotion, version archive, rollback, and materialization."""

import pytest

from lineweave.model import BadRequest, ConflictError, NotMember, VersionUnknown
from lineweave.project import Engine

LINES = ["alpha", "beta", "gamma", "delta"]


@pytest.fixture
def project():
    p = Engine().create_project("editor")
    for user in ("claudia", "stu"):
        p.add_member(user)
    p.import_base("main.e", LINES)
    return p


def rank_id(project, rank, file="main.e"):
    return project.base_version().content[file][rank - 1][0]


def test_commit_skips_conflicted_line_keeps_base(project):
    lid = rank_id(project, 2)
    other = rank_id(project, 3)
    project.apply_edit("claudia", "main.e", "replace", lid, "beta-claudia")
    project.apply_edit("stu", "main.e", "replace", lid, "beta-stu")
    project.apply_edit("claudia", "main.e", "replace", other, "gamma-claudia")
    result = project.commit("claudia")
    assert result.skipped == (lid,)
    assert result.promoted == 1
    assert result.number == 1
    snapshot = project.materialize(set())["main.e"]
    assert snapshot == ["alpha", "beta", "gamma-claudia", "delta"]
    # Conflicted records survive the skip, on both sides.
    assert len(project.conflicts()) == 1


def test_commit_with_no_pending_is_a_noop(project):
    result = project.commit("stu")
    assert result == type(result)(number=0, promoted=0, skipped=())
    assert project.versions() == [0]


def test_commit_idempotence(project):
    lid = rank_id(project, 1)
    project.apply_edit("stu", "main.e", "replace", lid, "alpha-stu")
    first = project.commit("stu")
    assert (first.number, first.promoted) == (1, 1)
    second = project.commit("stu")
    assert (second.number, second.promoted, second.skipped) == (1, 0, ())


def test_commit_prunes_equal_records_of_others(project):
    lid = rank_id(project, 2)
    project.apply_edit("claudia", "main.e", "replace", lid, "agreed")
    project.apply_edit("stu", "main.e", "replace", lid, "agreed")
    project.commit("stu")
    line = project.files["main.e"].lines[lid]
    assert line.records == []
    assert line.base == "agreed"
    doc = project.render_view("main.e", "claudia", prefs={})
    assert all(l.status.value == "unchanged" for l in doc.lines)


def test_commit_promotes_inserts_and_tombstones(project):
    anchor = rank_id(project, 4)
    project.apply_edit("stu", "main.e", "insert_after", anchor, "epsilon")
    project.apply_edit("stu", "main.e", "delete", rank_id(project, 1))
    result = project.commit("stu")
    assert result.promoted == 2
    assert project.materialize(set())["main.e"] == ["beta", "gamma", "delta", "epsilon"]


def test_commit_by_unknown_user_rejected(project):
    with pytest.raises(NotMember):
        project.commit("mallory")


def test_materialize_empty_include_is_exact_base(project):
    assert project.materialize(set()) == {"main.e": LINES}


def test_materialize_uninvolved_user_equals_base(project):
    # Oracle: a copy with no divergence materializes to the base itself.
    project.apply_edit("claudia", "main.e", "replace", rank_id(project, 2), "x")
    assert project.materialize({"stu"}) == project.materialize(set())


def test_materialize_overlays_include_set(project):
    project.apply_edit("claudia", "main.e", "replace", rank_id(project, 2), "beta-c")
    project.apply_edit("stu", "main.e", "delete", rank_id(project, 3))
    assert project.materialize({"claudia"})["main.e"] == ["alpha", "beta-c", "gamma", "delta"]
    assert project.materialize({"stu"})["main.e"] == ["alpha", "beta", "delta"]
    assert project.materialize({"claudia", "stu"})["main.e"] == ["alpha", "beta-c", "delta"]


def test_materialize_fails_on_conflict_with_conflict_list(project):
    lid = rank_id(project, 2)
    project.apply_edit("claudia", "main.e", "replace", lid, "hers")
    project.apply_edit("stu", "main.e", "replace", lid, "his")
    with pytest.raises(ConflictError) as err:
        project.materialize({"claudia", "stu"})
    assert [c.line for c in err.value.conflicts] == [lid]


def test_materialize_observer_wins_takes_winner_variant(project):
    lid = rank_id(project, 2)
    project.apply_edit("claudia", "main.e", "replace", lid, "hers")
    project.apply_edit("stu", "main.e", "replace", lid, "his")
    snap = project.materialize({"claudia", "stu"}, observer_wins="stu")
    assert snap["main.e"] == ["alpha", "his", "gamma", "delta"]
    with pytest.raises(BadRequest):
        project.materialize({"claudia"}, observer_wins="stu")


def test_commit_then_materialize_coherence(project):
    project.apply_edit("stu", "main.e", "replace", rank_id(project, 1), "alpha-stu")
    before = project.materialize({"stu"})
    project.commit("stu")
    assert project.materialize(set()) == before


def test_rollback_to_origin_restores_imported_text(project):
    project.apply_edit("stu", "main.e", "replace", rank_id(project, 1), "a1")
    project.commit("stu")
    project.apply_edit("stu", "main.e", "replace", rank_id(project, 2), "b1")
    project.commit("stu")
    assert project.base_number == 2
    base = project.rollback(0)
    assert base.number == 3
    assert base.parent == 0
    assert project.materialize(set()) == {"main.e": LINES}


def test_rollback_latest_keeps_content_but_bumps_number(project):
    # Oracle: snapshot equality before/after rolling back to the live tip.
    project.apply_edit("stu", "main.e", "replace", rank_id(project, 1), "a1")
    project.commit("stu")
    before = project.materialize(set())
    base = project.rollback(1)
    assert base.number == 2
    assert project.materialize(set()) == before


def test_rollback_unknown_version_rejected(project):
    project.apply_edit("stu", "main.e", "replace", rank_id(project, 1), "a1")
    project.commit("stu")
    with pytest.raises(VersionUnknown):
        project.rollback(99)


def test_rollback_discards_all_pending_records(project):
    project.apply_edit("claudia", "main.e", "replace", rank_id(project, 2), "x")
    project.rollback(0)
    assert project.conflicts() == []
    doc = project.render_view("main.e", "claudia", prefs={})
    assert [l.text for l in doc.lines] == LINES


def test_versions_lists_archive_plus_current(project):
    for i, text in enumerate(["v1", "v2", "v3"], start=1):
        project.apply_edit("stu", "main.e", "replace", rank_id(project, 1), text)
        project.commit("stu")
    assert project.versions() == [0, 1, 2, 3]
    assert project.fetch_version(2).text()["main.e"][0] == "v2"
