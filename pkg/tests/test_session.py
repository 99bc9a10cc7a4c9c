import random

import pytest

from qareview.geometry import iou
from qareview.proposal import GeneratedQA, GeneratedRegion, ProposalMode, ProposalResponse
from qareview.schema import BBox, QAStatus, Source
from qareview.session import (
    AlreadyProposed,
    CorruptLog,
    EditKind,
    EditOp,
    EmptyEvidence,
    GeometryError,
    IllegalInState,
    InvalidRecord,
    InvalidTarget,
    NotReviewed,
    SessionState,
    UnknownQA,
    UnverifiedQA,
    apply_edit,
    attach_proposal,
    finalize,
    open_session,
    replay,
    session_equal,
)

from conftest import make_qa, make_record, make_region


def _record(n_candidates=5, image_size=(1000, 800)):
    regions = [
        make_region(f"a_{i + 1}", x=i * 100, y=10, w=80, h=60, label=f"part_{i + 1}")
        for i in range(n_candidates)
    ]
    return make_record(
        uid="img_s", regions=regions, qa=[make_qa("q_0")], image_size=image_size
    )


def _selection_response(*ids):
    return ProposalResponse(selected_ids=tuple(ids), backend_meta={"backend": "mock"})


def _op(session, kind, target=None, payload=None, actor="r1"):
    return EditOp(kind, target, payload or {}, session.next_timestamp(), actor)


def _open_proposed(n_candidates=5, selected=("a_1", "a_2")):
    session = open_session(_record(n_candidates), "q_0")
    attach_proposal(session, _selection_response(*selected), ProposalMode.SELECTION)
    return session


class TestOpenSession:
    def test_valid_record_starts_loaded(self):
        session = open_session(_record(), "q_0")
        assert session.state is SessionState.LOADED
        assert session.edit_log == []
        assert session.proposal is None

    def test_unknown_qa(self):
        with pytest.raises(UnknownQA):
            open_session(_record(), "q_99")

    def test_invalid_record(self):
        bad = make_record(regions=[make_region("a_1", w=0)], qa=[make_qa("q_0")])
        with pytest.raises(InvalidRecord):
            open_session(bad, "q_0")

    def test_bare_record_enters_generation_flow(self):
        session = open_session(make_record(uid="bare"))
        assert session.active_qa is None


class TestAttachProposal:
    def test_selection_marks_only_selected_candidates(self):
        session = _open_proposed(5, ("a_1", "a_2"))
        marked = [r.region_id for r in session.regions.values() if r.selected_mark]
        assert sorted(marked) == ["a_1", "a_2"]
        assert session.active_evidence() == ["a_1", "a_2"]
        assert session.state is SessionState.PROPOSED
        # Pool source survives; the mark is layered on top.
        assert session.regions["a_1"].source is Source.GROUND_TRUTH
        assert session.regions["a_1"].export_source() == "selected"

    def test_empty_selection_still_moves_to_proposed(self):
        session = open_session(_record(), "q_0")
        degraded = ProposalResponse(backend_meta={"warnings": ["backend down"]})
        attach_proposal(session, degraded, ProposalMode.SELECTION)
        assert session.state is SessionState.PROPOSED
        assert session.active_evidence() == []

    def test_second_attach_rejected(self):
        session = _open_proposed()
        with pytest.raises(AlreadyProposed):
            attach_proposal(session, _selection_response(), ProposalMode.SELECTION)

    def test_generated_regions_get_fresh_ids_and_source(self):
        record = make_record(uid="g", qa=[make_qa("q_0")], image_size=(1000, 800))
        session = open_session(record, "q_0")
        response = ProposalResponse(
            generated_regions=(GeneratedRegion(BBox(250, 200, 500, 400)),)
        )
        attach_proposal(session, response, ProposalMode.REGION_GENERATION)
        assert session.active_evidence() == ["a_1"]
        assert session.regions["a_1"].source is Source.MODEL_GENERATED

    def test_generated_qa_becomes_active_and_unverified(self):
        session = open_session(make_record(uid="bare", image_size=(1000, 800)))
        response = ProposalResponse(
            generated_regions=(GeneratedRegion(BBox(250, 200, 500, 400)),),
            generated_qa=(GeneratedQA("What does this image show?", "something"),),
        )
        attach_proposal(session, response, ProposalMode.QA_AND_REGION_GENERATION)
        assert session.active_qa == "q_0"
        assert session.qa["q_0"].status is QAStatus.UNVERIFIED
        assert session.active_evidence() == ["a_1"]


class TestApplyEdit:
    def test_first_edit_moves_to_in_review(self):
        session = _open_proposed()
        apply_edit(session, _op(session, EditKind.SELECT_REGION, "a_3"))
        assert session.state is SessionState.IN_REVIEW
        assert session.active_evidence() == ["a_1", "a_2", "a_3"]

    def test_deselect_removes_membership(self):
        session = _open_proposed()
        apply_edit(session, _op(session, EditKind.DESELECT_REGION, "a_1"))
        assert session.active_evidence() == ["a_2"]

    def test_draw_creates_reviewer_added_region_in_evidence(self):
        session = _open_proposed()
        apply_edit(session, _op(session, EditKind.DRAW_REGION,
                                payload={"bbox": [5, 5, 50, 50]}))
        new_id = session.active_evidence()[-1]
        assert session.regions[new_id].source is Source.REVIEWER_ADDED
        assert session.regions[new_id].export_source() == "added"

    def test_resize_sets_edited_and_replaces_geometry(self):
        session = _open_proposed()
        apply_edit(session, _op(session, EditKind.RESIZE_REGION, "a_1",
                                payload={"bbox": [0, 10, 90, 70]}))
        assert session.regions["a_1"].bbox == BBox(0, 10, 90, 70)
        assert session.regions["a_1"].edited is True

    def test_resize_to_degenerate_rejected_log_unchanged(self):
        session = _open_proposed()
        before = len(session.edit_log)
        with pytest.raises(GeometryError):
            apply_edit(session, _op(session, EditKind.RESIZE_REGION, "a_1",
                                    payload={"bbox": [0, 0, 0, 10]}))
        assert len(session.edit_log) == before
        assert session.regions["a_1"].bbox == BBox(0, 10, 80, 60)

    def test_delete_is_tombstone(self):
        session = _open_proposed()
        apply_edit(session, _op(session, EditKind.DELETE_REGION, "a_1"))
        assert session.regions["a_1"].deleted is True
        assert "a_1" not in session.active_evidence()
        with pytest.raises(InvalidTarget):
            apply_edit(session, _op(session, EditKind.SELECT_REGION, "a_1"))

    def test_flag_then_edit_returns_to_in_review(self):
        session = _open_proposed()
        apply_edit(session, _op(session, EditKind.FLAG_QA, "q_0",
                                payload={"note": "ambiguous wording"}))
        assert session.state is SessionState.FLAGGED
        assert session.qa["q_0"].note == "ambiguous wording"
        apply_edit(session, _op(session, EditKind.VERIFY_QA, "q_0"))
        assert session.state is SessionState.IN_REVIEW

    def test_flag_requires_note(self):
        session = _open_proposed()
        from qareview.session import InvalidEdit

        with pytest.raises(InvalidEdit):
            apply_edit(session, _op(session, EditKind.FLAG_QA, "q_0"))

    def test_no_edits_after_finalize(self):
        session = _open_proposed()
        apply_edit(session, _op(session, EditKind.VERIFY_QA, "q_0"))
        finalize(session)
        with pytest.raises(IllegalInState):
            apply_edit(session, _op(session, EditKind.SELECT_REGION, "a_3"))

    def test_log_is_append_only(self):
        session = _open_proposed()
        lengths = []
        for kind, target, payload in [
            (EditKind.SELECT_REGION, "a_3", {}),
            (EditKind.DESELECT_REGION, "a_3", {}),
            (EditKind.DRAW_REGION, None, {"bbox": [1, 1, 5, 5]}),
        ]:
            apply_edit(session, _op(session, kind, target, payload))
            lengths.append(len(session.edit_log))
        assert lengths == [1, 2, 3]

    def test_non_monotonic_timestamp_rejected(self):
        session = _open_proposed()
        apply_edit(session, EditOp(EditKind.SELECT_REGION, "a_3", {}, 5, "r1"))
        with pytest.raises(CorruptLog):
            apply_edit(session, EditOp(EditKind.SELECT_REGION, "a_4", {}, 5, "r1"))


class TestReplay:
    def test_empty_log_equals_proposal_state(self):
        session = _open_proposed()
        rebuilt = replay(session.record, (session.proposal, session.proposal_mode), [],
                         qa_id="q_0")
        assert session_equal(session, rebuilt)

    def test_select_deselect_pair_retained_in_audit_trail(self):
        session = _open_proposed(5, ())
        apply_edit(session, _op(session, EditKind.SELECT_REGION, "a_1"))
        apply_edit(session, _op(session, EditKind.DESELECT_REGION, "a_1"))
        rebuilt = replay(session.record, (session.proposal, session.proposal_mode),
                         session.edit_log, qa_id="q_0")
        assert "a_1" not in rebuilt.active_evidence()
        assert len(rebuilt.edit_log) == 2

    def test_non_monotonic_timestamps_corrupt(self):
        session = _open_proposed()
        ops = [
            EditOp(EditKind.SELECT_REGION, "a_3", {}, 2, "r1"),
            EditOp(EditKind.SELECT_REGION, "a_4", {}, 1, "r1"),
        ]
        with pytest.raises(CorruptLog):
            replay(session.record, (session.proposal, session.proposal_mode), ops, qa_id="q_0")

    def test_unresolvable_target_corrupt(self):
        session = _open_proposed()
        ops = [EditOp(EditKind.SELECT_REGION, "missing", {}, 1, "r1")]
        with pytest.raises(CorruptLog):
            replay(session.record, (session.proposal, session.proposal_mode), ops, qa_id="q_0")


class TestFinalize:
    def test_keep_both_add_candidate(self):
        session = _open_proposed(5, ("a_1", "a_2"))
        apply_edit(session, _op(session, EditKind.SELECT_REGION, "a_3"))
        apply_edit(session, _op(session, EditKind.VERIFY_QA, "q_0"))
        result = finalize(session)
        assert result.counts.to_dict() == {
            "retained_pred_count": 2,
            "effective_removed_count": 0,
            "added_gt_count": 1,
            "new_drawn_count": 0,
        }
        assert session.state is SessionState.FINALIZED

    def test_delete_proposal_draw_new(self):
        session = _open_proposed(5, ("a_1",))
        apply_edit(session, _op(session, EditKind.DELETE_REGION, "a_1"))
        apply_edit(session, _op(session, EditKind.DRAW_REGION,
                                payload={"bbox": [5, 5, 20, 20]}))
        apply_edit(session, _op(session, EditKind.VERIFY_QA, "q_0"))
        result = finalize(session)
        assert result.counts.to_dict() == {
            "retained_pred_count": 0,
            "effective_removed_count": 1,
            "added_gt_count": 0,
            "new_drawn_count": 1,
        }

    def test_heavy_edit_counts_as_removed_plus_drawn(self):
        record = make_record(
            uid="h",
            regions=[make_region("a_1", 0, 0, 100, 100)],
            qa=[make_qa("q_0")],
            image_size=(1000, 800),
        )
        session = open_session(record, "q_0")
        attach_proposal(session, _selection_response("a_1"), ProposalMode.SELECTION)
        # IoU between (0,0,100,100) and (80,80,100,100) is 400/19600 < 0.5.
        apply_edit(session, _op(session, EditKind.MOVE_REGION, "a_1",
                                payload={"bbox": [80, 80, 100, 100]}))
        apply_edit(session, _op(session, EditKind.VERIFY_QA, "q_0"))
        result = finalize(session)
        assert result.counts.to_dict() == {
            "retained_pred_count": 0,
            "effective_removed_count": 1,
            "added_gt_count": 0,
            "new_drawn_count": 1,
        }

    def test_light_edit_still_retained(self):
        session = _open_proposed(5, ("a_1",))
        # Shift by 4px: IoU well above 0.5.
        apply_edit(session, _op(session, EditKind.MOVE_REGION, "a_1",
                                payload={"bbox": [4, 10, 80, 60]}))
        apply_edit(session, _op(session, EditKind.VERIFY_QA, "q_0"))
        result = finalize(session)
        assert result.counts.retained_pred_count == 1
        assert result.counts.new_drawn_count == 0

    def test_retain_iou_threshold_is_configurable(self):
        session = _open_proposed(5, ("a_1",))
        apply_edit(session, _op(session, EditKind.MOVE_REGION, "a_1",
                                payload={"bbox": [40, 10, 80, 60]}))
        apply_edit(session, _op(session, EditKind.VERIFY_QA, "q_0"))
        # IoU of (0,10,80,60) vs (40,10,80,60) = 40*60 / (2*4800 - 2400) = 1/3.
        result = finalize(session, retain_iou=0.3)
        assert result.counts.retained_pred_count == 1

    def test_not_reviewed_before_any_edit(self):
        session = _open_proposed()
        with pytest.raises(NotReviewed):
            finalize(session)

    def test_unverified_qa_rejected(self):
        session = _open_proposed()
        apply_edit(session, _op(session, EditKind.SELECT_REGION, "a_3"))
        with pytest.raises(UnverifiedQA):
            finalize(session)

    def test_verified_empty_evidence_needs_no_evidence_marker(self):
        session = _open_proposed(5, ())
        apply_edit(session, _op(session, EditKind.VERIFY_QA, "q_0"))
        with pytest.raises(EmptyEvidence):
            finalize(session)

    def test_no_evidence_marker_allows_empty_export(self):
        session = _open_proposed(5, ())
        apply_edit(session, _op(session, EditKind.VERIFY_QA, "q_0"))
        apply_edit(session, _op(session, EditKind.SET_NO_EVIDENCE, "q_0"))
        result = finalize(session)
        assert result.no_evidence is True
        assert result.attribution.evidence == ()


class TestIoU:
    def test_identity_is_one(self):
        box = BBox(3, 4, 10, 12)
        assert iou(box, box) == 1.0

    def test_disjoint_is_zero(self):
        assert iou(BBox(0, 0, 10, 10), BBox(20, 20, 5, 5)) == 0.0

    def test_touching_edges_is_zero(self):
        assert iou(BBox(0, 0, 10, 10), BBox(10, 0, 10, 10)) == 0.0

    def test_symmetry_and_range(self):
        rng = random.Random(11)
        for _ in range(300):
            a = BBox(rng.uniform(0, 50), rng.uniform(0, 50), rng.uniform(1, 40),
                     rng.uniform(1, 40))
            b = BBox(rng.uniform(0, 50), rng.uniform(0, 50), rng.uniform(1, 40),
                     rng.uniform(1, 40))
            ab, ba = iou(a, b), iou(b, a)
            assert ab == ba
            assert 0.0 <= ab <= 1.0

    def test_hand_computed_quarter_overlap(self):
        assert iou(BBox(0, 0, 100, 100), BBox(80, 80, 100, 100)) == pytest.approx(400 / 19600)


def _random_session(rng: random.Random):
    n = rng.randint(0, 6)
    record = make_record(
        uid=f"img_{rng.randint(0, 999)}",
        regions=[
            make_region(f"a_{i + 1}", x=rng.randint(0, 800), y=rng.randint(0, 600),
                        w=rng.randint(5, 120), h=rng.randint(5, 120), label=f"l{i}")
            for i in range(n)
        ],
        qa=[make_qa("q_0")],
        image_size=(1000, 800),
    )
    session = open_session(record, "q_0")
    if n and rng.random() < 0.8:
        selected = tuple(
            rid for rid in (f"a_{i + 1}" for i in range(n)) if rng.random() < 0.5
        )
        attach_proposal(session, _selection_response(*selected), ProposalMode.SELECTION)
    else:
        generated = tuple(
            GeneratedRegion(BBox(rng.randint(0, 500), rng.randint(0, 400),
                                 rng.randint(5, 200), rng.randint(5, 200)))
            for _ in range(rng.randint(0, 3))
        )
        mode = ProposalMode.REGION_GENERATION
        attach_proposal(session, ProposalResponse(generated_regions=generated), mode)
    return session


def _random_edit(session, rng: random.Random):
    live = [r.region_id for r in session.regions.values() if not r.deleted]
    options = ["draw", "verify"]
    if live:
        options += ["select", "deselect", "resize", "move", "delete"]
    choice = rng.choice(options)
    if choice == "draw":
        payload = {"bbox": [rng.randint(0, 700), rng.randint(0, 500),
                            rng.randint(5, 200), rng.randint(5, 200)]}
        return _op(session, EditKind.DRAW_REGION, None, payload)
    if choice == "verify":
        return _op(session, EditKind.VERIFY_QA, "q_0")
    target = rng.choice(live)
    if choice in ("resize", "move"):
        payload = {"bbox": [rng.randint(0, 700), rng.randint(0, 500),
                            rng.randint(5, 200), rng.randint(5, 200)]}
        kind = EditKind.RESIZE_REGION if choice == "resize" else EditKind.MOVE_REGION
        return _op(session, kind, target, payload)
    kinds = {"select": EditKind.SELECT_REGION, "deselect": EditKind.DESELECT_REGION,
             "delete": EditKind.DELETE_REGION}
    return _op(session, kinds[choice], target)


class TestReplayEquivalenceRandomized:
    def test_replay_matches_live_state_over_random_scripts(self):
        rng = random.Random(20240601)
        for _ in range(200):
            session = _random_session(rng)
            for _ in range(rng.randint(0, 10)):
                apply_edit(session, _random_edit(session, rng))
            rebuilt = replay(
                session.record,
                (session.proposal, session.proposal_mode),
                session.edit_log,
                qa_id="q_0",
            )
            assert session_equal(session, rebuilt)

    def test_count_conservation_over_random_scripts(self):
        rng = random.Random(42)
        checked = 0
        for _ in range(200):
            session = _random_session(rng)
            for _ in range(rng.randint(0, 10)):
                apply_edit(session, _random_edit(session, rng))
            if session.qa["q_0"].status is not QAStatus.VERIFIED:
                apply_edit(session, _op(session, EditKind.VERIFY_QA, "q_0"))
            evidence = list(session.active_evidence())
            if not evidence:
                apply_edit(session, _op(session, EditKind.SET_NO_EVIDENCE, "q_0"))
            proposed = len(session.proposal_ids)
            result = finalize(session)
            counts = result.counts
            # |H| = retained + added_gt + new_drawn (heavy edits counted once
            # on the H side, via new_drawn) and |P| = retained + removed.
            assert len(evidence) == (
                counts.retained_pred_count + counts.added_gt_count + counts.new_drawn_count
            )
            assert proposed == counts.retained_pred_count + counts.effective_removed_count
            heavy = counts.new_drawn_count - sum(
                1 for rid in evidence
                if session.regions[rid].source is Source.REVIEWER_ADDED
                and rid not in session.proposal_ids
            )
            assert heavy >= 0
            checked += 1
        assert checked == 200
