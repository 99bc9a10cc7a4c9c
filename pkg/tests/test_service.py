import threading

import pytest
from fastapi.testclient import TestClient

from qareview.config import resolve_config
from qareview.ingest import ingest_file
from qareview.service import create_app
from qareview.store import SessionStore

from conftest import FIXTURES


@pytest.fixture
def client(tmp_path):
    store = SessionStore(tmp_path / "data")
    for record in ingest_file(FIXTURES / "generic_v1.json"):
        store.save_record(record)
    for record in ingest_file(FIXTURES / "map_style.json"):
        store.save_record(record)
    config = resolve_config({"data_dir": str(tmp_path / "data"),
                             "out_dir": str(tmp_path / "out")}, env={})
    app = create_app(config)
    with TestClient(app) as tc:
        yield tc


def _review_to_finalized(client, uid="map_0003", qa="q_0", reviewer="r1"):
    headers = {"X-Reviewer-Id": reviewer}
    response = client.post(f"/api/records/{uid}/qa/{qa}/propose", headers=headers, json={})
    assert response.status_code == 200, response.text
    client.post(f"/api/records/{uid}/qa/{qa}/edits", headers=headers,
                json={"op": "verify_qa", "target_id": qa})
    return client.post(f"/api/records/{uid}/qa/{qa}/finalize", headers=headers, json={})


class TestRecordEndpoints:
    def test_fixture_dataset_lists_records(self, client):
        records = client.get("/api/records").json()
        uids = [r["image_uid"] for r in records]
        assert "img_001" in uids and "img_002" in uids and "map_0003" in uids
        two = [r for r in records if r["image_uid"].startswith("img_")]
        assert len(two) == 2

    def test_record_detail(self, client):
        record = client.get("/api/records/img_001").json()
        assert record["image_uid"] == "img_001"
        assert len(record["regions"]) == 3

    def test_unknown_record_404(self, client):
        assert client.get("/api/records/nope").status_code == 404

    def test_missing_image_file_404(self, client):
        assert client.get("/api/records/img_001/image").status_code == 404


class TestProposeAndEdit:
    def test_propose_initializes_selection(self, client):
        view = client.post("/api/records/map_0003/qa/q_0/propose", json={}).json()
        assert view["state"] == "proposed"
        assert view["evidence"] == ["a_1", "a_2"]
        assert view["mode"] == "selection"

    def test_propose_twice_conflicts(self, client):
        assert client.post("/api/records/map_0003/qa/q_0/propose", json={}).status_code == 200
        second = client.post("/api/records/map_0003/qa/q_0/propose", json={})
        assert second.status_code == 409
        assert second.json()["detail"]["error"] == "already_proposed"

    def test_unknown_qa_404(self, client):
        assert client.post("/api/records/map_0003/qa/q_9/propose", json={}).status_code == 404

    def test_edit_round_trips_through_session_engine(self, client):
        client.post("/api/records/map_0003/qa/q_0/propose", json={})
        view = client.post(
            "/api/records/map_0003/qa/q_0/edits",
            json={"op": "draw_region", "payload": {"bbox": [5, 5, 20, 20]}},
        ).json()
        assert view["log_length"] == 1
        assert view["applied"]["op"] == "draw_region"
        assert view["applied"]["target_id"] in view["evidence"]

    def test_bad_geometry_400(self, client):
        client.post("/api/records/map_0003/qa/q_0/propose", json={})
        response = client.post(
            "/api/records/map_0003/qa/q_0/edits",
            json={"op": "draw_region", "payload": {"bbox": [5, 5, 0, 20]}},
        )
        assert response.status_code == 400

    def test_session_survives_reload(self, client):
        client.post("/api/records/map_0003/qa/q_0/propose", json={})
        client.post("/api/records/map_0003/qa/q_0/edits",
                    json={"op": "deselect_region", "target_id": "a_1"})
        view = client.get("/api/records/map_0003/qa/q_0/session").json()
        assert view["evidence"] == ["a_2"]
        assert view["log_length"] == 1

    def test_qa_generation_flow_via_auto(self, client):
        view = client.post("/api/records/img_002/qa/auto/propose", json={}).json()
        assert view["mode"] == "qa_and_region_generation"
        assert view["active_qa"] == "q_0"
        assert view["qa"][0]["status"] == "unverified"


class TestLeases:
    def test_second_reviewer_blocked(self, client):
        client.post("/api/records/map_0003/qa/q_0/propose",
                    headers={"X-Reviewer-Id": "alice"}, json={})
        response = client.post(
            "/api/records/map_0003/qa/q_0/edits",
            headers={"X-Reviewer-Id": "bob"},
            json={"op": "verify_qa", "target_id": "q_0"},
        )
        assert response.status_code == 423

    def test_lease_release_allows_takeover(self, client):
        client.post("/api/records/map_0003/qa/q_0/propose",
                    headers={"X-Reviewer-Id": "alice"}, json={})
        client.post("/api/records/map_0003/qa/q_0/lease",
                    headers={"X-Reviewer-Id": "alice"}, json={"action": "release"})
        response = client.post(
            "/api/records/map_0003/qa/q_0/edits",
            headers={"X-Reviewer-Id": "bob"},
            json={"op": "verify_qa", "target_id": "q_0"},
        )
        assert response.status_code == 200


class TestFinalize:
    def test_finalize_returns_counts_and_document(self, client):
        final = _review_to_finalized(client).json()
        assert final["counts"]["retained_pred_count"] == 2
        assert final["document"]["qa"]["answer"] == "Oklahoma"

    def test_double_finalize_conflicts(self, client):
        _review_to_finalized(client)
        second = client.post("/api/records/map_0003/qa/q_0/finalize",
                             headers={"X-Reviewer-Id": "r1"}, json={})
        assert second.status_code == 409

    def test_concurrent_finalize_exactly_one_wins(self, client):
        headers = {"X-Reviewer-Id": "r1"}
        client.post("/api/records/map_0003/qa/q_0/propose", headers=headers, json={})
        client.post("/api/records/map_0003/qa/q_0/edits", headers=headers,
                    json={"op": "verify_qa", "target_id": "q_0"})
        statuses = []
        barrier = threading.Barrier(2)

        def worker():
            barrier.wait()
            response = client.post("/api/records/map_0003/qa/q_0/finalize",
                                   headers=headers, json={})
            statuses.append(response.status_code)

        threads = [threading.Thread(target=worker) for _ in range(2)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert sorted(statuses) == [200, 409]

    def test_edits_rejected_after_finalize(self, client):
        _review_to_finalized(client)
        response = client.post(
            "/api/records/map_0003/qa/q_0/edits",
            headers={"X-Reviewer-Id": "r1"},
            json={"op": "select_region", "target_id": "a_3"},
        )
        assert response.status_code == 409

    def test_unverified_finalize_conflicts(self, client):
        headers = {"X-Reviewer-Id": "r1"}
        client.post("/api/records/map_0003/qa/q_0/propose", headers=headers, json={})
        client.post("/api/records/map_0003/qa/q_0/edits", headers=headers,
                    json={"op": "select_region", "target_id": "a_3"})
        response = client.post("/api/records/map_0003/qa/q_0/finalize",
                               headers=headers, json={})
        assert response.status_code == 409


class TestMetricsEndpoints:
    def test_utility_rows_after_finalize(self, client):
        _review_to_finalized(client)
        rows = client.get("/api/metrics/utility").json()
        assert rows[-1]["dataset"] == "Overall"
        assert rows[0]["dataset"] == "map_style"

    def test_iaa_missing_labels_404(self, client):
        assert client.get("/api/metrics/iaa").status_code == 404

    def test_iaa_from_labels_file(self, client, tmp_path):
        labels = (tmp_path / "data" / "labels.csv")
        labels.write_text(
            "criterion,instance_id,annotator_id,verdict\n"
            "CVR,i1,a,true\nCVR,i1,b,true\n"
        )
        rows = client.get("/api/metrics/iaa").json()
        assert rows[0]["agreement_pct"] == "100.00"
