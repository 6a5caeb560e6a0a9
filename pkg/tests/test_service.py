import json
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from conftest import call, frames_to_tar, frames_to_zip, multipart
from motioncloud import service, synth


def test_health(server):
    assert call(server, "GET", "/v1/health") == (200, {"status": "ok", "videos": 1})


def test_videos_and_annotations(server, canonical_index):
    _, records, _ = canonical_index
    status, body = call(server, "GET", "/v1/videos")
    assert status == 200 and body["videos"][0]["video_id"] == "tl"
    status, body = call(server, "GET", "/v1/videos/tl/annotations")
    assert status == 200 and len(body["records"]) == len(records)
    assert set(body["records"][0]) >= {"start_frame", "end_frame", "scores", "null", "centroid"}


def test_unknown_paths(server):
    status, body = call(server, "GET", "/v1/videos/zzz/annotations")
    assert status == 404 and "error" in body
    status, body = call(server, "GET", "/v2/nothing")
    assert status == 404 and "error" in body
    status, body = call(server, "GET", "/v1/query")
    assert status == 405 and "error" in body


def _check_response(body):
    assert set(body) == {"results", "null_query", "timing_ms"}
    sims = [r["similarity_pct"] for r in body["results"]]
    assert sims == sorted(sims, reverse=True)
    for r in body["results"]:
        assert set(r) == {"video_id", "window", "similarity_pct", "predicted_class"}
        assert 0 <= r["similarity_pct"] <= 100 and len(r["window"]) == 2


def test_query_raw_tar_finds_own_window(server, canonical_index):
    _, records, frames = canonical_index
    target = next(r for r in records if not r.null)
    body = frames_to_tar(frames[target.start_frame:target.end_frame])
    status, res = call(server, "POST", "/v1/query?top=5", body, {"Content-Type": "application/x-tar"})
    assert status == 200
    _check_response(res)
    assert not res["null_query"] and len(res["results"]) <= 5
    assert res["results"][0]["window"] == [target.start_frame, target.end_frame]
    assert res["results"][0]["similarity_pct"] == pytest.approx(100.0, abs=1e-3)


def test_query_multipart_zip(server, canonical_index):
    _, _, frames = canonical_index
    body, ctype = multipart(frames_to_zip(frames[:30]))
    status, res = call(server, "POST", "/v1/query?top=2&rho=0.3", body, {"Content-Type": ctype})
    assert status == 200 and len(res["results"]) <= 2
    _check_response(res)


def test_static_query_is_null(server):
    static = synth.static_clip(np.random.default_rng(0), 20)
    status, res = call(server, "POST", "/v1/query", frames_to_tar(static))
    assert status == 200 and res["null_query"] is True and res["results"] == []


@pytest.mark.parametrize("body", [b"", b"this is not an archive", b"PK\x03\x04broken"])
def test_malformed_upload(server, body):
    status, res = call(server, "POST", "/v1/query", body)
    assert status == 400 and isinstance(res["error"], str)


def test_archive_without_enough_frames(server, canonical_index):
    _, _, frames = canonical_index
    status, res = call(server, "POST", "/v1/query", frames_to_tar(frames[:1]))
    assert status == 400 and "frames" in res["error"]


def test_short_clip_and_bad_params(server, canonical_index):
    _, _, frames = canonical_index
    status, res = call(server, "POST", "/v1/query", frames_to_tar(frames[:4]))
    assert status == 422 and "too short" in res["error"]
    status, res = call(server, "POST", "/v1/query?top=0", frames_to_tar(frames[:10]))
    assert status == 400
    status, res = call(server, "POST", "/v1/query?rho=abc", frames_to_tar(frames[:10]))
    assert status == 400


def test_concurrent_identical_queries(server, canonical_index):
    _, _, frames = canonical_index
    body = frames_to_tar(frames[20:50])

    def one(_):
        status, res = call(server, "POST", "/v1/query?top=10", body)
        assert status == 200
        return json.dumps(res["results"], sort_keys=True)

    with ThreadPoolExecutor(8) as pool:
        outs = list(pool.map(one, range(8)))
    assert len(set(outs)) == 1


def test_service_is_read_only(canonical_model, canonical_index):
    _, model = canonical_model
    _, records, frames = canonical_index
    svc = service.QueryService(model, records)
    before = json.dumps([r.scores for r in records]) + repr(model.rest_point.tolist())
    svc.handle("POST", "/v1/query", {}, frames_to_tar(frames[:30]))
    assert json.dumps([r.scores for r in records]) + repr(model.rest_point.tolist()) == before
