import io
import json
import tarfile
import threading
import zipfile
from http.client import HTTPConnection

import numpy as np
import pytest
from PIL import Image
from scipy import ndimage

from motioncloud import cli, indexer, pipeline, service, synth, templates

# Lines recorded by the acceptance suite, echoed in the terminal summary.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


def textured(rng, shape=(128, 128), sigma=2.0):
    img = rng.standard_normal(shape)
    img = ndimage.gaussian_filter(img, sigma)
    img = 128 + 45 * img / img.std()
    return np.clip(img, 0, 255)


def frames_to_tar(frames):
    buf = io.BytesIO()
    with tarfile.open(fileobj=buf, mode="w") as tf:
        for i, f in enumerate(frames):
            img = io.BytesIO()
            Image.fromarray(np.asarray(f, np.uint8)).save(img, format="PNG")
            info = tarfile.TarInfo(f"clip/frame_{i:05d}.png")
            info.size = img.getbuffer().nbytes
            img.seek(0)
            tf.addfile(info, img)
    return buf.getvalue()


def frames_to_zip(frames):
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        for i, f in enumerate(frames):
            img = io.BytesIO()
            Image.fromarray(np.asarray(f, np.uint8)).save(img, format="PNG")
            zf.writestr(f"frame_{i:05d}.png", img.getvalue())
    return buf.getvalue()


def multipart(payload, boundary="XyZ123"):
    body = (
        f"--{boundary}\r\n"
        'Content-Disposition: form-data; name="clip"; filename="clip.zip"\r\n'
        "Content-Type: application/zip\r\n\r\n"
    ).encode() + payload + f"\r\n--{boundary}--\r\n".encode()
    return body, f"multipart/form-data; boundary={boundary}"


@pytest.fixture(scope="session")
def small_spec():
    return synth.SynthSpec(clips_per_class=3, frames=24, size=128, seed=5)


@pytest.fixture(scope="session")
def small_items(small_spec):
    """(label, clip_id, features) for a small synthetic set at 128 px."""
    cfg = pipeline.PipelineConfig()
    out = []
    for c in synth.generate_clips(small_spec):
        t = templates.sequence_templates(c.frames, cfg.flow)
        out.append((c.label, c.clip_id, pipeline.features(t, cfg.downsample)))
    return out


@pytest.fixture(scope="session")
def small_model(small_items, tmp_path_factory):
    """Poly model trained on the small set, saved and reloaded like the CLI does."""
    model = pipeline.train_model(small_items, "poly", 2, K=6)
    d = tmp_path_factory.mktemp("model")
    pipeline.save_action_model(model, str(d))
    return pipeline.load_action_model(str(d))


@pytest.fixture(scope="session")
def disk_dataset(tmp_path_factory):
    """Small dataset on disk at the canonical frame size, as the CLI reads it."""
    root = tmp_path_factory.mktemp("data")
    synth.generate_clips(synth.SynthSpec(clips_per_class=2, frames=16, seed=1), str(root))
    return root


@pytest.fixture(scope="session")
def canonical_model(disk_dataset, tmp_path_factory):
    """(model directory, loaded model) trained through the CLI code path."""
    items = cli.load_dataset(str(disk_dataset))
    model = pipeline.train_model(items, "poly", 2, K=5)
    d = tmp_path_factory.mktemp("canon_model")
    pipeline.save_action_model(model, str(d))
    return d, pipeline.load_action_model(str(d))


@pytest.fixture(scope="session")
def canonical_index(canonical_model, tmp_path_factory):
    """(index path, records, frames) for a short timeline indexed with 40/10 windows."""
    _, model = canonical_model
    frames, _ = synth.timeline([("wave", 30), ("run", 30), ("null", 20)], seed=7)
    recs = indexer.index_timeline(frames, model, indexer.IndexerConfig(40, 10), "tl")
    path = tmp_path_factory.mktemp("idx") / "idx.jsonl"
    indexer.save_index(recs, str(path), model.eigen.K)
    return path, indexer.load_index(str(path)), frames


@pytest.fixture(scope="session")
def server(canonical_model, canonical_index):
    _, model = canonical_model
    _, records, _ = canonical_index
    srv = service.make_server(model, records, port=0)
    th = threading.Thread(target=srv.serve_forever, daemon=True)
    th.start()
    yield srv.server_address[1]
    srv.shutdown()
    srv.server_close()


def call(port, method, path, body=None, headers=None):
    conn = HTTPConnection("127.0.0.1", port, timeout=60)
    conn.request(method, path, body=body, headers=headers or {})
    resp = conn.getresponse()
    data = resp.read()
    conn.close()
    assert resp.getheader("Content-Type") == "application/json"
    return resp.status, json.loads(data)
