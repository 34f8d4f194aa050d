import json

import numpy as np
import pytest

from pair.linear_pair import LatentMap, fit_empirical_pair
from pair.neural import EndToEndModel, NeuralPairModel, init_params, pair_autoencoder_spec
from pair.persistence import (
    HashMismatchError,
    ManifestError,
    SchemaVersionError,
    load_model,
    model_kind,
    read_manifest,
    save_model,
)

SPEC = pair_autoencoder_spec()


@pytest.fixture
def linear(rng):
    X = rng.standard_normal((10, 40))
    B = rng.standard_normal((8, 10)) @ X
    return fit_empirical_pair(X, B, X, B, 4, 3)


@pytest.fixture
def neural(rng):
    maps = LatentMap(rng.standard_normal((147, 147)), rng.standard_normal((147, 147)))
    return NeuralPairModel(SPEC, init_params(SPEC, rng), init_params(SPEC, rng), maps)


@pytest.fixture
def e2e(rng):
    return EndToEndModel(SPEC, init_params(SPEC, rng))


def test_linear_roundtrip_bitwise(tmp_path, rng, linear):
    save_model(linear, tmp_path, config={"seed": 1})
    model, manifest = load_model(tmp_path)
    assert manifest["kind"] == "linear-pair" and manifest["config"] == {"seed": 1}
    for _ in range(10):
        x, b = rng.standard_normal(10), rng.standard_normal(8)
        assert model.forward(x).tobytes() == linear.forward(x).tobytes()
        assert model.inverse(b).tobytes() == linear.inverse(b).tobytes()
    assert model.ae_x.mode == linear.ae_x.mode


def test_neural_roundtrip_bitwise(tmp_path, rng, neural):
    save_model(neural, tmp_path)
    model, _ = load_model(tmp_path)
    B = rng.random((784, 10))
    assert model.inverse(B).tobytes() == neural.inverse(B).tobytes()
    assert model.forward(B).tobytes() == neural.forward(B).tobytes()


def test_e2e_roundtrip_bitwise(tmp_path, rng, e2e):
    save_model(e2e, tmp_path)
    model, manifest = load_model(tmp_path)
    assert manifest["kind"] == "end-to-end"
    B = rng.random((784, 10))
    assert model.inverse(B).tobytes() == e2e.inverse(B).tobytes()


def test_manifest_contents(tmp_path, linear):
    m = save_model(linear, tmp_path)
    assert m["schema_version"] == 1
    assert set(m["files"]) >= {"ae_x.E.pmat", "ae_b.D.pmat", "maps.M.pmat", "maps.M_dag.pmat"}
    assert all(len(v["sha256"]) == 64 for v in m["files"].values())
    assert read_manifest(tmp_path) == json.loads((tmp_path / "manifest.json").read_text())


def test_tampered_byte_names_file(tmp_path, linear):
    save_model(linear, tmp_path)
    p = tmp_path / "maps.M_dag.pmat"
    data = bytearray(p.read_bytes())
    data[-3] ^= 0x01
    p.write_bytes(bytes(data))
    with pytest.raises(HashMismatchError, match="maps.M_dag.pmat"):
        load_model(tmp_path)


def test_newer_schema_refused(tmp_path, linear):
    save_model(linear, tmp_path)
    path = tmp_path / "manifest.json"
    m = json.loads(path.read_text())
    m["schema_version"] = 2
    path.write_text(json.dumps(m))
    with pytest.raises(SchemaVersionError, match="newer than supported"):
        load_model(tmp_path)


def test_missing_file(tmp_path, e2e):
    save_model(e2e, tmp_path)
    (tmp_path / "params.0.W.pmat").unlink()
    with pytest.raises(ManifestError, match="missing"):
        load_model(tmp_path)


def test_missing_manifest(tmp_path):
    with pytest.raises(ManifestError, match="manifest.json"):
        load_model(tmp_path)


def test_unknown_kind(tmp_path, e2e):
    save_model(e2e, tmp_path)
    path = tmp_path / "manifest.json"
    m = json.loads(path.read_text())
    m["kind"] = "mystery"
    path.write_text(json.dumps(m))
    with pytest.raises(ManifestError, match="mystery"):
        read_manifest(tmp_path)


def test_model_kind_rejects_other_objects():
    with pytest.raises(TypeError):
        model_kind(np.eye(2))


def test_save_is_deterministic(tmp_path, linear):
    save_model(linear, tmp_path / "a")
    save_model(linear, tmp_path / "b")
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
