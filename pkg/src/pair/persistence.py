"""Saving and loading trained models.

A model directory holds one PMAT file per matrix plus ``manifest.json``::

    {
      "schema_version": 1,
      "kind": "linear-pair" | "neural-pair" | "end-to-end",
      "library_version": "...",
      "files": {"<name>.pmat": {"sha256": "...", "shape": [...]}, ...},
      "attrs": {...},      # everything needed to rebuild the object
      "config": {...}      # generation config snapshot, free form
    }

Arrays of any rank are stored as 2-D PMAT matrices; ``shape`` restores the
original rank. Loading re-hashes every file before parsing it.
"""

from __future__ import annotations

import hashlib
import json
import os

import numpy as np

from . import pmat
from ._version import __version__
from .linear_pair import LatentMap, LinearAutoencoder, PairModel
from .neural import ConvNetSpec, EndToEndModel, NeuralPairModel

__all__ = [
    "KINDS",
    "MANIFEST",
    "SCHEMA_VERSION",
    "ManifestError",
    "HashMismatchError",
    "SchemaVersionError",
    "load_model",
    "model_kind",
    "read_manifest",
    "save_model",
]

SCHEMA_VERSION = 1
MANIFEST = "manifest.json"
KINDS = ("linear-pair", "neural-pair", "end-to-end")


class ManifestError(ValueError):
    pass


class HashMismatchError(ManifestError):
    pass


class SchemaVersionError(ManifestError):
    pass


def _sha256(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def model_kind(model) -> str:
    if isinstance(model, PairModel):
        return "linear-pair"
    if isinstance(model, NeuralPairModel):
        return "neural-pair"
    if isinstance(model, EndToEndModel):
        return "end-to-end"
    raise TypeError(f"cannot persist objects of type {type(model).__name__}")


def _linear_ae(prefix, ae, arrays, attrs):
    arrays[f"{prefix}.E"] = ae.E
    arrays[f"{prefix}.D"] = ae.D
    if ae.K is not None:
        arrays[f"{prefix}.K"] = ae.K
    if ae.sigma is not None:
        arrays[f"{prefix}.sigma"] = ae.sigma
    attrs[prefix] = {"mode": ae.mode, "tie": bool(ae.tie)}


def _params(prefix, params, arrays):
    for i, (W, b) in enumerate(params):
        arrays[f"{prefix}.{i}.W"] = W
        arrays[f"{prefix}.{i}.b"] = b


def _flatten(model):
    kind = model_kind(model)
    arrays, attrs = {}, {}
    if kind == "linear-pair":
        _linear_ae("ae_x", model.ae_x, arrays, attrs)
        _linear_ae("ae_b", model.ae_b, arrays, attrs)
        attrs["meta"] = model.meta
    elif kind == "neural-pair":
        attrs["spec"] = model.spec.to_dict()
        _params("params_x", model.params_x, arrays)
        _params("params_b", model.params_b, arrays)
    else:
        attrs["spec"] = model.spec.to_dict()
        _params("params", model.params, arrays)
    if kind != "end-to-end":
        arrays["maps.M"] = model.maps.M
        arrays["maps.M_dag"] = model.maps.M_dag
        attrs["maps"] = {"mode": model.maps.mode}
    return kind, arrays, attrs


def save_model(model, directory, config=None):
    """Write ``model`` into ``directory`` (created if needed); returns the
    manifest dict."""
    kind, arrays, attrs = _flatten(model)
    os.makedirs(directory, exist_ok=True)
    files = {}
    for name, a in arrays.items():
        a = np.asarray(a, dtype=np.float64)
        mat = a.reshape(a.shape[0], -1) if a.ndim >= 2 else a.reshape(-1, 1)
        data = pmat.dumps(mat)
        fname = f"{name}.pmat"
        with open(os.path.join(directory, fname), "wb") as f:
            f.write(data)
        files[fname] = {"sha256": _sha256(data), "shape": list(a.shape)}
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "kind": kind,
        "library_version": __version__,
        "files": files,
        "attrs": attrs,
        "config": config or {},
    }
    with open(os.path.join(directory, MANIFEST), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
    return manifest


def read_manifest(directory):
    path = os.path.join(directory, MANIFEST)
    try:
        with open(path, encoding="utf-8") as f:
            manifest = json.load(f)
    except FileNotFoundError:
        raise ManifestError(f"no {MANIFEST} in {directory}") from None
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path} is not valid JSON: {exc}") from None
    version = manifest.get("schema_version")
    if not isinstance(version, int):
        raise SchemaVersionError(f"{path}: missing or invalid schema_version")
    if version > SCHEMA_VERSION:
        raise SchemaVersionError(
            f"{path}: schema_version {version} is newer than supported version "
            f"{SCHEMA_VERSION}; upgrade the library (this is {__version__})"
        )
    if version < 1:
        raise SchemaVersionError(f"{path}: unknown schema_version {version}")
    if manifest.get("kind") not in KINDS:
        raise ManifestError(f"{path}: unknown model kind {manifest.get('kind')!r}")
    if not isinstance(manifest.get("files"), dict):
        raise ManifestError(f"{path}: missing file list")
    return manifest


def _load_arrays(directory, files):
    out = {}
    for fname, info in files.items():
        path = os.path.join(directory, fname)
        try:
            with open(path, "rb") as f:
                data = f.read()
        except FileNotFoundError:
            raise ManifestError(f"file {fname} listed in the manifest is missing") from None
        digest = _sha256(data)
        if digest != info["sha256"]:
            raise HashMismatchError(
                f"hash mismatch for {fname}: manifest {info['sha256']}, file {digest}"
            )
        out[fname[: -len(".pmat")]] = pmat.loads(data).reshape(info["shape"])
    return out


def _get_params(prefix, arrays):
    params, i = [], 0
    while f"{prefix}.{i}.W" in arrays:
        params.append((arrays[f"{prefix}.{i}.W"], arrays[f"{prefix}.{i}.b"]))
        i += 1
    return params


def _get_ae(prefix, arrays, attrs):
    return LinearAutoencoder(
        E=arrays[f"{prefix}.E"],
        D=arrays[f"{prefix}.D"],
        mode=attrs[prefix]["mode"],
        K=arrays.get(f"{prefix}.K"),
        sigma=arrays.get(f"{prefix}.sigma"),
        tie=attrs[prefix]["tie"],
    )


def load_model(directory):
    """Inverse of :func:`save_model`. Returns ``(model, manifest)``."""
    manifest = read_manifest(directory)
    arrays = _load_arrays(directory, manifest["files"])
    attrs = manifest.get("attrs", {})
    kind = manifest["kind"]
    try:
        if kind == "end-to-end":
            model = EndToEndModel(ConvNetSpec.from_dict(attrs["spec"]), _get_params("params", arrays))
        else:
            maps = LatentMap(arrays["maps.M"], arrays["maps.M_dag"], attrs["maps"]["mode"])
            if kind == "linear-pair":
                model = PairModel(
                    _get_ae("ae_x", arrays, attrs),
                    _get_ae("ae_b", arrays, attrs),
                    maps,
                    attrs.get("meta", {}),
                )
            else:
                model = NeuralPairModel(
                    ConvNetSpec.from_dict(attrs["spec"]),
                    _get_params("params_x", arrays),
                    _get_params("params_b", arrays),
                    maps,
                )
    except KeyError as exc:
        raise ManifestError(f"manifest in {directory} lacks entry {exc}") from None
    return model, manifest
