"""Binary checkpoint, dataset and dump files.

Layout (all integers and floats little-endian)::

    b"VQC1"  u32 version  u32 0x01020304  4-byte kind  u32 n_sections
    per section: u16 name_len, name (utf-8), u8 type, u64 payload_len, payload

Section types: 0 = JSON object, 1 = float64 array, 2 = int64 array. Array
payloads are ``u32 ndim, ndim * u64 shape, row-major data``.
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .codebook import Codebook
from .errors import ArtifactError
from .numcore import LinearLayer, Mlp
from .synthdata import GaussianMixtureDataset, MixtureSpec, StandardScaler
from .vqvae import VqVae

MAGIC = b"VQC1"
VERSION = 1
ENDIAN_MARK = 0x01020304
KIND_CHECKPOINT = b"CKPT"
KIND_DATASET = b"DSET"
KIND_DUMP = b"DUMP"

_JSON, _F64, _I64 = 0, 1, 2


def _encode_array(arr: np.ndarray) -> tuple[int, bytes]:
    if np.issubdtype(arr.dtype, np.integer) or arr.dtype == np.bool_:
        kind, data = _I64, arr.astype("<i8")
    else:
        kind, data = _F64, arr.astype("<f8")
    head = struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return kind, head + np.ascontiguousarray(data).tobytes()


def write_artifact(path, kind: bytes, sections: dict) -> None:
    parts = [MAGIC, struct.pack("<II", VERSION, ENDIAN_MARK), kind,
             struct.pack("<I", len(sections))]
    for name, value in sections.items():
        if isinstance(value, dict):
            stype, payload = _JSON, json.dumps(value, sort_keys=True).encode()
        else:
            stype, payload = _encode_array(np.asarray(value))
        raw = name.encode()
        parts += [struct.pack("<H", len(raw)), raw, struct.pack("<BQ", stype, len(payload)),
                  payload]
    try:
        Path(path).write_bytes(b"".join(parts))
    except OSError as exc:
        raise ArtifactError(f"cannot write {path}: {exc}") from exc


def read_artifact(path, expect_kind: bytes | None = None) -> tuple[bytes, dict]:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise ArtifactError(f"cannot read {path}: {exc}") from exc
    try:
        if buf[:4] != MAGIC:
            raise ArtifactError(f"{path}: bad magic {buf[:4]!r}")
        version, mark = struct.unpack_from("<II", buf, 4)
        if mark != ENDIAN_MARK:
            raise ArtifactError(f"{path}: unexpected endianness marker {mark:#x}")
        if version != VERSION:
            raise ArtifactError(f"{path}: unsupported format version {version}")
        kind = buf[12:16]
        if expect_kind is not None and kind != expect_kind:
            raise ArtifactError(f"{path}: expected a {expect_kind!r} file, found {kind!r}")
        (count,) = struct.unpack_from("<I", buf, 16)
        pos = 20
        sections = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            name = buf[pos + 2 : pos + 2 + nlen].decode()
            pos += 2 + nlen
            stype, plen = struct.unpack_from("<BQ", buf, pos)
            pos += 9
            payload = buf[pos : pos + plen]
            if len(payload) != plen:
                raise ArtifactError(f"{path}: truncated section {name!r}")
            pos += plen
            if stype == _JSON:
                sections[name] = json.loads(payload)
            else:
                (ndim,) = struct.unpack_from("<I", payload, 0)
                shape = struct.unpack_from(f"<{ndim}Q", payload, 4)
                dtype = "<f8" if stype == _F64 else "<i8"
                data = np.frombuffer(payload, dtype=dtype, offset=4 + 8 * ndim)
                sections[name] = data.reshape(shape).astype(dtype[1:]).copy()
    except (struct.error, UnicodeDecodeError, ValueError) as exc:
        raise ArtifactError(f"{path}: corrupt artifact ({exc})") from exc
    return kind, sections


def _mlp_sections(prefix: str, net: Mlp) -> dict:
    out = {}
    for i, layer in enumerate(net.layers):
        out[f"{prefix}.{i}.weight"] = layer.weight
        out[f"{prefix}.{i}.bias"] = layer.bias
        out[f"{prefix}.{i}.m_weight"] = layer.m_weight
        out[f"{prefix}.{i}.v_weight"] = layer.v_weight
        out[f"{prefix}.{i}.m_bias"] = layer.m_bias
        out[f"{prefix}.{i}.v_bias"] = layer.v_bias
    return out


def _mlp_from_sections(prefix: str, n_layers: int, step: int, sec: dict) -> Mlp:
    layers = []
    for i in range(n_layers):
        p = f"{prefix}.{i}."
        layer = LinearLayer(sec[p + "weight"], sec[p + "bias"])
        layer.m_weight[...] = sec[p + "m_weight"]
        layer.v_weight[...] = sec[p + "v_weight"]
        layer.m_bias[...] = sec[p + "m_bias"]
        layer.v_bias[...] = sec[p + "v_bias"]
        layers.append(layer)
    net = Mlp(layers)
    net.step = step
    return net


def save_checkpoint(path, model: VqVae, meta: dict | None = None) -> None:
    """Encoder, decoder (with AdamW state) and codebook (with EMA state)."""
    cb = model.codebook
    header = {
        "beta": model.beta,
        "tokens_per_sample": model.tokens_per_sample,
        "gamma": cb.gamma,
        "codebook_initialized": cb.initialized,
        "encoder_layers": len(model.encoder.layers),
        "decoder_layers": len(model.decoder.layers),
        "encoder_step": model.encoder.step,
        "decoder_step": model.decoder.step,
        "meta": meta or {},
    }
    sections = {"header": header, "codebook.tokens": cb.tokens,
                "codebook.ema_sum": cb.ema_sum, "codebook.ema_count": cb.ema_count}
    sections.update(_mlp_sections("encoder", model.encoder))
    sections.update(_mlp_sections("decoder", model.decoder))
    write_artifact(path, KIND_CHECKPOINT, sections)


def load_checkpoint(path) -> tuple[VqVae, dict]:
    """Returns ``(model, meta)`` where ``meta`` is whatever was passed to save."""
    _, sec = read_artifact(path, KIND_CHECKPOINT)
    try:
        h = sec["header"]
        cb = Codebook(*sec["codebook.tokens"].shape, gamma=h["gamma"])
        cb.tokens = sec["codebook.tokens"]
        cb.ema_sum = sec["codebook.ema_sum"]
        cb.ema_count = sec["codebook.ema_count"]
        cb.initialized = h["codebook_initialized"]
        enc = _mlp_from_sections("encoder", h["encoder_layers"], h["encoder_step"], sec)
        dec = _mlp_from_sections("decoder", h["decoder_layers"], h["decoder_step"], sec)
    except KeyError as exc:
        raise ArtifactError(f"{path}: missing section {exc}") from exc
    return VqVae(enc, dec, cb, h["beta"], h["tokens_per_sample"]), h["meta"]


def save_dataset(path, ds: GaussianMixtureDataset) -> None:
    s = ds.spec
    header = {
        "dim": ds.dim, "n": len(ds), "n_clusters": ds.n_clusters, "seed": s.seed,
        "points_per_cluster": s.points_per_cluster, "cluster_std": s.cluster_std,
        "separation": s.separation,
    }
    write_artifact(path, KIND_DATASET, {
        "header": header,
        "scaler.mean": ds.scaler.mean,
        "scaler.std": ds.scaler.std,
        "cluster_means": ds.cluster_means,
        "samples": ds.samples,
        "labels": ds.labels,
    })


def load_dataset(path) -> GaussianMixtureDataset:
    _, sec = read_artifact(path, KIND_DATASET)
    try:
        h = sec["header"]
        spec = MixtureSpec(
            n_clusters=h["n_clusters"], points_per_cluster=h["points_per_cluster"],
            dim=h["dim"], cluster_std=h["cluster_std"], separation=h["separation"],
            seed=h["seed"], cluster_means=sec["cluster_means"],
        )
        return GaussianMixtureDataset(
            sec["samples"], sec["labels"],
            StandardScaler(sec["scaler.mean"], sec["scaler.std"]),
            spec, sec["cluster_means"],
        )
    except KeyError as exc:
        raise ArtifactError(f"{path}: missing section {exc}") from exc


def save_dump(path, embeddings, tokens, assignment, labels=None, meta: dict | None = None) -> None:
    """Raw encoder outputs, codebook tokens and token assignments for external plots."""
    sections = {"header": meta or {}, "embeddings": np.asarray(embeddings),
                "tokens": np.asarray(tokens), "assignment": np.asarray(assignment)}
    if labels is not None:
        sections["labels"] = np.asarray(labels)
    write_artifact(path, KIND_DUMP, sections)


def load_dump(path) -> dict:
    return read_artifact(path, KIND_DUMP)[1]
