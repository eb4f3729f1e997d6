"""Single-file checkpoints: a zip archive of .npy tensors plus a JSON header.

Entries carry a fixed timestamp and are written in a fixed order, so equal
models produce byte-identical files.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .core import AdamState
from .model import DialogueModel, ModelConfig
from .vocab import Vocabulary

FORMAT_VERSION = 1
_STAMP = (1980, 1, 1, 0, 0, 0)


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    model: DialogueModel
    adam: AdamState | None
    meta: dict

    @property
    def epoch(self) -> int:
        return int(self.meta.get("rng", {}).get("epoch", 0))


def _npy_bytes(a: np.ndarray) -> bytes:
    buf = io.BytesIO()
    np.lib.format.write_array(buf, np.ascontiguousarray(a), allow_pickle=False)
    return buf.getvalue()


def _write(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_STAMP)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def save_checkpoint(path: str | Path, model: DialogueModel, adam: AdamState | None = None,
                    epoch: int = 0, seed: int = 0, extra: dict | None = None) -> None:
    meta = {
        "format_version": FORMAT_VERSION,
        "model_kind": model.kind,
        "vocab": list(model.vocab.itos),
        "user_ids": list(model.user_ids),
        "model_config": asdict(model.config),
        "sharing_table": model.sharing_table,
        "params": list(model.params),
        "rng": {"seed": seed, "epoch": epoch},
        "extra": extra or {},
    }
    if adam is not None:
        meta["adam"] = {"lr": adam.lr, "beta1": adam.beta1, "beta2": adam.beta2, "eps": adam.eps,
                        "t": adam.t, "steps": dict(sorted(adam.steps.items()))}
    with zipfile.ZipFile(path, "w") as zf:
        _write(zf, "meta.json", json.dumps(meta, sort_keys=True, indent=1).encode("utf-8"))
        for name, p in model.params.items():
            _write(zf, f"params/{name}.npy", _npy_bytes(p.value))
        if adam is not None:
            for name in sorted(adam.m):
                _write(zf, f"adam_m/{name}.npy", _npy_bytes(adam.m[name]))
                _write(zf, f"adam_v/{name}.npy", _npy_bytes(adam.v[name]))


def _read_array(zf: zipfile.ZipFile, name: str) -> np.ndarray:
    with zf.open(name) as fh:
        return np.lib.format.read_array(io.BytesIO(fh.read()), allow_pickle=False)


def load_checkpoint(path: str | Path) -> Checkpoint:
    try:
        zf = zipfile.ZipFile(path)
    except (OSError, zipfile.BadZipFile) as exc:
        raise CheckpointError(f"cannot open checkpoint {path}: {exc}") from exc
    with zf:
        meta = json.loads(zf.read("meta.json"))
        if meta.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"unsupported checkpoint version {meta.get('format_version')}")
        model = DialogueModel(meta["model_kind"], Vocabulary(meta["vocab"]), meta["user_ids"],
                              ModelConfig(**meta["model_config"]))
        if list(model.params) != meta["params"]:
            raise CheckpointError("parameter layout does not match the model kind")
        for name, p in model.params.items():
            value = _read_array(zf, f"params/{name}.npy")
            if value.shape != p.shape:
                raise CheckpointError(f"{name}: stored shape {value.shape} != expected {p.shape}")
            p.value[...] = value
        adam = None
        if "adam" in meta:
            a = meta["adam"]
            adam = AdamState(lr=a["lr"], beta1=a["beta1"], beta2=a["beta2"], eps=a["eps"], t=a["t"],
                             steps={k: int(v) for k, v in a["steps"].items()})
            for name in a["steps"]:
                adam.m[name] = _read_array(zf, f"adam_m/{name}.npy")
                adam.v[name] = _read_array(zf, f"adam_v/{name}.npy")
    return Checkpoint(model, adam, meta)
