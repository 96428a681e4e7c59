"""Versioned checkpoint container for both networks.

One .npz holds a JSON meta blob (format version, model kind, config,
epoch), the named parameter arrays, and the optimizer moment estimates.
float64 arrays survive the round trip bit-exactly, which the resume
determinism contract depends on.
"""

import json
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .exceptions import DataError
from .optim import Adam
from .sepnet import ModelConfig, SepModel
from .sod import SodConfig, SodModel

FORMAT_VERSION = 1


def _meta(kind: str, config, epoch: int, extra: dict | None = None) -> dict:
    meta = {"format_version": FORMAT_VERSION, "kind": kind,
            "config": asdict(config), "epoch": int(epoch)}
    if extra:
        meta.update(extra)
    return meta


def _pack(meta: dict, params: dict, opt: Adam | None) -> dict:
    arrays = {"meta": np.frombuffer(
        json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)}
    for name, arr in params.items():
        arrays[f"param/{name}"] = arr
    if opt is not None:
        state = opt.state_dict()
        arrays["opt/t"] = np.array([state["t"]], dtype=np.int64)
        for name, arr in state["m"].items():
            arrays[f"opt/m/{name}"] = arr
        for name, arr in state["v"].items():
            arrays[f"opt/v/{name}"] = arr
    return arrays


def _write(path, arrays: dict) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        np.savez(f, **arrays)


def save_separator(path, model: SepModel, opt: Adam | None = None,
                   epoch: int = 0) -> None:
    _write(path, _pack(_meta("separator", model.config, epoch),
                       model.params, opt))


def save_sod(path, model: SodModel, opt: Adam | None = None,
             epoch: int = 0) -> None:
    _write(path, _pack(_meta("sod", model.config, epoch),
                       model.params, opt))


def _load_arrays(path) -> tuple[dict, dict]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    try:
        with np.load(path) as z:
            arrays = {k: z[k] for k in z.files}
    except (OSError, ValueError) as e:
        raise DataError(f"cannot read checkpoint {path}: {e}")
    if "meta" not in arrays:
        raise DataError(f"{path}: not a checkpoint (no meta entry)")
    try:
        meta = json.loads(bytes(arrays.pop("meta")).decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"{path}: corrupt meta blob: {e}")
    version = meta.get("format_version")
    if version != FORMAT_VERSION:
        raise DataError(
            f"{path}: format version {version} != {FORMAT_VERSION}")
    return meta, arrays


def _split(arrays: dict) -> tuple[dict, dict | None]:
    params, m, v = {}, {}, {}
    t = None
    for key, arr in arrays.items():
        if key.startswith("param/"):
            params[key[len("param/"):]] = arr
        elif key.startswith("opt/m/"):
            m[key[len("opt/m/"):]] = arr
        elif key.startswith("opt/v/"):
            v[key[len("opt/v/"):]] = arr
        elif key == "opt/t":
            t = int(arr[0])
    opt_state = None if t is None else {"t": t, "m": m, "v": v}
    return params, opt_state


def _restore(model, params: dict, opt_state, path) -> tuple:
    expected = set(model.params)
    if set(params) != expected:
        raise DataError(
            f"{path}: parameter names do not match the configured model")
    for name, arr in params.items():
        if arr.shape != model.params[name].shape:
            raise DataError(f"{path}: shape mismatch for {name}")
        model.params[name] = arr.astype(np.float64, copy=True)
    opt = None
    if opt_state is not None:
        opt = Adam(model.params)
        opt.load_state_dict(opt_state)
    return model, opt


def load_separator(path) -> tuple[SepModel, Adam | None, int]:
    meta, arrays = _load_arrays(path)
    if meta.get("kind") != "separator":
        raise DataError(f"{path}: kind '{meta.get('kind')}' != 'separator'")
    model = SepModel(ModelConfig(**meta["config"]))
    params, opt_state = _split(arrays)
    model, opt = _restore(model, params, opt_state, path)
    return model, opt, meta["epoch"]


def load_sod(path) -> tuple[SodModel, Adam | None, int]:
    meta, arrays = _load_arrays(path)
    if meta.get("kind") != "sod":
        raise DataError(f"{path}: kind '{meta.get('kind')}' != 'sod'")
    model = SodModel(SodConfig(**meta["config"]))
    params, opt_state = _split(arrays)
    model, opt = _restore(model, params, opt_state, path)
    return model, opt, meta["epoch"]
