"""
模型与数据持久化工具
- 模型文件: JSON文本，所有浮点数以17位有效数字的十进制字符串保存，读回逐位一致
- 数据集文件: 同样的十进制字符串格式
- 运行清单(RunManifest): 命令、配置、种子、输入文件的git式内容哈希与输出路径
- CSV输出: 首行为 "# manifest=<清单文件名>"
"""

import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from auction.config.unified_config import AuctionConfig
from auction.models.auction_net import AuctionNet, DenseLayer
from auction.training.dataset import Dataset
from auction.exceptions import (
    AuctionBaseException, ModelFileParseError, ModelVersionError,
)

MODEL_FORMAT = "auction-net"
DATASET_FORMAT = "auction-dataset"
FORMAT_VERSION = 1
MANIFEST_PREFIX = "# manifest="
CSV_FLOAT_FORMAT = "%.17g"


def _encode_float(x: float) -> str:
    return format(float(x), ".17g")


def _encode_array(values: np.ndarray):
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 0:
        return _encode_float(values)
    return [_encode_array(v) for v in values]


def _decode_array(values, path: str, raw: bytes, key: str) -> np.ndarray:
    try:
        return np.array(_decode_nested(values), dtype=np.float64)
    except (TypeError, ValueError) as e:
        raise ModelFileParseError(path, _offset_of(raw, key), f"bad numeric array '{key}': {e}")


def _decode_nested(values):
    if isinstance(values, list):
        return [_decode_nested(v) for v in values]
    if not isinstance(values, str):
        raise TypeError(f"expected decimal string, got {type(values).__name__}")
    return float(values)


def _offset_of(raw: bytes, key: str) -> int:
    """字段在文件中的字节偏移；找不到时返回0"""
    pos = raw.find(f'"{key}"'.encode("utf-8"))
    return max(pos, 0)


def _read_document(path: str, expected_format: str) -> Tuple[Dict[str, Any], bytes]:
    raw = Path(path).read_bytes()
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise ModelFileParseError(path, e.start, "not valid UTF-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ModelFileParseError(path, len(text[:e.pos].encode("utf-8")), e.msg)
    if not isinstance(doc, dict):
        raise ModelFileParseError(path, 0, "top level must be an object")
    if doc.get("format") != expected_format:
        raise ModelFileParseError(path, _offset_of(raw, "format"),
                                  f"expected format '{expected_format}', found {doc.get('format')!r}")
    if doc.get("version") != FORMAT_VERSION:
        raise ModelVersionError(path, doc.get("version"), FORMAT_VERSION)
    return doc, raw


def _require(doc: Dict[str, Any], key: str, path: str, raw: bytes):
    if key not in doc:
        raise ModelFileParseError(path, len(raw), f"missing field '{key}'")
    return doc[key]


def _write_text(path: str, doc: Dict[str, Any]):
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with open(target, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=1, ensure_ascii=False)
        f.write("\n")


# ============ 模型文件 ============

@dataclass
class ModelFile:
    """模型文件内容：版本、结构配置、层列表、导出标志与训练来源"""
    config: AuctionConfig
    layers: List[DenseLayer]
    clip_payments: bool = False
    provenance: Dict[str, Any] = field(default_factory=dict)
    version: int = FORMAT_VERSION

    @property
    def flags(self) -> Dict[str, bool]:
        return {"clip_payments": self.clip_payments, "dummy_agent": self.config.allow_dummy_agent}

    @classmethod
    def from_net(cls, net: AuctionNet) -> "ModelFile":
        return cls(net.config, list(net.layers), net.clip_payments, dict(net.provenance))

    def to_net(self) -> AuctionNet:
        return AuctionNet(self.config, tuple(self.layers[:-2]), self.layers[-2], self.layers[-1],
                          clip_payments=self.clip_payments, provenance=dict(self.provenance))

    def to_document(self) -> Dict[str, Any]:
        return {
            "format": MODEL_FORMAT,
            "version": self.version,
            "config": self.config.to_dict(),
            "flags": self.flags,
            "provenance": self.provenance,
            "layers": [
                {
                    "name": layer.name,
                    "activation": layer.activation.value,
                    "shape": list(layer.weights.shape),
                    "weights": _encode_array(layer.weights),
                    "biases": _encode_array(layer.biases),
                }
                for layer in self.layers
            ],
        }


def save_model(net: AuctionNet, path: str):
    """保存模型（十进制文本，读回逐位一致）"""
    _write_text(path, ModelFile.from_net(net).to_document())
    logging.info(f"模型已保存: {path} ({net.config.setting}, {net.config.ir_mode.value}, "
                 f"clip={net.clip_payments})")


def read_model_file(path: str) -> ModelFile:
    doc, raw = _read_document(path, MODEL_FORMAT)
    try:
        config = AuctionConfig(**_require(doc, "config", path, raw))
    except (TypeError, AuctionBaseException) as e:
        raise ModelFileParseError(path, _offset_of(raw, "config"), f"bad config: {e}")

    flags = _require(doc, "flags", path, raw)
    if bool(flags.get("dummy_agent", config.allow_dummy_agent)) != config.allow_dummy_agent:
        raise ModelFileParseError(path, _offset_of(raw, "dummy_agent"), "dummy_agent flag contradicts config")

    layers = []
    for entry in _require(doc, "layers", path, raw):
        try:
            name, activation, shape = entry["name"], entry["activation"], tuple(entry["shape"])
        except (KeyError, TypeError) as e:
            raise ModelFileParseError(path, _offset_of(raw, "layers"), f"bad layer entry: {e}")
        weights = _decode_array(entry.get("weights"), path, raw, "weights")
        biases = _decode_array(entry.get("biases"), path, raw, "biases")
        if weights.shape != shape:
            raise ModelFileParseError(path, _offset_of(raw, name), f"layer {name}: shape {weights.shape} != {shape}")
        try:
            layers.append(DenseLayer(name, weights, biases, activation))
        except (ValueError, AuctionBaseException) as e:
            raise ModelFileParseError(path, _offset_of(raw, name), f"layer {name}: {e}")
    if len(layers) < 3:
        raise ModelFileParseError(path, _offset_of(raw, "layers"), "need trunk, allocation and payment layers")
    return ModelFile(config, layers, bool(flags.get("clip_payments", False)),
                     dict(doc.get("provenance") or {}), doc["version"])


def load_model(path: str) -> AuctionNet:
    """读取模型文件；格式错误给出字节偏移，版本不符直接拒绝"""
    model_file = read_model_file(path)
    try:
        net = model_file.to_net()
    except AuctionBaseException as e:
        raise ModelFileParseError(path, _offset_of(Path(path).read_bytes(), "layers"), e.message)
    logging.debug(f"模型已加载: {path}")
    return net


# ============ 数据集文件 ============

def save_dataset(dataset: Dataset, path: str):
    _write_text(path, {
        "format": DATASET_FORMAT,
        "version": FORMAT_VERSION,
        "n_agents": dataset.n_agents,
        "n_items": dataset.n_items,
        "count": len(dataset),
        "seed": dataset.seed,
        "low": _encode_float(dataset.low),
        "high": _encode_float(dataset.high),
        "profiles": _encode_array(dataset.profiles),
    })
    logging.info(f"数据集已保存: {path} ({len(dataset)} 个样本)")


def load_dataset(path: str) -> Dataset:
    doc, raw = _read_document(path, DATASET_FORMAT)
    profiles = _decode_array(_require(doc, "profiles", path, raw), path, raw, "profiles")
    expected = (doc.get("count"), doc.get("n_agents"), doc.get("n_items"))
    if profiles.shape != expected:
        raise ModelFileParseError(path, _offset_of(raw, "profiles"), f"shape {profiles.shape} != {expected}")
    return Dataset(profiles=profiles, seed=int(doc.get("seed", 0)),
                   low=float(doc.get("low", "0")), high=float(doc.get("high", "1")))


# ============ 运行清单与CSV ============

def git_blob_hash(data: bytes) -> str:
    """与 `git hash-object` 相同的内容哈希"""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def inputs_hash(paths: Sequence[str], extra: Optional[Dict[str, Any]] = None) -> str:
    """所有输入文件（及配置）的组合哈希，类似git树对象"""
    lines = []
    for p in sorted(str(p) for p in paths):
        lines.append(f"{git_blob_hash(Path(p).read_bytes())} {Path(p).name}")
    if extra is not None:
        payload = json.dumps(extra, sort_keys=True, default=str).encode("utf-8")
        lines.append(f"{git_blob_hash(payload)} config")
    return git_blob_hash("\n".join(lines).encode("utf-8"))


@dataclass
class RunManifest:
    """一次命令运行的可复现记录（不含时间戳）"""
    command: str
    config: Dict[str, Any]
    seed: int
    inputs: List[str] = field(default_factory=list)
    outputs: List[str] = field(default_factory=list)
    input_hash: str = ""
    notes: Dict[str, Any] = field(default_factory=dict)

    def refresh_hash(self) -> str:
        """按当前的输入文件与配置重新计算哈希"""
        self.input_hash = inputs_hash(self.inputs, {"command": self.command, "config": self.config,
                                                    "seed": self.seed})
        return self.input_hash

    def to_dict(self) -> Dict[str, Any]:
        self.refresh_hash()
        return {
            "command": self.command,
            "config": self.config,
            "seed": self.seed,
            "inputs": list(self.inputs),
            "input_hash": self.input_hash,
            "outputs": list(self.outputs),
            "notes": self.notes,
        }

    def save(self, path: str) -> str:
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        with open(target, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True, default=str, ensure_ascii=False)
            f.write("\n")
        return str(target)


def manifest_path_for(output_path: str) -> str:
    p = Path(output_path)
    return str(p.with_name(p.stem + ".manifest.json"))


def write_csv(frame: pd.DataFrame, path: str, manifest: str):
    """写CSV，首行注明所属清单文件"""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with open(target, "w", encoding="utf-8", newline="") as f:
        f.write(f"{MANIFEST_PREFIX}{Path(manifest).name}\n")
        frame.to_csv(f, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")


def read_csv(path: str) -> Tuple[pd.DataFrame, Optional[str]]:
    """读CSV，返回 (数据, 清单文件名)；没有清单行的CSV也可读取"""
    with open(path, "r", encoding="utf-8") as f:
        first = f.readline()
    manifest = first[len(MANIFEST_PREFIX):].strip() if first.startswith(MANIFEST_PREFIX) else None
    frame = pd.read_csv(path, skiprows=1 if manifest else 0, float_precision="round_trip")
    return frame, manifest
