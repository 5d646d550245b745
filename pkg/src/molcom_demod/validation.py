"""
Validation utilities for pipeline artifacts against their documented schemas:
transmissions.jsonl corpora and segment dataset directories.
"""

import json
import math
from pathlib import Path
from typing import Any

import numpy as np

from molcom_demod.errors import DataError, DomainError
from molcom_demod.preprocess import DATA_FILE, HEADER_FILE, LABELS_FILE, SPLIT_NAMES
from molcom_demod.testbed_sim import Transmission

RECORD_KEYS = ("config", "symbols", "boundaries_s", "t_s", "v")
CONFIG_KEYS = ("modulation", "channel", "noise", "seed", "index")
HEADER_KEYS = ("n", "len", "alphabet", "split", "provenance")


def _is_number_list(values: Any) -> bool:
    return isinstance(values, list) and all(
        isinstance(v, int | float) and not isinstance(v, bool) and math.isfinite(v) for v in values
    )


def validate_record(record: Any, line_no: int) -> dict[str, Any]:
    """Validate one transmissions.jsonl record."""
    issues: list[str] = []
    if not isinstance(record, dict):
        return {"line": line_no, "valid": False, "issues": ["Record is not a JSON object"]}

    missing = [k for k in RECORD_KEYS if k not in record]
    if missing:
        issues.append(f"Missing keys: {missing}")
        return {"line": line_no, "valid": False, "issues": issues}

    config = record["config"]
    if not isinstance(config, dict):
        issues.append("config is not an object")
    else:
        missing_config = [k for k in CONFIG_KEYS if k not in config]
        if missing_config:
            issues.append(f"Missing config keys: {missing_config}")

    for key in ("boundaries_s", "t_s", "v"):
        if not _is_number_list(record[key]):
            issues.append(f"{key} must be a list of finite numbers")
    symbols = record["symbols"]
    if not isinstance(symbols, list) or not all(isinstance(s, int) and s >= 0 for s in symbols):
        issues.append("symbols must be a list of nonnegative integers")

    if issues:
        return {"line": line_no, "valid": False, "issues": issues}

    if len(record["t_s"]) != len(record["v"]):
        issues.append(f"t_s has {len(record['t_s'])} samples, v has {len(record['v'])}")
    if len(record["boundaries_s"]) != len(symbols):
        issues.append(f"{len(symbols)} symbols but {len(record['boundaries_s'])} boundaries")
    if np.any(np.diff(record["t_s"]) <= 0):
        issues.append("t_s is not strictly increasing")
    if np.any(np.diff(record["boundaries_s"]) <= 0):
        issues.append("boundaries_s is not strictly increasing")

    alphabet = None
    symbol_rate = None
    try:
        tx = Transmission.from_record(record)
        alphabet = tx.modulation.alphabet_size
        symbol_rate = tx.modulation.symbol_rate
        if symbols and max(symbols) >= alphabet:
            issues.append(f"symbols exceed alphabet size {alphabet}")
    except (DataError, DomainError) as e:
        issues.append(f"Config does not parse: {e}")

    return {
        "line": line_no,
        "index": config.get("index"),
        "n_symbols": len(symbols),
        "n_samples": len(record["t_s"]),
        "alphabet": alphabet,
        "symbol_rate": symbol_rate,
        "valid": not issues,
        "issues": issues,
    }


def validate_corpus_consistency(validations: list[dict[str, Any]]) -> list[str]:
    """Cross-record checks: one scenario per corpus, unique contiguous indices."""
    issues = []
    scenarios = {(v.get("alphabet"), v.get("symbol_rate")) for v in validations if v["valid"]}
    if len(scenarios) > 1:
        issues.append(f"Mixed (alphabet, symbol_rate) configurations: {sorted(scenarios)}")

    indices = [v["index"] for v in validations if isinstance(v.get("index"), int)]
    if len(set(indices)) != len(indices):
        issues.append("Duplicate transmission indices")
    if indices:
        missing = set(range(min(indices), max(indices) + 1)) - set(indices)
        if missing:
            issues.append(f"Missing transmission indices: {sorted(missing)}")
    return issues


def validate_corpus_file(path: Path) -> tuple[list[dict[str, Any]], list[str]]:
    """Validate every line of a transmissions.jsonl file."""
    validations = []
    global_issues = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                validations.append({"line": line_no, "valid": False, "issues": [f"Invalid JSON: {e}"]})
                continue
            validations.append(validate_record(record, line_no))
    if not validations:
        global_issues.append("Corpus is empty")
    global_issues += validate_corpus_consistency(validations)
    return validations, global_issues


def validate_dataset_dir(in_dir: Path) -> dict[str, Any]:
    """Validate a segment dataset directory (header.json, data.f32, labels.u8)."""
    issues: list[str] = []
    in_dir = Path(in_dir)
    try:
        with open(in_dir / HEADER_FILE, encoding="utf-8") as f:
            header = json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        return {"dataset": str(in_dir), "valid": False, "issues": [f"Cannot read header: {e}"]}

    missing = [k for k in HEADER_KEYS if k not in header]
    if missing:
        return {"dataset": str(in_dir), "valid": False, "issues": [f"Missing header keys: {missing}"]}

    n, length, alphabet = int(header["n"]), int(header["len"]), int(header["alphabet"])
    data_path, labels_path = in_dir / DATA_FILE, in_dir / LABELS_FILE
    if not data_path.exists() or not labels_path.exists():
        issues.append(f"Missing {DATA_FILE} or {LABELS_FILE}")
        return {"dataset": str(in_dir), "n": n, "valid": False, "issues": issues}

    if data_path.stat().st_size != n * length * 4:
        issues.append(f"{DATA_FILE} is {data_path.stat().st_size} bytes, expected {n * length * 4}")
    if labels_path.stat().st_size != n:
        issues.append(f"{LABELS_FILE} is {labels_path.stat().st_size} bytes, expected {n}")

    counts = {}
    if not issues:
        X = np.fromfile(data_path, dtype="<f4")
        y = np.fromfile(labels_path, dtype=np.uint8)
        if not np.all(np.isfinite(X)):
            issues.append("data contains non-finite values")
        elif X.size and (X.min() < 0 or X.max() > 1):
            issues.append(f"data outside [0, 1]: [{X.min()}, {X.max()}]")
        if y.size and int(y.max()) >= alphabet:
            issues.append(f"labels exceed alphabet size {alphabet}")

        split = header["split"]
        if not isinstance(split, dict) or set(split) != set(SPLIT_NAMES):
            issues.append(f"split must have keys {list(SPLIT_NAMES)}")
        else:
            joined = sorted(i for name in SPLIT_NAMES for i in split[name])
            if joined != list(range(n)):
                issues.append("split index sets do not partition [0, n)")
            counts = {name: len(split[name]) for name in SPLIT_NAMES}

    return {
        "dataset": str(in_dir),
        "n": n,
        "len": length,
        "alphabet": alphabet,
        "split_counts": counts,
        "valid": not issues,
        "issues": issues,
    }


def run_validation(path: Path) -> tuple[bool, dict[str, Any]]:
    """
    Validate a corpus file or a dataset directory.

    Returns:
        Tuple of (success, stats_dict)
    """
    path = Path(path)
    if path.is_dir():
        result = validate_dataset_dir(path)
        stats = {
            "kind": "dataset",
            "total_items": 1,
            "valid_items": int(result["valid"]),
            "validations": [result],
            "global_issues": [],
        }
        return result["valid"], stats

    validations, global_issues = validate_corpus_file(path)
    valid_count = sum(1 for v in validations if v["valid"])
    stats = {
        "kind": "corpus",
        "total_items": len(validations),
        "valid_items": valid_count,
        "total_symbols": sum(v.get("n_symbols", 0) for v in validations),
        "validations": validations,
        "global_issues": global_issues,
    }
    all_valid = valid_count == len(validations) and not global_issues
    return all_valid, stats
