import json
from pathlib import Path

import numpy as np
import pytest

from projsdpa.cli import main

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

_SUBJECTS = [("i", "yo"), ("you", "tú"), ("he", "él"), ("she", "ella"), ("we", "nosotros"), ("they", "ellos")]
_VERBS = [("see", "veo"), ("want", "quiero"), ("have", "tengo"), ("like", "aprecio"), ("need", "necesito")]
_OBJECTS = [("the cat", "el gato"), ("a dog", "un perro"), ("the house", "la casa"), ("water", "agua"),
            ("the book", "el libro"), ("a car", "un coche"), ("bread", "pan"), ("the sea", "el mar")]
_TAILS = [("", ""), (" today", " hoy"), (" now", " ahora"), (" again", " otra vez"), (" here", " aquí")]


def toy_pairs(n: int, seed: int = 0) -> list[tuple[str, str]]:
    """Templated English/Spanish sentence pairs (grammar is not the point)."""
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        s, v, o, t = (pool[rng.integers(len(pool))] for pool in (_SUBJECTS, _VERBS, _OBJECTS, _TAILS))
        out.append((f"{s[0].capitalize()} {v[0]} {o[0]}{t[0]}.", f"{s[1].capitalize()} {v[1]} {o[1]}{t[1]}."))
    return out


def write_corpus(path: Path, n: int, seed: int = 0) -> Path:
    path.write_text("".join(f"{a}\t{b}\tCC-BY 2.0 #{i}\n" for i, (a, b) in enumerate(toy_pairs(n, seed))), encoding="utf-8")
    return path


def write_config(path: Path, **fields) -> Path:
    path.write_text(json.dumps(fields), encoding="utf-8")
    return path


def read_csv_body(text: str) -> list[str]:
    return [ln for ln in text.splitlines() if not ln.startswith("#")]


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory) -> Path:
    return write_corpus(tmp_path_factory.mktemp("corpus") / "toy.tsv", 1000)


@pytest.fixture(scope="session")
def copy_checkpoint(tmp_path_factory) -> Path:
    """Small standard-variant model trained on variable-length copy sequences."""
    root = tmp_path_factory.mktemp("copy_model")
    cfg = write_config(
        root / "config.json", task="copy", copy_vocab=20, copy_len=8, copy_min_len=1, copy_pairs=2500,
        d_model=64, num_heads=8, ff_dim=256, max_len=10, variant="standard", epochs=12, batch_size=32,
        lr=0.001, split=[0.8, 0.1, 0.1], seed=1, record_timing=False,
    )
    assert main(["train", "--config", str(cfg), "--out", str(root / "run")]) == 0
    return root / "run" / "checkpoint.npz"
