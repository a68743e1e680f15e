from pathlib import Path

import pytest

from tieredvm.cli import config_for, difftest, execute

CORPUS = Path(__file__).resolve().parent.parent / "corpus"
PROGRAMS = sorted(CORPUS.glob("*.lua"))


def rendered(src, cfg):
    o, e, vm, _ = execute(src, cfg)
    return o + (f"--- {e}\n" if e else ""), vm


@pytest.mark.parametrize("path", PROGRAMS, ids=lambda p: p.stem)
def test_interpreter_matches_expected(path):
    want = path.with_suffix(".expected").read_text(encoding="utf-8")
    got, _ = rendered(path.read_text(encoding="utf-8"), config_for("interpreter"))
    assert got == want


@pytest.mark.parametrize("path", PROGRAMS, ids=lambda p: p.stem)
def test_tiers_agree(path):
    assert difftest(path.read_text(encoding="utf-8"), (0, 1, 100)) == []


def test_corpus_is_not_empty():
    assert len(PROGRAMS) >= 20
