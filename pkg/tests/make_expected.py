"""Regenerate corpus/*.expected from the reference evaluator (not a test module)."""
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))
import treewalk  # noqa: E402

CORPUS = Path(__file__).resolve().parent.parent / "corpus"


def expected_text(out, err):
    return out + (f"--- {err}\n" if err else "")


if __name__ == "__main__":
    for f in sorted(CORPUS.glob("*.lua")):
        out, err = treewalk.run(f.read_text(encoding="utf-8"))
        f.with_suffix(".expected").write_text(expected_text(out, err), encoding="utf-8")
        print(f.name)
