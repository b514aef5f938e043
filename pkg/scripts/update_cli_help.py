"""Regenerate the CLI help snapshot used by tests/test_cli.py."""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))

from test_cli import DATA, snapshot_help  # noqa: E402


def main() -> None:
    DATA.mkdir(parents=True, exist_ok=True)
    target = DATA / "cli_help.txt"
    target.write_text(snapshot_help(), encoding="utf-8")
    print(f"wrote {target}")


if __name__ == "__main__":
    main()
