"""Load experiment outputs (CSV + JSON sidecar) into the results database.

Usage:
    cellfree-load-results <out_dir> [<out_dir> ...]

The database is chosen by DATABASE_URL / PG* environment variables and falls
back to a local SQLite file. Runs are keyed by (experiment, digest), so loading
the same directory twice stores each run once.
"""

from __future__ import annotations

import json
import sys
from collections.abc import Iterable
from pathlib import Path

from sqlalchemy import select
from sqlalchemy.orm import Session

from resultsdb.db import get_session, init_db
from resultsdb.models import ExperimentRun
from resultsdb.parsers import parse_experiment_result


def find_sidecars(out_dir: str | Path) -> list[Path]:
    """Every JSON sidecar in ``out_dir`` that points at an existing CSV table."""
    sidecars = []
    for path in sorted(Path(out_dir).glob("*.json")):
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError):
            continue
        if isinstance(data, dict) and data.get("csv") and (path.parent / data["csv"]).exists():
            sidecars.append(path)
    return sidecars


def load_sidecar(session: Session, path: Path) -> tuple[ExperimentRun, bool]:
    """Add the run described by ``path``; returns ``(run, created)``."""
    sidecar = json.loads(path.read_text(encoding="utf-8"))
    existing = session.scalars(
        select(ExperimentRun).where(
            ExperimentRun.experiment == sidecar["experiment"],
            ExperimentRun.digest == sidecar["digest"],
        )
    ).first()
    if existing is not None:
        return existing, False

    csv_text = (path.parent / sidecar["csv"]).read_text(encoding="utf-8")
    run = parse_experiment_result(sidecar, csv_text)
    session.add(run)
    session.flush()
    return run, True


def load_directories(out_dirs: Iterable[str | Path], url: str | None = None) -> list[tuple[str, bool]]:
    """Load every sidecar of ``out_dirs`` in one transaction."""
    init_db(url)
    loaded: list[tuple[str, bool]] = []
    session = get_session(url)
    try:
        for out_dir in out_dirs:
            for path in find_sidecars(out_dir):
                run, created = load_sidecar(session, path)
                loaded.append((run.experiment, created))
                state = "Added" if created else "Already stored"
                print(f"  {state:<15} {run.experiment} ({len(run.points)} points)")
        session.commit()
    except Exception:
        session.rollback()
        raise
    finally:
        session.close()
    return loaded


def main(argv: list[str] | None = None) -> int:
    args = sys.argv[1:] if argv is None else argv
    if not args or any(a in ("-h", "--help") for a in args):
        print(__doc__.strip())
        return 0 if args else 2

    missing = [a for a in args if not Path(a).is_dir()]
    if missing:
        print(f"Error: not a directory: {', '.join(missing)}", file=sys.stderr)
        return 2

    print(f"\n{'=' * 50}")
    print(f"Loading results from: {', '.join(args)}")
    print(f"{'=' * 50}\n")
    loaded = load_directories(args)
    added = sum(1 for _, created in loaded if created)

    print(f"\n{'=' * 50}")
    print(f"Done. {added} new run(s), {len(loaded) - added} already stored.")
    print(f"{'=' * 50}\n")
    return 0


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        print("\nInterrupted.")
        sys.exit(0)
