"""SQLite checkpoint store for spectralab runs.

One ``checkpoint.db`` per output directory holds:
- ``run_meta``: key/value facts about the run (config hash, code version)
- ``chunks``: the JSON records of every completed sample chunk, per stage

Only the coordinating process touches the database.
"""
from __future__ import annotations

import json
import logging
import os
import sqlite3
from typing import Any

logger = logging.getLogger(__name__)

CHECKPOINT_FILENAME = "checkpoint.db"


def _configure_sqlite_connection(con: sqlite3.Connection) -> None:
    """
    Apply connection-level SQLite pragmas.
    IMPORTANT: journal_mode is persistent per DB file; busy_timeout is per connection.
    """
    cur = con.cursor()
    cur.execute("PRAGMA busy_timeout=5000")  # ms
    cur.execute("PRAGMA foreign_keys=ON")
    cur.execute("PRAGMA journal_mode=WAL")
    cur.execute("PRAGMA synchronous=NORMAL")
    con.commit()


def init_checkpoint_db(con: sqlite3.Connection) -> None:
    cur = con.cursor()
    cur.execute(
        """
        CREATE TABLE IF NOT EXISTS run_meta (
            key   TEXT PRIMARY KEY,
            value TEXT NOT NULL
        )
        """
    )
    cur.execute(
        """
        CREATE TABLE IF NOT EXISTS chunks (
            stage        TEXT    NOT NULL,
            chunk_start  INTEGER NOT NULL,
            chunk_end    INTEGER NOT NULL,
            records_json TEXT    NOT NULL,
            PRIMARY KEY (stage, chunk_start)
        )
        """
    )
    con.commit()


class CheckpointStore:
    """Chunk-level persistence of per-sample records."""

    def __init__(self, path: str):
        self.path = os.path.abspath(path)
        os.makedirs(os.path.dirname(self.path), exist_ok=True)
        self._con = sqlite3.connect(self.path, timeout=10.0)
        self._con.row_factory = sqlite3.Row
        _configure_sqlite_connection(self._con)
        init_checkpoint_db(self._con)

    @classmethod
    def in_directory(cls, out_dir: str) -> "CheckpointStore":
        return cls(os.path.join(out_dir, CHECKPOINT_FILENAME))

    def close(self) -> None:
        try:
            self._con.close()
        except Exception:
            pass

    def __enter__(self) -> "CheckpointStore":
        return self

    def __exit__(self, *exc: Any) -> None:
        self.close()

    # ---- meta ---------------------------------------------------------------

    def get_meta(self, key: str) -> str | None:
        row = self._con.execute("SELECT value FROM run_meta WHERE key=?", (key,)).fetchone()
        return row["value"] if row else None

    def set_meta(self, key: str, value: str) -> None:
        self._con.execute(
            """
            INSERT INTO run_meta(key, value) VALUES(?, ?)
            ON CONFLICT(key) DO UPDATE SET value=excluded.value
            """,
            (key, str(value)),
        )
        self._con.commit()

    # ---- chunks -------------------------------------------------------------

    def save_chunk(self, stage: str, start: int, end: int, records: list[dict[str, Any]]) -> None:
        self._con.execute(
            """
            INSERT INTO chunks(stage, chunk_start, chunk_end, records_json) VALUES(?,?,?,?)
            ON CONFLICT(stage, chunk_start) DO UPDATE SET
                chunk_end=excluded.chunk_end,
                records_json=excluded.records_json
            """,
            (stage, int(start), int(end), json.dumps(records)),
        )
        self._con.commit()
        logger.debug("checkpoint stage=%s chunk=[%d, %d) saved", stage, start, end)

    def load_stage(self, stage: str) -> dict[int, tuple[int, list[dict[str, Any]]]]:
        """Completed chunks of a stage: start -> (end, records)."""
        rows = self._con.execute(
            "SELECT chunk_start, chunk_end, records_json FROM chunks WHERE stage=? ORDER BY chunk_start",
            (stage,),
        ).fetchall()
        return {int(r["chunk_start"]): (int(r["chunk_end"]), json.loads(r["records_json"])) for r in rows}

    def completed_offsets(self) -> dict[str, list[int]]:
        out: dict[str, list[int]] = {}
        for r in self._con.execute("SELECT stage, chunk_start FROM chunks ORDER BY stage, chunk_start"):
            out.setdefault(r["stage"], []).append(int(r["chunk_start"]))
        return out

    def clear(self) -> None:
        self._con.execute("DELETE FROM chunks")
        self._con.execute("DELETE FROM run_meta")
        self._con.commit()
