import hashlib
import logging
import os
import sqlite3
from typing import Any, Dict, Optional

import orjson

from core.errors import IoError

logger = logging.getLogger(__name__)


class SpectrumStore:
    """Cache of solved spectra keyed by graph, solver settings and boundary."""

    def __init__(self, db_path: str = "data/spectra.db"):
        self.db_path = db_path
        # Создаем директорию если не существует
        directory = os.path.dirname(db_path)
        try:
            if directory:
                os.makedirs(directory, exist_ok=True)
            self._init_db()
        except (OSError, sqlite3.Error) as e:
            raise IoError(f"cannot open spectrum store {db_path}: {e}") from e

    def _connect(self) -> sqlite3.Connection:
        return sqlite3.connect(self.db_path)

    def _init_db(self):
        """Инициализация базы данных"""
        with self._connect() as conn:
            conn.execute("""
                CREATE TABLE IF NOT EXISTS spectra (
                    signature TEXT PRIMARY KEY,
                    n_vertices INTEGER NOT NULL,
                    k_min REAL NOT NULL,
                    k_max REAL NOT NULL,
                    payload BLOB NOT NULL,
                    first_seen DATETIME DEFAULT CURRENT_TIMESTAMP,
                    last_seen DATETIME DEFAULT CURRENT_TIMESTAMP,
                    times_used INTEGER DEFAULT 0
                )
            """)
            conn.execute("CREATE INDEX IF NOT EXISTS idx_n_vertices ON spectra(n_vertices)")

    @staticmethod
    def signature(graph: Dict[str, Any], solver: Dict[str, Any], boundary: str) -> str:
        """md5 over the canonical JSON of everything that determines the spectrum.

        Threads only change scheduling, not results, so they are left out.
        """
        solver = {k: v for k, v in solver.items() if k != "threads"}
        blob = orjson.dumps({"graph": graph, "solver": solver, "boundary": boundary},
                            option=orjson.OPT_SORT_KEYS | orjson.OPT_SERIALIZE_NUMPY)
        return hashlib.md5(blob).hexdigest()

    def get(self, signature: str) -> Optional[Dict[str, Any]]:
        try:
            with self._connect() as conn:
                row = conn.execute("SELECT payload FROM spectra WHERE signature = ?", (signature,)).fetchone()
                if row is None:
                    return None
                conn.execute("""
                    UPDATE spectra
                    SET last_seen = CURRENT_TIMESTAMP,
                        times_used = times_used + 1
                    WHERE signature = ?
                """, (signature,))
        except sqlite3.Error as e:
            raise IoError(f"spectrum store read failed: {e}") from e
        logger.info("📦 cached spectrum %s", signature[:12])
        return orjson.loads(row[0])

    def put(self, signature: str, payload: Dict[str, Any], n_vertices: int, k_min: float, k_max: float) -> None:
        blob = orjson.dumps(payload, option=orjson.OPT_SERIALIZE_NUMPY)
        try:
            with self._connect() as conn:
                conn.execute("""
                    INSERT INTO spectra (signature, n_vertices, k_min, k_max, payload)
                    VALUES (?, ?, ?, ?, ?)
                    ON CONFLICT(signature) DO UPDATE SET
                        payload = excluded.payload,
                        last_seen = CURRENT_TIMESTAMP
                """, (signature, int(n_vertices), float(k_min), float(k_max), blob))
        except sqlite3.Error as e:
            raise IoError(f"spectrum store write failed: {e}") from e

    def get_stats(self) -> Dict[str, Any]:
        """Получает статистику базы данных"""
        try:
            with self._connect() as conn:
                total = conn.execute("SELECT COUNT(*) FROM spectra").fetchone()[0]
                hits = conn.execute("SELECT COALESCE(SUM(times_used), 0) FROM spectra").fetchone()[0]
                largest = conn.execute("SELECT COALESCE(MAX(n_vertices), 0) FROM spectra").fetchone()[0]
        except sqlite3.Error as e:
            raise IoError(f"spectrum store stats failed: {e}") from e
        return {"total_spectra": total, "cache_hits": hits, "largest_graph": largest}

    def clear(self) -> None:
        try:
            with self._connect() as conn:
                conn.execute("DELETE FROM spectra")
        except sqlite3.Error as e:
            raise IoError(f"spectrum store clear failed: {e}") from e
