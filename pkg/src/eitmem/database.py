import sqlite3
import threading
import time


class RunCatalog:
    """Index of runs and scan points kept next to the run directories"""

    def __init__(self, db_path="catalog.db"):
        """Open (and create) the catalog

        Args:
            db_path: Path to the SQLite database file
        """
        self.db_path = db_path
        self.lock = threading.Lock()
        self._create_tables()

    def _get_connection_context(self):
        """Get a database connection as a context manager"""

        class ConnectionContext:
            def __init__(self, db_path):
                self.db_path = db_path
                self.conn = None

            def __enter__(self):
                self.conn = sqlite3.connect(self.db_path)
                return self.conn

            def __exit__(self, exc_type, exc_val, exc_tb):
                if self.conn:
                    if exc_type is None:
                        self.conn.commit()
                    self.conn.close()

        return ConnectionContext(self.db_path)

    def _create_tables(self):
        with self.lock, self._get_connection_context() as conn:
            cursor = conn.cursor()

            cursor.execute("""
            CREATE TABLE IF NOT EXISTS runs (
                run_id TEXT PRIMARY KEY,
                command TEXT NOT NULL,
                config_hash TEXT NOT NULL,
                efficiency REAL,
                created REAL NOT NULL
            )
            """)

            cursor.execute("""
            CREATE TABLE IF NOT EXISTS scan_points (
                id INTEGER PRIMARY KEY AUTOINCREMENT,
                run_id TEXT NOT NULL,
                control_power_mW REAL NOT NULL,
                alpha_L REAL NOT NULL,
                efficiency REAL,
                error TEXT NOT NULL DEFAULT ''
            )
            """)

            cursor.execute(
                "CREATE INDEX IF NOT EXISTS idx_scan_points_alpha_L ON scan_points(alpha_L)"
            )

    def record_run(self, run_id, command, config_hash, efficiency=None):
        """Insert or replace a run entry

        Args:
            run_id: Run identifier
            command: CLI command name
            config_hash: Configuration digest
            efficiency: Headline efficiency of the run, if any
        """
        with self.lock, self._get_connection_context() as conn:
            conn.execute(
                "INSERT OR REPLACE INTO runs (run_id, command, config_hash, efficiency, created) "
                "VALUES (?, ?, ?, ?, ?)",
                (run_id, command, config_hash, efficiency, time.time()),
            )

    def record_scan_points(self, run_id, rows):
        """Replace the scan points of a run"""
        with self.lock, self._get_connection_context() as conn:
            conn.execute("DELETE FROM scan_points WHERE run_id = ?", (run_id,))
            conn.executemany(
                "INSERT INTO scan_points (run_id, control_power_mW, alpha_L, efficiency, error) "
                "VALUES (?, ?, ?, ?, ?)",
                [
                    (
                        run_id,
                        row["control_power_mW"],
                        row["alpha_L"],
                        None if row["error"] else row["efficiency"],
                        row["error"],
                    )
                    for row in rows
                ],
            )

    def get_run(self, run_id):
        """Look a run up by id

        Returns:
            dict or None
        """
        with self.lock, self._get_connection_context() as conn:
            row = conn.execute(
                "SELECT run_id, command, config_hash, efficiency, created FROM runs "
                "WHERE run_id = ?",
                (run_id,),
            ).fetchone()
        if row is None:
            return None
        return {
            "run_id": row[0],
            "command": row[1],
            "config_hash": row[2],
            "efficiency": row[3],
            "created": row[4],
        }

    def best_efficiency_by_depth(self):
        """Highest successful scan efficiency per optical depth across all runs

        Returns:
            list: (alpha_L, efficiency, control_power_mW) tuples ordered by alpha_L
        """
        with self.lock, self._get_connection_context() as conn:
            rows = conn.execute("""
                SELECT alpha_L, MAX(efficiency), control_power_mW
                FROM scan_points
                WHERE error = '' AND efficiency IS NOT NULL
                GROUP BY alpha_L
                ORDER BY alpha_L
            """).fetchall()
        return [(row[0], row[1], row[2]) for row in rows]
