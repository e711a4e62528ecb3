"""Communication accounting for every simulated upload and download."""
from __future__ import annotations

import csv
import io
import threading
from collections import defaultdict
from dataclasses import dataclass

SCALAR_BYTES = 8

GMM_INIT = "gmm_init"
GMM_ROUND = "gmm_round"
GMM_BROADCAST = "gmm_broadcast"
FREQUENCY = "frequency"
MOMENTS = "moments"
COVARIANCE_BROADCAST = "covariance_broadcast"
MODEL_ROUND = "model_round"
PHASES = (GMM_INIT, GMM_ROUND, GMM_BROADCAST, FREQUENCY, MOMENTS, COVARIANCE_BROADCAST, MODEL_ROUND)

UPLOAD = "upload"
DOWNLOAD = "download"


@dataclass(frozen=True)
class Entry:
    phase: str
    direction: str
    client_id: int
    scalar_count: int
    overhead_bytes: int = 0

    @property
    def payload_bytes(self) -> int:
        return self.scalar_count * SCALAR_BYTES


class CommLedger:
    """Append-only log of messages crossing the client/server boundary.

    Scalars are counted as 8-byte floats. Anything that is not a scalar
    (category tokens, framing) goes into ``overhead_bytes`` so the scalar
    counts can be compared 1:1 with closed-form cost formulas.
    """

    def __init__(self):
        self._entries: list[Entry] = []
        self._lock = threading.Lock()

    def record(self, phase: str, direction: str, client: int, scalar_count: int,
               overhead_bytes: int = 0) -> None:
        if phase not in PHASES:
            raise ValueError(f"unknown phase {phase!r}")
        if direction not in (UPLOAD, DOWNLOAD):
            raise ValueError(f"unknown direction {direction!r}")
        entry = Entry(phase, direction, int(client), int(scalar_count), int(overhead_bytes))
        with self._lock:
            self._entries.append(entry)

    @property
    def entries(self) -> list[Entry]:
        with self._lock:
            return list(self._entries)

    def __len__(self):
        return len(self._entries)

    def extend(self, entries) -> None:
        with self._lock:
            self._entries.extend(entries)

    def summarize(self) -> dict:
        return summarize(self)

    @classmethod
    def from_csv(cls, text: str) -> "CommLedger":
        ledger = cls()
        for row in csv.DictReader(io.StringIO(text)):
            ledger.record(row["phase"], row["direction"], int(row["client_id"]),
                          int(row["scalar_count"]), int(row["overhead_bytes"]))
        return ledger

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["phase", "direction", "client_id", "scalar_count", "payload_bytes",
                    "overhead_bytes"])
        for e in self.entries:
            w.writerow([e.phase, e.direction, e.client_id, e.scalar_count, e.payload_bytes,
                        e.overhead_bytes])
        return buf.getvalue()


def summarize(ledger: CommLedger) -> dict:
    """Totals per (phase, direction) plus grand totals per direction."""
    by_phase: dict = defaultdict(lambda: {UPLOAD: _zero(), DOWNLOAD: _zero()})
    grand = {UPLOAD: _zero(), DOWNLOAD: _zero()}
    for e in ledger.entries:
        for bucket in (by_phase[e.phase][e.direction], grand[e.direction]):
            bucket["scalars"] += e.scalar_count
            bucket["payload_bytes"] += e.payload_bytes
            bucket["overhead_bytes"] += e.overhead_bytes
    return {"phases": {p: by_phase[p] for p in PHASES if p in by_phase}, "total": grand}


def _zero() -> dict:
    return {"scalars": 0, "payload_bytes": 0, "overhead_bytes": 0}


def closed_form_costs(num_clients: int, n_continuous: int, n_discrete: int,
                      avg_categories: float, avg_modes: float, gmm_rounds: float) -> dict:
    """Per-phase scalar counts predicted by the closed-form cost model.

    ``avg_modes`` is the number of mixture components carried per continuous
    column during fitting and ``gmm_rounds`` the number of federated VB rounds.
    """
    K, nc, nd, p, t, m = num_clients, n_continuous, n_discrete, avg_categories, avg_modes, gmm_rounds
    l = 2 * nc + nd
    up = {
        GMM_ROUND: K * (3 * t + 2) * nc * m,
        FREQUENCY: K * nd * p,
        MOMENTS: K * l * (l + 1),
    }
    down = {
        GMM_ROUND: K * (6 * t + 1) * nc * m,
        FREQUENCY: K * nd * p,
        COVARIANCE_BROADCAST: K * l * l,
    }
    up_total = K * (4 * nc**2 + nd**2 + 4 * nc * nd + (3 * t * m + 2 * m + 2) * nc + (p + 1) * nd)
    down_total = K * (4 * nc**2 + nd**2 + 4 * nc * nd + nd * p + (6 * t + 1) * nc * m)
    return {"upload": up, "download": down,
            "upload_total": up_total, "download_total": down_total}
