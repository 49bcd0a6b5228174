"""
Тесты SQLite-кэша спектров
"""

import logging
import sys
from pathlib import Path

import pytest

sys.path.append(str(Path(__file__).parent))

from core.errors import IoError
from core.graph import graph_to_dict
from core.models import SolverConfig
from core.spectrum_store import SpectrumStore
from spectral.builders import build_interval

logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s: %(message)s")
logger = logging.getLogger(__name__)


def test_signature_is_canonical():
    graph = graph_to_dict(build_interval(4))
    solver = SolverConfig().to_dict()
    a = SpectrumStore.signature(graph, solver, "clamped")
    assert a == SpectrumStore.signature(dict(reversed(list(graph.items()))), solver, "clamped")
    # thread count does not change the spectrum
    assert a == SpectrumStore.signature(graph, {**solver, "threads": 8}, "clamped")
    assert a != SpectrumStore.signature(graph, solver, "free")
    assert a != SpectrumStore.signature(graph, {**solver, "k_max": 11.0}, "clamped")


def test_put_get_and_stats(tmp_path):
    store = SpectrumStore(str(tmp_path / "nested" / "spectra.db"))
    assert store.get("missing") is None
    payload = {"modes": [{"k": 3.141592653589793, "multiplicity": 1}], "boundary": "clamped"}
    store.put("abc", payload, 5, 1.0, 7.0)
    assert store.get("abc") == payload
    assert store.get("abc") == payload

    store.put("abc", {**payload, "boundary": "free"}, 5, 1.0, 7.0)
    assert store.get("abc")["boundary"] == "free"
    store.put("def", payload, 60, 0.1, 7.5)

    stats = store.get_stats()
    assert stats == {"total_spectra": 2, "cache_hits": 3, "largest_graph": 60}
    store.clear()
    assert store.get_stats()["total_spectra"] == 0


def test_unwritable_location(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("not a directory")
    with pytest.raises(IoError):
        SpectrumStore(str(blocker / "spectra.db"))


def test_broken_database_file(tmp_path):
    path = tmp_path / "spectra.db"
    store = SpectrumStore(str(path))
    path.write_bytes(b"not a sqlite database" * 64)
    with pytest.raises(IoError):
        store.get_stats()
    with pytest.raises(IoError):
        store.clear()


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
