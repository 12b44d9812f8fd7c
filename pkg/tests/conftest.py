from dataclasses import dataclass
from pathlib import Path

import pytest

from profgen.bench import BenchScenario, generate
from profgen.index import TargetDB, index_db, save_index
from profgen.seqio import write_fasta


@dataclass
class World:
    scenario: BenchScenario
    queries: list
    records: list
    db: TargetDB
    index_dir: Path
    query_path: Path
    db_path: Path


@pytest.fixture(scope="session")
def small_world(tmp_path_factory) -> World:
    """3000-sequence synthetic DB with 25 queries and 4 planted homologs each."""
    scenario = BenchScenario(db_size=3000, batch_sizes=(1, 25), seed=3, repeats=1)
    queries, records = generate(scenario)
    root = tmp_path_factory.mktemp("world")
    db = TargetDB.from_records(records)
    save_index(db, index_db(db, 5), root / "index")
    (root / "queries.fasta").write_bytes(write_fasta(queries))
    (root / "db.fasta").write_bytes(write_fasta(records))
    return World(scenario, queries, records, db, root / "index", root / "queries.fasta", root / "db.fasta")


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance: end-to-end acceptance criteria")


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance

    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(test_acceptance.RESULTS):
            terminalreporter.write_line(line)
