from __future__ import annotations

import pathlib

import pytest

CORPUS = pathlib.Path(__file__).resolve().parent.parent / "corpus"

#: Programs the checker accepts.
WELL_TYPED = [
    "basic_region.rgn",
    "hierarchy.rgn",
    "bulk_free.rgn",
    "migration.rgn",
    "sharing.rgn",
    "migration_once.rgn",
    "sharing_once.rgn",
    "ancestor_lock.rgn",
    "alias_swap_locked.rgn",
    "alias_swap_reentrant.rgn",
    "many_threads.rgn",
    "deadlock_racy.rgn",
]

#: Well-typed programs that terminate (loop-free), safe to run/explore.
RUNNABLE = [
    "basic_region.rgn",
    "hierarchy.rgn",
    "bulk_free.rgn",
    "migration_once.rgn",
    "sharing_once.rgn",
    "ancestor_lock.rgn",
    "alias_swap_locked.rgn",
    "alias_swap_reentrant.rgn",
    "many_threads.rgn",
    "deadlock_racy.rgn",
]

#: Rejected by the checker; exercised through the run-unchecked hook.
ILL_TYPED = ["impure_escape.rgn", "deadlock_forced.rgn", "race_unlocked.rgn"]


@pytest.fixture(scope="session")
def corpus_dir() -> pathlib.Path:
    return CORPUS


def corpus_text(name: str) -> str:
    return (CORPUS / name).read_text()
