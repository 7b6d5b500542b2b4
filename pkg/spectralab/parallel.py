# spectralab/parallel.py
"""Chunked, checkpointed map of per-sample tasks over a process pool.

Tasks are pure functions of the sample index returning JSON-ready records.
Chunks are dispatched in order and reassembled in order, and every record is
passed through JSON before use, so serial, parallel and resumed runs see
exactly the same values.
"""
from __future__ import annotations

import json
import logging
import multiprocessing
import os
from typing import Any, Callable

from . import config
from .errors import RunInterrupted
from .storage import CheckpointStore

logger = logging.getLogger(__name__)

Task = Callable[[int], dict[str, Any]]

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


def pin_blas_threads() -> None:
    """One BLAS thread per process; parallelism comes from the sample pool."""
    for var in _THREAD_VARS:
        os.environ[var] = "1"


def resolve_workers(flag: int | None = None, configured: int | None = None) -> int:
    """--workers flag, then config, then SPECTRA_WORKERS, then hardware."""
    for candidate in (flag, configured, config.WORKERS):
        if candidate is not None:
            return max(1, int(candidate))
    return max(1, os.cpu_count() or 1)


def _run_chunk(job: tuple[Task, int, int]) -> list[dict[str, Any]]:
    task, start, end = job
    return [task(i) for i in range(start, end)]


def _roundtrip(records: list[dict[str, Any]]) -> list[dict[str, Any]]:
    return json.loads(json.dumps(records))


class SampleRunner:
    """Coordinator for per-sample work.

    :param workers: pool size; 1 runs chunks inline
    :param chunk_size: samples per checkpointed chunk
    :param store: optional checkpoint store; completed chunks are reused
    :param stop_after_chunks: raise :class:`RunInterrupted` after computing this many chunks
    """

    def __init__(self, workers: int = 1, chunk_size: int = config.CHECKPOINT_INTERVAL,
                 store: CheckpointStore | None = None, stop_after_chunks: int | None = None):
        if chunk_size < 1:
            raise ValueError(f"chunk_size must be >= 1 (got {chunk_size})")
        self.workers = max(1, int(workers))
        self.chunk_size = int(chunk_size)
        self.store = store
        self.stop_after_chunks = stop_after_chunks
        self.computed_chunks = 0
        self.reused_chunks = 0

    def map(self, stage: str, task: Task, n: int) -> list[dict[str, Any]]:
        """Records of ``task(0) .. task(n-1)`` in index order."""
        bounds = [(s, min(s + self.chunk_size, n)) for s in range(0, n, self.chunk_size)]
        done: dict[int, list[dict[str, Any]]] = {}
        if self.store is not None:
            for start, (end, records) in self.store.load_stage(stage).items():
                if (start, end) in bounds:
                    done[start] = records
        self.reused_chunks += len(done)
        pending = [(task, s, e) for s, e in bounds if s not in done]
        if done:
            logger.info("stage %s: reusing %d/%d checkpointed chunks", stage, len(done), len(bounds))

        chunks = self._dispatch(pending)
        try:
            for (start, end), records in zip(((s, e) for _, s, e in pending), chunks):
                records = _roundtrip(records)
                done[start] = records
                if self.store is not None:
                    self.store.save_chunk(stage, start, end, records)
                self.computed_chunks += 1
                level = logging.INFO if config.LOG_SAMPLES else logging.DEBUG
                logger.log(level, "stage %s: samples [%d, %d) done", stage, start, end)
                if self.stop_after_chunks is not None and self.computed_chunks >= self.stop_after_chunks:
                    raise RunInterrupted(
                        f"stopped after {self.computed_chunks} chunk(s) in stage {stage}; resume to finish"
                    )
        finally:
            chunks.close()

        return [rec for s, _ in bounds for rec in done[s]]

    def _dispatch(self, jobs: list[tuple[Task, int, int]]):
        if self.workers == 1 or len(jobs) <= 1:
            for job in jobs:
                yield _run_chunk(job)
            return
        pin_blas_threads()
        ctx = multiprocessing.get_context("spawn")
        with ctx.Pool(processes=min(self.workers, len(jobs)), initializer=pin_blas_threads) as pool:
            try:
                yield from pool.imap(_run_chunk, jobs)
            except Exception:
                logger.exception("worker chunk failed")
                raise


def inline_map(stage: str, task: Task, n: int) -> list[dict[str, Any]]:
    """Serial mapper with the same record semantics as :class:`SampleRunner`."""
    return _roundtrip([task(i) for i in range(n)])
