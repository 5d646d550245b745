"""
Processor Module (The Orchestrator)

Generates corpus transmissions across parallel worker processes.

Every transmission owns a random stream derived from (master_seed, index),
so the parallel and sequential paths produce identical corpora and results
are re-ordered by index after collection.
"""

import logging
import os
import time
from concurrent.futures import ProcessPoolExecutor, as_completed
from typing import Any

from molcom_demod.channel_models import ChannelParams
from molcom_demod.testbed_sim import ModulationConfig, NoiseConfig, generate_transmission

logger = logging.getLogger(__name__)


def _generate_one(
    index: int,
    msg_len: int,
    mod: ModulationConfig,
    ch: ChannelParams,
    noise: NoiseConfig,
    master_seed: int,
    verbose: bool = False,
    configure_logging: bool = True,
) -> dict[str, Any]:
    """
    Worker function generating a single transmission.

    Args:
        index: Transmission index within the corpus
        msg_len: Symbols per transmission
        mod: Modulation parameters
        ch: Channel parameters
        noise: Disturbances
        master_seed: Corpus seed
        verbose: If True, enable INFO logging; if False, WARNING only
        configure_logging: Reset logging for a fresh worker process

    Returns:
        Dict containing:
        - 'success': bool indicating if generation succeeded
        - 'index': transmission index
        - 'transmission': the Transmission (if success)
        - 'error': error message (if failed)
        - 'proc_time': seconds spent
    """
    start = time.time()

    # Worker processes do not inherit the CLI logging setup
    if configure_logging:
        level = logging.INFO if verbose else logging.WARNING
        logging.basicConfig(level=level, force=True)
        logging.getLogger("molcom_demod").setLevel(level)

    try:
        tx = generate_transmission(index, msg_len, mod, ch, noise, master_seed)
        proc_time = time.time() - start
        logger.debug(f"Generated transmission {index} in {proc_time:.3f} s pid={os.getpid()}")
        return {
            "success": True,
            "index": index,
            "transmission": tx,
            "error": None,
            "proc_time": proc_time,
        }
    except Exception as e:
        return {
            "success": False,
            "index": index,
            "transmission": None,
            "error": str(e),
            "proc_time": time.time() - start,
        }


class BatchProcessor:
    """
    Orchestrates parallel corpus generation.

    Uses ProcessPoolExecutor because trace synthesis is numpy-bound per
    transmission and independent across transmissions.
    """

    def __init__(
        self,
        msg_len: int,
        mod: ModulationConfig,
        ch: ChannelParams,
        noise: NoiseConfig,
        master_seed: int,
        max_workers: int | None = None,
        verbose: bool = False,
    ):
        """
        Initialize the batch processor.

        Args:
            msg_len: Symbols per transmission
            mod: Modulation parameters
            ch: Channel parameters
            noise: Disturbances
            master_seed: Corpus seed
            max_workers: Maximum parallel workers (defaults to 80% of CPU count)
            verbose: If True, enable INFO logging in workers; if False, WARNING only
        """
        self.msg_len = msg_len
        self.mod = mod
        self.ch = ch
        self.noise = noise
        self.master_seed = master_seed
        # Default to 80% of CPUs to leave headroom for other processes
        self.max_workers = max_workers or max(1, int((os.cpu_count() or 4) * 0.8))
        self.verbose = verbose

    def _job_args(self, index: int) -> tuple:
        return (index, self.msg_len, self.mod, self.ch, self.noise, self.master_seed, self.verbose)

    def execute_parallel(self, indices: list[int]) -> list[dict[str, Any]]:
        """
        Generate transmissions in parallel.

        Args:
            indices: Transmission indices to generate

        Returns:
            List of result dicts from _generate_one, in input order
        """
        if not indices:
            return []

        results: list[dict[str, Any] | None] = [None] * len(indices)
        logger.debug(f"Parallel generation: max_workers={self.max_workers}, jobs={len(indices)}")

        with ProcessPoolExecutor(max_workers=self.max_workers) as executor:
            future_to_pos = {
                executor.submit(_generate_one, *self._job_args(index)): pos
                for pos, index in enumerate(indices)
            }

            for future in as_completed(future_to_pos):
                pos = future_to_pos[future]
                try:
                    result = future.result()
                except Exception as e:
                    logger.error(f"[EXCEPTION] Transmission {indices[pos]}: {e}")
                    result = {
                        "success": False,
                        "index": indices[pos],
                        "transmission": None,
                        "error": str(e),
                    }
                if not result["success"]:
                    logger.error(f"[FAILED] Transmission {indices[pos]}: {result['error']}")
                results[pos] = result

        success_count = sum(1 for r in results if r and r["success"])
        logger.debug(f"Generation complete: {success_count}/{len(indices)} succeeded")
        return [r for r in results if r is not None]

    def execute_sequential(self, indices: list[int]) -> list[dict[str, Any]]:
        """
        Generate transmissions one after another (debugging, deterministic runs).

        Args:
            indices: Transmission indices to generate

        Returns:
            List of result dicts from _generate_one
        """
        results = []
        for index in indices:
            result = _generate_one(*self._job_args(index), configure_logging=False)
            if not result["success"]:
                logger.error(f"Failed: {result['error']}")
            results.append(result)
        return results
