import contextlib
import os
import random

import numpy as np
import torch


def seed_everything(seed):
    random.seed(seed)
    np.random.seed(seed % (2 ** 32))
    torch.manual_seed(seed)


@contextlib.contextmanager
def deterministic_mode(enabled=True):
    """Single-threaded, deterministic torch kernels for bit-reproducible runs."""
    if not enabled:
        yield
        return
    threads = torch.get_num_threads()
    previous = torch.are_deterministic_algorithms_enabled()
    torch.set_num_threads(1)
    torch.use_deterministic_algorithms(True)
    try:
        yield
    finally:
        torch.use_deterministic_algorithms(previous)
        torch.set_num_threads(threads)


def worker_count():
    try:
        return max(1, int(os.environ.get("FAMEC_THREADS", "1")))
    except ValueError:
        return 1
