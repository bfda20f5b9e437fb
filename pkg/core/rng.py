import hashlib
from contextlib import contextmanager

import torch

# One run seed fans out into named streams so that, e.g., the degradation
# draws do not shift when the model size changes.


def derive_seed(seed: int, *names: str) -> int:
    key = ":".join([str(int(seed))] + [str(n) for n in names])
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF


def generator(seed: int, *names: str) -> torch.Generator:
    gen = torch.Generator(device="cpu")
    gen.manual_seed(derive_seed(seed, *names))
    return gen


@contextmanager
def seeded(seed: int, *names: str):
    """Run a block (e.g. module construction) under a derived global seed."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(derive_seed(seed, *names))
        yield
