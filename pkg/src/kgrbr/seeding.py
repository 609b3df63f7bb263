"""Deterministic seed derivation.

Every stochastic component draws its seed from the single run seed keyed
by a component name, so runs reproduce bit for bit regardless of which
components execute or in what order. SHA-256 keeps the derivation stable
across platforms and Python versions.
"""

import hashlib


def derive_seed(master: int, component: str) -> int:
    digest = hashlib.sha256(f"{master}:{component}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")
