"""Save and restore trained networks (weights, every gamma, beta, alpha)."""

from __future__ import annotations

from . import container
from .network import Network, build_network, spec_from_dict, spec_to_dict

MAGIC = b"QBCK"
VERSION = 1


def checkpoint_save(network: Network, path, extra: dict | None = None):
    meta = {"spec": spec_to_dict(network.spec), "extra": extra or {}}
    container.write(path, MAGIC, VERSION, len(network.blocks), meta, network.state_arrays())


def checkpoint_load(path, with_extra: bool = False):
    meta, arrays, _ = container.read(path, MAGIC, {VERSION})
    network = build_network(spec_from_dict(meta["spec"]))
    network.load_state_arrays(arrays)
    if with_extra:
        return network, meta.get("extra", {})
    return network
