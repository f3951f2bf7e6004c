"""APT actor attribution over heterogeneous attributed CTI graphs."""

__version__ = "0.1.0"

# on-disk format versions, reported by ``attribmmf --version``
FORMAT_VERSIONS = {"graph.json": 1, "features.bin": 1, "checkpoint": 1}
