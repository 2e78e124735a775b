from .rng import make_rng, derive_seed
from .hashing import canonical_json, short_hash, file_sha256
from .logging import configure_logging
