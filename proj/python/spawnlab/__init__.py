"""Speaker-generation workbench.

Python surface over the C++ core: synthetic corpus generation, joint and
variational training of a toy multi-speaker synthesizer with a
metadata-conditioned mixture-of-Gaussians speaker prior, sampling of new
speakers from that prior, and embedding-space evaluation.

The boundary is JSON-at-the-edges: configs, reports, and spawned embeddings
cross as strings with exactly the bytes the ``spawnlab`` CLI reads and
writes, so Python-driven and shell-driven runs stay bitwise comparable.
"""

try:  # installed layout: the extension lives inside the package
    from . import _spawnlab as _core  # type: ignore[attr-defined]
except ImportError:  # in-tree layout: the built extension sits on sys.path
    import _spawnlab as _core  # type: ignore[no-redef]

ConfigError = _core.ConfigError
ParseError = _core.ParseError
NumericalError = _core.NumericalError

canonical_config = _core.canonical_config
config_digest = _core.config_digest
gen_data = _core.gen_data
train = _core.train
spawn = _core.spawn
evaluate = _core.evaluate
probe = _core.probe
prior_log_prob = _core.prior_log_prob
cosine_distance = _core.cosine_distance
median_min_distance = _core.median_min_distance
median_same_distance = _core.median_same_distance

__all__ = [
    "ConfigError",
    "ParseError",
    "NumericalError",
    "canonical_config",
    "config_digest",
    "gen_data",
    "train",
    "spawn",
    "evaluate",
    "probe",
    "prior_log_prob",
    "cosine_distance",
    "median_min_distance",
    "median_same_distance",
]
