from repositories.records import RecordStorage
from repositories.shards import ShardStorage
from repositories.manifests import ManifestStorage, load_line, load_sweep

__all__ = [
    'RecordStorage',
    'ShardStorage',
    'ManifestStorage',
    'load_line',
    'load_sweep',
]
