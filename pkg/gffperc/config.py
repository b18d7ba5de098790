"""
Run configurations and manifests. A manifest hash covers only what determines
the outputs (never the worker count, the output location or the timing), so
two runs with equal hashes write byte-identical reports.
"""
import hashlib
import os
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator

from utils import (DEFAULT_ALPHA, DEFAULT_BETA, DEFAULT_C_KAPPA, DEFAULT_K, DEFAULT_REPLICAS, LADDER, canonical_json,
                   manifest_hash, read_config)

__version__ = '0.1.0'

PACKAGE_DIR = os.path.dirname(os.path.abspath(__file__))


class RunConfig(BaseModel):
    """Everything a subcommand needs to replay a run."""
    model_config = ConfigDict(frozen=True, extra='forbid')

    command: str
    subcommand: Optional[str] = None
    seed: int = 0
    d: int = Field(3, ge=3)
    alpha: float = Field(DEFAULT_ALPHA, gt=0, le=1)
    beta: float = Field(DEFAULT_BETA, gt=0, le=2)
    params: Dict[str, Any] = {}

    def config_hash(self):
        return manifest_hash(self.model_dump())


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra='forbid')

    h: float
    d: int = Field(3, ge=3)
    seed: int = 0
    ladder: List[int] = list(LADDER)
    graphs: int = Field(2, ge=1)
    replicas: int = Field(20, ge=2)
    alpha: float = Field(DEFAULT_ALPHA, gt=0, le=1)
    beta: float = Field(DEFAULT_BETA, gt=0, le=2)
    K: float = Field(DEFAULT_K, gt=0)
    c_kappa: float = Field(DEFAULT_C_KAPPA, gt=0)
    h_star: Optional[float] = None
    gamma: Optional[float] = Field(None, gt=0)
    delta: float = Field(0.1, gt=0)
    depth: int = Field(20, ge=5)
    tree_replicas: int = Field(DEFAULT_REPLICAS * 10, ge=1)
    graph_attempts: int = Field(5, ge=1)

    @field_validator('ladder')
    @classmethod
    def _ladder_increasing(cls, ladder):
        if not ladder or sorted(set(ladder)) != list(ladder):
            raise ValueError("the ladder must be a non-empty increasing list of graph sizes")
        return ladder


def load_experiment_config(config_path, **overrides):
    """Read a .json/.yaml experiment config; keyword overrides that are not None win."""
    data = read_config(config_path)
    data.update({key: value for key, value in overrides.items() if value is not None})
    return ExperimentConfig.model_validate(data)


def artifact_version():
    """Package version plus a digest of the package sources, like a short commit id."""
    digest = hashlib.sha256()
    for name in sorted(os.listdir(PACKAGE_DIR)):
        if name.endswith('.py'):
            with open(os.path.join(PACKAGE_DIR, name), 'rb') as load_file:
                digest.update(load_file.read())
    return f'{__version__}+{digest.hexdigest()[:10]}'


def graph_provenance(graph, source):
    """Where a graph came from, with a digest of its adjacency lists."""
    return {'source': source, 'd': graph.d, 'n': graph.n_vertices,
            'sha256': hashlib.sha256(canonical_json(graph.adjacency).encode('utf-8')).hexdigest()[:16]}


class RunManifest(BaseModel):
    model_config = ConfigDict(frozen=True)

    config_hash: str
    config: Dict[str, Any]
    seeds: Dict[str, Any]
    graph: Optional[Dict[str, Any]] = None
    constants: Dict[str, Any] = {}
    version: str


def build_manifest(config, seeds=None, graph=None, constants=None):
    return RunManifest(config_hash=config.config_hash(), config=config.model_dump(),
                       seeds=seeds or {'master': config.seed}, graph=graph, constants=constants or {},
                       version=artifact_version())
